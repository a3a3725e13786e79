//! Shipped training configurations for the three reference experiments.

use crate::cfm::TrainConfig;
use crate::error::{domain, Result};

const EXP1: &str = include_str!("../presets/exp1.json");
const EXP2: &str = include_str!("../presets/exp2.json");
const EXP3: &str = include_str!("../presets/exp3.json");

/// `(λ_nfz, λ_acc)` points of the constraint sweep.
pub const EXP3_SWEEP: [(f64, f64); 3] = [(0.0, 0.0), (50.0, 0.0), (50.0, 0.1)];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Two-Gaussian mixture on the δ = 0.01 annulus.
    Exp1,
    /// Half-disc target with a 3:1 density split.
    Exp2,
    /// Exp1 target with a no-fly disc and smoothness penalty.
    Exp3,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Exp1, Preset::Exp2, Preset::Exp3];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Exp1 => "exp1",
            Preset::Exp2 => "exp2",
            Preset::Exp3 => "exp3",
        }
    }

    pub fn json(self) -> &'static str {
        match self {
            Preset::Exp1 => EXP1,
            Preset::Exp2 => EXP2,
            Preset::Exp3 => EXP3,
        }
    }

    pub fn config(self) -> TrainConfig {
        serde_json::from_str(self.json()).expect("shipped preset parses")
    }
}

impl std::str::FromStr for Preset {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| domain("preset", format!("unknown preset {s:?}")))
    }
}

/// The Exp3 config with the given penalty weights.
pub fn exp3_variant(lambda_nfz: f64, lambda_acc: f64) -> TrainConfig {
    let mut c = Preset::Exp3.config();
    c.lambda_nfz = lambda_nfz;
    c.lambda_acc = lambda_acc;
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::TargetSpec;

    #[test]
    fn presets_parse_and_validate() {
        for p in Preset::ALL {
            p.config().validate().unwrap();
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
        let e1 = Preset::Exp1.config();
        assert_eq!(
            serde_json::to_value(&e1.target).unwrap(),
            serde_json::to_value(TargetSpec::two_gaussians(0.01)).unwrap()
        );
        assert_eq!(e1.epochs, 1000);
        assert_eq!(Preset::Exp2.config().epochs, 1500);
        let e3 = exp3_variant(0.0, 0.0);
        assert_eq!((e3.epochs, e3.lambda_nfz, e3.nfz_discs.len()), (500, 0.0, 1));
    }
}
