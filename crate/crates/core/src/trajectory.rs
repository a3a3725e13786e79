//! Timestamped sample sequences shared by latent and mapped trajectories.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Point;

/// Which half of a cycle a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Leg {
    Outward = 0,
    Return = 1,
}

impl Leg {
    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(i: u8) -> Result<Self> {
        match i {
            0 => Ok(Leg::Outward),
            1 => Ok(Leg::Return),
            other => Err(Error::Parse(format!("leg must be 0 or 1, got {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub pos: Point,
    pub cycle: usize,
    pub leg: Leg,
}

/// Samples ordered by time, grouped into legs by `(cycle, leg)` tags.
///
/// `dt` is the spacing between consecutive samples of a leg. Legs follow
/// each other without a time gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub dt: f64,
    /// Identifier of the latent trajectory a mapped trajectory came from.
    pub provenance: Option<String>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        self.samples.iter().map(|s| s.pos)
    }

    /// Total represented time: every sample stands for `dt` seconds.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 * self.dt
    }

    /// Maximal runs of samples sharing the same `(cycle, leg)` tag.
    pub fn legs(&self) -> Vec<&[Sample]> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.samples.len() {
            let boundary = i == self.samples.len()
                || self.samples[i].cycle != self.samples[start].cycle
                || self.samples[i].leg != self.samples[start].leg;
            if boundary {
                if i > start {
                    out.push(&self.samples[start..i]);
                }
                start = i;
            }
        }
        out
    }

    /// Positions of each leg, in leg order.
    pub fn leg_points(&self) -> Vec<Vec<Point>> {
        self.legs()
            .into_iter()
            .map(|leg| leg.iter().map(|s| s.pos).collect())
            .collect()
    }

    /// Timestamps strictly increase.
    pub fn is_time_ordered(&self) -> bool {
        self.samples.windows(2).all(|w| w[1].t > w[0].t)
    }

    /// Same timestamps and tags with positions replaced.
    pub fn with_positions(&self, positions: &[Point]) -> Result<Trajectory> {
        if positions.len() != self.samples.len() {
            return Err(Error::Shape(format!(
                "{} positions for {} samples",
                positions.len(),
                self.samples.len()
            )));
        }
        let samples = self
            .samples
            .iter()
            .zip(positions)
            .map(|(s, &pos)| Sample { pos, ..*s })
            .collect();
        Ok(Trajectory {
            samples,
            dt: self.dt,
            provenance: self.provenance.clone(),
        })
    }

    /// Writes `t,x,y,cycle_index,leg` with a header row.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "x", "y", "cycle_index", "leg"])?;
        for s in &self.samples {
            wr.write_record(&[
                s.t.to_string(),
                s.pos[0].to_string(),
                s.pos[1].to_string(),
                s.cycle.to_string(),
                s.leg.index().to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Writes the latent columns plus the mapped coordinates `gx,gy`.
    pub fn write_mapped_csv<W: Write>(latent: &Trajectory, mapped: &Trajectory, w: W) -> Result<()> {
        if latent.len() != mapped.len() {
            return Err(Error::Shape("latent and mapped lengths differ".into()));
        }
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "x", "y", "cycle_index", "leg", "gx", "gy"])?;
        for (s, m) in latent.samples.iter().zip(&mapped.samples) {
            wr.write_record(&[
                s.t.to_string(),
                s.pos[0].to_string(),
                s.pos[1].to_string(),
                s.cycle.to_string(),
                s.leg.index().to_string(),
                m.pos[0].to_string(),
                m.pos[1].to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads either schema. When mapped columns are present the returned pair
    /// is `(latent, Some(mapped))`.
    pub fn read_csv<R: Read>(r: R) -> Result<(Trajectory, Option<Trajectory>)> {
        let mut rd = csv::Reader::from_reader(r);
        let headers = rd.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h.trim() == name);
        let (ct, cx, cy, cc, cl) = match (col("t"), col("x"), col("y"), col("cycle_index"), col("leg")) {
            (Some(a), Some(b), Some(c), Some(d), Some(e)) => (a, b, c, d, e),
            _ => {
                return Err(Error::Parse(
                    "trajectory CSV needs columns t,x,y,cycle_index,leg".into(),
                ))
            }
        };
        let mapped_cols = col("gx").zip(col("gy"));
        let num = |rec: &csv::StringRecord, i: usize| -> Result<f64> {
            rec.get(i)
                .unwrap_or("")
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("column {i}: {e}")))
        };
        let mut latent = Vec::new();
        let mut mapped = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let cycle = num(&rec, cc)? as usize;
            let leg = Leg::from_index(num(&rec, cl)? as u8)?;
            let t = num(&rec, ct)?;
            latent.push(Sample { t, pos: [num(&rec, cx)?, num(&rec, cy)?], cycle, leg });
            if let Some((gx, gy)) = mapped_cols {
                mapped.push(Sample { t, pos: [num(&rec, gx)?, num(&rec, gy)?], cycle, leg });
            }
        }
        if latent.is_empty() {
            return Err(Error::Empty("trajectory CSV has no rows"));
        }
        let dt = infer_dt(&latent);
        let latent = Trajectory { samples: latent, dt, provenance: None };
        let mapped = mapped_cols.map(|_| Trajectory { samples: mapped, dt, provenance: None });
        Ok((latent, mapped))
    }
}

fn infer_dt(samples: &[Sample]) -> f64 {
    samples
        .windows(2)
        .map(|w| w[1].t - w[0].t)
        .find(|d| *d > 0.0)
        .unwrap_or(1.0)
}
