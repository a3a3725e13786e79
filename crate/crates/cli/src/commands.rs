//! Subcommand implementations: thin wrappers over the library.

use std::path::{Path, PathBuf};

use clap::Args;
use ergoflow::cfm::{Checkpoint, TrainConfig, Trainer};
use ergoflow::eval::*;
use ergoflow::fleet::{pooled_rate_check, simulate_fleet, FleetParams};
use ergoflow::flow::{
    map_lipschitz_hat, probe_audit, pushforward_trajectory, velocity_lipschitz_hat, LookupTable, LvProbe, PushMap,
};
use ergoflow::latent::{generate_trajectory, uniform_annulus_sample};
use ergoflow::presets::{Preset, EXP3_SWEEP};
use ergoflow::rng::derive_seed;
use ergoflow::targets::{ingest_grid, read_grid, TargetSpec};
use ergoflow::trajectory::Trajectory;
use serde::Serialize;
use serde_json::json;

use crate::manifest::ManifestBuilder;
use crate::{CliError, ConfigSource, Overrides, TrainArgs};

fn read_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let f = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    Checkpoint::from_reader(std::io::BufReader::new(f))
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn read_target(path: &Path) -> Result<TargetSpec, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let t: TargetSpec = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    t.validate()?;
    Ok(t)
}

fn checkpoint_bytes(c: &Checkpoint) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    c.to_writer(&mut buf)?;
    Ok(buf)
}

fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> ergoflow::Result<()>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("serializable")
}

/// The direct map, or a lookup table of it when `lut > 0`.
fn deployed_map(ck: &Checkpoint, lut: usize) -> Result<Box<dyn PushMap>, CliError> {
    let map = ck.flow_map();
    if lut == 0 {
        return Ok(Box::new(map));
    }
    Ok(Box::new(LookupTable::build(&map, lut, UNIT_BOX)?))
}

pub fn train(a: &TrainArgs) -> Result<(), CliError> {
    let config = a.source.load()?;
    let mut mb = ManifestBuilder::new(&a.out_dir, "train", to_value(&config), config.seed)?;
    let trained = train_logged(config, a.log_every)?;
    mb.write("checkpoint.json", &checkpoint_bytes(&trained.checkpoint())?)?;
    mb.write_json("train_log.json", &trained.log)?;
    let tail = trained.checkpoint().log_tail;
    eprintln!(
        "final L_CFM {:.5}, total {:.5}, eps_v {}",
        tail.final_cfm_loss,
        tail.final_total_loss,
        tail.eps_v.map_or("n/a".into(), |e| format!("{e:.4}"))
    );
    mb.finish()?;
    Ok(())
}

fn train_logged(config: TrainConfig, every: usize) -> Result<ergoflow::cfm::Trained, CliError> {
    let mut t = Trainer::new(config)?;
    while !t.done() {
        let s = t.step()?;
        if every > 0 && (s.epoch + 1) % every == 0 {
            eprintln!("epoch {:>5}  L_CFM {:.5}  total {:.5}", s.epoch + 1, s.cfm_loss, s.total_loss);
        }
    }
    Ok(t.finish()?)
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub k_cycles: usize,
    /// Samples per leg.
    #[arg(long, default_value_t = 100)]
    pub n_points: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Leg duration.
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    /// Push through a lookup table of this resolution instead of the ODE.
    #[arg(long, default_value_t = 0)]
    pub lut: usize,
    #[arg(long, default_value = ".")]
    #[serde(skip)]
    pub out_dir: PathBuf,
}

pub fn synth(a: &SynthArgs) -> Result<(), CliError> {
    let ck = read_checkpoint(&a.checkpoint)?;
    let mut mb = ManifestBuilder::new(&a.out_dir, "synth", to_value(a), a.seed)?;
    let latent = generate_trajectory(a.seed, ck.config.delta, a.k_cycles, a.n_points, a.tau)?.to_trajectory();
    let mapped = pushforward_trajectory(deployed_map(&ck, a.lut)?.as_ref(), &latent)?;
    mb.write("latent.csv", &csv_bytes(|w| latent.write_csv(w))?)?;
    mb.write("trajectory.csv", &csv_bytes(|w| Trajectory::write_mapped_csv(&latent, &mapped, w))?)?;
    mb.finish()?;
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Target JSON; defaults to the checkpoint's training target.
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Trajectory CSV from `synth`; unmapped files are pushed through the map.
    #[arg(long)]
    pub traj: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_GRID)]
    pub grid: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// I.i.d. pushforward samples for the occupancy correlation.
    #[arg(long, default_value_t = 100_000)]
    pub n_iid: usize,
    /// Samples per side for the W2 estimate.
    #[arg(long, default_value_t = 1000)]
    pub w2_samples: usize,
    /// Samples for the Lipschitz and Hessian estimates.
    #[arg(long, default_value_t = 2048)]
    pub probe_samples: usize,
    /// Lookup-table resolution for sample-heavy statistics (0 uses the ODE).
    #[arg(long, default_value_t = 128)]
    pub lut: usize,
    /// Requested accuracy for the sample-complexity field.
    #[arg(long, default_value_t = 0.05)]
    pub eps: f64,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    /// Topology constant for non-annular targets.
    #[arg(long, default_value_t = 1.0)]
    pub c_top: f64,
    #[arg(long, default_value_t = 10)]
    pub fourier_modes: usize,
    #[arg(long, default_value = ".")]
    #[serde(skip)]
    pub out_dir: PathBuf,
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let ck = read_checkpoint(&a.checkpoint)?;
    let target = match &a.target {
        Some(p) => read_target(p)?,
        None => ck.config.target.clone(),
    };
    let traj = match &a.traj {
        Some(p) => {
            let f = std::fs::File::open(p).map_err(|e| CliError::io(p, e))?;
            Some(Trajectory::read_csv(f).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?)
        }
        None => None,
    };
    let mut mb = ManifestBuilder::new(&a.out_dir, "eval", to_value(a), a.seed)?;
    let report = metrics_report(&ck, &target, traj, a)?;
    mb.write_json("metrics.json", &report)?;
    mb.finish()?;
    Ok(())
}

fn metrics_report(
    ck: &Checkpoint,
    target: &TargetSpec,
    traj: Option<(Trajectory, Option<Trajectory>)>,
    a: &EvalArgs,
) -> Result<MetricsReport, CliError> {
    let delta = ck.config.delta;
    let map = ck.flow_map();
    let fast = deployed_map(ck, a.lut)?;
    let target_grid = density_grid(target, a.grid, UNIT_BOX)?;
    let mut r = MetricsReport::default();

    let z = uniform_annulus_sample(derive_seed(a.seed, "eval-iid", 0), delta, a.n_iid)?;
    let iid = grid_histogram(&fast.push(&z)?, a.grid, UNIT_BOX)?;
    r.rho_iid = Some(pearson_corr(&iid, &target_grid)?);
    let mut occupancy = iid;

    if let Some((latent, mapped)) = traj {
        let mapped = match mapped {
            Some(m) => m,
            None => pushforward_trajectory(fast.as_ref(), &latent)?,
        };
        occupancy = grid_histogram_traj(&mapped, a.grid, UNIT_BOX)?;
        r.rho_traj = Some(pearson_corr(&occupancy, &target_grid)?);
        if !ck.config.nfz_discs.is_empty() {
            r.nfz = Some(nfz_metrics(&mapped, &ck.config.nfz_discs)?);
        }
        if let TargetSpec::BinaryHalfDisc(b) = target {
            let pts: Vec<_> = mapped.points().collect();
            let achieved = region_fractions(&pts, 2, |p| Some(usize::from(p[1] >= 0.0)))?;
            let low = b.lower_mass();
            let wanted = [low, 1.0 - low];
            r.l1_allocation = Some(l1_allocation(&achieved, &wanted)?);
            r.jain = Some(jains_index(&[achieved[0] / wanted[0], achieved[1] / wanted[1]])?);
        }
        r.acc_ratio = Some(acc_ratio(&mapped, &latent)?);
        r.energy_proxy = Some(ergoflow::energy::energy_proxy(&mapped)?);
    }
    r.fourier_metric = Some(fourier_ergodic_metric(&occupancy, &target_grid, a.fourier_modes)?);

    let seeds: Vec<u64> = (0..3).map(|i| derive_seed(a.seed, "eval-w2", i)).collect();
    r.w2_hat = Some(w2_hat(&map, target, delta, a.w2_samples, &seeds)?);
    r.l_hat = Some(map_lipschitz_hat(&map, delta, a.probe_samples, 1e-3, a.seed)?);
    let lv_hat = velocity_lipschitz_hat(&ck.params, target, delta, &LvProbe::default(), a.seed)?;
    r.lv_hat = Some(lv_hat);
    r.lv_net = Some(ck.params.lv_net());
    r.m_h_hat = Some(m_h_hat(&map, delta, a.probe_samples.min(512), 1e-3, a.seed)?);
    r.eps_v = ck.log_tail.eps_v;
    let eta = eta_top(target, delta, a.c_top);
    r.eta_top = Some(eta);
    if let Some(eps_v) = ck.log_tail.eps_v {
        let floor = end_to_end_floor(1.0, lv_hat, eps_v, eta)?;
        r.floor = Some(floor);
        // φ = x₁ on the unit box is bounded by 1.
        r.sample_complexity_k = Some(sample_complexity(a.eps, 1.0, a.alpha, floor)?);
    }
    Ok(r)
}

#[derive(Debug, Args, Serialize)]
pub struct ConvergenceArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Comma-separated cycle counts.
    #[arg(long, value_delimiter = ',', default_values_t = [5usize, 10, 20, 50, 100])]
    pub ks: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub seeds: usize,
    #[arg(long, default_value_t = 20_000)]
    pub n_reference: usize,
    #[arg(long, default_value_t = 100)]
    pub n_points: usize,
    #[arg(long, default_value_t = DEFAULT_GRID)]
    pub grid: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 128)]
    pub lut: usize,
    #[arg(long, default_value = ".")]
    #[serde(skip)]
    pub out_dir: PathBuf,
}

pub fn convergence(a: &ConvergenceArgs) -> Result<(), CliError> {
    let ck = read_checkpoint(&a.checkpoint)?;
    let mut mb = ManifestBuilder::new(&a.out_dir, "convergence", to_value(a), a.seed)?;
    let cfg = ConvergenceConfig {
        ks: a.ks.clone(),
        seeds_per_k: a.seeds,
        n_reference: a.n_reference,
        n_per_leg: a.n_points,
        grid_size: a.grid,
        bbox: UNIT_BOX,
        delta: ck.config.delta,
    };
    let study = convergence_study(deployed_map(&ck, a.lut)?.as_ref(), &cfg, a.seed)?;
    let mut csv = String::from("K,seed,rmse\n");
    for (k, row) in study.ks.iter().zip(&study.rmse) {
        for (j, v) in row.iter().enumerate() {
            csv.push_str(&format!("{k},{j},{v}\n"));
        }
    }
    mb.write("convergence.csv", csv.as_bytes())?;
    mb.write_json("convergence.json", &study)?;
    eprintln!("slope {:.3}", study.slope);
    mb.finish()?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Base config; defaults to the exp3 preset. The penalty weights are
    /// replaced at each sweep point.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
    #[arg(long, default_value_t = 200)]
    pub k_cycles: usize,
    #[arg(long, default_value_t = 100)]
    pub n_points: usize,
    #[arg(long, default_value_t = DEFAULT_GRID)]
    pub grid: usize,
    #[arg(long, default_value_t = 128)]
    pub lut: usize,
    #[arg(long, default_value_t = 0)]
    pub log_every: usize,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Serialize)]
struct SweepReport {
    lambda_nfz: f64,
    lambda_acc: f64,
    final_cfm_loss: f64,
    rho_traj: f64,
    nfz: Option<NfzMetrics>,
    acc_ratio: f64,
    wall_clock_s: f64,
}

pub fn sweep(a: &SweepArgs) -> Result<(), CliError> {
    let mut overrides = a.overrides.clone();
    overrides.lambda_nfz = None;
    overrides.lambda_acc = None;
    let base = ConfigSource { config: a.config.clone(), preset: Some(Preset::Exp3.name().into()), overrides }.load()?;
    let mut mb = ManifestBuilder::new(&a.out_dir, "sweep", to_value(&base), base.seed)?;
    let mut summary = Vec::new();
    for (lambda_nfz, lambda_acc) in EXP3_SWEEP {
        let label = format!("nfz{lambda_nfz}_acc{lambda_acc}");
        let mut config = base.clone();
        config.lambda_nfz = lambda_nfz;
        config.lambda_acc = lambda_acc;
        eprintln!("sweep point {label}");
        let trained = train_logged(config, a.log_every)?;
        let ck = trained.checkpoint();
        let map = deployed_map(&ck, a.lut)?;
        let latent = generate_trajectory(derive_seed(ck.config.seed, "sweep-eval", 0), ck.config.delta, a.k_cycles, a.n_points, 1.0)?
            .to_trajectory();
        let mapped = pushforward_trajectory(map.as_ref(), &latent)?;
        let target_grid = density_grid(&ck.config.target, a.grid, UNIT_BOX)?;
        let report = SweepReport {
            lambda_nfz,
            lambda_acc,
            final_cfm_loss: ck.log_tail.final_cfm_loss,
            rho_traj: pearson_corr(&grid_histogram_traj(&mapped, a.grid, UNIT_BOX)?, &target_grid)?,
            nfz: if ck.config.nfz_discs.is_empty() { None } else { Some(nfz_metrics(&mapped, &ck.config.nfz_discs)?) },
            acc_ratio: acc_ratio(&mapped, &latent)?,
            wall_clock_s: trained.log.wall_clock_s,
        };
        mb.write(&format!("{label}/checkpoint.json"), &checkpoint_bytes(&ck)?)?;
        mb.write_json(&format!("{label}/train_log.json"), &trained.log)?;
        mb.write_json(&format!("{label}/report.json"), &report)?;
        summary.push(report);
    }
    mb.write_json("sweep.json", &summary)?;
    mb.finish()?;
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    /// Raw grid: headerless CSV or JSON `{height, width, bbox, values}`.
    #[arg(long)]
    pub input: PathBuf,
    /// Blur width in cells.
    #[arg(long, default_value_t = 1.5)]
    pub sigma: f64,
    #[arg(long, default_value_t = 1e-12)]
    pub floor: f64,
    /// `xmin,xmax,ymin,ymax`; overrides the file's box.
    #[arg(long, value_delimiter = ',', num_args = 4)]
    pub bbox: Option<Vec<f64>>,
    #[arg(long, default_value = ".")]
    #[serde(skip)]
    pub out_dir: PathBuf,
}

pub fn ingest(a: &IngestArgs) -> Result<(), CliError> {
    let f = std::fs::File::open(&a.input).map_err(|e| CliError::io(&a.input, e))?;
    let (raw, file_box) = read_grid(f)?;
    let bbox = match &a.bbox {
        Some(b) => [b[0], b[1], b[2], b[3]],
        None => file_box.unwrap_or(UNIT_BOX),
    };
    let mut mb = ManifestBuilder::new(&a.out_dir, "ingest", to_value(a), 0)?;
    let density = ingest_grid(&raw, a.sigma, a.floor, bbox)?;
    mb.write_json("target.json", &TargetSpec::GriddedDensity(density))?;
    mb.finish()?;
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct FleetArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Agents in the simulated fleet.
    #[arg(long, default_value_t = 5)]
    pub agents: usize,
    /// Fleet sizes for the pooled-rate check.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 5, 10, 20])]
    pub ns: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    pub k_cycles: usize,
    #[arg(long, default_value_t = 100)]
    pub n_points: usize,
    #[arg(long, default_value_t = 5)]
    pub seeds: usize,
    #[arg(long, default_value_t = 200_000)]
    pub n_reference: usize,
    #[arg(long, default_value_t = DEFAULT_GRID)]
    pub grid: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 128)]
    pub lut: usize,
    #[arg(long, default_value = ".")]
    #[serde(skip)]
    pub out_dir: PathBuf,
}

pub fn fleet(a: &FleetArgs) -> Result<(), CliError> {
    let ck = read_checkpoint(&a.checkpoint)?;
    let mut mb = ManifestBuilder::new(&a.out_dir, "fleet", to_value(a), a.seed)?;
    let map = deployed_map(&ck, a.lut)?;
    let fp = FleetParams {
        k_cycles: a.k_cycles,
        n_per_leg: a.n_points,
        delta: ck.config.delta,
        grid_size: a.grid,
        bbox: UNIT_BOX,
    };
    let run = simulate_fleet(map.as_ref(), a.agents, &fp, a.seed)?;
    let rate = pooled_rate_check(map.as_ref(), &a.ns, &fp, a.seeds, a.n_reference, a.seed)?;
    let mut csv = String::from("N,metric,std,reference\n");
    for i in 0..rate.ns.len() {
        csv.push_str(&format!("{},{},{},{}\n", rate.ns[i], rate.metric[i], rate.std[i], rate.reference[i]));
    }
    mb.write("pooled_rate.csv", csv.as_bytes())?;
    let min_rho = if a.agents >= 2 { Some(run.min_pairwise_rho()?) } else { None };
    mb.write_json(
        "fleet.json",
        &json!({
            "n_agents": run.n_agents,
            "agent_ids": run.agent_ids,
            "min_pairwise_rho": min_rho,
            "pooled_rate": rate,
        }),
    )?;
    mb.finish()?;
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct DistillArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub resolution: usize,
    #[arg(long, default_value_t = 1000)]
    pub probes: usize,
    /// Maximum allowed probe error; the default is 1% of the unit box side.
    #[arg(long, default_value_t = 0.02)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    #[serde(skip)]
    pub out_dir: PathBuf,
}

pub fn distill(a: &DistillArgs) -> Result<(), CliError> {
    let ck = read_checkpoint(&a.checkpoint)?;
    let mut mb = ManifestBuilder::new(&a.out_dir, "distill", to_value(a), a.seed)?;
    let map = ck.flow_map();
    let table = LookupTable::build(&map, a.resolution, UNIT_BOX)?;
    let audit = probe_audit(&map, &table, ck.config.delta, a.probes, a.tolerance, a.seed)?;
    mb.write_json("lut.json", &table)?;
    mb.write_json("audit.json", &audit)?;
    mb.finish()?;
    if !audit.within_tolerance {
        return Err(CliError::Runtime(format!(
            "lookup table error {:.3e} exceeds tolerance {:.3e}",
            audit.max_error, audit.tolerance
        )));
    }
    Ok(())
}
