//! Subcommand implementations. Every command is byte-reproducible under a
//! fixed master seed: derived rng streams are allocated from documented
//! bases, rows are written in deterministic order, and floats print in
//! shortest round-trip form.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use fewstep::denoise::{condition_features, Condition, Denoiser, GmmDenoiser, Parameterization, ResidualNet, StepTime};
use fewstep::geom::{gen_toy, Structure};
use fewstep::metrics::{lddt, metric_report, MetricParams};
use fewstep::sampler::{
    run_sampler, write_trajectory_jsonl, EtaSchedule, SamplerConfig, SamplerMode, SamplerRngs,
};
use fewstep::train::{prune_and_finetune, train, EvalResult};
use fewstep::vec3::Vec3;
use fewstep::{Error, RngStream};

use crate::config::{DenoiserConfig, ExperimentConfig};

/// Stream bases under the master seed used by the commands (training has
/// its own allocation inside the core crate).
mod streams {
    /// `sample` command: the generated target.
    pub const SAMPLE_TARGET: u64 = 50;
    /// `sample` command: sampler streams.
    pub const SAMPLE_BASE: u64 = 60;
    /// `sweep` command: the shared eval targets.
    pub const SWEEP_TARGETS: u64 = 70;
    /// `sweep` command: per-(seed, sample) sampler streams, shared across
    /// cells so comparisons are paired.
    pub const SWEEP_BASE: u64 = 100;
}

pub enum CliError {
    /// Bad configuration or unparseable input: exit code 2.
    Config(String),
    /// Failure at run time: exit code 3.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => m,
        }
    }
}

fn classify(err: Error) -> CliError {
    match err {
        Error::Validation(_) | Error::Parse { .. } => CliError::Config(err.to_string()),
        other => CliError::Runtime(other.to_string()),
    }
}

type CmdResult = Result<(), CliError>;

fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    ExperimentConfig::load(path).map_err(CliError::Config)
}

fn write_out(path: &Path, contents: &str) -> CmdResult {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", parent.display())))?;
    }
    fs::write(path, contents)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn echo_config(cfg: &ExperimentConfig, out: &Path) -> CmdResult {
    write_out(&out.join("config.echo.toml"), &cfg.echo_toml())
}

/// Either denoiser backend behind one dispatch point.
enum ActiveDenoiser {
    Gmm(GmmDenoiser<f64>),
    Net(ResidualNet<f64>),
}

impl Denoiser<f64> for ActiveDenoiser {
    fn parameterization(&self) -> Parameterization {
        match self {
            ActiveDenoiser::Gmm(d) => d.parameterization(),
            ActiveDenoiser::Net(d) => d.parameterization(),
        }
    }

    fn denoise(
        &self,
        coords: &[Vec3<f64>],
        time: StepTime<f64>,
        cond: &Condition<f64>,
    ) -> fewstep::Result<Vec<Vec3<f64>>> {
        match self {
            ActiveDenoiser::Gmm(d) => d.denoise(coords, time, cond),
            ActiveDenoiser::Net(d) => d.denoise(coords, time, cond),
        }
    }
}

fn make_denoiser(
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
) -> Result<ActiveDenoiser, CliError> {
    if let Some(path) = checkpoint {
        let net = ResidualNet::<f64>::load_checkpoint(path).map_err(classify)?;
        return Ok(ActiveDenoiser::Net(net));
    }
    match &cfg.denoiser {
        DenoiserConfig::GmmAnalytic { gmm } => Ok(ActiveDenoiser::Gmm(
            GmmDenoiser::new(gmm.clone()).map_err(classify)?,
        )),
        DenoiserConfig::ResidualNet { .. } => Err(CliError::Config(
            "the residual-net backend needs --checkpoint (train one with `fewstep train`)".into(),
        )),
    }
}

fn condition_for(
    denoiser: &ActiveDenoiser,
    cfg: &ExperimentConfig,
    target: &Structure<f64>,
) -> Condition<f64> {
    match denoiser {
        ActiveDenoiser::Gmm(_) => Condition::None,
        ActiveDenoiser::Net(_) => condition_features(target, cfg.eval.pathway),
    }
}

// ---------------------------------------------------------------- train

pub fn cmd_train(config: &Path, out: Option<&Path>) -> CmdResult {
    let cfg = load_config(config)?;
    let out = out.unwrap_or(&cfg.out_dir).to_path_buf();
    let out = out.as_path();
    let spec = match &cfg.denoiser {
        DenoiserConfig::ResidualNet { spec } => *spec,
        DenoiserConfig::GmmAnalytic { .. } => {
            return Err(CliError::Config(
                "training requires the residual-net backend".into(),
            ))
        }
    };
    let report = train(&spec, &cfg.data, &cfg.train).map_err(classify)?;

    echo_config(&cfg, out)?;
    report
        .net
        .save_checkpoint(&out.join("checkpoint.json"))
        .map_err(classify)?;
    for (iteration, net) in &report.snapshots {
        net.save_checkpoint(&out.join(format!("checkpoint_{iteration:06}.json")))
            .map_err(classify)?;
    }

    let mut curve = String::from("iteration,mse,bond,smooth_lddt,fm,total\n");
    for point in &report.curve {
        let l = &point.losses;
        let _ = writeln!(
            curve,
            "{},{},{},{},{},{}",
            point.iteration, l.mse, l.bond, l.smooth_lddt, l.fm, l.total
        );
    }
    write_out(&out.join("train_curve.csv"), &curve)?;

    if !report.eval_curve.is_empty() {
        let mut eval = String::from("iteration,mean_lddt\n");
        for (iteration, score) in &report.eval_curve {
            let _ = writeln!(eval, "{iteration},{score}");
        }
        write_out(&out.join("eval_curve.csv"), &eval)?;
    }
    Ok(())
}

// --------------------------------------------------------------- sample

pub fn cmd_sample(
    config: &Path,
    checkpoint: Option<&Path>,
    out: Option<&Path>,
    include_coords: bool,
) -> CmdResult {
    let cfg = load_config(config)?;
    let out = out.unwrap_or(&cfg.out_dir).to_path_buf();
    let out = out.as_path();
    let denoiser = make_denoiser(&cfg, checkpoint)?;
    let target = gen_toy(
        &cfg.data,
        &mut RngStream::new(cfg.master_seed, streams::SAMPLE_TARGET),
    )
    .map_err(classify)?;
    let cond = condition_for(&denoiser, &cfg, &target);
    let mut rngs = SamplerRngs::from_seed(cfg.master_seed, streams::SAMPLE_BASE);
    let traj = run_sampler(&denoiser, &target, &cond, &cfg.sampler, &mut rngs).map_err(classify)?;

    echo_config(&cfg, out)?;
    write_out(&out.join("target.struct"), &target.to_text())?;
    write_out(&out.join("final.struct"), &traj.final_structure.to_text())?;
    let mut jsonl = Vec::new();
    write_trajectory_jsonl(&traj, include_coords, &mut jsonl).map_err(classify)?;
    write_out(
        &out.join("trajectory.jsonl"),
        &String::from_utf8(jsonl).expect("jsonl is utf8"),
    )?;
    let report = metric_report(&traj.final_structure, &target, &cfg.metrics).map_err(classify)?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    write_out(&out.join("metrics.json"), &json)?;
    Ok(())
}

// ----------------------------------------------------------------- eval

pub fn cmd_eval(
    pred: &Path,
    target: &Path,
    radius: Option<f64>,
    out: Option<&Path>,
) -> CmdResult {
    let read = |path: &Path| -> Result<Structure<f64>, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Structure::from_text(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    };
    let pred = read(pred)?;
    let target = read(target)?;
    let mut params = MetricParams::<f64>::default();
    if let Some(r) = radius {
        params.inclusion_radius = r;
    }
    let report = metric_report(&pred, &target, &params).map_err(classify)?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    match out {
        Some(path) => write_out(path, &json)?,
        None => println!("{json}"),
    }
    Ok(())
}

// ---------------------------------------------------------------- sweep

struct SweepRow {
    mode: SamplerMode,
    eta: f64,
    steps: usize,
    scores: Vec<f64>,
}

pub fn cmd_sweep(config: &Path, checkpoint: Option<&Path>, out: Option<&Path>) -> CmdResult {
    let cfg = load_config(config)?;
    let out = out.unwrap_or(&cfg.out_dir).to_path_buf();
    let out = out.as_path();
    let denoiser = make_denoiser(&cfg, checkpoint)?;
    let sweep = &cfg.sweep;

    // eval targets shared by all cells
    let mut target_rng = RngStream::new(cfg.master_seed, streams::SWEEP_TARGETS);
    let targets: Vec<Structure<f64>> = (0..sweep.n_seeds)
        .map(|_| gen_toy(&cfg.data, &mut target_rng))
        .collect::<fewstep::Result<_>>()
        .map_err(classify)?;
    let conds: Vec<Condition<f64>> = targets
        .iter()
        .map(|t| match &denoiser {
            ActiveDenoiser::Gmm(_) => Condition::None,
            ActiveDenoiser::Net(_) => condition_features(t, sweep.pathway),
        })
        .collect();

    // cell order: mode-major, then eta, then steps
    let mut cells: Vec<(SamplerMode, f64, usize)> = Vec::new();
    for &mode in &sweep.modes {
        for &eta in &sweep.etas {
            for &steps in &sweep.steps {
                cells.push((mode, eta, steps));
            }
        }
    }

    let run_cell = |&(mode, eta, steps): &(SamplerMode, f64, usize)| -> fewstep::Result<SweepRow> {
        let cell_cfg = SamplerConfig {
            mode,
            n_steps: steps,
            eta: EtaSchedule::Constant(eta),
            ..cfg.sampler.clone()
        };
        let thresholds: Vec<f64> = fewstep::loss::LDDT_THRESHOLDS.to_vec();
        let mut scores = Vec::with_capacity(sweep.n_seeds * sweep.n_samples);
        for (i, target) in targets.iter().enumerate() {
            for j in 0..sweep.n_samples {
                let cell_index = (i * sweep.n_samples + j) as u64;
                let mut rngs =
                    SamplerRngs::for_grid_cell(cfg.master_seed, streams::SWEEP_BASE, cell_index);
                let traj = run_sampler(&denoiser, target, &conds[i], &cell_cfg, &mut rngs)?;
                scores.push(lddt(
                    &traj.final_structure,
                    target,
                    cfg.metrics.inclusion_radius,
                    &thresholds,
                )?);
            }
        }
        Ok(SweepRow {
            mode,
            eta,
            steps,
            scores,
        })
    };

    // cells run in parallel up to the worker count; results land in cell
    // order regardless of completion order
    let workers = sweep.workers.min(cells.len());
    let mut rows: Vec<Option<fewstep::Result<SweepRow>>> = Vec::new();
    rows.resize_with(cells.len(), || None);
    if workers <= 1 {
        for (slot, cell) in rows.iter_mut().zip(&cells) {
            *slot = Some(run_cell(cell));
        }
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slots: Vec<std::sync::Mutex<Option<fewstep::Result<SweepRow>>>> =
            cells.iter().map(|_| std::sync::Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let idx = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    if idx >= cells.len() {
                        break;
                    }
                    let row = run_cell(&cells[idx]);
                    *slots[idx].lock().expect("no poisoned cell") = Some(row);
                });
            }
        });
        for (slot, cell) in rows.iter_mut().zip(slots) {
            *slot = cell.into_inner().expect("no poisoned cell");
        }
    }

    let mut csv = String::from(
        "mode,eta,steps,n_seeds,n_samples,mean_lddt,var_lddt,best_lddt,worst_lddt,spread\n",
    );
    let mut samples_csv = String::from("mode,eta,steps,seed,sample,complex_lddt\n");
    for row in rows {
        let row = row.expect("all cells ran").map_err(classify)?;
        let n = row.scores.len() as f64;
        let mean = row.scores.iter().sum::<f64>() / n;
        let var = row.scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
        let best = row.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let worst = row.scores.iter().copied().fold(f64::INFINITY, f64::min);
        let mode = match row.mode {
            SamplerMode::Af3 => "af3",
            SamplerMode::Ode => "ode",
        };
        let _ = writeln!(
            csv,
            "{mode},{},{},{},{},{mean},{var},{best},{worst},{}",
            row.eta,
            row.steps,
            cfg.sweep.n_seeds,
            cfg.sweep.n_samples,
            best - worst
        );
        for (idx, score) in row.scores.iter().enumerate() {
            let _ = writeln!(
                samples_csv,
                "{mode},{},{},{},{},{score}",
                row.eta,
                row.steps,
                idx / sweep.n_samples,
                idx % sweep.n_samples
            );
        }
    }
    echo_config(&cfg, out)?;
    write_out(&out.join("sweep.csv"), &csv)?;
    write_out(&out.join("samples.csv"), &samples_csv)?;
    Ok(())
}

// ---------------------------------------------------------------- flops

/// Parses `v` or `start:end:step` (inclusive).
fn parse_grid(text: &str) -> Result<Vec<usize>, CliError> {
    let bad = |msg: &str| CliError::Config(format!("bad grid `{text}`: {msg}"));
    let parts: Vec<&str> = text.split(':').collect();
    match parts.as_slice() {
        [v] => Ok(vec![v.parse().map_err(|_| bad("not a number"))?]),
        [start, end, step] => {
            let start: usize = start.parse().map_err(|_| bad("bad start"))?;
            let end: usize = end.parse().map_err(|_| bad("bad end"))?;
            let step: usize = step.parse().map_err(|_| bad("bad step"))?;
            if step == 0 || end < start {
                return Err(bad("need start <= end and step > 0"));
            }
            Ok((start..=end).step_by(step).collect())
        }
        _ => Err(bad("expected `v` or `start:end:step`")),
    }
}

pub fn cmd_flops(
    preset: &str,
    tokens: &str,
    msa: &str,
    atoms: usize,
    out: Option<&Path>,
) -> CmdResult {
    use fewstep::flops::{flops_estimate, presets, WorkloadShape};
    let configs = if preset == "all" {
        presets::NAMES
            .iter()
            .map(|n| presets::by_name(n).expect("listed presets exist"))
            .collect()
    } else {
        match presets::by_name(preset) {
            Some(cfg) => vec![cfg],
            None => {
                return Err(CliError::Config(format!(
                    "unknown preset `{preset}`; available: {} or `all`",
                    presets::NAMES.join(", ")
                )))
            }
        }
    };
    if atoms == 0 {
        return Err(CliError::Config("atom count must be positive".into()));
    }
    let token_grid = parse_grid(tokens)?;
    let msa_grid = parse_grid(msa)?;

    let mut csv = String::from(
        "model,n_tokens,n_msa,n_atoms,msa_flops,pairformer_flops,diffusion_flops,total\n",
    );
    for cfg in &configs {
        for &n_tokens in &token_grid {
            for &n_msa_rows in &msa_grid {
                let shape = WorkloadShape {
                    n_tokens,
                    n_msa_rows,
                    n_atoms: atoms,
                };
                shape.validate().map_err(classify)?;
                let f = flops_estimate(cfg, &shape);
                let _ = writeln!(
                    csv,
                    "{},{n_tokens},{n_msa_rows},{atoms},{},{},{},{}",
                    cfg.name,
                    f.msa,
                    f.pairformer,
                    f.diffusion,
                    f.total()
                );
            }
        }
    }
    match out {
        Some(path) => write_out(path, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

// ---------------------------------------------------------------- prune

#[derive(serde::Serialize)]
struct PruneReportFile {
    k: usize,
    baseline: EvalResult<f64>,
    zero_shot: EvalResult<f64>,
    finetuned: EvalResult<f64>,
}

pub fn cmd_prune(config: &Path, checkpoint: &Path, k: usize, out: Option<&Path>) -> CmdResult {
    let cfg = load_config(config)?;
    let out = out.unwrap_or(&cfg.out_dir).to_path_buf();
    let out = out.as_path();
    let net = ResidualNet::<f64>::load_checkpoint(checkpoint).map_err(classify)?;
    let outcome =
        prune_and_finetune(&net, k, &cfg.data, &cfg.train, &cfg.eval).map_err(classify)?;

    echo_config(&cfg, out)?;
    outcome
        .net
        .save_checkpoint(&out.join("pruned_checkpoint.json"))
        .map_err(classify)?;
    let file = PruneReportFile {
        k: outcome.k,
        baseline: outcome.baseline,
        zero_shot: outcome.zero_shot,
        finetuned: outcome.finetuned,
    };
    let json =
        serde_json::to_string_pretty(&file).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_out(&out.join("prune_report.json"), &json)?;
    let mut csv = String::from("k,baseline_lddt,zero_shot_lddt,finetuned_lddt\n");
    let _ = writeln!(
        csv,
        "{},{},{},{}",
        file.k, file.baseline.mean_lddt, file.zero_shot.mean_lddt, file.finetuned.mean_lddt
    );
    write_out(&out.join("prune.csv"), &csv)?;
    Ok(())
}

