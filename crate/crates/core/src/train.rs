//! Training loops for the toy denoiser: x-prediction training against the
//! clean structure and velocity training against the straight path, the
//! 50/50 dual-pathway conditioning mix, and the prune-then-finetune
//! procedure.

use serde::{Deserialize, Serialize};

use crate::denoise::{
    condition_features, v_to_x, Condition, NetParams, NetSpec, Parameterization, Pathway,
    ResidualNet, StepTime,
};
use crate::error::{Error, Result};
use crate::geom::{gen_toy, Structure, ToySpec};
use crate::loss::{loss_bond, loss_fm, loss_mse, loss_smooth_lddt, LossReport, LossWeights};
use crate::metrics::lddt;
use crate::num::{real, real_of_usize, Real};
use crate::rng::RngStream;
use crate::sampler::{run_sampler, SamplerConfig, SamplerRngs};
use crate::schedule::{sample_time, sigma_at, NoiseLevelParams, TimeDist};
use crate::vec3::Vec3;

/// Stream ids under the training seed.
mod streams {
    pub const PARAM_INIT: u64 = 0;
    pub const DATA: u64 = 1;
    pub const TIME: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const PATHWAY: u64 = 4;
    pub const EVAL_TARGETS: u64 = 5;
    pub const DATA_AUGMENT: u64 = 6;
    /// Eval target k samples on streams BASE + 3k .. BASE + 3k + 2.
    pub const EVAL_SAMPLER_BASE: u64 = 1000;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Framework {
    Edm,
    Flow,
}

/// How the velocity-training pair (x0, x1) is coupled.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", bound = "T: Real")]
pub enum FlowCoupling<T> {
    /// x0 drawn from the initial law, independent of x1.
    Independent,
    /// x1 = x0 + offset: the optimal velocity field is the constant
    /// offset, so the velocity loss can reach zero.
    Translation(Vec3<T>),
}

/// Optional scaling of the x-prediction losses as a function of the
/// noise level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossTimeScaling {
    Constant,
    /// `(sigma^2 + sigma_data^2) / (sigma * sigma_data)^2`, which undoes
    /// the output-scaling factor of the preconditioning.
    EdmLambda,
}

/// Sampling-based evaluation: mean complex LDDT of sampled structures
/// against freshly drawn targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, bound = "T: Real")]
pub struct EvalProtocol<T> {
    pub n_targets: usize,
    pub sampler: SamplerConfig<T>,
    pub pathway: Pathway,
    pub inclusion_radius: T,
}

impl<T: Real> Default for EvalProtocol<T> {
    fn default() -> Self {
        EvalProtocol {
            n_targets: 8,
            sampler: SamplerConfig::default(),
            pathway: Pathway::A,
            inclusion_radius: real(15.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, bound = "T: Real")]
pub struct TrainConfig<T> {
    pub framework: Framework,
    pub batch_size: usize,
    pub iterations: usize,
    pub lr: T,
    pub time_dist: TimeDist,
    pub loss_weights: LossWeights<T>,
    pub noise: NoiseLevelParams<T>,
    /// Probability of picking the geometry pathway on an iteration.
    pub pathway_mix: f64,
    pub seed: u64,
    /// Evaluate every this many iterations (0 disables).
    pub eval_cadence: usize,
    /// Keep a parameter snapshot every this many iterations (0 disables).
    pub snapshot_cadence: usize,
    pub flow_coupling: FlowCoupling<T>,
    pub time_scaling: LossTimeScaling,
    pub divergence_threshold: f64,
    /// Randomly rotate and translate each training target; conditioning
    /// features are computed from the canonical pose either way.
    pub augment_data: bool,
    /// Std of the training-pose translation, in Angstroms.
    pub data_translation_std: T,
    pub eval: Option<EvalProtocol<T>>,
}

impl<T: Real> Default for TrainConfig<T> {
    fn default() -> Self {
        TrainConfig {
            framework: Framework::Edm,
            batch_size: 8,
            iterations: 1000,
            lr: real(1e-3),
            time_dist: TimeDist::default(),
            loss_weights: LossWeights::default(),
            noise: NoiseLevelParams::default(),
            pathway_mix: 0.5,
            seed: 0,
            eval_cadence: 0,
            snapshot_cadence: 0,
            flow_coupling: FlowCoupling::Independent,
            time_scaling: LossTimeScaling::Constant,
            divergence_threshold: 1e6,
            augment_data: true,
            data_translation_std: T::one(),
            eval: None,
        }
    }
}

impl<T: Real> TrainConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::validation("batch size must be at least 1"));
        }
        if !(self.lr >= T::zero()) {
            return Err(Error::validation("learning rate must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.pathway_mix) {
            return Err(Error::validation("pathway mix must be in [0, 1]"));
        }
        self.time_dist.validate()?;
        self.loss_weights.validate()?;
        self.noise.validate()?;
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CurvePoint<T> {
    pub iteration: usize,
    pub losses: LossReport<T>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalResult<T> {
    pub mean_lddt: T,
    pub per_target: Vec<T>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport<T> {
    pub curve: Vec<CurvePoint<T>>,
    pub eval_curve: Vec<(usize, T)>,
    pub pathway_a_count: usize,
    pub snapshots: Vec<(usize, ResidualNet<T>)>,
    pub net: ResidualNet<T>,
}

struct BatchItem<T> {
    target: Structure<T>,
    x_in: Vec<Vec3<T>>,
    time: StepTime<T>,
    /// The drawn noise endpoint, present for velocity training.
    x0: Option<Vec<Vec3<T>>>,
    cond: Condition<T>,
}

struct TrainRngs {
    data: RngStream,
    time: RngStream,
    noise: RngStream,
    pathway: RngStream,
    augment: RngStream,
}

impl TrainRngs {
    fn for_seed(seed: u64) -> Self {
        TrainRngs {
            data: RngStream::new(seed, streams::DATA),
            time: RngStream::new(seed, streams::TIME),
            noise: RngStream::new(seed, streams::NOISE),
            pathway: RngStream::new(seed, streams::PATHWAY),
            augment: RngStream::new(seed, streams::DATA_AUGMENT),
        }
    }
}

fn make_batch<T: Real>(
    data: &ToySpec<T>,
    cfg: &TrainConfig<T>,
    pathway: Pathway,
    rngs: &mut TrainRngs,
) -> Result<Vec<BatchItem<T>>> {
    let mut items = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.batch_size {
        let canonical = gen_toy(data, &mut rngs.data)?;
        // condition features always come from the canonical pose
        let cond = condition_features(&canonical, pathway);
        let mut target = if cfg.augment_data {
            crate::geom::center_random_augmentation(
                &canonical,
                &mut rngs.augment,
                cfg.data_translation_std,
            )
        } else {
            canonical
        };
        let t: T = sample_time(&cfg.time_dist, &mut rngs.time);
        let n = target.n_atoms();
        let (x_in, time, x0) = match cfg.framework {
            Framework::Edm => {
                let sigma = sigma_at(t, &cfg.noise)?;
                let x_in: Vec<Vec3<T>> = target
                    .coords
                    .iter()
                    .map(|&p| p + rngs.noise.normal3::<T>().scale(sigma))
                    .collect();
                (x_in, StepTime { t, sigma }, None)
            }
            Framework::Flow => {
                let sd = cfg.noise.sigma_data;
                let x0: Vec<Vec3<T>> =
                    (0..n).map(|_| rngs.noise.normal3::<T>().scale(sd)).collect();
                if let FlowCoupling::Translation(offset) = cfg.flow_coupling {
                    target = target.with_coords(x0.iter().map(|&p| p + offset).collect())?;
                }
                let x_in: Vec<Vec3<T>> = x0
                    .iter()
                    .zip(&target.coords)
                    .map(|(&a, &b)| a.scale(T::one() - t) + b.scale(t))
                    .collect();
                let sigma = (T::one() - t) * sd;
                (x_in, StepTime { t, sigma }, Some(x0))
            }
        };
        items.push(BatchItem {
            target,
            x_in,
            time,
            x0,
            cond,
        });
    }
    Ok(items)
}

/// Batch-mean losses; gradients accumulate into `grads` when given
/// (scaled by 1/batch).
fn eval_batch<T: Real>(
    net: &ResidualNet<T>,
    items: &[BatchItem<T>],
    cfg: &TrainConfig<T>,
    mut grads: Option<&mut NetParams<T>>,
) -> Result<LossReport<T>> {
    let lw = &cfg.loss_weights;
    let inv_batch = real_of_usize::<T>(items.len()).recip();
    let mut report = LossReport::<T>::default();
    for item in items {
        let out = net.forward(&item.x_in, item.time, &item.cond)?;
        let mut grad_out = vec![Vec3::<T>::zero(); out.len()];
        let mut item_total = T::zero();

        match cfg.framework {
            Framework::Edm => {
                let scale = match cfg.time_scaling {
                    LossTimeScaling::Constant => T::one(),
                    LossTimeScaling::EdmLambda => {
                        let s = item.time.sigma;
                        let sd = cfg.noise.sigma_data;
                        (s * s + sd * sd) / (s * sd * (s * sd))
                    }
                };
                let pred = item.target.with_coords(out.clone())?;
                accumulate_structure_losses(
                    &pred,
                    &item.target,
                    lw,
                    scale,
                    &mut report,
                    &mut item_total,
                    &mut grad_out,
                    T::one(),
                )?;
            }
            Framework::Flow => {
                let x0 = item.x0.as_ref().expect("flow batch items carry x0");
                if lw.w_mse > T::zero() {
                    let fm = loss_fm(&out, x0, &item.target.coords)?;
                    report.fm += fm.value * inv_batch;
                    item_total += lw.w_mse * fm.value;
                    for (g, d) in grad_out.iter_mut().zip(&fm.grad) {
                        *g += d.scale(lw.w_mse);
                    }
                }
                if lw.w_bond > T::zero() || lw.w_slddt > T::zero() {
                    // auxiliary losses act on the reconstruction
                    // x_hat = x_t + (1 - t) v
                    let xhat = v_to_x(&out, &item.x_in, item.time.t)?;
                    let pred = item.target.with_coords(xhat)?;
                    let chain = T::one() - item.time.t;
                    let mut aux_weights = lw.clone();
                    aux_weights.w_mse = T::zero();
                    accumulate_structure_losses(
                        &pred,
                        &item.target,
                        &aux_weights,
                        T::one(),
                        &mut report,
                        &mut item_total,
                        &mut grad_out,
                        chain,
                    )?;
                }
            }
        }

        report.total += item_total * inv_batch;
        if let Some(g) = grads.as_deref_mut() {
            for gv in &mut grad_out {
                *gv = gv.scale(inv_batch);
            }
            net.forward_backward(&item.x_in, item.time, &item.cond, &grad_out, g)?;
        }
    }
    Ok(report)
}

/// Adds the weighted structure losses (MSE, bond, smooth LDDT) of one
/// item into the running report and output gradient, chained by
/// `grad_chain` (1 for direct x-prediction, `1 - t` through the flow
/// reconstruction).
#[allow(clippy::too_many_arguments)]
fn accumulate_structure_losses<T: Real>(
    pred: &Structure<T>,
    target: &Structure<T>,
    lw: &LossWeights<T>,
    scale: T,
    report: &mut LossReport<T>,
    item_total: &mut T,
    grad_out: &mut [Vec3<T>],
    grad_chain: T,
) -> Result<()> {
    if lw.w_mse > T::zero() {
        let weights = lw.atom_weights(target);
        let mse = loss_mse(pred, target, &weights, lw.align_mse)?;
        report.mse += mse.value;
        *item_total += lw.w_mse * scale * mse.value;
        for (g, d) in grad_out.iter_mut().zip(&mse.grad) {
            *g += d.scale(lw.w_mse * scale * grad_chain);
        }
    }
    if lw.w_bond > T::zero() && !target.bonds.is_empty() {
        let bond = loss_bond(pred, target)?;
        report.bond += bond.value;
        *item_total += lw.w_bond * scale * bond.value;
        for (g, d) in grad_out.iter_mut().zip(&bond.grad) {
            *g += d.scale(lw.w_bond * scale * grad_chain);
        }
    }
    if lw.w_slddt > T::zero() {
        let sl = loss_smooth_lddt(pred, target, &lw.pair_rule)?;
        report.smooth_lddt += sl.value;
        *item_total += lw.w_slddt * scale * sl.value;
        for (g, d) in grad_out.iter_mut().zip(&sl.grad) {
            *g += d.scale(lw.w_slddt * scale * grad_chain);
        }
    }
    Ok(())
}

fn fix_report_means<T: Real>(report: &mut LossReport<T>, batch: usize) {
    // mse/bond/slddt accumulated unscaled inside accumulate_structure_losses
    let inv = real_of_usize::<T>(batch).recip();
    report.mse *= inv;
    report.bond *= inv;
    report.smooth_lddt *= inv;
}

/// Trains a fresh network.
pub fn train<T: Real>(
    spec: &NetSpec,
    data: &ToySpec<T>,
    cfg: &TrainConfig<T>,
) -> Result<TrainReport<T>> {
    cfg.validate()?;
    spec.validate()?;
    data.validate()?;
    expect_framework_matches(spec, cfg)?;
    let mut init_rng = RngStream::new(cfg.seed, streams::PARAM_INIT);
    let net = ResidualNet::init(*spec, cfg.noise.sigma_data, &mut init_rng)?;
    train_from(net, data, cfg)
}

fn expect_framework_matches<T: Real>(spec: &NetSpec, cfg: &TrainConfig<T>) -> Result<()> {
    let wanted = match cfg.framework {
        Framework::Edm => Parameterization::XPred,
        Framework::Flow => Parameterization::VPred,
    };
    if spec.parameterization != wanted {
        return Err(Error::validation(format!(
            "{:?} training requires a {wanted:?} network, got {:?}",
            cfg.framework, spec.parameterization
        )));
    }
    Ok(())
}

/// Trains starting from existing parameters (used by finetuning).
pub fn train_from<T: Real>(
    mut net: ResidualNet<T>,
    data: &ToySpec<T>,
    cfg: &TrainConfig<T>,
) -> Result<TrainReport<T>> {
    cfg.validate()?;
    data.validate()?;
    expect_framework_matches(&net.spec, cfg)?;
    let mut rngs = TrainRngs::for_seed(cfg.seed);
    let mut curve = Vec::with_capacity(cfg.iterations);
    let mut eval_curve = Vec::new();
    let mut snapshots = Vec::new();
    let mut pathway_a_count = 0usize;

    for iteration in 0..cfg.iterations {
        let pathway = if rngs.pathway.bernoulli(cfg.pathway_mix) {
            pathway_a_count += 1;
            Pathway::A
        } else {
            Pathway::B
        };
        let items = make_batch(data, cfg, pathway, &mut rngs)?;
        let mut grads = NetParams::zeros(&net.spec);
        let mut report = eval_batch(&net, &items, cfg, Some(&mut grads))?;
        fix_report_means(&mut report, items.len());

        let total = report.total.to_f64().unwrap_or(f64::NAN);
        if !total.is_finite() || total > cfg.divergence_threshold {
            return Err(Error::Diverged {
                iteration,
                loss: total,
            });
        }

        net.params.axpy(&grads, -cfg.lr);
        curve.push(CurvePoint {
            iteration,
            losses: report,
        });

        let done = iteration + 1;
        if cfg.eval_cadence > 0 && done % cfg.eval_cadence == 0 {
            if let Some(eval) = &cfg.eval {
                let r = evaluate_lddt(&net, data, eval, cfg.seed)?;
                eval_curve.push((done, r.mean_lddt));
            }
        }
        if cfg.snapshot_cadence > 0 && done % cfg.snapshot_cadence == 0 {
            snapshots.push((done, net.clone()));
        }
    }

    Ok(TrainReport {
        curve,
        eval_curve,
        pathway_a_count,
        snapshots,
        net,
    })
}

/// Samples against freshly drawn targets and scores mean complex LDDT.
/// Deterministic in (seed, protocol).
pub fn evaluate_lddt<T: Real>(
    net: &ResidualNet<T>,
    data: &ToySpec<T>,
    eval: &EvalProtocol<T>,
    seed: u64,
) -> Result<EvalResult<T>> {
    if eval.n_targets == 0 {
        return Err(Error::validation("evaluation needs at least one target"));
    }
    let thresholds: Vec<T> = crate::loss::LDDT_THRESHOLDS.iter().map(|&v| real(v)).collect();
    let mut target_rng = RngStream::new(seed, streams::EVAL_TARGETS);
    let mut per_target = Vec::with_capacity(eval.n_targets);
    for k in 0..eval.n_targets {
        let target = gen_toy(data, &mut target_rng)?;
        let cond = condition_features(&target, eval.pathway);
        let mut rngs =
            SamplerRngs::from_seed(seed, streams::EVAL_SAMPLER_BASE + 3 * k as u64);
        let traj = run_sampler(net, &target, &cond, &eval.sampler, &mut rngs)?;
        per_target.push(lddt(
            &traj.final_structure,
            &target,
            eval.inclusion_radius,
            &thresholds,
        )?);
    }
    let mean = per_target.iter().copied().sum::<T>() / real_of_usize(per_target.len());
    Ok(EvalResult {
        mean_lddt: mean,
        per_target,
    })
}

/// Outcome of the prune-then-finetune procedure.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PruneOutcome<T> {
    pub k: usize,
    pub baseline: EvalResult<T>,
    pub zero_shot: EvalResult<T>,
    pub finetuned: EvalResult<T>,
    pub net: ResidualNet<T>,
}

/// Evaluates the pruned network without any weight update, finetunes the
/// remaining weights, and re-evaluates. Both metric sets are reported
/// regardless of direction.
pub fn prune_and_finetune<T: Real>(
    net: &ResidualNet<T>,
    k: usize,
    data: &ToySpec<T>,
    finetune: &TrainConfig<T>,
    eval: &EvalProtocol<T>,
) -> Result<PruneOutcome<T>> {
    let baseline = evaluate_lddt(net, data, eval, finetune.seed)?;
    let pruned = net.prune_blocks(k)?;
    let zero_shot = evaluate_lddt(&pruned, data, eval, finetune.seed)?;
    let report = train_from(pruned, data, finetune)?;
    let finetuned = evaluate_lddt(&report.net, data, eval, finetune.seed)?;
    Ok(PruneOutcome {
        k,
        baseline,
        zero_shot,
        finetuned,
        net: report.net,
    })
}
