//! The two sampling procedures: the stochastic churn sampler (`af3` mode)
//! and the deterministic solver (`ode` mode), both step-auditable over any
//! denoiser.
//!
//! The time variable of the Euler update is bound to the denoiser's
//! parameterization in one place ([`cal_velocity`] / [`step_delta`]):
//! x-prediction backends advance along the noise level sigma, velocity
//! backends along normalized time. With churn disabled, unit step scale
//! and unit noise scaling, the stochastic sampler follows bit-for-bit the
//! same arithmetic as the deterministic one.

use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::denoise::{Condition, Denoiser, Parameterization, StepTime};
use crate::error::{Error, Result};
use crate::geom::{augment_coords, Structure};
use crate::num::{real, Real};
use crate::rng::RngStream;
use crate::schedule::{
    churn, step_times, ChurnParams, LinearSchedule, NoiseLevelParams, PowerSchedule, SigmaSchedule,
};
use crate::vec3::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerMode {
    Af3,
    Ode,
}

/// Step scale: one value for every step, or one per step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EtaSchedule<T> {
    Constant(T),
    PerStep(Vec<T>),
}

impl<T: Real> EtaSchedule<T> {
    pub fn at(&self, step: usize) -> T {
        match self {
            EtaSchedule::Constant(v) => *v,
            EtaSchedule::PerStep(v) => v[step],
        }
    }

    fn validate(&self, n_steps: usize) -> Result<()> {
        match self {
            EtaSchedule::Constant(v) => {
                if !(*v > T::zero()) {
                    return Err(Error::validation("step scale must be positive"));
                }
            }
            EtaSchedule::PerStep(v) => {
                if v.len() != n_steps {
                    return Err(Error::validation(format!(
                        "per-step eta list has {} entries for {n_steps} steps",
                        v.len()
                    )));
                }
                if v.iter().any(|e| !(*e > T::zero())) {
                    return Err(Error::validation("step scales must be positive"));
                }
            }
        }
        Ok(())
    }
}

/// Everything the two samplers consume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, bound = "T: Real")]
pub struct SamplerConfig<T> {
    pub mode: SamplerMode,
    pub n_steps: usize,
    pub eta: EtaSchedule<T>,
    pub churn: ChurnParams<T>,
    pub noise: NoiseLevelParams<T>,
    pub augment: bool,
    /// Std of the augmentation's random translation, in Angstroms.
    pub translation_std: T,
    /// Override for the initial per-coordinate std. Defaults to the
    /// convention-implied level: sigma(0) for x-prediction backends,
    /// sigma_data for velocity backends.
    pub init_std: Option<T>,
}

impl<T: Real> Default for SamplerConfig<T> {
    fn default() -> Self {
        SamplerConfig {
            mode: SamplerMode::Ode,
            n_steps: 2,
            eta: EtaSchedule::Constant(T::one()),
            churn: ChurnParams::disabled(),
            noise: NoiseLevelParams::default(),
            augment: true,
            translation_std: T::one(),
            init_std: None,
        }
    }
}

impl<T: Real> SamplerConfig<T> {
    /// The stochastic sampler's published defaults: 200 steps, eta 1.5,
    /// gamma0 0.8, lambda 1.003.
    pub fn af3_default() -> Self {
        SamplerConfig {
            mode: SamplerMode::Af3,
            n_steps: 200,
            eta: EtaSchedule::Constant(real(1.5)),
            churn: ChurnParams::default(),
            ..SamplerConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::validation("need at least one step"));
        }
        self.eta.validate(self.n_steps)?;
        self.churn.validate()?;
        self.noise.validate()?;
        if !(self.translation_std >= T::zero()) {
            return Err(Error::validation("translation std must be nonnegative"));
        }
        if let Some(s) = self.init_std {
            if !(s > T::zero()) {
                return Err(Error::validation("init std must be positive"));
            }
        }
        Ok(())
    }
}

/// The three independent random streams one sampling run consumes.
#[derive(Clone, Debug)]
pub struct SamplerRngs {
    pub init: RngStream,
    pub churn: RngStream,
    pub augment: RngStream,
}

impl SamplerRngs {
    /// Streams `base`, `base + 1`, `base + 2` under one seed.
    pub fn from_seed(seed: u64, base_stream: u64) -> Self {
        SamplerRngs {
            init: RngStream::new(seed, base_stream),
            churn: RngStream::new(seed, base_stream + 1),
            augment: RngStream::new(seed, base_stream + 2),
        }
    }

    /// Stream allocation for one cell of a seeds-by-samples grid; cell
    /// (0, 0) coincides with a direct `from_seed(seed, base_stream)` run.
    pub fn for_grid_cell(seed: u64, base_stream: u64, cell_index: u64) -> Self {
        SamplerRngs::from_seed(seed, base_stream + 3 * cell_index)
    }
}

/// One audited step of a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord<T> {
    pub t: T,
    pub t_hat: T,
    pub sigma: T,
    pub sigma_hat: T,
    pub eta: T,
    pub x_t: Vec<Vec3<T>>,
    pub x_noisy: Vec<Vec3<T>>,
    pub x_denoised: Vec<Vec3<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    pub times: Vec<T>,
    pub steps: Vec<StepRecord<T>>,
    pub final_structure: Structure<T>,
}

impl<T: Real> Trajectory<T> {
    pub fn final_coords(&self) -> &[Vec3<T>] {
        &self.final_structure.coords
    }
}

/// Which time variable the Euler update advances along.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VelocityConvention {
    /// x advances along the noise level; v is per unit sigma.
    EdmSigma,
    /// x advances along normalized time; v is per unit t.
    FlowTime,
}

impl From<Parameterization> for VelocityConvention {
    fn from(p: Parameterization) -> Self {
        match p {
            Parameterization::XPred => VelocityConvention::EdmSigma,
            Parameterization::VPred => VelocityConvention::FlowTime,
        }
    }
}

/// Update direction from the denoised prediction, in units of the active
/// time variable.
pub fn cal_velocity<T: Real>(
    x_denoised: &[Vec3<T>],
    x_noisy: &[Vec3<T>],
    time: StepTime<T>,
    convention: VelocityConvention,
) -> Result<Vec<Vec3<T>>> {
    if x_denoised.len() != x_noisy.len() {
        return Err(Error::validation("coordinate counts differ"));
    }
    match convention {
        VelocityConvention::EdmSigma => {
            if !(time.sigma > T::zero()) {
                return Err(Error::domain(format!(
                    "velocity undefined at sigma = {}",
                    time.sigma
                )));
            }
            let inv = time.sigma.recip();
            Ok(x_noisy
                .iter()
                .zip(x_denoised)
                .map(|(&xn, &xd)| (xn - xd).scale(inv))
                .collect())
        }
        VelocityConvention::FlowTime => {
            if time.t >= T::one() {
                return Err(Error::domain(format!(
                    "velocity undefined at t = {}",
                    time.t
                )));
            }
            let inv = (T::one() - time.t).recip();
            Ok(x_denoised
                .iter()
                .zip(x_noisy)
                .map(|(&xd, &xn)| (xd - xn).scale(inv))
                .collect())
        }
    }
}

/// Step extent in the active time variable from the (possibly churned)
/// evaluation point to the next grid time.
fn step_delta<T: Real>(
    convention: VelocityConvention,
    time: StepTime<T>,
    t_next: T,
    sigma_next: T,
) -> T {
    match convention {
        VelocityConvention::EdmSigma => sigma_next - time.sigma,
        VelocityConvention::FlowTime => t_next - time.t,
    }
}

enum ActiveSchedule<T> {
    Power(PowerSchedule<T>),
    Linear(LinearSchedule<T>),
}

impl<T: Real> ActiveSchedule<T> {
    fn new(convention: VelocityConvention, noise: &NoiseLevelParams<T>) -> Result<Self> {
        Ok(match convention {
            VelocityConvention::EdmSigma => ActiveSchedule::Power(PowerSchedule::new(*noise)?),
            VelocityConvention::FlowTime => ActiveSchedule::Linear(LinearSchedule {
                sigma_init: noise.sigma_data,
            }),
        })
    }

    fn sigma(&self, t: T) -> Result<T> {
        match self {
            ActiveSchedule::Power(s) => s.sigma(t),
            ActiveSchedule::Linear(s) => s.sigma(t),
        }
    }

    fn sigma_start(&self) -> T {
        match self {
            ActiveSchedule::Power(s) => s.sigma_start(),
            ActiveSchedule::Linear(s) => s.sigma_start(),
        }
    }

    fn churn(
        &self,
        t: T,
        params: &ChurnParams<T>,
        n_atoms: usize,
        rng: &mut RngStream,
    ) -> Result<crate::schedule::ChurnStep<T>> {
        match self {
            ActiveSchedule::Power(s) => churn(t, params, s, n_atoms, rng),
            ActiveSchedule::Linear(s) => churn(t, params, s, n_atoms, rng),
        }
    }
}

fn ensure_finite<T: Real>(coords: &[Vec3<T>], step: usize, stage: &'static str) -> Result<()> {
    if coords.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite { step, stage });
    }
    Ok(())
}

fn draw_init<T: Real>(
    n_atoms: usize,
    std: T,
    rng: &mut RngStream,
) -> Vec<Vec3<T>> {
    (0..n_atoms).map(|_| rng.normal3::<T>().scale(std)).collect()
}

/// The stochastic sampler: per step, optional augmentation, churn
/// re-noising, denoise at the lifted time, then a scaled Euler update
/// from the noisy state.
pub fn af3_sample<T: Real, D: Denoiser<T>>(
    denoiser: &D,
    template: &Structure<T>,
    cond: &Condition<T>,
    cfg: &SamplerConfig<T>,
    rngs: &mut SamplerRngs,
) -> Result<Trajectory<T>> {
    cfg.validate()?;
    if cfg.mode != SamplerMode::Af3 {
        return Err(Error::validation("config mode is not af3"));
    }
    sample_inner(denoiser, template, cond, cfg, rngs, None, true)
}

/// The deterministic sampler: no noise injection anywhere.
pub fn ode_sample<T: Real, D: Denoiser<T>>(
    denoiser: &D,
    template: &Structure<T>,
    cond: &Condition<T>,
    cfg: &SamplerConfig<T>,
    rngs: &mut SamplerRngs,
) -> Result<Trajectory<T>> {
    cfg.validate()?;
    if cfg.mode != SamplerMode::Ode {
        return Err(Error::validation("config mode is not ode"));
    }
    sample_inner(denoiser, template, cond, cfg, rngs, None, false)
}

/// Runs whichever sampler the config selects.
pub fn run_sampler<T: Real, D: Denoiser<T>>(
    denoiser: &D,
    template: &Structure<T>,
    cond: &Condition<T>,
    cfg: &SamplerConfig<T>,
    rngs: &mut SamplerRngs,
) -> Result<Trajectory<T>> {
    match cfg.mode {
        SamplerMode::Af3 => af3_sample(denoiser, template, cond, cfg, rngs),
        SamplerMode::Ode => ode_sample(denoiser, template, cond, cfg, rngs),
    }
}

/// Sampler entry with an explicit initial state instead of a drawn one;
/// the init stream stays untouched.
pub fn sample_from_state<T: Real, D: Denoiser<T>>(
    denoiser: &D,
    template: &Structure<T>,
    cond: &Condition<T>,
    cfg: &SamplerConfig<T>,
    x0: Vec<Vec3<T>>,
    rngs: &mut SamplerRngs,
) -> Result<Trajectory<T>> {
    cfg.validate()?;
    if x0.len() != template.n_atoms() {
        return Err(Error::validation("initial state atom count mismatch"));
    }
    sample_inner(
        denoiser,
        template,
        cond,
        cfg,
        rngs,
        Some(x0),
        cfg.mode == SamplerMode::Af3,
    )
}

fn sample_inner<T: Real, D: Denoiser<T>>(
    denoiser: &D,
    template: &Structure<T>,
    cond: &Condition<T>,
    cfg: &SamplerConfig<T>,
    rngs: &mut SamplerRngs,
    x0: Option<Vec<Vec3<T>>>,
    with_churn: bool,
) -> Result<Trajectory<T>> {
    let n_atoms = template.n_atoms();
    let convention = VelocityConvention::from(denoiser.parameterization());
    let schedule = ActiveSchedule::new(convention, &cfg.noise)?;
    let times = step_times::<T>(cfg.n_steps)?;

    let init_std = cfg.init_std.unwrap_or_else(|| schedule.sigma_start());
    let mut x = match x0 {
        Some(coords) => coords,
        None => draw_init(n_atoms, init_std, &mut rngs.init),
    };
    ensure_finite(&x, 0, "init")?;

    let mut steps = Vec::with_capacity(cfg.n_steps);
    for i in 0..cfg.n_steps {
        let t = times[i];
        let t_next = times[i + 1];
        let sigma = schedule.sigma(t)?;

        let x_t = if cfg.augment {
            augment_coords(&x, &mut rngs.augment, cfg.translation_std)
        } else {
            x
        };
        ensure_finite(&x_t, i, "augment")?;

        // churn lifts the noise level; the deterministic sampler never
        // injects noise
        let (time_hat, x_noisy) = if with_churn {
            let c = schedule.churn(t, &cfg.churn, n_atoms, &mut rngs.churn)?;
            let x_noisy = match c.noise {
                None => x_t.clone(),
                Some(eps) => x_t
                    .iter()
                    .zip(&eps)
                    .map(|(&xi, &e)| xi + e.scale(cfg.churn.lambda))
                    .collect(),
            };
            (
                StepTime {
                    t: c.t_hat,
                    sigma: c.sigma_hat,
                },
                x_noisy,
            )
        } else {
            (StepTime { t, sigma }, x_t.clone())
        };
        ensure_finite(&x_noisy, i, "churn")?;

        let x_denoised = denoiser.denoise(&x_noisy, time_hat, cond)?;
        if x_denoised.len() != n_atoms {
            return Err(Error::validation("denoiser changed the atom count"));
        }
        ensure_finite(&x_denoised, i, "denoise")?;

        let v = cal_velocity(&x_denoised, &x_noisy, time_hat, convention)?;
        let sigma_next = schedule.sigma(t_next)?;
        let delta = step_delta(convention, time_hat, t_next, sigma_next);
        let eta = cfg.eta.at(i);
        let scale = eta * delta;
        let x_next: Vec<Vec3<T>> = x_noisy
            .iter()
            .zip(&v)
            .map(|(&xi, &vi)| xi + vi.scale(scale))
            .collect();
        ensure_finite(&x_next, i, "update")?;

        steps.push(StepRecord {
            t,
            t_hat: time_hat.t,
            sigma,
            sigma_hat: time_hat.sigma,
            eta,
            x_t,
            x_noisy,
            x_denoised,
        });
        x = x_next;
    }

    Ok(Trajectory {
        times,
        steps,
        final_structure: template.with_coords(x)?,
    })
}

/// Grid of independent sampling runs: `n_seeds x n_samples` structures,
/// each cell on its own derived rng streams, deterministic under the
/// master seed.
pub fn batch_sample<T: Real, D: Denoiser<T>>(
    denoiser: &D,
    template: &Structure<T>,
    cond: &Condition<T>,
    cfg: &SamplerConfig<T>,
    seed: u64,
    base_stream: u64,
    n_seeds: usize,
    n_samples: usize,
) -> Result<Vec<Vec<Structure<T>>>> {
    if n_seeds == 0 || n_samples == 0 {
        return Err(Error::validation("grid dimensions must be at least 1"));
    }
    let mut grid = Vec::with_capacity(n_seeds);
    for i in 0..n_seeds {
        let mut row = Vec::with_capacity(n_samples);
        for j in 0..n_samples {
            let cell = (i * n_samples + j) as u64;
            let mut rngs = SamplerRngs::for_grid_cell(seed, base_stream, cell);
            let traj = run_sampler(denoiser, template, cond, cfg, &mut rngs)?;
            row.push(traj.final_structure);
        }
        grid.push(row);
    }
    Ok(grid)
}

/// One JSON line per step: times, noise levels, step scale, RMS norms,
/// and optionally the full coordinates.
pub fn write_trajectory_jsonl<T: Real>(
    traj: &Trajectory<T>,
    include_coords: bool,
    mut out: impl Write,
) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a, T> {
        step: usize,
        t: T,
        t_hat: T,
        sigma: T,
        sigma_hat: T,
        eta: T,
        rms_x: T,
        rms_noisy: T,
        rms_denoised: T,
        #[serde(skip_serializing_if = "Option::is_none")]
        x_t: Option<&'a [Vec3<T>]>,
        #[serde(skip_serializing_if = "Option::is_none")]
        x_noisy: Option<&'a [Vec3<T>]>,
        #[serde(skip_serializing_if = "Option::is_none")]
        x_denoised: Option<&'a [Vec3<T>]>,
    }
    fn rms<T: Real>(coords: &[Vec3<T>]) -> T {
        let n = crate::num::real_of_usize::<T>(coords.len().max(1));
        (coords.iter().map(|c| c.norm_sq()).sum::<T>() / n).sqrt()
    }
    for (step, rec) in traj.steps.iter().enumerate() {
        let row = Row {
            step,
            t: rec.t,
            t_hat: rec.t_hat,
            sigma: rec.sigma,
            sigma_hat: rec.sigma_hat,
            eta: rec.eta,
            rms_x: rms(&rec.x_t),
            rms_noisy: rms(&rec.x_noisy),
            rms_denoised: rms(&rec.x_denoised),
            x_t: include_coords.then_some(rec.x_t.as_slice()),
            x_noisy: include_coords.then_some(rec.x_noisy.as_slice()),
            x_denoised: include_coords.then_some(rec.x_denoised.as_slice()),
        };
        serde_json::to_writer(&mut out, &row)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoise::{GmmDenoiser, ResidualNet, NetSpec};
    use crate::geom::{EntityClass, GmmSpec};

    fn template(n: usize) -> Structure<f64> {
        Structure::from_coords(vec![Vec3::zero(); n], EntityClass::Protein).unwrap()
    }

    fn gmm_denoiser(a: f64) -> GmmDenoiser<f64> {
        GmmDenoiser::new(GmmSpec::single(Vec3::zero(), a)).unwrap()
    }

    fn analytic_noise(sigma_max: f64) -> NoiseLevelParams<f64> {
        NoiseLevelParams {
            sigma_data: 16.0,
            sigma_max,
            sigma_min: 0.0,
            rho: 7.0,
        }
    }

    fn bits(coords: &[Vec3<f64>]) -> Vec<u64> {
        coords
            .iter()
            .flat_map(|c| c.0.iter().map(|v| v.to_bits()))
            .collect()
    }

    #[test]
    fn cal_velocity_examples() {
        // fixed point: denoised == noisy -> v = 0
        let x = vec![Vec3::new(1.0, 2.0, 3.0)];
        let v = cal_velocity(&x, &x, StepTime { t: 0.3, sigma: 2.0 }, VelocityConvention::EdmSigma)
            .unwrap();
        assert_eq!(v[0], Vec3::zero());

        // EDM scalars: x_noisy = 2, x_denoised = 0, sigma = 1 -> v = 2
        let v = cal_velocity(
            &[Vec3::new(0.0, 0.0, 0.0)],
            &[Vec3::new(2.0, 0.0, 0.0)],
            StepTime { t: 0.5, sigma: 1.0 },
            VelocityConvention::EdmSigma,
        )
        .unwrap();
        assert_eq!(v[0][0], 2.0);

        // flow: x_t = 0, x_denoised = (1,0,0), t = 0.5 -> v = (2,0,0)
        let v = cal_velocity(
            &[Vec3::new(1.0, 0.0, 0.0)],
            &[Vec3::zero()],
            StepTime { t: 0.5, sigma: 8.0 },
            VelocityConvention::FlowTime,
        )
        .unwrap();
        assert_eq!(v[0][0], 2.0);

        // domain errors
        assert!(cal_velocity(&x, &x, StepTime { t: 0.1, sigma: 0.0 }, VelocityConvention::EdmSigma).is_err());
        assert!(cal_velocity(&x, &x, StepTime { t: 1.0, sigma: 0.0 }, VelocityConvention::FlowTime).is_err());
    }

    #[test]
    fn degenerate_churn_reproduces_ode_bitwise() {
        let denoiser = gmm_denoiser(1.0);
        let tmpl = template(6);
        let base = SamplerConfig {
            n_steps: 8,
            eta: EtaSchedule::Constant(1.0),
            noise: analytic_noise(16.0),
            augment: true,
            ..SamplerConfig::default()
        };
        let af3_cfg = SamplerConfig {
            mode: SamplerMode::Af3,
            churn: ChurnParams {
                gamma0: 0.0,
                gamma_min: 1.0,
                lambda: 1.0,
            },
            ..base.clone()
        };
        let ode_cfg = SamplerConfig {
            mode: SamplerMode::Ode,
            ..base
        };
        for seed in 0..5 {
            let mut rngs_a = SamplerRngs::from_seed(seed, 0);
            let mut rngs_b = SamplerRngs::from_seed(seed, 0);
            let a = af3_sample(&denoiser, &tmpl, &Condition::None, &af3_cfg, &mut rngs_a).unwrap();
            let b = ode_sample(&denoiser, &tmpl, &Condition::None, &ode_cfg, &mut rngs_b).unwrap();
            assert_eq!(a.steps.len(), b.steps.len());
            for (sa, sb) in a.steps.iter().zip(&b.steps) {
                assert_eq!(bits(&sa.x_t), bits(&sb.x_t));
                assert_eq!(bits(&sa.x_noisy), bits(&sb.x_noisy));
                assert_eq!(bits(&sa.x_denoised), bits(&sb.x_denoised));
                assert_eq!(sa.t_hat.to_bits(), sb.t_hat.to_bits());
            }
            assert_eq!(
                bits(a.final_coords()),
                bits(b.final_coords())
            );
        }
    }

    /// Scalar recurrence oracle for the single-Gaussian deterministic
    /// trajectory: every coordinate contracts by the same factor per step.
    fn endpoint_ratio_oracle(n_steps: usize, noise: &NoiseLevelParams<f64>, a: f64) -> f64 {
        let sched = PowerSchedule::new(*noise).unwrap();
        let times = step_times::<f64>(n_steps).unwrap();
        let mut factor = 1.0f64;
        for i in 0..n_steps {
            let s0 = sched.sigma(times[i]).unwrap();
            let s1 = sched.sigma(times[i + 1]).unwrap();
            factor *= 1.0 + (s1 - s0) * s0 / (a * a + s0 * s0);
        }
        factor
    }

    #[test]
    fn analytic_endpoint_matches_recurrence_and_closed_form() {
        let noise = analytic_noise(16.0);
        let denoiser = gmm_denoiser(1.0);
        let tmpl = template(8);
        let cfg = SamplerConfig {
            mode: SamplerMode::Ode,
            n_steps: 512,
            eta: EtaSchedule::Constant(1.0),
            noise,
            augment: false,
            ..SamplerConfig::default()
        };
        let mut rngs = SamplerRngs::from_seed(11, 0);
        let traj = ode_sample(&denoiser, &tmpl, &Condition::None, &cfg, &mut rngs).unwrap();
        let x0 = &traj.steps[0].x_t;
        let norm0: f64 = x0.iter().map(|c| c.norm_sq()).sum::<f64>().sqrt();
        let norm1: f64 = traj
            .final_coords()
            .iter()
            .map(|c| c.norm_sq())
            .sum::<f64>()
            .sqrt();
        let ratio = norm1 / norm0;

        // the trajectory is exactly the per-coordinate linear recurrence
        let reference = endpoint_ratio_oracle(512, &noise, 1.0);
        assert!((ratio - reference).abs() < 1e-12);

        // closed-form probability-flow solution
        let closed = (1.0f64 / 257.0).sqrt();
        assert!(
            (ratio - closed).abs() < 1e-3,
            "ratio {ratio} vs closed form {closed}"
        );

        // first-order behavior: halving the step count roughly doubles
        // the gap
        let gap = |n: usize| (endpoint_ratio_oracle(n, &noise, 1.0) - closed).abs();
        let factor = gap(256) / gap(512);
        assert!((1.5..=2.5).contains(&factor), "factor {factor}");
    }

    #[test]
    fn few_vs_many_steps_discretization_gap() {
        let noise = analytic_noise(16.0);
        let closed = (1.0f64 / 257.0).sqrt();
        let gap2 = (endpoint_ratio_oracle(2, &noise, 1.0) - closed).abs();
        let gap200 = (endpoint_ratio_oracle(200, &noise, 1.0) - closed).abs();
        assert!(gap200 < gap2);
        // both final ratios stay positive and bounded
        assert!(endpoint_ratio_oracle(2, &noise, 1.0) > 0.0);

        let denoiser = gmm_denoiser(1.0);
        let tmpl = template(4);
        for n_steps in [2usize, 200] {
            let cfg = SamplerConfig {
                mode: SamplerMode::Ode,
                n_steps,
                eta: EtaSchedule::Constant(1.0),
                noise,
                augment: false,
                ..SamplerConfig::default()
            };
            let mut rngs = SamplerRngs::from_seed(3, 0);
            let traj = ode_sample(&denoiser, &tmpl, &Condition::None, &cfg, &mut rngs).unwrap();
            let norm0: f64 = traj.steps[0].x_t.iter().map(|c| c.norm_sq()).sum::<f64>().sqrt();
            let norm1: f64 = traj.final_coords().iter().map(|c| c.norm_sq()).sum::<f64>().sqrt();
            let expected = endpoint_ratio_oracle(n_steps, &noise, 1.0);
            assert!((norm1 / norm0 - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn one_step_exact_for_constant_velocity_field() {
        // a velocity backend that returns a constant translation
        struct ConstV(Vec3<f64>);
        impl Denoiser<f64> for ConstV {
            fn parameterization(&self) -> Parameterization {
                Parameterization::VPred
            }
            fn denoise(
                &self,
                coords: &[Vec3<f64>],
                time: StepTime<f64>,
                _cond: &Condition<f64>,
            ) -> crate::error::Result<Vec<Vec3<f64>>> {
                // x_hat = x + (1 - t) * c
                Ok(coords
                    .iter()
                    .map(|&x| x + self.0.scale(1.0 - time.t))
                    .collect())
            }
        }
        let c = Vec3::new(3.0, -2.0, 0.5);
        let denoiser = ConstV(c);
        let tmpl = template(5);
        let cfg = SamplerConfig {
            mode: SamplerMode::Ode,
            n_steps: 1,
            eta: EtaSchedule::Constant(1.0),
            augment: false,
            ..SamplerConfig::default()
        };
        let mut rngs = SamplerRngs::from_seed(7, 0);
        let traj = ode_sample(&denoiser, &tmpl, &Condition::None, &cfg, &mut rngs).unwrap();
        let x0 = &traj.steps[0].x_t;
        for (xf, x0i) in traj.final_coords().iter().zip(x0) {
            let expected = *x0i + c;
            assert!(xf.dist(expected) < 1e-12);
        }
    }

    #[test]
    fn per_step_eta_schedule_is_recorded() {
        let mut etas = vec![1.0; 5];
        etas.extend(vec![1.5; 5]);
        let cfg = SamplerConfig {
            mode: SamplerMode::Ode,
            n_steps: 10,
            eta: EtaSchedule::PerStep(etas.clone()),
            noise: analytic_noise(16.0),
            augment: false,
            ..SamplerConfig::default()
        };
        let denoiser = gmm_denoiser(1.0);
        let tmpl = template(3);
        let mut rngs = SamplerRngs::from_seed(2, 0);
        let traj = ode_sample(&denoiser, &tmpl, &Condition::None, &cfg, &mut rngs).unwrap();
        let recorded: Vec<f64> = traj.steps.iter().map(|s| s.eta).collect();
        assert_eq!(recorded, etas);
        for c in traj.final_coords() {
            assert!(c.is_finite());
        }
    }

    #[test]
    fn eta_schedule_length_is_validated() {
        let cfg = SamplerConfig::<f64> {
            mode: SamplerMode::Ode,
            n_steps: 3,
            eta: EtaSchedule::PerStep(vec![1.0, 1.0]),
            ..SamplerConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn time_bookkeeping_ends_exactly_at_one() {
        for n in [1usize, 2, 3, 7, 200] {
            let cfg = SamplerConfig {
                mode: SamplerMode::Ode,
                n_steps: n,
                eta: EtaSchedule::Constant(1.0),
                noise: analytic_noise(16.0),
                augment: false,
                ..SamplerConfig::default()
            };
            let denoiser = gmm_denoiser(1.0);
            let tmpl = template(2);
            let mut rngs = SamplerRngs::from_seed(4, 0);
            let traj = ode_sample(&denoiser, &tmpl, &Condition::None, &cfg, &mut rngs).unwrap();
            assert_eq!(traj.steps.len(), n);
            assert_eq!(*traj.times.last().unwrap(), 1.0);
            for w in traj.times.windows(2) {
                assert!(w[1] > w[0]);
            }
        }
    }

    #[test]
    fn rotating_the_initial_state_rotates_the_trajectory() {
        // equivariant denoiser, augmentation off
        let denoiser = gmm_denoiser(1.0);
        let tmpl = template(5);
        let cfg = SamplerConfig {
            mode: SamplerMode::Ode,
            n_steps: 16,
            eta: EtaSchedule::Constant(1.0),
            noise: analytic_noise(16.0),
            augment: false,
            ..SamplerConfig::default()
        };
        let mut rng = RngStream::new(21, 9);
        let x0: Vec<Vec3<f64>> = (0..5).map(|_| rng.normal3::<f64>().scale(16.0)).collect();
        let rot = crate::geom::random_rotation::<f64>(&mut rng);
        let x0_rot: Vec<Vec3<f64>> = x0.iter().map(|&p| rot.mul_vec(p)).collect();

        let mut r1 = SamplerRngs::from_seed(0, 0);
        let mut r2 = SamplerRngs::from_seed(0, 0);
        let ta = sample_from_state(&denoiser, &tmpl, &Condition::None, &cfg, x0, &mut r1).unwrap();
        let tb =
            sample_from_state(&denoiser, &tmpl, &Condition::None, &cfg, x0_rot, &mut r2).unwrap();
        for (a, b) in ta.final_coords().iter().zip(tb.final_coords()) {
            let expected = rot.mul_vec(*a);
            assert!(expected.dist(*b) < 1e-9);
        }
    }

    #[test]
    fn nan_from_denoiser_aborts_with_step_index() {
        struct BadDenoiser;
        impl Denoiser<f64> for BadDenoiser {
            fn parameterization(&self) -> Parameterization {
                Parameterization::XPred
            }
            fn denoise(
                &self,
                coords: &[Vec3<f64>],
                time: StepTime<f64>,
                _cond: &Condition<f64>,
            ) -> crate::error::Result<Vec<Vec3<f64>>> {
                // goes bad mid-run
                if time.t > 0.4 {
                    Ok(vec![Vec3::new(f64::NAN, 0.0, 0.0); coords.len()])
                } else {
                    Ok(coords.to_vec())
                }
            }
        }
        let cfg = SamplerConfig {
            mode: SamplerMode::Ode,
            n_steps: 10,
            eta: EtaSchedule::Constant(1.0),
            noise: analytic_noise(16.0),
            augment: false,
            ..SamplerConfig::default()
        };
        let tmpl = template(2);
        let mut rngs = SamplerRngs::from_seed(5, 0);
        match ode_sample(&BadDenoiser, &tmpl, &Condition::None, &cfg, &mut rngs) {
            Err(Error::NonFinite { step, stage }) => {
                assert_eq!(step, 5);
                assert_eq!(stage, "denoise");
            }
            other => panic!("expected non-finite abort, got {other:?}"),
        }
    }

    #[test]
    fn batch_grid_is_deterministic_and_consistent() {
        let denoiser = gmm_denoiser(1.0);
        let tmpl = template(4);
        let cfg = SamplerConfig {
            mode: SamplerMode::Ode,
            n_steps: 4,
            eta: EtaSchedule::Constant(1.0),
            noise: analytic_noise(16.0),
            augment: true,
            ..SamplerConfig::default()
        };
        let grid =
            batch_sample(&denoiser, &tmpl, &Condition::None, &cfg, 42, 0, 5, 5).unwrap();
        assert_eq!(grid.len(), 5);
        assert!(grid.iter().all(|row| row.len() == 5));

        // all cells distinct
        let mut seen: Vec<Vec<u64>> = Vec::new();
        for row in &grid {
            for s in row {
                let b = bits(&s.coords);
                assert!(!seen.contains(&b), "duplicate cell");
                seen.push(b);
            }
        }

        // same master seed -> identical grid
        let grid2 =
            batch_sample(&denoiser, &tmpl, &Condition::None, &cfg, 42, 0, 5, 5).unwrap();
        for (r1, r2) in grid.iter().zip(&grid2) {
            for (a, b) in r1.iter().zip(r2) {
                assert_eq!(bits(&a.coords), bits(&b.coords));
            }
        }

        // 1x1 equals the direct call on the same streams
        let one = batch_sample(&denoiser, &tmpl, &Condition::None, &cfg, 42, 0, 1, 1).unwrap();
        let mut rngs = SamplerRngs::from_seed(42, 0);
        let direct = ode_sample(&denoiser, &tmpl, &Condition::None, &cfg, &mut rngs).unwrap();
        assert_eq!(bits(&one[0][0].coords), bits(direct.final_coords()));
    }

    #[test]
    fn trained_net_denoiser_runs_both_modes() {
        // residual net with random weights: both samplers run and stay
        // finite under churn
        let spec = NetSpec {
            parameterization: Parameterization::XPred,
            n_blocks: 2,
            hidden: 8,
            time_features: 4,
            cond_features: 4,
        };
        let net = ResidualNet::init(spec, 16.0, &mut RngStream::new(6, 0)).unwrap();
        let tmpl = template(4);
        let cfg = SamplerConfig {
            mode: SamplerMode::Af3,
            n_steps: 6,
            eta: EtaSchedule::Constant(1.5),
            churn: ChurnParams::default(),
            noise: NoiseLevelParams::default(),
            augment: true,
            ..SamplerConfig::default()
        };
        let mut rngs = SamplerRngs::from_seed(8, 0);
        let traj = af3_sample(&net, &tmpl, &Condition::None, &cfg, &mut rngs).unwrap();
        assert_eq!(traj.steps.len(), 6);
        // churned steps move the time label backward
        assert!(traj.steps.iter().any(|s| s.t_hat < s.t || s.sigma_hat > s.sigma));
    }

    #[test]
    fn jsonl_dump_has_one_line_per_step() {
        let denoiser = gmm_denoiser(1.0);
        let tmpl = template(3);
        let cfg = SamplerConfig {
            mode: SamplerMode::Ode,
            n_steps: 4,
            eta: EtaSchedule::Constant(1.0),
            noise: analytic_noise(16.0),
            augment: false,
            ..SamplerConfig::default()
        };
        let mut rngs = SamplerRngs::from_seed(9, 0);
        let traj = ode_sample(&denoiser, &tmpl, &Condition::None, &cfg, &mut rngs).unwrap();
        let mut buf = Vec::new();
        write_trajectory_jsonl(&traj, false, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        for line in text.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(v.get("x_t").is_none());
            assert!(v.get("rms_x").is_some());
        }
        let mut buf = Vec::new();
        write_trajectory_jsonl(&traj, true, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert!(v.get("x_t").is_some());
    }
}
