//! Trainable per-atom stacked-residual denoiser.
//!
//! Each atom is processed independently from (scaled coordinates,
//! sinusoidal time embedding, conditioning embedding). Residual blocks
//! `h <- h + W2 tanh(W1 h + b1) + b2` carry the depth, which is what the
//! input-side block pruning study removes. x-prediction backends wrap the
//! raw network in the standard preconditioning (skip, input and output
//! scalings as functions of the noise level), so the regression target
//! stays well-conditioned at every noise level.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::denoise::{v_to_x, Condition, Denoiser, Parameterization, Pathway, StepTime};
use crate::error::{Error, Result};
use crate::num::{real, Real};
use crate::rng::RngStream;
use crate::vec3::Vec3;

/// Architecture of the toy denoiser.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub parameterization: Parameterization,
    pub n_blocks: usize,
    pub hidden: usize,
    /// Sinusoidal time-embedding width (even).
    pub time_features: usize,
    /// Conditioning embedding width.
    pub cond_features: usize,
}

impl Default for NetSpec {
    fn default() -> Self {
        NetSpec {
            parameterization: Parameterization::XPred,
            n_blocks: 6,
            hidden: 24,
            time_features: 8,
            cond_features: 8,
        }
    }
}

impl NetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_blocks < 1 {
            return Err(Error::validation("need at least one residual block"));
        }
        if self.hidden < 1 || self.cond_features < 1 {
            return Err(Error::validation("widths must be at least 1"));
        }
        if self.time_features < 2 || self.time_features % 2 != 0 {
            return Err(Error::validation("time embedding width must be even and >= 2"));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        3 + self.time_features + self.cond_features
    }
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn random(rows: usize, cols: usize, scale: T, rng: &mut RngStream) -> Self {
        Mat {
            rows,
            cols,
            data: (0..rows * cols).map(|_| rng.normal::<T>() * scale).collect(),
        }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    /// out = A x
    pub fn matvec(&self, x: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let mut acc = T::zero();
            for (a, b) in row.iter().zip(x) {
                acc += *a * *b;
            }
            *o = acc;
        }
    }

    /// out += A^T x
    pub fn matvec_t_acc(&self, x: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (r, xr) in x.iter().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (o, a) in out.iter_mut().zip(row) {
                *o += *a * *xr;
            }
        }
    }

    /// self += u v^T
    pub fn acc_outer(&mut self, u: &[T], v: &[T]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for (r, ur) in u.iter().enumerate() {
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (cell, vc) in row.iter_mut().zip(v) {
                *cell += *ur * *vc;
            }
        }
    }

    /// self += other * scale
    pub fn axpy(&mut self, other: &Mat<T>, scale: T) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b * scale;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn vec_axpy<T: Real>(dst: &mut [T], src: &[T], scale: T) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += *b * scale;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualBlock<T> {
    pub w1: Mat<T>,
    pub b1: Vec<T>,
    pub w2: Mat<T>,
    pub b2: Vec<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CondMap<T> {
    pub w: Mat<T>,
    pub b: Vec<T>,
}

/// All trainable parameters. The trunk (input map, residual blocks,
/// output map) is shared between conditioning pathways; only the input
/// maps `cond_a` / `cond_b` are pathway-specific.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetParams<T> {
    pub w_in: Mat<T>,
    pub b_in: Vec<T>,
    pub blocks: Vec<ResidualBlock<T>>,
    pub w_out: Mat<T>,
    pub b_out: Vec<T>,
    pub cond_a: CondMap<T>,
    pub cond_b: CondMap<T>,
}

impl<T: Real> NetParams<T> {
    pub fn zeros(spec: &NetSpec) -> Self {
        let f = spec.feature_dim();
        let h = spec.hidden;
        let c = spec.cond_features;
        NetParams {
            w_in: Mat::zeros(h, f),
            b_in: vec![T::zero(); h],
            blocks: (0..spec.n_blocks)
                .map(|_| ResidualBlock {
                    w1: Mat::zeros(h, h),
                    b1: vec![T::zero(); h],
                    w2: Mat::zeros(h, h),
                    b2: vec![T::zero(); h],
                })
                .collect(),
            w_out: Mat::zeros(3, h),
            b_out: vec![T::zero(); 3],
            cond_a: CondMap {
                w: Mat::zeros(c, super::PATHWAY_A_DIM),
                b: vec![T::zero(); c],
            },
            cond_b: CondMap {
                w: Mat::zeros(c, super::PATHWAY_B_DIM),
                b: vec![T::zero(); c],
            },
        }
    }

    /// theta += grads * scale (the SGD update uses scale = -lr).
    pub fn axpy(&mut self, grads: &NetParams<T>, scale: T) {
        self.w_in.axpy(&grads.w_in, scale);
        vec_axpy(&mut self.b_in, &grads.b_in, scale);
        for (b, g) in self.blocks.iter_mut().zip(&grads.blocks) {
            b.w1.axpy(&g.w1, scale);
            vec_axpy(&mut b.b1, &g.b1, scale);
            b.w2.axpy(&g.w2, scale);
            vec_axpy(&mut b.b2, &g.b2, scale);
        }
        self.w_out.axpy(&grads.w_out, scale);
        vec_axpy(&mut self.b_out, &grads.b_out, scale);
        self.cond_a.w.axpy(&grads.cond_a.w, scale);
        vec_axpy(&mut self.cond_a.b, &grads.cond_a.b, scale);
        self.cond_b.w.axpy(&grads.cond_b.w, scale);
        vec_axpy(&mut self.cond_b.b, &grads.cond_b.b, scale);
    }

    pub fn is_finite(&self) -> bool {
        self.w_in.is_finite()
            && self.b_in.iter().all(|v| v.is_finite())
            && self.blocks.iter().all(|b| {
                b.w1.is_finite()
                    && b.w2.is_finite()
                    && b.b1.iter().all(|v| v.is_finite())
                    && b.b2.iter().all(|v| v.is_finite())
            })
            && self.w_out.is_finite()
            && self.b_out.iter().all(|v| v.is_finite())
            && self.cond_a.w.is_finite()
            && self.cond_b.w.is_finite()
    }

    /// Iterates over every parameter mutably; used by gradient checks.
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&mut T)) {
        for v in self.w_in.data.iter_mut().chain(self.b_in.iter_mut()) {
            f(v);
        }
        for b in &mut self.blocks {
            for v in b
                .w1
                .data
                .iter_mut()
                .chain(b.b1.iter_mut())
                .chain(b.w2.data.iter_mut())
                .chain(b.b2.iter_mut())
            {
                f(v);
            }
        }
        for v in self.w_out.data.iter_mut().chain(self.b_out.iter_mut()) {
            f(v);
        }
        for v in self.cond_a.w.data.iter_mut().chain(self.cond_a.b.iter_mut()) {
            f(v);
        }
        for v in self.cond_b.w.data.iter_mut().chain(self.cond_b.b.iter_mut()) {
            f(v);
        }
    }
}

/// The trainable denoiser: spec + data scale + parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualNet<T> {
    pub spec: NetSpec,
    pub sigma_data: T,
    /// Superpose the geometry pathway's canonical coordinates onto the
    /// noisy input before the input map. The rotation depends on the
    /// input, not the parameters, so gradients are unaffected.
    #[serde(default = "default_true")]
    pub align_condition: bool,
    pub params: NetParams<T>,
}

fn default_true() -> bool {
    true
}

const CHECKPOINT_FORMAT: &str = "fewstep-net";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint<T> {
    format: String,
    version: u32,
    net: ResidualNet<T>,
}

impl<T: Real> ResidualNet<T> {
    /// Random initialization. Residual branches start small so the net is
    /// near the preconditioned skip path; the output map starts small for
    /// the same reason.
    pub fn init(spec: NetSpec, sigma_data: T, rng: &mut RngStream) -> Result<Self> {
        spec.validate()?;
        if !(sigma_data > T::zero()) {
            return Err(Error::validation("sigma_data must be positive"));
        }
        let f = spec.feature_dim();
        let h = spec.hidden;
        let c = spec.cond_features;
        let s_in = real::<T>(1.0) / real::<T>(f as f64).sqrt();
        let s_h = real::<T>(1.0) / real::<T>(h as f64).sqrt();
        let s_res = real::<T>(0.2) / real::<T>(h as f64).sqrt();
        let s_out = real::<T>(0.5) / real::<T>(h as f64).sqrt();
        let params = NetParams {
            w_in: Mat::random(h, f, s_in, rng),
            b_in: vec![T::zero(); h],
            blocks: (0..spec.n_blocks)
                .map(|_| ResidualBlock {
                    w1: Mat::random(h, h, s_h, rng),
                    b1: vec![T::zero(); h],
                    w2: Mat::random(h, h, s_res, rng),
                    b2: vec![T::zero(); h],
                })
                .collect(),
            w_out: Mat::random(3, h, s_out, rng),
            b_out: vec![T::zero(); 3],
            cond_a: CondMap {
                w: Mat::random(c, super::PATHWAY_A_DIM, real::<T>(1.0 / (super::PATHWAY_A_DIM as f64).sqrt()), rng),
                b: vec![T::zero(); c],
            },
            cond_b: CondMap {
                w: Mat::random(c, super::PATHWAY_B_DIM, real::<T>(1.0 / (super::PATHWAY_B_DIM as f64).sqrt()), rng),
                b: vec![T::zero(); c],
            },
        };
        Ok(ResidualNet {
            spec,
            sigma_data,
            align_condition: true,
            params,
        })
    }

    /// Removes the `k` residual blocks nearest the input; remaining
    /// blocks keep their weights.
    pub fn prune_blocks(&self, k: usize) -> Result<Self> {
        if k >= self.spec.n_blocks {
            return Err(Error::validation(format!(
                "cannot prune {k} of {} blocks",
                self.spec.n_blocks
            )));
        }
        let mut pruned = self.clone();
        pruned.params.blocks.drain(0..k);
        pruned.spec.n_blocks -= k;
        Ok(pruned)
    }

    fn check_shapes(&self) -> Result<()> {
        self.spec.validate()?;
        let f = self.spec.feature_dim();
        let h = self.spec.hidden;
        let p = &self.params;
        let ok = p.w_in.rows == h
            && p.w_in.cols == f
            && p.b_in.len() == h
            && p.blocks.len() == self.spec.n_blocks
            && p.blocks.iter().all(|b| {
                b.w1.rows == h && b.w1.cols == h && b.w2.rows == h && b.w2.cols == h
                    && b.b1.len() == h && b.b2.len() == h
            })
            && p.w_out.rows == 3
            && p.w_out.cols == h
            && p.b_out.len() == 3
            && p.cond_a.w.rows == self.spec.cond_features
            && p.cond_a.w.cols == super::PATHWAY_A_DIM
            && p.cond_b.w.rows == self.spec.cond_features
            && p.cond_b.w.cols == super::PATHWAY_B_DIM;
        if !ok {
            return Err(Error::validation("parameter shapes do not match the spec"));
        }
        if !p.is_finite() {
            return Err(Error::validation("non-finite parameter"));
        }
        Ok(())
    }

    fn precond(&self, sigma: T) -> (T, T, T) {
        let sd = self.sigma_data;
        let denom = sigma * sigma + sd * sd;
        let c_skip = sd * sd / denom;
        let c_out = sigma * sd / denom.sqrt();
        let c_in = denom.sqrt().recip();
        (c_skip, c_out, c_in)
    }

    /// Scalar fed to the sinusoidal embedding.
    fn time_coord(&self, time: StepTime<T>) -> T {
        match self.spec.parameterization {
            Parameterization::XPred => {
                (time.sigma.max(real(1e-20)) / self.sigma_data).ln() * real(0.25)
            }
            Parameterization::VPred => time.t,
        }
    }

    fn time_embedding(&self, u: T, out: &mut [T]) {
        let half = self.spec.time_features / 2;
        let mut freq = T::one();
        for j in 0..half {
            let angle = u * freq;
            out[2 * j] = angle.sin();
            out[2 * j + 1] = angle.cos();
            let _ = j;
            freq *= real(2.0);
        }
    }

    fn cond_map(&self, pathway: Pathway) -> &CondMap<T> {
        match pathway {
            Pathway::A => &self.params.cond_a,
            Pathway::B => &self.params.cond_b,
        }
    }

    /// The condition features the input maps actually consume: pathway-A
    /// canonical geometry is superposed onto the (noisy) input, so
    /// conditioning stays pose-free while the prediction follows the
    /// input frame. The rotation depends only on the inputs, never the
    /// parameters.
    fn effective_condition(
        &self,
        coords: &[Vec3<T>],
        cond: &Condition<T>,
    ) -> Result<Option<(Pathway, Vec<Vec<T>>)>> {
        let n = coords.len();
        let cf = match cond {
            Condition::None => return Ok(None),
            Condition::Features(cf) => cf,
        };
        if cf.per_atom.len() != n {
            return Err(Error::validation(format!(
                "condition has {} atoms, coordinates have {n}",
                cf.per_atom.len()
            )));
        }
        let expect = cf.pathway.feature_dim();
        if cf.per_atom.iter().any(|a| a.len() != expect) {
            return Err(Error::validation("condition feature width mismatch"));
        }
        let mut per_atom = cf.per_atom.clone();
        if cf.pathway == Pathway::A && self.align_condition {
            let canon: Vec<Vec3<T>> = per_atom.iter().map(|a| Vec3([a[0], a[1], a[2]])).collect();
            let rot = crate::geom::rotation_onto(&canon, coords)?;
            for a in &mut per_atom {
                let r = rot.mul_vec(Vec3([a[0], a[1], a[2]]));
                a[0] = r[0];
                a[1] = r[1];
                a[2] = r[2];
            }
        }
        Ok(Some((cf.pathway, per_atom)))
    }

    /// Per-atom input features: [scaled coords, time embedding, cond
    /// embedding].
    fn build_features(
        &self,
        coords: &[Vec3<T>],
        time: StepTime<T>,
        effective_cond: Option<&(Pathway, Vec<Vec<T>>)>,
        c_in: T,
    ) -> Vec<Vec<T>> {
        let n = coords.len();
        let fdim = self.spec.feature_dim();
        let cdim = self.spec.cond_features;
        let u = self.time_coord(time);
        let mut temb = vec![T::zero(); self.spec.time_features];
        self.time_embedding(u, &mut temb);
        let mut features = Vec::with_capacity(n);
        for i in 0..n {
            let mut f = vec![T::zero(); fdim];
            for k in 0..3 {
                f[k] = coords[i][k] * c_in;
            }
            f[3..3 + temb.len()].copy_from_slice(&temb);
            if let Some((pathway, per_atom)) = effective_cond {
                let map = self.cond_map(*pathway);
                let mut emb = vec![T::zero(); cdim];
                map.w.matvec(&per_atom[i], &mut emb);
                for (e, b) in emb.iter_mut().zip(&map.b) {
                    *e += *b;
                }
                f[3 + temb.len()..].copy_from_slice(&emb);
            }
            features.push(f);
        }
        features
    }

    fn input_scale(&self, sigma: T) -> T {
        match self.spec.parameterization {
            Parameterization::XPred => self.precond(sigma).2,
            Parameterization::VPred => self.sigma_data.recip(),
        }
    }

    /// Forward pass. Returns the prediction in the net's native
    /// parameterization: x-hat for `XPred`, velocity for `VPred`.
    pub fn forward(
        &self,
        coords: &[Vec3<T>],
        time: StepTime<T>,
        cond: &Condition<T>,
    ) -> Result<Vec<Vec3<T>>> {
        self.check_shapes()?;
        let c_in = self.input_scale(time.sigma);
        let effective = self.effective_condition(coords, cond)?;
        let features = self.build_features(coords, time, effective.as_ref(), c_in);
        let mut out = Vec::with_capacity(coords.len());
        for (i, f) in features.iter().enumerate() {
            let y = self.trunk_forward(f, None);
            out.push(self.assemble_output(coords[i], time, y));
        }
        Ok(out)
    }

    fn assemble_output(&self, x: Vec3<T>, time: StepTime<T>, y: [T; 3]) -> Vec3<T> {
        match self.spec.parameterization {
            Parameterization::XPred => {
                let (c_skip, c_out, _) = self.precond(time.sigma);
                x.scale(c_skip) + Vec3(y).scale(c_out)
            }
            Parameterization::VPred => Vec3(y).scale(self.sigma_data),
        }
    }

    /// Trunk evaluation for one atom. With `tape` set, hidden states and
    /// activations are recorded for the backward pass.
    fn trunk_forward(&self, f: &[T], mut tape: Option<&mut AtomTape<T>>) -> [T; 3] {
        let h = self.spec.hidden;
        let mut state = vec![T::zero(); h];
        self.params.w_in.matvec(f, &mut state);
        for (s, b) in state.iter_mut().zip(&self.params.b_in) {
            *s += *b;
        }
        if let Some(t) = tape.as_deref_mut() {
            t.hidden.push(state.clone());
        }
        let mut pre = vec![T::zero(); h];
        for block in &self.params.blocks {
            block.w1.matvec(&state, &mut pre);
            for (p, b) in pre.iter_mut().zip(&block.b1) {
                *p += *b;
            }
            let act: Vec<T> = pre.iter().map(|v| v.tanh()).collect();
            let mut delta = vec![T::zero(); h];
            block.w2.matvec(&act, &mut delta);
            for ((s, d), b) in state.iter_mut().zip(&delta).zip(&block.b2) {
                *s += *d + *b;
            }
            if let Some(t) = tape.as_deref_mut() {
                t.acts.push(act);
                t.hidden.push(state.clone());
            }
        }
        let mut y = [T::zero(); 3];
        self.params.w_out.matvec(&state, &mut y);
        for (v, b) in y.iter_mut().zip(&self.params.b_out) {
            *v += *b;
        }
        y
    }

    /// Forward pass plus parameter gradients. `grad_out` is the loss
    /// gradient with respect to this net's native output (x-hat or
    /// velocity); gradients are accumulated into `grads`, which must have
    /// matching shapes.
    pub fn forward_backward(
        &self,
        coords: &[Vec3<T>],
        time: StepTime<T>,
        cond: &Condition<T>,
        grad_out: &[Vec3<T>],
        grads: &mut NetParams<T>,
    ) -> Result<Vec<Vec3<T>>> {
        self.check_shapes()?;
        if grad_out.len() != coords.len() {
            return Err(Error::validation("gradient length mismatch"));
        }
        let c_in = self.input_scale(time.sigma);
        let effective = self.effective_condition(coords, cond)?;
        let features = self.build_features(coords, time, effective.as_ref(), c_in);
        let h = self.spec.hidden;
        let out_scale = match self.spec.parameterization {
            Parameterization::XPred => self.precond(time.sigma).1,
            Parameterization::VPred => self.sigma_data,
        };

        let mut out = Vec::with_capacity(coords.len());
        for (i, f) in features.iter().enumerate() {
            let mut tape = AtomTape {
                hidden: Vec::with_capacity(self.spec.n_blocks + 1),
                acts: Vec::with_capacity(self.spec.n_blocks),
            };
            let y = self.trunk_forward(f, Some(&mut tape));
            out.push(self.assemble_output(coords[i], time, y));

            // dL/dy
            let g_y = [
                grad_out[i][0] * out_scale,
                grad_out[i][1] * out_scale,
                grad_out[i][2] * out_scale,
            ];
            let last = &tape.hidden[self.spec.n_blocks];
            grads.w_out.acc_outer(&g_y, last);
            for (g, v) in grads.b_out.iter_mut().zip(&g_y) {
                *g += *v;
            }
            let mut g_h = vec![T::zero(); h];
            self.params.w_out.matvec_t_acc(&g_y, &mut g_h);

            for b in (0..self.spec.n_blocks).rev() {
                let block = &self.params.blocks[b];
                let gb = &mut grads.blocks[b];
                let act = &tape.acts[b];
                let h_in = &tape.hidden[b];
                // residual branch: delta = W2 a + b2, a = tanh(W1 h_in + b1)
                let mut g_a = vec![T::zero(); h];
                block.w2.matvec_t_acc(&g_h, &mut g_a);
                gb.w2.acc_outer(&g_h, act);
                for (g, v) in gb.b2.iter_mut().zip(&g_h) {
                    *g += *v;
                }
                let g_pre: Vec<T> = g_a
                    .iter()
                    .zip(act)
                    .map(|(g, a)| *g * (T::one() - *a * *a))
                    .collect();
                gb.w1.acc_outer(&g_pre, h_in);
                for (g, v) in gb.b1.iter_mut().zip(&g_pre) {
                    *g += *v;
                }
                // skip path plus branch input
                block.w1.matvec_t_acc(&g_pre, &mut g_h);
            }

            grads.w_in.acc_outer(&g_h, f);
            for (g, v) in grads.b_in.iter_mut().zip(&g_h) {
                *g += *v;
            }

            if let Some((pathway, per_atom)) = effective.as_ref() {
                // chain through the pathway input map
                let mut g_f = vec![T::zero(); self.spec.feature_dim()];
                self.params.w_in.matvec_t_acc(&g_h, &mut g_f);
                let g_emb = &g_f[3 + self.spec.time_features..];
                let gmap = match pathway {
                    Pathway::A => &mut grads.cond_a,
                    Pathway::B => &mut grads.cond_b,
                };
                gmap.w.acc_outer(g_emb, &per_atom[i]);
                for (g, v) in gmap.b.iter_mut().zip(g_emb) {
                    *g += *v;
                }
            }
        }
        Ok(out)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let file = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            net: self.clone(),
        };
        let text = serde_json::to_string_pretty(&file)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_checkpoint_str(&text)
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Self> {
        let file: Checkpoint<T> = serde_json::from_str(text)?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(Error::validation(format!(
                "not a {CHECKPOINT_FORMAT} checkpoint (format `{}`)",
                file.format
            )));
        }
        if file.version != CHECKPOINT_VERSION {
            return Err(Error::validation(format!(
                "unsupported checkpoint version {}",
                file.version
            )));
        }
        file.net.check_shapes()?;
        Ok(file.net)
    }

    pub fn to_checkpoint_string(&self) -> Result<String> {
        let file = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            net: self.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }
}

struct AtomTape<T> {
    hidden: Vec<Vec<T>>,
    acts: Vec<Vec<T>>,
}

impl<T: Real> Denoiser<T> for ResidualNet<T> {
    fn parameterization(&self) -> Parameterization {
        self.spec.parameterization
    }

    fn denoise(
        &self,
        coords: &[Vec3<T>],
        time: StepTime<T>,
        cond: &Condition<T>,
    ) -> Result<Vec<Vec3<T>>> {
        match self.spec.parameterization {
            Parameterization::XPred => self.forward(coords, time, cond),
            Parameterization::VPred => {
                if time.t >= T::one() {
                    return Err(Error::domain("velocity backend undefined at t = 1"));
                }
                let v = self.forward(coords, time, cond)?;
                v_to_x(&v, coords, time.t)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoise::condition_features;
    use crate::geom::{gen_toy, ToyKind, ToySpec};

    fn small_spec(p: Parameterization) -> NetSpec {
        NetSpec {
            parameterization: p,
            n_blocks: 3,
            hidden: 8,
            time_features: 4,
            cond_features: 4,
        }
    }

    fn toy_structure(seed: u64) -> crate::geom::Structure<f64> {
        let spec = ToySpec {
            kind: ToyKind::PolymerChain,
            atoms: 5,
            n_chains: 1,
            bond_length: 1.5,
            gmm: None,
        };
        gen_toy(&spec, &mut RngStream::new(seed, 0)).unwrap()
    }

    #[test]
    fn zero_weights_reduce_to_skip_at_low_noise() {
        let spec = small_spec(Parameterization::XPred);
        let net = ResidualNet {
            spec,
            sigma_data: 16.0,
            align_condition: true,
            params: NetParams::zeros(&spec),
        };
        let x = vec![Vec3::new(1.0, -2.0, 3.0)];
        for sigma in [1.0, 0.1, 1e-3, 1e-6] {
            let t = StepTime { t: 0.9, sigma };
            let out = net.forward(&x, t, &Condition::None).unwrap();
            let c_skip = 16.0f64.powi(2) / (sigma * sigma + 256.0);
            for k in 0..3 {
                assert!((out[0][k] - c_skip * x[0][k]).abs() < 1e-12);
            }
        }
        // sigma -> 0 limit: output -> input exactly at sigma = 0
        let out = net
            .forward(&x, StepTime { t: 1.0, sigma: 0.0 }, &Condition::None)
            .unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn forward_is_deterministic_bitwise() {
        let spec = small_spec(Parameterization::XPred);
        let net = ResidualNet::init(spec, 16.0, &mut RngStream::new(4, 0)).unwrap();
        let s = toy_structure(1);
        let cond = condition_features(&s, Pathway::A);
        let time = StepTime { t: 0.4, sigma: 2.0 };
        let a = net.forward(&s.coords, time, &cond).unwrap();
        let b = net.forward(&s.coords, time, &cond).unwrap();
        for (x, y) in a.iter().zip(&b) {
            for k in 0..3 {
                assert_eq!(x[k].to_bits(), y[k].to_bits());
            }
        }
    }

    /// Central finite differences over individual weights validate the
    /// hand-rolled backward pass.
    #[test]
    fn weight_gradients_match_finite_differences() {
        for p in [Parameterization::XPred, Parameterization::VPred] {
            let spec = small_spec(p);
            let net = ResidualNet::init(spec, 4.0, &mut RngStream::new(9, 0)).unwrap();
            let s = toy_structure(2);
            let cond = condition_features(&s, Pathway::A);
            let time = StepTime { t: 0.3, sigma: 1.7 };
            // random projection makes the output scalar
            let mut rng = RngStream::new(10, 0);
            let proj: Vec<Vec3<f64>> = (0..s.n_atoms()).map(|_| rng.normal3()).collect();

            let mut grads = NetParams::zeros(&spec);
            net.forward_backward(&s.coords, time, &cond, &proj, &mut grads)
                .unwrap();

            let scalar = |net: &ResidualNet<f64>| -> f64 {
                let out = net.forward(&s.coords, time, &cond).unwrap();
                out.iter().zip(&proj).map(|(o, p)| o.dot(*p)).sum()
            };

            // spot check a spread of parameters via finite differences
            let mut flat_grads = Vec::new();
            grads.for_each_param_mut(|v| flat_grads.push(*v));
            let n_params = flat_grads.len();
            let h = 1e-4;
            let mut checked = 0usize;
            for idx in (0..n_params).step_by(n_params / 60 + 1) {
                let mut plus = net.clone();
                let mut minus = net.clone();
                let mut k = 0usize;
                plus.params.for_each_param_mut(|v| {
                    if k == idx {
                        *v += h;
                    }
                    k += 1;
                });
                k = 0;
                minus.params.for_each_param_mut(|v| {
                    if k == idx {
                        *v -= h;
                    }
                    k += 1;
                });
                let fd = (scalar(&plus) - scalar(&minus)) / (2.0 * h);
                let an = flat_grads[idx];
                let denom = fd.abs().max(1e-6);
                assert!(
                    (an - fd).abs() / denom < 1e-5,
                    "{p:?} param {idx}: analytic {an} vs fd {fd}"
                );
                checked += 1;
            }
            assert!(checked >= 50);
        }
    }

    #[test]
    fn pruning_composes_and_validates() {
        let spec = small_spec(Parameterization::XPred);
        let net = ResidualNet::init(spec, 16.0, &mut RngStream::new(11, 0)).unwrap();
        let a = net.prune_blocks(1).unwrap().prune_blocks(1).unwrap();
        let b = net.prune_blocks(2).unwrap();
        assert_eq!(a, b);
        assert!(net.prune_blocks(3).is_err());
        assert_eq!(net.prune_blocks(0).unwrap(), net);
    }

    #[test]
    fn zero_residual_blocks_make_pruning_a_no_op() {
        let spec = small_spec(Parameterization::XPred);
        let mut net = ResidualNet::init(spec, 16.0, &mut RngStream::new(12, 0)).unwrap();
        for b in &mut net.params.blocks {
            b.w2 = Mat::zeros(spec.hidden, spec.hidden);
            b.b2 = vec![0.0; spec.hidden];
        }
        let s = toy_structure(3);
        let time = StepTime { t: 0.2, sigma: 3.0 };
        let full = net.forward(&s.coords, time, &Condition::None).unwrap();
        for k in 1..spec.n_blocks {
            let pruned = net.prune_blocks(k).unwrap();
            let out = pruned.forward(&s.coords, time, &Condition::None).unwrap();
            for (x, y) in full.iter().zip(&out) {
                for c in 0..3 {
                    assert_eq!(x[c].to_bits(), y[c].to_bits());
                }
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let spec = small_spec(Parameterization::VPred);
        let net = ResidualNet::init(spec, 16.0, &mut RngStream::new(13, 0)).unwrap();
        let text = net.to_checkpoint_string().unwrap();
        let back = ResidualNet::<f64>::from_checkpoint_str(&text).unwrap();
        assert_eq!(net, back);
    }

    #[test]
    fn checkpoint_rejects_wrong_format() {
        assert!(ResidualNet::<f64>::from_checkpoint_str("{\"format\":\"x\",\"version\":1,\"net\":null}").is_err());
    }

    #[test]
    fn condition_shape_mismatch_is_rejected() {
        let spec = small_spec(Parameterization::XPred);
        let net = ResidualNet::init(spec, 16.0, &mut RngStream::new(14, 0)).unwrap();
        let s = toy_structure(4);
        let other = toy_structure(5);
        let mut cond = condition_features(&other, Pathway::A);
        if let Condition::Features(f) = &mut cond {
            f.per_atom.pop();
        }
        let time = StepTime { t: 0.5, sigma: 1.0 };
        assert!(net.forward(&s.coords, time, &cond).is_err());
    }
}
