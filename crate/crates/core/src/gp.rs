//! Gaussian-process strength surrogate and Metropolis-Hastings search over
//! the unknown design variables.

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, NormStats, N_DESIGN, STRENGTH};
use crate::error::{Error, Result};
use crate::rng::{self, stream, Rng};

pub const JITTER_START: f64 = 1e-8;
pub const JITTER_MAX: f64 = 1e-4;

/// Isotropic RBF kernel `σ_f² exp(−‖a − b‖² / (2ℓ²))` plus observation noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub signal_var: f64,
    pub lengthscale: f64,
    pub noise_var: f64,
}

impl Kernel {
    #[inline]
    pub fn eval_sq(&self, d2: f64) -> f64 {
        self.signal_var * (-d2 / (2.0 * self.lengthscale * self.lengthscale)).exp()
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("signal_var", self.signal_var),
            ("lengthscale", self.lengthscale),
            ("noise_var", self.noise_var),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(name, format!("kernel hyperparameter must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Log-spaced hyperparameter grid searched by [`fit_gp`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpGrid {
    pub signal_var: Vec<f64>,
    pub lengthscale: Vec<f64>,
    pub noise_var: Vec<f64>,
}

impl Default for GpGrid {
    fn default() -> Self {
        GpGrid {
            signal_var: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            lengthscale: (0..9).map(|k| 0.1 * 2f64.powf(k as f64 / 2.0)).collect(),
            noise_var: vec![1e-3, 3e-3, 1e-2, 3e-2, 0.1, 0.3],
        }
    }
}

impl GpGrid {
    pub fn points(&self) -> Vec<Kernel> {
        let mut out = Vec::new();
        for &signal_var in &self.signal_var {
            for &lengthscale in &self.lengthscale {
                for &noise_var in &self.noise_var {
                    out.push(Kernel {
                        signal_var,
                        lengthscale,
                        noise_var,
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpModel {
    /// Training inputs, row-major `n x 8`.
    x: Vec<f64>,
    n: usize,
    /// Standardized targets.
    pub y: Vec<f64>,
    pub y_mean: f64,
    pub y_scale: f64,
    pub kernel: Kernel,
    pub jitter: f64,
    /// Lower Cholesky factor of `K + (σ_n² + jitter) I`, packed by rows.
    chol: Vec<f64>,
    /// `(K + (σ_n² + jitter) I)⁻¹ y`.
    alpha: Vec<f64>,
    pub log_marginal_likelihood: f64,
    /// Coordinate-wise mean of the training inputs.
    pub input_mean: [f64; N_DESIGN],
}

#[inline]
fn packed_row(i: usize) -> usize {
    i * (i + 1) / 2
}

/// Dot product with independent accumulators so the loop vectorises.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let chunks = n / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = 0.0;
    for k in chunks * 8..n {
        s += a[k] * b[k];
    }
    (acc[0] + acc[4]) + (acc[1] + acc[5]) + (acc[2] + acc[6]) + (acc[3] + acc[7]) + s
}

/// Lower Cholesky factor (packed by rows) of a dense symmetric `n x n`
/// matrix given row-major, or `None` when it is not positive definite.
pub fn cholesky_packed(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; packed_row(n)];
    for i in 0..n {
        let ri = packed_row(i);
        for j in 0..=i {
            let rj = packed_row(j);
            let s = a[i * n + j] - dot(&l[ri..ri + j], &l[rj..rj + j]);
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                l[ri + i] = s.sqrt();
            } else {
                l[ri + j] = s / l[rj + j];
            }
        }
    }
    Some(l)
}

/// Solves `L v = b` in place for a packed lower factor.
fn forward_solve(l: &[f64], b: &mut [f64]) {
    for i in 0..b.len() {
        let ri = packed_row(i);
        let s = b[i] - dot(&l[ri..ri + i], &b[..i]);
        b[i] = s / l[ri + i];
    }
}

/// Solves `Lᵀ v = b` in place for a packed lower factor.
fn backward_solve(l: &[f64], b: &mut [f64]) {
    let n = b.len();
    for i in (0..n).rev() {
        b[i] /= l[packed_row(i) + i];
        let bi = b[i];
        let ri = packed_row(i);
        for j in 0..i {
            b[j] -= l[ri + j] * bi;
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn pairwise_sq_dists(x: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..i {
            let v = sq_dist(&x[i * d..(i + 1) * d], &x[j * d..(j + 1) * d]);
            out[i * n + j] = v;
            out[j * n + i] = v;
        }
    }
    out
}

struct Factored {
    chol: Vec<f64>,
    alpha: Vec<f64>,
    jitter: f64,
    lml: f64,
}

fn factor(d2: &[f64], n: usize, y: &[f64], kernel: &Kernel) -> Result<Factored> {
    let mut jitter = JITTER_START;
    loop {
        let mut k: Vec<f64> = d2.iter().map(|&v| kernel.eval_sq(v)).collect();
        for i in 0..n {
            k[i * n + i] += kernel.noise_var + jitter;
        }
        if let Some(chol) = cholesky_packed(&k, n) {
            let mut alpha = y.to_vec();
            forward_solve(&chol, &mut alpha);
            let fit = dot(&alpha, &alpha);
            backward_solve(&chol, &mut alpha);
            let log_det: f64 = (0..n).map(|i| chol[packed_row(i) + i].ln()).sum();
            let lml = -0.5 * fit - log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
            return Ok(Factored {
                chol,
                alpha,
                jitter,
                lml,
            });
        }
        jitter *= 10.0;
        if jitter > JITTER_MAX * (1.0 + 1e-9) {
            return Err(Error::numeric(
                "gp cholesky",
                format!("kernel matrix is not positive definite even with jitter {JITTER_MAX:e}"),
            ));
        }
    }
}

impl GpModel {
    /// Fits with fixed hyperparameters on normalized inputs `x` (`n x 8`) and
    /// targets `y` (standardized internally).
    pub fn fit_with(x: ArrayView2<f64>, y: &[f64], kernel: Kernel) -> Result<Self> {
        Self::fit_grid(x, y, &[kernel])
    }

    /// Fits every candidate kernel and keeps the one with the largest log
    /// marginal likelihood (first wins on ties).
    pub fn fit_grid(x: ArrayView2<f64>, y: &[f64], kernels: &[Kernel]) -> Result<Self> {
        let n = x.nrows();
        if n == 0 || y.len() != n {
            return Err(Error::Contract(format!("gp fit: {n} inputs, {} targets", y.len())));
        }
        if x.ncols() != N_DESIGN {
            return Err(Error::Contract(format!("gp expects {N_DESIGN} input columns, got {}", x.ncols())));
        }
        if kernels.is_empty() {
            return Err(Error::config("gp_grid", "hyperparameter grid is empty"));
        }
        let xs: Vec<f64> = x.iter().copied().collect();
        let mean = y.iter().sum::<f64>() / n as f64;
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        let ys: Vec<f64> = y.iter().map(|v| (v - mean) / scale).collect();
        let d2 = pairwise_sq_dists(&xs, n, N_DESIGN);

        let mut best: Option<(Kernel, Factored)> = None;
        let mut last_err = None;
        for k in kernels {
            k.validate()?;
            match factor(&d2, n, &ys, k) {
                Ok(f) => {
                    if best.as_ref().is_none_or(|(_, b)| f.lml > b.lml) {
                        best = Some((*k, f));
                    }
                }
                Err(e) => last_err = Some(e),
            }
        }
        let (kernel, f) = best.ok_or_else(|| last_err.expect("some kernel was tried"))?;
        let input_mean = std::array::from_fn(|j| (0..n).map(|i| xs[i * N_DESIGN + j]).sum::<f64>() / n as f64);
        Ok(GpModel {
            x: xs,
            n,
            y: ys,
            y_mean: mean,
            y_scale: scale,
            kernel,
            jitter: f.jitter,
            chol: f.chol,
            alpha: f.alpha,
            log_marginal_likelihood: f.lml,
            input_mean,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn inputs(&self) -> Array2<f64> {
        Array2::from_shape_vec((self.n, N_DESIGN), self.x.clone()).expect("shape")
    }

    /// Dense lower Cholesky factor.
    pub fn cholesky(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.n, self.n), |(i, j)| if j <= i { self.chol[packed_row(i) + j] } else { 0.0 })
    }

    /// The matrix that was factored: `K + (σ_n² + jitter) I`.
    pub fn kernel_matrix(&self) -> Array2<f64> {
        let x = &self.x;
        Array2::from_shape_fn((self.n, self.n), |(i, j)| {
            let d2 = sq_dist(&x[i * N_DESIGN..(i + 1) * N_DESIGN], &x[j * N_DESIGN..(j + 1) * N_DESIGN]);
            self.kernel.eval_sq(d2) + if i == j { self.kernel.noise_var + self.jitter } else { 0.0 }
        })
    }

    pub fn to_standardized(&self, y: f64) -> f64 {
        (y - self.y_mean) / self.y_scale
    }

    pub fn from_standardized(&self, z: f64) -> f64 {
        z * self.y_scale + self.y_mean
    }

    /// Predictive mean and variance (standardized units) at one point.
    /// `scratch` must hold `n` values.
    pub fn predict_one(&self, point: &[f64; N_DESIGN], scratch: &mut [f64]) -> (f64, f64) {
        let k = &mut scratch[..self.n];
        for (i, ki) in k.iter_mut().enumerate() {
            *ki = self.kernel.eval_sq(sq_dist(&self.x[i * N_DESIGN..(i + 1) * N_DESIGN], point));
        }
        let mean = dot(k, &self.alpha);
        forward_solve(&self.chol, k);
        let var = self.kernel.signal_var - dot(k, k) + self.kernel.noise_var;
        (mean, var.max(f64::MIN_POSITIVE))
    }

    /// Row-wise predictive means and variances in standardized units.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
        gp_predict(self, x)
    }
}

pub fn gp_predict(g: &GpModel, x: ArrayView2<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
    if x.ncols() != N_DESIGN {
        return Err(Error::Contract(format!("gp expects {N_DESIGN} input columns, got {}", x.ncols())));
    }
    let mut scratch = vec![0.0; g.n];
    let mut means = Array1::zeros(x.nrows());
    let mut vars = Array1::zeros(x.nrows());
    for (i, row) in x.rows().into_iter().enumerate() {
        let p: [f64; N_DESIGN] = std::array::from_fn(|j| row[j]);
        let (m, v) = g.predict_one(&p, &mut scratch);
        means[i] = m;
        vars[i] = v;
    }
    Ok((means, vars))
}

/// Grid-searched GP on a normalized training split.
pub fn fit_gp(train: &Dataset, stats: &NormStats, grid: &GpGrid) -> Result<GpModel> {
    if train.is_empty() {
        return Err(Error::Contract("gp needs training rows".into()));
    }
    let data = stats.normalize_dataset(train);
    let x = data.slice(ndarray::s![.., ..N_DESIGN]);
    let y: Vec<f64> = data.column(STRENGTH).to_vec();
    GpModel::fit_grid(x, &y, &grid.points())
}

/// Log-likelihood over the unknown coordinates; the prior is uniform on the
/// unit cube and handled by the sampler.
pub trait Likelihood {
    fn dim(&self) -> usize;
    fn log_likelihood(&mut self, u: &[f64]) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MhConfig {
    pub budget: usize,
    pub burn_in: usize,
    pub proposal_std: f64,
    pub seed: u64,
}

impl MhConfig {
    /// Burn-in is `min(200, ⌊budget / 2⌋)`.
    pub fn new(budget: usize, proposal_std: f64, seed: u64) -> Result<Self> {
        if budget == 0 {
            return Err(Error::config("gp_budgets", "budget must be at least 1"));
        }
        if !(proposal_std > 0.0 && proposal_std.is_finite()) {
            return Err(Error::config("mh_proposal_std", format!("must be positive, got {proposal_std}")));
        }
        Ok(MhConfig {
            budget,
            burn_in: (budget / 2).min(200),
            proposal_std,
            seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSamples {
    /// Post-burn-in states over the unknown coordinates.
    pub chain: Vec<Vec<f64>>,
    pub acceptance_rate: f64,
}

impl PosteriorSamples {
    pub fn mean(&self) -> Vec<f64> {
        let d = self.chain.first().map_or(0, Vec::len);
        let n = self.chain.len() as f64;
        (0..d).map(|j| self.chain.iter().map(|s| s[j]).sum::<f64>() / n).collect()
    }
}

/// Random-walk Metropolis-Hastings under a uniform unit-cube prior. The
/// budget counts states including the initial one; proposals leaving the
/// cube are rejected without evaluating the likelihood.
pub fn metropolis_hastings<L: Likelihood>(
    target: &mut L,
    init: &[f64],
    cfg: &MhConfig,
    rng: &mut Rng,
) -> Result<PosteriorSamples> {
    let d = target.dim();
    if init.len() != d {
        return Err(Error::Contract(format!("initial state has {} coordinates, expected {d}", init.len())));
    }
    if init.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Contract("initial state lies outside the prior support".into()));
    }
    let mut current = init.to_vec();
    let mut current_ll = target.log_likelihood(&current);
    let mut proposal = vec![0.0; d];
    let mut chain = Vec::with_capacity(cfg.budget - cfg.burn_in);
    let mut accepted = 0usize;
    if cfg.burn_in == 0 {
        chain.push(current.clone());
    }
    for step in 1..cfg.budget {
        let mut inside = true;
        for j in 0..d {
            let e: f64 = StandardNormal.sample(rng);
            proposal[j] = current[j] + cfg.proposal_std * e;
            inside &= (0.0..=1.0).contains(&proposal[j]);
        }
        let u: f64 = rng.random();
        if inside {
            let ll = target.log_likelihood(&proposal);
            if u.ln() < ll - current_ll || (current_ll == f64::NEG_INFINITY && ll > f64::NEG_INFINITY) {
                current.copy_from_slice(&proposal);
                current_ll = ll;
                accepted += 1;
            }
        }
        if step >= cfg.burn_in {
            chain.push(current.clone());
        }
    }
    let proposals = cfg.budget - 1;
    Ok(PosteriorSamples {
        chain,
        acceptance_rate: if proposals == 0 { 0.0 } else { accepted as f64 / proposals as f64 },
    })
}

/// Gaussian likelihood `N(y*; μ(x), σ²(x))` of a target strength under the
/// GP, as a function of the unknown coordinates.
pub struct GpLikelihood<'a> {
    gp: &'a GpModel,
    template: [f64; N_DESIGN],
    unknown: Vec<usize>,
    target: f64,
    scratch: Vec<f64>,
}

impl<'a> GpLikelihood<'a> {
    /// `fixed` holds normalized values for the known coordinates; `target`
    /// is in standardized units.
    pub fn new(gp: &'a GpModel, fixed: &[Option<f64>; N_DESIGN], target: f64) -> Self {
        let template = std::array::from_fn(|j| fixed[j].unwrap_or(0.0));
        let unknown = (0..N_DESIGN).filter(|&j| fixed[j].is_none()).collect();
        GpLikelihood {
            gp,
            template,
            unknown,
            target,
            scratch: vec![0.0; gp.len()],
        }
    }
}

impl Likelihood for GpLikelihood<'_> {
    fn dim(&self) -> usize {
        self.unknown.len()
    }

    fn log_likelihood(&mut self, u: &[f64]) -> f64 {
        let mut p = self.template;
        for (k, &j) in self.unknown.iter().enumerate() {
            p[j] = u[k];
        }
        let (m, v) = self.gp.predict_one(&p, &mut self.scratch);
        let r = self.target - m;
        -0.5 * (2.0 * std::f64::consts::PI * v).ln() - 0.5 * r * r / v
    }
}

/// Posterior sampling of the unknown normalized coordinates given the fixed
/// ones and a standardized target. The chain starts at the training mean.
pub fn mh_infer(g: &GpModel, fixed: &[Option<f64>; N_DESIGN], target: f64, cfg: &MhConfig) -> Result<PosteriorSamples> {
    if fixed.iter().all(Option::is_some) {
        return Err(Error::query("fixed", "every variable is fixed; nothing to infer"));
    }
    let mut lik = GpLikelihood::new(g, fixed, target);
    let init: Vec<f64> = lik.unknown.iter().map(|&j| g.input_mean[j].clamp(0.0, 1.0)).collect();
    let mut rng = rng::derived_rng(cfg.seed, &[stream::MCMC]);
    metropolis_hastings(&mut lik, &init, cfg, &mut rng)
}

/// Completed normalized design: chain mean for unknowns, fixed values echoed.
pub fn posterior_mean_design(s: &PosteriorSamples, fixed: &[Option<f64>; N_DESIGN]) -> Result<[f64; N_DESIGN]> {
    if s.chain.is_empty() {
        return Err(Error::Contract("empty posterior chain".into()));
    }
    let mean = s.mean();
    let unknown: Vec<usize> = (0..N_DESIGN).filter(|&j| fixed[j].is_none()).collect();
    if mean.len() != unknown.len() {
        return Err(Error::Contract("chain dimension does not match the unknown variables".into()));
    }
    let mut out = [0.0; N_DESIGN];
    for j in 0..N_DESIGN {
        if let Some(v) = fixed[j] {
            out[j] = v;
        }
    }
    for (k, &j) in unknown.iter().enumerate() {
        out[j] = mean[k];
    }
    Ok(out)
}
