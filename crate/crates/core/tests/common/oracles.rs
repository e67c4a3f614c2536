//! Independent oracles: brute-force metrics, dense-solve GP posterior and
//! a conjugate linear-Gaussian posterior for the sampler.

use mixinv::eval::{compute_metrics, Units};
use mixinv::gp::{metropolis_hastings, GpModel, Kernel, Likelihood, MhConfig};
use mixinv::rng::rng_from_seed;
use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};
use rand::Rng as _;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

/// Largest absolute gap between `compute_metrics` and a direct evaluation
/// of the textbook formulas on one random pair of vectors.
pub fn metrics_gap(seed: u64) -> f64 {
    let mut r = rng_from_seed(seed);
    let m = r.random_range(2..200);
    let y: Vec<f64> = (0..m).map(|_| r.random_range(-5.0..5.0)).collect();
    let p: Vec<f64> = (0..m).map(|_| r.random_range(-5.0..5.0)).collect();
    let got = compute_metrics(Array1::from(y.clone()).view(), Array1::from(p.clone()).view(), Units::Normalized).unwrap();
    let mut abs = 0.0;
    let mut sq = 0.0;
    let mut tot = 0.0;
    let ybar = y.iter().sum::<f64>() / m as f64;
    for i in 0..m {
        abs += (y[i] - p[i]).abs();
        sq += (y[i] - p[i]).powi(2);
        tot += (y[i] - ybar).powi(2);
    }
    let mae = abs / m as f64;
    let mse = sq / m as f64;
    let r2 = 1.0 - sq / tot;
    (got.mae - mae).abs().max((got.mse - mse).abs()).max((got.r2 - r2).abs())
}

/// Largest absolute gap between the packed-Cholesky posterior and a
/// dense LU solve on a random toy problem with `n ≤ 20` points.
pub fn gp_gap(seed: u64) -> f64 {
    let mut r = rng_from_seed(seed);
    let n = r.random_range(1..=20);
    let x = Array2::from_shape_simple_fn((n, 8), || r.random_range(0.0..1.0));
    let y: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
    let kernel = Kernel {
        signal_var: r.random_range(0.1..3.0),
        lengthscale: r.random_range(0.2..2.0),
        noise_var: r.random_range(1e-4..0.5),
    };
    let gp = GpModel::fit_with(x.view(), &y, kernel).unwrap();
    let k = |a: &[f64], b: &[f64]| {
        let d2: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
        kernel.signal_var * (-d2 / (2.0 * kernel.lengthscale * kernel.lengthscale)).exp()
    };
    let rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut big = DMatrix::from_fn(n, n, |i, j| k(&rows[i], &rows[j]));
    for i in 0..n {
        big[(i, i)] += kernel.noise_var + gp.jitter;
    }
    let lu = big.lu();
    let ys = DVector::from_vec(gp.y.clone());
    let weights = lu.solve(&ys).unwrap();
    let queries = Array2::from_shape_simple_fn((10, 8), || r.random_range(-0.5..1.5));
    let (means, vars) = gp.predict(queries.view()).unwrap();
    let mut gap = 0.0_f64;
    for (q, query) in queries.rows().into_iter().enumerate() {
        let query = query.to_vec();
        let ks = DVector::from_fn(n, |i, _| k(&rows[i], &query));
        let mean = ks.dot(&weights);
        let var = kernel.signal_var - ks.dot(&lu.solve(&ks).unwrap()) + kernel.noise_var;
        gap = gap.max((means[q] - mean).abs()).max((vars[q] - var).abs());
    }
    gap
}

/// `y* = a·u + ε`, `ε ~ N(0, σ²)`: with a uniform prior on `[0, 1]` the
/// posterior is `N(y*/a, σ²/a²)` truncated to the unit interval.
pub struct LinearGaussian {
    pub a: f64,
    pub sigma: f64,
    pub y: f64,
}

impl Likelihood for LinearGaussian {
    fn dim(&self) -> usize {
        1
    }

    fn log_likelihood(&mut self, u: &[f64]) -> f64 {
        let r = self.y - self.a * u[0];
        -0.5 * r * r / (self.sigma * self.sigma)
    }
}

impl LinearGaussian {
    fn untruncated(&self) -> (f64, f64) {
        (self.y / self.a, self.sigma / self.a)
    }

    pub fn posterior_mean(&self) -> f64 {
        let (mu, s) = self.untruncated();
        let std = Normal::standard();
        let (lo, hi) = ((0.0 - mu) / s, (1.0 - mu) / s);
        mu + s * (std.pdf(lo) - std.pdf(hi)) / (std.cdf(hi) - std.cdf(lo))
    }

    pub fn posterior_cdf(&self, u: f64) -> f64 {
        let (mu, s) = self.untruncated();
        let n = Normal::new(mu, s).unwrap();
        let (c0, c1) = (n.cdf(0.0), n.cdf(1.0));
        ((n.cdf(u.clamp(0.0, 1.0)) - c0) / (c1 - c0)).clamp(0.0, 1.0)
    }
}

pub struct ConjugateRun {
    pub chain_mean: f64,
    pub analytic_mean: f64,
    /// Batch-means Monte-Carlo standard error of the chain mean.
    pub mcse: f64,
    /// Kolmogorov–Smirnov distance between the chain and the posterior.
    pub ks: f64,
    pub acceptance_rate: f64,
}

pub fn conjugate_run(model: &mut LinearGaussian, budget: usize, proposal_std: f64, seed: u64) -> ConjugateRun {
    let cfg = MhConfig::new(budget, proposal_std, seed).unwrap();
    let init = [0.5];
    let s = metropolis_hastings(model, &init, &cfg, &mut rng_from_seed(seed)).unwrap();
    let xs: Vec<f64> = s.chain.iter().map(|v| v[0]).collect();
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let batches = 100;
    let size = n / batches;
    let bmeans: Vec<f64> = (0..batches)
        .map(|b| xs[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let bbar = bmeans.iter().sum::<f64>() / batches as f64;
    let bvar = bmeans.iter().map(|m| (m - bbar).powi(2)).sum::<f64>() / (batches - 1) as f64;
    let mut sorted = xs.clone();
    sorted.sort_by(f64::total_cmp);
    let ks = sorted
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = model.posterior_cdf(v);
            (f - i as f64 / n as f64).abs().max((f - (i + 1) as f64 / n as f64).abs())
        })
        .fold(0.0, f64::max);
    ConjugateRun {
        chain_mean: mean,
        analytic_mean: model.posterior_mean(),
        mcse: (bvar / batches as f64).sqrt(),
        ks,
        acceptance_rate: s.acceptance_rate,
    }
}
