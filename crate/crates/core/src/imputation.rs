//! Denoising autoencoder family that fills masked design variables from the
//! observed ones, the target strength and (for the cooperative models) the
//! mask itself.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{MaskMatrix, NormStats, N_DESIGN};
use crate::error::{Error, Result};
use crate::nn::MlpParams;
use crate::rng::{self, stream, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Dae,
    Dvae,
    Dwae,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Dae, Variant::Dvae, Variant::Dwae];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Dae => "dae",
            Variant::Dvae => "dvae",
            Variant::Dwae => "dwae",
        }
    }

    pub fn is_generative(self) -> bool {
        self != Variant::Dae
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dae" => Ok(Variant::Dae),
            "dvae" => Ok(Variant::Dvae),
            "dwae" => Ok(Variant::Dwae),
            other => Err(Error::config("variant", format!("unknown variant `{other}`"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputerArch {
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub latent_dim: usize,
}

impl Default for ImputerArch {
    fn default() -> Self {
        ImputerArch {
            encoder_hidden: vec![64, 64],
            decoder_hidden: vec![64, 64],
            latent_dim: 16,
        }
    }
}

/// Encoder/decoder pair plus the switches that separate the cooperative
/// imputer from the standalone baselines (`uses_mask`, `clips`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputerModel {
    pub variant: Variant,
    pub encoder: MlpParams,
    pub decoder: MlpParams,
    pub latent_dim: usize,
    pub beta: f64,
    pub bandwidth: f64,
    pub uses_mask: bool,
    pub clips: bool,
    pub norm: NormStats,
}

/// Latent codes for a batch; `mu`/`logvar`/`eps` are set for the DVAE only.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBatch {
    pub z: Array2<f64>,
    pub mu: Option<Array2<f64>>,
    pub logvar: Option<Array2<f64>>,
    pub eps: Option<Array2<f64>>,
}

pub fn standard_normal_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

impl ImputerModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        variant: Variant,
        arch: &ImputerArch,
        beta: f64,
        bandwidth: f64,
        uses_mask: bool,
        clips: bool,
        norm: NormStats,
        seed: u64,
    ) -> Result<Self> {
        if arch.latent_dim == 0 {
            return Err(Error::config("latent_dim", "must be positive"));
        }
        let beta = if variant == Variant::Dae { 0.0 } else { beta };
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::config("beta", format!("must be finite and >= 0, got {beta}")));
        }
        if variant == Variant::Dwae && !(bandwidth > 0.0) {
            return Err(Error::config("mmd_bandwidth", "must be positive"));
        }
        let input = Self::input_width_for(uses_mask);
        let enc_out = match variant {
            Variant::Dvae => 2 * arch.latent_dim,
            _ => arch.latent_dim,
        };
        let mut enc_sizes = vec![input];
        enc_sizes.extend(&arch.encoder_hidden);
        enc_sizes.push(enc_out);
        let mut dec_sizes = vec![arch.latent_dim];
        dec_sizes.extend(&arch.decoder_hidden);
        dec_sizes.push(N_DESIGN);
        Ok(ImputerModel {
            variant,
            encoder: MlpParams::init(&enc_sizes, rng::derive_seed(seed, &[1]))?,
            decoder: MlpParams::init(&dec_sizes, rng::derive_seed(seed, &[2]))?,
            latent_dim: arch.latent_dim,
            beta,
            bandwidth,
            uses_mask,
            clips,
            norm,
        })
    }

    fn input_width_for(uses_mask: bool) -> usize {
        N_DESIGN + 1 + if uses_mask { N_DESIGN } else { 0 }
    }

    /// 17 with the mask bits, 9 without.
    pub fn input_width(&self) -> usize {
        Self::input_width_for(self.uses_mask)
    }

    /// Lower/upper clipping bounds per design variable in normalized space.
    pub fn clip_bounds(&self) -> ([f64; N_DESIGN], [f64; N_DESIGN]) {
        let hi = std::array::from_fn(|j| if self.norm.max[j] > self.norm.min[j] { 1.0 } else { 0.0 });
        ([0.0; N_DESIGN], hi)
    }

    /// `DC ⊕ y ⊕ MM` (or `DC ⊕ y` when the mask is withheld).
    pub fn assemble_input(&self, dc: ArrayView2<f64>, mm: &MaskMatrix, target: ArrayView1<f64>) -> Result<Array2<f64>> {
        let n = dc.nrows();
        if dc.ncols() != N_DESIGN || target.len() != n || mm.nrows() != n {
            return Err(Error::Contract(format!(
                "imputer input: corrupted {}x{}, target {}, mask {} rows",
                dc.nrows(),
                dc.ncols(),
                target.len(),
                mm.nrows()
            )));
        }
        let y = target.insert_axis(Axis(1));
        let parts = if self.uses_mask {
            vec![dc, y, mm.matrix().view()]
        } else {
            vec![dc, y]
        };
        Ok(concatenate(Axis(1), &parts).expect("row counts checked"))
    }

    /// Maps encoder output to latent codes; `eps` drives the DVAE
    /// reparameterisation `z = μ + σ ⊙ ε`.
    pub fn latent_from_encoding(&self, enc: Array2<f64>, eps: Option<Array2<f64>>) -> Result<LatentBatch> {
        match self.variant {
            Variant::Dvae => {
                let l = self.latent_dim;
                let mu = enc.slice(s![.., ..l]).to_owned();
                let logvar = enc.slice(s![.., l..]).to_owned();
                let eps = eps.ok_or_else(|| Error::Contract("dvae encoding needs noise".into()))?;
                if eps.dim() != mu.dim() {
                    return Err(Error::Contract("noise shape does not match latent".into()));
                }
                let z = &mu + &(logvar.mapv(|v| (0.5 * v).exp()) * &eps);
                Ok(LatentBatch {
                    z,
                    mu: Some(mu),
                    logvar: Some(logvar),
                    eps: Some(eps),
                })
            }
            _ => Ok(LatentBatch {
                z: enc,
                mu: None,
                logvar: None,
                eps: None,
            }),
        }
    }

    pub fn encode(&self, dc: ArrayView2<f64>, mm: &MaskMatrix, target: ArrayView1<f64>, seed: u64) -> Result<LatentBatch> {
        let input = self.assemble_input(dc, mm, target)?;
        let enc = self.encoder.forward(input.view())?;
        let eps = (self.variant == Variant::Dvae).then(|| {
            let mut r = rng::derived_rng(seed, &[stream::NOISE]);
            standard_normal_matrix(dc.nrows(), self.latent_dim, &mut r)
        });
        self.latent_from_encoding(enc, eps)
    }

    /// Elementwise `min(max(x, X_min), X_max)`, or the identity when the
    /// model does not clip.
    pub fn clip(&self, raw: &Array2<f64>) -> Array2<f64> {
        if !self.clips {
            return raw.clone();
        }
        let (lo, hi) = self.clip_bounds();
        let mut out = raw.clone();
        for mut row in out.axis_iter_mut(Axis(0)) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = v.max(lo[j]).min(hi[j]);
            }
        }
        out
    }

    pub fn decode_and_clip(&self, latent: &LatentBatch) -> Result<Array2<f64>> {
        if latent.z.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("decode", "non-finite latent"));
        }
        Ok(self.clip(&self.decoder.forward(latent.z.view())?))
    }

    /// One-pass completion of a batch: corrupted designs `dc` (`n x 8`,
    /// already zeroed where masked), mask, normalized target strength.
    pub fn impute(&self, dc: ArrayView2<f64>, mm: &MaskMatrix, target: ArrayView1<f64>, seed: u64) -> Result<Array2<f64>> {
        let latent = self.encode(dc, mm, target, seed)?;
        let x_hat = self.decode_and_clip(&latent)?;
        merge(x_hat.view(), dc, mm)
    }
}

/// `X' = (1 - MM) ⊙ X̂ + DC`.
pub fn merge(x_hat: ArrayView2<f64>, dc: ArrayView2<f64>, mm: &MaskMatrix) -> Result<Array2<f64>> {
    let (n, d) = x_hat.dim();
    if dc.nrows() != n || dc.ncols() < N_DESIGN || d != N_DESIGN || mm.nrows() != n {
        return Err(Error::Contract(format!(
            "merge: reconstruction {n}x{d}, corrupted {}x{}, mask {} rows",
            dc.nrows(),
            dc.ncols(),
            mm.nrows()
        )));
    }
    let m = mm.matrix();
    Ok(Array2::from_shape_fn((n, N_DESIGN), |(i, j)| {
        (1.0 - m[[i, j]]) * x_hat[[i, j]] + dc[[i, j]]
    }))
}

/// Mean squared error over every design entry of the batch.
pub fn reconstruction_loss(x_merged: ArrayView2<f64>, x: ArrayView2<f64>) -> f64 {
    let n = x_merged.len() as f64;
    x_merged.iter().zip(x.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n
}

/// Mean squared error over masked entries only (zero when nothing is masked).
pub fn masked_reconstruction_loss(x_merged: ArrayView2<f64>, x: ArrayView2<f64>, mm: &MaskMatrix) -> f64 {
    let m = mm.matrix();
    let count = m.iter().filter(|&&v| v == 0.0).count();
    if count == 0 {
        return 0.0;
    }
    ndarray::Zip::from(x_merged)
        .and(x)
        .and(m)
        .fold(0.0, |acc, a, b, &o| acc + (1.0 - o) * (a - b) * (a - b))
        / count as f64
}

/// Batch mean of `½ Σ_j (μ² + σ² − log σ² − 1)`: KL of `N(μ, σ²)` from the
/// standard normal.
pub fn kl_term(mu: ArrayView2<f64>, logvar: ArrayView2<f64>) -> f64 {
    let b = mu.nrows() as f64;
    ndarray::Zip::from(mu)
        .and(logvar)
        .fold(0.0, |acc, &m, &lv| acc + 0.5 * (m * m + lv.exp() - lv - 1.0))
        / b
}

/// Gradients of [`kl_term`] with respect to `μ` and `log σ²`.
pub fn kl_grad(mu: ArrayView2<f64>, logvar: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
    let b = mu.nrows() as f64;
    (mu.mapv(|m| m / b), logvar.mapv(|lv| 0.5 * (lv.exp() - 1.0) / b))
}

fn rbf(a: ArrayView1<f64>, b: ArrayView1<f64>, bandwidth: f64) -> f64 {
    let d2: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    (-d2 / (2.0 * bandwidth * bandwidth)).exp()
}

fn check_mmd_inputs(z: ArrayView2<f64>, prior: ArrayView2<f64>, min_rows: usize) -> Result<()> {
    if z.nrows() < min_rows || prior.nrows() < min_rows {
        return Err(Error::Contract(format!(
            "MMD needs at least {min_rows} samples per batch, got {} and {}",
            z.nrows(),
            prior.nrows()
        )));
    }
    if z.ncols() != prior.ncols() {
        return Err(Error::Contract("MMD batches differ in dimension".into()));
    }
    Ok(())
}

/// Unbiased MMD² with an RBF kernel, excluding the within-batch diagonal.
pub fn mmd_term(z: ArrayView2<f64>, prior: ArrayView2<f64>, bandwidth: f64) -> Result<f64> {
    check_mmd_inputs(z, prior, 2)?;
    let (n, m) = (z.nrows(), prior.nrows());
    let within = |x: ArrayView2<f64>| {
        let k = x.nrows();
        let mut s = 0.0;
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    s += rbf(x.row(i), x.row(j), bandwidth);
                }
            }
        }
        s / (k * (k - 1)) as f64
    };
    let mut cross = 0.0;
    for i in 0..n {
        for j in 0..m {
            cross += rbf(z.row(i), prior.row(j), bandwidth);
        }
    }
    Ok(within(z) + within(prior) - 2.0 * cross / (n * m) as f64)
}

/// Biased (full-sum) MMD², which is a squared RKHS norm and never negative.
pub fn mmd_biased(z: ArrayView2<f64>, prior: ArrayView2<f64>, bandwidth: f64) -> Result<f64> {
    check_mmd_inputs(z, prior, 1)?;
    let mean_k = |a: ArrayView2<f64>, b: ArrayView2<f64>| {
        let mut s = 0.0;
        for r in a.rows() {
            for q in b.rows() {
                s += rbf(r, q, bandwidth);
            }
        }
        s / (a.nrows() * b.nrows()) as f64
    };
    Ok(mean_k(z, z) + mean_k(prior, prior) - 2.0 * mean_k(z, prior))
}

/// Gradient of [`mmd_term`] with respect to the encoded batch `z`.
pub fn mmd_grad(z: ArrayView2<f64>, prior: ArrayView2<f64>, bandwidth: f64) -> Result<Array2<f64>> {
    check_mmd_inputs(z, prior, 2)?;
    let (n, m) = (z.nrows(), prior.nrows());
    let h2 = bandwidth * bandwidth;
    let mut g = Array2::zeros(z.raw_dim());
    let c_within = 2.0 / (n * (n - 1)) as f64;
    let c_cross = 2.0 / (n * m) as f64;
    for i in 0..n {
        let zi = z.row(i);
        let mut gi = Array1::<f64>::zeros(z.ncols());
        for j in 0..n {
            if i != j {
                let k = rbf(zi, z.row(j), bandwidth);
                gi.scaled_add(-c_within * k / h2, &(&zi - &z.row(j)));
            }
        }
        for j in 0..m {
            let k = rbf(zi, prior.row(j), bandwidth);
            gi.scaled_add(c_cross * k / h2, &(&zi - &prior.row(j)));
        }
        g.row_mut(i).assign(&gi);
    }
    Ok(g)
}
