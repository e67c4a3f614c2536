//! Cooperative training of imputer and surrogate, and single-pass partial
//! inverse design.

use std::collections::BTreeMap;
use std::io::Write;

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{corrupt, sample_masks, Dataset, MaskMatrix, NormStats, DESIGN_VARS, N_DESIGN, STRENGTH};
use crate::error::{Error, Result};
use crate::imputation::{
    kl_grad, kl_term, masked_reconstruction_loss, merge, mmd_grad, mmd_term, reconstruction_loss,
    standard_normal_matrix, ImputerArch, ImputerModel, Variant,
};
use crate::nn::{backward, AdamState, Batch, Gradients, LossKind};
use crate::rng::{self, stream, Rng};
use crate::surrogate::SurrogateModel;
use crate::training::{holdout, minibatches, EarlyStopping, TrainingConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurrogateMode {
    Frozen,
    Joint,
}

/// Cooperative models see the mask, clip their reconstructions and receive
/// surrogate feedback; standalone baselines do none of the three.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Cooperative,
    Standalone,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoopConfig {
    pub alpha: f64,
    pub variant: Variant,
    pub mode: TrainMode,
    pub surrogate_mode: SurrogateMode,
    pub training: TrainingConfig,
    pub arch: ImputerArch,
    pub beta_dvae: f64,
    pub beta_dwae: f64,
    pub mmd_bandwidth: Option<f64>,
    pub max_masked_train: usize,
    pub masked_only_loss: bool,
    pub unclipped_reconstruction: bool,
    pub seed: u64,
}

impl Default for CoopConfig {
    fn default() -> Self {
        CoopConfig {
            alpha: 0.2,
            variant: Variant::Dae,
            mode: TrainMode::Cooperative,
            surrogate_mode: SurrogateMode::Frozen,
            training: TrainingConfig::default(),
            arch: ImputerArch::default(),
            beta_dvae: 1e-4,
            beta_dwae: 0.1,
            mmd_bandwidth: None,
            max_masked_train: 5,
            masked_only_loss: false,
            unclipped_reconstruction: true,
            seed: 0,
        }
    }
}

impl CoopConfig {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if !(1..=crate::data::MAX_MASKED_LIMIT).contains(&self.max_masked_train) {
            return Err(Error::config(
                "max_masked_train",
                format!("must lie in 1..={}, got {}", crate::data::MAX_MASKED_LIMIT, self.max_masked_train),
            ));
        }
        for (field, b) in [("beta_dvae", self.beta_dvae), ("beta_dwae", self.beta_dwae)] {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(Error::config(field, format!("must be finite and >= 0, got {b}")));
            }
        }
        if let Some(h) = self.mmd_bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::config("mmd_bandwidth", format!("must be positive, got {h}")));
            }
        }
        if self.arch.latent_dim == 0 {
            return Err(Error::config("latent_dim", "must be positive"));
        }
        self.training.validate("")
    }

    /// α actually applied: standalone training is the pure denoising objective.
    pub fn effective_alpha(&self) -> f64 {
        match self.mode {
            TrainMode::Cooperative => self.alpha,
            TrainMode::Standalone => 1.0,
        }
    }

    pub fn objective(&self) -> Objective {
        Objective {
            alpha: self.effective_alpha(),
            masked_only: self.masked_only_loss,
            unclipped_reconstruction: self.unclipped_reconstruction,
        }
    }

    pub fn beta(&self) -> f64 {
        match self.variant {
            Variant::Dae => 0.0,
            Variant::Dvae => self.beta_dvae,
            Variant::Dwae => self.beta_dwae,
        }
    }

    pub fn bandwidth(&self) -> f64 {
        self.mmd_bandwidth.unwrap_or((self.arch.latent_dim as f64).sqrt())
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config("alpha", format!("must lie in [0, 1], got {alpha}")));
    }
    Ok(())
}

/// `α·L1 + (1 − α)·L2`.
pub fn cooperative_loss(l1: f64, l2: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(alpha * l1 + (1.0 - alpha) * l2)
}

/// One training or validation batch with its noise fixed up front, so the
/// objective is a deterministic function of the parameters.
#[derive(Debug, Clone)]
pub struct CoopBatch {
    /// Clean normalized designs, `n x 8`.
    pub x: Array2<f64>,
    /// Normalized measured strength.
    pub y: Array1<f64>,
    pub mask: MaskMatrix,
    /// Reparameterisation noise (DVAE).
    pub eps: Option<Array2<f64>>,
    /// Standard-normal prior sample (DWAE).
    pub prior: Option<Array2<f64>>,
}

impl CoopBatch {
    pub fn new(imputer: &ImputerModel, x: Array2<f64>, y: Array1<f64>, mask: MaskMatrix, noise: &mut Rng) -> Self {
        let n = x.nrows();
        let eps = (imputer.variant == Variant::Dvae).then(|| standard_normal_matrix(n, imputer.latent_dim, noise));
        let prior = (imputer.variant == Variant::Dwae).then(|| standard_normal_matrix(n, imputer.latent_dim, noise));
        CoopBatch { x, y, mask, eps, prior }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub l1: f64,
    pub l2: f64,
    pub reg: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct CoopGrads {
    pub encoder: Gradients,
    pub decoder: Gradients,
    /// Gradient of `(1 − α)·L2` with respect to the surrogate parameters.
    pub surrogate: Gradients,
}

/// How the per-batch objective is formed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub alpha: f64,
    /// L1 over the masked entries only.
    pub masked_only: bool,
    /// L1 on the merged decoder output before clipping; L2 always scores
    /// the clipped design.
    pub unclipped_reconstruction: bool,
}

impl Objective {
    pub fn new(alpha: f64) -> Self {
        Objective {
            alpha,
            masked_only: false,
            unclipped_reconstruction: false,
        }
    }
}

/// `L_TOTAL = α·L1 + (1 − α)·L2 + β·reg` on one batch, together with its
/// exact gradients. The L2 gradient reaches the imputer through the
/// surrogate's input Jacobian.
pub fn coop_objective(
    imputer: &ImputerModel,
    surrogate: &SurrogateModel,
    batch: &CoopBatch,
    objective: &Objective,
) -> Result<(LossParts, CoopGrads)> {
    let alpha = objective.alpha;
    check_alpha(alpha)?;
    let n = batch.x.nrows();
    if batch.x.ncols() != N_DESIGN {
        return Err(Error::Contract("cooperative batch needs 8 design columns".into()));
    }
    let dc = corrupt(batch.x.view(), &batch.mask)?;
    let input = imputer.assemble_input(dc.view(), &batch.mask, batch.y.view())?;
    let enc = imputer.encoder.forward_trace(input.view())?;
    let latent = imputer.latent_from_encoding(enc.output.clone(), batch.eps.clone())?;
    let dec = imputer.decoder.forward_trace(latent.z.view())?;
    let raw = &dec.output;
    let x_hat = imputer.clip(raw);
    let x_merged = merge(x_hat.view(), dc.view(), &batch.mask)?;
    let m = batch.mask.matrix();

    let recon = if objective.unclipped_reconstruction {
        merge(raw.view(), dc.view(), &batch.mask)?
    } else {
        x_merged.clone()
    };
    let (l1, d_l1) = if objective.masked_only {
        let count = m.iter().filter(|&&v| v == 0.0).count().max(1) as f64;
        let l1 = masked_reconstruction_loss(recon.view(), batch.x.view(), &batch.mask);
        let g = ndarray::Zip::from(&recon)
            .and(&batch.x)
            .and(m)
            .map_collect(|a, b, &o| 2.0 * (1.0 - o) * (a - b) / count);
        (l1, g)
    } else {
        let l1 = reconstruction_loss(recon.view(), batch.x.view());
        (l1, (&recon - &batch.x) * (2.0 / (n * N_DESIGN) as f64))
    };

    let s_trace = surrogate.net.forward_trace(x_merged.view())?;
    let pred = s_trace.output.column(0);
    let l2 = pred.iter().zip(batch.y.iter()).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n as f64;
    let d_pred = ((&pred - &batch.y) * (2.0 / n as f64)).insert_axis(Axis(1));
    let (mut s_grads, d_l2) = surrogate.net.backprop(&s_trace, d_pred.view())?;
    s_grads.scale(1.0 - alpha);

    let (lo, hi) = imputer.clip_bounds();
    let mut d_hat = Array2::zeros(raw.raw_dim());
    for ((i, j), g) in d_hat.indexed_iter_mut() {
        let free = 1.0 - m[[i, j]];
        let passes = !imputer.clips || (raw[[i, j]] > lo[j] && raw[[i, j]] < hi[j]);
        let through_clip = if passes { 1.0 } else { 0.0 };
        let l1_part = if objective.unclipped_reconstruction { 1.0 } else { through_clip };
        *g = free * (alpha * d_l1[[i, j]] * l1_part + (1.0 - alpha) * d_l2[[i, j]] * through_clip);
    }
    let (dec_grads, mut d_z) = imputer.decoder.backprop(&dec, d_hat.view())?;

    let beta = imputer.beta;
    let (reg, d_enc) = match imputer.variant {
        Variant::Dae => (0.0, d_z),
        Variant::Dwae => {
            let prior = batch
                .prior
                .as_ref()
                .ok_or_else(|| Error::Contract("dwae batch needs a prior sample".into()))?;
            let reg = mmd_term(latent.z.view(), prior.view(), imputer.bandwidth)?;
            d_z.scaled_add(beta, &mmd_grad(latent.z.view(), prior.view(), imputer.bandwidth)?);
            (reg, d_z)
        }
        Variant::Dvae => {
            let (mu, lv, eps) = match (&latent.mu, &latent.logvar, &latent.eps) {
                (Some(mu), Some(lv), Some(eps)) => (mu, lv, eps),
                _ => return Err(Error::Contract("dvae latent is missing its moments".into())),
            };
            let reg = kl_term(mu.view(), lv.view());
            let (g_mu, g_lv) = kl_grad(mu.view(), lv.view());
            let d_mu = &d_z + &(g_mu * beta);
            let d_lv = &d_z * eps * &lv.mapv(|v| 0.5 * (0.5 * v).exp()) + g_lv * beta;
            (reg, concatenate(Axis(1), &[d_mu.view(), d_lv.view()]).expect("equal rows"))
        }
    };
    let (enc_grads, _) = imputer.encoder.backprop(&enc, d_enc.view())?;

    let total = cooperative_loss(l1, l2, alpha)? + beta * reg;
    Ok((
        LossParts { l1, l2, reg, total },
        CoopGrads {
            encoder: enc_grads,
            decoder: dec_grads,
            surrogate: s_grads,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoopEpoch {
    pub epoch: usize,
    pub l1: f64,
    pub l2: f64,
    pub reg: f64,
    pub weighted_l1: f64,
    pub weighted_l2: f64,
    pub total: f64,
    pub val_total: f64,
}

pub fn write_loss_log(log: &[CoopEpoch], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "epoch,l1,l2,l_total,val_metric,alpha_l1,one_minus_alpha_l2,reg")?;
    for e in log {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            e.epoch, e.l1, e.l2, e.total, e.val_total, e.weighted_l1, e.weighted_l2, e.reg
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct CoopOutcome {
    pub imputer: ImputerModel,
    pub surrogate: SurrogateModel,
    pub log: Vec<CoopEpoch>,
}

/// Trains an imputer against a pretrained surrogate. In cooperative mode
/// the surrogate shapes the imputer through L2; joint mode additionally
/// updates the surrogate on `L_REG + (1 − α)·L2`.
pub fn train_conn(train: &Dataset, surrogate: &SurrogateModel, config: &CoopConfig) -> Result<CoopOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Contract("imputer needs training rows".into()));
    }
    let norm = surrogate.norm.clone();
    let cooperative = config.mode == TrainMode::Cooperative;
    let objective = config.objective();
    let alpha = objective.alpha;
    let data = norm.normalize_dataset(train);
    let x = data.slice(s![.., ..N_DESIGN]).to_owned();
    let y = data.column(STRENGTH).to_owned();
    let seed = config.seed;

    let mut imputer = ImputerModel::new(
        config.variant,
        &config.arch,
        config.beta(),
        config.bandwidth(),
        cooperative,
        cooperative,
        norm,
        rng::derive_seed(seed, &[stream::INIT]),
    )?;
    let mut sur = surrogate.clone();
    let joint = cooperative && config.surrogate_mode == SurrogateMode::Joint;
    let mut enc_adam = AdamState::new(&imputer.encoder, config.training.adam);
    let mut dec_adam = AdamState::new(&imputer.decoder, config.training.adam);
    let mut sur_adam = AdamState::new(&sur.net, config.training.adam);

    let (fit_idx, val_idx) = holdout(
        train.len(),
        config.training.validation_fraction,
        &mut rng::derived_rng(seed, &[stream::VALIDATION]),
    );
    let val_batch = {
        let mut r = rng::derived_rng(seed, &[stream::VALIDATION, 1]);
        let mask = sample_masks(val_idx.len(), config.max_masked_train, &mut r)?;
        CoopBatch::new(&imputer, x.select(Axis(0), &val_idx), y.select(Axis(0), &val_idx), mask, &mut r)
    };
    let mut shuffle = rng::derived_rng(seed, &[stream::SHUFFLE]);
    let mut mask_rng = rng::derived_rng(seed, &[stream::TRAIN_MASK]);
    let mut noise = rng::derived_rng(seed, &[stream::NOISE]);
    let mut stopper = EarlyStopping::new(config.training.patience);
    let mut log = Vec::new();
    let fail = |epoch: usize| move |e: Error| Error::Training {
        epoch,
        message: e.to_string(),
    };

    for epoch in 1..=config.training.max_epochs {
        let epoch_masks = sample_masks(fit_idx.len(), config.max_masked_train, &mut mask_rng)?;
        let position: BTreeMap<usize, usize> = fit_idx.iter().enumerate().map(|(p, &i)| (i, p)).collect();
        let mut sums = LossParts::default();
        for b in minibatches(&fit_idx, config.training.batch_size, &mut shuffle) {
            let rows: Vec<usize> = b.iter().map(|i| position[i]).collect();
            let batch = CoopBatch::new(
                &imputer,
                x.select(Axis(0), &b),
                y.select(Axis(0), &b),
                epoch_masks.select(&rows),
                &mut noise,
            );
            let (parts, grads) =
                coop_objective(&imputer, &sur, &batch, &objective).map_err(fail(epoch))?;
            if !parts.total.is_finite() {
                return Err(Error::Training {
                    epoch,
                    message: "non-finite cooperative loss".into(),
                });
            }
            let w = b.len() as f64;
            sums.l1 += parts.l1 * w;
            sums.l2 += parts.l2 * w;
            sums.reg += parts.reg * w;
            sums.total += parts.total * w;
            enc_adam.step(&mut imputer.encoder, &grads.encoder).map_err(fail(epoch))?;
            dec_adam.step(&mut imputer.decoder, &grads.decoder).map_err(fail(epoch))?;
            if joint {
                let clean = Batch::new(batch.x.clone(), batch.y.clone().insert_axis(Axis(1)))?;
                let (_, mut g) = backward(&sur.net, &clean, LossKind::Mse).map_err(fail(epoch))?;
                g.add_assign(&grads.surrogate);
                sur_adam.step(&mut sur.net, &g).map_err(fail(epoch))?;
            }
        }
        let nfit = fit_idx.len() as f64;
        let (val, _) = coop_objective(&imputer, &sur, &val_batch, &objective).map_err(fail(epoch))?;
        if !val.total.is_finite() {
            return Err(Error::Training {
                epoch,
                message: "non-finite validation loss".into(),
            });
        }
        let (l1, l2) = (sums.l1 / nfit, sums.l2 / nfit);
        log.push(CoopEpoch {
            epoch,
            l1,
            l2,
            reg: sums.reg / nfit,
            weighted_l1: alpha * l1,
            weighted_l2: (1.0 - alpha) * l2,
            total: sums.total / nfit,
            val_total: val.total,
        });
        if stopper.observe(val.total, &(imputer.clone(), sur.net.clone())) {
            break;
        }
    }
    let (_, (imputer, net)) = stopper.best.expect("at least one epoch ran");
    sur.net = net;
    Ok(CoopOutcome {
        imputer,
        surrogate: sur,
        log,
    })
}

/// Standalone baseline: same backbone and schedule, no mask input, no
/// clipping, no surrogate feedback.
pub fn train_standalone(train: &Dataset, surrogate: &SurrogateModel, config: &CoopConfig) -> Result<CoopOutcome> {
    let cfg = CoopConfig {
        mode: TrainMode::Standalone,
        surrogate_mode: SurrogateMode::Frozen,
        ..config.clone()
    };
    train_conn(train, surrogate, &cfg)
}

/// Completes normalized designs: hides masked entries, runs one
/// encode/decode/merge pass and returns `n x 8` normalized completions.
pub fn complete_normalized(
    imputer: &ImputerModel,
    x: ArrayView2<f64>,
    target: ArrayView1<f64>,
    mask: &MaskMatrix,
    seed: u64,
) -> Result<Array2<f64>> {
    let dc = corrupt(x, mask)?;
    imputer.impute(dc.view(), mask, target, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverseQuery {
    pub fixed: BTreeMap<String, f64>,
    pub target_strength: f64,
    pub num_candidates: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// Completed design in raw units, in column order.
    pub design: [f64; N_DESIGN],
    pub predicted_strength: f64,
}

impl Candidate {
    pub fn design_map(&self) -> BTreeMap<String, f64> {
        DESIGN_VARS.iter().zip(self.design).map(|(k, v)| (k.to_string(), v)).collect()
    }
}

/// Checks a query against the variable vocabulary and the variant; returns
/// the fixed values by column index.
pub fn validate_query(q: &InverseQuery, variant: Variant) -> Result<[Option<f64>; N_DESIGN]> {
    let mut fixed = [None; N_DESIGN];
    for (name, &v) in &q.fixed {
        let j = crate::data::design_index(name)
            .ok_or_else(|| Error::query(name.clone(), format!("unknown design variable `{name}`")))?;
        if !v.is_finite() || v < 0.0 {
            return Err(Error::query(name.clone(), format!("must be a finite value >= 0, got {v}")));
        }
        fixed[j] = Some(v);
    }
    if !(q.target_strength > 0.0 && q.target_strength.is_finite()) {
        return Err(Error::query("target_strength", "must be a positive number of MPa"));
    }
    if q.num_candidates == 0 {
        return Err(Error::query("candidates", "must be at least 1"));
    }
    if q.num_candidates > 1 && !variant.is_generative() {
        return Err(Error::query("candidates", "the dae variant is deterministic and yields one candidate"));
    }
    if q.num_candidates > 1 && fixed.iter().all(Option::is_some) {
        return Err(Error::query("candidates", "every variable is fixed, so there is nothing to sample"));
    }
    Ok(fixed)
}

/// One-pass partial inverse design in raw units.
pub fn infer_partial(imputer: &ImputerModel, surrogate: &SurrogateModel, q: &InverseQuery) -> Result<Vec<Candidate>> {
    let norm: &NormStats = &imputer.norm;
    if norm != &surrogate.norm {
        return Err(Error::Contract("imputer and surrogate come from different training runs".into()));
    }
    let mut fixed = validate_query(q, imputer.variant)?;
    for (j, slot) in fixed.iter_mut().enumerate() {
        if let Some(v) = slot {
            let (lo, hi) = (norm.min[j], norm.max[j]);
            if *v < lo || *v > hi {
                let c = v.clamp(lo, hi);
                log::warn!("{} = {v} lies outside the training range [{lo}, {hi}]; using {c}", DESIGN_VARS[j]);
                *v = c;
            }
        }
    }
    let mut dc = Array2::<f64>::zeros((1, N_DESIGN));
    let mut observed = [false; N_DESIGN];
    for (j, v) in fixed.iter().enumerate() {
        if let Some(v) = v {
            dc[[0, j]] = norm.normalize_value(j, *v).clamp(0.0, 1.0);
            observed[j] = true;
        }
    }
    let mask = MaskMatrix::from_rows(&[observed]);
    let target = Array1::from(vec![norm.normalize_value(STRENGTH, q.target_strength)]);

    (0..q.num_candidates)
        .map(|i| {
            let seed = rng::derive_seed(q.seed, &[stream::CANDIDATE, i as u64]);
            let out = imputer.impute(dc.view(), &mask, target.view(), seed)?;
            let mut design = [0.0; N_DESIGN];
            for j in 0..N_DESIGN {
                design[j] = match fixed[j] {
                    Some(v) => v,
                    None => {
                        let v = norm.denormalize_value(j, out[[0, j]]);
                        if imputer.clips {
                            v.clamp(norm.min[j], norm.max[j])
                        } else {
                            v
                        }
                    }
                };
            }
            let xn: [f64; N_DESIGN] = std::array::from_fn(|j| norm.normalize_value(j, design[j]));
            Ok(Candidate {
                design,
                predicted_strength: surrogate.predict_mpa(&xn)?,
            })
        })
        .collect()
}
