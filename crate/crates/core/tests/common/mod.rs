//! Finite-difference checks shared by the gradient tests and the
//! acceptance harness. Each `*_err` returns the norm-wise relative error
//! between the analytic and the numeric gradient of one random instance.

#![allow(dead_code)]

pub mod invariants;
pub mod oracles;

use mixinv::cooperative::{coop_objective, CoopBatch, Objective};
use mixinv::data::{sample_masks, NormStats};
use mixinv::imputation::{kl_grad, kl_term, mmd_grad, mmd_term, standard_normal_matrix, ImputerArch, ImputerModel, Variant};
use mixinv::nn::{backward, Batch, LossKind, MlpParams};
use mixinv::rng::rng_from_seed;
use mixinv::surrogate::{SurrogateConfig, SurrogateModel};
use ndarray::{Array1, Array2};
use rand::Rng as _;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        0.0
    } else {
        2.0 * diff / scale
    }
}

pub fn numeric_grad(theta: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut t = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            let orig = t[i];
            t[i] = orig + H;
            let up = f(&t);
            t[i] = orig - H;
            let down = f(&t);
            t[i] = orig;
            (up - down) / (2.0 * H)
        })
        .collect()
}

pub fn uniform(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut r = rng_from_seed(seed);
    Array2::from_shape_simple_fn((rows, cols), || r.random_range(0.0..1.0))
}

/// Random biases keep instances away from the all-zero-bias relu kinks.
pub fn jittered(mut net: MlpParams, seed: u64) -> MlpParams {
    let mut r = rng_from_seed(seed + 999);
    for l in &mut net.layers {
        l.bias.mapv_inplace(|_| r.random_range(-0.3..0.3));
    }
    net
}

pub fn unit_norm() -> NormStats {
    NormStats {
        min: [0.0; 9],
        max: [1.0; 9],
    }
}

pub fn small_surrogate(seed: u64) -> SurrogateModel {
    SurrogateModel {
        net: MlpParams::init(&[8, 6, 1], seed + 1000).unwrap(),
        norm: unit_norm(),
        config: SurrogateConfig::default(),
        seed,
    }
}

pub fn small_imputer(variant: Variant, seed: u64, uses_mask: bool) -> ImputerModel {
    let arch = ImputerArch {
        encoder_hidden: vec![8],
        decoder_hidden: vec![8],
        latent_dim: 3,
    };
    let mut m = ImputerModel::new(variant, &arch, 0.3, 1.0, uses_mask, uses_mask, unit_norm(), seed).unwrap();
    m.encoder = jittered(m.encoder, seed);
    m.decoder = jittered(m.decoder, seed + 1);
    m
}

pub fn imputer_params(m: &ImputerModel) -> Vec<f64> {
    let mut v = m.encoder.to_flat();
    v.extend(m.decoder.to_flat());
    v
}

pub fn with_params(m: &ImputerModel, theta: &[f64]) -> ImputerModel {
    let mut out = m.clone();
    let k = m.encoder.num_params();
    out.encoder.set_flat(&theta[..k]).unwrap();
    out.decoder.set_flat(&theta[k..]).unwrap();
    out
}

fn random_batch(imp: &ImputerModel, rows: usize, max_masked: usize, seed: u64) -> CoopBatch {
    let mut r = rng_from_seed(seed + 7);
    let mask = sample_masks(rows, max_masked, &mut r).unwrap();
    let y = Array1::from_iter((0..rows).map(|_| r.random_range(0.0..1.0)));
    CoopBatch::new(imp, uniform(rows, 8, seed + 3), y, mask, &mut r)
}

/// Surrogate regression loss with respect to the network weights.
pub fn regression_err(seed: u64) -> f64 {
    let net = jittered(MlpParams::init(&[8, 6, 5, 1], seed).unwrap(), seed);
    let batch = Batch::new(uniform(7, 8, seed + 100), uniform(7, 1, seed + 200)).unwrap();
    let (_, g) = backward(&net, &batch, LossKind::Mse).unwrap();
    let num = numeric_grad(&net.to_flat(), |t| {
        let mut p = net.clone();
        p.set_flat(t).unwrap();
        backward(&p, &batch, LossKind::Mse).unwrap().0
    });
    rel_err(&g.to_flat(), &num)
}

/// Total cooperative objective with respect to encoder and decoder weights.
pub fn objective_err(variant: Variant, objective: Objective, uses_mask: bool, seed: u64) -> f64 {
    let imp = small_imputer(variant, seed, uses_mask);
    let sur = small_surrogate(seed);
    let batch = random_batch(&imp, 6, 5, seed);
    let (_, g) = coop_objective(&imp, &sur, &batch, &objective).unwrap();
    let mut analytic = g.encoder.to_flat();
    analytic.extend(g.decoder.to_flat());
    let num = numeric_grad(&imputer_params(&imp), |t| {
        coop_objective(&with_params(&imp, t), &sur, &batch, &objective).unwrap().0.total
    });
    rel_err(&analytic, &num)
}

/// `(1 − α)·L2` with respect to the surrogate weights.
pub fn surrogate_side_err(alpha: f64, seed: u64) -> f64 {
    let imp = small_imputer(Variant::Dae, seed, true);
    let sur = small_surrogate(seed);
    let batch = random_batch(&imp, 5, 3, seed);
    let obj = Objective::new(alpha);
    let (_, g) = coop_objective(&imp, &sur, &batch, &obj).unwrap();
    let num = numeric_grad(&sur.net.to_flat(), |t| {
        let mut s = sur.clone();
        s.net.set_flat(t).unwrap();
        (1.0 - alpha) * coop_objective(&imp, &s, &batch, &obj).unwrap().0.l2
    });
    rel_err(&g.surrogate.to_flat(), &num)
}

pub fn kl_err(seed: u64) -> f64 {
    let mu = uniform(4, 3, seed) * 4.0 - 2.0;
    let lv = uniform(4, 3, seed + 1) * 4.0 - 2.0;
    let (gm, gl) = kl_grad(mu.view(), lv.view());
    let mut theta: Vec<f64> = mu.iter().copied().collect();
    theta.extend(lv.iter());
    let num = numeric_grad(&theta, |t| {
        let m = Array2::from_shape_vec((4, 3), t[..12].to_vec()).unwrap();
        let l = Array2::from_shape_vec((4, 3), t[12..].to_vec()).unwrap();
        kl_term(m.view(), l.view())
    });
    let mut analytic: Vec<f64> = gm.iter().copied().collect();
    analytic.extend(gl.iter());
    rel_err(&analytic, &num)
}

pub fn mmd_err(seed: u64) -> f64 {
    let mut r = rng_from_seed(seed);
    let z = standard_normal_matrix(6, 3, &mut r) * 0.7 + 0.4;
    let prior = standard_normal_matrix(6, 3, &mut r);
    let g = mmd_grad(z.view(), prior.view(), 1.3).unwrap();
    let theta: Vec<f64> = z.iter().copied().collect();
    let num = numeric_grad(&theta, |t| {
        let zz = Array2::from_shape_vec((6, 3), t.to_vec()).unwrap();
        mmd_term(zz.view(), prior.view(), 1.3).unwrap()
    });
    let analytic: Vec<f64> = g.iter().copied().collect();
    rel_err(&analytic, &num)
}

/// Every instance family used by the correctness gate, as
/// `(label, worst relative error, instance count)`.
pub fn gradient_families(seeds: u64) -> Vec<(String, f64, usize)> {
    let worst = |f: &dyn Fn(u64) -> f64| (0..seeds).map(f).fold(0.0_f64, f64::max);
    let mut out = vec![("surrogate regression".to_string(), worst(&regression_err), seeds as usize)];
    for variant in Variant::ALL {
        for alpha in [0.0, 0.5, 1.0] {
            for unclipped in [false, true] {
                let obj = Objective {
                    unclipped_reconstruction: unclipped,
                    ..Objective::new(alpha)
                };
                let label = format!("{variant} alpha={alpha} unclipped={unclipped}");
                out.push((label, worst(&|s| objective_err(variant, obj, true, s)), seeds as usize));
            }
        }
        let standalone = Objective::new(1.0);
        out.push((format!("{variant} standalone"), worst(&|s| objective_err(variant, standalone, false, s)), seeds as usize));
    }
    let masked = Objective {
        masked_only: true,
        ..Objective::new(0.5)
    };
    out.push(("dae masked-only".into(), worst(&|s| objective_err(Variant::Dae, masked, true, s)), seeds as usize));
    out.push(("surrogate side".into(), worst(&|s| surrogate_side_err(0.3, s)), seeds as usize));
    out.push(("kl".into(), worst(&kl_err), seeds as usize));
    out.push(("mmd".into(), worst(&mmd_err), seeds as usize));
    out
}

/// The bundled concrete-strength table at the workspace root.
pub fn dataset_path() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/concrete.csv")
}
