//! Mask, clip and merge invariants as seed-driven cases; each returns an
//! explanation on violation.

use std::collections::BTreeMap;

use mixinv::cooperative::{infer_partial, InverseQuery};
use mixinv::data::{corrupt, sample_masks, MaskMatrix, NormStats, DESIGN_VARS, N_DESIGN};
use mixinv::imputation::{merge, ImputerArch, ImputerModel, Variant};
use mixinv::nn::MlpParams;
use mixinv::rng::rng_from_seed;
use mixinv::surrogate::{SurrogateConfig, SurrogateModel};
use ndarray::Array2;
use rand::Rng as _;

pub type Case = Result<(), String>;

fn random_stats(r: &mut mixinv::rng::Rng) -> NormStats {
    let mut min = [0.0_f64; 9];
    let mut max = [0.0_f64; 9];
    for j in 0..9 {
        min[j] = r.random_range(0.0..500.0);
        // roughly one column in ten is degenerate
        max[j] = if r.random_bool(0.1) { min[j] } else { min[j] + r.random_range(1.0..500.0) };
    }
    max[8] = max[8].max(min[8] + 1.0);
    NormStats { min, max }
}

fn random_imputer(variant: Variant, norm: NormStats, seed: u64) -> ImputerModel {
    let arch = ImputerArch {
        encoder_hidden: vec![8],
        decoder_hidden: vec![8],
        latent_dim: 3,
    };
    ImputerModel::new(variant, &arch, 0.1, 1.0, true, true, norm, seed).unwrap()
}

/// Observed entries of the merged matrix are the corrupted inputs, bit
/// for bit; masked entries are the reconstruction.
pub fn echo_case(seed: u64) -> Case {
    let mut r = rng_from_seed(seed);
    let n = r.random_range(1..20);
    let x = Array2::from_shape_simple_fn((n, N_DESIGN), || r.random_range(-2.0..2.0));
    let x_hat = Array2::from_shape_simple_fn((n, N_DESIGN), || r.random_range(-2.0..2.0));
    let mm = sample_masks(n, r.random_range(1..=5), &mut r).unwrap();
    let merged = merge(x_hat.view(), corrupt(x.view(), &mm).unwrap().view(), &mm).unwrap();
    for ((i, j), &v) in merged.indexed_iter() {
        let want = if mm.is_observed(i, j) { x[[i, j]] } else { x_hat[[i, j]] };
        if v.to_bits() != want.to_bits() {
            return Err(format!("seed {seed}: entry ({i},{j}) is {v}, expected {want}"));
        }
    }
    Ok(())
}

/// Clipped reconstructions lie inside the normalized feasibility box,
/// which collapses to `[0, 0]` for a degenerate column.
pub fn clip_case(seed: u64) -> Case {
    let mut r = rng_from_seed(seed);
    let imp = random_imputer(Variant::Dae, random_stats(&mut r), seed);
    let raw = Array2::from_shape_simple_fn((r.random_range(1..20), N_DESIGN), || r.random_range(-3.0..3.0));
    let clipped = imp.clip(&raw);
    let (lo, hi) = imp.clip_bounds();
    for ((i, j), &v) in clipped.indexed_iter() {
        if !(v >= lo[j] && v <= hi[j]) {
            return Err(format!("seed {seed}: ({i},{j}) = {v} outside [{}, {}]", lo[j], hi[j]));
        }
        let inside = raw[[i, j]] >= lo[j] && raw[[i, j]] <= hi[j];
        if inside && v != raw[[i, j]] {
            return Err(format!("seed {seed}: in-range value {} was moved", raw[[i, j]]));
        }
    }
    Ok(())
}

/// A fully observed mask reproduces the input whatever the reconstruction.
pub fn round_trip_case(seed: u64) -> Case {
    let mut r = rng_from_seed(seed);
    let n = r.random_range(1..20);
    let x = Array2::from_shape_simple_fn((n, N_DESIGN + 1), || r.random_range(-2.0..2.0));
    let x_hat = Array2::from_shape_simple_fn((n, N_DESIGN), || r.random_range(-2.0..2.0));
    let mm = MaskMatrix::all_observed(n);
    let dc = corrupt(x.view(), &mm).unwrap();
    if dc != x {
        return Err(format!("seed {seed}: corrupt with an all-ones mask changed the data"));
    }
    let merged = merge(x_hat.view(), dc.view(), &mm).unwrap();
    if merged != x.slice(ndarray::s![.., ..N_DESIGN]) {
        return Err(format!("seed {seed}: merge with an all-ones mask changed the data"));
    }
    Ok(())
}

/// Raw-unit inference echoes fixed inputs exactly and keeps inferred
/// values inside the training bounds.
pub fn inference_case(seed: u64) -> Case {
    let mut r = rng_from_seed(seed);
    let norm = random_stats(&mut r);
    let variant = Variant::ALL[r.random_range(0..3)];
    let imp = random_imputer(variant, norm.clone(), seed);
    let sur = SurrogateModel {
        net: MlpParams::init(&[8, 4, 1], seed).unwrap(),
        norm: norm.clone(),
        config: SurrogateConfig::default(),
        seed,
    };
    let n_fixed = r.random_range(0..N_DESIGN);
    let mut fixed = BTreeMap::new();
    for j in rand::seq::index::sample(&mut r, N_DESIGN, n_fixed) {
        let v = r.random_range(norm.min[j]..=norm.max[j]);
        fixed.insert(DESIGN_VARS[j].to_string(), v);
    }
    let q = InverseQuery {
        fixed: fixed.clone(),
        target_strength: r.random_range(10.0..80.0),
        num_candidates: if variant == Variant::Dae { 1 } else { r.random_range(1..4) },
        seed,
    };
    let out = infer_partial(&imp, &sur, &q).map_err(|e| format!("seed {seed}: {e}"))?;
    if out.len() != q.num_candidates {
        return Err(format!("seed {seed}: {} candidates, asked for {}", out.len(), q.num_candidates));
    }
    for c in &out {
        for (j, name) in DESIGN_VARS.iter().enumerate() {
            let v = c.design[j];
            match fixed.get(*name) {
                Some(f) if f.to_bits() != v.to_bits() => {
                    return Err(format!("seed {seed}: fixed {name} = {f} came back as {v}"));
                }
                None if !(v >= norm.min[j] && v <= norm.max[j]) => {
                    return Err(format!("seed {seed}: inferred {name} = {v} outside [{}, {}]", norm.min[j], norm.max[j]));
                }
                _ => {}
            }
        }
    }
    Ok(())
}
