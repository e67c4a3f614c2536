//! Metrics, the masked-variable sweep and the timing comparison.
//!
//! Every method's completions are scored by the same frozen surrogate of
//! the split, against the measured strength of the test row.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::time::Instant;

use ndarray::{s, Array1, Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::cooperative::{complete_normalized, infer_partial, train_conn, CoopEpoch, InverseQuery, TrainMode};
use crate::data::{
    filter_by_age, fit_normalizer, make_eval_masks, split, Dataset, MaskMatrix, NormStats, Split, N_DESIGN, STRENGTH,
};
use crate::error::{Error, Result};
use crate::gp::{fit_gp, mh_infer, posterior_mean_design, GpModel, MhConfig};
use crate::imputation::{ImputerModel, Variant};
use crate::rng::{self, stream};
use crate::surrogate::{train_surrogate, SurrogateEpoch, SurrogateModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    Normalized,
    Mpa,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub r2: f64,
    pub mae: f64,
    pub mse: f64,
    pub units: Units,
    pub m: usize,
}

/// Coefficient of determination, mean absolute and mean squared error.
pub fn compute_metrics(y: ArrayView1<f64>, y_hat: ArrayView1<f64>, units: Units) -> Result<MetricsRecord> {
    if y.len() != y_hat.len() {
        return Err(Error::Contract(format!("metrics: {} targets, {} predictions", y.len(), y_hat.len())));
    }
    let m = y.len();
    if m < 2 {
        return Err(Error::Contract("metrics need at least two samples".into()));
    }
    let mean = y.sum() / m as f64;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    let mut abs = 0.0;
    for (a, b) in y.iter().zip(y_hat.iter()) {
        ss_res += (a - b) * (a - b);
        ss_tot += (a - mean) * (a - mean);
        abs += (a - b).abs();
    }
    if ss_tot == 0.0 {
        return Err(Error::numeric("r2", "target values are constant; R² is undefined"));
    }
    Ok(MetricsRecord {
        r2: 1.0 - ss_res / ss_tot,
        mae: abs / m as f64,
        mse: ss_res / m as f64,
        units,
        m,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    Conn(Variant),
    Standalone(Variant),
    BayesGp,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Conn(Variant::Dae),
        Method::Conn(Variant::Dvae),
        Method::Conn(Variant::Dwae),
        Method::Standalone(Variant::Dae),
        Method::Standalone(Variant::Dvae),
        Method::Standalone(Variant::Dwae),
        Method::BayesGp,
    ];

    pub fn all_names() -> Vec<String> {
        Self::ALL.iter().map(ToString::to_string).collect()
    }

    fn imputer_key(self) -> Option<(TrainMode, Variant)> {
        match self {
            Method::Conn(v) => Some((TrainMode::Cooperative, v)),
            Method::Standalone(v) => Some((TrainMode::Standalone, v)),
            Method::BayesGp => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Conn(v) => write!(f, "conn-{v}"),
            Method::Standalone(v) => write!(f, "standalone-{v}"),
            Method::BayesGp => f.write_str("bayes-gp"),
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "bayes-gp" {
            return Ok(Method::BayesGp);
        }
        let bad = || Error::config("methods", format!("unknown method `{s}`"));
        let (prefix, variant) = s.split_once('-').ok_or_else(bad)?;
        let v: Variant = variant.parse().map_err(|_| bad())?;
        match prefix {
            "conn" => Ok(Method::Conn(v)),
            "standalone" => Ok(Method::Standalone(v)),
            _ => Err(bad()),
        }
    }
}

/// Everything trained on one split: the shared evaluator, the requested
/// imputers and the GP.
#[derive(Debug, Clone)]
pub struct SplitModels {
    pub split: Split,
    pub norm: NormStats,
    pub surrogate: SurrogateModel,
    pub surrogate_log: Vec<SurrogateEpoch>,
    pub imputers: BTreeMap<(TrainMode, Variant), (ImputerModel, Vec<CoopEpoch>)>,
    pub gp: Option<GpModel>,
}

/// Loads, filters and returns the dataset named by the config.
pub fn load_filtered(cfg: &RunConfig) -> Result<Dataset> {
    let ds = crate::data::load_dataset(&cfg.dataset)?;
    filter_by_age(&ds, cfg.max_age)
}

pub fn fit_stats(cfg: &RunConfig, train: &Dataset) -> Result<NormStats> {
    let stats = fit_normalizer(train)?;
    Ok(if cfg.normalize_strength { stats } else { stats.with_raw_strength() })
}

impl SplitModels {
    pub fn train(cfg: &RunConfig, ds: &Dataset, split_seed: u64, methods: &[Method]) -> Result<Self> {
        let sp = split(ds, cfg.split_spec(split_seed))?;
        let norm = fit_stats(cfg, &sp.train)?;
        let (surrogate, surrogate_log) = train_surrogate(&sp.train, &norm, &cfg.surrogate_config(), split_seed)?;
        let mut imputers = BTreeMap::new();
        for m in methods {
            if let Some((mode, variant)) = m.imputer_key() {
                if imputers.contains_key(&(mode, variant)) {
                    continue;
                }
                let out = train_conn(&sp.train, &surrogate, &cfg.coop_config(variant, mode, split_seed))?;
                log::info!("split {split_seed}: trained {m} for {} epochs", out.log.len());
                imputers.insert((mode, variant), (out.imputer, out.log));
            }
        }
        let gp = if methods.contains(&Method::BayesGp) {
            Some(fit_gp(&sp.train, &norm, &cfg.gp_grid())?)
        } else {
            None
        };
        Ok(SplitModels {
            split: sp,
            norm,
            surrogate,
            surrogate_log,
            imputers,
            gp,
        })
    }

    pub fn imputer(&self, method: Method) -> Result<&ImputerModel> {
        let key = method
            .imputer_key()
            .ok_or_else(|| Error::Contract(format!("{method} has no imputer")))?;
        self.imputers
            .get(&key)
            .map(|(m, _)| m)
            .ok_or_else(|| Error::Contract(format!("{method} was not trained on split {}", self.split.seed)))
    }
}

/// Test inputs for one (split, level) cell; the mask is shared by every
/// method evaluated in the cell.
#[derive(Debug, Clone)]
pub struct EvalCell {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    pub mask: MaskMatrix,
    pub max_masked: usize,
}

impl EvalCell {
    pub fn new(models: &SplitModels, max_masked: usize, mask_seed: u64) -> Result<Self> {
        let test = &models.split.test;
        let clamped = models.norm.normalize_dataset_clamped(test);
        let y = models.norm.normalize_dataset(test).column(STRENGTH).to_owned();
        let seed = rng::derive_seed(mask_seed, &[models.split.seed]);
        Ok(EvalCell {
            x: clamped.slice(s![.., ..N_DESIGN]).to_owned(),
            y,
            mask: make_eval_masks(test.len(), max_masked, seed)?,
            max_masked,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub completions: Array2<f64>,
    pub normalized: MetricsRecord,
    pub mpa: MetricsRecord,
    pub seconds: f64,
}

/// Unknown/fixed layout of one test row under the cell mask.
fn fixed_of(cell: &EvalCell, i: usize) -> [Option<f64>; N_DESIGN] {
    std::array::from_fn(|j| cell.mask.is_observed(i, j).then_some(cell.x[[i, j]]))
}

/// Per-row GP completions of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GpCompletion {
    pub completions: Array2<f64>,
    /// Sampling wall-clock per test row.
    pub row_seconds: Vec<f64>,
    pub acceptance: Vec<f64>,
}

impl GpCompletion {
    pub fn seconds(&self) -> f64 {
        self.row_seconds.iter().sum()
    }
}

/// Posterior-mean completions of every test row, one chain per row.
pub fn gp_complete(gp: &GpModel, cell: &EvalCell, budget: usize, proposal_std: f64, seed: u64) -> Result<GpCompletion> {
    let n = cell.x.nrows();
    let mut out = GpCompletion {
        completions: Array2::zeros((n, N_DESIGN)),
        row_seconds: Vec::with_capacity(n),
        acceptance: Vec::with_capacity(n),
    };
    for i in 0..n {
        let fixed = fixed_of(cell, i);
        let cfg = MhConfig::new(budget, proposal_std, rng::derive_seed(seed, &[stream::MCMC, i as u64]))?;
        let start = Instant::now();
        let samples = mh_infer(gp, &fixed, gp.to_standardized(cell.y[i]), &cfg)?;
        let design = posterior_mean_design(&samples, &fixed)?;
        out.row_seconds.push(start.elapsed().as_secs_f64());
        out.acceptance.push(samples.acceptance_rate);
        out.completions.row_mut(i).assign(&Array1::from(design.to_vec()));
    }
    Ok(out)
}

pub fn gp_seed(split_seed: u64, max_masked: usize, budget: usize) -> u64 {
    rng::derive_seed(split_seed, &[stream::MCMC, max_masked as u64, budget as u64])
}

/// Completes and scores the test set of one cell with one method.
pub fn evaluate_method(
    models: &SplitModels,
    cell: &EvalCell,
    method: Method,
    budget: usize,
    proposal_std: f64,
) -> Result<Evaluation> {
    if cell.x.nrows() != models.split.test.len() {
        return Err(Error::Contract("evaluation cell does not belong to this split".into()));
    }
    let (completions, seconds) = match method {
        Method::BayesGp => {
            let gp = models
                .gp
                .as_ref()
                .ok_or_else(|| Error::Contract(format!("no GP fitted on split {}", models.split.seed)))?;
            let seed = gp_seed(models.split.seed, cell.max_masked, budget);
            let c = gp_complete(gp, cell, budget, proposal_std, seed)?;
            let secs = c.seconds();
            (c.completions, secs)
        }
        _ => {
            let imputer = models.imputer(method)?;
            let seed = rng::derive_seed(models.split.seed, &[stream::NOISE, cell.max_masked as u64]);
            let start = Instant::now();
            let c = complete_normalized(imputer, cell.x.view(), cell.y.view(), &cell.mask, seed)?;
            (c, start.elapsed().as_secs_f64())
        }
    };
    score(models, cell, completions, seconds)
}

fn score(models: &SplitModels, cell: &EvalCell, completions: Array2<f64>, seconds: f64) -> Result<Evaluation> {
    let pred = models.surrogate.predict_strength(completions.view())?;
    let normalized = compute_metrics(cell.y.view(), pred.view(), Units::Normalized)?;
    let to_mpa = |v: &Array1<f64>| v.mapv(|x| models.norm.denormalize_value(STRENGTH, x));
    let mpa = compute_metrics(to_mpa(&cell.y).view(), to_mpa(&pred).view(), Units::Mpa)?;
    Ok(Evaluation {
        completions,
        normalized,
        mpa,
        seconds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    pub seed: u64,
    pub max_masked: usize,
    pub budget: Option<usize>,
    pub r2: f64,
    pub mae_norm: f64,
    pub mse_norm: f64,
    pub mae_mpa: f64,
    pub mse_mpa: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub method: String,
    pub seed: u64,
    pub max_masked: Option<usize>,
    pub budget: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<CellFailure>,
}

pub const REPORT_HEADER: &str = "method,seed,max_masked,budget,r2,mae_norm,mse_norm,mae_mpa,mse_mpa,seconds";

fn row_of(method: Method, seed: u64, max_masked: usize, budget: Option<usize>, e: &Evaluation) -> SweepRow {
    SweepRow {
        method: method.to_string(),
        seed,
        max_masked,
        budget,
        r2: e.normalized.r2,
        mae_norm: e.normalized.mae,
        mse_norm: e.normalized.mse,
        mae_mpa: e.mpa.mae,
        mse_mpa: e.mpa.mse,
        seconds: e.seconds,
    }
}

fn sweep_split(cfg: &RunConfig, ds: &Dataset, seed: u64, methods: &[Method]) -> SweepReport {
    let mut report = SweepReport::default();
    let models = match SplitModels::train(cfg, ds, seed, methods) {
        Ok(m) => m,
        Err(e) => {
            log::error!("split {seed}: training failed: {e}");
            report.failures.push(CellFailure {
                method: "*".into(),
                seed,
                max_masked: None,
                budget: None,
                message: e.to_string(),
            });
            return report;
        }
    };
    for &level in &cfg.eval_levels {
        let cell = match EvalCell::new(&models, level, cfg.mask_seed) {
            Ok(c) => c,
            Err(e) => {
                report.failures.push(CellFailure {
                    method: "*".into(),
                    seed,
                    max_masked: Some(level),
                    budget: None,
                    message: e.to_string(),
                });
                continue;
            }
        };
        for &method in methods {
            let budgets: Vec<Option<usize>> = if method == Method::BayesGp {
                cfg.gp_budgets.iter().map(|&b| Some(b)).collect()
            } else {
                vec![None]
            };
            for budget in budgets {
                match evaluate_method(&models, &cell, method, budget.unwrap_or(1), cfg.mh_proposal_std) {
                    Ok(e) => {
                        log::info!("split {seed} level {level} {method} {budget:?}: r2 {:.4}", e.normalized.r2);
                        report.rows.push(row_of(method, seed, level, budget, &e));
                    }
                    Err(e) => {
                        log::error!("split {seed} level {level} {method}: {e}");
                        report.failures.push(CellFailure {
                            method: method.to_string(),
                            seed,
                            max_masked: Some(level),
                            budget,
                            message: e.to_string(),
                        });
                    }
                }
            }
        }
    }
    report
}

/// Full cross product of methods, split seeds and mask levels (and budgets
/// for the GP). Splits run on a pool of `jobs` threads; the report order is
/// independent of the pool size.
pub fn run_sweep(cfg: &RunConfig, jobs: usize) -> Result<SweepReport> {
    cfg.validate()?;
    let ds = load_filtered(cfg)?;
    let methods = cfg.parsed_methods();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::config("jobs", e.to_string()))?;
    let parts: Vec<SweepReport> =
        pool.install(|| cfg.seeds.par_iter().map(|&seed| sweep_split(cfg, &ds, seed, &methods)).collect());
    let mut report = SweepReport::default();
    for p in parts {
        report.rows.extend(p.rows);
        report.failures.extend(p.failures);
    }
    let order = |m: &str| Method::all_names().iter().position(|n| n == m).unwrap_or(usize::MAX);
    report
        .rows
        .sort_by(|a, b| (order(&a.method), a.budget, a.max_masked, a.seed).cmp(&(order(&b.method), b.budget, b.max_masked, b.seed)));
    Ok(report)
}

impl SweepReport {
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "{REPORT_HEADER}")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.method,
                r.seed,
                r.max_masked,
                r.budget.map(|b| b.to_string()).unwrap_or_default(),
                r.r2,
                r.mae_norm,
                r.mse_norm,
                r.mae_mpa,
                r.mse_mpa,
                r.seconds
            )?;
        }
        Ok(())
    }

    pub fn write_failures(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "method,seed,max_masked,budget,message")?;
        for f in &self.failures {
            let opt = |v: Option<usize>| v.map(|b| b.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},\"{}\"",
                f.method,
                f.seed,
                opt(f.max_masked),
                opt(f.budget),
                f.message.replace('"', "'")
            )?;
        }
        Ok(())
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        summarize_rows(&self.rows)
    }
}

/// Reads a report CSV written by [`SweepReport::write_csv`].
pub fn read_report(path: &std::path::Path) -> Result<Vec<SweepRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(Error::Csv)?;
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>().join(",") != REPORT_HEADER {
        return Err(Error::Schema(format!("report header must be `{REPORT_HEADER}`")));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |k: usize| -> Result<f64> {
            rec[k].parse().map_err(|_| Error::Parse {
                row: i + 1,
                column: headers[k].to_string(),
                message: format!("`{}` is not a number", &rec[k]),
            })
        };
        rows.push(SweepRow {
            method: rec[0].to_string(),
            seed: num(1)? as u64,
            max_masked: num(2)? as usize,
            budget: if rec[3].is_empty() { None } else { Some(num(3)? as usize) },
            r2: num(4)?,
            mae_norm: num(5)?,
            mse_norm: num(6)?,
            mae_mpa: num(7)?,
            mse_mpa: num(8)?,
            seconds: num(9)?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    MeanStd { mean, std }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub budget: Option<usize>,
    pub max_masked: usize,
    pub n: usize,
    pub r2: MeanStd,
    pub mae_norm: MeanStd,
    pub mse_norm: MeanStd,
    pub mae_mpa: MeanStd,
    pub mse_mpa: MeanStd,
    pub seconds: MeanStd,
}

/// Mean and sample standard deviation over seeds per (method, budget, level).
pub fn summarize_rows(rows: &[SweepRow]) -> Vec<SummaryRow> {
    let mut groups: Vec<((String, Option<usize>, usize), Vec<&SweepRow>)> = Vec::new();
    for r in rows {
        let key = (r.method.clone(), r.budget, r.max_masked);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|((method, budget, max_masked), g)| {
            let col = |f: fn(&SweepRow) -> f64| mean_std(&g.iter().map(|r| f(r)).collect::<Vec<_>>());
            SummaryRow {
                method,
                budget,
                max_masked,
                n: g.len(),
                r2: col(|r| r.r2),
                mae_norm: col(|r| r.mae_norm),
                mse_norm: col(|r| r.mse_norm),
                mae_mpa: col(|r| r.mae_mpa),
                mse_mpa: col(|r| r.mse_mpa),
                seconds: col(|r| r.seconds),
            }
        })
        .collect()
}

pub fn write_summary_csv(rows: &[SummaryRow], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(
        out,
        "method,budget,max_masked,n,r2_mean,r2_std,mae_norm_mean,mae_norm_std,mse_norm_mean,mse_norm_std,mae_mpa_mean,mae_mpa_std,mse_mpa_mean,mse_mpa_std,seconds_mean,seconds_std"
    )?;
    for r in rows {
        let ms = |m: MeanStd| format!("{},{}", m.mean, m.std);
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.method,
            r.budget.map(|b| b.to_string()).unwrap_or_default(),
            r.max_masked,
            r.n,
            ms(r.r2),
            ms(r.mae_norm),
            ms(r.mse_norm),
            ms(r.mae_mpa),
            ms(r.mse_mpa),
            ms(r.seconds)
        )?;
    }
    Ok(())
}

/// Aligned text rendering of the summary.
pub fn summary_table(rows: &[SummaryRow]) -> String {
    let mut s = String::from(
        "# completions scored by one shared frozen surrogate per split; mean ± sample std over seeds\n",
    );
    s.push_str(&format!(
        "{:<17} {:>7} {:>3} {:>2}  {:>17}  {:>17}  {:>17}  {:>12}\n",
        "method", "budget", "k", "n", "R²", "MAE (norm)", "MSE (norm)", "seconds"
    ));
    for r in rows {
        let ms = |m: MeanStd| format!("{:.4} ± {:.4}", m.mean, m.std);
        s.push_str(&format!(
            "{:<17} {:>7} {:>3} {:>2}  {:>17}  {:>17}  {:>17}  {:>12.4}\n",
            r.method,
            r.budget.map(|b| b.to_string()).unwrap_or_else(|| "-".into()),
            r.max_masked,
            r.n,
            ms(r.r2),
            ms(r.mae_norm),
            ms(r.mse_norm),
            r.seconds.mean
        ));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub method: String,
    pub budget: Option<usize>,
    pub seconds: f64,
    /// This method's time over the cooperative one-pass time.
    pub ratio: f64,
}

/// Wall-clock for completing the full test set: one pass of `baseline`
/// versus the GP at every budget.
pub fn time_comparison(
    models: &SplitModels,
    cell: &EvalCell,
    baseline: Method,
    budgets: &[usize],
    proposal_std: f64,
) -> Result<Vec<TimingRow>> {
    let base = evaluate_method(models, cell, baseline, 1, proposal_std)?;
    let denom = base.seconds.max(f64::MIN_POSITIVE);
    let mut rows = vec![TimingRow {
        method: baseline.to_string(),
        budget: None,
        seconds: base.seconds,
        ratio: 1.0,
    }];
    for &b in budgets {
        let e = evaluate_method(models, cell, Method::BayesGp, b, proposal_std)?;
        rows.push(TimingRow {
            method: Method::BayesGp.to_string(),
            budget: Some(b),
            seconds: e.seconds,
            ratio: e.seconds / denom,
        });
    }
    Ok(rows)
}

/// Scores raw-unit designs with a surrogate, in MPa.
pub fn score_raw(surrogate: &SurrogateModel, designs: &[[f64; N_DESIGN]]) -> Result<Vec<f64>> {
    designs
        .iter()
        .map(|d| {
            let xn: [f64; N_DESIGN] = std::array::from_fn(|j| surrogate.norm.normalize_value(j, d[j]));
            surrogate.predict_mpa(&xn)
        })
        .collect()
}

/// GP partial inverse design of one raw-unit query: posterior-mean design
/// in raw units.
pub fn gp_infer_raw(
    gp: &GpModel,
    norm: &NormStats,
    fixed_raw: &[Option<f64>; N_DESIGN],
    target_mpa: f64,
    budget: usize,
    proposal_std: f64,
    seed: u64,
) -> Result<[f64; N_DESIGN]> {
    let fixed: [Option<f64>; N_DESIGN] =
        std::array::from_fn(|j| fixed_raw[j].map(|v| norm.normalize_value(j, v).clamp(0.0, 1.0)));
    let target = gp.to_standardized(norm.normalize_value(STRENGTH, target_mpa));
    let s = mh_infer(gp, &fixed, target, &MhConfig::new(budget, proposal_std, seed)?)?;
    let d = posterior_mean_design(&s, &fixed)?;
    Ok(std::array::from_fn(|j| fixed_raw[j].unwrap_or_else(|| norm.denormalize_value(j, d[j]))))
}

/// The worked design scenario: slag, water, superplasticizer, fine
/// aggregate and age fixed, cement, fly ash and coarse aggregate free.
pub const SCENARIO_FIXED: [(&str, f64); 5] = [("bfs", 212.5), ("water", 155.7), ("sp", 14.3), ("fa", 880.4), ("age", 28.0)];
pub const SCENARIO_TARGET: f64 = 55.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub method: String,
    pub design: [f64; N_DESIGN],
    /// Shared-evaluator strength of the completed design, MPa.
    pub predicted_strength: f64,
    /// `predicted − target`, MPa.
    pub deviation: f64,
}

/// One completion per method for a raw-unit query, each scored by the
/// split's shared surrogate.
pub fn scenario(
    models: &SplitModels,
    methods: &[Method],
    fixed: &BTreeMap<String, f64>,
    target: f64,
    gp_budget: usize,
    proposal_std: f64,
    seed: u64,
) -> Result<Vec<ScenarioRow>> {
    methods
        .iter()
        .map(|&m| {
            let design = match m {
                Method::BayesGp => {
                    let gp = models
                        .gp
                        .as_ref()
                        .ok_or_else(|| Error::Contract(format!("no GP fitted on split {}", models.split.seed)))?;
                    let mut f = [None; N_DESIGN];
                    for (k, v) in fixed {
                        let j = crate::data::design_index(k)
                            .ok_or_else(|| Error::query(k.clone(), "unknown design variable"))?;
                        f[j] = Some(*v);
                    }
                    let s = rng::derive_seed(seed, &[stream::MCMC]);
                    gp_infer_raw(gp, &models.norm, &f, target, gp_budget, proposal_std, s)?
                }
                _ => {
                    let q = InverseQuery {
                        fixed: fixed.clone(),
                        target_strength: target,
                        num_candidates: 1,
                        seed,
                    };
                    infer_partial(models.imputer(m)?, &models.surrogate, &q)?[0].design
                }
            };
            let predicted = score_raw(&models.surrogate, &[design])?[0];
            Ok(ScenarioRow {
                method: m.to_string(),
                design,
                predicted_strength: predicted,
                deviation: predicted - target,
            })
        })
        .collect()
}
