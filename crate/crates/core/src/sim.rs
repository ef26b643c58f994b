//! Monte-Carlo experiments: federated tests under a normal mixed model and
//! federated quantile estimation under a Gamma scale-mixture model.
//!
//! Every `(seed, replicate, center)` triple owns an independent ChaCha8
//! stream, so replicate `i` is the same whatever the replicate count or the
//! number of worker threads.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binning::GroupedSample;
use crate::error::{FedError, Group, Result};
use crate::quantile::QuantileMethod;
use crate::rank::{
    fisher_combine, mwu_combined, mwu_federated_table, t_sum, t_weighted, Sidedness, TestMethod,
};
use crate::runtime::{Coordinator, TableSettings};
use crate::special::{gamma_cdf, gamma_quantile, normal_quantile};
use crate::table::{ExtremePolicy, PrivacyParam};

/// Observations per center and group for the standard center counts.
pub fn standard_center_sizes(centers: usize) -> Option<Vec<usize>> {
    match centers {
        3 => Some(vec![698, 476, 326]),
        5 => Some(vec![492, 368, 276, 208, 156]),
        10 => Some(vec![307, 250, 208, 172, 143, 118, 98, 81, 67, 56]),
        _ => None,
    }
}

/// Effect sizes used for the power comparison.
pub const POWER_DELTAS: [f64; 4] = [0.05, 0.063, 0.08, 0.1];

/// Probabilities estimated in the quantile experiment.
pub const DEFAULT_PROBS: [f64; 5] = [0.02, 0.25, 0.5, 0.75, 0.98];

fn default_k() -> PrivacyParam {
    PrivacyParam::default()
}

fn default_replicates() -> usize {
    2000
}

fn default_phi() -> f64 {
    0.1
}

fn resolve_sizes(centers: usize, sizes: &Option<Vec<usize>>) -> Result<Vec<usize>> {
    let sizes = match sizes {
        Some(s) => s.clone(),
        None => standard_center_sizes(centers).ok_or_else(|| {
            FedError::InvalidInput(format!(
                "no standard sizes for {centers} centers; give center_sizes"
            ))
        })?,
    };
    if sizes.len() != centers || sizes.contains(&0) {
        return Err(FedError::InvalidInput(
            "center_sizes must list one positive size per center".into(),
        ));
    }
    Ok(sizes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSimConfig {
    #[serde(rename = "L", alias = "centers")]
    pub centers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center_sizes: Option<Vec<usize>>,
    pub delta: f64,
    pub sigma_alpha: f64,
    pub sigma_beta: f64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_k")]
    pub k: PrivacyParam,
    #[serde(default)]
    pub sidedness: Sidedness,
}

impl TestSimConfig {
    pub fn new(centers: usize, delta: f64, sigma_alpha: f64, sigma_beta: f64) -> Self {
        Self {
            centers,
            center_sizes: None,
            delta,
            sigma_alpha,
            sigma_beta,
            replicates: default_replicates(),
            seed: 0,
            k: default_k(),
            sidedness: Sidedness::Two,
        }
    }

    pub fn sizes(&self) -> Result<Vec<usize>> {
        resolve_sizes(self.centers, &self.center_sizes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaSimConfig {
    /// Gamma shape.
    pub r: f64,
    #[serde(default = "default_phi")]
    pub phi: f64,
    #[serde(rename = "L", alias = "centers")]
    pub centers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center_sizes: Option<Vec<usize>>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_k")]
    pub k: PrivacyParam,
}

impl GammaSimConfig {
    pub fn new(r: f64, centers: usize) -> Self {
        Self {
            r,
            phi: default_phi(),
            centers,
            center_sizes: None,
            replicates: default_replicates(),
            seed: 0,
            k: default_k(),
        }
    }

    pub fn sizes(&self) -> Result<Vec<usize>> {
        resolve_sizes(self.centers, &self.center_sizes)
    }

    /// `log((Q_0.5 + φ√r) / Q_0.5)` with `Q_0.5` the Gamma(r, 1) median.
    pub fn sigma_alpha(&self) -> f64 {
        let median = gamma_quantile(self.r, 0.5);
        ((median + self.phi * self.r.sqrt()) / median).ln()
    }
}

const DOMAIN_DATA: u64 = 0x6461_7461;
const DOMAIN_TABLE: u64 = 0x7461_626c;

/// Independent stream for one `(seed, replicate, center)` triple.
pub fn stream_rng(seed: u64, replicate: u64, center: u64, domain: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&replicate.to_le_bytes());
    key[16..24].copy_from_slice(&center.to_le_bytes());
    key[24..].copy_from_slice(&domain.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Seed handed to the table protocol for one replicate.
pub fn table_seed(seed: u64, replicate: u64) -> u64 {
    stream_rng(seed, replicate, u64::MAX, DOMAIN_TABLE).gen()
}

/// Standard normal variate by inversion.
pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.sample(Open01);
    normal_quantile(u)
}

/// Gamma(shape, 1) variate (Marsaglia and Tsang; boosted for shape < 1).
pub fn gamma_variate<R: Rng + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    assert!(shape > 0.0, "gamma shape must be positive");
    if shape < 1.0 {
        let u: f64 = rng.sample(Open01);
        return gamma_variate(rng, shape + 1.0) * u.powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = std_normal(rng);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u: f64 = rng.sample(Open01);
        if u < 1.0 - 0.0331 * x.powi(4) || u.ln() < 0.5 * x * x + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// One replicate of the testing model, plus the drawn center effects.
#[derive(Debug, Clone, PartialEq)]
pub struct TestReplicate {
    pub centers: Vec<GroupedSample<f64>>,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
}

/// `x = ε + α_l`, `y = ε + α_l + β_l` with `α_l ~ N(0, σ_α²)`, `β_l ~ N(δ, σ_β²)`.
pub fn gen_test_data(cfg: &TestSimConfig, replicate: u64) -> Result<TestReplicate> {
    let sizes = cfg.sizes()?;
    let mut centers = Vec::with_capacity(sizes.len());
    let mut alphas = Vec::with_capacity(sizes.len());
    let mut betas = Vec::with_capacity(sizes.len());
    for (l, &n) in sizes.iter().enumerate() {
        let mut rng = stream_rng(cfg.seed, replicate, l as u64, DOMAIN_DATA);
        let alpha = cfg.sigma_alpha * std_normal(&mut rng);
        let beta = cfg.delta + cfg.sigma_beta * std_normal(&mut rng);
        let x = (0..n).map(|_| std_normal(&mut rng) + alpha).collect();
        let y = (0..n)
            .map(|_| std_normal(&mut rng) + alpha + beta)
            .collect();
        centers.push(GroupedSample::new(format!("c{:02}", l + 1), x, y)?);
        alphas.push(alpha);
        betas.push(beta);
    }
    Ok(TestReplicate {
        centers,
        alphas,
        betas,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaReplicate {
    pub centers: Vec<Vec<f64>>,
    pub alphas: Vec<f64>,
}

/// `x = ε·exp(α_l)` with `ε ~ Gamma(r, 1)` and `α_l ~ N(0, σ_α²)`.
pub fn gen_gamma_data(cfg: &GammaSimConfig, replicate: u64) -> Result<GammaReplicate> {
    if !(cfg.r > 0.0) {
        return Err(FedError::InvalidInput(
            "gamma shape r must be positive".into(),
        ));
    }
    let sizes = cfg.sizes()?;
    let sigma = cfg.sigma_alpha();
    let mut centers = Vec::with_capacity(sizes.len());
    let mut alphas = Vec::with_capacity(sizes.len());
    for (l, &n) in sizes.iter().enumerate() {
        let mut rng = stream_rng(cfg.seed, replicate, l as u64, DOMAIN_DATA);
        let alpha = sigma * std_normal(&mut rng);
        let scale = alpha.exp();
        centers.push(
            (0..n)
                .map(|_| gamma_variate(&mut rng, cfg.r) * scale)
                .collect(),
        );
        alphas.push(alpha);
    }
    Ok(GammaReplicate { centers, alphas })
}

/// `Σ_l (n_l/N) Γ_r(x / exp(α_l))`.
pub fn mixture_cdf(alphas: &[f64], sizes: &[usize], r: f64, x: f64) -> f64 {
    let total: usize = sizes.iter().sum();
    alphas
        .iter()
        .zip(sizes)
        .map(|(&a, &n)| n as f64 / total as f64 * gamma_cdf(r, x / a.exp()))
        .sum()
}

/// Root of `mixture_cdf(x) = p` by bisection.
pub fn true_mixture_quantile(alphas: &[f64], sizes: &[usize], r: f64, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(FedError::InvalidInput(format!(
            "probability {p} outside (0, 1)"
        )));
    }
    if alphas.len() != sizes.len() || alphas.is_empty() {
        return Err(FedError::InvalidInput(
            "one alpha per center size required".into(),
        ));
    }
    let cdf = |x: f64| mixture_cdf(alphas, sizes, r, x);
    let mut hi = 1.0;
    while cdf(hi) <= p {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if !(mid > lo && mid < hi) {
            break;
        }
        let f = cdf(mid);
        if (f - p).abs() <= 1e-13 {
            return Ok(mid);
        }
        if f < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn run_pool<R: Send>(
    threads: Option<usize>,
    n: usize,
    f: impl Fn(u64) -> Result<R> + Sync + Send,
) -> Result<Vec<R>> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| FedError::InvalidInput(format!("thread pool: {e}")))?;
    pool.install(|| (0..n as u64).into_par_iter().map(&f).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueRecord {
    pub replicate: u64,
    pub method: TestMethod,
    pub statistic: f64,
    pub p_value: f64,
    /// `log(p / p_combined)` on the same replicate.
    pub log_ratio: f64,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
}

fn log_ratio(p: f64, base: f64) -> f64 {
    (p.max(f64::MIN_POSITIVE) / base.max(f64::MIN_POSITIVE)).ln()
}

/// Runs one replicate of the testing experiment for `methods`.
pub fn test_replicate(
    cfg: &TestSimConfig,
    replicate: u64,
    methods: &[TestMethod],
) -> Result<Vec<PValueRecord>> {
    let data = gen_test_data(cfg, replicate)?;
    let sided = cfg.sidedness;
    let combined = mwu_combined(&data.centers, sided)?;
    let mut coord = Coordinator::from_samples(data.centers, cfg.k)?;
    let needs_stats = methods.iter().any(|m| {
        matches!(
            m,
            TestMethod::Sum | TestMethod::Weighted | TestMethod::Fisher
        )
    });
    let stats = if needs_stats {
        coord.collect_center_stats(sided)?
    } else {
        Vec::new()
    };
    let mut out = Vec::with_capacity(methods.len());
    for &m in methods {
        let r = match m {
            TestMethod::Combined => combined.clone(),
            TestMethod::Sum => t_sum(&stats, sided)?,
            TestMethod::Weighted => t_weighted(&stats, sided)?,
            TestMethod::Fisher => {
                let p: Vec<f64> = stats.iter().map(|s| s.p).collect();
                fisher_combine(&p, sided)?
            }
            TestMethod::FederatedTable => {
                let settings = TableSettings {
                    k: cfg.k,
                    policy: ExtremePolicy::Buffer,
                    seed: table_seed(cfg.seed, replicate),
                };
                let joined =
                    coord.run_table_protocol(settings.k, settings.policy, settings.seed)?;
                mwu_federated_table(&joined.table, sided)?
            }
        };
        out.push(PValueRecord {
            replicate,
            method: m,
            statistic: r.statistic,
            p_value: r.p_value,
            log_ratio: log_ratio(r.p_value, combined.p_value),
            alphas: data.alphas.clone(),
            betas: data.betas.clone(),
        });
    }
    Ok(out)
}

pub fn run_testing_experiment(
    cfg: &TestSimConfig,
    methods: &[TestMethod],
    threads: Option<usize>,
) -> Result<Vec<PValueRecord>> {
    cfg.sizes()?;
    let per = run_pool(threads, cfg.replicates, |i| test_replicate(cfg, i, methods))?;
    Ok(per.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub replicate: u64,
    pub method: QuantileMethod,
    pub p: f64,
    pub estimate: f64,
    pub truth: f64,
    /// `(estimate − truth) / √r`.
    pub error: f64,
    pub rounds: usize,
    pub alphas: Vec<f64>,
}

/// Runs one replicate of the quantile experiment.
pub fn quantile_replicate(
    cfg: &GammaSimConfig,
    replicate: u64,
    methods: &[QuantileMethod],
    probs: &[f64],
) -> Result<Vec<ErrorRecord>> {
    let data = gen_gamma_data(cfg, replicate)?;
    let sizes = cfg.sizes()?;
    let truths = probs
        .iter()
        .map(|&p| true_mixture_quantile(&data.alphas, &sizes, cfg.r, p))
        .collect::<Result<Vec<_>>>()?;
    let samples = data
        .centers
        .into_iter()
        .enumerate()
        .map(|(l, v)| GroupedSample::single(format!("c{:02}", l + 1), v))
        .collect::<Result<Vec<_>>>()?;
    let mut coord = Coordinator::from_samples(samples, cfg.k)?;
    let settings = TableSettings {
        k: cfg.k,
        policy: ExtremePolicy::Buffer,
        seed: table_seed(cfg.seed, replicate),
    };
    let norm = cfg.r.sqrt();
    let mut out = Vec::with_capacity(methods.len() * probs.len());
    for &m in methods {
        let res = coord.run_quantile_protocol(m, probs, Group::X, settings)?;
        for (row, &truth) in res.rows.iter().zip(&truths) {
            out.push(ErrorRecord {
                replicate,
                method: m,
                p: row.p,
                estimate: row.value,
                truth,
                error: (row.value - truth) / norm,
                rounds: res.rounds,
                alphas: data.alphas.clone(),
            });
        }
    }
    Ok(out)
}

pub fn run_quantile_experiment(
    cfg: &GammaSimConfig,
    methods: &[QuantileMethod],
    probs: &[f64],
    threads: Option<usize>,
) -> Result<Vec<ErrorRecord>> {
    cfg.sizes()?;
    crate::quantile::validate_probs(probs)?;
    let per = run_pool(threads, cfg.replicates, |i| {
        quantile_replicate(cfg, i, methods, probs)
    })?;
    Ok(per.into_iter().flatten().collect())
}

/// Bias/SD/MSE summary of normalized errors.
///
/// `mse = bias² + sd²` with the `n − 1` sample SD, so the plain mean of
/// squared errors equals `mse − sd²/n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub shape: f64,
    pub centers: usize,
    pub method: QuantileMethod,
    pub p: f64,
    pub n: usize,
    pub bias: f64,
    pub sd: f64,
    pub mse: f64,
    /// `bias² / sd²`; infinite for nonzero bias with zero spread.
    pub bias2_over_var: f64,
}

pub fn error_stats(errors: &[f64]) -> (f64, f64, f64, f64) {
    let n = errors.len() as f64;
    let bias = errors.iter().sum::<f64>() / n;
    let var = if errors.len() > 1 {
        errors.iter().map(|e| (e - bias).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let sd = var.sqrt();
    let ratio = if var > 0.0 {
        bias * bias / var
    } else if bias != 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    (bias, sd, bias * bias + var, ratio)
}

/// Groups by `(method, p)` in first-seen method order and increasing `p`.
pub fn summarize_errors(cfg: &GammaSimConfig, records: &[ErrorRecord]) -> Vec<ErrorSummary> {
    let mut order: Vec<QuantileMethod> = Vec::new();
    let mut groups: BTreeMap<(usize, u64), Vec<f64>> = BTreeMap::new();
    for r in records {
        let mi = match order.iter().position(|&m| m == r.method) {
            Some(i) => i,
            None => {
                order.push(r.method);
                order.len() - 1
            }
        };
        groups.entry((mi, r.p.to_bits())).or_default().push(r.error);
    }
    groups
        .into_iter()
        .map(|((mi, pbits), errs)| {
            let (bias, sd, mse, ratio) = error_stats(&errs);
            ErrorSummary {
                shape: cfg.r,
                centers: cfg.centers,
                method: order[mi],
                p: f64::from_bits(pbits),
                n: errs.len(),
                bias,
                sd,
                mse,
                bias2_over_var: ratio,
            }
        })
        .collect()
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub fn sample_quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Kolmogorov-Smirnov distance of a sample from Uniform(0, 1).
pub fn ks_uniform(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let x = x.clamp(0.0, 1.0);
            ((i + 1) as f64 / n - x).max(x - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueSummary {
    pub method: TestMethod,
    pub n: usize,
    pub median: f64,
    pub q25: f64,
    pub frac_below_05: f64,
    pub frac_below_01: f64,
    pub ks_uniform: f64,
    pub median_log_ratio: f64,
}

pub fn summarize_pvalues(records: &[PValueRecord]) -> Vec<PValueSummary> {
    let mut order: Vec<TestMethod> = Vec::new();
    for r in records {
        if !order.contains(&r.method) {
            order.push(r.method);
        }
    }
    order
        .into_iter()
        .map(|m| {
            let mut p: Vec<f64> = records
                .iter()
                .filter(|r| r.method == m)
                .map(|r| r.p_value)
                .collect();
            let mut lr: Vec<f64> = records
                .iter()
                .filter(|r| r.method == m)
                .map(|r| r.log_ratio)
                .collect();
            p.sort_by(|a, b| a.total_cmp(b));
            lr.sort_by(|a, b| a.total_cmp(b));
            let n = p.len() as f64;
            PValueSummary {
                method: m,
                n: p.len(),
                median: sample_quantile(&p, 0.5),
                q25: sample_quantile(&p, 0.25),
                frac_below_05: p.iter().filter(|&&x| x < 0.05).count() as f64 / n,
                frac_below_01: p.iter().filter(|&&x| x < 0.01).count() as f64 / n,
                ks_uniform: ks_uniform(&p),
                median_log_ratio: sample_quantile(&lr, 0.5),
            }
        })
        .collect()
}

fn join_floats(v: &[f64]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

fn csv_error(e: csv::Error) -> FedError {
    FedError::InvalidInput(format!("csv: {e}"))
}

pub fn pvalue_records_csv(records: &[PValueRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "replicate",
        "method",
        "statistic",
        "p_value",
        "log_ratio",
        "alphas",
        "betas",
    ])
    .map_err(csv_error)?;
    for r in records {
        w.write_record([
            r.replicate.to_string(),
            r.method.name().to_string(),
            r.statistic.to_string(),
            r.p_value.to_string(),
            r.log_ratio.to_string(),
            join_floats(&r.alphas),
            join_floats(&r.betas),
        ])
        .map_err(csv_error)?;
    }
    finish_csv(w)
}

pub fn pvalue_summary_csv(summary: &[PValueSummary]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "method",
        "n",
        "median",
        "q25",
        "frac_below_0.05",
        "frac_below_0.01",
        "ks_uniform",
        "median_log_ratio",
    ])
    .map_err(csv_error)?;
    for s in summary {
        w.write_record([
            s.method.name().to_string(),
            s.n.to_string(),
            s.median.to_string(),
            s.q25.to_string(),
            s.frac_below_05.to_string(),
            s.frac_below_01.to_string(),
            s.ks_uniform.to_string(),
            s.median_log_ratio.to_string(),
        ])
        .map_err(csv_error)?;
    }
    finish_csv(w)
}

pub fn error_records_csv(records: &[ErrorRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "replicate",
        "method",
        "p",
        "estimate",
        "truth",
        "error",
        "rounds",
        "alphas",
    ])
    .map_err(csv_error)?;
    for r in records {
        w.write_record([
            r.replicate.to_string(),
            r.method.name().to_string(),
            r.p.to_string(),
            r.estimate.to_string(),
            r.truth.to_string(),
            r.error.to_string(),
            r.rounds.to_string(),
            join_floats(&r.alphas),
        ])
        .map_err(csv_error)?;
    }
    finish_csv(w)
}

pub fn error_summary_csv(summary: &[ErrorSummary]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "shape",
        "centers",
        "method",
        "p",
        "n",
        "bias",
        "sd",
        "mse",
        "bias2_over_var",
    ])
    .map_err(csv_error)?;
    for s in summary {
        w.write_record([
            s.shape.to_string(),
            s.centers.to_string(),
            s.method.name().to_string(),
            s.p.to_string(),
            s.n.to_string(),
            s.bias.to_string(),
            s.sd.to_string(),
            s.mse.to_string(),
            s.bias2_over_var.to_string(),
        ])
        .map_err(csv_error)?;
    }
    finish_csv(w)
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| FedError::InvalidInput(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| FedError::InvalidInput(e.to_string()))
}

/// Run metadata written next to the CSV outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta<C> {
    pub experiment: String,
    pub version: String,
    pub seed: u64,
    pub config: C,
    pub methods: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub probs: Vec<f64>,
}

/// Writes `records.csv`, `summary.csv` and `meta.json` into `dir`.
pub fn write_outputs<C: Serialize>(
    dir: &Path,
    records_csv: &str,
    summary_csv: &str,
    meta: &RunMeta<C>,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("records.csv"), records_csv)?;
    std::fs::write(dir.join("summary.csv"), summary_csv)?;
    let mut f = std::fs::File::create(dir.join("meta.json"))?;
    serde_json::to_writer_pretty(&mut f, meta)?;
    f.write_all(b"\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_sizes_sum_to_1500() {
        for l in [3, 5, 10] {
            assert_eq!(
                standard_center_sizes(l).unwrap().iter().sum::<usize>(),
                1500
            );
        }
        assert_eq!(standard_center_sizes(3).unwrap(), vec![698, 476, 326]);
        assert!(standard_center_sizes(4).is_none());
    }

    #[test]
    fn gamma_sigma_alpha_example() {
        let cfg = GammaSimConfig::new(4.0, 3);
        assert!((gamma_quantile(4.0f64, 0.5) - 3.6721).abs() < 1e-4);
        assert!((cfg.sigma_alpha() - 0.0530).abs() < 1e-4);
        let flat = GammaSimConfig { phi: 0.0, ..cfg };
        assert_eq!(flat.sigma_alpha(), 0.0);
    }

    #[test]
    fn truth_inverts_mixture_cdf() {
        let sizes = [698, 476, 326];
        for alphas in [[0.0, 0.0, 0.0], [0.05, -0.1, 0.02]] {
            let mut prev = 0.0;
            for p in DEFAULT_PROBS {
                let q = true_mixture_quantile(&alphas, &sizes, 4.0, p).unwrap();
                assert!((mixture_cdf(&alphas, &sizes, 4.0, q) - p).abs() < 1e-10);
                assert!(q > prev);
                prev = q;
            }
        }
        let q = true_mixture_quantile(&[0.0], &[10], 4.0, 0.5).unwrap();
        assert!((q - gamma_quantile(4.0, 0.5)).abs() < 1e-9);
    }

    #[test]
    fn generated_data_follow_config() {
        let mut cfg = TestSimConfig::new(3, 0.0, 0.0, 0.0);
        cfg.seed = 5;
        let a = gen_test_data(&cfg, 7).unwrap();
        assert_eq!(
            a.centers.iter().map(|c| c.x.len()).collect::<Vec<_>>(),
            vec![698, 476, 326]
        );
        assert!(a.alphas.iter().all(|&x| x == 0.0) && a.betas.iter().all(|&x| x == 0.0));
        assert_eq!(a, gen_test_data(&cfg, 7).unwrap());
        assert_ne!(a, gen_test_data(&cfg, 8).unwrap());
        let g = gen_gamma_data(&GammaSimConfig::new(4.0, 5), 0).unwrap();
        assert!(g.centers.iter().flatten().all(|&x| x > 0.0));
    }

    #[test]
    fn gamma_sampler_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for shape in [0.5, 4.0, 10.0] {
            let n = 40_000;
            let v: Vec<f64> = (0..n).map(|_| gamma_variate(&mut rng, shape)).collect();
            let mean = v.iter().sum::<f64>() / n as f64;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!(
                (mean - shape).abs() < 4.0 * (shape / n as f64).sqrt(),
                "shape {shape}: mean {mean}"
            );
            assert!((var / shape - 1.0).abs() < 0.05, "shape {shape}: var {var}");
        }
    }

    #[test]
    fn normal_sampler_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 40_000;
        let v: Vec<f64> = (0..n).map(|_| std_normal(&mut rng)).collect();
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.02 && (var - 1.0).abs() < 0.03);
    }

    #[test]
    fn error_summary_conventions() {
        let (bias, sd, mse, ratio) = error_stats(&[0.3, 0.3, 0.3]);
        assert!((bias - 0.3).abs() < 1e-15);
        assert_eq!(sd, 0.0);
        assert!((mse - 0.09).abs() < 1e-15);
        assert!(ratio.is_infinite());
        let (bias, _, _, ratio) = error_stats(&[0.2, -0.2, 0.2, -0.2]);
        assert_eq!((bias, ratio), (0.0, 0.0));
        let e = [0.1, -0.4, 0.25, 0.05, -0.02, 0.3];
        let (_, sd, mse, _) = error_stats(&e);
        let mean_sq = e.iter().map(|x| x * x).sum::<f64>() / e.len() as f64;
        assert!((mean_sq - (mse - sd * sd / e.len() as f64)).abs() < 1e-15);
    }

    #[test]
    fn ks_and_quantiles() {
        let u: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        assert!((ks_uniform(&u) - 0.005).abs() < 1e-12);
        assert!((ks_uniform(&[0.0; 10]) - 1.0).abs() < 1e-12);
        assert_eq!(sample_quantile(&[1.0, 2.0, 3.0, 4.0], 0.5), 2.5);
        assert_eq!(sample_quantile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.25), 2.0);
    }

    #[test]
    fn small_experiments_run_and_are_thread_independent() {
        let mut cfg = TestSimConfig::new(3, 0.0, 0.1, 0.0);
        cfg.replicates = 4;
        cfg.seed = 1;
        let a = run_testing_experiment(&cfg, &TestMethod::ALL, Some(1)).unwrap();
        let b = run_testing_experiment(&cfg, &TestMethod::ALL, Some(3)).unwrap();
        assert_eq!(
            pvalue_records_csv(&a).unwrap(),
            pvalue_records_csv(&b).unwrap()
        );
        assert_eq!(a.len(), 4 * 5);
        assert!(a.iter().all(|r| (0.0..=1.0).contains(&r.p_value)));

        let mut g = GammaSimConfig::new(4.0, 3);
        g.replicates = 2;
        let e = run_quantile_experiment(&g, &QuantileMethod::ALL, &DEFAULT_PROBS, Some(2)).unwrap();
        assert_eq!(e.len(), 2 * 4 * 5);
        assert!(e.iter().all(|r| r.error.is_finite()));
        let s = summarize_errors(&g, &e);
        assert_eq!(s.len(), 4 * 5);
    }

    #[test]
    fn replicate_unchanged_by_replicate_count() {
        let mut cfg = TestSimConfig::new(5, 0.05, 0.1, 0.05);
        cfg.replicates = 2;
        let short = run_testing_experiment(&cfg, &[TestMethod::Weighted], Some(2)).unwrap();
        cfg.replicates = 5;
        let long = run_testing_experiment(&cfg, &[TestMethod::Weighted], Some(2)).unwrap();
        assert_eq!(short[..], long[..2]);
    }
}
