//! Monte Carlo experiments over the simulation settings and bootstrap
//! stability of rejection sets.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DartError, Result};
use crate::metrics::{fdp, power};
use crate::rng::SeededRng;
use crate::simulation::{
    gen_layout, gen_theta, simulate_pvalues, wald_linear_pvalues, FeatureLayout, RegressionDataset,
    Setting, SignalField,
};
use crate::testing::{run_bh, run_dart};
use crate::tree::{build_tree, AggregationTree};
use crate::tuning::{default_l, default_m, select_g};
use crate::types::{validate_alpha, ChildCap, DistanceMatrix, PValueVector};

/// Minimal top-layer node count used when choosing the layer count.
pub const DEFAULT_MIN_TOP_NODES: usize = 30;

/// Substream index reserved for the shared layout in fixed-layout mode.
const LAYOUT_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Tuning {
    /// M = 3, layer count from the feature count, thresholds by grid search.
    Auto,
    Explicit {
        max_children: ChildCap,
        layers: usize,
        thresholds: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub setting: Setting,
    pub n: usize,
    pub m: usize,
    pub alphas: Vec<f64>,
    pub replications: usize,
    pub seed: u64,
    /// One layout, signal and tree shared by all replications.
    pub fixed_layout: bool,
    /// Force every effect to zero.
    pub null_signal: bool,
    pub tuning: Tuning,
}

impl ExperimentSpec {
    pub fn new(setting: Setting, n: usize, m: usize, seed: u64) -> Self {
        Self {
            setting,
            n,
            m,
            alphas: vec![0.05, 0.1, 0.15, 0.2],
            replications: 200,
            seed,
            fixed_layout: false,
            null_signal: false,
            tuning: Tuning::Auto,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(DartError::Config("replication count must be at least 1".into()));
        }
        if self.alphas.is_empty() {
            return Err(DartError::Config("at least one alpha is required".into()));
        }
        for &a in &self.alphas {
            validate_alpha(a)?;
        }
        if self.n == 0 || self.m == 0 {
            return Err(DartError::Config("n and m must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// Cumulative rejections of layers 1..=layer.
    Dart { layer: usize },
    Bh,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Dart { layer } => write!(f, "dart-layer-{layer}"),
            Method::Bh => write!(f, "bh"),
        }
    }
}

impl FromStr for Method {
    type Err = DartError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "bh" {
            return Ok(Method::Bh);
        }
        s.strip_prefix("dart-layer-")
            .and_then(|l| l.parse().ok())
            .filter(|&l| l >= 1)
            .map(|layer| Method::Dart { layer })
            .ok_or_else(|| DartError::Validation(format!("unknown method '{s}'")))
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Fdr,
    Sensitivity,
}

/// One method at one level in one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub method: Method,
    pub alpha: f64,
    pub rejections: usize,
    pub alternatives: usize,
    pub fdp: f64,
    /// Empty when the replication has no alternative features.
    pub sensitivity: Option<f64>,
}

/// Mean and Monte Carlo standard error of one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub setting: Setting,
    pub method: Method,
    pub alpha: f64,
    pub metric: Metric,
    pub mean: Option<f64>,
    pub se: Option<f64>,
    /// Replications the mean is taken over.
    pub replications: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub spec: ExperimentSpec,
    pub layers: usize,
    /// Thresholds of the shared tree in fixed-layout mode.
    pub thresholds: Option<Vec<f64>>,
    /// Alternative count of the shared signal in fixed-layout mode.
    pub alternatives: Option<usize>,
    pub rows: Vec<SummaryRow>,
    pub records: Vec<ReplicationRecord>,
}

impl ExperimentReport {
    pub fn row(&self, method: Method, alpha: f64, metric: Metric) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.alpha == alpha && r.metric == metric)
    }

    /// Mean of `metric`, or an error naming the missing cell.
    pub fn mean(&self, method: Method, alpha: f64, metric: Metric) -> Result<f64> {
        self.row(method, alpha, metric)
            .and_then(|r| r.mean)
            .ok_or_else(|| {
                DartError::UndefinedMetric(format!("no {metric:?} for {method} at alpha {alpha}"))
            })
    }

    pub fn se(&self, method: Method, alpha: f64, metric: Metric) -> Result<f64> {
        self.row(method, alpha, metric)
            .and_then(|r| r.se)
            .ok_or_else(|| {
                DartError::UndefinedMetric(format!("no {metric:?} for {method} at alpha {alpha}"))
            })
    }

    pub fn summary_csv(&self) -> Result<String> {
        write_csv(&self.rows)
    }

    pub fn records_csv(&self) -> Result<String> {
        write_csv(&self.records)
    }

    pub fn summary_from_csv(text: &str) -> Result<Vec<SummaryRow>> {
        read_csv(text)
    }

    pub fn records_from_csv(text: &str) -> Result<Vec<ReplicationRecord>> {
        read_csv(text)
    }
}

pub(crate) fn write_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| DartError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub(crate) fn read_csv<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize().map(|row| row.map_err(DartError::from)).collect()
}

/// Layout, signal and tree for one design.
struct Design {
    layout: FeatureLayout,
    signal: SignalField,
    tree: AggregationTree,
}

fn make_design(spec: &ExperimentSpec, rng: &mut SeededRng) -> Result<Design> {
    let layout = gen_layout(spec.m, rng)?;
    let signal = if spec.null_signal {
        SignalField::null(spec.m)
    } else {
        gen_theta(spec.setting, spec.n, spec.m, &layout.distances)?
    };
    let tree = tune_and_build(&layout.distances, spec.n, &spec.tuning)?;
    Ok(Design {
        layout,
        signal,
        tree,
    })
}

/// Build the tree under `tuning`, running the threshold search when asked.
pub fn tune_and_build(d: &DistanceMatrix, n: usize, tuning: &Tuning) -> Result<AggregationTree> {
    match tuning {
        Tuning::Auto => {
            let mc = default_m();
            let layers = default_l(d.len(), mc, DEFAULT_MIN_TOP_NODES)?;
            let cap = ChildCap::Bounded(mc);
            let thresholds = if layers >= 2 {
                select_g(d, n, cap, layers)?.0
            } else {
                Vec::new()
            };
            build_tree(d, cap, layers, &thresholds)
        }
        Tuning::Explicit {
            max_children,
            layers,
            thresholds,
        } => build_tree(d, *max_children, *layers, thresholds),
    }
}

fn evaluate(
    rep: usize,
    tree: &AggregationTree,
    p: &PValueVector,
    signal: &SignalField,
    alphas: &[f64],
) -> Result<Vec<ReplicationRecord>> {
    let truth = &signal.truth;
    let n_alt = truth.n_alt();
    let record = |method, alpha, rejected: &[usize]| ReplicationRecord {
        replication: rep,
        method,
        alpha,
        rejections: rejected.len(),
        alternatives: n_alt,
        fdp: fdp(rejected, truth),
        sensitivity: power(rejected, truth).ok(),
    };
    let mut out = Vec::new();
    for &alpha in alphas {
        let outcome = run_dart(tree, p, alpha)?;
        for layer in 1..=tree.layer_count() {
            out.push(record(Method::Dart { layer }, alpha, &outcome.rejected_through(layer)));
        }
        out.push(record(Method::Bh, alpha, &run_bh(p, alpha)?));
    }
    Ok(out)
}

fn mean_se(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (Some(mean), Some(0.0));
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some((var / n).sqrt()))
}

/// Run every replication of `spec` and summarize.
///
/// Replications run in parallel on the current rayon pool; each uses its
/// own substream, so the report does not depend on scheduling.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let shared = if spec.fixed_layout {
        let mut rng = SeededRng::substream(spec.seed, LAYOUT_STREAM);
        Some(make_design(spec, &mut rng)?)
    } else {
        None
    };
    if let Some(d) = &shared {
        log::info!(
            "fixed layout: {} alternatives, thresholds {:?}",
            d.signal.truth.n_alt(),
            d.tree.thresholds()
        );
    }

    let per_rep: Vec<Result<(usize, Vec<ReplicationRecord>)>> = (0..spec.replications)
        .into_par_iter()
        .map(|rep| {
            let mut rng = SeededRng::substream(spec.seed, rep as u64);
            let run = |rng: &mut SeededRng| -> Result<(usize, Vec<ReplicationRecord>)> {
                let own;
                let design = match &shared {
                    Some(d) => d,
                    None => {
                        own = make_design(spec, rng)?;
                        &own
                    }
                };
                let p = simulate_pvalues(spec.setting, &design.signal, spec.n, rng)?;
                let recs = evaluate(rep, &design.tree, &p, &design.signal, &spec.alphas)?;
                Ok((design.tree.layer_count(), recs))
            };
            run(&mut rng).map_err(|e| DartError::Replication {
                replication: rep,
                source: Box::new(e),
            })
        })
        .collect();

    let mut records = Vec::new();
    let mut layers = 0;
    for r in per_rep {
        let (l, recs) = r?;
        layers = layers.max(l);
        records.extend(recs);
    }

    let mut methods: Vec<Method> = (1..=layers).map(|layer| Method::Dart { layer }).collect();
    methods.push(Method::Bh);
    let mut rows = Vec::new();
    for &alpha in &spec.alphas {
        for &method in &methods {
            let cell: Vec<&ReplicationRecord> = records
                .iter()
                .filter(|r| r.method == method && r.alpha == alpha)
                .collect();
            if cell.is_empty() {
                continue;
            }
            let fdps: Vec<f64> = cell.iter().map(|r| r.fdp).collect();
            let sens: Vec<f64> = cell.iter().filter_map(|r| r.sensitivity).collect();
            let (mean, se) = mean_se(&fdps);
            rows.push(SummaryRow {
                setting: spec.setting,
                method,
                alpha,
                metric: Metric::Fdr,
                mean,
                se,
                replications: fdps.len(),
            });
            let (mean, se) = mean_se(&sens);
            rows.push(SummaryRow {
                setting: spec.setting,
                method,
                alpha,
                metric: Metric::Sensitivity,
                mean,
                se,
                replications: sens.len(),
            });
        }
    }
    Ok(ExperimentReport {
        spec: spec.clone(),
        layers,
        thresholds: shared.as_ref().map(|d| d.tree.thresholds().to_vec()),
        alternatives: shared.as_ref().map(|d| d.signal.truth.n_alt()),
        rows,
        records,
    })
}

/// Shared layout, signal and tuned tree of a fixed-layout experiment.
pub fn fixed_design(spec: &ExperimentSpec) -> Result<(FeatureLayout, SignalField, AggregationTree)> {
    let mut rng = SeededRng::substream(spec.seed, LAYOUT_STREAM);
    let d = make_design(spec, &mut rng)?;
    Ok((d.layout, d.signal, d.tree))
}

/// Per-feature rejection rates over bootstrap resamples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub rates: Vec<f64>,
    pub requested: usize,
    pub effective: usize,
    /// Share of features with rate at most 0.1.
    pub low_share: f64,
    /// Share of features with rate above 0.8.
    pub high_share: f64,
}

#[derive(Serialize, Deserialize)]
struct RateRow {
    feature: usize,
    rejection_rate: f64,
}

impl StabilityReport {
    fn from_counts(counts: &[usize], requested: usize, effective: usize) -> Self {
        let rates: Vec<f64> = counts.iter().map(|&c| c as f64 / effective as f64).collect();
        let m = rates.len().max(1) as f64;
        let low_share = rates.iter().filter(|&&r| r <= 0.1).count() as f64 / m;
        let high_share = rates.iter().filter(|&&r| r > 0.8).count() as f64 / m;
        Self {
            rates,
            requested,
            effective,
            low_share,
            high_share,
        }
    }

    /// One row per feature: 1-based feature label and rejection rate.
    pub fn to_csv(&self) -> Result<String> {
        let rows: Vec<RateRow> = self
            .rates
            .iter()
            .enumerate()
            .map(|(i, &r)| RateRow {
                feature: i + 1,
                rejection_rate: r,
            })
            .collect();
        write_csv(&rows)
    }

    pub fn rates_from_csv(text: &str) -> Result<Vec<f64>> {
        let rows: Vec<RateRow> = read_csv(text)?;
        Ok(rows.into_iter().map(|r| r.rejection_rate).collect())
    }
}

/// Resample `n` subjects with replacement `b` times and record how often
/// each of `m` features is rejected by `pipeline`.
///
/// A resample whose pipeline fails numerically (for example a design column
/// that became constant) is skipped and logged; the report carries the
/// number of resamples actually used.
pub fn bootstrap_with<F>(n: usize, m: usize, b: usize, seed: u64, pipeline: F) -> Result<StabilityReport>
where
    F: Fn(&[usize]) -> Result<Vec<usize>> + Sync,
{
    if n == 0 || b == 0 {
        return Err(DartError::Config("bootstrap needs n >= 1 and B >= 1".into()));
    }
    let results: Vec<Result<Option<Vec<usize>>>> = (0..b)
        .into_par_iter()
        .map(|k| {
            let mut rng = SeededRng::substream(seed, k as u64);
            let rows: Vec<usize> = (0..n).map(|_| rng.index(n)).collect();
            match pipeline(&rows) {
                Ok(rej) => Ok(Some(rej)),
                Err(DartError::Numeric(msg)) => {
                    log::warn!("bootstrap resample {k} skipped: {msg}");
                    Ok(None)
                }
                Err(e) => Err(DartError::Replication {
                    replication: k,
                    source: Box::new(e),
                }),
            }
        })
        .collect();
    let mut counts = vec![0usize; m];
    let mut effective = 0;
    for r in results {
        if let Some(rej) = r? {
            effective += 1;
            for f in rej {
                if f >= m {
                    return Err(DartError::InvalidArgument(format!(
                        "pipeline rejected feature {} of {m}",
                        f + 1
                    )));
                }
                counts[f] += 1;
            }
        }
    }
    if effective == 0 {
        return Err(DartError::Numeric("every bootstrap resample was degenerate".into()));
    }
    Ok(StabilityReport::from_counts(&counts, b, effective))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BootMethod {
    Dart,
    Bh,
}

impl FromStr for BootMethod {
    type Err = DartError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dart" => Ok(BootMethod::Dart),
            "bh" => Ok(BootMethod::Bh),
            _ => Err(DartError::Config(format!("unknown method '{s}', expected dart or bh"))),
        }
    }
}

/// Bootstrap of the linear-model pipeline: Wald p-values for contrast `q`,
/// then DART on the fixed `tree` or BH.
pub fn bootstrap_linear(
    data: &RegressionDataset,
    q: &[f64],
    tree: Option<&AggregationTree>,
    method: BootMethod,
    alpha: f64,
    b: usize,
    seed: u64,
) -> Result<StabilityReport> {
    validate_alpha(alpha)?;
    if method == BootMethod::Dart && tree.is_none() {
        return Err(DartError::Config("the dart method needs a tree".into()));
    }
    if let Some(t) = tree {
        if t.feature_count() != data.features() {
            return Err(DartError::DimensionMismatch {
                what: "tree features versus outcome columns",
                expected: t.feature_count(),
                found: data.features(),
            });
        }
    }
    bootstrap_with(data.subjects(), data.features(), b, seed, |rows| {
        let p = wald_linear_pvalues(&data.resample(rows), q)?.pvalues;
        match (method, tree) {
            (BootMethod::Dart, Some(t)) => Ok(run_dart(t, &p, alpha)?.rejected()),
            _ => run_bh(&p, alpha),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> ExperimentSpec {
        let mut spec = ExperimentSpec::new(Setting::SE1, 90, 100, 7);
        spec.replications = 8;
        spec.alphas = vec![0.1];
        spec.fixed_layout = true;
        spec
    }

    #[test]
    fn deterministic_and_bounded() {
        let spec = small_spec();
        let a = run_experiment(&spec).unwrap();
        let b = run_experiment(&spec).unwrap();
        assert_eq!(a, b);
        for r in &a.records {
            assert!((0.0..=1.0).contains(&r.fdp));
            if let Some(s) = r.sensitivity {
                assert!((0.0..=1.0).contains(&s));
            }
        }
        // cumulative sensitivity grows with the layer
        for rep in 0..spec.replications {
            let s: Vec<f64> = (1..=a.layers)
                .map(|l| {
                    a.records
                        .iter()
                        .find(|r| r.replication == rep && r.method == Method::Dart { layer: l })
                        .unwrap()
                        .sensitivity
                        .unwrap()
                })
                .collect();
            assert!(s.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn csv_round_trip() {
        let rep = run_experiment(&small_spec()).unwrap();
        let back = ExperimentReport::summary_from_csv(&rep.summary_csv().unwrap()).unwrap();
        assert_eq!(back, rep.rows);
        let back = ExperimentReport::records_from_csv(&rep.records_csv().unwrap()).unwrap();
        assert_eq!(back, rep.records);
    }

    #[test]
    fn single_replication_equals_record() {
        let mut spec = small_spec();
        spec.replications = 1;
        let rep = run_experiment(&spec).unwrap();
        let rec = rep.records.iter().find(|r| r.method == Method::Bh).unwrap();
        assert_eq!(rep.mean(Method::Bh, 0.1, Metric::Fdr).unwrap(), rec.fdp);
        assert_eq!(rep.se(Method::Bh, 0.1, Metric::Fdr).unwrap(), 0.0);
    }

    #[test]
    fn null_signal_has_no_sensitivity() {
        let mut spec = small_spec();
        spec.null_signal = true;
        let rep = run_experiment(&spec).unwrap();
        let row = rep.row(Method::Bh, 0.1, Metric::Sensitivity).unwrap();
        assert_eq!(row.mean, None);
        assert_eq!(row.replications, 0);
    }

    #[test]
    fn method_labels() {
        assert_eq!(Method::Dart { layer: 2 }.to_string(), "dart-layer-2");
        assert_eq!("dart-layer-3".parse::<Method>().unwrap(), Method::Dart { layer: 3 });
        assert_eq!("bh".parse::<Method>().unwrap(), Method::Bh);
        assert!("dart-layer-0".parse::<Method>().is_err());
    }

    #[test]
    fn bootstrap_rejecting_nothing() {
        let rep = bootstrap_with(20, 5, 10, 1, |_| Ok(Vec::new())).unwrap();
        assert!(rep.rates.iter().all(|&r| r == 0.0));
        assert_eq!((rep.low_share, rep.high_share), (1.0, 0.0));
        assert_eq!(rep.effective, 10);
    }

    #[test]
    fn bootstrap_skips_degenerate() {
        let rep = bootstrap_with(20, 3, 10, 1, |rows| {
            if rows[0] % 2 == 0 {
                Err(DartError::Numeric("degenerate".into()))
            } else {
                Ok(vec![1])
            }
        })
        .unwrap();
        assert!(rep.effective < 10);
        assert_eq!(rep.rates[1], 1.0);
        let back = StabilityReport::rates_from_csv(&rep.to_csv().unwrap()).unwrap();
        assert_eq!(back, rep.rates);
    }

    #[test]
    fn bootstrap_strong_feature_is_stable() {
        let mut rng = SeededRng::new(4);
        let mut theta = vec![0.0; 20];
        theta[3] = 8.0 / 90f64.sqrt();
        let data = crate::simulation::gen_dataset_se4(&theta, 90, &mut rng).unwrap();
        let rep = bootstrap_linear(&data, &[0.0, 1.0, 0.0], None, BootMethod::Bh, 0.1, 200, 9).unwrap();
        assert!(rep.rates[3] > 0.8);
    }
}
