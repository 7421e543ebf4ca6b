//! Synthetic data for the five simulation settings.
//!
//! Features sit at random points in the plane. Two smooth signal fields
//! built from Gaussian bumps around anchor features decide which features
//! are alternative and how strong they are. SE1 to SE3 draw test statistics
//! directly; SE4 fits a linear model and SE5 a Cox model per feature.

pub mod cox;
pub mod ols;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{DartError, Result};
use crate::numeric::{norm_sf, normal_pdf};
use crate::rng::{laplace, noncentral_t5, SeededRng};
use crate::types::{DistanceMatrix, PValueVector, TruthAssignment};

pub use cox::{cox_fit, cox_wald_pvalues, gen_dataset_se5, CoxFit, SurvivalDataset};
pub use ols::{gen_dataset_se4, wald_linear_pvalues, RegressionDataset, WaldResult};

/// Signals at or below this value of the field are set to zero.
pub const SIGNAL_CUTOFF: f64 = 0.15;

/// Probability of the heavy-tailed component in SE2 and SE3.
pub const CONTAMINATION: f64 = 0.04;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Setting {
    SE1,
    SE2,
    SE3,
    SE4,
    SE5,
}

impl Setting {
    pub const ALL: [Setting; 5] = [Setting::SE1, Setting::SE2, Setting::SE3, Setting::SE4, Setting::SE5];

    /// Scale applied to the small (first) and large (second) signal field.
    fn scales(self) -> (f64, f64) {
        match self {
            Setting::SE1 => (1.0 / 2.0, 1.0 / 7.0),
            Setting::SE2 => (2.0 / 5.0, 2.0 / 13.0),
            Setting::SE3 => (1.0 / 3.0, 2.0 / 13.0),
            Setting::SE4 => (2.0, 5.0 / 6.0),
            Setting::SE5 => (4.0 / 5.0, 2.0 / 7.0),
        }
    }

    pub fn is_direct(self) -> bool {
        matches!(self, Setting::SE1 | Setting::SE2 | Setting::SE3)
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Setting {
    type Err = DartError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "SE1" => Ok(Setting::SE1),
            "SE2" => Ok(Setting::SE2),
            "SE3" => Ok(Setting::SE3),
            "SE4" => Ok(Setting::SE4),
            "SE5" => Ok(Setting::SE5),
            _ => Err(DartError::Config(format!("unknown setting '{s}', expected SE1..SE5"))),
        }
    }
}

/// Feature coordinates and their Euclidean distances.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLayout {
    pub coords: Vec<(f64, f64)>,
    pub distances: DistanceMatrix,
}

/// First coordinate N(0, 2) with 2 the variance, second Unif(0, 4).
pub fn gen_layout(m: usize, rng: &mut SeededRng) -> Result<FeatureLayout> {
    if m == 0 {
        return Err(DartError::InvalidArgument("layout needs at least one feature".into()));
    }
    let sd = 2f64.sqrt();
    let coords: Vec<(f64, f64)> = (0..m)
        .map(|_| {
            let x1 = sd * rng.std_normal();
            let x2 = 4.0 * rng.uniform();
            (x1, x2)
        })
        .collect();
    let distances = DistanceMatrix::euclidean(&coords);
    Ok(FeatureLayout { coords, distances })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Field {
    /// Bumps around features 22 and 7.
    Small,
    /// Bumps around features 156 and 7 plus spikes at every hundredth feature.
    Large,
}

impl Field {
    /// Field used for `m` features: the large one needs feature 156.
    pub fn for_features(m: usize) -> Field {
        if m >= 156 {
            Field::Large
        } else {
            Field::Small
        }
    }

    fn min_features(self) -> usize {
        match self {
            Field::Small => 22,
            Field::Large => 156,
        }
    }
}

// Densities of N(0, v) for v = 1, 0.1, 0.8, 0.05, variance parameterized.
fn phi(x: f64, var: f64) -> f64 {
    normal_pdf(x, var.sqrt()).expect("positive variance")
}

/// Signal field value at feature `i` (0-based).
pub fn eta(i: usize, d: &DistanceMatrix, field: Field) -> Result<f64> {
    let m = d.len();
    if m < field.min_features() {
        return Err(DartError::InvalidArgument(format!(
            "{field:?} field needs at least {} features, got {m}",
            field.min_features()
        )));
    }
    if i >= m {
        return Err(DartError::InvalidArgument(format!("feature {} out of range", i + 1)));
    }
    Ok(eta_unchecked(i, d, field))
}

fn eta_unchecked(i: usize, d: &DistanceMatrix, field: Field) -> f64 {
    match field {
        Field::Small => (2.0 * phi(d.get(21, i), 1.0) - 0.2).max(0.0) + phi(d.get(6, i), 0.1),
        Field::Large => {
            let spike = if (i + 1).is_multiple_of(100) && i < 1000 { 10.0 } else { 0.0 };
            (3.4 * phi(d.get(155, i), 0.8) - 0.8).max(0.0) + 3.0 * phi(d.get(6, i), 0.05) + spike
        }
    }
}

/// Effect sizes and the induced truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalField {
    pub theta: Vec<f64>,
    pub truth: TruthAssignment,
}

impl SignalField {
    pub fn null(m: usize) -> Self {
        Self {
            theta: vec![0.0; m],
            truth: TruthAssignment::from_flags(vec![false; m]),
        }
    }

    pub fn from_theta(theta: Vec<f64>) -> Self {
        let truth = TruthAssignment::from_flags(theta.iter().map(|&t| t != 0.0).collect());
        Self { theta, truth }
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }
}

/// Effect sizes for `setting`. The reference sizes are (90, 100) and
/// (300, 1000); any other size uses the field chosen by
/// [`Field::for_features`] with the matching scale, and logs a warning.
pub fn gen_theta(setting: Setting, n: usize, m: usize, d: &DistanceMatrix) -> Result<SignalField> {
    if d.len() != m {
        return Err(DartError::DimensionMismatch {
            what: "distance matrix versus feature count",
            expected: m,
            found: d.len(),
        });
    }
    let field = Field::for_features(m);
    if !matches!((n, m), (90, 100) | (300, 1000)) {
        log::warn!("({n}, {m}) is not a reference size; using the {field:?} field");
    }
    if m < field.min_features() {
        return Err(DartError::InvalidArgument(format!(
            "simulation settings need at least {} features, got {m}",
            field.min_features()
        )));
    }
    let (small, large) = setting.scales();
    let scale = match field {
        Field::Small => small,
        Field::Large => large,
    };
    let theta = (0..m)
        .map(|i| {
            let e = eta_unchecked(i, d, field);
            if e > SIGNAL_CUTOFF {
                scale * e
            } else {
                0.0
            }
        })
        .collect();
    Ok(SignalField::from_theta(theta))
}

/// Two-sided normal p-values for SE1 to SE3.
pub fn gen_pvalues_direct(
    setting: Setting,
    theta: &[f64],
    n: usize,
    rng: &mut SeededRng,
) -> Result<PValueVector> {
    if !setting.is_direct() {
        return Err(DartError::InvalidArgument(format!(
            "{setting} does not draw test statistics directly"
        )));
    }
    let root_n = (n as f64).sqrt();
    let values = theta
        .iter()
        .map(|&t| {
            let mu = root_n * t;
            let z = match setting {
                Setting::SE2 if rng.uniform() < CONTAMINATION => laplace(rng, mu, 1.0),
                Setting::SE3 if rng.uniform() < CONTAMINATION => noncentral_t5(rng, mu),
                _ => mu + rng.std_normal(),
            };
            (2.0 * norm_sf(z.abs())).min(1.0)
        })
        .collect();
    PValueVector::new(values)
}

/// P-values for any setting; SE4 and SE5 simulate and fit per-feature models.
pub fn simulate_pvalues(
    setting: Setting,
    signal: &SignalField,
    n: usize,
    rng: &mut SeededRng,
) -> Result<PValueVector> {
    match setting {
        Setting::SE4 => {
            let data = gen_dataset_se4(&signal.theta, n, rng)?;
            Ok(wald_linear_pvalues(&data, &[0.0, 1.0, 0.0])?.pvalues)
        }
        Setting::SE5 => {
            let data = gen_dataset_se5(&signal.theta, n, rng)?;
            Ok(cox_wald_pvalues(&data)?.0)
        }
        _ => gen_pvalues_direct(setting, &signal.theta, n, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ks_uniform(mut xs: Vec<f64>) -> f64 {
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        xs.iter()
            .enumerate()
            .map(|(i, &x)| (x - i as f64 / n).abs().max(((i + 1) as f64 / n - x).abs()))
            .fold(0.0, f64::max)
    }

    #[test]
    fn layout_moments_and_range() {
        let mut rng = SeededRng::new(3);
        let one = gen_layout(1, &mut rng).unwrap();
        assert_eq!(one.distances.get(0, 0), 0.0);
        let mut rng = SeededRng::new(4);
        let coords: Vec<(f64, f64)> = (0..100_000)
            .map(|_| (2f64.sqrt() * rng.std_normal(), 4.0 * rng.uniform()))
            .collect();
        let n = coords.len() as f64;
        let mean = coords.iter().map(|c| c.0).sum::<f64>() / n;
        let var = coords.iter().map(|c| (c.0 - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var / 2.0 - 1.0).abs() < 0.05);
        assert!(coords.iter().all(|c| (0.0..=4.0).contains(&c.1)));
        let lay = gen_layout(50, &mut rng).unwrap();
        let rebuilt = DistanceMatrix::euclidean(&lay.coords);
        assert_eq!(rebuilt, lay.distances);
    }

    #[test]
    fn eta_examples() {
        // feature 22 far from feature 7: only the first bump contributes
        let mut coords: Vec<(f64, f64)> = (0..30).map(|i| (100.0 + 50.0 * i as f64, 0.0)).collect();
        coords[6] = (-1000.0, 0.0);
        let d = DistanceMatrix::euclidean(&coords);
        let e = eta(21, &d, Field::Small).unwrap();
        let expect = 2.0 / (2.0 * std::f64::consts::PI).sqrt() - 0.2;
        assert!((e - expect).abs() < 1e-12);
        assert!((e - 0.59789).abs() < 1e-5);
        assert!(eta(0, &d, Field::Small).unwrap() < 1e-6);

        let mut coords: Vec<(f64, f64)> = (0..1000).map(|i| (10.0 * i as f64, 0.0)).collect();
        coords[155] = (-5000.0, 0.0);
        coords[6] = (-9000.0, 0.0);
        let d = DistanceMatrix::euclidean(&coords);
        assert!((eta(299, &d, Field::Large).unwrap() - 10.0).abs() < 1e-6);
        assert!(eta(298, &d, Field::Large).unwrap() < 1e-6);
        assert!(eta(5, &DistanceMatrix::euclidean(&coords[..20]), Field::Small).is_err());
    }

    #[test]
    fn theta_thresholding() {
        let mut rng = SeededRng::new(8);
        let lay = gen_layout(100, &mut rng).unwrap();
        let sig = gen_theta(Setting::SE1, 90, 100, &lay.distances).unwrap();
        for i in 0..100 {
            let e = eta(i, &lay.distances, Field::Small).unwrap();
            if e > SIGNAL_CUTOFF {
                assert!((sig.theta[i] - 0.5 * e).abs() < 1e-15);
            } else {
                assert_eq!(sig.theta[i], 0.0);
            }
            assert_eq!(sig.truth.is_alt(i), sig.theta[i] != 0.0);
        }
        assert!(sig.truth.n_alt() > 0);
    }

    #[test]
    fn direct_null_uniform() {
        let mut rng = SeededRng::new(21);
        let theta = vec![0.0; 100_000];
        let p = gen_pvalues_direct(Setting::SE1, &theta, 90, &mut rng).unwrap();
        assert!(ks_uniform(p.values().to_vec()) <= 0.01);
        let p = gen_pvalues_direct(Setting::SE2, &theta, 90, &mut rng).unwrap();
        assert!(ks_uniform(p.values().to_vec()) <= 0.02);
    }

    #[test]
    fn direct_strong_signal() {
        let mut rng = SeededRng::new(5);
        let theta = vec![10.0 / 90f64.sqrt(); 10_000];
        let p = gen_pvalues_direct(Setting::SE1, &theta, 90, &mut rng).unwrap();
        let small = p.values().iter().filter(|&&v| v < 1e-4).count();
        assert!(small as f64 / 1e4 >= 0.99);
    }

    #[test]
    fn setting_parse() {
        assert_eq!("se3".parse::<Setting>().unwrap(), Setting::SE3);
        assert!("SE6".parse::<Setting>().is_err());
    }
}
