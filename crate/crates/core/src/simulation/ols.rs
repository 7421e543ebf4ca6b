//! Per-feature least squares with a shared design and Wald tests of a
//! linear contrast.

use nalgebra::{DMatrix, DVector};

use crate::error::{DartError, Result};
use crate::numeric::chi2_1_sf_unchecked;
use crate::rng::SeededRng;
use crate::types::PValueVector;

/// Ratio of extreme eigenvalues of W'W beyond which the design is treated
/// as rank deficient.
const MAX_CONDITION: f64 = 1e12;

/// Outcomes `y` (n x m, one column per feature) regressed on the shared
/// design `w` (n x p).
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionDataset {
    pub y: DMatrix<f64>,
    pub w: DMatrix<f64>,
    /// True coefficients (p x m) when simulated.
    pub theta: Option<DMatrix<f64>>,
    pub sigma: f64,
}

impl RegressionDataset {
    pub fn new(y: DMatrix<f64>, w: DMatrix<f64>) -> Result<Self> {
        if y.nrows() != w.nrows() {
            return Err(DartError::DimensionMismatch {
                what: "outcome rows versus design rows",
                expected: w.nrows(),
                found: y.nrows(),
            });
        }
        Ok(Self {
            y,
            w,
            theta: None,
            sigma: f64::NAN,
        })
    }

    pub fn subjects(&self) -> usize {
        self.y.nrows()
    }

    pub fn features(&self) -> usize {
        self.y.ncols()
    }

    /// Dataset made of the given subject rows, repeats allowed.
    pub fn resample(&self, rows: &[usize]) -> Self {
        Self {
            y: self.y.select_rows(rows.iter()),
            w: self.w.select_rows(rows.iter()),
            theta: self.theta.clone(),
            sigma: self.sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaldResult {
    pub pvalues: PValueVector,
    pub statistics: Vec<f64>,
    pub estimates: DMatrix<f64>,
    /// Features whose residual variance vanished.
    pub degenerate: Vec<bool>,
}

/// Wald p-values for H0: q'theta_i = 0 in every column of `data.y`.
pub fn wald_linear_pvalues(data: &RegressionDataset, q: &[f64]) -> Result<WaldResult> {
    let (n, p) = data.w.shape();
    if q.len() != p {
        return Err(DartError::DimensionMismatch {
            what: "contrast length versus design columns",
            expected: p,
            found: q.len(),
        });
    }
    if n <= p {
        return Err(DartError::InvalidArgument(format!(
            "need more subjects than coefficients, got n = {n}, p = {p}"
        )));
    }
    let wtw = data.w.transpose() * &data.w;
    let eig = wtw.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let cond = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(cond <= MAX_CONDITION) {
        return Err(DartError::Numeric(format!(
            "design matrix is rank deficient (condition estimate {cond:.3e})"
        )));
    }
    let chol = wtw.cholesky().ok_or_else(|| {
        DartError::Numeric(format!(
            "design cross-product is not positive definite (condition estimate {cond:.3e})"
        ))
    })?;
    let est = chol.solve(&(data.w.transpose() * &data.y));
    let resid = &data.y - &data.w * &est;
    let qv = DVector::from_column_slice(q);
    let scale = (qv.transpose() * chol.solve(&qv))[(0, 0)];
    let dof = (n - p) as f64;

    let m = data.y.ncols();
    let mut stats = Vec::with_capacity(m);
    let mut pvals = Vec::with_capacity(m);
    let mut degenerate = vec![false; m];
    for i in 0..m {
        let contrast = qv.dot(&est.column(i));
        let ssr = resid.column(i).norm_squared();
        let size = data.y.column(i).norm_squared() / n as f64;
        let s2 = ssr / dof;
        if s2 <= 1e-24 * size.max(1.0) {
            degenerate[i] = true;
            log::warn!("feature {}: residual variance is zero", i + 1);
            if contrast.abs() > 1e-12 * size.sqrt().max(1.0) {
                stats.push(f64::INFINITY);
                pvals.push(0.0);
            } else {
                stats.push(0.0);
                pvals.push(1.0);
            }
            continue;
        }
        let x = contrast * contrast / (s2 * scale);
        stats.push(x);
        pvals.push(chi2_1_sf_unchecked(x).min(1.0));
    }
    Ok(WaldResult {
        pvalues: PValueVector::new(pvals)?,
        statistics: stats,
        estimates: est,
        degenerate,
    })
}

/// Linear-model data with design (1, Bernoulli(0.5), Unif(0.1, 0.5)) shared
/// by all features, unit noise, nuisance coefficients 0.1 and the signal on
/// the Bernoulli column.
pub fn gen_dataset_se4(theta: &[f64], n: usize, rng: &mut SeededRng) -> Result<RegressionDataset> {
    if n <= 3 {
        return Err(DartError::InvalidArgument(format!(
            "the linear setting needs n > 3, got {n}"
        )));
    }
    let m = theta.len();
    let mut w = DMatrix::zeros(n, 3);
    for j in 0..n {
        w[(j, 0)] = 1.0;
        w[(j, 1)] = if rng.uniform() < 0.5 { 1.0 } else { 0.0 };
        w[(j, 2)] = 0.1 + 0.4 * rng.uniform();
    }
    let mut coef = DMatrix::zeros(3, m);
    for (i, &t) in theta.iter().enumerate() {
        coef[(0, i)] = 0.1;
        coef[(1, i)] = t;
        coef[(2, i)] = 0.1;
    }
    let mut y = &w * &coef;
    for v in y.iter_mut() {
        *v += rng.std_normal();
    }
    Ok(RegressionDataset {
        y,
        w,
        theta: Some(coef),
        sigma: 1.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_col(y: &[f64]) -> RegressionDataset {
        let n = y.len();
        RegressionDataset::new(
            DMatrix::from_column_slice(n, 1, y),
            DMatrix::from_element(n, 1, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn hand_instance() {
        let r = wald_linear_pvalues(&one_col(&[0.0, 2.0, 0.0, 2.0]), &[1.0]).unwrap();
        assert!((r.estimates[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((r.statistics[0] - 3.0).abs() < 1e-12);
        assert!((r.pvalues.values()[0] - 0.0833).abs() < 1e-4);
        assert!((r.pvalues.values()[0] - 2.0 * crate::numeric::norm_sf(3f64.sqrt())).abs() < 1e-15);

        let r = wald_linear_pvalues(&one_col(&[1.0, 1.0, 1.0, 1.0]), &[1.0]).unwrap();
        assert!(r.degenerate[0]);
        assert_eq!(r.pvalues.values()[0], 0.0);
    }

    #[test]
    fn rank_deficient_design() {
        let w = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let data = RegressionDataset::new(DMatrix::from_element(4, 1, 1.0), w).unwrap();
        assert!(matches!(
            wald_linear_pvalues(&data, &[0.0, 1.0]),
            Err(DartError::Numeric(_))
        ));
    }

    #[test]
    fn normal_equations_hold() {
        let mut rng = SeededRng::new(17);
        let theta: Vec<f64> = (0..50).map(|i| 0.01 * i as f64).collect();
        let data = gen_dataset_se4(&theta, 90, &mut rng).unwrap();
        assert_eq!(data.y.shape(), (90, 50));
        assert_eq!(data.w.shape(), (90, 3));
        let r = wald_linear_pvalues(&data, &[0.0, 1.0, 0.0]).unwrap();
        let grad = data.w.transpose() * (&data.y - &data.w * &r.estimates);
        assert!(grad.amax() <= 1e-8);
    }

    #[test]
    fn strong_signal_small_pvalues() {
        let mut rng = SeededRng::new(2);
        let theta = vec![6.0 / 90f64.sqrt() * 2.0; 1000];
        let data = gen_dataset_se4(&theta, 90, &mut rng).unwrap();
        let r = wald_linear_pvalues(&data, &[0.0, 1.0, 0.0]).unwrap();
        let mut p = r.pvalues.values().to_vec();
        p.sort_by(f64::total_cmp);
        assert!(p[500] < 1e-4);
    }
}
