//! Cox proportional hazards fits by Newton iteration on the Breslow partial
//! likelihood, and Wald p-values for the first covariate.

use nalgebra::{DMatrix, DVector};

use crate::error::{DartError, Result};
use crate::numeric::chi2_1_sf_unchecked;
use crate::rng::SeededRng;
use crate::types::PValueVector;

const MAX_ITER: usize = 50;
const MAX_HALVINGS: usize = 30;
/// Coefficients beyond this size indicate a likelihood without a maximum.
const MAX_COEF: f64 = 30.0;

/// Survival data for m features sharing the covariates of n subjects.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalDataset {
    /// n x p covariates.
    pub covariates: DMatrix<f64>,
    /// Observed times, one vector of length n per feature.
    pub times: Vec<Vec<f64>>,
    /// Event indicators aligned with `times`.
    pub events: Vec<Vec<bool>>,
}

impl SurvivalDataset {
    pub fn features(&self) -> usize {
        self.times.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoxFit {
    pub beta: DVector<f64>,
    /// Observed information at `beta`.
    pub information: DMatrix<f64>,
    pub loglik: f64,
    pub score: DVector<f64>,
    pub iterations: usize,
}

struct Eval {
    loglik: f64,
    score: DVector<f64>,
    info: DMatrix<f64>,
}

// Breslow log partial likelihood with its gradient and negative Hessian.
// `order` lists subjects by decreasing time.
fn evaluate(x: &DMatrix<f64>, times: &[f64], events: &[bool], order: &[usize], beta: &DVector<f64>) -> Eval {
    let p = x.ncols();
    let eta = x * beta;
    let mut loglik = 0.0;
    let mut score = DVector::zeros(p);
    let mut info = DMatrix::zeros(p, p);
    let mut s0 = 0.0;
    let mut s1 = DVector::<f64>::zeros(p);
    let mut s2 = DMatrix::<f64>::zeros(p, p);
    let mut k = 0;
    while k < order.len() {
        let t = times[order[k]];
        let mut end = k;
        while end < order.len() && times[order[end]] == t {
            let j = order[end];
            let r = eta[j].exp();
            let xj = x.row(j).transpose();
            s0 += r;
            s1 += r * &xj;
            s2 += r * &xj * xj.transpose();
            end += 1;
        }
        let mut d = 0.0;
        for &j in &order[k..end] {
            if events[j] {
                d += 1.0;
                loglik += eta[j];
                score += x.row(j).transpose();
            }
        }
        if d > 0.0 {
            let mean = &s1 / s0;
            loglik -= d * s0.ln();
            score -= d * &mean;
            info += d * (&s2 / s0 - &mean * mean.transpose());
        }
        k = end;
    }
    Eval { loglik, score, info }
}

/// Maximize the partial likelihood of `(times, events)` on covariates `x`
/// (n x p) by damped Newton steps from zero.
pub fn cox_fit(x: &DMatrix<f64>, times: &[f64], events: &[bool]) -> Result<CoxFit> {
    let (n, p) = x.shape();
    if times.len() != n || events.len() != n {
        return Err(DartError::DimensionMismatch {
            what: "survival records versus covariate rows",
            expected: n,
            found: times.len().min(events.len()),
        });
    }
    if !events.iter().any(|&e| e) {
        return Err(DartError::Numeric("no events observed".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[b].total_cmp(&times[a]));

    let mut beta = DVector::zeros(p);
    let mut cur = evaluate(x, times, events, &order, &beta);
    for iter in 1..=MAX_ITER {
        let chol = cur.info.clone().cholesky().ok_or_else(|| {
            DartError::Numeric("information matrix is not positive definite".into())
        })?;
        let step = chol.solve(&cur.score);
        let mut scale = 1.0;
        let mut next = None;
        for _ in 0..MAX_HALVINGS {
            let cand = &beta + scale * &step;
            let e = evaluate(x, times, events, &order, &cand);
            if e.loglik.is_finite() && e.loglik >= cur.loglik - 1e-12 * cur.loglik.abs().max(1.0) {
                next = Some((cand, e));
                break;
            }
            scale *= 0.5;
        }
        let Some((cand, e)) = next else {
            return Err(DartError::Numeric("step halving failed to improve the likelihood".into()));
        };
        let moved = (scale * &step).amax();
        beta = cand;
        cur = e;
        if beta.amax() > MAX_COEF {
            return Err(DartError::Numeric(format!(
                "coefficients diverge (|beta| > {MAX_COEF}); the likelihood has no finite maximum"
            )));
        }
        if moved < 1e-9 {
            if cur.info.clone().cholesky().is_none() {
                return Err(DartError::Numeric("information matrix is not positive definite".into()));
            }
            return Ok(CoxFit {
                beta,
                information: cur.info,
                loglik: cur.loglik,
                score: cur.score,
                iterations: iter,
            });
        }
    }
    Err(DartError::Numeric(format!("no convergence after {MAX_ITER} iterations")))
}

/// Wald p-values for the first covariate of every feature. Failed fits
/// get p-value 1 and are flagged in the second vector.
pub fn cox_wald_pvalues(data: &SurvivalDataset) -> Result<(PValueVector, Vec<bool>)> {
    let mut pvals = Vec::with_capacity(data.features());
    let mut failed = Vec::with_capacity(data.features());
    for i in 0..data.features() {
        match cox_fit(&data.covariates, &data.times[i], &data.events[i]) {
            Ok(fit) => {
                let inv = fit
                    .information
                    .clone()
                    .cholesky()
                    .map(|c| c.inverse())
                    .expect("checked positive definite");
                let x = fit.beta[0] * fit.beta[0] / inv[(0, 0)];
                pvals.push(chi2_1_sf_unchecked(x).min(1.0));
                failed.push(false);
            }
            Err(DartError::Numeric(msg)) => {
                log::warn!("feature {}: Cox fit failed: {msg}", i + 1);
                pvals.push(1.0);
                failed.push(true);
            }
            Err(e) => return Err(e),
        }
    }
    Ok((PValueVector::new(pvals)?, failed))
}

/// Survival data with covariates Bernoulli(0.5) and Unif(0.1, 0.5) shared
/// by all features, exponential event times with rate
/// exp(theta_i W1 + 0.1 W2) and Unif(0, 5) censoring.
pub fn gen_dataset_se5(theta: &[f64], n: usize, rng: &mut SeededRng) -> Result<SurvivalDataset> {
    if n < 2 {
        return Err(DartError::InvalidArgument(format!(
            "the survival setting needs at least 2 subjects, got {n}"
        )));
    }
    let mut covariates = DMatrix::zeros(n, 2);
    for j in 0..n {
        covariates[(j, 0)] = if rng.uniform() < 0.5 { 1.0 } else { 0.0 };
        covariates[(j, 1)] = 0.1 + 0.4 * rng.uniform();
    }
    let mut times = Vec::with_capacity(theta.len());
    let mut events = Vec::with_capacity(theta.len());
    for &t in theta {
        let mut ti = Vec::with_capacity(n);
        let mut ei = Vec::with_capacity(n);
        for j in 0..n {
            let rate = (t * covariates[(j, 0)] + 0.1 * covariates[(j, 1)]).exp();
            let event = rng.std_exponential() / rate;
            let censor = 5.0 * rng.uniform();
            ti.push(event.min(censor));
            ei.push(event <= censor);
        }
        times.push(ti);
        events.push(ei);
    }
    Ok(SurvivalDataset {
        covariates,
        times,
        events,
    })
}
