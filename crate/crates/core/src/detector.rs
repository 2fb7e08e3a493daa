//! Susceptance-change detection: the errors-in-variables GLRT whose
//! nuisance fit is a total-least-squares problem. The statistic is the
//! drop in the profiled objective between the nominal susceptances and an
//! unconstrained minimizer, thresholded against a chi-squared quantile.

use crate::network::{IncidenceMatrix, SusceptanceVector};
use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

/// Gradient-norm stopping rule for the profile minimizer, relative to the
/// objective scale.
const GRADIENT_TOL: f64 = 1e-6;
/// Iteration cap for the quasi-Newton descent.
const MAX_ITERATIONS: usize = 500;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("noise variances must be strictly positive, got ({flow_var}, {angle_var})")]
    BadNoise { flow_var: f64, angle_var: f64 },
    #[error("false-alarm rate must lie in (0, 1), got {0}")]
    BadAlpha(f64),
    #[error("measurement matrices disagree: flows are {flows} columns, angles {angles}")]
    MismatchedSamples { flows: usize, angles: usize },
    #[error("measurements contain non-finite entries")]
    NonFinite,
    #[error("covariance factorization failed; susceptance iterate is degenerate")]
    CovarianceFactorization,
    #[error(
        "profile minimization did not converge in {iterations} iterations \
         (gradient norm {gradient_norm:.3e}); best objective {objective:.6e}"
    )]
    NonConvergence {
        iterations: usize,
        gradient_norm: f64,
        objective: f64,
        best: SusceptanceVector,
    },
}

/// Variances of the additive Gaussian noise on flow and angle measurements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    flow_var: f64,
    angle_var: f64,
}

impl NoiseParams {
    pub fn new(flow_var: f64, angle_var: f64) -> Result<Self, DetectorError> {
        let valid = |v: f64| v.is_finite() && v > 0.0;
        if !valid(flow_var) || !valid(angle_var) {
            return Err(DetectorError::BadNoise {
                flow_var,
                angle_var,
            });
        }
        Ok(NoiseParams {
            flow_var,
            angle_var,
        })
    }

    pub fn flow_var(&self) -> f64 {
        self.flow_var
    }

    pub fn angle_var(&self) -> f64 {
        self.angle_var
    }
}

/// Noisy flow (K x T) and angle (B x T) sample matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    flows: DMatrix<f64>,
    angles: DMatrix<f64>,
}

impl MeasurementSet {
    pub fn new(flows: DMatrix<f64>, angles: DMatrix<f64>) -> Result<Self, DetectorError> {
        if flows.ncols() != angles.ncols() {
            return Err(DetectorError::MismatchedSamples {
                flows: flows.ncols(),
                angles: angles.ncols(),
            });
        }
        if flows.iter().chain(angles.iter()).any(|v| !v.is_finite()) {
            return Err(DetectorError::NonFinite);
        }
        Ok(MeasurementSet { flows, angles })
    }

    pub fn flows(&self) -> &DMatrix<f64> {
        &self.flows
    }

    pub fn angles(&self) -> &DMatrix<f64> {
        &self.angles
    }

    pub fn sample_count(&self) -> usize {
        self.flows.ncols()
    }

    pub(crate) fn flows_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.flows
    }

    pub(crate) fn angles_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.angles
    }
}

/// Accepted hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    /// Susceptances at their nominal values.
    H0,
    /// A susceptance change was detected.
    H1,
}

/// Statistic and minimizer from one GLRT evaluation.
#[derive(Debug, Clone)]
pub struct GlrtStat {
    pub statistic: f64,
    pub s_hat: SusceptanceVector,
}

/// Complete outcome of a thresholded GLRT.
#[derive(Debug, Clone)]
pub struct GlrtResult {
    pub statistic: f64,
    pub s_hat: SusceptanceVector,
    pub threshold: f64,
    pub alpha: f64,
    pub decision: Decision,
    pub dof: usize,
}

/// Residual of the flow measurements against the DC model at susceptance
/// `s`: flows - diag(s) D angles.
pub fn residual(
    s: &SusceptanceVector,
    meas: &MeasurementSet,
    incidence: &IncidenceMatrix,
) -> DMatrix<f64> {
    let mut a = meas.flows().clone();
    let m = incidence.as_matrix() * meas.angles();
    for k in 0..a.nrows() {
        let w = s.as_vector()[k];
        for t in 0..a.ncols() {
            a[(k, t)] -= w * m[(k, t)];
        }
    }
    a
}

/// Residual covariance under the errors-in-variables model:
/// flow_var I + angle_var diag(s) D D' diag(s). Positive definite for any
/// s because the flow noise floor is strict.
pub fn covariance(
    s: &SusceptanceVector,
    incidence: &IncidenceMatrix,
    noise: &NoiseParams,
) -> DMatrix<f64> {
    let d = incidence.as_matrix();
    let ddt = d * d.transpose();
    covariance_from_ddt(s, &ddt, noise)
}

fn covariance_from_ddt(
    s: &SusceptanceVector,
    ddt: &DMatrix<f64>,
    noise: &NoiseParams,
) -> DMatrix<f64> {
    let k = ddt.nrows();
    let sv = s.as_vector();
    let mut h = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            h[(i, j)] = noise.angle_var * sv[i] * ddt[(i, j)] * sv[j];
        }
        h[(i, i)] += noise.flow_var;
    }
    h
}

/// Precomputed pieces shared by every objective evaluation on one data set.
struct ProfileContext<'a> {
    flows: &'a DMatrix<f64>,
    /// D angles, K x T.
    m: DMatrix<f64>,
    /// D D', K x K.
    ddt: DMatrix<f64>,
    noise: NoiseParams,
}

impl<'a> ProfileContext<'a> {
    fn new(meas: &'a MeasurementSet, incidence: &IncidenceMatrix, noise: &NoiseParams) -> Self {
        let d = incidence.as_matrix();
        ProfileContext {
            flows: meas.flows(),
            m: d * meas.angles(),
            ddt: d * d.transpose(),
            noise: *noise,
        }
    }

    fn residual_at(&self, s: &DVector<f64>) -> DMatrix<f64> {
        let mut a = self.flows.clone();
        for k in 0..a.nrows() {
            let w = s[k];
            for t in 0..a.ncols() {
                a[(k, t)] -= w * self.m[(k, t)];
            }
        }
        a
    }

    fn factor(&self, s: &DVector<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>, DetectorError> {
        let h = covariance_from_ddt(&SusceptanceVector(s.clone()), &self.ddt, &self.noise);
        Cholesky::new(h).ok_or(DetectorError::CovarianceFactorization)
    }

    fn objective(&self, s: &DVector<f64>) -> Result<f64, DetectorError> {
        let a = self.residual_at(s);
        let p = self.factor(s)?.solve(&a);
        Ok(0.5 * a.dot(&p))
    }

    /// Objective with its analytic gradient: the trace derivative yields
    /// g_k = -sum_t M_kt P_kt - angle_var [(DD' o P P') s]_k with
    /// P = H(s)^-1 A(s).
    fn objective_gradient(&self, s: &DVector<f64>) -> Result<(f64, DVector<f64>), DetectorError> {
        let a = self.residual_at(s);
        let p = self.factor(s)?.solve(&a);
        let value = 0.5 * a.dot(&p);
        let k = a.nrows();
        let q = &p * p.transpose();
        let mut g = DVector::zeros(k);
        for i in 0..k {
            let data_term = self.m.row(i).dot(&p.row(i));
            let mut cov_term = 0.0;
            for j in 0..k {
                cov_term += self.ddt[(i, j)] * q[(i, j)] * s[j];
            }
            g[i] = -data_term - self.noise.angle_var * cov_term;
        }
        Ok((value, g))
    }
}

/// Half-trace profiled TLS objective at susceptance `s`.
pub fn profile_objective(
    s: &SusceptanceVector,
    meas: &MeasurementSet,
    incidence: &IncidenceMatrix,
    noise: &NoiseParams,
) -> Result<f64, DetectorError> {
    ProfileContext::new(meas, incidence, noise).objective(s.as_vector())
}

/// Analytic gradient of [`profile_objective`] with respect to `s`.
pub fn profile_gradient(
    s: &SusceptanceVector,
    meas: &MeasurementSet,
    incidence: &IncidenceMatrix,
    noise: &NoiseParams,
) -> Result<DVector<f64>, DetectorError> {
    ProfileContext::new(meas, incidence, noise)
        .objective_gradient(s.as_vector())
        .map(|(_, g)| g)
}

/// Minimizes the profiled objective over `s` by BFGS with backtracking
/// line search, starting from `s_init` (normally the nominal vector).
/// The susceptance iterates are unconstrained.
pub fn minimize_profile(
    meas: &MeasurementSet,
    incidence: &IncidenceMatrix,
    noise: &NoiseParams,
    s_init: &SusceptanceVector,
) -> Result<SusceptanceVector, DetectorError> {
    let ctx = ProfileContext::new(meas, incidence, noise);
    minimize_in_context(&ctx, s_init.as_vector()).map(|(s, _)| SusceptanceVector(s))
}

fn minimize_in_context(
    ctx: &ProfileContext<'_>,
    s_init: &DVector<f64>,
) -> Result<(DVector<f64>, f64), DetectorError> {
    let n = s_init.len();
    let mut x = s_init.clone();
    let (mut f, mut g) = ctx.objective_gradient(&x)?;
    let mut b_inv = DMatrix::<f64>::identity(n, n);
    let mut first_update = true;

    for _iter in 0..MAX_ITERATIONS {
        if g.norm() <= GRADIENT_TOL * f.abs().max(1.0) {
            return Ok((x, f));
        }
        let mut direction = -(&b_inv * &g);
        if direction.dot(&g) >= 0.0 {
            // stale curvature model; restart from steepest descent
            b_inv = DMatrix::identity(n, n);
            first_update = true;
            direction = -g.clone();
        }

        // Armijo backtracking
        let slope = g.dot(&direction);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let candidate = &x + &direction * step;
            if let Ok(fc) = ctx.objective(&candidate) {
                // strict decrease: accepting bitwise-equal objectives would
                // spin at the floating-point noise floor
                if fc < f + 1e-4 * step * slope {
                    accepted = Some((candidate, fc));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((x_next, f_next)) = accepted else {
            // no decrease along the model direction: converged to noise level
            return Ok((x, f));
        };

        let (_, g_next) = ctx.objective_gradient(&x_next)?;
        let step_vec = &x_next - &x;
        let y = &g_next - &g;
        let sy = step_vec.dot(&y);
        if sy > 1e-12 * step_vec.norm() * y.norm() {
            if first_update {
                // scale the initial inverse Hessian to the observed curvature
                let scale = sy / y.dot(&y);
                b_inv = DMatrix::identity(n, n) * scale;
                first_update = false;
            }
            let rho = 1.0 / sy;
            let by = &b_inv * &y;
            let yby = y.dot(&by);
            // BFGS inverse update
            let correction = (rho * rho * yby + rho) * (&step_vec * step_vec.transpose());
            let cross = rho * (&by * step_vec.transpose());
            b_inv = b_inv - &cross - cross.transpose() + correction;
        }
        x = x_next;
        f = f_next;
        g = g_next;
    }

    let gradient_norm = g.norm();
    Err(DetectorError::NonConvergence {
        iterations: MAX_ITERATIONS,
        gradient_norm,
        objective: f,
        best: SusceptanceVector(x),
    })
}

/// GLRT statistic: the profiled objective at the nominal susceptances
/// minus its unconstrained minimum (initialized there), together with the
/// minimizer. Nonnegative up to solver tolerance.
pub fn glrt_statistic(
    meas: &MeasurementSet,
    incidence: &IncidenceMatrix,
    noise: &NoiseParams,
    s0: &SusceptanceVector,
) -> Result<GlrtStat, DetectorError> {
    let ctx = ProfileContext::new(meas, incidence, noise);
    let f0 = ctx.objective(s0.as_vector())?;
    let (s_hat, f_hat) = minimize_in_context(&ctx, s0.as_vector())?;
    Ok(GlrtStat {
        statistic: f0 - f_hat,
        s_hat: SusceptanceVector(s_hat),
    })
}

/// Upper-tail chi-squared threshold: half the (1 - alpha) quantile with
/// `dof` degrees of freedom, so that P(statistic > threshold | H0) = alpha
/// under the asymptotic law 2 t ~ chi-squared(dof).
pub fn chi2_threshold(dof: usize, alpha: f64) -> Result<f64, DetectorError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(DetectorError::BadAlpha(alpha));
    }
    assert!(dof >= 1, "degrees of freedom must be positive");
    Ok(0.5 * chi2_quantile(dof, 1.0 - alpha))
}

/// H1 iff the statistic strictly exceeds the threshold; ties stay with H0.
pub fn decide(statistic: f64, threshold: f64) -> Decision {
    if statistic > threshold {
        Decision::H1
    } else {
        Decision::H0
    }
}

/// One-call evaluation: statistic, minimizer, threshold at `alpha`, and
/// the resulting decision.
pub fn evaluate_glrt(
    meas: &MeasurementSet,
    incidence: &IncidenceMatrix,
    noise: &NoiseParams,
    s0: &SusceptanceVector,
    alpha: f64,
) -> Result<GlrtResult, DetectorError> {
    let dof = s0.len();
    let threshold = chi2_threshold(dof, alpha)?;
    let stat = glrt_statistic(meas, incidence, noise, s0)?;
    Ok(GlrtResult {
        statistic: stat.statistic,
        s_hat: stat.s_hat,
        threshold,
        alpha,
        decision: decide(stat.statistic, threshold),
        dof,
    })
}

// ---------------------------------------------------------------------------
// chi-squared quantile via the regularized incomplete gamma function

/// Chi-squared CDF with `dof` degrees of freedom.
fn chi2_cdf(dof: usize, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        lower_incomplete_gamma_regularized(dof as f64 / 2.0, x / 2.0)
    }
}

/// Quantile by bisection on the CDF to 1e-10 interval tolerance.
fn chi2_quantile(dof: usize, p: f64) -> f64 {
    debug_assert!((0.0..1.0).contains(&p));
    let k = dof as f64;
    let mut hi = k + 10.0 * (2.0 * k).sqrt() + 10.0;
    let mut lo = 0.0;
    while chi2_cdf(dof, hi) < p {
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > 1e-10 * lo.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if chi2_cdf(dof, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// P(a, x): series for x < a + 1, Lentz continued fraction otherwise.
fn lower_incomplete_gamma_regularized(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        // series expansion around zero
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut denom = a;
        for _ in 0..500 {
            denom += 1.0;
            term *= x / denom;
            sum += term;
            if term.abs() < sum.abs() * 1e-16 {
                break;
            }
        }
        (sum.ln() + a * x.ln() - x - ln_gamma(a)).exp()
    } else {
        // continued fraction for the upper tail Q(a, x)
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        let q = (a * x.ln() - x - ln_gamma(a)).exp() * h;
        1.0 - q
    }
}

/// Lanczos approximation (g = 7, n = 9), accurate to ~1e-15 for positive
/// arguments.
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    debug_assert!(x > 0.0);
    let mut acc = 0.999_999_999_999_809_9;
    for (i, c) in COEFFS.iter().enumerate() {
        acc += c / (x + i as f64);
    }
    let t = x + 6.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x - 0.5) * t.ln() - t + acc.ln()
}
