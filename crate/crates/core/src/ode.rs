//! Order-parameter ODE: the general correlation equation
//! dQ/dt = (Q^2 - 1) G(Q) - Q Lambda(Q) / 2 (valid only without a
//! regularizer), the cubic-family scalar equation for q = Q^2, fixed-point
//! and critical-step-size analysis.

use crate::coeffs::CoeffContext;
use crate::error::{Error, Result};
use crate::model::StepSchedule;

/// dQ/dt for the closed correlation equation. Requires phi = none; with a
/// regularizer the moment hierarchy does not close and the PDE must be used.
pub fn rhs_general(ctx: &CoeffContext, corr: f64) -> Result<f64> {
    rhs_general_with_tau(ctx, corr, ctx.tau())
}

pub fn rhs_general_with_tau(ctx: &CoeffContext, corr: f64, tau: f64) -> Result<f64> {
    if !ctx.phi().is_none() {
        return Err(Error::Unsupported(
            "closed ODE requires phi = none; use the PDE for regularized runs".into(),
        ));
    }
    let g = ctx.g_with_tau(corr, tau)?;
    let lambda = ctx.lambda_with_tau(corr, tau)?;
    Ok((corr * corr - 1.0) * g - 0.5 * corr * lambda)
}

/// dq/dt for the cubic family in the squared correlation q = Q^2:
///
/// ```text
/// dq/dt = -2 tau q^2 (1-q)(m4-3) - tau^2 q [15 q^2 (1-q)(m4-3) + q^3 (m6-15) + 15]
/// ```
///
/// This is the closed form obtained by substituting the cubic G and Lambda
/// into the general equation (under the calibrated sign convention it is the
/// dynamics of f(x) = -x^3).
pub fn rhs_example1(tau: f64, q: f64, m4: f64, m6: f64) -> f64 {
    let a = m4 - 3.0;
    -2.0 * tau * q * q * (1.0 - q) * a
        - tau * tau * q * (15.0 * q * q * (1.0 - q) * a + q * q * q * (m6 - 15.0) + 15.0)
}

/// Fixed-step classical Runge-Kutta over a scalar right-hand side.
/// Returns (t, y) pairs including both endpoints; fails on NaN with a step
/// report.
pub fn rk4<F>(rhs: F, y0: f64, t_end: f64, dt: f64) -> Result<Vec<(f64, f64)>>
where
    F: Fn(f64, f64) -> Result<f64>,
{
    if !(dt > 0.0) || !t_end.is_finite() || t_end < 0.0 {
        return Err(Error::Config(format!(
            "invalid integration window: t_end = {t_end}, dt = {dt}"
        )));
    }
    let steps = (t_end / dt).ceil() as usize;
    let mut out = Vec::with_capacity(steps + 1);
    let mut t = 0.0;
    let mut y = y0;
    out.push((t, y));
    while t < t_end - 1e-12 {
        let h = dt.min(t_end - t);
        let k1 = rhs(t, y)?;
        let k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1)?;
        let k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2)?;
        let k4 = rhs(t + h, y + h * k3)?;
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        t += h;
        if !y.is_finite() {
            return Err(Error::Numeric(format!(
                "integrator diverged at t = {t} (y = {y})"
            )));
        }
        out.push((t, y));
    }
    Ok(out)
}

/// Integrated order-parameter path: q = Q^2 and the correlation Q itself.
#[derive(Debug, Clone)]
pub struct OdeSolution {
    pub times: Vec<f64>,
    pub q: Vec<f64>,
    pub corr: Vec<f64>,
}

impl OdeSolution {
    fn from_q_path(path: Vec<(f64, f64)>) -> Result<Self> {
        let mut times = Vec::with_capacity(path.len());
        let mut q = Vec::with_capacity(path.len());
        let mut corr = Vec::with_capacity(path.len());
        for (t, mut qv) in path {
            if qv < -1e-9 || qv > 1.0 + 1e-9 {
                return Err(Error::Numeric(format!(
                    "q = {qv} left [0, 1] at t = {t}"
                )));
            }
            qv = qv.clamp(0.0, 1.0);
            times.push(t);
            q.push(qv);
            corr.push(qv.sqrt());
        }
        Ok(Self { times, q, corr })
    }

    pub fn interpolate_q(&self, t: f64) -> Result<f64> {
        let t_max = *self.times.last().ok_or(Error::PathLookup {
            t,
            t_max: f64::NAN,
        })?;
        if t < -1e-9 || t > t_max + 1e-9 {
            return Err(Error::PathLookup { t, t_max });
        }
        let t = t.clamp(0.0, t_max);
        match self.times.binary_search_by(|p| p.total_cmp(&t)) {
            Ok(i) => Ok(self.q[i]),
            Err(i) => {
                let s = (t - self.times[i - 1]) / (self.times[i] - self.times[i - 1]);
                Ok(self.q[i - 1] + s * (self.q[i] - self.q[i - 1]))
            }
        }
    }

    /// As a (Q, R=0) trajectory usable to drive the decoupled process.
    pub fn as_qr_path(&self) -> crate::simulate::Trajectory {
        crate::simulate::Trajectory {
            times: self.times.clone(),
            q: self.corr.clone(),
            r: vec![0.0; self.times.len()],
        }
    }
}

/// Integrates the cubic-family q-equation with a (possibly scheduled) step
/// size.
pub fn solve_example1(
    sched: &StepSchedule,
    q0: f64,
    t_end: f64,
    dt: f64,
    m4: f64,
    m6: f64,
) -> Result<OdeSolution> {
    if !(0.0..=1.0).contains(&q0) {
        return Err(Error::Domain(format!("q0 = {q0} outside [0, 1]")));
    }
    let path = rk4(
        |t, q| Ok(rhs_example1(sched.tau(t), q.clamp(0.0, 1.0), m4, m6)),
        q0,
        t_end,
        dt,
    )?;
    OdeSolution::from_q_path(path)
}

/// Integrates the general correlation equation (phi = none) for any
/// nonlinearity via quadrature coefficients.
pub fn solve_general(
    ctx: &CoeffContext,
    sched: &StepSchedule,
    corr0: f64,
    t_end: f64,
    dt: f64,
) -> Result<OdeSolution> {
    if !(-1.0..=1.0).contains(&corr0) {
        return Err(Error::Domain(format!("Q0 = {corr0} outside [-1, 1]")));
    }
    let path = rk4(
        |t, c| rhs_general_with_tau(ctx, c.clamp(-1.0, 1.0), sched.tau(t)),
        corr0,
        t_end,
        dt,
    )?;
    let q_path = path.into_iter().map(|(t, c)| (t, c * c)).collect();
    OdeSolution::from_q_path(q_path)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPoint {
    pub q: f64,
    pub stable: bool,
}

const ROOT_SCAN_POINTS: usize = 10_000;
const ROOT_TOL: f64 = 1e-10;

/// Roots of the cubic-family dq/dt on (0, 1], with stability labels from the
/// sign of the derivative (central difference). q = 0 is always a fixed
/// point and is not reported.
pub fn find_fixed_points(tau: f64, m4: f64, m6: f64) -> Vec<FixedPoint> {
    let f = |q: f64| rhs_example1(tau, q, m4, m6);
    let mut roots: Vec<f64> = Vec::new();
    let mut prev_q = 1.0 / ROOT_SCAN_POINTS as f64;
    let mut prev_v = f(prev_q);
    for i in 2..=ROOT_SCAN_POINTS {
        let q = i as f64 / ROOT_SCAN_POINTS as f64;
        let v = f(q);
        if prev_v == 0.0 {
            roots.push(prev_q);
        } else if prev_v * v < 0.0 {
            let (mut a, mut b) = (prev_q, q);
            let mut fa = prev_v;
            while b - a > ROOT_TOL {
                let m = 0.5 * (a + b);
                let fm = f(m);
                if fa * fm <= 0.0 {
                    b = m;
                } else {
                    a = m;
                    fa = fm;
                }
            }
            roots.push(0.5 * (a + b));
        }
        prev_q = q;
        prev_v = v;
    }
    if prev_v == 0.0 {
        roots.push(1.0);
    }
    roots.dedup_by(|a, b| (*a - *b).abs() < 10.0 * ROOT_TOL);
    roots
        .into_iter()
        .map(|q| {
            let h = 1e-7;
            let d = (f(q + h) - f(q - h)) / (2.0 * h);
            FixedPoint { q, stable: d < 0.0 }
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct TauCritical {
    pub tau_c: f64,
    /// Final bisection bracket (root existence holds at `bracket.0`, fails
    /// at `bracket.1`).
    pub bracket: (f64, f64),
}

const TAU_MAX: f64 = 1.0;

/// Critical step size: the supremum of tau for which the cubic-family
/// dynamics has nonzero fixed points, found by bisection on root existence
/// to a bracket width of 1e-8. Requires the signal-favorable kurtosis sign
/// (m4 < 3 for this family).
pub fn find_tau_c(m4: f64, m6: f64) -> Result<TauCritical> {
    if m4 >= 3.0 {
        return Err(Error::Domain(format!(
            "m4 = {m4}: no informative branch (cubic family needs m4 < 3)"
        )));
    }
    let has_roots = |tau: f64| !find_fixed_points(tau, m4, m6).is_empty();
    let mut lo = 1e-6;
    if !has_roots(lo) {
        return Err(Error::Numeric(format!(
            "no nonzero fixed points anywhere in (0, {TAU_MAX}]"
        )));
    }
    let mut hi = TAU_MAX;
    if has_roots(hi) {
        return Err(Error::Numeric(format!(
            "fixed points persist at tau_max = {TAU_MAX}; no bracket"
        )));
    }
    while hi - lo > 1e-8 {
        let mid = 0.5 * (lo + hi);
        if has_roots(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(TauCritical {
        tau_c: lo,
        bracket: (lo, hi),
    })
}

/// One tau value of a bifurcation sweep.
#[derive(Debug, Clone, Copy)]
pub struct Branch {
    pub tau: f64,
    pub q_unstable: Option<f64>,
    pub q_stable: Option<f64>,
}

/// Fixed-point branches over a tau sweep plus the critical step size
/// (absent when no informative branch exists, e.g. m4 = 3).
#[derive(Debug, Clone)]
pub struct BifurcationResult {
    pub tau_c: Option<TauCritical>,
    pub branches: Vec<Branch>,
}

pub fn bifurcation_table(taus: &[f64], m4: f64, m6: f64) -> BifurcationResult {
    let branches = taus
        .iter()
        .map(|&tau| {
            let fps = find_fixed_points(tau, m4, m6);
            Branch {
                tau,
                q_unstable: fps.iter().find(|p| !p.stable).map(|p| p.q),
                q_stable: fps.iter().rev().find(|p| p.stable).map(|p| p.q),
            }
        })
        .collect();
    BifurcationResult {
        tau_c: find_tau_c(m4, m6).ok(),
        branches,
    }
}
