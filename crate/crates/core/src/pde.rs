//! Nonlinear Fokker-Planck solver for the limiting joint law P_t(xi, x).
//!
//! The feature variable xi is a finite set of atoms, so the solution is one
//! conditional density per atom on a shared x-grid, advanced by
//!
//! ```text
//! dP/dt = -d/dx [ Gamma(x, xi, Q_t, R_t) P ] + Lambda(Q_t)/2 d^2P/dx^2
//! ```
//!
//! with the couplings Q_t = E[xi x] and R_t = E[x phi(x)] recomputed from the
//! pre-step density (explicit coupling). Space discretization is a
//! conservative finite-volume scheme: upwind advective flux with the
//! interface drift averaged from cell-center evaluations (so the L1 kink at
//! x = 0, which sits on an interface for even cell counts, gets the
//! symmetric sgn(0) = 0 value), central diffusion, no-flux boundaries. Mass
//! is conserved to roundoff per atom; positivity holds under the CFL bound
//! with tiny clipped negatives tracked.

use crate::coeffs::CoeffContext;
use crate::error::{Error, Result};
use crate::model::{PriorMeasure, StepSchedule};
use crate::simulate::Trajectory;

/// Uniform cell grid on [x_min, x_max]. Cell counts are even (so no cell
/// straddles x = 0 on symmetric domains) and at least 64.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D {
    x_min: f64,
    x_max: f64,
    n_cells: usize,
}

impl Grid1D {
    pub fn new(x_min: f64, x_max: f64, n_cells: usize) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite() && x_min < x_max) {
            return Err(Error::Config(format!("bad grid range [{x_min}, {x_max}]")));
        }
        if n_cells < 64 {
            return Err(Error::Config(format!("n_cells = {n_cells} < 64")));
        }
        if n_cells % 2 != 0 {
            return Err(Error::Config(format!("n_cells = {n_cells} must be even")));
        }
        Ok(Self {
            x_min,
            x_max,
            n_cells,
        })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    /// Cell width.
    pub fn h(&self) -> f64 {
        (self.x_max - self.x_min) / self.n_cells as f64
    }

    pub fn center(&self, j: usize) -> f64 {
        self.x_min + (j as f64 + 0.5) * self.h()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_cells).map(|j| self.center(j)).collect()
    }

    /// Index of the cell containing x, clamped to the boundary cells.
    pub fn cell_of(&self, x: f64) -> usize {
        let j = ((x - self.x_min) / self.h()).floor();
        (j.max(0.0) as usize).min(self.n_cells - 1)
    }
}

/// Conditional density of x given one xi-atom, with the atom's prior weight.
#[derive(Debug, Clone)]
pub struct AtomDensity {
    pub xi: f64,
    pub weight: f64,
    pub density: Vec<f64>,
}

/// Joint law at one time: per-atom conditional densities on a shared grid.
#[derive(Debug, Clone)]
pub struct GridDensity {
    pub grid: Grid1D,
    pub t: f64,
    pub atoms: Vec<AtomDensity>,
}

impl GridDensity {
    /// Mass of one conditional density (should stay 1).
    pub fn atom_mass(&self, a: usize) -> f64 {
        self.atoms[a].density.iter().sum::<f64>() * self.grid.h()
    }

    /// Correlation coupling Q = E[xi x] by the midpoint rule.
    pub fn correlation(&self) -> f64 {
        let h = self.grid.h();
        self.atoms
            .iter()
            .map(|a| {
                if a.xi == 0.0 || a.weight == 0.0 {
                    0.0
                } else {
                    let m1: f64 = a
                        .density
                        .iter()
                        .enumerate()
                        .map(|(j, &d)| d * self.grid.center(j))
                        .sum::<f64>()
                        * h;
                    a.weight * a.xi * m1
                }
            })
            .sum()
    }

    /// Regularizer coupling R = E[x phi(x)].
    pub fn coupling_r(&self, phi: &crate::coeffs::Regularizer) -> f64 {
        if phi.is_none() {
            return 0.0;
        }
        let h = self.grid.h();
        self.atoms
            .iter()
            .map(|a| {
                let v: f64 = a
                    .density
                    .iter()
                    .enumerate()
                    .map(|(j, &d)| {
                        let x = self.grid.center(j);
                        d * x * phi.phi(x)
                    })
                    .sum::<f64>()
                    * h;
                a.weight * v
            })
            .sum()
    }

    /// Aggregate second moment E[x^2] (tracks 1 along the evolution).
    pub fn second_moment(&self) -> f64 {
        let h = self.grid.h();
        self.atoms
            .iter()
            .map(|a| {
                let m2: f64 = a
                    .density
                    .iter()
                    .enumerate()
                    .map(|(j, &d)| {
                        let x = self.grid.center(j);
                        d * x * x
                    })
                    .sum::<f64>()
                    * h;
                a.weight * m2
            })
            .sum()
    }

    /// Expectation of h(xi, x) under the joint law.
    pub fn expect<F: Fn(f64, f64) -> f64>(&self, f: F) -> f64 {
        let h = self.grid.h();
        self.atoms
            .iter()
            .map(|a| {
                let v: f64 = a
                    .density
                    .iter()
                    .enumerate()
                    .map(|(j, &d)| d * f(a.xi, self.grid.center(j)))
                    .sum::<f64>()
                    * h;
                a.weight * v
            })
            .sum()
    }

    /// Cumulative mass of one atom at the cell interfaces (length
    /// n_cells + 1, from 0 to the atom mass).
    pub fn atom_cdf(&self, a: usize) -> Vec<f64> {
        let h = self.grid.h();
        let mut cdf = Vec::with_capacity(self.atoms[a].density.len() + 1);
        let mut acc = 0.0;
        cdf.push(0.0);
        for &d in &self.atoms[a].density {
            acc += d * h;
            cdf.push(acc);
        }
        cdf
    }

    /// Mass parked in the outermost two cells on each side, per atom; the
    /// domain-size monitor.
    pub fn boundary_mass(&self) -> f64 {
        let h = self.grid.h();
        let m = self.grid.n_cells();
        self.atoms
            .iter()
            .map(|a| {
                let d = &a.density;
                h * (d[0] + d[1] + d[m - 2] + d[m - 1])
            })
            .fold(0.0, f64::max)
    }
}

// Abramowitz & Stegun 7.1.26 rational erf approximation, |err| < 1.5e-7;
// only used for the boundary-mass guard, whose threshold is 1e-6.
fn erf_approx(x: f64) -> f64 {
    let s = x.signum();
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let p = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    s * (1.0 - p * (-x * x).exp())
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf_approx(z / std::f64::consts::SQRT_2))
}

const BOUNDARY_INIT_LIMIT: f64 = 1e-6;
const BOUNDARY_RUN_LIMIT: f64 = 1e-4;

/// Initial joint law: conditional on xi the iterate is Gaussian with mean
/// sqrt(q0) xi and variance 1 - q0 (the large-n limit of the projection
/// initializer), discretized by cell-center evaluation and renormalized per
/// atom. q0 = 1 would need point masses and is rejected.
pub fn init_density(prior: &PriorMeasure, q0: f64, grid: Grid1D) -> Result<GridDensity> {
    if !(0.0..1.0).contains(&q0) {
        return Err(Error::Unsupported(format!(
            "q0 = {q0} outside [0, 1); q0 = 1 needs a point mass"
        )));
    }
    let sd = (1.0 - q0).sqrt();
    let h = grid.h();
    let mut atoms = Vec::with_capacity(prior.atoms().len());
    for &(xi, w) in prior.atoms() {
        let mean = q0.sqrt() * xi;
        let outside = normal_cdf((grid.x_min() - mean) / sd)
            + (1.0 - normal_cdf((grid.x_max() - mean) / sd));
        if outside > BOUNDARY_INIT_LIMIT {
            return Err(Error::Config(format!(
                "grid [{}, {}] too narrow: initial mass {outside:.2e} outside for atom xi = {xi}",
                grid.x_min(),
                grid.x_max()
            )));
        }
        let mut density: Vec<f64> = (0..grid.n_cells())
            .map(|j| {
                let z = (grid.center(j) - mean) / sd;
                (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
            })
            .collect();
        let mass: f64 = density.iter().sum::<f64>() * h;
        for d in &mut density {
            *d /= mass;
        }
        atoms.push(AtomDensity {
            xi,
            weight: w,
            density,
        });
    }
    Ok(GridDensity {
        grid,
        t: 0.0,
        atoms,
    })
}

/// Couplings (Q, R) of a density under a given regularizer.
pub fn compute_couplings(d: &GridDensity, phi: &crate::coeffs::Regularizer) -> (f64, f64) {
    (d.correlation(), d.coupling_r(phi))
}

/// Explicit stability bound for the combined upwind/central step.
pub fn stability_bound(h: f64, lambda: f64, max_drift: f64) -> f64 {
    0.9 * (h * h / (lambda + 1e-300)).min(h / (max_drift + 1e-300))
}

/// One conservative finite-volume step for a single conditional density.
/// `drift` is evaluated at cell centers; interface drifts are the adjacent
/// averages. Returns the clipped negative mass (diagnostic).
pub fn fv_step_atom(
    grid: &Grid1D,
    density: &[f64],
    drift_at_centers: &[f64],
    lambda: f64,
    dt: f64,
) -> Result<(Vec<f64>, f64)> {
    let m = grid.n_cells();
    debug_assert_eq!(density.len(), m);
    debug_assert_eq!(drift_at_centers.len(), m);
    let h = grid.h();
    let max_drift = drift_at_centers.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let bound = stability_bound(h, lambda, max_drift);
    if dt > bound {
        return Err(Error::StepSize { dt, bound });
    }
    let diff = 0.5 * lambda / h;
    // interior interface fluxes; no-flux at both ends
    let mut flux = vec![0.0; m + 1];
    for j in 0..m - 1 {
        let g_if = 0.5 * (drift_at_centers[j] + drift_at_centers[j + 1]);
        let upwind = if g_if >= 0.0 { density[j] } else { density[j + 1] };
        flux[j + 1] = g_if * upwind - diff * (density[j + 1] - density[j]);
    }
    let mut out = Vec::with_capacity(m);
    let mut clipped = 0.0;
    let r = dt / h;
    for j in 0..m {
        let mut v = density[j] - r * (flux[j + 1] - flux[j]);
        if v < 0.0 {
            clipped -= v * h;
            v = 0.0;
        }
        out.push(v);
    }
    Ok((out, clipped))
}

/// One explicit step of the coupled equation: (Q, R) from the current
/// density, per-atom upwind/central update.
pub fn step_fp(d: &GridDensity, ctx: &CoeffContext, dt: f64) -> Result<GridDensity> {
    step_fp_with_tau(d, ctx, dt, ctx.tau()).map(|(next, _)| next)
}

fn step_fp_with_tau(
    d: &GridDensity,
    ctx: &CoeffContext,
    dt: f64,
    tau: f64,
) -> Result<(GridDensity, f64)> {
    let (q, r) = compute_couplings(d, ctx.phi());
    let params = ctx.drift_params_with_tau(q, r, tau)?;
    let centers = d.grid.centers();
    let mut atoms = Vec::with_capacity(d.atoms.len());
    let mut clipped_total = 0.0;
    for a in &d.atoms {
        let drift: Vec<f64> = centers
            .iter()
            .map(|&x| params.gamma(ctx.phi(), x, a.xi))
            .collect();
        let (density, clipped) = fv_step_atom(&d.grid, &a.density, &drift, params.lambda, dt)?;
        clipped_total += clipped * a.weight;
        atoms.push(AtomDensity {
            xi: a.xi,
            weight: a.weight,
            density,
        });
    }
    Ok((
        GridDensity {
            grid: d.grid,
            t: d.t + dt,
            atoms,
        },
        clipped_total,
    ))
}

/// Configuration for a PDE solve.
#[derive(Debug, Clone)]
pub struct PdeConfig {
    pub prior: PriorMeasure,
    pub q0: f64,
    pub t_end: f64,
    /// Explicit grid; `None` picks a symmetric domain covering all initial
    /// conditionals to six standard deviations (at least [-8, 8]).
    pub grid: Option<Grid1D>,
    pub n_cells: usize,
    pub snapshot_times: Vec<f64>,
}

/// Default domain: [-8, 8] scaled up to cover all atom means +/- 6 initial
/// standard deviations.
pub fn auto_grid(prior: &PriorMeasure, q0: f64, n_cells: usize) -> Result<Grid1D> {
    let sd = (1.0 - q0).max(0.0).sqrt();
    let reach = prior
        .atoms()
        .iter()
        .map(|&(xi, _)| (q0.sqrt() * xi).abs() + 6.0 * sd)
        .fold(8.0f64, f64::max);
    Grid1D::new(-reach, reach, n_cells)
}

#[derive(Debug, Clone)]
pub struct PdeSolution {
    /// Dense (t, Q, R) path, one sample per accepted step.
    pub path: Trajectory,
    pub snapshots: Vec<GridDensity>,
    pub terminal: GridDensity,
    pub steps: usize,
    /// Total negative mass clipped over the run (positivity diagnostic).
    pub clipped_mass: f64,
    /// Worst per-atom |mass - 1| seen over the run.
    pub max_mass_drift: f64,
    pub max_boundary_mass: f64,
}

const MASS_DRIFT_LIMIT: f64 = 1e-8;
const DT_CAP: f64 = 0.05;

/// Advances the coupled equation from t = 0 to t_end with the largest stable
/// explicit step, recording the coupling path densely and snapshots at the
/// requested times (hit exactly by clipping dt).
pub fn solve(cfg: &PdeConfig, ctx: &CoeffContext, sched: &StepSchedule) -> Result<PdeSolution> {
    if cfg.t_end < 0.0 || !cfg.t_end.is_finite() {
        return Err(Error::Config(format!("t_end = {} invalid", cfg.t_end)));
    }
    let grid = match cfg.grid {
        Some(g) => g,
        None => auto_grid(&cfg.prior, cfg.q0, cfg.n_cells)?,
    };
    let mut density = init_density(&cfg.prior, cfg.q0, grid)?;
    let mut snaps: Vec<f64> = cfg.snapshot_times.clone();
    snaps.sort_by(f64::total_cmp);
    snaps.dedup();
    if let Some(&last) = snaps.last() {
        if last > cfg.t_end + 1e-9 {
            return Err(Error::Config(format!(
                "snapshot time {last} beyond t_end = {}",
                cfg.t_end
            )));
        }
    }

    let mut out = PdeSolution {
        path: Trajectory::default(),
        snapshots: Vec::new(),
        terminal: density.clone(),
        steps: 0,
        clipped_mass: 0.0,
        max_mass_drift: 0.0,
        max_boundary_mass: 0.0,
    };
    let centers = grid.centers();
    let h = grid.h();
    let mut next_snap = 0;
    loop {
        let (q, r) = compute_couplings(&density, ctx.phi());
        out.path.push(density.t, q, r);
        while next_snap < snaps.len() && density.t >= snaps[next_snap] - 1e-12 {
            out.snapshots.push(density.clone());
            next_snap += 1;
        }
        for a in 0..density.atoms.len() {
            let drift = (density.atom_mass(a) - 1.0).abs();
            out.max_mass_drift = out.max_mass_drift.max(drift);
            if drift > MASS_DRIFT_LIMIT {
                return Err(Error::Numeric(format!(
                    "mass drift {drift:.3e} for atom {a} at t = {}",
                    density.t
                )));
            }
        }
        let boundary = density.boundary_mass();
        out.max_boundary_mass = out.max_boundary_mass.max(boundary);
        if boundary > BOUNDARY_RUN_LIMIT {
            return Err(Error::BoundaryLeak {
                mass: boundary,
                limit: BOUNDARY_RUN_LIMIT,
            });
        }
        if density.t >= cfg.t_end - 1e-12 {
            break;
        }

        let tau = sched.tau(density.t);
        let params = ctx.drift_params_with_tau(q, r, tau)?;
        let max_drift = density
            .atoms
            .iter()
            .flat_map(|a| {
                centers
                    .iter()
                    .map(move |&x| params.gamma(ctx.phi(), x, a.xi).abs())
            })
            .fold(0.0f64, f64::max);
        // harmonic combination implies the individual bounds
        let mut dt = 0.9 / (params.lambda / (h * h) + max_drift / h + 1e-300);
        dt = dt.min(DT_CAP).min(cfg.t_end - density.t);
        if next_snap < snaps.len() {
            let gap = snaps[next_snap] - density.t;
            if gap > 1e-12 {
                dt = dt.min(gap);
            }
        }
        if dt < 1e-12 {
            return Err(Error::Numeric(format!(
                "step size collapsed to {dt:.3e} at t = {}",
                density.t
            )));
        }
        let (next, clipped) = step_fp_with_tau(&density, ctx, dt, tau)?;
        out.clipped_mass += clipped;
        density = next;
        out.steps += 1;
    }
    out.terminal = density;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{Nonlinearity, Regularizer};
    use crate::model::SourceDist;
    use crate::ode;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn grid(n: usize) -> Grid1D {
        Grid1D::new(-8.0, 8.0, n).unwrap()
    }

    fn neg_cube_ctx(tau: f64) -> CoeffContext {
        CoeffContext::new(
            Nonlinearity::NegCube,
            Regularizer::None,
            SourceDist::rademacher(),
            tau,
        )
        .unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(Grid1D::new(-1.0, 1.0, 64).is_ok());
        assert!(Grid1D::new(1.0, -1.0, 64).is_err());
        assert!(Grid1D::new(-1.0, 1.0, 32).is_err());
        assert!(Grid1D::new(-1.0, 1.0, 65).is_err());
    }

    #[test]
    fn init_density_standard_normal_at_q0_zero() {
        let prior = PriorMeasure::sparse(0.3).unwrap();
        let d = init_density(&prior, 0.0, grid(512)).unwrap();
        assert_abs_diff_eq!(d.correlation(), 0.0, epsilon = 1e-8);
        for a in 0..2 {
            assert_abs_diff_eq!(d.atom_mass(a), 1.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(d.second_moment(), 1.0, epsilon = 1e-8);
    }

    #[test]
    fn init_density_delta_prior_moments() {
        let prior = PriorMeasure::delta(1.0).unwrap();
        let d = init_density(&prior, 0.25, grid(1024)).unwrap();
        // single Gaussian, mean 0.5, variance 0.75; Q0 = 0.5
        assert_abs_diff_eq!(d.correlation(), 0.5, epsilon = 1e-6);
        let mean = d.expect(|_, x| x);
        let var = d.expect(|_, x| (x - 0.5) * (x - 0.5));
        assert_abs_diff_eq!(mean, 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(var, 0.75, epsilon = 1e-6);
    }

    #[test]
    fn init_density_sparse_prior_conditionals() {
        let prior = PriorMeasure::sparse(0.3).unwrap();
        let q0 = 0.36;
        let d = init_density(&prior, q0, grid(1024)).unwrap();
        let v = 1.0 / 0.3_f64.sqrt();
        assert_eq!(d.atoms[0].xi, 0.0);
        assert_abs_diff_eq!(d.atoms[1].xi, v, epsilon = 1e-12);
        // conditional means sqrt(q0) * xi, common variance 1 - q0
        let h = d.grid.h();
        for (a, want_mean) in [(0usize, 0.0), (1, q0.sqrt() * v)] {
            let m1: f64 = d.atoms[a]
                .density
                .iter()
                .enumerate()
                .map(|(j, &p)| p * d.grid.center(j))
                .sum::<f64>()
                * h;
            let m2: f64 = d.atoms[a]
                .density
                .iter()
                .enumerate()
                .map(|(j, &p)| p * (d.grid.center(j) - m1).powi(2))
                .sum::<f64>()
                * h;
            assert_abs_diff_eq!(m1, want_mean, epsilon = 1e-8);
            assert_abs_diff_eq!(m2, 1.0 - q0, epsilon = 1e-6);
        }
    }

    #[test]
    fn init_density_rejects_point_mass_and_narrow_grid() {
        let prior = PriorMeasure::delta(1.0).unwrap();
        assert!(matches!(
            init_density(&prior, 1.0, grid(512)),
            Err(Error::Unsupported(_))
        ));
        let narrow = Grid1D::new(-1.0, 1.0, 64).unwrap();
        assert!(matches!(
            init_density(&prior, 0.0, narrow),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn couplings_l1_and_none() {
        let prior = PriorMeasure::delta(1.0).unwrap();
        let d = init_density(&prior, 0.25, grid(1024)).unwrap();
        let (q, r_none) = compute_couplings(&d, &Regularizer::None);
        assert_abs_diff_eq!(q, 0.5, epsilon = 1e-6);
        assert_eq!(r_none, 0.0);
        // R with L1 is beta * E|x| >= 0
        let beta = 0.4;
        let (_, r_l1) = compute_couplings(&d, &Regularizer::l1(beta).unwrap());
        let e_abs = d.expect(|_, x| x.abs());
        assert_relative_eq!(r_l1, beta * e_abs, max_relative = 1e-12);
        assert!(r_l1 >= 0.0);
    }

    #[test]
    fn heat_equation_variance_growth() {
        // Gamma = 0, Lambda = 2 sigma^2: one step grows the variance by
        // Lambda * dt exactly (discrete summation-by-parts identity).
        let g = grid(512);
        let prior = PriorMeasure::delta(1.0).unwrap();
        let d = init_density(&prior, 0.5, g).unwrap();
        let lambda = 0.08;
        let drift = vec![0.0; g.n_cells()];
        let dt = 0.5 * stability_bound(g.h(), lambda, 0.0);
        let (next, clipped) = fv_step_atom(&g, &d.atoms[0].density, &drift, lambda, dt).unwrap();
        assert_eq!(clipped, 0.0);
        let h = g.h();
        let var = |dens: &[f64]| -> f64 {
            let m1: f64 = dens
                .iter()
                .enumerate()
                .map(|(j, &p)| p * g.center(j))
                .sum::<f64>()
                * h;
            dens.iter()
                .enumerate()
                .map(|(j, &p)| p * (g.center(j) - m1).powi(2))
                .sum::<f64>()
                * h
        };
        let grown = var(&next) - var(&d.atoms[0].density);
        assert_relative_eq!(grown, lambda * dt, max_relative = 1e-10);
        let mass: f64 = next.iter().sum::<f64>() * h;
        assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn pure_advection_contracts_toward_origin() {
        // Gamma = -x, Lambda = 0: density contracts, mass conserved.
        let g = grid(512);
        let prior = PriorMeasure::delta(1.0).unwrap();
        let d0 = init_density(&prior, 0.25, g).unwrap();
        let drift: Vec<f64> = g.centers().iter().map(|&x| -x).collect();
        let max_drift = 8.0;
        let dt = 0.5 * stability_bound(g.h(), 0.0, max_drift);
        let mut dens = d0.atoms[0].density.clone();
        let h = g.h();
        let var = |dens: &[f64]| -> f64 {
            let m1: f64 = dens
                .iter()
                .enumerate()
                .map(|(j, &p)| p * g.center(j))
                .sum::<f64>()
                * h;
            dens.iter()
                .enumerate()
                .map(|(j, &p)| p * (g.center(j) - m1).powi(2))
                .sum::<f64>()
                * h
        };
        let v0 = var(&dens);
        for _ in 0..200 {
            let (next, _) = fv_step_atom(&g, &dens, &drift, 0.0, dt).unwrap();
            dens = next;
        }
        assert!(var(&dens) < v0, "{} !< {v0}", var(&dens));
        let mass: f64 = dens.iter().sum::<f64>() * h;
        assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-12);
        assert!(dens.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn step_rejects_unstable_dt() {
        let g = grid(512);
        let prior = PriorMeasure::delta(1.0).unwrap();
        let d = init_density(&prior, 0.5, g).unwrap();
        let drift = vec![0.0; g.n_cells()];
        let lambda = 0.1;
        let too_big = 2.0 * stability_bound(g.h(), lambda, 0.0);
        assert!(matches!(
            fv_step_atom(&g, &d.atoms[0].density, &drift, lambda, too_big),
            Err(Error::StepSize { .. })
        ));
    }

    #[test]
    fn solve_t_zero_returns_initial_density() {
        let ctx = neg_cube_ctx(0.04);
        let sched = StepSchedule::constant(0.04).unwrap();
        let cfg = PdeConfig {
            prior: PriorMeasure::delta(1.0).unwrap(),
            q0: 0.25,
            t_end: 0.0,
            grid: None,
            n_cells: 256,
            snapshot_times: vec![],
        };
        let sol = solve(&cfg, &ctx, &sched).unwrap();
        assert_eq!(sol.steps, 0);
        assert_abs_diff_eq!(sol.path.q[0], 0.5, epsilon = 1e-6);
    }

    #[test]
    fn solve_matches_ode_without_regularizer() {
        // Module-scale version of the self-consistency criterion (T = 2).
        let tau = 0.04;
        let ctx = neg_cube_ctx(tau);
        let sched = StepSchedule::constant(tau).unwrap();
        let cfg = PdeConfig {
            prior: PriorMeasure::delta(1.0).unwrap(),
            q0: 0.5,
            t_end: 2.0,
            grid: None,
            n_cells: 512,
            snapshot_times: vec![],
        };
        let sol = solve(&cfg, &ctx, &sched).unwrap();
        let ode_sol = ode::solve_example1(&sched, 0.5, 2.0, 1e-3, 1.0, 1.0).unwrap();
        let mut worst: f64 = 0.0;
        for (i, &t) in sol.path.times.iter().enumerate() {
            let q_pde = sol.path.q[i] * sol.path.q[i];
            let q_ode = ode_sol.interpolate_q(t).unwrap();
            worst = worst.max((q_pde - q_ode).abs());
        }
        assert!(worst <= 5e-3, "sup |q_pde - q_ode| = {worst}");
        assert!(sol.max_mass_drift <= 1e-10);
        assert!((sol.terminal.second_moment() - 1.0).abs() <= 0.02);
    }

    #[test]
    fn solve_snapshots_at_requested_times() {
        let ctx = CoeffContext::new(
            Nonlinearity::NegCube,
            Regularizer::l1(0.3).unwrap(),
            SourceDist::rademacher(),
            0.05,
        )
        .unwrap();
        let sched = StepSchedule::constant(0.05).unwrap();
        let cfg = PdeConfig {
            prior: PriorMeasure::sparse(0.3).unwrap(),
            q0: 0.36,
            t_end: 1.0,
            grid: Some(Grid1D::new(-10.0, 10.0, 256).unwrap()),
            n_cells: 256,
            snapshot_times: vec![0.5, 1.0],
        };
        let sol = solve(&cfg, &ctx, &sched).unwrap();
        assert_eq!(sol.snapshots.len(), 2);
        assert_abs_diff_eq!(sol.snapshots[0].t, 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.snapshots[1].t, 1.0, epsilon = 1e-9);
        for s in &sol.snapshots {
            for a in 0..s.atoms.len() {
                assert_abs_diff_eq!(s.atom_mass(a), 1.0, epsilon = 1e-10);
            }
        }
        // R stays nonnegative for the symmetric-at-start L1 run
        assert!(sol.path.r.iter().all(|&r| r >= 0.0));
    }

    #[test]
    fn positivity_no_negative_densities() {
        let ctx = neg_cube_ctx(0.08);
        let sched = StepSchedule::constant(0.08).unwrap();
        let cfg = PdeConfig {
            prior: PriorMeasure::sparse(0.5).unwrap(),
            q0: 0.47,
            t_end: 3.0,
            grid: None,
            n_cells: 256,
            snapshot_times: vec![],
        };
        let sol = solve(&cfg, &ctx, &sched).unwrap();
        for a in &sol.terminal.atoms {
            assert!(a.density.iter().all(|&p| p >= 0.0));
        }
        assert!(sol.clipped_mass <= 1e-10, "clipped {}", sol.clipped_mass);
    }

    #[test]
    fn refinement_improves_terminal_q() {
        // Terminal coupling error shrinks by at least 1.7x per halving of h
        // (first-order upwind or better).
        let tau = 0.05;
        let ctx = neg_cube_ctx(tau);
        let sched = StepSchedule::constant(tau).unwrap();
        let solve_at = |n_cells: usize| -> f64 {
            let cfg = PdeConfig {
                prior: PriorMeasure::delta(1.0).unwrap(),
                q0: 0.5,
                t_end: 2.0,
                grid: Some(Grid1D::new(-8.0, 8.0, n_cells).unwrap()),
                n_cells,
                snapshot_times: vec![],
            };
            *solve(&cfg, &ctx, &sched).unwrap().path.q.last().unwrap()
        };
        let q256 = solve_at(256);
        let q512 = solve_at(512);
        let q1024 = solve_at(1024);
        let e_coarse = (q256 - q512).abs();
        let e_fine = (q512 - q1024).abs();
        let ratio = e_coarse / e_fine;
        assert!(ratio >= 1.7, "refinement ratio {ratio}");
    }

    #[test]
    fn erf_matches_known_values() {
        assert_abs_diff_eq!(erf_approx(0.0), 0.0, epsilon = 1e-7);
        assert_abs_diff_eq!(erf_approx(1.0), 0.8427007929, epsilon = 2e-7);
        assert_abs_diff_eq!(erf_approx(-1.0), -0.8427007929, epsilon = 2e-7);
        assert_abs_diff_eq!(normal_cdf(0.0), 0.5, epsilon = 1e-7);
        assert_abs_diff_eq!(normal_cdf(1.96), 0.9750021, epsilon = 1e-6);
    }
}
