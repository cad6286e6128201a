//! Performance functionals of empirical and limiting measures: separable
//! metrics, conditional histograms, density distances, and support-recovery
//! ROC curves.

use crate::coeffs::Regularizer;
use crate::error::{Error, Result};
use crate::model::FeatureVector;
use crate::pde::{Grid1D, GridDensity};
use crate::simulate::SimState;

/// Separable metric H = E[h(xi, x)].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Functional {
    /// h = xi * x (the correlation Q)
    Correlation,
    /// h = (x - xi)^2
    L2Error,
    /// h = |x|
    Abs,
    /// h = x * phi(x) (the coupling R)
    XPhi,
}

impl std::str::FromStr for Functional {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "correlation" => Ok(Self::Correlation),
            "l2_error" => Ok(Self::L2Error),
            "abs" => Ok(Self::Abs),
            "x_phi" => Ok(Self::XPhi),
            other => Err(Error::Domain(format!("unknown functional '{other}'"))),
        }
    }
}

impl Functional {
    fn apply(&self, phi: &Regularizer, xi: f64, x: f64) -> f64 {
        match self {
            Self::Correlation => xi * x,
            Self::L2Error => (x - xi) * (x - xi),
            Self::Abs => x.abs(),
            Self::XPhi => x * phi.phi(x),
        }
    }
}

/// Expectation of the functional under the empirical measure of a state.
pub fn separable_on_sim(state: &SimState, h: Functional, phi: &Regularizer) -> f64 {
    let n = state.n() as f64;
    state
        .xi()
        .values()
        .iter()
        .zip(state.x())
        .map(|(&xi, &x)| h.apply(phi, xi, x))
        .sum::<f64>()
        / n
}

/// Expectation of the functional under a gridded joint law.
pub fn separable_on_density(d: &GridDensity, h: Functional, phi: &Regularizer) -> f64 {
    d.expect(|xi, x| h.apply(phi, xi, x))
}

/// Conditional histogram of one xi-atom's coordinates, normalized to a
/// density on the grid (out-of-range values are clamped into the end cells).
#[derive(Debug, Clone)]
pub struct AtomHistogram {
    pub xi: f64,
    pub count: usize,
    pub density: Vec<f64>,
}

/// Bins the coordinates of x by their xi-atom (nearest atom value) onto the
/// given grid. Bin width equals the PDE cell width, so histograms compare
/// directly against conditional densities.
pub fn conditional_histograms(
    xi: &FeatureVector,
    x: &[f64],
    atom_values: &[f64],
    grid: &Grid1D,
) -> Result<Vec<AtomHistogram>> {
    if xi.n() != x.len() {
        return Err(Error::GridMismatch(format!(
            "xi has {} coordinates, x has {}",
            xi.n(),
            x.len()
        )));
    }
    let groups = xi.partition_by_atoms(atom_values);
    let h = grid.h();
    Ok(atom_values
        .iter()
        .zip(groups)
        .map(|(&atom, idx)| {
            let mut density = vec![0.0; grid.n_cells()];
            for &i in &idx {
                density[grid.cell_of(x[i])] += 1.0;
            }
            let count = idx.len();
            if count > 0 {
                let norm = 1.0 / (count as f64 * h);
                for d in &mut density {
                    *d *= norm;
                }
            }
            AtomHistogram {
                xi: atom,
                count,
                density,
            }
        })
        .collect())
}

/// Scalar values of one decoupled-particle atom binned onto the grid.
pub fn histogram_of_samples(samples: &[f64], grid: &Grid1D) -> Vec<f64> {
    let mut density = vec![0.0; grid.n_cells()];
    for &v in samples {
        density[grid.cell_of(v)] += 1.0;
    }
    if !samples.is_empty() {
        let norm = 1.0 / (samples.len() as f64 * grid.h());
        for d in &mut density {
            *d *= norm;
        }
    }
    density
}

/// Kolmogorov-Smirnov and first Wasserstein distance between two densities
/// on the same grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityDistance {
    pub ks: f64,
    pub w1: f64,
}

/// Distances after normalizing both inputs to unit mass; symmetric in its
/// arguments. Errors if the inputs live on different grids (length check)
/// or carry no mass.
pub fn density_distance(a: &[f64], b: &[f64], h: f64) -> Result<DensityDistance> {
    if a.len() != b.len() {
        return Err(Error::GridMismatch(format!(
            "densities have {} and {} cells",
            a.len(),
            b.len()
        )));
    }
    let mass_a: f64 = a.iter().sum::<f64>() * h;
    let mass_b: f64 = b.iter().sum::<f64>() * h;
    if mass_a <= 0.0 || mass_b <= 0.0 {
        return Err(Error::Domain("density with zero mass".into()));
    }
    let mut cdf_a = 0.0;
    let mut cdf_b = 0.0;
    let mut ks: f64 = 0.0;
    let mut w1 = 0.0;
    for (&pa, &pb) in a.iter().zip(b) {
        cdf_a += pa * h / mass_a;
        cdf_b += pb * h / mass_b;
        let diff = (cdf_a - cdf_b).abs();
        ks = ks.max(diff);
        w1 += diff * h;
    }
    Ok(DensityDistance { ks, w1 })
}

/// Support-recovery operating points: for each threshold, the fraction of
/// truly nonzero (TPR) and truly zero (FPR) coordinates flagged by
/// |x_i| > threshold.
#[derive(Debug, Clone)]
pub struct RocCurve {
    pub thresholds: Vec<f64>,
    pub tpr: Vec<f64>,
    pub fpr: Vec<f64>,
}

impl RocCurve {
    /// Area under the curve by trapezoid integration (convenience scalar).
    pub fn auc(&self) -> f64 {
        let mut pts: Vec<(f64, f64)> = self
            .fpr
            .iter()
            .copied()
            .zip(self.tpr.iter().copied())
            .collect();
        pts.push((0.0, 0.0));
        pts.push((1.0, 1.0));
        pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        pts.windows(2)
            .map(|w| 0.5 * (w[1].1 + w[0].1) * (w[1].0 - w[0].0))
            .sum()
    }
}

/// Default threshold grid: 200 log-spaced values spanning [1e-3, x_max].
pub fn default_thresholds(x_max: f64) -> Vec<f64> {
    let count = 200;
    let lo: f64 = 1e-3;
    let ratio = (x_max / lo).ln() / (count - 1) as f64;
    (0..count).map(|i| lo * (ratio * i as f64).exp()).collect()
}

const ZERO_ATOM_TOL: f64 = 1e-9;

/// Hard-thresholding ROC of a finite-n estimate against the true support of
/// xi. Errors when xi has no zero or no nonzero coordinates.
pub fn roc_from_simulation(
    xi: &FeatureVector,
    x: &[f64],
    thresholds: &[f64],
) -> Result<RocCurve> {
    if xi.n() != x.len() {
        return Err(Error::GridMismatch(format!(
            "xi has {} coordinates, x has {}",
            xi.n(),
            x.len()
        )));
    }
    let (mut zeros, mut nonzeros) = (Vec::new(), Vec::new());
    for (&v, &e) in xi.values().iter().zip(x) {
        if v.abs() < ZERO_ATOM_TOL {
            zeros.push(e.abs());
        } else {
            nonzeros.push(e.abs());
        }
    }
    if zeros.is_empty() || nonzeros.is_empty() {
        return Err(Error::Domain(
            "support recovery needs both zero and nonzero coordinates in xi".into(),
        ));
    }
    let rate = |vals: &[f64], th: f64| -> f64 {
        vals.iter().filter(|&&v| v > th).count() as f64 / vals.len() as f64
    };
    Ok(RocCurve {
        thresholds: thresholds.to_vec(),
        tpr: thresholds.iter().map(|&t| rate(&nonzeros, t)).collect(),
        fpr: thresholds.iter().map(|&t| rate(&zeros, t)).collect(),
    })
}

/// Predicted ROC from the limiting law: TPR is the |x| > threshold tail mass
/// of the nonzero-atom conditionals (weight-averaged), FPR the same for the
/// zero atom. Tail masses use the piecewise-linear CDF of each conditional.
pub fn roc_from_pde(d: &GridDensity, thresholds: &[f64]) -> Result<RocCurve> {
    let zero: Vec<usize> = (0..d.atoms.len())
        .filter(|&a| d.atoms[a].xi.abs() < ZERO_ATOM_TOL && d.atoms[a].weight > 0.0)
        .collect();
    let nonzero: Vec<usize> = (0..d.atoms.len())
        .filter(|&a| d.atoms[a].xi.abs() >= ZERO_ATOM_TOL && d.atoms[a].weight > 0.0)
        .collect();
    if zero.is_empty() || nonzero.is_empty() {
        return Err(Error::Domain(
            "ROC from the limit law needs a zero atom and a nonzero atom".into(),
        ));
    }
    let cdfs: Vec<Vec<f64>> = (0..d.atoms.len()).map(|a| d.atom_cdf(a)).collect();
    let grid = &d.grid;
    let h = grid.h();
    // CDF at an arbitrary point by linear interpolation between interfaces
    let cdf_at = |a: usize, x: f64| -> f64 {
        if x <= grid.x_min() {
            return 0.0;
        }
        if x >= grid.x_max() {
            return *cdfs[a].last().unwrap();
        }
        let pos = (x - grid.x_min()) / h;
        let j = (pos.floor() as usize).min(grid.n_cells() - 1);
        let frac = pos - j as f64;
        cdfs[a][j] + frac * (cdfs[a][j + 1] - cdfs[a][j])
    };
    let tail = |atoms: &[usize], th: f64| -> f64 {
        let mut mass = 0.0;
        let mut wsum = 0.0;
        for &a in atoms {
            let total = *cdfs[a].last().unwrap();
            let inside = cdf_at(a, th) - cdf_at(a, -th);
            mass += d.atoms[a].weight * (total - inside).max(0.0) / total;
            wsum += d.atoms[a].weight;
        }
        mass / wsum
    };
    Ok(RocCurve {
        thresholds: thresholds.to_vec(),
        tpr: thresholds.iter().map(|&t| tail(&nonzero, t)).collect(),
        fpr: thresholds.iter().map(|&t| tail(&zero, t)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{CoeffContext, Nonlinearity};
    use crate::model::{make_sparse_feature, PriorMeasure, SourceDist};
    use crate::pde::init_density;
    use crate::simulate::init_state;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn test_grid() -> Grid1D {
        Grid1D::new(-8.0, 8.0, 512).unwrap()
    }

    #[test]
    fn correlation_functional_equals_qn() {
        let ctx = CoeffContext::new(
            Nonlinearity::NegCube,
            Regularizer::l1(0.5).unwrap(),
            SourceDist::rademacher(),
            0.05,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xi = make_sparse_feature(500, 0.3, 1).unwrap();
        let state = init_state(xi, 0.4, &ctx, &mut rng).unwrap();
        let q = separable_on_sim(&state, Functional::Correlation, ctx.phi());
        assert_abs_diff_eq!(q, state.qn(), epsilon = 1e-14);
        let r = separable_on_sim(&state, Functional::XPhi, ctx.phi());
        assert_abs_diff_eq!(r, state.rn(), epsilon = 1e-14);
    }

    #[test]
    fn correlation_functional_equals_density_coupling() {
        let prior = PriorMeasure::sparse(0.3).unwrap();
        let d = init_density(&prior, 0.36, test_grid()).unwrap();
        let q = separable_on_density(&d, Functional::Correlation, &Regularizer::None);
        assert_abs_diff_eq!(q, d.correlation(), epsilon = 1e-12);
    }

    #[test]
    fn l2_error_expansion_identity() {
        // E(x - xi)^2 = E x^2 + E xi^2 - 2Q, from the tracked moments.
        let prior = PriorMeasure::sparse(0.3).unwrap();
        let d = init_density(&prior, 0.36, test_grid()).unwrap();
        let l2 = separable_on_density(&d, Functional::L2Error, &Regularizer::None);
        let m2x = d.second_moment();
        let m2xi: f64 = prior.atoms().iter().map(|&(v, w)| w * v * v).sum();
        let q = d.correlation();
        assert_abs_diff_eq!(l2, m2x + m2xi - 2.0 * q, epsilon = 1e-10);
    }

    #[test]
    fn functional_parsing() {
        assert_eq!("correlation".parse::<Functional>().unwrap(), Functional::Correlation);
        assert_eq!("l2_error".parse::<Functional>().unwrap(), Functional::L2Error);
        assert!("entropy".parse::<Functional>().is_err());
    }

    #[test]
    fn histogram_masses_and_grid_match() {
        let xi = make_sparse_feature(1000, 0.3, 5).unwrap();
        let x: Vec<f64> = (0..1000).map(|i| (i as f64 / 500.0) - 1.0).collect();
        let grid = test_grid();
        let hists =
            conditional_histograms(&xi, &x, &[0.0, 1.0 / 0.3_f64.sqrt()], &grid).unwrap();
        assert_eq!(hists[0].count, 700);
        assert_eq!(hists[1].count, 300);
        for hist in &hists {
            let mass: f64 = hist.density.iter().sum::<f64>() * grid.h();
            assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn density_distance_identical_is_zero() {
        let prior = PriorMeasure::sparse(0.3).unwrap();
        let d = init_density(&prior, 0.36, test_grid()).unwrap();
        let dist = density_distance(
            &d.atoms[0].density,
            &d.atoms[0].density,
            d.grid.h(),
        )
        .unwrap();
        assert_eq!(dist.ks, 0.0);
        assert_eq!(dist.w1, 0.0);
    }

    #[test]
    fn density_distance_point_masses() {
        // W1 between point masses at a and b is |a - b| (cell-quantized).
        let grid = test_grid();
        let h = grid.h();
        let mut a = vec![0.0; grid.n_cells()];
        let mut b = vec![0.0; grid.n_cells()];
        let ia = grid.cell_of(-2.0);
        let ib = grid.cell_of(3.0);
        a[ia] = 1.0 / h;
        b[ib] = 1.0 / h;
        let dist = density_distance(&a, &b, h).unwrap();
        assert_abs_diff_eq!(dist.w1, grid.center(ib) - grid.center(ia), epsilon = 1e-9);
        assert_abs_diff_eq!(dist.ks, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn density_distance_symmetry_and_errors() {
        let grid = test_grid();
        let prior = PriorMeasure::sparse(0.3).unwrap();
        let d = init_density(&prior, 0.2, grid).unwrap();
        let x = &d.atoms[0].density;
        let y = &d.atoms[1].density;
        let ab = density_distance(x, y, grid.h()).unwrap();
        let ba = density_distance(y, x, grid.h()).unwrap();
        assert_eq!(ab, ba);
        assert!(density_distance(x, &y[..100], grid.h()).is_err());
        let zeros = vec![0.0; grid.n_cells()];
        assert!(density_distance(x, &zeros, grid.h()).is_err());
    }

    #[test]
    fn roc_simulation_endpoints_and_monotonicity() {
        let xi = make_sparse_feature(400, 0.3, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ctx = CoeffContext::new(
            Nonlinearity::NegCube,
            Regularizer::None,
            SourceDist::rademacher(),
            0.05,
        )
        .unwrap();
        let state = init_state(xi, 0.3, &ctx, &mut rng).unwrap();
        let ths = default_thresholds(8.0);
        let roc = roc_from_simulation(state.xi(), state.x(), &ths).unwrap();
        let tiny = roc_from_simulation(state.xi(), state.x(), &[0.0]).unwrap();
        assert_eq!((tiny.tpr[0], tiny.fpr[0]), (1.0, 1.0));
        let max_abs = state.x().iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        let above = roc_from_simulation(state.xi(), state.x(), &[max_abs + 1.0]).unwrap();
        assert_eq!((above.tpr[0], above.fpr[0]), (0.0, 0.0));
        for w in roc.tpr.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
        for w in roc.fpr.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
    }

    #[test]
    fn roc_simulation_degenerate_support_errors() {
        let ones = FeatureVector::from_values(vec![1.0; 10]).unwrap();
        let x = vec![0.5; 10];
        assert!(roc_from_simulation(&ones, &x, &[0.1]).is_err());
    }

    #[test]
    fn roc_pde_endpoints_symmetry_and_monotonicity() {
        let prior = PriorMeasure::sparse(0.3).unwrap();
        let d = init_density(&prior, 0.36, test_grid()).unwrap();
        let ths = default_thresholds(8.0);
        let roc = roc_from_pde(&d, &ths).unwrap();
        let at_zero = roc_from_pde(&d, &[0.0]).unwrap();
        assert_abs_diff_eq!(at_zero.tpr[0], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(at_zero.fpr[0], 1.0, epsilon = 1e-8);
        for w in roc.tpr.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
        for w in roc.fpr.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
        // the zero-atom conditional is symmetric: FPR = 2 * upper tail mass
        let cdf = d.atom_cdf(0);
        let th = 1.3;
        let grid = &d.grid;
        let pos = (th - grid.x_min()) / grid.h();
        let j = pos.floor() as usize;
        let frac = pos - j as f64;
        let upper = 1.0 - (cdf[j] + frac * (cdf[j + 1] - cdf[j]));
        let at_th = roc_from_pde(&d, &[th]).unwrap();
        assert_abs_diff_eq!(at_th.fpr[0], 2.0 * upper, epsilon = 1e-9);
    }

    #[test]
    fn roc_pde_missing_atom_class_errors() {
        let prior = PriorMeasure::delta(1.0).unwrap();
        let d = init_density(&prior, 0.25, test_grid()).unwrap();
        assert!(roc_from_pde(&d, &[0.5]).is_err());
    }

    #[test]
    fn auc_of_perfect_separation() {
        let xi = FeatureVector::from_values(
            [vec![0.0; 5], vec![2.0; 5]].concat(),
        )
        .unwrap();
        let x = [vec![0.01; 5], vec![3.0; 5]].concat();
        let roc = roc_from_simulation(&xi, &x, &default_thresholds(4.0)).unwrap();
        assert_relative_eq!(roc.auc(), 1.0, max_relative = 1e-6);
    }

    use crate::model::FeatureVector;
}
