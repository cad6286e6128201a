//! Generative data model: source distributions, feature-vector priors, and
//! observation sampling.
//!
//! Observations follow y = xi * c / sqrt(n) + a where c is a zero-mean,
//! unit-variance non-Gaussian scalar and the noise a is Gaussian with
//! covariance I - xi xi^T / n. The noise is sampled exactly by projecting a
//! standard Gaussian vector orthogonally to xi, so xi^T a = 0 holds to
//! roundoff for every draw.

use crate::error::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const ATOL: f64 = 1e-12;

/// Finite-atom source law for the scalar component c.
///
/// Restricted to atoms so that every coefficient average reduces to a finite
/// sum; continuous laws are out of scope.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceDist {
    atoms: Vec<(f64, f64)>,
    cumulative: Vec<f64>,
    m4: f64,
    m6: f64,
}

impl SourceDist {
    /// Builds a source from `(value, weight)` atoms, validating zero mean,
    /// unit variance, and a proper weight vector.
    pub fn from_atoms(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Config("source needs at least one atom".into()));
        }
        if atoms.iter().any(|&(v, w)| !v.is_finite() || !w.is_finite()) {
            return Err(Error::Config("source atoms must be finite".into()));
        }
        if atoms.iter().any(|&(_, w)| w < 0.0) {
            return Err(Error::Config("source weights must be nonnegative".into()));
        }
        let wsum: f64 = atoms.iter().map(|&(_, w)| w).sum();
        if (wsum - 1.0).abs() > ATOL {
            return Err(Error::Config(format!(
                "source weights sum to {wsum}, expected 1"
            )));
        }
        let mean: f64 = atoms.iter().map(|&(v, w)| w * v).sum();
        if mean.abs() > ATOL {
            return Err(Error::Config(format!("source mean {mean:.3e}, expected 0")));
        }
        let var: f64 = atoms.iter().map(|&(v, w)| w * v * v).sum();
        if (var - 1.0).abs() > ATOL {
            return Err(Error::Config(format!("source variance {var}, expected 1")));
        }
        let m4 = atoms.iter().map(|&(v, w)| w * v.powi(4)).sum();
        let m6 = atoms.iter().map(|&(v, w)| w * v.powi(6)).sum();
        let mut cumulative = Vec::with_capacity(atoms.len());
        let mut acc = 0.0;
        for &(_, w) in &atoms {
            acc += w;
            cumulative.push(acc);
        }
        Ok(Self {
            atoms,
            cumulative,
            m4,
            m6,
        })
    }

    /// Symmetric +/-1 coin: m4 = m6 = 1, the strongest sub-Gaussian source.
    pub fn rademacher() -> Self {
        Self::from_atoms(vec![(-1.0, 0.5), (1.0, 0.5)]).expect("rademacher atoms are valid")
    }

    /// Symmetric three-atom family {-1/sqrt(p), 0, 1/sqrt(p)} with nonzero
    /// mass p; has unit variance for every p in (0, 1], with m4 = 1/p and
    /// m6 = 1/p^2.
    pub fn three_atom(p: f64) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::Config(format!("three_atom mass p = {p} not in (0,1]")));
        }
        let v = 1.0 / p.sqrt();
        Self::from_atoms(vec![(-v, p / 2.0), (0.0, 1.0 - p), (v, p / 2.0)])
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    /// Fourth and sixth moments (atom-weighted power sums).
    pub fn moments(&self) -> (f64, f64) {
        (self.m4, self.m6)
    }

    pub fn m4(&self) -> f64 {
        self.m4
    }

    pub fn m6(&self) -> f64 {
        self.m6
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        for (i, &c) in self.cumulative.iter().enumerate() {
            if u < c {
                return self.atoms[i].0;
            }
        }
        self.atoms[self.atoms.len() - 1].0
    }
}

/// Fourth and sixth moments of a source distribution.
pub fn source_moments(dist: &SourceDist) -> (f64, f64) {
    dist.moments()
}

/// Deterministic limit of the empirical measure of the feature vector:
/// atoms with nonnegative weights summing to one and unit second moment
/// (consistent with the norm convention ||xi||^2 = n).
#[derive(Debug, Clone, PartialEq)]
pub struct PriorMeasure {
    atoms: Vec<(f64, f64)>,
}

impl PriorMeasure {
    pub fn from_atoms(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Config("prior needs at least one atom".into()));
        }
        if atoms.iter().any(|&(v, w)| !v.is_finite() || !w.is_finite()) {
            return Err(Error::Config("prior atoms must be finite".into()));
        }
        if atoms.iter().any(|&(_, w)| w < 0.0) {
            return Err(Error::Config("prior weights must be nonnegative".into()));
        }
        let wsum: f64 = atoms.iter().map(|&(_, w)| w).sum();
        if (wsum - 1.0).abs() > ATOL {
            return Err(Error::Config(format!(
                "prior weights sum to {wsum}, expected 1"
            )));
        }
        let m2: f64 = atoms.iter().map(|&(v, w)| w * v * v).sum();
        if (m2 - 1.0).abs() > ATOL {
            return Err(Error::Config(format!(
                "prior second moment {m2}, expected 1 (norm convention)"
            )));
        }
        Ok(Self { atoms })
    }

    /// Point mass at +/-1 (the only point masses with unit second moment).
    pub fn delta(value: f64) -> Result<Self> {
        Self::from_atoms(vec![(value, 1.0)])
    }

    /// Sparse prior (1-rho) delta(0) + rho delta(1/sqrt(rho)).
    pub fn sparse(rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(Error::Domain(format!("sparsity rho = {rho} not in (0,1]")));
        }
        if rho == 1.0 {
            return Self::delta(1.0);
        }
        Self::from_atoms(vec![(0.0, 1.0 - rho), (1.0 / rho.sqrt(), rho)])
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn atom_values(&self) -> Vec<f64> {
        self.atoms.iter().map(|&(v, _)| v).collect()
    }

    pub fn has_zero_atom(&self) -> bool {
        self.atoms.iter().any(|&(v, w)| v.abs() < ATOL && w > 0.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for &(v, w) in &self.atoms {
            acc += w;
            if u < acc {
                return v;
            }
        }
        self.atoms[self.atoms.len() - 1].0
    }
}

/// How a finite-n feature vector is generated from its prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMode {
    /// Independent draws from the prior.
    Iid,
    /// Weighted round-robin over the atoms, giving exact counts; for the
    /// half/half prior this is the alternating pattern (0, v, 0, v, ...).
    Deterministic,
}

/// The hidden direction xi, rescaled at construction so that
/// sum xi_i^2 = n exactly (to roundoff).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    values: Vec<f64>,
    norm_sq: f64,
}

impl FeatureVector {
    pub fn from_values(mut values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        if n == 0 {
            return Err(Error::Config("feature vector must be nonempty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("feature vector must be finite".into()));
        }
        let sumsq: f64 = values.iter().map(|v| v * v).sum();
        if sumsq <= 0.0 {
            return Err(Error::Domain("feature vector is identically zero".into()));
        }
        let scale = (n as f64 / sumsq).sqrt();
        if (scale - 1.0).abs() > f64::EPSILON {
            for v in &mut values {
                *v *= scale;
            }
        }
        let norm_sq = values.iter().map(|v| v * v).sum();
        Ok(Self { values, norm_sq })
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm_sq(&self) -> f64 {
        self.norm_sq
    }

    /// Indices grouped by the nearest of the given atom values. Used to
    /// condition empirical histograms on the (finitely many) xi values.
    pub fn partition_by_atoms(&self, atom_values: &[f64]) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); atom_values.len()];
        for (i, &v) in self.values.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, &a) in atom_values.iter().enumerate() {
                let d = (v - a).abs();
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            groups[best].push(i);
        }
        groups
    }
}

/// Sparse feature vector: exactly round(rho * n) coordinates equal to
/// 1/sqrt(rho) at uniformly random positions, zero elsewhere, then rescaled
/// to exact norm (the value becomes sqrt(n/k) when rho*n rounds).
pub fn make_sparse_feature(n: usize, rho: f64, rng_seed: u64) -> Result<FeatureVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    make_sparse_feature_rng(n, rho, &mut rng)
}

pub fn make_sparse_feature_rng<R: Rng + ?Sized>(
    n: usize,
    rho: f64,
    rng: &mut R,
) -> Result<FeatureVector> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::Domain(format!("sparsity rho = {rho} not in (0,1]")));
    }
    if n == 0 {
        return Err(Error::Domain("n must be positive".into()));
    }
    let k = (rho * n as f64).round() as usize;
    if k == 0 {
        return Err(Error::Domain(format!(
            "round(rho * n) = 0 for rho = {rho}, n = {n}: no support"
        )));
    }
    let mut values = vec![0.0; n];
    let v = 1.0 / rho.sqrt();
    for idx in rand::seq::index::sample(rng, n, k.min(n)) {
        values[idx] = v;
    }
    FeatureVector::from_values(values)
}

/// Feature vector with empirical measure approximating the prior, rescaled
/// to exact norm.
pub fn feature_from_prior(
    n: usize,
    prior: &PriorMeasure,
    mode: FeatureMode,
    rng_seed: u64,
) -> Result<FeatureVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    feature_from_prior_rng(n, prior, mode, &mut rng)
}

pub fn feature_from_prior_rng<R: Rng + ?Sized>(
    n: usize,
    prior: &PriorMeasure,
    mode: FeatureMode,
    rng: &mut R,
) -> Result<FeatureVector> {
    if n == 0 {
        return Err(Error::Domain("n must be positive".into()));
    }
    let values = match mode {
        FeatureMode::Iid => (0..n).map(|_| prior.sample(rng)).collect::<Vec<_>>(),
        FeatureMode::Deterministic => {
            // Greedy apportionment: at each index pick the atom whose assigned
            // count lags its target share the most (ties to the first atom,
            // in value order). Gives exact counts and, for equal weights, the
            // alternating layout.
            let mut atoms: Vec<(f64, f64)> = prior.atoms().to_vec();
            atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut counts = vec![0usize; atoms.len()];
            let mut values = Vec::with_capacity(n);
            for i in 0..n {
                let target = (i + 1) as f64;
                let mut best = 0;
                let mut best_lag = f64::NEG_INFINITY;
                for (j, &(_, w)) in atoms.iter().enumerate() {
                    let lag = w * target - counts[j] as f64;
                    if lag > best_lag + ATOL {
                        best_lag = lag;
                        best = j;
                    }
                }
                counts[best] += 1;
                values.push(atoms[best].0);
            }
            values
        }
    };
    FeatureVector::from_values(values)
}

/// One observation y = xi c / sqrt(n) + a with a = g - (xi^T g / ||xi||^2) xi
/// for standard normal g. Conditional on c, y has mean xi c / sqrt(n) and
/// covariance I - xi xi^T / n; xi^T a = 0 holds to roundoff by construction.
pub fn sample_observation<R: Rng + ?Sized>(xi: &FeatureVector, c: f64, rng: &mut R) -> Vec<f64> {
    let n = xi.n();
    let g: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let xv = xi.values();
    let dot: f64 = xv.iter().zip(&g).map(|(a, b)| a * b).sum();
    let proj = dot / xi.norm_sq();
    let cn = c / (n as f64).sqrt();
    g.iter()
        .zip(xv)
        .map(|(&gi, &xii)| xii * cn + (gi - proj * xii))
        .collect()
}

/// Step-size schedule tau(t); either constant or a positive table
/// interpolated piecewise-linearly (clamped outside the table range).
#[derive(Debug, Clone, PartialEq)]
pub enum StepSchedule {
    Constant(f64),
    Table(Vec<(f64, f64)>),
}

impl StepSchedule {
    pub fn constant(tau0: f64) -> Result<Self> {
        if !(tau0 > 0.0 && tau0.is_finite()) {
            return Err(Error::Config(format!("tau0 = {tau0} must be positive")));
        }
        Ok(Self::Constant(tau0))
    }

    pub fn table(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Config("schedule table must be nonempty".into()));
        }
        for w in points.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::Config("schedule times must strictly increase".into()));
            }
        }
        if points.iter().any(|&(_, tau)| !(tau > 0.0 && tau.is_finite())) {
            return Err(Error::Config("schedule tau values must be positive".into()));
        }
        Ok(Self::Table(points))
    }

    pub fn tau(&self, t: f64) -> f64 {
        match self {
            Self::Constant(tau0) => *tau0,
            Self::Table(points) => {
                if t <= points[0].0 {
                    return points[0].1;
                }
                if t >= points[points.len() - 1].0 {
                    return points[points.len() - 1].1;
                }
                for w in points.windows(2) {
                    let ((t0, v0), (t1, v1)) = (w[0], w[1]);
                    if t <= t1 {
                        let s = (t - t0) / (t1 - t0);
                        return v0 + s * (v1 - v0);
                    }
                }
                points[points.len() - 1].1
            }
        }
    }
}
