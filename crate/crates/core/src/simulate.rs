//! Finite-n online ICA iteration, the decoupled scalar particle process, and
//! Monte-Carlo oracles for the conditional increment moments.
//!
//! One step of the learner, given observation y and step size tau:
//!
//! ```text
//! x~ = x + tau/sqrt(n) f(y.x / sqrt(n)) y - tau/n phi(x)
//! x' = sqrt(n) x~ / ||x~||
//! ```
//!
//! Time is accelerated: step k corresponds to t = k/n, recorded exactly as
//! the integer ratio to avoid floating drift.

use crate::coeffs::{CoeffContext, DriftParams};
use crate::error::{Error, Result};
use crate::model::{
    feature_from_prior_rng, make_sparse_feature_rng, FeatureMode, FeatureVector, PriorMeasure,
    StepSchedule,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// RNG streams carved out of one trial seed. Keeping the purposes on
/// separate ChaCha streams makes trials reproducible and parallelizable.
const STREAM_FEATURE: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_DYNAMICS: u64 = 3;

/// State of one finite-n trial.
#[derive(Debug, Clone)]
pub struct SimState {
    k: u64,
    x: Vec<f64>,
    xi: FeatureVector,
    q_n: f64,
    r_n: f64,
}

impl SimState {
    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    /// Accelerated time t = k/n.
    pub fn t(&self) -> f64 {
        self.k as f64 / self.n() as f64
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn xi(&self) -> &FeatureVector {
        &self.xi
    }

    /// Empirical correlation Q_n = xi.x / n.
    pub fn qn(&self) -> f64 {
        self.q_n
    }

    /// Empirical coupling R_n = x.phi(x) / n.
    pub fn rn(&self) -> f64 {
        self.r_n
    }

    fn refresh_order_parameters(&mut self, ctx: &CoeffContext) {
        let n = self.n() as f64;
        self.q_n = self
            .xi
            .values()
            .iter()
            .zip(&self.x)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n;
        self.r_n = if ctx.phi().is_none() {
            0.0
        } else {
            self.x.iter().map(|&v| v * ctx.phi().phi(v)).sum::<f64>() / n
        };
    }
}

/// Initial iterate with squared correlation ~ q0:
/// x0 = sqrt(q0) xi + sqrt(1 - q0) P g, renormalized to the sphere, with P
/// the projector orthogonal to xi.
pub fn init_state<R: Rng + ?Sized>(
    xi: FeatureVector,
    q0: f64,
    ctx: &CoeffContext,
    rng: &mut R,
) -> Result<SimState> {
    if !(0.0..=1.0).contains(&q0) {
        return Err(Error::Domain(format!("q0 = {q0} outside [0, 1]")));
    }
    let n = xi.n();
    let a = q0.sqrt();
    let b = (1.0 - q0).sqrt();
    let g: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let dot: f64 = xi.values().iter().zip(&g).map(|(u, v)| u * v).sum();
    let proj = dot / xi.norm_sq();
    let mut x: Vec<f64> = xi
        .values()
        .iter()
        .zip(&g)
        .map(|(&xii, &gi)| a * xii + b * (gi - proj * xii))
        .collect();
    let norm: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::DegenerateState("zero initial iterate".into()));
    }
    let scale = (n as f64).sqrt() / norm;
    for v in &mut x {
        *v *= scale;
    }
    let mut state = SimState {
        k: 0,
        x,
        xi,
        q_n: 0.0,
        r_n: 0.0,
    };
    state.refresh_order_parameters(ctx);
    Ok(state)
}

/// One update with the randomness (c, g) supplied explicitly; `step` wraps
/// this with draws from the context source and a standard normal vector.
pub fn step_with_draw(
    state: &mut SimState,
    ctx: &CoeffContext,
    tau: f64,
    c: f64,
    g: &[f64],
) -> Result<()> {
    let n = state.n();
    debug_assert_eq!(g.len(), n);
    let sqrt_n = (n as f64).sqrt();
    let xv = state.xi.values();

    let dot_g: f64 = xv.iter().zip(g).map(|(a, b)| a * b).sum();
    let proj = dot_g / state.xi.norm_sq();
    let cn = c / sqrt_n;

    // u = y.x / sqrt(n), recomputing y on the fly
    let mut u = 0.0;
    for i in 0..n {
        let yi = xv[i] * cn + (g[i] - proj * xv[i]);
        u += yi * state.x[i];
    }
    u /= sqrt_n;

    let coef = tau * ctx.f().f(u) / sqrt_n;
    let tau_over_n = tau / n as f64;
    let phi = ctx.phi();
    let mut norm_sq = 0.0;
    if phi.is_none() {
        for i in 0..n {
            let yi = xv[i] * cn + (g[i] - proj * xv[i]);
            let v = state.x[i] + coef * yi;
            state.x[i] = v;
            norm_sq += v * v;
        }
    } else {
        for i in 0..n {
            let yi = xv[i] * cn + (g[i] - proj * xv[i]);
            let v = state.x[i] + coef * yi - tau_over_n * phi.phi(state.x[i]);
            state.x[i] = v;
            norm_sq += v * v;
        }
    }
    if norm_sq <= 0.0 || !norm_sq.is_finite() {
        return Err(Error::DegenerateState(format!(
            "||x~||^2 = {norm_sq} at step {}",
            state.k
        )));
    }
    let scale = sqrt_n / norm_sq.sqrt();
    for v in &mut state.x {
        *v *= scale;
    }
    state.k += 1;
    state.refresh_order_parameters(ctx);
    Ok(())
}

/// One online learning step: draw c ~ P_c and the Gaussian noise, apply the
/// gradient update, project back to the sphere.
pub fn step<R: Rng + ?Sized>(
    state: &mut SimState,
    ctx: &CoeffContext,
    sched: &StepSchedule,
    rng: &mut R,
) -> Result<()> {
    let tau = sched.tau(state.t());
    let c = ctx.source().sample(rng);
    let g: Vec<f64> = (0..state.n()).map(|_| rng.sample(StandardNormal)).collect();
    step_with_draw(state, ctx, tau, c, &g)
}

/// How the feature vector of a trial is generated.
#[derive(Debug, Clone)]
pub enum FeatureSpec {
    /// Exactly round(rho n) nonzero coordinates at random positions.
    Sparse { rho: f64 },
    /// Drawn from (or laid out by) a prior measure.
    FromPrior {
        prior: PriorMeasure,
        mode: FeatureMode,
    },
}

impl FeatureSpec {
    pub fn build<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<FeatureVector> {
        match self {
            Self::Sparse { rho } => make_sparse_feature_rng(n, *rho, rng),
            Self::FromPrior { prior, mode } => feature_from_prior_rng(n, prior, *mode, rng),
        }
    }

    /// Atom values of the limiting empirical measure.
    pub fn atom_values(&self) -> Vec<f64> {
        match self {
            Self::Sparse { rho } => {
                if *rho >= 1.0 {
                    vec![1.0]
                } else {
                    vec![0.0, 1.0 / rho.sqrt()]
                }
            }
            Self::FromPrior { prior, .. } => prior.atom_values(),
        }
    }
}

/// Order-parameter time series. `q` holds the correlation Q_t (not its
/// square), `r` the regularizer coupling R_t.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub q: Vec<f64>,
    pub r: Vec<f64>,
}

impl Trajectory {
    pub fn push(&mut self, t: f64, q: f64, r: f64) {
        self.times.push(t);
        self.q.push(q);
        self.r.push(r);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Piecewise-linear lookup; errors outside the covered range.
    pub fn interpolate(&self, t: f64) -> Result<(f64, f64)> {
        let t_max = *self.times.last().ok_or_else(|| Error::PathLookup {
            t,
            t_max: f64::NAN,
        })?;
        if t < -1e-9 || t > t_max + 1e-9 {
            return Err(Error::PathLookup { t, t_max });
        }
        let t = t.clamp(self.times[0], t_max);
        match self
            .times
            .binary_search_by(|probe| probe.total_cmp(&t))
        {
            Ok(i) => Ok((self.q[i], self.r[i])),
            Err(i) => {
                let (t0, t1) = (self.times[i - 1], self.times[i]);
                let s = (t - t0) / (t1 - t0);
                Ok((
                    self.q[i - 1] + s * (self.q[i] - self.q[i - 1]),
                    self.r[i - 1] + s * (self.r[i] - self.r[i - 1]),
                ))
            }
        }
    }
}

/// Raw coordinate snapshot at one recorded time.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub t: f64,
    pub x: Vec<f64>,
}

/// Full configuration of one finite-n trial.
#[derive(Debug, Clone)]
pub struct TrialConfig {
    pub n: usize,
    pub feature: FeatureSpec,
    pub q0: f64,
    pub t_end: f64,
    /// Order parameters are recorded every `record_dt` time units (>= 1/n).
    pub record_dt: f64,
    pub snapshot_times: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct TrialOutput {
    pub trajectory: Trajectory,
    pub snapshots: Vec<Snapshot>,
    pub xi: FeatureVector,
    pub final_state_x: Vec<f64>,
}

/// Runs T*n steps of the online algorithm; deterministic given the seed.
pub fn run_trial(cfg: &TrialConfig, ctx: &CoeffContext, sched: &StepSchedule) -> Result<TrialOutput> {
    if cfg.t_end < 0.0 || !cfg.t_end.is_finite() {
        return Err(Error::Config(format!("t_end = {} invalid", cfg.t_end)));
    }
    if cfg.record_dt <= 0.0 {
        return Err(Error::Config("record_dt must be positive".into()));
    }
    let n = cfg.n;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    rng.set_stream(STREAM_FEATURE);
    let xi = cfg.feature.build(n, &mut rng)?;

    rng.set_stream(STREAM_INIT);
    let mut state = init_state(xi.clone(), cfg.q0, ctx, &mut rng)?;

    rng.set_stream(STREAM_DYNAMICS);
    let total_steps = (cfg.t_end * n as f64).round() as u64;
    let record_every = ((cfg.record_dt * n as f64).round() as u64).max(1);
    let mut snapshot_steps: Vec<(u64, f64)> = cfg
        .snapshot_times
        .iter()
        .map(|&t| ((t * n as f64).round() as u64, t))
        .collect();
    snapshot_steps.sort_by_key(|&(k, _)| k);
    snapshot_steps.dedup_by_key(|&mut (k, _)| k);

    let mut out = TrialOutput {
        trajectory: Trajectory::default(),
        snapshots: Vec::new(),
        xi,
        final_state_x: Vec::new(),
    };
    let mut next_snap = 0;
    for k in 0..=total_steps {
        if k % record_every == 0 || k == total_steps {
            out.trajectory.push(k as f64 / n as f64, state.qn(), state.rn());
        }
        while next_snap < snapshot_steps.len() && snapshot_steps[next_snap].0 == k {
            out.snapshots.push(Snapshot {
                t: snapshot_steps[next_snap].1,
                x: state.x().to_vec(),
            });
            next_snap += 1;
        }
        if k == total_steps {
            break;
        }
        step(&mut state, ctx, sched, &mut rng)?;
    }
    out.final_state_x = state.x().to_vec();
    Ok(out)
}

/// Runs independent trials (seed + trial index) in parallel and returns the
/// outputs in trial order.
pub fn run_trials(
    cfg: &TrialConfig,
    ctx: &CoeffContext,
    sched: &StepSchedule,
    trials: usize,
) -> Result<Vec<TrialOutput>> {
    (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut c = cfg.clone();
            c.seed = cfg.seed.wrapping_add(i as u64);
            run_trial(&c, ctx, sched)
        })
        .collect()
}

/// Configuration of the decoupled scalar-particle run (the limit process
/// each coordinate follows when conditioned on the order-parameter paths).
#[derive(Debug, Clone)]
pub struct DecoupledConfig {
    pub n_particles: usize,
    pub prior: PriorMeasure,
    pub q0: f64,
    pub t_end: f64,
    /// Euler-Maruyama time step; the literal coordinate process uses 1/n,
    /// but the SDE limit admits any stable dt.
    pub dt: f64,
    pub record_dt: f64,
    pub snapshot_times: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct DecoupledSnapshot {
    pub t: f64,
    pub z: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DecoupledOutput {
    pub trajectory: Trajectory,
    pub snapshots: Vec<DecoupledSnapshot>,
    /// Particle feature values, aligned with the z vectors.
    pub xi: Vec<f64>,
    pub final_z: Vec<f64>,
}

/// Evolves independent scalar particles z' = z + dt Gamma(z, xi; Q_t, R_t)
/// + sqrt(Lambda(Q_t) dt) w, with (Q_t, R_t) looked up from the given path
/// (from the ODE or PDE solution).
pub fn run_decoupled(
    cfg: &DecoupledConfig,
    ctx: &CoeffContext,
    sched: &StepSchedule,
    path: &Trajectory,
) -> Result<DecoupledOutput> {
    if cfg.dt <= 0.0 || cfg.record_dt <= 0.0 {
        return Err(Error::Config("dt and record_dt must be positive".into()));
    }
    if !(0.0..=1.0).contains(&cfg.q0) {
        return Err(Error::Domain(format!("q0 = {} outside [0, 1]", cfg.q0)));
    }
    // path must cover [0, t_end]
    path.interpolate(0.0)?;
    path.interpolate(cfg.t_end)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Exact per-atom counts by largest remainder, then per-particle init
    // z ~ N(sqrt(q0) xi, 1 - q0), the limit of the projection construction.
    let counts = apportion(cfg.prior.atoms(), cfg.n_particles);
    let mut xi = Vec::with_capacity(cfg.n_particles);
    for (&(v, _), &c) in cfg.prior.atoms().iter().zip(&counts) {
        xi.extend(std::iter::repeat(v).take(c));
    }
    let a = cfg.q0.sqrt();
    let sd = (1.0 - cfg.q0).sqrt();
    let mut z: Vec<f64> = xi
        .iter()
        .map(|&x| a * x + sd * rng.sample::<f64, _>(StandardNormal))
        .collect();

    let n_inv = 1.0 / cfg.n_particles as f64;
    let record_corr = |z: &[f64], xi: &[f64]| -> f64 {
        z.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>() * n_inv
    };
    let record_r = |z: &[f64]| -> f64 {
        if ctx.phi().is_none() {
            0.0
        } else {
            z.iter().map(|&v| v * ctx.phi().phi(v)).sum::<f64>() * n_inv
        }
    };

    let mut out = DecoupledOutput {
        trajectory: Trajectory::default(),
        snapshots: Vec::new(),
        xi,
        final_z: Vec::new(),
    };
    let mut snap_times: Vec<f64> = cfg.snapshot_times.clone();
    snap_times.sort_by(f64::total_cmp);
    let mut next_snap = 0;
    let mut t = 0.0;
    let mut next_record = 0.0;
    loop {
        if t >= next_record - 1e-12 {
            out.trajectory.push(t, record_corr(&z, &out.xi), record_r(&z));
            next_record += cfg.record_dt;
        }
        while next_snap < snap_times.len() && t >= snap_times[next_snap] - 1e-12 {
            out.snapshots.push(DecoupledSnapshot {
                t: snap_times[next_snap],
                z: z.clone(),
            });
            next_snap += 1;
        }
        if t >= cfg.t_end - 1e-12 {
            break;
        }
        let mut dt = cfg.dt.min(cfg.t_end - t);
        if next_snap < snap_times.len() {
            let gap = snap_times[next_snap] - t;
            if gap > 1e-12 {
                dt = dt.min(gap);
            }
        }
        let (q, r) = path.interpolate(t)?;
        let tau = sched.tau(t);
        let params = ctx.drift_params_with_tau(q, r, tau)?;
        decoupled_step(&mut z, &out.xi, ctx, &params, dt, &mut rng);
        t += dt;
    }
    if out
        .trajectory
        .times
        .last()
        .map(|&lt| (lt - cfg.t_end).abs() > 1e-9)
        .unwrap_or(true)
    {
        out.trajectory
            .push(cfg.t_end, record_corr(&z, &out.xi), record_r(&z));
    }
    out.final_z = z;
    Ok(out)
}

/// One Euler-Maruyama step of the decoupled process, in place.
pub fn decoupled_step<R: Rng + ?Sized>(
    z: &mut [f64],
    xi: &[f64],
    ctx: &CoeffContext,
    params: &DriftParams,
    dt: f64,
    rng: &mut R,
) {
    let noise = (params.lambda * dt).sqrt();
    let phi = ctx.phi();
    for (zi, &xii) in z.iter_mut().zip(xi) {
        let w: f64 = rng.sample(StandardNormal);
        *zi += dt * params.gamma(phi, *zi, xii) + noise * w;
    }
}

fn apportion(atoms: &[(f64, f64)], total: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = atoms
        .iter()
        .map(|&(_, w)| (w * total as f64).floor() as usize)
        .collect();
    let assigned: usize = counts.iter().sum();
    let mut remainders: Vec<(usize, f64)> = atoms
        .iter()
        .enumerate()
        .map(|(i, &(_, w))| (i, w * total as f64 - counts[i] as f64))
        .collect();
    remainders.sort_by(|a, b| b.1.total_cmp(&a.1));
    for k in 0..total - assigned {
        counts[remainders[k % remainders.len()].0] += 1;
    }
    counts
}

/// Per-coordinate conditional moment estimates of the full-step increment
/// x_{k+1,i} - x_{k,i} at a frozen state, plus aggregated projections onto
/// xi and x (used to resolve the sign convention of G).
#[derive(Debug, Clone)]
pub struct MomentOracle {
    pub coords: Vec<usize>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub se_mean: Vec<f64>,
    /// Mean and standard error of sum_i xi_i * increment_i (one step of the
    /// empirical correlation, so its expectation is dQ/dt / n * n = dQ/dt).
    pub proj_xi: (f64, f64),
    /// Mean and standard error of sum_i x_i * increment_i.
    pub proj_x: (f64, f64),
    pub n_samples: usize,
}

/// Monte-Carlo estimate of the conditional mean and variance of the
/// full-step increment (gradient step plus renormalization), holding
/// (x, xi) fixed and resampling (c, a). Parallelized over sample blocks
/// with per-block RNG streams, so results are independent of thread count.
pub fn moment_oracle(
    state: &SimState,
    ctx: &CoeffContext,
    tau: f64,
    n_samples: usize,
    coords: &[usize],
    seed: u64,
) -> Result<MomentOracle> {
    if n_samples == 0 {
        return Err(Error::Config("n_samples must be positive".into()));
    }
    let n = state.n();
    if coords.iter().any(|&c| c >= n) {
        return Err(Error::Config("probe coordinate out of range".into()));
    }
    let block = 256usize;
    let n_blocks = n_samples.div_ceil(block);

    struct Acc {
        sum: Vec<f64>,
        sumsq: Vec<f64>,
        pxi_sum: f64,
        pxi_sumsq: f64,
        px_sum: f64,
        px_sumsq: f64,
    }
    impl Acc {
        fn new(k: usize) -> Self {
            Acc {
                sum: vec![0.0; k],
                sumsq: vec![0.0; k],
                pxi_sum: 0.0,
                pxi_sumsq: 0.0,
                px_sum: 0.0,
                px_sumsq: 0.0,
            }
        }
        fn merge(mut self, o: Acc) -> Acc {
            for i in 0..self.sum.len() {
                self.sum[i] += o.sum[i];
                self.sumsq[i] += o.sumsq[i];
            }
            self.pxi_sum += o.pxi_sum;
            self.pxi_sumsq += o.pxi_sumsq;
            self.px_sum += o.px_sum;
            self.px_sumsq += o.px_sumsq;
            self
        }
    }

    let xv = state.xi().values();
    let x = state.x();
    let sqrt_n = (n as f64).sqrt();
    let nf = n as f64;
    let phi = ctx.phi();
    // x-independent pieces of the update
    let phi_vec: Option<Vec<f64>> = if phi.is_none() {
        None
    } else {
        Some(x.iter().map(|&v| phi.phi(v)).collect())
    };
    let (x_dot_phi, phi_norm_sq, xi_dot_phi) = match &phi_vec {
        None => (0.0, 0.0, 0.0),
        Some(p) => (
            x.iter().zip(p).map(|(a, b)| a * b).sum::<f64>(),
            p.iter().map(|v| v * v).sum::<f64>(),
            xv.iter().zip(p).map(|(a, b)| a * b).sum::<f64>(),
        ),
    };
    let x_norm_sq: f64 = x.iter().map(|v| v * v).sum();
    let xi_dot_x: f64 = xv.iter().zip(x).map(|(a, b)| a * b).sum();

    let acc = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64 + 17);
            let mut acc = Acc::new(coords.len());
            let samples_here = block.min(n_samples - b * block);
            let mut g = vec![0.0f64; n];
            for _ in 0..samples_here {
                for gi in g.iter_mut() {
                    *gi = rng.sample(StandardNormal);
                }
                let c = ctx.source().sample(&mut rng);
                let dot_g: f64 = xv.iter().zip(&g).map(|(a, b)| a * b).sum();
                let proj = dot_g / state.xi().norm_sq();
                let cn = c / sqrt_n;
                // dot products with y without materializing y
                let mut y_dot_x = 0.0;
                let mut y_dot_xi = 0.0;
                let mut y_dot_phi = 0.0;
                let mut y_norm_sq = 0.0;
                match &phi_vec {
                    None => {
                        for i in 0..n {
                            let yi = xv[i] * cn + (g[i] - proj * xv[i]);
                            y_dot_x += yi * x[i];
                            y_dot_xi += yi * xv[i];
                            y_norm_sq += yi * yi;
                        }
                    }
                    Some(p) => {
                        for i in 0..n {
                            let yi = xv[i] * cn + (g[i] - proj * xv[i]);
                            y_dot_x += yi * x[i];
                            y_dot_xi += yi * xv[i];
                            y_dot_phi += yi * p[i];
                            y_norm_sq += yi * yi;
                        }
                    }
                }
                let u = y_dot_x / sqrt_n;
                let coef = tau * ctx.f().f(u) / sqrt_n;
                let tn = tau / nf;
                // ||x~||^2 from dot products
                let xt_norm_sq = x_norm_sq + 2.0 * coef * y_dot_x + coef * coef * y_norm_sq
                    - 2.0 * tn * x_dot_phi
                    - 2.0 * coef * tn * y_dot_phi
                    + tn * tn * phi_norm_sq;
                let scale = sqrt_n / xt_norm_sq.sqrt();
                // projections of the full increment
                let xi_dot_xt = xi_dot_x + coef * y_dot_xi - tn * xi_dot_phi;
                let x_dot_xt = x_norm_sq + coef * y_dot_x - tn * x_dot_phi;
                let pxi = scale * xi_dot_xt - xi_dot_x;
                let px = scale * x_dot_xt - x_norm_sq;
                acc.pxi_sum += pxi;
                acc.pxi_sumsq += pxi * pxi;
                acc.px_sum += px;
                acc.px_sumsq += px * px;
                for (slot, &i) in coords.iter().enumerate() {
                    let yi = xv[i] * cn + (g[i] - proj * xv[i]);
                    let phi_i = phi_vec.as_ref().map_or(0.0, |p| p[i]);
                    let xt = x[i] + coef * yi - tn * phi_i;
                    let d = scale * xt - x[i];
                    acc.sum[slot] += d;
                    acc.sumsq[slot] += d * d;
                }
            }
            acc
        })
        .reduce(|| Acc::new(coords.len()), Acc::merge);

    let m = n_samples as f64;
    let mut mean = Vec::with_capacity(coords.len());
    let mut var = Vec::with_capacity(coords.len());
    let mut se = Vec::with_capacity(coords.len());
    for i in 0..coords.len() {
        let mu = acc.sum[i] / m;
        let v = (acc.sumsq[i] / m - mu * mu).max(0.0) * m / (m - 1.0);
        mean.push(mu);
        var.push(v);
        se.push((v / m).sqrt());
    }
    let pxi_mean = acc.pxi_sum / m;
    let pxi_var = (acc.pxi_sumsq / m - pxi_mean * pxi_mean).max(0.0);
    let px_mean = acc.px_sum / m;
    let px_var = (acc.px_sumsq / m - px_mean * px_mean).max(0.0);
    Ok(MomentOracle {
        coords: coords.to_vec(),
        mean,
        var,
        se_mean: se,
        proj_xi: (pxi_mean, (pxi_var / m).sqrt()),
        proj_x: (px_mean, (px_var / m).sqrt()),
        n_samples,
    })
}

/// Evidence from the g_sign probe: observed one-step drift of the empirical
/// correlation at a prepared state vs the predictions of the two sign
/// hypotheses.
#[derive(Debug, Clone)]
pub struct GSignEvidence {
    pub probe_corr: f64,
    pub n: usize,
    pub n_samples: usize,
    /// Observed n * E[Q_{k+1} - Q_k] and its standard error.
    pub observed: f64,
    pub se: f64,
    pub predicted_plus: f64,
    pub predicted_minus: f64,
    pub z_plus: f64,
    pub z_minus: f64,
    pub chosen: f64,
}

/// Resolves the sign convention of G against the finite-n algorithm: at a
/// state with correlation `probe_corr` the expected per-step change of Q_n,
/// scaled by n, must match (Q^2 - 1) G(Q) - Q Lambda(Q)/2 + Q tau R for
/// exactly one sign of G. Returns the calibrated sign and the evidence.
pub fn calibrate_g_sign(
    ctx: &CoeffContext,
    probe_corr: f64,
    n: usize,
    n_samples: usize,
    seed: u64,
) -> Result<(f64, GSignEvidence)> {
    if !(0.0 < probe_corr && probe_corr < 1.0) {
        return Err(Error::Domain(format!(
            "probe correlation {probe_corr} must lie strictly inside (0, 1)"
        )));
    }
    // The regularizer shifts the drift additively and identically under both
    // sign hypotheses; probing without it isolates G.
    let ctx = ctx.clone().with_phi(crate::coeffs::Regularizer::None);
    let ctx = &ctx;
    let prior = PriorMeasure::delta(1.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xi = feature_from_prior_rng(n, &prior, FeatureMode::Deterministic, &mut rng)?;
    // State with exact correlation: x = Q xi + sqrt(1-Q^2) * sqrt(n) * unit
    // vector orthogonal to xi.
    let g: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let dot: f64 = xi.values().iter().zip(&g).map(|(a, b)| a * b).sum();
    let proj = dot / xi.norm_sq();
    let p: Vec<f64> = xi
        .values()
        .iter()
        .zip(&g)
        .map(|(&xii, &gi)| gi - proj * xii)
        .collect();
    let p_norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
    let s = (1.0 - probe_corr * probe_corr).sqrt() * (n as f64).sqrt() / p_norm;
    let x: Vec<f64> = xi
        .values()
        .iter()
        .zip(&p)
        .map(|(&xii, &pi)| probe_corr * xii + s * pi)
        .collect();
    let mut state = SimState {
        k: 0,
        x,
        xi,
        q_n: 0.0,
        r_n: 0.0,
    };
    state.refresh_order_parameters(ctx);

    let tau = ctx.tau();
    let oracle = moment_oracle(&state, ctx, tau, n_samples, &[], seed.wrapping_add(1))?;
    let observed = oracle.proj_xi.0; // = n * E[dQ] since sum xi_i d_i = n dQ
    let se = oracle.proj_xi.1;

    let q = state.qn();
    let r = state.rn();
    let predict = |sign: f64| -> Result<f64> {
        let base = ctx.clone().with_g_sign(sign)?;
        let g_val = base.g(q)?;
        let lam = base.lambda(q)?;
        // E[sum_i xi_i Gamma_i] / n with sum xi_i x_i = nQ, sum xi_i^2 = n
        Ok((q * q - 1.0) * g_val - 0.5 * q * lam + q * tau * r)
    };
    let predicted_plus = predict(1.0)?;
    let predicted_minus = predict(-1.0)?;
    let z_plus = (observed - predicted_plus) / se;
    let z_minus = (observed - predicted_minus) / se;
    let chosen = if z_plus.abs() <= z_minus.abs() { 1.0 } else { -1.0 };
    Ok((
        chosen,
        GSignEvidence {
            probe_corr,
            n,
            n_samples,
            observed,
            se,
            predicted_plus,
            predicted_minus,
            z_plus,
            z_minus,
            chosen,
        },
    ))
}
