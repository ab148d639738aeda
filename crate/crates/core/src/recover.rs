//! Sparse input reconstruction.
//!
//! Minimises `J(w) = ½ ||Φ(w) - y||² + reg_weight · ||w||_{2,1}` over input
//! signals on the ground set, where `Φ` runs the model forward and reads the
//! sensors. Norms and inner products are the trapezoid ones from
//! [`crate::signals`]; gradients are returned as representers in that inner
//! product, which is the metric the block prox is exact in.
//!
//! The solver is FISTA with monotone restart and backtracking. When the
//! linearised `ΦᵀΦ` has one eigenvalue far above the rest (unstable models do
//! this) the proximal step is taken in the metric `I + c u uᵀ` with `u` the top
//! eigenvector; the prox then reduces to a scalar root find.

use log::{debug, warn};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    check_output_signal, rk4_step, rk4_step_jvp, rk4_step_vjp, simulate, DynamicModel, DynamicsError,
    Trajectory,
};
use crate::gammoid::{GammoidError, NodeId};
use crate::signals::{
    block_soft_threshold, estimate_rip_constant, pq_norm, recovery_bound, underline, ChannelKind,
    LinearOperator, RecoveryBoundConstants, Signal, SignalError, TimeGrid,
};

/// Ratio of the two leading curvature estimates above which the rank-one metric is used.
pub const METRIC_GAP: f64 = 1e2;
/// Largest dense operator [`verify_uniqueness_smallscale`] will build, in input columns.
pub const MAX_DENSE_COLUMNS: usize = 5000;
pub const INJECTIVITY_THRESHOLD: f64 = 1e-8;
/// `reg_weight` never goes below this multiple of the misfit the proximal
/// iterations start from.
pub const REG_FLOOR: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecoverError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Graph(#[from] GammoidError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("data tolerance {epsilon:e} unreachable: misfit at the smallest weight is {floor_misfit:e}")]
    ToleranceUnreachable { epsilon: f64, floor_misfit: f64 },
    #[error("dense operator needs {columns} columns, limit is {limit}")]
    OperatorTooLarge { columns: usize, limit: usize },
    #[error("model is not linear")]
    NotLinear,
}

pub type Result<T> = std::result::Result<T, RecoverError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconstructionConfig {
    pub reg_weight: f64,
    pub p: f64,
    pub q: f64,
    /// `ε`; 0 disables the feasibility repair in [`threshold_and_refit`].
    pub data_tolerance: f64,
    pub max_iterations: usize,
    /// Stop when the relative objective decrease of an accepted step falls below this.
    pub tolerance: f64,
    pub backtrack_factor: f64,
    /// Initial step; `None` means `1/L̂` from power iteration.
    pub initial_step: Option<f64>,
    pub power_iterations: usize,
    pub power_seed: u64,
    pub threshold_fraction: f64,
    /// `(low, high)` for the discrepancy search; `None` derives it from the data.
    pub reg_bracket: Option<(f64, f64)>,
    pub bracket_ratio: f64,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self {
            reg_weight: 0.01,
            p: 2.0,
            q: 1.0,
            data_tolerance: 0.0,
            max_iterations: 5000,
            tolerance: 1e-8,
            backtrack_factor: 0.5,
            initial_step: None,
            power_iterations: 5,
            power_seed: 0,
            threshold_fraction: 0.1,
            reg_bracket: None,
            bracket_ratio: 1.2,
        }
    }
}

impl ReconstructionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(RecoverError::InvalidConfig(m.to_string()));
        if self.p != 2.0 || self.q != 1.0 {
            return bad("only p = 2, q = 1 is supported");
        }
        if !(self.reg_weight >= 0.0) || !(self.data_tolerance >= 0.0) || !(self.tolerance >= 0.0) {
            return bad("weights and tolerances must be nonnegative");
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return bad("backtrack_factor must lie in (0, 1)");
        }
        if let Some(step) = self.initial_step {
            if !(step > 0.0) {
                return bad("initial_step must be positive");
            }
        }
        if !(0.0..1.0).contains(&self.threshold_fraction) {
            return bad("threshold_fraction must lie in [0, 1)");
        }
        if !(self.bracket_ratio > 1.0) {
            return bad("bracket_ratio must exceed 1");
        }
        if let Some((lo, hi)) = self.reg_bracket {
            if !(lo > 0.0 && hi > lo) {
                return bad("reg_bracket must satisfy 0 < low < high");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportEntry {
    pub node: NodeId,
    pub magnitude: f64,
}

/// Recovery-bound figures; only meaningful if the sampled `δ̂` is the true constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub k: usize,
    pub delta_estimate: f64,
    pub premise_violated: bool,
    pub sigma_k: f64,
    pub epsilon: f64,
    pub constants: Option<RecoveryBoundConstants>,
    pub bound: Option<f64>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionResult {
    /// Channels for every node of the ground set the solve was asked about.
    pub w_hat: Signal,
    pub support: Vec<SupportEntry>,
    pub underline: Vec<f64>,
    pub objective_history: Vec<f64>,
    /// `||Φ(ŵ) - y||_2`.
    pub misfit: f64,
    pub reg_weight: f64,
    pub data_tolerance: f64,
    pub iterations: usize,
    pub converged: bool,
    pub bound: Option<BoundReport>,
}

impl ReconstructionResult {
    pub fn support_nodes(&self) -> Vec<NodeId> {
        self.support.iter().map(|s| s.node).collect()
    }

    /// Node with the largest underline entry.
    pub fn strongest_node(&self) -> Option<NodeId> {
        let (c, &m) = self
            .underline
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))?;
        (m > 0.0).then(|| self.w_hat.nodes()[c])
    }
}

fn support_of(w: &Signal, fraction: f64) -> Result<(Vec<f64>, Vec<SupportEntry>)> {
    let under = underline(w, 2.0)?;
    let peak = under.iter().fold(0.0f64, |a, &b| a.max(b));
    let support = if peak > 0.0 {
        w.nodes()
            .iter()
            .zip(&under)
            .filter(|(_, &m)| m > 0.0 && m >= fraction * peak)
            .map(|(&node, &magnitude)| SupportEntry { node, magnitude })
            .collect()
    } else {
        Vec::new()
    };
    Ok((under, support))
}

/// Forward map, adjoint and tangent for one model and one data set.
struct Problem<'a> {
    model: &'a DynamicModel,
    data: &'a Signal,
    grid: TimeGrid,
    weights: Vec<f64>,
}

impl<'a> Problem<'a> {
    fn new(model: &'a DynamicModel, data: &'a Signal) -> Result<Self> {
        check_output_signal(model, data)?;
        let grid = *data.grid();
        Ok(Self {
            model,
            data,
            grid,
            weights: grid.trapezoid_weights(),
        })
    }

    fn zero(&self) -> Signal {
        Signal::zeros(self.grid, ChannelKind::Input, self.model.ground_set().to_vec())
    }

    fn forward(&self, w: &Signal) -> Result<(Trajectory, Vec<Vec<f64>>)> {
        let u = self.model.input_samples(w, &self.grid)?;
        let tr = simulate(self.model, Some(w), &self.grid)?;
        Ok((tr, u))
    }

    /// `½ Σ_z ∫ (y_z - d_z)²`.
    fn misfit(&self, tr: &Trajectory) -> f64 {
        let mut total = 0.0;
        for c in 0..self.data.n_channels() {
            let (y, d) = (tr.outputs.channel(c), self.data.channel(c));
            total += y
                .iter()
                .zip(d)
                .zip(&self.weights)
                .map(|((a, b), w)| w * (a - b) * (a - b))
                .sum::<f64>();
        }
        0.5 * total
    }

    /// Representer of `w ↦ Σ_k ω_k ⟨r_k, y_k(w)⟩` linearised along `tr`,
    /// i.e. `Φ'(w)* r` in the trapezoid inner products.
    fn adjoint(&self, tr: &Trajectory, u: &[Vec<f64>], r: &[Vec<f64>]) -> Signal {
        let n = self.model.dim();
        let steps = self.grid.n_steps();
        let h = self.grid.step();
        let field = self.model.field();
        let sensors = self.model.sensors();
        let seed = |k: usize, out: &mut [f64]| {
            out.iter_mut().for_each(|o| *o = 0.0);
            for (c, &z) in sensors.iter().enumerate() {
                out[z] += self.weights[k] * r[c][k];
            }
        };
        let mut u_bar = vec![vec![0.0; n]; steps + 1];
        let mut a = vec![0.0; n];
        seed(steps, &mut a);
        let mut scratch = vec![0.0; n];
        let mut g = vec![0.0; n];
        for k in (0..steps).rev() {
            let stages = rk4_step(field, h, &tr.states[k], &u[k], &u[k + 1], &mut scratch);
            let mut x_bar = vec![0.0; n];
            let (lo, hi) = u_bar.split_at_mut(k + 1);
            rk4_step_vjp(field, h, &stages, &a, &mut x_bar, &mut lo[k], &mut hi[0]);
            seed(k, &mut g);
            for i in 0..n {
                a[i] = x_bar[i] + g[i];
            }
        }
        let mut out = self.zero();
        for (c, &node) in self.model.ground_set().iter().enumerate() {
            for (k, v) in out.channel_mut(c).iter_mut().enumerate() {
                *v = u_bar[k][node] / self.weights[k];
            }
        }
        out
    }

    fn residual_rows(&self, tr: &Trajectory) -> Vec<Vec<f64>> {
        (0..self.data.n_channels())
            .map(|c| {
                tr.outputs
                    .channel(c)
                    .iter()
                    .zip(self.data.channel(c))
                    .map(|(a, b)| a - b)
                    .collect()
            })
            .collect()
    }

    fn gradient(&self, tr: &Trajectory, u: &[Vec<f64>]) -> Signal {
        self.adjoint(tr, u, &self.residual_rows(tr))
    }

    /// Output perturbation `Φ'(w) v` along the trajectory `tr`.
    fn tangent(&self, tr: &Trajectory, u: &[Vec<f64>], v: &Signal) -> Result<Vec<Vec<f64>>> {
        let n = self.model.dim();
        let dv = self.model.input_samples(v, &self.grid)?;
        let h = self.grid.step();
        let field = self.model.field();
        let mut dx = vec![0.0; n];
        let mut next = vec![0.0; n];
        let mut scratch = vec![0.0; n];
        let sensors = self.model.sensors();
        let mut rows = vec![vec![0.0; self.grid.len()]; sensors.len()];
        for k in 0..self.grid.n_steps() {
            let stages = rk4_step(field, h, &tr.states[k], &u[k], &u[k + 1], &mut scratch);
            rk4_step_jvp(field, h, &stages, &dx, &dv[k], &dv[k + 1], &mut next);
            std::mem::swap(&mut dx, &mut next);
            for (c, &z) in sensors.iter().enumerate() {
                rows[c][k + 1] = dx[z];
            }
        }
        Ok(rows)
    }

    fn gauss_newton(&self, tr: &Trajectory, u: &[Vec<f64>], v: &Signal) -> Result<Signal> {
        let dy = self.tangent(tr, u, v)?;
        Ok(self.adjoint(tr, u, &dy))
    }
}

/// Metric `I + c u uᵀ` (trapezoid inner product, `u` of unit norm).
struct Metric {
    direction: Option<Signal>,
    c: f64,
}

impl Metric {
    fn identity() -> Self {
        Self { direction: None, c: 0.0 }
    }

    fn along(&self, v: &Signal) -> f64 {
        self.direction
            .as_ref()
            .map_or(0.0, |u| u.inner(v).expect("same layout"))
    }

    fn solve(&self, g: &Signal) -> Signal {
        let Some(u) = &self.direction else {
            return g.clone();
        };
        // project twice: the first pass leaves rounding of size eps·|g| along u,
        // which the large curvature would amplify
        let along = self.along(g);
        let mut rest = g.add_scaled(-along, u).expect("same layout");
        rest = rest.add_scaled(-self.along(&rest), u).expect("same layout");
        rest.add_scaled(along / (1.0 + self.c), u).expect("same layout")
    }

    fn norm_sq(&self, d: &Signal) -> f64 {
        let a = self.along(d);
        d.inner(d).expect("same layout") + self.c * a * a
    }

    /// `argmin_p τ ||p||_{2,1} + ½ ||p - x||²_M`.
    fn prox(&self, x: &Signal, tau: f64) -> Result<Signal> {
        let Some(u) = &self.direction else {
            return Ok(block_soft_threshold(x, tau, 2.0)?);
        };
        // p(α) = prox(x - α u) with α = c ⟨u, p(α) - x⟩; ψ is increasing with slope ≥ 1
        let p_of = |alpha: f64| block_soft_threshold(&x.add_scaled(-alpha, u).expect("same layout"), tau, 2.0);
        let psi = |alpha: f64| -> Result<f64> {
            let p = p_of(alpha)?;
            Ok(alpha - self.c * u.inner(&p.add_scaled(-1.0, x).expect("same layout")).expect("same layout"))
        };
        let f0 = psi(0.0)?;
        if f0 == 0.0 {
            return Ok(p_of(0.0)?);
        }
        let (mut lo, mut hi) = if f0 < 0.0 { (0.0, -f0) } else { (-f0, 0.0) };
        let (mut flo, mut fhi) = (psi(lo)?, psi(hi)?);
        let mut side = 0i8;
        for _ in 0..300 {
            if fhi == flo || hi - lo <= 4.0 * f64::EPSILON * lo.abs().max(hi.abs()) {
                break;
            }
            // Illinois regula falsi, bisecting when the secant leaves the bracket
            let mut mid = (lo * fhi - hi * flo) / (fhi - flo);
            if !(mid > lo && mid < hi) {
                mid = 0.5 * (lo + hi);
            }
            let fm = psi(mid)?;
            if fm == 0.0 {
                lo = mid;
                hi = mid;
                break;
            }
            if fm < 0.0 {
                lo = mid;
                flo = fm;
                if side == -1 {
                    fhi *= 0.5;
                }
                side = -1;
            } else {
                hi = mid;
                fhi = fm;
                if side == 1 {
                    flo *= 0.5;
                }
                side = 1;
            }
        }
        Ok(p_of(0.5 * (lo + hi))?)
    }
}

/// Leading eigenpairs of the Gauss–Newton operator `Φ'(0)* Φ'(0)` by power iteration.
fn curvature(problem: &Problem, config: &ReconstructionConfig) -> Result<(f64, Signal, f64)> {
    let zero = problem.zero();
    let (tr, u) = problem.forward(&zero)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.power_seed);
    let mut random = || {
        let mut v = problem.zero();
        for c in 0..v.n_channels() {
            v.channel_mut(c).iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
        }
        v
    };
    let normalize = |v: Signal| -> Signal {
        let n = v.inner(&v).expect("same layout").sqrt();
        if n > 0.0 { v.scaled(1.0 / n) } else { v }
    };
    let iterations = config.power_iterations.max(1);
    let mut v = normalize(random());
    let mut top = 0.0;
    for _ in 0..iterations {
        let hv = problem.gauss_newton(&tr, &u, &v)?;
        top = hv.inner(&hv)?.sqrt();
        if top == 0.0 {
            return Ok((0.0, v, 0.0));
        }
        v = hv.scaled(1.0 / top);
    }
    let deflate = |w: &Signal| w.add_scaled(-v.inner(w).expect("same layout"), &v).expect("same layout");
    let mut w = normalize(deflate(&random()));
    let mut second = 0.0;
    for _ in 0..iterations {
        let hw = deflate(&problem.gauss_newton(&tr, &u, &w)?);
        second = hw.inner(&hw)?.sqrt();
        if second == 0.0 {
            break;
        }
        w = hw.scaled(1.0 / second);
    }
    Ok((top, v, second))
}

/// `J(w) = ½ ||Φ(w) - y||² + reg_weight ||w||_{2,1}`.
pub fn objective(model: &DynamicModel, y_data: &Signal, w: &Signal, config: &ReconstructionConfig) -> Result<f64> {
    config.validate()?;
    let problem = Problem::new(model, y_data)?;
    let (tr, _) = problem.forward(w)?;
    Ok(problem.misfit(&tr) + config.reg_weight * pq_norm(w, 2.0, 1.0)?)
}

/// Gradient of `½ ||Φ(w) - y||²` as a representer in the trapezoid inner
/// product: the Euclidean derivative with respect to sample `k` equals
/// `ω_k` times the returned value.
pub fn misfit_gradient(model: &DynamicModel, y_data: &Signal, w: &Signal) -> Result<Signal> {
    let problem = Problem::new(model, y_data)?;
    let (tr, u) = problem.forward(w)?;
    Ok(problem.gradient(&tr, &u))
}

/// `||Φ(w) - y||_2` recomputed from a fresh simulation.
pub fn data_misfit(model: &DynamicModel, y_data: &Signal, w: &Signal) -> Result<f64> {
    let problem = Problem::new(model, y_data)?;
    let (tr, _) = problem.forward(w)?;
    Ok((2.0 * problem.misfit(&tr)).sqrt())
}

fn zero_input_misfit(problem: &Problem) -> Result<f64> {
    let (tr, _) = problem.forward(&problem.zero())?;
    Ok((2.0 * problem.misfit(&tr)).sqrt())
}

/// Accelerated proximal gradient from `w = 0`.
pub fn solve(model: &DynamicModel, y_data: &Signal, config: &ReconstructionConfig) -> Result<ReconstructionResult> {
    solve_from(model, y_data, config, None)
}

/// As [`solve`], started from `start` when it improves on `w = 0`.
pub fn solve_from(
    model: &DynamicModel,
    y_data: &Signal,
    config: &ReconstructionConfig,
    start: Option<&Signal>,
) -> Result<ReconstructionResult> {
    config.validate()?;
    let problem = Problem::new(model, y_data)?;
    if let Some(s) = start {
        if s.nodes() != model.ground_set() || s.grid() != y_data.grid() {
            return Err(RecoverError::InvalidConfig("warm start does not match the ground set and grid".into()));
        }
    }
    let (top, direction, second) = curvature(&problem, config)?;
    let (metric, lipschitz) = if second > 0.0 && top / second > METRIC_GAP {
        debug!("rank-one metric: curvature {top:e} over {second:e}");
        (
            Metric {
                direction: Some(direction.scaled(1.0 / direction.inner(&direction)?.sqrt())),
                c: top / second - 1.0,
            },
            second,
        )
    } else {
        (Metric::identity(), top)
    };
    let mut step = config
        .initial_step
        .unwrap_or(if lipschitz > 0.0 { 1.0 / lipschitz } else { 1.0 });
    let initial_step = step;

    let zero = problem.zero();
    let (tr0, _) = problem.forward(&zero)?;
    let f_zero = problem.misfit(&tr0);
    let mut w = zero.clone();
    let mut f_w = f_zero;
    if let Some(s) = start {
        let (tr, _) = problem.forward(s)?;
        w = s.clone();
        f_w = problem.misfit(&tr);
    } else if let Some(u) = &metric.direction {
        // Newton steps along the dominant direction first; until that mode is
        // fitted the rest of the gradient is lost to rounding
        for _ in 0..10 {
            let (tr, samples) = problem.forward(&w)?;
            let along = u.inner(&problem.gradient(&tr, &samples))?;
            let candidate = w.add_scaled(-along / top, u)?;
            let (tr_c, _) = problem.forward(&candidate)?;
            let f_c = problem.misfit(&tr_c);
            if !(f_c < f_w) {
                break;
            }
            let decrease = f_w - f_c;
            w = candidate;
            f_w = f_c;
            if decrease <= 1e-3 * f_c {
                break;
            }
        }
    }
    let reg = config.reg_weight.max(REG_FLOOR * (2.0 * f_w).sqrt());
    let penalty = |w: &Signal| -> Result<f64> { Ok(reg * pq_norm(w, 2.0, 1.0)?) };
    let mut history = vec![f_zero];
    let mut j_w = f_w + penalty(&w)?;
    if j_w < f_zero {
        history.push(j_w);
    } else {
        w = zero;
        j_w = f_zero;
    }
    let mut y = w.clone();
    let mut t = 1.0f64;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iterations {
        iterations += 1;
        let (tr_y, u_y) = problem.forward(&y)?;
        let f_y = problem.misfit(&tr_y);
        let grad = problem.gradient(&tr_y, &u_y);
        let direction = metric.solve(&grad);
        let (candidate, f_c) = loop {
            let x = y.add_scaled(-step, &direction)?;
            let p = metric.prox(&x, step * reg)?;
            let (tr_p, _) = problem.forward(&p)?;
            let f_p = problem.misfit(&tr_p);
            let d = p.add_scaled(-1.0, &y)?;
            let model_value = f_y + grad.inner(&d)? + metric.norm_sq(&d) / (2.0 * step);
            if f_p <= model_value + 1e-12 * f_y.abs().max(f_p.abs()) || step < 1e-300 {
                break (p, f_p);
            }
            step *= config.backtrack_factor;
        };
        let j_c = f_c + penalty(&candidate)?;
        if j_c > j_w {
            if y != w {
                // momentum overshot: restart from the last accepted point
                y = w.clone();
                t = 1.0;
                continue;
            }
            // rounding in the quadratic model; shorten the step
            step *= config.backtrack_factor;
            if step < 1e-12 * initial_step {
                converged = true;
                break;
            }
            continue;
        }
        let decrease = j_w - j_c;
        let previous = std::mem::replace(&mut w, candidate);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = w.add_scaled(-1.0, &previous)?.scaled((t - 1.0) / t_next).add_scaled(1.0, &w)?;
        t = t_next;
        let before = j_w;
        j_w = j_c;
        history.push(j_w);
        if decrease <= config.tolerance * before {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!("reconstruction stopped at the iteration limit ({})", config.max_iterations);
    }
    finish(&problem, w, history, reg, config, iterations, converged)
}

fn finish(
    problem: &Problem,
    w: Signal,
    history: Vec<f64>,
    reg: f64,
    config: &ReconstructionConfig,
    iterations: usize,
    converged: bool,
) -> Result<ReconstructionResult> {
    let (tr, _) = problem.forward(&w)?;
    let misfit = (2.0 * problem.misfit(&tr)).sqrt();
    let (under, support) = support_of(&w, config.threshold_fraction)?;
    Ok(ReconstructionResult {
        w_hat: w,
        support,
        underline: under,
        objective_history: history,
        misfit,
        reg_weight: reg,
        data_tolerance: config.data_tolerance,
        iterations,
        converged,
        bound: None,
    })
}

/// Outcome of the discrepancy search.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscrepancyOutcome {
    pub reg_weight: f64,
    pub result: ReconstructionResult,
    /// `(reg_weight, misfit)` for every solve, in evaluation order.
    pub path: Vec<(f64, f64)>,
    /// Misfit was nondecreasing in the weight along the path.
    pub monotone: bool,
}

/// Largest weight whose solution still fits the data to `epsilon`, to within
/// a factor `bracket_ratio`, found by bisection in `log(reg_weight)`.
pub fn select_beta_discrepancy(
    model: &DynamicModel,
    y_data: &Signal,
    config: &ReconstructionConfig,
    epsilon: f64,
) -> Result<DiscrepancyOutcome> {
    config.validate()?;
    if !(epsilon > 0.0) {
        return Err(RecoverError::InvalidConfig("epsilon must be positive".into()));
    }
    let problem = Problem::new(model, y_data)?;
    let r0 = zero_input_misfit(&problem)?;
    let (lo_default, hi_default) = {
        let (tr, u) = problem.forward(&problem.zero())?;
        let g = problem.gradient(&tr, &u);
        // above the largest channel gradient norm, w = 0 is optimal
        let top = underline(&g, 2.0)?.into_iter().fold(0.0f64, f64::max);
        let hi = 1.1 * top.max(f64::MIN_POSITIVE);
        (hi * 1e-6, hi)
    };
    let (lo0, hi0) = config.reg_bracket.unwrap_or((lo_default, hi_default));
    let last: std::cell::RefCell<Option<Signal>> = Default::default();
    let run = |reg: f64| -> Result<ReconstructionResult> {
        let cfg = ReconstructionConfig {
            reg_weight: reg,
            data_tolerance: epsilon,
            ..config.clone()
        };
        let start = last.borrow().clone();
        let result = solve_from(model, y_data, &cfg, start.as_ref())?;
        *last.borrow_mut() = Some(result.w_hat.clone());
        Ok(result)
    };
    let mut path = Vec::new();
    if r0 <= epsilon {
        let result = run(hi0)?;
        path.push((hi0, result.misfit));
        return Ok(DiscrepancyOutcome {
            reg_weight: hi0,
            result,
            path,
            monotone: true,
        });
    }
    // from the top down, so every solve is warm-started from a sparser neighbour
    let (mut lo, mut hi) = (lo0, hi0.max(lo0));
    let hi_result = run(hi)?;
    path.push((hi, hi_result.misfit));
    if hi_result.misfit <= epsilon {
        return Ok(DiscrepancyOutcome {
            reg_weight: hi,
            result: hi_result,
            monotone: monotone(&path),
            path,
        });
    }
    let mut best = None;
    while hi / lo > config.bracket_ratio {
        let mid = (lo * hi).sqrt();
        let result = run(mid)?;
        path.push((mid, result.misfit));
        if result.misfit <= epsilon {
            lo = mid;
            best = Some(result);
        } else {
            hi = mid;
        }
    }
    let best = match best {
        Some(b) => b,
        None => {
            let result = run(lo0)?;
            path.push((lo0, result.misfit));
            if result.misfit > epsilon {
                return Err(RecoverError::ToleranceUnreachable {
                    epsilon,
                    floor_misfit: result.misfit,
                });
            }
            result
        }
    };
    let monotone = monotone(&path);
    if !monotone {
        warn!("misfit is not monotone in the regularization weight along the search path");
    }
    Ok(DiscrepancyOutcome {
        reg_weight: lo,
        result: best,
        path,
        monotone,
    })
}

fn monotone(path: &[(f64, f64)]) -> bool {
    let mut sorted = path.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    sorted
        .windows(2)
        .all(|w| w[1].1 >= w[0].1 * (1.0 - 1e-6) - 1e-12)
}

/// Freezes channels below `threshold_fraction` of the largest underline to
/// zero and re-solves on the rest until the support stops changing.
///
/// With a positive data tolerance the weight is halved while the refit
/// misfit exceeds it.
pub fn threshold_and_refit(
    model: &DynamicModel,
    y_data: &Signal,
    result: &ReconstructionResult,
    config: &ReconstructionConfig,
) -> Result<ReconstructionResult> {
    config.validate()?;
    let full: Vec<NodeId> = result.w_hat.nodes().to_vec();
    let mut current = result.clone();
    let mut active = full.clone();
    for _round in 0..full.len().max(1) {
        let keep: Vec<NodeId> = current.support_nodes();
        let pruned_nonzero = full
            .iter()
            .zip(&current.underline)
            .any(|(node, &m)| m > 0.0 && !keep.contains(node));
        if keep == active || !pruned_nonzero {
            break;
        }
        if keep.is_empty() {
            warn!("every channel was pruned");
            let problem = Problem::new(model, y_data)?;
            let zero = Signal::zeros(*y_data.grid(), ChannelKind::Input, full.clone());
            let (tr, _) = problem.forward(&zero)?;
            let mut out = current.clone();
            out.misfit = (2.0 * problem.misfit(&tr)).sqrt();
            out.w_hat = zero;
            out.support.clear();
            out.underline = vec![0.0; full.len()];
            return Ok(out);
        }
        let restricted = model.with_ground_set(keep.clone())?;
        let mut cfg = ReconstructionConfig {
            reg_weight: current.reg_weight,
            ..config.clone()
        };
        let mut refit = solve(&restricted, y_data, &cfg)?;
        // halve the weight until feasible or the solver's floor stops it moving
        while config.data_tolerance > 0.0 && refit.misfit > config.data_tolerance && cfg.reg_weight >= refit.reg_weight {
            cfg.reg_weight *= 0.5;
            refit = solve(&restricted, y_data, &cfg)?;
        }
        if config.data_tolerance > 0.0 && refit.misfit > config.data_tolerance && refit.misfit > current.misfit {
            warn!("restricted refit cannot reach the data tolerance; keeping the previous support");
            break;
        }
        current = expand(refit, &full, config.threshold_fraction)?;
        active = keep;
    }
    Ok(current)
}

fn expand(r: ReconstructionResult, full: &[NodeId], fraction: f64) -> Result<ReconstructionResult> {
    let grid = *r.w_hat.grid();
    let mut w = Signal::zeros(grid, ChannelKind::Input, full.to_vec());
    for (c, &node) in full.iter().enumerate() {
        if let Some(values) = r.w_hat.channel_of_node(node) {
            w.channel_mut(c).copy_from_slice(values);
        }
    }
    let (under, support) = support_of(&w, fraction)?;
    Ok(ReconstructionResult {
        w_hat: w,
        support,
        underline: under,
        ..r
    })
}

/// Linear model started at rest, as a map from ground-set inputs to sensor outputs.
pub struct InputOutputMap {
    model: DynamicModel,
    grid: TimeGrid,
}

impl InputOutputMap {
    pub fn new(model: &DynamicModel, grid: TimeGrid) -> Result<Self> {
        if model.field().state_matrix().is_none() {
            return Err(RecoverError::NotLinear);
        }
        let rest = model.with_initial_state(vec![0.0; model.dim()])?;
        Ok(Self { model: rest, grid })
    }
}

impl LinearOperator for InputOutputMap {
    fn input_nodes(&self) -> &[NodeId] {
        self.model.ground_set()
    }

    fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn apply(&self, input: &Signal) -> Signal {
        simulate(&self.model, Some(input), &self.grid)
            .expect("linear model at rest on a valid input")
            .outputs
    }
}

/// Attaches a recovery-bound report computed from a sampled RIP estimate of
/// order `2k`. The report is conditional on that estimate.
pub fn attach_bound_report(
    model: &DynamicModel,
    result: &mut ReconstructionResult,
    k: usize,
    n_samples: usize,
    seed: u64,
) -> Result<()> {
    let map = InputOutputMap::new(model, *result.w_hat.grid())?;
    let rip = estimate_rip_constant(&map, k, n_samples, seed)?;
    let (_, sigma_k) = crate::signals::best_k_sparse(&result.w_hat, k, 2.0, 1.0)?;
    let epsilon = result.data_tolerance;
    let (constants, bound) = match recovery_bound(rip.delta, k, sigma_k, epsilon) {
        Ok((c, b)) => (Some(c), Some(b)),
        Err(_) => (None, None),
    };
    result.bound = Some(BoundReport {
        k,
        delta_estimate: rip.delta,
        premise_violated: rip.premise_violated,
        sigma_k,
        epsilon,
        constants,
        bound,
        note: "conditional on the sampled restricted-isometry estimate, which only bounds the true constant from below"
            .into(),
    });
    Ok(())
}

/// One union of supports whose restricted operator is not injective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnionFailure {
    pub nodes: Vec<NodeId>,
    pub min_singular_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniquenessReport {
    pub k: usize,
    pub spark: usize,
    /// `2k < spark`, the sparsity premise of uniqueness.
    pub premise_holds: bool,
    pub unions_checked: usize,
    pub smallest_singular_value: f64,
    pub failures: Vec<UnionFailure>,
    pub passed: bool,
}

/// Dense discretised input-output matrix of a linear model at rest.
///
/// Rows are `(sensor, sample)` pairs scaled by `sqrt(ω_k)`, columns are
/// `(ground node, sample)` pairs for the first `input_samples` samples scaled
/// by `1/sqrt(ω_k)`, so singular values are those of the operator between the
/// trapezoid `L²` spaces.
pub fn discretized_operator(model: &DynamicModel, grid: &TimeGrid, input_samples: usize) -> Result<DMatrix<f64>> {
    let map = InputOutputMap::new(model, *grid)?;
    let nodes = model.ground_set().to_vec();
    let columns = nodes.len() * input_samples;
    if columns > MAX_DENSE_COLUMNS {
        return Err(RecoverError::OperatorTooLarge {
            columns,
            limit: MAX_DENSE_COLUMNS,
        });
    }
    let omega = grid.trapezoid_weights();
    let p = model.sensors().len();
    let len = grid.len();
    let cols: Vec<Vec<f64>> = (0..columns)
        .into_par_iter()
        .map(|col| {
            let (c, k) = (col / input_samples, col % input_samples);
            let mut e = Signal::zeros(*grid, ChannelKind::Input, nodes.clone());
            e.channel_mut(c)[k] = 1.0 / omega[k].sqrt();
            let y = map.apply(&e);
            let mut out = vec![0.0; p * len];
            for s in 0..p {
                for (j, v) in y.channel(s).iter().enumerate() {
                    out[s * len + j] = v * omega[j].sqrt();
                }
            }
            out
        })
        .collect();
    Ok(DMatrix::from_fn(p * len, columns, |r, c| cols[c][r]))
}

/// Checks injectivity of the discretised operator on every union of at most
/// `2k` ground nodes.
///
/// An input sample at the final time cannot reach a sensor other than itself
/// within the horizon, so only inputs on the first `input_fraction` of the
/// grid are tested; outputs are read over the whole horizon.
pub fn verify_uniqueness_smallscale(
    model: &DynamicModel,
    grid: &TimeGrid,
    k: usize,
    input_fraction: f64,
) -> Result<UniquenessReport> {
    if model.field().state_matrix().is_none() {
        return Err(RecoverError::NotLinear);
    }
    if !(input_fraction > 0.0 && input_fraction <= 1.0) {
        return Err(RecoverError::InvalidConfig("input_fraction must lie in (0, 1]".into()));
    }
    let m = model.ground_set().len();
    let full_columns = m * grid.len();
    if full_columns > MAX_DENSE_COLUMNS {
        return Err(RecoverError::OperatorTooLarge {
            columns: full_columns,
            limit: MAX_DENSE_COLUMNS,
        });
    }
    let sys = model.linear_system().ok_or(RecoverError::NotLinear)?;
    let spark = sys.gammoid().map_err(|e| match e {
        crate::lincoh::LincohError::Graph(g) => RecoverError::Graph(g),
        other => RecoverError::InvalidConfig(other.to_string()),
    })?;
    let spark = spark.spark(None)?.value();
    let samples = ((grid.len() as f64 * input_fraction).floor() as usize).max(1);
    let phi = discretized_operator(model, grid, samples)?;

    let size = (2 * k).min(m);
    let mut unions: Vec<Vec<usize>> = Vec::new();
    for r in 1..=size {
        let mut idx: Vec<usize> = (0..r).collect();
        loop {
            unions.push(idx.clone());
            // next r-combination of 0..m in lexicographic order
            let mut i = r;
            while i > 0 && idx[i - 1] == m - r + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            idx[i - 1] += 1;
            for j in i..r {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }
    let sigmas: Vec<f64> = unions
        .par_iter()
        .map(|u| {
            let cols: Vec<usize> = u.iter().flat_map(|&c| (c * samples)..((c + 1) * samples)).collect();
            if cols.len() > phi.nrows() {
                return 0.0;
            }
            let sub = phi.select_columns(&cols);
            sub.singular_values().iter().copied().fold(f64::INFINITY, f64::min)
        })
        .collect();
    let nodes = model.ground_set();
    let failures: Vec<UnionFailure> = unions
        .iter()
        .zip(&sigmas)
        .filter(|(_, &s)| !(s >= INJECTIVITY_THRESHOLD))
        .map(|(u, &s)| UnionFailure {
            nodes: u.iter().map(|&c| nodes[c]).collect(),
            min_singular_value: s,
        })
        .collect();
    let premise_holds = 2 * k < spark;
    Ok(UniquenessReport {
        k,
        spark,
        premise_holds,
        unions_checked: unions.len(),
        smallest_singular_value: sigmas.iter().copied().fold(f64::INFINITY, f64::min),
        passed: premise_holds && failures.is_empty(),
        failures,
    })
}
