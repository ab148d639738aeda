//! Forward simulation of `ẋ = f(x) + B w(t)`, `y = C x` with classical RK4.
//!
//! The input is piecewise linear between grid samples, so the midpoint stages
//! see the average of two neighbouring samples. [`rk4_step_vjp`] is the exact
//! reverse of one step and is what the reconstruction adjoint is built from.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::gammoid::NodeId;
use crate::lincoh::LinearSystem;
use crate::signals::{ChannelKind, Signal, SignalError, TimeGrid};

/// Default resolution for linear models.
pub const STEPS_PER_UNIT_TIME: usize = 200;
pub const LORENZ_HORIZON: f64 = 2.0;
pub const LORENZ_STEPS: usize = 800;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("state became non-finite at step {step}")]
    BlowUp { step: usize },
    #[error("node {node} is outside 0..{dimension}")]
    InvalidNode { node: NodeId, dimension: usize },
    #[error("node {node} listed twice")]
    DuplicateNode { node: NodeId },
    #[error("initial state has length {got}, expected {expected}")]
    BadInitialState { got: usize, expected: usize },
    #[error("input channel for node {node} is nonzero but the node is not in the ground set")]
    InputOutsideGroundSet { node: NodeId },
    #[error("signal grid does not match the simulation grid")]
    GridMismatch,
    #[error("data channels {got:?} do not match the sensors {expected:?}")]
    SensorMismatch { got: Vec<NodeId>, expected: Vec<NodeId> },
    #[error(transparent)]
    Signal(#[from] SignalError),
}

pub type Result<T> = std::result::Result<T, DynamicsError>;

/// Right-hand side `f` of the closed system.
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, x: &[f64], out: &mut [f64]);

    /// `∂f/∂x`; central differences with step `1e-6 (1 + |x_i|)` unless overridden.
    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        finite_difference_jacobian(|x, out| self.eval(x, out), self.dim(), x)
    }

    /// `out = (∂f/∂x) v`.
    fn jvp(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        let jac = self.jacobian(x);
        for (r, o) in out.iter_mut().enumerate() {
            *o = (0..v.len()).map(|c| jac[(r, c)] * v[c]).sum();
        }
    }

    /// `out = (∂f/∂x)ᵀ v`.
    fn vjp(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        let jac = self.jacobian(x);
        for (c, o) in out.iter_mut().enumerate() {
            *o = (0..v.len()).map(|r| jac[(r, c)] * v[r]).sum();
        }
    }

    /// `Some(A)` when `f(x) = A x`.
    fn state_matrix(&self) -> Option<&DMatrix<f64>> {
        None
    }
}

/// Central differences with step `1e-6 (1 + |x_i|)`.
pub fn finite_difference_jacobian(f: impl Fn(&[f64], &mut [f64]), n: usize, x: &[f64]) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(n, n);
    let mut probe = x.to_vec();
    let (mut plus, mut minus) = (vec![0.0; n], vec![0.0; n]);
    for i in 0..n {
        let h = 1e-6 * (1.0 + x[i].abs());
        probe[i] = x[i] + h;
        f(&probe, &mut plus);
        probe[i] = x[i] - h;
        f(&probe, &mut minus);
        probe[i] = x[i];
        for r in 0..n {
            jac[(r, i)] = (plus[r] - minus[r]) / (2.0 * h);
        }
    }
    jac
}

/// `f(x) = A x`, evaluated through the nonzero entries only.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearField {
    a: DMatrix<f64>,
    /// `(row, col, value)` sorted by column.
    entries: Vec<(usize, usize, f64)>,
}

impl LinearField {
    pub fn new(a: DMatrix<f64>) -> Self {
        assert!(a.is_square(), "state matrix must be square");
        let mut entries = Vec::new();
        for j in 0..a.ncols() {
            for i in 0..a.nrows() {
                if a[(i, j)] != 0.0 {
                    entries.push((i, j, a[(i, j)]));
                }
            }
        }
        Self { a, entries }
    }
}

impl VectorField for LinearField {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for &(i, j, v) in &self.entries {
            out[i] += v * x[j];
        }
    }

    fn jacobian(&self, _x: &[f64]) -> DMatrix<f64> {
        self.a.clone()
    }

    fn jvp(&self, _x: &[f64], v: &[f64], out: &mut [f64]) {
        self.eval(v, out)
    }

    fn vjp(&self, _x: &[f64], v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for &(i, j, a) in &self.entries {
            out[j] += a * v[i];
        }
    }

    fn state_matrix(&self) -> Option<&DMatrix<f64>> {
        Some(&self.a)
    }
}

/// Which product enters the `y` equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LorenzCoupling {
    /// `ẏ = -x y + ρ x - y`, as in the reconstruction experiment.
    Xy,
    /// `ẏ = -x z + ρ x - y`, the classical attractor.
    Xz,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LorenzField {
    pub rho: f64,
    pub sigma: f64,
    pub beta_param: f64,
    pub coupling: LorenzCoupling,
    /// Drop both product terms.
    pub linearized: bool,
}

impl LorenzField {
    /// Product terms removed by linearisation, i.e. the true model error along `x`.
    pub fn dropped_terms(&self, x: &[f64]) -> [f64; 3] {
        let second = match self.coupling {
            LorenzCoupling::Xy => x[0] * x[1],
            LorenzCoupling::Xz => x[0] * x[2],
        };
        [0.0, -second, x[0] * x[1]]
    }

    fn linear_part(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(
            3,
            3,
            &[
                -self.sigma, self.sigma, 0.0,
                self.rho, -1.0, 0.0,
                0.0, 0.0, -self.beta_param,
            ],
        )
    }
}

impl VectorField for LorenzField {
    fn dim(&self) -> usize {
        3
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        out[0] = self.sigma * (x[1] - x[0]);
        out[1] = self.rho * x[0] - x[1];
        out[2] = -self.beta_param * x[2];
        if !self.linearized {
            let d = self.dropped_terms(x);
            out[1] += d[1];
            out[2] += d[2];
        }
    }

    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let mut j = self.linear_part();
        if !self.linearized {
            match self.coupling {
                LorenzCoupling::Xy => {
                    j[(1, 0)] -= x[1];
                    j[(1, 1)] -= x[0];
                }
                LorenzCoupling::Xz => {
                    j[(1, 0)] -= x[2];
                    j[(1, 2)] -= x[0];
                }
            }
            j[(2, 0)] += x[1];
            j[(2, 1)] += x[0];
        }
        j
    }

    fn jvp(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        let j = self.jacobian(x);
        for r in 0..3 {
            out[r] = j[(r, 0)] * v[0] + j[(r, 1)] * v[1] + j[(r, 2)] * v[2];
        }
    }

    fn vjp(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        let j = self.jacobian(x);
        for c in 0..3 {
            out[c] = j[(0, c)] * v[0] + j[(1, c)] * v[1] + j[(2, c)] * v[2];
        }
    }
}

type RhsFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;
type JacFn = dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync;

/// User-supplied right-hand side with an optional analytic Jacobian.
pub struct FnField {
    dim: usize,
    rhs: Box<RhsFn>,
    jac: Option<Box<JacFn>>,
}

impl FnField {
    pub fn new(dim: usize, rhs: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        Self {
            dim,
            rhs: Box::new(rhs),
            jac: None,
        }
    }

    pub fn with_jacobian(mut self, jac: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.jac = Some(Box::new(jac));
        self
    }
}

impl VectorField for FnField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        (self.rhs)(x, out)
    }

    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        match &self.jac {
            Some(j) => j(x),
            None => finite_difference_jacobian(|x, out| self.eval(x, out), self.dim, x),
        }
    }
}

/// Closed model plus the node sets that define inputs and outputs.
#[derive(Clone)]
pub struct DynamicModel {
    field: Arc<dyn VectorField>,
    x0: Vec<f64>,
    sensors: Vec<NodeId>,
    ground_set: Vec<NodeId>,
}

impl fmt::Debug for DynamicModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DynamicModel")
            .field("dim", &self.field.dim())
            .field("x0", &self.x0)
            .field("sensors", &self.sensors)
            .field("ground_set", &self.ground_set)
            .finish()
    }
}

fn check_nodes(nodes: &[NodeId], dimension: usize) -> Result<()> {
    let mut seen = vec![false; dimension];
    for &node in nodes {
        if node >= dimension {
            return Err(DynamicsError::InvalidNode { node, dimension });
        }
        if std::mem::replace(&mut seen[node], true) {
            return Err(DynamicsError::DuplicateNode { node });
        }
    }
    Ok(())
}

impl DynamicModel {
    pub fn new(
        field: Arc<dyn VectorField>,
        x0: Vec<f64>,
        sensors: Vec<NodeId>,
        ground_set: Vec<NodeId>,
    ) -> Result<Self> {
        let n = field.dim();
        if x0.len() != n {
            return Err(DynamicsError::BadInitialState {
                got: x0.len(),
                expected: n,
            });
        }
        check_nodes(&sensors, n)?;
        check_nodes(&ground_set, n)?;
        Ok(Self {
            field,
            x0,
            sensors,
            ground_set,
        })
    }

    pub fn linear(a: DMatrix<f64>, x0: Vec<f64>, sensors: Vec<NodeId>, ground_set: Vec<NodeId>) -> Result<Self> {
        Self::new(Arc::new(LinearField::new(a)), x0, sensors, ground_set)
    }

    pub fn from_linear_system(sys: &LinearSystem) -> Self {
        Self::linear(
            sys.state_matrix().clone(),
            sys.initial_state().iter().copied().collect(),
            sys.sensors().to_vec(),
            sys.ground_set().to_vec(),
        )
        .expect("LinearSystem already validated")
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    pub fn field(&self) -> &dyn VectorField {
        self.field.as_ref()
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.x0
    }

    pub fn sensors(&self) -> &[NodeId] {
        &self.sensors
    }

    pub fn ground_set(&self) -> &[NodeId] {
        &self.ground_set
    }

    pub fn with_ground_set(&self, ground_set: Vec<NodeId>) -> Result<Self> {
        Self::new(self.field.clone(), self.x0.clone(), self.sensors.clone(), ground_set)
    }

    pub fn with_initial_state(&self, x0: Vec<f64>) -> Result<Self> {
        Self::new(self.field.clone(), x0, self.sensors.clone(), self.ground_set.clone())
    }

    /// The linear system view when `f` is linear.
    pub fn linear_system(&self) -> Option<LinearSystem> {
        let a = self.field.state_matrix()?.clone();
        LinearSystem::new(
            a,
            self.sensors.clone(),
            self.ground_set.clone(),
            self.x0.clone().into(),
        )
        .ok()
    }

    /// Dense `N × (n+1)` samples of `B w`, rejecting nonzero channels outside the ground set.
    pub fn input_samples(&self, w: &Signal, grid: &TimeGrid) -> Result<Vec<Vec<f64>>> {
        if w.grid() != grid {
            return Err(DynamicsError::GridMismatch);
        }
        let n = self.dim();
        let mut u = vec![vec![0.0; n]; grid.len()];
        for (c, &node) in w.nodes().iter().enumerate() {
            let values = w.channel(c);
            if !self.ground_set.contains(&node) {
                if node < n && values.iter().all(|&v| v == 0.0) {
                    continue;
                }
                return Err(DynamicsError::InputOutsideGroundSet { node });
            }
            for (k, &v) in values.iter().enumerate() {
                u[k][node] += v;
            }
        }
        Ok(u)
    }
}

/// States at every grid point and the sensor readings.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: TimeGrid,
    /// Row `k` is the state at `t_k`.
    pub states: Vec<Vec<f64>>,
    pub outputs: Signal,
}

impl Trajectory {
    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k]
    }

    /// Time series of one state component.
    pub fn component(&self, i: usize) -> Vec<f64> {
        self.states.iter().map(|x| x[i]).collect()
    }
}

/// Stage states of one RK4 step, needed again on the way back.
pub(crate) struct Stages {
    pub x: [Vec<f64>; 4],
}

fn axpy(out: &mut [f64], base: &[f64], alpha: f64, dir: &[f64]) {
    for ((o, b), d) in out.iter_mut().zip(base).zip(dir) {
        *o = b + alpha * d;
    }
}

/// One RK4 step from `x` with inputs `u0` at `t_k` and `u1` at `t_{k+1}`.
pub(crate) fn rk4_step(
    field: &dyn VectorField,
    h: f64,
    x: &[f64],
    u0: &[f64],
    u1: &[f64],
    out: &mut [f64],
) -> Stages {
    let n = x.len();
    let um: Vec<f64> = u0.iter().zip(u1).map(|(a, b)| 0.5 * (a + b)).collect();
    let mut k = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut xs = [x.to_vec(), vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let inputs = [u0, &um[..], &um[..], u1];
    let offsets = [0.0, 0.5 * h, 0.5 * h, h];
    for s in 0..4 {
        if s > 0 {
            let (prev, cur) = xs.split_at_mut(s);
            axpy(&mut cur[0], &prev[0], offsets[s], &k[s - 1]);
        }
        field.eval(&xs[s], &mut k[s]);
        k[s].iter_mut().zip(inputs[s]).for_each(|(a, b)| *a += b);
    }
    for i in 0..n {
        out[i] = x[i] + h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
    }
    Stages { x: xs }
}

/// Tangent of [`rk4_step`] along `(dx, du0, du1)` at the recorded stages.
pub(crate) fn rk4_step_jvp(
    field: &dyn VectorField,
    h: f64,
    stages: &Stages,
    dx: &[f64],
    du0: &[f64],
    du1: &[f64],
    out: &mut [f64],
) {
    let n = dx.len();
    let dum: Vec<f64> = du0.iter().zip(du1).map(|(a, b)| 0.5 * (a + b)).collect();
    let inputs = [du0, &dum[..], &dum[..], du1];
    let offsets = [0.0, 0.5 * h, 0.5 * h, h];
    let mut dk = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut dxs = dx.to_vec();
    for s in 0..4 {
        if s > 0 {
            axpy(&mut dxs, dx, offsets[s], &dk[s - 1]);
        }
        field.jvp(&stages.x[s], &dxs, &mut dk[s]);
        dk[s].iter_mut().zip(inputs[s]).for_each(|(a, b)| *a += b);
    }
    for i in 0..n {
        out[i] = dx[i] + h / 6.0 * (dk[0][i] + 2.0 * dk[1][i] + 2.0 * dk[2][i] + dk[3][i]);
    }
}

/// Reverse of [`rk4_step`]: given `a = ∂/∂x_{k+1}`, adds the contributions to
/// `∂/∂x_k`, `∂/∂u_k` and `∂/∂u_{k+1}`.
pub(crate) fn rk4_step_vjp(
    field: &dyn VectorField,
    h: f64,
    stages: &Stages,
    a: &[f64],
    x_bar: &mut [f64],
    u0_bar: &mut [f64],
    u1_bar: &mut [f64],
) {
    let n = a.len();
    let mut kbar: [Vec<f64>; 4] = [
        a.iter().map(|v| h / 6.0 * v).collect(),
        a.iter().map(|v| h / 3.0 * v).collect(),
        a.iter().map(|v| h / 3.0 * v).collect(),
        a.iter().map(|v| h / 6.0 * v).collect(),
    ];
    let offsets = [0.0, 0.5 * h, 0.5 * h, h];
    let mut um_bar = vec![0.0; n];
    let mut xs_bar = vec![0.0; n];
    for s in (0..4).rev() {
        match s {
            0 => u0_bar.iter_mut().zip(&kbar[0]).for_each(|(o, v)| *o += v),
            3 => u1_bar.iter_mut().zip(&kbar[3]).for_each(|(o, v)| *o += v),
            _ => um_bar.iter_mut().zip(&kbar[s]).for_each(|(o, v)| *o += v),
        }
        field.vjp(&stages.x[s], &kbar[s], &mut xs_bar);
        x_bar.iter_mut().zip(&xs_bar).for_each(|(o, v)| *o += v);
        if s > 0 {
            let step = offsets[s];
            kbar[s - 1].iter_mut().zip(&xs_bar).for_each(|(o, v)| *o += step * v);
        }
    }
    x_bar.iter_mut().zip(a).for_each(|(o, v)| *o += v);
    for i in 0..n {
        u0_bar[i] += 0.5 * um_bar[i];
        u1_bar[i] += 0.5 * um_bar[i];
    }
}

/// Integrates the model under input `w` (zero when `None`).
pub fn simulate(model: &DynamicModel, w: Option<&Signal>, grid: &TimeGrid) -> Result<Trajectory> {
    let n = model.dim();
    let u = match w {
        Some(w) => Some(model.input_samples(w, grid)?),
        None => None,
    };
    let zero = vec![0.0; n];
    let mut states = Vec::with_capacity(grid.len());
    states.push(model.x0.clone());
    let h = grid.step();
    for k in 0..grid.n_steps() {
        let (u0, u1) = match &u {
            Some(u) => (&u[k][..], &u[k + 1][..]),
            None => (&zero[..], &zero[..]),
        };
        let mut next = vec![0.0; n];
        rk4_step(model.field(), h, &states[k], u0, u1, &mut next);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(DynamicsError::BlowUp { step: k + 1 });
        }
        states.push(next);
    }
    let values = model
        .sensors
        .iter()
        .map(|&z| states.iter().map(|x| x[z]).collect())
        .collect();
    let outputs = Signal::new(grid.clone(), ChannelKind::Output, model.sensors.clone(), values)?;
    Ok(Trajectory {
        grid: grid.clone(),
        states,
        outputs,
    })
}

/// Checks that `y` carries exactly the sensor channels of `model`.
pub fn check_output_signal(model: &DynamicModel, y: &Signal) -> Result<()> {
    if y.nodes() != model.sensors() {
        return Err(DynamicsError::SensorMismatch {
            got: y.nodes().to_vec(),
            expected: model.sensors().to_vec(),
        });
    }
    Ok(())
}

/// `r = y_data - y⁰` where `y⁰` is the closed-model output.
pub fn residual(model: &DynamicModel, y_data: &Signal) -> Result<Signal> {
    check_output_signal(model, y_data)?;
    let closed = simulate(model, None, y_data.grid())?;
    Ok(y_data.add_scaled(-1.0, &closed.outputs)?.with_kind(ChannelKind::Residual))
}

/// Lorenz model from the reconstruction experiment, sensors `{x, z}`, inputs on all three states.
pub fn lorenz_model(rho: f64, sigma: f64, beta_param: f64) -> DynamicModel {
    lorenz_with(rho, sigma, beta_param, LorenzCoupling::Xy, false)
}

/// [`lorenz_model`] with both product terms removed.
pub fn lorenz_linearized() -> DynamicModel {
    lorenz_with(28.0, 10.0, 8.0 / 3.0, LorenzCoupling::Xy, true)
}

pub fn lorenz_classical(rho: f64, sigma: f64, beta_param: f64) -> DynamicModel {
    lorenz_with(rho, sigma, beta_param, LorenzCoupling::Xz, false)
}

fn lorenz_with(rho: f64, sigma: f64, beta_param: f64, coupling: LorenzCoupling, linearized: bool) -> DynamicModel {
    let field = LorenzField {
        rho,
        sigma,
        beta_param,
        coupling,
        linearized,
    };
    DynamicModel::new(Arc::new(field), vec![1.0, 1.0, 1.0], vec![0, 2], vec![0, 1, 2])
        .expect("fixed node sets are valid")
}

/// Default grid for a linear model over `[0, horizon]`.
pub fn default_grid(horizon: f64) -> std::result::Result<TimeGrid, SignalError> {
    let steps = ((horizon * STEPS_PER_UNIT_TIME as f64).round() as usize).max(1);
    TimeGrid::new(horizon, steps)
}

pub fn lorenz_grid() -> TimeGrid {
    TimeGrid::new(LORENZ_HORIZON, LORENZ_STEPS).expect("positive horizon")
}

/// Builds a model by registry name: `lorenz`, `lorenz-linear`, `lorenz-classic`.
pub fn builtin_model(name: &str) -> Option<DynamicModel> {
    match name {
        "lorenz" => Some(lorenz_model(28.0, 10.0, 8.0 / 3.0)),
        "lorenz-linear" => Some(lorenz_linearized()),
        "lorenz-classic" => Some(lorenz_classical(28.0, 10.0, 8.0 / 3.0)),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(a: f64, x0: f64) -> DynamicModel {
        DynamicModel::linear(DMatrix::from_element(1, 1, a), vec![x0], vec![0], vec![0]).unwrap()
    }

    #[test]
    fn zero_field_keeps_state() {
        let model = DynamicModel::linear(DMatrix::zeros(2, 2), vec![0.3, -1.0], vec![1], vec![0]).unwrap();
        let tr = simulate(&model, None, &TimeGrid::new(1.0, 10).unwrap()).unwrap();
        assert!(tr.states.iter().all(|x| x == &vec![0.3, -1.0]));
    }

    #[test]
    fn exponential_decay() {
        let tr = simulate(&scalar(-1.0, 1.0), None, &TimeGrid::new(1.0, 1000).unwrap()).unwrap();
        assert!((tr.state(1000)[0] - (-1.0f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn outputs_are_sensor_rows() {
        let model = lorenz_model(28.0, 10.0, 8.0 / 3.0);
        let tr = simulate(&model, None, &TimeGrid::new(0.5, 100).unwrap()).unwrap();
        for k in 0..tr.grid.len() {
            assert_eq!(tr.outputs.channel(0)[k], tr.states[k][0]);
            assert_eq!(tr.outputs.channel(1)[k], tr.states[k][2]);
        }
    }

    #[test]
    fn lorenz_at_zero_parameters_is_fixed() {
        let model = lorenz_model(0.0, 0.0, 0.0).with_initial_state(vec![0.0; 3]).unwrap();
        let tr = simulate(&model, None, &lorenz_grid()).unwrap();
        assert!(tr.states.iter().all(|x| x.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn lorenz_jacobian_matches_differences() {
        for coupling in [LorenzCoupling::Xy, LorenzCoupling::Xz] {
            let f = LorenzField {
                rho: 28.0,
                sigma: 10.0,
                beta_param: 8.0 / 3.0,
                coupling,
                linearized: false,
            };
            let x = [1.3, -0.7, 2.1];
            let fd = FnField::new(3, move |x, out| f.eval(x, out)).jacobian(&x);
            assert!((f.jacobian(&x) - fd).abs().max() < 1e-6);
        }
    }

    #[test]
    fn blow_up_names_step() {
        let field = FnField::new(1, |x, out| out[0] = x[0] * x[0]);
        let model = DynamicModel::new(Arc::new(field), vec![1.0], vec![0], vec![0]).unwrap();
        let err = simulate(&model, None, &TimeGrid::new(5.0, 50).unwrap()).unwrap_err();
        assert!(matches!(err, DynamicsError::BlowUp { step } if step > 1));
    }

    #[test]
    fn inputs_off_the_ground_set_are_rejected() {
        let model = DynamicModel::linear(DMatrix::zeros(2, 2), vec![0.0; 2], vec![1], vec![0]).unwrap();
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let w = Signal::from_fn(grid.clone(), ChannelKind::Input, vec![1], |_, t| t).unwrap();
        assert_eq!(
            simulate(&model, Some(&w), &grid).unwrap_err(),
            DynamicsError::InputOutsideGroundSet { node: 1 }
        );
        let silent = Signal::zeros(grid.clone(), ChannelKind::Input, vec![1]);
        assert!(simulate(&model, Some(&silent), &grid).is_ok());
    }

    #[test]
    fn constructor_validation() {
        assert!(matches!(
            DynamicModel::linear(DMatrix::zeros(2, 2), vec![0.0; 2], vec![2], vec![0]),
            Err(DynamicsError::InvalidNode { node: 2, .. })
        ));
        assert!(matches!(
            DynamicModel::linear(DMatrix::zeros(2, 2), vec![0.0; 2], vec![1, 1], vec![0]),
            Err(DynamicsError::DuplicateNode { node: 1 })
        ));
        assert!(builtin_model("lorenz-linear").is_some());
        assert!(builtin_model("vanderpol").is_none());
    }
}
