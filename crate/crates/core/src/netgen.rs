//! Seeded random networks and reconstruction scenarios.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    default_grid, lorenz_grid, lorenz_linearized, lorenz_model, simulate, DynamicModel, DynamicsError, LorenzCoupling,
    LorenzField,
};
use crate::gammoid::{GammoidError, NodeId, Spark};
use crate::lincoh::{LincohError, LinearSystem};
use crate::signals::{ChannelKind, Signal, SignalError, TimeGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetgenError {
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error("no instance with spark >= {required} after {attempts} samples")]
    SparkNotReached { required: usize, attempts: usize },
    #[error(transparent)]
    Graph(#[from] GammoidError),
    #[error(transparent)]
    System(#[from] LincohError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

pub type Result<T> = std::result::Result<T, NetgenError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub nodes: usize,
    /// `None` means `5 / nodes`.
    pub edge_probability: Option<f64>,
    pub weight_min: f64,
    pub weight_max: f64,
    pub sensors: usize,
    /// Explicit true support; empty means `support_size` nodes drawn at random.
    pub support: Vec<NodeId>,
    pub support_size: usize,
    /// Gaussian bumps per active channel.
    pub bumps: usize,
    /// Absolute output noise; `None` means `noise_relative` times the clean output RMS.
    pub noise_std: Option<f64>,
    pub noise_relative: f64,
    /// Range of the uniform initial state; 0 starts at rest.
    pub initial_state_scale: f64,
    pub stability_margin: f64,
    pub horizon: f64,
    /// `None` means the default resolution for `horizon`.
    pub n_steps: Option<usize>,
    /// Resample graph and sensors until the spark reaches this; `None` skips the check.
    pub min_spark: Option<usize>,
    pub max_resamples: usize,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            nodes: 30,
            edge_probability: None,
            weight_min: 0.5,
            weight_max: 1.5,
            sensors: 10,
            support: Vec::new(),
            support_size: 1,
            bumps: 2,
            noise_std: None,
            noise_relative: 0.01,
            initial_state_scale: 0.0,
            stability_margin: 0.1,
            horizon: 5.0,
            n_steps: None,
            min_spark: Some(3),
            max_resamples: 50,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NetgenError::InvalidSpec(m));
        if self.nodes == 0 {
            return bad("nodes must be positive".into());
        }
        if self.sensors == 0 || self.sensors > self.nodes {
            return bad(format!("sensor count {} must lie in 1..={}", self.sensors, self.nodes));
        }
        if self.support.is_empty() && (self.support_size == 0 || self.support_size > self.nodes) {
            return bad(format!("support size {} must lie in 1..={}", self.support_size, self.nodes));
        }
        if let Some(&v) = self.support.iter().find(|&&v| v >= self.nodes) {
            return bad(format!("support node {v} out of range"));
        }
        let mut sorted = self.support.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.support.len() {
            return bad("support lists a node twice".into());
        }
        let p = self.edge_probability();
        if !(0.0..=1.0).contains(&p) {
            return bad(format!("edge probability {p} outside [0, 1]"));
        }
        if !(self.weight_min > 0.0 && self.weight_max >= self.weight_min) {
            return bad("weights need 0 < weight_min <= weight_max".into());
        }
        if !(self.noise_relative >= 0.0) || self.noise_std.is_some_and(|s| !(s >= 0.0)) {
            return bad("noise must be nonnegative".into());
        }
        if !(self.horizon > 0.0) || self.n_steps == Some(0) {
            return bad("grid must have positive horizon and steps".into());
        }
        if !(self.stability_margin >= 0.0) || !(self.initial_state_scale >= 0.0) {
            return bad("stability margin and initial state scale must be nonnegative".into());
        }
        if self.bumps == 0 {
            return bad("at least one bump per channel".into());
        }
        Ok(())
    }

    pub fn edge_probability(&self) -> f64 {
        self.edge_probability.unwrap_or((5.0 / self.nodes as f64).min(1.0))
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        Ok(match self.n_steps {
            Some(n) => TimeGrid::new(self.horizon, n)?,
            None => default_grid(self.horizon)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub system: LinearSystem,
    pub w_true: Signal,
    pub y_clean: Signal,
    pub y_data: Signal,
    pub noise_std: f64,
    /// Exact spark when it is at most `min_spark`, otherwise the bound the check established.
    pub spark: Option<SparkSummary>,
    /// Graph and sensor draws used, including the accepted one.
    pub attempts: usize,
}

impl Scenario {
    pub fn model(&self) -> DynamicModel {
        DynamicModel::from_linear_system(&self.system)
    }

    pub fn true_support(&self) -> Vec<NodeId> {
        self.spec.support.clone()
    }

    /// Expected `||noise||_2` over the horizon, `σ sqrt(P T)`.
    pub fn expected_noise_norm(&self) -> f64 {
        self.noise_std * (self.y_data.n_channels() as f64 * self.y_data.grid().horizon()).sqrt()
    }

    pub fn metadata(&self) -> ScenarioMetadata {
        ScenarioMetadata {
            spec: self.spec.clone(),
            edge_probability: self.spec.edge_probability(),
            sensors: self.system.sensors().to_vec(),
            true_support: self.spec.support.clone(),
            noise_std: self.noise_std,
            expected_noise_norm: self.expected_noise_norm(),
            spark: self.spark.clone(),
            attempts: self.attempts,
            waveform: format!("sum of {} Gaussian bumps per active channel", self.spec.bumps),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparkSummary {
    pub value: usize,
    /// The true spark may be larger.
    pub is_lower_bound: bool,
}

/// Everything needed to regenerate and interpret a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMetadata {
    pub spec: ScenarioSpec,
    pub edge_probability: f64,
    pub sensors: Vec<NodeId>,
    pub true_support: Vec<NodeId>,
    pub noise_std: f64,
    pub expected_noise_norm: f64,
    pub spark: Option<SparkSummary>,
    pub attempts: usize,
    pub waveform: String,
}

fn signed_weight(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let mag = if hi > lo { rng.gen_range(lo..hi) } else { lo };
    if rng.gen_bool(0.5) {
        mag
    } else {
        -mag
    }
}

/// Largest real part of the spectrum.
///
/// The spectrum is the union of those of the diagonal blocks of the strongly
/// connected components, so singleton components are exact and QR runs only on
/// the coupled blocks. A block whose QR iteration stalls is retried under
/// random orthogonal similarities, and bounded by Gershgorin as a last resort.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut graph = petgraph::graph::DiGraph::<(), ()>::with_capacity(n, 0);
    let ids: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
    for i in 0..n {
        for j in 0..n {
            if i != j && a[(i, j)] != 0.0 {
                graph.add_edge(ids[j], ids[i], ());
            }
        }
    }
    petgraph::algo::tarjan_scc(&graph)
        .into_iter()
        .map(|component| {
            let mut nodes: Vec<usize> = component.into_iter().map(|v| v.index()).collect();
            nodes.sort_unstable();
            if nodes.len() == 1 {
                return a[(nodes[0], nodes[0])];
            }
            let block = DMatrix::from_fn(nodes.len(), nodes.len(), |r, c| a[(nodes[r], nodes[c])]);
            block_abscissa(block)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

fn block_abscissa(block: DMatrix<f64>) -> f64 {
    let n = block.nrows();
    let max_re = |m: DMatrix<f64>| {
        nalgebra::Schur::try_new(m, 1e-14, 1000 * n)
            .map(|s| s.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max))
    };
    if let Some(v) = max_re(block.clone()) {
        return v;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    for _ in 0..8 {
        let q = DMatrix::from_fn(n, n, |_, _| normal.sample(&mut rng)).qr().q();
        if let Some(v) = max_re(q.transpose() * &block * &q) {
            return v;
        }
    }
    log::warn!("eigenvalue iteration did not converge; using a Gershgorin bound");
    (0..n)
        .map(|i| block[(i, i)] + (0..n).filter(|&j| j != i).map(|j| block[(i, j)].abs()).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Directed Erdős–Rényi coupling with signed uniform weights, no self-loops,
/// then a diagonal shift placing the spectral abscissa at `-margin`.
pub fn random_state_matrix(rng: &mut ChaCha8Rng, n: usize, p: f64, w_min: f64, w_max: f64, margin: f64) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.gen_bool(p) {
                a[(i, j)] = signed_weight(rng, w_min, w_max);
            }
        }
    }
    let shift = spectral_abscissa(&a) + margin;
    for i in 0..n {
        a[(i, i)] -= shift;
    }
    a
}

fn check_spark(sys: &LinearSystem, required: usize) -> Result<Option<SparkSummary>> {
    let gammoid = sys.gammoid()?;
    // enumerate only up to the requirement: spark ≥ required iff no smaller set is dependent
    match gammoid.spark(Some(required.saturating_sub(1).max(1))) {
        Ok(Spark::Circuit { size, .. }) if size < required => Ok(None),
        Ok(s) => Ok(Some(SparkSummary {
            value: s.value(),
            is_lower_bound: false,
        })),
        Err(GammoidError::BudgetExceeded { .. }) => {
            let exact = gammoid.spark(Some(required));
            Ok(Some(match exact {
                Ok(s) => SparkSummary {
                    value: s.value(),
                    is_lower_bound: false,
                },
                Err(GammoidError::BudgetExceeded { lower_bound, .. }) => SparkSummary {
                    value: lower_bound,
                    is_lower_bound: true,
                },
                Err(e) => return Err(e.into()),
            }))
        }
        Err(e) => Err(e.into()),
    }
}

fn bump_signal(rng: &mut ChaCha8Rng, grid: TimeGrid, nodes: &[NodeId], active: &[NodeId], bumps: usize) -> Result<Signal> {
    let horizon = grid.horizon();
    let params: Vec<Vec<(f64, f64, f64)>> = nodes
        .iter()
        .map(|node| {
            if !active.contains(node) {
                return Vec::new();
            }
            (0..bumps)
                .map(|_| {
                    let amplitude = signed_weight(rng, 0.5, 1.5);
                    let center = rng.gen_range(0.2..0.8) * horizon;
                    let width = rng.gen_range(0.05..0.15) * horizon;
                    (amplitude, center, width)
                })
                .collect()
        })
        .collect();
    Ok(Signal::from_fn(grid, ChannelKind::Input, nodes.to_vec(), |c, t| {
        params[c]
            .iter()
            .map(|(a, m, s)| a * (-0.5 * ((t - m) / s).powi(2)).exp())
            .sum()
    })?)
}

/// Random linear network with a sparse smooth input and noisy sensor data.
pub fn generate_linear_scenario(spec: &ScenarioSpec) -> Result<Scenario> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.nodes;
    let grid = spec.grid()?;
    let ground: Vec<NodeId> = (0..n).collect();

    let mut attempts = 0;
    let (system, spark) = loop {
        attempts += 1;
        let a = random_state_matrix(
            &mut rng,
            n,
            spec.edge_probability(),
            spec.weight_min,
            spec.weight_max,
            spec.stability_margin,
        );
        let mut sensors = sample(&mut rng, n, spec.sensors).into_vec();
        sensors.sort_unstable();
        let x0 = (0..n)
            .map(|_| {
                if spec.initial_state_scale > 0.0 {
                    rng.gen_range(-spec.initial_state_scale..spec.initial_state_scale)
                } else {
                    0.0
                }
            })
            .collect::<Vec<f64>>();
        let sys = LinearSystem::new(a, sensors, ground.clone(), nalgebra::DVector::from_vec(x0))?;
        match spec.min_spark {
            None => break (sys, None),
            Some(required) => {
                if let Some(summary) = check_spark(&sys, required)? {
                    break (sys, Some(summary));
                }
            }
        }
        if attempts >= spec.max_resamples.max(1) {
            return Err(NetgenError::SparkNotReached {
                required: spec.min_spark.unwrap_or(0),
                attempts,
            });
        }
    };

    let mut support = spec.support.clone();
    if support.is_empty() {
        support = sample(&mut rng, n, spec.support_size).into_vec();
    }
    support.sort_unstable();
    let w_true = bump_signal(&mut rng, grid, &ground, &support, spec.bumps)?;
    let model = DynamicModel::from_linear_system(&system);
    let y_clean = simulate(&model, Some(&w_true), &grid)?.outputs;

    let noise_std = spec.noise_std.unwrap_or_else(|| {
        let (sum, count) = y_clean
            .channels()
            .iter()
            .flatten()
            .fold((0.0, 0usize), |(s, c), v| (s + v * v, c + 1));
        spec.noise_relative * (sum / count as f64).sqrt()
    });
    let mut y_data = y_clean.clone();
    if noise_std > 0.0 {
        let normal = Normal::new(0.0, noise_std).expect("finite positive deviation");
        for c in 0..y_data.n_channels() {
            for v in y_data.channel_mut(c) {
                *v += normal.sample(&mut rng);
            }
        }
    }
    let resolved = ScenarioSpec {
        support,
        ..spec.clone()
    };
    Ok(Scenario {
        spec: resolved,
        system,
        w_true,
        y_clean,
        y_data,
        noise_std,
        spark,
        attempts,
    })
}

/// Layered feed-forward system from the weight matrices between consecutive
/// layers (`weights[k]` maps layer `k` to layer `k + 1`). Every node decays at
/// rate `decay`; inputs are the first layer, sensors the last.
pub fn cascade_from_weights(weights: &[DMatrix<f64>], decay: f64) -> Result<LinearSystem> {
    if weights.is_empty() {
        return Err(NetgenError::InvalidSpec("a cascade needs at least two layers".into()));
    }
    let mut sizes = vec![weights[0].ncols()];
    for (k, w) in weights.iter().enumerate() {
        if w.ncols() != sizes[k] || w.nrows() == 0 {
            return Err(NetgenError::InvalidSpec(format!("layer {k} weights do not chain")));
        }
        sizes.push(w.nrows());
    }
    let offsets: Vec<usize> = sizes
        .iter()
        .scan(0, |acc, &k| {
            let o = *acc;
            *acc += k;
            Some(o)
        })
        .collect();
    let n: usize = sizes.iter().sum();
    let mut a = DMatrix::from_diagonal_element(n, n, -decay);
    for (k, w) in weights.iter().enumerate() {
        for r in 0..w.nrows() {
            for c in 0..w.ncols() {
                a[(offsets[k + 1] + r, offsets[k] + c)] = w[(r, c)];
            }
        }
    }
    let last = sizes.len() - 1;
    let sensors = (offsets[last]..offsets[last] + sizes[last]).collect();
    let ground = (0..sizes[0]).collect();
    Ok(LinearSystem::at_rest(a, sensors, ground)?)
}

/// Random cascade with full bipartite coupling between consecutive layers,
/// weights signed uniform on `[0.5, 1.5]`, unit decay.
pub fn generate_cascade(layers: &[usize], seed: u64) -> Result<LinearSystem> {
    if layers.len() < 2 || layers.contains(&0) {
        return Err(NetgenError::InvalidSpec("a cascade needs at least two nonempty layers".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<DMatrix<f64>> = layers
        .windows(2)
        .map(|pair| DMatrix::from_fn(pair[1], pair[0], |_, _| signed_weight(&mut rng, 0.5, 1.5)))
        .collect();
    cascade_from_weights(&weights, 1.0)
}

/// The chaotic system observed through `x` and `z`, modelled by its linear part.
#[derive(Debug, Clone)]
pub struct LorenzScenario {
    pub truth: DynamicModel,
    pub model: DynamicModel,
    pub grid: TimeGrid,
    pub y_data: Signal,
    /// The terms the linear model drops, sampled on the true trajectory.
    pub w_star: Signal,
}

pub fn lorenz_scenario(grid: Option<TimeGrid>) -> Result<LorenzScenario> {
    let grid = grid.unwrap_or_else(lorenz_grid);
    let truth = lorenz_model(28.0, 10.0, 8.0 / 3.0);
    let field = LorenzField {
        rho: 28.0,
        sigma: 10.0,
        beta_param: 8.0 / 3.0,
        coupling: LorenzCoupling::Xy,
        linearized: false,
    };
    let tr = simulate(&truth, None, &grid)?;
    let values = (0..3)
        .map(|i| tr.states.iter().map(|x| field.dropped_terms(x)[i]).collect())
        .collect();
    let w_star = Signal::new(grid, ChannelKind::Input, vec![0, 1, 2], values)?;
    Ok(LorenzScenario {
        truth,
        model: lorenz_linearized(),
        grid,
        y_data: tr.outputs,
        w_star,
    })
}
