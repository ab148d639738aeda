//! Multi-channel time signals on a uniform grid and the norms built on them.
//!
//! Every integral is a trapezoid sum on the grid, so component norms, the
//! `p`-`q` norms and the inner product used by the reconstruction all share
//! one quadrature.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gammoid::NodeId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("time horizon must be positive and finite, got {0}")]
    InvalidHorizon(f64),
    #[error("grid needs at least one step")]
    NoSteps,
    #[error("exponent {name} = {value} outside [1, inf)")]
    InvalidExponent { name: &'static str, value: f64 },
    #[error("channel {channel} has {got} samples, grid expects {expected}")]
    LengthMismatch {
        channel: usize,
        got: usize,
        expected: usize,
    },
    #[error("{nodes} node ids for {channels} channels")]
    ChannelCountMismatch { nodes: usize, channels: usize },
    #[error("non-finite sample in channel {channel} at index {index}")]
    NonFinite { channel: usize, index: usize },
    #[error("signals live on different grids or channel sets")]
    Incompatible,
    #[error("block soft-threshold has a closed form only for p = 2 (got p = {0})")]
    UnsupportedExponent(f64),
    #[error("threshold must be non-negative, got {0}")]
    NegativeThreshold(f64),
    #[error("sparsity level k = {k} invalid for {channels} channels")]
    InvalidSparsity { k: usize, channels: usize },
    #[error("RIP premise violated: delta_2k = {0} is not in [0, sqrt(2) - 1)")]
    RipPremiseViolated(f64),
    #[error("operator maps every probe input to zero; cannot normalize")]
    DegenerateOperator,
    #[error("negative error level {name} = {value}")]
    NegativeLevel { name: &'static str, value: f64 },
}

pub type Result<T> = std::result::Result<T, SignalError>;

/// Uniform grid `t_k = k * h` on `[0, horizon]` with `h = horizon / n_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(SignalError::InvalidHorizon(horizon));
        }
        if n_steps == 0 {
            return Err(SignalError::NoSteps);
        }
        Ok(Self { horizon, n_steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// Number of grid points, `n_steps + 1`.
    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.horizon
        } else {
            k as f64 * self.step()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.time(k)).collect()
    }

    /// Trapezoid weights: `h/2` at both ends, `h` inside.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let h = self.step();
        let mut w = vec![h; self.len()];
        w[0] = 0.5 * h;
        w[self.n_steps] = 0.5 * h;
        w
    }
}

/// What a signal's channels hold; determines the CSV column prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelKind {
    Input,
    Output,
    Residual,
    State,
}

impl ChannelKind {
    pub fn prefix(self) -> &'static str {
        match self {
            ChannelKind::Input => "w",
            ChannelKind::Output => "y",
            ChannelKind::Residual => "r",
            ChannelKind::State => "x",
        }
    }

    pub fn from_prefix(prefix: &str) -> Option<Self> {
        match prefix {
            "w" => Some(ChannelKind::Input),
            "y" => Some(ChannelKind::Output),
            "r" => Some(ChannelKind::Residual),
            "x" => Some(ChannelKind::State),
            _ => None,
        }
    }
}

/// Channels indexed by network node ids, all sampled on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    grid: TimeGrid,
    kind: ChannelKind,
    nodes: Vec<NodeId>,
    values: Vec<Vec<f64>>,
}

impl Signal {
    pub fn new(grid: TimeGrid, kind: ChannelKind, nodes: Vec<NodeId>, values: Vec<Vec<f64>>) -> Result<Self> {
        if nodes.len() != values.len() {
            return Err(SignalError::ChannelCountMismatch {
                nodes: nodes.len(),
                channels: values.len(),
            });
        }
        for (c, v) in values.iter().enumerate() {
            if v.len() != grid.len() {
                return Err(SignalError::LengthMismatch {
                    channel: c,
                    got: v.len(),
                    expected: grid.len(),
                });
            }
            if let Some(index) = v.iter().position(|x| !x.is_finite()) {
                return Err(SignalError::NonFinite { channel: c, index });
            }
        }
        Ok(Self {
            grid,
            kind,
            nodes,
            values,
        })
    }

    pub fn zeros(grid: TimeGrid, kind: ChannelKind, nodes: Vec<NodeId>) -> Self {
        let values = vec![vec![0.0; grid.len()]; nodes.len()];
        Self {
            grid,
            kind,
            nodes,
            values,
        }
    }

    /// Samples `f(channel_index, t)` on the grid.
    pub fn from_fn(
        grid: TimeGrid,
        kind: ChannelKind,
        nodes: Vec<NodeId>,
        mut f: impl FnMut(usize, f64) -> f64,
    ) -> Result<Self> {
        let times = grid.times();
        let values = (0..nodes.len())
            .map(|c| times.iter().map(|&t| f(c, t)).collect())
            .collect();
        Self::new(grid, kind, nodes, values)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn kind(&self) -> ChannelKind {
        self.kind
    }

    pub fn with_kind(mut self, kind: ChannelKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn n_channels(&self) -> usize {
        self.nodes.len()
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.values[c]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.values[c]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn channel_of_node(&self, node: NodeId) -> Option<&[f64]> {
        self.nodes
            .iter()
            .position(|&n| n == node)
            .map(|c| self.values[c].as_slice())
    }

    pub fn is_compatible(&self, other: &Signal) -> bool {
        self.grid == other.grid && self.nodes == other.nodes
    }

    fn check_compatible(&self, other: &Signal) -> Result<()> {
        if self.is_compatible(other) {
            Ok(())
        } else {
            Err(SignalError::Incompatible)
        }
    }

    /// `self + alpha * other`.
    pub fn add_scaled(&self, alpha: f64, other: &Signal) -> Result<Signal> {
        self.check_compatible(other)?;
        let mut out = self.clone();
        for (a, b) in out.values.iter_mut().zip(&other.values) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += alpha * y;
            }
        }
        Ok(out)
    }

    pub fn scaled(&self, alpha: f64) -> Signal {
        let mut out = self.clone();
        out.values
            .iter_mut()
            .flat_map(|c| c.iter_mut())
            .for_each(|x| *x *= alpha);
        out
    }

    /// Trapezoid inner product summed over channels.
    pub fn inner(&self, other: &Signal) -> Result<f64> {
        self.check_compatible(other)?;
        let w = self.grid.trapezoid_weights();
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.iter().zip(b).zip(&w).map(|((x, y), q)| q * x * y).sum::<f64>())
            .sum())
    }

    /// Keeps the listed nodes (in the given order); missing nodes become zero channels.
    pub fn select(&self, nodes: &[NodeId]) -> Signal {
        let values = nodes
            .iter()
            .map(|&n| {
                self.channel_of_node(n)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; self.grid.len()])
            })
            .collect();
        Signal {
            grid: self.grid,
            kind: self.kind,
            nodes: nodes.to_vec(),
            values,
        }
    }
}

fn check_p(p: f64) -> Result<()> {
    if p.is_finite() && p >= 1.0 {
        Ok(())
    } else {
        Err(SignalError::InvalidExponent { name: "p", value: p })
    }
}

/// Trapezoid approximation of `(∫ |w|^p dt)^(1/p)`.
pub fn component_p_norm(channel: &[f64], grid: &TimeGrid, p: f64) -> Result<f64> {
    check_p(p)?;
    if channel.len() != grid.len() {
        return Err(SignalError::LengthMismatch {
            channel: 0,
            got: channel.len(),
            expected: grid.len(),
        });
    }
    let w = grid.trapezoid_weights();
    if p == 2.0 {
        return Ok(channel.iter().zip(&w).map(|(x, q)| q * x * x).sum::<f64>().sqrt());
    }
    let scale = channel.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return Ok(0.0);
    }
    let s: f64 = channel
        .iter()
        .zip(&w)
        .map(|(x, q)| q * (x.abs() / scale).powf(p))
        .sum();
    Ok(scale * s.powf(1.0 / p))
}

/// Vector of per-channel `p`-norms.
pub fn underline(sig: &Signal, p: f64) -> Result<Vec<f64>> {
    check_p(p)?;
    sig.values
        .iter()
        .map(|c| component_p_norm(c, &sig.grid, p))
        .collect()
}

fn q_norm(v: &[f64], q: f64) -> Result<f64> {
    if !(q.is_finite() && q >= 1.0) {
        return Err(SignalError::InvalidExponent { name: "q", value: q });
    }
    Ok(match q {
        1.0 => v.iter().map(|x| x.abs()).sum(),
        2.0 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        _ => v.iter().map(|x| x.abs().powf(q)).sum::<f64>().powf(1.0 / q),
    })
}

/// `q`-norm of the underline vector.
pub fn pq_norm(sig: &Signal, p: f64, q: f64) -> Result<f64> {
    q_norm(&underline(sig, p)?, q)
}

/// Number of channels whose `p`-norm exceeds `atol`; the default tolerance is
/// `1e-6` times the largest channel norm.
pub fn zero_norm(sig: &Signal, p: f64, atol: Option<f64>) -> Result<usize> {
    let u = underline(sig, p)?;
    let atol = match atol {
        Some(a) if a < 0.0 => return Err(SignalError::NegativeLevel { name: "atol", value: a }),
        Some(a) => a,
        None => 1e-6 * u.iter().fold(0.0f64, |m, &x| m.max(x)),
    };
    Ok(u.iter().filter(|&&x| x > atol).count())
}

/// Best invariable `k`-sparse approximation: keeps the `k` channels with the
/// largest norms and returns the `q`-norm of what was dropped.
pub fn best_k_sparse(sig: &Signal, k: usize, p: f64, q: f64) -> Result<(Signal, f64)> {
    let m = sig.n_channels();
    if k > m {
        return Err(SignalError::InvalidSparsity { k, channels: m });
    }
    let u = underline(sig, p)?;
    let mut order: Vec<usize> = (0..m).collect();
    // stable: ties keep the lower channel index
    order.sort_by(|&a, &b| u[b].total_cmp(&u[a]));
    let mut out = sig.clone();
    let mut dropped = Vec::with_capacity(m - k);
    for &c in &order[k..] {
        dropped.push(u[c]);
        out.values[c].iter_mut().for_each(|x| *x = 0.0);
    }
    let sigma = q_norm(&dropped, q)?;
    Ok((out, sigma))
}

/// Proximal map of `tau * ||.||_{2,1}`: every channel shrinks radially by `tau`.
pub fn block_soft_threshold(sig: &Signal, tau: f64, p: f64) -> Result<Signal> {
    if p != 2.0 {
        return Err(SignalError::UnsupportedExponent(p));
    }
    if !(tau >= 0.0) {
        return Err(SignalError::NegativeThreshold(tau));
    }
    let norms = underline(sig, 2.0)?;
    let mut out = sig.clone();
    for (c, norm) in out.values.iter_mut().zip(norms) {
        let factor = if norm <= tau { 0.0 } else { 1.0 - tau / norm };
        c.iter_mut().for_each(|x| *x *= factor);
    }
    Ok(out)
}

/// A linear input-output map on signals, e.g. a linear system started at rest.
pub trait LinearOperator: Sync {
    fn input_nodes(&self) -> &[NodeId];
    fn grid(&self) -> &TimeGrid;
    fn apply(&self, input: &Signal) -> Signal;
}

/// Maps every input channel to an identical output channel.
#[derive(Debug, Clone)]
pub struct IdentityOperator {
    pub nodes: Vec<NodeId>,
    pub grid: TimeGrid,
}

impl LinearOperator for IdentityOperator {
    fn input_nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn apply(&self, input: &Signal) -> Signal {
        input.clone().with_kind(ChannelKind::Output)
    }
}

/// Sampled estimate of the restricted-isometry constant `δ_2k`.
///
/// This is a lower bound for the true constant: only the sampled pairs are
/// checked. The ratios are taken after dividing the operator's energy gain by
/// the median single-channel gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RipEstimate {
    pub k: usize,
    pub delta: f64,
    /// Median single-channel energy gain that the ratios were divided by.
    pub normalization: f64,
    pub samples_used: usize,
    pub samples_skipped: usize,
    /// `delta >= sqrt(2) - 1`, i.e. the recovery-bound premise fails.
    pub premise_violated: bool,
}

const MAX_RESAMPLES: usize = 10;

fn smooth_channel(rng: &mut ChaCha8Rng, grid: &TimeGrid) -> Vec<f64> {
    let terms: Vec<(f64, f64, f64)> = (1..=3)
        .map(|m| {
            (
                rng.gen_range(-1.0..1.0),
                m as f64 * std::f64::consts::PI / grid.horizon(),
                rng.gen_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    grid.times()
        .iter()
        .map(|&t| terms.iter().map(|(a, f, ph)| a * (f * t + ph).sin()).sum())
        .collect()
}

fn random_sparse(rng: &mut ChaCha8Rng, nodes: &[NodeId], grid: &TimeGrid, k: usize) -> Signal {
    let m = nodes.len();
    let mut idx: Vec<usize> = (0..m).collect();
    for i in 0..k {
        let j = rng.gen_range(i..m);
        idx.swap(i, j);
    }
    let mut sig = Signal::zeros(*grid, ChannelKind::Input, nodes.to_vec());
    for &c in &idx[..k] {
        sig.values[c] = smooth_channel(rng, grid);
    }
    sig
}

fn sq_dist(a: &[f64], b: &[f64], sign: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x + sign * y).powi(2)).sum()
}

/// Samples `n_samples` pairs `u, v ∈ Σ_j` for every level `j = 1..=k` and
/// reports the largest deviation of the two isometry ratios from one.
///
/// Levels are nested (level `j` draws its own stream), so the estimate is
/// nondecreasing in `k` for a fixed seed.
pub fn estimate_rip_constant(
    op: &dyn LinearOperator,
    k: usize,
    n_samples: usize,
    seed: u64,
) -> Result<RipEstimate> {
    let nodes = op.input_nodes();
    let m = nodes.len();
    if k == 0 || 2 * k > m {
        return Err(SignalError::InvalidSparsity { k, channels: m });
    }
    let grid = *op.grid();

    let probe = {
        let t = grid.times();
        t.iter()
            .map(|&t| (std::f64::consts::PI * t / grid.horizon()).sin())
            .collect::<Vec<f64>>()
    };
    let probe_norm = component_p_norm(&probe, &grid, 2.0)?.powi(2);
    let mut gains: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|c| {
            let mut u = Signal::zeros(grid, ChannelKind::Input, nodes.to_vec());
            u.values[c] = probe.clone();
            let y = op.apply(&u);
            pq_norm(&y, 2.0, 2.0).map(|n| n * n / probe_norm)
        })
        .collect::<Result<_>>()?;
    gains.sort_by(f64::total_cmp);
    let normalization = if m % 2 == 1 {
        gains[m / 2]
    } else {
        0.5 * (gains[m / 2 - 1] + gains[m / 2])
    };
    if !(normalization > 0.0) {
        return Err(SignalError::DegenerateOperator);
    }

    let jobs: Vec<(usize, usize)> = (1..=k)
        .flat_map(|level| (0..n_samples).map(move |s| (level, s)))
        .collect();
    let outcomes: Vec<Option<f64>> = jobs
        .par_iter()
        .map(|&(level, sample)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(((level as u64) << 32) | sample as u64);
            for _ in 0..MAX_RESAMPLES {
                let u = random_sparse(&mut rng, nodes, &grid, level);
                let v = random_sparse(&mut rng, nodes, &grid, level);
                let (uu, uv) = (underline(&u, 2.0).ok()?, underline(&v, 2.0).ok()?);
                let (pu, pv) = (
                    underline(&op.apply(&u), 2.0).ok()?,
                    underline(&op.apply(&v), 2.0).ok()?,
                );
                let den_minus = sq_dist(&uu, &uv, -1.0);
                let den_plus = sq_dist(&uu, &uv, 1.0);
                if den_minus <= f64::EPSILON * den_plus || den_plus == 0.0 {
                    continue;
                }
                let r_minus = sq_dist(&pu, &pv, -1.0) / den_minus / normalization;
                let r_plus = sq_dist(&pu, &pv, 1.0) / den_plus / normalization;
                return Some((r_minus - 1.0).abs().max((r_plus - 1.0).abs()));
            }
            None
        })
        .collect();
    let samples_used = outcomes.iter().filter(|o| o.is_some()).count();
    let delta = outcomes.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
    Ok(RipEstimate {
        k,
        delta,
        normalization,
        samples_used,
        samples_skipped: outcomes.len() - samples_used,
        premise_violated: delta >= std::f64::consts::SQRT_2 - 1.0,
    })
}

/// Constants of the noisy recovery bound for a given `δ_2k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryBoundConstants {
    pub delta_2k: f64,
    pub alpha: f64,
    pub beta_const: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl RecoveryBoundConstants {
    pub fn new(delta_2k: f64) -> Result<Self> {
        if !(0.0..std::f64::consts::SQRT_2 - 1.0).contains(&delta_2k) {
            return Err(SignalError::RipPremiseViolated(delta_2k));
        }
        let alpha = std::f64::consts::SQRT_2 * delta_2k / (1.0 - delta_2k);
        let beta_const = 1.0 / (1.0 - delta_2k);
        let c0 = 4.0 * alpha / (1.0 - alpha) + 2.0;
        let c1 = 2.0 * beta_const / (1.0 - alpha);
        let c2 = (1.0 + delta_2k).sqrt() * c1;
        Ok(Self {
            delta_2k,
            alpha,
            beta_const,
            c0,
            c1,
            c2,
        })
    }
}

/// `||ŵ - w*||_2 <= C0 σ_k / sqrt(k) + C2 ε`.
pub fn recovery_bound(
    delta_2k: f64,
    k: usize,
    sigma_k: f64,
    epsilon: f64,
) -> Result<(RecoveryBoundConstants, f64)> {
    if k == 0 {
        return Err(SignalError::InvalidSparsity { k, channels: 0 });
    }
    for (name, value) in [("sigma_k", sigma_k), ("epsilon", epsilon)] {
        if !(value >= 0.0) {
            return Err(SignalError::NegativeLevel { name, value });
        }
    }
    let c = RecoveryBoundConstants::new(delta_2k)?;
    Ok((c, c.c0 * sigma_k / (k as f64).sqrt() + c.c2 * epsilon))
}
