//! Coherence analysis of linear systems `ẋ = A x + B w`, `y = C x`.
//!
//! `B` selects the ground-set columns and `C` the sensor rows, so the transfer
//! matrix is `T(s) = C (sI - A)^{-1} B` and the input Gramian is `G = Tᴴ T`.

use log::warn;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gammoid::{Gammoid, GammoidError, InfluenceGraph, NodeId};

/// Condition-number ceiling for `sI - A` before an evaluation point is rejected.
pub const MAX_CONDITION: f64 = 1e12;
/// Slack when turning `1/μ + 1` into an integer.
pub const FLOOR_TOLERANCE: f64 = 1e-9;
/// Mutual coherences at or below this count as zero.
pub const ZERO_COHERENCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LincohError {
    #[error("state matrix must be square with finite entries ({rows}x{cols})")]
    BadStateMatrix { rows: usize, cols: usize },
    #[error("initial state has length {got}, expected {expected}")]
    BadInitialState { got: usize, expected: usize },
    #[error(transparent)]
    Graph(#[from] GammoidError),
    #[error("sI - A is near-singular at s = {re}{im:+}i (condition {condition:e}); perturb s")]
    PoleProximity { re: f64, im: f64, condition: f64 },
    #[error("input node {node} influences no sensor (zero Gramian diagonal)")]
    UnobservableInput { node: NodeId },
    #[error("index {index} out of range for a ground set of size {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("no usable evaluation point among {tried}")]
    NoValidEvalPoint { tried: usize },
    #[error("shortest paths from input node {node} to the sensors cancel to zero weight")]
    CancellingShortestPaths { node: NodeId },
}

pub type Result<T> = std::result::Result<T, LincohError>;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    a: DMatrix<f64>,
    sensors: Vec<NodeId>,
    ground_set: Vec<NodeId>,
    x0: DVector<f64>,
}

impl LinearSystem {
    pub fn new(
        a: DMatrix<f64>,
        sensors: Vec<NodeId>,
        ground_set: Vec<NodeId>,
        x0: DVector<f64>,
    ) -> Result<Self> {
        if a.nrows() != a.ncols() || a.nrows() == 0 || a.iter().any(|x| !x.is_finite()) {
            return Err(LincohError::BadStateMatrix {
                rows: a.nrows(),
                cols: a.ncols(),
            });
        }
        if x0.len() != a.nrows() {
            return Err(LincohError::BadInitialState {
                got: x0.len(),
                expected: a.nrows(),
            });
        }
        let sys = Self {
            a,
            sensors,
            ground_set,
            x0,
        };
        // validates both node sets
        sys.gammoid()?;
        Ok(sys)
    }

    /// System started at rest.
    pub fn at_rest(a: DMatrix<f64>, sensors: Vec<NodeId>, ground_set: Vec<NodeId>) -> Result<Self> {
        let n = a.nrows();
        Self::new(a, sensors, ground_set, DVector::zeros(n))
    }

    pub fn dimension(&self) -> usize {
        self.a.nrows()
    }

    pub fn state_matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn sensors(&self) -> &[NodeId] {
        &self.sensors
    }

    pub fn ground_set(&self) -> &[NodeId] {
        &self.ground_set
    }

    pub fn initial_state(&self) -> &DVector<f64> {
        &self.x0
    }

    pub fn with_ground_set(&self, ground_set: Vec<NodeId>) -> Result<Self> {
        Self::new(self.a.clone(), self.sensors.clone(), ground_set, self.x0.clone())
    }

    pub fn influence_graph(&self) -> InfluenceGraph {
        InfluenceGraph::from_state_matrix(&self.a).expect("finite square matrix")
    }

    pub fn gammoid(&self) -> Result<Gammoid> {
        Ok(Gammoid::new(
            self.influence_graph(),
            self.ground_set.clone(),
            self.sensors.clone(),
        )?)
    }

    /// `C (sI - A)^{-1} B`, rows indexed by sensors and columns by the ground set.
    pub fn transfer_matrix(&self, s: Complex64) -> Result<DMatrix<Complex64>> {
        let n = self.dimension();
        let m = DMatrix::from_fn(n, n, |i, j| {
            let diag = if i == j { s } else { Complex64::new(0.0, 0.0) };
            diag - Complex64::new(self.a[(i, j)], 0.0)
        });
        let pole = |condition: f64| LincohError::PoleProximity {
            re: s.re,
            im: s.im,
            condition,
        };
        let lu = m.clone().lu();
        let inverse = lu.try_inverse().ok_or_else(|| pole(f64::INFINITY))?;
        let condition = one_norm(&m) * one_norm(&inverse);
        if !condition.is_finite() || condition > MAX_CONDITION {
            return Err(pole(condition));
        }
        Ok(DMatrix::from_fn(self.sensors.len(), self.ground_set.len(), |r, c| {
            inverse[(self.sensors[r], self.ground_set[c])]
        }))
    }

    /// `G(s) = Tᴴ(s) T(s)`.
    pub fn input_gramian(&self, s: Complex64) -> Result<DMatrix<Complex64>> {
        let t = self.transfer_matrix(s)?;
        Ok(t.adjoint() * t)
    }

    /// Transfer columns scaled to unit length; scaling first keeps the norms of
    /// columns that are tiny at large `|s|` away from underflow.
    fn unit_columns(&self, s: Complex64) -> Result<DMatrix<Complex64>> {
        let mut t = self.transfer_matrix(s)?;
        for (c, mut col) in t.column_iter_mut().enumerate() {
            let peak = col.iter().fold(0.0f64, |m, z| m.max(z.norm()));
            if peak == 0.0 {
                return Err(LincohError::UnobservableInput {
                    node: self.ground_set[c],
                });
            }
            col /= Complex64::new(peak, 0.0);
            let norm = col.norm();
            col /= Complex64::new(norm, 0.0);
        }
        Ok(t)
    }

    /// `|G_ij| / sqrt(G_ii G_jj)` for ground-set positions `i` and `j`.
    pub fn coherence(&self, s: Complex64, i: usize, j: usize) -> Result<f64> {
        let size = self.ground_set.len();
        for index in [i, j] {
            if index >= size {
                return Err(LincohError::IndexOutOfRange { index, size });
            }
        }
        let u = self.unit_columns(s)?;
        if i == j {
            return Ok(1.0);
        }
        Ok(u.column(i).dotc(&u.column(j)).norm())
    }

    /// Full symmetric coherence matrix with unit diagonal.
    pub fn coherence_matrix(&self, s: Complex64) -> Result<DMatrix<f64>> {
        let u = self.unit_columns(s)?;
        let m = self.ground_set.len();
        let mut mu = DMatrix::identity(m, m);
        for i in 0..m {
            for j in (i + 1)..m {
                let v = u.column(i).dotc(&u.column(j)).norm();
                mu[(i, j)] = v;
                mu[(j, i)] = v;
            }
        }
        Ok(mu)
    }

    /// Largest off-diagonal coherence; 0 for a single input.
    pub fn mutual_coherence(&self, s: Complex64) -> Result<f64> {
        Ok(off_diagonal_max(&self.coherence_matrix(s)?))
    }

    /// Coherence matrix at `s`, or at the nudged point `s + 1e-3 (1 + |s|)` when
    /// `s` sits too close to a pole. `None` when both fail on conditioning.
    pub fn coherence_matrix_avoiding_poles(
        &self,
        s: Complex64,
    ) -> Result<Option<(Complex64, DMatrix<f64>)>> {
        match self.coherence_matrix(s) {
            Ok(mu) => Ok(Some((s, mu))),
            Err(LincohError::PoleProximity { .. }) => {
                let nudged = s + Complex64::new(1e-3 * (1.0 + s.norm()), 0.0);
                match self.coherence_matrix(nudged) {
                    Ok(mu) => Ok(Some((nudged, mu))),
                    Err(LincohError::PoleProximity { condition, .. }) => {
                        warn!("dropping evaluation point {s} (condition {condition:e} after nudge)");
                        Ok(None)
                    }
                    Err(e) => Err(e),
                }
            }
            Err(e) => Err(e),
        }
    }

    /// Integer lower bound `floor(1/μ_best + 1)` on the spark, where `μ_best`
    /// is the smallest mutual coherence over the usable points.
    pub fn spark_lower_bound(&self, eval_points: &[Complex64]) -> Result<SparkBound> {
        let evaluated = self.evaluate_points(eval_points)?;
        let (best_point, mu_best) = evaluated
            .iter()
            .map(|(s, mu)| (*s, off_diagonal_max(mu)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("evaluate_points returns at least one point");
        Ok(SparkBound {
            bound: self.bound_from_coherence(mu_best),
            mutual_coherence: mu_best,
            eval_point: [best_point.re, best_point.im],
        })
    }

    /// `floor(1/μ + 1)` capped by the largest possible spark `min(|L|, |Z|) + 1`.
    pub fn bound_from_coherence(&self, mu: f64) -> usize {
        let cap = self.ground_set.len().min(self.sensors.len()) + 1;
        if mu <= ZERO_COHERENCE {
            return cap;
        }
        let raw = (1.0 / mu + 1.0 + FLOOR_TOLERANCE).floor();
        if raw >= cap as f64 {
            cap
        } else {
            raw as usize
        }
    }

    fn evaluate_points(&self, eval_points: &[Complex64]) -> Result<Vec<(Complex64, DMatrix<f64>)>> {
        let results: Vec<Result<Option<(Complex64, DMatrix<f64>)>>> = eval_points
            .par_iter()
            .map(|&s| self.coherence_matrix_avoiding_poles(s))
            .collect();
        let mut kept = Vec::with_capacity(results.len());
        for r in results {
            if let Some(hit) = r? {
                kept.push(hit);
            }
        }
        if kept.is_empty() {
            return Err(LincohError::NoValidEvalPoint {
                tried: eval_points.len(),
            });
        }
        Ok(kept)
    }

    /// Shortest-path coherence matrix computed on `Γ∘Γ'`.
    ///
    /// For every pair the walk from `l_i` to `l_j'` must cross from the `Γ`
    /// half into the `Γ'` half exactly once, at a fused sensor node. All
    /// walks of the minimal length are summed. Pairs without a connecting
    /// path get 0.
    pub fn shortest_path_coherence(&self) -> Result<DMatrix<f64>> {
        let gammoid = self.gammoid()?;
        let cat = gammoid.concatenate(&gammoid.transpose())?;
        let graph = cat.gammoid.graph();
        let nodes = graph.node_count();
        let mut forward: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nodes];
        let mut backward: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nodes];
        for (k, e) in graph.edges().iter().enumerate() {
            let side = if k < cat.first_edge_count {
                &mut forward
            } else {
                &mut backward
            };
            side[e.source].push((e.target, e.weight));
        }
        let mut fused = vec![false; nodes];
        cat.fused.iter().for_each(|&z| fused[z] = true);
        let targets: Vec<usize> = self
            .ground_set
            .iter()
            .map(|&l| cat.second_node_map[l])
            .collect();

        let m = self.ground_set.len();
        let rows: Vec<Vec<Option<f64>>> = (0..m)
            .into_par_iter()
            .map(|i| shortest_weights(&forward, &backward, &fused, self.ground_set[i], &targets))
            .collect();

        let mut diag = Vec::with_capacity(m);
        for (i, row) in rows.iter().enumerate() {
            let node = self.ground_set[i];
            match row[i] {
                None => return Err(LincohError::UnobservableInput { node }),
                Some(w) if w <= 0.0 => return Err(LincohError::CancellingShortestPaths { node }),
                Some(w) => diag.push(w),
            }
        }
        let mut mu = DMatrix::identity(m, m);
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    mu[(i, j)] = rows[i][j].map_or(0.0, |f| f.abs() / (diag[i].sqrt() * diag[j].sqrt()));
                }
            }
        }
        Ok(mu)
    }

    pub fn coherence_report(&self, eval_points: &[Complex64]) -> Result<CoherenceReport> {
        let evaluated = self.evaluate_points(eval_points)?;
        let m = self.ground_set.len();
        let mut min_matrix = DMatrix::from_element(m, m, f64::INFINITY);
        let mut per_point = Vec::with_capacity(evaluated.len());
        for (s, mu) in &evaluated {
            per_point.push(PointCoherence {
                s: [s.re, s.im],
                mutual_coherence: off_diagonal_max(mu),
            });
            min_matrix.zip_apply(mu, |a, b| *a = a.min(b));
        }
        let used: Vec<[f64; 2]> = per_point.iter().map(|p| p.s).collect();
        let dropped = eval_points
            .iter()
            .filter(|s| {
                !evaluated.iter().any(|(u, _)| {
                    *u == **s || *u == **s + Complex64::new(1e-3 * (1.0 + s.norm()), 0.0)
                })
            })
            .map(|s| [s.re, s.im])
            .collect();
        let best = per_point
            .iter()
            .min_by(|a, b| a.mutual_coherence.total_cmp(&b.mutual_coherence))
            .expect("at least one point")
            .clone();
        let (shortest, shortest_error) = match self.shortest_path_coherence() {
            Ok(mu) => (Some(mu), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let shortest_mutual = shortest.as_ref().map(off_diagonal_max);
        Ok(CoherenceReport {
            ground_set: self.ground_set.clone(),
            eval_points: used,
            dropped_points: dropped,
            per_point,
            min_coherence_matrix: rows_of(&min_matrix),
            best_eval_point: best.s,
            best_mutual_coherence: best.mutual_coherence,
            spark_lower_bound: self.bound_from_coherence(best.mutual_coherence),
            shortest_path_matrix: shortest.as_ref().map(rows_of),
            shortest_path_mutual_coherence: shortest_mutual,
            shortest_path_spark_bound: shortest_mutual.map(|mu| self.bound_from_coherence(mu)),
            shortest_path_error: shortest_error,
        })
    }
}

/// Layered walk-weight DP from `start` in phase 0 to every target in phase 1.
fn shortest_weights(
    forward: &[Vec<(usize, f64)>],
    backward: &[Vec<(usize, f64)>],
    fused: &[bool],
    start: usize,
    targets: &[usize],
) -> Vec<Option<f64>> {
    let n = forward.len();
    let mut out: Vec<Option<f64>> = vec![None; targets.len()];
    let mut remaining = targets.len();
    let mut reach = [vec![false; n], vec![false; n]];
    let mut weight = [vec![0.0; n], vec![0.0; n]];
    reach[0][start] = true;
    weight[0][start] = 1.0;
    // a minimal monotone walk visits each half at most once per node
    for _layer in 0..=2 * n {
        for v in 0..n {
            if fused[v] && reach[0][v] {
                reach[1][v] = true;
                weight[1][v] += weight[0][v];
            }
        }
        for (slot, &t) in out.iter_mut().zip(targets) {
            if slot.is_none() && reach[1][t] {
                *slot = Some(weight[1][t]);
                remaining -= 1;
            }
        }
        if remaining == 0 {
            break;
        }
        let mut next_reach = [vec![false; n], vec![false; n]];
        let mut next_weight = [vec![0.0; n], vec![0.0; n]];
        for (phase, adj) in [forward, backward].into_iter().enumerate() {
            for v in 0..n {
                if !reach[phase][v] {
                    continue;
                }
                for &(t, w) in &adj[v] {
                    next_reach[phase][t] = true;
                    next_weight[phase][t] += weight[phase][v] * w;
                }
            }
        }
        if next_reach.iter().all(|r| r.iter().all(|x| !x)) {
            break;
        }
        reach = next_reach;
        weight = next_weight;
    }
    out
}

/// Strict diagonal dominance `|G_ii| > Σ_{j≠i} |G_ij|` for every row.
pub fn diagonal_dominance_check(g: &DMatrix<Complex64>) -> bool {
    (0..g.nrows()).all(|i| {
        let off: f64 = (0..g.ncols())
            .filter(|&j| j != i)
            .map(|j| g[(i, j)].norm())
            .sum();
        g[(i, i)].norm() > off
    })
}

/// 25 real log-spaced points on `[1e-1, 1e6]` followed by [`large_s_points`].
pub fn default_eval_grid() -> Vec<Complex64> {
    let mut pts: Vec<Complex64> = (0..25)
        .map(|k| Complex64::new(10f64.powf(-1.0 + 7.0 * k as f64 / 24.0), 0.0))
        .collect();
    pts.extend(large_s_points());
    pts
}

/// `i·1e4, i·1e5, i·1e6`. On the imaginary axis the `1/|s|` correction to the
/// coherence is orthogonal to its limit, so it only enters at order `1/|s|²`.
pub fn large_s_points() -> Vec<Complex64> {
    [1e4, 1e5, 1e6].iter().map(|&r| Complex64::new(0.0, r)).collect()
}

fn one_norm(m: &DMatrix<Complex64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn off_diagonal_max(mu: &DMatrix<f64>) -> f64 {
    let mut best = 0.0f64;
    for i in 0..mu.nrows() {
        for j in 0..mu.ncols() {
            if i != j {
                best = best.max(mu[(i, j)]);
            }
        }
    }
    best
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparkBound {
    pub bound: usize,
    pub mutual_coherence: f64,
    /// `[re, im]` of the point attaining the smallest mutual coherence.
    pub eval_point: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCoherence {
    pub s: [f64; 2],
    pub mutual_coherence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceReport {
    pub ground_set: Vec<NodeId>,
    /// Points actually used, after pole nudging, as `[re, im]`.
    pub eval_points: Vec<[f64; 2]>,
    pub dropped_points: Vec<[f64; 2]>,
    pub per_point: Vec<PointCoherence>,
    /// Entrywise minimum of the coherence matrices across `eval_points`.
    pub min_coherence_matrix: Vec<Vec<f64>>,
    pub best_eval_point: [f64; 2],
    pub best_mutual_coherence: f64,
    pub spark_lower_bound: usize,
    pub shortest_path_matrix: Option<Vec<Vec<f64>>>,
    pub shortest_path_mutual_coherence: Option<f64>,
    pub shortest_path_spark_bound: Option<usize>,
    pub shortest_path_error: Option<String>,
}
