//! File formats: graph and model JSON, signal and matrix CSV, and JSON
//! reports with every float written to 17 significant digits.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::Trajectory;
use crate::gammoid::{Edge, Gammoid, GammoidError, InfluenceGraph, NodeId};
use crate::lincoh::{LincohError, LinearSystem};
use crate::signals::{ChannelKind, Signal, SignalError, TimeGrid};

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Graph(#[from] GammoidError),
    #[error(transparent)]
    System(#[from] LincohError),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

pub type Result<T> = std::result::Result<T, IoError>;

fn format_error<T>(msg: impl Into<String>) -> Result<T> {
    Err(IoError::Format(msg.into()))
}

/// `{:.16e}`: 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// An edge as `[src, dst]` or `[src, dst, weight]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EdgeEntry {
    Weighted(NodeId, NodeId, f64),
    Plain(NodeId, NodeId),
}

impl EdgeEntry {
    pub fn edge(self) -> Edge {
        match self {
            EdgeEntry::Weighted(source, target, weight) => Edge { source, target, weight },
            EdgeEntry::Plain(source, target) => Edge {
                source,
                target,
                weight: 1.0,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    pub nodes: usize,
    pub edges: Vec<EdgeEntry>,
    pub ground_set: Vec<NodeId>,
    pub output_set: Vec<NodeId>,
}

impl GraphFile {
    pub fn gammoid(&self) -> Result<Gammoid> {
        let graph = InfluenceGraph::new(self.nodes, self.edges.iter().map(|e| e.edge()).collect())?;
        Ok(Gammoid::new(graph, self.ground_set.clone(), self.output_set.clone())?)
    }

    pub fn from_gammoid(g: &Gammoid) -> Self {
        Self {
            nodes: g.graph().node_count(),
            edges: g
                .graph()
                .edges()
                .iter()
                .map(|e| EdgeEntry::Weighted(e.source, e.target, e.weight))
                .collect(),
            ground_set: g.ground_set().to_vec(),
            output_set: g.output_set().to_vec(),
        }
    }

    /// The linear system `dx/dt = A x` whose influence graph this is.
    pub fn linear_system(&self) -> Result<LinearSystem> {
        let g = self.gammoid()?;
        Ok(LinearSystem::at_rest(
            g.graph().state_matrix(),
            self.output_set.clone(),
            self.ground_set.clone(),
        )?)
    }
}

/// Linear model: `a` row-major, sensors `Z`, ground set `L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    #[serde(alias = "A")]
    pub a: Vec<Vec<f64>>,
    /// Defaults to rest.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(alias = "Z")]
    pub sensors: Vec<NodeId>,
    #[serde(alias = "L")]
    pub ground_set: Vec<NodeId>,
}

impl ModelFile {
    pub fn linear_system(&self) -> Result<LinearSystem> {
        let n = self.a.len();
        if n == 0 || self.a.iter().any(|row| row.len() != n) {
            return format_error(format!("state matrix must be square, got {n} rows of unequal or wrong length"));
        }
        let a = DMatrix::from_fn(n, n, |i, j| self.a[i][j]);
        let x0 = DVector::from_vec(self.x0.clone().unwrap_or_else(|| vec![0.0; n]));
        Ok(LinearSystem::new(a, self.sensors.clone(), self.ground_set.clone(), x0)?)
    }

    pub fn from_system(sys: &LinearSystem) -> Self {
        let a = sys.state_matrix();
        Self {
            a: (0..a.nrows()).map(|i| a.row(i).iter().copied().collect()).collect(),
            x0: Some(sys.initial_state().iter().copied().collect()),
            sensors: sys.sensors().to_vec(),
            ground_set: sys.ground_set().to_vec(),
        }
    }
}

/// Either JSON shape, told apart by its keys.
#[derive(Debug, Clone, PartialEq)]
pub enum SystemFile {
    Graph(GraphFile),
    Model(ModelFile),
}

impl SystemFile {
    pub fn parse(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        if value.get("edges").is_some() {
            Ok(SystemFile::Graph(serde_json::from_value(value)?))
        } else if value.get("a").is_some() || value.get("A").is_some() {
            Ok(SystemFile::Model(serde_json::from_value(value)?))
        } else {
            format_error("expected a graph (with \"edges\") or a model (with \"a\")")
        }
    }

    pub fn gammoid(&self) -> Result<Gammoid> {
        match self {
            SystemFile::Graph(g) => g.gammoid(),
            SystemFile::Model(m) => Ok(m.linear_system()?.gammoid()?),
        }
    }

    pub fn linear_system(&self) -> Result<LinearSystem> {
        match self {
            SystemFile::Graph(g) => g.linear_system(),
            SystemFile::Model(m) => m.linear_system(),
        }
    }
}

struct SigFormatter(serde_json::ser::PrettyFormatter<'static>);

impl serde_json::ser::Formatter for SigFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        writer.write_all(fmt_f64(value).as_bytes())
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Pretty JSON with floats at 17 significant digits; non-finite floats become `null`.
pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut out = Vec::new();
    let mut ser =
        serde_json::Serializer::with_formatter(&mut out, SigFormatter(serde_json::ser::PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("serde_json writes UTF-8"))
}

/// `t` then one column per channel named `<prefix>_<node>`.
pub fn write_signal_csv<W: Write>(signal: &Signal, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let prefix = signal.kind().prefix();
    let mut header = vec!["t".to_string()];
    header.extend(signal.nodes().iter().map(|n| format!("{prefix}_{n}")));
    w.write_record(&header)?;
    let grid = signal.grid();
    for k in 0..grid.len() {
        let mut row = vec![fmt_f64(grid.time(k))];
        row.extend(signal.channels().iter().map(|c| fmt_f64(c[k])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn signal_csv_string(signal: &Signal) -> Result<String> {
    let mut out = Vec::new();
    write_signal_csv(signal, &mut out)?;
    Ok(String::from_utf8(out).expect("CSV of numbers is UTF-8"))
}

/// Inverse of [`write_signal_csv`]. The time column must be the uniform grid
/// `k * T / n`, checked to a relative `1e-9`.
pub fn read_signal_csv<R: Read>(reader: R) -> Result<Signal> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers()?.clone();
    if header.get(0).map(str::trim) != Some("t") {
        return format_error("first column must be `t`");
    }
    let mut kind = None;
    let mut nodes = Vec::new();
    for name in header.iter().skip(1) {
        let name = name.trim();
        let Some((prefix, id)) = name.split_once('_') else {
            return format_error(format!("column `{name}` is not `<prefix>_<node>`"));
        };
        let Some(k) = ChannelKind::from_prefix(prefix) else {
            return format_error(format!("unknown channel prefix in `{name}`"));
        };
        if kind.is_some_and(|existing| existing != k) {
            return format_error("columns mix channel kinds");
        }
        kind = Some(k);
        nodes.push(
            id.parse::<NodeId>()
                .map_err(|_| IoError::Format(format!("bad node id in `{name}`")))?,
        );
    }
    let Some(kind) = kind else {
        return format_error("no channel columns");
    };
    let mut times = Vec::new();
    let mut values = vec![Vec::new(); nodes.len()];
    for (line, record) in r.records().enumerate() {
        let record = record?;
        if record.len() != nodes.len() + 1 {
            return format_error(format!("row {} has {} fields, expected {}", line + 1, record.len(), nodes.len() + 1));
        }
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| IoError::Format(format!("row {}: `{s}` is not a number", line + 1)))
        };
        times.push(parse(&record[0])?);
        for (c, v) in values.iter_mut().enumerate() {
            v.push(parse(&record[c + 1])?);
        }
    }
    if times.len() < 2 {
        return format_error("a signal needs at least two samples");
    }
    let grid = TimeGrid::new(*times.last().expect("nonempty"), times.len() - 1)?;
    let horizon = grid.horizon();
    for (k, &t) in times.iter().enumerate() {
        if (t - grid.time(k)).abs() > 1e-9 * horizon {
            return format_error(format!("time column is not uniform from 0 (row {})", k + 1));
        }
    }
    Ok(Signal::new(grid, kind, nodes, values)?)
}

/// All states of a trajectory as a signal with `x_<i>` columns.
pub fn trajectory_states(tr: &Trajectory) -> Result<Signal> {
    let n = tr.states.first().map_or(0, Vec::len);
    let values = (0..n).map(|i| tr.states.iter().map(|x| x[i]).collect()).collect();
    Ok(Signal::new(tr.grid, ChannelKind::State, (0..n).collect(), values)?)
}

/// Square matrix indexed by node ids: header `node,<ids>`, then one row per id.
pub fn matrix_csv_string(ids: &[NodeId], rows: &[Vec<f64>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["node".to_string()];
    header.extend(ids.iter().map(|i| i.to_string()));
    w.write_record(&header)?;
    for (id, row) in ids.iter().zip(rows) {
        let mut rec = vec![id.to_string()];
        rec.extend(row.iter().map(|&v| fmt_f64(v)));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| IoError::Format(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("CSV of numbers is UTF-8"))
}
