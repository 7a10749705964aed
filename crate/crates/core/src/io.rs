//! JSON and CSV forms of chains, meshes and estimates.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::circuits::realized_model;
use crate::dtmc::{ChainRecord, Matrices, Matrix, StateId, TransitionModel};
use crate::error::{Error, Result};
use crate::feynman_kac::Estimate;
use crate::geometry::{ElementKind, SurfaceMesh};
use crate::platform::Platform;

impl ChainRecord {
    /// Only static chains have a record; collapse time-indexed ones first.
    pub fn from_model(model: &TransitionModel) -> Result<Self> {
        if !model.is_static() {
            return Err(Error::Contract("only static chains can be exported".into()));
        }
        let quantized = realized_model(model, Platform::Reference)?;
        Ok(ChainRecord {
            states: model.n_states(),
            dt: model.dt,
            rows: model.at(0).rows.clone(),
            quantized_rows: quantized.at(0).rows.clone(),
            absorbing_id: model.absorbing,
        })
    }

    /// The full-precision chain, validated.
    pub fn to_model(&self) -> Result<TransitionModel> {
        if self.rows.len() != self.states {
            return Err(Error::Structural(format!("{} rows for {} states", self.rows.len(), self.states)));
        }
        let model = TransitionModel {
            dt: self.dt,
            matrices: Matrices::Static(Matrix { rows: self.rows.clone() }),
            absorbing: self.absorbing_id,
            positions: Vec::new(),
        };
        model.validate()?;
        Ok(model)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshRecord {
    pub vertices: Vec<[f64; 3]>,
    /// Vertex indices and kind of each element.
    pub elements: Vec<(Vec<usize>, ElementKind)>,
    pub states: Vec<[f64; 3]>,
    pub adjacency: Vec<Vec<StateId>>,
}

impl MeshRecord {
    pub fn from_mesh(mesh: &SurfaceMesh) -> Self {
        MeshRecord {
            vertices: mesh.vertices.clone(),
            elements: mesh.elements.iter().map(|e| (e.vertices.clone(), e.kind)).collect(),
            states: mesh.states.clone(),
            adjacency: mesh.adjacency.clone(),
        }
    }
}

/// One exported estimate at `(state, t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub state: StateId,
    pub t: f64,
    pub value: f64,
    pub stderr: Option<f64>,
    #[serde(rename = "M")]
    pub m: u64,
}

impl EstimateRecord {
    pub fn new(state: StateId, t: f64, e: &Estimate) -> Self {
        EstimateRecord { state, t, value: e.value, stderr: e.standard_error, m: e.sample_count as u64 }
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| format!("{v:?}"))
}

/// `state_id,t,x0..,value,stderr`, one row per estimate.
pub fn write_solution_csv<W: Write>(mut out: W, records: &[EstimateRecord], positions: &[Vec<f64>]) -> std::io::Result<()> {
    let dim = positions.first().map_or(0, Vec::len);
    let cols: Vec<String> = (0..dim).map(|i| format!(",x{i}")).collect();
    writeln!(out, "state_id,t{},value,stderr", cols.concat())?;
    for r in records {
        let pos = positions.get(r.state as usize).map_or_else(|| vec![String::new(); dim], |p| p.iter().map(|x| format!("{x:?}")).collect());
        let pos: String = pos.iter().map(|x| format!(",{x}")).collect();
        writeln!(out, "{},{:?}{pos},{:?},{}", r.state, r.t, r.value, opt(r.stderr))?;
    }
    Ok(())
}

/// One estimate checked against a known solution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub state: StateId,
    pub t: f64,
    pub value: f64,
    pub oracle: f64,
    pub abs_error: f64,
    pub stderr: Option<f64>,
}

pub fn write_comparison_csv<W: Write>(mut out: W, rows: &[Comparison]) -> std::io::Result<()> {
    writeln!(out, "state_id,t,value,oracle,abs_error,stderr")?;
    for c in rows {
        writeln!(out, "{},{:?},{:?},{:?},{:?},{}", c.state, c.t, c.value, c.oracle, c.abs_error, opt(c.stderr))?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub points: usize,
    pub max_abs_error: f64,
    /// Mean of `100·|value - oracle| / |oracle|` over points whose oracle
    /// exceeds `floor` in magnitude.
    pub mean_percent_error: f64,
    pub percent_points: usize,
}

pub fn summarize(rows: &[Comparison], floor: f64) -> ComparisonSummary {
    let max_abs_error = rows.iter().map(|c| c.abs_error).fold(0.0, f64::max);
    let pct: Vec<f64> = rows.iter().filter(|c| c.oracle.abs() > floor).map(|c| 100.0 * c.abs_error / c.oracle.abs()).collect();
    ComparisonSummary {
        points: rows.len(),
        max_abs_error,
        mean_percent_error: if pct.is_empty() { 0.0 } else { pct.iter().sum::<f64>() / pct.len() as f64 },
        percent_points: pct.len(),
    }
}
