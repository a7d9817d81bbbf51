use std::fmt::Write as _;
use std::path::Path;

use crate::capsnet::{forward, Mode, ModelConfig, ModelParams};
use crate::connectivity::{write_atomic, ConnectivityMatrix};
use crate::error::{Error, Result};
use crate::numerics::RandomStream;

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    /// 1-based routing iteration.
    pub iteration: usize,
    pub channel: usize,
    pub slice: usize,
    pub position: usize,
    /// Coupling coefficient toward each class.
    pub coupling: Vec<f64>,
}

/// Coupling coefficients of every primary capsule at every routing
/// iteration for one input.
#[derive(Clone, Debug, PartialEq)]
pub struct RoutingTrace {
    pub sample_id: String,
    pub n_classes: usize,
    pub rows: Vec<TraceRow>,
}

impl RoutingTrace {
    pub fn header(n_classes: usize) -> String {
        let mut h = "sample_id,iteration,channel,slice,position".to_string();
        for j in 0..n_classes {
            let _ = write!(h, ",c_class{j}");
        }
        h
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.rows.len() * 48);
        s.push_str(&Self::header(self.n_classes));
        s.push('\n');
        for r in &self.rows {
            let _ = write!(
                s,
                "{},{},{},{},{}",
                self.sample_id, r.iteration, r.channel, r.slice, r.position
            );
            for c in &r.coupling {
                let _ = write!(s, ",{c}");
            }
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }
}

/// Runs one inference pass and records `c_ij` per iteration.
pub fn export_routing_trace(
    params: &ModelParams,
    config: &ModelConfig,
    matrix: &ConnectivityMatrix,
    sample_id: &str,
) -> Result<RoutingTrace> {
    if sample_id.contains(',') || sample_id.contains('\n') {
        return Err(Error::Config(format!(
            "sample id {sample_id:?} cannot contain commas or newlines"
        )));
    }
    let out = forward(
        params,
        config,
        matrix,
        Mode::Infer,
        &mut RandomStream::new(0, 0),
    )?;
    let coords = config.capsule_coordinates();
    let j = config.n_classes;
    let mut rows = Vec::with_capacity(coords.len() * out.routing.snapshots.len());
    for (it, c) in out.routing.snapshots.iter().enumerate() {
        for (i, &(channel, slice, position)) in coords.iter().enumerate() {
            rows.push(TraceRow {
                iteration: it + 1,
                channel,
                slice,
                position,
                coupling: c.data()[i * j..(i + 1) * j].to_vec(),
            });
        }
    }
    Ok(RoutingTrace {
        sample_id: sample_id.to_string(),
        n_classes: j,
        rows,
    })
}
