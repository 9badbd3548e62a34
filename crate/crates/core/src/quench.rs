//! Quench traces: magic, half-chain entanglement and energy along a time grid,
//! plus their CSV / JSON representation.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::{evolve, EigenPropagator, KrylovConfig, Propagator, TimeGrid};
use crate::hamiltonian::{build_hamiltonian, prepare_initial_state, InitialStateSpec, ModelSpec};
use crate::magic::{entanglement, half_chain_mask, haar_reference, moment_sums};
use crate::state::{StateVector, DEFAULT_MAX_QUBITS};

#[derive(Clone, Debug, PartialEq)]
pub struct QuenchSpec {
    pub model: ModelSpec,
    pub initial: InitialStateSpec,
    pub grid: TimeGrid,
    pub propagator: Propagator,
    pub krylov: KrylovConfig,
    pub max_qubits: usize,
    pub diagnostics: Diagnostics,
}

/// Which observables to compute; disabled columns are filled with NaN.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub m2: bool,
    pub entanglement: bool,
}

impl Default for Diagnostics {
    fn default() -> Self {
        Self { m2: true, entanglement: true }
    }
}

impl QuenchSpec {
    pub fn new(model: ModelSpec, initial: InitialStateSpec, grid: TimeGrid) -> Self {
        Self {
            model,
            initial,
            grid,
            propagator: Propagator::Auto,
            krylov: KrylovConfig::default(),
            max_qubits: DEFAULT_MAX_QUBITS,
            diagnostics: Diagnostics::default(),
        }
    }
}

/// Observables of one trajectory, one entry per grid time.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceColumns {
    pub m2: Vec<f64>,
    pub s2_half: Vec<f64>,
    pub s1_half: Vec<f64>,
    pub energy: Vec<f64>,
}

impl TraceColumns {
    fn with_capacity(n: usize) -> Self {
        Self {
            m2: Vec::with_capacity(n),
            s2_half: Vec::with_capacity(n),
            s1_half: Vec::with_capacity(n),
            energy: Vec::with_capacity(n),
        }
    }

    fn mean_of(samples: &[TraceColumns]) -> Self {
        let n = samples.len() as f64;
        let avg = |pick: fn(&TraceColumns) -> &Vec<f64>| -> Vec<f64> {
            let len = pick(&samples[0]).len();
            (0..len)
                .map(|k| samples.iter().map(|s| pick(s)[k]).sum::<f64>() / n)
                .collect()
        };
        Self {
            m2: avg(|c| &c.m2),
            s2_half: avg(|c| &c.s2_half),
            s1_half: avg(|c| &c.s1_half),
            energy: avg(|c| &c.energy),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuenchTrace {
    pub n_qubits: usize,
    pub times: Vec<f64>,
    pub samples: Vec<TraceColumns>,
    /// Per-time average over samples (magic is averaged per sample, not
    /// computed from averaged moments).
    pub mean: TraceColumns,
    pub haar_reference: f64,
}

/// Observables of a single state.
pub fn observe(psi: &StateVector, ham: &crate::hamiltonian::SparseHamiltonian) -> Result<[f64; 4]> {
    observe_with(psi, ham, Diagnostics::default())
}

fn observe_with(psi: &StateVector, ham: &crate::hamiltonian::SparseHamiltonian, diag: Diagnostics) -> Result<[f64; 4]> {
    let m2 = if diag.m2 { moment_sums(psi, &[2.0])?.sre(2.0)? } else { f64::NAN };
    let (s2, s1) = if diag.entanglement {
        let ent = entanglement(psi, half_chain_mask(psi.n_qubits()))?;
        (ent.s2, ent.s1)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok([m2, s2, s1, ham.energy(psi)?])
}

/// Runs the quench for every member of the initial-state ensemble.
pub fn quench_trace(spec: &QuenchSpec) -> Result<QuenchTrace> {
    let ham = build_hamiltonian(&spec.model, spec.max_qubits)?;
    let initial = prepare_initial_state(&spec.initial, &ham)?;
    let n_t = spec.grid.len();
    let mut samples = Vec::with_capacity(initial.len());
    // one diagonalization serves the whole ensemble
    let eigen = if spec.propagator.uses_eigen(ham.n_qubits()) {
        Some(EigenPropagator::new(&ham)?)
    } else {
        None
    };
    for (k, psi0) in initial.iter().enumerate() {
        log::debug!("quench sample {k} / {}", initial.len());
        let states = match &eigen {
            Some(p) => p.evolve(psi0, &spec.grid)?,
            None => evolve(&ham, psi0, &spec.grid, spec.propagator, &spec.krylov)?,
        };
        let mut cols = TraceColumns::with_capacity(n_t);
        for psi in &states {
            let [m2, s2, s1, e] = observe_with(psi, &ham, spec.diagnostics)?;
            cols.m2.push(m2);
            cols.s2_half.push(s2);
            cols.s1_half.push(s1);
            cols.energy.push(e);
        }
        samples.push(cols);
    }
    Ok(QuenchTrace {
        n_qubits: ham.n_qubits(),
        times: spec.grid.times().to_vec(),
        mean: TraceColumns::mean_of(&samples),
        samples,
        haar_reference: haar_reference(ham.n_qubits()),
    })
}

/// One line of a trace CSV. `sample_id` is the ensemble index or `"mean"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    #[serde(rename = "M2")]
    pub m2: f64,
    #[serde(rename = "S2_half")]
    pub s2_half: f64,
    #[serde(rename = "S1_half")]
    pub s1_half: f64,
    pub energy: f64,
    pub sample_id: String,
}

pub const MEAN_SAMPLE_ID: &str = "mean";

impl QuenchTrace {
    pub fn rows(&self) -> Vec<TraceRow> {
        let mut rows = Vec::with_capacity(self.times.len() * (self.samples.len() + 1));
        let push = |rows: &mut Vec<TraceRow>, c: &TraceColumns, id: String| {
            for (k, &t) in self.times.iter().enumerate() {
                rows.push(TraceRow {
                    t,
                    m2: c.m2[k],
                    s2_half: c.s2_half[k],
                    s1_half: c.s1_half[k],
                    energy: c.energy[k],
                    sample_id: id.clone(),
                });
            }
        };
        for (i, s) in self.samples.iter().enumerate() {
            push(&mut rows, s, i.to_string());
        }
        push(&mut rows, &self.mean, MEAN_SAMPLE_ID.to_string());
        rows
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_rows(w, &self.rows())
    }

    /// Rebuilds a trace from CSV rows; `n_qubits` comes from the sidecar.
    pub fn read_csv<R: Read>(r: R, n_qubits: usize) -> Result<Self> {
        let rows: Vec<TraceRow> = read_rows(r)?;
        let mut times = Vec::new();
        let mut samples: Vec<TraceColumns> = Vec::new();
        let mut mean = TraceColumns::default();
        for row in rows {
            let cols = if row.sample_id == MEAN_SAMPLE_ID {
                times.push(row.t);
                &mut mean
            } else {
                let id: usize = row
                    .sample_id
                    .parse()
                    .map_err(|_| Error::Config(format!("bad sample_id {:?}", row.sample_id)))?;
                if id >= samples.len() {
                    samples.resize_with(id + 1, TraceColumns::default);
                }
                &mut samples[id]
            };
            cols.m2.push(row.m2);
            cols.s2_half.push(row.s2_half);
            cols.s1_half.push(row.s1_half);
            cols.energy.push(row.energy);
        }
        if samples.iter().any(|s| s.m2.len() != times.len()) {
            return Err(Error::Alignment("samples and mean rows have different lengths".into()));
        }
        Ok(Self {
            n_qubits,
            times,
            samples,
            mean,
            haar_reference: haar_reference(n_qubits),
        })
    }
}

/// JSON sidecar written next to a trace CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSidecar {
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub n_qubits: usize,
    pub n_samples: usize,
    pub haar_reference: f64,
    pub code_version: String,
}

pub(crate) fn write_rows<W: Write, T: Serialize>(w: W, rows: &[T]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r).map_err(csv_error)?;
    }
    wr.flush()?;
    Ok(())
}

pub(crate) fn read_rows<R: Read, T: for<'de> Deserialize<'de>>(r: R) -> Result<Vec<T>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(csv_error)
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Config(format!("malformed CSV: {other:?}")),
    }
}
