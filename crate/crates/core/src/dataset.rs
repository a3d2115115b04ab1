//! Seeded dataset generation from the DistFlow oracle, splitting, and CSV I/O.
//!
//! Every sample draws from its own ChaCha stream (`seed`, stream = sample
//! index), so generated data does not depend on the number of threads.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::feeder::{DistFlowSolver, FeederError, FeederModel, Scenario, VoltageProfile};
use crate::textio::fmt_f64;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("oracle failed on sample {index}: {source}")]
    Oracle {
        index: usize,
        #[source]
        source: FeederError,
    },
    #[error(transparent)]
    Feeder(#[from] FeederError),
    #[error("{path}: line {line}: malformed row: {message}")]
    MalformedRow {
        path: String,
        line: u64,
        message: String,
    },
    #[error("{path}: line {line}: expected {expected} fields, found {found}")]
    WidthMismatch {
        path: String,
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("invalid perturbation spec: {0}")]
    InvalidSpec(String),
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One sample: `[p; q]` net loads and the oracle voltages.
#[derive(Debug, Clone, PartialEq)]
pub struct PfRow {
    pub input: Vec<f64>,
    pub output: Vec<f64>,
}

impl PfRow {
    pub fn net_p(&self) -> &[f64] {
        &self.input[..self.output.len()]
    }

    pub fn net_q(&self) -> &[f64] {
        &self.input[self.output.len()..]
    }
}

/// Ordered `key=value` generation record written next to data files.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Metadata {
    pub entries: Vec<(String, String)>,
}

impl Metadata {
    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    pub fn parse(text: &str) -> Self {
        let entries = text
            .lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
            .collect();
        Self { entries }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PfDataset {
    pub rows: Vec<PfRow>,
    pub metadata: Metadata,
}

impl PfDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_buses(&self) -> Option<usize> {
        self.rows.first().map(|r| r.output.len())
    }
}

/// Demand perturbation for dataset generation.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbSpec {
    /// Each bus's p and q demand is scaled by an independent factor drawn
    /// uniformly from `[1 - relative_range, 1 + relative_range]`.
    pub relative_range: f64,
    /// Additive uniform offset on net reactive load.
    pub q_offset_range: (f64, f64),
    /// Buses (`1..=N`) receiving the reactive offset.
    pub q_offset_nodes: Vec<usize>,
}

impl PerturbSpec {
    /// ±10 % demand scaling plus a `[-0.8, 0.2]` pu reactive offset at
    /// every DER bus.
    pub fn pf_default(model: &FeederModel) -> Self {
        Self {
            relative_range: 0.10,
            q_offset_range: (-0.8, 0.2),
            q_offset_nodes: model.der_nodes.clone(),
        }
    }

    /// ±10 % demand scaling only.
    pub fn scenario_default() -> Self {
        Self {
            relative_range: 0.10,
            q_offset_range: (0.0, 0.0),
            q_offset_nodes: Vec::new(),
        }
    }

    fn validate(&self, n_buses: usize) -> Result<(), DatasetError> {
        if !(self.relative_range >= 0.0) {
            return Err(DatasetError::InvalidSpec("relative_range must be ≥ 0".into()));
        }
        let (lo, hi) = self.q_offset_range;
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(DatasetError::InvalidSpec(format!("bad offset interval [{lo}, {hi}]")));
        }
        if let Some(bus) = self.q_offset_nodes.iter().find(|&&b| b == 0 || b > n_buses) {
            return Err(DatasetError::InvalidSpec(format!("offset bus {bus} out of range")));
        }
        Ok(())
    }

    fn describe(&self) -> String {
        format!(
            "relative_range={:?};q_offset_range=[{:?},{:?}];q_offset_nodes={:?}",
            self.relative_range, self.q_offset_range.0, self.q_offset_range.1, self.q_offset_nodes
        )
    }
}

fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Draws the perturbed demand (and reactive offset) for one sample.
fn perturbed_demand(
    model: &FeederModel,
    spec: &PerturbSpec,
    seed: u64,
    index: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut rng = sample_rng(seed, index);
    let lo = 1.0 - spec.relative_range;
    let hi = 1.0 + spec.relative_range;
    let mut p = Vec::with_capacity(model.n_buses);
    let mut q = Vec::with_capacity(model.n_buses);
    for bus in 0..model.n_buses {
        p.push(model.nominal_p[bus] * uniform(&mut rng, lo, hi));
        q.push(model.nominal_q[bus] * uniform(&mut rng, lo, hi));
    }
    for &bus in &spec.q_offset_nodes {
        q[bus - 1] += uniform(&mut rng, spec.q_offset_range.0, spec.q_offset_range.1);
    }
    (p, q)
}

/// Generates the power-flow training dataset.
pub fn gen_pf_dataset(
    model: &FeederModel,
    n_samples: usize,
    spec: &PerturbSpec,
    seed: u64,
) -> Result<PfDataset, DatasetError> {
    spec.validate(model.n_buses)?;
    let solver = DistFlowSolver::new(model)?;
    let rows = (0..n_samples)
        .into_par_iter()
        .map(|index| {
            let (p, q) = perturbed_demand(model, spec, seed, index);
            let v = solver
                .solve(&p, &q)
                .map_err(|source| DatasetError::Oracle { index, source })?;
            let mut input = p;
            input.extend(q);
            Ok(PfRow { input, output: v.v })
        })
        .collect::<Result<Vec<_>, DatasetError>>()?;
    let mut metadata = Metadata::default();
    metadata.push("kind", "power_flow");
    metadata.push("n_samples", n_samples);
    metadata.push("seed", seed);
    metadata.push("spec", spec.describe());
    metadata.push("feeder", model.identity_hash());
    Ok(PfDataset { rows, metadata })
}

/// Scenario set for the optimization/control experiments.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScenarioSet {
    pub scenarios: Vec<Scenario>,
    /// Oracle voltages with no reactive support (`q^g = 0`).
    pub voltages: Vec<VoltageProfile>,
    pub metadata: Metadata,
}

impl ScenarioSet {
    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn subset(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            scenarios: self.scenarios[range.clone()].to_vec(),
            voltages: self.voltages[range].to_vec(),
            metadata: self.metadata.clone(),
        }
    }
}

/// Generates scenarios with ±`relative_range` demand perturbation and no
/// active generation.
pub fn gen_scenario_dataset(
    model: &FeederModel,
    n_samples: usize,
    relative_range: f64,
    seed: u64,
) -> Result<ScenarioSet, DatasetError> {
    let spec = PerturbSpec {
        relative_range,
        ..PerturbSpec::scenario_default()
    };
    spec.validate(model.n_buses)?;
    let solver = DistFlowSolver::new(model)?;
    let pairs = (0..n_samples)
        .into_par_iter()
        .map(|index| {
            let (p_c, q_c) = perturbed_demand(model, &spec, seed, index);
            let v = solver
                .solve(&p_c, &q_c)
                .map_err(|source| DatasetError::Oracle { index, source })?;
            let scenario = Scenario {
                p_g: vec![0.0; p_c.len()],
                p_c,
                q_c,
            };
            Ok((scenario, v))
        })
        .collect::<Result<Vec<_>, DatasetError>>()?;
    let (scenarios, voltages) = pairs.into_iter().unzip();
    let mut metadata = Metadata::default();
    metadata.push("kind", "scenarios");
    metadata.push("n_samples", n_samples);
    metadata.push("seed", seed);
    metadata.push("spec", spec.describe());
    metadata.push("feeder", model.identity_hash());
    Ok(ScenarioSet {
        scenarios,
        voltages,
        metadata,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitPolicy {
    /// First 80 % train, last 20 % test.
    Ordered,
    /// Seeded permutation, then first 80 % train.
    Shuffled { seed: u64 },
}

/// Deterministic 80/20 split; the train part has `floor(0.8 n)` rows.
pub fn split_80_20<T: Clone>(rows: &[T], policy: SplitPolicy) -> Result<(Vec<T>, Vec<T>), DatasetError> {
    if rows.len() < 5 {
        return Err(DatasetError::TooFewRows {
            needed: 5,
            got: rows.len(),
        });
    }
    let n_train = rows.len() * 4 / 5;
    let mut order: Vec<usize> = (0..rows.len()).collect();
    if let SplitPolicy::Shuffled { seed } = policy {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let train = order[..n_train].iter().map(|&i| rows[i].clone()).collect();
    let test = order[n_train..].iter().map(|&i| rows[i].clone()).collect();
    Ok((train, test))
}

fn header(prefixes: &[&str], n: usize) -> Vec<String> {
    prefixes
        .iter()
        .flat_map(|p| (1..=n).map(move |i| format!("{p}_{i}")))
        .collect()
}

fn write_table(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> Result<(), DatasetError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    writer.write_record(header).map_err(|e| csv_io(path, e))?;
    for row in rows {
        writer
            .write_record(row.iter().map(|v| fmt_f64(*v)))
            .map_err(|e| csv_io(path, e))?;
    }
    writer.flush().map_err(io_err(path))
}

fn csv_io(path: &Path, err: csv::Error) -> DatasetError {
    DatasetError::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(err.to_string()),
    }
}

/// Reads a numeric CSV whose header width must be a multiple of `groups`.
/// Returns `(n, rows)` where each row has `groups * n` values.
fn read_table(path: &Path, groups: usize) -> Result<(usize, Vec<Vec<f64>>), DatasetError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let pstr = path.display().to_string();
    let mut records = reader.records();
    let Some(first) = records.next() else {
        return Ok((0, Vec::new()));
    };
    let head = first.map_err(|e| DatasetError::MalformedRow {
        path: pstr.clone(),
        line: 1,
        message: e.to_string(),
    })?;
    if head.len() % groups != 0 {
        return Err(DatasetError::MalformedRow {
            path: pstr,
            line: 1,
            message: format!("header has {} columns, not a multiple of {groups}", head.len()),
        });
    }
    let width = head.len();
    let mut rows = Vec::new();
    for record in records {
        let record = record.map_err(|e| DatasetError::MalformedRow {
            path: pstr.clone(),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != width {
            return Err(DatasetError::WidthMismatch {
                path: pstr,
                line,
                expected: width,
                found: record.len(),
            });
        }
        let values = record
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| DatasetError::MalformedRow {
                path: pstr.clone(),
                line,
                message: e.to_string(),
            })?;
        rows.push(values);
    }
    Ok((width / groups, rows))
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta");
    path.with_file_name(name)
}

/// Writes `p_1..p_N, q_1..q_N, v_1..v_N` rows plus a `.meta` sidecar.
pub fn write_csv(dataset: &PfDataset, path: &Path) -> Result<(), DatasetError> {
    let n = dataset.n_buses().unwrap_or(0);
    let rows = dataset.rows.iter().map(|r| {
        let mut all = r.input.clone();
        all.extend_from_slice(&r.output);
        all
    });
    write_table(path, &header(&["p", "q", "v"], n), rows)?;
    std::fs::write(meta_path(path), dataset.metadata.to_text()).map_err(io_err(path))
}

pub fn read_csv(path: &Path) -> Result<PfDataset, DatasetError> {
    let (n, table) = read_table(path, 3)?;
    let rows = table
        .into_iter()
        .map(|mut values| {
            let output = values.split_off(2 * n);
            PfRow { input: values, output }
        })
        .collect();
    let metadata = std::fs::read_to_string(meta_path(path))
        .map(|t| Metadata::parse(&t))
        .unwrap_or_default();
    Ok(PfDataset { rows, metadata })
}

/// Writes `p_c, p_g, q_c, v` blocks per scenario plus a `.meta` sidecar.
pub fn write_scenarios(set: &ScenarioSet, path: &Path) -> Result<(), DatasetError> {
    let n = set.scenarios.first().map(|s| s.n_buses()).unwrap_or(0);
    let rows = set.scenarios.iter().zip(&set.voltages).map(|(s, v)| {
        let mut all = s.p_c.clone();
        all.extend_from_slice(&s.p_g);
        all.extend_from_slice(&s.q_c);
        all.extend_from_slice(&v.v);
        all
    });
    write_table(path, &header(&["p_c", "p_g", "q_c", "v"], n), rows)?;
    std::fs::write(meta_path(path), set.metadata.to_text()).map_err(io_err(path))
}

pub fn read_scenarios(path: &Path) -> Result<ScenarioSet, DatasetError> {
    let (n, table) = read_table(path, 4)?;
    let mut set = ScenarioSet::default();
    for values in table {
        let chunk = |k: usize| values[k * n..(k + 1) * n].to_vec();
        set.scenarios.push(Scenario {
            p_c: chunk(0),
            p_g: chunk(1),
            q_c: chunk(2),
        });
        set.voltages.push(VoltageProfile { v: chunk(3) });
    }
    set.metadata = std::fs::read_to_string(meta_path(path))
        .map(|t| Metadata::parse(&t))
        .unwrap_or_default();
    Ok(set)
}
