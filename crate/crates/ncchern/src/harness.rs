//! Experiment orchestration: TOML experiment specs, Fermi-level resolution,
//! disorder ensembles with per-sample seeds, task dispatch, and the
//! append-only JSONL ledger with a flattened CSV companion.
//!
//! Reruns of the same spec are byte-identical: rows carry no timestamps,
//! sample order is fixed regardless of thread count, and every random draw
//! is tied to `base_seed + sample_index`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write as IoWrite};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::bulkedge::{
    boundary_layer_sample, bulk_edge_check, edge_delocalization_probe, edge_unitary, edge_winding,
    EdgeSide, EdgeUnitary,
};
use crate::clifford;
use crate::error::{Error, Result};
use crate::geometry::{Boundary, Geometry};
use crate::invariants::{
    even_chern, fredholm_index, hs_norm_check, mod2_index_with_split, odd_chern, residue_check,
    InvariantResult, TestKernel, TraceWindow,
};
use crate::lattice::{
    build_bulk_hamiltonian, build_edge_hamiltonian, sample_disorder, ModelConfig, PotentialKind,
};
use crate::sobolev::{fractional_moment, mobility_report, sobolev_norm};
use crate::spectral::{
    diagonalize, fermi_projection, ChiralUnitary, Projection, SpectralData, SwitchFunction,
    SwitchKind,
};
use crate::{CMat, RVec};

/// Fermi level as written in a config: a plain number, or a rule resolved
/// against the first sample's spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MuValue {
    Number(f64),
    Rule(String),
}

/// Parsed Fermi-level rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MuSpec {
    /// Explicit energy.
    Value(f64),
    /// Midpoint of the k-th candidate spectral gap (0-based, ascending in
    /// energy); candidates are the eigenvalue spacings at least a quarter
    /// of the largest spacing.
    GapIndex(usize),
    /// Midpoint between the eigenvalues around the given filling fraction.
    Fill(f64),
}

impl MuSpec {
    pub fn parse(v: &MuValue) -> Result<MuSpec> {
        match v {
            MuValue::Number(x) => {
                if !x.is_finite() {
                    return Err(Error::Config(format!("mu = {x} is not finite")));
                }
                Ok(MuSpec::Value(*x))
            }
            MuValue::Rule(s) => {
                if let Some(rest) = s.strip_prefix("gap:") {
                    let k: usize = rest
                        .parse()
                        .map_err(|_| Error::Config(format!("bad gap index in mu = \"{s}\"")))?;
                    Ok(MuSpec::GapIndex(k))
                } else if let Some(rest) = s.strip_prefix("fill:") {
                    let f: f64 = rest
                        .parse()
                        .map_err(|_| Error::Config(format!("bad filling in mu = \"{s}\"")))?;
                    if !(0.0 < f && f < 1.0) {
                        return Err(Error::Config(format!(
                            "filling {f} outside (0, 1) in mu = \"{s}\""
                        )));
                    }
                    Ok(MuSpec::Fill(f))
                } else {
                    Err(Error::Config(format!(
                        "mu = \"{s}\" is neither a number, \"gap:k\", nor \"fill:f\""
                    )))
                }
            }
        }
    }

    pub fn resolve(&self, eigenvalues: &RVec) -> Result<f64> {
        let n = eigenvalues.len();
        if n < 2 {
            return Err(Error::Spectral("need at least two eigenvalues to place mu".into()));
        }
        match *self {
            MuSpec::Value(x) => Ok(x),
            MuSpec::Fill(f) => {
                let k = ((f * n as f64).round() as usize).clamp(1, n - 1);
                Ok(0.5 * (eigenvalues[k - 1] + eigenvalues[k]))
            }
            MuSpec::GapIndex(k) => {
                let mut max_width = 0.0f64;
                for i in 0..n - 1 {
                    max_width = max_width.max(eigenvalues[i + 1] - eigenvalues[i]);
                }
                if max_width <= 0.0 {
                    return Err(Error::Spectral("spectrum has no gaps".into()));
                }
                let mut found = 0usize;
                for i in 0..n - 1 {
                    let width = eigenvalues[i + 1] - eigenvalues[i];
                    if width >= 0.25 * max_width {
                        if found == k {
                            return Ok(0.5 * (eigenvalues[i] + eigenvalues[i + 1]));
                        }
                        found += 1;
                    }
                }
                Err(Error::Spectral(format!(
                    "only {found} candidate gaps, cannot resolve gap:{k}"
                )))
            }
        }
    }
}

/// One experiment: a model, a task name, and task parameters. Unknown TOML
/// keys are rejected up front.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub task: String,
    #[serde(flatten)]
    pub model: ModelConfig,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub mu: Option<MuValue>,
    #[serde(default)]
    pub window_fractions: Option<Vec<f64>>,
    #[serde(default)]
    pub margin: Option<usize>,
    #[serde(default)]
    pub gap: Option<Vec<f64>>,
    /// Switch transition widths as fractions of the gap width.
    #[serde(default)]
    pub switch_widths: Option<Vec<f64>>,
    #[serde(default)]
    pub edge_side: Option<EdgeSide>,
    /// Shift powers for the odd-pairing winding task.
    #[serde(default)]
    pub winding: Option<Vec<usize>>,
    /// Zeta-function exponents for the residue task.
    #[serde(default)]
    pub s_list: Option<Vec<f64>>,
    #[serde(default)]
    pub f_weight: Option<f64>,
    /// Weight exponent for the Hilbert-Schmidt identity task.
    #[serde(default)]
    pub hs_s: Option<f64>,
    #[serde(default)]
    pub sobolev_r: Option<usize>,
    #[serde(default)]
    pub sobolev_p: Option<Vec<usize>>,
    #[serde(default)]
    pub frac_s: Option<f64>,
    #[serde(default)]
    pub frac_eta: Option<f64>,
    #[serde(default)]
    pub frac_energies: Option<Vec<f64>>,
    /// Boundary-layer disorder strengths for the edge delocalization probe.
    #[serde(default)]
    pub probe_strengths: Option<Vec<f64>>,
    /// Rows counted as the boundary layer in edge probes.
    #[serde(default)]
    pub layer: Option<usize>,
    /// Side length of the open-box companion in the bulk-edge comparison.
    #[serde(default)]
    pub bulk_box_length: Option<f64>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub threads: Option<usize>,
}

fn default_samples() -> usize {
    1
}

pub const TASKS: &[&str] = &[
    "bulk-chern",
    "odd-chern",
    "mod2-index",
    "edge-winding",
    "bulk-edge-check",
    "sobolev-report",
    "localization-scan",
    "residue-check",
    "hs-check",
    "clifford-selftest",
];

const MODEL_KEYS: &[&str] = &[
    "d",
    "box_length",
    "box_lengths",
    "spacing",
    "theta_12",
    "theta_13",
    "theta_23",
    "potential",
    "potential_amplitude",
    "potential_period",
    "disorder_amplitude",
    "disorder_bump",
    "disorder_density",
    "disorder_seed",
    "boundary",
    "internal_dofs",
];

const TASK_KEYS: &[&str] = &[
    "task",
    "n_samples",
    "base_seed",
    "mu",
    "window_fractions",
    "margin",
    "gap",
    "switch_widths",
    "edge_side",
    "winding",
    "s_list",
    "f_weight",
    "hs_s",
    "sobolev_r",
    "sobolev_p",
    "frac_s",
    "frac_eta",
    "frac_energies",
    "probe_strengths",
    "layer",
    "bulk_box_length",
    "out_dir",
    "cache_dir",
    "threads",
];

/// Parse an experiment spec from TOML text, rejecting unknown keys.
pub fn parse_spec(text: &str) -> Result<ExperimentSpec> {
    let table: toml::Table = text
        .parse()
        .map_err(|e| Error::Config(format!("TOML parse error: {e}")))?;
    for key in table.keys() {
        if !MODEL_KEYS.contains(&key.as_str()) && !TASK_KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!("unknown config key `{key}`")));
        }
    }
    let spec: ExperimentSpec = table
        .try_into()
        .map_err(|e| Error::Config(format!("config error: {e}")))?;
    spec.validate()?;
    Ok(spec)
}

/// Read and parse a spec file.
pub fn load_spec(path: &Path) -> Result<ExperimentSpec> {
    let text = fs::read_to_string(path)?;
    parse_spec(&text)
}

/// Minimal spec for tasks that need no lattice model, used when the CLI is
/// invoked without a config file.
pub fn standalone_spec(task: &str, d: usize) -> ExperimentSpec {
    ExperimentSpec {
        task: task.to_string(),
        model: ModelConfig {
            d,
            box_length: 8.0,
            box_lengths: None,
            spacing: 1.0,
            theta_12: 0.0,
            theta_13: 0.0,
            theta_23: 0.0,
            potential: PotentialKind::None,
            potential_amplitude: None,
            potential_period: None,
            disorder_amplitude: None,
            disorder_bump: None,
            disorder_density: None,
            disorder_seed: None,
            boundary: Boundary::DirichletAll,
            internal_dofs: 1,
        },
        n_samples: 1,
        base_seed: 0,
        mu: None,
        window_fractions: None,
        margin: None,
        gap: None,
        switch_widths: None,
        edge_side: None,
        winding: None,
        s_list: None,
        f_weight: None,
        hs_s: None,
        sobolev_r: None,
        sobolev_p: None,
        frac_s: None,
        frac_eta: None,
        frac_energies: None,
        probe_strengths: None,
        layer: None,
        bulk_box_length: None,
        out_dir: None,
        cache_dir: None,
        threads: None,
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if !TASKS.contains(&self.task.as_str()) {
            return Err(Error::Config(format!(
                "unknown task `{}`; expected one of {}",
                self.task,
                TASKS.join(", ")
            )));
        }
        self.model.validate()?;
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be at least 1".into()));
        }
        if let Some(ws) = &self.window_fractions {
            if ws.is_empty() || ws.iter().any(|&w| !(0.0 < w && w <= 1.0)) {
                return Err(Error::Config(
                    "window_fractions must be non-empty values in (0, 1]".into(),
                ));
            }
        }
        if let Some(g) = &self.gap {
            if g.len() != 2 || !(g[0] < g[1]) {
                return Err(Error::Config("gap must be [lo, hi] with lo < hi".into()));
            }
        }
        if let Some(sw) = &self.switch_widths {
            if sw.is_empty() || sw.iter().any(|&w| !(0.0 < w && w <= 1.0)) {
                return Err(Error::Config(
                    "switch_widths must be non-empty gap fractions in (0, 1]".into(),
                ));
            }
        }
        if let Some(mu) = &self.mu {
            MuSpec::parse(mu)?;
        }
        match self.task.as_str() {
            "odd-chern" => {
                if self.model.d != 1 {
                    return Err(Error::Config("odd-chern task runs on d = 1 rings".into()));
                }
            }
            "mod2-index" => {
                if self.model.d != 2 || self.model.internal_dofs != 1 {
                    return Err(Error::Config(
                        "mod2-index doubles a scalar d = 2 model; set d = 2, internal_dofs = 1"
                            .into(),
                    ));
                }
            }
            "edge-winding" | "bulk-edge-check" => {
                if self.model.boundary != Boundary::DirichletLastAxis {
                    return Err(Error::Config(
                        "edge tasks need a strip model (boundary = \"dirichlet_last_axis\")"
                            .into(),
                    ));
                }
                if self.model.d != 2 {
                    return Err(Error::Config("edge tasks need d = 2".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn windows(&self) -> Vec<TraceWindow> {
        let margin = self.margin.unwrap_or(1);
        self.window_fractions
            .clone()
            .unwrap_or_else(|| vec![0.5])
            .into_iter()
            .map(|core_fraction| TraceWindow { core_fraction, margin })
            .collect()
    }
}

/// First 16 hex characters of the SHA-256 of the canonical JSON encoding.
/// Output paths and thread counts identify the execution environment, not
/// the experiment, so they are zeroed out before hashing.
pub fn config_hash(spec: &ExperimentSpec) -> String {
    let mut canonical = spec.clone();
    canonical.out_dir = None;
    canonical.cache_dir = None;
    canonical.threads = None;
    let bytes = serde_json::to_vec(&canonical).expect("spec serializes");
    let digest = Sha256::digest(&bytes);
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// One ledger line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LedgerRow {
    pub config_hash: String,
    pub seed: u64,
    pub code_version: String,
    pub task: String,
    pub sample: u64,
    pub result: Value,
}

struct Ledger {
    path: PathBuf,
    writer: BufWriter<File>,
    rows: Vec<LedgerRow>,
    hash: String,
    task: String,
}

impl Ledger {
    fn create(dir: &Path, spec: &ExperimentSpec) -> Result<Ledger> {
        fs::create_dir_all(dir)?;
        let path = dir.join("ledger.jsonl");
        let writer = BufWriter::new(File::create(&path)?);
        Ok(Ledger {
            path,
            writer,
            rows: Vec::new(),
            hash: config_hash(spec),
            task: spec.task.clone(),
        })
    }

    fn append(&mut self, seed: u64, sample: u64, result: Value) -> Result<()> {
        let row = LedgerRow {
            config_hash: self.hash.clone(),
            seed,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            task: self.task.clone(),
            sample,
            result,
        };
        let line = serde_json::to_string(&row)
            .map_err(|e| Error::Cache(format!("ledger row serialization failed: {e}")))?;
        writeln!(self.writer, "{line}")?;
        self.writer.flush()?;
        self.rows.push(row);
        Ok(())
    }
}

fn flatten_json(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Null => out.push((prefix.to_string(), String::new())),
        Value::Bool(b) => out.push((prefix.to_string(), b.to_string())),
        Value::Number(n) => out.push((prefix.to_string(), n.to_string())),
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        Value::Array(items) => {
            for (i, item) in items.iter().enumerate() {
                flatten_json(&format!("{prefix}.{i}"), item, out);
            }
        }
        Value::Object(map) => {
            for (k, item) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten_json(&key, item, out);
            }
        }
    }
}

fn csv_escape(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn write_csv(path: &Path, rows: &[LedgerRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "config_hash,task,sample,seed,key,value")?;
    for row in rows {
        let mut leaves = Vec::new();
        flatten_json("", &row.result, &mut leaves);
        for (key, value) in leaves {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                row.config_hash,
                csv_escape(&row.task),
                row.sample,
                row.seed,
                csv_escape(&key),
                csv_escape(&value)
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Everything a finished run hands back to the CLI and to tests.
#[derive(Debug)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub ledger_path: PathBuf,
    pub csv_path: PathBuf,
    pub lines: Vec<String>,
    pub rows: Vec<LedgerRow>,
}

fn mean_stderr(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, Some((var / n as f64).sqrt()))
}

fn resolve_mu(spec: &ExperimentSpec, eigenvalues: &RVec) -> Result<f64> {
    let rule = match &spec.mu {
        Some(v) => MuSpec::parse(v)?,
        None => MuSpec::Fill(0.5),
    };
    rule.resolve(eigenvalues)
}

/// Spectral gap straddling `mu` in one sorted spectrum.
fn resolve_gap(eigenvalues: &RVec, mu: f64) -> Result<(f64, f64)> {
    let lo = eigenvalues.iter().copied().filter(|&x| x < mu).fold(f64::NEG_INFINITY, f64::max);
    let hi = eigenvalues.iter().copied().filter(|&x| x >= mu).fold(f64::INFINITY, f64::min);
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Spectral(format!("mu = {mu} lies outside the spectrum")));
    }
    let span = eigenvalues[eigenvalues.len() - 1] - eigenvalues[0];
    if !(lo < mu && mu < hi) || hi - lo <= 1e-9 * span.max(1.0) {
        return Err(Error::Spectral(format!(
            "no spectral gap at mu = {mu}: nearest levels {lo} and {hi}"
        )));
    }
    Ok((lo, hi))
}

fn warn_mu_distance(p: &Projection, sd: &SpectralData, seed: u64) {
    let width = sd.spectral_width();
    if p.mu_distance < 1e-6 * width {
        eprintln!(
            "warning: mu = {} sits within {:.3e} of an eigenvalue (seed {}); the projection is finite-size ambiguous",
            p.mu, p.mu_distance, seed
        );
    }
}

struct EnsembleSample {
    seed: u64,
    sd: SpectralData,
    projection: Projection,
}

struct Ensemble {
    geom: Geometry,
    mu: f64,
    samples: Vec<EnsembleSample>,
}

/// Diagonalize `n_samples` disorder realizations of the configured model
/// and project at a common Fermi level resolved on the first sample.
fn build_ensemble(
    spec: &ExperimentSpec,
    config: &ModelConfig,
    cache: &Path,
) -> Result<Ensemble> {
    let geom = config.geometry()?;
    let seeds: Vec<u64> = (0..spec.n_samples).map(|i| spec.base_seed + i as u64).collect();
    let build = |seed: u64| -> Result<SpectralData> {
        let sample = sample_disorder(config, seed)?;
        let h = if config.boundary == Boundary::DirichletLastAxis {
            build_edge_hamiltonian(config, &sample)?
        } else {
            build_bulk_hamiltonian(config, &sample)?
        };
        diagonalize(&h, Some(cache))
    };
    let spectra: Vec<SpectralData> = seeds
        .par_iter()
        .map(|&s| build(s))
        .collect::<Result<Vec<_>>>()?;
    let mu = resolve_mu(spec, &spectra[0].eigenvalues)?;
    let samples = seeds
        .iter()
        .zip(spectra.into_iter())
        .map(|(&seed, sd)| {
            let projection = fermi_projection(&sd, mu);
            warn_mu_distance(&projection, &sd, seed);
            EnsembleSample { seed, sd, projection }
        })
        .collect();
    Ok(Ensemble { geom, mu, samples })
}

fn invariant_row(res: &InvariantResult, mu: f64, mu_distance: f64) -> Value {
    let mut v = serde_json::to_value(res).expect("result serializes");
    let obj = v.as_object_mut().expect("result is an object");
    obj.insert("mu".into(), json!(mu));
    obj.insert("mu_distance".into(), json!(mu_distance));
    v
}

fn run_bulk_chern(spec: &ExperimentSpec, cache: &Path, ledger: &mut Ledger) -> Result<Vec<String>> {
    let ens = build_ensemble(spec, &spec.model, cache)?;
    let windows = spec.windows();
    let mut lines = Vec::new();
    let mut per_window: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (i, s) in ens.samples.iter().enumerate() {
        for w in &windows {
            let res = even_chern(&s.projection, &ens.geom, w)?;
            let value = res.value.as_real();
            per_window
                .entry(format!("{:.6}", w.core_fraction))
                .or_default()
                .push(value);
            ledger.append(s.seed, i as u64, invariant_row(&res, ens.mu, s.projection.mu_distance))?;
        }
    }
    for (frac, values) in &per_window {
        let (mean, stderr) = mean_stderr(values);
        match stderr {
            Some(se) => lines.push(format!(
                "bulk-chern window {frac}: mean {mean:.8} stderr {se:.2e} over {} samples",
                values.len()
            )),
            None => lines.push(format!("bulk-chern window {frac}: {mean:.8}")),
        }
    }
    lines.push(format!("mu = {:.8}", ens.mu));
    Ok(lines)
}

/// Cyclic shift by `steps` sites on the configured ring, as a unitary.
fn shift_unitary(geom: &Geometry, steps: usize) -> ChiralUnitary {
    let n = geom.dim();
    let mut m: CMat = Array2::zeros((n, n));
    for i in 0..n {
        m[((i + steps) % n, i)] = Complex64::new(1.0, 0.0);
    }
    ChiralUnitary::from_matrix(m)
}

fn run_odd_chern(spec: &ExperimentSpec, ledger: &mut Ledger) -> Result<Vec<String>> {
    let config = ModelConfig { boundary: Boundary::MagneticPeriodic, ..spec.model.clone() };
    let geom = config.geometry()?;
    let windings = spec.winding.clone().unwrap_or_else(|| vec![0, 1, 2]);
    let windows = spec.windows();
    let mut lines = Vec::new();
    for (i, &k) in windings.iter().enumerate() {
        let u = shift_unitary(&geom, k);
        for w in &windows {
            let res = odd_chern(&u, &geom, w)?;
            let value = res.value.as_real();
            let mut row = serde_json::to_value(&res).expect("result serializes");
            row.as_object_mut()
                .unwrap()
                .insert("shift_steps".into(), json!(k));
            ledger.append(spec.base_seed, i as u64, row)?;
            lines.push(format!(
                "odd-chern shift^{k} window {:.3}: {value:.12} (expected {})",
                w.core_fraction,
                2 * k
            ));
        }
    }
    Ok(lines)
}

/// Spin-doubled model parts: the scalar model is taken as the spin-up
/// block, the spin-down block is its complex conjugate, and the two are
/// interleaved per site so position masks act blockwise.
struct SpinDoubled {
    geom_full: Geometry,
    geom_spin: Geometry,
    p_full: Projection,
    p_up: Projection,
    p_down: Projection,
    r_matrix: CMat,
}

fn spin_double(geom_spin: &Geometry, sd_up: &SpectralData, mu: f64) -> Result<SpinDoubled> {
    let p_up = fermi_projection(sd_up, mu);
    let n = geom_spin.dim();
    let basis_up = p_up
        .basis
        .as_ref()
        .ok_or_else(|| Error::Spectral("spin-up projection carries no basis".into()))?;
    let r = p_up.rank;
    let mut matrix_full: CMat = Array2::zeros((2 * n, 2 * n));
    for i in 0..n {
        for j in 0..n {
            let v = p_up.matrix[(i, j)];
            matrix_full[(2 * i, 2 * j)] = v;
            matrix_full[(2 * i + 1, 2 * j + 1)] = v.conj();
        }
    }
    let mut basis_full: CMat = Array2::zeros((2 * n, 2 * r));
    for j in 0..r {
        for i in 0..n {
            let v = basis_up[(i, j)];
            basis_full[(2 * i, j)] = v;
            basis_full[(2 * i + 1, r + j)] = v.conj();
        }
    }
    let mut r_matrix: CMat = Array2::zeros((2 * n, 2 * n));
    for i in 0..n {
        r_matrix[(2 * i, 2 * i + 1)] = Complex64::new(-1.0, 0.0);
        r_matrix[(2 * i + 1, 2 * i)] = Complex64::new(1.0, 0.0);
    }
    let p_down = Projection {
        matrix: p_up.matrix.mapv(|z| z.conj()),
        mu,
        rank: r,
        mu_distance: p_up.mu_distance,
        basis: Some(basis_up.mapv(|z| z.conj())),
    };
    let p_full = Projection {
        matrix: matrix_full,
        mu,
        rank: 2 * r,
        mu_distance: p_up.mu_distance,
        basis: Some(basis_full),
    };
    let geom_full = Geometry::new(
        geom_spin.d,
        geom_spin.n.clone(),
        geom_spin.a,
        2,
        geom_spin.boundary,
    )?;
    Ok(SpinDoubled {
        geom_full,
        geom_spin: geom_spin.clone(),
        p_full,
        p_up,
        p_down,
        r_matrix,
    })
}

fn run_mod2(spec: &ExperimentSpec, cache: &Path, ledger: &mut Ledger) -> Result<Vec<String>> {
    let ens = build_ensemble(spec, &spec.model, cache)?;
    let center = [0.0, 0.0];
    let mut lines = Vec::new();
    for (i, s) in ens.samples.iter().enumerate() {
        let parts = spin_double(&ens.geom, &s.sd, ens.mu)?;
        let bit = mod2_index_with_split(
            &parts.p_full,
            &parts.geom_full,
            &parts.r_matrix,
            &center,
            &parts.p_up,
            &parts.p_down,
            &parts.geom_spin,
        )?;
        let idx_up = fredholm_index(&parts.p_up, &parts.geom_spin, &center)?;
        let idx_down = fredholm_index(&parts.p_down, &parts.geom_spin, &center)?;
        ledger.append(
            s.seed,
            i as u64,
            json!({
                "method": "mod2",
                "value": bit,
                "index_up": idx_up,
                "index_down": idx_down,
                "rank_full": parts.p_full.rank,
                "mu": ens.mu,
                "mu_distance": s.projection.mu_distance,
            }),
        )?;
        lines.push(format!(
            "mod2-index seed {}: bit {bit} (per-spin indices {idx_up}/{idx_down})",
            s.seed
        ));
    }
    Ok(lines)
}

/// Torus companion of a strip model: same box, fully periodic.
fn torus_twin(config: &ModelConfig) -> ModelConfig {
    ModelConfig { boundary: Boundary::MagneticPeriodic, ..config.clone() }
}

/// Open-box companion used for the bulk half of the bulk-edge comparison.
fn bulk_companion(config: &ModelConfig, side: f64) -> ModelConfig {
    ModelConfig {
        boundary: Boundary::DirichletAll,
        box_length: side,
        box_lengths: None,
        ..config.clone()
    }
}

struct EdgeContext {
    geom: Geometry,
    mu: f64,
    gap: (f64, f64),
    side: EdgeSide,
    switch_fractions: Vec<f64>,
}

/// Resolve the Fermi level and gap on the torus twin of the strip, where no
/// edge states fill the gap.
fn edge_context(spec: &ExperimentSpec, cache: &Path) -> Result<EdgeContext> {
    let twin = torus_twin(&spec.model);
    twin.validate().map_err(|e| {
        Error::Config(format!("torus twin of the strip model is invalid: {e}"))
    })?;
    let sample = sample_disorder(&twin, spec.base_seed)?;
    let h = build_bulk_hamiltonian(&twin, &sample)?;
    let sd = diagonalize(&h, Some(cache))?;
    let mu = resolve_mu(spec, &sd.eigenvalues)?;
    let gap = match &spec.gap {
        Some(g) => (g[0], g[1]),
        None => resolve_gap(&sd.eigenvalues, mu)?,
    };
    Ok(EdgeContext {
        geom: spec.model.geometry()?,
        mu,
        gap,
        side: spec.edge_side.unwrap_or(EdgeSide::Max),
        // The transition band must span several edge-level spacings to
        // resolve the spectral flow on a finite strip; narrow bands
        // under-count. Two defaults double as a convergence check.
        switch_fractions: spec.switch_widths.clone().unwrap_or_else(|| vec![0.6, 0.8]),
    })
}

fn switch_for(gap: (f64, f64), fraction: f64) -> Result<SwitchFunction> {
    let mid = 0.5 * (gap.0 + gap.1);
    let half = 0.5 * fraction * (gap.1 - gap.0);
    SwitchFunction::new(SwitchKind::Exp, mid - half, mid + half)
}

struct EdgeSampleOutcome {
    seed: u64,
    /// One winding per (switch fraction, window) pair, in loop order.
    values: Vec<(f64, TraceWindow, InvariantResult)>,
}

fn edge_windings_for_sample(
    spec: &ExperimentSpec,
    ctx: &EdgeContext,
    cache: &Path,
    seed: u64,
) -> Result<EdgeSampleOutcome> {
    let sample = sample_disorder(&spec.model, seed)?;
    let h = build_edge_hamiltonian(&spec.model, &sample)?;
    let sd = diagonalize(&h, Some(cache))?;
    let windows = spec.windows();
    let mut values = Vec::new();
    for &frac in &ctx.switch_fractions {
        let sw = switch_for(ctx.gap, frac)?;
        let u: EdgeUnitary = edge_unitary(&sd, &sw)?;
        for w in &windows {
            let res = edge_winding(&u, &ctx.geom, w, ctx.side)?;
            values.push((frac, *w, res));
        }
    }
    Ok(EdgeSampleOutcome { seed, values })
}

fn run_edge_winding(spec: &ExperimentSpec, cache: &Path, ledger: &mut Ledger) -> Result<Vec<String>> {
    let ctx = edge_context(spec, cache)?;
    let seeds: Vec<u64> = (0..spec.n_samples).map(|i| spec.base_seed + i as u64).collect();
    let outcomes: Vec<EdgeSampleOutcome> = seeds
        .par_iter()
        .map(|&s| edge_windings_for_sample(spec, &ctx, cache, s))
        .collect::<Result<Vec<_>>>()?;
    let mut lines = vec![format!(
        "edge-winding: mu {:.8}, gap [{:.6}, {:.6}], side {:?}",
        ctx.mu, ctx.gap.0, ctx.gap.1, ctx.side
    )];
    for (i, out) in outcomes.iter().enumerate() {
        for (frac, w, res) in &out.values {
            let mut row = invariant_row(res, ctx.mu, f64::NAN);
            let obj = row.as_object_mut().unwrap();
            obj.insert("switch_fraction".into(), json!(frac));
            obj.insert("gap_lo".into(), json!(ctx.gap.0));
            obj.insert("gap_hi".into(), json!(ctx.gap.1));
            obj.remove("mu_distance");
            ledger.append(out.seed, i as u64, row)?;
            lines.push(format!(
                "edge-winding seed {} switch {:.3} window {:.3}: {:.8}",
                out.seed,
                frac,
                w.core_fraction,
                res.value.as_real()
            ));
        }
    }
    run_edge_probes(spec, &ctx, cache, ledger, &mut lines)?;
    Ok(lines)
}

/// Optional delocalization probes: boundary-layer disorder of the given
/// strengths on an otherwise clean strip.
fn run_edge_probes(
    spec: &ExperimentSpec,
    ctx: &EdgeContext,
    cache: &Path,
    ledger: &mut Ledger,
    lines: &mut Vec<String>,
) -> Result<()> {
    let strengths = match &spec.probe_strengths {
        Some(s) if !s.is_empty() => s.clone(),
        _ => return Ok(()),
    };
    let layer = spec.layer.unwrap_or(4);
    for (i, &strength) in strengths.iter().enumerate() {
        let mut probe_model = spec.model.clone();
        probe_model.potential = PotentialKind::Random;
        probe_model.disorder_amplitude = Some(strength);
        if probe_model.disorder_density.is_none() {
            probe_model.disorder_density = Some(1.0);
        }
        probe_model.validate()?;
        let raw = sample_disorder(&probe_model, spec.base_seed)?;
        let layered = boundary_layer_sample(&raw, &ctx.geom, ctx.side, layer)?;
        let h = build_edge_hamiltonian(&probe_model, &layered)?;
        let sd = diagonalize(&h, Some(cache))?;
        let report = edge_delocalization_probe(&sd, &ctx.geom, ctx.gap, ctx.side, layer)?;
        let row = serde_json::to_value(&report).expect("report serializes");
        ledger.append(spec.base_seed, i as u64, json!({"edge_probe": row, "strength": strength}))?;
        lines.push(format!(
            "edge probe strength {strength}: {} in-gap states, mean edge extension {:.3} of the boundary",
            report.n_in_gap, report.mean_pr_fraction
        ));
    }
    Ok(())
}

fn run_bulk_edge_check(
    spec: &ExperimentSpec,
    cache: &Path,
    ledger: &mut Ledger,
) -> Result<Vec<String>> {
    let ctx = edge_context(spec, cache)?;
    // Bulk half: open box with honest position operators, at the same
    // Fermi level.
    let default_side = (0..ctx.geom.d)
        .map(|a| ctx.geom.length(a))
        .fold(f64::INFINITY, f64::min);
    let bulk_model = bulk_companion(&spec.model, spec.bulk_box_length.unwrap_or(default_side));
    bulk_model.validate()?;
    let windows = spec.windows();
    let mut lines = vec![format!(
        "bulk-edge-check: mu {:.8}, gap [{:.6}, {:.6}], side {:?}",
        ctx.mu, ctx.gap.0, ctx.gap.1, ctx.side
    )];
    let bulk_geom = bulk_model.geometry()?;
    let mut worst = 0.0f64;
    for i in 0..spec.n_samples {
        let seed = spec.base_seed + i as u64;
        let bulk_sample = sample_disorder(&bulk_model, seed)?;
        let h_bulk = build_bulk_hamiltonian(&bulk_model, &bulk_sample)?;
        let sd_bulk = diagonalize(&h_bulk, Some(cache))?;
        let p_bulk = fermi_projection(&sd_bulk, ctx.mu);
        warn_mu_distance(&p_bulk, &sd_bulk, seed);
        let edge_out = edge_windings_for_sample(spec, &ctx, cache, seed)?;
        for w in &windows {
            let bulk_res = even_chern(&p_bulk, &bulk_geom, w)?;
            let bulk_value = bulk_res.value.as_real();
            for (frac, ew, eres) in &edge_out.values {
                if (ew.core_fraction - w.core_fraction).abs() > 1e-12 {
                    continue;
                }
                let report = bulk_edge_check(bulk_value, eres, ctx.side);
                worst = worst.max(report.discrepancy);
                let row = serde_json::to_value(&report).expect("report serializes");
                ledger.append(
                    seed,
                    i as u64,
                    json!({
                        "bulk_edge": row,
                        "window": w.core_fraction,
                        "switch_fraction": frac,
                        "mu": ctx.mu,
                    }),
                )?;
                lines.push(format!(
                    "bulk {:+.6} edge {:+.6} (switch {:.3}, window {:.3}) mismatch {:.2e}",
                    report.bulk, report.edge, frac, w.core_fraction, report.discrepancy
                ));
            }
        }
    }
    lines.push(format!("worst bulk-edge mismatch: {worst:.3e}"));
    Ok(lines)
}

fn run_sobolev_report(
    spec: &ExperimentSpec,
    cache: &Path,
    ledger: &mut Ledger,
) -> Result<Vec<String>> {
    let ens = build_ensemble(spec, &spec.model, cache)?;
    let r_max = spec.sobolev_r.unwrap_or(2);
    let p_list = spec.sobolev_p.clone().unwrap_or_else(|| vec![1, 2]);
    let kernels: Vec<crate::lattice::OperatorKernel> = ens
        .samples
        .iter()
        .map(|s| crate::lattice::OperatorKernel {
            matrix: s.projection.matrix.clone(),
            geom: ens.geom.clone(),
            gauge_center: vec![0.0; ens.geom.d],
        })
        .collect();
    let mut lines = vec![format!("sobolev-report: mu {:.8}, {} samples", ens.mu, ens.samples.len())];
    let mut row_idx = 0u64;
    for r in 0..=r_max {
        for &p in &p_list {
            let value = sobolev_norm(&kernels, r, p)?;
            ledger.append(
                spec.base_seed,
                row_idx,
                json!({"r": r, "p": p, "value": value, "mu": ens.mu, "n_samples": ens.samples.len()}),
            )?;
            lines.push(format!("  r = {r}, p = {p}: {value:.8}"));
            row_idx += 1;
        }
    }
    Ok(lines)
}

fn run_localization_scan(
    spec: &ExperimentSpec,
    cache: &Path,
    ledger: &mut Ledger,
) -> Result<Vec<String>> {
    let ens = build_ensemble(spec, &spec.model, cache)?;
    let spectra: Vec<SpectralData> = ens.samples.iter().map(|s| s.sd.clone()).collect();
    let projections: Vec<Projection> = ens.samples.iter().map(|s| s.projection.clone()).collect();
    let report = mobility_report(&spectra, &projections, &ens.geom, ens.mu)?;
    let mut lines = vec![format!(
        "localization-scan: mu {:.8}, dos {:.4e}, verdict {:?}",
        ens.mu, report.dos, report.verdict
    )];
    if let Some(fit) = &report.fit {
        lines.push(format!(
            "  decay m = {:.4} ± {:.4}, R² = {:.4}, super-exponential: {}",
            fit.m, fit.m_stderr, fit.r_squared, fit.super_exponential
        ));
    }
    ledger.append(
        spec.base_seed,
        0,
        json!({"mobility": serde_json::to_value(&report).expect("report serializes")}),
    )?;
    // Integer pairing on each realization, when the geometry supports it.
    if ens.geom.d == 2 && ens.geom.boundary == Boundary::DirichletAll {
        for (i, s) in ens.samples.iter().enumerate() {
            if s.projection.rank == 0 || s.projection.rank == ens.geom.dim() {
                continue;
            }
            let idx = fredholm_index(&s.projection, &ens.geom, &[0.0, 0.0])?;
            ledger.append(s.seed, i as u64, json!({"fredholm_index": idx, "mu": ens.mu}))?;
            lines.push(format!("  fredholm seed {}: {idx}", s.seed));
        }
    }
    let s_frac = spec.frac_s.unwrap_or(0.5);
    let energies = spec.frac_energies.clone().unwrap_or_else(|| vec![ens.mu]);
    let frac = fractional_moment(&spectra, &ens.geom, &energies, s_frac, spec.frac_eta)?;
    for (i, row) in frac.rows.iter().enumerate() {
        ledger.append(
            spec.base_seed,
            i as u64,
            json!({"fractional_moment": serde_json::to_value(row).expect("row serializes"),
                   "s": frac.s, "eta": frac.eta}),
        )?;
        lines.push(format!(
            "  moment E = {:.4}: m = {:.4}, R² = {:.4}, intercept ok: {}",
            row.energy,
            row.m,
            row.r_squared,
            row.intercept <= row.intercept_bound
        ));
    }
    Ok(lines)
}

fn run_residue_check(spec: &ExperimentSpec, ledger: &mut Ledger) -> Result<Vec<String>> {
    let d = spec.model.d;
    let s_list = spec
        .s_list
        .clone()
        .unwrap_or_else(|| vec![d as f64 + 0.5, d as f64 + 1.0, d as f64 + 2.0]);
    let f_weight = spec.f_weight.unwrap_or(1.0);
    let report = residue_check(d, &s_list, f_weight)?;
    let mut lines = Vec::new();
    for (i, row) in report.rows.iter().enumerate() {
        ledger.append(
            spec.base_seed,
            i as u64,
            json!({"zeta_row": serde_json::to_value(row).expect("row serializes")}),
        )?;
        lines.push(format!(
            "zeta(s = {:.3}) = {:.8} vs closed form {:.8} (dev {:.3e})",
            row.s, row.zeta, row.closed_form, row.rel_dev
        ));
    }
    ledger.append(
        spec.base_seed,
        report.rows.len() as u64,
        json!({
            "residue": report.residue,
            "residue_target": report.residue_target,
            "residue_rel_dev": report.residue_rel_dev,
            "d": report.d,
        }),
    )?;
    lines.push(format!(
        "residue at s -> {d}: {:.8} vs {:.8} (dev {:.3e})",
        report.residue, report.residue_target, report.residue_rel_dev
    ));
    Ok(lines)
}

/// Built-in translation-invariant kernels for the weight-identity task:
/// a single bond, a symmetric second difference, and a complex mix.
fn builtin_test_kernels(d: usize) -> Vec<(String, TestKernel)> {
    let offset = |k: i64| {
        let mut v = vec![0i64; d];
        v[0] = k;
        v
    };
    vec![
        (
            "single_bond".to_string(),
            TestKernel { d, terms: vec![(offset(1), Complex64::new(1.0, 0.0))] },
        ),
        (
            "second_difference".to_string(),
            TestKernel {
                d,
                terms: vec![
                    (offset(0), Complex64::new(2.0, 0.0)),
                    (offset(1), Complex64::new(-1.0, 0.0)),
                    (offset(-1), Complex64::new(-1.0, 0.0)),
                ],
            },
        ),
        (
            "complex_mix".to_string(),
            TestKernel {
                d,
                terms: vec![
                    (offset(0), Complex64::new(0.5, 0.0)),
                    (offset(1), Complex64::new(0.0, 0.3)),
                    (offset(2), Complex64::new(0.2, 0.1)),
                ],
            },
        ),
    ]
}

fn run_hs_check(spec: &ExperimentSpec, ledger: &mut Ledger) -> Result<Vec<String>> {
    let d = spec.model.d;
    let s = spec.hs_s.unwrap_or(d as f64 + 1.5);
    let geom = Geometry::new(d, vec![64; d], 1.0, 1, Boundary::DirichletAll)?;
    let mut lines = Vec::new();
    for (i, (name, kernel)) in builtin_test_kernels(d).iter().enumerate() {
        let report = hs_norm_check(kernel, &geom, s)?;
        ledger.append(
            spec.base_seed,
            i as u64,
            json!({"kernel": name, "hs": serde_json::to_value(report.clone()).expect("report serializes")}),
        )?;
        lines.push(format!(
            "hs identity [{name}] s = {s}: lhs {:.8e} rhs {:.8e} (dev {:.3e})",
            report.lhs, report.rhs, report.rel_dev
        ));
    }
    Ok(lines)
}

fn run_clifford_selftest(spec: &ExperimentSpec, ledger: &mut Ledger) -> Result<Vec<String>> {
    let checks = clifford::selftest()?;
    for (i, line) in checks.iter().enumerate() {
        ledger.append(spec.base_seed, i as u64, json!({"check": line}))?;
    }
    Ok(checks)
}

fn dispatch(spec: &ExperimentSpec, cache: &Path, ledger: &mut Ledger) -> Result<Vec<String>> {
    match spec.task.as_str() {
        "bulk-chern" => run_bulk_chern(spec, cache, ledger),
        "odd-chern" => run_odd_chern(spec, ledger),
        "mod2-index" => run_mod2(spec, cache, ledger),
        "edge-winding" => run_edge_winding(spec, cache, ledger),
        "bulk-edge-check" => run_bulk_edge_check(spec, cache, ledger),
        "sobolev-report" => run_sobolev_report(spec, cache, ledger),
        "localization-scan" => run_localization_scan(spec, cache, ledger),
        "residue-check" => run_residue_check(spec, ledger),
        "hs-check" => run_hs_check(spec, ledger),
        "clifford-selftest" => run_clifford_selftest(spec, ledger),
        other => Err(Error::Config(format!("unknown task `{other}`"))),
    }
}

/// Execute one experiment: create the output directory, run the task,
/// stream rows to `ledger.jsonl`, and write the flattened `summary.csv`.
pub fn run(spec: &ExperimentSpec) -> Result<RunReport> {
    spec.validate()?;
    let out_dir = spec
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("ncchern_out"));
    fs::create_dir_all(&out_dir)?;
    let cache = spec
        .cache_dir
        .clone()
        .unwrap_or_else(|| out_dir.join("cache"));
    fs::create_dir_all(&cache)?;
    let mut ledger = Ledger::create(&out_dir, spec)?;
    let threads = spec.threads.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let lines = pool.install(|| dispatch(spec, &cache, &mut ledger))?;
    let csv_path = out_dir.join("summary.csv");
    write_csv(&csv_path, &ledger.rows)?;
    Ok(RunReport {
        out_dir,
        ledger_path: ledger.path,
        csv_path,
        lines,
        rows: ledger.rows,
    })
}

/// Parameters the sweep driver may vary.
pub const SWEEP_PARAMS: &[&str] = &[
    "mu",
    "disorder_amplitude",
    "theta_12",
    "core_fraction",
    "box_length",
    "potential_amplitude",
];

fn apply_sweep_param(spec: &mut ExperimentSpec, param: &str, value: f64) -> Result<()> {
    match param {
        "mu" => spec.mu = Some(MuValue::Number(value)),
        "disorder_amplitude" => spec.model.disorder_amplitude = Some(value),
        "theta_12" => spec.model.theta_12 = value,
        "core_fraction" => spec.window_fractions = Some(vec![value]),
        "box_length" => {
            spec.model.box_length = value;
            spec.model.box_lengths = None;
        }
        "potential_amplitude" => spec.model.potential_amplitude = Some(value),
        other => {
            return Err(Error::Config(format!(
                "sweep parameter `{other}` not supported; use one of {}",
                SWEEP_PARAMS.join(", ")
            )))
        }
    }
    Ok(())
}

/// Run the spec's task once per parameter value, each run in its own
/// subdirectory, and merge all rows (tagged with the swept value) into a
/// top-level ledger. An empty value list produces an empty ledger.
pub fn sweep(base: &ExperimentSpec, param: &str, values: &[f64]) -> Result<RunReport> {
    if !SWEEP_PARAMS.contains(&param) {
        return Err(Error::Config(format!(
            "sweep parameter `{param}` not supported; use one of {}",
            SWEEP_PARAMS.join(", ")
        )));
    }
    let out_dir = base
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("ncchern_out"));
    fs::create_dir_all(&out_dir)?;
    let ledger_path = out_dir.join("ledger.jsonl");
    let csv_path = out_dir.join("summary.csv");
    let mut all_rows: Vec<LedgerRow> = Vec::new();
    let mut lines = Vec::new();
    for (i, &value) in values.iter().enumerate() {
        let mut spec = base.clone();
        apply_sweep_param(&mut spec, param, value)?;
        spec.out_dir = Some(out_dir.join(format!("{param}-{i}")));
        if spec.cache_dir.is_none() {
            // Share one cache across the sweep.
            spec.cache_dir = Some(out_dir.join("cache"));
        }
        let report = run(&spec)?;
        lines.push(format!("{param} = {value}:"));
        lines.extend(report.lines.iter().map(|l| format!("  {l}")));
        for mut row in report.rows {
            if let Some(obj) = row.result.as_object_mut() {
                obj.insert("sweep_param".into(), json!(param));
                obj.insert("sweep_value".into(), json!(value));
            }
            all_rows.push(row);
        }
    }
    let mut w = BufWriter::new(File::create(&ledger_path)?);
    for row in &all_rows {
        let line = serde_json::to_string(row)
            .map_err(|e| Error::Cache(format!("ledger row serialization failed: {e}")))?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    write_csv(&csv_path, &all_rows)?;
    Ok(RunReport { out_dir, ledger_path, csv_path, lines, rows: all_rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;

    const MINIMAL: &str = r#"
task = "bulk-chern"
d = 2
box_length = 8.0
spacing = 1.0
potential = "none"
boundary = "dirichlet_all"
internal_dofs = 1
"#;

    #[test]
    fn parses_minimal_spec() {
        let spec = parse_spec(MINIMAL).unwrap();
        assert_eq!(spec.task, "bulk-chern");
        assert_eq!(spec.n_samples, 1);
        assert_eq!(spec.model.d, 2);
    }

    #[test]
    fn rejects_unknown_keys_and_tasks() {
        let bad = format!("{MINIMAL}\nbogus_key = 3\n");
        let err = parse_spec(&bad).unwrap_err().to_string();
        assert!(err.contains("bogus_key"), "{err}");
        let bad_task = MINIMAL.replace("bulk-chern", "no-such-task");
        assert!(parse_spec(&bad_task).is_err());
    }

    #[test]
    fn rejects_bad_task_parameters() {
        let with = |extra: &str| parse_spec(&format!("{MINIMAL}\n{extra}\n"));
        assert!(with("n_samples = 0").is_err());
        assert!(with("window_fractions = [0.0]").is_err());
        assert!(with("gap = [2.0, 1.0]").is_err());
        assert!(with("switch_widths = [1.5]").is_err());
        assert!(with("mu = \"gap\"").is_err());
        assert!(with("mu = \"fill:1.5\"").is_err());
        assert!(with("mu = 1.25").is_ok());
        assert!(with("mu = \"gap:0\"").is_ok());
    }

    #[test]
    fn mu_rules_resolve_against_spectra() {
        let eig = Array1::from(vec![0.0, 0.1, 0.2, 1.2, 1.3, 1.4, 3.0]);
        // Spacings: tiny within clusters, 1.0 and 1.6 between them.
        let gap0 = MuSpec::GapIndex(0).resolve(&eig).unwrap();
        assert!((gap0 - 0.7).abs() < 1e-12);
        let gap1 = MuSpec::GapIndex(1).resolve(&eig).unwrap();
        assert!((gap1 - 2.2).abs() < 1e-12);
        assert!(MuSpec::GapIndex(2).resolve(&eig).is_err());
        let fill = MuSpec::Fill(0.5).resolve(&eig).unwrap();
        // round(0.5·7) = 4 → between eig[3] and eig[4].
        assert!((fill - 1.25).abs() < 1e-12);
        assert!((MuSpec::Value(0.55).resolve(&eig).unwrap() - 0.55).abs() < 1e-12);
    }

    #[test]
    fn gap_resolution_brackets_mu() {
        let eig = Array1::from(vec![-1.0, 0.5, 2.5, 3.0]);
        let (lo, hi) = resolve_gap(&eig, 1.0).unwrap();
        assert_eq!((lo, hi), (0.5, 2.5));
        assert!(resolve_gap(&eig, -2.0).is_err());
        assert!(resolve_gap(&eig, 4.0).is_err());
        assert!(resolve_gap(&eig, 0.5).is_err());
    }

    #[test]
    fn hash_is_stable_and_field_sensitive() {
        let a = parse_spec(MINIMAL).unwrap();
        let b = parse_spec(MINIMAL).unwrap();
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 16);
        let c = parse_spec(&MINIMAL.replace("8.0", "10.0")).unwrap();
        assert_ne!(config_hash(&a), config_hash(&c));
    }

    #[test]
    fn csv_flattening_handles_nesting() {
        let mut out = Vec::new();
        flatten_json(
            "",
            &json!({"a": {"b": 1.5}, "list": [1, "x,y"], "flag": true}),
            &mut out,
        );
        let map: BTreeMap<String, String> = out.into_iter().collect();
        assert_eq!(map["a.b"], "1.5");
        assert_eq!(map["list.0"], "1");
        assert_eq!(map["list.1"], "x,y");
        assert_eq!(map["flag"], "true");
        assert_eq!(csv_escape("x,y"), "\"x,y\"");
    }

    #[test]
    fn selftest_task_is_deterministic_across_runs() {
        let tmp = tempfile::tempdir().unwrap();
        let mut spec = standalone_spec("clifford-selftest", 2);
        spec.out_dir = Some(tmp.path().join("run1"));
        let r1 = run(&spec).unwrap();
        spec.out_dir = Some(tmp.path().join("run2"));
        let r2 = run(&spec).unwrap();
        let b1 = fs::read(&r1.ledger_path).unwrap();
        let b2 = fs::read(&r2.ledger_path).unwrap();
        assert!(!b1.is_empty());
        assert_eq!(b1, b2);
        assert!(r1.csv_path.exists());
    }

    #[test]
    fn residue_task_runs_standalone() {
        let tmp = tempfile::tempdir().unwrap();
        let mut spec = standalone_spec("residue-check", 1);
        spec.s_list = Some(vec![3.0]);
        spec.out_dir = Some(tmp.path().to_path_buf());
        let report = run(&spec).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert!(report.lines.iter().any(|l| l.contains("residue")));
    }

    #[test]
    fn empty_sweep_writes_empty_ledger() {
        let tmp = tempfile::tempdir().unwrap();
        let mut spec = standalone_spec("residue-check", 1);
        spec.out_dir = Some(tmp.path().to_path_buf());
        let report = sweep(&spec, "theta_12", &[]).unwrap();
        assert_eq!(report.rows.len(), 0);
        let bytes = fs::read(&report.ledger_path).unwrap();
        assert!(bytes.is_empty());
        assert!(sweep(&spec, "not_a_param", &[1.0]).is_err());
    }

    #[test]
    fn sweep_tags_rows() {
        let tmp = tempfile::tempdir().unwrap();
        // d = 2 so that a theta_12 sweep passes model validation.
        let mut spec = standalone_spec("residue-check", 2);
        spec.s_list = Some(vec![3.0]);
        spec.out_dir = Some(tmp.path().to_path_buf());
        let report = sweep(&spec, "f_weight", &[]).unwrap_err();
        // f_weight is not sweepable; the whitelist rejects it.
        assert!(report.to_string().contains("not supported"));
        let report = sweep(&spec, "theta_12", &[0.0, 0.1]).unwrap();
        assert_eq!(report.rows.len(), 4);
        for row in &report.rows {
            let obj = row.result.as_object().unwrap();
            assert_eq!(obj["sweep_param"], json!("theta_12"));
        }
    }
}
