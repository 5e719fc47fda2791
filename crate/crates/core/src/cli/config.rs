//! Declarative model files.

use serde::Deserialize;
use thiserror::Error;

use crate::algsim::Caps;
use crate::divisibility::DEFAULT_M_SEQUENCE;
use crate::liouvillian::{
    validate_model, BetaMode, Dissipator, KLocalLiouvillian, Lattice, LocalTerm, TermForm, TimeFunction, TimeOperator,
};
use crate::tensor::{identity, is_hermitian, kron, pauli_x, pauli_y, pauli_z, zeros, ComplexMatrix, SuperOperator, C64};

pub const SCHEMA_VERSION: u32 = 1;

/// Rows of `[re, im]` pairs.
pub type MatrixLiteral = Vec<Vec<[f64; 2]>>;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub sites: usize,
    pub local_dim: usize,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorPart {
    pub coefficient: TimeFunction,
    pub matrix: MatrixLiteral,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LindbladConfig {
    pub matrix: MatrixLiteral,
    pub rate: TimeFunction,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawPart {
    pub coefficient: TimeFunction,
    /// Transfer matrix on column-stacked operators.
    pub transfer: MatrixLiteral,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermConfig {
    pub support: Vec<usize>,
    #[serde(default)]
    pub hamiltonian: Option<MatrixLiteral>,
    /// Time-dependent Hamiltonian parts, added to `hamiltonian`.
    #[serde(default)]
    pub hamiltonian_parts: Vec<OperatorPart>,
    #[serde(default)]
    pub lindblads: Vec<LindbladConfig>,
    #[serde(default)]
    pub raw_generator: Option<Vec<RawPart>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatePreset {
    AllZero,
    MaximallyMixed,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum StateSpec {
    Preset(StatePreset),
    Matrix(MatrixLiteral),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum ObservableSpec {
    /// One of `I`, `X`, `Y`, `Z` per site, site 0 first.
    Pauli(String),
    Matrix(MatrixLiteral),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub m_sequence: Vec<usize>,
    pub sweep_ms: Vec<usize>,
    pub beta_grid: usize,
    pub beta_mode: BetaMode,
    pub tid_tolerance: f64,
    pub gauge_samples: usize,
    pub trotter_share: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            m_sequence: DEFAULT_M_SEQUENCE.to_vec(),
            sweep_ms: vec![2, 4, 8, 16, 32, 64],
            beta_grid: 64,
            beta_mode: BetaMode::FullSpace,
            tid_tolerance: 0.02,
            gauge_samples: 256,
            trotter_share: 0.5,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub schema_version: u32,
    pub lattice: LatticeConfig,
    /// Locality; defaults to the largest support.
    #[serde(default)]
    pub k: Option<usize>,
    pub horizon: f64,
    /// Final time; defaults to the horizon.
    #[serde(default)]
    pub t: Option<f64>,
    pub terms: Vec<TermConfig>,
    #[serde(default)]
    pub initial_state: Option<StateSpec>,
    #[serde(default)]
    pub observable: Option<ObservableSpec>,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub caps: Caps,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("{path}: {reason}")]
    Schema { path: String, reason: String },
    #[error("model validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),
}

/// A parsed and validated model file.
#[derive(Clone, Debug)]
pub struct Parsed {
    pub config: ModelConfig,
    pub model: KLocalLiouvillian,
    pub t: f64,
    pub initial_state: ComplexMatrix,
    pub observable: ComplexMatrix,
}

fn schema(path: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Schema { path: path.into(), reason: reason.into() }
}

pub fn parse_config(text: &str) -> Result<Parsed, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: ModelConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let inner = e.inner();
        let path = e.path().to_string();
        // over-long [re, im] pairs surface as syntax errors inside a value
        if inner.is_eof() || (inner.is_syntax() && path == ".") {
            ConfigError::Syntax(inner.to_string())
        } else {
            schema(if path == "." { String::from("(root)") } else { path }, inner.to_string())
        }
    })?;
    build(config)
}

fn matrix(lit: &MatrixLiteral, path: &str, dim: usize) -> Result<ComplexMatrix, ConfigError> {
    if lit.len() != dim || lit.iter().any(|row| row.len() != dim) {
        return Err(schema(path, format!("expected a {dim}x{dim} matrix")));
    }
    Ok(ComplexMatrix::from_fn(dim, dim, |r, c| C64::new(lit[r][c][0], lit[r][c][1])))
}

fn build(config: ModelConfig) -> Result<Parsed, ConfigError> {
    if config.schema_version != SCHEMA_VERSION {
        return Err(schema(
            "schema_version",
            format!("unsupported version {}, expected {SCHEMA_VERSION}", config.schema_version),
        ));
    }
    let lattice = Lattice::with_cap(config.lattice.sites, config.lattice.local_dim, config.caps.max_dim)
        .map_err(|e| schema("lattice", e.to_string()))?;
    let d = lattice.local_dim;
    if config.terms.is_empty() {
        return Err(schema("terms", "at least one term is required"));
    }
    let mut terms = Vec::with_capacity(config.terms.len());
    for (i, tc) in config.terms.iter().enumerate() {
        let p = format!("terms[{i}]");
        if tc.support.is_empty() {
            return Err(schema(format!("{p}.support"), "support is empty"));
        }
        for (q, &s) in tc.support.iter().enumerate() {
            if s >= lattice.sites {
                return Err(schema(
                    format!("{p}.support[{q}]"),
                    format!("site {s} out of range for a {}-site lattice", lattice.sites),
                ));
            }
            if tc.support[..q].contains(&s) {
                return Err(schema(format!("{p}.support[{q}]"), format!("site {s} repeated")));
            }
        }
        let dim = d.pow(tc.support.len() as u32);
        let form = match &tc.raw_generator {
            Some(parts) => {
                if tc.hamiltonian.is_some() || !tc.hamiltonian_parts.is_empty() || !tc.lindblads.is_empty() {
                    return Err(schema(&p, "raw_generator excludes hamiltonian and lindblads"));
                }
                let mut generator = Vec::with_capacity(parts.len());
                for (q, part) in parts.iter().enumerate() {
                    let path = format!("{p}.raw_generator[{q}].transfer");
                    let s = SuperOperator::new(dim, matrix(&part.transfer, &path, dim * dim)?)
                        .map_err(|e| schema(&path, e.to_string()))?;
                    generator.push((part.coefficient.clone(), s));
                }
                TermForm::Raw { generator }
            }
            None => {
                let mut parts = Vec::new();
                if let Some(h) = &tc.hamiltonian {
                    parts.push((TimeFunction::constant(1.0), matrix(h, &format!("{p}.hamiltonian"), dim)?));
                }
                for (q, part) in tc.hamiltonian_parts.iter().enumerate() {
                    let m = matrix(&part.matrix, &format!("{p}.hamiltonian_parts[{q}].matrix"), dim)?;
                    parts.push((part.coefficient.clone(), m));
                }
                let hamiltonian = if parts.is_empty() {
                    TimeOperator::zero(dim)
                } else {
                    TimeOperator::from_parts(dim, parts).map_err(|e| schema(format!("{p}.hamiltonian"), e.to_string()))?
                };
                let mut channels = Vec::with_capacity(tc.lindblads.len());
                for (q, l) in tc.lindblads.iter().enumerate() {
                    let op = matrix(&l.matrix, &format!("{p}.lindblads[{q}].matrix"), dim)?;
                    l.rate.validate().map_err(|e| schema(format!("{p}.lindblads[{q}].rate"), e.to_string()))?;
                    channels.push(Dissipator { operator: TimeOperator::constant(op), rate: l.rate.clone() });
                }
                TermForm::Gksl { hamiltonian, channels }
            }
        };
        terms.push(LocalTerm::new(tc.support.clone(), form).map_err(|e| schema(&p, e.to_string()))?);
    }
    let k = config.k.unwrap_or_else(|| config.terms.iter().map(|t| t.support.len()).max().unwrap_or(1));
    let model = KLocalLiouvillian::new(lattice, k, terms, config.horizon).map_err(|e| schema("(root)", e.to_string()))?;
    let t = config.t.unwrap_or(config.horizon);
    if !(t >= 0.0 && t <= config.horizon) {
        return Err(schema("t", format!("final time {t} outside [0, {}]", config.horizon)));
    }
    let report = validate_model(&model, t, config.analysis.beta_grid.max(2));
    if !report.passed {
        return Err(ConfigError::Validation(
            report
                .issues
                .iter()
                .map(|i| match i.term {
                    Some(term) => format!("terms[{term}]: {}: {}", i.check, i.detail),
                    None => format!("{}: {}", i.check, i.detail),
                })
                .collect(),
        ));
    }
    let dim = lattice.dim();
    let initial_state = match &config.initial_state {
        None | Some(StateSpec::Preset(StatePreset::AllZero)) => {
            let mut m = zeros(dim, dim);
            m[(0, 0)] = C64::new(1.0, 0.0);
            m
        }
        Some(StateSpec::Preset(StatePreset::MaximallyMixed)) => identity(dim).scale(1.0 / dim as f64),
        Some(StateSpec::Matrix(lit)) => {
            let m = matrix(lit, "initial_state", dim)?;
            crate::propagator::check_density(&m, dim).map_err(|e| schema("initial_state", e.to_string()))?;
            m
        }
    };
    let observable = match &config.observable {
        None => pauli_string(&"Z".repeat(lattice.sites), &lattice)?,
        Some(ObservableSpec::Pauli(s)) => pauli_string(s, &lattice)?,
        Some(ObservableSpec::Matrix(lit)) => {
            let m = matrix(lit, "observable", dim)?;
            if !is_hermitian(&m, 1e-10) {
                return Err(schema("observable", "observable must be Hermitian"));
            }
            m
        }
    };
    Ok(Parsed { config, model, t, initial_state, observable })
}

/// `"XZ"` is `X ⊗ Z` with site 0 first.
pub fn pauli_string(s: &str, lattice: &Lattice) -> Result<ComplexMatrix, ConfigError> {
    if lattice.local_dim != 2 {
        return Err(schema("observable", "Pauli strings need local dimension 2"));
    }
    if s.chars().count() != lattice.sites {
        return Err(schema("observable", format!("Pauli string {s:?} must have {} letters", lattice.sites)));
    }
    let mut acc = identity(1);
    for ch in s.chars() {
        let p = match ch.to_ascii_uppercase() {
            'I' => identity(2),
            'X' => pauli_x(),
            'Y' => pauli_y(),
            'Z' => pauli_z(),
            other => return Err(schema("observable", format!("unknown Pauli letter {other:?}"))),
        };
        acc = kron(&acc, &p);
    }
    Ok(acc)
}
