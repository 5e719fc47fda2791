use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ComplexMatrix, C64};

/// Scalar time dependence drawn from a closed, serializable family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TimeFunction {
    Constant { value: f64 },
    /// `sum_k coeffs[k] s^k`.
    Polynomial { coeffs: Vec<f64> },
    /// `amp sin(freq s + phase)`.
    Sinusoid { amp: f64, freq: f64, phase: f64 },
    /// `amp tanh(rate (s - offset))`.
    Tanh { amp: f64, rate: f64, offset: f64 },
    /// `pieces[k]` applies on `[breaks[k-1], breaks[k])`; the first and last
    /// pieces extend to the ends of the domain.
    Piecewise { breaks: Vec<f64>, pieces: Vec<TimeFunction> },
    /// Linear interpolation through `(times, values)`, held constant outside.
    Table { times: Vec<f64>, values: Vec<f64> },
}

impl TimeFunction {
    pub fn constant(value: f64) -> Self {
        Self::Constant { value }
    }

    pub fn eval(&self, s: f64) -> f64 {
        match self {
            Self::Constant { value } => *value,
            Self::Polynomial { coeffs } => coeffs.iter().rev().fold(0.0, |acc, &c| acc * s + c),
            Self::Sinusoid { amp, freq, phase } => amp * (freq * s + phase).sin(),
            Self::Tanh { amp, rate, offset } => amp * (rate * (s - offset)).tanh(),
            Self::Piecewise { breaks, pieces } => {
                let k = breaks.partition_point(|&b| b <= s);
                pieces[k].eval(s)
            }
            Self::Table { times, values } => {
                if s <= times[0] {
                    return values[0];
                }
                let last = times.len() - 1;
                if s >= times[last] {
                    return values[last];
                }
                let k = times.partition_point(|&x| x <= s);
                let (t0, t1) = (times[k - 1], times[k]);
                let w = (s - t0) / (t1 - t0);
                values[k - 1] * (1.0 - w) + values[k] * w
            }
        }
    }

    /// Points where the function or its derivative may jump.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            Self::Piecewise { breaks, pieces } => {
                let mut out = breaks.clone();
                out.extend(pieces.iter().flat_map(|p| p.breakpoints()));
                out
            }
            Self::Table { times, .. } => times.clone(),
            _ => Vec::new(),
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            Self::Constant { .. } => true,
            Self::Polynomial { coeffs } => coeffs.iter().skip(1).all(|&c| c == 0.0),
            Self::Sinusoid { amp, freq, .. } => *amp == 0.0 || *freq == 0.0,
            Self::Tanh { amp, rate, .. } => *amp == 0.0 || *rate == 0.0,
            Self::Piecewise { pieces, .. } => {
                pieces.iter().all(|p| p.is_constant())
                    && pieces.windows(2).all(|w| w[0].eval(0.0) == w[1].eval(0.0))
            }
            Self::Table { values, .. } => values.windows(2).all(|w| w[0] == w[1]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
        let ok = match self {
            Self::Constant { value } => value.is_finite(),
            Self::Polynomial { coeffs } => finite(coeffs),
            Self::Sinusoid { amp, freq, phase } => finite(&[*amp, *freq, *phase]),
            Self::Tanh { amp, rate, offset } => finite(&[*amp, *rate, *offset]),
            Self::Piecewise { breaks, pieces } => {
                if pieces.len() != breaks.len() + 1 {
                    return Err(Error::InvalidModel(format!(
                        "piecewise function has {} breaks but {} pieces",
                        breaks.len(),
                        pieces.len()
                    )));
                }
                for p in pieces {
                    p.validate()?;
                }
                finite(breaks) && breaks.windows(2).all(|w| w[0] < w[1])
            }
            Self::Table { times, values } => {
                if times.is_empty() || times.len() != values.len() {
                    return Err(Error::InvalidModel(format!(
                        "table has {} times and {} values",
                        times.len(),
                        values.len()
                    )));
                }
                finite(times) && finite(values) && times.windows(2).all(|w| w[0] < w[1])
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidModel(format!("malformed time function {self:?}")))
        }
    }
}

/// An operator `sum_k f_k(s) M_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeOperator {
    dim: usize,
    parts: Vec<(TimeFunction, ComplexMatrix)>,
}

impl TimeOperator {
    pub fn constant(m: ComplexMatrix) -> Self {
        Self { dim: m.nrows(), parts: vec![(TimeFunction::constant(1.0), m)] }
    }

    pub fn zero(dim: usize) -> Self {
        Self { dim, parts: Vec::new() }
    }

    pub fn scaled(f: TimeFunction, m: ComplexMatrix) -> Self {
        Self { dim: m.nrows(), parts: vec![(f, m)] }
    }

    pub fn from_parts(dim: usize, parts: Vec<(TimeFunction, ComplexMatrix)>) -> Result<Self> {
        for (f, m) in &parts {
            f.validate()?;
            if m.nrows() != dim || m.ncols() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "operator part is {}x{}, expected {dim}x{dim}",
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        Ok(Self { dim, parts })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn parts(&self) -> &[(TimeFunction, ComplexMatrix)] {
        &self.parts
    }

    pub fn at(&self, s: f64) -> ComplexMatrix {
        let mut out = ComplexMatrix::zeros(self.dim, self.dim);
        for (f, m) in &self.parts {
            out += m * C64::new(f.eval(s), 0.0);
        }
        out
    }

    pub fn is_time_independent(&self) -> bool {
        self.parts.iter().all(|(f, _)| f.is_constant())
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        self.parts.iter().flat_map(|(f, _)| f.breakpoints()).collect()
    }
}
