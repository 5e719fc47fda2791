//! Local indivisibility measures of a sliced model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::liouvillian::KLocalLiouvillian;
use crate::propagator::{slice_grid, SliceGrid, DEFAULT_TOL};
use crate::tensor::{herm_eig, identity, max_abs, SuperOperator};

/// Default tolerance of the channel test.
pub const CHANNEL_TOL: f64 = 1e-9;

/// Default m-sequence for the `t^ID` limit.
pub const DEFAULT_M_SEQUENCE: [usize; 4] = [16, 32, 64, 128];

/// Smallest eigenvalue of the Choi matrix, or `None` when it is not Hermitian.
pub fn choi_min_eigenvalue(s: &SuperOperator) -> Option<f64> {
    herm_eig(&s.to_choi().matrix).ok().map(|(values, _)| values[0])
}

/// True when `s` is completely positive and trace preserving, i.e. `Ch(s) = 0`.
///
/// CP is judged by `lambda_min(J) >= -tol * tr(J)`, TP by the input marginal
/// of `J` matching the identity entrywise within `tol`.
pub fn check_channel(s: &SuperOperator, tol: f64) -> bool {
    let choi = s.to_choi();
    let tp = max_abs(&(choi.input_marginal() - identity(s.dim()))) <= tol;
    if !tp {
        return false;
    }
    match herm_eig(&choi.matrix) {
        Ok((values, _)) => values[0] >= -tol * choi.trace().abs(),
        Err(_) => false,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivisibilityProfile {
    pub m: usize,
    /// `indivisible[i][j]` is `Ch(T^j_i) = 1`.
    pub indivisible: Vec<Vec<bool>>,
    /// `N~^m_i`.
    pub per_term: Vec<usize>,
    /// `N^^m_j`.
    pub per_slice: Vec<usize>,
    pub n_tilde: usize,
    pub n_hat: usize,
    pub n_total: usize,
    /// `C^m_i`: CP-to-non-CP transitions between consecutive slices.
    pub transitions: Vec<usize>,
    /// `2 max_i C^m_i`.
    pub c_tilde: usize,
    /// Terms whose first slice is already non-CP; such intervals are not counted by `C^m_i`.
    pub leading_indivisible: Vec<usize>,
}

impl DivisibilityProfile {
    pub fn from_mask(indivisible: Vec<Vec<bool>>) -> Self {
        let terms = indivisible.len();
        let m = indivisible.first().map_or(0, |row| row.len());
        let per_term: Vec<usize> = indivisible.iter().map(|row| row.iter().filter(|&&x| x).count()).collect();
        let per_slice: Vec<usize> = (0..m).map(|j| (0..terms).filter(|&i| indivisible[i][j]).count()).collect();
        let transitions: Vec<usize> =
            indivisible.iter().map(|row| row.windows(2).filter(|w| !w[0] && w[1]).count()).collect();
        let leading_indivisible = (0..terms).filter(|&i| indivisible[i].first() == Some(&true)).collect();
        Self {
            m,
            n_tilde: per_term.iter().copied().max().unwrap_or(0),
            n_hat: per_slice.iter().copied().max().unwrap_or(0),
            n_total: per_term.iter().sum(),
            c_tilde: 2 * transitions.iter().copied().max().unwrap_or(0),
            per_term,
            per_slice,
            transitions,
            leading_indivisible,
            indivisible,
        }
    }

    pub fn is_divisible(&self) -> bool {
        self.n_total == 0
    }
}

/// Evaluates `Ch` on every slice propagator of the grid.
pub fn profile(grid: &SliceGrid, tol: f64) -> DivisibilityProfile {
    use rayon::prelude::*;
    let mask = grid
        .entries
        .par_iter()
        .map(|row| row.iter().map(|s| !check_channel(s, tol)).collect())
        .collect();
    DivisibilityProfile::from_mask(mask)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TidStep {
    pub m: usize,
    /// `N~^m_i * t / m`.
    pub tid: Vec<f64>,
    pub transitions: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TidEstimate {
    pub m_sequence: Vec<usize>,
    pub per_term: Vec<f64>,
    pub t_id: f64,
    /// `C_i` at the finest `m`.
    pub transitions: Vec<usize>,
    pub c_tilde: usize,
    pub converged: bool,
    pub tolerance: f64,
    pub history: Vec<TidStep>,
    pub leading_indivisible: Vec<usize>,
}

/// Finite-`m` estimate of `t^ID_i = lim N~^m_i dt`.
///
/// Converged when the last two estimates differ by less than `tol * t` for
/// every term.
pub fn estimate_tid(model: &KLocalLiouvillian, t: f64, m_sequence: &[usize], tol: f64) -> Result<TidEstimate> {
    if m_sequence.len() < 3 || m_sequence.windows(2).any(|w| w[0] >= w[1]) || m_sequence[0] == 0 {
        return Err(Error::InvalidArgument(format!(
            "m-sequence {m_sequence:?} must have at least 3 strictly increasing positive entries"
        )));
    }
    let mut history = Vec::with_capacity(m_sequence.len());
    let mut last = None;
    for &m in m_sequence {
        let grid = slice_grid(model, t, m, false, DEFAULT_TOL)?;
        let p = profile(&grid, CHANNEL_TOL);
        history.push(TidStep {
            m,
            tid: p.per_term.iter().map(|&n| n as f64 * t / m as f64).collect(),
            transitions: p.transitions.clone(),
        });
        last = Some(p);
    }
    let last = last.expect("sequence is non-empty");
    let n = history.len();
    let converged = history[n - 1]
        .tid
        .iter()
        .zip(&history[n - 2].tid)
        .all(|(a, b)| (a - b).abs() < tol * t.max(f64::MIN_POSITIVE));
    let per_term = history[n - 1].tid.clone();
    Ok(TidEstimate {
        m_sequence: m_sequence.to_vec(),
        t_id: per_term.iter().copied().fold(0.0, f64::max),
        per_term,
        c_tilde: last.c_tilde,
        transitions: last.transitions,
        converged,
        tolerance: tol,
        history,
        leading_indivisible: last.leading_indivisible,
    })
}
