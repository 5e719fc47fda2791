//! Measure-and-postselect realization of Hermiticity- and trace-preserving maps.
//!
//! A non-CP map is split into a difference of CP maps. Each CP part is
//! dilated to a unitary on `ancilla ⊗ system` followed by a two-outcome
//! measurement on the ancilla. Ancilla index 0 is the initial level and the
//! joint basis index is `j * D + k` for ancilla level `j`, system level `k`.

mod wilson;

pub use wilson::{trials_needed, wilson, WilsonEstimate, DEFAULT_Z};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::liouvillian::Lattice;
use crate::tensor::{
    embed_operator, herm_eig, identity, max_abs, partial_trace, psd_sqrt, zeros, ComplexMatrix, ComplexVector,
    SuperOperator, C64,
};

/// Tolerance for the Hermiticity and trace tests of `is_hptp`.
pub const HPTP_TOL: f64 = 1e-9;
/// Choi eigenvalues below this fraction of `sum |lambda|` are dropped by the split.
pub const SPLIT_DROP: f64 = 1e-12;
/// A gauge maximum above `1 + GAUGE_TOL` triggers renormalization.
pub const GAUGE_TOL: f64 = 1e-12;
/// Outcome probabilities below this leave the post-measurement state undefined.
pub const MIN_PROBABILITY: f64 = 1e-14;

const COMPLETION_PIVOT: f64 = 1e-8;

/// True when the Choi matrix is Hermitian and its input marginal is the identity.
pub fn is_hptp(s: &SuperOperator, tol: f64) -> bool {
    let choi = s.to_choi();
    let scale = max_abs(&choi.matrix).max(1.0);
    choi.hermiticity_defect() <= tol * scale && max_abs(&(choi.input_marginal() - identity(s.dim()))) <= tol
}

/// A completely positive map `rho -> sum_i K_i rho K_i^dag`.
#[derive(Clone, Debug, PartialEq)]
pub struct CpMap {
    dim: usize,
    kraus: Vec<ComplexMatrix>,
}

impl CpMap {
    pub fn new(dim: usize, kraus: Vec<ComplexMatrix>) -> Result<Self> {
        if kraus.iter().any(|k| k.nrows() != dim || k.ncols() != dim) {
            return Err(Error::DimensionMismatch(format!("Kraus operators must be {dim}x{dim}")));
        }
        Ok(Self { dim, kraus })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kraus(&self) -> &[ComplexMatrix] {
        &self.kraus
    }

    pub fn is_empty(&self) -> bool {
        self.kraus.is_empty()
    }

    /// `G = sum_i K_i^dag K_i`.
    pub fn gauge(&self) -> ComplexMatrix {
        self.kraus.iter().fold(zeros(self.dim, self.dim), |acc, k| acc + k.adjoint() * k)
    }

    /// Largest eigenvalue of the gauge.
    pub fn gauge_max(&self) -> Result<f64> {
        let (values, _) = herm_eig(&self.gauge())?;
        Ok(values.last().copied().unwrap_or(0.0))
    }

    pub fn apply(&self, rho: &ComplexMatrix) -> ComplexMatrix {
        self.kraus.iter().fold(zeros(self.dim, self.dim), |acc, k| acc + k * rho * k.adjoint())
    }

    pub fn to_superoperator(&self) -> SuperOperator {
        if self.kraus.is_empty() {
            return SuperOperator::zero(self.dim);
        }
        SuperOperator::from_kraus(&self.kraus).expect("Kraus shapes checked at construction")
    }
}

/// `T = T^(0) - T^(1)` with both parts completely positive.
#[derive(Clone, Debug, PartialEq)]
pub struct HptpSplit {
    pub positive: CpMap,
    pub negative: CpMap,
}

impl HptpSplit {
    pub fn part(&self, which: usize) -> &CpMap {
        if which == 0 {
            &self.positive
        } else {
            &self.negative
        }
    }

    pub fn reconstruct(&self) -> SuperOperator {
        &self.positive.to_superoperator() - &self.negative.to_superoperator()
    }
}

/// Splits an HPTP map by the sign of its Choi eigenvalues.
///
/// An eigenpair `(lambda, v)` contributes the Kraus operator
/// `sqrt|lambda| K` with `K[a, i] = v[a * D + i]` to the part selected by the
/// sign of `lambda`.
pub fn hptp_split(s: &SuperOperator) -> Result<HptpSplit> {
    if !is_hptp(s, HPTP_TOL) {
        return Err(Error::NotHptp);
    }
    let d = s.dim();
    let choi = s.to_choi();
    let (values, vectors) = herm_eig(&choi.matrix)?;
    let drop = SPLIT_DROP * values.iter().map(|v| v.abs()).sum::<f64>();
    let mut positive = Vec::new();
    let mut negative = Vec::new();
    for (idx, &lambda) in values.iter().enumerate() {
        if lambda.abs() <= drop {
            continue;
        }
        let v = vectors.column(idx);
        let scale = C64::new(lambda.abs().sqrt(), 0.0);
        let k = ComplexMatrix::from_fn(d, d, |a, i| v[a * d + i] * scale);
        if lambda > 0.0 {
            positive.push(k);
        } else {
            negative.push(k);
        }
    }
    Ok(HptpSplit { positive: CpMap::new(d, positive)?, negative: CpMap::new(d, negative)? })
}

/// How the dilation unitary is completed beyond its first block column.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Completion {
    /// Gram–Schmidt over canonical vectors in ascending index order.
    #[default]
    Canonical,
    /// The same in descending order; only used to test completion independence.
    Reversed,
}

/// Stinespring dilation of a (renormalized) CP map with a two-outcome measurement.
#[derive(Clone, Debug, PartialEq)]
pub struct DilatedInstrument {
    dim: usize,
    kraus_count: usize,
    unitary: ComplexMatrix,
    gauge_scalar: f64,
    k_inf: ComplexMatrix,
}

impl DilatedInstrument {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `d_x + 1`.
    pub fn ancilla_dim(&self) -> usize {
        self.kraus_count + 1
    }

    pub fn unitary(&self) -> &ComplexMatrix {
        &self.unitary
    }

    /// `g` when the map was renormalized, otherwise 1.
    pub fn gauge_scalar(&self) -> f64 {
        self.gauge_scalar
    }

    /// `K^(inf)` with `G^ + K^(inf)^dag K^(inf) = I`.
    pub fn k_inf(&self) -> &ComplexMatrix {
        &self.k_inf
    }

    /// Block `(j, 0)` of the unitary: the `j`-th (renormalized) Kraus operator,
    /// or `K^(inf)` for `j = d_x`.
    pub fn block(&self, j: usize) -> ComplexMatrix {
        self.unitary.view((j * self.dim, 0), (self.dim, self.dim)).into_owned()
    }

    /// Projector onto ancilla levels `0..d_x`.
    pub fn projector_keep(&self) -> ComplexMatrix {
        let n = self.ancilla_dim() * self.dim;
        let mut p = zeros(n, n);
        for idx in 0..self.kraus_count * self.dim {
            p[(idx, idx)] = C64::new(1.0, 0.0);
        }
        p
    }

    /// Projector onto ancilla level `d_x`.
    pub fn projector_restart(&self) -> ComplexMatrix {
        identity(self.ancilla_dim() * self.dim) - self.projector_keep()
    }
}

pub fn dilate(map: &CpMap) -> Result<DilatedInstrument> {
    dilate_with(map, Completion::Canonical)
}

pub fn dilate_with(map: &CpMap, completion: Completion) -> Result<DilatedInstrument> {
    let d = map.dim();
    let g = map.gauge_max()?;
    if g < -HPTP_TOL {
        return Err(Error::NotPositive { eigenvalue: g });
    }
    let (scale, gauge_scalar) = if g > 1.0 + GAUGE_TOL { (1.0 / g.sqrt(), g) } else { (1.0, 1.0) };
    let kraus: Vec<ComplexMatrix> = map.kraus().iter().map(|k| k.scale(scale)).collect();
    let gauge = kraus.iter().fold(zeros(d, d), |acc, k| acc + k.adjoint() * k);
    let k_inf = psd_sqrt(&(identity(d) - gauge))?;

    let n = (kraus.len() + 1) * d;
    let mut columns: Vec<ComplexVector> = Vec::with_capacity(n);
    for c in 0..d {
        let mut col = ComplexVector::zeros(n);
        for (j, k) in kraus.iter().chain(std::iter::once(&k_inf)).enumerate() {
            for r in 0..d {
                col[j * d + r] = k[(r, c)];
            }
        }
        columns.push(col);
    }
    let order: Vec<usize> = match completion {
        Completion::Canonical => (0..n).collect(),
        Completion::Reversed => (0..n).rev().collect(),
    };
    for idx in order {
        if columns.len() == n {
            break;
        }
        let mut v = ComplexVector::zeros(n);
        v[idx] = C64::new(1.0, 0.0);
        for _ in 0..2 {
            for q in &columns {
                let overlap = q.dotc(&v);
                v -= q * overlap;
            }
        }
        let norm = v.norm();
        if norm > COMPLETION_PIVOT {
            columns.push(v / C64::new(norm, 0.0));
        }
    }
    if columns.len() != n {
        return Err(Error::InvalidArgument("unitary completion failed".into()));
    }
    Ok(DilatedInstrument {
        dim: d,
        kraus_count: kraus.len(),
        unitary: ComplexMatrix::from_columns(&columns),
        gauge_scalar,
        k_inf,
    })
}

/// Result of running the instrument on a state.
#[derive(Clone, Debug, PartialEq)]
pub struct InstrumentOutcome {
    /// Probability of the keep outcome.
    pub p1: f64,
    /// Normalized state after the keep outcome; `None` when `p1` vanishes.
    pub post_state: Option<ComplexMatrix>,
    /// `g * p1 * post_state`, the action of the original CP map.
    pub scaled_output: ComplexMatrix,
}

/// Applies `U (|0><0| ⊗ rho) U^dag`, measures, and traces out the ancilla.
pub fn apply_exact(instr: &DilatedInstrument, rho: &ComplexMatrix) -> Result<InstrumentOutcome> {
    let d = instr.dim;
    if rho.nrows() != d || rho.ncols() != d {
        return Err(Error::DimensionMismatch(format!("state must be {d}x{d}")));
    }
    let a = instr.ancilla_dim();
    let joint = crate::tensor::kron(&crate::tensor::basis_op(a, 0, 0), rho);
    let evolved = &instr.unitary * joint * instr.unitary.adjoint();
    let p = instr.projector_keep();
    let kept = &p * evolved * &p;
    let unnormalized = partial_trace(&kept, &[a, d], &[1])?;
    Ok(outcome(unnormalized, instr.gauge_scalar))
}

/// Same as [`apply_exact`] for an instrument acting on `support` of a larger lattice.
///
/// Only the first block column of the unitary is read, since the ancilla
/// starts in level 0.
pub fn apply_exact_embedded(
    instr: &DilatedInstrument,
    rho: &ComplexMatrix,
    support: &[usize],
    lattice: &Lattice,
) -> Result<InstrumentOutcome> {
    let dim = lattice.dim();
    if rho.nrows() != dim || rho.ncols() != dim {
        return Err(Error::DimensionMismatch(format!("state must be {dim}x{dim}")));
    }
    let mut unnormalized = zeros(dim, dim);
    for j in 0..instr.kraus_count {
        let b = embed_operator(&instr.block(j), support, lattice)?;
        unnormalized += &b * rho * b.adjoint();
    }
    Ok(outcome(unnormalized, instr.gauge_scalar))
}

fn outcome(unnormalized: ComplexMatrix, gauge_scalar: f64) -> InstrumentOutcome {
    let p1 = unnormalized.trace().re.clamp(0.0, 1.0);
    let post_state = (p1 >= MIN_PROBABILITY).then(|| unnormalized.clone() / C64::new(p1, 0.0));
    InstrumentOutcome { p1, post_state, scaled_output: unnormalized.scale(gauge_scalar) }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Keep,
    Restart,
}

/// Draws one measurement outcome against the exact keep probability.
pub fn sample_outcome(
    instr: &DilatedInstrument,
    rho: &ComplexMatrix,
    rng: &mut impl Rng,
) -> Result<(Outcome, Option<ComplexMatrix>)> {
    let out = apply_exact(instr, rho)?;
    if rng.random::<f64>() < out.p1 {
        let post = out.post_state.ok_or(Error::VanishingProbability { probability: out.p1 })?;
        Ok((Outcome::Keep, Some(post)))
    } else {
        Ok((Outcome::Restart, None))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{basis_op, real_matrix, sigma_minus};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn p0() -> ComplexMatrix {
        basis_op(2, 0, 0)
    }

    #[test]
    fn hptp_examples() {
        assert!(is_hptp(&SuperOperator::transpose_map(2), HPTP_TOL));
        let cpntp = CpMap::new(2, vec![p0()]).unwrap().to_superoperator();
        assert!(!is_hptp(&cpntp, HPTP_TOL));
    }

    #[test]
    fn split_of_channel_has_no_negative_part() {
        let g = 0.3_f64;
        let k0 = real_matrix(2, 2, &[1.0, 0.0, 0.0, (1.0 - g).sqrt()]);
        let k1 = sigma_minus().scale(g.sqrt());
        let s = SuperOperator::from_kraus(&[k0, k1]).unwrap();
        let split = hptp_split(&s).unwrap();
        assert!(split.negative.is_empty());
        assert!(split.positive.to_superoperator().frobenius_distance(&s) < 1e-12);
    }

    #[test]
    fn split_of_transpose_map() {
        let split = hptp_split(&SuperOperator::transpose_map(2)).unwrap();
        assert_eq!(split.negative.kraus().len(), 1);
        assert_eq!(split.positive.kraus().len(), 3);
        let s = 0.5_f64.sqrt();
        let expected = real_matrix(2, 2, &[0.0, s, -s, 0.0]);
        let k = &split.negative.kraus()[0];
        // eigenvectors are fixed up to a phase
        let phase = if k[(0, 1)].norm() > 0.0 { k[(0, 1)] / C64::new(s, 0.0) } else { C64::new(1.0, 0.0) };
        assert!((phase.norm() - 1.0).abs() < 1e-12);
        assert!(max_abs(&(k - expected * phase)) < 1e-12);
        assert!(split.reconstruct().frobenius_distance(&SuperOperator::transpose_map(2)) < 1e-12);
    }

    #[test]
    fn split_rejects_non_hptp() {
        let cpntp = CpMap::new(2, vec![p0()]).unwrap().to_superoperator();
        assert!(matches!(hptp_split(&cpntp), Err(Error::NotHptp)));
    }

    #[test]
    fn dilation_of_projector() {
        let instr = dilate(&CpMap::new(2, vec![p0()]).unwrap()).unwrap();
        assert_eq!(instr.ancilla_dim(), 2);
        assert_eq!(instr.gauge_scalar(), 1.0);
        assert!(max_abs(&(instr.k_inf() - basis_op(2, 1, 1))) < 1e-14);
        let u = instr.unitary();
        assert!(max_abs(&(u.adjoint() * u - identity(4))) < 1e-12);
        let p = (instr.projector_keep(), instr.projector_restart());
        assert!(max_abs(&(&p.0 + &p.1 - identity(4))) < 1e-15);
        assert!(max_abs(&(&p.0 * &p.1)) < 1e-15);
    }

    #[test]
    fn dilation_of_channel_always_keeps() {
        let g = 0.5_f64;
        let k0 = real_matrix(2, 2, &[1.0, 0.0, 0.0, (1.0 - g).sqrt()]);
        let k1 = sigma_minus().scale(g.sqrt());
        let map = CpMap::new(2, vec![k0, k1]).unwrap();
        let instr = dilate(&map).unwrap();
        assert!(max_abs(instr.k_inf()) < 1e-7);
        let rho = real_matrix(2, 2, &[0.3, 0.2, 0.2, 0.7]);
        let out = apply_exact(&instr, &rho).unwrap();
        assert!((out.p1 - 1.0).abs() < 1e-12);
        assert!(max_abs(&(out.post_state.unwrap() - map.apply(&rho))) < 1e-12);
    }

    #[test]
    fn renormalization_for_large_gauge() {
        let map = CpMap::new(2, vec![identity(2).scale(2f64.sqrt())]).unwrap();
        let instr = dilate(&map).unwrap();
        assert!((instr.gauge_scalar() - 2.0).abs() < 1e-12);
        assert!(max_abs(&(instr.block(0) - identity(2))) < 1e-12);
        let rho = real_matrix(2, 2, &[0.5, 0.0, 0.0, 0.5]);
        let out = apply_exact(&instr, &rho).unwrap();
        assert!(max_abs(&(out.scaled_output - rho.scale(2.0))) < 1e-12);
    }

    #[test]
    fn projector_on_mixed_state() {
        let instr = dilate(&CpMap::new(2, vec![p0()]).unwrap()).unwrap();
        let out = apply_exact(&instr, &identity(2).scale(0.5)).unwrap();
        assert!((out.p1 - 0.5).abs() < 1e-14);
        assert!(max_abs(&(out.post_state.unwrap() - p0())) < 1e-14);
    }

    #[test]
    fn vanishing_probability_is_signalled() {
        let instr = dilate(&CpMap::new(2, vec![p0()]).unwrap()).unwrap();
        let out = apply_exact(&instr, &basis_op(2, 1, 1)).unwrap();
        assert_eq!(out.p1, 0.0);
        assert!(out.post_state.is_none());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(sample_outcome(&instr, &basis_op(2, 1, 1), &mut rng), Ok((Outcome::Restart, None))));
    }

    #[test]
    fn sampling_frequencies_and_determinism() {
        let instr = dilate(&CpMap::new(2, vec![p0()]).unwrap()).unwrap();
        let rho = identity(2).scale(0.5);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..10_000).map(|_| sample_outcome(&instr, &rho, &mut rng).unwrap().0).collect::<Vec<_>>()
        };
        let a = run(7);
        let kept = a.iter().filter(|&&o| o == Outcome::Keep).count() as f64 / 1e4;
        assert!((kept - 0.5).abs() < 0.02);
        assert_eq!(a, run(7));
    }

    #[test]
    fn channel_never_restarts() {
        let instr = dilate(&CpMap::new(2, vec![identity(2)]).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rho = real_matrix(2, 2, &[0.9, 0.1, 0.1, 0.1]);
        assert!((0..1000).all(|_| sample_outcome(&instr, &rho, &mut rng).unwrap().0 == Outcome::Keep));
    }
}
