use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{unvec, vec_op, ComplexMatrix, ComplexVector, SuperOperator, C64};

/// Sum of singular values.
pub fn trace_norm(a: &ComplexMatrix) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.singular_values().iter().sum()
}

/// Largest singular value.
pub fn spectral_norm(a: &ComplexMatrix) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.singular_values().iter().fold(0.0, |m: f64, &s| m.max(s))
}

/// Budget for the (1→1) norm estimator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormEffort {
    pub restarts: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for NormEffort {
    fn default() -> Self {
        Self { restarts: 32, tol: 1e-9, max_iter: 500, seed: 0x1b0e_5eed }
    }
}

/// Bracket on the (1→1) norm: `lower` is attained by an explicit rank-one
/// input, `upper` is `sqrt(D)` times the spectral norm of the transfer matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormEstimate {
    pub lower: f64,
    pub upper: f64,
}

/// Estimates `sup ||S(X)||_1` over `||X||_1 = 1`.
///
/// The supremum is attained on rank-one inputs `|psi><phi|`. Each restart
/// alternates between the polar factor `U` of `S(psi phi^dag)` and the top
/// singular pair of `S^dag(U)`, which never decreases the objective.
pub fn one_to_one_norm(s: &SuperOperator, effort: &NormEffort) -> NormEstimate {
    let d = s.dim();
    let upper = (d as f64).sqrt() * spectral_norm(s.transfer());
    if upper == 0.0 {
        return NormEstimate { lower: 0.0, upper: 0.0 };
    }
    let adjoint = s.transfer().adjoint();
    let mut rng = ChaCha8Rng::seed_from_u64(effort.seed);
    let mut best = 0.0_f64;

    for restart in 0..effort.restarts.max(1) {
        let (psi, phi) = match restart {
            0 => (basis_vector(d, 0), basis_vector(d, 0)),
            // diagonal starts: a state in, so channels score exactly 1
            r if r % 2 == 1 => {
                let v = random_unit(d, &mut rng);
                (v.clone(), v)
            }
            _ => (random_unit(d, &mut rng), random_unit(d, &mut rng)),
        };
        best = best.max(ascend(s, &adjoint, psi, phi, effort));
    }
    NormEstimate { lower: best.min(upper), upper }
}

fn ascend(
    s: &SuperOperator,
    adjoint: &ComplexMatrix,
    mut psi: ComplexVector,
    mut phi: ComplexVector,
    effort: &NormEffort,
) -> f64 {
    let d = s.dim();
    let mut value = 0.0_f64;
    let mut best = 0.0_f64;
    for _ in 0..effort.max_iter {
        let x = image(s, &psi, &phi);
        let svd = x.clone().svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => break,
        };
        // |tr(W^dag X)| / ||W||_inf never exceeds ||X||_1, even when the
        // singular vectors returned by the decomposition are inaccurate.
        let polar = u * v_t;
        let w_norm = spectral_norm(&polar);
        if w_norm == 0.0 {
            break;
        }
        let next = (polar.adjoint() * &x).trace().norm() / w_norm;
        best = best.max(next);
        if next - value <= effort.tol * next.max(1.0) && value > 0.0 {
            break;
        }
        value = next;
        if next == 0.0 {
            break;
        }
        let b = unvec(&(adjoint * vec_op(&polar)), d).expect("adjoint preserves dimension");
        let svd_b = b.svd(true, true);
        let k = argmax(svd_b.singular_values.as_slice());
        let (ub, vb_t) = match (svd_b.u, svd_b.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => break,
        };
        psi = unit(ub.column(k).into_owned());
        phi = unit(vb_t.row(k).adjoint());
    }
    best
}

fn unit(v: ComplexVector) -> ComplexVector {
    let n = v.norm();
    v / C64::new(n, 0.0)
}

fn image(s: &SuperOperator, psi: &ComplexVector, phi: &ComplexVector) -> ComplexMatrix {
    s.apply(&(psi * phi.adjoint())).expect("rank-one input has matching dimension")
}

fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

fn basis_vector(d: usize, k: usize) -> ComplexVector {
    let mut v = ComplexVector::zeros(d);
    v[k] = C64::new(1.0, 0.0);
    v
}

fn random_unit(d: usize, rng: &mut ChaCha8Rng) -> ComplexVector {
    let v = ComplexVector::from_fn(d, |_, _| {
        C64::new(StandardNormal.sample(&mut *rng), StandardNormal.sample(&mut *rng))
    });
    let n = v.norm();
    v / C64::new(n, 0.0)
}
