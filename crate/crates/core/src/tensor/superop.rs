use std::ops::{Add, Sub};

use super::{basis_op, identity, kron, max_abs, unvec, vec_op, zeros, ComplexMatrix, ComplexVector, C64};
use crate::error::{Error, Result};
use crate::liouvillian::Lattice;

/// A linear map on `dim x dim` operators, stored as its transfer matrix
/// acting on column-stacked operators.
#[derive(Clone, Debug, PartialEq)]
pub struct SuperOperator {
    dim: usize,
    transfer: ComplexMatrix,
}

impl SuperOperator {
    pub fn new(dim: usize, transfer: ComplexMatrix) -> Result<Self> {
        let side = dim * dim;
        if dim == 0 || transfer.nrows() != side || transfer.ncols() != side {
            return Err(Error::DimensionMismatch(format!(
                "transfer matrix is {}x{}, expected {side}x{side} for Hilbert dimension {dim}",
                transfer.nrows(),
                transfer.ncols()
            )));
        }
        Ok(Self { dim, transfer })
    }

    pub fn identity(dim: usize) -> Self {
        Self { dim, transfer: identity(dim * dim) }
    }

    pub fn zero(dim: usize) -> Self {
        Self { dim, transfer: zeros(dim * dim, dim * dim) }
    }

    /// Builds the transfer matrix by applying `f` to every `|i><j|`.
    pub fn from_fn(dim: usize, f: impl Fn(&ComplexMatrix) -> ComplexMatrix) -> Self {
        let side = dim * dim;
        let mut transfer = zeros(side, side);
        for j in 0..dim {
            for i in 0..dim {
                let image = f(&basis_op(dim, i, j));
                transfer.set_column(j * dim + i, &vec_op(&image));
            }
        }
        Self { dim, transfer }
    }

    /// `X -> sum_k K_k X K_k^dag`.
    pub fn from_kraus(kraus: &[ComplexMatrix]) -> Result<Self> {
        let dim = kraus
            .first()
            .map(|k| k.nrows())
            .ok_or_else(|| Error::InvalidArgument("empty Kraus list".into()))?;
        let side = dim * dim;
        let mut transfer = zeros(side, side);
        for k in kraus {
            if k.nrows() != dim || k.ncols() != dim {
                return Err(Error::DimensionMismatch("Kraus operators differ in shape".into()));
            }
            transfer += kron(&k.map(|z| z.conj()), k);
        }
        Ok(Self { dim, transfer })
    }

    /// `X -> A X`.
    pub fn left_mul(a: &ComplexMatrix) -> Self {
        let dim = a.nrows();
        Self { dim, transfer: kron(&identity(dim), a) }
    }

    /// `X -> X A`.
    pub fn right_mul(a: &ComplexMatrix) -> Self {
        let dim = a.nrows();
        Self { dim, transfer: kron(&a.transpose(), &identity(dim)) }
    }

    /// The transpose map `X -> X^T`.
    pub fn transpose_map(dim: usize) -> Self {
        Self::from_fn(dim, |x| x.transpose())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn transfer(&self) -> &ComplexMatrix {
        &self.transfer
    }

    pub fn into_transfer(self) -> ComplexMatrix {
        self.transfer
    }

    pub fn apply(&self, a: &ComplexMatrix) -> Result<ComplexMatrix> {
        if a.nrows() != self.dim || a.ncols() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "operator is {}x{}, superoperator acts on dimension {}",
                a.nrows(),
                a.ncols(),
                self.dim
            )));
        }
        unvec(&(&self.transfer * vec_op(a)), self.dim)
    }

    /// `self ∘ other`: `other` is applied first.
    pub fn compose(&self, other: &SuperOperator) -> Result<SuperOperator> {
        self.check_same_dim(other)?;
        Ok(Self { dim: self.dim, transfer: &self.transfer * &other.transfer })
    }

    /// Hilbert–Schmidt adjoint.
    pub fn adjoint(&self) -> SuperOperator {
        Self { dim: self.dim, transfer: self.transfer.adjoint() }
    }

    pub fn scale(&self, factor: f64) -> SuperOperator {
        Self { dim: self.dim, transfer: self.transfer.scale(factor) }
    }

    pub fn scale_complex(&self, factor: C64) -> SuperOperator {
        Self { dim: self.dim, transfer: &self.transfer * factor }
    }

    /// `self * other - other * self` as composed maps.
    pub fn commutator(&self, other: &SuperOperator) -> Result<SuperOperator> {
        self.check_same_dim(other)?;
        Ok(Self {
            dim: self.dim,
            transfer: &self.transfer * &other.transfer - &other.transfer * &self.transfer,
        })
    }

    pub fn frobenius_distance(&self, other: &SuperOperator) -> f64 {
        (&self.transfer - &other.transfer).norm()
    }

    /// Max deviation of `X -> tr(S(X))` from `X -> tr(X)`.
    pub fn trace_preservation_defect(&self) -> f64 {
        self.trace_row()
            .iter()
            .zip(vec_op(&identity(self.dim)).iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Max modulus of `X -> tr(S(X))`; zero for trace-annihilating maps.
    pub fn trace_annihilation_defect(&self) -> f64 {
        self.trace_row().iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    fn trace_row(&self) -> Vec<C64> {
        let d = self.dim;
        (0..d * d)
            .map(|col| (0..d).map(|i| self.transfer[(i * d + i, col)]).sum())
            .collect()
    }

    pub fn to_choi(&self) -> ChoiMatrix {
        // J[(a D + i), (b D + j)] = S(|i><j|)[a, b]
        let d = self.dim;
        let mut j_mat = zeros(d * d, d * d);
        for j in 0..d {
            for i in 0..d {
                let col = j * d + i;
                for b in 0..d {
                    for a in 0..d {
                        j_mat[(a * d + i, b * d + j)] = self.transfer[(b * d + a, col)];
                    }
                }
            }
        }
        ChoiMatrix { dim: d, matrix: j_mat }
    }

    pub fn from_choi(choi: &ChoiMatrix) -> SuperOperator {
        let d = choi.dim;
        let mut transfer = zeros(d * d, d * d);
        for j in 0..d {
            for i in 0..d {
                let col = j * d + i;
                for b in 0..d {
                    for a in 0..d {
                        transfer[(b * d + a, col)] = choi.matrix[(a * d + i, b * d + j)];
                    }
                }
            }
        }
        SuperOperator { dim: d, transfer }
    }

    fn check_same_dim(&self, other: &SuperOperator) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch(format!(
                "superoperators act on dimensions {} and {}",
                self.dim, other.dim
            )));
        }
        Ok(())
    }
}

impl Add for &SuperOperator {
    type Output = SuperOperator;

    fn add(self, rhs: &SuperOperator) -> SuperOperator {
        assert_eq!(self.dim, rhs.dim, "superoperator dimensions differ");
        SuperOperator { dim: self.dim, transfer: &self.transfer + &rhs.transfer }
    }
}

impl Sub for &SuperOperator {
    type Output = SuperOperator;

    fn sub(self, rhs: &SuperOperator) -> SuperOperator {
        assert_eq!(self.dim, rhs.dim, "superoperator dimensions differ");
        SuperOperator { dim: self.dim, transfer: &self.transfer - &rhs.transfer }
    }
}

/// Choi–Jamiołkowski matrix `J = sum_ij S(|i><j|) ⊗ |i><j|`, output factor first.
#[derive(Clone, Debug, PartialEq)]
pub struct ChoiMatrix {
    pub dim: usize,
    pub matrix: ComplexMatrix,
}

impl ChoiMatrix {
    pub fn new(dim: usize, matrix: ComplexMatrix) -> Result<Self> {
        if matrix.nrows() != dim * dim || matrix.ncols() != dim * dim {
            return Err(Error::DimensionMismatch(format!(
                "Choi matrix is {}x{}, expected side {}",
                matrix.nrows(),
                matrix.ncols(),
                dim * dim
            )));
        }
        Ok(Self { dim, matrix })
    }

    /// Trace over the output factor; equals the identity for trace-preserving maps.
    pub fn input_marginal(&self) -> ComplexMatrix {
        let d = self.dim;
        let mut out = zeros(d, d);
        for j in 0..d {
            for i in 0..d {
                out[(i, j)] = (0..d).map(|a| self.matrix[(a * d + i, a * d + j)]).sum();
            }
        }
        out
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    pub fn hermiticity_defect(&self) -> f64 {
        max_abs(&(&self.matrix - self.matrix.adjoint()))
    }
}

/// Index bookkeeping for a support inside a lattice.
pub(crate) struct SupportLayout {
    pub local_dim: usize,
    pub rest_dim: usize,
    /// `global[l * rest_dim + r]` is the global basis index for local index
    /// `l` on the support and `r` on the remaining sites.
    pub global: Vec<usize>,
}

impl SupportLayout {
    pub fn new(support: &[usize], lattice: &Lattice) -> Result<Self> {
        let n = lattice.sites;
        let d = lattice.local_dim;
        let mut seen = vec![false; n];
        for &s in support {
            if s >= n {
                return Err(Error::DimensionMismatch(format!(
                    "site {s} out of range for a {n}-site lattice"
                )));
            }
            if seen[s] {
                return Err(Error::DimensionMismatch(format!("site {s} repeated in support {support:?}")));
            }
            seen[s] = true;
        }
        let rest: Vec<usize> = (0..n).filter(|s| !seen[*s]).collect();
        let local_dim = d.pow(support.len() as u32);
        let rest_dim = d.pow(rest.len() as u32);
        let mut global = vec![0; local_dim * rest_dim];
        let mut digits = vec![0usize; n];
        for l in 0..local_dim {
            let mut rem = l;
            for &site in support.iter().rev() {
                digits[site] = rem % d;
                rem /= d;
            }
            for r in 0..rest_dim {
                let mut rem = r;
                for &site in rest.iter().rev() {
                    digits[site] = rem % d;
                    rem /= d;
                }
                global[l * rest_dim + r] = digits.iter().fold(0, |acc, &x| acc * d + x);
            }
        }
        Ok(Self { local_dim, rest_dim, global })
    }
}

/// Embeds a map on the `support` sites into the full lattice, acting as the
/// identity elsewhere. The global basis is ordered with site 0 most significant.
pub fn embed_local(s: &SuperOperator, support: &[usize], lattice: &Lattice) -> Result<SuperOperator> {
    let layout = SupportLayout::new(support, lattice)?;
    let ds = layout.local_dim;
    if s.dim() != ds {
        return Err(Error::DimensionMismatch(format!(
            "local map has dimension {} but support {support:?} needs {ds}",
            s.dim()
        )));
    }
    let dim = lattice.dim();
    let dr = layout.rest_dim;
    let t = s.transfer();
    let mut transfer = zeros(dim * dim, dim * dim);
    for rr in 0..dr {
        for rc in 0..dr {
            for lc_in in 0..ds {
                for lr_in in 0..ds {
                    let col_g = layout.global[lc_in * dr + rc] * dim + layout.global[lr_in * dr + rr];
                    let col_l = lc_in * ds + lr_in;
                    for lc in 0..ds {
                        for lr in 0..ds {
                            let v = t[(lc * ds + lr, col_l)];
                            if v != C64::new(0.0, 0.0) {
                                let row_g = layout.global[lc * dr + rc] * dim + layout.global[lr * dr + rr];
                                transfer[(row_g, col_g)] = v;
                            }
                        }
                    }
                }
            }
        }
    }
    SuperOperator::new(dim, transfer)
}

/// Embeds an operator on `support` as `A ⊗ I` with the lattice's site ordering.
pub fn embed_operator(a: &ComplexMatrix, support: &[usize], lattice: &Lattice) -> Result<ComplexMatrix> {
    let layout = SupportLayout::new(support, lattice)?;
    let ds = layout.local_dim;
    if a.nrows() != ds || a.ncols() != ds {
        return Err(Error::DimensionMismatch(format!(
            "operator is {}x{} but support {support:?} needs {ds}",
            a.nrows(),
            a.ncols()
        )));
    }
    let dim = lattice.dim();
    let dr = layout.rest_dim;
    let mut out = zeros(dim, dim);
    for r in 0..dr {
        for lc in 0..ds {
            for lr in 0..ds {
                out[(layout.global[lr * dr + r], layout.global[lc * dr + r])] = a[(lr, lc)];
            }
        }
    }
    Ok(out)
}

/// Applies a map on the `support` sites to a full-lattice operator without
/// forming the embedded transfer matrix.
pub fn apply_local(s: &SuperOperator, support: &[usize], lattice: &Lattice, rho: &ComplexMatrix) -> Result<ComplexMatrix> {
    let layout = SupportLayout::new(support, lattice)?;
    let ds = layout.local_dim;
    let dim = lattice.dim();
    if s.dim() != ds {
        return Err(Error::DimensionMismatch(format!(
            "local map has dimension {} but support {support:?} needs {ds}",
            s.dim()
        )));
    }
    if rho.nrows() != dim || rho.ncols() != dim {
        return Err(Error::DimensionMismatch(format!("operator must be {dim}x{dim}")));
    }
    let dr = layout.rest_dim;
    let mut out = zeros(dim, dim);
    let mut block = ComplexVector::zeros(ds * ds);
    for rr in 0..dr {
        for rc in 0..dr {
            for lc in 0..ds {
                for lr in 0..ds {
                    block[lc * ds + lr] = rho[(layout.global[lr * dr + rr], layout.global[lc * dr + rc])];
                }
            }
            let image = s.transfer() * &block;
            for lc in 0..ds {
                for lr in 0..ds {
                    out[(layout.global[lr * dr + rr], layout.global[lc * dr + rc])] = image[lc * ds + lr];
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{pauli_x, pauli_z, real_matrix, sigma_minus};

    fn rand_matrix(n: usize, seed: u64) -> ComplexMatrix {
        let mut state = seed ^ 0x9E3779B97F4A7C15;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        ComplexMatrix::from_fn(n, n, |_, _| C64::new(next(), next()))
    }

    #[test]
    fn identity_superoperator_acts_trivially() {
        let rho = rand_matrix(3, 1);
        assert_eq!(SuperOperator::identity(3).apply(&rho).unwrap(), rho);
    }

    #[test]
    fn left_multiplication_convention() {
        let rho = rand_matrix(2, 2);
        let out = SuperOperator::left_mul(&pauli_x()).apply(&rho).unwrap();
        assert!(max_abs(&(out - pauli_x() * &rho)) < 1e-15);
        let out = SuperOperator::right_mul(&pauli_z()).apply(&rho).unwrap();
        assert!(max_abs(&(out - &rho * pauli_z())) < 1e-15);
    }

    #[test]
    fn from_fn_matches_kraus() {
        let k = rand_matrix(3, 4);
        let a = SuperOperator::from_kraus(&[k.clone()]).unwrap();
        let b = SuperOperator::from_fn(3, |x| &k * x * k.adjoint());
        assert!(a.frobenius_distance(&b) < 1e-13);
    }

    #[test]
    fn linearity() {
        let s = SuperOperator::new(2, rand_matrix(4, 7)).unwrap();
        let (a, b) = (rand_matrix(2, 8), rand_matrix(2, 9));
        let (x, y) = (C64::new(0.3, -1.2), C64::new(-0.7, 0.4));
        let lhs = s.apply(&(&a * x + &b * y)).unwrap();
        let rhs = s.apply(&a).unwrap() * x + s.apply(&b).unwrap() * y;
        assert!(max_abs(&(lhs - rhs)) < 1e-13);
    }

    #[test]
    fn choi_of_identity() {
        let j = SuperOperator::identity(3).to_choi();
        assert!((j.trace() - 3.0).abs() < 1e-15);
        // sum_ij |ii><jj|
        for i in 0..3 {
            for jj in 0..3 {
                assert_eq!(j.matrix[(i * 3 + i, jj * 3 + jj)], C64::new(1.0, 0.0));
            }
        }
        assert_eq!(j.matrix.iter().filter(|z| z.norm() > 0.0).count(), 9);
    }

    #[test]
    fn choi_of_transpose_is_swap() {
        let j = SuperOperator::transpose_map(2).to_choi();
        let swap = real_matrix(
            4,
            4,
            &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
        );
        assert_eq!(j.matrix, swap);
    }

    #[test]
    fn choi_roundtrip() {
        for seed in 0..5 {
            let s = SuperOperator::new(3, rand_matrix(9, seed)).unwrap();
            let back = SuperOperator::from_choi(&s.to_choi());
            assert!(max_abs(&(back.transfer() - s.transfer())) <= 1e-13);
        }
    }

    #[test]
    fn choi_marginal_of_trace_preserving_map() {
        let g = 0.3_f64;
        let k0 = real_matrix(2, 2, &[1.0, 0.0, 0.0, (1.0 - g).sqrt()]);
        let k1 = sigma_minus().scale(g.sqrt());
        let s = SuperOperator::from_kraus(&[k0, k1]).unwrap();
        assert!(max_abs(&(s.to_choi().input_marginal() - identity(2))) < 1e-15);
        assert!(s.trace_preservation_defect() < 1e-15);
    }

    #[test]
    fn embed_left_multiplication_on_first_site() {
        let lattice = Lattice::new(2, 2).unwrap();
        let e = embed_local(&SuperOperator::left_mul(&pauli_x()), &[0], &lattice).unwrap();
        let expected = SuperOperator::left_mul(&kron(&pauli_x(), &identity(2)));
        assert!(e.frobenius_distance(&expected) < 1e-15);
        let e1 = embed_local(&SuperOperator::left_mul(&pauli_x()), &[1], &lattice).unwrap();
        let expected1 = SuperOperator::left_mul(&kron(&identity(2), &pauli_x()));
        assert!(e1.frobenius_distance(&expected1) < 1e-15);
    }

    #[test]
    fn apply_local_matches_embedding() {
        let lattice = Lattice::new(3, 2).unwrap();
        let s = SuperOperator::new(4, rand_matrix(16, 11)).unwrap();
        let rho = rand_matrix(8, 12);
        for support in [vec![0, 1], vec![2, 0], vec![1, 2]] {
            let direct = apply_local(&s, &support, &lattice, &rho).unwrap();
            let embedded = embed_local(&s, &support, &lattice).unwrap().apply(&rho).unwrap();
            assert!(max_abs(&(direct - embedded)) < 1e-13);
        }
    }

    #[test]
    fn embed_identity_is_identity() {
        let lattice = Lattice::new(3, 2).unwrap();
        let e = embed_local(&SuperOperator::identity(4), &[2, 0], &lattice).unwrap();
        assert_eq!(e, SuperOperator::identity(8));
    }

    #[test]
    fn embed_matches_tensor_loop_oracle() {
        // Oracle: contract the local transfer against the 3-qubit tensor index by index.
        let lattice = Lattice::new(3, 2).unwrap();
        let support = [2usize, 0];
        let local = SuperOperator::new(4, rand_matrix(16, 21)).unwrap();
        let rho = rand_matrix(8, 22);
        let got = embed_local(&local, &support, &lattice).unwrap().apply(&rho).unwrap();

        let bit = |g: usize, site: usize| (g >> (2 - site)) & 1;
        let mut expected = zeros(8, 8);
        for r in 0..8 {
            for cidx in 0..8 {
                for r2 in 0..8 {
                    for c2 in 0..8 {
                        // untouched site 1 must agree
                        if bit(r, 1) != bit(r2, 1) || bit(cidx, 1) != bit(c2, 1) {
                            continue;
                        }
                        let lr = bit(r, 2) * 2 + bit(r, 0);
                        let lc = bit(cidx, 2) * 2 + bit(cidx, 0);
                        let lr2 = bit(r2, 2) * 2 + bit(r2, 0);
                        let lc2 = bit(c2, 2) * 2 + bit(c2, 0);
                        expected[(r, cidx)] += local.transfer()[(lc * 4 + lr, lc2 * 4 + lr2)] * rho[(r2, c2)];
                    }
                }
            }
        }
        assert!(max_abs(&(got - expected)) < 1e-13);
    }

    #[test]
    fn disjoint_embeddings_commute() {
        let lattice = Lattice::new(3, 2).unwrap();
        let a = embed_local(&SuperOperator::new(2, rand_matrix(4, 31)).unwrap(), &[0], &lattice).unwrap();
        let b = embed_local(&SuperOperator::new(4, rand_matrix(16, 32)).unwrap(), &[1, 2], &lattice).unwrap();
        let ab = a.compose(&b).unwrap();
        let ba = b.compose(&a).unwrap();
        assert!(max_abs(&(ab.transfer() - ba.transfer())) <= 1e-13);
    }

    #[test]
    fn embed_operator_matches_kron() {
        let lattice = Lattice::new(3, 2).unwrap();
        let a = rand_matrix(2, 40);
        let e = embed_operator(&a, &[1], &lattice).unwrap();
        let expected = kron(&kron(&identity(2), &a), &identity(2));
        assert!(max_abs(&(e - expected)) < 1e-15);
    }

    #[test]
    fn embed_rejects_bad_support() {
        let lattice = Lattice::new(2, 2).unwrap();
        assert!(embed_local(&SuperOperator::identity(2), &[2], &lattice).is_err());
        assert!(embed_local(&SuperOperator::identity(4), &[0, 0], &lattice).is_err());
        assert!(embed_local(&SuperOperator::identity(2), &[0, 1], &lattice).is_err());
    }
}
