//! First-order product formula over local slice propagators and its error bounds.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::divisibility::DivisibilityProfile;
use crate::error::{Error, Result};
use crate::liouvillian::{GeneratorSource, KLocalLiouvillian, Lattice, TermSubset};
use crate::propagator::{evolve, global_propagator, slice_grid, SliceGrid};
use crate::tensor::{embed_local, one_to_one_norm, NormEffort, NormEstimate, SuperOperator};

/// Term order inside a slice, recorded in reports.
pub const PRODUCT_ORDER: &str = "ascending term index within a slice; slice 1 and term 1 act first";

/// `prod_j prod_i T^j_i` embedded in the full space.
pub fn slt_product(grid: &SliceGrid, lattice: &Lattice) -> Result<SuperOperator> {
    let dim = lattice.dim();
    let mut acc = SuperOperator::identity(dim);
    for j in 0..grid.m {
        for slice in slice_factors(grid, lattice, j)? {
            acc = slice.compose(&acc)?;
        }
    }
    Ok(acc)
}

/// `prod_i T^j_i` for zero-based slice `j`.
pub fn slice_product(grid: &SliceGrid, lattice: &Lattice, j: usize) -> Result<SuperOperator> {
    let mut acc = SuperOperator::identity(lattice.dim());
    for f in slice_factors(grid, lattice, j)? {
        acc = f.compose(&acc)?;
    }
    Ok(acc)
}

fn slice_factors(grid: &SliceGrid, lattice: &Lattice, j: usize) -> Result<Vec<SuperOperator>> {
    (0..grid.terms()).map(|i| embed_local(grid.get(i, j), &grid.supports[i], lattice)).collect()
}

/// Arguments of the product-formula error bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub k_terms: usize,
    pub beta: f64,
    pub t: f64,
    pub m: usize,
    pub n_tilde: usize,
    pub n_hat: usize,
    pub t_id: f64,
    pub c_tilde: usize,
}

impl BoundInputs {
    /// Inputs of a locally divisible model.
    pub fn divisible(k_terms: usize, beta: f64, t: f64, m: usize) -> Self {
        Self { k_terms, beta, t, m, n_tilde: 0, n_hat: 0, t_id: 0.0, c_tilde: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.k_terms >= 1
            && self.m >= 1
            && self.beta >= 0.0
            && self.t >= 0.0
            && self.n_tilde <= self.m
            && self.n_hat <= self.k_terms
            && self.t_id >= 0.0
            && self.t_id <= self.t * (1.0 + 1e-12)
            && self.c_tilde % 2 == 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("inconsistent bound inputs {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundForm {
    /// In terms of the measured counts `N~^m`, `N^^m`.
    Measured,
    /// In terms of `t^ID` and `C~`.
    Tid,
}

/// Upper bound on `||T_L(t,0) - prod prod T^j_i||_{1->1}`.
pub fn theorem1_bound(inp: &BoundInputs, form: BoundForm) -> f64 {
    let k = inp.k_terms as f64;
    let m = inp.m as f64;
    let bt = inp.beta * inp.t;
    let prefactor = k * k * bt * bt / m;
    if prefactor == 0.0 {
        return 0.0;
    }
    match form {
        BoundForm::Measured => {
            let n = inp.n_tilde as f64;
            let exponent = 3.0 + k * (2.0 + n) + k * m.min(k * n) + inp.n_hat as f64;
            prefactor * (exponent * bt / m).exp()
        }
        BoundForm::Tid => {
            let c = inp.c_tilde as f64;
            let exponent = 3.0 + (3.0 + c) * k + c * k * k;
            prefactor * (exponent * bt / m).exp() * ((k + k * k) * inp.t_id * inp.beta).exp()
        }
    }
}

/// Which coefficient the step-count formula uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CorollaryMode {
    /// `m >= 2 K beta^2 t^2 e^X / eps`, taken verbatim.
    Literal,
    /// `m >= 2 K^2 beta^2 t^2 e^X / eps`, which closes the substitution into the bound.
    #[default]
    Validated,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorollaryStep {
    pub m: u64,
    /// The unrounded right-hand side.
    pub m_real: f64,
    /// Whether `eps` lies in the admissible range.
    pub admissible: bool,
    pub epsilon_max: f64,
    pub mode: CorollaryMode,
}

/// Step count that guarantees a Trotter error of at most `eps`.
pub fn corollary1_m(
    eps: f64,
    k_terms: usize,
    beta: f64,
    t: f64,
    t_id: f64,
    c_tilde: usize,
    mode: CorollaryMode,
) -> Result<CorollaryStep> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon {eps} must be positive")));
    }
    let k = k_terms as f64;
    let c = c_tilde as f64;
    let growth = ((k + k * k) * t_id * beta).exp();
    let exponent = 3.0 + (3.0 + c) * k + c * k * k;
    let epsilon_max = 2.0 * k * k * beta * t * std::f64::consts::LN_2 * growth / exponent;
    if beta * t == 0.0 {
        return Ok(CorollaryStep { m: 1, m_real: 0.0, admissible: true, epsilon_max, mode });
    }
    let coefficient = match mode {
        CorollaryMode::Literal => k,
        CorollaryMode::Validated => k * k,
    };
    let m_real = 2.0 * coefficient * beta * beta * t * t * growth / eps;
    let m = if m_real >= u64::MAX as f64 { u64::MAX } else { (m_real.ceil() as u64).max(1) };
    Ok(CorollaryStep { m, m_real, admissible: eps <= epsilon_max, epsilon_max, mode })
}

/// `||T_L(t, 0) - prod prod T^j_i||_{1->1}` with slices from the instantaneous grid.
pub fn empirical_slt_error(model: &KLocalLiouvillian, t: f64, m: usize, tol: f64, effort: &NormEffort) -> Result<NormEstimate> {
    let exact = global_propagator(model, 0.0, t, tol)?;
    let grid = slice_grid(model, t, m, false, tol)?;
    let product = slt_product(&grid, model.lattice())?;
    Ok(one_to_one_norm(&(&exact - &product), effort))
}

/// One row of an `m` sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub m: usize,
    pub empirical_lower: f64,
    pub empirical_upper: f64,
    pub bound_measured: f64,
    pub bound_tid: f64,
}

/// Empirical error and both bound forms for each `m`.
///
/// `beta`, `t_id` and `c_tilde` are shared by every row; `N~^m` and `N^^m`
/// are measured on each grid.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    model: &KLocalLiouvillian,
    t: f64,
    ms: &[usize],
    beta: f64,
    t_id: f64,
    c_tilde: usize,
    tol: f64,
    effort: &NormEffort,
) -> Result<Vec<SweepRow>> {
    let exact = global_propagator(model, 0.0, t, tol)?;
    ms.par_iter()
        .map(|&m| {
            let grid = slice_grid(model, t, m, false, tol)?;
            let profile = crate::divisibility::profile(&grid, crate::divisibility::CHANNEL_TOL);
            let product = slt_product(&grid, model.lattice())?;
            let err = one_to_one_norm(&(&exact - &product), effort);
            let inputs = BoundInputs {
                k_terms: model.term_count(),
                beta,
                t,
                m,
                n_tilde: profile.n_tilde,
                n_hat: profile.n_hat,
                t_id: t_id.min(t),
                c_tilde,
            };
            Ok(SweepRow {
                m,
                empirical_lower: err.lower,
                empirical_upper: err.upper,
                bound_measured: theorem1_bound(&inputs, BoundForm::Measured),
                bound_tid: theorem1_bound(&inputs, BoundForm::Tid),
            })
        })
        .collect()
}

/// Bound inputs for a measured profile.
pub fn bound_inputs(model: &KLocalLiouvillian, t: f64, profile: &DivisibilityProfile, beta: f64, t_id: f64, c_tilde: usize) -> BoundInputs {
    BoundInputs {
        k_terms: model.term_count(),
        beta,
        t,
        m: profile.m,
        n_tilde: profile.n_tilde,
        n_hat: profile.n_hat,
        t_id,
        c_tilde,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma4Check {
    pub s: f64,
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub commutator_sup: f64,
    pub sup_first: f64,
    pub sup_second: f64,
    pub holds: bool,
}

/// Checks `||T_{K+L} - T_K T_L|| <= (t-s)^2/2 sup||[K(u), L(r)]|| e^{(t-s)(3 sup||K|| + 2 sup||L||)}`
/// where `K` and `L` are sums of the given term subsets and the suprema are
/// sampled on `grid` points of `[s, t]`.
#[allow(clippy::too_many_arguments)]
pub fn lemma4_check(
    model: &KLocalLiouvillian,
    first: &[usize],
    second: &[usize],
    s: f64,
    t: f64,
    grid: usize,
    tol: f64,
    effort: &NormEffort,
) -> Result<Lemma4Check> {
    let kk = TermSubset { model, indices: first.to_vec() };
    let ll = TermSubset { model, indices: second.to_vec() };
    let both = TermSubset { model, indices: first.iter().chain(second).copied().collect() };
    let t_sum = evolve(&both, s, t, tol)?;
    let t_k = evolve(&kk, s, t, tol)?;
    let t_l = evolve(&ll, s, t, tol)?;
    let lhs = one_to_one_norm(&(&t_sum - &t_k.compose(&t_l)?), effort).lower;

    let grid = grid.max(2);
    let times: Vec<f64> = (0..grid).map(|q| s + (t - s) * q as f64 / (grid - 1) as f64).collect();
    let k_at: Vec<SuperOperator> = times.iter().map(|&u| kk.generator_at(u)).collect();
    let l_at: Vec<SuperOperator> = times.iter().map(|&u| ll.generator_at(u)).collect();
    let sup_first = k_at.iter().map(|g| one_to_one_norm(g, effort).lower).fold(0.0, f64::max);
    let sup_second = l_at.iter().map(|g| one_to_one_norm(g, effort).lower).fold(0.0, f64::max);
    let pairs: Vec<(usize, usize)> = (0..grid).flat_map(|r| (0..=r).map(move |u| (u, r))).collect();
    let commutator_sup = pairs
        .par_iter()
        .map(|&(u, r)| one_to_one_norm(&k_at[u].commutator(&l_at[r]).expect("same dimension"), effort).lower)
        .reduce(|| 0.0, f64::max);
    let h = t - s;
    let rhs = 0.5 * h * h * commutator_sup * (h * (3.0 * sup_first + 2.0 * sup_second)).exp();
    Ok(Lemma4Check { s, t, lhs, rhs, commutator_sup, sup_first, sup_second, holds: lhs <= rhs + 10.0 * tol })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSup {
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

/// Quantities appearing in the proof of the Trotter bound, measured on a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppendixDiagnostics {
    pub m: usize,
    pub dt: f64,
    /// `P^alpha_1` for `alpha = 0..=m`.
    pub p1: Vec<f64>,
    /// `P^alpha_2` for `alpha = 1..=m`.
    pub p2: Vec<f64>,
    /// `||T_L(t,0) - prod prod T^j_i||`.
    pub xi: f64,
    /// Per-slice `||T^j_L - prod_i T^j_i||`.
    pub chi: Vec<f64>,
    /// Right-hand side of the telescoping bound on `xi`.
    pub telescoping_bound: f64,
    /// `e^{[min(K N~, m) + N~] K beta dt}`.
    pub envelope: f64,
    /// `sup ||[L_i(u), L_j(r)]||` over sampled times, for `i < j`.
    pub commutator_sup: Vec<PairSup>,
    /// Per-slice `max_phi ||T^j_{L_1+..+L_phi} - T^j_phi T^j_{L_1+..+L_{phi-1}}||`.
    pub nested_defect: Vec<f64>,
    /// `K beta^2 dt^2 e^{(3 + 2K) beta dt}`.
    pub nested_bound: f64,
}

/// Measures the proof quantities of the Trotter bound on a small model.
pub fn appendix_diagnostics(
    model: &KLocalLiouvillian,
    grid: &SliceGrid,
    profile: &DivisibilityProfile,
    beta: f64,
    tol: f64,
    commutator_grid: usize,
    effort: &NormEffort,
) -> Result<AppendixDiagnostics> {
    let lattice = model.lattice();
    let m = grid.m;
    let dt = grid.dt();
    let k_terms = model.term_count();
    let norm = |s: &SuperOperator| one_to_one_norm(s, effort).lower;

    let slices: Vec<SuperOperator> = (0..m).map(|j| slice_product(grid, lattice, j)).collect::<Result<_>>()?;
    let exact: Vec<SuperOperator> = (0..m)
        .into_par_iter()
        .map(|j| global_propagator(model, j as f64 * dt, (j + 1) as f64 * dt, tol / m as f64))
        .collect::<Result<_>>()?;

    let mut partial = SuperOperator::identity(lattice.dim());
    let mut partials = vec![partial.clone()];
    for s in &slices {
        partial = s.compose(&partial)?;
        partials.push(partial.clone());
    }
    let p1: Vec<f64> = std::iter::once(1.0).chain(partials[1..].par_iter().map(norm).collect::<Vec<_>>()).collect();
    let p2: Vec<f64> = exact.par_iter().map(norm).collect();
    let chi: Vec<f64> = exact.par_iter().zip(&slices).map(|(e, s)| norm(&(e - s))).collect();

    let mut full = SuperOperator::identity(lattice.dim());
    for e in &exact {
        full = e.compose(&full)?;
    }
    let xi = norm(&(&full - &partial));
    // sum_{j=0}^{m-1} (prod_{l=j+2}^m P^l_2) P^j_1
    let telescoping_sum: f64 = (0..m).map(|j| p2[(j + 1).min(m)..].iter().product::<f64>() * p1[j]).sum();
    let telescoping_bound = telescoping_sum * chi.iter().copied().fold(0.0, f64::max);

    let k = k_terms as f64;
    let n = profile.n_tilde as f64;
    let envelope = ((k * n).min(m as f64) + n) * k * beta * dt;

    let times: Vec<f64> = (0..commutator_grid.max(2))
        .map(|q| grid.t * q as f64 / (commutator_grid.max(2) - 1) as f64)
        .collect();
    let mut commutator_sup = Vec::new();
    for i in 0..k_terms {
        for j in i + 1..k_terms {
            let gi: Vec<SuperOperator> =
                times.iter().map(|&u| model.embedded_generator_at(i, u)).collect::<Result<_>>()?;
            let gj: Vec<SuperOperator> =
                times.iter().map(|&u| model.embedded_generator_at(j, u)).collect::<Result<_>>()?;
            let value = (0..times.len())
                .flat_map(|a| (0..times.len()).map(move |b| (a, b)))
                .collect::<Vec<_>>()
                .par_iter()
                .map(|&(a, b)| norm(&gi[a].commutator(&gj[b]).expect("same dimension")))
                .reduce(|| 0.0, f64::max);
            commutator_sup.push(PairSup { i, j, value });
        }
    }

    let nested_defect: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|j| -> Result<f64> {
            let (a, b) = (j as f64 * dt, (j + 1) as f64 * dt);
            let mut worst = 0.0_f64;
            for phi in 1..k_terms {
                let upto = TermSubset { model, indices: (0..=phi).collect() };
                let before = TermSubset { model, indices: (0..phi).collect() };
                let lhs = evolve(&upto, a, b, tol / m as f64)?;
                let single = embed_local(grid.get(phi, j), &grid.supports[phi], lattice)?;
                let rhs = single.compose(&evolve(&before, a, b, tol / m as f64)?)?;
                worst = worst.max(norm(&(&lhs - &rhs)));
            }
            Ok(worst)
        })
        .collect::<Result<_>>()?;
    let nested_bound = k * beta * beta * dt * dt * ((3.0 + 2.0 * k) * beta * dt).exp();

    Ok(AppendixDiagnostics {
        m,
        dt,
        p1,
        p2,
        xi,
        chi,
        telescoping_bound,
        envelope: envelope.exp(),
        commutator_sup,
        nested_defect,
        nested_bound,
    })
}
