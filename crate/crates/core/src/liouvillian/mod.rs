//! k-local, time-local generators and the scalar inputs of the Trotter bound.

mod timefn;

pub use timefn::{TimeFunction, TimeOperator};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{
    embed_local, identity, is_hermitian, kron, max_abs, one_to_one_norm, spectral_norm, ComplexMatrix, NormEffort,
    SuperOperator, C64, HERMITICITY_TOL,
};

/// Largest global Hilbert-space dimension accepted by default.
pub const DEFAULT_DIM_CAP: usize = 64;

/// Relative tolerance of the slice-averaging quadrature.
pub const QUADRATURE_TOL: f64 = 1e-10;

const QUADRATURE_DEPTH: usize = 48;

/// `N` sites of local dimension `d`; site 0 is the most significant factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lattice {
    pub sites: usize,
    pub local_dim: usize,
}

impl Lattice {
    pub fn new(sites: usize, local_dim: usize) -> Result<Self> {
        Self::with_cap(sites, local_dim, DEFAULT_DIM_CAP)
    }

    pub fn with_cap(sites: usize, local_dim: usize, cap: usize) -> Result<Self> {
        if sites == 0 || local_dim < 2 {
            return Err(Error::InvalidModel(format!(
                "lattice needs at least one site and local dimension >= 2, got N = {sites}, d = {local_dim}"
            )));
        }
        let dim = (local_dim as u64).checked_pow(sites as u32).unwrap_or(u64::MAX);
        if dim > cap as u64 {
            return Err(Error::CapExceeded { what: "global dimension", value: dim, cap: cap as u64 });
        }
        Ok(Self { sites, local_dim })
    }

    pub fn dim(&self) -> usize {
        self.local_dim.pow(self.sites as u32)
    }
}

/// A Lindblad operator with its (possibly negative) rate.
#[derive(Clone, Debug, PartialEq)]
pub struct Dissipator {
    pub operator: TimeOperator,
    pub rate: TimeFunction,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TermForm {
    Gksl { hamiltonian: TimeOperator, channels: Vec<Dissipator> },
    /// `sum_k f_k(s) S_k` for arbitrary superoperators `S_k`.
    Raw { generator: Vec<(TimeFunction, SuperOperator)> },
}

/// One generator `L_i(s)` acting on the sites in `support`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalTerm {
    support: Vec<usize>,
    dim: usize,
    form: TermForm,
}

impl LocalTerm {
    pub fn new(support: Vec<usize>, form: TermForm) -> Result<Self> {
        let dim = match &form {
            TermForm::Gksl { hamiltonian, channels } => {
                let dim = hamiltonian.dim();
                for ch in channels {
                    ch.rate.validate()?;
                    if ch.operator.dim() != dim {
                        return Err(Error::DimensionMismatch(format!(
                            "Lindblad operator has dimension {} but the Hamiltonian has {dim}",
                            ch.operator.dim()
                        )));
                    }
                }
                dim
            }
            TermForm::Raw { generator } => {
                let dim = generator
                    .first()
                    .map(|(_, s)| s.dim())
                    .ok_or_else(|| Error::InvalidModel("raw generator has no parts".into()))?;
                for (f, s) in generator {
                    f.validate()?;
                    if s.dim() != dim {
                        return Err(Error::DimensionMismatch("raw generator parts differ in dimension".into()));
                    }
                }
                dim
            }
        };
        Ok(Self { support, dim, form })
    }

    /// Convenience constructor for static GKSL data.
    pub fn gksl_static(support: Vec<usize>, hamiltonian: ComplexMatrix, channels: Vec<(ComplexMatrix, TimeFunction)>) -> Result<Self> {
        let channels = channels
            .into_iter()
            .map(|(l, rate)| Dissipator { operator: TimeOperator::constant(l), rate })
            .collect();
        Self::new(support, TermForm::Gksl { hamiltonian: TimeOperator::constant(hamiltonian), channels })
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn form(&self) -> &TermForm {
        &self.form
    }

    pub fn is_gksl(&self) -> bool {
        matches!(self.form, TermForm::Gksl { .. })
    }

    pub fn lindblad_count(&self) -> usize {
        match &self.form {
            TermForm::Gksl { channels, .. } => channels.len(),
            TermForm::Raw { .. } => 0,
        }
    }

    /// Generator on the support space at time `s`.
    pub fn generator_at(&self, s: f64) -> SuperOperator {
        match &self.form {
            TermForm::Gksl { hamiltonian, channels } => {
                let ops: Vec<(ComplexMatrix, f64)> =
                    channels.iter().map(|ch| (ch.operator.at(s), ch.rate.eval(s))).collect();
                gksl_generator(&hamiltonian.at(s), &ops)
            }
            TermForm::Raw { generator } => {
                let mut out = SuperOperator::zero(self.dim);
                for (f, g) in generator {
                    out = &out + &g.scale(f.eval(s));
                }
                out
            }
        }
    }

    pub fn is_time_independent(&self) -> bool {
        match &self.form {
            TermForm::Gksl { hamiltonian, channels } => {
                hamiltonian.is_time_independent()
                    && channels.iter().all(|ch| ch.operator.is_time_independent() && ch.rate.is_constant())
            }
            TermForm::Raw { generator } => generator.iter().all(|(f, _)| f.is_constant()),
        }
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        match &self.form {
            TermForm::Gksl { hamiltonian, channels } => {
                let mut out = hamiltonian.breakpoints();
                for ch in channels {
                    out.extend(ch.operator.breakpoints());
                    out.extend(ch.rate.breakpoints());
                }
                out
            }
            TermForm::Raw { generator } => generator.iter().flat_map(|(f, _)| f.breakpoints()).collect(),
        }
    }
}

/// Transfer matrix of `-i[H, .] + sum_j g_j (L_j . L_j^dag - {L_j^dag L_j, .}/2)`.
pub fn gksl_generator(hamiltonian: &ComplexMatrix, channels: &[(ComplexMatrix, f64)]) -> SuperOperator {
    let d = hamiltonian.nrows();
    let id = identity(d);
    let minus_i = C64::new(0.0, -1.0);
    let mut t = (kron(&id, hamiltonian) - kron(&hamiltonian.transpose(), &id)) * minus_i;
    for (l, rate) in channels {
        if *rate == 0.0 {
            continue;
        }
        let ldl = l.adjoint() * l;
        let dissipator = kron(&l.map(|z| z.conj()), l) - (kron(&id, &ldl) + kron(&ldl.transpose(), &id)).scale(0.5);
        t += dissipator.scale(*rate);
    }
    SuperOperator::new(d, t).expect("GKSL transfer has side d^2")
}

/// A k-local Liouvillian `L(s) = sum_i L_i(s)` on `[0, horizon]`.
#[derive(Clone, Debug, PartialEq)]
pub struct KLocalLiouvillian {
    lattice: Lattice,
    k: usize,
    terms: Vec<LocalTerm>,
    horizon: f64,
}

impl KLocalLiouvillian {
    pub fn new(lattice: Lattice, k: usize, terms: Vec<LocalTerm>, horizon: f64) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidModel("a model needs at least one term".into()));
        }
        if k == 0 || k > lattice.sites {
            return Err(Error::InvalidModel(format!(
                "locality k = {k} must lie in [1, {}]",
                lattice.sites
            )));
        }
        if !(horizon.is_finite() && horizon >= 0.0) {
            return Err(Error::InvalidModel(format!("horizon {horizon} must be finite and nonnegative")));
        }
        let max_terms = (lattice.sites as u64).saturating_pow(k as u32);
        if terms.len() as u64 > max_terms {
            return Err(Error::InvalidModel(format!(
                "{} terms exceed N^k = {max_terms}",
                terms.len()
            )));
        }
        let max_lindblad = (lattice.local_dim as u64).saturating_pow(2 * k as u32);
        for (i, term) in terms.iter().enumerate() {
            let z = term.support();
            if z.is_empty() || z.len() > k {
                return Err(Error::InvalidModel(format!(
                    "term {i} has support {z:?}, size must lie in [1, {k}]"
                )));
            }
            for (a, &site) in z.iter().enumerate() {
                if site >= lattice.sites || z[..a].contains(&site) {
                    return Err(Error::InvalidModel(format!(
                        "term {i} support {z:?} is not a set of distinct sites below {}",
                        lattice.sites
                    )));
                }
            }
            let expected = lattice.local_dim.pow(z.len() as u32);
            if term.dim() != expected {
                return Err(Error::DimensionMismatch(format!(
                    "term {i} acts on dimension {} but its support needs {expected}",
                    term.dim()
                )));
            }
            if term.lindblad_count() as u64 > max_lindblad {
                return Err(Error::InvalidModel(format!(
                    "term {i} has {} Lindblad operators, more than d^(2k) = {max_lindblad}",
                    term.lindblad_count()
                )));
            }
        }
        Ok(Self { lattice, k, terms, horizon })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn terms(&self) -> &[LocalTerm] {
        &self.terms
    }

    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.lattice.dim()
    }

    pub fn check_time(&self, s: f64) -> Result<()> {
        let slack = 1e-12 * self.horizon.max(1.0);
        if s.is_finite() && s >= -slack && s <= self.horizon + slack {
            Ok(())
        } else {
            Err(Error::TimeOutOfDomain { time: s, horizon: self.horizon })
        }
    }

    /// Generator of term `i` on its support space.
    pub fn term_generator_at(&self, i: usize, s: f64) -> Result<SuperOperator> {
        self.check_time(s)?;
        Ok(self.terms[i].generator_at(s))
    }

    /// Generator of term `i` embedded in the full space.
    pub fn embedded_generator_at(&self, i: usize, s: f64) -> Result<SuperOperator> {
        let local = self.term_generator_at(i, s)?;
        embed_local(&local, self.terms[i].support(), &self.lattice)
    }

    /// `sum_i L_i(s)` on the full space.
    pub fn global_generator_at(&self, s: f64) -> Result<SuperOperator> {
        self.check_time(s)?;
        Ok(self.subset_generator(&(0..self.terms.len()).collect::<Vec<_>>(), s))
    }

    fn subset_generator(&self, indices: &[usize], s: f64) -> SuperOperator {
        let mut total = SuperOperator::zero(self.dim());
        for &i in indices {
            let term = &self.terms[i];
            let e = embed_local(&term.generator_at(s), term.support(), &self.lattice)
                .expect("supports validated at construction");
            total = &total + &e;
        }
        total
    }

    /// `(m/t) * integral of L_i` over slice `j` (one-based) of `[0, t]`.
    pub fn averaged_generator(&self, i: usize, j: usize, m: usize, t: f64) -> Result<SuperOperator> {
        if m == 0 || j == 0 || j > m {
            return Err(Error::InvalidArgument(format!("slice {j} of {m} does not exist")));
        }
        let a = t * (j - 1) as f64 / m as f64;
        let b = t * j as f64 / m as f64;
        self.check_time(b)?;
        average_generator(&self.terms[i], a, b)
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        self.terms.iter().flat_map(|t| t.breakpoints()).collect()
    }

    pub fn is_time_independent(&self) -> bool {
        self.terms.iter().all(|t| t.is_time_independent())
    }
}

/// A time-dependent generator that can be integrated into a propagator.
pub trait GeneratorSource: Sync {
    fn dim(&self) -> usize;
    fn generator_at(&self, s: f64) -> SuperOperator;
    /// Times at which the generator may be discontinuous.
    fn breakpoints(&self) -> Vec<f64>;
    fn is_time_independent(&self) -> bool;
}

impl GeneratorSource for LocalTerm {
    fn dim(&self) -> usize {
        self.dim
    }

    fn generator_at(&self, s: f64) -> SuperOperator {
        LocalTerm::generator_at(self, s)
    }

    fn breakpoints(&self) -> Vec<f64> {
        LocalTerm::breakpoints(self)
    }

    fn is_time_independent(&self) -> bool {
        LocalTerm::is_time_independent(self)
    }
}

impl GeneratorSource for KLocalLiouvillian {
    fn dim(&self) -> usize {
        self.lattice.dim()
    }

    fn generator_at(&self, s: f64) -> SuperOperator {
        self.subset_generator(&(0..self.terms.len()).collect::<Vec<_>>(), s)
    }

    fn breakpoints(&self) -> Vec<f64> {
        KLocalLiouvillian::breakpoints(self)
    }

    fn is_time_independent(&self) -> bool {
        KLocalLiouvillian::is_time_independent(self)
    }
}

/// The sum of a subset of a model's terms, embedded in the full space.
pub struct TermSubset<'a> {
    pub model: &'a KLocalLiouvillian,
    pub indices: Vec<usize>,
}

impl GeneratorSource for TermSubset<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn generator_at(&self, s: f64) -> SuperOperator {
        self.model.subset_generator(&self.indices, s)
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.indices.iter().flat_map(|&i| self.model.terms[i].breakpoints()).collect()
    }

    fn is_time_independent(&self) -> bool {
        self.indices.iter().all(|&i| self.model.terms[i].is_time_independent())
    }
}

/// A generator given by a closure.
pub struct FnGenerator<F> {
    pub dim: usize,
    pub f: F,
    pub breakpoints: Vec<f64>,
    pub time_independent: bool,
}

impl<F: Fn(f64) -> SuperOperator + Sync> GeneratorSource for FnGenerator<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn generator_at(&self, s: f64) -> SuperOperator {
        (self.f)(s)
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.breakpoints.clone()
    }

    fn is_time_independent(&self) -> bool {
        self.time_independent
    }
}

/// Mean of the generator over `[a, b]` by adaptive Simpson quadrature,
/// split at the source's breakpoints.
pub fn average_generator(src: &(impl GeneratorSource + ?Sized), a: f64, b: f64) -> Result<SuperOperator> {
    if src.is_time_independent() || b <= a {
        return Ok(src.generator_at(a));
    }
    let mut cuts = vec![a];
    let mut inner: Vec<f64> = src.breakpoints().into_iter().filter(|&x| x > a && x < b).collect();
    inner.sort_by(f64::total_cmp);
    inner.dedup();
    cuts.extend(inner);
    cuts.push(b);

    let d = src.dim();
    let mut total = crate::tensor::zeros(d * d, d * d);
    for w in cuts.windows(2) {
        total += integrate(src, w[0], w[1])?;
    }
    SuperOperator::new(d, total / C64::new(b - a, 0.0))
}

fn integrate(src: &(impl GeneratorSource + ?Sized), a: f64, b: f64) -> Result<ComplexMatrix> {
    // evaluate just inside the interval so one-sided limits are used at jumps
    let nudge = (b - a) * 1e-13;
    let f = |s: f64| src.generator_at(s.clamp(a + nudge, b - nudge)).into_transfer();
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (&fa + &fm * C64::new(4.0, 0.0) + &fb) * C64::new((b - a) / 6.0, 0.0);
    let scale = whole.norm().max((b - a) * fa.norm().max(fm.norm()).max(fb.norm())).max(f64::MIN_POSITIVE);
    simpson(&f, a, b, fa, fm, fb, whole, QUADRATURE_TOL * scale, QUADRATURE_DEPTH)
        .ok_or(Error::QuadratureNonConvergence { a, b })
}

#[allow(clippy::too_many_arguments)]
fn simpson(
    f: &impl Fn(f64) -> ComplexMatrix,
    a: f64,
    b: f64,
    fa: ComplexMatrix,
    fm: ComplexMatrix,
    fb: ComplexMatrix,
    whole: ComplexMatrix,
    tol: f64,
    depth: usize,
) -> Option<ComplexMatrix> {
    let m = 0.5 * (a + b);
    let flm = f(0.5 * (a + m));
    let frm = f(0.5 * (m + b));
    let h = C64::new((m - a) / 6.0, 0.0);
    let four = C64::new(4.0, 0.0);
    let left = (&fa + &flm * four + &fm) * h;
    let right = (&fm + &frm * four + &fb) * h;
    let delta = &left + &right - &whole;
    if delta.norm() <= 15.0 * tol {
        return Some(left + right + delta / C64::new(15.0, 0.0));
    }
    if depth == 0 {
        return None;
    }
    let l = simpson(f, a, m, fa, flm, fm.clone(), left, 0.5 * tol, depth - 1)?;
    let r = simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?;
    Some(l + r)
}

/// Where the (1→1) norm of each term is evaluated for `beta`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BetaMode {
    /// On the support space of each term.
    LocalSpace,
    /// On the full space, identity-padded.
    #[default]
    FullSpace,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaReport {
    /// Largest lower estimate of `||L_i(s)||_{1->1}` over the grid.
    pub value: f64,
    /// Largest certified upper bound over the same grid.
    pub upper: f64,
    pub mode: BetaMode,
    pub grid: usize,
    pub argmax_time: f64,
    pub argmax_term: usize,
}

/// `sup_s max_i ||L_i(s)||_{1->1}` sampled on `grid` equispaced points of `[0, t]`.
pub fn beta(model: &KLocalLiouvillian, t: f64, mode: BetaMode, grid: usize, effort: &NormEffort) -> Result<BetaReport> {
    if grid < 2 {
        return Err(Error::InvalidArgument(format!("beta grid needs at least 2 points, got {grid}")));
    }
    model.check_time(t)?;
    let times: Vec<f64> = (0..grid).map(|k| t * k as f64 / (grid - 1) as f64).collect();
    let evaluate = |i: usize, s: f64| -> (f64, f64) {
        let term = &model.terms[i];
        let g = term.generator_at(s);
        let g = match mode {
            BetaMode::LocalSpace => g,
            BetaMode::FullSpace => {
                embed_local(&g, term.support(), &model.lattice).expect("supports validated at construction")
            }
        };
        let e = one_to_one_norm(&g, effort);
        (e.lower, e.upper)
    };
    let jobs: Vec<(usize, usize)> = (0..model.terms.len())
        .flat_map(|i| {
            let n = if model.terms[i].is_time_independent() { 1 } else { grid };
            (0..n).map(move |k| (i, k))
        })
        .collect();
    let values: Vec<(f64, f64)> = jobs.par_iter().map(|&(i, k)| evaluate(i, times[k])).collect();

    let mut report = BetaReport { value: 0.0, upper: 0.0, mode, grid, argmax_time: 0.0, argmax_term: 0 };
    for (&(i, k), &(lower, upper)) in jobs.iter().zip(&values) {
        if lower > report.value {
            report.value = lower;
            report.argmax_time = times[k];
            report.argmax_term = i;
        }
        report.upper = report.upper.max(upper);
    }
    Ok(report)
}

/// `sup_s max_{i,j} ||L_{i,j}(s)||_inf` on `grid` equispaced points of `[0, t]`.
pub fn beta_tilde(model: &KLocalLiouvillian, t: f64, grid: usize) -> Result<f64> {
    if grid < 2 {
        return Err(Error::InvalidArgument(format!("grid needs at least 2 points, got {grid}")));
    }
    model.check_time(t)?;
    let mut best = 0.0_f64;
    for (i, term) in model.terms.iter().enumerate() {
        let TermForm::Gksl { channels, .. } = term.form() else {
            return Err(Error::NotGksl(i));
        };
        for ch in channels {
            let n = if ch.operator.is_time_independent() { 1 } else { grid };
            for k in 0..n {
                let s = t * k as f64 / (grid - 1) as f64;
                best = best.max(spectral_norm(&ch.operator.at(s)));
            }
        }
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub term: Option<usize>,
    pub check: String,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub terms: usize,
    pub locality: usize,
    pub lindblad_counts: Vec<usize>,
    pub issues: Vec<ValidationIssue>,
}

/// Checks Hermiticity of every Hamiltonian and trace annihilation of every
/// raw generator at `grid` points of `[0, t_max]`.
pub fn validate_model(model: &KLocalLiouvillian, t_max: f64, grid: usize) -> ValidationReport {
    let mut issues = Vec::new();
    if !(t_max.is_finite() && t_max >= 0.0 && t_max <= model.horizon * (1.0 + 1e-12)) {
        issues.push(ValidationIssue {
            term: None,
            check: "horizon".into(),
            detail: format!("t = {t_max} outside the model domain [0, {}]", model.horizon),
        });
    }
    let t_max = t_max.clamp(0.0, model.horizon);
    let grid = grid.max(2);
    let times: Vec<f64> = (0..grid).map(|k| t_max * k as f64 / (grid - 1) as f64).collect();
    for (i, term) in model.terms.iter().enumerate() {
        match term.form() {
            TermForm::Gksl { hamiltonian, .. } => {
                if let Some(&s) = times.iter().find(|&&s| !is_hermitian(&hamiltonian.at(s), HERMITICITY_TOL)) {
                    issues.push(ValidationIssue {
                        term: Some(i),
                        check: "hamiltonian_hermitian".into(),
                        detail: format!("H(s) is not Hermitian at s = {s}"),
                    });
                }
            }
            TermForm::Raw { .. } => {
                let bad = times.iter().find(|&&s| {
                    let g = term.generator_at(s);
                    g.trace_annihilation_defect() > HERMITICITY_TOL * max_abs(g.transfer()).max(1.0)
                });
                if let Some(&s) = bad {
                    issues.push(ValidationIssue {
                        term: Some(i),
                        check: "trace_annihilation".into(),
                        detail: format!("tr(L(s)[A]) != 0 at s = {s}"),
                    });
                }
            }
        }
    }
    ValidationReport {
        passed: issues.is_empty(),
        terms: model.terms.len(),
        locality: model.k,
        lindblad_counts: model.terms.iter().map(|t| t.lindblad_count()).collect(),
        issues,
    }
}
