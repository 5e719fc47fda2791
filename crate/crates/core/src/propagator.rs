//! Time-ordered propagators `T(t, s)` of time-local generators.
//!
//! Each step is an exponential of the generator at the step midpoint. The
//! scheme is symmetric, so its error expands in even powers of the step and
//! Richardson extrapolation in `h^2` converges quickly. Every extrapolant is
//! an affine combination of trace-preserving maps and stays trace-preserving.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::liouvillian::{GeneratorSource, KLocalLiouvillian};
use crate::tensor::{expm, is_hermitian, ComplexMatrix, SuperOperator, C64, HERMITICITY_TOL};

/// Default integrator tolerance for slice grids.
pub const DEFAULT_TOL: f64 = 1e-10;

const MAX_LEVEL: usize = 6;
const MAX_BISECTIONS: usize = 24;

/// `n` exponential-midpoint steps from `s` to `t`.
pub fn exponential_midpoint(gen: &(impl GeneratorSource + ?Sized), s: f64, t: f64, steps: usize) -> SuperOperator {
    let h = (t - s) / steps as f64;
    let mut acc = SuperOperator::identity(gen.dim());
    for k in 0..steps {
        let mid = s + (k as f64 + 0.5) * h;
        let step = expm(&gen.generator_at(mid).into_transfer().scale(h));
        acc = SuperOperator::new(gen.dim(), step * acc.transfer()).expect("step preserves dimension");
    }
    acc
}

/// Propagator `T(t, s)` with Frobenius accuracy about `tol`.
pub fn evolve(gen: &(impl GeneratorSource + ?Sized), s: f64, t: f64, tol: f64) -> Result<SuperOperator> {
    if !(s.is_finite() && t.is_finite() && s <= t) {
        return Err(Error::InvalidArgument(format!("propagator interval [{s}, {t}] is not ordered")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("integrator tolerance {tol} must be positive")));
    }
    if s == t {
        return Ok(SuperOperator::identity(gen.dim()));
    }
    if gen.is_time_independent() {
        let g = gen.generator_at(s).into_transfer().scale(t - s);
        return SuperOperator::new(gen.dim(), expm(&g));
    }
    let mut cuts = vec![s];
    let mut inner: Vec<f64> = gen.breakpoints().into_iter().filter(|&x| x > s && x < t).collect();
    inner.sort_by(f64::total_cmp);
    inner.dedup();
    cuts.extend(inner);
    cuts.push(t);

    let mut acc = SuperOperator::identity(gen.dim());
    for w in cuts.windows(2) {
        let share = tol * (w[1] - w[0]) / (t - s);
        let piece = evolve_smooth(gen, w[0], w[1], share, MAX_BISECTIONS)?;
        acc = piece.compose(&acc)?;
    }
    Ok(acc)
}

fn evolve_smooth(gen: &(impl GeneratorSource + ?Sized), a: f64, b: f64, tol: f64, depth: usize) -> Result<SuperOperator> {
    let dim = gen.dim();
    let mut table: Vec<ComplexMatrix> = Vec::with_capacity(MAX_LEVEL + 1);
    for level in 0..=MAX_LEVEL {
        let mut row = vec![exponential_midpoint(gen, a, b, 1 << level).into_transfer()];
        for l in 1..=level {
            let factor = 4f64.powi(l as i32) - 1.0;
            let next = &row[l - 1] + (&row[l - 1] - &table[l - 1]) / C64::new(factor, 0.0);
            row.push(next);
        }
        if level >= 2 && (&row[level] - &table[level - 1]).norm() < tol {
            return SuperOperator::new(dim, row.pop().expect("row is non-empty"));
        }
        table = row;
    }
    if depth == 0 {
        return Err(Error::IntegratorNonConvergence { s: a, t: b });
    }
    let mid = 0.5 * (a + b);
    let first = evolve_smooth(gen, a, mid, 0.5 * tol, depth - 1)?;
    let second = evolve_smooth(gen, mid, b, 0.5 * tol, depth - 1)?;
    second.compose(&first)
}

/// Global propagator `T_L(t, s)` of a model.
pub fn global_propagator(model: &KLocalLiouvillian, s: f64, t: f64, tol: f64) -> Result<SuperOperator> {
    model.check_time(s)?;
    model.check_time(t)?;
    evolve(model, s, t, tol)
}

/// Local slice propagators `T^j_i` on each term's support space.
#[derive(Clone, Debug)]
pub struct SliceGrid {
    pub t: f64,
    pub m: usize,
    pub averaged: bool,
    pub supports: Vec<Vec<usize>>,
    /// `entries[i][j]` for term `i` and zero-based slice `j`.
    pub entries: Vec<Vec<SuperOperator>>,
}

impl SliceGrid {
    pub fn dt(&self) -> f64 {
        self.t / self.m as f64
    }

    pub fn terms(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, i: usize, j: usize) -> &SuperOperator {
        &self.entries[i][j]
    }
}

/// Computes `T^j_i` for all `K m` pairs. In averaged mode each entry is
/// `exp(dt * averaged generator)`.
pub fn slice_grid(model: &KLocalLiouvillian, t: f64, m: usize, averaged: bool, tol: f64) -> Result<SliceGrid> {
    if m == 0 {
        return Err(Error::InvalidArgument("slice count must be at least 1".into()));
    }
    model.check_time(t)?;
    let dt = t / m as f64;
    let entries = model
        .terms()
        .par_iter()
        .enumerate()
        .map(|(i, term)| -> Result<Vec<SuperOperator>> {
            if term.is_time_independent() {
                let one = SuperOperator::new(term.dim(), expm(&term.generator_at(0.0).into_transfer().scale(dt)))?;
                return Ok(vec![one; m]);
            }
            (0..m)
                .into_par_iter()
                .map(|j| {
                    let (a, b) = (j as f64 * dt, (j + 1) as f64 * dt);
                    if averaged {
                        let avg = model.averaged_generator(i, j + 1, m, t)?;
                        SuperOperator::new(term.dim(), expm(&avg.into_transfer().scale(dt)))
                    } else {
                        evolve(term, a, b, tol / m as f64)
                    }
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SliceGrid {
        t,
        m,
        averaged,
        supports: model.terms().iter().map(|term| term.support().to_vec()).collect(),
        entries,
    })
}

/// `rho(t)` from the global propagator of the model.
pub fn reference_state_evolution(model: &KLocalLiouvillian, rho0: &ComplexMatrix, t: f64, tol: f64) -> Result<ComplexMatrix> {
    check_density(rho0, model.dim())?;
    global_propagator(model, 0.0, t, tol)?.apply(rho0)
}

pub(crate) fn check_density(rho: &ComplexMatrix, dim: usize) -> Result<()> {
    if rho.nrows() != dim || rho.ncols() != dim {
        return Err(Error::DimensionMismatch(format!(
            "state is {}x{}, model dimension is {dim}",
            rho.nrows(),
            rho.ncols()
        )));
    }
    if !is_hermitian(rho, HERMITICITY_TOL) {
        return Err(Error::NotHermitian { deviation: crate::tensor::hermiticity_defect(rho) });
    }
    let tr = rho.trace();
    if (tr.re - 1.0).abs() > 1e-9 || tr.im.abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("state trace {tr} differs from 1")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liouvillian::{gksl_generator, FnGenerator, Lattice, LocalTerm, TimeFunction};
    use crate::tensor::{basis_op, identity, max_abs, pauli_x, pauli_z, real_matrix, sigma_minus, zeros};

    fn damping_model(rate: f64, horizon: f64) -> KLocalLiouvillian {
        let term = LocalTerm::gksl_static(vec![0], zeros(2, 2), vec![(sigma_minus(), TimeFunction::constant(rate))]).unwrap();
        KLocalLiouvillian::new(Lattice::new(1, 2).unwrap(), 1, vec![term], horizon).unwrap()
    }

    #[test]
    fn zero_generator_gives_identity() {
        let g = FnGenerator { dim: 2, f: |_| SuperOperator::zero(2), breakpoints: vec![], time_independent: false };
        let p = evolve(&g, 0.0, 1.0, 1e-10).unwrap();
        assert!(max_abs(&(p.transfer() - identity(4))) < 1e-15);
    }

    #[test]
    fn amplitude_damping_decays_excited_population() {
        let model = damping_model(1.0, 1.0);
        let rho = reference_state_evolution(&model, &basis_op(2, 1, 1), 1.0, 1e-10).unwrap();
        assert!((rho[(1, 1)].re - (-1.0f64).exp()).abs() < 1e-12);
        assert!((rho.trace().re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn time_dependent_dephasing_matches_closed_form() {
        // coherence decays as exp(-2 * integral of the rate)
        let g = FnGenerator {
            dim: 2,
            f: |s: f64| gksl_generator(&pauli_x().scale(0.0), &[(pauli_z(), s.cos())]),
            breakpoints: vec![],
            time_independent: false,
        };
        let t = 2.5_f64;
        let p = evolve(&g, 0.0, t, 1e-11).unwrap();
        let out = p.apply(&basis_op(2, 0, 1)).unwrap();
        assert!((out[(0, 1)].re - (-2.0 * t.sin()).exp()).abs() < 1e-10);
    }

    #[test]
    fn breakpoints_are_respected() {
        let rate = TimeFunction::Piecewise {
            breaks: vec![0.37],
            pieces: vec![TimeFunction::constant(1.0), TimeFunction::constant(-0.5)],
        };
        let term = LocalTerm::gksl_static(vec![0], zeros(2, 2), vec![(pauli_z(), rate)]).unwrap();
        let p = evolve(&term, 0.0, 1.0, 1e-10).unwrap();
        let out = p.apply(&basis_op(2, 0, 1)).unwrap();
        let integral: f64 = 0.37 - 0.5 * 0.63;
        assert!((out[(0, 1)].re - (-2.0 * integral).exp()).abs() < 1e-12);
    }

    #[test]
    fn midpoint_refinement_is_second_order() {
        let g = FnGenerator {
            dim: 2,
            f: |s: f64| gksl_generator(&pauli_x().scale(s), &[(sigma_minus(), 1.0 + 0.5 * s.sin())]),
            breakpoints: vec![],
            time_independent: false,
        };
        let exact = evolve(&g, 0.0, 1.0, 1e-12).unwrap();
        let e4 = exponential_midpoint(&g, 0.0, 1.0, 4).frobenius_distance(&exact);
        let e8 = exponential_midpoint(&g, 0.0, 1.0, 8).frobenius_distance(&exact);
        assert!(e4 / e8 > 3.0, "ratio {}", e4 / e8);
    }

    #[test]
    fn slice_grid_single_slice_matches_evolve() {
        let rate = TimeFunction::Sinusoid { amp: 1.0, freq: 2.0, phase: 0.3 };
        let term = LocalTerm::gksl_static(vec![0], pauli_x(), vec![(sigma_minus(), rate)]).unwrap();
        let model = KLocalLiouvillian::new(Lattice::new(1, 2).unwrap(), 1, vec![term.clone()], 1.0).unwrap();
        let grid = slice_grid(&model, 1.0, 1, false, 1e-10).unwrap();
        let direct = evolve(&term, 0.0, 1.0, 1e-10).unwrap();
        assert!(grid.get(0, 0).frobenius_distance(&direct) < 1e-12);
    }

    #[test]
    fn constant_model_grids_agree() {
        let model = damping_model(0.7, 2.0);
        let a = slice_grid(&model, 2.0, 5, false, 1e-10).unwrap();
        let b = slice_grid(&model, 2.0, 5, true, 1e-10).unwrap();
        for j in 0..5 {
            assert!(a.get(0, j).frobenius_distance(b.get(0, j)) < 1e-12);
        }
    }

    #[test]
    fn slices_compose_to_full_propagator() {
        let rate = TimeFunction::Sinusoid { amp: 1.0, freq: 1.0, phase: 0.0 };
        let h = real_matrix(2, 2, &[0.3, 0.5, 0.5, -0.3]);
        let term = LocalTerm::gksl_static(vec![0], h, vec![(pauli_z(), rate)]).unwrap();
        let model = KLocalLiouvillian::new(Lattice::new(1, 2).unwrap(), 1, vec![term.clone()], 3.0).unwrap();
        let grid = slice_grid(&model, 3.0, 6, false, 1e-10).unwrap();
        let mut acc = SuperOperator::identity(2);
        for j in 0..6 {
            acc = grid.get(0, j).compose(&acc).unwrap();
            assert!(grid.get(0, j).trace_preservation_defect() < 1e-12);
        }
        let direct = evolve(&term, 0.0, 3.0, 1e-10).unwrap();
        assert!(acc.frobenius_distance(&direct) < 1e-9);
    }

    #[test]
    fn rejects_bad_intervals_and_states() {
        let model = damping_model(1.0, 1.0);
        assert!(evolve(&model, 1.0, 0.0, 1e-10).is_err());
        assert!(evolve(&model, 0.0, 1.0, 0.0).is_err());
        assert!(global_propagator(&model, 0.0, 2.0, 1e-10).is_err());
        assert!(reference_state_evolution(&model, &identity(2), 1.0, 1e-10).is_err());
        assert!(slice_grid(&model, 1.0, 0, false, 1e-10).is_err());
    }
}
