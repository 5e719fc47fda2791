//! Independent reference computations shared by the integration tests.
//!
//! Everything here works on plain index loops or textbook algorithms so the
//! library is checked against code that shares none of its tensor plumbing.

#![allow(dead_code)]

use std::f64::consts::PI;

use nmsim::liouvillian::{KLocalLiouvillian, Lattice, LocalTerm, TimeFunction};
use nmsim::tensor::{c, herm_eig, identity, pauli_x, pauli_y, pauli_z, sigma_minus, zeros, ComplexMatrix, SuperOperator, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn max_diff(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> C64 {
    C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

pub fn random_matrix(n: usize, rng: &mut ChaCha8Rng) -> ComplexMatrix {
    ComplexMatrix::from_fn(n, n, |_, _| gaussian(rng))
}

pub fn random_hermitian(n: usize, rng: &mut ChaCha8Rng) -> ComplexMatrix {
    let a = random_matrix(n, rng);
    (&a + a.adjoint()).scale(0.5)
}

pub fn random_density(n: usize, rng: &mut ChaCha8Rng) -> ComplexMatrix {
    let g = random_matrix(n, rng);
    let w = &g * g.adjoint();
    let tr = w.trace();
    w / tr
}

pub fn random_pure(n: usize, rng: &mut ChaCha8Rng) -> ComplexMatrix {
    let v = nmsim::tensor::ComplexVector::from_fn(n, |_, _| gaussian(rng));
    let v = &v / C64::new(v.norm(), 0.0);
    &v * v.adjoint()
}

/// Random Kraus set `{G_i S^{-1/2}}` with `S = sum G_i^dag G_i`.
pub fn random_channel_kraus(n: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<ComplexMatrix> {
    let gs: Vec<ComplexMatrix> = (0..count).map(|_| random_matrix(n, rng)).collect();
    let s = gs.iter().fold(zeros(n, n), |acc, g| acc + g.adjoint() * g);
    let (values, vectors) = herm_eig(&s).unwrap();
    let inv_sqrt = ComplexMatrix::from_diagonal(&nmsim::tensor::ComplexVector::from_iterator(
        n,
        values.iter().map(|v| c(1.0 / v.sqrt(), 0.0)),
    ));
    let s_inv_sqrt = &vectors * inv_sqrt * vectors.adjoint();
    gs.into_iter().map(|g| g * &s_inv_sqrt).collect()
}

pub fn random_channel(n: usize, rng: &mut ChaCha8Rng) -> SuperOperator {
    let count = rng.random_range(1..=n * n);
    SuperOperator::from_kraus(&random_channel_kraus(n, count, rng)).unwrap()
}

/// `(1 + p) A - p B` for random channels `A`, `B`: trace and Hermiticity
/// preserving, and not CP once `p` is large enough.
pub fn random_hptp(n: usize, p: f64, rng: &mut ChaCha8Rng) -> SuperOperator {
    let a = random_channel(n, rng);
    let b = random_channel(n, rng);
    &a.scale(1.0 + p) - &b.scale(p)
}

/// `sum_i K_i rho K_i^dag`.
pub fn kraus_apply(kraus: &[ComplexMatrix], rho: &ComplexMatrix) -> ComplexMatrix {
    let n = rho.nrows();
    let mut out = zeros(n, n);
    for k in kraus {
        for i in 0..n {
            for j in 0..n {
                let mut acc = c(0.0, 0.0);
                for a in 0..n {
                    for b in 0..n {
                        acc += k[(i, a)] * rho[(a, b)] * k[(j, b)].conj();
                    }
                }
                out[(i, j)] += acc;
            }
        }
    }
    out
}

/// Applies a column-stacking transfer matrix entry by entry.
pub fn transfer_apply(transfer: &ComplexMatrix, rho: &ComplexMatrix) -> ComplexMatrix {
    let n = rho.nrows();
    let mut out = zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut acc = c(0.0, 0.0);
            for a in 0..n {
                for b in 0..n {
                    acc += transfer[(j * n + i, b * n + a)] * rho[(a, b)];
                }
            }
            out[(i, j)] = acc;
        }
    }
    out
}

/// Transfer matrix of `second after first`, by explicit summation.
pub fn compose_transfer(second: &ComplexMatrix, first: &ComplexMatrix) -> ComplexMatrix {
    let n = second.nrows();
    ComplexMatrix::from_fn(n, n, |r, col| (0..n).map(|k| second[(r, k)] * first[(k, col)]).sum())
}

/// Partial trace by looping over full multi-indices; `dims[0]` is most significant.
pub fn partial_trace_loop(m: &ComplexMatrix, dims: &[usize], keep: &[usize]) -> ComplexMatrix {
    let total: usize = dims.iter().product();
    let kept_dim: usize = keep.iter().map(|&k| dims[k]).product();
    let digits = |mut x: usize| {
        let mut d = vec![0; dims.len()];
        for s in (0..dims.len()).rev() {
            d[s] = x % dims[s];
            x /= dims[s];
        }
        d
    };
    let kept_index = |d: &[usize]| keep.iter().fold(0, |acc, &k| acc * dims[k] + d[k]);
    let mut out = zeros(kept_dim, kept_dim);
    for i in 0..total {
        for j in 0..total {
            let (di, dj) = (digits(i), digits(j));
            let traced_equal = (0..dims.len()).filter(|s| !keep.contains(s)).all(|s| di[s] == dj[s]);
            if traced_equal {
                out[(kept_index(&di), kept_index(&dj))] += m[(i, j)];
            }
        }
    }
    out
}

/// Embeds `a` on `support` (first listed site most significant) by checking
/// basis digits directly.
pub fn embed_op_loop(a: &ComplexMatrix, support: &[usize], sites: usize, d: usize) -> ComplexMatrix {
    let dim = d.pow(sites as u32);
    let digits = |mut x: usize| {
        let mut v = vec![0; sites];
        for s in (0..sites).rev() {
            v[s] = x % d;
            x /= d;
        }
        v
    };
    ComplexMatrix::from_fn(dim, dim, |i, j| {
        let (di, dj) = (digits(i), digits(j));
        let rest_equal = (0..sites).filter(|s| !support.contains(s)).all(|s| di[s] == dj[s]);
        if !rest_equal {
            return c(0.0, 0.0);
        }
        let li = support.iter().fold(0, |acc, &s| acc * d + di[s]);
        let lj = support.iter().fold(0, |acc, &s| acc * d + dj[s]);
        a[(li, lj)]
    })
}

/// Eigenvalues of a Hermitian matrix by cyclic Jacobi rotations on the real
/// symmetric embedding `[[Re, -Im], [Im, Re]]`; each eigenvalue appears twice
/// there, so every second value is returned. Ascending.
pub fn jacobi_eigenvalues(h: &ComplexMatrix) -> Vec<f64> {
    let n = h.nrows();
    let m = 2 * n;
    let mut a = vec![vec![0.0; m]; m];
    for i in 0..n {
        for j in 0..n {
            a[i][j] = h[(i, j)].re;
            a[i + n][j + n] = h[(i, j)].re;
            a[i][j + n] = -h[(i, j)].im;
            a[i + n][j] = h[(i, j)].im;
        }
    }
    for _sweep in 0..100 {
        let off: f64 = (0..m).flat_map(|i| (0..m).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..m {
            for q in p + 1..m {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;
                for k in 0..m {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = cs * akp - sn * akq;
                    a[k][q] = sn * akp + cs * akq;
                }
                for k in 0..m {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = cs * apk - sn * aqk;
                    a[q][k] = sn * apk + cs * aqk;
                }
            }
        }
    }
    let mut values: Vec<f64> = (0..m).map(|i| a[i][i]).collect();
    values.sort_by(|x, y| x.partial_cmp(y).unwrap());
    values.into_iter().step_by(2).collect()
}

/// Plain description of a GKSL model, used to build both the library model
/// and the operator-level right-hand side of the oracle integrator.
#[derive(Clone, Debug)]
pub struct TermSpec {
    pub support: Vec<usize>,
    pub hamiltonian: ComplexMatrix,
    pub lindblads: Vec<(ComplexMatrix, TimeFunction)>,
}

#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub name: &'static str,
    pub sites: usize,
    pub k: usize,
    pub t: f64,
    pub terms: Vec<TermSpec>,
}

impl ModelSpec {
    pub fn build(&self) -> KLocalLiouvillian {
        let terms = self
            .terms
            .iter()
            .map(|t| LocalTerm::gksl_static(t.support.clone(), t.hamiltonian.clone(), t.lindblads.clone()).unwrap())
            .collect();
        KLocalLiouvillian::new(Lattice::new(self.sites, 2).unwrap(), self.k, terms, self.t).unwrap()
    }

    /// `d rho / ds` from the operator form of the master equation.
    pub fn rhs(&self, s: f64, rho: &ComplexMatrix) -> ComplexMatrix {
        let dim = 1 << self.sites;
        let mut out = zeros(dim, dim);
        let minus_i = c(0.0, -1.0);
        for t in &self.terms {
            let h = embed_op_loop(&t.hamiltonian, &t.support, self.sites, 2);
            out += (&h * rho - rho * &h) * minus_i;
            for (l, rate) in &t.lindblads {
                let l = embed_op_loop(l, &t.support, self.sites, 2);
                let ldl = l.adjoint() * &l;
                let g = rate.eval(s);
                out += (&l * rho * l.adjoint() - (&ldl * rho + rho * &ldl).scale(0.5)).scale(g);
            }
        }
        out
    }

    /// Classical fourth-order Runge–Kutta on the operator equation, restarted
    /// at every point where a rate jumps or kinks.
    pub fn rk4(&self, rho0: &ComplexMatrix, t: f64, steps: usize) -> ComplexMatrix {
        let mut cuts: Vec<f64> = self
            .terms
            .iter()
            .flat_map(|term| term.lindblads.iter().flat_map(|(_, f)| f.breakpoints()))
            .filter(|&b| b > 0.0 && b < t)
            .collect();
        cuts.push(0.0);
        cuts.push(t);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let mut rho = rho0.clone();
        for w in cuts.windows(2) {
            let n = ((steps as f64 * (w[1] - w[0]) / t).ceil() as usize).max(1);
            let h = (w[1] - w[0]) / n as f64;
            // rates are right-continuous, so the last stage uses the left limit
            let end = w[1] - 1e-13 * t;
            for k in 0..n {
                let s = w[0] + k as f64 * h;
                let k1 = self.rhs(s, &rho);
                let k2 = self.rhs(s + h / 2.0, &(&rho + k1.scale(h / 2.0)));
                let k3 = self.rhs(s + h / 2.0, &(&rho + k2.scale(h / 2.0)));
                let k4 = self.rhs((s + h).min(end), &(&rho + k3.scale(h)));
                rho += (k1 + k2.scale(2.0) + k3.scale(2.0) + k4).scale(h / 6.0);
            }
        }
        rho
    }
}

fn term(support: &[usize], hamiltonian: ComplexMatrix, lindblads: Vec<(ComplexMatrix, TimeFunction)>) -> TermSpec {
    TermSpec { support: support.to_vec(), hamiltonian, lindblads }
}

fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    nmsim::tensor::kron(a, b)
}

pub fn cos_rate() -> TimeFunction {
    TimeFunction::Sinusoid { amp: 1.0, freq: 1.0, phase: PI / 2.0 }
}

/// Single-qubit dephasing with rate `cos(s)` on `[0, pi]`.
pub fn cos_dephasing() -> ModelSpec {
    ModelSpec {
        name: "cos_dephasing",
        sites: 1,
        k: 1,
        t: PI,
        terms: vec![term(&[0], zeros(2, 2), vec![(pauli_z(), cos_rate())])],
    }
}

/// Closed form of `cos_dephasing`: coherences scale by `exp(-2 sin s)`.
pub fn cos_dephasing_exact(rho0: &ComplexMatrix, s: f64) -> ComplexMatrix {
    let f = (-2.0 * s.sin()).exp();
    let mut out = rho0.clone();
    out[(0, 1)] *= f;
    out[(1, 0)] *= f;
    out
}

/// Ten-plus models on one to three qubits with one to three terms, mixing
/// positive, negative and sign-changing rates.
pub fn corpus() -> Vec<ModelSpec> {
    let zz = kron(&pauli_z(), &pauli_z());
    let xx = kron(&pauli_x(), &pauli_x());
    let yy = kron(&pauli_y(), &pauli_y());
    let sm0 = kron(&sigma_minus(), &identity(2));
    let mut r = rng(2024);
    let h_rand = random_hermitian(4, &mut r).scale(0.4);
    let l_rand = random_matrix(2, &mut r).scale(0.5);
    vec![
        cos_dephasing(),
        ModelSpec {
            name: "damped_drive",
            sites: 1,
            k: 1,
            t: 1.0,
            terms: vec![term(&[0], pauli_x().scale(0.8), vec![(sigma_minus(), TimeFunction::constant(0.5))])],
        },
        ModelSpec {
            name: "field_and_tanh_dephasing",
            sites: 2,
            k: 1,
            t: 1.0,
            terms: vec![
                term(&[0], pauli_x().scale(0.7), vec![]),
                term(&[1], zeros(2, 2), vec![(pauli_z(), TimeFunction::Tanh { amp: 0.6, rate: 4.0, offset: 0.5 })]),
            ],
        },
        ModelSpec {
            name: "zz_with_damping",
            sites: 2,
            k: 2,
            t: 1.0,
            terms: vec![
                term(&[0, 1], zz.scale(0.7), vec![]),
                term(&[0], pauli_x().scale(0.5), vec![(sigma_minus(), TimeFunction::constant(0.3))]),
            ],
        },
        ModelSpec {
            name: "xx_three_terms_sign_change",
            sites: 2,
            k: 2,
            t: 1.0,
            terms: vec![
                term(&[0, 1], xx.scale(0.5), vec![]),
                term(&[0], pauli_z().scale(0.3), vec![(pauli_z(), TimeFunction::Sinusoid { amp: 0.4, freq: 4.0, phase: 0.0 })]),
                term(&[1], zeros(2, 2), vec![(sigma_minus(), TimeFunction::Polynomial { coeffs: vec![0.2, -0.4] })]),
            ],
        },
        ModelSpec {
            name: "chain_three_sites",
            sites: 3,
            k: 2,
            t: 0.8,
            terms: vec![
                term(&[0, 1], zz.scale(0.6), vec![(sm0.clone(), TimeFunction::Sinusoid { amp: 0.3, freq: 5.0, phase: 0.3 })]),
                term(&[1, 2], (&xx + &yy).scale(0.4), vec![]),
            ],
        },
        ModelSpec {
            name: "three_single_site_dephasings",
            sites: 3,
            k: 1,
            t: 1.0,
            terms: vec![
                term(&[0], pauli_x().scale(0.4), vec![(pauli_z(), TimeFunction::Polynomial { coeffs: vec![0.3, -0.6] })]),
                term(&[1], pauli_y().scale(0.3), vec![(pauli_z(), TimeFunction::constant(0.2))]),
                term(&[2], pauli_x().scale(0.2), vec![(pauli_z(), TimeFunction::Sinusoid { amp: 0.5, freq: 3.0, phase: 1.0 })]),
            ],
        },
        ModelSpec {
            name: "exchange_with_negative_damping",
            sites: 2,
            k: 2,
            t: 0.6,
            terms: vec![term(
                &[0, 1],
                (&xx + &yy).scale(0.5),
                vec![(sm0.clone(), TimeFunction::Polynomial { coeffs: vec![-0.1, 0.3] })],
            )],
        },
        ModelSpec {
            name: "pair_three_fields",
            sites: 2,
            k: 2,
            t: 0.9,
            terms: vec![
                term(&[0], pauli_x().scale(0.5), vec![]),
                term(&[1], zeros(2, 2), vec![(pauli_z(), TimeFunction::constant(-0.1))]),
                term(
                    &[1, 0],
                    kron(&pauli_y(), &pauli_x()).scale(0.4),
                    vec![(
                        kron(&sigma_minus(), &identity(2)),
                        TimeFunction::Piecewise {
                            breaks: vec![0.45],
                            pieces: vec![TimeFunction::constant(0.4), TimeFunction::constant(-0.2)],
                        },
                    )],
                ),
            ],
        },
        ModelSpec {
            name: "random_pair",
            sites: 2,
            k: 2,
            t: 0.7,
            terms: vec![
                term(&[0, 1], h_rand, vec![]),
                term(&[1], zeros(2, 2), vec![(l_rand, TimeFunction::Sinusoid { amp: 0.6, freq: 6.0, phase: 0.5 })]),
            ],
        },
        ModelSpec {
            name: "reversed_support_chain",
            sites: 3,
            k: 2,
            t: 0.5,
            terms: vec![
                term(&[2, 0], zz.scale(0.5) + kron(&pauli_x(), &identity(2)).scale(0.3), vec![]),
                term(&[1], pauli_x().scale(0.6), vec![(pauli_z(), TimeFunction::Table { times: vec![0.0, 0.25, 0.5], values: vec![0.3, -0.3, 0.1] })]),
                term(&[0, 1], xx.scale(0.2), vec![(kron(&identity(2), &sigma_minus()), TimeFunction::constant(0.25))]),
            ],
        },
    ]
}

/// Rate-free version of a model: every Lindblad rate set to a nonnegative constant.
pub fn divisible_models() -> Vec<ModelSpec> {
    let zz = kron(&pauli_z(), &pauli_z());
    vec![
        ModelSpec {
            name: "divisible_damping",
            sites: 1,
            k: 1,
            t: 1.0,
            terms: vec![term(&[0], pauli_x().scale(0.6), vec![(sigma_minus(), TimeFunction::constant(0.4))])],
        },
        ModelSpec {
            name: "divisible_pair",
            sites: 2,
            k: 2,
            t: 1.0,
            terms: vec![
                term(&[0, 1], zz.scale(0.8), vec![]),
                term(&[0], pauli_x().scale(0.9), vec![(pauli_z(), TimeFunction::constant(0.1))]),
                term(&[1], pauli_y().scale(0.5), vec![(sigma_minus(), TimeFunction::constant(0.2))]),
            ],
        },
    ]
}

/// Applies a local transfer matrix on `support` of a qubit register by
/// summing over basis digits; site 0 is the most significant.
pub fn apply_local_loop(transfer: &ComplexMatrix, support: &[usize], sites: usize, rho: &ComplexMatrix) -> ComplexMatrix {
    let d: usize = 2;
    let dim = d.pow(sites as u32);
    let dl = d.pow(support.len() as u32);
    let digits = |mut x: usize| {
        let mut v = vec![0; sites];
        for s in (0..sites).rev() {
            v[s] = x % d;
            x /= d;
        }
        v
    };
    let local_of = |v: &[usize]| support.iter().fold(0, |acc, &s| acc * d + v[s]);
    let with_local = |v: &[usize], l: usize| {
        let mut w = v.to_vec();
        let mut rem = l;
        for &s in support.iter().rev() {
            w[s] = rem % d;
            rem /= d;
        }
        w.iter().fold(0, |acc, &x| acc * d + x)
    };
    let mut out = zeros(dim, dim);
    for i in 0..dim {
        for j in 0..dim {
            let (di, dj) = (digits(i), digits(j));
            let (li, lj) = (local_of(&di), local_of(&dj));
            let mut acc = c(0.0, 0.0);
            for la in 0..dl {
                for lb in 0..dl {
                    acc += transfer[(lj * dl + li, lb * dl + la)] * rho[(with_local(&di, la), with_local(&dj, lb))];
                }
            }
            out[(i, j)] = acc;
        }
    }
    out
}
