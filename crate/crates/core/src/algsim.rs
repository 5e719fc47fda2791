//! Circuit decomposition of a product of local maps, some of which are not
//! channels, and its exact or shot-sampled execution.
//!
//! Each non-CP factor `T = T^(0) - T^(1)` is replaced by one of its two CP
//! parts, so a product with `n` non-CP factors expands into `2^n` signed
//! circuits. Circuit `r` uses part `(r >> n) & 1` at the `n`-th non-CP slot.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::divisibility::{check_channel, estimate_tid, profile, DivisibilityProfile, CHANNEL_TOL, DEFAULT_M_SEQUENCE};
use crate::error::{Error, Result};
use crate::instrument::{
    apply_exact_embedded, dilate, hptp_split, trials_needed, wilson, DilatedInstrument, HptpSplit, WilsonEstimate,
};
use crate::liouvillian::{beta, BetaMode, KLocalLiouvillian, Lattice};
use crate::propagator::{check_density, reference_state_evolution, slice_grid, SliceGrid, DEFAULT_TOL};
use crate::tensor::{
    apply_local, expectation, trace_distance, zeros, ComplexMatrix, ComplexVector, NormEffort, SuperOperator, C64,
};
use crate::trotter::{corollary1_m, theorem1_bound, BoundForm, BoundInputs, CorollaryMode, CorollaryStep};

/// Recorded in reports.
pub const BIT_ORDER: &str = "bit n of r (least significant first) selects the part at the n-th non-CP slot";

/// Limits that keep a run within desk-scale resources.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Caps {
    pub max_non_cp: usize,
    pub max_circuits: u64,
    pub max_shots: u64,
    pub max_dim: usize,
    /// Smallest admissible estimated success probability of a circuit.
    pub min_success_probability: f64,
    pub max_m: usize,
}

impl Default for Caps {
    fn default() -> Self {
        Self {
            max_non_cp: 16,
            max_circuits: 65_536,
            max_shots: 1_000_000_000,
            max_dim: 64,
            min_success_probability: 1e-6,
            max_m: 1024,
        }
    }
}

/// One factor of the product, acting on `support` after every earlier factor.
#[derive(Clone, Debug)]
pub struct Factor {
    pub slice: usize,
    pub term: usize,
    pub support: Vec<usize>,
    pub map: SuperOperator,
}

/// Factors of a slice grid in execution order: slice-major, ascending term.
pub fn factors_from_grid(grid: &SliceGrid) -> Vec<Factor> {
    (0..grid.m)
        .flat_map(|j| {
            (0..grid.terms()).map(move |i| Factor {
                slice: j,
                term: i,
                support: grid.supports[i].clone(),
                map: grid.get(i, j).clone(),
            })
        })
        .collect()
}

#[derive(Clone, Debug)]
enum SlotOp {
    Channel(SuperOperator),
    Instrument {
        ordinal: usize,
        split: HptpSplit,
        parts: [DilatedInstrument; 2],
    },
}

#[derive(Clone, Debug)]
struct Slot {
    slice: usize,
    term: usize,
    support: Vec<usize>,
    op: SlotOp,
}

/// A factor sequence with every non-CP factor split and both parts dilated.
#[derive(Clone, Debug)]
pub struct Program {
    lattice: Lattice,
    slots: Vec<Slot>,
    n_total: usize,
}

impl Program {
    /// `indivisible[g]` marks factor `g` as non-CP.
    pub fn new(lattice: Lattice, factors: Vec<Factor>, indivisible: &[bool], caps: &Caps) -> Result<Self> {
        if factors.len() != indivisible.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} factors but {} channel flags",
                factors.len(),
                indivisible.len()
            )));
        }
        if lattice.dim() > caps.max_dim {
            return Err(Error::CapExceeded { what: "dimension", value: lattice.dim() as u64, cap: caps.max_dim as u64 });
        }
        let n_total = indivisible.iter().filter(|&&x| x).count();
        if n_total > caps.max_non_cp {
            return Err(Error::CapExceeded {
                what: "non-CP slot count",
                value: n_total as u64,
                cap: caps.max_non_cp as u64,
            });
        }
        let mut ordinal = 0;
        let mut slots = Vec::with_capacity(factors.len());
        for (f, &bad) in factors.into_iter().zip(indivisible) {
            let op = if bad {
                let split = hptp_split(&f.map)?;
                let parts = [dilate(&split.positive)?, dilate(&split.negative)?];
                ordinal += 1;
                SlotOp::Instrument { ordinal: ordinal - 1, split, parts }
            } else {
                SlotOp::Channel(f.map)
            };
            slots.push(Slot { slice: f.slice, term: f.term, support: f.support, op });
        }
        Ok(Self { lattice, slots, n_total })
    }

    /// Uses the channel test at `tol` to find the non-CP factors.
    pub fn from_factors(lattice: Lattice, factors: Vec<Factor>, tol: f64, caps: &Caps) -> Result<Self> {
        let mask: Vec<bool> = factors.iter().map(|f| !check_channel(&f.map, tol)).collect();
        Self::new(lattice, factors, &mask, caps)
    }

    pub fn from_grid(grid: &SliceGrid, lattice: &Lattice, profile: &DivisibilityProfile, caps: &Caps) -> Result<Self> {
        let factors = factors_from_grid(grid);
        let mask: Vec<bool> = factors.iter().map(|f| profile.indivisible[f.term][f.slice]).collect();
        Self::new(lattice.clone(), factors, &mask, caps)
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// `N~^m_TOT`.
    pub fn n_total(&self) -> usize {
        self.n_total
    }

    pub fn circuit_count(&self) -> u64 {
        1u64 << self.n_total
    }

    fn instruments(&self) -> impl Iterator<Item = (&HptpSplit, &[DilatedInstrument; 2])> {
        self.slots.iter().filter_map(|s| match &s.op {
            SlotOp::Instrument { split, parts, .. } => Some((split, parts)),
            SlotOp::Channel(_) => None,
        })
    }

    /// `G = max_r G_r`, the product over non-CP slots of the larger part gauge.
    pub fn gauge_bound(&self) -> f64 {
        self.instruments().map(|(_, p)| p[0].gauge_scalar().max(p[1].gauge_scalar())).product()
    }

    /// The split parts of the `n`-th non-CP slot.
    pub fn split(&self, n: usize) -> Option<&HptpSplit> {
        self.instruments().nth(n).map(|(s, _)| s)
    }

    /// Dilated instruments of the `n`-th non-CP slot.
    pub fn dilations(&self, n: usize) -> Option<&[DilatedInstrument; 2]> {
        self.instruments().nth(n).map(|(_, p)| p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SlotKind {
    Channel,
    Instrument { ordinal: usize, part: u8 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotEntry {
    pub slice: usize,
    pub term: usize,
    pub kind: SlotKind,
}

/// Circuit `C_r`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CircuitSpec {
    pub r: u64,
    pub slots: Vec<SlotEntry>,
    pub parity: u8,
}

impl CircuitSpec {
    pub fn sign(&self) -> f64 {
        if self.parity == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Part chosen at each non-CP slot, in ordinal order.
    pub fn parts(&self) -> Vec<u8> {
        self.slots
            .iter()
            .filter_map(|s| match s.kind {
                SlotKind::Instrument { part, .. } => Some(part),
                SlotKind::Channel => None,
            })
            .collect()
    }
}

/// The slot table of circuit `r`.
pub fn circuit_spec(program: &Program, r: u64) -> CircuitSpec {
    let slots = program
        .slots
        .iter()
        .map(|s| SlotEntry {
            slice: s.slice,
            term: s.term,
            kind: match &s.op {
                SlotOp::Channel(_) => SlotKind::Channel,
                SlotOp::Instrument { ordinal, .. } => {
                    SlotKind::Instrument { ordinal: *ordinal, part: ((r >> ordinal) & 1) as u8 }
                }
            },
        })
        .collect();
    CircuitSpec { r, slots, parity: (r.count_ones() % 2) as u8 }
}

/// All `2^{N~_TOT}` circuits in ascending `r`.
pub fn enumerate_circuits(program: &Program, caps: &Caps) -> Result<Vec<CircuitSpec>> {
    let count = program.circuit_count();
    if count > caps.max_circuits {
        return Err(Error::CapExceeded { what: "circuit count", value: count, cap: caps.max_circuits });
    }
    Ok((0..count).map(|r| circuit_spec(program, r)).collect())
}

/// Ledger entry of one non-CP slot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub ordinal: usize,
    pub slice: usize,
    pub term: usize,
    pub part: u8,
    /// `G^gamma_r`.
    pub gauge: f64,
    /// Exact `N^gamma_r`.
    pub normalization: f64,
    /// `N~^gamma_r` in sampled mode.
    pub estimate: Option<WilsonEstimate>,
}

impl SlotRecord {
    pub fn used_normalization(&self) -> f64 {
        self.estimate.map_or(self.normalization, |w| w.estimate)
    }
}

/// Outcome of one circuit.
#[derive(Clone, Debug, PartialEq)]
pub struct CircuitResult {
    pub r: u64,
    pub parity: u8,
    /// `rho~^(r)(mK)`; `None` when some slot had a vanishing keep probability.
    pub terminal_state: Option<ComplexMatrix>,
    pub slots: Vec<SlotRecord>,
    /// `P(C_r)`.
    pub success_probability: f64,
    /// `(min N)^{N~_TOT}` and `(max N)^{N~_TOT}` over the recorded slots.
    pub probability_bracket: (f64, f64),
    /// `G_r`.
    pub gauge_product: f64,
    pub unreachable: bool,
    /// Shots run at the first non-CP slot.
    pub trials: u64,
}

impl CircuitResult {
    pub fn sign(&self) -> f64 {
        if self.parity == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// `G_r prod N`.
    pub fn exact_weight(&self) -> f64 {
        if self.unreachable {
            return 0.0;
        }
        self.gauge_product * self.slots.iter().map(|s| s.normalization).product::<f64>()
    }

    /// `G_r prod N~`, equal to the exact weight in exact mode.
    pub fn weight(&self) -> f64 {
        if self.unreachable {
            return 0.0;
        }
        self.gauge_product * self.slots.iter().map(SlotRecord::used_normalization).product::<f64>()
    }

    /// `rho^(r)(t)`.
    pub fn exact_state(&self, dim: usize) -> ComplexMatrix {
        self.scaled(dim, self.exact_weight())
    }

    /// `phi^(r)(t)`.
    pub fn state(&self, dim: usize) -> ComplexMatrix {
        self.scaled(dim, self.weight())
    }

    fn scaled(&self, dim: usize, w: f64) -> ComplexMatrix {
        match &self.terminal_state {
            Some(rho) if !self.unreachable => rho.scale(w),
            _ => zeros(dim, dim),
        }
    }

    /// `max_gamma |N - N~|`.
    pub fn max_normalization_error(&self) -> f64 {
        self.slots.iter().map(|s| (s.normalization - s.used_normalization()).abs()).fold(0.0, f64::max)
    }

    /// `max_gamma` Wilson half-width, or 0 in exact mode.
    pub fn max_half_width(&self) -> f64 {
        self.slots.iter().filter_map(|s| s.estimate.map(|w| w.half_width)).fold(0.0, f64::max)
    }
}

/// Propagates `rho0` through circuit `spec` with exact keep probabilities.
pub fn run_circuit_exact(program: &Program, spec: &CircuitSpec, rho0: &ComplexMatrix) -> Result<CircuitResult> {
    let dim = program.lattice.dim();
    check_density(rho0, dim)?;
    if spec.slots.len() != program.slots.len() {
        return Err(Error::DimensionMismatch(format!(
            "circuit has {} slots, program has {}",
            spec.slots.len(),
            program.slots.len()
        )));
    }
    let mut state = rho0.clone();
    let mut records = Vec::with_capacity(program.n_total);
    let mut unreachable = false;
    for (slot, entry) in program.slots.iter().zip(&spec.slots) {
        match (&slot.op, entry.kind) {
            (SlotOp::Channel(map), SlotKind::Channel) => {
                if !unreachable {
                    state = apply_local(map, &slot.support, &program.lattice, &state)?;
                }
            }
            (SlotOp::Instrument { ordinal, parts, .. }, SlotKind::Instrument { part, .. }) => {
                let instr = &parts[part as usize];
                let mut record = SlotRecord {
                    ordinal: *ordinal,
                    slice: slot.slice,
                    term: slot.term,
                    part,
                    gauge: instr.gauge_scalar(),
                    normalization: 0.0,
                    estimate: None,
                };
                if !unreachable {
                    let out = apply_exact_embedded(instr, &state, &slot.support, &program.lattice)?;
                    record.normalization = out.p1;
                    match out.post_state {
                        Some(post) => state = post,
                        None => unreachable = true,
                    }
                }
                records.push(record);
            }
            _ => return Err(Error::InvalidArgument(format!("circuit {} does not match the program", spec.r))),
        }
    }
    let normalizations: Vec<f64> = records.iter().map(|s| s.normalization).collect();
    let n = normalizations.len() as i32;
    let bracket = if normalizations.is_empty() {
        (1.0, 1.0)
    } else {
        let lo = normalizations.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = normalizations.iter().copied().fold(0.0, f64::max);
        (lo.powi(n), hi.powi(n))
    };
    Ok(CircuitResult {
        r: spec.r,
        parity: spec.parity,
        terminal_state: (!unreachable).then_some(state),
        success_probability: normalizations.iter().product(),
        probability_bracket: bracket,
        gauge_product: records.iter().map(|s| s.gauge).product(),
        slots: records,
        unreachable,
        trials: 0,
    })
}

/// Shot-sampling settings derived from a plan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingSettings {
    pub z: f64,
    /// Required Wilson half-width of every `N~`.
    pub tolerance: f64,
    /// Abort after this many shots of one circuit.
    pub trial_cap: u64,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed of the random stream owned by `(seed, r, slot)`.
pub fn stream_seed(seed: u64, r: u64, slot: usize) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ r) ^ slot as u64)
}

/// Estimates every `N^gamma_r` of circuit `spec` from simulated shots.
///
/// A shot restarts at the first failed measurement, so slot `n` sees only
/// the shots that passed slots `0..n`. Shots are drawn in batches, one
/// binomial per slot, until every slot's Wilson half-width is within the
/// tolerance. The terminal state is propagated exactly.
pub fn run_circuit_sampled(
    program: &Program,
    spec: &CircuitSpec,
    rho0: &ComplexMatrix,
    settings: &SamplingSettings,
    seed: u64,
) -> Result<CircuitResult> {
    let mut result = run_circuit_exact(program, spec, rho0)?;
    let k = result.slots.len();
    if k == 0 || result.unreachable {
        return Ok(result);
    }
    let probs: Vec<f64> = result.slots.iter().map(|s| s.normalization.clamp(0.0, 1.0)).collect();
    let target = trials_needed(settings.tolerance, settings.z)?;
    let mut rngs: Vec<ChaCha8Rng> = (0..k).map(|n| ChaCha8Rng::seed_from_u64(stream_seed(seed, spec.r, n))).collect();
    let mut reach = vec![0u64; k];
    let mut succ = vec![0u64; k];
    let mut total = 0u64;
    loop {
        let mut batch = 0u64;
        let mut first_open = None;
        let mut frac = 1.0;
        for n in 0..k {
            let done = reach[n] > 0 && wilson(succ[n], reach[n], settings.z)?.half_width <= settings.tolerance;
            if !done {
                first_open.get_or_insert(n);
                let missing = target.saturating_sub(reach[n]).max(1) as f64;
                batch = batch.max((missing / frac).ceil().min(u64::MAX as f64 / 2.0) as u64);
            }
            let p_hat = if reach[n] > 0 { succ[n] as f64 / reach[n] as f64 } else { 1.0 };
            frac *= p_hat.max(1.0 / (reach[n] + 1) as f64);
        }
        let Some(open) = first_open else { break };
        let room = settings.trial_cap.saturating_sub(total);
        if room == 0 {
            return Err(Error::TrialCapExceeded { slot: open, cap: settings.trial_cap });
        }
        let batch = batch.min(room);
        let mut entering = batch;
        for n in 0..k {
            if entering == 0 {
                break;
            }
            let passed = Binomial::new(entering, probs[n])
                .map_err(|e| Error::InvalidArgument(format!("binomial draw: {e}")))?
                .sample(&mut rngs[n]);
            reach[n] += entering;
            succ[n] += passed;
            entering = passed;
        }
        total += batch;
    }
    for (n, record) in result.slots.iter_mut().enumerate() {
        record.estimate = Some(wilson(succ[n], reach[n], settings.z)?);
    }
    result.trials = total;
    Ok(result)
}

/// Algorithmic-error bounds of a reconstruction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub n_total: usize,
    /// `G_r N~_TOT max_gamma |N - N~|` for each circuit.
    pub per_circuit: Vec<f64>,
    /// `2^{N~_TOT - 1} max_r` of the above.
    pub aggregate: f64,
    /// The same with `|N - N~|` replaced by the Wilson half-width.
    pub per_circuit_certified: Vec<f64>,
    pub aggregate_certified: f64,
    /// `||rho~ - phi~||_1` measured against the exact weights.
    pub realized: f64,
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    /// `phi~(t)`.
    pub state: ComplexMatrix,
    /// `sum_r (-1)^P(r) rho^(r)(t)`.
    pub exact_state: ComplexMatrix,
    pub expectation: f64,
    pub exact_expectation: f64,
    /// Signed `<A>` of each `phi^(r)`.
    pub circuit_expectations: Vec<f64>,
    pub errors: ErrorReport,
}

fn aggregation_factor(n_total: usize) -> f64 {
    if n_total == 0 {
        0.0
    } else {
        2f64.powi(n_total as i32 - 1)
    }
}

/// Signed sum over a complete set of circuit results.
pub fn reconstruct(results: &[CircuitResult], observable: &ComplexMatrix) -> Result<Reconstruction> {
    let count = results.len() as u64;
    if !count.is_power_of_two() {
        return Err(Error::InvalidArgument(format!("{count} circuit results do not form a complete set")));
    }
    let mut ordered: Vec<&CircuitResult> = results.iter().collect();
    ordered.sort_by_key(|c| c.r);
    if let Some(missing) = ordered.iter().enumerate().find(|(idx, c)| c.r != *idx as u64) {
        return Err(Error::InvalidArgument(format!("circuit {} missing from the results", missing.0)));
    }
    let n_total = count.trailing_zeros() as usize;
    let dim = observable.nrows();
    let mut acc = Accumulator::new(dim, n_total);
    for c in ordered {
        acc.push(c, observable)?;
    }
    Ok(acc.finish())
}

/// In-order reduction of circuit results.
struct Accumulator {
    dim: usize,
    n_total: usize,
    state: ComplexMatrix,
    exact_state: ComplexMatrix,
    expectations: Vec<f64>,
    exact_expectation: f64,
    per_circuit: Vec<f64>,
    per_circuit_certified: Vec<f64>,
}

impl Accumulator {
    fn new(dim: usize, n_total: usize) -> Self {
        Self {
            dim,
            n_total,
            state: zeros(dim, dim),
            exact_state: zeros(dim, dim),
            expectations: Vec::new(),
            exact_expectation: 0.0,
            per_circuit: Vec::new(),
            per_circuit_certified: Vec::new(),
        }
    }

    fn push(&mut self, c: &CircuitResult, observable: &ComplexMatrix) -> Result<()> {
        if observable.nrows() != self.dim || observable.ncols() != self.dim {
            return Err(Error::DimensionMismatch(format!("observable must be {0}x{0}", self.dim)));
        }
        let sign = c.sign();
        let phi = c.state(self.dim);
        let rho = c.exact_state(self.dim);
        self.expectations.push(sign * expectation(observable, &phi).re);
        self.exact_expectation += sign * expectation(observable, &rho).re;
        self.state += phi.scale(sign);
        self.exact_state += rho.scale(sign);
        let scale = c.gauge_product * self.n_total as f64;
        self.per_circuit.push(scale * c.max_normalization_error());
        self.per_circuit_certified.push(scale * c.max_half_width());
        Ok(())
    }

    fn finish(self) -> Reconstruction {
        let factor = aggregation_factor(self.n_total);
        let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
        let errors = ErrorReport {
            n_total: self.n_total,
            aggregate: factor * max(&self.per_circuit),
            aggregate_certified: factor * max(&self.per_circuit_certified),
            realized: 2.0 * trace_distance(&self.state, &self.exact_state),
            per_circuit: self.per_circuit,
            per_circuit_certified: self.per_circuit_certified,
        };
        Reconstruction {
            expectation: self.expectations.iter().sum(),
            circuit_expectations: self.expectations,
            exact_expectation: self.exact_expectation,
            state: self.state,
            exact_state: self.exact_state,
            errors,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Exact,
    Sampled,
}

/// Per-circuit ledger without the terminal state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircuitSummary {
    pub r: u64,
    pub parity: u8,
    pub success_probability: f64,
    pub probability_bracket: (f64, f64),
    pub gauge_product: f64,
    pub unreachable: bool,
    pub trials: u64,
    pub signed_expectation: f64,
    pub slots: Vec<SlotRecord>,
}

#[derive(Clone, Debug)]
pub struct SimulationOutput {
    pub mode: Mode,
    pub seed: u64,
    pub circuits: Vec<CircuitSummary>,
    pub reconstruction: Reconstruction,
    pub total_trials: u64,
}

const CHUNK: u64 = 256;

/// Runs every circuit and reduces them in ascending `r`.
pub fn simulate(
    program: &Program,
    rho0: &ComplexMatrix,
    observable: &ComplexMatrix,
    mode: Mode,
    sampling: Option<&SamplingSettings>,
    seed: u64,
    caps: &Caps,
) -> Result<SimulationOutput> {
    let count = program.circuit_count();
    if count > caps.max_circuits {
        return Err(Error::CapExceeded { what: "circuit count", value: count, cap: caps.max_circuits });
    }
    let settings = match (mode, sampling) {
        (Mode::Sampled, Some(s)) => Some(*s),
        (Mode::Sampled, None) if program.n_total == 0 => None,
        (Mode::Sampled, None) => return Err(Error::InvalidArgument("sampled mode needs sampling settings".into())),
        (Mode::Exact, _) => None,
    };
    let dim = program.lattice.dim();
    let mut acc = Accumulator::new(dim, program.n_total);
    let mut summaries = Vec::with_capacity(count as usize);
    let mut total_trials = 0u64;
    let mut start = 0;
    while start < count {
        let end = (start + CHUNK).min(count);
        let chunk: Vec<CircuitResult> = (start..end)
            .into_par_iter()
            .map(|r| {
                let spec = circuit_spec(program, r);
                match &settings {
                    Some(s) => run_circuit_sampled(program, &spec, rho0, s, seed),
                    None => run_circuit_exact(program, &spec, rho0),
                }
            })
            .collect::<Result<_>>()?;
        for c in &chunk {
            acc.push(c, observable)?;
            total_trials = total_trials.saturating_add(c.trials);
            if total_trials > caps.max_shots {
                return Err(Error::CapExceeded { what: "total shots", value: total_trials, cap: caps.max_shots });
            }
            summaries.push(CircuitSummary {
                r: c.r,
                parity: c.parity,
                success_probability: c.success_probability,
                probability_bracket: c.probability_bracket,
                gauge_product: c.gauge_product,
                unreachable: c.unreachable,
                trials: c.trials,
                signed_expectation: *acc.expectations.last().expect("just pushed"),
                slots: c.slots.clone(),
            });
        }
        start = end;
    }
    Ok(SimulationOutput { mode, seed, circuits: summaries, reconstruction: acc.finish(), total_trials })
}

/// Ensemble of random inputs for [`classical_gauge_estimate`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StateEnsemble {
    /// Haar-random pure states.
    #[default]
    Pure,
    /// `G G^dag / tr(G G^dag)` with complex Gaussian `G`.
    HilbertSchmidt,
}

/// Mean output trace of `map` over random input states.
pub fn classical_gauge_estimate(map: &SuperOperator, samples: usize, ensemble: StateEnsemble, rng: &mut ChaCha8Rng) -> Result<f64> {
    if samples == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let d = map.dim();
    let mut gaussian = || C64::new(StandardNormal.sample(rng), StandardNormal.sample(rng));
    let mut sum = 0.0;
    for _ in 0..samples {
        let rho = match ensemble {
            StateEnsemble::Pure => {
                let v = ComplexVector::from_fn(d, |_, _| gaussian());
                let v = &v / C64::new(v.norm(), 0.0);
                &v * v.adjoint()
            }
            StateEnsemble::HilbertSchmidt => {
                let g = ComplexMatrix::from_fn(d, d, |_, _| gaussian());
                let w = &g * g.adjoint();
                let tr = w.trace();
                w / tr
            }
        };
        sum += map.apply(&rho)?.trace().re;
    }
    Ok(sum / samples as f64)
}

/// Knobs of [`make_plan`] beyond the caps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanOptions {
    /// Fraction of `eps` given to the product-formula error.
    pub trotter_share: f64,
    pub corollary_mode: CorollaryMode,
    pub beta_mode: BetaMode,
    pub beta_grid: usize,
    pub m_sequence: Vec<usize>,
    pub tid_tolerance: f64,
    pub gauge_samples: usize,
    pub seed: u64,
    /// Use this `m` instead of the step-count formula.
    pub m_override: Option<usize>,
    pub integrator_tol: f64,
}

impl Default for PlanOptions {
    fn default() -> Self {
        Self {
            trotter_share: 0.5,
            corollary_mode: CorollaryMode::Validated,
            beta_mode: BetaMode::FullSpace,
            beta_grid: 64,
            m_sequence: DEFAULT_M_SEQUENCE.to_vec(),
            tid_tolerance: 0.02,
            gauge_samples: 256,
            seed: 0,
            m_override: None,
            integrator_tol: DEFAULT_TOL,
        }
    }
}

/// One candidate `m` examined by the planner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanAttempt {
    pub m: usize,
    pub n_total: Option<usize>,
    pub limiting_factor: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationPlan {
    pub t: f64,
    pub epsilon: f64,
    pub epsilon_t: f64,
    pub epsilon_a: f64,
    pub z: f64,
    pub k_terms: usize,
    pub beta: f64,
    pub t_id: f64,
    pub c_tilde: usize,
    pub corollary: CorollaryStep,
    pub m: usize,
    /// True when `m` is below the step-count formula's value.
    pub m_clipped: bool,
    /// Tid-form bound at the chosen `m`.
    pub trotter_bound: f64,
    /// Measured-form bound at the chosen `m`.
    pub trotter_bound_measured: f64,
    pub trotter_target_met: bool,
    pub n_total: usize,
    pub circuit_count: u64,
    /// `G = max_r G_r`.
    pub gauge_bound: f64,
    /// `eps_A / (G N~_TOT 2^{N~_TOT - 1})`, absent without non-CP slots.
    pub estimator_tolerance: Option<f64>,
    pub trials_per_estimator: u64,
    /// `sum_r N_T / P^(C_r)` with `P^` from [`classical_gauge_estimate`].
    pub expected_shots: f64,
    pub min_success_probability: f64,
    pub feasible: bool,
    pub limiting_factor: Option<String>,
    pub attempts: Vec<PlanAttempt>,
    pub caps: Caps,
    pub options: PlanOptions,
}

impl SimulationPlan {
    pub fn sampling(&self) -> Option<SamplingSettings> {
        self.estimator_tolerance.map(|tolerance| SamplingSettings {
            z: self.z,
            tolerance,
            trial_cap: self.caps.max_shots,
        })
    }
}

struct Candidate {
    n_total: usize,
    gauge_bound: f64,
    tolerance: Option<f64>,
    n_t: u64,
    expected_shots: f64,
    min_p: f64,
    bound_measured: f64,
    limit: Option<String>,
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    model: &KLocalLiouvillian,
    t: f64,
    m: usize,
    epsilon_a: f64,
    z: f64,
    caps: &Caps,
    options: &PlanOptions,
    bound: &BoundInputs,
) -> Result<std::result::Result<Candidate, (Option<usize>, String)>> {
    let grid = slice_grid(model, t, m, false, options.integrator_tol)?;
    let prof = profile(&grid, CHANNEL_TOL);
    let n_total = prof.n_total;
    if n_total > caps.max_non_cp {
        return Ok(Err((Some(n_total), format!("non-CP slot count {n_total} exceeds {}", caps.max_non_cp))));
    }
    let circuits = 1u64 << n_total;
    if circuits > caps.max_circuits {
        return Ok(Err((Some(n_total), format!("circuit count {circuits} exceeds {}", caps.max_circuits))));
    }
    let program = Program::from_grid(&grid, model.lattice(), &prof, caps)?;
    let gauge_bound = program.gauge_bound();
    let measured = BoundInputs { m, n_tilde: prof.n_tilde, n_hat: prof.n_hat, ..*bound };
    let bound_measured = theorem1_bound(&measured, BoundForm::Measured);
    if n_total == 0 {
        return Ok(Ok(Candidate {
            n_total,
            gauge_bound,
            tolerance: None,
            n_t: 0,
            expected_shots: 0.0,
            min_p: 1.0,
            bound_measured,
            limit: None,
        }));
    }
    let tolerance = epsilon_a / (gauge_bound * n_total as f64 * 2f64.powi(n_total as i32 - 1));
    let n_t = trials_needed(tolerance, z)?;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut inverse_sum = 1.0;
    let mut min_p = 1.0;
    for (_, parts) in program.instruments() {
        let mut ps = [0.0; 2];
        for (p, instr) in ps.iter_mut().zip(parts) {
            let sub = keep_map(instr);
            *p = classical_gauge_estimate(&sub, options.gauge_samples, StateEnsemble::Pure, &mut rng)?;
        }
        min_p *= ps[0].min(ps[1]);
        inverse_sum *= ps.iter().map(|p| 1.0 / p.max(f64::MIN_POSITIVE)).sum::<f64>();
    }
    let expected_shots = n_t as f64 * inverse_sum;
    let limit = if min_p < caps.min_success_probability {
        Some(format!("estimated success probability {min_p:.3e} below {:.1e}", caps.min_success_probability))
    } else if (n_t as f64) * circuits as f64 > caps.max_shots as f64 || expected_shots > caps.max_shots as f64 {
        Some(format!("expected shots {expected_shots:.3e} exceed {}", caps.max_shots))
    } else {
        None
    };
    Ok(Ok(Candidate {
        n_total,
        gauge_bound,
        tolerance: Some(tolerance),
        n_t,
        expected_shots,
        min_p,
        bound_measured,
        limit,
    }))
}

/// The keep branch `T_s` of a dilated instrument as a local map.
fn keep_map(instr: &DilatedInstrument) -> SuperOperator {
    let d = instr.dim();
    let blocks: Vec<ComplexMatrix> = (0..instr.ancilla_dim() - 1).map(|j| instr.block(j)).collect();
    if blocks.is_empty() {
        return SuperOperator::zero(d);
    }
    SuperOperator::from_kraus(&blocks).expect("blocks are square")
}

/// Chooses `m`, the error split and the shot budget for a target total error `eps`.
///
/// `m` starts at the step-count formula's value for `eps_T`, clipped to
/// `caps.max_m`, and is halved until the circuit and shot caps are met.
pub fn make_plan(
    model: &KLocalLiouvillian,
    t: f64,
    epsilon: f64,
    z: f64,
    caps: &Caps,
    options: &PlanOptions,
) -> Result<SimulationPlan> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!("epsilon {epsilon} must be positive")));
    }
    if !(options.trotter_share > 0.0 && options.trotter_share < 1.0) {
        return Err(Error::InvalidArgument(format!("trotter share {} must lie in (0, 1)", options.trotter_share)));
    }
    if model.dim() > caps.max_dim {
        return Err(Error::CapExceeded { what: "dimension", value: model.dim() as u64, cap: caps.max_dim as u64 });
    }
    let epsilon_t = epsilon * options.trotter_share;
    let epsilon_a = epsilon - epsilon_t;
    let b = beta(model, t, options.beta_mode, options.beta_grid, &NormEffort::default())?.value;
    let tid = estimate_tid(model, t, &options.m_sequence, options.tid_tolerance)?;
    let t_id = tid.t_id.min(t);
    let k_terms = model.term_count();
    let corollary = corollary1_m(epsilon_t, k_terms, b, t, t_id, tid.c_tilde, options.corollary_mode)?;
    let base = BoundInputs { k_terms, beta: b, t, m: 1, n_tilde: 0, n_hat: 0, t_id, c_tilde: tid.c_tilde };

    let requested = match options.m_override {
        Some(m) if m >= 1 => m,
        Some(_) => return Err(Error::InvalidArgument("m must be at least 1".into())),
        None => usize::try_from(corollary.m).unwrap_or(usize::MAX).min(caps.max_m),
    };
    let mut attempts = Vec::new();
    let mut m = requested;
    let chosen = loop {
        match evaluate(model, t, m, epsilon_a, z, caps, options, &base)? {
            Ok(c) if c.limit.is_none() => break Some((m, c)),
            Ok(c) => attempts.push(PlanAttempt { m, n_total: Some(c.n_total), limiting_factor: c.limit.clone() }),
            Err((n, why)) => attempts.push(PlanAttempt { m, n_total: n, limiting_factor: Some(why) }),
        }
        if options.m_override.is_some() || m == 1 {
            break None;
        }
        m /= 2;
    };
    let (m, candidate, feasible, limiting_factor) = match chosen {
        Some((m, c)) => {
            attempts.push(PlanAttempt { m, n_total: Some(c.n_total), limiting_factor: None });
            (m, Some(c), true, None)
        }
        None => {
            let last = attempts.last().expect("at least one attempt");
            (last.m, None, false, last.limiting_factor.clone())
        }
    };
    let inputs = BoundInputs { m, ..base };
    let trotter_bound = theorem1_bound(&inputs, BoundForm::Tid);
    let c = candidate.unwrap_or(Candidate {
        n_total: attempts.last().and_then(|a| a.n_total).unwrap_or(0),
        gauge_bound: f64::NAN,
        tolerance: None,
        n_t: 0,
        expected_shots: f64::NAN,
        min_p: f64::NAN,
        bound_measured: f64::NAN,
        limit: None,
    });
    Ok(SimulationPlan {
        t,
        epsilon,
        epsilon_t,
        epsilon_a,
        z,
        k_terms,
        beta: b,
        t_id,
        c_tilde: tid.c_tilde,
        m_clipped: (m as u64) < corollary.m,
        corollary,
        m,
        trotter_bound,
        trotter_bound_measured: c.bound_measured,
        trotter_target_met: trotter_bound <= epsilon_t,
        n_total: c.n_total,
        circuit_count: 1u64 << c.n_total.min(63),
        gauge_bound: c.gauge_bound,
        estimator_tolerance: c.tolerance,
        trials_per_estimator: c.n_t,
        expected_shots: c.expected_shots,
        min_success_probability: c.min_p,
        feasible,
        limiting_factor,
        attempts,
        caps: *caps,
        options: options.clone(),
    })
}

/// Builds the executable program for a plan's `m`.
pub fn plan_program(model: &KLocalLiouvillian, plan: &SimulationPlan) -> Result<Program> {
    let grid = slice_grid(model, plan.t, plan.m, false, plan.options.integrator_tol)?;
    let prof = profile(&grid, CHANNEL_TOL);
    Program::from_grid(&grid, model.lattice(), &prof, &plan.caps)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub mode: Mode,
    pub seed: u64,
    /// `||phi~(t) - rho(t)||_1 / 2`.
    pub deviation: f64,
    pub threshold: f64,
    pub passed: bool,
    pub expectation: f64,
    pub reference_expectation: f64,
    pub expectation_deviation: f64,
    pub epsilon_t: f64,
    pub epsilon_a: f64,
    pub total_trials: u64,
    pub algorithmic_bound: f64,
}

/// Compares a simulation against the reference integrator.
///
/// The deviation must stay below `eps_T + eps_A` in sampled mode and below
/// `eps_T + 10 tol` in exact mode.
pub fn verify_against_reference(
    model: &KLocalLiouvillian,
    rho0: &ComplexMatrix,
    observable: &ComplexMatrix,
    plan: &SimulationPlan,
    mode: Mode,
    seed: u64,
) -> Result<(VerifyReport, SimulationOutput)> {
    if model.dim() > plan.caps.max_dim {
        return Err(Error::CapExceeded { what: "dimension", value: model.dim() as u64, cap: plan.caps.max_dim as u64 });
    }
    let tol = plan.options.integrator_tol;
    let reference = reference_state_evolution(model, rho0, plan.t, tol)?;
    let program = plan_program(model, plan)?;
    let sampling = plan.sampling();
    let out = simulate(&program, rho0, observable, mode, sampling.as_ref(), seed, &plan.caps)?;
    let rec = &out.reconstruction;
    let deviation = trace_distance(&rec.state, &reference);
    let threshold = match mode {
        Mode::Exact => plan.epsilon_t + 10.0 * tol,
        Mode::Sampled => plan.epsilon_t + plan.epsilon_a,
    };
    let reference_expectation = expectation(observable, &reference).re;
    let report = VerifyReport {
        mode,
        seed,
        deviation,
        threshold,
        passed: deviation <= threshold,
        expectation: rec.expectation,
        reference_expectation,
        expectation_deviation: (rec.expectation - reference_expectation).abs(),
        epsilon_t: plan.epsilon_t,
        epsilon_a: plan.epsilon_a,
        total_trials: out.total_trials,
        algorithmic_bound: rec.errors.aggregate,
    };
    Ok((report, out))
}
