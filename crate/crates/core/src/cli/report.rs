//! Report serialization.

use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::algsim::{CircuitSummary, BIT_ORDER};
use crate::liouvillian::BetaMode;
use crate::tensor::ComplexMatrix;
use crate::trotter::{CorollaryMode, SweepRow, PRODUCT_ORDER};

use super::config::MatrixLiteral;

/// Self-description embedded in every report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Conventions {
    pub vectorization: &'static str,
    pub site_order: &'static str,
    pub bit_order: &'static str,
    pub product_order: &'static str,
    pub ancilla: &'static str,
    pub beta_mode: BetaMode,
    pub corollary_mode: CorollaryMode,
    pub trace_distance: &'static str,
}

impl Conventions {
    pub fn new(beta_mode: BetaMode, corollary_mode: CorollaryMode) -> Self {
        Self {
            vectorization: "column stacking, vec(|i><j|) = e_(j*D+i)",
            site_order: "site 0 is the most significant tensor factor",
            bit_order: BIT_ORDER,
            product_order: PRODUCT_ORDER,
            ancilla: "ancilla level 0 is the initial level; levels 0..d_x keep, level d_x restarts",
            beta_mode,
            corollary_mode,
            trace_distance: "half the trace norm of the difference",
        }
    }
}

/// Pretty JSON with every float written to 17 significant digits.
struct Precise<'a>(PrettyFormatter<'a>);

impl Formatter for Precise<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }

    fn begin_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_array(writer)
    }

    fn end_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_array(writer)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(writer, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_array_value(writer)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_object(writer)
    }

    fn end_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_object(writer)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(writer, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_object_value(writer)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_object_value(writer)
    }
}

/// Serializes `value` as pretty JSON; non-finite floats become `null`.
pub fn to_json(value: &impl Serialize) -> String {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Precise(PrettyFormatter::new()));
    value.serialize(&mut ser).expect("report types serialize infallibly");
    out.push(b'\n');
    String::from_utf8(out).expect("serde_json emits UTF-8")
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        String::new()
    }
}

pub const SWEEP_HEADER: &str = "m,empirical_lower,empirical_upper,bound_measured,bound_tid";
pub const LEDGER_HEADER: &str = "circuit,slot,slice,term,part,gauge,normalization,estimate,half_width,trials";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = format!("{SWEEP_HEADER}\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.m,
            num(r.empirical_lower),
            num(r.empirical_upper),
            num(r.bound_measured),
            num(r.bound_tid)
        ));
    }
    s
}

/// One line per non-CP slot of every circuit; `slice` and `term` are zero-based.
pub fn ledger_csv(circuits: &[CircuitSummary]) -> String {
    let mut s = format!("{LEDGER_HEADER}\n");
    for c in circuits {
        for slot in &c.slots {
            let (estimate, half_width, trials) = match slot.estimate {
                Some(w) => (num(w.estimate), num(w.half_width), w.trials.to_string()),
                None => (String::new(), String::new(), String::new()),
            };
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                c.r,
                slot.ordinal,
                slot.slice,
                slot.term,
                slot.part,
                num(slot.gauge),
                num(slot.normalization),
                estimate,
                half_width,
                trials
            ));
        }
    }
    s
}

/// Two-column table of scalar fields.
pub fn key_value_csv(rows: &[(&str, String)]) -> String {
    let mut s = String::from("key,value\n");
    for (k, v) in rows {
        s.push_str(&format!("{k},{v}\n"));
    }
    s
}

pub fn matrix_literal(m: &ComplexMatrix) -> MatrixLiteral {
    (0..m.nrows()).map(|r| (0..m.ncols()).map(|c| [m[(r, c)].re, m[(r, c)].im]).collect()).collect()
}

/// Writes to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "output path has no file name"))?;
    let tmp = dir.join(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result
}
