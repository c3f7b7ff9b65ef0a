//! Phone-level alignments in a subset of the Praat TextGrid text format.
//!
//! Accepted grammar (whitespace-insensitive, one `key = value` per line):
//!
//! ```text
//! File type = "ooTextFile"
//! Object class = "TextGrid"
//! xmin = <sec>
//! xmax = <sec>
//! tiers? <exists>
//! size = <n>
//! item []:
//!     item [k]:
//!         class = "IntervalTier"
//!         name = "<tier>"
//!         xmin = <sec>
//!         xmax = <sec>
//!         intervals: size = <n>
//!         intervals [i]:
//!             xmin = <sec>
//!             xmax = <sec>
//!             text = "<label>"
//! ```
//!
//! The tier named `phones` is used, or the first interval tier when none has
//! that name. Intervals with an empty label (silences) are skipped.

use std::fmt::Write as _;

use super::phonemes::{PhonemeSequence, PhonemeTable};
use crate::error::{Error, Result};

/// Audio-feature frames per second.
pub const AUDIO_FRAME_RATE: f64 = 100.0;

/// Per-phoneme frame counts.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentTable {
    pub durations: Vec<usize>,
    pub frame_rate: f64,
}

impl AlignmentTable {
    pub fn new(durations: Vec<usize>, frame_rate: f64) -> Result<Self> {
        if durations.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument("durations must be positive".into()));
        }
        Ok(Self { durations, frame_rate })
    }

    /// Total frames `m`.
    pub fn total_frames(&self) -> usize {
        self.durations.iter().sum()
    }
}

/// Frames covered by an interval: round-half-up of `seconds · rate`, at least 1.
pub fn interval_frames(xmin: f64, xmax: f64, frame_rate: f64) -> usize {
    let frames = ((xmax - xmin) * frame_rate + 0.5).floor();
    (frames as usize).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Interval {
    pub xmin: f64,
    pub xmax: f64,
    pub label: String,
    pub line: usize,
}

#[derive(Debug, Default)]
struct Tier {
    class: String,
    name: String,
    intervals: Vec<Interval>,
}

fn unquote(v: &str) -> String {
    let v = v.trim();
    v.strip_prefix('"')
        .and_then(|s| s.strip_suffix('"'))
        .unwrap_or(v)
        .replace("\"\"", "\"")
}

fn parse_number(v: &str, line: usize) -> Result<f64> {
    v.trim().parse::<f64>().map_err(|_| Error::Alignment {
        line,
        msg: format!("expected a number, found {v:?}"),
    })
}

/// Reads the labelled intervals of the phone tier.
pub fn parse_intervals(src: &str) -> Result<Vec<Interval>> {
    let mut tiers: Vec<Tier> = Vec::new();
    let mut current: Option<Interval> = None;
    for (i, raw) in src.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.starts_with("item [") && line.ends_with("]:") && line != "item []:" {
            if let (Some(iv), Some(t)) = (current.take(), tiers.last_mut()) {
                t.intervals.push(iv);
            }
            tiers.push(Tier::default());
            continue;
        }
        if line.starts_with("intervals [") && line.ends_with("]:") {
            let Some(tier) = tiers.last_mut() else {
                return Err(Error::Alignment {
                    line: line_no,
                    msg: "interval outside any tier".into(),
                });
            };
            if let Some(iv) = current.take() {
                tier.intervals.push(iv);
            }
            current = Some(Interval {
                xmin: f64::NAN,
                xmax: f64::NAN,
                label: String::new(),
                line: line_no,
            });
            continue;
        }
        let Some((key, value)) = line.split_once('=') else { continue };
        let key = key.trim();
        match (&mut current, key) {
            (Some(iv), "xmin") => iv.xmin = parse_number(value, line_no)?,
            (Some(iv), "xmax") => iv.xmax = parse_number(value, line_no)?,
            (Some(iv), "text") => iv.label = unquote(value),
            (None, "class") => {
                if let Some(t) = tiers.last_mut() {
                    t.class = unquote(value);
                }
            }
            (None, "name") => {
                if let Some(t) = tiers.last_mut() {
                    t.name = unquote(value);
                }
            }
            _ => {}
        }
    }
    if let (Some(iv), Some(t)) = (current.take(), tiers.last_mut()) {
        t.intervals.push(iv);
    }
    let interval_tiers: Vec<&Tier> = tiers.iter().filter(|t| t.class == "IntervalTier").collect();
    let tier = interval_tiers
        .iter()
        .find(|t| t.name == "phones")
        .or_else(|| interval_tiers.first())
        .ok_or(Error::Alignment {
            line: 0,
            msg: "no IntervalTier found".into(),
        })?;
    let mut prev_end = f64::NEG_INFINITY;
    let mut out = Vec::new();
    for iv in &tier.intervals {
        if !iv.xmin.is_finite() || !iv.xmax.is_finite() {
            return Err(Error::Alignment {
                line: iv.line,
                msg: "interval missing xmin or xmax".into(),
            });
        }
        if iv.xmax <= iv.xmin {
            return Err(Error::Alignment {
                line: iv.line,
                msg: format!("interval [{}, {}] is empty or reversed", iv.xmin, iv.xmax),
            });
        }
        if iv.xmin < prev_end - 1e-9 {
            return Err(Error::Alignment {
                line: iv.line,
                msg: format!("interval starting at {} overlaps or precedes the previous one ending at {prev_end}", iv.xmin),
            });
        }
        prev_end = iv.xmax;
        if !iv.label.trim().is_empty() {
            out.push(iv.clone());
        }
    }
    Ok(out)
}

/// Parses an alignment and checks its labels against `seq`.
pub fn parse_alignment(src: &str, seq: &PhonemeSequence, frame_rate: f64) -> Result<AlignmentTable> {
    let table = PhonemeTable::builtin();
    let intervals = parse_intervals(src)?;
    if intervals.len() != seq.len() {
        return Err(Error::Alignment {
            line: intervals.last().map_or(0, |i| i.line),
            msg: format!("{} labelled intervals for {} phonemes", intervals.len(), seq.len()),
        });
    }
    for (iv, &tok) in intervals.iter().zip(&seq.tokens) {
        let expected = table.symbol(tok).unwrap_or("?");
        if !iv.label.trim().eq_ignore_ascii_case(expected) {
            return Err(Error::Alignment {
                line: iv.line,
                msg: format!("label {:?} does not match phoneme {expected}", iv.label),
            });
        }
    }
    let durations = intervals
        .iter()
        .map(|iv| interval_frames(iv.xmin, iv.xmax, frame_rate))
        .collect();
    AlignmentTable::new(durations, frame_rate)
}

/// Writes `table` as contiguous intervals starting at zero.
pub fn serialize_alignment(table: &AlignmentTable, seq: &PhonemeSequence) -> String {
    let symbols = PhonemeTable::builtin();
    let total = table.total_frames() as f64 / table.frame_rate;
    let mut s = String::new();
    let _ = writeln!(s, "File type = \"ooTextFile\"");
    let _ = writeln!(s, "Object class = \"TextGrid\"\n");
    let _ = writeln!(s, "xmin = 0");
    let _ = writeln!(s, "xmax = {total}");
    let _ = writeln!(s, "tiers? <exists>");
    let _ = writeln!(s, "size = 1");
    let _ = writeln!(s, "item []:");
    let _ = writeln!(s, "    item [1]:");
    let _ = writeln!(s, "        class = \"IntervalTier\"");
    let _ = writeln!(s, "        name = \"phones\"");
    let _ = writeln!(s, "        xmin = 0");
    let _ = writeln!(s, "        xmax = {total}");
    let _ = writeln!(s, "        intervals: size = {}", table.durations.len());
    let mut start = 0usize;
    for (i, (&d, &tok)) in table.durations.iter().zip(&seq.tokens).enumerate() {
        let end = start + d;
        let _ = writeln!(s, "        intervals [{}]:", i + 1);
        let _ = writeln!(s, "            xmin = {}", start as f64 / table.frame_rate);
        let _ = writeln!(s, "            xmax = {}", end as f64 / table.frame_rate);
        let _ = writeln!(s, "            text = \"{}\"", symbols.symbol(tok).unwrap_or("?"));
        start = end;
    }
    s
}
