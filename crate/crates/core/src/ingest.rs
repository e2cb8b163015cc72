//! File-based ingestion of exchange (off-chain) and ledger (on-chain) exports.
//!
//! Off-chain CSV header: `time,close,volumefrom,volumeto`.
//! On-chain CSV header: `time,amount_in,amount_out,tx_in,tx_out`.
//! Extra columns are ignored. Timestamps are integer epoch seconds; row numbers
//! in errors count the header as row 1.
//!
//! Records are bucketed by `floor(time / frequency)`. Inside a bucket the close
//! is the last one by timestamp (ties broken by value) and every other field is
//! summed in (timestamp, value) order, so the result does not depend on input
//! row order. The joined index runs over the buckets covered by both sources.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dataset::fmt;
use crate::error::{Error, Result};
use crate::model::{build_regressors, ObservationSeries, RegressorSeries};
use crate::scalar::{lit, Real};

pub const DEFAULT_FREQUENCY: i64 = 3600;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffChainRecord {
    pub timestamp: i64,
    pub close: f64,
    pub volume_from: f64,
    pub volume_to: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnChainRecord {
    pub timestamp: i64,
    pub amount_in: f64,
    pub amount_out: f64,
    pub tx_in: u64,
    pub tx_out: u64,
}

struct Columns {
    idx: Vec<usize>,
}

fn locate(headers: &csv::StringRecord, names: &[&str]) -> Result<Columns> {
    let idx = names
        .iter()
        .map(|n| {
            headers
                .iter()
                .position(|h| h.trim() == *n)
                .ok_or_else(|| Error::Schema { column: n.to_string() })
        })
        .collect::<Result<_>>()?;
    Ok(Columns { idx })
}

fn field<'r>(rec: &'r csv::StringRecord, cols: &Columns, i: usize) -> &'r str {
    rec.get(cols.idx[i]).unwrap_or("").trim()
}

fn parse_time(s: &str, row: u64) -> Result<i64> {
    s.parse().map_err(|_| Error::Value { row, message: format!("time: expected integer epoch seconds, got {s:?}") })
}

fn parse_amount(s: &str, row: u64, name: &str, positive: bool) -> Result<f64> {
    let v: f64 = s.parse().map_err(|_| Error::Value { row, message: format!("{name}: cannot parse {s:?}") })?;
    let ok = v.is_finite() && if positive { v > 0.0 } else { v >= 0.0 };
    if !ok {
        let need = if positive { "positive" } else { "non-negative" };
        return Err(Error::Value { row, message: format!("{name}: {s} is not a finite {need} number") });
    }
    Ok(v)
}

fn parse_count(s: &str, row: u64, name: &str) -> Result<u64> {
    s.parse()
        .map_err(|_| Error::Value { row, message: format!("{name}: expected a non-negative integer, got {s:?}") })
}

fn records<R: Read>(input: R, names: &[&str]) -> Result<(Columns, Vec<(u64, csv::StringRecord)>)> {
    let mut r = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let cols = locate(r.headers()?, names)?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        out.push((i as u64 + 2, rec?));
    }
    Ok((cols, out))
}

pub fn read_off_chain<R: Read>(input: R) -> Result<Vec<OffChainRecord>> {
    let (cols, recs) = records(input, &["time", "close", "volumefrom", "volumeto"])?;
    recs.iter()
        .map(|(row, rec)| {
            Ok(OffChainRecord {
                timestamp: parse_time(field(rec, &cols, 0), *row)?,
                close: parse_amount(field(rec, &cols, 1), *row, "close", true)?,
                volume_from: parse_amount(field(rec, &cols, 2), *row, "volumefrom", false)?,
                volume_to: parse_amount(field(rec, &cols, 3), *row, "volumeto", false)?,
            })
        })
        .collect()
}

pub fn read_on_chain<R: Read>(input: R) -> Result<Vec<OnChainRecord>> {
    let (cols, recs) = records(input, &["time", "amount_in", "amount_out", "tx_in", "tx_out"])?;
    recs.iter()
        .map(|(row, rec)| {
            Ok(OnChainRecord {
                timestamp: parse_time(field(rec, &cols, 0), *row)?,
                amount_in: parse_amount(field(rec, &cols, 1), *row, "amount_in", false)?,
                amount_out: parse_amount(field(rec, &cols, 2), *row, "amount_out", false)?,
                tx_in: parse_count(field(rec, &cols, 3), *row, "tx_in")?,
                tx_out: parse_count(field(rec, &cols, 4), *row, "tx_out")?,
            })
        })
        .collect()
}

pub fn parse_off_chain_csv(path: impl AsRef<Path>) -> Result<Vec<OffChainRecord>> {
    read_off_chain(std::fs::File::open(path)?)
}

pub fn parse_on_chain_csv(path: impl AsRef<Path>) -> Result<Vec<OnChainRecord>> {
    read_on_chain(std::fs::File::open(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    /// Carry the source's previous bucket forward.
    ForwardFill,
    /// Skip the bucket; the index then has gaps.
    Drop,
    /// Fail with the first incomplete bucket.
    Error,
}

impl MissingPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            MissingPolicy::ForwardFill => "forward_fill",
            MissingPolicy::Drop => "drop",
            MissingPolicy::Error => "error",
        }
    }
}

impl std::str::FromStr for MissingPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward_fill" | "ffill" => Ok(MissingPolicy::ForwardFill),
            "drop" => Ok(MissingPolicy::Drop),
            "error" => Ok(MissingPolicy::Error),
            _ => Err(Error::Config(format!("unknown missing policy {s:?}"))),
        }
    }
}

pub const OFF_CHAIN_COLUMNS: [&str; 3] = ["close", "volume_from", "volume_to"];
pub const ON_CHAIN_COLUMNS: [&str; 4] = ["amount_in", "amount_out", "tx_in", "tx_out"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub std: f64,
}

/// Time-indexed feature table with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    pub frequency: i64,
    pub policy: MissingPolicy,
    /// Bucket start times.
    pub index: Vec<i64>,
    pub columns: Vec<String>,
    /// Column-major values, `data[c][row]`.
    pub data: Vec<Vec<f64>>,
    /// Per-column statistics once standardised.
    pub stats: Option<Vec<ColumnStats>>,
}

impl PanelDataset {
    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns.iter().position(|c| c == name).ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        Ok(&self.data[self.column_index(name)?])
    }
}

/// Row accounting per source: `rows_in = consumed + aggregated + rejected`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSummary {
    pub rows_in: usize,
    /// First row of every bucket that reached the output.
    pub consumed: usize,
    /// Further rows merged into an output bucket.
    pub aggregated: usize,
    /// `(reason, rows)`.
    pub rejected: Vec<(String, usize)>,
}

impl SourceSummary {
    fn reject(&mut self, reason: &str, rows: usize) {
        if rows == 0 {
            return;
        }
        match self.rejected.iter_mut().find(|(r, _)| r == reason) {
            Some((_, n)) => *n += rows,
            None => self.rejected.push((reason.to_string(), rows)),
        }
    }

    pub fn rejected_total(&self) -> usize {
        self.rejected.iter().map(|(_, n)| n).sum()
    }

    pub fn balanced(&self) -> bool {
        self.rows_in == self.consumed + self.aggregated + self.rejected_total()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub off_chain: SourceSummary,
    pub on_chain: SourceSummary,
    pub forward_filled_off: usize,
    pub forward_filled_on: usize,
    pub dropped_buckets: usize,
}

pub const REASON_OUT_OF_RANGE: &str = "outside overlapping range";
pub const REASON_DROPPED: &str = "bucket dropped by missing policy";
pub const REASON_DIFFERENCED: &str = "first bucket consumed by return differencing";

struct Bucket<const N: usize> {
    rows: usize,
    values: [f64; N],
}

fn bucket_start(ts: i64, freq: i64) -> i64 {
    ts.div_euclid(freq) * freq
}

fn aggregate_off(off: &[OffChainRecord], freq: i64) -> BTreeMap<i64, Bucket<3>> {
    let mut sorted = off.to_vec();
    sorted.sort_by(|a, b| {
        a.timestamp
            .cmp(&b.timestamp)
            .then(a.close.total_cmp(&b.close))
            .then(a.volume_from.total_cmp(&b.volume_from))
            .then(a.volume_to.total_cmp(&b.volume_to))
    });
    let mut out: BTreeMap<i64, Bucket<3>> = BTreeMap::new();
    for r in sorted {
        let b = out.entry(bucket_start(r.timestamp, freq)).or_insert(Bucket { rows: 0, values: [0.0; 3] });
        b.rows += 1;
        b.values[0] = r.close;
        b.values[1] += r.volume_from;
        b.values[2] += r.volume_to;
    }
    out
}

fn aggregate_on(on: &[OnChainRecord], freq: i64) -> BTreeMap<i64, Bucket<4>> {
    let mut sorted = on.to_vec();
    sorted.sort_by(|a, b| {
        a.timestamp
            .cmp(&b.timestamp)
            .then(a.amount_in.total_cmp(&b.amount_in))
            .then(a.amount_out.total_cmp(&b.amount_out))
            .then(a.tx_in.cmp(&b.tx_in))
            .then(a.tx_out.cmp(&b.tx_out))
    });
    let mut out: BTreeMap<i64, Bucket<4>> = BTreeMap::new();
    for r in sorted {
        let b = out.entry(bucket_start(r.timestamp, freq)).or_insert(Bucket { rows: 0, values: [0.0; 4] });
        b.rows += 1;
        b.values[0] += r.amount_in;
        b.values[1] += r.amount_out;
        b.values[2] += r.tx_in as f64;
        b.values[3] += r.tx_out as f64;
    }
    out
}

/// Buckets both sources and joins them over the common range.
pub fn align_and_join(
    off: &[OffChainRecord],
    on: &[OnChainRecord],
    frequency: i64,
    policy: MissingPolicy,
) -> Result<(PanelDataset, IngestSummary)> {
    if frequency <= 0 {
        return Err(Error::Config("frequency must be a positive number of seconds".into()));
    }
    let off_b = aggregate_off(off, frequency);
    let on_b = aggregate_on(on, frequency);
    let range = |m: &[i64]| (m.first().copied(), m.last().copied());
    let off_keys: Vec<i64> = off_b.keys().copied().collect();
    let on_keys: Vec<i64> = on_b.keys().copied().collect();
    let (Some(off_lo), Some(off_hi)) = range(&off_keys) else { return Err(Error::NoOverlap) };
    let (Some(on_lo), Some(on_hi)) = range(&on_keys) else { return Err(Error::NoOverlap) };
    let lo = off_lo.max(on_lo);
    let hi = off_hi.min(on_hi);
    if lo > hi {
        return Err(Error::NoOverlap);
    }

    let mut summary = IngestSummary::default();
    summary.off_chain.rows_in = off.len();
    summary.on_chain.rows_in = on.len();
    for (k, b) in &off_b {
        if *k < lo || *k > hi {
            summary.off_chain.reject(REASON_OUT_OF_RANGE, b.rows);
        }
    }
    for (k, b) in &on_b {
        if *k < lo || *k > hi {
            summary.on_chain.reject(REASON_OUT_OF_RANGE, b.rows);
        }
    }

    let mut index = Vec::new();
    let mut rows: Vec<[f64; 7]> = Vec::new();
    // last values at or before the current bucket, for forward filling
    let mut last_off = off_b.range(..lo).next_back().map(|(_, b)| b.values);
    let mut last_on = on_b.range(..lo).next_back().map(|(_, b)| b.values);
    let mut t = lo;
    while t <= hi {
        let o = off_b.get(&t);
        let c = on_b.get(&t);
        if let Some(b) = o {
            last_off = Some(b.values);
        }
        if let Some(b) = c {
            last_on = Some(b.values);
        }
        let complete = o.is_some() && c.is_some();
        let keep = match policy {
            _ if complete => true,
            MissingPolicy::Error => {
                let source_name = if o.is_none() { "off-chain" } else { "on-chain" };
                return Err(Error::MissingBucket { bucket_start: t, source_name });
            }
            MissingPolicy::Drop => false,
            MissingPolicy::ForwardFill => true,
        };
        if keep {
            let ov = last_off.expect("off-chain data exists at or before the range start");
            let cv = last_on.expect("on-chain data exists at or before the range start");
            summary.forward_filled_off += usize::from(o.is_none());
            summary.forward_filled_on += usize::from(c.is_none());
            for (b, s) in [(o.map(|b| b.rows), &mut summary.off_chain), (c.map(|b| b.rows), &mut summary.on_chain)] {
                if let Some(n) = b {
                    s.consumed += 1;
                    s.aggregated += n - 1;
                }
            }
            index.push(t);
            rows.push([ov[0], ov[1], ov[2], cv[0], cv[1], cv[2], cv[3]]);
        } else {
            summary.dropped_buckets += 1;
            summary.off_chain.reject(REASON_DROPPED, o.map_or(0, |b| b.rows));
            summary.on_chain.reject(REASON_DROPPED, c.map_or(0, |b| b.rows));
        }
        t += frequency;
    }

    let columns: Vec<String> = OFF_CHAIN_COLUMNS.iter().chain(ON_CHAIN_COLUMNS.iter()).map(|s| s.to_string()).collect();
    let data = (0..7).map(|c| rows.iter().map(|r| r[c]).collect()).collect();
    let panel = PanelDataset { frequency, policy, index, columns, data, stats: None };
    Ok((panel, summary))
}

/// Log returns `ln(close_t / close_{t-1})`.
pub fn compute_returns(close: &[f64]) -> Result<Vec<f64>> {
    if let Some((index, &value)) = close.iter().enumerate().find(|(_, c)| !(c.is_finite() && **c > 0.0)) {
        return Err(Error::InvalidPrice { index, value });
    }
    if close.len() < 2 {
        return Err(Error::InvalidData("returns need at least two prices".into()));
    }
    Ok(close.windows(2).map(|w| (w[1] / w[0]).ln()).collect())
}

/// Inserts a `returns` column after `close` and drops the first row.
pub fn with_returns(panel: &PanelDataset, summary: Option<&mut IngestSummary>) -> Result<PanelDataset> {
    let ci = panel.column_index("close")?;
    let returns = compute_returns(&panel.data[ci])?;
    let mut out = panel.clone();
    out.index.remove(0);
    for col in &mut out.data {
        col.remove(0);
    }
    out.columns.insert(ci + 1, "returns".into());
    out.data.insert(ci + 1, returns);
    if let Some(s) = summary {
        // the dropped row's source rows are no longer in the output
        for src in [&mut s.off_chain, &mut s.on_chain] {
            if src.consumed > 0 {
                src.consumed -= 1;
                src.reject(REASON_DIFFERENCED, 1);
            }
        }
    }
    Ok(out)
}

/// Population mean and standard deviation, summed sequentially.
pub fn column_stats(x: &[f64]) -> ColumnStats {
    let n = x.len() as f64;
    let mut sum = 0.0;
    for v in x {
        sum += v;
    }
    let mean = sum / n;
    let mut ss = 0.0;
    for v in x {
        ss += (v - mean) * (v - mean);
    }
    ColumnStats { mean, std: (ss / n).sqrt() }
}

/// Z-scores every column, keeping the statistics for [`inverse_standardize`].
pub fn standardize(panel: &PanelDataset) -> Result<PanelDataset> {
    if panel.is_empty() {
        return Err(Error::InvalidData("cannot standardise an empty panel".into()));
    }
    let mut out = panel.clone();
    let mut stats = Vec::with_capacity(panel.columns.len());
    for (name, col) in panel.columns.iter().zip(out.data.iter_mut()) {
        let s = column_stats(col);
        if !(s.std > 0.0) || !s.std.is_finite() {
            return Err(Error::DegenerateColumn(name.clone()));
        }
        for v in col.iter_mut() {
            *v = (*v - s.mean) / s.std;
        }
        stats.push(s);
    }
    out.stats = Some(stats);
    Ok(out)
}

pub fn inverse_standardize(panel: &PanelDataset) -> Result<PanelDataset> {
    let stats = panel.stats.as_ref().ok_or_else(|| Error::InvalidData("panel is not standardised".into()))?;
    let mut out = panel.clone();
    for (col, s) in out.data.iter_mut().zip(stats) {
        for v in col.iter_mut() {
            *v = *v * s.std + s.mean;
        }
    }
    out.stats = None;
    Ok(out)
}

/// Observations from `targets`; regressors stack `lag` lags of
/// `[targets | regressors]` (plus an intercept).
pub fn to_var_dataset<T: Real>(
    panel: &PanelDataset,
    targets: &[&str],
    regressors: &[&str],
    lag: usize,
    intercept: bool,
) -> Result<(ObservationSeries<T>, RegressorSeries<T>)> {
    if targets.is_empty() {
        return Err(Error::Config("at least one target column is required".into()));
    }
    let t_idx = targets.iter().map(|c| panel.column_index(c)).collect::<Result<Vec<_>>>()?;
    let r_idx = regressors.iter().map(|c| panel.column_index(c)).collect::<Result<Vec<_>>>()?;
    if let Some(dup) = t_idx.iter().chain(&r_idx).enumerate().find_map(|(i, c)| {
        t_idx.iter().chain(&r_idx).skip(i + 1).any(|d| d == c).then_some(*c)
    }) {
        return Err(Error::Config(format!("column {} selected twice", panel.columns[dup])));
    }
    let rows = |idx: &[usize]| -> Vec<DVector<T>> {
        (0..panel.len()).map(|t| DVector::from_iterator(idx.len(), idx.iter().map(|&c| lit(panel.data[c][t])))).collect()
    };
    let ts = panel.index.clone();
    let y = ObservationSeries::from_rows(rows(&t_idx))?.with_timestamps(ts.clone())?;
    let all: Vec<usize> = t_idx.iter().chain(&r_idx).copied().collect();
    let z = ObservationSeries::from_rows(rows(&all))?.with_timestamps(ts)?;
    let x = build_regressors(&z, lag, intercept)?;
    Ok((y, x))
}

pub fn write_panel_csv<W: Write>(panel: &PanelDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["time".to_string()];
    header.extend(panel.columns.iter().cloned());
    w.write_record(&header)?;
    for t in 0..panel.len() {
        let mut rec = vec![panel.index[t].to_string()];
        rec.extend(panel.data.iter().map(|c| fmt(c[t])));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Key-value sidecar: frequency, policy, row accounting and column statistics.
pub fn panel_metadata(panel: &PanelDataset, summary: Option<&IngestSummary>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "frequency={}", panel.frequency);
    let _ = writeln!(s, "missing_policy={}", panel.policy.as_str());
    let _ = writeln!(s, "returns=log");
    let _ = writeln!(s, "rows={}", panel.len());
    let _ = writeln!(s, "columns={}", panel.columns.join(","));
    let _ = writeln!(s, "standardized={}", panel.stats.is_some());
    if let Some(stats) = &panel.stats {
        for (c, st) in panel.columns.iter().zip(stats) {
            let _ = writeln!(s, "mean.{c}={}", st.mean);
            let _ = writeln!(s, "std.{c}={}", st.std);
        }
    }
    if let Some(sum) = summary {
        for (name, src) in [("off_chain", &sum.off_chain), ("on_chain", &sum.on_chain)] {
            let _ = writeln!(s, "{name}.rows_in={}", src.rows_in);
            let _ = writeln!(s, "{name}.consumed={}", src.consumed);
            let _ = writeln!(s, "{name}.aggregated={}", src.aggregated);
            for (reason, n) in &src.rejected {
                let _ = writeln!(s, "{name}.rejected.{}={n}", reason.replace(' ', "_"));
            }
        }
        let _ = writeln!(s, "forward_filled.off_chain={}", sum.forward_filled_off);
        let _ = writeln!(s, "forward_filled.on_chain={}", sum.forward_filled_on);
        let _ = writeln!(s, "dropped_buckets={}", sum.dropped_buckets);
    }
    s
}

/// Parse, join, add returns and optionally standardise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestOptions {
    pub frequency: i64,
    pub policy: MissingPolicy,
    pub standardize: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self { frequency: DEFAULT_FREQUENCY, policy: MissingPolicy::ForwardFill, standardize: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOutput {
    /// Joined panel with returns, before standardisation.
    pub raw: PanelDataset,
    /// Standardised panel when requested, otherwise a copy of `raw`.
    pub panel: PanelDataset,
    pub summary: IngestSummary,
}

pub fn ingest(off: &[OffChainRecord], on: &[OnChainRecord], opts: &IngestOptions) -> Result<IngestOutput> {
    let (joined, mut summary) = align_and_join(off, on, opts.frequency, opts.policy)?;
    let raw = with_returns(&joined, Some(&mut summary))?;
    let panel = if opts.standardize { standardize(&raw)? } else { raw.clone() };
    Ok(IngestOutput { raw, panel, summary })
}
