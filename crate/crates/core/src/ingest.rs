//! Sensor-stream parsing, recording-block segmentation and per-second alignment.
//!
//! Stream files are UTF-8 CSV with a mandatory header: `timestamp_ms,value`
//! for single-channel modalities and `timestamp_ms,x,y,z` for the
//! accelerometer. Timestamps are integer milliseconds since the epoch and must
//! strictly increase.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{FeatureMatrix, RowKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    HeartRate,
    Accelerometer,
    Gsr,
    AmbientLight,
}

impl Modality {
    pub const ALL: [Modality; 4] = [
        Modality::HeartRate,
        Modality::Accelerometer,
        Modality::Gsr,
        Modality::AmbientLight,
    ];

    /// Nominal device sampling rate in Hz.
    pub fn nominal_rate(self) -> u32 {
        match self {
            Modality::HeartRate => 1,
            Modality::Accelerometer => 8,
            Modality::Gsr => 5,
            Modality::AmbientLight => 2,
        }
    }

    pub fn channels(self) -> usize {
        match self {
            Modality::Accelerometer => 3,
            _ => 1,
        }
    }

    /// Sample spacing at the nominal rate.
    pub fn period_ms(self) -> i64 {
        1000 / i64::from(self.nominal_rate())
    }

    pub fn csv_header(self) -> &'static str {
        match self {
            Modality::Accelerometer => "timestamp_ms,x,y,z",
            _ => "timestamp_ms,value",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::HeartRate => "heart_rate",
            Modality::Accelerometer => "accelerometer",
            Modality::Gsr => "gsr",
            Modality::AmbientLight => "ambient_light",
        }
    }

    /// File stem used for per-subject stream files (`hr.csv`, `accel.csv`, ...).
    pub fn file_stem(self) -> &'static str {
        match self {
            Modality::HeartRate => "hr",
            Modality::Accelerometer => "accel",
            Modality::Gsr => "gsr",
            Modality::AmbientLight => "light",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "heart_rate" | "heartrate" | "hr" => Ok(Modality::HeartRate),
            "accelerometer" | "accel" => Ok(Modality::Accelerometer),
            "gsr" => Ok(Modality::Gsr),
            "ambient_light" | "ambientlight" | "light" => Ok(Modality::AmbientLight),
            _ => Err(Error::UnknownModality(s.to_string())),
        }
    }
}

/// One modality's samples, stored flat: `values[i * channels..(i + 1) * channels]`
/// belongs to `timestamps[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorStream {
    modality: Modality,
    timestamps: Vec<i64>,
    values: Vec<f64>,
}

impl SensorStream {
    pub fn new(modality: Modality) -> Self {
        Self {
            modality,
            timestamps: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Appends a sample, enforcing the stream invariants.
    pub fn push(&mut self, timestamp_ms: i64, values: &[f64]) -> Result<()> {
        let line = self.len() + 2;
        if values.len() != self.modality.channels() {
            return Err(Error::ChannelMismatch {
                line,
                expected: self.modality.channels(),
                found: values.len(),
            });
        }
        if let Some(&prev) = self.timestamps.last() {
            if timestamp_ms <= prev {
                return Err(Error::NonMonotoneTimestamp {
                    line,
                    timestamp: timestamp_ms,
                    previous: prev,
                });
            }
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::MalformedRow {
                line,
                reason: format!("non-finite value {bad}"),
            });
        }
        if self.modality == Modality::HeartRate && values[0] <= 0.0 {
            return Err(Error::MalformedRow {
                line,
                reason: format!("heart rate must be positive, got {}", values[0]),
            });
        }
        self.timestamps.push(timestamp_ms);
        self.values.extend_from_slice(values);
        Ok(())
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn sample(&self, i: usize) -> (i64, &[f64]) {
        let c = self.modality.channels();
        (self.timestamps[i], &self.values[i * c..(i + 1) * c])
    }

    pub fn samples(&self) -> impl Iterator<Item = (i64, &[f64])> + '_ {
        self.timestamps
            .iter()
            .copied()
            .zip(self.values.chunks_exact(self.modality.channels()))
    }

    /// Mean sampling rate implied by the timestamps, in Hz.
    pub fn observed_rate(&self) -> Option<f64> {
        match (self.timestamps.first(), self.timestamps.last()) {
            (Some(&a), Some(&b)) if b > a => Some((self.len() - 1) as f64 * 1000.0 / (b - a) as f64),
            _ => None,
        }
    }

    /// Canonical CSV form; values use the shortest round-trip decimal.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.len() * 24 + 32);
        out.push_str(self.modality.csv_header());
        out.push('\n');
        for (ts, vals) in self.samples() {
            out.push_str(&ts.to_string());
            for v in vals {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// Parses a stream CSV file for `modality`.
///
/// Errors carry 1-based line numbers (the header is line 1).
pub fn parse_stream(bytes: &[u8], modality: Modality) -> Result<SensorStream> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::MalformedRow {
        line: bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1,
        reason: "invalid UTF-8".into(),
    })?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::MalformedRow { line: 1, reason: "missing header".into() })?;
    let header = header.trim_end_matches('\r').trim_start_matches('\u{feff}');
    if header != modality.csv_header() {
        return Err(Error::MalformedRow {
            line: 1,
            reason: format!("expected header `{}`, found `{header}`", modality.csv_header()),
        });
    }

    let mut stream = SensorStream::new(modality);
    let mut buf = Vec::with_capacity(modality.channels());
    for (idx, raw) in lines.enumerate() {
        let line = idx + 2;
        let raw = raw.trim_end_matches('\r');
        let mut fields = raw.split(',');
        let ts_field = fields.next().unwrap_or_default();
        let ts = ts_field.trim().parse::<i64>().map_err(|_| Error::MalformedRow {
            line,
            reason: format!("bad timestamp `{ts_field}`"),
        })?;
        buf.clear();
        for f in fields {
            let v = f.trim().parse::<f64>().map_err(|_| Error::MalformedRow {
                line,
                reason: format!("bad value `{f}`"),
            })?;
            buf.push(v);
        }
        stream.push(ts, &buf).map_err(|e| relabel_line(e, line))?;
    }
    Ok(stream)
}

fn relabel_line(err: Error, line: usize) -> Error {
    match err {
        Error::MalformedRow { reason, .. } => Error::MalformedRow { line, reason },
        Error::ChannelMismatch { expected, found, .. } => Error::ChannelMismatch { line, expected, found },
        Error::NonMonotoneTimestamp { timestamp, previous, .. } => Error::NonMonotoneTimestamp {
            line,
            timestamp,
            previous,
        },
        other => other,
    }
}

/// Recording duty cycle: `on_ms` of recording followed by `off_ms` without.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSchedule {
    pub on_ms: i64,
    pub off_ms: i64,
}

impl Default for BlockSchedule {
    fn default() -> Self {
        Self {
            on_ms: 180_000,
            off_ms: 180_000,
        }
    }
}

impl BlockSchedule {
    pub fn period_ms(&self) -> i64 {
        self.on_ms + self.off_ms
    }

    fn validate(&self) -> Result<()> {
        if self.on_ms <= 0 || self.off_ms <= 0 {
            return Err(Error::InvalidConfig(format!(
                "block schedule durations must be positive (on {} ms, off {} ms)",
                self.on_ms, self.off_ms
            )));
        }
        Ok(())
    }
}

/// One on-period of recording for one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordingBlock {
    pub subject_id: String,
    pub start_ms: i64,
    pub duration_ms: i64,
    /// One stream per modality with at least one sample in the block.
    pub streams: Vec<SensorStream>,
}

impl RecordingBlock {
    pub fn stream(&self, modality: Modality) -> Option<&SensorStream> {
        self.streams.iter().find(|s| s.modality() == modality)
    }

    pub fn sample_count(&self) -> usize {
        self.streams.iter().map(SensorStream::len).sum()
    }
}

/// A sample that fell inside an off-period of the schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OffPeriodSample {
    pub modality: Modality,
    pub timestamp_ms: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub blocks: Vec<RecordingBlock>,
    pub anomalies: Vec<OffPeriodSample>,
    /// Schedule origin: earliest timestamp floored to the schedule period.
    pub anchor_ms: i64,
}

impl Segmentation {
    pub fn blocked_samples(&self) -> usize {
        self.blocks.iter().map(RecordingBlock::sample_count).sum()
    }
}

/// Splits streams into recording blocks on a fixed on/off schedule.
///
/// The schedule is anchored at the earliest sample timestamp rounded down to
/// a multiple of the schedule period. Samples that land in an off-period are
/// returned as anomalies.
pub fn segment_blocks(
    streams: &[SensorStream],
    schedule: BlockSchedule,
    subject_id: &str,
) -> Result<Segmentation> {
    schedule.validate()?;
    let mut present = Vec::new();
    for s in streams {
        if present.contains(&s.modality()) {
            return Err(Error::InvalidData(format!("duplicate {} stream", s.modality())));
        }
        present.push(s.modality());
    }
    let earliest = streams
        .iter()
        .filter_map(|s| s.timestamps().first().copied())
        .min()
        .ok_or_else(|| Error::EmptyInput("no samples in any stream".into()))?;
    let period = schedule.period_ms();
    let anchor = earliest.div_euclid(period) * period;

    let mut by_block: BTreeMap<i64, Vec<SensorStream>> = BTreeMap::new();
    let mut anomalies = Vec::new();
    for stream in streams {
        let m = stream.modality();
        for (ts, vals) in stream.samples() {
            let offset = ts - anchor;
            let idx = offset.div_euclid(period);
            if offset.rem_euclid(period) >= schedule.on_ms {
                anomalies.push(OffPeriodSample { modality: m, timestamp_ms: ts });
                continue;
            }
            let block = by_block.entry(idx).or_default();
            let target = match block.iter().position(|s| s.modality() == m) {
                Some(p) => p,
                None => {
                    block.push(SensorStream::new(m));
                    block.len() - 1
                }
            };
            block[target].push(ts, vals)?;
        }
    }

    let blocks = by_block
        .into_iter()
        .map(|(idx, mut streams)| {
            streams.sort_by_key(SensorStream::modality);
            RecordingBlock {
                subject_id: subject_id.to_string(),
                start_ms: anchor + idx * period,
                duration_ms: schedule.on_ms,
                streams,
            }
        })
        .collect();
    anomalies.sort_by_key(|a| (a.timestamp_ms, a.modality));
    Ok(Segmentation {
        blocks,
        anomalies,
        anchor_ms: anchor,
    })
}

/// Which per-second features to build from a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureRecipe {
    /// Heart rate and mean acceleration magnitude.
    #[default]
    HrAccelMag,
    /// Heart rate and per-axis mean acceleration.
    HrAccelXyz,
}

impl FeatureRecipe {
    pub fn column_names(self) -> Vec<String> {
        let names: &[&str] = match self {
            FeatureRecipe::HrAccelMag => &["hr", "accel_mag"],
            FeatureRecipe::HrAccelXyz => &["hr", "accel_x", "accel_y", "accel_z"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureRecipe::HrAccelMag => "hr_accel_mag",
            FeatureRecipe::HrAccelXyz => "hr_accel_xyz",
        }
    }
}

impl FromStr for FeatureRecipe {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hr_accel_mag" => Ok(FeatureRecipe::HrAccelMag),
            "hr_accel_xyz" => Ok(FeatureRecipe::HrAccelXyz),
            _ => Err(Error::InvalidConfig(format!("unknown feature recipe `{s}`"))),
        }
    }
}

/// Aligned features plus the number of seconds that lacked a modality.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub matrix: FeatureMatrix,
    pub dropped_seconds: usize,
}

#[derive(Default)]
struct SecondAcc {
    sum: [f64; 3],
    count: usize,
}

fn per_second<F>(stream: &SensorStream, mut feature: F) -> BTreeMap<i64, SecondAcc>
where
    F: FnMut(&[f64]) -> [f64; 3],
{
    let mut acc: BTreeMap<i64, SecondAcc> = BTreeMap::new();
    for (ts, vals) in stream.samples() {
        let slot = acc.entry(ts.div_euclid(1000)).or_default();
        let f = feature(vals);
        for (s, v) in slot.sum.iter_mut().zip(f) {
            *s += v;
        }
        slot.count += 1;
    }
    acc
}

/// Aligns heart rate and accelerometer into one row per whole second.
///
/// A second is kept only if it has at least one sample of both modalities;
/// every other second seen in either stream is dropped and counted.
pub fn align_features(block: &RecordingBlock, recipe: FeatureRecipe) -> Result<Alignment> {
    let hr = block
        .stream(Modality::HeartRate)
        .ok_or(Error::MissingModality("block has no heart-rate samples"))?;
    let accel = block
        .stream(Modality::Accelerometer)
        .ok_or(Error::MissingModality("block has no accelerometer samples"))?;

    let hr_sec = per_second(hr, |v| [v[0], 0.0, 0.0]);
    let acc_sec = match recipe {
        FeatureRecipe::HrAccelMag => per_second(accel, |v| {
            [(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt(), 0.0, 0.0]
        }),
        FeatureRecipe::HrAccelXyz => per_second(accel, |v| [v[0], v[1], v[2]]),
    };

    let mut rows = Vec::new();
    let mut keys = Vec::new();
    for (&sec, h) in &hr_sec {
        let Some(a) = acc_sec.get(&sec) else { continue };
        let hr_mean = h.sum[0] / h.count as f64;
        let n = a.count as f64;
        let row = match recipe {
            FeatureRecipe::HrAccelMag => vec![hr_mean, a.sum[0] / n],
            FeatureRecipe::HrAccelXyz => vec![hr_mean, a.sum[0] / n, a.sum[1] / n, a.sum[2] / n],
        };
        rows.push(row);
        keys.push(RowKey::new(block.subject_id.clone(), sec));
    }
    let union = hr_sec.len() + acc_sec.keys().filter(|s| !hr_sec.contains_key(s)).count();
    let dropped_seconds = union - rows.len();
    let matrix = FeatureMatrix::new(rows, recipe.column_names(), keys)?;
    Ok(Alignment {
        matrix,
        dropped_seconds,
    })
}

/// Aligns every block that has both heart rate and accelerometer data and
/// concatenates the rows. Blocks missing a modality count all their seconds
/// as dropped.
pub fn align_blocks(blocks: &[RecordingBlock], recipe: FeatureRecipe) -> Result<Alignment> {
    let mut parts = Vec::new();
    let mut dropped = 0;
    for block in blocks {
        match align_features(block, recipe) {
            Ok(a) => {
                dropped += a.dropped_seconds;
                parts.push(a.matrix);
            }
            Err(Error::MissingModality(_)) => {
                let mut secs: Vec<i64> = block
                    .streams
                    .iter()
                    .flat_map(|s| s.timestamps().iter().map(|t| t.div_euclid(1000)))
                    .collect();
                secs.sort_unstable();
                secs.dedup();
                dropped += secs.len();
            }
            Err(e) => return Err(e),
        }
    }
    let matrix = if parts.is_empty() {
        FeatureMatrix::new(Vec::new(), recipe.column_names(), Vec::new())?
    } else {
        FeatureMatrix::vstack(&parts)?
    };
    Ok(Alignment {
        matrix,
        dropped_seconds: dropped,
    })
}
