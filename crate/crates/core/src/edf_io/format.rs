//! EDF container: fixed 256-byte header, 256 bytes per signal, then data
//! records of 16-bit little-endian two's-complement samples.

use chrono::{Datelike, NaiveDate, NaiveDateTime, NaiveTime, Timelike};

use super::recording::{Channel, Recording};
use crate::error::{Error, Result};

const FIXED_HEADER: usize = 256;
const PER_SIGNAL: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct EdfHeader {
    pub version: String,
    pub patient_info: String,
    pub recording_info: String,
    pub start_datetime: NaiveDateTime,
    pub header_bytes: usize,
    pub n_records: usize,
    pub record_duration: f64,
    pub n_signals: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SignalSpec {
    pub label: String,
    pub transducer: String,
    pub physical_dimension: String,
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
    pub prefiltering: String,
    pub samples_per_record: usize,
}

impl SignalSpec {
    /// Full 16-bit digital range over the given physical range.
    pub fn new(label: &str, physical_min: f64, physical_max: f64, samples_per_record: usize) -> Self {
        SignalSpec {
            label: label.to_string(),
            transducer: String::new(),
            physical_dimension: "uV".to_string(),
            physical_min,
            physical_max,
            digital_min: -32768,
            digital_max: 32767,
            prefiltering: String::new(),
            samples_per_record,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.digital_min >= self.digital_max {
            return Err(Error::Header(format!("{}: digital_min must be below digital_max", self.label)));
        }
        if self.digital_min < i16::MIN as i32 || self.digital_max > i16::MAX as i32 {
            return Err(Error::Header(format!("{}: digital range exceeds 16 bits", self.label)));
        }
        if self.physical_min == self.physical_max || !self.physical_min.is_finite() || !self.physical_max.is_finite() {
            return Err(Error::Header(format!("{}: degenerate physical range", self.label)));
        }
        if self.samples_per_record == 0 {
            return Err(Error::Header(format!("{}: zero samples per record", self.label)));
        }
        Ok(())
    }

    fn gain(&self) -> f64 {
        (self.physical_max - self.physical_min) / (self.digital_max - self.digital_min) as f64
    }

    pub fn to_physical(&self, digital: i16) -> f64 {
        (digital as i32 - self.digital_min) as f64 * self.gain() + self.physical_min
    }

    pub fn to_digital(&self, physical: f64) -> i16 {
        let d = ((physical - self.physical_min) / self.gain()).round() + self.digital_min as f64;
        d.clamp(self.digital_min as f64, self.digital_max as f64) as i16
    }

    /// One digital step in physical units.
    pub fn quantum(&self) -> f64 {
        self.gain().abs()
    }
}

/// Header plus signal table of an EDF byte stream.
#[derive(Clone, Debug, PartialEq)]
pub struct EdfFile {
    pub header: EdfHeader,
    pub signals: Vec<SignalSpec>,
}

struct Fields<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Fields<'a> {
    fn take(&mut self, width: usize, what: &str) -> Result<&'a str> {
        let end = self.pos + width;
        if end > self.bytes.len() {
            return Err(Error::Truncated(format!("header ends inside the {what} field")));
        }
        let raw = &self.bytes[self.pos..end];
        self.pos = end;
        std::str::from_utf8(raw)
            .map(str::trim)
            .map_err(|_| Error::Header(format!("{what} is not ASCII")))
    }

    fn number<T: std::str::FromStr>(&mut self, width: usize, what: &str) -> Result<T> {
        let s = self.take(width, what)?;
        s.parse::<T>()
            .map_err(|_| Error::Header(format!("{what} is not numeric: {s:?}")))
    }
}

fn parse_datetime(date: &str, time: &str) -> Result<NaiveDateTime> {
    let bad = || Error::Header(format!("bad start date/time {date:?} {time:?}"));
    let d: Vec<u32> = date.split('.').map(|p| p.parse().map_err(|_| bad())).collect::<Result<_>>()?;
    let t: Vec<u32> = time.split('.').map(|p| p.parse().map_err(|_| bad())).collect::<Result<_>>()?;
    if d.len() != 3 || t.len() != 3 {
        return Err(bad());
    }
    let year = if d[2] >= 85 { 1900 + d[2] } else { 2000 + d[2] } as i32;
    let date = NaiveDate::from_ymd_opt(year, d[1], d[0]).ok_or_else(bad)?;
    let time = NaiveTime::from_hms_opt(t[0], t[1], t[2]).ok_or_else(bad)?;
    Ok(NaiveDateTime::new(date, time))
}

fn parse_header(bytes: &[u8]) -> Result<EdfFile> {
    if bytes.len() < FIXED_HEADER {
        return Err(Error::Truncated(format!("{} bytes is shorter than the fixed header", bytes.len())));
    }
    let mut f = Fields { bytes, pos: 0 };
    let version = f.take(8, "version")?.to_string();
    let patient_info = f.take(80, "patient")?.to_string();
    let recording_info = f.take(80, "recording")?.to_string();
    let date = f.take(8, "start date")?.to_string();
    let time = f.take(8, "start time")?.to_string();
    let start_datetime = parse_datetime(&date, &time)?;
    let header_bytes: usize = f.number(8, "header bytes")?;
    f.take(44, "reserved")?;
    let n_records: i64 = f.number(8, "number of records")?;
    let record_duration: f64 = f.number(8, "record duration")?;
    let n_signals: usize = f.number(4, "number of signals")?;

    if n_records < 0 {
        return Err(Error::Header("unknown record count (-1) is not supported".into()));
    }
    if record_duration <= 0.0 || !record_duration.is_finite() {
        return Err(Error::Header(format!("record duration {record_duration} must be positive")));
    }
    if n_signals == 0 {
        return Err(Error::Header("no signals".into()));
    }
    if header_bytes != FIXED_HEADER + PER_SIGNAL * n_signals {
        return Err(Error::Header(format!(
            "header_bytes {header_bytes} != 256·(n_signals+1) = {}",
            FIXED_HEADER + PER_SIGNAL * n_signals
        )));
    }
    if bytes.len() < header_bytes {
        return Err(Error::Truncated(format!("signal table needs {header_bytes} bytes, have {}", bytes.len())));
    }

    let ns = n_signals;
    let mut cols: Vec<Vec<String>> = Vec::new();
    for (width, what) in [
        (16, "label"),
        (80, "transducer"),
        (8, "physical dimension"),
        (8, "physical minimum"),
        (8, "physical maximum"),
        (8, "digital minimum"),
        (8, "digital maximum"),
        (80, "prefiltering"),
        (8, "samples per record"),
        (32, "reserved"),
    ] {
        let mut col = Vec::with_capacity(ns);
        for _ in 0..ns {
            col.push(f.take(width, what)?.to_string());
        }
        cols.push(col);
    }
    let num = |s: &str, what: &str| -> Result<f64> {
        s.parse::<f64>().map_err(|_| Error::Header(format!("{what} is not numeric: {s:?}")))
    };
    let int = |s: &str, what: &str| -> Result<i64> {
        s.parse::<i64>().map_err(|_| Error::Header(format!("{what} is not an integer: {s:?}")))
    };
    let mut signals = Vec::with_capacity(ns);
    for i in 0..ns {
        let spr = int(&cols[8][i], "samples per record")?;
        if spr <= 0 {
            return Err(Error::Header(format!("signal {i}: samples per record must be positive")));
        }
        let spec = SignalSpec {
            label: cols[0][i].clone(),
            transducer: cols[1][i].clone(),
            physical_dimension: cols[2][i].clone(),
            physical_min: num(&cols[3][i], "physical minimum")?,
            physical_max: num(&cols[4][i], "physical maximum")?,
            digital_min: int(&cols[5][i], "digital minimum")? as i32,
            digital_max: int(&cols[6][i], "digital maximum")? as i32,
            prefiltering: cols[7][i].clone(),
            samples_per_record: spr as usize,
        };
        spec.validate()?;
        signals.push(spec);
    }
    Ok(EdfFile {
        header: EdfHeader {
            version,
            patient_info,
            recording_info,
            start_datetime,
            header_bytes,
            n_records: n_records as usize,
            record_duration,
            n_signals,
        },
        signals,
    })
}

/// Parses the header only.
pub fn parse_edf_header(bytes: &[u8]) -> Result<EdfFile> {
    parse_header(bytes)
}

/// Parses a complete EDF byte stream into physical-unit channels.
pub fn parse_edf(bytes: &[u8]) -> Result<Recording> {
    let file = parse_header(bytes)?;
    let h = &file.header;
    let record_samples: usize = file.signals.iter().map(|s| s.samples_per_record).sum();
    let expected = h.n_records * record_samples * 2;
    let found = bytes.len() - h.header_bytes;
    if found != expected {
        return Err(Error::DataLength { expected, found });
    }
    let mut samples: Vec<Vec<f64>> = file
        .signals
        .iter()
        .map(|s| Vec::with_capacity(s.samples_per_record * h.n_records))
        .collect();
    let mut pos = h.header_bytes;
    for _ in 0..h.n_records {
        for (spec, out) in file.signals.iter().zip(samples.iter_mut()) {
            let end = pos + spec.samples_per_record * 2;
            out.extend(
                bytes[pos..end]
                    .chunks_exact(2)
                    .map(|b| spec.to_physical(i16::from_le_bytes([b[0], b[1]]))),
            );
            pos = end;
        }
    }
    let channels = file
        .signals
        .iter()
        .zip(samples)
        .map(|(spec, s)| Channel {
            label: spec.label.clone(),
            sampling_rate: spec.samples_per_record as f64 / h.record_duration,
            samples: s,
        })
        .collect();
    Recording::new(channels, h.start_datetime)
}

fn field(out: &mut Vec<u8>, value: &str, width: usize, what: &str) -> Result<()> {
    if !value.is_ascii() {
        return Err(Error::invalid(format!("{what} must be ASCII")));
    }
    if value.len() > width {
        return Err(Error::invalid(format!("{what} {value:?} exceeds {width} characters")));
    }
    out.extend_from_slice(value.as_bytes());
    out.extend(std::iter::repeat_n(b' ', width - value.len()));
    Ok(())
}

/// Shortest decimal rendering of `x` that fits in `width` characters.
fn fit_number(x: f64, width: usize) -> Result<String> {
    let plain = format!("{x}");
    if plain.len() <= width {
        return Ok(plain);
    }
    for prec in (0..width).rev() {
        let s = format!("{x:.prec$}");
        if s.len() <= width {
            return Ok(s);
        }
    }
    Err(Error::invalid(format!("{x} cannot be written in {width} characters")))
}

/// Signal spec as it reads back after its numeric fields pass through text.
fn as_stored(spec: &SignalSpec) -> Result<SignalSpec> {
    let mut s = spec.clone();
    s.physical_min = fit_number(spec.physical_min, 8)?.parse().expect("formatted number");
    s.physical_max = fit_number(spec.physical_max, 8)?.parse().expect("formatted number");
    s.validate()?;
    Ok(s)
}

/// Serializes a recording. `specs[i]` describes `recording.channels()[i]`.
pub fn write_edf(recording: &Recording, specs: &[SignalSpec]) -> Result<Vec<u8>> {
    let channels = recording.channels();
    if channels.is_empty() {
        return Err(Error::invalid("cannot write a recording without channels"));
    }
    if specs.len() != channels.len() {
        return Err(Error::invalid(format!("{} specs for {} channels", specs.len(), channels.len())));
    }
    let stored: Vec<SignalSpec> = specs.iter().map(as_stored).collect::<Result<_>>()?;

    let duration = stored[0].samples_per_record as f64 / channels[0].sampling_rate;
    let n_records = channels[0].samples.len() / stored[0].samples_per_record;
    for (ch, spec) in channels.iter().zip(&stored) {
        let d = spec.samples_per_record as f64 / ch.sampling_rate;
        if (d - duration).abs() > 1e-9 * duration {
            return Err(Error::invalid(format!(
                "{}: record duration {d} s differs from {duration} s",
                ch.label
            )));
        }
        if ch.samples.len() != n_records * spec.samples_per_record {
            return Err(Error::invalid(format!(
                "{}: {} samples is not {n_records} whole records of {}",
                ch.label,
                ch.samples.len(),
                spec.samples_per_record
            )));
        }
        let (lo, hi) = (spec.physical_min.min(spec.physical_max), spec.physical_min.max(spec.physical_max));
        let slack = 1e-9 * (hi - lo);
        if let Some(v) = ch.samples.iter().find(|v| !(**v >= lo - slack && **v <= hi + slack)) {
            return Err(Error::invalid(format!(
                "{}: value {v} outside physical range [{lo}, {hi}]",
                ch.label
            )));
        }
    }

    let ns = channels.len();
    let header_bytes = FIXED_HEADER + PER_SIGNAL * ns;
    let total_samples: usize = channels.iter().map(|c| c.samples.len()).sum();
    let mut out = Vec::with_capacity(header_bytes + 2 * total_samples);
    let start = recording.start_datetime();
    field(&mut out, "0", 8, "version")?;
    field(&mut out, "X X X X", 80, "patient")?;
    field(&mut out, "Startdate X X X X", 80, "recording")?;
    let date = format!("{:02}.{:02}.{:02}", start.day(), start.month(), start.year().rem_euclid(100));
    let time = format!("{:02}.{:02}.{:02}", start.hour(), start.minute(), start.second());
    field(&mut out, &date, 8, "start date")?;
    field(&mut out, &time, 8, "start time")?;
    field(&mut out, &header_bytes.to_string(), 8, "header bytes")?;
    field(&mut out, "", 44, "reserved")?;
    field(&mut out, &n_records.to_string(), 8, "number of records")?;
    field(&mut out, &fit_number(duration, 8)?, 8, "record duration")?;
    field(&mut out, &ns.to_string(), 4, "number of signals")?;

    let text_cols: [(usize, &str, fn(&SignalSpec) -> String); 3] = [
        (16, "label", |s| s.label.clone()),
        (80, "transducer", |s| s.transducer.clone()),
        (8, "physical dimension", |s| s.physical_dimension.clone()),
    ];
    for (w, what, get) in text_cols {
        for s in &stored {
            field(&mut out, &get(s), w, what)?;
        }
    }
    for s in &stored {
        field(&mut out, &fit_number(s.physical_min, 8)?, 8, "physical minimum")?;
    }
    for s in &stored {
        field(&mut out, &fit_number(s.physical_max, 8)?, 8, "physical maximum")?;
    }
    for s in &stored {
        field(&mut out, &s.digital_min.to_string(), 8, "digital minimum")?;
    }
    for s in &stored {
        field(&mut out, &s.digital_max.to_string(), 8, "digital maximum")?;
    }
    for s in &stored {
        field(&mut out, &s.prefiltering, 80, "prefiltering")?;
    }
    for s in &stored {
        field(&mut out, &s.samples_per_record.to_string(), 8, "samples per record")?;
    }
    for _ in &stored {
        field(&mut out, "", 32, "reserved")?;
    }
    debug_assert_eq!(out.len(), header_bytes);

    for r in 0..n_records {
        for (ch, spec) in channels.iter().zip(&stored) {
            let spr = spec.samples_per_record;
            for &v in &ch.samples[r * spr..(r + 1) * spr] {
                out.extend_from_slice(&spec.to_digital(v).to_le_bytes());
            }
        }
    }
    Ok(out)
}
