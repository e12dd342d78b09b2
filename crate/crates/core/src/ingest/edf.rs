//! EDF / EDF+ reader for 16-bit recordings.
//!
//! Header text fields are kept with trailing padding removed so that
//! [`EdfHeader::to_bytes`] re-emits the original header byte for byte.

use crate::dsp::Recording;
use crate::error::{Error, Result};

pub const ANNOTATION_LABEL: &str = "EDF Annotations";

/// One `(onset, duration, code)` entry from an EDF+ annotation list.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationEvent {
    pub onset: f64,
    pub duration: f64,
    pub code: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalHeader {
    pub label: String,
    pub transducer: String,
    pub physical_dimension: String,
    pub physical_min: String,
    pub physical_max: String,
    pub digital_min: String,
    pub digital_max: String,
    pub prefiltering: String,
    pub samples_per_record: String,
    pub reserved: String,
}

/// Numeric view of a signal header.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalScale {
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: f64,
    pub digital_max: f64,
}

impl SignalScale {
    /// Linear digital → physical map.
    pub fn to_physical(&self, digital: i16) -> f64 {
        self.physical_min
            + (digital as f64 - self.digital_min) * (self.physical_max - self.physical_min)
                / (self.digital_max - self.digital_min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdfHeader {
    pub version: String,
    pub patient_id: String,
    pub recording_id: String,
    pub start_date: String,
    pub start_time: String,
    pub header_bytes: String,
    pub reserved: String,
    pub n_records: String,
    pub record_duration: String,
    pub n_signals: String,
    pub signals: Vec<SignalHeader>,
}

const FIXED_FIELDS: [usize; 10] = [8, 80, 80, 8, 8, 8, 44, 8, 8, 4];
const SIGNAL_FIELDS: [usize; 10] = [16, 80, 8, 8, 8, 8, 8, 80, 8, 32];

fn pad(out: &mut Vec<u8>, value: &str, width: usize) {
    let bytes = value.as_bytes();
    let n = bytes.len().min(width);
    out.extend_from_slice(&bytes[..n]);
    out.extend(std::iter::repeat_n(b' ', width - n));
}

fn numeric<T: std::str::FromStr>(raw: &str, offset: usize, what: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| Error::parse(offset, format!("{what}: `{}` is not a number", raw.trim())))
}

impl EdfHeader {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 256 {
            return Err(Error::parse(bytes.len(), "truncated fixed header (need 256 bytes)"));
        }
        let mut pos = 0;
        let mut fixed = Vec::with_capacity(10);
        for w in FIXED_FIELDS {
            fixed.push(ascii_field(bytes, pos, w)?);
            pos += w;
        }
        let ns: usize = numeric(&fixed[9], 252, "signal count")?;
        let total = 256 * (1 + ns);
        if bytes.len() < total {
            return Err(Error::parse(
                bytes.len(),
                format!("truncated signal headers: {ns} signals need {total} header bytes"),
            ));
        }
        // Signal header fields are stored field-major: all labels, then all
        // transducers, and so on.
        let mut columns: Vec<Vec<String>> = Vec::with_capacity(10);
        for w in SIGNAL_FIELDS {
            let mut col = Vec::with_capacity(ns);
            for _ in 0..ns {
                col.push(ascii_field(bytes, pos, w)?);
                pos += w;
            }
            columns.push(col);
        }
        let signals = (0..ns)
            .map(|i| SignalHeader {
                label: columns[0][i].clone(),
                transducer: columns[1][i].clone(),
                physical_dimension: columns[2][i].clone(),
                physical_min: columns[3][i].clone(),
                physical_max: columns[4][i].clone(),
                digital_min: columns[5][i].clone(),
                digital_max: columns[6][i].clone(),
                prefiltering: columns[7][i].clone(),
                samples_per_record: columns[8][i].clone(),
                reserved: columns[9][i].clone(),
            })
            .collect();
        let mut it = fixed.into_iter();
        let mut next = || it.next().unwrap();
        let header = EdfHeader {
            version: next(),
            patient_id: next(),
            recording_id: next(),
            start_date: next(),
            start_time: next(),
            header_bytes: next(),
            reserved: next(),
            n_records: next(),
            record_duration: next(),
            n_signals: next(),
            signals,
        };
        header.validate()?;
        Ok(header)
    }

    fn validate(&self) -> Result<()> {
        let hb: usize = numeric(&self.header_bytes, 184, "header byte count")?;
        if hb != self.header_len() {
            return Err(Error::parse(
                184,
                format!("header byte count {hb} != 256·(1 + {})", self.signals.len()),
            ));
        }
        let _: i64 = numeric(&self.n_records, 236, "data record count")?;
        let dur: f64 = numeric(&self.record_duration, 244, "record duration")?;
        if !(dur > 0.0) {
            return Err(Error::parse(
                244,
                format!("record duration must be positive, got {dur}"),
            ));
        }
        let ns = self.signals.len();
        let field_offset = |field: usize, i: usize| -> usize {
            256 + SIGNAL_FIELDS[..field].iter().sum::<usize>() * ns + SIGNAL_FIELDS[field] * i
        };
        for (i, s) in self.signals.iter().enumerate() {
            let _: f64 = numeric(&s.physical_min, field_offset(3, i), "physical minimum")?;
            let _: f64 = numeric(&s.physical_max, field_offset(4, i), "physical maximum")?;
            let dmin: i64 = numeric(&s.digital_min, field_offset(5, i), "digital minimum")?;
            let dmax: i64 = numeric(&s.digital_max, field_offset(6, i), "digital maximum")?;
            if dmax <= dmin {
                return Err(Error::parse(
                    field_offset(6, i),
                    format!("signal `{}`: digital max {dmax} <= digital min {dmin}", s.label),
                ));
            }
            let _: usize = numeric(&s.samples_per_record, field_offset(8, i), "samples per record")?;
        }
        Ok(())
    }

    pub fn header_len(&self) -> usize {
        256 * (1 + self.signals.len())
    }

    pub fn record_duration_s(&self) -> f64 {
        self.record_duration.trim().parse().unwrap_or(0.0)
    }

    /// Declared record count; `-1` means unknown.
    pub fn declared_records(&self) -> i64 {
        self.n_records.trim().parse().unwrap_or(-1)
    }

    pub fn samples_per_record(&self, signal: usize) -> usize {
        self.signals[signal].samples_per_record.trim().parse().unwrap_or(0)
    }

    pub fn scale(&self, signal: usize) -> SignalScale {
        let s = &self.signals[signal];
        let f = |v: &str| v.trim().parse::<f64>().unwrap_or(0.0);
        SignalScale {
            physical_min: f(&s.physical_min),
            physical_max: f(&s.physical_max),
            digital_min: f(&s.digital_min),
            digital_max: f(&s.digital_max),
        }
    }

    pub fn is_annotation(&self, signal: usize) -> bool {
        self.signals[signal].label.trim() == ANNOTATION_LABEL
    }

    /// Bytes of one data record across all signals.
    pub fn record_size(&self) -> usize {
        (0..self.signals.len()).map(|i| 2 * self.samples_per_record(i)).sum()
    }

    /// Serializes the header (fixed part plus signal headers).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.header_len());
        let fixed = [
            &self.version,
            &self.patient_id,
            &self.recording_id,
            &self.start_date,
            &self.start_time,
            &self.header_bytes,
            &self.reserved,
            &self.n_records,
            &self.record_duration,
            &self.n_signals,
        ];
        for (v, w) in fixed.into_iter().zip(FIXED_FIELDS) {
            pad(&mut out, v, w);
        }
        let getters: [fn(&SignalHeader) -> &String; 10] = [
            |s| &s.label,
            |s| &s.transducer,
            |s| &s.physical_dimension,
            |s| &s.physical_min,
            |s| &s.physical_max,
            |s| &s.digital_min,
            |s| &s.digital_max,
            |s| &s.prefiltering,
            |s| &s.samples_per_record,
            |s| &s.reserved,
        ];
        for (get, w) in getters.into_iter().zip(SIGNAL_FIELDS) {
            for s in &self.signals {
                pad(&mut out, get(s), w);
            }
        }
        out
    }
}

fn ascii_field(bytes: &[u8], offset: usize, width: usize) -> Result<String> {
    let raw = &bytes[offset..offset + width];
    if let Some(bad) = raw.iter().position(|b| !(0x20..=0x7e).contains(b)) {
        return Err(Error::parse(offset + bad, "non-printable byte in ASCII header"));
    }
    Ok(String::from_utf8_lossy(raw).trim_end().to_string())
}

/// A parsed file: header, ordinary signals as a recording, and annotations.
#[derive(Debug, Clone)]
pub struct EdfFile {
    pub header: EdfHeader,
    pub recording: Recording,
    pub annotations: Vec<AnnotationEvent>,
}

/// Parses a complete EDF/EDF+ byte stream.
pub fn parse_edf(bytes: &[u8]) -> Result<EdfFile> {
    let header = EdfHeader::parse(bytes)?;
    let header_len = header.header_len();
    let record_size = header.record_size();
    let body = bytes.len() - header_len;
    let n_records = match header.declared_records() {
        -1 if record_size > 0 => body / record_size,
        n if n >= 0 => n as usize,
        n => return Err(Error::parse(236, format!("invalid data record count {n}"))),
    };
    let needed = n_records
        .checked_mul(record_size)
        .ok_or_else(|| Error::parse(236, "data section size overflows"))?;
    if body < needed {
        return Err(Error::parse(
            bytes.len(),
            format!("truncated data: {n_records} records of {record_size} bytes need {needed}, found {body}"),
        ));
    }
    if body != needed {
        return Err(Error::parse(
            header_len + needed,
            format!("{} trailing bytes do not form a whole data record", body - needed),
        ));
    }

    let ns = header.signals.len();
    let ordinary: Vec<usize> = (0..ns).filter(|&i| !header.is_annotation(i)).collect();
    let spr = ordinary.first().map(|&i| header.samples_per_record(i)).unwrap_or(0);
    if let Some(&odd) = ordinary.iter().find(|&&i| header.samples_per_record(i) != spr) {
        return Err(Error::Data(format!(
            "signal `{}` has {} samples per record, expected {spr}; mixed rates are unsupported",
            header.signals[odd].label,
            header.samples_per_record(odd)
        )));
    }
    let scales: Vec<SignalScale> = ordinary.iter().map(|&i| header.scale(i)).collect();
    let c = ordinary.len();
    let mut data = vec![0.0; n_records * spr * c];
    let mut annotations = Vec::new();
    let mut pos = header_len;
    for r in 0..n_records {
        let mut ch = 0;
        for i in 0..ns {
            let n = header.samples_per_record(i);
            let chunk = &bytes[pos..pos + 2 * n];
            if header.is_annotation(i) {
                annotations.extend(parse_tal_block(chunk, pos)?);
            } else {
                for (k, pair) in chunk.chunks_exact(2).enumerate() {
                    let d = i16::from_le_bytes([pair[0], pair[1]]);
                    data[(r * spr + k) * c + ch] = scales[ch].to_physical(d);
                }
                ch += 1;
            }
            pos += 2 * n;
        }
    }

    let recording = if c > 0 && spr > 0 {
        let fs = spr as f64 / header.record_duration_s();
        let labels = ordinary
            .iter()
            .map(|&i| header.signals[i].label.trim().to_string())
            .collect();
        Recording::new(data, fs, labels)?
    } else {
        return Err(Error::Data("file holds no ordinary signals".into()));
    };
    Ok(EdfFile {
        header,
        recording,
        annotations,
    })
}

/// Decodes the time-stamped annotation lists in one record's annotation
/// bytes. Empty annotations (record timekeeping) are skipped.
pub fn parse_tal_block(block: &[u8], base_offset: usize) -> Result<Vec<AnnotationEvent>> {
    let mut events = Vec::new();
    let mut start = 0;
    while start < block.len() {
        let end = block[start..]
            .iter()
            .position(|&b| b == 0)
            .map(|p| start + p)
            .unwrap_or(block.len());
        let tal = &block[start..end];
        if !tal.is_empty() {
            events.extend(parse_tal(tal, base_offset + start)?);
        }
        start = end + 1;
    }
    Ok(events)
}

fn parse_tal(tal: &[u8], offset: usize) -> Result<Vec<AnnotationEvent>> {
    let text =
        std::str::from_utf8(tal).map_err(|e| Error::parse(offset + e.valid_up_to(), "annotation is not UTF-8"))?;
    let mut parts = text.split('\u{14}');
    let stamp = parts.next().unwrap_or_default();
    let (onset_raw, duration_raw) = match stamp.split_once('\u{15}') {
        Some((o, d)) => (o, Some(d)),
        None => (stamp, None),
    };
    if !(onset_raw.starts_with('+') || onset_raw.starts_with('-')) {
        return Err(Error::parse(
            offset,
            format!("annotation onset `{onset_raw}` lacks a sign"),
        ));
    }
    let onset: f64 = onset_raw
        .parse()
        .map_err(|_| Error::parse(offset, format!("bad annotation onset `{onset_raw}`")))?;
    let duration = match duration_raw {
        Some(d) => d
            .trim()
            .parse()
            .map_err(|_| Error::parse(offset + onset_raw.len() + 1, format!("bad annotation duration `{d}`")))?,
        None => 0.0,
    };
    if onset < 0.0 || duration < 0.0 {
        return Err(Error::parse(offset, "negative annotation onset or duration"));
    }
    Ok(parts
        .filter(|code| !code.is_empty())
        .map(|code| AnnotationEvent {
            onset,
            duration,
            code: code.to_string(),
        })
        .collect())
}

/// Encodes a recording (and optional annotations) as an EDF+ file with
/// one-second data records. Samples are quantized to 16 bits over
/// `physical_range`.
pub fn write_edf(rec: &Recording, annotations: &[AnnotationEvent], physical_range: (f64, f64)) -> Result<Vec<u8>> {
    let fs = rec.fs();
    if fs.fract() != 0.0 {
        return Err(Error::Config(format!(
            "EDF writer needs an integral sampling rate, got {fs}"
        )));
    }
    let spr = fs as usize;
    let n_records = rec.n_samples().div_ceil(spr);
    let (pmin, pmax) = physical_range;
    let (dmin, dmax) = (-32768.0, 32767.0);
    let fmt = |v: f64| {
        let s = format!("{v}");
        s.chars().take(8).collect::<String>()
    };

    // Annotation TALs go in the first record after its timekeeping entry;
    // later records carry only timekeeping.
    let mut tal_records: Vec<Vec<u8>> = (0..n_records)
        .map(|r| format!("+{r}\u{14}\u{14}\0").into_bytes())
        .collect();
    if let Some(first) = tal_records.first_mut() {
        for a in annotations {
            first.extend_from_slice(format!("+{}\u{15}{}\u{14}{}\u{14}\0", a.onset, a.duration, a.code).as_bytes());
        }
    }
    let annot_spr = tal_records
        .iter()
        .map(|t| t.len().div_ceil(2))
        .max()
        .unwrap_or(1)
        .max(1);

    let mut signals: Vec<SignalHeader> = rec
        .channel_labels()
        .iter()
        .map(|label| SignalHeader {
            label: label.clone(),
            transducer: String::new(),
            physical_dimension: "uV".into(),
            physical_min: fmt(pmin),
            physical_max: fmt(pmax),
            digital_min: "-32768".into(),
            digital_max: "32767".into(),
            prefiltering: String::new(),
            samples_per_record: spr.to_string(),
            reserved: String::new(),
        })
        .collect();
    signals.push(SignalHeader {
        label: ANNOTATION_LABEL.into(),
        transducer: String::new(),
        physical_dimension: String::new(),
        physical_min: "-1".into(),
        physical_max: "1".into(),
        digital_min: "-32768".into(),
        digital_max: "32767".into(),
        prefiltering: String::new(),
        samples_per_record: annot_spr.to_string(),
        reserved: String::new(),
    });
    let ns = signals.len();
    let header = EdfHeader {
        version: "0".into(),
        patient_id: "X X X X".into(),
        recording_id: "Startdate X X X X".into(),
        start_date: "01.01.00".into(),
        start_time: "00.00.00".into(),
        header_bytes: (256 * (1 + ns)).to_string(),
        reserved: "EDF+C".into(),
        n_records: n_records.to_string(),
        record_duration: "1".into(),
        n_signals: ns.to_string(),
        signals,
    };
    let mut out = header.to_bytes();
    let c = rec.n_channels();
    let scale = (dmax - dmin) / (pmax - pmin);
    for (r, tal) in tal_records.iter().enumerate() {
        for ch in 0..c {
            for k in 0..spr {
                let t = r * spr + k;
                let v = if t < rec.n_samples() {
                    rec.data()[t * c + ch]
                } else {
                    0.0
                };
                let d = (dmin + (v - pmin) * scale).round().clamp(dmin, dmax) as i16;
                out.extend_from_slice(&d.to_le_bytes());
            }
        }
        let mut block = tal.clone();
        block.resize(annot_spr * 2, 0);
        out.extend_from_slice(&block);
    }
    Ok(out)
}
