//! Recording CSV: header `t_ms,ch0,...,ch7,cue`, one row per sample, cue one
//! of `relax`, `open`, `close`, `none` (lowercase only). Metadata lives in a
//! `<stem>.meta.json` sidecar.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::IoError;
use crate::types::{ArmCondition, Channels, EmgSample, Intent, Recording, Role, CHANNELS};

pub const HEADER: [&str; 10] = ["t_ms", "ch0", "ch1", "ch2", "ch3", "ch4", "ch5", "ch6", "ch7", "cue"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingMeta {
    pub id: String,
    pub condition: ArmCondition,
    pub iteration: u32,
    pub role: Role,
    pub sample_rate_hz: f64,
    #[serde(default)]
    pub subject_id: String,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.meta.json"))
}

pub fn cue_str(cue: Option<Intent>) -> &'static str {
    cue.map_or("none", Intent::as_str)
}

pub fn parse_cue(s: &str) -> Option<Option<Intent>> {
    match s {
        "none" => Some(None),
        other => other.parse().ok().map(Some),
    }
}

/// Writes the CSV body. Floats use the shortest representation that parses
/// back to the same value.
pub fn write_samples<W: Write>(samples: &[EmgSample], out: W) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER).map_err(csv_to_io)?;
    let mut row: Vec<String> = Vec::with_capacity(HEADER.len());
    for s in samples {
        row.clear();
        row.push(s.t_ms.to_string());
        row.extend(s.channels.iter().map(|v| v.to_string()));
        row.push(cue_str(s.cue).to_string());
        w.write_record(&row).map_err(csv_to_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_to_io(e: csv::Error) -> IoError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => IoError::Io(io),
        other => IoError::malformed(line, format!("{other:?}")),
    }
}

/// Reader that yields samples row by row, enforcing the header and strictly
/// increasing timestamps. Works over files and sockets alike.
pub struct SampleReader<R: Read> {
    inner: csv::Reader<R>,
    record: csv::StringRecord,
    previous: Option<u64>,
    header_checked: bool,
}

impl<R: Read> SampleReader<R> {
    pub fn new(reader: R) -> Self {
        let inner =
            csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::None).from_reader(reader);
        Self { inner, record: csv::StringRecord::new(), previous: None, header_checked: false }
    }

    fn read_record(&mut self) -> Result<bool, IoError> {
        self.inner.read_record(&mut self.record).map_err(csv_to_io)
    }

    fn line(&self) -> u64 {
        self.record.position().map_or(0, |p| p.line())
    }

    pub fn next_sample(&mut self) -> Result<Option<EmgSample>, IoError> {
        if !self.header_checked {
            if !self.read_record()? {
                return Err(IoError::malformed(1, "missing header"));
            }
            if self.record.iter().ne(HEADER.iter().copied()) {
                return Err(IoError::malformed(self.line(), format!("expected header `{}`", HEADER.join(","))));
            }
            self.header_checked = true;
        }
        if !self.read_record()? {
            return Ok(None);
        }
        let line = self.line();
        let sample = parse_record(&self.record, line)?;
        if let Some(previous) = self.previous {
            if sample.t_ms <= previous {
                return Err(IoError::ParseOrder { line, previous, got: sample.t_ms });
            }
        }
        self.previous = Some(sample.t_ms);
        Ok(Some(sample))
    }
}

fn parse_record(record: &csv::StringRecord, line: u64) -> Result<EmgSample, IoError> {
    if record.len() != HEADER.len() {
        return Err(IoError::malformed(line, format!("expected {} fields, found {}", HEADER.len(), record.len())));
    }
    let t_ms = record[0].parse::<u64>().map_err(|e| IoError::malformed(line, format!("t_ms `{}`: {e}", &record[0])))?;
    let mut channels: Channels = [0.0; CHANNELS];
    for (c, slot) in channels.iter_mut().enumerate() {
        let field = &record[c + 1];
        let v = field.parse::<f64>().map_err(|e| IoError::malformed(line, format!("ch{c} `{field}`: {e}")))?;
        if !v.is_finite() {
            return Err(IoError::malformed(line, format!("ch{c} is not finite")));
        }
        *slot = v;
    }
    let cue = parse_cue(&record[9])
        .ok_or_else(|| IoError::malformed(line, format!("cue `{}` is not relax, open, close or none", &record[9])))?;
    Ok(EmgSample::new(t_ms, channels, cue))
}

pub fn read_samples<R: Read>(reader: R) -> Result<Vec<EmgSample>, IoError> {
    let mut r = SampleReader::new(reader);
    let mut out = Vec::new();
    while let Some(s) = r.next_sample()? {
        out.push(s);
    }
    Ok(out)
}

pub fn write_recording(recording: &Recording, path: &Path) -> Result<(), IoError> {
    write_recording_for(recording, "", path)
}

pub fn write_recording_for(recording: &Recording, subject_id: &str, path: &Path) -> Result<(), IoError> {
    let file = File::create(path).map_err(IoError::file(path))?;
    write_samples(&recording.samples, BufWriter::new(file))?;
    let meta = RecordingMeta {
        id: recording.id.clone(),
        condition: recording.condition,
        iteration: recording.iteration,
        role: recording.role,
        sample_rate_hz: recording.sample_rate_hz,
        subject_id: subject_id.to_string(),
    };
    let sidecar = sidecar_path(path);
    std::fs::write(&sidecar, serde_json::to_string_pretty(&meta)?).map_err(IoError::file(sidecar))?;
    Ok(())
}

pub fn read_recording(path: &Path) -> Result<Recording, IoError> {
    read_recording_with_meta(path).map(|(r, _)| r)
}

pub fn read_recording_with_meta(path: &Path) -> Result<(Recording, RecordingMeta), IoError> {
    let sidecar = sidecar_path(path);
    let meta_text = std::fs::read_to_string(&sidecar).map_err(IoError::file(&sidecar))?;
    let meta: RecordingMeta = serde_json::from_str(&meta_text)?;
    let file = File::open(path).map_err(IoError::file(path))?;
    let samples = read_samples(std::io::BufReader::new(file))?;
    let recording = Recording {
        id: meta.id.clone(),
        iteration: meta.iteration,
        condition: meta.condition,
        role: meta.role,
        samples,
        sample_rate_hz: meta.sample_rate_hz,
    };
    Ok((recording, meta))
}
