//! File formats: annotation CSV, scenario files, detection streams, and
//! TOML configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox, FrameDims};
use crate::pipeline::{FrameResult, PipelineConfig};
use crate::simulation::{Scenario, Track};

pub const DETECTIONS_FORMAT: &str = "cropdet-detections";
pub const DETECTIONS_VERSION: u32 = 1;
const SCENARIO_MAGIC: &str = "# cropdet scenario v1";
const CSV_COLUMNS: &str = "# frame,track_id,x,y,w,h,class";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("line {line}, field {field}: {message}")]
    Field {
        line: usize,
        field: String,
        message: String,
    },
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("invalid config: {0}")]
    Config(String),
}

impl ParseError {
    fn field(line: usize, field: impl Into<String>, message: impl Into<String>) -> Self {
        ParseError::Field {
            line,
            field: field.into(),
            message: message.into(),
        }
    }
}

/// One row of a per-frame, per-track annotation export.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnotationRecord {
    pub frame_idx: u64,
    pub track_id: u32,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub class_id: u32,
}

impl AnnotationRecord {
    pub fn bbox(&self) -> BBox {
        BBox::new(self.x, self.y, self.w, self.h)
    }
}

const FIELDS: [&str; 7] = ["frame", "track_id", "x", "y", "w", "h", "class"];

fn parse_number(raw: &str, line: usize, field: &str) -> Result<f64, ParseError> {
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| ParseError::field(line, field, format!("not a number: {raw:?}")))?;
    if !v.is_finite() {
        return Err(ParseError::field(line, field, "not finite"));
    }
    Ok(v)
}

fn parse_count(raw: &str, line: usize, field: &str) -> Result<u64, ParseError> {
    let v = parse_number(raw, line, field)?;
    if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 * 4096.0 {
        return Err(ParseError::field(
            line,
            field,
            format!("expected a non-negative integer, got {raw:?}"),
        ));
    }
    Ok(v as u64)
}

fn narrow(v: u64, line: usize, field: &str) -> Result<u32, ParseError> {
    u32::try_from(v).map_err(|_| ParseError::field(line, field, "value too large"))
}

/// Parses `frame,track_id,x,y,w,h,class` records. Blank lines and lines
/// starting with `#` are skipped; line numbers in errors are 1-based.
pub fn parse_annotation_records(text: &str) -> Result<Vec<AnnotationRecord>, ParseError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = trimmed.split(',').collect();
        if cols.len() != FIELDS.len() {
            return Err(ParseError::Line {
                line,
                message: format!("expected {} comma-separated fields, found {}", FIELDS.len(), cols.len()),
            });
        }
        let frame_idx = parse_count(cols[0], line, FIELDS[0])?;
        let track_id = narrow(parse_count(cols[1], line, FIELDS[1])?, line, FIELDS[1])?;
        let x = parse_number(cols[2], line, FIELDS[2])?;
        let y = parse_number(cols[3], line, FIELDS[3])?;
        let w = parse_number(cols[4], line, FIELDS[4])?;
        let h = parse_number(cols[5], line, FIELDS[5])?;
        for (v, name) in [(w, FIELDS[4]), (h, FIELDS[5])] {
            if v <= 0.0 {
                return Err(ParseError::field(line, name, format!("must be positive, got {v}")));
            }
        }
        let class_id = narrow(parse_count(cols[6], line, FIELDS[6])?, line, FIELDS[6])?;
        out.push(AnnotationRecord {
            frame_idx,
            track_id,
            x,
            y,
            w,
            h,
            class_id,
        });
    }
    Ok(out)
}

/// Ground-truth boxes grouped by frame.
pub fn parse_annotations(text: &str) -> Result<BTreeMap<u64, Vec<BBox>>, ParseError> {
    let mut map: BTreeMap<u64, Vec<BBox>> = BTreeMap::new();
    for r in parse_annotation_records(text)? {
        map.entry(r.frame_idx).or_default().push(r.bbox());
    }
    Ok(map)
}

/// Scenario as annotation CSV behind a commented header carrying the frame
/// size, frame count and seed. Rows are frame-major, then by track id.
pub fn write_scenario(s: &Scenario) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{SCENARIO_MAGIC}");
    let _ = writeln!(out, "# dims={}x{}", s.dims.width, s.dims.height);
    let _ = writeln!(out, "# num_frames={}", s.num_frames);
    let _ = writeln!(out, "# seed={}", s.seed);
    let _ = writeln!(out, "{CSV_COLUMNS}");
    for (frame, gts) in s.frames().iter().enumerate() {
        for (id, b) in gts {
            let _ = writeln!(out, "{frame},{id},{},{},{},{},0", b.x, b.y, b.w, b.h);
        }
    }
    out
}

pub fn parse_dims(raw: &str) -> Option<FrameDims> {
    let (w, h) = raw.trim().split_once(['x', 'X'])?;
    let dims = FrameDims::new(w.trim().parse().ok()?, h.trim().parse().ok()?);
    dims.is_valid().then_some(dims)
}

pub fn read_scenario(text: &str) -> Result<Scenario, ParseError> {
    let mut dims = None;
    let mut num_frames = None;
    let mut seed = 0u64;
    for (idx, raw) in text.lines().enumerate() {
        let Some(body) = raw.trim().strip_prefix('#') else {
            continue;
        };
        let Some((key, value)) = body.trim().split_once('=') else {
            continue;
        };
        let line = idx + 1;
        match key.trim() {
            "dims" => {
                dims = Some(parse_dims(value).ok_or_else(|| ParseError::field(line, "dims", "expected WIDTHxHEIGHT"))?)
            }
            "num_frames" => num_frames = Some(parse_count(value, line, "num_frames")?),
            "seed" => seed = parse_count(value, line, "seed")?,
            _ => {}
        }
    }
    let dims = dims.ok_or(ParseError::Line {
        line: 1,
        message: "missing `# dims=WxH` header".into(),
    })?;
    let records = parse_annotation_records(text)?;
    let num_frames = match num_frames {
        Some(n) => n,
        None => records.iter().map(|r| r.frame_idx + 1).max().unwrap_or(1),
    };

    let mut tracks: BTreeMap<u32, Vec<(u64, BBox)>> = BTreeMap::new();
    for r in &records {
        if r.frame_idx >= num_frames {
            return Err(ParseError::field(
                0,
                "frame",
                format!("frame {} beyond num_frames {num_frames}", r.frame_idx),
            ));
        }
        tracks.entry(r.track_id).or_default().push((r.frame_idx, r.bbox()));
    }
    let tracks = tracks
        .into_iter()
        .map(|(track_id, mut spans)| {
            spans.sort_by_key(|(f, _)| *f);
            spans.dedup_by_key(|(f, _)| *f);
            Track { track_id, spans }
        })
        .collect();
    Ok(Scenario {
        dims,
        num_frames,
        seed,
        tracks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DetectionsHeader {
    format: String,
    version: u32,
}

/// JSON Lines: a header object, then one [`FrameResult`] per line.
pub fn write_detections(results: &[FrameResult]) -> String {
    let header = DetectionsHeader {
        format: DETECTIONS_FORMAT.into(),
        version: DETECTIONS_VERSION,
    };
    let mut out = serde_json::to_string(&header).unwrap_or_default();
    out.push('\n');
    for r in results {
        // FrameResult contains only plain numbers and strings
        if let Ok(line) = serde_json::to_string(r) {
            out.push_str(&line);
            out.push('\n');
        }
    }
    out
}

fn parse_json_line<T: DeserializeOwned>(raw: &str, line: usize) -> Result<T, ParseError> {
    let de = &mut serde_json::Deserializer::from_str(raw);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ParseError::field(
            line,
            if path == "." { "record".to_string() } else { path },
            e.into_inner().to_string(),
        )
    })
}

pub fn read_detections(text: &str) -> Result<Vec<FrameResult>, ParseError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((idx, first)) = lines.next() else {
        return Err(ParseError::Line {
            line: 1,
            message: "missing header".into(),
        });
    };
    let header: DetectionsHeader = parse_json_line(first, idx + 1)?;
    if header.format != DETECTIONS_FORMAT || header.version != DETECTIONS_VERSION {
        return Err(ParseError::field(
            idx + 1,
            "format",
            format!("unsupported {} v{}", header.format, header.version),
        ));
    }
    let mut out = Vec::new();
    for (idx, raw) in lines {
        let r: FrameResult = parse_json_line(raw, idx + 1)?;
        if let Some(bad) = r.accepted.iter().position(|d| !d.is_valid()) {
            return Err(ParseError::field(
                idx + 1,
                format!("accepted[{bad}]"),
                "invalid box or confidence",
            ));
        }
        out.push(r);
    }
    Ok(out)
}

/// Parses a TOML document into `T`, rejecting unknown keys.
pub fn parse_toml<T: DeserializeOwned>(text: &str) -> Result<T, ParseError> {
    toml::from_str(text).map_err(|e| ParseError::Config(e.to_string()))
}

pub fn to_toml<T: Serialize>(value: &T) -> String {
    toml::to_string(value).unwrap_or_default()
}

pub fn load_config(text: &str) -> Result<PipelineConfig, ParseError> {
    let cfg: PipelineConfig = parse_toml(text)?;
    cfg.validate().map_err(|e| ParseError::Config(e.to_string()))?;
    Ok(cfg)
}

/// Returns `cfg` with the dotted key `path` set to `value`. Integer keys
/// accept only integral values.
pub fn with_override(cfg: &PipelineConfig, path: &str, value: f64) -> Result<PipelineConfig, ParseError> {
    let bad = |m: String| ParseError::Config(m);
    let mut doc = toml::Value::try_from(cfg).map_err(|e| bad(e.to_string()))?;
    let mut slot = &mut doc;
    for key in path.split('.') {
        slot = slot
            .as_table_mut()
            .and_then(|t| t.get_mut(key))
            .ok_or_else(|| bad(format!("unknown config key `{path}`")))?;
    }
    *slot = match slot {
        toml::Value::Integer(_) if value.fract() == 0.0 => toml::Value::Integer(value as i64),
        toml::Value::Integer(_) => return Err(bad(format!("`{path}` takes an integer, got {value}"))),
        toml::Value::Float(_) => toml::Value::Float(value),
        _ => return Err(bad(format!("`{path}` is not a numeric key"))),
    };
    let out: PipelineConfig = doc.try_into().map_err(|e: toml::de::Error| bad(e.to_string()))?;
    out.validate().map_err(|e| bad(e.to_string()))?;
    Ok(out)
}
