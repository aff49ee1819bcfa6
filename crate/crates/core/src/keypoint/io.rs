//! `.kpjl` frame files: a JSON header line followed by one JSON frame
//! record per line. Floats are written in shortest round-trip form and a
//! missing landmark is written as `[null,null,null]`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{CoordinateSpace, GestureSequence, KeypointError, KeypointFrame, LayoutSpec, Point3, MISSING};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileHeader {
    pub layout: String,
    pub k: usize,
    pub fps: u32,
    #[serde(default, skip_serializing_if = "is_raw")]
    pub space: CoordinateSpace,
}

fn is_raw(space: &CoordinateSpace) -> bool {
    *space == CoordinateSpace::Raw
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFrame {
    t: i64,
    lm: Vec<[Option<f64>; 3]>,
}

fn push_float(out: &mut String, v: f64) {
    if v.is_nan() {
        out.push_str("null");
    } else {
        // Debug formatting is the shortest representation that parses back
        // to the same bits, with an exponent for very large/small values.
        let _ = write!(out, "{v:?}");
    }
}

pub fn format_frame_record(frame: &KeypointFrame) -> String {
    let mut out = String::with_capacity(16 + frame.landmarks().len() * 40);
    let _ = write!(out, "{{\"t\":{},\"lm\":[", frame.t());
    for (i, p) in frame.landmarks().iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push('[');
        push_float(&mut out, p[0]);
        out.push(',');
        push_float(&mut out, p[1]);
        out.push(',');
        push_float(&mut out, p[2]);
        out.push(']');
    }
    out.push_str("]}");
    out
}

pub fn parse_frame_record(line: &str, layout: &Arc<LayoutSpec>) -> Result<KeypointFrame, KeypointError> {
    let raw: RawFrame = serde_json::from_str(line).map_err(|e| KeypointError::Parse(e.to_string()))?;
    if raw.lm.len() != layout.k() {
        return Err(KeypointError::Layout(format!(
            "frame t={} has {} landmarks, layout {} needs {}",
            raw.t,
            raw.lm.len(),
            layout.name(),
            layout.k()
        )));
    }
    let mut landmarks = Vec::with_capacity(raw.lm.len());
    for (i, triple) in raw.lm.iter().enumerate() {
        let p: Point3 = match triple {
            [Some(x), Some(y), Some(z)] => [*x, *y, *z],
            [None, None, None] => MISSING,
            _ => {
                return Err(KeypointError::Value(format!(
                    "frame t={} landmark {i} is partially null",
                    raw.t
                )))
            }
        };
        landmarks.push(p);
    }
    KeypointFrame::new(raw.t, landmarks, layout.clone())
}

pub fn parse_header(line: &str) -> Result<(FileHeader, Arc<LayoutSpec>), KeypointError> {
    let header: FileHeader = serde_json::from_str(line).map_err(|e| KeypointError::Parse(format!("header: {e}")))?;
    let layout = LayoutSpec::by_name(&header.layout)?;
    if layout.k() != header.k {
        return Err(KeypointError::Layout(format!(
            "header declares k={} but layout {} has k={}",
            header.k,
            layout.name(),
            layout.k()
        )));
    }
    Ok((header, layout))
}

pub fn parse_sequence_str(text: &str, source_id: &str) -> Result<GestureSequence, KeypointError> {
    let mut lines = text.split('\n').filter(|l| !l.is_empty());
    let Some(first) = lines.next() else {
        return Err(KeypointError::Empty(format!("{source_id}: no header")));
    };
    let (header, layout) = parse_header(first)?;
    let frames = lines
        .map(|l| parse_frame_record(l, &layout))
        .collect::<Result<Vec<_>, _>>()?;
    if frames.is_empty() {
        return Err(KeypointError::Empty(format!("{source_id}: no frames")));
    }
    let mut seq = GestureSequence::new(frames, source_id)?;
    seq.fps = header.fps;
    seq.space = header.space;
    Ok(seq)
}

pub fn sequence_to_string(seq: &GestureSequence) -> String {
    let header = FileHeader {
        layout: seq.layout().name().to_string(),
        k: seq.layout().k(),
        fps: seq.fps,
        space: seq.space,
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for f in seq.frames() {
        out.push_str(&format_frame_record(f));
        out.push('\n');
    }
    out
}

/// Source id derived from a path: the file stem.
pub(crate) fn source_id_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string_lossy().into_owned())
}

pub fn read_sequence(path: impl AsRef<Path>) -> Result<GestureSequence, KeypointError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_sequence_str(&text, &source_id_of(path))
}

pub fn write_sequence(seq: &GestureSequence, path: impl AsRef<Path>) -> Result<(), KeypointError> {
    fs::write(path, sequence_to_string(seq))?;
    Ok(())
}
