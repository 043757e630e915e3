//! Ground-truth file parsing: ICDAR quad annotations and 14-point
//! curved-text polygons.
//!
//! ICDAR files are UTF-8 text (optional BOM, LF or CRLF) with one instance
//! per line: `x1,y1,x2,y2,x3,y3,x4,y4,transcription`. A transcription of
//! `###` marks a don't-care instance. The curved format carries 28
//! comma-separated coordinates (14 points) with an optional trailing
//! transcription.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::geometry::Quad;

#[derive(Debug, Error)]
pub enum GtParseError {
    #[error("ground truth is not valid UTF-8")]
    Utf8,
    #[error("line {line}: expected {want} comma-separated fields, got {got}")]
    FieldCount {
        line: usize,
        want: usize,
        got: usize,
    },
    #[error("line {line}: field {field} is not a number: {text:?}")]
    BadNumber {
        line: usize,
        field: usize,
        text: String,
    },
    #[error("line {line}: degenerate geometry (zero area)")]
    Degenerate { line: usize },
}

/// Annotation geometry: a quadrilateral or a 14-point text-line polygon.
#[derive(Debug, Clone, PartialEq)]
pub enum GtShape {
    Quad(Quad),
    Poly14([[f64; 2]; 14]),
}

/// One annotated text instance.
#[derive(Debug, Clone, PartialEq)]
pub struct GtInstance {
    pub shape: GtShape,
    pub transcription: String,
    pub ignore: bool,
}

/// Per-image ground truth, keyed by image id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth(pub BTreeMap<String, Vec<GtInstance>>);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GtFormat {
    Icdar,
    Ctw,
}

fn decode_text(bytes: &[u8]) -> Result<&str, GtParseError> {
    let text = std::str::from_utf8(bytes).map_err(|_| GtParseError::Utf8)?;
    Ok(text.strip_prefix('\u{feff}').unwrap_or(text))
}

fn parse_number(text: &str, line: usize, field: usize) -> Result<f64, GtParseError> {
    text.trim()
        .parse::<f64>()
        .map_err(|_| GtParseError::BadNumber {
            line,
            field,
            text: text.to_string(),
        })
}

/// Parses one ICDAR annotation file into instances.
pub fn parse_icdar_gt(bytes: &[u8]) -> Result<Vec<GtInstance>, GtParseError> {
    let text = decode_text(bytes)?;
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.splitn(9, ',').collect();
        if fields.len() < 9 {
            return Err(GtParseError::FieldCount {
                line: line_no,
                want: 9,
                got: fields.len(),
            });
        }
        let mut coords = [0.0; 8];
        for (i, c) in coords.iter_mut().enumerate() {
            *c = parse_number(fields[i], line_no, i + 1)?;
        }
        let quad = Quad::new([
            [coords[0], coords[1]],
            [coords[2], coords[3]],
            [coords[4], coords[5]],
            [coords[6], coords[7]],
        ])
        .map_err(|_| GtParseError::Degenerate { line: line_no })?;
        let transcription = fields[8].to_string();
        let ignore = transcription == "###";
        out.push(GtInstance {
            shape: GtShape::Quad(quad),
            transcription,
            ignore,
        });
    }
    Ok(out)
}

/// Parses one curved-text annotation file (14 points per line).
pub fn parse_ctw_gt(bytes: &[u8]) -> Result<Vec<GtInstance>, GtParseError> {
    let text = decode_text(bytes)?;
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 28 {
            return Err(GtParseError::FieldCount {
                line: line_no,
                want: 28,
                got: fields.len(),
            });
        }
        let mut points = [[0.0; 2]; 14];
        for i in 0..14 {
            points[i][0] = parse_number(fields[2 * i], line_no, 2 * i + 1)?;
            points[i][1] = parse_number(fields[2 * i + 1], line_no, 2 * i + 2)?;
        }
        // the bounding box must be non-degenerate for evaluation
        let xs: Vec<f64> = points.iter().map(|p| p[0]).collect();
        let ys: Vec<f64> = points.iter().map(|p| p[1]).collect();
        let span_x = xs.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
            - xs.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        let span_y = ys.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
            - ys.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        if !(span_x > 0.0 && span_y > 0.0) {
            return Err(GtParseError::Degenerate { line: line_no });
        }
        let transcription = if fields.len() > 28 {
            fields[28..].join(",")
        } else {
            String::new()
        };
        let ignore = transcription == "###";
        out.push(GtInstance {
            shape: GtShape::Poly14(points),
            transcription,
            ignore,
        });
    }
    Ok(out)
}

pub fn parse_gt(bytes: &[u8], format: GtFormat) -> Result<Vec<GtInstance>, GtParseError> {
    match format {
        GtFormat::Icdar => parse_icdar_gt(bytes),
        GtFormat::Ctw => parse_ctw_gt(bytes),
    }
}

/// Image key for a ground-truth file: the stem with any `gt_` prefix removed
/// (`gt_img_1.txt` and `img_1.txt` both map to `img_1`).
pub fn gt_file_key(path: &Path) -> Option<String> {
    let stem = path.file_stem()?.to_str()?;
    Some(stem.strip_prefix("gt_").unwrap_or(stem).to_string())
}
