//! Detection JSON schema: a top-level schema tag plus an array of
//! quad/score/mask entries. Serialization is canonical (fixed field order,
//! shortest float representation), so identical detections always produce
//! identical bytes.

use serde::{Deserialize, Serialize};

use crate::geometry::{AxisRect, GeometryError, Quad};

pub const DETECTIONS_SCHEMA: &str = "pantext/detections-v1";

/// One final text detection: quadrilateral, textness score, and optionally
/// the mask probability grid with the rect it was pooled from.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub quad: Quad,
    pub score: f64,
    pub mask: Option<DetectionMask>,
}

/// Mask probabilities over the bounding rect of the detected instance.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionMask {
    pub proposal: AxisRect,
    pub grid: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DetectionsFile {
    pub schema: String,
    pub detections: Vec<DetectionJson>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DetectionJson {
    pub quad: [[f64; 2]; 4],
    pub score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask: Option<MaskJson>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MaskJson {
    pub proposal: [f64; 4],
    pub grid: Vec<Vec<f64>>,
}

impl From<&Detection> for DetectionJson {
    fn from(d: &Detection) -> Self {
        DetectionJson {
            quad: d.quad.vertices(),
            score: d.score,
            mask: d.mask.as_ref().map(|m| MaskJson {
                proposal: [m.proposal.x1, m.proposal.y1, m.proposal.x2, m.proposal.y2],
                grid: m.grid.clone(),
            }),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DetectionJsonError {
    #[error("detection json: {0}")]
    Serde(#[from] serde_json::Error),
    #[error("detection json: unsupported schema {0:?} (expected {DETECTIONS_SCHEMA:?})")]
    Schema(String),
    #[error("detection json: score {0} outside [0, 1]")]
    Score(f64),
    #[error("detection json: {0}")]
    Geometry(#[from] GeometryError),
}

/// Canonical serialization of a detection list.
pub fn detections_to_json(detections: &[Detection]) -> String {
    let file = DetectionsFile {
        schema: DETECTIONS_SCHEMA.to_string(),
        detections: detections.iter().map(DetectionJson::from).collect(),
    };
    let mut s = serde_json::to_string(&file).expect("detection serialization cannot fail");
    s.push('\n');
    s
}

pub fn detections_from_json(text: &str) -> Result<Vec<Detection>, DetectionJsonError> {
    let file: DetectionsFile = serde_json::from_str(text)?;
    if file.schema != DETECTIONS_SCHEMA {
        return Err(DetectionJsonError::Schema(file.schema));
    }
    file.detections
        .into_iter()
        .map(|d| {
            let mask = match d.mask {
                None => None,
                Some(m) => Some(DetectionMask {
                    proposal: AxisRect::new(
                        m.proposal[0],
                        m.proposal[1],
                        m.proposal[2],
                        m.proposal[3],
                    )?,
                    grid: m.grid,
                }),
            };
            if !(0.0..=1.0).contains(&d.score) {
                return Err(DetectionJsonError::Score(d.score));
            }
            Ok(Detection {
                quad: Quad::new(d.quad)?,
                score: d.score,
                mask,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Detection {
        Detection {
            quad: Quad::new([[1.0, 2.0], [11.0, 2.5], [11.5, 8.0], [0.5, 7.5]]).unwrap(),
            score: 0.875,
            mask: Some(DetectionMask {
                proposal: AxisRect::new(0.5, 2.0, 11.5, 8.0).unwrap(),
                grid: vec![vec![0.25; 14]; 14],
            }),
        }
    }

    #[test]
    fn roundtrip_preserves_detections() {
        let dets = vec![sample()];
        let json = detections_to_json(&dets);
        let back = detections_from_json(&json).unwrap();
        assert_eq!(back, dets);
    }

    #[test]
    fn serialization_is_stable() {
        let dets = vec![sample()];
        assert_eq!(detections_to_json(&dets), detections_to_json(&dets));
    }

    #[test]
    fn schema_tag_is_enforced() {
        let json = r#"{"schema":"something-else","detections":[]}"#;
        assert!(matches!(
            detections_from_json(json),
            Err(DetectionJsonError::Schema(_))
        ));
    }

    #[test]
    fn out_of_range_score_is_rejected() {
        let json = format!(
            r#"{{"schema":"{DETECTIONS_SCHEMA}","detections":[{{"quad":[[0,0],[5,0],[5,3],[0,3]],"score":1.5}}]}}"#
        );
        assert!(matches!(
            detections_from_json(&json),
            Err(DetectionJsonError::Score(_))
        ));
    }

    #[test]
    fn missing_mask_is_allowed() {
        let json = format!(
            r#"{{"schema":"{DETECTIONS_SCHEMA}","detections":[{{"quad":[[0,0],[5,0],[5,3],[0,3]],"score":0.5}}]}}"#
        );
        let dets = detections_from_json(&json).unwrap();
        assert_eq!(dets.len(), 1);
        assert!(dets[0].mask.is_none());
    }
}
