//! End-to-end orchestration: configuration, image ingestion, the full
//! inference pass (RPN proposals, skip-pooled heads, skewed NMS, masks) and
//! the local detection evaluation protocol.

pub mod gt;
pub mod image;
pub mod json;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

use crate::anchors::{generate_anchors, AnchorSpec, PyramidLevel};
use crate::geometry::{
    quad_decode, quad_iou, quad_to_bounding_rect, rect_decode, AxisRect, GeometryError, Quad,
    RectDelta,
};
use crate::network::{
    build_pyramid, head_forward, rpn_forward, stub_base, NetworkError, RpnLevelOutput,
};
use crate::nms::{nms_rect, nms_skewed, top_n, ScoredBox};
use crate::roialign::{skip_roi_align, RoiError, RoiSpec};
use crate::tensor::{sigmoid, sigmoid_scalar};
use crate::weights::{ModelWeights, WeightsError, ANCHORS_PER_CELL};

pub use gt::{GroundTruth, GtFormat, GtInstance, GtParseError, GtShape};
pub use image::{load_image, ppm_to_tensor, tensor_to_ppm, ImageError, LoadedImage};
pub use json::{
    detections_from_json, detections_to_json, Detection, DetectionJsonError, DetectionMask,
    DETECTIONS_SCHEMA,
};

/// Textness cutoff applied before skewed NMS; exclusive, so an exactly
/// indifferent 0.5 score is dropped.
pub const SCORE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    GtParse(#[from] GtParseError),
    #[error(transparent)]
    Weights(#[from] WeightsError),
    #[error(transparent)]
    DetectionJson(#[from] DetectionJsonError),
    #[error("inference stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: StageError,
    },
    #[error("evaluation: detections reference unknown image key {0:?}")]
    UnknownImageKey(String),
    #[error("evaluation: {0}")]
    EvalGeometry(#[from] GeometryError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Roi(#[from] RoiError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

fn at_stage<E: Into<StageError>>(stage: &'static str) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        source: e.into(),
    }
}

/// Inference and evaluation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Proposals kept for the second stage (top-N by score).
    pub top_n: usize,
    pub rpn_nms_iou: f64,
    pub skewed_nms_iou: f64,
    pub mask_threshold: f64,
    pub eval_iou: f64,
    /// Shorter-side resize target for ingested images.
    pub test_scale: usize,
    pub weights_path: Option<PathBuf>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            top_n: 2000,
            rpn_nms_iou: 0.7,
            skewed_nms_iou: 0.3,
            mask_threshold: 0.5,
            eval_iou: 0.5,
            test_scale: 1024,
            weights_path: None,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Parses the flat `key=value` config format (blank lines and lines
    /// starting with `#` are skipped; unknown keys are errors).
    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        let mut cfg = PipelineConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| PipelineError::Config {
                line: line_no,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected key=value".to_string()))?;
            let key = key.trim();
            let value = value.trim();
            let parse_f64 = || {
                value
                    .parse::<f64>()
                    .map_err(|_| err(format!("{key} must be a number, got {value:?}")))
            };
            let parse_usize = || {
                value.parse::<usize>().map_err(|_| {
                    err(format!(
                        "{key} must be a non-negative integer, got {value:?}"
                    ))
                })
            };
            match key {
                "top_n" => cfg.top_n = parse_usize()?,
                "rpn_nms_iou" => cfg.rpn_nms_iou = parse_f64()?,
                "skewed_nms_iou" => cfg.skewed_nms_iou = parse_f64()?,
                "mask_threshold" => cfg.mask_threshold = parse_f64()?,
                "eval_iou" => cfg.eval_iou = parse_f64()?,
                "test_scale" => cfg.test_scale = parse_usize()?,
                "weights_path" => cfg.weights_path = Some(PathBuf::from(value)),
                "seed" => {
                    cfg.seed = value
                        .parse::<u64>()
                        .map_err(|_| err(format!("seed must be a u64, got {value:?}")))?
                }
                other => return Err(err(format!("unknown key {other:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let thresholds = [
            ("rpn_nms_iou", self.rpn_nms_iou),
            ("skewed_nms_iou", self.skewed_nms_iou),
            ("mask_threshold", self.mask_threshold),
            ("eval_iou", self.eval_iou),
        ];
        for (name, v) in thresholds {
            if !(0.0..=1.0).contains(&v) {
                return Err(PipelineError::Config {
                    line: 0,
                    message: format!("{name} must lie in [0, 1], got {v}"),
                });
            }
        }
        if self.test_scale == 0 {
            return Err(PipelineError::Config {
                line: 0,
                message: "test_scale must be positive".to_string(),
            });
        }
        Ok(())
    }
}

/// Counters recorded along one inference run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct InferTrace {
    pub anchors_total: usize,
    pub proposals_decoded: usize,
    pub proposals_after_nms: usize,
    pub proposals_into_stage2: usize,
    pub candidates_above_threshold: usize,
    pub detections_final: usize,
}

struct Candidate {
    quad: Quad,
    score: f64,
}

fn decode_level_proposals(
    level: PyramidLevel,
    out: &RpnLevelOutput,
    spec: &AnchorSpec,
    content: &AxisRect,
    next_id: &mut usize,
    proposals: &mut Vec<ScoredBox<AxisRect>>,
) -> usize {
    let [_, _, fh, fw] = out.logits.shape();
    let anchors = generate_anchors(spec, level, fh, fw);
    let k = spec.anchors_per_cell();
    for i in 0..fh {
        for j in 0..fw {
            for a in 0..k {
                let anchor = &anchors[(i * fw + j) * k + a];
                let l0 = out.logits.get(0, 2 * a, i, j);
                let l1 = out.logits.get(0, 2 * a + 1, i, j);
                let score = sigmoid_scalar(l1 - l0);
                let delta = RectDelta {
                    dx: out.deltas.get(0, 4 * a, i, j),
                    dy: out.deltas.get(0, 4 * a + 1, i, j),
                    dw: out.deltas.get(0, 4 * a + 2, i, j),
                    dh: out.deltas.get(0, 4 * a + 3, i, j),
                };
                let Ok(decoded) = rect_decode(&delta, anchor) else {
                    continue;
                };
                let Some(clipped) = decoded.clip_to(content) else {
                    continue;
                };
                proposals.push(ScoredBox::new(clipped, score, *next_id));
                *next_id += 1;
            }
        }
    }
    anchors.len()
}

/// Full deterministic inference for one image: backbone and pyramid, RPN
/// decoding against the anchor lattice, rect NMS and the top-N cut, the
/// skip-pooled head for scores and quads, the score cutoff, skewed NMS, and
/// finally mask extraction over each surviving instance's bounding rect.
/// Detections come back in score order, mapped to original image pixels.
pub fn infer(
    image: &LoadedImage,
    weights: &ModelWeights,
    cfg: &PipelineConfig,
) -> Result<Vec<Detection>, PipelineError> {
    infer_traced(image, weights, cfg).map(|(dets, _)| dets)
}

/// [`infer`] plus stage counters.
pub fn infer_traced(
    image: &LoadedImage,
    weights: &ModelWeights,
    cfg: &PipelineConfig,
) -> Result<(Vec<Detection>, InferTrace), PipelineError> {
    cfg.validate()?;
    let mut trace = InferTrace::default();
    let spec = AnchorSpec::default();
    debug_assert_eq!(spec.anchors_per_cell(), ANCHORS_PER_CELL);

    let (res2, res3, res4) = stub_base(&image.tensor, weights).map_err(at_stage("backbone"))?;
    let pyramid = build_pyramid(&res2, &res3, &res4, weights).map_err(at_stage("pyramid"))?;
    let rpn = rpn_forward(&pyramid, weights).map_err(at_stage("rpn"))?;

    // proposals are confined to the resized content region; the bottom-right
    // padding is artificial
    let content = AxisRect::new(0.0, 0.0, image.resized_w as f64, image.resized_h as f64)
        .map_err(at_stage("rpn-decode"))?;
    let mut proposals = Vec::new();
    let mut next_id = 0usize;
    for (level, out) in [
        (PyramidLevel::P2, &rpn.p2),
        (PyramidLevel::P3, &rpn.p3),
        (PyramidLevel::P4, &rpn.p4),
    ] {
        trace.anchors_total +=
            decode_level_proposals(level, out, &spec, &content, &mut next_id, &mut proposals);
    }
    trace.proposals_decoded = proposals.len();

    let kept = nms_rect(&proposals, cfg.rpn_nms_iou);
    trace.proposals_after_nms = kept.len();
    let survivors: Vec<ScoredBox<AxisRect>> = kept.iter().map(|&id| proposals[id]).collect();
    let stage2 = top_n(&survivors, cfg.top_n);
    trace.proposals_into_stage2 = stage2.len();

    let roi_spec = RoiSpec::default();
    let reduce = weights.p("skip.reduce");
    let mut candidates = Vec::new();
    for boxed in &stage2 {
        let feat = skip_roi_align(&pyramid, &boxed.geometry, reduce, &roi_spec)
            .map_err(at_stage("skip-roi-align"))?;
        let head = head_forward(&feat, weights).map_err(at_stage("head"))?;
        let score = sigmoid_scalar(head.cls_logits[1] - head.cls_logits[0]);
        if score <= SCORE_THRESHOLD {
            continue;
        }
        let quad =
            quad_decode(&head.quad_delta, &boxed.geometry).map_err(at_stage("quad-decode"))?;
        candidates.push(Candidate { quad, score });
    }
    trace.candidates_above_threshold = candidates.len();

    let scored_quads: Vec<ScoredBox<Quad>> = candidates
        .iter()
        .enumerate()
        .map(|(id, c)| ScoredBox::new(c.quad, c.score, id))
        .collect();
    let final_ids =
        nms_skewed(&scored_quads, cfg.skewed_nms_iou).map_err(at_stage("skewed-nms"))?;

    let mut detections = Vec::new();
    for id in final_ids {
        let candidate = &candidates[id];
        let mask = extract_mask(&pyramid, &candidate.quad, &content, weights, &roi_spec)?;
        if let Some(det) = map_to_original(candidate, mask, image) {
            detections.push(det);
        }
    }
    trace.detections_final = detections.len();
    Ok((detections, trace))
}

// mask probabilities plus the rect they were pooled from
type MaskPatch = (AxisRect, Vec<Vec<f64>>);

// Pools the instance's axis-aligned bounding rect and runs the mask branch;
// instances collapsing outside the content region carry no mask.
fn extract_mask(
    pyramid: &crate::network::PyramidFeatures,
    quad: &Quad,
    content: &AxisRect,
    weights: &ModelWeights,
    roi_spec: &RoiSpec,
) -> Result<Option<MaskPatch>, PipelineError> {
    let Some(rect) = quad_to_bounding_rect(quad).clip_to(content) else {
        return Ok(None);
    };
    let feat = skip_roi_align(pyramid, &rect, weights.p("skip.reduce"), roi_spec)
        .map_err(at_stage("mask-roi-align"))?;
    let head = head_forward(&feat, weights).map_err(at_stage("mask-head"))?;
    let probs = sigmoid(&head.mask_logits);
    let m = probs.height();
    let grid: Vec<Vec<f64>> = (0..m)
        .map(|r| (0..m).map(|c| probs.get(0, 0, r, c)).collect())
        .collect();
    Ok(Some((rect, grid)))
}

// Scales a detection back to original image pixels and clamps the quad into
// the image bounds; detections that collapse to zero area are dropped.
fn map_to_original(
    candidate: &Candidate,
    mask: Option<MaskPatch>,
    image: &LoadedImage,
) -> Option<Detection> {
    let mut vertices = candidate.quad.vertices();
    for v in &mut vertices {
        v[0] = (v[0] / image.scale_x).clamp(0.0, image.orig_w as f64);
        v[1] = (v[1] / image.scale_y).clamp(0.0, image.orig_h as f64);
    }
    let quad = Quad::new(vertices).ok()?;
    let mask = mask.and_then(|(rect, grid)| {
        let proposal = AxisRect::new(
            rect.x1 / image.scale_x,
            rect.y1 / image.scale_y,
            rect.x2 / image.scale_x,
            rect.y2 / image.scale_y,
        )
        .ok()?;
        Some(DetectionMask { proposal, grid })
    });
    Some(Detection {
        quad,
        score: candidate.score,
        mask,
    })
}

/// Per-image matching detail in an evaluation report.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ImageEval {
    /// (detection index, ground-truth index) pairs, in match order.
    pub matches: Vec<(usize, usize)>,
    /// Detections excluded from the precision denominator because they only
    /// overlap don't-care regions.
    pub ignored_detections: Vec<usize>,
    pub false_positives: Vec<usize>,
    pub missed_gts: Vec<usize>,
}

/// Detection quality under the greedy IoU matching protocol.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub recall: f64,
    pub precision: f64,
    pub f_measure: f64,
    pub matched: usize,
    pub total_care_gts: usize,
    pub counted_detections: usize,
    pub per_image: BTreeMap<String, ImageEval>,
}

fn gt_match_quad(shape: &GtShape) -> Result<Quad, GeometryError> {
    match shape {
        GtShape::Quad(q) => Ok(*q),
        GtShape::Poly14(points) => {
            let x1 = points.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
            let y1 = points.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
            let x2 = points
                .iter()
                .map(|p| p[0])
                .fold(f64::NEG_INFINITY, f64::max);
            let y2 = points
                .iter()
                .map(|p| p[1])
                .fold(f64::NEG_INFINITY, f64::max);
            Ok(AxisRect::new(x1, y1, x2, y2)?.to_quad())
        }
    }
}

/// Greedy one-to-one matching by descending score: a detection matches the
/// unmatched care ground truth with the highest IoU at or above the
/// threshold; detections overlapping only don't-care regions are excluded
/// from the precision denominator. Recall and precision are micro-averaged
/// over images; zero denominators yield zero by convention.
pub fn evaluate(
    detections: &BTreeMap<String, Vec<Detection>>,
    gts: &GroundTruth,
    iou_thresh: f64,
) -> Result<EvalReport, PipelineError> {
    for key in detections.keys() {
        if !gts.0.contains_key(key) {
            return Err(PipelineError::UnknownImageKey(key.clone()));
        }
    }

    let mut matched = 0usize;
    let mut total_care = 0usize;
    let mut counted = 0usize;
    let mut per_image = BTreeMap::new();

    for (key, instances) in &gts.0 {
        let mut image_eval = ImageEval::default();
        let care: Vec<(usize, Quad)> = instances
            .iter()
            .enumerate()
            .filter(|(_, inst)| !inst.ignore)
            .map(|(gi, inst)| Ok((gi, gt_match_quad(&inst.shape)?)))
            .collect::<Result<_, GeometryError>>()?;
        let ignored: Vec<Quad> = instances
            .iter()
            .filter(|inst| inst.ignore)
            .map(|inst| gt_match_quad(&inst.shape))
            .collect::<Result<_, GeometryError>>()?;
        total_care += care.len();

        let empty = Vec::new();
        let dets = detections.get(key).unwrap_or(&empty);
        let mut order: Vec<usize> = (0..dets.len()).collect();
        order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));

        let mut gt_taken = vec![false; care.len()];
        for di in order {
            let det = &dets[di];
            let mut best: Option<(usize, f64)> = None;
            for (slot, (_, gt_quad)) in care.iter().enumerate() {
                if gt_taken[slot] {
                    continue;
                }
                let overlap = quad_iou(&det.quad, gt_quad)?;
                if overlap >= iou_thresh && best.is_none_or(|(_, b)| overlap > b) {
                    best = Some((slot, overlap));
                }
            }
            if let Some((slot, _)) = best {
                gt_taken[slot] = true;
                matched += 1;
                counted += 1;
                image_eval.matches.push((di, care[slot].0));
                continue;
            }
            let mut hits_ignored = false;
            for ig in &ignored {
                if quad_iou(&det.quad, ig)? >= iou_thresh {
                    hits_ignored = true;
                    break;
                }
            }
            if hits_ignored {
                image_eval.ignored_detections.push(di);
            } else {
                counted += 1;
                image_eval.false_positives.push(di);
            }
        }
        for (slot, (gi, _)) in care.iter().enumerate() {
            if !gt_taken[slot] {
                image_eval.missed_gts.push(*gi);
            }
        }
        per_image.insert(key.clone(), image_eval);
    }

    let ratio = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let recall = ratio(matched, total_care);
    let precision = ratio(matched, counted);
    let f_measure = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(EvalReport {
        recall,
        precision,
        f_measure,
        matched,
        total_care_gts: total_care,
        counted_detections: counted,
        per_image,
    })
}
