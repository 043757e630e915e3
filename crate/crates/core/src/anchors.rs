//! Anchor lattice generation for the P2/P3/P4 pyramid levels,
//! anchor/proposal-to-ground-truth matching, and seeded mini-batch sampling.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{rect_iou, AxisRect};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PyramidLevel {
    P2,
    P3,
    P4,
}

impl PyramidLevel {
    pub const ALL: [PyramidLevel; 3] = [PyramidLevel::P2, PyramidLevel::P3, PyramidLevel::P4];

    pub fn name(&self) -> &'static str {
        match self {
            PyramidLevel::P2 => "P2",
            PyramidLevel::P3 => "P3",
            PyramidLevel::P4 => "P4",
        }
    }
}

/// Anchor design: one scale per pyramid level, a shared ratio set, and the
/// level strides. Widths/heights are area-preserving: `s*sqrt(r)` by
/// `s/sqrt(r)`, so ratio is width over height.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSpec {
    pub aspect_ratios: Vec<f64>,
    pub scales: [(PyramidLevel, f64); 3],
    pub strides: [(PyramidLevel, usize); 3],
}

impl Default for AnchorSpec {
    fn default() -> Self {
        AnchorSpec {
            aspect_ratios: vec![0.2, 0.5, 1.0, 2.0, 4.0, 8.0],
            scales: [
                (PyramidLevel::P2, 32.0),
                (PyramidLevel::P3, 64.0),
                (PyramidLevel::P4, 128.0),
            ],
            strides: [
                (PyramidLevel::P2, 4),
                (PyramidLevel::P3, 8),
                (PyramidLevel::P4, 16),
            ],
        }
    }
}

impl AnchorSpec {
    pub fn scale(&self, level: PyramidLevel) -> f64 {
        self.scales.iter().find(|(l, _)| *l == level).unwrap().1
    }

    pub fn stride(&self, level: PyramidLevel) -> usize {
        self.strides.iter().find(|(l, _)| *l == level).unwrap().1
    }

    pub fn anchors_per_cell(&self) -> usize {
        self.aspect_ratios.len()
    }
}

/// Matching thresholds and mini-batch sizes for the RPN and second stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchConfig {
    pub pos_iou: f64,
    pub neg_iou: f64,
    pub rpn_pos_per_batch: usize,
    pub rpn_neg_per_batch: usize,
    pub frcnn_pos_iou: f64,
    pub frcnn_pos_per_batch: usize,
    pub frcnn_neg_per_batch: usize,
    pub seed: u64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            pos_iou: 0.7,
            neg_iou: 0.3,
            rpn_pos_per_batch: 128,
            rpn_neg_per_batch: 128,
            frcnn_pos_iou: 0.5,
            frcnn_pos_per_batch: 64,
            frcnn_neg_per_batch: 192,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Positive,
    Negative,
    Ignore,
}

/// Per-anchor labels plus the matched ground-truth index for positives.
#[derive(Debug, Clone)]
pub struct MatchResult {
    pub labels: Vec<Label>,
    pub matched_gt: Vec<Option<usize>>,
}

impl MatchResult {
    pub fn positives(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == Label::Positive)
            .map(|(i, _)| i)
    }

    pub fn negatives(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == Label::Negative)
            .map(|(i, _)| i)
    }
}

/// Generates the full anchor set for one level of an `fh` x `fw` feature map.
///
/// The anchor for cell `(i, j)` and ratio `r` is centered at
/// `((j+0.5)*stride, (i+0.5)*stride)` with width `s*sqrt(r)` and height
/// `s/sqrt(r)`. Ordering is row-major over cells, then ratio order; anchors
/// may extend past the image border (they are clipped at decode time).
pub fn generate_anchors(
    spec: &AnchorSpec,
    level: PyramidLevel,
    fh: usize,
    fw: usize,
) -> Vec<AxisRect> {
    let stride = spec.stride(level) as f64;
    let scale = spec.scale(level);
    let mut anchors = Vec::with_capacity(fh * fw * spec.aspect_ratios.len());
    for i in 0..fh {
        for j in 0..fw {
            let cx = (j as f64 + 0.5) * stride;
            let cy = (i as f64 + 0.5) * stride;
            for &ratio in &spec.aspect_ratios {
                let w = scale * ratio.sqrt();
                let h = scale / ratio.sqrt();
                anchors.push(
                    AxisRect::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
                        .expect("positive anchor dims"),
                );
            }
        }
    }
    anchors
}

fn best_gt(ious: &[f64]) -> (usize, f64) {
    let mut best = 0;
    let mut best_iou = f64::NEG_INFINITY;
    for (gi, &iou) in ious.iter().enumerate() {
        if iou > best_iou {
            best_iou = iou;
            best = gi;
        }
    }
    (best, best_iou)
}

/// RPN matching: an anchor is positive when it attains the highest IoU for
/// some ground truth (argmax rule) or overlaps any ground truth above
/// `pos_iou`; negative when all overlaps fall below `neg_iou`; the band in
/// between is ignored. Matched ground truth is the argmax, ties broken by
/// the lowest index.
pub fn match_anchors(anchors: &[AxisRect], gts: &[AxisRect], cfg: &MatchConfig) -> MatchResult {
    debug_assert!(0.0 <= cfg.neg_iou && cfg.neg_iou <= cfg.pos_iou && cfg.pos_iou <= 1.0);
    let n = anchors.len();
    if gts.is_empty() {
        return MatchResult {
            labels: vec![Label::Negative; n],
            matched_gt: vec![None; n],
        };
    }
    let ious: Vec<Vec<f64>> = anchors
        .iter()
        .map(|a| gts.iter().map(|g| rect_iou(a, g)).collect())
        .collect();

    let mut labels = vec![Label::Ignore; n];
    let mut matched_gt = vec![None; n];
    for (ai, row) in ious.iter().enumerate() {
        let (best, best_iou) = best_gt(row);
        if best_iou > cfg.pos_iou {
            labels[ai] = Label::Positive;
            matched_gt[ai] = Some(best);
        } else if best_iou < cfg.neg_iou {
            labels[ai] = Label::Negative;
        }
    }
    // Argmax rule: every GT's best-overlapping anchors become positive,
    // regardless of the threshold, as long as the overlap is nonzero.
    for gi in 0..gts.len() {
        let top = ious
            .iter()
            .map(|row| row[gi])
            .fold(f64::NEG_INFINITY, f64::max);
        if top <= 0.0 {
            continue;
        }
        for (ai, row) in ious.iter().enumerate() {
            if row[gi] == top {
                labels[ai] = Label::Positive;
                let (best, _) = best_gt(row);
                matched_gt[ai] = Some(best);
            }
        }
    }
    MatchResult { labels, matched_gt }
}

/// Second-stage matching: positive iff IoU with any ground truth exceeds
/// `frcnn_pos_iou`, otherwise negative; no ignore band. IoU is computed on
/// axis-aligned boxes.
pub fn match_proposals(props: &[AxisRect], gts: &[AxisRect], cfg: &MatchConfig) -> MatchResult {
    let n = props.len();
    let mut labels = vec![Label::Negative; n];
    let mut matched_gt = vec![None; n];
    if gts.is_empty() {
        return MatchResult { labels, matched_gt };
    }
    for (pi, p) in props.iter().enumerate() {
        let ious: Vec<f64> = gts.iter().map(|g| rect_iou(p, g)).collect();
        let (best, best_iou) = best_gt(&ious);
        if best_iou > cfg.frcnn_pos_iou {
            labels[pi] = Label::Positive;
            matched_gt[pi] = Some(best);
        }
    }
    MatchResult { labels, matched_gt }
}

/// A sampled mini-batch of anchor/proposal indices. `complete` is false when
/// the candidate pool could not fill the requested total.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledBatch {
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
    pub complete: bool,
}

fn draw_without_replacement(pool: &[usize], n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut picked: Vec<usize> = pool.to_vec();
    picked.shuffle(rng);
    picked.truncate(n);
    picked.sort_unstable();
    picked
}

/// Uniformly samples up to `n_pos` positives and `n_neg` negatives without
/// replacement. A positive shortfall is filled with extra negatives to keep
/// the total at `n_pos + n_neg`; if the pools cannot cover even that, all
/// candidates are returned and the batch is flagged incomplete. Identical
/// seeds produce identical index sets.
pub fn sample_minibatch(
    result: &MatchResult,
    n_pos: usize,
    n_neg: usize,
    seed: u64,
) -> SampledBatch {
    let pos_pool: Vec<usize> = result.positives().collect();
    let neg_pool: Vec<usize> = result.negatives().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let take_pos = n_pos.min(pos_pool.len());
    let want_neg = n_neg + (n_pos - take_pos);
    let take_neg = want_neg.min(neg_pool.len());

    let positives = draw_without_replacement(&pos_pool, take_pos, &mut rng);
    let negatives = draw_without_replacement(&neg_pool, take_neg, &mut rng);
    let complete = positives.len() + negatives.len() == n_pos + n_neg;
    SampledBatch {
        positives,
        negatives,
        complete,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(x1: f64, y1: f64, x2: f64, y2: f64) -> AxisRect {
        AxisRect::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn counts_match_cells_times_ratios() {
        let spec = AnchorSpec::default();
        let anchors = generate_anchors(&spec, PyramidLevel::P2, 10, 10);
        assert_eq!(anchors.len(), 600);
        for (fh, fw, level) in [(3, 5, PyramidLevel::P3), (7, 2, PyramidLevel::P4)] {
            assert_eq!(generate_anchors(&spec, level, fh, fw).len(), fh * fw * 6);
        }
    }

    #[test]
    fn first_p2_square_anchor() {
        let spec = AnchorSpec::default();
        let anchors = generate_anchors(&spec, PyramidLevel::P2, 1, 1);
        // ratio order: 0.2, 0.5, 1.0, ... -> the square anchor is index 2
        let a = anchors[2];
        assert_eq!(a.center(), (2.0, 2.0));
        assert!((a.width() - 32.0).abs() < 1e-12);
        assert!((a.height() - 32.0).abs() < 1e-12);
    }

    #[test]
    fn p4_wide_anchor_shape() {
        let spec = AnchorSpec::default();
        let anchors = generate_anchors(&spec, PyramidLevel::P4, 1, 1);
        // ratio 4.0 is index 4
        let a = anchors[4];
        assert!((a.width() - 256.0).abs() < 1e-12);
        assert!((a.height() - 64.0).abs() < 1e-12);
    }

    #[test]
    fn anchor_areas_are_scale_squared() {
        let spec = AnchorSpec::default();
        for level in PyramidLevel::ALL {
            let s = spec.scale(level);
            for a in generate_anchors(&spec, level, 2, 2) {
                assert!((a.area() - s * s).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn identical_anchor_is_positive() {
        let cfg = MatchConfig::default();
        let gt = rect(0.0, 0.0, 10.0, 10.0);
        let m = match_anchors(&[gt], &[gt], &cfg);
        assert_eq!(m.labels, vec![Label::Positive]);
        assert_eq!(m.matched_gt, vec![Some(0)]);
    }

    #[test]
    fn low_overlap_anchor_is_negative() {
        let cfg = MatchConfig::default();
        // IoU = 1/19 with the only GT, but another anchor is the argmax.
        let anchors = [rect(0.0, 0.0, 10.0, 1.0), rect(0.0, 0.0, 10.0, 10.0)];
        let gts = [rect(0.0, 0.0, 10.0, 10.0)];
        let m = match_anchors(&anchors, &gts, &cfg);
        assert_eq!(m.labels[0], Label::Negative);
        assert_eq!(m.labels[1], Label::Positive);
    }

    #[test]
    fn argmax_rule_rescues_sub_threshold_anchor() {
        let cfg = MatchConfig::default();
        // Best anchor reaches IoU 0.5 < 0.7 but is still the GT's argmax.
        let anchors = [rect(0.0, 0.0, 10.0, 5.0), rect(50.0, 50.0, 60.0, 60.0)];
        let gts = [rect(0.0, 0.0, 10.0, 10.0)];
        let m = match_anchors(&anchors, &gts, &cfg);
        assert_eq!(m.labels[0], Label::Positive);
        assert_eq!(m.matched_gt[0], Some(0));
        assert_eq!(m.labels[1], Label::Negative);
    }

    #[test]
    fn ignore_band_between_thresholds() {
        let cfg = MatchConfig::default();
        // IoU 0.5 with GT 0, but GT 0's argmax is another anchor.
        let anchors = [rect(0.0, 0.0, 10.0, 10.0), rect(0.0, 0.0, 10.0, 5.0)];
        let gts = [rect(0.0, 0.0, 10.0, 10.0)];
        let m = match_anchors(&anchors, &gts, &cfg);
        assert_eq!(m.labels[0], Label::Positive);
        assert_eq!(m.labels[1], Label::Ignore);
    }

    #[test]
    fn empty_gts_all_negative() {
        let cfg = MatchConfig::default();
        let m = match_anchors(&[rect(0.0, 0.0, 1.0, 1.0)], &[], &cfg);
        assert_eq!(m.labels, vec![Label::Negative]);
    }

    #[test]
    fn every_overlapped_gt_gets_a_positive() {
        let cfg = MatchConfig::default();
        let anchors: Vec<AxisRect> = (0..20)
            .map(|i| rect(i as f64 * 5.0, 0.0, i as f64 * 5.0 + 8.0, 8.0))
            .collect();
        let gts = [rect(2.0, 2.0, 9.0, 7.0), rect(51.0, 0.0, 58.0, 6.0)];
        let m = match_anchors(&anchors, &gts, &cfg);
        for gi in 0..gts.len() {
            assert!(
                m.matched_gt.contains(&Some(gi))
                    || m.positives().any(|ai| m.matched_gt[ai] == Some(gi)),
                "gt {gi} has no positive anchor"
            );
        }
        // labels partition: no index is both positive and negative by type
        assert_eq!(m.labels.len(), anchors.len());
    }

    #[test]
    fn proposal_matching_uses_single_threshold() {
        let cfg = MatchConfig::default();
        let gt = rect(0.0, 0.0, 10.0, 10.0);
        let exact = match_proposals(&[gt], &[gt], &cfg);
        assert_eq!(exact.labels, vec![Label::Positive]);

        // IoU 0.49 -> negative
        let p = rect(0.0, 0.0, 10.0, 4.9);
        let m = match_proposals(&[p], &[gt], &cfg);
        assert_eq!(m.labels, vec![Label::Negative]);

        // overlapping two GTs -> matched to the higher-IoU one
        let gts = [rect(0.0, 0.0, 10.0, 10.0), rect(0.0, 0.0, 10.0, 8.0)];
        let q = rect(0.0, 0.0, 10.0, 8.5);
        let m = match_proposals(&[q], &gts, &cfg);
        assert_eq!(m.labels, vec![Label::Positive]);
        assert_eq!(m.matched_gt, vec![Some(1)]);
    }

    fn synthetic_result(n_pos: usize, n_neg: usize) -> MatchResult {
        let mut labels = vec![Label::Positive; n_pos];
        labels.extend(vec![Label::Negative; n_neg]);
        let matched_gt = (0..n_pos + n_neg)
            .map(|i| if i < n_pos { Some(0) } else { None })
            .collect();
        MatchResult { labels, matched_gt }
    }

    #[test]
    fn sampler_caps_at_requested_positives() {
        let r = synthetic_result(200, 300);
        let b = sample_minibatch(&r, 128, 128, 9);
        assert_eq!(b.positives.len(), 128);
        assert_eq!(b.negatives.len(), 128);
        assert!(b.complete);
    }

    #[test]
    fn sampler_fills_positive_shortfall_with_negatives() {
        let r = synthetic_result(50, 400);
        let b = sample_minibatch(&r, 128, 128, 9);
        assert_eq!(b.positives.len(), 50);
        assert_eq!(b.negatives.len(), 206);
        assert!(b.complete);
    }

    #[test]
    fn sampler_flags_insufficient_pool() {
        let r = synthetic_result(3, 5);
        let b = sample_minibatch(&r, 128, 128, 9);
        assert_eq!(b.positives.len(), 3);
        assert_eq!(b.negatives.len(), 5);
        assert!(!b.complete);
    }

    #[test]
    fn sampler_is_deterministic() {
        let r = synthetic_result(200, 300);
        let a = sample_minibatch(&r, 128, 128, 42);
        let b = sample_minibatch(&r, 128, 128, 42);
        assert_eq!(a, b);
        let c = sample_minibatch(&r, 128, 128, 43);
        assert_ne!(a, c);
    }

    #[test]
    fn ignored_anchors_are_never_sampled() {
        let mut r = synthetic_result(4, 4);
        r.labels[1] = Label::Ignore;
        let b = sample_minibatch(&r, 8, 8, 1);
        assert!(!b.positives.contains(&1));
        assert!(!b.negatives.contains(&1));
    }
}
