//! Multi-task losses with analytic gradients w.r.t. the network outputs:
//! softmax cross-entropy for textness, smooth-L1 for box regression, binary
//! cross-entropy for masks, and their weighted composition. Also builds the
//! rasterized mask targets for positive proposals.
//!
//! Averaging conventions: classification terms are averaged over the sampled
//! mini-batch, localization terms over the positive samples only, and empty
//! sums contribute exactly zero.

use thiserror::Error;

use crate::geometry::{clip_quad_to_rect, point_in_convex, AxisRect, GeometryError, Quad};
use crate::tensor::{sigmoid_scalar, Tensor};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("smooth_l1: prediction length {pred} != target length {target}")]
    LengthMismatch { pred: usize, target: usize },
    #[error("binary_ce: mask logits shape {logits:?} incompatible with {size}x{size} target")]
    MaskShape { logits: [usize; 4], size: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Loss-balancing weights: the RPN location term carries weight 3, the
/// second-stage location term 1, and the mask term 0.03125.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub lambda_loc_rpn: f64,
    pub lambda_loc_frcnn: f64,
    pub lambda_mask: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_loc_rpn: 3.0,
            lambda_loc_frcnn: 1.0,
            lambda_mask: 0.03125,
        }
    }
}

/// Classification and location terms of one stage, already combined with
/// the stage's location weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageLoss {
    pub cls: f64,
    pub loc: f64,
    pub total: f64,
}

/// Composed training loss; `l_total = l_rpn + l_frcnn + lambda_mask * l_mask`
/// by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub l_rpn: f64,
    pub l_frcnn: f64,
    pub l_mask: f64,
    pub l_total: f64,
}

/// Binary mask target on an M x M grid over a proposal's extent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskTarget {
    size: usize,
    cells: Vec<bool>,
}

impl MaskTarget {
    /// Builds a target by evaluating `f(row, col)` over the grid.
    pub fn from_fn(size: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut cells = Vec::with_capacity(size * size);
        for row in 0..size {
            for col in 0..size {
                cells.push(f(row, col));
            }
        }
        MaskTarget { size, cells }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.size + col]
    }

    pub fn count_ones(&self) -> usize {
        self.cells.iter().filter(|&&b| b).count()
    }
}

/// Two-class softmax cross-entropy, max-subtracted for stability.
/// Returns the loss and its gradient w.r.t. the logits (softmax - one-hot).
pub fn softmax_ce(logits: [f64; 2], label: usize) -> (f64, [f64; 2]) {
    debug_assert!(label < 2);
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let lse = m + (e0 + e1).ln();
    let loss = lse - logits[label];
    let p0 = e0 / (e0 + e1);
    let p1 = e1 / (e0 + e1);
    let mut grad = [p0, p1];
    grad[label] -= 1.0;
    (loss, grad)
}

/// Elementwise smooth-L1 summed over components: `0.5 x^2` for `|x| < 1`,
/// `|x| - 0.5` otherwise, with gradient `x` or `sign(x)` w.r.t. the
/// prediction.
pub fn smooth_l1(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>), LossError> {
    if pred.len() != target.len() {
        return Err(LossError::LengthMismatch {
            pred: pred.len(),
            target: target.len(),
        });
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.iter().zip(target) {
        let x = p - t;
        if x.abs() < 1.0 {
            loss += 0.5 * x * x;
            grad.push(x);
        } else {
            loss += x.abs() - 0.5;
            grad.push(x.signum());
        }
    }
    Ok((loss, grad))
}

/// Mean binary cross-entropy between mask logits (`(1, 1, M, M)`) and a
/// binary target grid, computed in the overflow-free form
/// `max(z, 0) - z t + ln(1 + e^-|z|)`. The gradient w.r.t. each logit is
/// `(sigmoid(z) - t) / M^2`, returned in row-major order.
pub fn binary_ce(mask_logits: &Tensor, target: &MaskTarget) -> Result<(f64, Vec<f64>), LossError> {
    let m = target.size();
    if mask_logits.shape() != [1, 1, m, m] {
        return Err(LossError::MaskShape {
            logits: mask_logits.shape(),
            size: m,
        });
    }
    let n = (m * m) as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(m * m);
    for row in 0..m {
        for col in 0..m {
            let z = mask_logits.get(0, 0, row, col);
            let t = if target.get(row, col) { 1.0 } else { 0.0 };
            loss += z.max(0.0) - z * t + (1.0 + (-z.abs()).exp()).ln();
            grad.push((sigmoid_scalar(z) - t) / n);
        }
    }
    Ok((loss / n, grad))
}

/// One RPN level's sampled mini-batch: classification pairs for every
/// sampled anchor and (prediction, target) delta pairs for the positives.
#[derive(Debug, Clone, Default)]
pub struct RpnLevelBatch {
    pub cls: Vec<([f64; 2], usize)>,
    pub loc: Vec<([f64; 4], [f64; 4])>,
}

fn stage_loss(
    cls: &[([f64; 2], usize)],
    loc_pairs: &[(&[f64], &[f64])],
    lambda_loc: f64,
) -> Result<StageLoss, LossError> {
    let cls_term = if cls.is_empty() {
        0.0
    } else {
        cls.iter().map(|&(l, y)| softmax_ce(l, y).0).sum::<f64>() / cls.len() as f64
    };
    let loc_term = if loc_pairs.is_empty() {
        0.0
    } else {
        let mut sum = 0.0;
        for (pred, target) in loc_pairs {
            sum += smooth_l1(pred, target)?.0;
        }
        sum / loc_pairs.len() as f64
    };
    Ok(StageLoss {
        cls: cls_term,
        loc: loc_term,
        total: cls_term + lambda_loc * loc_term,
    })
}

/// Per-level RPN losses plus their sum; classification averaged over the
/// sampled batch, location averaged over positives, location weight applied
/// per level.
pub fn rpn_loss(
    levels: &[RpnLevelBatch],
    cfg: &LossConfig,
) -> Result<(f64, Vec<StageLoss>), LossError> {
    let mut per_level = Vec::with_capacity(levels.len());
    let mut total = 0.0;
    for level in levels {
        let pairs: Vec<(&[f64], &[f64])> = level
            .loc
            .iter()
            .map(|(p, t)| (p.as_slice(), t.as_slice()))
            .collect();
        let s = stage_loss(&level.cls, &pairs, cfg.lambda_loc_rpn)?;
        total += s.total;
        per_level.push(s);
    }
    Ok((total, per_level))
}

/// Second-stage loss over sampled proposals with 8-dimensional quad deltas.
pub fn frcnn_loss(
    cls: &[([f64; 2], usize)],
    loc: &[([f64; 8], [f64; 8])],
    cfg: &LossConfig,
) -> Result<StageLoss, LossError> {
    let pairs: Vec<(&[f64], &[f64])> = loc
        .iter()
        .map(|(p, t)| (p.as_slice(), t.as_slice()))
        .collect();
    stage_loss(cls, &pairs, cfg.lambda_loc_frcnn)
}

/// Mean mask loss over positive proposals; empty input contributes zero.
pub fn mask_loss(items: &[(&Tensor, &MaskTarget)]) -> Result<f64, LossError> {
    if items.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (logits, target) in items {
        sum += binary_ce(logits, target)?.0;
    }
    Ok(sum / items.len() as f64)
}

/// Combines the three stage losses with the mask weight.
pub fn total_loss(l_rpn: f64, l_frcnn: f64, l_mask: f64, cfg: &LossConfig) -> LossReport {
    LossReport {
        l_rpn,
        l_frcnn,
        l_mask,
        l_total: l_rpn + l_frcnn + cfg.lambda_mask * l_mask,
    }
}

/// Rasterizes the intersection of a ground-truth quad and a proposal onto an
/// M x M grid over the proposal extent. A cell is set iff its center lies
/// inside the clipped polygon; boundary points count as inside, and an empty
/// intersection yields an all-zero grid.
pub fn make_mask_target(
    proposal: &AxisRect,
    gt_quad: &Quad,
    m: usize,
) -> Result<MaskTarget, LossError> {
    let clipped = clip_quad_to_rect(gt_quad, proposal)?;
    let mut cells = vec![false; m * m];
    if clipped.len() >= 3 {
        let cell_w = proposal.width() / m as f64;
        let cell_h = proposal.height() / m as f64;
        for row in 0..m {
            let cy = proposal.y1 + (row as f64 + 0.5) * cell_h;
            for col in 0..m {
                let cx = proposal.x1 + (col as f64 + 0.5) * cell_w;
                cells[row * m + col] = point_in_convex([cx, cy], &clipped);
            }
        }
    }
    Ok(MaskTarget { size: m, cells })
}
