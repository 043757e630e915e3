//! RoIAlign bilinear region pooling and the skip fusion that pools every
//! proposal from all three pyramid levels at once.

use thiserror::Error;

use crate::geometry::AxisRect;
use crate::network::PyramidFeatures;
use crate::tensor::{conv2d, ConvParams, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum RoiError {
    #[error("roi_align expects a single-batch feature map, got batch {0}")]
    BatchSize(usize),
    #[error("degenerate roi after scaling: {x1},{y1},{x2},{y2}")]
    DegenerateRoi { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Pooling geometry: bin grid size and the bilinear sample lattice per bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoiSpec {
    pub output_size: usize,
    pub samples_per_bin: usize,
}

impl Default for RoiSpec {
    fn default() -> Self {
        RoiSpec {
            output_size: 7,
            samples_per_bin: 2,
        }
    }
}

/// Pools `roi` (image coordinates) from a single-batch feature map into a
/// `(C, n, n)` grid. The roi is mapped to feature coordinates by `scale`
/// without rounding; each bin averages `samples_per_bin^2` bilinear samples
/// at regularly spaced interior points, and samples outside the map clamp
/// to the border.
pub fn roi_align(
    feat: &Tensor,
    roi: &AxisRect,
    scale: f64,
    spec: &RoiSpec,
) -> Result<Tensor, RoiError> {
    let [batch, ch, fh, fw] = feat.shape();
    if batch != 1 {
        return Err(RoiError::BatchSize(batch));
    }
    let x1 = roi.x1 * scale;
    let y1 = roi.y1 * scale;
    let x2 = roi.x2 * scale;
    let y2 = roi.y2 * scale;
    if !(x2 > x1 && y2 > y1) {
        return Err(RoiError::DegenerateRoi { x1, y1, x2, y2 });
    }
    let n = spec.output_size;
    let s = spec.samples_per_bin;
    let bin_w = (x2 - x1) / n as f64;
    let bin_h = (y2 - y1) / n as f64;
    let max_y = (fh - 1) as f64;
    let max_x = (fw - 1) as f64;

    let mut out = Tensor::zeros([1, ch, n, n]);
    for c in 0..ch {
        for by in 0..n {
            for bx in 0..n {
                let mut acc = 0.0;
                for sy in 0..s {
                    let py = y1 + bin_h * (by as f64 + (sy as f64 + 0.5) / s as f64);
                    let py = py.clamp(0.0, max_y);
                    let y0 = py.floor() as usize;
                    let y1i = (y0 + 1).min(fh - 1);
                    let fy = py - y0 as f64;
                    for sx in 0..s {
                        let px = x1 + bin_w * (bx as f64 + (sx as f64 + 0.5) / s as f64);
                        let px = px.clamp(0.0, max_x);
                        let x0 = px.floor() as usize;
                        let x1i = (x0 + 1).min(fw - 1);
                        let fx = px - x0 as f64;
                        // lerp form: constant maps pool exactly
                        let v00 = feat.get(0, c, y0, x0);
                        let v01 = feat.get(0, c, y0, x1i);
                        let v10 = feat.get(0, c, y1i, x0);
                        let v11 = feat.get(0, c, y1i, x1i);
                        let top = v00 + fx * (v01 - v00);
                        let bottom = v10 + fx * (v11 - v10);
                        acc += top + fy * (bottom - top);
                    }
                }
                out.set(0, c, by, bx, acc / (s * s) as f64);
            }
        }
    }
    Ok(out)
}

/// Pools the roi from P2, P3 and P4 with each level's own spatial scale,
/// concatenates the three descriptors channel-wise (P2, P3, P4 order) and
/// reduces back to C channels with a 1x1 convolution. All three levels
/// always contribute; there is no size-based level assignment.
pub fn skip_roi_align(
    pyr: &PyramidFeatures,
    roi: &AxisRect,
    reduce: &ConvParams,
    spec: &RoiSpec,
) -> Result<Tensor, RoiError> {
    let p2 = roi_align(&pyr.p2, roi, 1.0 / pyr.stride_p2() as f64, spec)?;
    let p3 = roi_align(&pyr.p3, roi, 1.0 / pyr.stride_p3() as f64, spec)?;
    let p4 = roi_align(&pyr.p4, roi, 1.0 / pyr.stride_p4() as f64, spec)?;
    let stacked = crate::tensor::concat_channels(&[&p2, &p3, &p4])?;
    Ok(conv2d(&stacked, reduce)?)
}
