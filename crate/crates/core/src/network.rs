//! Forward pass of the detection network: stub base CNN, feature pyramid
//! attention, global attention up-sampling, the P2/P3/P4 pyramid, per-level
//! RPN heads, and the shared second-stage head for classification,
//! quadrilateral regression and mask prediction.

use thiserror::Error;

use crate::geometry::QuadDelta;
use crate::tensor::{
    add, bilinear_upsample, broadcast_add, broadcast_mul, concat_channels, conv2d, global_avg_pool,
    instance_norm, maxpool2, mul, relu, ConvParams, Tensor, TensorError,
};
use crate::weights::ModelWeights;

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

/// Side length of the square mask logit grid emitted by the head.
pub const MASK_SIZE: usize = 14;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("input image must be (1, 3, H, W) with H, W divisible by 16; got {shape:?}")]
    BadInputDims { shape: [usize; 4] },
    #[error("gau expects low resolution to be exactly twice the high resolution; got low {low:?}, high {high:?}")]
    ResolutionMismatch { low: [usize; 4], high: [usize; 4] },
    #[error("head expects roi features of shape (1, {want_ch}, 7, 7); got {shape:?}")]
    BadRoiFeat { shape: [usize; 4], want_ch: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// The three-level feature pyramid with strides 4, 8 and 16.
#[derive(Debug, Clone)]
pub struct PyramidFeatures {
    pub p2: Tensor,
    pub p3: Tensor,
    pub p4: Tensor,
}

impl PyramidFeatures {
    pub fn stride_p2(&self) -> usize {
        4
    }

    pub fn stride_p3(&self) -> usize {
        8
    }

    pub fn stride_p4(&self) -> usize {
        16
    }
}

/// Textness logits (2k channels) and rect deltas (4k channels) for one level.
#[derive(Debug, Clone)]
pub struct RpnLevelOutput {
    pub logits: Tensor,
    pub deltas: Tensor,
}

/// The aggregated output of the three per-level RPN heads.
#[derive(Debug, Clone)]
pub struct RpnOutput {
    pub p2: RpnLevelOutput,
    pub p3: RpnLevelOutput,
    pub p4: RpnLevelOutput,
}

/// Per-proposal head output: 2-class logits, 8 quad-delta values and a
/// square grid of pre-sigmoid mask logits.
#[derive(Debug, Clone)]
pub struct HeadOutput {
    pub cls_logits: [f64; 2],
    pub quad_delta: QuadDelta,
    pub mask_logits: Tensor,
}

/// Stand-in base CNN producing feature maps at strides 4, 8 and 16 with
/// C, 2C and 4C channels, from 3x3 convolutions, ReLUs and 2x2 max pools.
pub fn stub_base(
    image: &Tensor,
    w: &ModelWeights,
) -> Result<(Tensor, Tensor, Tensor), NetworkError> {
    let shape = image.shape();
    let [b, c, h, wd] = shape;
    if b != 1 || c != 3 || h == 0 || wd == 0 || h % 16 != 0 || wd % 16 != 0 {
        return Err(NetworkError::BadInputDims { shape });
    }
    let t = maxpool2(&relu(&conv2d(image, w.p("stub.conv1"))?))?;
    let res2 = maxpool2(&relu(&conv2d(&t, w.p("stub.conv2"))?))?;
    let res3 = maxpool2(&relu(&conv2d(&res2, w.p("stub.conv3"))?))?;
    let res4 = maxpool2(&relu(&conv2d(&res3, w.p("stub.conv4"))?))?;
    Ok((res2, res3, res4))
}

/// Feature pyramid attention over the stride-16 feature map: three dilated
/// 3x3 convolutions (rates 3, 6, 12) concatenated and reduced 1x1 form the
/// context, a 1x1 projection of the input gates it pixel-wise, and a global
/// average pooling branch is broadcast-added on top.
pub fn fpa(res4: &Tensor, w: &ModelWeights) -> Result<Tensor, NetworkError> {
    let d3 = conv2d(res4, w.p("fpa.dilated3"))?;
    let d6 = conv2d(res4, w.p("fpa.dilated6"))?;
    let d12 = conv2d(res4, w.p("fpa.dilated12"))?;
    let context = conv2d(&concat_channels(&[&d3, &d6, &d12])?, w.p("fpa.reduce"))?;
    let gate = conv2d(res4, w.p("fpa.gate"))?;
    let attended = mul(&gate, &context)?;
    let pooled = conv2d(&global_avg_pool(res4)?, w.p("fpa.global"))?;
    Ok(broadcast_add(&attended, &pooled)?)
}

/// Global attention up-sample: a 3x3 convolution aligns the low-level
/// features, the high-level global context (GAP, 1x1 convolution, instance
/// norm, ReLU) gates them per channel, and the bilinearly up-sampled
/// high-level features are added on top.
pub fn gau(
    low: &Tensor,
    high: &Tensor,
    low_conv: &ConvParams,
    gate_conv: &ConvParams,
) -> Result<Tensor, NetworkError> {
    let [_, _, lh, lw] = low.shape();
    let [_, _, hh, hw] = high.shape();
    if lh != 2 * hh || lw != 2 * hw {
        return Err(NetworkError::ResolutionMismatch {
            low: low.shape(),
            high: high.shape(),
        });
    }
    let low_proc = conv2d(low, low_conv)?;
    let gate = relu(&instance_norm(
        &conv2d(&global_avg_pool(high)?, gate_conv)?,
        INSTANCE_NORM_EPS,
    )?);
    let gated = broadcast_mul(&low_proc, &gate)?;
    let up = bilinear_upsample(high, lh, lw)?;
    Ok(add(&up, &gated)?)
}

/// Assembles the pyramid: P4 from FPA (aligned to C channels), then GAU
/// steps down to P3 and P2.
pub fn build_pyramid(
    res2: &Tensor,
    res3: &Tensor,
    res4: &Tensor,
    w: &ModelWeights,
) -> Result<PyramidFeatures, NetworkError> {
    let p4 = conv2d(&fpa(res4, w)?, w.p("pyramid.align"))?;
    let p3 = gau(res3, &p4, w.p("gau3.low"), w.p("gau3.gate"))?;
    let p2 = gau(res2, &p3, w.p("gau2.low"), w.p("gau2.gate"))?;
    Ok(PyramidFeatures { p2, p3, p4 })
}

fn rpn_level(
    feat: &Tensor,
    w: &ModelWeights,
    conv: &str,
    cls: &str,
    reg: &str,
) -> Result<RpnLevelOutput, NetworkError> {
    let t = relu(&conv2d(feat, w.p(conv))?);
    Ok(RpnLevelOutput {
        logits: conv2d(&t, w.p(cls))?,
        deltas: conv2d(&t, w.p(reg))?,
    })
}

/// One RPN head per pyramid level, each a 3x3 convolution followed by two
/// sibling 1x1 convolutions. Heads do not share weights across levels.
///
/// Channel layout per cell: anchor `a` owns logit channels `(2a, 2a+1)` as
/// (non-text, text) and delta channels `4a..4a+4` as (dx, dy, dw, dh).
pub fn rpn_forward(pyr: &PyramidFeatures, w: &ModelWeights) -> Result<RpnOutput, NetworkError> {
    Ok(RpnOutput {
        p2: rpn_level(&pyr.p2, w, "rpn.p2.conv", "rpn.p2.cls", "rpn.p2.reg")?,
        p3: rpn_level(&pyr.p3, w, "rpn.p3.conv", "rpn.p3.cls", "rpn.p3.reg")?,
        p4: rpn_level(&pyr.p4, w, "rpn.p4.conv", "rpn.p4.cls", "rpn.p4.reg")?,
    })
}

/// Shared head trunk plus the detection and mask branches.
///
/// The trunk keeps the 7x7 extent through two 3x3 convolutions. The
/// detection branch pools globally and applies the classification and
/// regression layers; the mask branch stacks four 3x3 convolutions,
/// up-samples to 14x14 and emits single-channel logits.
pub fn head_forward(roi_feat: &Tensor, w: &ModelWeights) -> Result<HeadOutput, NetworkError> {
    let want_ch = w.meta().channels;
    if roi_feat.shape() != [1, want_ch, 7, 7] {
        return Err(NetworkError::BadRoiFeat {
            shape: roi_feat.shape(),
            want_ch,
        });
    }
    let t = relu(&conv2d(roi_feat, w.p("head.trunk1"))?);
    let t = relu(&conv2d(&t, w.p("head.trunk2"))?);

    let pooled = global_avg_pool(&t)?;
    let cls = conv2d(&pooled, w.p("head.cls"))?;
    let reg = conv2d(&pooled, w.p("head.reg"))?;
    let cls_logits = [cls.get(0, 0, 0, 0), cls.get(0, 1, 0, 0)];
    let mut delta = [0.0; 8];
    for (i, d) in delta.iter_mut().enumerate() {
        *d = reg.get(0, i, 0, 0);
    }

    let mut m = t;
    for name in ["head.mask1", "head.mask2", "head.mask3", "head.mask4"] {
        m = relu(&conv2d(&m, w.p(name))?);
    }
    let m = bilinear_upsample(&m, MASK_SIZE, MASK_SIZE)?;
    let mask_logits = conv2d(&m, w.p("head.mask_out"))?;

    Ok(HeadOutput {
        cls_logits,
        quad_delta: QuadDelta(delta),
        mask_logits,
    })
}
