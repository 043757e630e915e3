//! Minimal forward-only dense tensor engine.
//!
//! Tensors are 4-D `(batch, channels, height, width)` arrays of `f64`.
//! Every operation is a pure function of its inputs; nothing here mutates
//! shared state, so values can be freely sent across threads.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("data length {got} does not match shape {shape:?} (expected {expected})")]
    DataLength {
        shape: [usize; 4],
        expected: usize,
        got: usize,
    },
    #[error("{op}: {dim} mismatch (got {got}, expected {expected})")]
    ShapeMismatch {
        op: &'static str,
        dim: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("{op}: empty spatial extent {height}x{width}")]
    EmptySpatial {
        op: &'static str,
        height: usize,
        width: usize,
    },
    #[error("conv2d: output {dim} collapses to zero (input {input}, padding {padding}, dilation {dilation}, kernel {kernel}, stride {stride})")]
    ConvOutputEmpty {
        dim: &'static str,
        input: usize,
        padding: usize,
        dilation: usize,
        kernel: usize,
        stride: usize,
    },
    #[error("kernel dims must be odd, got {kh}x{kw}")]
    EvenKernel { kh: usize, kw: usize },
    #[error("conv params: {what}")]
    BadConvParams { what: String },
    #[error("bilinear_upsample: target {out_h}x{out_w} must be at least input {in_h}x{in_w} and nonzero")]
    BadUpsampleTarget {
        in_h: usize,
        in_w: usize,
        out_h: usize,
        out_w: usize,
    },
    #[error("concat_channels: empty input list")]
    EmptyConcat,
}

/// Dense 4-D array in `(batch, channels, height, width)` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: [usize; 4], data: Vec<f64>) -> Result<Self, TensorError> {
        let expected = shape.iter().product();
        if data.len() != expected {
            return Err(TensorError::DataLength {
                shape,
                expected,
                got: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: [usize; 4], value: f64) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    /// Builds a tensor by evaluating `f(b, c, y, x)` at every position.
    pub fn from_fn(
        shape: [usize; 4],
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Self {
        let [nb, nc, nh, nw] = shape;
        let mut data = Vec::with_capacity(nb * nc * nh * nw);
        for b in 0..nb {
            for c in 0..nc {
                for y in 0..nh {
                    for x in 0..nw {
                        data.push(f(b, c, y, x));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    fn offset(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        ((b * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.offset(b, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, y: usize, x: usize, v: f64) {
        let i = self.offset(b, c, y, x);
        self.data[i] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Convolution weights plus hyperparameters. Kernels are `(out_ch, in_ch, kh, kw)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub weights: Tensor,
    pub bias: Vec<f64>,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvParams {
    pub fn new(
        weights: Tensor,
        bias: Vec<f64>,
        stride: usize,
        padding: usize,
        dilation: usize,
    ) -> Result<Self, TensorError> {
        let [out_ch, _, kh, kw] = weights.shape();
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(TensorError::EvenKernel { kh, kw });
        }
        if stride == 0 || dilation == 0 {
            return Err(TensorError::BadConvParams {
                what: format!("stride {stride} and dilation {dilation} must be positive"),
            });
        }
        if bias.len() != out_ch {
            return Err(TensorError::BadConvParams {
                what: format!("bias length {} != out_ch {out_ch}", bias.len()),
            });
        }
        Ok(ConvParams {
            weights,
            bias,
            stride,
            padding,
            dilation,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }
}

fn conv_out_dim(
    dim: &'static str,
    input: usize,
    padding: usize,
    dilation: usize,
    kernel: usize,
    stride: usize,
) -> Result<usize, TensorError> {
    let span = dilation * (kernel - 1) + 1;
    let padded = input + 2 * padding;
    if padded < span {
        return Err(TensorError::ConvOutputEmpty {
            dim,
            input,
            padding,
            dilation,
            kernel,
            stride,
        });
    }
    Ok((padded - span) / stride + 1)
}

/// 2-D convolution in the cross-correlation convention (no kernel flip).
/// Out-of-range taps read zero padding.
pub fn conv2d(x: &Tensor, p: &ConvParams) -> Result<Tensor, TensorError> {
    let [batch, in_ch, in_h, in_w] = x.shape();
    let [out_ch, k_in, kh, kw] = p.weights.shape();
    if in_ch != k_in {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            dim: "channels",
            got: in_ch,
            expected: k_in,
        });
    }
    let out_h = conv_out_dim("height", in_h, p.padding, p.dilation, kh, p.stride)?;
    let out_w = conv_out_dim("width", in_w, p.padding, p.dilation, kw, p.stride)?;

    let mut out = Tensor::zeros([batch, out_ch, out_h, out_w]);
    for b in 0..batch {
        for oc in 0..out_ch {
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let mut acc = p.bias[oc];
                    for ic in 0..in_ch {
                        for ky in 0..kh {
                            let iy =
                                (oy * p.stride + ky * p.dilation) as isize - p.padding as isize;
                            if iy < 0 || iy >= in_h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix =
                                    (ox * p.stride + kx * p.dilation) as isize - p.padding as isize;
                                if ix < 0 || ix >= in_w as isize {
                                    continue;
                                }
                                acc += p.weights.get(oc, ic, ky, kx)
                                    * x.get(b, ic, iy as usize, ix as usize);
                            }
                        }
                    }
                    out.set(b, oc, oy, ox, acc);
                }
            }
        }
    }
    Ok(out)
}

/// Arithmetic mean over the spatial extent, per `(batch, channel)`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor, TensorError> {
    let [batch, ch, h, w] = x.shape();
    if h == 0 || w == 0 {
        return Err(TensorError::EmptySpatial {
            op: "global_avg_pool",
            height: h,
            width: w,
        });
    }
    let n = (h * w) as f64;
    let mut out = Tensor::zeros([batch, ch, 1, 1]);
    for b in 0..batch {
        for c in 0..ch {
            let mut sum = 0.0;
            for y in 0..h {
                for x_ in 0..w {
                    sum += x.get(b, c, y, x_);
                }
            }
            out.set(b, c, 0, 0, sum / n);
        }
    }
    Ok(out)
}

// Lerp form: exactly constant-preserving (zero differences leave the base
// value untouched), unlike the four-weight sum.
#[inline]
fn bilinear_sample_plane(x: &Tensor, b: usize, c: usize, sy: f64, sx: f64) -> f64 {
    let h = x.height();
    let w = x.width();
    let sy = sy.clamp(0.0, (h - 1) as f64);
    let sx = sx.clamp(0.0, (w - 1) as f64);
    let y0 = sy.floor() as usize;
    let x0 = sx.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = sy - y0 as f64;
    let fx = sx - x0 as f64;
    let v00 = x.get(b, c, y0, x0);
    let v01 = x.get(b, c, y0, x1);
    let v10 = x.get(b, c, y1, x0);
    let v11 = x.get(b, c, y1, x1);
    let top = v00 + fx * (v01 - v00);
    let bottom = v10 + fx * (v11 - v10);
    top + fy * (bottom - top)
}

/// Bilinear upsampling, align-corners=false: source coordinate for a target
/// pixel is `(dst + 0.5) * in/out - 0.5`, clamped to the valid range.
pub fn bilinear_upsample(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor, TensorError> {
    let [batch, ch, in_h, in_w] = x.shape();
    if out_h == 0 || out_w == 0 || out_h < in_h || out_w < in_w {
        return Err(TensorError::BadUpsampleTarget {
            in_h,
            in_w,
            out_h,
            out_w,
        });
    }
    let scale_y = in_h as f64 / out_h as f64;
    let scale_x = in_w as f64 / out_w as f64;
    let mut out = Tensor::zeros([batch, ch, out_h, out_w]);
    for b in 0..batch {
        for c in 0..ch {
            for oy in 0..out_h {
                let sy = (oy as f64 + 0.5) * scale_y - 0.5;
                for ox in 0..out_w {
                    let sx = (ox as f64 + 0.5) * scale_x - 0.5;
                    out.set(b, c, oy, ox, bilinear_sample_plane(x, b, c, sy, sx));
                }
            }
        }
    }
    Ok(out)
}

/// Per-(batch, channel) plane normalization `(v - mean) / sqrt(var + eps)`,
/// population variance, no learned affine.
pub fn instance_norm(x: &Tensor, eps: f64) -> Result<Tensor, TensorError> {
    let [batch, ch, h, w] = x.shape();
    if h == 0 || w == 0 {
        return Err(TensorError::EmptySpatial {
            op: "instance_norm",
            height: h,
            width: w,
        });
    }
    let n = (h * w) as f64;
    let mut out = Tensor::zeros(x.shape());
    for b in 0..batch {
        for c in 0..ch {
            let mut sum = 0.0;
            for y in 0..h {
                for x_ in 0..w {
                    sum += x.get(b, c, y, x_);
                }
            }
            let mean = sum / n;
            let mut var = 0.0;
            for y in 0..h {
                for x_ in 0..w {
                    let d = x.get(b, c, y, x_) - mean;
                    var += d * d;
                }
            }
            var /= n;
            let denom = (var + eps).sqrt();
            for y in 0..h {
                for x_ in 0..w {
                    out.set(b, c, y, x_, (x.get(b, c, y, x_) - mean) / denom);
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Mul,
}

pub fn elementwise(x: &Tensor, y: &Tensor, op: ElementwiseOp) -> Result<Tensor, TensorError> {
    if x.shape() != y.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "elementwise",
            dim: "total elements",
            got: y.data().len(),
            expected: x.data().len(),
        });
    }
    let data = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(&a, &b)| match op {
            ElementwiseOp::Add => a + b,
            ElementwiseOp::Mul => a * b,
        })
        .collect();
    Ok(Tensor {
        shape: x.shape(),
        data,
    })
}

pub fn add(x: &Tensor, y: &Tensor) -> Result<Tensor, TensorError> {
    elementwise(x, y, ElementwiseOp::Add)
}

pub fn mul(x: &Tensor, y: &Tensor) -> Result<Tensor, TensorError> {
    elementwise(x, y, ElementwiseOp::Mul)
}

/// Multiplies every spatial position of `x` by the per-channel scalar held in
/// `gate` (shape `(batch, channels, 1, 1)`).
pub fn broadcast_mul(x: &Tensor, gate: &Tensor) -> Result<Tensor, TensorError> {
    let [batch, ch, h, w] = x.shape();
    if gate.shape() != [batch, ch, 1, 1] {
        return Err(TensorError::ShapeMismatch {
            op: "broadcast_mul",
            dim: "gate channels",
            got: gate.channels(),
            expected: ch,
        });
    }
    let mut out = Tensor::zeros(x.shape());
    for b in 0..batch {
        for c in 0..ch {
            let g = gate.get(b, c, 0, 0);
            for y in 0..h {
                for x_ in 0..w {
                    out.set(b, c, y, x_, x.get(b, c, y, x_) * g);
                }
            }
        }
    }
    Ok(out)
}

/// Adds the per-channel scalar held in `bias` (shape `(batch, channels, 1, 1)`)
/// to every spatial position of `x`.
pub fn broadcast_add(x: &Tensor, bias: &Tensor) -> Result<Tensor, TensorError> {
    let [batch, ch, h, w] = x.shape();
    if bias.shape() != [batch, ch, 1, 1] {
        return Err(TensorError::ShapeMismatch {
            op: "broadcast_add",
            dim: "bias channels",
            got: bias.channels(),
            expected: ch,
        });
    }
    let mut out = Tensor::zeros(x.shape());
    for b in 0..batch {
        for c in 0..ch {
            let v = bias.get(b, c, 0, 0);
            for y in 0..h {
                for x_ in 0..w {
                    out.set(b, c, y, x_, x.get(b, c, y, x_) + v);
                }
            }
        }
    }
    Ok(out)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

#[inline]
pub fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Softmax across the channel axis at every spatial position,
/// max-subtracted for stability.
pub fn softmax_channels(x: &Tensor) -> Tensor {
    let [batch, ch, h, w] = x.shape();
    let mut out = Tensor::zeros(x.shape());
    for b in 0..batch {
        for y in 0..h {
            for x_ in 0..w {
                let mut m = f64::NEG_INFINITY;
                for c in 0..ch {
                    m = m.max(x.get(b, c, y, x_));
                }
                let mut sum = 0.0;
                for c in 0..ch {
                    let e = (x.get(b, c, y, x_) - m).exp();
                    out.set(b, c, y, x_, e);
                    sum += e;
                }
                for c in 0..ch {
                    out.set(b, c, y, x_, out.get(b, c, y, x_) / sum);
                }
            }
        }
    }
    out
}

/// Concatenates along the channel axis; batch and spatial dims must agree.
pub fn concat_channels(xs: &[&Tensor]) -> Result<Tensor, TensorError> {
    let first = xs.first().ok_or(TensorError::EmptyConcat)?;
    let [batch, _, h, w] = first.shape();
    let mut total_ch = 0;
    for x in xs {
        let [b2, c2, h2, w2] = x.shape();
        if b2 != batch || h2 != h || w2 != w {
            return Err(TensorError::ShapeMismatch {
                op: "concat_channels",
                dim: "batch/spatial",
                got: h2 * w2 * b2,
                expected: batch * h * w,
            });
        }
        total_ch += c2;
    }
    let mut out = Tensor::zeros([batch, total_ch, h, w]);
    for b in 0..batch {
        let mut co = 0;
        for x in xs {
            for c in 0..x.channels() {
                for y in 0..h {
                    for x_ in 0..w {
                        out.set(b, co, y, x_, x.get(b, c, y, x_));
                    }
                }
                co += 1;
            }
        }
    }
    Ok(out)
}

/// 2x2 stride-2 max pooling. Requires at least a 2x2 spatial extent.
pub fn maxpool2(x: &Tensor) -> Result<Tensor, TensorError> {
    let [batch, ch, h, w] = x.shape();
    if h < 2 || w < 2 {
        return Err(TensorError::EmptySpatial {
            op: "maxpool2",
            height: h,
            width: w,
        });
    }
    let oh = h / 2;
    let ow = w / 2;
    let mut out = Tensor::zeros([batch, ch, oh, ow]);
    for b in 0..batch {
        for c in 0..ch {
            for oy in 0..oh {
                for ox in 0..ow {
                    let y = oy * 2;
                    let x_ = ox * 2;
                    let m = x
                        .get(b, c, y, x_)
                        .max(x.get(b, c, y, x_ + 1))
                        .max(x.get(b, c, y + 1, x_))
                        .max(x.get(b, c, y + 1, x_ + 1));
                    out.set(b, c, oy, ox, m);
                }
            }
        }
    }
    Ok(out)
}
