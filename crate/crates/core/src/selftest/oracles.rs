//! Independent reference implementations used to cross-check the fast paths.
//!
//! Everything here deliberately avoids sharing code with the modules it
//! verifies: convolution runs on an explicitly padded buffer, NMS rescans
//! the whole pool instead of sorting, and polygon IoU is estimated from
//! stratified point-in-polygon sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{point_in_convex, AxisRect, Quad};
use crate::nms::ScoredBox;
use crate::tensor::{ConvParams, Tensor, TensorError};

/// Nested-loop cross-correlation over an explicitly zero-padded copy of the
/// input, summing in (in-channel, ky, kx) order.
pub fn naive_conv2d(x: &Tensor, p: &ConvParams) -> Result<Tensor, TensorError> {
    let [batch, in_ch, in_h, in_w] = x.shape();
    let [out_ch, k_in, kh, kw] = p.weights.shape();
    if in_ch != k_in {
        return Err(TensorError::ShapeMismatch {
            op: "naive_conv2d",
            dim: "channels",
            got: in_ch,
            expected: k_in,
        });
    }
    let pad = p.padding;
    let ph = in_h + 2 * pad;
    let pw = in_w + 2 * pad;
    let mut padded = Tensor::zeros([batch, in_ch, ph, pw]);
    for b in 0..batch {
        for c in 0..in_ch {
            for y in 0..in_h {
                for x_ in 0..in_w {
                    padded.set(b, c, y + pad, x_ + pad, x.get(b, c, y, x_));
                }
            }
        }
    }
    let span_h = p.dilation * (kh - 1) + 1;
    let span_w = p.dilation * (kw - 1) + 1;
    if ph < span_h || pw < span_w {
        return Err(TensorError::ConvOutputEmpty {
            dim: "height",
            input: in_h,
            padding: pad,
            dilation: p.dilation,
            kernel: kh,
            stride: p.stride,
        });
    }
    let out_h = (ph - span_h) / p.stride + 1;
    let out_w = (pw - span_w) / p.stride + 1;
    let mut out = Tensor::zeros([batch, out_ch, out_h, out_w]);
    for b in 0..batch {
        for oc in 0..out_ch {
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let mut acc = p.bias[oc];
                    for ic in 0..in_ch {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                acc += p.weights.get(oc, ic, ky, kx)
                                    * padded.get(
                                        b,
                                        ic,
                                        oy * p.stride + ky * p.dilation,
                                        ox * p.stride + kx * p.dilation,
                                    );
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

/// Greedy NMS by repeated full scans: find the best unsuppressed box
/// (score descending, id ascending), keep it, suppress everything it
/// overlaps beyond the threshold, repeat.
pub fn brute_force_nms<G>(
    boxes: &[ScoredBox<G>],
    iou_thresh: f64,
    iou: impl Fn(&G, &G) -> f64,
) -> Vec<usize> {
    let n = boxes.len();
    let mut done = vec![false; n];
    let mut kept = Vec::new();
    loop {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if done[i] {
                continue;
            }
            best = match best {
                None => Some(i),
                Some(j) => {
                    if boxes[i].score > boxes[j].score
                        || (boxes[i].score == boxes[j].score && boxes[i].id < boxes[j].id)
                    {
                        Some(i)
                    } else {
                        Some(j)
                    }
                }
            };
        }
        let Some(i) = best else { break };
        done[i] = true;
        kept.push(boxes[i].id);
        for j in 0..n {
            if !done[j] && iou(&boxes[i].geometry, &boxes[j].geometry) > iou_thresh {
                done[j] = true;
            }
        }
    }
    kept
}

/// Random convex quad: four points in angular order on the unit circle
/// pushed through a random non-degenerate affine map. Cyclic order keeps the
/// polygon convex; the affine map preserves that while varying the shape.
pub fn random_convex_quad(rng: &mut ChaCha8Rng, scale: f64) -> Quad {
    let base = rng.random_range(0.0..std::f64::consts::TAU);
    let mut angles = [0.0f64; 4];
    let mut acc = base;
    for a in &mut angles {
        *a = acc;
        acc += rng.random_range(0.35..std::f64::consts::FRAC_PI_2);
    }
    let m = loop {
        let m: [f64; 4] = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        if (m[0] * m[3] - m[1] * m[2]).abs() >= 0.3 {
            break m;
        }
    };
    let cx = rng.random_range(-scale..scale);
    let cy = rng.random_range(-scale..scale);
    let mut vertices = [[0.0; 2]; 4];
    for (v, angle) in vertices.iter_mut().zip(angles) {
        let (ux, uy) = (angle.cos(), angle.sin());
        v[0] = cx + scale * 0.5 * (m[0] * ux + m[1] * uy);
        v[1] = cy + scale * 0.5 * (m[2] * ux + m[3] * uy);
    }
    Quad::new(vertices).expect("affine image of a cyclic quad has nonzero area")
}

pub fn random_scored_rects(n: usize, seed: u64) -> Vec<ScoredBox<AxisRect>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let x1 = rng.random_range(0.0..20.0);
            let y1 = rng.random_range(0.0..20.0);
            let rect = AxisRect::new(
                x1,
                y1,
                x1 + rng.random_range(1.0..10.0),
                y1 + rng.random_range(1.0..10.0),
            )
            .unwrap();
            ScoredBox::new(rect, rng.random_range(0.0..1.0), i)
        })
        .collect()
}

/// Stratified Monte-Carlo IoU estimate: jittered samples on a sqrt(n) grid
/// over the joint bounding box, classified by point-in-polygon tests.
pub fn monte_carlo_quad_iou(a: &Quad, b: &Quad, samples: usize, seed: u64) -> f64 {
    let va = a.vertices();
    let vb = b.vertices();
    let all: Vec<[f64; 2]> = va.iter().chain(vb.iter()).copied().collect();
    let x0 = all.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
    let y0 = all.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
    let x1 = all.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
    let y1 = all.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
    let grid = (samples as f64).sqrt().floor() as usize;
    let (w, h) = (x1 - x0, y1 - y0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut n_both = 0u64;
    let mut n_either = 0u64;
    for gy in 0..grid {
        for gx in 0..grid {
            let px = x0 + (gx as f64 + rng.random_range(0.0..1.0)) * w / grid as f64;
            let py = y0 + (gy as f64 + rng.random_range(0.0..1.0)) * h / grid as f64;
            let in_a = point_in_convex([px, py], &va);
            let in_b = point_in_convex([px, py], &vb);
            if in_a && in_b {
                n_both += 1;
            }
            if in_a || in_b {
                n_either += 1;
            }
        }
    }
    if n_either == 0 {
        0.0
    } else {
        n_both as f64 / n_either as f64
    }
}

/// Central finite difference of a scalar function at component `i`.
pub fn central_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut hi = x.to_vec();
    let mut lo = x.to_vec();
    hi[i] += h;
    lo[i] -= h;
    (f(&hi) - f(&lo)) / (2.0 * h)
}

/// Relative error with an absolute floor, suited to comparing gradients.
pub fn gradient_rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / f64::max(analytic.abs().max(numeric.abs()), 1e-3)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monte_carlo_identical_quads_is_one() {
        let q = Quad::new([[0.0, 0.0], [4.0, 0.0], [4.0, 4.0], [0.0, 4.0]]).unwrap();
        let iou = monte_carlo_quad_iou(&q, &q, 10_000, 1);
        assert_eq!(iou, 1.0);
    }

    #[test]
    fn monte_carlo_half_overlap_squares() {
        let a = Quad::new([[0.0, 0.0], [2.0, 0.0], [2.0, 2.0], [0.0, 2.0]]).unwrap();
        let b = Quad::new([[1.0, 0.0], [3.0, 0.0], [3.0, 2.0], [1.0, 2.0]]).unwrap();
        let iou = monte_carlo_quad_iou(&a, &b, 1_000_000, 2);
        assert!((iou - 1.0 / 3.0).abs() < 2e-3);
    }

    #[test]
    fn central_difference_of_quadratic() {
        let mut f = |x: &[f64]| x[0] * x[0] + 3.0 * x[1];
        let g0 = central_difference(&mut f, &[2.0, 5.0], 0, 1e-6);
        let g1 = central_difference(&mut f, &[2.0, 5.0], 1, 1e-6);
        assert!((g0 - 4.0).abs() < 1e-8);
        assert!((g1 - 3.0).abs() < 1e-8);
    }

    #[test]
    fn random_quads_are_convex() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            assert!(random_convex_quad(&mut rng, 10.0).is_convex());
        }
    }
}
