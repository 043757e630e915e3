//! Self-contained verification suites: each check exercises one contract of
//! the library against an independent oracle and reports pass/fail with a
//! one-line detail. The CLI `selftest` subcommand runs [`run_all`]; the
//! acceptance test target runs the same checks one by one.

pub mod oracles;

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::anchors::{generate_anchors, AnchorSpec, PyramidLevel};
use crate::geometry::{quad_decode, quad_encode, quad_iou, rect_iou, AxisRect, Quad};
use crate::losses::{
    binary_ce, make_mask_target, rpn_loss, smooth_l1, softmax_ce, total_loss, LossConfig,
    MaskTarget, RpnLevelBatch,
};
use crate::network::{build_pyramid, gau, stub_base};
use crate::nms::{nms_rect, nms_skewed, ScoredBox};
use crate::pipeline::{
    detections_to_json, evaluate, infer_traced, GroundTruth, GtInstance, GtShape, LoadedImage,
    PipelineConfig,
};
use crate::roialign::{roi_align, RoiSpec};
use crate::tensor::{bilinear_upsample, Tensor};
use crate::weights::ModelWeights;
use oracles::{
    brute_force_nms, central_difference, gradient_rel_error, monte_carlo_quad_iou,
    random_convex_quad, random_scored_rects,
};

/// Outcome of one verification suite.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<String, String>) -> CheckOutcome {
    let start = Instant::now();
    let (passed, detail) = match f() {
        Ok(detail) => (true, detail),
        Err(detail) => (false, detail),
    };
    CheckOutcome {
        name,
        passed,
        detail,
        elapsed: start.elapsed(),
    }
}

fn fail_if(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Err(msg())
    } else {
        Ok(())
    }
}

/// Eq. roundtrip: encode/decode over 10^4 random quad/proposal pairs must
/// invert below 1e-9 absolute error, in under a second.
pub fn check_quad_roundtrip() -> CheckOutcome {
    check("quad-roundtrip", || {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let mut max_err: f64 = 0.0;
        for _ in 0..10_000 {
            let x1 = rng.random_range(-100.0..100.0);
            let y1 = rng.random_range(-100.0..100.0);
            let p = AxisRect::new(
                x1,
                y1,
                x1 + rng.random_range(0.5..200.0),
                y1 + rng.random_range(0.5..200.0),
            )
            .expect("positive dims");
            let g = random_convex_quad(&mut rng, 120.0);
            let back = quad_decode(&quad_encode(&g, &p), &p).map_err(|e| e.to_string())?;
            for (a, b) in back.vertices().iter().zip(g.vertices().iter()) {
                max_err = max_err.max((a[0] - b[0]).abs()).max((a[1] - b[1]).abs());
            }
        }
        let elapsed = start.elapsed();
        fail_if(max_err >= 1e-9, || format!("max abs error {max_err:.3e}"))?;
        fail_if(elapsed > Duration::from_secs(1), || {
            format!("took {elapsed:?} (budget 1s)")
        })?;
        Ok(format!(
            "10^4 cases, max abs error {max_err:.3e}, {elapsed:?}"
        ))
    })
}

fn gradcheck_softmax(rng: &mut ChaCha8Rng) -> f64 {
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let logits = [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
        let label = rng.random_range(0..2usize);
        let (_, grad) = softmax_ce(logits, label);
        for (i, &g) in grad.iter().enumerate() {
            let mut f = |x: &[f64]| softmax_ce([x[0], x[1]], label).0;
            let fd = central_difference(&mut f, &logits, i, 1e-6);
            worst = worst.max(gradient_rel_error(g, fd));
        }
    }
    worst
}

fn gradcheck_smooth_l1(rng: &mut ChaCha8Rng) -> f64 {
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = if rng.random_bool(0.5) { 4 } else { 8 };
        let pred: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let target: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (_, grad) = smooth_l1(&pred, &target).expect("equal lengths");
        for (i, &g) in grad.iter().enumerate() {
            let mut f = |x: &[f64]| smooth_l1(x, &target).expect("equal lengths").0;
            let fd = central_difference(&mut f, &pred, i, 1e-6);
            worst = worst.max(gradient_rel_error(g, fd));
        }
    }
    worst
}

fn gradcheck_binary_ce(rng: &mut ChaCha8Rng) -> f64 {
    let m = 14;
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let target = MaskTarget::from_fn(m, |_, _| rng.random_bool(0.5));
        let logits: Vec<f64> = (0..m * m).map(|_| rng.random_range(-3.0..3.0)).collect();
        let tensor = Tensor::new([1, 1, m, m], logits.clone()).expect("shape matches");
        let (_, grad) = binary_ce(&tensor, &target).expect("shape matches");
        // probing every one of the 196 pixels across 1000 grids is slow and
        // redundant; 16 random pixels per grid still covers each position
        // dozens of times over the suite
        for _ in 0..16 {
            let i = rng.random_range(0..m * m);
            let mut f = |x: &[f64]| {
                let t = Tensor::new([1, 1, m, m], x.to_vec()).expect("shape matches");
                binary_ce(&t, &target).expect("shape matches").0
            };
            let fd = central_difference(&mut f, &logits, i, 1e-6);
            worst = worst.max(gradient_rel_error(grad[i], fd));
        }
    }
    worst
}

/// Worst floored relative error of each loss gradient against central
/// finite differences (step 1e-6, 10^3 random inputs per loss).
pub fn gradient_worst_errors() -> [(&'static str, f64); 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    [
        ("softmax-ce", gradcheck_softmax(&mut rng)),
        ("smooth-l1", gradcheck_smooth_l1(&mut rng)),
        ("binary-ce", gradcheck_binary_ce(&mut rng)),
    ]
}

/// Analytic gradients of the three losses against central finite
/// differences (step 1e-6) over 10^3 random inputs each, within 1e-5
/// floored relative error and a 10 s budget.
pub fn check_gradients() -> CheckOutcome {
    check("gradient-suite", || {
        let start = Instant::now();
        let [(_, softmax_worst), (_, smooth_worst), (_, bce_worst)] = gradient_worst_errors();
        let elapsed = start.elapsed();
        for (name, worst) in [
            ("softmax-ce", softmax_worst),
            ("smooth-l1", smooth_worst),
            ("binary-ce", bce_worst),
        ] {
            fail_if(worst >= 1e-5, || format!("{name} rel error {worst:.3e}"))?;
        }
        fail_if(elapsed > Duration::from_secs(10), || {
            format!("took {elapsed:?} (budget 10s)")
        })?;
        Ok(format!(
            "rel errors: softmax {softmax_worst:.2e}, smooth-l1 {smooth_worst:.2e}, bce {bce_worst:.2e}, {elapsed:?}"
        ))
    })
}

/// Greedy NMS keep-sets must match the rescanning brute-force oracle
/// exactly, for rects and quads, over 500 random instances each.
pub fn check_nms_oracle() -> CheckOutcome {
    check("nms-oracle", || {
        let mut rng = ChaCha8Rng::seed_from_u64(303);
        for case in 0..500 {
            let n = rng.random_range(1..=50usize);
            let boxes = random_scored_rects(n, 9000 + case);
            let thresh = rng.random_range(0.0..=1.0);
            let fast = nms_rect(&boxes, thresh);
            let slow = brute_force_nms(&boxes, thresh, rect_iou);
            fail_if(fast != slow, || {
                format!("rect case {case}: {fast:?} != {slow:?}")
            })?;
        }
        for case in 0..500 {
            let n = rng.random_range(1..=50usize);
            let boxes: Vec<ScoredBox<Quad>> = (0..n)
                .map(|i| {
                    let q = random_convex_quad(&mut rng, 6.0);
                    ScoredBox::new(q, rng.random_range(0.0..1.0), i)
                })
                .collect();
            let thresh = rng.random_range(0.0..=1.0);
            let fast = nms_skewed(&boxes, thresh).map_err(|e| e.to_string())?;
            let slow = brute_force_nms(&boxes, thresh, |a, b| {
                quad_iou(a, b).expect("convex by construction")
            });
            fail_if(fast != slow, || {
                format!("skewed case {case}: {fast:?} != {slow:?}")
            })?;
        }
        Ok("500 rect + 500 skewed instances match brute force exactly".to_string())
    })
}

/// Clipping-based polygon IoU against a 10^6-sample stratified Monte-Carlo
/// oracle on 100 random convex pairs, and exact agreement with the
/// rectangle IoU on axis-aligned quads.
pub fn check_polygon_iou() -> CheckOutcome {
    check("polygon-iou", || {
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        let mut worst: f64 = 0.0;
        for case in 0..100 {
            let a = random_convex_quad(&mut rng, 8.0);
            let b = random_convex_quad(&mut rng, 8.0);
            let exact = quad_iou(&a, &b).map_err(|e| e.to_string())?;
            let mc = monte_carlo_quad_iou(&a, &b, 1_000_000, 5000 + case);
            let err = (exact - mc).abs();
            worst = worst.max(err);
            fail_if(err >= 2e-3, || {
                format!("case {case}: clip {exact:.6} vs mc {mc:.6}")
            })?;
        }
        let mut worst_axis: f64 = 0.0;
        for _ in 0..100 {
            let mk = |rng: &mut ChaCha8Rng| {
                let x1 = rng.random_range(-5.0..5.0);
                let y1 = rng.random_range(-5.0..5.0);
                AxisRect::new(
                    x1,
                    y1,
                    x1 + rng.random_range(0.5..8.0),
                    y1 + rng.random_range(0.5..8.0),
                )
                .expect("positive dims")
            };
            let a = mk(&mut rng);
            let b = mk(&mut rng);
            let qi = quad_iou(&a.to_quad(), &b.to_quad()).map_err(|e| e.to_string())?;
            let err = (qi - rect_iou(&a, &b)).abs();
            worst_axis = worst_axis.max(err);
            fail_if(err > 1e-12, || format!("axis-aligned divergence {err:.3e}"))?;
        }
        Ok(format!(
            "100 monte-carlo pairs (worst {worst:.2e}), 100 axis-aligned pairs (worst {worst_axis:.2e})"
        ))
    })
}

/// RoIAlign must reproduce affine feature planes exactly at every bin
/// (within 1e-9) and preserve constant maps bit-exactly.
pub fn check_roialign_affine() -> CheckOutcome {
    check("roialign-affine", || {
        let spec = RoiSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(505);
        for case in 0..50 {
            let (a, b, c) = (
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-5.0..5.0),
            );
            let feat =
                Tensor::from_fn([1, 1, 20, 20], |_, _, y, x| a * x as f64 + b * y as f64 + c);
            let x1 = rng.random_range(1.0..8.0);
            let y1 = rng.random_range(1.0..8.0);
            let roi = AxisRect::new(
                x1,
                y1,
                x1 + rng.random_range(2.0..10.0),
                y1 + rng.random_range(2.0..10.0),
            )
            .expect("positive dims");
            let out = roi_align(&feat, &roi, 1.0, &spec).map_err(|e| e.to_string())?;
            let s = spec.samples_per_bin;
            let bin_w = roi.width() / spec.output_size as f64;
            let bin_h = roi.height() / spec.output_size as f64;
            for by in 0..spec.output_size {
                for bx in 0..spec.output_size {
                    let mut mean_x = 0.0;
                    let mut mean_y = 0.0;
                    for si in 0..s {
                        mean_x += roi.x1 + bin_w * (bx as f64 + (si as f64 + 0.5) / s as f64);
                        mean_y += roi.y1 + bin_h * (by as f64 + (si as f64 + 0.5) / s as f64);
                    }
                    mean_x /= s as f64;
                    mean_y /= s as f64;
                    let want = a * mean_x + b * mean_y + c;
                    let got = out.get(0, 0, by, bx);
                    fail_if((got - want).abs() >= 1e-9, || {
                        format!("case {case} bin ({by},{bx}): got {got}, want {want}")
                    })?;
                }
            }
        }
        // constant preservation is exact
        let feat = Tensor::full([1, 3, 12, 12], 7.25);
        let roi = AxisRect::new(0.5, 1.0, 10.5, 11.0).expect("positive dims");
        let out = roi_align(&feat, &roi, 1.0, &RoiSpec::default()).map_err(|e| e.to_string())?;
        fail_if(out.data().iter().any(|&v| v != 7.25), || {
            "constant map not preserved exactly".to_string()
        })?;
        Ok("50 affine planes within 1e-9, constant map exact".to_string())
    })
}

/// Anchor lattice counts, centers and area-preserving shapes against the
/// closed-form values for all three levels.
pub fn check_anchor_lattice() -> CheckOutcome {
    check("anchor-lattice", || {
        let spec = AnchorSpec::default();
        let ratios = [0.2, 0.5, 1.0, 2.0, 4.0, 8.0];
        fail_if(spec.aspect_ratios != ratios, || {
            "unexpected default ratio set".to_string()
        })?;
        for (level, scale, stride) in [
            (PyramidLevel::P2, 32.0, 4usize),
            (PyramidLevel::P3, 64.0, 8),
            (PyramidLevel::P4, 128.0, 16),
        ] {
            let (fh, fw) = (5usize, 7usize);
            let anchors = generate_anchors(&spec, level, fh, fw);
            fail_if(anchors.len() != fh * fw * 6, || {
                format!("{}: count {}", level.name(), anchors.len())
            })?;
            for i in 0..fh {
                for j in 0..fw {
                    for (ai, &ratio) in ratios.iter().enumerate() {
                        let a = &anchors[(i * fw + j) * 6 + ai];
                        let want_cx = (j as f64 + 0.5) * stride as f64;
                        let want_cy = (i as f64 + 0.5) * stride as f64;
                        let (cx, cy) = a.center();
                        let want_w = scale * ratio.sqrt();
                        let want_h = scale / ratio.sqrt();
                        let ok = (cx - want_cx).abs() < 1e-9
                            && (cy - want_cy).abs() < 1e-9
                            && (a.width() - want_w).abs() < 1e-9
                            && (a.height() - want_h).abs() < 1e-9;
                        fail_if(!ok, || {
                            format!(
                                "{} cell ({i},{j}) ratio {ratio}: got center ({cx},{cy}) {}x{}",
                                level.name(),
                                a.width(),
                                a.height()
                            )
                        })?;
                    }
                }
            }
        }
        Ok("counts, centers and shapes exact on P2/P3/P4".to_string())
    })
}

/// Pyramid stride contract over three input sizes, FPA/GAU shape
/// preservation, and the zeroed-gate GAU degradation to a plain up-sample.
pub fn check_architecture() -> CheckOutcome {
    check("architecture", || {
        let w = ModelWeights::generate(4, 4, 77).map_err(|e| e.to_string())?;
        for size in [64usize, 128, 256] {
            let img = Tensor::from_fn([1, 3, size, size], |_, c, y, x| {
                ((c + 3 * y + 5 * x) % 17) as f64 / 17.0
            });
            let (r2, r3, r4) = stub_base(&img, &w).map_err(|e| e.to_string())?;
            let pyr = build_pyramid(&r2, &r3, &r4, &w).map_err(|e| e.to_string())?;
            let want = |stride: usize| [1usize, 4, size / stride, size / stride];
            fail_if(pyr.p2.shape() != want(4), || {
                format!("size {size}: p2 shape {:?}", pyr.p2.shape())
            })?;
            fail_if(pyr.p3.shape() != want(8), || {
                format!("size {size}: p3 shape {:?}", pyr.p3.shape())
            })?;
            fail_if(pyr.p4.shape() != want(16), || {
                format!("size {size}: p4 shape {:?}", pyr.p4.shape())
            })?;
        }
        // zeroed gate: GAU collapses to the up-sample path
        let mut wz = ModelWeights::generate(4, 4, 78).map_err(|e| e.to_string())?;
        wz.zero_layer("gau3.gate").map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(79);
        let low = Tensor::from_fn([1, 8, 10, 10], |_, _, _, _| rng.random_range(-1.0..1.0));
        let high = Tensor::from_fn([1, 4, 5, 5], |_, _, _, _| rng.random_range(-1.0..1.0));
        let out =
            gau(&low, &high, wz.p("gau3.low"), wz.p("gau3.gate")).map_err(|e| e.to_string())?;
        let plain = bilinear_upsample(&high, 10, 10).map_err(|e| e.to_string())?;
        for (a, b) in out.data().iter().zip(plain.data()) {
            fail_if((a - b).abs() > 1e-12, || {
                format!("zeroed-gate gau deviates by {:.3e}", (a - b).abs())
            })?;
        }
        Ok("stride contract at 64/128/256, zeroed-gate GAU = up-sample".to_string())
    })
}

/// Loss composition identity and the frozen synthetic RPN mini-batch value.
pub fn check_loss_composition() -> CheckOutcome {
    check("loss-composition", || {
        let cfg = LossConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(606);
        for _ in 0..1000 {
            let r = rng.random_range(0.0..10.0);
            let f = rng.random_range(0.0..10.0);
            let m = rng.random_range(0.0..64.0);
            let report = total_loss(r, f, m, &cfg);
            let recon = report.l_rpn + report.l_frcnn + cfg.lambda_mask * report.l_mask;
            fail_if((report.l_total - recon).abs() > 1e-12, || {
                format!("composition drift {:.3e}", (report.l_total - recon).abs())
            })?;
        }
        let report = total_loss(1.0, 1.0, 32.0, &cfg);
        fail_if(report.l_total != 3.0, || {
            format!("(1, 1, 32) composed to {}", report.l_total)
        })?;
        // two-anchor mini-batch: logits (0.2, 0.8) positive, (0.5, -0.5)
        // negative, positive deltas off by (0.1, -0.2, 0.3, 0.05)
        let level = RpnLevelBatch {
            cls: vec![([0.2, 0.8], 1), ([0.5, -0.5], 0)],
            loc: vec![([0.1, -0.2, 0.3, 0.05], [0.0; 4])],
        };
        let (total, _) = rpn_loss(&[level], &cfg).map_err(|e| e.to_string())?;
        let want = 0.589_124_819_002_054_3;
        fail_if((total - want).abs() > 1e-12, || {
            format!("synthetic rpn loss {total} != {want}")
        })?;
        Ok("composition <= 1e-12 over 10^3 draws, synthetic rpn batch matches".to_string())
    })
}

/// Deterministic synthetic scene: smooth background gradient with two
/// bright text-like bars.
pub fn fixture_image() -> LoadedImage {
    let tensor = Tensor::from_fn([1, 3, 32, 48], |_, c, y, x| {
        let mut v = 0.15 + 0.4 * (x as f64 / 48.0) + 0.2 * (y as f64 / 32.0) + 0.05 * c as f64;
        if (4..10).contains(&y) && (6..26).contains(&x) {
            v += 0.45;
        }
        if (18..26).contains(&y) && (20..44).contains(&x) {
            v += 0.35;
        }
        v.min(1.0)
    });
    LoadedImage::from_network_input(tensor)
}

fn fixture_config() -> PipelineConfig {
    PipelineConfig {
        test_scale: 32,
        ..PipelineConfig::default()
    }
}

/// Seed-42 weights with the head classifier bias nudged toward the text
/// class, so the fixture yields a nonempty detection set and the NMS and
/// budget contracts are exercised for real.
fn biased_fixture_weights() -> Result<ModelWeights, String> {
    let mut weights = ModelWeights::generate(8, 8, 42).map_err(|e| e.to_string())?;
    let mut cls = weights.p("head.cls").clone();
    cls.bias = vec![0.0, 0.5];
    weights
        .set_layer("head.cls", cls)
        .map_err(|e| e.to_string())?;
    Ok(weights)
}

/// End-to-end determinism: three sequential runs and two spawned-thread runs
/// of `infer` on the fixture with seed-42 weights must serialize to
/// byte-identical JSON; a text-biased variant of the same weights then
/// produces a nonempty detection set that must respect the top-N budget and
/// the pairwise skewed-NMS overlap bound.
pub fn check_determinism() -> CheckOutcome {
    check("determinism", || {
        let weights = ModelWeights::generate(8, 8, 42).map_err(|e| e.to_string())?;
        let cfg = fixture_config();
        let image = fixture_image();

        let run = |img: &LoadedImage, w: &ModelWeights, cfg: &PipelineConfig| {
            infer_traced(img, w, cfg).map(|(dets, trace)| (detections_to_json(&dets), dets, trace))
        };
        let (first_json, _, trace) = run(&image, &weights, &cfg).map_err(|e| e.to_string())?;
        for i in 0..2 {
            let (json, _, _) = run(&image, &weights, &cfg).map_err(|e| e.to_string())?;
            fail_if(json != first_json, || {
                format!("sequential run {i} diverged")
            })?;
        }
        let mut handles = Vec::new();
        for _ in 0..2 {
            let w = weights.clone();
            let img = image.clone();
            let cfg = cfg.clone();
            handles.push(std::thread::spawn(move || {
                infer_traced(&img, &w, &cfg).map(|(dets, _)| detections_to_json(&dets))
            }));
        }
        for h in handles {
            let json = h
                .join()
                .map_err(|_| "worker thread panicked".to_string())?
                .map_err(|e| e.to_string())?;
            fail_if(json != first_json, || "threaded run diverged".to_string())?;
        }
        fail_if(trace.proposals_into_stage2 > cfg.top_n, || {
            format!(
                "{} proposals entered the second stage (budget {})",
                trace.proposals_into_stage2, cfg.top_n
            )
        })?;

        // nonempty phase: biased classifier, same determinism plus the
        // overlap bound on the final quads
        let biased = biased_fixture_weights()?;
        let (json_a, dets, trace) = run(&image, &biased, &cfg).map_err(|e| e.to_string())?;
        let (json_b, _, _) = run(&image, &biased, &cfg).map_err(|e| e.to_string())?;
        fail_if(json_a != json_b, || "biased runs diverged".to_string())?;
        fail_if(dets.is_empty(), || {
            "biased fixture produced no detections".to_string()
        })?;
        for (i, a) in dets.iter().enumerate() {
            for b in &dets[i + 1..] {
                let overlap = quad_iou(&a.quad, &b.quad).map_err(|e| e.to_string())?;
                fail_if(overlap > cfg.skewed_nms_iou, || {
                    format!("kept quads overlap at IoU {overlap:.3}")
                })?;
            }
        }

        // the top-N cut actually truncates when the budget is smaller than
        // the NMS survivor count
        let capped = PipelineConfig {
            top_n: trace.proposals_after_nms.saturating_sub(10).max(1),
            ..cfg.clone()
        };
        let (_, _, capped_trace) = run(&image, &biased, &capped).map_err(|e| e.to_string())?;
        fail_if(capped_trace.proposals_into_stage2 != capped.top_n, || {
            format!(
                "capped run admitted {} proposals (budget {})",
                capped_trace.proposals_into_stage2, capped.top_n
            )
        })?;

        Ok(format!(
            "5 runs byte-identical; biased fixture: {} detections from {} stage-2 proposals, pairwise IoU <= {}",
            dets.len(),
            trace.proposals_into_stage2,
            cfg.skewed_nms_iou
        ))
    })
}

/// The two evaluation fixtures: identity detections give perfect scores and
/// a single exact detection out of two ground truths gives R=0.5, P=1,
/// F=2/3 exactly.
pub fn check_eval_protocol() -> CheckOutcome {
    check("eval-protocol", || {
        let q1 = AxisRect::new(0.0, 0.0, 10.0, 5.0)
            .expect("positive dims")
            .to_quad();
        let q2 = AxisRect::new(20.0, 0.0, 30.0, 5.0)
            .expect("positive dims")
            .to_quad();
        let instance = |q: Quad| GtInstance {
            shape: GtShape::Quad(q),
            transcription: "text".to_string(),
            ignore: false,
        };
        let mut gts = GroundTruth::default();
        gts.0
            .insert("img".to_string(), vec![instance(q1), instance(q2)]);
        let det = |q: Quad, score: f64| crate::pipeline::Detection {
            quad: q,
            score,
            mask: None,
        };

        let mut identity = std::collections::BTreeMap::new();
        identity.insert("img".to_string(), vec![det(q1, 0.9), det(q2, 0.8)]);
        let report = evaluate(&identity, &gts, 0.5).map_err(|e| e.to_string())?;
        fail_if(
            report.recall != 1.0 || report.precision != 1.0 || report.f_measure != 1.0,
            || {
                format!(
                    "identity fixture: R={} P={} F={}",
                    report.recall, report.precision, report.f_measure
                )
            },
        )?;

        let mut partial = std::collections::BTreeMap::new();
        partial.insert("img".to_string(), vec![det(q1, 0.9)]);
        let report = evaluate(&partial, &gts, 0.5).map_err(|e| e.to_string())?;
        let f_ok = (report.f_measure - 2.0 / 3.0).abs() < 1e-15;
        fail_if(
            report.recall != 0.5 || report.precision != 1.0 || !f_ok,
            || {
                format!(
                    "partial fixture: R={} P={} F={}",
                    report.recall, report.precision, report.f_measure
                )
            },
        )?;
        Ok("identity 1/1/1, partial 0.5/1.0/(2/3)".to_string())
    })
}

/// Mask targets: cell-center rasterization of the proposal/quad intersection.
pub fn check_mask_targets() -> CheckOutcome {
    check("mask-targets", || {
        let p = AxisRect::new(0.0, 0.0, 14.0, 14.0).expect("positive dims");
        let half = AxisRect::new(0.0, 0.0, 7.0, 14.0)
            .expect("positive dims")
            .to_quad();
        let t = make_mask_target(&p, &half, 14).map_err(|e| e.to_string())?;
        for row in 0..14 {
            for col in 0..14 {
                fail_if(t.get(row, col) != (col < 7), || {
                    format!("left-half target wrong at ({row},{col})")
                })?;
            }
        }
        Ok("left-half ground truth sets exactly the 7 left columns".to_string())
    })
}

/// Runs every suite in order.
pub fn run_all() -> Vec<CheckOutcome> {
    vec![
        check_quad_roundtrip(),
        check_gradients(),
        check_nms_oracle(),
        check_polygon_iou(),
        check_roialign_affine(),
        check_anchor_lattice(),
        check_architecture(),
        check_loss_composition(),
        check_determinism(),
        check_eval_protocol(),
        check_mask_targets(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_image_is_reproducible() {
        let a = fixture_image();
        let b = fixture_image();
        assert_eq!(a.tensor.data(), b.tensor.data());
        assert_eq!(a.tensor.shape(), [1, 3, 32, 48]);
    }
}
