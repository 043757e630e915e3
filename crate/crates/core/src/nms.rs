//! Greedy non-maximum suppression on axis-aligned rects and convex quads.
//!
//! Ordering is score-descending with ties broken by lower id, and a box is
//! suppressed only when its overlap is strictly greater than the threshold,
//! so a threshold of 1.0 keeps everything.

use crate::geometry::{quad_iou, rect_iou, AxisRect, GeometryError, Quad};

/// A geometry with a textness score and a stable input index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredBox<G> {
    pub geometry: G,
    pub score: f64,
    pub id: usize,
}

impl<G> ScoredBox<G> {
    pub fn new(geometry: G, score: f64, id: usize) -> Self {
        ScoredBox {
            geometry,
            score,
            id,
        }
    }
}

fn order_indices<G>(boxes: &[ScoredBox<G>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| {
        boxes[b]
            .score
            .total_cmp(&boxes[a].score)
            .then(boxes[a].id.cmp(&boxes[b].id))
    });
    order
}

fn greedy_nms<G>(
    boxes: &[ScoredBox<G>],
    iou_thresh: f64,
    iou: impl Fn(&G, &G) -> Result<f64, GeometryError>,
) -> Result<Vec<usize>, GeometryError> {
    let order = order_indices(boxes);
    let mut suppressed = vec![false; boxes.len()];
    let mut kept = Vec::new();
    for (rank, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        kept.push(boxes[i].id);
        for &j in &order[rank + 1..] {
            if suppressed[j] {
                continue;
            }
            if iou(&boxes[i].geometry, &boxes[j].geometry)? > iou_thresh {
                suppressed[j] = true;
            }
        }
    }
    Ok(kept)
}

/// Greedy NMS over axis-aligned rectangles; returns kept ids in keep order.
pub fn nms_rect(boxes: &[ScoredBox<AxisRect>], iou_thresh: f64) -> Vec<usize> {
    greedy_nms(boxes, iou_thresh, |a, b| Ok(rect_iou(a, b))).expect("rect iou is infallible")
}

/// Greedy NMS over convex quads using polygon IoU (Skewed NMS).
/// Fails on non-convex input.
pub fn nms_skewed(boxes: &[ScoredBox<Quad>], iou_thresh: f64) -> Result<Vec<usize>, GeometryError> {
    greedy_nms(boxes, iou_thresh, quad_iou)
}

/// The `n` highest-scoring boxes, score-descending, ties by lower id.
pub fn top_n<G: Clone>(boxes: &[ScoredBox<G>], n: usize) -> Vec<ScoredBox<G>> {
    let order = order_indices(boxes);
    order
        .into_iter()
        .take(n)
        .map(|i| boxes[i].clone())
        .collect()
}
