//! Quadrilateral and rectangle arithmetic: the 8-offset quad
//! parameterization, 4-parameter center/size rect deltas, and polygon IoU
//! via Sutherland-Hodgman convex clipping with shoelace areas.
//!
//! Coordinates are continuous image pixels (x right, y down). Quad vertices
//! are ordered top-left, top-right, bottom-right, bottom-left; vertex `i` of
//! a ground-truth quad is referenced to corner `i` of the proposal rectangle
//! (corner 1 = (x1,y1), corner 2 = (x2,y1), corner 3 = (x2,y2),
//! corner 4 = (x1,y2)). X offsets are normalized by the proposal width,
//! y offsets by its height.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("degenerate rectangle: ({x1}, {y1}, {x2}, {y2}) must satisfy x2 > x1, y2 > y1 with finite coordinates")]
    DegenerateRect { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("degenerate quad: zero signed area or non-finite vertex")]
    DegenerateQuad,
    #[error("non-convex quad: edge turn directions change sign")]
    NonConvexQuad,
    #[error("non-finite delta component")]
    NonFiniteDelta,
}

/// Axis-aligned rectangle with strictly positive width and height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisRect {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl AxisRect {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeometryError> {
        let finite = [x1, y1, x2, y2].iter().all(|v| v.is_finite());
        if !finite || x2 <= x1 || y2 <= y1 {
            return Err(GeometryError::DegenerateRect { x1, y1, x2, y2 });
        }
        Ok(AxisRect { x1, y1, x2, y2 })
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    /// Corners in quad vertex order: TL, TR, BR, BL.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        [
            [self.x1, self.y1],
            [self.x2, self.y1],
            [self.x2, self.y2],
            [self.x1, self.y2],
        ]
    }

    pub fn to_quad(&self) -> Quad {
        Quad {
            vertices: self.corners(),
        }
    }

    /// Clips this rect to `bounds`, returning `None` if nothing positive remains.
    pub fn clip_to(&self, bounds: &AxisRect) -> Option<AxisRect> {
        let x1 = self.x1.max(bounds.x1);
        let y1 = self.y1.max(bounds.y1);
        let x2 = self.x2.min(bounds.x2);
        let y2 = self.y2.min(bounds.y2);
        AxisRect::new(x1, y1, x2, y2).ok()
    }
}

/// Ordered 4-vertex quadrilateral (TL, TR, BR, BL) with nonzero signed area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quad {
    vertices: [[f64; 2]; 4],
}

impl Quad {
    pub fn new(vertices: [[f64; 2]; 4]) -> Result<Self, GeometryError> {
        if vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(GeometryError::DegenerateQuad);
        }
        let q = Quad { vertices };
        if shoelace_signed(&q.vertices) == 0.0 {
            return Err(GeometryError::DegenerateQuad);
        }
        Ok(q)
    }

    pub fn vertices(&self) -> [[f64; 2]; 4] {
        self.vertices
    }

    pub fn signed_area(&self) -> f64 {
        shoelace_signed(&self.vertices)
    }

    /// True when no two consecutive edge turns have opposite sign
    /// (collinear vertices are tolerated).
    pub fn is_convex(&self) -> bool {
        let v = &self.vertices;
        let mut sign = 0.0f64;
        for i in 0..4 {
            let a = v[i];
            let b = v[(i + 1) % 4];
            let c = v[(i + 2) % 4];
            let cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]);
            if cross != 0.0 {
                if sign != 0.0 && cross.signum() != sign {
                    return false;
                }
                sign = cross.signum();
            }
        }
        true
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Quad {
        let mut v = self.vertices;
        for p in &mut v {
            p[0] += dx;
            p[1] += dy;
        }
        Quad { vertices: v }
    }
}

/// Eight normalized offsets from a proposal's corners to a quad's vertices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadDelta(pub [f64; 8]);

/// Center/size parameterization (dx, dy, dw, dh) for rectangle regression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectDelta {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
}

/// Encodes quad `g` against proposal `p`: vertex i is referenced to corner i
/// of `p`, x offsets divided by the proposal width, y offsets by its height.
pub fn quad_encode(g: &Quad, p: &AxisRect) -> QuadDelta {
    let corners = p.corners();
    let v = g.vertices();
    let mut d = [0.0; 8];
    for i in 0..4 {
        d[2 * i] = (v[i][0] - corners[i][0]) / p.width();
        d[2 * i + 1] = (v[i][1] - corners[i][1]) / p.height();
    }
    QuadDelta(d)
}

/// Algebraic inverse of [`quad_encode`].
pub fn quad_decode(d: &QuadDelta, p: &AxisRect) -> Result<Quad, GeometryError> {
    if d.0.iter().any(|v| !v.is_finite()) {
        return Err(GeometryError::NonFiniteDelta);
    }
    let corners = p.corners();
    let mut v = [[0.0; 2]; 4];
    for i in 0..4 {
        v[i][0] = d.0[2 * i] * p.width() + corners[i][0];
        v[i][1] = d.0[2 * i + 1] * p.height() + corners[i][1];
    }
    Quad::new(v)
}

/// Center/size encoding: dx = (gcx-pcx)/Pw, dy = (gcy-pcy)/Ph,
/// dw = ln(Gw/Pw), dh = ln(Gh/Ph).
pub fn rect_encode(g: &AxisRect, p: &AxisRect) -> RectDelta {
    let (gcx, gcy) = g.center();
    let (pcx, pcy) = p.center();
    RectDelta {
        dx: (gcx - pcx) / p.width(),
        dy: (gcy - pcy) / p.height(),
        dw: (g.width() / p.width()).ln(),
        dh: (g.height() / p.height()).ln(),
    }
}

pub fn rect_decode(d: &RectDelta, p: &AxisRect) -> Result<AxisRect, GeometryError> {
    let (pcx, pcy) = p.center();
    let cx = d.dx * p.width() + pcx;
    let cy = d.dy * p.height() + pcy;
    let w = d.dw.exp() * p.width();
    let h = d.dh.exp() * p.height();
    AxisRect::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
}

/// Intersection over union of two axis-aligned rectangles.
pub fn rect_iou(a: &AxisRect, b: &AxisRect) -> f64 {
    let ix = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let iy = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    inter / union
}

fn shoelace_signed(v: &[[f64; 2]]) -> f64 {
    let n = v.len();
    let mut acc = 0.0;
    for i in 0..n {
        let j = (i + 1) % n;
        acc += v[i][0] * v[j][1] - v[j][0] * v[i][1];
    }
    acc / 2.0
}

/// Absolute shoelace area of a quad.
pub fn polygon_area(q: &Quad) -> f64 {
    shoelace_signed(&q.vertices()).abs()
}

/// Orients vertices to positive signed area.
fn oriented(q: &Quad) -> [[f64; 2]; 4] {
    let mut v = q.vertices();
    if shoelace_signed(&v) < 0.0 {
        v.reverse();
    }
    v
}

// Clip `subject` against one directed edge (a -> b) of a positively oriented
// clip polygon; points with nonnegative cross product are inside.
fn clip_edge(subject: &[[f64; 2]], a: [f64; 2], b: [f64; 2]) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(subject.len() + 1);
    let side = |p: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    let n = subject.len();
    for i in 0..n {
        let s = subject[i];
        let e = subject[(i + 1) % n];
        let sc = side(s);
        let ec = side(e);
        let cross = |t: f64| -> [f64; 2] { [s[0] + (e[0] - s[0]) * t, s[1] + (e[1] - s[1]) * t] };
        match (sc >= 0.0, ec >= 0.0) {
            (true, true) => out.push(e),
            (true, false) => {
                out.push(cross(sc / (sc - ec)));
            }
            (false, true) => {
                out.push(cross(sc / (sc - ec)));
                out.push(e);
            }
            (false, false) => {}
        }
    }
    out
}

/// Sutherland-Hodgman intersection of two convex polygons
/// (both positively oriented).
fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]; 4]) -> Vec<[f64; 2]> {
    let mut poly = subject.to_vec();
    for i in 0..4 {
        if poly.len() < 3 {
            return Vec::new();
        }
        poly = clip_edge(&poly, clip[i], clip[(i + 1) % 4]);
    }
    poly
}

/// Intersection over union of two convex quads, computed by clipping one
/// against the other and measuring areas with the shoelace formula.
///
/// Arguments are ordered canonically before clipping so the result is
/// exactly symmetric.
pub fn quad_iou(a: &Quad, b: &Quad) -> Result<f64, GeometryError> {
    if !a.is_convex() || !b.is_convex() {
        return Err(GeometryError::NonConvexQuad);
    }
    if a.vertices() == b.vertices() {
        return Ok(1.0);
    }
    let (first, second) = if a.vertices().as_flattened() <= b.vertices().as_flattened() {
        (a, b)
    } else {
        (b, a)
    };
    let subject = oriented(first);
    let clip = oriented(second);
    let inter_poly = clip_convex(&subject, &clip);
    let inter = if inter_poly.len() < 3 {
        0.0
    } else {
        shoelace_signed(&inter_poly).abs()
    };
    let union = polygon_area(first) + polygon_area(second) - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

/// Smallest axis-aligned rectangle containing the quad.
pub fn quad_to_bounding_rect(q: &Quad) -> AxisRect {
    let v = q.vertices();
    let x1 = v.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
    let y1 = v.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
    let x2 = v.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
    let y2 = v.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
    // nonzero quad area guarantees positive extents
    AxisRect::new(x1, y1, x2, y2).expect("quad with nonzero area has a valid bounding rect")
}

/// Point-in-convex-polygon test; boundary points count as inside.
/// Polygons with fewer than three vertices contain nothing.
pub fn point_in_convex(p: [f64; 2], polygon: &[[f64; 2]]) -> bool {
    let n = polygon.len();
    if n < 3 {
        return false;
    }
    let mut sign = 0.0f64;
    for i in 0..n {
        let a = polygon[i];
        let b = polygon[(i + 1) % n];
        let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        if cross != 0.0 {
            if sign != 0.0 && cross.signum() != sign {
                return false;
            }
            sign = cross.signum();
        }
    }
    true
}

/// Intersection polygon of a convex quad and a rectangle
/// (empty if they do not overlap).
pub fn clip_quad_to_rect(q: &Quad, r: &AxisRect) -> Result<Vec<[f64; 2]>, GeometryError> {
    if !q.is_convex() {
        return Err(GeometryError::NonConvexQuad);
    }
    let subject = oriented(q);
    let clip = oriented(&r.to_quad());
    Ok(clip_convex(&subject, &clip))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selftest::oracles::{monte_carlo_quad_iou, random_convex_quad};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rect(x1: f64, y1: f64, x2: f64, y2: f64) -> AxisRect {
        AxisRect::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn encode_of_proposal_corners_is_zero() {
        let p = rect(3.0, 4.0, 10.0, 9.0);
        let d = quad_encode(&p.to_quad(), &p);
        assert_eq!(d.0, [0.0; 8]);
    }

    #[test]
    fn encode_worked_example_all_tenths() {
        let p = rect(0.0, 0.0, 100.0, 50.0);
        let g = Quad::new([[10.0, 5.0], [110.0, 5.0], [110.0, 55.0], [10.0, 55.0]]).unwrap();
        let d = quad_encode(&g, &p);
        for v in d.0 {
            assert!((v - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn decode_zero_delta_returns_proposal_corners() {
        let p = rect(2.0, 3.0, 8.0, 11.0);
        let q = quad_decode(&QuadDelta([0.0; 8]), &p).unwrap();
        assert_eq!(q.vertices(), p.corners());
    }

    #[test]
    fn decode_worked_example() {
        let p = rect(0.0, 0.0, 100.0, 50.0);
        let q = quad_decode(&QuadDelta([0.1; 8]), &p).unwrap();
        let want = [[10.0, 5.0], [110.0, 5.0], [110.0, 55.0], [10.0, 55.0]];
        for (got, want) in q.vertices().iter().zip(&want) {
            assert!((got[0] - want[0]).abs() < 1e-12);
            assert!((got[1] - want[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn rect_encode_identity_is_zero() {
        let p = rect(5.0, 5.0, 20.0, 30.0);
        let d = rect_encode(&p, &p);
        assert_eq!((d.dx, d.dy, d.dw, d.dh), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn rect_encode_double_size() {
        let p = rect(0.0, 0.0, 10.0, 10.0);
        let g = rect(0.0, 0.0, 20.0, 20.0);
        let d = rect_encode(&g, &p);
        assert!((d.dx - 0.5).abs() < 1e-15);
        assert!((d.dy - 0.5).abs() < 1e-15);
        assert!((d.dw - 2.0f64.ln()).abs() < 1e-15);
        assert!((d.dh - 2.0f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn rect_decode_overflow_is_an_error() {
        let p = rect(0.0, 0.0, 10.0, 10.0);
        let d = RectDelta {
            dx: 0.0,
            dy: 0.0,
            dw: 1000.0,
            dh: 0.0,
        };
        assert!(matches!(
            rect_decode(&d, &p),
            Err(GeometryError::DegenerateRect { .. })
        ));
    }

    #[test]
    fn rect_iou_examples() {
        let a = rect(0.0, 0.0, 1.0, 1.0);
        assert_eq!(rect_iou(&a, &a), 1.0);
        let b = rect(0.5, 0.0, 1.5, 1.0);
        assert!((rect_iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        let c = rect(5.0, 5.0, 6.0, 6.0);
        assert_eq!(rect_iou(&a, &c), 0.0);
    }

    #[test]
    fn quad_iou_identical() {
        let q = Quad::new([[0.0, 0.0], [2.0, 0.5], [2.5, 2.0], [0.5, 2.5]]).unwrap();
        assert_eq!(quad_iou(&q, &q).unwrap(), 1.0);
    }

    #[test]
    fn quad_iou_shifted_square_reduces_to_rect_case() {
        let a = rect(0.0, 0.0, 2.0, 2.0).to_quad();
        let b = rect(1.0, 0.0, 3.0, 2.0).to_quad();
        let got = quad_iou(&a, &b).unwrap();
        assert!((got - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn quad_iou_rotated_square_matches_monte_carlo() {
        // Unit axis square vs 45-degree square of diagonal 2, same center.
        let a = rect(0.0, 0.0, 1.0, 1.0).to_quad();
        let b = Quad::new([[0.5, -0.5], [1.5, 0.5], [0.5, 1.5], [-0.5, 0.5]]).unwrap();
        let got = quad_iou(&a, &b).unwrap();
        let mc = monte_carlo_quad_iou(&a, &b, 1_000_000, 99);
        assert!((got - mc).abs() < 2e-3, "got {got}, mc {mc}");
        // Exact value: the unit square is inscribed, IoU = 1/2.
        assert!((got - 0.5).abs() < 1e-12);
    }

    #[test]
    fn non_convex_quad_is_rejected() {
        let q = Quad::new([[0.0, 0.0], [2.0, 0.0], [0.5, 0.5], [0.0, 2.0]]).unwrap();
        assert!(!q.is_convex());
        let r = rect(0.0, 0.0, 1.0, 1.0).to_quad();
        assert!(matches!(
            quad_iou(&q, &r),
            Err(GeometryError::NonConvexQuad)
        ));
    }

    #[test]
    fn bounding_rect_of_axis_quad_is_itself() {
        let r = rect(1.0, 2.0, 5.0, 6.0);
        assert_eq!(quad_to_bounding_rect(&r.to_quad()), r);
    }

    #[test]
    fn unit_square_area() {
        let q = rect(0.0, 0.0, 1.0, 1.0).to_quad();
        assert_eq!(polygon_area(&q), 1.0);
    }

    #[test]
    fn area_matches_fan_triangulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let q = random_convex_quad(&mut rng, 20.0);
            let v = q.vertices();
            // fan from v0
            let tri = |a: [f64; 2], b: [f64; 2], c: [f64; 2]| {
                ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])).abs() / 2.0
            };
            let want = tri(v[0], v[1], v[2]) + tri(v[0], v[2], v[3]);
            assert!((polygon_area(&q) - want).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_inputs_error() {
        assert!(AxisRect::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(AxisRect::new(0.0, 0.0, -1.0, 1.0).is_err());
        assert!(Quad::new([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]).is_err());
    }

    proptest! {
        #[test]
        fn quad_roundtrip(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = rect(
                rng.random_range(-50.0..50.0),
                rng.random_range(-50.0..50.0),
                rng.random_range(60.0..150.0),
                rng.random_range(60.0..150.0),
            );
            let q = random_convex_quad(&mut rng, 100.0);
            let d = quad_encode(&q, &p);
            let back = quad_decode(&d, &p).unwrap();
            for (a, b) in back.vertices().iter().zip(q.vertices().iter()) {
                prop_assert!((a[0] - b[0]).abs() < 1e-9);
                prop_assert!((a[1] - b[1]).abs() < 1e-9);
            }
        }

        #[test]
        fn rect_roundtrip(x1 in -100.0f64..100.0, y1 in -100.0f64..100.0,
                          w in 0.5f64..200.0, h in 0.5f64..200.0,
                          px in -100.0f64..100.0, py in -100.0f64..100.0,
                          pw in 0.5f64..200.0, ph in 0.5f64..200.0) {
            let g = rect(x1, y1, x1 + w, y1 + h);
            let p = rect(px, py, px + pw, py + ph);
            let back = rect_decode(&rect_encode(&g, &p), &p).unwrap();
            prop_assert!((back.x1 - g.x1).abs() < 1e-9);
            prop_assert!((back.y1 - g.y1).abs() < 1e-9);
            prop_assert!((back.x2 - g.x2).abs() < 1e-9);
            prop_assert!((back.y2 - g.y2).abs() < 1e-9);
        }

        #[test]
        fn quad_iou_symmetric_and_bounded(seed in 0u64..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_convex_quad(&mut rng, 10.0);
            let b = random_convex_quad(&mut rng, 10.0);
            let ab = quad_iou(&a, &b).unwrap();
            let ba = quad_iou(&b, &a).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(quad_iou(&a, &a).unwrap(), 1.0);
        }

        #[test]
        fn axis_aligned_quad_iou_equals_rect_iou(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mk = |rng: &mut ChaCha8Rng| {
                let x1 = rng.random_range(-5.0..5.0);
                let y1 = rng.random_range(-5.0..5.0);
                rect(x1, y1, x1 + rng.random_range(0.5..8.0), y1 + rng.random_range(0.5..8.0))
            };
            let a = mk(&mut rng);
            let b = mk(&mut rng);
            let qi = quad_iou(&a.to_quad(), &b.to_quad()).unwrap();
            prop_assert!((qi - rect_iou(&a, &b)).abs() <= 1e-12);
        }

        #[test]
        fn iou_is_translation_invariant(seed in 0u64..200,
                                        dx in -40.0f64..40.0, dy in -40.0f64..40.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_convex_quad(&mut rng, 10.0);
            let b = random_convex_quad(&mut rng, 10.0);
            let before = quad_iou(&a, &b).unwrap();
            let after = quad_iou(&a.translate(dx, dy), &b.translate(dx, dy)).unwrap();
            prop_assert!((before - after).abs() <= 1e-12);
        }
    }
}
