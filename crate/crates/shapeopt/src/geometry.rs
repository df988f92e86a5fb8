//! Action decoding and Bezier boundary construction.
//!
//! A raw agent action is a list of (p, q, s) triplets, one per control point.
//! Each triplet decodes to a constrained polar position plus a curvature
//! weight, the points are sorted by polar angle, joined by cubic Bezier
//! segments whose handles follow blended tangent directions, and the closed
//! curve is sampled into a polygon for the flow solver.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

/// Minimum polygon area accepted by `validate`, in units of r_cyl^2.
pub const EPS_AREA: f64 = 1e-6;
/// Minimum polygon edge length accepted by `validate`, in units of r_cyl.
pub const EPS_EDGE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("degenerate shape: control points {0} and {1} coincide")]
    DegenerateShape(usize, usize),
}

/// One raw action triple; components are clamped to [-1, 1] on construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionTriplet {
    pub p: f64,
    pub q: f64,
    pub s: f64,
}

impl ActionTriplet {
    pub fn new(p: f64, q: f64, s: f64) -> Self {
        Self {
            p: p.clamp(-1.0, 1.0),
            q: q.clamp(-1.0, 1.0),
            s: s.clamp(-1.0, 1.0),
        }
    }
}

/// A decoded boundary control point with its local curvature weight e in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlPoint {
    pub x: f64,
    pub y: f64,
    pub e: f64,
}

impl ControlPoint {
    pub fn new(x: f64, y: f64, e: f64) -> Self {
        Self { x, y, e }
    }

    pub fn radius(&self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Polar angle mapped to [0, 2pi).
    pub fn angle(&self) -> f64 {
        let a = self.y.atan2(self.x);
        if a < 0.0 {
            a + TAU
        } else {
            a
        }
    }
}

/// Angular spread per point index in the action decode.
///
/// `Full` covers the whole circle with n points (theta = 2pi/n * (i + q/2));
/// `Printed` is the halved variant (pi/n) kept available for comparison runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AngularFactor {
    Full,
    Printed,
}

impl AngularFactor {
    pub fn factor(self, n: usize) -> f64 {
        match self {
            AngularFactor::Full => TAU / n as f64,
            AngularFactor::Printed => PI / n as f64,
        }
    }
}

/// Decode one action triplet into a control point.
///
/// r = r_max * max(|p|, r_min), theta = factor * (i + q/2), e = (1+s)/2.
/// The radius therefore always lies in [r_min * r_max, r_max].
pub fn decode_point(
    t: ActionTriplet,
    i: usize,
    n: usize,
    r_min: f64,
    r_max: f64,
    angular: AngularFactor,
) -> ControlPoint {
    debug_assert!(i < n);
    debug_assert!(r_min > 0.0 && r_min < 1.0);
    debug_assert!(r_max > 0.0);
    let r = r_max * t.p.abs().max(r_min);
    let theta = angular.factor(n) * (i as f64 + t.q / 2.0);
    ControlPoint::new(r * theta.cos(), r * theta.sin(), (1.0 + t.s) / 2.0)
}

/// Sort control points by ascending polar angle in [0, 2pi), ties broken by
/// ascending radius. Exactly coincident points are a degenerate shape.
pub fn sort_points(points: &[ControlPoint]) -> Result<Vec<ControlPoint>, GeometryError> {
    let mut sorted: Vec<ControlPoint> = points.to_vec();
    sorted.sort_by(|a, b| {
        (a.angle(), a.radius())
            .partial_cmp(&(b.angle(), b.radius()))
            .expect("non-finite control point")
    });
    for k in 0..sorted.len() {
        let a = sorted[k];
        let b = sorted[(k + 1) % sorted.len()];
        if sorted.len() > 1 && a.x == b.x && a.y == b.y {
            return Err(GeometryError::DegenerateShape(k, (k + 1) % sorted.len()));
        }
    }
    Ok(sorted)
}

/// Map an angle to (-pi, pi].
fn wrap_angle(a: f64) -> f64 {
    let mut x = a % TAU;
    if x > PI {
        x -= TAU;
    } else if x <= -PI {
        x += TAU;
    }
    x
}

/// Blended tangent direction at every point of a sorted cyclic point list:
/// theta*_i = alpha * theta_{i-1,i} + (1 - alpha) * theta_{i,i+1}, blended on
/// the shorter arc so the average never crosses the +-pi wrap.
pub fn tangent_angles(points: &[ControlPoint], alpha: f64) -> Vec<f64> {
    let n = points.len();
    let dir = |a: &ControlPoint, b: &ControlPoint| (b.y - a.y).atan2(b.x - a.x);
    (0..n)
        .map(|i| {
            let prev = &points[(i + n - 1) % n];
            let next = &points[(i + 1) % n];
            let th_in = dir(prev, &points[i]);
            let th_out = dir(&points[i], next);
            wrap_angle(th_out + alpha * wrap_angle(th_in - th_out))
        })
        .collect()
}

/// The four cubic control points for the segment p_i -> p_j: interior points
/// sit on the tangent lines through the endpoints at distance e * ||chord||.
pub fn bezier_controls(p_i: ControlPoint, p_j: ControlPoint, theta_i: f64, theta_j: f64) -> [(f64, f64); 4] {
    let chord = (p_j.x - p_i.x).hypot(p_j.y - p_i.y);
    let d_i = p_i.e * chord;
    let d_j = p_j.e * chord;
    [
        (p_i.x, p_i.y),
        (p_i.x + d_i * theta_i.cos(), p_i.y + d_i * theta_i.sin()),
        (p_j.x - d_j * theta_j.cos(), p_j.y - d_j * theta_j.sin()),
        (p_j.x, p_j.y),
    ]
}

/// Sample the cubic Bezier from p_i to p_j whose interior control points sit
/// on the tangent lines at distance e * ||chord||. Returns m samples with the
/// endpoints reproduced exactly.
pub fn bezier_segment(
    p_i: ControlPoint,
    p_j: ControlPoint,
    theta_i: f64,
    theta_j: f64,
    m: usize,
) -> Vec<(f64, f64)> {
    assert!(m >= 2, "need at least the two endpoint samples");
    let [c0, c1, c2, c3] = bezier_controls(p_i, p_j, theta_i, theta_j);
    (0..m)
        .map(|k| {
            let t = k as f64 / (m - 1) as f64;
            let u = 1.0 - t;
            let b0 = u * u * u;
            let b1 = 3.0 * u * u * t;
            let b2 = 3.0 * u * t * t;
            let b3 = t * t * t;
            (
                b0 * c0.0 + b1 * c1.0 + b2 * c2.0 + b3 * c3.0,
                b0 * c0.1 + b1 * c1.1 + b2 * c2.1 + b3 * c3.1,
            )
        })
        .collect()
}

/// Agent-side description of one shape: sorted control points plus the
/// tangent smoothing weight and the per-segment sample count.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeSpec {
    pub points: Vec<ControlPoint>,
    pub smoothing: f64,
    pub samples_per_segment: usize,
}

impl ShapeSpec {
    pub fn new(points: Vec<ControlPoint>, smoothing: f64, samples_per_segment: usize) -> Self {
        assert!(points.len() >= 3, "a shape needs at least 3 control points");
        assert!((0.0..=1.0).contains(&smoothing));
        assert!(samples_per_segment >= 2);
        Self {
            points,
            smoothing,
            samples_per_segment,
        }
    }
}

/// Closed polygon, closure implied (last vertex connects back to the first).
/// Construction normalizes the orientation to counter-clockwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    vertices: Vec<(f64, f64)>,
}

impl Polygon {
    pub fn new(mut vertices: Vec<(f64, f64)>) -> Self {
        assert!(vertices.len() >= 3, "a polygon needs at least 3 vertices");
        if signed_area(&vertices) < 0.0 {
            vertices.reverse();
        }
        Self { vertices }
    }

    pub fn vertices(&self) -> &[(f64, f64)] {
        &self.vertices
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Polygon {
        Polygon {
            vertices: self.vertices.iter().map(|&(x, y)| (x + dx, y + dy)).collect(),
        }
    }

    /// (x_min, x_max, y_min, y_max)
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        let mut b = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in &self.vertices {
            b.0 = b.0.min(x);
            b.1 = b.1.max(x);
            b.2 = b.2.min(y);
            b.3 = b.3.max(y);
        }
        b
    }

    /// Even-odd point-in-polygon test by ray casting toward +x.
    pub fn contains(&self, px: f64, py: f64) -> bool {
        let v = &self.vertices;
        let n = v.len();
        let mut inside = false;
        for k in 0..n {
            let (x1, y1) = v[k];
            let (x2, y2) = v[(k + 1) % n];
            if (y1 > py) != (y2 > py) {
                let x_cross = x1 + (py - y1) * (x2 - x1) / (y2 - y1);
                if px < x_cross {
                    inside = !inside;
                }
            }
        }
        inside
    }
}

fn signed_area(vertices: &[(f64, f64)]) -> f64 {
    let n = vertices.len();
    let mut twice = 0.0;
    for k in 0..n {
        let (x1, y1) = vertices[k];
        let (x2, y2) = vertices[(k + 1) % n];
        twice += x1 * y2 - x2 * y1;
    }
    twice / 2.0
}

/// Shoelace area; positive for the CCW orientation Polygon guarantees.
pub fn polygon_area(poly: &Polygon) -> f64 {
    signed_area(&poly.vertices)
}

/// Build the closed sampled boundary from a shape spec: sort points, blend
/// tangents, sample each Bezier segment, and drop the duplicated joints. The
/// result has points.len() * (samples_per_segment - 1) vertices.
pub fn build_shape(spec: &ShapeSpec) -> Result<Polygon, GeometryError> {
    let pts = sort_points(&spec.points)?;
    let tangents = tangent_angles(&pts, spec.smoothing);
    let n = pts.len();
    let m = spec.samples_per_segment;
    let mut vertices = Vec::with_capacity(n * (m - 1));
    for i in 0..n {
        let j = (i + 1) % n;
        let seg = bezier_segment(pts[i], pts[j], tangents[i], tangents[j], m);
        vertices.extend_from_slice(&seg[..m - 1]);
    }
    Ok(Polygon::new(vertices))
}

/// Machine-readable reason a polygon was rejected.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InvalidReason {
    SelfIntersection { seg_a: usize, seg_b: usize },
    AreaTooSmall { area: f64 },
    EdgeTooShort { index: usize, length: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShapeValidity {
    Valid,
    Invalid(InvalidReason),
}

impl ShapeValidity {
    pub fn is_valid(&self) -> bool {
        matches!(self, ShapeValidity::Valid)
    }
}

/// Check a polygon for self-intersection (all non-adjacent segment pairs),
/// a vanishing area, and vanishing edges. Never aborts: invalid shapes are
/// ordinary data that the reward turns into a failure penalty.
pub fn validate(poly: &Polygon) -> ShapeValidity {
    let v = poly.vertices();
    let n = v.len();
    // Intersections first: a figure-eight has zero shoelace area and would
    // otherwise be misreported as merely too small.
    for a in 0..n {
        for b in (a + 1)..n {
            // Adjacent segments share an endpoint by construction.
            if b == a + 1 || (a == 0 && b == n - 1) {
                continue;
            }
            if segments_intersect(v[a], v[(a + 1) % n], v[b], v[(b + 1) % n]) {
                return ShapeValidity::Invalid(InvalidReason::SelfIntersection { seg_a: a, seg_b: b });
            }
        }
    }
    let area = polygon_area(poly);
    if area.abs() <= EPS_AREA {
        return ShapeValidity::Invalid(InvalidReason::AreaTooSmall { area });
    }
    for k in 0..n {
        let (x1, y1) = v[k];
        let (x2, y2) = v[(k + 1) % n];
        let len = (x2 - x1).hypot(y2 - y1);
        if len <= EPS_EDGE {
            return ShapeValidity::Invalid(InvalidReason::EdgeTooShort { index: k, length: len });
        }
    }
    ShapeValidity::Valid
}

fn orient(p: (f64, f64), q: (f64, f64), r: (f64, f64)) -> f64 {
    (q.0 - p.0) * (r.1 - p.1) - (q.1 - p.1) * (r.0 - p.0)
}

fn on_segment(p: (f64, f64), q: (f64, f64), r: (f64, f64)) -> bool {
    r.0 >= p.0.min(q.0) && r.0 <= p.0.max(q.0) && r.1 >= p.1.min(q.1) && r.1 <= p.1.max(q.1)
}

fn segments_intersect(a: (f64, f64), b: (f64, f64), c: (f64, f64), d: (f64, f64)) -> bool {
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    if ((o1 > 0.0) != (o2 > 0.0)) && ((o3 > 0.0) != (o4 > 0.0)) && o1 != 0.0 && o2 != 0.0 && o3 != 0.0 && o4 != 0.0 {
        return true;
    }
    (o1 == 0.0 && on_segment(a, b, c))
        || (o2 == 0.0 && on_segment(a, b, d))
        || (o3 == 0.0 && on_segment(c, d, a))
        || (o4 == 0.0 && on_segment(c, d, b))
}

/// Regular polygonization of a circle, used for the reference cylinder.
pub fn circle_polygon(radius: f64, sides: usize) -> Polygon {
    assert!(sides >= 3);
    Polygon::new(
        (0..sides)
            .map(|k| {
                let a = TAU * k as f64 / sides as f64;
                (radius * a.cos(), radius * a.sin())
            })
            .collect(),
    )
}

/// Outline text format: one "x y" pair per line, 17 significant digits.
pub fn outline_string(poly: &Polygon) -> String {
    let mut out = String::new();
    for &(x, y) in poly.vertices() {
        writeln!(out, "{:.16e} {:.16e}", x, y).unwrap();
    }
    out
}

pub fn write_outline(poly: &Polygon, path: &Path) -> std::io::Result<()> {
    std::fs::write(path, outline_string(poly))
}

pub fn read_outline(path: &Path) -> std::io::Result<Polygon> {
    let text = std::fs::read_to_string(path)?;
    let mut vertices = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let parse = |tok: Option<&str>| -> std::io::Result<f64> {
            tok.and_then(|t| t.parse::<f64>().ok()).ok_or_else(|| {
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("bad outline line {}", lineno + 1),
                )
            })
        };
        let x = parse(it.next())?;
        let y = parse(it.next())?;
        vertices.push((x, y));
    }
    if vertices.len() < 3 {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            "outline has fewer than 3 vertices",
        ));
    }
    Ok(Polygon::new(vertices))
}

/// SVG of a shape outline in the shape frame (obstacle center at the origin)
/// with the inner and outer radius-constraint circles drawn.
pub fn shape_svg(poly: &Polygon, r_inner: f64, r_outer: f64) -> String {
    let half = 1.1 * r_outer.max(poly.bounds().1.abs());
    let scale = 400.0 / (2.0 * half);
    let px = |x: f64| (x + half) * scale;
    // SVG y grows downward; flip so +y is up.
    let py = |y: f64| (half - y) * scale;
    let mut path = String::new();
    for (k, &(x, y)) in poly.vertices().iter().enumerate() {
        let cmd = if k == 0 { 'M' } else { 'L' };
        write!(path, "{}{:.3} {:.3} ", cmd, px(x), py(y)).unwrap();
    }
    path.push('Z');
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"400\" height=\"400\" viewBox=\"0 0 400 400\">\n",
            "  <rect width=\"400\" height=\"400\" fill=\"white\"/>\n",
            "  <circle cx=\"{cx:.3}\" cy=\"{cy:.3}\" r=\"{ri:.3}\" fill=\"none\" stroke=\"#999\" stroke-dasharray=\"4 4\"/>\n",
            "  <circle cx=\"{cx:.3}\" cy=\"{cy:.3}\" r=\"{ro:.3}\" fill=\"none\" stroke=\"#999\" stroke-dasharray=\"4 4\"/>\n",
            "  <path d=\"{path}\" fill=\"#b3cde3\" stroke=\"#03396c\" stroke-width=\"1.5\"/>\n",
            "</svg>\n"
        ),
        cx = px(0.0),
        cy = py(0.0),
        ri = r_inner * scale,
        ro = r_outer * scale,
        path = path,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn decode_extremal_radius() {
        let cp = decode_point(ActionTriplet::new(1.0, 0.0, 0.0), 0, 4, 0.3, 3.0, AngularFactor::Full);
        close(cp.x, 3.0, 1e-12);
        close(cp.y, 0.0, 1e-12);
        close(cp.e, 0.5, 1e-12);
    }

    #[test]
    fn decode_radius_floor_engages() {
        let cp = decode_point(ActionTriplet::new(0.0, 0.0, 1.0), 1, 4, 0.3, 3.0, AngularFactor::Full);
        close(cp.radius(), 0.9, 1e-12);
        close(cp.x, 0.0, 1e-12);
        close(cp.y, 0.9, 1e-12);
        close(cp.e, 1.0, 1e-12);
    }

    #[test]
    fn decode_hand_evaluated_case() {
        // p=-0.5 -> r=1.5; q=1 at i=2 of 4 -> theta = (pi/2)*2.5 = 5pi/4.
        let cp = decode_point(ActionTriplet::new(-0.5, 1.0, -1.0), 2, 4, 0.3, 3.0, AngularFactor::Full);
        close(cp.x, -1.5 / 2f64.sqrt(), 1e-12);
        close(cp.y, -1.5 / 2f64.sqrt(), 1e-12);
        close(cp.e, 0.0, 1e-12);
        close(cp.x, -1.06066, 1e-5);
    }

    #[test]
    fn decode_printed_variant_halves_the_spread() {
        let full = decode_point(ActionTriplet::new(1.0, 0.0, 0.0), 1, 4, 0.3, 3.0, AngularFactor::Full);
        let printed = decode_point(ActionTriplet::new(1.0, 0.0, 0.0), 1, 4, 0.3, 3.0, AngularFactor::Printed);
        close(full.angle(), PI / 2.0, 1e-12);
        close(printed.angle(), PI / 4.0, 1e-12);
    }

    #[test]
    fn decode_respects_radius_bounds() {
        // 10^4 triplets over a coarse lattice of (p, q, s).
        for ip in 0..100 {
            for iq in 0..100 {
                let p = -1.0 + 2.0 * ip as f64 / 99.0;
                let q = -1.0 + 2.0 * iq as f64 / 99.0;
                let cp = decode_point(ActionTriplet::new(p, q, 0.0), 3, 4, 0.3, 3.0, AngularFactor::Full);
                let r = cp.radius();
                assert!(r >= 0.9 - 1e-12 && r <= 3.0 + 1e-12, "radius {r} out of bounds");
            }
        }
    }

    fn pt(x: f64, y: f64) -> ControlPoint {
        ControlPoint::new(x, y, 0.5)
    }

    #[test]
    fn sort_keeps_sorted_order() {
        let pts = vec![pt(1.0, 0.0), pt(0.0, 1.0), pt(-1.0, 0.0), pt(0.0, -1.0)];
        let sorted = sort_points(&pts).unwrap();
        assert_eq!(sorted, pts);
    }

    #[test]
    fn sort_reorders_by_angle() {
        let sorted = sort_points(&[pt(0.0, 1.0), pt(1.0, 0.0), pt(-1.0, 0.0)]).unwrap();
        assert_eq!(sorted, vec![pt(1.0, 0.0), pt(0.0, 1.0), pt(-1.0, 0.0)]);
    }

    #[test]
    fn sort_handles_wraparound_angles() {
        let a = |deg: f64| pt((deg * PI / 180.0).cos(), (deg * PI / 180.0).sin());
        let sorted = sort_points(&[a(350.0), a(10.0), a(170.0)]).unwrap();
        let angles: Vec<f64> = sorted.iter().map(|p| p.angle() * 180.0 / PI).collect();
        close(angles[0], 10.0, 1e-9);
        close(angles[1], 170.0, 1e-9);
        close(angles[2], 350.0, 1e-9);
    }

    #[test]
    fn sort_rejects_coincident_points() {
        let err = sort_points(&[pt(1.0, 0.0), pt(1.0, 0.0), pt(0.0, 1.0)]).unwrap_err();
        assert!(matches!(err, GeometryError::DegenerateShape(_, _)));
    }

    #[test]
    fn sort_breaks_angle_ties_by_radius() {
        let sorted = sort_points(&[pt(2.0, 0.0), pt(1.0, 0.0), pt(0.0, 1.0)]).unwrap();
        close(sorted[0].x, 1.0, 0.0);
        close(sorted[1].x, 2.0, 0.0);
    }

    #[test]
    fn tangent_midpoint_blend() {
        // Construct three points whose segments run at 0 then pi/2.
        let pts = vec![pt(0.0, 0.0), pt(1.0, 0.0), pt(1.0, 1.0)];
        let angles = tangent_angles(&pts, 0.5);
        close(angles[1], PI / 4.0, 1e-12);
    }

    #[test]
    fn tangent_alpha_zero_is_outgoing_direction() {
        let pts = vec![pt(0.0, 0.0), pt(1.0, 0.0), pt(1.0, 1.0)];
        let angles = tangent_angles(&pts, 0.0);
        close(angles[1], PI / 2.0, 1e-15);
    }

    #[test]
    fn tangent_blend_crosses_pi_wrap() {
        // Directions 3pi/4 and -3pi/4: the shorter arc passes through pi.
        let pts = vec![pt(1.0, -1.0), pt(0.0, 0.0), pt(-1.0, -1.0)];
        let angles = tangent_angles(&pts, 0.5);
        close(angles[1].abs(), PI, 1e-12);
    }

    #[test]
    fn tangents_on_regular_polygons_are_circle_tangents() {
        // Blended tangents at the corners of an angle-sorted regular polygon
        // are perpendicular to the position vector: theta* = angle + pi/2.
        // Square {(+-1, +-1)}: 3pi/4 at corner (1,1); diamond: pi/2 at (1,0).
        let square = sort_points(&[pt(1.0, 1.0), pt(-1.0, 1.0), pt(-1.0, -1.0), pt(1.0, -1.0)]).unwrap();
        let angles = tangent_angles(&square, 0.5);
        close(angles[0], 3.0 * PI / 4.0, 1e-12);
        let diamond = vec![pt(1.0, 0.0), pt(0.0, 1.0), pt(-1.0, 0.0), pt(0.0, -1.0)];
        let d_angles = tangent_angles(&diamond, 0.5);
        close(d_angles[0], PI / 2.0, 1e-12);
        for (k, p) in diamond.iter().enumerate() {
            close(wrap_angle(d_angles[k] - p.angle()), PI / 2.0, 1e-12);
        }
    }

    #[test]
    fn bezier_zero_curvature_is_the_chord() {
        // Zero handles collapse the control points onto the endpoints; every
        // sample lies on the chord (the parameterization is not uniform).
        let a = ControlPoint::new(0.0, 0.0, 0.0);
        let b = ControlPoint::new(2.0, 1.0, 0.0);
        let seg = bezier_segment(a, b, 1.0, -0.5, 9);
        for &(x, y) in &seg {
            close(y - 0.5 * x, 0.0, 1e-12);
            assert!((0.0..=2.0).contains(&x));
        }
        assert_eq!(seg[0], (0.0, 0.0));
        assert_eq!(seg[8], (2.0, 1.0));
    }

    #[test]
    fn bezier_tangents_along_chord_stay_on_axis() {
        let a = ControlPoint::new(0.0, 0.0, 0.7);
        let b = ControlPoint::new(1.0, 0.0, 0.3);
        for &(_, y) in &bezier_segment(a, b, 0.0, 0.0, 17) {
            close(y, 0.0, 1e-15);
        }
    }

    #[test]
    fn bezier_endpoints_exact() {
        let a = ControlPoint::new(1.0, 0.0, 0.5);
        let b = ControlPoint::new(0.0, 1.0, 0.5);
        let seg = bezier_segment(a, b, PI / 2.0, PI, 5);
        assert_eq!(seg[0], (1.0, 0.0));
        assert_eq!(seg[4], (0.0, 1.0));
    }

    /// Independent de Casteljau evaluation of a cubic.
    fn de_casteljau(c: [(f64, f64); 4], t: f64) -> (f64, f64) {
        let lerp = |a: (f64, f64), b: (f64, f64)| (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
        let d0 = lerp(c[0], c[1]);
        let d1 = lerp(c[1], c[2]);
        let d2 = lerp(c[2], c[3]);
        let e0 = lerp(d0, d1);
        let e1 = lerp(d1, d2);
        lerp(e0, e1)
    }

    #[test]
    fn bezier_matches_de_casteljau_oracle() {
        let a = ControlPoint::new(1.0, 0.0, 0.5);
        let b = ControlPoint::new(0.0, 1.0, 0.5);
        let (ti, tj) = (PI / 2.0, PI);
        let chord = 2f64.sqrt();
        let ctrl = [
            (1.0, 0.0),
            (1.0 + 0.5 * chord * ti.cos(), 0.5 * chord * ti.sin()),
            (0.0 - 0.5 * chord * tj.cos(), 1.0 - 0.5 * chord * tj.sin()),
            (0.0, 1.0),
        ];
        let seg = bezier_segment(a, b, ti, tj, 3);
        let oracle = de_casteljau(ctrl, 0.5);
        close(seg[1].0, oracle.0, 1e-12);
        close(seg[1].1, oracle.1, 1e-12);
        // A denser sweep against the oracle at every sample parameter.
        let seg = bezier_segment(a, b, ti, tj, 33);
        for (k, &(x, y)) in seg.iter().enumerate() {
            let o = de_casteljau(ctrl, k as f64 / 32.0);
            close(x, o.0, 1e-12);
            close(y, o.1, 1e-12);
        }
    }

    fn symmetric_spec(e: f64, m: usize) -> ShapeSpec {
        let pts = (0..4)
            .map(|i| {
                let a = TAU * i as f64 / 4.0;
                ControlPoint::new(a.cos(), a.sin(), e)
            })
            .collect();
        ShapeSpec::new(pts, 0.5, m)
    }

    #[test]
    fn build_shape_symmetric_under_quarter_rotation() {
        let poly = build_shape(&symmetric_spec(0.5, 32)).unwrap();
        let v = poly.vertices();
        let quarter = v.len() / 4;
        for k in 0..v.len() {
            let (x, y) = v[k];
            let (rx, ry) = (-y, x);
            let (ex, ey) = v[(k + quarter) % v.len()];
            close(rx, ex, 1e-12);
            close(ry, ey, 1e-12);
        }
    }

    #[test]
    fn build_shape_deterministic() {
        let a = build_shape(&symmetric_spec(0.37, 32)).unwrap();
        let b = build_shape(&symmetric_spec(0.37, 32)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn build_shape_vertex_count() {
        let poly = build_shape(&symmetric_spec(0.5, 32)).unwrap();
        assert_eq!(poly.vertices().len(), 4 * 31);
        let poly = build_shape(&symmetric_spec(0.5, 7)).unwrap();
        assert_eq!(poly.vertices().len(), 4 * 6);
    }

    #[test]
    fn unit_square_area() {
        let sq = Polygon::new(vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]);
        assert_relative_eq!(polygon_area(&sq), 1.0);
    }

    #[test]
    fn reversed_square_area_normalized() {
        let sq = Polygon::new(vec![(0.0, 1.0), (1.0, 1.0), (1.0, 0.0), (0.0, 0.0)]);
        assert_relative_eq!(polygon_area(&sq), 1.0);
    }

    #[test]
    fn circle_polygon_area_near_pi() {
        let area = polygon_area(&circle_polygon(1.0, 512));
        close(area, PI, 1e-3);
        assert!(area < PI);
    }

    #[test]
    fn inscribed_areas_increase_monotonically() {
        // Inscribed polygons of a convex curve grow toward the smooth area.
        let mut last = 0.0;
        for sides in [8, 16, 32, 64, 128, 256] {
            let area = polygon_area(&circle_polygon(1.0, sides));
            assert!(area > last && area < PI);
            last = area;
        }
        // Same monotone approach for the sampled Bezier boundary.
        let mut last = 0.0;
        for m in [3, 5, 9, 17, 33, 65] {
            let area = polygon_area(&build_shape(&symmetric_spec(0.4, m)).unwrap());
            assert!(area > last, "area {area} did not grow at m={m}");
            last = area;
        }
    }

    #[test]
    fn validate_accepts_square() {
        let sq = Polygon::new(vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]);
        assert!(validate(&sq).is_valid());
    }

    #[test]
    fn validate_rejects_bowtie() {
        let bow = Polygon::new(vec![(0.0, 0.0), (1.0, 1.0), (1.0, 0.0), (0.0, 1.0)]);
        match validate(&bow) {
            ShapeValidity::Invalid(InvalidReason::SelfIntersection { .. }) => {}
            other => panic!("expected self-intersection, got {other:?}"),
        }
    }

    #[test]
    fn validate_rejects_tiny_area() {
        let sliver = Polygon::new(vec![(0.0, 0.0), (1.0, 0.0), (0.5, 2e-9)]);
        match validate(&sliver) {
            ShapeValidity::Invalid(InvalidReason::AreaTooSmall { area }) => {
                close(area, 1e-9, 1e-10);
            }
            other => panic!("expected area-too-small, got {other:?}"),
        }
    }

    #[test]
    fn validate_rejects_tiny_edge() {
        let poly = Polygon::new(vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1e-8), (0.5, 1.0)]);
        match validate(&poly) {
            ShapeValidity::Invalid(InvalidReason::EdgeTooShort { .. }) => {}
            other => panic!("expected edge-too-short, got {other:?}"),
        }
    }

    #[test]
    fn g1_continuity_at_joints() {
        // Curve tangents at a joint are B'(1) ~ c3 - c2 of the arriving
        // segment and B'(0) ~ c1 - c0 of the departing one; both handles lie
        // on the tangent line through the joint by construction.
        let spec = ShapeSpec::new(
            vec![
                ControlPoint::new(2.0, 0.1, 0.8),
                ControlPoint::new(-0.3, 1.7, 0.33),
                ControlPoint::new(-1.2, -0.4, 0.61),
                ControlPoint::new(0.4, -2.2, 0.27),
            ],
            0.5,
            16,
        );
        let pts = sort_points(&spec.points).unwrap();
        let tangents = tangent_angles(&pts, spec.smoothing);
        let n = pts.len();
        for i in 0..n {
            let j = (i + 1) % n;
            let k = (i + n - 1) % n;
            let dep = bezier_controls(pts[i], pts[j], tangents[i], tangents[j]);
            let arr = bezier_controls(pts[k], pts[i], tangents[k], tangents[i]);
            let depart = (dep[1].1 - dep[0].1).atan2(dep[1].0 - dep[0].0);
            let arrive = (arr[3].1 - arr[2].1).atan2(arr[3].0 - arr[2].0);
            close(wrap_angle(depart - tangents[i]), 0.0, 1e-9);
            close(wrap_angle(arrive - tangents[i]), 0.0, 1e-9);
            close(wrap_angle(depart - arrive), 0.0, 1e-9);
        }
    }

    #[test]
    fn outline_roundtrip_preserves_vertices() {
        let poly = build_shape(&symmetric_spec(0.5, 8)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("shape_0.dat");
        write_outline(&poly, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.ends_with('\n'));
        let first = text.lines().next().unwrap();
        assert_eq!(first.split_whitespace().count(), 2);
        let back = read_outline(&path).unwrap();
        assert_eq!(back.vertices().len(), poly.vertices().len());
        for (a, b) in back.vertices().iter().zip(poly.vertices()) {
            assert_eq!(a, b, "17 significant digits must round-trip f64 exactly");
        }
    }

    #[test]
    fn svg_draws_constraint_circles() {
        let poly = build_shape(&symmetric_spec(0.5, 8)).unwrap();
        let svg = shape_svg(&poly, 0.9, 3.0);
        assert!(svg.contains("<circle"));
        assert!(svg.contains("<path"));
        assert_eq!(svg.matches("<circle").count(), 2);
    }
}
