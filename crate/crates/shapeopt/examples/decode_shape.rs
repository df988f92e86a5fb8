//! Decodes action triplets into a smooth closed shape and writes the
//! outline (CSV) and a drawing (SVG) with the radial constraint circles.
//!
//! Each control point takes one (p, q, s) triplet in [-1, 1]^3: radius
//! r_max * max(|p|, r_min), angular offset q/2 of a sector, curvature
//! weight (1+s)/2. Omitted triplets snap to the reference cylinder.
//!
//! Usage: decode_shape [n=4] [alpha=0.5] [out=shape_out] [triplets=p,q,s;p,q,s;...]

use shapeopt::geometry::{
    build_shape, decode_point, polygon_area, shape_svg, validate, write_outline, ActionTriplet,
    AngularFactor, ControlPoint, ShapeSpec,
};

fn main() {
    let mut n = 4usize;
    let mut alpha = 0.5f64;
    let mut out_dir = std::path::PathBuf::from("shape_out");
    // A gentle default: one stretched point, one pulled-in point.
    let mut raw = String::from("0.9,0.4,0.7;-0.2,0.0,-0.5");
    for arg in std::env::args().skip(1) {
        let (key, value) = arg
            .split_once('=')
            .unwrap_or_else(|| panic!("arguments look like key=value, got {arg:?}"));
        match key {
            "n" => n = value.parse().expect("n"),
            "alpha" => alpha = value.parse().expect("alpha"),
            "out" => out_dir = value.into(),
            "triplets" => raw = value.to_string(),
            other => panic!("unknown argument {other:?}"),
        }
    }

    let (r_min, r_max) = (0.3, 3.0);
    let triplets: Vec<ActionTriplet> = raw
        .split(';')
        .filter(|chunk| !chunk.trim().is_empty())
        .map(|chunk| {
            let v: Vec<f64> = chunk
                .split(',')
                .map(|x| x.trim().parse().expect("triplet component"))
                .collect();
            assert_eq!(v.len(), 3, "a triplet is p,q,s; got {chunk:?}");
            ActionTriplet::new(v[0], v[1], v[2])
        })
        .collect();
    assert!(triplets.len() <= n, "more triplets than control points");

    let mut points = Vec::with_capacity(n);
    for i in 0..n {
        let point = match triplets.get(i) {
            Some(&t) => decode_point(t, i, n, r_min, r_max, AngularFactor::Full),
            None => {
                let theta = AngularFactor::Full.factor(n) * i as f64;
                ControlPoint::new(theta.cos(), theta.sin(), 0.5)
            }
        };
        println!(
            "point {i}: r={:.4}  angle={:.4}  e={:.4}  ({:.4}, {:.4})",
            point.radius(),
            point.angle(),
            point.e,
            point.x,
            point.y
        );
        points.push(point);
    }

    let spec = ShapeSpec::new(points, alpha, 32);
    let poly = build_shape(&spec).expect("shape build");
    let validity = validate(&poly);
    println!(
        "vertices={}  area={:.4}  valid={}",
        poly.vertices().len(),
        polygon_area(&poly),
        validity.is_valid()
    );

    std::fs::create_dir_all(&out_dir).expect("output dir");
    write_outline(&poly, &out_dir.join("shape.csv")).expect("outline");
    std::fs::write(
        out_dir.join("shape.svg"),
        shape_svg(&poly, r_max * r_min, r_max),
    )
    .expect("svg");
    println!("wrote {}", out_dir.display());
}
