//! Small computational-geometry helpers: convex-position tests, Hausdorff
//! distances and the convex hull of points on the sphere.

use std::collections::HashSet;

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Default slack of [`is_convex_polygon`]: turns this small relative to the
/// squared diameter are rounding noise on nearly straight edges.
pub const CONVEXITY_TOL: f64 = 1e-12;

/// Cross products of consecutive edges of a closed polygon.
pub fn turn_crosses(points: &[[f64; 2]]) -> Vec<f64> {
    let n = points.len();
    (0..n)
        .map(|i| cross(points[i], points[(i + 1) % n], points[(i + 2) % n]))
        .collect()
}

/// Whether consecutive edges of a closed polyline all turn the same way.
/// Turns whose cross product is within `tol·diam²` of zero count as
/// straight; at least one strict turn is required.
pub fn is_convex_polygon(points: &[[f64; 2]], tol: f64) -> bool {
    if points.len() < 3 {
        return false;
    }
    let diam2 = points
        .iter()
        .flat_map(|p| points.iter().map(move |q| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)))
        .fold(0.0, f64::max);
    let slack = tol * diam2;
    let c = turn_crosses(points);
    let pos = c.iter().any(|&x| x > slack);
    let neg = c.iter().any(|&x| x < -slack);
    pos != neg
}

/// Strict convex position, counter-clockwise: every turn is a strict left turn.
pub fn is_strictly_convex_ccw(points: &[[f64; 2]]) -> bool {
    points.len() >= 3 && turn_crosses(points).iter().all(|&c| c > 0.0)
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((ap[0] - t * ab[0]).powi(2) + (ap[1] - t * ab[1]).powi(2)).sqrt()
}

fn point_to_polyline(p: [f64; 2], poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| segment_distance(p, poly[i], poly[(i + 1) % n]))
        .fold(f64::INFINITY, f64::min)
}

/// Hausdorff distance between two closed polylines, measured from the
/// vertices of each to the edges of the other.
pub fn hausdorff_polylines(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let ab = a.iter().map(|&p| point_to_polyline(p, b)).fold(0.0, f64::max);
    let ba = b.iter().map(|&p| point_to_polyline(p, a)).fold(0.0, f64::max);
    ab.max(ba)
}

/// Hausdorff distance between two flattened point sets in dimension `dim`.
pub fn hausdorff_points(a: &[f64], b: &[f64], dim: usize) -> f64 {
    let directed = |x: &[f64], y: &[f64]| {
        x.chunks_exact(dim)
            .map(|p| {
                y.chunks_exact(dim)
                    .map(|q| p.iter().zip(q).map(|(s, t)| (s - t).powi(2)).sum::<f64>())
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
            .sqrt()
    };
    directed(a, b).max(directed(b, a))
}

fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Triangles (outward, counter-clockwise) of the convex hull of a point set in
/// general position, by incremental insertion. Points strictly inside the
/// current hull are skipped.
pub fn convex_hull_3d(points: &[[f64; 3]]) -> Vec<[usize; 3]> {
    let n = points.len();
    assert!(n >= 4, "hull needs at least four points");
    let scale = points
        .iter()
        .map(|p| dot3(*p, *p).sqrt())
        .fold(0.0, f64::max)
        .max(1e-300);
    let eps = 1e-12 * scale.powi(3);

    // initial tetrahedron from four affinely independent points
    let i0 = 0;
    let i1 = (1..n)
        .max_by(|&a, &b| {
            let da = dot3(sub3(points[a], points[i0]), sub3(points[a], points[i0]));
            let db = dot3(sub3(points[b], points[i0]), sub3(points[b], points[i0]));
            da.total_cmp(&db)
        })
        .unwrap();
    let area = |k: usize| {
        let c = cross3(sub3(points[i1], points[i0]), sub3(points[k], points[i0]));
        dot3(c, c)
    };
    let i2 = (0..n).max_by(|&a, &b| area(a).total_cmp(&area(b))).unwrap();
    let vol = |k: usize| {
        let c = cross3(sub3(points[i1], points[i0]), sub3(points[i2], points[i0]));
        dot3(c, sub3(points[k], points[i0]))
    };
    let i3 = (0..n).max_by(|&a, &b| vol(a).abs().total_cmp(&vol(b).abs())).unwrap();
    assert!(vol(i3).abs() > eps, "points are coplanar");

    let centroid = {
        let s = [i0, i1, i2, i3]
            .iter()
            .fold([0.0; 3], |acc, &k| [acc[0] + points[k][0], acc[1] + points[k][1], acc[2] + points[k][2]]);
        [s[0] / 4.0, s[1] / 4.0, s[2] / 4.0]
    };
    let orient = |f: [usize; 3]| {
        let nrm = cross3(sub3(points[f[1]], points[f[0]]), sub3(points[f[2]], points[f[0]]));
        if dot3(nrm, sub3(points[f[0]], centroid)) < 0.0 {
            [f[0], f[2], f[1]]
        } else {
            f
        }
    };
    let mut faces: Vec<[usize; 3]> = [[i0, i1, i2], [i0, i1, i3], [i0, i2, i3], [i1, i2, i3]]
        .into_iter()
        .map(orient)
        .collect();

    let seed: HashSet<usize> = [i0, i1, i2, i3].into_iter().collect();
    for (k, &p) in points.iter().enumerate() {
        if seed.contains(&k) {
            continue;
        }
        let visible: Vec<bool> = faces
            .iter()
            .map(|f| {
                let nrm = cross3(sub3(points[f[1]], points[f[0]]), sub3(points[f[2]], points[f[0]]));
                dot3(nrm, sub3(p, points[f[0]])) > eps
            })
            .collect();
        if !visible.iter().any(|&v| v) {
            continue;
        }
        let mut edges = HashSet::new();
        for (f, _) in faces.iter().zip(&visible).filter(|(_, &v)| v) {
            for e in 0..3 {
                edges.insert((f[e], f[(e + 1) % 3]));
            }
        }
        let mut next: Vec<[usize; 3]> = faces
            .iter()
            .zip(&visible)
            .filter(|(_, &v)| !v)
            .map(|(f, _)| *f)
            .collect();
        // horizon edges keep their orientation; sort for determinism
        let mut horizon: Vec<(usize, usize)> = edges
            .iter()
            .filter(|&&(a, b)| !edges.contains(&(b, a)))
            .copied()
            .collect();
        horizon.sort_unstable();
        next.extend(horizon.into_iter().map(|(a, b)| [a, b, k]));
        faces = next;
    }
    faces
}
