//! Delaunay meshes over landmark sets and barycentric sample points on them.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::stream;

/// Facets smaller than this (px²) are dropped as slivers.
pub const MIN_FACET_AREA: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct DelaunayMesh {
    pub facets: Vec<[usize; 3]>,
    pub point_count: usize,
}

/// Twice the signed area of `(a, b, c)`; positive when counter-clockwise.
pub fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

pub fn facet_area(points: &[[f64; 2]], f: [usize; 3]) -> f64 {
    0.5 * orient(points[f[0]], points[f[1]], points[f[2]]).abs()
}

/// Positive iff `d` lies strictly inside the circumcircle of the
/// counter-clockwise triangle `(a, b, c)`.
pub fn in_circle(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> f64 {
    let (ax, ay) = (a[0] - d[0], a[1] - d[1]);
    let (bx, by) = (b[0] - d[0], b[1] - d[1]);
    let (cx, cy) = (c[0] - d[0], c[1] - d[1]);
    (ax * ax + ay * ay) * (bx * cy - cx * by) - (bx * bx + by * by) * (ax * cy - cx * ay)
        + (cx * cx + cy * cy) * (ax * by - bx * ay)
}

/// Bowyer–Watson insertion inside a large enclosing triangle.
///
/// Facets are returned counter-clockwise, sorted for determinism.
pub fn triangulate(points: &[[f64; 2]]) -> Result<DelaunayMesh> {
    let n = points.len();
    if n < 3 {
        return Err(Error::Degenerate(format!("need at least 3 points, got {n}")));
    }
    if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(Error::NonFinite("triangulation points".into()));
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in points {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9);
    let mid = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
    let big = 1e4 * extent;
    let mut all = points.to_vec();
    all.push([mid[0] - big, mid[1] - big]);
    all.push([mid[0] + big, mid[1] - big]);
    all.push([mid[0], mid[1] + big]);

    let mut tris: Vec<[usize; 3]> = vec![[n, n + 1, n + 2]];
    for i in 0..n {
        let p = all[i];
        let (bad, keep): (Vec<[usize; 3]>, Vec<[usize; 3]>) =
            tris.into_iter().partition(|t| in_circle(all[t[0]], all[t[1]], all[t[2]], p) > 0.0);
        // boundary of the cavity: edges used by exactly one bad triangle
        let mut edges: Vec<[usize; 2]> = Vec::new();
        for t in &bad {
            for e in [[t[0], t[1]], [t[1], t[2]], [t[2], t[0]]] {
                if let Some(pos) = edges.iter().position(|f| f[0] == e[1] && f[1] == e[0]) {
                    edges.swap_remove(pos);
                } else {
                    edges.push(e);
                }
            }
        }
        tris = keep;
        for e in edges {
            if orient(all[e[0]], all[e[1]], p) > 0.0 {
                tris.push([e[0], e[1], i]);
            }
        }
    }
    let mut facets: Vec<[usize; 3]> = tris
        .into_iter()
        .filter(|t| t.iter().all(|&v| v < n))
        .filter(|&t| facet_area(points, t) > MIN_FACET_AREA)
        .map(|t| {
            // rotate so the smallest index comes first, keeping orientation
            let r = (0..3).min_by_key(|&k| t[k]).unwrap();
            [t[r], t[(r + 1) % 3], t[(r + 2) % 3]]
        })
        .collect();
    facets.sort_unstable();
    if facets.is_empty() {
        return Err(Error::Degenerate("all points are collinear".into()));
    }
    Ok(DelaunayMesh { facets, point_count: n })
}

/// `[q_{v0} q_{v1} q_{v2}]·c` for landmarks stored as `(x0, y0, x1, y1, …)`.
pub fn bary_point(q: &[f64], mesh: &DelaunayMesh, facet: usize, c: [f64; 3]) -> Result<[f64; 2]> {
    let f = *mesh.facets.get(facet).ok_or(Error::IndexOutOfRange {
        index: facet,
        len: mesh.facets.len(),
    })?;
    if q.len() < 2 * mesh.point_count {
        return Err(Error::dims("landmark vector", 2 * mesh.point_count, q.len()));
    }
    let mut p = [0.0; 2];
    for (k, &v) in f.iter().enumerate() {
        p[0] += c[k] * q[2 * v];
        p[1] += c[k] * q[2 * v + 1];
    }
    Ok(p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarySample {
    pub facet: usize,
    pub coords: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BarySampleSet {
    pub samples: Vec<BarySample>,
}

impl BarySampleSet {
    /// `⌈area/2⌉` points per facet from an R2 sequence folded into the
    /// simplex; each facet starts the sequence at a seeded offset.
    pub fn generate(points: &[[f64; 2]], mesh: &DelaunayMesh, seed: u64) -> Self {
        // plastic number; R2 steps are its inverse powers
        let g = 1.324_717_957_244_746;
        let step = [1.0 / g, 1.0 / (g * g)];
        let mut rng = stream(seed, "bary-samples");
        let mut samples = Vec::new();
        for (i, &f) in mesh.facets.iter().enumerate() {
            let count = (facet_area(points, f) / 2.0).ceil() as usize;
            let start: [f64; 2] = [rng.random(), rng.random()];
            for k in 1..=count {
                let mut a = (start[0] + k as f64 * step[0]).fract();
                let mut b = (start[1] + k as f64 * step[1]).fract();
                if a + b > 1.0 {
                    a = 1.0 - a;
                    b = 1.0 - b;
                }
                samples.push(BarySample {
                    facet: i,
                    coords: [1.0 - a - b, a, b],
                });
            }
        }
        BarySampleSet { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_cases() {
        let m = triangulate(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(m.facets.len(), 1);
        let quad = [[0.0, 0.0], [2.0, 0.1], [2.2, 1.9], [-0.1, 2.0]];
        let m = triangulate(&quad).unwrap();
        assert_eq!(m.facets.len(), 2);
        let shared = m.facets[0].iter().filter(|v| m.facets[1].contains(v)).count();
        assert_eq!(shared, 2);
        assert!(triangulate(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]).is_err());
    }

    #[test]
    fn bary_vertices_and_centroid() {
        let pts = [[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]];
        let m = triangulate(&pts).unwrap();
        let q: Vec<f64> = pts.iter().flatten().copied().collect();
        let f = m.facets[0];
        assert_eq!(bary_point(&q, &m, 0, [1.0, 0.0, 0.0]).unwrap(), pts[f[0]]);
        let c = bary_point(&q, &m, 0, [1.0 / 3.0; 3]).unwrap();
        assert!((c[0] - 1.0).abs() < 1e-15 && (c[1] - 1.0).abs() < 1e-15);
        assert!(bary_point(&q, &m, 1, [1.0, 0.0, 0.0]).is_err());
    }

    proptest! {
        #[test]
        fn empty_circumcircles(raw in prop::collection::vec((0.0f64..50.0, 0.0f64..50.0), 3..30)) {
            let pts: Vec<[f64; 2]> = raw.iter().map(|&(x, y)| [x, y]).collect();
            if let Ok(m) = triangulate(&pts) {
                for f in &m.facets {
                    let (a, b, c) = (pts[f[0]], pts[f[1]], pts[f[2]]);
                    prop_assert!(orient(a, b, c) > 0.0);
                    let scale = (1.0 + orient(a, b, c).abs()) * 2500.0;
                    for (j, &d) in pts.iter().enumerate() {
                        if !f.contains(&j) {
                            prop_assert!(in_circle(a, b, c, d) <= 1e-9 * scale);
                        }
                    }
                }
            }
        }

        #[test]
        fn samples_stay_inside_their_facet(seed in 0u64..1000) {
            let pts = [[1.0, 1.0], [20.0, 3.0], [8.0, 17.0], [25.0, 22.0]];
            let m = triangulate(&pts).unwrap();
            let q: Vec<f64> = pts.iter().flatten().copied().collect();
            let set = BarySampleSet::generate(&pts, &m, seed);
            let expected: usize = m.facets.iter().map(|&f| (facet_area(&pts, f) / 2.0).ceil() as usize).sum();
            prop_assert_eq!(set.len(), expected);
            for s in &set.samples {
                prop_assert!((s.coords.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(s.coords.iter().all(|&c| c >= 0.0));
                let p = bary_point(&q, &m, s.facet, s.coords).unwrap();
                let f = m.facets[s.facet];
                for k in 0..3 {
                    let o = orient(pts[f[k]], pts[f[(k + 1) % 3]], p);
                    prop_assert!(o >= -1e-9);
                }
            }
        }
    }
}
