use super::{Landmarks, Point};
use crate::error::{Error, Result};
use crate::imaging::GrayMap;

/// A convex polygon with counter-clockwise vertices (positive signed area
/// in `(x, y)` coordinates).
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Polygon {
    pub vertices: Vec<Point>,
}

impl Polygon {
    pub fn new(vertices: Vec<Point>) -> Self {
        Self { vertices }
    }

    /// Shoelace area; positive for counter-clockwise order.
    pub fn signed_area(&self) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|i| {
                let (a, b) = (self.vertices[i], self.vertices[(i + 1) % n]);
                a.x * b.y - b.x * a.y
            })
            .sum::<f64>()
            / 2.0
    }

    /// Inclusive containment test; assumes convex counter-clockwise order.
    pub fn contains(&self, p: Point) -> bool {
        let n = self.vertices.len();
        if n < 3 {
            return false;
        }
        (0..n).all(|i| cross(self.vertices[i], self.vertices[(i + 1) % n], p) >= -1e-9)
    }

    pub fn bounds(&self) -> Option<(Point, Point)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), p| {
            (
                Point::new(lo.x.min(p.x), lo.y.min(p.y)),
                Point::new(hi.x.max(p.x), hi.y.max(p.y)),
            )
        }))
    }
}

pub(crate) fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn hull_of(points: &[Point]) -> Vec<Point> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<Point> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Monotone-chain convex hull of the landmark set. Collinear boundary points
/// are dropped, so the hull vertices are the extreme points only.
pub fn convex_hull(lm: &Landmarks) -> Result<Polygon> {
    convex_hull_points(lm.points())
}

pub(crate) fn convex_hull_points(points: &[Point]) -> Result<Polygon> {
    let hull = hull_of(points);
    if hull.len() < 3 {
        return Err(Error::DegenerateGeometry("landmarks are collinear".into()));
    }
    Ok(Polygon::new(hull))
}

/// Binary map with 1 where the pixel centre `(col, row)` lies inside the polygon.
pub fn rasterize(polygon: &Polygon, h: usize, w: usize) -> GrayMap {
    let mut out = GrayMap::zeros(h, w).expect("non-empty raster");
    if polygon.vertices.len() < 3 || polygon.signed_area().abs() < 1e-12 {
        return out;
    }
    let (lo, hi) = polygon.bounds().expect("non-empty polygon");
    let r0 = lo.y.ceil().max(0.0) as usize;
    let r1 = (hi.y.floor().min(h as f64 - 1.0)).max(-1.0);
    let c0 = lo.x.ceil().max(0.0) as usize;
    let c1 = (hi.x.floor().min(w as f64 - 1.0)).max(-1.0);
    if r1 < 0.0 || c1 < 0.0 {
        return out;
    }
    for r in r0..=r1 as usize {
        for c in c0..=c1 as usize {
            if polygon.contains(Point::new(c as f64, r as f64)) {
                out.set(r, c, 1.0);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::LANDMARK_COUNT;
    use crate::imaging::Raster;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lm(points: Vec<Point>) -> Landmarks {
        Landmarks::new(points).unwrap()
    }

    #[test]
    fn circle_points_are_all_on_hull() {
        let pts = (0..LANDMARK_COUNT)
            .map(|i| {
                let t = i as f64 / 68.0 * std::f64::consts::TAU;
                Point::new(100.0 + 50.0 * t.cos(), 100.0 + 50.0 * t.sin())
            })
            .collect();
        let hull = convex_hull(&lm(pts)).unwrap();
        assert_eq!(hull.vertices.len(), 68);
        assert!(hull.signed_area() > 0.0);
    }

    #[test]
    fn square_with_interior_points() {
        let mut pts = vec![
            Point::new(0.0, 0.0),
            Point::new(10.0, 0.0),
            Point::new(10.0, 10.0),
            Point::new(0.0, 10.0),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        while pts.len() < LANDMARK_COUNT {
            pts.push(Point::new(rng.random_range(1.0..9.0), rng.random_range(1.0..9.0)));
        }
        let hull = convex_hull(&lm(pts)).unwrap();
        assert_eq!(hull.vertices.len(), 4);
    }

    #[test]
    fn collinear_is_degenerate() {
        let pts = (0..LANDMARK_COUNT).map(|i| Point::new(i as f64, 2.0 * i as f64)).collect();
        assert!(matches!(convex_hull(&lm(pts)), Err(Error::DegenerateGeometry(_))));
    }

    /// O(n^3) oracle: (i, j) is a hull edge when every other point is to the
    /// left of (or on) the directed segment.
    fn brute_force_hull_vertices(pts: &[Point]) -> Vec<usize> {
        let mut keep = Vec::new();
        for i in 0..pts.len() {
            let on_edge = (0..pts.len()).any(|j| {
                j != i
                    && (0..pts.len()).all(|k| {
                        let c = cross(pts[i], pts[j], pts[k]);
                        c > 0.0 || k == i || k == j
                    })
            });
            if on_edge {
                keep.push(i);
            }
        }
        keep
    }

    #[test]
    fn random_clouds_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let pts: Vec<Point> = (0..LANDMARK_COUNT)
                .map(|_| Point::new(rng.random_range(0.0..200.0), rng.random_range(0.0..200.0)))
                .collect();
            let hull = convex_hull(&lm(pts.clone())).unwrap();
            let mut got: Vec<usize> = hull
                .vertices
                .iter()
                .map(|v| pts.iter().position(|p| p == v).unwrap())
                .collect();
            got.sort();
            assert_eq!(got, brute_force_hull_vertices(&pts));
            assert!(pts.iter().all(|&p| hull.contains(p)));
        }
    }

    #[test]
    fn full_frame_rectangle_is_all_ones() {
        let poly = Polygon::new(vec![
            Point::new(-0.5, -0.5),
            Point::new(15.5, -0.5),
            Point::new(15.5, 11.5),
            Point::new(-0.5, 11.5),
        ]);
        let m = rasterize(&poly, 12, 16);
        assert!(m.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn empty_polygon_is_all_zeros() {
        let m = rasterize(&Polygon::default(), 8, 8);
        assert!(m.data().iter().all(|&v| v == 0.0));
        let flat = Polygon::new(vec![Point::new(1.0, 1.0), Point::new(5.0, 1.0), Point::new(3.0, 1.0)]);
        assert!(rasterize(&flat, 8, 8).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn triangle_matches_half_plane_oracle() {
        let (a, b, c) = (Point::new(1.3, 2.2), Point::new(14.1, 4.7), Point::new(6.2, 13.9));
        let poly = Polygon::new(vec![a, b, c]);
        assert!(poly.signed_area() > 0.0);
        let m = rasterize(&poly, 16, 16);
        for r in 0..16 {
            for col in 0..16 {
                let p = Point::new(col as f64, r as f64);
                // barycentric sign test, independent of edge ordering
                let d1 = cross(a, b, p);
                let d2 = cross(b, c, p);
                let d3 = cross(c, a, p);
                let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
                let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
                let inside = !(neg && pos);
                assert_eq!(m.get(r, col) == 1.0, inside, "pixel ({r}, {col})");
            }
        }
    }
}
