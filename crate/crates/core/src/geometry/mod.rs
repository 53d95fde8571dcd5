//! Landmarks, convex hulls, elastic mask deformation and similarity
//! alignment of faces.

mod align;
mod elastic;
mod hull;

pub use align::{estimate_alignment, warp, SimilarityTransform};
pub use elastic::{elastic_deform, elastic_deform_with_field, DeformConfig, DisplacementField};
pub use hull::{convex_hull, rasterize, Polygon};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of points in the standard facial landmark layout.
pub const LANDMARK_COUNT: usize = 68;

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// 68 facial landmarks in pixel coordinates (pixel centres on integers).
#[derive(Clone, Debug, PartialEq)]
pub struct Landmarks {
    points: Vec<Point>,
}

impl Landmarks {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.len() != LANDMARK_COUNT {
            return Err(Error::Data(format!("expected {LANDMARK_COUNT} landmarks, got {}", points.len())));
        }
        if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::Data("landmarks must be finite".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn map(&self, mut f: impl FnMut(Point) -> Point) -> Landmarks {
        Landmarks {
            points: self.points.iter().map(|&p| f(p)).collect(),
        }
    }

    /// Clamps every point into `[0, w-1] x [0, h-1]`; returns whether any moved.
    pub fn clamp_to(&mut self, h: usize, w: usize) -> bool {
        let mut moved = false;
        for p in &mut self.points {
            let (x, y) = (p.x.clamp(0.0, (w - 1) as f64), p.y.clamp(0.0, (h - 1) as f64));
            moved |= x != p.x || y != p.y;
            *p = Point::new(x, y);
        }
        moved
    }

    /// Parses either 68 lines of `x y` or a JSON array of 68 `[x, y]` pairs.
    pub fn parse(text: &str) -> Result<Self> {
        let trimmed = text.trim_start();
        if trimmed.starts_with('[') {
            let pairs: Vec<[f64; 2]> = serde_json::from_str(trimmed)?;
            return Self::new(pairs.into_iter().map(|[x, y]| Point::new(x, y)).collect());
        }
        let mut points = Vec::with_capacity(LANDMARK_COUNT);
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace().map(str::parse::<f64>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(x)), Some(Ok(y)), None) => points.push(Point::new(x, y)),
                _ => return Err(Error::Data(format!("bad landmark line {}: {line:?}", n + 1))),
            }
        }
        Self::new(points)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Text form: one `x y` line per point.
    pub fn to_text(&self) -> String {
        self.points.iter().map(|p| format!("{} {}\n", p.x, p.y)).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// L2 norm of the 68x2 difference matrix, in pixels.
pub fn landmark_distance(a: &Landmarks, b: &Landmarks) -> f64 {
    a.points
        .iter()
        .zip(&b.points)
        .map(|(p, q)| (p.x - q.x).powi(2) + (p.y - q.y).powi(2))
        .sum::<f64>()
        .sqrt()
}
