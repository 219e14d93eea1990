//! Point clouds, axis-aligned boxes and the sphere test geometry.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{H2Error, Result};

pub type Point3 = [f64; 3];

#[inline]
pub fn distance(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Collocation points; indices `0..n` form the root index set.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.iter().flatten().any(|c| !c.is_finite()) {
            return Err(H2Error::InvalidParameter("non-finite point coordinate".into()));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    /// Writes the cloud as CSV with header `x,y,z`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["x", "y", "z"])?;
        for p in &self.points {
            // `{:?}` on f64 prints the shortest representation that round-trips.
            w.write_record(p.iter().map(|c| format!("{c:?}")))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["x", "y", "z"] {
            return Err(H2Error::Parse(format!("expected header x,y,z, found {headers:?}")));
        }
        let mut points = Vec::new();
        for (line, record) in r.records().enumerate() {
            let record = record?;
            let mut p = [0.0; 3];
            for (c, field) in p.iter_mut().zip(record.iter()) {
                *c = field
                    .trim()
                    .parse()
                    .map_err(|e| H2Error::Parse(format!("row {}: {e}", line + 1)))?;
            }
            if record.len() != 3 {
                return Err(H2Error::Parse(format!("row {}: expected 3 fields", line + 1)));
            }
            points.push(p);
        }
        Self::new(points)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// `n` quasi-uniform points on a sphere, generated by the golden-angle spiral.
pub fn fibonacci_sphere(n: usize, radius: f64) -> Result<PointCloud> {
    if n == 0 {
        return Err(H2Error::EmptyInput("fibonacci_sphere needs n >= 1"));
    }
    if !(radius > 0.0) {
        return Err(H2Error::InvalidParameter(format!("radius must be positive, got {radius}")));
    }
    let golden_angle = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
    let points = (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let rho = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden_angle * i as f64;
            [radius * rho * phi.cos(), radius * rho * phi.sin(), radius * z]
        })
        .collect();
    PointCloud::new(points)
}

/// Points equally spaced on the segment `[0, length]` of the x-axis.
pub fn line_points(n: usize, length: f64) -> Result<PointCloud> {
    if n == 0 {
        return Err(H2Error::EmptyInput("line_points needs n >= 1"));
    }
    let h = if n > 1 { length / (n - 1) as f64 } else { 0.0 };
    PointCloud::new((0..n).map(|i| [i as f64 * h, 0.0, 0.0]).collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundingBox {
    pub lo: Point3,
    pub hi: Point3,
}

impl BoundingBox {
    pub fn new(lo: Point3, hi: Point3) -> Self {
        debug_assert!((0..3).all(|a| lo[a] <= hi[a]));
        Self { lo, hi }
    }

    /// Tight box around the given points.
    pub fn of_points<'a>(points: impl IntoIterator<Item = &'a Point3>) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        Self { lo, hi }
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    pub fn diam(&self) -> f64 {
        (0..3).map(|a| self.extent(a).powi(2)).sum::<f64>().sqrt()
    }

    pub fn center(&self) -> Point3 {
        [0, 1, 2].map(|a| 0.5 * (self.lo[a] + self.hi[a]))
    }

    /// Euclidean distance between the boxes; zero if they overlap or touch.
    pub fn dist(&self, other: &Self) -> f64 {
        (0..3)
            .map(|a| {
                let gap = (other.lo[a] - self.hi[a]).max(self.lo[a] - other.hi[a]).max(0.0);
                gap * gap
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn contains(&self, p: &Point3) -> bool {
        (0..3).all(|a| self.lo[a] <= p[a] && p[a] <= self.hi[a])
    }

    /// Longest axis; the lowest index wins ties.
    pub fn longest_axis(&self) -> usize {
        let mut best = 0;
        for a in 1..3 {
            if self.extent(a) > self.extent(best) {
                best = a;
            }
        }
        best
    }
}
