//! Unit cell, perforated domain, their triangulations and measures.
//!
//! The reference cell is `Y = [0,1)^2` with a hole `O` approximated by an
//! inscribed regular polygon. The perforated domain `D^eps` is tiled by
//! affine images of one reference cell mesh; cells touching `dD` keep no hole.

mod cell_mesh;
mod dump;
mod perforated;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::quadrature::{bary_to_point, lerp, GAUSS3, TRI7};

pub use cell_mesh::{build_cell_mesh, grid_divisions, CellMesh, PeriodicPair};
pub use dump::{read_mesh_dump, write_mesh_dump, MeshDump};
pub use perforated::{
    build_perforated_mesh, build_perforated_mesh_capped, build_rect_mesh, surface_to_volume_over,
    surface_to_volume_residual, CellPatch, Hole, PerforatedMesh, SurfaceToVolume, VolumeRegion,
    DEFAULT_ELEMENT_CAP,
};

/// Boundary edge tags shared by cell meshes and domain meshes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BoundaryTag {
    Hole,
    CellLeft,
    CellRight,
    CellBottom,
    CellTop,
    Outer,
}

impl BoundaryTag {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundaryTag::Hole => "HOLE",
            BoundaryTag::CellLeft => "CELL_LEFT",
            BoundaryTag::CellRight => "CELL_RIGHT",
            BoundaryTag::CellBottom => "CELL_BOTTOM",
            BoundaryTag::CellTop => "CELL_TOP",
            BoundaryTag::Outer => "OUTER",
        }
    }
}

impl FromStr for BoundaryTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "HOLE" => BoundaryTag::Hole,
            "CELL_LEFT" => BoundaryTag::CellLeft,
            "CELL_RIGHT" => BoundaryTag::CellRight,
            "CELL_BOTTOM" => BoundaryTag::CellBottom,
            "CELL_TOP" => BoundaryTag::CellTop,
            "OUTER" => BoundaryTag::Outer,
            other => return Err(Error::InvalidMeshParameter(format!("unknown tag {other}"))),
        })
    }
}

/// Hole description inside the reference cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellGeometry {
    pub hole_center: [f64; 2],
    pub hole_radius: f64,
    pub boundary_segments: usize,
}

impl Default for CellGeometry {
    fn default() -> Self {
        Self { hole_center: [0.5, 0.5], hole_radius: 0.25, boundary_segments: 64 }
    }
}

impl CellGeometry {
    pub fn new(hole_radius: f64, boundary_segments: usize) -> Self {
        Self { hole_radius, boundary_segments, ..Self::default() }
    }

    pub fn has_hole(&self) -> bool {
        self.hole_radius > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let [cx, cy] = self.hole_center;
        let r = self.hole_radius;
        if !(r.is_finite() && (0.0..0.5).contains(&r)) {
            return Err(Error::InvalidGeometry(format!("hole radius {r} outside [0, 0.5)")));
        }
        if !(0.0 < cx && cx < 1.0 && 0.0 < cy && cy < 1.0) {
            return Err(Error::InvalidGeometry(format!("hole center {:?} outside the cell", self.hole_center)));
        }
        let offset = (cx - 0.5).abs().max((cy - 0.5).abs());
        if r > 0.0 && r + offset >= 0.5 {
            return Err(Error::InvalidGeometry(format!(
                "hole of radius {r} at {:?} touches the cell boundary",
                self.hole_center
            )));
        }
        let nb = self.boundary_segments;
        if nb < 8 || nb % 2 != 0 {
            return Err(Error::InvalidGeometry(format!("boundary_segments {nb} must be even and >= 8")));
        }
        Ok(())
    }

    /// Distance from the hole to the nearest cell edge.
    pub fn ligament(&self) -> f64 {
        let [cx, cy] = self.hole_center;
        let r = self.hole_radius;
        (cx - r).min(1.0 - cx - r).min(cy - r).min(1.0 - cy - r)
    }

    /// Vertices of the inscribed polygon, counter-clockwise from angle 0.
    pub fn polygon(&self) -> Vec<[f64; 2]> {
        let n = self.boundary_segments;
        let [cx, cy] = self.hole_center;
        (0..n)
            .map(|i| {
                let th = 2.0 * PI * i as f64 / n as f64;
                [cx + self.hole_radius * th.cos(), cy + self.hole_radius * th.sin()]
            })
            .collect()
    }

    /// Integral of `f` over the polygonal hole boundary (3-point Gauss per edge).
    /// `f` receives the point and its angle about the hole center.
    pub fn boundary_integral<F: FnMut([f64; 2], f64) -> f64>(&self, mut f: F) -> f64 {
        if !self.has_hole() {
            return 0.0;
        }
        let poly = self.polygon();
        let n = poly.len();
        let mut total = 0.0;
        for i in 0..n {
            let a = poly[i];
            let b = poly[(i + 1) % n];
            let len = dist(a, b);
            for &(s, w) in &GAUSS3 {
                let p = lerp(a, b, s);
                total += w * len * f(p, self.angle_of(p));
            }
        }
        total
    }

    pub fn angle_of(&self, p: [f64; 2]) -> f64 {
        (p[1] - self.hole_center[1]).atan2(p[0] - self.hole_center[0])
    }
}

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Rect {
    pub fn unit() -> Self {
        Self { min: [0.0, 0.0], max: [1.0, 1.0] }
    }

    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn height(&self) -> f64 {
        self.max[1] - self.min[1]
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

impl Default for Rect {
    fn default() -> Self {
        Self::unit()
    }
}

/// Cell size `1/N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Epsilon(u32);

impl Epsilon {
    pub fn new(n: u32) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidMeshParameter(format!("epsilon = 1/{n} requires N >= 2")));
        }
        Ok(Self(n))
    }

    pub fn denominator(self) -> u32 {
        self.0
    }

    pub fn value(self) -> f64 {
        1.0 / f64::from(self.0)
    }
}

impl fmt::Display for Epsilon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "1/{}", self.0)
    }
}

impl FromStr for Epsilon {
    type Err = Error;

    /// Accepts `1/N`, `N`, or a decimal whose reciprocal is an integer.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidMeshParameter(format!("epsilon `{s}` is not of the form 1/N"));
        if let Some(rest) = s.strip_prefix("1/") {
            return Epsilon::new(rest.trim().parse().map_err(|_| bad())?);
        }
        if let Ok(n) = s.parse::<u32>() {
            return Epsilon::new(n);
        }
        let v: f64 = s.parse().map_err(|_| bad())?;
        let inv = 1.0 / v;
        let n = inv.round();
        if !(v > 0.0) || (inv - n).abs() > 1e-9 * n.max(1.0) {
            return Err(bad());
        }
        Epsilon::new(n as u32)
    }
}

impl Serialize for Epsilon {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Epsilon {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Int(u32),
        }
        match Raw::deserialize(d)? {
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
            Raw::Int(n) => Epsilon::new(n).map_err(serde::de::Error::custom),
        }
    }
}

/// Continuum and discrete (inscribed polygon) cell measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measures {
    pub area_ystar: f64,
    pub perim_hole: f64,
    pub area_hole: f64,
    pub discrete_area_ystar: f64,
    pub discrete_perim_hole: f64,
    pub discrete_area_hole: f64,
}

impl Measures {
    /// The `(|Y*|, |dO|)` pair used by all downstream coefficients.
    pub fn coefficients(&self) -> (f64, f64) {
        (self.discrete_area_ystar, self.discrete_perim_hole)
    }

    pub fn no_hole() -> Self {
        cell_measures(&CellGeometry { hole_radius: 0.0, ..CellGeometry::default() })
    }
}

pub fn cell_measures(geom: &CellGeometry) -> Measures {
    let r = geom.hole_radius;
    let n = geom.boundary_segments as f64;
    let (area_hole, perim_hole, d_area, d_perim) = if r > 0.0 {
        (
            PI * r * r,
            2.0 * PI * r,
            0.5 * n * r * r * (2.0 * PI / n).sin(),
            2.0 * n * r * (PI / n).sin(),
        )
    } else {
        (0.0, 0.0, 0.0, 0.0)
    };
    Measures {
        area_ystar: 1.0 - area_hole,
        perim_hole,
        area_hole,
        discrete_area_ystar: 1.0 - d_area,
        discrete_perim_hole: d_perim,
        discrete_area_hole: d_area,
    }
}

#[inline]
pub(crate) fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Plain triangulation with tagged boundary edges.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary_edges: Vec<BoundaryEdge>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryEdge {
    pub vertices: [usize; 2],
    pub tag: BoundaryTag,
}

impl TriMesh {
    pub fn triangle_points(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_points(t);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.signed_area(t)).sum()
    }

    pub fn max_edge_length(&self) -> f64 {
        self.triangles
            .iter()
            .flat_map(|&[a, b, c]| [(a, b), (b, c), (c, a)])
            .map(|(a, b)| dist(self.vertices[a], self.vertices[b]))
            .fold(0.0, f64::max)
    }

    pub fn boundary_length(&self, tag: BoundaryTag) -> f64 {
        self.boundary_edges
            .iter()
            .filter(|e| e.tag == tag)
            .map(|e| dist(self.vertices[e.vertices[0]], self.vertices[e.vertices[1]]))
            .sum()
    }

    pub fn count_tag(&self, tag: BoundaryTag) -> usize {
        self.boundary_edges.iter().filter(|e| e.tag == tag).count()
    }

    /// Integral of a scalar function over the listed triangles (degree-5 rule).
    pub fn integrate_over<I, F>(&self, triangles: I, mut f: F) -> f64
    where
        I: IntoIterator<Item = usize>,
        F: FnMut([f64; 2]) -> f64,
    {
        let mut total = 0.0;
        for t in triangles {
            let p = self.triangle_points(t);
            let area = self.signed_area(t);
            for (l, w) in &TRI7 {
                total += area * w * f(bary_to_point(p, *l));
            }
        }
        total
    }

    pub fn integrate<F: FnMut([f64; 2]) -> f64>(&self, f: F) -> f64 {
        self.integrate_over(0..self.triangles.len(), f)
    }

    /// Integral over boundary edges with the given tag (3-point Gauss per edge).
    pub fn integrate_boundary<F: FnMut([f64; 2]) -> f64>(&self, tag: BoundaryTag, mut f: F) -> f64 {
        let mut total = 0.0;
        for e in self.boundary_edges.iter().filter(|e| e.tag == tag) {
            let a = self.vertices[e.vertices[0]];
            let b = self.vertices[e.vertices[1]];
            let len = dist(a, b);
            for &(s, w) in &GAUSS3 {
                total += w * len * f(lerp(a, b, s));
            }
        }
        total
    }
}
