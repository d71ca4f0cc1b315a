//! Triangulations of the padded domain.
//!
//! The computational domain is the rectangle `[-pad, width + pad] x [0, height]`.
//! The body itself occupies `[0, width] x [0, height]` (triangles tagged
//! [`Region::Interior`]); the two vertical strips of width `pad` on either side
//! form the padding layer ([`Region::Padding`]) on which the boundary datum is
//! imposed. Cracks may therefore run along the loaded edges `x = 0` and
//! `x = width` and detach the body from the datum at a surface-energy cost.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::error::{FractureError, Result};

pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    Interior,
    Padding,
}

impl Region {
    pub fn code(self) -> i32 {
        match self {
            Region::Interior => 0,
            Region::Padding => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Point>,
    /// Vertex triples, counterclockwise.
    pub triangles: Vec<[usize; 3]>,
    pub regions: Vec<Region>,
    /// Edges of the outer boundary, each stored as `(min, max)` vertex index.
    pub boundary_edges: Vec<[usize; 2]>,
}

/// Per-triangle P1 data: area and the constant gradients of the three
/// barycentric basis functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementGeometry {
    pub area: f64,
    pub grads: [[f64; 2]; 3],
}

impl ElementGeometry {
    /// Gradient of the affine interpolant of scalar nodal values.
    pub fn gradient(&self, values: [f64; 3]) -> [f64; 2] {
        let mut g = [0.0; 2];
        for (k, value) in values.iter().enumerate() {
            g[0] += value * self.grads[k][0];
            g[1] += value * self.grads[k][1];
        }
        g
    }
}

pub fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn edge_key(a: usize, b: usize) -> [usize; 2] {
    if a < b {
        [a, b]
    } else {
        [b, a]
    }
}

impl Mesh {
    /// Assemble a mesh from raw parts, deriving the boundary edges from
    /// connectivity. No validation is performed; see [`validate`].
    pub fn from_parts(
        vertices: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        regions: Vec<Region>,
    ) -> Self {
        let mut counts: BTreeMap<[usize; 2], usize> = BTreeMap::new();
        for tri in &triangles {
            for k in 0..3 {
                *counts
                    .entry(edge_key(tri[k], tri[(k + 1) % 3]))
                    .or_default() += 1;
            }
        }
        let boundary_edges = counts
            .into_iter()
            .filter(|&(_, n)| n == 1)
            .map(|(e, _)| e)
            .collect();
        Mesh {
            vertices,
            triangles,
            regions,
            boundary_edges,
        }
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn corners(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        signed_area(a, b, c)
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.corners(t);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    pub fn total_area(&self) -> f64 {
        (0..self.num_triangles()).map(|t| self.area(t)).sum()
    }

    /// P1 geometry of triangle `t`; fails on zero or negative area.
    pub fn element_geometry(&self, t: usize) -> Result<ElementGeometry> {
        let [a, b, c] = self.corners(t);
        let area = signed_area(a, b, c);
        if !(area > 0.0) || !area.is_finite() {
            return Err(FractureError::DegenerateElement { triangle: t, area });
        }
        let two_a = 2.0 * area;
        let grads = [
            [(b[1] - c[1]) / two_a, (c[0] - b[0]) / two_a],
            [(c[1] - a[1]) / two_a, (a[0] - c[0]) / two_a],
            [(a[1] - b[1]) / two_a, (b[0] - a[0]) / two_a],
        ];
        Ok(ElementGeometry { area, grads })
    }

    pub fn geometry(&self) -> Result<Vec<ElementGeometry>> {
        (0..self.num_triangles())
            .map(|t| self.element_geometry(t))
            .collect()
    }

    /// Longest edge over all triangles.
    pub fn max_edge_length(&self) -> f64 {
        let mut h: f64 = 0.0;
        for tri in &self.triangles {
            for k in 0..3 {
                h = h.max(distance(
                    self.vertices[tri[k]],
                    self.vertices[tri[(k + 1) % 3]],
                ));
            }
        }
        h
    }

    /// Every edge with the (one or two) triangles that contain it, in
    /// ascending edge order.
    pub fn edge_triangles(&self) -> Vec<([usize; 2], Vec<usize>)> {
        let mut map: BTreeMap<[usize; 2], Vec<usize>> = BTreeMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            for k in 0..3 {
                map.entry(edge_key(tri[k], tri[(k + 1) % 3]))
                    .or_default()
                    .push(t);
            }
        }
        map.into_iter().collect()
    }

    pub fn edge_length(&self, edge: [usize; 2]) -> f64 {
        distance(self.vertices[edge[0]], self.vertices[edge[1]])
    }

    pub fn bounding_box(&self) -> (Point, Point) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for v in &self.vertices {
            for d in 0..2 {
                lo[d] = lo[d].min(v[d]);
                hi[d] = hi[d].max(v[d]);
            }
        }
        (lo, hi)
    }

    /// Vertices belonging to at least one triangle of the given region.
    pub fn region_vertices(&self, region: Region) -> Vec<bool> {
        let mut mark = vec![false; self.num_vertices()];
        for (tri, r) in self.triangles.iter().zip(&self.regions) {
            if *r == region {
                for &v in tri {
                    mark[v] = true;
                }
            }
        }
        mark
    }

    /// Barycentric coordinates of `p` in triangle `t`.
    pub fn barycentric(&self, t: usize, p: Point) -> [f64; 3] {
        let [a, b, c] = self.corners(t);
        let total = signed_area(a, b, c);
        [
            signed_area(p, b, c) / total,
            signed_area(a, p, c) / total,
            signed_area(a, b, p) / total,
        ]
    }
}

/// Distance from `p` to the segment `[a, b]`.
pub fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let s = if len2 > 0.0 {
        (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    distance(p, [a[0] + s * ab[0], a[1] + s * ab[1]])
}

pub fn distance(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Structured rectangle mesh of `[-pad, width + pad] x [0, height]`.
///
/// The body is split into `nx x ny` cells; each padding strip gets its own
/// columns, as many as needed to keep their width close to the body's cell
/// width (at least one). Every cell is cut into two triangles with the
/// diagonal alternating in a checkerboard pattern.
pub fn build_rectangle_mesh(
    width: f64,
    height: f64,
    pad: f64,
    nx: usize,
    ny: usize,
) -> Result<Mesh> {
    for (name, value) in [("width", width), ("height", height), ("pad", pad)] {
        if !(value > 0.0) || !value.is_finite() {
            return Err(FractureError::InvalidGeometry(format!(
                "{name} must be positive and finite, got {value}"
            )));
        }
    }
    if nx < 2 || ny < 2 {
        return Err(FractureError::InvalidGeometry(format!(
            "need at least 2 cells per direction, got nx = {nx}, ny = {ny}"
        )));
    }

    let hx = width / nx as f64;
    let npad = ((pad / hx).round() as usize).max(1);

    let mut xs = Vec::with_capacity(nx + 2 * npad + 1);
    for i in 0..npad {
        xs.push(-pad + pad * i as f64 / npad as f64);
    }
    for i in 0..=nx {
        xs.push(if i == nx {
            width
        } else {
            width * i as f64 / nx as f64
        });
    }
    for i in 1..=npad {
        xs.push(if i == npad {
            width + pad
        } else {
            width + pad * i as f64 / npad as f64
        });
    }
    let ys: Vec<f64> = (0..=ny)
        .map(|j| {
            if j == ny {
                height
            } else {
                height * j as f64 / ny as f64
            }
        })
        .collect();

    let ncols = xs.len() - 1;
    let stride = xs.len();
    let mut vertices = Vec::with_capacity(xs.len() * ys.len());
    for &y in &ys {
        for &x in &xs {
            vertices.push([x, y]);
        }
    }

    let mut triangles = Vec::with_capacity(2 * ncols * ny);
    let mut regions = Vec::with_capacity(2 * ncols * ny);
    for j in 0..ny {
        for i in 0..ncols {
            let a = j * stride + i;
            let b = a + 1;
            let c = b + stride;
            let d = a + stride;
            let cells = if (i + j) % 2 == 0 {
                [[a, b, c], [a, c, d]]
            } else {
                [[a, b, d], [b, c, d]]
            };
            let region = if i < npad || i >= npad + nx {
                Region::Padding
            } else {
                Region::Interior
            };
            for tri in cells {
                triangles.push(tri);
                regions.push(region);
            }
        }
    }

    Ok(Mesh::from_parts(vertices, triangles, regions))
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeshViolation {
    RegionCount { triangles: usize, regions: usize },
    VertexOutOfRange { triangle: usize, vertex: usize },
    NonPositiveArea { triangle: usize, area: f64 },
    UnusedVertex { vertex: usize },
    MissingPadding,
    EdgeOvershared { edge: [usize; 2], count: usize },
    BoundaryEdgeMismatch { edge: [usize; 2] },
    UncoveredDirichletEdge { triangle: usize, edge: [usize; 2] },
}

impl fmt::Display for MeshViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeshViolation::RegionCount { triangles, regions } => {
                write!(f, "{regions} region tags for {triangles} triangles")
            }
            MeshViolation::VertexOutOfRange { triangle, vertex } => {
                write!(f, "triangle {triangle} references missing vertex {vertex}")
            }
            MeshViolation::NonPositiveArea { triangle, area } => {
                write!(f, "triangle {triangle} has non-positive signed area {area:e}")
            }
            MeshViolation::UnusedVertex { vertex } => write!(f, "vertex {vertex} belongs to no triangle"),
            MeshViolation::MissingPadding => write!(f, "mesh has no padding triangles"),
            MeshViolation::EdgeOvershared { edge, count } => {
                write!(f, "edge {edge:?} is shared by {count} triangles")
            }
            MeshViolation::BoundaryEdgeMismatch { edge } => {
                write!(f, "boundary edge list disagrees with connectivity at {edge:?}")
            }
            MeshViolation::UncoveredDirichletEdge { triangle, edge } => write!(
                f,
                "interior triangle {triangle} reaches the loaded outer boundary through edge {edge:?}"
            ),
        }
    }
}

/// Check every structural invariant of a mesh; an empty list means valid.
pub fn validate(mesh: &Mesh) -> Vec<MeshViolation> {
    let mut out = Vec::new();
    let nv = mesh.num_vertices();

    if mesh.regions.len() != mesh.triangles.len() {
        out.push(MeshViolation::RegionCount {
            triangles: mesh.triangles.len(),
            regions: mesh.regions.len(),
        });
    }

    let mut used = vec![false; nv];
    let mut indices_ok = true;
    for (t, tri) in mesh.triangles.iter().enumerate() {
        for &v in tri {
            if v >= nv {
                out.push(MeshViolation::VertexOutOfRange {
                    triangle: t,
                    vertex: v,
                });
                indices_ok = false;
            } else {
                used[v] = true;
            }
        }
    }
    if !indices_ok {
        return out;
    }

    for t in 0..mesh.num_triangles() {
        let area = mesh.area(t);
        if !(area > 0.0) {
            out.push(MeshViolation::NonPositiveArea { triangle: t, area });
        }
    }
    for (v, u) in used.iter().enumerate() {
        if !u {
            out.push(MeshViolation::UnusedVertex { vertex: v });
        }
    }
    if !mesh.regions.contains(&Region::Padding) {
        out.push(MeshViolation::MissingPadding);
    }

    let edges = mesh.edge_triangles();
    let mut boundary = BTreeSet::new();
    for (edge, tris) in &edges {
        if tris.len() > 2 {
            out.push(MeshViolation::EdgeOvershared {
                edge: *edge,
                count: tris.len(),
            });
        } else if tris.len() == 1 {
            boundary.insert(*edge);
        }
    }
    let listed: BTreeSet<[usize; 2]> = mesh
        .boundary_edges
        .iter()
        .map(|e| edge_key(e[0], e[1]))
        .collect();
    for edge in boundary.symmetric_difference(&listed) {
        out.push(MeshViolation::BoundaryEdgeMismatch { edge: *edge });
    }

    // The loaded sides are the extreme vertical lines of the padded box; the
    // body may only reach them through padding.
    if mesh.regions.len() == mesh.triangles.len() && nv > 0 {
        let (lo, hi) = mesh.bounding_box();
        let tol = 1e-12 * (hi[0] - lo[0]).abs().max(1.0);
        let on_side = |v: usize| {
            let x = mesh.vertices[v][0];
            (x - lo[0]).abs() <= tol || (x - hi[0]).abs() <= tol
        };
        for (edge, tris) in &edges {
            if tris.len() == 1
                && mesh.regions[tris[0]] == Region::Interior
                && on_side(edge[0])
                && on_side(edge[1])
            {
                out.push(MeshViolation::UncoveredDirichletEdge {
                    triangle: tris[0],
                    edge: *edge,
                });
            }
        }
    }

    out
}

/// Vertices on which the boundary datum is imposed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirichletSet {
    /// Ascending vertex indices.
    pub vertices: Vec<usize>,
    mask: Vec<bool>,
}

impl DirichletSet {
    pub fn from_mask(mask: Vec<bool>) -> Self {
        let vertices = mask
            .iter()
            .enumerate()
            .filter(|(_, m)| **m)
            .map(|(v, _)| v)
            .collect();
        DirichletSet { vertices, mask }
    }

    pub fn contains(&self, v: usize) -> bool {
        self.mask.get(v).copied().unwrap_or(false)
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }
}

/// All vertices incident to a padding triangle. Empty when the mesh has no
/// padding; callers must reject that case.
pub fn dirichlet_set(mesh: &Mesh) -> DirichletSet {
    DirichletSet::from_mask(mesh.region_vertices(Region::Padding))
}

/// Bucket grid for locating the triangle that contains a point.
#[derive(Debug, Clone)]
pub struct PointLocator {
    origin: Point,
    cell: [f64; 2],
    dims: [usize; 2],
    buckets: Vec<Vec<usize>>,
}

impl PointLocator {
    pub fn new(mesh: &Mesh) -> Self {
        let (lo, hi) = mesh.bounding_box();
        let n = (mesh.num_triangles() as f64).sqrt().ceil().max(1.0) as usize;
        let dims = [n, n];
        let cell = [
            ((hi[0] - lo[0]) / n as f64).max(f64::MIN_POSITIVE),
            ((hi[1] - lo[1]) / n as f64).max(f64::MIN_POSITIVE),
        ];
        let mut buckets = vec![Vec::new(); n * n];
        for t in 0..mesh.num_triangles() {
            let c = mesh.corners(t);
            let (mut bl, mut bh) = (c[0], c[0]);
            for p in &c[1..] {
                for d in 0..2 {
                    bl[d] = bl[d].min(p[d]);
                    bh[d] = bh[d].max(p[d]);
                }
            }
            let i0 = Self::index(bl[0], lo[0], cell[0], n);
            let i1 = Self::index(bh[0], lo[0], cell[0], n);
            let j0 = Self::index(bl[1], lo[1], cell[1], n);
            let j1 = Self::index(bh[1], lo[1], cell[1], n);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    buckets[j * n + i].push(t);
                }
            }
        }
        PointLocator {
            origin: lo,
            cell,
            dims,
            buckets,
        }
    }

    fn index(x: f64, lo: f64, h: f64, n: usize) -> usize {
        let i = ((x - lo) / h).floor();
        if i < 0.0 {
            0
        } else {
            (i as usize).min(n - 1)
        }
    }

    /// Triangle containing `p` with its barycentric coordinates, if any.
    /// Points on shared edges resolve to the lowest-index triangle.
    pub fn locate(&self, mesh: &Mesh, p: Point) -> Option<(usize, [f64; 3])> {
        let i = Self::index(p[0], self.origin[0], self.cell[0], self.dims[0]);
        let j = Self::index(p[1], self.origin[1], self.cell[1], self.dims[1]);
        let tol = -1e-12;
        self.buckets[j * self.dims[0] + i].iter().find_map(|&t| {
            let bary = mesh.barycentric(t, p);
            (bary.iter().all(|&b| b >= tol)).then_some((t, bary))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_enumeration() {
        // width 1 / nx 2 gives h = 0.5; pad 0.25 rounds to a single padding column.
        let mesh = build_rectangle_mesh(1.0, 1.0, 0.25, 2, 2).unwrap();
        let xs = [-0.25, 0.0, 0.5, 1.0, 1.25];
        assert_eq!(mesh.num_vertices(), 5 * 3);
        assert_eq!(mesh.num_triangles(), 2 * 4 * 2);
        for (k, v) in mesh.vertices.iter().enumerate() {
            assert_eq!(v[0], xs[k % 5]);
            assert_eq!(v[1], 0.5 * (k / 5) as f64);
        }
        let padding = mesh
            .regions
            .iter()
            .filter(|r| **r == Region::Padding)
            .count();
        assert_eq!(padding, 8);
        for t in 0..mesh.num_triangles() {
            let cx = mesh.centroid(t)[0];
            let expect = if cx < 0.0 || cx > 1.0 {
                Region::Padding
            } else {
                Region::Interior
            };
            assert_eq!(mesh.regions[t], expect);
        }
        // Perimeter of the padded box: 4 cells along each horizontal side and
        // 2 along each vertical side.
        assert_eq!(mesh.boundary_edges.len(), 2 * 4 + 2 * 2);
        assert!(validate(&mesh).is_empty());
    }

    #[test]
    fn four_by_four_counts() {
        let mesh = build_rectangle_mesh(1.0, 1.0, 0.25, 4, 4).unwrap();
        assert_eq!(mesh.num_triangles(), 2 * 6 * 4);
        let padding: Vec<usize> = (0..mesh.num_triangles())
            .filter(|&t| mesh.regions[t] == Region::Padding)
            .collect();
        assert_eq!(padding.len(), 16);
        for t in padding {
            let cx = mesh.centroid(t)[0];
            assert!((cx > -0.25 && cx < 0.0) || (cx > 1.0 && cx < 1.25));
        }
    }

    #[test]
    fn non_positive_dimensions_are_rejected() {
        assert!(matches!(
            build_rectangle_mesh(1.0, 1.0, 0.0, 4, 4),
            Err(FractureError::InvalidGeometry(_))
        ));
        assert!(build_rectangle_mesh(-1.0, 1.0, 0.2, 4, 4).is_err());
        assert!(build_rectangle_mesh(1.0, 0.0, 0.2, 4, 4).is_err());
        assert!(build_rectangle_mesh(1.0, 1.0, 0.2, 1, 4).is_err());
    }

    #[test]
    fn clockwise_triangle_is_reported() {
        let mut mesh = build_rectangle_mesh(1.0, 1.0, 0.25, 2, 2).unwrap();
        mesh.triangles[3].swap(1, 2);
        let violations = validate(&mesh);
        assert_eq!(violations.len(), 1, "{violations:?}");
        assert!(matches!(
            violations[0],
            MeshViolation::NonPositiveArea { triangle: 3, .. }
        ));
    }

    #[test]
    fn missing_padding_is_reported() {
        let mut mesh = build_rectangle_mesh(1.0, 1.0, 0.25, 2, 2).unwrap();
        mesh.regions.iter_mut().for_each(|r| *r = Region::Interior);
        let violations = validate(&mesh);
        assert!(violations.contains(&MeshViolation::MissingPadding));
        // Interior now touches the loaded sides as well.
        assert!(violations
            .iter()
            .any(|v| matches!(v, MeshViolation::UncoveredDirichletEdge { .. })));
        assert!(dirichlet_set(&mesh).is_empty());
    }

    #[test]
    fn unused_vertex_is_reported() {
        let mut mesh = build_rectangle_mesh(1.0, 1.0, 0.25, 2, 2).unwrap();
        mesh.vertices.push([5.0, 5.0]);
        assert_eq!(
            validate(&mesh),
            vec![MeshViolation::UnusedVertex { vertex: 15 }]
        );
    }

    #[test]
    fn overshared_edge_is_reported() {
        let mut mesh = build_rectangle_mesh(1.0, 1.0, 0.25, 2, 2).unwrap();
        mesh.vertices.push([5.0, -5.0]);
        // The cell diagonal of triangle 0 is already shared by two triangles.
        let [a, _, c] = mesh.triangles[0];
        mesh.triangles.push([a, mesh.vertices.len() - 1, c]);
        mesh.regions.push(Region::Interior);
        let violations = validate(&mesh);
        assert!(violations
            .iter()
            .any(|v| matches!(v, MeshViolation::EdgeOvershared { count: 3, .. })));
        assert!(violations
            .iter()
            .any(|v| matches!(v, MeshViolation::BoundaryEdgeMismatch { .. })));
    }

    #[test]
    fn dirichlet_set_on_two_by_two() {
        let mesh = build_rectangle_mesh(1.0, 1.0, 0.25, 2, 2).unwrap();
        let set = dirichlet_set(&mesh);
        let expected: Vec<usize> = (0..mesh.num_vertices())
            .filter(|&v| mesh.vertices[v][0] <= 0.0 || mesh.vertices[v][0] >= 1.0)
            .collect();
        assert_eq!(set.vertices, expected);
        assert_eq!(set.len(), 12);
    }

    #[test]
    fn single_padding_triangle() {
        let mesh = Mesh::from_parts(
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            vec![[0, 1, 2]],
            vec![Region::Padding],
        );
        assert_eq!(dirichlet_set(&mesh).vertices, vec![0, 1, 2]);
    }

    #[test]
    fn locator_finds_vertices_and_centroids() {
        let mesh = build_rectangle_mesh(2.0, 1.0, 0.3, 6, 3).unwrap();
        let locator = PointLocator::new(&mesh);
        for t in 0..mesh.num_triangles() {
            let c = mesh.centroid(t);
            let (found, bary) = locator.locate(&mesh, c).unwrap();
            assert_eq!(found, t);
            assert!(bary.iter().all(|b| (b - 1.0 / 3.0).abs() < 1e-12));
        }
        assert!(locator.locate(&mesh, [10.0, 0.5]).is_none());
    }
}
