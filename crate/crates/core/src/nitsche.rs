//! Extension of a displacement field across a straight line by a weighted
//! pair of compressed reflections.
//!
//! In a frame where the field lives on `y > 0`, with tangential component
//! `phi_1` and normal component `phi_2`, the extension to `y < 0` is
//!
//! ```text
//! ext_1(x, y) = p phi_1(x, -lambda y) + (1 - p) phi_1(x, -mu y)
//! ext_2(x, y) = -lambda p phi_2(x, -lambda y) + (1 + lambda p) phi_2(x, -mu y)
//! ```
//!
//! with `p = (1 + mu) / (mu - lambda)`. Constants and infinitesimal
//! rotations extend to themselves and the trace is continuous across the
//! line.

use crate::elasticity::DisplacementField;
use crate::error::{FractureError, Result};
use crate::mesh::{Mesh, Point, PointLocator};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NitscheExtension {
    lambda: f64,
    mu: f64,
    p: f64,
}

impl Default for NitscheExtension {
    fn default() -> Self {
        NitscheExtension::new(0.25, 0.5).unwrap()
    }
}

impl NitscheExtension {
    /// Requires `0 < lambda < mu < 1`.
    pub fn new(lambda: f64, mu: f64) -> Result<Self> {
        if !(0.0 < lambda && lambda < mu && mu < 1.0) {
            return Err(FractureError::InvalidParameters(format!(
                "extension needs 0 < lambda < mu < 1, got lambda = {lambda}, mu = {mu}"
            )));
        }
        Ok(NitscheExtension {
            lambda,
            mu,
            p: (1.0 + mu) / (mu - lambda),
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Value at `x` of the extension of `phi`. Points on the field side of
    /// the frame return `phi(x)` itself.
    pub fn extend_at(
        &self,
        frame: &Frame,
        x: Point,
        mut phi: impl FnMut(Point) -> [f64; 2],
    ) -> [f64; 2] {
        let (s, h) = frame.local(x);
        if h >= 0.0 {
            return phi(x);
        }
        let a = phi(frame.global(s, -self.lambda * h));
        let b = phi(frame.global(s, -self.mu * h));
        let (a1, a2) = frame.components(a);
        let (b1, b2) = frame.components(b);
        let e1 = self.p * a1 + (1.0 - self.p) * b1;
        let e2 = -self.lambda * self.p * a2 + (1.0 + self.lambda * self.p) * b2;
        frame.vector(e1, e2)
    }
}

/// Orthonormal frame on a reflection line: `normal` points into the side
/// where the field is known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub origin: Point,
    pub tangent: [f64; 2],
    pub normal: [f64; 2],
}

impl Frame {
    /// Line `y = y0`; the field is known above it when `field_above`.
    pub fn horizontal(y0: f64, field_above: bool) -> Self {
        let n = if field_above { 1.0 } else { -1.0 };
        Frame {
            origin: [0.0, y0],
            tangent: [1.0, 0.0],
            normal: [0.0, n],
        }
    }

    /// Line `x = x0`; the field is known to the right when `field_right`.
    pub fn vertical(x0: f64, field_right: bool) -> Self {
        let n = if field_right { 1.0 } else { -1.0 };
        Frame {
            origin: [x0, 0.0],
            tangent: [0.0, 1.0],
            normal: [n, 0.0],
        }
    }

    /// Tangential and normal coordinates of `x`.
    pub fn local(&self, x: Point) -> (f64, f64) {
        let d = [x[0] - self.origin[0], x[1] - self.origin[1]];
        (
            d[0] * self.tangent[0] + d[1] * self.tangent[1],
            d[0] * self.normal[0] + d[1] * self.normal[1],
        )
    }

    pub fn global(&self, s: f64, h: f64) -> Point {
        [
            self.origin[0] + s * self.tangent[0] + h * self.normal[0],
            self.origin[1] + s * self.tangent[1] + h * self.normal[1],
        ]
    }

    fn components(&self, v: [f64; 2]) -> (f64, f64) {
        (
            v[0] * self.tangent[0] + v[1] * self.tangent[1],
            v[0] * self.normal[0] + v[1] * self.normal[1],
        )
    }

    fn vector(&self, t: f64, n: f64) -> [f64; 2] {
        [
            t * self.tangent[0] + n * self.normal[0],
            t * self.tangent[1] + n * self.normal[1],
        ]
    }
}

/// P1 interpolant of a nodal field.
pub fn interpolate(
    mesh: &Mesh,
    locator: &PointLocator,
    u: &DisplacementField,
    x: Point,
) -> Option<[f64; 2]> {
    let (t, bary) = locator.locate(mesh, x)?;
    let tri = mesh.triangles[t];
    let mut out = [0.0; 2];
    for (k, &v) in tri.iter().enumerate() {
        let uv = u.at(v);
        out[0] += bary[k] * uv[0];
        out[1] += bary[k] * uv[1];
    }
    Some(out)
}

/// Replace `u` at the vertices flagged in `targets` (all on the extension
/// side of `frame`, within reach of the known side) by the extension of the
/// P1 interpolant of `u`. Fails when a reflected sample leaves the mesh.
pub fn nitsche_extend(
    mesh: &Mesh,
    u: &DisplacementField,
    frame: &Frame,
    targets: &[bool],
    ext: &NitscheExtension,
) -> Result<DisplacementField> {
    if targets.len() != mesh.num_vertices() || u.num_vertices() != mesh.num_vertices() {
        return Err(FractureError::SizeMismatch {
            what: "extension input",
            expected: mesh.num_vertices(),
            found: targets.len().min(u.num_vertices()),
        });
    }
    let locator = PointLocator::new(mesh);
    let mut out = u.clone();
    for (v, _) in targets.iter().enumerate().filter(|(_, t)| **t) {
        let x = mesh.vertices[v];
        let mut missing = None;
        let value = ext.extend_at(frame, x, |y| match interpolate(mesh, &locator, u, y) {
            Some(val) => val,
            None => {
                missing = Some(y);
                [0.0; 2]
            }
        });
        if let Some(y) = missing {
            return Err(FractureError::InvalidGeometry(format!(
                "reflected sample ({}, {}) for vertex {v} lies outside the mesh",
                y[0], y[1]
            )));
        }
        out.set(v, value);
    }
    Ok(out)
}

/// Finite-difference strain norms of a field and of its extension on a
/// uniform grid: `R = (-half_width, half_width) x (0, depth)` and its mirror
/// image below `y = 0`. Returns `(||e(phi)||_R, ||e(ext)||_{R u R-})`.
pub fn strain_norms_fd(
    ext: &NitscheExtension,
    phi: &dyn Fn(Point) -> [f64; 2],
    half_width: f64,
    depth: f64,
    cells: usize,
) -> (f64, f64) {
    let frame = Frame::horizontal(0.0, true);
    let field = |x: Point| ext.extend_at(&frame, x, phi);
    let hx = 2.0 * half_width / cells as f64;
    let hy = depth / cells as f64;
    let d = 1e-3 * hx.min(hy);
    let strain_sq = |f: &dyn Fn(Point) -> [f64; 2], x: Point| {
        let px = f([x[0] + d, x[1]]);
        let mx = f([x[0] - d, x[1]]);
        let py = f([x[0], x[1] + d]);
        let my = f([x[0], x[1] - d]);
        let e11 = (px[0] - mx[0]) / (2.0 * d);
        let e22 = (py[1] - my[1]) / (2.0 * d);
        let e12 = 0.5 * ((py[0] - my[0]) + (px[1] - mx[1])) / (2.0 * d);
        e11 * e11 + e22 * e22 + 2.0 * e12 * e12
    };
    let (mut inner, mut outer) = (0.0, 0.0);
    for i in 0..cells {
        for j in 0..cells {
            let x = -half_width + (i as f64 + 0.5) * hx;
            let y = (j as f64 + 0.5) * hy;
            let a = strain_sq(phi, [x, y]);
            inner += a;
            outer += a + strain_sq(&field, [x, -y]);
        }
    }
    ((inner * hx * hy).sqrt(), (outer * hx * hy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_rectangle_mesh;

    #[test]
    fn coefficients_for_defaults() {
        let ext = NitscheExtension::default();
        assert_eq!(ext.p(), 6.0);
        assert!(NitscheExtension::new(0.5, 0.5).is_err());
        assert!(NitscheExtension::new(0.5, 1.0).is_err());
        assert!(NitscheExtension::new(0.0, 0.5).is_err());
    }

    #[test]
    fn constants_and_rotations_are_reproduced() {
        let ext = NitscheExtension::default();
        for frame in [
            Frame::horizontal(0.2, true),
            Frame::horizontal(0.2, false),
            Frame::vertical(-0.3, true),
            Frame::vertical(0.4, false),
        ] {
            for &x in &[[0.1, -0.7], [0.9, 0.05], [-0.4, 0.6], [0.5, 1.3]] {
                let c = ext.extend_at(&frame, x, |_| [1.5, -2.0]);
                assert!((c[0] - 1.5).abs() < 1e-12 && (c[1] + 2.0).abs() < 1e-12);
                let rot = |y: Point| [-(y[1] - 0.3), y[0] + 0.1];
                let r = ext.extend_at(&frame, x, rot);
                let expected = rot(x);
                assert!((r[0] - expected[0]).abs() < 1e-12 && (r[1] - expected[1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn trace_is_continuous() {
        let ext = NitscheExtension::new(0.2, 0.7).unwrap();
        let frame = Frame::horizontal(0.0, true);
        let phi = |x: Point| [x[0].sin() + x[1] * x[1], (2.0 * x[0]).cos() * (1.0 + x[1])];
        for &s in &[-0.5, 0.0, 0.3] {
            let below = ext.extend_at(&frame, [s, -1e-9], phi);
            let on = phi([s, 0.0]);
            assert!((below[0] - on[0]).abs() < 1e-7 && (below[1] - on[1]).abs() < 1e-7);
        }
    }

    #[test]
    fn mesh_extension_of_rigid_field_is_exact() {
        let mesh = build_rectangle_mesh(1.0, 1.0, 0.125, 8, 8).unwrap();
        let rot = |x: Point| [-0.3 * x[1] + 0.1, 0.3 * x[0]];
        let u = DisplacementField::from_fn(&mesh.vertices, rot);
        let frame = Frame::vertical(0.5, true);
        let targets: Vec<bool> = mesh
            .vertices
            .iter()
            .map(|x| x[0] > 0.26 && x[0] < 0.5)
            .collect();
        let out =
            nitsche_extend(&mesh, &u, &frame, &targets, &NitscheExtension::default()).unwrap();
        for v in 0..mesh.num_vertices() {
            let (a, b) = (out.at(v), u.at(v));
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }
}
