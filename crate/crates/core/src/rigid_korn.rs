//! Infinitesimal rigid motions, crack-induced partitions of the mesh and
//! piecewise Korn diagnostics.

use std::collections::BTreeMap;

use crate::elasticity::{element_strain, DisplacementField};
use crate::error::{FractureError, Result};
use crate::mesh::{Mesh, Point, Region};
use crate::phasefield::DamageField;

/// `a(x) = A x + b` with `A = ((0, -omega), (omega, 0))`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct InfRigidMotion {
    pub omega: f64,
    pub b: [f64; 2],
}

impl InfRigidMotion {
    pub const ZERO: InfRigidMotion = InfRigidMotion {
        omega: 0.0,
        b: [0.0, 0.0],
    };

    pub fn new(omega: f64, b: [f64; 2]) -> Self {
        InfRigidMotion { omega, b }
    }

    pub fn eval(&self, x: Point) -> [f64; 2] {
        [
            -self.omega * x[1] + self.b[0],
            self.omega * x[0] + self.b[1],
        ]
    }

    pub fn matrix(&self) -> [[f64; 2]; 2] {
        [[0.0, -self.omega], [self.omega, 0.0]]
    }

    pub fn sub(&self, other: &InfRigidMotion) -> InfRigidMotion {
        InfRigidMotion::new(
            self.omega - other.omega,
            [self.b[0] - other.b[0], self.b[1] - other.b[1]],
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidFit {
    pub motion: InfRigidMotion,
    /// All points coincide, so only the translation was fitted.
    pub degenerate: bool,
    /// `sum_i w_i |u_i - a(x_i)|^2`.
    pub residual: f64,
}

/// Weighted least-squares rigid motion. The problem decouples after
/// centering at the weighted centroid, so it is solved in closed form.
pub fn fit_rigid_motion(
    points: &[Point],
    displacements: &[[f64; 2]],
    weights: &[f64],
) -> Result<RigidFit> {
    if displacements.len() != points.len() || weights.len() != points.len() {
        return Err(FractureError::SizeMismatch {
            what: "rigid fit samples",
            expected: points.len(),
            found: displacements.len().min(weights.len()),
        });
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(FractureError::InvalidParameters(
            "fit weights must be nonnegative".into(),
        ));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(FractureError::InvalidParameters(
            "fit needs positive total weight".into(),
        ));
    }
    let mut xc = [0.0; 2];
    let mut uc = [0.0; 2];
    for ((x, u), w) in points.iter().zip(displacements).zip(weights) {
        for d in 0..2 {
            xc[d] += w * x[d];
            uc[d] += w * u[d];
        }
    }
    for d in 0..2 {
        xc[d] /= total;
        uc[d] /= total;
    }
    let (mut moment, mut cross, mut extent) = (0.0, 0.0, 0.0_f64);
    for ((x, u), w) in points.iter().zip(displacements).zip(weights) {
        let (dx, dy) = (x[0] - xc[0], x[1] - xc[1]);
        let (du, dv) = (u[0] - uc[0], u[1] - uc[1]);
        moment += w * (dx * dx + dy * dy);
        cross += w * (dx * dv - dy * du);
        if *w > 0.0 {
            extent = extent.max(dx.abs()).max(dy.abs());
        }
    }
    let scale = xc[0]
        .abs()
        .max(xc[1].abs())
        .max(extent)
        .max(f64::MIN_POSITIVE);
    let degenerate = extent <= 1e-12 * scale;
    let omega = if degenerate { 0.0 } else { cross / moment };
    let motion = InfRigidMotion::new(omega, [uc[0] + omega * xc[1], uc[1] - omega * xc[0]]);
    let residual = points
        .iter()
        .zip(displacements)
        .zip(weights)
        .map(|((x, u), w)| {
            let a = motion.eval(*x);
            w * ((u[0] - a[0]).powi(2) + (u[1] - a[1]).powi(2))
        })
        .sum();
    Ok(RigidFit {
        motion,
        degenerate,
        residual,
    })
}

/// `sqrt(area(E)) |A| / sup_E |A x + b|` with `|A| = |omega|` the operator
/// norm. The area is the sum of the sample weights and the supremum is
/// taken over the sample points.
pub fn lemma_a_ratio(samples: &[(Point, f64)], motion: &InfRigidMotion) -> f64 {
    if motion.omega == 0.0 || samples.is_empty() {
        return 0.0;
    }
    let area: f64 = samples.iter().map(|(_, a)| a).sum();
    let sup = samples
        .iter()
        .map(|(x, _)| {
            let a = motion.eval(*x);
            a[0].hypot(a[1])
        })
        .fold(0.0, f64::max);
    if sup == 0.0 {
        return f64::INFINITY;
    }
    area.sqrt() * motion.omega.abs() / sup
}

/// Upper bound for [`lemma_a_ratio`] when `E` is a union of triangles
/// sampled at their vertices: `E` lies in the disk around the rotation
/// center reaching the farthest vertex, so `area <= pi sup^2 / omega^2`.
pub const LEMMA_A_BOUND: f64 = 1.772_453_850_905_516;

/// Label of the broken (exceptional) set.
pub const BROKEN: usize = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    /// Per-triangle component id; `0` is the broken set.
    pub labels: Vec<usize>,
    /// Area per component, including the (possibly empty) broken set.
    pub component_areas: Vec<f64>,
    /// Total length of edges between triangles with different labels.
    pub interface_length: f64,
    pub padding_touch: Vec<bool>,
}

impl Partition {
    /// Components other than the broken set.
    pub fn num_components(&self) -> usize {
        self.component_areas.len() - 1
    }

    /// Canonical partition from arbitrary labels, where `broken[t]` sends
    /// triangle `t` to the broken set and the other triangles are grouped by
    /// `group[t]`. Components are ordered by decreasing area, ties broken by
    /// the lexicographically smallest vertex they contain, so the result
    /// does not depend on the triangle order.
    pub fn from_groups(mesh: &Mesh, broken: &[bool], group: &[usize]) -> Partition {
        let total = mesh.total_area();
        let mut groups: BTreeMap<usize, (f64, Point, bool)> = BTreeMap::new();
        for t in 0..mesh.num_triangles() {
            if broken[t] {
                continue;
            }
            let entry =
                groups
                    .entry(group[t])
                    .or_insert((0.0, [f64::INFINITY, f64::INFINITY], false));
            entry.0 += mesh.area(t);
            for &v in &mesh.triangles[t] {
                let x = mesh.vertices[v];
                if (x[0], x[1]) < (entry.1[0], entry.1[1]) {
                    entry.1 = x;
                }
            }
            entry.2 |= mesh.regions[t] == Region::Padding;
        }
        let quantize = |a: f64| (a / total * 1e9).round() as i64;
        let mut order: Vec<(usize, (f64, Point, bool))> = groups.into_iter().collect();
        order.sort_by(|(_, a), (_, b)| {
            quantize(b.0)
                .cmp(&quantize(a.0))
                .then(a.1[0].total_cmp(&b.1[0]))
                .then(a.1[1].total_cmp(&b.1[1]))
        });
        let relabel: BTreeMap<usize, usize> = order
            .iter()
            .enumerate()
            .map(|(k, (g, _))| (*g, k + 1))
            .collect();
        let labels: Vec<usize> = (0..mesh.num_triangles())
            .map(|t| {
                if broken[t] {
                    BROKEN
                } else {
                    relabel[&group[t]]
                }
            })
            .collect();
        let mut component_areas = vec![0.0; order.len() + 1];
        for (t, &l) in labels.iter().enumerate() {
            component_areas[l] += mesh.area(t);
        }
        let mut padding_touch = vec![false];
        padding_touch.extend(order.iter().map(|(_, (_, _, touch))| *touch));
        let interface_length = interface_length(mesh, &labels, |a, b| a != b);
        Partition {
            labels,
            component_areas,
            interface_length,
            padding_touch,
        }
    }

    /// Triangles of component `j`.
    pub fn members(&self, j: usize) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&t| self.labels[t] == j)
            .collect()
    }
}

fn interface_length(mesh: &Mesh, labels: &[usize], counts: impl Fn(usize, usize) -> bool) -> f64 {
    mesh.edge_triangles()
        .iter()
        .filter(|(_, ts)| {
            ts.len() == 2 && labels[ts[0]] != labels[ts[1]] && counts(labels[ts[0]], labels[ts[1]])
        })
        .map(|(e, _)| mesh.edge_length(*e))
        .sum()
}

#[derive(Debug, Clone)]
pub struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    pub fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

/// Triangles whose mean vertex damage reaches `threshold` form the broken
/// set; the rest split into edge-connected components.
pub fn crack_partition(mesh: &Mesh, alpha: &DamageField, threshold: f64) -> Result<Partition> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(FractureError::InvalidParameters(format!(
            "threshold {threshold} not in (0, 1)"
        )));
    }
    if alpha.len() != mesh.num_vertices() {
        return Err(FractureError::SizeMismatch {
            what: "damage field",
            expected: mesh.num_vertices(),
            found: alpha.len(),
        });
    }
    let broken: Vec<bool> = mesh
        .triangles
        .iter()
        .map(|&tri| alpha.element_mean(tri) >= threshold)
        .collect();
    let mut sets = DisjointSet::new(mesh.num_triangles());
    for (_, ts) in mesh.edge_triangles() {
        if ts.len() == 2 && !broken[ts[0]] && !broken[ts[1]] {
            sets.union(ts[0], ts[1]);
        }
    }
    let group: Vec<usize> = (0..mesh.num_triangles()).map(|t| sets.find(t)).collect();
    Ok(Partition::from_groups(mesh, &broken, &group))
}

/// Per-component least-squares fits; every triangle of the component
/// contributes its three vertices with weight `area / 3`. Entry `0` (the
/// broken set) is the zero motion.
pub fn fit_component_motions(
    mesh: &Mesh,
    u: &DisplacementField,
    partition: &Partition,
) -> Result<Vec<RigidFit>> {
    let mut fits = vec![RigidFit {
        motion: InfRigidMotion::ZERO,
        degenerate: false,
        residual: 0.0,
    }];
    for j in 1..=partition.num_components() {
        let (mut pts, mut disp, mut w) = (Vec::new(), Vec::new(), Vec::new());
        for t in partition.members(j) {
            let a = mesh.area(t) / 3.0;
            for &v in &mesh.triangles[t] {
                pts.push(mesh.vertices[v]);
                disp.push(u.at(v));
                w.push(a);
            }
        }
        fits.push(fit_rigid_motion(&pts, &disp, &w)?);
    }
    Ok(fits)
}

/// Merge components whose motions agree within `closeness` in the sup norm
/// over the vertices of the smaller component, transitively.
pub fn merge_components(
    mesh: &Mesh,
    partition: &Partition,
    motions: &[InfRigidMotion],
    closeness: f64,
) -> Result<Partition> {
    let n = partition.num_components();
    if motions.len() != n + 1 {
        return Err(FractureError::SizeMismatch {
            what: "component motions",
            expected: n + 1,
            found: motions.len(),
        });
    }
    let mut vertices: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
    for (t, &l) in partition.labels.iter().enumerate() {
        vertices[l].extend_from_slice(&mesh.triangles[t]);
    }
    for v in &mut vertices {
        v.sort_unstable();
        v.dedup();
    }
    let mut sets = DisjointSet::new(n + 1);
    for i in 1..=n {
        for j in (i + 1)..=n {
            // Components are sorted by decreasing area, so j is the smaller.
            let diff = motions[i].sub(&motions[j]);
            let sup = vertices[j]
                .iter()
                .map(|&v| {
                    let d = diff.eval(mesh.vertices[v]);
                    d[0].hypot(d[1])
                })
                .fold(0.0, f64::max);
            if sup <= closeness {
                sets.union(i, j);
            }
        }
    }
    let broken: Vec<bool> = partition.labels.iter().map(|&l| l == BROKEN).collect();
    let group: Vec<usize> = partition.labels.iter().map(|&l| sets.find(l)).collect();
    Ok(Partition::from_groups(mesh, &broken, &group))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KornReport {
    pub motions: Vec<InfRigidMotion>,
    pub num_components: usize,
    /// `max |v|` over unbroken (triangle, vertex) pairs.
    pub sup_norm_v: f64,
    /// `(p, ||grad v||_p)` for `p = 1, 1.5` and the requested exponent.
    pub grad_norms: Vec<(f64, f64)>,
    /// `||e(u)||_2` over unbroken triangles.
    pub e_norm: f64,
    /// Interface length between distinct unbroken components.
    pub added_boundary: f64,
    pub sup_ratio: f64,
    pub grad_ratios: Vec<(f64, f64)>,
}

fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Norms of `v = u - sum_j a_j chi_{P_j}` on the unbroken components. `v`
/// is evaluated per (triangle, vertex), so vertices on component
/// interfaces carry one value per side.
pub fn korn_diagnostic(
    mesh: &Mesh,
    u: &DisplacementField,
    partition: &Partition,
    motions: &[InfRigidMotion],
    p: f64,
) -> Result<KornReport> {
    if !(1.0..2.0).contains(&p) {
        return Err(FractureError::ExponentOutOfRange(p));
    }
    if motions.len() != partition.num_components() + 1 {
        return Err(FractureError::SizeMismatch {
            what: "component motions",
            expected: partition.num_components() + 1,
            found: motions.len(),
        });
    }
    if u.num_vertices() != mesh.num_vertices() {
        return Err(FractureError::SizeMismatch {
            what: "displacement field",
            expected: mesh.num_vertices(),
            found: u.num_vertices(),
        });
    }
    let mut exponents = vec![1.0, 1.5];
    if !exponents.contains(&p) {
        exponents.push(p);
    }
    let mut sup: f64 = 0.0;
    let mut sums = vec![0.0; exponents.len()];
    let mut e_sq = 0.0;
    for (t, &l) in partition.labels.iter().enumerate() {
        if l == BROKEN {
            continue;
        }
        let geom = mesh.element_geometry(t)?;
        let tri = mesh.triangles[t];
        let a = motions[l];
        let mut grad = [[0.0; 2]; 2];
        for (k, &v) in tri.iter().enumerate() {
            let x = mesh.vertices[v];
            let av = a.eval(x);
            let uv = u.at(v);
            let vv = [uv[0] - av[0], uv[1] - av[1]];
            sup = sup.max(vv[0].hypot(vv[1]));
            for i in 0..2 {
                for j in 0..2 {
                    grad[i][j] += vv[i] * geom.grads[k][j];
                }
            }
        }
        let frob =
            (grad[0][0].powi(2) + grad[0][1].powi(2) + grad[1][0].powi(2) + grad[1][1].powi(2))
                .sqrt();
        for (s, &q) in sums.iter_mut().zip(&exponents) {
            *s += geom.area * frob.powf(q);
        }
        e_sq += geom.area * element_strain(&geom, tri, u).norm_sq();
    }
    let e_norm = e_sq.sqrt();
    let grad_norms: Vec<(f64, f64)> = exponents
        .iter()
        .zip(&sums)
        .map(|(&q, &s)| (q, s.powf(1.0 / q)))
        .collect();
    let grad_ratios = grad_norms
        .iter()
        .map(|&(q, g)| (q, ratio(g, e_norm)))
        .collect();
    let added_boundary =
        interface_length(mesh, &partition.labels, |a, b| a != BROKEN && b != BROKEN);
    Ok(KornReport {
        motions: motions.to_vec(),
        num_components: partition.num_components(),
        sup_norm_v: sup,
        grad_norms,
        e_norm,
        added_boundary,
        sup_ratio: ratio(sup, e_norm),
        grad_ratios,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_rectangle_mesh;

    #[test]
    fn exact_recovery_on_rigid_input() {
        let a = InfRigidMotion::new(0.3, [-1.0, 2.0]);
        let pts = [[0.0, 0.0], [1.0, 0.5], [-0.5, 2.0], [3.0, -1.0]];
        let disp: Vec<[f64; 2]> = pts.iter().map(|&x| a.eval(x)).collect();
        let fit = fit_rigid_motion(&pts, &disp, &[1.0, 2.0, 0.5, 1.0]).unwrap();
        assert!((fit.motion.omega - 0.3).abs() < 1e-12);
        assert!((fit.motion.b[0] + 1.0).abs() < 1e-12 && (fit.motion.b[1] - 2.0).abs() < 1e-12);
        assert!(fit.residual < 1e-24);
        assert!(!fit.degenerate);
    }

    #[test]
    fn symmetric_stretch_has_no_rigid_part() {
        let pts = [[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]];
        let disp: Vec<[f64; 2]> = pts.iter().map(|x| [x[0], -x[1]]).collect();
        let fit = fit_rigid_motion(&pts, &disp, &[1.0; 4]).unwrap();
        assert_eq!(fit.motion, InfRigidMotion::ZERO);
    }

    #[test]
    fn coincident_points_give_translation() {
        let pts = [[1.0, 1.0]; 3];
        let disp = [[1.0, 0.0], [2.0, 0.0], [3.0, 3.0]];
        let fit = fit_rigid_motion(&pts, &disp, &[1.0; 3]).unwrap();
        assert!(fit.degenerate);
        assert_eq!(fit.motion, InfRigidMotion::new(0.0, [2.0, 1.0]));
        assert!(fit_rigid_motion(&pts, &disp, &[0.0; 3]).is_err());
    }

    #[test]
    fn lemma_a_ratio_on_unit_square() {
        let square = [
            ([0.0, 0.0], 0.25),
            ([1.0, 0.0], 0.25),
            ([1.0, 1.0], 0.25),
            ([0.0, 1.0], 0.25),
        ];
        let r = lemma_a_ratio(&square, &InfRigidMotion::new(1.0, [0.0, 0.0]));
        assert!((r - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(
            lemma_a_ratio(&square, &InfRigidMotion::new(0.0, [1.0, 0.0])),
            0.0
        );
        let far: Vec<(Point, f64)> = square
            .iter()
            .map(|(x, a)| ([x[0] + 1e3, x[1]], *a))
            .collect();
        assert!(lemma_a_ratio(&far, &InfRigidMotion::new(1.0, [0.0, 0.0])) < 1e-3);
        assert!((LEMMA_A_BOUND - std::f64::consts::PI.sqrt()).abs() < 1e-15);
    }

    fn band_damage(mesh: &Mesh, x0: f64, x1: f64) -> DamageField {
        DamageField {
            values: mesh
                .vertices
                .iter()
                .map(|x| {
                    if x[0] >= x0 - 1e-12 && x[0] <= x1 + 1e-12 {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect(),
        }
    }

    #[test]
    fn vertical_band_splits_in_two() {
        let mesh = build_rectangle_mesh(1.0, 1.0, 0.125, 8, 8).unwrap();
        let alpha = band_damage(&mesh, 0.5, 0.625);
        let part = crack_partition(&mesh, &alpha, 0.9).unwrap();
        assert_eq!(part.num_components(), 2);
        assert!(part.padding_touch[1] && part.padding_touch[2]);
        assert!((part.component_areas.iter().sum::<f64>() - mesh.total_area()).abs() < 1e-12);
        // Both sides of the band, full height.
        assert!((part.interface_length - 2.0).abs() < 1e-12);

        let whole = crack_partition(&mesh, &DamageField::zeros(mesh.num_vertices()), 0.9).unwrap();
        assert_eq!(whole.num_components(), 1);
        assert_eq!(whole.interface_length, 0.0);
    }

    #[test]
    fn chained_motions_merge_transitively() {
        let mesh = build_rectangle_mesh(1.0, 1.0, 0.125, 10, 2).unwrap();
        // Two bands cut the body into three blocks; only the outer two touch the padding.
        let mut alpha = band_damage(&mesh, 0.3, 0.4);
        let other = band_damage(&mesh, 0.6, 0.7);
        for (a, b) in alpha.values.iter_mut().zip(&other.values) {
            *a = a.max(*b);
        }
        let part = crack_partition(&mesh, &alpha, 0.5).unwrap();
        assert_eq!(part.num_components(), 3);
        let middle = (1..=3).find(|&j| !part.padding_touch[j]).unwrap();
        let mut motions = vec![InfRigidMotion::ZERO; 4];
        motions[middle] = InfRigidMotion::new(0.0, [0.05, 0.0]);
        let merged = merge_components(&mesh, &part, &motions, 0.1).unwrap();
        assert_eq!(merged.num_components(), 1);
        assert!(merged.interface_length <= part.interface_length);
        let kept = merge_components(&mesh, &part, &motions, 0.01).unwrap();
        assert_eq!(kept.num_components(), 2);
    }

    #[test]
    fn piecewise_rigid_field_is_removed() {
        let mesh = build_rectangle_mesh(1.0, 1.0, 0.125, 8, 8).unwrap();
        let alpha = band_damage(&mesh, 0.5, 0.625);
        let part = crack_partition(&mesh, &alpha, 0.9).unwrap();
        let left = InfRigidMotion::new(0.7, [1.0, -2.0]);
        let right = InfRigidMotion::new(-0.4, [0.0, 3.0]);
        let u = DisplacementField::from_fn(&mesh.vertices, |x| {
            if x[0] < 0.55 {
                left.eval(x)
            } else {
                right.eval(x)
            }
        });
        let fits = fit_component_motions(&mesh, &u, &part).unwrap();
        let motions: Vec<InfRigidMotion> = fits.iter().map(|f| f.motion).collect();
        let report = korn_diagnostic(&mesh, &u, &part, &motions, 1.0).unwrap();
        assert!(report.sup_norm_v < 1e-10);
        assert!(u.sup_norm() > 1.0);
        assert_eq!(report.added_boundary, 0.0);
        assert!(matches!(
            korn_diagnostic(&mesh, &u, &part, &motions, 2.0),
            Err(FractureError::ExponentOutOfRange(_))
        ));
    }
}
