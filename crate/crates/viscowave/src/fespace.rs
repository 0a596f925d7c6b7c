//! Lagrange P1/P2 finite element spaces on triangles.
//!
//! Reference element, symmetric Gauss quadrature on the reference triangle,
//! global dof maps with Dirichlet constraints, and pointwise evaluation of
//! finite element functions.
//!
//! Global dof numbering: mesh vertices first, then (for P2) one dof per mesh
//! edge at the edge midpoint. Edges are numbered by lexicographic order of
//! their sorted endpoint pair, so the numbering does not depend on the
//! triangle ordering.

use crate::mesh::{BoundaryTag, Mesh};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FeError {
    #[error("unsupported polynomial degree {0} (only 1 and 2 are implemented)")]
    UnsupportedDegree(usize),
    #[error("no quadrature rule of exactness degree {0} (implemented: 1..=10)")]
    QuadratureDegree(usize),
    #[error("point ({0}, {1}) lies outside the mesh")]
    PointOutsideMesh(f64, f64),
}

pub const MAX_LOCAL_DOFS: usize = 6;

/// Lagrange reference element on the unit triangle `{xi, eta >= 0, xi + eta <= 1}`.
///
/// Local node order: the three vertices `(0,0), (1,0), (0,1)`, then for P2
/// the edge midpoints `(1/2,0), (1/2,1/2), (0,1/2)`.
#[derive(Debug, Clone, Copy)]
pub struct ReferenceElement {
    pub degree: usize,
}

impl ReferenceElement {
    pub fn new(degree: usize) -> Result<Self, FeError> {
        if degree == 1 || degree == 2 {
            Ok(Self { degree })
        } else {
            Err(FeError::UnsupportedDegree(degree))
        }
    }

    pub fn local_dofs(&self) -> usize {
        if self.degree == 1 {
            3
        } else {
            6
        }
    }

    pub fn local_nodes(&self) -> Vec<[f64; 2]> {
        let mut nodes = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        if self.degree == 2 {
            nodes.extend([[0.5, 0.0], [0.5, 0.5], [0.0, 0.5]]);
        }
        nodes
    }

    /// Shape function values at a reference point.
    pub fn shape(&self, xi: f64, eta: f64) -> [f64; MAX_LOCAL_DOFS] {
        let l0 = 1.0 - xi - eta;
        let (l1, l2) = (xi, eta);
        let mut n = [0.0; MAX_LOCAL_DOFS];
        if self.degree == 1 {
            n[0] = l0;
            n[1] = l1;
            n[2] = l2;
        } else {
            n[0] = l0 * (2.0 * l0 - 1.0);
            n[1] = l1 * (2.0 * l1 - 1.0);
            n[2] = l2 * (2.0 * l2 - 1.0);
            n[3] = 4.0 * l0 * l1;
            n[4] = 4.0 * l1 * l2;
            n[5] = 4.0 * l2 * l0;
        }
        n
    }

    /// Shape function gradients with respect to reference coordinates.
    pub fn grad(&self, xi: f64, eta: f64) -> [[f64; 2]; MAX_LOCAL_DOFS] {
        let mut g = [[0.0; 2]; MAX_LOCAL_DOFS];
        if self.degree == 1 {
            g[0] = [-1.0, -1.0];
            g[1] = [1.0, 0.0];
            g[2] = [0.0, 1.0];
        } else {
            let l0 = 1.0 - xi - eta;
            let (l1, l2) = (xi, eta);
            let d0 = [-1.0, -1.0];
            let d1 = [1.0, 0.0];
            let d2 = [0.0, 1.0];
            for k in 0..2 {
                g[0][k] = (4.0 * l0 - 1.0) * d0[k];
                g[1][k] = (4.0 * l1 - 1.0) * d1[k];
                g[2][k] = (4.0 * l2 - 1.0) * d2[k];
                g[3][k] = 4.0 * (l1 * d0[k] + l0 * d1[k]);
                g[4][k] = 4.0 * (l2 * d1[k] + l1 * d2[k]);
                g[5][k] = 4.0 * (l0 * d2[k] + l2 * d0[k]);
            }
        }
        g
    }

    /// Restriction of the shape functions to an edge, parametrized by
    /// `s in [0,1]` from the first endpoint to the second. Returns values for
    /// the dofs supported on the edge: the two endpoints, then (P2) the
    /// midpoint dof.
    pub fn edge_shape(&self, s: f64) -> [f64; 3] {
        if self.degree == 1 {
            [1.0 - s, s, 0.0]
        } else {
            [(1.0 - s) * (1.0 - 2.0 * s), s * (2.0 * s - 1.0), 4.0 * s * (1.0 - s)]
        }
    }
}

/// Quadrature rule on the reference triangle. Weights sum to the reference
/// area `1/2`; points are stored as barycentric coordinates.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    /// Barycentric coordinates `(l0, l1, l2)` of each point.
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    /// Total polynomial degree the rule integrates exactly.
    pub exactness: usize,
}

impl QuadratureRule {
    /// Reference coordinates `(xi, eta) = (l1, l2)` of point `k`.
    pub fn xy(&self, k: usize) -> (f64, f64) {
        (self.points[k][1], self.points[k][2])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

struct RuleBuilder {
    points: Vec<[f64; 3]>,
    weights: Vec<f64>,
}

impl RuleBuilder {
    fn new() -> Self {
        Self {
            points: Vec::new(),
            weights: Vec::new(),
        }
    }
    fn centroid(&mut self, w: f64) -> &mut Self {
        self.points.push([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
        self.weights.push(w);
        self
    }
    // Orbit of (a, a, 1-2a) under coordinate permutations: 3 points.
    fn s21(&mut self, w: f64, a: f64) -> &mut Self {
        let c = 1.0 - 2.0 * a;
        for p in [[c, a, a], [a, c, a], [a, a, c]] {
            self.points.push(p);
            self.weights.push(w);
        }
        self
    }
    // Full orbit of (a, b, 1-a-b): 6 points.
    fn s111(&mut self, w: f64, a: f64, b: f64) -> &mut Self {
        let c = 1.0 - a - b;
        for p in [[a, b, c], [a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]] {
            self.points.push(p);
            self.weights.push(w);
        }
        self
    }
    fn finish(&mut self, exactness: usize) -> QuadratureRule {
        QuadratureRule {
            points: std::mem::take(&mut self.points),
            weights: std::mem::take(&mut self.weights),
            exactness,
        }
    }
}

/// Symmetric Gauss rule on the reference triangle, exact for polynomials of
/// the requested total degree. Available up to degree 10; requests of degree
/// 3, 7 and 9 round up to the next rule with positive weights.
///
/// Orbit constants carry more digits than f64 resolves so the nearest
/// float is taken.
#[allow(clippy::excessive_precision)]
pub fn quadrature(exactness: usize) -> Result<QuadratureRule, FeError> {
    let mut b = RuleBuilder::new();
    let rule = match exactness {
        1 => b.centroid(0.5).finish(1),
        2 => b.s21(1.0 / 6.0, 1.0 / 6.0).finish(2),
        3 | 4 => b
            .s21(0.111_690_794_839_005_73, 0.445_948_490_915_964_89)
            .s21(0.054_975_871_827_660_934, 0.091_576_213_509_770_743)
            .finish(4),
        5 => {
            let s15 = 15.0f64.sqrt();
            b.centroid(9.0 / 80.0)
                .s21((155.0 + s15) / 2400.0, (6.0 + s15) / 21.0)
                .s21((155.0 - s15) / 2400.0, (6.0 - s15) / 21.0)
                .finish(5)
        }
        6 => b
            .s21(0.025_422_453_185_103_408, 0.063_089_014_491_502_228)
            .s21(0.058_393_137_863_189_683, 0.249_286_745_170_910_42)
            .s111(
                0.041_425_537_809_186_788,
                0.053_145_049_844_816_947,
                0.310_352_451_033_784_41,
            )
            .finish(6),
        7 | 8 => b
            .centroid(0.072_157_803_838_893_584)
            .s21(0.047_545_817_133_642_312, 0.459_292_588_292_723_16)
            .s21(0.051_608_685_267_359_125, 0.170_569_307_751_760_21)
            .s21(0.016_229_248_811_599_04, 0.050_547_228_317_030_975)
            .s111(
                0.013_615_157_087_217_497,
                0.263_112_829_634_638_11,
                0.728_492_392_955_404_28,
            )
            .finish(8),
        9 | 10 => b
            .centroid(0.045_408_995_191_376_79)
            .s21(0.018_362_978_878_233_352, 0.485_577_633_383_657_38)
            .s21(0.022_660_529_717_763_967, 0.109_481_575_485_037_05)
            .s111(
                0.036_378_958_422_710_054,
                0.141_707_219_414_879_95,
                0.307_939_838_764_120_95,
            )
            .s111(
                0.014_163_621_265_528_742,
                0.025_003_534_762_686_386,
                0.246_672_560_639_902_69,
            )
            .s111(
                0.004_710_833_481_866_411_7,
                0.009_540_815_400_299_457_6,
                0.066_803_251_012_200_266,
            )
            .finish(10),
        d => return Err(FeError::QuadratureDegree(d)),
    };
    Ok(rule)
}

/// Three-point Gauss-Legendre rule on `[0,1]` (exact to degree 5), used for
/// Neumann boundary integrals.
pub fn edge_quadrature() -> (Vec<f64>, Vec<f64>) {
    let x = (3.0f64 / 5.0).sqrt();
    (
        vec![(1.0 - x) / 2.0, 0.5, (1.0 + x) / 2.0],
        vec![5.0 / 18.0, 4.0 / 9.0, 5.0 / 18.0],
    )
}

/// Lagrange finite element space on a classified mesh.
#[derive(Debug, Clone)]
pub struct FunctionSpace {
    mesh: Mesh,
    element: ReferenceElement,
    dof_coords: Vec<[f64; 2]>,
    /// Flattened element-to-dof map, `local_dofs` entries per triangle.
    elem_dofs: Vec<usize>,
    /// For P2: global dof of the midpoint of each mesh edge.
    edge_dof: HashMap<(usize, usize), usize>,
    dirichlet: Vec<bool>,
    free_to_global: Vec<usize>,
    /// `usize::MAX` marks a constrained dof.
    global_to_free: Vec<usize>,
}

/// Build the P1 or P2 space on the mesh. Dofs on Dirichlet-tagged boundary
/// edges (endpoints and midpoints) are constrained.
pub fn build_space(mesh: Mesh, degree: usize) -> Result<FunctionSpace, FeError> {
    let element = ReferenceElement::new(degree)?;
    let n_nodes = mesh.nodes.len();

    // Edge enumeration for P2: lexicographic order of sorted endpoint pairs,
    // so dof numbers are independent of the triangle ordering.
    let mut edge_dof = HashMap::new();
    let mut dof_coords: Vec<[f64; 2]> = mesh.nodes.iter().map(|p| [p.x, p.y]).collect();
    if degree == 2 {
        let mut keys: Vec<(usize, usize)> = Vec::new();
        for tri in &mesh.triangles {
            for e in 0..3 {
                let a = tri.vertices[e];
                let b = tri.vertices[(e + 1) % 3];
                keys.push((a.min(b), a.max(b)));
            }
        }
        keys.sort_unstable();
        keys.dedup();
        for key in keys {
            let id = n_nodes + edge_dof.len();
            edge_dof.insert(key, id);
            let (a, b) = (mesh.nodes[key.0], mesh.nodes[key.1]);
            dof_coords.push([(a.x + b.x) / 2.0, (a.y + b.y) / 2.0]);
        }
    }

    let local = element.local_dofs();
    let mut elem_dofs = Vec::with_capacity(mesh.triangles.len() * local);
    for tri in &mesh.triangles {
        let v = tri.vertices;
        elem_dofs.extend_from_slice(&v);
        if degree == 2 {
            for (a, b) in [(v[0], v[1]), (v[1], v[2]), (v[2], v[0])] {
                elem_dofs.push(edge_dof[&(a.min(b), a.max(b))]);
            }
        }
    }

    let mut dirichlet = vec![false; dof_coords.len()];
    for edge in &mesh.boundary_edges {
        if edge.tag == BoundaryTag::Dirichlet {
            dirichlet[edge.nodes[0]] = true;
            dirichlet[edge.nodes[1]] = true;
            if degree == 2 {
                let key = (
                    edge.nodes[0].min(edge.nodes[1]),
                    edge.nodes[0].max(edge.nodes[1]),
                );
                dirichlet[edge_dof[&key]] = true;
            }
        }
    }

    let mut free_to_global = Vec::new();
    let mut global_to_free = vec![usize::MAX; dof_coords.len()];
    for (g, &constrained) in dirichlet.iter().enumerate() {
        if !constrained {
            global_to_free[g] = free_to_global.len();
            free_to_global.push(g);
        }
    }

    Ok(FunctionSpace {
        mesh,
        element,
        dof_coords,
        elem_dofs,
        edge_dof,
        dirichlet,
        free_to_global,
        global_to_free,
    })
}

impl FunctionSpace {
    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn degree(&self) -> usize {
        self.element.degree
    }

    pub fn element(&self) -> &ReferenceElement {
        &self.element
    }

    pub fn num_dofs(&self) -> usize {
        self.dof_coords.len()
    }

    pub fn num_free_dofs(&self) -> usize {
        self.free_to_global.len()
    }

    pub fn num_constrained_dofs(&self) -> usize {
        self.num_dofs() - self.num_free_dofs()
    }

    pub fn dof_coords(&self, g: usize) -> [f64; 2] {
        self.dof_coords[g]
    }

    pub fn is_constrained(&self, g: usize) -> bool {
        self.dirichlet[g]
    }

    pub fn free_to_global(&self) -> &[usize] {
        &self.free_to_global
    }

    /// Free index of a global dof, `None` if constrained.
    pub fn global_to_free(&self, g: usize) -> Option<usize> {
        match self.global_to_free[g] {
            usize::MAX => None,
            k => Some(k),
        }
    }

    /// Global dofs of triangle `t`, vertex dofs first.
    pub fn elem_dofs(&self, t: usize) -> &[usize] {
        let local = self.element.local_dofs();
        &self.elem_dofs[t * local..(t + 1) * local]
    }

    /// Dofs supported on a boundary edge, matching
    /// [`ReferenceElement::edge_shape`] ordering.
    pub fn boundary_edge_dofs(&self, edge: &crate::mesh::BoundaryEdge) -> Vec<usize> {
        let mut dofs = vec![edge.nodes[0], edge.nodes[1]];
        if self.element.degree == 2 {
            let key = (
                edge.nodes[0].min(edge.nodes[1]),
                edge.nodes[0].max(edge.nodes[1]),
            );
            dofs.push(self.edge_dof[&key]);
        }
        dofs
    }

    /// Interpolate a function by evaluating it at the dof coordinates.
    pub fn interpolate<F: Fn(f64, f64) -> f64>(&self, f: F) -> Vec<f64> {
        self.dof_coords.iter().map(|p| f(p[0], p[1])).collect()
    }

    /// Restrict a full dof vector to the free dofs.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.free_to_global.iter().map(|&g| full[g]).collect()
    }

    /// Expand a free dof vector to all dofs, zero at constrained dofs.
    pub fn expand(&self, free: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.num_dofs()];
        for (k, &g) in self.free_to_global.iter().enumerate() {
            full[g] = free[k];
        }
        full
    }

    /// Jacobian `[d(x,y)/d(xi,eta)]` of the affine map of triangle `t`.
    pub fn jacobian(&self, t: usize) -> [[f64; 2]; 2] {
        let [p0, p1, p2] = self.mesh.triangle_nodes(t);
        [[p1.x - p0.x, p2.x - p0.x], [p1.y - p0.y, p2.y - p0.y]]
    }

    /// Physical gradients of the shape functions of triangle `t` at a
    /// reference point, via `J^{-T} grad_ref`.
    pub fn physical_gradients(&self, t: usize, xi: f64, eta: f64) -> [[f64; 2]; MAX_LOCAL_DOFS] {
        let j = self.jacobian(t);
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        let inv_t = [
            [j[1][1] / det, -j[1][0] / det],
            [-j[0][1] / det, j[0][0] / det],
        ];
        let gref = self.element.grad(xi, eta);
        let mut g = [[0.0; 2]; MAX_LOCAL_DOFS];
        for i in 0..self.element.local_dofs() {
            g[i][0] = inv_t[0][0] * gref[i][0] + inv_t[0][1] * gref[i][1];
            g[i][1] = inv_t[1][0] * gref[i][0] + inv_t[1][1] * gref[i][1];
        }
        g
    }

    /// Map a reference point of triangle `t` to physical coordinates.
    pub fn map_to_physical(&self, t: usize, xi: f64, eta: f64) -> [f64; 2] {
        let [p0, p1, p2] = self.mesh.triangle_nodes(t);
        [
            p0.x + (p1.x - p0.x) * xi + (p2.x - p0.x) * eta,
            p0.y + (p1.y - p0.y) * xi + (p2.y - p0.y) * eta,
        ]
    }

    fn barycentric(&self, t: usize, x: f64, y: f64) -> [f64; 3] {
        let [p0, p1, p2] = self.mesh.triangle_nodes(t);
        let det = (p1.x - p0.x) * (p2.y - p0.y) - (p2.x - p0.x) * (p1.y - p0.y);
        let l1 = ((x - p0.x) * (p2.y - p0.y) - (p2.x - p0.x) * (y - p0.y)) / det;
        let l2 = ((p1.x - p0.x) * (y - p0.y) - (x - p0.x) * (p1.y - p0.y)) / det;
        [1.0 - l1 - l2, l1, l2]
    }

    /// Locate the triangle containing `(x, y)`.
    pub fn locate(&self, x: f64, y: f64) -> Result<(usize, f64, f64), FeError> {
        const TOL: f64 = 1e-12;
        if !(-TOL..=1.0 + TOL).contains(&x) || !(-TOL..=1.0 + TOL).contains(&y) {
            return Err(FeError::PointOutsideMesh(x, y));
        }
        let n = self.mesh.n;
        let cell = |v: f64| ((v * n as f64).floor() as usize).min(n - 1);
        for t in self.mesh.cell_triangles(cell(x), cell(y)) {
            let l = self.barycentric(t, x, y);
            if l.iter().all(|&c| c >= -TOL) {
                return Ok((t, l[1], l[2]));
            }
        }
        // Roundoff at cell boundaries: fall back to a full scan.
        for t in 0..self.mesh.triangles.len() {
            let l = self.barycentric(t, x, y);
            if l.iter().all(|&c| c >= -TOL) {
                return Ok((t, l[1], l[2]));
            }
        }
        Err(FeError::PointOutsideMesh(x, y))
    }

    /// Evaluate the finite element function with the given full dof vector.
    pub fn evaluate(&self, coeffs: &[f64], x: f64, y: f64) -> Result<f64, FeError> {
        assert_eq!(coeffs.len(), self.num_dofs(), "coefficient vector length");
        let (t, xi, eta) = self.locate(x, y)?;
        let shape = self.element.shape(xi, eta);
        let dofs = self.elem_dofs(t);
        Ok(dofs
            .iter()
            .zip(shape.iter())
            .map(|(&g, &n)| coeffs[g] * n)
            .sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{unit_square_mesh, Diagonal};

    fn factorial(k: usize) -> f64 {
        (1..=k).map(|v| v as f64).product::<f64>().max(1.0)
    }

    /// Exact integral of `xi^i eta^j` over the reference triangle.
    fn monomial_integral(i: usize, j: usize) -> f64 {
        factorial(i) * factorial(j) / factorial(i + j + 2)
    }

    #[test]
    fn quadrature_monomial_exactness() {
        for degree in 1..=10usize {
            let rule = quadrature(degree).unwrap();
            assert!(rule.exactness >= degree);
            assert!(rule.weights.iter().all(|&w| w > 0.0));
            let wsum: f64 = rule.weights.iter().sum();
            assert!((wsum - 0.5).abs() < 1e-14);
            for d in 0..=rule.exactness {
                for i in 0..=d {
                    let j = d - i;
                    let mut q = 0.0;
                    for k in 0..rule.len() {
                        let (x, y) = rule.xy(k);
                        q += rule.weights[k] * x.powi(i as i32) * y.powi(j as i32);
                    }
                    assert!(
                        (q - monomial_integral(i, j)).abs() < 1e-14,
                        "degree {degree} rule misses x^{i} y^{j}: {q} vs {}",
                        monomial_integral(i, j)
                    );
                }
            }
        }
        assert!(quadrature(11).is_err());
        assert!(quadrature(0).is_err());
    }

    #[test]
    fn one_and_three_point_rules() {
        let r1 = quadrature(1).unwrap();
        assert_eq!(r1.len(), 1);
        assert!((r1.weights[0] - 0.5).abs() < 1e-15);
        assert!(r1.points[0].iter().all(|&l| (l - 1.0 / 3.0).abs() < 1e-15));
        let r2 = quadrature(2).unwrap();
        assert_eq!(r2.len(), 3);
        assert!(r2.weights.iter().all(|&w| (w - 1.0 / 6.0).abs() < 1e-15));
    }

    #[test]
    fn partition_of_unity_and_kronecker() {
        for degree in [1usize, 2] {
            let el = ReferenceElement::new(degree).unwrap();
            let rule = quadrature(8).unwrap();
            for k in 0..rule.len() {
                let (xi, eta) = rule.xy(k);
                let sum: f64 = el.shape(xi, eta)[..el.local_dofs()].iter().sum();
                assert!((sum - 1.0).abs() < 1e-14);
            }
            for (i, p) in el.local_nodes().iter().enumerate() {
                let n = el.shape(p[0], p[1]);
                for j in 0..el.local_dofs() {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((n[j] - expect).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let h = 1e-6;
        for degree in [1usize, 2] {
            let el = ReferenceElement::new(degree).unwrap();
            for _ in 0..20 {
                let xi: f64 = rng.gen_range(0.05..0.45);
                let eta: f64 = rng.gen_range(0.05..0.45);
                let g = el.grad(xi, eta);
                for i in 0..el.local_dofs() {
                    let dx = (el.shape(xi + h, eta)[i] - el.shape(xi - h, eta)[i]) / (2.0 * h);
                    let dy = (el.shape(xi, eta + h)[i] - el.shape(xi, eta - h)[i]) / (2.0 * h);
                    assert!((g[i][0] - dx).abs() < 1e-6);
                    assert!((g[i][1] - dy).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn dof_counts() {
        let mesh = unit_square_mesh(4, Diagonal::Right);
        let p1 = build_space(mesh.clone(), 1).unwrap();
        assert_eq!(p1.num_dofs(), 25);
        assert_eq!(p1.num_constrained_dofs(), 9);
        let p2 = build_space(mesh, 2).unwrap();
        assert_eq!(p2.num_dofs(), 81);
        assert_eq!(p2.num_constrained_dofs(), 17);

        let tiny = build_space(unit_square_mesh(1, Diagonal::Right), 1).unwrap();
        assert_eq!(tiny.num_free_dofs(), 1);

        assert!(build_space(unit_square_mesh(2, Diagonal::Right), 3).is_err());
    }

    #[test]
    fn evaluate_reproduces_polynomials() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);

        let p1 = build_space(unit_square_mesh(4, Diagonal::Right), 1).unwrap();
        let ones = vec![1.0; p1.num_dofs()];
        let linear = p1.interpolate(|x, y| x + y);
        for _ in 0..10 {
            let (x, y): (f64, f64) = (rng.gen(), rng.gen());
            assert!((p1.evaluate(&ones, x, y).unwrap() - 1.0).abs() < 1e-13);
            assert!((p1.evaluate(&linear, x, y).unwrap() - (x + y)).abs() < 1e-13);
        }

        let p2 = build_space(unit_square_mesh(4, Diagonal::Right), 2).unwrap();
        let quad = p2.interpolate(|x, y| x * x + 0.5 * x * y);
        for _ in 0..10 {
            let (x, y): (f64, f64) = (rng.gen(), rng.gen());
            let exact = x * x + 0.5 * x * y;
            assert!((p2.evaluate(&quad, x, y).unwrap() - exact).abs() < 1e-13);
        }

        assert!(p1.evaluate(&ones, 1.5, 0.5).is_err());
    }

    #[test]
    fn edge_shape_endpoints() {
        let p2 = ReferenceElement::new(2).unwrap();
        assert_eq!(p2.edge_shape(0.0), [1.0, 0.0, 0.0]);
        assert_eq!(p2.edge_shape(1.0), [0.0, 1.0, 0.0]);
        assert_eq!(p2.edge_shape(0.5), [0.0, 0.0, 1.0]);
        let (pts, wts) = edge_quadrature();
        let total: f64 = wts.iter().sum();
        assert!((total - 1.0).abs() < 1e-15);
        // Exact for degree 5 on [0,1].
        for p in 0..=5usize {
            let q: f64 = pts
                .iter()
                .zip(&wts)
                .map(|(&x, &w)| w * x.powi(p as i32))
                .sum();
            assert!((q - 1.0 / (p as f64 + 1.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn restriction_expansion_roundtrip() {
        let space = build_space(unit_square_mesh(3, Diagonal::Right), 2).unwrap();
        let full = space.interpolate(|x, y| x * y + 1.0);
        let free = space.restrict(&full);
        let back = space.expand(&free);
        for g in 0..space.num_dofs() {
            if space.is_constrained(g) {
                assert_eq!(back[g], 0.0);
            } else {
                assert_eq!(back[g], full[g]);
            }
        }
    }
}
