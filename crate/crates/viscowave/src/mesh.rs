//! Conforming triangulations of the unit square with tagged boundary edges.
//!
//! The solver only ever runs on structured meshes of `(0,1)x(0,1)`: each of
//! the `n x n` cells is split into triangles according to a [`Diagonal`]
//! pattern. Boundary edges carry a Dirichlet/Neumann tag; the default split
//! puts the sides `x = 0` and `y = 0` on the Dirichlet part and the rest on
//! the Neumann part.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    /// Every admissible boundary split needs a Dirichlet part of positive
    /// length, otherwise the bilinear form loses coercivity.
    #[error("boundary predicate leaves the Dirichlet boundary empty")]
    EmptyDirichletBoundary,
}

/// Mesh node with coordinates in `[0,1]^2`. Node indices are positional.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub x: f64,
    pub y: f64,
}

/// Triangle cell; vertices are node indices in counterclockwise order.
#[derive(Debug, Clone, Copy)]
pub struct Triangle {
    pub vertices: [usize; 3],
    pub area: f64,
}

/// Boundary condition tag for a boundary edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryTag {
    Dirichlet,
    Neumann,
}

/// Edge on the domain boundary, with its outward unit normal.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub tag: BoundaryTag,
    pub normal: [f64; 2],
}

/// Cell splitting pattern for the structured mesh.
///
/// `Right` draws the diagonal from the lower-left to the upper-right cell
/// corner, `Left` the other one, `Crossed` adds the cell midpoint and both
/// diagonals. Convergence *rates* are pattern independent; absolute error
/// constants are mildly pattern dependent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Diagonal {
    #[default]
    Right,
    Left,
    Crossed,
}

/// Conforming triangulation of the unit square.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub nodes: Vec<Node>,
    pub triangles: Vec<Triangle>,
    pub boundary_edges: Vec<BoundaryEdge>,
    /// Subdivision count per side.
    pub n: usize,
    pub diagonal: Diagonal,
}

fn signed_area(a: Node, b: Node, c: Node) -> f64 {
    0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y))
}

/// Default boundary split of the experiment: `u = 0` on `x = 0` and `y = 0`.
pub fn default_dirichlet_predicate(x: f64, y: f64) -> bool {
    x.abs() < 1e-12 || y.abs() < 1e-12
}

/// Build the structured `n x n` triangulation of the unit square.
///
/// Nodes are laid out row-major, `(n+1)^2` of them (plus cell centers for
/// `Crossed`); triangles are emitted cell by cell so that the triangles of
/// cell `(i, j)` occupy a contiguous index range. Boundary edges get the
/// default Dirichlet/Neumann split; use [`classify_boundary`] to re-tag.
pub fn unit_square_mesh(n: usize, diagonal: Diagonal) -> Mesh {
    assert!(n >= 1, "subdivision count must be at least 1");
    let grid = |i: usize, j: usize| j * (n + 1) + i;

    // Coordinates by division, so lattice points on the boundary are exact
    // for any n.
    let coord = |i: usize| i as f64 / n as f64;
    let mut nodes = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            nodes.push(Node {
                x: coord(i),
                y: coord(j),
            });
        }
    }

    let mut triangles = Vec::new();
    let mut push = |nodes: &[Node], v: [usize; 3]| {
        let area = signed_area(nodes[v[0]], nodes[v[1]], nodes[v[2]]);
        debug_assert!(area > 0.0, "triangle orientation must be counterclockwise");
        triangles.push(Triangle { vertices: v, area });
    };

    for j in 0..n {
        for i in 0..n {
            let (v00, v10) = (grid(i, j), grid(i + 1, j));
            let (v01, v11) = (grid(i, j + 1), grid(i + 1, j + 1));
            match diagonal {
                Diagonal::Right => {
                    push(&nodes, [v00, v10, v11]);
                    push(&nodes, [v00, v11, v01]);
                }
                Diagonal::Left => {
                    push(&nodes, [v00, v10, v01]);
                    push(&nodes, [v10, v11, v01]);
                }
                Diagonal::Crossed => {
                    let c = nodes.len();
                    nodes.push(Node {
                        x: (i as f64 + 0.5) / n as f64,
                        y: (j as f64 + 0.5) / n as f64,
                    });
                    push(&nodes, [v00, v10, c]);
                    push(&nodes, [v10, v11, c]);
                    push(&nodes, [v11, v01, c]);
                    push(&nodes, [v01, v00, c]);
                }
            }
        }
    }

    let boundary_edges = collect_boundary_edges(&nodes, &triangles);
    let mut mesh = Mesh {
        nodes,
        triangles,
        boundary_edges,
        n,
        diagonal,
    };
    apply_boundary_predicate(&mut mesh, default_dirichlet_predicate);
    mesh
}

/// Find edges that belong to exactly one triangle and compute their outward
/// normals from the owning triangle.
fn collect_boundary_edges(nodes: &[Node], triangles: &[Triangle]) -> Vec<BoundaryEdge> {
    use std::collections::HashMap;
    // (sorted edge key) -> (count, owning triangle, oriented endpoints)
    let mut incidence: HashMap<(usize, usize), (usize, usize, [usize; 2])> = HashMap::new();
    for (t, tri) in triangles.iter().enumerate() {
        for e in 0..3 {
            let a = tri.vertices[e];
            let b = tri.vertices[(e + 1) % 3];
            let key = (a.min(b), a.max(b));
            let entry = incidence.entry(key).or_insert((0, t, [a, b]));
            entry.0 += 1;
        }
    }
    let mut keys: Vec<_> = incidence
        .iter()
        .filter(|(_, v)| v.0 == 1)
        .map(|(k, _)| *k)
        .collect();
    keys.sort_unstable();

    keys.into_iter()
        .map(|key| {
            let (_, t, [a, b]) = incidence[&key];
            let (pa, pb) = (nodes[a], nodes[b]);
            let tri = &triangles[t];
            let centroid = {
                let (p0, p1, p2) = (
                    nodes[tri.vertices[0]],
                    nodes[tri.vertices[1]],
                    nodes[tri.vertices[2]],
                );
                [(p0.x + p1.x + p2.x) / 3.0, (p0.y + p1.y + p2.y) / 3.0]
            };
            let len = ((pb.x - pa.x).powi(2) + (pb.y - pa.y).powi(2)).sqrt();
            let mut normal = [(pb.y - pa.y) / len, -(pb.x - pa.x) / len];
            let mid = [(pa.x + pb.x) / 2.0, (pa.y + pb.y) / 2.0];
            if normal[0] * (mid[0] - centroid[0]) + normal[1] * (mid[1] - centroid[1]) < 0.0 {
                normal = [-normal[0], -normal[1]];
            }
            BoundaryEdge {
                nodes: [a, b],
                tag: BoundaryTag::Neumann,
                normal,
            }
        })
        .collect()
}

fn apply_boundary_predicate<F: Fn(f64, f64) -> bool>(mesh: &mut Mesh, dirichlet: F) {
    for edge in &mut mesh.boundary_edges {
        let (a, b) = (mesh.nodes[edge.nodes[0]], mesh.nodes[edge.nodes[1]]);
        let (mx, my) = ((a.x + b.x) / 2.0, (a.y + b.y) / 2.0);
        edge.tag = if dirichlet(mx, my) {
            BoundaryTag::Dirichlet
        } else {
            BoundaryTag::Neumann
        };
    }
}

/// Re-tag the boundary edges: edges whose midpoint satisfies the predicate
/// become Dirichlet, the rest Neumann. Rejects a split with an empty
/// Dirichlet part.
pub fn classify_boundary<F: Fn(f64, f64) -> bool>(
    mut mesh: Mesh,
    dirichlet: F,
) -> Result<Mesh, MeshError> {
    apply_boundary_predicate(&mut mesh, dirichlet);
    if mesh.dirichlet_length() <= 0.0 {
        return Err(MeshError::EmptyDirichletBoundary);
    }
    Ok(mesh)
}

impl Mesh {
    /// Nominal mesh size `1/n`; the convergence tables are indexed by this.
    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Longest edge over all triangles (`sqrt(2)/n` for the diagonal splits).
    pub fn max_edge_length(&self) -> f64 {
        let mut max = 0.0f64;
        for tri in &self.triangles {
            for e in 0..3 {
                let a = self.nodes[tri.vertices[e]];
                let b = self.nodes[tri.vertices[(e + 1) % 3]];
                max = max.max(((b.x - a.x).powi(2) + (b.y - a.y).powi(2)).sqrt());
            }
        }
        max
    }

    pub fn edge_length(&self, edge: &BoundaryEdge) -> f64 {
        let (a, b) = (self.nodes[edge.nodes[0]], self.nodes[edge.nodes[1]]);
        ((b.x - a.x).powi(2) + (b.y - a.y).powi(2)).sqrt()
    }

    /// Sum of all triangle areas, compensated so that rounding does not
    /// accumulate over large meshes. Equals 1 to machine precision.
    pub fn total_area(&self) -> f64 {
        let mut sum = 0.0;
        let mut carry = 0.0;
        for tri in &self.triangles {
            let y = tri.area - carry;
            let t = sum + y;
            carry = (t - sum) - y;
            sum = t;
        }
        sum
    }

    /// Total length of the Dirichlet part of the boundary.
    pub fn dirichlet_length(&self) -> f64 {
        self.boundary_edges
            .iter()
            .filter(|e| e.tag == BoundaryTag::Dirichlet)
            .map(|e| self.edge_length(e))
            .sum()
    }

    /// Number of triangles per structured cell for this split pattern.
    pub fn triangles_per_cell(&self) -> usize {
        match self.diagonal {
            Diagonal::Right | Diagonal::Left => 2,
            Diagonal::Crossed => 4,
        }
    }

    /// Triangle index range covering structured cell `(i, j)`.
    pub fn cell_triangles(&self, i: usize, j: usize) -> std::ops::Range<usize> {
        let per = self.triangles_per_cell();
        let start = (j * self.n + i) * per;
        start..start + per
    }

    pub fn triangle_nodes(&self, t: usize) -> [Node; 3] {
        let v = self.triangles[t].vertices;
        [self.nodes[v[0]], self.nodes[v[1]], self.nodes[v[2]]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn smallest_mesh_counts() {
        let mesh = unit_square_mesh(1, Diagonal::Right);
        assert_eq!(mesh.nodes.len(), 4);
        assert_eq!(mesh.triangles.len(), 2);
        assert_eq!(mesh.boundary_edges.len(), 4);
    }

    #[test]
    fn structured_counts_and_area() {
        for diagonal in [Diagonal::Right, Diagonal::Left] {
            let mesh = unit_square_mesh(4, diagonal);
            assert_eq!(mesh.nodes.len(), 25);
            assert_eq!(mesh.triangles.len(), 32);
            assert_eq!(mesh.boundary_edges.len(), 16);
            assert!((mesh.total_area() - 1.0).abs() < 1e-14);
        }
        let crossed = unit_square_mesh(4, Diagonal::Crossed);
        assert_eq!(crossed.nodes.len(), 25 + 16);
        assert_eq!(crossed.triangles.len(), 64);
        assert!((crossed.total_area() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn edge_incidence_scan() {
        // Every interior edge is shared by exactly two triangles, every
        // boundary edge by exactly one.
        for n in [2usize, 4, 8] {
            let mesh = unit_square_mesh(n, Diagonal::Right);
            let mut counts: HashMap<(usize, usize), usize> = HashMap::new();
            for tri in &mesh.triangles {
                for e in 0..3 {
                    let a = tri.vertices[e];
                    let b = tri.vertices[(e + 1) % 3];
                    *counts.entry((a.min(b), a.max(b))).or_default() += 1;
                }
            }
            let boundary: std::collections::HashSet<_> = mesh
                .boundary_edges
                .iter()
                .map(|e| (e.nodes[0].min(e.nodes[1]), e.nodes[0].max(e.nodes[1])))
                .collect();
            for (key, count) in counts {
                if boundary.contains(&key) {
                    assert_eq!(count, 1, "boundary edge {key:?} shared");
                } else {
                    assert_eq!(count, 2, "interior edge {key:?} not conforming");
                }
            }
            assert_eq!(mesh.boundary_edges.len(), 4 * n);
        }
    }

    #[test]
    fn default_classification_splits_boundary() {
        let mesh = unit_square_mesh(4, Diagonal::Right);
        let dirichlet = mesh
            .boundary_edges
            .iter()
            .filter(|e| e.tag == BoundaryTag::Dirichlet)
            .count();
        assert_eq!(dirichlet, 8);
        assert_eq!(mesh.boundary_edges.len() - dirichlet, 8);
    }

    #[test]
    fn classify_all_dirichlet() {
        let mesh = unit_square_mesh(4, Diagonal::Right);
        let mesh = classify_boundary(mesh, |_, _| true).unwrap();
        assert!(mesh
            .boundary_edges
            .iter()
            .all(|e| e.tag == BoundaryTag::Dirichlet));
        assert_eq!(mesh.boundary_edges.len(), 16);
    }

    #[test]
    fn classify_rejects_empty_dirichlet() {
        let mesh = unit_square_mesh(4, Diagonal::Right);
        assert!(matches!(
            classify_boundary(mesh, |_, _| false),
            Err(MeshError::EmptyDirichletBoundary)
        ));
    }

    #[test]
    fn outward_normals_point_away_from_centroid() {
        for diagonal in [Diagonal::Right, Diagonal::Left, Diagonal::Crossed] {
            let mesh = unit_square_mesh(3, diagonal);
            for edge in &mesh.boundary_edges {
                let norm = (edge.normal[0].powi(2) + edge.normal[1].powi(2)).sqrt();
                assert!((norm - 1.0).abs() < 1e-14);
                // Owning triangle: the unique one containing both endpoints.
                let owner = mesh
                    .triangles
                    .iter()
                    .find(|t| {
                        t.vertices.contains(&edge.nodes[0]) && t.vertices.contains(&edge.nodes[1])
                    })
                    .unwrap();
                let [p0, p1, p2] = [
                    mesh.nodes[owner.vertices[0]],
                    mesh.nodes[owner.vertices[1]],
                    mesh.nodes[owner.vertices[2]],
                ];
                let c = [(p0.x + p1.x + p2.x) / 3.0, (p0.y + p1.y + p2.y) / 3.0];
                let (a, b) = (mesh.nodes[edge.nodes[0]], mesh.nodes[edge.nodes[1]]);
                let mid = [(a.x + b.x) / 2.0, (a.y + b.y) / 2.0];
                let dot = edge.normal[0] * (mid[0] - c[0]) + edge.normal[1] * (mid[1] - c[1]);
                assert!(dot > 0.0);
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn triangles_partition_the_square(n in 1usize..40, pattern in 0usize..3) {
            let diagonal = [Diagonal::Right, Diagonal::Left, Diagonal::Crossed][pattern];
            let mesh = unit_square_mesh(n, diagonal);
            proptest::prop_assert!((mesh.total_area() - 1.0).abs() < 1e-14);
            proptest::prop_assert!(mesh.triangles.iter().all(|t| t.area > 0.0));
            proptest::prop_assert_eq!(mesh.boundary_edges.len(), 4 * n);
        }
    }

    #[test]
    fn corner_edges_follow_dirichlet_wins() {
        // The two edges meeting at (1,0) and (0,1) get different tags; the
        // corner nodes themselves are constrained through the Dirichlet edge.
        let mesh = unit_square_mesh(2, Diagonal::Right);
        let tag_of = |mx: f64, my: f64| {
            mesh.boundary_edges
                .iter()
                .find(|e| {
                    let (a, b) = (mesh.nodes[e.nodes[0]], mesh.nodes[e.nodes[1]]);
                    ((a.x + b.x) / 2.0 - mx).abs() < 1e-12 && ((a.y + b.y) / 2.0 - my).abs() < 1e-12
                })
                .map(|e| e.tag)
                .unwrap()
        };
        assert_eq!(tag_of(0.75, 0.0), BoundaryTag::Dirichlet);
        assert_eq!(tag_of(1.0, 0.25), BoundaryTag::Neumann);
    }
}
