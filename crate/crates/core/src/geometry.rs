//! Structured triangulations of the unit square, red refinement and
//! element-layer extension patches.
//!
//! Every mesh is the uniform "criss" triangulation with `n` cells per side in
//! which each square cell is split along its bottom-left to top-right
//! diagonal. Vertices are numbered row-major, `index = row * (n + 1) + col`,
//! and the two triangles of cell `(col, row)` are `2 * (row * n + col)`
//! (below the diagonal) and `2 * (row * n + col) + 1` (above it).

use std::collections::HashMap;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Largest fine-grid resolution `build_hierarchy` accepts by default.
pub const DEFAULT_MAX_FINE_N: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct StructuredTriMesh {
    n: usize,
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    vertex_to_triangles: Vec<Vec<usize>>,
    boundary: Vec<bool>,
}

impl StructuredTriMesh {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertex_triangles(&self, v: usize) -> &[usize] {
        &self.vertex_to_triangles[v]
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        self.boundary[v]
    }

    pub fn boundary_flags(&self) -> &[bool] {
        &self.boundary
    }

    pub fn vertex_index(&self, col: usize, row: usize) -> usize {
        row * (self.n + 1) + col
    }

    /// `(col, row)` grid coordinates of a vertex.
    pub fn vertex_grid(&self, v: usize) -> (usize, usize) {
        (v % (self.n + 1), v / (self.n + 1))
    }

    /// Cell spacing `1/n`.
    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Element diameter `sqrt(2)/n` (all elements are congruent).
    pub fn diameter(&self) -> f64 {
        std::f64::consts::SQRT_2 / self.n as f64
    }

    pub fn triangle_points(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_points(t);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    pub fn area(&self, t: usize) -> f64 {
        self.signed_area(t).abs()
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.triangle_points(t);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    pub fn triangle_diameter(&self, t: usize) -> f64 {
        let p = self.triangle_points(t);
        let d = |x: Point, y: Point| ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt();
        d(p[0], p[1]).max(d(p[1], p[2])).max(d(p[0], p[2]))
    }

    /// Gradients of the three barycentric coordinates of triangle `t`.
    pub fn shape_gradients(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangle_points(t);
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        [
            [(b[1] - c[1]) / det, (c[0] - b[0]) / det],
            [(c[1] - a[1]) / det, (a[0] - c[0]) / det],
            [(a[1] - b[1]) / det, (b[0] - a[0]) / det],
        ]
    }

    /// Triangle containing `p`; points on shared edges resolve to one of the
    /// neighbours deterministically.
    pub fn locate(&self, p: Point) -> usize {
        let n = self.n as f64;
        let sx = (p[0] * n).clamp(0.0, n);
        let sy = (p[1] * n).clamp(0.0, n);
        let col = (sx.floor() as usize).min(self.n - 1);
        let row = (sy.floor() as usize).min(self.n - 1);
        let (lx, ly) = (sx - col as f64, sy - row as f64);
        let cell = 2 * (row * self.n + col);
        if ly > lx {
            cell + 1
        } else {
            cell
        }
    }

    /// Barycentric coordinates of `p` with respect to triangle `t`.
    pub fn barycentric(&self, t: usize, p: Point) -> [f64; 3] {
        let [a, b, c] = self.triangle_points(t);
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        let l1 = ((p[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (p[1] - a[1])) / det;
        let l2 = ((b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1])) / det;
        [1.0 - l1 - l2, l1, l2]
    }
}

/// Uniform criss triangulation of the unit square with `n` cells per side.
pub fn build_uniform_mesh(n: usize) -> Result<StructuredTriMesh> {
    if n == 0 {
        return Err(Error::InvalidMesh("n must be at least 1".into()));
    }
    let np = n + 1;
    let h = 1.0 / n as f64;
    let mut vertices = Vec::with_capacity(np * np);
    let mut boundary = Vec::with_capacity(np * np);
    for row in 0..np {
        for col in 0..np {
            vertices.push([col as f64 * h, row as f64 * h]);
            boundary.push(row == 0 || col == 0 || row == n || col == n);
        }
    }
    let mut triangles = Vec::with_capacity(2 * n * n);
    for row in 0..n {
        for col in 0..n {
            let v00 = row * np + col;
            let v10 = v00 + 1;
            let v01 = v00 + np;
            let v11 = v01 + 1;
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }
    let mut vertex_to_triangles = vec![Vec::new(); np * np];
    for (t, tri) in triangles.iter().enumerate() {
        for &v in tri {
            vertex_to_triangles[v].push(t);
        }
    }
    Ok(StructuredTriMesh {
        n,
        vertices,
        triangles,
        vertex_to_triangles,
        boundary,
    })
}

/// Result of one red refinement step.
#[derive(Debug, Clone)]
pub struct Refinement {
    pub mesh: StructuredTriMesh,
    /// Parent triangle (in the input mesh) of every child triangle.
    pub parent: Vec<usize>,
}

/// Quadrisects every triangle through its edge midpoints.
///
/// The children are renumbered into the canonical numbering of the `2n`
/// mesh, so the output compares equal to `build_uniform_mesh(2 * n)`.
pub fn red_refine(mesh: &StructuredTriMesh) -> Refinement {
    let mut points: Vec<Point> = mesh.vertices.clone();
    let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
    let mut mid = |a: usize, b: usize, points: &mut Vec<Point>| -> usize {
        let key = (a.min(b), a.max(b));
        *midpoint.entry(key).or_insert_with(|| {
            let (p, q) = (points[a], points[b]);
            points.push([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]);
            points.len() - 1
        })
    };
    let mut children: Vec<([usize; 3], usize)> = Vec::with_capacity(4 * mesh.num_triangles());
    for (t, &[a, b, c]) in mesh.triangles.iter().enumerate() {
        let ab = mid(a, b, &mut points);
        let bc = mid(b, c, &mut points);
        let ca = mid(c, a, &mut points);
        children.push(([a, ab, ca], t));
        children.push(([ab, b, bc], t));
        children.push(([ca, bc, c], t));
        children.push(([ab, bc, ca], t));
    }

    let refined = build_uniform_mesh(2 * mesh.n).expect("2n >= 2");
    let nn = refined.n as f64;
    let canonical: Vec<usize> = points
        .iter()
        .map(|p| {
            let col = (p[0] * nn).round() as usize;
            let row = (p[1] * nn).round() as usize;
            refined.vertex_index(col, row)
        })
        .collect();

    let mut parent = vec![usize::MAX; refined.num_triangles()];
    for (tri, t) in children {
        let verts = tri.map(|v| canonical[v]);
        let pts = verts.map(|v| refined.vertices[v]);
        let centroid = [
            (pts[0][0] + pts[1][0] + pts[2][0]) / 3.0,
            (pts[0][1] + pts[1][1] + pts[2][1]) / 3.0,
        ];
        let child = refined.locate(centroid);
        let mut expected = refined.triangles[child];
        let mut got = verts;
        expected.sort_unstable();
        got.sort_unstable();
        assert_eq!(expected, got, "red refinement child does not match canonical cell");
        parent[child] = t;
    }
    debug_assert!(parent.iter().all(|&p| p != usize::MAX));
    Refinement {
        mesh: refined,
        parent,
    }
}

/// Coarse and fine meshes related by `levels` red refinements.
#[derive(Debug, Clone)]
pub struct MeshHierarchy {
    pub coarse: StructuredTriMesh,
    pub fine: StructuredTriMesh,
    pub levels: usize,
    fine_to_coarse: Vec<usize>,
    coarse_to_fine: Vec<Vec<usize>>,
}

impl MeshHierarchy {
    pub fn fine_to_coarse(&self) -> &[usize] {
        &self.fine_to_coarse
    }

    /// Fine elements tiling coarse element `t`, in ascending order.
    pub fn children(&self, t: usize) -> &[usize] {
        &self.coarse_to_fine[t]
    }

    /// Number of fine cells per coarse cell along one side.
    pub fn ratio(&self) -> usize {
        1 << self.levels
    }

    /// Fine vertex sitting on coarse vertex `z`.
    pub fn coarse_vertex_on_fine(&self, z: usize) -> usize {
        let (col, row) = self.coarse.vertex_grid(z);
        let r = self.ratio();
        self.fine.vertex_index(col * r, row * r)
    }
}

pub fn build_hierarchy(n_coarse: usize, levels: usize) -> Result<MeshHierarchy> {
    build_hierarchy_capped(n_coarse, levels, DEFAULT_MAX_FINE_N)
}

pub fn build_hierarchy_capped(n_coarse: usize, levels: usize, cap: usize) -> Result<MeshHierarchy> {
    let fine_n = n_coarse
        .checked_shl(levels as u32)
        .filter(|&n| levels < usize::BITS as usize && n >> levels == n_coarse)
        .ok_or(Error::ResourceLimit { n: usize::MAX, cap })?;
    if fine_n > cap {
        return Err(Error::ResourceLimit { n: fine_n, cap });
    }
    let coarse = build_uniform_mesh(n_coarse)?;
    let mut fine = coarse.clone();
    let mut fine_to_coarse: Vec<usize> = (0..coarse.num_triangles()).collect();
    for _ in 0..levels {
        let Refinement { mesh, parent } = red_refine(&fine);
        fine_to_coarse = parent.iter().map(|&p| fine_to_coarse[p]).collect();
        fine = mesh;
    }
    let mut coarse_to_fine = vec![Vec::new(); coarse.num_triangles()];
    for (f, &c) in fine_to_coarse.iter().enumerate() {
        coarse_to_fine[c].push(f);
    }
    Ok(MeshHierarchy {
        coarse,
        fine,
        levels,
        fine_to_coarse,
        coarse_to_fine,
    })
}

/// Element-layer extension patch around a coarse anchor element.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub anchor: usize,
    pub order: usize,
    pub coarse_elements: Vec<usize>,
    pub fine_elements: Vec<usize>,
    /// Fine vertices whose whole fine star lies in the patch.
    pub free_fine_vertices: Vec<usize>,
}

impl Patch {
    /// True when the patch covers every fine element of the domain.
    pub fn is_full_domain(&self, hier: &MeshHierarchy) -> bool {
        self.fine_elements.len() == hier.fine.num_triangles()
    }
}

/// Coarse elements reached from `anchor` in `m` rounds of vertex-touching
/// adjacency, sorted ascending.
pub fn coarse_layers(mesh: &StructuredTriMesh, anchor: usize, m: usize) -> Vec<usize> {
    let mut inside = vec![false; mesh.num_triangles()];
    inside[anchor] = true;
    let mut front = vec![anchor];
    for _ in 0..m {
        let mut next = Vec::new();
        for &t in &front {
            for &v in &mesh.triangles[t] {
                for &s in mesh.vertex_triangles(v) {
                    if !inside[s] {
                        inside[s] = true;
                        next.push(s);
                    }
                }
            }
        }
        if next.is_empty() {
            break;
        }
        front = next;
    }
    (0..mesh.num_triangles()).filter(|&t| inside[t]).collect()
}

pub fn extend_patch(hier: &MeshHierarchy, anchor: usize, m: usize) -> Patch {
    let coarse_elements = coarse_layers(&hier.coarse, anchor, m);
    let mut in_patch = vec![false; hier.fine.num_triangles()];
    for &t in &coarse_elements {
        for &f in hier.children(t) {
            in_patch[f] = true;
        }
    }
    let fine_elements: Vec<usize> = (0..in_patch.len()).filter(|&f| in_patch[f]).collect();
    let free_fine_vertices = (0..hier.fine.num_vertices())
        .filter(|&v| {
            let star = hier.fine.vertex_triangles(v);
            in_patch[star[0]] && star.iter().all(|&f| in_patch[f])
        })
        .collect();
    Patch {
        anchor,
        order: m,
        coarse_elements,
        fine_elements,
        free_fine_vertices,
    }
}
