//! Canonical Delaunay triangulation, reconstructible bit-identically at the
//! encoder and decoder from vertex coordinates alone.
//!
//! All predicates run in exact integer arithmetic. Cocircular degeneracies
//! (ubiquitous on integer grids) are resolved by symbolic perturbation: each
//! vertex carries a rank (its row-major grid index) and is conceptually
//! lowered on the lifting paraboloid by epsilon^(rank+1). The resulting
//! triangulation is unique, so the insertion order is irrelevant and the
//! output is a pure function of the vertex set.

use crate::model::{GridSpec, VertexSet};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TriangulateError {
    #[error("degenerate geometry: fewer than 3 vertices or all collinear")]
    Degenerate,
    #[error("vertex set does not include the four grid corners")]
    MissingCorners,
}

/// Canonically ordered triangle list. Each triple holds indices into the
/// row-major-ordered vertex list, sorted ascending; the list itself is sorted
/// lexicographically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triangulation {
    pub triangles: Vec<[u32; 3]>,
}

#[inline]
fn orient2d(a: (i64, i64), b: (i64, i64), c: (i64, i64)) -> i128 {
    let abx = (b.0 - a.0) as i128;
    let aby = (b.1 - a.1) as i128;
    let acx = (c.0 - a.0) as i128;
    let acy = (c.1 - a.1) as i128;
    abx * acy - aby * acx
}

/// In-circle determinant for CCW triangle (a, b, c) and query point d.
/// Positive: d strictly inside the circumcircle.
fn incircle_det(a: (i64, i64), b: (i64, i64), c: (i64, i64), d: (i64, i64)) -> i128 {
    let adx = (a.0 - d.0) as i128;
    let ady = (a.1 - d.1) as i128;
    let bdx = (b.0 - d.0) as i128;
    let bdy = (b.1 - d.1) as i128;
    let cdx = (c.0 - d.0) as i128;
    let cdy = (c.1 - d.1) as i128;
    let ad2 = adx * adx + ady * ady;
    let bd2 = bdx * bdx + bdy * bdy;
    let cd2 = cdx * cdx + cdy * cdy;
    adx * (bdy * cd2 - cdy * bd2) - ady * (bdx * cd2 - cdx * bd2)
        + ad2 * (bdx * cdy - cdx * bdy)
}

/// Symbolically perturbed in-circle test. `pts` are (x, y, rank) with ranks
/// pairwise distinct; (a, b, c) must be CCW. On an exact cocircular tie the
/// sign is decided by the lowest-rank participant: its lifted point is pushed
/// down the most, which connects the degenerate quad's diagonal through it.
pub fn incircle_sos(
    a: (i64, i64, u32),
    b: (i64, i64, u32),
    c: (i64, i64, u32),
    d: (i64, i64, u32),
) -> bool {
    let pa = (a.0, a.1);
    let pb = (b.0, b.1);
    let pc = (c.0, c.1);
    let pd = (d.0, d.1);
    let det = incircle_det(pa, pb, pc, pd);
    if det != 0 {
        return det > 0;
    }
    // Perturbing row r's lifted coordinate contributes sign (-1)^r times the
    // orientation of the remaining three rows, strongest for the lowest rank.
    let mut rows: [(u32, usize); 4] = [(a.2, 0), (b.2, 1), (c.2, 2), (d.2, 3)];
    rows.sort_unstable();
    for &(_, row) in &rows {
        let s = match row {
            0 => -orient2d(pb, pc, pd),
            1 => orient2d(pa, pc, pd),
            2 => -orient2d(pa, pb, pd),
            _ => orient2d(pa, pb, pc),
        };
        if s != 0 {
            return s > 0;
        }
    }
    unreachable!("triangle abc is non-degenerate, so the last term is nonzero")
}

/// Incremental triangulation over points inside (or on) the rectangle spanned
/// by its first four points. Used directly by the encoder search for cheap
/// single-insertion previews; [`delaunay`] wraps it for the whole-set
/// contract.
#[derive(Clone)]
pub struct Mesh {
    /// (x, y, rank); rank is the row-major grid index and doubles as the
    /// symbolic perturbation order.
    pts: Vec<(i64, i64, u32)>,
    tris: Vec<[u32; 3]>,
}

impl Mesh {
    /// Start from the four corner points of the pixel rectangle. They must be
    /// ordered (0,0), (w-1,0), (0,h-1), (w-1,h-1) with their grid ranks. The
    /// four corners are cocircular; the symbolic rule forces the diagonal
    /// through the lowest-rank corner, which is (0,0).
    pub fn from_corners(corners: [(i64, i64, u32); 4]) -> Mesh {
        Mesh {
            pts: corners.to_vec(),
            tris: vec![[0, 1, 3], [0, 3, 2]],
        }
    }

    pub fn points(&self) -> &[(i64, i64, u32)] {
        &self.pts
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.tris
    }

    /// Cavity of a prospective insertion: indices of the triangles whose
    /// perturbed circumcircle contains `p`, and the directed boundary edges
    /// of that cavity (new triangles are (edge.0, edge.1, new_point)).
    /// Boundary edges collinear with `p` lie on the rectangle hull and
    /// produce no triangle.
    pub fn cavity(&self, p: (i64, i64, u32)) -> (Vec<usize>, Vec<(u32, u32)>) {
        let mut bad = Vec::new();
        let mut edges: HashMap<(u32, u32), ()> = HashMap::new();
        for (ti, t) in self.tris.iter().enumerate() {
            let a = self.pts[t[0] as usize];
            let b = self.pts[t[1] as usize];
            let c = self.pts[t[2] as usize];
            if incircle_sos(a, b, c, p) {
                bad.push(ti);
                for e in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                    if edges.remove(&(e.1, e.0)).is_none() {
                        edges.insert(e, ());
                    }
                }
            }
        }
        let mut boundary: Vec<(u32, u32)> = edges
            .into_keys()
            .filter(|&(u, v)| {
                orient2d(
                    (self.pts[u as usize].0, self.pts[u as usize].1),
                    (self.pts[v as usize].0, self.pts[v as usize].1),
                    (p.0, p.1),
                ) != 0
            })
            .collect();
        boundary.sort_unstable();
        (bad, boundary)
    }

    /// Insert a point, which must lie inside or on the current hull and carry
    /// a rank distinct from every existing point.
    pub fn insert(&mut self, p: (i64, i64, u32)) {
        let (bad, boundary) = self.cavity(p);
        debug_assert!(!bad.is_empty(), "insert point outside the triangulation");
        let pi = self.pts.len() as u32;
        self.pts.push(p);
        // remove bad triangles in descending index order to keep indices valid
        for &ti in bad.iter().rev() {
            self.tris.swap_remove(ti);
        }
        for (u, v) in boundary {
            self.tris.push([u, v, pi]);
        }
    }

    /// Canonical triangle list: triples of grid ranks sorted ascending, the
    /// list sorted lexicographically. Insertion-order independent because the
    /// perturbed Delaunay triangulation is unique.
    pub fn canonical(&self) -> Vec<[u32; 3]> {
        let mut out: Vec<[u32; 3]> = self
            .tris
            .iter()
            .map(|t| {
                let mut t = t.map(|i| self.pts[i as usize].2);
                t.sort_unstable();
                t
            })
            .collect();
        out.sort_unstable();
        out
    }
}

/// Build the mesh for a vertex set: corners first, then the remaining
/// occupied points in row-major order. Point index k in the mesh is NOT the
/// row-major vertex position; use [`Mesh::canonical`] plus the rank map, or
/// call [`delaunay`] for the canonical contract.
pub fn build_mesh(grid: &GridSpec, vertices: &VertexSet) -> Result<Mesh, TriangulateError> {
    let corners = grid.corner_indices();
    for &c in &corners {
        if !vertices.occupancy[c] {
            return Err(TriangulateError::MissingCorners);
        }
    }
    if vertices.vertex_count() < 3 {
        return Err(TriangulateError::Degenerate);
    }
    let corner_pts: Vec<(i64, i64, u32)> = corners
        .iter()
        .map(|&idx| {
            let (x, y) = grid.index_to_pixel(idx);
            (x as i64, y as i64, idx as u32)
        })
        .collect();
    let mut mesh = Mesh::from_corners([corner_pts[0], corner_pts[1], corner_pts[2], corner_pts[3]]);
    for (idx, &occ) in vertices.occupancy.iter().enumerate() {
        if occ && !corners.contains(&idx) {
            let (x, y) = grid.index_to_pixel(idx);
            mesh.insert((x as i64, y as i64, idx as u32));
        }
    }
    Ok(mesh)
}

/// Canonical Delaunay triangulation of the occupied grid points. Triangle
/// entries index into the row-major-ordered occupied vertex list.
pub fn delaunay(grid: &GridSpec, vertices: &VertexSet) -> Result<Triangulation, TriangulateError> {
    let mesh = build_mesh(grid, vertices)?;
    // map grid rank -> position in the row-major occupied list
    let occupied = vertices.occupied_indices();
    let mut rank_to_pos: HashMap<u32, u32> = HashMap::with_capacity(occupied.len());
    for (pos, &idx) in occupied.iter().enumerate() {
        rank_to_pos.insert(idx as u32, pos as u32);
    }
    let triangles = mesh
        .canonical()
        .into_iter()
        .map(|t| t.map(|rank| rank_to_pos[&rank]))
        .collect();
    Ok(Triangulation { triangles })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vs_from_indices(grid: &GridSpec, extra: &[usize]) -> VertexSet {
        let mut occupancy = vec![false; grid.point_count()];
        for idx in grid.corner_indices() {
            occupancy[idx] = true;
        }
        for &idx in extra {
            occupancy[idx] = true;
        }
        let n = occupancy.iter().filter(|&&o| o).count();
        VertexSet { occupancy, color_index: vec![0; n] }
    }

    #[test]
    fn four_corners_give_two_triangles_with_canonical_diagonal() {
        let grid = GridSpec::new(5, 64, 64).unwrap();
        let vs = vs_from_indices(&grid, &[]);
        let t = delaunay(&grid, &vs).unwrap();
        // vertices in row-major order: 0=(0,0), 1=(4,0), 2=(0,4), 3=(4,4);
        // the diagonal must be incident to vertex 0
        assert_eq!(t.triangles, vec![[0, 1, 3], [0, 2, 3]]);
    }

    #[test]
    fn corners_plus_center_gives_four_triangles() {
        let grid = GridSpec::new(5, 65, 65).unwrap();
        let center = 2 * 5 + 2;
        let vs = vs_from_indices(&grid, &[center]);
        let t = delaunay(&grid, &vs).unwrap();
        assert_eq!(t.triangles.len(), 4);
        // every triangle uses the center vertex (row-major position 2)
        for tri in &t.triangles {
            assert!(tri.contains(&2), "{tri:?}");
        }
    }

    #[test]
    fn deterministic_across_calls() {
        let grid = GridSpec::new(15, 221, 221).unwrap();
        let extra: Vec<usize> = (0..225).filter(|i| i % 7 == 3).collect();
        let vs = vs_from_indices(&grid, &extra);
        let a = delaunay(&grid, &vs).unwrap();
        let b = delaunay(&grid, &vs).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_corner_is_an_error() {
        let grid = GridSpec::new(5, 64, 64).unwrap();
        let mut vs = vs_from_indices(&grid, &[]);
        vs.occupancy[0] = false;
        vs.color_index.pop();
        assert_eq!(delaunay(&grid, &vs), Err(TriangulateError::MissingCorners));
    }

    #[test]
    fn collinear_boundary_points_are_handled() {
        // points along the top edge of the rectangle are collinear with the
        // hull; they must still triangulate with full coverage
        let grid = GridSpec::new(9, 81, 81).unwrap();
        let vs = vs_from_indices(&grid, &[1, 2, 3, 4, 5, 6, 7]);
        let t = delaunay(&grid, &vs).unwrap();
        // 11 points, all on the hull: Euler gives n - 2 triangles for a
        // convex polygon triangulation
        assert_eq!(t.triangles.len(), 11 - 2);
    }

    #[test]
    fn insertion_order_does_not_matter() {
        // same vertex set built in two different orders gives the same
        // canonical triangle list, because the perturbed DT is unique
        let grid = GridSpec::new(9, 100, 100).unwrap();
        let extra = [12usize, 40, 33, 70, 22, 58];
        let corner_pts: Vec<(i64, i64, u32)> = grid
            .corner_indices()
            .iter()
            .map(|&idx| {
                let (x, y) = grid.index_to_pixel(idx);
                (x as i64, y as i64, idx as u32)
            })
            .collect();
        let mut m1 = Mesh::from_corners([corner_pts[0], corner_pts[1], corner_pts[2], corner_pts[3]]);
        let mut m2 = m1.clone();
        for &idx in &extra {
            let (x, y) = grid.index_to_pixel(idx);
            m1.insert((x as i64, y as i64, idx as u32));
        }
        for &idx in extra.iter().rev() {
            let (x, y) = grid.index_to_pixel(idx);
            m2.insert((x as i64, y as i64, idx as u32));
        }
        assert_eq!(m1.canonical(), m2.canonical());
    }
}
