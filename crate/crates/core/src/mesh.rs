//! Uniform periodic meshes on the unit interval and unit square.
//!
//! Vertices are identified across the boundary, so the dof count equals
//! `n` in 1D and `n * n` in 2D (dof `= y * n + x`).  In 2D each grid cell is
//! split into two triangles along the lower-left to upper-right diagonal,
//! which makes any `fine.n = k * coarse.n` pair an exact refinement: every
//! coarse triangle is a union of fine triangles.
//!
//! Element connectivity wraps; element *geometry* does not.  An element's
//! corner coordinates are reported on the unwrapped cell (the rightmost 1D
//! interval is `[1 - h, 1]`, not `[1 - h, 0]`), so quadrature points stay
//! inside the unit cell even for fields that are not 1-periodic.

use crate::{Error, Result};
use std::collections::BTreeSet;

/// Element connectivity; dof indices wrap periodically.
#[derive(Debug, Clone)]
pub enum Elements {
    /// 1D intervals `[k, (k+1) mod n]`.
    Intervals(Vec<[usize; 2]>),
    /// 2D triangles, two per grid cell, counter-clockwise.
    Triangles(Vec<[usize; 3]>),
}

/// Uniform periodic mesh.
#[derive(Debug, Clone)]
pub struct Mesh {
    dim: usize,
    n: usize,
    h: f64,
    vertices: Vec<[f64; 2]>,
    elements: Elements,
    /// Elements incident to each vertex (2 in 1D, 6 in 2D).
    vertex_elements: Vec<Vec<usize>>,
}

impl Mesh {
    /// Builds the uniform periodic mesh with `n` cells per side.
    ///
    /// Rejects `dim` outside {1, 2} and `n < 2` (periodic identification
    /// needs at least two cells per side).
    pub fn uniform_periodic(dim: usize, n: usize) -> Result<Mesh> {
        if dim != 1 && dim != 2 {
            return Err(Error::Mesh(format!("dim must be 1 or 2, got {dim}")));
        }
        if n < 2 {
            return Err(Error::Mesh(format!(
                "need at least 2 cells per side on a periodic mesh, got {n}"
            )));
        }
        let h = 1.0 / n as f64;
        match dim {
            1 => {
                let vertices: Vec<[f64; 2]> = (0..n).map(|k| [k as f64 * h, 0.0]).collect();
                let elems: Vec<[usize; 2]> = (0..n).map(|k| [k, (k + 1) % n]).collect();
                let mut vertex_elements = vec![Vec::with_capacity(2); n];
                for (e, dofs) in elems.iter().enumerate() {
                    for &d in dofs {
                        vertex_elements[d].push(e);
                    }
                }
                Ok(Mesh {
                    dim,
                    n,
                    h,
                    vertices,
                    elements: Elements::Intervals(elems),
                    vertex_elements,
                })
            }
            _ => {
                let mut vertices = Vec::with_capacity(n * n);
                for y in 0..n {
                    for x in 0..n {
                        vertices.push([x as f64 * h, y as f64 * h]);
                    }
                }
                let dof = |x: usize, y: usize| (y % n) * n + (x % n);
                let mut elems = Vec::with_capacity(2 * n * n);
                for j in 0..n {
                    for i in 0..n {
                        let (ll, lr) = (dof(i, j), dof(i + 1, j));
                        let (ur, ul) = (dof(i + 1, j + 1), dof(i, j + 1));
                        elems.push([ll, lr, ur]);
                        elems.push([ll, ur, ul]);
                    }
                }
                let mut vertex_elements = vec![Vec::with_capacity(6); n * n];
                for (e, dofs) in elems.iter().enumerate() {
                    for &d in dofs {
                        vertex_elements[d].push(e);
                    }
                }
                Ok(Mesh {
                    dim,
                    n,
                    h,
                    vertices,
                    elements: Elements::Triangles(elems),
                    vertex_elements,
                })
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Cells per side.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Cell side length `1 / n`.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn n_dofs(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_elements(&self) -> usize {
        match &self.elements {
            Elements::Intervals(v) => v.len(),
            Elements::Triangles(v) => v.len(),
        }
    }

    pub fn elements(&self) -> &Elements {
        &self.elements
    }

    pub fn vertex_coord(&self, v: usize) -> [f64; 2] {
        self.vertices[v]
    }

    pub fn element_dofs(&self, e: usize) -> &[usize] {
        match &self.elements {
            Elements::Intervals(v) => &v[e],
            Elements::Triangles(v) => &v[e],
        }
    }

    /// Unwrapped corner coordinates of element `e`, matching `element_dofs`
    /// order.
    pub fn element_coords(&self, e: usize) -> Vec<[f64; 2]> {
        let h = self.h;
        match self.dim {
            1 => {
                let x0 = e as f64 * h;
                vec![[x0, 0.0], [x0 + h, 0.0]]
            }
            _ => {
                let cell = e / 2;
                let (i, j) = ((cell % self.n) as f64, (cell / self.n) as f64);
                let (x0, y0) = (i * h, j * h);
                if e % 2 == 0 {
                    vec![[x0, y0], [x0 + h, y0], [x0 + h, y0 + h]]
                } else {
                    vec![[x0, y0], [x0 + h, y0 + h], [x0, y0 + h]]
                }
            }
        }
    }

    /// Length (1D) or area (2D) of element `e`.
    pub fn element_measure(&self, _e: usize) -> f64 {
        match self.dim {
            1 => self.h,
            _ => 0.5 * self.h * self.h,
        }
    }

    pub fn elements_at_vertex(&self, v: usize) -> &[usize] {
        &self.vertex_elements[v]
    }

    /// Nodal patch of `level` rings around `vertex`.
    ///
    /// Level 0 is the support of the nodal hat (all elements containing the
    /// vertex); each further level adds every element sharing at least one
    /// vertex with the current patch.  Saturates at the whole mesh.
    pub fn nodal_patch(&self, vertex: usize, level: usize) -> Patch {
        assert!(vertex < self.n_dofs(), "vertex {vertex} out of range");
        let mut elems: BTreeSet<usize> =
            self.vertex_elements[vertex].iter().copied().collect();
        for _ in 0..level {
            if elems.len() == self.n_elements() {
                break;
            }
            let mut verts: BTreeSet<usize> = BTreeSet::new();
            for &e in &elems {
                verts.extend(self.element_dofs(e).iter().copied());
            }
            let mut grown = elems.clone();
            for &v in &verts {
                grown.extend(self.vertex_elements[v].iter().copied());
            }
            elems = grown;
        }
        Patch {
            center_vertex: vertex,
            level,
            element_ids: elems,
        }
    }
}

/// A union of mesh elements grown around a vertex.
#[derive(Debug, Clone)]
pub struct Patch {
    pub center_vertex: usize,
    pub level: usize,
    pub element_ids: BTreeSet<usize>,
}

impl Patch {
    pub fn is_saturated(&self, mesh: &Mesh) -> bool {
        self.element_ids.len() == mesh.n_elements()
    }
}

/// Refinement ratio `fine.n / coarse.n`.
///
/// Errors unless the dimensions match and `coarse.n` divides `fine.n`; all
/// mesh transfer in this crate assumes exactly nested pairs.
pub fn refinement_ratio(fine: &Mesh, coarse: &Mesh) -> Result<usize> {
    if fine.dim() != coarse.dim() {
        return Err(Error::Mesh(format!(
            "dimension mismatch: fine is {}D, coarse is {}D",
            fine.dim(),
            coarse.dim()
        )));
    }
    if fine.n() % coarse.n() != 0 {
        return Err(Error::Mesh(format!(
            "fine mesh ({} cells/side) does not refine coarse mesh ({} cells/side)",
            fine.n(),
            coarse.n()
        )));
    }
    Ok(fine.n() / coarse.n())
}

/// Fine dofs strictly inside the region covered by `patch`.
///
/// Dofs on the patch boundary are excluded (they carry the homogeneous
/// Dirichlet condition of localized basis problems); if the patch covers the
/// whole mesh there is no boundary and every fine dof is returned.  The test
/// is exact: a fine dof is interior iff every coarse element whose closure
/// contains it belongs to the patch, decided in integer arithmetic on the
/// nested grids.
pub fn fine_dofs_in_patch(fine: &Mesh, coarse: &Mesh, patch: &Patch) -> Result<Vec<usize>> {
    let r = refinement_ratio(fine, coarse)?;
    let nc = coarse.n();
    let in_patch = |e: usize| patch.element_ids.contains(&e);
    let mut out = Vec::new();
    match fine.dim() {
        1 => {
            for d in 0..fine.n_dofs() {
                let (cx, a) = (d / r, d % r);
                let mut interior = in_patch(cx);
                if a == 0 {
                    interior = interior && in_patch((cx + nc - 1) % nc);
                }
                if interior {
                    out.push(d);
                }
            }
        }
        _ => {
            let nf = fine.n();
            // (cell coordinate, local offset in fine sub-units) pairs for one
            // axis; a dof on a coarse gridline touches both adjacent cells.
            let touches = |c: usize, o: usize| -> Vec<(usize, usize)> {
                let mut t = vec![(c, o)];
                if o == 0 {
                    t.push(((c + nc - 1) % nc, r));
                }
                t
            };
            for d in 0..fine.n_dofs() {
                let (xf, yf) = (d % nf, d / nf);
                let xt = touches(xf / r, xf % r);
                let yt = touches(yf / r, yf % r);
                let mut interior = true;
                'cells: for &(cx, la) in &xt {
                    for &(cy, lb) in &yt {
                        let cell = cy * nc + cx;
                        if lb <= la && !in_patch(2 * cell) {
                            interior = false;
                            break 'cells;
                        }
                        if lb >= la && !in_patch(2 * cell + 1) {
                            interior = false;
                            break 'cells;
                        }
                    }
                }
                if interior {
                    out.push(d);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_parameters() {
        assert!(Mesh::uniform_periodic(3, 8).is_err());
        assert!(Mesh::uniform_periodic(1, 1).is_err());
        assert!(Mesh::uniform_periodic(2, 0).is_err());
    }

    #[test]
    fn interval_mesh_layout() {
        let m = Mesh::uniform_periodic(1, 4).unwrap();
        assert_eq!(m.n_dofs(), 4);
        assert_eq!(m.n_elements(), 4);
        assert_eq!(m.h(), 0.25);
        assert_eq!(m.element_dofs(3), &[3, 0]);
        assert_eq!(m.element_coords(3)[1][0], 1.0);
        let total: f64 = (0..m.n_elements()).map(|e| m.element_measure(e)).sum();
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn triangle_mesh_layout() {
        let m = Mesh::uniform_periodic(2, 2).unwrap();
        assert_eq!(m.n_dofs(), 4);
        assert_eq!(m.n_elements(), 8);
        let total: f64 = (0..m.n_elements()).map(|e| m.element_measure(e)).sum();
        assert!((total - 1.0).abs() < 1e-15);
        // Every vertex of the periodic criss-cross grid touches 6 triangles.
        for v in 0..m.n_dofs() {
            assert_eq!(m.elements_at_vertex(v).len(), 6);
        }
        // Signed areas are positive (counter-clockwise orientation).
        for e in 0..m.n_elements() {
            let c = m.element_coords(e);
            let area = 0.5
                * ((c[1][0] - c[0][0]) * (c[2][1] - c[0][1])
                    - (c[2][0] - c[0][0]) * (c[1][1] - c[0][1]));
            assert!(area > 0.0);
        }
    }

    #[test]
    fn vertex_coordinates_are_grid_points() {
        let m = Mesh::uniform_periodic(1, 32).unwrap();
        for k in 0..32 {
            assert_eq!(m.vertex_coord(k)[0], k as f64 / 32.0);
        }
    }

    #[test]
    fn patch_growth_1d() {
        let m = Mesh::uniform_periodic(1, 8).unwrap();
        let p0 = m.nodal_patch(4, 0);
        assert_eq!(p0.element_ids, BTreeSet::from([3, 4]));
        let p1 = m.nodal_patch(4, 1);
        assert_eq!(p1.element_ids, BTreeSet::from([2, 3, 4, 5]));
        // Wraps around the periodic boundary.
        let p0w = m.nodal_patch(0, 1);
        assert_eq!(p0w.element_ids, BTreeSet::from([6, 7, 0, 1]));
    }

    #[test]
    fn patch_saturates() {
        let m = Mesh::uniform_periodic(1, 4).unwrap();
        let p = m.nodal_patch(1, 2);
        assert!(p.is_saturated(&m));
        let p_more = m.nodal_patch(1, 9);
        assert!(p_more.is_saturated(&m));
    }

    #[test]
    fn patches_nest() {
        let m = Mesh::uniform_periodic(2, 6).unwrap();
        for v in [0usize, 7, 35] {
            let mut prev = m.nodal_patch(v, 0);
            for l in 1..4 {
                let next = m.nodal_patch(v, l);
                assert!(prev.element_ids.is_subset(&next.element_ids));
                prev = next;
            }
        }
    }

    #[test]
    fn patch_level0_is_hat_support_2d() {
        let m = Mesh::uniform_periodic(2, 4).unwrap();
        let v = 5; // (x, y) = (1, 1)
        let p = m.nodal_patch(v, 0);
        assert_eq!(p.element_ids.len(), 6);
        for &e in &p.element_ids {
            assert!(m.element_dofs(e).contains(&v));
        }
    }

    #[test]
    fn interior_dofs_1d() {
        let fine = Mesh::uniform_periodic(1, 16).unwrap();
        let coarse = Mesh::uniform_periodic(1, 4).unwrap();
        // Patch around vertex 1 covers [0, 0.5]; interior dofs are 1..=7.
        let p = coarse.nodal_patch(1, 0);
        let dofs = fine_dofs_in_patch(&fine, &coarse, &p).unwrap();
        assert_eq!(dofs, vec![1, 2, 3, 4, 5, 6, 7]);
    }

    #[test]
    fn saturated_patch_keeps_all_dofs() {
        let fine = Mesh::uniform_periodic(1, 16).unwrap();
        let coarse = Mesh::uniform_periodic(1, 4).unwrap();
        let p = coarse.nodal_patch(1, 2);
        assert!(p.is_saturated(&coarse));
        let dofs = fine_dofs_in_patch(&fine, &coarse, &p).unwrap();
        assert_eq!(dofs.len(), fine.n_dofs());
    }

    #[test]
    fn rejects_non_nested_pair() {
        let fine = Mesh::uniform_periodic(1, 9).unwrap();
        let coarse = Mesh::uniform_periodic(1, 4).unwrap();
        let p = coarse.nodal_patch(0, 0);
        assert!(fine_dofs_in_patch(&fine, &coarse, &p).is_err());
        let fine2 = Mesh::uniform_periodic(2, 8).unwrap();
        assert!(refinement_ratio(&fine2, &coarse).is_err());
    }

    /// Brute-force float point location oracle for the 2D interior test.
    #[test]
    fn interior_dofs_2d_match_point_location() {
        let fine = Mesh::uniform_periodic(2, 8).unwrap();
        let coarse = Mesh::uniform_periodic(2, 4).unwrap();
        let inside_closed = |p: [f64; 2], tri: &[[f64; 2]]| -> bool {
            // Barycentric sign test with exact dyadic arithmetic.
            let cross = |a: [f64; 2], b: [f64; 2], c: [f64; 2]| {
                (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
            };
            let d0 = cross(tri[0], tri[1], p);
            let d1 = cross(tri[1], tri[2], p);
            let d2 = cross(tri[2], tri[0], p);
            d0 >= 0.0 && d1 >= 0.0 && d2 >= 0.0
        };
        for (v, level) in [(5usize, 0usize), (0, 0), (10, 1), (3, 0)] {
            let patch = coarse.nodal_patch(v, level);
            let got = fine_dofs_in_patch(&fine, &coarse, &patch).unwrap();
            let mut expect = Vec::new();
            for d in 0..fine.n_dofs() {
                let p = fine.vertex_coord(d);
                let mut interior = true;
                // Periodic copies of the query point against every element.
                for e in 0..coarse.n_elements() {
                    let tri = coarse.element_coords(e);
                    for sx in [-1.0, 0.0, 1.0] {
                        for sy in [-1.0, 0.0, 1.0] {
                            let q = [p[0] + sx, p[1] + sy];
                            if inside_closed(q, &tri) && !patch.element_ids.contains(&e) {
                                interior = false;
                            }
                        }
                    }
                }
                if interior {
                    expect.push(d);
                }
            }
            assert_eq!(got, expect, "vertex {v} level {level}");
        }
    }
}
