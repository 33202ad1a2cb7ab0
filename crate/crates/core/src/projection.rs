//! Reduced-rank projection matrices for the spatial random effect.
//!
//! Areal data: leading eigenvectors of the Moran operator `H⊥ D H⊥`, where
//! `H⊥` projects onto the orthogonal complement of the covariate design.
//! Point-level data: a triangular mesh over the domain, the Moran operator of
//! the mesh graph `(I − 11ᵀ/m) N (I − 11ᵀ/m)`, and piecewise-linear
//! interpolation `A` from mesh vertices to sites, giving `P = A M`.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)] // needed when std is not linked
use num_traits::Float;

use crate::error::{ensure_dim, Error, Result};
use crate::linalg::sym_eigen_desc;
use crate::spatial::{icar_precision, validate_adjacency};

/// Structured triangular mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    /// `m × 2`.
    pub vertices: DMatrix<f64>,
    pub triangles: Vec<[usize; 3]>,
    /// `m × m` binary adjacency: vertices sharing a triangle edge.
    pub graph_adjacency: DMatrix<f64>,
}

impl Mesh {
    pub fn n_vertices(&self) -> usize {
        self.vertices.nrows()
    }

    fn vertex(&self, i: usize) -> (f64, f64) {
        (self.vertices[(i, 0)], self.vertices[(i, 1)])
    }

    /// Barycentric coordinates of `(x, y)` in triangle `t`.
    pub fn barycentric(&self, t: usize, x: f64, y: f64) -> [f64; 3] {
        let [a, b, c] = self.triangles[t];
        let (ax, ay) = self.vertex(a);
        let (bx, by) = self.vertex(b);
        let (cx, cy) = self.vertex(c);
        let det = (by - cy) * (ax - cx) + (cx - bx) * (ay - cy);
        let l1 = ((by - cy) * (x - cx) + (cx - bx) * (y - cy)) / det;
        let l2 = ((cy - ay) * (x - cx) + (ax - cx) * (y - cy)) / det;
        [l1, l2, 1.0 - l1 - l2]
    }

    /// Lowest-index triangle containing the point, if any.
    pub fn locate(&self, x: f64, y: f64) -> Option<usize> {
        const TOL: f64 = 1e-12;
        (0..self.triangles.len()).find(|&t| self.barycentric(t, x, y).iter().all(|l| *l >= -TOL))
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let (ax, ay) = self.vertex(a);
        let (bx, by) = self.vertex(b);
        let (cx, cy) = self.vertex(c);
        0.5 * ((bx - ax) * (cy - ay) - (cx - ax) * (by - ay))
    }
}

/// Axis-aligned bounding box `(xmin, ymin, xmax, ymax)` of `coords` (n × 2).
pub fn bounding_box(coords: &DMatrix<f64>) -> (f64, f64, f64, f64) {
    let mut b = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for i in 0..coords.nrows() {
        b.0 = b.0.min(coords[(i, 0)]);
        b.1 = b.1.min(coords[(i, 1)]);
        b.2 = b.2.max(coords[(i, 0)]);
        b.3 = b.3.max(coords[(i, 1)]);
    }
    b
}

/// Structured mesh over `bbox` expanded by `margin`: a square lattice with
/// spacing at most `max_edge` in each direction, each cell split into two
/// right triangles along its lower-left to upper-right diagonal. Vertices are
/// numbered row by row from the lower-left corner.
pub fn build_mesh(bbox: (f64, f64, f64, f64), max_edge: f64, margin: f64) -> Result<Mesh> {
    if !(max_edge > 0.0) || !(margin >= 0.0) {
        return Err(Error::InvalidArgument("max_edge must be positive and margin nonnegative".into()));
    }
    let (x0, y0) = (bbox.0 - margin, bbox.1 - margin);
    let (x1, y1) = (bbox.2 + margin, bbox.3 + margin);
    let (w, h) = (x1 - x0, y1 - y0);
    if !(w > 0.0 && h > 0.0) || !w.is_finite() || !h.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "degenerate mesh domain {w} × {h}; add a margin or check coordinates"
        )));
    }
    let nx = ((w / max_edge) - 1e-9).ceil().max(1.0) as usize;
    let ny = ((h / max_edge) - 1e-9).ceil().max(1.0) as usize;
    let m = (nx + 1) * (ny + 1);
    let idx = |i: usize, j: usize| j * (nx + 1) + i;
    let vertices = DMatrix::from_fn(m, 2, |v, c| {
        let (i, j) = (v % (nx + 1), v / (nx + 1));
        if c == 0 {
            if i == nx { x1 } else { x0 + w * i as f64 / nx as f64 }
        } else if j == ny {
            y1
        } else {
            y0 + h * j as f64 / ny as f64
        }
    });
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    let mut adj = DMatrix::zeros(m, m);
    for t in &triangles {
        for (p, q) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
            adj[(p, q)] = 1.0;
            adj[(q, p)] = 1.0;
        }
    }
    Ok(Mesh {
        vertices,
        triangles,
        graph_adjacency: adj,
    })
}

/// Piecewise-linear interpolation weights from mesh vertices to locations
/// (q × m). Each row holds the barycentric coordinates of the containing
/// triangle (lowest triangle index on shared edges).
pub fn interpolation_matrix(mesh: &Mesh, locations: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    ensure_dim("location columns", 2, locations.ncols())?;
    let q = locations.nrows();
    let mut a = DMatrix::zeros(q, mesh.n_vertices());
    let mut outside = Vec::new();
    for i in 0..q {
        let (x, y) = (locations[(i, 0)], locations[(i, 1)]);
        match mesh.locate(x, y) {
            Some(t) => {
                let mut l = mesh.barycentric(t, x, y).map(|v| v.clamp(0.0, 1.0));
                let s: f64 = l.iter().sum();
                l.iter_mut().for_each(|v| *v /= s);
                for (k, &v) in mesh.triangles[t].iter().enumerate() {
                    a[(i, v)] += l[k];
                }
            }
            None => outside.push(i),
        }
    }
    if outside.is_empty() {
        Ok(a)
    } else {
        Err(Error::OutsideMesh(outside))
    }
}

/// Rank-`p` projection for the spatial random effect.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionBasis {
    /// `n × p`.
    pub p_matrix: DMatrix<f64>,
    pub rank: usize,
    /// Retained Moran eigenvalues, non-increasing.
    pub eigenvalues: Vec<f64>,
    pub mesh: Option<Mesh>,
    /// `m × p` mesh eigenvectors (point-level only).
    pub m_matrix: Option<DMatrix<f64>>,
    /// `n × m` interpolation weights (point-level only).
    pub a_matrix: Option<DMatrix<f64>>,
    /// `p × p` ICAR-type prior precision structure for δ: `PᵀQP` (areal) or
    /// `MᵀQ_mesh M` (point-level).
    pub delta_precision: DMatrix<f64>,
}

impl ProjectionBasis {
    /// Projection rows for new locations (point-level): `A_{s*} M`.
    pub fn project_locations(&self, locations: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match (&self.mesh, &self.m_matrix) {
            (Some(mesh), Some(m)) => Ok(interpolation_matrix(mesh, locations)? * m),
            _ => Err(Error::InvalidArgument(
                "areal projections cannot be evaluated at new locations".into(),
            )),
        }
    }
}

/// Smallest `p` whose leading eigenvalues reach `fraction` of the total
/// positive eigenvalue mass.
pub fn rank_for_variance(eigenvalues: &[f64], fraction: f64) -> usize {
    let total: f64 = eigenvalues.iter().filter(|v| **v > 0.0).sum();
    if total <= 0.0 {
        return 1;
    }
    let mut acc = 0.0;
    for (i, v) in eigenvalues.iter().enumerate() {
        if *v <= 0.0 {
            return i.max(1);
        }
        acc += v;
        if acc >= fraction * total * (1.0 - 1e-12) {
            return i + 1;
        }
    }
    eigenvalues.len()
}

/// `H⊥ D H⊥` with `H = X(XᵀX)⁻¹Xᵀ`.
pub fn moran_operator_areal(x_coef: &DMatrix<f64>, d: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = x_coef.nrows();
    let g = x_coef.ncols();
    validate_adjacency(d)?;
    ensure_dim("adjacency size", n, d.nrows())?;
    let xtx = x_coef.transpose() * x_coef;
    let eig = xtx.clone().symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(*v));
    let rank = eig.eigenvalues.iter().filter(|v| **v > 1e-10 * top).count();
    if rank < g || top <= 0.0 {
        return Err(Error::RankDeficient { rank, required: g });
    }
    let inv = xtx
        .cholesky()
        .ok_or(Error::RankDeficient { rank, required: g })?
        .inverse();
    let h = x_coef * inv * x_coef.transpose();
    let h_perp = DMatrix::identity(n, n) - h;
    Ok(&h_perp * d * &h_perp)
}

/// Areal projection from the leading `p` Moran eigenvectors.
pub fn moran_basis_areal(x_coef: &DMatrix<f64>, d: &DMatrix<f64>, p: usize) -> Result<ProjectionBasis> {
    let n = x_coef.nrows();
    let g = x_coef.ncols();
    if p == 0 || p + g > n {
        return Err(Error::InvalidArgument(format!(
            "rank {p} must satisfy 1 <= p <= n - g_n = {}",
            n.saturating_sub(g)
        )));
    }
    let op = moran_operator_areal(x_coef, d)?;
    let (vals, vecs) = sym_eigen_desc(&op);
    let p_matrix = vecs.columns(0, p).into_owned();
    let q = icar_precision(d)?;
    let delta_precision = p_matrix.transpose() * q * &p_matrix;
    Ok(ProjectionBasis {
        rank: p,
        eigenvalues: vals.iter().take(p).copied().collect(),
        p_matrix,
        mesh: None,
        m_matrix: None,
        a_matrix: None,
        delta_precision,
    })
}

/// Centered mesh-graph Moran operator `(I − 11ᵀ/m) N (I − 11ᵀ/m)`.
pub fn moran_operator_mesh(mesh: &Mesh) -> DMatrix<f64> {
    let m = mesh.n_vertices();
    let c = DMatrix::identity(m, m) - DMatrix::from_element(m, m, 1.0 / m as f64);
    &c * &mesh.graph_adjacency * &c
}

/// Leading `p` eigenvectors (and eigenvalues) of the mesh Moran operator.
pub fn moran_basis_point(mesh: &Mesh, p: usize) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let m = mesh.n_vertices();
    if p == 0 || p + 1 > m {
        return Err(Error::InvalidArgument(format!(
            "rank {p} must satisfy 1 <= p <= m - 1 = {}",
            m.saturating_sub(1)
        )));
    }
    let (vals, vecs) = sym_eigen_desc(&moran_operator_mesh(mesh));
    Ok((vecs.columns(0, p).into_owned(), vals.iter().take(p).copied().collect()))
}

fn spectrum_desc(op: DMatrix<f64>) -> Vec<f64> {
    let mut vals: Vec<f64> = op.symmetric_eigenvalues().iter().copied().collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    vals
}

/// Full mesh Moran spectrum in non-increasing order, for rank selection.
pub fn mesh_moran_eigenvalues(mesh: &Mesh) -> Vec<f64> {
    spectrum_desc(moran_operator_mesh(mesh))
}

/// Full areal Moran spectrum in non-increasing order, for rank selection.
pub fn areal_moran_eigenvalues(x_coef: &DMatrix<f64>, d: &DMatrix<f64>) -> Result<Vec<f64>> {
    Ok(spectrum_desc(moran_operator_areal(x_coef, d)?))
}

/// Point-level projection `P = A M`.
pub fn projection_point(mesh: &Mesh, locations: &DMatrix<f64>, p: usize) -> Result<ProjectionBasis> {
    let a = interpolation_matrix(mesh, locations)?;
    let (m_matrix, eigenvalues) = moran_basis_point(mesh, p)?;
    let q_mesh = icar_precision(&mesh.graph_adjacency)?;
    let delta_precision = m_matrix.transpose() * q_mesh * &m_matrix;
    Ok(ProjectionBasis {
        p_matrix: &a * &m_matrix,
        rank: p,
        eigenvalues,
        mesh: Some(mesh.clone()),
        m_matrix: Some(m_matrix),
        a_matrix: Some(a),
        delta_precision,
    })
}

/// Eigen-residual `‖Op·v − λv‖` of every retained pair.
pub fn eigen_residuals(op: &DMatrix<f64>, vectors: &DMatrix<f64>, values: &[f64]) -> Vec<f64> {
    (0..values.len())
        .map(|c| {
            let v: DVector<f64> = vectors.column(c).into_owned();
            (op * &v - &v * values[c]).norm()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_lattice_counts() {
        let mesh = build_mesh((0.0, 0.0, 1.0, 1.0), 0.5, 0.0).unwrap();
        assert_eq!(mesh.n_vertices(), 9);
        assert_eq!(mesh.triangles.len(), 8);
        for t in 0..8 {
            assert!(mesh.triangle_area(t) > 0.0);
        }
        let n = &mesh.graph_adjacency;
        assert_eq!(n, &n.transpose());
        assert!((0..9).all(|i| n[(i, i)] == 0.0));
        // center vertex touches all but the two off-diagonal corners
        assert_eq!(n.row(4).sum(), 6.0);
    }

    #[test]
    fn degenerate_domain_rejected() {
        assert!(build_mesh((0.0, 0.0, 1.0, 0.0), 0.1, 0.0).is_err());
        assert!(build_mesh((0.0, 0.0, 1.0, 1.0), 0.0, 0.0).is_err());
    }

    #[test]
    fn interpolation_vertex_and_centroid() {
        let mesh = build_mesh((0.0, 0.0, 1.0, 1.0), 0.5, 0.0).unwrap();
        let locs = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 1.0 / 3.0 * 0.5 + 0.5 * 2.0 / 3.0, 0.5 / 3.0]);
        // second point: centroid of triangle [(0,0),(0.5,0),(0.5,0.5)]
        let locs = DMatrix::from_row_slice(2, 2, &[locs[(0, 0)], locs[(0, 1)], 1.0 / 3.0, 1.0 / 6.0]);
        let a = interpolation_matrix(&mesh, &locs).unwrap();
        assert_eq!(a[(0, 4)], 1.0);
        assert!((a.row(0).sum() - 1.0).abs() < 1e-15);
        for v in [0usize, 1, 4] {
            assert!((a[(1, v)] - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn outside_points_are_listed() {
        let mesh = build_mesh((0.0, 0.0, 1.0, 1.0), 0.5, 0.0).unwrap();
        let locs = DMatrix::from_row_slice(3, 2, &[0.2, 0.2, 1.5, 0.2, -0.1, 0.0]);
        assert_eq!(interpolation_matrix(&mesh, &locs), Err(Error::OutsideMesh(alloc::vec![1, 2])));
    }

    #[test]
    fn rank_by_variance() {
        assert_eq!(rank_for_variance(&[5.0, 3.0, 1.0, 1.0, -2.0], 0.8), 2);
        assert_eq!(rank_for_variance(&[5.0, 3.0, 1.0, 1.0, -2.0], 0.9), 3);
    }
}
