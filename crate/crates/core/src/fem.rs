//! Q1 bilinear finite elements on the fine mesh: stiffness, mass and weighted
//! mass operators, load vectors, and the coarse partition of unity that
//! defines the spectral weight `κ̃`.
//!
//! Element integrals are exact for cell-constant coefficients: the 4×4 Q1
//! matrices are tensor products of the 1D linear-element stiffness
//! `(1/h)[1 -1; -1 1]` and mass `(h/6)[2 1; 1 2]`.

use std::io::{self, Write};

use thiserror::Error;

use crate::coefficient::PermeabilityField;
use crate::grid::{DofMap, FineMesh, GridHierarchy};
use crate::linalg::{CsrMatrix, LinalgError, SkylineCholesky};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FemError {
    #[error("cannot assemble on an empty DOF set")]
    EmptyDofSet,
    #[error("coefficient has {found} cell values, mesh has {expected} cells")]
    Dimension { expected: usize, found: usize },
    #[error("negative weight {value} on cell {cell}")]
    NegativeWeight { cell: usize, value: f64 },
    #[error("local harmonic solve for coarse node {node} failed: {source}")]
    SingularLocalSolve { node: usize, source: LinalgError },
}

/// Local vertex order: counter-clockwise from the lower-left corner.
const LOCAL_IJ: [(usize, usize); 4] = [(0, 0), (1, 0), (1, 1), (0, 1)];

fn stiffness_1d(h: f64) -> [[f64; 2]; 2] {
    [[1.0 / h, -1.0 / h], [-1.0 / h, 1.0 / h]]
}

fn mass_1d(h: f64) -> [[f64; 2]; 2] {
    [[h / 3.0, h / 6.0], [h / 6.0, h / 3.0]]
}

/// `∫ ∇φ_a · ∇φ_b` over an `hx × hy` cell.
pub fn q1_element_stiffness(hx: f64, hy: f64) -> [[f64; 4]; 4] {
    let (kx, ky, mx, my) = (stiffness_1d(hx), stiffness_1d(hy), mass_1d(hx), mass_1d(hy));
    let mut k = [[0.0; 4]; 4];
    for (a, &(ia, ja)) in LOCAL_IJ.iter().enumerate() {
        for (b, &(ib, jb)) in LOCAL_IJ.iter().enumerate() {
            k[a][b] = kx[ia][ib] * my[ja][jb] + mx[ia][ib] * ky[ja][jb];
        }
    }
    k
}

/// `∫ φ_a φ_b` over an `hx × hy` cell.
pub fn q1_element_mass(hx: f64, hy: f64) -> [[f64; 4]; 4] {
    let (mx, my) = (mass_1d(hx), mass_1d(hy));
    let mut m = [[0.0; 4]; 4];
    for (a, &(ia, ja)) in LOCAL_IJ.iter().enumerate() {
        for (b, &(ib, jb)) in LOCAL_IJ.iter().enumerate() {
            m[a][b] = mx[ia][ib] * my[ja][jb];
        }
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    /// `a(u, v) = ∫ κ ∇u·∇v`
    Stiffness,
    /// `(u, v) = ∫ u v`
    Mass,
    /// `s(u, v) = ∫ κ̃ u v`
    WeightedMass,
}

#[derive(Debug, Clone)]
pub struct SymmetricSparseOperator<T> {
    pub kind: OperatorKind,
    pub matrix: CsrMatrix<T>,
}

impl<T: Scalar> SymmetricSparseOperator<T> {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn write_coordinate<W: Write>(&self, w: W) -> io::Result<()> {
        self.matrix.write_coordinate(w)
    }
}

fn assemble<T: Scalar>(
    mesh: &FineMesh,
    dofs: &DofMap,
    cells: Option<&[usize]>,
    element: &[[f64; 4]; 4],
    weight: impl Fn(usize) -> f64,
) -> CsrMatrix<T> {
    let mut triplets = Vec::new();
    let mut visit = |cell: usize| {
        let w = weight(cell);
        let local = mesh.cell_nodes(cell).map(|n| dofs.local(n));
        if w == 0.0 || local.iter().all(Option::is_none) {
            return;
        }
        for a in 0..4 {
            let Some(ra) = local[a] else { continue };
            for b in 0..4 {
                if let Some(rb) = local[b] {
                    triplets.push((ra, rb, T::lit(w * element[a][b])));
                }
            }
        }
    };
    match cells {
        Some(cs) => cs.iter().copied().for_each(&mut visit),
        None => (0..mesh.num_cells()).for_each(&mut visit),
    }
    CsrMatrix::from_triplets(dofs.len(), dofs.len(), triplets)
}

/// Stiffness form restricted to `dofs` (homogeneous Dirichlet elimination of
/// every other node), integrated over `cells` or the whole mesh.
pub fn assemble_stiffness<T: Scalar>(
    mesh: &FineMesh,
    field: &PermeabilityField,
    dofs: &DofMap,
    cells: Option<&[usize]>,
) -> Result<SymmetricSparseOperator<T>, FemError> {
    if dofs.is_empty() {
        return Err(FemError::EmptyDofSet);
    }
    if field.values().len() != mesh.num_cells() {
        return Err(FemError::Dimension { expected: mesh.num_cells(), found: field.values().len() });
    }
    let k = q1_element_stiffness(mesh.hx(), mesh.hy());
    let kappa = field.values();
    Ok(SymmetricSparseOperator { kind: OperatorKind::Stiffness, matrix: assemble(mesh, dofs, cells, &k, |c| kappa[c]) })
}

/// Consistent mass with an optional cell-constant weight (`None` = unit).
pub fn assemble_mass<T: Scalar>(
    mesh: &FineMesh,
    dofs: &DofMap,
    weight: Option<&[f64]>,
    cells: Option<&[usize]>,
) -> Result<SymmetricSparseOperator<T>, FemError> {
    if dofs.is_empty() {
        return Err(FemError::EmptyDofSet);
    }
    let m = q1_element_mass(mesh.hx(), mesh.hy());
    match weight {
        None => Ok(SymmetricSparseOperator { kind: OperatorKind::Mass, matrix: assemble(mesh, dofs, cells, &m, |_| 1.0) }),
        Some(w) => {
            if w.len() != mesh.num_cells() {
                return Err(FemError::Dimension { expected: mesh.num_cells(), found: w.len() });
            }
            if let Some((cell, &value)) = w.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
                return Err(FemError::NegativeWeight { cell, value });
            }
            Ok(SymmetricSparseOperator {
                kind: OperatorKind::WeightedMass,
                matrix: assemble(mesh, dofs, cells, &m, |c| w[c]),
            })
        }
    }
}

const GAUSS3: [(f64, f64); 3] = [
    (-0.774_596_669_241_483_4, 5.0 / 9.0),
    (0.0, 8.0 / 9.0),
    (0.774_596_669_241_483_4, 5.0 / 9.0),
];

/// Load vector `(f, φ_i)` by 3×3 Gauss quadrature per cell.
pub fn assemble_load(mesh: &FineMesh, dofs: &DofMap, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let (hx, hy) = (mesh.hx(), mesh.hy());
    let mut b = vec![0.0; dofs.len()];
    for cell in 0..mesh.num_cells() {
        let nodes = mesh.cell_nodes(cell);
        let local = nodes.map(|n| dofs.local(n));
        if local.iter().all(Option::is_none) {
            continue;
        }
        let (cx, cy) = mesh.cell_ij(cell);
        let (x0, y0) = (cx as f64 * hx, cy as f64 * hy);
        let mut acc = [0.0; 4];
        for &(gy, wy) in &GAUSS3 {
            let eta = 0.5 * (gy + 1.0);
            for &(gx, wx) in &GAUSS3 {
                let xi = 0.5 * (gx + 1.0);
                let w = 0.25 * wx * wy * hx * hy;
                let fv = f(x0 + xi * hx, y0 + eta * hy) * w;
                acc[0] += fv * (1.0 - xi) * (1.0 - eta);
                acc[1] += fv * xi * (1.0 - eta);
                acc[2] += fv * xi * eta;
                acc[3] += fv * (1.0 - xi) * eta;
            }
        }
        for a in 0..4 {
            if let Some(r) = local[a] {
                b[r] += acc[a];
            }
        }
    }
    b
}

/// Exact load vector of a cell-constant source.
pub fn assemble_load_cellwise(mesh: &FineMesh, dofs: &DofMap, values: &[f64]) -> Vec<f64> {
    let quarter = 0.25 * mesh.hx() * mesh.hy();
    let mut b = vec![0.0; dofs.len()];
    for (cell, &v) in values.iter().enumerate() {
        for n in mesh.cell_nodes(cell) {
            if let Some(r) = dofs.local(n) {
                b[r] += v * quarter;
            }
        }
    }
    b
}

/// Cell average of the gradient of a Q1 function given its corner values in
/// local vertex order.
#[inline]
pub fn cell_average_gradient(v: [f64; 4], hx: f64, hy: f64) -> (f64, f64) {
    (((v[1] - v[0]) + (v[2] - v[3])) / (2.0 * hx), ((v[3] - v[0]) + (v[2] - v[1])) / (2.0 * hy))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PouKind {
    /// Coarse bilinear hat functions.
    #[default]
    Bilinear,
    /// κ-harmonic extensions of linear edge data on each coarse element.
    Msfem,
}

/// One partition-of-unity function, stored on the closed neighbourhood
/// `ω_j` (row-major nodes of the 2×2 coarse block around `x_j`).
#[derive(Debug, Clone, PartialEq)]
pub struct NodalFunction {
    pub nodes: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PartitionOfUnity {
    pub kind: PouKind,
    /// One function per interior coarse node.
    pub functions: Vec<NodalFunction>,
    /// `κ̃ = Σ_j κ |∇χ_j|²` per fine cell, with cell-averaged gradients.
    pub kappa_tilde: Vec<f64>,
}

impl PartitionOfUnity {
    /// `Σ_j χ_j` at every fine node.
    pub fn sum_at_nodes(&self, num_nodes: usize) -> Vec<f64> {
        let mut s = vec![0.0; num_nodes];
        for f in &self.functions {
            for (&n, &v) in f.nodes.iter().zip(&f.values) {
                s[n] += v;
            }
        }
        s
    }
}

fn hat(i: usize, center: usize, ratio: usize) -> f64 {
    let d = i.abs_diff(center) as f64 / ratio as f64;
    (1.0 - d).max(0.0)
}

pub fn build_partition_of_unity(
    hier: &GridHierarchy,
    field: &PermeabilityField,
    kind: PouKind,
) -> Result<PartitionOfUnity, FemError> {
    let fine = &hier.fine;
    if field.values().len() != fine.num_cells() {
        return Err(FemError::Dimension { expected: fine.num_cells(), found: field.values().len() });
    }
    let (rx, ry) = (hier.coarse.ratio_x, hier.coarse.ratio_y);
    let mut functions = Vec::with_capacity(hier.neighborhoods().len());
    for nb in hier.neighborhoods() {
        let (px, py) = nb.position;
        let block = crate::grid::CoarseBlock { x0: px - 1, x1: px + 1, y0: py - 1, y1: py + 1 };
        let nodes = hier.block_nodes(block);
        let mut values: Vec<f64> = nodes
            .iter()
            .map(|&n| {
                let (ix, iy) = fine.node_ij(n);
                hat(ix, px * rx, rx) * hat(iy, py * ry, ry)
            })
            .collect();
        if kind == PouKind::Msfem {
            let closure = DofMap::new(fine.num_nodes(), nodes.clone());
            for &e in &nb.elements {
                let eb = hier.element_block(e);
                let cells = hier.block_cells(eb);
                let knodes = hier.block_nodes(eb);
                let kmap = DofMap::new(fine.num_nodes(), knodes.clone());
                let a = assemble_stiffness::<f64>(fine, field, &kmap, Some(&cells))?.matrix;
                let interior = hier.block_interior_nodes(eb);
                if interior.is_empty() {
                    continue;
                }
                let g: Vec<f64> = knodes
                    .iter()
                    .map(|&n| if interior.contains(&n) { 0.0 } else { values[closure.local(n).unwrap()] })
                    .collect();
                let ag = a.mul_vec(&g);
                let ii: Vec<usize> = interior.iter().map(|&n| kmap.local(n).unwrap()).collect();
                let aii = a.principal_submatrix(&ii);
                let rhs: Vec<f64> = ii.iter().map(|&l| -ag[l]).collect();
                let chol = SkylineCholesky::factor(&aii)
                    .map_err(|source| FemError::SingularLocalSolve { node: nb.node, source })?;
                let sol = chol.solve(&rhs);
                for (&n, v) in interior.iter().zip(sol) {
                    values[closure.local(n).unwrap()] = v;
                }
            }
        }
        functions.push(NodalFunction { nodes, values });
    }

    let (hx, hy) = (fine.hx(), fine.hy());
    let kappa = field.values();
    let mut grad_sq = vec![0.0; fine.num_cells()];
    let mut buf = vec![0.0; fine.num_nodes()];
    for (f, nb) in functions.iter().zip(hier.neighborhoods()) {
        for (&n, &v) in f.nodes.iter().zip(&f.values) {
            buf[n] = v;
        }
        let (px, py) = nb.position;
        let block = crate::grid::CoarseBlock { x0: px - 1, x1: px + 1, y0: py - 1, y1: py + 1 };
        for cell in hier.block_cells(block) {
            let v = fine.cell_nodes(cell).map(|n| buf[n]);
            let (gx, gy) = cell_average_gradient(v, hx, hy);
            grad_sq[cell] += gx * gx + gy * gy;
        }
        for &n in &f.nodes {
            buf[n] = 0.0;
        }
    }
    let kappa_tilde = grad_sq.iter().zip(kappa).map(|(g, k)| g * k).collect();
    Ok(PartitionOfUnity { kind, functions, kappa_tilde })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficient::{generate_channels, ChannelLayout};
    use crate::grid::build_hierarchy;

    /// Independent oracle: tensor Gauss quadrature of bilinear shape functions.
    fn quadrature_element(hx: f64, hy: f64) -> ([[f64; 4]; 4], [[f64; 4]; 4]) {
        let shape = |xi: f64, eta: f64| {
            [
                ((1.0 - xi) * (1.0 - eta), (-(1.0 - eta) / hx, -(1.0 - xi) / hy)),
                (xi * (1.0 - eta), ((1.0 - eta) / hx, -xi / hy)),
                (xi * eta, (eta / hx, xi / hy)),
                ((1.0 - xi) * eta, (-eta / hx, (1.0 - xi) / hy)),
            ]
        };
        let mut k = [[0.0; 4]; 4];
        let mut m = [[0.0; 4]; 4];
        for &(gy, wy) in &GAUSS3 {
            for &(gx, wx) in &GAUSS3 {
                let s = shape(0.5 * (gx + 1.0), 0.5 * (gy + 1.0));
                let w = 0.25 * wx * wy * hx * hy;
                for a in 0..4 {
                    for b in 0..4 {
                        k[a][b] += w * (s[a].1 .0 * s[b].1 .0 + s[a].1 .1 * s[b].1 .1);
                        m[a][b] += w * s[a].0 * s[b].0;
                    }
                }
            }
        }
        (k, m)
    }

    #[test]
    fn element_matrices_match_quadrature() {
        for (hx, hy) in [(0.5, 0.5), (0.1, 0.25), (1.0 / 3.0, 0.02)] {
            let (kq, mq) = quadrature_element(hx, hy);
            let (k, m) = (q1_element_stiffness(hx, hy), q1_element_mass(hx, hy));
            for a in 0..4 {
                for b in 0..4 {
                    assert!((k[a][b] - kq[a][b]).abs() < 1e-12 * (1.0 + kq[a][b].abs()));
                    assert!((m[a][b] - mq[a][b]).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn single_interior_node_values() {
        let mesh = FineMesh { nx: 2, ny: 2 };
        let field = PermeabilityField::homogeneous(2, 2, 1.0).unwrap();
        let dofs = DofMap::interior(&mesh);
        let a = assemble_stiffness::<f64>(&mesh, &field, &dofs, None).unwrap();
        assert_eq!(a.dim(), 1);
        // oracle: 4 cells × quadrature diagonal
        let (kq, mq) = quadrature_element(0.5, 0.5);
        let expected = 4.0 * kq[0][0];
        assert!((a.matrix.get(0, 0) - expected).abs() < 1e-14);
        assert!((a.matrix.get(0, 0) - 8.0 / 3.0).abs() < 1e-14);
        let m = assemble_mass::<f64>(&mesh, &dofs, None, None).unwrap();
        assert!((m.matrix.get(0, 0) - 4.0 * mq[0][0]).abs() < 1e-15);
        assert!((m.matrix.get(0, 0) - 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn mass_integrates_one_and_scales() {
        let mesh = FineMesh { nx: 7, ny: 5 };
        let m = assemble_mass::<f64>(&mesh, &DofMap::all(&mesh), None, None).unwrap();
        let total: f64 = m.matrix.values().iter().sum();
        assert!((total - 1.0).abs() < 1e-13);
        let w = vec![2.0; mesh.num_cells()];
        let m2 = assemble_mass::<f64>(&mesh, &DofMap::all(&mesh), Some(&w), None).unwrap();
        for (a, b) in m.matrix.values().iter().zip(m2.matrix.values()) {
            assert_eq!(2.0 * a, *b);
        }
        let mut bad = w.clone();
        bad[3] = -1.0;
        assert_eq!(
            assemble_mass::<f64>(&mesh, &DofMap::all(&mesh), Some(&bad), None).unwrap_err(),
            FemError::NegativeWeight { cell: 3, value: -1.0 }
        );
    }

    #[test]
    fn stiffness_kernel_and_bilinearity() {
        let mesh = FineMesh { nx: 12, ny: 12 };
        let field = generate_channels(12, 12, 1.0, 100.0, ChannelLayout::default()).unwrap();
        let all = DofMap::all(&mesh);
        let a = assemble_stiffness::<f64>(&mesh, &field, &all, None).unwrap();
        let ones = vec![1.0; all.len()];
        assert!(a.matrix.mul_vec(&ones).iter().all(|v| v.abs() < 1e-11));
        let doubled =
            PermeabilityField::new(12, 12, field.values().iter().map(|v| 2.0 * v).collect()).unwrap();
        let a2 = assemble_stiffness::<f64>(&mesh, &doubled, &all, None).unwrap();
        for (x, y) in a.matrix.values().iter().zip(a2.matrix.values()) {
            assert!((2.0 * x - y).abs() <= 1e-13 * y.abs().max(1.0));
        }
        assert_eq!(a.matrix.symmetry_defect(), 0.0);
        assert!(matches!(assemble_stiffness::<f64>(&mesh, &field, &DofMap::new(mesh.num_nodes(), vec![]), None), Err(FemError::EmptyDofSet)));
    }

    #[test]
    fn patch_assembly_equals_restricted_global() {
        let h = build_hierarchy(20, 20, 5, 5).unwrap();
        let field = generate_channels(20, 20, 1.0, 1e3, ChannelLayout::default()).unwrap();
        let glob_dofs = DofMap::interior(&h.fine);
        let glob = assemble_stiffness::<f64>(&h.fine, &field, &glob_dofs, None).unwrap().matrix;
        let p = h.oversample(12, 1).unwrap();
        let pmap = DofMap::new(h.fine.num_nodes(), p.interior.clone());
        let local = assemble_stiffness::<f64>(&h.fine, &field, &pmap, None).unwrap().matrix;
        let idx: Vec<usize> = p.interior.iter().map(|&n| glob_dofs.local(n).unwrap()).collect();
        assert_eq!(glob.principal_submatrix(&idx), local);
    }

    #[test]
    fn load_vectors() {
        let mesh = FineMesh { nx: 16, ny: 16 };
        let all = DofMap::all(&mesh);
        let b = assemble_load(&mesh, &all, |_, _| 3.0);
        assert!((b.iter().sum::<f64>() - 3.0).abs() < 1e-13);
        let c = assemble_load_cellwise(&mesh, &all, &vec![3.0; mesh.num_cells()]);
        for (x, y) in b.iter().zip(&c) {
            assert!((x - y).abs() < 1e-14);
        }
        // separable closed form: ∫ sin(πx) hat_a(x) dx = sin(πx_a) 2(1-cos πh)/(π² h)
        let pi = std::f64::consts::PI;
        let interior = DofMap::interior(&mesh);
        let s = assemble_load(&mesh, &interior, |x, y| (pi * x).sin() * (pi * y).sin());
        let h = 1.0 / 16.0;
        let factor = 2.0 * (1.0 - (pi * h).cos()) / (pi * pi * h);
        for (k, &n) in interior.nodes().iter().enumerate() {
            let (x, y) = mesh.node_coords(n);
            let exact = (pi * x).sin() * (pi * y).sin() * factor * factor;
            assert!((s[k] - exact).abs() < 1e-9 * factor * factor, "{} vs {}", s[k], exact);
        }
    }

    #[test]
    fn bilinear_partition_of_unity() {
        let h = build_hierarchy(20, 20, 5, 5).unwrap();
        let field = PermeabilityField::homogeneous(20, 20, 1.0).unwrap();
        let pou = build_partition_of_unity(&h, &field, PouKind::Bilinear).unwrap();
        assert_eq!(pou.functions.len(), 16);
        let sum = pou.sum_at_nodes(h.fine.num_nodes());
        for n in 0..h.fine.num_nodes() {
            let (ix, iy) = h.fine.node_ij(n);
            // coarse elements whose four corners are interior coarse nodes
            if (4..=16).contains(&ix) && (4..=16).contains(&iy) {
                assert!((sum[n] - 1.0).abs() < 1e-15);
            }
            assert!(sum[n] <= 1.0 + 1e-15);
        }
        for (f, nb) in pou.functions.iter().zip(h.neighborhoods()) {
            assert!(f.values.iter().all(|v| (0.0..=1.0).contains(v)));
            let (px, py) = nb.position;
            let center = h.fine.node(px * 4, py * 4);
            let k = f.nodes.iter().position(|&n| n == center).unwrap();
            assert_eq!(f.values[k], 1.0);
            // vanishes on ∂ω_j
            for (&n, &v) in f.nodes.iter().zip(&f.values) {
                let (ix, iy) = h.fine.node_ij(n);
                if ix == (px - 1) * 4 || ix == (px + 1) * 4 || iy == (py - 1) * 4 || iy == (py + 1) * 4 {
                    assert_eq!(v, 0.0);
                }
            }
        }
        assert!(pou.kappa_tilde.iter().all(|&k| k > 0.0));
    }

    #[test]
    fn msfem_matches_bilinear_for_unit_coefficient() {
        let h = build_hierarchy(24, 24, 4, 4).unwrap();
        let field = PermeabilityField::homogeneous(24, 24, 1.0).unwrap();
        let bl = build_partition_of_unity(&h, &field, PouKind::Bilinear).unwrap();
        let ms = build_partition_of_unity(&h, &field, PouKind::Msfem).unwrap();
        for (a, b) in bl.functions.iter().zip(&ms.functions) {
            assert_eq!(a.nodes, b.nodes);
            for (x, y) in a.values.iter().zip(&b.values) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn msfem_partition_sums_to_one_on_heterogeneous_field() {
        let h = build_hierarchy(30, 30, 5, 5).unwrap();
        let field = generate_channels(30, 30, 1.0, 1e3, ChannelLayout::default()).unwrap();
        let ms = build_partition_of_unity(&h, &field, PouKind::Msfem).unwrap();
        let sum = ms.sum_at_nodes(h.fine.num_nodes());
        for n in 0..h.fine.num_nodes() {
            let (ix, iy) = h.fine.node_ij(n);
            if (6..=24).contains(&ix) && (6..=24).contains(&iy) {
                assert!((sum[n] - 1.0).abs() <= 1e-12, "node {n}: {}", sum[n]);
            }
        }
        assert!(ms.kappa_tilde.iter().all(|&k| k > 0.0));
    }

    #[test]
    fn kappa_tilde_matches_brute_force_gradients() {
        // H = √2/10: 30×30 fine, 10×10 coarse, κ ≡ 1
        let h = build_hierarchy(30, 30, 10, 10).unwrap();
        let field = PermeabilityField::homogeneous(30, 30, 1.0).unwrap();
        let pou = build_partition_of_unity(&h, &field, PouKind::Bilinear).unwrap();
        let hs = 0.1;
        for cell in 0..h.fine.num_cells() {
            let (cx, cy) = h.fine.cell_ij(cell);
            // brute force: average the exact gradient of every interior hat
            // with 3×3 Gauss points over the cell
            let mut s = 0.0;
            for px in 1..10 {
                for py in 1..10 {
                    let (xc, yc) = (px as f64 * hs, py as f64 * hs);
                    let (mut gx, mut gy) = (0.0, 0.0);
                    for &(a, wa) in &GAUSS3 {
                        for &(b, wb) in &GAUSS3 {
                            let x = (cx as f64 + 0.5 * (a + 1.0)) / 30.0;
                            let y = (cy as f64 + 0.5 * (b + 1.0)) / 30.0;
                            let (dx, dy) = (x - xc, y - yc);
                            if dx.abs() >= hs || dy.abs() >= hs {
                                continue;
                            }
                            let (ux, uy) = (1.0 - dx.abs() / hs, 1.0 - dy.abs() / hs);
                            let w = 0.25 * wa * wb;
                            gx += w * (-dx.signum() / hs) * uy;
                            gy += w * ux * (-dy.signum() / hs);
                        }
                    }
                    s += gx * gx + gy * gy;
                }
            }
            assert!((pou.kappa_tilde[cell] - s).abs() < 1e-9 * s.max(1.0), "cell {cell}: {} vs {s}", pou.kappa_tilde[cell]);
        }
        // magnitude O(H⁻²) in the coarse interior
        let inner = h.fine.cell(15, 15);
        assert!(pou.kappa_tilde[inner] > 10.0 && pou.kappa_tilde[inner] < 800.0);
    }
}
