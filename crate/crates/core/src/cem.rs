//! Constraint energy minimizing multiscale spaces: the per-element auxiliary
//! spectral space, the projection onto it, and the localized and global
//! multiscale basis functions.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use thiserror::Error;

use crate::coefficient::PermeabilityField;
use crate::fem::{assemble_mass, assemble_stiffness, FemError, PartitionOfUnity};
use crate::grid::{CoarseBlock, DofMap, GridError, GridHierarchy};
use crate::linalg::{CsrMatrix, LinalgError, SkylineCholesky};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CemError {
    #[error("weighted mass is singular on coarse element {element}")]
    SingularWeight { element: usize },
    #[error("element {element} has {dofs} DOFs, cannot extract {requested} eigenpairs")]
    TooManyEigenpairs { element: usize, dofs: usize, requested: usize },
    #[error("number of basis functions per element must be at least 1 (element {element})")]
    ZeroEll { element: usize },
    #[error("expected {expected} per-element counts, got {found}")]
    EllLength { expected: usize, found: usize },
    #[error("oversampling patch of element {element} has no interior DOFs")]
    EmptyPatch { element: usize },
    #[error("patch system for element {element} is singular: {source}")]
    SingularPatch { element: usize, source: LinalgError },
    #[error("global basis needs {dofs} DOFs, above the cap of {cap} (force to override)")]
    TooLarge { dofs: usize, cap: usize },
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Spectral data of a single coarse element.
#[derive(Debug, Clone)]
pub struct ElementSpectrum {
    pub element: usize,
    /// Fine nodes of `V(K_i)`: the closed element minus ∂Ω.
    pub dofs: Vec<usize>,
    /// The `ℓ_i + 1` smallest eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    /// `ℓ_i` eigenvectors on `dofs`, `s_i`-orthonormal.
    pub vectors: Vec<Vec<f64>>,
    /// `S_i φ_j` on `dofs`: the functional `v ↦ s_i(v, φ_j)`.
    pub s_vectors: Vec<Vec<f64>>,
}

impl ElementSpectrum {
    pub fn ell(&self) -> usize {
        self.vectors.len()
    }
}

#[derive(Debug, Clone)]
pub struct AuxiliarySpace {
    pub elements: Vec<ElementSpectrum>,
    pub kappa_tilde: Vec<f64>,
    offsets: Vec<usize>,
}

fn dense(m: &CsrMatrix<f64>) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(m.nrows(), m.ncols());
    for (i, j, v) in m.triplets() {
        d[(i, j)] = v;
    }
    d
}

fn element_spectrum(
    hier: &GridHierarchy,
    field: &PermeabilityField,
    kappa_tilde: &[f64],
    element: usize,
    ell: usize,
) -> Result<ElementSpectrum, CemError> {
    if ell == 0 {
        return Err(CemError::ZeroEll { element });
    }
    let fine = &hier.fine;
    let dofs = hier.element_dofs(element);
    if ell + 1 > dofs.len() {
        return Err(CemError::TooManyEigenpairs { element, dofs: dofs.len(), requested: ell + 1 });
    }
    let map = DofMap::new(fine.num_nodes(), dofs.clone());
    let cells = hier.element_cells(element);
    let a = assemble_stiffness::<f64>(fine, field, &map, Some(&cells))?.matrix;
    let s = assemble_mass::<f64>(fine, &map, Some(kappa_tilde), Some(&cells))?.matrix;
    let (ad, sd) = (dense(&a), dense(&s));
    let chol = sd.clone().cholesky().ok_or(CemError::SingularWeight { element })?;
    let l = chol.l();
    let linv_a = l.solve_lower_triangular(&ad).ok_or(CemError::SingularWeight { element })?;
    let c = l.solve_lower_triangular(&linv_a.transpose()).ok_or(CemError::SingularWeight { element })?;
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
    let eigenvalues = order[..=ell].iter().map(|&k| eig.eigenvalues[k]).collect();
    let lt = l.transpose();
    let mut vectors = Vec::with_capacity(ell);
    let mut s_vectors = Vec::with_capacity(ell);
    for &k in &order[..ell] {
        let y = eig.eigenvectors.column(k).into_owned();
        let phi = lt.solve_upper_triangular(&y).ok_or(CemError::SingularWeight { element })?;
        let mut phi: Vec<f64> = phi.iter().copied().collect();
        let scale = phi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if let Some(first) = phi.iter().find(|v| v.abs() > 1e-12 * scale) {
            if *first < 0.0 {
                phi.iter_mut().for_each(|v| *v = -*v);
            }
        }
        s_vectors.push(s.mul_vec(&phi));
        vectors.push(phi);
    }
    Ok(ElementSpectrum { element, dofs, eigenvalues, vectors, s_vectors })
}

/// Solves `a_i(φ, v) = λ s_i(φ, v)` on every coarse element with `ell` pairs each.
pub fn build_auxiliary_space(
    hier: &GridHierarchy,
    field: &PermeabilityField,
    pou: &PartitionOfUnity,
    ell: usize,
) -> Result<AuxiliarySpace, CemError> {
    build_auxiliary_space_with(hier, field, pou, &vec![ell; hier.num_elements()])
}

/// As [`build_auxiliary_space`] with a per-element count.
pub fn build_auxiliary_space_with(
    hier: &GridHierarchy,
    field: &PermeabilityField,
    pou: &PartitionOfUnity,
    ells: &[usize],
) -> Result<AuxiliarySpace, CemError> {
    if ells.len() != hier.num_elements() {
        return Err(CemError::EllLength { expected: hier.num_elements(), found: ells.len() });
    }
    let elements: Vec<ElementSpectrum> = (0..hier.num_elements())
        .into_par_iter()
        .map(|e| element_spectrum(hier, field, &pou.kappa_tilde, e, ells[e]))
        .collect::<Result<_, _>>()?;
    let mut offsets = Vec::with_capacity(elements.len() + 1);
    offsets.push(0);
    for el in &elements {
        offsets.push(offsets.last().unwrap() + el.ell());
    }
    Ok(AuxiliarySpace { elements, kappa_tilde: pou.kappa_tilde.clone(), offsets })
}

impl AuxiliarySpace {
    /// `p = Σ ℓ_i`.
    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Global column index of `φ_j^{(i)}`.
    pub fn column(&self, element: usize, j: usize) -> usize {
        self.offsets[element] + j
    }

    /// `(element, j)` for every column, element-major.
    pub fn columns(&self) -> Vec<(usize, usize)> {
        self.elements.iter().flat_map(|el| (0..el.ell()).map(move |j| (el.element, j))).collect()
    }

    /// `Λ = min_i λ_{ℓ_i+1}^{(i)}`.
    pub fn lambda(&self) -> f64 {
        self.elements.iter().map(|e| e.eigenvalues[e.ell()]).fold(f64::INFINITY, f64::min)
    }

    /// `σ_aux = max_{i, j ≤ ℓ_i} λ_j^{(i)}`.
    pub fn sigma_aux(&self) -> f64 {
        self.elements.iter().map(|e| e.eigenvalues[e.ell() - 1]).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Coefficients `s_i(v, φ_j^{(i)})` of a full-node fine vector.
    pub fn project_coefficients(&self, v: &[f64]) -> Vec<f64> {
        let mut c = Vec::with_capacity(self.dim());
        for el in &self.elements {
            for sv in &el.s_vectors {
                c.push(el.dofs.iter().zip(sv).map(|(&n, s)| v[n] * s).sum());
            }
        }
        c
    }

    /// Values of `Σ c_{ij} φ_j^{(i)}` on the closed element `i`. Auxiliary
    /// functions are discontinuous across coarse edges, so the result is per
    /// element rather than a single nodal vector.
    pub fn element_values(&self, coeffs: &[f64], element: usize) -> Vec<f64> {
        let el = &self.elements[element];
        let mut out = vec![0.0; el.dofs.len()];
        for (j, phi) in el.vectors.iter().enumerate() {
            let c = coeffs[self.column(element, j)];
            out.iter_mut().zip(phi).for_each(|(o, p)| *o += c * p);
        }
        out
    }

    /// `πv` restricted element by element and read back as a nodal vector
    /// on each element (`π` is idempotent on this representation).
    pub fn project_elementwise(&self, v: &[f64]) -> Vec<Vec<f64>> {
        let c = self.project_coefficients(v);
        (0..self.elements.len()).map(|e| self.element_values(&c, e)).collect()
    }

    /// `s(πu, πv) = Σ_{ij} s_i(u, φ_j) s_i(v, φ_j)`.
    pub fn projected_s(&self, u: &[f64], v: &[f64]) -> f64 {
        self.project_coefficients(u).iter().zip(self.project_coefficients(v)).map(|(a, b)| a * b).sum()
    }
}

/// Localized (or global) multiscale basis as a sparse prolongation.
#[derive(Debug, Clone)]
pub struct MultiscaleBasis {
    /// Oversampling layers; `None` for the global construction.
    pub layers: Option<usize>,
    /// Fine interior DOFs × p.
    pub r: CsrMatrix<f64>,
    pub interior: DofMap,
    /// `(element, j)` of every column.
    pub columns: Vec<(usize, usize)>,
    /// Support (patch interior nodes) of every column.
    pub supports: Vec<Vec<usize>>,
    pub a_ms: CsrMatrix<f64>,
    pub m_ms: CsrMatrix<f64>,
    /// Largest relative residual of the patch systems.
    pub max_residual: f64,
}

impl MultiscaleBasis {
    pub fn dim(&self) -> usize {
        self.r.ncols()
    }

    /// Column `k` as a vector on the fine interior DOFs.
    pub fn column_vector(&self, k: usize) -> Vec<f64> {
        let mut e = vec![0.0; self.dim()];
        e[k] = 1.0;
        self.r.mul_vec(&e)
    }

    /// `R c`.
    pub fn prolong(&self, c: &[f64]) -> Vec<f64> {
        self.r.mul_vec(c)
    }
}

struct BlockSolution {
    /// `(element, columns)` for every requested element, each column a value
    /// vector on `interior`.
    columns: Vec<(usize, Vec<Vec<f64>>)>,
    interior: Vec<usize>,
    residual: f64,
}

/// Solves `(A_P + U Uᵀ) ψ = u_c` for every auxiliary column `c` of the
/// requested elements, where `U` stacks `S_e φ_k` of all elements in the
/// block, through `(A_P + U Uᵀ)⁻¹ U = W (I + Uᵀ W)⁻¹`, `W = A_P⁻¹ U`.
fn solve_block(
    hier: &GridHierarchy,
    field: &PermeabilityField,
    aux: &AuxiliarySpace,
    block: CoarseBlock,
    requested: &[usize],
) -> Result<BlockSolution, CemError> {
    let fine = &hier.fine;
    let owner = requested[0];
    let interior = hier.block_interior_nodes(block);
    if interior.is_empty() {
        return Err(CemError::EmptyPatch { element: owner });
    }
    let n = interior.len();
    let map = DofMap::new(fine.num_nodes(), interior.clone());
    let a = assemble_stiffness::<f64>(fine, field, &map, Some(&hier.block_cells(block)))?.matrix;
    let chol = SkylineCholesky::factor(&a).map_err(|source| CemError::SingularPatch { element: owner, source })?;

    // sparse columns of U restricted to the patch interior
    let mut ucols: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut first_col = BTreeMap::new();
    for ey in block.y0..block.y1 {
        for ex in block.x0..block.x1 {
            let e = hier.coarse.element(ex, ey);
            let el = &aux.elements[e];
            first_col.insert(e, ucols.len());
            for sv in &el.s_vectors {
                ucols.push(el.dofs.iter().zip(sv).filter_map(|(&node, &v)| map.local(node).map(|l| (l, v))).collect());
            }
        }
    }
    let r = ucols.len();
    let mut w = vec![0.0; n * r];
    for (c, col) in ucols.iter().enumerate() {
        for &(l, v) in col {
            w[l * r + c] = v;
        }
    }
    chol.solve_many_in_place(&mut w, r);

    let mut cmat = DMatrix::<f64>::identity(r, r);
    for (a_idx, col) in ucols.iter().enumerate() {
        for &(l, v) in col {
            let row = &w[l * r..(l + 1) * r];
            for b in 0..r {
                cmat[(a_idx, b)] += v * row[b];
            }
        }
    }
    let cmat = (&cmat + cmat.transpose()) * 0.5;
    let cchol = cmat.cholesky().ok_or(CemError::SingularPatch {
        element: owner,
        source: LinalgError::NotPositiveDefinite { row: 0, pivot: f64::NAN },
    })?;

    let mut columns = Vec::with_capacity(requested.len());
    let mut residual: f64 = 0.0;
    for &e in requested {
        let base = first_col[&e];
        let ell = aux.elements[e].ell();
        let mut rhs = DMatrix::<f64>::zeros(r, ell);
        for j in 0..ell {
            rhs[(base + j, j)] = 1.0;
        }
        let y = cchol.solve(&rhs);
        let mut cols = Vec::with_capacity(ell);
        for j in 0..ell {
            let yj: Vec<f64> = y.column(j).iter().copied().collect();
            let psi: Vec<f64> = (0..n).map(|l| w[l * r..(l + 1) * r].iter().zip(&yj).map(|(a, b)| a * b).sum()).collect();
            // explicit residual of the patch system
            let mut res = a.mul_vec(&psi);
            for col in &ucols {
                let d: f64 = col.iter().map(|&(l, v)| v * psi[l]).sum();
                for &(l, v) in col {
                    res[l] += d * v;
                }
            }
            let mut bnorm = 0.0;
            for &(l, v) in &ucols[base + j] {
                res[l] -= v;
                bnorm += v * v;
            }
            let rn = res.iter().map(|x| x * x).sum::<f64>().sqrt();
            residual = residual.max(rn / bnorm.sqrt().max(f64::MIN_POSITIVE));
            cols.push(psi);
        }
        columns.push((e, cols));
    }
    Ok(BlockSolution { columns, interior, residual })
}

fn assemble_basis(
    hier: &GridHierarchy,
    field: &PermeabilityField,
    aux: &AuxiliarySpace,
    layers: Option<usize>,
    blocks: BTreeMap<CoarseBlock, Vec<usize>>,
) -> Result<MultiscaleBasis, CemError> {
    let fine = &hier.fine;
    let jobs: Vec<(CoarseBlock, Vec<usize>)> = blocks.into_iter().collect();
    let solved: Vec<BlockSolution> = jobs
        .par_iter()
        .map(|(b, els)| solve_block(hier, field, aux, *b, els))
        .collect::<Result<_, _>>()?;

    let interior = DofMap::interior(fine);
    let p = aux.dim();
    let mut per_element: Vec<Option<(&[usize], &Vec<Vec<f64>>)>> = vec![None; hier.num_elements()];
    let mut max_residual: f64 = 0.0;
    for sol in &solved {
        max_residual = max_residual.max(sol.residual);
        for (e, cols) in &sol.columns {
            per_element[*e] = Some((&sol.interior, cols));
        }
    }
    let mut triplets = Vec::new();
    let mut supports = Vec::with_capacity(p);
    for (e, entry) in per_element.iter().enumerate() {
        let (nodes, cols) = entry.expect("every element is solved");
        for (j, psi) in cols.iter().enumerate() {
            let col = aux.column(e, j);
            for (&node, &v) in nodes.iter().zip(psi) {
                triplets.push((interior.local(node).expect("patch interior is interior"), col, v));
            }
            supports.push(nodes.to_vec());
        }
    }
    let r = CsrMatrix::from_triplets(interior.len(), p, triplets);
    let a = assemble_stiffness::<f64>(fine, field, &interior, None)?.matrix;
    let m = assemble_mass::<f64>(fine, &interior, None, None)?.matrix;
    let a_ms = a.galerkin(&r);
    let m_ms = m.galerkin(&r);
    Ok(MultiscaleBasis { layers, r, interior, columns: aux.columns(), supports, a_ms, m_ms, max_residual })
}

/// Localized basis on the oversampling regions `K_{i,m}`.
pub fn build_multiscale_basis(
    hier: &GridHierarchy,
    field: &PermeabilityField,
    aux: &AuxiliarySpace,
    m: usize,
) -> Result<MultiscaleBasis, CemError> {
    let mut blocks: BTreeMap<CoarseBlock, Vec<usize>> = BTreeMap::new();
    for e in 0..hier.num_elements() {
        blocks.entry(hier.oversample_block(e, m)).or_default().push(e);
    }
    assemble_basis(hier, field, aux, Some(m), blocks)
}

pub const DEFAULT_GLOBAL_DOF_CAP: usize = 100_000;

/// Global basis: the same system solved on all of Ω.
pub fn build_global_basis(
    hier: &GridHierarchy,
    field: &PermeabilityField,
    aux: &AuxiliarySpace,
    cap: usize,
    force: bool,
) -> Result<MultiscaleBasis, CemError> {
    let dofs = hier.fine.interior_nodes().len();
    if dofs > cap && !force {
        return Err(CemError::TooLarge { dofs, cap });
    }
    let mut blocks = BTreeMap::new();
    blocks.insert(hier.full_block(), (0..hier.num_elements()).collect());
    assemble_basis(hier, field, aux, None, blocks)
}

/// `E(m) = 3(1 + Λ⁻¹)(1 + 2(1 + Λ^{-1/2}))^{1-m}`.
pub fn predicted_decay_factor(lambda: f64, m: usize) -> f64 {
    3.0 * (1.0 + 1.0 / lambda) * (3.0 + 2.0 / lambda.sqrt()).powf(1.0 - m as f64)
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct DecayReport {
    pub m_list: Vec<usize>,
    /// `gaps[k][c]`: `‖ψ_glo − ψ_ms‖_a` of column `c` at `m_list[k]`.
    pub gaps: Vec<Vec<f64>>,
    /// Least-squares slope of `ln(max_c gap)` against `m`, over gaps above
    /// roundoff.
    pub slope: f64,
    pub predicted: Vec<f64>,
    pub lambda: f64,
}

impl DecayReport {
    pub fn max_gap(&self, k: usize) -> f64 {
        self.gaps[k].iter().copied().fold(0.0, f64::max)
    }
}

fn log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    if points.len() < 2 {
        return f64::NAN;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Energy-norm gap between global and localized basis columns over `m_list`.
pub fn measure_decay(
    hier: &GridHierarchy,
    field: &PermeabilityField,
    aux: &AuxiliarySpace,
    m_list: &[usize],
) -> Result<DecayReport, CemError> {
    let glob = build_global_basis(hier, field, aux, DEFAULT_GLOBAL_DOF_CAP, false)?;
    let a = assemble_stiffness::<f64>(&hier.fine, field, &glob.interior, None)?.matrix;
    let p = aux.dim();
    let glob_cols: Vec<Vec<f64>> = (0..p).map(|k| glob.column_vector(k)).collect();
    let mut gaps = Vec::with_capacity(m_list.len());
    for &m in m_list {
        let loc = build_multiscale_basis(hier, field, aux, m)?;
        let g: Vec<f64> = (0..p)
            .into_par_iter()
            .map(|k| {
                let d: Vec<f64> = loc.column_vector(k).iter().zip(&glob_cols[k]).map(|(x, y)| y - x).collect();
                a.quadratic(&d).max(0.0).sqrt()
            })
            .collect();
        gaps.push(g);
    }
    let pts: Vec<(f64, f64)> = m_list
        .iter()
        .zip(&gaps)
        .map(|(&m, g)| (m as f64, g.iter().copied().fold(0.0, f64::max)))
        .filter(|&(_, g)| g > 1e-13)
        .map(|(m, g)| (m, g.ln()))
        .collect();
    let lambda = aux.lambda();
    Ok(DecayReport {
        m_list: m_list.to_vec(),
        gaps,
        slope: log_slope(&pts),
        predicted: m_list.iter().map(|&m| predicted_decay_factor(lambda, m)).collect(),
        lambda,
    })
}
