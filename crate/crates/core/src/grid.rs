//! Structured fine/coarse rectangular meshes on the unit square.
//!
//! Fine nodes are numbered row-major, `node = iy * (nx + 1) + ix`, and fine
//! cells likewise, `cell = cy * nx + cx`. Coarse elements use the same row-major
//! convention over the coarse cell grid. Mesh sizes follow the element-diameter
//! convention: `h = sqrt(hx² + hy²)`, `H = sqrt(Hx² + Hy²)`.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GridError {
    #[error("cell counts must be positive (nx={nx}, ny={ny}, Nx={cx}, Ny={cy})")]
    NonPositive { nx: usize, ny: usize, cx: usize, cy: usize },
    #[error("fine count {fine} along {axis} is not divisible by coarse count {coarse}")]
    NotNested { axis: char, fine: usize, coarse: usize },
    #[error("coarse element index {0} out of range")]
    ElementOutOfRange(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FineMesh {
    pub nx: usize,
    pub ny: usize,
}

impl FineMesh {
    pub fn hx(&self) -> f64 {
        1.0 / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        1.0 / self.ny as f64
    }

    /// Cell diameter.
    pub fn h(&self) -> f64 {
        self.hx().hypot(self.hy())
    }

    pub fn num_nodes(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn num_cells(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn node(&self, ix: usize, iy: usize) -> usize {
        iy * (self.nx + 1) + ix
    }

    #[inline]
    pub fn node_ij(&self, node: usize) -> (usize, usize) {
        (node % (self.nx + 1), node / (self.nx + 1))
    }

    pub fn node_coords(&self, node: usize) -> (f64, f64) {
        let (ix, iy) = self.node_ij(node);
        (ix as f64 * self.hx(), iy as f64 * self.hy())
    }

    #[inline]
    pub fn is_boundary(&self, node: usize) -> bool {
        let (ix, iy) = self.node_ij(node);
        ix == 0 || iy == 0 || ix == self.nx || iy == self.ny
    }

    pub fn boundary_mask(&self) -> Vec<bool> {
        (0..self.num_nodes()).map(|n| self.is_boundary(n)).collect()
    }

    #[inline]
    pub fn cell(&self, cx: usize, cy: usize) -> usize {
        cy * self.nx + cx
    }

    #[inline]
    pub fn cell_ij(&self, cell: usize) -> (usize, usize) {
        (cell % self.nx, cell / self.nx)
    }

    /// Corner nodes counter-clockwise from the lower-left corner.
    #[inline]
    pub fn cell_nodes(&self, cell: usize) -> [usize; 4] {
        let (cx, cy) = self.cell_ij(cell);
        [self.node(cx, cy), self.node(cx + 1, cy), self.node(cx + 1, cy + 1), self.node(cx, cy + 1)]
    }

    /// Interior nodes in row-major order: the global Dirichlet-eliminated DOFs.
    pub fn interior_nodes(&self) -> Vec<usize> {
        (1..self.ny).flat_map(|iy| (1..self.nx).map(move |ix| self.node(ix, iy))).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoarseMesh {
    pub nx: usize,
    pub ny: usize,
    /// Fine cells per coarse cell along x and y.
    pub ratio_x: usize,
    pub ratio_y: usize,
}

impl CoarseMesh {
    pub fn hx(&self) -> f64 {
        1.0 / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        1.0 / self.ny as f64
    }

    /// Element diameter `H`.
    pub fn h(&self) -> f64 {
        self.hx().hypot(self.hy())
    }

    pub fn num_elements(&self) -> usize {
        self.nx * self.ny
    }

    /// Number of interior coarse nodes `N_c`.
    pub fn num_interior_nodes(&self) -> usize {
        (self.nx - 1) * (self.ny - 1)
    }

    #[inline]
    pub fn element(&self, ex: usize, ey: usize) -> usize {
        ey * self.nx + ex
    }

    #[inline]
    pub fn element_ij(&self, e: usize) -> (usize, usize) {
        (e % self.nx, e / self.nx)
    }

    /// Coarse-node grid position of interior coarse node `j` (row-major over
    /// `1..nx` × `1..ny`).
    pub fn interior_node_ij(&self, j: usize) -> (usize, usize) {
        let w = self.nx - 1;
        (j % w + 1, j / w + 1)
    }
}

/// Set of coarse elements sharing an interior coarse node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoarseNodeNeighborhood {
    pub node: usize,
    /// Coarse node position in the coarse node grid.
    pub position: (usize, usize),
    pub elements: Vec<usize>,
}

/// Rectangular block of coarse elements `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CoarseBlock {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
}

impl CoarseBlock {
    pub fn contains(&self, ex: usize, ey: usize) -> bool {
        (self.x0..self.x1).contains(&ex) && (self.y0..self.y1).contains(&ey)
    }

    pub fn num_elements(&self) -> usize {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }
}

/// Oversampling region `K_{i,m}` with its fine DOF sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OversamplePatch {
    pub element: usize,
    pub layers: usize,
    pub block: CoarseBlock,
    /// Coarse elements in the patch, row-major.
    pub elements: Vec<usize>,
    /// Every fine node in the closed patch.
    pub nodes: Vec<usize>,
    /// Fine nodes strictly inside the patch and off ∂Ω (zero-trace DOFs).
    pub interior: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridHierarchy {
    pub fine: FineMesh,
    pub coarse: CoarseMesh,
    cell_to_element: Vec<usize>,
    neighborhoods: Vec<CoarseNodeNeighborhood>,
}

/// Builds nested fine and coarse meshes.
pub fn build_hierarchy(nx: usize, ny: usize, cnx: usize, cny: usize) -> Result<GridHierarchy, GridError> {
    if nx == 0 || ny == 0 || cnx == 0 || cny == 0 {
        return Err(GridError::NonPositive { nx, ny, cx: cnx, cy: cny });
    }
    if nx % cnx != 0 {
        return Err(GridError::NotNested { axis: 'x', fine: nx, coarse: cnx });
    }
    if ny % cny != 0 {
        return Err(GridError::NotNested { axis: 'y', fine: ny, coarse: cny });
    }
    let fine = FineMesh { nx, ny };
    let coarse = CoarseMesh { nx: cnx, ny: cny, ratio_x: nx / cnx, ratio_y: ny / cny };
    let cell_to_element = (0..fine.num_cells())
        .map(|c| {
            let (cx, cy) = fine.cell_ij(c);
            coarse.element(cx / coarse.ratio_x, cy / coarse.ratio_y)
        })
        .collect();
    let neighborhoods = (0..coarse.num_interior_nodes())
        .map(|j| {
            let (px, py) = coarse.interior_node_ij(j);
            let elements = vec![
                coarse.element(px - 1, py - 1),
                coarse.element(px, py - 1),
                coarse.element(px - 1, py),
                coarse.element(px, py),
            ];
            CoarseNodeNeighborhood { node: j, position: (px, py), elements }
        })
        .collect();
    Ok(GridHierarchy { fine, coarse, cell_to_element, neighborhoods })
}

impl GridHierarchy {
    pub fn num_elements(&self) -> usize {
        self.coarse.num_elements()
    }

    pub fn element_of_cell(&self, cell: usize) -> usize {
        self.cell_to_element[cell]
    }

    pub fn neighborhoods(&self) -> &[CoarseNodeNeighborhood] {
        &self.neighborhoods
    }

    /// Fine cells of a block of coarse elements, row-major.
    pub fn block_cells(&self, b: CoarseBlock) -> Vec<usize> {
        let (rx, ry) = (self.coarse.ratio_x, self.coarse.ratio_y);
        (b.y0 * ry..b.y1 * ry)
            .flat_map(|cy| (b.x0 * rx..b.x1 * rx).map(move |cx| (cx, cy)))
            .map(|(cx, cy)| self.fine.cell(cx, cy))
            .collect()
    }

    /// Fine-node index range `[ix0, ix1] × [iy0, iy1]` (inclusive) of a block.
    fn block_node_range(&self, b: CoarseBlock) -> (usize, usize, usize, usize) {
        let (rx, ry) = (self.coarse.ratio_x, self.coarse.ratio_y);
        (b.x0 * rx, b.x1 * rx, b.y0 * ry, b.y1 * ry)
    }

    /// Fine nodes of the closed block, row-major.
    pub fn block_nodes(&self, b: CoarseBlock) -> Vec<usize> {
        let (ix0, ix1, iy0, iy1) = self.block_node_range(b);
        (iy0..=iy1).flat_map(|iy| (ix0..=ix1).map(move |ix| (ix, iy))).map(|(ix, iy)| self.fine.node(ix, iy)).collect()
    }

    /// Fine nodes strictly inside the block and off ∂Ω, row-major.
    pub fn block_interior_nodes(&self, b: CoarseBlock) -> Vec<usize> {
        let (ix0, ix1, iy0, iy1) = self.block_node_range(b);
        (iy0 + 1..iy1)
            .flat_map(|iy| (ix0 + 1..ix1).map(move |ix| (ix, iy)))
            .map(|(ix, iy)| self.fine.node(ix, iy))
            .collect()
    }

    pub fn element_block(&self, e: usize) -> CoarseBlock {
        let (ex, ey) = self.coarse.element_ij(e);
        CoarseBlock { x0: ex, x1: ex + 1, y0: ey, y1: ey + 1 }
    }

    pub fn element_cells(&self, e: usize) -> Vec<usize> {
        self.block_cells(self.element_block(e))
    }

    /// DOFs of `V(K_i)`: nodes of the closed element minus those on ∂Ω.
    pub fn element_dofs(&self, e: usize) -> Vec<usize> {
        self.block_nodes(self.element_block(e)).into_iter().filter(|&n| !self.fine.is_boundary(n)).collect()
    }

    /// Oversampling block `K_{i,m}`, clipped to Ω.
    pub fn oversample_block(&self, e: usize, m: usize) -> CoarseBlock {
        let (ex, ey) = self.coarse.element_ij(e);
        CoarseBlock {
            x0: ex.saturating_sub(m),
            x1: (ex + m + 1).min(self.coarse.nx),
            y0: ey.saturating_sub(m),
            y1: (ey + m + 1).min(self.coarse.ny),
        }
    }

    pub fn oversample(&self, e: usize, m: usize) -> Result<OversamplePatch, GridError> {
        if e >= self.num_elements() {
            return Err(GridError::ElementOutOfRange(e));
        }
        let block = self.oversample_block(e, m);
        let elements = (block.y0..block.y1)
            .flat_map(|ey| (block.x0..block.x1).map(move |ex| (ex, ey)))
            .map(|(ex, ey)| self.coarse.element(ex, ey))
            .collect();
        Ok(OversamplePatch {
            element: e,
            layers: m,
            block,
            elements,
            nodes: self.block_nodes(block),
            interior: self.block_interior_nodes(block),
        })
    }

    pub fn full_block(&self) -> CoarseBlock {
        CoarseBlock { x0: 0, x1: self.coarse.nx, y0: 0, y1: self.coarse.ny }
    }
}

/// Maps global fine-node indices to positions in a DOF subset.
#[derive(Debug, Clone)]
pub struct DofMap {
    nodes: Vec<usize>,
    local: Vec<usize>,
}

impl DofMap {
    pub const NONE: usize = usize::MAX;

    pub fn new(num_nodes: usize, nodes: Vec<usize>) -> Self {
        let mut local = vec![Self::NONE; num_nodes];
        for (l, &g) in nodes.iter().enumerate() {
            local[g] = l;
        }
        Self { nodes, local }
    }

    pub fn all(mesh: &FineMesh) -> Self {
        Self::new(mesh.num_nodes(), (0..mesh.num_nodes()).collect())
    }

    pub fn interior(mesh: &FineMesh) -> Self {
        Self::new(mesh.num_nodes(), mesh.interior_nodes())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    #[inline]
    pub fn local(&self, node: usize) -> Option<usize> {
        match self.local[node] {
            Self::NONE => None,
            l => Some(l),
        }
    }

    /// Scatters local values into a full-node vector.
    pub fn scatter(&self, values: &[f64], num_nodes: usize) -> Vec<f64> {
        let mut out = vec![0.0; num_nodes];
        for (&g, &v) in self.nodes.iter().zip(values) {
            out[g] = v;
        }
        out
    }

    pub fn gather(&self, full: &[f64]) -> Vec<f64> {
        self.nodes.iter().map(|&g| full[g]).collect()
    }
}
