//! CEM-GMsFEM spatial reduction and leapfrog time stepping for
//! `u_t + α u_tt − ∇·(κ∇u) = f` on high-contrast media.
//!
//! The linear algebra, assembly and time stepper are generic over
//! [`scalar::Scalar`]; the aliases below fix the precision to `f64`, which is
//! what the spectral construction and the analysis layer use.

pub mod analysis;
pub mod cem;
pub mod coefficient;
pub mod fem;
pub mod grid;
pub mod linalg;
pub mod qgd;
pub mod scalar;

pub type SparseMatrix = linalg::CsrMatrix<f64>;
pub type Operator = fem::SymmetricSparseOperator<f64>;
pub type Space = qgd::GalerkinSpace<f64>;
pub type FineTrajectory = qgd::Trajectory<f64>;

pub use analysis::{compute_errors, run_convergence_study, ConvergenceTable, ErrorReport};
pub use cem::{build_auxiliary_space, build_global_basis, build_multiscale_basis, measure_decay, AuxiliarySpace, MultiscaleBasis};
pub use coefficient::{generate_channels, load_raster, ChannelLayout, PermeabilityField};
pub use fem::{build_partition_of_unity, PartitionOfUnity, PouKind};
pub use grid::{build_hierarchy, GridHierarchy};
pub use qgd::{check_cfl, init_steps, leapfrog_solve, reference_solve, InitPolicy, LeapfrogConfig, QgdProblem, Source};
