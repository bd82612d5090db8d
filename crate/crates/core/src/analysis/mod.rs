//! Stability measurements for the Schrödinger map: Lipschitz ratios along
//! displacement paths and under Sobolev perturbations, implicit derivatives
//! of the potentials, and first and second variations of the energy.

mod linearize;
mod path;
mod sobolev;

pub use linearize::{
    assemble_linearization, dtg, g_operator, KernelCheck, LinearizedOperator, PinnedSolution, SplineField,
    TimeDerivative, MAX_LINEAR_NODES,
};
pub use path::{
    energy_derivative, finite_difference_derivative, lipschitz_ratio_ck, potential_time_derivative, probe_path,
    semiconvexity_modulus, wasserstein_gradient_check, GradientCheck, LipschitzRatio, PathProbe, Semiconvexity,
    StepRatio,
};
pub use sobolev::{hneg_norm, lipschitz_ratio_sobolev, SobolevGram, SobolevRatio};
