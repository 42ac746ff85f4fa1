//! Energy distance, support points and support-points sample splitting (SPSS).
//!
//! Support points are the `n`-point configuration minimizing the energy distance
//! to an empirical cloud. The solver here is the convex-concave
//! majorization-minimization scheme: each point moves to a `1/distance`
//! weighted average of the data plus a repulsion term from the other points.
//! Splits snap the optimized points back onto distinct data rows.

mod energy;
mod solver;
mod split;

pub(crate) use energy::sq_dist;
pub use energy::{energy_two_sample, sp_objective, within_mean, PointSet};
pub use solver::{
    compute_support_points, compute_support_points_from, initial_rows, snap_to_rows, SpConfig,
    SpInit, SpResult,
};
pub use split::{
    random_kfold, random_split, spss_kfold, spss_kfold_cloud, spss_split, spss_split_cloud,
    spss_split_detailed, splitting_cloud, FoldPlan, SplitResult,
};
