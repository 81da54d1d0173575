//! Optimal allocations: closed forms, numerical oracles, certificates and
//! tradeoff curves.

pub mod curve;
pub mod maxl;
pub mod mi;
pub mod projection;
pub mod subgradient;
pub use subgradient::SubgradientOptions;

pub use curve::{
    check_monotone, clean_tsc_curve, hull_check, lower_hull, maxl_server_one_oracle,
    mi_time_sharing_deviation, series, tradeoff_curve,
};
pub use mi::{
    mi_clean_tsc_oracle, mi_full_oracle, mi_full_oracle_with, mi_optimal_allocation,
    mi_optimal_homogeneous, mi_optimum, mi_reduced_oracle, mi_reduced_oracle_with,
    solve_x_sequence, x1_closed_form, FrankWolfeOptions, MiOptimum, MiOracleOptions, MiRegime,
    XSequence,
};

pub use maxl::{
    homogeneous_maxl_value, kkt_verify_maxl, kkt_verify_maxl_perturbed, maxl_full_oracle,
    maxl_full_oracle_with, maxl_optimal, maxl_reduced_oracle, maxl_reduced_oracle_with,
    MaxLKktCertificate,
};

use crate::params::SystemParams;

/// `points` equispaced download costs on `[1, D*]`.
pub fn cost_grid(params: &SystemParams, points: usize) -> Vec<f64> {
    let top = params.capacity_cost();
    match points {
        0 => Vec::new(),
        1 => vec![1.0],
        _ => (0..points)
            .map(|i| {
                if i + 1 == points {
                    top
                } else {
                    1.0 + (top - 1.0) * i as f64 / (points - 1) as f64
                }
            })
            .collect(),
    }
}
