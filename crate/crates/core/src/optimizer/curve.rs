//! Privacy/download tradeoff curves and the time-sharing hull check.

use crate::error::{Error, Result};
use crate::leakage::{rho_mi, Method, Metric, TradeoffPoint};
use crate::params::SystemParams;
use crate::scheme::key_space_size;

use super::maxl::{maxl_full_oracle, maxl_optimal, maxl_reduced_oracle, FULL_ORACLE_CAP};
use super::mi::{
    mi_clean_tsc_oracle, mi_full_oracle, mi_optimal_allocation, mi_optimum, mi_reduced_oracle,
};

/// Slack allowed when checking that a numerically produced curve is non-increasing.
pub const MONOTONE_TOL: f64 = 1e-6;

fn full_space_fits(params: &SystemParams) -> bool {
    key_space_size(params).is_some_and(|s| s <= FULL_ORACLE_CAP)
}

/// Every applicable method's optimum at each grid cost.
pub fn tradeoff_curve(
    metric: Metric,
    params: &SystemParams,
    gamma: &[f64],
    grid: &[f64],
) -> Result<Vec<TradeoffPoint>> {
    let p = params.with_gamma(gamma.to_vec())?;
    let full = full_space_fits(&p);
    let mut out = Vec::new();
    for &d in grid {
        let mut push =
            |rho: f64, method: Method| out.push(TradeoffPoint::new(metric, &p, d, rho, method));
        match metric {
            Metric::MaxL => {
                push(maxl_optimal(&p, d)?.1, Method::ClosedForm);
                push(maxl_server_one_oracle(&p, d)?, Method::Oracle);
                if full {
                    push(maxl_full_oracle(&p, p.gamma(), d)?.1, Method::OracleFull);
                }
                if !p.is_homogeneous() {
                    push(
                        maxl_reduced_oracle(&p, p.gamma(), d)?.1,
                        Method::SymmetricBaseline,
                    );
                }
            }
            Metric::MI => {
                if p.n() >= 3 {
                    let rho = if p.is_homogeneous() {
                        mi_optimum(&p, d)?.rho
                    } else {
                        rho_mi(&mi_optimal_allocation(&p, d)?, p.gamma())?
                    };
                    push(rho, Method::ClosedForm);
                }
                let reduced = mi_reduced_oracle(&p, d)?.1;
                push(
                    reduced,
                    if p.is_homogeneous() {
                        Method::Oracle
                    } else {
                        Method::SymmetricBaseline
                    },
                );
                if full {
                    push(mi_full_oracle(&p, p.gamma(), d)?.1, Method::OracleFull);
                }
            }
        }
    }
    Ok(out)
}

/// Reduced Max-L oracle on the server-1 term: run with every weight equal to
/// `γ_1`, then add back `Σ_{n>=2}(γ_n − γ_1)`.
pub fn maxl_server_one_oracle(params: &SystemParams, d: f64) -> Result<f64> {
    let g = params.gamma();
    let equal = vec![g[0]; params.n()];
    let (_, v) = maxl_reduced_oracle(params, &equal, d)?;
    Ok(v + g[1..].iter().map(|x| x - g[0]).sum::<f64>())
}

/// Points of one method, ordered by `D`.
pub fn series(points: &[TradeoffPoint], method: Method) -> Vec<(f64, f64)> {
    let mut s: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.method == method)
        .map(|p| (p.d, p.rho))
        .collect();
    s.sort_by(|a, b| a.0.total_cmp(&b.0));
    s
}

/// Checks that `rho` is non-increasing in `D` for every method present.
pub fn check_monotone(points: &[TradeoffPoint]) -> Result<()> {
    for method in [
        Method::ClosedForm,
        Method::Oracle,
        Method::OracleFull,
        Method::SymmetricBaseline,
        Method::MonteCarlo,
    ] {
        for w in series(points, method).windows(2) {
            if w[1].1 > w[0].1 + MONOTONE_TOL {
                return Err(Error::CertificateFailed(vec![format!(
                    "{method} curve increases from {} at D = {} to {} at D = {}",
                    w[0].1, w[0].0, w[1].1, w[1].0
                )]));
            }
        }
    }
    Ok(())
}

/// Lower convex hull of `(D, rho)` points, sorted by `D`.
pub fn lower_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for p in pts {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    hull
}

fn hull_at(hull: &[(f64, f64)], d: f64) -> f64 {
    if d <= hull[0].0 {
        return hull[0].1;
    }
    for w in hull.windows(2) {
        if d <= w[1].0 {
            let t = (d - w[0].0) / (w[1].0 - w[0].0);
            return w[0].1 + t * (w[1].1 - w[0].1);
        }
    }
    hull[hull.len() - 1].1
}

/// Largest gap between `points_opt` and the lower convex hull of
/// `points_tsc` together with `extreme`. Points are `(D, rho)`.
pub fn hull_check(
    points_tsc: &[(f64, f64)],
    extreme: (f64, f64),
    points_opt: &[(f64, f64)],
) -> f64 {
    let mut all = points_tsc.to_vec();
    all.push(extreme);
    let hull = lower_hull(&all);
    points_opt
        .iter()
        .map(|&(d, rho)| (hull_at(&hull, d) - rho).abs())
        .fold(0.0, f64::max)
}

/// Clean-TSC curve (no direct downloads) on `grid`.
pub fn clean_tsc_curve(params: &SystemParams, grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    grid.iter()
        .map(|&d| Ok((d, mi_clean_tsc_oracle(params, d)?.1)))
        .collect()
}

/// Time-sharing check under equal weights: hull of the clean-TSC curve and
/// the direct-download point against the optimal curve. The clean-TSC
/// curve is sampled `refine` times more densely than `grid`.
pub fn mi_time_sharing_deviation(
    params: &SystemParams,
    grid: &[f64],
    refine: usize,
) -> Result<f64> {
    let dense = super::cost_grid(params, (grid.len().max(2) - 1) * refine.max(1) + 1);
    let tsc = clean_tsc_curve(params, &dense)?;
    let opt: Vec<(f64, f64)> = grid
        .iter()
        .map(|&d| Ok((d, mi_reduced_oracle(params, d)?.1)))
        .collect::<Result<_>>()?;
    let extreme = (1.0, params.gamma()[0] * (params.k() as f64).log2());
    Ok(hull_check(&tsc, extreme, &opt))
}
