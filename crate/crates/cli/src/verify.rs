//! Certificate batteries behind `wpir verify`.

use serde::Serialize;
use wpir::optimizer::{
    cost_grid, kkt_verify_maxl, kkt_verify_maxl_perturbed, maxl_full_oracle, maxl_reduced_oracle,
    mi_full_oracle, mi_reduced_oracle, mi_time_sharing_deviation,
};
use wpir::{Result, SystemParams};

/// Offset applied by `--perturb`: to `p_#` in the KKT suite and to the
/// reference value in the comparison suites.
pub const PERTURBATION: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    MaxlKkt,
    Prop2,
    Prop4,
    Hull,
    All,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub suite: &'static str,
    pub passed: bool,
    pub checks: usize,
    pub max_residual: f64,
    pub tolerance: f64,
    pub failures: Vec<String>,
}

impl SuiteReport {
    fn new(suite: &'static str, tolerance: f64) -> Self {
        Self {
            suite,
            passed: true,
            checks: 0,
            max_residual: 0.0,
            tolerance,
            failures: Vec::new(),
        }
    }

    fn record(&mut self, label: String, outcome: Result<f64>) {
        self.checks += 1;
        match outcome {
            Ok(r) => {
                self.max_residual = self.max_residual.max(r);
                if r.is_nan() || r > self.tolerance {
                    self.passed = false;
                    self.failures.push(format!("{label}: residual {r:e}"));
                }
            }
            Err(e) => {
                self.passed = false;
                self.failures.push(format!("{label}: {e}"));
            }
        }
    }
}

pub fn maxl_kkt(perturb: bool) -> SuiteReport {
    let mut rep = SuiteReport::new("maxl-kkt", wpir::optimizer::maxl::KKT_TOL);
    for n in 2..=5 {
        for k in 2..=5 {
            let p = SystemParams::homogeneous(n, k).expect("valid sizes");
            for d in cost_grid(&p, 11) {
                let cert = if perturb {
                    kkt_verify_maxl_perturbed(&p, d, PERTURBATION)
                } else {
                    kkt_verify_maxl(&p, d)
                };
                let outcome = cert.and_then(|c| {
                    if c.violations.is_empty() {
                        Ok(c.max_residual())
                    } else {
                        Err(wpir::Error::CertificateFailed(c.violations))
                    }
                });
                rep.record(format!("N={n} K={k} D={d}"), outcome);
            }
        }
    }
    rep
}

fn shift(perturb: bool) -> f64 {
    if perturb {
        PERTURBATION
    } else {
        0.0
    }
}

pub fn prop2(perturb: bool) -> SuiteReport {
    let mut rep = SuiteReport::new("prop2", 1e-5);
    let p = SystemParams::homogeneous(3, 2).expect("valid sizes");
    for d in cost_grid(&p, 11) {
        let outcome = (|| {
            let full = maxl_full_oracle(&p, p.gamma(), d)?.1;
            let reduced = maxl_reduced_oracle(&p, p.gamma(), d)?.1 + shift(perturb);
            Ok((full - reduced).abs())
        })();
        rep.record(format!("N=3 K=2 D={d}"), outcome);
    }
    rep
}

pub fn prop4(perturb: bool) -> SuiteReport {
    let mut rep = SuiteReport::new("prop4", 1e-4);
    let p = SystemParams::homogeneous(3, 2).expect("valid sizes");
    for d in cost_grid(&p, 11) {
        let outcome = (|| {
            let full = mi_full_oracle(&p, p.gamma(), d)?.1;
            let reduced = mi_reduced_oracle(&p, d)?.1 + shift(perturb);
            Ok((full - reduced).abs())
        })();
        rep.record(format!("N=3 K=2 D={d}"), outcome);
    }
    rep
}

/// Refinement of the clean-TSC sampling relative to the checked grid.
pub const HULL_REFINE: usize = 20;

pub fn hull(perturb: bool) -> SuiteReport {
    let mut rep = SuiteReport::new("hull", 1e-4);
    for (n, k) in [(3, 2), (3, 3), (4, 2)] {
        let p = SystemParams::homogeneous(n, k).expect("valid sizes");
        let grid = cost_grid(&p, 21);
        let outcome =
            mi_time_sharing_deviation(&p, &grid, HULL_REFINE).map(|dev| dev + shift(perturb));
        rep.record(format!("N={n} K={k}"), outcome);
    }
    rep
}

pub fn run(suite: Suite, perturb: bool) -> Vec<SuiteReport> {
    match suite {
        Suite::MaxlKkt => vec![maxl_kkt(perturb)],
        Suite::Prop2 => vec![prop2(perturb)],
        Suite::Prop4 => vec![prop4(perturb)],
        Suite::Hull => vec![hull(perturb)],
        Suite::All => vec![
            maxl_kkt(perturb),
            prop2(perturb),
            prop4(perturb),
            hull(perturb),
        ],
    }
}
