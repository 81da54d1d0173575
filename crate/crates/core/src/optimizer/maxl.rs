//! Maximal-leakage optima: the closed-form allocation, its KKT certificate
//! and two numerical oracles.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::allocation::{Allocation, ReducedAllocation};
use crate::error::{Error, Result};
use crate::leakage::{reduced_rho_maxl, rho_maxl};
use crate::params::{weight_profile, Permutation, SystemParams};
use crate::scheme::{encode_queries, enumerate_key_space, key_vectors, RandomKey};

use super::projection::project_capped_simplex;
use super::subgradient::{minimize, SubgradientOptions};

/// Full key spaces above this size are refused by the full oracles.
pub const FULL_ORACLE_CAP: u64 = 1_000;

/// Direct-download probability on server 1 at cost `d`.
pub fn maxl_direct_share(params: &SystemParams, d: f64) -> f64 {
    let (n, k) = (params.n() as f64, params.k() as i32);
    ((n.powi(k) * params.direct_floor(d) - 1.0) / (n.powi(k - 1) - 1.0)).clamp(0.0, 1.0)
}

/// Closed-form optimum: direct download from server 1 mixed with the
/// unpermuted code.
pub fn maxl_optimal(params: &SystemParams, d: f64) -> Result<(Allocation, f64)> {
    params.check_cost(d)?;
    let n = params.n();
    let share = maxl_direct_share(params, d);
    let coded = (1.0 - share) / (n as f64).powi(params.k() as i32 - 1);
    let pi_star = Permutation::shift(n, 2);
    let mut dist = BTreeMap::new();
    if share > 0.0 {
        dist.insert(RandomKey::direct(1), share);
    }
    if coded > 0.0 {
        for f in key_vectors(n, params.k() - 1) {
            dist.insert(RandomKey::coded(f, pi_star.clone()), coded);
        }
    }
    let allocation = Allocation::message_independent(params.clone(), dist)?;
    let g = params.gamma();
    let rho = g[0] * (params.k() as f64 - 1.0) * share + params.gamma_sum();
    Ok((allocation, rho))
}

/// Optimal value under equal weights `γ`.
pub fn homogeneous_maxl_value(params: &SystemParams, gamma: f64, d: f64) -> Result<f64> {
    params.check_cost(d)?;
    let (n, k) = (params.n() as f64, params.k() as i32);
    let inner = n.powi(k - 1) * (n - (n - 1.0) * d) - 1.0;
    Ok(n * gamma * (1.0 + (k as f64 - 1.0) * inner / (n.powi(k) - n)))
}

/// Primal and dual variables of the reduced linear program together with
/// every KKT residual.
#[derive(Clone, Debug, Serialize)]
pub struct MaxLKktCertificate {
    pub p_sharp: f64,
    pub p: Vec<f64>,
    /// `m_1..m_K`
    pub m: Vec<f64>,
    pub eta_sharp: f64,
    /// `η_0..η_{K-1}`
    pub eta: Vec<f64>,
    pub lambda: f64,
    pub mu: f64,
    /// `λ_1..λ_K`
    pub lambda_j: Vec<f64>,
    /// `μ_1..μ_K`
    pub mu_j: Vec<f64>,
    pub residuals: BTreeMap<String, f64>,
    pub violations: Vec<String>,
}

impl MaxLKktCertificate {
    pub fn max_residual(&self) -> f64 {
        self.residuals.values().fold(0.0, |a, &b| a.max(b.abs()))
    }
}

pub const KKT_TOL: f64 = 1e-9;

/// Builds the explicit primal/dual pair for the reduced problem at cost `d`
/// and checks stationarity, feasibility, complementary slackness and the
/// sandwich inequalities behind dual feasibility.
pub fn kkt_verify_maxl(params: &SystemParams, d: f64) -> Result<MaxLKktCertificate> {
    kkt_verify_maxl_perturbed(params, d, 0.0)
}

/// As [`kkt_verify_maxl`] with `delta` added to `p_sharp` before the checks
/// (`p_j` follow from the normalization).
pub fn kkt_verify_maxl_perturbed(
    params: &SystemParams,
    d: f64,
    delta: f64,
) -> Result<MaxLKktCertificate> {
    params.check_cost(d)?;
    let k = params.k();
    let nf = params.n() as f64;
    let w = weight_profile(params.n(), k)?;
    let t = |j: usize| w.t_f64(j);
    let s = |j: usize| w.s_f64(j);
    let nk = nf.powi(k as i32);
    let nk1 = nf.powi(k as i32 - 1);
    let p_hat = params.direct_floor(d);

    let p_sharp = (nk * p_hat - 1.0) / (nk - nf) + delta;
    let pj = (1.0 - nf * p_sharp) / nk;
    let p = vec![pj; k];
    let p_at = |j: isize| {
        if j < 0 || j as usize >= k {
            0.0
        } else {
            p[j as usize]
        }
    };
    let m: Vec<f64> = (1..=k).map(|j| p_at(j as isize - 1)).collect();

    let eta_sharp = 0.0;
    let eta = vec![0.0; k];
    let lambda = nk1 * (k as f64 - 1.0) / (nk1 - 1.0);
    let mu = nf.powi(k as i32 - 2) * (k as f64 - 1.0) / (nk1 - 1.0) - (nf + k as f64 - 1.0) / nf;
    let c = nf + k as f64 - 1.0;
    let sum_t = |hi: usize| (0..=hi).map(t).sum::<f64>();
    let sum_s = |lo: usize, hi: isize| {
        if hi < lo as isize {
            0.0
        } else {
            (lo..=hi as usize).map(s).sum::<f64>()
        }
    };
    let lambda_j: Vec<f64> = (1..=k)
        .map(|j| sum_t(j) - c * sum_s(0, j as isize - 1) + lambda * sum_s(1, j as isize - 1))
        .collect();
    let mu_j: Vec<f64> = (1..=k)
        .map(|j| -sum_t(j - 1) + c * sum_s(0, j as isize - 1) - lambda * sum_s(1, j as isize - 1))
        .collect();

    let mut residuals = BTreeMap::new();
    let mut violations = Vec::new();
    let mut record = |name: String, value: f64, violations: &mut Vec<String>| {
        if value.abs() > KKT_TOL {
            violations.push(format!("{name} = {value:e}"));
        }
        residuals.insert(name, value);
    };

    // Stationarity.
    record(
        "stationarity p_sharp".into(),
        c - eta_sharp + nf * mu - lambda,
        &mut violations,
    );
    record(
        "stationarity p_0".into(),
        1.0 - eta[0] + nf * mu + mu_j[0] - lambda,
        &mut violations,
    );
    for j in 1..k {
        record(
            format!("stationarity p_{j}"),
            -eta[j] + nf * mu * s(j) + lambda_j[j - 1] + mu_j[j],
            &mut violations,
        );
    }
    for j in 1..=k {
        record(
            format!("stationarity m_{j}"),
            t(j) - lambda_j[j - 1] - mu_j[j - 1],
            &mut violations,
        );
    }
    record("lambda_K".into(), lambda_j[k - 1], &mut violations);

    // Primal feasibility: equality plus signed slacks (only violations count).
    let mass = nf * p_sharp + (0..k).map(|j| nf * s(j) * p[j]).sum::<f64>() - 1.0;
    record("normalization".into(), mass, &mut violations);
    record("p_sharp >= 0".into(), p_sharp.min(0.0), &mut violations);
    for j in 0..k {
        record(format!("p_{j} >= 0"), p[j].min(0.0), &mut violations);
    }
    for j in 1..=k {
        record(
            format!("p_{} <= m_{j}", j - 1),
            (p_at(j as isize - 1) - m[j - 1]).max(0.0),
            &mut violations,
        );
        record(
            format!("p_{j} <= m_{j}"),
            (p_at(j as isize) - m[j - 1]).max(0.0),
            &mut violations,
        );
    }
    record(
        "download floor".into(),
        (p_hat - p[0] - p_sharp).max(0.0),
        &mut violations,
    );

    // Dual feasibility.
    record("lambda >= 0".into(), lambda.min(0.0), &mut violations);
    record("eta_sharp >= 0".into(), eta_sharp.min(0.0), &mut violations);
    for j in 1..=k {
        record(
            format!("lambda_{j} >= 0"),
            lambda_j[j - 1].min(0.0),
            &mut violations,
        );
        record(
            format!("mu_{j} >= 0"),
            mu_j[j - 1].min(0.0),
            &mut violations,
        );
        record(
            format!("eta_{} >= 0", j - 1),
            eta[j - 1].min(0.0),
            &mut violations,
        );
    }

    // Complementary slackness.
    record(
        "slack eta_sharp p_sharp".into(),
        eta_sharp * p_sharp,
        &mut violations,
    );
    for j in 1..k {
        record(
            format!("slack eta_{j} p_{j}"),
            eta[j] * p[j],
            &mut violations,
        );
    }
    for j in 1..=k {
        record(
            format!("slack lambda_{j}"),
            lambda_j[j - 1] * (p_at(j as isize) - m[j - 1]),
            &mut violations,
        );
        record(
            format!("slack mu_{j}"),
            mu_j[j - 1] * (p_at(j as isize - 1) - m[j - 1]),
            &mut violations,
        );
    }
    record(
        "slack lambda".into(),
        lambda * (p_hat - p[0] - p_sharp),
        &mut violations,
    );

    // Sandwich inequalities: numerator / Σ_{i<j} t_i >= 1 >= numerator / Σ_{i<=j} t_i.
    for j in 1..=k {
        let num = c * sum_s(0, j as isize - 1) - lambda * sum_s(1, j as isize - 1);
        let lhs = num / sum_t(j - 1);
        let rhs = num / sum_t(j);
        record(
            format!("sandwich lower {j}"),
            (lhs - 1.0).min(0.0),
            &mut violations,
        );
        record(
            format!("sandwich upper {j}"),
            (rhs - 1.0).max(0.0),
            &mut violations,
        );
    }

    // Strong duality.
    let primal = (1..=k).map(|j| t(j) * m[j - 1]).sum::<f64>() + p[0] + c * p_sharp;
    let dual = -mu + lambda * p_hat;
    record("duality gap".into(), primal - dual, &mut violations);

    let cert = MaxLKktCertificate {
        p_sharp,
        p,
        m,
        eta_sharp,
        eta,
        lambda,
        mu,
        lambda_j,
        mu_j,
        residuals,
        violations,
    };
    if cert.violations.is_empty() {
        Ok(cert)
    } else {
        Err(Error::CertificateFailed(cert.violations))
    }
}

fn reduced_scales(params: &SystemParams) -> Result<Vec<f64>> {
    let nf = params.n() as f64;
    let w = weight_profile(params.n(), params.k())?;
    Ok(std::iter::once(nf)
        .chain((0..params.k()).map(|j| nf * w.s_f64(j)))
        .collect())
}

fn reduced_from_z(z: &[f64], scales: &[f64]) -> ReducedAllocation {
    ReducedAllocation {
        p_sharp: z[0] / scales[0],
        p: z[1..]
            .iter()
            .zip(&scales[1..])
            .map(|(a, b)| a / b)
            .collect(),
    }
}

/// Oracle options shared by the Max-L solvers.
fn oracle_options() -> SubgradientOptions {
    SubgradientOptions::default()
}

/// Minimizes the reduced Max-L objective numerically. With `gamma` summing
/// to `Σγ`, the objective is `Σγ` times the per-server term, so the weights
/// only scale the result.
pub fn maxl_reduced_oracle(
    params: &SystemParams,
    gamma: &[f64],
    d: f64,
) -> Result<(ReducedAllocation, f64)> {
    maxl_reduced_oracle_with(params, gamma, d, &oracle_options())
}

pub fn maxl_reduced_oracle_with(
    params: &SystemParams,
    gamma: &[f64],
    d: f64,
    opts: &SubgradientOptions,
) -> Result<(ReducedAllocation, f64)> {
    params.check_cost(d)?;
    let k = params.k();
    let w = weight_profile(params.n(), k)?;
    let scales = reduced_scales(params)?;
    let nf = params.n() as f64;
    let floor = (nf * params.direct_floor(d)).clamp(0.0, 1.0);
    let g_sum: f64 = gamma.iter().sum();
    // z = (N p_sharp, N s_0 p_0, …, N s_{K-1} p_{K-1}) lives on the unit simplex.
    let in_b: Vec<bool> = (0..=k).map(|i| i <= 1).collect();
    let oracle = |z: &[f64]| {
        let r = reduced_from_z(z, &scales);
        let value = reduced_rho_maxl(&r, gamma, params);
        let mut g = vec![0.0; k + 1];
        g[0] = nf + k as f64 - 1.0;
        g[1] = 1.0;
        for j in 1..=k {
            let (a, b) = (r.p_at(j as isize - 1), r.p_at(j as isize));
            if a >= b {
                g[j] += w.t_f64(j);
            } else {
                g[j + 1] += w.t_f64(j);
            }
        }
        let g = g
            .iter()
            .zip(&scales)
            .map(|(gi, si)| g_sum * gi / si)
            .collect();
        (value, g)
    };
    let project = |z: &mut [f64]| project_capped_simplex(z, &in_b, floor);
    let x0 = vec![1.0 / (k + 1) as f64; k + 1];
    let res = minimize(oracle, project, x0, opts)?;
    let r = reduced_from_z(&res.x, &scales);
    Ok((r, res.value))
}

/// Solves the problem over full per-message key distributions by projected
/// subgradient.
pub fn maxl_full_oracle(params: &SystemParams, gamma: &[f64], d: f64) -> Result<(Allocation, f64)> {
    let opts = SubgradientOptions {
        path_bound: (params.k() as f64).sqrt(),
        ..oracle_options()
    };
    maxl_full_oracle_with(params, gamma, d, &opts)
}

pub fn maxl_full_oracle_with(
    params: &SystemParams,
    gamma: &[f64],
    d: f64,
    opts: &SubgradientOptions,
) -> Result<(Allocation, f64)> {
    params.check_cost(d)?;
    let space = FullSpace::new(params)?;
    let nf = params.n() as f64;
    let floor = (nf * params.direct_floor(d)).clamp(0.0, 1.0);
    let (kk, m) = (params.k(), space.keys.len());
    let oracle = |x: &[f64]| space.maxl_value_and_subgradient(x, gamma);
    let project = |x: &mut [f64]| {
        for block in x.chunks_mut(m) {
            project_capped_simplex(block, &space.in_b, floor);
        }
    };
    let x0 = vec![1.0 / m as f64; kk * m];
    let res = minimize(oracle, project, x0, opts)?;
    let allocation = space.to_allocation(&res.x)?;
    let rho = rho_maxl(&allocation, gamma)?;
    Ok((allocation, rho))
}

/// Dense view of the full key space: per message and server, the query
/// index each key induces.
pub(crate) struct FullSpace {
    pub params: SystemParams,
    pub keys: Vec<RandomKey>,
    /// Keys whose retrieval costs exactly `L` symbols.
    pub in_b: Vec<bool>,
    /// `query[k][n][i]`: query index seen by server `n` for key `i` and message `k`.
    pub query: Vec<Vec<Vec<usize>>>,
    pub query_count: usize,
}

impl FullSpace {
    pub fn new(params: &SystemParams) -> Result<Self> {
        let keys = enumerate_key_space(params)?;
        if keys.len() as u64 > FULL_ORACLE_CAP {
            return Err(Error::TooLarge {
                what: "key space per message",
                size: keys.len() as u64,
                cap: FULL_ORACLE_CAP,
            });
        }
        let (n, k) = (params.n(), params.k());
        let query_count = params.query_space_size()? as usize + k;
        let mut query = vec![vec![vec![0; keys.len()]; n]; k];
        for m in 1..=k {
            for (i, key) in keys.iter().enumerate() {
                for (server, q) in encode_queries(m, key, params)?.iter().enumerate() {
                    query[m - 1][server][i] = q.index(n, k);
                }
            }
        }
        Ok(Self {
            params: params.clone(),
            in_b: keys.iter().map(RandomKey::is_direct_pattern).collect(),
            keys,
            query,
            query_count,
        })
    }

    /// `P(q | k)` at `server` for the stacked per-message distributions `x`.
    pub fn conditional(&self, x: &[f64], server: usize) -> Vec<Vec<f64>> {
        let m = self.keys.len();
        (0..self.params.k())
            .map(|k| {
                let mut dist = vec![0.0; self.query_count];
                for (i, &qi) in self.query[k][server].iter().enumerate() {
                    dist[qi] += x[k * m + i];
                }
                dist
            })
            .collect()
    }

    fn maxl_value_and_subgradient(&self, x: &[f64], gamma: &[f64]) -> (f64, Vec<f64>) {
        let m = self.keys.len();
        let mut value = 0.0;
        let mut grad = vec![0.0; x.len()];
        for (server, &g) in gamma.iter().enumerate() {
            let cond = self.conditional(x, server);
            let mut argmax = vec![0usize; self.query_count];
            for q in 0..self.query_count {
                let mut best = 0;
                for k in 1..cond.len() {
                    if cond[k][q] > cond[best][q] {
                        best = k;
                    }
                }
                argmax[q] = best;
                value += g * cond[best][q];
            }
            for k in 0..self.params.k() {
                for (i, &qi) in self.query[k][server].iter().enumerate() {
                    if argmax[qi] == k {
                        grad[k * m + i] += g;
                    }
                }
            }
        }
        (value, grad)
    }

    pub fn to_allocation(&self, x: &[f64]) -> Result<Allocation> {
        let m = self.keys.len();
        let probs = x
            .chunks(m)
            .map(|block| {
                let total: f64 = block.iter().map(|v| v.max(0.0)).sum();
                self.keys
                    .iter()
                    .zip(block)
                    .filter(|(_, &p)| p > 0.0)
                    .map(|(key, &p)| (key.clone(), p / total))
                    .collect()
            })
            .collect();
        Allocation::new(self.params.clone(), probs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocation::download_cost;
    use crate::leakage::max_leakage;
    use crate::optimizer::cost_grid;

    fn homog(n: usize, k: usize) -> SystemParams {
        SystemParams::homogeneous(n, k).unwrap()
    }

    #[test]
    fn closed_form_endpoints() {
        for n in 2..=5 {
            for k in 2..=5 {
                for gamma in [None, Some((1..=n).map(|i| i as f64).collect::<Vec<_>>())] {
                    let p = match gamma {
                        None => homog(n, k),
                        Some(g) => SystemParams::new(n, k, g).unwrap(),
                    };
                    let g = p.gamma();
                    let (_, top) = maxl_optimal(&p, p.capacity_cost()).unwrap();
                    assert!((top - p.gamma_sum()).abs() < 1e-12);
                    let (_, bottom) = maxl_optimal(&p, 1.0).unwrap();
                    let want = g[0] * k as f64 + g[1..].iter().sum::<f64>();
                    assert!((bottom - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn three_servers_at_seven_sixths() {
        let p = homog(3, 2);
        assert!((maxl_direct_share(&p, 7.0 / 6.0) - 0.5).abs() < 1e-12);
        let (a, rho) = maxl_optimal(&p, 7.0 / 6.0).unwrap();
        assert!((rho - 7.0 / 6.0).abs() < 1e-12);
        assert!((download_cost(&a) - 7.0 / 6.0).abs() < 1e-12);
        let analytic: f64 = (0..3)
            .map(|s| p.gamma()[s] * 2f64.powf(max_leakage(&a, s + 1).unwrap()))
            .sum();
        assert!((analytic - rho).abs() < 1e-12);
    }

    #[test]
    fn theorem_two_examples() {
        let p = homog(3, 2);
        let g = 1.0 / 3.0;
        assert!((homogeneous_maxl_value(&p, g, p.capacity_cost()).unwrap() - 1.0).abs() < 1e-12);
        assert!((homogeneous_maxl_value(&p, g, 1.0).unwrap() - 4.0 / 3.0).abs() < 1e-12);
        assert!((homogeneous_maxl_value(&p, g, 7.0 / 6.0).unwrap() - 7.0 / 6.0).abs() < 1e-12);
        assert!(matches!(
            homogeneous_maxl_value(&p, g, 2.0),
            Err(Error::OutOfRange { .. })
        ));
        assert!(matches!(
            maxl_optimal(&p, 0.5),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn closed_forms_agree_under_equal_weights() {
        for n in 2..=5 {
            for k in 2..=5 {
                let p = homog(n, k);
                for d in cost_grid(&p, 21) {
                    let a = maxl_optimal(&p, d).unwrap().1;
                    let b = homogeneous_maxl_value(&p, 1.0 / n as f64, d).unwrap();
                    assert!((a - b).abs() < 1e-12, "N={n} K={k} D={d}");
                }
            }
        }
    }

    #[test]
    fn closed_form_meets_cost_and_leakage() {
        for (n, k) in [(2, 2), (3, 2), (3, 3), (4, 2)] {
            let p =
                SystemParams::new(n, k, (1..=n).map(|i| i as f64 / n as f64).collect()).unwrap();
            for d in cost_grid(&p, 11) {
                let (a, rho) = maxl_optimal(&p, d).unwrap();
                a.validate().unwrap();
                assert!(download_cost(&a) <= d + 1e-8);
                assert!((rho_maxl(&a, p.gamma()).unwrap() - rho).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn certificate_battery() {
        for n in 2..=5 {
            for k in 2..=5 {
                let p = homog(n, k);
                for d in cost_grid(&p, 11) {
                    let cert =
                        kkt_verify_maxl(&p, d).unwrap_or_else(|e| panic!("N={n} K={k} D={d}: {e}"));
                    assert!(cert.max_residual() <= KKT_TOL);
                    assert!(cert.lambda >= 0.0);
                    assert!(cert
                        .lambda_j
                        .iter()
                        .chain(&cert.mu_j)
                        .all(|&v| v >= -KKT_TOL));
                }
            }
        }
    }

    #[test]
    fn certificate_value_matches_closed_form() {
        let p = homog(3, 2);
        let cert = kkt_verify_maxl(&p, 7.0 / 6.0).unwrap();
        let r = ReducedAllocation {
            p_sharp: cert.p_sharp,
            p: cert.p.clone(),
        };
        let v = reduced_rho_maxl(&r, p.gamma(), &p);
        assert!((v - 7.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn perturbed_certificate_fails() {
        let p = homog(3, 2);
        match kkt_verify_maxl_perturbed(&p, 7.0 / 6.0, 0.01) {
            Err(Error::CertificateFailed(v)) => {
                assert!(v.iter().any(|s| s.starts_with("slack lambda ")));
            }
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn reduced_oracle_matches_closed_form() {
        for (n, k) in [(3, 2), (4, 3)] {
            let p = homog(n, k);
            for d in cost_grid(&p, 20) {
                let (r, v) = maxl_reduced_oracle(&p, p.gamma(), d).unwrap();
                let exact = maxl_optimal(&p, d).unwrap().1;
                assert!(
                    (v - exact).abs() <= 1e-6,
                    "N={n} K={k} D={d}: {v} vs {exact}"
                );
                r.validate(&p).unwrap();
                assert!(crate::allocation::reduced_download_cost(&r, &p) <= d + 1e-8);
            }
        }
    }

    #[test]
    fn full_oracle_matches_reduced() {
        for n in [2, 3] {
            let p = homog(n, 2);
            for d in cost_grid(&p, 6) {
                let (a, v) = maxl_full_oracle(&p, p.gamma(), d).unwrap();
                let (_, r) = maxl_reduced_oracle(&p, p.gamma(), d).unwrap();
                assert!((v - r).abs() <= 1e-5, "N={n} D={d}: {v} vs {r}");
                assert!(download_cost(&a) <= d + 1e-8);
            }
        }
        let p = homog(3, 2);
        let (_, v) = maxl_full_oracle(&p, p.gamma(), 1.0).unwrap();
        assert!((v - 4.0 / 3.0).abs() < 1e-5);
    }

    #[test]
    fn full_oracle_refuses_large_spaces() {
        let p = homog(5, 3);
        assert!(matches!(
            maxl_full_oracle(&p, p.gamma(), 1.2),
            Err(Error::TooLarge { .. })
        ));
    }
}
