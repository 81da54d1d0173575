//! Privacy leakage under maximal leakage and mutual information, for full
//! allocations and for the reduced symmetric form.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::allocation::{Allocation, ReducedAllocation};
use crate::error::Result;
use crate::params::{weight_profile, SystemParams};
use crate::scheme::{encode_queries, Query};

/// Probabilities below this are exact zeros inside entropy terms.
pub const ZERO_PROB: f64 = 1e-15;

/// What one server sees: per requested message, a distribution over queries.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryDistribution {
    pub server: usize,
    pub per_message: Vec<BTreeMap<Query, f64>>,
}

impl QueryDistribution {
    pub fn k(&self) -> usize {
        self.per_message.len()
    }

    /// `P(Q = q | M = k)` for 1-based `k`.
    pub fn prob(&self, k: usize, q: &Query) -> f64 {
        self.per_message[k - 1].get(q).copied().unwrap_or(0.0)
    }

    fn support(&self) -> Vec<&Query> {
        let mut qs: Vec<&Query> = self.per_message.iter().flat_map(|m| m.keys()).collect();
        qs.sort();
        qs.dedup();
        qs
    }

    /// `Σ_q max_k P(q | k)`, the exponential of the maximal leakage.
    pub fn max_sum(&self) -> f64 {
        self.support()
            .into_iter()
            .map(|q| (1..=self.k()).map(|k| self.prob(k, q)).fold(0.0, f64::max))
            .sum()
    }

    /// Maximal leakage in bits.
    pub fn max_leakage(&self) -> f64 {
        self.max_sum().log2().max(0.0)
    }

    /// `I(M; Q)` in bits with `M` uniform.
    pub fn mutual_information(&self) -> f64 {
        let kf = self.k() as f64;
        let mut total = 0.0;
        for q in self.support() {
            let probs: Vec<f64> = (1..=self.k()).map(|k| self.prob(k, q)).collect();
            let mean = probs.iter().sum::<f64>() / kf;
            for p in probs {
                if p > ZERO_PROB {
                    total += p / kf * (p / mean).log2();
                }
            }
        }
        total.max(0.0)
    }
}

/// Marginal query distribution at `server` (1-based).
pub fn query_distribution(a: &Allocation, server: usize) -> Result<QueryDistribution> {
    let params = a.params();
    let mut per_message = Vec::with_capacity(params.k());
    for k in 1..=params.k() {
        let mut map = BTreeMap::new();
        for (key, &p) in a.for_message(k) {
            let q = encode_queries(k, key, params)?.swap_remove(server - 1);
            *map.entry(q).or_insert(0.0) += p;
        }
        per_message.push(map);
    }
    Ok(QueryDistribution {
        server,
        per_message,
    })
}

pub fn max_leakage(a: &Allocation, server: usize) -> Result<f64> {
    Ok(query_distribution(a, server)?.max_leakage())
}

pub fn mi_leakage(a: &Allocation, server: usize) -> Result<f64> {
    Ok(query_distribution(a, server)?.mutual_information())
}

/// `Σ_n γ_n 2^{L_n}` with `L_n` the maximal leakage at server `n`.
pub fn rho_maxl(a: &Allocation, gamma: &[f64]) -> Result<f64> {
    let mut rho = 0.0;
    for (i, g) in gamma.iter().enumerate() {
        rho += g * query_distribution(a, i + 1)?.max_sum();
    }
    Ok(rho)
}

/// `Σ_n γ_n I(M; Q_n)`.
pub fn rho_mi(a: &Allocation, gamma: &[f64]) -> Result<f64> {
    let mut rho = 0.0;
    for (i, g) in gamma.iter().enumerate() {
        rho += g * mi_leakage(a, i + 1)?;
    }
    Ok(rho)
}

/// Per-server `Σ_q max_k P` of a reduced allocation (identical at every server).
pub fn reduced_maxl_term(r: &ReducedAllocation, params: &SystemParams) -> f64 {
    let (n, k) = (params.n() as f64, params.k());
    let w = weight_profile(params.n(), k).expect("validated params");
    let coded: f64 = (1..=k)
        .map(|j| w.t_f64(j) * r.p_at(j as isize - 1).max(r.p_at(j as isize)))
        .sum();
    coded + r.p[0] + (n + k as f64 - 1.0) * r.p_sharp
}

pub fn reduced_rho_maxl(r: &ReducedAllocation, gamma: &[f64], params: &SystemParams) -> f64 {
    gamma.iter().sum::<f64>() * reduced_maxl_term(r, params)
}

fn xlog2x(x: f64) -> f64 {
    if x > ZERO_PROB {
        x * x.log2()
    } else {
        0.0
    }
}

/// Per-server average MI of a reduced allocation, in bits.
pub fn reduced_mi_objective(r: &ReducedAllocation, params: &SystemParams) -> f64 {
    let k = params.k();
    let kf = k as f64;
    let w = weight_profile(params.n(), k).expect("validated params");
    let mut total = 0.0;
    for j in 1..=k {
        let a = r.p_at(j as isize - 1);
        let b = r.p_at(j as isize);
        let (ja, kb) = (j as f64 * a, (k - j) as f64 * b);
        let mix = ja + kb;
        let brace = j as f64 * xlog2x(a) + (k - j) as f64 * xlog2x(b)
            - if mix > ZERO_PROB {
                mix * (mix / kf).log2()
            } else {
                0.0
            };
        total += w.t_f64(j) * brace;
    }
    (r.p_sharp * kf.log2() + total / kf).max(0.0)
}

/// Gradient of [`reduced_mi_objective`] with respect to `(p_sharp, p_0, …, p_{K-1})`.
/// Zero entries are floored at `floor` so the logarithms stay finite.
pub fn reduced_mi_gradient(r: &ReducedAllocation, params: &SystemParams, floor: f64) -> Vec<f64> {
    let k = params.k();
    let kf = k as f64;
    let w = weight_profile(params.n(), k).expect("validated params");
    let p = |j: usize| if j < k { r.p[j].max(floor) } else { 0.0 };
    let mut grad = vec![0.0; k + 1];
    grad[0] = kf.log2();
    for j in 1..=k {
        let (a, b) = (p(j - 1), p(j));
        let mix = j as f64 * a + (k - j) as f64 * b;
        let tj = w.t_f64(j);
        grad[j] += tj * j as f64 * (a * kf / mix).log2() / kf;
        if j < k {
            grad[j + 1] += tj * (k - j) as f64 * (b * kf / mix).log2() / kf;
        }
    }
    grad
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    MaxL,
    MI,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::MaxL => "maxl",
            Metric::MI => "mi",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ClosedForm,
    /// Reduced-problem numerical solver.
    Oracle,
    /// Solver over the full key space.
    OracleFull,
    /// Best symmetric reduced allocation under unequal weights.
    SymmetricBaseline,
    MonteCarlo,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::ClosedForm => "closed_form",
            Method::Oracle => "oracle",
            Method::OracleFull => "oracle_full",
            Method::SymmetricBaseline => "symmetric_baseline",
            Method::MonteCarlo => "monte_carlo",
        })
    }
}

/// One `(D, ρ)` pair with its provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub metric: Metric,
    pub n: usize,
    pub k: usize,
    pub gamma: Vec<f64>,
    #[serde(rename = "D")]
    pub d: f64,
    pub rho: f64,
    pub method: Method,
}

impl TradeoffPoint {
    pub fn new(metric: Metric, params: &SystemParams, d: f64, rho: f64, method: Method) -> Self {
        Self {
            metric,
            n: params.n(),
            k: params.k(),
            gamma: params.gamma().to_vec(),
            d,
            rho,
            method,
        }
    }

    pub const CSV_HEADER: &'static str = "metric,N,K,gamma,D,rho,method";

    pub fn csv_row(&self) -> String {
        let gamma: Vec<String> = self.gamma.iter().map(|g| g.to_string()).collect();
        format!(
            "{},{},{},{},{},{},{}",
            self.metric,
            self.n,
            self.k,
            gamma.join(";"),
            self.d,
            self.rho,
            self.method
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocation::{expand_reduced, uniform_tsc};
    use crate::scheme::RandomKey;
    use crate::testutil::random_reduced;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(n: usize, k: usize) -> SystemParams {
        SystemParams::homogeneous(n, k).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn uniform_tsc_query_distribution() {
        let p = params(3, 2);
        let a = expand_reduced(&uniform_tsc(&p), &p).unwrap();
        for n in 1..=3 {
            let qd = query_distribution(&a, n).unwrap();
            for k in 1..=2 {
                assert_eq!(qd.per_message[k - 1].len(), 9);
                assert!(qd.per_message[k - 1]
                    .values()
                    .all(|&x| close(x, 1.0 / 9.0, 1e-15)));
            }
            assert!(close(max_leakage(&a, n).unwrap(), 0.0, 1e-12));
            assert!(close(mi_leakage(&a, n).unwrap(), 0.0, 1e-12));
        }
    }

    #[test]
    fn direct_download_distribution() {
        let p = params(3, 2);
        let a = Allocation::point_mass(p.clone(), RandomKey::direct(1)).unwrap();
        let qd = query_distribution(&a, 1).unwrap();
        assert_eq!(qd.prob(1, &Query::Escape(1)), 1.0);
        assert_eq!(qd.prob(2, &Query::Escape(2)), 1.0);
        for n in 2..=3 {
            let qd = query_distribution(&a, n).unwrap();
            assert_eq!(qd.prob(1, &Query::Vector(vec![0, 0])), 1.0);
        }
        assert!(close(max_leakage(&a, 1).unwrap(), 1.0, 1e-15));
        assert!(close(mi_leakage(&a, 1).unwrap(), 1.0, 1e-15));
        assert_eq!(max_leakage(&a, 2).unwrap(), 0.0);
        assert_eq!(mi_leakage(&a, 3).unwrap(), 0.0);

        let third = [1.0 / 3.0; 3];
        assert!(close(rho_maxl(&a, &third).unwrap(), 4.0 / 3.0, 1e-12));
        assert!(close(rho_maxl(&a, &[0.1, 0.3, 0.6]).unwrap(), 1.1, 1e-12));
        assert!(close(rho_mi(&a, &third).unwrap(), 1.0 / 3.0, 1e-12));
        assert!(close(rho_mi(&a, &[0.1, 0.3, 0.6]).unwrap(), 0.1, 1e-12));
    }

    #[test]
    fn fixed_permutation_tsc_is_perfectly_private() {
        use crate::params::all_permutations;
        use crate::scheme::key_vectors;
        for (n, k) in [(3, 2), (3, 3), (4, 2)] {
            let p = params(n, k);
            for pi in all_permutations(n) {
                let mass = 1.0 / (n as f64).powi(k as i32 - 1);
                let dist: BTreeMap<_, _> = key_vectors(n, k - 1)
                    .map(|f| (RandomKey::coded(f, pi.clone()), mass))
                    .collect();
                let a = Allocation::message_independent(p.clone(), dist).unwrap();
                for server in 1..=n {
                    let qd = query_distribution(&a, server).unwrap();
                    for m in 2..=k {
                        let tv: f64 = qd
                            .support()
                            .iter()
                            .map(|q| (qd.prob(1, q) - qd.prob(m, q)).abs())
                            .sum();
                        assert!(tv < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn reduced_maxl_examples() {
        let p = params(3, 2);
        let g = [0.2, 0.3, 0.5];
        assert!(close(
            reduced_rho_maxl(&uniform_tsc(&p), &g, &p),
            1.0,
            1e-12
        ));
        let direct = ReducedAllocation {
            p_sharp: 1.0 / 3.0,
            p: vec![0.0, 0.0],
        };
        assert!(close(reduced_rho_maxl(&direct, &g, &p), 4.0 / 3.0, 1e-12));
    }

    #[test]
    fn reduced_mi_examples() {
        let p = params(3, 2);
        assert!(close(
            reduced_mi_objective(&uniform_tsc(&p), &p),
            0.0,
            1e-12
        ));
        let direct = ReducedAllocation {
            p_sharp: 1.0 / 3.0,
            p: vec![0.0, 0.0],
        };
        assert!(close(reduced_mi_objective(&direct, &p), 1.0 / 3.0, 1e-12));
    }

    #[test]
    fn reduced_forms_agree_with_full_evaluators() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (n, k) in [(2, 2), (3, 2), (3, 3), (4, 2)] {
            let p = params(n, k);
            let hetero: Vec<f64> = (1..=n).map(|i| i as f64).collect();
            for _ in 0..100 {
                let r = random_reduced(&p, &mut rng);
                let a = expand_reduced(&r, &p).unwrap();
                assert!(close(
                    reduced_rho_maxl(&r, &hetero, &p),
                    rho_maxl(&a, &hetero).unwrap(),
                    1e-10
                ));
                let mi = reduced_mi_objective(&r, &p);
                assert!(close(mi, rho_mi(&a, p.gamma()).unwrap(), 1e-10));
                assert!(mi <= (k as f64).log2() + 1e-12);
            }
        }
    }

    #[test]
    fn direct_share_bound_holds_on_time_sharing_points_only() {
        let p = params(3, 2);
        let bound = 1.0 / 3.0;
        for i in 0..=10 {
            let lam = i as f64 / 10.0;
            let u = uniform_tsc(&p);
            let r = ReducedAllocation {
                p_sharp: lam / 3.0,
                p: u.p.iter().map(|x| (1.0 - lam) * x).collect(),
            };
            assert!(reduced_mi_objective(&r, &p) <= bound + 1e-12);
        }
        let heavy = ReducedAllocation {
            p_sharp: 0.0,
            p: vec![0.3, 0.1 / 6.0],
        };
        assert!(reduced_mi_objective(&heavy, &p) > bound);
    }

    #[test]
    fn leakage_bounds_on_random_allocations() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for (n, k) in [(3, 2), (3, 3)] {
            let p = params(n, k);
            for _ in 0..20 {
                let a = crate::testutil::random_full(&p, &mut rng);
                for server in 1..=n {
                    let qd = query_distribution(&a, server).unwrap();
                    let ms = qd.max_sum();
                    assert!((1.0 - 1e-12..=k as f64 + 1e-12).contains(&ms));
                    let mi = qd.mutual_information();
                    assert!(mi <= (k as f64).log2() + 1e-12);
                }
            }
        }
    }

    #[test]
    fn merging_queries_never_increases_leakage() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let p = params(3, 2);
        for _ in 0..30 {
            let a = crate::testutil::random_full(&p, &mut rng);
            let qd = query_distribution(&a, 1).unwrap();
            let support = qd.support().into_iter().cloned().collect::<Vec<_>>();
            for i in 0..support.len() {
                for j in i + 1..support.len() {
                    let mut merged = qd.clone();
                    for m in merged.per_message.iter_mut() {
                        if let Some(x) = m.remove(&support[j]) {
                            *m.entry(support[i].clone()).or_insert(0.0) += x;
                        }
                    }
                    assert!(merged.mutual_information() <= qd.mutual_information() + 1e-12);
                    assert!(merged.max_sum() <= qd.max_sum() + 1e-12);
                }
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for (n, k) in [(3, 2), (3, 3), (4, 3)] {
            let p = params(n, k);
            for _ in 0..10 {
                let r = random_reduced(&p, &mut rng);
                if r.p.iter().any(|&x| x < 1e-4) {
                    continue;
                }
                let g = reduced_mi_gradient(&r, &p, 1e-300);
                let h = 1e-7;
                for i in 0..=k {
                    let mut up = r.clone();
                    let mut dn = r.clone();
                    if i == 0 {
                        up.p_sharp += h;
                        dn.p_sharp -= h;
                    } else {
                        up.p[i - 1] += h;
                        dn.p[i - 1] -= h;
                    }
                    let fd =
                        (reduced_mi_objective(&up, &p) - reduced_mi_objective(&dn, &p)) / (2.0 * h);
                    assert!(
                        close(fd, g[i], 1e-5 * g[i].abs().max(1.0)),
                        "i={i}: fd {fd} vs {}",
                        g[i]
                    );
                }
            }
        }
    }

    #[test]
    fn csv_row_format() {
        let p = SystemParams::new(3, 2, vec![0.6, 0.1, 0.3]).unwrap();
        let pt = TradeoffPoint::new(Metric::MaxL, &p, 1.25, 1.5, Method::ClosedForm);
        assert_eq!(pt.csv_row(), "maxl,3,2,0.1;0.3;0.6,1.25,1.5,closed_form");
    }
}
