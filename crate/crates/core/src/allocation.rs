//! Probability allocations over the random-key space.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{cyclic_permutations, hamming_weight, weight_profile, SystemParams};
use crate::scheme::{enumerate_key_space, key_vectors, RandomKey};

/// Normalization tolerance.
pub const NORM_TOL: f64 = 1e-9;
/// Negative values above `-CLAMP_TOL` are rounding noise and clamp to 0.
pub const CLAMP_TOL: f64 = 1e-12;

/// One distribution over [`RandomKey`] per requested message. Only keys
/// with nonzero mass are stored.
#[derive(Clone, Debug, PartialEq)]
pub struct Allocation {
    params: SystemParams,
    probs: Vec<BTreeMap<RandomKey, f64>>,
}

impl Allocation {
    /// Validates, clamps rounding noise and drops zero entries.
    pub fn new(params: SystemParams, probs: Vec<BTreeMap<RandomKey, f64>>) -> Result<Self> {
        if probs.len() != params.k() {
            return Err(Error::InvalidParams(format!(
                "allocation has {} per-message maps, expected K = {}",
                probs.len(),
                params.k()
            )));
        }
        for map in &probs {
            for key in map.keys() {
                key.validate(&params)?;
            }
        }
        let raw = Self { params, probs };
        raw.validate()?;
        let probs = raw
            .probs
            .into_iter()
            .map(|m| m.into_iter().filter(|(_, p)| *p > 0.0).collect())
            .collect();
        Ok(Self {
            params: raw.params,
            probs,
        })
    }

    /// The same key distribution for every message.
    pub fn message_independent(
        params: SystemParams,
        dist: BTreeMap<RandomKey, f64>,
    ) -> Result<Self> {
        let probs = vec![dist; params.k()];
        Self::new(params, probs)
    }

    /// All mass on one key for every message.
    pub fn point_mass(params: SystemParams, key: RandomKey) -> Result<Self> {
        Self::message_independent(params, BTreeMap::from([(key, 1.0)]))
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    /// Key distribution when message `k` (1-based) is requested.
    pub fn for_message(&self, k: usize) -> &BTreeMap<RandomKey, f64> {
        &self.probs[k - 1]
    }

    pub fn prob(&self, k: usize, key: &RandomKey) -> f64 {
        self.probs[k - 1].get(key).copied().unwrap_or(0.0)
    }

    /// Passes iff every per-message map is non-negative and sums to one.
    pub fn validate(&self) -> Result<()> {
        for (i, map) in self.probs.iter().enumerate() {
            if let Some((key, _)) = map.iter().find(|(_, p)| **p < -CLAMP_TOL || p.is_nan()) {
                return Err(Error::NegativeProbability {
                    k: i + 1,
                    key: key.to_string(),
                });
            }
            let total: f64 = map.values().map(|p| p.max(0.0)).sum();
            if (total - 1.0).abs() > NORM_TOL {
                return Err(Error::NotNormalized {
                    k: i + 1,
                    residual: total - 1.0,
                });
            }
        }
        Ok(())
    }

    /// Replaces the trust weights, keeping the distribution.
    pub fn with_params(mut self, params: SystemParams) -> Result<Self> {
        if params.n() != self.params.n() || params.k() != self.params.k() {
            return Err(Error::InvalidParams(
                "N or K differ from the allocation".into(),
            ));
        }
        self.params = params;
        Ok(self)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let doc = AllocationDoc {
            n: self.params.n(),
            k: self
                .probs
                .iter()
                .map(|m| {
                    m.iter()
                        .map(|(key, &prob)| KeyProb {
                            key: key.clone(),
                            prob,
                        })
                        .collect()
                })
                .collect(),
        };
        serde_json::to_value(doc).expect("allocation serializes")
    }

    /// Parses the full JSON form. Trust weights default to homogeneous.
    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let doc: AllocationDoc = serde_json::from_value(value.clone())?;
        let params = SystemParams::homogeneous(doc.n, doc.k.len())?;
        let mut probs = Vec::with_capacity(doc.k.len());
        for entries in doc.k {
            let mut map = BTreeMap::new();
            for KeyProb { key, prob } in entries {
                *map.entry(key).or_insert(0.0) += prob;
            }
            probs.push(map);
        }
        Self::new(params, probs)
    }
}

#[derive(Serialize, Deserialize)]
struct KeyProb {
    key: RandomKey,
    prob: f64,
}

#[derive(Serialize, Deserialize)]
struct AllocationDoc {
    n: usize,
    k: Vec<Vec<KeyProb>>,
}

/// Message-symmetric allocation: `p_sharp` on every direct key and `p[j]` on
/// every cyclic coded key whose vector has Hamming weight `j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducedAllocation {
    pub p_sharp: f64,
    pub p: Vec<f64>,
}

impl ReducedAllocation {
    /// `p_j` with the convention `p_{-1} = p_K = 0`.
    pub fn p_at(&self, j: isize) -> f64 {
        if j < 0 {
            0.0
        } else {
            self.p.get(j as usize).copied().unwrap_or(0.0)
        }
    }

    /// `N p_sharp + Σ_j N s_j p_j`.
    pub fn total_mass(&self, params: &SystemParams) -> f64 {
        let n = params.n() as f64;
        let s = weight_profile(params.n(), params.k()).expect("validated params");
        n * self.p_sharp
            + self
                .p
                .iter()
                .enumerate()
                .map(|(j, pj)| n * s.s_f64(j) * pj)
                .sum::<f64>()
    }

    pub fn validate(&self, params: &SystemParams) -> Result<()> {
        if self.p.len() != params.k() {
            return Err(Error::InvalidParams(format!(
                "reduced allocation needs {} entries p_0..p_(K-1), got {}",
                params.k(),
                self.p.len()
            )));
        }
        if self.p_sharp < -CLAMP_TOL || self.p_sharp.is_nan() {
            return Err(Error::NegativeProbability {
                k: 0,
                key: "p_sharp".into(),
            });
        }
        if let Some(j) = self.p.iter().position(|&x| x < -CLAMP_TOL || x.is_nan()) {
            return Err(Error::NegativeProbability {
                k: 0,
                key: format!("p_{j}"),
            });
        }
        let residual = self.total_mass(params) - 1.0;
        if residual.abs() > NORM_TOL {
            return Err(Error::NotNormalized { k: 0, residual });
        }
        Ok(())
    }

    fn clamped(mut self) -> Self {
        self.p_sharp = self.p_sharp.max(0.0);
        for x in &mut self.p {
            *x = x.max(0.0);
        }
        self
    }
}

/// The completely private point: no direct keys, uniform over cyclic codes.
pub fn uniform_tsc(params: &SystemParams) -> ReducedAllocation {
    let mass = (params.n() as f64).powi(-(params.k() as i32));
    ReducedAllocation {
        p_sharp: 0.0,
        p: vec![mass; params.k()],
    }
}

/// Uniform over every coded key `(f, π)`, all `N!` permutations included.
pub fn uniform_coded(params: &SystemParams) -> Result<Allocation> {
    let keys: Vec<RandomKey> = enumerate_key_space(params)?
        .into_iter()
        .filter(|key| matches!(key, RandomKey::Coded { .. }))
        .collect();
    let mass = 1.0 / keys.len() as f64;
    Allocation::message_independent(
        params.clone(),
        keys.into_iter().map(|key| (key, mass)).collect(),
    )
}

/// Full form of a reduced allocation.
pub fn expand_reduced(r: &ReducedAllocation, params: &SystemParams) -> Result<Allocation> {
    r.validate(params)?;
    let r = r.clone().clamped();
    let n = params.n();
    let cyclic = cyclic_permutations(n);
    let mut dist = BTreeMap::new();
    if r.p_sharp > 0.0 {
        for server in 1..=n {
            dist.insert(RandomKey::direct(server), r.p_sharp);
        }
    }
    for f in key_vectors(n, params.k() - 1) {
        let mass = r.p[hamming_weight(&f)];
        if mass > 0.0 {
            for pi in &cyclic {
                dist.insert(RandomKey::coded(f.clone(), pi.clone()), mass);
            }
        }
    }
    Allocation::message_independent(params.clone(), dist)
}

/// Probability of a retrieval that downloads exactly `L` symbols for message `k`.
pub fn direct_prob(a: &Allocation, k: usize) -> f64 {
    a.for_message(k)
        .iter()
        .filter(|(key, _)| key.is_direct_pattern())
        .map(|(_, p)| p)
        .sum()
}

/// Worst-case expected download, normalized by `L`.
pub fn download_cost(a: &Allocation) -> f64 {
    let n = a.params().n() as f64;
    (1..=a.params().k())
        .map(|k| {
            let pd = direct_prob(a, k);
            pd + n / (n - 1.0) * (1.0 - pd)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn reduced_download_cost(r: &ReducedAllocation, params: &SystemParams) -> f64 {
    let n = params.n() as f64;
    (n - n * r.p_sharp - n * r.p[0]) / (n - 1.0)
}

/// Rescales the coded part so that `p_0 + p_sharp` meets the download
/// constraint at `d` with equality. The MI objective does not increase as
/// long as it starts at or below `log2(K)/N`.
pub fn tighten_mi(
    r: &ReducedAllocation,
    d: f64,
    params: &SystemParams,
) -> Result<ReducedAllocation> {
    r.validate(params)?;
    params.check_cost(d)?;
    let n = params.n() as f64;
    let p_hat = params.direct_floor(d);
    let p_star = r.p[0] + r.p_sharp;
    if p_star < p_hat - NORM_TOL {
        return Err(Error::Infeasible(format!(
            "p_0 + p_sharp = {p_star} is below the floor {p_hat} for D = {d}"
        )));
    }
    if (p_star - p_hat).abs() <= CLAMP_TOL {
        return Ok(r.clone());
    }
    let slack = 1.0 - n * p_star;
    if slack.abs() < CLAMP_TOL {
        return Err(Error::Degenerate(
            "no coded mass beyond weight 0 to rescale (1 - N(p_0 + p_sharp) = 0)".into(),
        ));
    }
    let alpha = (1.0 - n * p_hat) / slack;
    let p: Vec<f64> = r.p.iter().map(|x| alpha * x).collect();
    let p_sharp = p_hat - p[0];
    if p_sharp < -CLAMP_TOL {
        return Err(Error::Infeasible(format!(
            "rescaled p_0 = {} exceeds the floor {p_hat}; p_sharp would be negative",
            p[0]
        )));
    }
    Ok(ReducedAllocation {
        p_sharp: p_sharp.max(0.0),
        p,
    })
}
