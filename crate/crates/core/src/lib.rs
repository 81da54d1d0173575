//! Weakly-private information retrieval with escape (direct-download)
//! patterns over `N` servers holding `K` replicated messages.

pub mod allocation;
pub mod error;
pub mod leakage;
pub mod net;
pub mod optimizer;
pub mod params;
pub mod scheme;
pub mod sim;
pub mod table;

#[cfg(test)]
mod testutil;

pub use allocation::{
    direct_prob, download_cost, expand_reduced, reduced_download_cost, tighten_mi, uniform_coded,
    uniform_tsc, Allocation, ReducedAllocation,
};
pub use error::{Error, Result};
pub use leakage::{
    max_leakage, mi_leakage, query_distribution, reduced_mi_objective, reduced_rho_maxl, rho_maxl,
    rho_mi, Method, Metric, QueryDistribution, TradeoffPoint,
};
pub use params::{
    cyclic_permutations, hamming_weight, make_permutation, weight_profile, Permutation, Symbol,
    SystemParams, WeightProfile,
};
pub use scheme::{
    answer, decode, encode_queries, enumerate_key_space, interference, Answer, MessageStore, Query,
    RandomKey,
};
pub use sim::{empirical_leakage, run_all, run_trials, sample_key, KeySampler, SimReport};
