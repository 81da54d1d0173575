use rand::Rng;

use crate::allocation::ReducedAllocation;
use crate::params::{weight_profile, SystemParams};

/// Random valid reduced point from an exponential split of the unit mass.
pub fn random_reduced(params: &SystemParams, rng: &mut impl Rng) -> ReducedAllocation {
    let n = params.n() as f64;
    let s = weight_profile(params.n(), params.k()).unwrap();
    let mut w: Vec<f64> = (0..=params.k())
        .map(|_| -rng.random::<f64>().ln())
        .collect();
    if rng.random_bool(0.2) {
        w[0] = 0.0;
    }
    let total: f64 = w.iter().sum();
    ReducedAllocation {
        p_sharp: w[0] / total / n,
        p: (0..params.k())
            .map(|j| w[j + 1] / total / (n * s.s_f64(j)))
            .collect(),
    }
}

/// Random dense full allocation with independent per-message distributions.
pub fn random_full(params: &SystemParams, rng: &mut impl Rng) -> crate::allocation::Allocation {
    let keys = crate::scheme::enumerate_key_space(params).unwrap();
    let probs = (0..params.k())
        .map(|_| {
            let w: Vec<f64> = keys.iter().map(|_| -rng.random::<f64>().ln()).collect();
            let total: f64 = w.iter().sum();
            keys.iter()
                .cloned()
                .zip(w.iter().map(|x| x / total))
                .collect()
        })
        .collect();
    crate::allocation::Allocation::new(params.clone(), probs).unwrap()
}
