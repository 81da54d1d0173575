//! Monte Carlo runs of the protocol against in-process servers.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::allocation::Allocation;
use crate::error::{Error, Result};
use crate::leakage::{Metric, QueryDistribution};
use crate::scheme::{answer, decode, encode_queries, MessageStore, Query, RandomKey};

/// RNG words consumed by one trial (a single `u64` draw).
const WORDS_PER_TRIAL: u128 = 2;

/// Inverse-CDF sampler over one message's key distribution, in canonical
/// key order.
#[derive(Clone, Debug)]
pub struct KeySampler {
    keys: Vec<RandomKey>,
    cumulative: Vec<f64>,
}

impl KeySampler {
    pub fn new(a: &Allocation, k: usize) -> Result<Self> {
        if !(1..=a.params().k()).contains(&k) {
            return Err(Error::IndexOutOfRange {
                index: k,
                max: a.params().k(),
            });
        }
        let mut keys = Vec::new();
        let mut cumulative = Vec::new();
        let mut acc = 0.0;
        for (key, &p) in a.for_message(k) {
            acc += p;
            keys.push(key.clone());
            cumulative.push(acc);
        }
        Ok(Self { keys, cumulative })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &RandomKey {
        let total = *self.cumulative.last().expect("allocations are normalized");
        let u = rng.random::<f64>() * total;
        let i = self.cumulative.partition_point(|&c| c <= u);
        &self.keys[i.min(self.keys.len() - 1)]
    }
}

pub fn sample_key<R: Rng + ?Sized>(a: &Allocation, k: usize, rng: &mut R) -> Result<RandomKey> {
    Ok(KeySampler::new(a, k)?.sample(rng).clone())
}

/// Query counts seen by one server while message `k` was requested.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct QueryCounts {
    pub server: usize,
    pub k: usize,
    pub counts: BTreeMap<String, u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MessageStats {
    pub k: usize,
    pub trials: u64,
    pub empirical_d: f64,
    pub std_err: f64,
}

/// Aggregated outcome of a batch of trials.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimReport {
    pub n: usize,
    pub k: usize,
    /// Trials per simulated message.
    pub trials: u64,
    /// Worst case over the simulated messages.
    pub empirical_d: f64,
    pub std_err: f64,
    pub per_message: Vec<MessageStats>,
    pub query_counts: Vec<QueryCounts>,
    pub decode_failures: u64,
    #[serde(skip)]
    raw: Vec<Vec<BTreeMap<Query, u64>>>,
}

impl SimReport {
    /// Messages that were simulated.
    pub fn messages(&self) -> Vec<usize> {
        self.per_message.iter().map(|m| m.k).collect()
    }

    /// Count of `q` at `server` while message `k` was requested.
    pub fn count(&self, server: usize, k: usize, q: &Query) -> u64 {
        self.message_slot(k)
            .and_then(|i| self.raw[server - 1][i].get(q).copied())
            .unwrap_or(0)
    }

    /// Empirical `P̂(q | k)` at `server`; needs every message simulated.
    pub fn empirical_distribution(&self, server: usize) -> Result<QueryDistribution> {
        if self.messages() != (1..=self.k).collect::<Vec<_>>() {
            return Err(Error::InvalidParams(
                "empirical leakage needs trials for every message".into(),
            ));
        }
        let per_message = self.raw[server - 1]
            .iter()
            .map(|m| {
                m.iter()
                    .map(|(q, &c)| (q.clone(), c as f64 / self.trials as f64))
                    .collect()
            })
            .collect();
        Ok(QueryDistribution {
            server,
            per_message,
        })
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serializes")
    }

    fn message_slot(&self, k: usize) -> Option<usize> {
        self.per_message.iter().position(|m| m.k == k)
    }
}

#[derive(Default)]
struct Tally {
    symbols: u64,
    symbols_sq: u64,
    counts: Vec<BTreeMap<Query, u64>>,
}

impl Tally {
    fn merge(&mut self, other: Tally) {
        self.symbols += other.symbols;
        self.symbols_sq += other.symbols_sq;
        for (mine, theirs) in self.counts.iter_mut().zip(other.counts) {
            for (q, c) in theirs {
                *mine.entry(q).or_insert(0) += c;
            }
        }
    }
}

fn rng_at(seed: u64, k: usize, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    rng.set_word_pos(trial as u128 * WORDS_PER_TRIAL);
    rng
}

fn run_range(
    a: &Allocation,
    store: &MessageStore,
    k: usize,
    sampler: &KeySampler,
    seed: u64,
    range: std::ops::Range<u64>,
) -> Result<Tally> {
    let params = a.params();
    let mut rng = rng_at(seed, k, range.start);
    let mut tally = Tally {
        counts: vec![BTreeMap::new(); params.n()],
        ..Default::default()
    };
    let expected = store.message(k);
    for _ in range {
        let key = sampler.sample(&mut rng);
        let queries = encode_queries(k, key, params)?;
        let answers: Vec<_> = queries.iter().map(|q| answer(q, store)).collect();
        let symbols: u64 = answers.iter().map(|x| x.symbols.len() as u64).sum();
        if decode(&answers, k, key, params)? != expected {
            return Err(Error::DecodeMismatch { k });
        }
        tally.symbols += symbols;
        tally.symbols_sq += symbols * symbols;
        for (slot, q) in tally.counts.iter_mut().zip(queries) {
            *slot.entry(q).or_insert(0) += 1;
        }
    }
    Ok(tally)
}

fn run_message(
    a: &Allocation,
    store: &MessageStore,
    k: usize,
    trials: u64,
    seed: u64,
) -> Result<Tally> {
    let sampler = KeySampler::new(a, k)?;
    let threads = std::thread::available_parallelism().map_or(1, |t| t.get()) as u64;
    let chunks = threads.min(trials.div_ceil(10_000)).max(1);
    let bounds: Vec<u64> = (0..=chunks).map(|i| trials * i / chunks).collect();
    let parts: Vec<Result<Tally>> = std::thread::scope(|s| {
        let handles: Vec<_> = bounds
            .windows(2)
            .map(|w| {
                let sampler = &sampler;
                let range = w[0]..w[1];
                s.spawn(move || run_range(a, store, k, sampler, seed, range))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("trial worker panicked"))
            .collect()
    });
    let mut total = Tally {
        counts: vec![BTreeMap::new(); a.params().n()],
        ..Default::default()
    };
    for part in parts {
        total.merge(part?);
    }
    Ok(total)
}

fn check_inputs(a: &Allocation, store: &MessageStore, trials: u64) -> Result<()> {
    a.validate()?;
    if !store.matches(a.params()) {
        return Err(Error::InvalidParams(format!(
            "store holds {} messages of {} symbols, allocation expects K = {}, L = {}",
            store.k(),
            store.l(),
            a.params().k(),
            a.params().l()
        )));
    }
    if trials == 0 {
        return Err(Error::InvalidParams("trials must be positive".into()));
    }
    Ok(())
}

/// `trials` retrievals of message `k`. Trial `t` draws from the ChaCha8
/// stream `k` of `seed` at word `2t`, so results do not depend on how trials
/// are split across threads.
pub fn run_trials(
    a: &Allocation,
    store: &MessageStore,
    k: usize,
    trials: u64,
    seed: u64,
) -> Result<SimReport> {
    run_messages(a, store, &[k], trials, seed)
}

/// `trials` retrievals of every message.
pub fn run_all(a: &Allocation, store: &MessageStore, trials: u64, seed: u64) -> Result<SimReport> {
    let ks: Vec<usize> = (1..=a.params().k()).collect();
    run_messages(a, store, &ks, trials, seed)
}

fn run_messages(
    a: &Allocation,
    store: &MessageStore,
    ks: &[usize],
    trials: u64,
    seed: u64,
) -> Result<SimReport> {
    check_inputs(a, store, trials)?;
    let params = a.params();
    let (n, l) = (params.n(), params.l() as f64);
    let mut per_message = Vec::new();
    let mut raw: Vec<Vec<BTreeMap<Query, u64>>> = vec![Vec::new(); n];
    for &k in ks {
        let tally = run_message(a, store, k, trials, seed)?;
        let t = trials as f64;
        let mean = tally.symbols as f64 / t;
        let var = (tally.symbols_sq as f64 / t - mean * mean).max(0.0) * t / (t - 1.0).max(1.0);
        per_message.push(MessageStats {
            k,
            trials,
            empirical_d: mean / l,
            std_err: (var / t).sqrt() / l,
        });
        for (slot, counts) in raw.iter_mut().zip(tally.counts) {
            slot.push(counts);
        }
    }
    let worst = per_message
        .iter()
        .max_by(|a, b| a.empirical_d.total_cmp(&b.empirical_d))
        .map(|m| (m.empirical_d, m.std_err))
        .expect("at least one message");
    let query_counts = raw
        .iter()
        .enumerate()
        .flat_map(|(s, per_k)| {
            per_k.iter().zip(ks).map(move |(m, &k)| QueryCounts {
                server: s + 1,
                k,
                counts: m.iter().map(|(q, &c)| (q.to_string(), c)).collect(),
            })
        })
        .collect();
    Ok(SimReport {
        n,
        k: params.k(),
        trials,
        empirical_d: worst.0,
        std_err: worst.1,
        per_message,
        query_counts,
        decode_failures: 0,
        raw,
    })
}

/// Plug-in estimate of `ρ` from empirical query frequencies.
pub fn empirical_leakage(report: &SimReport, metric: Metric, gamma: &[f64]) -> Result<f64> {
    if gamma.len() != report.n {
        return Err(Error::InvalidParams(format!(
            "{} weights for {} servers",
            gamma.len(),
            report.n
        )));
    }
    let mut rho = 0.0;
    for (i, g) in gamma.iter().enumerate() {
        let dist = report.empirical_distribution(i + 1)?;
        rho += g * match metric {
            Metric::MaxL => dist.max_sum(),
            Metric::MI => dist.mutual_information(),
        };
    }
    Ok(rho)
}
