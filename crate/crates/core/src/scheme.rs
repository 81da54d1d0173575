//! The retrieval code: random keys, query encoding, server answers and
//! decoding, plus the on-disk message-store format.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{all_permutations, Permutation, Symbol, SystemParams};

/// Cap on `N^(K-1) * N!` for full key-space enumeration.
pub const KEY_SPACE_CAP: u64 = 100_000;

const STORE_MAGIC: &[u8; 4] = b"WPIR";
const STORE_VERSION: u8 = 1;

/// `K` messages of `L = N - 1` symbols each. Symbol index 0 is the implicit
/// zero dummy and is never stored.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MessageStore {
    k: usize,
    l: usize,
    data: Vec<Symbol>,
}

impl MessageStore {
    /// Builds a store from `K` rows of `L` symbols each.
    pub fn new(rows: Vec<Vec<Symbol>>) -> Result<Self> {
        let k = rows.len();
        let l = rows.first().map_or(0, Vec::len);
        if k < 2 || l < 1 {
            return Err(Error::StoreFormat(format!(
                "need K >= 2 rows of L >= 1 symbols, got {k}x{l}"
            )));
        }
        if rows.iter().any(|r| r.len() != l) {
            return Err(Error::StoreFormat("rows have differing lengths".into()));
        }
        Ok(Self {
            k,
            l,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn random<R: Rng + ?Sized>(params: &SystemParams, rng: &mut R) -> Self {
        let (k, l) = (params.k(), params.l());
        Self {
            k,
            l,
            data: (0..k * l).map(|_| Symbol(rng.random())).collect(),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn l(&self) -> usize {
        self.l
    }

    /// Server count implied by the message length.
    pub fn n(&self) -> usize {
        self.l + 1
    }

    /// `W_m[i]` for 1-based `m`; `i = 0` is the dummy zero symbol.
    pub fn symbol(&self, m: usize, i: usize) -> Symbol {
        if i == 0 {
            Symbol::ZERO
        } else {
            self.data[(m - 1) * self.l + (i - 1)]
        }
    }

    /// Row `W_m` (1-based).
    pub fn message(&self, m: usize) -> &[Symbol] {
        &self.data[(m - 1) * self.l..m * self.l]
    }

    pub fn matches(&self, params: &SystemParams) -> bool {
        self.k == params.k() && self.l == params.l()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(9 + self.data.len());
        out.extend_from_slice(STORE_MAGIC);
        out.push(STORE_VERSION);
        out.extend_from_slice(&(self.k as u16).to_be_bytes());
        out.extend_from_slice(&(self.l as u16).to_be_bytes());
        out.extend(self.data.iter().map(|s| s.0));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 9 {
            return Err(Error::StoreFormat(format!(
                "header truncated ({} bytes)",
                bytes.len()
            )));
        }
        if &bytes[..4] != STORE_MAGIC {
            return Err(Error::StoreFormat("bad magic".into()));
        }
        if bytes[4] != STORE_VERSION {
            return Err(Error::StoreFormat(format!(
                "unsupported version {}",
                bytes[4]
            )));
        }
        let k = u16::from_be_bytes([bytes[5], bytes[6]]) as usize;
        let l = u16::from_be_bytes([bytes[7], bytes[8]]) as usize;
        let body = &bytes[9..];
        if body.len() != k * l {
            return Err(Error::StoreFormat(format!(
                "expected {} symbol bytes for K={k}, L={l}, found {}",
                k * l,
                body.len()
            )));
        }
        if k < 2 || !(1..=254).contains(&l) {
            return Err(Error::StoreFormat(format!(
                "unsupported shape K={k}, L={l}"
            )));
        }
        Ok(Self {
            k,
            l,
            data: body.iter().map(|&b| Symbol(b)).collect(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }
}

/// The user's private randomness: either a direct download from one server
/// or a coded retrieval keyed by `(f, π)`.
///
/// The derived order (direct keys by server, then coded keys by `(f, π)`) is
/// the canonical key-space order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RandomKey {
    Direct { direct: usize },
    Coded { f: Vec<usize>, pi: Permutation },
}

impl RandomKey {
    pub fn direct(server: usize) -> Self {
        RandomKey::Direct { direct: server }
    }

    pub fn coded(f: Vec<usize>, pi: Permutation) -> Self {
        RandomKey::Coded { f, pi }
    }

    /// True for keys whose retrieval downloads exactly `L` symbols: direct
    /// keys and coded keys with `f = 0`.
    pub fn is_direct_pattern(&self) -> bool {
        match self {
            RandomKey::Direct { .. } => true,
            RandomKey::Coded { f, .. } => f.iter().all(|&x| x == 0),
        }
    }

    pub fn validate(&self, params: &SystemParams) -> Result<()> {
        let n = params.n();
        match self {
            RandomKey::Direct { direct } => {
                if !(1..=n).contains(direct) {
                    return Err(Error::IndexOutOfRange {
                        index: *direct,
                        max: n,
                    });
                }
            }
            RandomKey::Coded { f, pi } => {
                if f.len() != params.k() - 1 || f.iter().any(|&x| x >= n) {
                    return Err(Error::InvalidParams(format!(
                        "key vector {f:?} not in [0:{}]^{}",
                        n - 1,
                        params.k() - 1
                    )));
                }
                if pi.len() != n {
                    return Err(Error::InvalidParams(format!(
                        "permutation {pi} has length != {n}"
                    )));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for RandomKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RandomKey::Direct { direct } => write!(f, "#@{direct}"),
            RandomKey::Coded { f: v, pi } => {
                for x in v {
                    write!(f, "{x}")?;
                }
                write!(f, "/{pi}")
            }
        }
    }
}

/// What one server is asked: an escape request for a whole message or a
/// length-`K` index vector.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Query {
    Escape(usize),
    Vector(Vec<usize>),
}

impl Query {
    /// Number of symbols in the answer to this query.
    pub fn answer_length(&self, l: usize) -> usize {
        match self {
            Query::Escape(_) => l,
            Query::Vector(q) if q.iter().all(|&x| x == 0) => 0,
            Query::Vector(_) => 1,
        }
    }

    /// Dense index: vectors by their base-`N` value (first entry most
    /// significant), escapes after all `N^K` vectors.
    pub fn index(&self, n: usize, k: usize) -> usize {
        match self {
            Query::Vector(q) => q.iter().fold(0, |acc, &x| acc * n + x),
            Query::Escape(m) => n.pow(k as u32) + (m - 1),
        }
    }

    /// Inverse of [`Query::index`].
    pub fn from_index(index: usize, n: usize, k: usize) -> Query {
        let vectors = n.pow(k as u32);
        if index >= vectors {
            return Query::Escape(index - vectors + 1);
        }
        let mut q = vec![0; k];
        let mut rest = index;
        for slot in q.iter_mut().rev() {
            *slot = rest % n;
            rest /= n;
        }
        Query::Vector(q)
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Query::Escape(m) => write!(f, "#{m}"),
            Query::Vector(q) => q.iter().try_for_each(|x| write!(f, "{x}")),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Answer {
    pub symbols: Vec<Symbol>,
}

fn check_message(k: usize, params: &SystemParams) -> Result<()> {
    if !(1..=params.k()).contains(&k) {
        return Err(Error::IndexOutOfRange {
            index: k,
            max: params.k(),
        });
    }
    Ok(())
}

/// `(π(n) - Σ f) mod N`: the position of the desired message read by server `n`.
fn desired_index(f: &[usize], pi: &Permutation, server: usize, n: usize) -> usize {
    let sum: usize = f.iter().sum::<usize>() % n;
    (pi.apply(server) + n - sum) % n
}

/// The `N` queries for retrieving message `k` (1-based) under `key`.
pub fn encode_queries(k: usize, key: &RandomKey, params: &SystemParams) -> Result<Vec<Query>> {
    check_message(k, params)?;
    key.validate(params)?;
    let n = params.n();
    let queries = match key {
        RandomKey::Direct { direct } => (1..=n)
            .map(|server| {
                if server == *direct {
                    Query::Escape(k)
                } else {
                    Query::Vector(vec![0; params.k()])
                }
            })
            .collect(),
        RandomKey::Coded { f, pi } => (1..=n)
            .map(|server| {
                let mut q = Vec::with_capacity(params.k());
                q.extend_from_slice(&f[..k - 1]);
                q.push(desired_index(f, pi, server, n));
                q.extend_from_slice(&f[k - 1..]);
                Query::Vector(q)
            })
            .collect(),
    };
    Ok(queries)
}

/// XOR of one symbol from every non-requested message, as selected by `f`.
pub fn interference(f: &[usize], k: usize, store: &MessageStore) -> Symbol {
    (1..=store.k())
        .filter(|&m| m != k)
        .zip(f)
        .map(|(m, &i)| store.symbol(m, i))
        .sum()
}

/// The server's response to `query`.
pub fn answer(query: &Query, store: &MessageStore) -> Answer {
    let symbols = match query {
        Query::Escape(m) => store.message(*m).to_vec(),
        Query::Vector(q) if q.iter().all(|&x| x == 0) => Vec::new(),
        Query::Vector(q) => vec![q
            .iter()
            .enumerate()
            .map(|(m, &i)| store.symbol(m + 1, i))
            .sum()],
    };
    Answer { symbols }
}

/// Reconstructs `W_k` from the `N` answers produced for `key`.
pub fn decode(
    answers: &[Answer],
    k: usize,
    key: &RandomKey,
    params: &SystemParams,
) -> Result<Vec<Symbol>> {
    let queries = encode_queries(k, key, params)?;
    let (n, l) = (params.n(), params.l());
    if answers.len() != n {
        return Err(Error::MalformedAnswers(format!(
            "expected {n} answers, got {}",
            answers.len()
        )));
    }
    for (server, (q, a)) in queries.iter().zip(answers).enumerate() {
        let expected = q.answer_length(l);
        if a.symbols.len() != expected {
            return Err(Error::MalformedAnswers(format!(
                "server {} returned {} symbols, expected {expected}",
                server + 1,
                a.symbols.len()
            )));
        }
    }
    match key {
        RandomKey::Direct { direct } => Ok(answers[direct - 1].symbols.clone()),
        RandomKey::Coded { f, pi } => {
            let positions: Vec<usize> = (1..=n).map(|s| desired_index(f, pi, s, n)).collect();
            let anchor = positions
                .iter()
                .position(|&i| i == 0)
                .expect("π is a bijection");
            let noise = answers[anchor]
                .symbols
                .first()
                .copied()
                .unwrap_or(Symbol::ZERO);
            let mut message = vec![Symbol::ZERO; l];
            for (server, &i) in positions.iter().enumerate() {
                if i != 0 {
                    message[i - 1] = answers[server].symbols[0] ^ noise;
                }
            }
            Ok(message)
        }
    }
}

/// Size of the key space, `N + N^(K-1) N!`, or `None` on overflow.
pub fn key_space_size(params: &SystemParams) -> Option<u64> {
    let n = params.n() as u64;
    let fact = (1..=n).try_fold(1u64, |acc, x| acc.checked_mul(x))?;
    n.checked_pow(params.k() as u32 - 1)?
        .checked_mul(fact)?
        .checked_add(n)
}

/// Every key in canonical order: direct keys by server, then coded keys
/// sorted by `(f, π)` lexicographically.
pub fn enumerate_key_space(params: &SystemParams) -> Result<Vec<RandomKey>> {
    let size = key_space_size(params).unwrap_or(u64::MAX);
    let coded = size.saturating_sub(params.n() as u64);
    if coded > KEY_SPACE_CAP {
        return Err(Error::TooLarge {
            what: "coded key space N^(K-1) N!",
            size: coded,
            cap: KEY_SPACE_CAP,
        });
    }
    let n = params.n();
    let perms = all_permutations(n);
    let mut keys: Vec<RandomKey> = (1..=n).map(RandomKey::direct).collect();
    for f in key_vectors(n, params.k() - 1) {
        for pi in &perms {
            keys.push(RandomKey::coded(f.clone(), pi.clone()));
        }
    }
    Ok(keys)
}

/// All vectors in `[0:N-1]^len`, lexicographic.
pub fn key_vectors(n: usize, len: usize) -> impl Iterator<Item = Vec<usize>> {
    let total = n.pow(len as u32);
    (0..total).map(move |mut idx| {
        let mut v = vec![0; len];
        for slot in v.iter_mut().rev() {
            *slot = idx % n;
            idx /= n;
        }
        v
    })
}
