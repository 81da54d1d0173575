//! System parameters and the small combinatorial vocabulary shared by the
//! rest of the crate: byte symbols, server permutations and Hamming-weight
//! counts.

use std::fmt;
use std::ops::{BitXor, BitXorAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest `N^K` accepted by operations that enumerate the query space.
pub const ENUMERATION_CAP: u64 = 1_000_000;

/// Server count, message count and per-server trust weights.
///
/// Weights are kept unnormalized and sorted ascending, so server 1 is always
/// the most trusted one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    n: usize,
    k: usize,
    gamma: Vec<f64>,
}

impl SystemParams {
    pub fn new(n: usize, k: usize, mut gamma: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParams(format!("need N >= 2, got {n}")));
        }
        if k < 2 {
            return Err(Error::InvalidParams(format!("need K >= 2, got {k}")));
        }
        if n > 255 || k > u16::MAX as usize {
            return Err(Error::InvalidParams(format!(
                "N={n}, K={k} exceed symbol/wire ranges"
            )));
        }
        if gamma.len() != n {
            return Err(Error::InvalidParams(format!(
                "expected {n} trust weights, got {}",
                gamma.len()
            )));
        }
        if let Some(bad) = gamma.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
            return Err(Error::InvalidParams(format!(
                "trust weight {bad} is not positive"
            )));
        }
        gamma.sort_by(f64::total_cmp);
        Ok(Self { n, k, gamma })
    }

    /// Equal weights `1/N` for every server.
    pub fn homogeneous(n: usize, k: usize) -> Result<Self> {
        Self::new(n, k, vec![1.0 / n as f64; n])
    }

    /// Same `(N, K)` with a different weight vector.
    pub fn with_gamma(&self, gamma: Vec<f64>) -> Result<Self> {
        Self::new(self.n, self.k, gamma)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Message length in symbols, always `N - 1`.
    pub fn l(&self) -> usize {
        self.n - 1
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn gamma_sum(&self) -> f64 {
        self.gamma.iter().sum()
    }

    pub fn is_homogeneous(&self) -> bool {
        let first = self.gamma[0];
        self.gamma
            .iter()
            .all(|g| (g - first).abs() <= 1e-12 * first.abs().max(1.0))
    }

    /// Download cost of the capacity-achieving code, `(1 - N^-K) / (1 - N^-1)`.
    pub fn capacity_cost(&self) -> f64 {
        let n = self.n as f64;
        (1.0 - n.powi(-(self.k as i32))) / (1.0 - 1.0 / n)
    }

    /// Number of distinct vector queries, `N^K`, checked against
    /// [`ENUMERATION_CAP`].
    pub fn query_space_size(&self) -> Result<u64> {
        let size = checked_pow(self.n as u64, self.k as u32)?;
        if size > ENUMERATION_CAP {
            return Err(Error::TooLarge {
                what: "query space N^K",
                size,
                cap: ENUMERATION_CAP,
            });
        }
        Ok(size)
    }

    /// Checks that `d` lies in `[1, D*]` (with a little slack for rounding).
    pub fn check_cost(&self, d: f64) -> Result<()> {
        let max = self.capacity_cost();
        if !(d.is_finite() && d >= 1.0 - 1e-12 && d <= max + 1e-12) {
            return Err(Error::OutOfRange { d, max });
        }
        Ok(())
    }

    /// `1 - D + D/N`: the least direct-download probability compatible with
    /// download cost `d`.
    pub fn direct_floor(&self, d: f64) -> f64 {
        1.0 - d + d / self.n as f64
    }
}

fn checked_pow(base: u64, exp: u32) -> Result<u64> {
    base.checked_pow(exp)
        .ok_or_else(|| Error::Overflow(format!("{base}^{exp}")))
}

/// One element of GF(2^8); addition is bitwise exclusive-or.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub struct Symbol(pub u8);

impl Symbol {
    pub const ZERO: Symbol = Symbol(0);
}

impl BitXor for Symbol {
    type Output = Symbol;

    fn bitxor(self, rhs: Symbol) -> Symbol {
        Symbol(self.0 ^ rhs.0)
    }
}

impl BitXorAssign for Symbol {
    fn bitxor_assign(&mut self, rhs: Symbol) {
        self.0 ^= rhs.0;
    }
}

impl std::iter::Sum for Symbol {
    fn sum<I: Iterator<Item = Symbol>>(iter: I) -> Symbol {
        iter.fold(Symbol::ZERO, |a, b| a ^ b)
    }
}

/// A bijection from servers `[1:N]` onto `[0:N-1]`, stored as its image
/// `image[n - 1] = π(n)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation {
    image: Vec<usize>,
}

impl Permutation {
    pub fn new(image: Vec<usize>) -> Result<Self> {
        let n = image.len();
        let mut seen = vec![false; n];
        for &v in &image {
            if v >= n || std::mem::replace(&mut seen[v], true) {
                return Err(Error::NotBijective { n, image });
            }
        }
        Ok(Self { image })
    }

    /// The shift `n ↦ (n - 1 + offset) mod N`.
    pub fn shift(n: usize, offset: usize) -> Self {
        Self {
            image: (0..n).map(|i| (i + offset) % n).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.image.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image.is_empty()
    }

    /// `π(server)` for a 1-based server index.
    pub fn apply(&self, server: usize) -> usize {
        self.image[server - 1]
    }

    pub fn image(&self) -> &[usize] {
        &self.image
    }

    /// True when `π(n+1) = π(n) + 1 (mod N)` for every `n`, wrapping `N+1` to 1.
    pub fn is_cyclic(&self) -> bool {
        let n = self.image.len();
        (0..n).all(|i| self.image[(i + 1) % n] == (self.image[i] + 1) % n)
    }
}

impl TryFrom<Vec<usize>> for Permutation {
    type Error = Error;

    fn try_from(image: Vec<usize>) -> Result<Self> {
        Permutation::new(image)
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(p: Permutation) -> Vec<usize> {
        p.image
    }
}

impl fmt::Display for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.image.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

pub fn make_permutation(image: Vec<usize>) -> Result<Permutation> {
    Permutation::new(image)
}

/// The `N` cyclic permutations, ordered by `π(1)`.
pub fn cyclic_permutations(n: usize) -> Vec<Permutation> {
    (0..n).map(|offset| Permutation::shift(n, offset)).collect()
}

/// Every bijection `[1:N] → [0:N-1]` in lexicographic order of the image.
pub fn all_permutations(n: usize) -> Vec<Permutation> {
    use itertools::Itertools;
    (0..n)
        .permutations(n)
        .map(|image| Permutation { image })
        .collect()
}

/// Number of nonzero entries.
pub fn hamming_weight(v: &[usize]) -> usize {
    v.iter().filter(|&&x| x != 0).count()
}

/// Hamming-weight counts: `t[j]` vector queries of length `K` and `s[j]` key
/// vectors of length `K-1` with weight `j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WeightProfile {
    pub t: Vec<u64>,
    pub s: Vec<u64>,
}

impl WeightProfile {
    pub fn t_f64(&self, j: usize) -> f64 {
        self.t[j] as f64
    }

    pub fn s_f64(&self, j: usize) -> f64 {
        self.s[j] as f64
    }
}

pub fn binomial(n: u64, r: u64) -> Result<u64> {
    if r > n {
        return Ok(0);
    }
    let r = r.min(n - r);
    let mut acc: u64 = 1;
    for i in 0..r {
        // exact at every step: acc * (n - i) is divisible by (i + 1)
        acc = acc
            .checked_mul(n - i)
            .ok_or_else(|| Error::Overflow(format!("C({n},{r})")))?
            / (i + 1);
    }
    Ok(acc)
}

pub fn weight_profile(n: usize, k: usize) -> Result<WeightProfile> {
    if n < 2 || k < 2 {
        return Err(Error::InvalidParams(format!(
            "need N, K >= 2, got N={n}, K={k}"
        )));
    }
    // bounds every term below
    checked_pow(n as u64, k as u32)?;
    let base = (n - 1) as u64;
    let t = (0..=k)
        .map(|j| Ok(binomial(k as u64, j as u64)? * base.pow(j as u32)))
        .collect::<Result<Vec<_>>>()?;
    let s = (0..k)
        .map(|j| Ok(binomial((k - 1) as u64, j as u64)? * base.pow(j as u32)))
        .collect::<Result<Vec<_>>>()?;
    Ok(WeightProfile { t, s })
}
