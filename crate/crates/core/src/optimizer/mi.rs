//! Mutual-information optima: the x-sequence, the homogeneous closed form,
//! and numerical oracles over the reduced and the full key spaces.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::allocation::{Allocation, ReducedAllocation};
use crate::error::{Error, Result};
use crate::leakage::{reduced_mi_gradient, reduced_mi_objective, rho_mi};
use crate::params::{hamming_weight, weight_profile, Permutation, SystemParams, WeightProfile};
use crate::scheme::{key_vectors, RandomKey};

use super::maxl::FullSpace;
use super::projection::{project_simplex, project_simplex_scaled};

/// Upper end of the shooting interval for `x_{K-1}`.
const SHOOT_MAX: f64 = 1e6;
const LOG_FLOOR: f64 = 1e-300;
/// Smallest coordinate scale, relative to the coordinate's range.
const SCALE_FLOOR: f64 = 1e-12;

/// Successive ratios `x_j = p_{j-1}/p_j` of an optimal reduced allocation
/// and `y_j = ln((j x_j + K - j)/K)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct XSequence {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl XSequence {
    /// Runs the stationarity recursion down from `x_{K-1}`. `None` when some
    /// `x_j` comes out non-positive.
    fn from_last(n: usize, k: usize, x_last: f64) -> Option<Self> {
        let m = k - 1;
        let y_of = |j: usize, x: f64| ((j as f64 * x + (k - j) as f64) / k as f64).ln();
        let mut x = vec![0.0; m];
        let mut y = vec![0.0; m];
        x[m - 1] = x_last;
        y[m - 1] = y_of(m, x_last);
        let top = y[m - 1];
        for j in (1..m).rev() {
            y[j - 1] = top + (n as f64 - 1.0) * (x[j].ln() - y[j]);
            let xj = (k as f64 * y[j - 1].exp() - (k - j) as f64) / j as f64;
            if !(xj > 0.0 && xj.is_finite()) {
                return None;
            }
            x[j - 1] = xj;
        }
        Some(Self { x, y })
    }

    /// Residuals of the closed-sum form of the recursion, one per `j ∈ [1:K-1]`.
    pub fn recursion_residuals(&self, n: usize) -> Vec<f64> {
        let k = self.x.len() + 1;
        let a = 1.0 - n as f64;
        let top = self.y[k - 2];
        (1..k)
            .map(|j| {
                let lhs = (((k - j) as f64 * self.x[k - j - 1] + j as f64) / k as f64).ln();
                let mut rhs = 0.0;
                for i in 0..j {
                    rhs += a.powi(i as i32) * top;
                }
                for i in 1..j {
                    rhs -= a.powi(i as i32) * self.x[k - j + i - 1].ln();
                }
                lhs - rhs
            })
            .collect()
    }

    /// `Π_{i<=j} 1/x_i` for `j = 0..K-1`.
    pub fn decay(&self) -> Vec<f64> {
        let mut out = vec![1.0];
        for x in &self.x {
            out.push(out.last().unwrap() / x);
        }
        out
    }
}

/// `x_1` fixed by the stationarity of `p_0` when the direct share is positive.
pub fn x1_closed_form(params: &SystemParams) -> Result<f64> {
    let (n, k) = (params.n() as f64, params.k() as f64);
    if params.n() == 2 {
        return Err(Error::Degenerate("x_1 is unbounded for N = 2".into()));
    }
    Ok((k - 1.0) / (k.powf((n - 2.0) / (n - 1.0)) - 1.0))
}

fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    while hi - lo > 1e-12 * lo.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Solves for the x-sequence by shooting on `x_{K-1}`.
pub fn solve_x_sequence(params: &SystemParams) -> Result<XSequence> {
    let (n, k) = (params.n(), params.k());
    let target = x1_closed_form(params)?;
    if k == 2 {
        return Ok(XSequence::from_last(n, k, target).expect("positive closed form"));
    }
    let miss = |x_last: f64| match XSequence::from_last(n, k, x_last) {
        Some(s) => s.x[0] - target,
        None => -1.0,
    };
    if miss(1.0) >= 0.0 || miss(SHOOT_MAX) <= 0.0 {
        return Err(Error::NoBracket(format!(
            "x_1 = {target} not reached for x_(K-1) in [1, {SHOOT_MAX:e}]"
        )));
    }
    let x_last = bisect(miss, 1.0, SHOOT_MAX);
    let seq = XSequence::from_last(n, k, x_last)
        .ok_or_else(|| Error::NoBracket("recursion left the positive orthant".into()))?;
    let worst = seq
        .recursion_residuals(n)
        .into_iter()
        .fold(0.0f64, |a, r| a.max(r.abs()));
    if worst > 1e-8 || (seq.x[0] - target).abs() > 1e-10 * target.max(1.0) {
        return Err(Error::NotConverged {
            iterations: 0,
            detail: format!(
                "x-sequence residual {worst:e}, x_1 = {} vs {target}",
                seq.x[0]
            ),
        });
    }
    Ok(seq)
}

/// `Σ_{j>=1} N s_j Π_{i<=j} 1/x_i`.
fn coded_weight(seq: &XSequence, w: &WeightProfile, n: usize) -> f64 {
    seq.decay()
        .iter()
        .enumerate()
        .skip(1)
        .map(|(j, d)| n as f64 * w.s_f64(j) * d)
        .sum()
}

/// x-sequence with the direct share pinned at zero: the recursion still
/// holds, and `x_{K-1}` is chosen so the coded mass matches `p̂`.
fn clean_x_sequence(params: &SystemParams, p_hat: f64) -> Result<XSequence> {
    let (n, k) = (params.n(), params.k());
    let w = weight_profile(n, k)?;
    let target = (1.0 - n as f64 * p_hat) / p_hat;
    if k == 2 {
        let x1 = n as f64 * w.s_f64(1) * p_hat / (1.0 - n as f64 * p_hat);
        return XSequence::from_last(n, k, x1)
            .ok_or_else(|| Error::NoBracket("recursion left the positive orthant".into()));
    }
    let excess = |x_last: f64| match XSequence::from_last(n, k, x_last) {
        Some(s) => target - coded_weight(&s, &w, n),
        None => -1.0,
    };
    if excess(1.0) > 1e-12 * target || excess(SHOOT_MAX) < 0.0 {
        return Err(Error::NoBracket(format!(
            "coded weight {target} not reached for x_(K-1) in [1, {SHOOT_MAX:e}]"
        )));
    }
    let x_last = if excess(1.0) >= 0.0 {
        1.0
    } else {
        bisect(excess, 1.0, SHOOT_MAX)
    };
    XSequence::from_last(n, k, x_last)
        .ok_or_else(|| Error::NoBracket("recursion left the positive orthant".into()))
}

/// Which face of the reduced polytope the homogeneous optimum lies on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MiRegime {
    /// Positive direct share, `x_1` from the closed form.
    TimeSharing,
    /// No direct share; every retrieval is coded.
    CleanTsc,
}

#[derive(Clone, Debug, Serialize)]
pub struct MiOptimum {
    pub reduced: ReducedAllocation,
    pub rho: f64,
    pub x: XSequence,
    pub regime: MiRegime,
}

fn reduced_from_x(p_hat: f64, p0: f64, seq: &XSequence) -> ReducedAllocation {
    ReducedAllocation {
        p_sharp: (p_hat - p0).max(0.0),
        p: seq.decay().iter().map(|d| p0 * d).collect(),
    }
}

/// Homogeneous MI optimum at cost `d` with the ratios that produced it.
/// Weights only scale `rho` by `Σγ`.
pub fn mi_optimum(params: &SystemParams, d: f64) -> Result<MiOptimum> {
    params.check_cost(d)?;
    let n = params.n();
    let w = weight_profile(n, params.k())?;
    let seq = solve_x_sequence(params)?;
    let p_hat = params.direct_floor(d);
    let p0 = (n as f64 - 1.0) * (d - 1.0) / coded_weight(&seq, &w, n);
    let (reduced, x, regime) = if p_hat - p0 >= 0.0 {
        (reduced_from_x(p_hat, p0, &seq), seq, MiRegime::TimeSharing)
    } else {
        let clean = clean_x_sequence(params, p_hat)?;
        (
            reduced_from_x(p_hat, p_hat, &clean),
            clean,
            MiRegime::CleanTsc,
        )
    };
    let rho = params.gamma_sum() * reduced_mi_objective(&reduced, params);
    Ok(MiOptimum {
        reduced,
        rho,
        x,
        regime,
    })
}

/// Optimal reduced allocation and leakage for equal server weights.
pub fn mi_optimal_homogeneous(params: &SystemParams, d: f64) -> Result<(ReducedAllocation, f64)> {
    if !params.is_homogeneous() {
        return Err(Error::InvalidParams("server weights must be equal".into()));
    }
    let opt = mi_optimum(params, d)?;
    Ok((opt.reduced, opt.rho))
}

/// Full form of the homogeneous optimum: the direct share `N p_#` goes to
/// server 1, the coded part to cyclic permutations.
pub fn mi_optimal_allocation(params: &SystemParams, d: f64) -> Result<Allocation> {
    let r = mi_optimum(params, d)?.reduced;
    let n = params.n();
    let mut dist = BTreeMap::new();
    if r.p_sharp > 0.0 {
        dist.insert(RandomKey::direct(1), n as f64 * r.p_sharp);
    }
    let cyclic: Vec<Permutation> = (0..n).map(|i| Permutation::shift(n, i)).collect();
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

#[derive(Clone, Debug)]
pub struct MiOracleOptions {
    pub max_iter: usize,
    /// Projected-gradient norm at which the reduced solver stops.
    pub tol: f64,
    /// Pins `p_#` at zero (the clean-TSC curve).
    pub pin_direct: bool,
}

impl Default for MiOracleOptions {
    fn default() -> Self {
        Self {
            max_iter: 200_000,
            tol: 1e-8,
            pin_direct: false,
        }
    }
}

/// Minimizes the reduced MI objective with `p_0 + p_# = p̂`.
pub fn mi_reduced_oracle(params: &SystemParams, d: f64) -> Result<(ReducedAllocation, f64)> {
    mi_reduced_oracle_with(params, d, &MiOracleOptions::default())
}

/// Minimizes the reduced MI objective with no direct downloads.
pub fn mi_clean_tsc_oracle(params: &SystemParams, d: f64) -> Result<(ReducedAllocation, f64)> {
    mi_reduced_oracle_with(
        params,
        d,
        &MiOracleOptions {
            pin_direct: true,
            ..Default::default()
        },
    )
}

pub fn mi_reduced_oracle_with(
    params: &SystemParams,
    d: f64,
    opts: &MiOracleOptions,
) -> Result<(ReducedAllocation, f64)> {
    params.check_cost(d)?;
    let (n, k) = (params.n(), params.k());
    let nf = n as f64;
    let w = weight_profile(n, k)?;
    let p_hat = params.direct_floor(d);
    let coded_total = (1.0 - nf * p_hat).max(0.0);
    let scales: Vec<f64> = (1..k).map(|j| nf * w.s_f64(j)).collect();
    // v = (p_0, z_1, …, z_{K-1}) with z_j = N s_j p_j.
    let decode = |v: &[f64]| ReducedAllocation {
        p_sharp: (p_hat - v[0]).max(0.0),
        p: std::iter::once(v[0])
            .chain(v[1..].iter().zip(&scales).map(|(z, s)| z / s))
            .collect(),
    };
    let clamp_p0 = |x: f64| {
        if opts.pin_direct {
            p_hat
        } else {
            x.clamp(0.0, p_hat)
        }
    };
    let project = |v: &mut [f64]| {
        v[0] = clamp_p0(v[0]);
        project_simplex(&mut v[1..], coded_total);
    };
    let grad = |v: &[f64]| {
        let g = reduced_mi_gradient(&decode(v), params, LOG_FLOOR);
        std::iter::once(g[1] - g[0])
            .chain(g[2..].iter().zip(&scales).map(|(gi, s)| gi / s))
            .collect::<Vec<f64>>()
    };
    // Directional derivative along a move `u` that keeps the coded sum fixed.
    // Centring the coded block removes the cancellation against `Σ u = 0`.
    let slope = |g: &[f64], u: &[f64]| {
        let mean = g[1..].iter().sum::<f64>() / (k - 1) as f64;
        g[0] * u[0]
            + g[1..]
                .iter()
                .zip(&u[1..])
                .map(|(x, y)| (x - mean) * y)
                .sum::<f64>()
    };

    let mut v = vec![p_hat / 2.0; k];
    let total_s: f64 = scales.iter().sum();
    for (vj, s) in v[1..].iter_mut().zip(&scales) {
        *vj = coded_total * s / total_s;
    }
    project(&mut v);
    let mut g = grad(&v);
    let mut step: f64 = 1.0;
    for it in 0..opts.max_iter {
        let mut probe: Vec<f64> = v.iter().zip(&g).map(|(a, b)| a - b).collect();
        project(&mut probe);
        let pg = probe
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if pg <= opts.tol {
            let r = decode(&v);
            let rho = params.gamma_sum() * reduced_mi_objective(&r, params);
            return Ok((r, rho));
        }
        // Scaled by the iterate: the curvature in each coordinate is roughly
        // inversely proportional to it.
        let dg: Vec<f64> = std::iter::once(v[0].max(SCALE_FLOOR * p_hat))
            .chain(v[1..].iter().map(|z| z.max(SCALE_FLOOR * coded_total)))
            .collect();
        let mut target: Vec<f64> = v
            .iter()
            .zip(&g)
            .zip(&dg)
            .map(|((a, b), di)| a - step * di * b)
            .collect();
        target[0] = clamp_p0(target[0]);
        project_simplex_scaled(&mut target[1..], &dg[1..], coded_total);
        let mut u: Vec<f64> = target.iter().zip(&v).map(|(a, b)| a - b).collect();
        if slope(&g, &u) >= 0.0 {
            u = probe.iter().zip(&v).map(|(a, b)| a - b).collect();
            if slope(&g, &u) >= 0.0 {
                return Err(Error::NotConverged {
                    iterations: it,
                    detail: format!("no descent direction at projected-gradient norm {pg:e}"),
                });
            }
        }
        // Exact line search on the segment v + a·u by bisecting the slope,
        // which stays resolvable after objective differences drop to rounding.
        let at = |a: f64| {
            v.iter()
                .zip(&u)
                .map(|(x, ui)| (x + a * ui).max(0.0))
                .collect::<Vec<f64>>()
        };
        let mut next = at(1.0);
        let mut gn = grad(&next);
        let mut alpha = 1.0;
        if slope(&gn, &u) > 0.0 {
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if slope(&grad(&at(mid)), &u) > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            alpha = lo;
            next = at(lo);
            gn = grad(&next);
        }
        step = (step * (2.0 * alpha).clamp(1e-3, 2.0)).clamp(1e-12, 1e12);
        v = next;
        g = gn;
    }
    Err(Error::NotConverged {
        iterations: opts.max_iter,
        detail: "projected gradient iteration cap".into(),
    })
}

#[derive(Clone, Debug)]
pub struct FrankWolfeOptions {
    pub max_iter: usize,
    /// Stop once the total duality gap falls below this.
    pub gap_tol: f64,
}

impl Default for FrankWolfeOptions {
    fn default() -> Self {
        Self {
            max_iter: 2_000_000,
            gap_tol: 1e-6,
        }
    }
}

impl FullSpace {
    /// `P(q | k)` at every server plus the query marginals.
    fn mi_state(&self, x: &[f64]) -> (Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>) {
        let kk = self.params.k() as f64;
        let cond: Vec<Vec<Vec<f64>>> = (0..self.params.n())
            .map(|s| self.conditional(x, s))
            .collect();
        let marg = cond
            .iter()
            .map(|c| {
                (0..self.query_count)
                    .map(|q| c.iter().map(|row| row[q]).sum::<f64>() / kk)
                    .collect()
            })
            .collect();
        (cond, marg)
    }

    fn mi_value(&self, x: &[f64], gamma: &[f64]) -> f64 {
        let kk = self.params.k() as f64;
        let (cond, marg) = self.mi_state(x);
        let mut total = 0.0;
        for (s, g) in gamma.iter().enumerate() {
            for row in &cond[s] {
                for (q, &p) in row.iter().enumerate() {
                    if p > 0.0 {
                        total += g * p * (p / marg[s][q]).log2() / kk;
                    }
                }
            }
        }
        total
    }

    fn mi_gradient(&self, x: &[f64], gamma: &[f64]) -> Vec<f64> {
        let (kk, m) = (self.params.k(), self.keys.len());
        let (cond, marg) = self.mi_state(x);
        let mut grad = vec![0.0; x.len()];
        for (s, g) in gamma.iter().enumerate() {
            for k in 0..kk {
                for (i, &q) in self.query[k][s].iter().enumerate() {
                    grad[k * m + i] += g * ratio_log(cond[s][k][q], marg[s][q], kk) / kk as f64;
                }
            }
        }
        grad
    }
}

/// `log2(P(q|k)/P̄(q))`, with its limit `log2 K` for an unused query.
fn ratio_log(p: f64, marg: f64, k: usize) -> f64 {
    if marg <= 0.0 {
        (k as f64).log2()
    } else {
        (p.max(LOG_FLOOR) / marg).log2()
    }
}

/// Minimizes `Σ_n γ_n I(M; Q_n)` over full per-message key distributions.
pub fn mi_full_oracle(params: &SystemParams, gamma: &[f64], d: f64) -> Result<(Allocation, f64)> {
    mi_full_oracle_with(params, gamma, d, &FrankWolfeOptions::default())
}

/// Frank-Wolfe over the product of per-message polytopes
/// `{x >= 0, Σ x = 1, Σ_B x >= N p̂}`. The linear subproblem is solved exactly
/// and certifies the duality gap; progress comes from pairwise mass
/// transfers inside the block with the largest gap.
pub fn mi_full_oracle_with(
    params: &SystemParams,
    gamma: &[f64],
    d: f64,
    opts: &FrankWolfeOptions,
) -> Result<(Allocation, f64)> {
    params.check_cost(d)?;
    let space = FullSpace::new(params)?;
    let (kk, m, n) = (params.k(), space.keys.len(), params.n());
    let floor = (n as f64 * params.direct_floor(d)).clamp(0.0, 1.0);
    let b_count = space.in_b.iter().filter(|b| **b).count();
    let mut x = vec![0.0; kk * m];
    for block in x.chunks_mut(m) {
        for (xi, &b) in block.iter_mut().zip(&space.in_b) {
            *xi = (1.0 - floor) / m as f64 + if b { floor / b_count as f64 } else { 0.0 };
        }
    }

    for _ in 0..opts.max_iter {
        let g = space.mi_gradient(&x, gamma);
        let mut total_gap = 0.0;
        let mut worst = (0usize, f64::NEG_INFINITY);
        for k in 0..kk {
            let (xb, gb) = (&x[k * m..(k + 1) * m], &g[k * m..(k + 1) * m]);
            let min_b = gb
                .iter()
                .zip(&space.in_b)
                .filter(|(_, b)| **b)
                .map(|(v, _)| *v)
                .fold(f64::INFINITY, f64::min);
            let min_out = gb
                .iter()
                .zip(&space.in_b)
                .filter(|(_, b)| !**b)
                .map(|(v, _)| *v)
                .fold(f64::INFINITY, f64::min);
            let lmo = min_b.min(floor * min_b + (1.0 - floor) * min_out);
            let gap = xb.iter().zip(gb).map(|(a, b)| a * b).sum::<f64>() - lmo;
            total_gap += gap;
            if gap > worst.1 {
                worst = (k, gap);
            }
        }
        if total_gap <= opts.gap_tol {
            let allocation = space.to_allocation(&x)?;
            let rho = rho_mi(&allocation, gamma)?;
            return Ok((allocation, rho));
        }
        let k = worst.0;
        let Some((from, to, t_max)) = best_pair(
            &x[k * m..(k + 1) * m],
            &g[k * m..(k + 1) * m],
            &space.in_b,
            floor,
        ) else {
            return Err(Error::NotConverged {
                iterations: 0,
                detail: format!("no descent pair at gap {total_gap:e}"),
            });
        };
        let t = space.pair_line_search(&x, gamma, k, from, to, t_max);
        let (fi, ti) = (k * m + from, k * m + to);
        x[fi] -= t;
        x[ti] += t;
        if x[fi] < 1e-18 {
            x[fi] = 0.0;
        }
    }
    Err(Error::NotConverged {
        iterations: opts.max_iter,
        detail: format!(
            "Frank-Wolfe iteration cap; value {}",
            space.mi_value(&x, gamma)
        ),
    })
}

/// Feasible transfer `from -> to` within a block with the largest
/// first-order gain over its longest step.
fn best_pair(x: &[f64], g: &[f64], in_b: &[bool], floor: f64) -> Option<(usize, usize, f64)> {
    let b_mass: f64 = x
        .iter()
        .zip(in_b)
        .filter(|(_, b)| **b)
        .map(|(v, _)| v)
        .sum();
    let slack = (b_mass - floor).max(0.0);
    let argmin = |pred: &dyn Fn(usize) -> bool| {
        (0..x.len())
            .filter(|&i| pred(i))
            .min_by(|&a, &b| g[a].total_cmp(&g[b]))
    };
    let targets = [
        argmin(&|_| true),
        argmin(&|i| in_b[i]),
        argmin(&|i| !in_b[i]),
    ];
    let mut best: Option<(usize, usize, f64, f64)> = None;
    for &j in targets.iter().flatten() {
        for i in (0..x.len()).filter(|&i| x[i] > 0.0) {
            let t_max = if in_b[i] && !in_b[j] {
                x[i].min(slack)
            } else {
                x[i]
            };
            let rate = g[i] - g[j];
            let gain = rate * t_max;
            if t_max > 0.0 && rate > 0.0 && best.is_none_or(|b| gain > b.3) {
                best = Some((i, j, t_max, gain));
            }
        }
    }
    best.map(|(i, j, t, _)| (i, j, t))
}

impl FullSpace {
    /// Exact line search for moving mass `t` from key `from` to key `to` of
    /// message block `k`.
    fn pair_line_search(
        &self,
        x: &[f64],
        gamma: &[f64],
        k: usize,
        from: usize,
        to: usize,
        t_max: f64,
    ) -> f64 {
        let kk = self.params.k();
        let (cond, marg) = self.mi_state(x);
        let slope = |t: f64| {
            let mut total = 0.0;
            for (s, g) in gamma.iter().enumerate() {
                let (qf, qt) = (self.query[k][s][from], self.query[k][s][to]);
                if qf == qt {
                    continue;
                }
                let at = |q: usize, delta: f64| {
                    ratio_log(cond[s][k][q] + delta, marg[s][q] + delta / kk as f64, kk)
                };
                total += g * (at(qt, t) - at(qf, -t)) / kk as f64;
            }
            total
        };
        if slope(t_max) <= 0.0 {
            return t_max;
        }
        let (mut lo, mut hi) = (0.0, t_max);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if slope(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-16 * t_max {
                break;
            }
        }
        0.5 * (lo + hi)
    }
}
