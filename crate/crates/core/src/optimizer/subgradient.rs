//! Projected subgradient descent with Polyak steps toward an adaptive
//! target level (variable target value method).

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct SubgradientOptions {
    pub max_iter: usize,
    /// Stop once the target gap has shrunk below this.
    pub tol: f64,
    /// Path length after which an unsuccessful level is lowered.
    pub path_bound: f64,
    /// Consecutive motionless iterations after which an unsuccessful level is lowered.
    pub stall_iters: usize,
    /// Iterations without reaching the level after which it is lowered.
    pub patience: usize,
    /// Factor applied to the target gap when the level is lowered.
    pub shrink: f64,
}

impl Default for SubgradientOptions {
    fn default() -> Self {
        Self {
            max_iter: 500_000,
            tol: 1e-10,
            path_bound: 1.0,
            stall_iters: 50,
            patience: 5_000,
            shrink: 0.3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SubgradientResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
}

/// Minimizes a convex function given by `oracle` (value and one
/// subgradient) over the set `project` maps onto.
pub fn minimize<F, P>(
    mut oracle: F,
    project: P,
    x0: Vec<f64>,
    opts: &SubgradientOptions,
) -> Result<SubgradientResult>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
    P: Fn(&mut [f64]),
{
    let mut x = x0;
    project(&mut x);
    let (f0, _) = oracle(&x);
    let mut best = SubgradientResult {
        x: x.clone(),
        value: f0,
        iterations: 0,
    };
    let mut delta = (0.1 * f0.abs()).max(1e-3);
    let mut reference = f0;
    let mut path = 0.0;
    let mut since_reset = 0;
    let mut since_level = 0;
    for it in 1..=opts.max_iter {
        let (f, g) = oracle(&x);
        if f < best.value {
            best.value = f;
            best.x.clone_from(&x);
            best.iterations = it;
        }
        since_level += 1;
        if best.value <= reference - 0.5 * delta {
            reference = best.value;
            path = 0.0;
            since_reset = 0;
            since_level = 0;
        } else if path > opts.path_bound
            || since_reset > opts.stall_iters
            || since_level > opts.patience
        {
            delta *= opts.shrink;
            since_level = 0;
            reference = best.value;
            path = 0.0;
            since_reset = 0;
            x.clone_from(&best.x);
        }
        if delta < opts.tol {
            return Ok(best);
        }
        let norm2: f64 = g.iter().map(|v| v * v).sum();
        if norm2 == 0.0 {
            return Ok(best);
        }
        let step = (f - (reference - delta)) / norm2;
        let prev = x.clone();
        x.iter_mut().zip(&g).for_each(|(xi, gi)| *xi -= step * gi);
        project(&mut x);
        let moved = prev
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        path += moved;
        if moved <= 1e-15 {
            since_reset += 1;
        } else {
            since_reset = 0;
        }
    }
    Err(Error::NotConverged {
        iterations: opts.max_iter,
        detail: format!(
            "target gap {delta:e} above {:e}, best value {}",
            opts.tol, best.value
        ),
    })
}
