//! Euclidean projections onto the small polytopes the solvers work over.

/// Projects `v` onto `{x >= 0, Σ x = total}` in place.
pub fn project_simplex(v: &mut [f64], total: f64) {
    if v.is_empty() {
        return;
    }
    if total <= 0.0 {
        v.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cumsum += ui;
        let t = (cumsum - total) / (i + 1) as f64;
        if ui - t > 0.0 {
            tau = t;
        }
    }
    v.iter_mut().for_each(|x| *x = (*x - tau).max(0.0));
}

/// Projects `v` onto `{x >= 0, Σ x = total}` in the metric weighted by
/// `1/d` (all `d_i > 0`): `x_i = max(0, v_i - τ d_i)`.
pub fn project_simplex_scaled(v: &mut [f64], d: &[f64], total: f64) {
    if v.is_empty() {
        return;
    }
    if total <= 0.0 {
        v.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| (v[b] / d[b]).total_cmp(&(v[a] / d[a])));
    let (mut sv, mut sd) = (0.0, 0.0);
    let mut tau = 0.0;
    for (pos, &i) in order.iter().enumerate() {
        sv += v[i];
        sd += d[i];
        let t = (sv - total) / sd;
        let next = order
            .get(pos + 1)
            .map_or(f64::NEG_INFINITY, |&j| v[j] / d[j]);
        tau = t;
        if t >= next {
            break;
        }
    }
    for (x, di) in v.iter_mut().zip(d) {
        *x = (*x - tau * di).max(0.0);
    }
}

/// Projects onto `{x >= 0, Σ x = 1, Σ_{i in B} x_i >= floor}` where `in_b`
/// marks the members of `B`.
pub fn project_capped_simplex(v: &mut [f64], in_b: &[bool], floor: f64) {
    let orig = v.to_vec();
    project_simplex(v, 1.0);
    let mass: f64 = v
        .iter()
        .zip(in_b)
        .filter(|(_, b)| **b)
        .map(|(x, _)| x)
        .sum();
    if mass >= floor {
        return;
    }
    // The floor is active: the problem splits into two independent simplices.
    let floor = floor.min(1.0);
    let (mut inside, mut outside): (Vec<f64>, Vec<f64>) = (Vec::new(), Vec::new());
    for (x, &b) in orig.iter().zip(in_b) {
        if b {
            inside.push(*x);
        } else {
            outside.push(*x);
        }
    }
    project_simplex(&mut inside, floor);
    project_simplex(&mut outside, 1.0 - floor);
    let (mut i, mut o) = (inside.into_iter(), outside.into_iter());
    for (x, &b) in v.iter_mut().zip(in_b) {
        *x = if b { i.next() } else { o.next() }.expect("partition sizes match");
    }
}
