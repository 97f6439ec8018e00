//! Inexact proximal point method for optimal transport.
//!
//! Each outer iteration multiplies the running plan into the Gibbs kernel
//! and runs `inner` Sinkhorn sweeps, so the plan converges to the exact
//! (unregularized) optimum rather than an entropic smoothing of it. The
//! column marginal is exact immediately after every iteration because the
//! column scaling is the last update applied.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Coupling matrix with its marginals and cost.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    /// Plan `[n, m]`, non-negative.
    pub plan: Tensor,
    /// Row marginal (length n).
    pub a: Vec<f64>,
    /// Column marginal (length m).
    pub b: Vec<f64>,
    /// `<plan, cost>`.
    pub cost: f64,
    pub iters: usize,
    pub beta: f64,
}

/// Cosine-distance cost between two feature sets: `c[i,j] = 1 - cos(t_i, v_j)`.
/// Zero vectors are treated as cosine 0 (cost 1).
pub fn wpa_cost(z_text: &Tensor, z_vis: &Tensor) -> Tensor {
    let (n, h) = z_text.dims2();
    let (m, h2) = z_vis.dims2();
    assert_eq!(h, h2, "feature widths differ");
    let norm = |row: &[f64]| row.iter().map(|&v| v * v).sum::<f64>().sqrt().max(1e-12);
    let mut out = Tensor::zeros(&[n, m]);
    for i in 0..n {
        let ti = z_text.row(i);
        let ni = norm(ti);
        for j in 0..m {
            let vj = z_vis.row(j);
            let dot: f64 = ti.iter().zip(vj).map(|(&a, &b)| a * b).sum();
            out.set2(i, j, 1.0 - dot / (ni * norm(vj)));
        }
    }
    out
}

fn check_marginal(name: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::Transport(format!("{name} marginal is empty")));
    }
    if v.iter().any(|&x| x <= 0.0 || !x.is_finite()) {
        return Err(Error::Transport(format!(
            "{name} marginal must be strictly positive"
        )));
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > 1e-8 {
        return Err(Error::Transport(format!(
            "{name} marginal sums to {sum}, expected 1"
        )));
    }
    Ok(())
}

/// IPOT with a per-iteration observer invoked with the plan after each
/// proximal step.
pub fn ipot_with_callback(
    cost: &Tensor,
    a: &[f64],
    b: &[f64],
    beta: f64,
    iters: usize,
    inner: usize,
    mut observer: impl FnMut(usize, &Tensor),
) -> Result<TransportPlan> {
    let (n, m) = cost.dims2();
    if a.len() != n || b.len() != m {
        return Err(Error::Transport(format!(
            "marginal lengths ({}, {}) do not match cost {n}x{m}",
            a.len(),
            b.len()
        )));
    }
    check_marginal("row", a)?;
    check_marginal("column", b)?;
    if beta <= 0.0 || !beta.is_finite() {
        return Err(Error::Transport(format!("beta must be positive, got {beta}")));
    }
    if !cost.is_finite() {
        return Err(Error::Transport("cost matrix has non-finite entries".into()));
    }
    if inner == 0 {
        return Err(Error::Transport("inner sweep count must be >= 1".into()));
    }

    // Gibbs kernel; shifting by min(c) guards exp underflow/overflow and
    // cancels out of the scaling updates.
    let min_c = cost.data().iter().cloned().fold(f64::INFINITY, f64::min);
    let mut gibbs = vec![0.0; n * m];
    for (g, &c) in gibbs.iter_mut().zip(cost.data()) {
        *g = (-(c - min_c) / beta).exp();
    }

    let mut plan = vec![1.0 / (n * m) as f64; n * m];
    let mut sigma = vec![1.0 / m as f64; m];
    let mut delta = vec![0.0; n];
    let mut q = vec![0.0; n * m];

    for it in 0..iters {
        for (qv, (&g, &t)) in q.iter_mut().zip(gibbs.iter().zip(plan.iter())) {
            *qv = g * t;
        }
        for _ in 0..inner {
            // delta = a / (Q sigma)
            for i in 0..n {
                let row = &q[i * m..(i + 1) * m];
                let dot: f64 = row.iter().zip(&sigma).map(|(&x, &s)| x * s).sum();
                delta[i] = a[i] / dot;
            }
            // sigma = b / (Q^T delta)
            let mut qtd = vec![0.0; m];
            for i in 0..n {
                let d = delta[i];
                for (acc, &x) in qtd.iter_mut().zip(&q[i * m..(i + 1) * m]) {
                    *acc += x * d;
                }
            }
            for j in 0..m {
                sigma[j] = b[j] / qtd[j];
            }
        }
        for i in 0..n {
            for j in 0..m {
                plan[i * m + j] = delta[i] * q[i * m + j] * sigma[j];
            }
        }
        let t = Tensor::from_vec(&[n, m], plan.clone());
        observer(it, &t);
    }

    let plan_t = Tensor::from_vec(&[n, m], plan);
    if !plan_t.is_finite() {
        return Err(Error::Transport("solver produced non-finite plan".into()));
    }
    let total_cost = plan_t
        .data()
        .iter()
        .zip(cost.data())
        .map(|(&t, &c)| t * c)
        .sum();
    Ok(TransportPlan {
        plan: plan_t,
        a: a.to_vec(),
        b: b.to_vec(),
        cost: total_cost,
        iters,
        beta,
    })
}

/// IPOT with the defaults wired by callers: see `ipot_with_callback`.
pub fn ipot(
    cost: &Tensor,
    a: &[f64],
    b: &[f64],
    beta: f64,
    iters: usize,
    inner: usize,
) -> Result<TransportPlan> {
    ipot_with_callback(cost, a, b, beta, iters, inner, |_, _| {})
}

/// Shannon entropy of a plan (`0 ln 0 = 0`).
pub fn plan_entropy(plan: &Tensor) -> f64 {
    -plan
        .data()
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>()
}

/// Uniform marginal of length n.
pub fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Exhaustive minimum assignment cost over all permutations, divided by n:
/// the optimum of uniform-marginal OT on a square cost matrix. Test oracle.
pub fn brute_force_uniform_ot(cost: &Tensor) -> f64 {
    let (n, m) = cost.dims2();
    assert_eq!(n, m, "brute force oracle needs a square cost");
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    // Heap's algorithm
    fn heap(k: usize, perm: &mut Vec<usize>, cost: &Tensor, best: &mut f64) {
        if k == 1 {
            let total: f64 = perm.iter().enumerate().map(|(i, &j)| cost.at2(i, j)).sum();
            if total < *best {
                *best = total;
            }
            return;
        }
        for i in 0..k {
            heap(k - 1, perm, cost, best);
            if k % 2 == 0 {
                perm.swap(i, k - 1);
            } else {
                perm.swap(0, k - 1);
            }
        }
    }
    heap(n, &mut perm, cost, &mut best);
    best / n as f64
}
