//! Log-domain Sinkhorn iterations for entropic optimal transport between two
//! uniform discrete measures of equal size.

fn log_sum_exp(values: impl Iterator<Item = f64>, buf: &mut Vec<f64>) -> f64 {
    buf.clear();
    buf.extend(values);
    let max = buf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + buf.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Transport cost `Σ P_ij C_ij` of the entropic plan between uniform marginals.
///
/// `epsilon` is the absolute regularization (same unit as `cost`).
pub fn sinkhorn_cost(cost: &[f64], n: usize, epsilon: f64, iterations: usize) -> f64 {
    assert_eq!(cost.len(), n * n);
    if n == 0 {
        return 0.0;
    }
    let log_w = -(n as f64).ln();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut buf = Vec::with_capacity(n);
    for _ in 0..iterations {
        for i in 0..n {
            let row = &cost[i * n..(i + 1) * n];
            let lse = log_sum_exp(row.iter().zip(&g).map(|(c, gj)| (gj - c) / epsilon), &mut buf);
            f[i] = epsilon * (log_w - lse);
        }
        for j in 0..n {
            let lse = log_sum_exp((0..n).map(|i| (f[i] - cost[i * n + j]) / epsilon), &mut buf);
            g[j] = epsilon * (log_w - lse);
        }
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let c = cost[i * n + j];
            total += ((f[i] + g[j] - c) / epsilon).exp() * c;
        }
    }
    total
}
