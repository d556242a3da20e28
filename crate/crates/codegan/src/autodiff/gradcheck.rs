//! Finite-difference gradient checking.
//!
//! The oracle re-evaluates a recorded graph in 64-bit arithmetic with an
//! independent forward implementation of every op, perturbs one leaf entry
//! at a time, and compares central differences against the 32-bit analytic
//! gradients produced by `backward()`. Used by the unit and acceptance
//! suites; not part of the model path.

use std::collections::{HashMap, HashSet};

use super::value::{Op, Value};
use crate::rng::SeededRng;

/// Central-difference step (64-bit evaluation).
pub const FD_STEP: f64 = 1e-3;
/// Relative tolerance for analytic-vs-numeric agreement.
pub const FD_RTOL: f64 = 1e-4;
/// Absolute floor for entries whose gradient is ~0.
pub const FD_ATOL: f64 = 1e-6;

/// Post-order over the full graph (constants included), inputs first.
fn full_topo(root: &Value) -> Vec<Value> {
    let mut order = Vec::new();
    let mut visited: HashSet<u64> = HashSet::new();
    let mut stack: Vec<(Value, bool)> = vec![(root.clone(), false)];
    while let Some((node, expanded)) = stack.pop() {
        if expanded {
            order.push(node);
            continue;
        }
        if !visited.insert(node.id()) {
            continue;
        }
        stack.push((node.clone(), true));
        for input in node.op_inputs() {
            if !visited.contains(&input.id()) {
                stack.push((input, false));
            }
        }
    }
    order
}

fn sigmoid_f64(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Evaluate the graph in f64, substituting `overrides` for leaf data.
pub fn eval_f64(root: &Value, overrides: &HashMap<u64, Vec<f64>>) -> Vec<f64> {
    let order = full_topo(root);
    let mut memo: HashMap<u64, Vec<f64>> = HashMap::new();
    for node in &order {
        let out: Vec<f64> = node.with_op(|op| {
            let get = |v: &Value| memo.get(&v.id()).expect("topo order").clone();
            match op {
                Op::Leaf => overrides.get(&node.id()).cloned().unwrap_or_else(|| {
                    node.data().iter().map(|&x| x as f64).collect()
                }),
                Op::Matmul(a, b) => {
                    let (m, k, n) = matmul_mkn(a.shape(), b.shape());
                    let (av, bv) = (get(a), get(b));
                    let mut out = vec![0.0f64; m * n];
                    for i in 0..m {
                        for p in 0..k {
                            let x = av[i * k + p];
                            for j in 0..n {
                                out[i * n + j] += x * bv[p * n + j];
                            }
                        }
                    }
                    out
                }
                Op::Add(a, b) => broadcast_zip(&get(a), &get(b), |x, y| x + y),
                Op::Mul(a, b) => broadcast_zip(&get(a), &get(b), |x, y| x * y),
                Op::Concat(xs, axis) => {
                    if *axis == 0 {
                        let mut out = Vec::new();
                        for x in xs {
                            out.extend(get(x));
                        }
                        out
                    } else {
                        let rows = xs[0].shape()[0];
                        let mut out = Vec::new();
                        let vals: Vec<Vec<f64>> = xs.iter().map(get).collect();
                        for r in 0..rows {
                            for (x, v) in xs.iter().zip(vals.iter()) {
                                let c = x.shape()[1];
                                out.extend_from_slice(&v[r * c..(r + 1) * c]);
                            }
                        }
                        out
                    }
                }
                Op::Sigmoid(x) => get(x).iter().map(|&v| sigmoid_f64(v)).collect(),
                Op::Tanh(x) => get(x).iter().map(|&v| v.tanh()).collect(),
                Op::Relu(x) => get(x).iter().map(|&v| v.max(0.0)).collect(),
                Op::Softmax(x) => {
                    let v = get(x);
                    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = v.iter().map(|&e| (e - max).exp()).collect();
                    let total: f64 = exps.iter().sum();
                    exps.iter().map(|e| e / total).collect()
                }
                Op::Log(x) => get(x).iter().map(|&v| v.ln()).collect(),
                Op::Sum(x) => vec![get(x).iter().sum()],
                Op::Mean(x) => {
                    let v = get(x);
                    vec![v.iter().sum::<f64>() / v.len() as f64]
                }
                Op::Embedding(table, ids) => {
                    let t = get(table);
                    let e = table.shape()[1];
                    let mut out = Vec::with_capacity(ids.len() * e);
                    for &i in ids {
                        out.extend_from_slice(&t[i * e..(i + 1) * e]);
                    }
                    out
                }
                Op::Slice(x, start, len) => {
                    let v = get(x);
                    let row = x.numel() / x.shape()[0];
                    v[start * row..(start + len) * row].to_vec()
                }
            }
        });
        memo.insert(node.id(), out);
    }
    memo.remove(&root.id()).expect("root evaluated")
}

fn matmul_mkn(lhs: &[usize], rhs: &[usize]) -> (usize, usize, usize) {
    match (lhs, rhs) {
        ([m, k], [_, n]) => (*m, *k, *n),
        ([k], [_, n]) => (1, *k, *n),
        ([m, k], [_]) => (*m, *k, 1),
        ([k], [_]) => (1, *k, 1),
        _ => unreachable!("rank checked at forward"),
    }
}

fn broadcast_zip(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    if a.len() == b.len() {
        a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect()
    } else if a.len() == 1 {
        b.iter().map(|&y| f(a[0], y)).collect()
    } else {
        a.iter().map(|&x| f(x, b[0])).collect()
    }
}

/// d(root)/d(leaf[entry]) by central differences at step `h`.
pub fn central_diff(root: &Value, leaf: &Value, entry: usize, h: f64) -> f64 {
    let base: Vec<f64> = leaf.data().iter().map(|&x| x as f64).collect();
    let mut plus = base.clone();
    plus[entry] += h;
    let mut minus = base;
    minus[entry] -= h;
    let mut overrides = HashMap::new();
    overrides.insert(leaf.id(), plus);
    let f_plus = eval_f64(root, &overrides)[0];
    overrides.insert(leaf.id(), minus);
    let f_minus = eval_f64(root, &overrides)[0];
    (f_plus - f_minus) / (2.0 * h)
}

#[derive(Debug)]
pub struct GradCheckFailure {
    pub leaf: String,
    pub entry: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub failures: Vec<GradCheckFailure>,
}

impl GradCheckReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Backward on `root`, then compare analytic gradients of the named leaves
/// against central differences. Large leaves are spot-checked on
/// `max_entries_per_leaf` random entries.
pub fn check_gradients(
    root: &Value,
    leaves: &[(&str, &Value)],
    max_entries_per_leaf: usize,
    rng: &mut SeededRng,
) -> GradCheckReport {
    for (_, leaf) in leaves {
        leaf.zero_grad();
    }
    root.backward().expect("scalar root");
    let mut report = GradCheckReport::default();
    for (name, leaf) in leaves {
        let n = leaf.numel();
        let entries: Vec<usize> = if n <= max_entries_per_leaf {
            (0..n).collect()
        } else {
            (0..max_entries_per_leaf).map(|_| rng.below(n)).collect()
        };
        for j in entries {
            let analytic = leaf.grad()[j] as f64;
            let numeric = central_diff(root, leaf, j, FD_STEP);
            let scale = analytic.abs().max(numeric.abs());
            let err = (analytic - numeric).abs();
            if scale > 0.0 {
                report.max_rel_err = report.max_rel_err.max(err / scale.max(FD_ATOL));
            }
            report.checked += 1;
            if err > FD_RTOL * scale + FD_ATOL {
                report.failures.push(GradCheckFailure {
                    leaf: name.to_string(),
                    entry: j,
                    analytic,
                    numeric,
                });
            }
        }
    }
    report
}

/// Panicking wrapper for test suites.
pub fn assert_gradients_match(
    root: &Value,
    leaves: &[(&str, &Value)],
    max_entries_per_leaf: usize,
    rng: &mut SeededRng,
) {
    let report = check_gradients(root, leaves, max_entries_per_leaf, rng);
    assert!(
        report.ok(),
        "gradient check failed on {}/{} entries, first: {:?}",
        report.failures.len(),
        report.checked,
        report.failures.first()
    );
}
