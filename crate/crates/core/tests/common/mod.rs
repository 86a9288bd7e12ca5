//! Shared oracles for integration tests. Everything here is written
//! independently of the library internals it checks: finite differences for
//! gradients, brute-force enumeration for permutations, direct formulas for
//! metrics.

#![allow(dead_code)]

use weightforge_core::tensor::{Tape, Tensor, Var};

/// Build a scalar loss from leaf tensors.
pub type LossFn = dyn Fn(&mut Tape, &[Var]) -> Var;

/// Central-difference gradient of `f` w.r.t. every coordinate of every input.
pub fn finite_diff_grads(f: &LossFn, inputs: &[Tensor], h: f64) -> Vec<Vec<f64>> {
    let eval = |tensors: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let loss = f(&mut tape, &vars);
        tape.value(loss).item()
    };
    let mut grads = Vec::with_capacity(inputs.len());
    for (i, input) in inputs.iter().enumerate() {
        let mut g = vec![0.0; input.numel()];
        for j in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            g[j] = (eval(&plus) - eval(&minus)) / (2.0 * h);
        }
        grads.push(g);
    }
    grads
}

/// Exact minimum total variation by enumerating every ordering of every
/// hidden axis. Valid because each axis has its own permutation and the
/// axes' contributions are independent; only feasible for widths <= 8.
pub fn min_tv_by_enumeration(w: &weightforge_core::inr::WeightVector) -> f64 {
    use weightforge_core::symmetry::signatures;
    let mut total = 0.0;
    for (axis, &width) in w.arch.hidden_widths().iter().enumerate() {
        assert!(width <= 8, "enumeration oracle limited to width 8");
        let sigs = signatures(w, axis);
        let dist: Vec<Vec<f64>> = (0..width)
            .map(|i| {
                (0..width)
                    .map(|j| {
                        sigs[i]
                            .iter()
                            .zip(&sigs[j])
                            .map(|(a, b)| (a - b).abs())
                            .sum()
                    })
                    .collect()
            })
            .collect();
        let mut best = f64::INFINITY;
        let mut order: Vec<usize> = (0..width).collect();
        permute_all(&mut order, 0, &mut |p| {
            let cost: f64 = p.windows(2).map(|e| dist[e[0]][e[1]]).sum();
            if cost < best {
                best = cost;
            }
        });
        total += best;
    }
    total
}

fn permute_all(items: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
    if k == items.len() {
        f(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute_all(items, k + 1, f);
        items.swap(k, i);
    }
}

/// Bilinear sample of a [res, res, ch] pixel-center image at a coordinate
/// in [−1,1]² (row ↔ x₂, col ↔ x₁), clamped at the borders.
pub fn bilinear_sample(img: &Tensor, x1: f64, x2: f64) -> Vec<f64> {
    let (rows, cols, ch) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let rf = ((x2 + 1.0) * rows as f64 / 2.0 - 0.5).clamp(0.0, (rows - 1) as f64);
    let cf = ((x1 + 1.0) * cols as f64 / 2.0 - 0.5).clamp(0.0, (cols - 1) as f64);
    let (r0, c0) = (rf.floor() as usize, cf.floor() as usize);
    let (r1, c1) = ((r0 + 1).min(rows - 1), (c0 + 1).min(cols - 1));
    let (fr, fc) = (rf - r0 as f64, cf - c0 as f64);
    let v = |r: usize, c: usize, k: usize| img.data()[(r * cols + c) * ch + k];
    (0..ch)
        .map(|k| {
            v(r0, c0, k) * (1.0 - fr) * (1.0 - fc)
                + v(r0, c1, k) * (1.0 - fr) * fc
                + v(r1, c0, k) * fr * (1.0 - fc)
                + v(r1, c1, k) * fr * fc
        })
        .collect()
}

/// Resample an image through a coordinate map: out(x) = img(map(x)).
pub fn resample_warped(img: &Tensor, map: impl Fn(f64, f64) -> (f64, f64)) -> Tensor {
    let (rows, cols, ch) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let mut data = Vec::with_capacity(rows * cols * ch);
    for r in 0..rows {
        let x2 = -1.0 + 2.0 * (r as f64 + 0.5) / rows as f64;
        for c in 0..cols {
            let x1 = -1.0 + 2.0 * (c as f64 + 0.5) / cols as f64;
            let (u, v) = map(x1, x2);
            data.extend(bilinear_sample(img, u, v));
        }
    }
    Tensor::new(vec![rows, cols, ch], data).unwrap()
}

pub fn mean_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.numel() as f64
}

/// Assert reverse-mode and finite-difference gradients agree within
/// `rel` relative error (with a small absolute floor for near-zero grads).
pub fn assert_grads_match(name: &str, f: &LossFn, inputs: &[Tensor], rel: f64) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = f(&mut tape, &vars);
    tape.backward(loss).expect("backward");
    let fd = finite_diff_grads(f, inputs, 1e-5);
    for (i, var) in vars.iter().enumerate() {
        let ad = tape.grad(*var).unwrap_or_else(|| panic!("{name}: input {i} has no grad"));
        for (j, (&a, &n)) in ad.iter().zip(&fd[i]).enumerate() {
            let tol = rel * a.abs().max(n.abs()) + 1e-7;
            assert!(
                (a - n).abs() <= tol,
                "{name}: input {i} coord {j}: ad={a:.10e} fd={n:.10e}"
            );
        }
    }
}
