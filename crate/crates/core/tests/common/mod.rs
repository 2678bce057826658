//! Independent oracles shared by the integration and acceptance tests.

#![allow(dead_code)]

use microgrid_core::lp::{LinearProgram, MilpProblem, Sense};
use rand::Rng;

/// Solves the square system `a x = b` by Gaussian elimination with partial
/// pivoting; `None` when (numerically) singular.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-10 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

fn combinations(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, f);
            cur.pop();
        }
    }
    rec(0, n, k, &mut Vec::new(), &mut f);
}

/// Best objective over all basic solutions of a bounded LP (finite boxes on
/// every variable), or `None` if no vertex is feasible.
pub fn vertex_enumeration(lp: &LinearProgram) -> Option<(f64, Vec<f64>)> {
    let n = lp.n_vars();
    if n == 0 {
        let ok = (0..lp.n_rows()).all(|i| match lp.senses[i] {
            Sense::Le => 0.0 <= lp.rhs[i] + 1e-9,
            Sense::Ge => 0.0 >= lp.rhs[i] - 1e-9,
            Sense::Eq => lp.rhs[i].abs() <= 1e-9,
        });
        return ok.then(|| (0.0, Vec::new()));
    }
    assert!(
        lp.lower.iter().chain(&lp.upper).all(|v| v.is_finite()),
        "oracle needs finite boxes"
    );
    // Candidate hyperplanes: rows, then lower and upper bounds.
    let mut planes: Vec<(Vec<f64>, f64)> = lp.rows.iter().cloned().zip(lp.rhs.iter().copied()).collect();
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        planes.push((e.clone(), lp.lower[j]));
        planes.push((e, lp.upper[j]));
    }
    let feasible = |x: &[f64]| {
        let tol = 1e-9;
        lp.rows.iter().enumerate().all(|(i, row)| {
            let lhs: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
            let scale = 1.0 + lp.rhs[i].abs();
            match lp.senses[i] {
                Sense::Le => lhs <= lp.rhs[i] + tol * scale,
                Sense::Ge => lhs >= lp.rhs[i] - tol * scale,
                Sense::Eq => (lhs - lp.rhs[i]).abs() <= tol * scale,
            }
        }) && x
            .iter()
            .enumerate()
            .all(|(j, &v)| v >= lp.lower[j] - tol && v <= lp.upper[j] + tol)
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    combinations(planes.len(), n, |idx| {
        let a = idx.iter().map(|&i| planes[i].0.clone()).collect();
        let b = idx.iter().map(|&i| planes[i].1).collect();
        if let Some(x) = gauss_solve(a, b) {
            if feasible(&x) {
                let obj = lp.objective_at(&x);
                if best.as_ref().map_or(true, |(o, _)| obj < *o) {
                    best = Some((obj, x));
                }
            }
        }
    });
    best
}

/// Optimum of a MILP by trying every binary assignment; the continuous
/// remainder of each assignment is solved by vertex enumeration.
pub fn exhaustive_milp(p: &MilpProblem) -> Option<f64> {
    let lp = &p.lp;
    let k = p.binaries.len();
    let cont: Vec<usize> = (0..lp.n_vars()).filter(|j| !p.binaries.contains(j)).collect();
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << k) {
        let mut fixed = vec![0.0; lp.n_vars()];
        let mut ok = true;
        for (bit, &j) in p.binaries.iter().enumerate() {
            fixed[j] = ((mask >> bit) & 1) as f64;
            ok &= fixed[j] >= lp.lower[j] && fixed[j] <= lp.upper[j];
        }
        if !ok {
            continue;
        }
        let base_obj: f64 = p.binaries.iter().map(|&j| lp.c[j] * fixed[j]).sum();
        let mut sub = LinearProgram::new(cont.iter().map(|&j| lp.c[j]).collect());
        for (i, row) in lp.rows.iter().enumerate() {
            let shift: f64 = p.binaries.iter().map(|&j| row[j] * fixed[j]).sum();
            sub.add_row(cont.iter().map(|&j| row[j]).collect(), lp.senses[i], lp.rhs[i] - shift);
        }
        for (k, &j) in cont.iter().enumerate() {
            sub.set_bounds(k, lp.lower[j], lp.upper[j]);
        }
        if let Some((obj, _)) = vertex_enumeration(&sub) {
            let total = base_obj + obj;
            best = Some(best.map_or(total, |b: f64| b.min(total)));
        }
    }
    best
}

fn random_sense<R: Rng>(rng: &mut R) -> Sense {
    match rng.gen_range(0..5) {
        0 | 1 => Sense::Le,
        2 | 3 => Sense::Ge,
        _ => Sense::Eq,
    }
}

/// Random LP with `n ≤ 6` variables, each in a finite box.
pub fn random_boxed_lp<R: Rng>(rng: &mut R) -> LinearProgram {
    let n = rng.gen_range(1..=6);
    let m = rng.gen_range(1..=4);
    let mut lp = LinearProgram::new((0..n).map(|_| rng.gen_range(-5.0..5.0)).collect());
    for j in 0..n {
        let lo = if rng.gen_bool(0.5) {
            0.0
        } else {
            rng.gen_range(-3.0..0.0)
        };
        lp.set_bounds(j, lo, rng.gen_range(1.0..5.0));
    }
    for _ in 0..m {
        let row: Vec<f64> = (0..n)
            .map(|_| {
                if rng.gen_bool(0.2) {
                    0.0
                } else {
                    rng.gen_range(-4.0..4.0)
                }
            })
            .collect();
        lp.add_row(row, random_sense(rng), rng.gen_range(-4.0..6.0));
    }
    lp
}

/// Random MILP with `k ≤ 10` binaries and up to 3 boxed continuous variables.
pub fn random_milp<R: Rng>(rng: &mut R) -> MilpProblem {
    let k = rng.gen_range(1..=10);
    let nc = rng.gen_range(0..=3);
    let n = k + nc;
    let mut lp = LinearProgram::new((0..n).map(|_| rng.gen_range(-6.0..6.0)).collect());
    for j in 0..k {
        lp.set_bounds(j, 0.0, 1.0);
    }
    for j in k..n {
        lp.set_bounds(j, rng.gen_range(-2.0..0.0), rng.gen_range(0.5..4.0));
    }
    for _ in 0..rng.gen_range(1..=5) {
        let row: Vec<f64> = (0..n)
            .map(|_| {
                if rng.gen_bool(0.3) {
                    0.0
                } else {
                    rng.gen_range(-3.0..3.0)
                }
            })
            .collect();
        let sense = if rng.gen_bool(0.85) {
            [Sense::Le, Sense::Ge][rng.gen_range(0..2)]
        } else {
            Sense::Eq
        };
        lp.add_row(row, sense, rng.gen_range(-3.0..5.0));
    }
    MilpProblem {
        lp,
        binaries: (0..k).collect(),
    }
}

use microgrid_core::nn::{Activation, DenseNet, Grads};

/// Largest relative error between analytic and central-difference gradients
/// of `L = proj · net(x)`. Parameters whose ±ε perturbation flips the sign of
/// some rectifier pre-activation sit on a kink and are skipped.
pub fn gradient_check(net: &DenseNet, x: &[f64], proj: &[f64], eps: f64) -> f64 {
    let loss = |n: &DenseNet| n.forward(x).unwrap().iter().zip(proj).map(|(y, p)| y * p).sum::<f64>();
    let relu_signs = |n: &DenseNet| -> Vec<bool> {
        let mut a = x.to_vec();
        let mut signs = Vec::new();
        for l in n.layers() {
            let z: Vec<f64> = l
                .weights
                .chunks_exact(l.n_in)
                .zip(&l.bias)
                .map(|(row, b)| b + row.iter().zip(&a).map(|(w, v)| w * v).sum::<f64>())
                .collect();
            if l.activation == Activation::Relu {
                signs.extend(z.iter().map(|v| *v > 0.0));
            }
            a = z.iter().map(|&v| l.activation.apply(v)).collect();
        }
        signs
    };
    let cache = net.forward_cached(x).unwrap();
    let mut g = Grads::zeros_like(net);
    net.backward(&cache, proj, &mut g).unwrap();
    let analytic = g.flat();
    let base = net.params();
    let mut worst: f64 = 0.0;
    let mut probe = net.clone();
    for (i, &a) in analytic.iter().enumerate() {
        let mut p = base.clone();
        p[i] = base[i] + eps;
        probe.set_params(&p).unwrap();
        let (up, s_up) = (loss(&probe), relu_signs(&probe));
        p[i] = base[i] - eps;
        probe.set_params(&p).unwrap();
        let (down, s_down) = (loss(&probe), relu_signs(&probe));
        if s_up != s_down {
            continue;
        }
        let numeric = (up - down) / (2.0 * eps);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

pub fn random_net<R: Rng>(rng: &mut R, act: Activation) -> (DenseNet, Vec<f64>, Vec<f64>) {
    let n_in = rng.gen_range(1..=5);
    let hidden = rng.gen_range(1..=6);
    let n_out = rng.gen_range(1..=4);
    let mut net = DenseNet::new(&[n_in, hidden, n_out], act, Activation::Identity, rng);
    for l in net.layers_mut() {
        l.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
    }
    let x = (0..n_in).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let proj = (0..n_out).map(|_| rng.gen_range(-1.0..1.0)).collect();
    (net, x, proj)
}

/// Fits `q` free values to `samples` by full-batch Adam on the mean quantile
/// Huber loss of a bias-only network.
pub fn fit_quantiles(samples: &[f64], q: usize, k: f64, steps: usize) -> Vec<f64> {
    use microgrid_core::nn::{quantile_huber_grad, Adam, Layer, Optimizer, QuantileSpec};
    let spec = QuantileSpec::new(q, k);
    let mut net = DenseNet::from_layers(vec![Layer::zeros(1, q, Activation::Identity)]).unwrap();
    let mut opt = Adam::new(&net, 0.01);
    for _ in 0..steps {
        let theta = net.forward(&[0.0]).unwrap();
        let mut g = Grads::zeros_like(&net);
        for (i, (&th, &tau)) in theta.iter().zip(&spec.taus).enumerate() {
            let s: f64 = samples.iter().map(|&y| -quantile_huber_grad(y - th, tau, k)).sum();
            g.bias[0][i] = s / samples.len() as f64;
        }
        opt.step(&mut net, &g).unwrap();
    }
    net.forward(&[0.0]).unwrap()
}
