#![allow(clippy::needless_range_loop)]
use qlpv_core::qp::{qp_gradients, qp_solve, qp_value_gradients, flatten_data, QpStatus, QuadProg};
use qlpv_core::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_qp(rng: &mut ChaCha8Rng, n: usize, m: usize, p: usize) -> QuadProg {
    let mut r = |_: usize, _: usize| rng.gen_range(-1.0..1.0);
    let mh = Mat::from_fn(n, n, &mut r);
    let hess = mh.transpose().matmul(&mh).add(&Mat::identity(n).scaled(0.1));
    let f: Vec<f64> = (0..n).map(|_| r(0, 0)).collect();
    let g = Mat::from_fn(m, n, &mut r);
    let x0: Vec<f64> = (0..n).map(|_| r(0, 0)).collect();
    let gx = g.matvec(&x0);
    let h: Vec<f64> = gx.iter().map(|v| v + r(0, 0).abs() * 0.5).collect();
    let aeq = Mat::from_fn(p, n, &mut r);
    let beq = aeq.matvec(&x0);
    QuadProg::new(hess, f, g, h, aeq, beq).unwrap()
}

/// Enumerates active sets up to size n and returns the KKT point.
fn brute_force(qp: &QuadProg) -> Option<Vec<f64>> {
    let (n, m, p) = (qp.n(), qp.m(), qp.p());
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << m) {
        let active: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        if active.len() + p > n {
            continue;
        }
        let k = active.len();
        let dim = n + k + p;
        let mut kkt = Mat::zeros(dim, dim);
        let mut rhs = vec![0.0; dim];
        for i in 0..n {
            for j in 0..n {
                kkt[(i, j)] = qp.hess[(i, j)];
            }
            rhs[i] = -qp.f[i];
        }
        for (r, &row) in active.iter().enumerate() {
            for j in 0..n {
                kkt[(n + r, j)] = qp.g[(row, j)];
                kkt[(j, n + r)] = qp.g[(row, j)];
            }
            rhs[n + r] = qp.h[row];
        }
        for r in 0..p {
            for j in 0..n {
                kkt[(n + k + r, j)] = qp.aeq[(r, j)];
                kkt[(j, n + k + r)] = qp.aeq[(r, j)];
            }
            rhs[n + k + r] = qp.beq[r];
        }
        let Some(inv) = kkt.inverse() else { continue };
        let z = inv.matvec(&rhs);
        if z[n..n + k].iter().any(|&l| l < -1e-9) || qp.infeasibility(&z[..n]) > 1e-9 {
            continue;
        }
        let obj = qp.objective(&z[..n]);
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, z[..n].to_vec()));
        }
    }
    best.map(|b| b.1)
}

#[test]
fn matches_brute_force_on_small_problems() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..200 {
        let n = rng.gen_range(1..=6);
        let m = rng.gen_range(0..=10);
        let p = rng.gen_range(0..=n / 2);
        let qp = random_qp(&mut rng, n, m, p);
        let sol = qp_solve(&qp, 1e-9, 100).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal, "case {case}");
        assert!(sol.kkt_residual <= 1e-7, "case {case}: residual {}", sol.kkt_residual);
        let x = brute_force(&qp).expect("oracle found no KKT point");
        for (a, b) in sol.x.iter().zip(&x) {
            assert!((a - b).abs() <= 1e-6 * (1.0 + b.abs()), "case {case}: {:?} vs {:?}", sol.x, x);
        }
    }
}

#[test]
fn residuals_on_larger_problems() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    let mut iters = 0;
    for case in 0..300 {
        let n = rng.gen_range(1..=30);
        let m = rng.gen_range(0..=60);
        let p = rng.gen_range(0..=n / 3);
        let qp = random_qp(&mut rng, n, m, p);
        let sol = qp_solve(&qp, 1e-9, 100).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal, "case {case} n={n} m={m} p={p} iters={} res={}", sol.iterations, sol.kkt_residual);
        worst = worst.max(sol.kkt_residual);
        iters = iters.max(sol.iterations);
        assert!(sol.kkt_residual <= 1e-7, "case {case}: residual {}", sol.kkt_residual);
    }
    std::println!("worst residual {worst:e}, max iterations {iters}");
}

#[test]
fn infeasible_random_problems_are_flagged() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..50 {
        let n = rng.gen_range(1..=8);
        let mut qp = random_qp(&mut rng, n, 4, 0);
        // a row and its negation with offsets that cannot both hold
        let row: Vec<f64> = qp.g.row(0).to_vec();
        let mut g = Mat::zeros(qp.m() + 1, n);
        for i in 0..qp.m() {
            g.row_mut(i).copy_from_slice(qp.g.row(i));
        }
        g.row_mut(qp.m()).copy_from_slice(&row.iter().map(|v| -v).collect::<Vec<_>>());
        let mut h = qp.h.clone();
        h.push(-qp.h[0] - 1.0);
        qp = QuadProg::inequality(qp.hess.clone(), qp.f.clone(), g, h).unwrap();
        assert_eq!(qp_solve(&qp, 1e-9, 100).unwrap().status, QpStatus::Infeasible);
    }
}

fn perturbed(qp: &QuadProg, idx: usize, delta: f64) -> QuadProg {
    let mut v = flatten_data(qp);
    v[idx] += delta;
    let (n, m, p) = (qp.n(), qp.m(), qp.p());
    let mut it = v.into_iter();
    let mut take = |r: usize, c: usize| Mat::from_vec(r, c, it.by_ref().take(r * c).collect());
    let hess = take(n, n);
    let f = take(1, n).into_vec();
    let g = take(m, n);
    let h = take(1, m).into_vec();
    let aeq = take(p, n);
    let beq = take(1, p).into_vec();
    // a one-sided change of H enters the objective symmetrically
    QuadProg::new(hess, f, g, h, aeq, beq).unwrap()
}

#[test]
fn solution_and_value_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut checked = 0;
    while checked < 40 {
        let n = rng.gen_range(2..=5);
        let m = rng.gen_range(1..=6);
        let p = rng.gen_range(0..=1);
        let qp = random_qp(&mut rng, n, m, p);
        let sol = qp_solve(&qp, 1e-10, 100).unwrap();
        let slack: Vec<f64> = qp.h.iter().zip(qp.g.matvec(&sol.x)).map(|(h, g)| h - g).collect();
        // skip near-degenerate active sets
        if (0..m).any(|i| (slack[i] < 1e-3 && slack[i] > 1e-9) || (slack[i] <= 1e-9 && sol.lam[i] < 1e-3)) {
            continue;
        }
        checked += 1;
        let dl: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let grads = qp_gradients(&qp, &sol, &dl).unwrap().flatten();
        let vgrads = qp_value_gradients(&qp, &sol).flatten();
        let step = 1e-5;
        for idx in 0..grads.len() {
            let eval = |d: f64| {
                let q = perturbed(&qp, idx, d);
                let s = qp_solve(&q, 1e-12, 100).unwrap();
                (s.x.iter().zip(&dl).map(|(a, b)| a * b).sum::<f64>(), q.objective(&s.x))
            };
            let (lp, vp) = eval(step);
            let (lm, vm) = eval(-step);
            let fd = (lp - lm) / (2.0 * step);
            let fdv = (vp - vm) / (2.0 * step);
            assert!((grads[idx] - fd).abs() <= 1e-4 * fd.abs().max(1e-3), "entry {idx}: {} vs {fd}", grads[idx]);
            assert!((vgrads[idx] - fdv).abs() <= 1e-4 * fdv.abs().max(1e-3), "value entry {idx}: {} vs {fdv}", vgrads[idx]);
        }
    }
}

#[test]
fn repeated_solves_are_bitwise_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let qp = random_qp(&mut rng, 12, 20, 2);
    let a = qp_solve(&qp, 1e-9, 100).unwrap();
    let b = qp_solve(&qp, 1e-9, 100).unwrap();
    assert_eq!(a.x, b.x);
    assert_eq!(a.lam, b.lam);
}

