use hakan::poly::{
    chebyshev_eval_all, hypergeometric_oracle, lucas_eval_all, Basis, BasisKind, HahnBasis,
};
use num_rational::Ratio;
use proptest::prelude::*;

type Q = Ratio<i128>;

/// Exact hypergeometric sum over rationals for rational `a, b` and integer `x`.
fn hahn_exact(a: Q, b: Q, n: i128, r: i128, x: i128) -> Q {
    let poch = |base: Q, k: i128| (0..k).fold(Q::from_integer(1), |acc, i| acc * (base + i));
    let one = Q::from_integer(1);
    (0..=r)
        .map(|k| {
            poch(Q::from_integer(-r), k) * poch(Q::from_integer(r + 1) + a + b, k)
                * poch(Q::from_integer(-x), k)
                / (poch(a + one, k) * poch(Q::from_integer(-n), k) * poch(one, k))
        })
        .fold(Q::from_integer(0), |s, t| s + t)
}

fn to_f64(q: Q) -> f64 {
    *q.numer() as f64 / *q.denom() as f64
}

#[test]
fn recurrence_matches_hypergeometric_grid() {
    let mut worst = 0.0f64;
    for &a in &[0.5, 1.0, 2.0] {
        for &b in &[0.5, 1.0, 2.0] {
            for &n in &[5usize, 7, 10] {
                let h = HahnBasis::new(a, b, n, 5).unwrap();
                for x in 0..=n {
                    let vals = h.eval_all(x as f64);
                    for (r, v) in vals.iter().enumerate() {
                        let o = hypergeometric_oracle(&h, r, x as f64).unwrap();
                        worst = worst.max((v - o).abs());
                    }
                }
            }
        }
    }
    assert!(worst < 1e-10, "worst deviation {worst:e}");
}

#[test]
fn recurrence_matches_exact_rationals() {
    let (a, b) = (Q::from_integer(2), Q::new(1, 2));
    let h = HahnBasis::new(2.0, 0.5, 10, 3).unwrap();
    for x in 0..=10 {
        let exact = to_f64(hahn_exact(a, b, 10, 3, x));
        let got = h.eval_all(x as f64)[3];
        assert!(
            (got - exact).abs() <= 1e-12 * exact.abs().max(1.0),
            "x={x}: {got} vs {exact}"
        );
    }
    // Q_3(0) = 1 for every parameter choice.
    assert_eq!(hahn_exact(a, b, 10, 3, 0), Q::from_integer(1));
}

fn hahn_weight(a: f64, b: f64, n: usize, x: usize) -> f64 {
    // C(a+x, x) · C(b+n-x, n-x), generalized binomials as running products.
    let binom = |top: f64, k: usize| (1..=k).map(|i| (top - k as f64 + i as f64) / i as f64).product::<f64>();
    binom(a + x as f64, x) * binom(b + (n - x) as f64, n - x)
}

fn inner(a: f64, b: f64, n: usize, r: usize, s: usize) -> f64 {
    let h = HahnBasis::new(a, b, n, r.max(s)).unwrap();
    (0..=n)
        .map(|x| {
            let v = h.eval_all(x as f64);
            hahn_weight(a, b, n, x) * v[r] * v[s]
        })
        .sum()
}

#[test]
fn discrete_orthogonality_default_parameters() {
    for r in 0..=3 {
        for s in 0..=3 {
            let ip = inner(1.0, 1.0, 7, r, s);
            if r == s {
                assert!(ip > 0.0);
            } else {
                assert!(ip.abs() < 1e-8, "<Q_{r}, Q_{s}> = {ip:e}");
            }
        }
    }
}

#[test]
fn discrete_orthogonality_other_parameters() {
    for &(a, b, n) in &[(0.5, 2.0, 10usize), (2.0, 0.5, 6), (3.5, 1.5, 9)] {
        for r in 0..=4 {
            for s in 0..r {
                let scale = (inner(a, b, n, r, r) * inner(a, b, n, s, s)).sqrt();
                assert!(inner(a, b, n, r, s).abs() < 1e-10 * scale);
            }
        }
    }
}

fn divided_difference(xs: &[f64], ys: &[f64]) -> f64 {
    let mut d = ys.to_vec();
    for level in 1..xs.len() {
        for i in 0..xs.len() - level {
            d[i] = (d[i + 1] - d[i]) / (xs[i + level] - xs[i]);
        }
    }
    d[0]
}

#[test]
fn polynomial_r_has_degree_r() {
    let h = HahnBasis::new(1.0, 1.0, 7, 4).unwrap();
    for r in 1..=4 {
        let pts: Vec<f64> = (0..r + 2).map(|i| 0.3 + 0.9 * i as f64).collect();
        let vals: Vec<f64> = pts.iter().map(|&x| h.eval_all(x)[r]).collect();
        let top = divided_difference(&pts[..r + 1], &vals[..r + 1]);
        let above = divided_difference(&pts, &vals);
        assert!(top.abs() > 1e-6, "leading coefficient of Q_{r} vanished");
        assert!(above.abs() < 1e-9 * top.abs().max(1.0), "Q_{r} exceeds degree {r}");
    }
}

#[test]
fn alternate_bases() {
    for &theta in &[0.1f64, 0.7, 2.3] {
        let t = chebyshev_eval_all(6, theta.cos());
        for (r, v) in t.iter().enumerate() {
            assert!((v - (r as f64 * theta).cos()).abs() < 1e-12);
        }
    }
    assert_eq!(lucas_eval_all(6, 1.0), vec![2.0, 1.0, 3.0, 4.0, 7.0, 11.0, 18.0]);
    #[cfg(feature = "bspline")]
    {
        let basis = Basis::build(BasisKind::BSpline, 0.0, 0.0, 0, 5).unwrap();
        assert_eq!(basis.width(), 8);
        let mut v = vec![0.0; 8];
        for &x in &[-0.99, -0.4, 0.0, 0.37, 0.98] {
            basis.eval_into(x, &mut v);
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(v.iter().all(|&b| b >= 0.0));
        }
    }
}

#[test]
fn invalid_parameters_rejected() {
    assert!(HahnBasis::new(-1.0, 1.0, 7, 3).is_err());
    assert!(HahnBasis::new(1.0, -2.0, 7, 3).is_err());
    assert!(HahnBasis::new(1.0, 1.0, 0, 0).is_err());
    assert!(HahnBasis::new(1.0, 1.0, 3, 4).is_err());
}

proptest! {
    #[test]
    fn recurrence_agrees_with_oracle(
        a in -0.9f64..5.0,
        b in -0.9f64..5.0,
        n in 1usize..14,
        x_frac in 0.0f64..=1.0,
    ) {
        let degree = n.min(6);
        let h = HahnBasis::new(a, b, n, degree).unwrap();
        let x = x_frac * n as f64;
        let vals = h.eval_all(x);
        for (r, v) in vals.iter().enumerate() {
            let o = hypergeometric_oracle(&h, r, x).unwrap();
            prop_assert!((v - o).abs() <= 1e-9 * o.abs().max(1.0), "r={} {} vs {}", r, v, o);
        }
    }

    #[test]
    fn derivative_matches_central_difference(
        a in -0.5f64..3.0,
        b in -0.5f64..3.0,
        x in 0.2f64..6.8,
    ) {
        let h = HahnBasis::new(a, b, 7, 4).unwrap();
        let (_, d) = h.eval_all_with_deriv(x);
        let step = 1e-6;
        let up = h.eval_all(x + step);
        let down = h.eval_all(x - step);
        for r in 0..=4 {
            let fd = (up[r] - down[r]) / (2.0 * step);
            prop_assert!((d[r] - fd).abs() <= 1e-6 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn every_basis_value_is_one_at_zero(a in -0.9f64..4.0, b in -0.9f64..4.0, n in 1usize..12) {
        let h = HahnBasis::new(a, b, n, n.min(5)).unwrap();
        for v in h.eval_all(0.0) {
            prop_assert!((v - 1.0).abs() < 1e-12);
        }
    }
}
