//! Reference computations that share no code with `sparsereg`, used to check it.

const INV_PHI: f64 = 0.618_033_988_749_894_8;

fn prox_objective(x: f64, z: f64, t: f64, q: f64) -> f64 {
    0.5 * (x - z) * (x - z) + t * x.abs().powf(q)
}

/// Right derivative of `x -> (x - z)^2 / 2 + t |x|^q`.
fn prox_right_derivative(x: f64, z: f64, t: f64, q: f64) -> f64 {
    let pen = if x > 0.0 {
        t * q * x.powf(q - 1.0)
    } else if x < 0.0 {
        -t * q * (-x).powf(q - 1.0)
    } else if q == 1.0 {
        t
    } else {
        0.0
    };
    x - z + pen
}

/// Minimizer of `x -> (x - z)^2 / 2 + t |x|^q` for `t >= 0`, `1 <= q <= 2`.
///
/// A 201-point grid over `[-|z|, |z|]` locates the best cell, golden-section
/// search on the objective narrows it, and bisection on the sign of the
/// right derivative (monotone by convexity) resolves the last digits that
/// objective comparisons cannot see.
pub fn prox_oracle(z: f64, t: f64, q: f64) -> f64 {
    let r = z.abs();
    // zero is optimal when the one-sided derivatives there bracket 0
    let kink = if q == 1.0 { t } else { 0.0 };
    if -z - kink <= 0.0 && -z + kink >= 0.0 {
        return 0.0;
    }
    let n = 200;
    let h = 2.0 * r / n as f64;
    let grid = |k: usize| -r + h * k as f64;
    let best = (0..=n)
        .min_by(|&i, &j| {
            prox_objective(grid(i), z, t, q)
                .partial_cmp(&prox_objective(grid(j), z, t, q))
                .unwrap()
        })
        .unwrap();
    let (mut a, mut b) = (grid(best.saturating_sub(1)), grid((best + 1).min(n)));

    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    for _ in 0..60 {
        if prox_objective(c, z, t, q) < prox_objective(d, z, t, q) {
            b = d;
        } else {
            a = c;
        }
        c = b - INV_PHI * (b - a);
        d = a + INV_PHI * (b - a);
    }

    // widen by the golden bracket's blind spot, then bisect the derivative
    let pad = 1e-6 * (1.0 + r);
    let (mut lo, mut hi) = ((a - pad).max(-r), (b + pad).min(r));
    if prox_right_derivative(lo, z, t, q) >= 0.0 {
        return lo;
    }
    if prox_right_derivative(hi, z, t, q) < 0.0 {
        return hi;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if prox_right_derivative(mid, z, t, q) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// `(sum |c_i|^s)^(1/s)`, scaled by the largest entry to avoid overflow.
pub fn lp_norm(c: &[f64], s: f64) -> f64 {
    let m = c.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if m == 0.0 {
        return 0.0;
    }
    m * c.iter().map(|x| (x.abs() / m).powf(s)).sum::<f64>().powf(1.0 / s)
}

/// `sum w_i |u_i|^q`.
pub fn weighted_penalty(u: &[f64], w: &[f64], q: f64) -> f64 {
    u.iter().zip(w).map(|(x, wi)| wi * x.abs().powf(q)).sum()
}

/// Bregman distance of the weighted `q`-penalty, `q > 1`, at `u` towards `ut`,
/// taken with respect to the gradient `q w_i |u_i|^(q-1) sgn(u_i)`.
pub fn bregman_oracle(ut: &[f64], u: &[f64], w: &[f64], q: f64) -> f64 {
    assert!(q > 1.0, "the penalty is differentiable only for q > 1");
    ut.iter()
        .zip(u)
        .zip(w)
        .map(|((&a, &b), &wi)| {
            let grad = q * wi * b.abs().powf(q - 1.0) * b.signum();
            wi * (a.abs().powf(q) - b.abs().powf(q)) - grad * (a - b)
        })
        .sum()
}

/// The `p = 2` a-priori bounds: the error bound
/// `((delta^2 + alpha beta2 delta + (alpha beta2)^2 / 2) / (alpha beta1))^(1/r)`
/// and the residual bound `sqrt(2 delta^2 + 2 alpha beta2 delta + (alpha beta2)^2)`.
pub fn p2_bounds(beta1: f64, beta2: f64, r: f64, alpha: f64, delta: f64) -> (f64, f64) {
    let ab = alpha * beta2;
    let p_star = 2.0;
    let err = ((delta.powi(2) + ab * delta + ab.powf(p_star) / p_star) / (alpha * beta1)).powf(1.0 / r);
    let residual = (p_star * delta.powi(2) + p_star * ab * delta + ab.powf(p_star)).sqrt();
    (err, residual)
}

/// Least-squares slope and `r^2` of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = points.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, r2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use sparsereg::penalty::{prox_rq, PenaltySpec};
    use sparsereg::CoefficientVector;

    #[test]
    fn prox_oracle_closed_forms() {
        assert!((prox_oracle(2.0, 0.5, 1.0) - 1.5).abs() < 1e-13);
        assert!((prox_oracle(-2.0, 0.5, 1.0) + 1.5).abs() < 1e-13);
        assert_eq!(prox_oracle(0.3, 0.5, 1.0), 0.0);
        assert!((prox_oracle(2.0, 0.5, 2.0) - 1.0).abs() < 1e-13);
        assert_eq!(prox_oracle(0.0, 0.5, 1.5), 0.0);
    }

    #[test]
    fn norms_and_slopes() {
        assert!((lp_norm(&[3.0, 4.0], 2.0) - 5.0).abs() < 1e-14);
        assert_eq!(lp_norm(&[0.0, -2.0], 1.5), 2.0);
        let pts: Vec<(f64, f64)> = (1..6).map(|k| (k as f64, 3.0 * (k as f64).powf(0.7))).collect();
        let (s, r2) = loglog_slope(&pts);
        assert!((s - 0.7).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bregman_of_quadratic() {
        // for q = 2 the distance is sum w (a - b)^2
        let d = bregman_oracle(&[1.0, 2.0], &[0.5, -1.0], &[2.0, 1.0], 2.0);
        assert!((d - (2.0 * 0.25 + 9.0)).abs() < 1e-14);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        #[test]
        fn prox_beats_a_fine_grid(z in -6.0f64..6.0, tau in 1e-3f64..3.0, w in 0.1f64..3.0, q in 1.0f64..=2.0) {
            prop_assume!(z.abs() > 1e-6);
            let spec = PenaltySpec::new(q, vec![w]).unwrap();
            let x = prox_rq(&CoefficientVector::from_element(1, z), tau, &spec)[0];
            let fx = prox_objective(x, z, tau * w, q);
            let r = 2.0 * z.abs();
            for k in 0..=10_000 {
                let y = -r + 2.0 * r * k as f64 / 10_000.0;
                prop_assert!(fx <= prox_objective(y, z, tau * w, q) + 1e-10);
            }
        }

        #[test]
        fn oracle_agrees_with_prox(z in -6.0f64..6.0, t in 1e-4f64..4.0, q in prop::sample::select(vec![1.0, 1.1, 1.5, 1.9, 2.0])) {
            let spec = PenaltySpec::new(q, vec![1.0]).unwrap();
            let x = prox_rq(&CoefficientVector::from_element(1, z), t, &spec)[0];
            prop_assert!((x - prox_oracle(z, t, q)).abs() <= 1e-9);
        }
    }
}
