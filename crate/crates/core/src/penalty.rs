//! The weighted ℓq functional `R_q(u) = sum_i w_i |u_i|^q` and the convex
//! analysis around it: subgradients, proximal maps and Bregman distances.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::{all_finite, CoefficientVector, Error, Result};

/// Exponent and weights of `R_q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    q: f64,
    weights: Vec<f64>,
    w_min: f64,
}

impl PenaltySpec {
    /// Builds a penalty with `w_min` set to the smallest weight.
    pub fn new(q: f64, weights: Vec<f64>) -> Result<Self> {
        let w_min = weights.iter().copied().fold(f64::INFINITY, f64::min);
        Self::with_lower_bound(q, weights, w_min)
    }

    pub fn uniform(q: f64, weight: f64, n: usize) -> Result<Self> {
        Self::new(q, vec![weight; n])
    }

    /// Builds a penalty with an explicit lower bound `w_min <= min_i w_i`.
    pub fn with_lower_bound(q: f64, weights: Vec<f64>, w_min: f64) -> Result<Self> {
        if !(1.0..=2.0).contains(&q) {
            return Err(Error::InvalidPenalty(format!("q = {q} outside [1, 2]")));
        }
        if weights.is_empty() {
            return Err(Error::InvalidPenalty("empty weight sequence".into()));
        }
        if !(w_min.is_finite() && w_min > 0.0) {
            return Err(Error::InvalidPenalty(format!("w_min = {w_min} must be positive")));
        }
        if let Some((i, w)) = weights
            .iter()
            .enumerate()
            .find(|(_, &w)| !w.is_finite() || w < w_min)
        {
            return Err(Error::InvalidPenalty(format!(
                "weight w_{i} = {w} below w_min = {w_min}"
            )));
        }
        Ok(Self { q, weights, w_min })
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn w_min(&self) -> f64 {
        self.w_min
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    fn check_len(&self, u: &CoefficientVector) {
        assert_eq!(
            u.len(),
            self.weights.len(),
            "coefficient vector length does not match the penalty weights"
        );
    }
}

/// `R_q(u)`.
///
/// # Panics
/// If `u` and the weights have different lengths.
pub fn eval_rq(u: &CoefficientVector, spec: &PenaltySpec) -> f64 {
    spec.check_len(u);
    u.iter()
        .zip(&spec.weights)
        .map(|(c, w)| w * c.abs().powf(spec.q))
        .sum()
}

/// The canonical subgradient element of `R_q` at `u`.
///
/// For `q > 1` this is the gradient `q w_i |u_i|^{q-1} sgn(u_i)`. For `q = 1`
/// it is `w_i sgn(u_i)` with `0` selected at zero entries; the full set of
/// admissible values is reported by [`subdifferential_intervals`].
pub fn subgradient_rq(u: &CoefficientVector, spec: &PenaltySpec) -> CoefficientVector {
    spec.check_len(u);
    let q = spec.q;
    CoefficientVector::from_iterator(
        u.len(),
        u.iter().zip(&spec.weights).map(|(&c, &w)| {
            if c == 0.0 {
                0.0
            } else if q == 1.0 {
                w * c.signum()
            } else {
                q * w * c.abs().powf(q - 1.0) * c.signum()
            }
        }),
    )
}

/// Coordinatewise subdifferential `[lo, hi]` of `R_q` at `u`.
///
/// Degenerate (a single point) everywhere except at zero entries for `q = 1`,
/// where it is `[-w_i, w_i]`.
pub fn subdifferential_intervals(u: &CoefficientVector, spec: &PenaltySpec) -> Vec<(f64, f64)> {
    let g = subgradient_rq(u, spec);
    u.iter()
        .zip(&spec.weights)
        .zip(g.iter())
        .map(|((&c, &w), &gi)| {
            if spec.q == 1.0 && c == 0.0 {
                (-w, w)
            } else {
                (gi, gi)
            }
        })
        .collect()
}

/// Checks coordinatewise that `xi` lies in the subdifferential of `R_q` at `u`
/// up to `rel_tol`. Returns the first offending index on failure.
pub fn check_subgradient(
    u: &CoefficientVector,
    xi: &CoefficientVector,
    spec: &PenaltySpec,
    rel_tol: f64,
) -> std::result::Result<(), usize> {
    let intervals = subdifferential_intervals(u, spec);
    for (i, ((lo, hi), &x)) in intervals.iter().zip(xi.iter()).enumerate() {
        let tol = rel_tol * (1.0 + lo.abs().max(hi.abs()));
        if !(x >= lo - tol && x <= hi + tol) {
            return Err(i);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BregmanReport {
    /// `D_B(u_tilde, u) = R_q(u_tilde) - R_q(u) - <xi, u_tilde - u>`.
    pub value: f64,
    /// `c_q ||u_tilde - u||^2 / (3 w_min + 2 R_q(u) + R_q(u_tilde))`, zero for `q = 1`.
    pub lower_bound: f64,
    /// `value - lower_bound`.
    pub slack: f64,
}

const SUBGRADIENT_TOL: f64 = 1e-9;

/// Bregman distance of `R_q` between `u_tilde` and `u` with respect to the
/// subgradient element `xi` at `u`, together with the norm lower bound that
/// holds for `q > 1`.
pub fn bregman_distance(
    u_tilde: &CoefficientVector,
    u: &CoefficientVector,
    spec: &PenaltySpec,
    xi: &CoefficientVector,
) -> Result<BregmanReport> {
    spec.check_len(u);
    spec.check_len(u_tilde);
    if xi.len() != u.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            actual: xi.len(),
        });
    }
    if !(all_finite(u) && all_finite(u_tilde) && all_finite(xi)) {
        return Err(Error::NonFinite("bregman_distance input"));
    }
    if let Err(i) = check_subgradient(u, xi, spec, SUBGRADIENT_TOL) {
        return Err(Error::InvalidSubgradient(format!(
            "xi_{i} = {} is not in the subdifferential at u_{i} = {}",
            xi[i], u[i]
        )));
    }

    let q = spec.q;
    // Summed coordinatewise so that nearby pairs do not cancel across coordinates.
    let value: f64 = u_tilde
        .iter()
        .zip(u.iter())
        .zip(xi.iter().zip(&spec.weights))
        .map(|((&a, &b), (&x, &w))| w * (a.abs().powf(q) - b.abs().powf(q)) - x * (a - b))
        .sum();
    let scale = eval_rq(u_tilde, spec) + eval_rq(u, spec);
    if value < -1e-10 * (1.0 + scale) {
        return Err(Error::InvalidSubgradient(format!(
            "subgradient inequality fails: D_B = {value:e}"
        )));
    }

    let lower_bound = if q > 1.0 {
        let c_q = dq_constant(q)? * spec.w_min * spec.w_min;
        let dist_sq = (u_tilde - u).norm_squared();
        c_q * dist_sq / (3.0 * spec.w_min + 2.0 * eval_rq(u, spec) + eval_rq(u_tilde, spec))
    } else {
        0.0
    };
    Ok(BregmanReport {
        value,
        lower_bound,
        slack: value - lower_bound,
    })
}

/// Best constant `d_q` of the two-point inequality
///
/// ```text
/// d_q |a-b|^2 <= (|a|^{2-q} + |a-b|^{2-q}) (|b|^q - |a|^q - q |a|^{q-1} sgn(a) (b-a))
/// ```
///
/// The ratio of the right side to `|a-b|^2` is invariant under `(a,b) -> (ta,tb)`
/// and `(a,b) -> (-a,-b)`, so it suffices to minimize over `b = a + 1`. The
/// search covers `|a| <= 1` directly and `|a| >= 1` through `x = 1/a`, which
/// makes the limit `|a| -> inf` an ordinary grid point (`x = 0`). For `q < 2`
/// that limit is where the infimum sits.
///
/// Values are cached per `q`.
pub fn dq_constant(q: f64) -> Result<f64> {
    if !(q > 1.0 && q <= 2.0) {
        return Err(Error::InvalidArgument(format!(
            "d_q is defined for 1 < q <= 2, got {q}"
        )));
    }
    static CACHE: OnceLock<Mutex<HashMap<u64, f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(&v) = cache.lock().unwrap().get(&q.to_bits()) {
        return Ok(v);
    }
    let inner = minimize_on_grid(|a| dq_ratio_near(a, q), -1.0, 1.0, 4000);
    let outer = minimize_on_grid(|x| dq_ratio_far(x, q), -1.0, 1.0, 4000);
    let d = inner.min(outer);
    cache.lock().unwrap().insert(q.to_bits(), d);
    Ok(d)
}

/// Ratio at `b = a + 1` for `|a| <= 1`.
fn dq_ratio_near(a: f64, q: f64) -> f64 {
    let sgn = if a == 0.0 { 0.0 } else { a.signum() };
    let bracket = (a + 1.0).abs().powf(q) - a.abs().powf(q) - q * a.abs().powf(q - 1.0) * sgn;
    (a.abs().powf(2.0 - q) + 1.0) * bracket
}

/// Ratio at `b = a + 1` written in `x = 1/a` for `|a| >= 1`:
/// `(1 + |x|^{2-q}) ((1+x)^q - 1 - q x) / x^2`, continuous at `x = 0`.
fn dq_ratio_far(x: f64, q: f64) -> f64 {
    (1.0 + x.abs().powf(2.0 - q)) * taylor_remainder_ratio(x, q)
}

/// `((1+x)^q - 1 - q x) / x^2` for `x in [-1, 1]`, evaluated without cancellation.
fn taylor_remainder_ratio(x: f64, q: f64) -> f64 {
    if x.abs() < 0.05 {
        // binomial series sum_{k>=2} C(q,k) x^{k-2}
        let mut coef = q * (q - 1.0) / 2.0;
        let mut sum = coef;
        let mut pow = 1.0;
        for k in 3..12 {
            coef *= (q - (k as f64 - 1.0)) / k as f64;
            pow *= x;
            sum += coef * pow;
        }
        sum
    } else {
        ((q * x.ln_1p()).exp_m1() - q * x) / (x * x)
    }
}

/// Grid minimum over `[lo, hi]` refined by golden-section search on the two
/// neighbouring cells.
fn minimize_on_grid(f: impl Fn(f64) -> f64, lo: f64, hi: f64, cells: usize) -> f64 {
    let h = (hi - lo) / cells as f64;
    let (best_i, best) = (0..=cells)
        .map(|i| (i, f(lo + h * i as f64)))
        .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
    let a = lo + h * best_i.saturating_sub(1) as f64;
    let b = (lo + h * (best_i + 1) as f64).min(hi);
    best.min(golden_section(&f, a, b, 1e-13).1)
}

fn golden_section(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

const PROX_TOL: f64 = 1e-12;
const PROX_MAX_ITER: usize = 100;

/// Proximal map of `t |.|^q`: the minimizer of `x -> (x - z)^2 / 2 + t |x|^q`.
///
/// `q = 1` is soft thresholding (the kink `|z| = t` maps to 0), `q = 2` is a
/// rescaling, and `1 < q < 2` solves `x + t q x^{q-1} = |z|` on `[0, |z|]` by
/// Newton's method with a bisection safeguard.
pub fn scalar_prox(z: f64, t: f64, q: f64) -> f64 {
    if z == 0.0 || t == 0.0 {
        return z;
    }
    if q == 1.0 {
        return z.signum() * (z.abs() - t).max(0.0);
    }
    if q == 2.0 {
        return z / (1.0 + 2.0 * t);
    }
    let a = z.abs();
    let g = |x: f64| x + t * q * x.powf(q - 1.0) - a;
    let dg = |x: f64| 1.0 + t * q * (q - 1.0) * x.powf(q - 2.0);

    // Root lies below both a and the point where the penalty term alone reaches a.
    let mut lo = 0.0;
    let mut hi = a.min((a / (t * q)).powf(1.0 / (q - 1.0)));
    if g(hi) <= 0.0 {
        return z.signum() * hi;
    }
    let mut x = hi;
    let mut dx_old = hi - lo;
    for _ in 0..PROX_MAX_ITER {
        let gx = g(x);
        if gx == 0.0 {
            break;
        }
        if gx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let slope = dg(x);
        let newton = x - gx / slope;
        let dx = if newton > lo && newton < hi && (2.0 * gx).abs() <= (dx_old * slope).abs() {
            x - newton
        } else {
            x - 0.5 * (lo + hi)
        };
        dx_old = dx;
        x -= dx;
        if dx.abs() <= PROX_TOL || hi - lo <= PROX_TOL {
            break;
        }
    }
    z.signum() * x
}

/// Proximal map of `tau R_q`, applied coordinatewise.
pub fn prox_rq(z: &CoefficientVector, tau: f64, spec: &PenaltySpec) -> CoefficientVector {
    spec.check_len(z);
    CoefficientVector::from_iterator(
        z.len(),
        z.iter()
            .zip(&spec.weights)
            .map(|(&zi, &w)| scalar_prox(zi, tau * w, spec.q)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> CoefficientVector {
        CoefficientVector::from_column_slice(x)
    }

    #[test]
    fn spec_validation() {
        assert!(PenaltySpec::uniform(0.5, 1.0, 3).is_err());
        assert!(PenaltySpec::uniform(2.5, 1.0, 3).is_err());
        assert!(PenaltySpec::uniform(1.5, 0.0, 3).is_err());
        assert!(PenaltySpec::new(1.5, vec![]).is_err());
        assert!(PenaltySpec::with_lower_bound(1.5, vec![1.0, 0.5], 0.75).is_err());
        let s = PenaltySpec::new(1.2, vec![2.0, 0.5, 3.0]).unwrap();
        assert_eq!(s.w_min(), 0.5);
    }

    #[test]
    fn eval_examples() {
        let s = PenaltySpec::uniform(1.0, 1.0, 3).unwrap();
        assert_eq!(eval_rq(&v(&[1.0, -2.0, 0.0]), &s), 3.0);
        let s = PenaltySpec::uniform(1.7, 3.0, 2).unwrap();
        assert_eq!(eval_rq(&v(&[0.0, 0.0]), &s), 0.0);
        let s = PenaltySpec::uniform(1.5, 2.0, 2).unwrap();
        // 2 * 2 * 0.5^1.5 = 2 sqrt(1/2)
        assert_relative_eq!(eval_rq(&v(&[0.5, 0.5]), &s), std::f64::consts::SQRT_2, epsilon = 1e-12);
    }

    #[test]
    fn subgradient_examples() {
        let s = PenaltySpec::uniform(2.0, 1.0, 2).unwrap();
        assert_eq!(subgradient_rq(&v(&[3.0, -1.0]), &s), v(&[6.0, -2.0]));

        let s = PenaltySpec::uniform(1.0, 1.0, 2).unwrap();
        let u = v(&[5.0, 0.0]);
        assert_eq!(subgradient_rq(&u, &s), v(&[1.0, 0.0]));
        assert_eq!(subdifferential_intervals(&u, &s), vec![(1.0, 1.0), (-1.0, 1.0)]);

        let s = PenaltySpec::uniform(1.5, 1.0, 1).unwrap();
        let u = v(&[4.0]);
        assert_relative_eq!(subgradient_rq(&u, &s)[0], 3.0, epsilon = 1e-14);
        let h = 1e-6;
        let fd = (eval_rq(&v(&[4.0 + h]), &s) - eval_rq(&v(&[4.0 - h]), &s)) / (2.0 * h);
        assert_relative_eq!(fd, 3.0, max_relative = 1e-8);
    }

    #[test]
    fn bregman_examples() {
        let s = PenaltySpec::uniform(2.0, 1.0, 1).unwrap();
        let r = bregman_distance(&v(&[3.0]), &v(&[1.0]), &s, &v(&[2.0])).unwrap();
        assert_relative_eq!(r.value, 4.0, epsilon = 1e-14);
        // d_2 = 2, c = 2, ||h||^2 = 4, denominator 3 + 2 + 9
        assert_relative_eq!(r.lower_bound, 8.0 / 14.0, max_relative = 1e-3);

        let r = bregman_distance(&v(&[1.0]), &v(&[1.0]), &s, &v(&[2.0])).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.lower_bound, 0.0);

        let s = PenaltySpec::uniform(1.5, 1.0, 1).unwrap();
        let r = bregman_distance(&v(&[2.0]), &v(&[1.0]), &s, &v(&[1.5])).unwrap();
        assert_relative_eq!(r.value, 0.328_427_124_746_190_1, epsilon = 1e-14);
    }

    #[test]
    fn bregman_rejects_invalid_certificates() {
        let s = PenaltySpec::uniform(1.5, 1.0, 1).unwrap();
        assert!(matches!(
            bregman_distance(&v(&[2.0]), &v(&[1.0]), &s, &v(&[1.0])),
            Err(Error::InvalidSubgradient(_))
        ));
        let s = PenaltySpec::uniform(1.0, 1.0, 2).unwrap();
        // 0.3 is admissible at a zero entry, 1.2 is not
        assert!(bregman_distance(&v(&[1.0, -1.0]), &v(&[2.0, 0.0]), &s, &v(&[1.0, 0.3])).is_ok());
        assert!(bregman_distance(&v(&[1.0, -1.0]), &v(&[2.0, 0.0]), &s, &v(&[1.0, 1.2])).is_err());
        assert!(bregman_distance(&v(&[1.0, -1.0]), &v(&[2.0, 0.0]), &s, &v(&[-1.0, 0.0])).is_err());
        let r = bregman_distance(&v(&[1.0, -1.0]), &v(&[2.0, 0.0]), &s, &v(&[1.0, 0.3])).unwrap();
        assert_eq!(r.lower_bound, 0.0);
    }

    #[test]
    fn dq_domain() {
        assert!(dq_constant(1.0).is_err());
        assert!(dq_constant(2.1).is_err());
        assert!(dq_constant(f64::NAN).is_err());
    }

    #[test]
    fn dq_known_values() {
        assert_relative_eq!(dq_constant(2.0).unwrap(), 2.0, epsilon = 1e-12);
        // golden value confirmed by the quadrature oracle in tests/dq_oracle.rs
        assert_relative_eq!(dq_constant(1.5).unwrap(), 0.375, max_relative = 1e-4);
        let d = dq_constant(1.0001).unwrap();
        assert!(d > 0.0 && d.is_finite());
    }

    #[test]
    fn prox_examples() {
        assert_relative_eq!(scalar_prox(2.0, 0.5, 1.0), 1.5);
        assert_relative_eq!(scalar_prox(2.0, 0.5, 2.0), 1.0);
        for q in [1.0, 1.3, 1.5, 2.0] {
            assert_eq!(scalar_prox(0.0, 0.7, q), 0.0);
        }
        // kink of the soft threshold resolves to zero
        assert_eq!(scalar_prox(0.5, 0.5, 1.0), 0.0);
        assert_eq!(scalar_prox(-0.5, 0.5, 1.0), 0.0);
        let s = PenaltySpec::new(1.0, vec![1.0, 2.0]).unwrap();
        assert_eq!(prox_rq(&v(&[2.0, -3.0]), 0.5, &s), v(&[1.5, -2.0]));
    }

    #[test]
    fn prox_stationarity() {
        for &(z, t, q) in &[(3.0, 0.2, 1.5), (-0.01, 5.0, 1.1), (10.0, 1e-3, 1.9), (1e-8, 1.0, 1.5)] {
            let x: f64 = scalar_prox(z, t, q);
            assert!(x * z >= 0.0 && x.abs() <= z.abs());
            let residual = x + t * q * x.abs().powf(q - 1.0) * x.signum() - z;
            assert!(residual.abs() < 1e-11, "z={z} t={t} q={q} residual={residual}");
        }
    }

    fn coeffs(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-5.0f64..5.0, n)
    }

    proptest! {
        #[test]
        fn prox_is_nonexpansive(z1 in -10.0f64..10.0, z2 in -10.0f64..10.0,
                                t in 0.01f64..3.0, q in 1.0f64..=2.0) {
            let d = (scalar_prox(z1, t, q) - scalar_prox(z2, t, q)).abs();
            prop_assert!(d <= (z1 - z2).abs() + 1e-11);
        }

        #[test]
        fn prox_beats_grid(z in -6.0f64..6.0, t in 0.01f64..3.0, q in 1.0f64..=2.0) {
            prop_assume!(z.abs() > 1e-6);
            let obj = |x: f64| 0.5 * (x - z).powi(2) + t * x.abs().powf(q);
            let x = scalar_prox(z, t, q);
            let fx = obj(x);
            let span = 2.0 * z.abs();
            for k in 0..=10_000 {
                let y = -span + 2.0 * span * k as f64 / 10_000.0;
                prop_assert!(fx <= obj(y) + 1e-10);
            }
        }

        #[test]
        fn subgradient_matches_finite_differences(c in coeffs(1..8), q in 1.05f64..=2.0) {
            let u = CoefficientVector::from_vec(c);
            let w: Vec<f64> = (0..u.len()).map(|i| 0.5 + i as f64 * 0.25).collect();
            let s = PenaltySpec::new(q, w).unwrap();
            let g = subgradient_rq(&u, &s);
            let h = 1e-6;
            for i in 0..u.len() {
                if u[i].abs() <= 0.1 { continue; }
                let mut up = u.clone();
                let mut dn = u.clone();
                up[i] += h;
                dn[i] -= h;
                let fd = (eval_rq(&up, &s) - eval_rq(&dn, &s)) / (2.0 * h);
                prop_assert!((fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1.0));
            }
        }

        #[test]
        fn coercivity(c in coeffs(1..16), q in 1.0f64..=2.0, w in 0.1f64..3.0) {
            let u = CoefficientVector::from_vec(c);
            let s = PenaltySpec::uniform(q, w, u.len()).unwrap();
            let lhs = eval_rq(&u, &s);
            let rhs = s.w_min() * u.norm().powf(q);
            prop_assert!(lhs >= rhs * (1.0 - 1e-12));
        }

        #[test]
        fn bregman_is_nonnegative(a in coeffs(4..5), b in coeffs(4..5), q in 1.0f64..=2.0) {
            let u = CoefficientVector::from_vec(a);
            let ut = CoefficientVector::from_vec(b);
            let s = PenaltySpec::uniform(q, 1.5, 4).unwrap();
            let xi = subgradient_rq(&u, &s);
            let r = bregman_distance(&ut, &u, &s, &xi).unwrap();
            prop_assert!(r.value >= -1e-12);
            prop_assert!(r.slack >= -1e-10 * r.value.abs().max(r.lower_bound));
        }
    }
}
