//! Clopper-Pearson intervals with an error-spending schedule.
//!
//! The overall error budget `epsilon` is released gradually as samples
//! accumulate: after `k` samples a total of `eta_k = k * epsilon / (k + r)`
//! has been spent. An interval computed after a batch of `delta` new samples
//! may miss with probability at most `(eta_k - eta_{k-delta}) / m`, so the
//! per-hypothesis misses telescope to at most `epsilon / m`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Result};

/// A closed sub-interval of `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const UNIT: Interval = Interval { lo: 0.0, hi: 1.0 };

    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(invalid(format!(
                "[{lo}, {hi}] is not a sub-interval of [0, 1]"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn is_subset_of(&self, other: &Interval) -> bool {
        other.lo <= self.lo && self.hi <= other.hi
    }

    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then_some(Interval { lo, hi })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpendingConfig {
    epsilon: f64,
    r: f64,
    m: usize,
}

impl SpendingConfig {
    pub fn new(epsilon: f64, r: f64, m: usize) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(invalid(format!(
                "epsilon must lie in (0, 1), got {epsilon}"
            )));
        }
        if !(r > 0.0 && r.is_finite()) {
            return Err(invalid(format!(
                "spending rate r must be positive, got {r}"
            )));
        }
        if m == 0 {
            return Err(invalid("hypothesis count must be at least 1"));
        }
        Ok(Self { epsilon, r, m })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Error budget released for the batch `(k - delta, k]`, shared by both
    /// tails and all `m` hypotheses.
    pub fn batch_tail_probability(&self, k: u64, delta: u64) -> Result<f64> {
        if delta == 0 || delta > k {
            return Err(invalid(format!("batch size {delta} must lie in 1..={k}")));
        }
        // eta_k - eta_{k-delta} = epsilon * r * delta / ((k + r)(k - delta + r))
        let (k, delta) = (k as f64, delta as f64);
        let spent = self.epsilon * self.r * delta / ((k + self.r) * (k - delta + self.r));
        let rho = spent / (2.0 * self.m as f64);
        if rho <= 0.0 || !rho.is_finite() {
            return Err(invalid(format!("tail probability underflowed at k = {k}")));
        }
        Ok(rho)
    }
}

/// Cumulative error spent after `k` samples: `k * epsilon / (k + r)`.
pub fn spending_eta(k: u64, cfg: &SpendingConfig) -> f64 {
    let k = k as f64;
    k * cfg.epsilon / (k + cfg.r)
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Modified Lentz evaluation of the incomplete beta continued fraction.
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    // Iterations grow like sqrt(max(a, b)).
    let max_iter = 200 + 10 * (a.max(b).sqrt() as usize);
    for m in 1..=max_iter {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn regularized_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * (-x).ln_1p() - ln_beta(a, b);
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Quantile of the Beta(`a`, `b`) distribution: the `z` with
/// `I_z(a, b) = prob`.
pub fn beta_quantile(a: f64, b: f64, prob: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(invalid(format!(
            "beta shape parameters must be positive, got ({a}, {b})"
        )));
    }
    if !(0.0..=1.0).contains(&prob) {
        return Err(invalid(format!(
            "probability must lie in [0, 1], got {prob}"
        )));
    }
    Ok(if prob > 0.5 {
        1.0 - lower_quantile(b, a, 1.0 - prob)
    } else {
        lower_quantile(a, b, prob)
    })
}

/// Initial guess from the Cornish-Fisher style approximation for
/// `a, b >= 1`, or the power-law tails otherwise.
fn initial_guess(a: f64, b: f64, p: f64) -> f64 {
    if a >= 1.0 && b >= 1.0 {
        let t = (-2.0 * p.ln()).sqrt();
        let x = -((2.30753 + t * 0.27061) / (1.0 + t * (0.99229 + t * 0.04481)) - t);
        let al = (x * x - 3.0) / 6.0;
        let h = 2.0 / (1.0 / (2.0 * a - 1.0) + 1.0 / (2.0 * b - 1.0));
        let w = x * (al + h).sqrt() / h
            - (1.0 / (2.0 * b - 1.0) - 1.0 / (2.0 * a - 1.0)) * (al + 5.0 / 6.0 - 2.0 / (3.0 * h));
        a / (a + b * (2.0 * w).exp())
    } else {
        let lna = (a / (a + b)).ln();
        let lnb = (b / (a + b)).ln();
        let t = (a * lna).exp() / a;
        let u = (b * lnb).exp() / b;
        let w = t + u;
        if p < t / w {
            (a * w * p).powf(1.0 / a)
        } else {
            1.0 - (b * w * (1.0 - p)).powf(1.0 / b)
        }
    }
}

/// Solves `I_z(a, b) = p` for `p <= 1/2` by Halley steps inside a bisection
/// bracket. Working in the lower tail keeps `p` representable to full
/// relative precision even when it is tiny.
fn lower_quantile(a: f64, b: f64, p: f64) -> f64 {
    if p <= 0.0 {
        return 0.0;
    }
    let ln_b = ln_beta(a, b);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut x = initial_guess(a, b, p);
    if !(x > 0.0 && x < 1.0) {
        x = 0.5;
    }
    for _ in 0..400 {
        let err = regularized_beta(a, b, x) - p;
        if err == 0.0 {
            return x;
        }
        if err < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let density = ((a - 1.0) * x.ln() + (b - 1.0) * (-x).ln_1p() - ln_b).exp();
        let mut next = f64::NAN;
        if density > 0.0 && density.is_finite() {
            let u = err / density;
            let halley = 1.0 - 0.5 * (u * ((a - 1.0) / x - (b - 1.0) / (1.0 - x))).min(1.0);
            next = x - u / halley;
        }
        if !(next > lo && next < hi) {
            next = if lo > 0.0 && hi / lo > 4.0 {
                (lo * hi).sqrt()
            } else {
                0.5 * (lo + hi)
            };
        }
        if (next - x).abs() <= 1e-15 * x || hi - lo <= 1e-15 * hi {
            return next;
        }
        x = next;
    }
    x
}

/// Clopper-Pearson interval for `successes` out of `trials`, with each tail
/// missing with probability at most `rho`.
///
/// Lower limit `q_{S, k-S+1}(rho)`, upper limit `q_{S+1, k-S}(1 - rho)`,
/// with the closed forms `[0, 1 - rho^(1/k)]` at `S = 0` and
/// `[rho^(1/k), 1]` at `S = k`.
pub fn clopper_pearson(successes: u64, trials: u64, rho: f64) -> Result<Interval> {
    if trials == 0 {
        return Err(invalid("Clopper-Pearson interval needs at least one trial"));
    }
    if successes > trials {
        return Err(invalid(format!(
            "{successes} successes exceed {trials} trials"
        )));
    }
    if !(rho > 0.0 && rho < 0.5) {
        return Err(invalid(format!(
            "tail probability must lie in (0, 0.5), got {rho}"
        )));
    }
    let (s, k) = (successes as f64, trials as f64);
    let tail_root = rho.ln() / k;
    let interval = if successes == 0 {
        Interval {
            lo: 0.0,
            hi: -tail_root.exp_m1(),
        }
    } else if successes == trials {
        Interval {
            lo: tail_root.exp(),
            hi: 1.0,
        }
    } else {
        Interval {
            lo: lower_quantile(s, k - s + 1.0, rho),
            hi: 1.0 - lower_quantile(k - s, s + 1.0, rho),
        }
    };
    Ok(interval)
}

/// The interval after `k` total samples of which `delta` were drawn in the
/// latest batch.
pub fn interval_fn(successes: u64, k: u64, delta: u64, cfg: &SpendingConfig) -> Result<Interval> {
    let rho = cfg.batch_tail_probability(k, delta)?;
    clopper_pearson(successes, k, rho)
}

/// Hoeffding bound on the width of a Clopper-Pearson interval.
pub fn hoeffding_width_bound(trials: u64, rho: f64) -> f64 {
    2.0 * (-rho.ln() / (2.0 * trials as f64)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx_eq::assert_close;
    use proptest::prelude::*;

    mod approx_eq {
        macro_rules! assert_close {
            ($a:expr, $b:expr, $tol:expr) => {{
                let (a, b): (f64, f64) = ($a, $b);
                assert!((a - b).abs() <= $tol, "{a} vs {b} (tol {})", $tol);
            }};
        }
        pub(crate) use assert_close;
    }

    /// Composite Simpson integration of the Beta density, inverted by
    /// bisection. Only valid for a, b >= 1 (bounded density).
    fn beta_cdf_by_quadrature(a: f64, b: f64, z: f64) -> f64 {
        let norm = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b);
        let f = |t: f64| {
            if t <= 0.0 || t >= 1.0 {
                if (t <= 0.0 && a == 1.0) || (t >= 1.0 && b == 1.0) {
                    norm.exp()
                } else {
                    0.0
                }
            } else {
                ((a - 1.0) * t.ln() + (b - 1.0) * (1.0 - t).ln() + norm).exp()
            }
        };
        let n = 20_000;
        let h = z / n as f64;
        let mut sum = f(0.0) + f(z);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            sum += w * f(i as f64 * h);
        }
        sum * h / 3.0
    }

    fn bisect(mut lo: f64, mut hi: f64, increasing: impl Fn(f64) -> f64, target: f64) -> f64 {
        while hi - lo > 1e-12 {
            let mid = 0.5 * (lo + hi);
            if increasing(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn beta_quantile_examples() {
        assert_close!(beta_quantile(1.0, 1.0, 0.3).unwrap(), 0.3, 1e-12);
        assert_close!(beta_quantile(2.0, 2.0, 0.5).unwrap(), 0.5, 1e-12);
        // Frozen from the quadrature oracle below.
        assert_close!(
            beta_quantile(3.0, 5.0, 0.9).unwrap(),
            0.596_179_727_848,
            1e-11
        );
    }

    #[test]
    fn beta_quantile_matches_quadrature_oracle() {
        for &(a, b, p) in &[
            (3.0, 5.0, 0.9),
            (2.0, 7.0, 0.05),
            (4.0, 1.0, 0.3),
            (2.5, 3.5, 0.7),
        ] {
            let oracle = bisect(0.0, 1.0, |z| beta_cdf_by_quadrature(a, b, z), p);
            assert_close!(beta_quantile(a, b, p).unwrap(), oracle, 1e-10);
        }
    }

    #[test]
    fn beta_quantile_edges_and_errors() {
        assert_eq!(beta_quantile(2.0, 3.0, 0.0).unwrap(), 0.0);
        assert_eq!(beta_quantile(2.0, 3.0, 1.0).unwrap(), 1.0);
        assert!(beta_quantile(0.0, 1.0, 0.5).is_err());
        assert!(beta_quantile(1.0, -2.0, 0.5).is_err());
        assert!(beta_quantile(1.0, 1.0, 1.5).is_err());
    }

    #[test]
    fn regularized_beta_agrees_with_statrs() {
        for &(a, b) in &[
            (0.5, 0.5),
            (1.0, 3.0),
            (10.0, 990.0),
            (500.0, 501.0),
            (3.0, 5.0),
        ] {
            for i in 1..20 {
                let x = i as f64 / 20.0;
                let ours = regularized_beta(a, b, x);
                let theirs = statrs::function::beta::beta_reg(a, b, x);
                assert_close!(ours, theirs, 1e-12);
            }
        }
    }

    /// P(N <= s) for N ~ Binomial(k, p), summed in log space.
    fn binom_cdf(s: u64, k: u64, p: f64) -> f64 {
        let lnc = |j: u64| {
            ln_gamma(k as f64 + 1.0) - ln_gamma(j as f64 + 1.0) - ln_gamma((k - j) as f64 + 1.0)
        };
        (0..=s)
            .map(|j| (lnc(j) + j as f64 * p.ln() + (k - j) as f64 * (-p).ln_1p()).exp())
            .sum()
    }

    #[test]
    fn clopper_pearson_examples() {
        let i = clopper_pearson(0, 10, 0.025).unwrap();
        assert_eq!(i.lo, 0.0);
        assert_close!(i.hi, 1.0 - 0.025f64.powf(0.1), 1e-15);
        assert_close!(i.hi, 0.308_497, 1e-6);

        let i = clopper_pearson(10, 10, 0.025).unwrap();
        assert_close!(i.lo, 0.025f64.powf(0.1), 1e-15);
        assert_eq!(i.hi, 1.0);

        let i = clopper_pearson(5, 10, 0.025).unwrap();
        let lo = bisect(0.0, 1.0, |p| 1.0 - binom_cdf(4, 10, p), 0.025);
        let hi = bisect(0.0, 1.0, |p| -binom_cdf(5, 10, p), -0.025);
        assert_close!(i.lo, lo, 1e-9);
        assert_close!(i.hi, hi, 1e-9);
        assert_close!(i.lo, 0.187_086, 1e-6);
        assert_close!(i.hi, 0.812_914, 1e-6);
    }

    #[test]
    fn clopper_pearson_errors() {
        assert!(clopper_pearson(3, 2, 0.01).is_err());
        assert!(clopper_pearson(0, 0, 0.01).is_err());
        assert!(clopper_pearson(1, 2, 0.0).is_err());
    }

    #[test]
    fn spending_examples() {
        let cfg = SpendingConfig::new(0.01, 10_000.0, 1).unwrap();
        assert_eq!(spending_eta(0, &cfg), 0.0);
        assert_close!(spending_eta(10_000, &cfg), 0.005, 1e-18);
        assert_close!(spending_eta(10, &cfg), 10.0 / 10_010.0 * 0.01, 1e-18);
        assert_close!(spending_eta(10, &cfg), 9.99001e-6, 1e-11);
        assert!(spending_eta(u64::MAX / 2, &cfg) < 0.01);
    }

    #[test]
    fn interval_fn_examples() {
        let cfg = SpendingConfig::new(0.01, 10_000.0, 9335).unwrap();
        let rho = (spending_eta(10, &cfg) - spending_eta(0, &cfg)) / (2.0 * 9335.0);
        assert_close!(rho / 5.3508e-10, 1.0, 1e-4);
        assert_close!(cfg.batch_tail_probability(10, 10).unwrap(), rho, 1e-22);

        let i = interval_fn(0, 10, 10, &cfg).unwrap();
        assert_close!(i.hi, 1.0 - rho.powf(0.1), 1e-14);
        let j = interval_fn(10, 10, 10, &cfg).unwrap();
        assert_close!(j.lo, rho.powf(0.1), 1e-14);

        assert!(interval_fn(1, 10, 11, &cfg).is_err());
        assert!(interval_fn(1, 10, 0, &cfg).is_err());
    }

    #[test]
    fn interval_fn_width_bound_with_small_r() {
        let cfg = SpendingConfig::new(0.05, 1e-9, 20).unwrap();
        for k in [5u64, 50, 500] {
            let rho = cfg.batch_tail_probability(k, k).unwrap();
            assert_close!(rho, 0.05 / 40.0, 1e-9);
            for s in 0..=k {
                let i = interval_fn(s, k, k, &cfg).unwrap();
                assert!(i.width() <= hoeffding_width_bound(k, rho));
            }
        }
    }

    #[test]
    fn widths_shrink_uniformly() {
        let cfg = SpendingConfig::new(0.01, 10_000.0, 100).unwrap();
        let mut previous = f64::INFINITY;
        for k in [100u64, 1_000, 10_000, 100_000] {
            let delta = k / 5;
            // The widest interval sits at S = k/2; scan a neighbourhood and the tails.
            let widest = (0..=k)
                .step_by((k / 200).max(1) as usize)
                .map(|s| interval_fn(s, k, delta, &cfg).unwrap().width())
                .fold(0.0, f64::max);
            assert!(widest < previous, "k = {k}: {widest} !< {previous}");
            previous = widest;
        }
    }

    #[test]
    fn telescoping_budget() {
        let cfg = SpendingConfig::new(0.01, 10_000.0, 1).unwrap();
        let mut k = 0u64;
        let mut delta = 10u64;
        let mut total = 0.0;
        for _ in 0..80 {
            delta = (1.25 * delta as f64).floor() as u64;
            let prev = k;
            k += delta;
            total += spending_eta(k, &cfg) - spending_eta(prev, &cfg);
        }
        assert!(total <= 0.01);
        assert_close!(total, spending_eta(k, &cfg), 1e-15);
    }

    #[test]
    fn single_interval_coverage() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (k, rho, trials) = (40u64, 0.05, 4_000);
        for p in [0.03, 0.3, 0.5, 0.92] {
            let misses = (0..trials)
                .filter(|_| {
                    let s = (0..k).filter(|_| rng.random::<f64>() < p).count() as u64;
                    !clopper_pearson(s, k, rho).unwrap().contains(p)
                })
                .count() as f64;
            let bound = 2.0 * rho;
            let sigma = (bound * (1.0 - bound) / trials as f64).sqrt();
            assert!(
                misses / trials as f64 <= bound + 3.0 * sigma,
                "p = {p}: {misses}"
            );
        }
    }

    proptest! {
        #[test]
        fn mirror_symmetry(k in 1u64..400, frac in 0.0f64..=1.0, rho_exp in 1.0f64..12.0) {
            let s = ((k as f64) * frac).round() as u64;
            let rho = 10f64.powf(-rho_exp);
            let a = clopper_pearson(s, k, rho).unwrap();
            let b = clopper_pearson(k - s, k, rho).unwrap();
            prop_assert!((a.lo - (1.0 - b.hi)).abs() < 1e-12);
            prop_assert!((a.hi - (1.0 - b.lo)).abs() < 1e-12);
        }

        #[test]
        fn width_within_hoeffding_bound(k in 1u64..2000, frac in 0.0f64..=1.0, rho_exp in 1.0f64..15.0) {
            let s = ((k as f64) * frac).round() as u64;
            let rho = 10f64.powf(-rho_exp);
            let i = clopper_pearson(s, k, rho).unwrap();
            prop_assert!(i.lo <= i.hi && i.lo >= 0.0 && i.hi <= 1.0);
            prop_assert!(i.width() <= hoeffding_width_bound(k, rho));
        }

        #[test]
        fn quantile_inverts_cdf(a in 0.2f64..200.0, b in 0.2f64..200.0, p in 0.0f64..=1.0) {
            let z = beta_quantile(a, b, p).unwrap();
            prop_assert!((0.0..=1.0).contains(&z));
            let back = regularized_beta(a, b, z);
            // compare in probability space, scaled by the local density
            prop_assert!((back - p).abs() < 1e-9, "a={a} b={b} p={p} z={z} back={back}");
        }

        #[test]
        fn quantile_monotone(a in 0.5f64..50.0, b in 0.5f64..50.0, p in 0.0f64..0.99, dp in 0.0f64..0.01) {
            prop_assert!(beta_quantile(a, b, p).unwrap() <= beta_quantile(a, b, p + dp).unwrap() + 1e-15);
        }
    }
}
