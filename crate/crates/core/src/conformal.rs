//! Adaptive conformal calibration of the safety Q-function.
//!
//! After every step the realized one-step target `R_t` is compared with the
//! prediction `Q(y_t, u_t)`. Only over-estimation matters for safety, so the
//! score is `max{Q - R, 0}` and the conformal set is `[Q - q_t, +∞)`. A miss
//! (`err_t = 1`) tightens the effective miscoverage `α_t`, which raises the
//! quantile `q_t` of the score history used at the next decision.

/// One-step safety target `(1 - γ) l + γ min{l, V(next)}`.
#[inline]
pub fn safety_target(l: f64, v_next: f64, gamma: f64) -> f64 {
    (1.0 - gamma) * l + gamma * l.min(v_next)
}

/// `max{q_val - target, 0}`.
#[inline]
pub fn score(q_val: f64, target: f64) -> f64 {
    (q_val - target).max(0.0)
}

/// Order-statistic quantile of a nondecreasing multiset.
///
/// Returns `0` for `p <= 0`, `+∞` for `p > n / (n + 1)`, and otherwise the
/// `⌈p (n + 1)⌉`-th smallest element.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if p <= 0.0 {
        return 0.0;
    }
    if p > n as f64 / (n as f64 + 1.0) {
        return f64::INFINITY;
    }
    let rank = (p * (n as f64 + 1.0)).ceil() as usize;
    // rounding in p * (n + 1) can land one past n right at the boundary
    sorted[rank.clamp(1, n) - 1]
}

/// Long-run miscoverage bound `(max{α_1, 1 - α_1} + λ) / (T λ)`.
pub fn coverage_bound(alpha_init: f64, lambda: f64, steps: u64) -> f64 {
    (alpha_init.max(1.0 - alpha_init) + lambda) / (steps as f64 * lambda)
}

/// Certified lower bound on the next safety value,
/// `(Q - q - (1 - γ) l) / γ`; `-∞` when the quantile is infinite.
pub fn lower_bound(q_val: f64, quantile_val: f64, l: f64, gamma: f64) -> f64 {
    if quantile_val == f64::INFINITY {
        f64::NEG_INFINITY
    } else {
        (q_val - quantile_val - (1.0 - gamma) * l) / gamma
    }
}

/// Calibration state carried through an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct AciState {
    alpha_target: f64,
    lambda: f64,
    alpha_t: f64,
    scores: Vec<f64>,
    q_t: f64,
    t: u64,
}

/// What one call to [`AciState::record_and_update`] observed and produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AciUpdate {
    pub score: f64,
    pub err: bool,
    /// The quantile the error was judged against, i.e. the one in force
    /// when the action was chosen.
    pub q_used: f64,
    pub alpha_next: f64,
    pub q_next: f64,
}

impl AciState {
    pub fn new(alpha_target: f64, lambda: f64, alpha_init: f64) -> Self {
        Self { alpha_target, lambda, alpha_t: alpha_init, scores: Vec::new(), q_t: 0.0, t: 0 }
    }

    pub fn alpha_t(&self) -> f64 {
        self.alpha_t
    }

    pub fn quantile(&self) -> f64 {
        self.q_t
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Number of recorded steps.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Scores the step against the current quantile, then advances
    /// `α_{t+1} = α_t + λ (α - err_t)`, inserts the score and recomputes the
    /// quantile at level `1 - α_{t+1}`.
    pub fn record_and_update(&mut self, q_val: f64, target: f64) -> AciUpdate {
        let s = score(q_val, target);
        let q_used = self.q_t;
        let err = s > q_used;
        self.alpha_t += self.lambda * (self.alpha_target - if err { 1.0 } else { 0.0 });
        let at = self.scores.partition_point(|&x| x <= s);
        self.scores.insert(at, s);
        self.q_t = quantile(&self.scores, 1.0 - self.alpha_t);
        self.t += 1;
        AciUpdate { score: s, err, q_used, alpha_next: self.alpha_t, q_next: self.q_t }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn score_cases() {
        assert_eq!(score(5.0, 3.0), 2.0);
        assert_eq!(score(3.0, 5.0), 0.0);
        assert_eq!(score(1.25, 1.25), 0.0);
    }

    #[test]
    fn quantile_cases() {
        let s = [0.1, 0.5, 0.9];
        assert_eq!(quantile(&s, 0.5), 0.5);
        assert_eq!(quantile(&s, 0.76), f64::INFINITY);
        assert_eq!(quantile(&s, 0.75), 0.9);
        assert_eq!(quantile(&s, -0.05), 0.0);
        assert_eq!(quantile(&s, 0.0), 0.0);
        assert_eq!(quantile(&s, 0.01), 0.1);
        assert_eq!(quantile(&[], 0.3), f64::INFINITY);
        assert_eq!(quantile(&[], -0.3), 0.0);
    }

    #[test]
    fn update_arithmetic() {
        let mut a = AciState::new(0.2, 0.05, 0.2);
        // q_1 = 0, so any positive score is a miss
        let u = a.record_and_update(1.0, 0.5);
        assert!(u.err);
        assert!((u.alpha_next - 0.16).abs() < 1e-15);
        let mut b = AciState::new(0.2, 0.05, 0.2);
        let u = b.record_and_update(0.5, 1.0);
        assert!(!u.err);
        assert!((u.alpha_next - 0.21).abs() < 1e-15);
        assert_eq!(u.q_used, 0.0);
    }

    #[test]
    fn infinite_quantile_never_misses() {
        let mut a = AciState::new(0.2, 0.05, 0.2);
        // one score: 1 - α = 0.8 > 1/2, so q becomes +∞
        a.record_and_update(1.0, 1.0);
        assert_eq!(a.quantile(), f64::INFINITY);
        let u = a.record_and_update(1e300, -1e300);
        assert!(!u.err);
    }

    #[test]
    fn saturation_to_zero_quantile() {
        let mut a = AciState::new(0.2, 0.05, 0.2);
        let mut steps = 0;
        while a.alpha_t() <= 1.0 {
            let u = a.record_and_update(0.0, 0.0);
            assert!(!u.err);
            steps += 1;
        }
        // 0.2 + 0.01 k crosses 1 at k = 80 or 81 depending on rounding
        assert!((80..=81).contains(&steps));
        assert_eq!(a.quantile(), 0.0);
    }

    #[test]
    fn lower_bound_cases() {
        assert!((lower_bound(1.0, 0.0, 0.0, 0.98) - 1.0 / 0.98).abs() < 1e-6);
        assert_eq!(lower_bound(1.0, f64::INFINITY, 0.3, 0.98), f64::NEG_INFINITY);
        let (q, l, g) = (0.2, 0.4, 0.98);
        assert!(lower_bound(q + (1.0 - g) * l, q, l, g).abs() < 1e-15);
    }

    #[test]
    fn coverage_bound_cases() {
        assert!((coverage_bound(0.2, 0.05, 100) - 0.17).abs() < 1e-15);
        assert!((coverage_bound(0.5, 0.05, 1000) - 0.011).abs() < 1e-15);
        assert_eq!(coverage_bound(0.3, 0.1, 200) * 2.0, coverage_bound(0.3, 0.1, 100));
        assert!(coverage_bound(0.2, 0.05, 1) >= 1.0);
    }

    /// Sort-and-index oracle: linear scan for the smallest admissible rank.
    fn brute_quantile(unsorted: &[f64], p: f64) -> f64 {
        let mut v = unsorted.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if p <= 0.0 {
            return 0.0;
        }
        if p > n as f64 / (n as f64 + 1.0) {
            return f64::INFINITY;
        }
        let need = p * (n as f64 + 1.0);
        (1..=n).find(|&k| k as f64 >= need).map_or(v[n - 1], |k| v[k - 1])
    }

    proptest! {
        #[test]
        fn quantile_matches_oracle(
            scores in prop::collection::vec(0.0..10.0f64, 0..200),
            p in -0.5..1.5f64,
        ) {
            let mut sorted = scores.clone();
            sorted.sort_by(f64::total_cmp);
            prop_assert_eq!(quantile(&sorted, p), brute_quantile(&scores, p));
        }

        #[test]
        fn quantile_monotone_in_p(
            scores in prop::collection::vec(0.0..10.0f64, 1..100),
            p1 in -0.2..1.2f64, p2 in -0.2..1.2f64,
        ) {
            let mut s = scores;
            s.sort_by(f64::total_cmp);
            let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
            prop_assert!(quantile(&s, lo) <= quantile(&s, hi));
        }

        #[test]
        fn state_invariants_hold(
            pairs in prop::collection::vec((-2.0..2.0f64, -2.0..2.0f64), 1..300),
        ) {
            let mut a = AciState::new(0.2, 0.05, 0.2);
            for (qv, r) in pairs {
                let before = a.alpha_t();
                let n_before = a.scores().len();
                let u = a.record_and_update(qv, r);
                if n_before > 0 && before < 1.0 / (n_before as f64 + 1.0) {
                    prop_assert!(!u.err);
                }
                if u.err { prop_assert!(u.alpha_next < before) } else { prop_assert!(u.alpha_next > before) }
                prop_assert!(a.scores().windows(2).all(|w| w[0] <= w[1]));
                prop_assert!(a.scores().iter().all(|&s| s >= 0.0));
                let q = a.quantile();
                prop_assert!(q == 0.0 || q == f64::INFINITY || a.scores().contains(&q));
                if u.alpha_next > 1.0 { prop_assert_eq!(q, 0.0) }
                if u.alpha_next < 1.0 / (a.scores().len() as f64 + 1.0) { prop_assert_eq!(q, f64::INFINITY) }
            }
        }
    }
}
