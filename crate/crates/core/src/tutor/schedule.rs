use serde::{Deserialize, Serialize};

/// Linearly decaying probability of consulting the tutor.
///
/// `P(tau) = p_initial - (tau / theta) * (p_initial - p_final)`, held at
/// `p_final` once `tau >= theta`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TutorSchedule {
    pub p_initial: f64,
    pub p_final: f64,
    /// Steps over which the probability decays.
    pub theta: u64,
    /// Agent steps taken so far.
    pub tau: u64,
}

impl TutorSchedule {
    pub fn new(p_initial: f64, p_final: f64, theta: u64) -> Self {
        assert!(theta > 0, "decay horizon must be positive");
        assert!(p_final <= p_initial, "probability must not increase");
        Self { p_initial, p_final, theta, tau: 0 }
    }

    /// Constant probability, e.g. to force the gate open or shut.
    pub fn constant(p: f64) -> Self {
        Self::new(p, p, 1)
    }

    pub fn current_probability(&self) -> f64 {
        if self.tau >= self.theta {
            return self.p_final;
        }
        let decayed = self.p_initial - (self.tau as f64 / self.theta as f64) * (self.p_initial - self.p_final);
        decayed.max(self.p_final)
    }

    pub fn advance(&mut self) {
        self.tau += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn at(tau: u64, theta: u64) -> f64 {
        TutorSchedule { tau, ..TutorSchedule::new(1.0, 0.1, theta) }.current_probability()
    }

    #[test]
    fn reference_points() {
        assert_eq!(at(0, 3000), 1.0);
        assert_eq!(at(1500, 3000), 1.0 - (1500.0 / 3000.0) * (1.0 - 0.1));
        assert!((at(1500, 3000) - 0.55).abs() < 1e-15);
        assert_eq!(at(3000, 3000), 0.1);
        assert_eq!(at(9000, 3000), 0.1);
    }

    #[test]
    fn advance_counts_steps() {
        let mut s = TutorSchedule::new(1.0, 0.1, 10);
        for _ in 0..10 {
            s.advance();
        }
        assert_eq!(s.tau, 10);
        assert_eq!(s.current_probability(), 0.1);
    }

    proptest! {
        #[test]
        fn monotone_and_clamped(theta in 1u64..100_000, a in 0u64..300_000, b in 0u64..300_000) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let p_lo = at(lo, theta);
            let p_hi = at(hi, theta);
            prop_assert!(p_hi <= p_lo);
            prop_assert!((0.1..=1.0).contains(&p_lo));
            if hi >= theta {
                prop_assert_eq!(p_hi, 0.1);
            }
        }
    }
}
