//! Insertion and unmasking schedules.
//!
//! A schedule is a monotone map `[0, 1] -> [0, 1]` with value 0 at `t = 0`
//! and 1 at `t = 1`. The insertion schedule `α` governs when a source token
//! appears (as a mask); the unmasking schedule `β` governs when an inserted
//! mask is revealed. Together they fix the per-token phase probabilities
//!
//! ```text
//! P(absent) = 1 - α_t
//! P(masked) = 1 - γ_t = ∫_0^t α̇_u (1 - β_t) / (1 - β_u) du
//! P(clean)  = α_t + γ_t - 1
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rates are evaluated no later than this time; both hazards diverge at 1.
pub const T_MAX: f64 = 1.0 - 1e-4;

const QUAD_TOL: f64 = 1e-9;
const QUAD_DEPTH: u32 = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Linear,
    Polynomial {
        power: f64,
    },
    /// Piecewise-linear through `(times[k], values[k])`.
    Tabulated {
        times: Vec<f64>,
        values: Vec<f64>,
    },
}

fn check_time(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::TimeOutOfRange(t))
    }
}

impl Schedule {
    pub fn polynomial(power: f64) -> Result<Self> {
        let s = Schedule::Polynomial { power };
        s.validate()?;
        Ok(s)
    }

    pub fn tabulated(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let s = Schedule::Tabulated { times, values };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Schedule::Linear => Ok(()),
            Schedule::Polynomial { power } => {
                if power.is_finite() && *power > 0.0 {
                    Ok(())
                } else {
                    Err(Error::Schedule(format!(
                        "power must be positive, got {power}"
                    )))
                }
            }
            Schedule::Tabulated { times, values } => {
                let bad = |m: &str| Err(Error::Schedule(m.to_string()));
                if times.len() != values.len() || times.len() < 2 {
                    return bad("need at least two (time, value) knots of equal count");
                }
                if times[0] != 0.0 || *times.last().unwrap() != 1.0 {
                    return bad("knot times must span exactly [0, 1]");
                }
                if values[0].abs() > 1e-12 || (values.last().unwrap() - 1.0).abs() > 1e-12 {
                    return bad("values must run from 0 to 1");
                }
                if times.windows(2).any(|w| w[1] <= w[0]) {
                    return bad("knot times must be strictly increasing");
                }
                if values.windows(2).any(|w| w[1] < w[0]) {
                    return bad("values must be nondecreasing");
                }
                Ok(())
            }
        }
    }

    /// `(value, derivative)` at `t`.
    pub fn eval(&self, t: f64) -> Result<(f64, f64)> {
        check_time(t)?;
        Ok((self.value(t), self.derivative(t)))
    }

    pub(crate) fn value(&self, t: f64) -> f64 {
        match self {
            Schedule::Linear => t,
            Schedule::Polynomial { power } => t.powf(*power),
            Schedule::Tabulated { times, values } => {
                let k = segment(times, t);
                let w = (t - times[k]) / (times[k + 1] - times[k]);
                values[k] + w * (values[k + 1] - values[k])
            }
        }
    }

    pub(crate) fn derivative(&self, t: f64) -> f64 {
        match self {
            Schedule::Linear => 1.0,
            Schedule::Polynomial { power } => {
                if t == 0.0 {
                    if *power < 1.0 {
                        f64::INFINITY
                    } else if *power == 1.0 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    power * t.powf(power - 1.0)
                }
            }
            Schedule::Tabulated { times, values } => {
                let k = segment(times, t);
                (values[k + 1] - values[k]) / (times[k + 1] - times[k])
            }
        }
    }

    /// Hazard `ẋ_t / (1 - x_t)`, the rate prefactor of the CTMC. Infinite at
    /// `t = 1`.
    pub fn hazard(&self, t: f64) -> f64 {
        let v = self.value(t);
        if v >= 1.0 {
            return f64::INFINITY;
        }
        self.derivative(t) / (1.0 - v)
    }

    /// Smallest `t` with `value(t) >= u`, for `u` in `[0, 1]`.
    pub fn inverse(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match self {
            Schedule::Linear => u,
            Schedule::Polynomial { power } => u.powf(1.0 / power),
            Schedule::Tabulated { times, values } => {
                for k in 0..times.len() - 1 {
                    if values[k + 1] >= u && values[k + 1] > values[k] {
                        let w = ((u - values[k]) / (values[k + 1] - values[k])).max(0.0);
                        return times[k] + w * (times[k + 1] - times[k]);
                    }
                }
                1.0
            }
        }
    }

    fn is_linear(&self) -> bool {
        matches!(self, Schedule::Linear)
            || matches!(self, Schedule::Polynomial { power } if *power == 1.0)
    }
}

fn segment(times: &[f64], t: f64) -> usize {
    let k = times.partition_point(|&x| x <= t);
    k.saturating_sub(1).min(times.len() - 2)
}

/// Adaptive Simpson quadrature on `[a, b]` with absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64> {
    #[allow(clippy::too_many_arguments)]
    fn step<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> Result<f64> {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if !delta.is_finite() {
            return Err(Error::Quadrature { a, b });
        }
        if delta.abs() <= 15.0 * tol {
            return Ok(left + right + delta / 15.0);
        }
        if depth == 0 {
            // sqrt-type endpoint behaviour stalls the halving tolerance on
            // tiny intervals whose contribution is already negligible
            if delta.abs() <= 1e-12 {
                return Ok(left + right);
            }
            return Err(Error::Quadrature { a, b });
        }
        let half = (0.5 * tol).max(1e-16);
        Ok(step(f, a, m, fa, flm, fm, left, half, depth - 1)?
            + step(f, m, b, fm, frm, fb, right, half, depth - 1)?)
    }
    if b <= a {
        return Ok(0.0);
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, QUAD_DEPTH)
}

/// The insertion schedule `α` and unmasking schedule `β` of the joint
/// interpolant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulePair {
    pub insertion: Schedule,
    pub unmasking: Schedule,
}

impl Default for SchedulePair {
    fn default() -> Self {
        SchedulePair::linear()
    }
}

impl SchedulePair {
    pub fn new(insertion: Schedule, unmasking: Schedule) -> Result<Self> {
        insertion.validate()?;
        unmasking.validate()?;
        Ok(SchedulePair {
            insertion,
            unmasking,
        })
    }

    pub fn linear() -> Self {
        SchedulePair {
            insertion: Schedule::Linear,
            unmasking: Schedule::Linear,
        }
    }

    /// `P(token inserted but still masked) = 1 - γ_t`.
    pub fn mask_prob(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        if t == 0.0 || t == 1.0 {
            return Ok(0.0);
        }
        if matches!(self.insertion, Schedule::Linear) && matches!(self.unmasking, Schedule::Linear)
        {
            return Ok(-(1.0 - t) * (1.0 - t).ln());
        }
        Ok((1.0 - self.unmasking.value(t)) * self.masked_hazard_integral(t)?)
    }

    /// `∫_0^t α̇_u / (1 - β_u) du`.
    fn masked_hazard_integral(&self, t: f64) -> Result<f64> {
        let beta = &self.unmasking;
        match &self.insertion {
            // integrate in α-space so that α̇ singularities at 0 disappear
            Schedule::Polynomial { power } if !self.insertion.is_linear() => {
                let p = *power;
                let f = |a: f64| 1.0 / (1.0 - beta.value(a.powf(1.0 / p)));
                adaptive_simpson(&f, 0.0, self.insertion.value(t), QUAD_TOL)
            }
            alpha => {
                let f = |u: f64| alpha.derivative(u) / (1.0 - beta.value(u));
                match alpha {
                    Schedule::Tabulated { times, .. } => {
                        // integrate knot to knot; α̇ jumps at knots
                        let mut acc = 0.0;
                        let mut lo = 0.0;
                        for &k in times.iter().skip(1) {
                            let hi = k.min(t);
                            if hi > lo {
                                let mid = |u: f64| f(u.clamp(lo + 1e-15, hi - 1e-15));
                                acc += adaptive_simpson(&mid, lo, hi, QUAD_TOL)?;
                            }
                            lo = k;
                            if k >= t {
                                break;
                            }
                        }
                        Ok(acc)
                    }
                    _ => adaptive_simpson(&f, 0.0, t, QUAD_TOL),
                }
            }
        }
    }

    /// `γ_t`, one minus the probability that a source token is present and
    /// masked at time `t`.
    pub fn gamma(&self, t: f64) -> Result<f64> {
        Ok(1.0 - self.mask_prob(t)?)
    }

    /// `(P(absent), P(masked), P(clean))` for one source token.
    pub fn token_phase_probs(&self, t: f64) -> Result<(f64, f64, f64)> {
        let mask = self.mask_prob(t)?;
        let alpha = self.insertion.value(t);
        Ok((1.0 - alpha, mask, (alpha - mask).max(0.0)))
    }

    /// Unmasking hazard `β̇_t / (1 - β_t)`.
    pub fn unmask_hazard(&self, t: f64) -> f64 {
        self.unmasking.hazard(t)
    }

    /// Insertion hazard `α̇_t / (1 - α_t)`.
    pub fn insert_hazard(&self, t: f64) -> f64 {
        self.insertion.hazard(t)
    }
}
