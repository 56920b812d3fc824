//! Forward sampling of the masked (fixed-length) and joint insertion/masking
//! interpolants, and their closed-form marginals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::schedule::{Schedule, SchedulePair};
use crate::sequence::{embed_count, matches_aligned, IndexSet, MaskedSeq, Token};
use crate::target::TargetDistribution;

/// A draw `(x_t, s_t)` of the joint interpolant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointState {
    pub xt: MaskedSeq,
    /// Source positions of the tokens of `xt`.
    pub st: IndexSet,
    pub source_len: usize,
}

impl JointState {
    /// Number of source tokens still missing between `xt[i-1]` and `xt[i]`.
    pub fn gap(&self, i: usize) -> usize {
        self.st.gap(i, self.source_len)
    }
}

/// Insertion time `t1[i]` and unmasking time `t2[i] >= t1[i]` of every
/// source position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventTimes {
    pub t1: Vec<f64>,
    pub t2: Vec<f64>,
}

impl EventTimes {
    /// `T1 ~ α̇`, then `T2 | T1` with density `β̇_t / (1 - β_{T1})` on `[T1, 1]`,
    /// both by inverse CDF.
    pub fn sample(n: usize, pair: &SchedulePair, rng: &mut SimRng) -> EventTimes {
        let mut t1 = Vec::with_capacity(n);
        let mut t2 = Vec::with_capacity(n);
        for _ in 0..n {
            // draws in (0, 1] so that nothing is present at t = 0
            let a = pair.insertion.inverse(1.0 - rng.uniform());
            let b0 = pair.unmasking.value(a);
            let b = pair
                .unmasking
                .inverse(b0 + (1.0 - rng.uniform()) * (1.0 - b0))
                .max(a);
            t1.push(a);
            t2.push(b);
        }
        EventTimes { t1, t2 }
    }

    /// The interpolant state at `t`; the first `clamp` positions are always
    /// present and clean.
    pub fn state_at(&self, x1: &MaskedSeq, t: f64, clamp: usize) -> JointState {
        let mut xt = Vec::new();
        let mut st = Vec::new();
        for (i, &tok) in x1.tokens().iter().enumerate() {
            if i < clamp || self.t2[i] <= t {
                xt.push(tok);
                st.push(i);
            } else if self.t1[i] <= t {
                xt.push(Token::MASK);
                st.push(i);
            }
        }
        JointState {
            xt: MaskedSeq::new(xt),
            st: IndexSet::new(st),
            source_len: x1.len(),
        }
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::TimeOutOfRange(t));
    }
    Ok(())
}

/// Draws `(x_t, s_t)` given the clean sequence `x1`, keeping its first
/// `clamp` tokens clean.
pub fn sample_flex(
    x1: &MaskedSeq,
    clamp: usize,
    t: f64,
    pair: &SchedulePair,
    rng: &mut SimRng,
) -> Result<JointState> {
    check_time(t)?;
    if !x1.is_clean() {
        return Err(Error::MaskInClean);
    }
    let times = EventTimes::sample(x1.len(), pair, rng);
    Ok(times.state_at(x1, t, clamp))
}

/// Masks each unclamped token of `x1` independently with probability
/// `1 - α_t`.
pub fn sample_mdm(
    x1: &MaskedSeq,
    clamp: usize,
    t: f64,
    sch: &Schedule,
    rng: &mut SimRng,
) -> Result<MaskedSeq> {
    check_time(t)?;
    if !x1.is_clean() {
        return Err(Error::MaskInClean);
    }
    let alpha = sch.value(t);
    let toks = x1
        .tokens()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            // one draw per position regardless of clamping keeps streams aligned
            let u = rng.uniform();
            if i < clamp || u < alpha {
                v
            } else {
                Token::MASK
            }
        })
        .collect();
    Ok(MaskedSeq::new(toks))
}

/// `p_t(s, x | x1)` for the unclamped joint interpolant.
pub fn joint_marginal(
    x1: &MaskedSeq,
    t: f64,
    pair: &SchedulePair,
    s: &IndexSet,
    x: &MaskedSeq,
) -> Result<f64> {
    let (absent, masked, clean) = pair.token_phase_probs(t)?;
    if s.len() != x.len() || s.indices().last().is_some_and(|&k| k >= x1.len()) {
        return Ok(0.0);
    }
    let mut p = absent.powi((x1.len() - s.len()) as i32);
    for (k, &i) in s.indices().iter().enumerate() {
        let v = x[k];
        p *= if v.is_mask() {
            masked
        } else if v == x1[i] {
            clean
        } else {
            return Ok(0.0);
        };
    }
    Ok(p)
}

/// `p_t(x | x1)`: the joint marginal summed over index sets, which factorizes
/// through the number of embeddings of `x` into `x1`.
pub fn flex_state_given(x1: &MaskedSeq, t: f64, pair: &SchedulePair, x: &MaskedSeq) -> Result<f64> {
    if x.len() > x1.len() {
        return Ok(0.0);
    }
    let count = embed_count(x, x1)?;
    if count == 0 {
        return Ok(0.0);
    }
    let (absent, masked, clean) = pair.token_phase_probs(t)?;
    let m = x.mask_count();
    Ok(absent.powi((x1.len() - x.len()) as i32)
        * masked.powi(m as i32)
        * clean.powi((x.len() - m) as i32)
        * count as f64)
}

/// Exact `p_t(x)` of the joint interpolant under `target`, honouring its
/// clamped prefix.
pub fn flex_state_marginal(
    target: &TargetDistribution,
    t: f64,
    pair: &SchedulePair,
    x: &MaskedSeq,
) -> Result<f64> {
    let c = target.clamp_prefix_len();
    if x.len() < c || !x.starts_with(target.clamp_prefix().tokens()) {
        return Ok(0.0);
    }
    let free = MaskedSeq::new(x.tokens()[c..].to_vec());
    let mut total = 0.0;
    for (a, p) in target.atoms() {
        let af = MaskedSeq::new(a.tokens()[c..].to_vec());
        total += p * flex_state_given(&af, t, pair, &free)?;
    }
    Ok(total)
}

/// Exact `p_t(x)` of the masked interpolant under a fixed-length `target`.
pub fn mdm_state_marginal(
    target: &TargetDistribution,
    t: f64,
    sch: &Schedule,
    x: &MaskedSeq,
) -> Result<f64> {
    check_time(t)?;
    let c = target.clamp_prefix_len();
    if x.len() < c || !x.starts_with(target.clamp_prefix().tokens()) {
        return Ok(0.0);
    }
    let alpha = sch.value(t);
    let m = x.mask_count();
    let factor = alpha.powi((x.len() - c - m) as i32) * (1.0 - alpha).powi(m as i32);
    let mass: f64 = target
        .atoms()
        .iter()
        .filter(|(a, _)| matches_aligned(x, a))
        .map(|(_, p)| p)
        .sum();
    Ok(factor * mass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequence::brute;
    use std::collections::HashMap;

    fn ab() -> MaskedSeq {
        MaskedSeq::from_ids(&[0, 1])
    }

    #[test]
    fn boundary_times() {
        let mut rng = SimRng::new(1);
        let pair = SchedulePair::linear();
        for _ in 0..100 {
            let s = sample_flex(&ab(), 0, 0.0, &pair, &mut rng).unwrap();
            assert!(s.xt.is_empty() && s.st.is_empty());
            let s = sample_flex(&ab(), 0, 1.0, &pair, &mut rng).unwrap();
            assert_eq!(s.xt, ab());
            assert_eq!(s.st, IndexSet::range(2));
            assert_eq!(
                sample_mdm(&ab(), 0, 0.0, &Schedule::Linear, &mut rng).unwrap(),
                MaskedSeq::masks(2)
            );
            assert_eq!(
                sample_mdm(&ab(), 0, 1.0, &Schedule::Linear, &mut rng).unwrap(),
                ab()
            );
        }
    }

    #[test]
    fn joint_marginal_examples() {
        let pair = SchedulePair::linear();
        let p = joint_marginal(&ab(), 0.5, &pair, &IndexSet::empty(), &MaskedSeq::empty()).unwrap();
        assert!((p - 0.25).abs() < 1e-15);
        let p = joint_marginal(
            &ab(),
            0.5,
            &pair,
            &IndexSet::new(vec![0]),
            &MaskedSeq::masks(1),
        )
        .unwrap();
        // (1 - α)(1 - γ) with 1 - γ = ln 2 / 2
        assert!((p - 0.5 * 0.5 * 2f64.ln()).abs() < 1e-12);
        assert!((p - 0.17329).abs() < 1e-5);
        // inconsistent clean token
        let p = joint_marginal(
            &ab(),
            0.5,
            &pair,
            &IndexSet::new(vec![0]),
            &MaskedSeq::from_ids(&[1]),
        )
        .unwrap();
        assert_eq!(p, 0.0);
    }

    fn all_joint_states(x1: &MaskedSeq) -> Vec<(IndexSet, MaskedSeq)> {
        let n = x1.len();
        let mut out = Vec::new();
        for k in 0..=n {
            for s in brute::subsets(n, k) {
                for bits in 0..(1u32 << k) {
                    let x: Vec<Token> = s
                        .iter()
                        .enumerate()
                        .map(|(j, &i)| {
                            if bits >> j & 1 == 1 {
                                Token::MASK
                            } else {
                                x1[i]
                            }
                        })
                        .collect();
                    out.push((IndexSet::new(s.clone()), MaskedSeq::new(x)));
                }
            }
        }
        out
    }

    #[test]
    fn joint_marginal_normalizes() {
        let pairs = [
            SchedulePair::linear(),
            SchedulePair::new(Schedule::polynomial(2.0).unwrap(), Schedule::Linear).unwrap(),
            SchedulePair::new(Schedule::Linear, Schedule::polynomial(3.0).unwrap()).unwrap(),
        ];
        let x1 = MaskedSeq::from_ids(&[0, 1, 1]);
        for pair in &pairs {
            for t in [0.0, 0.1, 0.5, 0.93, 1.0] {
                let total: f64 = all_joint_states(&x1)
                    .iter()
                    .map(|(s, x)| joint_marginal(&x1, t, pair, s, x).unwrap())
                    .sum();
                assert!((total - 1.0).abs() < 1e-6, "t={t} total={total}");
            }
        }
    }

    #[test]
    fn state_marginal_sums_joint_marginal() {
        let pair = SchedulePair::new(Schedule::Linear, Schedule::polynomial(2.0).unwrap()).unwrap();
        let x1 = MaskedSeq::from_ids(&[0, 1, 0]);
        let mut by_x: HashMap<MaskedSeq, f64> = HashMap::new();
        for (s, x) in all_joint_states(&x1) {
            *by_x.entry(x.clone()).or_default() += joint_marginal(&x1, 0.4, &pair, &s, &x).unwrap();
        }
        for (x, p) in by_x {
            assert!(
                (flex_state_given(&x1, 0.4, &pair, &x).unwrap() - p).abs() < 1e-12,
                "{x}"
            );
        }
    }

    /// Multinomial 4σ bound for one cell with probability `p` over `n` draws.
    fn within_4_sigma(count: usize, n: usize, p: f64) -> bool {
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        (count as f64 - n as f64 * p).abs() <= 4.0 * sd + 1e-9
    }

    #[test]
    fn sampled_frequencies_match_joint_marginal() {
        let pair = SchedulePair::linear();
        let n = 100_000;
        for x1 in [ab(), MaskedSeq::from_ids(&[0, 1, 1])] {
            let mut rng = SimRng::new(42);
            let mut counts: HashMap<(MaskedSeq, IndexSet), usize> = HashMap::new();
            for _ in 0..n {
                let s = sample_flex(&x1, 0, 0.5, &pair, &mut rng).unwrap();
                *counts.entry((s.xt, s.st)).or_default() += 1;
            }
            for (s, x) in all_joint_states(&x1) {
                let p = joint_marginal(&x1, 0.5, &pair, &s, &x).unwrap();
                let c = counts.get(&(x.clone(), s.clone())).copied().unwrap_or(0);
                assert!(
                    within_4_sigma(c, n, p),
                    "{x} {s:?}: {c} vs {}",
                    n as f64 * p
                );
            }
        }
    }

    #[test]
    fn phase_frequencies_match_schedule() {
        let pair = SchedulePair::new(
            Schedule::polynomial(2.0).unwrap(),
            Schedule::polynomial(0.5).unwrap(),
        )
        .unwrap();
        let n = 100_000;
        let mut rng = SimRng::new(3);
        let x1 = MaskedSeq::from_ids(&[0]);
        let t = 0.6;
        let (mut absent, mut masked) = (0, 0);
        for _ in 0..n {
            let s = sample_flex(&x1, 0, t, &pair, &mut rng).unwrap();
            match s.xt.get(0) {
                None => absent += 1,
                Some(v) if v.is_mask() => masked += 1,
                _ => {}
            }
        }
        let (pa, pm, _) = pair.token_phase_probs(t).unwrap();
        assert!(within_4_sigma(absent, n, pa));
        assert!(within_4_sigma(masked, n, pm));
    }

    #[test]
    fn mdm_masked_count_is_binomial() {
        let n = 100_000;
        let x1 = MaskedSeq::from_ids(&[0, 1, 0, 1]);
        let mut rng = SimRng::new(5);
        let total: usize = (0..n)
            .map(|_| {
                sample_mdm(&x1, 0, 0.5, &Schedule::Linear, &mut rng)
                    .unwrap()
                    .mask_count()
            })
            .sum();
        let mean = total as f64 / n as f64;
        let sd = (4.0 * 0.25 / n as f64).sqrt();
        assert!((mean - 2.0).abs() <= 3.0 * sd);
    }

    #[test]
    fn clamped_tokens_stay_clean() {
        let pair = SchedulePair::linear();
        let x1 = MaskedSeq::from_ids(&[2, 3, 0, 1]);
        let mut rng = SimRng::new(9);
        for k in 0..200 {
            let t = k as f64 / 199.0;
            let s = sample_flex(&x1, 2, t, &pair, &mut rng).unwrap();
            assert!(s.xt.starts_with(&x1.tokens()[..2]));
            assert_eq!(&s.st.indices()[..2], &[0, 1]);
            let m = sample_mdm(&x1, 2, t, &Schedule::Linear, &mut rng).unwrap();
            assert!(m.starts_with(&x1.tokens()[..2]));
        }
    }

    #[test]
    fn sampled_states_are_consistent_with_source() {
        let pair = SchedulePair::linear();
        let x1 = MaskedSeq::from_ids(&[0, 1, 1, 0, 1]);
        let mut rng = SimRng::new(11);
        for k in 0..500 {
            let s = sample_flex(&x1, 0, (k % 100) as f64 / 100.0, &pair, &mut rng).unwrap();
            assert_eq!(s.xt.len(), s.st.len());
            for (j, &i) in s.st.indices().iter().enumerate() {
                assert!(s.xt[j].is_mask() || s.xt[j] == x1[i]);
            }
            let gaps: usize = (0..=s.xt.len()).map(|i| s.gap(i)).sum();
            assert_eq!(gaps + s.xt.len(), x1.len());
        }
    }
}
