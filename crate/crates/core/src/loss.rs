//! Monte Carlo estimators of the variational losses, the scalar Bregman
//! divergence, a perturbed oracle, and the KL-bound check.
//!
//! The variable-length loss integrates, over `t ∈ [0, T_MAX]`,
//!
//! ```text
//! β̇/(1-β) · Σ_{i masked} -ln f(x_t, t)[i][x1[s_t[i]]]
//!   + α̇/(1-α) · Σ_{gaps i} φ(gap_i, g(x_t, t)[i])
//! ```
//!
//! with `φ(a, g) = g - a ln g`. Gaps inside a clamped prefix are excluded.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::ctmc::{sample_many, AdaptiveConfig, Strategy};
use crate::error::{Error, Result};
use crate::interpolant::{sample_flex, sample_mdm};
use crate::oracle::{ModelKind, Prediction, RateSource};
use crate::rng::SimRng;
use crate::schedule::{adaptive_simpson, Schedule, SchedulePair, T_MAX};
use crate::sequence::{MaskedSeq, Token};
use crate::target::TargetDistribution;

/// Lower bound applied to predicted insertion counts before `φ`.
pub const G_FLOOR: f64 = 1e-6;

/// `φ(a, g) = g - a ln g`.
pub fn bregman_phi(a: f64, g: f64) -> Result<f64> {
    if !(g > 0.0) || !g.is_finite() {
        return Err(Error::Config(format!("φ needs g > 0, got {g}")));
    }
    if !(a >= 0.0) {
        return Err(Error::Config(format!("φ needs a >= 0, got {a}")));
    }
    Ok(if a == 0.0 { g } else { g - a * g.ln() })
}

pub(crate) fn phi_floored(a: f64, g: f64) -> f64 {
    let g = g.max(G_FLOOR);
    if a == 0.0 {
        g
    } else {
        g - a * g.ln()
    }
}

/// How loss estimators and the learner draw `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeSampling {
    Uniform,
    /// One uniform shift of an evenly spaced lattice.
    #[default]
    LowDiscrepancy,
}

/// `n` times in `[0, T_MAX)`.
pub fn draw_times(n: usize, mode: TimeSampling, rng: &mut SimRng) -> Vec<f64> {
    match mode {
        TimeSampling::Uniform => (0..n).map(|_| T_MAX * rng.uniform()).collect(),
        TimeSampling::LowDiscrepancy => {
            let u = rng.uniform();
            (0..n)
                .map(|j| T_MAX * ((u + j as f64 / n as f64) % 1.0))
                .collect()
        }
    }
}

/// Mean of the loss integrand split into its two terms, with the standard
/// error of the total. `tail` estimates the integral over `[T_MAX, 1)` by
/// its left-endpoint value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossEstimate {
    pub total: f64,
    pub unmask: f64,
    pub insert: f64,
    pub std_err: f64,
    pub tail: f64,
    pub n: usize,
}

impl LossEstimate {
    fn from_samples(terms: &[(f64, f64)], tail: f64) -> LossEstimate {
        let n = terms.len();
        let unmask = terms.iter().map(|p| p.0).sum::<f64>() / n as f64;
        let insert = terms.iter().map(|p| p.1).sum::<f64>() / n as f64;
        let total = unmask + insert;
        let var = if n > 1 {
            terms
                .iter()
                .map(|p| (p.0 + p.1 - total).powi(2))
                .sum::<f64>()
                / (n - 1) as f64
        } else {
            0.0
        };
        LossEstimate {
            total,
            unmask,
            insert,
            std_err: (var / n as f64).sqrt(),
            tail,
            n,
        }
    }
}

fn draw_atom<'a>(target: &'a TargetDistribution, rng: &mut SimRng) -> &'a MaskedSeq {
    let idx: Vec<(usize, f64)> = target
        .atoms()
        .iter()
        .enumerate()
        .map(|(i, (_, p))| (i, *p))
        .collect();
    let k = rng.categorical(&idx).expect("normalized target");
    &target.atoms()[k].0
}

fn neg_log_prob(row: &[(Token, f64)], v: Token) -> f64 {
    let p = row.iter().find(|(u, _)| *u == v).map_or(0.0, |(_, p)| *p);
    -p.ln()
}

/// Unweighted integrand pieces `(Σ -ln f, Σ φ)` at one interpolant draw.
fn flex_pieces(
    pred: &Prediction,
    xt: &MaskedSeq,
    x1: &MaskedSeq,
    source_pos: &[usize],
    gaps: &[usize],
    clamp: usize,
) -> (f64, f64) {
    let mut ce = 0.0;
    for i in xt.masked_positions() {
        ce += neg_log_prob(&pred.unmask[i], x1[source_pos[i]]);
    }
    let mut ins = 0.0;
    for (i, &a) in gaps.iter().enumerate().skip(clamp) {
        ins += phi_floored(a as f64, pred.insert[i]);
    }
    (ce, ins)
}

/// Weighted `(unmask, insert)` terms of one draw at `t`, scaled by `T_MAX` so
/// that the sample mean estimates the integral.
fn flex_draw<S: RateSource + ?Sized>(
    source: &S,
    target: &TargetDistribution,
    pair: &SchedulePair,
    t: f64,
    rng: &mut SimRng,
) -> Result<(f64, f64)> {
    let x1 = draw_atom(target, rng);
    let c = target.clamp_prefix_len();
    let js = sample_flex(x1, c, t, pair, rng)?;
    let pred = source.predict(t, &js.xt)?;
    let gaps: Vec<usize> = (0..=js.xt.len()).map(|i| js.gap(i)).collect();
    let (ce, ins) = flex_pieces(&pred, &js.xt, x1, js.st.indices(), &gaps, c);
    Ok((
        T_MAX * pair.unmask_hazard(t) * ce,
        T_MAX * pair.insert_hazard(t) * ins,
    ))
}

/// Per-draw weighted terms of the variable-length loss. Draws depend only on
/// `rng`, never on `source`, so two sources see identical draws.
pub fn flex_loss_samples<S: RateSource + ?Sized>(
    source: &S,
    target: &TargetDistribution,
    pair: &SchedulePair,
    n_mc: usize,
    mode: TimeSampling,
    rng: &mut SimRng,
) -> Result<Vec<(f64, f64)>> {
    let times = draw_times(n_mc.max(1), mode, rng);
    times
        .into_iter()
        .map(|t| flex_draw(source, target, pair, t, rng))
        .collect()
}

fn tail_estimate<F: FnMut(&mut SimRng) -> Result<(f64, f64)>>(
    n: usize,
    rng: &mut SimRng,
    mut f: F,
) -> Result<f64> {
    let n = (n / 16).max(1);
    let mut acc = 0.0;
    for _ in 0..n {
        let (u, i) = f(rng)?;
        acc += u + i;
    }
    Ok(acc / n as f64 / T_MAX * (1.0 - T_MAX))
}

/// Monte Carlo estimate of the variable-length loss of `source`.
pub fn flex_loss<S: RateSource + ?Sized>(
    source: &S,
    target: &TargetDistribution,
    pair: &SchedulePair,
    n_mc: usize,
    mode: TimeSampling,
    rng: &mut SimRng,
) -> Result<LossEstimate> {
    let terms = flex_loss_samples(source, target, pair, n_mc, mode, rng)?;
    let tail = tail_estimate(n_mc, rng, |r| flex_draw(source, target, pair, T_MAX, r))?;
    Ok(LossEstimate::from_samples(&terms, tail))
}

/// Weight `α̇/(1-α)` of the fixed-length loss.
pub fn mdm_weight(sch: &Schedule, t: f64) -> f64 {
    sch.hazard(t)
}

fn mdm_draw<S: RateSource + ?Sized>(
    source: &S,
    target: &TargetDistribution,
    sch: &Schedule,
    t: f64,
    rng: &mut SimRng,
) -> Result<(f64, f64)> {
    let x1 = draw_atom(target, rng);
    let xt = sample_mdm(x1, target.clamp_prefix_len(), t, sch, rng)?;
    let pred = source.predict(t, &xt)?;
    let ce: f64 = xt
        .masked_positions()
        .map(|i| neg_log_prob(&pred.unmask[i], x1[i]))
        .sum();
    Ok((T_MAX * mdm_weight(sch, t) * ce, 0.0))
}

/// Per-draw terms of the fixed-length loss; the insertion term is zero.
pub fn mdm_loss_samples<S: RateSource + ?Sized>(
    source: &S,
    target: &TargetDistribution,
    sch: &Schedule,
    n_mc: usize,
    mode: TimeSampling,
    rng: &mut SimRng,
) -> Result<Vec<(f64, f64)>> {
    let times = draw_times(n_mc.max(1), mode, rng);
    times
        .into_iter()
        .map(|t| mdm_draw(source, target, sch, t, rng))
        .collect()
}

/// Monte Carlo estimate of the fixed-length loss over an equal-length
/// (padded) target.
pub fn mdm_loss<S: RateSource + ?Sized>(
    source: &S,
    target: &TargetDistribution,
    sch: &Schedule,
    n_mc: usize,
    mode: TimeSampling,
    rng: &mut SimRng,
) -> Result<LossEstimate> {
    let terms = mdm_loss_samples(source, target, sch, n_mc, mode, rng)?;
    let tail = tail_estimate(n_mc, rng, |r| mdm_draw(source, target, sch, T_MAX, r))?;
    Ok(LossEstimate::from_samples(&terms, tail))
}

/// The variable-length loss integrand at `t`, summed exactly over every
/// atom and every joint interpolant state.
pub fn flex_integrand<S: RateSource + ?Sized>(
    source: &S,
    target: &TargetDistribution,
    pair: &SchedulePair,
    t: f64,
) -> Result<f64> {
    let (absent, masked, clean) = pair.token_phase_probs(t)?;
    let (wu, wi) = (pair.unmask_hazard(t), pair.insert_hazard(t));
    let c = target.clamp_prefix_len();
    let mut total = 0.0;
    for (x1, p) in target.atoms() {
        let m = x1.len() - c;
        // phases per free position: 0 absent, 1 masked, 2 clean
        for code in 0..3usize.pow(m as u32) {
            let mut prob = *p;
            let mut toks: Vec<Token> = x1.tokens()[..c].to_vec();
            let mut pos: Vec<usize> = (0..c).collect();
            let mut k = code;
            for j in c..x1.len() {
                match k % 3 {
                    0 => prob *= absent,
                    1 => {
                        prob *= masked;
                        toks.push(Token::MASK);
                        pos.push(j);
                    }
                    _ => {
                        prob *= clean;
                        toks.push(x1[j]);
                        pos.push(j);
                    }
                }
                k /= 3;
            }
            if prob == 0.0 {
                continue;
            }
            let xt = MaskedSeq::new(toks);
            let pred = source.predict(t, &xt)?;
            let gaps: Vec<usize> = (0..=pos.len())
                .map(|i| {
                    let lo = if i == 0 { 0 } else { pos[i - 1] + 1 };
                    let hi = if i == pos.len() { x1.len() } else { pos[i] };
                    hi - lo
                })
                .collect();
            let (ce, ins) = flex_pieces(&pred, &xt, x1, &pos, &gaps, c);
            total += prob * (wu * ce + wi * ins);
        }
    }
    Ok(total)
}

/// The variable-length loss over `[0, T_MAX]` by adaptive quadrature of the
/// exact integrand. Only for targets with short atoms.
pub fn exact_flex_loss<S: RateSource + ?Sized>(
    source: &S,
    target: &TargetDistribution,
    pair: &SchedulePair,
    tol: f64,
) -> Result<f64> {
    let err = std::cell::RefCell::new(None);
    let f = |t: f64| match flex_integrand(source, target, pair, t) {
        Ok(v) => v,
        Err(e) => {
            err.borrow_mut().get_or_insert(e);
            0.0
        }
    };
    let v = adaptive_simpson(&f, 0.0, T_MAX, tol)?;
    match err.into_inner() {
        Some(e) => Err(e),
        None => Ok(v),
    }
}

/// An exact source degraded on purpose: unmasking rows mixed with a uniform
/// distribution over the vocabulary and insertion counts scaled. Off the
/// inner source's support it predicts uniform rows and no insertions.
#[derive(Debug, Clone)]
pub struct PerturbedOracle<S> {
    inner: S,
    vocab: usize,
    mix: f64,
    g_scale: f64,
}

impl<S: RateSource> PerturbedOracle<S> {
    pub fn new(inner: S, vocab: usize, mix: f64, g_scale: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&mix) || !(g_scale >= 0.0) || vocab == 0 {
            return Err(Error::Config("bad perturbation".into()));
        }
        Ok(PerturbedOracle {
            inner,
            vocab,
            mix,
            g_scale,
        })
    }

    /// 10% uniform mixing and insertion counts scaled by 1.2.
    pub fn standard(inner: S, vocab: usize) -> Self {
        PerturbedOracle::new(inner, vocab, 0.1, 1.2).expect("valid constants")
    }

    pub fn inner(&self) -> &S {
        &self.inner
    }

    fn perturb(&self, x: &MaskedSeq, pred: Result<Prediction>) -> Result<Prediction> {
        let pred = match pred {
            Ok(p) => p,
            Err(Error::Unreachable) => Prediction {
                unmask: vec![Vec::new(); x.len()],
                insert: match self.inner.kind() {
                    ModelKind::Flex => vec![0.0; x.len() + 1],
                    ModelKind::Mdm => Vec::new(),
                },
            },
            Err(e) => return Err(e),
        };
        let u = 1.0 / self.vocab as f64;
        let unmask = (0..x.len())
            .map(|i| {
                if !x.tokens()[i].is_mask() {
                    return Vec::new();
                }
                let row = &pred.unmask[i];
                let total: f64 = row.iter().map(|r| r.1).sum();
                (0..self.vocab)
                    .map(|v| {
                        let tok = Token(v as u32);
                        let q = if total > 0.0 {
                            row.iter().find(|r| r.0 == tok).map_or(0.0, |r| r.1)
                        } else {
                            u
                        };
                        (tok, (1.0 - self.mix) * q + self.mix * u)
                    })
                    .collect()
            })
            .collect();
        let insert = pred.insert.iter().map(|g| g * self.g_scale).collect();
        Ok(Prediction { unmask, insert })
    }
}

impl<S: RateSource> RateSource for PerturbedOracle<S> {
    fn kind(&self) -> ModelKind {
        self.inner.kind()
    }

    fn predict(&self, t: f64, x: &MaskedSeq) -> Result<Prediction> {
        self.perturb(x, self.inner.predict(t, x))
    }

    fn predict_terminal(&self, x: &MaskedSeq) -> Result<Prediction> {
        self.perturb(x, self.inner.predict_terminal(x))
    }

    fn hazards(&self, t: f64) -> (f64, f64) {
        self.inner.hazards(t)
    }

    fn initial_state(&self) -> MaskedSeq {
        self.inner.initial_state()
    }

    fn clamp_len(&self) -> usize {
        self.inner.clamp_len()
    }
}

/// Outcome of [`kl_gap_check`]. `holds` tests `kl <= loss_gap + 3σ` with `σ`
/// combining both standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlGap {
    pub kl: f64,
    pub kl_se: f64,
    pub loss_gap: f64,
    pub gap_se: f64,
    pub off_support_mass: f64,
    pub margin: f64,
    pub holds: bool,
}

/// `KL(p || p̂)` from samples with add-ε smoothing (`ε = 1/(10 n)`) for
/// support atoms never drawn, and its delta-method standard error. Also
/// returns the sampled mass outside the support.
pub fn kl_from_samples(target: &TargetDistribution, samples: &[MaskedSeq]) -> (f64, f64, f64) {
    let n = samples.len() as f64;
    let eps = 1.0 / (10.0 * n);
    let mut counts: HashMap<&MaskedSeq, usize> = HashMap::new();
    for s in samples {
        *counts.entry(s).or_insert(0) += 1;
    }
    let mut kl = 0.0;
    let mut second = 0.0;
    let mut on = 0usize;
    for (x, p) in target.atoms() {
        let c = counts.get(x).copied().unwrap_or(0);
        on += c;
        let q = if c == 0 { eps } else { c as f64 / n };
        kl += p * (p / q).ln();
        second += p * p / q;
    }
    let off = (samples.len() - on) as f64 / n;
    (kl, ((second - 1.0).max(0.0) / n).sqrt(), off)
}

/// Compares the sampled terminal KL of `model` against its loss gap to the
/// exact `oracle`. The loss gap uses common draws for both sources.
#[allow(clippy::too_many_arguments)]
pub fn kl_gap_check<M: RateSource, O: RateSource>(
    model: &M,
    oracle: &O,
    target: &TargetDistribution,
    pair: &SchedulePair,
    steps: usize,
    n_samples: usize,
    n_mc: usize,
    rng: &mut SimRng,
) -> Result<KlGap> {
    let cfg = AdaptiveConfig::new(Strategy::Vanilla, steps);
    let samples = sample_many(model, &cfg, n_samples, &rng.fork(0))?;
    let (kl, kl_se, off) = kl_from_samples(target, &samples);
    if off > 0.0 {
        log::info!("model placed mass {off:.4} outside the target support");
    }
    let loss_rng = rng.fork(1);
    let a = flex_loss_samples(
        model,
        target,
        pair,
        n_mc,
        TimeSampling::LowDiscrepancy,
        &mut loss_rng.clone(),
    )?;
    let b = flex_loss_samples(
        oracle,
        target,
        pair,
        n_mc,
        TimeSampling::LowDiscrepancy,
        &mut loss_rng.clone(),
    )?;
    let d: Vec<f64> = a
        .iter()
        .zip(&b)
        .map(|(x, y)| x.0 + x.1 - y.0 - y.1)
        .collect();
    let n = d.len() as f64;
    let gap = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - gap).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let gap_se = (var / n).sqrt();
    let margin = 3.0 * (kl_se * kl_se + gap_se * gap_se).sqrt();
    Ok(KlGap {
        kl,
        kl_se,
        loss_gap: gap,
        gap_se,
        off_support_mass: off,
        margin,
        holds: kl <= gap + margin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{MdmOracle, Oracle};
    use crate::target::bundled;

    #[test]
    fn phi_examples() {
        assert_eq!(bregman_phi(0.0, 0.7).unwrap(), 0.7);
        assert!((bregman_phi(2.0, 2.0).unwrap() - 0.613_705_638_880_109_4).abs() < 1e-12);
        assert!(bregman_phi(1.0, 0.0).is_err());
        assert!(bregman_phi(1.0, -1.0).is_err());
        assert!(bregman_phi(-1.0, 1.0).is_err());
    }

    #[test]
    fn phi_expectation_minimized_at_mean() {
        // A = 0 or 3 with probabilities 0.4, 0.6
        let e = |g: f64| 0.4 * bregman_phi(0.0, g).unwrap() + 0.6 * bregman_phi(3.0, g).unwrap();
        let m = 1.8;
        let h = 1e-5;
        assert!(((e(m + h) - e(m - h)) / (2.0 * h)).abs() < 1e-8);
        for g in [0.5, 1.0, 1.7, 1.9, 3.0] {
            assert!(e(g) > e(m));
        }
    }

    #[test]
    fn low_discrepancy_times_cover_strata() {
        let mut rng = SimRng::new(3);
        let ts = draw_times(10, TimeSampling::LowDiscrepancy, &mut rng);
        let mut strata: Vec<usize> = ts.iter().map(|t| (t / T_MAX * 10.0) as usize).collect();
        strata.sort();
        assert_eq!(strata, (0..10).collect::<Vec<_>>());
    }

    fn single_atom_closed_form() -> f64 {
        // empty state: one gap of size one predicted exactly (φ = 1, weight
        // cancels the probability 1 - t); present: two empty gaps at the floor
        T_MAX + 2.0 * G_FLOOR * (-(1.0 - T_MAX).ln() - T_MAX)
    }

    #[test]
    fn single_atom_loss_matches_quadrature() {
        let o = Oracle::new(bundled::single(), SchedulePair::linear());
        let exact = exact_flex_loss(&o, o.target(), o.pair(), 1e-10).unwrap();
        assert!((exact - single_atom_closed_form()).abs() < 1e-7, "{exact}");
        let est = flex_loss(
            &o,
            o.target(),
            o.pair(),
            4000,
            TimeSampling::Uniform,
            &mut SimRng::new(1),
        )
        .unwrap();
        assert!(est.unmask == 0.0);
        assert!(
            (est.total - exact).abs() < 4.0 * est.std_err + 1e-6,
            "{est:?} vs {exact}"
        );
    }

    #[test]
    fn decomposition_and_determinism() {
        let o = Oracle::new(bundled::mixed_length(), SchedulePair::linear());
        let a = flex_loss(
            &o,
            o.target(),
            o.pair(),
            500,
            TimeSampling::Uniform,
            &mut SimRng::new(5),
        )
        .unwrap();
        let b = flex_loss(
            &o,
            o.target(),
            o.pair(),
            500,
            TimeSampling::Uniform,
            &mut SimRng::new(5),
        )
        .unwrap();
        assert_eq!(a, b);
        assert!((a.unmask + a.insert - a.total).abs() < 1e-12);
        assert!(a.unmask > 0.0 && a.insert > 0.0 && a.tail >= 0.0);
    }

    #[test]
    fn oracle_beats_perturbed_oracle() {
        for target in [bundled::two_atom(), bundled::mixed_length()] {
            let o = Oracle::new(target.clone(), SchedulePair::linear());
            let p = PerturbedOracle::standard(o.clone(), target.vocab_size());
            let exact_o = exact_flex_loss(&o, &target, o.pair(), 1e-8).unwrap();
            let exact_p = exact_flex_loss(&p, &target, o.pair(), 1e-8).unwrap();
            assert!(exact_o < exact_p);
            for seed in 0..5 {
                let lo = flex_loss(
                    &o,
                    &target,
                    o.pair(),
                    2000,
                    TimeSampling::LowDiscrepancy,
                    &mut SimRng::new(seed),
                )
                .unwrap();
                let lp = flex_loss(
                    &p,
                    &target,
                    o.pair(),
                    2000,
                    TimeSampling::LowDiscrepancy,
                    &mut SimRng::new(seed),
                )
                .unwrap();
                assert!(lo.total < lp.total, "{lo:?} {lp:?}");
            }
        }
    }

    #[test]
    fn mdm_oracle_beats_perturbed_oracle() {
        let t = bundled::mixed_length()
            .padded(bundled::pad_token())
            .unwrap();
        let o = MdmOracle::new(t.clone(), Schedule::Linear).unwrap();
        let p = PerturbedOracle::standard(o.clone(), t.vocab_size());
        for seed in 0..5 {
            let lo = mdm_loss(
                &o,
                &t,
                &Schedule::Linear,
                2000,
                TimeSampling::LowDiscrepancy,
                &mut SimRng::new(seed),
            )
            .unwrap();
            let lp = mdm_loss(
                &p,
                &t,
                &Schedule::Linear,
                2000,
                TimeSampling::LowDiscrepancy,
                &mut SimRng::new(seed),
            )
            .unwrap();
            assert!(lo.total < lp.total);
            assert_eq!(lo.insert, 0.0);
        }
    }

    #[test]
    fn mdm_point_mass_has_zero_loss() {
        let t = bundled::single();
        let o = MdmOracle::new(t.clone(), Schedule::Linear).unwrap();
        let l = mdm_loss(
            &o,
            &t,
            &Schedule::Linear,
            1000,
            TimeSampling::Uniform,
            &mut SimRng::new(0),
        )
        .unwrap();
        assert_eq!(l.total, 0.0);
    }

    #[test]
    fn mdm_weight_linear_closed_form() {
        for t in [0.0, 0.25, 0.5, 0.9] {
            assert!((mdm_weight(&Schedule::Linear, t) - 1.0 / (1.0 - t)).abs() < 1e-12);
        }
    }

    fn replicate_sd(n: usize, mode: TimeSampling, reps: u64) -> f64 {
        let o = Oracle::new(bundled::mixed_length(), SchedulePair::linear());
        let v: Vec<f64> = (0..reps)
            .map(|s| {
                flex_loss(&o, o.target(), o.pair(), n, mode, &mut SimRng::new(100 + s))
                    .unwrap()
                    .total
            })
            .collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    }

    #[test]
    fn standard_error_scales_as_root_n() {
        let r = replicate_sd(250, TimeSampling::Uniform, 20)
            / replicate_sd(1000, TimeSampling::Uniform, 20);
        assert!((1.3..3.0).contains(&r), "ratio {r}");
    }

    #[test]
    fn low_discrepancy_not_noisier() {
        // the time component only: the state average at each t is exact
        let o = Oracle::new(bundled::mixed_length(), SchedulePair::linear());
        let exact = exact_flex_loss(&o, o.target(), o.pair(), 1e-9).unwrap();
        let spread = |mode: TimeSampling| {
            let mut v: Vec<f64> = (0..20)
                .map(|s| {
                    let ts = draw_times(64, mode, &mut SimRng::new(900 + s));
                    let m = ts
                        .iter()
                        .map(|&t| flex_integrand(&o, o.target(), o.pair(), t).unwrap())
                        .sum::<f64>()
                        / ts.len() as f64;
                    (T_MAX * m - exact).abs()
                })
                .collect();
            v.sort_by(f64::total_cmp);
            0.5 * (v[9] + v[10])
        };
        let (ld, un) = (
            spread(TimeSampling::LowDiscrepancy),
            spread(TimeSampling::Uniform),
        );
        assert!(ld <= un, "{ld} vs {un}");
    }

    #[test]
    fn kl_of_exact_samples_is_small() {
        let t = bundled::two_atom();
        let s: Vec<MaskedSeq> = (0..1000)
            .map(|i| {
                if i % 2 == 0 {
                    bundled::parse("ab")
                } else {
                    bundled::parse("b")
                }
            })
            .collect();
        let (kl, _, off) = kl_from_samples(&t, &s);
        assert!(kl.abs() < 1e-12 && off == 0.0);
        let s2 = vec![bundled::parse("ab"); 10];
        let (kl2, _, _) = kl_from_samples(&t, &s2);
        assert!((kl2 - 0.5 * (0.5f64 / 0.01).ln() - 0.5 * (0.5f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn oracle_as_model_has_no_gap() {
        let o = Oracle::new(bundled::two_atom(), SchedulePair::linear());
        let r = kl_gap_check(
            &o,
            &o,
            o.target(),
            o.pair(),
            256,
            4000,
            500,
            &mut SimRng::new(2),
        )
        .unwrap();
        assert!(r.loss_gap.abs() < 1e-12);
        assert!(r.kl < 3.0 * r.kl_se + 2e-3, "{r:?}");
        assert!(r.holds);
    }
}
