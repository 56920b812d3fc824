//! Exact posteriors over an explicit target: the unmasking posterior and the
//! insertion expectation that the learned networks would otherwise
//! approximate.
//!
//! For a partially masked state `x` at time `t` the posterior over clean
//! sequences is
//!
//! ```text
//! q_t(x* | x) ∝ p(x*) · (1 - α_t)^(|x*| - |x|) · #{embeddings of x into x*}
//! ```
//!
//! which involves only the insertion schedule. The free functions here take
//! an insertion [`Schedule`], never a [`SchedulePair`], so the independence
//! from the unmasking schedule holds by construction.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::{Schedule, SchedulePair};
use crate::sequence::{embeds, matches_aligned, EmbeddingTables, MaskedSeq, Token};
use crate::target::TargetDistribution;

/// Default bound on enumerated state spaces.
pub const DEFAULT_STATE_CAP: usize = 100_000;

/// Environment variable overriding [`DEFAULT_STATE_CAP`].
pub const STATE_CAP_ENV: &str = "FLEXCTMC_STATE_CAP";

/// The state cap from the environment, or the default.
pub fn state_cap() -> usize {
    std::env::var(STATE_CAP_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(DEFAULT_STATE_CAP)
}

/// Which family of rates a source produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Variable-length: insertions and unmasking.
    Flex,
    /// Fixed-length: unmasking only.
    Mdm,
}

/// Posterior summaries at one state. `unmask[i]` is empty for clean
/// positions; `insert` has one entry per gap `0..=len` (empty for
/// fixed-length models).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Prediction {
    pub unmask: Vec<Vec<(Token, f64)>>,
    pub insert: Vec<f64>,
}

/// Anything the samplers can query for rates: exact oracles, learned
/// tables, perturbed oracles.
pub trait RateSource: Sync {
    fn kind(&self) -> ModelKind;

    /// Posterior summaries at `t < 1`.
    fn predict(&self, t: f64, x: &MaskedSeq) -> Result<Prediction>;

    /// Unmasking posteriors at `t = 1`, used to complete leftover masks.
    fn predict_terminal(&self, x: &MaskedSeq) -> Result<Prediction> {
        self.predict(1.0, x)
    }

    /// `(unmask hazard, insert hazard)` multiplying the predictions.
    fn hazards(&self, t: f64) -> (f64, f64);

    /// State at `t = 0`.
    fn initial_state(&self) -> MaskedSeq;

    /// Tokens that the sampler must never touch.
    fn clamp_len(&self) -> usize;

    /// Whether `x` has positive probability under the source's own path.
    /// Learned models cannot tell and accept everything.
    fn admits(&self, _x: &MaskedSeq) -> bool {
        true
    }
}

fn free_part(x: &MaskedSeq, c: usize) -> MaskedSeq {
    MaskedSeq::new(x.tokens()[c..].to_vec())
}

fn check_prefix(target: &TargetDistribution, x: &MaskedSeq) -> Result<()> {
    let c = target.clamp_prefix_len();
    if x.len() < c || !x.starts_with(target.clamp_prefix().tokens()) {
        return Err(Error::Unreachable);
    }
    Ok(())
}

/// `(1 - α_t)^Δ` with `0^0 = 1`, so at `t = 1` only equal-length atoms count.
fn length_weight(absent: f64, delta: usize) -> f64 {
    if delta == 0 {
        1.0
    } else {
        absent.powi(delta as i32)
    }
}

/// Per-atom unnormalized posterior weights `p · (1-α)^Δ · count`, skipping
/// atoms that cannot produce `x`.
fn weighted_tables<'a>(
    target: &'a TargetDistribution,
    insertion: &Schedule,
    t: f64,
    x: &MaskedSeq,
) -> Result<Vec<(&'a MaskedSeq, f64, EmbeddingTables)>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::TimeOutOfRange(t));
    }
    check_prefix(target, x)?;
    let c = target.clamp_prefix_len();
    let xf = free_part(x, c);
    let absent = 1.0 - insertion.eval(t)?.0;
    let mut out = Vec::new();
    for (a, p) in target.atoms() {
        if a.len() < x.len() {
            continue;
        }
        let w = p * length_weight(absent, a.len() - x.len());
        if w == 0.0 {
            continue;
        }
        let tables = EmbeddingTables::new(&xf, &free_part(a, c))?;
        if tables.count() > 0 {
            out.push((a, w, tables));
        }
    }
    if out.is_empty() {
        return Err(Error::Unreachable);
    }
    Ok(out)
}

/// `q_t(· | x)` as `(atom, probability)` pairs in atom order.
pub fn posterior_clean(
    target: &TargetDistribution,
    insertion: &Schedule,
    t: f64,
    x: &MaskedSeq,
) -> Result<Vec<(MaskedSeq, f64)>> {
    let rows = weighted_tables(target, insertion, t, x)?;
    let weights: Vec<f64> = rows
        .iter()
        .map(|(_, w, tb)| w * tb.count() as f64)
        .collect();
    let z: f64 = weights.iter().sum();
    Ok(rows
        .iter()
        .zip(weights)
        .map(|((a, _, _), w)| ((*a).clone(), w / z))
        .collect())
}

fn masked_at(x: &MaskedSeq, i: usize) -> Result<()> {
    match x.get(i) {
        None => Err(Error::OutOfRange {
            what: "position",
            index: i,
            len: x.len(),
        }),
        Some(v) if !v.is_mask() => Err(Error::NotMasked(i)),
        _ => Ok(()),
    }
}

fn normalize(acc: BTreeMap<Token, f64>) -> Vec<(Token, f64)> {
    let z: f64 = acc.values().sum();
    acc.into_iter().map(|(v, w)| (v, w / z)).collect()
}

/// Distribution of the clean token hidden under the mask at position `i`.
pub fn unmask_marginal(
    target: &TargetDistribution,
    insertion: &Schedule,
    t: f64,
    x: &MaskedSeq,
    i: usize,
) -> Result<Vec<(Token, f64)>> {
    masked_at(x, i)?;
    let c = target.clamp_prefix_len();
    let rows = weighted_tables(target, insertion, t, x)?;
    let mut acc = BTreeMap::new();
    for (_, w, tb) in &rows {
        for (v, n) in tb.token_counts_at(i - c)? {
            *acc.entry(v).or_insert(0.0) += w * n as f64;
        }
    }
    Ok(normalize(acc))
}

/// Expected number of source tokens still to be inserted in gap `i`
/// (between `x[i-1]` and `x[i]`).
pub fn insertion_expectation(
    target: &TargetDistribution,
    insertion: &Schedule,
    t: f64,
    x: &MaskedSeq,
    i: usize,
) -> Result<f64> {
    if i > x.len() {
        return Err(Error::OutOfRange {
            what: "gap",
            index: i,
            len: x.len() + 1,
        });
    }
    let c = target.clamp_prefix_len();
    let rows = weighted_tables(target, insertion, t, x)?;
    if i < c {
        return Ok(0.0);
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (_, w, tb) in &rows {
        num += w * tb.gap_count(i - c)? as f64;
        den += w * tb.count() as f64;
    }
    Ok(num / den)
}

/// Full prediction for the variable-length model, sharing one table build
/// per atom across positions and gaps.
pub fn flex_prediction(
    target: &TargetDistribution,
    insertion: &Schedule,
    t: f64,
    x: &MaskedSeq,
) -> Result<Prediction> {
    let c = target.clamp_prefix_len();
    let rows = weighted_tables(target, insertion, t, x)?;
    let masked: Vec<usize> = x.masked_positions().collect();
    let mut tok_acc: Vec<BTreeMap<Token, f64>> = vec![BTreeMap::new(); masked.len()];
    let mut gap_acc = vec![0.0; x.len() + 1 - c];
    let mut den = 0.0;
    for (_, w, tb) in &rows {
        den += w * tb.count() as f64;
        for (k, &i) in masked.iter().enumerate() {
            for (v, n) in tb.token_counts_at(i - c)? {
                *tok_acc[k].entry(v).or_insert(0.0) += w * n as f64;
            }
        }
        for (g, acc) in gap_acc.iter_mut().enumerate() {
            *acc += w * tb.gap_count(g)? as f64;
        }
    }
    let mut unmask = vec![Vec::new(); x.len()];
    for (k, &i) in masked.iter().enumerate() {
        unmask[i] = normalize(std::mem::take(&mut tok_acc[k]));
    }
    let mut insert = vec![0.0; c];
    insert.extend(gap_acc.iter().map(|g| g / den));
    Ok(Prediction { unmask, insert })
}

/// Unmasking posterior of the fixed-length model at position `i`. It does
/// not depend on time or schedule.
pub fn mdm_unmask_marginal(
    target: &TargetDistribution,
    x: &MaskedSeq,
    i: usize,
) -> Result<Vec<(Token, f64)>> {
    masked_at(x, i)?;
    let mut acc = BTreeMap::new();
    for (a, p) in target.atoms() {
        if matches_aligned(x, a) {
            *acc.entry(a[i]).or_insert(0.0) += p;
        }
    }
    if acc.is_empty() {
        return Err(Error::Unreachable);
    }
    Ok(normalize(acc))
}

fn mdm_prediction(target: &TargetDistribution, x: &MaskedSeq) -> Result<Prediction> {
    let mut acc: Vec<BTreeMap<Token, f64>> = vec![BTreeMap::new(); x.len()];
    let mut any = false;
    for (a, p) in target.atoms() {
        if matches_aligned(x, a) {
            any = true;
            for i in x.masked_positions() {
                *acc[i].entry(a[i]).or_insert(0.0) += p;
            }
        }
    }
    if !any {
        return Err(Error::Unreachable);
    }
    Ok(Prediction {
        unmask: acc.into_iter().map(normalize).collect(),
        insert: Vec::new(),
    })
}

const CACHE_CAPACITY: usize = 1 << 16;

/// Memo keyed on the state and the exact bit pattern of `t`.
#[derive(Debug, Default)]
struct Memo(Mutex<HashMap<(MaskedSeq, u64), Arc<Prediction>>>);

impl Memo {
    fn get_or(
        &self,
        t: f64,
        x: &MaskedSeq,
        f: impl FnOnce() -> Result<Prediction>,
    ) -> Result<Prediction> {
        let key = (x.clone(), t.to_bits());
        if let Some(p) = self.0.lock().expect("memo lock").get(&key) {
            return Ok((**p).clone());
        }
        let p = f()?;
        let mut map = self.0.lock().expect("memo lock");
        if map.len() >= CACHE_CAPACITY {
            map.clear();
        }
        map.insert(key, Arc::new(p.clone()));
        Ok(p)
    }
}

impl Clone for Memo {
    fn clone(&self) -> Self {
        Memo::default()
    }
}

/// Exact rates of the variable-length model over `target`.
#[derive(Debug, Clone)]
pub struct Oracle {
    target: TargetDistribution,
    pair: SchedulePair,
    memo: Memo,
}

impl Oracle {
    pub fn new(target: TargetDistribution, pair: SchedulePair) -> Self {
        Oracle {
            target,
            pair,
            memo: Memo::default(),
        }
    }

    pub fn target(&self) -> &TargetDistribution {
        &self.target
    }

    pub fn pair(&self) -> &SchedulePair {
        &self.pair
    }

    pub fn posterior_clean(&self, t: f64, x: &MaskedSeq) -> Result<Vec<(MaskedSeq, f64)>> {
        posterior_clean(&self.target, &self.pair.insertion, t, x)
    }

    pub fn unmask_marginal(&self, t: f64, x: &MaskedSeq, i: usize) -> Result<Vec<(Token, f64)>> {
        unmask_marginal(&self.target, &self.pair.insertion, t, x, i)
    }

    pub fn insertion_expectation(&self, t: f64, x: &MaskedSeq, i: usize) -> Result<f64> {
        insertion_expectation(&self.target, &self.pair.insertion, t, x, i)
    }

    /// Every state with positive probability at some `t` in `(0, 1)`.
    pub fn reachable_states(&self, cap: usize) -> Result<Vec<MaskedSeq>> {
        flex_reachable(&self.target, cap)
    }
}

impl RateSource for Oracle {
    fn kind(&self) -> ModelKind {
        ModelKind::Flex
    }

    fn predict(&self, t: f64, x: &MaskedSeq) -> Result<Prediction> {
        self.memo.get_or(t, x, || {
            flex_prediction(&self.target, &self.pair.insertion, t, x)
        })
    }

    fn hazards(&self, t: f64) -> (f64, f64) {
        (self.pair.unmask_hazard(t), self.pair.insert_hazard(t))
    }

    fn initial_state(&self) -> MaskedSeq {
        self.target.clamp_prefix()
    }

    fn clamp_len(&self) -> usize {
        self.target.clamp_prefix_len()
    }

    fn admits(&self, x: &MaskedSeq) -> bool {
        let c = self.target.clamp_prefix_len();
        if x.len() < c || !x.starts_with(self.target.clamp_prefix().tokens()) {
            return false;
        }
        let xf = free_part(x, c);
        self.target
            .atoms()
            .iter()
            .any(|(a, _)| embeds(&xf, &free_part(a, c)))
    }
}

/// Exact rates of the fixed-length masked model over a padded target.
#[derive(Debug, Clone)]
pub struct MdmOracle {
    target: TargetDistribution,
    schedule: Schedule,
    memo: Memo,
}

impl MdmOracle {
    /// `target` must have atoms of one common length.
    pub fn new(target: TargetDistribution, schedule: Schedule) -> Result<Self> {
        let len = target.max_len();
        if target.atoms().iter().any(|(a, _)| a.len() != len) {
            return Err(Error::Config(
                "fixed-length model needs equal-length atoms".into(),
            ));
        }
        Ok(MdmOracle {
            target,
            schedule,
            memo: Memo::default(),
        })
    }

    pub fn target(&self) -> &TargetDistribution {
        &self.target
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn reachable_states(&self, cap: usize) -> Result<Vec<MaskedSeq>> {
        mdm_reachable(&self.target, cap)
    }
}

impl RateSource for MdmOracle {
    fn kind(&self) -> ModelKind {
        ModelKind::Mdm
    }

    fn predict(&self, t: f64, x: &MaskedSeq) -> Result<Prediction> {
        // schedule-free, so one entry per state serves every t
        let _ = t;
        self.memo.get_or(0.0, x, || mdm_prediction(&self.target, x))
    }

    fn hazards(&self, t: f64) -> (f64, f64) {
        (self.schedule.hazard(t), 0.0)
    }

    fn initial_state(&self) -> MaskedSeq {
        let c = self.target.clamp_prefix_len();
        let mut toks = self.target.clamp_prefix().into_tokens();
        toks.extend(std::iter::repeat_n(Token::MASK, self.target.max_len() - c));
        MaskedSeq::new(toks)
    }

    fn clamp_len(&self) -> usize {
        self.target.clamp_prefix_len()
    }

    fn admits(&self, x: &MaskedSeq) -> bool {
        self.target
            .atoms()
            .iter()
            .any(|(a, _)| matches_aligned(x, a))
    }
}

fn push_capped(set: &mut HashSet<MaskedSeq>, x: MaskedSeq, cap: usize) -> Result<()> {
    set.insert(x);
    if set.len() > cap {
        return Err(Error::StateCap { cap });
    }
    Ok(())
}

/// All mask/clean patterns of all subsequences of every atom's free part,
/// behind the clamped prefix, in sorted order.
pub fn flex_reachable(target: &TargetDistribution, cap: usize) -> Result<Vec<MaskedSeq>> {
    let c = target.clamp_prefix_len();
    let prefix = target.clamp_prefix();
    let mut set = HashSet::new();
    for (a, _) in target.atoms() {
        let free = &a.tokens()[c..];
        // each free token is absent, masked or clean: walk base-3 codes
        let n = free.len();
        let total = 3usize
            .checked_pow(n as u32)
            .ok_or(Error::StateCap { cap })?;
        if total > cap.saturating_mul(8) {
            return Err(Error::StateCap { cap });
        }
        for mut code in 0..total {
            let mut toks = prefix.tokens().to_vec();
            for &v in free {
                match code % 3 {
                    1 => toks.push(Token::MASK),
                    2 => toks.push(v),
                    _ => {}
                }
                code /= 3;
            }
            push_capped(&mut set, MaskedSeq::new(toks), cap)?;
        }
    }
    let mut out: Vec<MaskedSeq> = set.into_iter().collect();
    out.sort();
    Ok(out)
}

/// All mask patterns of every atom's free part, in sorted order.
pub fn mdm_reachable(target: &TargetDistribution, cap: usize) -> Result<Vec<MaskedSeq>> {
    let c = target.clamp_prefix_len();
    let mut set = HashSet::new();
    for (a, _) in target.atoms() {
        let n = a.len() - c;
        if n >= usize::BITS as usize - 1 || (1usize << n) > cap.saturating_mul(8) {
            return Err(Error::StateCap { cap });
        }
        for bits in 0..(1usize << n) {
            let toks = a
                .tokens()
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    if i >= c && bits >> (i - c) & 1 == 1 {
                        Token::MASK
                    } else {
                        v
                    }
                })
                .collect();
            push_capped(&mut set, MaskedSeq::new(toks), cap)?;
        }
    }
    let mut out: Vec<MaskedSeq> = set.into_iter().collect();
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interpolant::flex_state_marginal;
    use crate::sequence::{embed_count, gap_count};
    use crate::target::bundled;

    const A: Token = Token(0);
    const B: Token = Token(1);

    fn lin() -> Schedule {
        Schedule::Linear
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn posterior_examples() {
        let t = bundled::two_atom();
        let post = posterior_clean(&t, &lin(), 0.5, &MaskedSeq::masks(1)).unwrap();
        assert_eq!(post.len(), 2);
        assert!(post.iter().all(|(_, p)| close(*p, 0.5)));
        let post = posterior_clean(&t, &lin(), 0.0, &MaskedSeq::empty()).unwrap();
        assert!(post.iter().all(|(_, p)| close(*p, 0.5)));
        let post = posterior_clean(&t, &lin(), 1.0, &bundled::parse("ab")).unwrap();
        assert_eq!(post, vec![(bundled::parse("ab"), 1.0)]);
        assert_eq!(
            posterior_clean(&t, &lin(), 0.5, &bundled::parse("aa")),
            Err(Error::Unreachable)
        );
    }

    #[test]
    fn unmask_examples() {
        let t = bundled::two_atom();
        let m = unmask_marginal(&t, &lin(), 0.5, &MaskedSeq::masks(1), 0).unwrap();
        assert_eq!(m.len(), 2);
        assert!(close(m[0].1, 0.25) && close(m[1].1, 0.75));
        let m = unmask_marginal(&bundled::single(), &lin(), 0.3, &MaskedSeq::masks(1), 0).unwrap();
        assert_eq!(m, vec![(A, 1.0)]);
        assert_eq!(
            unmask_marginal(&t, &lin(), 0.5, &bundled::parse("b"), 0),
            Err(Error::NotMasked(0))
        );
    }

    #[test]
    fn insertion_examples() {
        let t = bundled::two_atom();
        let e = insertion_expectation(&t, &lin(), 0.5, &MaskedSeq::empty(), 0).unwrap();
        assert!(close(e, 4.0 / 3.0));
        let e = insertion_expectation(&t, &lin(), 0.0, &MaskedSeq::empty(), 0).unwrap();
        assert!(close(e, 1.5));
        let e = insertion_expectation(&t, &lin(), 0.5, &bundled::parse("b"), 0).unwrap();
        assert!(close(e, 1.0 / 3.0));
        assert!(insertion_expectation(&t, &lin(), 0.5, &bundled::parse("b"), 2).is_err());
    }

    #[test]
    fn mdm_examples() {
        let t = bundled::two_atom().padded(bundled::pad_token()).unwrap();
        let m = mdm_unmask_marginal(&t, &MaskedSeq::masks(2), 0).unwrap();
        assert_eq!(m, vec![(A, 0.5), (B, 0.5)]);
        let x = MaskedSeq::new(vec![A, Token::MASK]);
        assert_eq!(mdm_unmask_marginal(&t, &x, 1).unwrap(), vec![(B, 1.0)]);
        let x = MaskedSeq::new(vec![B, Token::MASK]);
        assert_eq!(
            mdm_unmask_marginal(&t, &x, 1).unwrap(),
            vec![(bundled::pad_token(), 1.0)]
        );
        assert_eq!(
            mdm_unmask_marginal(&t, &bundled::parse("bP"), 0),
            Err(Error::NotMasked(0))
        );
    }

    #[test]
    fn prediction_agrees_with_single_queries() {
        let t = bundled::mixed_length();
        let ins = Schedule::polynomial(2.0).unwrap();
        for x in flex_reachable(&t, 1000).unwrap() {
            let p = flex_prediction(&t, &ins, 0.37, &x).unwrap();
            for i in 0..x.len() {
                if x[i].is_mask() {
                    assert_eq!(p.unmask[i], unmask_marginal(&t, &ins, 0.37, &x, i).unwrap());
                } else {
                    assert!(p.unmask[i].is_empty());
                }
            }
            for g in 0..=x.len() {
                let e = insertion_expectation(&t, &ins, 0.37, &x, g).unwrap();
                assert!((p.insert[g] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn posterior_is_bayes_rule_on_the_interpolant() {
        let t = bundled::mixed_length();
        for pair in [
            SchedulePair::linear(),
            SchedulePair::new(
                Schedule::polynomial(2.0).unwrap(),
                Schedule::polynomial(0.5).unwrap(),
            )
            .unwrap(),
        ] {
            for x in flex_reachable(&t, 1000).unwrap() {
                let tt = 0.42;
                let post = posterior_clean(&t, &pair.insertion, tt, &x).unwrap();
                let px = flex_state_marginal(&t, tt, &pair, &x).unwrap();
                for (a, q) in post {
                    let single =
                        TargetDistribution::from_weights(2, [(a.clone(), 1.0)], 0).unwrap();
                    let joint = t.prob(&a) * flex_state_marginal(&single, tt, &pair, &x).unwrap();
                    assert!((joint / px - q).abs() < 1e-9, "{x} {a}");
                }
            }
        }
    }

    #[test]
    fn one_reveal_composes_to_the_posterior() {
        let t = bundled::mixed_length();
        let ins = lin();
        for tt in [0.2, 0.8, 1.0] {
            for x in flex_reachable(&t, 1000).unwrap() {
                let Ok(post) = posterior_clean(&t, &ins, tt, &x) else {
                    continue;
                };
                for i in x.masked_positions() {
                    let mut mixed: BTreeMap<MaskedSeq, f64> = BTreeMap::new();
                    for (v, pv) in unmask_marginal(&t, &ins, tt, &x, i).unwrap() {
                        let y = x.replace_at(i, v).unwrap();
                        for (a, q) in posterior_clean(&t, &ins, tt, &y).unwrap() {
                            *mixed.entry(a).or_insert(0.0) += pv * q;
                        }
                    }
                    for (a, q) in &post {
                        assert!((mixed.get(a).copied().unwrap_or(0.0) - q).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn gap_expectation_via_inserted_mask() {
        let t = bundled::mixed_length();
        let absent = 0.6f64;
        for x in flex_reachable(&t, 1000).unwrap() {
            for g in 0..=x.len() {
                let y = x.insert_at(g, Token::MASK).unwrap();
                let (mut a, mut b, mut den) = (0.0, 0.0, 0.0);
                for (s, p) in t.atoms() {
                    if s.len() < x.len() {
                        continue;
                    }
                    let w = p * absent.powi((s.len() - x.len()) as i32);
                    a += w * gap_count(&x, g, s).unwrap() as f64;
                    b += w * embed_count(&y, s).unwrap() as f64;
                    den += w * embed_count(&x, s).unwrap() as f64;
                }
                assert_eq!(a, b);
                let e = insertion_expectation(&t, &lin(), 0.4, &x, g).unwrap();
                assert!((e - a / den).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unmasking_schedule_never_enters() {
        let t = bundled::mixed_length();
        let o1 = Oracle::new(t.clone(), SchedulePair::new(lin(), lin()).unwrap());
        let o2 = Oracle::new(
            t.clone(),
            SchedulePair::new(lin(), Schedule::polynomial(2.0).unwrap()).unwrap(),
        );
        for x in o1.reachable_states(1000).unwrap() {
            assert_eq!(o1.predict(0.3, &x).unwrap(), o2.predict(0.3, &x).unwrap());
        }
    }

    #[test]
    fn cached_predictions_match_fresh_ones() {
        let o = Oracle::new(bundled::mixed_length(), SchedulePair::linear());
        for x in o.reachable_states(1000).unwrap() {
            let a = o.predict(0.5, &x).unwrap();
            let b = o.predict(0.5, &x).unwrap();
            assert_eq!(a, b);
            assert_eq!(
                a,
                flex_prediction(o.target(), &Schedule::Linear, 0.5, &x).unwrap()
            );
        }
    }

    #[test]
    fn clamped_prefix_is_stripped() {
        let t = TargetDistribution::from_weights(
            3,
            [
                (MaskedSeq::from_ids(&[2, 0, 1]), 0.5),
                (MaskedSeq::from_ids(&[2, 1]), 0.5),
            ],
            1,
        )
        .unwrap();
        let o = Oracle::new(t, SchedulePair::linear());
        let x = MaskedSeq::new(vec![Token(2), Token::MASK]);
        let p = o.predict(0.5, &x).unwrap();
        assert!(close(p.unmask[1][0].1, 0.25));
        assert_eq!(p.insert[0], 0.0);
        assert!(o.admits(&x));
        assert!(!o.admits(&MaskedSeq::masks(1)));
        assert_eq!(o.initial_state(), MaskedSeq::from_ids(&[2]));
    }

    #[test]
    fn reachable_counts() {
        // {ab, b}: ε; M, a, b; MM, aM, Mb, ab
        let s = flex_reachable(&bundled::two_atom(), 100).unwrap();
        assert_eq!(s.len(), 8);
        assert_eq!(
            flex_reachable(&bundled::mixed_length(), 5),
            Err(Error::StateCap { cap: 5 })
        );
        let padded = bundled::two_atom().padded(bundled::pad_token()).unwrap();
        // ab, aM, Mb, MM, bP, bM, MP
        assert_eq!(mdm_reachable(&padded, 100).unwrap().len(), 7);
    }
}
