//! A tabular stand-in for the unmasking network `f` and the insertion
//! network `g`, trained on the variable-length loss.
//!
//! Entries are keyed by state and time bucket and created on first visit.
//! An unseen entry predicts uniform unmasking rows and one insertion per gap.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interpolant::sample_flex;
use crate::loss::{draw_times, phi_floored, TimeSampling, G_FLOOR};
use crate::oracle::{flex_reachable, state_cap, ModelKind, Oracle, Prediction, RateSource};
use crate::rng::SimRng;
use crate::schedule::{SchedulePair, T_MAX};
use crate::sequence::{MaskedSeq, Token};
use crate::target::TargetDistribution;

/// Loss weight credited to the initialization of every coordinate, so that
/// no update is a full step and logits stay finite.
const PRIOR_WEIGHT: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Entry {
    /// Per position; empty for clean positions.
    logits: Vec<Vec<f64>>,
    f_weight: Vec<f64>,
    /// Per gap `0..=len`.
    g: Vec<f64>,
    g_weight: Vec<f64>,
    visits: u64,
}

impl Entry {
    fn fresh(x: &MaskedSeq, vocab: usize, clamp: usize) -> Entry {
        let logits = x
            .tokens()
            .iter()
            .map(|t| {
                if t.is_mask() {
                    vec![0.0; vocab]
                } else {
                    Vec::new()
                }
            })
            .collect();
        Entry {
            logits,
            f_weight: vec![PRIOR_WEIGHT; x.len()],
            g: (0..=x.len())
                .map(|i| if i < clamp { 0.0 } else { 1.0 })
                .collect(),
            g_weight: vec![PRIOR_WEIGHT; x.len() + 1],
            visits: 0,
        }
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// One coordinate of a [`TabularModel`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Param {
    Logit {
        state: MaskedSeq,
        bucket: usize,
        pos: usize,
        token: Token,
    },
    Gap {
        state: MaskedSeq,
        bucket: usize,
        gap: usize,
    },
}

impl Param {
    /// The `(state, bucket)` entry holding this coordinate.
    pub fn entry(&self) -> (&MaskedSeq, usize) {
        match self {
            Param::Logit { state, bucket, .. } | Param::Gap { state, bucket, .. } => {
                (state, *bucket)
            }
        }
    }
}

/// Tabular `f` (logits, normalized on read) and `g` over states and time
/// buckets.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularModel {
    n_buckets: usize,
    vocab: usize,
    prefix: MaskedSeq,
    pair: SchedulePair,
    entries: HashMap<MaskedSeq, BTreeMap<usize, Entry>>,
}

impl TabularModel {
    pub fn new(
        n_buckets: usize,
        vocab: usize,
        prefix: MaskedSeq,
        pair: SchedulePair,
    ) -> Result<Self> {
        if n_buckets == 0 || vocab == 0 {
            return Err(Error::Config(
                "buckets and vocabulary must be nonempty".into(),
            ));
        }
        Ok(TabularModel {
            n_buckets,
            vocab,
            prefix,
            pair,
            entries: HashMap::new(),
        })
    }

    /// An untrained model for `target`.
    pub fn for_target(
        target: &TargetDistribution,
        pair: SchedulePair,
        n_buckets: usize,
    ) -> Result<Self> {
        TabularModel::new(n_buckets, target.vocab_size(), target.clamp_prefix(), pair)
    }

    pub fn n_buckets(&self) -> usize {
        self.n_buckets
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab
    }

    pub fn pair(&self) -> &SchedulePair {
        &self.pair
    }

    /// Number of stored entries.
    pub fn len(&self) -> usize {
        self.entries.values().map(|m| m.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn bucket(&self, t: f64) -> usize {
        ((t * self.n_buckets as f64) as usize).min(self.n_buckets - 1)
    }

    pub fn midpoint(&self, b: usize) -> f64 {
        (b as f64 + 0.5) / self.n_buckets as f64
    }

    fn clamp(&self) -> usize {
        self.prefix.len()
    }

    fn entry_mut(&mut self, x: &MaskedSeq, b: usize) -> &mut Entry {
        let (vocab, c) = (self.vocab, self.clamp());
        self.entries
            .entry(x.clone())
            .or_default()
            .entry(b)
            .or_insert_with(|| Entry::fresh(x, vocab, c))
    }

    fn entry(&self, x: &MaskedSeq, b: usize) -> Option<&Entry> {
        self.entries.get(x).and_then(|m| m.get(&b))
    }

    /// Unmasking distribution over the vocabulary at masked position `i`.
    pub fn f(&self, x: &MaskedSeq, b: usize, i: usize) -> Vec<f64> {
        self.f_in(self.entry(x, b), i)
    }

    fn f_in(&self, e: Option<&Entry>, i: usize) -> Vec<f64> {
        match e {
            Some(e) if !e.logits[i].is_empty() => softmax(&e.logits[i]),
            _ => vec![1.0 / self.vocab as f64; self.vocab],
        }
    }

    /// Predicted insertion count at gap `i`.
    pub fn g(&self, x: &MaskedSeq, b: usize, i: usize) -> f64 {
        self.g_in(self.entry(x, b), i)
    }

    fn g_in(&self, e: Option<&Entry>, i: usize) -> f64 {
        if i < self.clamp() {
            return 0.0;
        }
        e.map_or(1.0, |e| e.g[i])
    }

    /// Visit count of an entry during training.
    pub fn visits(&self, x: &MaskedSeq, b: usize) -> u64 {
        self.entry(x, b).map_or(0, |e| e.visits)
    }

    /// Stored `(state, bucket)` keys in a deterministic order.
    pub fn keys(&self) -> Vec<(MaskedSeq, usize)> {
        let mut k: Vec<_> = self
            .entries
            .iter()
            .flat_map(|(x, m)| m.keys().map(move |&b| (x.clone(), b)))
            .collect();
        k.sort();
        k
    }

    pub fn param(&self, p: &Param) -> f64 {
        match p {
            Param::Logit {
                state,
                bucket,
                pos,
                token,
            } => self
                .entry(state, *bucket)
                .map_or(0.0, |e| e.logits[*pos][token.id()]),
            Param::Gap { state, bucket, gap } => self.g(state, *bucket, *gap),
        }
    }

    pub fn set_param(&mut self, p: &Param, v: f64) {
        match p {
            Param::Logit {
                state,
                bucket,
                pos,
                token,
            } => {
                self.entry_mut(state, *bucket).logits[*pos][token.id()] = v;
            }
            Param::Gap { state, bucket, gap } => {
                self.entry_mut(state, *bucket).g[*gap] = v;
            }
        }
    }

    /// Weighted running-mean step toward a one-hot target (for `f`) and an
    /// observed gap size (for `g`); see [`train_tabular`].
    fn update(&mut self, s: &TrainSample, lr: f64) {
        let c = self.clamp();
        let e = self.entry_mut(&s.state, s.bucket);
        e.visits += 1;
        for &(i, v) in &s.reveal {
            e.f_weight[i] += s.w_unmask;
            let rho = (lr * s.w_unmask / e.f_weight[i]).min(1.0);
            let p = softmax(&e.logits[i]);
            e.logits[i] = p
                .iter()
                .enumerate()
                .map(|(k, &pk)| {
                    let hit = if k == v.id() { 1.0 } else { 0.0 };
                    ((1.0 - rho) * pk + rho * hit).ln()
                })
                .collect();
        }
        for (i, &a) in s.gaps.iter().enumerate().skip(c) {
            e.g_weight[i] += s.w_insert;
            let rho = (lr * s.w_insert / e.g_weight[i]).min(1.0);
            e.g[i] = ((1.0 - rho) * e.g[i] + rho * a as f64).max(G_FLOOR);
        }
    }
}

impl RateSource for TabularModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Flex
    }

    fn predict(&self, t: f64, x: &MaskedSeq) -> Result<Prediction> {
        let b = self.bucket(t);
        let e = self.entry(x, b);
        let unmask = x
            .tokens()
            .iter()
            .enumerate()
            .map(|(i, tok)| {
                if !tok.is_mask() {
                    return Vec::new();
                }
                self.f_in(e, i)
                    .into_iter()
                    .enumerate()
                    .map(|(v, p)| (Token(v as u32), p))
                    .collect()
            })
            .collect();
        let insert = (0..=x.len()).map(|i| self.g_in(e, i)).collect();
        Ok(Prediction { unmask, insert })
    }

    fn hazards(&self, t: f64) -> (f64, f64) {
        (self.pair.unmask_hazard(t), self.pair.insert_hazard(t))
    }

    fn initial_state(&self) -> MaskedSeq {
        self.prefix.clone()
    }

    fn clamp_len(&self) -> usize {
        self.clamp()
    }
}

/// Portable checkpoint: one record per entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Checkpoint {
    n_buckets: usize,
    vocab: usize,
    prefix: MaskedSeq,
    pair: SchedulePair,
    entries: Vec<EntryRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EntryRecord {
    state: MaskedSeq,
    bucket: usize,
    #[serde(flatten)]
    entry: Entry,
}

impl Serialize for TabularModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let entries = self
            .keys()
            .into_iter()
            .map(|k| EntryRecord {
                entry: self.entries[&k.0][&k.1].clone(),
                state: k.0,
                bucket: k.1,
            })
            .collect();
        Checkpoint {
            n_buckets: self.n_buckets,
            vocab: self.vocab,
            prefix: self.prefix.clone(),
            pair: self.pair.clone(),
            entries,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for TabularModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let c = Checkpoint::deserialize(d)?;
        let mut m = TabularModel::new(c.n_buckets, c.vocab, c.prefix, c.pair)
            .map_err(serde::de::Error::custom)?;
        for r in c.entries {
            m.entries
                .entry(r.state)
                .or_default()
                .insert(r.bucket, r.entry);
        }
        Ok(m)
    }
}

/// One training draw: the interpolant state, its bucket, the tokens behind
/// its masks, its gap sizes, and the two loss weights at `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub t: f64,
    pub bucket: usize,
    pub state: MaskedSeq,
    pub reveal: Vec<(usize, Token)>,
    pub gaps: Vec<usize>,
    pub w_unmask: f64,
    pub w_insert: f64,
}

/// Draws `n` training samples from the target and the joint interpolant.
pub fn draw_samples(
    target: &TargetDistribution,
    pair: &SchedulePair,
    n_buckets: usize,
    n: usize,
    mode: TimeSampling,
    rng: &mut SimRng,
) -> Result<Vec<TrainSample>> {
    let weights: Vec<(usize, f64)> = target
        .atoms()
        .iter()
        .enumerate()
        .map(|(i, a)| (i, a.1))
        .collect();
    let c = target.clamp_prefix_len();
    draw_times(n, mode, rng)
        .into_iter()
        .map(|t| {
            let x1 = &target.atoms()[rng.categorical(&weights).expect("normalized")].0;
            let js = sample_flex(x1, c, t, pair, rng)?;
            let reveal = js
                .xt
                .masked_positions()
                .map(|i| (i, x1[js.st.indices()[i]]))
                .collect();
            let gaps = (0..=js.xt.len()).map(|i| js.gap(i)).collect();
            Ok(TrainSample {
                t,
                bucket: ((t * n_buckets as f64) as usize).min(n_buckets - 1),
                state: js.xt,
                reveal,
                gaps,
                w_unmask: T_MAX * pair.unmask_hazard(t),
                w_insert: T_MAX * pair.insert_hazard(t),
            })
        })
        .collect()
}

/// Mean loss of `model` over `samples`.
pub fn sample_loss(model: &TabularModel, samples: &[TrainSample]) -> f64 {
    let c = model.clamp();
    let mut total = 0.0;
    for s in samples {
        for &(i, v) in &s.reveal {
            total -= s.w_unmask * model.f(&s.state, s.bucket, i)[v.id()].ln();
        }
        for (i, &a) in s.gaps.iter().enumerate().skip(c) {
            total += s.w_insert * phi_floored(a as f64, model.g(&s.state, s.bucket, i));
        }
    }
    total / samples.len() as f64
}

/// Analytic gradient of [`sample_loss`]: `w (softmax - onehot)` for logits
/// and `w (1 - a/g)` for insertion counts above the floor.
pub fn sample_gradient(model: &TabularModel, samples: &[TrainSample]) -> HashMap<Param, f64> {
    let c = model.clamp();
    let n = samples.len() as f64;
    let mut grad: HashMap<Param, f64> = HashMap::new();
    for s in samples {
        for &(i, v) in &s.reveal {
            let p = model.f(&s.state, s.bucket, i);
            for (k, pk) in p.into_iter().enumerate() {
                let hit = if k == v.id() { 1.0 } else { 0.0 };
                let key = Param::Logit {
                    state: s.state.clone(),
                    bucket: s.bucket,
                    pos: i,
                    token: Token(k as u32),
                };
                *grad.entry(key).or_insert(0.0) += s.w_unmask * (pk - hit) / n;
            }
        }
        for (i, &a) in s.gaps.iter().enumerate().skip(c) {
            let g = model.g(&s.state, s.bucket, i);
            let d = if g > G_FLOOR { 1.0 - a as f64 / g } else { 0.0 };
            let key = Param::Gap {
                state: s.state.clone(),
                bucket: s.bucket,
                gap: i,
            };
            *grad.entry(key).or_insert(0.0) += s.w_insert * d / n;
        }
    }
    grad
}

/// Central difference of [`sample_loss`] along one coordinate. Only samples
/// at the coordinate's entry enter the difference; the rest cancel.
pub fn finite_difference(model: &TabularModel, samples: &[TrainSample], p: &Param) -> f64 {
    let (state, bucket) = p.entry();
    let touching: Vec<TrainSample> = samples
        .iter()
        .filter(|s| &s.state == state && s.bucket == bucket)
        .cloned()
        .collect();
    if touching.is_empty() {
        return 0.0;
    }
    let scale = touching.len() as f64 / samples.len() as f64;
    let v = model.param(p);
    let h = 1e-6 * v.abs().max(1.0);
    let mut up = model.clone();
    up.set_param(p, v + h);
    let mut down = model.clone();
    down.set_param(p, v - h);
    scale * (sample_loss(&up, &touching) - sample_loss(&down, &touching)) / (2.0 * h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub time_sampling: TimeSampling,
    pub seed: u64,
    pub n_buckets: usize,
    /// Steps per point of the training curve.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1.0,
            steps: 20_000,
            batch_size: 128,
            time_sampling: TimeSampling::LowDiscrepancy,
            seed: 0,
            n_buckets: 32,
            log_every: 200,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr <= 1.0) {
            return Err(Error::Config(format!(
                "lr must lie in (0, 1], got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 || self.n_buckets == 0 || self.log_every == 0 {
            return Err(Error::Config(
                "batch size, buckets and log interval must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Mean batch loss over a window of steps ending at `step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub loss: f64,
}

/// Trains a tabular model on the variable-length loss.
///
/// Each sample moves the entries it touches along their per-sample gradient
/// with an entry-wise step size: logits move the row's probabilities toward
/// the revealed token by `ρ = lr · w / W`, and `g` moves toward the observed
/// gap by the same rule, where `w` is the sample's loss weight and `W` the
/// weight accumulated by that coordinate, initialization included. With
/// `lr = 1` every entry is the loss-weighted mean of its targets and its
/// initial value, which approaches the minimizer of its share of the loss.
pub fn train_tabular(
    target: &TargetDistribution,
    pair: &SchedulePair,
    cfg: &TrainConfig,
) -> Result<(TabularModel, Vec<CurvePoint>)> {
    cfg.validate()?;
    flex_reachable(target, state_cap())?;
    let mut model = TabularModel::for_target(target, pair.clone(), cfg.n_buckets)?;
    let mut rng = SimRng::new(cfg.seed);
    let mut curve = Vec::new();
    let mut window = 0.0;
    for step in 0..cfg.steps {
        let batch = draw_samples(
            target,
            pair,
            cfg.n_buckets,
            cfg.batch_size,
            cfg.time_sampling,
            &mut rng,
        )?;
        window += sample_loss(&model, &batch);
        for s in &batch {
            model.update(s, cfg.lr);
        }
        if (step + 1) % cfg.log_every == 0 || step + 1 == cfg.steps {
            let span = (step % cfg.log_every) + 1;
            curve.push(CurvePoint {
                step: step + 1,
                loss: window / span as f64,
            });
            window = 0.0;
        }
    }
    Ok((model, curve))
}

/// Largest deviations of a trained model from the oracle at bucket midpoints,
/// over entries visited by at least `min_visit_frac` of all samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleComparison {
    pub max_g_err: f64,
    pub max_f_tv: f64,
    pub entries: usize,
}

pub fn compare_to_oracle(
    model: &TabularModel,
    oracle: &Oracle,
    total_samples: u64,
    min_visit_frac: f64,
) -> Result<OracleComparison> {
    let c = model.clamp();
    let mut out = OracleComparison {
        max_g_err: 0.0,
        max_f_tv: 0.0,
        entries: 0,
    };
    for (x, b) in model.keys() {
        if (model.visits(&x, b) as f64) < min_visit_frac * total_samples as f64 {
            continue;
        }
        out.entries += 1;
        let t = model.midpoint(b);
        let pred = oracle.predict(t, &x)?;
        for i in c..=x.len() {
            out.max_g_err = out
                .max_g_err
                .max((model.g(&x, b, i) - pred.insert[i]).abs());
        }
        for i in x.masked_positions() {
            let f = model.f(&x, b, i);
            let mut q = vec![0.0; model.vocab];
            for &(v, p) in &pred.unmask[i] {
                q[v.id()] = p;
            }
            let tv = 0.5 * f.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum::<f64>();
            out.max_f_tv = out.max_f_tv.max(tv);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::{exact_flex_loss, flex_loss};
    use crate::target::bundled;

    fn model() -> TabularModel {
        TabularModel::for_target(&bundled::two_atom(), SchedulePair::linear(), 32).unwrap()
    }

    #[test]
    fn untrained_model_is_uniform() {
        let m = model();
        let x = bundled::parse("_b");
        let p = m.predict(0.3, &x).unwrap();
        assert_eq!(p.unmask[1].len(), 0);
        assert_eq!(p.unmask[0].len(), 2);
        assert!(p.unmask[0].iter().all(|r| (r.1 - 0.5).abs() < 1e-12));
        assert_eq!(p.insert, vec![1.0; 3]);
        assert_eq!(m.bucket(1.0), 31);
        assert_eq!(m.bucket(0.0), 0);
    }

    #[test]
    fn untrained_loss_exceeds_oracle() {
        let t = bundled::two_atom();
        let o = Oracle::new(t.clone(), SchedulePair::linear());
        let m = model();
        let lo = exact_flex_loss(&o, &t, o.pair(), 1e-8).unwrap();
        let lm = exact_flex_loss(&m, &t, o.pair(), 1e-8).unwrap();
        assert!(lm > lo + 0.1, "{lm} vs {lo}");
        let a = flex_loss(
            &m,
            &t,
            o.pair(),
            2000,
            TimeSampling::LowDiscrepancy,
            &mut SimRng::new(1),
        )
        .unwrap();
        let b = flex_loss(
            &o,
            &t,
            o.pair(),
            2000,
            TimeSampling::LowDiscrepancy,
            &mut SimRng::new(1),
        )
        .unwrap();
        assert!(a.total > b.total);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let t = bundled::mixed_length();
        let mut rng = SimRng::new(4);
        let samples = draw_samples(
            &t,
            &SchedulePair::linear(),
            8,
            64,
            TimeSampling::Uniform,
            &mut rng,
        )
        .unwrap();
        let mut m = TabularModel::for_target(&t, SchedulePair::linear(), 8).unwrap();
        // move away from the uniform initialization
        for s in &samples[..32] {
            m.update(s, 0.5);
        }
        let grad = sample_gradient(&m, &samples);
        let mut keys: Vec<&Param> = grad.keys().collect();
        keys.sort_by_key(|k| format!("{k:?}"));
        for _ in 0..100 {
            let k = keys[rng.below(keys.len())];
            let (fd, an) = (finite_difference(&m, &samples, k), grad[k]);
            let rel = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-3);
            assert!(rel < 1e-5, "{k:?}: analytic {an} numeric {fd}");
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let t = bundled::two_atom();
        let cfg = TrainConfig {
            steps: 20,
            batch_size: 16,
            ..Default::default()
        };
        let (m, curve) = train_tabular(&t, &SchedulePair::linear(), &cfg).unwrap();
        assert_eq!(curve.last().unwrap().step, 20);
        let json = serde_json::to_string(&m).unwrap();
        let back: TabularModel = serde_json::from_str(&json).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn training_is_deterministic() {
        let t = bundled::two_atom();
        let cfg = TrainConfig {
            steps: 50,
            batch_size: 8,
            seed: 9,
            ..Default::default()
        };
        let a = train_tabular(&t, &SchedulePair::linear(), &cfg).unwrap();
        let b = train_tabular(&t, &SchedulePair::linear(), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_config_rejected() {
        let cfg = TrainConfig {
            lr: 0.0,
            ..Default::default()
        };
        assert!(train_tabular(&bundled::two_atom(), &SchedulePair::linear(), &cfg).is_err());
    }
}
