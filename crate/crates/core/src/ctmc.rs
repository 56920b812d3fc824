//! Rate matrices of the masked and insertion CTMCs, a forward-equation
//! check, and the tau-leaping and any-order samplers.

use std::collections::HashMap;

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interpolant::{flex_state_marginal, mdm_state_marginal};
use crate::oracle::{MdmOracle, ModelKind, Oracle, Prediction, RateSource};
use crate::rng::SimRng;
use crate::schedule::T_MAX;
use crate::sequence::{MaskedSeq, Token};

/// Off-diagonal rates out of `state` at `time`. The diagonal is minus their
/// sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateBundle {
    pub state: MaskedSeq,
    pub time: f64,
    /// `((position, token), rate)` for every masked position.
    pub unmask: Vec<((usize, Token), f64)>,
    /// `(gap, rate)`; a jump inserts one mask into the gap.
    pub insert: Vec<(usize, f64)>,
}

impl RateBundle {
    fn from_prediction(
        state: &MaskedSeq,
        time: f64,
        pred: &Prediction,
        hazards: (f64, f64),
    ) -> RateBundle {
        let (hu, hi) = hazards;
        let mut unmask = Vec::new();
        for (i, row) in pred.unmask.iter().enumerate() {
            for &(v, p) in row {
                if p > 0.0 {
                    unmask.push(((i, v), hu * p));
                }
            }
        }
        let insert = pred
            .insert
            .iter()
            .enumerate()
            .filter(|(_, g)| **g > 0.0)
            .map(|(i, g)| (i, hi * g))
            .collect();
        RateBundle {
            state: state.clone(),
            time,
            unmask,
            insert,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.unmask.is_empty() && self.insert.is_empty()
    }

    /// Total exit rate `-R_t(x, x)`.
    pub fn exit_rate(&self) -> f64 {
        self.unmask.iter().map(|(_, r)| r).sum::<f64>()
            + self.insert.iter().map(|(_, r)| r).sum::<f64>()
    }

    /// `(next state, rate)` for every off-diagonal entry. Distinct gaps can
    /// lead to the same state, so callers summing flows must accumulate.
    pub fn transitions(&self) -> Result<Vec<(MaskedSeq, f64)>> {
        let mut out = Vec::with_capacity(self.unmask.len() + self.insert.len());
        for &((i, v), r) in &self.unmask {
            out.push((self.state.replace_at(i, v)?, r));
        }
        for &(g, r) in &self.insert {
            out.push((self.state.insert_at(g, Token::MASK)?, r));
        }
        Ok(out)
    }
}

/// Rates of any source at `t <= T_MAX`.
pub fn rates<S: RateSource + ?Sized>(source: &S, t: f64, x: &MaskedSeq) -> Result<RateBundle> {
    if !(0.0..=T_MAX).contains(&t) {
        return Err(Error::TimeOutOfRange(t));
    }
    let pred = source.predict(t, x)?;
    Ok(RateBundle::from_prediction(x, t, &pred, source.hazards(t)))
}

/// Unmasking rates `β̇/(1-β) · q(v)` and insertion rates `α̇/(1-α) · E[gap]`.
pub fn flex_rates(oracle: &Oracle, t: f64, x: &MaskedSeq) -> Result<RateBundle> {
    rates(oracle, t, x)
}

/// Unmasking rates `α̇/(1-α) · q(v)` of the fixed-length model.
pub fn mdm_rates(oracle: &MdmOracle, t: f64, x: &MaskedSeq) -> Result<RateBundle> {
    rates(oracle, t, x)
}

/// Largest `|∂_t p_t(x) - Σ_y p_t(y) R_t(y, x)|` over `states` and every
/// state they jump to, with the time derivative taken by a
/// five-point central difference of step `h`.
pub fn kfe_residual_with<S, F>(
    source: &S,
    marginal: F,
    states: &[MaskedSeq],
    t: f64,
    h: f64,
) -> Result<f64>
where
    S: RateSource + ?Sized,
    F: Fn(f64, &MaskedSeq) -> Result<f64>,
{
    if !(t - 2.0 * h > 0.0 && t + 2.0 * h <= T_MAX) {
        return Err(Error::TimeOutOfRange(t));
    }
    let mut net: HashMap<MaskedSeq, f64> = states.iter().map(|x| (x.clone(), 0.0)).collect();
    for y in states {
        let py = marginal(t, y)?;
        if py == 0.0 {
            continue;
        }
        let bundle = rates(source, t, y)?;
        for (z, r) in bundle.transitions()? {
            *net.entry(z).or_insert(0.0) += py * r;
        }
        *net.get_mut(y).expect("seeded") -= py * bundle.exit_rate();
    }
    let mut worst = 0.0f64;
    for (x, flow) in &net {
        // five-point stencil, fourth-order in h
        let d1 = marginal(t + h, x)? - marginal(t - h, x)?;
        let d2 = marginal(t + 2.0 * h, x)? - marginal(t - 2.0 * h, x)?;
        let dp = (8.0 * d1 - d2) / (12.0 * h);
        worst = worst.max((dp - flow).abs());
    }
    Ok(worst)
}

/// Forward-equation residual of the exact variable-length rates at `t`.
pub fn kfe_residual(oracle: &Oracle, t: f64, h: f64, cap: usize) -> Result<f64> {
    let states = oracle.reachable_states(cap)?;
    let (target, pair) = (oracle.target(), oracle.pair());
    kfe_residual_with(
        oracle,
        |s, x| flex_state_marginal(target, s, pair, x),
        &states,
        t,
        h,
    )
}

/// Forward-equation residual of the exact fixed-length rates at `t`.
pub fn mdm_kfe_residual(oracle: &MdmOracle, t: f64, h: f64, cap: usize) -> Result<f64> {
    let states = oracle.reachable_states(cap)?;
    let (target, sch) = (oracle.target(), oracle.schedule());
    kfe_residual_with(
        oracle,
        |s, x| mdm_state_marginal(target, s, sch, x),
        &states,
        t,
        h,
    )
}

/// How masked positions are chosen for unmasking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Independent Poisson clocks per position and token.
    Vanilla,
    /// The `K` most confident masked positions.
    TopkConfidence,
    /// The most confident positions within a leftmost window.
    TopkSlidingWindow,
    /// The `K` leftmost masked positions.
    Leftmost,
    /// `K` masked positions uniformly at random.
    RandomOrder,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Vanilla,
        Strategy::TopkConfidence,
        Strategy::TopkSlidingWindow,
        Strategy::Leftmost,
        Strategy::RandomOrder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Vanilla => "vanilla",
            Strategy::TopkConfidence => "topk_confidence",
            Strategy::TopkSlidingWindow => "topk_sliding_window",
            Strategy::Leftmost => "leftmost",
            Strategy::RandomOrder => "random_order",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?}")))
    }
}

/// Sampler settings. `gamma1`, `gamma2` size the sliding window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptiveConfig {
    pub strategy: Strategy,
    pub gamma1: f64,
    pub gamma2: usize,
    pub steps: usize,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        AdaptiveConfig {
            strategy: Strategy::Vanilla,
            gamma1: 5.0,
            gamma2: 64,
            steps: 512,
        }
    }
}

impl AdaptiveConfig {
    pub fn new(strategy: Strategy, steps: usize) -> Self {
        AdaptiveConfig {
            strategy,
            steps,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if !(self.gamma1 > 0.0) || !self.gamma1.is_finite() {
            return Err(Error::Config(format!(
                "gamma1 must be positive, got {}",
                self.gamma1
            )));
        }
        if self.gamma2 < 1 {
            return Err(Error::Config("gamma2 must be at least 1".into()));
        }
        Ok(())
    }

    /// `t_k = k / (N - 1)` for `k = 0..N`, clamped to [`T_MAX`].
    pub fn grid(&self) -> Vec<f64> {
        let n = self.steps;
        if n == 1 {
            return vec![0.0];
        }
        (0..n)
            .map(|k| (k as f64 / (n - 1) as f64).min(T_MAX))
            .collect()
    }
}

/// Reveals and insertions drawn for one step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepEvents {
    /// `(position, token)`, left to right.
    pub reveals: Vec<(usize, Token)>,
    /// `(gap, count)` against the pre-step indexing, left to right.
    pub inserts: Vec<(usize, u64)>,
}

/// Tau-leaping draws: per masked position a Poisson count per token, with
/// the position revealed only when exactly one token fires exactly once;
/// per gap a Poisson number of masks.
pub fn vanilla_events(rates: &RateBundle, tau: f64, rng: &mut SimRng) -> StepEvents {
    let mut ev = StepEvents::default();
    let mut k = 0;
    while k < rates.unmask.len() {
        let pos = rates.unmask[k].0 .0;
        let (mut fired, mut single, mut extra) = (None, 0, false);
        while k < rates.unmask.len() && rates.unmask[k].0 .0 == pos {
            let ((_, v), r) = rates.unmask[k];
            match rng.poisson(r * tau) {
                0 => {}
                1 => {
                    single += 1;
                    fired = Some(v);
                }
                _ => extra = true,
            }
            k += 1;
        }
        if single == 1 && !extra {
            ev.reveals.push((pos, fired.expect("one firing")));
        }
    }
    ev.inserts = insertion_draws(&rates.insert, tau, rng);
    ev
}

fn insertion_draws(insert: &[(usize, f64)], tau: f64, rng: &mut SimRng) -> Vec<(usize, u64)> {
    insert
        .iter()
        .filter_map(|&(g, r)| {
            let n = rng.poisson(r * tau);
            (n > 0).then_some((g, n))
        })
        .collect()
}

/// Applies reveals, then insertions from the rightmost gap leftwards.
pub fn apply_events(x: &MaskedSeq, ev: &StepEvents) -> MaskedSeq {
    let mut y = x.clone();
    for &(i, v) in &ev.reveals {
        y.set(i, v);
    }
    for &(g, n) in ev.inserts.iter().rev() {
        y.insert_masks(g, n as usize);
    }
    y
}

/// One tau-leaping step from a rate bundle.
pub fn vanilla_step(rates: &RateBundle, tau: f64, rng: &mut SimRng) -> MaskedSeq {
    let ev = vanilla_events(rates, tau, rng);
    apply_events(&rates.state, &ev)
}

/// Applies reveals one at a time, dropping any that would leave the
/// source's support.
fn reveal_feasibly<S: RateSource + ?Sized>(
    source: &S,
    x: &MaskedSeq,
    reveals: &[(usize, Token)],
) -> MaskedSeq {
    let mut y = x.clone();
    if reveals.is_empty() {
        return y;
    }
    let mut all = y.clone();
    for &(i, v) in reveals {
        all.set(i, v);
    }
    if source.admits(&all) {
        return all;
    }
    for &(i, v) in reveals {
        let keep = y[i];
        y.set(i, v);
        if !source.admits(&y) {
            debug!("dropping reveal ({i}, {v:?}) outside support");
            y.set(i, keep);
        }
    }
    y
}

/// Inserts masks gap by gap from the right, one at a time, dropping any
/// that would leave the source's support.
fn insert_feasibly<S: RateSource + ?Sized>(
    source: &S,
    x: &MaskedSeq,
    inserts: &[(usize, u64)],
) -> MaskedSeq {
    if inserts.is_empty() {
        return x.clone();
    }
    let mut all = x.clone();
    for &(g, n) in inserts.iter().rev() {
        all.insert_masks(g, n as usize);
    }
    if source.admits(&all) {
        return all;
    }
    let mut y = x.clone();
    for &(g, n) in inserts.iter().rev() {
        for _ in 0..n {
            y.insert_masks(g, 1);
            if !source.admits(&y) {
                debug!("dropping insertion at gap {g} outside support");
                y.remove(g);
                break;
            }
        }
    }
    y
}

/// Positions to reveal this step under a non-vanilla strategy, at most `k`,
/// returned left to right.
pub fn select_positions(
    pred: &Prediction,
    x: &MaskedSeq,
    clamp: usize,
    k: usize,
    cfg: &AdaptiveConfig,
    rng: &mut SimRng,
) -> Vec<usize> {
    let masked: Vec<usize> = x.masked_positions().collect();
    let k = k.min(masked.len());
    if k == 0 {
        return Vec::new();
    }
    let confidence = |i: usize| pred.unmask[i].iter().map(|(_, p)| *p).fold(0.0, f64::max);
    let by_confidence = |pool: Vec<usize>| {
        let mut scored: Vec<(f64, usize)> = pool.into_iter().map(|i| (confidence(i), i)).collect();
        // highest confidence first, lowest index on ties
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        scored
            .into_iter()
            .take(k)
            .map(|(_, i)| i)
            .collect::<Vec<_>>()
    };
    let mut chosen = match cfg.strategy {
        Strategy::Vanilla => unreachable!("vanilla steps do not select positions"),
        Strategy::Leftmost => masked[..k].to_vec(),
        Strategy::TopkConfidence => by_confidence(masked),
        Strategy::TopkSlidingWindow => {
            let free = x.len() - clamp;
            let w = ((cfg.gamma1 * free as f64).floor() as usize)
                .min(cfg.gamma2)
                .max(1);
            by_confidence(masked.into_iter().filter(|&i| i < clamp + w).collect())
        }
        Strategy::RandomOrder => {
            let mut pool = masked;
            for j in 0..k {
                let r = j + rng.below(pool.len() - j);
                pool.swap(j, r);
            }
            pool.truncate(k);
            pool
        }
    };
    chosen.sort_unstable();
    chosen
}

/// One step of a non-vanilla strategy: `K ~ Poi(τ · unmask hazard ·
/// #masked)` reveals chosen by the strategy, each drawn from a fresh
/// posterior query, followed by tau-leaped insertions.
pub fn adaptive_step<S: RateSource + ?Sized>(
    source: &S,
    t: f64,
    tau: f64,
    x: &MaskedSeq,
    cfg: &AdaptiveConfig,
    rng: &mut SimRng,
) -> Result<MaskedSeq> {
    if cfg.strategy == Strategy::Vanilla {
        return Err(Error::Config(
            "adaptive step needs a non-vanilla strategy".into(),
        ));
    }
    let (hu, hi) = source.hazards(t);
    let mut pred = source.predict(t, x)?;
    let n_masked = x.mask_count();
    let k = (rng.poisson(tau * hu * n_masked as f64) as usize).min(n_masked);
    let picks = select_positions(&pred, x, source.clamp_len(), k, cfg, rng);
    let mut y = x.clone();
    for (j, &i) in picks.iter().enumerate() {
        if j > 0 {
            pred = source.predict(t, &y)?;
        }
        if let Some(v) = rng.categorical(&pred.unmask[i]) {
            y.set(i, v);
        }
    }
    if !picks.is_empty() {
        pred = source.predict(t, &y)?;
    }
    insertion_half(source, &y, &pred, hi, tau, rng)
}

fn insertion_half<S: RateSource + ?Sized>(
    source: &S,
    y: &MaskedSeq,
    pred: &Prediction,
    hi: f64,
    tau: f64,
    rng: &mut SimRng,
) -> Result<MaskedSeq> {
    if source.kind() == ModelKind::Mdm || hi == 0.0 {
        return Ok(y.clone());
    }
    let insert: Vec<(usize, f64)> = pred
        .insert
        .iter()
        .enumerate()
        .map(|(g, r)| (g, hi * r))
        .collect();
    let draws = insertion_draws(&insert, tau, rng);
    Ok(insert_feasibly(source, y, &draws))
}

/// One vanilla step against a source, with the support filter applied and
/// insertions driven by the post-reveal state.
fn vanilla_source_step<S: RateSource + ?Sized>(
    source: &S,
    t: f64,
    tau: f64,
    x: &MaskedSeq,
    rng: &mut SimRng,
) -> Result<MaskedSeq> {
    let pred = source.predict(t, x)?;
    let (hu, hi) = source.hazards(t);
    let bundle = RateBundle::from_prediction(x, t, &pred, (hu, 0.0));
    let ev = vanilla_events(&bundle, tau, rng);
    let y = reveal_feasibly(source, x, &ev.reveals);
    let pred = if y == *x {
        pred
    } else {
        source.predict(t, &y)?
    };
    insertion_half(source, &y, &pred, hi, tau, rng)
}

/// Unmasks every remaining mask, leftmost first, from the `t = 1`
/// posterior. When that posterior has no support (too few insertions),
/// falls back to the posterior at [`T_MAX`].
pub fn complete<S: RateSource + ?Sized>(
    source: &S,
    x: &MaskedSeq,
    rng: &mut SimRng,
) -> Result<MaskedSeq> {
    let mut y = x.clone();
    loop {
        let Some(i) = y.masked_positions().next() else {
            break;
        };
        let pred = match source.predict_terminal(&y) {
            Ok(p) => p,
            Err(Error::Unreachable) => {
                debug!("terminal posterior empty at {y}; using t = T_MAX");
                source.predict(T_MAX, &y)?
            }
            Err(e) => return Err(e),
        };
        let v = rng
            .categorical(&pred.unmask[i])
            .ok_or(Error::EmptySupport)?;
        y.set(i, v);
    }
    Ok(y)
}

/// Runs the sampler from the source's initial state across the grid, then
/// completes leftover masks at `t = 1`.
pub fn run_sampler<S: RateSource + ?Sized>(
    source: &S,
    cfg: &AdaptiveConfig,
    rng: &mut SimRng,
) -> Result<MaskedSeq> {
    cfg.validate()?;
    let grid = cfg.grid();
    if grid.len() == 1 {
        warn!("single-point grid: no steps are taken before completion");
    }
    let mut x = source.initial_state();
    for w in grid.windows(2) {
        let (t, tau) = (w[0], w[1] - w[0]);
        x = match cfg.strategy {
            Strategy::Vanilla => vanilla_source_step(source, t, tau, &x, rng)?,
            _ => adaptive_step(source, t, tau, &x, cfg, rng)?,
        };
    }
    complete(source, &x, rng)
}

/// `n` independent trajectories; trajectory `k` uses `rng.fork(k)`, so the
/// output does not depend on the thread count.
pub fn sample_many<S: RateSource + ?Sized>(
    source: &S,
    cfg: &AdaptiveConfig,
    n: usize,
    rng: &SimRng,
) -> Result<Vec<MaskedSeq>> {
    (0..n)
        .into_par_iter()
        .map(|k| run_sampler(source, cfg, &mut rng.fork(k as u64)))
        .collect()
}
