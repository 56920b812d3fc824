//! Distribution metrics, maze scoring, and the acceptance suite that turns
//! the model's exactness properties into pass/fail checks.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::ctmc::{
    kfe_residual, mdm_kfe_residual, run_sampler, sample_many, AdaptiveConfig, Strategy,
};
use crate::error::Result;
use crate::learn::{
    compare_to_oracle, draw_samples, finite_difference, sample_gradient, train_tabular,
    TabularModel, TrainConfig,
};
use crate::loss::{flex_loss, kl_gap_check, PerturbedOracle, TimeSampling};
use crate::oracle::{state_cap, MdmOracle, Oracle};
use crate::rng::SimRng;
use crate::schedule::{Schedule, SchedulePair};
use crate::sequence::{embed_count, gap_count, MaskedSeq, Token};
use crate::target::maze::{maze_generate, perfect_maze_defect, MazeSpec, PathGraph};
use crate::target::{bundled, TargetDistribution};

fn frequencies<K: std::hash::Hash + Eq>(
    keys: impl Iterator<Item = K>,
) -> (HashMap<K, usize>, usize) {
    let mut m = HashMap::new();
    let mut n = 0;
    for k in keys {
        *m.entry(k).or_insert(0) += 1;
        n += 1;
    }
    (m, n)
}

/// `½ Σ |p̂(x) - p(x)|` over the union of the sample and target supports.
pub fn empirical_tv(samples: &[MaskedSeq], target: &TargetDistribution) -> f64 {
    let (counts, n) = frequencies(samples.iter());
    let n = n.max(1) as f64;
    let mut d = 0.0;
    for (x, p) in target.atoms() {
        d += (counts.get(x).copied().unwrap_or(0) as f64 / n - p).abs();
    }
    let mut off: Vec<usize> = counts
        .iter()
        .filter(|(x, _)| target.prob(x) == 0.0)
        .map(|(_, &c)| c)
        .collect();
    off.sort_unstable();
    d += off.iter().sum::<usize>() as f64 / n;
    0.5 * d
}

/// TV between the empirical and exact length marginals.
pub fn length_tv(samples: &[MaskedSeq], target: &TargetDistribution) -> f64 {
    let (counts, n) = frequencies(samples.iter().map(|s| s.len()));
    let n = n.max(1) as f64;
    let exact = target.length_marginal();
    let mut lens: Vec<usize> = counts.keys().chain(exact.keys()).copied().collect();
    lens.sort_unstable();
    lens.dedup();
    0.5 * lens
        .iter()
        .map(|l| {
            (counts.get(l).copied().unwrap_or(0) as f64 / n - exact.get(l).copied().unwrap_or(0.0))
                .abs()
        })
        .sum::<f64>()
}

/// Drops every `pad` token, turning fixed-length outputs into variable-length
/// ones.
pub fn strip_pad(samples: &[MaskedSeq], pad: Token) -> Vec<MaskedSeq> {
    samples
        .iter()
        .map(|s| MaskedSeq::new(s.tokens().iter().copied().filter(|&t| t != pad).collect()))
        .collect()
}

/// Fraction of outputs that decode to a valid path through their subgoals.
pub fn maze_success(outputs: &[MaskedSeq], graph: &PathGraph, subgoals: usize) -> f64 {
    if outputs.is_empty() {
        return 0.0;
    }
    outputs.iter().filter(|s| graph.solves(s, subgoals)).count() as f64 / outputs.len() as f64
}

/// `n` draws from a target's PMF by deterministic proportional allocation.
pub fn proportional_samples(target: &TargetDistribution, n: usize) -> Vec<MaskedSeq> {
    let mut out = Vec::with_capacity(n);
    let mut acc = 0.0;
    for (x, p) in target.atoms() {
        acc += p * n as f64;
        while (out.len() as f64) < acc.round() {
            out.push(x.clone());
        }
    }
    out
}

/// Sizes of the acceptance suite. Thresholds are fixed; only the budgets
/// vary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub seed: u64,
    pub trajectories: usize,
    pub steps: usize,
    pub coarse_steps: usize,
    pub seeds: usize,
    pub kfe_times: usize,
    pub kfe_h: f64,
    pub maze: MazeSpec,
    pub maze_subgoals: Vec<usize>,
    pub maze_prompts: usize,
    pub maze_steps: usize,
    pub maze_layout_seeds: u64,
    pub train: TrainConfig,
    pub kl_samples: usize,
    pub loss_mc: usize,
    pub grad_coords: usize,
    /// Criteria to run; empty runs all ten.
    pub only: Vec<usize>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            seed: 0,
            trajectories: 20_000,
            steps: 512,
            coarse_steps: 8,
            seeds: 5,
            kfe_times: 20,
            kfe_h: 1e-3,
            maze: MazeSpec::default(),
            maze_subgoals: vec![2, 3],
            maze_prompts: 500,
            maze_steps: 256,
            maze_layout_seeds: 20,
            train: TrainConfig::default(),
            kl_samples: 20_000,
            loss_mc: 20_000,
            grad_coords: 100,
            only: Vec::new(),
        }
    }
}

/// One measured quantity compared against its threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub label: String,
    pub measured: f64,
    pub threshold: f64,
    /// `"<="`, `"<"`, `">="` or `"=="`.
    pub relation: String,
    pub passed: bool,
}

impl Check {
    fn at_most(label: impl Into<String>, measured: f64, threshold: f64) -> Check {
        Check::new(label, measured, threshold, "<=", measured <= threshold)
    }

    fn below(label: impl Into<String>, measured: f64, threshold: f64) -> Check {
        Check::new(label, measured, threshold, "<", measured < threshold)
    }

    fn at_least(label: impl Into<String>, measured: f64, threshold: f64) -> Check {
        Check::new(label, measured, threshold, ">=", measured >= threshold)
    }

    fn equals(label: impl Into<String>, measured: f64, threshold: f64) -> Check {
        Check::new(label, measured, threshold, "==", measured == threshold)
    }

    fn new(
        label: impl Into<String>,
        measured: f64,
        threshold: f64,
        relation: &str,
        passed: bool,
    ) -> Check {
        Check {
            label: label.into(),
            measured,
            threshold,
            relation: relation.into(),
            passed: passed && measured.is_finite(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    pub id: usize,
    pub name: String,
    pub passed: bool,
    /// Whether the reported attempt is the retry with a fresh seed.
    pub retried: bool,
    pub checks: Vec<Check>,
    pub error: Option<String>,
}

impl CriterionReport {
    /// One line: status, id, name and every check.
    pub fn line(&self) -> String {
        let status = if self.passed { "PASS" } else { "FAIL" };
        let mut s = format!("[{status}] {:>2} {}", self.id, self.name);
        if self.retried {
            s.push_str(" (retried)");
        }
        if let Some(e) = &self.error {
            s.push_str(&format!(": error: {e}"));
        }
        let checks: Vec<String> = self
            .checks
            .iter()
            .filter(|c| !c.passed || self.checks.len() <= 6)
            .map(|c| {
                if c.relation == "info" {
                    return format!("{}={}", c.label, fmt_num(c.measured));
                }
                format!(
                    "{}={} {} {}",
                    c.label,
                    fmt_num(c.measured),
                    c.relation,
                    fmt_num(c.threshold)
                )
            })
            .collect();
        if !checks.is_empty() {
            s.push_str(": ");
            s.push_str(&checks.join("; "));
        }
        let hidden = self.checks.len()
            - self
                .checks
                .iter()
                .filter(|c| !c.passed || self.checks.len() <= 6)
                .count();
        if hidden > 0 {
            s.push_str(&format!(" (+{hidden} passing checks)"));
        }
        s
    }

    /// Rows `id,name,label,measured,relation,threshold,passed`.
    pub fn csv_rows(&self) -> Vec<String> {
        self.checks
            .iter()
            .map(|c| {
                format!(
                    "{},{},{},{:?},{},{:?},{}",
                    self.id, self.name, c.label, c.measured, c.relation, c.threshold, c.passed
                )
            })
            .collect()
    }
}

fn fmt_num(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e9 {
        format!("{v:.0}")
    } else if v.abs() >= 1e-3 {
        format!("{v:.4}")
    } else {
        format!("{v:.2e}")
    }
}

pub const CSV_HEADER: &str = "id,name,check,measured,relation,threshold,passed";

/// Names of the ten criteria, indexed from 1.
pub const CRITERIA: [&str; 10] = [
    "kfe_exactness",
    "gap_count_identity",
    "vanilla_inference",
    "any_order_inference",
    "schedule_independence",
    "minimizer",
    "kl_bound",
    "length_fidelity",
    "maze",
    "gradient_check",
];

const STATISTICAL: [usize; 6] = [3, 4, 5, 6, 7, 9];

fn bundled_mdm(t: &TargetDistribution) -> Result<MdmOracle> {
    MdmOracle::new(t.padded(bundled::pad_token())?, Schedule::Linear)
}

fn kfe_exactness(cfg: &SuiteConfig, _rng: &mut SimRng) -> Result<Vec<Check>> {
    let cap = state_cap().min(10_000);
    let times: Vec<f64> = (1..=cfg.kfe_times)
        .map(|k| k as f64 / (cfg.kfe_times + 1) as f64)
        .collect();
    let mut checks = Vec::new();
    for (name, t) in bundled::all() {
        let flex = Oracle::new(t.clone(), SchedulePair::linear());
        let mdm = bundled_mdm(&t)?;
        let mut worst_f = 0.0f64;
        let mut worst_m = 0.0f64;
        for &s in &times {
            worst_f = worst_f.max(kfe_residual(&flex, s, cfg.kfe_h, cap)?);
            worst_m = worst_m.max(mdm_kfe_residual(&mdm, s, cfg.kfe_h, cap)?);
        }
        checks.push(Check::at_most(
            format!("flex_residual[{name}]"),
            worst_f,
            1e-6,
        ));
        checks.push(Check::at_most(
            format!("mdm_residual[{name}]"),
            worst_m,
            1e-6,
        ));
    }
    Ok(checks)
}

fn clean_sequences(vocab: u32, max_len: usize) -> Vec<MaskedSeq> {
    let mut out = vec![MaskedSeq::empty()];
    let mut layer = vec![MaskedSeq::empty()];
    for _ in 0..max_len {
        layer = layer
            .iter()
            .flat_map(|s| {
                (0..vocab).map(move |v| {
                    let mut t = s.clone();
                    t.push(Token(v));
                    t
                })
            })
            .collect();
        out.extend(layer.iter().cloned());
    }
    out
}

fn gap_count_identity(_cfg: &SuiteConfig, _rng: &mut SimRng) -> Result<Vec<Check>> {
    // patterns are sequences over {a, b, mask}
    let patterns: Vec<MaskedSeq> = clean_sequences(3, 6)
        .into_iter()
        .map(|s| {
            MaskedSeq::new(
                s.tokens()
                    .iter()
                    .map(|t| if t.0 == 2 { Token::MASK } else { *t })
                    .collect(),
            )
        })
        .collect();
    let mut cases = 0u64;
    let mut mismatches = 0u64;
    for y in clean_sequences(2, 6) {
        for x in patterns.iter().filter(|x| x.len() <= y.len()) {
            for i in 0..=x.len() {
                cases += 1;
                if gap_count(x, i, &y)? != embed_count(&x.insert_at(i, Token::MASK)?, &y)? {
                    mismatches += 1;
                }
            }
        }
    }
    Ok(vec![
        Check::equals("mismatches", mismatches as f64, 0.0),
        Check::at_least("cases", cases as f64, 1.0),
    ])
}

fn vanilla_inference(cfg: &SuiteConfig, rng: &mut SimRng) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for (name, t) in bundled::all() {
        let o = Oracle::new(t.clone(), SchedulePair::linear());
        let fine = AdaptiveConfig::new(Strategy::Vanilla, cfg.steps);
        let coarse = AdaptiveConfig::new(Strategy::Vanilla, cfg.coarse_steps);
        let (mut worst, mut sum_fine, mut sum_coarse) = (0.0f64, 0.0, 0.0);
        for k in 0..cfg.seeds {
            let r = rng.fork(k as u64);
            let a = empirical_tv(&sample_many(&o, &fine, cfg.trajectories, &r.fork(0))?, &t);
            let b = empirical_tv(&sample_many(&o, &coarse, cfg.trajectories, &r.fork(1))?, &t);
            worst = worst.max(a);
            sum_fine += a;
            sum_coarse += b;
        }
        let n = cfg.seeds as f64;
        checks.push(Check::at_most(
            format!("tv_N{}[{name}]", cfg.steps),
            worst,
            0.03,
        ));
        checks.push(Check::below(
            format!("mean_tv_N{}_minus_N{}[{name}]", cfg.steps, cfg.coarse_steps),
            sum_fine / n - sum_coarse / n,
            0.0,
        ));
    }
    Ok(checks)
}

fn any_order_inference(cfg: &SuiteConfig, rng: &mut SimRng) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for strategy in [
        Strategy::Leftmost,
        Strategy::RandomOrder,
        Strategy::TopkConfidence,
        Strategy::TopkSlidingWindow,
    ] {
        for (name, t) in bundled::all() {
            let o = Oracle::new(t.clone(), SchedulePair::linear());
            let sc = AdaptiveConfig::new(strategy, cfg.steps);
            let out = sample_many(&o, &sc, cfg.trajectories, &rng.fork(strategy as u64))?;
            checks.push(Check::at_most(
                format!("tv[{}][{name}]", strategy.name()),
                empirical_tv(&out, &t),
                0.03,
            ));
        }
    }
    Ok(checks)
}

fn schedule_independence(cfg: &SuiteConfig, rng: &mut SimRng) -> Result<Vec<Check>> {
    let linear = SchedulePair::linear();
    let squared = SchedulePair::new(Schedule::Linear, Schedule::polynomial(2.0)?)?;
    let mut checks = Vec::new();
    for (name, t) in bundled::all() {
        let a = Oracle::new(t.clone(), linear.clone());
        let b = Oracle::new(t.clone(), squared.clone());
        let mut differing = 0usize;
        for x in a.reachable_states(state_cap())? {
            for k in 1..20 {
                let s = k as f64 / 20.0;
                for i in x.masked_positions() {
                    if a.unmask_marginal(s, &x, i)? != b.unmask_marginal(s, &x, i)? {
                        differing += 1;
                    }
                }
            }
        }
        checks.push(Check::equals(
            format!("differing_posteriors[{name}]"),
            differing as f64,
            0.0,
        ));
        let sc = AdaptiveConfig::new(Strategy::Vanilla, cfg.steps);
        for (k, (label, o)) in [("beta_t", &a), ("beta_t2", &b)].into_iter().enumerate() {
            let out = sample_many(o, &sc, cfg.trajectories, &rng.fork(k as u64))?;
            checks.push(Check::at_most(
                format!("tv[{label}][{name}]"),
                empirical_tv(&out, &t),
                0.03,
            ));
        }
    }
    Ok(checks)
}

/// Trains on the two-atom target with a seed derived from `rng`, so that a
/// retry also retrains.
fn train_two_atom(cfg: &SuiteConfig, rng: &SimRng) -> Result<(TabularModel, TrainConfig)> {
    let mut tc = cfg.train.clone();
    tc.seed ^= rng.fork(0).seed();
    let (m, _) = train_tabular(&bundled::two_atom(), &SchedulePair::linear(), &tc)?;
    Ok((m, tc))
}

fn minimizer(cfg: &SuiteConfig, rng: &mut SimRng) -> Result<Vec<Check>> {
    let t = bundled::two_atom();
    let pair = SchedulePair::linear();
    let o = Oracle::new(t.clone(), pair.clone());
    let (m, train) = train_two_atom(cfg, rng)?;
    let total = (train.steps * train.batch_size) as u64;
    let cmp = compare_to_oracle(&m, &o, total, 1e-3)?;
    let mut checks = vec![
        Check::at_most("max_g_error", cmp.max_g_err, 0.05),
        Check::at_most("max_f_tv", cmp.max_f_tv, 0.05),
        Check::at_least("entries_compared", cmp.entries as f64, 1.0),
    ];
    for (name, t) in bundled::all() {
        let o = Oracle::new(t.clone(), pair.clone());
        let p = PerturbedOracle::standard(o.clone(), t.vocab_size());
        let mut wins = 0;
        for k in 0..cfg.seeds {
            let r = rng.fork(100 + k as u64);
            let lo = flex_loss(
                &o,
                &t,
                &pair,
                cfg.loss_mc,
                TimeSampling::LowDiscrepancy,
                &mut r.clone(),
            )?;
            let lp = flex_loss(
                &p,
                &t,
                &pair,
                cfg.loss_mc,
                TimeSampling::LowDiscrepancy,
                &mut r.clone(),
            )?;
            if lo.total < lp.total {
                wins += 1;
            }
        }
        checks.push(Check::at_least(
            format!("oracle_wins[{name}]"),
            wins as f64,
            cfg.seeds as f64,
        ));
    }
    Ok(checks)
}

fn kl_bound(cfg: &SuiteConfig, rng: &mut SimRng) -> Result<Vec<Check>> {
    let t = bundled::two_atom();
    let pair = SchedulePair::linear();
    let o = Oracle::new(t.clone(), pair.clone());
    let (m, _) = train_two_atom(cfg, rng)?;
    let p = PerturbedOracle::standard(o.clone(), t.vocab_size());
    let mut checks = Vec::new();
    let a = kl_gap_check(
        &m,
        &o,
        &t,
        &pair,
        cfg.steps,
        cfg.kl_samples,
        cfg.loss_mc,
        &mut rng.fork(0),
    )?;
    checks.push(Check::at_most(
        "kl_minus_gap[trained]",
        a.kl - a.loss_gap,
        a.margin,
    ));
    let b = kl_gap_check(
        &p,
        &o,
        &t,
        &pair,
        cfg.steps,
        cfg.kl_samples,
        cfg.loss_mc,
        &mut rng.fork(1),
    )?;
    checks.push(Check::at_most(
        "kl_minus_gap[perturbed]",
        b.kl - b.loss_gap,
        b.margin,
    ));
    Ok(checks)
}

fn length_fidelity(cfg: &SuiteConfig, rng: &mut SimRng) -> Result<Vec<Check>> {
    let t = bundled::mixed_length();
    let flex = Oracle::new(t.clone(), SchedulePair::linear());
    let mdm = bundled_mdm(&t)?;
    let fine = AdaptiveConfig::new(Strategy::Vanilla, cfg.steps);
    let coarse = AdaptiveConfig::new(Strategy::Vanilla, cfg.coarse_steps);
    let out = sample_many(&flex, &fine, cfg.trajectories, &rng.fork(0))?;
    let mut checks = vec![Check::at_most(
        format!("flex_length_tv_N{}", cfg.steps),
        length_tv(&out, &t),
        0.02,
    )];
    let mut mdm_worse = 0;
    let (mut sf, mut sm) = (0.0, 0.0);
    for k in 0..cfg.seeds {
        let r = rng.fork(10 + k as u64);
        let f = length_tv(
            &sample_many(&flex, &coarse, cfg.trajectories, &r.fork(0))?,
            &t,
        );
        let m = length_tv(
            &strip_pad(
                &sample_many(&mdm, &coarse, cfg.trajectories, &r.fork(1))?,
                bundled::pad_token(),
            ),
            &t,
        );
        sf += f;
        sm += m;
        if m > f {
            mdm_worse += 1;
        }
    }
    let n = cfg.seeds as f64;
    checks.push(Check::at_least(
        format!("seeds_mdm_worse_N{}", cfg.coarse_steps),
        mdm_worse as f64,
        (cfg.seeds / 2 + 1) as f64,
    ));
    checks.push(Check::new(
        format!("mean_flex_length_tv_N{}", cfg.coarse_steps),
        sf / n,
        0.0,
        "info",
        true,
    ));
    checks.push(Check::new(
        format!("mean_mdm_length_tv_N{}", cfg.coarse_steps),
        sm / n,
        0.0,
        "info",
        true,
    ));
    Ok(checks)
}

/// Draws `prompts` subgoal prompts by weight from the maze dataset and
/// completes each with the exact conditional oracle. Returns the path graph
/// and `(prompt, output)` pairs.
pub fn maze_rollouts(
    spec: &MazeSpec,
    prompts: usize,
    sampler: &AdaptiveConfig,
    rng: &SimRng,
) -> Result<(PathGraph, Vec<(MaskedSeq, MaskedSeq)>)> {
    use rayon::prelude::*;
    sampler.validate()?;
    let (graph, target) = spec.build()?;
    let pool = target.prompts();
    let oracles: Vec<Oracle> = pool
        .iter()
        .map(|(p, _)| Ok(Oracle::new(target.conditional(p)?, SchedulePair::linear())))
        .collect::<Result<_>>()?;
    let weights: Vec<(usize, f64)> = pool.iter().enumerate().map(|(i, p)| (i, p.1)).collect();
    let mut pick = rng.fork(0);
    let chosen: Vec<usize> = (0..prompts)
        .map(|_| pick.categorical(&weights).expect("normalized"))
        .collect();
    let runs = chosen
        .par_iter()
        .enumerate()
        .map(|(j, &i)| {
            Ok((
                pool[i].0.clone(),
                run_sampler(&oracles[i], sampler, &mut rng.fork(1 + j as u64))?,
            ))
        })
        .collect::<Result<_>>()?;
    Ok((graph, runs))
}

fn maze(cfg: &SuiteConfig, rng: &mut SimRng) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let defects = (0..cfg.maze_layout_seeds)
        .filter(|&s| perfect_maze_defect(&maze_generate(cfg.maze.m, cfg.maze.n, s, 0.0)).is_some())
        .count();
    checks.push(Check::equals("imperfect_layouts", defects as f64, 0.0));
    for &k in &cfg.maze_subgoals {
        let spec = MazeSpec {
            subgoals: k,
            ..cfg.maze.clone()
        };
        let sc = AdaptiveConfig::new(Strategy::Vanilla, cfg.maze_steps);
        let (graph, runs) = maze_rollouts(&spec, cfg.maze_prompts, &sc, &rng.fork(k as u64))?;
        let outputs: Vec<MaskedSeq> = runs.into_iter().map(|(_, out)| out).collect();
        checks.push(Check::at_least(
            format!("success[K={k}]"),
            maze_success(&outputs, &graph, k),
            0.98,
        ));
    }
    Ok(checks)
}

fn gradient_check(cfg: &SuiteConfig, rng: &mut SimRng) -> Result<Vec<Check>> {
    let t = bundled::mixed_length();
    let pair = SchedulePair::linear();
    let mut r = rng.fork(0);
    let train = TrainConfig {
        steps: 5,
        batch_size: 32,
        n_buckets: 8,
        seed: r.seed(),
        ..Default::default()
    };
    let (m, _) = train_tabular(&t, &pair, &train)?;
    let samples = draw_samples(&t, &pair, 8, 64, TimeSampling::Uniform, &mut r)?;
    let grad = sample_gradient(&m, &samples);
    let mut keys: Vec<_> = grad.keys().cloned().collect();
    keys.sort_by_key(|k| format!("{k:?}"));
    let mut worst = 0.0f64;
    for _ in 0..cfg.grad_coords {
        let k = &keys[r.below(keys.len())];
        let (fd, an) = (finite_difference(&m, &samples, k), grad[k]);
        worst = worst.max((fd - an).abs() / an.abs().max(fd.abs()).max(1e-3));
    }
    Ok(vec![Check::at_most("max_relative_error", worst, 1e-5)])
}

type CriterionFn = fn(&SuiteConfig, &mut SimRng) -> Result<Vec<Check>>;

const RUNNERS: [CriterionFn; 10] = [
    kfe_exactness,
    gap_count_identity,
    vanilla_inference,
    any_order_inference,
    schedule_independence,
    minimizer,
    kl_bound,
    length_fidelity,
    maze,
    gradient_check,
];

/// Runs criterion `id` (1-based). Statistical criteria that fail are run
/// once more with a fresh seed, and the second attempt is reported.
pub fn run_criterion(cfg: &SuiteConfig, id: usize) -> CriterionReport {
    let attempt = |k: u64| {
        let mut rng = SimRng::new(cfg.seed).fork(id as u64 * 16 + k);
        let (checks, error) = match RUNNERS[id - 1](cfg, &mut rng) {
            Ok(c) => (c, None),
            Err(e) => (Vec::new(), Some(e.to_string())),
        };
        CriterionReport {
            id,
            name: CRITERIA[id - 1].into(),
            passed: error.is_none() && checks.iter().all(|c| c.passed),
            retried: k > 0,
            checks,
            error,
        }
    };
    let first = attempt(0);
    if first.passed || !STATISTICAL.contains(&id) {
        return first;
    }
    log::warn!("criterion {id} failed; retrying with a fresh seed");
    attempt(1)
}

/// Runs the selected criteria in order.
pub fn run_suite(cfg: &SuiteConfig) -> Vec<CriterionReport> {
    let ids: Vec<usize> = if cfg.only.is_empty() {
        (1..=10).collect()
    } else {
        cfg.only.clone()
    };
    ids.into_iter()
        .filter(|i| (1..=10).contains(i))
        .map(|i| run_criterion(cfg, i))
        .collect()
}

/// Number of outputs per length, for CSV tables.
pub fn length_histogram(samples: &[MaskedSeq]) -> BTreeMap<usize, usize> {
    let mut h = BTreeMap::new();
    for s in samples {
        *h.entry(s.len()).or_insert(0) += 1;
    }
    h
}
