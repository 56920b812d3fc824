//! `flexctmc`: sampling, oracle queries, verification, training and maze
//! runs driven by JSON configs.

mod config;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::info;

use flexctmc::ctmc::{sample_many, AdaptiveConfig, Strategy};
use flexctmc::harness::{
    empirical_tv, length_histogram, length_tv, maze_rollouts, run_suite, strip_pad, SuiteConfig,
    CSV_HEADER,
};
use flexctmc::learn::{compare_to_oracle, train_tabular, TabularModel};
use flexctmc::loss::PerturbedOracle;
use flexctmc::oracle::{flex_reachable, mdm_reachable, state_cap, MdmOracle, Oracle, RateSource};
use flexctmc::sequence::Alphabet;
use flexctmc::{MaskedSeq, SimRng};

use config::{ConfigError, MazeConfig, OracleConfig, OracleKind, SampleConfig, TrainFileConfig};

#[derive(Parser)]
#[command(
    name = "flexctmc",
    version,
    about = "Variable-length masked diffusion on explicit targets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; outputs do not depend on this
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Directory for output files
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SamplerFlags {
    /// Number of grid points of the sampler
    #[arg(long)]
    steps: Option<usize>,
    /// vanilla, topk_confidence, topk_sliding_window, leftmost or random_order
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Sliding-window confidence scale
    #[arg(long)]
    gamma1: Option<f64>,
    /// Sliding-window width
    #[arg(long)]
    gamma2: Option<usize>,
}

impl SamplerFlags {
    fn apply(&self, cfg: &mut AdaptiveConfig) {
        if let Some(n) = self.steps {
            cfg.steps = n;
        }
        if let Some(s) = self.strategy {
            cfg.strategy = s;
        }
        if let Some(g) = self.gamma1 {
            cfg.gamma1 = g;
        }
        if let Some(g) = self.gamma2 {
            cfg.gamma2 = g;
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Draw sequences with an exact, perturbed or trained rate source
    Sample {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sampler: SamplerFlags,
        /// Number of trajectories
        #[arg(long)]
        samples: Option<usize>,
        /// flex, mdm, perturbed, or a trained model file
        #[arg(long)]
        rate_source: Option<String>,
    },
    /// Tabulate exact unmasking posteriors and insertion expectations
    Oracle {
        #[command(flatten)]
        common: Common,
        /// Comma-separated query times
        #[arg(long, value_delimiter = ',')]
        times: Option<Vec<f64>>,
    },
    /// Run the acceptance criteria and write a report
    Verify {
        #[command(flatten)]
        common: Common,
        /// Comma-separated criterion ids
        #[arg(long, value_delimiter = ',')]
        only: Option<Vec<usize>>,
    },
    /// Fit the tabular model and write its checkpoint and loss curve
    Train {
        #[command(flatten)]
        common: Common,
        /// Optimizer steps
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Generate a maze and score oracle path completions
    Maze {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sampler: SamplerFlags,
        /// Number of subgoal prompts
        #[arg(long)]
        prompts: Option<usize>,
    },
}

/// Verification ran and at least one criterion failed.
#[derive(Debug)]
struct VerifyFailed(usize);

impl std::fmt::Display for VerifyFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} criteria failed", self.0)
    }
}

impl std::error::Error for VerifyFailed {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    use flexctmc::Error as E;
    if e.downcast_ref::<VerifyFailed>().is_some() {
        return 1;
    }
    if e.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    match e.downcast_ref::<E>() {
        Some(
            E::Config(_)
            | E::Schedule(_)
            | E::StateCap { .. }
            | E::BadWeight(_)
            | E::EmptySupport
            | E::ClampMismatch
            | E::InvalidToken(_)
            | E::MaskInClean,
        ) => 2,
        _ => 1,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Sample {
            common,
            sampler,
            samples,
            rate_source,
        } => {
            let mut cfg: SampleConfig = config::load(&common.config)?;
            sampler.apply(&mut cfg.sampler);
            if let Some(n) = samples {
                cfg.samples = n;
            }
            if let Some(r) = rate_source {
                cfg.rate_source = r;
            }
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            prepare(&common)?;
            sample(&cfg, &common.out_dir)
        }
        Command::Oracle { common, times } => {
            let mut cfg: OracleConfig = config::load(&common.config)?;
            if let Some(t) = times {
                cfg.times = t;
            }
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            prepare(&common)?;
            oracle(&cfg, &common.out_dir)
        }
        Command::Verify { common, only } => {
            let mut cfg: SuiteConfig = config::load(&common.config)?;
            if let Some(o) = only {
                cfg.only = o;
            }
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            if let Some(&bad) = cfg.only.iter().find(|i| !(1..=10).contains(*i)) {
                return Err(ConfigError(format!("criterion {bad} does not exist")).into());
            }
            cfg.train.validate()?;
            prepare(&common)?;
            verify(&cfg, &common.out_dir)
        }
        Command::Train { common, steps } => {
            let mut cfg: TrainFileConfig = config::load(&common.config)?;
            if let Some(n) = steps {
                cfg.train.steps = n;
            }
            if let Some(s) = common.seed {
                cfg.train.seed = s;
            }
            prepare(&common)?;
            train(&cfg, &common.out_dir)
        }
        Command::Maze {
            common,
            sampler,
            prompts,
        } => {
            let mut cfg: MazeConfig = config::load(&common.config)?;
            sampler.apply(&mut cfg.sampler);
            if let Some(n) = prompts {
                cfg.prompts = n;
            }
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            prepare(&common)?;
            maze(&cfg, &common.out_dir)
        }
    }
}

/// Sizes the thread pool and creates the output directory.
fn prepare(common: &Common) -> anyhow::Result<()> {
    if common.threads == 0 {
        return Err(ConfigError("--threads must be at least 1".into()).into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(common.threads)
        .build_global()
        .context("thread pool")?;
    fs::create_dir_all(&common.out_dir)
        .with_context(|| format!("creating {}", common.out_dir.display()))?;
    Ok(())
}

fn write(dir: &Path, name: &str, body: &str) -> anyhow::Result<()> {
    let path = dir.join(name);
    fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn write_json<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> anyhow::Result<()> {
    write(dir, name, &(serde_json::to_string_pretty(value)? + "\n"))
}

/// Quotes a CSV field when it needs it.
fn field(s: &str) -> String {
    if s.contains([',', '"', '\n']) || s.is_empty() {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn sample(cfg: &SampleConfig, out: &Path) -> anyhow::Result<()> {
    cfg.sampler.validate()?;
    let loaded = cfg.target.load()?;
    let (target, alpha) = (&loaded.target, &loaded.alphabet);
    let rng = SimRng::new(cfg.seed);
    let n = cfg.samples;
    let outputs = match cfg.rate_source.as_str() {
        "flex" => sample_many(
            &Oracle::new(target.clone(), cfg.schedules.clone()),
            &cfg.sampler,
            n,
            &rng,
        )?,
        "perturbed" => {
            let inner = Oracle::new(target.clone(), cfg.schedules.clone());
            let p = PerturbedOracle::standard(inner, target.vocab_size());
            sample_many(&p, &cfg.sampler, n, &rng)?
        }
        "mdm" => {
            let pad = config::pad_token(target);
            let o = MdmOracle::new(target.padded(pad)?, cfg.schedules.unmasking.clone())?;
            strip_pad(&sample_many(&o, &cfg.sampler, n, &rng)?, pad)
        }
        path => {
            let text = fs::read_to_string(path).map_err(|e| {
                ConfigError(format!(
                    "rate source {path:?} is not flex, mdm, perturbed or a model file: {e}"
                ))
            })?;
            let model: TabularModel = serde_json::from_str(&text)
                .map_err(|e| ConfigError(format!("model {path}: {e}")))?;
            if model.vocab_size() != target.vocab_size()
                || model.initial_state() != target.clamp_prefix()
            {
                bail!(ConfigError(format!(
                    "model {path} was trained on a different target"
                )));
            }
            sample_many(&model, &cfg.sampler, n, &rng)?
        }
    };

    let mut rows = String::from("index,length,sequence\n");
    for (k, s) in outputs.iter().enumerate() {
        writeln!(rows, "{k},{},{}", s.len(), field(&alpha.render(s)))?;
    }
    write(out, "samples.csv", &rows)?;

    let mut dist: BTreeMap<String, (usize, f64)> = BTreeMap::new();
    for (x, p) in target.atoms() {
        dist.entry(alpha.render(x)).or_default().1 = *p;
    }
    for s in &outputs {
        dist.entry(alpha.render(s)).or_default().0 += 1;
    }
    let denom = n.max(1) as f64;
    let mut rows = String::from("sequence,count,empirical,target\n");
    for (s, (c, p)) in &dist {
        writeln!(rows, "{},{c},{},{p}", field(s), *c as f64 / denom)?;
    }
    write(out, "distribution.csv", &rows)?;

    let hist = length_histogram(&outputs);
    let exact = target.length_marginal();
    let lens: std::collections::BTreeSet<usize> =
        hist.keys().chain(exact.keys()).copied().collect();
    let mut rows = String::from("length,count,empirical,target\n");
    for l in lens {
        let c = hist.get(&l).copied().unwrap_or(0);
        let p = exact.get(&l).copied().unwrap_or(0.0);
        writeln!(rows, "{l},{c},{},{p}", c as f64 / denom)?;
    }
    write(out, "lengths.csv", &rows)?;

    let summary = serde_json::json!({
        "samples": n,
        "rate_source": cfg.rate_source,
        "sampler": cfg.sampler,
        "seed": cfg.seed,
        "tv": empirical_tv(&outputs, target),
        "length_tv": length_tv(&outputs, target),
    });
    write_json(out, "summary.json", &summary)?;
    println!(
        "{n} samples: tv={:.4} length_tv={:.4}",
        summary["tv"].as_f64().unwrap_or(f64::NAN),
        summary["length_tv"].as_f64().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn oracle(cfg: &OracleConfig, out: &Path) -> anyhow::Result<()> {
    let loaded = cfg.target.load()?;
    let target = &loaded.target;
    if let Some(&t) = cfg.times.iter().find(|t| !(0.0..1.0).contains(*t)) {
        bail!(ConfigError(format!("query time {t} outside [0, 1)")));
    }
    let (source, states, alpha): (Box<dyn RateSource>, Vec<MaskedSeq>, &Alphabet) = match cfg.kind {
        OracleKind::Flex => (
            Box::new(Oracle::new(target.clone(), cfg.schedules.clone())),
            flex_reachable(target, state_cap())?,
            &loaded.alphabet,
        ),
        OracleKind::Mdm => {
            let padded = target.padded(config::pad_token(target))?;
            let states = mdm_reachable(&padded, state_cap())?;
            let o = MdmOracle::new(padded, cfg.schedules.unmasking.clone())?;
            (Box::new(o), states, &loaded.alphabet)
        }
    };
    let states: Vec<MaskedSeq> = if cfg.states.is_empty() {
        states
    } else {
        cfg.states
            .iter()
            .map(|s| alpha.parse(s))
            .collect::<Result<_, _>>()?
    };
    let mut rows = String::from("t,state,kind,position,token,value\n");
    for &t in &cfg.times {
        for x in &states {
            let pred = match source.predict(t, x) {
                Ok(p) => p,
                Err(flexctmc::Error::Unreachable) => {
                    bail!(ConfigError(format!(
                        "state {:?} is unreachable",
                        alpha.render(x)
                    )))
                }
                Err(e) => return Err(e.into()),
            };
            let sx = field(&alpha.render(x));
            for (i, row) in pred.unmask.iter().enumerate() {
                for &(v, p) in row {
                    let glyph = alpha.render(&MaskedSeq::new(vec![v]));
                    writeln!(rows, "{t},{sx},unmask,{i},{},{p}", field(&glyph))?;
                }
            }
            for (i, g) in pred.insert.iter().enumerate() {
                writeln!(rows, "{t},{sx},insert,{i},,{g}")?;
            }
        }
    }
    write(out, "oracle.csv", &rows)?;
    println!("{} states at {} times", states.len(), cfg.times.len());
    Ok(())
}

fn verify(cfg: &SuiteConfig, out: &Path) -> anyhow::Result<()> {
    let reports = run_suite(cfg);
    let mut rows = format!("{CSV_HEADER}\n");
    for r in &reports {
        println!("{}", r.line());
        for row in r.csv_rows() {
            rows.push_str(&row);
            rows.push('\n');
        }
    }
    write(out, "criteria.csv", &rows)?;
    write_json(
        out,
        "report.json",
        &serde_json::json!({ "config": cfg, "criteria": reports }),
    )?;
    let failed = reports.iter().filter(|r| !r.passed).count();
    println!("{} passed, {failed} failed", reports.len() - failed);
    if failed > 0 {
        return Err(VerifyFailed(failed).into());
    }
    Ok(())
}

fn train(cfg: &TrainFileConfig, out: &Path) -> anyhow::Result<()> {
    cfg.train.validate()?;
    let target = cfg.target.load()?.target;
    let (model, curve) = train_tabular(&target, &cfg.schedules, &cfg.train)?;
    write_json(out, "model.json", &model)?;
    let mut rows = String::from("step,loss\n");
    for p in &curve {
        writeln!(rows, "{},{}", p.step, p.loss)?;
    }
    write(out, "curve.csv", &rows)?;
    let oracle = Oracle::new(target, cfg.schedules.clone());
    let seen = (cfg.train.steps * cfg.train.batch_size) as u64;
    let cmp = compare_to_oracle(&model, &oracle, seen, 1e-3)?;
    let summary = serde_json::json!({
        "entries": model.len(),
        "final_loss": curve.last().map(|p| p.loss),
        "compared_entries": cmp.entries,
        "max_g_err": cmp.max_g_err,
        "max_f_tv": cmp.max_f_tv,
    });
    write_json(out, "summary.json", &summary)?;
    println!(
        "{} entries; vs oracle on {} frequent entries: max |g err| {:.4}, max f TV {:.4}",
        model.len(),
        cmp.entries,
        cmp.max_g_err,
        cmp.max_f_tv
    );
    Ok(())
}

fn maze(cfg: &MazeConfig, out: &Path) -> anyhow::Result<()> {
    let rng = SimRng::new(cfg.seed);
    let (graph, runs) = maze_rollouts(&cfg.maze, cfg.prompts, &cfg.sampler, &rng)?;
    write(out, "maze.txt", &graph.grid().to_text())?;
    write(out, "maze.csv", &graph.grid().to_csv())?;

    let mut rows = String::from("token,row,col\n");
    for c in graph.nodes() {
        writeln!(rows, "{},{},{}", graph.token(c).0, c.0, c.1)?;
    }
    writeln!(rows, "{},,", graph.sep().0)?;
    write(out, "tokens.csv", &rows)?;

    let alpha = Alphabet::Numeric;
    let k = cfg.maze.subgoals;
    let mut solved = 0;
    let mut rows = String::from("index,prompt,output,solved\n");
    for (j, (prompt, output)) in runs.iter().enumerate() {
        let ok = graph.solves(output, k);
        solved += ok as usize;
        writeln!(
            rows,
            "{j},{},{},{}",
            field(&alpha.render(prompt)),
            field(&alpha.render(output)),
            ok as u8
        )?;
    }
    write(out, "rollouts.csv", &rows)?;
    let rate = solved as f64 / runs.len().max(1) as f64;
    write_json(
        out,
        "summary.json",
        &serde_json::json!({ "prompts": runs.len(), "subgoals": k, "solved": solved, "success": rate }),
    )?;
    println!("success {solved}/{} = {rate:.4}", runs.len());
    Ok(())
}
