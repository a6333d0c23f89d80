use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use gridmatch::config::{RunConfig, CONFIG_ENV};
use gridmatch::coordinator::{run_day, DayConfig, IhrPolicy};
use gridmatch::learn::{curve_to_csv, initial_state, train};
use gridmatch::netmodel::{parse_network, parse_partition, validate_partition, BusLoad, IhrPartition, NetworkModel};
use gridmatch::nn::checkpoint::Checkpoint;
use gridmatch::opf::{parse_instance, reduce_network, residuals, solve, solver_settings, OpfStatus};
use gridmatch::scenario::gen_scenario;
use gridmatch::{Error, Result};

/// Grid-aware matching of flexible loads to local renewable supply.
#[derive(Parser, Debug)]
#[command(name = "gridmatch", version)]
struct Cli {
    /// Worker threads for parallel rollouts and markets (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args, Debug)]
struct ConfigArgs {
    /// Run configuration (TOML). Falls back to $GRIDMATCH_CONFIG.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output directory, overriding the config.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Network commands.
    Net {
        #[command(subcommand)]
        cmd: NetCmd,
    },
    /// Scenario commands.
    Scenario {
        #[command(subcommand)]
        cmd: ScenarioCmd,
    },
    /// Train one agent per IHR, plus the pooled agent when centralized
    /// evaluation is configured.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Continue from existing checkpoints in the output directory.
        #[arg(long)]
        resume: bool,
        /// Total epochs, overriding the config.
        #[arg(long)]
        epochs: Option<u64>,
    },
    /// Evaluate LA and MA over held-out days in each configured mode.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Checkpoint directory (default: <out>/checkpoints).
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
    /// Standalone OPF commands.
    Opf {
        #[command(subcommand)]
        cmd: OpfCmd,
    },
}

#[derive(Subcommand, Debug)]
enum NetCmd {
    /// Check that every zone's voltage spread stays below delta at peak load.
    Validate {
        /// Network file, or "ieee33". Overrides the config.
        #[arg(long)]
        network: Option<String>,
        /// Partition file, "ieee33" or "singleton". Overrides the config.
        #[arg(long)]
        partition: Option<String>,
        /// Delta for a singleton partition.
        #[arg(long)]
        delta: Option<f64>,
        /// Peak load as a multiple of the nominal bus loads.
        #[arg(long, default_value_t = 0.5)]
        load_scale: f64,
        #[arg(long, short)]
        config: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum ScenarioCmd {
    /// Generate episode files.
    Gen {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// First seed (default: the scenario seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Number of consecutive seeds to generate.
        #[arg(long, default_value_t = 1)]
        count: u64,
    },
}

#[derive(Subcommand, Debug)]
enum OpfCmd {
    /// Solve one instance file; writes solution.csv and residuals.csv.
    Solve {
        /// Instance CSV.
        #[arg(long, short)]
        instance: PathBuf,
        #[arg(long, short, default_value = ".")]
        out: PathBuf,
    },
}

/// Exit status: 1 for usage, configuration and file problems; 2 for a
/// domain failure.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Parse { .. } | Error::Config(_) | Error::Network(_) | Error::Partition(_) => 1,
        _ => 2,
    }
}

fn config_path(arg: Option<PathBuf>) -> Result<PathBuf> {
    arg.or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from))
        .ok_or_else(|| Error::Config(format!("no config given (use --config or set {CONFIG_ENV})")))
}

fn load_config(args: ConfigArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&config_path(args.config)?)?;
    if let Some(out) = args.out {
        cfg.out_dir = out;
    }
    Ok(cfg)
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::Io {
        path: p.display().to_string(),
        source: e,
    })
}

fn write(p: &Path, text: &str) -> Result<()> {
    if let Some(dir) = p.parent() {
        mkdir(dir)?;
    }
    std::fs::write(p, text).map_err(|e| Error::Io {
        path: p.display().to_string(),
        source: e,
    })
}

fn read(p: &Path) -> Result<String> {
    std::fs::read_to_string(p).map_err(|e| Error::Io {
        path: p.display().to_string(),
        source: e,
    })
}

fn net_validate(
    network: Option<String>,
    partition: Option<String>,
    delta: Option<f64>,
    load_scale: f64,
    config: Option<PathBuf>,
) -> Result<u8> {
    let (net, part) = match (network, partition) {
        (Some(nf), Some(pf)) => {
            let net = if nf == "ieee33" {
                NetworkModel::ieee33()
            } else {
                parse_network(&read(Path::new(&nf))?)?
            };
            let part = match pf.as_str() {
                "ieee33" => IhrPartition::ieee33(&net),
                "singleton" => IhrPartition::singleton(
                    &net,
                    delta.ok_or_else(|| Error::Config("singleton partition needs --delta".into()))?,
                )?,
                f => parse_partition(&read(Path::new(f))?, &net)?,
            };
            (net, part)
        }
        (None, None) => {
            let path = config_path(config)?;
            let cfg = RunConfig::load(&path)?;
            (cfg.net, cfg.partition)
        }
        _ => return Err(Error::Config("give both --network and --partition, or a config".into())),
    };
    let loads: Vec<BusLoad> = net
        .nominal_loads()
        .iter()
        .map(|l| BusLoad::new(l.p_kw * load_scale, l.q_kvar * load_scale))
        .collect();
    let rep = validate_partition(&net, &part, &loads)?;
    println!("zone,spread,v_min,v_max,status");
    for z in &rep.zones {
        let ok = z.spread < rep.delta;
        println!(
            "{},{:.6},{:.6},{:.6},{}",
            z.ihr,
            z.spread,
            z.v_min,
            z.v_max,
            if ok { "ok" } else { "FAIL" }
        );
    }
    if rep.pass {
        println!("partition valid: every zone spread < delta = {}", rep.delta);
        Ok(0)
    } else {
        for z in rep.failing() {
            eprintln!("zone {} spread {:.6} >= delta {}", z.ihr, z.spread, rep.delta);
        }
        Ok(2)
    }
}

fn scenario_gen(cfg: &RunConfig, seed: Option<u64>, count: u64) -> Result<u8> {
    let first = seed.unwrap_or(cfg.scenario.seed);
    for s in first..first + count {
        let data = gen_scenario(&cfg.scenario, s)?;
        let path = cfg.out_dir.join("scenario").join(format!("episode_{s}.csv"));
        write(&path, &data.to_csv())?;
        println!("{}", path.display());
    }
    Ok(0)
}

fn ckpt_path(dir: &Path, ihr: u32) -> PathBuf {
    dir.join(format!("ihr{ihr}.ckpt"))
}

fn cmd_train(cfg: &RunConfig, resume: bool) -> Result<u8> {
    let ck_dir = cfg.out_dir.join("checkpoints");
    mkdir(&ck_dir)?;
    let mut timing = String::from("ihr,epochs,seconds\n");
    for ihr in cfg.markets() {
        let enc = cfg.encoder(ihr)?;
        let path = ckpt_path(&ck_dir, ihr);
        let curve_path = cfg.out_dir.join(format!("train_ihr{ihr}.csv"));
        let mut state = if resume && path.exists() {
            let ck = Checkpoint::load(&path)?;
            cfg.restore_agent(ihr, &ck)?;
            ck
        } else {
            initial_state(&cfg.fresh_agent(ihr)?, &cfg.train.train)
        };
        let start = state.epoch;
        let t0 = Instant::now();
        let result = train(&cfg.train.train, enc, &mut state, ihr, |e| {
            cfg.episode(ihr, cfg.train_episode_seed(e))
        });
        // keep the last good state even when training stops early
        state.save(&path)?;
        let mut curve = result?;
        let secs = t0.elapsed().as_secs_f64();
        if resume && start > 0 && curve_path.exists() {
            let mut old = read(&curve_path)?;
            // the running average spans the whole run, not just this call
            let prior: Vec<f64> = old
                .lines()
                .skip(1)
                .filter_map(|l| l.split(',').nth(1)?.parse().ok())
                .collect();
            let mut sum: f64 = prior.iter().sum();
            for (i, r) in curve.iter_mut().enumerate() {
                sum += r.welfare;
                r.running_avg = sum / (prior.len() + i + 1) as f64;
            }
            let csv = curve_to_csv(&curve);
            old.push_str(csv.split_once('\n').map_or("", |(_, rows)| rows));
            write(&curve_path, &old)?;
        } else {
            write(&curve_path, &curve_to_csv(&curve))?;
        }
        let _ = writeln!(timing, "{ihr},{},{secs:.3}", state.epoch - start);
        let last = curve.last();
        println!(
            "market {ihr}: epochs {start}..{} welfare {:.4} (MA {:.4}) in {secs:.1}s",
            state.epoch,
            last.map_or(f64::NAN, |r| r.running_avg),
            if curve.is_empty() {
                f64::NAN
            } else {
                curve.iter().map(|r| r.ma_welfare).sum::<f64>() / curve.len() as f64
            },
        );
    }
    write(&cfg.out_dir.join("timing.csv"), &timing)?;
    Ok(0)
}

fn cmd_eval(cfg: &RunConfig, ck_dir: Option<PathBuf>) -> Result<u8> {
    let ck_dir = ck_dir.unwrap_or_else(|| cfg.out_dir.join("checkpoints"));
    let mut la = BTreeMap::new();
    let mut ma = BTreeMap::new();
    for ihr in cfg.markets() {
        let path = ckpt_path(&ck_dir, ihr);
        let agent = cfg.restore_agent(ihr, &Checkpoint::load(&path)?)?;
        la.insert(ihr, IhrPolicy::Learned(agent));
        ma.insert(ihr, IhrPolicy::MatchOnArrival);
    }
    let reduced = reduce_network(&cfg.net, &cfg.partition)?;
    let eval_dir = cfg.out_dir.join("eval");
    let mut summary =
        String::from("policy,mode,episodes,avg_pre_welfare,avg_post_welfare,violations,voltage_excursions\n");
    let mut cells: BTreeMap<(&str, &str), f64> = BTreeMap::new();
    let mut excursions_total = 0;
    let n = cfg.eval.episodes.max(1);
    for (name, policies) in [("la", &la), ("ma", &ma)] {
        for &mode in &cfg.eval.modes {
            let (mut pre, mut post, mut viol, mut exc) = (0.0, 0.0, 0, 0);
            let cell = eval_dir.join(format!("{name}_{}", mode.as_str()));
            for i in 0..cfg.eval.episodes {
                let seed = cfg.eval.seed + i as u64;
                let data = gen_scenario(&cfg.scenario, seed)?;
                let day = run_day(
                    &data,
                    policies,
                    &reduced,
                    &DayConfig {
                        prices: cfg.eval.prices,
                        settings: cfg.solver,
                        rule: cfg.eval.rule,
                        seed,
                        mode,
                    },
                )?;
                pre += day.total_pre();
                post += day.total_post();
                viol += day.violations().count();
                exc += day.voltage_excursions(1e-6).len();
                write(&cell.join(format!("ep{i}_welfare.csv")), &day.welfare_csv())?;
                write(&cell.join(format!("ep{i}_voltage.csv")), &day.voltage_csv())?;
                write(&cell.join(format!("ep{i}_curtailment.csv")), &day.curtailment_csv())?;
                write(&cell.join(format!("ep{i}_violations.csv")), &day.violations_csv())?;
            }
            let avg = post / n as f64;
            cells.insert((name, mode.as_str()), avg);
            excursions_total += exc;
            let _ = writeln!(
                summary,
                "{name},{},{},{},{avg},{viol},{exc}",
                mode.as_str(),
                cfg.eval.episodes,
                pre / n as f64
            );
        }
    }
    write(&eval_dir.join("summary.csv"), &summary)?;

    let mut table = String::from("Average social welfare\n");
    let _ = write!(table, "{:<8}", "");
    for m in &cfg.eval.modes {
        let _ = write!(table, "{:>16}", m.as_str());
    }
    table.push('\n');
    for name in ["la", "ma"] {
        let _ = write!(table, "{:<8}", name.to_uppercase());
        for m in &cfg.eval.modes {
            let _ = write!(table, "{:>16.4}", cells[&(name, m.as_str())]);
        }
        table.push('\n');
    }
    write(&eval_dir.join("summary.txt"), &table)?;
    print!("{table}");
    if excursions_total > 0 {
        eprintln!("warning: {excursions_total} node voltages outside their bounds");
    }
    Ok(0)
}

fn opf_solve(instance: &Path, out: &Path) -> Result<u8> {
    let inst = parse_instance(&read(instance)?)?;
    let sol = solve(&inst, &solver_settings())?;
    let res = residuals(&inst, &sol);
    write(&out.join("solution.csv"), &sol.to_csv(&inst))?;
    write(&out.join("residuals.csv"), &res.to_csv())?;
    match sol.status {
        OpfStatus::Optimal => {
            println!(
                "optimal: objective {:.6} $, P_G {:.6} pu, max residual {:.3e}",
                sol.objective,
                sol.p_g,
                res.max()
            );
            Ok(0)
        }
        _ => {
            eprintln!("{}: {}", sol.status.as_str(), sol.message);
            Ok(2)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match cli.cmd {
        Cmd::Net {
            cmd:
                NetCmd::Validate {
                    network,
                    partition,
                    delta,
                    load_scale,
                    config,
                },
        } => net_validate(network, partition, delta, load_scale, config),
        Cmd::Scenario {
            cmd: ScenarioCmd::Gen { cfg, seed, count },
        } => scenario_gen(&load_config(cfg)?, seed, count),
        Cmd::Train { cfg, resume, epochs } => {
            let mut cfg = load_config(cfg)?;
            if let Some(e) = epochs {
                cfg.train.train.epochs = e;
            }
            cmd_train(&cfg, resume)
        }
        Cmd::Eval { cfg, checkpoints } => cmd_eval(&load_config(cfg)?, checkpoints),
        Cmd::Opf {
            cmd: OpfCmd::Solve { instance, out },
        } => opf_solve(&instance, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
