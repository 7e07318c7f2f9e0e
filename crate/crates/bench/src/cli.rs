use std::fs;
use std::io::Write;
use std::net::TcpListener;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use dualarm_core::env::EnvOptions;
use dualarm_core::policy::attention::{attention_csv, export_attention_map, AttentionNet, AttentionPolicy, NetworkConfig, WeightBundle, WeightError};
use dualarm_core::policy::{Policy, PolicyError, PolicyFactory, PolicyRegistry};
use dualarm_core::{RearrangeEnv, RewardMode, SamplerSpec, Scheme};

use crate::data::{generate, read_instances, write_instances};
use crate::eval::{evaluate, loglog_slope, time_policy, TimingRow};
use crate::report::{write_csv, AggregateRow, BenchReport};
use crate::BenchError;

#[derive(Debug, Parser)]
#[command(name = "dualarm", version, about = "Dual-arm rearrangement benchmark tools")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample instances into a JSON-lines file.
    Gen(GenArgs),
    /// Evaluate one policy on an instance file.
    Eval(EvalArgs),
    /// Measure decision time against object count and fit log-log slopes.
    BenchTime(BenchTimeArgs),
    /// Generate and evaluate the full policy x scheme x n grid.
    ReproduceProtocol(ProtocolArgs),
    /// Serve the environment over JSON lines (stdio unless --tcp is given).
    Serve(ServeArgs),
    /// Write a randomly initialized attention weight file and its sidecar.
    InitWeights(InitWeightsArgs),
    /// Dump per-round arm-to-object probabilities of an attention policy.
    AttentionMap(AttentionMapArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value = "CA")]
    pub scheme: Scheme,
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// random[:salt], greedy, matching_dp, oracle or attention:<weights>
    #[arg(long)]
    pub policy: String,
    #[arg(long)]
    pub instances: PathBuf,
    /// Output prefix; writes <out>.csv, <out>.summary.csv and <out>.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, default_value = "per-round")]
    pub reward_mode: RewardArg,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum RewardArg {
    PerRound,
    Terminal,
}

impl From<RewardArg> for RewardMode {
    fn from(r: RewardArg) -> Self {
        match r {
            RewardArg::PerRound => RewardMode::PerRound,
            RewardArg::Terminal => RewardMode::Terminal,
        }
    }
}

#[derive(Debug, Args)]
pub struct BenchTimeArgs {
    #[arg(long, value_delimiter = ',', default_value = "random,greedy,matching_dp")]
    pub policies: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "4,6,10,14,20,30")]
    pub ns: Vec<usize>,
    #[arg(long, default_value = "CA")]
    pub scheme: Scheme,
    /// Timed instances per n (three more are run first as warm-up).
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Optional CSV output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProtocolArgs {
    #[arg(long, value_delimiter = ',', default_value = "random,greedy,matching_dp")]
    pub policies: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "4,6,10,14,20,30")]
    pub ns: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "FS,CA")]
    pub schemes: Vec<Scheme>,
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Listen address such as 127.0.0.1:7070.
    #[arg(long)]
    pub tcp: Option<String>,
    /// Stop after this many TCP sessions.
    #[arg(long)]
    pub sessions: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InitWeightsArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 128)]
    pub d: usize,
    #[arg(long, default_value_t = 8)]
    pub heads: usize,
    #[arg(long, default_value_t = 128)]
    pub mlp_hidden: usize,
    #[arg(long, default_value_t = 10.0)]
    pub logit_clip: f64,
    #[arg(long)]
    pub no_clip: bool,
    #[arg(long)]
    pub unshared_arm_mlp: bool,
    #[arg(long)]
    pub no_object_encoder: bool,
    #[arg(long)]
    pub no_arm_encoder: bool,
}

#[derive(Debug, Args)]
pub struct AttentionMapArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub instances: PathBuf,
    /// Line of the instance file (0-based).
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long)]
    pub out: PathBuf,
}

fn policy_error(e: PolicyError) -> BenchError {
    match e {
        PolicyError::UnknownPolicy(_) | PolicyError::BadParameter { .. } => BenchError::Args(e.to_string()),
        PolicyError::Weights(WeightError::Io { path, source }) => BenchError::Io {
            path,
            message: source.to_string(),
        },
        PolicyError::Weights(w) => BenchError::Data(w.to_string()),
        other => BenchError::Policy(other.to_string()),
    }
}

fn build(reg: &PolicyRegistry, spec: &str) -> Result<PolicyFactory, BenchError> {
    reg.build(spec).map_err(policy_error)
}

fn print_summary(rows: &[AggregateRow]) {
    println!(
        "{:<24} {:>3} {:>4} {:>6} {:>10} {:>8} {:>8} {:>12}",
        "policy", "sch", "n", "count", "makespan", "stderr", "delay", "decision_s"
    );
    for r in rows {
        println!(
            "{:<24} {:>3} {:>4} {:>6} {:>10.2} {:>8.2} {:>8.4} {:>12.6}",
            r.policy, r.scheme, r.n, r.count, r.mean_makespan, r.stderr_makespan, r.mean_delay_proportion, r.mean_decision_time_s
        );
    }
}

pub fn run(cli: Cli) -> Result<(), BenchError> {
    let reg = PolicyRegistry::builtin();
    match cli.command {
        Command::Gen(a) => {
            let insts = generate(&SamplerSpec::new(a.n, a.scheme, a.seed), a.count)?;
            if a.count == 0 {
                eprintln!("warning: --count 0, writing an empty instance file");
            }
            write_instances(&a.out, &insts)
        }
        Command::Eval(a) => {
            let factory = build(&reg, &a.policy)?;
            let instances = read_instances(&a.instances)?;
            let options = EnvOptions {
                reward_mode: a.reward_mode.into(),
                ..EnvOptions::default()
            };
            let rows = evaluate(&a.policy, &factory, &instances, options, a.jobs)?;
            let report = BenchReport::new(rows);
            report.write(&a.out)?;
            print_summary(&report.aggregates);
            Ok(())
        }
        Command::BenchTime(a) => {
            let mut rows: Vec<TimingRow> = Vec::new();
            println!("{:<24} {:>4} {:>14} {:>14}", "policy", "n", "decision_s", "episode_s");
            for spec in &a.policies {
                let factory = build(&reg, spec)?;
                for &n in &a.ns {
                    let r = time_policy(spec, &factory, n, a.scheme, a.count, a.seed)?;
                    println!("{:<24} {:>4} {:>14.6e} {:>14.6e}", spec, n, r.mean_decision_time_s, r.mean_episode_time_s);
                    rows.push(r);
                }
            }
            for spec in &a.policies {
                let pts: Vec<(f64, f64)> = rows
                    .iter()
                    .filter(|r| &r.policy == spec)
                    .map(|r| (r.n as f64, r.mean_decision_time_s))
                    .collect();
                match loglog_slope(&pts) {
                    Some(s) => println!("slope {spec}: {s:.3}"),
                    None => println!("slope {spec}: n/a"),
                }
            }
            if let Some(out) = &a.out {
                write_csv(out, &rows)?;
            }
            Ok(())
        }
        Command::ReproduceProtocol(a) => {
            fs::create_dir_all(&a.out_dir).map_err(BenchError::io(&a.out_dir))?;
            let factories = a
                .policies
                .iter()
                .map(|p| build(&reg, p).map(|f| (p.clone(), f)))
                .collect::<Result<Vec<_>, _>>()?;
            let mut rows = Vec::new();
            for &scheme in &a.schemes {
                for &n in &a.ns {
                    let insts = generate(&SamplerSpec::new(n, scheme, a.seed), a.count)?;
                    write_instances(&a.out_dir.join(format!("{scheme}_n{n}.jsonl")), &insts)?;
                    for (name, factory) in &factories {
                        if name == "oracle" && n > dualarm_core::policy::oracle::ORACLE_MAX_OBJECTS {
                            continue;
                        }
                        eprintln!("{scheme} n={n} {name}");
                        rows.extend(evaluate(name, factory, &insts, EnvOptions::default(), a.jobs)?);
                    }
                }
            }
            let report = BenchReport::new(rows);
            report.write(&a.out_dir.join("report"))?;
            print_summary(&report.aggregates);
            Ok(())
        }
        Command::Serve(a) => {
            let res = match a.tcp {
                Some(addr) => {
                    let listener = TcpListener::bind(&addr).map_err(|e| BenchError::Args(format!("bind {addr}: {e}")))?;
                    eprintln!("listening on {}", listener.local_addr().map(|a| a.to_string()).unwrap_or(addr));
                    dualarm_server::serve_tcp(listener, a.sessions)
                }
                None => dualarm_server::serve_stdio(),
            };
            res.map_err(|e| BenchError::Io {
                path: PathBuf::from("<session>"),
                message: e.to_string(),
            })
        }
        Command::InitWeights(a) => {
            let config = NetworkConfig {
                d: a.d,
                heads: a.heads,
                mlp_hidden: a.mlp_hidden,
                logit_clip: (!a.no_clip).then_some(a.logit_clip),
                shared_arm_mlp: !a.unshared_arm_mlp,
                object_encoder: !a.no_object_encoder,
                arm_encoder: !a.no_arm_encoder,
            };
            config.validate().map_err(|e| BenchError::Args(e.to_string()))?;
            WeightBundle::random(config, a.seed)
                .write(&a.out)
                .map_err(|e| policy_error(e.into()))
        }
        Command::AttentionMap(a) => {
            let net = AttentionNet::load(&a.weights).map_err(|e| policy_error(e.into()))?;
            let instances = read_instances(&a.instances)?;
            let inst = instances
                .get(a.index)
                .ok_or_else(|| BenchError::Args(format!("index {} out of range ({} instances)", a.index, instances.len())))?;
            let mut policy = AttentionPolicy::new(std::sync::Arc::new(net));
            policy.begin_episode(inst).map_err(policy_error)?;
            let mut env = RearrangeEnv::new(inst.clone());
            let mut rows = Vec::new();
            while !env.is_done() {
                let pair = policy.decide(&env).map_err(policy_error)?;
                let out = policy.last_output().expect("decide stores its output");
                rows.extend(export_attention_map(out, env.round() + 1));
                env.step(pair).map_err(|e| policy_error(e.into()))?;
            }
            let mut f = fs::File::create(&a.out).map_err(BenchError::io(&a.out))?;
            f.write_all(attention_csv(&rows).as_bytes()).map_err(BenchError::io(&a.out))?;
            println!("makespan {} over {} rounds", env.log().makespan, env.round());
            Ok(())
        }
    }
}
