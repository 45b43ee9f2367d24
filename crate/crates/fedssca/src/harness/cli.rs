//! Command-line driver: `train`, `grid`, and `compare` subcommands.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::baselines::{self};
use crate::error::{Error, Result};
use crate::federation::{self, ClientShard, RoundTrace};
use crate::harness::config::{preset, DataSpec, ExperimentSpec, Mode};
use crate::harness::data::{gen_synthetic, load_idx, split_train_test};
use crate::harness::report::{self, Summary};
use crate::model::{DataMatrix, Sample};

#[derive(Parser)]
#[command(name = "fedssca", about = "Federated SSCA training simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct SpecArgs {
    /// Built-in experiment name (synthetic-small | mnist-paper).
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Path to a TOML experiment file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the worker thread count.
    #[arg(long)]
    threads: Option<usize>,
    /// Override the repeat count.
    #[arg(long)]
    repeats: Option<u32>,
    /// Output directory (created if absent).
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment mode selected by the config.
    Train(SpecArgs),
    /// Learning-rate grid search for the SGD baseline.
    Grid {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.3, 0.5, 1.0])]
        lr_a: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.3, 0.4, 0.5])]
        lr_alpha: Vec<f64>,
    },
    /// Run SSCA and the SGD baseline on identical shards, emit a joined CSV.
    Compare(SpecArgs),
}

/// Parses `argv` and runs the requested command. Returns the process exit
/// code; errors are printed to stderr.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version through this path with code 0
            let _ = e.print();
            return e.exit_code();
        }
    };
    let outcome = match cli.cmd {
        Command::Train(args) => resolve(&args).and_then(|spec| train(&spec, &args.out)),
        Command::Grid {
            spec,
            lr_a,
            lr_alpha,
        } => resolve(&spec).and_then(|s| grid(&s, &spec.out, &lr_a, &lr_alpha)),
        Command::Compare(args) => resolve(&args).and_then(|spec| compare(&spec, &args.out)),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn resolve(args: &SpecArgs) -> Result<ExperimentSpec> {
    let mut spec = match (&args.preset, &args.config) {
        (Some(name), None) => preset(name)?,
        (None, Some(path)) => ExperimentSpec::load(path)?,
        _ => {
            return Err(Error::Config(
                "exactly one of --preset or --config is required".into(),
            ))
        }
    };
    if let Some(seed) = args.seed {
        spec.run.seed = seed;
        if let Some(sgd) = spec.sgd.as_mut() {
            sgd.seed = seed;
        }
    }
    if let Some(threads) = args.threads {
        spec.run.threads = threads;
        if let Some(sgd) = spec.sgd.as_mut() {
            sgd.threads = threads;
        }
    }
    if let Some(repeats) = args.repeats {
        spec.repeats = repeats;
    }
    spec.validate()?;
    Ok(spec)
}

/// Loads (or generates) the train/test sets and checks them against the
/// configured model shape.
fn load_data(spec: &ExperimentSpec, seed: u64) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let (train, test) = match &spec.data {
        DataSpec::Synthetic(s) => {
            let all = gen_synthetic(s)?;
            split_train_test(&all, spec.train_frac, seed)?
        }
        DataSpec::Idx {
            images,
            labels,
            test_images,
            test_labels,
        } => {
            let train = load_idx(images, labels)?;
            match (test_images, test_labels) {
                (Some(ti), Some(tl)) => (train, load_idx(ti, tl)?),
                (None, None) => split_train_test(&train, spec.train_frac, seed)?,
                _ => {
                    return Err(Error::Config(
                        "test_images and test_labels must be given together".into(),
                    ))
                }
            }
        }
    };
    for s in train.iter().chain(test.iter()) {
        if s.x.len() != spec.dims.k {
            return Err(Error::Shape(format!(
                "sample has {} features but dims.k = {}",
                s.x.len(),
                spec.dims.k
            )));
        }
        if s.label >= spec.dims.l {
            return Err(Error::InvalidLabel {
                label: s.label,
                classes: spec.dims.l,
            });
        }
    }
    Ok((train, test))
}

fn shards_for(spec: &ExperimentSpec, train: &[Sample], seed: u64) -> Result<Vec<ClientShard>> {
    federation::partition(train, spec.clients, spec.partition, seed)
}

/// `trace.csv` for the base seed, `trace_<seed>.csv` for later repeats.
fn trace_path(out: &Path, repeat: u32, seed: u64, stem: &str) -> PathBuf {
    if repeat == 0 {
        out.join(format!("{stem}.csv"))
    } else {
        out.join(format!("{stem}_{seed}.csv"))
    }
}

/// First round index at which the training cost reaches `target`.
fn rounds_to_target(trace: &RoundTrace, target: f64) -> Option<u32> {
    trace
        .records
        .iter()
        .find(|r| r.train_cost <= target)
        .map(|r| r.t)
}

fn concat_stage_traces(traces: &[RoundTrace]) -> RoundTrace {
    let mut out = RoundTrace::default();
    let mut offset = 0;
    for stage in traces {
        for rec in &stage.records {
            let mut rec = rec.clone();
            rec.t += offset;
            out.records.push(rec);
        }
        offset = out.records.last().map_or(0, |r| r.t);
    }
    out
}

#[derive(Serialize)]
struct ContinuationReport {
    summary: Summary,
    final_c: f64,
    stage_slacks: Vec<f64>,
}

fn train(spec: &ExperimentSpec, out: &Path) -> Result<()> {
    if spec.mode == Mode::Compare {
        return compare(spec, out);
    }
    std::fs::create_dir_all(out)?;
    for repeat in 0..spec.repeats {
        let seed = spec.run.seed + u64::from(repeat);
        let mut run_cfg = spec.run.clone();
        run_cfg.seed = seed;
        let (train_set, test_set) = load_data(spec, seed)?;
        let test = DataMatrix::from_samples(&test_set)?;
        let mut shards = shards_for(spec, &train_set, seed)?;

        let csv = trace_path(out, repeat, seed, "trace");
        let mut continuation: Option<ContinuationReport> = None;
        let trace = match spec.mode {
            Mode::SscaUnconstrained => {
                let (_, trace) = federation::run_algorithm1(&run_cfg, spec.dims, &mut shards, &test)?;
                trace
            }
            Mode::SscaConstrained => {
                let (_, _, trace) =
                    federation::run_algorithm2(&run_cfg, spec.dims, &mut shards, &test)?;
                trace
            }
            Mode::Fedavg => {
                let mut sgd = spec.sgd.clone().expect("validated");
                sgd.seed = seed;
                let (_, trace) = baselines::run_fedavg(&sgd, spec.dims, &mut shards, &test)?;
                trace
            }
            Mode::PenaltyContinuation => {
                let initial = federation::init_params(spec.dims, seed, run_cfg.init_scale);
                let outcome = federation::penalty_continuation(
                    &run_cfg,
                    &mut shards,
                    &test,
                    initial,
                    &spec.penalty_sequence,
                    spec.slack_tol,
                )?;
                let trace = concat_stage_traces(&outcome.traces);
                continuation = Some(ContinuationReport {
                    summary: Summary::from_trace(&trace, seed)?,
                    final_c: outcome.final_c,
                    stage_slacks: outcome.stage_slacks,
                });
                trace
            }
            Mode::Compare => unreachable!("dispatched above"),
        };

        report::write_trace_csv(&csv, &trace)?;
        let json = csv.with_extension("json");
        match &continuation {
            Some(rep) => report::write_json(&json, rep)?,
            None => report::write_json(&json, &Summary::from_trace(&trace, seed)?)?,
        }
        println!("wrote {} and {}", csv.display(), json.display());
    }
    // the base repeat doubles as the canonical summary
    std::fs::copy(out.join("trace.json"), out.join("summary.json"))?;
    Ok(())
}

#[derive(Serialize)]
struct CompareEntry {
    seed: u64,
    shard_hash: u64,
    target_cost: f64,
    ssca: Summary,
    fedavg: Summary,
    ssca_rounds_to_target: Option<u32>,
    fedavg_rounds_to_target: Option<u32>,
}

fn compare(spec: &ExperimentSpec, out: &Path) -> Result<()> {
    let sgd_base = spec
        .sgd
        .clone()
        .ok_or_else(|| Error::Config("compare needs an [sgd] section".into()))?;
    std::fs::create_dir_all(out)?;
    let mut entries = Vec::new();
    for repeat in 0..spec.repeats {
        let seed = spec.run.seed + u64::from(repeat);
        let (train_set, test_set) = load_data(spec, seed)?;
        let test = DataMatrix::from_samples(&test_set)?;

        // both algorithms see the same partition and the same initial model
        let mut shards_a = shards_for(spec, &train_set, seed)?;
        let mut shards_b = shards_for(spec, &train_set, seed)?;
        let hash_a = report::shard_hash(&shards_a);
        let hash_b = report::shard_hash(&shards_b);
        if hash_a != hash_b {
            return Err(Error::Config(format!(
                "partition not reproducible: {hash_a:#x} vs {hash_b:#x}"
            )));
        }
        let initial = federation::init_params(spec.dims, seed, spec.run.init_scale);

        let mut run_cfg = spec.run.clone();
        run_cfg.seed = seed;
        let (_, ssca_trace) =
            federation::run_algorithm1_from(&run_cfg, &mut shards_a, &test, initial.clone())?;
        let mut sgd = sgd_base.clone();
        sgd.seed = seed;
        let (_, sgd_trace) = baselines::run_fedavg_from(&sgd, &mut shards_b, &test, initial)?;

        let csv = trace_path(out, repeat, seed, "compare");
        report::write_compare_csv(
            &csv,
            &[("ssca", seed, &ssca_trace), ("fedavg", seed, &sgd_trace)],
        )?;

        let target_cost = 0.5 * (spec.dims.l as f64).ln();
        let mut ssca_summary = Summary::from_trace(&ssca_trace, seed)?;
        let mut sgd_summary = Summary::from_trace(&sgd_trace, seed)?;
        ssca_summary.shard_hash = Some(hash_a);
        sgd_summary.shard_hash = Some(hash_b);
        entries.push(CompareEntry {
            seed,
            shard_hash: hash_a,
            target_cost,
            ssca_rounds_to_target: rounds_to_target(&ssca_trace, target_cost),
            fedavg_rounds_to_target: rounds_to_target(&sgd_trace, target_cost),
            ssca: ssca_summary,
            fedavg: sgd_summary,
        });
        println!("wrote {}", csv.display());
    }
    report::write_json(&out.join("compare_summary.json"), &entries)?;
    // canonical single-run summary: the SSCA side of the base seed
    report::write_json(&out.join("summary.json"), &entries[0].ssca)?;
    Ok(())
}

#[derive(Serialize)]
struct GridRow {
    lr_a: f64,
    lr_alpha: f64,
    final_cost: f64,
    final_acc: f64,
}

fn grid(spec: &ExperimentSpec, out: &Path, lr_a: &[f64], lr_alpha: &[f64]) -> Result<()> {
    let sgd_base = spec
        .sgd
        .clone()
        .ok_or_else(|| Error::Config("grid search needs an [sgd] section".into()))?;
    if lr_a.is_empty() || lr_alpha.is_empty() {
        return Err(Error::Config("empty learning-rate grid".into()));
    }
    std::fs::create_dir_all(out)?;
    let seed = spec.run.seed;
    let (train_set, test_set) = load_data(spec, seed)?;
    let test = DataMatrix::from_samples(&test_set)?;

    let mut rows = Vec::new();
    for &a in lr_a {
        for &alpha in lr_alpha {
            let mut sgd = sgd_base.clone();
            sgd.lr_a = a;
            sgd.lr_alpha = alpha;
            sgd.seed = seed;
            let mut shards = shards_for(spec, &train_set, seed)?;
            let (_, trace) = baselines::run_fedavg(&sgd, spec.dims, &mut shards, &test)?;
            let last = trace.last().ok_or(Error::Empty("trace"))?;
            rows.push(GridRow {
                lr_a: a,
                lr_alpha: alpha,
                final_cost: last.train_cost,
                final_acc: last.test_acc,
            });
        }
    }
    use std::io::Write;
    let csv = out.join("grid.csv");
    let mut f = std::fs::File::create(&csv)?;
    writeln!(f, "lr_a,lr_alpha,final_cost,final_acc")?;
    for r in &rows {
        writeln!(f, "{},{},{},{}", r.lr_a, r.lr_alpha, r.final_cost, r.final_acc)?;
    }
    let best = rows
        .iter()
        .min_by(|x, y| x.final_cost.total_cmp(&y.final_cost))
        .expect("grid nonempty");
    report::write_json(&out.join("grid_best.json"), best)?;
    println!("wrote {} ({} cells)", csv.display(), rows.len());
    Ok(())
}
