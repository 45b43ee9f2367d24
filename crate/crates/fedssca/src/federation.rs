//! Round-based orchestration of the SSCA training loops.
//!
//! The server broadcasts the current model, every client computes mini-batch
//! statistics on its private shard, the server aggregates them into the
//! surrogate state, solves the round's convex problem in closed form, and
//! averages the iterate. Clients never transmit raw samples; uplink messages
//! are the fixed-size [`BatchStats`] sums.
//!
//! Client randomness comes from per-client ChaCha streams derived from
//! `(master_seed, client_id)`, so results do not depend on execution order or
//! thread count.

use std::time::Instant;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, BatchStats, DataMatrix, Dims, ModelParams, Sample};
use crate::schedules::StepSchedule;
use crate::solvers;
use crate::surrogate::{self, SurrogateState};

/// How the dataset is split across clients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionPolicy {
    /// Shuffle, then split as evenly as possible.
    Iid,
    /// Sort by class, then split contiguously (heterogeneous shards).
    LabelSorted,
}

/// A client's private shard plus its deterministic batch-selection stream.
#[derive(Debug, Clone)]
pub struct ClientShard {
    pub client_id: usize,
    samples: Vec<Sample>,
    rng: ChaCha8Rng,
}

impl ClientShard {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    /// Draws `batch_size` samples without replacement and returns the batch.
    pub fn draw_batch(&mut self, batch_size: usize) -> Result<Vec<Sample>> {
        if batch_size == 0 || batch_size > self.samples.len() {
            return Err(Error::InvalidArgument(format!(
                "batch size {batch_size} out of range for shard of {}",
                self.samples.len()
            )));
        }
        let idx = rand::seq::index::sample(&mut self.rng, self.samples.len(), batch_size);
        Ok(idx.iter().map(|i| self.samples[i].clone()).collect())
    }
}

/// Stream for client `client_id` under `master_seed`. The two ids occupy
/// disjoint bytes of the ChaCha key.
fn client_stream(master_seed: u64, client_id: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&master_seed.to_le_bytes());
    key[8..16].copy_from_slice(&client_id.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

// reserved stream ids outside the client range
const STREAM_SHUFFLE: u64 = u64::MAX;
const STREAM_INIT: u64 = u64::MAX - 1;

/// Splits the dataset into `clients` disjoint shards covering it exactly.
pub fn partition(
    dataset: &[Sample],
    clients: usize,
    policy: PartitionPolicy,
    master_seed: u64,
) -> Result<Vec<ClientShard>> {
    if clients == 0 || clients > dataset.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot split {} samples across {clients} clients",
            dataset.len()
        )));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    match policy {
        PartitionPolicy::Iid => {
            use rand::seq::SliceRandom;
            let mut rng = client_stream(master_seed, STREAM_SHUFFLE);
            order.shuffle(&mut rng);
        }
        PartitionPolicy::LabelSorted => {
            order.sort_by_key(|&i| dataset[i].label);
        }
    }
    let base = dataset.len() / clients;
    let extra = dataset.len() % clients;
    let mut shards = Vec::with_capacity(clients);
    let mut cursor = 0usize;
    for client_id in 0..clients {
        let size = base + usize::from(client_id < extra);
        let samples = order[cursor..cursor + size]
            .iter()
            .map(|&i| dataset[i].clone())
            .collect();
        cursor += size;
        shards.push(ClientShard {
            client_id,
            samples,
            rng: client_stream(master_seed, client_id as u64),
        });
    }
    Ok(shards)
}

/// One client round: draw a mini-batch and return its statistic sums.
pub fn client_round(
    shard: &mut ClientShard,
    omega_t: &ModelParams,
    batch_size: usize,
) -> Result<BatchStats> {
    let batch = shard.draw_batch(batch_size)?;
    model::batch_stats(omega_t, &batch)
}

/// Initial model: entries uniform on `(-init_scale, init_scale)` drawn from
/// the master seed.
pub fn init_params(dims: Dims, master_seed: u64, init_scale: f64) -> ModelParams {
    if init_scale == 0.0 {
        return ModelParams::zeros(dims);
    }
    use rand::Rng;
    let mut rng = client_stream(master_seed, STREAM_INIT);
    let w1 = Array2::from_shape_fn((dims.j, dims.k), |_| {
        rng.random_range(-init_scale..init_scale)
    });
    let w2 = Array2::from_shape_fn((dims.l, dims.j), |_| {
        rng.random_range(-init_scale..init_scale)
    });
    ModelParams::new(w1, w2).expect("consistent shapes")
}

/// Parameters of one SSCA run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    /// Rounds to execute (one trace row each).
    pub rounds: u32,
    pub batch_size: usize,
    pub tau: f64,
    /// l2 regularization weight (unconstrained mode).
    #[serde(default)]
    pub lambda: f64,
    /// Penalty parameter (constrained mode).
    #[serde(default)]
    pub penalty_c: f64,
    /// Cost ceiling U (constrained mode).
    #[serde(default)]
    pub cost_limit: f64,
    pub schedule: StepSchedule,
    pub seed: u64,
    pub init_scale: f64,
    /// Worker threads for client rounds; 0 or 1 means sequential.
    #[serde(default)]
    pub threads: usize,
}

impl RunConfig {
    fn validate(&self) -> Result<()> {
        if self.rounds < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 rounds, got {}",
                self.rounds
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        if self.tau <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        self.schedule.validate().map_err(|violations| {
            let names: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            Error::Schedule(names.join(", "))
        })
    }
}

/// Per-round metrics of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub t: u32,
    pub train_cost: f64,
    pub test_acc: f64,
    /// Recovered slack; `None` for unconstrained runs.
    pub slack: Option<f64>,
    /// Cumulative uplink scalars across all clients.
    pub uplink_scalars: u64,
    /// Cumulative downlink scalars across all clients.
    pub downlink_scalars: u64,
    /// Measured wall time of the round. Excluded from deterministic outputs.
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoundTrace {
    pub records: Vec<RoundRecord>,
}

impl RoundTrace {
    pub fn last(&self) -> Option<&RoundRecord> {
        self.records.last()
    }
}

/// Downlink scalars per round: the model broadcast to every client.
pub fn downlink_per_round(clients: usize, dims: Dims) -> u64 {
    (clients * dims.d()) as u64
}

/// Uplink scalars per round across all clients. Constrained rounds carry one
/// extra scalar per client (the cross-entropy sum); the sample count is
/// metadata and not counted.
pub fn uplink_per_round(clients: usize, dims: Dims, constrained: bool) -> u64 {
    (clients * (dims.d() + usize::from(constrained))) as u64
}

enum RoundMode {
    Unconstrained { lambda: f64 },
    Constrained { c: f64, u: f64 },
}

fn collect_stats(
    shards: &mut [ClientShard],
    omega: &ModelParams,
    batch_size: usize,
    threads: usize,
) -> Result<Vec<(BatchStats, usize)>> {
    if threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| {
            shards
                .par_iter_mut()
                .map(|s| {
                    let n_i = s.len();
                    client_round(s, omega, batch_size).map(|stats| (stats, n_i))
                })
                .collect()
        })
    } else {
        shards
            .iter_mut()
            .map(|s| {
                let n_i = s.len();
                client_round(s, omega, batch_size).map(|stats| (stats, n_i))
            })
            .collect()
    }
}

fn run_ssca(
    config: &RunConfig,
    mode: RoundMode,
    shards: &mut [ClientShard],
    test_set: &DataMatrix,
    initial: ModelParams,
    gamma_override: Option<&dyn Fn(u32) -> f64>,
) -> Result<(ModelParams, f64, RoundTrace)> {
    config.validate()?;
    if shards.is_empty() {
        return Err(Error::Empty("client shards"));
    }
    let n_total: usize = shards.iter().map(|s| s.len()).sum();
    let train_union: Vec<Sample> = shards
        .iter()
        .flat_map(|s| s.samples().iter().cloned())
        .collect();
    let train_eval = DataMatrix::from_samples(&train_union)?;

    let mut omega = initial;
    let dims = omega.dims();
    let constrained = matches!(mode, RoundMode::Constrained { .. });

    let mut state = SurrogateState::zeros(dims);
    let mut trace = RoundTrace::default();
    let mut uplink = 0u64;
    let mut downlink = 0u64;
    let mut last_slack = 0.0;

    for t in 1..=config.rounds {
        let started = Instant::now();
        // broadcast + client mini-batch statistics
        downlink += downlink_per_round(shards.len(), dims);
        let client_stats = collect_stats(shards, &omega, config.batch_size, config.threads)?;
        uplink += uplink_per_round(shards.len(), dims, constrained);

        let agg = surrogate::aggregate(&client_stats, n_total, config.batch_size)?;
        let rho = config.schedule.rho(t);

        let (omega_bar, slack) = match mode {
            RoundMode::Unconstrained { lambda } => {
                state = state.update_unconstrained(rho, &omega, &agg, config.tau)?;
                (solvers::solve_unconstrained(&state, lambda, config.tau)?, None)
            }
            RoundMode::Constrained { c, u } => {
                state = state.update_constrained(rho, &omega, &agg, config.tau)?;
                let sol = solvers::solve_constrained(&state, config.tau, c, u)?;
                last_slack = sol.slack;
                (sol.omega_bar, Some(sol.slack))
            }
        };

        let gamma = match gamma_override {
            Some(f) => f(t),
            None => config.schedule.gamma(t),
        };
        omega.w1 = &omega.w1 * (1.0 - gamma) + &omega_bar.w1 * gamma;
        omega.w2 = &omega.w2 * (1.0 - gamma) + &omega_bar.w2 * gamma;

        trace.records.push(RoundRecord {
            t,
            train_cost: model::cost_matrix(&omega, &train_eval)?,
            test_acc: model::accuracy_matrix(&omega, test_set)?,
            slack,
            uplink_scalars: uplink,
            downlink_scalars: downlink,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok((omega, last_slack, trace))
}

/// Mini-batch SSCA for the unconstrained (l2-regularized cross-entropy)
/// problem. Returns the final model and the per-round trace.
pub fn run_algorithm1(
    config: &RunConfig,
    dims: Dims,
    shards: &mut [ClientShard],
    test_set: &DataMatrix,
) -> Result<(ModelParams, RoundTrace)> {
    let initial = init_params(dims, config.seed, config.init_scale);
    run_algorithm1_from(config, shards, test_set, initial)
}

/// [`run_algorithm1`] from an explicit starting model.
pub fn run_algorithm1_from(
    config: &RunConfig,
    shards: &mut [ClientShard],
    test_set: &DataMatrix,
    initial: ModelParams,
) -> Result<(ModelParams, RoundTrace)> {
    let (omega, _, trace) = run_ssca(
        config,
        RoundMode::Unconstrained {
            lambda: config.lambda,
        },
        shards,
        test_set,
        initial,
        None,
    )?;
    Ok((omega, trace))
}

/// Test hook: [`run_algorithm1`] with an explicit iterate-averaging step
/// sequence.
pub fn run_algorithm1_with_gamma(
    config: &RunConfig,
    dims: Dims,
    shards: &mut [ClientShard],
    test_set: &DataMatrix,
    gamma: impl Fn(u32) -> f64,
) -> Result<(ModelParams, RoundTrace)> {
    let initial = init_params(dims, config.seed, config.init_scale);
    let (omega, _, trace) = run_ssca(
        config,
        RoundMode::Unconstrained {
            lambda: config.lambda,
        },
        shards,
        test_set,
        initial,
        Some(&gamma),
    )?;
    Ok((omega, trace))
}

/// Mini-batch SSCA for the constrained (norm-minimization under a cost
/// ceiling) problem. Returns the final model, final slack, and trace.
pub fn run_algorithm2(
    config: &RunConfig,
    dims: Dims,
    shards: &mut [ClientShard],
    test_set: &DataMatrix,
) -> Result<(ModelParams, f64, RoundTrace)> {
    let initial = init_params(dims, config.seed, config.init_scale);
    run_algorithm2_from(config, shards, test_set, initial)
}

/// [`run_algorithm2`] from an explicit starting model (used by penalty
/// continuation for warm starts).
pub fn run_algorithm2_from(
    config: &RunConfig,
    shards: &mut [ClientShard],
    test_set: &DataMatrix,
    initial: ModelParams,
) -> Result<(ModelParams, f64, RoundTrace)> {
    run_ssca(
        config,
        RoundMode::Constrained {
            c: config.penalty_c,
            u: config.cost_limit,
        },
        shards,
        test_set,
        initial,
        None,
    )
}

/// Outcome of the exact-penalty continuation loop.
#[derive(Debug, Clone)]
pub struct ContinuationOutcome {
    pub params: ModelParams,
    pub final_c: f64,
    /// Final slack of each executed stage.
    pub stage_slacks: Vec<f64>,
    pub traces: Vec<RoundTrace>,
}

/// Repeats [`run_algorithm2`] over an increasing penalty sequence,
/// warm-starting each stage, until the final slack drops to `slack_tol`.
pub fn penalty_continuation(
    base_config: &RunConfig,
    shards: &mut [ClientShard],
    test_set: &DataMatrix,
    initial: ModelParams,
    c_sequence: &[f64],
    slack_tol: f64,
) -> Result<ContinuationOutcome> {
    if c_sequence.is_empty() {
        return Err(Error::Empty("penalty sequence"));
    }
    if !c_sequence.windows(2).all(|w| w[0] < w[1]) || c_sequence[0] <= 0.0 {
        return Err(Error::InvalidArgument(
            "penalty sequence must be strictly increasing and positive".into(),
        ));
    }
    if slack_tol <= 0.0 {
        return Err(Error::InvalidArgument("slack tolerance must be positive".into()));
    }
    let mut omega = initial;
    let mut stage_slacks = Vec::new();
    let mut traces = Vec::new();
    for &c in c_sequence {
        let mut cfg = base_config.clone();
        cfg.penalty_c = c;
        let (next, slack, trace) = run_algorithm2_from(&cfg, shards, test_set, omega)?;
        omega = next;
        stage_slacks.push(slack);
        traces.push(trace);
        if slack <= slack_tol {
            return Ok(ContinuationOutcome {
                params: omega,
                final_c: c,
                stage_slacks,
                traces,
            });
        }
    }
    Err(Error::ContinuationExhausted {
        last_slack: *stage_slacks.last().expect("at least one stage ran"),
        tol: slack_tol,
    })
}
