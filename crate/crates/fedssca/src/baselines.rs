//! SGD-based federated baselines for convergence/communication comparisons.
//!
//! Clients run `E` local SGD steps per round on their private shards and the
//! server averages the resulting models weighted by shard size. The local
//! gradient reuses [`model::batch_stats`], so the baseline and the SSCA runs
//! optimize the identical regularized cost through the same code path.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::{self, ClientShard, RoundRecord, RoundTrace};
use crate::model::{self, DataMatrix, Dims, ModelParams};

/// Parameters of one federated-SGD run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SgdConfig {
    /// Local SGD steps per round.
    pub e: u32,
    pub batch_size: usize,
    /// Learning-rate numerator: r(t) = lr_a / t^lr_alpha.
    pub lr_a: f64,
    pub lr_alpha: f64,
    pub rounds: u32,
    /// l2 regularization weight (same role as in the SSCA runs).
    #[serde(default)]
    pub lambda: f64,
    pub seed: u64,
    pub init_scale: f64,
    /// Worker threads for client rounds; 0 or 1 means sequential.
    #[serde(default)]
    pub threads: usize,
}

impl SgdConfig {
    fn validate(&self) -> Result<()> {
        if self.e == 0 {
            return Err(Error::InvalidArgument("need at least one local step".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        if self.rounds == 0 {
            return Err(Error::InvalidArgument("need at least one round".into()));
        }
        if self.lr_a < 0.0 || !self.lr_a.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning-rate numerator must be finite and >= 0, got {}",
                self.lr_a
            )));
        }
        Ok(())
    }

    /// Round-`t` learning rate.
    pub fn lr(&self, t: u32) -> f64 {
        assert!(t >= 1, "rounds are 1-based");
        self.lr_a / f64::from(t).powf(self.lr_alpha)
    }
}

/// `E` local SGD steps from `omega_t` on one client's shard.
pub fn local_sgd_round(
    shard: &mut ClientShard,
    omega_t: &ModelParams,
    cfg: &SgdConfig,
    t: u32,
) -> Result<ModelParams> {
    let r = cfg.lr(t);
    let b = cfg.batch_size as f64;
    let mut omega = omega_t.clone();
    for _ in 0..cfg.e {
        let batch = shard.draw_batch(cfg.batch_size)?;
        let stats = model::batch_stats(&omega, &batch)?;
        // gradient of the batch-mean cost plus the l2 term
        omega.w1 = &omega.w1 - &((&stats.b_bar / b + &omega.w1 * (2.0 * cfg.lambda)) * r);
        omega.w2 = &omega.w2 - &((&stats.c_bar / b + &omega.w2 * (2.0 * cfg.lambda)) * r);
    }
    Ok(omega)
}

/// Shard-size weighted model average. Written as a baseline-plus-corrections
/// sum so that identical inputs average to themselves bit-exactly.
fn weighted_average(models: &[ModelParams], sizes: &[usize]) -> ModelParams {
    let n: usize = sizes.iter().sum();
    let mut avg = models[0].clone();
    for (m, &n_i) in models.iter().zip(sizes.iter()).skip(1) {
        let w = n_i as f64 / n as f64;
        avg.w1 = &avg.w1 + &((&m.w1 - &models[0].w1) * w);
        avg.w2 = &avg.w2 + &((&m.w2 - &models[0].w2) * w);
    }
    avg
}

fn local_rounds(
    shards: &mut [ClientShard],
    omega: &ModelParams,
    cfg: &SgdConfig,
    t: u32,
) -> Result<Vec<ModelParams>> {
    if cfg.threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| {
            shards
                .par_iter_mut()
                .map(|s| local_sgd_round(s, omega, cfg, t))
                .collect()
        })
    } else {
        shards
            .iter_mut()
            .map(|s| local_sgd_round(s, omega, cfg, t))
            .collect()
    }
}

/// Federated averaging: each round every client runs [`local_sgd_round`] and
/// the server takes the shard-size weighted mean. The trace uses the same
/// schema as the SSCA runs (slack always absent).
pub fn run_fedavg(
    cfg: &SgdConfig,
    dims: Dims,
    shards: &mut [ClientShard],
    test_set: &DataMatrix,
) -> Result<(ModelParams, RoundTrace)> {
    let initial = federation::init_params(dims, cfg.seed, cfg.init_scale);
    run_fedavg_from(cfg, shards, test_set, initial)
}

/// [`run_fedavg`] from an explicit starting model.
pub fn run_fedavg_from(
    cfg: &SgdConfig,
    shards: &mut [ClientShard],
    test_set: &DataMatrix,
    initial: ModelParams,
) -> Result<(ModelParams, RoundTrace)> {
    cfg.validate()?;
    if shards.is_empty() {
        return Err(Error::Empty("client shards"));
    }
    let sizes: Vec<usize> = shards.iter().map(|s| s.len()).collect();
    let train_union: Vec<_> = shards
        .iter()
        .flat_map(|s| s.samples().iter().cloned())
        .collect();
    let train_eval = DataMatrix::from_samples(&train_union)?;

    let mut omega = initial;
    let dims = omega.dims();
    let mut trace = RoundTrace::default();
    let mut uplink = 0u64;
    let mut downlink = 0u64;

    for t in 1..=cfg.rounds {
        let started = Instant::now();
        downlink += federation::downlink_per_round(shards.len(), dims);
        let locals = local_rounds(shards, &omega, cfg, t)?;
        // clients upload full models: d scalars each
        uplink += federation::uplink_per_round(shards.len(), dims, false);
        omega = weighted_average(&locals, &sizes);

        trace.records.push(RoundRecord {
            t,
            train_cost: model::cost_matrix(&omega, &train_eval)?,
            test_acc: model::accuracy_matrix(&omega, test_set)?,
            slack: None,
            uplink_scalars: uplink,
            downlink_scalars: downlink,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok((omega, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::federation::{partition, PartitionPolicy};
    use crate::model::Sample;
    use crate::testutil::{random_batch, rng};
    use approx::assert_abs_diff_eq;

    const DIMS: Dims = Dims { k: 4, j: 3, l: 2 };

    fn dataset(n: usize, seed: u64) -> Vec<Sample> {
        random_batch(DIMS, n, &mut rng(seed))
    }

    fn config(rounds: u32) -> SgdConfig {
        SgdConfig {
            e: 1,
            batch_size: 5,
            lr_a: 0.5,
            lr_alpha: 0.4,
            rounds,
            lambda: 1e-5,
            seed: 42,
            init_scale: 0.05,
            threads: 1,
        }
    }

    #[test]
    fn lr_schedule_examples() {
        let cfg = config(10);
        assert_abs_diff_eq!(cfg.lr(1), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(cfg.lr(16), 0.5 / 16f64.powf(0.4), epsilon = 1e-15);
    }

    #[test]
    fn zero_rate_is_a_no_op() {
        let data = dataset(10, 1);
        let mut shards = partition(&data, 1, PartitionPolicy::Iid, 3).unwrap();
        let mut cfg = config(1);
        cfg.lr_a = 0.0;
        cfg.batch_size = 10;
        let omega = federation::init_params(DIMS, 7, 0.05);
        let next = local_sgd_round(&mut shards[0], &omega, &cfg, 1).unwrap();
        assert_eq!(next, omega);
    }

    #[test]
    fn full_batch_single_client_is_centralized_gradient_descent() {
        let data = dataset(8, 2);
        let mut shards = partition(&data, 1, PartitionPolicy::Iid, 4).unwrap();
        let mut cfg = config(1);
        cfg.batch_size = 8;
        cfg.lambda = 0.01;
        let omega = federation::init_params(DIMS, 9, 0.05);
        let next = local_sgd_round(&mut shards[0], &omega, &cfg, 1).unwrap();

        let stats = model::batch_stats(&omega, shards[0].samples()).unwrap();
        let r = cfg.lr(1);
        let w1 = &omega.w1 - &((&stats.b_bar / 8.0 + &omega.w1 * (2.0 * cfg.lambda)) * r);
        let w2 = &omega.w2 - &((&stats.c_bar / 8.0 + &omega.w2 * (2.0 * cfg.lambda)) * r);
        for (a, b) in next.w1.iter().zip(w1.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
        for (a, b) in next.w2.iter().zip(w2.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn two_local_steps_compose_two_single_steps() {
        let data = dataset(20, 3);
        let mut cfg = config(1);

        let mut a = partition(&data, 1, PartitionPolicy::Iid, 5).unwrap();
        cfg.e = 2;
        let omega0 = federation::init_params(DIMS, 11, 0.05);
        let twice = local_sgd_round(&mut a[0], &omega0, &cfg, 3).unwrap();

        // same shard seed: the two draws replay identically
        let mut b = partition(&data, 1, PartitionPolicy::Iid, 5).unwrap();
        cfg.e = 1;
        let mid = local_sgd_round(&mut b[0], &omega0, &cfg, 3).unwrap();
        let composed = local_sgd_round(&mut b[0], &mid, &cfg, 3).unwrap();
        assert_eq!(twice, composed);
    }

    #[test]
    fn all_equal_models_average_to_themselves_bit_exactly() {
        let m = federation::init_params(DIMS, 13, 0.7);
        let models = vec![m.clone(), m.clone(), m.clone()];
        let avg = weighted_average(&models, &[7, 11, 3]);
        assert_eq!(avg, m);
    }

    #[test]
    fn averaging_weights_respect_shard_sizes() {
        let a = federation::init_params(DIMS, 14, 0.5);
        let b = federation::init_params(DIMS, 15, 0.5);
        let avg = weighted_average(&[a.clone(), b.clone()], &[3, 1]);
        for ((x, p), q) in avg.w1.iter().zip(a.w1.iter()).zip(b.w1.iter()) {
            assert_abs_diff_eq!(*x, 0.75 * p + 0.25 * q, epsilon = 1e-15);
        }
    }

    #[test]
    fn identical_shards_match_centralized_union_step() {
        // Two clients holding the same samples, E = 1, full local batches:
        // the average of the two local steps equals one centralized step on
        // the (weighted) union batch.
        let half = dataset(6, 4);
        let mut both: Vec<Sample> = half.clone();
        both.extend(half.iter().cloned());
        let mut shards = partition(&both, 2, PartitionPolicy::LabelSorted, 6).unwrap();
        // label-sorted partition of a duplicated, label-homogeneous set is not
        // guaranteed identical per shard, so overwrite via single-client runs
        let mut cfg = config(1);
        cfg.batch_size = 6;
        cfg.lambda = 0.0;
        let omega = federation::init_params(DIMS, 17, 0.05);

        let la = local_sgd_round(&mut shards[0], &omega, &cfg, 1).unwrap();
        let lb = local_sgd_round(&mut shards[1], &omega, &cfg, 1).unwrap();
        let avg = weighted_average(&[la, lb], &[6, 6]);

        let union: Vec<Sample> = shards
            .iter()
            .flat_map(|s| s.samples().iter().cloned())
            .collect();
        let stats = model::batch_stats(&omega, &union).unwrap();
        let r = cfg.lr(1);
        let w1 = &omega.w1 - &(&stats.b_bar / 12.0 * r);
        for (x, y) in avg.w1.iter().zip(w1.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_client_run_is_plain_minibatch_sgd() {
        let data = dataset(30, 5);
        let test = DataMatrix::from_samples(&dataset(10, 6)).unwrap();
        let cfg = config(4);

        let mut shards = partition(&data, 1, PartitionPolicy::Iid, 8).unwrap();
        let initial = federation::init_params(DIMS, cfg.seed, cfg.init_scale);
        let (omega, _) = run_fedavg_from(&cfg, &mut shards, &test, initial.clone()).unwrap();

        let mut replay = partition(&data, 1, PartitionPolicy::Iid, 8).unwrap();
        let mut w = initial;
        for t in 1..=cfg.rounds {
            w = local_sgd_round(&mut replay[0], &w, &cfg, t).unwrap();
        }
        assert_eq!(omega, w);
    }

    #[test]
    fn cost_decreases_in_training() {
        let data = dataset(60, 7);
        let test = DataMatrix::from_samples(&dataset(20, 8)).unwrap();
        let mut cfg = config(50);
        cfg.e = 2;
        let mut shards = partition(&data, 3, PartitionPolicy::Iid, 9).unwrap();
        let (_, trace) = run_fedavg(&cfg, DIMS, &mut shards, &test).unwrap();
        let first = trace.records.first().unwrap().train_cost;
        let last = trace.last().unwrap().train_cost;
        assert!(last < first, "cost should fall: {first} -> {last}");
    }

    #[test]
    fn threads_do_not_change_results() {
        let data = dataset(40, 10);
        let test = DataMatrix::from_samples(&dataset(10, 11)).unwrap();
        let mut cfg = config(6);
        cfg.e = 2;

        let mut s1 = partition(&data, 4, PartitionPolicy::Iid, 12).unwrap();
        cfg.threads = 1;
        let (w1, _) = run_fedavg(&cfg, DIMS, &mut s1, &test).unwrap();

        let mut s4 = partition(&data, 4, PartitionPolicy::Iid, 12).unwrap();
        cfg.threads = 4;
        let (w4, _) = run_fedavg(&cfg, DIMS, &mut s4, &test).unwrap();
        assert_eq!(w1, w4);
    }

    #[test]
    fn rejects_degenerate_configs() {
        let data = dataset(10, 13);
        let test = DataMatrix::from_samples(&dataset(5, 14)).unwrap();
        let mut shards = partition(&data, 2, PartitionPolicy::Iid, 15).unwrap();
        for bad in [
            SgdConfig { e: 0, ..config(5) },
            SgdConfig { batch_size: 0, ..config(5) },
            SgdConfig { rounds: 0, ..config(5) },
            SgdConfig { lr_a: -1.0, ..config(5) },
        ] {
            assert!(run_fedavg(&bad, DIMS, &mut shards, &test).is_err());
        }
    }
}
