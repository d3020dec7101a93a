use num_rational::Ratio;

use progfed_core::config::ExperimentConfig;
use progfed_core::federation::{sample_clients, Federation, RoundMetrics};
use progfed_core::metrics::Bytes;
use progfed_core::progressive::Path;

const BASE: &str = r#"
seed = 7
rounds = 30
stages = 3
eval_interval = 30

[dataset]
kind = "blobs"
classes = 3
dim = 6
per_class = 60
spread = 1.0

[partition]
kind = "dirichlet"
beta = 1.0
clients = 6

[model]
topology = "feed-forward"
input = [6]
blocks = [["dense(6,8)", "relu"], ["dense(8,8)", "relu"], ["dense(8,8)", "relu"]]
head = ["dense(8,3)"]

[training]
clients_per_round = 3
local_steps = 2
batch_size = 8
lr = 0.1
"#;

fn parse(text: &str, overrides: &[&str]) -> ExperimentConfig {
    let owned: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    ExperimentConfig::parse(text, &owned).unwrap()
}

fn build(overrides: &[&str]) -> Federation {
    parse(BASE, overrides).build(None).unwrap()
}

fn run_text(text: &str, overrides: &[&str]) -> (Federation, Vec<RoundMetrics>) {
    let mut fed = parse(text, overrides).build(None).unwrap();
    let rounds = fed.run().unwrap();
    (fed, rounds)
}

fn run(overrides: &[&str]) -> (Federation, Vec<RoundMetrics>) {
    run_text(BASE, overrides)
}

#[test]
fn evaluation_follows_the_interval_and_the_last_round() {
    let (_, rounds) = run(&["rounds=10", "eval_interval=5"]);
    let evaluated: Vec<usize> = rounds.iter().filter(|m| m.metric.is_some()).map(|m| m.round).collect();
    assert_eq!(evaluated, vec![5, 10]);
    let (_, rounds) = run(&["rounds=11", "eval_interval=5"]);
    let evaluated: Vec<usize> = rounds.iter().filter(|m| m.metric.is_some()).map(|m| m.round).collect();
    assert_eq!(evaluated, vec![5, 10, 11]);
}

#[test]
fn stages_follow_the_schedule() {
    let (fed, rounds) = run(&[]);
    let sched = fed.schedule().clone();
    for m in &rounds {
        assert_eq!(m.stage, sched.active_stage(m.round).unwrap());
    }
    assert_eq!(fed.model().active_stage(), 3);
    assert!(fed.model().live_aux_heads().is_empty());
}

#[test]
fn end_to_end_ships_a_constant_message() {
    let (fed, rounds) = run(&["strategy=\"e2e\""]);
    let full = fed.model().full_param_count();
    assert!(rounds.iter().all(|m| m.shipped == full && m.stage == 3));
    assert!(rounds.windows(2).all(|w| w[0].cost == w[1].cost));
}

#[test]
fn cumulative_costs_are_running_sums() {
    let (fed, rounds) = run(&["codec=\"lq4+sp10\"", "downlink_codec=true", "index_overhead=true"]);
    let mut acc_bytes = Bytes::from_integer(0);
    let mut acc_flops = 0u128;
    for m in &rounds {
        acc_bytes += m.cost.bytes();
        acc_flops += m.cost.flops;
        assert_eq!(m.cumulative.bytes(), acc_bytes);
        assert_eq!(m.cumulative.flops, acc_flops);
        // Both directions use the accounted ratio: 10% of entries at 4 value
        // bits plus 32 index bits.
        let raw = Bytes::from_integer(3 * 4 * m.shipped as u128);
        assert_eq!(m.cost.bytes_up, raw * Ratio::new(36, 320));
        assert_eq!(m.cost.bytes_down, m.cost.bytes_up);
    }
    assert_eq!(fed.ledger().total().bytes(), acc_bytes);
}

#[test]
fn fedadam_moments_start_at_zero_for_grown_blocks() {
    let mut fed = build(&["server.kind=\"fedadam\""]);
    let boundary = fed.schedule().stage_start(2);
    for _ in 1..boundary {
        fed.run_round().unwrap();
    }
    let block1 = fed.model().block_params(1);
    assert!(block1.iter().all(|&id| fed.server().moments(id).is_some()));
    fed.run_round().unwrap();
    // After one update from zero moments: m = (1 − β1)·Δ, so v = (1 − β2)·Δ²
    // ties the two exactly; stale moments would break the identity.
    for &id in &fed.model().block_params(2) {
        let (m, v) = fed.server().moments(id).expect("moments for the grown block");
        for (&mi, &vi) in m.data().iter().zip(v.data()) {
            let delta = mi / 0.1;
            assert!((vi - 0.01 * delta * delta).abs() <= 1e-15 + 1e-12 * vi.abs());
        }
    }
    for &id in &fed.model().block_params(3) {
        assert!(fed.server().moments(id).is_none());
    }
}

#[test]
fn warmup_rounds_leave_the_prefix_untouched() {
    let mut fed = build(&["warmup=[0, 3, 3]"]);
    for t in 1..=30 {
        let warm = fed.schedule().in_warmup(t).unwrap();
        let s = fed.schedule().active_stage(t).unwrap();
        let prefix: Vec<_> = (1..s).flat_map(|i| fed.model().block_params(i)).collect();
        let before = fed.model().store().flatten(&prefix);
        fed.run_round().unwrap();
        let after = fed.model().store().flatten(&prefix);
        if warm {
            assert_eq!(before, after, "round {t}");
        } else if s > 1 {
            assert_ne!(before, after, "round {t}");
        }
    }
}

#[test]
fn layerwise_updates_one_block_and_the_head() {
    let mut fed = build(&["strategy=\"layerwise\""]);
    for _ in 0..fed.schedule().stage_start(2) - 1 {
        fed.run_round().unwrap();
    }
    let ids = |fed: &Federation, b: usize| fed.model().store().flatten(&fed.model().block_params(b));
    let (b1, b3) = (ids(&fed, 1), ids(&fed, 3));
    let m = fed.run_round().unwrap();
    assert_eq!(m.stage, 2);
    assert_eq!(ids(&fed, 1), b1);
    assert_eq!(ids(&fed, 3), b3);
    let full = fed.model().path_params(Path::Full).unwrap();
    assert_eq!(m.shipped, fed.model().store().count(&full));
}

#[test]
fn random_stage_draws_every_stage() {
    let (_, rounds) = run(&["strategy=\"random-stage\"", "rounds=60"]);
    for s in 1..=3 {
        assert!(rounds.iter().any(|m| m.stage == s), "stage {s} never drawn");
    }
    let (_, again) = run(&["strategy=\"random-stage\"", "rounds=60"]);
    assert_eq!(rounds, again);
}

#[test]
fn local_epochs_scale_with_shard_size() {
    let text = BASE.replace("local_steps = 2\n", "");
    let (fed, rounds) = run_text(&text, &["training.local_epochs=1.0", "rounds=12"]);
    let shards = fed.shards();
    // Per-sample forward FLOPs of Sub(1..=3): dense 2·in·out, relu 1 per
    // element.
    let forward = [96 + 8 + 48, 96 + 8 + 128 + 8 + 48, 96 + 8 + 2 * (128 + 8) + 48];
    for m in &rounds {
        let steps: u128 = m.clients.iter().map(|&c| shards[c].len().div_ceil(8) as u128).sum();
        assert_eq!(m.cost.flops, steps * 3 * 8 * forward[m.stage - 1], "round {}", m.round);
    }
}

#[test]
fn theory_stepsize_requires_a_single_client() {
    let owned = vec!["training.stepsize=\"theory\"".to_string()];
    assert!(ExperimentConfig::parse(BASE, &owned).is_err());
    let (_, rounds) = run(&[
        "training.stepsize=\"theory\"",
        "partition.clients=1",
        "training.clients_per_round=1",
        "diag_interval=5",
    ]);
    assert!(rounds.iter().all(|m| m.diagnostics.is_some()));
    assert!(rounds.iter().all(|m| m.loss.is_finite()));
}

#[test]
fn cosine_restart_changes_training_but_not_costs() {
    let (a, ra) = run(&[]);
    let (b, rb) = run(&["training.lr_schedule=\"cosine-restart\""]);
    assert_eq!(a.ledger(), b.ledger());
    assert_ne!(ra.last().unwrap().loss, rb.last().unwrap().loss);
}

#[test]
fn client_sampling_is_uniform() {
    let (n, k, rounds) = (10, 3, 20_000);
    let mut hits = vec![0usize; n];
    for t in 1..=rounds {
        let ids = sample_clients(5, t, n, k).unwrap();
        assert_eq!(ids.len(), k);
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
        for c in ids {
            hits[c] += 1;
        }
    }
    let expect = (rounds * k) as f64 / n as f64;
    let sd = (rounds as f64 * (k as f64 / n as f64) * (1.0 - k as f64 / n as f64)).sqrt();
    for (c, &h) in hits.iter().enumerate() {
        assert!(
            (h as f64 - expect).abs() < 5.0 * sd,
            "client {c}: {h} draws vs {expect}"
        );
    }
}
