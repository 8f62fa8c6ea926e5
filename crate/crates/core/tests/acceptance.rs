//! End-to-end checks on the default configuration. Prints one PASS/FAIL line
//! per criterion and exits non-zero if any fails.
//!
//! Trains the full 3000-episode default run once, so expect several minutes.

use std::time::Instant;

use ndarray::Array2;
use rand::Rng;

use iovsim::baselines::Variant;
use iovsim::config::{RunConfig, SweepAxis};
use iovsim::dqn::checkpoint::{from_bytes, to_bytes};
use iovsim::dqn::net::huber;
use iovsim::dqn::{load_checkpoint, save_checkpoint, Experience, QNetwork, ReplayMemory, TrainConfig};
use iovsim::experiment::{self, aggregate, eval_baselines, eval_dql, oracle_sweep, OracleSweep, PlotRow, DQL};
use iovsim::phy::{rate_bps, sic_sinr};
use iovsim::rng::{stream, Stream};

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, n: usize, name: &str, ok: bool, detail: String) {
        if !ok {
            self.failures += 1;
        }
        println!("criterion {n} [{}] {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
}

fn find<'a>(rows: &'a [PlotRow], alg: &str, size: u32, deadline: u32) -> &'a PlotRow {
    rows.iter()
        .find(|r| r.algorithm == alg && r.size_x300b == size && r.deadline_x5ms == deadline)
        .unwrap_or_else(|| panic!("no aggregate for {alg} at ({size}, {deadline})"))
}

fn training_improvement(r: &mut Report, log: &[iovsim::dqn::LogRow]) {
    let early = log.get(199).and_then(|row| row.moving_avg);
    let late = log.last().and_then(|row| row.moving_avg);
    match (early, late) {
        (Some(a), Some(b)) => r.line(
            1,
            "training improvement",
            b >= 1.03 * a,
            format!(
                "moving_avg_200 episode 200 = {a:.3}, final = {b:.3}, ratio {:.3} (need >= 1.03)",
                b / a
            ),
        ),
        _ => r.line(1, "training improvement", false, "log shorter than 200 episodes".into()),
    }
}

fn gradient_check() -> (bool, f64) {
    let mut rng = stream(11, Stream::Init, 0);
    let mut worst: f64 = 0.0;
    for (hidden, inputs, actions) in [(vec![2], 4, 3), (vec![5, 4], 6, 5)] {
        let mut net = QNetwork::new(inputs, &hidden, actions, &mut rng);
        for l in net.layers_mut() {
            l.b.mapv_inplace(|_| rng.random_range(-0.3..0.3));
        }
        let x: Vec<f64> = (0..inputs).map(|_| rng.random_range(-1.0..1.0)).collect();
        let xa = Array2::from_shape_vec((1, inputs), x.clone()).unwrap();
        let a = rng.random_range(0..actions);
        let y = net.forward(&x).unwrap()[a] + 0.35;
        let loss = |n: &QNetwork| huber(n.forward(&x).unwrap()[a] - y);
        let grads = net.backward(xa.view(), &[a], &[y], &[1.0]).unwrap().grads.params_flat();
        let base = net.params_flat();
        let mut probe = net.clone();
        let h = 1e-6;
        for k in 0..base.len() {
            let mut p = base.clone();
            p[k] += h;
            probe.set_params_flat(&p).unwrap();
            let up = loss(&probe);
            p[k] -= 2.0 * h;
            probe.set_params_flat(&p).unwrap();
            let fd = (up - loss(&probe)) / (2.0 * h);
            worst = worst.max((fd - grads[k]).abs() / (fd.abs() + grads[k].abs()).max(1e-6));
        }
    }
    (worst < 1e-5, worst)
}

fn sic_identity() -> (bool, f64) {
    // under ideal SIC the per-signal rates add up to the rate of the total power
    let mut rng = stream(12, Stream::Oracle, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let k = rng.random_range(1..=5);
        let noise = 10f64.powf(rng.random_range(-3.0..1.0));
        let tx: Vec<(usize, f64)> = (0..k).map(|i| (i, 10f64.powf(rng.random_range(-3.0..2.0)))).collect();
        let sum: f64 = sic_sinr(&tx, noise).iter().map(|&s| rate_bps(s, 1.0)).sum();
        let total = rate_bps(tx.iter().map(|t| t.1).sum::<f64>() / noise, 1.0);
        worst = worst.max((sum - total).abs() / total);
    }
    (worst < 1e-9, worst)
}

fn replay_checks() -> (bool, String) {
    let exp = |i: usize| Experience {
        obs: vec![i as f32],
        action: i,
        reward: 0.0,
        next_obs: vec![0.0],
        terminal: false,
        slot_boundary: false,
    };
    let mut mem = ReplayMemory::new(16, 0.6, 1e-3);
    for i in 0..10 {
        mem.push(exp(i));
    }
    let mut rng = stream(13, Stream::Replay, 0);
    let mut counts = [0usize; 10];
    for _ in 0..1000 {
        for i in mem.sample(100, 0.4, &mut rng).unwrap().indices {
            counts[i] += 1;
        }
    }
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - 10_000.0).powi(2) / 10_000.0).sum();
    // same ten-item memory, one raw priority 10^6 times the rest
    let mut mem = ReplayMemory::new(16, 0.6, 0.0);
    for i in 0..10 {
        mem.push(exp(i));
    }
    let rest: Vec<usize> = (1..10).collect();
    mem.update_priorities(&rest, &[1e-6; 9]);
    mem.update_priorities(&[0], &[1.0]);
    let hits = mem
        .sample(100_000, 0.4, &mut rng)
        .unwrap()
        .indices
        .iter()
        .filter(|&&i| i == 0)
        .count();
    let frac = hits as f64 / 100_000.0;
    // 21.666 is the upper 1% point of chi-square with 9 degrees of freedom
    (
        chi2 < 21.666 && frac > 0.99,
        format!("chi2 {chi2:.2} (< 21.666), dominant share {frac:.4} (> 0.99)"),
    )
}

fn small_run_config(dir: &std::path::Path) -> RunConfig {
    RunConfig {
        out: dir.to_path_buf(),
        eval_episodes: 20,
        train: TrainConfig {
            episodes: 40,
            warmup: 200,
            hidden: vec![32, 16],
            lr: 1e-4,
            target_period: 100,
            ..TrainConfig::default()
        },
        ..RunConfig::default()
    }
}

fn determinism() -> (bool, String) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_run_config(dir.path());
    let run = || {
        let out = experiment::train_default(&cfg, |_| {}).unwrap();
        let mut log = Vec::new();
        experiment::write_train_log(&out.log, &mut log).unwrap();
        let mut eval = Vec::new();
        let mut rows = eval_dql(&out.net, &cfg, &cfg.sweep.points(SweepAxis::Default)).unwrap();
        rows.extend(eval_baselines(&Variant::ALL, &cfg, &cfg.sweep.points(SweepAxis::Default)).unwrap());
        experiment::write_eval_csv(&rows, &mut eval).unwrap();
        (log, to_bytes(&out.net), eval, out.net)
    };
    let (log_a, ck_a, ev_a, net) = run();
    let (log_b, ck_b, ev_b, _) = run();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&net, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    let obs = vec![0.5; net.input_dim()];
    let bits = |n: &QNetwork| n.forward(&obs).unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let same_forward = bits(&net) == bits(&loaded) && from_bytes(&ck_a).unwrap() == net;
    let ok = log_a == log_b && ck_a == ck_b && ev_a == ev_b && same_forward;
    (
        ok,
        format!(
            "log {} / checkpoint {} / eval csv {} byte-identical, reloaded forward bit-identical {}",
            log_a == log_b,
            ck_a == ck_b,
            ev_a == ev_b,
            same_forward
        ),
    )
}

fn main() {
    let started = Instant::now();
    let cfg = RunConfig::default();
    let mut report = Report { failures: 0 };

    println!("training default configuration ({} episodes)", cfg.train.episodes);
    let trained = experiment::train_default(&cfg, |_| {}).expect("training");
    println!("  trained in {:.0?}", started.elapsed());
    training_improvement(&mut report, &trained.log);

    let def = cfg.sweep.default_point();
    let (ds, dd) = (def.size_x300b, def.deadline_x5ms);
    let mut rows = eval_dql(&trained.net, &cfg, &cfg.sweep.points(SweepAxis::Size)).expect("dql eval");
    rows.extend(eval_baselines(&Variant::ALL, &cfg, &[def]).expect("baselines"));
    let agg = aggregate(&rows);
    for r in &agg {
        println!(
            "  {:<8} size x{:<2} deadline x{}: slice1 {:.3} slice2 {:.3} total {:.3} (+- {:.3}) over {} episodes",
            r.algorithm,
            r.size_x300b,
            r.deadline_x5ms,
            r.slice1_mean,
            r.slice2_mean,
            r.total_mean,
            r.total_stderr.unwrap_or(0.0),
            r.episodes
        );
    }

    let dql = find(&agg, DQL, ds, dd);
    let base: Vec<&PlotRow> = Variant::ALL.iter().map(|v| find(&agg, v.name(), ds, dd)).collect();
    let best = base.iter().map(|b| b.total_mean).fold(f64::NEG_INFINITY, f64::max);
    report.line(
        2,
        "policy dominance",
        dql.episodes >= 200 && base.iter().all(|b| dql.total_mean >= 1.2 * b.total_mean),
        format!(
            "DQL total {:.3} vs best baseline {:.3}, ratio {:.3} (need >= 1.20 over each)",
            dql.total_mean,
            best,
            dql.total_mean / best
        ),
    );
    report.line(
        3,
        "slice-2 priority",
        dql.slice2_mean > dql.slice1_mean,
        format!("DQL slice2 {:.3} vs slice1 {:.3}", dql.slice2_mean, dql.slice1_mean),
    );

    let trend: Vec<f64> = cfg
        .sweep
        .sizes_x300b
        .iter()
        .map(|&s| find(&agg, DQL, s, dd).slice2_mean)
        .collect();
    let rises: Vec<f64> = trend.windows(2).map(|w| w[1] - w[0]).filter(|&d| d > 0.0).collect();
    report.line(
        4,
        "size trend",
        rises.is_empty() || (rises.len() == 1 && rises[0] <= 0.3),
        format!("DQL slice2 by size {trend:.3?}, increases {rises:.3?} (at most one, <= 0.3)"),
    );

    let [oma, noma_mp, noma_rp] = [base[0].total_mean, base[1].total_mean, base[2].total_mean];
    let in_band = base.iter().all(|b| (4.5..=7.0).contains(&b.total_mean));
    report.line(
        5,
        "baseline ordering",
        noma_mp >= noma_rp && in_band,
        format!(
            "OMA-MP {oma:.3}, NOMA-MP {noma_mp:.3}, NOMA-RP {noma_rp:.3}; NOMA-MP >= NOMA-RP {}, all in [4.5, 7.0] {in_band}",
            noma_mp >= noma_rp
        ),
    );

    let oracle = oracle_sweep(cfg.seed, &OracleSweep::default()).expect("oracle sweep");
    let violations = oracle.iter().filter(|r| r.violates()).count();
    let instances = oracle.iter().map(|r| r.instance).max().map_or(0, |i| i + 1);
    report.line(
        6,
        "oracle bounds",
        instances >= 100 && violations == 0,
        format!(
            "{instances} instances, {} policy comparisons, {violations} violations",
            oracle.len()
        ),
    );

    let (fd_ok, fd_err) = gradient_check();
    let (sic_ok, sic_err) = sic_identity();
    let (rep_ok, rep_detail) = replay_checks();
    report.line(
        7,
        "numeric cores",
        fd_ok && sic_ok && rep_ok,
        format!("max gradient rel err {fd_err:.2e}, max SIC sum-rate rel err {sic_err:.2e}, {rep_detail}"),
    );

    let (det_ok, det_detail) = determinism();
    report.line(8, "determinism", det_ok, det_detail);

    println!(
        "{} of 8 criteria passed in {:.0?}",
        8 - report.failures,
        started.elapsed()
    );
    if report.failures > 0 {
        std::process::exit(1);
    }
}
