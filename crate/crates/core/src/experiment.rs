//! Experiment outputs: training logs, paired evaluation tables, plot-ready
//! aggregates and the tiny-instance oracle sweep.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::baselines::{baseline_episode, Variant};
use crate::config::{RunConfig, SweepPoint};
use crate::dqn::{train, LogRow, QNetwork, TrainConfig};
use crate::env::Env;
use crate::error::{Error, Result};
use crate::oracle::{brute_force_optimal, dominant_action_sets, tiny_config};
use crate::phy::{EpisodeMetrics, Medium};
use crate::policy::{run_episode, GreedyPolicy, RandomPolicy};
use crate::rng::{stream, Stream};
use crate::world::World;

pub const TRAIN_LOG_HEADER: &str = "# iovsim-train-log v1";
pub const EVAL_HEADER: &str = "# iovsim-eval v1";
pub const PLOT_HEADER: &str = "# iovsim-plotdata v1";
pub const ORACLE_HEADER: &str = "# iovsim-oracle v1";

pub const TRAIN_LOG_COLUMNS: [&str; 5] = ["episode", "return", "moving_avg_200", "epsilon", "loss_mean"];
pub const EVAL_COLUMNS: [&str; 10] = [
    "algorithm",
    "size_x300B",
    "deadline_x5ms",
    "episode",
    "slice1_delivered",
    "slice2_delivered",
    "prr",
    "channel_hash",
    "slice1_receptions",
    "slice2_receptions",
];

pub const DQL: &str = "DQL";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_train_log<W: Write>(rows: &[LogRow], mut out: W) -> Result<()> {
    writeln!(out, "{TRAIN_LOG_HEADER}")?;
    writeln!(out, "{}", TRAIN_LOG_COLUMNS.join(","))?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.episode,
            r.ret,
            opt(r.moving_avg),
            r.epsilon,
            opt(r.loss_mean)
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub algorithm: String,
    #[serde(rename = "size_x300B")]
    pub size_x300b: u32,
    pub deadline_x5ms: u32,
    pub episode: usize,
    pub slice1_delivered: usize,
    pub slice2_delivered: usize,
    pub prr: Option<f64>,
    /// Fingerprint of the channel realization, hex.
    pub channel_hash: String,
    pub slice1_receptions: usize,
    pub slice2_receptions: usize,
}

impl EvalRow {
    pub fn new(algorithm: &str, p: SweepPoint, episode: usize, m: &EpisodeMetrics, channel_hash: u64) -> Self {
        EvalRow {
            algorithm: algorithm.to_string(),
            size_x300b: p.size_x300b,
            deadline_x5ms: p.deadline_x5ms,
            episode,
            slice1_delivered: m.slice1_delivered,
            slice2_delivered: m.slice2_delivered,
            prr: m.prr,
            channel_hash: format!("{channel_hash:016x}"),
            slice1_receptions: m.slice1_receptions,
            slice2_receptions: m.slice2_receptions,
        }
    }

    pub fn total(&self) -> usize {
        self.slice1_delivered + self.slice2_delivered
    }

    pub fn point(&self) -> SweepPoint {
        SweepPoint {
            size_x300b: self.size_x300b,
            deadline_x5ms: self.deadline_x5ms,
        }
    }
}

fn write_table<W: Write, T: Serialize>(header: &str, rows: &[T], columns: &[&str], mut out: W) -> Result<()> {
    writeln!(out, "{header}")?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(columns).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

/// Checks the version line of a table. The name part of `expected` must
/// match; a different version is reported as unsupported.
fn check_header(line: &str, expected: &str) -> Result<()> {
    let line = line.trim_end();
    if line == expected {
        return Ok(());
    }
    let (name, version) = expected.rsplit_once(' ').expect("header has a version");
    match line.strip_prefix(name).and_then(|rest| rest.strip_prefix(' ')) {
        Some(found) => Err(Error::UnsupportedVersion {
            found: found.to_string(),
            supported: version.to_string(),
        }),
        None => Err(Error::Format(format!("expected header {expected:?}, found {line:?}"))),
    }
}

/// Describes how a header row differs from the expected columns.
pub fn column_diff(found: &[String], expected: &[&str]) -> String {
    let missing: Vec<&str> = expected
        .iter()
        .copied()
        .filter(|c| !found.iter().any(|f| f == c))
        .collect();
    let extra: Vec<&str> = found
        .iter()
        .map(String::as_str)
        .filter(|f| !expected.contains(f))
        .collect();
    let mut parts = Vec::new();
    if !missing.is_empty() {
        parts.push(format!("missing [{}]", missing.join(", ")));
    }
    if !extra.is_empty() {
        parts.push(format!("unexpected [{}]", extra.join(", ")));
    }
    if parts.is_empty() {
        parts.push(format!("column order differs: expected [{}]", expected.join(", ")));
    }
    parts.join("; ")
}

fn read_table<R: BufRead, T: for<'de> Deserialize<'de>>(
    header: &str,
    columns: &[&str],
    mut input: R,
) -> Result<Vec<T>> {
    let mut first = String::new();
    input.read_line(&mut first)?;
    check_header(&first, header)?;
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let found: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if found.iter().map(String::as_str).ne(columns.iter().copied()) {
        return Err(Error::Schema(column_diff(&found, columns)));
    }
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

pub fn write_eval_csv<W: Write>(rows: &[EvalRow], out: W) -> Result<()> {
    write_table(EVAL_HEADER, rows, &EVAL_COLUMNS, out)
}

pub fn read_eval_csv<R: BufRead>(input: R) -> Result<Vec<EvalRow>> {
    read_table(EVAL_HEADER, &EVAL_COLUMNS, input)
}

/// Trains at the configured default sweep point.
pub fn train_default(cfg: &RunConfig, progress: impl FnMut(&LogRow)) -> Result<crate::dqn::TrainOutcome> {
    let world = World::new(cfg.at(cfg.sweep.default_point())?, cfg.seed)?;
    crate::dqn::train_with_progress(&world, &cfg.train, progress)
}

/// Greedy evaluation of `net` at every point, episodes paired with the
/// baselines through the shared world seed.
pub fn eval_dql(net: &QNetwork, cfg: &RunConfig, points: &[SweepPoint]) -> Result<Vec<EvalRow>> {
    let episodes = cfg.eval_episodes();
    let mut rows = Vec::with_capacity(points.len() * episodes.len());
    for &p in points {
        let world = World::new(cfg.at(p)?, cfg.seed)?;
        let sim = world.config();
        let proto = Env::new(sim.env.clone(), sim.channel)?;
        if net.input_dim() != proto.obs_dim() || net.num_actions() != proto.actions().len() {
            return Err(Error::ShapeMismatch {
                expected: format!("network {}->{}", proto.obs_dim(), proto.actions().len()),
                found: format!("network {}->{}", net.input_dim(), net.num_actions()),
            });
        }
        rows.extend(crate::par::map_ordered(&episodes, |k| {
            let (sc, ch) = world.episode(k)?;
            let hash = ch.fingerprint();
            let mut env = proto.clone();
            let m = run_episode(&mut env, &sc, ch, &mut GreedyPolicy { net })?;
            Ok(EvalRow::new(DQL, p, k, &m, hash))
        })?);
    }
    Ok(rows)
}

pub fn eval_baselines(variants: &[Variant], cfg: &RunConfig, points: &[SweepPoint]) -> Result<Vec<EvalRow>> {
    let episodes = cfg.eval_episodes();
    let mut rows = Vec::new();
    for &p in points {
        let world = World::new(cfg.at(p)?, cfg.seed)?;
        for &v in variants {
            rows.extend(crate::par::map_ordered(&episodes, |k| {
                let hash = world.episode(k)?.1.fingerprint();
                let run = baseline_episode(v, &world, k, &cfg.baselines)?;
                Ok(EvalRow::new(v.name(), p, k, &run.metrics, hash))
            })?);
        }
    }
    Ok(rows)
}

/// Mean and standard error; the error is absent below two samples.
pub fn mean_stderr(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    let n = xs.len();
    if n == 0 {
        return (None, None);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (Some(mean), None);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (Some(mean), Some((var / n as f64).sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub algorithm: String,
    #[serde(rename = "size_x300B")]
    pub size_x300b: u32,
    pub deadline_x5ms: u32,
    pub episodes: usize,
    pub slice1_mean: f64,
    pub slice1_stderr: Option<f64>,
    pub slice2_mean: f64,
    pub slice2_stderr: Option<f64>,
    pub total_mean: f64,
    pub total_stderr: Option<f64>,
    pub prr_mean: Option<f64>,
    pub prr_stderr: Option<f64>,
}

pub const PLOT_COLUMNS: [&str; 12] = [
    "algorithm",
    "size_x300B",
    "deadline_x5ms",
    "episodes",
    "slice1_mean",
    "slice1_stderr",
    "slice2_mean",
    "slice2_stderr",
    "total_mean",
    "total_stderr",
    "prr_mean",
    "prr_stderr",
];

/// One row per (algorithm, sweep point), sorted by those keys.
pub fn aggregate(rows: &[EvalRow]) -> Vec<PlotRow> {
    let mut groups: BTreeMap<(String, u32, u32), Vec<&EvalRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.algorithm.clone(), r.size_x300b, r.deadline_x5ms))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((algorithm, size_x300b, deadline_x5ms), g)| {
            let col = |f: &dyn Fn(&EvalRow) -> f64| mean_stderr(&g.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (s1, s1e) = col(&|r| r.slice1_delivered as f64);
            let (s2, s2e) = col(&|r| r.slice2_delivered as f64);
            let (t, te) = col(&|r| r.total() as f64);
            let prrs: Vec<f64> = g.iter().filter_map(|r| r.prr).collect();
            let (p, pe) = mean_stderr(&prrs);
            PlotRow {
                algorithm,
                size_x300b,
                deadline_x5ms,
                episodes: g.len(),
                slice1_mean: s1.unwrap_or(0.0),
                slice1_stderr: s1e,
                slice2_mean: s2.unwrap_or(0.0),
                slice2_stderr: s2e,
                total_mean: t.unwrap_or(0.0),
                total_stderr: te,
                prr_mean: p,
                prr_stderr: pe,
            }
        })
        .collect()
}

pub fn write_plotdata<W: Write>(rows: &[PlotRow], out: W) -> Result<()> {
    write_table(PLOT_HEADER, rows, &PLOT_COLUMNS, out)
}

pub fn read_plotdata<R: BufRead>(input: R) -> Result<Vec<PlotRow>> {
    read_table(PLOT_HEADER, &PLOT_COLUMNS, input)
}

/// Settings of the tiny-instance oracle sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSweep {
    pub instances: usize,
    pub destinations: usize,
    /// Episodes used to train the small networks checked against the
    /// optimum.
    pub train_episodes: usize,
}

impl Default for OracleSweep {
    fn default() -> Self {
        OracleSweep {
            instances: 100,
            destinations: 3,
            train_episodes: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub instance: usize,
    pub sources: usize,
    pub slots: usize,
    pub optimum: usize,
    pub algorithm: String,
    pub delivered: usize,
    /// Objective never decreased along the local search (baselines only).
    pub monotone: Option<bool>,
}

pub const ORACLE_COLUMNS: [&str; 7] = [
    "instance",
    "sources",
    "slots",
    "optimum",
    "algorithm",
    "delivered",
    "monotone",
];

impl OracleRow {
    pub fn violates(&self) -> bool {
        self.delivered > self.optimum || self.monotone == Some(false)
    }
}

/// Shape of instance `i`: one or two sources, two to four slots.
pub fn oracle_instance_shape(i: usize) -> (usize, usize) {
    (1 + i % 2, 2 + (i / 2) % 3)
}

fn small_net(sources: usize, sweep: &OracleSweep, seed: u64) -> Result<QNetwork> {
    let world = World::new(tiny_config(sources, sweep.destinations, 4, 2), seed)?;
    let cfg = TrainConfig {
        episodes: sweep.train_episodes,
        warmup: 64,
        batch: 16,
        capacity: 5000,
        target_period: 50,
        hidden: vec![32, 32],
        lr: 1e-3,
        ..TrainConfig::default()
    };
    Ok(train(&world, &cfg)?.net)
}

/// Compares every policy with the exact optimum on small random instances.
pub fn oracle_sweep(seed: u64, sweep: &OracleSweep) -> Result<Vec<OracleRow>> {
    let nets = [small_net(1, sweep, seed)?, small_net(2, sweep, seed)?];
    let ids: Vec<usize> = (0..sweep.instances).collect();
    let per = crate::par::map_ordered(&ids, |i| {
        let (m, slots) = oracle_instance_shape(i);
        let deadline = 1 + i % slots;
        let world = World::new(
            tiny_config(m, sweep.destinations, slots, deadline),
            seed.wrapping_add(i as u64),
        )?;
        let sim = world.config();
        let (sc, ch) = world.episode(0)?;
        let medium = Medium::new(&sc, ch.clone(), &sim.channel, sim.env.slot_duration_s)?;
        let best = brute_force_optimal(&sc.packets, &medium, &dominant_action_sets(&medium))?;
        let row = |algorithm: &str, delivered: usize, monotone: Option<bool>| OracleRow {
            instance: i,
            sources: m,
            slots,
            optimum: best.optimum,
            algorithm: algorithm.to_string(),
            delivered,
            monotone,
        };
        let mut rows = Vec::new();
        for v in Variant::ALL {
            let run = baseline_episode(v, &world, 0, &crate::baselines::BaselineConfig::default())?;
            let h = &run.search.history;
            rows.push(row(
                v.name(),
                run.metrics.total_delivered(),
                Some(h.windows(2).all(|w| w[1] > w[0])),
            ));
        }
        let mut env = Env::new(sim.env.clone(), sim.channel)?;
        let dql = run_episode(&mut env, &sc, ch.clone(), &mut GreedyPolicy { net: &nets[m - 1] })?;
        rows.push(row(DQL, dql.total_delivered(), None));
        let mut random = RandomPolicy {
            rng: stream(seed, Stream::Oracle, i as u64),
        };
        let rnd = run_episode(&mut env, &sc, ch, &mut random)?;
        rows.push(row("random", rnd.total_delivered(), None));
        Ok(rows)
    })?;
    Ok(per.into_iter().flatten().collect())
}

pub fn write_oracle_csv<W: Write>(rows: &[OracleRow], out: W) -> Result<()> {
    write_table(ORACLE_HEADER, rows, &ORACLE_COLUMNS, out)
}
