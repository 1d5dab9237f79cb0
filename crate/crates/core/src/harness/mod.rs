//! Experiment driver: single runs, maximum lossless rate search, parameter
//! sweeps and the figure data sets.

mod config;
mod report;

pub use config::{ExperimentConfig, MAX_DIPS};
pub use report::{
    report_header, write_report_row, write_results, write_windows, ExperimentReport, WindowRow,
};

use rayon::prelude::*;

use crate::cost::CycleClock;
use crate::error::{Error, Result};
use crate::metrics::{compute_util, compute_util_plus, UtilCounters};
use crate::nic::nic_latency_us;
use crate::pipeline::{LoadBalancer, Mode, RunOptions, RunStats, StopAt, WindowPlan};
use crate::trafficgen::{generate, warmup};

/// Idle time between the last warm-up packet and the measured stream.
const WARMUP_SETTLE_NS: u64 = 100_000;

/// Everything produced by one simulation: the raw run and its timeline.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub stats: RunStats,
    /// Start of the measured window.
    pub measure_start_ns: u64,
    pub measure_end_ns: u64,
}

/// Run one repetition of `cfg` and return the raw statistics.
pub fn simulate(cfg: &ExperimentConfig, opts_tweak: impl FnOnce(&mut RunOptions)) -> Result<Simulation> {
    cfg.validate()?;
    let vips = cfg.vip_table()?;
    let pipeline = cfg.pipeline_config(&vips)?;
    let nic = cfg.nic_config()?;
    let mut lb = LoadBalancer::new(pipeline, vips, &nic, cfg.costs, CycleClock::new(cfg.frequency_hz))?;

    let mut measure_start_ns = 0;
    let mut next_seq = 0;
    if cfg.warmup_rate > 0.0 {
        let w = warmup(cfg.nb_conn, &cfg.vip, cfg.pkt_size, cfg.warmup_rate)?;
        measure_start_ns = w.last().map_or(0, |p| p.arrival_ns) + WARMUP_SETTLE_NS;
        next_seq = w.len() as u64;
        lb.offer(w)?;
    }
    if cfg.effective_rate() > 0.0 {
        let mut main = generate(&cfg.workload(measure_start_ns))?;
        for p in &mut main {
            p.seq += next_seq;
        }
        lb.offer(main)?;
    }
    let measure_end_ns = measure_start_ns + (cfg.duration * 1e9).round() as u64;
    let mut opts = RunOptions::until(StopAt::TimeNs(measure_end_ns));
    opts.windows = WindowPlan {
        start_ns: (measure_start_ns > 0).then_some(measure_start_ns),
        every_ns: (cfg.window_ns > 0).then_some(cfg.window_ns),
    };
    opts_tweak(&mut opts);
    let stats = lb.run_receiving_loop(&opts)?;
    Ok(Simulation {
        stats,
        measure_start_ns,
        measure_end_ns,
    })
}

fn report_from(cfg: &ExperimentConfig, runs: &[Simulation]) -> Result<ExperimentReport> {
    let clock = CycleClock::new(cfg.frequency_hz);
    let mut measured = UtilCounters::default();
    let mut generated = 0;
    let mut forwarded = 0;
    let mut dropped = 0;
    let mut residual = 0;
    let mut measured_forwarded = 0;
    let mut queue_drops: Vec<u64> = Vec::new();
    let mut windows = Vec::new();
    let mut hw_rules = 0;
    let mut hw_table_full = 0;
    let mut sw_connections = 0;
    for sim in runs {
        let s = &sim.stats;
        let start = clock.ns_to_cycles(sim.measure_start_ns);
        for w in s.windows.iter().filter(|w| w.start_cycles >= start) {
            measured += w.counters;
            measured_forwarded += w.forwarded;
        }
        generated += s.packets_in;
        forwarded += s.packets_forwarded;
        dropped += s.packets_dropped;
        residual += s.residual_in_queues;
        if queue_drops.len() < s.queue_drops.len() {
            queue_drops.resize(s.queue_drops.len(), 0);
        }
        for (acc, d) in queue_drops.iter_mut().zip(&s.queue_drops) {
            *acc += d;
        }
        hw_rules = hw_rules.max(s.hw_rules);
        hw_table_full += s.hw_table_full;
        sw_connections = sw_connections.max(s.sw_connections);
        if windows.is_empty() {
            windows = s
                .windows
                .iter()
                .map(|w| WindowRow::new(&clock, w, cfg.mode))
                .collect::<Result<_>>()?;
        }
    }
    let measured_secs = cfg.duration * runs.len() as f64;
    let util_cfg = cfg.mode.util_config();
    Ok(ExperimentReport {
        mode: cfg.mode,
        nb_conn: cfg.nb_conn,
        pkt_size: cfg.pkt_size,
        queues: cfg.pipeline_config(&cfg.vip_table()?)?.polled_queues(),
        offered_rate: cfg.effective_rate(),
        forwarded_rate: measured_forwarded as f64 / measured_secs,
        generated,
        forwarded,
        dropped,
        residual,
        loss_fraction: if generated == 0 {
            0.0
        } else {
            dropped as f64 / generated as f64
        },
        counters: measured,
        util: compute_util(&measured)?,
        util_plus: compute_util_plus(&measured, &util_cfg)?,
        hw_rules_used: hw_rules,
        hw_table_full,
        sw_connections,
        nic_latency_us: nic_latency_us(hw_rules),
        queue_drops,
        windows,
    })
}

/// Run `cfg` (all repetitions, seeds `seed + r`) and summarise the measured
/// window. Counters are pooled across repetitions.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let runs = (0..cfg.repetitions)
        .map(|r| {
            let rep = ExperimentConfig {
                seed: cfg.seed.wrapping_add(u64::from(r)),
                ..cfg.clone()
            };
            simulate(&rep, |_| {})
        })
        .collect::<Result<Vec<_>>>()?;
    report_from(cfg, &runs)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchParams {
    pub lo: f64,
    pub hi: f64,
    /// Relative width of the final bracket.
    pub tolerance: f64,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            lo: 1e5,
            hi: 1e8,
            tolerance: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    /// Largest tested rate without any drop.
    pub rate: f64,
    /// Report of the run at `rate`.
    pub report: ExperimentReport,
    /// Every probed `(rate, dropped)` pair in order.
    pub probes: Vec<(f64, u64)>,
}

/// Bisect the offered rate (geometrically) for the largest rate with zero
/// drops. Requires `lo` to be lossless.
pub fn find_max_lossless_rate(cfg: &ExperimentConfig, params: &SearchParams) -> Result<SearchOutcome> {
    let SearchParams { mut lo, mut hi, tolerance } = *params;
    if !(lo > 0.0 && lo < hi && tolerance > 0.0) {
        return Err(Error::SearchRange(format!(
            "need 0 < lo < hi and tolerance > 0, got lo={lo} hi={hi} tolerance={tolerance}"
        )));
    }
    cfg.validate()?;
    let mut probes = Vec::new();
    let mut probe = |rate: f64| -> Result<ExperimentReport> {
        let r = run_experiment(&cfg.with_rate(rate))?;
        probes.push((rate, r.dropped));
        Ok(r)
    };
    let mut best = probe(lo)?;
    if best.dropped > 0 {
        return Err(Error::SearchRange(format!(
            "{} packets lost already at the lower bound {lo} pps",
            best.dropped
        )));
    }
    let top = probe(hi)?;
    if top.dropped == 0 {
        return Ok(SearchOutcome {
            rate: hi,
            report: top,
            probes,
        });
    }
    while hi - lo > tolerance * lo {
        let mid = (lo * hi).sqrt();
        let r = probe(mid)?;
        if r.dropped == 0 {
            lo = mid;
            best = r;
        } else {
            hi = mid;
        }
    }
    Ok(SearchOutcome {
        rate: lo,
        report: best,
        probes,
    })
}

fn check_grid(grid: &[ExperimentConfig]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Config("empty sweep grid".into()));
    }
    grid.iter().try_for_each(ExperimentConfig::validate)
}

/// One report per grid point, in grid order. Every point is validated
/// before anything runs; points run in parallel.
pub fn sweep(grid: &[ExperimentConfig]) -> Result<Vec<ExperimentReport>> {
    check_grid(grid)?;
    grid.par_iter().map(run_experiment).collect()
}

/// Like [`sweep`], but each row is the report at that point's maximum
/// lossless rate.
pub fn sweep_max_rate(grid: &[ExperimentConfig], params: &SearchParams) -> Result<Vec<ExperimentReport>> {
    check_grid(grid)?;
    grid.par_iter()
        .map(|cfg| find_max_lossless_rate(cfg, params).map(|o| o.report))
        .collect()
}

/// `nb_conn x mode` grid on top of `base`, mode varying fastest.
pub fn connection_grid(base: &ExperimentConfig, nb_conns: &[usize], modes: &[Mode]) -> Vec<ExperimentConfig> {
    nb_conns
        .iter()
        .flat_map(|&nb_conn| {
            modes.iter().map(move |&mode| ExperimentConfig {
                mode,
                nb_conn,
                ..base.clone()
            })
        })
        .collect()
}

/// Targets for [`calibrate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationTargets {
    /// Software best-case max lossless rate (1 connection, 64 B), pps.
    pub slb_best_case: f64,
    /// Offload / software max lossless rate ratio at `scale_conn`.
    pub gain_at_scale: f64,
    pub scale_conn: usize,
}

impl Default for CalibrationTargets {
    fn default() -> Self {
        CalibrationTargets {
            slb_best_case: 12e6,
            gain_at_scale: 1.5,
            scale_conn: 8000,
        }
    }
}

/// Fit `c_forward` to the software best case, then `c_mem_penalty` to the
/// offload gain at scale. All other costs in `base.costs` stay fixed.
pub fn calibrate(
    base: &ExperimentConfig,
    targets: &CalibrationTargets,
    search: &SearchParams,
) -> Result<crate::cost::CostModel> {
    let mut costs = base.costs;
    let rate_for = |cfg: &ExperimentConfig| find_max_lossless_rate(cfg, search).map(|o| o.rate);

    // Max rate falls as c_forward grows: find the smallest c_forward whose
    // rate does not exceed the target.
    let slb = ExperimentConfig::best_case(Mode::Slb);
    let (mut lo, mut hi) = (0u64, 4096u64);
    while lo < hi {
        let mid = (lo + hi) / 2;
        costs.c_forward = mid;
        let r = rate_for(&ExperimentConfig { costs, ..slb.clone() })?;
        if r > targets.slb_best_case {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    costs.c_forward = lo;

    // The gain grows with the memory penalty.
    let at_scale = ExperimentConfig {
        nb_conn: targets.scale_conn,
        ..base.clone()
    };
    let hnlb_rate = rate_for(&ExperimentConfig {
        mode: Mode::Hnlb,
        costs,
        ..at_scale.clone()
    })?;
    let (mut lo, mut hi) = (0u64, 8192u64);
    while lo < hi {
        let mid = (lo + hi) / 2;
        costs.c_mem_penalty = mid;
        let slb_rate = rate_for(&ExperimentConfig {
            mode: Mode::Slb,
            costs,
            ..at_scale.clone()
        })?;
        if hnlb_rate / slb_rate < targets.gain_at_scale {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    costs.c_mem_penalty = lo;
    Ok(costs)
}

/// Named CSV tables shaped like the published figures.
#[derive(Debug, Clone)]
pub struct FigureSet {
    pub tables: Vec<(String, String)>,
}

#[derive(Debug, Clone)]
pub struct FigureParams {
    pub nb_conns: Vec<usize>,
    pub sizes: Vec<u16>,
    /// Offered rates for the utilization curves, as fractions of the
    /// configuration's max lossless rate.
    pub rate_fractions: Vec<f64>,
    pub search: SearchParams,
}

impl Default for FigureParams {
    fn default() -> Self {
        FigureParams {
            nb_conns: vec![1, 100, 1000, 8000],
            sizes: vec![64, 128, 256, 512, 1024],
            rate_fractions: (1..=10).map(|i| f64::from(i) / 10.0).collect(),
            search: SearchParams::default(),
        }
    }
}

fn csv_table(header: &str, rows: &[String]) -> String {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        s.push_str(r);
        s.push('\n');
    }
    s
}

/// Best-case throughput, max rate vs connections, and util+ vs offered rate
/// per connection count and per packet size.
pub fn figures(base: &ExperimentConfig, params: &FigureParams) -> Result<FigureSet> {
    let modes = [Mode::Slb, Mode::Hnlb];
    let mut tables = Vec::new();

    let best: Vec<ExperimentConfig> = modes
        .iter()
        .map(|&m| ExperimentConfig {
            costs: base.costs,
            frequency_hz: base.frequency_hz,
            duration: base.duration,
            ..ExperimentConfig::best_case(m)
        })
        .collect();
    let rows = sweep_max_rate(&best, &params.search)?
        .iter()
        .map(|r| format!("{},{},{}", r.mode, r.offered_rate, r.util_plus))
        .collect::<Vec<_>>();
    tables.push((
        "throughput_best_case.csv".to_string(),
        csv_table("mode,max_lossless_rate_pps,util_plus", &rows),
    ));

    let conn_grid = connection_grid(base, &params.nb_conns, &modes);
    let at_max = sweep_max_rate(&conn_grid, &params.search)?;
    let rows = at_max
        .iter()
        .map(|r| format!("{},{},{},{}", r.mode, r.nb_conn, r.offered_rate, r.util_plus))
        .collect::<Vec<_>>();
    tables.push((
        "throughput_vs_connections.csv".to_string(),
        csv_table("mode,nb_conn,max_lossless_rate_pps,util_plus", &rows),
    ));

    let curves = |grid: Vec<ExperimentConfig>, maxes: Vec<f64>| -> Result<Vec<String>> {
        let points: Vec<ExperimentConfig> = grid
            .iter()
            .zip(&maxes)
            .flat_map(|(cfg, &max)| params.rate_fractions.iter().map(move |f| cfg.with_rate(f * max)))
            .collect();
        Ok(sweep(&points)?
            .iter()
            .map(|r| {
                format!(
                    "{},{},{},{},{},{}",
                    r.mode, r.nb_conn, r.pkt_size, r.offered_rate, r.util_plus, r.loss_fraction
                )
            })
            .collect())
    };
    let header = "mode,nb_conn,pkt_size,offered_rate_pps,util_plus,loss_fraction";
    let rows = curves(conn_grid, at_max.iter().map(|r| r.offered_rate).collect())?;
    tables.push(("util_vs_rate_connections.csv".to_string(), csv_table(header, &rows)));

    let size_grid: Vec<ExperimentConfig> = params
        .sizes
        .iter()
        .flat_map(|&pkt_size| {
            modes.iter().map(move |&mode| ExperimentConfig {
                mode,
                pkt_size,
                nb_conn: 1000,
                ..base.clone()
            })
        })
        .collect();
    let size_max = sweep_max_rate(&size_grid, &params.search)?;
    let rows = curves(size_grid, size_max.iter().map(|r| r.offered_rate).collect())?;
    tables.push(("util_vs_rate_sizes.csv".to_string(), csv_table(header, &rows)));

    Ok(FigureSet { tables })
}
