use std::io::Write;

use crate::cost::CycleClock;
use crate::error::Result;
use crate::metrics::{compute_util, compute_util_plus, UtilCounters};
use crate::pipeline::{MetricWindow, Mode};

use super::ExperimentConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub mode: Mode,
    pub nb_conn: usize,
    pub pkt_size: u16,
    /// Polled queues including the default queue.
    pub queues: usize,
    pub offered_rate: f64,
    /// Packets forwarded per second of measured time.
    pub forwarded_rate: f64,
    pub generated: u64,
    pub forwarded: u64,
    pub dropped: u64,
    pub residual: u64,
    pub loss_fraction: f64,
    /// Counters of the measured window.
    pub counters: UtilCounters,
    pub util: f64,
    pub util_plus: f64,
    pub hw_rules_used: usize,
    pub hw_table_full: u64,
    pub sw_connections: usize,
    pub nic_latency_us: f64,
    pub queue_drops: Vec<u64>,
    /// Every metric window of the first repetition, warm-up included.
    pub windows: Vec<WindowRow>,
}

impl ExperimentReport {
    pub fn conserved(&self) -> bool {
        self.generated == self.forwarded + self.dropped + self.residual
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowRow {
    pub window_start_ns: u64,
    pub counters: UtilCounters,
    /// `None` for a window without cycles.
    pub util: Option<f64>,
    pub util_plus: Option<f64>,
}

impl WindowRow {
    pub(crate) fn new(clock: &CycleClock, w: &MetricWindow, mode: Mode) -> Result<Self> {
        let (util, util_plus) = if w.counters.ref_cycles == 0 {
            (None, None)
        } else {
            (
                Some(compute_util(&w.counters)?),
                Some(compute_util_plus(&w.counters, &mode.util_config())?),
            )
        };
        Ok(WindowRow {
            window_start_ns: clock.cycles_to_ns(w.start_cycles),
            counters: w.counters,
            util,
            util_plus,
        })
    }
}

const COLUMNS: &[&str] = &[
    "mode",
    "nb_conn",
    "pkt_size",
    "queues",
    "offered_rate",
    "forwarded_rate",
    "generated",
    "forwarded",
    "dropped",
    "residual",
    "loss_fraction",
    "ref",
    "ops",
    "n_p",
    "n_b",
    "util",
    "util_plus",
    "hw_rules_used",
    "hw_table_full",
    "nic_latency_us",
    "queue_drops",
];

pub fn report_header() -> String {
    COLUMNS.join(",")
}

pub fn write_report_row<W: Write>(mut w: W, r: &ExperimentReport) -> Result<()> {
    let drops = r
        .queue_drops
        .iter()
        .map(u64::to_string)
        .collect::<Vec<_>>()
        .join(";");
    writeln!(
        w,
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        r.mode,
        r.nb_conn,
        r.pkt_size,
        r.queues,
        r.offered_rate,
        r.forwarded_rate,
        r.generated,
        r.forwarded,
        r.dropped,
        r.residual,
        r.loss_fraction,
        r.counters.ref_cycles,
        r.counters.ops_cycles,
        r.counters.n_p,
        r.counters.n_b,
        r.util,
        r.util_plus,
        r.hw_rules_used,
        r.hw_table_full,
        r.nic_latency_us,
        drops
    )?;
    Ok(())
}

/// Result file: each resolved config as a `#` block, then one CSV row per
/// report in the given order.
pub fn write_results<W: Write>(mut w: W, configs: &[ExperimentConfig], reports: &[ExperimentReport]) -> Result<()> {
    for (i, cfg) in configs.iter().enumerate() {
        writeln!(w, "# config {i}")?;
        for line in cfg.to_kv().lines() {
            writeln!(w, "#   {line}")?;
        }
    }
    writeln!(w, "{}", report_header())?;
    for r in reports {
        write_report_row(&mut w, r)?;
    }
    Ok(())
}

pub fn write_windows<W: Write>(mut w: W, rows: &[WindowRow]) -> Result<()> {
    writeln!(w, "window_start,REF,OPS,n_p,n_b,util,util_plus")?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.window_start_ns,
            r.counters.ref_cycles,
            r.counters.ops_cycles,
            r.counters.n_p,
            r.counters.n_b,
            opt(r.util),
            opt(r.util_plus)
        )?;
    }
    Ok(())
}
