use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hnlb::harness::{
    self, CalibrationTargets, ExperimentConfig, FigureParams, SearchParams,
};
use hnlb::Mode;

#[derive(Parser)]
#[command(name = "hnlb", version, about = "Simulate software and NIC-offloaded L4 load balancers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single experiment.
    Run {
        #[command(flatten)]
        common: Common,
        /// Also write the per-window metric rows here.
        #[arg(long)]
        windows: Option<PathBuf>,
    },
    /// Search the maximum offered rate without packet loss.
    Maxrate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Run a grid of experiments, one result row per point.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        search: SearchArgs,
        /// Connection counts, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "1,100,1000,8000")]
        nb_conns: Vec<usize>,
        /// Packet sizes, comma separated. Defaults to --pkt-size.
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<u16>,
        /// Modes, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "slb,hnlb")]
        modes: Vec<String>,
        /// Report each point at its maximum lossless rate instead of --rate.
        #[arg(long)]
        max_rate: bool,
    },
    /// Write the figure-shaped CSV tables into a directory.
    Figures {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        search: SearchArgs,
        #[arg(long, default_value = "figures")]
        out_dir: PathBuf,
    },
    /// Fit c_forward and c_mem_penalty to throughput targets.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        search: SearchArgs,
        /// Target software best-case max lossless rate, pps.
        #[arg(long, default_value_t = 12e6)]
        slb_target: f64,
        /// Target offload/software rate ratio at --scale-conn.
        #[arg(long, default_value_t = 1.5)]
        gain: f64,
        #[arg(long, default_value_t = 8000)]
        scale_conn: usize,
    },
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    nb_conn: Option<usize>,
    #[arg(long)]
    pkt_size: Option<u16>,
    /// Offered rate, packets per second.
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    queues: Option<usize>,
    #[arg(long)]
    fd_capacity: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Extra `key=value` settings.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long, default_value_t = 1e5)]
    lo: f64,
    #[arg(long, default_value_t = 1e8)]
    hi: f64,
    /// Relative tolerance of the search.
    #[arg(long, default_value_t = 0.01)]
    tolerance: f64,
}

impl SearchArgs {
    fn params(&self) -> SearchParams {
        SearchParams {
            lo: self.lo,
            hi: self.hi,
            tolerance: self.tolerance,
        }
    }
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        let flags: [(&str, Option<String>); 7] = [
            ("mode", self.mode.clone()),
            ("nb_conn", self.nb_conn.map(|v| v.to_string())),
            ("pkt_size", self.pkt_size.map(|v| v.to_string())),
            ("rate", self.rate.map(|v| v.to_string())),
            ("queues", self.queues.map(|v| v.to_string())),
            ("fd_capacity", self.fd_capacity.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        for kv in &self.set {
            let Some((k, v)) = kv.split_once('=') else {
                bail!("--set expects KEY=VALUE, got `{kv}`");
            };
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    fn output(&self) -> Result<Box<dyn Write>> {
        Ok(match &self.out {
            Some(p) => Box::new(BufWriter::new(
                File::create(p).with_context(|| format!("creating {}", p.display()))?,
            )),
            None => Box::new(BufWriter::new(io::stdout())),
        })
    }
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).with_context(|| format!("writing {}", path.display()))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { common, windows } => {
            let cfg = common.config()?;
            let report = harness::run_experiment(&cfg)?;
            let mut out = common.output()?;
            harness::write_results(&mut out, std::slice::from_ref(&cfg), std::slice::from_ref(&report))?;
            out.flush()?;
            if let Some(path) = windows {
                let mut w = BufWriter::new(File::create(&path)?);
                harness::write_windows(&mut w, &report.windows)?;
                w.flush()?;
            }
        }
        Command::Maxrate { common, search } => {
            let cfg = common.config()?;
            let outcome = harness::find_max_lossless_rate(&cfg, &search.params())?;
            let resolved = cfg.with_rate(outcome.rate);
            let mut out = common.output()?;
            writeln!(out, "# max_lossless_rate = {}", outcome.rate)?;
            writeln!(out, "# probes = {}", outcome.probes.len())?;
            harness::write_results(&mut out, std::slice::from_ref(&resolved), std::slice::from_ref(&outcome.report))?;
            out.flush()?;
        }
        Command::Sweep {
            common,
            search,
            nb_conns,
            sizes,
            modes,
            max_rate,
        } => {
            let base = common.config()?;
            let modes = modes
                .iter()
                .map(|m| m.parse::<Mode>())
                .collect::<Result<Vec<_>, _>>()?;
            let sizes = if sizes.is_empty() { vec![base.pkt_size] } else { sizes };
            let grid: Vec<ExperimentConfig> = sizes
                .iter()
                .flat_map(|&pkt_size| {
                    harness::connection_grid(&ExperimentConfig { pkt_size, ..base.clone() }, &nb_conns, &modes)
                })
                .collect();
            let reports = if max_rate {
                harness::sweep_max_rate(&grid, &search.params())?
            } else {
                harness::sweep(&grid)?
            };
            let resolved: Vec<ExperimentConfig> = grid
                .iter()
                .zip(&reports)
                .map(|(c, r)| c.with_rate(r.offered_rate))
                .collect();
            let mut out = common.output()?;
            harness::write_results(&mut out, &resolved, &reports)?;
            out.flush()?;
        }
        Command::Figures {
            common,
            search,
            out_dir,
        } => {
            let base = common.config()?;
            let params = FigureParams {
                search: search.params(),
                ..FigureParams::default()
            };
            let set = harness::figures(&base, &params)?;
            std::fs::create_dir_all(&out_dir)?;
            for (name, body) in &set.tables {
                write_file(&out_dir.join(name), body)?;
            }
            write_file(&out_dir.join("config.txt"), &base.to_kv())?;
        }
        Command::Calibrate {
            common,
            search,
            slb_target,
            gain,
            scale_conn,
        } => {
            let base = common.config()?;
            let targets = CalibrationTargets {
                slb_best_case: slb_target,
                gain_at_scale: gain,
                scale_conn,
            };
            let costs = harness::calibrate(&base, &targets, &search.params())?;
            let mut out = common.output()?;
            for (k, v) in costs.entries() {
                writeln!(out, "{k} = {v}")?;
            }
            out.flush()?;
        }
    }
    Ok(())
}
