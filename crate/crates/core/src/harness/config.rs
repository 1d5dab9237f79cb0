use std::fmt::Write as _;
use std::net::Ipv4Addr;
use std::path::Path;

use crate::cost::{CostModel, DEFAULT_FREQUENCY_HZ};
use crate::error::{Error, Result};
use crate::nic::{BufferBudget, NicConfig};
use crate::pipeline::{Mode, PipelineConfig, DEFAULT_BURST_MAX};
use crate::tables::VipTable;
use crate::trafficgen::{ConnectionScheduler, WorkloadSpec, MAX_CONNECTIONS};
use crate::types::{check_packet_size, Dip, Protocol, Vip};

/// Everything needed to run one experiment. Serializes to a flat
/// `key = value` text format; every key is optional when parsing.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub nb_conn: usize,
    pub pkt_size: u16,
    /// Offered packets per second. Zero means no measured traffic.
    pub rate: f64,
    /// Measured duration in seconds.
    pub duration: f64,
    pub seed: u64,
    pub scheduler: ConnectionScheduler,
    pub vip: Vip,
    /// Backends behind the VIP; defaults to one per queue.
    pub n_dips: usize,
    /// DIP-encoding NIC queues (HNLB); the default queue comes on top.
    pub queues: usize,
    pub burst_max: usize,
    pub fd_capacity: usize,
    pub total_buffer_slots: usize,
    pub slots_per_rule: f64,
    pub frequency_hz: u64,
    pub costs: CostModel,
    /// Rate at which every connection is opened before measuring. Zero
    /// disables the warm-up phase.
    pub warmup_rate: f64,
    /// Length of metric sub-windows in ns; zero for a single window.
    pub window_ns: u64,
    /// Highest rate the traffic source can offer; zero for unlimited.
    pub rate_cap: f64,
    pub repetitions: u32,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: Mode::Slb,
            nb_conn: 1,
            pkt_size: 64,
            rate: 1e6,
            duration: 0.01,
            seed: 1,
            scheduler: ConnectionScheduler::Uniform,
            vip: Vip {
                ip: Ipv4Addr::new(42, 3, 4, 5),
                port: 443,
                protocol: Protocol::Tcp,
            },
            n_dips: 10,
            queues: 10,
            burst_max: DEFAULT_BURST_MAX,
            fd_capacity: 8000,
            total_buffer_slots: 4096,
            slots_per_rule: 0.25,
            frequency_hz: DEFAULT_FREQUENCY_HZ,
            costs: CostModel::default(),
            warmup_rate: 1e6,
            window_ns: 0,
            rate_cap: 0.0,
            repetitions: 1,
        }
    }
}

/// Largest DIP pool the synthetic address plan supports (10.0.0.1 upward).
pub const MAX_DIPS: usize = 254;

impl ExperimentConfig {
    /// Single connection, single DIP, single DIP queue.
    pub fn best_case(mode: Mode) -> Self {
        ExperimentConfig {
            mode,
            n_dips: 1,
            queues: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.rate.is_finite() && self.rate >= 0.0) {
            return bad(format!("rate must be a non-negative number, got {}", self.rate));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return bad(format!("duration must be positive, got {}", self.duration));
        }
        if self.nb_conn == 0 || self.nb_conn > MAX_CONNECTIONS {
            return bad(format!("nb_conn must be in 1..={MAX_CONNECTIONS}, got {}", self.nb_conn));
        }
        check_packet_size(self.pkt_size).map_err(|e| Error::Config(e.to_string()))?;
        if self.n_dips == 0 || self.n_dips > MAX_DIPS {
            return bad(format!("n_dips must be in 1..={MAX_DIPS}, got {}", self.n_dips));
        }
        if self.mode == Mode::Hnlb && self.n_dips > self.queues {
            return bad(format!(
                "{} DIPs need {} DIP queues, only {} configured",
                self.n_dips, self.n_dips, self.queues
            ));
        }
        if !(self.warmup_rate.is_finite() && self.warmup_rate >= 0.0) {
            return bad(format!("warmup_rate must be non-negative, got {}", self.warmup_rate));
        }
        if !(self.rate_cap.is_finite() && self.rate_cap >= 0.0) {
            return bad(format!("rate_cap must be non-negative, got {}", self.rate_cap));
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1".into());
        }
        if self.frequency_hz == 0 {
            return bad("frequency_hz must be positive".into());
        }
        self.costs.validate()?;
        let vips = self.vip_table()?;
        self.pipeline_config(&vips)?.validate(&vips)?;
        self.nic_config()?.validate()
    }

    pub fn dips(&self) -> Vec<Dip> {
        (0..self.n_dips)
            .map(|i| Dip {
                ip: Ipv4Addr::new(10, 0, 0, 1 + i as u8),
                port: 335,
                index: i as u16,
            })
            .collect()
    }

    pub fn vip_table(&self) -> Result<VipTable> {
        let mut vt = VipTable::new();
        vt.insert(self.vip, self.dips())?;
        Ok(vt)
    }

    pub fn pipeline_config(&self, vips: &VipTable) -> Result<PipelineConfig> {
        let mut cfg = match self.mode {
            Mode::Slb => PipelineConfig::slb(),
            Mode::Hnlb => PipelineConfig::hnlb(vips, self.queues)?,
        };
        cfg.burst_max = self.burst_max;
        Ok(cfg)
    }

    pub fn nic_config(&self) -> Result<NicConfig> {
        Ok(NicConfig {
            fd_capacity: self.fd_capacity,
            budget: BufferBudget::new(self.total_buffer_slots, self.slots_per_rule)?,
            n_queues: match self.mode {
                Mode::Slb => 0,
                Mode::Hnlb => self.queues,
            },
        })
    }

    /// The rate actually offered after the source cap.
    pub fn effective_rate(&self) -> f64 {
        if self.rate_cap > 0.0 {
            self.rate.min(self.rate_cap)
        } else {
            self.rate
        }
    }

    pub fn workload(&self, start_ns: u64) -> WorkloadSpec {
        WorkloadSpec {
            nb_conn: self.nb_conn,
            pkt_size: self.pkt_size,
            offered_rate: self.effective_rate(),
            duration: self.duration,
            seed: self.seed,
            vip: self.vip,
            scheduler: self.scheduler,
            start_ns,
        }
    }

    pub fn with_rate(&self, rate: f64) -> Self {
        ExperimentConfig {
            rate,
            ..self.clone()
        }
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mut v = vec![
            ("mode", self.mode.to_string()),
            ("nb_conn", self.nb_conn.to_string()),
            ("pkt_size", self.pkt_size.to_string()),
            ("rate", self.rate.to_string()),
            ("duration", self.duration.to_string()),
            ("seed", self.seed.to_string()),
            (
                "scheduler",
                match self.scheduler {
                    ConnectionScheduler::Uniform => "uniform",
                    ConnectionScheduler::RoundRobin => "round_robin",
                }
                .to_string(),
            ),
            (
                "vip",
                format!("{}:{}:{}", self.vip.protocol, self.vip.ip, self.vip.port),
            ),
            ("n_dips", self.n_dips.to_string()),
            ("queues", self.queues.to_string()),
            ("burst_max", self.burst_max.to_string()),
            ("fd_capacity", self.fd_capacity.to_string()),
            ("total_buffer_slots", self.total_buffer_slots.to_string()),
            ("slots_per_rule", self.slots_per_rule.to_string()),
            ("frequency_hz", self.frequency_hz.to_string()),
            ("warmup_rate", self.warmup_rate.to_string()),
            ("window_ns", self.window_ns.to_string()),
            ("rate_cap", self.rate_cap.to_string()),
            ("repetitions", self.repetitions.to_string()),
        ];
        v.extend(self.costs.entries().iter().map(|(k, c)| (*k, c.to_string())));
        v
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Apply one setting. Hyphens in keys are accepted as underscores.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("invalid value `{v}` for `{key}`")))
        }
        match key.as_str() {
            "mode" => self.mode = value.parse()?,
            "nb_conn" => self.nb_conn = num(&key, value)?,
            "pkt_size" => self.pkt_size = num(&key, value)?,
            "rate" => self.rate = num(&key, value)?,
            "duration" => self.duration = num(&key, value)?,
            "seed" => self.seed = num(&key, value)?,
            "scheduler" => {
                self.scheduler = match value {
                    "uniform" => ConnectionScheduler::Uniform,
                    "round_robin" | "round-robin" | "rr" => ConnectionScheduler::RoundRobin,
                    _ => return Err(Error::Config(format!("unknown scheduler `{value}`"))),
                }
            }
            "vip" => self.vip = parse_vip(value)?,
            "n_dips" => self.n_dips = num(&key, value)?,
            "queues" => self.queues = num(&key, value)?,
            "burst_max" => self.burst_max = num(&key, value)?,
            "fd_capacity" => self.fd_capacity = num(&key, value)?,
            "total_buffer_slots" => self.total_buffer_slots = num(&key, value)?,
            "slots_per_rule" => self.slots_per_rule = num(&key, value)?,
            "frequency_hz" => self.frequency_hz = num(&key, value)?,
            "warmup_rate" => self.warmup_rate = num(&key, value)?,
            "window_ns" => self.window_ns = num(&key, value)?,
            "rate_cap" => self.rate_cap = num(&key, value)?,
            "repetitions" => self.repetitions = num(&key, value)?,
            other => {
                let v: u64 = num(other, value)?;
                if !self.costs.set(other, v) {
                    return Err(Error::Config(format!("unknown key `{other}`")));
                }
            }
        }
        Ok(())
    }

    /// Parse `key = value` lines on top of `self`. `#` starts a comment.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected `key = value`, found `{line}`"),
            })?;
            self.set(k, v).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_kv(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv(&std::fs::read_to_string(path)?)
    }
}

fn parse_vip(s: &str) -> Result<Vip> {
    let parts: Vec<&str> = s.split(':').collect();
    let err = || Error::Config(format!("vip must look like `TCP:42.3.4.5:443`, got `{s}`"));
    if parts.len() != 3 {
        return Err(err());
    }
    Ok(Vip {
        protocol: parts[0].parse().map_err(|_| err())?,
        ip: parts[1].parse().map_err(|_| err())?,
        port: parts[2].parse().map_err(|_| err())?,
    })
}
