//! The receiving loop of the software (SLB) and NIC-assisted (HNLB) load
//! balancers.
//!
//! Both variants poll NIC queues round-robin in bursts and time every
//! iteration against the simulated cycle counter. New connections always go
//! through the default queue and the software path: hash, connection-table
//! lookup, DIP selection, install, rewrite, forward. HNLB additionally
//! installs an exact-match rule on the NIC that steers later packets of the
//! connection into the queue encoding its DIP, so they only need a rewrite.

use std::collections::BTreeMap;

use crate::cost::{charge, CostModel, CycleClock, Cycles, OpKind};
use crate::error::{Error, Result};
use crate::metrics::{UtilConfig, UtilCounters};
use crate::nic::{InstallOutcome, Nic, NicConfig, QueueId, DEFAULT_QUEUE};
use crate::tables::{ConnectionTable, VipTable};
use crate::types::{rewrite_packet, Dip, FiveTuple, Packet};

pub const DEFAULT_BURST_MAX: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Software only; a single default queue.
    Slb,
    /// Software plus NIC match-table offload.
    Hnlb,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Slb => "slb",
            Mode::Hnlb => "hnlb",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "slb" => Ok(Mode::Slb),
            "hnlb" => Ok(Mode::Hnlb),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

impl Mode {
    pub fn util_config(self) -> UtilConfig {
        match self {
            Mode::Slb => UtilConfig::SINGLE_QUEUE,
            Mode::Hnlb => UtilConfig::MULTI_QUEUE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineConfig {
    pub mode: Mode,
    /// DIP-encoding queues (HNLB). The default queue comes on top.
    pub n_queues: usize,
    pub burst_max: usize,
    pub queue_to_dip: BTreeMap<QueueId, Dip>,
}

impl PipelineConfig {
    pub fn slb() -> Self {
        PipelineConfig {
            mode: Mode::Slb,
            n_queues: 0,
            burst_max: DEFAULT_BURST_MAX,
            queue_to_dip: BTreeMap::new(),
        }
    }

    /// Queue `i` encodes the DIP with index `i - 1`. DIPs that share an
    /// index across VIP pools must be the same backend.
    pub fn hnlb(vips: &VipTable, n_queues: usize) -> Result<Self> {
        let mut queue_to_dip = BTreeMap::new();
        for dip in vips.dips() {
            let q = dip.index as usize + 1;
            if q > n_queues {
                return Err(Error::Config(format!(
                    "DIP {dip} needs queue {q} but only {n_queues} DIP queues are configured"
                )));
            }
            if let Some(prev) = queue_to_dip.insert(q, *dip) {
                if prev != *dip {
                    return Err(Error::Config(format!(
                        "queue {q} would encode both {prev} and {dip}"
                    )));
                }
            }
        }
        Ok(PipelineConfig {
            mode: Mode::Hnlb,
            n_queues,
            burst_max: DEFAULT_BURST_MAX,
            queue_to_dip,
        })
    }

    pub fn validate(&self, vips: &VipTable) -> Result<()> {
        if self.burst_max == 0 {
            return Err(Error::Config("burst_max must be at least 1".into()));
        }
        match self.mode {
            Mode::Slb => {
                if !self.queue_to_dip.is_empty() {
                    return Err(Error::Config("SLB mode does not use DIP queues".into()));
                }
            }
            Mode::Hnlb => {
                if self.n_queues == 0 {
                    return Err(Error::Config("HNLB needs at least one DIP queue".into()));
                }
                if let Some((&q, _)) = self
                    .queue_to_dip
                    .iter()
                    .find(|(&q, _)| q == DEFAULT_QUEUE || q > self.n_queues)
                {
                    return Err(Error::InvalidQueue(q));
                }
                for dip in vips.dips() {
                    let q = dip.index as usize + 1;
                    if self.queue_to_dip.get(&q) != Some(dip) {
                        return Err(Error::Config(format!("DIP {dip} is not encoded by queue {q}")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Total queues polled, including the default queue.
    pub fn polled_queues(&self) -> usize {
        match self.mode {
            Mode::Slb => 1,
            Mode::Hnlb => self.n_queues + 1,
        }
    }
}

/// How the loop decides to stop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopAt {
    /// Workload exhausted and every queue empty.
    Drained,
    /// First iteration starting at or after this simulated time.
    TimeNs(u64),
    /// Once this many packets were forwarded or dropped.
    Packets(u64),
}

/// Where the metric windows are cut.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WindowPlan {
    /// Cut once at this time, e.g. to separate warm-up from measurement.
    pub start_ns: Option<u64>,
    /// Then cut periodically with this length.
    pub every_ns: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub stop: StopAt,
    pub windows: WindowPlan,
    pub record_forwarding: bool,
    pub record_polls: bool,
}

impl RunOptions {
    pub fn until(stop: StopAt) -> Self {
        RunOptions {
            stop,
            windows: WindowPlan::default(),
            record_forwarding: false,
            record_polls: false,
        }
    }
}

/// One forwarded packet: its original tuple, the DIP it was sent to and the
/// queue it was polled from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardRecord {
    pub seq: u64,
    pub tuple: FiveTuple,
    pub dip: Dip,
    pub queue: QueueId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetricWindow {
    pub start_cycles: Cycles,
    pub end_cycles: Cycles,
    pub counters: UtilCounters,
    pub forwarded: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunStats {
    pub packets_in: u64,
    pub packets_forwarded: u64,
    /// Queue overflows plus unknown-VIP drops.
    pub packets_dropped: u64,
    pub dropped_unknown_vip: u64,
    pub queue_drops: Vec<u64>,
    pub residual_in_queues: u64,
    pub totals: UtilCounters,
    pub windows: Vec<MetricWindow>,
    pub hw_rules: usize,
    pub hw_table_full: u64,
    pub sw_connections: usize,
    pub final_cycles: Cycles,
    pub forward_log: Vec<ForwardRecord>,
    pub poll_log: Vec<QueueId>,
}

impl RunStats {
    pub fn conserved(&self) -> bool {
        self.packets_in == self.packets_forwarded + self.packets_dropped + self.residual_in_queues
    }
}

/// Complete state of one simulated load-balancer core.
#[derive(Debug)]
pub struct LoadBalancer {
    cfg: PipelineConfig,
    vips: VipTable,
    conns: ConnectionTable,
    nic: Nic,
    clock: CycleClock,
    costs: CostModel,
    counters: UtilCounters,
    cycles_last: Cycles,
    rr_cursor: QueueId,

    pending: Vec<Packet>,
    next_pending: usize,

    packets_in: u64,
    forwarded: u64,
    unknown_vip: u64,
    hw_table_full: u64,
    record_forwarding: bool,
    forward_log: Vec<ForwardRecord>,
    burst_buf: Vec<Packet>,
}

impl LoadBalancer {
    pub fn new(
        cfg: PipelineConfig,
        vips: VipTable,
        nic: &NicConfig,
        costs: CostModel,
        clock: CycleClock,
    ) -> Result<Self> {
        cfg.validate(&vips)?;
        costs.validate()?;
        if clock.frequency_hz() == 0 {
            return Err(Error::Config("clock frequency must be positive".into()));
        }
        let nic_cfg = NicConfig {
            n_queues: cfg.polled_queues() - 1,
            ..*nic
        };
        let nic = Nic::new(&nic_cfg)?;
        let cycles_last = clock.get_cycles();
        Ok(LoadBalancer {
            cfg,
            vips,
            conns: ConnectionTable::new(),
            nic,
            clock,
            costs,
            counters: UtilCounters::default(),
            cycles_last,
            rr_cursor: DEFAULT_QUEUE,
            pending: Vec::new(),
            next_pending: 0,
            packets_in: 0,
            forwarded: 0,
            unknown_vip: 0,
            hw_table_full: 0,
            record_forwarding: false,
            forward_log: Vec::new(),
            burst_buf: Vec::with_capacity(DEFAULT_BURST_MAX),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn clock(&self) -> &CycleClock {
        &self.clock
    }

    pub fn costs(&self) -> &CostModel {
        &self.costs
    }

    pub fn nic(&self) -> &Nic {
        &self.nic
    }

    pub fn connections(&self) -> &ConnectionTable {
        &self.conns
    }

    pub fn counters(&self) -> &UtilCounters {
        &self.counters
    }

    pub fn forwarded(&self) -> u64 {
        self.forwarded
    }

    pub fn forward_log(&self) -> &[ForwardRecord] {
        &self.forward_log
    }

    pub fn set_record_forwarding(&mut self, on: bool) {
        self.record_forwarding = on;
    }

    /// Queue future arrivals. Arrival times must not go backwards.
    pub fn offer<I: IntoIterator<Item = Packet>>(&mut self, packets: I) -> Result<()> {
        let mut last = self.pending.last().map_or(0, |p| p.arrival_ns);
        for p in packets {
            if p.arrival_ns < last {
                return Err(Error::InvalidSpec(format!(
                    "packet {} arrives at {} ns, before {} ns",
                    p.seq, p.arrival_ns, last
                )));
            }
            last = p.arrival_ns;
            self.pending.push(p);
        }
        Ok(())
    }

    fn next_arrival_cycles(&self) -> Option<Cycles> {
        self.pending
            .get(self.next_pending)
            .map(|p| self.clock.ns_to_cycles(p.arrival_ns))
    }

    /// Hand every packet that has arrived by now to the NIC.
    fn deliver_arrivals(&mut self) {
        let now = self.clock.get_cycles();
        while let Some(p) = self.pending.get(self.next_pending) {
            if self.clock.ns_to_cycles(p.arrival_ns) > now {
                break;
            }
            let p = *p;
            self.next_pending += 1;
            self.packets_in += 1;
            let _ = self.nic.receive(p);
        }
    }

    fn charge(&mut self, op: OpKind) -> Cycles {
        charge(&mut self.clock, &self.costs, op, self.conns.len() as u64)
    }

    fn emit(&mut self, original: &Packet, dip: Dip, queue: QueueId) -> Packet {
        self.charge(OpKind::Rewrite);
        let out = rewrite_packet(original, &dip);
        self.charge(OpKind::Forward);
        self.forwarded += 1;
        if self.record_forwarding {
            self.forward_log.push(ForwardRecord {
                seq: original.seq,
                tuple: original.tuple,
                dip,
                queue,
            });
        }
        out
    }

    /// Miss path after hash and lookup: select, install, rewrite, forward.
    fn admit(&mut self, p: &Packet) -> Result<(Dip, Packet)> {
        self.charge(OpKind::DipSelect);
        let dip = self.vips.select_dip(&p.tuple.vip())?;
        self.charge(OpKind::SwInstall);
        self.conns.install(p.tuple, dip)?;
        if self.cfg.mode == Mode::Hnlb {
            // Packets that arrived before the rule exists were classified
            // without it.
            self.deliver_arrivals();
            self.charge(OpKind::FdInstall);
            let q = dip.index as usize + 1;
            if self.nic.fd_install_rule(p.tuple, q)? == InstallOutcome::TableFull {
                self.hw_table_full += 1;
            }
        }
        let out = self.emit(p, dip, DEFAULT_QUEUE);
        Ok((dip, out))
    }

    /// Software handling of a connection's first packet. Fails with
    /// `UnknownVip` when the destination is not a configured VIP.
    pub fn process_first_packet(&mut self, p: &Packet) -> Result<(Dip, Packet)> {
        self.charge(OpKind::Hash);
        let _key = crate::types::hash_five_tuple(&p.tuple);
        self.charge(OpKind::Lookup);
        if let Some(existing) = self.conns.lookup(&p.tuple) {
            return Err(Error::ConsistencyViolation {
                tuple: p.tuple,
                detail: format!("first packet of a connection already mapped to {existing}"),
            });
        }
        self.admit(p)
    }

    /// Hash and look up a packet from the default queue; admit it on a miss.
    pub fn process_default_queue_packet(&mut self, p: &Packet) -> Result<Packet> {
        self.charge(OpKind::Hash);
        let _key = crate::types::hash_five_tuple(&p.tuple);
        self.charge(OpKind::Lookup);
        match self.conns.lookup(&p.tuple) {
            Some(dip) => Ok(self.emit(p, dip, DEFAULT_QUEUE)),
            None => self.admit(p).map(|(_, out)| out),
        }
    }

    /// Rewrite a burst from a DIP queue. The queue already encodes the DIP,
    /// so there is no hash and no table lookup.
    pub fn process_dip_queue_burst(&mut self, q: QueueId, burst: &[Packet]) -> Result<Vec<Packet>> {
        let dip = match (self.cfg.mode, self.cfg.queue_to_dip.get(&q)) {
            (Mode::Hnlb, Some(d)) => *d,
            _ => return Err(Error::InvalidQueue(q)),
        };
        Ok(burst.iter().map(|p| self.emit(p, dip, q)).collect())
    }

    fn process_burst(&mut self, q: QueueId, burst: &[Packet]) -> Result<()> {
        if q == DEFAULT_QUEUE {
            for p in burst {
                match self.process_default_queue_packet(p) {
                    Ok(_) => {}
                    Err(Error::UnknownVip(_)) => self.unknown_vip += 1,
                    Err(e) => return Err(e),
                }
            }
        } else {
            self.process_dip_queue_burst(q, burst)?;
        }
        Ok(())
    }

    fn all_queues_empty(&self) -> bool {
        self.nic.queues().total_occupancy() == 0
    }

    fn handled(&self) -> u64 {
        self.forwarded + self.unknown_vip + self.nic.queues().drops().iter().sum::<u64>()
    }

    /// Run the busy-poll loop until `opts.stop`.
    ///
    /// Each iteration reads the cycle counter, adds the previous iteration to
    /// `REF`, polls the next queue and, if it got packets, processes them and
    /// adds this iteration's cycles to `OPS`. Stretches of empty polls with
    /// nothing in flight are accounted in one step.
    pub fn run_receiving_loop(&mut self, opts: &RunOptions) -> Result<RunStats> {
        self.record_forwarding = opts.record_forwarding;
        let n_polled = self.cfg.polled_queues();
        let burst_max = self.cfg.burst_max;
        let poll_cost = self.costs.c_poll;
        let stop_cycles = match opts.stop {
            StopAt::TimeNs(ns) => Some(self.clock.ns_to_cycles(ns)),
            _ => None,
        };
        let mut boundaries: Box<dyn Iterator<Item = Cycles>> = {
            let clock = self.clock;
            let first = opts.windows.start_ns.map(|ns| clock.ns_to_cycles(ns));
            let every = opts.windows.every_ns.filter(|&e| e > 0);
            let base = opts.windows.start_ns.unwrap_or(0);
            let periodic = every.into_iter().flat_map(move |e| {
                (1u64..).map(move |k| clock.ns_to_cycles(base + k * e))
            });
            Box::new(first.into_iter().chain(periodic))
        };
        let mut next_boundary = boundaries.next();
        let mut windows = Vec::new();
        let mut window_start = self.clock.get_cycles();
        let mut window_forwarded_base = self.forwarded;
        let mut poll_log = Vec::new();

        loop {
            let before = self.clock.get_cycles();
            self.counters.ref_cycles += before - self.cycles_last;
            self.cycles_last = before;

            while let Some(b) = next_boundary.filter(|&b| before >= b) {
                windows.push(MetricWindow {
                    start_cycles: window_start,
                    end_cycles: before,
                    counters: self.counters.snapshot_and_reset(),
                    forwarded: self.forwarded - window_forwarded_base,
                });
                window_start = before;
                window_forwarded_base = self.forwarded;
                next_boundary = boundaries.next();
                let _ = b;
            }

            let done = match opts.stop {
                StopAt::Drained => self.next_pending >= self.pending.len() && self.all_queues_empty(),
                StopAt::TimeNs(_) => before >= stop_cycles.unwrap_or(0),
                StopAt::Packets(n) => self.handled() >= n,
            };
            if done {
                break;
            }

            self.deliver_arrivals();
            let q = self.rr_cursor;
            self.rr_cursor = (self.rr_cursor + 1) % n_polled;
            if opts.record_polls {
                poll_log.push(q);
            }
            self.charge(OpKind::Poll);
            let mut burst = std::mem::take(&mut self.burst_buf);
            self.nic.queues_mut().poll_into(q, burst_max, &mut burst)?;

            if !burst.is_empty() {
                self.counters.n_p += burst.len() as u64;
                self.counters.n_b += 1;
                let res = self.process_burst(q, &burst);
                self.burst_buf = burst;
                res?;
                self.counters.ops_cycles += self.clock.get_cycles() - before;
                continue;
            }
            self.burst_buf = burst;

            // Empty poll. If nothing is queued, the following polls are empty
            // too until the next event: account them in one step.
            if !self.all_queues_empty() {
                continue;
            }
            let target = [self.next_arrival_cycles(), stop_cycles, next_boundary]
                .into_iter()
                .flatten()
                .min();
            let Some(target) = target else {
                // Nothing will ever arrive and there is no time bound.
                if matches!(opts.stop, StopAt::Packets(_)) {
                    break;
                }
                continue;
            };
            let now = self.clock.get_cycles();
            if target <= now {
                continue;
            }
            let k = (target - now).div_ceil(poll_cost);
            let last_start = now + (k - 1) * poll_cost;
            self.counters.ref_cycles += last_start - self.cycles_last;
            self.cycles_last = last_start;
            self.clock.advance_to(now + k * poll_cost);
            if opts.record_polls {
                for j in 0..k {
                    poll_log.push((self.rr_cursor + j as usize) % n_polled);
                }
            }
            self.rr_cursor = (self.rr_cursor + (k % n_polled as u64) as usize) % n_polled;
        }

        windows.push(MetricWindow {
            start_cycles: window_start,
            end_cycles: self.clock.get_cycles(),
            counters: self.counters.snapshot_and_reset(),
            forwarded: self.forwarded - window_forwarded_base,
        });
        let totals = windows.iter().map(|w| w.counters).sum();
        let queue_drops = self.nic.queues().drops().to_vec();
        let queue_dropped: u64 = queue_drops.iter().sum();
        Ok(RunStats {
            packets_in: self.packets_in,
            packets_forwarded: self.forwarded,
            packets_dropped: queue_dropped + self.unknown_vip,
            dropped_unknown_vip: self.unknown_vip,
            queue_drops,
            residual_in_queues: self.nic.queues().total_occupancy() as u64,
            totals,
            windows,
            hw_rules: self.nic.table().len(),
            hw_table_full: self.hw_table_full,
            sw_connections: self.conns.len(),
            final_cycles: self.clock.get_cycles(),
            forward_log: std::mem::take(&mut self.forward_log),
            poll_log,
        })
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;
    use std::net::Ipv4Addr;

    use super::*;
    use crate::types::{Protocol, Vip};

    fn vip() -> Vip {
        Vip {
            ip: Ipv4Addr::new(42, 3, 4, 5),
            port: 443,
            protocol: Protocol::Tcp,
        }
    }

    fn dips(n: u16) -> Vec<Dip> {
        (0..n)
            .map(|i| Dip {
                ip: Ipv4Addr::new(10, 0, 0, 1 + i as u8),
                port: 335,
                index: i,
            })
            .collect()
    }

    fn vip_table(n: u16) -> VipTable {
        let mut vt = VipTable::new();
        vt.insert(vip(), dips(n)).unwrap();
        vt
    }

    fn tuple(k: u16) -> FiveTuple {
        FiveTuple::new(Protocol::Tcp, Ipv4Addr::new(1, 1, 1, 1), 1024 + k, vip().ip, vip().port)
    }

    fn pkt(k: u16, seq: u64, at: u64) -> Packet {
        Packet::new(tuple(k), 64, at, seq).unwrap()
    }

    fn lb(mode: Mode, n_dips: u16, n_queues: usize, fd_capacity: usize) -> LoadBalancer {
        let vt = vip_table(n_dips);
        let cfg = match mode {
            Mode::Slb => PipelineConfig::slb(),
            Mode::Hnlb => PipelineConfig::hnlb(&vt, n_queues).unwrap(),
        };
        let nic = NicConfig {
            fd_capacity,
            ..NicConfig::default()
        };
        LoadBalancer::new(cfg, vt, &nic, CostModel::default(), CycleClock::default()).unwrap()
    }

    #[test]
    fn first_packet_installs_in_both_tables() {
        let mut h = lb(Mode::Hnlb, 1, 1, 8000);
        let (dip, out) = h.process_first_packet(&pkt(0, 0, 0)).unwrap();
        assert_eq!(dip.index, 0);
        assert_eq!(out.tuple.dst_ip, dip.ip);
        assert_eq!(h.nic().table().len(), 1);
        assert_eq!(h.connections().len(), 1);
        let m = CostModel::default();
        let expected = m.c_hash + m.lookup_cost(0) + m.c_dip_select + m.c_sw_install
            + m.c_fd_install + m.c_rewrite + m.c_forward;
        assert_eq!(h.clock().get_cycles(), expected);
    }

    #[test]
    fn slb_never_touches_hardware() {
        let mut s = lb(Mode::Slb, 3, 0, 8000);
        for k in 0..50 {
            s.process_first_packet(&pkt(k, k as u64, 0)).unwrap();
        }
        assert_eq!(s.nic().table().len(), 0);
        assert_eq!(s.connections().len(), 50);
    }

    #[test]
    fn full_hardware_table_falls_back_to_software() {
        let mut h = lb(Mode::Hnlb, 2, 2, 2000);
        for k in 0..2000 {
            h.process_first_packet(&pkt(k, k as u64, 0)).unwrap();
        }
        assert_eq!(h.nic().table().len(), 2000);
        let (dip, _) = h.process_first_packet(&pkt(2000, 2000, 0)).unwrap();
        assert_eq!(h.nic().table().len(), 2000);
        assert_eq!(h.connections().lookup(&tuple(2000)), Some(dip));
        assert_eq!(h.hw_table_full, 1);
        assert_eq!(h.nic().classify(&pkt(2000, 2001, 0)), DEFAULT_QUEUE);
        let again = h.process_default_queue_packet(&pkt(2000, 2002, 0)).unwrap();
        assert_eq!(again.tuple.dst_ip, dip.ip);
    }

    #[test]
    fn unknown_vip_is_an_error_on_first_packet() {
        let mut s = lb(Mode::Slb, 1, 0, 8000);
        let mut t = tuple(0);
        t.dst_port = 80;
        let p = Packet::new(t, 64, 0, 0).unwrap();
        assert!(matches!(s.process_first_packet(&p), Err(Error::UnknownVip(_))));
    }

    #[test]
    fn default_queue_hit_uses_stored_dip() {
        let mut s = lb(Mode::Slb, 3, 0, 8000);
        let (first, _) = s.process_first_packet(&pkt(7, 0, 0)).unwrap();
        s.process_first_packet(&pkt(8, 1, 0)).unwrap();
        let before = s.clock().get_cycles();
        let out = s.process_default_queue_packet(&pkt(7, 2, 0)).unwrap();
        assert_eq!(out.tuple.dst_ip, first.ip);
        let m = CostModel::default();
        assert_eq!(
            s.clock().get_cycles() - before,
            m.c_hash + m.lookup_cost(2) + m.c_rewrite + m.c_forward
        );
    }

    #[test]
    fn first_packet_via_default_queue_matches_direct_path() {
        let mut a = lb(Mode::Hnlb, 3, 3, 8000);
        let mut b = lb(Mode::Hnlb, 3, 3, 8000);
        let (dip, out_a) = a.process_first_packet(&pkt(1, 0, 0)).unwrap();
        let out_b = b.process_default_queue_packet(&pkt(1, 0, 0)).unwrap();
        assert_eq!(out_a, out_b);
        assert_eq!(b.connections().lookup(&tuple(1)), Some(dip));
        assert_eq!(a.clock().get_cycles(), b.clock().get_cycles());
    }

    #[test]
    fn dip_queue_burst_skips_hash_and_lookup() {
        let mut h = lb(Mode::Hnlb, 4, 4, 8000);
        let burst: Vec<Packet> = (0..16).map(|s| pkt(3, s, 0)).collect();
        let out = h.process_dip_queue_burst(3, &burst).unwrap();
        assert_eq!(out.len(), 16);
        let d = dips(4)[2];
        assert!(out.iter().all(|p| p.tuple.dst_ip == d.ip && p.tuple.dst_port == d.port));
        let m = CostModel::default();
        assert_eq!(h.clock().get_cycles(), 16 * (m.c_rewrite + m.c_forward));

        let before = h.clock().get_cycles();
        assert!(h.process_dip_queue_burst(2, &[]).unwrap().is_empty());
        assert_eq!(h.clock().get_cycles(), before);
        assert!(matches!(h.process_dip_queue_burst(0, &burst), Err(Error::InvalidQueue(0))));
        assert!(matches!(h.process_dip_queue_burst(9, &burst), Err(Error::InvalidQueue(9))));
    }

    #[test]
    fn offload_burst_cheaper_than_software_for_any_table_size() {
        for table in [1u16, 100, 600, 2000, 8000] {
            let mut h = lb(Mode::Hnlb, 1, 1, 8000);
            let mut s = lb(Mode::Slb, 1, 0, 8000);
            for k in 0..table {
                s.process_first_packet(&pkt(k, k as u64, 0)).unwrap();
            }
            let burst: Vec<Packet> = (0..32).map(|i| pkt(0, 100_000 + i, 0)).collect();
            let hs = h.clock().get_cycles();
            h.process_dip_queue_burst(1, &burst).unwrap();
            let ss = s.clock().get_cycles();
            for p in &burst {
                s.process_default_queue_packet(p).unwrap();
            }
            assert!(h.clock().get_cycles() - hs < s.clock().get_cycles() - ss);
        }
    }

    #[test]
    fn idle_loop_has_zero_ops() {
        let mut s = lb(Mode::Slb, 1, 0, 8000);
        let stats = s.run_receiving_loop(&RunOptions::until(StopAt::TimeNs(1_000_000))).unwrap();
        assert_eq!(stats.totals.ops_cycles, 0);
        assert!(stats.totals.ref_cycles > 0);
        assert_eq!(crate::metrics::compute_util(&stats.totals).unwrap(), 0.0);
    }

    #[test]
    fn saturated_loop_is_fully_busy() {
        let mut s = lb(Mode::Slb, 1, 0, 8000);
        s.process_first_packet(&pkt(0, 0, 0)).unwrap();
        let start = s.clock().get_cycles();
        s.cycles_last = start;
        // Everything is already waiting: every poll returns a full burst.
        s.offer((1..=32 * 50).map(|i| pkt(0, i, 0))).unwrap();
        let stats = s.run_receiving_loop(&RunOptions::until(StopAt::Drained)).unwrap();
        assert_eq!(stats.totals.n_b, 50);
        assert_eq!(stats.totals.n_p, 1600);
        assert_eq!(stats.totals.ops_cycles, stats.totals.ref_cycles);
    }

    #[test]
    fn hnlb_polls_round_robin_from_zero() {
        let mut h = lb(Mode::Hnlb, 10, 10, 8000);
        let mut packets = Vec::new();
        for i in 0..3000u64 {
            packets.push(pkt((i % 3) as u16, i, i * 200));
        }
        h.offer(packets).unwrap();
        let mut opts = RunOptions::until(StopAt::Drained);
        opts.record_polls = true;
        let stats = h.run_receiving_loop(&opts).unwrap();
        assert!(stats.poll_log.len() > 11);
        for (i, q) in stats.poll_log.iter().enumerate() {
            assert_eq!(*q, i % 11);
        }
        assert!(stats.conserved());
    }

    #[test]
    fn per_packet_cost_components() {
        // One established connection, one packet per poll.
        let m = CostModel::default();
        let mut s = lb(Mode::Slb, 1, 0, 8000);
        s.process_first_packet(&pkt(0, 0, 0)).unwrap();
        s.cycles_last = s.clock().get_cycles();
        s.offer([pkt(0, 1, 0)]).unwrap();
        let stats = s.run_receiving_loop(&RunOptions::until(StopAt::Drained)).unwrap();
        assert_eq!(
            stats.totals.ops_cycles,
            m.c_poll + m.c_hash + m.lookup_cost(1) + m.c_rewrite + m.c_forward
        );

        let mut h = lb(Mode::Hnlb, 1, 1, 8000);
        h.process_first_packet(&pkt(0, 0, 0)).unwrap();
        h.rr_cursor = 1;
        h.cycles_last = h.clock().get_cycles();
        h.offer([pkt(0, 1, 0)]).unwrap();
        let stats = h.run_receiving_loop(&RunOptions::until(StopAt::Drained)).unwrap();
        assert_eq!(stats.totals.ops_cycles, m.c_poll + m.c_rewrite + m.c_forward);
    }

    #[test]
    fn early_second_packet_follows_first_through_software() {
        // Both packets land in queue 0 before the rule exists.
        let mut h = lb(Mode::Hnlb, 3, 3, 8000);
        h.offer([pkt(5, 0, 0), pkt(5, 1, 0), pkt(5, 2, 1_000_000)]).unwrap();
        let mut opts = RunOptions::until(StopAt::Drained);
        opts.record_forwarding = true;
        let stats = h.run_receiving_loop(&opts).unwrap();
        let log = &stats.forward_log;
        assert_eq!(log.len(), 3);
        assert_eq!(log[0].queue, 0);
        assert_eq!(log[1].queue, 0);
        assert_ne!(log[2].queue, 0);
        assert!(log.iter().all(|r| r.dip == log[0].dip));
    }

    #[test]
    fn windows_add_up() {
        let mut s = lb(Mode::Slb, 2, 0, 8000);
        s.offer((0..20_000u64).map(|i| pkt((i % 40) as u16, i, i * 150))).unwrap();
        let mut opts = RunOptions::until(StopAt::TimeNs(3_500_000));
        opts.windows = WindowPlan {
            start_ns: Some(500_000),
            every_ns: Some(1_000_000),
        };
        let stats = s.run_receiving_loop(&opts).unwrap();
        assert_eq!(stats.windows.len(), 5);
        let sum: UtilCounters = stats.windows.iter().map(|w| w.counters).sum();
        assert_eq!(sum, stats.totals);
        assert_eq!(stats.totals.ref_cycles, stats.final_cycles);
        for w in &stats.windows {
            assert!(w.counters.is_consistent());
        }
        for pair in stats.windows.windows(2) {
            assert_eq!(pair[0].end_cycles, pair[1].start_cycles);
        }
    }

    #[test]
    fn routing_matches_first_assignment() {
        let mut h = lb(Mode::Hnlb, 4, 4, 2000);
        let packets: Vec<Packet> = (0..40_000u64)
            .map(|i| pkt(((i * 7919) % 3000) as u16, i, i * 100))
            .collect();
        h.offer(packets).unwrap();
        let mut opts = RunOptions::until(StopAt::Drained);
        opts.record_forwarding = true;
        let stats = h.run_receiving_loop(&opts).unwrap();
        let mut first: HashMap<FiveTuple, Dip> = HashMap::new();
        for r in &stats.forward_log {
            assert_eq!(*first.entry(r.tuple).or_insert(r.dip), r.dip);
        }
        assert!(stats.conserved());
        assert_eq!(stats.hw_rules, 2000);
    }

    #[test]
    fn config_validation() {
        let vt = vip_table(4);
        assert!(PipelineConfig::hnlb(&vt, 3).is_err());
        let mut cfg = PipelineConfig::hnlb(&vt, 4).unwrap();
        cfg.burst_max = 0;
        assert!(cfg.validate(&vt).is_err());
        let mut cfg = PipelineConfig::hnlb(&vt, 4).unwrap();
        cfg.queue_to_dip.remove(&2);
        assert!(cfg.validate(&vt).is_err());
    }
}
