//! Emulated NIC: an exact-match 5-tuple → queue table in the style of Flow
//! Director, the receive queues it steers into, and the receive-buffer memory
//! the two share.

use std::collections::{HashMap, VecDeque};

use crate::error::{Error, Result};
use crate::types::{FiveTuple, Packet};

pub type QueueId = usize;

/// Queue that receives every packet without a matching rule.
pub const DEFAULT_QUEUE: QueueId = 0;

pub const MIN_FD_CAPACITY: usize = 2000;
pub const MAX_FD_CAPACITY: usize = 8000;

/// Rule count at which the NIC latency reaches its upper anchor.
const LATENCY_RULE_SPAN: f64 = 8000.0;
const LATENCY_BASE_US: f64 = 95.0;
const LATENCY_SPAN_US: f64 = 10.0;

/// NIC latency as a function of installed rules. Reporting only.
pub fn nic_latency_us(rules: usize) -> f64 {
    LATENCY_BASE_US + LATENCY_SPAN_US * (rules as f64 / LATENCY_RULE_SPAN)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstallOutcome {
    Installed,
    TableFull,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnqueueOutcome {
    Queued,
    Dropped,
}

#[derive(Debug, Clone)]
pub struct HardwareMatchTable {
    rules: HashMap<FiveTuple, QueueId>,
    capacity: usize,
    n_queues: usize,
}

impl HardwareMatchTable {
    /// `n_queues` is the number of rule-targetable queues (1..=n_queues).
    pub fn new(capacity: usize, n_queues: usize) -> Self {
        HardwareMatchTable {
            rules: HashMap::with_capacity(capacity),
            capacity,
            n_queues,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn install(&mut self, t: FiveTuple, q: QueueId) -> Result<InstallOutcome> {
        if q == DEFAULT_QUEUE || q > self.n_queues {
            return Err(Error::InvalidQueue(q));
        }
        if let Some(&existing) = self.rules.get(&t) {
            if existing == q {
                return Ok(InstallOutcome::Installed);
            }
            return Err(Error::ConsistencyViolation {
                tuple: t,
                detail: format!("hardware rule targets queue {existing}, refusing queue {q}"),
            });
        }
        if self.rules.len() >= self.capacity {
            return Ok(InstallOutcome::TableFull);
        }
        self.rules.insert(t, q);
        Ok(InstallOutcome::Installed)
    }

    /// Queue for `p`: the matching rule's target, or the default queue.
    pub fn classify(&self, p: &Packet) -> QueueId {
        self.rules.get(&p.tuple).copied().unwrap_or(DEFAULT_QUEUE)
    }
}

/// Receive memory shared between match rules and queue slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BufferBudget {
    pub total_slots: usize,
    /// Slots consumed per rule, in millionths of a slot.
    pub slots_per_rule_micro: u64,
}

impl Default for BufferBudget {
    fn default() -> Self {
        BufferBudget {
            total_slots: 4096,
            slots_per_rule_micro: 250_000,
        }
    }
}

impl BufferBudget {
    pub fn new(total_slots: usize, slots_per_rule: f64) -> Result<Self> {
        if !(slots_per_rule.is_finite() && slots_per_rule >= 0.0) {
            return Err(Error::Config(format!(
                "slots_per_rule must be a non-negative number, got {slots_per_rule}"
            )));
        }
        Ok(BufferBudget {
            total_slots,
            slots_per_rule_micro: (slots_per_rule * 1e6).round() as u64,
        })
    }

    pub fn slots_per_rule(&self) -> f64 {
        self.slots_per_rule_micro as f64 / 1e6
    }

    /// `total − ceil(slots_per_rule · rules)`, saturating at zero.
    pub fn available_receive_slots(&self, rules: usize) -> usize {
        let used = (rules as u64 * self.slots_per_rule_micro).div_ceil(1_000_000);
        self.total_slots.saturating_sub(used as usize)
    }
}

#[derive(Debug, Clone)]
pub struct NicQueues {
    queues: Vec<VecDeque<Packet>>,
    capacity: Vec<usize>,
    drops: Vec<u64>,
}

impl NicQueues {
    /// `n` queues including the default queue, all with the same slot capacity.
    pub fn new(n: usize, per_queue: usize) -> Self {
        let n = n.max(1);
        NicQueues {
            queues: (0..n).map(|_| VecDeque::with_capacity(per_queue)).collect(),
            capacity: vec![per_queue; n],
            drops: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.queues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queues.is_empty()
    }

    /// Split `slots` equally over all queues, remainder to the default queue.
    pub fn distribute(&mut self, slots: usize) {
        let n = self.queues.len();
        let share = slots / n;
        for c in self.capacity.iter_mut() {
            *c = share;
        }
        self.capacity[DEFAULT_QUEUE] += slots % n;
    }

    pub fn capacity(&self, q: QueueId) -> Result<usize> {
        self.capacity.get(q).copied().ok_or(Error::InvalidQueue(q))
    }

    pub fn occupancy(&self, q: QueueId) -> Result<usize> {
        self.queues.get(q).map(VecDeque::len).ok_or(Error::InvalidQueue(q))
    }

    pub fn total_occupancy(&self) -> usize {
        self.queues.iter().map(VecDeque::len).sum()
    }

    pub fn drop_count(&self, q: QueueId) -> Result<u64> {
        self.drops.get(q).copied().ok_or(Error::InvalidQueue(q))
    }

    pub fn drops(&self) -> &[u64] {
        &self.drops
    }

    pub fn enqueue(&mut self, q: QueueId, p: Packet) -> Result<EnqueueOutcome> {
        let queue = self.queues.get_mut(q).ok_or(Error::InvalidQueue(q))?;
        if queue.len() >= self.capacity[q] {
            self.drops[q] += 1;
            Ok(EnqueueOutcome::Dropped)
        } else {
            queue.push_back(p);
            Ok(EnqueueOutcome::Queued)
        }
    }

    /// Remove up to `max_burst` packets from `q` in FIFO order.
    pub fn poll(&mut self, q: QueueId, max_burst: usize) -> Result<Vec<Packet>> {
        let mut out = Vec::new();
        self.poll_into(q, max_burst, &mut out)?;
        Ok(out)
    }

    pub(crate) fn poll_into(&mut self, q: QueueId, max_burst: usize, out: &mut Vec<Packet>) -> Result<()> {
        if max_burst == 0 {
            return Err(Error::Config("max_burst must be at least 1".into()));
        }
        let queue = self.queues.get_mut(q).ok_or(Error::InvalidQueue(q))?;
        let n = queue.len().min(max_burst);
        out.clear();
        out.extend(queue.drain(..n));
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NicConfig {
    pub fd_capacity: usize,
    pub budget: BufferBudget,
    /// Rule-targetable queues (the default queue comes on top).
    pub n_queues: usize,
}

impl Default for NicConfig {
    fn default() -> Self {
        NicConfig {
            fd_capacity: MAX_FD_CAPACITY,
            budget: BufferBudget::default(),
            n_queues: 10,
        }
    }
}

impl NicConfig {
    pub fn validate(&self) -> Result<()> {
        if !(MIN_FD_CAPACITY..=MAX_FD_CAPACITY).contains(&self.fd_capacity) {
            return Err(Error::Config(format!(
                "fd_capacity {} outside {MIN_FD_CAPACITY}..={MAX_FD_CAPACITY}",
                self.fd_capacity
            )));
        }
        let active = self.n_queues + 1;
        let worst = self.budget.available_receive_slots(self.fd_capacity);
        if worst < active {
            return Err(Error::Config(format!(
                "receive buffer of {} slots leaves {worst} slots with a full rule table, \
                 fewer than the {active} queues",
                self.budget.total_slots
            )));
        }
        Ok(())
    }
}

/// Match table plus queues. Installing a rule shrinks the receive queues.
#[derive(Debug, Clone)]
pub struct Nic {
    table: HardwareMatchTable,
    queues: NicQueues,
    budget: BufferBudget,
}

impl Nic {
    pub fn new(cfg: &NicConfig) -> Result<Self> {
        cfg.validate()?;
        let mut queues = NicQueues::new(cfg.n_queues + 1, 0);
        queues.distribute(cfg.budget.available_receive_slots(0));
        Ok(Nic {
            table: HardwareMatchTable::new(cfg.fd_capacity, cfg.n_queues),
            queues,
            budget: cfg.budget,
        })
    }

    pub fn table(&self) -> &HardwareMatchTable {
        &self.table
    }

    pub fn queues(&self) -> &NicQueues {
        &self.queues
    }

    pub fn queues_mut(&mut self) -> &mut NicQueues {
        &mut self.queues
    }

    pub fn n_queues(&self) -> usize {
        self.queues.len()
    }

    pub fn available_receive_slots(&self) -> usize {
        self.budget.available_receive_slots(self.table.len())
    }

    pub fn fd_install_rule(&mut self, t: FiveTuple, q: QueueId) -> Result<InstallOutcome> {
        let before = self.table.len();
        let outcome = self.table.install(t, q)?;
        if self.table.len() != before {
            self.queues.distribute(self.available_receive_slots());
        }
        Ok(outcome)
    }

    pub fn classify(&self, p: &Packet) -> QueueId {
        self.table.classify(p)
    }

    /// Classify and enqueue an arriving packet.
    pub fn receive(&mut self, p: Packet) -> (QueueId, EnqueueOutcome) {
        let q = self.table.classify(&p);
        let outcome = self
            .queues
            .enqueue(q, p)
            .expect("classify only returns existing queues");
        (q, outcome)
    }

    pub fn poll_queue(&mut self, q: QueueId, max_burst: usize) -> Result<Vec<Packet>> {
        self.queues.poll(q, max_burst)
    }
}
