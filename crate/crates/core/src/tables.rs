//! Software load-balancer state: the VIP table and the connection table.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::types::{Dip, FiveTuple, Vip};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SelectionPolicy {
    #[default]
    RoundRobin,
}

#[derive(Debug, Clone)]
struct Pool {
    dips: Vec<Dip>,
    cursor: usize,
}

/// VIP → DIP pool, with a round-robin cursor per VIP.
#[derive(Debug, Clone, Default)]
pub struct VipTable {
    pools: HashMap<Vip, Pool>,
    policy: SelectionPolicy,
}

impl VipTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register `vip` with a non-empty pool. Indices must be unique within the pool.
    pub fn insert(&mut self, vip: Vip, dips: Vec<Dip>) -> Result<()> {
        if dips.is_empty() {
            return Err(Error::Config(format!("VIP {vip} has an empty DIP pool")));
        }
        let mut seen = std::collections::HashSet::new();
        for d in &dips {
            if !seen.insert(d.index) {
                return Err(Error::Config(format!(
                    "duplicate DIP index {} in pool of {vip}",
                    d.index
                )));
            }
        }
        if self.pools.contains_key(&vip) {
            return Err(Error::Config(format!("VIP {vip} registered twice")));
        }
        self.pools.insert(vip, Pool { dips, cursor: 0 });
        Ok(())
    }

    pub fn policy(&self) -> SelectionPolicy {
        self.policy
    }

    pub fn pool(&self, vip: &Vip) -> Option<&[Dip]> {
        self.pools.get(vip).map(|p| p.dips.as_slice())
    }

    pub fn vips(&self) -> impl Iterator<Item = &Vip> {
        self.pools.keys()
    }

    pub fn dips(&self) -> impl Iterator<Item = &Dip> {
        self.pools.values().flat_map(|p| p.dips.iter())
    }

    /// Return the DIP under the cursor and advance it.
    pub fn select_dip(&mut self, vip: &Vip) -> Result<Dip> {
        let pool = self.pools.get_mut(vip).ok_or(Error::UnknownVip(*vip))?;
        match self.policy {
            SelectionPolicy::RoundRobin => {
                let dip = pool.dips[pool.cursor];
                pool.cursor = (pool.cursor + 1) % pool.dips.len();
                Ok(dip)
            }
        }
    }
}

/// Append-only map of active connections to their DIP.
#[derive(Debug, Clone, Default)]
pub struct ConnectionTable {
    entries: HashMap<FiveTuple, Dip>,
}

impl ConnectionTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        ConnectionTable {
            entries: HashMap::with_capacity(n),
        }
    }

    pub fn lookup(&self, t: &FiveTuple) -> Option<Dip> {
        self.entries.get(t).copied()
    }

    /// Installing the same mapping twice is a no-op; remapping a key is an error.
    pub fn install(&mut self, t: FiveTuple, d: Dip) -> Result<()> {
        match self.entries.get(&t) {
            Some(existing) if *existing == d => Ok(()),
            Some(existing) => Err(Error::ConsistencyViolation {
                tuple: t,
                detail: format!("already mapped to {existing}, refusing {d}"),
            }),
            None => {
                self.entries.insert(t, d);
                Ok(())
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
