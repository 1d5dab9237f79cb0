//! Packets, addresses and the 5-tuple connection key.

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use crate::error::Error;

/// Smallest and largest Ethernet frame sizes the simulator accepts.
pub const MIN_PACKET_SIZE: u16 = 64;
pub const MAX_PACKET_SIZE: u16 = 1518;

/// Length of the canonical tuple encoding used for hashing and trace files.
pub const CANONICAL_TUPLE_LEN: usize = 13;

const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Protocol {
    Tcp,
    Udp,
}

impl Protocol {
    /// IANA protocol number, used as the first byte of the canonical encoding.
    pub fn number(self) -> u8 {
        match self {
            Protocol::Tcp => 6,
            Protocol::Udp => 17,
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Protocol::Tcp => f.write_str("TCP"),
            Protocol::Udp => f.write_str("UDP"),
        }
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "TCP" | "tcp" | "6" => Ok(Protocol::Tcp),
            "UDP" | "udp" | "17" => Ok(Protocol::Udp),
            other => Err(Error::Config(format!("unknown protocol `{other}`"))),
        }
    }
}

/// Connection identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FiveTuple {
    pub protocol: Protocol,
    pub src_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_ip: Ipv4Addr,
    pub dst_port: u16,
}

impl FiveTuple {
    pub fn new(
        protocol: Protocol,
        src_ip: Ipv4Addr,
        src_port: u16,
        dst_ip: Ipv4Addr,
        dst_port: u16,
    ) -> Self {
        FiveTuple {
            protocol,
            src_ip,
            src_port,
            dst_ip,
            dst_port,
        }
    }

    /// `[protocol | src_ip BE | src_port BE | dst_ip BE | dst_port BE]`
    pub fn canonical_bytes(&self) -> [u8; CANONICAL_TUPLE_LEN] {
        let mut out = [0u8; CANONICAL_TUPLE_LEN];
        out[0] = self.protocol.number();
        out[1..5].copy_from_slice(&self.src_ip.octets());
        out[5..7].copy_from_slice(&self.src_port.to_be_bytes());
        out[7..11].copy_from_slice(&self.dst_ip.octets());
        out[11..13].copy_from_slice(&self.dst_port.to_be_bytes());
        out
    }

    /// The VIP this tuple addresses.
    pub fn vip(&self) -> Vip {
        Vip {
            ip: self.dst_ip,
            port: self.dst_port,
            protocol: self.protocol,
        }
    }
}

impl fmt::Display for FiveTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}:{} -> {}:{}",
            self.protocol, self.src_ip, self.src_port, self.dst_ip, self.dst_port
        )
    }
}

/// FNV-1a (64 bit) over the canonical 13-byte encoding of `t`.
pub fn hash_five_tuple(t: &FiveTuple) -> u64 {
    t.canonical_bytes()
        .iter()
        .fold(FNV_OFFSET_BASIS, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Packet {
    pub tuple: FiveTuple,
    pub size_bytes: u16,
    /// Simulated arrival time at the NIC, in nanoseconds.
    pub arrival_ns: u64,
    pub seq: u64,
}

impl Packet {
    pub fn new(tuple: FiveTuple, size_bytes: u16, arrival_ns: u64, seq: u64) -> Result<Self, Error> {
        check_packet_size(size_bytes)?;
        Ok(Packet {
            tuple,
            size_bytes,
            arrival_ns,
            seq,
        })
    }
}

pub(crate) fn check_packet_size(size: u16) -> Result<(), Error> {
    if (MIN_PACKET_SIZE..=MAX_PACKET_SIZE).contains(&size) {
        Ok(())
    } else {
        Err(Error::InvalidSpec(format!(
            "packet size {size} outside {MIN_PACKET_SIZE}..={MAX_PACKET_SIZE}"
        )))
    }
}

/// Service-facing address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Vip {
    pub ip: Ipv4Addr,
    pub port: u16,
    pub protocol: Protocol,
}

impl fmt::Display for Vip {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}:{}", self.protocol, self.ip, self.port)
    }
}

/// Backend address. `index` is the position within its VIP's pool and also
/// determines the NIC queue that encodes it in offload mode (`index + 1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Dip {
    pub ip: Ipv4Addr,
    pub port: u16,
    pub index: u16,
}

impl fmt::Display for Dip {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{} {}:{}", self.index, self.ip, self.port)
    }
}

/// Rewrite the destination half of the tuple to `dip`. Everything else is kept.
pub fn rewrite_packet(p: &Packet, dip: &Dip) -> Packet {
    let mut out = *p;
    out.tuple.dst_ip = dip.ip;
    out.tuple.dst_port = dip.port;
    out
}
