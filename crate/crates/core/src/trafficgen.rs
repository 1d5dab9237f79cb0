//! Deterministic synthetic workloads and trace files.
//!
//! Packets are spaced uniformly at `1 / offered_rate`; each packet picks one
//! of `nb_conn` connections, by a seeded uniform draw or round-robin.
//! Connection `k` is `TCP 10.1.(k >> 8).(k & 0xff):(1024 + k) -> vip`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::Ipv4Addr;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::{check_packet_size, FiveTuple, Packet, Protocol, Vip};

/// Connections addressable by the synthetic source-port scheme.
pub const MAX_CONNECTIONS: usize = (u16::MAX as usize) - 1024 + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConnectionScheduler {
    #[default]
    Uniform,
    RoundRobin,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkloadSpec {
    pub nb_conn: usize,
    pub pkt_size: u16,
    /// Packets per second.
    pub offered_rate: f64,
    /// Seconds.
    pub duration: f64,
    pub seed: u64,
    pub vip: Vip,
    pub scheduler: ConnectionScheduler,
    /// Simulated time of the first packet.
    pub start_ns: u64,
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.offered_rate.is_finite() && self.offered_rate > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "offered rate must be positive, got {}",
                self.offered_rate
            )));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "duration must be positive, got {}",
                self.duration
            )));
        }
        if self.nb_conn == 0 || self.nb_conn > MAX_CONNECTIONS {
            return Err(Error::InvalidSpec(format!(
                "nb_conn must be in 1..={MAX_CONNECTIONS}, got {}",
                self.nb_conn
            )));
        }
        check_packet_size(self.pkt_size)
    }

    /// `floor(offered_rate * duration)`, tolerant of binary rounding.
    pub fn packet_count(&self) -> u64 {
        let exact = self.offered_rate * self.duration;
        (exact * (1.0 + 1e-12)).floor() as u64
    }
}

pub fn connection_tuple(k: usize, vip: &Vip) -> FiveTuple {
    FiveTuple::new(
        vip.protocol,
        Ipv4Addr::new(10, 1, (k >> 8) as u8, k as u8),
        1024 + k as u16,
        vip.ip,
        vip.port,
    )
}

pub fn connection_tuples(nb_conn: usize, vip: &Vip) -> Vec<FiveTuple> {
    (0..nb_conn).map(|k| connection_tuple(k, vip)).collect()
}

pub fn generate(spec: &WorkloadSpec) -> Result<Vec<Packet>> {
    spec.validate()?;
    let tuples = connection_tuples(spec.nb_conn, &spec.vip);
    let n = spec.packet_count();
    let spacing_ns = 1e9 / spec.offered_rate;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(n as usize);
    for i in 0..n {
        let k = match spec.scheduler {
            ConnectionScheduler::Uniform => rng.gen_range(0..spec.nb_conn),
            ConnectionScheduler::RoundRobin => (i % spec.nb_conn as u64) as usize,
        };
        out.push(Packet {
            tuple: tuples[k],
            size_bytes: spec.pkt_size,
            arrival_ns: spec.start_ns + (i as f64 * spacing_ns).round() as u64,
            seq: i,
        });
    }
    Ok(out)
}

/// One packet per connection, in connection order, at `rate` packets/s.
/// Used to establish every connection before a measured run.
pub fn warmup(nb_conn: usize, vip: &Vip, pkt_size: u16, rate: f64) -> Result<Vec<Packet>> {
    if !(rate.is_finite() && rate > 0.0) {
        return Err(Error::InvalidSpec(format!("warm-up rate must be positive, got {rate}")));
    }
    check_packet_size(pkt_size)?;
    let spacing_ns = 1e9 / rate;
    Ok(connection_tuples(nb_conn, vip)
        .into_iter()
        .enumerate()
        .map(|(k, tuple)| Packet {
            tuple,
            size_bytes: pkt_size,
            arrival_ns: (k as f64 * spacing_ns).round() as u64,
            seq: k as u64,
        })
        .collect())
}

pub const TRACE_HEADER: &str = "# arrival_ns,proto,src_ip,src_port,dst_ip,dst_port,size";

pub fn write_trace<W: Write>(mut w: W, packets: &[Packet]) -> Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for p in packets {
        let t = &p.tuple;
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            p.arrival_ns, t.protocol, t.src_ip, t.src_port, t.dst_ip, t.dst_port, p.size_bytes
        )?;
    }
    Ok(())
}

pub fn save_trace(path: &Path, packets: &[Packet]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_trace(&mut w, packets)?;
    w.flush()?;
    Ok(())
}

fn field<T: std::str::FromStr>(line: usize, name: &str, raw: &str) -> Result<T> {
    raw.trim().parse().map_err(|_| Error::Parse {
        line,
        msg: format!("invalid {name} `{}`", raw.trim()),
    })
}

/// Parse a trace. Sequence numbers follow record order.
pub fn read_trace<R: BufRead>(r: R) -> Result<Vec<Packet>> {
    let mut out = Vec::new();
    let mut prev: Option<u64> = None;
    for (i, line) in r.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let body = line.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = body.split(',').collect();
        if cols.len() != 7 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 7 fields, found {}", cols.len()),
            });
        }
        let arrival_ns: u64 = field(line_no, "arrival_ns", cols[0])?;
        let protocol: Protocol = cols[1].parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("invalid protocol `{}`", cols[1].trim()),
        })?;
        let src_ip: Ipv4Addr = field(line_no, "src_ip", cols[2])?;
        let src_port: u16 = field(line_no, "src_port", cols[3])?;
        let dst_ip: Ipv4Addr = field(line_no, "dst_ip", cols[4])?;
        let dst_port: u16 = field(line_no, "dst_port", cols[5])?;
        let size: u16 = field(line_no, "size", cols[6])?;
        check_packet_size(size).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        if let Some(previous_ns) = prev.filter(|&p| arrival_ns < p) {
            return Err(Error::TraceOrder {
                line: line_no,
                arrival_ns,
                previous_ns,
            });
        }
        prev = Some(arrival_ns);
        out.push(Packet {
            tuple: FiveTuple::new(protocol, src_ip, src_port, dst_ip, dst_port),
            size_bytes: size,
            arrival_ns,
            seq: out.len() as u64,
        });
    }
    Ok(out)
}

pub fn load_trace(path: &Path) -> Result<Vec<Packet>> {
    read_trace(BufReader::new(File::open(path)?))
}
