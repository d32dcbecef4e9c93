//! Synthetic flow traces and their CSV form.

use crate::error::Error;
use crate::flow::{Epoch, FlowKey};
use crate::sampling::SampleRate;
use crate::topology::{HostId, Topology};
use crate::Result;
use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::net::Ipv4Addr;
use std::path::Path;
use std::str::FromStr;

pub const TRACE_HEADER: &str =
    "src_ip,dst_ip,src_port,dst_port,protocol,packets,src_host,dst_host,start_epoch,duration_epochs,rate_num,rate_bits";

/// Flow size caps out here so one pathological draw cannot stall a run.
const MAX_FLOW_PACKETS: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SizeDist {
    /// Rank-frequency slope `-alpha` on a log-log plot.
    Zipf { alpha: f64 },
    Pareto { shape: f64, scale: f64 },
    Uniform { lo: u64, hi: u64 },
}

impl SizeDist {
    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        match *self {
            SizeDist::Zipf { alpha } if !(alpha > 0.0) => bad(format!("zipf alpha {alpha} must be > 0")),
            SizeDist::Pareto { shape, scale } if !(shape > 0.0 && scale > 0.0) => {
                bad(format!("pareto shape {shape} / scale {scale} must be > 0"))
            }
            SizeDist::Uniform { lo, hi } if lo < 1 || hi < lo => {
                bad(format!("uniform range {lo}..{hi} invalid"))
            }
            _ => Ok(()),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> u64 {
        let size = match *self {
            SizeDist::Zipf { alpha } => {
                // Inverse transform: floor(u^-alpha) has tail P(X >= x) = x^(-1/alpha),
                // so the r-th largest of n draws sits near (n/r)^alpha.
                let u: f64 = 1.0 - rng.gen::<f64>();
                u.powf(-alpha).floor() as u64
            }
            SizeDist::Pareto { shape, scale } => {
                let d = rand_distr::Pareto::new(scale, shape).expect("validated");
                d.sample(rng).floor() as u64
            }
            SizeDist::Uniform { lo, hi } => rng.gen_range(lo..=hi),
        };
        size.clamp(1, MAX_FLOW_PACKETS)
    }
}

impl fmt::Display for SizeDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SizeDist::Zipf { alpha } => write!(f, "zipf:{alpha}"),
            SizeDist::Pareto { shape, scale } => write!(f, "pareto:{shape},{scale}"),
            SizeDist::Uniform { lo, hi } => write!(f, "uniform:{lo},{hi}"),
        }
    }
}

impl FromStr for SizeDist {
    type Err = Error;

    /// `zipf:A`, `pareto:SHAPE,SCALE` or `uniform:LO,HI`.
    fn from_str(s: &str) -> Result<SizeDist> {
        let bad = || Error::InvalidParameter(format!("bad size distribution {s:?}"));
        let (kind, args) = s.split_once(':').ok_or_else(bad)?;
        let dist = match kind {
            "zipf" => SizeDist::Zipf { alpha: args.parse().map_err(|_| bad())? },
            "pareto" => {
                let (a, b) = args.split_once(',').ok_or_else(bad)?;
                SizeDist::Pareto {
                    shape: a.parse().map_err(|_| bad())?,
                    scale: b.parse().map_err(|_| bad())?,
                }
            }
            "uniform" => {
                let (a, b) = args.split_once(',').ok_or_else(bad)?;
                SizeDist::Uniform {
                    lo: a.parse().map_err(|_| bad())?,
                    hi: b.parse().map_err(|_| bad())?,
                }
            }
            _ => return Err(bad()),
        };
        dist.validate()?;
        Ok(dist)
    }
}

/// Synthesis parameters, also the `synth:` CLI spec.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSpec {
    pub flows: u64,
    pub epochs: Epoch,
    pub dist: SizeDist,
}

impl FromStr for TraceSpec {
    type Err = Error;

    /// `FLOWS,EPOCHS,DIST`, e.g. `50000,50,zipf:1.0`.
    fn from_str(s: &str) -> Result<TraceSpec> {
        let bad = || Error::InvalidParameter(format!("bad trace spec {s:?}, want FLOWS,EPOCHS,DIST"));
        let mut it = s.splitn(3, ',');
        let flows = it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let epochs = it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let dist: SizeDist = it.next().ok_or_else(bad)?.parse()?;
        Ok(TraceSpec { flows, epochs, dist })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowRecord {
    pub key: FlowKey,
    pub packets: u64,
    pub src_host: HostId,
    pub dst_host: HostId,
    pub start_epoch: Epoch,
    pub duration_epochs: u64,
    pub rate: Option<SampleRate>,
}

impl FlowRecord {
    /// A flow is live in `[start_epoch, start_epoch + duration_epochs)`.
    pub fn live_at(&self, epoch: Epoch) -> bool {
        epoch >= self.start_epoch && epoch < self.start_epoch + self.duration_epochs
    }

    pub fn end_epoch(&self) -> Epoch {
        self.start_epoch + self.duration_epochs
    }

    fn per_epoch(&self) -> u64 {
        self.packets.div_ceil(self.duration_epochs)
    }

    /// Packets the flow emits during `epoch`: `ceil(packets/duration)` per
    /// live epoch until the total is spent.
    pub fn packets_in_epoch(&self, epoch: Epoch) -> u64 {
        if !self.live_at(epoch) {
            return 0;
        }
        let sent = self.per_epoch() * (epoch - self.start_epoch);
        self.per_epoch().min(self.packets.saturating_sub(sent))
    }

    /// Ordinal of the first packet emitted during `epoch`.
    pub fn first_ordinal(&self, epoch: Epoch) -> u64 {
        (self.per_epoch() * epoch.saturating_sub(self.start_epoch)).min(self.packets)
    }
}

/// The address a synthesized host sends from: hosts live in 10.0.0.0/8.
pub fn host_ip(h: HostId) -> Ipv4Addr {
    Ipv4Addr::from(0x0a00_0000 | (h.0 + 1))
}

/// Generates `spec.flows` unique 5-tuples between random topology hosts.
/// Protocol is TCP/UDP at 9:1, ports uniform in [1024, 65535], start epochs
/// uniform over the horizon. Deterministic for a given seed.
pub fn synthesize(topo: &Topology, spec: &TraceSpec, seed: u64) -> Result<Vec<FlowRecord>> {
    spec.dist.validate()?;
    if spec.epochs == 0 {
        return Err(Error::InvalidParameter("trace needs epochs >= 1".into()));
    }
    let hosts: Vec<HostId> = topo.hosts().collect();
    if hosts.is_empty() {
        return Err(Error::InvalidParameter("topology has no hosts".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen: HashSet<FlowKey> = HashSet::with_capacity(spec.flows as usize);
    let mut out = Vec::with_capacity(spec.flows as usize);
    for _ in 0..spec.flows {
        let src_host = hosts[rng.gen_range(0..hosts.len())];
        let dst_host = hosts[rng.gen_range(0..hosts.len())];
        let key = loop {
            let key = FlowKey::new(
                host_ip(src_host),
                host_ip(dst_host),
                rng.gen_range(1024..=65535),
                rng.gen_range(1024..=65535),
                if rng.gen_range(0..10) == 0 { 17 } else { 6 },
            );
            if seen.insert(key) {
                break key;
            }
        };
        let start_epoch = rng.gen_range(0..spec.epochs);
        let duration_epochs = rng.gen_range(1..=spec.epochs - start_epoch);
        out.push(FlowRecord {
            key,
            packets: spec.dist.sample(&mut rng),
            src_host,
            dst_host,
            start_epoch,
            duration_epochs,
            rate: None,
        });
    }
    Ok(out)
}

/// Writes the trace in the CSV form [`load_csv`] reads. Byte-stable for a
/// given record list.
pub fn write_csv(records: &[FlowRecord], mut w: impl Write) -> Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for r in records {
        let (num, bits) = match r.rate {
            Some(rate) => (rate.numerator().to_string(), rate.precision_bits().to_string()),
            None => (String::new(), String::new()),
        };
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.key.src_ip,
            r.key.dst_ip,
            r.key.src_port,
            r.key.dst_port,
            r.key.protocol,
            r.packets,
            r.src_host.0,
            r.dst_host.0,
            r.start_epoch,
            r.duration_epochs,
            num,
            bits,
        )?;
    }
    Ok(())
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Vec<FlowRecord>> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let file = std::fs::File::open(path)
        .map_err(|e| Error::parse(&name, 0, format!("cannot open file: {e}")))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);

    let header = reader
        .headers()
        .map_err(|e| Error::parse(&name, 1, e.to_string()))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != TRACE_HEADER {
        return Err(Error::parse(&name, 1, format!("unexpected header {header:?}")));
    }

    let columns = TRACE_HEADER.split(',').collect::<Vec<_>>();
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::parse(&name, 0, e.to_string()))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != columns.len() {
            return Err(Error::parse(&name, line, format!("expected {} fields", columns.len())));
        }
        let field = |idx: usize| record.get(idx).unwrap().trim();
        fn parse<T: FromStr>(name: &str, line: u64, col: &str, raw: &str) -> Result<T> {
            raw.parse()
                .map_err(|_| Error::parse(name, line, format!("bad {col} value {raw:?}")))
        }
        let key = FlowKey::new(
            parse(&name, line, columns[0], field(0))?,
            parse(&name, line, columns[1], field(1))?,
            parse(&name, line, columns[2], field(2))?,
            parse(&name, line, columns[3], field(3))?,
            parse(&name, line, columns[4], field(4))?,
        );
        let packets: u64 = parse(&name, line, columns[5], field(5))?;
        if packets == 0 {
            return Err(Error::parse(&name, line, "flow needs packets >= 1"));
        }
        let duration: u64 = parse(&name, line, columns[9], field(9))?;
        if duration == 0 {
            return Err(Error::parse(&name, line, "flow needs duration_epochs >= 1"));
        }
        let rate = match (field(10), field(11)) {
            ("", "") => None,
            ("", _) | (_, "") => {
                return Err(Error::parse(&name, line, "rate_num and rate_bits must appear together"));
            }
            (n, b) => Some(
                SampleRate::new(
                    parse(&name, line, columns[10], n)?,
                    parse(&name, line, columns[11], b)?,
                )
                .map_err(|e| Error::parse(&name, line, e.to_string()))?,
            ),
        };
        if !seen.insert(key) {
            return Err(Error::parse(&name, line, format!("duplicate flow {key}")));
        }
        out.push(FlowRecord {
            key,
            packets,
            src_host: HostId(parse(&name, line, columns[6], field(6))?),
            dst_host: HostId(parse(&name, line, columns[7], field(7))?),
            start_epoch: parse(&name, line, columns[8], field(8))?,
            duration_epochs: duration,
            rate,
        });
    }
    Ok(out)
}
