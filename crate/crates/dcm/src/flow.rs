//! Flow and packet identities.

use std::fmt;
use std::net::Ipv4Addr;

/// Epoch counter; one epoch is one reporting interval.
pub type Epoch = u64;

/// Identifier of a monitoring action, unique within a deployment and stable
/// across filter reconstructions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
pub struct ActionId(pub u32);

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "A{}", self.0)
    }
}

/// An IPv4 5-tuple. This is the unit of monitoring: filters, sketches and
/// sampling all key off the fixed 13-byte encoding from [`FlowKey::wire_bytes`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowKey {
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: u8,
}

/// Wire length of an encoded [`FlowKey`].
pub const FLOW_KEY_BYTES: usize = 13;

impl FlowKey {
    pub fn new(src_ip: Ipv4Addr, dst_ip: Ipv4Addr, src_port: u16, dst_port: u16, protocol: u8) -> FlowKey {
        FlowKey { src_ip, dst_ip, src_port, dst_port, protocol }
    }

    /// Big-endian encoding: 4B src IP, 4B dst IP, 2B src port, 2B dst port,
    /// 1B protocol. All hashing goes through this exact layout.
    pub fn wire_bytes(&self) -> [u8; FLOW_KEY_BYTES] {
        let mut b = [0u8; FLOW_KEY_BYTES];
        b[0..4].copy_from_slice(&self.src_ip.octets());
        b[4..8].copy_from_slice(&self.dst_ip.octets());
        b[8..10].copy_from_slice(&self.src_port.to_be_bytes());
        b[10..12].copy_from_slice(&self.dst_port.to_be_bytes());
        b[12] = self.protocol;
        b
    }

    pub fn from_wire_bytes(b: &[u8; FLOW_KEY_BYTES]) -> FlowKey {
        FlowKey {
            src_ip: Ipv4Addr::new(b[0], b[1], b[2], b[3]),
            dst_ip: Ipv4Addr::new(b[4], b[5], b[6], b[7]),
            src_port: u16::from_be_bytes([b[8], b[9]]),
            dst_port: u16::from_be_bytes([b[10], b[11]]),
            protocol: b[12],
        }
    }
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}->{}:{}/{}",
            self.src_ip, self.src_port, self.dst_ip, self.dst_port, self.protocol
        )
    }
}

impl serde::Serialize for FlowKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// One packet of a flow: the flow key plus a per-flow ordinal that stands in
/// for the varying header bits a real hash would consume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PacketId {
    pub flow: FlowKey,
    pub ordinal: u32,
}

impl PacketId {
    pub fn new(flow: FlowKey, ordinal: u32) -> PacketId {
        PacketId { flow, ordinal }
    }

    /// Flow key bytes followed by the big-endian ordinal.
    pub fn wire_bytes(&self) -> [u8; FLOW_KEY_BYTES + 4] {
        let mut b = [0u8; FLOW_KEY_BYTES + 4];
        b[..FLOW_KEY_BYTES].copy_from_slice(&self.flow.wire_bytes());
        b[FLOW_KEY_BYTES..].copy_from_slice(&self.ordinal.to_be_bytes());
        b
    }
}
