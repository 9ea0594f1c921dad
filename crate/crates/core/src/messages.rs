//! Wire formats for coordinator/worker traffic.
//!
//! The simulated runtime moves every gradient and broadcast through these
//! encodings so the same driver can later run over a real transport. All
//! integers and floats are little-endian.

use crate::error::{DpqrError, Result};

/// Worker -> coordinator: one local gradient.
///
/// Layout: `machine_id u32 | outer_t u32 | inner_k u32 | len u32 | f64 * len`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMessage {
    pub machine_id: u32,
    pub outer_t: u32,
    pub inner_k: u32,
    pub gradient: Vec<f64>,
}

impl GradientMessage {
    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(16 + 8 * self.gradient.len());
        buf.extend_from_slice(&self.machine_id.to_le_bytes());
        buf.extend_from_slice(&self.outer_t.to_le_bytes());
        buf.extend_from_slice(&self.inner_k.to_le_bytes());
        buf.extend_from_slice(&(self.gradient.len() as u32).to_le_bytes());
        for v in &self.gradient {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        let (head, body) = split_header(buf, 16)?;
        let machine_id = read_u32(head, 0);
        let outer_t = read_u32(head, 4);
        let inner_k = read_u32(head, 8);
        let len = read_u32(head, 12) as usize;
        let gradient = read_f64s(body, len, "gradient message")?;
        Ok(Self { machine_id, outer_t, inner_k, gradient })
    }
}

/// Coordinator -> workers: the privatized sparse iterate.
///
/// Layout: `outer_t u32 | inner_k u32 | count u32 | u32 * count | f64 * count`.
#[derive(Debug, Clone, PartialEq)]
pub struct BroadcastMessage {
    pub outer_t: u32,
    pub inner_k: u32,
    pub support: Vec<u32>,
    pub values: Vec<f64>,
}

impl BroadcastMessage {
    pub fn encode(&self) -> Vec<u8> {
        assert_eq!(self.support.len(), self.values.len());
        let mut buf = Vec::with_capacity(12 + 12 * self.support.len());
        buf.extend_from_slice(&self.outer_t.to_le_bytes());
        buf.extend_from_slice(&self.inner_k.to_le_bytes());
        buf.extend_from_slice(&(self.support.len() as u32).to_le_bytes());
        for s in &self.support {
            buf.extend_from_slice(&s.to_le_bytes());
        }
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        let (head, body) = split_header(buf, 12)?;
        let outer_t = read_u32(head, 0);
        let inner_k = read_u32(head, 4);
        let count = read_u32(head, 8) as usize;
        if body.len() != count * 12 {
            return Err(DpqrError::MalformedFile("broadcast message length mismatch".into()));
        }
        let mut support = Vec::with_capacity(count);
        for i in 0..count {
            support.push(read_u32(body, 4 * i));
        }
        let values = read_f64s(&body[4 * count..], count, "broadcast message")?;
        Ok(Self { outer_t, inner_k, support, values })
    }

    /// Expands into a dense vector of the given dimension.
    pub fn to_dense(&self, dim: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; dim];
        for (&j, &v) in self.support.iter().zip(&self.values) {
            if j as usize >= dim {
                return Err(DpqrError::MalformedFile(format!(
                    "broadcast support index {j} out of range {dim}"
                )));
            }
            out[j as usize] = v;
        }
        Ok(out)
    }
}

fn split_header(buf: &[u8], header: usize) -> Result<(&[u8], &[u8])> {
    if buf.len() < header {
        return Err(DpqrError::MalformedFile("message shorter than header".into()));
    }
    Ok(buf.split_at(header))
}

fn read_u32(buf: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(buf[at..at + 4].try_into().unwrap())
}

fn read_f64s(buf: &[u8], len: usize, what: &str) -> Result<Vec<f64>> {
    if buf.len() < 8 * len {
        return Err(DpqrError::MalformedFile(format!("{what} payload truncated")));
    }
    Ok((0..len)
        .map(|i| f64::from_le_bytes(buf[8 * i..8 * i + 8].try_into().unwrap()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn gradient_roundtrip(
            machine_id in 0u32..64,
            outer_t in 0u32..100,
            inner_k in 0u32..100,
            gradient in proptest::collection::vec(-1e6f64..1e6, 0..64),
        ) {
            let msg = GradientMessage { machine_id, outer_t, inner_k, gradient };
            prop_assert_eq!(GradientMessage::decode(&msg.encode()).unwrap(), msg);
        }

        #[test]
        fn broadcast_roundtrip(
            outer_t in 0u32..100,
            inner_k in 0u32..100,
            pairs in proptest::collection::vec((0u32..512, -1e3f64..1e3), 0..32),
        ) {
            let (support, values): (Vec<u32>, Vec<f64>) = pairs.into_iter().unzip();
            let msg = BroadcastMessage { outer_t, inner_k, support, values };
            prop_assert_eq!(BroadcastMessage::decode(&msg.encode()).unwrap(), msg);
        }
    }

    #[test]
    fn truncated_messages_rejected() {
        let msg = GradientMessage { machine_id: 1, outer_t: 2, inner_k: 3, gradient: vec![1.0] };
        let bytes = msg.encode();
        assert!(GradientMessage::decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(GradientMessage::decode(&bytes[..8]).is_err());
    }
}
