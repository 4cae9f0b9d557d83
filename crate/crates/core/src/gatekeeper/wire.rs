//! Byte layout of the handshake. All integers are big-endian.
//!
//! ```text
//! Message1  si_h:8
//! Message2  si_h:8 si_p:8 k:1
//! Message3  si_h:8 si_p:8 k:1 x:8 len:4 request:len
//! Verdict   status:1 len:4 body:len
//! ```

use super::GatekeeperError;

/// Longest request or verdict body accepted on the wire.
pub const MAX_BODY: usize = 1 << 20;

pub const MESSAGE1_LEN: usize = 8;
pub const MESSAGE2_LEN: usize = 17;
pub const MESSAGE3_HEADER_LEN: usize = 29;
pub const VERDICT_HEADER_LEN: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Message1 {
    pub si_h: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Message2 {
    pub si_h: u64,
    pub si_p: u64,
    pub k: u8,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Message3 {
    pub si_h: u64,
    pub si_p: u64,
    pub k: u8,
    pub x: u64,
    pub request: Vec<u8>,
}

/// Why a Message3 was turned away.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RejectReason {
    /// The identifier pair was already used.
    Replay,
    /// `si_p` does not match `(ip, si_h, k)` under a live secret.
    ForgedIdentifier,
    /// The solution does not have `k` leading zero bits.
    BadSolution,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    /// Admitted; the body is the proxied response.
    Admit(Vec<u8>),
    Reject(RejectReason),
}

fn be64(b: &[u8]) -> u64 {
    u64::from_be_bytes(b[..8].try_into().expect("8 bytes"))
}

fn be32(b: &[u8]) -> u32 {
    u32::from_be_bytes(b[..4].try_into().expect("4 bytes"))
}

fn need(buf: &[u8], len: usize) -> Result<(), GatekeeperError> {
    if buf.len() < len {
        Err(GatekeeperError::Truncated {
            needed: len,
            got: buf.len(),
        })
    } else {
        Ok(())
    }
}

fn exact(buf: &[u8], len: usize) -> Result<(), GatekeeperError> {
    need(buf, len)?;
    if buf.len() > len {
        return Err(GatekeeperError::TrailingBytes(buf.len() - len));
    }
    Ok(())
}

fn body_len(raw: u32) -> Result<usize, GatekeeperError> {
    let len = raw as usize;
    if len > MAX_BODY {
        return Err(GatekeeperError::BodyTooLong(len));
    }
    Ok(len)
}

impl Message1 {
    pub fn encode(&self) -> [u8; MESSAGE1_LEN] {
        self.si_h.to_be_bytes()
    }

    pub fn decode(buf: &[u8]) -> Result<Self, GatekeeperError> {
        exact(buf, MESSAGE1_LEN)?;
        Ok(Self { si_h: be64(buf) })
    }
}

impl Message2 {
    pub fn encode(&self) -> [u8; MESSAGE2_LEN] {
        let mut out = [0u8; MESSAGE2_LEN];
        out[..8].copy_from_slice(&self.si_h.to_be_bytes());
        out[8..16].copy_from_slice(&self.si_p.to_be_bytes());
        out[16] = self.k;
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self, GatekeeperError> {
        exact(buf, MESSAGE2_LEN)?;
        Ok(Self {
            si_h: be64(buf),
            si_p: be64(&buf[8..]),
            k: buf[16],
        })
    }
}

impl Message3 {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(MESSAGE3_HEADER_LEN + self.request.len());
        out.extend_from_slice(&self.si_h.to_be_bytes());
        out.extend_from_slice(&self.si_p.to_be_bytes());
        out.push(self.k);
        out.extend_from_slice(&self.x.to_be_bytes());
        out.extend_from_slice(&(self.request.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.request);
        out
    }

    /// Length of the request announced by a Message3 header.
    pub fn request_len(header: &[u8]) -> Result<usize, GatekeeperError> {
        need(header, MESSAGE3_HEADER_LEN)?;
        body_len(be32(&header[25..]))
    }

    pub fn decode(buf: &[u8]) -> Result<Self, GatekeeperError> {
        let len = Self::request_len(buf)?;
        exact(buf, MESSAGE3_HEADER_LEN + len)?;
        Ok(Self {
            si_h: be64(buf),
            si_p: be64(&buf[8..]),
            k: buf[16],
            x: be64(&buf[17..]),
            request: buf[MESSAGE3_HEADER_LEN..].to_vec(),
        })
    }
}

impl RejectReason {
    fn code(self) -> u8 {
        match self {
            RejectReason::Replay => 1,
            RejectReason::ForgedIdentifier => 2,
            RejectReason::BadSolution => 3,
        }
    }
}

impl Verdict {
    pub fn encode(&self) -> Vec<u8> {
        let (status, body): (u8, &[u8]) = match self {
            Verdict::Admit(body) => (0, body),
            Verdict::Reject(r) => (r.code(), &[]),
        };
        let mut out = Vec::with_capacity(VERDICT_HEADER_LEN + body.len());
        out.push(status);
        out.extend_from_slice(&(body.len() as u32).to_be_bytes());
        out.extend_from_slice(body);
        out
    }

    pub fn body_len(header: &[u8]) -> Result<usize, GatekeeperError> {
        need(header, VERDICT_HEADER_LEN)?;
        body_len(be32(&header[1..]))
    }

    pub fn decode(buf: &[u8]) -> Result<Self, GatekeeperError> {
        let len = Self::body_len(buf)?;
        exact(buf, VERDICT_HEADER_LEN + len)?;
        let body = &buf[VERDICT_HEADER_LEN..];
        let reject = |r| {
            if body.is_empty() {
                Ok(Verdict::Reject(r))
            } else {
                Err(GatekeeperError::TrailingBytes(body.len()))
            }
        };
        match buf[0] {
            0 => Ok(Verdict::Admit(body.to_vec())),
            1 => reject(RejectReason::Replay),
            2 => reject(RejectReason::ForgedIdentifier),
            3 => reject(RejectReason::BadSolution),
            s => Err(GatekeeperError::UnknownStatus(s)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fixed_layouts() {
        assert_eq!(Message1 { si_h: 0x0102030405060708 }.encode(), [1, 2, 3, 4, 5, 6, 7, 8]);
        let m2 = Message2 {
            si_h: 1,
            si_p: 0xff00000000000002,
            k: 12,
        };
        assert_eq!(m2.encode(), [0, 0, 0, 0, 0, 0, 0, 1, 0xff, 0, 0, 0, 0, 0, 0, 2, 12]);
        let m3 = Message3 {
            si_h: 1,
            si_p: 2,
            k: 3,
            x: 4,
            request: b"hi".to_vec(),
        };
        let b = m3.encode();
        assert_eq!(b.len(), 31);
        assert_eq!(&b[16..], &[3, 0, 0, 0, 0, 0, 0, 0, 4, 0, 0, 0, 2, b'h', b'i']);
        assert_eq!(Verdict::Reject(RejectReason::Replay).encode(), vec![1, 0, 0, 0, 0]);
    }

    #[test]
    fn malformed_input() {
        assert!(matches!(Message1::decode(&[0; 7]), Err(GatekeeperError::Truncated { needed: 8, got: 7 })));
        assert!(matches!(Message2::decode(&[0; 18]), Err(GatekeeperError::TrailingBytes(1))));
        let mut m3 = Message3 {
            si_h: 0,
            si_p: 0,
            k: 0,
            x: 0,
            request: vec![9; 3],
        }
        .encode();
        m3.pop();
        assert!(matches!(Message3::decode(&m3), Err(GatekeeperError::Truncated { .. })));
        let mut huge = vec![0u8; MESSAGE3_HEADER_LEN];
        huge[25..29].copy_from_slice(&u32::MAX.to_be_bytes());
        assert!(matches!(Message3::decode(&huge), Err(GatekeeperError::BodyTooLong(_))));
        assert!(matches!(Verdict::decode(&[9, 0, 0, 0, 0]), Err(GatekeeperError::UnknownStatus(9))));
    }

    proptest! {
        #[test]
        fn round_trips(si_h in any::<u64>(), si_p in any::<u64>(), k in any::<u8>(), x in any::<u64>(),
                       req in proptest::collection::vec(any::<u8>(), 0..64)) {
            prop_assert_eq!(Message1::decode(&Message1 { si_h }.encode()).unwrap(), Message1 { si_h });
            let m2 = Message2 { si_h, si_p, k };
            prop_assert_eq!(Message2::decode(&m2.encode()).unwrap(), m2);
            let m3 = Message3 { si_h, si_p, k, x, request: req.clone() };
            prop_assert_eq!(Message3::decode(&m3.encode()).unwrap(), m3);
            for v in [Verdict::Admit(req), Verdict::Reject(RejectReason::BadSolution)] {
                prop_assert_eq!(Verdict::decode(&v.encode()).unwrap(), v);
            }
        }
    }
}
