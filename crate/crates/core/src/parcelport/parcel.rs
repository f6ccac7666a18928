//! Parcels and their frame layout.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "AMT1" (41 4D 54 31)
//!      4     2  version = 1
//!      6     2  flags: bit0 has-continuation, bit1 is-forwarded
//!      8    16  destination GID
//!     24    16  continuation GID (null when fire-and-forget)
//!     40     8  action id
//!     48     4  source locality
//!     52     8  sequence number
//!     60     4  payload length
//!     64     n  payload
//! ```
//!
//! All integers are big-endian.

use crate::agas::Gid;
use crate::error::DecodeError;

pub const MAGIC: [u8; 4] = *b"AMT1";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 64;
/// Upper bound on a single payload accepted off the wire.
pub const MAX_PAYLOAD: usize = 256 << 20;

pub const FLAG_HAS_CONTINUATION: u16 = 1 << 0;
pub const FLAG_FORWARDED: u16 = 1 << 1;
const KNOWN_FLAGS: u16 = FLAG_HAS_CONTINUATION | FLAG_FORWARDED;

/// A one-sided active message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Parcel {
    pub dest: Gid,
    pub action_id: u64,
    /// Where the result goes; [`Gid::NULL`] for fire-and-forget.
    pub continuation: Gid,
    pub source_locality: u32,
    pub seq_no: u64,
    pub forwarded: bool,
    /// Encoded arguments.
    pub payload: Vec<u8>,
}

impl Parcel {
    pub fn flags(&self) -> u16 {
        let mut flags = 0;
        if !self.continuation.is_null() {
            flags |= FLAG_HAS_CONTINUATION;
        }
        if self.forwarded {
            flags |= FLAG_FORWARDED;
        }
        flags
    }

    pub fn frame_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.frame_len());
        self.encode_into(&mut out);
        out
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_be_bytes());
        out.extend_from_slice(&self.flags().to_be_bytes());
        out.extend_from_slice(&self.dest.to_bytes());
        out.extend_from_slice(&self.continuation.to_bytes());
        out.extend_from_slice(&self.action_id.to_be_bytes());
        out.extend_from_slice(&self.source_locality.to_be_bytes());
        out.extend_from_slice(&self.seq_no.to_be_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.payload);
    }

    /// Decodes one complete frame. `bytes` must hold exactly the frame.
    pub fn decode(bytes: &[u8]) -> Result<Parcel, DecodeError> {
        let header: &[u8; HEADER_LEN] = bytes
            .get(..HEADER_LEN)
            .and_then(|h| h.try_into().ok())
            .ok_or_else(|| {
                DecodeError::new(
                    "header",
                    format!("truncated frame: {} of {HEADER_LEN} header bytes", bytes.len()),
                )
            })?;
        let payload_len = parse_header(header)?.payload_len;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != payload_len {
            return Err(DecodeError::new(
                "payload_len",
                format!(
                    "declared {payload_len} payload bytes, frame carries {}",
                    payload.len()
                ),
            ));
        }
        let mut parcel = parse_header(header)?.parcel;
        parcel.payload = payload.to_vec();
        Ok(parcel)
    }
}

pub(crate) struct Header {
    pub parcel: Parcel,
    pub payload_len: usize,
}

/// Validates and parses the fixed 64-byte header. The returned parcel has an
/// empty payload.
pub(crate) fn parse_header(h: &[u8; HEADER_LEN]) -> Result<Header, DecodeError> {
    if h[..4] != MAGIC {
        return Err(DecodeError::new(
            "magic",
            format!("bad magic {:02x?}", &h[..4]),
        ));
    }
    let version = u16::from_be_bytes([h[4], h[5]]);
    if version != VERSION {
        return Err(DecodeError::new(
            "version",
            format!("unsupported version {version}"),
        ));
    }
    let flags = u16::from_be_bytes([h[6], h[7]]);
    if flags & !KNOWN_FLAGS != 0 {
        return Err(DecodeError::new("flags", format!("unknown flag bits {flags:#06x}")));
    }
    let gid = |at: usize| Gid::from_bytes(h[at..at + 16].try_into().unwrap());
    let dest = gid(8);
    let continuation = gid(24);
    if (flags & FLAG_HAS_CONTINUATION != 0) == continuation.is_null() {
        return Err(DecodeError::new(
            "flags",
            "has-continuation bit disagrees with continuation GID",
        ));
    }
    let payload_len = u32::from_be_bytes(h[60..64].try_into().unwrap()) as usize;
    if payload_len > MAX_PAYLOAD {
        return Err(DecodeError::new(
            "payload_len",
            format!("payload of {payload_len} bytes exceeds limit"),
        ));
    }
    Ok(Header {
        parcel: Parcel {
            dest,
            action_id: u64::from_be_bytes(h[40..48].try_into().unwrap()),
            continuation,
            source_locality: u32::from_be_bytes(h[48..52].try_into().unwrap()),
            seq_no: u64::from_be_bytes(h[52..60].try_into().unwrap()),
            forwarded: flags & FLAG_FORWARDED != 0,
            payload: Vec::new(),
        },
        payload_len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn minimal() -> Parcel {
        Parcel {
            dest: Gid::new(0, 1, 1),
            action_id: 0x42,
            continuation: Gid::NULL,
            source_locality: 0,
            seq_no: 0,
            forwarded: false,
            payload: vec![],
        }
    }

    #[test]
    fn minimal_frame_is_64_bytes() {
        let bytes = minimal().encode();
        assert_eq!(bytes.len(), 64);
        assert_eq!(&bytes[..4], &[0x41, 0x4D, 0x54, 0x31]);
        assert_eq!(&bytes[4..8], &[0, 1, 0, 0]);
    }

    #[test]
    fn version_two_is_rejected() {
        let mut bytes = minimal().encode();
        bytes[5] = 2;
        let err = Parcel::decode(&bytes).unwrap_err();
        assert_eq!(err.field, "version");
        assert!(err.to_string().contains("unsupported version"));
    }

    #[test]
    fn bad_magic_and_truncation_name_the_field() {
        let mut bytes = minimal().encode();
        bytes[0] = b'X';
        assert_eq!(Parcel::decode(&bytes).unwrap_err().field, "magic");
        assert_eq!(Parcel::decode(&bytes[..10]).unwrap_err().field, "header");

        let mut p = minimal();
        p.payload = vec![1, 2, 3];
        let bytes = p.encode();
        assert_eq!(
            Parcel::decode(&bytes[..bytes.len() - 1]).unwrap_err().field,
            "payload_len"
        );
    }

    #[test]
    fn flags_must_agree_with_continuation() {
        let mut bytes = minimal().encode();
        bytes[7] |= FLAG_HAS_CONTINUATION as u8;
        assert_eq!(Parcel::decode(&bytes).unwrap_err().field, "flags");
        let mut bytes = minimal().encode();
        bytes[6] = 0x80;
        assert_eq!(Parcel::decode(&bytes).unwrap_err().field, "flags");
    }

    fn arb_gid() -> impl Strategy<Value = Gid> {
        (any::<u32>(), any::<u32>(), any::<u64>()).prop_map(|(h, g, s)| Gid::new(h, g, s))
    }

    proptest! {
        #[test]
        fn encode_decode_identity(
            dest in arb_gid(),
            cont in prop_oneof![Just(Gid::NULL), arb_gid()],
            action_id in any::<u64>(),
            source in any::<u32>(),
            seq in any::<u64>(),
            forwarded in any::<bool>(),
            payload in proptest::collection::vec(any::<u8>(), 0..128),
        ) {
            let p = Parcel { dest, action_id, continuation: cont, source_locality: source, seq_no: seq, forwarded, payload };
            let bytes = p.encode();
            prop_assert_eq!(bytes.len(), 64 + p.payload.len());
            prop_assert_eq!(Parcel::decode(&bytes).unwrap(), p);
        }
    }
}
