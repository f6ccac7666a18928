//! Tag-length-value encoding for action arguments and results.
//!
//! Every value is `tag (u8) | body_len (u32 BE) | body`:
//!
//! | tag | type     | body                                   |
//! |-----|----------|----------------------------------------|
//! | 1   | int64    | 8 bytes, two's complement, big-endian  |
//! | 2   | float64  | 8 bytes, IEEE 754 bit pattern, BE      |
//! | 3   | bytes    | raw bytes                              |
//! | 4   | list     | count (u32 BE) followed by the encoded elements |
//! | 5   | unit     | empty                                  |
//!
//! The encoding is canonical: a decoder rejects any body length that does
//! not match its tag exactly, so each value has exactly one byte image.

use std::fmt;

use crate::agas::Gid;
use crate::error::DecodeError;

pub const TAG_INT: u8 = 1;
pub const TAG_FLOAT: u8 = 2;
pub const TAG_BYTES: u8 = 3;
pub const TAG_LIST: u8 = 4;
pub const TAG_UNIT: u8 = 5;

const HEADER: usize = 5;
const MAX_DEPTH: usize = 64;

#[derive(Clone, PartialEq)]
pub enum Value {
    Int(i64),
    Float(f64),
    Bytes(Vec<u8>),
    List(Vec<Value>),
    Unit,
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "Int({v})"),
            Value::Float(v) => write!(f, "Float({v:?})"),
            Value::Bytes(b) => match std::str::from_utf8(b) {
                Ok(s) => write!(f, "Bytes({s:?})"),
                Err(_) => write!(f, "Bytes({b:02x?})"),
            },
            Value::List(items) => f.debug_tuple("List").field(items).finish(),
            Value::Unit => f.write_str("Unit"),
        }
    }
}

/// Type tags used in action signatures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArgType {
    Int,
    Float,
    Bytes,
    List,
    Unit,
    /// Accepts any value; only meaningful in signatures.
    Any,
}

impl ArgType {
    pub fn accepts(self, v: &Value) -> bool {
        matches!(
            (self, v),
            (ArgType::Any, _)
                | (ArgType::Int, Value::Int(_))
                | (ArgType::Float, Value::Float(_))
                | (ArgType::Bytes, Value::Bytes(_))
                | (ArgType::List, Value::List(_))
                | (ArgType::Unit, Value::Unit)
        )
    }
}

impl Value {
    pub fn tag(&self) -> u8 {
        match self {
            Value::Int(_) => TAG_INT,
            Value::Float(_) => TAG_FLOAT,
            Value::Bytes(_) => TAG_BYTES,
            Value::List(_) => TAG_LIST,
            Value::Unit => TAG_UNIT,
        }
    }

    pub fn arg_type(&self) -> ArgType {
        match self {
            Value::Int(_) => ArgType::Int,
            Value::Float(_) => ArgType::Float,
            Value::Bytes(_) => ArgType::Bytes,
            Value::List(_) => ArgType::List,
            Value::Unit => ArgType::Unit,
        }
    }

    pub fn str(s: &str) -> Value {
        Value::Bytes(s.as_bytes().to_vec())
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_float(&self) -> Option<f64> {
        match self {
            Value::Float(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_bytes(&self) -> Option<&[u8]> {
        match self {
            Value::Bytes(b) => Some(b),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        self.as_bytes().and_then(|b| std::str::from_utf8(b).ok())
    }

    pub fn as_list(&self) -> Option<&[Value]> {
        match self {
            Value::List(items) => Some(items),
            _ => None,
        }
    }

    pub fn into_list(self) -> Option<Vec<Value>> {
        match self {
            Value::List(items) => Some(items),
            _ => None,
        }
    }

    pub fn as_gid(&self) -> Option<Gid> {
        self.as_bytes()
            .and_then(|b| <[u8; 16]>::try_from(b).ok())
            .map(Gid::from_bytes)
    }

    /// Size of the encoded form in bytes.
    pub fn encoded_len(&self) -> usize {
        HEADER + self.body_len()
    }

    fn body_len(&self) -> usize {
        match self {
            Value::Int(_) | Value::Float(_) => 8,
            Value::Bytes(b) => b.len(),
            Value::List(items) => 4 + items.iter().map(Value::encoded_len).sum::<usize>(),
            Value::Unit => 0,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut out);
        out
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.push(self.tag());
        out.extend_from_slice(&(self.body_len() as u32).to_be_bytes());
        match self {
            Value::Int(v) => out.extend_from_slice(&v.to_be_bytes()),
            Value::Float(v) => out.extend_from_slice(&v.to_bits().to_be_bytes()),
            Value::Bytes(b) => out.extend_from_slice(b),
            Value::List(items) => {
                out.extend_from_slice(&(items.len() as u32).to_be_bytes());
                for item in items {
                    item.encode_into(out);
                }
            }
            Value::Unit => {}
        }
    }

    /// Decodes exactly one value occupying all of `bytes`.
    pub fn decode(bytes: &[u8]) -> Result<Value, DecodeError> {
        let (v, used) = decode_at(bytes, 0)?;
        if used != bytes.len() {
            return Err(DecodeError::new(
                "value",
                format!("{} trailing bytes", bytes.len() - used),
            ));
        }
        Ok(v)
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Float(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::str(v)
    }
}

impl From<Vec<Value>> for Value {
    fn from(v: Vec<Value>) -> Self {
        Value::List(v)
    }
}

impl From<()> for Value {
    fn from(_: ()) -> Self {
        Value::Unit
    }
}

impl From<Gid> for Value {
    fn from(g: Gid) -> Self {
        Value::Bytes(g.to_bytes().to_vec())
    }
}

fn decode_at(bytes: &[u8], depth: usize) -> Result<(Value, usize), DecodeError> {
    if depth > MAX_DEPTH {
        return Err(DecodeError::new("value", "nesting too deep"));
    }
    if bytes.len() < HEADER {
        return Err(DecodeError::new("value.header", "truncated"));
    }
    let tag = bytes[0];
    let len = u32::from_be_bytes(bytes[1..5].try_into().unwrap()) as usize;
    let body = bytes
        .get(HEADER..HEADER + len)
        .ok_or_else(|| DecodeError::new("value.body", "truncated"))?;
    let fixed8 = |name: &'static str| -> Result<[u8; 8], DecodeError> {
        <[u8; 8]>::try_from(body)
            .map_err(|_| DecodeError::new(name, format!("expected 8 bytes, found {len}")))
    };
    let v = match tag {
        TAG_INT => Value::Int(i64::from_be_bytes(fixed8("value.int")?)),
        TAG_FLOAT => Value::Float(f64::from_bits(u64::from_be_bytes(fixed8("value.float")?))),
        TAG_BYTES => Value::Bytes(body.to_vec()),
        TAG_LIST => {
            if body.len() < 4 {
                return Err(DecodeError::new("value.list", "missing element count"));
            }
            let count = u32::from_be_bytes(body[..4].try_into().unwrap()) as usize;
            // every element needs at least a header
            if count > (body.len() - 4) / HEADER {
                return Err(DecodeError::new("value.list", "element count exceeds body"));
            }
            let mut items = Vec::with_capacity(count);
            let mut pos = 4;
            for _ in 0..count {
                let (item, used) = decode_at(&body[pos..], depth + 1)?;
                items.push(item);
                pos += used;
            }
            if pos != body.len() {
                return Err(DecodeError::new("value.list", "length does not match elements"));
            }
            Value::List(items)
        }
        TAG_UNIT => {
            if len != 0 {
                return Err(DecodeError::new("value.unit", "non-empty body"));
            }
            Value::Unit
        }
        other => return Err(DecodeError::new("value.tag", format!("unknown tag {other}"))),
    };
    Ok((v, HEADER + len))
}
