//! Radio message formats. Every frame fits in [`MAX_FRAME`] bytes; all
//! integers are little-endian.
//!
//! | type        | layout                                                         | size |
//! |-------------|----------------------------------------------------------------|------|
//! | SWARM       | type, robot(2), bits(1)                                        | 4    |
//! | BCAST       | type, robot(2), topic(2), tag(1), payload(2)                   | 8    |
//! | STIG_PUT    | type, key(2), tag(1), payload(2), timestamp(2), origin(2)      | 10   |
//! | STIG_QUERY  | same as STIG_PUT, carrying the sender's local entry            | 10   |
//!
//! Stigmergy frames carry no sender id: relaying robots forward entries they
//! did not originate, and the sender is known from the physical layer.

use thiserror::Error;

use crate::value::{StrId, Tag, Value};

pub const MAX_FRAME: usize = 11;

pub const TYPE_SWARM: u8 = 1;
pub const TYPE_BCAST: u8 = 2;
pub const TYPE_STIG_PUT: u8 = 3;
pub const TYPE_STIG_QUERY: u8 = 4;

pub type RobotId = u16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Message {
    Swarm {
        robot: RobotId,
        bits: u8,
    },
    Bcast {
        robot: RobotId,
        topic: StrId,
        value: Value,
    },
    StigPut(StigWire),
    StigQuery(StigWire),
}

/// Stigmergy entry as it travels on the wire.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StigWire {
    pub key: StrId,
    pub value: Value,
    pub timestamp: u16,
    pub origin: RobotId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("empty frame")]
    Empty,
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("frame length {got} for type {ty}, expected {want}")]
    BadLength { ty: u8, got: usize, want: usize },
    #[error("value tag {0} cannot travel on the wire")]
    BadTag(u8),
}

/// An encoded frame stored inline, so queues of frames are fixed-size.
#[derive(Clone, Copy, PartialEq, Eq, Default)]
pub struct Frame {
    len: u8,
    bytes: [u8; MAX_FRAME],
}

impl Frame {
    pub fn from_slice(b: &[u8]) -> Option<Frame> {
        if b.len() > MAX_FRAME {
            return None;
        }
        let mut bytes = [0; MAX_FRAME];
        bytes[..b.len()].copy_from_slice(b);
        Some(Frame {
            len: b.len() as u8,
            bytes,
        })
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes[..self.len as usize]
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

impl std::fmt::Debug for Frame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Frame(")?;
        for b in self.as_bytes() {
            write!(f, "{b:02x}")?;
        }
        write!(f, ")")
    }
}

/// Values that may be sent: anything but a table reference.
pub fn is_sendable(v: Value) -> bool {
    !matches!(v, Value::Table(_))
}

fn put_value(out: &mut Vec<u8>, v: Value) {
    out.push(v.tag() as u8);
    out.extend_from_slice(&v.payload().to_le_bytes());
}

fn get_value(tag: u8, payload: [u8; 2]) -> Result<Value, WireError> {
    match Tag::from_u8(tag) {
        Some(Tag::Table) | None => Err(WireError::BadTag(tag)),
        Some(t) => Ok(Value::from_parts(t, u16::from_le_bytes(payload))),
    }
}

impl Message {
    pub fn encode(&self) -> Frame {
        let mut out = Vec::with_capacity(MAX_FRAME);
        match *self {
            Message::Swarm { robot, bits } => {
                out.push(TYPE_SWARM);
                out.extend_from_slice(&robot.to_le_bytes());
                out.push(bits);
            }
            Message::Bcast {
                robot,
                topic,
                value,
            } => {
                debug_assert!(is_sendable(value));
                out.push(TYPE_BCAST);
                out.extend_from_slice(&robot.to_le_bytes());
                out.extend_from_slice(&topic.to_le_bytes());
                put_value(&mut out, value);
            }
            Message::StigPut(e) | Message::StigQuery(e) => {
                debug_assert!(is_sendable(e.value));
                out.push(if matches!(self, Message::StigPut(_)) {
                    TYPE_STIG_PUT
                } else {
                    TYPE_STIG_QUERY
                });
                out.extend_from_slice(&e.key.to_le_bytes());
                put_value(&mut out, e.value);
                out.extend_from_slice(&e.timestamp.to_le_bytes());
                out.extend_from_slice(&e.origin.to_le_bytes());
            }
        }
        Frame::from_slice(&out).expect("every message fits a frame")
    }

    pub fn decode(b: &[u8]) -> Result<Message, WireError> {
        let ty = *b.first().ok_or(WireError::Empty)?;
        let want = match ty {
            TYPE_SWARM => 4,
            TYPE_BCAST => 8,
            TYPE_STIG_PUT | TYPE_STIG_QUERY => 10,
            other => return Err(WireError::UnknownType(other)),
        };
        if b.len() != want {
            return Err(WireError::BadLength {
                ty,
                got: b.len(),
                want,
            });
        }
        let u16_at = |i: usize| u16::from_le_bytes([b[i], b[i + 1]]);
        Ok(match ty {
            TYPE_SWARM => Message::Swarm {
                robot: u16_at(1),
                bits: b[3],
            },
            TYPE_BCAST => Message::Bcast {
                robot: u16_at(1),
                topic: u16_at(3),
                value: get_value(b[5], [b[6], b[7]])?,
            },
            _ => {
                let e = StigWire {
                    key: u16_at(1),
                    value: get_value(b[3], [b[4], b[5]])?,
                    timestamp: u16_at(6),
                    origin: u16_at(8),
                };
                if ty == TYPE_STIG_PUT {
                    Message::StigPut(e)
                } else {
                    Message::StigQuery(e)
                }
            }
        })
    }
}

/// A frame as heard by a receiver, with situated data supplied by the
/// physical layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Delivery {
    pub sender: RobotId,
    pub distance: f32,
    pub azimuth: f32,
    pub elevation: f32,
    pub frame: Frame,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::F16;

    #[test]
    fn sizes() {
        let sw = Message::Swarm { robot: 7, bits: 5 }.encode();
        assert_eq!(sw.len(), 4);
        let bc = Message::Bcast {
            robot: 1,
            topic: 40,
            value: Value::Int(9),
        }
        .encode();
        assert_eq!(bc.len(), 8);
        let st = Message::StigPut(StigWire {
            key: 40,
            value: Value::Float(F16::ONE),
            timestamp: 3,
            origin: 2,
        })
        .encode();
        assert_eq!(st.len(), 10);
        assert!(st.len() <= MAX_FRAME);
    }

    #[test]
    fn golden_bcast_bytes() {
        let f = Message::Bcast {
            robot: 0x0102,
            topic: 0x0020,
            value: Value::Int(-2),
        }
        .encode();
        assert_eq!(f.as_bytes(), &[2, 0x02, 0x01, 0x20, 0x00, 1, 0xFE, 0xFF]);
    }

    #[test]
    fn decode_errors() {
        assert_eq!(Message::decode(&[]), Err(WireError::Empty));
        assert_eq!(Message::decode(&[9]), Err(WireError::UnknownType(9)));
        assert!(matches!(
            Message::decode(&[1, 0, 0]),
            Err(WireError::BadLength { .. })
        ));
        assert_eq!(
            Message::decode(&[2, 0, 0, 0, 0, 4, 0, 0]),
            Err(WireError::BadTag(4))
        );
    }

    #[test]
    fn roundtrip() {
        let m = Message::StigQuery(StigWire {
            key: 33,
            value: Value::Str(40),
            timestamp: 65535,
            origin: 24,
        });
        assert_eq!(Message::decode(m.encode().as_bytes()), Ok(m));
    }
}
