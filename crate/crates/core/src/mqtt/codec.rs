//! MQTT 3.1.1 wire format for the packet subset the mappers use.

use std::io::{self, Read};

use thiserror::Error;

use crate::sul::WillSpec;

/// Largest value the variable-byte remaining length can carry.
pub const MAX_REMAINING_LENGTH: u32 = 268_435_455;

const PROTOCOL_NAME: &str = "MQTT";
const PROTOCOL_LEVEL: u8 = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MqttPacket {
    Connect {
        client_id: String,
        clean_session: bool,
        keep_alive: u16,
        will: Option<WillSpec>,
    },
    ConnAck {
        session_present: bool,
        return_code: u8,
    },
    Subscribe {
        packet_id: u16,
        topic_filter: String,
        qos: u8,
    },
    SubAck {
        packet_id: u16,
        granted_qos: u8,
    },
    Unsubscribe {
        packet_id: u16,
        topic_filter: String,
    },
    UnsubAck {
        packet_id: u16,
    },
    /// QoS 0 only.
    Publish {
        topic: String,
        payload: Vec<u8>,
        retain: bool,
    },
    Disconnect,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EncodeError {
    #[error("{field} is longer than 65535 bytes")]
    StringTooLong { field: &'static str },
    #[error("remaining length {0} exceeds the maximum of {MAX_REMAINING_LENGTH}")]
    PacketTooLarge(usize),
    #[error("invalid {field}: {value}")]
    InvalidValue { field: &'static str, value: u8 },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("incomplete packet")]
    Incomplete,
    #[error("malformed remaining length")]
    MalformedRemainingLength,
    #[error("unknown packet type {0}")]
    UnknownPacketType(u8),
    #[error("invalid fixed-header flags {flags:#x} for {packet}")]
    InvalidFlags { packet: &'static str, flags: u8 },
    #[error("{field} truncated")]
    Truncated { field: &'static str },
    #[error("{field} is not valid UTF-8")]
    InvalidUtf8 { field: &'static str },
    #[error("unsupported protocol {name:?} level {level}")]
    InvalidProtocol { name: String, level: u8 },
    #[error("invalid {field}: {value}")]
    InvalidValue { field: &'static str, value: u8 },
    #[error("unsupported: {0}")]
    Unsupported(&'static str),
    #[error("{0} has trailing bytes")]
    TrailingBytes(&'static str),
}

pub fn encode_remaining_length(mut value: u32, out: &mut Vec<u8>) {
    assert!(
        value <= MAX_REMAINING_LENGTH,
        "remaining length out of range"
    );
    loop {
        let mut byte = (value % 128) as u8;
        value /= 128;
        if value > 0 {
            byte |= 0x80;
        }
        out.push(byte);
        if value == 0 {
            break;
        }
    }
}

/// Decodes a remaining length from the start of `bytes`, returning the value
/// and the number of bytes it occupied.
pub fn decode_remaining_length(bytes: &[u8]) -> Result<(u32, usize), DecodeError> {
    let mut value: u32 = 0;
    let mut multiplier: u32 = 1;
    for (k, &byte) in bytes.iter().enumerate() {
        if k == 4 {
            return Err(DecodeError::MalformedRemainingLength);
        }
        value += u32::from(byte & 0x7f) * multiplier;
        if byte & 0x80 == 0 {
            // Reject non-minimal encodings such as 0x80 0x00.
            if k > 0 && byte == 0 {
                return Err(DecodeError::MalformedRemainingLength);
            }
            return Ok((value, k + 1));
        }
        multiplier *= 128;
    }
    if bytes.len() >= 4 {
        Err(DecodeError::MalformedRemainingLength)
    } else {
        Err(DecodeError::Incomplete)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str, field: &'static str) -> Result<(), EncodeError> {
    put_bytes(out, s.as_bytes(), field)
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8], field: &'static str) -> Result<(), EncodeError> {
    let len = u16::try_from(b.len()).map_err(|_| EncodeError::StringTooLong { field })?;
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(b);
    Ok(())
}

fn check_qos(field: &'static str, value: u8) -> Result<(), EncodeError> {
    if value > 2 {
        return Err(EncodeError::InvalidValue { field, value });
    }
    Ok(())
}

impl MqttPacket {
    pub fn name(&self) -> &'static str {
        match self {
            MqttPacket::Connect { .. } => "CONNECT",
            MqttPacket::ConnAck { .. } => "CONNACK",
            MqttPacket::Subscribe { .. } => "SUBSCRIBE",
            MqttPacket::SubAck { .. } => "SUBACK",
            MqttPacket::Unsubscribe { .. } => "UNSUBSCRIBE",
            MqttPacket::UnsubAck { .. } => "UNSUBACK",
            MqttPacket::Publish { .. } => "PUBLISH",
            MqttPacket::Disconnect => "DISCONNECT",
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>, EncodeError> {
        let mut body = Vec::new();
        let header = match self {
            MqttPacket::Connect {
                client_id,
                clean_session,
                keep_alive,
                will,
            } => {
                put_str(&mut body, PROTOCOL_NAME, "protocol name")?;
                body.push(PROTOCOL_LEVEL);
                let mut flags = 0u8;
                if *clean_session {
                    flags |= 0x02;
                }
                if let Some(w) = will {
                    flags |= 0x04;
                    if w.retain {
                        flags |= 0x20;
                    }
                }
                body.push(flags);
                body.extend_from_slice(&keep_alive.to_be_bytes());
                put_str(&mut body, client_id, "client id")?;
                if let Some(w) = will {
                    put_str(&mut body, &w.topic, "will topic")?;
                    put_bytes(&mut body, &w.payload, "will message")?;
                }
                0x10
            }
            MqttPacket::ConnAck {
                session_present,
                return_code,
            } => {
                body.push(u8::from(*session_present));
                body.push(*return_code);
                0x20
            }
            MqttPacket::Subscribe {
                packet_id,
                topic_filter,
                qos,
            } => {
                check_qos("requested QoS", *qos)?;
                body.extend_from_slice(&packet_id.to_be_bytes());
                put_str(&mut body, topic_filter, "topic filter")?;
                body.push(*qos);
                0x82
            }
            MqttPacket::SubAck {
                packet_id,
                granted_qos,
            } => {
                if *granted_qos > 2 && *granted_qos != 0x80 {
                    return Err(EncodeError::InvalidValue {
                        field: "granted QoS",
                        value: *granted_qos,
                    });
                }
                body.extend_from_slice(&packet_id.to_be_bytes());
                body.push(*granted_qos);
                0x90
            }
            MqttPacket::Unsubscribe {
                packet_id,
                topic_filter,
            } => {
                body.extend_from_slice(&packet_id.to_be_bytes());
                put_str(&mut body, topic_filter, "topic filter")?;
                0xa2
            }
            MqttPacket::UnsubAck { packet_id } => {
                body.extend_from_slice(&packet_id.to_be_bytes());
                0xb0
            }
            MqttPacket::Publish {
                topic,
                payload,
                retain,
            } => {
                put_str(&mut body, topic, "topic name")?;
                body.extend_from_slice(payload);
                0x30 | u8::from(*retain)
            }
            MqttPacket::Disconnect => 0xe0,
        };
        if body.len() > MAX_REMAINING_LENGTH as usize {
            return Err(EncodeError::PacketTooLarge(body.len()));
        }
        let mut out = Vec::with_capacity(body.len() + 5);
        out.push(header);
        encode_remaining_length(body.len() as u32, &mut out);
        out.extend_from_slice(&body);
        Ok(out)
    }

    /// Decodes one packet from the start of `bytes`, returning it with the
    /// number of bytes consumed. [`DecodeError::Incomplete`] means more input
    /// is needed.
    pub fn decode(bytes: &[u8]) -> Result<(MqttPacket, usize), DecodeError> {
        let total = frame_len(bytes)?.ok_or(DecodeError::Incomplete)?;
        let (_, len_bytes) = decode_remaining_length(&bytes[1..])?;
        let packet = decode_body(bytes[0], &bytes[1 + len_bytes..total])?;
        Ok((packet, total))
    }
}

/// Total length of the packet at the start of `bytes`, if its fixed header is
/// complete and all of it has arrived.
pub fn frame_len(bytes: &[u8]) -> Result<Option<usize>, DecodeError> {
    if bytes.len() < 2 {
        return Ok(None);
    }
    let (remaining, len_bytes) = match decode_remaining_length(&bytes[1..]) {
        Ok(v) => v,
        Err(DecodeError::Incomplete) => return Ok(None),
        Err(e) => return Err(e),
    };
    let total = 1 + len_bytes + remaining as usize;
    Ok((bytes.len() >= total).then_some(total))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn u8(&mut self, field: &'static str) -> Result<u8, DecodeError> {
        let b = *self
            .bytes
            .get(self.pos)
            .ok_or(DecodeError::Truncated { field })?;
        self.pos += 1;
        Ok(b)
    }

    fn u16(&mut self, field: &'static str) -> Result<u16, DecodeError> {
        let hi = self.u8(field)?;
        let lo = self.u8(field)?;
        Ok(u16::from_be_bytes([hi, lo]))
    }

    fn bytes(&mut self, field: &'static str) -> Result<&'a [u8], DecodeError> {
        let len = self.u16(field)? as usize;
        let end = self.pos + len;
        let out = self
            .bytes
            .get(self.pos..end)
            .ok_or(DecodeError::Truncated { field })?;
        self.pos = end;
        Ok(out)
    }

    fn string(&mut self, field: &'static str) -> Result<String, DecodeError> {
        let raw = self.bytes(field)?;
        String::from_utf8(raw.to_vec()).map_err(|_| DecodeError::InvalidUtf8 { field })
    }

    fn rest(&mut self) -> &'a [u8] {
        let out = &self.bytes[self.pos..];
        self.pos = self.bytes.len();
        out
    }

    fn finish(&self, packet: &'static str) -> Result<(), DecodeError> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(DecodeError::TrailingBytes(packet))
        }
    }
}

fn expect_flags(packet: &'static str, flags: u8, expected: u8) -> Result<(), DecodeError> {
    if flags != expected {
        return Err(DecodeError::InvalidFlags { packet, flags });
    }
    Ok(())
}

fn decode_body(header: u8, body: &[u8]) -> Result<MqttPacket, DecodeError> {
    let kind = header >> 4;
    let flags = header & 0x0f;
    let mut c = Cursor {
        bytes: body,
        pos: 0,
    };
    let packet = match kind {
        1 => {
            expect_flags("CONNECT", flags, 0)?;
            let name = c.string("protocol name")?;
            let level = c.u8("protocol level")?;
            if name != PROTOCOL_NAME || level != PROTOCOL_LEVEL {
                return Err(DecodeError::InvalidProtocol { name, level });
            }
            let connect_flags = c.u8("connect flags")?;
            if connect_flags & 0x01 != 0 {
                return Err(DecodeError::InvalidValue {
                    field: "connect flags",
                    value: connect_flags,
                });
            }
            if connect_flags & 0xc0 != 0 {
                return Err(DecodeError::Unsupported("username/password"));
            }
            let will_flag = connect_flags & 0x04 != 0;
            let will_qos = (connect_flags >> 3) & 0x03;
            let will_retain = connect_flags & 0x20 != 0;
            if will_qos != 0 {
                return Err(DecodeError::Unsupported("will QoS > 0"));
            }
            if !will_flag && will_retain {
                return Err(DecodeError::InvalidValue {
                    field: "connect flags",
                    value: connect_flags,
                });
            }
            let keep_alive = c.u16("keep alive")?;
            let client_id = c.string("client id")?;
            let will = if will_flag {
                let topic = c.string("will topic")?;
                let payload = c.bytes("will message")?.to_vec();
                Some(WillSpec {
                    topic,
                    payload,
                    retain: will_retain,
                })
            } else {
                None
            };
            c.finish("CONNECT")?;
            MqttPacket::Connect {
                client_id,
                clean_session: connect_flags & 0x02 != 0,
                keep_alive,
                will,
            }
        }
        2 => {
            expect_flags("CONNACK", flags, 0)?;
            let ack_flags = c.u8("acknowledge flags")?;
            if ack_flags > 1 {
                return Err(DecodeError::InvalidValue {
                    field: "acknowledge flags",
                    value: ack_flags,
                });
            }
            let return_code = c.u8("return code")?;
            c.finish("CONNACK")?;
            MqttPacket::ConnAck {
                session_present: ack_flags == 1,
                return_code,
            }
        }
        3 => {
            let qos = (flags >> 1) & 0x03;
            if qos != 0 {
                return Err(DecodeError::Unsupported("PUBLISH with QoS > 0"));
            }
            if flags & 0x08 != 0 {
                return Err(DecodeError::InvalidFlags {
                    packet: "PUBLISH",
                    flags,
                });
            }
            let topic = c.string("topic name")?;
            let payload = c.rest().to_vec();
            MqttPacket::Publish {
                topic,
                payload,
                retain: flags & 0x01 != 0,
            }
        }
        8 => {
            expect_flags("SUBSCRIBE", flags, 0x02)?;
            let packet_id = c.u16("packet id")?;
            let topic_filter = c.string("topic filter")?;
            let qos = c.u8("requested QoS")?;
            if qos > 2 {
                return Err(DecodeError::InvalidValue {
                    field: "requested QoS",
                    value: qos,
                });
            }
            if c.pos != body.len() {
                return Err(DecodeError::Unsupported("multiple topic filters"));
            }
            MqttPacket::Subscribe {
                packet_id,
                topic_filter,
                qos,
            }
        }
        9 => {
            expect_flags("SUBACK", flags, 0)?;
            let packet_id = c.u16("packet id")?;
            let granted_qos = c.u8("granted QoS")?;
            if granted_qos > 2 && granted_qos != 0x80 {
                return Err(DecodeError::InvalidValue {
                    field: "granted QoS",
                    value: granted_qos,
                });
            }
            if c.pos != body.len() {
                return Err(DecodeError::Unsupported("multiple topic filters"));
            }
            MqttPacket::SubAck {
                packet_id,
                granted_qos,
            }
        }
        10 => {
            expect_flags("UNSUBSCRIBE", flags, 0x02)?;
            let packet_id = c.u16("packet id")?;
            let topic_filter = c.string("topic filter")?;
            if c.pos != body.len() {
                return Err(DecodeError::Unsupported("multiple topic filters"));
            }
            MqttPacket::Unsubscribe {
                packet_id,
                topic_filter,
            }
        }
        11 => {
            expect_flags("UNSUBACK", flags, 0)?;
            let packet_id = c.u16("packet id")?;
            c.finish("UNSUBACK")?;
            MqttPacket::UnsubAck { packet_id }
        }
        14 => {
            expect_flags("DISCONNECT", flags, 0)?;
            c.finish("DISCONNECT")?;
            MqttPacket::Disconnect
        }
        other => return Err(DecodeError::UnknownPacketType(other)),
    };
    Ok(packet)
}

/// Reads exactly one packet. `Ok(None)` on a clean end of stream before the
/// first byte; decode failures surface as [`io::ErrorKind::InvalidData`].
pub fn read_packet<R: Read>(reader: &mut R) -> io::Result<Option<MqttPacket>> {
    let mut buf = vec![0u8; 1];
    match reader.read(&mut buf[..1]) {
        Ok(0) => return Ok(None),
        Ok(_) => {}
        Err(e) if e.kind() == io::ErrorKind::Interrupted => return read_packet(reader),
        Err(e) => return Err(e),
    }
    loop {
        let mut byte = [0u8; 1];
        reader.read_exact(&mut byte)?;
        buf.push(byte[0]);
        match decode_remaining_length(&buf[1..]) {
            Ok((remaining, _)) => {
                let start = buf.len();
                buf.resize(start + remaining as usize, 0);
                reader.read_exact(&mut buf[start..])?;
                break;
            }
            Err(DecodeError::Incomplete) => continue,
            Err(e) => return Err(io::Error::new(io::ErrorKind::InvalidData, e)),
        }
    }
    MqttPacket::decode(&buf)
        .map(|(p, _)| Some(p))
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}
