//! Frame codec.
//!
//! ```text
//! u32 BE  frame_len    bytes after this field
//! u32 BE  header_len
//! [header_len]         UTF-8 JSON header
//! [..]                 payloads, f64 little-endian, in header order
//! ```
//!
//! The header lists every payload with its name and shape, so a frame can
//! be checked without knowing the request that produced it.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use mofit_core::diffusion::ImageShape;
use mofit_core::oracle::OracleInfo;
use mofit_core::{Error, Result};

/// Frames above this size are rejected before allocation.
pub const MAX_FRAME: usize = 256 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Hello,
    UncondLossGradWrtImage,
    CondLossGradWrtImage,
    CondLossGradWrtCondition,
    CondLossOnly,
    UncondLossOnly,
}

impl Op {
    pub fn conditional(self) -> bool {
        matches!(
            self,
            Op::CondLossGradWrtImage | Op::CondLossGradWrtCondition | Op::CondLossOnly
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayloadSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl PayloadSpec {
    fn new(name: &str, shape: Vec<usize>) -> Self {
        Self {
            name: name.into(),
            shape,
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Error,
}

/// Model description sent in the handshake; `alpha_bars` travels as a payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfoHeader {
    pub image_shape: [usize; 3],
    pub cond_dim: usize,
    pub steps: usize,
    pub version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub op: Option<Op>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<Status>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub info: Option<InfoHeader>,
    pub payloads: Vec<PayloadSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub header: Header,
    pub payloads: Vec<Vec<f64>>,
}

impl Frame {
    pub fn payload(&self, name: &str) -> Option<(&PayloadSpec, &[f64])> {
        self.header
            .payloads
            .iter()
            .zip(&self.payloads)
            .find(|(s, _)| s.name == name)
            .map(|(s, p)| (s, p.as_slice()))
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        if self.header.payloads.len() != self.payloads.len() {
            return Err(Error::Protocol("payload count differs from header".into()));
        }
        for (s, p) in self.header.payloads.iter().zip(&self.payloads) {
            if s.len() != p.len() {
                return Err(Error::Protocol(format!(
                    "payload `{}` does not match its shape",
                    s.name
                )));
            }
        }
        let header = serde_json::to_vec(&self.header).map_err(|e| Error::Protocol(e.to_string()))?;
        let body: usize = self.payloads.iter().map(|p| p.len() * 8).sum();
        let frame_len = 4 + header.len() + body;
        if frame_len > MAX_FRAME {
            return Err(Error::Protocol(format!("frame of {frame_len} bytes exceeds the limit")));
        }
        let mut out = Vec::with_capacity(4 + frame_len);
        out.extend_from_slice(&(frame_len as u32).to_be_bytes());
        out.extend_from_slice(&(header.len() as u32).to_be_bytes());
        out.extend_from_slice(&header);
        for p in &self.payloads {
            for v in p {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Decodes the bytes after the frame-length field.
    pub fn decode_body(body: &[u8]) -> Result<Self> {
        if body.len() < 4 {
            return Err(Error::Protocol("frame shorter than its header length".into()));
        }
        let hlen = u32::from_be_bytes(body[..4].try_into().expect("4 bytes")) as usize;
        if 4 + hlen > body.len() {
            return Err(Error::Protocol(format!("header length {hlen} overruns the frame")));
        }
        let header: Header =
            serde_json::from_slice(&body[4..4 + hlen]).map_err(|e| Error::Protocol(format!("bad header: {e}")))?;
        let data = &body[4 + hlen..];
        let want: usize = header.payloads.iter().map(|s| s.len() * 8).sum();
        if want != data.len() {
            return Err(Error::Protocol(format!(
                "header declares {want} payload bytes, frame carries {}",
                data.len()
            )));
        }
        let mut payloads = Vec::with_capacity(header.payloads.len());
        let mut off = 0;
        for s in &header.payloads {
            let n = s.len();
            let p = data[off..off + 8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            off += 8 * n;
            payloads.push(p);
        }
        Ok(Self { header, payloads })
    }
}

pub fn write_frame(w: &mut impl Write, frame: &Frame) -> Result<()> {
    let bytes = frame.encode()?;
    w.write_all(&bytes).map_err(|e| Error::Transport(e.to_string()))?;
    w.flush().map_err(|e| Error::Transport(e.to_string()))
}

/// Reads one frame; returns the raw bytes (including the length prefix) too.
/// A clean end of stream before the first byte yields `Ok(None)`.
pub fn read_frame(r: &mut impl Read) -> Result<Option<(Frame, Vec<u8>)>> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(Error::Transport("connection closed mid-frame".into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(Error::Transport(e.to_string())),
        }
    }
    let n = u32::from_be_bytes(len) as usize;
    if n > MAX_FRAME {
        return Err(Error::Protocol(format!("frame of {n} bytes exceeds the limit")));
    }
    let mut raw = vec![0u8; 4 + n];
    raw[..4].copy_from_slice(&len);
    r.read_exact(&mut raw[4..])
        .map_err(|e| Error::Transport(e.to_string()))?;
    let frame = Frame::decode_body(&raw[4..])?;
    Ok(Some((frame, raw)))
}

fn shape3(s: ImageShape) -> Vec<usize> {
    vec![s.height, s.width, s.channels]
}

fn header(id: u64) -> Header {
    Header {
        id,
        op: None,
        t: None,
        version: None,
        status: None,
        error: None,
        info: None,
        payloads: Vec::new(),
    }
}

pub fn hello(id: u64, version: u32) -> Frame {
    Frame {
        header: Header {
            op: Some(Op::Hello),
            version: Some(version),
            ..header(id)
        },
        payloads: Vec::new(),
    }
}

pub fn hello_reply(id: u64, info: &OracleInfo) -> Frame {
    let s = info.image_shape;
    Frame {
        header: Header {
            status: Some(Status::Ok),
            info: Some(InfoHeader {
                image_shape: [s.height, s.width, s.channels],
                cond_dim: info.cond_dim,
                steps: info.steps,
                version: info.version,
            }),
            payloads: vec![PayloadSpec::new("alpha_bars", vec![info.alpha_bars.len()])],
            ..header(id)
        },
        payloads: vec![info.alpha_bars.clone()],
    }
}

/// Recovers the model description from a handshake reply.
pub fn parse_hello_reply(f: &Frame) -> Result<OracleInfo> {
    if f.header.status != Some(Status::Ok) {
        return Err(Error::Protocol(format!(
            "handshake refused: {}",
            f.header.error.clone().unwrap_or_default()
        )));
    }
    let h = f
        .header
        .info
        .as_ref()
        .ok_or_else(|| Error::Protocol("handshake reply without info".into()))?;
    let (_, ab) = f
        .payload("alpha_bars")
        .ok_or_else(|| Error::Protocol("handshake reply without alpha_bars".into()))?;
    let info = OracleInfo {
        image_shape: ImageShape::new(h.image_shape[0], h.image_shape[1], h.image_shape[2]),
        cond_dim: h.cond_dim,
        steps: h.steps,
        alpha_bars: ab.to_vec(),
        version: h.version,
    };
    info.validate()?;
    Ok(info)
}

/// A loss (and optional gradient) evaluation request.
#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub id: u64,
    pub op: Op,
    pub t: usize,
    pub shape: ImageShape,
    pub x: Vec<f64>,
    pub cond: Option<Vec<f64>>,
    pub eps: Vec<f64>,
}

impl Request {
    pub fn to_frame(&self) -> Frame {
        let mut specs = vec![PayloadSpec::new("x", shape3(self.shape))];
        let mut payloads = vec![self.x.clone()];
        if let Some(c) = &self.cond {
            specs.push(PayloadSpec::new("cond", vec![c.len()]));
            payloads.push(c.clone());
        }
        specs.push(PayloadSpec::new("eps", shape3(self.shape)));
        payloads.push(self.eps.clone());
        Frame {
            header: Header {
                op: Some(self.op),
                t: Some(self.t),
                payloads: specs,
                ..header(self.id)
            },
            payloads,
        }
    }

    pub fn from_frame(f: &Frame) -> Result<Self> {
        let op = f
            .header
            .op
            .ok_or_else(|| Error::Protocol("request without op".into()))?;
        let t = f.header.t.ok_or_else(|| Error::Protocol("request without t".into()))?;
        let (xs, x) = f
            .payload("x")
            .ok_or_else(|| Error::Protocol("request without x".into()))?;
        let (es, eps) = f
            .payload("eps")
            .ok_or_else(|| Error::Protocol("request without eps".into()))?;
        if xs.shape.len() != 3 || xs.shape != es.shape {
            return Err(Error::Protocol("x and eps must share one H×W×C shape".into()));
        }
        let cond = f.payload("cond").map(|(_, c)| c.to_vec());
        if op.conditional() != cond.is_some() {
            return Err(Error::Protocol(format!(
                "{op:?} with cond present = {}",
                cond.is_some()
            )));
        }
        Ok(Self {
            id: f.header.id,
            op,
            t,
            shape: ImageShape::new(xs.shape[0], xs.shape[1], xs.shape[2]),
            x: x.to_vec(),
            cond,
            eps: eps.to_vec(),
        })
    }
}

/// Successful evaluation result.
#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub id: u64,
    pub loss: f64,
    pub grad: Option<(Vec<usize>, Vec<f64>)>,
}

impl Reply {
    pub fn to_frame(&self) -> Frame {
        let mut specs = vec![PayloadSpec::new("loss", vec![1])];
        let mut payloads = vec![vec![self.loss]];
        if let Some((shape, g)) = &self.grad {
            specs.push(PayloadSpec::new("grad", shape.clone()));
            payloads.push(g.clone());
        }
        Frame {
            header: Header {
                status: Some(Status::Ok),
                payloads: specs,
                ..header(self.id)
            },
            payloads,
        }
    }

    /// Parses a response frame; error frames become `Error::Protocol`.
    pub fn from_frame(f: &Frame) -> Result<Self> {
        match f.header.status {
            Some(Status::Ok) => {}
            Some(Status::Error) => {
                return Err(Error::Protocol(format!(
                    "server error for request {}: {}",
                    f.header.id,
                    f.header.error.clone().unwrap_or_default()
                )))
            }
            None => return Err(Error::Protocol("response without status".into())),
        }
        let (ls, l) = f
            .payload("loss")
            .ok_or_else(|| Error::Protocol("response without loss".into()))?;
        if ls.shape != [1] {
            return Err(Error::Protocol("loss payload must have shape [1]".into()));
        }
        Ok(Self {
            id: f.header.id,
            loss: l[0],
            grad: f.payload("grad").map(|(s, g)| (s.shape.clone(), g.to_vec())),
        })
    }
}

pub fn error_reply(id: u64, msg: &str) -> Frame {
    Frame {
        header: Header {
            status: Some(Status::Error),
            error: Some(msg.to_string()),
            ..header(id)
        },
        payloads: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hello_frame_bytes_are_pinned() {
        let b = hello(0, 1).encode().unwrap();
        let json = br#"{"id":0,"op":"hello","version":1,"payloads":[]}"#;
        let mut want = ((4 + json.len()) as u32).to_be_bytes().to_vec();
        want.extend_from_slice(&(json.len() as u32).to_be_bytes());
        want.extend_from_slice(json);
        assert_eq!(b, want);
    }

    #[test]
    fn request_round_trip_is_bit_exact() {
        let r = Request {
            id: 7,
            op: Op::CondLossGradWrtCondition,
            t: 140,
            shape: ImageShape::new(1, 3, 1),
            x: vec![0.1, -0.0, f64::MIN_POSITIVE],
            cond: Some(vec![1e-300, 2.5]),
            eps: vec![f64::NAN, 1.0, -2.0],
        };
        let bytes = r.to_frame().encode().unwrap();
        let (f, raw) = read_frame(&mut bytes.as_slice()).unwrap().unwrap();
        assert_eq!(raw, bytes);
        let back = Request::from_frame(&f).unwrap();
        assert_eq!(
            back.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            r.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert!(back.eps[0].is_nan());
        assert_eq!(back.cond, r.cond);
        assert_eq!(back.op, r.op);
    }

    #[test]
    fn malformed_frames_are_rejected() {
        let mut bytes = hello(0, 1).encode().unwrap();
        bytes.push(0);
        let n = bytes.len() as u32 - 4;
        bytes[..4].copy_from_slice(&n.to_be_bytes());
        assert!(matches!(read_frame(&mut bytes.as_slice()), Err(Error::Protocol(_))));
        let short = [0u8, 0, 0, 9, 0, 0];
        assert!(matches!(read_frame(&mut short.as_slice()), Err(Error::Transport(_))));
        assert!(read_frame(&mut [].as_slice()).unwrap().is_none());
        let bad = br#"{"id":0,"payloads":[],"extra":1}"#;
        let mut f = ((4 + bad.len()) as u32).to_be_bytes().to_vec();
        f.extend_from_slice(&(bad.len() as u32).to_be_bytes());
        f.extend_from_slice(bad);
        assert!(matches!(read_frame(&mut f.as_slice()), Err(Error::Protocol(_))));
    }

    #[test]
    fn cond_presence_must_match_op() {
        let mut r = Request {
            id: 1,
            op: Op::UncondLossOnly,
            t: 1,
            shape: ImageShape::new(1, 1, 1),
            x: vec![0.0],
            cond: Some(vec![0.0]),
            eps: vec![0.0],
        };
        assert!(Request::from_frame(&r.to_frame()).is_err());
        r.cond = None;
        assert!(Request::from_frame(&r.to_frame()).is_ok());
    }
}
