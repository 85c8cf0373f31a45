//! Framing for the remote oracle.
//!
//! Every message is
//!
//! ```text
//! u32 little-endian header length | JSON header (UTF-8) | payload
//! ```
//!
//! The payload is zero or more tensors of little-endian `f32`, row-major,
//! channel-last, concatenated in the order of the header's `shapes` list
//! (`[height, width, channels]` each). Its length is implied by the shapes.
//!
//! Requests carry an `op` and its scalar arguments; responses carry a
//! `status` (`ok` or `error`), named scalar `losses`, and on error an empty
//! payload plus a `message`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Largest accepted JSON header.
pub const MAX_HEADER_BYTES: usize = 1 << 20;
/// Largest accepted payload (sum over all tensors).
pub const MAX_PAYLOAD_BYTES: usize = 1 << 30;
pub const MAX_TENSORS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    EvalLsp,
    DiffusionRoundtrip,
    SpatialDistance,
    ClipAlign,
    LpipsMasked,
}

impl Op {
    pub fn as_str(self) -> &'static str {
        match self {
            Op::EvalLsp => "eval_lsp",
            Op::DiffusionRoundtrip => "diffusion_roundtrip",
            Op::SpatialDistance => "spatial_distance",
            Op::ClipAlign => "clip_align",
            Op::LpipsMasked => "lpips_masked",
        }
    }

    pub fn parse(s: &str) -> Option<Op> {
        [Op::EvalLsp, Op::DiffusionRoundtrip, Op::SpatialDistance, Op::ClipAlign, Op::LpipsMasked]
            .into_iter()
            .find(|op| op.as_str() == s)
    }

    /// Number of tensors a request for this op carries.
    pub fn request_arity(self) -> usize {
        match self {
            Op::EvalLsp => 2,
            Op::DiffusionRoundtrip => 1,
            Op::SpatialDistance => 2,
            Op::ClipAlign => 1,
            Op::LpipsMasked => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestHeader {
    pub op: Op,
    pub shapes: Vec<[usize; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_e: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_sd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<usize>,
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub total_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
}

impl RequestHeader {
    pub fn new(op: Op) -> Self {
        RequestHeader {
            op,
            shapes: Vec::new(),
            lambda_e: None,
            lambda_sd: None,
            t: None,
            total_steps: None,
            seed: None,
            prompt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub header: RequestHeader,
    pub tensors: Vec<Tensor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseHeader {
    pub status: Status,
    #[serde(default)]
    pub losses: BTreeMap<String, f64>,
    #[serde(default)]
    pub shapes: Vec<[usize; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    /// Set by workers that resized the input to their working resolution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resized_from: Option<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub header: ResponseHeader,
    pub tensors: Vec<Tensor>,
}

impl Response {
    pub fn ok(losses: BTreeMap<String, f64>, tensors: Vec<Tensor>) -> Self {
        Response {
            header: ResponseHeader {
                status: Status::Ok,
                losses,
                shapes: tensors.iter().map(Tensor::shape).collect(),
                message: None,
                resized_from: None,
            },
            tensors,
        }
    }

    pub fn error(message: impl Into<String>) -> Self {
        Response {
            header: ResponseHeader {
                status: Status::Error,
                losses: BTreeMap::new(),
                shapes: Vec::new(),
                message: Some(message.into()),
                resized_from: None,
            },
            tensors: Vec::new(),
        }
    }

    pub fn loss(&self, name: &str) -> Result<f64> {
        self.header
            .losses
            .get(name)
            .copied()
            .ok_or_else(|| Error::Protocol(format!("response lacks loss `{name}`")))
    }
}

/// Validate shapes and return the total payload length in bytes.
pub fn payload_len(shapes: &[[usize; 3]]) -> Result<usize> {
    if shapes.len() > MAX_TENSORS {
        return Err(Error::Protocol(format!("{} tensors exceeds limit of {MAX_TENSORS}", shapes.len())));
    }
    let mut total: usize = 0;
    for s in shapes {
        if s.contains(&0) {
            return Err(Error::Protocol(format!("tensor shape {s:?} has a zero dimension")));
        }
        let bytes = s[0]
            .checked_mul(s[1])
            .and_then(|v| v.checked_mul(s[2]))
            .and_then(|v| v.checked_mul(4))
            .ok_or_else(|| Error::Protocol(format!("tensor shape {s:?} overflows")))?;
        total = total
            .checked_add(bytes)
            .filter(|&t| t <= MAX_PAYLOAD_BYTES)
            .ok_or_else(|| Error::Protocol(format!("payload exceeds {MAX_PAYLOAD_BYTES} bytes")))?;
    }
    Ok(total)
}

fn write_frame<W: Write>(w: &mut W, header: &[u8], tensors: &[Tensor]) -> Result<()> {
    if header.len() > MAX_HEADER_BYTES {
        return Err(Error::Protocol("header too large".into()));
    }
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(header)?;
    let mut buf = Vec::new();
    for t in tensors {
        buf.clear();
        buf.reserve(t.len() * 4);
        for &v in t.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

fn read_header_bytes<R: Read>(r: &mut R) -> Result<Vec<u8>> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_le_bytes(len) as usize;
    if len > MAX_HEADER_BYTES {
        return Err(Error::Protocol(format!("header length {len} exceeds {MAX_HEADER_BYTES}")));
    }
    let mut header = vec![0u8; len];
    r.read_exact(&mut header)?;
    Ok(header)
}

fn read_tensors<R: Read>(r: &mut R, shapes: &[[usize; 3]]) -> Result<Vec<Tensor>> {
    payload_len(shapes)?;
    let mut out = Vec::with_capacity(shapes.len());
    for &[h, w, c] in shapes {
        let want = h * w * c * 4;
        // Grow with the bytes actually received rather than the declared size.
        let mut raw = Vec::new();
        r.by_ref().take(want as u64).read_to_end(&mut raw)?;
        if raw.len() != want {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                format!("payload truncated at {} of {want} bytes", raw.len()),
            )));
        }
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        out.push(Tensor::from_vec(h, w, c, data)?);
    }
    Ok(out)
}

pub fn write_request<W: Write>(w: &mut W, req: &Request) -> Result<()> {
    let mut header = req.header.clone();
    header.shapes = req.tensors.iter().map(Tensor::shape).collect();
    write_frame(w, &serde_json::to_vec(&header)?, &req.tensors)
}

/// Read one request. The op is checked before any payload is consumed.
pub fn read_request<R: Read>(r: &mut R) -> Result<Request> {
    let raw = read_header_bytes(r)?;
    let value: serde_json::Value =
        serde_json::from_slice(&raw).map_err(|e| Error::Protocol(format!("header is not JSON: {e}")))?;
    let op = value
        .get("op")
        .and_then(|v| v.as_str())
        .ok_or_else(|| Error::Protocol("header lacks `op`".into()))?;
    let op = Op::parse(op).ok_or_else(|| Error::Protocol(format!("unknown op `{op}`")))?;
    let header: RequestHeader =
        serde_json::from_value(value).map_err(|e| Error::Protocol(format!("bad request header: {e}")))?;
    debug_assert_eq!(header.op, op);
    if header.shapes.len() != op.request_arity() {
        return Err(Error::Protocol(format!(
            "{} expects {} tensors, header declares {}",
            op.as_str(),
            op.request_arity(),
            header.shapes.len()
        )));
    }
    let tensors = read_tensors(r, &header.shapes)?;
    Ok(Request { header, tensors })
}

pub fn write_response<W: Write>(w: &mut W, resp: &Response) -> Result<()> {
    let mut header = resp.header.clone();
    header.shapes = resp.tensors.iter().map(Tensor::shape).collect();
    write_frame(w, &serde_json::to_vec(&header)?, &resp.tensors)
}

pub fn read_response<R: Read>(r: &mut R) -> Result<Response> {
    let raw = read_header_bytes(r)?;
    let header: ResponseHeader =
        serde_json::from_slice(&raw).map_err(|e| Error::Protocol(format!("bad response header: {e}")))?;
    if header.status == Status::Error && !header.shapes.is_empty() {
        return Err(Error::Protocol("error responses must not carry tensors".into()));
    }
    let tensors = read_tensors(r, &header.shapes)?;
    Ok(Response { header, tensors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame(header: &str, payload: &[u8]) -> Vec<u8> {
        let mut v = (header.len() as u32).to_le_bytes().to_vec();
        v.extend_from_slice(header.as_bytes());
        v.extend_from_slice(payload);
        v
    }

    #[test]
    fn unknown_op_rejected_before_payload() {
        // The declared payload is absent; a reader that consumed it would
        // fail with an I/O error instead.
        let bytes = frame(r#"{"op":"train","shapes":[[4,4,3]]}"#, &[]);
        match read_request(&mut &bytes[..]) {
            Err(Error::Protocol(m)) => assert!(m.contains("unknown op")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn payload_length_must_match_shapes() {
        let bytes = frame(r#"{"op":"clip_align","shapes":[[2,2,1]]}"#, &[0u8; 12]);
        assert!(matches!(read_request(&mut &bytes[..]), Err(Error::Io(_))));
    }

    #[test]
    fn arity_checked() {
        let bytes = frame(r#"{"op":"eval_lsp","shapes":[[1,1,1]]}"#, &[0u8; 4]);
        assert!(matches!(read_request(&mut &bytes[..]), Err(Error::Protocol(_))));
    }

    #[test]
    fn oversize_shapes_rejected_without_allocation() {
        let bytes = frame(
            r#"{"status":"ok","shapes":[[4294967295,4294967295,4294967295]]}"#,
            &[],
        );
        assert!(matches!(read_response(&mut &bytes[..]), Err(Error::Protocol(_))));
        assert!(payload_len(&[[0, 3, 3]]).is_err());
    }

    #[test]
    fn error_response_roundtrip() {
        let mut buf = Vec::new();
        write_response(&mut buf, &Response::error("weights missing")).unwrap();
        let back = read_response(&mut &buf[..]).unwrap();
        assert_eq!(back.header.status, Status::Error);
        assert_eq!(back.header.message.as_deref(), Some("weights missing"));
    }

    #[test]
    fn header_uses_capital_t_for_schedule_length() {
        let mut h = RequestHeader::new(Op::DiffusionRoundtrip);
        h.t = Some(5);
        h.total_steps = Some(25);
        let json = serde_json::to_string(&h).unwrap();
        assert!(json.contains(r#""T":25"#), "{json}");
        assert!(json.contains(r#""op":"diffusion_roundtrip""#), "{json}");
    }

    proptest! {
        #[test]
        fn request_roundtrip_is_f32_exact(vals in prop::collection::vec(-4.0f32..4.0, 12), seed in any::<u64>()) {
            let a = Tensor::from_vec(2, 2, 3, vals.iter().map(|&v| v as f64).collect()).unwrap();
            let b = a.scale(0.5);
            let mut header = RequestHeader::new(Op::EvalLsp);
            header.shapes = vec![[2, 2, 3]; 2];
            header.lambda_e = Some(1.0);
            header.lambda_sd = Some(0.0);
            header.seed = Some(seed);
            let req = Request { header, tensors: vec![a, b] };
            let mut buf = Vec::new();
            write_request(&mut buf, &req).unwrap();
            let back = read_request(&mut &buf[..]).unwrap();
            prop_assert_eq!(back, req);
        }

        #[test]
        fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
            let _ = read_request(&mut &bytes[..]);
            let _ = read_response(&mut &bytes[..]);
        }
    }
}
