//! Client for an out-of-process oracle worker.

use std::fmt;
use std::io::{BufReader, BufWriter, Read, Write};
use std::net::TcpStream;
#[cfg(unix)]
use std::os::unix::net::UnixStream;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use super::wire::{self, Op, Request, RequestHeader, Response, Status};
use super::{check_finite, validate_diffusion_steps, Capabilities, GuidanceOracle, LossGrad, LspSpec};
use crate::error::{Error, Result};
use crate::tensor::{Plane, Tensor};

/// Where a worker listens: `host:port` or `unix:/path/to/socket`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Tcp(String),
    Unix(PathBuf),
}

impl FromStr for Endpoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(path) = s.strip_prefix("unix:") {
            if path.is_empty() {
                return Err(Error::config("empty unix socket path"));
            }
            return Ok(Endpoint::Unix(PathBuf::from(path)));
        }
        match s.rsplit_once(':') {
            Some((host, port)) if !host.is_empty() && port.parse::<u16>().is_ok() => Ok(Endpoint::Tcp(s.to_string())),
            _ => Err(Error::config(format!("endpoint `{s}` is neither host:port nor unix:/path"))),
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Tcp(addr) => f.write_str(addr),
            Endpoint::Unix(path) => write!(f, "unix:{}", path.display()),
        }
    }
}

trait Stream: Read + Write + Send {}
impl<T: Read + Write + Send> Stream for T {}

struct Connection {
    reader: BufReader<Box<dyn Stream>>,
    writer: BufWriter<Box<dyn Stream>>,
}

/// Oracle backed by a worker process. One request is in flight at a time;
/// the connection is opened lazily and dropped after any transport error.
pub struct RemoteOracle {
    endpoint: Endpoint,
    capabilities: Capabilities,
    timeout: Option<Duration>,
    conn: Option<Connection>,
}

impl fmt::Debug for RemoteOracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemoteOracle")
            .field("endpoint", &self.endpoint)
            .field("capabilities", &self.capabilities)
            .field("connected", &self.conn.is_some())
            .finish()
    }
}

impl RemoteOracle {
    pub fn new(endpoint: Endpoint) -> Self {
        RemoteOracle {
            endpoint,
            capabilities: Capabilities::ALL,
            timeout: None,
            conn: None,
        }
    }

    pub fn with_capabilities(mut self, caps: Capabilities) -> Self {
        self.capabilities = caps;
        self
    }

    /// Read/write timeout for each request.
    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = Some(timeout);
        self
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    fn connect(&self) -> Result<Connection> {
        let (r, w): (Box<dyn Stream>, Box<dyn Stream>) = match &self.endpoint {
            Endpoint::Tcp(addr) => {
                let s = TcpStream::connect(addr)?;
                s.set_nodelay(true)?;
                s.set_read_timeout(self.timeout)?;
                s.set_write_timeout(self.timeout)?;
                (Box::new(s.try_clone()?), Box::new(s))
            }
            #[cfg(unix)]
            Endpoint::Unix(path) => {
                let s = UnixStream::connect(path)?;
                s.set_read_timeout(self.timeout)?;
                s.set_write_timeout(self.timeout)?;
                (Box::new(s.try_clone()?), Box::new(s))
            }
            #[cfg(not(unix))]
            Endpoint::Unix(_) => return Err(Error::config("unix sockets are not available on this platform")),
        };
        Ok(Connection {
            reader: BufReader::new(r),
            writer: BufWriter::new(w),
        })
    }

    fn call(&mut self, header: RequestHeader, tensors: Vec<Tensor>) -> Result<Response> {
        if self.conn.is_none() {
            self.conn = Some(self.connect()?);
        }
        let conn = self.conn.as_mut().expect("connected above");
        let op = header.op;
        let req = Request { header, tensors };
        let result = wire::write_request(&mut conn.writer, &req).and_then(|_| wire::read_response(&mut conn.reader));
        let resp = match result {
            Ok(r) => r,
            Err(e) => {
                self.conn = None;
                return Err(e);
            }
        };
        if resp.header.status == Status::Error {
            let msg = resp.header.message.unwrap_or_else(|| "unspecified".into());
            return Err(Error::Oracle(format!("{}: {msg}", op.as_str())));
        }
        if let Some([h, w]) = resp.header.resized_from {
            log::debug!("worker resized {}x{} input for {}", h, w, op.as_str());
        }
        if resp.header.losses.values().any(|v| !v.is_finite()) || resp.tensors.iter().any(|t| !t.all_finite()) {
            return Err(Error::InvalidOracle(format!("{} returned non-finite values", op.as_str())));
        }
        Ok(resp)
    }

    fn require(&self, enabled: bool, op: &'static str) -> Result<()> {
        if enabled {
            Ok(())
        } else {
            Err(Error::Unsupported(op))
        }
    }
}

fn single_tensor(mut resp: Response, op: Op, shape: [usize; 3]) -> Result<Tensor> {
    if resp.tensors.len() != 1 {
        return Err(Error::InvalidOracle(format!(
            "{} returned {} tensors, expected 1",
            op.as_str(),
            resp.tensors.len()
        )));
    }
    let t = resp.tensors.pop().expect("length checked");
    if t.shape() != shape {
        return Err(Error::InvalidOracle(format!(
            "{} returned shape {:?}, expected {:?}",
            op.as_str(),
            t.shape(),
            shape
        )));
    }
    Ok(t)
}

fn loss_grad(resp: Response, op: Op, key: &str, like: &Tensor) -> Result<LossGrad> {
    let loss = resp.loss(key)?;
    let grad = single_tensor(resp, op, like.shape())?;
    check_finite(LossGrad { loss, grad }, op.as_str())
}

fn plane_tensor(p: &Plane) -> Tensor {
    Tensor::from_vec(p.height(), p.width(), 1, p.data().to_vec()).expect("plane extent is valid")
}

impl GuidanceOracle for RemoteOracle {
    fn capabilities(&self) -> Capabilities {
        self.capabilities
    }

    fn eval_lsp(&mut self, x_hat: &Tensor, spec: &LspSpec<'_>) -> Result<LossGrad> {
        self.require(self.capabilities.lsp_grad, "eval_lsp")?;
        spec.validate(x_hat)?;
        let mut h = RequestHeader::new(Op::EvalLsp);
        h.lambda_e = Some(spec.lambda_e);
        h.lambda_sd = Some(spec.lambda_sd);
        h.seed = Some(spec.seed);
        let target = if spec.target.same_shape(x_hat) {
            spec.target.clone()
        } else {
            // λ_E = 0: the target is unused, send a placeholder of the right arity.
            x_hat.clone()
        };
        let resp = self.call(h, vec![x_hat.clone(), target])?;
        loss_grad(resp, Op::EvalLsp, "lsp", x_hat)
    }

    fn diffusion_roundtrip(&mut self, x: &Tensor, t: usize, total: usize, seed: u64) -> Result<Tensor> {
        self.require(self.capabilities.diffusion_roundtrip, "diffusion_roundtrip")?;
        validate_diffusion_steps(t, total)?;
        let mut h = RequestHeader::new(Op::DiffusionRoundtrip);
        h.t = Some(t);
        h.total_steps = Some(total);
        h.seed = Some(seed);
        let resp = self.call(h, vec![x.clone()])?;
        single_tensor(resp, Op::DiffusionRoundtrip, x.shape())
    }

    fn spatial_distance(&mut self, a: &Tensor, b: &Tensor) -> Result<Plane> {
        self.require(self.capabilities.spatial_distance, "spatial_distance")?;
        a.ensure_same_shape(b, "spatial_distance")?;
        let resp = self.call(RequestHeader::new(Op::SpatialDistance), vec![a.clone(), b.clone()])?;
        let t = single_tensor(resp, Op::SpatialDistance, [a.height(), a.width(), 1])?;
        let plane = t.channel(0);
        if plane.min() < 0.0 {
            return Err(Error::InvalidOracle("spatial_distance returned negative values".into()));
        }
        Ok(plane)
    }

    fn clip_align(&mut self, x_hat: &Tensor, prompt: &str) -> Result<LossGrad> {
        self.require(self.capabilities.clip_embed, "clip_align")?;
        let mut h = RequestHeader::new(Op::ClipAlign);
        h.prompt = Some(prompt.to_string());
        let resp = self.call(h, vec![x_hat.clone()])?;
        loss_grad(resp, Op::ClipAlign, "clip", x_hat)
    }

    fn masked_lpips(&mut self, x: &Tensor, x_hat: &Tensor, mask: &Plane) -> Result<LossGrad> {
        self.require(self.capabilities.lpips_features, "lpips_masked")?;
        x.ensure_same_shape(x_hat, "lpips_masked")?;
        x.ensure_plane_extent(mask, "lpips_masked mask")?;
        let resp = self.call(
            RequestHeader::new(Op::LpipsMasked),
            vec![x.clone(), x_hat.clone(), plane_tensor(mask)],
        )?;
        loss_grad(resp, Op::LpipsMasked, "lpips", x_hat)
    }
}
