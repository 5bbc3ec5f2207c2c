//! Client for a remote loss oracle.
//!
//! One TCP connection carries up to `max_in_flight` outstanding requests.
//! A reader thread matches responses to waiting callers by request id, so
//! the server may answer out of order. Transport failures tear the
//! connection down and the affected calls retry on a fresh one; protocol
//! errors (malformed or mismatched responses) are returned immediately.

use std::collections::HashMap;
use std::io::{BufReader, BufWriter, Write};
use std::net::{Shutdown, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use mofit_core::oracle::{GradTarget, LossOracle, OracleInfo, PROTOCOL_VERSION};
use mofit_core::{Error, Result};

use crate::wire::{self, Frame, Op, Reply, Request};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub max_in_flight: usize,
    /// Extra attempts after a transport failure.
    pub retries: usize,
    pub timeout_ms: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            max_in_flight: 4,
            retries: 3,
            timeout_ms: 30_000,
        }
    }
}

type Pending = Mutex<HashMap<u64, Sender<Result<Frame>>>>;

struct Conn {
    writer: Mutex<BufWriter<TcpStream>>,
    pending: Arc<Pending>,
    broken: Arc<AtomicBool>,
    stream: TcpStream,
}

impl Conn {
    fn open(endpoint: &str, timeout: Duration) -> Result<(Self, OracleInfo)> {
        let stream = TcpStream::connect(endpoint).map_err(|e| Error::Transport(format!("{endpoint}: {e}")))?;
        stream.set_nodelay(true)?;
        let mut reader = BufReader::new(stream.try_clone()?);
        let mut writer = BufWriter::new(stream.try_clone()?);
        stream.set_read_timeout(Some(timeout))?;
        wire::write_frame(&mut writer, &wire::hello(0, PROTOCOL_VERSION))?;
        let (reply, _) =
            wire::read_frame(&mut reader)?.ok_or_else(|| Error::Transport("server closed during handshake".into()))?;
        let info = wire::parse_hello_reply(&reply)?;
        stream.set_read_timeout(None)?;

        let pending: Arc<Pending> = Arc::new(Mutex::new(HashMap::new()));
        let broken = Arc::new(AtomicBool::new(false));
        let (p2, b2) = (pending.clone(), broken.clone());
        std::thread::spawn(move || {
            let err = loop {
                match wire::read_frame(&mut reader) {
                    Ok(Some((frame, _))) => {
                        let tx = p2.lock().expect("pending lock").remove(&frame.header.id);
                        match tx {
                            Some(tx) => {
                                let _ = tx.send(Ok(frame));
                            }
                            None => log::warn!("response for unknown request id {}", frame.header.id),
                        }
                    }
                    Ok(None) => break Error::Transport("server closed the connection".into()),
                    Err(e) => break e,
                }
            };
            b2.store(true, Ordering::SeqCst);
            for (_, tx) in p2.lock().expect("pending lock").drain() {
                let _ = tx.send(Err(Error::Transport(err.to_string())));
            }
        });
        Ok((
            Self {
                writer: Mutex::new(writer),
                pending,
                broken,
                stream,
            },
            info,
        ))
    }

    fn kill(&self) {
        self.broken.store(true, Ordering::SeqCst);
        let _ = self.stream.shutdown(Shutdown::Both);
    }
}

impl Drop for Conn {
    fn drop(&mut self) {
        let _ = self.stream.shutdown(Shutdown::Both);
    }
}

/// A model behind the oracle protocol, usable wherever a [`LossOracle`] is.
pub struct RemoteModel {
    endpoint: String,
    cfg: RemoteConfig,
    info: OracleInfo,
    conn: Mutex<Option<Arc<Conn>>>,
    next_id: AtomicU64,
    slots: (Mutex<usize>, Condvar),
}

impl RemoteModel {
    /// Connects and performs the handshake. A protocol-version mismatch is a
    /// configuration error and is not retried.
    pub fn connect(endpoint: &str, cfg: RemoteConfig) -> Result<Self> {
        if cfg.max_in_flight == 0 {
            return Err(Error::config("oracle.max_in_flight", "must be at least 1"));
        }
        let timeout = Duration::from_millis(cfg.timeout_ms.max(1));
        let mut last = None;
        for _ in 0..=cfg.retries {
            match Conn::open(endpoint, timeout) {
                Ok((conn, info)) => {
                    if info.version != PROTOCOL_VERSION {
                        return Err(Error::config(
                            "oracle.version",
                            format!("server speaks protocol {}, client {PROTOCOL_VERSION}", info.version),
                        ));
                    }
                    return Ok(Self {
                        endpoint: endpoint.to_string(),
                        cfg,
                        info,
                        conn: Mutex::new(Some(Arc::new(conn))),
                        next_id: AtomicU64::new(1),
                        slots: (Mutex::new(0), Condvar::new()),
                    });
                }
                Err(e @ Error::Transport(_)) => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }

    fn connection(&self) -> Result<Arc<Conn>> {
        let mut g = self.conn.lock().expect("conn lock");
        if let Some(c) = g.as_ref() {
            if !c.broken.load(Ordering::SeqCst) {
                return Ok(c.clone());
            }
        }
        let (c, info) = Conn::open(&self.endpoint, Duration::from_millis(self.cfg.timeout_ms.max(1)))?;
        if info != self.info {
            return Err(Error::Protocol(
                "server changed its model description on reconnect".into(),
            ));
        }
        let c = Arc::new(c);
        *g = Some(c.clone());
        Ok(c)
    }

    fn acquire(&self) {
        let (m, cv) = &self.slots;
        let mut n = m.lock().expect("slot lock");
        while *n >= self.cfg.max_in_flight {
            n = cv.wait(n).expect("slot lock");
        }
        *n += 1;
    }

    fn release(&self) {
        let (m, cv) = &self.slots;
        *m.lock().expect("slot lock") -= 1;
        cv.notify_one();
    }

    fn attempt(&self, req: &Request) -> Result<Frame> {
        let conn = self.connection()?;
        let (tx, rx) = mpsc::channel();
        conn.pending.lock().expect("pending lock").insert(req.id, tx);
        let sent = {
            let mut w = conn.writer.lock().expect("writer lock");
            wire::write_frame(&mut *w, &req.to_frame())
        };
        if let Err(e) = sent {
            conn.pending.lock().expect("pending lock").remove(&req.id);
            conn.kill();
            return Err(e);
        }
        match rx.recv_timeout(Duration::from_millis(self.cfg.timeout_ms.max(1))) {
            Ok(r) => r,
            Err(RecvTimeoutError::Timeout) => {
                conn.pending.lock().expect("pending lock").remove(&req.id);
                conn.kill();
                Err(Error::Transport(format!("request {} timed out", req.id)))
            }
            Err(RecvTimeoutError::Disconnected) => Err(Error::Transport("connection lost".into())),
        }
    }

    fn call(&self, op: Op, x: &[f64], cond: Option<&[f64]>, t: usize, eps: &[f64]) -> Result<Reply> {
        let n = self.info.image_shape.len();
        if x.len() != n || eps.len() != n {
            return Err(Error::contract(format!("image payloads must have {n} elements")));
        }
        if let Some(c) = cond {
            if c.len() != self.info.cond_dim {
                return Err(Error::contract(format!(
                    "condition has {} entries, model expects {}",
                    c.len(),
                    self.info.cond_dim
                )));
            }
        }
        self.acquire();
        let mut last = Error::Transport("no attempt made".into());
        let mut result = None;
        for attempt in 0..=self.cfg.retries {
            // fresh id per attempt so a late answer to a dead attempt is ignored
            let req = Request {
                id: self.next_id.fetch_add(1, Ordering::SeqCst),
                op,
                t,
                shape: self.info.image_shape,
                x: x.to_vec(),
                cond: cond.map(|c| c.to_vec()),
                eps: eps.to_vec(),
            };
            match self.attempt(&req) {
                Ok(frame) => {
                    result = Some(Reply::from_frame(&frame));
                    break;
                }
                Err(e @ Error::Transport(_)) => {
                    log::debug!("attempt {attempt} for request {} failed: {e}", req.id);
                    last = e;
                }
                Err(e) => {
                    result = Some(Err(e));
                    break;
                }
            }
        }
        self.release();
        result.unwrap_or(Err(last))
    }

    fn expect_grad(&self, r: Reply, target: GradTarget) -> Result<(f64, Vec<f64>)> {
        let s = self.info.image_shape;
        let want = match target {
            GradTarget::Image => vec![s.height, s.width, s.channels],
            GradTarget::Condition => vec![self.info.cond_dim],
        };
        match r.grad {
            Some((shape, g)) if shape == want && g.len() == want.iter().product::<usize>() => Ok((r.loss, g)),
            Some((shape, _)) => Err(Error::Protocol(format!(
                "gradient shape {shape:?} for request {}, expected {want:?}",
                r.id
            ))),
            None => Err(Error::Protocol(format!("response {} carries no gradient", r.id))),
        }
    }
}

impl LossOracle for RemoteModel {
    fn info(&self) -> &OracleInfo {
        &self.info
    }

    fn loss(&self, x: &[f64], cond: Option<&[f64]>, t: usize, eps: &[f64]) -> Result<f64> {
        let op = if cond.is_some() {
            Op::CondLossOnly
        } else {
            Op::UncondLossOnly
        };
        let r = self.call(op, x, cond, t, eps)?;
        if r.grad.is_some() {
            return Err(Error::Protocol(format!("unexpected gradient in response {}", r.id)));
        }
        Ok(r.loss)
    }

    fn loss_grad(
        &self,
        x: &[f64],
        cond: Option<&[f64]>,
        t: usize,
        eps: &[f64],
        target: GradTarget,
    ) -> Result<(f64, Vec<f64>)> {
        let op = match (target, cond.is_some()) {
            (GradTarget::Image, false) => Op::UncondLossGradWrtImage,
            (GradTarget::Image, true) => Op::CondLossGradWrtImage,
            (GradTarget::Condition, true) => Op::CondLossGradWrtCondition,
            (GradTarget::Condition, false) => {
                return Err(Error::contract(
                    "gradient with respect to the null condition is undefined",
                ))
            }
        };
        let r = self.call(op, x, cond, t, eps)?;
        self.expect_grad(r, target)
    }
}

impl Drop for RemoteModel {
    fn drop(&mut self) {
        if let Some(c) = self.conn.lock().expect("conn lock").take() {
            let _ = c.writer.lock().map(|mut w| w.flush());
            c.kill();
        }
    }
}
