//! In-process stub server over a [`DenoiserModel`], used as a test double and
//! as the generator of golden transcripts.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};

use mofit_core::diffusion::NoiseSchedule;
use mofit_core::nn::DenoiserModel;
use mofit_core::oracle::{GradTarget, LocalOracle, LossOracle};
use mofit_core::{Error, Result};

use crate::wire::{self, Frame, Op, Reply, Request};

/// Answers one frame. Never fails: problems become error frames.
pub fn handle(oracle: &dyn LossOracle, frame: &Frame) -> Frame {
    let id = frame.header.id;
    if frame.header.op == Some(Op::Hello) {
        return wire::hello_reply(id, oracle.info());
    }
    match evaluate(oracle, frame) {
        Ok(r) => r.to_frame(),
        Err(e) => wire::error_reply(id, &e.to_string()),
    }
}

fn evaluate(oracle: &dyn LossOracle, frame: &Frame) -> Result<Reply> {
    let req = Request::from_frame(frame)?;
    let info = oracle.info();
    if req.shape != info.image_shape {
        return Err(Error::Protocol(format!(
            "image shape {:?} does not match the model's {:?}",
            req.shape, info.image_shape
        )));
    }
    let cond = req.cond.as_deref();
    let s = info.image_shape;
    let image_shape = vec![s.height, s.width, s.channels];
    let (loss, grad) = match req.op {
        Op::CondLossOnly | Op::UncondLossOnly => (oracle.loss(&req.x, cond, req.t, &req.eps)?, None),
        Op::UncondLossGradWrtImage | Op::CondLossGradWrtImage => {
            let (l, g) = oracle.loss_grad(&req.x, cond, req.t, &req.eps, GradTarget::Image)?;
            (l, Some((image_shape, g)))
        }
        Op::CondLossGradWrtCondition => {
            let (l, g) = oracle.loss_grad(&req.x, cond, req.t, &req.eps, GradTarget::Condition)?;
            (l, Some((vec![g.len()], g)))
        }
        Op::Hello => unreachable!("handled by caller"),
    };
    Ok(Reply { id: req.id, loss, grad })
}

/// One request/response exchange, both as hex of the full frame bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub request: String,
    pub response: String,
}

#[derive(Debug, Default, Clone)]
pub struct ServeOptions {
    /// Append every exchange to this JSON-lines file.
    pub record: Option<PathBuf>,
}

pub struct LoopbackServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl LoopbackServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn endpoint(&self) -> String {
        self.addr.to_string()
    }

    /// Blocks until the accept loop ends.
    pub fn join(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop_accepting();
    }

    fn stop_accepting(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the blocking accept
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for LoopbackServer {
    fn drop(&mut self) {
        if self.accept.is_some() {
            self.stop_accepting();
        }
    }
}

type Recorder = Arc<Mutex<BufWriter<File>>>;

/// Starts serving `model` on `endpoint` (use port 0 for an ephemeral port).
/// Each connection is served on its own thread, requests in arrival order.
pub fn serve_loopback(
    model: DenoiserModel,
    schedule: NoiseSchedule,
    endpoint: &str,
    opts: ServeOptions,
) -> Result<LoopbackServer> {
    let listener = TcpListener::bind(endpoint).map_err(|e| Error::Transport(format!("bind {endpoint}: {e}")))?;
    let addr = listener.local_addr()?;
    let recorder: Option<Recorder> = match &opts.record {
        Some(p) => {
            let f = OpenOptions::new().create(true).append(true).open(p)?;
            Some(Arc::new(Mutex::new(BufWriter::new(f))))
        }
        None => None,
    };
    let shared = Arc::new((model, schedule));
    let stop = Arc::new(AtomicBool::new(false));
    let stop2 = stop.clone();
    let accept = std::thread::spawn(move || {
        for conn in listener.incoming() {
            if stop2.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = conn else { continue };
            let shared = shared.clone();
            let rec = recorder.clone();
            std::thread::spawn(move || {
                let oracle = LocalOracle::new(&shared.0, &shared.1);
                if let Err(e) = serve_connection(&oracle, stream, rec) {
                    log::debug!("connection ended: {e}");
                }
            });
        }
    });
    log::info!("oracle stub listening on {addr}");
    Ok(LoopbackServer {
        addr,
        stop,
        accept: Some(accept),
    })
}

fn serve_connection(oracle: &dyn LossOracle, stream: TcpStream, rec: Option<Recorder>) -> Result<()> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    while let Some((frame, raw)) = wire::read_frame(&mut reader)? {
        let reply = handle(oracle, &frame);
        let bytes = reply.encode()?;
        writer.write_all(&bytes)?;
        writer.flush()?;
        if let Some(r) = &rec {
            let entry = TranscriptEntry {
                request: hex::encode(&raw),
                response: hex::encode(&bytes),
            };
            let mut w = r.lock().expect("recorder lock");
            serde_json::to_writer(&mut *w, &entry).map_err(|e| Error::Format(e.to_string()))?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
    }
    Ok(())
}

pub fn load_transcript(path: &Path) -> Result<Vec<TranscriptEntry>> {
    let f = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?);
    }
    Ok(out)
}

/// Replays every recorded request against `endpoint` over one connection and
/// checks the responses byte for byte. Returns the number of exchanges.
pub fn replay_transcript(endpoint: &str, entries: &[TranscriptEntry]) -> Result<usize> {
    let stream = TcpStream::connect(endpoint).map_err(|e| Error::Transport(format!("{endpoint}: {e}")))?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = stream.try_clone()?;
    for (i, e) in entries.iter().enumerate() {
        let req = hex::decode(&e.request).map_err(|err| Error::Format(err.to_string()))?;
        writer.write_all(&req)?;
        let (_, raw) =
            wire::read_frame(&mut reader)?.ok_or_else(|| Error::Transport("server closed during replay".into()))?;
        if hex::encode(&raw) != e.response {
            return Err(Error::Protocol(format!("response {i} differs from the transcript")));
        }
    }
    let _ = stream.shutdown(Shutdown::Both);
    Ok(entries.len())
}
