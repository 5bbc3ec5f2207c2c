//! Length-prefixed TCP protocol that lets the attack suite audit a model
//! living in another process: the frame codec, a pipelined client and a
//! loopback stub server with transcript recording.

pub mod client;
pub mod server;
pub mod wire;

pub use client::{RemoteConfig, RemoteModel};
pub use server::{load_transcript, replay_transcript, serve_loopback, LoopbackServer, ServeOptions, TranscriptEntry};
