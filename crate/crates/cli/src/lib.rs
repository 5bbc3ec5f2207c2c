//! Command-line orchestration for the membership-inference toolkit: run
//! configuration, artifact persistence and the experiment pipelines.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod io;

pub use commands::Run;
pub use config::RunConfig;

use mofit_core::Error;

/// Process exit code for an error: 2 for configuration problems, 3 for
/// numerical failures, 1 otherwise.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 2,
        Error::NonFinite { .. } => 3,
        _ => 1,
    }
}

/// Splits `--section.key=value` flags into (key, value) pairs.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>, Error> {
    args.iter()
        .map(|a| {
            let body = a
                .strip_prefix("--")
                .ok_or_else(|| Error::config(a.as_str(), "overrides look like --section.key=value"))?;
            let (k, v) = body
                .split_once('=')
                .ok_or_else(|| Error::config(body, "override is missing `=value`"))?;
            if k.is_empty() || k.split('.').any(str::is_empty) {
                return Err(Error::config(k, "malformed override key"));
            }
            Ok((k.to_string(), v.to_string()))
        })
        .collect()
}
