use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use tracer_core::json::to_canonical;

use crate::args::Output;

/// Writes `value` as canonical JSON, or `text` when `--pretty` was given.
pub fn emit<T: Serialize + ?Sized>(output: &Output, value: &T, text: impl FnOnce() -> String) -> Result<()> {
    let bytes = if output.pretty {
        let mut t = text();
        if !t.ends_with('\n') {
            t.push('\n');
        }
        t.into_bytes()
    } else {
        to_canonical(value)?
    };
    write_to(output.out.as_deref(), &bytes)
}

pub fn write_to(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()?;
            Ok(())
        }
    }
}

/// Canonical JSON straight to stdout.
pub fn print_json<T: Serialize + ?Sized>(value: &T) -> Result<()> {
    write_to(None, &to_canonical(value)?)
}
