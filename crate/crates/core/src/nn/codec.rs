//! Checkpoint text codec.
//!
//! A checkpoint is line-oriented UTF-8. Every tensor is written as
//! `tensor <name> <len> <base64>` where the payload is the little-endian
//! IEEE-754 encoding of each f64, so decoding reproduces values bit-exactly.
//!
//! ```text
//! momentppo-checkpoint 1
//! network policy
//! layer_sizes 2 64 64 1
//! tensor w0 128 <base64>
//! tensor b0 64 <base64>
//! ...
//! end
//! ```

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;

use super::MlpParams;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_f64s(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    STANDARD.encode(bytes)
}

pub fn decode_f64s(text: &str, expected_len: usize) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(text.trim())
        .map_err(|e| Error::Parse(format!("bad base64 payload: {e}")))?;
    if bytes.len() != expected_len * 8 {
        return Err(Error::Parse(format!(
            "payload holds {} bytes, expected {}",
            bytes.len(),
            expected_len * 8
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub(crate) fn write_tensor(out: &mut String, name: &str, values: &[f64]) {
    out.push_str(&format!("tensor {name} {} {}\n", values.len(), encode_f64s(values)));
}

/// Parses a `tensor <name> <len> <payload>` line, checking the name.
pub(crate) fn read_tensor(line: Option<&str>, name: &str) -> Result<Vec<f64>> {
    let line = line.ok_or_else(|| Error::Parse(format!("missing tensor {name}")))?;
    let mut parts = line.split_whitespace();
    let (tag, got_name, len) = (parts.next(), parts.next(), parts.next());
    if tag != Some("tensor") || got_name != Some(name) {
        return Err(Error::Parse(format!("expected tensor {name}, got `{line}`")));
    }
    let len: usize = len
        .and_then(|l| l.parse().ok())
        .ok_or_else(|| Error::Parse(format!("tensor {name} has no valid length")))?;
    let payload = parts.next().unwrap_or("");
    decode_f64s(payload, len)
}

impl MlpParams {
    /// Writes a `network <label>` section.
    pub fn write_section(&self, label: &str, out: &mut String) {
        out.push_str(&format!("network {label}\n"));
        let sizes: Vec<String> = self.layer_sizes().iter().map(usize::to_string).collect();
        out.push_str(&format!("layer_sizes {}\n", sizes.join(" ")));
        for l in 0..self.num_layers() {
            write_tensor(out, &format!("w{l}"), self.weights(l));
            write_tensor(out, &format!("b{l}"), self.biases(l));
        }
    }

    /// Reads a section written by [`MlpParams::write_section`].
    pub fn read_section<'a, I>(label: &str, lines: &mut I) -> Result<Self>
    where
        I: Iterator<Item = &'a str>,
    {
        let header = lines.next().unwrap_or("");
        if header.trim() != format!("network {label}") {
            return Err(Error::Parse(format!("expected `network {label}`, got `{header}`")));
        }
        let sizes_line = lines.next().unwrap_or("");
        let sizes: Vec<usize> = sizes_line
            .strip_prefix("layer_sizes")
            .ok_or_else(|| Error::Parse(format!("expected layer_sizes, got `{sizes_line}`")))?
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| Error::Parse(format!("bad layer size `{s}`"))))
            .collect::<Result<_>>()?;
        let n = sizes.len().saturating_sub(1);
        let mut weights = Vec::with_capacity(n);
        let mut biases = Vec::with_capacity(n);
        for l in 0..n {
            weights.push(read_tensor(lines.next(), &format!("w{l}"))?);
            biases.push(read_tensor(lines.next(), &format!("b{l}"))?);
        }
        MlpParams::from_parts(&sizes, weights, biases)
    }

    /// Standalone single-network document.
    pub fn to_text(&self) -> String {
        let mut out = format!("momentppo-checkpoint {CHECKPOINT_VERSION}\n");
        self.write_section("main", &mut out);
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        check_header(lines.next())?;
        let p = Self::read_section("main", &mut lines)?;
        match lines.next() {
            Some("end") => Ok(p),
            other => Err(Error::Parse(format!("expected `end`, got {other:?}"))),
        }
    }
}

pub(crate) fn check_header(line: Option<&str>) -> Result<()> {
    let line = line.unwrap_or("");
    let version = line
        .strip_prefix("momentppo-checkpoint ")
        .and_then(|v| v.trim().parse::<u32>().ok())
        .ok_or_else(|| Error::Parse(format!("not a checkpoint header: `{line}`")))?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Parse(format!(
            "checkpoint version {version} unsupported (expected {CHECKPOINT_VERSION})"
        )));
    }
    Ok(())
}
