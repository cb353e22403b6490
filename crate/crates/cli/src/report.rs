use std::fmt;

use serde::Serialize;
use sha2::{Digest, Sha256};

/// An internal consistency check failed; maps to exit code 3.
#[derive(Debug)]
pub struct Invariant(pub String);

impl fmt::Display for Invariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "internal invariant violated: {}", self.0)
    }
}

impl std::error::Error for Invariant {}

/// Hex SHA-256 of the compact JSON form of `config`.
pub fn config_hash<T: Serialize>(command: &str, config: &T) -> anyhow::Result<String> {
    let mut hasher = Sha256::new();
    hasher.update(command.as_bytes());
    hasher.update([0u8]);
    hasher.update(serde_json::to_vec(config)?);
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

pub fn to_json<T: Serialize>(value: &T) -> anyhow::Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

pub fn print_json<T: Serialize>(value: &T) -> anyhow::Result<()> {
    print!("{}", to_json(value)?);
    Ok(())
}

pub fn print_json_error(message: &str, exit_code: u8, causes: &[String]) {
    let value = serde_json::json!({
        "error": message,
        "exit_code": exit_code,
        "causes": causes,
    });
    eprintln!("{value}");
}
