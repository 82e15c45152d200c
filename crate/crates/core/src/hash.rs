//! Stable content hashes for configurations and artifacts.

use serde::Serialize;
use sha2::{Digest, Sha256};

/// First 16 hex digits of the SHA-256 of the value's JSON encoding.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("configuration serializes");
    let digest = Sha256::digest(&bytes);
    hex::encode(digest)[..16].to_string()
}
