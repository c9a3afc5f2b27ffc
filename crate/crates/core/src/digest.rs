//! Canonical serialization and content digests.
//!
//! Every digest in the crate is the lowercase hex SHA-256 of a canonical JSON
//! rendering: object keys sorted, no insignificant whitespace, floats in
//! shortest round-trip form. `serde_json::Value` keeps objects in a `BTreeMap`
//! (the `preserve_order` feature must stay off), which gives the key order.

use serde::Serialize;
use sha2::{Digest as _, Sha256};

/// Renders `value` as canonical JSON.
pub fn canonical_json<T: Serialize + ?Sized>(value: &T) -> String {
    // Round-tripping through `Value` sorts keys of derived structs too.
    let value = serde_json::to_value(value).expect("value serializes to JSON");
    serde_json::to_string(&value).expect("JSON value renders")
}

/// SHA-256 of `bytes` as lowercase hex.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of the canonical JSON form of `value`.
pub fn digest_of<T: Serialize + ?Sized>(value: &T) -> String {
    sha256_hex(canonical_json(value).as_bytes())
}
