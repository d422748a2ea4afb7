//! Content hash used as the fixture key.
//!
//! SHA-256 over a domain tag followed by `system_text`, `user_text` and
//! `model_id`, in that order, each encoded as its UTF-8 byte length (u64,
//! little endian) and then its bytes. Sampling settings are deliberately not
//! part of the key. The digest is rendered as lowercase hex.

use sha2::{Digest, Sha256};

use super::CompletionRequest;

const DOMAIN_TAG: &[u8] = b"prompt-logic/request/v1\n";

pub fn request_hash(request: &CompletionRequest) -> String {
    let mut hasher = Sha256::new();
    hasher.update(DOMAIN_TAG);
    for field in [&request.system_text, &request.user_text, &request.model_id] {
        hasher.update((field.len() as u64).to_le_bytes());
        hasher.update(field.as_bytes());
    }
    hex::encode(hasher.finalize())
}
