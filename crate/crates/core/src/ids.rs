use sha2::{Digest, Sha256};

/// Stable identifier derived from caption text.
pub fn caption_id(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    format!("c-{}", hex::encode(&digest[..6]))
}

/// Hex SHA-256 of arbitrary bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn caption_id_is_stable() {
        assert_eq!(caption_id("a photo of food"), caption_id("a photo of food"));
        assert_ne!(caption_id("a photo of food"), caption_id("a photo of pie"));
        assert_eq!(caption_id("x").len(), 14);
    }
}
