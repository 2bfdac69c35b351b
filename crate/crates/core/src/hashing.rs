//! Stable hashing helpers. Values must not change across processes or
//! toolchains, so everything goes through SHA-256.

use sha2::{Digest, Sha256};

/// Lowercase hex SHA-256 of the concatenated parts, each followed by a NUL.
pub fn stable_hex(parts: &[&str]) -> String {
    let digest = digest(parts);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// First eight digest bytes as a little-endian `u64`.
pub fn stable_u64(parts: &[&str]) -> u64 {
    let digest = digest(parts);
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 has 32 bytes"))
}

/// Derives a child seed from a parent seed and a label.
pub fn derive_seed(seed: u64, parts: &[&str]) -> u64 {
    let seed = seed.to_string();
    let mut all = vec![seed.as_str()];
    all.extend_from_slice(parts);
    stable_u64(&all)
}

fn digest(parts: &[&str]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part.as_bytes());
        hasher.update([0u8]);
    }
    hasher.finalize().into()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        // sha256("abc\0")
        assert_eq!(stable_hex(&["abc"]), "dc1114cd074914bd872cc1f9a23ec910ea2203bc79779ab2e17da25782a624fc");
        assert_ne!(stable_hex(&["ab", "c"]), stable_hex(&["a", "bc"]));
    }

    #[test]
    fn seeds_are_stable_and_distinct() {
        assert_eq!(derive_seed(42, &["paris"]), derive_seed(42, &["paris"]));
        assert_ne!(derive_seed(42, &["paris"]), derive_seed(43, &["paris"]));
        assert_ne!(derive_seed(42, &["paris"]), derive_seed(42, &["rome"]));
    }
}
