//! Named random sub-streams derived from one scenario seed.

use sha2::{Digest, Sha256};

/// Deterministic child seed for `(seed, label, indices)`.
pub fn substream(seed: u64, label: &str, indices: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    for i in indices {
        h.update(i.to_le_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_and_indices_separate_streams() {
        assert_eq!(substream(1, "flows", &[0]), substream(1, "flows", &[0]));
        assert_ne!(substream(1, "flows", &[0]), substream(1, "arrivals", &[0]));
        assert_ne!(substream(1, "flows", &[0]), substream(1, "flows", &[1]));
        assert_ne!(substream(1, "flows", &[0]), substream(2, "flows", &[0]));
    }
}
