//! Stable 64-bit FNV-1a hashing for run identifiers and corpus fingerprints.

const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// Hex fingerprint of a corpus' canonical serialisation.
pub fn corpus_fingerprint(corpus: &crate::corpus::Corpus) -> String {
    let mut buf = Vec::new();
    corpus
        .write_jsonl(&mut buf)
        .expect("writing to a Vec cannot fail");
    format!("{:016x}", fnv1a64(&buf))
}
