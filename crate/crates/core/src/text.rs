//! Tokenization and stable hashing shared by retrieval, features and metrics.

/// Lowercases and splits on any non-alphanumeric character.
///
/// Punctuation is dropped, so `"Paris!"` and `"paris"` produce the same token.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Whitespace-joined token stream, used for exact-match comparisons.
pub fn normalize(text: &str) -> String {
    tokenize(text).join(" ")
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a. Stable across platforms and toolchains, unlike `DefaultHasher`.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// Mixes a master seed with a label into an independent seed.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut bytes = master.to_le_bytes().to_vec();
    bytes.extend_from_slice(label.as_bytes());
    splitmix(fnv1a(&bytes))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_lowercases_and_strips_punctuation() {
        assert_eq!(
            tokenize("What is the Capital of France?"),
            vec!["what", "is", "the", "capital", "of", "france"]
        );
        assert!(tokenize("  ?!  ").is_empty());
        assert_eq!(tokenize("Zürich's café"), vec!["zürich", "s", "café"]);
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn derived_seeds_differ_by_label() {
        assert_ne!(derive_seed(42, "split"), derive_seed(42, "rerank"));
        assert_eq!(derive_seed(42, "split"), derive_seed(42, "split"));
    }
}
