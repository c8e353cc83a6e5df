//! Data-encapsulation layer: the pairing algebra blinds a random target-group
//! payload key; this module turns that key into a symmetric key (HKDF-SHA256
//! over its canonical encoding, domain-separated salt) and carries the actual
//! payload under ChaCha20Poly1305. Blob layout: 12-byte nonce, then the AEAD
//! ciphertext (tag included).

use crate::bilinear::{RandomnessError, TargetElement};
use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use hkdf::Hkdf;
use sha2::Sha256;

pub(crate) const NONCE_BYTES: usize = 12;
pub(crate) const TAG_BYTES: usize = 16;

const KDF_SALT: &[u8] = b"ABEM/KDF";

fn cipher_for(payload_key: &TargetElement) -> ChaCha20Poly1305 {
    let hk = Hkdf::<Sha256>::new(Some(KDF_SALT), &payload_key.encode());
    let mut okm = [0u8; 32];
    hk.expand(&[], &mut okm)
        .expect("32 bytes is a valid HKDF-SHA256 output length");
    ChaCha20Poly1305::new(Key::from_slice(&okm))
}

pub(crate) fn seal<R: rand::RngCore + rand::CryptoRng + ?Sized>(
    payload_key: &TargetElement,
    plaintext: &[u8],
    rng: &mut R,
) -> Result<Vec<u8>, RandomnessError> {
    let mut nonce = [0u8; NONCE_BYTES];
    rng.try_fill_bytes(&mut nonce)?;
    let sealed = cipher_for(payload_key)
        .encrypt(Nonce::from_slice(&nonce), plaintext)
        .expect("in-memory AEAD encryption cannot fail");
    let mut blob = Vec::with_capacity(NONCE_BYTES + sealed.len());
    blob.extend_from_slice(&nonce);
    blob.extend_from_slice(&sealed);
    Ok(blob)
}

/// `None` on any authentication failure, including blobs too short to carry
/// a nonce and tag.
pub(crate) fn open(payload_key: &TargetElement, blob: &[u8]) -> Option<Vec<u8>> {
    if blob.len() < NONCE_BYTES + TAG_BYTES {
        return None;
    }
    cipher_for(payload_key)
        .decrypt(
            Nonce::from_slice(&blob[..NONCE_BYTES]),
            &blob[NONCE_BYTES..],
        )
        .ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bilinear::Scalar;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn key(n: u64) -> TargetElement {
        TargetElement::generator().pow(&Scalar::from_u64(n))
    }

    #[test]
    fn seal_open_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for msg in [&b""[..], b"x", &[0u8; 4096]] {
            let blob = seal(&key(5), msg, &mut rng).unwrap();
            assert_eq!(open(&key(5), &blob).unwrap(), msg);
        }
    }

    #[test]
    fn wrong_key_fails() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let blob = seal(&key(5), b"payload", &mut rng).unwrap();
        assert!(open(&key(6), &blob).is_none());
    }

    #[test]
    fn any_single_bit_flip_fails() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let blob = seal(&key(5), b"payload", &mut rng).unwrap();
        for i in 0..blob.len() {
            let mut tampered = blob.clone();
            tampered[i] ^= 1;
            assert!(open(&key(5), &tampered).is_none(), "bit flip at {i}");
        }
    }

    #[test]
    fn short_blobs_fail_without_panic() {
        for n in 0..NONCE_BYTES + TAG_BYTES {
            assert!(open(&key(5), &vec![0u8; n]).is_none());
        }
    }

    #[test]
    fn nonces_are_fresh() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let a = seal(&key(5), b"m", &mut rng).unwrap();
        let b = seal(&key(5), b"m", &mut rng).unwrap();
        assert_ne!(a[..NONCE_BYTES], b[..NONCE_BYTES]);
        assert_ne!(a, b);
    }
}
