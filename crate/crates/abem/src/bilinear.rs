//! Pairing-group abstraction over BLS12-381.
//!
//! The construction is written for a symmetric pairing; this module realizes
//! it on an asymmetric (type-3) curve. Ciphertext-side components live in G1
//! ([`LeftElement`]), key-side components in G2 ([`RightElement`]), and any
//! base that must appear on both sides of a pairing (the generator, the
//! verification base, attribute hash outputs) is carried as a
//! [`MirroredElement`]: a (g1^k, g2^k) pair sharing one discrete log.
//!
//! Attribute hashing is a domain-separated hash-to-scalar followed by
//! exponentiation of both generators, because a mirrored pair must share its
//! discrete log and independent hash-to-curve maps into G1 and G2 cannot
//! provide that. The cost is that attribute elements are not a random oracle
//! into the group; distinct attributes still map to independent-looking
//! elements under the hash-to-scalar assumption, and the shared exponent is
//! never exposed outside this module.
//!
//! Encodings are the curve's canonical compressed forms: 48 bytes (G1),
//! 96 bytes (G2), 576 bytes (GT), 32 bytes (scalars). Decoding validates:
//! off-curve, out-of-subgroup, and non-canonical inputs are rejected.

use ark_bls12_381::{Bls12_381, Fr, G1Projective, G2Projective};
use ark_ec::pairing::{Pairing, PairingOutput};
use ark_ec::Group;
use ark_ff::{Field, One, PrimeField, Zero};
use ark_serialize::{CanonicalDeserialize, CanonicalSerialize};
use sha2::{Digest, Sha512};
use std::sync::OnceLock;
use thiserror::Error;

/// Group descriptor byte recorded in every serialized object's header.
pub const GROUP_BLS12_381: u8 = 0x01;

/// Canonical encoded length of a [`Scalar`].
pub const SCALAR_BYTES: usize = 32;
/// Canonical compressed length of a [`LeftElement`] (G1).
pub const LEFT_ELEMENT_BYTES: usize = 48;
/// Canonical compressed length of a [`RightElement`] (G2).
pub const RIGHT_ELEMENT_BYTES: usize = 96;
/// Canonical compressed length of a [`TargetElement`] (GT).
pub const TARGET_ELEMENT_BYTES: usize = 576;

const DOMAIN_HASH_MESSAGE: &[u8] = b"ABEM/Hm";
const DOMAIN_HASH_ATTRIBUTE: &[u8] = b"ABEM/Ha";

/// Decoding failure for group elements and scalars.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ElementError {
    #[error("wrong encoding length: expected {expected} bytes, got {got}")]
    WrongLength { expected: usize, got: usize },
    #[error("invalid element encoding (off-curve, out-of-subgroup, or non-canonical)")]
    InvalidEncoding,
}

/// The process randomness source failed; surfaced instead of panicking so
/// callers can abort key or ciphertext generation cleanly.
#[derive(Debug, Error)]
#[error("randomness source failure: {0}")]
pub struct RandomnessError(#[from] rand::Error);

/// Attribute string rejected during normalization.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum AttributeError {
    #[error("attribute is empty after trimming")]
    Empty,
}

/// Element of the scalar field (exponents, shares, hash outputs).
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Scalar(pub(crate) Fr);

impl Scalar {
    pub fn zero() -> Self {
        Scalar(Fr::zero())
    }

    pub fn one() -> Self {
        Scalar(Fr::one())
    }

    pub fn from_u64(v: u64) -> Self {
        Scalar(Fr::from(v))
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    /// Multiplicative inverse; `None` for zero.
    pub fn inverse(&self) -> Option<Self> {
        self.0.inverse().map(Scalar)
    }

    pub fn encode(&self) -> [u8; SCALAR_BYTES] {
        let mut buf = [0u8; SCALAR_BYTES];
        self.0
            .serialize_compressed(&mut buf[..])
            .expect("fixed-size buffer matches compressed size");
        buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ElementError> {
        if bytes.len() != SCALAR_BYTES {
            return Err(ElementError::WrongLength {
                expected: SCALAR_BYTES,
                got: bytes.len(),
            });
        }
        Fr::deserialize_compressed(bytes)
            .map(Scalar)
            .map_err(|_| ElementError::InvalidEncoding)
    }
}

impl std::ops::Add for Scalar {
    type Output = Scalar;
    fn add(self, rhs: Scalar) -> Scalar {
        Scalar(self.0 + rhs.0)
    }
}

impl std::ops::Sub for Scalar {
    type Output = Scalar;
    fn sub(self, rhs: Scalar) -> Scalar {
        Scalar(self.0 - rhs.0)
    }
}

impl std::ops::Mul for Scalar {
    type Output = Scalar;
    fn mul(self, rhs: Scalar) -> Scalar {
        Scalar(self.0 * rhs.0)
    }
}

impl std::ops::Neg for Scalar {
    type Output = Scalar;
    fn neg(self) -> Scalar {
        Scalar(-self.0)
    }
}

/// G1 element; ciphertext-side components.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct LeftElement(pub(crate) G1Projective);

/// G2 element; key-side components.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct RightElement(pub(crate) G2Projective);

/// GT element; pairing outputs and blinding factors.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct TargetElement(pub(crate) PairingOutput<Bls12_381>);

macro_rules! group_element_impl {
    ($name:ident, $inner:ty, $len:expr) => {
        impl $name {
            pub fn generator() -> Self {
                $name(<$inner>::generator())
            }

            pub fn identity() -> Self {
                $name(<$inner>::zero())
            }

            pub fn is_identity(&self) -> bool {
                self.0.is_zero()
            }

            /// Group operation (written multiplicatively).
            pub fn mul(&self, other: &Self) -> Self {
                $name(self.0 + other.0)
            }

            /// Quotient `self / other`.
            pub fn div(&self, other: &Self) -> Self {
                $name(self.0 - other.0)
            }

            /// Exponentiation by a scalar.
            pub fn pow(&self, e: &Scalar) -> Self {
                $name(self.0 * e.0)
            }

            pub fn encode(&self) -> [u8; $len] {
                let mut buf = [0u8; $len];
                self.0
                    .serialize_compressed(&mut buf[..])
                    .expect("fixed-size buffer matches compressed size");
                buf
            }

            pub fn decode(bytes: &[u8]) -> Result<Self, ElementError> {
                if bytes.len() != $len {
                    return Err(ElementError::WrongLength {
                        expected: $len,
                        got: bytes.len(),
                    });
                }
                <$inner>::deserialize_compressed(bytes)
                    .map($name)
                    .map_err(|_| ElementError::InvalidEncoding)
            }
        }
    };
}

group_element_impl!(LeftElement, G1Projective, LEFT_ELEMENT_BYTES);
group_element_impl!(RightElement, G2Projective, RIGHT_ELEMENT_BYTES);

impl TargetElement {
    /// e(g1, g2); cached after first use.
    pub fn generator() -> Self {
        static GEN: OnceLock<PairingOutput<Bls12_381>> = OnceLock::new();
        TargetElement(*GEN.get_or_init(|| {
            Bls12_381::pairing(G1Projective::generator(), G2Projective::generator())
        }))
    }

    pub fn identity() -> Self {
        TargetElement(PairingOutput::zero())
    }

    pub fn is_identity(&self) -> bool {
        self.0.is_zero()
    }

    /// Group operation (written multiplicatively).
    pub fn mul(&self, other: &Self) -> Self {
        TargetElement(self.0 + other.0)
    }

    /// Quotient `self / other`.
    pub fn div(&self, other: &Self) -> Self {
        TargetElement(self.0 - other.0)
    }

    /// Exponentiation by a scalar.
    pub fn pow(&self, e: &Scalar) -> Self {
        TargetElement(self.0 * e.0)
    }

    pub fn encode(&self) -> [u8; TARGET_ELEMENT_BYTES] {
        let mut buf = [0u8; TARGET_ELEMENT_BYTES];
        self.0
            .serialize_compressed(&mut buf[..])
            .expect("fixed-size buffer matches compressed size");
        buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ElementError> {
        if bytes.len() != TARGET_ELEMENT_BYTES {
            return Err(ElementError::WrongLength {
                expected: TARGET_ELEMENT_BYTES,
                got: bytes.len(),
            });
        }
        PairingOutput::deserialize_compressed(bytes)
            .map(TargetElement)
            .map_err(|_| ElementError::InvalidEncoding)
    }
}

/// A (g1^k, g2^k) pair sharing one discrete log, for bases that appear on
/// both sides of a pairing.
///
/// `log` is the shared exponent when this process computed it. It is
/// transient working state: equality ignores it and the codec never writes
/// it, so it cannot leak through serialized objects.
#[derive(Clone, Copy, Debug)]
pub struct MirroredElement {
    pub left: LeftElement,
    pub right: RightElement,
    log: Option<Scalar>,
}

impl PartialEq for MirroredElement {
    fn eq(&self, other: &Self) -> bool {
        self.left == other.left && self.right == other.right
    }
}

impl Eq for MirroredElement {}

impl MirroredElement {
    /// The generator pair (g1, g2) with log 1.
    pub fn generator() -> Self {
        MirroredElement {
            left: LeftElement::generator(),
            right: RightElement::generator(),
            log: Some(Scalar::one()),
        }
    }

    /// (g1^k, g2^k) with the log retained.
    pub fn from_scalar(k: &Scalar) -> Self {
        MirroredElement {
            left: LeftElement::generator().pow(k),
            right: RightElement::generator().pow(k),
            log: Some(*k),
        }
    }

    /// Reassembles a pair from decoded halves; no log is known.
    pub fn from_parts(left: LeftElement, right: RightElement) -> Self {
        MirroredElement {
            left,
            right,
            log: None,
        }
    }

    pub fn log(&self) -> Option<Scalar> {
        self.log
    }

    /// Copy with the transient log dropped.
    pub fn without_log(&self) -> Self {
        MirroredElement {
            left: self.left,
            right: self.right,
            log: None,
        }
    }

    /// Raises both halves, keeping the log coherent when known.
    pub fn pow(&self, e: &Scalar) -> Self {
        MirroredElement {
            left: self.left.pow(e),
            right: self.right.pow(e),
            log: self.log.map(|k| k * *e),
        }
    }

    /// Checks e(left, g2) == e(g1, right), i.e. both halves share a log.
    pub fn is_consistent(&self) -> bool {
        pair(&self.left, &RightElement::generator()) == pair(&LeftElement::generator(), &self.right)
    }
}

/// The bilinear pairing e: G1 x G2 -> GT.
pub fn pair(left: &LeftElement, right: &RightElement) -> TargetElement {
    TargetElement(Bls12_381::pairing(left.0, right.0))
}

fn hash_to_scalar(domain: &[u8], input: &[u8]) -> Scalar {
    let mut h = Sha512::new();
    h.update(domain);
    h.update([0u8]);
    h.update(input);
    // 64-byte wide reduction keeps the output statistically uniform mod p.
    Scalar(Fr::from_be_bytes_mod_order(&h.finalize()))
}

/// Message hash H_m: bytes -> scalar, domain-separated from attribute hashing.
pub fn hash_message(message: &[u8]) -> Scalar {
    hash_to_scalar(DOMAIN_HASH_MESSAGE, message)
}

/// Domain-separated scalar derivation for internal plumbing (e.g. the
/// byzantine proxy's deterministic perturbation). Callers supply their own
/// domain tag, distinct from the message/attribute domains.
pub(crate) fn derive_scalar(domain: &[u8], input: &[u8]) -> Scalar {
    hash_to_scalar(domain, input)
}

/// Trims whitespace and applies Unicode NFC. Attribute strings on keys and in
/// policies must agree byte-for-byte after this.
pub fn normalize_attribute(attr: &str) -> Result<String, AttributeError> {
    use unicode_normalization::UnicodeNormalization;
    let normalized: String = attr.trim().nfc().collect();
    if normalized.is_empty() {
        return Err(AttributeError::Empty);
    }
    Ok(normalized)
}

/// Attribute hash H_a: attribute string -> mirrored element, via normalize,
/// hash-to-scalar, and exponentiation of both generators.
pub fn attribute_element(attr: &str) -> Result<MirroredElement, AttributeError> {
    let normalized = normalize_attribute(attr)?;
    let k = hash_to_scalar(DOMAIN_HASH_ATTRIBUTE, normalized.as_bytes());
    Ok(MirroredElement::from_scalar(&k))
}

/// Uniform scalar from the given source; randomness failures are surfaced.
pub fn random_scalar<R: rand::RngCore + rand::CryptoRng + ?Sized>(
    rng: &mut R,
) -> Result<Scalar, RandomnessError> {
    let mut wide = [0u8; 64];
    rng.try_fill_bytes(&mut wide)?;
    Ok(Scalar(Fr::from_be_bytes_mod_order(&wide)))
}

/// Uniform nonzero scalar (rejection sampling; zero occurs with probability
/// ~2^-255, so the loop is effectively one iteration).
pub fn random_nonzero_scalar<R: rand::RngCore + rand::CryptoRng + ?Sized>(
    rng: &mut R,
) -> Result<Scalar, RandomnessError> {
    loop {
        let s = random_scalar(rng)?;
        if !s.is_zero() {
            return Ok(s);
        }
    }
}
