//! Ciphertext-policy attribute-based encryption over a type-3 pairing, with
//! three additions on top of the classic threshold-tree construction:
//!
//! * **Encryption machines**: the tree-dependent exponentiations of an
//!   encryption are precomputed once into a reusable [`scheme::EncryptionMachine`];
//!   each subsequent encryption under the same policy re-randomizes the cached
//!   elements instead of rebuilding them, so the per-message cost no longer
//!   scales with the policy size.
//! * **Verifiable outsourced decryption**: a decryption key can be blinded
//!   into a transform key handed to an untrusted proxy. The proxy does the
//!   pairing-heavy work and returns a partial decryption; the key holder
//!   finishes with two pairings and can detect a cheating proxy.
//! * **Canonical file and wire formats**: every object serializes to a
//!   deterministic tagged envelope ([`codec`]), and the proxy speaks a small
//!   length-prefixed TCP protocol ([`proxy`]).
//!
//! Module layout mirrors the trust boundaries: [`bilinear`] wraps the curve
//! backend, [`policy`] owns the access-tree language and secret sharing,
//! [`scheme`] implements setup/keygen/encrypt/decrypt, [`outsource`] the
//! transform/recover path, [`codec`] the byte formats, and [`proxy`] the
//! network service and client.

pub mod bilinear;
pub mod codec;
mod dem;
pub mod outsource;
pub mod policy;
pub mod proxy;
pub mod scheme;
