//! Verifiable outsourced decryption.
//!
//! A key holder splits their decryption key into a blinded [`TransformKey`]
//! (handed to an untrusted proxy) and a small [`RetrievalKey`] (kept
//! private). The proxy runs all the pairing-heavy policy work via
//! [`transform`] and returns a [`PartialDecryption`]; the holder finishes
//! with [`recover`], which costs two pairings plus the payload open, and
//! whose verification step catches any proxy that lies about the result.
//!
//! Blinding: for fresh scalars v, w the transform key carries
//! d_t = D * g2^v and per-attribute d_j * g2^w, while the retrieval key
//! keeps (g2^v, f^w). The proxy's output is the payload key multiplied by
//! e(g,g)^{(w - beta v) s t}, which only the retrieval key can cancel, so
//! the proxy learns neither the payload key nor the message.

use crate::bilinear::{pair, random_scalar, RightElement, TargetElement};
use crate::codec;
use crate::policy;
use crate::scheme::{
    check_group, combine_leaf_pairings, open_and_verify, AttributeKey, Ciphertext, Decryption,
    PublicKey, SchemeError, SecretKey,
};
use sha2::{Digest, Sha256};
use std::collections::HashMap;

/// Blinded decryption key for the proxy. Has the same attribute shape as the
/// secret key it was derived from, but its components are offset by blinding
/// exponents that only the matching [`RetrievalKey`] can cancel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransformKey {
    /// D * g2^v.
    pub d_t: RightElement,
    /// Per-attribute components with `d` multiplied by g2^w; `d_prime` is
    /// unchanged from the secret key.
    pub components: Vec<AttributeKey>,
}

impl TransformKey {
    pub fn attrs(&self) -> Vec<&str> {
        self.components.iter().map(|c| c.attr.as_str()).collect()
    }
}

/// Private counterpart of a [`TransformKey`]; two group elements that cancel
/// the blinding during [`recover`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RetrievalKey {
    /// g2^v.
    pub d_r: RightElement,
    /// f^w = g2^{w / beta}.
    pub d_hat_r: RightElement,
}

/// Output of the proxy transform: the blinded payload key plus a digest
/// binding it to the exact ciphertext it was computed for.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartialDecryption {
    /// C~ * F_R / e(C1, d_t) = K * e(g,g)^{(w - beta v) s t}.
    pub t: TargetElement,
    /// SHA-256 of the canonical ciphertext encoding; [`recover`] refuses a
    /// partial decryption whose echo names a different ciphertext.
    pub echo: [u8; 32],
}

/// SHA-256 over the canonical wire encoding of a ciphertext.
pub fn ciphertext_digest(ct: &Ciphertext) -> [u8; 32] {
    Sha256::digest(codec::encode(ct)).into()
}

/// Derives a blinded transform key and its retrieval key from a secret key.
/// Each call samples fresh blinding, so one secret key can feed many proxies
/// with mutually unlinkable transform keys.
pub fn gen_tk<R: rand::RngCore + rand::CryptoRng + ?Sized>(
    pk: &PublicKey,
    sk: &SecretKey,
    rng: &mut R,
) -> Result<(TransformKey, RetrievalKey), SchemeError> {
    let v = random_scalar(rng)?;
    let w = random_scalar(rng)?;
    gen_tk_with(pk, sk, &v, &w)
}

/// Deterministic core of [`gen_tk`] with the blinding scalars explicit, so
/// tests can pin them and check the emitted components exactly.
pub(crate) fn gen_tk_with(
    pk: &PublicKey,
    sk: &SecretKey,
    v: &crate::bilinear::Scalar,
    w: &crate::bilinear::Scalar,
) -> Result<(TransformKey, RetrievalKey), SchemeError> {
    check_group(pk)?;
    let g2_w = pk.g.right.pow(w);
    let tk = TransformKey {
        d_t: sk.d.mul(&pk.g.right.pow(v)),
        components: sk
            .components
            .iter()
            .map(|c| AttributeKey {
                attr: c.attr.clone(),
                d: c.d.mul(&g2_w),
                d_prime: c.d_prime.clone(),
            })
            .collect(),
    };
    let rk = RetrievalKey {
        d_r: pk.g.right.pow(v),
        d_hat_r: pk.f.pow(w),
    };
    Ok((tk, rk))
}

/// Runs the pairing-heavy part of decryption under a blinded key. This is
/// the operation an untrusted proxy performs; it needs no secrets and its
/// output reveals nothing about the payload without the retrieval key.
pub fn transform(
    pk: &PublicKey,
    tk: &TransformKey,
    ct: &Ciphertext,
) -> Result<PartialDecryption, SchemeError> {
    check_group(pk)?;
    transform_inner(tk, ct)
}

/// [`transform`] without the public-key group check; the proxy server calls
/// this directly since its protocol never carries a public key.
pub(crate) fn transform_inner(
    tk: &TransformKey,
    ct: &Ciphertext,
) -> Result<PartialDecryption, SchemeError> {
    let leaf_attrs = ct.tree.leaf_attrs();
    if ct.leaves.len() != leaf_attrs.len() {
        return Err(SchemeError::MalformedCiphertext);
    }
    let attrs = tk.attrs();
    let assignment =
        policy::find_satisfying(&ct.tree, &attrs).ok_or(SchemeError::PolicyNotSatisfied)?;
    let by_attr: HashMap<&str, &AttributeKey> =
        tk.components.iter().map(|c| (c.attr.as_str(), c)).collect();
    // Identical recursion to local decryption; each leaf now contributes
    // e(g,g)^{(r + w) t q_z(0)} because the key component carries the extra
    // g2^w factor.
    let f_r = combine_leaf_pairings(&assignment, &mut |leaf_index| {
        let component = by_attr
            .get(leaf_attrs[leaf_index])
            .ok_or(SchemeError::PolicyNotSatisfied)?;
        let leaf = &ct.leaves[leaf_index];
        Ok(pair(&leaf.c, &component.d).div(&pair(&leaf.c_prime, &component.d_prime)))
    })?;
    let t = ct.c_tilde.mul(&f_r).div(&pair(&ct.c1, &tk.d_t));
    Ok(PartialDecryption {
        t,
        echo: ciphertext_digest(ct),
    })
}

/// Finishes an outsourced decryption. Refuses a partial decryption computed
/// for a different ciphertext ([`SchemeError::EchoMismatch`]), then cancels
/// the blinding with two pairings and opens and verifies the payload. A
/// proxy that returned a perturbed value lands in the authentication or
/// verification failure paths, never in a wrong plaintext.
pub fn recover(
    pk: &PublicKey,
    rk: &RetrievalKey,
    ct: &Ciphertext,
    partial: &PartialDecryption,
) -> Result<Decryption, SchemeError> {
    check_group(pk)?;
    if partial.echo != ciphertext_digest(ct) {
        return Err(SchemeError::EchoMismatch);
    }
    // e(C1, d_r) = e(g,g)^{beta v s t} and e(C1, d_hat_r) = e(g,g)^{w s t}
    // cancel the proxy-side blinding exactly.
    let payload_key = partial
        .t
        .mul(&pair(&ct.c1, &rk.d_r))
        .div(&pair(&ct.c1, &rk.d_hat_r));
    open_and_verify(pk, ct, &payload_key)
}
