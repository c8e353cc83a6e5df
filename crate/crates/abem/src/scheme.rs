//! Core algorithms: authority setup, key generation, encryption-machine
//! construction, re-randomized encryption, decryption, and plaintext
//! verification.
//!
//! The flow mirrors classic tree-based CP-ABE with two twists:
//!
//! * Encryption is split into [`build_em`] (the policy-dependent work: share
//!   a root secret over the tree, exponentiate per leaf) and [`em_encrypt`]
//!   (per-message work: shift every cached leaf by a fresh delta and scale by
//!   a fresh nonzero factor, so each ciphertext is independently random while
//!   the tree walk is paid once).
//! * The pairing algebra blinds a random target-group payload key rather
//!   than the message itself; the message and the verification witness ride
//!   in an authenticated symmetric blob (see [`crate::dem`]). A ciphertext
//!   carries a binding tag C0 = u^{x-scaled message hash} checkable by anyone
//!   with two pairings, which is what makes outsourced decryption auditable.
//!
//! Verification and authentication failures are distinct outcomes: a wrong
//! payload key surfaces as [`SchemeError::AuthenticationFailure`] when the
//! blob is opened, while a forged (message, witness) pair against an intact
//! blob surfaces as [`SchemeError::VerificationFailure`] from the pairing
//! check.

use crate::bilinear::{
    attribute_element, hash_message, pair, random_nonzero_scalar, random_scalar, AttributeError,
    LeftElement, MirroredElement, RandomnessError, RightElement, Scalar, TargetElement,
    GROUP_BLS12_381, LEFT_ELEMENT_BYTES,
};
use crate::dem;
use crate::policy::{self, PolicyAst, PolicyError, SatNode, SatisfyingAssignment};
use std::collections::{BTreeSet, HashMap};
use thiserror::Error;

/// Failure taxonomy shared by local and outsourced decryption. Variants are
/// deliberately coarse on the success path's secrets (no partial plaintext
/// ever rides in an error).
#[derive(Debug, Error)]
pub enum SchemeError {
    #[error("attribute set does not satisfy the ciphertext policy")]
    PolicyNotSatisfied,
    #[error("payload authentication failed")]
    AuthenticationFailure,
    #[error("plaintext verification failed")]
    VerificationFailure,
    #[error("partial decryption was computed for a different ciphertext")]
    EchoMismatch,
    #[error("attribute set is empty")]
    EmptyAttributeSet,
    #[error("master key is invalid (zero beta)")]
    InvalidMasterKey,
    #[error("object was produced for a different pairing group")]
    GroupMismatch,
    #[error("ciphertext structure is inconsistent with its policy")]
    MalformedCiphertext,
    #[error("invalid attribute: {0}")]
    Attribute(#[from] AttributeError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Randomness(#[from] RandomnessError),
}

/// Published by the authority; sufficient for encryption and verification.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PublicKey {
    /// Pairing-group descriptor; see [`crate::bilinear::GROUP_BLS12_381`].
    pub group: u8,
    /// Generator pair (g1, g2).
    pub g: MirroredElement,
    /// g1^beta.
    pub h: LeftElement,
    /// g2^{1/beta}; lets receivers build retrieval keys without the master
    /// key (the blinded component g2^{w/beta} is f^w).
    pub f: RightElement,
    /// e(g1, g2)^alpha.
    pub e_gg_alpha: TargetElement,
    /// Verification base pair g^q; the exponent q stays in the master key.
    pub g_q: MirroredElement,
}

/// Held by the authority only.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MasterKey {
    /// Nonzero; inverted during key generation.
    pub beta: Scalar,
    /// g2^alpha.
    pub g_alpha: RightElement,
    /// Verification exponent behind the public g^q.
    pub q: Scalar,
}

/// Per-attribute components of a decryption or transform key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttributeKey {
    /// Normalized attribute string.
    pub attr: String,
    /// g2^r * A2(attr)^{r_j} (decryption key) or g2^{r+w} * A2(attr)^{r_j}
    /// (transform key).
    pub d: RightElement,
    /// g2^{r_j}.
    pub d_prime: RightElement,
}

/// Attribute decryption key. Components are sorted by attribute and carry a
/// shared blinding exponent r tying them to `d`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SecretKey {
    /// g2^{(alpha + r)/beta}.
    pub d: RightElement,
    pub components: Vec<AttributeKey>,
}

impl SecretKey {
    pub fn attrs(&self) -> Vec<&str> {
        self.components.iter().map(|c| c.attr.as_str()).collect()
    }

    /// Structural consistency probe usable without knowing r: the ratio
    /// e(g1, d) / e(A1(attr), d_prime) must be the same e(g,g)^r for every
    /// component. Pairing-heavy; intended for diagnostics and tests.
    pub fn is_consistent(&self, pk: &PublicKey) -> bool {
        let mut common: Option<TargetElement> = None;
        for c in &self.components {
            let a = match attribute_element(&c.attr) {
                Ok(a) => a,
                Err(_) => return false,
            };
            let ratio = pair(&pk.g.left, &c.d).div(&pair(&a.left, &c.d_prime));
            match &common {
                None => common = Some(ratio),
                Some(r) if *r == ratio => {}
                Some(_) => return false,
            }
        }
        true
    }
}

/// Cached per-policy encryption state: the shared root secret `s`, and per
/// leaf the pair (g1^{share}, A1(attr)^{share}) plus the attribute element
/// needed to re-randomize the second component.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncryptionMachine {
    pub tree: PolicyAst,
    pub s: Scalar,
    /// Preorder leaf order, parallel to `tree.leaf_attrs()`.
    pub leaves: Vec<EmLeaf>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EmLeaf {
    /// g1^{q_y(0)} for this leaf's share q_y(0).
    pub c: LeftElement,
    /// A1(attr)^{q_y(0)}.
    pub c_prime: LeftElement,
    /// Cached A(attr) pair; the right half supports consistency probes.
    pub attr_elem: MirroredElement,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ciphertext {
    pub tree: PolicyAst,
    /// K * e(g,g)^{alpha * s * t}, blinding the payload key K.
    pub c_tilde: TargetElement,
    /// Verification tag u^{q * H_m(M)}, checkable against the public g^q.
    pub c0: LeftElement,
    /// h^{s * t}.
    pub c1: LeftElement,
    /// Preorder leaf order, parallel to `tree.leaf_attrs()`.
    pub leaves: Vec<CiphertextLeaf>,
    /// Nonce-prefixed authenticated blob of M || encode(u); see [`crate::dem`].
    pub dem: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CiphertextLeaf {
    /// g1^{(q_y(0) + ds) * t}.
    pub c: LeftElement,
    /// A1(attr)^{(q_y(0) + ds) * t}.
    pub c_prime: LeftElement,
}

/// Decryption output: the message plus the witness needed for external
/// verification via [`verify_message`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decryption {
    pub message: Vec<u8>,
    /// u = g1^x sampled at encryption time; pairs against c0.
    pub witness: LeftElement,
}

/// Samples a fresh authority key pair.
pub fn setup<R: rand::RngCore + rand::CryptoRng + ?Sized>(
    rng: &mut R,
) -> Result<(PublicKey, MasterKey), SchemeError> {
    let alpha = random_scalar(rng)?;
    let beta = random_nonzero_scalar(rng)?;
    let q = random_scalar(rng)?;
    let g = MirroredElement::generator();
    let beta_inv = beta.inverse().expect("beta sampled nonzero");
    let pk = PublicKey {
        group: GROUP_BLS12_381,
        g,
        h: g.left.pow(&beta),
        f: g.right.pow(&beta_inv),
        e_gg_alpha: TargetElement::generator().pow(&alpha),
        // The log of g^q is the master secret q; strip it so the public key
        // can never carry it out of this function.
        g_q: MirroredElement::from_scalar(&q).without_log(),
    };
    let mk = MasterKey {
        beta,
        g_alpha: g.right.pow(&alpha),
        q,
    };
    Ok((pk, mk))
}

/// Issues a decryption key for an attribute set. Attributes are normalized,
/// deduplicated, and sorted; the emitted components are blinded by a fresh r
/// so two keys for the same set are component-wise unlinkable.
pub fn keygen<R: rand::RngCore + rand::CryptoRng + ?Sized, S: AsRef<str>>(
    pk: &PublicKey,
    mk: &MasterKey,
    attrs: &[S],
    rng: &mut R,
) -> Result<SecretKey, SchemeError> {
    check_group(pk)?;
    let mut normalized = BTreeSet::new();
    for attr in attrs {
        normalized.insert(crate::bilinear::normalize_attribute(attr.as_ref())?);
    }
    if normalized.is_empty() {
        return Err(SchemeError::EmptyAttributeSet);
    }
    let beta_inv = mk.beta.inverse().ok_or(SchemeError::InvalidMasterKey)?;
    let r = random_scalar(rng)?;
    let g2_r = pk.g.right.pow(&r);
    let d = mk.g_alpha.mul(&g2_r).pow(&beta_inv);
    let mut components = Vec::with_capacity(normalized.len());
    for attr in normalized {
        let r_j = random_scalar(rng)?;
        let a = attribute_element(&attr)?;
        components.push(AttributeKey {
            attr,
            d: g2_r.mul(&a.right.pow(&r_j)),
            d_prime: pk.g.right.pow(&r_j),
        });
    }
    Ok(SecretKey { d, components })
}

/// Builds the reusable per-policy encryption state: samples the root secret
/// s, shares it over the tree, and caches the per-leaf exponentiations.
pub fn build_em<R: rand::RngCore + rand::CryptoRng + ?Sized>(
    pk: &PublicKey,
    tree: &PolicyAst,
    rng: &mut R,
) -> Result<EncryptionMachine, SchemeError> {
    check_group(pk)?;
    let s = random_scalar(rng)?;
    let shares = policy::share_secret(tree, &s, rng)?;
    let attrs = tree.leaf_attrs();
    let mut leaves = Vec::with_capacity(shares.len());
    for (attr, share) in attrs.iter().zip(&shares) {
        let attr_elem = attribute_element(attr)?;
        leaves.push(EmLeaf {
            c: pk.g.left.pow(share),
            c_prime: attr_elem.left.pow(share),
            attr_elem,
        });
    }
    Ok(EncryptionMachine {
        tree: tree.clone(),
        s,
        leaves,
    })
}

/// Encrypts a message under the machine's policy. Each call re-randomizes
/// the cached state: every leaf share is shifted by a fresh ds and every
/// exponent scaled by a fresh nonzero t, so ciphertexts from one machine are
/// mutually independent. Cost is one exponentiation per leaf-component plus
/// constant overhead, regardless of tree shape.
pub fn em_encrypt<R: rand::RngCore + rand::CryptoRng + ?Sized>(
    pk: &PublicKey,
    em: &EncryptionMachine,
    message: &[u8],
    rng: &mut R,
) -> Result<Ciphertext, SchemeError> {
    let x = random_scalar(rng)?;
    let t = random_nonzero_scalar(rng)?;
    let ds = random_scalar(rng)?;
    let payload_exp = random_scalar(rng)?;
    em_encrypt_with(pk, em, message, &x, &t, &ds, &payload_exp, rng)
}

/// Deterministic core of [`em_encrypt`] with the four sampled scalars made
/// explicit (x: witness exponent, t: scale, ds: share shift, payload_exp:
/// payload key K = e(g1,g2)^payload_exp). Unit tests pin these to check the
/// emitted components against hand-computed exponents.
#[allow(clippy::too_many_arguments)]
pub(crate) fn em_encrypt_with<R: rand::RngCore + rand::CryptoRng + ?Sized>(
    pk: &PublicKey,
    em: &EncryptionMachine,
    message: &[u8],
    x: &Scalar,
    t: &Scalar,
    ds: &Scalar,
    payload_exp: &Scalar,
    rng: &mut R,
) -> Result<Ciphertext, SchemeError> {
    check_group(pk)?;
    if em.leaves.len() != em.tree.leaf_count() {
        return Err(SchemeError::MalformedCiphertext);
    }
    let payload_key = TargetElement::generator().pow(payload_exp);
    let st = (em.s + *ds) * *t;
    let c_tilde = payload_key.mul(&pk.e_gg_alpha.pow(&st));
    let c1 = pk.h.pow(&st);
    // u = g1^x with x known lets C0 = u^{q * H_m(M)} be built from the public
    // g^q as (g^q)^{x * H_m(M)}; the master exponent q is never needed here.
    let u = pk.g.left.pow(x);
    let c0 = pk.g_q.left.pow(&(*x * hash_message(message)));
    let g_ds = pk.g.left.pow(ds);
    let leaves = em
        .leaves
        .iter()
        .map(|leaf| CiphertextLeaf {
            c: leaf.c.mul(&g_ds).pow(t),
            c_prime: leaf.c_prime.mul(&leaf.attr_elem.left.pow(ds)).pow(t),
        })
        .collect();
    let mut plaintext = Vec::with_capacity(message.len() + LEFT_ELEMENT_BYTES);
    plaintext.extend_from_slice(message);
    plaintext.extend_from_slice(&u.encode());
    let dem = dem::seal(&payload_key, &plaintext, rng)?;
    Ok(Ciphertext {
        tree: em.tree.clone(),
        c_tilde,
        c0,
        c1,
        leaves,
        dem,
    })
}

/// Decrypts with a satisfying key. Walks a minimal satisfying assignment,
/// pairs each used leaf against the matching key component, recombines with
/// Lagrange coefficients in the exponent, strips the blind, then opens and
/// verifies the payload.
pub fn decrypt(pk: &PublicKey, sk: &SecretKey, ct: &Ciphertext) -> Result<Decryption, SchemeError> {
    check_group(pk)?;
    let leaf_attrs = ct.tree.leaf_attrs();
    if ct.leaves.len() != leaf_attrs.len() {
        return Err(SchemeError::MalformedCiphertext);
    }
    let attrs = sk.attrs();
    let assignment =
        policy::find_satisfying(&ct.tree, &attrs).ok_or(SchemeError::PolicyNotSatisfied)?;
    let by_attr: HashMap<&str, &AttributeKey> =
        sk.components.iter().map(|c| (c.attr.as_str(), c)).collect();
    let f_r = combine_leaf_pairings(&assignment, &mut |leaf_index| {
        let component = by_attr
            .get(leaf_attrs[leaf_index])
            .ok_or(SchemeError::PolicyNotSatisfied)?;
        let leaf = &ct.leaves[leaf_index];
        // F_z = e(C_y, D_j) / e(C'_y, D'_j) = e(g,g)^{r * t * q_z(0)}.
        Ok(pair(&leaf.c, &component.d).div(&pair(&leaf.c_prime, &component.d_prime)))
    })?;
    let payload_key = ct.c_tilde.mul(&f_r).div(&pair(&ct.c1, &sk.d));
    open_and_verify(pk, ct, &payload_key)
}

/// Lagrange recombination in the target group along a satisfying assignment.
/// Shared by local decryption and the proxy transform, which differ only in
/// what each leaf pairing produces.
pub(crate) fn combine_leaf_pairings(
    assignment: &SatisfyingAssignment,
    leaf_value: &mut dyn FnMut(usize) -> Result<TargetElement, SchemeError>,
) -> Result<TargetElement, SchemeError> {
    fn walk(
        node: &SatNode,
        leaf_value: &mut dyn FnMut(usize) -> Result<TargetElement, SchemeError>,
    ) -> Result<TargetElement, SchemeError> {
        match node {
            SatNode::Leaf { leaf_index } => leaf_value(*leaf_index),
            SatNode::Gate { children } => {
                let set: Vec<u64> = children.iter().map(|(pos, _)| *pos as u64).collect();
                let mut acc = TargetElement::identity();
                for (pos, child) in children {
                    let value = walk(child, leaf_value)?;
                    let coeff = policy::lagrange_at_zero(*pos as u64, &set)?;
                    acc = acc.mul(&value.pow(&coeff));
                }
                Ok(acc)
            }
        }
    }
    walk(&assignment.root, leaf_value)
}

/// Opens the payload blob under the recovered key and runs verification.
/// Shared by [`decrypt`] and outsourced recovery so both report identical
/// outcomes for identical tampering.
pub(crate) fn open_and_verify(
    pk: &PublicKey,
    ct: &Ciphertext,
    payload_key: &TargetElement,
) -> Result<Decryption, SchemeError> {
    let plain = dem::open(payload_key, &ct.dem).ok_or(SchemeError::AuthenticationFailure)?;
    if plain.len() < LEFT_ELEMENT_BYTES {
        return Err(SchemeError::AuthenticationFailure);
    }
    let split = plain.len() - LEFT_ELEMENT_BYTES;
    let witness =
        LeftElement::decode(&plain[split..]).map_err(|_| SchemeError::AuthenticationFailure)?;
    let message = plain[..split].to_vec();
    if !verify_message(pk, ct, &message, &witness) {
        return Err(SchemeError::VerificationFailure);
    }
    Ok(Decryption { message, witness })
}

/// Checks e(C0, g2) = e(u'^{H_m(m')}, (g^q)_right): exactly two pairings,
/// usable by anyone holding the public key.
pub fn verify_message(
    pk: &PublicKey,
    ct: &Ciphertext,
    message: &[u8],
    witness: &LeftElement,
) -> bool {
    pair(&ct.c0, &pk.g.right) == pair(&witness.pow(&hash_message(message)), &pk.g_q.right)
}

pub(crate) fn check_group(pk: &PublicKey) -> Result<(), SchemeError> {
    if pk.group != GROUP_BLS12_381 {
        return Err(SchemeError::GroupMismatch);
    }
    Ok(())
}
