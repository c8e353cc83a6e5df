//! Canonical wire formats for every persistent object, plus ASCII armor.
//!
//! Layout: a fixed envelope, then a body of length-prefixed fields.
//!
//! ```text
//! "ABEM" | version 0x01 | object tag | group 0x01 | body
//! body   = field*            (fixed order per object, no options)
//! field  = tag (1 byte) | length (u32 BE) | value
//! ```
//!
//! Decoding is strict: the magic, version, object tag, and group descriptor
//! must match; fields must appear in exactly the declared order with exactly
//! the declared lengths; group elements must decode to canonical subgroup
//! members; counted sequences must match their declared counts; and the
//! buffer must be fully consumed. Every rejection is a distinct
//! [`CodecError`] variant, so callers can tell truncation from tampering
//! from version skew. Under this discipline encoding is canonical:
//! `encode(decode(b)) == b` for every accepted `b`.
//!
//! Policies travel as a preorder node list (leaf: `0x00 | len | utf8 attr`,
//! gate: `0x01 | k | child count`, children following). Decoded trees are
//! re-validated against the policy module's structural limits, and attribute
//! strings must already be in normalized form.
//!
//! Armor wraps the binary encoding in base64 between `-----BEGIN ABEM
//! <KIND>-----` / `-----END ABEM <KIND>-----` lines for transport through
//! text-only channels.

use crate::bilinear::{
    normalize_attribute, ElementError, LeftElement, MirroredElement, RightElement, Scalar,
    TargetElement, GROUP_BLS12_381, LEFT_ELEMENT_BYTES, RIGHT_ELEMENT_BYTES, SCALAR_BYTES,
    TARGET_ELEMENT_BYTES,
};
use crate::outsource::{PartialDecryption, RetrievalKey, TransformKey};
use crate::policy::{PolicyAst, MAX_DEPTH, MAX_LEAVES};
use crate::scheme::{
    AttributeKey, Ciphertext, CiphertextLeaf, EmLeaf, EncryptionMachine, MasterKey, PublicKey,
    SecretKey,
};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"ABEM";
pub const VERSION: u8 = 0x01;

pub const TAG_PUBLIC_KEY: u8 = 0x01;
pub const TAG_MASTER_KEY: u8 = 0x02;
pub const TAG_SECRET_KEY: u8 = 0x03;
pub const TAG_ENCRYPTION_MACHINE: u8 = 0x04;
pub const TAG_CIPHERTEXT: u8 = 0x05;
pub const TAG_TRANSFORM_KEY: u8 = 0x06;
pub const TAG_RETRIEVAL_KEY: u8 = 0x07;
pub const TAG_PARTIAL_DECRYPTION: u8 = 0x08;

const NODE_LEAF: u8 = 0x00;
const NODE_GATE: u8 = 0x01;

/// Decode-side node budget for policy trees: a validated tree (leaf and
/// depth limits) can never exceed this, so anything larger is rejected
/// before allocation grows.
const MAX_POLICY_NODES: usize = MAX_LEAVES * MAX_DEPTH as usize;

/// Minimum payload blob length: nonce plus authentication tag.
const MIN_DEM_LEN: usize = crate::dem::NONCE_BYTES + crate::dem::TAG_BYTES;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("bad magic (not an ABEM object)")]
    BadMagic,
    #[error("unsupported format version {0:#04x}")]
    UnsupportedVersion(u8),
    #[error("wrong object tag: expected {expected:#04x}, got {got:#04x}")]
    WrongObjectTag { expected: u8, got: u8 },
    #[error("unsupported group descriptor {0:#04x}")]
    UnsupportedGroup(u8),
    #[error("input ends before the object does")]
    Truncated,
    #[error("trailing bytes after the object")]
    TrailingBytes,
    #[error("unexpected field tag: expected {expected:#04x}, got {got:#04x}")]
    UnexpectedField { expected: u8, got: u8 },
    #[error("field {field:#04x} has length {got}, expected {expected}")]
    FieldLength {
        field: u8,
        expected: usize,
        got: usize,
    },
    #[error("invalid group element in field {field:#04x}: {source}")]
    InvalidElement {
        field: u8,
        #[source]
        source: ElementError,
    },
    #[error("invalid policy encoding: {0}")]
    InvalidPolicy(String),
    #[error("attribute is not in normalized form")]
    UnnormalizedAttribute,
    #[error("key components are not sorted by attribute")]
    UnsortedComponents,
    #[error("leaf sequence does not match the policy ({expected} leaves declared, {got} present)")]
    LeafCountMismatch { expected: usize, got: usize },
    #[error("count {got} exceeds limit {max}")]
    CountTooLarge { got: usize, max: usize },
    #[error("payload blob is too short to carry a nonce and tag")]
    DemTooShort,
    #[error("invalid armor: {0}")]
    BadArmor(String),
}

/// Sequential strict reader over a byte buffer. Its methods are
/// crate-private: the set of wire objects is closed, so [`WireObject`] is
/// not implementable outside this crate.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.buf.len() - self.pos < n {
            return Err(CodecError::Truncated);
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    fn u32_be(&mut self) -> Result<u32, CodecError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn is_empty(&self) -> bool {
        self.pos == self.buf.len()
    }

    /// Reads the header of the next field, which must carry `tag`, and
    /// returns its value bytes.
    fn field(&mut self, tag: u8) -> Result<&'a [u8], CodecError> {
        let got = self.u8()?;
        if got != tag {
            return Err(CodecError::UnexpectedField { expected: tag, got });
        }
        let len = self.u32_be()? as usize;
        self.take(len)
    }

    /// Like [`Reader::field`], but the value must be exactly `len` bytes.
    fn fixed_field(&mut self, tag: u8, len: usize) -> Result<&'a [u8], CodecError> {
        let v = self.field(tag)?;
        if v.len() != len {
            return Err(CodecError::FieldLength {
                field: tag,
                expected: len,
                got: v.len(),
            });
        }
        Ok(v)
    }

    fn scalar(&mut self, tag: u8) -> Result<Scalar, CodecError> {
        let v = self.fixed_field(tag, SCALAR_BYTES)?;
        Scalar::decode(v).map_err(|source| CodecError::InvalidElement { field: tag, source })
    }

    fn left(&mut self, tag: u8) -> Result<LeftElement, CodecError> {
        let v = self.fixed_field(tag, LEFT_ELEMENT_BYTES)?;
        LeftElement::decode(v).map_err(|source| CodecError::InvalidElement { field: tag, source })
    }

    fn right(&mut self, tag: u8) -> Result<RightElement, CodecError> {
        let v = self.fixed_field(tag, RIGHT_ELEMENT_BYTES)?;
        RightElement::decode(v).map_err(|source| CodecError::InvalidElement { field: tag, source })
    }

    fn target(&mut self, tag: u8) -> Result<TargetElement, CodecError> {
        let v = self.fixed_field(tag, TARGET_ELEMENT_BYTES)?;
        TargetElement::decode(v).map_err(|source| CodecError::InvalidElement { field: tag, source })
    }

    /// Reads a u32 count field and bounds it.
    fn count(&mut self, tag: u8, max: usize) -> Result<usize, CodecError> {
        let v = self.fixed_field(tag, 4)?;
        let n = u32::from_be_bytes([v[0], v[1], v[2], v[3]]) as usize;
        if n > max {
            return Err(CodecError::CountTooLarge { got: n, max });
        }
        Ok(n)
    }
}

fn put_field(out: &mut Vec<u8>, tag: u8, value: &[u8]) {
    out.push(tag);
    out.extend_from_slice(&(value.len() as u32).to_be_bytes());
    out.extend_from_slice(value);
}

fn put_count(out: &mut Vec<u8>, tag: u8, n: usize) {
    put_field(out, tag, &(n as u32).to_be_bytes());
}

/// An object with a canonical binary encoding.
pub trait WireObject: Sized {
    /// Envelope object tag.
    const OBJECT_TAG: u8;
    /// Armor kind line, e.g. `PUBLIC KEY` in `-----BEGIN ABEM PUBLIC KEY-----`.
    const KIND: &'static str;
    fn encode_body(&self, out: &mut Vec<u8>);
    fn decode_body(r: &mut Reader<'_>) -> Result<Self, CodecError>;
}

/// Encodes an object in canonical binary form.
pub fn encode<T: WireObject>(obj: &T) -> Vec<u8> {
    let mut out = Vec::with_capacity(64);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(T::OBJECT_TAG);
    out.push(GROUP_BLS12_381);
    obj.encode_body(&mut out);
    out
}

/// Decodes an object, enforcing the envelope and full consumption.
pub fn decode<T: WireObject>(bytes: &[u8]) -> Result<T, CodecError> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != MAGIC {
        return Err(CodecError::BadMagic);
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(CodecError::UnsupportedVersion(version));
    }
    let tag = r.u8()?;
    if tag != T::OBJECT_TAG {
        return Err(CodecError::WrongObjectTag {
            expected: T::OBJECT_TAG,
            got: tag,
        });
    }
    let group = r.u8()?;
    if group != GROUP_BLS12_381 {
        return Err(CodecError::UnsupportedGroup(group));
    }
    let obj = T::decode_body(&mut r)?;
    if !r.is_empty() {
        return Err(CodecError::TrailingBytes);
    }
    Ok(obj)
}

// Policy wire form, preorder.

fn encode_policy(tree: &PolicyAst, out: &mut Vec<u8>) {
    match tree {
        PolicyAst::Leaf(attr) => {
            out.push(NODE_LEAF);
            out.extend_from_slice(&(attr.len() as u32).to_be_bytes());
            out.extend_from_slice(attr.as_bytes());
        }
        PolicyAst::Threshold { k, children } => {
            out.push(NODE_GATE);
            out.extend_from_slice(&k.to_be_bytes());
            out.extend_from_slice(&(children.len() as u32).to_be_bytes());
            for c in children {
                encode_policy(c, out);
            }
        }
    }
}

fn decode_policy(r: &mut Reader<'_>) -> Result<PolicyAst, CodecError> {
    fn node(r: &mut Reader<'_>, depth: u32, budget: &mut usize) -> Result<PolicyAst, CodecError> {
        if depth > MAX_DEPTH {
            return Err(CodecError::InvalidPolicy(format!(
                "node depth exceeds {MAX_DEPTH}"
            )));
        }
        if *budget == 0 {
            return Err(CodecError::InvalidPolicy(format!(
                "more than {MAX_POLICY_NODES} nodes"
            )));
        }
        *budget -= 1;
        match r.u8()? {
            NODE_LEAF => {
                let len = r.u32_be()? as usize;
                let raw = r.take(len)?;
                let attr = std::str::from_utf8(raw)
                    .map_err(|_| CodecError::InvalidPolicy("attribute is not UTF-8".into()))?;
                match normalize_attribute(attr) {
                    Ok(n) if n == attr => Ok(PolicyAst::Leaf(n)),
                    _ => Err(CodecError::UnnormalizedAttribute),
                }
            }
            NODE_GATE => {
                let k = r.u32_be()?;
                let n = r.u32_be()? as usize;
                if n > MAX_POLICY_NODES {
                    return Err(CodecError::InvalidPolicy(format!(
                        "gate declares {n} children"
                    )));
                }
                // No preallocation from the wire count; children are read
                // one at a time and the budget caps the total.
                let mut children = Vec::new();
                for _ in 0..n {
                    children.push(node(r, depth + 1, budget)?);
                }
                Ok(PolicyAst::Threshold { k, children })
            }
            other => Err(CodecError::InvalidPolicy(format!(
                "unknown node kind {other:#04x}"
            ))),
        }
    }
    let mut budget = MAX_POLICY_NODES;
    let tree = node(r, 1, &mut budget)?;
    tree.validate()
        .map_err(|e| CodecError::InvalidPolicy(e.to_string()))?;
    Ok(tree)
}

fn policy_field(tree: &PolicyAst) -> Vec<u8> {
    let mut out = Vec::new();
    encode_policy(tree, &mut out);
    out
}

fn decode_policy_field(r: &mut Reader<'_>, tag: u8) -> Result<PolicyAst, CodecError> {
    let bytes = r.field(tag)?;
    let mut inner = Reader::new(bytes);
    let tree = decode_policy(&mut inner)?;
    if !inner.is_empty() {
        return Err(CodecError::InvalidPolicy(
            "trailing bytes after tree".into(),
        ));
    }
    Ok(tree)
}

// Attribute key sequences (shared by secret and transform keys): a count
// field, then (attr, d, d_prime) triples sorted strictly ascending by
// attribute.

fn encode_components(out: &mut Vec<u8>, count_tag: u8, components: &[AttributeKey]) {
    put_count(out, count_tag, components.len());
    for c in components {
        put_field(out, count_tag + 1, c.attr.as_bytes());
        put_field(out, count_tag + 2, &c.d.encode());
        put_field(out, count_tag + 3, &c.d_prime.encode());
    }
}

fn decode_components(r: &mut Reader<'_>, count_tag: u8) -> Result<Vec<AttributeKey>, CodecError> {
    let n = r.count(count_tag, MAX_LEAVES)?;
    let mut components: Vec<AttributeKey> = Vec::new();
    for _ in 0..n {
        let raw = r.field(count_tag + 1)?;
        let attr = std::str::from_utf8(raw)
            .map_err(|_| CodecError::InvalidPolicy("attribute is not UTF-8".into()))?;
        match normalize_attribute(attr) {
            Ok(n) if n == attr => {}
            _ => return Err(CodecError::UnnormalizedAttribute),
        }
        if let Some(prev) = components.last() {
            if prev.attr.as_str() >= attr {
                return Err(CodecError::UnsortedComponents);
            }
        }
        components.push(AttributeKey {
            attr: attr.to_string(),
            d: r.right(count_tag + 2)?,
            d_prime: r.right(count_tag + 3)?,
        });
    }
    Ok(components)
}

impl WireObject for PublicKey {
    const OBJECT_TAG: u8 = TAG_PUBLIC_KEY;
    const KIND: &'static str = "PUBLIC KEY";

    fn encode_body(&self, out: &mut Vec<u8>) {
        put_field(out, 0x01, &self.g.left.encode());
        put_field(out, 0x02, &self.g.right.encode());
        put_field(out, 0x03, &self.h.encode());
        put_field(out, 0x04, &self.f.encode());
        put_field(out, 0x05, &self.e_gg_alpha.encode());
        put_field(out, 0x06, &self.g_q.left.encode());
        put_field(out, 0x07, &self.g_q.right.encode());
    }

    fn decode_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(PublicKey {
            group: GROUP_BLS12_381,
            g: MirroredElement::from_parts(r.left(0x01)?, r.right(0x02)?),
            h: r.left(0x03)?,
            f: r.right(0x04)?,
            e_gg_alpha: r.target(0x05)?,
            g_q: MirroredElement::from_parts(r.left(0x06)?, r.right(0x07)?),
        })
    }
}

impl WireObject for MasterKey {
    const OBJECT_TAG: u8 = TAG_MASTER_KEY;
    const KIND: &'static str = "MASTER KEY";

    fn encode_body(&self, out: &mut Vec<u8>) {
        put_field(out, 0x01, &self.beta.encode());
        put_field(out, 0x02, &self.g_alpha.encode());
        put_field(out, 0x03, &self.q.encode());
    }

    fn decode_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(MasterKey {
            beta: r.scalar(0x01)?,
            g_alpha: r.right(0x02)?,
            q: r.scalar(0x03)?,
        })
    }
}

impl WireObject for SecretKey {
    const OBJECT_TAG: u8 = TAG_SECRET_KEY;
    const KIND: &'static str = "SECRET KEY";

    fn encode_body(&self, out: &mut Vec<u8>) {
        put_field(out, 0x01, &self.d.encode());
        encode_components(out, 0x02, &self.components);
    }

    fn decode_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(SecretKey {
            d: r.right(0x01)?,
            components: decode_components(r, 0x02)?,
        })
    }
}

impl WireObject for EncryptionMachine {
    const OBJECT_TAG: u8 = TAG_ENCRYPTION_MACHINE;
    const KIND: &'static str = "ENCRYPTION MACHINE";

    fn encode_body(&self, out: &mut Vec<u8>) {
        put_field(out, 0x01, &policy_field(&self.tree));
        put_field(out, 0x02, &self.s.encode());
        put_count(out, 0x03, self.leaves.len());
        for leaf in &self.leaves {
            put_field(out, 0x04, &leaf.c.encode());
            put_field(out, 0x05, &leaf.c_prime.encode());
            put_field(out, 0x06, &leaf.attr_elem.left.encode());
            put_field(out, 0x07, &leaf.attr_elem.right.encode());
        }
    }

    fn decode_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let tree = decode_policy_field(r, 0x01)?;
        let s = r.scalar(0x02)?;
        let n = r.count(0x03, MAX_LEAVES)?;
        let expected = tree.leaf_count();
        if n != expected {
            return Err(CodecError::LeafCountMismatch { expected, got: n });
        }
        let mut leaves = Vec::new();
        for _ in 0..n {
            leaves.push(EmLeaf {
                c: r.left(0x04)?,
                c_prime: r.left(0x05)?,
                attr_elem: MirroredElement::from_parts(r.left(0x06)?, r.right(0x07)?),
            });
        }
        Ok(EncryptionMachine { tree, s, leaves })
    }
}

impl WireObject for Ciphertext {
    const OBJECT_TAG: u8 = TAG_CIPHERTEXT;
    const KIND: &'static str = "CIPHERTEXT";

    fn encode_body(&self, out: &mut Vec<u8>) {
        put_field(out, 0x01, &policy_field(&self.tree));
        put_field(out, 0x02, &self.c_tilde.encode());
        put_field(out, 0x03, &self.c0.encode());
        put_field(out, 0x04, &self.c1.encode());
        put_count(out, 0x05, self.leaves.len());
        for leaf in &self.leaves {
            put_field(out, 0x06, &leaf.c.encode());
            put_field(out, 0x07, &leaf.c_prime.encode());
        }
        put_field(out, 0x08, &self.dem);
    }

    fn decode_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let tree = decode_policy_field(r, 0x01)?;
        let c_tilde = r.target(0x02)?;
        let c0 = r.left(0x03)?;
        let c1 = r.left(0x04)?;
        let n = r.count(0x05, MAX_LEAVES)?;
        let expected = tree.leaf_count();
        if n != expected {
            return Err(CodecError::LeafCountMismatch { expected, got: n });
        }
        let mut leaves = Vec::new();
        for _ in 0..n {
            leaves.push(CiphertextLeaf {
                c: r.left(0x06)?,
                c_prime: r.left(0x07)?,
            });
        }
        let dem = r.field(0x08)?.to_vec();
        if dem.len() < MIN_DEM_LEN {
            return Err(CodecError::DemTooShort);
        }
        Ok(Ciphertext {
            tree,
            c_tilde,
            c0,
            c1,
            leaves,
            dem,
        })
    }
}

impl WireObject for TransformKey {
    const OBJECT_TAG: u8 = TAG_TRANSFORM_KEY;
    const KIND: &'static str = "TRANSFORM KEY";

    fn encode_body(&self, out: &mut Vec<u8>) {
        put_field(out, 0x01, &self.d_t.encode());
        encode_components(out, 0x02, &self.components);
    }

    fn decode_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(TransformKey {
            d_t: r.right(0x01)?,
            components: decode_components(r, 0x02)?,
        })
    }
}

impl WireObject for RetrievalKey {
    const OBJECT_TAG: u8 = TAG_RETRIEVAL_KEY;
    const KIND: &'static str = "RETRIEVAL KEY";

    fn encode_body(&self, out: &mut Vec<u8>) {
        put_field(out, 0x01, &self.d_r.encode());
        put_field(out, 0x02, &self.d_hat_r.encode());
    }

    fn decode_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(RetrievalKey {
            d_r: r.right(0x01)?,
            d_hat_r: r.right(0x02)?,
        })
    }
}

impl WireObject for PartialDecryption {
    const OBJECT_TAG: u8 = TAG_PARTIAL_DECRYPTION;
    const KIND: &'static str = "PARTIAL DECRYPTION";

    fn encode_body(&self, out: &mut Vec<u8>) {
        put_field(out, 0x01, &self.t.encode());
        put_field(out, 0x02, &self.echo);
    }

    fn decode_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let t = r.target(0x01)?;
        let echo_bytes = r.fixed_field(0x02, 32)?;
        let mut echo = [0u8; 32];
        echo.copy_from_slice(echo_bytes);
        Ok(PartialDecryption { t, echo })
    }
}

// ASCII armor.

const ARMOR_WIDTH: usize = 64;

/// Encodes an object as base64 between BEGIN/END lines. The kind in the
/// banner matches the object type and is checked when decoding.
pub fn encode_armored<T: WireObject>(obj: &T) -> String {
    let raw = BASE64.encode(encode(obj));
    let mut out = format!("-----BEGIN ABEM {}-----\n", T::KIND);
    let bytes = raw.as_bytes();
    for chunk in bytes.chunks(ARMOR_WIDTH) {
        out.push_str(std::str::from_utf8(chunk).expect("base64 is ASCII"));
        out.push('\n');
    }
    out.push_str(&format!("-----END ABEM {}-----\n", T::KIND));
    out
}

/// Decodes armored text produced by [`encode_armored`]. Leading and trailing
/// whitespace is tolerated; the banner kind must match the requested type.
pub fn decode_armored<T: WireObject>(text: &str) -> Result<T, CodecError> {
    let begin = format!("-----BEGIN ABEM {}-----", T::KIND);
    let end = format!("-----END ABEM {}-----", T::KIND);
    let mut lines = text.trim().lines();
    match lines.next() {
        Some(line) if line.trim_end() == begin => {}
        Some(line) => {
            return Err(CodecError::BadArmor(format!(
                "expected '{begin}', got '{}'",
                line.trim_end()
            )))
        }
        None => return Err(CodecError::BadArmor("empty input".into())),
    }
    let mut b64 = String::new();
    let mut saw_end = false;
    for line in lines {
        let line = line.trim();
        if line == end {
            saw_end = true;
            break;
        }
        b64.push_str(line);
    }
    if !saw_end {
        return Err(CodecError::BadArmor(format!("missing '{end}'")));
    }
    let raw = BASE64
        .decode(b64.as_bytes())
        .map_err(|e| CodecError::BadArmor(format!("base64: {e}")))?;
    decode(&raw)
}

/// True when the input looks like armored text rather than a binary object.
pub fn looks_armored(data: &[u8]) -> bool {
    data.trim_ascii_start().starts_with(b"-----BEGIN ABEM ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bilinear::random_scalar;
    use crate::outsource::{gen_tk, transform};
    use crate::scheme::{build_em, em_encrypt, keygen, setup};
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn rng() -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(0xc0dec)
    }

    struct Objects {
        pk: PublicKey,
        mk: MasterKey,
        sk: SecretKey,
        em: EncryptionMachine,
        ct: Ciphertext,
        tk: TransformKey,
        rk: RetrievalKey,
        partial: PartialDecryption,
    }

    fn objects(rng: &mut ChaCha20Rng) -> Objects {
        let (pk, mk) = setup(rng).unwrap();
        let sk = keygen(&pk, &mk, &["A", "B", "C"], rng).unwrap();
        let tree = PolicyAst::parse("(A and B) or 2 of (B, C, D)").unwrap();
        let em = build_em(&pk, &tree, rng).unwrap();
        let ct = em_encrypt(&pk, &em, b"codec payload", rng).unwrap();
        let (tk, rk) = gen_tk(&pk, &sk, rng).unwrap();
        let partial = transform(&pk, &tk, &ct).unwrap();
        Objects {
            pk,
            mk,
            sk,
            em,
            ct,
            tk,
            rk,
            partial,
        }
    }

    fn round_trip<T: WireObject + PartialEq + std::fmt::Debug>(obj: &T) {
        let bytes = encode(obj);
        let back: T = decode(&bytes).unwrap();
        assert_eq!(&back, obj);
        // Canonical: re-encoding reproduces the exact bytes.
        assert_eq!(encode(&back), bytes);
        let armored = encode_armored(obj);
        let back: T = decode_armored(&armored).unwrap();
        assert_eq!(&back, obj);
    }

    #[test]
    fn every_object_kind_round_trips() {
        let mut rng = rng();
        let o = objects(&mut rng);
        round_trip(&o.pk);
        round_trip(&o.mk);
        round_trip(&o.sk);
        round_trip(&o.em);
        round_trip(&o.ct);
        round_trip(&o.tk);
        round_trip(&o.rk);
        round_trip(&o.partial);
    }

    #[test]
    fn decoded_objects_still_work() {
        let mut rng = rng();
        let o = objects(&mut rng);
        let pk: PublicKey = decode(&encode(&o.pk)).unwrap();
        let sk: SecretKey = decode(&encode(&o.sk)).unwrap();
        let ct: Ciphertext = decode(&encode(&o.ct)).unwrap();
        let opened = crate::scheme::decrypt(&pk, &sk, &ct).unwrap();
        assert_eq!(opened.message, b"codec payload");
    }

    #[test]
    fn envelope_errors_are_distinct() {
        let mut rng = rng();
        let o = objects(&mut rng);
        let good = encode(&o.pk);

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert_eq!(
            decode::<PublicKey>(&bad_magic).unwrap_err(),
            CodecError::BadMagic
        );

        let mut bad_version = good.clone();
        bad_version[4] = 0x7F;
        assert_eq!(
            decode::<PublicKey>(&bad_version).unwrap_err(),
            CodecError::UnsupportedVersion(0x7F)
        );

        assert_eq!(
            decode::<MasterKey>(&good).unwrap_err(),
            CodecError::WrongObjectTag {
                expected: TAG_MASTER_KEY,
                got: TAG_PUBLIC_KEY
            }
        );

        let mut bad_group = good.clone();
        bad_group[6] = 0x09;
        assert_eq!(
            decode::<PublicKey>(&bad_group).unwrap_err(),
            CodecError::UnsupportedGroup(0x09)
        );

        let mut trailing = good.clone();
        trailing.push(0);
        assert_eq!(
            decode::<PublicKey>(&trailing).unwrap_err(),
            CodecError::TrailingBytes
        );
    }

    #[test]
    fn every_truncation_is_rejected_without_panicking() {
        let mut rng = rng();
        let o = objects(&mut rng);
        let good = encode(&o.rk);
        for n in 0..good.len() {
            assert!(
                decode::<RetrievalKey>(&good[..n]).is_err(),
                "prefix of length {n} accepted"
            );
        }
    }

    #[test]
    fn corrupted_elements_are_rejected() {
        let mut rng = rng();
        let o = objects(&mut rng);
        let good = encode(&o.rk);
        // Overwrite the first element's bytes with an invalid encoding.
        let mut bad = good.clone();
        for b in &mut bad[12..12 + RIGHT_ELEMENT_BYTES] {
            *b = 0xAB;
        }
        assert!(matches!(
            decode::<RetrievalKey>(&bad).unwrap_err(),
            CodecError::InvalidElement { field: 0x01, .. }
        ));
    }

    #[test]
    fn field_order_is_enforced() {
        let mut rng = rng();
        let o = objects(&mut rng);
        let good = encode(&o.rk);
        let mut swapped = good.clone();
        // Field tags sit at fixed offsets for this object: envelope is 7
        // bytes, then tag/len/value with 96-byte values.
        assert_eq!(swapped[7], 0x01);
        swapped[7] = 0x02;
        assert!(matches!(
            decode::<RetrievalKey>(&swapped).unwrap_err(),
            CodecError::UnexpectedField {
                expected: 0x01,
                got: 0x02
            }
        ));
    }

    #[test]
    fn wrong_field_length_is_rejected() {
        let mut rng = rng();
        let o = objects(&mut rng);
        let mut bytes = encode(&o.mk);
        // Grow the declared length of the beta field without adding bytes;
        // the field reader must flag the length, not misparse downstream.
        bytes[11] = 0x40;
        let err = decode::<MasterKey>(&bytes).unwrap_err();
        assert!(
            matches!(
                err,
                CodecError::FieldLength { field: 0x01, .. } | CodecError::Truncated
            ),
            "got {err:?}"
        );
    }

    #[test]
    fn policy_trees_round_trip_inside_objects() {
        let mut rng = rng();
        let (pk, _) = setup(&mut rng).unwrap();
        for policy in [
            "A",
            "A and B and C",
            "A or B or C",
            "3 of (A, B, C, D, E)",
            "2 of (A and B, C or D, 2 of (E, F, G))",
            "(A or (B and (C or (D and E))))",
        ] {
            let tree = PolicyAst::parse(policy).unwrap();
            let em = build_em(&pk, &tree, &mut rng).unwrap();
            let back: EncryptionMachine = decode(&encode(&em)).unwrap();
            assert_eq!(back.tree, tree, "policy {policy}");
        }
    }

    #[test]
    fn policy_decode_rejects_structural_garbage() {
        let mut rng = rng();
        let (pk, _) = setup(&mut rng).unwrap();
        let tree = PolicyAst::parse("A and B").unwrap();
        let em = build_em(&pk, &tree, &mut rng).unwrap();
        let good = encode(&em);

        // The policy field starts after the envelope (7 bytes) and field
        // header (5 bytes). Its first byte is the root node kind.
        let mut bad_kind = good.clone();
        assert_eq!(bad_kind[12], 0x01);
        bad_kind[12] = 0x02;
        assert!(matches!(
            decode::<EncryptionMachine>(&bad_kind).unwrap_err(),
            CodecError::InvalidPolicy(_)
        ));

        // Threshold k = 0 fails validation.
        let mut zero_k = good.clone();
        assert_eq!(&zero_k[13..17], &[0, 0, 0, 2]);
        zero_k[13..17].copy_from_slice(&[0, 0, 0, 0]);
        assert!(matches!(
            decode::<EncryptionMachine>(&zero_k).unwrap_err(),
            CodecError::InvalidPolicy(_)
        ));
    }

    #[test]
    fn unnormalized_attributes_are_rejected() {
        let mut rng = rng();
        let o = objects(&mut rng);
        let good = encode(&o.sk);
        // Component attrs are one-byte strings here; patch "A" to " " is a
        // length-preserving corruption into an unnormalized (and empty
        // after trim) attribute.
        let pos = good
            .windows(6)
            .position(|w| w == [0x03, 0, 0, 0, 1, b'A'])
            .expect("attr field present");
        let mut bad = good.clone();
        bad[pos + 5] = b' ';
        assert!(matches!(
            decode::<SecretKey>(&bad).unwrap_err(),
            CodecError::UnnormalizedAttribute
        ));
    }

    #[test]
    fn unsorted_components_are_rejected() {
        let mut rng = rng();
        let o = objects(&mut rng);
        // Swap two single-byte attribute names in the encoding ("A" -> "B",
        // "B" -> "A") to break the strict ordering.
        let good = encode(&o.sk);
        let pos_a = good
            .windows(6)
            .position(|w| w == [0x03, 0, 0, 0, 1, b'A'])
            .unwrap();
        let pos_b = good
            .windows(6)
            .position(|w| w == [0x03, 0, 0, 0, 1, b'B'])
            .unwrap();
        let mut bad = good.clone();
        bad[pos_a + 5] = b'B';
        bad[pos_b + 5] = b'A';
        assert!(matches!(
            decode::<SecretKey>(&bad).unwrap_err(),
            CodecError::UnsortedComponents
        ));
    }

    #[test]
    fn leaf_count_mismatch_is_rejected() {
        let mut rng = rng();
        let o = objects(&mut rng);
        let good = encode(&o.ct);
        // The leaf count field (tag 0x05, 4-byte value) declares 5 leaves;
        // bump it to 6 with no extra leaf bytes present.
        let n = o.ct.leaves.len();
        assert_eq!(n, 5);
        let pos = good
            .windows(9)
            .position(|w| w[..5] == [0x05, 0, 0, 0, 4] && w[5..] == [0, 0, 0, n as u8])
            .expect("count field present");
        let mut bad = good.clone();
        bad[pos + 8] = n as u8 + 1;
        assert!(matches!(
            decode::<Ciphertext>(&bad).unwrap_err(),
            CodecError::LeafCountMismatch {
                expected: 5,
                got: 6
            }
        ));
    }

    #[test]
    fn short_dem_blobs_are_rejected() {
        let mut rng = rng();
        let o = objects(&mut rng);
        let mut ct = o.ct.clone();
        ct.dem = vec![0u8; MIN_DEM_LEN - 1];
        let bytes = encode(&ct);
        assert_eq!(
            decode::<Ciphertext>(&bytes).unwrap_err(),
            CodecError::DemTooShort
        );
    }

    #[test]
    fn armor_has_the_documented_banner_and_width() {
        let mut rng = rng();
        let o = objects(&mut rng);
        let armored = encode_armored(&o.pk);
        let lines: Vec<&str> = armored.lines().collect();
        assert_eq!(lines.first(), Some(&"-----BEGIN ABEM PUBLIC KEY-----"));
        assert_eq!(lines.last(), Some(&"-----END ABEM PUBLIC KEY-----"));
        for body_line in &lines[1..lines.len() - 1] {
            assert!(body_line.len() <= ARMOR_WIDTH);
            assert!(body_line
                .bytes()
                .all(|b| b.is_ascii_alphanumeric() || b == b'+' || b == b'/' || b == b'='));
        }
        assert!(looks_armored(armored.as_bytes()));
        assert!(!looks_armored(&encode(&o.pk)));
    }

    #[test]
    fn armor_rejects_banner_and_base64_damage() {
        let mut rng = rng();
        let o = objects(&mut rng);
        let armored = encode_armored(&o.rk);

        // Kind mismatch: retrieval key armor decoded as a public key.
        assert!(matches!(
            decode_armored::<PublicKey>(&armored).unwrap_err(),
            CodecError::BadArmor(_)
        ));
        // Missing END line.
        let cut = armored.lines().take(2).collect::<Vec<_>>().join("\n");
        assert!(matches!(
            decode_armored::<RetrievalKey>(&cut).unwrap_err(),
            CodecError::BadArmor(_)
        ));
        // Corrupt a base64 character in the first body line.
        let mut lines: Vec<String> = armored.lines().map(String::from).collect();
        lines[1].replace_range(0..1, "*");
        let bad = lines.join("\n");
        assert!(decode_armored::<RetrievalKey>(&bad).is_err());
        // Leading and trailing whitespace is fine.
        let padded = format!("\n\n  {armored}\n\n");
        assert_eq!(decode_armored::<RetrievalKey>(&padded).unwrap(), o.rk);
    }

    #[test]
    fn random_blobs_never_decode_and_never_panic() {
        let mut rng = rng();
        for i in 0..2000 {
            let len = rng.gen_range(0..300);
            let mut blob = vec![0u8; len];
            rng.fill(&mut blob[..]);
            // Half the blobs get a valid envelope prefix to push fuzzing
            // past the magic check.
            if i % 2 == 0 && blob.len() >= 7 {
                blob[..4].copy_from_slice(&MAGIC);
                blob[4] = VERSION;
                blob[5] = TAG_RETRIEVAL_KEY;
                blob[6] = GROUP_BLS12_381;
            }
            assert!(decode::<RetrievalKey>(&blob).is_err());
        }
    }

    #[test]
    fn structured_fuzz_round_trips_random_valid_objects() {
        // Random valid objects built from small element pools; group
        // operations only, no per-object exponentiations, so hundreds of
        // iterations stay cheap.
        let mut rng = rng();
        let scalars: Vec<Scalar> = (0..8).map(|_| random_scalar(&mut rng).unwrap()).collect();
        let lefts: Vec<LeftElement> = scalars
            .iter()
            .map(|s| LeftElement::generator().pow(s))
            .collect();
        let rights: Vec<RightElement> = scalars
            .iter()
            .map(|s| RightElement::generator().pow(s))
            .collect();
        let targets: Vec<TargetElement> = scalars
            .iter()
            .map(|s| TargetElement::generator().pow(s))
            .collect();

        fn random_tree(rng: &mut ChaCha20Rng, depth: u32) -> PolicyAst {
            if depth >= 4 || rng.gen_bool(0.4) {
                return PolicyAst::Leaf(format!("attr{}", rng.gen_range(0..1000)));
            }
            let n = rng.gen_range(2..=4);
            let children = (0..n)
                .map(|_| random_tree(rng, depth + 1))
                .collect::<Vec<_>>();
            PolicyAst::Threshold {
                k: rng.gen_range(1..=n),
                children,
            }
        }

        for _ in 0..150 {
            let tree = random_tree(&mut rng, 1);
            let n_leaves = tree.leaf_count();
            let pick_l = |rng: &mut ChaCha20Rng| lefts.choose(rng).unwrap().clone();
            let pick_r = |rng: &mut ChaCha20Rng| rights.choose(rng).unwrap().clone();
            let ct = Ciphertext {
                tree: tree.clone(),
                c_tilde: targets.choose(&mut rng).unwrap().clone(),
                c0: pick_l(&mut rng),
                c1: pick_l(&mut rng),
                leaves: (0..n_leaves)
                    .map(|_| CiphertextLeaf {
                        c: pick_l(&mut rng),
                        c_prime: pick_l(&mut rng),
                    })
                    .collect(),
                dem: {
                    let mut dem = vec![0u8; rng.gen_range(MIN_DEM_LEN..200)];
                    rng.fill(&mut dem[..]);
                    dem
                },
            };
            round_trip(&ct);
            let em = EncryptionMachine {
                tree,
                s: *scalars.choose(&mut rng).unwrap(),
                leaves: (0..n_leaves)
                    .map(|_| EmLeaf {
                        c: pick_l(&mut rng),
                        c_prime: pick_l(&mut rng),
                        attr_elem: MirroredElement::from_parts(pick_l(&mut rng), pick_r(&mut rng)),
                    })
                    .collect(),
            };
            round_trip(&em);
        }
    }

    #[test]
    fn node_budget_blocks_pathological_trees() {
        // A hand-built encoding declaring a huge child count must be
        // rejected by the budget or by truncation, never by exhausting
        // memory.
        let mut body = Vec::new();
        body.push(NODE_GATE);
        body.extend_from_slice(&1u32.to_be_bytes());
        body.extend_from_slice(&u32::MAX.to_be_bytes());
        let mut field = Vec::new();
        put_field(&mut field, 0x01, &body);
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&MAGIC);
        bytes.push(VERSION);
        bytes.push(TAG_CIPHERTEXT);
        bytes.push(GROUP_BLS12_381);
        bytes.extend_from_slice(&field);
        assert!(decode::<Ciphertext>(&bytes).is_err());
    }
}
