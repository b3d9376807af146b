//! Pluggable detached signatures over canonical tuple bytes.
//!
//! The built-in scheme is a deterministic keyed hash (HMAC-SHA256 with
//! the verifying key equal to the signing key). It gives the properties
//! the rest of the system relies on — same key and bytes always produce
//! the same signature, and any perturbation of the signed bytes fails
//! verification — without pulling in asymmetric crypto. Real deployments
//! can plug in a public-key scheme behind [`SignatureScheme`].

use super::{canonical_serialize, Tuple7, Uuid};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use thiserror::Error;

/// Private signing key bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecretKey(pub Vec<u8>);

/// Public verifying key bytes, as registered for a signer id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicKey(pub Vec<u8>);

#[derive(Debug, Clone)]
pub struct KeyPair {
    pub secret: SecretKey,
    pub public: PublicKey,
}

/// Signature capability. Implementations must be deterministic: the same
/// key and message always produce the same signature bytes.
pub trait SignatureScheme: Send + Sync {
    fn scheme_id(&self) -> &'static str;
    fn sign(&self, key: &SecretKey, message: &[u8]) -> Vec<u8>;
    fn verify(&self, key: &PublicKey, message: &[u8], signature: &[u8]) -> bool;
}

/// HMAC-SHA256 per RFC 2104 over a 64-byte block.
pub fn hmac_sha256(key: &[u8], message: &[u8]) -> [u8; 32] {
    let mut block = [0u8; 64];
    if key.len() > 64 {
        let digest = Sha256::digest(key);
        block[..32].copy_from_slice(&digest);
    } else {
        block[..key.len()].copy_from_slice(key);
    }
    let mut ipad = [0x36u8; 64];
    let mut opad = [0x5cu8; 64];
    for i in 0..64 {
        ipad[i] ^= block[i];
        opad[i] ^= block[i];
    }
    let inner = Sha256::new()
        .chain_update(ipad)
        .chain_update(message)
        .finalize();
    Sha256::new()
        .chain_update(opad)
        .chain_update(inner)
        .finalize()
        .into()
}

/// The built-in deterministic scheme. Symmetric: the registered public
/// key is the same 32 bytes as the signing key.
#[derive(Debug, Clone, Copy, Default)]
pub struct KeyedSha256;

impl KeyedSha256 {
    /// Derives a key pair from arbitrary seed bytes.
    pub fn keypair_from_seed(seed: &[u8]) -> KeyPair {
        let secret = Sha256::digest(seed).to_vec();
        KeyPair {
            public: PublicKey(secret.clone()),
            secret: SecretKey(secret),
        }
    }
}

impl SignatureScheme for KeyedSha256 {
    fn scheme_id(&self) -> &'static str {
        "hmac-sha256"
    }

    fn sign(&self, key: &SecretKey, message: &[u8]) -> Vec<u8> {
        hmac_sha256(&key.0, message).to_vec()
    }

    fn verify(&self, key: &PublicKey, message: &[u8], signature: &[u8]) -> bool {
        hmac_sha256(&key.0, message).as_slice() == signature
    }
}

/// Resolves a signer id to its registered verifying key.
pub trait KeyLookup {
    fn public_key_for(&self, signer: &Uuid) -> Option<&PublicKey>;
}

/// Plain map-backed registry.
#[derive(Debug, Clone, Default)]
pub struct KeyRegistry {
    keys: BTreeMap<Uuid, PublicKey>,
}

impl KeyRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, signer: Uuid, key: PublicKey) {
        self.keys.insert(signer, key);
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Uuid, &PublicKey)> {
        self.keys.iter()
    }
}

impl KeyLookup for KeyRegistry {
    fn public_key_for(&self, signer: &Uuid) -> Option<&PublicKey> {
        self.keys.get(signer)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SignError {
    #[error("tuple has no signer to sign for")]
    MissingSigner,
}

/// Outcome of verifying a tuple against a key registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyStatus {
    Valid,
    Unsigned,
    Invalid,
    UnknownSigner,
}

/// Signs the first six fields of `unsigned` and returns the completed
/// tuple; all other fields are unchanged. Any existing signature is
/// replaced.
pub fn sign_tuple(
    unsigned: &Tuple7,
    key: &SecretKey,
    scheme: &dyn SignatureScheme,
) -> Result<Tuple7, SignError> {
    if unsigned.signer.is_none() {
        return Err(SignError::MissingSigner);
    }
    let message = canonical_serialize(unsigned, false);
    let mut signed = unsigned.clone();
    signed.signature = Some(scheme.sign(key, &message));
    Ok(signed)
}

/// Verifies a tuple's provenance. `Unsigned` when no signer is present;
/// `UnknownSigner` when the registry has no key for it; a present signer
/// with a missing signature is `Invalid`.
pub fn verify_tuple(
    t: &Tuple7,
    registry: &dyn KeyLookup,
    scheme: &dyn SignatureScheme,
) -> VerifyStatus {
    let Some(signer) = t.signer else {
        return VerifyStatus::Unsigned;
    };
    let Some(key) = registry.public_key_for(&signer) else {
        return VerifyStatus::UnknownSigner;
    };
    let Some(sig) = &t.signature else {
        return VerifyStatus::Invalid;
    };
    let message = canonical_serialize(t, false);
    if scheme.verify(key, &message, sig) {
        VerifyStatus::Valid
    } else {
        VerifyStatus::Invalid
    }
}
