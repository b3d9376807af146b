//! Per-tuple signatures and key distribution through the graph itself.
//! Signing never changes a tuple's content id, verification classifies
//! tuples as Valid / Invalid / Unsigned / UnknownSigner, and verifying
//! keys travel as ordinary `has-key` tuples.

use gin::client::{extract_key_announcements, key_announcement};
use gin::model::{
    sign_tuple, tuple_id, uuid_from_label, verify_tuple, KeyRegistry, KeyedSha256, Tuple7,
    VerifyStatus,
};

fn main() {
    let scheme = KeyedSha256;
    let gauge = uuid_from_label("example:gauge-7");
    let reading = uuid_from_label("example:reading");
    let level = uuid_from_label("example:level-3");
    let catchment = uuid_from_label("example:catchment");

    // The gauge operator holds a keypair; the signer id is just another
    // vertex in the graph.
    let pair = KeyedSha256::keypair_from_seed(b"example: gauge operator");
    let unsigned = Tuple7::new(gauge, reading, level, catchment, 1_700_000);
    let signed = sign_tuple(&unsigned.clone().with_signer(gauge), &pair.secret, &scheme).unwrap();

    // The content id covers source..signer but not the signature, so
    // signing is not a fork: both forms name the same statement.
    assert_ne!(tuple_id(&unsigned), tuple_id(&signed)); // signer differs
    let resigned = sign_tuple(&signed, &pair.secret, &scheme).unwrap();
    assert_eq!(tuple_id(&signed), tuple_id(&resigned));
    println!("statement id {}…", &tuple_id(&signed).to_hex()[..16]);

    // A verifier that has never heard of the signer cannot vouch for it.
    let mut registry = KeyRegistry::new();
    assert_eq!(
        verify_tuple(&signed, &registry, &scheme),
        VerifyStatus::UnknownSigner
    );
    println!("before key exchange: UnknownSigner");

    // Keys are distributed in-band: a `has-key` tuple carries the 32
    // key bytes split across the target and context slots.
    let announcement = key_announcement(gauge, &pair.public, 1_600_000).unwrap();
    let learned = extract_key_announcements(&[announcement]);
    for (signer, key) in learned {
        registry.register(signer, key);
    }
    assert_eq!(verify_tuple(&signed, &registry, &scheme), VerifyStatus::Valid);
    println!("after learning the key:  Valid");

    // Tampering with any signed field breaks verification.
    let mut forged = signed.clone();
    forged.target = uuid_from_label("example:level-9");
    assert_eq!(
        verify_tuple(&forged, &registry, &scheme),
        VerifyStatus::Invalid
    );
    println!("tampered copy:           Invalid");

    // Unsigned statements stay publishable; they are simply unattested.
    assert_eq!(
        verify_tuple(&unsigned, &registry, &scheme),
        VerifyStatus::Unsigned
    );
    println!("unsigned original:       Unsigned");
}
