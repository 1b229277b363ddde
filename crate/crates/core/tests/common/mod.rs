#![allow(dead_code)]

use proptest::prelude::*;
use semsig::{alphabet_default, BuildParams, DatabaseRecord, GeoPoint, Signature, SignatureDatabase};

pub const CASES: u32 = 256;

pub const PARIS: GeoPoint = GeoPoint {
    lon: 2.3522,
    lat: 48.8566,
};

pub fn symbols() -> Vec<u8> {
    alphabet_default().symbols().collect()
}

/// Sweep-ordered signature over the default alphabet.
pub fn signature(max_len: usize, levels: u16) -> impl Strategy<Value = Signature> {
    prop::collection::vec((prop::sample::select(symbols()), 0..levels), 0..=max_len).prop_map(
        |mut pairs| {
            pairs.sort_by_key(|p| p.1);
            let (types, bins) = pairs.into_iter().unzip();
            Signature::new(types, bins).unwrap()
        },
    )
}

/// Signature over a three-class alphabet, so that collisions are common.
pub fn narrow_signature(max_len: usize) -> impl Strategy<Value = Signature> {
    prop::collection::vec((prop::sample::select(vec![b'B', b'D', b'G']), 0u16..4), 0..=max_len)
        .prop_map(|mut pairs| {
            pairs.sort_by_key(|p| p.1);
            let (types, bins) = pairs.into_iter().unzip();
            Signature::new(types, bins).unwrap()
        })
}

pub fn database_from(sigs: Vec<Signature>, ids: Vec<u64>) -> SignatureDatabase {
    let records = sigs
        .into_iter()
        .zip(ids)
        .map(|(signature, cell_id)| DatabaseRecord {
            cell_id,
            cell_center: GeoPoint {
                lon: PARIS.lon + (cell_id % 50) as f64 * 1e-4,
                lat: PARIS.lat + (cell_id / 50) as f64 * 1e-4,
            },
            signature,
        })
        .collect();
    SignatureDatabase::new(BuildParams::default(), PARIS, alphabet_default(), true, records).unwrap()
}

/// Database of 1..=max_records narrow signatures with distinct shuffled cell ids.
pub fn database(max_records: usize) -> impl Strategy<Value = SignatureDatabase> {
    prop::collection::vec(narrow_signature(8), 1..=max_records)
        .prop_flat_map(|sigs| {
            let n = sigs.len();
            (Just(sigs), Just((0..(3 * n as u64)).collect::<Vec<_>>()).prop_shuffle())
        })
        .prop_map(|(sigs, ids)| database_from(sigs, ids))
}
