//! Consistent hashing: balance across members and how few keys move on a join.

use std::collections::BTreeMap;

use annakv::ring::{HashRing, RingMember};

fn main() {
    let mut ring = HashRing::new();
    for i in 0..4 {
        ring.insert(&RingMember::new(format!("n{i}"), 100)).unwrap();
    }
    let keys: Vec<String> = (0..20_000).map(|i| format!("key{i}")).collect();

    let mut load: BTreeMap<&str, usize> = BTreeMap::new();
    for k in &keys {
        *load.entry(ring.owner(k).unwrap()).or_default() += 1;
    }
    println!("owners over {} keys: {load:?}", keys.len());
    println!("replica set of key7: {:?}", ring.lookup("key7", 3).unwrap());

    let grown = ring.inserted(&RingMember::new("n4", 100)).unwrap();
    let moved = keys
        .iter()
        .filter(|k| ring.owner(k).unwrap() != grown.owner(k).unwrap())
        .count();
    println!(
        "adding a 5th member moved {moved} keys ({:.1}%, ideal 20%)",
        100.0 * moved as f64 / keys.len() as f64
    );
    // every moved key now belongs to the newcomer
    assert!(keys
        .iter()
        .filter(|k| ring.owner(k).unwrap() != grown.owner(k).unwrap())
        .all(|k| grown.owner(k).unwrap() == "n4"));

    let text = grown.encode_membership();
    println!("membership record: {}", text.trim().replace('\n', "; "));
}
