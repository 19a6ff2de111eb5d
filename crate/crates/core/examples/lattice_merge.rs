//! Last-writer-wins cells: merge is order-free and duplicate-safe.

use annakv::lattice::{merge, merge_all, LwwCell, Stamper};

fn main() {
    let mut a = Stamper::new(1);
    let mut b = Stamper::new(2);

    // same millisecond on two nodes: node_seq breaks the tie
    let x = LwwCell::new(a.stamp(1_000), &b"from-a"[..]);
    let y = LwwCell::new(b.stamp(1_000), &b"from-b"[..]);
    let later = LwwCell::new(a.stamp(1_005), &b"later"[..]);
    let gone = LwwCell::tombstone(b.stamp(1_003));

    let ab = merge(&x, &y);
    let ba = merge(&y, &x);
    assert_eq!(ab, ba);
    println!(
        "tie at 1000 ms resolves to {:?}",
        String::from_utf8_lossy(ab.payload())
    );

    // any delivery order, with duplicates, lands on the same cell
    let orders: [&[&LwwCell]; 3] = [
        &[&x, &y, &gone, &later],
        &[&later, &later, &gone, &x, &y],
        &[&gone, &y, &x, &later, &y],
    ];
    for cells in orders {
        let m = merge_all(cells.iter().copied()).unwrap();
        println!(
            "winner {:?} at {:?}",
            String::from_utf8_lossy(m.payload()),
            m.ts()
        );
    }

    let bytes = later.encode();
    assert_eq!(LwwCell::decode(&bytes).unwrap(), later);
    println!(
        "encoded size {} bytes, tombstone? {}",
        bytes.len(),
        gone.is_tombstone()
    );
}
