//! Sub-byte packing and the XNOR-popcount dot product.
//!
//! Run with: cargo run --example pack_bits

use subbyte_har::engine::binary_dot;
use subbyte_har::quantize::{pack, pack_signed, unpack, unpack_signed};

fn main() {
    // Unsigned codes pack little-element-first within each byte.
    let values = [0x1u8, 0x2, 0xF, 0x0];
    let buf = pack(&values, 4).unwrap();
    println!("pack {values:?} @4-bit -> bytes {:02X?}", buf.bytes);
    println!("unpack -> {:?}", unpack(&buf).unwrap());

    // Signed values are stored offset by 2^(b-1).
    let signed = [3i32, -4, 0, -1];
    let buf = pack_signed(&signed, 4).unwrap();
    println!("pack_signed {signed:?} @4-bit -> bytes {:02X?}", buf.bytes);
    println!("unpack_signed -> {:?}", unpack_signed(&buf).unwrap());

    // Binary vectors: bit 1 means +1. XNOR + popcount gives the ±1 dot.
    let a = pack(&[1, 0, 1, 1, 0, 0, 1, 0], 1).unwrap();
    let b = pack(&[1, 1, 1, 0, 0, 1, 1, 0], 1).unwrap();
    let dot = binary_dot(&a, &b, 8).unwrap();
    println!("binary_dot(a, b, 8) = {dot}");
    assert_eq!(dot, 2); // 5 agreements, 3 disagreements -> 5 - 3

    // Out-of-range values are rejected with the offending index.
    let err = pack(&[0, 9, 1], 2).unwrap_err();
    println!("range check: {err}");
}
