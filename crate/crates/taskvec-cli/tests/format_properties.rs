// SPDX-License-Identifier: MIT OR Apache-2.0

//! Properties of the TVT1 container over arbitrary tensor maps: round trips
//! preserve every payload bit, re-serializing a parsed file reproduces the
//! bytes, and any single-byte change, truncation, or trailing garbage makes
//! the parse fail.

use std::collections::BTreeMap;

use proptest::prelude::*;
use taskvec_cli::tvt;
use taskvec_core::Tensor;

/// Finite values of every bit class: both signs, normals, subnormals, and
/// both zeros. Non-finite entries are rejected at tensor construction.
fn finite() -> impl Strategy<Value = f64> {
    use proptest::num::f64;
    f64::POSITIVE | f64::NEGATIVE | f64::NORMAL | f64::SUBNORMAL | f64::ZERO
}

/// Tensors of zero to three axes, extents up to four. A zero extent yields
/// an empty payload; no axes at all yields a scalar.
fn tensor() -> impl Strategy<Value = Tensor> {
    prop::collection::vec(0usize..=4, 0..=3).prop_flat_map(|dims| {
        let len: usize = dims.iter().product();
        prop::collection::vec(finite(), len..=len)
            .prop_map(move |data| Tensor::new(dims.clone(), data).unwrap())
    })
}

fn tensor_map() -> impl Strategy<Value = BTreeMap<String, Tensor>> {
    prop::collection::btree_map(any::<String>(), tensor(), 0..=4)
}

proptest! {
    #[test]
    fn round_trips_preserve_every_bit(map in tensor_map()) {
        let bytes = tvt::to_bytes(&map);
        let back = tvt::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.len(), map.len());
        for (name, t) in &map {
            let r = &back[name];
            prop_assert_eq!(r.dims(), t.dims());
            for (a, b) in t.data().iter().zip(r.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        prop_assert_eq!(tvt::to_bytes(&back), bytes);
    }

    #[test]
    fn any_single_byte_change_is_rejected(
        map in tensor_map(),
        pos in any::<prop::sample::Index>(),
        delta in 1u8..,
    ) {
        let mut bytes = tvt::to_bytes(&map);
        let pos = pos.index(bytes.len());
        bytes[pos] ^= delta;
        prop_assert!(
            tvt::from_bytes(&bytes).is_err(),
            "change at byte {} went unnoticed",
            pos
        );
    }

    #[test]
    fn any_truncation_is_rejected(map in tensor_map(), keep in any::<prop::sample::Index>()) {
        let bytes = tvt::to_bytes(&map);
        let keep = keep.index(bytes.len());
        prop_assert!(tvt::from_bytes(&bytes[..keep]).is_err());
    }

    #[test]
    fn trailing_garbage_is_rejected(
        map in tensor_map(),
        extra in prop::collection::vec(any::<u8>(), 1..=24),
    ) {
        let mut bytes = tvt::to_bytes(&map);
        bytes.extend_from_slice(&extra);
        prop_assert!(tvt::from_bytes(&bytes).is_err());
    }
}
