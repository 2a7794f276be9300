use proptest::prelude::*;
use utilgate::utct::{decode, encode, FormatError, HEADER_LEN};
use utilgate_core::{Tensor, TensorData};

fn tensor_strategy() -> impl Strategy<Value = Tensor> {
    let shape = proptest::collection::vec(1usize..6, 1..=4);
    (shape, 0u8..3).prop_flat_map(|(shape, dtype)| {
        let n: usize = shape.iter().product();
        let data = match dtype {
            0 => proptest::collection::vec(
                prop_oneof![
                    any::<f32>().prop_filter("finite", |v| v.is_finite()),
                    Just(-0.0f32),
                    Just(f32::MIN_POSITIVE / 2.0),
                ],
                n,
            )
            .prop_map(TensorData::F32)
            .boxed(),
            1 => proptest::collection::vec(any::<i32>(), n).prop_map(TensorData::I32).boxed(),
            _ => proptest::collection::vec(any::<u8>(), n).prop_map(TensorData::U8).boxed(),
        };
        data.prop_map(move |d| Tensor::new(shape.clone(), d).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn round_trip_is_bit_exact(t in tensor_strategy()) {
        let bytes = encode(&t);
        prop_assert_eq!(bytes.len(), HEADER_LEN + t.len() * t.dtype().size());
        let back = decode(&bytes).unwrap();
        prop_assert!(back.bit_eq(&t));
        prop_assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn every_truncation_is_rejected(t in tensor_strategy(), cut in any::<prop::sample::Index>()) {
        let bytes = encode(&t);
        let at = cut.index(bytes.len());
        prop_assert!(matches!(decode(&bytes[..at]), Err(FormatError::Size(_))));
    }
}
