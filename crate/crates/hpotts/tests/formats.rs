use hpotts::pgm::label_bytes;
use hpotts::tensor::{read_grid, write_grid, GridTensor};
use hpotts_core::{ImageGrid, LabelField};
use proptest::prelude::*;

proptest! {
    #[test]
    fn image_bits_survive(h in 1usize..12, w in 1usize..12, c in 1usize..4, seed in any::<u64>()) {
        let data: Vec<f64> = (0..h * w * c).map(|i| f64::from_bits(seed.wrapping_mul(i as u64 + 1) >> 2)).collect();
        let t: GridTensor = ImageGrid::new(h, w, c, data).unwrap().into();
        let mut buf = Vec::new();
        write_grid(&mut buf, &t).unwrap();
        prop_assert_eq!(read_grid(buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn truncated_payload_is_rejected(h in 1usize..8, w in 1usize..8, cut in 1usize..8) {
        let t: GridTensor = LabelField::uniform(h, w, 3, 1).unwrap().into();
        let mut buf = Vec::new();
        write_grid(&mut buf, &t).unwrap();
        buf.truncate(buf.len() - cut.min(h * w));
        prop_assert!(read_grid(buf.as_slice()).is_err());
    }

    #[test]
    fn label_gray_levels_span_range(k in 2usize..20) {
        let labels = LabelField::new(1, k, k, (0..k).collect()).unwrap();
        let bytes = label_bytes(&labels);
        prop_assert_eq!(bytes[0], 0);
        prop_assert_eq!(bytes[k - 1], 255);
        prop_assert!(bytes.windows(2).all(|p| p[0] < p[1]));
    }
}
