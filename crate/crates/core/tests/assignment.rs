mod common;

use common::brute_force_max;
use ndarray::Array2;
use proptest::prelude::*;
use ucowod::hungarian_assign;

fn gain_matrix() -> impl Strategy<Value = Array2<f64>> {
    (1usize..=6, 1usize..=6).prop_flat_map(|(r, c)| {
        prop::collection::vec(-1.0f64..1.0, r * c).prop_map(move |v| Array2::from_shape_vec((r, c), v).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn matches_exhaustive_search(gain in gain_matrix()) {
        let a = hungarian_assign(gain.view()).unwrap();
        prop_assert_eq!(a.total, brute_force_max(gain.view()));
        // the reported total is the gain of the reported assignment
        let recomputed: f64 = a.row_to_col.iter().enumerate()
            .filter_map(|(i, c)| c.map(|j| gain[[i, j]]))
            .sum();
        prop_assert_eq!(recomputed, a.total);
    }

    #[test]
    fn assignment_is_injective(gain in gain_matrix()) {
        let a = hungarian_assign(gain.view()).unwrap();
        let mut cols: Vec<usize> = a.row_to_col.iter().flatten().copied().collect();
        let n = cols.len();
        cols.sort();
        cols.dedup();
        prop_assert_eq!(cols.len(), n);
        prop_assert_eq!(n, gain.nrows().min(gain.ncols()));
    }
}
