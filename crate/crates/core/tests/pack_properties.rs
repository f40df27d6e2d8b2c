mod common;

use packattack::pack::{split_pack_current, PackElectrics};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_conserves_current_and_balances_voltage(seed in any::<u64>()) {
        let (pack, total) = common::random_pack(seed);
        let split = split_pack_current(&pack, total).unwrap();
        let sum: f64 = split.iter().sum();
        prop_assert!((sum - total).abs() <= 1e-9 * total.abs().max(1.0));
        let elec = PackElectrics::new(&pack);
        let v: Vec<f64> = split.iter().enumerate().map(|(p, &i)| elec.string_voltage(p, i)).collect();
        let spread = v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min);
        prop_assert!(spread < 1e-7, "string voltages differ by {spread} V");
    }

    #[test]
    fn split_matches_dense_oracle(seed in any::<u64>()) {
        let (pack, total) = common::random_pack(seed);
        let fast = split_pack_current(&pack, total).unwrap();
        let dense = common::dense_split(&pack, total);
        let scale = dense.iter().fold(total.abs(), |m, i| m.max(i.abs()));
        for (a, b) in fast.iter().zip(&dense) {
            prop_assert!((a - b).abs() <= 1e-8 * scale, "{a} vs {b}");
        }
    }

    #[test]
    fn thicker_film_string_carries_less_discharge(
        seed in any::<u64>(),
        total in 20.0f64..400.0,
    ) {
        let (mut pack, _) = common::random_pack(seed);
        let proto = pack.cells[0];
        for c in &mut pack.cells {
            *c = proto;
        }
        for s in 0..pack.n_series {
            let i = pack.index(s, 0);
            pack.cells[i].sei_thickness *= 2.0;
        }
        let split = split_pack_current(&pack, total).unwrap();
        for &other in &split[1..] {
            prop_assert!(split[0] < other);
        }
        prop_assert!(common::dense_split(&pack, total)[0] < split[1]);
    }

    #[test]
    fn rest_balancing_currents_sum_to_zero(seed in any::<u64>()) {
        let (pack, _) = common::random_pack(seed);
        let split = split_pack_current(&pack, 0.0).unwrap();
        let sum: f64 = split.iter().sum();
        prop_assert!(sum.abs() <= 1e-9);
    }
}
