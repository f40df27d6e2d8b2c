use packattack::cell::{advance_cell, step_cell, Electrical};
use packattack::defaults::nca_graphite_cell;
use packattack::Regime;
use proptest::prelude::*;

proptest! {
    #[test]
    fn film_and_lost_capacity_never_shrink_outside_overdischarge(
        soc in 0.05f64..1.0,
        temp in 253.0f64..333.0,
        delta in 1e-9f64..120e-9,
        current in -150.0f64..150.0,
        dt in 0.1f64..60.0,
    ) {
        let p = nca_graphite_cell();
        let mut s = p.fresh_state(soc, temp);
        s.sei_thickness = delta;
        let (n, r) = step_cell(&s, &p, current, temp, dt).unwrap();
        prop_assert!(n.sei_thickness >= 0.0);
        if r.regime != Regime::Overdischarge && r.regime != Regime::CopperDissolution {
            prop_assert!(n.sei_thickness >= s.sei_thickness);
            prop_assert!(n.capacity_lost >= s.capacity_lost);
            prop_assert!(n.plated_li >= s.plated_li);
        } else {
            prop_assert!(n.sei_thickness <= s.sei_thickness);
        }
    }

    #[test]
    fn stored_charge_balances_terminal_and_side_currents(
        soc in 0.05f64..0.98,
        temp in 263.0f64..323.0,
        current in -100.0f64..100.0,
    ) {
        let p = nca_graphite_cell();
        let s = p.fresh_state(soc, temp);
        let (n, r) = step_cell(&s, &p, current, temp, 10.0).unwrap();
        prop_assume!(r.regime == Regime::Normal || r.regime == Regime::Overcharge);
        let lhs = n.soc * n.remaining_capacity(&p) - s.soc * s.remaining_capacity(&p);
        let rhs = -(current + r.side_current) * 10.0 / 3600.0;
        let floor = 4.0 * f64::EPSILON * s.capacity(&p);
        prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs() + floor, "{lhs} vs {rhs}");
    }

    #[test]
    fn voltages_stay_finite_for_abusive_soc(soc in -0.5f64..1.5, current in -300.0f64..300.0) {
        let p = nca_graphite_cell();
        let s = p.fresh_state(soc, 298.15);
        let e = Electrical::new(&s, &p);
        prop_assert!(e.terminal_voltage(current).is_finite());
        prop_assert!(e.anode_potential(current).is_finite());
    }

    #[test]
    fn sub_stepping_matches_a_single_call(soc in 0.3f64..0.9, current in -30.0f64..30.0) {
        let p = nca_graphite_cell();
        let s = p.fresh_state(soc, 298.15);
        let (whole, _) = advance_cell(&s, &p, current, 298.15, 600.0).unwrap();
        let mut pieces = s;
        for _ in 0..10 {
            pieces = advance_cell(&pieces, &p, current, 298.15, 60.0).unwrap().0;
        }
        prop_assert!((whole.soc - pieces.soc).abs() < 1e-6);
        prop_assert!((whole.sei_thickness - pieces.sei_thickness).abs() < 1e-3 * (whole.sei_thickness - s.sei_thickness).abs() + 1e-18);
    }
}
