use proptest::prelude::*;
use sescc::{parse_fcidump, write_fcidump};
use sescc_core::integrals::TwoBodySymmetry;
use sescc_core::HamiltonianSpec;

fn value() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), -10.0f64..10.0, (-1e-12f64..1e-12)]
}

fn spec() -> impl Strategy<Value = HamiltonianSpec> {
    (1usize..5).prop_flat_map(|n| {
        let n4 = n * n * n * n;
        (Just(n), value(), prop::collection::vec(value(), n * n), prop::collection::vec(value(), n4)).prop_map(
            move |(n, core, one, two)| {
                let mut h = HamiltonianSpec::new(n, 2, TwoBodySymmetry::EightFold).unwrap();
                h.set_core_energy(core).unwrap();
                for p in 0..n {
                    for q in 0..=p {
                        h.set_one_body(p, q, one[p * n + q]).unwrap();
                    }
                }
                for ([p, q, r, s], v) in (0..n4).map(|k| ([k / (n * n * n), k / (n * n) % n, k / n % n, k % n], two[k]))
                {
                    if TwoBodySymmetry::EightFold.canonical(p, q, r, s) == [p, q, r, s] {
                        h.set_two_body(p, q, r, s, v).unwrap();
                    }
                }
                h
            },
        )
    })
}

proptest! {
    #[test]
    fn written_integrals_parse_back_bit_exactly(h in spec(), ms2 in prop_oneof![Just(0i64), Just(2)]) {
        let text = write_fcidump(&h, ms2).unwrap();
        let back = parse_fcidump(&text).unwrap();
        prop_assert_eq!(back.ms2, ms2);
        prop_assert_eq!(back.hamiltonian.core_energy().to_bits(), h.core_energy().to_bits());
        prop_assert_eq!(back.hamiltonian.unique_two_body(), h.unique_two_body());
        prop_assert_eq!(back.hamiltonian.one_body(), h.one_body());
    }

    #[test]
    fn arbitrary_text_never_panics(text in "[&FCINORBELM=0-9 ,./\\-\n]{0,200}") {
        let _ = parse_fcidump(&text);
    }
}
