mod common;

use std::collections::BTreeMap;

use common::*;
use ghz_core::qsim::*;
use ghz_core::RandomSource;
use num_complex::Complex64;
use proptest::prelude::*;

const TOL: f64 = 1e-12;

fn xxx() -> Vec<(usize, PauliAxis)> {
    vec![(0, PauliAxis::X), (1, PauliAxis::X), (2, PauliAxis::X)]
}

fn obs(f: &[(usize, PauliAxis)]) -> ProductObservable {
    ProductObservable::new(f.to_vec()).unwrap()
}

fn s(v: i8) -> Sign {
    Sign::try_from(v).unwrap()
}

#[test]
fn ghz_products_match_dense_oracle() {
    use PauliAxis::*;
    let psi = vector(&make_ghz());
    // Frozen from the dense oracle: XXX → −1, XYY/YXY/YYX → +1, YYY → 0.
    let cases: [(&[(usize, PauliAxis)], f64); 5] = [
        (&[(0, X), (1, X), (2, X)], -1.0),
        (&[(0, X), (1, Y), (2, Y)], 1.0),
        (&[(0, Y), (1, X), (2, Y)], 1.0),
        (&[(0, Y), (1, Y), (2, X)], 1.0),
        (&[(0, Y), (1, Y), (2, Y)], 0.0),
    ];
    for (factors, frozen) in cases {
        let oracle = expectation(&psi, &product_op(3, factors));
        assert!((oracle.re - frozen).abs() < TOL && oracle.im.abs() < TOL);
        let got = expectation_product(&make_ghz(), &obs(factors)).unwrap();
        assert!((got - frozen).abs() < TOL, "{factors:?}: {got}");
    }
}

#[test]
fn ghz_single_site_x_is_fair() {
    let psi = vector(&make_ghz());
    // oracle: <σx_A> = 0, so P(+1) = 0.5
    let oracle = expectation(&psi, &on_site(3, 0, &pauli(PauliAxis::X))).re;
    assert!(oracle.abs() < TOL);
    let b = pauli_branches(&make_ghz(), 0, PauliAxis::X).unwrap();
    assert_eq!(b.len(), 2);
    for br in b {
        assert!((br.probability - 0.5).abs() < TOL);
    }
}

#[test]
fn ghz_two_x_outcomes_fix_the_third() {
    let ghz = make_ghz();
    let after_a = pauli_branches(&ghz, 0, PauliAxis::X).unwrap();
    let a_plus = after_a.iter().find(|b| b.outcome == Sign::Plus).unwrap();
    let after_b = pauli_branches(&a_plus.state, 1, PauliAxis::X).unwrap();
    let b_plus = after_b.iter().find(|b| b.outcome == Sign::Plus).unwrap();
    let c = pauli_branches(&b_plus.state, 2, PauliAxis::X).unwrap();
    assert_eq!(c.len(), 1);
    assert_eq!(c[0].outcome, Sign::Minus);
    assert!((c[0].probability - 1.0).abs() < TOL);
}

#[test]
fn pattern_products_are_deterministic() {
    use PauliAxis::*;
    let ghz = make_ghz();
    for (f, target) in [
        (vec![(0, X), (1, X), (2, X)], Sign::Minus),
        (vec![(0, X), (1, Y), (2, Y)], Sign::Plus),
        (vec![(0, Y), (1, X), (2, Y)], Sign::Plus),
        (vec![(0, Y), (1, Y), (2, X)], Sign::Plus),
    ] {
        let o = obs(&f);
        let b = product_branches(&ghz, &o).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].outcome, target);
        let mut r = RandomSource::new(9);
        for _ in 0..50 {
            assert_eq!(measure_product(&ghz, &o, &mut r).unwrap().0, target);
        }
    }
    // YYY is a fair coin: oracle expectation 0
    let yyy = obs(&[(0, Y), (1, Y), (2, Y)]);
    let b = product_branches(&ghz, &yyy).unwrap();
    assert_eq!(b.len(), 2);
    assert!(b.iter().all(|x| (x.probability - 0.5).abs() < TOL));
}

#[test]
fn ghz_x_branch_table() {
    let psi = vector(&make_ghz());
    let oracle = joint_probabilities(&psi, 3, &xxx());
    let got = joint_distribution(&make_ghz(), &xxx()).unwrap();
    // Frozen: 0.25 on each triple with product −1, 0 elsewhere.
    let mut frozen = BTreeMap::new();
    for (signs, p) in &oracle {
        let product: i8 = signs.iter().product();
        let expected = if product == -1 { 0.25 } else { 0.0 };
        assert!((p - expected).abs() < TOL);
        frozen.insert(signs.iter().map(|&v| s(v)).collect::<Vec<_>>(), expected);
    }
    assert_eq!(got.len(), 8);
    for (k, p) in &got {
        assert!((p - frozen[k]).abs() < TOL, "{k:?}");
    }
    let nonzero: Vec<_> = got.iter().filter(|(_, p)| **p > TOL).map(|(k, _)| k.clone()).collect();
    let expect = vec![
        vec![Sign::Plus, Sign::Plus, Sign::Minus],
        vec![Sign::Plus, Sign::Minus, Sign::Plus],
        vec![Sign::Minus, Sign::Plus, Sign::Plus],
        vec![Sign::Minus, Sign::Minus, Sign::Minus],
    ];
    assert_eq!(nonzero, expect);
}

#[test]
fn marginals_and_singlet_anticorrelation() {
    let a = joint_distribution(&make_ghz(), &[(0, PauliAxis::X)]).unwrap();
    assert!((a[&vec![Sign::Plus]] - 0.5).abs() < TOL);
    assert!((a[&vec![Sign::Minus]] - 0.5).abs() < TOL);
    let z = joint_distribution(&make_singlet(), &[(0, PauliAxis::Z), (1, PauliAxis::Z)]).unwrap();
    assert!((z[&vec![Sign::Plus, Sign::Minus]] - 0.5).abs() < TOL);
    assert!((z[&vec![Sign::Minus, Sign::Plus]] - 0.5).abs() < TOL);
    assert!(z[&vec![Sign::Plus, Sign::Plus]].abs() < TOL);
}

#[test]
fn reduced_density_of_ghz_and_singlet() {
    let half = DensityMatrix::maximally_mixed(2);
    let oracle = partial_trace(&vector(&make_ghz()), 3, &[0]);
    assert!(max_abs(&(oracle - half.matrix())) < TOL);
    let rho = reduced_density(&make_ghz(), &[0]).unwrap();
    assert!(rho.is_valid());
    assert!(rho.max_abs_diff(&half) < TOL);
    let rho = reduced_density(&make_singlet(), &[0]).unwrap();
    assert!(rho.max_abs_diff(&half) < TOL);
}

#[test]
fn remote_measurement_leaves_local_density_unchanged() {
    let ghz = make_ghz();
    let before = reduced_density(&ghz, &[0]).unwrap();
    for (b_axis, c_axis) in [
        (PauliAxis::X, PauliAxis::X),
        (PauliAxis::Y, PauliAxis::X),
        (PauliAxis::Z, PauliAxis::Y),
    ] {
        let mut parts = Vec::new();
        for b in pauli_branches(&ghz, 1, b_axis).unwrap() {
            for c in pauli_branches(&b.state, 2, c_axis).unwrap() {
                parts.push((b.probability * c.probability, reduced_density(&c.state, &[0]).unwrap()));
            }
        }
        let after = DensityMatrix::weighted_sum(&parts).unwrap();
        assert!(before.max_abs_diff(&after) < TOL);
        // Inside one branch the state of A is pure and therefore changed.
        assert!(parts[0].1.max_abs_diff(&before) > 0.1);
    }
}

#[test]
fn tensor_then_trace_recovers_factor() {
    let t = tensor_product(&make_ghz(), &make_singlet()).unwrap();
    let ghz_rho = reduced_density(&make_ghz(), &[0, 1, 2]).unwrap();
    let from_t = reduced_density(&t, &[0, 1, 2]).unwrap();
    assert!(ghz_rho.max_abs_diff(&from_t) < TOL);
    let ss = tensor_product(&make_singlet(), &make_singlet()).unwrap();
    assert!((ss.norm_sqr() - 1.0).abs() < TOL);
}

#[test]
fn bell_measurement_probabilities_match_oracle() {
    // Crosswise Bell measurement on two singlets (0,1),(2,3) pairing sites 1 and 2.
    let ss = tensor_product(&make_singlet(), &make_singlet()).unwrap();
    let psi = vector(&ss);
    let got = bell_branches(&ss, 1, 2).unwrap();
    assert_eq!(got.len(), 4);
    for b in &got {
        let oracle = norm_sqr(&(bell_projector(4, 1, 2, &b.outcome.to_string()) * &psi));
        assert!((oracle - 0.25).abs() < TOL);
        assert!((b.probability - 0.25).abs() < TOL);
        // swapping leaves sites 0 and 3 in the same Bell state
        let swapped = bell_branches(&b.state, 0, 3).unwrap();
        assert_eq!(swapped.len(), 1);
        assert_eq!(swapped[0].outcome, b.outcome);
    }
    // GHZ sites (0,1): Φ+ and Φ− only.
    let psi = vector(&make_ghz());
    let got = bell_branches(&make_ghz(), 0, 1).unwrap();
    let outcomes: Vec<BellIndex> = got.iter().map(|b| b.outcome).collect();
    assert_eq!(outcomes, vec![BellIndex::PhiPlus, BellIndex::PhiMinus]);
    for b in &got {
        let oracle = norm_sqr(&(bell_projector(3, 0, 1, &b.outcome.to_string()) * &psi));
        assert!((oracle - 0.5).abs() < TOL);
        assert!((b.probability - 0.5).abs() < TOL);
    }
}

#[test]
fn commutation_on_ghz() {
    use PauliAxis::*;
    let g = make_ghz();
    let a = obs(&[(0, X), (1, X), (2, X)]);
    let b = obs(&[(0, X), (1, Y), (2, Y)]);
    assert!(commutes_on_state(&g, &a, &b).unwrap());
    assert!(commutes_on_state(&g, &a, &a).unwrap());
}

#[test]
fn born_frequencies_over_many_trials() {
    // GHZ, then X at A, Y at B: joint distribution vs 10^5 seeded samples.
    let g = make_ghz();
    let axes = [(0, PauliAxis::X), (1, PauliAxis::Y), (2, PauliAxis::X)];
    let exact = joint_distribution(&g, &axes).unwrap();
    let n = 100_000u64;
    let mut counts: BTreeMap<Vec<Sign>, u64> = BTreeMap::new();
    let mut rnd = RandomSource::new(2024);
    for _ in 0..n {
        let mut st = g.clone();
        let mut out = Vec::new();
        for &(site, axis) in &axes {
            let (o, next) = measure_pauli(&st, site, axis, &mut rnd).unwrap();
            assert!((next.norm_sqr() - 1.0).abs() < TOL);
            out.push(o);
            st = next;
        }
        *counts.entry(out).or_default() += 1;
    }
    for (k, p) in exact {
        let c = counts.get(&k).copied().unwrap_or(0);
        assert!(within_sigma(c, n, p, 4.0), "{k:?}: {c} vs {p}");
    }
}

fn arb_state(max_sites: usize) -> impl Strategy<Value = StateVector> {
    (1..=max_sites).prop_flat_map(|n| {
        prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1 << n).prop_filter_map("zero vector", move |raw| {
            let norm: f64 = raw.iter().map(|(a, b)| a * a + b * b).sum::<f64>().sqrt();
            if norm < 1e-3 {
                return None;
            }
            let amps = raw.iter().map(|(a, b)| Complex64::new(a / norm, b / norm)).collect();
            StateVector::from_amplitudes(n, amps).ok()
        })
    })
}

fn arb_axis() -> impl Strategy<Value = PauliAxis> {
    prop_oneof![Just(PauliAxis::X), Just(PauliAxis::Y), Just(PauliAxis::Z)]
}

fn arb_state_and_axes() -> impl Strategy<Value = (StateVector, Vec<(usize, PauliAxis)>)> {
    arb_state(4).prop_flat_map(|st| {
        let n = st.num_sites();
        (
            Just(st),
            Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
            prop::collection::vec(arb_axis(), n),
            1..=n,
        )
            .prop_map(|(st, sites, axes, k)| {
                let list = sites.into_iter().zip(axes).take(k).collect();
                (st, list)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn expectation_matches_dense((st, axes) in arb_state_and_axes()) {
        let n = st.num_sites();
        let oracle = expectation(&vector(&st), &product_op(n, &axes));
        let got = expectation_product(&st, &obs(&axes)).unwrap();
        prop_assert!((oracle.re - got).abs() < TOL);
        prop_assert!(oracle.im.abs() < TOL);
    }

    #[test]
    fn joint_distribution_matches_dense((st, axes) in arb_state_and_axes()) {
        let n = st.num_sites();
        let oracle = joint_probabilities(&vector(&st), n, &axes);
        let got = joint_distribution(&st, &axes).unwrap();
        let total: f64 = got.values().sum();
        prop_assert!((total - 1.0).abs() < TOL);
        for (signs, p) in oracle {
            let key: Vec<Sign> = signs.iter().map(|&v| s(v)).collect();
            prop_assert!((got[&key] - p).abs() < TOL);
        }
    }

    #[test]
    fn order_independence((st, axes) in arb_state_and_axes()) {
        let base = joint_distribution(&st, &axes).unwrap();
        let mut rev = axes.clone();
        rev.reverse();
        let other = joint_distribution(&st, &rev).unwrap();
        for (k, p) in base {
            let mut rk = k.clone();
            rk.reverse();
            prop_assert!((other[&rk] - p).abs() < TOL);
        }
    }

    #[test]
    fn no_signaling((st, axes) in arb_state_and_axes(), alt in prop::collection::vec(arb_axis(), 4)) {
        // Marginal of the first listed site does not depend on the axes elsewhere.
        let first = axes[0];
        let only = joint_distribution(&st, &[first]).unwrap();
        let changed: Vec<(usize, PauliAxis)> = axes
            .iter()
            .enumerate()
            .map(|(i, &(site, axis))| if i == 0 { (site, axis) } else { (site, alt[i]) })
            .collect();
        for list in [axes.clone(), changed] {
            let joint = joint_distribution(&st, &list).unwrap();
            for sign in Sign::BOTH {
                let marg: f64 = joint.iter().filter(|(k, _)| k[0] == sign).map(|(_, p)| p).sum();
                prop_assert!((marg - only[&vec![sign]]).abs() < TOL);
            }
        }
    }

    #[test]
    fn collapse_preserves_norm((st, axes) in arb_state_and_axes(), seed in any::<u64>()) {
        let mut rnd = RandomSource::new(seed);
        let (_, after) = measure_product(&st, &obs(&axes), &mut rnd).unwrap();
        prop_assert!((after.norm_sqr() - 1.0).abs() < TOL);
        let (site, axis) = axes[0];
        let (_, after) = measure_pauli(&st, site, axis, &mut rnd).unwrap();
        prop_assert!((after.norm_sqr() - 1.0).abs() < TOL);
        if st.num_sites() >= 2 {
            let (_, after) = bell_measure(&st, 0, 1, &mut rnd).unwrap();
            prop_assert!((after.norm_sqr() - 1.0).abs() < TOL);
        }
    }

    #[test]
    fn product_observables_are_involutions((st, axes) in arb_state_and_axes()) {
        let o = obs(&axes);
        let twice = o.apply(&o.apply(st.amplitudes()));
        for (a, b) in twice.iter().zip(st.amplitudes()) {
            prop_assert!((a - b).norm() < TOL);
        }
        let n = st.num_sites();
        let m = product_op(n, &axes);
        prop_assert!(max_abs(&(&m * &m - identity(1 << n))) < TOL);
    }

    #[test]
    fn reduced_density_matches_partial_trace((st, axes) in arb_state_and_axes()) {
        let sites: Vec<usize> = axes.iter().map(|(s, _)| *s).collect();
        let rho = reduced_density(&st, &sites).unwrap();
        prop_assert!(rho.is_valid());
        let oracle = partial_trace(&vector(&st), st.num_sites(), &sites);
        prop_assert!(max_abs(&(oracle - rho.matrix())) < TOL);
    }
}
