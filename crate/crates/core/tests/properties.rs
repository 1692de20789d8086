//! Randomized invariant checks for the combinatorial and algebraic layers.

use num_complex::Complex64;
use perturbdyn::multiset::{all_up_to_order, canonical_cmp, complete};
use perturbdyn::signal::Signal;
use perturbdyn::{ArrayPolynomial, ComplexMatrix, Multiset};
use proptest::prelude::*;
use std::cmp::Ordering;
use std::sync::Arc;

fn multiset_strategy() -> impl Strategy<Value = Multiset> {
    prop::collection::vec(0usize..4, 1..=5).prop_map(Multiset::new)
}

fn label_list_strategy() -> impl Strategy<Value = Vec<Multiset>> {
    prop::collection::vec(multiset_strategy(), 1..=6)
}

fn matrix_strategy() -> impl Strategy<Value = ComplexMatrix> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 4).prop_map(|entries| {
        let mut m = ComplexMatrix::zeros(2, 2);
        for (k, (re, im)) in entries.into_iter().enumerate() {
            m[(k / 2, k % 2)] = Complex64::new(re, im);
        }
        m
    })
}

proptest! {
    #[test]
    fn completion_is_closed_and_idempotent(labels in label_list_strategy()) {
        let completed = complete(&labels);
        // contains every requested label
        for label in &labels {
            prop_assert!(completed.contains(label));
        }
        // closed under nonempty proper submultisets
        for label in &completed {
            for sub in label.submultisets_proper() {
                if !sub.is_empty() {
                    prop_assert!(completed.contains(&sub), "{completed:?} misses {sub:?}");
                }
            }
        }
        // canonically sorted without duplicates, so submultisets come first
        for pair in completed.windows(2) {
            prop_assert_eq!(canonical_cmp(&pair[0], &pair[1]), Ordering::Less);
        }
        // a second completion adds nothing
        prop_assert_eq!(complete(&completed), completed);
    }

    #[test]
    fn ordered_partitions_reassemble(label in multiset_strategy(), k in 1usize..=3) {
        let partitions = label.ordered_partitions(k);
        for tuple in &partitions {
            prop_assert_eq!(tuple.len(), k);
            let mut acc = Multiset::empty();
            for part in tuple {
                prop_assert!(!part.is_empty());
                acc = acc.msum(part);
            }
            prop_assert_eq!(&acc, &label);
        }
        // tuples are pairwise distinct
        for (i, a) in partitions.iter().enumerate() {
            for b in &partitions[i + 1..] {
                prop_assert_ne!(a, b);
            }
        }
    }

    #[test]
    fn all_up_to_order_is_sorted_and_bounded(r in 1usize..=4, n in 1usize..=4) {
        let labels = all_up_to_order(r, n);
        for label in &labels {
            prop_assert!(!label.is_empty() && label.size() <= n);
            prop_assert!(label.max_index().unwrap() < r);
        }
        for pair in labels.windows(2) {
            prop_assert_eq!(canonical_cmp(&pair[0], &pair[1]), Ordering::Less);
        }
    }

    #[test]
    fn polynomial_eval_is_additive(
        labels in prop::collection::vec(multiset_strategy(), 1..=4),
        coeffs_a in prop::collection::vec(matrix_strategy(), 4),
        coeffs_b in prop::collection::vec(matrix_strategy(), 4),
        c in prop::collection::vec(-1.0f64..1.0, 4),
    ) {
        let take = labels.len();
        let a = ArrayPolynomial::new(None, labels.iter().cloned().zip(coeffs_a.into_iter().take(take)).collect());
        let b = ArrayPolynomial::new(None, labels.iter().cloned().zip(coeffs_b.into_iter().take(take)).collect());
        let sum = a.add(&b);
        let lhs = sum.eval(&c).unwrap();
        let rhs = &a.eval(&c).unwrap() + &b.eval(&c).unwrap();
        prop_assert!((&lhs - &rhs).frobenius_norm() <= 1e-12);
    }

    #[test]
    fn carrier_shift_preserves_signal_values(
        freq in 0.1f64..10.0,
        reference in 0.1f64..10.0,
        phase in 0.0f64..std::f64::consts::TAU,
        re in -2.0f64..2.0,
        im in -2.0f64..2.0,
        t in 0.0f64..20.0,
    ) {
        let amp = Complex64::new(re, im);
        let signal = Signal::new(Arc::new(move |_| amp), freq, phase);
        let shifted = signal.shift_carrier(reference);
        prop_assert!((shifted.carrier_freq() - reference).abs() <= 1e-15);
        prop_assert!((signal.value(t) - shifted.value(t)).abs() <= 1e-12);
    }
}
