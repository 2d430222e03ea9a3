mod common;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{brute_cost, brute_feasible, brute_optimum, eval_scale_instance, random_goa};
use qplan::mapping::{assignment_cost, exact_map, greedy_map, is_feasible, to_total};

#[test]
fn greedy_is_feasible_and_never_beats_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for n in 0..10_000 {
        let inst = random_goa(&mut rng, 8, 5);
        let (_, best) = exact_map(&inst).unwrap();
        for enhanced in [false, true] {
            let a = greedy_map(&inst, enhanced);
            assert!(is_feasible(&a, &inst), "instance {n}: {inst:?}");
            assert!(brute_feasible(&inst, &a.slots), "instance {n}");
            assert!(assignment_cost(&inst, &a) >= best, "instance {n}: greedy below exact");
        }
    }
}

#[test]
fn exact_matches_independent_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in 0..300 {
        let inst = random_goa(&mut rng, 6, 4);
        let (a, cost) = exact_map(&inst).unwrap();
        let (slots, brute) = brute_optimum(&inst);
        assert_eq!(cost, brute, "instance {n}: {inst:?}");
        assert_eq!(a.slots, slots, "instance {n}: tie-break");
        assert_eq!(brute_cost(&inst, &a.slots), cost);
    }
}

#[test]
fn chain_costs_add_up() {
    let inst = eval_scale_instance(5);
    let a = greedy_map(&inst, true);
    let mut sum = to_total(&qplan::mapping::Cost::from_integer(0));
    for c in 0..inst.chains.len() {
        sum += to_total(&qplan::mapping::chain_cost(&inst, &a, c));
    }
    assert_eq!(sum, assignment_cost(&inst, &a));
    assert_eq!(brute_cost(&inst, &a.slots), sum);
}

#[test]
fn greedy_on_eval_scale_is_fast() {
    let inst = eval_scale_instance(3);
    assert_eq!(inst.registers.len(), 96);
    assert_eq!(inst.operators.len(), 70);
    for enhanced in [false, true] {
        let t = Instant::now();
        let a = greedy_map(&inst, enhanced);
        let took = t.elapsed();
        assert!(is_feasible(&a, &inst));
        assert!(took.as_millis() < 100, "{took:?}");
    }
}
