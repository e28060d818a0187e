use ibcsim_harness::generate::random_scenario;
use ibcsim_harness::run_scenario;
use ibcsim_harness::trace::{read_jsonl, to_jsonl};
use ibcsim_harness::{verify_trace, Check};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Any generated scenario satisfies every check, and its trace re-checks
    /// identically after a round trip through the file format.
    #[test]
    fn generated_scenarios_pass(seed in any::<u64>()) {
        let s = random_scenario(seed);
        let out = run_scenario(&s, seed, None).unwrap();
        for v in &out.verdicts {
            prop_assert!(v.pass, "seed {}: {}", seed, v);
        }
        let reread = read_jsonl(to_jsonl(&out.trace).as_slice()).unwrap();
        prop_assert_eq!(&reread, &out.trace);
        prop_assert_eq!(verify_trace(&reread, &Check::ALL).unwrap(), out.verdicts);
    }

    /// Runs depend on the seed only.
    #[test]
    fn runs_are_reproducible(seed in 0u64..10_000) {
        let s = random_scenario(seed);
        let first = run_scenario(&s, seed, Some(60)).unwrap();
        let second = run_scenario(&s, seed, Some(60)).unwrap();
        prop_assert_eq!(to_jsonl(&first.trace), to_jsonl(&second.trace));
    }
}
