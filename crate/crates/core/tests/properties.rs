use std::collections::BTreeMap;

use hire_core::{Entry, ExecMode, HireIndex, IndexParams};
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Op {
    Insert(u64, u64),
    Delete(u64),
    Get(u64),
    Range(u64, u64, Option<usize>),
}

fn op(space: u64) -> impl Strategy<Value = Op> {
    prop_oneof![
        4 => (0..space, any::<u64>()).prop_map(|(k, v)| Op::Insert(k, v)),
        3 => (0..space).prop_map(Op::Delete),
        2 => (0..space).prop_map(Op::Get),
        1 => (0..space, 0..space / 4, proptest::option::of(1usize..40)).prop_map(|(lo, w, l)| Op::Range(lo, lo + w, l)),
    ]
}

fn mode() -> impl Strategy<Value = ExecMode> {
    prop_oneof![
        Just(ExecMode::Stepped),
        Just(ExecMode::Blocking),
        Just(ExecMode::Threaded)
    ]
}

fn params(f: usize, mode: ExecMode, no_legacy: bool) -> IndexParams {
    let mut p = IndexParams::with_fanout(f);
    p.exec_mode = mode;
    p.verify_jobs = true;
    p.step_budget = 16;
    p.ablation.disable_legacy_leaves = no_legacy;
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn operations_match_a_sorted_map(
        bulk in proptest::collection::btree_set(0u64..20_000, 0..600),
        ops in proptest::collection::vec(op(20_000), 1..1_500),
        mode in mode(),
        f in prop_oneof![Just(8usize), Just(16)],
        no_legacy in any::<bool>(),
    ) {
        let entries: Vec<Entry> = bulk.iter().map(|&k| Entry::new(k, k + 1)).collect();
        let mut idx = HireIndex::bulk_load(&entries, params(f, mode, no_legacy)).unwrap();
        let mut oracle: BTreeMap<u64, u64> = bulk.iter().map(|&k| (k, k + 1)).collect();
        for o in ops {
            match o {
                Op::Insert(k, v) => {
                    idx.insert(k, v).unwrap();
                    oracle.insert(k, v);
                }
                Op::Delete(k) => prop_assert_eq!(idx.delete(k).unwrap(), oracle.remove(&k).is_some()),
                Op::Get(k) => prop_assert_eq!(idx.get(k), oracle.get(&k).copied()),
                Op::Range(lo, hi, limit) => {
                    let want: Vec<Entry> = oracle
                        .range(lo..=hi)
                        .take(limit.unwrap_or(usize::MAX))
                        .map(|(&k, &v)| Entry::new(k, v))
                        .collect();
                    prop_assert_eq!(idx.range(lo, hi, limit).unwrap(), want);
                }
            }
            prop_assert_eq!(idx.len(), oracle.len());
        }
        idx.quiesce();
        let report = idx.check_invariants();
        prop_assert!(report.is_clean(), "{:?}", report.violations);
        let want: Vec<Entry> = oracle.iter().map(|(&k, &v)| Entry::new(k, v)).collect();
        prop_assert_eq!(idx.entries(), want);
        prop_assert_eq!(idx.metrics().job_violations, 0);
    }

    #[test]
    fn bulk_load_is_audit_clean(
        keys in proptest::collection::btree_set(0u64..(1 << 40), 0..3_000),
        f in prop_oneof![Just(8usize), Just(16), Just(64)],
    ) {
        let entries: Vec<Entry> = keys.iter().map(|&k| Entry::new(k, !k)).collect();
        let idx = HireIndex::bulk_load(&entries, params(f, ExecMode::Stepped, false)).unwrap();
        let report = idx.check_invariants();
        prop_assert!(report.is_clean(), "{:?}", report.violations);
        prop_assert_eq!(idx.entries(), entries);
    }
}
