use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};
use hire_bench::{gen_synthetic, BaselineBTree, SyntheticKind};
use hire_core::{Entry, ExecMode, HireIndex, IndexParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const N: usize = 200_000;

fn entries(kind: SyntheticKind) -> Vec<Entry> {
    gen_synthetic(kind, N, 7)
        .into_iter()
        .map(|k| Entry::new(k, k ^ 1))
        .collect()
}

fn params() -> IndexParams {
    IndexParams {
        exec_mode: ExecMode::Stepped,
        ..IndexParams::default()
    }
}

fn bulk_load(c: &mut Criterion) {
    let mut g = c.benchmark_group("bulk_load");
    g.sample_size(10);
    for kind in [SyntheticKind::Uniform, SyntheticKind::Segmented] {
        let es = entries(kind);
        g.bench_with_input(
            BenchmarkId::new("hire", format!("{kind:?}")),
            &es,
            |b, es| b.iter(|| HireIndex::bulk_load(es, params()).unwrap()),
        );
        g.bench_with_input(
            BenchmarkId::new("btree", format!("{kind:?}")),
            &es,
            |b, es| b.iter(|| BaselineBTree::bulk_load(es, 256)),
        );
    }
    g.finish();
}

fn lookups(c: &mut Criterion) {
    let es = entries(SyntheticKind::Uniform);
    let hire = HireIndex::bulk_load(&es, params()).unwrap();
    let btree = BaselineBTree::bulk_load(&es, 256);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let probes: Vec<u64> = (0..4096).map(|_| es[rng.random_range(0..N)].key).collect();
    let mut g = c.benchmark_group("lookup");
    g.bench_function("hire/get", |b| {
        let mut i = 0;
        b.iter(|| {
            i = (i + 1) % probes.len();
            hire.get(probes[i])
        })
    });
    g.bench_function("btree/get", |b| {
        let mut i = 0;
        b.iter(|| {
            i = (i + 1) % probes.len();
            btree.get(probes[i])
        })
    });
    let ranges: Vec<(u64, u64)> = (0..4096)
        .map(|_| {
            let i = rng.random_range(0..N - 256);
            (es[i].key, es[i + 255].key)
        })
        .collect();
    let mut out = Vec::new();
    g.bench_function("hire/range256", |b| {
        let mut i = 0;
        b.iter(|| {
            i = (i + 1) % ranges.len();
            hire.range_into(ranges[i].0, ranges[i].1, None, &mut out)
                .unwrap();
            out.len()
        })
    });
    g.bench_function("btree/range256", |b| {
        let mut i = 0;
        b.iter(|| {
            i = (i + 1) % ranges.len();
            btree.range_into(ranges[i].0, ranges[i].1, None, &mut out);
            out.len()
        })
    });
    g.finish();
}

fn inserts(c: &mut Criterion) {
    let keys = gen_synthetic(SyntheticKind::Segmented, N, 3);
    let (bulk, rest): (Vec<_>, Vec<_>) = keys.iter().enumerate().partition(|(i, _)| i % 5 == 0);
    let bulk: Vec<Entry> = bulk.into_iter().map(|(_, &k)| Entry::new(k, k)).collect();
    let rest: Vec<u64> = rest.into_iter().map(|(_, &k)| k).take(20_000).collect();
    let mut g = c.benchmark_group("insert_20k");
    g.sample_size(10);
    g.bench_function("hire", |b| {
        b.iter_batched(
            || HireIndex::bulk_load(&bulk, params()).unwrap(),
            |mut idx| {
                for &k in &rest {
                    idx.insert(k, k).unwrap();
                }
                idx
            },
            BatchSize::LargeInput,
        )
    });
    g.bench_function("btree", |b| {
        b.iter_batched(
            || BaselineBTree::bulk_load(&bulk, 256),
            |mut t| {
                for &k in &rest {
                    t.insert(k, k);
                }
                t
            },
            BatchSize::LargeInput,
        )
    });
    g.finish();
}

criterion_group!(benches, bulk_load, lookups, inserts);
criterion_main!(benches);
