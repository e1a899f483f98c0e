use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xxz_maba::bethe::check_proposition1;
use xxz_maba::exec::Exec;
use xxz_maba::functions::random_point;
use xxz_maba::params::{sample_generic, ModelInstance};

/// 25 draws on each of 5 instances: the proposition-1 sweep, split into
/// one work item per draw.
fn sweep(exec: Exec, insts: &[ModelInstance]) -> f64 {
    let n = insts[0].n();
    let jobs: Vec<(usize, u64)> = (0..insts.len()).flat_map(|i| (0..25).map(move |d| (i, d))).collect();
    exec.map(&jobs, |&(i, d)| {
        let mut rng = ChaCha8Rng::seed_from_u64(d ^ ((i as u64) << 32));
        let us: Vec<_> = (0..n).map(|_| random_point(&mut rng)).collect();
        check_proposition1(random_point(&mut rng), &us, &insts[i], 0).unwrap_or(0.0)
    })
    .into_iter()
    .fold(0.0, f64::max)
}

fn proposition1(c: &mut Criterion) {
    let mut g = c.benchmark_group("proposition1_sweep");
    g.sample_size(10);
    for n in [2, 3, 4] {
        let insts: Vec<_> = (0..5).map(|s| sample_generic(s, n).unwrap()).collect();
        g.bench_with_input(BenchmarkId::new("sequential", n), &insts, |b, i| b.iter(|| sweep(Exec::Sequential, i)));
        g.bench_with_input(BenchmarkId::new("parallel", n), &insts, |b, i| b.iter(|| sweep(Exec::Parallel, i)));
    }
    g.finish();
}

criterion_group!(benches, proposition1);
criterion_main!(benches);
