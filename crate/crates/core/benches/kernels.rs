//! Jacobian, Gram and solver kernels on a one-thread pool versus the full
//! pool. Built without the `parallel` feature only the sequential variant
//! runs, which measures the fallback code path itself.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array1;

use pgd_core::autodiff::{dense_jacobian, forward_with_tape, vjp, JacobianOperator, DEFAULT_MEMORY_BUDGET};
use pgd_core::linalg::{smw_solve, LinearOperator};
use pgd_core::models::{init_params, Activation, InitScheme, MlpSpec, ParamVector};
use pgd_core::tensor::Tensor2;

struct Case {
    spec: MlpSpec,
    params: ParamVector,
    x: Tensor2,
}

fn case(batch: usize) -> Case {
    let spec = MlpSpec::new(vec![2, 128, 128, 1], Activation::Tanh, InitScheme::KaimingUniform);
    let params = init_params(&spec, 0, 1.0).unwrap();
    let data: Vec<f64> = (0..batch * 2).map(|i| ((i * 7919) % 1000) as f64 / 1000.0).collect();
    let x = Tensor2::from_vec(batch, 2, data).unwrap();
    Case { spec, params, x }
}

#[cfg(feature = "parallel")]
fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let all = rayon::ThreadPoolBuilder::new().build().unwrap();
    vec![("sequential", one), ("parallel", all)]
}

fn bench_kernels(c: &mut Criterion) {
    let k = case(256);
    let jac = JacobianOperator::from_model(&k.spec, &k.params, &k.x).unwrap();
    let g = Array1::from_iter((0..k.params.len()).map(|i| (i as f64).sin()));
    let cot = Tensor2::from_vec(256, 1, (0..256).map(|i| (i as f64).cos()).collect()).unwrap();

    let mut group = c.benchmark_group("kernels");
    group.sample_size(10);

    #[cfg(feature = "parallel")]
    let variants = pools();
    #[cfg(not(feature = "parallel"))]
    let variants = vec![("sequential", ())];

    for (label, pool) in &variants {
        #[cfg(feature = "parallel")]
        let install = |f: &mut (dyn FnMut() + Send)| pool.install(f);
        #[cfg(not(feature = "parallel"))]
        let install = |f: &mut (dyn FnMut() + Send)| {
            let _ = pool;
            f()
        };

        group.bench_function(BenchmarkId::new("dense_jacobian", label), |b| {
            b.iter(|| install(&mut || drop(dense_jacobian(&k.spec, &k.params, &k.x, DEFAULT_MEMORY_BUDGET).unwrap())))
        });
        group.bench_function(BenchmarkId::new("ntk_gram", label), |b| {
            b.iter(|| install(&mut || drop(jac.gram().unwrap())))
        });
        group.bench_function(BenchmarkId::new("smw_solve", label), |b| {
            b.iter(|| install(&mut || drop(smw_solve(&jac, 1e-2, &g).unwrap())))
        });
        group.bench_function(BenchmarkId::new("forward_vjp", label), |b| {
            b.iter(|| {
                install(&mut || {
                    let (_, tape) = forward_with_tape(&k.spec, &k.params, &k.x).unwrap();
                    drop(vjp(&tape, &cot).unwrap());
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_kernels);
criterion_main!(benches);
