use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use forgetmi::autodiff::Tape;
use forgetmi::model::forward_on_tape;
use forgetmi::unlearn::unlearn_run;
use forgetmi::{Tensor, UnlearnConfig};
use forgetmi_bench::Fixture;

fn filled(shape: [usize; 2], phase: f32) -> Tensor {
    let data = (0..shape[0] * shape[1])
        .map(|i| (i as f32 * 0.37 + phase).sin())
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn matmul(c: &mut Criterion) {
    let a = filled([32, 256], 1.0).tracked();
    let b = filled([256, 64], 2.0).tracked();
    c.bench_function("matmul 32x256x64 forward+backward", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let (x, w) = (tape.leaf(a.clone()), tape.leaf(b.clone()));
            let y = tape.matmul(x, w).unwrap();
            let loss = tape.mean(y, None).unwrap();
            tape.backward(loss).unwrap();
            black_box(tape.grad(w).map(|g| g[0]))
        })
    });
}

fn train_step(c: &mut Criterion) {
    let fx = Fixture::new(60);
    let batch = fx.model.batch(fx.data.train.iter().take(32)).unwrap();
    c.bench_function("model forward+backward, batch 32", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let p = fx.model.params.register(&mut tape, true);
            let out = forward_on_tape(&mut tape, &p, &batch).unwrap();
            let (loss, _) = tape.softmax_cross_entropy(out.logits, &batch.labels).unwrap();
            tape.backward(loss).unwrap();
            black_box(tape.value(loss).item())
        })
    });
}

fn unlearn_epoch(c: &mut Criterion) {
    let fx = Fixture::new(200);
    let (forget, retain) = fx.split(10);
    let cfg = UnlearnConfig {
        epochs: 1,
        ..UnlearnConfig::default()
    };
    let mut group = c.benchmark_group("unlearn");
    group.sample_size(20);
    group.bench_function(format!("forget-mi epoch, {} forget samples", forget.len()), |bench| {
        bench.iter_batched(
            || fx.model.clone(),
            |m| unlearn_run(&m, &forget, &retain, &cfg).unwrap(),
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(benches, matmul, train_step, unlearn_epoch);
criterion_main!(benches);
