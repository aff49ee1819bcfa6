use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use signkit::keypoint::LayoutSpec;
use signkit::model::{Model, ModelSpec};
use signkit::nn::conv::conv2d;
use signkit::nn::lstm::{bilstm, LstmWeights};
use signkit::preprocess::{preprocess_pipeline, PipelineConfig};
use signkit::rng;
use signkit::synth::{synth_sequence, GestureTemplate};
use signkit_bench::randn;

fn conv(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv2d");
    for &(cin, cout) in &[(3, 8), (8, 16), (3, 64)] {
        let x = randn(&[8, 30, 63, cin], 1);
        let k = randn(&[3, 3, cin, cout], 2);
        let b = randn(&[cout], 3);
        g.bench_with_input(BenchmarkId::from_parameter(format!("{cin}to{cout}")), &(), |bch, _| {
            bch.iter(|| conv2d(&x, &k, &b).unwrap())
        });
    }
    g.finish();
}

fn lstm(c: &mut Criterion) {
    let mut g = c.benchmark_group("bilstm");
    for &units in &[32, 128] {
        let x = randn(&[8, 30, 64], 4);
        let w = |seed| LstmWeights {
            w_x: randn(&[64, 4 * units], seed),
            w_h: randn(&[units, 4 * units], seed + 1),
            bias: randn(&[4 * units], seed + 2),
        };
        let (f, b) = (w(5), w(8));
        g.bench_with_input(BenchmarkId::from_parameter(units), &(), |bch, _| {
            bch.iter(|| bilstm(&x, &f, &b, true).unwrap())
        });
    }
    g.finish();
}

fn predict(c: &mut Criterion) {
    let model = Model::build(ModelSpec::scaled(5), 0).unwrap();
    let x = randn(&[1, 30, 63, 3], 9);
    c.bench_function("predict/scaled_window", |b| b.iter(|| model.predict(&x).unwrap()));
    let batch = randn(&[32, 30, 63, 3], 10);
    c.bench_function("predict/scaled_batch32", |b| b.iter(|| model.predict(&batch).unwrap()));
}

fn pipeline(c: &mut Criterion) {
    let t = &GestureTemplate::family(5, 0.01)[0];
    let seq = synth_sequence(t, &LayoutSpec::holistic543(), &mut rng::stream(0, "bench", 0), "b").unwrap();
    let mut g = c.benchmark_group("preprocess");
    for layout in ["holistic543", "compact63"] {
        let cfg = PipelineConfig {
            layout: Some(layout.into()),
            ..PipelineConfig::default()
        };
        g.bench_function(layout, |b| b.iter(|| preprocess_pipeline(&seq, &cfg).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, conv, lstm, predict, pipeline);
criterion_main!(benches);
