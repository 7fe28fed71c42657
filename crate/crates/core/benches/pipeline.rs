//! Pipeline stages on a double-gyre dataset. The group name records whether
//! rayon is enabled, so the two builds can be compared:
//!
//! ```text
//! cargo bench -p driftscope-core --bench pipeline -- --save-baseline parallel
//! cargo bench -p driftscope-core --bench pipeline --no-default-features -- --save-baseline sequential
//! ```

use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, Criterion};
use driftscope::diffusion::{build_diffusion_operator, build_kernel};
use driftscope::separation::{diffusion_separation, particle_separation};
use driftscope::similarity::multi_source_field;
use driftscope::trajectory::integrate_flow;
use driftscope::{select_landmarks, DiffusionParams, Direction, Flow, FlowSpec, Strategy};

const MODE: &str = if cfg!(feature = "parallel") { "parallel" } else { "sequential" };

fn pipeline(c: &mut Criterion) {
    let spec = FlowSpec::new(Flow::double_gyre(), vec![60, 30], 0.0, 2.0 * std::f64::consts::PI, 50).unwrap();
    let ds = integrate_flow(&spec).unwrap();
    let lm = select_landmarks(&ds, 400, Strategy::Tfps, 0, 5).unwrap();
    let params = DiffusionParams::default();
    let (_, kernel) = build_kernel(&ds, &lm, &params).unwrap();
    let e = build_diffusion_operator(&kernel, 300, true).unwrap();

    let mut g = c.benchmark_group(MODE);
    g.sample_size(10).measurement_time(Duration::from_secs(10));
    g.bench_function("integrate", |b| b.iter(|| integrate_flow(black_box(&spec)).unwrap()));
    g.bench_function("tfps_select", |b| b.iter(|| select_landmarks(&ds, 400, Strategy::Tfps, 0, 5).unwrap()));
    g.bench_function("kernel", |b| b.iter(|| build_kernel(&ds, &lm, &params).unwrap()));
    g.bench_function("operator", |b| b.iter(|| build_diffusion_operator(&kernel, 300, true).unwrap()));
    g.bench_function("particle_separation", |b| {
        b.iter(|| particle_separation(&ds, Direction::Forward, 9).unwrap())
    });
    g.bench_function("diffusion_separation", |b| {
        b.iter(|| diffusion_separation(&ds, &e, black_box(10.0), Direction::Forward, 9).unwrap())
    });
    g.bench_function("multi_source_field", |b| b.iter(|| multi_source_field(&e, &[0, 900, 1799], 10.0).unwrap()));
    g.finish();
}

criterion_group!(benches, pipeline);
criterion_main!(benches);
