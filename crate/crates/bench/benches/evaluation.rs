use cdpkit::experiments::{build_balanced_cut_cdp, build_center_of_mass_cdp};
use cdpkit::model::MultiplierSet;
use cdpkit::{ProblemSpec, Vector};
use cdpkit_bench::{balanced_cut, center_of_mass, BALANCED_CUT_SIZES};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

// One value-and-gradient evaluation of the raw functions.
fn direct_eval(p: &ProblemSpec, x: &Vector, lambda: &Vector, mu: &Vector) -> f64 {
    let f = p.objective.value(x);
    let mut g = p.objective.gradient(x);
    let c = p.manifold.constraint(x);
    g += p.manifold.jc(x, &c);
    g += p.equalities.jac(x, lambda);
    g += p.inequalities.jac(x, mu);
    f + c.norm_squared() + p.equalities.eval(x).dot(lambda) + p.inequalities.eval(x).dot(mu) + g[0]
}

fn balanced_cut_eval(c: &mut Criterion) {
    let mut group = c.benchmark_group("balanced_cut_eval");
    for m in BALANCED_CUT_SIZES {
        let g = balanced_cut(m);
        let cdp = build_balanced_cut_cdp(&g.problem).unwrap();
        let mult = MultiplierSet::for_problem(&g.problem);
        group.bench_with_input(BenchmarkId::new("cdp", m), &g.x0, |b, x| {
            b.iter(|| {
                cdp.evaluate_with(black_box(x), |_| (mult.lambda.clone(), mult.mu.clone()))
                    .unwrap()
            })
        });
        group.bench_with_input(BenchmarkId::new("nlp", m), &g.x0, |b, x| {
            b.iter(|| direct_eval(&g.problem, black_box(x), &mult.lambda, &mult.mu))
        });
    }
    group.finish();
}

fn center_of_mass_eval(c: &mut Criterion) {
    let g = center_of_mass(20);
    let cdp = build_center_of_mass_cdp(&g.problem).unwrap();
    let mult = MultiplierSet::for_problem(&g.problem);
    let mut group = c.benchmark_group("center_of_mass_eval");
    group.bench_function("cdp", |b| {
        b.iter(|| {
            cdp.evaluate_with(black_box(&g.x0), |_| (mult.lambda.clone(), mult.mu.clone()))
                .unwrap()
        })
    });
    group.bench_function("nlp", |b| {
        b.iter(|| direct_eval(&g.problem, black_box(&g.x0), &mult.lambda, &mult.mu))
    });
    group.finish();
}

criterion_group!(benches, balanced_cut_eval, center_of_mass_eval);
criterion_main!(benches);
