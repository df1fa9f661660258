use criterion::{criterion_group, criterion_main, Criterion};
use nsd_core::models::{DiscreteDenoiser, GaussianMixture, NoiseSchedule, ScoreModel, ToyDistribution};
use nsd_core::projections::{AlmConfig, LinearConstraint};
use nsd_core::sampler_continuous::{sample_with, ProjectionPolicy, SamplerOptions};
use nsd_core::sampler_discrete::{sample_discrete_with, DiscreteNoiseSpec, DiscretePolicy, DiscreteSamplerOptions};
use nsd_core::{ConstraintSet, SequenceConstraintSet};

fn continuous(c: &mut Criterion) {
    let sched = NoiseSchedule::cosine(100);
    let gmm = GaussianMixture::isotropic(vec![1.0, 0.5], 0.5).unwrap();
    let model = ScoreModel::analytic(gmm, sched.clone());
    let cs = ConstraintSet::new().with(LinearConstraint::new(vec![1.0, 0.0], 0.5).unwrap());
    let mut g = c.benchmark_group("continuous_64_chains");
    g.sample_size(10);
    for (name, policy) in [("every_step", ProjectionPolicy::EveryStep), ("never", ProjectionPolicy::Never)] {
        let opts = SamplerOptions {
            policy,
            alm: AlmConfig::default(),
            ..SamplerOptions::default()
        };
        g.bench_function(name, |b| b.iter(|| sample_with(&model, &sched, &cs, &opts, 64, 1).unwrap()));
    }
    g.finish();
}

fn discrete(c: &mut Criterion) {
    let seqs: Vec<Vec<usize>> = (0..16usize).map(|n| (0..4).map(|i| (n >> i) & 1).collect()).collect();
    let toy = ToyDistribution::uniform(&seqs).unwrap();
    let sched = NoiseSchedule::cosine(100);
    let d = DiscreteDenoiser::analytic(toy, DiscreteNoiseSpec::mask(2), sched.clone()).unwrap();
    let opts = DiscreteSamplerOptions {
        policy: DiscretePolicy::Never,
        ..DiscreteSamplerOptions::default()
    };
    let mut g = c.benchmark_group("discrete_toy");
    g.sample_size(10);
    g.bench_function("mask_256_chains", |b| {
        b.iter(|| sample_discrete_with(&d, &sched, &SequenceConstraintSet::new(), &opts, 256, 1).unwrap())
    });
    g.finish();
}

criterion_group!(benches, continuous, discrete);
criterion_main!(benches);
