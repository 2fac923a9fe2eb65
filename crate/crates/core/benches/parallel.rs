use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use scalevit::channels::resolve_subset;
use scalevit::cwt::{trial_rasters, CwtConfig, CwtPlan};
use scalevit::data_io::{synth_generate, SynthConfig};
use scalevit::model::{HeadKind, Mode, ModelConfig, ModelParams};
use scalevit::signal::{make_folds, FoldMode};
use scalevit::training::{batch_loss_and_grad, prepare, run_prepared, LabelSource, Loss, Target, TrainConfig};
use scalevit::Exec;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn rasters(c: &mut Criterion) {
    let ds = synth_generate(&SynthConfig { n_participants: 1, n_videos: 1, ..Default::default() }).unwrap();
    let cfg = CwtConfig::default();
    let plan = CwtPlan::new(&cfg.grid(128.0).unwrap(), ds.n_samples()).unwrap();
    let channels: Vec<usize> = (0..ds.channel_names.len()).collect();
    let mut g = c.benchmark_group("trial_rasters_40ch");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| trial_rasters(&plan, &ds.trials[0], &channels, &cfg, exec).unwrap())
        });
    }
    g.finish();
}

fn batch_gradient(c: &mut Criterion) {
    let ds = synth_generate(&SynthConfig { n_participants: 2, n_videos: 8, ..Default::default() }).unwrap();
    let data = prepare(&ds, &resolve_subset("muse-4a").unwrap(), &CwtConfig::default(), Exec::Parallel).unwrap();
    let cfg = ModelConfig::small(4, HeadKind::Classify4);
    let params = ModelParams::init(&cfg, 1).unwrap();
    let idx: Vec<usize> = (0..16).collect();
    let views = data.views(&idx);
    let targets: Vec<Target> = data.labels.iter().map(|l| Target::Class(l.vaq_quadrant.code() as usize)).collect();
    let mut g = c.benchmark_group("batch16_forward_backward");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                batch_loss_and_grad(&params, &cfg, &views, &targets, Loss::CrossEntropy, Mode::Train { seed: 3 }, exec)
                    .unwrap()
            })
        });
    }
    g.finish();
}

fn folds(c: &mut Criterion) {
    let ds = synth_generate(&SynthConfig { n_participants: 4, n_videos: 4, duration_s: 2.0, ..Default::default() }).unwrap();
    let cwt = CwtConfig { n_scales: 64, image_height: 56, image_width: 56, ..Default::default() };
    let data = prepare(&ds, &resolve_subset("muse-4a").unwrap(), &cwt, Exec::Parallel).unwrap();
    let assignment = make_folds(&ds.trials, 4, 1, FoldMode::RandomTrial).unwrap();
    let mut model = ModelConfig::small(4, HeadKind::Classify4);
    model.image_height = 56;
    model.image_width = 56;
    model.patch_size = 14;
    let mut train = TrainConfig::for_task(HeadKind::Classify4);
    train.max_epochs = 2;
    let mut g = c.benchmark_group("experiment_4folds_2epochs");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_prepared(&data, LabelSource::Vaq, &assignment, &train, &model, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, rasters, batch_gradient, folds);
criterion_main!(benches);
