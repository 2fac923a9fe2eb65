use std::fmt;
use std::path::{Path, PathBuf};

use scalevit::channels::{deap_index, pca_rank_channels, registry_names, resolve_subset, top_k, ChannelSubset};
use scalevit::cwt::{channel_raster, CwtConfig, CwtPlan};
use scalevit::data_io::{read_portable, synth_generate, write_atomic, write_portable, PortableDataset, SynthConfig};
use scalevit::model::{checkpoint, HeadKind, ModelConfig};
use scalevit::signal::{make_folds, FoldMode};
use scalevit::training::{
    evaluate_classification, evaluate_regression, is_relevant, metric_name, prepare, relevance_threshold, report,
    run_experiment, LabelSource, Scheduler, Target, TrainConfig,
};
use scalevit::{exec, Error, Exec};

use crate::{
    Cli, Command, CwtArgs, EvalArgs, FoldModeArg, LabelArg, ModelArgs, PcaArgs, PresetArg, PreviewArgs, ReportArgs,
    SchedulerArg, SynthArgs, TaskArg, TrainArgs,
};

/// Relative `--data` paths resolve against this directory when it is set.
pub const DATA_DIR_ENV: &str = "SCALEVIT_DATA_DIR";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Lib(Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Lib(e) if e.is_numerical() => 3,
            CliError::Lib(
                Error::UnknownSubset(_)
                | Error::BadConfig(_)
                | Error::BadK { .. }
                | Error::BadRange(_)
                | Error::BadSize { .. },
            ) => 1,
            CliError::Lib(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Lib(Error::UnknownSubset(name)) => {
                write!(f, "unknown subset '{name}'; run `scalevit subsets` for the list, or use pca-K")
            }
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Lib(Error::Io(e))
    }
}

type CliResult<T> = Result<T, CliError>;

pub fn dispatch(cli: Cli) -> CliResult<()> {
    let exec = match cli.jobs {
        Some(0) => return Err(CliError::Usage("--jobs must be at least 1".into())),
        Some(n) => {
            if n > 1 {
                exec::init_threads(n)?;
            }
            Exec::from_jobs(n)
        }
        None => Exec::Parallel,
    };
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::CwtPreview(a) => preview(a),
        Command::Pca(a) => pca(a),
        Command::Train(a) => train(a, exec),
        Command::Eval(a) => eval(a, exec),
        Command::Report(a) => merge_reports(a),
        Command::Subsets => {
            print!("{}", subsets_json());
            Ok(())
        }
    }
}

fn data_path(p: &Path) -> PathBuf {
    match std::env::var_os(DATA_DIR_ENV) {
        Some(dir) if p.is_relative() => Path::new(&dir).join(p),
        _ => p.to_path_buf(),
    }
}

fn load(p: &Path) -> CliResult<PortableDataset> {
    let path = data_path(p);
    read_portable(&path).map_err(|e| match e {
        Error::Io(io) => CliError::Lib(Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display())))),
        other => CliError::Lib(other),
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_atomic(path, bytes)?;
    Ok(())
}

fn cwt_config(a: &CwtArgs) -> CwtConfig {
    CwtConfig {
        f_min_hz: a.f_min,
        f_max_hz: a.f_max,
        n_scales: a.scales,
        omega0: a.omega0,
        image_height: a.image_size,
        image_width: a.image_size,
    }
}

/// Registry names, or `pca-K` ranked on `ds`.
fn subset_for(name: &str, ds: &PortableDataset) -> CliResult<ChannelSubset> {
    if let Some(k) = name.strip_prefix("pca-") {
        let k: usize = k
            .parse()
            .map_err(|_| CliError::Usage(format!("bad PCA subset '{name}', expected pca-K")))?;
        let ranking = pca_rank_channels(&ds.trials)?;
        return Ok(top_k(&ranking, k)?);
    }
    Ok(resolve_subset(name)?)
}

fn synth(a: SynthArgs) -> CliResult<()> {
    let config = SynthConfig {
        n_participants: a.participants,
        n_videos: a.videos,
        n_channels: a.channels,
        fs_hz: a.fs,
        duration_s: a.duration,
        noise_sigma: a.noise,
        seed: a.seed,
    };
    let ds = synth_generate(&config)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_portable(&ds, &a.out)?;
    if let Some(path) = &a.labels_csv {
        write_file(path, ds.labels_csv().as_bytes())?;
    }
    println!(
        "wrote {} trials x {} channels x {} samples to {}",
        ds.trials.len(),
        ds.channel_names.len(),
        ds.n_samples(),
        a.out.display()
    );
    Ok(())
}

fn preview(a: PreviewArgs) -> CliResult<()> {
    let ds = load(&a.data)?;
    let trial = ds.trials.get(a.trial).ok_or_else(|| {
        CliError::Usage(format!("trial {} out of range (file has {})", a.trial, ds.trials.len()))
    })?;
    let channel = match a.channel.parse::<usize>() {
        Ok(i) if (1..=ds.channel_names.len()).contains(&i) => i - 1,
        Ok(i) => {
            return Err(CliError::Usage(format!(
                "channel {i} out of range 1..={}",
                ds.channel_names.len()
            )))
        }
        Err(_) => ds
            .channel_names
            .iter()
            .position(|n| n.eq_ignore_ascii_case(&a.channel))
            .ok_or_else(|| CliError::Lib(Error::MissingChannel(a.channel.clone())))?,
    };
    let cfg = cwt_config(&a.cwt);
    let plan = CwtPlan::new(&cfg.grid(ds.sample_rate_hz as f64)?, ds.n_samples())?;
    let image = channel_raster(&plan, &trial.channel(channel), &ds.channel_names[channel], &cfg)?;
    write_file(&a.out, &image.to_pgm())?;
    println!(
        "wrote {}x{} scaleogram of {} (trial {}) to {}",
        image.width(),
        image.height(),
        ds.channel_names[channel],
        a.trial,
        a.out.display()
    );
    Ok(())
}

fn pca(a: PcaArgs) -> CliResult<()> {
    let ds = load(&a.data)?;
    let ranking = pca_rank_channels(&ds.trials)?;
    let mut csv = String::from("rank,channel,index,score,cumulative\n");
    for (rank, ((pos, score), cum)) in ranking.entries.iter().zip(&ranking.cumulative).enumerate() {
        let name = &ranking.channel_names[*pos];
        let index = deap_index(name).unwrap_or(pos + 1);
        csv.push_str(&format!("{},{},{},{:.6},{:.6}\n", rank + 1, name, index, score, cum));
    }
    match a.out {
        Some(path) => write_file(&path, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn model_config(a: &ModelArgs, n_channels: usize, head: HeadKind, image_size: usize) -> ModelConfig {
    let mut m = match a.model {
        PresetArg::Default => ModelConfig::default_for(n_channels, head),
        PresetArg::Small => ModelConfig::small(n_channels, head),
    };
    m.image_height = image_size;
    m.image_width = image_size;
    if let Some(v) = a.patch_size {
        m.patch_size = v;
    }
    if let Some(v) = a.embed_dim {
        m.embed_dim = v;
    }
    if let Some(v) = a.depth {
        m.depth = v;
    }
    if let Some(v) = a.heads {
        m.n_heads = v;
    }
    if let Some(v) = a.linformer_k {
        m.linformer_k = v;
    }
    if let Some(v) = a.mlp_dim {
        m.mlp_dim = v;
    }
    if let Some(v) = a.dropout {
        m.dropout_rate = v;
    }
    m
}

fn label_source(labels: LabelArg, task: TaskArg) -> CliResult<LabelSource> {
    match (task, labels) {
        (TaskArg::Classify, LabelArg::Vaq) => Ok(LabelSource::Vaq),
        (TaskArg::Classify, LabelArg::Sam) => Ok(LabelSource::Sam),
        (TaskArg::Regress, LabelArg::Sam) => Ok(LabelSource::SamContinuous),
        (TaskArg::Regress, LabelArg::Vaq) => Err(CliError::Usage(
            "regression needs continuous ratings: use --labels sam".into(),
        )),
    }
}

fn train(a: TrainArgs, exec: Exec) -> CliResult<()> {
    let ds = load(&a.data)?;
    let subset = subset_for(&a.subset, &ds)?;
    let head = match a.task {
        TaskArg::Classify => HeadKind::Classify4,
        TaskArg::Regress => HeadKind::Regress2,
    };
    let labels = label_source(a.labels, a.task)?;
    let cwt = cwt_config(&a.cwt);
    let model = model_config(&a.model, subset.len(), head, a.cwt.image_size);
    model.validate()?;
    let mut train = TrainConfig::for_task(head);
    train.lr = a.lr;
    train.max_epochs = a.epochs;
    train.batch_size = a.batch_size;
    if let Some(p) = a.patience {
        train.patience = p;
    }
    train.seed = a.seed;
    train.huber_delta = a.huber_delta;
    train.validation_fraction = a.validation_fraction;
    train.scheduler = match a.scheduler {
        SchedulerArg::Cosine => Scheduler::Cosine {
            final_fraction: a.final_lr_fraction,
        },
        SchedulerArg::Step => Scheduler::Step {
            step_epochs: a.step_epochs,
            gamma: a.gamma,
        },
    };
    train.validate()?;
    let mode = match a.fold_mode {
        FoldModeArg::RandomTrial => FoldMode::RandomTrial,
        FoldModeArg::CrossPerson => FoldMode::CrossPerson,
    };
    let folds = make_folds(&ds.trials, a.folds, a.seed, mode)?;
    println!(
        "subset {} ({} channels), {} trials, {} folds, {} parameters",
        subset.name,
        subset.len(),
        ds.trials.len(),
        folds.k,
        model.param_count()
    );

    let experiment = run_experiment(&ds, &subset, labels, &folds, &train, &model, &cwt, exec)?;
    let r = &experiment.report;
    let mut outputs = vec![
        ("report.json".to_string(), report::to_json(r)?.into_bytes()),
        ("report.csv".to_string(), report::to_csv(std::slice::from_ref(r)).into_bytes()),
        ("boxplot.svg".to_string(), report::boxplot_svg(std::slice::from_ref(r)).into_bytes()),
    ];
    if !a.no_checkpoints {
        for (i, params) in experiment.models.iter().enumerate() {
            outputs.push((format!("fold{}.sdvm", i + 1), checkpoint::encode(&model, params)?));
        }
    }
    std::fs::create_dir_all(&a.out)?;
    for (name, bytes) in &outputs {
        write_atomic(&a.out.join(name), bytes)?;
    }
    for f in &r.folds {
        println!(
            "fold {}: {} {} (best epoch {}, stopped {})",
            f.fold_index,
            r.metric_name,
            report::format_metric(r.task, f.metric),
            f.best_epoch,
            f.stopped_epoch
        );
    }
    println!(
        "mean {} {} vs threshold {} -> {}",
        r.metric_name,
        report::format_metric(r.task, r.mean),
        report::format_metric(r.task, r.threshold),
        if r.relevant { "relevant" } else { "not relevant" }
    );
    Ok(())
}

fn eval(a: EvalArgs, exec: Exec) -> CliResult<()> {
    let (model, params) = checkpoint::load(&a.model)?;
    let ds = load(&a.data)?;
    let subset = subset_for(&a.subset, &ds)?;
    if subset.len() != model.n_channels {
        return Err(CliError::Usage(format!(
            "checkpoint expects {} channels, subset {} has {}",
            model.n_channels,
            subset.name,
            subset.len()
        )));
    }
    let mut cwt = cwt_config(&a.cwt);
    cwt.image_height = model.image_height;
    cwt.image_width = model.image_width;
    let data = prepare(&ds, &subset, &cwt, exec)?;
    let all: Vec<usize> = (0..data.len()).collect();
    let views = data.views(&all);
    let value = match model.head {
        HeadKind::Classify4 => {
            let source = label_source(a.labels, TaskArg::Classify)?;
            let labels: Vec<usize> = data
                .labels
                .iter()
                .map(|l| match source.target(l) {
                    Target::Class(c) => c,
                    Target::Pair(_) => unreachable!("classification source"),
                })
                .collect();
            evaluate_classification(&params, &model, &views, &labels, exec)?
        }
        HeadKind::Regress2 => {
            let targets: Vec<[f64; 2]> = data
                .labels
                .iter()
                .map(|l| [l.sam_valence as f64, l.sam_arousal as f64])
                .collect();
            evaluate_regression(&params, &model, &views, &targets, exec)?
        }
    };
    let out = serde_json::json!({
        "subset": subset.name,
        "n_trials": data.len(),
        "metric": metric_name(model.head),
        "value": value,
        "threshold": relevance_threshold(model.head),
        "relevant": is_relevant(model.head, value),
    });
    println!("{}", serde_json::to_string_pretty(&out).expect("plain JSON"));
    Ok(())
}

fn merge_reports(a: ReportArgs) -> CliResult<()> {
    let mut reports = Vec::with_capacity(a.runs.len());
    for path in &a.runs {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Lib(Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))))?;
        reports.push(report::from_json(&text)?);
    }
    if reports.iter().any(|r| r.task != reports[0].task) {
        return Err(CliError::Usage("cannot merge classification and regression reports".into()));
    }
    std::fs::create_dir_all(&a.out)?;
    write_atomic(&a.out.join("table.csv"), report::to_csv(&reports).as_bytes())?;
    write_atomic(&a.out.join("boxplot.svg"), report::boxplot_svg(&reports).as_bytes())?;
    println!("merged {} reports into {}", reports.len(), a.out.display());
    Ok(())
}

/// Registry JSON with one subset per line.
pub fn subsets_json() -> String {
    let mut electrodes = Vec::new();
    let mut indices = Vec::new();
    for name in registry_names() {
        let s = resolve_subset(&name).expect("registered subset");
        let key = serde_json::to_string(&name).expect("string");
        electrodes.push(format!("    {key}: {}", serde_json::to_string(&s.channel_names).expect("strings")));
        indices.push(format!("    {key}: {}", serde_json::to_string(&s.indices).expect("integers")));
    }
    format!(
        "{{\n  \"electrodes\": {{\n{}\n  }},\n  \"indices\": {{\n{}\n  }}\n}}\n",
        electrodes.join(",\n"),
        indices.join(",\n")
    )
}
