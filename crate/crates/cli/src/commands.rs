use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use surprise_bo::augmentation::{
    filter_plausible, table, train_gan, AugmentError, Condition, PlausibleRanges, SyntheticBatch, TrainedGan,
};
use surprise_bo::bench::{
    phase2_sweep, read_external_rows, run_benchmark, run_scenario, summarize, write_scenario, write_summary,
    write_sweep, BenchData, BenchError, RunOptions, Scenario, ScenarioSpec, SyntheticTask,
};
use surprise_bo::dataset::{load_and_clean, split, DatasetError, FeatureSchema, Target};
use surprise_bo::engine::{
    final_report, run_campaign, write_log_jsonl, CampaignConfig, CampaignSetup, EngineError, Oracle, Policy,
};
use surprise_bo_service::AppState;

use crate::settings::{
    resolve_data, BenchSettings, CampaignSettings, GanFilterSettings, GanSampleSettings, GanTrainSettings,
    OracleKind, PrepareSettings, ScenarioChoice, ServeSettings, DATA_ENV,
};
use crate::CliError;

fn dataset_error(e: DatasetError) -> CliError {
    match e {
        DatasetError::Split(m) | DatasetError::Budget(m) => CliError::Config(m),
        other => CliError::Data(other.to_string()),
    }
}

fn engine_error(e: EngineError) -> CliError {
    match e {
        EngineError::Config(m) => CliError::Config(m),
        EngineError::Dataset(d) => dataset_error(d),
        other => CliError::Other(other.to_string()),
    }
}

fn augment_error(e: AugmentError) -> CliError {
    match e {
        e @ (AugmentError::Config(_) | AugmentError::TooFewRows { .. }) => CliError::Config(e.to_string()),
        e @ (AugmentError::Json(_) | AugmentError::Csv(_) | AugmentError::Io(_) | AugmentError::MissingRange(_)) => {
            CliError::Data(e.to_string())
        }
        other => CliError::Other(other.to_string()),
    }
}

fn bench_error(e: BenchError) -> CliError {
    match e {
        BenchError::Spec(m) => CliError::Config(m),
        BenchError::Dataset(d) => dataset_error(d),
        BenchError::Engine(e) => engine_error(e),
        BenchError::Augment(e) => augment_error(e),
        other => CliError::Other(other.to_string()),
    }
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Other(format!("{}: {e}", path.display()))
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>) -> Result<PathBuf, CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io(parent))?;
    }
    fs::write(&path, contents).map_err(io(&path))?;
    Ok(path)
}

fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn require_data(explicit: Option<&Path>) -> Result<PathBuf, CliError> {
    resolve_data(explicit)?
        .ok_or_else(|| CliError::Config(format!("no data file: pass --data or set {DATA_ENV}")))
}

/// Loads and splits the melt-pool table, standardized on the train part.
fn real_data(path: &Path, target: Target, fraction: f64, seed: u64) -> Result<BenchData, CliError> {
    let (ds, report) = load_and_clean(path, &FeatureSchema::meltpool(target)).map_err(dataset_error)?;
    tracing::info!(rows_in = report.rows_in, rows_out = report.rows_out, "cleaned");
    let sp = split(&ds, fraction, seed).map_err(dataset_error)?;
    BenchData::from_split(&sp).map_err(bench_error)
}

pub fn prepare(mut s: PrepareSettings, out: &Path) -> Result<(), CliError> {
    let path = require_data(s.data.as_deref())?;
    s.data = Some(path.clone());
    let (ds, report) = load_and_clean(&path, &FeatureSchema::meltpool(s.target)).map_err(dataset_error)?;
    let sp = split(&ds, s.train_fraction, s.split_seed).map_err(dataset_error)?;
    let train = sp.train.normalize().map_err(dataset_error)?;
    let scaling = train.scaling().expect("normalized").clone();
    let test = sp.test.normalize_with(&scaling);

    let dir = out.join("prepare").join(s.target.name());
    write(dir.join("config.json"), pretty(&s))?;
    write(dir.join("cleaning.json"), pretty(&report))?;
    write(dir.join("scaling.json"), pretty(&scaling))?;
    write(
        dir.join("split.json"),
        pretty(&serde_json::json!({
            "seed": sp.seed,
            "train_fraction": sp.train_fraction,
            "train_rows": sp.train_rows,
            "test_rows": sp.test_rows,
        })),
    )?;
    for (name, d) in [("train", &sp.train), ("test", &sp.test)] {
        let mut buf = Vec::new();
        d.write_csv(&mut buf).map_err(dataset_error)?;
        write(dir.join(format!("{name}.csv")), buf)?;
    }
    // write_csv always restores raw units
    for (name, d) in [("train_normalized", &train), ("test_normalized", &test)] {
        let (columns, values) = table(d);
        let mut text = columns.join(",");
        text.push('\n');
        for row in values.row_iter() {
            let cells: Vec<String> = row.iter().map(f64::to_string).collect();
            text.push_str(&cells.join(","));
            text.push('\n');
        }
        write(dir.join(format!("{name}.csv")), text)?;
    }
    let summary = serde_json::json!({
        "cleaning": report,
        "train": sp.train.len(),
        "test": sp.test.len(),
        "dir": dir,
    });
    println!("{summary}");
    Ok(())
}

pub fn campaign(mut s: CampaignSettings, out: &Path) -> Result<(), CliError> {
    let data = match s.oracle {
        OracleKind::Pool => {
            let path = require_data(s.data.as_deref())?;
            s.data = Some(path.clone());
            real_data(&path, s.target, s.train_fraction, s.split_seed)?
        }
        OracleKind::Synthetic => SyntheticTask::desk(s.task_seed).data().map_err(bench_error)?,
    };
    let preset = ScenarioSpec::preset(s.target, s.seed);
    let warmup = *s.warmup.get_or_insert(preset.warmup);
    let budget = *s.budget.get_or_insert(preset.sequential_budget);
    let mut cfg = CampaignConfig::new(s.policy, warmup, budget, s.seed);
    cfg.surprise = s.surprise.clone();
    cfg.fit = s.fit.clone();
    cfg.neighborhood_radius = s.neighborhood_radius;
    cfg.validate().map_err(engine_error)?;
    let setup = CampaignSetup::draw(data.train.features().clone(), &cfg).map_err(engine_error)?;
    let state =
        run_campaign(cfg.clone(), setup, &Oracle::pool(data.train.targets().clone())).map_err(engine_error)?;
    let report = final_report(&state, Some(&data.test)).map_err(engine_error)?;

    let dir = out.join("campaign");
    write(
        dir.join("config.json"),
        pretty(&serde_json::json!({"settings": s, "campaign": cfg})),
    )?;
    let mut log = Vec::new();
    write_log_jsonl(state.log(), &mut log).map_err(engine_error)?;
    write(dir.join("log.jsonl"), log)?;
    write(dir.join("report.json"), pretty(&report))?;
    println!("{}", serde_json::to_string(&report).expect("serializable"));
    Ok(())
}

pub fn gan_train(mut s: GanTrainSettings, out: &Path) -> Result<(), CliError> {
    let data = if s.synthetic {
        SyntheticTask::desk(s.task_seed).data().map_err(bench_error)?
    } else {
        let path = require_data(s.data.as_deref())?;
        s.data = Some(path.clone());
        real_data(&path, s.target, s.train_fraction, s.split_seed)?
    };
    let warmup = *s.warmup.get_or_insert(ScenarioSpec::preset(s.target, s.seed).warmup);
    // Same warm-up rows a campaign with this seed would start from.
    let cfg = CampaignConfig::new(Policy::Shannon, warmup, 0, s.seed);
    let setup = CampaignSetup::draw(data.train.features().clone(), &cfg).map_err(engine_error)?;
    let real = data.train.subset(&setup.warmup);
    s.gan.validate().map_err(augment_error)?;
    let gan = train_gan(&real, &s.gan).map_err(augment_error)?;
    let ranges = PlausibleRanges::from_dataset(&data.train);

    let dir = out.join("gan");
    write(dir.join("train_config.json"), pretty(&s))?;
    write(dir.join("model.json"), serde_json::to_string(&gan).expect("serializable"))?;
    write(dir.join("snapshot.json"), pretty(&gan.snapshot()))?;
    write(dir.join("ranges.json"), ranges.to_json())?;
    let mut history = String::from("epoch,discriminator_loss,generator_loss\n");
    for (i, l) in gan.history.iter().enumerate() {
        history.push_str(&format!("{},{},{}\n", i + 1, l.discriminator, l.generator));
    }
    write(dir.join("history.csv"), history)?;
    let last = gan.history.last();
    println!(
        "{}",
        serde_json::json!({
            "rows": real.len(),
            "epochs": gan.history.len(),
            "effective_batch": gan.effective_batch,
            "final_loss": last.map(|l| [l.discriminator, l.generator]),
            "config_hash": gan.config_hash,
        })
    );
    Ok(())
}

pub fn gan_sample(mut s: GanSampleSettings, out: &Path) -> Result<(), CliError> {
    let dir = out.join("gan");
    let model = s.model.get_or_insert_with(|| dir.join("model.json")).clone();
    let gan: TrainedGan = read_json(&model)?;
    let condition = match s.tercile {
        Some(k) => Condition::Tercile(k),
        None => Condition::Uniform,
    };
    let batch = gan.sample(s.count, condition, s.seed).map_err(augment_error)?;
    write(dir.join("sample_config.json"), pretty(&s))?;
    write(dir.join("batch.json"), serde_json::to_string(&batch).expect("serializable"))?;
    let mut csv = Vec::new();
    batch.write_csv(&mut csv).map_err(augment_error)?;
    write(dir.join("synthetic.csv"), csv)?;
    println!("{}", serde_json::json!({"rows": batch.len(), "provenance": batch.provenance}));
    Ok(())
}

pub fn gan_filter(mut s: GanFilterSettings, out: &Path) -> Result<(), CliError> {
    let dir = out.join("gan");
    let input = s.input.get_or_insert_with(|| dir.join("batch.json")).clone();
    let ranges_path = s.ranges.get_or_insert_with(|| dir.join("ranges.json")).clone();
    let batch: SyntheticBatch = read_json(&input)?;
    let file = fs::File::open(&ranges_path).map_err(|e| CliError::Data(format!("{}: {e}", ranges_path.display())))?;
    let ranges = PlausibleRanges::from_json(file).map_err(augment_error)?;
    let kept = filter_plausible(&batch, &ranges).map_err(augment_error)?;
    write(dir.join("filter_config.json"), pretty(&s))?;
    write(dir.join("filtered.json"), serde_json::to_string(&kept).expect("serializable"))?;
    let mut csv = Vec::new();
    kept.write_csv(&mut csv).map_err(augment_error)?;
    write(dir.join("filtered.csv"), csv)?;
    println!("{}", serde_json::json!({"rows_in": batch.len(), "rows_out": kept.len()}));
    Ok(())
}

pub fn bench(mut s: BenchSettings, out: &Path) -> Result<(), CliError> {
    let jobs = s.jobs.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Other(e.to_string()))?;
    let (data, mut spec) = if s.synthetic {
        let task = SyntheticTask::desk(s.task_seed);
        (task.data().map_err(bench_error)?, task.spec(s.reps, s.seed))
    } else {
        let path = require_data(s.data.as_deref())?;
        s.data = Some(path.clone());
        let data = real_data(&path, s.target, s.train_fraction, s.split_seed)?;
        let spec = ScenarioSpec {
            repetitions: s.reps,
            ..ScenarioSpec::preset(s.target, s.seed)
        };
        (data, spec)
    };
    spec.warmup = s.warmup.unwrap_or(spec.warmup);
    spec.sequential_budget = s.budget.unwrap_or(spec.sequential_budget);
    spec.ml_train_size_scenario1 = s.ml_train_size_scenario1.unwrap_or(spec.ml_train_size_scenario1);
    spec.ml_train_size_scenario2 = s.ml_train_size_scenario2.unwrap_or(spec.warmup + spec.sequential_budget);
    spec.validate().map_err(bench_error)?;
    if s.models.is_empty() {
        return Err(CliError::Config("no models selected".into()));
    }
    let external = match &s.external_baselines {
        Some(p) => {
            let f = fs::File::open(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            read_external_rows(f).map_err(|e| CliError::Data(e.to_string()))?
        }
        None => Vec::new(),
    };
    let opts = RunOptions {
        surprise: s.surprise.clone(),
        fit: s.fit.clone(),
        ..RunOptions::default()
    };

    let dir = out.join("bench");
    let results = pool.install(|| match s.scenario {
        ScenarioChoice::Both => run_benchmark(&spec, &data, &s.models, &opts),
        ScenarioChoice::I => run_scenario(&spec, &data, &s.models, Scenario::I, &opts).map(|r| vec![r]),
        ScenarioChoice::II => run_scenario(&spec, &data, &s.models, Scenario::II, &opts).map(|r| vec![r]),
    });
    let results = results.map_err(bench_error)?;
    for r in &results {
        write_scenario(&dir, r).map_err(bench_error)?;
    }
    let summary = summarize(&results, &external).map_err(bench_error)?;
    write_summary(&dir, &summary).map_err(bench_error)?;

    if s.sweep {
        let mut policies: Vec<Policy> = s.models.iter().filter_map(|m| m.policy()).filter(|p| p.is_surprise()).collect();
        if policies.is_empty() {
            policies = vec![Policy::Shannon, Policy::Bayesian];
        }
        let curve = pool
            .install(|| phase2_sweep(&spec, &data, &s.gan, &s.counts, &policies, &opts))
            .map_err(bench_error)?;
        write_sweep(&dir, &curve).map_err(bench_error)?;
    }
    write(
        dir.join(&spec.name).join("config.json"),
        pretty(&serde_json::json!({"settings": s, "spec": spec})),
    )?;
    for row in &summary.rows {
        let m = |x: &Option<surprise_bo::bench::MeanMedian>| x.as_ref().map(|v| v.mean);
        println!(
            "{}",
            serde_json::json!({"model": row.model, "scenario1_mean": m(&row.scenario1), "scenario2_mean": m(&row.scenario2)})
        );
    }
    Ok(())
}

pub fn serve(s: ServeSettings) -> Result<(), CliError> {
    let state = match &s.store {
        Some(dir) => AppState::persistent(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?,
        None => AppState::in_memory(),
    };
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Other(e.to_string()))?;
    rt.block_on(async {
        let addr = format!("{}:{}", s.host, s.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| CliError::Config(format!("cannot bind {addr}: {e}")))?;
        let local = listener.local_addr().map_err(|e| CliError::Other(e.to_string()))?;
        eprintln!("listening on http://{local} ({} stored campaigns)", state.len());
        surprise_bo_service::serve(listener, state)
            .await
            .map_err(|e| CliError::Other(e.to_string()))
    })
}
