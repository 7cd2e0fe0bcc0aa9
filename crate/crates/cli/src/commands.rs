use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use gazeload::dataset::{self, WindowedDataset};
use gazeload::eval::{self, Classifier, EvalReport};
use gazeload::forest::{ForestGrid, ForestModel};
use gazeload::ivt::{self, write_fixations_csv};
use gazeload::mlp::{self, MlpConfig};
use gazeload::pipeline::{self, PipelineConfig};
use gazeload::preprocess::{self, NormalizeScope, PupilRange};
use gazeload::session::{self, GazeSession};
use gazeload::stream::{LoadedModel, OutboundRecord, StreamConfig};
use gazeload::synth::{self, CohortConfig};
use gazeload_client::Pace;
use gazeload_service::AppState;
use serde_json::json;

use crate::args::*;
use crate::manifest::{manifest_for_file, RunManifest, RUN_MANIFEST_NAME};

pub const STREAM_CONFIG_NAME: &str = "stream.json";

#[derive(Debug)]
pub enum CliError {
    /// Exit code 1.
    Usage(String),
    /// Exit code 2.
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 1,
            Self::Data(_) => 2,
        }
    }
}

impl Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "usage error: {m}"),
            Self::Data(m) => write!(f, "error: {m}"),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn data(e: impl Display) -> CliError {
    CliError::Data(e.to_string())
}

fn ctx<T, E: Display>(r: std::result::Result<T, E>, what: impl Display) -> Result<T> {
    r.map_err(|e| CliError::Data(format!("{what}: {e}")))
}

fn create_dir(dir: &Path) -> Result<()> {
    ctx(fs::create_dir_all(dir), format_args!("creating {}", dir.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    ctx(fs::write(path, text), format_args!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(data)?;
    write_text(path, &(text + "\n"))
}

fn save_manifest(m: &RunManifest, path: &Path) -> Result<()> {
    ctx(m.save(path), format_args!("writing {}", path.display()))
}

fn load_session(input: &SessionInput) -> Result<GazeSession> {
    let s = ctx(
        GazeSession::load(&input.input, &input.manifest),
        format_args!("loading {}", input.input.display()),
    )?;
    ctx(session::trim_pre_task(s), "trimming to task start")
}

fn load_dataset(path: &Path) -> Result<WindowedDataset> {
    ctx(WindowedDataset::load(path), format_args!("loading {}", path.display()))
}

fn load_grid(path: Option<&Path>) -> Result<ForestGrid> {
    let Some(path) = path else {
        return Ok(ForestGrid::default());
    };
    let text = ctx(fs::read_to_string(path), format_args!("reading {}", path.display()))?;
    let grid: ForestGrid = ctx(serde_json::from_str(&text), format_args!("parsing grid {}", path.display()))?;
    if grid.is_empty() {
        return Err(CliError::Data(format!("grid {} has no combinations", path.display())));
    }
    Ok(grid)
}

fn stream_config(cfg: &PipelineConfig, sampling_hz: f64, range: PupilRange) -> StreamConfig {
    StreamConfig {
        window: cfg.window.clone(),
        ivt: cfg.ivt.clone(),
        sampling_hz,
        cutoff_hz: cfg.preprocess.cutoff_hz,
        range: (cfg.preprocess.normalize_scope == NormalizeScope::Global).then_some(range),
    }
}

fn sampling_hz(sessions: &[GazeSession]) -> Result<f64> {
    let fs = sessions.first().map(|s| s.meta().sampling_hz).unwrap_or(200.0);
    if sessions.iter().any(|s| s.meta().sampling_hz != fs) {
        return Err(CliError::Data("sessions have different sampling rates".into()));
    }
    Ok(fs)
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let cohort = CohortConfig {
        n_low: a.cohort.n_low,
        n_high: a.cohort.n_high,
        effect: a.cohort.effect,
        duration_s: a.cohort.duration_s,
        seed: a.seed,
    };
    let sessions = synth::generate_cohort(&cohort).map_err(data)?;
    let written = ctx(session::save_session_dir(&a.out_dir, &sessions), "writing cohort")?;
    let mut m = RunManifest::new("synth", Some(a.seed), json!({ "cohort": cohort }));
    m.outputs = written;
    save_manifest(&m, &a.out_dir.join(RUN_MANIFEST_NAME))?;
    println!("wrote {} sessions to {}", sessions.len(), a.out_dir.display());
    Ok(())
}

pub fn preprocess(a: &PreprocessArgs) -> Result<()> {
    let s = load_session(&a.session)?;
    let cfg = a.pre.config();
    let pupil = preprocess::preprocess_pupil(&s, &cfg).map_err(data)?;
    let mut out = String::from("timestamp_us,left_pupil,right_pupil\n");
    for ((t, l), r) in s.timestamps().zip(&pupil.left).zip(&pupil.right) {
        out.push_str(&format!("{t},{l},{r}\n"));
    }
    write_text(&a.out, &out)?;
    let mut m = RunManifest::new("preprocess", None, json!({ "preprocess": cfg }));
    m.inputs = vec![a.session.input.clone(), a.session.manifest.clone()];
    m.outputs = vec![a.out.clone()];
    save_manifest(&m, &manifest_for_file(&a.out))
}

pub fn fixations(a: &FixationsArgs) -> Result<()> {
    let s = load_session(&a.session)?;
    let (pre, ivt_cfg) = (a.pre.config(), a.ivt.config());
    let pupil = preprocess::preprocess_pupil(&s, &pre).map_err(data)?;
    let events = ivt::detect_fixations(&s, &pupil, &ivt_cfg).map_err(data)?;
    let file = ctx(fs::File::create(&a.out), format_args!("creating {}", a.out.display()))?;
    write_fixations_csv(std::io::BufWriter::new(file), &events).map_err(data)?;
    let mut m = RunManifest::new("fixations", None, json!({ "preprocess": pre, "ivt": ivt_cfg }));
    m.inputs = vec![a.session.input.clone(), a.session.manifest.clone()];
    m.outputs = vec![a.out.clone()];
    save_manifest(&m, &manifest_for_file(&a.out))?;
    println!("{} fixations", events.len());
    Ok(())
}

pub fn dataset(a: &DatasetArgs) -> Result<()> {
    let sessions = ctx(session::load_session_dir(&a.in_dir), format_args!("loading {}", a.in_dir.display()))?;
    let fs_hz = sampling_hz(&sessions)?;
    let cfg = PipelineConfig {
        preprocess: a.pre.config(),
        ivt: a.ivt.config(),
        window: a.window.config(),
        split: a.split.mode(),
        test_fraction: a.split.test_fraction,
        seed: a.seed,
        ..PipelineConfig::default()
    };
    let (all, range) = pipeline::build_dataset(sessions, &cfg).map_err(data)?;
    let (train, test) = dataset::split(&all, cfg.split, cfg.test_fraction, pipeline::split_seed(a.seed)).map_err(data)?;
    create_dir(&a.out_dir)?;
    let mut outputs = Vec::new();
    for (name, ds) in [("all.glds", &all), ("train.glds", &train), ("test.glds", &test)] {
        let p = a.out_dir.join(name);
        ctx(ds.save(&p), format_args!("writing {}", p.display()))?;
        outputs.push(p);
    }
    let sc = a.out_dir.join(STREAM_CONFIG_NAME);
    write_json(&sc, &stream_config(&cfg, fs_hz, range))?;
    outputs.push(sc);
    let mut m = RunManifest::new(
        "dataset",
        Some(a.seed),
        json!({ "preprocess": cfg.preprocess, "ivt": cfg.ivt, "window": cfg.window, "split": cfg.split, "test_fraction": cfg.test_fraction }),
    );
    m.inputs = vec![a.in_dir.clone()];
    m.outputs = outputs;
    save_manifest(&m, &a.out_dir.join(RUN_MANIFEST_NAME))?;
    println!("windows: {} total, {} train, {} test", all.len(), train.len(), test.len());
    Ok(())
}

fn mlp_config(args: &MlpArgs, seed: u64) -> MlpConfig {
    MlpConfig {
        seed: pipeline::mlp_seed(seed),
        ..args.config()
    }
}

pub fn train_mlp(a: &TrainMlpArgs) -> Result<()> {
    let train = load_dataset(&a.train)?;
    let cfg = mlp_config(&a.mlp, a.seed);
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let model = mlp::train(&train, &cfg).map_err(data)?;
    ctx(model.save(&a.out), format_args!("writing {}", a.out.display()))?;
    let mut m = RunManifest::new("train-mlp", Some(a.seed), json!({ "mlp": cfg }));
    m.inputs = vec![a.train.clone()];
    m.outputs = vec![a.out.clone()];
    save_manifest(&m, &manifest_for_file(&a.out))?;
    if let Some(last) = model.history().last() {
        println!("final epoch: loss {:.6}, accuracy {:.4}", last.loss, last.accuracy);
    }
    Ok(())
}

fn scores_path(model_out: &Path) -> PathBuf {
    let stem = model_out.file_stem().unwrap_or_default().to_string_lossy();
    model_out.with_file_name(format!("{stem}_scores.csv"))
}

fn write_scores(model: &ForestModel, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    model.write_scores_csv(&mut buf).map_err(data)?;
    ctx(fs::write(path, buf), format_args!("writing {}", path.display()))
}

pub fn train_rf(a: &TrainRfArgs) -> Result<()> {
    let train = load_dataset(&a.train)?;
    let grid = load_grid(a.rf.grid.as_deref())?;
    if a.rf.folds < 2 {
        return Err(CliError::Usage("--folds must be at least 2".into()));
    }
    let model = gazeload::forest::grid_search(&train, &grid, a.rf.folds, pipeline::forest_seed(a.seed)).map_err(data)?;
    ctx(model.save(&a.out), format_args!("writing {}", a.out.display()))?;
    let scores = scores_path(&a.out);
    write_scores(&model, &scores)?;
    let mut m = RunManifest::new("train-rf", Some(a.seed), json!({ "grid": grid, "folds": a.rf.folds }));
    m.inputs = vec![a.train.clone()];
    m.inputs.extend(a.rf.grid.clone());
    m.outputs = vec![a.out.clone(), scores];
    save_manifest(&m, &manifest_for_file(&a.out))?;
    println!("best config: {}", serde_json::to_string(&model.config).map_err(data)?);
    Ok(())
}

fn model_tag(model: &LoadedModel) -> &'static str {
    match model {
        LoadedModel::Mlp(_) => "MLP",
        LoadedModel::Forest(_) => "RF",
    }
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let test = load_dataset(&a.test)?;
    let dataset_tag = a.test.display().to_string();
    let mut reports: Vec<EvalReport> = Vec::new();
    for path in &a.model {
        let model = ctx(LoadedModel::load(path), format_args!("loading {}", path.display()))?;
        let classifier = match &model {
            LoadedModel::Mlp(m) => Classifier::Mlp {
                model: m.model(),
                threshold: a.threshold,
            },
            LoadedModel::Forest(f) => Classifier::Forest(f),
        };
        reports.push(eval::evaluate(classifier, &test, model_tag(&model), &dataset_tag).map_err(data)?);
    }
    let (text, csv) = eval::report_table(&reports);
    print!("{text}");
    if let Some(out) = &a.out {
        write_text(out, &csv)?;
        let mut m = RunManifest::new("evaluate", None, json!({ "threshold": a.threshold, "reports": reports }));
        m.inputs = a.model.clone();
        m.inputs.push(a.test.clone());
        m.outputs = vec![out.clone()];
        save_manifest(&m, &manifest_for_file(out))?;
    }
    Ok(())
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    ctx(tokio::runtime::Runtime::new(), "starting async runtime")
}

pub fn serve(a: &ServeArgs) -> Result<()> {
    let model = ctx(LoadedModel::load(&a.model), format_args!("loading {}", a.model.display()))?;
    let cfg = match &a.stream_config {
        Some(p) => {
            let text = ctx(fs::read_to_string(p), format_args!("reading {}", p.display()))?;
            ctx(serde_json::from_str::<StreamConfig>(&text), format_args!("parsing {}", p.display()))?
        }
        None => StreamConfig {
            window: a.window.config(),
            ivt: a.ivt.config(),
            sampling_hz: a.sampling_hz,
            cutoff_hz: a.cutoff_hz,
            range: None,
        },
    };
    let app = AppState::new(model, cfg).map_err(data)?;
    let rt = runtime()?;
    rt.block_on(async move {
        if a.pipe {
            let summary = gazeload_service::serve_pipe(app).await.map_err(data)?;
            tracing::info!(predictions = summary.predictions, errors = summary.errors, "pipe session done");
            return Ok(());
        }
        let stream_listener = ctx(tokio::net::TcpListener::bind(a.listen).await, format_args!("binding {}", a.listen))?;
        println!("stream listening on {}", stream_listener.local_addr().map_err(data)?);
        let http = match a.http {
            Some(addr) => {
                let l = ctx(tokio::net::TcpListener::bind(addr).await, format_args!("binding {addr}"))?;
                println!("http listening on {}", l.local_addr().map_err(data)?);
                let app = app.clone();
                Some(tokio::spawn(gazeload_service::serve_http(l, app, async {
                    let _ = tokio::signal::ctrl_c().await;
                })))
            }
            None => None,
        };
        let _ = std::io::stdout().flush();
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        ctx(gazeload_service::serve_stream(stream_listener, app, shutdown).await, "stream server")?;
        if let Some(h) = http {
            ctx(h.await.map_err(data)?, "http server")?;
        }
        Ok(())
    })
}

pub fn stream(a: &StreamArgs) -> Result<()> {
    let s = load_session(&a.session)?;
    let pace = if a.rate_hz > 0.0 { Pace::Rate(a.rate_hz) } else { Pace::Unpaced };
    let rt = runtime()?;
    let records = rt
        .block_on(gazeload_client::replay(a.connect.as_str(), s.samples(), pace))
        .map_err(|e| CliError::Data(format!("streaming to {}: {e}", a.connect)))?;
    let mut out = String::new();
    let (mut predictions, mut errors, mut max_latency) = (0usize, 0usize, 0u64);
    for r in &records {
        match r {
            OutboundRecord::Prediction(p) => {
                predictions += 1;
                max_latency = max_latency.max(p.latency_us);
            }
            OutboundRecord::Error(_) => errors += 1,
        }
        out.push_str(&serde_json::to_string(r).map_err(data)?);
        out.push('\n');
    }
    match &a.out {
        Some(p) => write_text(p, &out)?,
        None => print!("{out}"),
    }
    eprintln!("{predictions} predictions, {errors} errors, max latency {max_latency} us");
    Ok(())
}

pub fn pipeline(a: &PipelineArgs) -> Result<()> {
    let cohort = CohortConfig {
        n_low: a.cohort.n_low,
        n_high: a.cohort.n_high,
        effect: a.cohort.effect,
        duration_s: a.cohort.duration_s,
        seed: a.seed,
    };
    let sessions = match (&a.in_dir, a.synthetic) {
        (Some(dir), false) => ctx(session::load_session_dir(dir), format_args!("loading {}", dir.display()))?,
        (None, true) => synth::generate_cohort(&cohort).map_err(data)?,
        _ => return Err(CliError::Usage("pipeline needs exactly one of --synthetic or --in-dir".into())),
    };
    if a.rf.folds < 2 {
        return Err(CliError::Usage("--folds must be at least 2".into()));
    }
    let fs_hz = sampling_hz(&sessions)?;
    let cfg = PipelineConfig {
        preprocess: a.pre.config(),
        ivt: a.ivt.config(),
        window: a.window.config(),
        split: a.split.mode(),
        test_fraction: a.split.test_fraction,
        mlp: a.mlp.config(),
        grid: load_grid(a.rf.grid.as_deref())?,
        folds: a.rf.folds,
        seed: a.seed,
    };
    cfg.mlp.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let out = pipeline::run(sessions, &cfg).map_err(data)?;

    create_dir(&a.out_dir)?;
    let d = &a.out_dir;
    let mut outputs = Vec::new();
    let mlp_path = d.join("mlp.glmn");
    ctx(out.mlp.save(&mlp_path), "writing MLP")?;
    let rf_path = d.join("rf.glrf");
    ctx(out.forest.save(&rf_path), "writing forest")?;
    let scores = scores_path(&rf_path);
    write_scores(&out.forest, &scores)?;
    let (text, csv) = eval::report_table(&out.reports);
    let (report_csv, report_txt) = (d.join("report.csv"), d.join("report.txt"));
    write_text(&report_csv, &csv)?;
    write_text(&report_txt, &text)?;
    let sc = d.join(STREAM_CONFIG_NAME);
    write_json(&sc, &stream_config(&cfg, fs_hz, out.range))?;
    let metrics = d.join("metrics.json");
    write_json(&metrics, &out.reports)?;
    outputs.extend([mlp_path, rf_path, scores, report_csv, report_txt, sc, metrics]);
    if a.keep_datasets {
        for (name, ds) in [("train.glds", &out.train), ("test.glds", &out.test)] {
            let p = d.join(name);
            ctx(ds.save(&p), format_args!("writing {}", p.display()))?;
            outputs.push(p);
        }
    }
    let config = json!({
        "source": if a.synthetic { json!({ "synthetic": cohort }) } else { json!({ "in_dir": a.in_dir }) },
        "pipeline": cfg,
    });
    let mut m = RunManifest::new("pipeline", Some(a.seed), config);
    m.inputs = a.in_dir.iter().cloned().collect();
    m.inputs.extend(a.rf.grid.clone());
    m.outputs = outputs;
    save_manifest(&m, &d.join(RUN_MANIFEST_NAME))?;
    print!("{text}");
    Ok(())
}

pub fn rerun(a: &RerunArgs) -> Result<Vec<String>> {
    let m = ctx(RunManifest::load(&a.manifest), format_args!("reading {}", a.manifest.display()))?;
    if m.tool != "gazeload" {
        return Err(CliError::Data(format!("{} is not a gazeload run manifest", a.manifest.display())));
    }
    let argv = match &a.redirect {
        Some(target) => {
            let target = std::path::absolute(target).map_err(data)?;
            m.redirected_argv(&target)
                .ok_or_else(|| CliError::Usage(format!("`{}` runs have no output flag to redirect", m.command)))?
        }
        None => m.argv.clone(),
    };
    if m.cwd.as_os_str().is_empty() || !m.cwd.is_dir() {
        return Err(CliError::Data(format!("recorded working directory {} is missing", m.cwd.display())));
    }
    ctx(std::env::set_current_dir(&m.cwd), "entering recorded working directory")?;
    Ok(argv)
}
