//! End-to-end orchestration: sessions to windows, training of both
//! classifiers and evaluation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{self, binarize_tlx, DatasetError, SplitMode, WindowConfig, WindowedDataset};
use crate::eval::{self, Classifier, EvalError, EvalReport};
use crate::forest::{self, ForestError, ForestGrid, ForestModel};
use crate::ivt::{self, FixationEvent, IvtConfig, IvtError};
use crate::mlp::{self, MlpConfig, MlpError, MlpModel};
use crate::preprocess::{self, PreprocessConfig, PreprocessError, PupilChannels, PupilRange};
use crate::seed;
use crate::session::{self, GazeSession, SessionError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Ivt(#[from] IvtError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Mlp(#[from] MlpError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("session {participant}: {source}")]
    InSession {
        participant: String,
        #[source]
        source: Box<PipelineError>,
    },
}

impl PipelineError {
    fn in_session(participant: &str, e: impl Into<PipelineError>) -> Self {
        Self::InSession {
            participant: participant.to_string(),
            source: Box::new(e.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub preprocess: PreprocessConfig,
    pub ivt: IvtConfig,
    pub window: WindowConfig,
    pub split: SplitMode,
    pub test_fraction: f64,
    pub mlp: MlpConfig,
    pub grid: ForestGrid,
    pub folds: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            preprocess: PreprocessConfig::default(),
            ivt: IvtConfig::default(),
            window: WindowConfig::default(),
            split: SplitMode::WindowRandom,
            test_fraction: 0.2,
            mlp: MlpConfig::default(),
            grid: ForestGrid::default(),
            folds: 3,
            seed: 0,
        }
    }
}

/// Per-purpose seeds derived from the run seed.
pub fn split_seed(seed: u64) -> u64 {
    seed::derive(seed, 0)
}

pub fn mlp_seed(seed: u64) -> u64 {
    seed::derive(seed, 1)
}

pub fn forest_seed(seed: u64) -> u64 {
    seed::derive(seed, 2)
}

/// Trims every session to its task start and denoises/normalizes the pupil.
pub fn preprocess_all(
    sessions: Vec<GazeSession>,
    cfg: &PreprocessConfig,
) -> Result<(Vec<GazeSession>, Vec<PupilChannels>, PupilRange), PipelineError> {
    let trimmed = sessions
        .into_iter()
        .map(session::trim_pre_task)
        .collect::<Result<Vec<_>, _>>()?;
    let (channels, range) = preprocess::preprocess_sessions(&trimmed, cfg)?;
    Ok((trimmed, channels, range))
}

pub fn session_fixations(
    session: &GazeSession,
    pupil: &PupilChannels,
    cfg: &IvtConfig,
) -> Result<Vec<FixationEvent>, PipelineError> {
    ivt::detect_fixations(session, pupil, cfg).map_err(|e| PipelineError::in_session(&session.meta().participant_id, e))
}

/// Windows of one session labelled from its TLX score.
pub fn session_windows(
    session: &GazeSession,
    events: &[FixationEvent],
    cfg: &WindowConfig,
) -> Result<WindowedDataset, PipelineError> {
    let meta = session.meta();
    let wrap = |e: DatasetError| PipelineError::in_session(&meta.participant_id, e);
    let label = binarize_tlx(meta.tlx_mental as i64).map_err(wrap)?;
    let (dur, pupil) = dataset::sample_aligned_channels(session.len(), events);
    dataset::make_windows(&dur, &pupil, label, &meta.participant_id, cfg).map_err(wrap)
}

/// Raw sessions to one pooled windowed dataset.
pub fn build_dataset(
    sessions: Vec<GazeSession>,
    cfg: &PipelineConfig,
) -> Result<(WindowedDataset, PupilRange), PipelineError> {
    let (sessions, channels, range) = preprocess_all(sessions, &cfg.preprocess)?;
    let mut all = WindowedDataset::empty(cfg.window.width(), cfg.window.input_mode);
    for (s, pupil) in sessions.iter().zip(&channels) {
        let events = session_fixations(s, pupil, &cfg.ivt)?;
        tracing::debug!(participant = %s.meta().participant_id, fixations = events.len(), "fixations detected");
        all.append(session_windows(s, &events, &cfg.window)?)?;
    }
    Ok((all, range))
}

pub fn train_mlp(train: &WindowedDataset, cfg: &PipelineConfig) -> Result<MlpModel, PipelineError> {
    let mlp_cfg = MlpConfig {
        seed: mlp_seed(cfg.seed),
        ..cfg.mlp.clone()
    };
    Ok(mlp::train(train, &mlp_cfg)?)
}

pub fn train_forest(train: &WindowedDataset, cfg: &PipelineConfig) -> Result<ForestModel, PipelineError> {
    Ok(forest::grid_search(train, &cfg.grid, cfg.folds, forest_seed(cfg.seed))?)
}

#[derive(Debug)]
pub struct PipelineOutput {
    pub train: WindowedDataset,
    pub test: WindowedDataset,
    pub range: PupilRange,
    pub mlp: MlpModel,
    pub forest: ForestModel,
    pub reports: Vec<EvalReport>,
}

/// Full chain: preprocess, fixations, windows, split, both models, reports.
pub fn run(sessions: Vec<GazeSession>, cfg: &PipelineConfig) -> Result<PipelineOutput, PipelineError> {
    let (all, range) = build_dataset(sessions, cfg)?;
    let (train, test) = dataset::split(&all, cfg.split, cfg.test_fraction, split_seed(cfg.seed))?;
    tracing::info!(train = train.len(), test = test.len(), width = train.width(), "dataset split");
    let mlp = train_mlp(&train, cfg)?;
    tracing::info!("mlp trained");
    let forest = train_forest(&train, cfg)?;
    tracing::info!(n_trees = forest.config.n_trees, "forest selected");
    let reports = vec![
        eval::evaluate(Classifier::mlp(&mlp), &test, "MLP", "test")?,
        eval::evaluate(Classifier::Forest(&forest), &test, "RF", "test")?,
    ];
    Ok(PipelineOutput {
        train,
        test,
        range,
        mlp,
        forest,
        reports,
    })
}
