//! Eye-tracking cognitive-load toolkit: gaze session ingestion, pupil
//! denoising, I-VT fixation extraction, sliding-window datasets, an
//! Adam-trained MLP, a grid-searched random forest, evaluation, a synthetic
//! session generator and the per-connection streaming inference state.

pub mod codec;
pub mod dataset;
pub mod eval;
pub mod ivt;
pub mod mlp;
pub mod pipeline;
pub mod preprocess;
pub mod seed;
pub mod forest;
pub mod session;
pub mod stream;
pub mod synth;
