//! Evaluation layer for the fingerprint pipeline: mutual information for
//! alignment quality, EER and ROC curves for match scores, side-by-side
//! correspondence overlays, and a batch report runner that turns a labeled
//! pair dataset plus a trained model into a CSV and a JSON summary.

use std::path::PathBuf;

use thiserror::Error;

mod mi;
mod overlay;
mod rates;
mod report;

pub use mi::{masked_mutual_information, mutual_information, MI_BINS};
pub use overlay::{render_overlay, Overlay, LINE_VALUE};
pub use rates::{eer, roc_curve, trapezoid_auc, EerReport};
pub use report::{
    batch_report, BatchSummary, MiSummary, ReportOptions, REPORT_CSV, SUMMARY_FILE,
};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{what}: extents {found_w}x{found_h} do not match {want_w}x{want_h}")]
    Dimension {
        what: &'static str,
        want_w: usize,
        want_h: usize,
        found_w: usize,
        found_h: usize,
    },
    #[error("{what} has no samples to measure")]
    NoSamples { what: &'static str },
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("could not encode {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Image(#[from] whorl_image::ImageIoError),
    #[error(transparent)]
    Model(#[from] whorl_embed::EmbedError),
}
