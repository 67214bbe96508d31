//! Batch evaluation: score every pair of a labeled dataset, measure
//! alignment quality, and write a per-pair CSV plus a JSON summary.
//!
//! Output is byte-deterministic for a fixed dataset, model, and options:
//! rows keep dataset order, floats are printed at fixed precision, and the
//! worker count only changes wall time, never bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use whorl_align::{align, effective_mask, Enhancer, GaborEnhancer, RansacConfig};
use whorl_embed::{EmbedError, MatchModel, FAILURE_SCORE};
use whorl_image::save_png;
use whorl_synth::{load_pair_images, PairLabel, PairRecord};

use crate::mi::{masked_mutual_information, MI_BINS};
use crate::overlay::render_overlay;
use crate::rates::eer;
use crate::MetricsError;

pub const REPORT_CSV: &str = "report.csv";
pub const SUMMARY_FILE: &str = "summary.json";

const CSV_HEADER: &str = "pair_id,label,S,t1,t2,angle,inliers,failed\n";

/// Knobs for [`batch_report`].
#[derive(Clone, Debug)]
pub struct ReportOptions {
    /// Histogram resolution for the mutual-information measurements.
    pub bins: usize,
    /// Worker threads. Each worker constructs its own model through the
    /// factory, since model tapes are single-threaded.
    pub workers: usize,
    /// Also write a `<pair_id>_overlay.png` correspondence image for every
    /// pair that aligns.
    pub overlays: bool,
}

impl Default for ReportOptions {
    fn default() -> ReportOptions {
        ReportOptions { bins: MI_BINS, workers: 1, overlays: false }
    }
}

/// Aggregated alignment-quality numbers, measured on enhanced images over
/// the shared foreground mask.
///
/// Means cover genuine pairs where both the aligned and the unaligned
/// measurement succeeded, so the two numbers are always comparable.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MiSummary {
    pub bins: usize,
    pub units: String,
    pub masked: bool,
    pub aligned_mean: Option<f64>,
    pub unaligned_mean: Option<f64>,
    pub measured_pairs: usize,
}

/// Everything the batch run learned, mirroring the JSON summary on disk.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BatchSummary {
    pub pairs: usize,
    pub genuine: usize,
    pub imposter: usize,
    pub failures: usize,
    pub failure_rate: f64,
    /// Equal error rate over all rows, failures included at their floor
    /// score. Absent when the dataset lacks one of the two classes.
    pub eer: Option<f64>,
    pub eer_threshold: Option<f64>,
    pub eer_inverted: bool,
    pub mi: MiSummary,
}

struct Row {
    index: usize,
    genuine: bool,
    s: f64,
    t1: Option<f64>,
    t2: Option<f64>,
    angle: Option<f64>,
    inliers: Option<usize>,
    failed: bool,
    mi_unaligned: Option<f64>,
    mi_aligned: Option<f64>,
}

impl Row {
    fn failed(index: usize, genuine: bool) -> Row {
        Row {
            index,
            genuine,
            s: FAILURE_SCORE,
            t1: None,
            t2: None,
            angle: None,
            inliers: None,
            failed: true,
            mi_unaligned: None,
            mi_aligned: None,
        }
    }
}

/// Scores `records` with a model from `make_model` and writes
/// [`REPORT_CSV`] and [`SUMMARY_FILE`] into `out_dir`.
///
/// Pairs that cannot be loaded or aligned become failure rows and the batch
/// keeps going; only infrastructure problems (a model that cannot be built,
/// an output directory that cannot be written) abort the run. The factory
/// is called once per worker.
pub fn batch_report<F>(
    records: &[PairRecord],
    make_model: F,
    out_dir: &Path,
    opts: &ReportOptions,
) -> Result<BatchSummary, MetricsError>
where
    F: Fn() -> Result<MatchModel, EmbedError> + Sync,
{
    fs::create_dir_all(out_dir)
        .map_err(|source| MetricsError::Io { path: out_dir.to_path_buf(), source })?;

    let workers = opts.workers.max(1).min(records.len().max(1));
    let rows = if workers == 1 {
        let model = make_model()?;
        records
            .iter()
            .map(|rec| process_pair(&model, rec, opts, out_dir))
            .collect::<Result<Vec<Row>, MetricsError>>()?
    } else {
        let chunk = records.len().div_ceil(workers);
        std::thread::scope(|scope| {
            let handles: Vec<_> = records
                .chunks(chunk)
                .map(|part| {
                    scope.spawn(|| {
                        let model = make_model()?;
                        part.iter()
                            .map(|rec| process_pair(&model, rec, opts, out_dir))
                            .collect::<Result<Vec<Row>, MetricsError>>()
                    })
                })
                .collect();
            let mut rows = Vec::with_capacity(records.len());
            for handle in handles {
                rows.extend(handle.join().expect("report worker panicked")?);
            }
            Ok::<Vec<Row>, MetricsError>(rows)
        })?
    };

    let mut csv = String::from(CSV_HEADER);
    for row in &rows {
        push_csv_row(&mut csv, row);
    }
    let csv_path = out_dir.join(REPORT_CSV);
    fs::write(&csv_path, csv).map_err(|source| MetricsError::Io { path: csv_path, source })?;

    let summary = summarize(&rows, opts)?;
    let json_path = out_dir.join(SUMMARY_FILE);
    let mut body = serde_json::to_string_pretty(&summary)
        .map_err(|source| MetricsError::Json { path: json_path.clone(), source })?;
    body.push('\n');
    fs::write(&json_path, body).map_err(|source| MetricsError::Io { path: json_path, source })?;
    Ok(summary)
}

fn process_pair(
    model: &MatchModel,
    rec: &PairRecord,
    opts: &ReportOptions,
    out_dir: &Path,
) -> Result<Row, MetricsError> {
    let genuine = rec.truth.label == PairLabel::Genuine;
    let (a, b) = match load_pair_images(rec) {
        Ok(pair) => pair,
        Err(_) => return Ok(Row::failed(rec.index, genuine)),
    };
    let score = model.score(&a, &b)?;
    if score.failure.is_some() {
        return Ok(Row::failed(rec.index, genuine));
    }

    let enhancer = GaborEnhancer::default();
    let ea = enhancer.enhance(&a);
    let eb = enhancer.enhance(&b);
    let shared = effective_mask(&ea).intersect(&effective_mask(&eb));
    let mi_unaligned = masked_mutual_information(&ea, &eb, &shared, opts.bins).ok();

    // The scoring call already registered the pair internally; redo it here
    // to get the warped image back, which the score does not carry.
    let mut mi_aligned = None;
    if let Ok(res) = align(&a, &b, &model.registration, &RansacConfig::default()) {
        let e_al = enhancer.enhance(&res.aligned);
        let shared = effective_mask(&e_al).intersect(&effective_mask(&eb));
        mi_aligned = masked_mutual_information(&e_al, &eb, &shared, opts.bins).ok();
        if opts.overlays {
            // Match coordinates live in the pre-rotated source frame, so
            // that rotation is what the left panel shows.
            let panel = a.rotate(res.best_angle);
            let drawn = render_overlay(&panel, &b, &res.matches, 0.0);
            let path = out_dir.join(format!("{}_overlay.png", rec.index));
            save_png(&drawn.image, &path)?;
        }
    }

    Ok(Row {
        index: rec.index,
        genuine,
        s: score.s,
        t1: score.t1,
        t2: score.t2,
        angle: score.best_angle,
        inliers: score.inliers,
        failed: false,
        mi_unaligned,
        mi_aligned,
    })
}

fn push_csv_row(csv: &mut String, row: &Row) {
    let f6 = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    let f1 = |v: Option<f64>| v.map(|x| format!("{x:.1}")).unwrap_or_default();
    let int = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
    let label = if row.genuine { "genuine" } else { "imposter" };
    writeln!(
        csv,
        "{},{},{:.6},{},{},{},{},{}",
        row.index,
        label,
        row.s,
        f6(row.t1),
        f6(row.t2),
        f1(row.angle),
        int(row.inliers),
        row.failed as u8,
    )
    .expect("string write cannot fail");
}

fn summarize(rows: &[Row], opts: &ReportOptions) -> Result<BatchSummary, MetricsError> {
    let genuine: Vec<f64> = rows.iter().filter(|r| r.genuine).map(|r| r.s).collect();
    let imposter: Vec<f64> = rows.iter().filter(|r| !r.genuine).map(|r| r.s).collect();
    let failures = rows.iter().filter(|r| r.failed).count();

    let (eer_value, eer_threshold, eer_inverted) =
        if genuine.is_empty() || imposter.is_empty() {
            (None, None, false)
        } else {
            let rep = eer(&genuine, &imposter)?;
            (Some(rep.eer), Some(rep.threshold), rep.inverted)
        };

    // Paired inclusion: a pair counts only when both measurements exist,
    // keeping the two means comparable.
    let measured: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.genuine && !r.failed)
        .filter_map(|r| r.mi_aligned.zip(r.mi_unaligned))
        .collect();
    let mean = |pick: fn(&(f64, f64)) -> f64| {
        if measured.is_empty() {
            None
        } else {
            Some(measured.iter().map(pick).sum::<f64>() / measured.len() as f64)
        }
    };

    Ok(BatchSummary {
        pairs: rows.len(),
        genuine: genuine.len(),
        imposter: imposter.len(),
        failures,
        failure_rate: if rows.is_empty() { 0.0 } else { failures as f64 / rows.len() as f64 },
        eer: eer_value,
        eer_threshold,
        eer_inverted,
        mi: MiSummary {
            bins: opts.bins,
            units: "nats".to_string(),
            masked: true,
            aligned_mean: mean(|m| m.0),
            unaligned_mean: mean(|m| m.1),
            measured_pairs: measured.len(),
        },
    })
}
