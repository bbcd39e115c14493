//! Daily batch detection with the NAS pre-filter.
//!
//! 1. `I_all`: IMSIs whose NAS events touch at least two distinct cells.
//! 2. `I_nas`: members of `I_all` with a NAS-only transition whose raw
//!    (uncompensated) distance and speed exceed `d_min` and `v_max`.
//! 3. Full detection over every event of the surviving IMSIs; `I` is the
//!    set of IMSIs with at least one finding.
//!
//! With the pre-filter disabled, step 3 runs over `I_all` directly.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::detector::{AnomalyFinding, ConfigError, DetectError, Detector, DetectorConfig};
use crate::event_model::{EventDataset, ImsiId, Plane};
use crate::geo::{haversine_km, EarthModel};
use crate::scalar::Scalar;
use crate::trajectory::{build_index, build_index_on_plane, transitions_along, TrajectoryIndex};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid detector configuration: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error("cannot build worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineOptions {
    pub prefilter: bool,
    /// Worker threads; 0 uses the number of available processors.
    pub workers: usize,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            prefilter: true,
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub extract_active_s: f64,
    pub nas_prefilter_s: f64,
    pub full_detection_s: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineReport<F> {
    pub prefilter: bool,
    pub event_count: usize,
    pub imsi_count: usize,
    pub i_all: Vec<ImsiId>,
    /// Equals `i_all` when the pre-filter is disabled.
    pub i_nas: Vec<ImsiId>,
    pub i_final: Vec<ImsiId>,
    pub findings: Vec<AnomalyFinding<F>>,
    pub transitions_judged: usize,
    pub transitions_excluded: usize,
    pub mean_c_out_km: Option<f64>,
    pub peak_queue_cells: usize,
    pub timings: StageTimings,
}

/// JSON form of a [`PipelineReport`].
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ReportDocument {
    pub prefilter: bool,
    pub event_count: usize,
    pub imsi_count: usize,
    pub i_all_count: usize,
    pub i_nas_count: usize,
    pub i_final_count: usize,
    pub finding_count: usize,
    pub transitions_judged: usize,
    pub transitions_excluded: usize,
    pub mean_c_out_km: Option<f64>,
    pub peak_queue_cells: usize,
    pub i_final: Vec<String>,
    pub timings: StageTimings,
}

impl<F: Scalar> PipelineReport<F> {
    pub fn document(&self, ds: &EventDataset<F>) -> ReportDocument {
        ReportDocument {
            prefilter: self.prefilter,
            event_count: self.event_count,
            imsi_count: self.imsi_count,
            i_all_count: self.i_all.len(),
            i_nas_count: self.i_nas.len(),
            i_final_count: self.i_final.len(),
            finding_count: self.findings.len(),
            transitions_judged: self.transitions_judged,
            transitions_excluded: self.transitions_excluded,
            mean_c_out_km: self.mean_c_out_km,
            peak_queue_cells: self.peak_queue_cells,
            i_final: self.i_final.iter().map(|&i| ds.imsi_name(i).to_owned()).collect(),
            timings: self.timings,
        }
    }

    pub fn i_final_names<'a>(&self, ds: &'a EventDataset<F>) -> Vec<&'a str> {
        self.i_final.iter().map(|&i| ds.imsi_name(i)).collect()
    }
}

fn nas_index<F: Scalar>(ds: &EventDataset<F>, keys: Option<&[ImsiId]>) -> TrajectoryIndex {
    build_index_on_plane(ds, keys, Some(Plane::Nas))
}

fn active_from_index<F: Scalar>(ds: &EventDataset<F>, idx: &TrajectoryIndex) -> Vec<ImsiId> {
    idx.par_iter()
        .filter(|(_, seq)| {
            let first = ds.event(seq[0]).current_cell;
            seq.iter().any(|&o| ds.event(o).current_cell != first)
        })
        .map(|(imsi, _)| imsi)
        .collect()
}

fn prefilter_from_index<F: Scalar>(
    ds: &EventDataset<F>,
    idx: &TrajectoryIndex,
    active: &[ImsiId],
    cfg: &DetectorConfig<F>,
) -> Vec<ImsiId> {
    let earth = EarthModel::default();
    let cells = ds.cells();
    let hour = F::lit(3600.0);
    active
        .par_iter()
        .copied()
        .filter(|&imsi| {
            let seq = idx.sequence(imsi).unwrap_or(&[]);
            seq.windows(2).any(|w| {
                let (a, b) = (ds.event(w[0]), ds.event(w[1]));
                if a.current_cell == b.current_cell {
                    return false;
                }
                let (sa, sb) = (cells.site(a.current_cell), cells.site(b.current_cell));
                let (v_max, d_min) = cfg.thresholds(sa.morphology, sb.morphology);
                let d = haversine_km(sa.position, sb.position, earth);
                let elapsed_s = F::lit((b.record_timestamp_ms - a.record_timestamp_ms) as f64) / F::lit(1000.0);
                d > d_min && d / elapsed_s * hour > v_max
            })
        })
        .collect()
}

/// IMSIs with NAS events on at least two different cells, ascending.
pub fn extract_active<F: Scalar>(ds: &EventDataset<F>) -> Vec<ImsiId> {
    active_from_index(ds, &nas_index(ds, None))
}

/// Members of `active` with a raw NAS-only transition beyond both thresholds.
pub fn nas_prefilter<F: Scalar>(ds: &EventDataset<F>, active: &[ImsiId], cfg: &DetectorConfig<F>) -> Vec<ImsiId> {
    prefilter_from_index(ds, &nas_index(ds, Some(active)), active, cfg)
}

/// Full detection over every event of `keys`, in global event-time order.
///
/// Returns the findings and the sorted set of IMSIs that produced at least one.
pub fn full_detection<F: Scalar>(
    ds: &EventDataset<F>,
    keys: &[ImsiId],
    detector: &mut Detector<F>,
) -> Result<(Vec<AnomalyFinding<F>>, Vec<ImsiId>), DetectError> {
    if keys.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    let idx = build_index(ds, Some(keys));
    let earth = EarthModel::default();
    let transitions = idx
        .par_iter()
        .flat_map_iter(|(_, seq)| transitions_along(ds, seq, earth))
        .collect::<Vec<_>>();
    let findings = detector.judge_all(ds, transitions)?;
    let mut flagged: Vec<ImsiId> = findings.iter().map(|f| f.imsi).collect();
    flagged.sort_unstable();
    flagged.dedup();
    Ok((findings, flagged))
}

/// Runs all stages with a fresh compensation store.
pub fn run<F: Scalar>(
    ds: &EventDataset<F>,
    cfg: &DetectorConfig<F>,
    opts: PipelineOptions,
) -> Result<PipelineReport<F>, PipelineError> {
    let mut detector = Detector::new(cfg.clone())?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(opts.workers).build()?;
    pool.install(|| {
        let start = Instant::now();
        let nas = nas_index(ds, None);
        let i_all = active_from_index(ds, &nas);
        let t1 = start.elapsed().as_secs_f64();

        let i_nas = if opts.prefilter {
            prefilter_from_index(ds, &nas, &i_all, cfg)
        } else {
            i_all.clone()
        };
        drop(nas);
        let t2 = start.elapsed().as_secs_f64();

        let (findings, i_final) = full_detection(ds, &i_nas, &mut detector)?;
        let t3 = start.elapsed().as_secs_f64();

        let stats = detector.stats();
        Ok(PipelineReport {
            prefilter: opts.prefilter,
            event_count: ds.len(),
            imsi_count: ds.imsi_count(),
            i_all,
            i_nas,
            i_final,
            findings,
            transitions_judged: stats.judged,
            transitions_excluded: stats.excluded,
            mean_c_out_km: stats.mean_c_out_km(),
            peak_queue_cells: detector.store().cell_count(),
            timings: StageTimings {
                extract_active_s: t1,
                nas_prefilter_s: t2 - t1,
                full_detection_s: t3 - t2,
                total_s: t3,
            },
        })
    })
}
