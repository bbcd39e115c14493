//! Speed estimate and anomaly criterion for a single transition.
//!
//! A transition is flagged when the cell distance exceeds `d_min`, the
//! RTD- and queue-compensated speed exceeds `v_max`, and none of the three
//! handover indicators hold. Every judged transition, flagged or not,
//! pushes a new compensation sample into the incoming cell's queue.

use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

use crate::event_model::{CellIdx, EventDataset, HoFailCode, ImsiId, Morphology, SignalingEvent, Trigger};
use crate::rtd_comp::{compute_c_in, rtd_projection_km, CompensationStore, QueueError, QueueSettings};
use crate::scalar::Scalar;
use crate::trajectory::Transition;

pub const DEFAULT_V_MAX_KMH: f64 = 160.0;
pub const DEFAULT_D_MIN_KM: f64 = 50.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("v_max must be positive and finite, got {0}")]
    VMax(f64),
    #[error("d_min must be non-negative and finite, got {0}")]
    DMin(f64),
    #[error(transparent)]
    Queue(#[from] QueueError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectError {
    #[error("transition references unknown cell index {0:?}")]
    UnknownCell(CellIdx),
    #[error("transition references unknown event ordinal {0}")]
    UnknownEvent(u32),
}

/// Threshold override for transitions between two morphology classes (order-insensitive).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MorphologyOverride<F> {
    pub between: (Morphology, Morphology),
    pub v_max_kmh: Option<F>,
    pub d_min_km: Option<F>,
}

impl<F> MorphologyOverride<F> {
    fn matches(&self, a: Morphology, b: Morphology) -> bool {
        self.between == (a, b) || self.between == (b, a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig<F> {
    pub v_max_kmh: F,
    pub d_min_km: F,
    pub ho_fail_codes_indicating_ho: BTreeSet<HoFailCode>,
    pub triggers_involving_ho: BTreeSet<Trigger>,
    /// First matching entry wins.
    pub overrides: Vec<MorphologyOverride<F>>,
    pub queue: QueueSettings<F>,
}

impl<F: Scalar> Default for DetectorConfig<F> {
    fn default() -> Self {
        Self {
            v_max_kmh: F::lit(DEFAULT_V_MAX_KMH),
            d_min_km: F::lit(DEFAULT_D_MIN_KM),
            ho_fail_codes_indicating_ho: [HoFailCode::IntraHo, HoFailCode::InterHo, HoFailCode::X2Ho, HoFailCode::S1Ho]
                .into_iter()
                .collect(),
            triggers_involving_ho: [Trigger::Handover].into_iter().collect(),
            overrides: Vec::new(),
            queue: QueueSettings::production(),
        }
    }
}

impl<F: Scalar> DetectorConfig<F> {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let check_v = |v: F| {
            if v > F::zero() && v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::VMax(v.to_f64_lossy()))
            }
        };
        let check_d = |d: F| {
            if d >= F::zero() && d.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::DMin(d.to_f64_lossy()))
            }
        };
        check_v(self.v_max_kmh)?;
        check_d(self.d_min_km)?;
        for o in &self.overrides {
            o.v_max_kmh.map_or(Ok(()), check_v)?;
            o.d_min_km.map_or(Ok(()), check_d)?;
        }
        QueueSettings::new(self.queue.capacity(), self.queue.tolerance(), self.queue.init_km())?;
        Ok(())
    }

    /// `(v_max, d_min)` for a transition between cells of the given morphologies.
    pub fn thresholds(&self, a: Morphology, b: Morphology) -> (F, F) {
        match self.overrides.iter().find(|o| o.matches(a, b)) {
            Some(o) => (
                o.v_max_kmh.unwrap_or(self.v_max_kmh),
                o.d_min_km.unwrap_or(self.d_min_km),
            ),
            None => (self.v_max_kmh, self.d_min_km),
        }
    }
}

/// Handover evidence that excludes a transition from being an anomaly.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Exclusions {
    /// The incoming event's HO code names a handover type.
    pub o_hfc: bool,
    /// The incoming event was collected because of a handover.
    pub o_sct: bool,
    /// The previous event named the incoming event's cell as its handover target.
    pub o_tgt: bool,
}

impl Exclusions {
    pub fn any(&self) -> bool {
        self.o_hfc || self.o_sct || self.o_tgt
    }
}

pub fn exclusions<F>(prev: &SignalingEvent, next: &SignalingEvent, cfg: &DetectorConfig<F>) -> Exclusions {
    Exclusions {
        o_hfc: cfg.ho_fail_codes_indicating_ho.contains(&next.ho_fail_code),
        o_sct: cfg.triggers_involving_ho.contains(&next.trigger),
        o_tgt: prev.target_cell == Some(next.current_cell),
    }
}

/// Compensated UE speed over a transition, km/h.
///
/// Both RTD projections and the mean of the two fed-back compensations are
/// subtracted from the cell distance before dividing by the elapsed time.
/// With zero elapsed time the IEEE quotient is returned as is: `+inf` for a
/// positive numerator, `-inf` for a negative one and NaN for zero, so only
/// the first can exceed a threshold.
pub fn estimate_speed<F: Scalar>(
    tr: &Transition<F>,
    c_out_prev_km: F,
    c_out_next_km: F,
    proj_prev_km: F,
    proj_next_km: F,
) -> F {
    let two = F::lit(2.0);
    let numerator = tr.cell_distance_km - proj_next_km - proj_prev_km - (c_out_next_km + c_out_prev_km) / two;
    numerator / tr.elapsed_s * F::lit(3600.0)
}

/// Strict conjunction of distance floor, speed ceiling and absence of handover evidence.
pub fn criterion<F: Scalar>(d_cell_km: F, v_hat_kmh: F, ex: Exclusions, v_max_kmh: F, d_min_km: F) -> bool {
    d_cell_km > d_min_km && v_hat_kmh > v_max_kmh && !ex.any()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnomalyFinding<F> {
    pub imsi: ImsiId,
    pub prev_ordinal: u32,
    pub next_ordinal: u32,
    pub prev_cell: CellIdx,
    pub next_cell: CellIdx,
    pub cell_distance_km: F,
    pub elapsed_s: F,
    pub v_hat_kmh: F,
    pub c_out_prev_km: F,
    pub c_out_next_km: F,
    pub exclusions: Exclusions,
}

/// Running counters over judged transitions.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct JudgeStats {
    pub judged: usize,
    pub excluded: usize,
    pub flagged: usize,
    c_out_sum: f64,
}

impl JudgeStats {
    /// Mean compensation read for incoming cells, km.
    pub fn mean_c_out_km(&self) -> Option<f64> {
        (self.judged > 0).then(|| self.c_out_sum / self.judged as f64)
    }
}

/// Stateful judge: owns the compensation store and the per-IMSI cache of the
/// compensation last read for each IMSI's most recent incoming event.
///
/// Calls must follow global event-time order `(timestamp, imsi, ordinal)` of
/// the incoming events; [`Detector::judge_all`] sorts for you.
#[derive(Debug, Clone)]
pub struct Detector<F> {
    cfg: DetectorConfig<F>,
    store: CompensationStore<F>,
    last_c_out: Vec<Option<(u32, F)>>,
    stats: JudgeStats,
}

impl<F: Scalar> Detector<F> {
    pub fn new(cfg: DetectorConfig<F>) -> Result<Self, ConfigError> {
        cfg.validate()?;
        Ok(Self {
            store: CompensationStore::new(cfg.queue),
            cfg,
            last_c_out: Vec::new(),
            stats: JudgeStats::default(),
        })
    }

    pub fn config(&self) -> &DetectorConfig<F> {
        &self.cfg
    }

    pub fn store(&self) -> &CompensationStore<F> {
        &self.store
    }

    pub fn stats(&self) -> JudgeStats {
        self.stats
    }

    fn cached_c_out(&self, imsi: ImsiId, ordinal: u32) -> Option<F> {
        match self.last_c_out.get(imsi.0 as usize) {
            Some(Some((o, v))) if *o == ordinal => Some(*v),
            _ => None,
        }
    }

    pub fn judge(
        &mut self,
        ds: &EventDataset<F>,
        tr: &Transition<F>,
    ) -> Result<Option<AnomalyFinding<F>>, DetectError> {
        let cells = ds.cells();
        let prev_site = cells.get(tr.prev_cell).ok_or(DetectError::UnknownCell(tr.prev_cell))?;
        let next_site = cells.get(tr.next_cell).ok_or(DetectError::UnknownCell(tr.next_cell))?;
        let prev = ds
            .events()
            .get(tr.prev_ordinal as usize)
            .ok_or(DetectError::UnknownEvent(tr.prev_ordinal))?;
        let next = ds
            .events()
            .get(tr.next_ordinal as usize)
            .ok_or(DetectError::UnknownEvent(tr.next_ordinal))?;
        debug_assert_ne!(tr.prev_cell, tr.next_cell);

        let (v_max, d_min) = self.cfg.thresholds(prev_site.morphology, next_site.morphology);
        let ex = exclusions(prev, next, &self.cfg);

        // both reads happen before this transition's push
        let c_out_next = self.store.read_c_out(tr.next_cell);
        let c_out_prev = self
            .cached_c_out(tr.imsi, tr.prev_ordinal)
            .unwrap_or_else(|| self.store.read_c_out(tr.prev_cell));

        let proj_prev = rtd_projection_km(prev.effective_rtd(), tr.theta_prev);
        let proj_next = rtd_projection_km(next.effective_rtd(), tr.theta_next);

        let finding = if ex.any() {
            self.stats.excluded += 1;
            None
        } else {
            let v_hat = estimate_speed(tr, c_out_prev, c_out_next, proj_prev, proj_next);
            criterion(tr.cell_distance_km, v_hat, ex, v_max, d_min).then_some(AnomalyFinding {
                imsi: tr.imsi,
                prev_ordinal: tr.prev_ordinal,
                next_ordinal: tr.next_ordinal,
                prev_cell: tr.prev_cell,
                next_cell: tr.next_cell,
                cell_distance_km: tr.cell_distance_km,
                elapsed_s: tr.elapsed_s,
                v_hat_kmh: v_hat,
                c_out_prev_km: c_out_prev,
                c_out_next_km: c_out_next,
                exclusions: ex,
            })
        };

        let c_in = compute_c_in(tr, proj_prev, proj_next, v_max);
        self.store.push(tr.next_cell, c_in);
        let slot = tr.imsi.0 as usize;
        if slot >= self.last_c_out.len() {
            self.last_c_out.resize(slot + 1, None);
        }
        self.last_c_out[slot] = Some((tr.next_ordinal, c_out_next));

        self.stats.judged += 1;
        self.stats.c_out_sum += c_out_next.to_f64_lossy();
        if finding.is_some() {
            self.stats.flagged += 1;
        }
        Ok(finding)
    }

    /// Sorts transitions into global event-time order and judges each in turn.
    pub fn judge_all(
        &mut self,
        ds: &EventDataset<F>,
        mut transitions: Vec<Transition<F>>,
    ) -> Result<Vec<AnomalyFinding<F>>, DetectError> {
        sort_global(ds, &mut transitions);
        let mut findings = Vec::new();
        for tr in &transitions {
            if let Some(f) = self.judge(ds, tr)? {
                findings.push(f);
            }
        }
        Ok(findings)
    }
}

/// Orders transitions by `(timestamp, imsi, ordinal)` of their incoming event.
pub fn sort_global<F: Scalar>(ds: &EventDataset<F>, transitions: &mut [Transition<F>]) {
    use rayon::slice::ParallelSliceMut;
    let events = ds.events();
    transitions.par_sort_unstable_by_key(|t| {
        (events[t.next_ordinal as usize].record_timestamp_ms, t.imsi, t.next_ordinal)
    });
}

/// One JSON-lines record per finding.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct FindingRecord {
    pub imsi: String,
    pub prev_ordinal: u32,
    pub next_ordinal: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prev_cell_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub next_cell_id: Option<String>,
    pub cell_distance_km: f64,
    pub elapsed_s: f64,
    /// `null` when the speed is infinite (zero elapsed time).
    pub v_hat_kmh: Option<f64>,
    pub c_out_prev_km: f64,
    pub c_out_next_km: f64,
    pub o_hfc: bool,
    pub o_sct: bool,
    pub o_tgt: bool,
}

impl FindingRecord {
    pub fn new<F: Scalar>(f: &AnomalyFinding<F>, ds: &EventDataset<F>, redact: bool) -> Self {
        let cell = |c: CellIdx| (!redact).then(|| ds.cells().site(c).cell_id.clone());
        let v = f.v_hat_kmh.to_f64_lossy();
        Self {
            imsi: ds.imsi_name(f.imsi).to_owned(),
            prev_ordinal: f.prev_ordinal,
            next_ordinal: f.next_ordinal,
            prev_cell_id: cell(f.prev_cell),
            next_cell_id: cell(f.next_cell),
            cell_distance_km: f.cell_distance_km.to_f64_lossy(),
            elapsed_s: f.elapsed_s.to_f64_lossy(),
            v_hat_kmh: v.is_finite().then_some(v),
            c_out_prev_km: f.c_out_prev_km.to_f64_lossy(),
            c_out_next_km: f.c_out_next_km.to_f64_lossy(),
            o_hfc: f.exclusions.o_hfc,
            o_sct: f.exclusions.o_sct,
            o_tgt: f.exclusions.o_tgt,
        }
    }
}

pub fn write_findings_jsonl<F: Scalar>(
    mut out: impl std::io::Write,
    ds: &EventDataset<F>,
    findings: &[AnomalyFinding<F>],
    redact: bool,
) -> std::io::Result<()> {
    for f in findings {
        serde_json::to_writer(&mut out, &FindingRecord::new(f, ds, redact))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
