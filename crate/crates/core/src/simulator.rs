//! Deterministic synthetic RAN data: a regular cell grid, vehicles moving by
//! random waypoint, a modem that alternates idle re-connections with
//! handovers, occasional bounces to a distant cell, and injected identity
//! spoofing with ground-truth labels.
//!
//! All randomness derives from `ScenarioConfig::seed`; each vehicle draws
//! from its own ChaCha stream so output does not depend on iteration details.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event_model::{
    write_cells, write_events, CellCatalog, CellSite, EventDataset, EventRecord, HoFailCode, IngestError, Morphology,
    Plane, Trigger,
};
use crate::geo::{bearing_deg, destination, haversine_km, EarthModel, GeoPoint};
use crate::rtd_comp::km_to_rtd;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario config `{key}`: {message}")]
    Invalid { key: &'static str, message: String },
    #[error("cannot parse scenario config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("victim `{0}` has no events in the stream")]
    UnknownVictim(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

/// Flat scenario description. Every key is optional in the TOML file; missing
/// keys take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    pub cell_spacing_km: f64,
    pub urban_fraction: f64,
    pub suburban_fraction: f64,
    /// Share of sites with a directional antenna; the rest are omni.
    pub azimuth_fraction: f64,
    /// Share of sites whose RTD under-reads by `mountain_bias_km`.
    pub mountain_fraction: f64,
    pub mountain_bias_km: f64,
    pub fleet_size: usize,
    pub duration_hours: f64,
    pub start_ms: i64,
    pub min_speed_kmh: f64,
    pub legit_v_max_kmh: f64,
    pub dwell_min_minutes: f64,
    pub dwell_max_minutes: f64,
    pub idle_min_minutes: f64,
    pub idle_max_minutes: f64,
    /// Scale of the truncated exponential idle gap.
    pub idle_mean_minutes: f64,
    /// Target share of connection starts that are re-connections rather than handovers.
    pub reconnection_ratio: f64,
    pub measurements_max: u32,
    pub measurement_interval_s: f64,
    /// Probability that a re-connection is signalled on the NAS plane.
    pub nas_prob: f64,
    /// Probability that a re-connection is followed by a bounce to a distant cell and back.
    pub bounce_rate: f64,
    pub bounce_min_km: f64,
    pub bounce_max_km: f64,
    pub rtd_noise_km: f64,
    pub rtd_missing_prob: f64,
    /// Only used to warn about attacks too close to be detectable.
    pub detect_d_min_km: f64,
    pub attack_count: usize,
    pub attack_victims: Vec<String>,
    pub attack_offset_km: f64,
    pub attack_events: usize,
    pub attack_window_minutes: f64,
    pub attack_nas_fraction: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            lat_min: 39.5,
            lat_max: 41.0,
            lon_min: -76.0,
            lon_max: -74.0,
            cell_spacing_km: 5.0,
            urban_fraction: 0.3,
            suburban_fraction: 0.4,
            azimuth_fraction: 0.5,
            mountain_fraction: 0.05,
            mountain_bias_km: 1.0,
            fleet_size: 100,
            duration_hours: 24.0,
            // 2024-03-14T00:00:00Z
            start_ms: 1_710_374_400_000,
            min_speed_kmh: 20.0,
            legit_v_max_kmh: 120.0,
            dwell_min_minutes: 5.0,
            dwell_max_minutes: 120.0,
            idle_min_minutes: 1.0,
            idle_max_minutes: 120.0,
            idle_mean_minutes: 30.0,
            reconnection_ratio: 0.9,
            measurements_max: 3,
            measurement_interval_s: 20.0,
            nas_prob: 0.1,
            bounce_rate: 0.01,
            bounce_min_km: 25.0,
            bounce_max_km: 40.0,
            rtd_noise_km: 0.3,
            rtd_missing_prob: 0.05,
            detect_d_min_km: 50.0,
            attack_count: 0,
            attack_victims: Vec::new(),
            attack_offset_km: 300.0,
            attack_events: 3,
            attack_window_minutes: 5.0,
            attack_nas_fraction: 0.5,
        }
    }
}

fn invalid(key: &'static str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        key,
        message: message.into(),
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let prob = |key: &'static str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(invalid(key, format!("probability {v} outside [0, 1]")))
            }
        };
        let positive = |key: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(key, format!("must be positive, got {v}")))
            }
        };
        let non_negative = |key: &'static str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(key, format!("must be non-negative, got {v}")))
            }
        };
        if !(-90.0..=90.0).contains(&self.lat_min) || !(-90.0..=90.0).contains(&self.lat_max) || self.lat_min >= self.lat_max
        {
            return Err(invalid("lat_min", "need -90 <= lat_min < lat_max <= 90"));
        }
        if !(-180.0..=180.0).contains(&self.lon_min)
            || !(-180.0..=180.0).contains(&self.lon_max)
            || self.lon_min >= self.lon_max
        {
            return Err(invalid("lon_min", "need -180 <= lon_min < lon_max <= 180"));
        }
        positive("cell_spacing_km", self.cell_spacing_km)?;
        prob("urban_fraction", self.urban_fraction)?;
        prob("suburban_fraction", self.suburban_fraction)?;
        if self.urban_fraction + self.suburban_fraction > 1.0 {
            return Err(invalid("suburban_fraction", "urban_fraction + suburban_fraction exceeds 1"));
        }
        prob("azimuth_fraction", self.azimuth_fraction)?;
        prob("mountain_fraction", self.mountain_fraction)?;
        non_negative("mountain_bias_km", self.mountain_bias_km)?;
        positive("duration_hours", self.duration_hours)?;
        if self.start_ms <= 0 {
            return Err(invalid("start_ms", "must be positive"));
        }
        positive("min_speed_kmh", self.min_speed_kmh)?;
        positive("legit_v_max_kmh", self.legit_v_max_kmh)?;
        if self.min_speed_kmh > self.legit_v_max_kmh {
            return Err(invalid("min_speed_kmh", "exceeds legit_v_max_kmh"));
        }
        non_negative("dwell_min_minutes", self.dwell_min_minutes)?;
        if self.dwell_max_minutes < self.dwell_min_minutes {
            return Err(invalid("dwell_max_minutes", "below dwell_min_minutes"));
        }
        positive("idle_min_minutes", self.idle_min_minutes)?;
        positive("idle_mean_minutes", self.idle_mean_minutes)?;
        if self.idle_max_minutes < self.idle_min_minutes {
            return Err(invalid("idle_max_minutes", "below idle_min_minutes"));
        }
        prob("reconnection_ratio", self.reconnection_ratio)?;
        positive("measurement_interval_s", self.measurement_interval_s)?;
        prob("nas_prob", self.nas_prob)?;
        prob("bounce_rate", self.bounce_rate)?;
        non_negative("bounce_min_km", self.bounce_min_km)?;
        if self.bounce_max_km < self.bounce_min_km {
            return Err(invalid("bounce_max_km", "below bounce_min_km"));
        }
        non_negative("rtd_noise_km", self.rtd_noise_km)?;
        prob("rtd_missing_prob", self.rtd_missing_prob)?;
        non_negative("detect_d_min_km", self.detect_d_min_km)?;
        non_negative("attack_offset_km", self.attack_offset_km)?;
        positive("attack_window_minutes", self.attack_window_minutes)?;
        prob("attack_nas_fraction", self.attack_nas_fraction)?;
        let attacks = self.attack_victims.len().max(self.attack_count);
        if attacks > 0 && self.attack_events == 0 {
            return Err(invalid("attack_events", "must be at least 1 when attacks are configured"));
        }
        if self.attack_victims.is_empty() && self.attack_count > self.fleet_size {
            return Err(invalid("attack_count", "exceeds fleet_size"));
        }
        Ok(())
    }
}

/// Ground-truth class of a generated event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventLabel {
    Legit,
    Spoof,
    CornerIdle,
    CornerBounce,
}

impl EventLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventLabel::Legit => "legit",
            EventLabel::Spoof => "spoof",
            EventLabel::CornerIdle => "corner_idle",
            EventLabel::CornerBounce => "corner_bounce",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    pub spoofed: BTreeSet<String>,
    /// One label per event ordinal.
    pub labels: Vec<EventLabel>,
}

/// A generated event with its hidden truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent {
    pub record: EventRecord,
    pub label: EventLabel,
    /// True UE position when the event was recorded.
    pub position: GeoPoint<f64>,
}

/// Cells plus events under construction; spoofs are injected into this.
#[derive(Debug, Clone, Default)]
pub struct SimStream {
    pub cells: Vec<CellSite<f64>>,
    pub events: Vec<SimEvent>,
    pub spoofed: BTreeSet<String>,
    pub warnings: Vec<String>,
}

/// When and how an attacker replays a victim's identity.
#[derive(Debug, Clone, PartialEq)]
pub struct SpoofSchedule {
    pub start_ms: i64,
    pub window_ms: i64,
    pub events: usize,
    pub nas_fraction: f64,
    pub bearing_deg: f64,
    /// Tag used in the attacker cell ids and IMEI.
    pub tag: usize,
    pub seed: u64,
    /// Distance floor of the detector, for the undetectable-offset warning.
    pub detect_d_min_km: f64,
}

fn rtd_reading(rng: &mut ChaCha8Rng, true_km: f64, noise_km: f64, bias_km: f64) -> u32 {
    let noise = if noise_km > 0.0 { rng.gen_range(-noise_km..=noise_km) } else { 0.0 };
    km_to_rtd(true_km + noise - bias_km)
}

/// Adds an attacker using `victim`'s IMSI on cells about `offset_km` away.
///
/// The attacker events are spread evenly over the schedule window; the first
/// `ceil(nas_fraction * events)` are NAS service requests, the rest RRC
/// re-establishments. Two attacker cells are created 3 km apart around the
/// remote point, named `ATK{tag}_0` and `ATK{tag}_1`.
pub fn inject_spoof(
    stream: &mut SimStream,
    victim: &str,
    offset_km: f64,
    schedule: &SpoofSchedule,
) -> Result<(), ScenarioError> {
    let earth = EarthModel::default();
    let victim_events: Vec<&SimEvent> = stream.events.iter().filter(|e| e.record.imsi == victim).collect();
    if victim_events.is_empty() {
        return Err(ScenarioError::UnknownVictim(victim.to_owned()));
    }
    if offset_km < schedule.detect_d_min_km {
        stream.warnings.push(format!(
            "attack on {victim}: offset {offset_km} km is below d_min {} km and will not be detectable",
            schedule.detect_d_min_km
        ));
    }
    let anchor = victim_events
        .iter()
        .filter(|e| e.record.record_timestamp_ms <= schedule.start_ms)
        .max_by_key(|e| e.record.record_timestamp_ms)
        .or_else(|| victim_events.iter().min_by_key(|e| e.record.record_timestamp_ms))
        .expect("victim has events");
    let anchor_cell = stream
        .cells
        .iter()
        .find(|c| c.cell_id == anchor.record.current_cell_id)
        .expect("anchor cell exists")
        .position;

    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let center = destination(anchor_cell, schedule.bearing_deg, offset_km, earth);
    let second = destination(center, rng.gen_range(0.0..360.0), 3.0, earth);
    let ids = [format!("ATK{}_0", schedule.tag), format!("ATK{}_1", schedule.tag)];
    for (id, pos) in ids.iter().zip([center, second]) {
        stream.cells.push(CellSite {
            cell_id: id.clone(),
            position: pos,
            antenna_azimuth: None,
            morphology: Morphology::Urban,
        });
    }

    let imei = format!("86{:013}", schedule.tag);
    let nas_count = (schedule.nas_fraction * schedule.events as f64).ceil() as usize;
    let step = schedule.window_ms / schedule.events.max(1) as i64;
    for j in 0..schedule.events {
        let cell = j % 2;
        let cell_pos = if cell == 0 { center } else { second };
        let ue = destination(cell_pos, rng.gen_range(0.0..360.0), rng.gen_range(0.2..2.0), earth);
        let d = haversine_km(ue, cell_pos, earth);
        let nas = j < nas_count;
        stream.events.push(SimEvent {
            record: EventRecord {
                record_timestamp_ms: schedule.start_ms + step * j as i64,
                imsi: victim.to_owned(),
                imei: Some(imei.clone()),
                current_cell_id: ids[cell].clone(),
                target_cell_id: None,
                source_cell_id: None,
                trigger: if nas { Trigger::ServiceRequest } else { Trigger::RrcReestablishment },
                ho_fail_code: HoFailCode::None,
                first_rtd: Some(rtd_reading(&mut rng, d, 0.2, 0.0)),
                last_rtd: Some(rtd_reading(&mut rng, d, 0.2, 0.0)),
                plane: if nas { Plane::Nas } else { Plane::RanOther },
            },
            label: EventLabel::Spoof,
            position: ue,
        });
    }
    stream.spoofed.insert(victim.to_owned());
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ScenarioStats {
    pub vehicles: usize,
    pub cells: usize,
    pub events: usize,
    pub nas_events: usize,
    pub handovers: usize,
    pub reconnections: usize,
    pub bounces: usize,
    pub spoofed: usize,
    pub spoof_events: usize,
}

impl ScenarioStats {
    /// Re-connections over all connection starts (re-connections plus handovers).
    pub fn reconnection_ratio(&self) -> f64 {
        let total = self.handovers + self.reconnections;
        if total == 0 {
            0.0
        } else {
            self.reconnections as f64 / total as f64
        }
    }
}

/// Generator output, ordered by `(timestamp, imsi, generation order)`.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub cells: Vec<CellSite<f64>>,
    pub events: Vec<EventRecord>,
    pub truth: GroundTruth,
    /// True UE position per event ordinal.
    pub positions: Vec<GeoPoint<f64>>,
    pub stats: ScenarioStats,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioFiles {
    pub cells: PathBuf,
    pub events: PathBuf,
    pub ground_truth: PathBuf,
}

impl Scenario {
    pub fn dataset<F: Scalar>(&self) -> Result<EventDataset<F>, ScenarioError> {
        let cells = CellCatalog::from_sites(self.cells.iter().map(|c| CellSite {
            cell_id: c.cell_id.clone(),
            position: c.position.cast(),
            antenna_azimuth: c.antenna_azimuth.map(F::lit),
            morphology: c.morphology,
        }))?;
        Ok(EventDataset::from_records(cells, self.events.iter().cloned())?.0)
    }

    /// Writes `cells.csv`, `events.csv` and `ground_truth.csv` into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<ScenarioFiles, ScenarioError> {
        let dir = dir.as_ref();
        let io = |path: &Path| {
            let path = path.to_owned();
            move |source: std::io::Error| ScenarioError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let files = ScenarioFiles {
            cells: dir.join("cells.csv"),
            events: dir.join("events.csv"),
            ground_truth: dir.join("ground_truth.csv"),
        };
        let create = |p: &Path| File::create(p).map(BufWriter::new).map_err(io(p));
        let csv_err = |p: &Path| {
            let p = p.to_owned();
            move |e: csv::Error| ScenarioError::Io {
                path: p,
                source: std::io::Error::other(e),
            }
        };
        write_cells(create(&files.cells)?, &self.cells).map_err(csv_err(&files.cells))?;
        write_events(create(&files.events)?, &self.events).map_err(csv_err(&files.events))?;
        let mut gt = create(&files.ground_truth)?;
        let gt_io = io(&files.ground_truth);
        (|| {
            writeln!(gt, "imsi,event_ordinal,label")?;
            for (i, (rec, label)) in self.events.iter().zip(&self.truth.labels).enumerate() {
                writeln!(gt, "{},{},{}", rec.imsi, i, label.as_str())?;
            }
            gt.flush()
        })()
        .map_err(gt_io)?;
        Ok(files)
    }
}

struct Grid {
    lat_min: f64,
    lon_min: f64,
    lat_step: f64,
    lon_step: f64,
    rows: usize,
    cols: usize,
    mountain: Vec<bool>,
}

impl Grid {
    fn index(&self, r: usize, c: usize) -> usize {
        r * self.cols + c
    }

    fn nearest(&self, cells: &[CellSite<f64>], p: GeoPoint<f64>) -> usize {
        let earth = EarthModel::default();
        let r0 = ((p.lat() - self.lat_min) / self.lat_step).round().clamp(0.0, (self.rows - 1) as f64) as usize;
        let c0 = ((p.lon() - self.lon_min) / self.lon_step).round().clamp(0.0, (self.cols - 1) as f64) as usize;
        let mut best = (f64::INFINITY, usize::MAX);
        for r in r0.saturating_sub(1)..=(r0 + 1).min(self.rows - 1) {
            for c in c0.saturating_sub(1)..=(c0 + 1).min(self.cols - 1) {
                let i = self.index(r, c);
                let d = haversine_km(p, cells[i].position, earth);
                if d < best.0 {
                    best = (d, i);
                }
            }
        }
        best.1
    }

    fn random_point(&self, rng: &mut ChaCha8Rng) -> GeoPoint<f64> {
        let lat = self.lat_min + rng.gen_range(0.0..=1.0) * self.lat_step * (self.rows - 1) as f64;
        let lon = self.lon_min + rng.gen_range(0.0..=1.0) * self.lon_step * (self.cols - 1) as f64;
        GeoPoint::new(lat, lon).expect("inside grid")
    }
}

fn build_grid(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> (Grid, Vec<CellSite<f64>>) {
    let km_per_deg = EarthModel::<f64>::default().radius_km() * std::f64::consts::PI / 180.0;
    let center_lat = (cfg.lat_min + cfg.lat_max) / 2.0;
    let lat_step = cfg.cell_spacing_km / km_per_deg;
    let lon_step = cfg.cell_spacing_km / (km_per_deg * (std::f64::consts::PI * center_lat / 180.0).cos().max(1e-6));
    let rows = ((cfg.lat_max - cfg.lat_min) / lat_step).floor() as usize + 1;
    let cols = ((cfg.lon_max - cfg.lon_min) / lon_step).floor() as usize + 1;
    let mut cells = Vec::with_capacity(rows * cols);
    let mut mountain = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let position = GeoPoint::new(cfg.lat_min + r as f64 * lat_step, cfg.lon_min + c as f64 * lon_step)
                .expect("grid inside configured box");
            let u: f64 = rng.gen();
            let morphology = if u < cfg.urban_fraction {
                Morphology::Urban
            } else if u < cfg.urban_fraction + cfg.suburban_fraction {
                Morphology::Suburban
            } else {
                Morphology::Rural
            };
            let antenna_azimuth = rng
                .gen_bool(cfg.azimuth_fraction)
                .then(|| (rng.gen_range(0.0..360.0f64) * 10.0).floor() / 10.0);
            mountain.push(rng.gen_bool(cfg.mountain_fraction));
            cells.push(CellSite {
                cell_id: format!("S{r:04}_{c:04}"),
                position,
                antenna_azimuth,
                morphology,
            });
        }
    }
    (
        Grid {
            lat_min: cfg.lat_min,
            lon_min: cfg.lon_min,
            lat_step,
            lon_step,
            rows,
            cols,
            mountain,
        },
        cells,
    )
}

struct Vehicle {
    pos: GeoPoint<f64>,
    waypoint: GeoPoint<f64>,
    speed_kmh: f64,
    dwell_until_ms: i64,
    clock_ms: i64,
}

impl Vehicle {
    /// Moves the vehicle forward to `to_ms` along great circles between waypoints.
    fn advance(&mut self, to_ms: i64, grid: &Grid, cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) {
        let earth = EarthModel::default();
        while self.clock_ms < to_ms {
            if self.clock_ms < self.dwell_until_ms {
                self.clock_ms = self.dwell_until_ms.min(to_ms);
                continue;
            }
            let remaining_km = haversine_km(self.pos, self.waypoint, earth);
            let reach_ms = (remaining_km / self.speed_kmh * 3_600_000.0).ceil() as i64;
            if self.clock_ms + reach_ms <= to_ms {
                self.pos = self.waypoint;
                self.clock_ms += reach_ms;
                let dwell = rng.gen_range(cfg.dwell_min_minutes..=cfg.dwell_max_minutes);
                self.dwell_until_ms = self.clock_ms + (dwell * 60_000.0) as i64;
                self.waypoint = grid.random_point(rng);
                self.speed_kmh = rng.gen_range(cfg.min_speed_kmh..=cfg.legit_v_max_kmh);
            } else {
                let step_km = self.speed_kmh * (to_ms - self.clock_ms) as f64 / 3_600_000.0;
                if let Ok(b) = bearing_deg(self.pos, self.waypoint) {
                    self.pos = destination(self.pos, b, step_km, earth);
                }
                self.clock_ms = to_ms;
            }
        }
    }
}

fn truncated_exp(rng: &mut ChaCha8Rng, min: f64, max: f64, mean: f64) -> f64 {
    let span = max - min;
    if span <= 0.0 {
        return min;
    }
    let u: f64 = rng.gen();
    min - mean * (1.0 - u * (1.0 - (-span / mean).exp())).ln()
}

struct VehicleGen<'a> {
    cfg: &'a ScenarioConfig,
    grid: &'a Grid,
    cells: &'a [CellSite<f64>],
    rng: ChaCha8Rng,
    imsi: String,
    imei: String,
    out: Vec<SimEvent>,
    stats: ScenarioStats,
}

#[derive(Clone, Copy)]
struct Emit {
    cell: usize,
    target: Option<usize>,
    source: Option<usize>,
    trigger: Trigger,
    code: HoFailCode,
    plane: Plane,
    label: EventLabel,
}

impl Emit {
    fn on(cell: usize, trigger: Trigger, plane: Plane, label: EventLabel) -> Self {
        Self {
            cell,
            target: None,
            source: None,
            trigger,
            code: HoFailCode::None,
            plane,
            label,
        }
    }
}

impl VehicleGen<'_> {
    fn emit(&mut self, t_ms: i64, pos: GeoPoint<f64>, e: Emit) {
        let earth = EarthModel::default();
        let site = &self.cells[e.cell];
        let (first_rtd, last_rtd) = if self.rng.gen_bool(self.cfg.rtd_missing_prob) {
            (None, None)
        } else {
            let d = haversine_km(pos, site.position, earth);
            let bias = if self.grid.mountain.get(e.cell).copied().unwrap_or(false) {
                self.cfg.mountain_bias_km
            } else {
                0.0
            };
            (
                Some(rtd_reading(&mut self.rng, d, self.cfg.rtd_noise_km, bias)),
                Some(rtd_reading(&mut self.rng, d, self.cfg.rtd_noise_km, bias)),
            )
        };
        if e.plane == Plane::Nas {
            self.stats.nas_events += 1;
        }
        let id = |i: usize| self.cells[i].cell_id.clone();
        self.out.push(SimEvent {
            record: EventRecord {
                record_timestamp_ms: t_ms,
                imsi: self.imsi.clone(),
                imei: Some(self.imei.clone()),
                current_cell_id: site.cell_id.clone(),
                target_cell_id: e.target.map(id),
                source_cell_id: e.source.map(id),
                trigger: e.trigger,
                ho_fail_code: e.code,
                first_rtd,
                last_rtd,
                plane: e.plane,
            },
            label: e.label,
            position: pos,
        });
    }

    fn reconnect_trigger(&mut self) -> (Trigger, Plane) {
        if self.rng.gen_bool(self.cfg.nas_prob) {
            (Trigger::ServiceRequest, Plane::Nas)
        } else {
            (Trigger::RrcReestablishment, Plane::RanOther)
        }
    }

    /// Distant-cell bounce right after a connection on `serving`: away, then back.
    fn bounce(&mut self, vehicle: &mut Vehicle, serving: usize, t_ms: &mut i64, end_ms: i64) {
        let earth = EarthModel::default();
        let from = self.cells[serving].position;
        let mut target = None;
        for _ in 0..6 {
            let d = self.rng.gen_range(self.cfg.bounce_min_km..=self.cfg.bounce_max_km);
            let p = destination(from, self.rng.gen_range(0.0..360.0), d, earth);
            let cand = self.grid.nearest(self.cells, p);
            let cd = haversine_km(from, self.cells[cand].position, earth);
            if cand != serving && cd <= self.cfg.bounce_max_km && cd >= self.cfg.bounce_min_km * 0.5 {
                target = Some(cand);
                break;
            }
        }
        let Some(far) = target else { return };
        let away_ms = *t_ms + self.rng.gen_range(2_000..8_000);
        let back_ms = away_ms + self.rng.gen_range(2_000..8_000);
        if back_ms >= end_ms {
            return;
        }
        vehicle.advance(away_ms, self.grid, self.cfg, &mut self.rng);
        let by_handover = self.rng.gen_bool(0.5);
        if by_handover {
            // serving cell orders the handover to the distant cell
            self.emit(
                away_ms - 200,
                vehicle.pos,
                Emit {
                    target: Some(far),
                    ..Emit::on(serving, Trigger::Measurement, Plane::RanOther, EventLabel::CornerBounce)
                },
            );
            self.emit(
                away_ms,
                vehicle.pos,
                Emit {
                    source: Some(serving),
                    code: HoFailCode::X2Ho,
                    ..Emit::on(far, Trigger::Handover, Plane::RanOther, EventLabel::CornerBounce)
                },
            );
            self.stats.handovers += 1;
        } else {
            self.emit(
                away_ms,
                vehicle.pos,
                Emit::on(far, Trigger::RrcReestablishment, Plane::RanOther, EventLabel::CornerBounce),
            );
            self.stats.reconnections += 1;
        }
        vehicle.advance(back_ms, self.grid, self.cfg, &mut self.rng);
        self.emit(
            back_ms,
            vehicle.pos,
            Emit::on(serving, Trigger::RrcReestablishment, Plane::RanOther, EventLabel::CornerBounce),
        );
        self.stats.reconnections += 1;
        self.stats.bounces += 1;
        *t_ms = back_ms;
    }

    fn run(mut self, end_ms: i64) -> (Vec<SimEvent>, ScenarioStats) {
        let cfg = self.cfg;
        let mut t = cfg.start_ms + self.rng.gen_range(0..3_600_000);
        let start_pos = self.grid.random_point(&mut self.rng);
        let mut vehicle = Vehicle {
            pos: start_pos,
            waypoint: self.grid.random_point(&mut self.rng),
            speed_kmh: self.rng.gen_range(cfg.min_speed_kmh..=cfg.legit_v_max_kmh),
            dwell_until_ms: t,
            clock_ms: t,
        };
        let mut serving = self.grid.nearest(self.cells, vehicle.pos);
        // the initial attach is not a re-connection
        self.emit(t, vehicle.pos, Emit::on(serving, Trigger::Attach, Plane::Nas, EventLabel::Legit));

        let interval_ms = (cfg.measurement_interval_s * 1000.0) as i64;
        'day: loop {
            let k = self.rng.gen_range(0..=cfg.measurements_max);
            for _ in 0..k {
                t += interval_ms;
                if t >= end_ms {
                    break 'day;
                }
                vehicle.advance(t, self.grid, cfg, &mut self.rng);
                self.emit(t, vehicle.pos, Emit::on(serving, Trigger::Measurement, Plane::RanOther, EventLabel::Legit));
            }

            if self.rng.gen_bool(cfg.reconnection_ratio) {
                let gap = truncated_exp(&mut self.rng, cfg.idle_min_minutes, cfg.idle_max_minutes, cfg.idle_mean_minutes);
                t += (gap * 60_000.0) as i64;
                if t >= end_ms {
                    break;
                }
                vehicle.advance(t, self.grid, cfg, &mut self.rng);
                let next = self.grid.nearest(self.cells, vehicle.pos);
                let label = if next != serving { EventLabel::CornerIdle } else { EventLabel::Legit };
                let (trigger, plane) = self.reconnect_trigger();
                serving = next;
                self.emit(t, vehicle.pos, Emit::on(serving, trigger, plane, label));
                self.stats.reconnections += 1;
                if self.rng.gen_bool(cfg.bounce_rate) {
                    self.bounce(&mut vehicle, serving, &mut t, end_ms);
                }
            } else {
                // stay connected until the vehicle crosses into another cell
                let step_ms = 15_000;
                let next = loop {
                    t += step_ms;
                    if t >= end_ms {
                        break 'day;
                    }
                    vehicle.advance(t, self.grid, cfg, &mut self.rng);
                    let n = self.grid.nearest(self.cells, vehicle.pos);
                    if n != serving {
                        break n;
                    }
                };
                self.emit(
                    t,
                    vehicle.pos,
                    Emit {
                        target: Some(next),
                        ..Emit::on(serving, Trigger::Measurement, Plane::RanOther, EventLabel::Legit)
                    },
                );
                t += self.rng.gen_range(100..1_000);
                vehicle.advance(t, self.grid, cfg, &mut self.rng);
                let code = *[HoFailCode::X2Ho, HoFailCode::S1Ho, HoFailCode::IntraHo]
                    .choose(&mut self.rng)
                    .expect("non-empty");
                self.emit(
                    t,
                    vehicle.pos,
                    Emit {
                        source: Some(serving),
                        code,
                        ..Emit::on(next, Trigger::Handover, Plane::RanOther, EventLabel::Legit)
                    },
                );
                self.stats.handovers += 1;
                serving = next;
            }
        }
        (self.out, self.stats)
    }
}

fn vehicle_imsi(i: usize) -> String {
    format!("310410{i:09}")
}

/// Generates the full scenario described by `cfg`.
pub fn generate(cfg: &ScenarioConfig) -> Result<Scenario, ScenarioError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (grid, cells) = build_grid(cfg, &mut rng);
    if cells.is_empty() {
        return Err(invalid("cell_spacing_km", "grid has no cells"));
    }
    let end_ms = cfg.start_ms + (cfg.duration_hours * 3_600_000.0) as i64;

    let mut stream = SimStream {
        cells,
        ..Default::default()
    };
    let mut stats = ScenarioStats {
        vehicles: cfg.fleet_size,
        ..Default::default()
    };
    for v in 0..cfg.fleet_size {
        let mut vrng = ChaCha8Rng::seed_from_u64(cfg.seed);
        vrng.set_stream(v as u64 + 1);
        let gen = VehicleGen {
            cfg,
            grid: &grid,
            cells: &stream.cells,
            rng: vrng,
            imsi: vehicle_imsi(v),
            imei: format!("35{v:013}"),
            out: Vec::new(),
            stats: ScenarioStats::default(),
        };
        let (events, s) = gen.run(end_ms);
        stats.nas_events += s.nas_events;
        stats.handovers += s.handovers;
        stats.reconnections += s.reconnections;
        stats.bounces += s.bounces;
        stream.events.extend(events);
    }

    let victims: Vec<String> = if !cfg.attack_victims.is_empty() {
        cfg.attack_victims.clone()
    } else {
        let mut ids: Vec<usize> = (0..cfg.fleet_size).collect();
        ids.shuffle(&mut rng);
        ids.truncate(cfg.attack_count);
        ids.sort_unstable();
        ids.into_iter().map(vehicle_imsi).collect()
    };
    let window_ms = (cfg.attack_window_minutes * 60_000.0) as i64;
    for (tag, victim) in victims.iter().enumerate() {
        // anchor just after a genuine NAS event that still has genuine events after the window
        let mine: Vec<&SimEvent> = stream.events.iter().filter(|e| &e.record.imsi == victim).collect();
        if mine.is_empty() {
            return Err(ScenarioError::UnknownVictim(victim.clone()));
        }
        let last_ms = mine.iter().map(|e| e.record.record_timestamp_ms).max().expect("non-empty");
        let slack = 120_000 + window_ms;
        let nas_anchors: Vec<i64> = mine
            .iter()
            .filter(|e| e.record.plane == Plane::Nas && e.record.record_timestamp_ms + slack < last_ms)
            .map(|e| e.record.record_timestamp_ms)
            .collect();
        let any_anchors: Vec<i64> = mine
            .iter()
            .map(|e| e.record.record_timestamp_ms)
            .filter(|&t| t + slack < last_ms)
            .collect();
        let pool = if !nas_anchors.is_empty() { &nas_anchors } else { &any_anchors };
        let anchor = pool.choose(&mut rng).copied().unwrap_or(mine[0].record.record_timestamp_ms);
        let schedule = SpoofSchedule {
            start_ms: anchor + rng.gen_range(30_000..120_000),
            window_ms,
            events: cfg.attack_events,
            nas_fraction: cfg.attack_nas_fraction,
            bearing_deg: rng.gen_range(0.0..360.0),
            tag,
            seed: rng.gen(),
            detect_d_min_km: cfg.detect_d_min_km,
        };
        inject_spoof(&mut stream, victim, cfg.attack_offset_km, &schedule)?;
        stats.spoof_events += cfg.attack_events;
    }

    let SimStream {
        cells,
        mut events,
        spoofed,
        warnings,
    } = stream;
    // stable: generation order breaks ties
    events.sort_by(|a, b| {
        (a.record.record_timestamp_ms, &a.record.imsi).cmp(&(b.record.record_timestamp_ms, &b.record.imsi))
    });
    stats.cells = cells.len();
    stats.events = events.len();
    stats.spoofed = spoofed.len();
    stats.nas_events = events.iter().filter(|e| e.record.plane == Plane::Nas).count();

    let mut labels = Vec::with_capacity(events.len());
    let mut positions = Vec::with_capacity(events.len());
    let mut records = Vec::with_capacity(events.len());
    for e in events {
        labels.push(e.label);
        positions.push(e.position);
        records.push(e.record);
    }
    Ok(Scenario {
        cells,
        events: records,
        truth: GroundTruth { spoofed, labels },
        positions,
        stats,
        warnings,
    })
}

/// A fixed, hand-built scenario exercising one corner case.
#[derive(Debug, Clone)]
pub struct CornerScenario {
    pub name: &'static str,
    pub description: &'static str,
    pub cells: Vec<CellSite<f64>>,
    pub events: Vec<EventRecord>,
    pub labels: Vec<EventLabel>,
}

impl CornerScenario {
    pub fn dataset<F: Scalar>(&self) -> Result<EventDataset<F>, ScenarioError> {
        Scenario {
            cells: self.cells.clone(),
            events: self.events.clone(),
            truth: GroundTruth::default(),
            positions: Vec::new(),
            stats: ScenarioStats::default(),
            warnings: Vec::new(),
        }
        .dataset()
    }
}

const CORNER_IMSI: &str = "310410999000001";
const CORNER_T0: i64 = 1_710_410_000_000;

fn corner_event(t_ms: i64, cell: &str, trigger: Trigger, plane: Plane, rtd_km: Option<f64>) -> EventRecord {
    let rtd = rtd_km.map(km_to_rtd::<f64>);
    EventRecord {
        record_timestamp_ms: t_ms,
        imsi: CORNER_IMSI.into(),
        imei: Some("350000999000001".into()),
        current_cell_id: cell.into(),
        target_cell_id: None,
        source_cell_id: None,
        trigger,
        ho_fail_code: HoFailCode::None,
        first_rtd: rtd,
        last_rtd: rtd,
        plane,
    }
}

fn idle_gap_scenario() -> CornerScenario {
    let earth = EarthModel::default();
    let c1 = GeoPoint::new(38.0, -105.0).expect("valid");
    let c0 = destination(c1, 270.0, 5.0, earth);
    let c2 = destination(c1, 90.0, 30.0, earth);
    let c3 = destination(c2, 90.0, 5.0, earth);
    let cells = [("I0", c0), ("I1", c1), ("I2", c2), ("I3", c3)]
        .into_iter()
        .map(|(id, p)| CellSite {
            cell_id: id.into(),
            position: p,
            antenna_azimuth: None,
            morphology: Morphology::Suburban,
        })
        .collect();
    let handover = |t: i64, from: &str, to: &str| {
        let mut prep = corner_event(t, from, Trigger::Measurement, Plane::RanOther, Some(2.5));
        prep.target_cell_id = Some(to.into());
        let mut ho = corner_event(t + 300, to, Trigger::Handover, Plane::RanOther, Some(2.5));
        ho.source_cell_id = Some(from.into());
        ho.ho_fail_code = HoFailCode::X2Ho;
        [prep, ho]
    };
    let mut events = vec![corner_event(CORNER_T0, "I0", Trigger::Attach, Plane::Nas, Some(1.0))];
    events.extend(handover(CORNER_T0 + 90_000, "I0", "I1"));
    // silent for 30 minutes, then re-establishes 30 km further on
    let t3 = CORNER_T0 + 90_300 + 1_800_000;
    events.push(corner_event(t3, "I2", Trigger::ServiceRequest, Plane::Nas, Some(1.0)));
    events.extend(handover(t3 + 90_000, "I2", "I3"));
    let labels = vec![
        EventLabel::Legit,
        EventLabel::Legit,
        EventLabel::Legit,
        EventLabel::CornerIdle,
        EventLabel::Legit,
        EventLabel::Legit,
    ];
    CornerScenario {
        name: "idle_gap",
        description: "handover, 30 min idle across 30 km, re-establishment, handover",
        cells,
        events,
        labels,
    }
}

fn bounce_scenario(with_rtd: bool) -> CornerScenario {
    let earth = EarthModel::default();
    let near = GeoPoint::new(44.0, -110.0).expect("valid");
    let far = destination(near, 60.0, 80.0, earth);
    let far_azimuth = bearing_deg(far, near).expect("distinct");
    let ue = destination(near, bearing_deg(near, far).expect("distinct"), 1.0, earth);
    let cells = vec![
        CellSite {
            cell_id: "B_NEAR".into(),
            position: near,
            antenna_azimuth: None,
            morphology: Morphology::Rural,
        },
        CellSite {
            cell_id: "B_FAR".into(),
            position: far,
            antenna_azimuth: Some(far_azimuth),
            morphology: Morphology::Rural,
        },
    ];
    let rtd = |cell: GeoPoint<f64>| with_rtd.then(|| haversine_km(ue, cell, earth));
    let mut events = vec![corner_event(CORNER_T0, "B_NEAR", Trigger::Attach, Plane::Nas, rtd(near))];
    let mut labels = vec![EventLabel::Legit];
    let mut t = CORNER_T0;
    // four bounces, each cycle a little slower than the one before
    for dwell_s in [5, 6, 7, 8] {
        t += 60_000;
        events.push(corner_event(t, "B_NEAR", Trigger::Measurement, Plane::RanOther, rtd(near)));
        t += dwell_s * 1000;
        events.push(corner_event(t, "B_FAR", Trigger::ServiceRequest, Plane::Nas, rtd(far)));
        t += dwell_s * 1000;
        events.push(corner_event(t, "B_NEAR", Trigger::RrcReestablishment, Plane::Nas, rtd(near)));
        labels.extend([EventLabel::Legit, EventLabel::CornerBounce, EventLabel::CornerBounce]);
    }
    CornerScenario {
        name: if with_rtd { "bounce_rtd" } else { "bounce_no_rtd" },
        description: if with_rtd {
            "repeated bounce to a cell 80 km away whose RTD shows the UE is still near home"
        } else {
            "the same bounces with RTD readings stripped"
        },
        cells,
        events,
        labels,
    }
}

/// Idle gap, RTD-explained distant bounce, and the same bounce without RTD.
pub fn corner_case_suite() -> Vec<CornerScenario> {
    vec![idle_gap_scenario(), bounce_scenario(true), bounce_scenario(false)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rtd_comp::{rtd_to_km, rtd_unit_km};

    fn small() -> ScenarioConfig {
        ScenarioConfig {
            fleet_size: 40,
            duration_hours: 6.0,
            lat_min: 40.0,
            lat_max: 40.6,
            lon_min: -75.0,
            lon_max: -74.2,
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_same_output() {
        let cfg = ScenarioConfig {
            attack_count: 2,
            ..small()
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.events, b.events);
        assert_eq!(a.cells, b.cells);
        assert_eq!(a.truth, b.truth);
        let c = generate(&ScenarioConfig { seed: 7, ..cfg }).unwrap();
        assert_ne!(a.events, c.events);
    }

    #[test]
    fn labels_and_positions_line_up() {
        let s = generate(&ScenarioConfig {
            attack_count: 3,
            ..small()
        })
        .unwrap();
        assert_eq!(s.truth.labels.len(), s.events.len());
        assert_eq!(s.positions.len(), s.events.len());
        assert_eq!(s.truth.spoofed.len(), 3);
        for (rec, label) in s.events.iter().zip(&s.truth.labels) {
            if *label == EventLabel::Spoof {
                assert!(s.truth.spoofed.contains(&rec.imsi));
                assert!(rec.current_cell_id.starts_with("ATK"));
            }
        }
        assert!(s.events.windows(2).all(|w| w[0].record_timestamp_ms <= w[1].record_timestamp_ms));
    }

    #[test]
    fn legit_motion_respects_speed_cap() {
        let cfg = small();
        let s = generate(&cfg).unwrap();
        let earth = EarthModel::default();
        let mut last: std::collections::HashMap<&str, (i64, GeoPoint<f64>)> = Default::default();
        let mut max_kmh: f64 = 0.0;
        for ((rec, pos), label) in s.events.iter().zip(&s.positions).zip(&s.truth.labels) {
            assert_ne!(*label, EventLabel::Spoof);
            if let Some((t, p)) = last.insert(&rec.imsi, (rec.record_timestamp_ms, *pos)) {
                let dt_h = (rec.record_timestamp_ms - t) as f64 / 3_600_000.0;
                if dt_h > 0.0 {
                    max_kmh = max_kmh.max(haversine_km(p, *pos, earth) / dt_h);
                }
            }
        }
        assert!(max_kmh > 0.0);
        assert!(max_kmh <= cfg.legit_v_max_kmh * (1.0 + 1e-9), "max speed {max_kmh}");
    }

    #[test]
    fn reconnection_ratio_near_target() {
        for target in [0.9, 0.6] {
            let s = generate(&ScenarioConfig {
                reconnection_ratio: target,
                ..small()
            })
            .unwrap();
            let ratio = s.stats.reconnection_ratio();
            assert!((ratio - target).abs() <= 0.05, "target {target} got {ratio}");
        }
    }

    #[test]
    fn rtd_quantization_round_trip() {
        let quantum = rtd_unit_km::<f64>();
        assert!((quantum * 1000.0 - 9.7589).abs() < 1e-3);
        for km in [0.0, 0.004, 1.0, 12.345, 79.9, 150.0] {
            let back = rtd_to_km::<f64>(km_to_rtd(km));
            assert!((back - km).abs() <= quantum, "{km} -> {back}");
        }
    }

    #[test]
    fn config_validation_names_keys() {
        let bad = ScenarioConfig {
            nas_prob: 1.5,
            ..Default::default()
        };
        match bad.validate() {
            Err(ScenarioError::Invalid { key, .. }) => assert_eq!(key, "nas_prob"),
            other => panic!("{other:?}"),
        }
        let err = ScenarioConfig::from_toml_str("fleet_size = 3\nwat = 1\n").unwrap_err();
        assert!(err.to_string().contains("wat"), "{err}");
        let err = ScenarioConfig::from_toml_str("duration_hours = -2.0\n").unwrap_err();
        assert!(err.to_string().contains("duration_hours"), "{err}");
        let cfg = ScenarioConfig::from_toml_str("seed = 9\nfleet_size = 5\nattack_victims = [\"310410000000001\"]\n").unwrap();
        assert_eq!((cfg.seed, cfg.fleet_size), (9, 5));
        assert!(ScenarioConfig {
            legit_v_max_kmh: 10.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn small_offset_warns() {
        let s = generate(&ScenarioConfig {
            attack_count: 1,
            attack_offset_km: 10.0,
            ..small()
        })
        .unwrap();
        assert_eq!(s.warnings.len(), 1);
        assert!(s.warnings[0].contains("10 km"));
    }

    #[test]
    fn unknown_victim_is_an_error() {
        let err = generate(&ScenarioConfig {
            attack_victims: vec!["999".into()],
            ..small()
        })
        .unwrap_err();
        assert!(matches!(err, ScenarioError::UnknownVictim(v) if v == "999"));
    }

    #[test]
    fn spoof_nas_split() {
        let s = generate(&ScenarioConfig {
            attack_count: 1,
            attack_events: 4,
            attack_nas_fraction: 0.5,
            ..small()
        })
        .unwrap();
        let spoof: Vec<&EventRecord> = s
            .events
            .iter()
            .zip(&s.truth.labels)
            .filter(|(_, l)| **l == EventLabel::Spoof)
            .map(|(r, _)| r)
            .collect();
        assert_eq!(spoof.len(), 4);
        assert_eq!(spoof.iter().filter(|r| r.plane == Plane::Nas).count(), 2);
        assert_eq!(spoof[0].plane, Plane::Nas);
        let imeis: BTreeSet<_> = spoof.iter().map(|r| r.imei.clone()).collect();
        assert_eq!(imeis.len(), 1);
    }

    #[test]
    fn writes_three_files() {
        let dir = tempfile::tempdir().unwrap();
        let s = generate(&ScenarioConfig {
            fleet_size: 5,
            attack_count: 1,
            ..small()
        })
        .unwrap();
        let files = s.write_to(dir.path()).unwrap();
        let cells = crate::event_model::load_cells::<f64>(&files.cells).unwrap();
        let (ds, q) = crate::event_model::load_events(&files.events, cells).unwrap();
        assert_eq!(ds.len(), s.events.len());
        assert_eq!(q.quarantined, 0);
        let gt = std::fs::read_to_string(&files.ground_truth).unwrap();
        assert_eq!(gt.lines().next(), Some("imsi,event_ordinal,label"));
        assert_eq!(gt.lines().count(), s.events.len() + 1);
        assert!(gt.contains(",spoof\n"));
    }

    #[test]
    fn corner_suite_is_well_formed() {
        let suite = corner_case_suite();
        assert_eq!(suite.len(), 3);
        for sc in &suite {
            assert_eq!(sc.labels.len(), sc.events.len(), "{}", sc.name);
            let ds = sc.dataset::<f64>().unwrap();
            assert_eq!(ds.len(), sc.events.len());
        }
        assert!(suite[2].events.iter().all(|e| e.first_rtd.is_none() && e.last_rtd.is_none()));
    }
}
