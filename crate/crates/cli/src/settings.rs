//! Detector settings merged from built-in defaults, an optional TOML file and
//! command-line flags, in that order of increasing precedence.

use std::collections::BTreeSet;
use std::path::Path;

use anyhow::{Context, Result};
use ranloc::detector::MorphologyOverride;
use ranloc::rtd_comp::QueueSettings;
use ranloc::{DetectorConfig, HoFailCode, Morphology, Trigger};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettingsFile {
    pub v_max_kmh: Option<f64>,
    pub d_min_km: Option<f64>,
    pub queue_n: Option<usize>,
    pub queue_m: Option<usize>,
    pub init_comp_km: Option<f64>,
    pub ho_fail_codes_indicating_ho: Option<Vec<HoFailCode>>,
    pub triggers_involving_ho: Option<Vec<Trigger>>,
    #[serde(default)]
    pub overrides: Vec<OverrideEntry>,
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OverrideEntry {
    pub between: [Morphology; 2],
    pub v_max_kmh: Option<f64>,
    pub d_min_km: Option<f64>,
}

/// Values given on the command line; `None` means not given.
#[derive(Debug, Clone, Default)]
pub struct FlagOverrides {
    pub v_max_kmh: Option<f64>,
    pub d_min_km: Option<f64>,
    pub queue_n: Option<usize>,
    pub queue_m: Option<usize>,
    pub init_comp_km: Option<f64>,
}

/// What actually runs, echoed to stderr and stored in report.json.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct EffectiveSettings {
    pub v_max_kmh: f64,
    pub d_min_km: f64,
    pub queue_n: usize,
    pub queue_m: usize,
    pub init_comp_km: f64,
    pub ho_fail_codes_indicating_ho: Vec<HoFailCode>,
    pub triggers_involving_ho: Vec<Trigger>,
    pub overrides: Vec<OverrideEntry>,
    pub prefilter: bool,
    pub workers: usize,
}

impl EffectiveSettings {
    pub fn resolve(file: Option<&Path>, flags: &FlagOverrides, prefilter: bool, workers: usize) -> Result<Self> {
        let file: SettingsFile = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("invalid detector config {}", p.display()))?
            }
            None => SettingsFile::default(),
        };
        let d = DetectorConfig::default();
        let settings = Self {
            v_max_kmh: flags.v_max_kmh.or(file.v_max_kmh).unwrap_or(d.v_max_kmh),
            d_min_km: flags.d_min_km.or(file.d_min_km).unwrap_or(d.d_min_km),
            queue_n: flags.queue_n.or(file.queue_n).unwrap_or(d.queue.capacity()),
            queue_m: flags.queue_m.or(file.queue_m).unwrap_or(d.queue.tolerance()),
            init_comp_km: flags.init_comp_km.or(file.init_comp_km).unwrap_or(d.queue.init_km()),
            ho_fail_codes_indicating_ho: file
                .ho_fail_codes_indicating_ho
                .unwrap_or_else(|| d.ho_fail_codes_indicating_ho.iter().copied().collect()),
            triggers_involving_ho: file
                .triggers_involving_ho
                .unwrap_or_else(|| d.triggers_involving_ho.iter().copied().collect()),
            overrides: file.overrides,
            prefilter,
            workers: if workers == 0 {
                std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
            } else {
                workers
            },
        };
        settings.detector_config()?;
        Ok(settings)
    }

    pub fn detector_config(&self) -> Result<DetectorConfig> {
        let cfg = DetectorConfig {
            v_max_kmh: self.v_max_kmh,
            d_min_km: self.d_min_km,
            ho_fail_codes_indicating_ho: self.ho_fail_codes_indicating_ho.iter().copied().collect::<BTreeSet<_>>(),
            triggers_involving_ho: self.triggers_involving_ho.iter().copied().collect::<BTreeSet<_>>(),
            overrides: self
                .overrides
                .iter()
                .map(|o| MorphologyOverride {
                    between: (o.between[0], o.between[1]),
                    v_max_kmh: o.v_max_kmh,
                    d_min_km: o.d_min_km,
                })
                .collect(),
            queue: QueueSettings::new(self.queue_n, self.queue_m, self.init_comp_km)
                .context("invalid queue settings")?,
        };
        cfg.validate().context("invalid detector settings")?;
        Ok(cfg)
    }
}
