//! Cell sites, signaling events and CSV ingestion.
//!
//! `cells.csv` columns: `cell_id,lat,lon,azimuth_deg,morphology` (azimuth may be empty).
//!
//! `events.csv` columns: `record_timestamp_ms,imsi,imei,current_cell_id,target_cell_id,
//! source_cell_id,start_collection_trigger,ho_fail_code,first_rtd,last_rtd,plane`
//! (optional fields empty).

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{GeoError, GeoPoint};
use crate::scalar::Scalar;

pub const CELLS_HEADER: [&str; 5] = ["cell_id", "lat", "lon", "azimuth_deg", "morphology"];

pub const EVENTS_HEADER: [&str; 11] = [
    "record_timestamp_ms",
    "imsi",
    "imei",
    "current_cell_id",
    "target_cell_id",
    "source_cell_id",
    "start_collection_trigger",
    "ho_fail_code",
    "first_rtd",
    "last_rtd",
    "plane",
];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot open {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error near line {line}: {source}")]
    Csv {
        line: u64,
        #[source]
        source: csv::Error,
    },
    #[error("malformed header: expected `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("line {line}: duplicate cell id `{cell_id}`")]
    DuplicateCell { line: u64, cell_id: String },
    #[error("event {index}: record timestamp must be positive, got {timestamp_ms}")]
    Timestamp { index: usize, timestamp_ms: i64 },
}

macro_rules! string_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(&self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(format!(
                        concat!("unknown ", stringify!($name), " `{}`"),
                        other
                    )),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

string_enum! {
    /// Site morphology class, used to scope threshold overrides.
    Morphology {
        Urban => "urban",
        Suburban => "suburban",
        Rural => "rural",
    }
}

string_enum! {
    /// What caused the RAN record to be collected.
    Trigger {
        Handover => "handover",
        RrcReestablishment => "rrc_reestablishment",
        Attach => "attach",
        ServiceRequest => "service_request",
        TrackingAreaUpdate => "tracking_area_update",
        Measurement => "measurement",
        Other => "other",
    }
}

string_enum! {
    /// Handover type / failure code of the last handover.
    HoFailCode {
        None => "none",
        IntraHo => "intra_ho",
        InterHo => "inter_ho",
        X2Ho => "x2_ho",
        S1Ho => "s1_ho",
        FailureOther => "failure_other",
    }
}

string_enum! {
    /// Signaling plane of the record. NAS records feed the pre-filter.
    Plane {
        Nas => "nas",
        RanOther => "ran_other",
    }
}

/// Dense index of a cell inside a [`CellCatalog`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellIdx(pub u32);

/// Dense IMSI handle. Ids follow the lexicographic order of the IMSI strings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ImsiId(pub u32);

#[derive(Debug, Clone, PartialEq)]
pub struct CellSite<F> {
    pub cell_id: String,
    pub position: GeoPoint<F>,
    /// Antenna azimuth in `[0, 360)`; `None` for omni sites or unknown.
    pub antenna_azimuth: Option<F>,
    pub morphology: Morphology,
}

#[derive(Debug, Clone)]
pub struct CellCatalog<F> {
    sites: Vec<CellSite<F>>,
    by_id: HashMap<String, CellIdx>,
}

impl<F> Default for CellCatalog<F> {
    fn default() -> Self {
        Self {
            sites: Vec::new(),
            by_id: HashMap::new(),
        }
    }
}

impl<F: Scalar> CellCatalog<F> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a site; returns `Err(site)` when its id is already present.
    pub fn insert(&mut self, site: CellSite<F>) -> Result<CellIdx, CellSite<F>> {
        if self.by_id.contains_key(&site.cell_id) {
            return Err(site);
        }
        let idx = CellIdx(self.sites.len() as u32);
        self.by_id.insert(site.cell_id.clone(), idx);
        self.sites.push(site);
        Ok(idx)
    }

    pub fn from_sites(sites: impl IntoIterator<Item = CellSite<F>>) -> Result<Self, IngestError> {
        let mut cat = Self::new();
        for (i, site) in sites.into_iter().enumerate() {
            cat.insert(site).map_err(|s| IngestError::DuplicateCell {
                line: i as u64 + 2,
                cell_id: s.cell_id,
            })?;
        }
        Ok(cat)
    }

    pub fn lookup(&self, cell_id: &str) -> Option<CellIdx> {
        self.by_id.get(cell_id).copied()
    }

    pub fn get(&self, idx: CellIdx) -> Option<&CellSite<F>> {
        self.sites.get(idx.0 as usize)
    }

    pub fn site(&self, idx: CellIdx) -> &CellSite<F> {
        &self.sites[idx.0 as usize]
    }

    pub fn sites(&self) -> &[CellSite<F>] {
        &self.sites
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }
}

/// One event row with identifiers still in string form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventRecord {
    pub record_timestamp_ms: i64,
    pub imsi: String,
    pub imei: Option<String>,
    pub current_cell_id: String,
    pub target_cell_id: Option<String>,
    pub source_cell_id: Option<String>,
    pub trigger: Trigger,
    pub ho_fail_code: HoFailCode,
    pub first_rtd: Option<u32>,
    pub last_rtd: Option<u32>,
    pub plane: Plane,
}

/// An ingested event with resolved cell and identity handles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SignalingEvent {
    pub record_timestamp_ms: i64,
    pub imsi: ImsiId,
    pub imei: Option<u32>,
    pub current_cell: CellIdx,
    pub target_cell: Option<CellIdx>,
    pub source_cell: Option<CellIdx>,
    pub trigger: Trigger,
    pub ho_fail_code: HoFailCode,
    pub first_rtd: Option<u32>,
    pub last_rtd: Option<u32>,
    pub plane: Plane,
}

impl SignalingEvent {
    pub fn effective_rtd(&self) -> Option<u32> {
        effective_rtd(self.first_rtd, self.last_rtd)
    }
}

/// Larger of the two RTD readings; a single present reading is used as is.
pub fn effective_rtd(first: Option<u32>, last: Option<u32>) -> Option<u32> {
    match (first, last) {
        (Some(a), Some(b)) => Some(a.max(b)),
        (a, b) => a.or(b),
    }
}

/// Rows dropped at ingestion because they reference cells missing from the catalog.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct QuarantineReport {
    pub total_rows: usize,
    pub accepted: usize,
    pub quarantined: usize,
    /// Unknown cell id -> number of rows referencing it.
    pub unknown_cells: BTreeMap<String, usize>,
}

/// Immutable batch of events plus the catalog they reference.
///
/// Events keep their input order; an event's ordinal is its position in [`events`](Self::events).
#[derive(Debug, Clone)]
pub struct EventDataset<F> {
    cells: CellCatalog<F>,
    events: Vec<SignalingEvent>,
    imsis: Vec<String>,
    imeis: Vec<String>,
}

impl<F: Scalar> EventDataset<F> {
    pub fn from_records(
        cells: CellCatalog<F>,
        records: impl IntoIterator<Item = EventRecord>,
    ) -> Result<(Self, QuarantineReport), IngestError> {
        let mut report = QuarantineReport::default();
        let mut imsi_ids: HashMap<String, u32> = HashMap::new();
        let mut imsis: Vec<String> = Vec::new();
        let mut imei_ids: HashMap<String, u32> = HashMap::new();
        let mut imeis: Vec<String> = Vec::new();
        let mut events = Vec::new();

        for (index, rec) in records.into_iter().enumerate() {
            report.total_rows += 1;
            if rec.record_timestamp_ms <= 0 {
                return Err(IngestError::Timestamp {
                    index,
                    timestamp_ms: rec.record_timestamp_ms,
                });
            }
            let mut missing = None;
            let mut resolve = |id: &str| {
                let found = cells.lookup(id);
                if found.is_none() && missing.is_none() {
                    missing = Some(id.to_owned());
                }
                found
            };
            let current = resolve(&rec.current_cell_id);
            let target = rec.target_cell_id.as_deref().map(&mut resolve);
            let source = rec.source_cell_id.as_deref().map(&mut resolve);
            if let Some(id) = missing {
                report.quarantined += 1;
                *report.unknown_cells.entry(id).or_default() += 1;
                continue;
            }

            let imsi = match imsi_ids.get(&rec.imsi) {
                Some(&id) => id,
                None => {
                    let id = imsis.len() as u32;
                    imsi_ids.insert(rec.imsi.clone(), id);
                    imsis.push(rec.imsi);
                    id
                }
            };
            let imei = rec.imei.map(|s| match imei_ids.get(&s) {
                Some(&id) => id,
                None => {
                    let id = imeis.len() as u32;
                    imei_ids.insert(s.clone(), id);
                    imeis.push(s);
                    id
                }
            });
            events.push(SignalingEvent {
                record_timestamp_ms: rec.record_timestamp_ms,
                imsi: ImsiId(imsi),
                imei,
                current_cell: current.expect("resolved"),
                target_cell: target.flatten(),
                source_cell: source.flatten(),
                trigger: rec.trigger,
                ho_fail_code: rec.ho_fail_code,
                first_rtd: rec.first_rtd,
                last_rtd: rec.last_rtd,
                plane: rec.plane,
            });
        }
        report.accepted = events.len();

        // renumber IMSIs so id order matches string order
        let mut order: Vec<u32> = (0..imsis.len() as u32).collect();
        order.sort_by(|&a, &b| imsis[a as usize].cmp(&imsis[b as usize]));
        let mut remap = vec![0u32; imsis.len()];
        for (new, &old) in order.iter().enumerate() {
            remap[old as usize] = new as u32;
        }
        for e in &mut events {
            e.imsi = ImsiId(remap[e.imsi.0 as usize]);
        }
        let mut sorted = vec![String::new(); imsis.len()];
        for (old, name) in imsis.into_iter().enumerate() {
            sorted[remap[old] as usize] = name;
        }

        Ok((
            Self {
                cells,
                events,
                imsis: sorted,
                imeis,
            },
            report,
        ))
    }

    pub fn empty(cells: CellCatalog<F>) -> Self {
        Self {
            cells,
            events: Vec::new(),
            imsis: Vec::new(),
            imeis: Vec::new(),
        }
    }

    pub fn cells(&self) -> &CellCatalog<F> {
        &self.cells
    }

    pub fn events(&self) -> &[SignalingEvent] {
        &self.events
    }

    pub fn event(&self, ordinal: u32) -> &SignalingEvent {
        &self.events[ordinal as usize]
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn imsi_count(&self) -> usize {
        self.imsis.len()
    }

    pub fn imsi_name(&self, id: ImsiId) -> &str {
        &self.imsis[id.0 as usize]
    }

    pub fn imsi_id(&self, name: &str) -> Option<ImsiId> {
        self.imsis
            .binary_search_by(|s| s.as_str().cmp(name))
            .ok()
            .map(|i| ImsiId(i as u32))
    }

    pub fn imei_name(&self, id: u32) -> &str {
        &self.imeis[id as usize]
    }

    /// Converts an event back to its string-form row.
    pub fn record(&self, ordinal: u32) -> EventRecord {
        let e = self.event(ordinal);
        let cell = |c: CellIdx| self.cells.site(c).cell_id.clone();
        EventRecord {
            record_timestamp_ms: e.record_timestamp_ms,
            imsi: self.imsi_name(e.imsi).to_owned(),
            imei: e.imei.map(|i| self.imei_name(i).to_owned()),
            current_cell_id: cell(e.current_cell),
            target_cell_id: e.target_cell.map(cell),
            source_cell_id: e.source_cell.map(cell),
            trigger: e.trigger,
            ho_fail_code: e.ho_fail_code,
            first_rtd: e.first_rtd,
            last_rtd: e.last_rtd,
            plane: e.plane,
        }
    }
}

fn open(path: &Path) -> Result<File, IngestError> {
    File::open(path).map_err(|source| IngestError::Io {
        path: path.to_owned(),
        source,
    })
}

fn check_header(rdr: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<(), IngestError> {
    let found = rdr
        .headers()
        .map_err(|source| IngestError::Csv { line: 1, source })?
        .clone();
    if found.iter().map(str::trim).ne(expected.iter().copied()) {
        return Err(IngestError::Header {
            expected: expected.join(","),
            found: found.iter().collect::<Vec<_>>().join(","),
        });
    }
    Ok(())
}

fn reader(input: impl Read) -> csv::Reader<impl Read> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(input)
}

fn opt(field: &str) -> Option<&str> {
    let f = field.trim();
    (!f.is_empty()).then_some(f)
}

fn parse_field<T: FromStr>(line: u64, name: &str, raw: &str) -> Result<T, IngestError>
where
    T::Err: fmt::Display,
{
    raw.trim().parse::<T>().map_err(|e| IngestError::Row {
        line,
        message: format!("{name} `{raw}`: {e}"),
    })
}

pub fn load_cells<F: Scalar>(path: impl AsRef<Path>) -> Result<CellCatalog<F>, IngestError> {
    read_cells(open(path.as_ref())?)
}

pub fn read_cells<F: Scalar>(input: impl Read) -> Result<CellCatalog<F>, IngestError> {
    let mut rdr = reader(input);
    check_header(&mut rdr, &CELLS_HEADER)?;
    let mut cat = CellCatalog::new();
    for row in rdr.records() {
        let row = row.map_err(|source| IngestError::Csv {
            line: source.position().map_or(0, |p| p.line()),
            source,
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let cell_id = row[0].trim();
        if cell_id.is_empty() {
            return Err(IngestError::Row {
                line,
                message: "empty cell_id".into(),
            });
        }
        let lat: f64 = parse_field(line, "lat", &row[1])?;
        let lon: f64 = parse_field(line, "lon", &row[2])?;
        let position = GeoPoint::new(F::lit(lat), F::lit(lon)).map_err(|e: GeoError| IngestError::Row {
            line,
            message: e.to_string(),
        })?;
        let antenna_azimuth = match opt(&row[3]) {
            Some(raw) => {
                let az: f64 = parse_field(line, "azimuth_deg", raw)?;
                if !(0.0..360.0).contains(&az) {
                    return Err(IngestError::Row {
                        line,
                        message: format!("azimuth_deg {az} outside [0, 360)"),
                    });
                }
                Some(F::lit(az))
            }
            None => None,
        };
        let morphology: Morphology = parse_field(line, "morphology", &row[4])?;
        cat.insert(CellSite {
            cell_id: cell_id.to_owned(),
            position,
            antenna_azimuth,
            morphology,
        })
        .map_err(|s| IngestError::DuplicateCell {
            line,
            cell_id: s.cell_id,
        })?;
    }
    Ok(cat)
}

pub fn load_events<F: Scalar>(
    path: impl AsRef<Path>,
    cells: CellCatalog<F>,
) -> Result<(EventDataset<F>, QuarantineReport), IngestError> {
    read_events(open(path.as_ref())?, cells)
}

pub fn read_events<F: Scalar>(
    input: impl Read,
    cells: CellCatalog<F>,
) -> Result<(EventDataset<F>, QuarantineReport), IngestError> {
    let mut rdr = reader(input);
    check_header(&mut rdr, &EVENTS_HEADER)?;
    let mut records = Vec::new();
    let mut row = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut row) {
            Ok(true) => {}
            Ok(false) => break,
            Err(source) => {
                return Err(IngestError::Csv {
                    line: source.position().map_or(0, |p| p.line()),
                    source,
                })
            }
        }
        let line = row.position().map_or(0, |p| p.line());
        records.push(parse_event_row(line, &row)?);
    }
    EventDataset::from_records(cells, records)
}

fn parse_event_row(line: u64, row: &csv::StringRecord) -> Result<EventRecord, IngestError> {
    let record_timestamp_ms: i64 = parse_field(line, "record_timestamp_ms", &row[0])?;
    if record_timestamp_ms <= 0 {
        return Err(IngestError::Row {
            line,
            message: format!("record_timestamp_ms must be positive, got {record_timestamp_ms}"),
        });
    }
    let required = |i: usize, name: &str| -> Result<String, IngestError> {
        opt(&row[i]).map(str::to_owned).ok_or_else(|| IngestError::Row {
            line,
            message: format!("missing {name}"),
        })
    };
    let rtd = |i: usize, name: &str| -> Result<Option<u32>, IngestError> {
        opt(&row[i]).map(|raw| parse_field::<u32>(line, name, raw)).transpose()
    };
    Ok(EventRecord {
        record_timestamp_ms,
        imsi: required(1, "imsi")?,
        imei: opt(&row[2]).map(str::to_owned),
        current_cell_id: required(3, "current_cell_id")?,
        target_cell_id: opt(&row[4]).map(str::to_owned),
        source_cell_id: opt(&row[5]).map(str::to_owned),
        trigger: parse_field(line, "start_collection_trigger", &row[6])?,
        ho_fail_code: parse_field(line, "ho_fail_code", &row[7])?,
        first_rtd: rtd(8, "first_rtd")?,
        last_rtd: rtd(9, "last_rtd")?,
        plane: parse_field(line, "plane", &row[10])?,
    })
}

pub fn write_cells<F: Scalar>(out: impl Write, sites: &[CellSite<F>]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CELLS_HEADER)?;
    for s in sites {
        w.write_record([
            s.cell_id.clone(),
            s.position.lat().to_string(),
            s.position.lon().to_string(),
            s.antenna_azimuth.map(|a| a.to_string()).unwrap_or_default(),
            s.morphology.as_str().to_owned(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_events<'a>(
    out: impl Write,
    records: impl IntoIterator<Item = &'a EventRecord>,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EVENTS_HEADER)?;
    let num = |v: Option<u32>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in records {
        w.write_record([
            r.record_timestamp_ms.to_string().as_str(),
            &r.imsi,
            r.imei.as_deref().unwrap_or(""),
            &r.current_cell_id,
            r.target_cell_id.as_deref().unwrap_or(""),
            r.source_cell_id.as_deref().unwrap_or(""),
            r.trigger.as_str(),
            r.ho_fail_code.as_str(),
            &num(r.first_rtd),
            &num(r.last_rtd),
            r.plane.as_str(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
