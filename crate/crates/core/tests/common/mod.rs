//! Reference implementations used only by tests. Written against the
//! definitions, deliberately naive, sharing no code with the crate.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use ranloc::{EventRecord, HoFailCode, Plane, Trigger};

pub const R_KM: f64 = 6371.0;

/// Great-circle distance from the angle between unit vectors.
pub fn vector_distance_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let v = |lat: f64, lon: f64| {
        let (p, l) = (lat.to_radians(), lon.to_radians());
        [p.cos() * l.cos(), p.cos() * l.sin(), p.sin()]
    };
    let (a, b) = (v(lat1, lon1), v(lat2, lon2));
    let cross = [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ];
    let cn = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
    let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    R_KM * cn.atan2(dot)
}

/// (m+1)-th largest sample, or `init` when there are at most m samples.
pub fn sorted_read(samples: &[f64], m: usize, init: f64) -> f64 {
    if samples.len() <= m {
        return init;
    }
    let mut s = samples.to_vec();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s[m]
}

fn initial_bearing(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dl = (lon2 - lon1).to_radians();
    let y = dl.sin() * p2.cos();
    let x = p1.cos() * p2.sin() - p1.sin() * p2.cos() * dl.cos();
    y.atan2(x).to_degrees().rem_euclid(360.0)
}

fn angle_between(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

#[derive(Debug, Clone)]
pub struct OracleCell {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    pub azimuth: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct OracleConfig {
    pub v_max: f64,
    pub d_min: f64,
    pub n: usize,
    pub m: usize,
    pub init: f64,
}

/// Naive haversine, written out independently of the crate.
fn haversine(a: &OracleCell, b: &OracleCell) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dp = p2 - p1;
    let dl = (b.lon - a.lon).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * R_KM * h.sqrt().atan2((1.0 - h).sqrt())
}

fn rtd_km(e: &EventRecord) -> Option<f64> {
    let r = match (e.first_rtd, e.last_rtd) {
        (Some(a), Some(b)) => a.max(b),
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => return None,
    };
    Some(r as f64 * 299_792_458.0 / (15_000.0 * 2048.0) / 1000.0)
}

/// IMSIs with NAS events on at least two distinct cells.
pub fn naive_active(events: &[EventRecord]) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for e in events.iter().filter(|e| e.plane == Plane::Nas) {
        if events
            .iter()
            .any(|o| o.imsi == e.imsi && o.plane == Plane::Nas && o.current_cell_id != e.current_cell_id)
        {
            out.insert(e.imsi.clone());
        }
    }
    out
}

/// Raw NAS-only prefilter over `active`.
pub fn naive_prefilter(
    cells: &[OracleCell],
    events: &[EventRecord],
    active: &BTreeSet<String>,
    cfg: &OracleConfig,
) -> BTreeSet<String> {
    let cell = |id: &str| cells.iter().find(|c| c.id == id).unwrap();
    let mut out = BTreeSet::new();
    for imsi in active {
        let mut nas: Vec<usize> = (0..events.len())
            .filter(|&i| &events[i].imsi == imsi && events[i].plane == Plane::Nas)
            .collect();
        nas.sort_by_key(|&i| (events[i].record_timestamp_ms, i));
        for w in nas.windows(2) {
            let (p, n) = (&events[w[0]], &events[w[1]]);
            if p.current_cell_id == n.current_cell_id {
                continue;
            }
            let d = haversine(cell(&p.current_cell_id), cell(&n.current_cell_id));
            let dt_h = (n.record_timestamp_ms - p.record_timestamp_ms) as f64 / 3_600_000.0;
            if d > cfg.d_min && d / dt_h > cfg.v_max {
                out.insert(imsi.clone());
            }
        }
    }
    out
}

/// Every transition of every IMSI in `keys`, judged in global order with the
/// per-cell queues. Returns `(imsi, prev ordinal, next ordinal)` of findings.
pub fn naive_findings(
    cells: &[OracleCell],
    events: &[EventRecord],
    keys: &BTreeSet<String>,
    cfg: &OracleConfig,
) -> BTreeSet<(String, usize, usize)> {
    let cell = |id: &str| cells.iter().find(|c| c.id == id).unwrap();
    let mut trs: Vec<(usize, usize)> = Vec::new();
    for imsi in keys {
        let mut h: Vec<usize> = (0..events.len()).filter(|&i| &events[i].imsi == imsi).collect();
        h.sort_by_key(|&i| (events[i].record_timestamp_ms, i));
        for w in h.windows(2) {
            if events[w[0]].current_cell_id != events[w[1]].current_cell_id {
                trs.push((w[0], w[1]));
            }
        }
    }
    trs.sort_by(|a, b| {
        let (ea, eb) = (&events[a.1], &events[b.1]);
        (ea.record_timestamp_ms, &ea.imsi, a.1).cmp(&(eb.record_timestamp_ms, &eb.imsi, b.1))
    });

    let ho_codes = [HoFailCode::IntraHo, HoFailCode::InterHo, HoFailCode::X2Ho, HoFailCode::S1Ho];
    let mut queues: HashMap<String, Vec<f64>> = HashMap::new();
    let mut cache: HashMap<String, (usize, f64)> = HashMap::new();
    let read = |q: &HashMap<String, Vec<f64>>, id: &str| sorted_read(q.get(id).map_or(&[][..], |v| v), cfg.m, cfg.init);
    let mut found = BTreeSet::new();
    for (pi, ni) in trs {
        let (p, n) = (&events[pi], &events[ni]);
        let (cp, cn) = (cell(&p.current_cell_id), cell(&n.current_cell_id));
        let d = haversine(cp, cn);
        let dt_s = (n.record_timestamp_ms - p.record_timestamp_ms) as f64 / 1000.0;
        let proj = |e: &EventRecord, at: &OracleCell, other: &OracleCell| match (rtd_km(e), at.azimuth) {
            (Some(r), Some(az)) if (at.lat, at.lon) != (other.lat, other.lon) => {
                let theta = angle_between(az, initial_bearing(at.lat, at.lon, other.lat, other.lon));
                r * theta.to_radians().cos()
            }
            _ => 0.0,
        };
        let pp = proj(p, cp, cn);
        let pn = proj(n, cn, cp);
        let c_next = read(&queues, &n.current_cell_id);
        let c_prev = match cache.get(&p.imsi) {
            Some(&(o, v)) if o == pi => v,
            _ => read(&queues, &p.current_cell_id),
        };
        let excluded = ho_codes.contains(&n.ho_fail_code)
            || n.trigger == Trigger::Handover
            || p.target_cell_id.as_deref() == Some(n.current_cell_id.as_str());
        if !excluded {
            let v_hat = (d - pn - pp - (c_next + c_prev) / 2.0) / dt_s * 3600.0;
            if d > cfg.d_min && v_hat > cfg.v_max {
                found.insert((p.imsi.clone(), pi, ni));
            }
        }
        let c_in = d - cfg.v_max * dt_s / 3600.0 - pn - pp;
        let q = queues.entry(n.current_cell_id.clone()).or_default();
        q.push(c_in);
        if q.len() > cfg.n {
            q.remove(0);
        }
        cache.insert(p.imsi.clone(), (ni, c_next));
    }
    found
}
