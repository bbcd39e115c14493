//! Per-IMSI chronological trajectories and the cell-to-cell transitions along them.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::event_model::{CellIdx, EventDataset, ImsiId, Plane};
use crate::geo::{azimuth_offset_deg, bearing_deg, haversine_km, EarthModel};
use crate::scalar::Scalar;

/// IMSI -> event ordinals sorted by `(timestamp, ordinal)`.
///
/// Stored as one flat ordinal array with per-IMSI offsets.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrajectoryIndex {
    imsis: Vec<ImsiId>,
    offsets: Vec<usize>,
    ordinals: Vec<u32>,
    slot: HashMap<ImsiId, usize>,
}

impl TrajectoryIndex {
    pub fn sequence(&self, imsi: ImsiId) -> Option<&[u32]> {
        self.slot.get(&imsi).map(|&s| self.segment(s))
    }

    fn segment(&self, slot: usize) -> &[u32] {
        &self.ordinals[self.offsets[slot]..self.offsets[slot + 1]]
    }

    /// Indexed IMSIs in ascending order.
    pub fn imsis(&self) -> &[ImsiId] {
        &self.imsis
    }

    pub fn iter(&self) -> impl Iterator<Item = (ImsiId, &[u32])> + '_ {
        self.imsis
            .iter()
            .enumerate()
            .map(move |(s, &imsi)| (imsi, self.segment(s)))
    }

    pub fn par_iter(&self) -> impl IndexedParallelIterator<Item = (ImsiId, &[u32])> + '_ {
        self.imsis
            .par_iter()
            .enumerate()
            .map(move |(s, &imsi)| (imsi, self.segment(s)))
    }

    pub fn len(&self) -> usize {
        self.imsis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.imsis.is_empty()
    }

    pub fn event_count(&self) -> usize {
        self.ordinals.len()
    }
}

/// Builds the trajectory index over all events, optionally restricted to `keys`.
pub fn build_index<F: Scalar>(ds: &EventDataset<F>, keys: Option<&[ImsiId]>) -> TrajectoryIndex {
    build_index_on_plane(ds, keys, None)
}

/// Like [`build_index`] but only keeps events on `plane` when given.
pub fn build_index_on_plane<F: Scalar>(
    ds: &EventDataset<F>,
    keys: Option<&[ImsiId]>,
    plane: Option<Plane>,
) -> TrajectoryIndex {
    let n_imsi = ds.imsi_count();
    let include: Option<Vec<bool>> = keys.map(|ks| {
        let mut inc = vec![false; n_imsi];
        for k in ks {
            if let Some(slot) = inc.get_mut(k.0 as usize) {
                *slot = true;
            }
        }
        inc
    });
    let wanted = |imsi: ImsiId, p: Plane| {
        plane.is_none_or(|want| want == p)
            && include.as_ref().is_none_or(|inc| inc[imsi.0 as usize])
    };

    let events = ds.events();
    let mut counts = vec![0usize; n_imsi + 1];
    for e in events {
        if wanted(e.imsi, e.plane) {
            counts[e.imsi.0 as usize + 1] += 1;
        }
    }
    for i in 1..counts.len() {
        counts[i] += counts[i - 1];
    }
    let mut cursor = counts.clone();
    let mut ordinals = vec![0u32; counts[n_imsi]];
    for (ord, e) in events.iter().enumerate() {
        if wanted(e.imsi, e.plane) {
            let c = &mut cursor[e.imsi.0 as usize];
            ordinals[*c] = ord as u32;
            *c += 1;
        }
    }

    // ordinals within a segment are ascending; a stable sort on time keeps file order for ties
    let mut segments = Vec::with_capacity(n_imsi);
    let mut rest = ordinals.as_mut_slice();
    for i in 0..n_imsi {
        let (seg, tail) = rest.split_at_mut(counts[i + 1] - counts[i]);
        if seg.len() > 1 {
            segments.push(seg);
        }
        rest = tail;
    }
    segments
        .into_par_iter()
        .for_each(|seg| seg.sort_by_key(|&o| events[o as usize].record_timestamp_ms));

    let mut imsis = Vec::new();
    let mut offsets = vec![0];
    let mut slot = HashMap::new();
    for i in 0..n_imsi {
        if counts[i + 1] > counts[i] {
            slot.insert(ImsiId(i as u32), imsis.len());
            imsis.push(ImsiId(i as u32));
            offsets.push(counts[i + 1]);
        }
    }
    TrajectoryIndex {
        imsis,
        offsets,
        ordinals,
        slot,
    }
}

/// A switch between two consecutive events of one IMSI on different cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition<F> {
    pub imsi: ImsiId,
    pub prev_ordinal: u32,
    pub next_ordinal: u32,
    pub prev_cell: CellIdx,
    pub next_cell: CellIdx,
    pub elapsed_s: F,
    pub cell_distance_km: F,
    /// Angle at the previous cell between its antenna azimuth and the direction of the next cell.
    pub theta_prev: Option<F>,
    /// Angle at the next cell between its antenna azimuth and the direction of the previous cell.
    pub theta_next: Option<F>,
}

/// Transitions along one IMSI's trajectory; `None` when the IMSI is not indexed.
pub fn transitions<F: Scalar>(
    idx: &TrajectoryIndex,
    imsi: ImsiId,
    ds: &EventDataset<F>,
) -> Option<Vec<Transition<F>>> {
    idx.sequence(imsi)
        .map(|seq| transitions_along(ds, seq, EarthModel::default()))
}

/// Transitions along an already sorted ordinal sequence of a single IMSI.
pub fn transitions_along<F: Scalar>(
    ds: &EventDataset<F>,
    seq: &[u32],
    earth: EarthModel<F>,
) -> Vec<Transition<F>> {
    let cells = ds.cells();
    let ms_per_s = F::lit(1000.0);
    seq.windows(2)
        .filter_map(|w| {
            let prev = ds.event(w[0]);
            let next = ds.event(w[1]);
            if prev.current_cell == next.current_cell {
                return None;
            }
            debug_assert_eq!(prev.imsi, next.imsi);
            let a = cells.site(prev.current_cell);
            let b = cells.site(next.current_cell);
            let elapsed_ms = next.record_timestamp_ms - prev.record_timestamp_ms;
            let theta = |az: Option<F>, from, to| {
                az.and_then(|az| bearing_deg(from, to).ok().map(|br| azimuth_offset_deg(az, br)))
            };
            Some(Transition {
                imsi: prev.imsi,
                prev_ordinal: w[0],
                next_ordinal: w[1],
                prev_cell: prev.current_cell,
                next_cell: next.current_cell,
                elapsed_s: F::lit(elapsed_ms as f64) / ms_per_s,
                cell_distance_km: haversine_km(a.position, b.position, earth),
                theta_prev: theta(a.antenna_azimuth, a.position, b.position),
                theta_next: theta(b.antenna_azimuth, b.position, a.position),
            })
        })
        .collect()
}
