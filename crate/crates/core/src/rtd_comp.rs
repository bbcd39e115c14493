//! RTD range conversion and the per-cell compensation queues.
//!
//! Each cell keeps the compensation samples of its most recent `n` incoming
//! transitions. The value fed back for detection is the `(m+1)`-th highest
//! sample, read before the new sample is pushed, so up to `m` anomalous
//! samples per window cannot inflate the compensation.

use std::collections::{BTreeMap, VecDeque};
use std::cmp::Ordering;
use std::io::Write;

use thiserror::Error;

use crate::event_model::{CellCatalog, CellIdx};
use crate::scalar::Scalar;
use crate::trajectory::Transition;

/// LTE basic time unit, `1 / (15000 * 2048)` seconds.
pub const LTE_TS_SECONDS: f64 = 1.0 / (15000.0 * 2048.0);
/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT_M_S: f64 = 299_792_458.0;
/// Compensation returned by a queue that has not warmed up yet, km.
pub const DEFAULT_INIT_COMP_KM: f64 = 20.0;

/// Range covered by one RTD unit, in km (about 9.76 m).
pub fn rtd_unit_km<F: Scalar>() -> F {
    F::lit(LTE_TS_SECONDS * SPEED_OF_LIGHT_M_S / 1000.0)
}

/// UE-to-cell range implied by an RTD reading, in km.
pub fn rtd_to_km<F: Scalar>(rtd: u32) -> F {
    F::lit(rtd as f64) * rtd_unit_km::<F>()
}

/// Nearest RTD reading for a range in km (negative ranges clamp to 0).
pub fn km_to_rtd<F: Scalar>(km: F) -> u32 {
    let units = (km / rtd_unit_km::<F>()).round();
    units
        .max(F::zero())
        .min(F::lit(u32::MAX as f64))
        .to_u32()
        .unwrap_or(0)
}

/// RTD range projected onto the cell-to-cell direction; zero if either input is missing.
pub fn rtd_projection_km<F: Scalar>(rtd: Option<u32>, theta_deg: Option<F>) -> F {
    match (rtd, theta_deg) {
        (Some(r), Some(theta)) => rtd_to_km::<F>(r) * (F::PI() * theta / F::lit(180.0)).cos(),
        _ => F::zero(),
    }
}

/// New compensation sample for a transition:
/// cell distance minus the longest plausible UE movement minus both RTD projections.
///
/// `v_max_kmh` bounds UE movement over the elapsed time. The result may be negative.
pub fn compute_c_in<F: Scalar>(tr: &Transition<F>, proj_prev_km: F, proj_next_km: F, v_max_kmh: F) -> F {
    let ue_max_km = v_max_kmh * tr.elapsed_s / F::lit(3600.0);
    tr.cell_distance_km - ue_max_km - proj_next_km - proj_prev_km
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QueueError {
    #[error("queue capacity must be at least 1")]
    ZeroCapacity,
    #[error("tolerance m = {tolerance} must be below capacity n = {capacity}")]
    Tolerance { capacity: usize, tolerance: usize },
    #[error("initial compensation must be finite, got {0}")]
    InitValue(f64),
}

/// Capacity `n`, tolerance `m` and warm-up value shared by every cell queue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueueSettings<F> {
    capacity: usize,
    tolerance: usize,
    init_km: F,
}

impl<F: Scalar> QueueSettings<F> {
    pub fn new(capacity: usize, tolerance: usize, init_km: F) -> Result<Self, QueueError> {
        if capacity == 0 {
            return Err(QueueError::ZeroCapacity);
        }
        if tolerance >= capacity {
            return Err(QueueError::Tolerance { capacity, tolerance });
        }
        if !init_km.is_finite() {
            return Err(QueueError::InitValue(init_km.to_f64_lossy()));
        }
        Ok(Self {
            capacity,
            tolerance,
            init_km,
        })
    }

    /// `n = 400_000, m = 1` (anomaly ratio 2.5e-6), 20 km warm-up value.
    pub fn production() -> Self {
        Self::new(400_000, 1, F::lit(DEFAULT_INIT_COMP_KM)).expect("valid production settings")
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn tolerance(&self) -> usize {
        self.tolerance
    }

    pub fn init_km(&self) -> F {
        self.init_km
    }
}

impl<F: Scalar> Default for QueueSettings<F> {
    fn default() -> Self {
        Self::production()
    }
}

#[derive(Debug, Clone, Copy)]
struct Key<F>(F);

impl<F: Scalar> PartialEq for Key<F> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<F: Scalar> Eq for Key<F> {}

impl<F: Scalar> PartialOrd for Key<F> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<F: Scalar> Ord for Key<F> {
    fn cmp(&self, other: &Self) -> Ordering {
        // NaN never enters the queue
        self.0.partial_cmp(&other.0).unwrap_or(Ordering::Equal)
    }
}

/// Bounded FIFO of compensation samples with an order-statistic view.
#[derive(Debug, Clone)]
pub struct CompensationQueue<F> {
    cell: CellIdx,
    settings: QueueSettings<F>,
    fifo: VecDeque<F>,
    sorted: BTreeMap<Key<F>, u32>,
}

impl<F: Scalar> CompensationQueue<F> {
    pub fn new(cell: CellIdx, settings: QueueSettings<F>) -> Self {
        Self {
            cell,
            settings,
            fifo: VecDeque::new(),
            sorted: BTreeMap::new(),
        }
    }

    pub fn cell(&self) -> CellIdx {
        self.cell
    }

    pub fn len(&self) -> usize {
        self.fifo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fifo.is_empty()
    }

    /// Samples oldest first.
    pub fn samples(&self) -> impl Iterator<Item = F> + '_ {
        self.fifo.iter().copied()
    }

    /// The `(m+1)`-th highest sample, or the warm-up value while fewer than `m+1` samples exist.
    pub fn read_c_out(&self) -> F {
        let m = self.settings.tolerance;
        if self.fifo.len() <= m {
            return self.settings.init_km;
        }
        let mut skip = m;
        for (key, &count) in self.sorted.iter().rev() {
            if (count as usize) > skip {
                return key.0;
            }
            skip -= count as usize;
        }
        unreachable!("queue holds more than m samples")
    }

    /// Appends a sample, evicting the oldest once the queue holds `n`. NaN samples are dropped.
    pub fn push(&mut self, c_in: F) {
        debug_assert!(!c_in.is_nan(), "NaN compensation sample");
        if c_in.is_nan() {
            return;
        }
        if self.fifo.len() == self.settings.capacity {
            if let Some(old) = self.fifo.pop_front() {
                let key = Key(old);
                match self.sorted.get_mut(&key) {
                    Some(c) if *c > 1 => *c -= 1,
                    _ => {
                        self.sorted.remove(&key);
                    }
                }
            }
        }
        self.fifo.push_back(c_in);
        *self.sorted.entry(Key(c_in)).or_insert(0) += 1;
    }
}

/// One lazily created queue per cell.
#[derive(Debug, Clone)]
pub struct CompensationStore<F> {
    settings: QueueSettings<F>,
    queues: Vec<Option<CompensationQueue<F>>>,
    live: usize,
}

impl<F: Scalar> CompensationStore<F> {
    pub fn new(settings: QueueSettings<F>) -> Self {
        Self {
            settings,
            queues: Vec::new(),
            live: 0,
        }
    }

    pub fn settings(&self) -> &QueueSettings<F> {
        &self.settings
    }

    pub fn queue(&self, cell: CellIdx) -> Option<&CompensationQueue<F>> {
        self.queues.get(cell.0 as usize).and_then(Option::as_ref)
    }

    /// Compensation fed back for `cell`; a cell never pushed to reads the warm-up value.
    pub fn read_c_out(&self, cell: CellIdx) -> F {
        self.queue(cell)
            .map_or(self.settings.init_km, CompensationQueue::read_c_out)
    }

    pub fn push(&mut self, cell: CellIdx, c_in: F) {
        let i = cell.0 as usize;
        if i >= self.queues.len() {
            self.queues.resize_with(i + 1, || None);
        }
        let slot = &mut self.queues[i];
        if slot.is_none() {
            *slot = Some(CompensationQueue::new(cell, self.settings));
            self.live += 1;
        }
        slot.as_mut().expect("just created").push(c_in);
    }

    /// Number of cells that own a queue.
    pub fn cell_count(&self) -> usize {
        self.live
    }

    pub fn queues(&self) -> impl Iterator<Item = &CompensationQueue<F>> {
        self.queues.iter().flatten()
    }

    /// Debug dump: one CSV row per cell, `cell_id` followed by its samples oldest first.
    pub fn write_snapshot(&self, mut out: impl Write, cells: &CellCatalog<F>) -> std::io::Result<()> {
        writeln!(out, "cell_id,samples")?;
        for q in self.queues() {
            write!(out, "{}", cells.site(q.cell()).cell_id)?;
            for s in q.samples() {
                write!(out, ",{s}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}
