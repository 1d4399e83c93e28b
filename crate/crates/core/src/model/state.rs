use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Monotone index assigned to every arriving device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeviceId(pub u64);

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// A newly arrived device and its task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: DeviceId,
    pub segments: u32,
    pub cycles_per_bit: f64,
    pub cpu_freq_hz: f64,
    pub pathloss: f64,
    pub arrival_frame: u64,
}

/// A device whose task is being uploaded to the edge server.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeEntry {
    pub device_id: DeviceId,
    pub pathloss: f64,
    pub queue_segments: u32,
}

/// Edge-computing devices in arrival (FCFS) order with their pathloss and
/// remaining uplink queue. This is all the value function needs to know.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CompactState {
    entries: Vec<EdgeEntry>,
}

impl CompactState {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Checks FCFS order (strictly increasing ids), nonzero queues and
    /// positive pathloss.
    pub fn new(entries: Vec<EdgeEntry>) -> Result<Self> {
        if entries.windows(2).any(|w| w[0].device_id >= w[1].device_id) {
            return Err(Error::InvalidState("edge entries must be in strictly increasing id order".into()));
        }
        if let Some(e) = entries.iter().find(|e| e.queue_segments == 0) {
            return Err(Error::InvalidState(format!("edge entry {} has an empty queue", e.device_id)));
        }
        if let Some(e) = entries.iter().find(|e| !(e.pathloss.is_finite() && e.pathloss > 0.0)) {
            return Err(Error::InvalidState(format!("edge entry {} has non-positive pathloss", e.device_id)));
        }
        Ok(Self { entries })
    }

    /// Builds a state from `(pathloss, queue)` pairs, numbering devices 0, 1, ...
    pub fn from_queues(items: &[(f64, u32)]) -> Result<Self> {
        Self::new(
            items
                .iter()
                .enumerate()
                .map(|(i, &(pathloss, queue_segments))| EdgeEntry {
                    device_id: DeviceId(i as u64),
                    pathloss,
                    queue_segments,
                })
                .collect(),
        )
    }

    pub fn entries(&self) -> &[EdgeEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn head(&self) -> Option<&EdgeEntry> {
        self.entries.first()
    }

    pub fn position(&self, id: DeviceId) -> Option<usize> {
        self.entries.iter().position(|e| e.device_id == id)
    }

    pub fn max_id(&self) -> Option<DeviceId> {
        self.entries.last().map(|e| e.device_id)
    }

    /// Appends at the tail. The id must exceed every id already present.
    pub fn push(&mut self, entry: EdgeEntry) -> Result<()> {
        if self.max_id().is_some_and(|m| m >= entry.device_id) {
            return Err(Error::InvalidState(format!("{} would break FCFS order", entry.device_id)));
        }
        if entry.queue_segments == 0 {
            return Err(Error::InvalidState(format!("edge entry {} has an empty queue", entry.device_id)));
        }
        self.entries.push(entry);
        Ok(())
    }

    /// Removes `segments` from the queue at `index`, dropping the entry when
    /// it empties. Returns the number of segments actually removed.
    pub(crate) fn drain_at(&mut self, index: usize, segments: u32) -> (u32, bool) {
        let entry = &mut self.entries[index];
        let sent = segments.min(entry.queue_segments);
        entry.queue_segments -= sent;
        if entry.queue_segments == 0 {
            self.entries.remove(index);
            (sent, true)
        } else {
            (sent, false)
        }
    }
}

/// A device computing its task on its own CPU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalEntry {
    pub device_id: DeviceId,
    /// Remaining input, in segments; drains by `f·T_s/(ℓ·b_s)` per frame.
    pub queue_segments: f64,
    pub cpu_freq_hz: f64,
    pub cycles_per_bit: f64,
    /// Frames of computation left including the current one. The device
    /// leaves when this reaches zero, which is exactly when the real-valued
    /// queue first drops to (numerically) zero.
    pub frames_left: u32,
}

/// Everything the scheduler observes at the start of a frame: the compact
/// state, the current fading of every edge device, the local computing
/// devices, and the new arrival if there is one.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FullState {
    pub compact: CompactState,
    /// `|h|²` for each edge entry, aligned with `compact.entries()`.
    fading: Vec<f64>,
    pub locals: Vec<LocalEntry>,
    pub arrival: Option<Task>,
}

impl FullState {
    pub fn new(compact: CompactState, fading: Vec<f64>, locals: Vec<LocalEntry>, arrival: Option<Task>) -> Result<Self> {
        if fading.len() != compact.len() {
            return Err(Error::InvalidState(format!(
                "{} fading values for {} edge entries",
                fading.len(),
                compact.len()
            )));
        }
        if fading.iter().any(|h| !(h.is_finite() && *h >= 0.0)) {
            return Err(Error::InvalidState("fading values must be finite and >= 0".into()));
        }
        Ok(Self {
            compact,
            fading,
            locals,
            arrival,
        })
    }

    /// A state with the given edge set, fading drawn by `fading_of`, no local
    /// devices and no arrival.
    pub fn with_fading(compact: CompactState, mut fading_of: impl FnMut(DeviceId) -> f64) -> Self {
        let fading = compact.entries().iter().map(|e| fading_of(e.device_id)).collect();
        Self {
            compact,
            fading,
            locals: Vec::new(),
            arrival: None,
        }
    }

    pub fn fading(&self) -> &[f64] {
        &self.fading
    }

    pub fn fading_of(&self, id: DeviceId) -> Option<f64> {
        self.compact.position(id).map(|i| self.fading[i])
    }

    pub fn has_arrival(&self) -> bool {
        self.arrival.is_some()
    }

    /// Largest id seen anywhere in the state.
    pub fn max_id(&self) -> Option<DeviceId> {
        let edge = self.compact.max_id();
        let local = self.locals.iter().map(|l| l.device_id).max();
        let new = self.arrival.as_ref().map(|t| t.id);
        edge.max(local).max(new)
    }
}

/// Scheduling decision for one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub selected_device: Option<DeviceId>,
    pub transmit_power_w: f64,
    /// `true` offloads the new arrival to the edge; ignored without arrival.
    pub offload: bool,
}

impl Action {
    pub fn idle(offload: bool) -> Self {
        Self {
            selected_device: None,
            transmit_power_w: 0.0,
            offload,
        }
    }

    pub fn validate_for(&self, state: &FullState) -> Result<()> {
        if !(self.transmit_power_w.is_finite() && self.transmit_power_w >= 0.0) {
            return Err(Error::InvalidAction(format!(
                "transmit power must be finite and >= 0, got {}",
                self.transmit_power_w
            )));
        }
        match self.selected_device {
            None if self.transmit_power_w != 0.0 => {
                Err(Error::InvalidAction("nonzero power without a selected device".into()))
            }
            Some(id) if state.compact.position(id).is_none() => Err(Error::NotInEdgeSet(id)),
            _ => Ok(()),
        }
    }
}
