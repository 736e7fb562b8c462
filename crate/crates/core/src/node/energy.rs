//! Battery readings for the state monitor.

use std::path::PathBuf;
use std::sync::Mutex;

use crate::model::{step_battery, EnergyState, LoadState};

pub trait EnergySource: Send + Sync + std::fmt::Debug {
    fn battery_pct(&self) -> f64;
    /// Accounts for one timeslot of the given load. Sources backed by real
    /// hardware ignore this.
    fn advance_slot(&self, _load: LoadState) {}
}

/// A battery that follows the timeslot energy model.
#[derive(Debug)]
pub struct VirtualBattery {
    inner: Mutex<VirtualInner>,
}

#[derive(Debug)]
struct VirtualInner {
    state: EnergyState,
    solar: Vec<f64>,
    slot: usize,
}

impl VirtualBattery {
    /// `solar` repeats when the daemon outlives the trace; empty means no harvest.
    pub fn new(state: EnergyState, solar: Vec<f64>) -> Self {
        Self {
            inner: Mutex::new(VirtualInner { state, solar, slot: 0 }),
        }
    }

    pub fn with_pct(pct: f64) -> Self {
        let state = EnergyState {
            battery_charge: pct.clamp(0.0, 100.0),
            capacity: 100.0,
            solar_input: 0.0,
            compute_cost_per_ms: 0.0,
            network_cost_per_ms: 0.0,
        };
        Self::new(state, Vec::new())
    }

    pub fn set_pct(&self, pct: f64) {
        let mut inner = self.inner.lock().unwrap();
        inner.state.battery_charge = inner.state.capacity * pct.clamp(0.0, 100.0) / 100.0;
    }

    pub fn state(&self) -> EnergyState {
        self.inner.lock().unwrap().state
    }
}

impl EnergySource for VirtualBattery {
    fn battery_pct(&self) -> f64 {
        self.inner.lock().unwrap().state.battery_pct()
    }

    fn advance_slot(&self, load: LoadState) {
        let mut inner = self.inner.lock().unwrap();
        let kappa = match inner.solar.len() {
            0 => 0.0,
            len => inner.solar[inner.slot % len],
        };
        let consumption = inner.state.consumption(load).unwrap_or(0.0);
        let (next, _) = step_battery(&inner.state, kappa, consumption);
        inner.state = next;
        inner.slot += 1;
    }
}

/// Reads a percentage from a file kept current by an external fuel-gauge
/// script. The last good reading is kept when the file is missing or garbled.
#[derive(Debug)]
pub struct FileProbe {
    path: PathBuf,
    last: Mutex<f64>,
}

impl FileProbe {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            last: Mutex::new(0.0),
        }
    }
}

impl EnergySource for FileProbe {
    fn battery_pct(&self) -> f64 {
        let mut last = self.last.lock().unwrap();
        if let Some(v) = std::fs::read_to_string(&self.path)
            .ok()
            .and_then(|s| s.trim().parse::<f64>().ok())
            .filter(|v| v.is_finite())
        {
            *last = v.clamp(0.0, 100.0);
        }
        *last
    }
}
