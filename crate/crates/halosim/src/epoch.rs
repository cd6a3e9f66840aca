//! Continuous simulation time.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::{Add, AddAssign, Sub};

/// An instant on a single continuous time scale, stored as seconds past a
/// fixed reference epoch. No leap seconds, no scale offsets: time is one
/// real line and durations are plain seconds.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Epoch(f64);

impl Epoch {
    pub const fn from_secs(t: f64) -> Self {
        Epoch(t)
    }

    pub const fn as_secs(&self) -> f64 {
        self.0
    }

    /// Seconds elapsed from `earlier` to `self` (negative if `self` precedes it).
    pub fn since(&self, earlier: Epoch) -> f64 {
        self.0 - earlier.0
    }
}

impl Add<f64> for Epoch {
    type Output = Epoch;
    fn add(self, dt_secs: f64) -> Epoch {
        Epoch(self.0 + dt_secs)
    }
}

impl AddAssign<f64> for Epoch {
    fn add_assign(&mut self, dt_secs: f64) {
        self.0 += dt_secs;
    }
}

impl Sub<Epoch> for Epoch {
    type Output = f64;
    fn sub(self, other: Epoch) -> f64 {
        self.0 - other.0
    }
}

impl fmt::Display for Epoch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} s", self.0)
    }
}
