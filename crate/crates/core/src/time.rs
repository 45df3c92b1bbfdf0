//! Integer-microsecond simulation clock.

use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use serde::{Deserialize, Serialize};

/// Microseconds since the start of a simulation run.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_micros(micros: u64) -> Self {
        SimTime(micros)
    }

    pub const fn from_millis(millis: u64) -> Self {
        SimTime(millis * 1_000)
    }

    pub const fn from_secs(secs: u64) -> Self {
        SimTime(secs * 1_000_000)
    }

    pub const fn micros(self) -> u64 {
        self.0
    }

    pub fn as_millis_f64(self) -> f64 {
        self.0 as f64 / 1_000.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1_000_000.0
    }

    /// Elapsed time since `earlier`. Panics if `earlier` is in the future.
    pub fn since(self, earlier: SimTime) -> Micros {
        assert!(earlier <= self, "since(): {earlier} is after {self}");
        Micros(self.0 - earlier.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

/// A duration in whole microseconds.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Micros(pub u64);

impl Micros {
    pub const ZERO: Micros = Micros(0);

    pub fn as_millis_f64(self) -> f64 {
        self.0 as f64 / 1_000.0
    }

    /// Rounds a quarter-microsecond count up to whole microseconds.
    pub fn from_quarter_micros_ceil(quarters: u64) -> Self {
        Micros(quarters.div_ceil(4))
    }
}

impl fmt::Display for Micros {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

impl Add<Micros> for SimTime {
    type Output = SimTime;
    fn add(self, rhs: Micros) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl AddAssign<Micros> for SimTime {
    fn add_assign(&mut self, rhs: Micros) {
        self.0 += rhs.0;
    }
}

impl Sub<Micros> for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: Micros) -> SimTime {
        SimTime(self.0.checked_sub(rhs.0).expect("time before zero"))
    }
}

impl Sub<SimTime> for SimTime {
    type Output = Micros;
    fn sub(self, rhs: SimTime) -> Micros {
        self.since(rhs)
    }
}

impl Add for Micros {
    type Output = Micros;
    fn add(self, rhs: Micros) -> Micros {
        Micros(self.0 + rhs.0)
    }
}

impl AddAssign for Micros {
    fn add_assign(&mut self, rhs: Micros) {
        self.0 += rhs.0;
    }
}

impl std::iter::Sum for Micros {
    fn sum<I: Iterator<Item = Micros>>(iter: I) -> Micros {
        Micros(iter.map(|m| m.0).sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quarter_micros_round_up() {
        assert_eq!(Micros::from_quarter_micros_ceil(0), Micros(0));
        assert_eq!(Micros::from_quarter_micros_ceil(4), Micros(1));
        assert_eq!(Micros::from_quarter_micros_ceil(2097), Micros(525));
    }

    #[test]
    fn arithmetic() {
        let t = SimTime::from_millis(7) + Micros(500);
        assert_eq!(t.micros(), 7_500);
        assert_eq!(t - SimTime::from_millis(7), Micros(500));
    }

    #[test]
    #[should_panic]
    fn negative_elapsed_panics() {
        let _ = SimTime::ZERO.since(SimTime::from_micros(1));
    }
}
