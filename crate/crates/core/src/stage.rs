use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Scored sleep stage. Legacy stage 4 is folded into [`SleepStage::N3`].
///
/// The discriminant is the canonical class index used by the network output,
/// confusion matrices and activation profiles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SleepStage {
    N1 = 0,
    N2 = 1,
    N3 = 2,
    R = 3,
    W = 4,
}

impl SleepStage {
    pub const COUNT: usize = 5;
    pub const ALL: [SleepStage; 5] = [
        SleepStage::N1,
        SleepStage::N2,
        SleepStage::N3,
        SleepStage::R,
        SleepStage::W,
    ];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<SleepStage> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            SleepStage::N1 => "N1",
            SleepStage::N2 => "N2",
            SleepStage::N3 => "N3",
            SleepStage::R => "R",
            SleepStage::W => "W",
        }
    }

    pub fn is_sleep(self) -> bool {
        self != SleepStage::W
    }
}

impl fmt::Display for SleepStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SleepStage {
    type Err = String;

    /// Parses the canonical short names written by this crate.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "N1" => Ok(SleepStage::N1),
            "N2" => Ok(SleepStage::N2),
            "N3" => Ok(SleepStage::N3),
            "R" => Ok(SleepStage::R),
            "W" => Ok(SleepStage::W),
            other => Err(format!("not a sleep stage: {other:?}")),
        }
    }
}
