use std::fmt;

use serde::{Deserialize, Serialize};

/// AASM sleep stage with the integer coding used throughout the model.
///
/// N3 and the legacy stages S3/S4 share code 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum StageLabel {
    N3 = 0,
    N2 = 1,
    N1 = 2,
    R = 3,
    W = 4,
}

pub const NUM_STAGES: usize = 5;

impl StageLabel {
    /// All stages in code order.
    pub const ALL: [StageLabel; NUM_STAGES] = [
        StageLabel::N3,
        StageLabel::N2,
        StageLabel::N1,
        StageLabel::R,
        StageLabel::W,
    ];

    /// Row order used when printing confusion matrices (W, R, N1, N2, N3).
    pub const DISPLAY_ROWS: [StageLabel; NUM_STAGES] = [
        StageLabel::W,
        StageLabel::R,
        StageLabel::N1,
        StageLabel::N2,
        StageLabel::N3,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_code(code: u8) -> Option<StageLabel> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            StageLabel::N3 => "N3",
            StageLabel::N2 => "N2",
            StageLabel::N1 => "N1",
            StageLabel::R => "R",
            StageLabel::W => "W",
        }
    }
}

impl fmt::Display for StageLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
