use std::fmt;

use serde::{Deserialize, Serialize};

/// The three slip states the classifier distinguishes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SlipState {
    NoSlip = 0,
    Incipient = 1,
    Gross = 2,
}

impl SlipState {
    pub const ALL: [SlipState; 3] = [SlipState::NoSlip, SlipState::Incipient, SlipState::Gross];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            SlipState::NoSlip => "no_slip",
            SlipState::Incipient => "incipient",
            SlipState::Gross => "gross",
        }
    }
}

impl fmt::Display for SlipState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
