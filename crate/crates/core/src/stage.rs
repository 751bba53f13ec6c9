use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// AASM sleep stage with its integer code (W=0, N1=1, N2=2, N3=3, R=4).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Stage {
    W = 0,
    N1 = 1,
    N2 = 2,
    N3 = 3,
    R = 4,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::W, Stage::N1, Stage::N2, Stage::N3, Stage::R];

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Stage::W),
            1 => Ok(Stage::N1),
            2 => Ok(Stage::N2),
            3 => Ok(Stage::N3),
            4 => Ok(Stage::R),
            c => Err(Error::invalid(format!("invalid stage code {c}"))),
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn is_rem(self) -> bool {
        self == Stage::R
    }

    pub fn is_sleep(self) -> bool {
        self != Stage::W
    }

    pub fn label(self) -> &'static str {
        match self {
            Stage::W => "W",
            Stage::N1 => "N1",
            Stage::N2 => "N2",
            Stage::N3 => "N3",
            Stage::R => "R",
        }
    }
}

impl TryFrom<u8> for Stage {
    type Error = Error;
    fn try_from(c: u8) -> Result<Self> {
        Stage::from_code(c)
    }
}

impl From<Stage> for u8 {
    fn from(s: Stage) -> u8 {
        s.code()
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Stage {
    type Err = Error;

    /// Accepts `W`, `N1`, `N2`, `N3`, `R`/`REM` (any case) or the codes 0–4.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        match t.to_ascii_uppercase().as_str() {
            "W" | "WAKE" => Ok(Stage::W),
            "N1" => Ok(Stage::N1),
            "N2" => Ok(Stage::N2),
            "N3" => Ok(Stage::N3),
            "R" | "REM" => Ok(Stage::R),
            other => other
                .parse::<u8>()
                .map_err(|_| Error::invalid(format!("unrecognized stage {t:?}")))
                .and_then(Stage::from_code),
        }
    }
}
