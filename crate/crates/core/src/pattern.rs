use std::fmt;

use serde::{Deserialize, Serialize};

/// Initial data written to every row of a bank.
///
/// `Checkerboard` writes `0x55` to even rows and `0xAA` to odd rows, so a
/// victim on an even row sits between `0xAA` aggressors. `Inverse` swaps the
/// two bytes. `Solid` writes `0xFF` everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataPattern {
    #[default]
    Checkerboard,
    Inverse,
    Solid,
}

impl DataPattern {
    pub fn row_byte(self, row: u32) -> u8 {
        let even = row % 2 == 0;
        match self {
            DataPattern::Checkerboard => {
                if even {
                    0x55
                } else {
                    0xAA
                }
            }
            DataPattern::Inverse => {
                if even {
                    0xAA
                } else {
                    0x55
                }
            }
            DataPattern::Solid => 0xFF,
        }
    }

    /// Bit stored in `cell` of `row`. Cells map onto the row byte LSB first.
    pub fn bit(self, row: u32, cell: usize) -> bool {
        (self.row_byte(row) >> (cell % 8)) & 1 == 1
    }

    /// The row encoded as packed 64-bit words, LSB first.
    pub fn row_words(self, row: u32, cells: usize) -> Vec<u64> {
        let byte = self.row_byte(row) as u64;
        let word = byte * 0x0101_0101_0101_0101;
        let n = cells.div_ceil(64);
        let mut words = vec![word; n];
        let tail = cells % 64;
        if tail != 0 {
            words[n - 1] &= (1u64 << tail) - 1;
        }
        words
    }
}

impl fmt::Display for DataPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataPattern::Checkerboard => "checkerboard",
            DataPattern::Inverse => "inverse",
            DataPattern::Solid => "solid",
        })
    }
}
