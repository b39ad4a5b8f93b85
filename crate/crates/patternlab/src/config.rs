//! Budgets and tunable constants. Every run records the values it used so
//! reports are self-describing.

use serde::{Deserialize, Serialize};

/// Enumeration and table caps. `PATTERNLAB_BUDGET` overrides the enumeration
/// cap at startup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    /// Max assignments a brute-force enumeration may visit.
    pub enumeration: u128,
    /// Max entries in any single elimination or edge table.
    pub table: usize,
    /// Max rectangles materialized in one mixture.
    pub mixture: usize,
    /// Max inner operations for one grid-norm evaluation.
    pub grid: u128,
    /// Max group order for Fourier transforms.
    pub fourier: usize,
}

impl Default for Budget {
    fn default() -> Self {
        let mut b = Budget {
            enumeration: 2_000_000_000,
            table: 1 << 27,
            mixture: 4_000_000,
            grid: 2_000_000_000,
            fourier: 1 << 20,
        };
        if let Ok(v) = std::env::var("PATTERNLAB_BUDGET") {
            if let Ok(n) = v.trim().parse::<u128>() {
                b.enumeration = n;
            }
        }
        b
    }
}

impl Budget {
    /// A small budget for tests that exercise the resource-limit paths.
    pub fn tiny() -> Self {
        Budget {
            enumeration: 1_000,
            table: 1_000,
            mixture: 100,
            grid: 10_000,
            fourier: 64,
        }
    }
}
