use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

/// Optimization direction of a study objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Minimize,
    Maximize,
}

impl Direction {
    /// Maps a value onto the minimization scale.
    #[inline]
    pub fn adjust(self, value: f64) -> f64 {
        match self {
            Direction::Minimize => value,
            Direction::Maximize => -value,
        }
    }

    /// Strictly better.
    #[inline]
    pub fn better(self, a: f64, b: f64) -> bool {
        self.adjust(a) < self.adjust(b)
    }

    /// Strictly worse.
    #[inline]
    pub fn worse(self, a: f64, b: f64) -> bool {
        self.adjust(a) > self.adjust(b)
    }

    /// Ordering with the best value first.
    pub fn cmp_best_first(self, a: f64, b: f64) -> Ordering {
        self.adjust(a).total_cmp(&self.adjust(b))
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Minimize => "minimize",
            Direction::Maximize => "maximize",
        }
    }
}
