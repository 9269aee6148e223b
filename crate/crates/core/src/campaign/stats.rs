use serde::{Deserialize, Serialize};

/// z-score of a two-sided 95% normal interval.
pub const Z95: f64 = 1.96;

/// A count of events out of `n` trials.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Proportion {
    pub hits: u64,
    pub n: u64,
}

impl Proportion {
    pub fn new(hits: u64, n: u64) -> Self {
        Proportion { hits, n }
    }

    pub fn rate(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.hits as f64 / self.n as f64
        }
    }

    pub fn ci95(&self) -> f64 {
        ci95_half_width(self.rate(), self.n)
    }

    pub fn interval(&self) -> (f64, f64) {
        let (p, h) = (self.rate(), self.ci95());
        (p - h, p + h)
    }
}

/// Normal-approximation half-width `1.96 * sqrt(p (1 - p) / n)`.
pub fn ci95_half_width(p: f64, n: u64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    Z95 * (p * (1.0 - p) / n as f64).sqrt()
}

/// True when the two 95% intervals do not touch.
pub fn intervals_disjoint(a: &Proportion, b: &Proportion) -> bool {
    let (alo, ahi) = a.interval();
    let (blo, bhi) = b.interval();
    ahi < blo || bhi < alo
}
