//! Chain configurations, rate parameters, and the deterministic
//! single-event transition maps for TASEP and ASEP.

use crate::{Error, Result};

/// Largest chain length accepted anywhere in the crate.
pub const MAX_SITES: usize = 1024;
/// Largest chain length for which the full state space is enumerated.
pub const ENUM_CAP: usize = 20;

/// Occupation configuration of an n-site chain. Site 1 is the leftmost
/// site; its occupancy is printed first in the textual literal.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LatticeState {
    occ: Vec<u8>,
}

impl std::fmt::Debug for LatticeState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.to_literal())
    }
}

impl LatticeState {
    pub fn empty(n: usize) -> Result<Self> {
        if n == 0 || n > MAX_SITES {
            return Err(Error::BadConfig(format!("chain length {n} out of range")));
        }
        Ok(Self { occ: vec![0; n] })
    }

    pub fn full(n: usize) -> Result<Self> {
        let mut s = Self::empty(n)?;
        s.occ.fill(1);
        Ok(s)
    }

    /// Parses a string of `0`/`1` characters, site 1 first.
    pub fn from_literal(lit: &str) -> Result<Self> {
        if lit.is_empty() || lit.len() > MAX_SITES {
            return Err(Error::Parse(format!("bad state literal {lit:?}")));
        }
        let mut occ = Vec::with_capacity(lit.len());
        for c in lit.chars() {
            match c {
                '0' => occ.push(0),
                '1' => occ.push(1),
                _ => return Err(Error::Parse(format!("bad state literal {lit:?}"))),
            }
        }
        Ok(Self { occ })
    }

    pub fn to_literal(&self) -> String {
        self.occ.iter().map(|&b| if b == 1 { '1' } else { '0' }).collect()
    }

    pub fn n(&self) -> usize {
        self.occ.len()
    }

    /// Occupancy of site `k`, 1-based.
    pub fn get(&self, k: usize) -> u8 {
        self.occ[k - 1]
    }

    pub fn count_ones(&self) -> usize {
        self.occ.iter().map(|&b| b as usize).sum()
    }

    pub fn occupancy(&self) -> &[u8] {
        &self.occ
    }

    /// Canonical index with site 1 as the most significant bit, so the
    /// literal reads as the binary expansion of the index.
    pub fn index(&self) -> Result<usize> {
        let n = self.n();
        if n > ENUM_CAP {
            return Err(Error::TooLarge { n, cap: ENUM_CAP });
        }
        let mut i = 0usize;
        for &b in &self.occ {
            i = (i << 1) | b as usize;
        }
        Ok(i)
    }

    pub fn from_index(i: usize, n: usize) -> Result<Self> {
        if n == 0 || n > ENUM_CAP {
            return Err(Error::TooLarge { n, cap: ENUM_CAP });
        }
        if i >= (1usize << n) {
            return Err(Error::IndexOutOfRange { index: i as i64, n });
        }
        let mut occ = vec![0u8; n];
        for (k, slot) in occ.iter_mut().enumerate() {
            *slot = ((i >> (n - 1 - k)) & 1) as u8;
        }
        Ok(Self { occ })
    }

    /// Componentwise partial order used by the monotonicity property.
    pub fn le(&self, other: &Self) -> bool {
        self.occ.len() == other.occ.len()
            && self.occ.iter().zip(&other.occ).all(|(a, b)| a <= b)
    }

    /// Applies the hop map in place without validating `k`.
    /// Callers on hot paths must have validated `k` against the model once.
    #[inline]
    pub fn apply_event(&mut self, k: SiteIndex) {
        let n = self.occ.len();
        let v = k.0;
        if v == 0 {
            self.occ[0] = 1;
        } else if v == n as i32 {
            self.occ[n - 1] = 0;
        } else if v > 0 {
            let m = v as usize; // hop m -> m+1
            if self.occ[m - 1] == 1 && self.occ[m] == 0 {
                self.occ[m - 1] = 0;
                self.occ[m] = 1;
            }
        } else if v == -(n as i32 + 1) {
            self.occ[n - 1] = 1;
        } else {
            let m = (-v) as usize; // hop m+1 -> m
            if self.occ[m] == 1 && self.occ[m - 1] == 0 {
                self.occ[m] = 0;
                self.occ[m - 1] = 1;
            }
        }
    }
}

/// Which hop rules (and thus which site-index alphabet) are in force.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Model {
    Tasep,
    Asep,
}

/// Index of the clock at which a jump attempt occurs.
///
/// TASEP: 0 = entry at site 1, n = exit from site n, 0 < k < n = hop k -> k+1.
/// ASEP additionally: -(n+1) = entry at site n, -m for 1 <= m <= n-1 =
/// leftward hop m+1 -> m. The index -n (a left exit) is not part of the
/// model and is rejected.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct SiteIndex(pub i32);

impl SiteIndex {
    pub fn valid_for(self, n: usize, model: Model) -> bool {
        let v = self.0;
        if v >= 0 {
            v as usize <= n
        } else {
            match model {
                Model::Tasep => false,
                Model::Asep => v == -(n as i32 + 1) || (-v as usize) < n,
            }
        }
    }
}

/// Leftward rates for the ASEP extension. `left[m-1]` is the rate of the
/// clock with index `-m` (hop m+1 -> m), for m in 1..=n-1. The final entry
/// corresponds to the unused index -n and must be zero.
#[derive(Clone, Debug)]
pub struct AsepRates {
    pub right_entry: f64,
    pub left: Vec<f64>,
}

/// Boundary and interior hopping rates.
#[derive(Clone, Debug)]
pub struct RateConfig {
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
    pub interior: Vec<f64>,
    pub model: Model,
    pub asep: Option<AsepRates>,
}

impl RateConfig {
    pub fn tasep(n: usize, alpha: f64, beta: f64, interior: Vec<f64>) -> Result<Self> {
        let cfg = Self { n, alpha, beta, interior, model: Model::Tasep, asep: None };
        cfg.validate()?;
        Ok(cfg)
    }

    /// TASEP with all interior rates equal to `h`.
    pub fn uniform(n: usize, alpha: f64, beta: f64, h: f64) -> Result<Self> {
        Self::tasep(n, alpha, beta, vec![h; n.saturating_sub(1)])
    }

    pub fn asep(
        n: usize,
        alpha: f64,
        beta: f64,
        interior: Vec<f64>,
        rates: AsepRates,
    ) -> Result<Self> {
        let cfg = Self { n, alpha, beta, interior, model: Model::Asep, asep: Some(rates) };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n > MAX_SITES {
            return Err(Error::BadConfig(format!("chain length {} out of range", self.n)));
        }
        if self.interior.len() != self.n - 1 {
            return Err(Error::BadConfig(format!(
                "expected {} interior rates, got {}",
                self.n - 1,
                self.interior.len()
            )));
        }
        for &h in &self.interior {
            if !(h > 0.0) || !h.is_finite() {
                return Err(Error::InvalidRate(h));
            }
        }
        for &r in [self.alpha, self.beta].iter() {
            if r < 0.0 || !r.is_finite() {
                return Err(Error::InvalidRate(r));
            }
        }
        if self.alpha == 0.0 && self.beta == 0.0 {
            return Err(Error::BadConfig(
                "at least one of alpha, beta must be positive".into(),
            ));
        }
        match (self.model, &self.asep) {
            (Model::Tasep, None) => {}
            (Model::Asep, Some(a)) => {
                if a.left.len() != self.n {
                    return Err(Error::BadConfig(format!(
                        "expected {} leftward rates, got {}",
                        self.n,
                        a.left.len()
                    )));
                }
                if a.right_entry < 0.0 || !a.right_entry.is_finite() {
                    return Err(Error::InvalidRate(a.right_entry));
                }
                for &r in &a.left {
                    if r < 0.0 || !r.is_finite() {
                        return Err(Error::InvalidRate(r));
                    }
                }
                if a.left[self.n - 1] != 0.0 {
                    return Err(Error::BadConfig(
                        "the rate for index -n (left exit) is not part of the model; it must be 0".into(),
                    ));
                }
            }
            _ => {
                return Err(Error::BadConfig(
                    "ASEP rates must be present exactly when model = ASEP".into(),
                ));
            }
        }
        Ok(())
    }
}

/// The single-hop map f(x, k). Pure; the input is untouched.
pub fn hop(x: &LatticeState, k: SiteIndex, model: Model) -> Result<LatticeState> {
    if !k.valid_for(x.n(), model) {
        return Err(Error::IndexOutOfRange { index: k.0 as i64, n: x.n() });
    }
    let mut y = x.clone();
    y.apply_event(k);
    Ok(y)
}

/// All 2^n states of the chain, each exactly once, in canonical index order.
pub fn all_states(n: usize) -> Result<Vec<LatticeState>> {
    if n == 0 || n > ENUM_CAP {
        return Err(Error::TooLarge { n, cap: ENUM_CAP });
    }
    (0..(1usize << n)).map(|i| LatticeState::from_index(i, n)).collect()
}

/// The hop map acting on canonical state indices; O(1) bit arithmetic.
/// `k` must already be valid for (n, model).
#[inline]
pub fn hop_index(u: usize, n: usize, k: SiteIndex) -> usize {
    let v = k.0;
    if v == 0 {
        u | (1 << (n - 1))
    } else if v == n as i32 {
        u & !1
    } else if v > 0 {
        let hi = 1usize << (n - v as usize); // site v
        let lo = hi >> 1; // site v+1
        if u & hi != 0 && u & lo == 0 {
            (u ^ hi) | lo
        } else {
            u
        }
    } else if v == -(n as i32 + 1) {
        u | 1
    } else {
        let m = (-v) as usize;
        let hi = 1usize << (n - m); // site m
        let lo = hi >> 1; // site m+1
        if u & lo != 0 && u & hi == 0 {
            (u ^ lo) | hi
        } else {
            u
        }
    }
}
