//! Exact finite-state Markov analysis: generator construction, distribution
//! propagation by uniformization, stationary measures, total-variation
//! distances, mixing times, and exact coalescence probabilities of the
//! grand coupling.

use crate::clocks::ClockLaw;
use crate::coupling::JumpSystem;
use crate::lattice::{LatticeState, SiteIndex};
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use std::collections::HashMap;

/// Cap on the single-chain state-space dimension (n = 12 for chains).
pub const GENERATOR_DIM_CAP: usize = 4096;
/// Cap on the base dimension of the set-valued coalescence chain (n = 5).
pub const COALESCENCE_DIM_CAP: usize = 32;

/// Sparse generator in column convention: `cols[j]` holds the positive
/// off-diagonal rates (i, q_ij) of jumps j -> i, `diag[j]` the negative
/// column sum. The distribution evolves as d/dt mu = Q mu.
#[derive(Clone, Debug)]
pub struct GeneratorMatrix {
    dim: usize,
    cols: Vec<Vec<(usize, f64)>>,
    diag: Vec<f64>,
}

impl GeneratorMatrix {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn column(&self, j: usize) -> &[(usize, f64)] {
        &self.cols[j]
    }

    /// Q v in place conventions: out[i] = sum_j Q[i][j] v[j].
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = v.iter().zip(&self.diag).map(|(x, d)| x * d).collect();
        for (j, col) in self.cols.iter().enumerate() {
            let vj = v[j];
            if vj != 0.0 {
                for &(i, rate) in col {
                    out[i] += rate * vj;
                }
            }
        }
        out
    }

    fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for j in 0..self.dim {
            m[(j, j)] = self.diag[j];
            for &(i, rate) in &self.cols[j] {
                m[(i, j)] += rate;
            }
        }
        m
    }
}

/// Builds the master-equation generator of a jump system. Identity-branch
/// events contribute nothing.
pub fn build_generator<S: JumpSystem>(sys: &S) -> Result<GeneratorMatrix> {
    let dim = sys.num_states();
    if dim > GENERATOR_DIM_CAP {
        return Err(Error::TooLarge { n: dim, cap: GENERATOR_DIM_CAP });
    }
    let mut cols: Vec<HashMap<usize, f64>> = vec![HashMap::new(); dim];
    let mut diag = vec![0.0; dim];
    for &(site, lam) in sys.law().clocks() {
        if lam == 0.0 {
            continue;
        }
        for j in 0..dim {
            let i = sys.apply(j, site);
            if i != j {
                *cols[j].entry(i).or_insert(0.0) += lam;
                diag[j] -= lam;
            }
        }
    }
    let cols = cols
        .into_iter()
        .map(|m| {
            let mut v: Vec<(usize, f64)> = m.into_iter().collect();
            v.sort_unstable_by_key(|&(i, _)| i);
            v
        })
        .collect();
    Ok(GeneratorMatrix { dim, cols, diag })
}

pub fn delta(dim: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[i] = 1.0;
    v
}

pub fn uniform_distribution(dim: usize) -> Vec<f64> {
    vec![1.0 / dim as f64; dim]
}

/// Checks the distribution-vector invariants and clamps tiny negatives.
pub fn normalize_distribution(v: &mut [f64]) -> Result<()> {
    let mut sum = 0.0;
    for x in v.iter_mut() {
        if *x < -1e-12 || !x.is_finite() {
            return Err(Error::NonFinite);
        }
        if *x < 0.0 {
            *x = 0.0;
        }
        sum += *x;
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::BadConfig(format!("distribution mass {sum} != 1")));
    }
    Ok(())
}

/// Solves d/dt mu = Q mu to time t by uniformization. Time is chunked so
/// the Poisson weights never underflow; the truncation tail per chunk is
/// below 1e-13.
pub fn propagate(q: &GeneratorMatrix, mu0: &[f64], t: f64) -> Result<Vec<f64>> {
    if mu0.len() != q.dim {
        return Err(Error::DimensionMismatch(mu0.len(), q.dim));
    }
    if t < 0.0 {
        return Err(Error::NegativeTime(t));
    }
    let rate = q.diag.iter().cloned().fold(0.0f64, |m, d| m.max(-d));
    if rate == 0.0 || t == 0.0 {
        return Ok(mu0.to_vec());
    }
    let mut mu = mu0.to_vec();
    let mut remaining = t;
    while remaining > 0.0 {
        let dt = remaining.min(40.0 / rate);
        remaining -= dt;
        let lt = rate * dt;
        // P = I + Q/rate is stochastic; mu_t = sum_m pois(m; lt) P^m mu.
        let mut out = vec![0.0; q.dim];
        let mut v = mu.clone();
        let mut weight = (-lt).exp();
        let mut cum = weight;
        let mut m = 0usize;
        loop {
            for (o, x) in out.iter_mut().zip(&v) {
                *o += weight * x;
            }
            if cum >= 1.0 - 1e-13 || m > 100_000 {
                break;
            }
            let qv = q.apply(&v);
            for (x, dq) in v.iter_mut().zip(&qv) {
                *x += dq / rate;
            }
            m += 1;
            weight *= lt / m as f64;
            cum += weight;
        }
        mu = out;
    }
    for x in mu.iter_mut() {
        if *x < 0.0 && *x > -1e-12 {
            *x = 0.0;
        }
    }
    Ok(mu)
}

/// Stationary measure by a dense linear solve: the last balance equation is
/// replaced by the normalization row. Fails with `Singular` when the solve
/// breaks down or the residual ||Q pi||_inf exceeds 1e-10.
pub fn stationary(q: &GeneratorMatrix) -> Result<Vec<f64>> {
    let dim = q.dim;
    let mut a = q.to_dense();
    for j in 0..dim {
        a[(dim - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(dim);
    b[dim - 1] = 1.0;
    let lu = a.lu();
    let pi = lu.solve(&b).ok_or(Error::Singular)?;
    let pi: Vec<f64> = pi.iter().cloned().collect();
    let residual = q
        .apply(&pi)
        .iter()
        .cloned()
        .fold(0.0f64, |m, r| m.max(r.abs()));
    if residual > 1e-10 || pi.iter().any(|&x| x < -1e-9) {
        return Err(Error::Singular);
    }
    let mut pi = pi;
    for x in pi.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    Ok(pi)
}

/// Total-variation distance (1/2) sum |mu_i - nu_i|.
pub fn tv_distance(mu: &[f64], nu: &[f64]) -> Result<f64> {
    if mu.len() != nu.len() {
        return Err(Error::DimensionMismatch(mu.len(), nu.len()));
    }
    Ok(0.5 * mu.iter().zip(nu).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Worst-case TV distance to the stationary measure at time t.
pub fn worst_case_tv(q: &GeneratorMatrix, pi: &[f64], t: f64) -> Result<f64> {
    let mut worst = 0.0f64;
    for i in 0..q.dim {
        let mu = propagate(q, &delta(q.dim, i), t)?;
        worst = worst.max(tv_distance(&mu, pi)?);
    }
    Ok(worst)
}

/// Infimal t with max_x ||P_x^t - pi||_TV < epsilon, found by bisection to
/// absolute tolerance 1e-3.
pub fn mixing_time(q: &GeneratorMatrix, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::BadConfig(format!("epsilon {epsilon} must lie in (0,1)")));
    }
    let pi = stationary(q)?;
    if worst_case_tv(q, &pi, 0.0)? < epsilon {
        return Ok(0.0);
    }
    let mut hi = 1.0;
    while worst_case_tv(q, &pi, hi)? >= epsilon {
        hi *= 2.0;
        if hi > 1e9 {
            return Err(Error::BadConfig("mixing time exceeds 1e9".into()));
        }
    }
    let mut lo = if hi > 1.0 { hi / 2.0 } else { 0.0 };
    while hi - lo > 1e-3 {
        let mid = 0.5 * (lo + hi);
        if worst_case_tv(q, &pi, mid)? < epsilon {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Exact probability that the grand coupling has collapsed the full state
/// space to a singleton by time t, computed on the set-valued Markov chain
/// whose states are the subsets of X reachable from X under the event maps.
pub fn coalescence_exact<S: JumpSystem>(sys: &S, t: f64) -> Result<f64> {
    let dim = sys.num_states();
    if dim > COALESCENCE_DIM_CAP {
        return Err(Error::TooLarge { n: dim, cap: COALESCENCE_DIM_CAP });
    }
    if t < 0.0 {
        return Err(Error::NegativeTime(t));
    }
    let full: u64 = if dim == 64 { u64::MAX } else { (1u64 << dim) - 1 };
    let image = |mask: u64, k: SiteIndex| -> u64 {
        let mut out = 0u64;
        let mut rest = mask;
        while rest != 0 {
            let i = rest.trailing_zeros() as usize;
            rest &= rest - 1;
            out |= 1u64 << sys.apply(i, k);
        }
        out
    };
    // Reachable-subset enumeration from the full set.
    let mut ids: HashMap<u64, usize> = HashMap::new();
    ids.insert(full, 0);
    let mut masks = vec![full];
    let mut frontier = vec![full];
    let clocks: Vec<(SiteIndex, f64)> = sys
        .law()
        .clocks()
        .iter()
        .cloned()
        .filter(|&(_, lam)| lam > 0.0)
        .collect();
    while let Some(mask) = frontier.pop() {
        for &(site, _) in &clocks {
            let m2 = image(mask, site);
            if !ids.contains_key(&m2) {
                ids.insert(m2, masks.len());
                masks.push(m2);
                frontier.push(m2);
            }
        }
    }
    let sdim = masks.len();
    let mut cols: Vec<HashMap<usize, f64>> = vec![HashMap::new(); sdim];
    let mut diag = vec![0.0; sdim];
    for (j, &mask) in masks.iter().enumerate() {
        for &(site, lam) in &clocks {
            let m2 = image(mask, site);
            if m2 != mask {
                let i = ids[&m2];
                *cols[j].entry(i).or_insert(0.0) += lam;
                diag[j] -= lam;
            }
        }
    }
    let q = GeneratorMatrix {
        dim: sdim,
        cols: cols
            .into_iter()
            .map(|m| {
                let mut v: Vec<(usize, f64)> = m.into_iter().collect();
                v.sort_unstable_by_key(|&(i, _)| i);
                v
            })
            .collect(),
        diag,
    };
    let mu = propagate(&q, &delta(sdim, 0), t)?;
    Ok(masks
        .iter()
        .zip(&mu)
        .filter(|(m, _)| m.count_ones() == 1)
        .map(|(_, &p)| p)
        .sum())
}

/// Both sides of the coupling inequality
/// ||P_mu^t - P_nu^t||_TV <= 1 - P(all states coalesced by t).
pub fn coupling_bound_check<S: JumpSystem>(
    sys: &S,
    t: f64,
    mu: &[f64],
    nu: &[f64],
) -> Result<(f64, f64, bool)> {
    let q = build_generator(sys)?;
    let lhs = tv_distance(&propagate(&q, mu, t)?, &propagate(&q, nu, t)?)?;
    let rhs = 1.0 - coalescence_exact(sys, t)?;
    Ok((lhs, rhs, lhs <= rhs + 1e-10))
}

/// Additive random walk on three states: two clocks k in {1, 2}, each of
/// rate 1, acting by x -> x + k mod 3. Distributions converge to uniform
/// but trajectories never synchronize.
pub struct Z3System {
    law: ClockLaw,
}

impl Z3System {
    pub fn new() -> Self {
        let law = ClockLaw::new(vec![(SiteIndex(1), 1.0), (SiteIndex(2), 1.0)]).unwrap();
        Self { law }
    }
}

impl Default for Z3System {
    fn default() -> Self {
        Self::new()
    }
}

impl JumpSystem for Z3System {
    fn num_states(&self) -> usize {
        3
    }

    fn apply(&self, state: usize, k: SiteIndex) -> usize {
        (state + k.0 as usize) % 3
    }

    fn law(&self) -> &ClockLaw {
        &self.law
    }
}

/// The three-state reference model together with its generator.
pub fn z3_model() -> (Z3System, GeneratorMatrix) {
    let sys = Z3System::new();
    let q = build_generator(&sys).unwrap();
    (sys, q)
}

/// Serializes a distribution as CSV rows (index, state-literal, probability).
pub fn distribution_to_csv(n: usize, v: &[f64]) -> String {
    let mut out = String::from("index,state,probability\n");
    for (i, &p) in v.iter().enumerate() {
        let lit = LatticeState::from_index(i, n)
            .map(|s| s.to_literal())
            .unwrap_or_else(|_| i.to_string());
        out.push_str(&format!("{i},{lit},{p:.12e}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::{ChainSystem, StateSet};
    use crate::lattice::RateConfig;

    fn chain(n: usize, alpha: f64, beta: f64) -> ChainSystem {
        ChainSystem::new(&RateConfig::uniform(n, alpha, beta, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn two_state_generator() {
        let sys = chain(1, 1.0, 2.0);
        let q = build_generator(&sys).unwrap();
        // index 0 = empty, 1 = occupied
        assert_eq!(q.diag(), &[-1.0, -2.0]);
        assert_eq!(q.column(0), &[(1, 1.0)]);
        assert_eq!(q.column(1), &[(0, 2.0)]);
    }

    #[test]
    fn generator_columns_sum_to_zero() {
        for (n, a, b) in [(1, 1.0, 2.0), (3, 0.7, 1.3), (4, 2.0, 0.5)] {
            let q = build_generator(&chain(n, a, b)).unwrap();
            for j in 0..q.dim() {
                let col_sum: f64 =
                    q.column(j).iter().map(|&(_, r)| r).sum::<f64>() + q.diag()[j];
                assert!(col_sum.abs() < 1e-12);
                assert!(q.column(j).iter().all(|&(_, r)| r >= 0.0));
            }
        }
    }

    #[test]
    fn interior_transition_out_of_010() {
        let q = build_generator(&chain(3, 1.0, 1.0)).unwrap();
        let from = 0b010usize;
        // interior clocks are k=1, k=2; only k=2 moves 010 -> 001
        let interior_targets: Vec<usize> = q
            .column(from)
            .iter()
            .map(|&(i, _)| i)
            .filter(|&i| i.count_ones() == from.count_ones())
            .collect();
        assert_eq!(interior_targets, vec![0b001]);
    }

    #[test]
    fn propagate_identity_at_zero_and_closed_form() {
        let q = build_generator(&chain(1, 1.0, 1.0)).unwrap();
        let mu0 = delta(2, 0);
        assert_eq!(propagate(&q, &mu0, 0.0).unwrap(), mu0);
        for t in [0.1, 0.5, 1.0, 3.0] {
            let mu = propagate(&q, &mu0, t).unwrap();
            let expected = (1.0 - (-2.0 * t).exp()) / 2.0;
            assert!((mu[1] - expected).abs() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn propagate_conserves_mass() {
        let q = build_generator(&chain(3, 1.0, 1.0)).unwrap();
        let mut mu0 = vec![0.0; 8];
        for (i, x) in mu0.iter_mut().enumerate() {
            *x = (i as f64 + 1.0) / 36.0;
        }
        let mu = propagate(&q, &mu0, 10.0).unwrap();
        assert!((mu.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(mu.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn propagate_semigroup() {
        let q = build_generator(&chain(3, 0.8, 1.2)).unwrap();
        let mu0 = delta(8, 5);
        let one = propagate(&q, &mu0, 3.0).unwrap();
        let two = propagate(&q, &propagate(&q, &mu0, 1.25).unwrap(), 1.75).unwrap();
        for (a, b) in one.iter().zip(&two) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn stationary_two_state() {
        let q = build_generator(&chain(1, 1.0, 2.0)).unwrap();
        let pi = stationary(&q).unwrap();
        assert!((pi[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((pi[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn stationary_is_invariant_and_matches_long_run() {
        let q = build_generator(&chain(3, 1.0, 1.0)).unwrap();
        let pi = stationary(&q).unwrap();
        for t in [1.0, 10.0] {
            let evolved = propagate(&q, &pi, t).unwrap();
            for (a, b) in evolved.iter().zip(&pi) {
                assert!((a - b).abs() < 1e-10);
            }
        }
        let long_run = propagate(&q, &delta(8, 0), 100.0).unwrap();
        for (a, b) in long_run.iter().zip(&pi) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn tv_basics() {
        let mu = delta(4, 0);
        let nu = delta(4, 3);
        assert_eq!(tv_distance(&mu, &mu).unwrap(), 0.0);
        assert_eq!(tv_distance(&mu, &nu).unwrap(), 1.0);
        let rho = uniform_distribution(4);
        let ab = tv_distance(&mu, &nu).unwrap();
        let ac = tv_distance(&mu, &rho).unwrap();
        let cb = tv_distance(&rho, &nu).unwrap();
        assert!(ab <= ac + cb + 1e-15);
        assert!(tv_distance(&mu, &delta(3, 0)).is_err());
    }

    #[test]
    fn mixing_time_monotone_in_epsilon() {
        let q = build_generator(&chain(3, 1.0, 1.0)).unwrap();
        let t1 = mixing_time(&q, 0.1).unwrap();
        let t2 = mixing_time(&q, 0.25).unwrap();
        let t3 = mixing_time(&q, 0.9).unwrap();
        assert!(t1 >= t2 && t2 >= t3);
        assert!(mixing_time(&q, 1.5).is_err());
        assert!(mixing_time(&q, 0.0).is_err());
    }

    #[test]
    fn coalescence_basics() {
        let sys = chain(3, 1.0, 1.0);
        assert_eq!(coalescence_exact(&sys, 0.0).unwrap(), 0.0);
        let mut last = 0.0;
        for t in [1.0, 2.0, 5.0, 10.0, 20.0] {
            let p = coalescence_exact(&sys, t).unwrap();
            assert!(p >= last - 1e-12);
            last = p;
        }
        assert!(last > 0.9);
    }

    #[test]
    fn coalescence_matches_monte_carlo() {
        use crate::coupling::gamma_probability;
        let sys = chain(3, 1.0, 1.0);
        for t in [5.0, 10.0, 20.0] {
            let exact = coalescence_exact(&sys, t).unwrap();
            let (est, se) = gamma_probability(&sys, t, 4000, 17).unwrap();
            let slack = 3.0 * se.max(1e-3);
            assert!((est - exact).abs() < slack, "t={t}: {est} vs {exact}");
        }
    }

    #[test]
    fn bound_check_holds() {
        let sys = chain(3, 1.0, 1.0);
        let mu = delta(8, 7);
        let nu = delta(8, 0);
        for t in [1.0, 2.0, 5.0, 10.0, 20.0] {
            let (lhs, rhs, holds) = coupling_bound_check(&sys, t, &mu, &nu).unwrap();
            assert!(holds, "t={t}: lhs={lhs} rhs={rhs}");
        }
        let (lhs, _, holds) = coupling_bound_check(&sys, 5.0, &mu, &mu).unwrap();
        assert_eq!(lhs, 0.0);
        assert!(holds);
        // Both sides vanish for large t.
        let (lhs, rhs, _) = coupling_bound_check(&sys, 80.0, &mu, &nu).unwrap();
        assert!(lhs < 1e-6 && rhs < 1e-6);
    }

    #[test]
    fn z3_reference_model() {
        let (sys, q) = z3_model();
        let pi = stationary(&q).unwrap();
        for &p in &pi {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
        let mu = propagate(&q, &delta(3, 0), 10.0).unwrap();
        assert!(tv_distance(&mu, &uniform_distribution(3)).unwrap() <= 1e-4);
        // The set of all three states is invariant under every event map.
        let full = StateSet::full(3);
        for k in [SiteIndex(1), SiteIndex(2)] {
            assert_eq!(full.image(&sys, k), full);
        }
    }
}
