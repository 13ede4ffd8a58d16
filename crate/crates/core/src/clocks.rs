//! Per-site Poisson clock realizations, their merged jump order sequence,
//! and the time shift acting on event streams.
//!
//! Each site carries two lazily generated streams of exponential increments,
//! one running forward from time 0 and one backward, keyed by
//! (base seed, site, direction). Regenerating any window of the same seed
//! therefore reproduces the same events, and extending a window backward
//! never perturbs events that were already visible.

use crate::lattice::{RateConfig, SiteIndex};
use crate::{derive_seed, Error, Result};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// A single jump attempt: absolute time plus the clock that fired.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct JumpEvent {
    pub time: f64,
    pub site: SiteIndex,
}

/// Half-open time interval [a, b).
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct Window {
    pub a: f64,
    pub b: f64,
}

impl Window {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !a.is_finite() || !b.is_finite() || a > b {
            return Err(Error::DegenerateWindow { a, b });
        }
        Ok(Self { a, b })
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.a && t < self.b
    }

    pub fn covers(&self, sub: &Window) -> bool {
        sub.a >= self.a && sub.b <= self.b
    }
}

/// Descriptor from which all per-site substreams are derived.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct StreamSeed {
    pub base: u64,
}

impl StreamSeed {
    pub fn new(base: u64) -> Self {
        Self { base }
    }
}

fn site_code(site: SiteIndex) -> u64 {
    site.0 as i64 as u64
}

const DIR_FORWARD: u64 = 0;
const DIR_BACKWARD: u64 = 1;

/// Draws Exp(lambda) via inverse CDF with U in the open interval (0,1).
#[inline]
fn exp_draw(rng: &mut ChaCha8Rng, lambda: f64) -> f64 {
    // 53-bit mantissa offset by 1/2 keeps U strictly inside (0,1).
    let u = ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9007199254740992.0);
    -u.ln() / lambda
}

/// Per-site clock intensities derived from a rate configuration.
#[derive(Clone, Debug)]
pub struct ClockLaw {
    clocks: Vec<(SiteIndex, f64)>,
}

impl ClockLaw {
    /// Builds a law from explicit (site, intensity) pairs. Zero-intensity
    /// clocks are kept in the list but generate no events.
    pub fn new(clocks: Vec<(SiteIndex, f64)>) -> Result<Self> {
        for &(_, lam) in &clocks {
            if lam < 0.0 || !lam.is_finite() {
                return Err(Error::InvalidRate(lam));
            }
        }
        Ok(Self { clocks })
    }

    pub fn from_rates(rates: &RateConfig) -> Result<Self> {
        rates.validate()?;
        let n = rates.n;
        let mut clocks = vec![(SiteIndex(0), rates.alpha)];
        for (k, &h) in rates.interior.iter().enumerate() {
            clocks.push((SiteIndex(k as i32 + 1), h));
        }
        clocks.push((SiteIndex(n as i32), rates.beta));
        if let Some(a) = &rates.asep {
            clocks.push((SiteIndex(-(n as i32 + 1)), a.right_entry));
            for m in 1..n {
                clocks.push((SiteIndex(-(m as i32)), a.left[m - 1]));
            }
        }
        Self::new(clocks)
    }

    pub fn clocks(&self) -> &[(SiteIndex, f64)] {
        &self.clocks
    }

    pub fn total_rate(&self) -> f64 {
        self.clocks.iter().map(|&(_, lam)| lam).sum()
    }
}

/// Time-sorted realization of the merged per-site clocks on a window.
#[derive(Clone, Debug)]
pub struct EventStream {
    window: Window,
    events: Vec<JumpEvent>,
    seed: Option<StreamSeed>,
}

impl EventStream {
    pub fn window(&self) -> Window {
        self.window
    }

    pub fn events(&self) -> &[JumpEvent] {
        &self.events
    }

    pub fn seed(&self) -> Option<StreamSeed> {
        self.seed
    }

    /// Serializes as CSV with columns `time,site`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,site\n");
        for ev in &self.events {
            out.push_str(&format!("{:.16e},{}\n", ev.time, ev.site.0));
        }
        out
    }

    /// Loads a scripted stream from the `time,site` CSV format.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut times = Vec::new();
        let mut sites = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (i == 0 && line.starts_with("time")) {
                continue;
            }
            let (t, s) = line
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("bad event row {line:?}")))?;
            times.push(
                t.trim().parse::<f64>().map_err(|e| Error::Parse(format!("{e}: {t:?}")))?,
            );
            sites.push(SiteIndex(
                s.trim().parse::<i32>().map_err(|e| Error::Parse(format!("{e}: {s:?}")))?,
            ));
        }
        scripted_stream(&times, &sites)
    }
}

/// Samples the merged clock realization on `window`. Events are anchored at
/// absolute time 0 for every site: forward increments cover [0, inf),
/// backward increments cover (-inf, 0), and the window only restricts which
/// events are materialized. This is what makes sub-window regeneration exact.
pub fn sample_stream(law: &ClockLaw, window: Window, seed: StreamSeed) -> Result<EventStream> {
    if window.a >= window.b {
        return Err(Error::DegenerateWindow { a: window.a, b: window.b });
    }
    let mut events = Vec::new();
    for &(site, lam) in law.clocks() {
        if lam == 0.0 {
            continue;
        }
        if window.b > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                seed.base,
                &[site_code(site), DIR_FORWARD],
            ));
            let mut t = 0.0;
            loop {
                t += exp_draw(&mut rng, lam);
                if t >= window.b {
                    break;
                }
                if t >= window.a {
                    events.push(JumpEvent { time: t, site });
                }
            }
        }
        if window.a < 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                seed.base,
                &[site_code(site), DIR_BACKWARD],
            ));
            let mut t = 0.0;
            loop {
                t -= exp_draw(&mut rng, lam);
                if t < window.a {
                    break;
                }
                if t < window.b {
                    events.push(JumpEvent { time: t, site });
                }
            }
        }
    }
    // Exact time ties are broken by ascending site index.
    events.sort_by(|x, y| x.time.total_cmp(&y.time).then(x.site.cmp(&y.site)));
    Ok(EventStream { window, events, seed: Some(seed) })
}

/// Implements the time shift on the accessible part of the realization:
/// every event time decreases by `s` and the window translates with it.
pub fn shift(stream: &EventStream, s: f64) -> Result<EventStream> {
    let window = Window::new(stream.window.a - s, stream.window.b - s)?;
    let mut events = Vec::with_capacity(stream.events.len());
    for ev in &stream.events {
        let t = ev.time - s;
        if !t.is_finite() {
            return Err(Error::NonFinite);
        }
        events.push(JumpEvent { time: t, site: ev.site });
    }
    Ok(EventStream { window, events, seed: None })
}

/// Exactly the events with time in `sub`, order preserved.
pub fn events_in<'a>(stream: &'a EventStream, sub: Window) -> Result<&'a [JumpEvent]> {
    if !stream.window.covers(&sub) {
        return Err(Error::WindowViolation);
    }
    let lo = stream.events.partition_point(|e| e.time < sub.a);
    let hi = stream.events.partition_point(|e| e.time < sub.b);
    Ok(&stream.events[lo..hi])
}

/// Deterministic replay stream carrying exactly the given events.
pub fn scripted_stream(times: &[f64], sites: &[SiteIndex]) -> Result<EventStream> {
    if times.len() != sites.len() {
        return Err(Error::LengthMismatch);
    }
    for w in times.windows(2) {
        if !(w[0] < w[1]) {
            return Err(Error::UnsortedTimes);
        }
    }
    for &t in times {
        if !t.is_finite() {
            return Err(Error::NonFinite);
        }
    }
    let (a, b) = match (times.first(), times.last()) {
        (Some(&f), Some(&l)) => (f.min(0.0), l + 1.0),
        _ => (0.0, 0.0),
    };
    let events = times
        .iter()
        .zip(sites)
        .map(|(&time, &site)| JumpEvent { time, site })
        .collect();
    Ok(EventStream { window: Window { a, b }, events, seed: None })
}

struct HeapEntry {
    time: f64,
    site: SiteIndex,
    slot: usize,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.site == other.site
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed so the BinaryHeap pops the earliest event; ties by site.
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.site.cmp(&self.site))
    }
}

/// Lazy forward generator of the merged jump sequence from time 0,
/// identical event-for-event to `sample_stream` on [0, t) for any t.
pub struct MergedClock {
    heap: BinaryHeap<HeapEntry>,
    rngs: Vec<(f64, ChaCha8Rng)>, // per active clock: (lambda, rng)
}

impl MergedClock {
    pub fn new(law: &ClockLaw, seed: StreamSeed) -> Self {
        let mut heap = BinaryHeap::new();
        let mut rngs = Vec::new();
        for &(site, lam) in law.clocks() {
            if lam == 0.0 {
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                seed.base,
                &[site_code(site), DIR_FORWARD],
            ));
            let t = exp_draw(&mut rng, lam);
            let slot = rngs.len();
            rngs.push((lam, rng));
            heap.push(HeapEntry { time: t, site, slot });
        }
        Self { heap, rngs }
    }

    /// Next merged event, or None if no clock has positive intensity.
    #[allow(clippy::should_implement_trait)]
    pub fn next(&mut self) -> Option<JumpEvent> {
        let top = self.heap.pop()?;
        let (lam, rng) = &mut self.rngs[top.slot];
        let next_time = top.time + exp_draw(rng, *lam);
        self.heap.push(HeapEntry { time: next_time, site: top.site, slot: top.slot });
        Some(JumpEvent { time: top.time, site: top.site })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::RateConfig;

    fn law_n(n: usize, alpha: f64, beta: f64, h: f64) -> ClockLaw {
        ClockLaw::from_rates(&RateConfig::uniform(n, alpha, beta, h).unwrap()).unwrap()
    }

    #[test]
    fn zero_rate_clocks_generate_nothing() {
        let law = ClockLaw::new(vec![(SiteIndex(0), 0.0), (SiteIndex(1), 0.0)]).unwrap();
        let s = sample_stream(&law, Window::new(0.0, 100.0).unwrap(), StreamSeed::new(1)).unwrap();
        assert!(s.events().is_empty());
    }

    #[test]
    fn empirical_mean_gap() {
        let law = ClockLaw::new(vec![(SiteIndex(1), 2.0)]).unwrap();
        let s =
            sample_stream(&law, Window::new(0.0, 10000.0).unwrap(), StreamSeed::new(7)).unwrap();
        let times: Vec<f64> = s.events().iter().map(|e| e.time).collect();
        let gaps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
        let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
        // Exp(2) has mean 0.5 and sd 0.5.
        let se = 0.5 / (gaps.len() as f64).sqrt();
        assert!((mean - 0.5).abs() < 3.0 * se, "mean gap {mean} off");
    }

    #[test]
    fn poisson_count_concentration() {
        let law = ClockLaw::new(vec![(SiteIndex(1), 1.0)]).unwrap();
        let s =
            sample_stream(&law, Window::new(0.0, 1000.0).unwrap(), StreamSeed::new(3)).unwrap();
        let count = s.events().len() as f64;
        assert!((count - 1000.0).abs() < 3.0 * 1000.0_f64.sqrt());
    }

    #[test]
    fn window_consistency() {
        let law = law_n(4, 0.7, 1.3, 1.0);
        let seed = StreamSeed::new(42);
        let big = sample_stream(&law, Window::new(-50.0, 50.0).unwrap(), seed).unwrap();
        for (a, b) in [(-50.0, 50.0), (-10.0, 5.0), (0.0, 50.0), (-50.0, 0.0), (3.0, 17.0)] {
            let sub = Window::new(a, b).unwrap();
            let small = sample_stream(&law, sub, seed).unwrap();
            let restricted = events_in(&big, sub).unwrap();
            assert_eq!(small.events(), restricted, "window [{a},{b})");
        }
    }

    #[test]
    fn merged_clock_matches_sampled_stream() {
        let law = law_n(5, 0.4, 0.9, 1.0);
        let seed = StreamSeed::new(11);
        let sampled = sample_stream(&law, Window::new(0.0, 20.0).unwrap(), seed).unwrap();
        let mut merged = MergedClock::new(&law, seed);
        for ev in sampled.events() {
            let got = merged.next().unwrap();
            assert_eq!(got, *ev);
        }
        assert!(merged.next().unwrap().time >= 20.0);
    }

    #[test]
    fn stationary_increments_counts() {
        // Counts over translated unit windows should look Pois(total_rate).
        let law = law_n(3, 1.0, 1.0, 1.0);
        let seed = StreamSeed::new(5);
        let rate = law.total_rate();
        let s = sample_stream(&law, Window::new(-500.0, 500.0).unwrap(), seed).unwrap();
        let mut counts = Vec::new();
        let mut t = -500.0;
        while t < 499.0 {
            counts.push(events_in(&s, Window::new(t, t + 1.0).unwrap()).unwrap().len() as f64);
            t += 1.0;
        }
        let mean = counts.iter().sum::<f64>() / counts.len() as f64;
        let se = rate.sqrt() / (counts.len() as f64).sqrt();
        assert!((mean - rate).abs() < 3.0 * se);
    }

    #[test]
    fn merged_stream_site_frequencies() {
        // Label of each merged event is site k with probability lambda_k/sum.
        let law = law_n(2, 2.0, 1.0, 1.0); // clocks 0,1,2 with rates 2,1,1
        let s =
            sample_stream(&law, Window::new(0.0, 5000.0).unwrap(), StreamSeed::new(9)).unwrap();
        let total = s.events().len() as f64;
        for (site, lam) in [(0, 2.0), (1, 1.0), (2, 1.0)] {
            let p = lam / 4.0;
            let got =
                s.events().iter().filter(|e| e.site == SiteIndex(site)).count() as f64 / total;
            let se = (p * (1.0 - p) / total).sqrt();
            assert!((got - p).abs() < 3.0 * se, "site {site}: {got} vs {p}");
        }
    }

    #[test]
    fn no_ties_in_sampled_streams() {
        let law = law_n(6, 1.0, 1.0, 1.0);
        for seed in 0..20u64 {
            let s = sample_stream(
                &law,
                Window::new(-100.0, 100.0).unwrap(),
                StreamSeed::new(seed),
            )
            .unwrap();
            let ties = s.events().windows(2).filter(|w| w[0].time == w[1].time).count();
            assert_eq!(ties, 0);
        }
    }

    #[test]
    fn shift_properties() {
        let law = law_n(3, 1.0, 1.0, 1.0);
        let s =
            sample_stream(&law, Window::new(-8.0, 8.0).unwrap(), StreamSeed::new(2)).unwrap();
        let id = shift(&s, 0.0).unwrap();
        assert_eq!(id.events(), s.events());
        // Flow property; offsets are powers of two so fp addition is exact.
        let a = shift(&shift(&s, 0.5).unwrap(), 0.25).unwrap();
        let b = shift(&s, 0.75).unwrap();
        assert_eq!(a.events(), b.events());
        assert_eq!(a.window(), b.window());
    }

    #[test]
    fn shift_moves_event_times() {
        let s = scripted_stream(&[5.5], &[SiteIndex(1)]).unwrap();
        let t = shift(&s, 2.0).unwrap();
        assert_eq!(t.events()[0].time, 3.5);
        assert_eq!(t.events()[0].site, SiteIndex(1));
    }

    #[test]
    fn events_in_partition() {
        let law = law_n(3, 1.0, 1.0, 1.0);
        let s =
            sample_stream(&law, Window::new(-5.0, 5.0).unwrap(), StreamSeed::new(4)).unwrap();
        let all = events_in(&s, Window::new(-5.0, 5.0).unwrap()).unwrap();
        assert_eq!(all, s.events());
        let left = events_in(&s, Window::new(-5.0, 1.0).unwrap()).unwrap();
        let right = events_in(&s, Window::new(1.0, 5.0).unwrap()).unwrap();
        let mut glued = left.to_vec();
        glued.extend_from_slice(right);
        assert_eq!(glued.as_slice(), s.events());
        let empty = events_in(&s, Window::new(1.0, 1.0).unwrap()).unwrap();
        assert!(empty.is_empty());
        assert!(events_in(&s, Window::new(-6.0, 0.0).unwrap()).is_err());
    }

    #[test]
    fn scripted_streams() {
        let empty = scripted_stream(&[], &[]).unwrap();
        assert!(empty.events().is_empty());
        let s = scripted_stream(
            &[1.0, 2.0, 3.0],
            &[SiteIndex(3), SiteIndex(2), SiteIndex(3)],
        )
        .unwrap();
        assert_eq!(s.events().len(), 3);
        assert!(scripted_stream(&[1.0, 1.5], &[SiteIndex(0), SiteIndex(0)]).is_ok());
        assert!(matches!(
            scripted_stream(&[2.0, 1.0], &[SiteIndex(0), SiteIndex(0)]),
            Err(Error::UnsortedTimes)
        ));
        assert!(matches!(
            scripted_stream(&[1.0], &[]),
            Err(Error::LengthMismatch)
        ));
    }

    #[test]
    fn csv_roundtrip() {
        let s = scripted_stream(
            &[0.125, 2.5, 3.75],
            &[SiteIndex(0), SiteIndex(2), SiteIndex(-4)],
        )
        .unwrap();
        let parsed = EventStream::from_csv(&s.to_csv()).unwrap();
        assert_eq!(parsed.events(), s.events());
    }
}
