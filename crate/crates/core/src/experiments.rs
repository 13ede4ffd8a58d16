//! Monte-Carlo campaigns over the (alpha, beta) phase diagram: batched
//! estimates of the expected synchronization time, power-law regression
//! over chain-length segments, phase classification, and table emission.

use crate::clocks::{ClockLaw, StreamSeed};
use crate::coupling::sync_time_pair;
use crate::derive_seed;
use crate::lattice::{LatticeState, Model, RateConfig};
use crate::{Error, Result};
use rayon::prelude::*;
use std::fmt;

/// The 40 chain lengths of the full campaign: 11..20 step 1, 22..40 step 2,
/// 44..80 step 4, 88..160 step 8.
pub fn campaign_lengths() -> Vec<usize> {
    let mut v: Vec<usize> = (11..=20).collect();
    v.extend((22..=40).step_by(2));
    v.extend((44..=80).step_by(4));
    v.extend((88..=160).step_by(8));
    v
}

/// Six lengths that keep a full sweep in the minutes range on one core.
pub fn desk_lengths() -> Vec<usize> {
    vec![16, 24, 32, 48, 64, 96]
}

/// The three standard regression segments, as inclusive (low, high) bounds.
pub fn standard_segments() -> [(usize, usize); 3] {
    [(80, 160), (40, 160), (11, 160)]
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPlan {
    pub points: Vec<(f64, f64)>,
    pub lengths: Vec<usize>,
    pub runs_per_cell: usize,
    pub batches: usize,
    pub model: Model,
    pub base_seed: u64,
    pub max_time: f64,
    pub h: f64,
}

impl SweepPlan {
    /// Full-campaign defaults: 40 lengths, 7200 runs in 9 batches.
    pub fn full_campaign(points: Vec<(f64, f64)>, base_seed: u64) -> Self {
        Self {
            points,
            lengths: campaign_lengths(),
            runs_per_cell: 7200,
            batches: 9,
            model: Model::Tasep,
            base_seed,
            max_time: 1e6,
            h: 1.0,
        }
    }

    /// Desk-scale defaults: 6 lengths, 1000 runs in 10 batches.
    pub fn desk(points: Vec<(f64, f64)>, base_seed: u64) -> Self {
        Self {
            points,
            lengths: desk_lengths(),
            runs_per_cell: 1000,
            batches: 10,
            model: Model::Tasep,
            base_seed,
            max_time: 1e6,
            h: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::BadConfig("plan has no (alpha, beta) points".into()));
        }
        for &(a, b) in &self.points {
            if !(a >= 0.0 && b >= 0.0 && a.is_finite() && b.is_finite()) {
                return Err(Error::BadConfig(format!("bad rates ({a}, {b})")));
            }
            if a == 0.0 && b == 0.0 {
                return Err(Error::BadConfig("alpha and beta both zero".into()));
            }
        }
        if self.lengths.is_empty() || !self.lengths.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::BadConfig("lengths must be strictly increasing".into()));
        }
        if self.batches == 0 || self.runs_per_cell == 0 {
            return Err(Error::BadConfig("runs and batches must be positive".into()));
        }
        if self.runs_per_cell % self.batches != 0 {
            return Err(Error::BadConfig(format!(
                "runs_per_cell {} not divisible by batches {}",
                self.runs_per_cell, self.batches
            )));
        }
        if !(self.max_time > 0.0) || !(self.h > 0.0) {
            return Err(Error::BadConfig("max_time and h must be positive".into()));
        }
        Ok(())
    }

    /// Parses a `key = value` plan file. Recognized keys: points (pairs
    /// separated by `;`), lengths, runs_per_cell, batches, model, base_seed,
    /// max_time, h. Unset keys take the desk-scale defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut plan = Self::desk(vec![], 0);
        let mut saw_points = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key = value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| Error::Parse(format!("line {}: bad {what}", lineno + 1));
            match key {
                "points" => {
                    plan.points = value
                        .split(';')
                        .map(|pair| {
                            let nums: Vec<f64> = pair
                                .split(|c: char| c == ',' || c.is_whitespace())
                                .filter(|s| !s.is_empty())
                                .map(|s| s.parse::<f64>())
                                .collect::<std::result::Result<_, _>>()
                                .map_err(|_| bad("point"))?;
                            if nums.len() != 2 {
                                return Err(bad("point"));
                            }
                            Ok((nums[0], nums[1]))
                        })
                        .collect::<Result<_>>()?;
                    saw_points = true;
                }
                "lengths" => {
                    plan.lengths = value
                        .split(|c: char| c == ',' || c.is_whitespace())
                        .filter(|s| !s.is_empty())
                        .map(|s| s.parse::<usize>().map_err(|_| bad("length")))
                        .collect::<Result<_>>()?;
                }
                "runs_per_cell" | "runs" => {
                    plan.runs_per_cell = value.parse().map_err(|_| bad("runs_per_cell"))?;
                }
                "batches" => plan.batches = value.parse().map_err(|_| bad("batches"))?,
                "base_seed" | "seed" => {
                    plan.base_seed = value.parse().map_err(|_| bad("base_seed"))?;
                }
                "max_time" => plan.max_time = value.parse().map_err(|_| bad("max_time"))?,
                "h" => plan.h = value.parse().map_err(|_| bad("h"))?,
                "model" => {
                    plan.model = match value.to_ascii_lowercase().as_str() {
                        "tasep" => Model::Tasep,
                        "asep" => Model::Asep,
                        _ => return Err(bad("model")),
                    };
                }
                _ => return Err(Error::Parse(format!("line {}: unknown key {key}", lineno + 1))),
            }
        }
        if !saw_points {
            return Err(Error::Parse("plan declares no points".into()));
        }
        plan.validate()?;
        Ok(plan)
    }

    pub fn cells(&self) -> Vec<(f64, f64, usize)> {
        let mut out = Vec::with_capacity(self.points.len() * self.lengths.len());
        for &(a, b) in &self.points {
            for &n in &self.lengths {
                out.push((a, b, n));
            }
        }
        out
    }
}

/// The seed of one Monte-Carlo run, a pure function of the plan seed and
/// the cell coordinates; results never depend on scheduling.
pub fn run_seed(base: u64, alpha: f64, beta: f64, n: usize, run: usize) -> u64 {
    derive_seed(base, &[alpha.to_bits(), beta.to_bits(), n as u64, run as u64])
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub alpha: f64,
    pub beta: f64,
    pub n: usize,
    pub run: usize,
    pub seed: u64,
    pub tau: f64,
    pub synced: bool,
    pub events: u64,
}

pub const RUN_CSV_HEADER: &str = "alpha,beta,n,run,seed,tau,synced,events";

pub fn records_to_csv(records: &[RunRecord]) -> String {
    let mut out = String::from(RUN_CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{:.12e},{},{}\n",
            r.alpha, r.beta, r.n, r.run, r.seed, r.tau, r.synced, r.events
        ));
    }
    out
}

pub fn records_from_csv(text: &str) -> Result<Vec<RunRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line.trim() != RUN_CSV_HEADER {
                return Err(Error::Parse("unexpected results header".into()));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(Error::Parse(format!("results line {}: wrong arity", i + 1)));
        }
        let bad = |what: &str| Error::Parse(format!("results line {}: bad {what}", i + 1));
        out.push(RunRecord {
            alpha: f[0].parse().map_err(|_| bad("alpha"))?,
            beta: f[1].parse().map_err(|_| bad("beta"))?,
            n: f[2].parse().map_err(|_| bad("n"))?,
            run: f[3].parse().map_err(|_| bad("run"))?,
            seed: f[4].parse().map_err(|_| bad("seed"))?,
            tau: f[5].parse().map_err(|_| bad("tau"))?,
            synced: f[6].parse().map_err(|_| bad("synced"))?,
            events: f[7].parse().map_err(|_| bad("events"))?,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub alpha: f64,
    pub beta: f64,
    pub n: usize,
    pub mean_tau: f64,
    pub batch_means: Vec<f64>,
    pub sigma: f64,
    pub timeouts: usize,
    pub runs: usize,
}

impl CellResult {
    /// More than 1% timeouts disqualifies a cell from regression.
    pub fn valid_for_fit(&self) -> bool {
        self.timeouts * 100 <= self.runs && self.mean_tau.is_finite() && self.mean_tau > 0.0
    }

    /// Aggregates a cell's run records (run order) into batch means.
    pub fn from_records(
        alpha: f64,
        beta: f64,
        n: usize,
        records: &[RunRecord],
        batches: usize,
    ) -> Result<Self> {
        if batches == 0 || records.is_empty() || records.len() % batches != 0 {
            return Err(Error::BadConfig(format!(
                "{} runs do not split into {batches} batches",
                records.len()
            )));
        }
        let per = records.len() / batches;
        let mut batch_means = Vec::with_capacity(batches);
        let mut timeouts = 0usize;
        for chunk in records.chunks(per) {
            let done: Vec<f64> = chunk.iter().filter(|r| r.synced).map(|r| r.tau).collect();
            timeouts += chunk.len() - done.len();
            batch_means.push(if done.is_empty() {
                f64::NAN
            } else {
                done.iter().sum::<f64>() / done.len() as f64
            });
        }
        let mean_tau = batch_means.iter().sum::<f64>() / batches as f64;
        let sigma = sample_std(&batch_means);
        Ok(Self { alpha, beta, n, mean_tau, batch_means, sigma, timeouts, runs: records.len() })
    }
}

fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Runs one (alpha, beta, n) cell: `runs_per_cell` empty-versus-full
/// synchronizations with per-run derived seeds, parallel over runs.
pub fn run_cell(plan: &SweepPlan, alpha: f64, beta: f64, n: usize) -> Result<(CellResult, Vec<RunRecord>)> {
    let rates = match plan.model {
        Model::Tasep => RateConfig::uniform(n, alpha, beta, plan.h)?,
        Model::Asep => {
            return Err(Error::BadConfig("sweeps cover the totally asymmetric model".into()))
        }
    };
    let law = ClockLaw::from_rates(&rates)?;
    let empty = LatticeState::empty(n)?;
    let full = LatticeState::full(n)?;
    let records: Vec<RunRecord> = (0..plan.runs_per_cell)
        .into_par_iter()
        .map(|run| {
            let seed = run_seed(plan.base_seed, alpha, beta, n, run);
            let out =
                sync_time_pair(&empty, &full, &law, StreamSeed::new(seed), plan.max_time)?;
            Ok(RunRecord {
                alpha,
                beta,
                n,
                run,
                seed,
                tau: out.tau.unwrap_or(plan.max_time),
                synced: out.synced,
                events: out.events_consumed,
            })
        })
        .collect::<Result<_>>()?;
    let cell = CellResult::from_records(alpha, beta, n, &records, plan.batches)?;
    Ok((cell, records))
}

/// Runs every cell of the plan. The per-cell callback fires after each cell
/// completes, in plan order, for checkpointing.
pub fn run_sweep_with<F>(plan: &SweepPlan, mut on_cell: F) -> Result<Vec<CellResult>>
where
    F: FnMut(&CellResult, &[RunRecord]) -> Result<()>,
{
    plan.validate()?;
    let mut cells = Vec::new();
    for (alpha, beta, n) in plan.cells() {
        let (cell, records) = run_cell(plan, alpha, beta, n)?;
        on_cell(&cell, &records)?;
        cells.push(cell);
    }
    Ok(cells)
}

pub fn run_sweep(plan: &SweepPlan) -> Result<Vec<CellResult>> {
    run_sweep_with(plan, |_, _| Ok(()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub segment: (usize, usize),
    pub gamma: f64,
    pub c: f64,
    pub delta: f64,
}

fn ols(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / m;
    let ybar = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    let slope = sxy / sxx;
    (slope, ybar - slope * xbar)
}

fn segment_cells<'a>(cells: &'a [CellResult], segment: (usize, usize)) -> Vec<&'a CellResult> {
    cells
        .iter()
        .filter(|c| c.n >= segment.0 && c.n <= segment.1 && c.valid_for_fit())
        .collect()
}

/// Least-squares fit of log E[tau] against log n over the segment.
pub fn fit_power_law(cells: &[CellResult], segment: (usize, usize)) -> Result<FitResult> {
    let inside = segment_cells(cells, segment);
    if inside.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} valid cells in [{}, {}], need 3",
            inside.len(),
            segment.0,
            segment.1
        )));
    }
    let xs: Vec<f64> = inside.iter().map(|c| (c.n as f64).ln()).collect();
    let ys: Vec<f64> = inside.iter().map(|c| c.mean_tau.ln()).collect();
    let (gamma, intercept) = ols(&xs, &ys);
    let c0 = intercept.exp();
    let delta = inside
        .iter()
        .map(|cell| {
            let model = c0 * (cell.n as f64).powf(gamma);
            ((cell.mean_tau - model) / model).abs()
        })
        .fold(0.0f64, f64::max);
    Ok(FitResult { segment, gamma, c: c0, delta })
}

/// Spread of the exponent across batches: refits gamma on each batch's
/// means and returns the sample standard deviation of the batch gammas.
pub fn sigma_of_fit(cells: &[CellResult], segment: (usize, usize)) -> Result<f64> {
    let inside = segment_cells(cells, segment);
    if inside.len() < 3 {
        return Err(Error::InsufficientData("too few cells for batch refits".into()));
    }
    let batches = inside[0].batch_means.len();
    if batches < 2 || inside.iter().any(|c| c.batch_means.len() != batches) {
        return Err(Error::InsufficientData("batch means missing or uneven".into()));
    }
    let xs: Vec<f64> = inside.iter().map(|c| (c.n as f64).ln()).collect();
    let gammas: Vec<f64> = (0..batches)
        .map(|b| {
            let ys: Vec<f64> = inside.iter().map(|c| c.batch_means[b].ln()).collect();
            ols(&xs, &ys).0
        })
        .collect();
    Ok(sample_std(&gammas))
}

/// The mixing bound implied by Markov's inequality: t_mix(eps) <= E[tau]/eps.
pub fn mixing_bound(mean_tau: f64, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::BadConfig(format!("epsilon {epsilon} must lie in (0,1)")));
    }
    if !(mean_tau >= 0.0) {
        return Err(Error::NonFinite);
    }
    Ok(mean_tau / epsilon)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Ld,
    Hd,
    Mc,
    Coexistence,
    TriplePoint,
    Boundary,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Ld => "LD",
            Phase::Hd => "HD",
            Phase::Mc => "MC",
            Phase::Coexistence => "coexistence",
            Phase::TriplePoint => "triple_point",
            Phase::Boundary => "boundary",
        })
    }
}

pub fn phase_classify(alpha: f64, beta: f64) -> Phase {
    let min = alpha.min(beta);
    if alpha == 0.5 && beta == 0.5 {
        Phase::TriplePoint
    } else if min == 0.5 {
        Phase::Boundary
    } else if min > 0.5 {
        Phase::Mc
    } else if alpha > beta {
        Phase::Hd
    } else if alpha < beta {
        Phase::Ld
    } else if alpha > 0.0 {
        Phase::Coexistence
    } else {
        Phase::Boundary
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub alpha: f64,
    pub beta: f64,
    pub segment: (usize, usize),
    pub gamma: f64,
    pub sigma: f64,
    pub delta: f64,
    pub c: f64,
}

pub const SUMMARY_CSV_HEADER: &str = "alpha,beta,seg_lo,seg_hi,gamma,sigma,delta,C";

fn round_to(x: f64, decimals: i32) -> f64 {
    let p = 10f64.powi(decimals);
    (x * p).round() / p
}

fn sig3(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let mag = x.abs().log10().floor() as i32;
    round_to(x, 2 - mag)
}

/// Delta displayed in the tables as a percentage with one significant digit.
fn delta_percent(delta: f64) -> f64 {
    let pct = delta * 100.0;
    if pct == 0.0 {
        return 0.0;
    }
    let mag = pct.abs().log10().floor() as i32;
    round_to(pct, -mag)
}

impl SummaryRow {
    /// Applies the displayed precision: gamma and sigma to 3 decimals,
    /// delta to a 1-significant-digit percentage, C to 3 significant figures.
    pub fn rounded(&self) -> Self {
        Self {
            alpha: self.alpha,
            beta: self.beta,
            segment: self.segment,
            gamma: round_to(self.gamma, 3),
            sigma: round_to(self.sigma, 3),
            delta: delta_percent(self.delta) / 100.0,
            c: sig3(self.c),
        }
    }
}

/// Builds one summary row per (alpha, beta, segment) from fitted cells.
pub fn summarize(cells: &[CellResult], segments: &[(usize, usize)]) -> Result<Vec<SummaryRow>> {
    let mut points: Vec<(f64, f64)> = Vec::new();
    for c in cells {
        if !points.contains(&(c.alpha, c.beta)) {
            points.push((c.alpha, c.beta));
        }
    }
    let mut rows = Vec::new();
    for (alpha, beta) in points {
        let mine: Vec<CellResult> = cells
            .iter()
            .filter(|c| c.alpha == alpha && c.beta == beta)
            .cloned()
            .collect();
        for &segment in segments {
            let fit = fit_power_law(&mine, segment)?;
            let sigma = sigma_of_fit(&mine, segment)?;
            rows.push(SummaryRow {
                alpha,
                beta,
                segment,
                gamma: fit.gamma,
                sigma,
                delta: fit.delta,
                c: fit.c,
            });
        }
    }
    Ok(rows)
}

/// The summary CSV, rounded to the displayed precision.
pub fn emit_summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(SUMMARY_CSV_HEADER);
    out.push('\n');
    for row in rows {
        let r = row.rounded();
        out.push_str(&format!(
            "{},{},{},{},{:.3},{:.3},{},{}\n",
            r.alpha, r.beta, r.segment.0, r.segment.1, r.gamma, r.sigma, r.delta, r.c
        ));
    }
    out
}

pub fn parse_summary_csv(text: &str) -> Result<Vec<SummaryRow>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line.trim() != SUMMARY_CSV_HEADER {
                return Err(Error::Parse("unexpected summary header".into()));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(Error::Parse(format!("summary line {}: wrong arity", i + 1)));
        }
        let bad = |w: &str| Error::Parse(format!("summary line {}: bad {w}", i + 1));
        out.push(SummaryRow {
            alpha: f[0].parse().map_err(|_| bad("alpha"))?,
            beta: f[1].parse().map_err(|_| bad("beta"))?,
            segment: (
                f[2].parse().map_err(|_| bad("seg_lo"))?,
                f[3].parse().map_err(|_| bad("seg_hi"))?,
            ),
            gamma: f[4].parse().map_err(|_| bad("gamma"))?,
            sigma: f[5].parse().map_err(|_| bad("sigma"))?,
            delta: f[6].parse().map_err(|_| bad("delta"))?,
            c: f[7].parse().map_err(|_| bad("C"))?,
        });
    }
    Ok(out)
}

/// Aligned text table: one row per (alpha, beta), the three segments side
/// by side in the order given.
pub fn emit_text_table(rows: &[SummaryRow], segments: &[(usize, usize)]) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:>6} {:>6}", "alpha", "beta"));
    for (j, seg) in segments.iter().enumerate() {
        out.push_str(&format!(
            " | {:>15} {:>6} {:>8}",
            format!("g{j} [{},{}]", seg.0, seg.1),
            format!("D{j}"),
            format!("C{j}")
        ));
    }
    out.push('\n');
    let mut points: Vec<(f64, f64)> = Vec::new();
    for r in rows {
        if !points.contains(&(r.alpha, r.beta)) {
            points.push((r.alpha, r.beta));
        }
    }
    for (alpha, beta) in points {
        out.push_str(&format!("{alpha:>6} {beta:>6}"));
        for &seg in segments {
            match rows.iter().find(|r| r.alpha == alpha && r.beta == beta && r.segment == seg) {
                Some(row) => {
                    let r = row.rounded();
                    out.push_str(&format!(
                        " | {:>15} {:>5}% {:>8}",
                        format!("{:.3} ± {:.3}", r.gamma, r.sigma),
                        delta_percent(row.delta),
                        r.c
                    ));
                }
                None => out.push_str(&format!(" | {:>15} {:>6} {:>8}", "-", "-", "-")),
            }
        }
        out.push('\n');
    }
    out
}
