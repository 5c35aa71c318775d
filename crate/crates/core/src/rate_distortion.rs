//! Discrete rate-distortion: Blahut-Arimoto and friends.
//!
//! All information quantities are in nats.
//!
//! For a Lagrange multiplier `beta`, Blahut-Arimoto alternates
//!
//! ```text
//! Q(j | i) ∝ q(j) · exp(−beta · d(i, j))
//! q(j)     = Σ_i p(i) Q(j | i)
//! ```
//!
//! which is alternating minimization of
//!
//! ```text
//! F(Q, q) = Σ_i p(i) Σ_j Q(j | i) [log(Q(j | i) / q(j)) + beta · d(i, j)]
//! ```
//!
//! After a row update `F` equals `−Σ_i p(i) log Z(i)` with `Z(i)` the row
//! normalizer, which is what gets traced and tested for convergence. It is
//! non-increasing and bounds the Lagrangian `I(X; Z) + beta · E[d(X, Z)]` of
//! the current channel from above, with equality at the fixed point. Row updates are done in the log domain so that large multipliers
//! do not underflow. `beta = +∞` is supported and restricts every row to the
//! outputs with minimal distortion for that row.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::mdp::validate_and_normalize;
use crate::{Error, Result};

pub const DEFAULT_BETA_MAX: f64 = 1e4;
pub const BISECTION_DEPTH: usize = 60;
/// Upper bound on how many times `beta_max` is doubled while looking for a
/// multiplier that meets the threshold.
const MAX_DOUBLINGS: usize = 64;
/// Weight of the uniform distribution mixed into a warm-start marginal.
const WARM_START_MIX: f64 = 1e-6;
/// Bisection also stops once `beta_hi − beta_lo ≤ BRACKET_RTOL · beta_hi`.
const BRACKET_RTOL: f64 = 1e-8;
/// ... or once the bracketing distortions are this close (relative to
/// `max(D, 1)`).
const BRACKET_DIST_GAP: f64 = 1e-9;

/// Slack allowed on the expected-distortion constraint.
pub fn threshold_slack(d: f64) -> f64 {
    1e-6 * d.max(1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SourceDocument", into = "SourceDocument")]
pub struct SourceDistribution {
    probs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SourceDocument {
    probs: Vec<f64>,
}

impl TryFrom<SourceDocument> for SourceDistribution {
    type Error = Error;

    fn try_from(d: SourceDocument) -> Result<Self> {
        SourceDistribution::new(d.probs)
    }
}

impl From<SourceDistribution> for SourceDocument {
    fn from(s: SourceDistribution) -> Self {
        SourceDocument { probs: s.probs }
    }
}

impl SourceDistribution {
    pub fn new(mut probs: Vec<f64>) -> Result<Self> {
        validate_and_normalize(&mut probs, "source distribution")?;
        Ok(SourceDistribution { probs })
    }

    pub fn uniform(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("source needs at least one atom"));
        }
        Self::new(vec![1.0 / m as f64; m])
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// `d(x_i, z_j)`, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixDocument", into = "MatrixDocument")]
pub struct DistortionMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixDocument {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<MatrixDocument> for DistortionMatrix {
    type Error = Error;

    fn try_from(d: MatrixDocument) -> Result<Self> {
        DistortionMatrix::new(d.rows, d.cols, d.data)
    }
}

impl From<DistortionMatrix> for MatrixDocument {
    fn from(m: DistortionMatrix) -> Self {
        MatrixDocument {
            rows: m.rows,
            cols: m.cols,
            data: m.data,
        }
    }
}

impl DistortionMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("distortion matrix must be nonempty"));
        }
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "distortion matrix has {} entries, expected {}",
                data.len(),
                rows * cols
            )));
        }
        if let Some(x) = data.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(Error::invalid(format!(
                "distortion entry {x} is not a finite nonnegative number"
            )));
        }
        Ok(DistortionMatrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn max_entry(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }
}

/// `Q(z_j | x_i)`, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Channel {
    pub fn new(rows: usize, cols: usize, mut data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::invalid("channel dimensions do not match its data"));
        }
        for (i, row) in data.chunks_mut(cols).enumerate() {
            validate_and_normalize(row, &format!("channel row {i}"))?;
        }
        Ok(Channel { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateDistortionSolution {
    pub channel: Channel,
    pub rate_nats: f64,
    pub expected_distortion: f64,
    pub lagrange_beta: f64,
    /// Blahut-Arimoto iterations spent, summed over every solve performed.
    pub iterations: usize,
    pub converged: bool,
}

pub fn source_entropy(source: &SourceDistribution) -> f64 {
    -source
        .probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

/// `I(X; Z)` for the joint `p(i) Q(j | i)`.
pub fn mutual_information(source: &SourceDistribution, channel: &Channel) -> Result<f64> {
    if source.len() != channel.rows {
        return Err(Error::invalid(format!(
            "source has {} atoms, channel has {} rows",
            source.len(),
            channel.rows
        )));
    }
    let mut marginal = vec![0.0; channel.cols];
    for (p, row) in source.probs.iter().zip(channel.data.chunks(channel.cols)) {
        for (m, q) in marginal.iter_mut().zip(row) {
            *m += p * q;
        }
    }
    let mut info = 0.0;
    for (p, row) in source.probs.iter().zip(channel.data.chunks(channel.cols)) {
        for (q, m) in row.iter().zip(&marginal) {
            if p * q > 0.0 {
                info += p * q * (q / m).ln();
            }
        }
    }
    Ok(info.max(0.0))
}

fn expected_distortion(source: &SourceDistribution, channel: &Channel, dmat: &DistortionMatrix) -> f64 {
    source
        .probs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            p * channel
                .row(i)
                .iter()
                .zip(dmat.row(i))
                .map(|(q, d)| q * d)
                .sum::<f64>()
        })
        .sum()
}

fn output_marginal(source: &SourceDistribution, channel: &Channel) -> Vec<f64> {
    let mut q = vec![0.0; channel.cols];
    for (p, row) in source.probs.iter().zip(channel.data.chunks(channel.cols)) {
        for (m, x) in q.iter_mut().zip(row) {
            *m += p * x;
        }
    }
    q
}

fn check_dims(source: &SourceDistribution, dmat: &DistortionMatrix) -> Result<()> {
    if source.len() != dmat.rows {
        return Err(Error::invalid(format!(
            "source has {} atoms, distortion matrix has {} rows",
            source.len(),
            dmat.rows
        )));
    }
    Ok(())
}

/// Log-weights `−beta · d(i, j)`; with `beta = ∞` only row minima survive.
fn log_weights(dmat: &DistortionMatrix, beta: f64) -> Vec<f64> {
    if beta.is_infinite() {
        let mut out = Vec::with_capacity(dmat.data.len());
        for i in 0..dmat.rows {
            let row = dmat.row(i);
            let min = row.iter().copied().fold(f64::INFINITY, f64::min);
            out.extend(row.iter().map(|&d| if d == min { 0.0 } else { f64::NEG_INFINITY }));
        }
        out
    } else if beta == 0.0 {
        vec![0.0; dmat.data.len()]
    } else {
        dmat.data.iter().map(|d| -beta * d).collect()
    }
}

/// `row ∝ exp(log_q + log_w)`, written into `row`. Returns the log of the
/// normalizer.
fn tilt_row(log_q: &[f64], log_w: &[f64], row: &mut [f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    for (r, (lq, lw)) in row.iter_mut().zip(log_q.iter().zip(log_w)) {
        *r = lq + lw;
        peak = peak.max(*r);
    }
    if peak == f64::NEG_INFINITY {
        // no admissible output carries mass; fall back to the marginal
        for (r, lq) in row.iter_mut().zip(log_q) {
            *r = lq.exp();
        }
    } else {
        for r in row.iter_mut() {
            *r = (*r - peak).exp();
        }
    }
    let total: f64 = row.iter().sum();
    row.iter_mut().for_each(|r| *r /= total);
    peak + total.ln()
}

struct BaRun {
    channel: Channel,
    iterations: usize,
    converged: bool,
}

/// Blahut-Arimoto on the atoms with positive probability. Rows of dropped
/// atoms get the tilted final marginal so the channel stays full-size.
fn ba_core(
    source: &SourceDistribution,
    dmat: &DistortionMatrix,
    beta: f64,
    tol: f64,
    max_iters: usize,
    start: Option<&[f64]>,
    mut trace: Option<&mut Vec<f64>>,
) -> BaRun {
    let n = dmat.cols;
    let kept: Vec<usize> = (0..source.len()).filter(|&i| source.probs[i] > 0.0).collect();
    let lw = log_weights(dmat, beta);
    let lw_row = |i: usize| &lw[i * n..(i + 1) * n];

    let mut log_q = match start {
        // keep every output alive so a warm start cannot exclude one for good
        Some(q) => q
            .iter()
            .map(|m| ((1.0 - WARM_START_MIX) * m + WARM_START_MIX / n as f64).ln())
            .collect(),
        None => vec![-(n as f64).ln(); n],
    };
    let mut rows = vec![0.0; kept.len() * n];
    let mut marginal = vec![0.0; n];
    let mut previous = f64::NAN;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < max_iters {
        iterations += 1;
        // −Σ p(i) log Z(i) is the functional at (new rows, old marginal)
        let mut objective = 0.0;
        for (k, &i) in kept.iter().enumerate() {
            let log_z = tilt_row(&log_q, lw_row(i), &mut rows[k * n..(k + 1) * n]);
            objective -= source.probs[i] * log_z;
        }
        marginal.iter_mut().for_each(|m| *m = 0.0);
        for (k, &i) in kept.iter().enumerate() {
            let p = source.probs[i];
            for (m, q) in marginal.iter_mut().zip(&rows[k * n..(k + 1) * n]) {
                *m += p * q;
            }
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push(objective);
        }
        for (lq, m) in log_q.iter_mut().zip(&marginal) {
            *lq = m.ln();
        }
        if (objective - previous).abs() < tol {
            converged = true;
            break;
        }
        previous = objective;
    }

    let mut data = vec![0.0; source.len() * n];
    let mut next_kept = kept.iter().enumerate().peekable();
    for i in 0..source.len() {
        let out = &mut data[i * n..(i + 1) * n];
        match next_kept.peek() {
            Some(&(k, &ki)) if ki == i => {
                out.copy_from_slice(&rows[k * n..(k + 1) * n]);
                next_kept.next();
            }
            _ => {
                tilt_row(&log_q, lw_row(i), out);
            }
        }
    }
    BaRun {
        channel: Channel::new(source.len(), n, data).expect("rows are normalized"),
        iterations,
        converged,
    }
}

fn finish(
    source: &SourceDistribution,
    dmat: &DistortionMatrix,
    run: BaRun,
    beta: f64,
) -> RateDistortionSolution {
    let rate_nats = mutual_information(source, &run.channel).expect("dimensions checked");
    let expected_distortion = expected_distortion(source, &run.channel, dmat);
    RateDistortionSolution {
        channel: run.channel,
        rate_nats,
        expected_distortion,
        lagrange_beta: beta,
        iterations: run.iterations,
        converged: run.converged,
    }
}

fn check_solver_args(
    source: &SourceDistribution,
    dmat: &DistortionMatrix,
    beta: f64,
    tol: f64,
) -> Result<()> {
    check_dims(source, dmat)?;
    if beta.is_nan() || beta < 0.0 {
        return Err(Error::invalid(format!("beta {beta} must be nonnegative")));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tolerance {tol} must be positive")));
    }
    Ok(())
}

/// Blahut-Arimoto at a fixed multiplier. Hitting `max_iters` is reported
/// through `converged = false`.
pub fn blahut_arimoto(
    source: &SourceDistribution,
    dmat: &DistortionMatrix,
    beta: f64,
    tol: f64,
    max_iters: usize,
) -> Result<RateDistortionSolution> {
    check_solver_args(source, dmat, beta, tol)?;
    let run = ba_core(source, dmat, beta, tol, max_iters, None, None);
    Ok(finish(source, dmat, run, beta))
}

/// [`blahut_arimoto`] plus `F` (see the module docs) after every iteration.
pub fn blahut_arimoto_traced(
    source: &SourceDistribution,
    dmat: &DistortionMatrix,
    beta: f64,
    tol: f64,
    max_iters: usize,
) -> Result<(RateDistortionSolution, Vec<f64>)> {
    check_solver_args(source, dmat, beta, tol)?;
    let mut trace = Vec::new();
    let run = ba_core(source, dmat, beta, tol, max_iters, None, Some(&mut trace));
    Ok((finish(source, dmat, run, beta), trace))
}

/// `Σ_i p(i) min_j d(i, j)`: no channel can do better.
pub fn min_achievable_distortion(source: &SourceDistribution, dmat: &DistortionMatrix) -> Result<f64> {
    check_dims(source, dmat)?;
    Ok(source
        .probs
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(i, p)| p * dmat.row(i).iter().copied().fold(f64::INFINITY, f64::min))
        .sum())
}

/// Cheapest single codeword and its expected distortion.
fn best_single_codeword(source: &SourceDistribution, dmat: &DistortionMatrix) -> (usize, f64) {
    (0..dmat.cols)
        .map(|j| {
            let cost: f64 = source
                .probs
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(i, p)| p * dmat.get(i, j))
                .sum();
            (j, cost)
        })
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

/// Smallest-rate channel with `E[d] ≤ D`.
///
/// Returns the zero-rate channel when one codeword already meets `D`.
/// Otherwise bisects `beta` between 0 and `beta_max` (doubling `beta_max`
/// until the threshold is bracketed, falling back to `beta = ∞`), then
/// time-shares the two bracketing channels so that the constraint is met
/// with equality. Time-sharing matters where `R(D)` has a straight segment:
/// there the expected distortion jumps as `beta` crosses a critical value and
/// neither endpoint alone sits on the curve.
pub fn solve_at_threshold(
    source: &SourceDistribution,
    dmat: &DistortionMatrix,
    threshold: f64,
    tol: f64,
    max_iters: usize,
) -> Result<RateDistortionSolution> {
    check_solver_args(source, dmat, 0.0, tol)?;
    if !threshold.is_finite() || threshold < 0.0 {
        return Err(Error::invalid(format!(
            "distortion threshold {threshold} must be finite and nonnegative"
        )));
    }
    let minimum = min_achievable_distortion(source, dmat)?;
    if threshold < minimum {
        return Err(Error::Infeasible { threshold, minimum });
    }

    let (codeword, cost) = best_single_codeword(source, dmat);
    if threshold >= cost {
        let mut data = vec![0.0; source.len() * dmat.cols];
        for i in 0..source.len() {
            data[i * dmat.cols + codeword] = 1.0;
        }
        let channel = Channel::new(source.len(), dmat.cols, data)?;
        return Ok(RateDistortionSolution {
            channel,
            rate_nats: 0.0,
            expected_distortion: cost,
            lagrange_beta: 0.0,
            iterations: 0,
            converged: true,
        });
    }

    let mut total_iters = 0;
    let mut solve = |beta: f64, start: Option<&RateDistortionSolution>| {
        let start = start.map(|s| output_marginal(source, &s.channel));
        let run = ba_core(source, dmat, beta, tol, max_iters, start.as_deref(), None);
        total_iters += run.iterations;
        finish(source, dmat, run, beta)
    };

    if threshold == minimum {
        let mut sol = solve(f64::INFINITY, None);
        sol.iterations = total_iters;
        return Ok(sol);
    }

    let mut lo = solve(0.0, None);
    let mut hi_beta = DEFAULT_BETA_MAX;
    let mut hi = solve(hi_beta, None);
    let mut doublings = 0;
    while hi.expected_distortion > threshold && doublings < MAX_DOUBLINGS {
        lo = hi;
        hi_beta *= 2.0;
        hi = solve(hi_beta, Some(&lo));
        doublings += 1;
    }
    if hi.expected_distortion > threshold {
        lo = hi;
        hi = solve(f64::INFINITY, None);
    } else {
        let scale = threshold.max(1.0);
        let stop = 1e-12 * scale;
        for _ in 0..BISECTION_DEPTH {
            // the final chord between lo and hi is then within a
            // second-order term of the curve
            if threshold - hi.expected_distortion <= stop
                || lo.expected_distortion - hi.expected_distortion <= BRACKET_DIST_GAP * scale
            {
                break;
            }
            let mid_beta = 0.5 * (lo.lagrange_beta + hi.lagrange_beta);
            if hi.lagrange_beta - lo.lagrange_beta <= BRACKET_RTOL * hi.lagrange_beta {
                break;
            }
            let mid = solve(mid_beta, Some(&hi));
            if mid.expected_distortion <= threshold {
                hi = mid;
            } else {
                lo = mid;
            }
        }
    }

    let converged = lo.converged && hi.converged;
    let mut best = hi;
    let gap = lo.expected_distortion - best.expected_distortion;
    if gap > 0.0 && threshold > best.expected_distortion {
        let weight = ((threshold - best.expected_distortion) / gap).min(1.0);
        let data: Vec<f64> = lo
            .channel
            .data
            .iter()
            .zip(&best.channel.data)
            .map(|(a, b)| weight * a + (1.0 - weight) * b)
            .collect();
        let channel = Channel::new(source.len(), dmat.cols, data)?;
        let rate = mutual_information(source, &channel)?;
        let dist = expected_distortion(source, &channel, dmat);
        if dist <= threshold + threshold_slack(threshold) && rate <= best.rate_nats {
            best = RateDistortionSolution {
                channel,
                rate_nats: rate,
                expected_distortion: dist,
                lagrange_beta: best.lagrange_beta,
                iterations: 0,
                converged,
            };
        }
    }
    best.iterations = total_iters;
    best.converged = converged;
    Ok(best)
}

/// One [`solve_at_threshold`] per grid point, solved in parallel; the grid
/// must be ascending.
pub fn rd_curve(
    source: &SourceDistribution,
    dmat: &DistortionMatrix,
    grid: &[f64],
    tol: f64,
    max_iters: usize,
) -> Result<Vec<RateDistortionSolution>> {
    if grid.is_empty() {
        return Err(Error::invalid("distortion grid is empty"));
    }
    if grid.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::invalid("distortion grid must be sorted ascending"));
    }
    grid.par_iter()
        .map(|&d| solve_at_threshold(source, dmat, d, tol, max_iters))
        .collect()
}
