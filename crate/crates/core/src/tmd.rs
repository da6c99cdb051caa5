//! Time-multiplexed detection: a binary tree of fibre splitters spreads one
//! pulse over `N = 2^k` time bins, each read out by a binary detector.
//!
//! Click statistics follow `p = C · L · rho`, where `L` is binomial thinning
//! (all losses lumped into one beam splitter in front of the network) and
//! `C` holds the occupancy statistics of photons over bins. Both matrices are
//! upper triangular and column-stochastic, so inversion is a pair of
//! back-substitutions.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{check_finite_nonneg, check_positive, check_unit_interval, Error, Result};
use crate::photon_stats::{CountDistribution, PhotonNumberDistribution, NORMALIZATION_TOLERANCE};

/// Default bound on multiply-adds spent building one convolution matrix.
pub const DEFAULT_WORK_BOUND: f64 = 1e11;

/// Splitter tree. `ratios` lists the power fraction sent to the first
/// (earlier) output of every internal node, in level order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplittingNetwork {
    pub stages: u32,
    pub ratios: Vec<f64>,
    #[serde(default)]
    pub base_delay_s: f64,
}

impl SplittingNetwork {
    pub fn new(stages: u32, ratios: Vec<f64>, base_delay_s: f64) -> Result<Self> {
        let network = Self {
            stages,
            ratios,
            base_delay_s,
        };
        network.validate()?;
        Ok(network)
    }

    pub fn symmetric(stages: u32) -> Self {
        Self::uniform(stages, 0.5)
    }

    /// Every splitter with the same ratio.
    pub fn uniform(stages: u32, ratio: f64) -> Self {
        Self {
            stages,
            ratios: vec![ratio; (1usize << stages) - 1],
            base_delay_s: 0.0,
        }
    }

    /// Infers the number of stages from a level-order ratio list.
    pub fn from_ratios(ratios: Vec<f64>) -> Result<Self> {
        let nodes = ratios.len() + 1;
        if !nodes.is_power_of_two() || nodes < 2 {
            return Err(Error::InvalidConfig(format!(
                "{} splitter ratios do not form a complete binary tree",
                ratios.len()
            )));
        }
        Self::new(nodes.trailing_zeros(), ratios, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 || self.stages > 16 {
            return Err(Error::InvalidConfig(format!(
                "stages must be in 1..=16, got {}",
                self.stages
            )));
        }
        let expected = (1usize << self.stages) - 1;
        if self.ratios.len() != expected {
            return Err(Error::InvalidConfig(format!(
                "{} stages need {} splitter ratios, got {}",
                self.stages,
                expected,
                self.ratios.len()
            )));
        }
        for &r in &self.ratios {
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::Domain {
                    name: "splitter ratio",
                    value: r,
                    expected: "in (0, 1)",
                });
            }
        }
        check_finite_nonneg("base_delay_s", self.base_delay_s)
    }

    /// Bins must be at least one detector dead time apart.
    pub fn validate_against_dead_time(&self, dead_time: f64) -> Result<()> {
        if self.base_delay_s < dead_time {
            return Err(Error::InvalidConfig(format!(
                "base delay {:e} s is shorter than the detector dead time {:e} s",
                self.base_delay_s, dead_time
            )));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        1 << self.stages
    }
}

/// Probability that a single photon leaves through each bin.
pub fn bin_probabilities(network: &SplittingNetwork) -> Result<Vec<f64>> {
    network.validate()?;
    let mut level = vec![1.0];
    let mut node = 0;
    for _ in 0..network.stages {
        let mut next = Vec::with_capacity(level.len() * 2);
        for &q in &level {
            let r = network.ratios[node];
            next.push(q * r);
            next.push(q * (1.0 - r));
            node += 1;
        }
        level = next;
    }
    Ok(level)
}

/// Column-stochastic matrix with `entries[m][n]` = P(m out | n in).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TransferMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(size: usize) -> Self {
        let mut m = Self::zeros(size, size);
        for i in 0..size {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_rows = rows.len();
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch("ragged matrix rows".into()));
        }
        Ok(Self {
            rows: n_rows,
            cols,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, m: usize, n: usize) -> f64 {
        self.data[m * self.cols + n]
    }

    fn set(&mut self, m: usize, n: usize, value: f64) {
        self.data[m * self.cols + n] = value;
    }

    pub fn column(&self, n: usize) -> Vec<f64> {
        (0..self.rows).map(|m| self.get(m, n)).collect()
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch(format!(
                "matrix has {} columns, vector has {} entries",
                self.cols,
                v.len()
            )));
        }
        Ok((0..self.rows)
            .map(|m| {
                self.data[m * self.cols..(m + 1) * self.cols]
                    .iter()
                    .zip(v)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect())
    }

    /// Largest deviation of a column sum from 1.
    pub fn column_sum_error(&self) -> f64 {
        (0..self.cols)
            .map(|n| (self.column(n).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Whether every entry below the diagonal (`m > n`) is zero.
    pub fn is_upper_triangular(&self) -> bool {
        (0..self.rows).all(|m| (0..self.cols.min(m)).all(|n| self.get(m, n) == 0.0))
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Row-major CSV preceded by a `# rows=R cols=C` header line.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# rows={} cols={}\n", self.rows, self.cols);
        for m in 0..self.rows {
            for n in 0..self.cols {
                if n > 0 {
                    out.push(',');
                }
                write!(out, "{}", self.get(m, n)).expect("write to String");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidConfig("empty matrix CSV".into()))?;
        let dims: Vec<usize> = header
            .trim_start_matches('#')
            .split_whitespace()
            .filter_map(|kv| kv.split_once('=').and_then(|(_, v)| v.parse().ok()))
            .collect();
        let [rows, cols] = dims[..] else {
            return Err(Error::InvalidConfig(format!("bad matrix header: {header}")));
        };
        let parsed: Vec<Vec<f64>> = lines
            .map(|l| {
                l.split(',')
                    .map(|x| {
                        x.trim().parse::<f64>().map_err(|e| {
                            Error::InvalidConfig(format!("bad matrix entry {x:?}: {e}"))
                        })
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        let m = Self::from_rows(parsed)?;
        if m.rows != rows || m.cols != cols {
            return Err(Error::DimensionMismatch(format!(
                "header says {rows}x{cols}, body is {}x{}",
                m.rows, m.cols
            )));
        }
        Ok(m)
    }
}

/// Probability vector over click count `m = 0..=N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickStatistics {
    probs: Vec<f64>,
}

impl ClickStatistics {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::DimensionMismatch("empty click statistics".into()));
        }
        for &p in &probs {
            check_unit_interval("click probability", p)?;
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::Domain {
                name: "click probability sum",
                value: sum,
                expected: "1 within 1e-9",
            });
        }
        Ok(Self { probs })
    }

    /// Normalizes raw click-count frequencies.
    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::DivisionByZero("no recorded pulses"));
        }
        Self::new(counts.iter().map(|&c| c as f64 / total as f64).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn n_bins(&self) -> usize {
        self.probs.len() - 1
    }
}

impl CountDistribution for ClickStatistics {
    fn weights(&self) -> &[f64] {
        &self.probs
    }
}

/// Result of an unconstrained deconvolution. Entries can be slightly
/// negative when the click statistics carry sampling noise.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Deconvolved {
    pub probs: Vec<f64>,
    /// Sum of the magnitudes of negative entries.
    pub negative_mass: f64,
}

impl Deconvolved {
    fn new(probs: Vec<f64>) -> Self {
        let negative_mass = probs
            .iter()
            .filter(|&&p| p < 0.0)
            .fold(0.0, |acc, p| acc - p);
        Self {
            probs,
            negative_mass,
        }
    }

    pub fn has_negative(&self) -> bool {
        self.negative_mass > 0.0
    }

    /// Euclidean projection onto the probability simplex.
    pub fn project_nonnegative(&self) -> PhotonNumberDistribution {
        let mut sorted = self.probs.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let mut cumulative = 0.0;
        let mut theta = 0.0;
        for (i, &v) in sorted.iter().enumerate() {
            cumulative += v;
            let t = (cumulative - 1.0) / (i + 1) as f64;
            if v - t > 0.0 {
                theta = t;
            }
        }
        let mut projected: Vec<f64> = self.probs.iter().map(|&v| (v - theta).max(0.0)).collect();
        let sum: f64 = projected.iter().sum();
        projected.iter_mut().for_each(|p| *p /= sum);
        PhotonNumberDistribution::new(projected).expect("projection lies on the simplex")
    }

    /// Converts to a distribution when no entry is negative.
    pub fn into_distribution(self) -> Result<PhotonNumberDistribution> {
        if self.has_negative() {
            return Err(Error::Domain {
                name: "deconvolved negative mass",
                value: self.negative_mass,
                expected: "0",
            });
        }
        let clipped = self.probs.into_iter().map(|p| p.min(1.0)).collect();
        PhotonNumberDistribution::new(clipped)
    }
}

impl CountDistribution for Deconvolved {
    fn weights(&self) -> &[f64] {
        &self.probs
    }
}

struct LogFactorials(Vec<f64>);

impl LogFactorials {
    fn new(n_max: usize) -> Self {
        let mut table = Vec::with_capacity(n_max + 1);
        let mut acc = 0.0f64;
        table.push(0.0);
        for k in 1..=n_max {
            acc += (k as f64).ln();
            table.push(acc);
        }
        Self(table)
    }

    /// `Binomial(n, p)` pmf over `0..=n`.
    fn binomial_row(&self, n: usize, p: f64) -> Vec<f64> {
        if p == 0.0 || p == 1.0 {
            let mut row = vec![0.0; n + 1];
            row[if p == 0.0 { 0 } else { n }] = 1.0;
            return row;
        }
        let (lp, lq) = (p.ln(), (-p).ln_1p());
        (0..=n)
            .map(|c| {
                (self.0[n] - self.0[c] - self.0[n - c] + c as f64 * lp + (n - c) as f64 * lq).exp()
            })
            .collect()
    }
}

/// Rough multiply-add count of [`convolution_matrix`].
pub fn convolution_work(network: &SplittingNetwork, n_max: usize) -> f64 {
    let n = (n_max + 1) as f64;
    (1..=network.stages)
        .map(|level| {
            // 2^(stages-level) nodes whose children each span 2^(level-1) bins
            let nodes = (1u64 << (network.stages - level)) as f64;
            let child = ((1u64 << (level - 1)) + 1) as f64;
            nodes * n * n * child * child / 2.0
        })
        .sum()
}

/// Exact convolution matrix of a splitter tree with arbitrary ratios.
pub fn convolution_matrix(network: &SplittingNetwork, n_max: usize) -> Result<TransferMatrix> {
    convolution_matrix_bounded(network, n_max, DEFAULT_WORK_BOUND)
}

/// [`convolution_matrix`] with an explicit work bound.
///
/// Works bottom-up over the tree: a node's table holds P(m occupied bins |
/// n photons enter the node) and is obtained from its children's tables by
/// splitting the photons binomially at the node's ratio and convolving the
/// occupied-bin counts.
pub fn convolution_matrix_bounded(
    network: &SplittingNetwork,
    n_max: usize,
    max_work: f64,
) -> Result<TransferMatrix> {
    network.validate()?;
    let work = convolution_work(network, n_max);
    if work > max_work {
        return Err(Error::Capacity(format!(
            "convolution matrix for n_max = {n_max} needs ~{work:e} operations (bound {max_work:e})"
        )));
    }
    let lf = LogFactorials::new(n_max);

    // table[n][m]; a leaf is occupied iff at least one photon arrives
    let leaf: Vec<Vec<f64>> = (0..=n_max)
        .map(|n| {
            if n == 0 {
                vec![1.0, 0.0]
            } else {
                vec![0.0, 1.0]
            }
        })
        .collect();
    let mut level: Vec<Vec<Vec<f64>>> = vec![leaf; network.n_bins()];
    let mut width = 1;
    // nodes of the deepest internal level come last in level order
    for depth in (0..network.stages).rev() {
        let first = (1usize << depth) - 1;
        let next_width = width * 2;
        level = level
            .chunks(2)
            .enumerate()
            .map(|(i, pair)| {
                let ratio = network.ratios[first + i];
                merge_children(&pair[0], &pair[1], ratio, n_max, next_width, &lf)
            })
            .collect();
        width = next_width;
    }
    let root = &level[0];
    let n_bins = network.n_bins();
    let mut matrix = TransferMatrix::zeros(n_bins + 1, n_max + 1);
    for (n, row) in root.iter().enumerate() {
        for (m, &p) in row.iter().enumerate() {
            matrix.set(m, n, p);
        }
    }
    Ok(matrix)
}

fn merge_children(
    left: &[Vec<f64>],
    right: &[Vec<f64>],
    ratio: f64,
    n_max: usize,
    width: usize,
    lf: &LogFactorials,
) -> Vec<Vec<f64>> {
    (0..=n_max)
        .map(|n| {
            let split = lf.binomial_row(n, ratio);
            let mut out = vec![0.0; width + 1];
            for (c, &w) in split.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let (l, r) = (&left[c], &right[n - c]);
                for (m1, &a) in l.iter().enumerate() {
                    if a == 0.0 {
                        continue;
                    }
                    for (m2, &b) in r.iter().enumerate() {
                        out[m1 + m2] += w * a * b;
                    }
                }
            }
            out
        })
        .collect()
}

/// Closed-form occupancy matrix for `n_bins` equally likely bins,
/// `C[m][n] = binom(N, m) sum_j (-1)^j binom(m, j) ((m - j) / N)^n`.
///
/// The alternating sum cancels badly once `N` and `n` grow past a few tens;
/// use [`convolution_matrix`] there.
pub fn convolution_matrix_symmetric(n_bins: usize, n_max: usize) -> Result<TransferMatrix> {
    if n_bins == 0 {
        return Err(Error::InvalidConfig("need at least one bin".into()));
    }
    let nf = n_bins as f64;
    let mut matrix = TransferMatrix::zeros(n_bins + 1, n_max + 1);
    for n in 0..=n_max {
        for m in 0..=n_bins.min(n) {
            let mut sum = 0.0;
            for j in 0..=m {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                sum += sign * binomial(m, j) * ((m - j) as f64 / nf).powi(n as i32);
            }
            matrix.set(m, n, binomial(n_bins, m) * sum);
        }
    }
    Ok(matrix)
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Binomial thinning, `L[m][n] = binom(n, m) t^m (1 - t)^(n - m)`.
pub fn loss_matrix(transmission: f64, n_max: usize) -> Result<TransferMatrix> {
    check_unit_interval("transmission", transmission)?;
    let lf = LogFactorials::new(n_max);
    let mut matrix = TransferMatrix::zeros(n_max + 1, n_max + 1);
    for n in 0..=n_max {
        for (m, p) in lf.binomial_row(n, transmission).into_iter().enumerate() {
            matrix.set(m, n, p);
        }
    }
    Ok(matrix)
}

/// `p = C · (L · rho)`.
pub fn forward_click_statistics(
    rho: &PhotonNumberDistribution,
    convolution: &TransferMatrix,
    loss: &TransferMatrix,
) -> Result<ClickStatistics> {
    if loss.rows() != loss.cols() || loss.cols() != rho.probs().len() {
        return Err(Error::DimensionMismatch(format!(
            "loss matrix {}x{} vs distribution of length {}",
            loss.rows(),
            loss.cols(),
            rho.probs().len()
        )));
    }
    if convolution.cols() != loss.rows() {
        return Err(Error::DimensionMismatch(format!(
            "convolution matrix has {} columns, loss matrix {} rows",
            convolution.cols(),
            loss.rows()
        )));
    }
    let surviving = loss.apply(rho.probs())?;
    let mut p = convolution.apply(&surviving)?;
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(Error::Truncation {
            tail: 1.0 - sum,
            tolerance: NORMALIZATION_TOLERANCE,
            n_max: rho.n_max(),
        });
    }
    p.iter_mut().for_each(|x| *x = (*x / sum).clamp(0.0, 1.0));
    ClickStatistics::new(p)
}

/// Solves `C x = p`, then `L rho = x`, by back-substitution.
///
/// `C` must be square up to `n_max <= N` (`cols <= rows`); click counts
/// above `n_max` are not used.
pub fn deconvolve(
    p: &ClickStatistics,
    convolution: &TransferMatrix,
    loss: &TransferMatrix,
) -> Result<Deconvolved> {
    let size = convolution.cols();
    if size > convolution.rows() {
        return Err(Error::Underdetermined {
            n_max: size - 1,
            n_bins: convolution.rows() - 1,
        });
    }
    if p.probs().len() != convolution.rows() {
        return Err(Error::DimensionMismatch(format!(
            "{} click probabilities for a matrix with {} rows",
            p.probs().len(),
            convolution.rows()
        )));
    }
    if loss.rows() != size || loss.cols() != size {
        return Err(Error::DimensionMismatch(format!(
            "loss matrix {}x{} vs convolution matrix with {} columns",
            loss.rows(),
            loss.cols(),
            size
        )));
    }
    if (1..size).any(|n| loss.get(n, n) == 0.0) {
        return Err(Error::SingularLoss);
    }
    let x = back_substitute(convolution, &p.probs()[..size])?;
    let rho = back_substitute(loss, &x)?;
    Ok(Deconvolved::new(rho))
}

// Upper-triangular solve on the leading square block.
fn back_substitute(matrix: &TransferMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    let size = rhs.len();
    let mut x = vec![0.0; size];
    for i in (0..size).rev() {
        let diag = matrix.get(i, i);
        if diag == 0.0 {
            return Err(Error::SingularFit(format!("zero pivot at row {i}")));
        }
        let acc: f64 = ((i + 1)..size).map(|j| matrix.get(i, j) * x[j]).sum();
        x[i] = (rhs[i] - acc) / diag;
    }
    Ok(x)
}

/// Adds independent dark clicks: every bin not fired by a photon still
/// clicks with probability `per_bin`.
pub fn with_dark_clicks(p: &ClickStatistics, per_bin: f64) -> Result<ClickStatistics> {
    check_unit_interval("dark click probability", per_bin)?;
    let n_bins = p.n_bins();
    let lf = LogFactorials::new(n_bins);
    let mut out = vec![0.0; n_bins + 1];
    for (k, &pk) in p.probs().iter().enumerate() {
        for (j, w) in lf.binomial_row(n_bins - k, per_bin).into_iter().enumerate() {
            out[k + j] += pk * w;
        }
    }
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x = (*x / sum).clamp(0.0, 1.0));
    ClickStatistics::new(out)
}

/// Mean clicks per pulse for coherent light on an `N`-bin symmetric
/// detector: `N (1 - exp(-mu / N)) + dark_rate / f_rep`.
pub fn expected_mean_clicks(mu_eff: f64, n_bins: usize, dark_rate: f64, f_rep: f64) -> Result<f64> {
    if n_bins == 0 {
        return Err(Error::InvalidConfig("need at least one bin".into()));
    }
    check_positive("f_rep", f_rep)?;
    check_finite_nonneg("dark_rate", dark_rate)?;
    if !(mu_eff >= 0.0) {
        return Err(Error::Domain {
            name: "mu_eff",
            value: mu_eff,
            expected: ">= 0",
        });
    }
    let n = n_bins as f64;
    Ok(n * -(-mu_eff / n).exp_m1() + dark_rate / f_rep)
}

/// Largest entry difference between the convolution matrices of two splitter
/// trees of the same depth.
pub fn splitting_ratio_sensitivity(
    ratios_a: &[f64],
    ratios_b: &[f64],
    n_max: usize,
) -> Result<f64> {
    let a = SplittingNetwork::from_ratios(ratios_a.to_vec())?;
    let b = SplittingNetwork::from_ratios(ratios_b.to_vec())?;
    if a.stages != b.stages {
        return Err(Error::DimensionMismatch(format!(
            "networks have {} and {} stages",
            a.stages, b.stages
        )));
    }
    convolution_matrix(&a, n_max)?.max_abs_diff(&convolution_matrix(&b, n_max)?)
}
