//! Dataset representation, ingestion, normalization, chronological splits,
//! sliding-window construction, and synthetic data generation.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corr::NeighborIndex;
use crate::error::{Error, Result};

/// Which chronological segment of a dataset an operation works on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitRange {
    Train,
    Val,
    Test,
}

impl fmt::Display for SplitRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitRange::Train => write!(f, "train"),
            SplitRange::Val => write!(f, "val"),
            SplitRange::Test => write!(f, "test"),
        }
    }
}

/// A multivariate time series: M channels observed at T time points,
/// stored channel-major, with chronological split boundaries.
#[derive(Debug, Clone)]
pub struct MtsDataset {
    values: Vec<f64>,
    channel_ids: Vec<String>,
    frequency_label: String,
    num_channels: usize,
    num_steps: usize,
    train_end: usize,
    val_end: usize,
}

impl MtsDataset {
    pub fn new(
        values: Vec<f64>,
        channel_ids: Vec<String>,
        frequency_label: impl Into<String>,
        split: (usize, usize),
    ) -> Result<Self> {
        let m = channel_ids.len();
        if m == 0 {
            return Err(Error::InvalidDataset("need at least one channel".into()));
        }
        if values.len() % m != 0 {
            return Err(Error::InvalidDataset(format!(
                "value count {} is not a multiple of channel count {m}",
                values.len()
            )));
        }
        let t = values.len() / m;
        if t < 2 {
            return Err(Error::InvalidDataset(format!(
                "need at least 2 time points, got {t}"
            )));
        }
        for (i, a) in channel_ids.iter().enumerate() {
            for b in channel_ids.iter().skip(i + 1) {
                if a == b {
                    return Err(Error::InvalidDataset(format!("duplicate channel id `{a}`")));
                }
            }
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!(
                "non-finite value for channel {} at t={}",
                pos / t,
                pos % t
            )));
        }
        let (train_end, val_end) = split;
        if !(0 < train_end && train_end < val_end && val_end <= t) {
            return Err(Error::InvalidDataset(format!(
                "split ({train_end}, {val_end}) violates 0 < train_end < val_end <= T={t}"
            )));
        }
        Ok(Self {
            values,
            channel_ids,
            frequency_label: frequency_label.into(),
            num_channels: m,
            num_steps: t,
            train_end,
            val_end,
        })
    }

    /// Recompute split boundaries from fractions (f_train, f_val).
    pub fn with_split_fractions(mut self, f_train: f64, f_val: f64) -> Result<Self> {
        let (train_end, val_end) = split_points(self.num_steps, f_train, f_val)?;
        self.train_end = train_end;
        self.val_end = val_end;
        Ok(self)
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn channel_ids(&self) -> &[String] {
        &self.channel_ids
    }

    pub fn frequency_label(&self) -> &str {
        &self.frequency_label
    }

    pub fn split(&self) -> (usize, usize) {
        (self.train_end, self.val_end)
    }

    /// All T values of one channel.
    pub fn channel(&self, c: usize) -> &[f64] {
        &self.values[c * self.num_steps..(c + 1) * self.num_steps]
    }

    pub fn value(&self, c: usize, t: usize) -> f64 {
        self.values[c * self.num_steps + t]
    }

    /// Absolute [start, end) time bounds of a split range.
    pub fn range_bounds(&self, range: SplitRange) -> (usize, usize) {
        match range {
            SplitRange::Train => (0, self.train_end),
            SplitRange::Val => (self.train_end, self.val_end),
            SplitRange::Test => (self.val_end, self.num_steps),
        }
    }

    pub fn range_len(&self, range: SplitRange) -> usize {
        let (a, b) = self.range_bounds(range);
        b - a
    }

    /// Load from CSV: header row of channel ids, one row per time step.
    pub fn from_csv(path: impl AsRef<Path>, split_fractions: (f64, f64)) -> Result<Self> {
        let path = path.as_ref();
        let err = |message: String| Error::Csv {
            path: path.display().to_string(),
            message,
        };
        let file = std::fs::File::open(path)?;
        let mut lines = BufReader::new(file).lines();

        let header = match lines.next() {
            Some(line) => line?,
            None => return Err(err("empty file".into())),
        };
        let channel_ids: Vec<String> = header
            .split(',')
            .map(|s| s.trim().to_string())
            .collect();
        if channel_ids.iter().any(|s| s.is_empty()) {
            return Err(err("header contains an empty channel id".into()));
        }
        let m = channel_ids.len();
        for (i, a) in channel_ids.iter().enumerate() {
            for b in channel_ids.iter().skip(i + 1) {
                if a == b {
                    return Err(err(format!("duplicate header id `{a}`")));
                }
            }
        }

        // rows[t][c], data rows counted from 1
        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); m];
        let mut row_no = 0usize;
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            row_no += 1;
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != m {
                return Err(err(format!(
                    "row {row_no} has {} cells, expected {m}",
                    cells.len()
                )));
            }
            for (c, cell) in cells.iter().enumerate() {
                let v: f64 = cell.trim().parse().map_err(|_| {
                    err(format!(
                        "non-numeric cell at row {row_no}, column {} (`{}`)",
                        c + 1,
                        cell.trim()
                    ))
                })?;
                if !v.is_finite() {
                    return Err(err(format!(
                        "non-finite value at row {row_no}, column {}",
                        c + 1
                    )));
                }
                columns[c].push(v);
            }
        }
        let t = row_no;
        if t < 2 {
            return Err(err(format!("need at least 2 data rows, got {t}")));
        }

        let mut values = Vec::with_capacity(m * t);
        for col in &columns {
            values.extend_from_slice(col);
        }
        let (f_train, f_val) = split_fractions;
        let split = split_points(t, f_train, f_val)?;
        Self::new(values, channel_ids, "unknown", split)
    }

    /// Write in the same CSV layout `from_csv` reads.
    pub fn to_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "{}", self.channel_ids.join(","))?;
        for t in 0..self.num_steps {
            let row: Vec<String> = (0..self.num_channels)
                .map(|c| format_num(self.value(c, t)))
                .collect();
            writeln!(out, "{}", row.join(","))?;
        }
        out.flush()?;
        Ok(())
    }
}

fn format_num(v: f64) -> String {
    // Shortest representation that round-trips exactly.
    let mut s = format!("{v}");
    if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("NaN") {
        s.push_str(".0");
    }
    s
}

fn split_points(t: usize, f_train: f64, f_val: f64) -> Result<(usize, usize)> {
    if !(f_train > 0.0 && f_val > 0.0 && f_train + f_val < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split fractions ({f_train}, {f_val}) must satisfy 0 < f_train, 0 < f_val, f_train + f_val < 1"
        )));
    }
    let train_end = (f_train * t as f64).floor() as usize;
    let val_end = ((f_train + f_val) * t as f64).floor() as usize;
    if !(0 < train_end && train_end < val_end && val_end <= t) {
        return Err(Error::InvalidArgument(format!(
            "split fractions ({f_train}, {f_val}) produce degenerate boundaries ({train_end}, {val_end}) for T={t}"
        )));
    }
    Ok((train_end, val_end))
}

/// Per-channel z-score statistics, fit on the training range only.
#[derive(Debug, Clone)]
pub struct NormalizationState {
    mean: Vec<f64>,
    std: Vec<f64>,
    epsilon: f64,
}

pub const NORM_EPSILON: f64 = 1e-8;

/// Fit per-channel mean and (population) std over `[0, train_end)`.
pub fn fit_normalizer(dataset: &MtsDataset) -> Result<NormalizationState> {
    let (_, train_end) = dataset.range_bounds(SplitRange::Train);
    if train_end < 2 {
        return Err(Error::InvalidArgument(format!(
            "normalizer needs train_end >= 2, got {train_end}"
        )));
    }
    let m = dataset.num_channels();
    let n = train_end as f64;
    let mut mean = Vec::with_capacity(m);
    let mut std = Vec::with_capacity(m);
    for c in 0..m {
        let xs = &dataset.channel(c)[..train_end];
        let mu = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
        mean.push(mu);
        std.push(var.sqrt());
    }
    Ok(NormalizationState {
        mean,
        std,
        epsilon: NORM_EPSILON,
    })
}

impl NormalizationState {
    pub fn num_channels(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self, c: usize) -> f64 {
        self.mean[c]
    }

    pub fn std(&self, c: usize) -> f64 {
        self.std[c]
    }

    fn denom(&self, c: usize) -> f64 {
        self.std[c].max(self.epsilon)
    }

    pub fn normalize_value(&self, c: usize, v: f64) -> f64 {
        (v - self.mean[c]) / self.denom(c)
    }

    pub fn denormalize_value(&self, c: usize, v: f64) -> f64 {
        v * self.denom(c) + self.mean[c]
    }

    pub fn normalize_slice(&self, c: usize, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.normalize_value(c, x)).collect()
    }
}

/// Sliding-window geometry: L past steps in, tau future steps out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub input_len: usize,
    pub horizon: usize,
    pub stride: usize,
}

impl WindowSpec {
    pub fn new(input_len: usize, horizon: usize) -> Result<Self> {
        Self::with_stride(input_len, horizon, 1)
    }

    pub fn with_stride(input_len: usize, horizon: usize, stride: usize) -> Result<Self> {
        if input_len == 0 || horizon == 0 || stride == 0 {
            return Err(Error::InvalidArgument(format!(
                "window spec fields must be positive (L={input_len}, horizon={horizon}, stride={stride})"
            )));
        }
        Ok(Self {
            input_len,
            horizon,
            stride,
        })
    }

    pub fn total_len(&self) -> usize {
        self.input_len + self.horizon
    }
}

/// Enumerate every (channel, window_start) whose full extent
/// `[start, start + L + tau)` lies inside the chosen range.
/// Ascending order: channel-major, then start.
pub fn make_windows(
    dataset: &MtsDataset,
    spec: &WindowSpec,
    range: SplitRange,
) -> Result<Vec<(usize, usize)>> {
    let starts = window_starts(dataset, spec, range)?;
    let mut out = Vec::with_capacity(dataset.num_channels() * starts.len());
    for c in 0..dataset.num_channels() {
        for &s in &starts {
            out.push((c, s));
        }
    }
    Ok(out)
}

/// Valid absolute window starts for one channel in the range.
pub fn window_starts(
    dataset: &MtsDataset,
    spec: &WindowSpec,
    range: SplitRange,
) -> Result<Vec<usize>> {
    let (lo, hi) = dataset.range_bounds(range);
    let len = hi - lo;
    let needed = spec.total_len();
    if len < needed {
        return Err(Error::RangeTooShort {
            range: range.to_string(),
            len,
            needed,
            input_len: spec.input_len,
            horizon: spec.horizon,
        });
    }
    Ok((lo..=hi - needed).step_by(spec.stride).collect())
}

/// Count of valid starts per channel: floor((range_len - L - tau) / stride) + 1.
pub fn windows_per_channel(range_len: usize, spec: &WindowSpec) -> usize {
    if range_len < spec.total_len() {
        0
    } else {
        (range_len - spec.total_len()) / spec.stride + 1
    }
}

/// One normalized training/eval sample: an L x (1+K) input block
/// (column 0 = target channel, columns 1..=K = neighbors in rank order)
/// plus the target channel's tau-step horizon.
#[derive(Debug, Clone)]
pub struct Sample {
    /// Row-major L x (1+K).
    pub inputs: Vec<f64>,
    pub width: usize,
    pub input_len: usize,
    pub target_horizon: Vec<f64>,
    pub target_channel: usize,
    pub window_start: usize,
}

impl Sample {
    pub fn input(&self, row: usize, col: usize) -> f64 {
        self.inputs[row * self.width + col]
    }
}

pub fn assemble_sample(
    dataset: &MtsDataset,
    neighbors: &NeighborIndex,
    normalizer: &NormalizationState,
    target_channel: usize,
    window_start: usize,
    spec: &WindowSpec,
) -> Result<Sample> {
    let l = spec.input_len;
    let tau = spec.horizon;
    if window_start + l + tau > dataset.num_steps() {
        return Err(Error::InvalidArgument(format!(
            "window [{window_start}, {}) exceeds T={}",
            window_start + l + tau,
            dataset.num_steps()
        )));
    }
    let neigh = neighbors
        .of(target_channel)
        .ok_or(Error::MissingNeighbors {
            channel: target_channel,
        })?;
    let width = 1 + neigh.len();

    let mut channels = Vec::with_capacity(width);
    channels.push(target_channel);
    channels.extend(neigh.iter().map(|&(c, _)| c));

    let mut inputs = vec![0.0; l * width];
    for (col, &c) in channels.iter().enumerate() {
        let window = &dataset.channel(c)[window_start..window_start + l];
        for (row, &v) in window.iter().enumerate() {
            inputs[row * width + col] = normalizer.normalize_value(c, v);
        }
    }
    let horizon_raw = &dataset.channel(target_channel)[window_start + l..window_start + l + tau];
    let target_horizon = normalizer.normalize_slice(target_channel, horizon_raw);

    Ok(Sample {
        inputs,
        width,
        input_len: l,
        target_horizon,
        target_channel,
        window_start,
    })
}

/// Recipe for a grouped synthetic dataset: channels in the same group share
/// a latent signal plus independent noise; groups are independent.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_channels: usize,
    pub num_steps: usize,
    pub num_groups: usize,
    pub intra_group_coupling: f64,
    pub noise_std: f64,
    pub lag: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_channels == 0 || self.num_steps < 2 {
            return Err(Error::InvalidArgument(
                "synthetic spec needs M >= 1 and T >= 2".into(),
            ));
        }
        if self.num_groups == 0 || self.num_groups > self.num_channels {
            return Err(Error::InvalidArgument(format!(
                "num_groups must be in [1, M] (got {} for M={})",
                self.num_groups, self.num_channels
            )));
        }
        if !(self.intra_group_coupling > 0.0 && self.intra_group_coupling <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "intra_group_coupling must be in (0, 1], got {}",
                self.intra_group_coupling
            )));
        }
        if self.noise_std < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "noise_std must be >= 0, got {}",
                self.noise_std
            )));
        }
        Ok(())
    }

    /// Group of a channel: contiguous blocks, remainder spread over the
    /// first groups. Pure function of (M, num_groups).
    pub fn group_of(&self, channel: usize) -> usize {
        let base = self.num_channels / self.num_groups;
        let rem = self.num_channels % self.num_groups;
        // first `rem` groups have base+1 channels
        let boundary = rem * (base + 1);
        if channel < boundary {
            channel / (base + 1)
        } else {
            rem + (channel - boundary) / base
        }
    }

    /// Rank of a channel inside its group (0-based).
    pub fn rank_in_group(&self, channel: usize) -> usize {
        let g = self.group_of(channel);
        let first = (0..self.num_channels)
            .find(|&c| self.group_of(c) == g)
            .unwrap();
        channel - first
    }
}

/// Generate a grouped synthetic dataset. Deterministic for a fixed spec.
///
/// Each group's latent is a standardized mixture of sinusoids with seeded
/// random periods, phases, and amplitudes. Channel j of group g is
/// `coupling * z_g(t - lag * rank_j) + noise_std * eps_j(t)`, so the default
/// split fractions are (0.7, 0.15); callers can re-split.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<MtsDataset> {
    spec.validate()?;
    let m = spec.num_channels;
    let t = spec.num_steps;

    // Independent latent per group. The group's rng is keyed off the spec
    // seed and the group id so adding groups never reshuffles earlier ones.
    let max_rank: usize = (0..m).map(|c| spec.rank_in_group(c)).max().unwrap_or(0);
    let pre = spec.lag * max_rank;
    let latents: Vec<Vec<f64>> = (0..spec.num_groups)
        .map(|g| {
            let mut rng = ChaCha8Rng::seed_from_u64(
                spec.seed
                    .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                    .wrapping_add(g as u64),
            );
            group_latent(&mut rng, pre + t)
        })
        .collect();

    let mut values = Vec::with_capacity(m * t);
    for c in 0..m {
        let g = spec.group_of(c);
        let rank = spec.rank_in_group(c);
        let offset = pre - spec.lag * rank;
        let z = &latents[g];
        let mut rng = ChaCha8Rng::seed_from_u64(
            spec.seed
                .wrapping_mul(0xA076_1D64_78BD_642F)
                .wrapping_add(1 + c as u64),
        );
        for step in 0..t {
            let noise: f64 = StandardNormal.sample(&mut rng);
            values.push(spec.intra_group_coupling * z[offset + step] + spec.noise_std * noise);
        }
    }

    let ids: Vec<String> = (0..m).map(|c| format!("s{c}")).collect();
    let (train_end, val_end) = split_points(t, 0.7, 0.15)?;
    MtsDataset::new(values, ids, "synthetic", (train_end, val_end))
}

/// Standardized sum of sinusoids: periods are drawn from a short-to-medium
/// band so a window of a few dozen steps sees real phase movement.
fn group_latent(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    const COMPONENTS: usize = 4;
    let mut parts = Vec::with_capacity(COMPONENTS);
    for _ in 0..COMPONENTS {
        let log_period = rng.random_range(12f64.ln()..48f64.ln());
        let period = log_period.exp();
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let amplitude = rng.random_range(0.5..1.0);
        parts.push((std::f64::consts::TAU / period, phase, amplitude));
    }
    let mut z: Vec<f64> = (0..len)
        .map(|i| {
            let t = i as f64;
            parts
                .iter()
                .map(|&(w, phi, a)| a * (w * t + phi).sin())
                .sum()
        })
        .collect();
    let n = len as f64;
    let mu = z.iter().sum::<f64>() / n;
    let var = z.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    let sd = var.sqrt().max(1e-12);
    for v in &mut z {
        *v = (*v - mu) / sd;
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corr;

    fn toy_dataset() -> MtsDataset {
        // 3 channels, 10 steps
        let mut values = Vec::new();
        for c in 0..3 {
            for t in 0..10 {
                values.push((c * 10 + t) as f64);
            }
        }
        MtsDataset::new(
            values,
            vec!["a".into(), "b".into(), "c".into()],
            "test",
            (6, 8),
        )
        .unwrap()
    }

    #[test]
    fn csv_round_trip_and_split_arithmetic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.csv");
        let mut body = String::from("a,b,c\n");
        for t in 0..10 {
            body.push_str(&format!("{}.5,{},{}\n", t, t * 2, t * 3));
        }
        std::fs::write(&path, body).unwrap();

        let ds = MtsDataset::from_csv(&path, (0.6, 0.2)).unwrap();
        assert_eq!(ds.num_channels(), 3);
        assert_eq!(ds.num_steps(), 10);
        assert_eq!(ds.split(), (6, 8));
        assert_eq!(ds.value(0, 3), 3.5);
        assert_eq!(ds.value(2, 9), 27.0);

        let out = dir.path().join("round.csv");
        ds.to_csv(&out).unwrap();
        let back = MtsDataset::from_csv(&out, (0.6, 0.2)).unwrap();
        assert_eq!(back.channel(1), ds.channel(1));
    }

    #[test]
    fn csv_errors_name_row_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "a,b\n1,2\n3,4\n5,6\n7,oops\n").unwrap();
        let err = MtsDataset::from_csv(&path, (0.6, 0.2)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 4, column 2"), "got: {msg}");

        let dup = dir.path().join("dup.csv");
        std::fs::write(&dup, "s1,s1\n1,2\n3,4\n").unwrap();
        let err = MtsDataset::from_csv(&dup, (0.6, 0.2)).unwrap_err();
        assert!(err.to_string().contains("duplicate header id `s1`"));

        let nan = dir.path().join("nan.csv");
        std::fs::write(&nan, "a,b\n1,2\nNaN,4\n").unwrap();
        assert!(MtsDataset::from_csv(&nan, (0.6, 0.2)).is_err());
    }

    #[test]
    fn normalizer_constant_and_two_point_channels() {
        let values = vec![
            1.0, 1.0, 1.0, 1.0, /* ch0 constant */
            0.0, 2.0, 0.0, 2.0, /* ch1 */
        ];
        let ds = MtsDataset::new(values, vec!["x".into(), "y".into()], "t", (2, 3)).unwrap();
        let norm = fit_normalizer(&ds).unwrap();
        // constant channel: mean 1, std 0, everything maps to 0
        assert_eq!(norm.mean(0), 1.0);
        assert_eq!(norm.std(0), 0.0);
        assert_eq!(norm.normalize_value(0, 1.0), 0.0);
        // [0,2]: mean 1, population std 1, normalized [-1, 1]
        assert_eq!(norm.mean(1), 1.0);
        assert_eq!(norm.std(1), 1.0);
        assert_eq!(norm.normalize_value(1, 0.0), -1.0);
        assert_eq!(norm.normalize_value(1, 2.0), 1.0);
    }

    #[test]
    fn normalized_train_range_has_zero_mean_unit_std() {
        // independent recomputation of the statistics after the transform
        let spec = SyntheticSpec {
            num_channels: 5,
            num_steps: 20,
            num_groups: 2,
            intra_group_coupling: 0.8,
            noise_std: 0.7,
            lag: 0,
            seed: 11,
        };
        let ds = generate_synthetic(&spec).unwrap();
        let norm = fit_normalizer(&ds).unwrap();
        let (_, train_end) = ds.range_bounds(SplitRange::Train);
        for c in 0..ds.num_channels() {
            let z = norm.normalize_slice(c, &ds.channel(c)[..train_end]);
            let n = z.len() as f64;
            let mean = z.iter().sum::<f64>() / n;
            let var = z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-9, "channel {c} mean {mean}");
            assert!((var - 1.0).abs() < 1e-9, "channel {c} var {var}");
        }
    }

    #[test]
    fn denormalize_round_trips() {
        let spec = SyntheticSpec {
            num_channels: 4,
            num_steps: 50,
            num_groups: 2,
            intra_group_coupling: 0.9,
            noise_std: 0.3,
            lag: 0,
            seed: 3,
        };
        let ds = generate_synthetic(&spec).unwrap();
        let norm = fit_normalizer(&ds).unwrap();
        for c in 0..4 {
            for &v in ds.channel(c) {
                let back = norm.denormalize_value(c, norm.normalize_value(c, v));
                assert!((back - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn window_counts_match_closed_form() {
        let ds = toy_dataset(); // train range [0, 6), val [6, 8), test [8, 10)
        let spec = WindowSpec::new(4, 2).unwrap();
        // train range length 6, L=4, tau=2 -> exactly 1 start per channel
        let w = make_windows(&ds, &spec, SplitRange::Train).unwrap();
        assert_eq!(w.len(), 3);
        assert_eq!(w, vec![(0, 0), (1, 0), (2, 0)]);
        // range length 5 < 6 -> error
        let short = WindowSpec::new(4, 2).unwrap();
        let ds5 = MtsDataset::new(
            (0..10).map(|v| v as f64).collect(),
            vec!["p".into(), "q".into()],
            "t",
            (3, 4),
        )
        .unwrap();
        assert!(make_windows(&ds5, &short, SplitRange::Train).is_err());
    }

    #[test]
    fn window_enumeration_matches_formula_across_random_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let t = rng.random_range(20..120);
            let train_end = rng.random_range(10..t - 4);
            let l = rng.random_range(1..8);
            let tau = rng.random_range(1..5);
            let stride = rng.random_range(1..4);
            let values: Vec<f64> = (0..2 * t).map(|v| v as f64).collect();
            let ds = MtsDataset::new(
                values,
                vec!["u".into(), "v".into()],
                "t",
                (train_end, train_end + 2),
            )
            .unwrap();
            let spec = WindowSpec::with_stride(l, tau, stride).unwrap();
            match make_windows(&ds, &spec, SplitRange::Train) {
                Ok(w) => {
                    assert_eq!(w.len(), 2 * windows_per_channel(train_end, &spec));
                    // never cross the split boundary
                    for &(_, s) in &w {
                        assert!(s + spec.total_len() <= train_end);
                    }
                }
                Err(_) => assert_eq!(windows_per_channel(train_end, &spec), 0),
            }
        }
    }

    #[test]
    fn sample_assembly_and_neighbor_order() {
        let ds = toy_dataset();
        let norm = fit_normalizer(&ds).unwrap();
        let spec = WindowSpec::new(4, 2).unwrap();

        // K=0: single column
        let empty = NeighborIndex::trivial(ds.num_channels(), 0);
        let s = assemble_sample(&ds, &empty, &norm, 1, 0, &spec).unwrap();
        assert_eq!(s.width, 1);
        assert_eq!(s.inputs.len(), 4);

        // explicit neighbor order (c2, c0) for target 1
        let ni = NeighborIndex::from_lists(vec![
            vec![(1, 0.5), (2, 0.4)],
            vec![(2, 0.9), (0, 0.1)],
            vec![(0, 0.8), (1, 0.2)],
        ])
        .unwrap();
        let s = assemble_sample(&ds, &ni, &norm, 1, 2, &spec).unwrap();
        assert_eq!(s.width, 3);
        for row in 0..4 {
            assert_eq!(s.input(row, 0), norm.normalize_value(1, ds.value(1, 2 + row)));
            assert_eq!(s.input(row, 1), norm.normalize_value(2, ds.value(2, 2 + row)));
            assert_eq!(s.input(row, 2), norm.normalize_value(0, ds.value(0, 2 + row)));
        }
        assert_eq!(
            s.target_horizon,
            norm.normalize_slice(1, &[ds.value(1, 6), ds.value(1, 7)])
        );
    }

    #[test]
    fn synthetic_noiseless_groups_are_identical() {
        let spec = SyntheticSpec {
            num_channels: 6,
            num_steps: 64,
            num_groups: 2,
            intra_group_coupling: 1.0,
            noise_std: 0.0,
            lag: 0,
            seed: 7,
        };
        let ds = generate_synthetic(&spec).unwrap();
        assert_eq!(ds.channel(0), ds.channel(1));
        assert_eq!(ds.channel(0), ds.channel(2));
        assert_eq!(ds.channel(3), ds.channel(5));
        assert_ne!(ds.channel(0), ds.channel(3));
        // pairwise correlation of identical channels is 1
        let gamma = corr::pearson_matrix(&ds, SplitRange::Train, 1).unwrap();
        assert!((gamma.get(0, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn synthetic_is_deterministic() {
        let spec = SyntheticSpec {
            num_channels: 8,
            num_steps: 100,
            num_groups: 3,
            intra_group_coupling: 0.9,
            noise_std: 0.5,
            lag: 1,
            seed: 42,
        };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        for c in 0..8 {
            assert_eq!(a.channel(c), b.channel(c));
        }
    }

    #[test]
    fn synthetic_groups_separate_in_correlation() {
        // within-group mean sample correlation must exceed cross-group,
        // measured with the brute-force oracle
        let spec = SyntheticSpec {
            num_channels: 20,
            num_steps: 400,
            num_groups: 2,
            intra_group_coupling: 0.9,
            noise_std: 0.5,
            lag: 0,
            seed: 5,
        };
        let ds = generate_synthetic(&spec).unwrap();
        let gamma = corr::naive_pearson(&ds, SplitRange::Train);
        let m = 20;
        let (mut win, mut nwin, mut cross, mut ncross) = (0.0, 0usize, 0.0, 0usize);
        for i in 0..m {
            for j in i + 1..m {
                let v = gamma[i * m + j];
                if spec.group_of(i) == spec.group_of(j) {
                    win += v;
                    nwin += 1;
                } else {
                    cross += v;
                    ncross += 1;
                }
            }
        }
        let win = win / nwin as f64;
        let cross = cross / ncross as f64;
        assert!(
            win > cross + 0.3,
            "within-group {win:.3} vs cross-group {cross:.3}"
        );
    }

    #[test]
    fn group_assignment_is_contiguous_and_balanced() {
        let spec = SyntheticSpec {
            num_channels: 10,
            num_steps: 10,
            num_groups: 3,
            intra_group_coupling: 1.0,
            noise_std: 0.0,
            lag: 0,
            seed: 0,
        };
        let groups: Vec<usize> = (0..10).map(|c| spec.group_of(c)).collect();
        assert_eq!(groups, vec![0, 0, 0, 0, 1, 1, 1, 2, 2, 2]);
        assert_eq!(spec.rank_in_group(5), 1);
    }
}
