//! Pairwise Pearson correlation over M channels, the per-channel ranking,
//! and top-K neighbor selection.
//!
//! The parallel engine computes each unordered pair exactly once with a
//! fixed left-to-right summation over time, so its output is bit-identical
//! for any worker count. A deliberately naive O(M^2 T) two-loop oracle is
//! kept alongside it for verification and benchmarking.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{MtsDataset, SplitRange};
use crate::error::{Error, Result};

/// Symmetric M x M Pearson matrix with the time span it was computed on.
#[derive(Debug, Clone)]
pub struct CorrelationMatrix {
    gamma: Vec<f64>,
    m: usize,
    pub source_range: (usize, usize),
}

impl CorrelationMatrix {
    pub fn from_raw(gamma: Vec<f64>, m: usize, source_range: (usize, usize)) -> Result<Self> {
        if gamma.len() != m * m {
            return Err(Error::InvalidArgument(format!(
                "gamma length {} != M^2 for M={m}",
                gamma.len()
            )));
        }
        Ok(Self {
            gamma,
            m,
            source_range,
        })
    }

    pub fn num_channels(&self) -> usize {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.gamma[i * self.m + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.gamma[i * self.m..(i + 1) * self.m]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.gamma
    }

    /// Export as CSV with a header row of channel ids.
    pub fn write_csv(&self, ids: &[String], path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "{}", ids.join(","))?;
        for i in 0..self.m {
            let row: Vec<String> = self.row(i).iter().map(|v| format!("{v}")).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// How rows of the correlation matrix are ranked for neighbor selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoreMode {
    /// Largest signed correlation first (default).
    Signed,
    /// Largest |correlation| first.
    Absolute,
}

impl ScoreMode {
    fn score(self, v: f64) -> f64 {
        match self {
            ScoreMode::Signed => v,
            ScoreMode::Absolute => v.abs(),
        }
    }
}

impl std::str::FromStr for ScoreMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "signed" => Ok(ScoreMode::Signed),
            "absolute" => Ok(ScoreMode::Absolute),
            other => Err(Error::Config(format!(
                "unknown score mode `{other}` (expected signed|absolute)"
            ))),
        }
    }
}

/// For each channel, its K most related channels in rank order
/// (descending score, ties broken by ascending channel index).
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborIndex {
    lists: Vec<Vec<(usize, f64)>>,
    k: usize,
}

impl NeighborIndex {
    /// K=0 index: every channel has an empty neighbor list.
    pub fn trivial(m: usize, k: usize) -> Self {
        assert_eq!(k, 0, "trivial index only supports K=0");
        Self {
            lists: vec![Vec::new(); m],
            k: 0,
        }
    }

    pub fn from_lists(lists: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let m = lists.len();
        let k = lists.first().map_or(0, |l| l.len());
        for (c, list) in lists.iter().enumerate() {
            if list.len() != k {
                return Err(Error::InvalidArgument(format!(
                    "channel {c} has {} neighbors, expected {k}",
                    list.len()
                )));
            }
            if list.iter().any(|&(n, _)| n == c) {
                return Err(Error::InvalidArgument(format!(
                    "channel {c} lists itself as a neighbor"
                )));
            }
            if list.iter().any(|&(n, _)| n >= m) {
                return Err(Error::InvalidArgument(format!(
                    "channel {c} has a neighbor index out of range"
                )));
            }
        }
        if k >= m && m > 0 && k > 0 {
            return Err(Error::KTooLarge { k, m });
        }
        Ok(Self { lists, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_channels(&self) -> usize {
        self.lists.len()
    }

    pub fn of(&self, channel: usize) -> Option<&[(usize, f64)]> {
        self.lists.get(channel).map(|v| v.as_slice())
    }

    /// One line per channel: `channel_id: id1=corr1, id2=corr2, ...`.
    pub fn write_text(&self, ids: &[String], path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for (c, list) in self.lists.iter().enumerate() {
            let entries: Vec<String> = list
                .iter()
                .map(|&(n, v)| format!("{}={v}", ids[n]))
                .collect();
            writeln!(out, "{}: {}", ids[c], entries.join(", "))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_text(ids: &[String], path: impl AsRef<Path>) -> Result<Self> {
        let index_of = |id: &str| -> Result<usize> {
            ids.iter().position(|x| x == id).ok_or_else(|| {
                Error::InvalidArgument(format!("unknown channel id `{id}` in neighbor file"))
            })
        };
        let file = std::fs::File::open(path)?;
        let mut lists = vec![Vec::new(); ids.len()];
        for line in BufReader::new(file).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (head, rest) = line.split_once(':').ok_or_else(|| {
                Error::InvalidArgument(format!("malformed neighbor line `{line}`"))
            })?;
            let c = index_of(head.trim())?;
            let mut list = Vec::new();
            for entry in rest.split(',').filter(|e| !e.trim().is_empty()) {
                let (id, val) = entry.split_once('=').ok_or_else(|| {
                    Error::InvalidArgument(format!("malformed neighbor entry `{entry}`"))
                })?;
                let v: f64 = val.trim().parse().map_err(|_| {
                    Error::InvalidArgument(format!("bad correlation value `{}`", val.trim()))
                })?;
                list.push((index_of(id.trim())?, v));
            }
            lists[c] = list;
        }
        Self::from_lists(lists)
    }
}

/// Centered channels plus their deviation norms over a range.
struct Centered {
    data: Vec<f64>,
    norms: Vec<f64>,
    m: usize,
    len: usize,
}

fn center(dataset: &MtsDataset, range: SplitRange) -> Centered {
    let (lo, hi) = dataset.range_bounds(range);
    let len = hi - lo;
    let m = dataset.num_channels();
    let mut data = Vec::with_capacity(m * len);
    let mut norms = Vec::with_capacity(m);
    for c in 0..m {
        let xs = &dataset.channel(c)[lo..hi];
        let mean = xs.iter().sum::<f64>() / len as f64;
        let mut ss = 0.0;
        for &x in xs {
            let d = x - mean;
            data.push(d);
            ss += d * d;
        }
        norms.push(ss.sqrt());
    }
    Centered { data, norms, m, len }
}

/// Pair index p in row-major upper-triangle order -> (i, j), i < j.
fn pair_at(mut p: usize, m: usize) -> (usize, usize) {
    let mut i = 0;
    while p >= m - 1 - i {
        p -= m - 1 - i;
        i += 1;
    }
    (i, i + 1 + p)
}

fn fill_pairs(out: &mut [f64], first_pair: usize, c: &Centered) {
    let (mut i, mut j) = pair_at(first_pair, c.m);
    for slot in out.iter_mut() {
        let xi = &c.data[i * c.len..(i + 1) * c.len];
        let xj = &c.data[j * c.len..(j + 1) * c.len];
        let denom = c.norms[i] * c.norms[j];
        *slot = if denom == 0.0 {
            0.0
        } else {
            let mut cov = 0.0;
            for t in 0..c.len {
                cov += xi[t] * xj[t];
            }
            (cov / denom).clamp(-1.0, 1.0)
        };
        j += 1;
        if j == c.m {
            i += 1;
            j = i + 1;
        }
    }
}

/// Sample Pearson correlation of every channel pair over the given range.
///
/// Work is partitioned into contiguous blocks of unordered pairs, one block
/// per worker; each pair is accumulated left-to-right over time by exactly
/// one worker, so the result does not depend on `workers`. Pairs involving
/// a zero-variance channel are defined as 0, including the diagonal.
pub fn pearson_matrix(
    dataset: &MtsDataset,
    range: SplitRange,
    workers: usize,
) -> Result<CorrelationMatrix> {
    if workers == 0 {
        return Err(Error::InvalidArgument("workers must be positive".into()));
    }
    if dataset.range_len(range) < 3 {
        return Err(Error::InvalidArgument(format!(
            "correlation needs a range of length >= 3, got {}",
            dataset.range_len(range)
        )));
    }
    let c = center(dataset, range);
    let m = c.m;
    let n_pairs = m * (m - 1) / 2;
    let mut tri = vec![0.0f64; n_pairs];

    if n_pairs > 0 {
        let block = n_pairs.div_ceil(workers.min(n_pairs));
        std::thread::scope(|scope| {
            for (w, chunk) in tri.chunks_mut(block).enumerate() {
                let c = &c;
                scope.spawn(move || fill_pairs(chunk, w * block, c));
            }
        });
    }

    let mut gamma = vec![0.0f64; m * m];
    for i in 0..m {
        gamma[i * m + i] = if c.norms[i] == 0.0 { 0.0 } else { 1.0 };
    }
    let mut p = 0;
    for i in 0..m {
        for j in i + 1..m {
            gamma[i * m + j] = tri[p];
            gamma[j * m + i] = tri[p];
            p += 1;
        }
    }
    CorrelationMatrix::from_raw(gamma, m, dataset.range_bounds(range))
}

/// Naive two-loop Pearson oracle: every one of the M^2 cells is computed
/// independently from scratch. Slow on purpose; the engine is checked
/// against it.
pub fn naive_pearson(dataset: &MtsDataset, range: SplitRange) -> Vec<f64> {
    let (lo, hi) = dataset.range_bounds(range);
    let n = (hi - lo) as f64;
    let m = dataset.num_channels();
    let mut gamma = vec![0.0f64; m * m];
    for i in 0..m {
        for j in 0..m {
            let xs = &dataset.channel(i)[lo..hi];
            let ys = &dataset.channel(j)[lo..hi];
            let mx = xs.iter().sum::<f64>() / n;
            let my = ys.iter().sum::<f64>() / n;
            let mut cov = 0.0;
            let mut vx = 0.0;
            let mut vy = 0.0;
            for t in 0..xs.len() {
                let dx = xs[t] - mx;
                let dy = ys[t] - my;
                cov += dx * dy;
                vx += dx * dx;
                vy += dy * dy;
            }
            let denom = (vx * vy).sqrt();
            gamma[i * m + j] = if denom == 0.0 { 0.0 } else { cov / denom };
        }
    }
    gamma
}

fn ranked_neighbors(
    corr: &CorrelationMatrix,
    channel: usize,
    k: usize,
    mode: ScoreMode,
    lowest: bool,
) -> Vec<(usize, f64)> {
    let row = corr.row(channel);
    let mut candidates: Vec<usize> = (0..corr.num_channels()).filter(|&j| j != channel).collect();
    let better = |a: usize, b: usize| -> std::cmp::Ordering {
        let (sa, sb) = (mode.score(row[a]), mode.score(row[b]));
        let ord = if lowest {
            sa.partial_cmp(&sb).unwrap()
        } else {
            sb.partial_cmp(&sa).unwrap()
        };
        ord.then(a.cmp(&b))
    };
    // partial selection of the k best, then an exact sort of just that prefix
    if k < candidates.len() {
        candidates.select_nth_unstable_by(k, |&a, &b| better(a, b));
        candidates.truncate(k);
    }
    candidates.sort_unstable_by(|&a, &b| better(a, b));
    candidates.into_iter().map(|j| (j, row[j])).collect()
}

/// The K channels with the largest ranking score per channel, self excluded,
/// ties broken by ascending channel index.
pub fn top_k_neighbors(corr: &CorrelationMatrix, k: usize, mode: ScoreMode) -> Result<NeighborIndex> {
    let m = corr.num_channels();
    if k >= m {
        return Err(Error::KTooLarge { k, m });
    }
    if k == 0 {
        return Ok(NeighborIndex::trivial(m, 0));
    }
    let lists = (0..m)
        .map(|c| ranked_neighbors(corr, c, k, mode, false))
        .collect();
    Ok(NeighborIndex { lists, k })
}

/// The K lowest-ranked channels per channel (most unrelated first).
/// Used by the `unrelated` ablation.
pub fn bottom_k_neighbors(
    corr: &CorrelationMatrix,
    k: usize,
    mode: ScoreMode,
) -> Result<NeighborIndex> {
    let m = corr.num_channels();
    if k >= m {
        return Err(Error::KTooLarge { k, m });
    }
    if k == 0 {
        return Ok(NeighborIndex::trivial(m, 0));
    }
    let lists = (0..m)
        .map(|c| ranked_neighbors(corr, c, k, mode, true))
        .collect();
    Ok(NeighborIndex { lists, k })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchRun {
    pub workers: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrBenchReport {
    pub num_channels: usize,
    pub range_len: usize,
    pub oracle_seconds: f64,
    pub runs: Vec<BenchRun>,
    /// Set only after every engine run was checked against the oracle.
    pub correctness_verified: bool,
}

impl CorrBenchReport {
    pub fn best_speedup(&self) -> f64 {
        self.runs
            .iter()
            .map(|r| self.oracle_seconds / r.seconds)
            .fold(0.0, f64::max)
    }
}

/// Time the serial oracle against the parallel engine at each worker count.
/// All outputs are verified equal before any timing is reported; a mismatch
/// is a hard failure.
pub fn benchmark_correlation(
    dataset: &MtsDataset,
    range: SplitRange,
    workers_list: &[usize],
) -> Result<CorrBenchReport> {
    let t0 = Instant::now();
    let oracle = naive_pearson(dataset, range);
    let oracle_seconds = t0.elapsed().as_secs_f64();

    let m = dataset.num_channels();
    let mut runs = Vec::with_capacity(workers_list.len());
    let mut reference: Option<Vec<f64>> = None;
    for &w in workers_list {
        let t0 = Instant::now();
        let engine = pearson_matrix(dataset, range, w)?;
        let seconds = t0.elapsed().as_secs_f64();
        for i in 0..m {
            for j in 0..m {
                let (e, o) = (engine.get(i, j), oracle[i * m + j]);
                if (e - o).abs() > 1e-10 {
                    return Err(Error::BenchMismatch {
                        i,
                        j,
                        engine: e,
                        oracle: o,
                    });
                }
            }
        }
        match &reference {
            None => reference = Some(engine.as_slice().to_vec()),
            Some(r) => {
                if let Some(pos) = (0..m * m).find(|&p| engine.as_slice()[p] != r[p]) {
                    return Err(Error::BenchMismatch {
                        i: pos / m,
                        j: pos % m,
                        engine: engine.as_slice()[pos],
                        oracle: r[pos],
                    });
                }
            }
        }
        runs.push(BenchRun {
            workers: w,
            seconds,
        });
    }

    Ok(CorrBenchReport {
        num_channels: m,
        range_len: dataset.range_len(range),
        oracle_seconds,
        runs,
        correctness_verified: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, MtsDataset, SyntheticSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dataset(m: usize, t: usize, seed: u64) -> MtsDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f64> = (0..m * t).map(|_| rng.random_range(-3.0..3.0)).collect();
        let ids = (0..m).map(|c| format!("s{c}")).collect();
        MtsDataset::new(values, ids, "test", (t - 2, t - 1)).unwrap()
    }

    /// Full-sort reference for neighbor selection.
    fn full_sort_oracle(
        corr: &CorrelationMatrix,
        k: usize,
        mode: ScoreMode,
    ) -> Vec<Vec<(usize, f64)>> {
        let m = corr.num_channels();
        (0..m)
            .map(|c| {
                let row = corr.row(c);
                let mut all: Vec<usize> = (0..m).filter(|&j| j != c).collect();
                all.sort_by(|&a, &b| {
                    mode.score(row[b])
                        .partial_cmp(&mode.score(row[a]))
                        .unwrap()
                        .then(a.cmp(&b))
                });
                all.truncate(k);
                all.into_iter().map(|j| (j, row[j])).collect()
            })
            .collect()
    }

    #[test]
    fn identical_and_anti_correlated_channels() {
        let t = 12;
        let base: Vec<f64> = (0..t).map(|i| (i as f64 * 0.7).sin()).collect();
        let mut values = base.clone();
        values.extend(base.iter().map(|v| 5.0 - 2.0 * v)); // anti after centering
        values.extend(base.iter().map(|v| v * 3.0 + 1.0)); // identical up to affine
        let ds = MtsDataset::new(
            values,
            vec!["a".into(), "b".into(), "c".into()],
            "t",
            (t - 2, t - 1),
        )
        .unwrap();
        let g = pearson_matrix(&ds, SplitRange::Train, 1).unwrap();
        assert!((g.get(0, 2) - 1.0).abs() < 1e-12);
        assert!((g.get(0, 1) + 1.0).abs() < 1e-12);
        assert_eq!(g.get(0, 0), 1.0);
    }

    #[test]
    fn engine_matches_naive_oracle_and_is_worker_independent() {
        for seed in 0..5 {
            let ds = random_dataset(50, 100, seed);
            let oracle = naive_pearson(&ds, SplitRange::Train);
            let base = pearson_matrix(&ds, SplitRange::Train, 1).unwrap();
            for &w in &[2usize, 3, 8] {
                let g = pearson_matrix(&ds, SplitRange::Train, w).unwrap();
                assert_eq!(g.as_slice(), base.as_slice(), "workers={w} not bit-identical");
            }
            let m = 50;
            for i in 0..m {
                for j in 0..m {
                    assert!(
                        (base.get(i, j) - oracle[i * m + j]).abs() < 1e-10,
                        "mismatch at ({i},{j})"
                    );
                }
            }
        }
    }

    #[test]
    fn zero_variance_channel_correlates_to_zero() {
        let t = 10;
        let mut values: Vec<f64> = (0..t).map(|i| i as f64).collect();
        values.extend(std::iter::repeat_n(4.2, t));
        let ds = MtsDataset::new(values, vec!["x".into(), "k".into()], "t", (t - 2, t - 1)).unwrap();
        let g = pearson_matrix(&ds, SplitRange::Train, 2).unwrap();
        assert_eq!(g.get(0, 1), 0.0);
        assert_eq!(g.get(1, 0), 0.0);
        assert_eq!(g.get(1, 1), 0.0);
        assert_eq!(g.get(0, 0), 1.0);
    }

    #[test]
    fn affine_rescaling_leaves_row_and_neighbors_unchanged() {
        let ds = random_dataset(10, 60, 7);
        let g1 = pearson_matrix(&ds, SplitRange::Train, 2).unwrap();
        let n1 = top_k_neighbors(&g1, 3, ScoreMode::Signed).unwrap();

        // rescale channel 4 by a=2.5, b=-7
        let m = 10;
        let t = 60;
        let mut values = Vec::with_capacity(m * t);
        for c in 0..m {
            for &v in ds.channel(c) {
                values.push(if c == 4 { 2.5 * v - 7.0 } else { v });
            }
        }
        let ds2 = MtsDataset::new(values, ds.channel_ids().to_vec(), "t", ds.split()).unwrap();
        let g2 = pearson_matrix(&ds2, SplitRange::Train, 2).unwrap();
        for j in 0..m {
            assert!((g1.get(4, j) - g2.get(4, j)).abs() < 1e-10);
        }
        let n2 = top_k_neighbors(&g2, 3, ScoreMode::Signed).unwrap();
        let idx1: Vec<usize> = n1.of(4).unwrap().iter().map(|&(j, _)| j).collect();
        let idx2: Vec<usize> = n2.of(4).unwrap().iter().map(|&(j, _)| j).collect();
        assert_eq!(idx1, idx2);
    }

    #[test]
    fn top_k_forced_ordering() {
        let gamma = vec![
            1.0, 0.9, 0.1, //
            0.9, 1.0, 0.3, //
            0.1, 0.3, 1.0,
        ];
        let corr = CorrelationMatrix::from_raw(gamma, 3, (0, 10)).unwrap();
        let ni = top_k_neighbors(&corr, 1, ScoreMode::Signed).unwrap();
        assert_eq!(ni.of(0).unwrap(), &[(1, 0.9)]);
        assert_eq!(ni.of(2).unwrap(), &[(1, 0.3)]);
        // K = M-1: every other channel appears exactly once
        let all = top_k_neighbors(&corr, 2, ScoreMode::Signed).unwrap();
        for c in 0..3 {
            let mut idx: Vec<usize> = all.of(c).unwrap().iter().map(|&(j, _)| j).collect();
            idx.sort_unstable();
            let expect: Vec<usize> = (0..3).filter(|&j| j != c).collect();
            assert_eq!(idx, expect);
        }
        // K >= M rejected
        assert!(matches!(
            top_k_neighbors(&corr, 3, ScoreMode::Signed),
            Err(Error::KTooLarge { k: 3, m: 3 })
        ));
    }

    #[test]
    fn top_k_matches_full_sort_oracle_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let m = 50;
            let mut gamma = vec![0.0; m * m];
            for i in 0..m {
                gamma[i * m + i] = 1.0;
                for j in i + 1..m {
                    // quantized so ties actually occur
                    let v = (rng.random_range(-1.0f64..1.0) * 10.0).round() / 10.0;
                    gamma[i * m + j] = v;
                    gamma[j * m + i] = v;
                }
            }
            let corr = CorrelationMatrix::from_raw(gamma, m, (0, 100)).unwrap();
            for &k in &[1usize, 5, 49] {
                for mode in [ScoreMode::Signed, ScoreMode::Absolute] {
                    let engine = top_k_neighbors(&corr, k, mode).unwrap();
                    let oracle = full_sort_oracle(&corr, k, mode);
                    for c in 0..m {
                        assert_eq!(engine.of(c).unwrap(), oracle[c].as_slice(), "k={k} c={c}");
                    }
                }
            }
        }
    }

    #[test]
    fn bottom_k_picks_most_unrelated() {
        let gamma = vec![
            1.0, 0.9, 0.1, -0.5, //
            0.9, 1.0, 0.3, 0.0, //
            0.1, 0.3, 1.0, 0.2, //
            -0.5, 0.0, 0.2, 1.0,
        ];
        let corr = CorrelationMatrix::from_raw(gamma, 4, (0, 10)).unwrap();
        let ni = bottom_k_neighbors(&corr, 2, ScoreMode::Signed).unwrap();
        assert_eq!(ni.of(0).unwrap(), &[(3, -0.5), (2, 0.1)]);
    }

    #[test]
    fn neighbor_text_round_trip() {
        let ds = random_dataset(6, 40, 3);
        let g = pearson_matrix(&ds, SplitRange::Train, 1).unwrap();
        let ni = top_k_neighbors(&g, 2, ScoreMode::Signed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("neighbors.txt");
        ni.write_text(ds.channel_ids(), &path).unwrap();
        let back = NeighborIndex::read_text(ds.channel_ids(), &path).unwrap();
        assert_eq!(back.k(), 2);
        for c in 0..6 {
            let a: Vec<usize> = ni.of(c).unwrap().iter().map(|&(j, _)| j).collect();
            let b: Vec<usize> = back.of(c).unwrap().iter().map(|&(j, _)| j).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn benchmark_verifies_and_reports() {
        let spec = SyntheticSpec {
            num_channels: 60,
            num_steps: 80,
            num_groups: 4,
            intra_group_coupling: 0.9,
            noise_std: 0.4,
            lag: 0,
            seed: 2,
        };
        let ds = generate_synthetic(&spec).unwrap();
        let report = benchmark_correlation(&ds, SplitRange::Train, &[1, 2]).unwrap();
        assert!(report.correctness_verified);
        assert_eq!(report.runs.len(), 2);
        assert!(report.oracle_seconds > 0.0);
    }

    #[test]
    fn pair_partition_covers_every_pair_once() {
        // decode check: walking pair indices reproduces {(i,j): i<j}
        for m in [2usize, 3, 5, 17] {
            let n_pairs = m * (m - 1) / 2;
            let mut seen = std::collections::HashSet::new();
            for p in 0..n_pairs {
                let (i, j) = pair_at(p, m);
                assert!(i < j && j < m);
                assert!(seen.insert((i, j)));
            }
            assert_eq!(seen.len(), n_pairs);
        }
    }
}
