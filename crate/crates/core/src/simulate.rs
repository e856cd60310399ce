//! Simulation of stationary multivariate Hawkes processes through the
//! Poisson cluster representation.
//!
//! Immigrants of mark `j` arrive as a homogeneous Poisson process of rate
//! `mu_j` on `(-B, T)`. Each immigrant seeds an independent branching cascade
//! in which a parent of mark `j` has `Poisson(nu_ij)` children of mark `i`,
//! displaced by draws from the kernel `g_ij`. Events falling in `[0, T)` are
//! kept.
//!
//! Randomness is organised so that a cluster's content depends only on
//! `(seed, mark, k)` where `k` counts immigrants of that mark backwards from
//! `T`. Extending the burn-in therefore only adds older clusters and leaves
//! the existing ones untouched, which makes burn-in comparisons low-variance.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::HawkesModel;

/// Default cap on the number of generations in one cluster.
pub const DEFAULT_MAX_GENERATIONS: usize = 10_000;

/// A realisation on `[0, horizon)`. Marks are stored 0-based; the CSV form
/// uses 1-based marks.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    horizon: f64,
    dim: usize,
    times: Vec<f64>,
    marks: Vec<usize>,
}

impl EventLog {
    /// Builds a log, checking the ordering, range and mark invariants.
    pub fn new(horizon: f64, dim: usize, times: Vec<f64>, marks: Vec<usize>) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Domain(format!("horizon must be positive, got {horizon}")));
        }
        if dim == 0 {
            return Err(Error::Shape("event log needs at least one mark".into()));
        }
        if times.len() != marks.len() {
            return Err(Error::Shape("times and marks differ in length".into()));
        }
        for (k, (&t, &m)) in times.iter().zip(&marks).enumerate() {
            if !(0.0..horizon).contains(&t) {
                return Err(Error::Data(format!("event {k} at {t} outside [0, {horizon})")));
            }
            if m >= dim {
                return Err(Error::Data(format!("event {k} has mark {} > {dim}", m + 1)));
            }
            if k > 0 && t <= times[k - 1] {
                return Err(Error::Data(format!("event times not strictly increasing at index {k}")));
            }
        }
        Ok(Self { horizon, dim, times, marks })
    }

    pub fn empty(horizon: f64, dim: usize) -> Result<Self> {
        Self::new(horizon, dim, Vec::new(), Vec::new())
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// 0-based marks.
    pub fn marks(&self) -> &[usize] {
        &self.marks
    }

    /// Event times of a single (0-based) mark.
    pub fn times_of(&self, mark: usize) -> Vec<f64> {
        self.times
            .iter()
            .zip(&self.marks)
            .filter(|(_, &m)| m == mark)
            .map(|(&t, _)| t)
            .collect()
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.dim];
        for &m in &self.marks {
            c[m] += 1;
        }
        c
    }

    /// Merges logs over the same horizon, placing the marks of each input in
    /// consecutive blocks.
    pub fn merge(logs: &[EventLog]) -> Result<Self> {
        let first = logs.first().ok_or_else(|| Error::Shape("nothing to merge".into()))?;
        let horizon = first.horizon;
        let mut events = Vec::new();
        let mut offset = 0;
        for log in logs {
            if log.horizon != horizon {
                return Err(Error::Shape("cannot merge logs with different horizons".into()));
            }
            events.extend(log.times.iter().zip(&log.marks).map(|(&t, &m)| (t, m + offset)));
            offset += log.dim;
        }
        from_unsorted(horizon, offset, events)
    }

    /// Writes `time,mark` rows with nine fractional digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "time,mark")?;
        for (t, m) in self.times.iter().zip(&self.marks) {
            writeln!(w, "{t:.9},{}", m + 1)?;
        }
        Ok(())
    }

    /// Reads the CSV form. Rows must already be time-ordered. Equal times
    /// (which can arise from the fixed-point rounding) are separated with
    /// the tie-breaking rule used by the simulator.
    pub fn read_csv<R: BufRead>(r: R, horizon: f64, dim: Option<usize>) -> Result<Self> {
        let mut times = Vec::new();
        let mut marks = Vec::new();
        let mut lines = r.lines();
        match lines.next() {
            Some(h) => {
                let h = h?;
                if h.trim() != "time,mark" {
                    return Err(Error::Parse { line: 1, msg: format!("expected header `time,mark`, found `{h}`") });
                }
            }
            None => return Err(Error::Parse { line: 1, msg: "missing header".into() }),
        }
        for (idx, line) in lines.enumerate() {
            let line_no = idx + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: String| Error::Parse { line: line_no, msg };
            let (ts, ms) = line.split_once(',').ok_or_else(|| bad(format!("expected two fields in `{line}`")))?;
            let t: f64 = ts.trim().parse().map_err(|_| bad(format!("invalid time `{ts}`")))?;
            let m: usize = ms.trim().parse().map_err(|_| bad(format!("invalid mark `{ms}`")))?;
            if m == 0 {
                return Err(bad("marks are 1-based".into()));
            }
            if !t.is_finite() || t < 0.0 || t >= horizon {
                return Err(bad(format!("time {t} outside [0, {horizon})")));
            }
            if let Some(&prev) = times.last() {
                if t < prev {
                    return Err(bad("event times are not sorted".into()));
                }
            }
            times.push(t);
            marks.push(m - 1);
        }
        let max_mark = marks.iter().map(|m| m + 1).max().unwrap_or(1);
        let dim = match dim {
            Some(d) if d < max_mark => {
                return Err(Error::Data(format!("mark {max_mark} exceeds declared dimension {d}")));
            }
            Some(d) => d,
            None => max_mark,
        };
        break_ties(&mut times, horizon);
        Self::new(horizon, dim, times, marks)
    }
}

/// Smallest representable time step used to separate tied events.
const TIE_JITTER: f64 = 1.0 / (1u64 << 40) as f64;

/// Separates equal consecutive times in a sorted vector. Returns how many
/// ties were broken.
fn break_ties(times: &mut [f64], horizon: f64) -> usize {
    let mut ties = 0;
    for k in 1..times.len() {
        if times[k] <= times[k - 1] {
            let bumped = (times[k - 1] + TIE_JITTER).max(times[k - 1].next_up());
            times[k] = bumped.min(horizon.next_down());
            ties += 1;
        }
    }
    if ties > 0 {
        log::warn!("broke {ties} tied event time(s) with a {TIE_JITTER:e} jitter");
    }
    ties
}

fn from_unsorted(horizon: f64, dim: usize, mut events: Vec<(f64, usize)>) -> Result<EventLog> {
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let (mut times, marks): (Vec<f64>, Vec<usize>) = events.into_iter().unzip();
    break_ties(&mut times, horizon);
    EventLog::new(horizon, dim, times, marks)
}

/// Simulation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon: f64,
    pub burn_in: f64,
    pub seed: u64,
    pub max_events: usize,
    #[serde(default = "default_generations")]
    pub max_generations: usize,
}

fn default_generations() -> usize {
    DEFAULT_MAX_GENERATIONS
}

impl SimConfig {
    /// Horizon `T` with burn-in `B = T`.
    pub fn new(horizon: f64, seed: u64) -> Self {
        Self {
            horizon,
            burn_in: horizon,
            seed,
            max_events: 10_000_000,
            max_generations: DEFAULT_MAX_GENERATIONS,
        }
    }

    pub fn with_burn_in(mut self, burn_in: f64) -> Self {
        self.burn_in = burn_in;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config(format!("horizon must be positive, got {}", self.horizon)));
        }
        if !(self.burn_in >= 0.0 && self.burn_in.is_finite()) {
            return Err(Error::Config(format!("burn-in must be nonnegative, got {}", self.burn_in)));
        }
        if self.max_events == 0 || self.max_generations == 0 {
            return Err(Error::Config("max_events and max_generations must be positive".into()));
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a path of indices.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p.wrapping_add(0x632B_E59B_D9B4_E019))))
}

/// Independent generator for the stream identified by `(seed, path)`.
pub fn substream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut s = derive_seed(seed, path);
    for chunk in key.chunks_mut(8) {
        s = splitmix64(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

const IMMIGRANT_STREAM: u64 = 0;
const CLUSTER_STREAM: u64 = 1;

/// All descendants of a root event (root excluded), generated breadth first.
pub fn sample_cluster<R: Rng + ?Sized>(
    root_time: f64,
    root_mark: usize,
    m: &HawkesModel,
    rng: &mut R,
) -> Result<Vec<(f64, usize)>> {
    let mut out = Vec::new();
    grow_cluster(root_time, root_mark, m, rng, f64::INFINITY, DEFAULT_MAX_GENERATIONS, usize::MAX, &mut out)?;
    Ok(out)
}

fn offspring_laws(m: &HawkesModel) -> Vec<Option<Poisson<f64>>> {
    m.nu_flat()
        .iter()
        .map(|&v| if v > 0.0 { Poisson::new(v).ok() } else { None })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn grow_cluster<R: Rng + ?Sized>(
    root_time: f64,
    root_mark: usize,
    m: &HawkesModel,
    rng: &mut R,
    horizon: f64,
    max_generations: usize,
    max_events: usize,
    out: &mut Vec<(f64, usize)>,
) -> Result<()> {
    let d = m.dim();
    if root_mark >= d {
        return Err(Error::Shape(format!("root mark {} out of range", root_mark + 1)));
    }
    let laws = offspring_laws(m);
    let mut generation = vec![(root_time, root_mark)];
    let mut depth = 0;
    while !generation.is_empty() {
        depth += 1;
        if depth > max_generations {
            return Err(Error::Guard(format!("cluster exceeded {max_generations} generations")));
        }
        let mut next = Vec::new();
        for &(t, j) in &generation {
            for i in 0..d {
                let Some(law) = &laws[i * d + j] else { continue };
                let n = law.sample(rng) as u64;
                let kernel = m.kernel(i, j);
                for _ in 0..n {
                    let child = t + kernel.sample(rng);
                    if child < horizon {
                        next.push((child, i));
                    }
                }
            }
        }
        out.extend(next.iter().copied());
        if out.len() > max_events {
            return Err(Error::Guard(format!("more than {max_events} events generated")));
        }
        generation = next;
    }
    Ok(())
}

/// Simulates the stationary process on `[0, cfg.horizon)`.
pub fn simulate_hawkes(m: &HawkesModel, cfg: &SimConfig) -> Result<EventLog> {
    cfg.validate()?;
    m.check_stationary()?;
    let d = m.dim();
    let horizon = cfg.horizon;
    let mut events: Vec<(f64, usize)> = Vec::new();
    let mut scratch = Vec::new();
    for j in 0..d {
        let mu = m.mu()[j];
        if mu <= 0.0 {
            continue;
        }
        let mut arrivals = substream(cfg.seed, &[IMMIGRANT_STREAM, j as u64]);
        let mut t = horizon;
        let mut k = 0u64;
        loop {
            let gap: f64 = Exp1.sample(&mut arrivals);
            t -= gap / mu;
            if t <= -cfg.burn_in {
                break;
            }
            if t >= 0.0 {
                events.push((t, j));
            }
            let mut rng = substream(cfg.seed, &[CLUSTER_STREAM, j as u64, k]);
            scratch.clear();
            grow_cluster(t, j, m, &mut rng, horizon, cfg.max_generations, cfg.max_events, &mut scratch)?;
            events.extend(scratch.iter().copied().filter(|&(s, _)| s >= 0.0));
            if events.len() > cfg.max_events {
                return Err(Error::Guard(format!(
                    "more than {} events; model may be near-critical or the horizon too long",
                    cfg.max_events
                )));
            }
            k += 1;
        }
    }
    from_unsorted(horizon, d, events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{average_intensity, KernelSpec};
    use crate::stats;

    fn fh4() -> HawkesModel {
        HawkesModel::univariate(1.0, 0.5, KernelSpec::mittag_leffler(0.9, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn poisson_counts_and_gaps() {
        let m = HawkesModel::univariate(2.0, 0.0, KernelSpec::exponential(1.0).unwrap()).unwrap();
        let log = simulate_hawkes(&m, &SimConfig::new(1000.0, 11)).unwrap();
        let n = log.len() as f64;
        assert!((n - 2000.0).abs() < 3.0 * 2000f64.sqrt());
        let gaps: Vec<f64> = log.times().windows(2).map(|w| w[1] - w[0]).collect();
        let ks = stats::ks_statistic(&gaps, |x| 1.0 - (-2.0 * x).exp());
        assert!(ks < stats::ks_critical_1pct(gaps.len()));
    }

    #[test]
    fn deterministic_given_seed() {
        let m = fh4();
        let cfg = SimConfig::new(300.0, 5);
        let a = simulate_hawkes(&m, &cfg).unwrap();
        let b = simulate_hawkes(&m, &cfg).unwrap();
        let mut wa = Vec::new();
        let mut wb = Vec::new();
        a.write_csv(&mut wa).unwrap();
        b.write_csv(&mut wb).unwrap();
        assert_eq!(wa, wb);
        let c = simulate_hawkes(&m, &SimConfig::new(300.0, 6)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn fh4_mean_count() {
        let m = fh4();
        let counts: Vec<f64> = (0..200)
            .map(|r| simulate_hawkes(&m, &SimConfig::new(1000.0, derive_seed(42, &[r]))).unwrap().len() as f64)
            .collect();
        let lambda = average_intensity(&m).unwrap()[0];
        assert!((stats::mean(&counts) / (lambda * 1000.0) - 1.0).abs() < 0.02);
    }

    #[test]
    fn longer_burn_in_keeps_recent_clusters() {
        let m = fh4();
        let short = simulate_hawkes(&m, &SimConfig::new(200.0, 3)).unwrap();
        let long = simulate_hawkes(&m, &SimConfig::new(200.0, 3).with_burn_in(400.0)).unwrap();
        let extra = long.len() as isize - short.len() as isize;
        assert!(extra >= 0);
        let set: std::collections::HashSet<u64> = long.times().iter().map(|t| t.to_bits()).collect();
        assert!(short.times().iter().all(|t| set.contains(&t.to_bits())));
    }

    #[test]
    fn cluster_progeny_mean() {
        let m = HawkesModel::univariate(1.0, 0.5, KernelSpec::exponential(1.0).unwrap()).unwrap();
        let mut rng = substream(9, &[]);
        let sizes: Vec<f64> =
            (0..100_000).map(|_| sample_cluster(0.0, 0, &m, &mut rng).unwrap().len() as f64).collect();
        let se = (stats::variance(&sizes) / sizes.len() as f64).sqrt();
        assert!((stats::mean(&sizes) - 1.0).abs() < 3.0 * se);
    }

    #[test]
    fn cluster_edge_cases() {
        let k = KernelSpec::exponential(1.0).unwrap();
        let zero = HawkesModel::univariate(1.0, 0.0, k.clone()).unwrap();
        let mut rng = substream(1, &[]);
        assert!(sample_cluster(0.0, 0, &zero, &mut rng).unwrap().is_empty());
        let diag = HawkesModel::new(
            vec![1.0, 1.0],
            vec![vec![0.6, 0.0], vec![0.0, 0.6]],
            vec![vec![k.clone(), k.clone()], vec![k.clone(), k]],
        )
        .unwrap();
        for _ in 0..2000 {
            assert!(sample_cluster(0.0, 0, &diag, &mut rng).unwrap().iter().all(|&(_, m)| m == 0));
        }
    }

    #[test]
    fn generation_cap_is_enforced() {
        let m = HawkesModel::univariate(1.0, 0.99, KernelSpec::exponential(1.0).unwrap()).unwrap();
        let mut rng = substream(4, &[]);
        let mut hit = false;
        for _ in 0..200 {
            let mut out = Vec::new();
            if grow_cluster(0.0, 0, &m, &mut rng, f64::INFINITY, 3, usize::MAX, &mut out).is_err() {
                hit = true;
                break;
            }
        }
        assert!(hit);
    }

    #[test]
    fn guards_and_stationarity() {
        let k = KernelSpec::exponential(1.0).unwrap();
        let hot = HawkesModel::new(vec![1.0], vec![vec![1.2]], vec![vec![k.clone()]]).unwrap();
        assert!(matches!(simulate_hawkes(&hot, &SimConfig::new(10.0, 1)), Err(Error::NonStationary(_))));
        let m = HawkesModel::univariate(5.0, 0.0, k).unwrap();
        let mut cfg = SimConfig::new(100.0, 1);
        cfg.max_events = 50;
        assert!(matches!(simulate_hawkes(&m, &cfg), Err(Error::Guard(_))));
    }

    #[test]
    fn per_mark_rates_match_intensity() {
        let k = KernelSpec::mittag_leffler(0.8, 1.0).unwrap();
        let m = HawkesModel::new(
            vec![0.5, 0.3],
            vec![vec![0.3, 0.2], vec![0.1, 0.4]],
            vec![vec![k.clone(), k.clone()], vec![k.clone(), k]],
        )
        .unwrap();
        let lambda = average_intensity(&m).unwrap();
        let t = 2000.0;
        let reps: Vec<Vec<usize>> =
            (0..40).map(|r| simulate_hawkes(&m, &SimConfig::new(t, derive_seed(8, &[r]))).unwrap().counts()).collect();
        for j in 0..2 {
            let rates: Vec<f64> = reps.iter().map(|c| c[j] as f64 / t).collect();
            let se = (stats::variance(&rates) / rates.len() as f64).sqrt();
            assert!((stats::mean(&rates) - lambda[j]).abs() < 3.0 * se, "mark {j}");
        }
    }

    #[test]
    fn diagonal_bivariate_matches_independent_univariates() {
        let k = KernelSpec::mittag_leffler(0.9, 1.0).unwrap();
        let biv = HawkesModel::new(
            vec![1.0, 1.0],
            vec![vec![0.5, 0.0], vec![0.0, 0.5]],
            vec![vec![k.clone(), k.clone()], vec![k.clone(), k.clone()]],
        )
        .unwrap();
        let uni = fh4();
        let mut joint = Vec::new();
        let mut single = Vec::new();
        for r in 0..10 {
            let log = simulate_hawkes(&biv, &SimConfig::new(500.0, derive_seed(1, &[r]))).unwrap();
            joint.extend(log.times_of(1).windows(2).map(|w| w[1] - w[0]));
            let u = simulate_hawkes(&uni, &SimConfig::new(500.0, derive_seed(2, &[r]))).unwrap();
            single.extend(u.times().windows(2).map(|w| w[1] - w[0]));
        }
        let d = stats::ks_two_sample(&joint, &single);
        assert!(d < stats::ks_two_sample_critical_1pct(joint.len(), single.len()));
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let log = EventLog::new(10.0, 2, vec![0.5, 1.25, 9.999999999], vec![0, 1, 0]).unwrap();
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("time,mark\n0.500000000,1\n"));
        let back = EventLog::read_csv(buf.as_slice(), 10.0, Some(2)).unwrap();
        assert_eq!(back, log);

        let bad = "time,mark\n0.1,1\n0.2,x\n";
        match EventLog::read_csv(bad.as_bytes(), 1.0, None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let unsorted = "time,mark\n0.3,1\n0.2,1\n";
        assert!(EventLog::read_csv(unsorted.as_bytes(), 1.0, None).is_err());
        let tied = "time,mark\n0.3,1\n0.3,2\n";
        let t = EventLog::read_csv(tied.as_bytes(), 1.0, None).unwrap();
        assert!(t.times()[1] > t.times()[0]);
    }

    #[test]
    fn merge_relabels_marks() {
        let a = EventLog::new(5.0, 1, vec![1.0, 3.0], vec![0, 0]).unwrap();
        let b = EventLog::new(5.0, 1, vec![2.0], vec![0]).unwrap();
        let m = EventLog::merge(&[a, b]).unwrap();
        assert_eq!(m.times(), &[1.0, 2.0, 3.0]);
        assert_eq!(m.marks(), &[0, 1, 0]);
        assert_eq!(m.dim(), 2);
    }
}
