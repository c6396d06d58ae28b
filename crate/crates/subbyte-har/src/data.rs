//! Windowed datasets: CSV ingestion, synthetic generation, stratified splits,
//! class weights, classification metrics, and Pareto-front extraction.
//!
//! The CSV format (v1) is one row per window, values flattened channel-major,
//! label in the last column. The first line is a header comment carrying the
//! schema:
//!
//! ```text
//! # subbyte-har-dataset v1 channels=3 length=64 classes=4 rate_hz=32 window_s=2
//! ```

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A set of fixed-size signal windows with one label each.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    /// Shape `[n, channels, length]`.
    pub windows: Tensor,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub sample_rate_hz: f64,
    pub window_seconds: f64,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn channels(&self) -> usize {
        self.windows.shape()[1]
    }

    pub fn window_len(&self) -> usize {
        self.windows.shape()[2]
    }

    /// One window as a `[1, channels, length]` batch.
    pub fn window(&self, i: usize) -> Tensor {
        let (c, l) = (self.channels(), self.window_len());
        let start = i * c * l;
        Tensor::from_vec(&[1, c, l], self.windows.data()[start..start + c * l].to_vec()).unwrap()
    }

    /// Batch of windows selected by index, shape `[k, channels, length]`.
    pub fn batch(&self, idx: &[usize]) -> Tensor {
        let (c, l) = (self.channels(), self.window_len());
        let mut data = Vec::with_capacity(idx.len() * c * l);
        for &i in idx {
            let start = i * c * l;
            data.extend_from_slice(&self.windows.data()[start..start + c * l]);
        }
        Tensor::from_vec(&[idx.len(), c, l], data).unwrap()
    }

    pub fn subset(&self, idx: &[usize]) -> WindowedDataset {
        WindowedDataset {
            windows: self.batch(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
            sample_rate_hz: self.sample_rate_hz,
            window_seconds: self.window_seconds,
        }
    }

    /// Stable content digest of the dataset.
    pub fn digest(&self) -> String {
        let mut bytes = Vec::new();
        for &v in self.windows.data() {
            bytes.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        for &l in &self.labels {
            bytes.extend_from_slice(&(l as u64).to_le_bytes());
        }
        format!("{:016x}", crate::model::fnv64(&bytes))
    }
}

// ---------------------------------------------------------------------------
// CSV input/output
// ---------------------------------------------------------------------------

/// Declared layout of a dataset CSV.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CsvSchema {
    pub channels: usize,
    pub length: usize,
    pub n_classes: usize,
}

fn parse_header(line: &str) -> Option<(CsvSchema, f64, f64)> {
    if !line.starts_with("# subbyte-har-dataset v1") {
        return None;
    }
    let mut channels = None;
    let mut length = None;
    let mut classes = None;
    let mut rate = 0.0;
    let mut window_s = 0.0;
    for tok in line.split_whitespace() {
        if let Some((k, v)) = tok.split_once('=') {
            match k {
                "channels" => channels = v.parse().ok(),
                "length" => length = v.parse().ok(),
                "classes" => classes = v.parse().ok(),
                "rate_hz" => rate = v.parse().unwrap_or(0.0),
                "window_s" => window_s = v.parse().unwrap_or(0.0),
                _ => {}
            }
        }
    }
    Some((
        CsvSchema { channels: channels?, length: length?, n_classes: classes? },
        rate,
        window_s,
    ))
}

/// Loads a dataset, reading the schema from the v1 header line.
pub fn load_csv(path: &Path) -> Result<WindowedDataset> {
    let text = std::fs::read_to_string(path)?;
    let first = text
        .lines()
        .next()
        .ok_or_else(|| Error::Data(format!("{} is empty", path.display())))?;
    let (schema, rate, window_s) = parse_header(first).ok_or_else(|| {
        Error::Schema(format!(
            "{} has no 'subbyte-har-dataset v1' header; pass an explicit schema",
            path.display()
        ))
    })?;
    let mut ds = load_csv_with(path, schema)?;
    ds.sample_rate_hz = rate;
    ds.window_seconds = window_s;
    Ok(ds)
}

/// Loads a dataset under an explicit schema, ignoring any header line.
pub fn load_csv_with(path: &Path, schema: CsvSchema) -> Result<WindowedDataset> {
    let text = std::fs::read_to_string(path)?;
    let want = schema.channels * schema.length;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut rows = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != want + 1 {
            return Err(Error::Parse(format!(
                "line {}: expected {} values + label, got {} fields",
                lineno + 1,
                want,
                fields.len()
            )));
        }
        for (fi, f) in fields[..want].iter().enumerate() {
            let v: f64 = f.trim().parse().map_err(|_| {
                Error::Parse(format!("line {}: field {} is not a number", lineno + 1, fi + 1))
            })?;
            data.push(v);
        }
        let label: usize = fields[want].trim().parse().map_err(|_| {
            Error::Parse(format!("line {}: label is not an integer", lineno + 1))
        })?;
        if label >= schema.n_classes {
            return Err(Error::Schema(format!(
                "line {}: label {} out of range for {} classes",
                lineno + 1,
                label,
                schema.n_classes
            )));
        }
        labels.push(label);
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Data(format!("{} contains no data rows", path.display())));
    }
    Ok(WindowedDataset {
        windows: Tensor::from_vec(&[rows, schema.channels, schema.length], data)?,
        labels,
        class_names: (0..schema.n_classes).map(|c| format!("class{c}")).collect(),
        sample_rate_hz: 0.0,
        window_seconds: 0.0,
    })
}

/// Writes the v1 CSV form of a dataset.
pub fn save_csv(ds: &WindowedDataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# subbyte-har-dataset v1 channels={} length={} classes={} rate_hz={} window_s={}",
        ds.channels(),
        ds.window_len(),
        ds.n_classes(),
        ds.sample_rate_hz,
        ds.window_seconds
    );
    let per = ds.channels() * ds.window_len();
    for i in 0..ds.len() {
        let start = i * per;
        for v in &ds.windows.data()[start..start + per] {
            let _ = write!(out, "{v},");
        }
        let _ = writeln!(out, "{}", ds.labels[i]);
    }
    std::fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

/// Synthetic multi-channel dataset for desk-scale experiments.
///
/// Class `c` is a sinusoid at `c + 2` cycles per window. Easy samples carry
/// low noise; hard samples get heavy noise and a frequency pulled halfway
/// toward the next class, so they genuinely overlap. Generation is
/// deterministic per seed, with `n_per_class` windows per class.
pub fn synth_har(
    n_per_class: usize,
    n_classes: usize,
    channels: usize,
    length: usize,
    easy_fraction: f64,
    seed: u64,
) -> WindowedDataset {
    assert!(n_per_class > 0 && n_classes > 0 && channels > 0 && length > 0);
    assert!((0.0..=1.0).contains(&easy_fraction));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_per_class * n_classes;
    let mut data = Vec::with_capacity(n * channels * length);
    let mut labels = Vec::with_capacity(n);
    let n_easy = (easy_fraction * n_per_class as f64).round() as usize;
    for class in 0..n_classes {
        let f_class = (class + 2) as f64;
        for s in 0..n_per_class {
            let easy = s < n_easy;
            let (noise, freq, amp_jitter) = if easy {
                (0.08, f_class, 0.1)
            } else {
                let f_next = ((class + 1) % n_classes + 2) as f64;
                (0.7, f_class + 0.45 * (f_next - f_class), 0.3)
            };
            let amp = 1.0 + rng.gen_range(-amp_jitter..amp_jitter);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            for ch in 0..channels {
                let ch_phase = phase + ch as f64 * std::f64::consts::TAU / (channels as f64 + 1.0);
                for t in 0..length {
                    let arg = std::f64::consts::TAU * freq * t as f64 / length as f64 + ch_phase;
                    let v = amp * arg.sin() + rng.gen_range(-noise..noise);
                    data.push(v);
                }
            }
            labels.push(class);
        }
    }
    WindowedDataset {
        windows: Tensor::from_vec(&[n, channels, length], data).unwrap(),
        labels,
        class_names: (0..n_classes).map(|c| format!("class{c}")).collect(),
        sample_rate_hz: length as f64,
        window_seconds: 1.0,
    }
}

// ---------------------------------------------------------------------------
// Splits and class weights
// ---------------------------------------------------------------------------

/// Class-stratified split: returns `(rest, taken)` where `taken` holds
/// approximately `fraction` of each class (within one sample).
pub fn stratified_split(
    ds: &WindowedDataset,
    fraction: f64,
    seed: u64,
) -> (WindowedDataset, WindowedDataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rest = Vec::new();
    let mut taken = Vec::new();
    for class in 0..ds.n_classes() {
        let mut idx: Vec<usize> =
            (0..ds.len()).filter(|&i| ds.labels[i] == class).collect();
        // Fisher-Yates with the shared generator keeps the split stable.
        for i in (1..idx.len()).rev() {
            let j = rng.gen_range(0..=i);
            idx.swap(i, j);
        }
        let k = (idx.len() as f64 * fraction).round() as usize;
        taken.extend_from_slice(&idx[..k]);
        rest.extend_from_slice(&idx[k..]);
    }
    rest.sort_unstable();
    taken.sort_unstable();
    (ds.subset(&rest), ds.subset(&taken))
}

/// Loss weights inverse to class frequency, scaled so uniform data gives
/// all-ones: `w_c = total / (n_classes * count_c)`.
pub fn class_weights(labels: &[usize], n_classes: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        if l >= n_classes {
            return Err(Error::Schema(format!("label {l} out of range")));
        }
        counts[l] += 1;
    }
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Data(format!("class {missing} has no samples")));
    }
    let total = labels.len() as f64;
    Ok(counts
        .iter()
        .map(|&c| total / (n_classes as f64 * c as f64))
        .collect())
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Row-is-truth confusion counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for row in &self.counts {
            let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        s
    }
}

/// Classification metrics over one prediction set.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    /// Arithmetic mean of per-class recall, over classes present in the
    /// labels.
    pub balanced_accuracy: f64,
    /// Unweighted mean over all classes of 2PR/(P+R), zero when undefined.
    pub macro_f1: f64,
    pub confusion: ConfusionMatrix,
}

pub fn metrics(pred: &[usize], labels: &[usize], n_classes: usize) -> Result<Metrics> {
    if pred.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} predictions vs {} labels",
            pred.len(),
            labels.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Data("no samples to score".into()));
    }
    let mut counts = vec![vec![0u64; n_classes]; n_classes];
    let mut correct = 0u64;
    for (&p, &t) in pred.iter().zip(labels) {
        if p >= n_classes || t >= n_classes {
            return Err(Error::Schema("prediction or label out of range".into()));
        }
        counts[t][p] += 1;
        if p == t {
            correct += 1;
        }
    }
    let accuracy = correct as f64 / pred.len() as f64;
    let mut recall_sum = 0.0;
    let mut present = 0usize;
    let mut f1_sum = 0.0;
    for c in 0..n_classes {
        let tp = counts[c][c] as f64;
        let truth: u64 = counts[c].iter().sum();
        let predicted: u64 = (0..n_classes).map(|r| counts[r][c]).sum();
        if truth > 0 {
            recall_sum += tp / truth as f64;
            present += 1;
        }
        let precision = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
        let recall = if truth > 0 { tp / truth as f64 } else { 0.0 };
        if precision + recall > 0.0 {
            f1_sum += 2.0 * precision * recall / (precision + recall);
        }
    }
    Ok(Metrics {
        accuracy,
        balanced_accuracy: if present > 0 { recall_sum / present as f64 } else { 0.0 },
        macro_f1: f1_sum / n_classes as f64,
        confusion: ConfusionMatrix { counts },
    })
}

// ---------------------------------------------------------------------------
// Pareto front
// ---------------------------------------------------------------------------

/// Indices of the non-dominated points (score maximized, cost minimized),
/// ordered by ascending score. Exact duplicates keep the first occurrence.
pub fn pareto_indices(points: &[(f64, f64)]) -> Vec<usize> {
    let mut keep = Vec::new();
    'outer: for (i, &(si, ci)) in points.iter().enumerate() {
        for (j, &(sj, cj)) in points.iter().enumerate() {
            if j == i {
                continue;
            }
            let dominates = sj >= si && cj <= ci && (sj > si || cj < ci);
            if dominates {
                continue 'outer;
            }
            if sj == si && cj == ci && j < i {
                continue 'outer; // duplicate; first occurrence represents it
            }
        }
        keep.push(i);
    }
    keep.sort_by(|&a, &b| {
        points[a]
            .0
            .partial_cmp(&points[b].0)
            .unwrap()
            .then(points[a].1.partial_cmp(&points[b].1).unwrap())
    });
    keep
}

/// The non-dominated points themselves, ordered by ascending score.
pub fn pareto_front(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    pareto_indices(points).into_iter().map(|i| points[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synth_is_deterministic_and_balanced() {
        let a = synth_har(10, 4, 3, 32, 0.7, 9);
        let b = synth_har(10, 4, 3, 32, 0.7, 9);
        assert_eq!(a, b);
        for c in 0..4 {
            assert_eq!(a.labels.iter().filter(|&&l| l == c).count(), 10);
        }
        let c = synth_har(10, 4, 3, 32, 0.7, 10);
        assert_ne!(a.windows.data(), c.windows.data());
    }

    // Independent oracle: nearest class frequency by single-bin spectral
    // energy, summed over channels.
    fn spectral_classify(ds: &WindowedDataset, i: usize) -> usize {
        let (c, l) = (ds.channels(), ds.window_len());
        let mut best = (0usize, f64::NEG_INFINITY);
        for class in 0..ds.n_classes() {
            let f = (class + 2) as f64;
            let mut energy = 0.0;
            for ch in 0..c {
                let mut re = 0.0;
                let mut im = 0.0;
                for t in 0..l {
                    let v = ds.windows.at3(i, ch, t);
                    let arg = std::f64::consts::TAU * f * t as f64 / l as f64;
                    re += v * arg.cos();
                    im += v * arg.sin();
                }
                energy += re * re + im * im;
            }
            if energy > best.1 {
                best = (class, energy);
            }
        }
        best.0
    }

    #[test]
    fn easy_synth_is_linearly_separable_by_spectral_energy() {
        let ds = synth_har(25, 4, 3, 64, 1.0, 1);
        let pred: Vec<usize> = (0..ds.len()).map(|i| spectral_classify(&ds, i)).collect();
        let m = metrics(&pred, &ds.labels, 4).unwrap();
        assert!(m.accuracy >= 0.99, "spectral oracle accuracy {}", m.accuracy);
    }

    #[test]
    fn csv_roundtrip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.csv");
        let ds = synth_har(2, 2, 2, 8, 0.5, 3);
        save_csv(&ds, &path).unwrap();
        let back = load_csv(&path).unwrap();
        assert_eq!(ds.windows.data(), back.windows.data());
        assert_eq!(ds.labels, back.labels);
    }

    #[test]
    fn csv_error_paths() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty.csv");
        std::fs::write(&empty, "").unwrap();
        assert!(load_csv(&empty).is_err());

        let schema = CsvSchema { channels: 1, length: 2, n_classes: 2 };
        let ragged = dir.path().join("ragged.csv");
        std::fs::write(&ragged, "0.1,0.2,0\n0.3,1\n").unwrap();
        let err = load_csv_with(&ragged, schema).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");

        let bad_label = dir.path().join("bad_label.csv");
        std::fs::write(&bad_label, "0.1,0.2,7\n").unwrap();
        let err = load_csv_with(&bad_label, schema).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));

        let no_rows = dir.path().join("norows.csv");
        std::fs::write(&no_rows, "# only a comment\n").unwrap();
        assert!(load_csv_with(&no_rows, schema).is_err());
    }

    #[test]
    fn wisdm_shaped_windows_load() {
        // 200x3 windows over 6 classes, the shape of the public WISDM export.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wisdm.csv");
        let mut rows = String::from(
            "# subbyte-har-dataset v1 channels=3 length=200 classes=6 rate_hz=20 window_s=10\n",
        );
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for i in 0..12 {
            for _ in 0..600 {
                let v: f64 = rng.gen_range(-1.0..1.0);
                rows.push_str(&format!("{v},"));
            }
            rows.push_str(&format!("{}\n", i % 6));
        }
        std::fs::write(&path, rows).unwrap();
        let ds = load_csv(&path).unwrap();
        assert_eq!(ds.windows.shape(), &[12, 3, 200]);
        assert_eq!(ds.n_classes(), 6);
        assert_eq!(ds.sample_rate_hz, 20.0);
    }

    #[test]
    fn stratified_split_is_within_one_sample() {
        let ds = synth_har(21, 3, 1, 8, 1.0, 5);
        let (rest, taken) = stratified_split(&ds, 0.25, 7);
        assert_eq!(rest.len() + taken.len(), ds.len());
        for c in 0..3 {
            let k = taken.labels.iter().filter(|&&l| l == c).count() as f64;
            let expect = 21.0 * 0.25;
            assert!((k - expect).abs() <= 1.0, "class {c}: {k}");
        }
    }

    #[test]
    fn class_weights_hand_values() {
        // Balanced labels -> all ones.
        let w = class_weights(&[0, 0, 1, 1], 2).unwrap();
        assert_eq!(w, vec![1.0, 1.0]);
        // Counts [30, 10] -> [40/60, 40/20].
        let mut labels = vec![0usize; 30];
        labels.extend(vec![1usize; 10]);
        let w = class_weights(&labels, 2).unwrap();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((w[1] - 2.0).abs() < 1e-12);
        // Permutation equivariance.
        let relabeled: Vec<usize> = labels.iter().map(|&l| 1 - l).collect();
        let w2 = class_weights(&relabeled, 2).unwrap();
        assert_eq!(w[0], w2[1]);
        assert_eq!(w[1], w2[0]);
        // Missing class is a data error.
        assert!(class_weights(&[0, 0], 2).is_err());
    }

    #[test]
    fn metrics_hand_values() {
        // Perfect predictions.
        let m = metrics(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.balanced_accuracy, 1.0);
        assert_eq!(m.macro_f1, 1.0);
        assert_eq!(m.confusion.counts[1][1], 1);
        // Two classes with recalls 1.0 and 0.5 -> balanced accuracy 0.75.
        let m = metrics(&[0, 0, 1, 0], &[0, 0, 1, 1], 2).unwrap();
        assert!((m.balanced_accuracy - 0.75).abs() < 1e-12);
        // Precision 1.0, recall 0.5 -> class F1 = 2/3.
        let m = metrics(&[1, 0], &[1, 1], 2).unwrap();
        let tp = 1.0f64;
        let f1_class1 = 2.0 * (tp / 1.0) * (tp / 2.0) / (tp / 1.0 + tp / 2.0);
        assert!((f1_class1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.macro_f1 - f1_class1 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn balanced_accuracy_ignores_class_frequency() {
        // Same per-class recalls under different class frequencies.
        let m1 = metrics(&[0, 1, 1, 1], &[0, 1, 1, 0], 2).unwrap();
        let m2 = metrics(
            &[0, 0, 1, 1, 1, 1, 1, 1, 1, 1],
            &[0, 0, 0, 0, 1, 1, 1, 1, 1, 1],
            2,
        )
        .unwrap();
        // recalls: class0 = 1/2, class1 = 1.0 in both.
        assert!((m1.balanced_accuracy - m2.balanced_accuracy).abs() < 1e-12);
        // Accuracy bounded by the recall range.
        for m in [&m1, &m2] {
            assert!(m.accuracy >= 0.5 && m.accuracy <= 1.0);
        }
    }

    #[test]
    fn pareto_hand_case() {
        let pts = vec![(80.0, 10.0), (85.0, 20.0), (79.0, 15.0)];
        let front = pareto_front(&pts);
        assert_eq!(front, vec![(80.0, 10.0), (85.0, 20.0)]);
        assert_eq!(pareto_front(&[(1.0, 1.0)]), vec![(1.0, 1.0)]);
        // Duplicates keep one representative.
        let front = pareto_front(&[(1.0, 1.0), (1.0, 1.0)]);
        assert_eq!(front.len(), 1);
    }

    // Brute-force dominance filter, kept independent of pareto_indices.
    fn brute_force_front(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for (i, &(s, c)) in points.iter().enumerate() {
            let dominated = points.iter().enumerate().any(|(j, &(sj, cj))| {
                j != i && sj >= s && cj <= c && (sj > s || cj < c)
            });
            let duplicate = points[..i].iter().any(|&(sj, cj)| sj == s && cj == c);
            if !dominated && !duplicate {
                out.push((s, c));
            }
        }
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out
    }

    #[test]
    fn pareto_matches_brute_force_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let n = rng.gen_range(1..20);
            let pts: Vec<(f64, f64)> = (0..n)
                .map(|_| {
                    (
                        (rng.gen_range(0..20) as f64) / 2.0,
                        (rng.gen_range(0..20) as f64) / 2.0,
                    )
                })
                .collect();
            let mut a = pareto_front(&pts);
            a.sort_by(|x, y| x.partial_cmp(y).unwrap());
            assert_eq!(a, brute_force_front(&pts));
        }
    }
}
