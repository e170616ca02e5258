//! Dataset generation, flat-file I/O, splitting, and distribution samplers.
//!
//! The dataset file format is a self-describing UTF-8 text table:
//!
//! ```text
//! #dataset v1 rows=<N> dim=<d> classes=<c>
//! <label>,<f1>,...,<fd>
//! ```
//!
//! Features use decimal reals that round-trip exactly through `f64` parsing.

use crate::error::{Error, Result};
use crate::rng::{SeededRng, Stream};
use std::path::Path;

/// In-memory labeled dataset; `features` is row-major `[N x dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    pub dim: usize,
    pub num_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Feature row `i`.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Rows per class, indexed by class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Row indices per class, ascending within each class.
    pub fn rows_by_class(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            by_class[l].push(i);
        }
        by_class
    }

    /// Materialize the given rows as a standalone dataset (row order kept).
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            features,
            labels,
            dim: self.dim,
            num_classes: self.num_classes,
        }
    }

    /// Approximate resident size: 8 bytes per feature plus 8 per label.
    pub fn approx_bytes(&self) -> u64 {
        (self.len() as u64) * (self.dim as u64 * 8 + 8)
    }

    fn validate(&self) -> Result<()> {
        if self.len() < self.num_classes {
            return Err(Error::DimensionMismatch(format!(
                "dataset has {} rows but {} classes",
                self.len(),
                self.num_classes
            )));
        }
        if self.features.len() != self.len() * self.dim {
            return Err(Error::DimensionMismatch(
                "feature buffer does not match rows x dim".into(),
            ));
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(Error::DimensionMismatch(format!(
                "label {l} out of range for {} classes",
                self.num_classes
            )));
        }
        Ok(())
    }
}

/// Gaussian blobs: one unit-norm mean per class (drawn from the seed's data
/// stream, so placement is deterministic for the seed), isotropic noise with
/// standard deviation `spread`, `per_class` rows per class, grouped by class
/// in row order.
pub fn generate_synthetic(
    num_classes: usize,
    dim: usize,
    per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes < 2 {
        return Err(Error::invalid_config("data.classes", "must be >= 2"));
    }
    if per_class < 2 {
        return Err(Error::invalid_config("data.per_class", "must be >= 2"));
    }
    if dim == 0 {
        return Err(Error::invalid_config("data.dim", "must be >= 1"));
    }
    if spread <= 0.0 {
        return Err(Error::invalid_config("data.spread", "must be > 0"));
    }
    let mut rng = SeededRng::derive(seed, Stream::Data, 0, 0);
    // Class means: normalized standard-normal draws, i.e. uniform on the
    // radius-1 sphere. Drawn before any noise so the layout is stable.
    let mut means = Vec::with_capacity(num_classes);
    for _ in 0..num_classes {
        let mut m: Vec<f64> = (0..dim).map(|_| rng.standard_normal()).collect();
        let norm = m.iter().map(|v| v * v).sum::<f64>().sqrt();
        // A zero draw is probability-zero; fall back to a basis vector.
        if norm > 0.0 {
            for v in m.iter_mut() {
                *v /= norm;
            }
        } else {
            m[0] = 1.0;
        }
        means.push(m);
    }
    let n = num_classes * per_class;
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            for &m in mean {
                features.push(m + spread * rng.standard_normal());
            }
            labels.push(c);
        }
    }
    Ok(Dataset {
        features,
        labels,
        dim,
        num_classes,
    })
}

/// Serialize in the documented text format.
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    use std::fmt::Write as _;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "#dataset v1 rows={} dim={} classes={}",
        ds.len(),
        ds.dim,
        ds.num_classes
    );
    for i in 0..ds.len() {
        let _ = write!(out, "{}", ds.labels[i]);
        for v in ds.row(i) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Parse the documented text format; errors name the offending line.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::MalformedDataset {
        line: 1,
        message: "empty file".into(),
    })?;
    let (rows, dim, num_classes) = parse_header(header)?;
    let mut features = Vec::with_capacity(rows * dim);
    let mut labels = Vec::with_capacity(rows);
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let label_tok = parts.next().unwrap_or_default();
        let label: usize = label_tok.trim().parse().map_err(|_| Error::MalformedDataset {
            line: line_no,
            message: format!("bad label `{label_tok}`"),
        })?;
        if label >= num_classes {
            return Err(Error::MalformedDataset {
                line: line_no,
                message: format!("label out of range: {label} >= {num_classes}"),
            });
        }
        let mut row = Vec::with_capacity(dim);
        for tok in parts {
            let v: f64 = tok.trim().parse().map_err(|_| Error::MalformedDataset {
                line: line_no,
                message: format!("bad feature value `{tok}`"),
            })?;
            row.push(v);
        }
        if row.len() != dim {
            return Err(Error::MalformedDataset {
                line: line_no,
                message: format!("expected {dim} features, found {}", row.len()),
            });
        }
        features.extend_from_slice(&row);
        labels.push(label);
    }
    if labels.len() != rows {
        return Err(Error::MalformedDataset {
            line: text.lines().count(),
            message: format!("header declared {rows} rows, found {}", labels.len()),
        });
    }
    let ds = Dataset {
        features,
        labels,
        dim,
        num_classes,
    };
    ds.validate()?;
    Ok(ds)
}

fn parse_header(header: &str) -> Result<(usize, usize, usize)> {
    let bad = |message: String| Error::MalformedDataset { line: 1, message };
    let rest = header
        .strip_prefix("#dataset v1 ")
        .ok_or_else(|| bad(format!("expected `#dataset v1 ...` header, found `{header}`")))?;
    let mut rows = None;
    let mut dim = None;
    let mut classes = None;
    for part in rest.split_whitespace() {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| bad(format!("bad header field `{part}`")))?;
        let value: usize = value
            .parse()
            .map_err(|_| bad(format!("bad header value `{part}`")))?;
        match key {
            "rows" => rows = Some(value),
            "dim" => dim = Some(value),
            "classes" => classes = Some(value),
            _ => return Err(bad(format!("unknown header field `{key}`"))),
        }
    }
    match (rows, dim, classes) {
        (Some(r), Some(d), Some(c)) => Ok((r, d, c)),
        _ => Err(bad("header must declare rows=, dim=, classes=".into())),
    }
}

/// Stratified split: each class is shuffled by the seed and cut as close to
/// `test_fraction` as rounding allows. Row order within each side follows the
/// parent dataset.
pub fn train_test_split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid_config(
            "data.test_fraction",
            "must lie strictly between 0 and 1",
        ));
    }
    let mut rng = SeededRng::derive(seed, Stream::Split, 0, 0);
    let mut test_rows = Vec::new();
    let mut train_rows = Vec::new();
    for mut rows in ds.rows_by_class() {
        rng.shuffle(&mut rows);
        let want = (rows.len() as f64 * test_fraction).round() as usize;
        let take = want.min(rows.len());
        test_rows.extend_from_slice(&rows[..take]);
        train_rows.extend_from_slice(&rows[take..]);
    }
    if train_rows.is_empty() || test_rows.is_empty() {
        return Err(Error::invalid_config(
            "data.test_fraction",
            "split leaves one side empty",
        ));
    }
    test_rows.sort_unstable();
    train_rows.sort_unstable();
    Ok((ds.subset(&train_rows), ds.subset(&test_rows)))
}

/// Dirichlet draw via normalized Gamma(alpha_i, 1) samples.
///
/// Entries are nonnegative and sum to 1 within 1e-12.
pub fn sample_dirichlet(alpha: &[f64], rng: &mut SeededRng) -> Vec<f64> {
    assert!(!alpha.is_empty(), "alpha must be non-empty");
    assert!(alpha.iter().all(|&a| a > 0.0), "alpha entries must be positive");
    let draws: Vec<f64> = alpha.iter().map(|&a| rng.gamma(a)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.iter().map(|&g| g / total).collect()
    } else {
        // Underflow to all-zero happens for tiny alpha; fall back to a point
        // mass on one uniformly chosen coordinate, the distribution's limit.
        let mut p = vec![0.0; alpha.len()];
        p[rng.index(alpha.len())] = 1.0;
        p
    }
}

/// Log-normal draw `exp(z * sigma)` with `z` standard normal; median 1.
///
/// `sigma = 0` short-circuits to exactly 1 without consuming a draw.
pub fn sample_lognormal(sigma: f64, rng: &mut SeededRng) -> f64 {
    assert!(sigma >= 0.0, "sigma must be nonnegative");
    if sigma == 0.0 {
        return 1.0;
    }
    (rng.standard_normal() * sigma).exp()
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    #[test]
    fn synthetic_shape_and_balance() {
        let ds = generate_synthetic(2, 2, 100, 0.1, 3).unwrap();
        assert_eq!(ds.len(), 200);
        assert_eq!(ds.class_counts(), vec![100, 100]);
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = generate_synthetic(3, 4, 10, 0.2, 9).unwrap();
        let b = generate_synthetic(3, 4, 10, 0.2, 9).unwrap();
        assert_eq!(a.features, b.features);
        let c = generate_synthetic(3, 4, 10, 0.2, 10).unwrap();
        assert_ne!(a.features, c.features);
    }

    #[test]
    fn synthetic_means_sit_on_unit_sphere() {
        // With tiny spread the per-class feature mean approximates the class
        // mean, which must have norm ~1.
        let ds = generate_synthetic(4, 8, 200, 1e-3, 5).unwrap();
        for rows in ds.rows_by_class() {
            let mut mean = vec![0.0; ds.dim];
            for &i in &rows {
                for (k, v) in ds.row(i).iter().enumerate() {
                    mean[k] += v;
                }
            }
            for v in mean.iter_mut() {
                *v /= rows.len() as f64;
            }
            let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 0.01, "norm {norm}");
        }
    }

    #[test]
    fn dataset_file_round_trips() {
        let ds = generate_synthetic(3, 5, 7, 0.4, 21).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.txt");
        save_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn load_rejects_label_out_of_range() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(&path, "#dataset v1 rows=2 dim=1 classes=2\n0,0.5\n2,0.5\n").unwrap();
        match load_dataset(&path) {
            Err(Error::MalformedDataset { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("label out of range"), "{message}");
            }
            other => panic!("expected malformed-dataset error, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_ragged_rows_and_empty_files() {
        let dir = tempfile::tempdir().unwrap();
        let ragged = dir.path().join("ragged.txt");
        std::fs::write(&ragged, "#dataset v1 rows=1 dim=2 classes=2\n0,0.5\n").unwrap();
        assert!(matches!(
            load_dataset(&ragged),
            Err(Error::MalformedDataset { line: 2, .. })
        ));
        let empty = dir.path().join("empty.txt");
        std::fs::write(&empty, "").unwrap();
        assert!(matches!(
            load_dataset(&empty),
            Err(Error::MalformedDataset { line: 1, .. })
        ));
    }

    #[test]
    fn split_is_stratified_disjoint_exhaustive() {
        let ds = generate_synthetic(2, 2, 5, 0.3, 2).unwrap();
        let (train, test) = train_test_split(&ds, 0.2, 1).unwrap();
        assert_eq!(test.class_counts(), vec![1, 1]);
        assert_eq!(train.len() + test.len(), ds.len());
        // Same seed reproduces the split.
        let (tr2, te2) = train_test_split(&ds, 0.2, 1).unwrap();
        assert_eq!(train, tr2);
        assert_eq!(test, te2);
    }

    #[test]
    fn split_rejects_emptying_fractions() {
        let ds = generate_synthetic(2, 2, 2, 0.3, 2).unwrap();
        assert!(train_test_split(&ds, 1e-9, 1).is_err());
    }

    #[test]
    fn dirichlet_sums_to_one() {
        let mut rng = SeededRng::derive(5, Stream::Partition, 0, 0);
        for i in 0..1000 {
            let alpha = vec![0.05 + (i % 7) as f64 * 0.5; 2 + i % 5];
            let p = sample_dirichlet(&alpha, &mut rng);
            let sum: f64 = p.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "sum {sum}");
            assert!(p.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn dirichlet_concentrates_at_large_alpha() {
        let mut rng = SeededRng::derive(6, Stream::Partition, 0, 0);
        let mut hits = 0;
        let trials = 10_000;
        for _ in 0..trials {
            let p = sample_dirichlet(&[1e6, 1e6], &mut rng);
            if (p[0] - 0.5).abs() < 0.01 {
                hits += 1;
            }
        }
        assert!(hits as f64 / trials as f64 >= 0.999, "hits {hits}");
    }

    #[test]
    fn dirichlet_polarizes_at_small_alpha() {
        let mut rng = SeededRng::derive(7, Stream::Partition, 0, 0);
        let mut extreme = 0;
        let trials = 10_000;
        for _ in 0..trials {
            let p = sample_dirichlet(&[0.05, 0.05], &mut rng);
            if p.iter().cloned().fold(0.0, f64::max) > 0.9 {
                extreme += 1;
            }
        }
        assert!(extreme as f64 / trials as f64 >= 0.70, "extreme {extreme}");
    }

    #[test]
    fn lognormal_median_is_one() {
        let mut rng = SeededRng::derive(8, Stream::Jitter, 0, 0);
        let mut draws: Vec<f64> = (0..100_000).map(|_| sample_lognormal(1.0, &mut rng)).collect();
        assert!(draws.iter().all(|&v| v > 0.0));
        draws.sort_by(f64::total_cmp);
        let median = draws[draws.len() / 2];
        assert!((median - 1.0).abs() < 0.03, "median {median}");
    }

    #[test]
    fn lognormal_sigma_zero_is_exactly_one() {
        let mut rng = SeededRng::derive(8, Stream::Jitter, 0, 0);
        assert_eq!(sample_lognormal(0.0, &mut rng), 1.0);
    }
}
