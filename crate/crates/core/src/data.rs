//! Dataset ingestion: IDX image files, delimited feature tables with
//! categorical expansion, z-score standardization and seeded splits.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::regression::{encode_one_hot, OneHotTargets};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const STD_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceFormat {
    Idx,
    Delimited,
    Derived,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub path: String,
    pub format: SourceFormat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub feature_names: Option<Vec<String>>,
    pub class_names: Option<Vec<String>>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        let ds = Dataset {
            features,
            labels,
            class_count,
            feature_names: None,
            class_names: None,
            provenance: Provenance {
                path: String::new(),
                format: SourceFormat::Derived,
            },
        };
        ds.check()?;
        Ok(ds)
    }

    fn check(&self) -> Result<()> {
        if self.labels.len() != self.features.rows() {
            return Err(Error::Consistency(format!(
                "{} labels for {} feature rows",
                self.labels.len(),
                self.features.rows()
            )));
        }
        if let Some((row, &label)) = self.labels.iter().enumerate().find(|(_, &l)| l >= self.class_count) {
            return Err(Error::Encoding {
                row,
                label,
                class_count: self.class_count,
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn targets(&self) -> Result<OneHotTargets> {
        encode_one_hot(&self.labels, self.class_count)
    }

    pub fn class_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.class_count];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    /// Rows `idx` in the given order.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            feature_names: self.feature_names.clone(),
            class_names: self.class_names.clone(),
            provenance: self.provenance.clone(),
        }
    }

    /// First `n` rows (all of them when `n` exceeds the length).
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }

    /// Row-wise concatenation of datasets sharing dimension and classes.
    pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
        let first = parts.first().ok_or_else(|| Error::Consistency("nothing to concatenate".into()))?;
        for p in parts {
            if p.dim() != first.dim() || p.class_count != first.class_count {
                return Err(Error::Consistency(format!(
                    "cannot concatenate {}x{} ({} classes) with {}x{} ({} classes)",
                    first.len(),
                    first.dim(),
                    first.class_count,
                    p.len(),
                    p.dim(),
                    p.class_count
                )));
            }
        }
        let features = Matrix::vstack(&parts.iter().map(|p| &p.features).collect::<Vec<_>>())?;
        Ok(Dataset {
            features,
            labels: parts.iter().flat_map(|p| p.labels.iter().copied()).collect(),
            class_count: first.class_count,
            feature_names: first.feature_names.clone(),
            class_names: first.class_names.clone(),
            provenance: first.provenance.clone(),
        })
    }
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

/// Reads an IDX image file and its label file. Pixels are flattened row by
/// row and scaled into `[0, 1]`.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let mut images = BufReader::new(File::open(ip)?);
    let magic = images.read_u32::<BigEndian>()?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(format_err(ip, format!("bad image magic {magic:#010x}")));
    }
    let n = images.read_u32::<BigEndian>()? as usize;
    let rows = images.read_u32::<BigEndian>()? as usize;
    let cols = images.read_u32::<BigEndian>()? as usize;

    let mut labels_file = BufReader::new(File::open(lp)?);
    let magic = labels_file.read_u32::<BigEndian>()?;
    if magic != IDX_LABELS_MAGIC {
        return Err(format_err(lp, format!("bad label magic {magic:#010x}")));
    }
    let n_labels = labels_file.read_u32::<BigEndian>()? as usize;
    if n_labels != n {
        return Err(Error::Consistency(format!("{n} images but {n_labels} labels")));
    }

    let d = rows * cols;
    let mut pixels = vec![0u8; n * d];
    images
        .read_exact(&mut pixels)
        .map_err(|e| format_err(ip, format!("truncated pixel data: {e}")))?;
    let mut raw_labels = vec![0u8; n];
    labels_file
        .read_exact(&mut raw_labels)
        .map_err(|e| format_err(lp, format!("truncated label data: {e}")))?;

    let features = Matrix::from_vec_unchecked(n, d, pixels.iter().map(|&p| f64::from(p) / 255.0).collect());
    let labels: Vec<usize> = raw_labels.iter().map(|&l| usize::from(l)).collect();
    let class_count = labels.iter().max().map_or(0, |m| m + 1);
    Ok(Dataset {
        features,
        labels,
        class_count,
        feature_names: None,
        class_names: None,
        provenance: Provenance {
            path: ip.display().to_string(),
            format: SourceFormat::Idx,
        },
    })
}

/// Writes `n` images of `rows × cols` bytes and their labels in IDX format.
pub fn write_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    rows: usize,
    cols: usize,
    pixels: &[u8],
    labels: &[u8],
) -> Result<()> {
    if pixels.len() != labels.len() * rows * cols {
        return Err(Error::Consistency(format!(
            "{} pixel bytes do not cover {} images of {rows}x{cols}",
            pixels.len(),
            labels.len()
        )));
    }
    let dim = |v: usize| u32::try_from(v).map_err(|_| Error::param("idx dimension", format!("{v} exceeds u32")));
    let mut w = BufWriter::new(File::create(images_path)?);
    w.write_u32::<BigEndian>(IDX_IMAGES_MAGIC)?;
    w.write_u32::<BigEndian>(dim(labels.len())?)?;
    w.write_u32::<BigEndian>(dim(rows)?)?;
    w.write_u32::<BigEndian>(dim(cols)?)?;
    w.write_all(pixels)?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(labels_path)?);
    w.write_u32::<BigEndian>(IDX_LABELS_MAGIC)?;
    w.write_u32::<BigEndian>(dim(labels.len())?)?;
    w.write_all(labels)?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delimiter {
    Char(char),
    /// Runs of spaces or tabs.
    Whitespace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelColumn {
    First,
    Last,
    Index(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelimitedOptions {
    pub label_column: LabelColumn,
    pub delimiter: Delimiter,
    pub has_header: bool,
}

impl Default for DelimitedOptions {
    fn default() -> Self {
        Self {
            label_column: LabelColumn::Last,
            delimiter: Delimiter::Char(','),
            has_header: false,
        }
    }
}

struct RawTable {
    path: String,
    header: Option<Vec<String>>,
    /// (line number, tokens)
    rows: Vec<(usize, Vec<String>)>,
}

fn read_table(path: &Path, opts: &DelimitedOptions) -> Result<RawTable> {
    let reader = BufReader::new(File::open(path)?);
    let mut header = None;
    let mut rows = Vec::new();
    let mut width = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('@') || trimmed.starts_with('#') {
            continue;
        }
        let tokens: Vec<String> = match opts.delimiter {
            Delimiter::Char(c) => trimmed.split(c).map(|t| t.trim().to_string()).collect(),
            Delimiter::Whitespace => trimmed.split_whitespace().map(str::to_string).collect(),
        };
        match width {
            None => width = Some(tokens.len()),
            Some(w) if w != tokens.len() => {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: line_no,
                    reason: format!("expected {w} fields, found {}", tokens.len()),
                })
            }
            _ => {}
        }
        if opts.has_header && header.is_none() {
            header = Some(tokens);
            continue;
        }
        rows.push((line_no, tokens));
    }
    Ok(RawTable {
        path: path.display().to_string(),
        header,
        rows,
    })
}

/// Loads one delimited table. See [`load_delimited_set`] for files that
/// must share label and category encodings.
pub fn load_delimited(path: impl AsRef<Path>, opts: &DelimitedOptions) -> Result<Dataset> {
    Ok(load_delimited_set(&[path.as_ref()], opts)?.remove(0))
}

/// Loads several tables (for example a train and a test file) with a shared
/// encoding. Labels and categorical values are indexed in order of first
/// appearance across the files. A feature column is categorical when none
/// of its tokens parse as a number; a column mixing both is a parse error.
pub fn load_delimited_set<P: AsRef<Path>>(paths: &[P], opts: &DelimitedOptions) -> Result<Vec<Dataset>> {
    if paths.is_empty() {
        return Err(Error::param("paths", "no files given"));
    }
    let tables: Vec<RawTable> = paths.iter().map(|p| read_table(p.as_ref(), opts)).collect::<Result<_>>()?;
    let width = tables.iter().flat_map(|t| t.rows.first()).map(|(_, r)| r.len()).next().unwrap_or(0);
    for t in &tables {
        if let Some((line, r)) = t.rows.iter().find(|(_, r)| r.len() != width) {
            return Err(Error::Parse {
                path: t.path.clone(),
                line: *line,
                reason: format!("expected {width} fields, found {}", r.len()),
            });
        }
    }
    if width < 2 {
        return Err(Error::Format {
            path: tables[0].path.clone(),
            reason: "need a label column and at least one feature".into(),
        });
    }
    let label_col = match opts.label_column {
        LabelColumn::First => 0,
        LabelColumn::Last => width - 1,
        LabelColumn::Index(i) if i < width => i,
        LabelColumn::Index(i) => return Err(Error::param("label_column", format!("{i} out of range for {width} columns"))),
    };
    let feature_cols: Vec<usize> = (0..width).filter(|&c| c != label_col).collect();
    let header = tables.iter().find_map(|t| t.header.clone());

    // categorical iff no token in the column is numeric
    let categorical: Vec<bool> = feature_cols
        .iter()
        .map(|&c| {
            !tables
                .iter()
                .flat_map(|t| t.rows.iter())
                .any(|(_, r)| r[c].parse::<f64>().is_ok())
        })
        .collect();
    let mut categories: Vec<Vec<String>> = vec![Vec::new(); feature_cols.len()];
    let mut category_index: Vec<HashMap<String, usize>> = vec![HashMap::new(); feature_cols.len()];
    let mut class_names: Vec<String> = Vec::new();
    let mut class_index: HashMap<String, usize> = HashMap::new();
    for t in &tables {
        for (_, r) in &t.rows {
            for (k, &c) in feature_cols.iter().enumerate() {
                if categorical[k] && !category_index[k].contains_key(&r[c]) {
                    category_index[k].insert(r[c].clone(), categories[k].len());
                    categories[k].push(r[c].clone());
                }
            }
            if !class_index.contains_key(&r[label_col]) {
                class_index.insert(r[label_col].clone(), class_names.len());
                class_names.push(r[label_col].clone());
            }
        }
    }

    let mut names = Vec::new();
    for (k, &c) in feature_cols.iter().enumerate() {
        let base = header.as_ref().map_or_else(|| format!("col{c}"), |h| h[c].clone());
        if categorical[k] {
            names.extend(categories[k].iter().map(|v| format!("{base}={v}")));
        } else {
            names.push(base);
        }
    }
    let dim = names.len();

    let mut out = Vec::with_capacity(tables.len());
    for t in &tables {
        let mut data = Vec::with_capacity(t.rows.len() * dim);
        let mut labels = Vec::with_capacity(t.rows.len());
        for (line, r) in &t.rows {
            for (k, &c) in feature_cols.iter().enumerate() {
                if categorical[k] {
                    let hot = category_index[k][&r[c]];
                    data.extend((0..categories[k].len()).map(|i| if i == hot { 1.0 } else { 0.0 }));
                } else {
                    let v: f64 = r[c].parse().map_err(|_| Error::Parse {
                        path: t.path.clone(),
                        line: *line,
                        reason: format!("column {c}: `{}` is not a number", r[c]),
                    })?;
                    if !v.is_finite() {
                        return Err(Error::Parse {
                            path: t.path.clone(),
                            line: *line,
                            reason: format!("column {c}: non-finite value `{}`", r[c]),
                        });
                    }
                    data.push(v);
                }
            }
            labels.push(class_index[&r[label_col]]);
        }
        out.push(Dataset {
            features: Matrix::from_vec_unchecked(t.rows.len(), dim, data),
            labels,
            class_count: class_names.len(),
            feature_names: Some(names.clone()),
            class_names: Some(class_names.clone()),
            provenance: Provenance {
                path: t.path.clone(),
                format: SourceFormat::Delimited,
            },
        });
    }
    Ok(out)
}

/// Per-feature z-scoring with statistics from training rows only.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviation, floored at `1e-12`.
    pub std: Vec<f64>,
    /// Columns whose spread fell under the floor; they map to zero.
    pub constant: Vec<bool>,
}

impl Standardizer {
    pub fn fit(train: &Dataset) -> Standardizer {
        Self::fit_matrix(&train.features)
    }

    pub fn fit_matrix(x: &Matrix) -> Standardizer {
        let n = x.rows().max(1) as f64;
        let d = x.cols();
        let mut mean = vec![0.0; d];
        for r in x.row_iter() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in x.row_iter() {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let raw: Vec<f64> = var.iter().map(|s| (s / n).sqrt()).collect();
        Standardizer {
            mean,
            std: raw.iter().map(|s| s.max(STD_FLOOR)).collect(),
            constant: raw.iter().map(|&s| s <= STD_FLOOR).collect(),
        }
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.mean.len() {
            return Err(Error::shape("standardize", self.mean.len(), x.cols()));
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = if self.constant[c] { 0.0 } else { (*v - self.mean[c]) / self.std[c] };
            }
        }
        Ok(out)
    }

    pub fn apply_dataset(&self, ds: &Dataset) -> Result<Dataset> {
        let mut out = ds.clone();
        out.features = self.apply(&ds.features)?;
        Ok(out)
    }
}

pub fn fit_standardizer(train: &Dataset) -> Standardizer {
    Standardizer::fit(train)
}

fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

/// Seeded train/test split with `round(fraction·N)` training rows. In
/// stratified mode each class contributes `round(fraction·n_c)` rows.
pub fn split(ds: &Dataset, train_fraction: f64, stratified: bool, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Split(format!("train fraction must lie in (0, 1), got {train_fraction}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    if stratified {
        let sizes = ds.class_sizes();
        if let Some(c) = sizes.iter().position(|&n| n == 0) {
            return Err(Error::Split(format!("class {c} has no samples")));
        }
        for (c, &n_c) in sizes.iter().enumerate() {
            let members: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == c).collect();
            let k = (train_fraction * n_c as f64).round() as usize;
            let order = shuffled(n_c, &mut rng);
            train_idx.extend(order[..k].iter().map(|&o| members[o]));
            test_idx.extend(order[k..].iter().map(|&o| members[o]));
        }
    } else {
        let k = (train_fraction * ds.len() as f64).round() as usize;
        let order = shuffled(ds.len(), &mut rng);
        train_idx.extend_from_slice(&order[..k]);
        test_idx.extend_from_slice(&order[k..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((ds.select(&train_idx), ds.select(&test_idx)))
}

/// Seeded split with exactly `n_train` training rows.
pub fn split_count(ds: &Dataset, n_train: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if n_train == 0 || n_train >= ds.len() {
        return Err(Error::Split(format!("training count must lie in 1..{}, got {n_train}", ds.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order = shuffled(ds.len(), &mut rng);
    let mut train_idx = order[..n_train].to_vec();
    let mut test_idx = order[n_train..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((ds.select(&train_idx), ds.select(&test_idx)))
}

/// Seeded random subset of `n` rows, or the whole set when `n >= N`.
pub fn subsample(ds: &Dataset, n: usize, seed: u64) -> Dataset {
    if n >= ds.len() {
        return ds.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = shuffled(ds.len(), &mut rng)[..n].to_vec();
    idx.sort_unstable();
    ds.select(&idx)
}
