//! Multi-omics CSV ingestion, synthetic data and semi-supervised splits.

pub mod hexfloat;

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::diffcore::DenseMatrix;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

/// One modality: `N × D` features for the dataset's samples.
#[derive(Debug, Clone, PartialEq)]
pub struct OmicsView {
    pub modality_id: String,
    pub features: DenseMatrix,
    pub feature_names: Vec<String>,
}

impl OmicsView {
    pub fn width(&self) -> usize {
        self.features.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiOmicsDataset {
    pub views: Vec<OmicsView>,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub class_names: Vec<String>,
    pub sample_ids: Vec<String>,
}

impl MultiOmicsDataset {
    /// Checks the cross-view invariants.
    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(Error::Format("dataset has no views".into()));
        }
        let n = self.sample_ids.len();
        if self.labels.len() != n {
            return Err(Error::Format(format!(
                "{} labels for {n} samples",
                self.labels.len()
            )));
        }
        for v in &self.views {
            if v.features.rows() != n {
                return Err(Error::Format(format!(
                    "view {} has {} rows, expected {n}",
                    v.modality_id,
                    v.features.rows()
                )));
            }
            if v.feature_names.len() != v.features.cols() {
                return Err(Error::Format(format!(
                    "view {} has {} feature names for {} columns",
                    v.modality_id,
                    v.feature_names.len(),
                    v.features.cols()
                )));
            }
            if !v.features.is_finite() {
                return Err(Error::Format(format!("view {} has non-finite values", v.modality_id)));
            }
        }
        let mut counts = vec![0usize; self.class_count];
        for &l in &self.labels {
            if l >= self.class_count {
                return Err(Error::Format(format!(
                    "label {l} out of range for {} classes",
                    self.class_count
                )));
            }
            counts[l] += 1;
        }
        if let Some(c) = counts.iter().position(|&k| k == 0) {
            return Err(Error::Format(format!("class {c} has no samples")));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.views.iter().map(OmicsView::width).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Column concatenation of all views (`N × ΣD`).
    pub fn concatenated_features(&self) -> DenseMatrix {
        let parts: Vec<&DenseMatrix> = self.views.iter().map(|v| &v.features).collect();
        DenseMatrix::hconcat(&parts).expect("views share the sample count")
    }

    /// Per-column z-scoring of every view. Constant columns are centred only.
    pub fn zscored(&self) -> Self {
        let mut out = self.clone();
        for v in &mut out.views {
            let (n, d) = v.features.shape();
            for j in 0..d {
                let mean = (0..n).map(|i| v.features.get(i, j)).sum::<f64>() / n as f64;
                let var = (0..n)
                    .map(|i| (v.features.get(i, j) - mean).powi(2))
                    .sum::<f64>()
                    / n as f64;
                let sd = var.sqrt();
                for i in 0..n {
                    let x = v.features.get(i, j) - mean;
                    v.features.set(i, j, if sd > 0.0 { x / sd } else { x });
                }
            }
        }
        out
    }

    /// Consistent reordering of samples: output sample `i` is input `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            views: self
                .views
                .iter()
                .map(|v| OmicsView {
                    modality_id: v.modality_id.clone(),
                    features: v.features.select_rows(perm),
                    feature_names: v.feature_names.clone(),
                })
                .collect(),
            labels: perm.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            class_names: self.class_names.clone(),
            sample_ids: perm.iter().map(|&i| self.sample_ids[i].clone()).collect(),
        }
    }

    /// SHA-256 over shapes, ids, class names and the exact feature bits.
/// Independent of how classes are numbered.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.views.len() as u64).to_le_bytes());
        for v in &self.views {
            h.update(v.modality_id.as_bytes());
            h.update([0]);
            h.update((v.features.rows() as u64).to_le_bytes());
            h.update((v.features.cols() as u64).to_le_bytes());
            for x in v.features.data() {
                h.update(x.to_bits().to_le_bytes());
            }
        }
        for (id, &l) in self.sample_ids.iter().zip(&self.labels) {
            h.update(id.as_bytes());
            h.update([0]);
            h.update(self.class_names.get(l).map_or(&[][..], |c| c.as_bytes()));
            h.update([0]);
        }
        hex_string(&h.finalize())
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Train/test partition of sample indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LabelMask {
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub seed: u64,
}

impl LabelMask {
    /// `n`-length membership vector for the labeled set.
    pub fn train_flags(&self, n: usize) -> Vec<bool> {
        let mut flags = vec![false; n];
        for &i in &self.train_indices {
            flags[i] = true;
        }
        flags
    }

    /// Mask after a consistent sample reordering (output `i` is input `perm[i]`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut inverse = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let mut train: Vec<usize> = self.train_indices.iter().map(|&i| inverse[i]).collect();
        let mut test: Vec<usize> = self.test_indices.iter().map(|&i| inverse[i]).collect();
        train.sort_unstable();
        test.sort_unstable();
        Self {
            train_indices: train,
            test_indices: test,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthSpec {
    pub n: usize,
    pub m: usize,
    pub classes: usize,
    pub dims: Vec<usize>,
    pub cluster_separation: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub const DEFAULT_WIDTH: usize = 32;

    /// Spec with every view `DEFAULT_WIDTH` features wide.
    pub fn new(n: usize, m: usize, classes: usize, separation: f64, sigma: f64, seed: u64) -> Self {
        Self {
            n,
            m,
            classes,
            dims: vec![Self::DEFAULT_WIDTH; m],
            cluster_separation: separation,
            noise_sigma: sigma,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 {
            return Err(Error::Spec("need at least one class".into()));
        }
        if self.n < self.classes {
            return Err(Error::Spec(format!(
                "N = {} is smaller than the class count {}",
                self.n, self.classes
            )));
        }
        if self.m == 0 || self.dims.len() != self.m {
            return Err(Error::Spec(format!(
                "{} widths given for {} views",
                self.dims.len(),
                self.m
            )));
        }
        if self.dims.contains(&0) {
            return Err(Error::Spec("every view needs at least one feature".into()));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::Spec(format!("noise sigma {} must be >= 0", self.noise_sigma)));
        }
        if !self.cluster_separation.is_finite() {
            return Err(Error::Spec("cluster separation must be finite".into()));
        }
        Ok(())
    }
}

/// Gaussian class clusters per view. Labels are balanced (`i mod c`) and then
/// shuffled; each view draws its own `c` centroids.
pub fn synth_generate(spec: &SynthSpec) -> Result<MultiOmicsDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut labels: Vec<usize> = (0..spec.n).map(|i| i % spec.classes).collect();
    labels.shuffle(&mut rng);

    let mut views = Vec::with_capacity(spec.m);
    for (m, &d) in spec.dims.iter().enumerate() {
        let centroids = DenseMatrix::from_fn(spec.classes, d, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            spec.cluster_separation * z
        });
        let features = DenseMatrix::from_fn(spec.n, d, |i, j| {
            let z: f64 = StandardNormal.sample(&mut rng);
            centroids.get(labels[i], j) + spec.noise_sigma * z
        });
        views.push(OmicsView {
            modality_id: format!("view{m}"),
            features,
            feature_names: (0..d).map(|j| format!("v{m}_f{j}")).collect(),
        });
    }
    Ok(MultiOmicsDataset {
        views,
        labels,
        class_count: spec.classes,
        class_names: (0..spec.classes).map(|c| format!("class{c}")).collect(),
        sample_ids: (0..spec.n).map(|i| format!("s{i:05}")).collect(),
    })
}

/// Stratified labeled subset: `⌈ratio · n_class⌉` random samples per class.
pub fn split_semi_supervised(dataset: &MultiOmicsDataset, label_ratio: f64, seed: u64) -> Result<LabelMask> {
    if !(label_ratio > 0.0 && label_ratio < 1.0) {
        return Err(Error::Parameter(format!(
            "label ratio must lie in (0, 1), got {label_ratio}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 0..dataset.class_count {
        let mut members: Vec<usize> = dataset
            .labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect();
        // guard against 0.1 * 30 = 3.0000000000000004 rounding up to 4
        let take = ((label_ratio * members.len() as f64) - 1e-9).ceil() as usize;
        let take = take.min(members.len());
        if take < 1 {
            return Err(Error::Stratification(format!(
                "class {} ({}) would have no labeled sample",
                class,
                dataset.class_names.get(class).map_or("?", String::as_str)
            )));
        }
        members.shuffle(&mut rng);
        train.extend_from_slice(&members[..take]);
        test.extend_from_slice(&members[take..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(LabelMask {
        train_indices: train,
        test_indices: test,
        seed,
    })
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn read_label_file(path: &Path) -> Result<(Vec<String>, Vec<String>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.len() != 2 {
        return Err(Error::Format(format!(
            "{}: label file needs exactly the columns sample_id,label",
            path_str(path)
        )));
    }
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut seen = HashSet::new();
    for rec in rdr.records() {
        let rec = rec?;
        let id = rec[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::Format(format!(
                "{}: duplicate sample id {id}",
                path_str(path)
            )));
        }
        ids.push(id);
        labels.push(rec[1].to_string());
    }
    Ok((ids, labels))
}

fn read_view_file(path: &Path) -> Result<(Vec<String>, Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.len() < 2 {
        return Err(Error::Format(format!(
            "{}: view file needs a sample id column and at least one feature",
            path_str(path)
        )));
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row_no = rec.position().map_or(r as u64 + 2, |p| p.line()) as usize;
        let id = rec[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::Format(format!(
                "{}: duplicate sample id {id}",
                path_str(path)
            )));
        }
        let mut row = Vec::with_capacity(names.len());
        for (c, cell) in rec.iter().enumerate().skip(1) {
            let v = hexfloat::parse_number(cell).ok_or_else(|| Error::Parse {
                path: path_str(path),
                row: row_no,
                column: c + 1,
                detail: format!("not a number: {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: path_str(path),
                    row: row_no,
                    column: c + 1,
                    detail: format!("non-finite value {cell:?}"),
                });
            }
            row.push(v);
        }
        ids.push(id);
        rows.push(row);
    }
    Ok((names, ids, rows))
}

/// Loads view CSVs (`sample_id,<features...>`) and a label CSV
/// (`sample_id,label`). Views are reordered to the label file's sample order
/// and labels are numbered by first appearance.
pub fn load_dataset<P: AsRef<Path>>(view_paths: &[P], label_path: impl AsRef<Path>) -> Result<MultiOmicsDataset> {
    if view_paths.is_empty() {
        return Err(Error::Format("at least one view file is required".into()));
    }
    let label_path = label_path.as_ref();
    let (sample_ids, raw_labels) = read_label_file(label_path)?;

    let mut class_names: Vec<String> = Vec::new();
    let mut class_index: HashMap<String, usize> = HashMap::new();
    let labels: Vec<usize> = raw_labels
        .iter()
        .map(|l| {
            *class_index.entry(l.clone()).or_insert_with(|| {
                class_names.push(l.clone());
                class_names.len() - 1
            })
        })
        .collect();

    let mut views = Vec::with_capacity(view_paths.len());
    for p in view_paths {
        let p = p.as_ref();
        let (names, ids, rows) = read_view_file(p)?;
        let position: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let missing: Vec<String> = sample_ids
            .iter()
            .filter(|s| !position.contains_key(s.as_str()))
            .cloned()
            .collect();
        let wanted: HashSet<&str> = sample_ids.iter().map(String::as_str).collect();
        let unexpected: Vec<String> = ids.iter().filter(|s| !wanted.contains(s.as_str())).cloned().collect();
        if !missing.is_empty() || !unexpected.is_empty() {
            return Err(Error::Alignment {
                path: path_str(p),
                missing,
                unexpected,
            });
        }
        let width = names.len();
        let mut data = Vec::with_capacity(sample_ids.len() * width);
        for s in &sample_ids {
            data.extend_from_slice(&rows[position[s.as_str()]]);
        }
        let modality_id = p
            .file_stem()
            .map_or_else(|| format!("view{}", views.len()), |s| s.to_string_lossy().into_owned());
        views.push(OmicsView {
            modality_id,
            features: DenseMatrix::new(sample_ids.len(), width, data)?,
            feature_names: names,
        });
    }

    let ds = MultiOmicsDataset {
        views,
        labels,
        class_count: class_names.len(),
        class_names,
        sample_ids,
    };
    ds.validate()?;
    Ok(ds)
}

/// Writes `<modality_id>.csv` per view plus `labels.csv` into `dir`, with
/// every feature stored as a hexadecimal float literal.
pub fn save_dataset(dataset: &MultiOmicsDataset, dir: impl AsRef<Path>) -> Result<(Vec<PathBuf>, PathBuf)> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut view_paths = Vec::with_capacity(dataset.views.len());
    for v in &dataset.views {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["sample_id".to_string()];
        header.extend(v.feature_names.iter().cloned());
        w.write_record(&header)?;
        for (i, id) in dataset.sample_ids.iter().enumerate() {
            let mut rec = vec![id.clone()];
            rec.extend(v.features.row(i).iter().map(|x| hexfloat::format_hex(*x)));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        let path = dir.join(format!("{}.csv", v.modality_id));
        write_atomic(&path, &bytes)?;
        view_paths.push(path);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["sample_id", "label"])?;
    for (id, l) in dataset.sample_ids.iter().zip(&dataset.labels) {
        w.write_record([id.as_str(), dataset.class_names[*l].as_str()])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    let label_path = dir.join("labels.csv");
    write_atomic(&label_path, &bytes)?;
    Ok((view_paths, label_path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn loads_and_aligns_to_label_order() {
        let dir = tempfile::tempdir().unwrap();
        let a = write(dir.path(), "mrna.csv", "sample_id,g1,g2\nx,1,2\ny,3,4\nz,5,6\n");
        let b = write(dir.path(), "meth.csv", "sample_id,c1\nz,0x1p+0\nx,-2.5\ny,7\n");
        let l = write(dir.path(), "labels.csv", "sample_id,label\nx,A\ny,B\nz,A\n");
        let ds = load_dataset(&[a, b], l).unwrap();
        assert_eq!(ds.n_samples(), 3);
        assert_eq!(ds.class_count, 2);
        assert_eq!(ds.labels, vec![0, 1, 0]);
        assert_eq!(ds.class_names, vec!["A", "B"]);
        assert_eq!(ds.views[1].features.data(), &[-2.5, 7.0, 1.0]);
        assert_eq!(ds.views[0].modality_id, "mrna");
    }

    #[test]
    fn missing_id_is_alignment_error_naming_it() {
        let dir = tempfile::tempdir().unwrap();
        let a = write(dir.path(), "v.csv", "sample_id,g1\nx,1\ny,3\n");
        let l = write(dir.path(), "labels.csv", "sample_id,label\nx,A\ny,B\nz,A\n");
        let err = load_dataset(&[a], l).unwrap_err();
        match &err {
            Error::Alignment { missing, .. } => assert_eq!(missing, &vec!["z".to_string()]),
            e => panic!("unexpected {e}"),
        }
        assert!(err.to_string().contains('z'));
    }

    #[test]
    fn non_numeric_cell_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let a = write(dir.path(), "v.csv", "sample_id,g1,g2\nx,1,2\ny,3,oops\n");
        let l = write(dir.path(), "labels.csv", "sample_id,label\nx,A\ny,B\n");
        match load_dataset(&[a], l).unwrap_err() {
            Error::Parse { row, column, .. } => assert_eq!((row, column), (3, 3)),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn duplicate_id_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let a = write(dir.path(), "v.csv", "sample_id,g1\nx,1\nx,3\n");
        let l = write(dir.path(), "labels.csv", "sample_id,label\nx,A\ny,B\n");
        assert!(matches!(load_dataset(&[a], &l), Err(Error::Format(_))));
        let l2 = write(dir.path(), "l2.csv", "sample_id,label\nx,A\nx,B\n");
        let a2 = write(dir.path(), "v2.csv", "sample_id,g1\nx,1\n");
        assert!(matches!(load_dataset(&[a2], l2), Err(Error::Format(_))));
    }

    #[test]
    fn quoted_fields_are_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let a = write(dir.path(), "v.csv", "sample_id,\"gene, a\"\n\"s,1\",1.5\n");
        let l = write(dir.path(), "labels.csv", "sample_id,label\n\"s,1\",\"A \"\"x\"\"\"\n");
        let ds = load_dataset(&[a], l).unwrap();
        assert_eq!(ds.sample_ids, vec!["s,1"]);
        assert_eq!(ds.views[0].feature_names, vec!["gene, a"]);
        assert_eq!(ds.class_names, vec!["A \"x\""]);
    }

    #[test]
    fn synthetic_round_trip_is_bit_exact() {
        let spec = SynthSpec {
            dims: vec![3, 5],
            ..SynthSpec::new(12, 2, 3, 2.0, 0.7, 11)
        };
        let ds = synth_generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (views, labels) = save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(&views, labels).unwrap();
        // class numbering is by first appearance, so compare through names
        for (a, b) in ds.views.iter().zip(&back.views) {
            for (x, y) in a.features.data().iter().zip(b.features.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        let names_a: Vec<&str> = ds.labels.iter().map(|&l| ds.class_names[l].as_str()).collect();
        let names_b: Vec<&str> = back.labels.iter().map(|&l| back.class_names[l].as_str()).collect();
        assert_eq!(names_a, names_b);
    }

    #[test]
    fn zero_noise_rows_equal_within_class() {
        let ds = synth_generate(&SynthSpec::new(20, 2, 3, 4.0, 0.0, 3)).unwrap();
        for v in &ds.views {
            for i in 0..20 {
                for j in 0..20 {
                    if ds.labels[i] == ds.labels[j] {
                        assert_eq!(v.features.row(i), v.features.row(j));
                    }
                }
            }
        }
    }

    #[test]
    fn synth_is_deterministic_and_validates() {
        let s = SynthSpec::new(30, 3, 4, 5.0, 1.0, 9);
        assert_eq!(synth_generate(&s).unwrap(), synth_generate(&s).unwrap());
        assert!(matches!(
            synth_generate(&SynthSpec::new(2, 1, 4, 1.0, 1.0, 0)),
            Err(Error::Spec(_))
        ));
    }

    #[test]
    fn split_ceiling_arithmetic() {
        let ds = synth_generate(&SynthSpec::new(10, 1, 2, 1.0, 1.0, 0)).unwrap();
        let m = split_semi_supervised(&ds, 0.1, 4).unwrap();
        assert_eq!(m.train_indices.len(), 2);
        let classes: HashSet<usize> = m.train_indices.iter().map(|&i| ds.labels[i]).collect();
        assert_eq!(classes.len(), 2);

        let ds4 = synth_generate(&SynthSpec::new(4, 1, 2, 1.0, 1.0, 0)).unwrap();
        let m4 = split_semi_supervised(&ds4, 0.5, 1).unwrap();
        assert_eq!((m4.train_indices.len(), m4.test_indices.len()), (2, 2));
        assert!(m4.train_indices.iter().all(|i| !m4.test_indices.contains(i)));
    }

    #[test]
    fn split_rejects_bad_ratio() {
        let ds = synth_generate(&SynthSpec::new(10, 1, 2, 1.0, 1.0, 0)).unwrap();
        assert!(split_semi_supervised(&ds, 0.0, 0).is_err());
        assert!(split_semi_supervised(&ds, 1.0, 0).is_err());
    }

    #[test]
    fn split_tracks_class_proportions_over_seeds() {
        let spec = SynthSpec::new(97, 1, 3, 1.0, 1.0, 5);
        let mut ds = synth_generate(&spec).unwrap();
        // make the classes unbalanced
        for l in ds.labels.iter_mut().take(30) {
            *l = 0;
        }
        let counts = ds.class_counts();
        let n = ds.n_samples() as f64;
        for seed in 0..100 {
            let m = split_semi_supervised(&ds, 0.1, seed).unwrap();
            let k = m.train_indices.len() as f64;
            let mut got = vec![0usize; 3];
            for &i in &m.train_indices {
                got[ds.labels[i]] += 1;
            }
            for c in 0..3 {
                let expected = k * counts[c] as f64 / n;
                assert!((got[c] as f64 - expected).abs() <= 1.0, "seed {seed} class {c}");
            }
            let mut all: Vec<usize> = m.train_indices.iter().chain(&m.test_indices).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..ds.n_samples()).collect::<Vec<_>>());
        }
    }
}
