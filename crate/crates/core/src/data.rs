//! Synthetic multi-domain classification data.
//!
//! Classes share one set of means `μ_c`; each domain sees them through its
//! own orthogonal map and offset: `x = Q_i (μ_c + ε) + b_i`, `ε ~ N(0, σ² I)`.
//! Class geometry is therefore identical across domains while raw features
//! differ.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{derive_seed, gaussian_matrix, qr, seeded_rng, Matrix};
use crate::persist::write_atomic;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainDatasetSpec {
    pub num_domains: usize,
    pub num_classes: usize,
    pub input_dim: usize,
    /// Training samples per (domain, class).
    pub n_train: usize,
    /// Validation samples per (domain, class).
    pub n_val: usize,
    pub noise_std: f64,
    /// Standard deviation of the class-mean coordinates.
    #[serde(default = "one")]
    pub class_scale: f64,
    /// Standard deviation of the per-domain offset `b_i`; 0 disables it.
    #[serde(default = "one")]
    pub bias_std: f64,
    /// Use `Q_i = I`, `b_i = 0` for every domain.
    #[serde(default)]
    pub identity_transforms: bool,
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl Default for DomainDatasetSpec {
    fn default() -> Self {
        Self {
            num_domains: 3,
            num_classes: 5,
            input_dim: 64,
            n_train: 100,
            n_val: 40,
            noise_std: 1.5,
            class_scale: 1.0,
            bias_std: 1.0,
            identity_transforms: false,
            seed: 7,
        }
    }
}

impl DomainDatasetSpec {
    fn validate(&self) -> Result<()> {
        if self.num_domains == 0 || self.num_classes == 0 || self.input_dim == 0 {
            return Err(Error::Config(
                "domains, classes and input_dim must be positive".into(),
            ));
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!(
                "noise_std must be positive, got {}",
                self.noise_std
            )));
        }
        if self.class_scale.is_nan() || self.class_scale <= 0.0 || self.bias_std < 0.0 {
            return Err(Error::Config("class_scale > 0 and bias_std ≥ 0 required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub domain_id: usize,
    pub label: usize,
    pub features: Vec<f64>,
}

/// A labelled batch from a single domain; `x` is input_dim×batch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub domain: usize,
    pub x: Matrix,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub domain: usize,
    pub num_classes: usize,
    pub input_dim: usize,
    pub samples: Vec<Sample>,
}

impl DomainDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        let x = Matrix::from_fn(self.input_dim, indices.len(), |f, j| {
            self.samples[indices[j]].features[f]
        });
        Batch {
            domain: self.domain,
            x,
            labels: indices.iter().map(|&i| self.samples[i].label).collect(),
        }
    }

    pub fn full_batch(&self) -> Batch {
        let all: Vec<usize> = (0..self.len()).collect();
        self.batch(&all)
    }

    /// Number of samples per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone)]
pub struct DomainTransform {
    pub q: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MultiDomainData {
    pub spec: DomainDatasetSpec,
    /// C×input_dim, one mean per row.
    pub class_means: Matrix,
    pub transforms: Vec<DomainTransform>,
    pub train: Vec<DomainDataset>,
    pub val: Vec<DomainDataset>,
}

impl MultiDomainData {
    /// Smallest distance between two class means.
    pub fn min_class_margin(&self) -> f64 {
        min_pairwise_distance(&self.class_means)
    }
}

pub(crate) fn min_pairwise_distance(rows: &Matrix) -> f64 {
    let mut best = f64::INFINITY;
    for a in 0..rows.rows() {
        for b in a + 1..rows.rows() {
            let d: f64 = (0..rows.cols())
                .map(|j| (rows[(a, j)] - rows[(b, j)]).powi(2))
                .sum();
            best = best.min(d.sqrt());
        }
    }
    best
}

const MEANS_STREAM: u64 = 0;
const TRANSFORM_STREAM: u64 = 1;
const SAMPLE_STREAM: u64 = 2;

pub fn generate(spec: &DomainDatasetSpec) -> Result<MultiDomainData> {
    spec.validate()?;
    let dim = spec.input_dim;
    let class_means = gaussian_matrix(
        &mut seeded_rng(derive_seed(spec.seed, &[MEANS_STREAM])),
        spec.num_classes,
        dim,
        spec.class_scale,
    );

    let mut transforms = Vec::with_capacity(spec.num_domains);
    for i in 0..spec.num_domains {
        if spec.identity_transforms {
            transforms.push(DomainTransform {
                q: Matrix::identity(dim),
                bias: vec![0.0; dim],
            });
            continue;
        }
        let mut rng = seeded_rng(derive_seed(spec.seed, &[TRANSFORM_STREAM, i as u64]));
        let (q, _) = qr(&gaussian_matrix(&mut rng, dim, dim, 1.0))?;
        let bias = if spec.bias_std > 0.0 {
            gaussian_matrix(&mut rng, 1, dim, spec.bias_std).into_vec()
        } else {
            vec![0.0; dim]
        };
        transforms.push(DomainTransform { q, bias });
    }

    let make_split = |split: u64, per_class: usize| -> Vec<DomainDataset> {
        (0..spec.num_domains)
            .map(|i| {
                let mut rng =
                    seeded_rng(derive_seed(spec.seed, &[SAMPLE_STREAM, split, i as u64]));
                let t = &transforms[i];
                let mut samples = Vec::with_capacity(per_class * spec.num_classes);
                for c in 0..spec.num_classes {
                    for _ in 0..per_class {
                        let noise = gaussian_matrix(&mut rng, 1, dim, spec.noise_std);
                        let z: Vec<f64> = (0..dim)
                            .map(|j| class_means[(c, j)] + noise.as_slice()[j])
                            .collect();
                        let features = (0..dim)
                            .map(|r| {
                                let mut acc = t.bias[r];
                                for (j, zj) in z.iter().enumerate() {
                                    acc += t.q[(r, j)] * zj;
                                }
                                acc
                            })
                            .collect();
                        samples.push(Sample {
                            domain_id: i,
                            label: c,
                            features,
                        });
                    }
                }
                DomainDataset {
                    domain: i,
                    num_classes: spec.num_classes,
                    input_dim: dim,
                    samples,
                }
            })
            .collect()
    };
    let train = make_split(0, spec.n_train);
    let val = make_split(1, spec.n_val);

    Ok(MultiDomainData {
        spec: spec.clone(),
        class_means,
        transforms,
        train,
        val,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleCounts {
    /// Samples per (domain, class) in each train file.
    pub train: usize,
    /// Samples per (domain, class) in each val file.
    pub val: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(rename = "D")]
    pub num_domains: usize,
    #[serde(rename = "C")]
    pub num_classes: usize,
    pub input_dim: usize,
    pub counts: SampleCounts,
    pub seed: u64,
    pub sigma: f64,
}

/// Datasets read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub manifest: Manifest,
    pub train: Vec<DomainDataset>,
    pub val: Vec<DomainDataset>,
}

fn split_file(dir: &Path, domain: usize, split: &str) -> std::path::PathBuf {
    dir.join(format!("domain{domain}_{split}.csv"))
}

fn csv_header(input_dim: usize) -> Vec<String> {
    let mut h = vec!["domain".to_string(), "label".to_string()];
    h.extend((0..input_dim).map(|j| format!("f{j}")));
    h
}

fn write_split(path: &Path, set: &DomainDataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(csv_header(set.input_dim))?;
    for s in &set.samples {
        let mut row = vec![s.domain_id.to_string(), s.label.to_string()];
        // 17 significant digits round-trip every f64.
        row.extend(s.features.iter().map(|v| format!("{v:.16e}")));
        w.write_record(&row)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Data(format!("csv flush failed: {e}")))?;
    write_atomic(path, &bytes)?;
    Ok(())
}

pub fn save_dataset(data: &MultiDomainData, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = Manifest {
        num_domains: data.spec.num_domains,
        num_classes: data.spec.num_classes,
        input_dim: data.spec.input_dim,
        counts: SampleCounts {
            train: data.spec.n_train,
            val: data.spec.n_val,
        },
        seed: data.spec.seed,
        sigma: data.spec.noise_std,
    };
    for (split, sets) in [("train", &data.train), ("val", &data.val)] {
        for set in sets.iter() {
            write_split(&split_file(dir, set.domain, split), set)?;
        }
    }
    write_atomic(
        &dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?.as_bytes(),
    )?;
    Ok(())
}

fn read_split(path: &Path, manifest: &Manifest, domain: usize, per_class: usize) -> Result<DomainDataset> {
    let raw = fs::read(path)?;
    let name = path.display();
    let expected_header = csv_header(manifest.input_dim);
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(raw.as_slice());
    let mut records = reader.records();
    let header = match records.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => return Err(Error::Data(format!("{name}: unreadable header: {e}"))),
        None => return Err(Error::Data(format!("{name}: missing header"))),
    };
    if header.iter().ne(expected_header.iter().map(String::as_str)) {
        return Err(Error::Data(format!("{name}: malformed header")));
    }
    if !raw.ends_with(b"\n") {
        return Err(Error::Data(format!("{name}: file is truncated")));
    }
    let mut samples = Vec::new();
    for (row, record) in records.enumerate() {
        let record = record.map_err(|e| Error::Data(format!("{name}: row {row}: {e}")))?;
        if record.len() != manifest.input_dim + 2 {
            return Err(Error::Data(format!(
                "{name}: row {row} has {} fields, expected {}",
                record.len(),
                manifest.input_dim + 2
            )));
        }
        let parse_usize = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::Data(format!("{name}: row {row}: {e}")))
        };
        let domain_id = parse_usize(&record[0])?;
        let label = parse_usize(&record[1])?;
        if domain_id != domain || label >= manifest.num_classes {
            return Err(Error::Data(format!(
                "{name}: row {row} has domain {domain_id}, label {label}"
            )));
        }
        let features = record
            .iter()
            .skip(2)
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Data(format!("{name}: row {row}: bad value {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        samples.push(Sample {
            domain_id,
            label,
            features,
        });
    }
    let set = DomainDataset {
        domain,
        num_classes: manifest.num_classes,
        input_dim: manifest.input_dim,
        samples,
    };
    if set.class_counts().iter().any(|c| *c != per_class) {
        return Err(Error::Data(format!(
            "{name}: class counts {:?} disagree with manifest ({per_class} each)",
            set.class_counts()
        )));
    }
    Ok(set)
}

pub fn load_dataset(dir: &Path) -> Result<LoadedData> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)
        .map_err(|e| Error::Data(format!("manifest.json: {e}")))?;
    let mut train = Vec::with_capacity(manifest.num_domains);
    let mut val = Vec::with_capacity(manifest.num_domains);
    for i in 0..manifest.num_domains {
        train.push(read_split(&split_file(dir, i, "train"), &manifest, i, manifest.counts.train)?);
        val.push(read_split(&split_file(dir, i, "val"), &manifest, i, manifest.counts.val)?);
    }
    Ok(LoadedData {
        manifest,
        train,
        val,
    })
}
