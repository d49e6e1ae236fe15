//! Deterministic synthetic volumes with a planted privileged signal.
//!
//! Each subject carries an ellipsoidal "lesion" on a noisy background. The
//! grade-discriminative attribute is the lesion core intensity contrast: it
//! is rendered into the single contrast-enhanced (CE) channel at full
//! strength and into the three non-enhanced (NE) channels weakened, mixed
//! with a grade-independent shape term, and passed through a tanh
//! distortion. The CE channel is therefore strictly more informative about
//! the grade than the NE channels, which is the property the prompt
//! mechanism needs; `channel_threshold_auc` measures that gap directly.
//!
//! Generation is a pure function of the spec (including its seed): each
//! sample draws from its own derived stream, so datasets are byte-identical
//! across runs.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::container::{self, ContainerError};
use crate::metrics::{self, MetricError, ScoredSet};
use crate::seeding::derive_seed;
use crate::tensor::Tensor;

/// Magic string of dataset files.
pub const DATASET_MAGIC: [u8; 8] = *b"PNETDAT\x01";
/// Format version written by this build.
pub const DATASET_VERSION: u32 = 1;
/// Smallest volume extent the generator accepts.
pub const MIN_EXTENT: usize = 4;

/// Mean lesion contrast of the HGG-analog class (label 1).
pub const HGG_CONTRAST_MEAN: f64 = 1.0;
/// Mean lesion contrast of the LGG-analog class (label 0).
pub const LGG_CONTRAST_MEAN: f64 = 0.4;
/// Within-class spread of the lesion contrast.
pub const CONTRAST_STD: f64 = 0.25;
/// Per-NE-channel weight of the (distorted) grade signal.
pub const NE_SIGNAL_MIX: [f64; 3] = [0.2, 1.0, 0.6];
/// Per-NE-channel weight of the grade-independent lesion shape term.
pub const NE_SHAPE_MIX: [f64; 3] = [0.8, 0.0, 0.4];

/// One subject: separated channel sets plus the grade label.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub subject_id: String,
    /// Non-enhanced channels, shape [3, D, H, W].
    pub ne_volume: Tensor,
    /// Contrast-enhanced channel, shape [1, D, H, W].
    pub ce_volume: Tensor,
    /// 0 = LGG analog, 1 = HGG analog.
    pub label: u8,
}

/// Parameters that fully determine a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub n_samples: usize,
    pub volume_extent: usize,
    /// Probability that a sample is the HGG analog (label 1).
    pub class_balance: f64,
    pub ce_signal_strength: f64,
    pub ne_signal_strength: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    /// When set, generation insists on ce_signal_strength > ne_signal_strength.
    pub privileged: bool,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            n_samples: 200,
            volume_extent: 16,
            class_balance: 0.5,
            ce_signal_strength: 2.0,
            ne_signal_strength: 0.35,
            noise_sigma: 0.6,
            seed: 7,
            privileged: true,
        }
    }
}

/// Errors from generation, splitting and dataset file I/O.
#[derive(Debug)]
pub enum SynthError {
    EmptyDataset,
    ExtentTooSmall { extent: usize, min: usize },
    BadClassBalance { value: f64 },
    /// Privileged generation requires the CE signal to dominate the NE one.
    NotPrivileged { ce: f64, ne: f64 },
    BadTrainFraction { value: f64 },
    /// A label stratum would leave one side of the split empty.
    EmptyStratum { label: u8, side: &'static str },
    Container(ContainerError),
    Metric(MetricError),
}

impl fmt::Display for SynthError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SynthError::EmptyDataset => write!(f, "n_samples must be >= 1"),
            SynthError::ExtentTooSmall { extent, min } => {
                write!(f, "volume extent {extent} is below the minimum of {min}")
            }
            SynthError::BadClassBalance { value } => {
                write!(f, "class_balance must lie in (0,1), got {value}")
            }
            SynthError::NotPrivileged { ce, ne } => write!(
                f,
                "privileged dataset requires ce_signal_strength > ne_signal_strength \
                 (got ce={ce}, ne={ne})"
            ),
            SynthError::BadTrainFraction { value } => {
                write!(f, "train fraction must lie in (0,1), got {value}")
            }
            SynthError::EmptyStratum { label, side } => {
                write!(f, "label-{label} stratum would leave the {side} side empty")
            }
            SynthError::Container(e) => write!(f, "dataset file: {e}"),
            SynthError::Metric(e) => write!(f, "oracle metric: {e}"),
        }
    }
}

impl std::error::Error for SynthError {}

impl From<ContainerError> for SynthError {
    fn from(e: ContainerError) -> Self {
        SynthError::Container(e)
    }
}

impl From<MetricError> for SynthError {
    fn from(e: MetricError) -> Self {
        SynthError::Metric(e)
    }
}

fn validate(spec: &DatasetSpec) -> Result<(), SynthError> {
    if spec.n_samples == 0 {
        return Err(SynthError::EmptyDataset);
    }
    if spec.volume_extent < MIN_EXTENT {
        return Err(SynthError::ExtentTooSmall { extent: spec.volume_extent, min: MIN_EXTENT });
    }
    if !(spec.class_balance > 0.0 && spec.class_balance < 1.0) {
        return Err(SynthError::BadClassBalance { value: spec.class_balance });
    }
    if spec.privileged && spec.ce_signal_strength <= spec.ne_signal_strength {
        return Err(SynthError::NotPrivileged {
            ce: spec.ce_signal_strength,
            ne: spec.ne_signal_strength,
        });
    }
    Ok(())
}

struct GeneratedSample {
    sample: Sample,
    lesion_mask: Vec<bool>,
}

fn generate_one(spec: &DatasetSpec, index: usize) -> GeneratedSample {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, index as u64));
    let e = spec.volume_extent;
    let ef = e as f64;

    let label = u8::from(rng.gen_bool(spec.class_balance));
    let center: [f64; 3] = [
        rng.gen_range(0.3 * ef..0.7 * ef),
        rng.gen_range(0.3 * ef..0.7 * ef),
        rng.gen_range(0.3 * ef..0.7 * ef),
    ];
    let axes: [f64; 3] = [
        rng.gen_range(0.17 * ef..0.32 * ef),
        rng.gen_range(0.17 * ef..0.32 * ef),
        rng.gen_range(0.17 * ef..0.32 * ef),
    ];
    let contrast_mean = if label == 1 { HGG_CONTRAST_MEAN } else { LGG_CONTRAST_MEAN };
    let noise: f64 = rng.sample(StandardNormal);
    let contrast = (contrast_mean + CONTRAST_STD * noise).max(0.0);
    let distorted = contrast.tanh();

    // Core-peaked radial profile of the ellipsoid, zero outside it.
    let voxels = e * e * e;
    let mut profile = vec![0.0f64; voxels];
    let mut lesion_mask = vec![false; voxels];
    let mut idx = 0;
    for d in 0..e {
        for h in 0..e {
            for w in 0..e {
                let coords = [d as f64 + 0.5, h as f64 + 0.5, w as f64 + 0.5];
                let mut r2 = 0.0;
                for axis in 0..3 {
                    let t = (coords[axis] - center[axis]) / axes[axis];
                    r2 += t * t;
                }
                if r2 <= 1.0 {
                    profile[idx] = 1.0 - r2;
                    lesion_mask[idx] = true;
                }
                idx += 1;
            }
        }
    }

    let mut ne = vec![0.0f64; 3 * voxels];
    for ch in 0..3 {
        let amplitude =
            spec.ne_signal_strength * (NE_SIGNAL_MIX[ch] * distorted + NE_SHAPE_MIX[ch]);
        for v in 0..voxels {
            let n: f64 = rng.sample(StandardNormal);
            ne[ch * voxels + v] = amplitude * profile[v] + spec.noise_sigma * n;
        }
    }
    let mut ce = vec![0.0f64; voxels];
    let ce_amplitude = spec.ce_signal_strength * contrast;
    for v in 0..voxels {
        let n: f64 = rng.sample(StandardNormal);
        ce[v] = ce_amplitude * profile[v] + spec.noise_sigma * n;
    }

    let sample = Sample {
        subject_id: format!("subj-{index:04}"),
        ne_volume: Tensor::from_vec(&[3, e, e, e], ne).expect("ne shape"),
        ce_volume: Tensor::from_vec(&[1, e, e, e], ce).expect("ce shape"),
        label,
    };
    GeneratedSample { sample, lesion_mask }
}

/// Generates the full dataset described by `spec`.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Vec<Sample>, SynthError> {
    validate(spec)?;
    Ok((0..spec.n_samples).map(|i| generate_one(spec, i).sample).collect())
}

/// Threshold-classifier AUC of mean lesion-region intensity, per channel set.
#[derive(Clone, Copy, Debug)]
pub struct ChannelOracle {
    /// AUC of the mean CE lesion intensity as a score.
    pub ce_auc: f64,
    /// AUC of the mean NE lesion intensity (all three channels pooled).
    pub ne_auc: f64,
}

/// Runs the pre-training oracle: a threshold classifier on mean
/// lesion-region intensity, once on the CE channel and once on the NE
/// channels. On a privileged dataset the CE score must be the better one;
/// callers gate on `ce_auc - ne_auc`.
pub fn channel_threshold_auc(spec: &DatasetSpec) -> Result<ChannelOracle, SynthError> {
    validate(spec)?;
    let mut ce_scores = Vec::with_capacity(spec.n_samples);
    let mut ne_scores = Vec::with_capacity(spec.n_samples);
    let mut labels = Vec::with_capacity(spec.n_samples);
    for i in 0..spec.n_samples {
        let generated = generate_one(spec, i);
        let voxels = generated.lesion_mask.len();
        let in_lesion: Vec<usize> =
            (0..voxels).filter(|&v| generated.lesion_mask[v]).collect();
        let count = in_lesion.len().max(1) as f64;

        let ce = generated.sample.ce_volume.data();
        let ce_mean: f64 = in_lesion.iter().map(|&v| ce[v]).sum::<f64>() / count;

        let ne = generated.sample.ne_volume.data();
        let ne_sum: f64 = (0..3)
            .map(|ch| in_lesion.iter().map(|&v| ne[ch * voxels + v]).sum::<f64>())
            .sum();
        let ne_mean = ne_sum / (3.0 * count);

        ce_scores.push(ce_mean);
        ne_scores.push(ne_mean);
        labels.push(generated.sample.label);
    }
    let ce_auc = metrics::roc_auc(&ScoredSet::new(ce_scores, labels.clone())?)?;
    let ne_auc = metrics::roc_auc(&ScoredSet::new(ne_scores, labels)?)?;
    Ok(ChannelOracle { ce_auc, ne_auc })
}

/// Index sets of a stratified train/test split.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified-by-label shuffle split. The total train size is
/// floor(n * train_fraction), built from per-stratum floors with the
/// remaining seats going to the strata with the largest fractional parts.
pub fn split(dataset: &[Sample], train_fraction: f64, seed: u64) -> Result<Split, SynthError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(SynthError::BadTrainFraction { value: train_fraction });
    }
    let strata: [Vec<usize>; 2] = {
        let mut s = [Vec::new(), Vec::new()];
        for (i, sample) in dataset.iter().enumerate() {
            s[sample.label as usize].push(i);
        }
        s
    };

    let target_train = (dataset.len() as f64 * train_fraction).floor() as usize;
    let mut train_sizes = [0usize; 2];
    let mut fractions = [0.0f64; 2];
    for label in 0..2 {
        let exact = strata[label].len() as f64 * train_fraction;
        train_sizes[label] = exact.floor() as usize;
        fractions[label] = exact - exact.floor();
    }
    // Remainder seats go to the train side, largest fractional part first
    // (ties broken by label order).
    let mut seats = target_train.saturating_sub(train_sizes[0] + train_sizes[1]);
    let order = if fractions[1] > fractions[0] { [1, 0] } else { [0, 1] };
    for label in order {
        if seats > 0 && train_sizes[label] < strata[label].len() {
            train_sizes[label] += 1;
            seats -= 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for label in 0..2 {
        let mut members = strata[label].clone();
        if members.is_empty() {
            continue;
        }
        if train_sizes[label] == 0 {
            return Err(SynthError::EmptyStratum { label: label as u8, side: "train" });
        }
        if train_sizes[label] == members.len() {
            return Err(SynthError::EmptyStratum { label: label as u8, side: "test" });
        }
        // Fisher-Yates with the shared stream; label order is fixed, so the
        // draw sequence is reproducible.
        for i in (1..members.len()).rev() {
            let j = rng.gen_range(0..=i);
            members.swap(i, j);
        }
        train.extend_from_slice(&members[..train_sizes[label]]);
        test.extend_from_slice(&members[train_sizes[label]..]);
    }
    Ok(Split { train, test })
}

/// Clones the selected samples out of a dataset.
pub fn select(dataset: &[Sample], indices: &[usize]) -> Vec<Sample> {
    indices.iter().map(|&i| dataset[i].clone()).collect()
}

fn stack(samples: &[&Sample], pick: impl Fn(&Sample) -> &Tensor) -> Tensor {
    assert!(!samples.is_empty(), "cannot stack an empty batch");
    let per = pick(samples[0]).shape().to_vec();
    let mut shape = vec![samples.len()];
    shape.extend_from_slice(&per);
    let mut data = Vec::with_capacity(samples.len() * pick(samples[0]).numel());
    for s in samples {
        let t = pick(s);
        assert_eq!(t.shape(), &per[..], "mixed extents in one batch");
        data.extend_from_slice(t.data());
    }
    Tensor::from_vec(&shape, data).expect("stacked batch shape")
}

/// Stacks the NE volumes of a batch into [N, 3, D, H, W].
pub fn batch_ne(samples: &[&Sample]) -> Tensor {
    stack(samples, |s| &s.ne_volume)
}

/// Stacks the CE volumes of a batch into [N, 1, D, H, W].
pub fn batch_ce(samples: &[&Sample]) -> Tensor {
    stack(samples, |s| &s.ce_volume)
}

/// Stacks the full-sequence view (NE channels then the CE channel) into
/// [N, 4, D, H, W].
pub fn batch_full_sequence(samples: &[&Sample]) -> Tensor {
    assert!(!samples.is_empty(), "cannot stack an empty batch");
    let ne_shape = samples[0].ne_volume.shape().to_vec();
    let spatial: usize = ne_shape[1..].iter().product();
    let mut shape = vec![samples.len(), 4];
    shape.extend_from_slice(&ne_shape[1..]);
    let mut data = Vec::with_capacity(samples.len() * 4 * spatial);
    for s in samples {
        data.extend_from_slice(s.ne_volume.data());
        data.extend_from_slice(s.ce_volume.data());
    }
    Tensor::from_vec(&shape, data).expect("stacked batch shape")
}

/// One-hot label rows for a batch: [N, 2].
pub fn batch_one_hot(samples: &[&Sample]) -> Tensor {
    let mut data = vec![0.0; samples.len() * 2];
    for (i, s) in samples.iter().enumerate() {
        data[i * 2 + s.label as usize] = 1.0;
    }
    Tensor::from_vec(&[samples.len(), 2], data).expect("one-hot shape")
}

/// Writes the versioned binary dataset container.
pub fn write_dataset(
    path: &Path,
    spec: &DatasetSpec,
    samples: &[Sample],
) -> Result<(), SynthError> {
    let file = File::create(path).map_err(ContainerError::Io)?;
    let mut w = BufWriter::new(file);
    container::write_magic(&mut w, &DATASET_MAGIC).map_err(ContainerError::Io)?;
    container::write_u32(&mut w, DATASET_VERSION).map_err(ContainerError::Io)?;
    let spec_text = toml::to_string(spec).expect("spec serializes");
    container::write_text(&mut w, &spec_text).map_err(ContainerError::Io)?;
    container::write_u64(&mut w, samples.len() as u64).map_err(ContainerError::Io)?;
    for s in samples {
        let (_, d, h, wd) = dims4(&s.ne_volume);
        container::write_u16(&mut w, s.subject_id.len() as u16).map_err(ContainerError::Io)?;
        w.write_all(s.subject_id.as_bytes()).map_err(ContainerError::Io)?;
        w.write_all(&[s.label]).map_err(ContainerError::Io)?;
        container::write_u32(&mut w, d as u32).map_err(ContainerError::Io)?;
        container::write_u32(&mut w, h as u32).map_err(ContainerError::Io)?;
        container::write_u32(&mut w, wd as u32).map_err(ContainerError::Io)?;
        container::write_f64_slice(&mut w, s.ne_volume.data()).map_err(ContainerError::Io)?;
        container::write_f64_slice(&mut w, s.ce_volume.data()).map_err(ContainerError::Io)?;
    }
    w.flush().map_err(ContainerError::Io)?;
    Ok(())
}

fn dims4(t: &Tensor) -> (usize, usize, usize, usize) {
    let s = t.shape();
    (s[0], s[1], s[2], s[3])
}

/// Reads a dataset container written by [`write_dataset`].
pub fn read_dataset(path: &Path) -> Result<(DatasetSpec, Vec<Sample>), SynthError> {
    let file = File::open(path).map_err(ContainerError::Io)?;
    let mut r = BufReader::new(file);
    container::expect_magic(&mut r, &DATASET_MAGIC)?;
    container::expect_version(&mut r, DATASET_VERSION)?;
    let spec_text = container::read_text(&mut r, 1 << 20)?;
    let spec: DatasetSpec = toml::from_str(&spec_text)
        .map_err(|e| ContainerError::Corrupt(format!("spec echo does not parse: {e}")))?;
    let count = container::read_u64(&mut r)?;
    let mut samples = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let id_len = container::read_u16(&mut r)? as u32;
        let mut id_bytes = vec![0u8; id_len as usize];
        std::io::Read::read_exact(&mut r, &mut id_bytes)
            .map_err(|_| ContainerError::Corrupt("unexpected end of file".into()))?;
        let subject_id = String::from_utf8(id_bytes)
            .map_err(|_| ContainerError::Corrupt("subject id is not UTF-8".into()))?;
        let mut label = [0u8; 1];
        std::io::Read::read_exact(&mut r, &mut label)
            .map_err(|_| ContainerError::Corrupt("unexpected end of file".into()))?;
        if label[0] > 1 {
            return Err(ContainerError::Corrupt(format!(
                "label must be 0 or 1, found {}",
                label[0]
            ))
            .into());
        }
        let d = container::read_u32(&mut r)? as usize;
        let h = container::read_u32(&mut r)? as usize;
        let w = container::read_u32(&mut r)? as usize;
        let voxels = d
            .checked_mul(h)
            .and_then(|x| x.checked_mul(w))
            .filter(|&v| v > 0 && v <= (1 << 30))
            .ok_or_else(|| ContainerError::Corrupt("implausible sample extents".into()))?;
        let ne = container::read_f64_vec(&mut r, 3 * voxels)?;
        let ce = container::read_f64_vec(&mut r, voxels)?;
        samples.push(Sample {
            subject_id,
            ne_volume: Tensor::from_vec(&[3, d, h, w], ne)
                .map_err(|e| ContainerError::Corrupt(e.to_string()))?,
            ce_volume: Tensor::from_vec(&[1, d, h, w], ce)
                .map_err(|e| ContainerError::Corrupt(e.to_string()))?,
            label: label[0],
        });
    }
    container::expect_eof(&mut r)?;
    Ok((spec, samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_sample(label: u8) -> Sample {
        Sample {
            subject_id: format!("t-{label}"),
            ne_volume: Tensor::zeros(&[3, 1, 1, 1]),
            ce_volume: Tensor::zeros(&[1, 1, 1, 1]),
            label,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = DatasetSpec { n_samples: 4, ..DatasetSpec::default() };
        let a = generate_dataset(&spec).unwrap();
        let b = generate_dataset(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn label_mean_within_binomial_bounds() {
        let spec =
            DatasetSpec { n_samples: 200, class_balance: 0.7, ..DatasetSpec::default() };
        let data = generate_dataset(&spec).unwrap();
        let mean =
            data.iter().map(|s| s.label as f64).sum::<f64>() / data.len() as f64;
        // 99% binomial bound: 2.576 * sqrt(0.7*0.3/200) = 0.0835.
        assert!((mean - 0.7).abs() <= 0.0835, "label mean {mean}");
    }

    #[test]
    fn privileged_flag_is_enforced() {
        let spec = DatasetSpec {
            ce_signal_strength: 0.5,
            ne_signal_strength: 0.5,
            ..DatasetSpec::default()
        };
        match generate_dataset(&spec) {
            Err(SynthError::NotPrivileged { .. }) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn rejects_degenerate_specs() {
        let spec = DatasetSpec { n_samples: 0, ..DatasetSpec::default() };
        assert!(matches!(generate_dataset(&spec), Err(SynthError::EmptyDataset)));
        let spec = DatasetSpec { volume_extent: 2, ..DatasetSpec::default() };
        assert!(matches!(generate_dataset(&spec), Err(SynthError::ExtentTooSmall { .. })));
    }

    #[test]
    fn ce_channel_beats_ne_channels_for_the_threshold_oracle() {
        let spec = DatasetSpec::default();
        let oracle = channel_threshold_auc(&spec).unwrap();
        assert!(
            oracle.ce_auc >= oracle.ne_auc + 0.05,
            "ce_auc={} ne_auc={}",
            oracle.ce_auc,
            oracle.ne_auc
        );
        // The same holds at ne = 0.5, the upper end of useful NE strengths.
        let spec = DatasetSpec { ne_signal_strength: 0.5, ..DatasetSpec::default() };
        let oracle = channel_threshold_auc(&spec).unwrap();
        assert!(oracle.ce_auc > oracle.ne_auc);
    }

    #[test]
    fn oracle_auc_nondecreasing_in_ce_strength() {
        let mut prev = 0.0;
        for ce in [1.0, 2.0, 3.0] {
            let spec = DatasetSpec {
                ce_signal_strength: ce,
                n_samples: 200,
                ..DatasetSpec::default()
            };
            let oracle = channel_threshold_auc(&spec).unwrap();
            assert!(
                oracle.ce_auc + 1e-9 >= prev,
                "ce={ce}: auc {} dropped below {prev}",
                oracle.ce_auc
            );
            prev = oracle.ce_auc;
        }
    }

    #[test]
    fn split_four_to_one_under_the_floor_rule() {
        // 185 positives + 184 negatives = 369 samples.
        let mut data: Vec<Sample> = Vec::new();
        for i in 0..369 {
            data.push(tiny_sample(u8::from(i < 185)));
        }
        let s = split(&data, 0.8, 0).unwrap();
        assert_eq!(s.train.len(), 295);
        assert_eq!(s.test.len(), 74);
    }

    #[test]
    fn split_is_disjoint_and_covering() {
        let data: Vec<Sample> = (0..37).map(|i| tiny_sample((i % 2) as u8)).collect();
        let s = split(&data, 0.8, 3).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(s.test.iter()).copied().collect();
        all.sort_unstable();
        let expect: Vec<usize> = (0..37).collect();
        assert_eq!(all, expect);
    }

    #[test]
    fn split_preserves_balance_within_one_sample() {
        let data: Vec<Sample> = (0..100).map(|i| tiny_sample(u8::from(i < 63))).collect();
        let s = split(&data, 0.8, 9).unwrap();
        let train_pos = s.train.iter().filter(|&&i| data[i].label == 1).count();
        // Exact stratum share is 63 * 0.8 = 50.4; floor gives 50, the seat
        // rule may add one.
        assert!((50..=51).contains(&train_pos), "train_pos={train_pos}");
    }

    #[test]
    fn split_seed_controls_the_permutation() {
        let data: Vec<Sample> = (0..40).map(|i| tiny_sample((i % 2) as u8)).collect();
        let a = split(&data, 0.8, 1).unwrap();
        let b = split(&data, 0.8, 1).unwrap();
        let c = split(&data, 0.8, 2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train.len(), c.train.len());
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn split_rejects_empty_stratum_side() {
        let data: Vec<Sample> =
            vec![tiny_sample(0), tiny_sample(0), tiny_sample(0), tiny_sample(1)];
        match split(&data, 0.8, 0) {
            Err(SynthError::EmptyStratum { label: 1, .. }) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn dataset_roundtrip_and_corruption_detection() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.dat");
        let spec = DatasetSpec {
            n_samples: 3,
            volume_extent: 4,
            ..DatasetSpec::default()
        };
        let data = generate_dataset(&spec).unwrap();
        write_dataset(&path, &spec, &data).unwrap();
        let (spec2, data2) = read_dataset(&path).unwrap();
        assert_eq!(spec, spec2);
        assert_eq!(data, data2);

        // Truncation is detected, never a partial dataset.
        let bytes = std::fs::read(&path).unwrap();
        let cut = path.with_extension("cut");
        std::fs::write(&cut, &bytes[..bytes.len() - 9]).unwrap();
        match read_dataset(&cut) {
            Err(SynthError::Container(ContainerError::Corrupt(_))) => {}
            other => panic!("unexpected: {other:?}"),
        }

        // Reading something with another magic string names the mismatch.
        let alien = path.with_extension("alien");
        std::fs::write(&alien, b"PNETCKP\x01rest-of-the-file").unwrap();
        match read_dataset(&alien) {
            Err(SynthError::Container(ContainerError::MagicMismatch { .. })) => {}
            other => panic!("unexpected: {other:?}"),
        }

        // A header that claims more samples than the body holds.
        let mut forged = bytes.clone();
        // n_samples is the u64 right after magic(8) + version(4) + text block.
        let text_len =
            u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let off = 16 + text_len;
        forged[off..off + 8].copy_from_slice(&4u64.to_le_bytes());
        let bad_count = path.with_extension("badcount");
        std::fs::write(&bad_count, &forged).unwrap();
        match read_dataset(&bad_count) {
            Err(SynthError::Container(ContainerError::Corrupt(_))) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn written_files_are_byte_identical_across_runs() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DatasetSpec {
            n_samples: 2,
            volume_extent: 4,
            ..DatasetSpec::default()
        };
        let p1 = dir.path().join("a.dat");
        let p2 = dir.path().join("b.dat");
        write_dataset(&p1, &spec, &generate_dataset(&spec).unwrap()).unwrap();
        write_dataset(&p2, &spec, &generate_dataset(&spec).unwrap()).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }
}
