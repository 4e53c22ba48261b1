//! Probability-map-guided hybrid samples, bi-directional recurrent
//! refinement and binarization.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::InitialEstimator;
use crate::seed;
use crate::tensor::{Shape4, Tensor4};
use crate::training::{train, EpochLog, Sample, Schedule, TrainReport};
use crate::unet::{UNet, UNetConfig};
use crate::volume::{same_dims, Dims, MaskVolume, ProbVolume, Spacing, Volume};

pub const MAX_DEPTH: usize = 3;

/// Per-slice multi-channel samples. Sample `t` holds, in channel order,
/// `p[t-d], ..., p[t-1], image[t], p[t+1], ..., p[t+d]` with slice indices
/// clamped to the volume (border slices are duplicated).
#[derive(Debug, Clone, PartialEq)]
pub struct HybridStack {
    depth: usize,
    dims: Dims,
    spacing: Spacing,
    /// `m x (2d+1) x h x w`.
    samples: Vec<f32>,
    /// Current probability map, slice-major.
    prob: Vec<f32>,
}

fn check_depth(d: usize) -> Result<()> {
    if !(1..=MAX_DEPTH).contains(&d) {
        return Err(Error::Config(format!("guidance depth must be in 1..={MAX_DEPTH}, got {d}")));
    }
    Ok(())
}

impl HybridStack {
    pub fn build(v: &Volume, p: &ProbVolume, depth: usize) -> Result<Self> {
        check_depth(depth)?;
        same_dims(v.dims(), p.dims())?;
        let dims = v.dims();
        let plane = dims.slice_len();
        let channels = 2 * depth + 1;
        let mut samples = Vec::with_capacity(dims.m * channels * plane);
        for t in 0..dims.m {
            for k in 0..channels {
                if k == depth {
                    samples.extend_from_slice(v.slice(t));
                } else {
                    samples.extend_from_slice(p.slice(Self::reference(t, k, depth, dims.m)));
                }
            }
        }
        Ok(Self {
            depth,
            dims,
            spacing: v.spacing(),
            samples,
            prob: p.data().to_vec(),
        })
    }

    /// Slice index read by channel `k` of sample `t`.
    fn reference(t: usize, k: usize, depth: usize, m: usize) -> usize {
        (t + k).saturating_sub(depth).min(m - 1)
    }

    /// Slice indices read by every channel of sample `t` (the centre entry is
    /// the image slice itself).
    pub fn references(&self, t: usize) -> Vec<usize> {
        (0..self.channels())
            .map(|k| Self::reference(t, k, self.depth, self.dims.m))
            .collect()
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn channels(&self) -> usize {
        2 * self.depth + 1
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.m
    }

    pub fn is_empty(&self) -> bool {
        self.dims.m == 0
    }

    /// All channels of sample `t`, channel-major.
    pub fn sample(&self, t: usize) -> &[f32] {
        let n = self.channels() * self.dims.slice_len();
        &self.samples[t * n..(t + 1) * n]
    }

    pub fn channel(&self, t: usize, k: usize) -> &[f32] {
        let plane = self.dims.slice_len();
        &self.sample(t)[k * plane..(k + 1) * plane]
    }

    pub fn prob_slice(&self, t: usize) -> &[f32] {
        let plane = self.dims.slice_len();
        &self.prob[t * plane..(t + 1) * plane]
    }

    pub fn prob_volume(&self) -> ProbVolume {
        ProbVolume::new(self.dims, self.spacing, self.prob.clone()).expect("stack probabilities stay in [0, 1]")
    }

    /// Store a new map for slice `t` and write it into every channel that
    /// references slice `t`.
    fn set_prob(&mut self, t: usize, values: &[f32]) {
        let plane = self.dims.slice_len();
        let channels = self.channels();
        self.prob[t * plane..(t + 1) * plane].copy_from_slice(values);
        let lo = t.saturating_sub(self.depth);
        let hi = (t + self.depth).min(self.dims.m - 1);
        for s in lo..=hi {
            for k in (0..channels).filter(|&k| k != self.depth) {
                if Self::reference(s, k, self.depth, self.dims.m) == t {
                    let at = (s * channels + k) * plane;
                    self.samples[at..at + plane].copy_from_slice(values);
                }
            }
        }
    }
}

/// Averaging update of a stored slice map with a fresh prediction.
pub fn update_map(old: &[f32], new: &[f32]) -> Vec<f32> {
    assert_eq!(old.len(), new.len(), "update_map operands differ in length");
    old.iter().zip(new).map(|(a, b)| (a + b) * 0.5).collect()
}

/// Anything that maps one hybrid sample to a probability plane.
pub trait SlicePredictor {
    fn channels(&self) -> usize;

    /// `sample` is `channels x h x w`; the result is `h x w` in `[0, 1]`.
    fn predict(&self, sample: &[f32], h: usize, w: usize) -> Result<Vec<f32>>;
}

impl SlicePredictor for UNet<f32> {
    fn channels(&self) -> usize {
        self.config().in_channels
    }

    fn predict(&self, sample: &[f32], h: usize, w: usize) -> Result<Vec<f32>> {
        let c = self.channels();
        let div = self.config().size_divisor();
        let padded = pad_planes(sample, c, h, w, div);
        let out = self.forward(&Tensor4::from_vec(Shape4::new(1, c, padded.h, padded.w), padded.data)?)?;
        Ok(crop_plane(out.data(), padded.h, padded.w, padded.top, padded.left, h, w))
    }
}

struct Padded {
    data: Vec<f32>,
    h: usize,
    w: usize,
    top: usize,
    left: usize,
}

/// Zero-pad each `h x w` plane symmetrically to multiples of `div`.
fn pad_planes(planes: &[f32], c: usize, h: usize, w: usize, div: usize) -> Padded {
    let (ph, pw) = (h.div_ceil(div) * div, w.div_ceil(div) * div);
    let (top, left) = ((ph - h) / 2, (pw - w) / 2);
    if (ph, pw) == (h, w) {
        return Padded {
            data: planes.to_vec(),
            h,
            w,
            top,
            left,
        };
    }
    let mut data = vec![0.0; c * ph * pw];
    for ch in 0..c {
        for y in 0..h {
            let src = (ch * h + y) * w;
            let dst = (ch * ph + y + top) * pw + left;
            data[dst..dst + w].copy_from_slice(&planes[src..src + w]);
        }
    }
    Padded { data, h: ph, w: pw, top, left }
}

fn crop_plane(plane: &[f32], ph: usize, pw: usize, top: usize, left: usize, h: usize, w: usize) -> Vec<f32> {
    debug_assert_eq!(plane.len(), ph * pw);
    (0..h)
        .flat_map(|y| plane[(y + top) * pw + left..(y + top) * pw + left + w].iter().copied())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

/// Visit every slice in `direction` order. At slice `t` the predictor sees
/// the current sample (including all updates made earlier in this sweep),
/// and its output is averaged into the stored map for `t`, which is then
/// propagated to every sample that references `t`. Returns the visit order.
pub fn sweep(predictor: &dyn SlicePredictor, stack: &mut HybridStack, direction: Direction) -> Result<Vec<usize>> {
    if predictor.channels() != stack.channels() {
        return Err(Error::Shape(format!(
            "primary network takes {} channels, hybrid samples have {}",
            predictor.channels(),
            stack.channels()
        )));
    }
    let m = stack.dims.m;
    let order: Vec<usize> = match direction {
        Direction::Forward => (0..m).collect(),
        Direction::Backward => (0..m).rev().collect(),
    };
    let (h, w) = (stack.dims.h, stack.dims.w);
    for &t in &order {
        let fresh = predictor.predict(stack.sample(t), h, w)?;
        if fresh.len() != h * w {
            return Err(Error::Shape(format!("predictor returned {} values for a {h}x{w} slice", fresh.len())));
        }
        if let Some(bad) = fresh.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Numerical(format!("predictor output {bad} at slice {t} outside [0, 1]")));
        }
        let merged = update_map(stack.prob_slice(t), &fresh);
        stack.set_prob(t, &merged);
    }
    Ok(order)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepMode {
    #[serde(rename = "forward+backward")]
    Bidirectional,
    #[serde(rename = "forward")]
    ForwardOnly,
}

impl std::fmt::Display for SweepMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepMode::Bidirectional => "forward+backward",
            SweepMode::ForwardOnly => "forward",
        })
    }
}

impl std::str::FromStr for SweepMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward+backward" | "both" | "bidirectional" => Ok(SweepMode::Bidirectional),
            "forward" => Ok(SweepMode::ForwardOnly),
            _ => Err(Error::Config(format!("unknown sweep mode `{s}` (expected forward+backward or forward)"))),
        }
    }
}

/// Which side of the threshold a probability exactly equal to it falls on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieRule {
    /// `p > θ` is foreground; ties are background.
    Strict,
    /// `p >= θ` is foreground.
    Inclusive,
}

impl std::fmt::Display for TieRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TieRule::Strict => "strict",
            TieRule::Inclusive => "inclusive",
        })
    }
}

impl std::str::FromStr for TieRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(TieRule::Strict),
            "inclusive" => Ok(TieRule::Inclusive),
            _ => Err(Error::Config(format!("unknown tie rule `{s}` (expected strict or inclusive)"))),
        }
    }
}

pub fn check_threshold(theta: f64) -> Result<()> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::Config(format!("threshold must lie in (0, 1), got {theta}")));
    }
    Ok(())
}

pub fn binarize(p: &ProbVolume, theta: f64, rule: TieRule) -> Result<MaskVolume> {
    check_threshold(theta)?;
    let data = p
        .data()
        .iter()
        .map(|&v| {
            let v = v as f64;
            u8::from(match rule {
                TieRule::Strict => v > theta,
                TieRule::Inclusive => v >= theta,
            })
        })
        .collect();
    MaskVolume::new(p.dims(), p.spacing(), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub depth: usize,
    pub threshold: f64,
    pub sweeps: SweepMode,
    pub tie_rule: TieRule,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            depth: 1,
            threshold: 0.5,
            sweeps: SweepMode::Bidirectional,
            tie_rule: TieRule::Strict,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        check_depth(self.depth)?;
        check_threshold(self.threshold)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct PbrOutput {
    pub mask: MaskVolume,
    pub prob: ProbVolume,
    pub initial: ProbVolume,
    pub timing: Vec<StageTiming>,
    /// Slice visit order of each sweep, in execution order.
    pub visits: Vec<(Direction, Vec<usize>)>,
}

/// Refine an initial map with the primary network and binarize.
pub fn refine(primary: &dyn SlicePredictor, v: &Volume, initial: ProbVolume, config: &SweepConfig) -> Result<PbrOutput> {
    config.validate()?;
    let mut timing = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, timing: &mut Vec<StageTiming>| {
        timing.push(StageTiming {
            stage: name.to_string(),
            seconds: clock.elapsed().as_secs_f64(),
        });
        clock = Instant::now();
    };
    let mut stack = HybridStack::build(v, &initial, config.depth)?;
    lap("hybrid", &mut timing);
    let mut visits = vec![(Direction::Forward, sweep(primary, &mut stack, Direction::Forward)?)];
    lap("forward_sweep", &mut timing);
    if config.sweeps == SweepMode::Bidirectional {
        visits.push((Direction::Backward, sweep(primary, &mut stack, Direction::Backward)?));
        lap("backward_sweep", &mut timing);
    }
    let prob = stack.prob_volume();
    let mask = binarize(&prob, config.threshold, config.tie_rule)?;
    lap("binarize", &mut timing);
    Ok(PbrOutput {
        mask,
        prob,
        initial,
        timing,
        visits,
    })
}

/// Full inference on a preprocessed volume: initial estimate, hybrid
/// samples, recurrent sweeps, binarization. Stage timings are wall-clock.
pub fn infer_pbr(estimator: &InitialEstimator, primary: &UNet<f32>, v: &Volume, config: &SweepConfig) -> Result<PbrOutput> {
    config.validate()?;
    if primary.config().in_channels != 2 * config.depth + 1 {
        return Err(Error::Config(format!(
            "primary network takes {} channels but depth {} needs {}",
            primary.config().in_channels,
            config.depth,
            2 * config.depth + 1
        )));
    }
    let start = Instant::now();
    let initial = estimator.estimate(v)?;
    let estimate = StageTiming {
        stage: "initial_estimation".into(),
        seconds: start.elapsed().as_secs_f64(),
    };
    let mut out = refine(primary, v, initial, config)?;
    out.timing.insert(0, estimate);
    Ok(out)
}

/// Where the neighbour channels of primary training samples come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GuidanceSource {
    /// Fused initial-estimation maps, as seen at inference.
    Estimated,
    /// Ground-truth masks.
    TeacherForced,
}

impl std::fmt::Display for GuidanceSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GuidanceSource::Estimated => "estimated",
            GuidanceSource::TeacherForced => "teacher-forced",
        })
    }
}

impl std::str::FromStr for GuidanceSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "estimated" => Ok(GuidanceSource::Estimated),
            "teacher-forced" => Ok(GuidanceSource::TeacherForced),
            _ => Err(Error::Config(format!("unknown guidance source `{s}` (expected estimated or teacher-forced)"))),
        }
    }
}

/// Hybrid training samples (padded to multiples of `divisor`) for one volume.
pub fn hybrid_samples(v: &Volume, guide: &ProbVolume, mask: &MaskVolume, depth: usize, divisor: usize) -> Result<Vec<Sample>> {
    same_dims(v.dims(), mask.dims())?;
    let stack = HybridStack::build(v, guide, depth)?;
    let d = v.dims();
    let c = stack.channels();
    (0..d.m)
        .map(|t| {
            let x = pad_planes(stack.sample(t), c, d.h, d.w, divisor);
            let labels: Vec<f32> = mask.slice(t).iter().map(|&b| f32::from(b)).collect();
            let y = pad_planes(&labels, 1, d.h, d.w, divisor);
            Sample::new(c, x.h, x.w, x.data, y.data.iter().map(|&b| b as u8).collect())
        })
        .collect()
}

/// Train the `(2d+1)`-channel primary network. Hybrid samples are built
/// once from the guidance maps; no recurrent updates happen in training.
#[allow(clippy::too_many_arguments)]
pub fn train_primary(
    dataset: &[(Volume, MaskVolume)],
    estimator: &InitialEstimator,
    depth: usize,
    base_width: usize,
    schedule: &Schedule,
    guidance: GuidanceSource,
    seed: u64,
    observer: &mut dyn FnMut(&EpochLog),
) -> Result<(UNet<f32>, TrainReport)> {
    check_depth(depth)?;
    if dataset.is_empty() {
        return Err(Error::Data("primary training set is empty".into()));
    }
    let config = UNetConfig::new(2 * depth + 1, base_width);
    let mut samples = Vec::new();
    for (v, m) in dataset {
        let guide = match guidance {
            GuidanceSource::Estimated => estimator.estimate(v)?,
            GuidanceSource::TeacherForced => {
                ProbVolume::new(m.dims(), m.spacing(), m.data().iter().map(|&b| f32::from(b)).collect())?
            }
        };
        samples.extend(hybrid_samples(v, &guide, m, depth, config.size_divisor())?);
    }
    let root = seed::derive_labeled(seed, "primary");
    let mut net = UNet::new(config, seed::derive(root, &[0]))?;
    let report = train(&mut net, &samples, schedule, seed::derive(root, &[1]), observer)?;
    Ok((net, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn volume(m: usize, h: usize, w: usize) -> (Volume, ProbVolume) {
        let d = Dims::new(m, h, w);
        let v = Volume::new(d, Spacing::default(), (0..d.len()).map(|i| i as f32 - 3.5).collect()).unwrap();
        let p = ProbVolume::new(d, Spacing::default(), (0..d.len()).map(|i| (i % 7) as f32 / 7.0).collect()).unwrap();
        (v, p)
    }

    struct Constant(f32, usize);

    impl SlicePredictor for Constant {
        fn channels(&self) -> usize {
            self.1
        }

        fn predict(&self, _: &[f32], h: usize, w: usize) -> Result<Vec<f32>> {
            Ok(vec![self.0; h * w])
        }
    }

    #[test]
    fn hybrid_layout_duplicates_borders() {
        let (v, p) = volume(3, 2, 2);
        let s = HybridStack::build(&v, &p, 1).unwrap();
        assert_eq!(s.channels(), 3);
        assert_eq!(s.references(0), vec![0, 0, 1]);
        assert_eq!(s.references(2), vec![1, 2, 2]);
        assert_eq!(s.channel(0, 0), p.slice(0));
        assert_eq!(s.channel(0, 1), v.slice(0));
        assert_eq!(s.channel(0, 2), p.slice(1));
        assert_eq!(s.channel(2, 0), p.slice(1));
        assert_eq!(s.channel(2, 2), p.slice(2));
        for d in 1..=3 {
            assert_eq!(HybridStack::build(&v, &p, d).unwrap().channels(), 2 * d + 1);
        }
        assert!(HybridStack::build(&v, &p, 0).is_err());
        assert!(HybridStack::build(&v, &p, 4).is_err());
    }

    #[test]
    fn deeper_channels_are_ordered_by_offset() {
        let (v, p) = volume(6, 1, 2);
        let s = HybridStack::build(&v, &p, 3).unwrap();
        assert_eq!(s.references(1), vec![0, 0, 0, 1, 2, 3, 4]);
        assert_eq!(s.references(5), vec![2, 3, 4, 5, 5, 5, 5]);
    }

    #[test]
    fn update_is_the_mean() {
        assert_eq!(update_map(&[0.4, 1.0, 0.0], &[0.8, 1.0, 1.0]), vec![0.6000000238418579, 1.0, 0.5]);
        assert_eq!(update_map(&[0.3], &[0.3]), vec![0.3]);
    }

    #[test]
    fn constant_predictor_recurrence_for_three_slices() {
        let (v, p) = volume(3, 2, 2);
        let mut s = HybridStack::build(&v, &p, 1).unwrap();
        let k = 0.9f32;
        let order = sweep(&Constant(k, 3), &mut s, Direction::Forward).unwrap();
        assert_eq!(order, vec![0, 1, 2]);
        for t in 0..3 {
            for (got, old) in s.prob_slice(t).iter().zip(p.slice(t)) {
                assert_eq!(*got, (old + k) / 2.0);
            }
        }
        // neighbour channels carry the updated maps
        assert_eq!(s.channel(1, 0), s.prob_slice(0));
        assert_eq!(s.channel(1, 2), s.prob_slice(2));
        assert_eq!(s.channel(0, 0), s.prob_slice(0));
        let back = sweep(&Constant(k, 3), &mut s, Direction::Backward).unwrap();
        assert_eq!(back, vec![2, 1, 0]);
    }

    #[test]
    fn single_slice_sweeps_agree() {
        let (v, p) = volume(1, 3, 3);
        let mut f = HybridStack::build(&v, &p, 2).unwrap();
        let mut b = f.clone();
        sweep(&Constant(0.2, 5), &mut f, Direction::Forward).unwrap();
        sweep(&Constant(0.2, 5), &mut b, Direction::Backward).unwrap();
        assert_eq!(f, b);
        assert!(f.references(0).iter().all(|&r| r == 0));
    }

    #[test]
    fn channel_mismatch_rejected() {
        let (v, p) = volume(2, 2, 2);
        let mut s = HybridStack::build(&v, &p, 1).unwrap();
        assert!(sweep(&Constant(0.5, 5), &mut s, Direction::Forward).is_err());
    }

    #[test]
    fn binarize_ties_follow_rule() {
        let d = Dims::new(1, 1, 4);
        let p = ProbVolume::new(d, Spacing::default(), vec![0.5, 0.51, 0.0, 1.0]).unwrap();
        assert_eq!(binarize(&p, 0.5, TieRule::Strict).unwrap().data(), &[0, 1, 0, 1]);
        assert_eq!(binarize(&p, 0.5, TieRule::Inclusive).unwrap().data(), &[1, 1, 0, 1]);
        let zero = ProbVolume::filled(d, Spacing::default(), 0.0).unwrap();
        assert_eq!(binarize(&zero, 0.5, TieRule::Strict).unwrap().count(), 0);
        assert!(binarize(&p, 1.0, TieRule::Strict).is_err());
        assert!(binarize(&p, 0.0, TieRule::Strict).is_err());
    }

    #[test]
    fn unet_predictor_pads_odd_planes() {
        let (v, p) = volume(2, 5, 7);
        let net = UNet::<f32>::new(UNetConfig::new(3, 1), 1).unwrap();
        let mut s = HybridStack::build(&v, &p, 1).unwrap();
        sweep(&net, &mut s, Direction::Forward).unwrap();
        assert!(s.prob_volume().data().iter().all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn refine_records_every_stage() {
        let (v, p) = volume(4, 2, 2);
        let out = refine(&Constant(1.0, 3), &v, p.clone(), &SweepConfig::default()).unwrap();
        let stages: Vec<&str> = out.timing.iter().map(|t| t.stage.as_str()).collect();
        assert_eq!(stages, ["hybrid", "forward_sweep", "backward_sweep", "binarize"]);
        assert_eq!(out.visits.len(), 2);
        let fwd = SweepConfig {
            sweeps: SweepMode::ForwardOnly,
            ..SweepConfig::default()
        };
        assert_eq!(refine(&Constant(1.0, 3), &v, p, &fwd).unwrap().visits.len(), 1);
    }

    #[test]
    fn hybrid_training_samples_have_2d_plus_1_channels() {
        let (v, p) = volume(3, 5, 6);
        let m = MaskVolume::empty(v.dims(), v.spacing());
        for d in 1..=3 {
            let s = hybrid_samples(&v, &p, &m, d, 16).unwrap();
            assert_eq!(s.len(), 3);
            assert_eq!((s[0].channels, s[0].h, s[0].w), (2 * d + 1, 16, 16));
        }
    }
}
