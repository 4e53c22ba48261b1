//! Dice-loss training loop shared by the view networks and the primary network.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{orient_mask, View, ViewStack};
use crate::nn::{dice_loss, Optimizer, OptimizerKind};
use crate::seed;
use crate::tensor::{Shape4, Tensor4};
use crate::unet::{UNet, UNetConfig};
use crate::volume::{warp_bilinear, warp_nearest, AugmentParams, AugmentRanges, MaskVolume, Volume, Warp};

/// One training example: a multi-channel plane and its binary target.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    /// `channels x h x w`, channel-major.
    pub input: Vec<f32>,
    /// `h x w` labels in {0, 1}.
    pub target: Vec<u8>,
}

impl Sample {
    pub fn new(channels: usize, h: usize, w: usize, input: Vec<f32>, target: Vec<u8>) -> Result<Self> {
        if input.len() != channels * h * w || target.len() != h * w {
            return Err(Error::Shape(format!(
                "sample {channels}x{h}x{w} got {} inputs and {} labels",
                input.len(),
                target.len()
            )));
        }
        if target.iter().any(|&t| t > 1) {
            return Err(Error::Data("sample target is not binary".into()));
        }
        Ok(Self {
            channels,
            h,
            w,
            input,
            target,
        })
    }

    fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.h, self.w)
    }

    /// Same random warp on every channel (bilinear) and the target (nearest).
    fn augmented(&self, seed: u64, ranges: &AugmentRanges) -> Self {
        let warp = Warp::new(&AugmentParams::sample(seed, ranges), self.h, self.w);
        let plane = self.h * self.w;
        let input = self
            .input
            .chunks_exact(plane)
            .flat_map(|ch| warp_bilinear(ch, &warp))
            .collect();
        Self {
            input,
            target: warp_nearest(&self.target, &warp),
            ..*self
        }
    }
}

/// Single-channel samples for every slice of `v` along `view`.
pub fn view_samples(v: &Volume, mask: &MaskVolume, view: View, divisor: usize) -> Result<Vec<Sample>> {
    crate::volume::same_dims(v.dims(), mask.dims())?;
    let stack = ViewStack::orient(v, view, divisor);
    let labels = orient_mask(mask, view, divisor);
    let s = stack.slices().shape();
    (0..s.n)
        .map(|i| {
            let target = labels.plane(i, 0).iter().map(|&x| x as u8).collect();
            Sample::new(1, s.h, s.w, stack.slices().plane(i, 0).to_vec(), target)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub phases: Vec<Phase>,
    pub batch_size: usize,
    /// Fraction of samples held out for validation (at least one when the
    /// dataset has two or more samples).
    pub val_fraction: f64,
    /// Epochs without validation improvement before the learning rate halves.
    pub plateau_patience: usize,
    pub augment: Option<AugmentRanges>,
}

impl Schedule {
    /// 300 SGD epochs at 1e-4 then 400 Adam epochs at 1e-5, batch size 1.
    pub fn full_initial() -> Self {
        Self::with_phases(vec![
            Phase {
                optimizer: OptimizerKind::Sgd,
                epochs: 300,
                lr: 1e-4,
            },
            Phase {
                optimizer: OptimizerKind::Adam,
                epochs: 400,
                lr: 1e-5,
            },
        ])
    }

    /// 300 Adam epochs at 1e-5, batch size 1.
    pub fn full_primary() -> Self {
        Self::with_phases(vec![Phase {
            optimizer: OptimizerKind::Adam,
            epochs: 300,
            lr: 1e-5,
        }])
    }

    pub fn with_phases(phases: Vec<Phase>) -> Self {
        Self {
            phases,
            batch_size: 1,
            val_fraction: 0.01,
            plateau_patience: 20,
            augment: Some(AugmentRanges::default()),
        }
    }

    pub fn total_epochs(&self) -> usize {
        self.phases.iter().map(|p| p.epochs).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.phases.is_empty() {
            return Err(Error::Config("schedule has no phases".into()));
        }
        if let Some(p) = self.phases.iter().find(|p| !(p.lr.is_finite() && p.lr > 0.0)) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", p.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!("validation fraction {} outside [0, 1)", self.val_fraction)));
        }
        if self.plateau_patience == 0 {
            return Err(Error::Config("plateau patience must be >= 1".into()));
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub phase: OptimizerKind,
    pub lr: f64,
    pub train_loss: f64,
    /// Mean soft Dice on the validation split; absent without one.
    pub val_dice: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub log: Vec<EpochLog>,
    pub validation: Vec<usize>,
}

impl TrainReport {
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "epoch,phase,lr,train_loss,val_dice")?;
        for e in &self.log {
            let val = e.val_dice.map(|v| format!("{v:.6}")).unwrap_or_default();
            writeln!(out, "{},{},{:e},{:.6},{val}", e.epoch, e.phase, e.lr, e.train_loss)?;
        }
        Ok(())
    }
}

/// Split indices into (train, validation) with a seeded shuffle.
pub fn validation_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let k = if n < 2 {
        0
    } else {
        ((n as f64 * fraction).floor() as usize).clamp(1, n - 1)
    };
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut val = idx.split_off(n - k);
    idx.sort_unstable();
    val.sort_unstable();
    (idx, val)
}

fn batch_tensors(samples: &[&Sample]) -> Result<(Tensor4<f32>, Tensor4<f32>)> {
    let (c, h, w) = samples[0].shape();
    let n = samples.len();
    let mut x = Vec::with_capacity(n * c * h * w);
    let mut y = Vec::with_capacity(n * h * w);
    for s in samples {
        x.extend_from_slice(&s.input);
        y.extend(s.target.iter().map(|&t| f32::from(t)));
    }
    Ok((
        Tensor4::from_vec(Shape4::new(n, c, h, w), x)?,
        Tensor4::from_vec(Shape4::new(n, 1, h, w), y)?,
    ))
}

/// Mean soft Dice (1 - loss) of `net` over `samples`, one sample at a time.
pub fn soft_dice(net: &UNet<f32>, samples: &[&Sample]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let (x, y) = batch_tensors(&[s])?;
        total += 1.0 - dice_loss(&net.forward(&x)?, &y)? as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Train `net` in place on `samples`. `observer` sees every epoch as it ends.
pub fn train(
    net: &mut UNet<f32>,
    samples: &[Sample],
    schedule: &Schedule,
    seed: u64,
    observer: &mut dyn FnMut(&EpochLog),
) -> Result<TrainReport> {
    schedule.validate()?;
    let first = samples
        .first()
        .ok_or_else(|| Error::Data("training set is empty".into()))?;
    if let Some(s) = samples.iter().find(|s| s.shape() != first.shape()) {
        return Err(Error::Shape(format!(
            "training samples differ in shape: {:?} vs {:?}",
            first.shape(),
            s.shape()
        )));
    }
    let (c, h, w) = first.shape();
    net.config().check_input(Shape4::new(1, c, h, w))?;

    let (train_idx, val_idx) = validation_split(samples.len(), schedule.val_fraction, seed::derive(seed, &[0]));
    let val: Vec<&Sample> = val_idx.iter().map(|&i| &samples[i]).collect();
    let mut report = TrainReport {
        log: Vec::with_capacity(schedule.total_epochs()),
        validation: val_idx.clone(),
    };
    let mut best = f64::NEG_INFINITY;
    let mut epoch = 0;
    for phase in &schedule.phases {
        let mut opt = Optimizer::new(phase.optimizer);
        let mut lr = phase.lr;
        let mut stale = 0;
        for _ in 0..phase.epochs {
            let mut order = train_idx.clone();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed::derive(seed, &[1, epoch as u64])));
            let mut loss_sum = 0.0;
            let mut batches = 0;
            for chunk in order.chunks(schedule.batch_size) {
                let owned: Vec<Sample>;
                let batch: Vec<&Sample> = match &schedule.augment {
                    Some(ranges) => {
                        owned = chunk
                            .iter()
                            .map(|&i| samples[i].augmented(seed::derive(seed, &[2, epoch as u64, i as u64]), ranges))
                            .collect();
                        owned.iter().collect()
                    }
                    None => chunk.iter().map(|&i| &samples[i]).collect(),
                };
                let (x, y) = batch_tensors(&batch)?;
                let (loss, _, grads) = net.dice_loss_and_grad(&x, &y)?;
                if !loss.is_finite() {
                    return Err(Error::Numerical(format!("non-finite training loss at epoch {epoch}")));
                }
                opt.step(net.params_mut(), &grads.params, lr)?;
                loss_sum += loss as f64;
                batches += 1;
            }
            let val_dice = if val.is_empty() { None } else { Some(soft_dice(net, &val)?) };
            let entry = EpochLog {
                epoch,
                phase: phase.optimizer,
                lr,
                train_loss: loss_sum / batches as f64,
                val_dice,
            };
            let score = val_dice.unwrap_or(1.0 - entry.train_loss);
            if score > best {
                best = score;
                stale = 0;
            } else {
                stale += 1;
                if stale >= schedule.plateau_patience {
                    lr *= 0.5;
                    stale = 0;
                    log::info!("epoch {epoch}: validation plateau, learning rate halved to {lr:e}");
                }
            }
            observer(&entry);
            report.log.push(entry);
            epoch += 1;
        }
    }
    Ok(report)
}

/// Train a fresh single-channel network for one view.
pub fn train_initial(
    dataset: &[(Volume, MaskVolume)],
    view: View,
    base_width: usize,
    schedule: &Schedule,
    seed: u64,
    observer: &mut dyn FnMut(&EpochLog),
) -> Result<(UNet<f32>, TrainReport)> {
    if dataset.is_empty() {
        return Err(Error::Data("initial-estimation training set is empty".into()));
    }
    let config = UNetConfig::new(1, base_width);
    let mut samples = Vec::new();
    for (v, m) in dataset {
        samples.extend(view_samples(v, m, view, config.size_divisor())?);
    }
    let view_seed = seed::derive_labeled(seed, view.name());
    let mut net = UNet::new(config, seed::derive(view_seed, &[0]))?;
    let report = train(&mut net, &samples, schedule, seed::derive(view_seed, &[1]), observer)?;
    Ok((net, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Dims, Spacing};

    fn blob_sample(seed: u64) -> Sample {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (16, 16);
        let (cy, cx) = (rng.random_range(5.0..11.0), rng.random_range(5.0..11.0));
        let mut input = Vec::new();
        let mut target = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let fg = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2) < 12.0;
                target.push(u8::from(fg));
                input.push(if fg { 1.0 } else { -0.5 } + rng.random_range(-0.3..0.3));
            }
        }
        Sample::new(1, h, w, input, target).unwrap()
    }

    fn adam(epochs: usize, lr: f64) -> Schedule {
        let mut s = Schedule::with_phases(vec![Phase {
            optimizer: OptimizerKind::Adam,
            epochs,
            lr,
        }]);
        s.augment = None;
        s
    }

    #[test]
    fn split_keeps_one_percent_with_floor_of_one() {
        let (t, v) = validation_split(512, 0.01, 3);
        assert_eq!((t.len(), v.len()), (507, 5));
        let (t, v) = validation_split(10, 0.01, 3);
        assert_eq!((t.len(), v.len()), (9, 1));
        let (t, v) = validation_split(1, 0.01, 3);
        assert_eq!((t.len(), v.len()), (1, 0));
        assert_eq!(validation_split(50, 0.1, 9), validation_split(50, 0.1, 9));
    }

    #[test]
    fn single_sample_overfits() {
        use crate::volume::{gen_phantom, preprocess, HuWindow, PhantomSpec};
        let (v, m) = gen_phantom(&PhantomSpec::new(1, Dims::new(32, 64, 64))).unwrap();
        let v = preprocess(&v, HuWindow::default()).unwrap().volume;
        let s = view_samples(&v, &m, View::Axial, 16).unwrap().swap_remove(16);
        let mut net = UNet::new(UNetConfig::new(1, 8), 5).unwrap();
        let report = train(&mut net, std::slice::from_ref(&s), &adam(50, 1e-3), 7, &mut |_| {}).unwrap();
        assert!(report.validation.is_empty());
        let (x, y) = batch_tensors(&[&s]).unwrap();
        let p = net.forward(&x).unwrap();
        let (mut inter, mut a, mut b) = (0.0, 0.0, 0.0);
        for (pv, tv) in p.data().iter().zip(y.data()) {
            let hard = if *pv > 0.5 { 1.0 } else { 0.0 };
            inter += hard * tv;
            a += hard;
            b += tv;
        }
        let dsc = 2.0 * inter / (a + b);
        assert!(dsc >= 0.95, "train DSC {dsc}");
    }

    #[test]
    fn loss_decreases_and_runs_repeat_exactly() {
        let samples: Vec<Sample> = (0..6).map(blob_sample).collect();
        let mut sched = adam(6, 0.005);
        sched.batch_size = 2;
        sched.augment = Some(AugmentRanges::default());
        let run = || {
            let mut net = UNet::new(UNetConfig::new(1, 2), 4).unwrap();
            let r = train(&mut net, &samples, &sched, 11, &mut |_| {}).unwrap();
            (net.save(), r)
        };
        let (a, ra) = run();
        let (b, rb) = run();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert_eq!(ra.validation.len(), 1);
        assert!(ra.log.last().unwrap().train_loss < ra.log[0].train_loss);
        let mut csv = Vec::new();
        ra.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("epoch,phase,lr,train_loss,val_dice\n0,adam,"));
        assert_eq!(text.lines().count(), 7);
    }

    #[test]
    fn plateau_halves_learning_rate() {
        let samples: Vec<Sample> = (0..3).map(blob_sample).collect();
        let mut sched = adam(6, 1e-12);
        sched.plateau_patience = 2;
        let mut net = UNet::new(UNetConfig::new(1, 1), 4).unwrap();
        let r = train(&mut net, &samples, &sched, 1, &mut |_| {}).unwrap();
        let lrs: Vec<f64> = r.log.iter().map(|e| e.lr).collect();
        assert!(lrs.last().unwrap() < &1e-12, "{lrs:?}");
    }

    #[test]
    fn bad_inputs_rejected() {
        let mut net = UNet::new(UNetConfig::new(1, 1), 4).unwrap();
        assert!(train(&mut net, &[], &adam(1, 0.1), 1, &mut |_| {}).is_err());
        let mut bad = adam(1, 0.1);
        bad.phases[0].lr = f64::NAN;
        assert!(train(&mut net, &[blob_sample(0)], &bad, 1, &mut |_| {}).is_err());
        let mut huge = adam(1, f64::MAX);
        huge.phases[0].optimizer = OptimizerKind::Sgd;
        let r = train(&mut net, &[blob_sample(0), blob_sample(1), blob_sample(2)], &huge, 1, &mut |_| {});
        assert!(matches!(r, Err(Error::Numerical(_))), "{r:?}");
    }

    #[test]
    fn view_samples_cover_each_slice() {
        let d = Dims::new(4, 16, 16);
        let v = Volume::new(d, Spacing::default(), vec![0.5; d.len()]).unwrap();
        let m = MaskVolume::empty(d, Spacing::default());
        let s = view_samples(&v, &m, View::Coronal, 16).unwrap();
        assert_eq!(s.len(), 16);
        assert_eq!((s[0].h, s[0].w), (16, 16));
    }
}
