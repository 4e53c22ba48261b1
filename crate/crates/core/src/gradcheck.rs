//! Central finite-difference gradient verification.
//!
//! Only evaluates the objective; never touches the analytic gradient code,
//! so it can serve as an independent reference for it.

/// Relative error `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Default denominator floor for [`relative_error`].
pub const REL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub label: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheck {
    /// Coordinates compared (excluding skipped ones).
    pub checked: usize,
    /// Probes whose `±δ` points fell in different piecewise-linear regions.
    pub skipped: usize,
    pub max_rel_error: f64,
    pub failures: Vec<Mismatch>,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checked > 0
    }

    pub fn merge(&mut self, other: GradCheck) {
        self.checked += other.checked;
        self.skipped += other.skipped;
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.failures.extend(other.failures);
    }
}

/// Compare `analytic[i]` with `(f(x + δ e_i) - f(x - δ e_i)) / 2δ` for each
/// `i` in `indices`. `x` is restored after every probe.
pub fn check_coordinates(
    label: &str,
    x: &mut [f64],
    analytic: &[f64],
    indices: impl IntoIterator<Item = usize>,
    delta: f64,
    tolerance: f64,
    mut f: impl FnMut(&[f64]) -> f64,
) -> GradCheck {
    check_piecewise(label, x, analytic, indices, delta, tolerance, |v| (f(v), ()))
}

/// Like [`check_coordinates`] for piecewise-smooth objectives: `f` also
/// returns a key naming the smooth piece it was evaluated in, and probes
/// whose two sides land in different pieces are counted as skipped rather
/// than compared.
pub fn check_piecewise<K: PartialEq>(
    label: &str,
    x: &mut [f64],
    analytic: &[f64],
    indices: impl IntoIterator<Item = usize>,
    delta: f64,
    tolerance: f64,
    mut f: impl FnMut(&[f64]) -> (f64, K),
) -> GradCheck {
    let mut report = GradCheck::default();
    for i in indices {
        let orig = x[i];
        x[i] = orig + delta;
        let (plus, key_plus) = f(x);
        x[i] = orig - delta;
        let (minus, key_minus) = f(x);
        x[i] = orig;
        if key_plus != key_minus {
            report.skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * delta);
        let rel = relative_error(analytic[i], numeric, REL_FLOOR);
        report.checked += 1;
        report.max_rel_error = report.max_rel_error.max(rel);
        if rel > tolerance || !rel.is_finite() {
            report.failures.push(Mismatch {
                label: label.to_owned(),
                index: i,
                analytic: analytic[i],
                numeric,
                rel_error: rel,
            });
        }
    }
    report
}


/// Finite-difference checks for every differentiable kernel and for the
/// Dice-loss objective through a small U-Net, all in `f64`.
pub mod suite {
    use rand::seq::index::sample;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::{check_coordinates, check_piecewise, GradCheck};
    use crate::nn::{
        concat_channels, conv2d, conv2d_backward, dice_loss, dice_loss_with_grad, maxpool2x2, maxpool2x2_backward,
        split_channels, transposed_conv2d, transposed_conv2d_backward, Activation,
    };
    use crate::tensor::{Shape4, Tensor4};
    use crate::unet::{UNet, UNetConfig};

    pub const DELTA: f64 = 1e-3;
    pub const TOLERANCE: f64 = 1e-3;

    fn random(shape: Shape4, rng: &mut ChaCha8Rng) -> Tensor4<f64> {
        Tensor4::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0))
    }

    fn with(shape: Shape4, data: &[f64]) -> Tensor4<f64> {
        Tensor4::from_vec(shape, data.to_vec()).expect("probe keeps shape")
    }

    fn all(t: &Tensor4<f64>) -> std::ops::Range<usize> {
        0..t.data().len()
    }

    /// Objective `sum(out * r)` for a fixed random projection `r`.
    fn project(out: &Tensor4<f64>, r: &Tensor4<f64>) -> f64 {
        out.dot(r).expect("projection shape")
    }

    pub fn conv(seed: u64, stride: usize, padding: usize, k: usize) -> GradCheck {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(Shape4::new(2, 3, 8, 8), &mut rng);
        let w = random(Shape4::new(4, 3, k, k), &mut rng);
        let b: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = conv2d(&x, &w, &b, stride, padding).unwrap();
        let r = random(y.shape(), &mut rng);
        let g = conv2d_backward(&x, &w, stride, padding, &r).unwrap();
        let label = format!("conv2d k{k} s{stride} p{padding}");
        let (xs, ws) = (x.shape(), w.shape());
        let mut report = check_coordinates(
            &format!("{label} input"),
            &mut x.data().to_vec(),
            g.input.data(),
            all(&x),
            DELTA,
            TOLERANCE,
            |v| project(&conv2d(&with(xs, v), &w, &b, stride, padding).unwrap(), &r),
        );
        report.merge(check_coordinates(
            &format!("{label} weight"),
            &mut w.data().to_vec(),
            g.weight.data(),
            all(&w),
            DELTA,
            TOLERANCE,
            |v| project(&conv2d(&x, &with(ws, v), &b, stride, padding).unwrap(), &r),
        ));
        report.merge(check_coordinates(
            &format!("{label} bias"),
            &mut b.clone(),
            &g.bias,
            0..b.len(),
            DELTA,
            TOLERANCE,
            |v| project(&conv2d(&x, &w, v, stride, padding).unwrap(), &r),
        ));
        report
    }

    pub fn transposed(seed: u64) -> GradCheck {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(Shape4::new(2, 3, 4, 4), &mut rng);
        let w = random(Shape4::new(3, 2, 2, 2), &mut rng);
        let b: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = transposed_conv2d(&x, &w, &b).unwrap();
        let r = random(y.shape(), &mut rng);
        let g = transposed_conv2d_backward(&x, &w, &r).unwrap();
        let (xs, ws) = (x.shape(), w.shape());
        let mut report = check_coordinates(
            "transposed_conv2d input",
            &mut x.data().to_vec(),
            g.input.data(),
            all(&x),
            DELTA,
            TOLERANCE,
            |v| project(&transposed_conv2d(&with(xs, v), &w, &b).unwrap(), &r),
        );
        report.merge(check_coordinates(
            "transposed_conv2d weight",
            &mut w.data().to_vec(),
            g.weight.data(),
            all(&w),
            DELTA,
            TOLERANCE,
            |v| project(&transposed_conv2d(&x, &with(ws, v), &b).unwrap(), &r),
        ));
        report.merge(check_coordinates(
            "transposed_conv2d bias",
            &mut b.clone(),
            &g.bias,
            0..b.len(),
            DELTA,
            TOLERANCE,
            |v| project(&transposed_conv2d(&x, &w, v).unwrap(), &r),
        ));
        report
    }

    pub fn maxpool(seed: u64) -> GradCheck {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // distinct values spaced well beyond the probe step
        let shape = Shape4::new(2, 2, 8, 8);
        let mut values: Vec<f64> = (0..shape.len()).map(|i| i as f64 * 0.01).collect();
        for i in (1..values.len()).rev() {
            values.swap(i, rng.random_range(0..=i));
        }
        let x = with(shape, &values);
        let p = maxpool2x2(&x).unwrap();
        let r = random(p.output.shape(), &mut rng);
        let g = maxpool2x2_backward(shape, &p.argmax, &r).unwrap();
        check_coordinates("maxpool2x2 input", &mut values, g.data(), all(&x), DELTA, TOLERANCE, |v| {
            project(&maxpool2x2(&with(shape, v)).unwrap().output, &r)
        })
    }

    pub fn activation(seed: u64, kind: Activation) -> GradCheck {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = Shape4::new(2, 2, 4, 4);
        // ReLU is probed away from its kink
        let x = Tensor4::from_fn(shape, |_, _, _, _| {
            let v: f64 = rng.random_range(0.05..2.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        });
        let y = kind.forward(&x);
        let r = random(shape, &mut rng);
        let g = kind.backward(&y, &r).unwrap();
        check_coordinates(
            &format!("{kind:?} input"),
            &mut x.data().to_vec(),
            g.data(),
            all(&x),
            DELTA,
            TOLERANCE,
            |v| project(&kind.forward(&with(shape, v)), &r),
        )
    }

    pub fn concat(seed: u64) -> GradCheck {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(Shape4::new(2, 2, 4, 4), &mut rng);
        let b = random(Shape4::new(2, 3, 4, 4), &mut rng);
        let r = random(Shape4::new(2, 5, 4, 4), &mut rng);
        let (ga, gb) = split_channels(&r, 2).unwrap();
        let (sa, sb) = (a.shape(), b.shape());
        let mut report = check_coordinates("concat a", &mut a.data().to_vec(), ga.data(), all(&a), DELTA, TOLERANCE, |v| {
            project(&concat_channels(&with(sa, v), &b).unwrap(), &r)
        });
        report.merge(check_coordinates("concat b", &mut b.data().to_vec(), gb.data(), all(&b), DELTA, TOLERANCE, |v| {
            project(&concat_channels(&a, &with(sb, v)).unwrap(), &r)
        }));
        report
    }

    pub fn dice(seed: u64) -> GradCheck {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = Shape4::new(1, 1, 8, 8);
        let p = Tensor4::from_fn(shape, |_, _, _, _| rng.random_range(0.05..0.95));
        let t = Tensor4::from_fn(shape, |_, _, _, _| if rng.random_bool(0.4) { 1.0 } else { 0.0 });
        let (_, g) = dice_loss_with_grad(&p, &t).unwrap();
        check_coordinates("dice_loss pred", &mut p.data().to_vec(), g.data(), all(&p), DELTA, TOLERANCE, |v| {
            dice_loss(&with(shape, v), &t).unwrap()
        })
    }

    /// Dice loss through a base-width-2 U-Net on a 16x16 input. Every
    /// parameter array is probed at up to `per_array` random coordinates,
    /// plus `per_array` input coordinates.
    pub fn unet(seed: u64, in_channels: usize, per_array: usize) -> GradCheck {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = UNet::<f64>::new(UNetConfig::new(in_channels, 2), seed).unwrap();
        // zero biases park dead units exactly on the ReLU kink
        for p in net.params_mut().iter_mut().filter(|p| p.name.ends_with(".bias")) {
            p.value.iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
        }
        let shape = Shape4::new(1, in_channels, 16, 16);
        let x = random(shape, &mut rng);
        let t = Tensor4::from_fn(Shape4::new(1, 1, 16, 16), |_, _, y, xx| {
            if (4..11).contains(&y) && (3..12).contains(&xx) {
                1.0
            } else {
                0.0
            }
        });
        let (_, _, grads) = net.dice_loss_and_grad(&x, &t).unwrap();
        let mut report = GradCheck::default();
        for (pi, param) in net.params().iter().enumerate() {
            let n = param.len().min(per_array);
            let picks = sample(&mut rng, param.len(), n).into_vec();
            let mut probe = net.clone();
            let mut values = param.value.clone();
            report.merge(check_piecewise(
                &format!("unet {}", param.name),
                &mut values,
                &grads.params[pi],
                picks,
                DELTA,
                TOLERANCE,
                |v| {
                    probe.params_mut()[pi].value.copy_from_slice(v);
                    let tape = probe.forward_train(&x).unwrap();
                    (dice_loss(tape.output(), &t).unwrap(), tape.region_key())
                },
            ));
        }
        let picks = sample(&mut rng, shape.len(), per_array.min(shape.len())).into_vec();
        report.merge(check_piecewise(
            "unet input",
            &mut x.data().to_vec(),
            grads.input.data(),
            picks,
            DELTA,
            TOLERANCE,
            |v| {
                let tape = net.forward_train(&with(shape, v)).unwrap();
                (dice_loss(tape.output(), &t).unwrap(), tape.region_key())
            },
        ));
        report
    }

    /// Every check in the suite, labelled.
    pub fn run_all(seed: u64) -> Vec<(&'static str, GradCheck)> {
        vec![
            ("conv2d 3x3 stride 1 pad 1", conv(seed, 1, 1, 3)),
            ("conv2d 3x3 stride 2 pad 1", conv(seed + 1, 2, 1, 3)),
            ("conv2d 1x1", conv(seed + 2, 1, 0, 1)),
            ("transposed_conv2d 2x2 stride 2", transposed(seed + 3)),
            ("maxpool2x2", maxpool(seed + 4)),
            ("relu", activation(seed + 5, Activation::Relu)),
            ("sigmoid", activation(seed + 6, Activation::Sigmoid)),
            ("concat_channels", concat(seed + 7)),
            ("dice_loss", dice(seed + 8)),
            ("unet F=2 16x16 c=3", unet(seed + 9, 3, 12)),
        ]
    }
}
