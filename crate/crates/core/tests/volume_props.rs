use pbr_core::estimation::{View, ViewStack};
use pbr_core::volume::{crop, preprocess, pvol, warp_bilinear, AugmentParams, Dims, HuWindow, MaskVolume, Spacing, Volume, Warp};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn volume(seed: u64, dims: Dims) -> Volume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..dims.len()).map(|_| rng.random_range(-400.0..400.0)).collect();
    Volume::new(dims, Spacing { z: 2.5, y: 0.7, x: 0.7 }, data).unwrap()
}

fn dims() -> impl Strategy<Value = Dims> {
    (1usize..6, 1usize..9, 1usize..9).prop_map(|(m, h, w)| Dims::new(m, h, w))
}

proptest! {
    #[test]
    fn pvol_round_trips(seed in any::<u64>(), d in dims()) {
        let v = volume(seed, d);
        prop_assert_eq!(&pvol::read_volume(&pvol::write_volume(&v)).unwrap(), &v);
        let mask = MaskVolume::new(d, v.spacing(), v.data().iter().map(|&x| u8::from(x > 0.0)).collect()).unwrap();
        prop_assert_eq!(&pvol::read_mask(&pvol::write_mask(&mask)).unwrap(), &mask);
    }

    #[test]
    fn truncated_pvol_is_rejected(seed in any::<u64>(), d in dims(), cut in 1usize..40) {
        let bytes = pvol::write_volume(&volume(seed, d));
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(pvol::read_volume(&bytes[..keep]).is_err());
    }

    #[test]
    fn preprocessing_standardizes(seed in any::<u64>(), d in dims()) {
        let v = volume(seed, d);
        let out = preprocess(&v, HuWindow::default()).unwrap();
        let x = out.volume.data();
        let n = x.len() as f64;
        let mean = x.iter().map(|&a| a as f64).sum::<f64>() / n;
        let var = x.iter().map(|&a| (a as f64 - mean).powi(2)).sum::<f64>() / n;
        prop_assert!(mean.abs() < 1e-4);
        if out.warning.is_none() {
            prop_assert!((var - 1.0).abs() < 1e-3, "variance {}", var);
        } else {
            prop_assert!(x.iter().all(|&a| a == 0.0));
        }
    }

    #[test]
    fn views_reassemble_the_volume(seed in any::<u64>(), d in dims(), divisor in prop::sample::select(vec![1usize, 4, 16])) {
        let v = volume(seed, d);
        for view in View::ALL {
            prop_assert_eq!(&ViewStack::orient(&v, view, divisor).unorient(), &v);
        }
    }

    #[test]
    fn crop_keeps_every_labelled_voxel(seed in any::<u64>(), th in 1usize..9, tw in 1usize..9) {
        let d = Dims::new(2, 8, 8);
        let v = volume(seed, d);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let (y, x) = (rng.random_range(0..8), rng.random_range(0..8));
        let mut labels = vec![0u8; d.len()];
        labels[d.index(1, y, x)] = 1;
        let mask = MaskVolume::new(d, v.spacing(), labels).unwrap();
        let (cv, cm) = crop(&v, &mask, th, tw).unwrap();
        prop_assert_eq!(cm.count(), 1);
        prop_assert_eq!(cv.dims(), Dims::new(2, th, tw));
    }
}

#[test]
fn identity_warp_is_a_no_op() {
    let v = volume(3, Dims::new(1, 7, 9));
    let warp = Warp::new(&AugmentParams::identity(), 7, 9);
    let out = warp_bilinear(v.slice(0), &warp);
    for (a, b) in out.iter().zip(v.slice(0)) {
        assert!((a - b).abs() < 1e-4);
    }
}
