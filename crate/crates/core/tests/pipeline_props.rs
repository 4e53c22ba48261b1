mod common;

use common::{Mixer, PreviousSlice};
use pbr_core::pbr::{binarize, refine, sweep, Direction, HybridStack, SweepConfig, SweepMode, TieRule};
use pbr_core::volume::{Dims, ProbVolume, Spacing, Volume};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_case(seed: u64, m: usize) -> (Volume, ProbVolume) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = Dims::new(m, 5, 4);
    let v = Volume::new(dims, Spacing::default(), (0..dims.len()).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
    let p = ProbVolume::new(dims, Spacing::default(), (0..dims.len()).map(|_| rng.random_range(0.0..=1.0)).collect()).unwrap();
    (v, p)
}

fn probs(m: usize, values: &[f32]) -> ProbVolume {
    let dims = Dims::new(m, 1, 1);
    ProbVolume::new(dims, Spacing::default(), values.to_vec()).unwrap()
}

#[test]
fn channel_counts_follow_depth() {
    let (v, p) = random_case(1, 6);
    for (d, c) in [(1, 3), (2, 5), (3, 7)] {
        assert_eq!(HybridStack::build(&v, &p, d).unwrap().channels(), c);
    }
}

#[test]
fn single_slice_volume_duplicates_itself() {
    let v = Volume::new(Dims::new(1, 1, 1), Spacing::default(), vec![9.0]).unwrap();
    let p = probs(1, &[0.25]);
    for d in 1..=3 {
        let s = HybridStack::build(&v, &p, d).unwrap();
        let mut want = vec![0.25; 2 * d + 1];
        want[d] = 9.0;
        assert_eq!(s.sample(0), &want[..]);
    }
}

#[test]
fn two_slice_volume_clamps_at_both_ends() {
    let v = Volume::new(Dims::new(2, 1, 1), Spacing::default(), vec![10.0, 20.0]).unwrap();
    let p = probs(2, &[0.1, 0.9]);
    let s = HybridStack::build(&v, &p, 2).unwrap();
    assert_eq!(s.sample(0), &[0.1, 0.1, 10.0, 0.9, 0.9]);
    assert_eq!(s.sample(1), &[0.1, 0.1, 20.0, 0.9, 0.9]);
}

#[test]
fn threshold_ties_are_background() {
    let p = probs(3, &[0.5, 0.5000001, 0.4999999]);
    assert_eq!(binarize(&p, 0.5, TieRule::Strict).unwrap().data(), &[0, 1, 0]);
    assert_eq!(binarize(&p, 0.5, TieRule::Inclusive).unwrap().data(), &[1, 1, 0]);
}

#[test]
fn forward_sweep_output_depends_on_previous_update() {
    // Slice 2 never reads slice 0 directly at depth 1, so any difference at
    // slice 2 has to travel through the update of slice 1.
    let v = Volume::new(Dims::new(4, 1, 1), Spacing::default(), vec![0.0; 4]).unwrap();
    let run = |first: f32| {
        let mut s = HybridStack::build(&v, &probs(4, &[first, 0.0, 0.0, 0.0]), 1).unwrap();
        let before = s.sample(2).to_vec();
        sweep(&PreviousSlice { channels: 3 }, &mut s, Direction::Forward).unwrap();
        (before, s.prob_slice(2)[0])
    };
    let (before_a, after_a) = run(1.0);
    let (before_b, after_b) = run(0.0);
    assert_eq!(before_a, before_b);
    assert_eq!((after_a, after_b), (0.25, 0.0));
}

proptest! {
    #[test]
    fn hybrid_channels_read_clamped_neighbours(seed in any::<u64>(), m in 1usize..7, d in 1usize..=3) {
        let (v, p) = random_case(seed, m);
        let s = HybridStack::build(&v, &p, d).unwrap();
        prop_assert_eq!(s.channels(), 2 * d + 1);
        for t in 0..m {
            for k in 0..2 * d + 1 {
                let want = if k == d {
                    v.slice(t)
                } else {
                    let r = (t as isize + k as isize - d as isize).clamp(0, m as isize - 1) as usize;
                    p.slice(r)
                };
                prop_assert_eq!(s.channel(t, k), want);
            }
        }
    }

    #[test]
    fn refined_probabilities_stay_in_unit_interval(
        seed in any::<u64>(),
        m in 1usize..6,
        d in 1usize..=3,
        weights in proptest::collection::vec(-20.0f32..20.0, 7),
        forward_only in any::<bool>(),
    ) {
        let (v, p) = random_case(seed, m);
        let config = SweepConfig {
            depth: d,
            sweeps: if forward_only { SweepMode::ForwardOnly } else { SweepMode::Bidirectional },
            ..SweepConfig::default()
        };
        let mixer = Mixer { channels: 2 * d + 1, weights: weights[..2 * d + 1].to_vec() };
        let out = refine(&mixer, &v, p, &config).unwrap();
        prop_assert!(out.prob.data().iter().all(|x| (0.0..=1.0).contains(x)));
        prop_assert_eq!(out.visits.len(), if forward_only { 1 } else { 2 });
        prop_assert_eq!(&out.mask, &binarize(&out.prob, 0.5, TieRule::Strict).unwrap());
    }

    #[test]
    fn binarization_shrinks_as_threshold_rises(seed in any::<u64>(), a in 0.01f64..0.99, b in 0.01f64..0.99) {
        let (_, p) = random_case(seed, 3);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let m_lo = binarize(&p, lo, TieRule::Strict).unwrap();
        let m_hi = binarize(&p, hi, TieRule::Strict).unwrap();
        prop_assert!(m_hi.data().iter().zip(m_lo.data()).all(|(h, l)| h <= l));
    }
}
