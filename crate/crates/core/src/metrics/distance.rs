use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{same_dims, MaskVolume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HausdorffMode {
    /// `max_{p in a} min_{q in b} |p - q|`
    Directed,
    /// Larger of the two directed distances.
    Symmetric,
}

/// Squared Euclidean distance (mm^2) from every voxel to the nearest
/// foreground voxel of `mask`, by separable lower envelopes of parabolas.
/// Returns `None` for an empty mask.
pub fn edt_squared(mask: &MaskVolume) -> Option<Vec<f64>> {
    if mask.count() == 0 {
        return None;
    }
    let d = mask.dims();
    let s = mask.spacing();
    let mut f: Vec<f64> = mask
        .data()
        .iter()
        .map(|&v| if v != 0 { 0.0 } else { f64::INFINITY })
        .collect();
    let mut line = Vec::new();
    let mut out = Vec::new();
    let mut pass = |f: &mut [f64], n: usize, stride: usize, starts: &mut dyn Iterator<Item = usize>, step: f64| {
        for start in starts {
            line.clear();
            line.extend((0..n).map(|i| f[start + i * stride]));
            envelope(&line, step, &mut out);
            for (i, v) in out.iter().enumerate() {
                f[start + i * stride] = *v;
            }
        }
    };
    // along x
    pass(&mut f, d.w, 1, &mut (0..d.m * d.h).map(|r| r * d.w), s.x as f64);
    // along y
    pass(&mut f, d.h, d.w, &mut (0..d.m).flat_map(|z| (0..d.w).map(move |x| z * d.h * d.w + x)), s.y as f64);
    // along z
    pass(&mut f, d.m, d.h * d.w, &mut (0..d.h * d.w), s.z as f64);
    Some(f)
}

/// One-dimensional transform `out[p] = min_q (step (p - q))^2 + f[q]`.
fn envelope(f: &[f64], step: f64, out: &mut Vec<f64>) {
    let n = f.len();
    out.clear();
    let mut v: Vec<usize> = Vec::with_capacity(n);
    let mut z: Vec<f64> = Vec::with_capacity(n + 1);
    let pos = |i: usize| i as f64 * step;
    for q in (0..n).filter(|&q| f[q].is_finite()) {
        let fq = f[q] + pos(q) * pos(q);
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.clear();
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&r) => {
                    let fr = f[r] + pos(r) * pos(r);
                    let cross = (fq - fr) / (2.0 * (pos(q) - pos(r)));
                    if cross <= *z.last().unwrap() {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(cross);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        out.resize(n, f64::INFINITY);
        return;
    }
    let mut k = 0;
    for p in 0..n {
        while k + 1 < v.len() && z[k + 1] < pos(p) {
            k += 1;
        }
        // Evaluate both neighbours of the breakpoint so rounding in the
        // crossing position cannot pick a worse parabola.
        let eval = |j: usize| {
            let dq = (p as f64 - v[j] as f64) * step;
            dq * dq + f[v[j]]
        };
        let mut best = eval(k);
        if k + 1 < v.len() {
            best = best.min(eval(k + 1));
        }
        out.push(best);
    }
}

fn directed(a: &MaskVolume, dist_to_b: &[f64]) -> f64 {
    a.data()
        .iter()
        .zip(dist_to_b)
        .filter(|(&x, _)| x != 0)
        .map(|(_, &d)| d)
        .fold(0.0, f64::max)
        .sqrt()
}

/// Hausdorff distance in mm over foreground voxel centres.
pub fn hausdorff(a: &MaskVolume, b: &MaskVolume, mode: HausdorffMode) -> Result<f64> {
    same_dims(a.dims(), b.dims())?;
    if a.count() == 0 || b.count() == 0 {
        return Err(Error::UndefinedDistance("Hausdorff distance needs two non-empty masks"));
    }
    let to_b = edt_squared(b).expect("b is non-empty");
    let ab = directed(a, &to_b);
    match mode {
        HausdorffMode::Directed => Ok(ab),
        HausdorffMode::Symmetric => {
            let to_a = edt_squared(a).expect("a is non-empty");
            Ok(ab.max(directed(b, &to_a)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Dims, Spacing};

    fn singleton(d: Dims, at: (usize, usize, usize)) -> MaskVolume {
        let mut v = vec![0; d.len()];
        v[d.index(at.0, at.1, at.2)] = 1;
        MaskVolume::new(d, Spacing::default(), v).unwrap()
    }

    #[test]
    fn three_four_five() {
        let d = Dims::new(1, 8, 8);
        let a = singleton(d, (0, 0, 0));
        let b = singleton(d, (0, 3, 4));
        assert_eq!(hausdorff(&a, &b, HausdorffMode::Directed).unwrap(), 5.0);
        assert_eq!(hausdorff(&a, &b, HausdorffMode::Symmetric).unwrap(), 5.0);
    }

    #[test]
    fn subset_has_zero_directed_distance() {
        let d = Dims::new(2, 3, 3);
        let a = singleton(d, (1, 1, 1));
        let mut bits = vec![0; d.len()];
        bits[d.index(1, 1, 1)] = 1;
        bits[d.index(0, 0, 0)] = 1;
        let b = MaskVolume::new(d, Spacing::new(2.5, 1.0, 0.5), bits).unwrap();
        let a = MaskVolume::new(d, b.spacing(), a.into_data()).unwrap();
        assert_eq!(hausdorff(&a, &b, HausdorffMode::Directed).unwrap(), 0.0);
        let back = hausdorff(&b, &a, HausdorffMode::Directed).unwrap();
        assert!((back - (2.5f64 * 2.5 + 1.0 + 0.25).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn empty_mask_is_undefined() {
        let d = Dims::new(1, 2, 2);
        let e = MaskVolume::empty(d, Spacing::default());
        let a = singleton(d, (0, 1, 1));
        assert!(matches!(hausdorff(&a, &e, HausdorffMode::Directed), Err(Error::UndefinedDistance(_))));
        assert!(matches!(hausdorff(&e, &a, HausdorffMode::Symmetric), Err(Error::UndefinedDistance(_))));
    }

    #[test]
    fn edt_matches_definition_on_a_line() {
        let d = Dims::new(1, 1, 6);
        let m = MaskVolume::new(d, Spacing::new(1.0, 1.0, 2.0), vec![0, 1, 0, 0, 0, 1]).unwrap();
        assert_eq!(edt_squared(&m).unwrap(), vec![4.0, 0.0, 4.0, 16.0, 4.0, 0.0]);
    }
}
