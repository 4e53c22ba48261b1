use crate::error::{Error, Result};
use crate::volume::{MaskVolume, Volume};

/// In-plane crop to `target_h x target_w`, centred on the mask's bounding
/// box (taken over all slices) and shifted to stay inside the image.
/// An empty mask centres the window on the image.
pub fn crop(v: &Volume, mask: &MaskVolume, target_h: usize, target_w: usize) -> Result<(Volume, MaskVolume)> {
    let d = v.dims();
    crate::volume::same_dims(d, mask.dims())?;
    if target_h == 0 || target_w == 0 || target_h > d.h || target_w > d.w {
        return Err(Error::Config(format!(
            "crop {target_h}x{target_w} does not fit in {}x{} slices",
            d.h, d.w
        )));
    }
    let (y0, x0) = match bbox(mask) {
        None => ((d.h - target_h) / 2, (d.w - target_w) / 2),
        Some([ylo, yhi, xlo, xhi]) => {
            let (bh, bw) = (yhi - ylo + 1, xhi - xlo + 1);
            if bh > target_h || bw > target_w {
                return Err(Error::Data(format!(
                    "mask bounding box {bh}x{bw} exceeds crop {target_h}x{target_w}"
                )));
            }
            (
                window_start(ylo, yhi, target_h, d.h),
                window_start(xlo, xhi, target_w, d.w),
            )
        }
    };
    let mut img = Vec::with_capacity(d.m * target_h * target_w);
    let mut lab = Vec::with_capacity(d.m * target_h * target_w);
    for z in 0..d.m {
        for y in y0..y0 + target_h {
            let a = d.index(z, y, x0);
            img.extend_from_slice(&v.data()[a..a + target_w]);
            lab.extend_from_slice(&mask.data()[a..a + target_w]);
        }
    }
    let nd = crate::volume::Dims::new(d.m, target_h, target_w);
    Ok((Volume::new(nd, v.spacing(), img)?, MaskVolume::new(nd, mask.spacing(), lab)?))
}

fn window_start(lo: usize, hi: usize, size: usize, extent: usize) -> usize {
    let centre = (lo + hi) / 2;
    centre
        .saturating_sub(size / 2)
        .min(lo)
        .max((hi + 1).saturating_sub(size))
        .min(extent - size)
}

/// `[y_min, y_max, x_min, x_max]` of foreground voxels over all slices.
fn bbox(mask: &MaskVolume) -> Option<[usize; 4]> {
    let d = mask.dims();
    let mut b: Option<[usize; 4]> = None;
    for z in 0..d.m {
        for y in 0..d.h {
            for x in 0..d.w {
                if mask.get(z, y, x) != 0 {
                    let e = b.get_or_insert([y, y, x, x]);
                    e[0] = e[0].min(y);
                    e[1] = e[1].max(y);
                    e[2] = e[2].min(x);
                    e[3] = e[3].max(x);
                }
            }
        }
    }
    b
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Dims, Spacing};

    fn setup(h: usize, w: usize, boxes: &[(usize, usize, usize, usize)]) -> (Volume, MaskVolume) {
        let d = Dims::new(2, h, w);
        let v = Volume::new(d, Spacing::default(), (0..d.len()).map(|i| i as f32).collect()).unwrap();
        let mut m = vec![0u8; d.len()];
        for &(y0, y1, x0, x1) in boxes {
            for y in y0..=y1 {
                for x in x0..=x1 {
                    m[d.index(1, y, x)] = 1;
                }
            }
        }
        (v, MaskVolume::new(d, Spacing::default(), m).unwrap())
    }

    #[test]
    fn crop_keeps_every_foreground_voxel() {
        let (v, m) = setup(512, 512, &[(200, 290, 150, 330)]);
        let (cv, cm) = crop(&v, &m, 192, 240).unwrap();
        assert_eq!(cv.dims(), Dims::new(2, 192, 240));
        assert_eq!(cm.count(), m.count());
        // image values travel with the mask
        let src = v.data();
        let idx = cm.data().iter().position(|&x| x == 1).unwrap();
        let (z, y, x) = (idx / (192 * 240), idx / 240 % 192, idx % 240);
        let oy = cv.get(z, y, x) as usize / 512 % 512;
        let ox = cv.get(z, y, x) as usize % 512;
        assert_eq!(m.get(z, oy, ox), 1);
        assert_eq!(src[Dims::new(2, 512, 512).index(z, oy, ox)], cv.get(z, y, x));
    }

    #[test]
    fn window_clamps_at_borders() {
        let (v, m) = setup(64, 64, &[(0, 3, 60, 63)]);
        let (_, cm) = crop(&v, &m, 16, 16).unwrap();
        assert_eq!(cm.count(), m.count());
    }

    #[test]
    fn even_box_filling_the_window_fits() {
        let (v, m) = setup(40, 40, &[(10, 25, 3, 18)]);
        let (_, cm) = crop(&v, &m, 16, 16).unwrap();
        assert_eq!(cm.count(), m.count());
    }

    #[test]
    fn same_size_crop_is_identity() {
        let (v, m) = setup(20, 30, &[(5, 9, 5, 9)]);
        let (cv, cm) = crop(&v, &m, 20, 30).unwrap();
        assert_eq!(cv, v);
        assert_eq!(cm, m);
    }

    #[test]
    fn oversized_mask_is_an_error() {
        let (v, m) = setup(512, 512, &[(10, 309, 10, 309)]);
        let e = crop(&v, &m, 192, 240).unwrap_err();
        assert!(e.to_string().contains("300x300"));
    }
}
