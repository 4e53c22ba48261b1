//! Initial probability estimate: per-view 2D U-Net predictions over axial,
//! coronal and sagittal slicings, fused by voxelwise averaging.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};
use crate::unet::UNet;
use crate::volume::{same_dims, Dims, MaskVolume, ProbVolume, Spacing, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Axial,
    Coronal,
    Sagittal,
}

impl View {
    pub const ALL: [View; 3] = [View::Axial, View::Coronal, View::Sagittal];

    pub fn name(self) -> &'static str {
        match self {
            View::Axial => "axial",
            View::Coronal => "coronal",
            View::Sagittal => "sagittal",
        }
    }

    /// `(slice count, plane rows, plane cols)` before padding.
    pub fn geometry(self, d: Dims) -> (usize, usize, usize) {
        match self {
            View::Axial => (d.m, d.h, d.w),
            View::Coronal => (d.h, d.m, d.w),
            View::Sagittal => (d.w, d.m, d.h),
        }
    }

    /// Volume coordinate of plane pixel `(r, c)` in slice `s`.
    #[inline]
    fn voxel(self, s: usize, r: usize, c: usize) -> (usize, usize, usize) {
        match self {
            View::Axial => (s, r, c),
            View::Coronal => (r, s, c),
            View::Sagittal => (r, c, s),
        }
    }
}

impl std::fmt::Display for View {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for View {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        View::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown view `{s}` (expected axial, coronal or sagittal)")))
    }
}

/// Which views contribute to the initial estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViewMode {
    #[serde(rename = "3-view")]
    ThreeView,
    #[serde(rename = "axial-only")]
    AxialOnly,
}

impl ViewMode {
    pub fn views(self) -> &'static [View] {
        match self {
            ViewMode::ThreeView => &View::ALL,
            ViewMode::AxialOnly => &View::ALL[..1],
        }
    }
}

impl std::fmt::Display for ViewMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ViewMode::ThreeView => "3-view",
            ViewMode::AxialOnly => "axial-only",
        })
    }
}

impl std::str::FromStr for ViewMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "3-view" | "three-view" => Ok(ViewMode::ThreeView),
            "axial-only" | "axial" => Ok(ViewMode::AxialOnly),
            _ => Err(Error::Config(format!("unknown view mode `{s}` (expected 3-view or axial-only)"))),
        }
    }
}

/// Zero padding added around each plane: rows before/after, cols before/after.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

fn split_pad(n: usize, divisor: usize) -> (usize, usize) {
    let total = n.div_ceil(divisor) * divisor - n;
    (total / 2, total - total / 2)
}

/// One orientation of a volume as a batch of padded single-channel planes.
#[derive(Debug, Clone)]
pub struct ViewStack {
    view: View,
    dims: Dims,
    spacing: Spacing,
    pad: Padding,
    slices: Tensor4<f32>,
}

impl ViewStack {
    pub fn orient(v: &Volume, view: View, divisor: usize) -> Self {
        let (slices, pad) = orient_grid(v.data(), v.dims(), view, divisor);
        Self {
            view,
            dims: v.dims(),
            spacing: v.spacing(),
            pad,
            slices,
        }
    }

    pub fn view(&self) -> View {
        self.view
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn padding(&self) -> Padding {
        self.pad
    }

    pub fn slices(&self) -> &Tensor4<f32> {
        &self.slices
    }

    /// Volume-order voxels of this stack's own slices.
    pub fn unorient(&self) -> Volume {
        let data = unorient_grid(&self.slices, self.dims, self.view, self.pad);
        Volume::new(self.dims, self.spacing, data).expect("stack holds a valid volume")
    }

    /// Reassemble per-slice maps (`n x 1 x H x W`, same geometry as the stack)
    /// into a volume-order probability map.
    pub fn unorient_prob(&self, planes: &Tensor4<f32>) -> Result<ProbVolume> {
        let s = self.slices.shape();
        planes.expect_shape(Shape4::new(s.n, 1, s.h, s.w))?;
        let data = unorient_grid(planes, self.dims, self.view, self.pad);
        ProbVolume::new(self.dims, self.spacing, data)
    }
}

/// Slice a mask along `view` with the same padding as [`ViewStack::orient`].
pub fn orient_mask(m: &MaskVolume, view: View, divisor: usize) -> Tensor4<f32> {
    let data: Vec<f32> = m.data().iter().map(|&b| f32::from(b)).collect();
    orient_grid(&data, m.dims(), view, divisor).0
}

fn orient_grid(data: &[f32], d: Dims, view: View, divisor: usize) -> (Tensor4<f32>, Padding) {
    let (n, rows, cols) = view.geometry(d);
    let (top, bottom) = split_pad(rows, divisor);
    let (left, right) = split_pad(cols, divisor);
    let (ph, pw) = (rows + top + bottom, cols + left + right);
    let mut t = Tensor4::zeros(Shape4::new(n, 1, ph, pw));
    for s in 0..n {
        let plane = t.plane_mut(s, 0);
        for r in 0..rows {
            for c in 0..cols {
                let (z, y, x) = view.voxel(s, r, c);
                plane[(r + top) * pw + c + left] = data[d.index(z, y, x)];
            }
        }
    }
    (t, Padding { top, bottom, left, right })
}

fn unorient_grid(t: &Tensor4<f32>, d: Dims, view: View, pad: Padding) -> Vec<f32> {
    let (n, rows, cols) = view.geometry(d);
    let pw = t.shape().w;
    let mut out = vec![0.0; d.len()];
    for s in 0..n {
        let plane = t.plane(s, 0);
        for r in 0..rows {
            for c in 0..cols {
                let (z, y, x) = view.voxel(s, r, c);
                out[d.index(z, y, x)] = plane[(r + pad.top) * pw + c + pad.left];
            }
        }
    }
    out
}

/// All three orientations, padded to multiples of `divisor`.
pub fn slice_views(v: &Volume, divisor: usize) -> [ViewStack; 3] {
    View::ALL.map(|view| ViewStack::orient(v, view, divisor))
}

/// Run `net` over every slice of `stack` (in batches) and reassemble.
pub fn predict_view(net: &UNet<f32>, stack: &ViewStack, batch: usize) -> Result<ProbVolume> {
    if net.config().in_channels != 1 {
        return Err(Error::Shape(format!(
            "view network must take 1 channel, has {}",
            net.config().in_channels
        )));
    }
    let s = stack.slices.shape();
    net.config().check_input(Shape4::new(1, 1, s.h, s.w))?;
    let batch = batch.max(1);
    let mut out = Vec::with_capacity(s.len());
    let mut start = 0;
    while start < s.n {
        let end = (start + batch).min(s.n);
        let chunk = Tensor4::from_vec(
            Shape4::new(end - start, 1, s.h, s.w),
            stack.slices.data()[start * s.sample()..end * s.sample()].to_vec(),
        )?;
        out.extend_from_slice(net.forward(&chunk)?.data());
        start = end;
    }
    stack.unorient_prob(&Tensor4::from_vec(s, out)?)
}

/// Voxelwise arithmetic mean of per-view maps.
pub fn fuse_views(maps: &[&ProbVolume]) -> Result<ProbVolume> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Config("fusion needs at least one map".into()))?;
    for m in &maps[1..] {
        same_dims(first.dims(), m.dims())?;
    }
    let k = maps.len() as f64;
    let data = (0..first.data().len())
        .map(|i| {
            let s: f64 = maps.iter().map(|m| m.data()[i] as f64).sum();
            ((s / k) as f32).clamp(0.0, 1.0)
        })
        .collect();
    ProbVolume::new(first.dims(), first.spacing(), data)
}

/// The estimation function: one network per contributing view.
#[derive(Debug, Clone)]
pub struct InitialEstimator {
    nets: Vec<(View, UNet<f32>)>,
    batch: usize,
}

impl InitialEstimator {
    pub fn new(nets: Vec<(View, UNet<f32>)>) -> Result<Self> {
        if nets.is_empty() {
            return Err(Error::Config("initial estimator needs at least one view network".into()));
        }
        for (i, (v, net)) in nets.iter().enumerate() {
            if nets[..i].iter().any(|(u, _)| u == v) {
                return Err(Error::Config(format!("duplicate {v} network")));
            }
            if net.config().in_channels != 1 {
                return Err(Error::Config(format!("{v} network must take 1 input channel")));
            }
        }
        Ok(Self { nets, batch: 8 })
    }

    pub fn with_batch(mut self, batch: usize) -> Self {
        self.batch = batch.max(1);
        self
    }

    pub fn views(&self) -> Vec<View> {
        self.nets.iter().map(|(v, _)| *v).collect()
    }

    pub fn nets(&self) -> &[(View, UNet<f32>)] {
        &self.nets
    }

    /// Per-view maps, in the order the networks were given.
    pub fn predict_views(&self, v: &Volume) -> Result<Vec<(View, ProbVolume)>> {
        self.nets
            .iter()
            .map(|(view, net)| {
                let stack = ViewStack::orient(v, *view, net.config().size_divisor());
                Ok((*view, predict_view(net, &stack, self.batch)?))
            })
            .collect()
    }

    pub fn estimate(&self, v: &Volume) -> Result<ProbVolume> {
        let maps = self.predict_views(v)?;
        let refs: Vec<&ProbVolume> = maps.iter().map(|(_, p)| p).collect();
        fuse_views(&refs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::unet::UNetConfig;

    fn ramp(d: Dims) -> Volume {
        Volume::new(d, Spacing::new(2.0, 1.0, 1.0), (0..d.len()).map(|i| i as f32 * 0.5 - 7.0).collect()).unwrap()
    }

    #[test]
    fn view_geometry_and_padding() {
        let v = ramp(Dims::new(32, 64, 64));
        let [a, c, s] = slice_views(&v, 16);
        assert_eq!(a.slices().shape(), Shape4::new(32, 1, 64, 64));
        assert_eq!(c.slices().shape(), Shape4::new(64, 1, 32, 64));
        assert_eq!(s.slices().shape(), Shape4::new(64, 1, 32, 64));
        let v = ramp(Dims::new(5, 20, 18));
        let c = ViewStack::orient(&v, View::Coronal, 16);
        assert_eq!(c.slices().shape(), Shape4::new(20, 1, 16, 32));
        assert_eq!(
            c.padding(),
            Padding {
                top: 5,
                bottom: 6,
                left: 7,
                right: 7
            }
        );
    }

    #[test]
    fn round_trip_and_cross_view_agreement() {
        let v = ramp(Dims::new(5, 20, 18));
        for stack in slice_views(&v, 16) {
            assert_eq!(stack.unorient(), v);
        }
        let [a, c, s] = slice_views(&v, 16);
        let (z, y, x) = (3, 11, 4);
        let want = v.get(z, y, x);
        let at = |st: &ViewStack, sl: usize, r: usize, col: usize| {
            let p = st.padding();
            st.slices().at(sl, 0, r + p.top, col + p.left)
        };
        assert_eq!(at(&a, z, y, x), want);
        assert_eq!(at(&c, y, z, x), want);
        assert_eq!(at(&s, x, z, y), want);
    }

    #[test]
    fn fusion_is_the_mean() {
        let d = Dims::new(1, 1, 1);
        let sp = Spacing::default();
        let p = |v| ProbVolume::filled(d, sp, v).unwrap();
        let (a, b, c) = (p(0.0), p(0.5), p(1.0));
        assert_eq!(fuse_views(&[&a, &b, &c]).unwrap().data(), &[0.5]);
        assert_eq!(fuse_views(&[&c, &a, &b]).unwrap(), fuse_views(&[&a, &b, &c]).unwrap());
        assert_eq!(fuse_views(&[&b, &b, &b]).unwrap(), b);
        let other = ProbVolume::filled(Dims::new(1, 1, 2), sp, 0.1).unwrap();
        assert!(fuse_views(&[&a, &other]).is_err());
    }

    #[test]
    fn constant_net_gives_constant_map() {
        // All-zero weights with a head bias: sigmoid(b) everywhere.
        let mut net = UNet::<f32>::zeroed(UNetConfig::new(1, 1)).unwrap();
        let head = net.params_mut().iter_mut().find(|p| p.name == "head.bias").unwrap();
        head.value[0] = 0.7;
        let v = ramp(Dims::new(5, 20, 18));
        let est = InitialEstimator::new(vec![(View::Axial, net.clone()), (View::Sagittal, net)]).unwrap();
        let p = est.estimate(&v).unwrap();
        assert_eq!(p.dims(), v.dims());
        let want = 1.0 / (1.0 + (-0.7f32).exp());
        assert!(p.data().iter().all(|&x| (x - want).abs() < 1e-6));
    }

    #[test]
    fn prediction_is_deterministic_and_bounded() {
        let net = UNet::<f32>::new(UNetConfig::new(1, 2), 5).unwrap();
        let v = ramp(Dims::new(4, 16, 20));
        let est = InitialEstimator::new(vec![(View::Axial, net.clone()), (View::Coronal, net)]).unwrap();
        let a = est.estimate(&v).unwrap();
        let b = est.with_batch(3).estimate(&v).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn wrong_channel_count_rejected() {
        let net = UNet::<f32>::new(UNetConfig::new(3, 1), 5).unwrap();
        assert!(InitialEstimator::new(vec![(View::Axial, net)]).is_err());
    }
}
