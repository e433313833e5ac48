//! Raster mask algebra: morphology, feathering, compositing and boxes.

use serde::{Deserialize, Serialize};

use crate::error::{contract_err, shape_err, Result};
use crate::image::{dims, pixel, set_pixel};
use crate::tensor::Tensor;
use crate::toy::nearest_color;

/// Threshold used wherever a binary mask is needed.
pub const BINARY_THRESHOLD: f64 = 0.5;

/// Single-channel mask with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterMask {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl RasterMask {
    /// Values are clamped into `[0, 1]`.
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(shape_err!("{} mask values for a {height}x{width} mask", values.len()));
        }
        Ok(Self {
            height,
            width,
            values: values.into_iter().map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) }).collect(),
        })
    }

    pub fn filled(height: usize, width: usize, v: f64) -> Self {
        Self::new(height, width, vec![v; height * width]).expect("sized")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match t.shape() {
            [h, w] => Self::new(*h, *w, t.data().to_vec()),
            s => Err(shape_err!("mask tensor must be [h, w], got {s:?}")),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[self.height, self.width], self.values.clone()).expect("sized")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    fn set(&mut self, y: usize, x: usize, v: f64) {
        self.values[y * self.width + x] = v.clamp(0.0, 1.0);
    }

    pub fn binarized(&self) -> Self {
        Self {
            values: self.values.iter().map(|&v| if v >= BINARY_THRESHOLD { 1.0 } else { 0.0 }).collect(),
            ..self.clone()
        }
    }

    pub fn complement(&self) -> Self {
        Self {
            values: self.values.iter().map(|v| 1.0 - v).collect(),
            ..self.clone()
        }
    }

    pub fn area(&self) -> f64 {
        self.values.iter().sum()
    }

    fn same_geometry(&self, other: &Self) -> Result<()> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(shape_err!(
                "mask geometries differ: {}x{} vs {}x{}",
                self.height,
                self.width,
                other.height,
                other.width
            ));
        }
        Ok(())
    }

    /// Bounding box of the binarized mask, `None` when it is empty.
    pub fn bbox(&self) -> Option<BBox> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) >= BINARY_THRESHOLD {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x + 1);
                    y1 = y1.max(y + 1);
                }
            }
        }
        (x0 != usize::MAX).then_some(BBox { x0, y0, x1, y1 })
    }
}

/// Half-open pixel box `[x0, x1) x [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if !(self.x0 < self.x1 && self.x1 <= width && self.y0 < self.y1 && self.y1 <= height) {
            return Err(contract_err!("box {self:?} is empty or outside a {height}x{width} canvas"));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }
}

/// Binary dilation of the binarized mask by a `(2r+1)` square.
pub fn dilate(mask: &RasterMask, radius: usize) -> RasterMask {
    let b = mask.binarized();
    if radius == 0 {
        return b;
    }
    let (h, w) = (mask.height, mask.width);
    // separable: a square max-filter is a row max followed by a column max
    let mut rows = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius).min(w - 1);
            rows[y * w + x] = if (lo..=hi).any(|xx| b.get(y, xx) == 1.0) { 1.0 } else { 0.0 };
        }
    }
    let mut out = RasterMask::filled(h, w, 0.0);
    for y in 0..h {
        for x in 0..w {
            let lo = y.saturating_sub(radius);
            let hi = (y + radius).min(h - 1);
            if (lo..=hi).any(|yy| rows[yy * w + x] == 1.0) {
                out.set(y, x, 1.0);
            }
        }
    }
    out
}

/// Normalized Gaussian taps for offsets `-r..=r`, `r = ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as usize;
    let k: Vec<f64> = (0..=2 * r)
        .map(|i| {
            let d = i as f64 - r as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur. Taps falling outside the mask are dropped and
/// the remaining weights renormalized, so constant masks stay constant up
/// to the border.
pub fn feather(mask: &RasterMask, sigma: f64) -> RasterMask {
    if sigma <= 0.0 || !sigma.is_finite() {
        return mask.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (h, w) = (mask.height as isize, mask.width as isize);
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for y in 0..h {
            for x in 0..w {
                let (mut acc, mut norm) = (0.0, 0.0);
                for (i, kv) in k.iter().enumerate() {
                    let d = i as isize - r;
                    let (yy, xx) = if horizontal { (y, x + d) } else { (y + d, x) };
                    if (0..h).contains(&yy) && (0..w).contains(&xx) {
                        acc += kv * src[(yy * w + xx) as usize];
                        norm += kv;
                    }
                }
                out[(y * w + x) as usize] = acc / norm;
            }
        }
        out
    };
    let once = pass(&mask.values, true);
    let twice = pass(&once, false);
    RasterMask::new(mask.height, mask.width, twice).expect("same geometry")
}

/// `mask * edited + (1 - mask) * original`, per channel.
pub fn merge(original: &Tensor, edited: &Tensor, mask: &RasterMask) -> Result<Tensor> {
    let (h, w) = dims(original)?;
    if edited.shape() != original.shape() {
        return Err(shape_err!("merge of images {:?} and {:?}", original.shape(), edited.shape()));
    }
    if (mask.height, mask.width) != (h, w) {
        return Err(shape_err!("merge mask {}x{} for a {h}x{w} image", mask.height, mask.width));
    }
    let mut out = original.clone();
    for y in 0..h {
        for x in 0..w {
            let m = mask.get(y, x);
            let (o, e) = (pixel(original, y, x), pixel(edited, y, x));
            set_pixel(&mut out, y, x, std::array::from_fn(|c| m * e[c] + (1.0 - m) * o[c]));
        }
    }
    Ok(out)
}

/// `1 - max(foregrounds)` pixelwise.
pub fn background_mask(foregrounds: &[RasterMask]) -> Result<RasterMask> {
    let (first, rest) = foregrounds
        .split_first()
        .ok_or_else(|| contract_err!("background mask needs at least one foreground mask"))?;
    let mut union = first.clone();
    for m in rest {
        union.same_geometry(m)?;
        for (u, v) in union.values.iter_mut().zip(&m.values) {
            *u = u.max(*v);
        }
    }
    Ok(union.complement())
}

/// Attention-difference mask and whether the difference was constant.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionDifference {
    pub mask: RasterMask,
    pub constant: bool,
}

/// `|mean(A_out) - mean(A_in)|` per pixel, min-max normalized, then
/// binarized. Stacks are `[k, h, w]`.
pub fn normalized_attention_difference(a_in: &Tensor, a_out: &Tensor) -> Result<AttentionDifference> {
    let [k, h, w] = a_in.shape() else {
        return Err(shape_err!("attention stack must be [k, h, w], got {:?}", a_in.shape()));
    };
    let (k, h, w) = (*k, *h, *w);
    if a_out.shape() != a_in.shape() {
        return Err(shape_err!("attention stacks {:?} and {:?} differ", a_in.shape(), a_out.shape()));
    }
    if k == 0 || h == 0 || w == 0 {
        return Err(shape_err!("empty attention stack {:?}", a_in.shape()));
    }
    let n = h * w;
    let mean = |t: &Tensor, p: usize| (0..k).map(|i| t.data()[i * n + p]).sum::<f64>() / k as f64;
    let diff: Vec<f64> = (0..n).map(|p| (mean(a_out, p) - mean(a_in, p)).abs()).collect();
    let lo = diff.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = diff.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 || !(hi - lo).is_finite() {
        return Ok(AttentionDifference {
            mask: RasterMask::filled(h, w, 0.0),
            constant: true,
        });
    }
    let norm = diff.into_iter().map(|d| (d - lo) / (hi - lo)).collect();
    Ok(AttentionDifference {
        mask: RasterMask::new(h, w, norm)?.binarized(),
        constant: false,
    })
}

/// Where the copied region goes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Placement {
    /// Shift by `(dx, dy)` pixels.
    Offset(isize, isize),
    /// Nearest-neighbor rescale about the box center.
    Scale(f64),
}

/// Copies `bbox` of `image` onto `background` at the new placement.
pub fn crop_paste(image: &Tensor, bbox: BBox, background: &Tensor, placement: Placement) -> Result<Tensor> {
    let (h, w) = dims(image)?;
    if background.shape() != image.shape() {
        return Err(shape_err!("crop-paste background {:?} vs image {:?}", background.shape(), image.shape()));
    }
    bbox.validate(h, w)?;
    let (bw, bh) = (bbox.width() as f64, bbox.height() as f64);
    let (nx0, ny0, nw, nh) = match placement {
        Placement::Offset(dx, dy) => (
            bbox.x0 as isize + dx,
            bbox.y0 as isize + dy,
            bbox.width() as isize,
            bbox.height() as isize,
        ),
        Placement::Scale(s) => {
            if !(s > 0.0 && s.is_finite()) {
                return Err(contract_err!("crop-paste scale must be positive, got {s}"));
            }
            let nw = (bw * s).round().max(1.0);
            let nh = (bh * s).round().max(1.0);
            let cx = bbox.x0 as f64 + bw / 2.0;
            let cy = bbox.y0 as f64 + bh / 2.0;
            (
                (cx - nw / 2.0).round() as isize,
                (cy - nh / 2.0).round() as isize,
                nw as isize,
                nh as isize,
            )
        }
    };
    let (nx1, ny1) = (nx0 + nw, ny0 + nh);
    if nx0 < 0 || ny0 < 0 || nx1 > w as isize || ny1 > h as isize {
        return Err(contract_err!(
            "placement x {nx0}..{nx1}, y {ny0}..{ny1} leaves the {h}x{w} canvas (visible x {}..{}, y {}..{})",
            nx0.clamp(0, w as isize),
            nx1.clamp(0, w as isize),
            ny0.clamp(0, h as isize),
            ny1.clamp(0, h as isize)
        ));
    }
    let mut out = background.clone();
    for y in 0..nh {
        for x in 0..nw {
            let sx = bbox.x0 + ((x as f64 * bw / nw as f64) as usize).min(bbox.width() - 1);
            let sy = bbox.y0 + ((y as f64 * bh / nh as f64) as usize).min(bbox.height() - 1);
            set_pixel(&mut out, (ny0 + y) as usize, (nx0 + x) as usize, pixel(image, sy, sx));
        }
    }
    Ok(out)
}

/// Ones outside `bbox`, zeros inside.
pub fn outpaint_mask(bbox: BBox, height: usize, width: usize) -> Result<RasterMask> {
    bbox.validate(height, width)?;
    let mut m = RasterMask::filled(height, width, 1.0);
    for y in bbox.y0..bbox.y1 {
        for x in bbox.x0..bbox.x1 {
            m.set(y, x, 0.0);
        }
    }
    Ok(m)
}

/// Pixels whose palette color differs from the border's: the desk-scale
/// stand-in for open-vocabulary grounding plus segmentation.
pub fn segment_foreground(image: &Tensor) -> Result<RasterMask> {
    let (h, w) = dims(image)?;
    let bg = border_color(image)?;
    let values = (0..h * w)
        .map(|i| {
            let p = pixel(image, i / w, i % w);
            if nearest_color(p) != bg {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    RasterMask::new(h, w, values)
}

/// Palette name of the most common border color.
pub fn border_color(image: &Tensor) -> Result<&'static str> {
    let (h, w) = dims(image)?;
    let mut counts: Vec<(&'static str, usize)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if y == 0 || x == 0 || y + 1 == h || x + 1 == w {
                let c = nearest_color(pixel(image, y, x));
                match counts.iter_mut().find(|e| e.0 == c) {
                    Some(e) => e.1 += 1,
                    None => counts.push((c, 1)),
                }
            }
        }
    }
    Ok(counts.iter().max_by_key(|e| e.1).map(|e| e.0).unwrap_or("gray"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dilate_center_pixel() {
        let mut m = RasterMask::filled(5, 5, 0.0);
        m.set(2, 2, 1.0);
        let d = dilate(&m, 1);
        for y in 0..5 {
            for x in 0..5 {
                let inside = (1..=3).contains(&y) && (1..=3).contains(&x);
                assert_eq!(d.get(y, x), if inside { 1.0 } else { 0.0 });
            }
        }
        assert_eq!(dilate(&m, 0), m);
        let full = RasterMask::filled(4, 3, 1.0);
        assert_eq!(dilate(&full, 2), full);
    }

    #[test]
    fn feather_identity_cases() {
        let m = RasterMask::new(2, 2, vec![0.0, 1.0, 0.3, 0.7]).unwrap();
        assert_eq!(feather(&m, 0.0), m);
        let c = RasterMask::filled(6, 7, 0.4);
        for v in feather(&c, 1.3).values() {
            assert!((v - 0.4).abs() < 1e-15);
        }
    }

    #[test]
    fn merge_extremes() {
        let o = Tensor::zeros(&[2, 2, 3]);
        let e = Tensor::filled(&[2, 2, 3], 0.8);
        assert_eq!(merge(&o, &e, &RasterMask::filled(2, 2, 1.0)).unwrap(), e);
        assert_eq!(merge(&o, &e, &RasterMask::filled(2, 2, 0.0)).unwrap(), o);
        assert!(merge(&o, &e, &RasterMask::filled(3, 2, 0.0)).is_err());
    }

    #[test]
    fn background_of_full_foreground_is_empty() {
        let b = background_mask(&[RasterMask::filled(3, 3, 1.0)]).unwrap();
        assert_eq!(b.area(), 0.0);
        assert!(background_mask(&[]).is_err());
    }

    #[test]
    fn attention_difference_constant_case() {
        let a = Tensor::filled(&[2, 3, 3], 0.5);
        let d = normalized_attention_difference(&a, &a).unwrap();
        assert!(d.constant);
        assert_eq!(d.mask.area(), 0.0);
    }

    #[test]
    fn crop_paste_cases() {
        let img = Tensor::new(&[4, 4, 3], (0..48).map(|i| i as f64 / 48.0).collect()).unwrap();
        let full = BBox { x0: 0, y0: 0, x1: 4, y1: 4 };
        assert_eq!(crop_paste(&img, full, &img, Placement::Offset(0, 0)).unwrap(), img);
        assert!(crop_paste(&img, full, &img, Placement::Scale(2.0)).is_err());
    }

    #[test]
    fn outpaint_mask_cases() {
        let full = outpaint_mask(BBox { x0: 0, y0: 0, x1: 8, y1: 8 }, 8, 8).unwrap();
        assert_eq!(full.area(), 0.0);
        let half = outpaint_mask(BBox { x0: 2, y0: 2, x1: 6, y1: 6 }, 8, 8).unwrap();
        assert_eq!(half.area(), 64.0 * 0.75);
        let one = outpaint_mask(BBox { x0: 3, y0: 5, x1: 4, y1: 6 }, 8, 8).unwrap();
        assert_eq!(one.area(), 63.0);
        assert!(outpaint_mask(BBox { x0: 3, y0: 3, x1: 3, y1: 6 }, 8, 8).is_err());
    }
}
