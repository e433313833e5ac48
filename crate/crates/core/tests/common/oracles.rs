//! Brute-force dense references for the mask algebra, written without
//! reuse of the library's kernels.

#![allow(dead_code)]

use editforge::mask::{BBox, RasterMask};
use editforge::tensor::Tensor;
use rand::Rng;

pub fn random_mask(rng: &mut impl Rng, h: usize, w: usize) -> RasterMask {
    let binary = rng.random_bool(0.5);
    let density = rng.random_range(0.02..0.6);
    let values = (0..h * w)
        .map(|_| {
            if binary {
                if rng.random_bool(density) {
                    1.0
                } else {
                    0.0
                }
            } else {
                rng.random_range(0.0..1.0)
            }
        })
        .collect();
    RasterMask::new(h, w, values).unwrap()
}

pub fn random_image(rng: &mut impl Rng, h: usize, w: usize) -> Tensor {
    Tensor::new(&[h, w, 3], (0..h * w * 3).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

pub fn dilate(m: &RasterMask, r: usize) -> Vec<f64> {
    let (h, w) = (m.height() as isize, m.width() as isize);
    let r = r as isize;
    let mut out = vec![0.0; (h * w) as usize];
    for y in 0..h {
        for x in 0..w {
            let mut hit = false;
            for yy in (y - r).max(0)..=(y + r).min(h - 1) {
                for xx in (x - r).max(0)..=(x + r).min(w - 1) {
                    hit |= m.get(yy as usize, xx as usize) >= 0.5;
                }
            }
            out[(y * w + x) as usize] = if hit { 1.0 } else { 0.0 };
        }
    }
    out
}

/// Direct 2-D convolution with the 3-sigma truncated Gaussian, divided by
/// the weight that falls inside the mask.
pub fn feather(m: &RasterMask, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return m.values().to_vec();
    }
    let (h, w) = (m.height() as isize, m.width() as isize);
    let r = (3.0 * sigma).ceil() as isize;
    let mut out = vec![0.0; (h * w) as usize];
    for y in 0..h {
        for x in 0..w {
            let (mut acc, mut norm) = (0.0, 0.0);
            for dy in -r..=r {
                for dx in -r..=r {
                    let (yy, xx) = (y + dy, x + dx);
                    if yy < 0 || xx < 0 || yy >= h || xx >= w {
                        continue;
                    }
                    let k = (-((dy * dy + dx * dx) as f64) / (2.0 * sigma * sigma)).exp();
                    acc += k * m.get(yy as usize, xx as usize);
                    norm += k;
                }
            }
            out[(y * w + x) as usize] = acc / norm;
        }
    }
    out
}

pub fn merge(o: &Tensor, e: &Tensor, m: &RasterMask) -> Vec<f64> {
    let w = m.width();
    (0..o.numel())
        .map(|i| {
            let p = i / 3;
            let a = m.get(p / w, p % w);
            a * e.data()[i] + (1.0 - a) * o.data()[i]
        })
        .collect()
}

pub fn background(ms: &[RasterMask]) -> Vec<f64> {
    (0..ms[0].values().len())
        .map(|i| 1.0 - ms.iter().map(|m| m.values()[i]).fold(0.0, f64::max))
        .collect()
}

pub fn outpaint(b: BBox, h: usize, w: usize) -> Vec<f64> {
    (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            if y >= b.y0 && y < b.y1 && x >= b.x0 && x < b.x1 {
                0.0
            } else {
                1.0
            }
        })
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Outcome of one randomized mask case.
pub struct CaseResult {
    pub max_err: f64,
    pub extensive: bool,
    pub merge_boundary: bool,
}

/// Runs every op against its oracle on one random geometry.
pub fn run_case(rng: &mut impl Rng) -> CaseResult {
    use editforge::mask as lib;
    let h = rng.random_range(1..=64);
    let w = rng.random_range(1..=64);
    let m = random_mask(rng, h, w);
    let r = rng.random_range(0..=4);
    let sigma = if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.3..3.0) };
    let mut err = 0.0f64;

    let d = lib::dilate(&m, r);
    err = err.max(max_abs_diff(d.values(), &dilate(&m, r)));
    let f = lib::feather(&m, sigma);
    err = err.max(max_abs_diff(f.values(), &feather(&m, sigma)));

    let (o, e) = (random_image(rng, h, w), random_image(rng, h, w));
    err = err.max(max_abs_diff(lib::merge(&o, &e, &m).unwrap().data(), &merge(&o, &e, &m)));

    let n = rng.random_range(1..=3);
    let fgs: Vec<RasterMask> = (0..n).map(|_| random_mask(rng, h, w)).collect();
    err = err.max(max_abs_diff(lib::background_mask(&fgs).unwrap().values(), &background(&fgs)));

    let x0 = rng.random_range(0..w);
    let x1 = rng.random_range(x0 + 1..=w);
    let y0 = rng.random_range(0..h);
    let y1 = rng.random_range(y0 + 1..=h);
    let b = BBox { x0, y0, x1, y1 };
    err = err.max(max_abs_diff(lib::outpaint_mask(b, h, w).unwrap().values(), &outpaint(b, h, w)));

    let binary = m.binarized();
    let extensive = binary.values().iter().zip(d.values()).all(|(a, b)| a <= b)
        && d.values().iter().zip(lib::dilate(&m, r + 1).values()).all(|(a, b)| a <= b);

    let soft = lib::feather(&d, sigma);
    let merged = lib::merge(&o, &e, &soft).unwrap();
    let merge_boundary = (0..h * w).all(|p| {
        let a = soft.values()[p];
        (0..3).all(|c| {
            let i = p * 3 + c;
            (a != 0.0 || merged.data()[i] == o.data()[i]) && (a != 1.0 || merged.data()[i] == e.data()[i])
        })
    });
    CaseResult {
        max_err: err,
        extensive,
        merge_boundary,
    }
}
