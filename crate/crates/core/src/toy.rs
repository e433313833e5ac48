//! A tiny synthetic world of flat-colored shapes on plain backgrounds.
//!
//! Captions follow one grammar ("a red square on a blue background"), the
//! renderer turns a scene into pixels, and [`analyze`] recovers the scene's
//! concepts from pixels. Stub providers and training fixtures are built on
//! this world so every pipeline stage can run offline and deterministically.

use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::image::{dims, pixel, set_pixel};
use crate::rng::Rng;
use crate::task::EditTaskType;
use crate::tensor::Tensor;
use crate::text::words;

pub const PALETTE: [(&str, [f64; 3]); 12] = [
    ("red", [0.9, 0.1, 0.1]),
    ("green", [0.1, 0.75, 0.2]),
    ("blue", [0.15, 0.25, 0.9]),
    ("yellow", [0.95, 0.9, 0.15]),
    ("orange", [0.95, 0.55, 0.1]),
    ("purple", [0.55, 0.2, 0.75]),
    ("pink", [0.95, 0.6, 0.75]),
    ("white", [0.97, 0.97, 0.97]),
    ("black", [0.05, 0.05, 0.05]),
    ("gray", [0.5, 0.5, 0.5]),
    ("brown", [0.5, 0.3, 0.15]),
    ("cyan", [0.1, 0.85, 0.9]),
];

pub const SHAPES: [&str; 3] = ["square", "circle", "triangle"];

pub fn color_rgb(name: &str) -> Option<[f64; 3]> {
    PALETTE.iter().find(|(n, _)| *n == name).map(|(_, c)| *c)
}

/// Palette entry closest to `rgb` in Euclidean distance.
pub fn nearest_color(rgb: [f64; 3]) -> &'static str {
    PALETTE
        .iter()
        .min_by(|a, b| dist2(a.1, rgb).total_cmp(&dist2(b.1, rgb)))
        .map(|(n, _)| *n)
        .unwrap()
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub shape: String,
    pub color: String,
    pub background: String,
    /// Center as fractions of width and height.
    pub cx: f64,
    pub cy: f64,
    /// Side length as a fraction of the shorter image side.
    pub size: f64,
}

/// The three concepts a caption or image carries.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Concepts {
    pub shape: Option<String>,
    pub color: Option<String>,
    pub background: Option<String>,
}

impl Scene {
    pub fn random(rng: &mut Rng) -> Self {
        let shape = SHAPES.choose(rng).unwrap().to_string();
        let (color, background) = distinct_pair(rng);
        Self {
            shape,
            color,
            background,
            cx: rng.random_range(0.35..0.65),
            cy: rng.random_range(0.35..0.65),
            size: rng.random_range(0.4..0.55),
        }
    }

    /// A scene with the shape centered at a fixed size.
    pub fn centered(rng: &mut Rng) -> Self {
        Self {
            cx: 0.5,
            cy: 0.5,
            size: 0.5,
            ..Self::random(rng)
        }
    }

    pub fn caption(&self) -> String {
        format!(
            "a {} {} on a {} background",
            self.color, self.shape, self.background
        )
    }

    pub fn concepts(&self) -> Concepts {
        Concepts {
            shape: Some(self.shape.clone()),
            color: Some(self.color.clone()),
            background: Some(self.background.clone()),
        }
    }

    /// Whether pixel center `(px, py)`, in fractions, lies inside the shape.
    fn contains(&self, px: f64, py: f64, aspect: f64) -> bool {
        let s = self.size / 2.0;
        let dx = (px - self.cx) * aspect;
        let dy = py - self.cy;
        match self.shape.as_str() {
            "square" => dx.abs() <= s && dy.abs() <= s,
            "circle" => dx * dx + dy * dy <= s * s,
            "triangle" => {
                let frac = (dy + s) / (2.0 * s);
                (0.0..=1.0).contains(&frac) && dx.abs() <= frac * s
            }
            _ => false,
        }
    }

    /// Binary foreground mask `[h, w]`.
    pub fn mask(&self, h: usize, w: usize) -> Tensor {
        let aspect = w as f64 / h as f64;
        let mut m = Tensor::zeros(&[h, w]);
        for y in 0..h {
            for x in 0..w {
                let (px, py) = ((x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64);
                if self.contains(px, py, aspect) {
                    m.data_mut()[y * w + x] = 1.0;
                }
            }
        }
        m
    }

    pub fn render(&self, h: usize, w: usize) -> Tensor {
        let bg = color_rgb(&self.background).unwrap_or([0.5; 3]);
        let fg = color_rgb(&self.color).unwrap_or([0.5; 3]);
        let mask = self.mask(h, w);
        let mut img = Tensor::zeros(&[h, w, 3]);
        for y in 0..h {
            for x in 0..w {
                let c = if mask.data()[y * w + x] > 0.5 { fg } else { bg };
                set_pixel(&mut img, y, x, c);
            }
        }
        img
    }
}

fn distinct_pair(rng: &mut Rng) -> (String, String) {
    let a = PALETTE.choose(rng).unwrap().0;
    loop {
        let b = PALETTE.choose(rng).unwrap().0;
        if b != a {
            return (a.to_string(), b.to_string());
        }
    }
}

/// Concepts named in a caption: the first shape word, the color word before
/// it, and the color word before "background".
pub fn parse_caption(caption: &str) -> Concepts {
    let ws = words(caption);
    let is_color = |w: &str| color_rgb(w).is_some();
    let shape_at = ws.iter().position(|w| SHAPES.contains(&w.as_str()));
    let bg_at = ws.iter().position(|w| w == "background");
    let color = shape_at
        .and_then(|i| ws[..i].iter().rev().find(|w| is_color(w)))
        .cloned();
    let background = bg_at
        .and_then(|i| ws[..i].iter().rev().find(|w| is_color(w)))
        .filter(|c| Some(*c) != color.as_ref() || ws.iter().filter(|w| w == c).count() > 1)
        .cloned();
    Concepts {
        shape: shape_at.map(|i| ws[i].clone()),
        color,
        background,
    }
}

/// Recovers concepts from pixels. The background is the palette color of
/// the border, the foreground the palette color of the remaining pixels,
/// and the shape follows from how much of its bounding box it fills.
pub fn analyze(img: &Tensor) -> Concepts {
    let Ok((h, w)) = dims(img) else {
        return Concepts {
            shape: None,
            color: None,
            background: None,
        };
    };
    let mut border = [0.0; 3];
    let mut n = 0.0;
    for y in 0..h {
        for x in 0..w {
            if y == 0 || x == 0 || y == h - 1 || x == w - 1 {
                let p = pixel(img, y, x);
                (0..3).for_each(|c| border[c] += p[c]);
                n += 1.0;
            }
        }
    }
    border.iter_mut().for_each(|v| *v /= n);
    let background = nearest_color(border);
    let bg_rgb = color_rgb(background).unwrap();

    let mut fg = [0.0; 3];
    let mut count = 0usize;
    let (mut y0, mut y1, mut x0, mut x1) = (h, 0, w, 0);
    for y in 0..h {
        for x in 0..w {
            let p = pixel(img, y, x);
            if dist2(p, bg_rgb) > 0.04 {
                (0..3).for_each(|c| fg[c] += p[c]);
                count += 1;
                y0 = y0.min(y);
                y1 = y1.max(y);
                x0 = x0.min(x);
                x1 = x1.max(x);
            }
        }
    }
    if count == 0 {
        return Concepts {
            shape: None,
            color: None,
            background: Some(background.to_string()),
        };
    }
    fg.iter_mut().for_each(|v| *v /= count as f64);
    let fill = count as f64 / ((y1 - y0 + 1) * (x1 - x0 + 1)) as f64;
    let shape = if fill > 0.9 {
        "square"
    } else if fill > 0.66 {
        "circle"
    } else {
        "triangle"
    };
    Concepts {
        shape: Some(shape.to_string()),
        color: Some(nearest_color(fg).to_string()),
        background: Some(background.to_string()),
    }
}

/// A supervised edit: source image, instruction, target image.
#[derive(Clone, Debug)]
pub struct EditExample {
    pub task: EditTaskType,
    pub source: Tensor,
    pub instruction: String,
    pub target: Tensor,
    pub reference: Option<Tensor>,
}

/// Recolor edits of a centered square: the square keeps its place and
/// takes a new palette color.
pub fn recolor_fixture(rng: &mut Rng, count: usize, h: usize, w: usize) -> Vec<EditExample> {
    (0..count)
        .map(|_| {
            let scene = Scene {
                shape: "square".to_string(),
                ..Scene::centered(rng)
            };
            let target_color = loop {
                let c = PALETTE.choose(rng).unwrap().0;
                if c != scene.color && c != scene.background {
                    break c.to_string();
                }
            };
            recolor_example(&scene, &target_color, h, w)
        })
        .collect()
}

pub fn recolor_example(scene: &Scene, target_color: &str, h: usize, w: usize) -> EditExample {
    let target = Scene {
        color: target_color.to_string(),
        ..scene.clone()
    };
    EditExample {
        task: EditTaskType::ColorAlter,
        source: scene.render(h, w),
        instruction: format!("make the {} {}", scene.shape, target_color),
        target: target.render(h, w),
        reference: None,
    }
}

/// Background fills: the backdrop takes a new color, the shape is kept.
pub fn background_fixture(rng: &mut Rng, count: usize, h: usize, w: usize) -> Vec<EditExample> {
    (0..count)
        .map(|_| {
            let scene = Scene::centered(rng);
            let bg = loop {
                let c = PALETTE.choose(rng).unwrap().0;
                if c != scene.color && c != scene.background {
                    break c.to_string();
                }
            };
            let target = Scene {
                background: bg.clone(),
                ..scene.clone()
            };
            EditExample {
                task: EditTaskType::BackgroundChange,
                source: scene.render(h, w),
                instruction: format!("change the background to {bg}"),
                target: target.render(h, w),
                reference: None,
            }
        })
        .collect()
}
