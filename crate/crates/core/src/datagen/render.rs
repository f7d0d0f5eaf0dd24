use rand::RngExt;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::alphabet::Alphabet;
use super::font::{self, GLYPH_HEIGHT, GLYPH_WIDTH};
use super::DatagenError;
use crate::seeding;

pub const BACKGROUND: u8 = 224;
pub const FOREGROUND: u8 = 32;
pub const NOISE_SIGMA: f64 = 20.0;
pub const MAX_OCCLUSION: f64 = 0.25;
pub const MAX_WARP_DEGREES: f64 = 15.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Clean,
    Noisy,
    Occluded,
    Perspective,
}

impl Tier {
    pub const ALL: [Tier; 4] = [Tier::Clean, Tier::Noisy, Tier::Occluded, Tier::Perspective];

    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Clean => "clean",
            Tier::Noisy => "noisy",
            Tier::Occluded => "occluded",
            Tier::Perspective => "perspective",
        }
    }
}

impl std::str::FromStr for Tier {
    type Err = DatagenError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Tier::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| DatagenError::Spec(format!("unknown tier `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleSpec {
    pub id: String,
    pub label: String,
    pub tier: Tier,
    pub seed: u64,
}

impl SampleSpec {
    /// Validates that `label` leaves room for `[S]`/`[E]` within `max_seq_len`.
    pub fn new(
        id: impl Into<String>,
        label: impl Into<String>,
        tier: Tier,
        seed: u64,
        max_seq_len: usize,
    ) -> Result<Self, DatagenError> {
        let label = label.into();
        let n = label.chars().count();
        if n == 0 || n + 2 > max_seq_len {
            return Err(DatagenError::Spec(format!(
                "label {label:?} has {n} chars; sequence length {max_seq_len} allows 1..={}",
                max_seq_len.saturating_sub(2)
            )));
        }
        Ok(Self {
            id: id.into(),
            label,
            tier,
            seed,
        })
    }
}

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlyphImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

impl GlyphImage {
    pub fn filled(height: usize, width: usize, level: u8) -> Self {
        Self {
            height,
            width,
            pixels: vec![level; height * width],
        }
    }

    /// Ink intensity in `[0, 1]`: 0 for white, 1 for black.
    pub fn normalized(&self) -> impl Iterator<Item = f64> + '_ {
        self.pixels.iter().map(|&p| 1.0 - f64::from(p) / 255.0)
    }
}

/// Inclusive pixel bounds `(x0, y0, x1, y1)`.
pub type BBox = (usize, usize, usize, usize);

/// Rendering output with the intermediate masks exposed for inspection.
#[derive(Debug, Clone)]
pub struct Rendered {
    pub image: GlyphImage,
    /// Text pixels before tier effects (after warping for `perspective`).
    pub text_mask: Vec<bool>,
    pub text_box: BBox,
    /// Pixels covered by occluding bars (`occluded` tier only).
    pub occluder_mask: Option<Vec<bool>>,
}

impl Rendered {
    /// Occluder pixels as a fraction of the text bounding-box area.
    pub fn occluded_fraction(&self) -> f64 {
        let Some(mask) = &self.occluder_mask else {
            return 0.0;
        };
        let (x0, y0, x1, y1) = self.text_box;
        let area = (x1 - x0 + 1) * (y1 - y0 + 1);
        mask.iter().filter(|&&m| m).count() as f64 / area as f64
    }
}

pub fn render(
    spec: &SampleSpec,
    alphabet: &Alphabet,
    height: usize,
    width: usize,
) -> Result<GlyphImage, DatagenError> {
    render_detailed(spec, alphabet, height, width).map(|r| r.image)
}

/// Deterministic rasterization of `spec`: a pure function of its arguments.
pub fn render_detailed(
    spec: &SampleSpec,
    alphabet: &Alphabet,
    height: usize,
    width: usize,
) -> Result<Rendered, DatagenError> {
    let chars: Vec<char> = spec.label.chars().collect();
    if chars.is_empty() {
        return Err(DatagenError::Spec("empty label".into()));
    }
    if let Some(c) = chars.iter().find(|&&c| alphabet.id_of(c).is_none()) {
        return Err(DatagenError::Spec(format!("{c:?} not in alphabet")));
    }
    if height < GLYPH_HEIGHT + 2 {
        return Err(DatagenError::Spec(format!("image height {height} too small")));
    }
    let mut rng = seeding::rng(spec.seed);

    // Largest integer scale whose glyphs fill at most ~60% of the height.
    let mut scale = ((0.6 * height as f64) / GLYPH_HEIGHT as f64).floor().max(1.0) as usize;
    let (scale, gaps) = loop {
        let gaps: Vec<usize> = (1..chars.len())
            .map(|_| rng.random_range(scale..=2 * scale))
            .collect();
        let text_w = chars.len() * GLYPH_WIDTH * scale + gaps.iter().sum::<usize>();
        if text_w + 2 <= width {
            break (scale, gaps);
        }
        if scale == 1 {
            return Err(DatagenError::Spec(format!(
                "label {:?} does not fit a {width}-pixel-wide image",
                spec.label
            )));
        }
        scale -= 1;
    };
    let text_w = chars.len() * GLYPH_WIDTH * scale + gaps.iter().sum::<usize>();
    let text_h = GLYPH_HEIGHT * scale;
    // Word-crop placement: the text sits near the left edge and the vertical
    // centre, with up to one glyph-scale unit (horizontally two) of jitter.
    let x_start = 1 + rng.random_range(0..=(width - 2 - text_w).min(2 * scale));
    let y_mid = (height - text_h) / 2;
    let y_start = rng.random_range(y_mid.saturating_sub(scale).max(1)..=(y_mid + scale).min(height - 1 - text_h));

    let mut mask = vec![false; height * width];
    let mut x = x_start;
    for (i, &c) in chars.iter().enumerate() {
        let bitmap = font::glyph(c).expect("alphabet chars have glyphs");
        for (r, row) in bitmap.iter().enumerate() {
            for (col, &on) in row.iter().enumerate() {
                if !on {
                    continue;
                }
                for dy in 0..scale {
                    for dx in 0..scale {
                        let py = y_start + r * scale + dy;
                        let px = x + col * scale + dx;
                        mask[py * width + px] = true;
                    }
                }
            }
        }
        x += GLYPH_WIDTH * scale + gaps.get(i).copied().unwrap_or(0);
    }

    if spec.tier == Tier::Perspective {
        let rot = rng.random_range(-MAX_WARP_DEGREES..=MAX_WARP_DEGREES).to_radians();
        let shear = rng.random_range(-MAX_WARP_DEGREES..=MAX_WARP_DEGREES).to_radians();
        let cx = x_start as f64 + text_w as f64 / 2.0;
        let cy = y_start as f64 + text_h as f64 / 2.0;
        mask = warp(&mask, height, width, (cx, cy), rot, shear.tan());
    }
    let text_box = bbox(&mask, width).unwrap_or((x_start, y_start, x_start, y_start));

    let mut image = GlyphImage::filled(height, width, BACKGROUND);
    for (p, &m) in image.pixels.iter_mut().zip(&mask) {
        if m {
            *p = FOREGROUND;
        }
    }

    let mut occluder_mask = None;
    match spec.tier {
        Tier::Clean | Tier::Perspective => {}
        Tier::Noisy => {
            let contrast = rng.random_range(0.5..=1.0);
            let noise = Normal::new(0.0, NOISE_SIGMA).expect("sigma is positive");
            for (p, &m) in image.pixels.iter_mut().zip(&mask) {
                let base = if m { FOREGROUND } else { BACKGROUND };
                let level = 128.0 + (f64::from(base) - 128.0) * contrast;
                let v = level + noise.sample(&mut rng);
                *p = v.round().clamp(0.0, 255.0) as u8;
            }
        }
        Tier::Occluded => {
            let occ = occluders(&mut rng, text_box, height, width);
            let level = rng.random_range(96..=160u8);
            for (p, &o) in image.pixels.iter_mut().zip(&occ) {
                if o {
                    *p = level;
                }
            }
            occluder_mask = Some(occ);
        }
    }

    Ok(Rendered {
        image,
        text_mask: mask,
        text_box,
        occluder_mask,
    })
}

fn bbox(mask: &[bool], width: usize) -> Option<BBox> {
    let mut out: Option<BBox> = None;
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        let (x, y) = (i % width, i / width);
        out = Some(match out {
            None => (x, y, x, y),
            Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
        });
    }
    out
}

/// Nearest-neighbour resampling of `mask` under rotation + horizontal shear
/// about `center`.
fn warp(
    mask: &[bool],
    height: usize,
    width: usize,
    center: (f64, f64),
    rot: f64,
    shear: f64,
) -> Vec<bool> {
    let (s, c) = rot.sin_cos();
    let mut out = vec![false; mask.len()];
    for y in 0..height {
        for x in 0..width {
            let dx = x as f64 - center.0;
            let dy = y as f64 - center.1;
            // Undo rotation, then undo shear.
            let rx = c * dx + s * dy;
            let ry = -s * dx + c * dy;
            let sx = rx - shear * ry + center.0;
            let sy = ry + center.1;
            let (ix, iy) = (sx.round(), sy.round());
            if ix >= 0.0 && iy >= 0.0 && (ix as usize) < width && (iy as usize) < height {
                out[y * width + x] = mask[iy as usize * width + ix as usize];
            }
        }
    }
    out
}

/// One or two opaque bars inside `text_box` covering at most
/// `MAX_OCCLUSION` of its area and at least one pixel.
fn occluders(rng: &mut impl RngExt, text_box: BBox, height: usize, width: usize) -> Vec<bool> {
    let (x0, y0, x1, y1) = text_box;
    let (bw, bh) = (x1 - x0 + 1, y1 - y0 + 1);
    let budget = ((bw * bh) as f64 * MAX_OCCLUSION).floor().max(1.0) as usize;
    let mut mask = vec![false; height * width];
    let mut bars = rng.random_range(1..=2usize);
    // Fall back to fewer bars when the box is too small to split the budget.
    while bars > 1 && budget / bars < bh.min(bw) {
        bars -= 1;
    }
    let per_bar = budget / bars;
    for _ in 0..bars {
        let vertical = rng.random_bool(0.5);
        let (span, room) = if vertical { (bh, bw) } else { (bw, bh) };
        let (span, room, vertical) = if per_bar / span == 0 {
            let other = if vertical { (bw, bh) } else { (bh, bw) };
            (other.0, other.1, !vertical)
        } else {
            (span, room, vertical)
        };
        let max_thick = (per_bar / span).max(1).min(room);
        let len = span.min(per_bar);
        let thick = rng.random_range(1..=max_thick);
        let offset = rng.random_range(0..=room - thick);
        for t in 0..thick {
            for l in 0..len {
                let (x, y) = if vertical {
                    (x0 + offset + t, y0 + l)
                } else {
                    (x0 + l, y0 + offset + t)
                };
                mask[y * width + x] = true;
            }
        }
    }
    mask
}
