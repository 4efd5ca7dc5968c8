//! Procedural test sequences: a textured target moving over a smooth
//! background, with optional scale drift, distractors and illumination
//! change.

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::Sequence;
use crate::error::{Error, Result};
use crate::geometry::BBox;

const TEXTURE_SIDE: usize = 24;
const BACKGROUND_CELL: f64 = 12.0;

/// RGB texel grid sampled bilinearly over the unit square.
#[derive(Debug, Clone, PartialEq)]
pub struct Texture {
    texels: Vec<[f64; 3]>,
}

impl Texture {
    /// Base color, a few soft blobs and one stripe pattern, all from `seed`.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let color = |rng: &mut ChaCha8Rng| [0, 1, 2].map(|_| rng.random_range(20.0..235.0));
        let base = color(&mut rng);
        let blobs: Vec<([f64; 2], f64, [f64; 3])> = (0..rng.random_range(3..6))
            .map(|_| {
                (
                    [rng.random::<f64>(), rng.random::<f64>()],
                    rng.random_range(0.12..0.3),
                    color(&mut rng),
                )
            })
            .collect();
        let angle = rng.random_range(0.0..std::f64::consts::PI);
        let freq = rng.random_range(2.0..5.0);
        let stripe = color(&mut rng);
        let n = TEXTURE_SIDE;
        let mut texels = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let (u, v) = ((j as f64 + 0.5) / n as f64, (i as f64 + 0.5) / n as f64);
                let mut px = base;
                let s = ((u * angle.cos() + v * angle.sin()) * freq * std::f64::consts::TAU).sin();
                if s > 0.3 {
                    px = stripe;
                }
                for (c, r, col) in &blobs {
                    let d2 = (u - c[0]).powi(2) + (v - c[1]).powi(2);
                    let w = (-d2 / (r * r)).exp();
                    for k in 0..3 {
                        px[k] = px[k] * (1.0 - w) + col[k] * w;
                    }
                }
                texels.push(px);
            }
        }
        Self { texels }
    }

    /// Texel-wise blend: `similarity = 1` gives `self`, `0` gives `other`.
    pub fn blend(&self, other: &Texture, similarity: f64) -> Self {
        if similarity >= 1.0 {
            return self.clone();
        }
        Self {
            texels: self
                .texels
                .iter()
                .zip(&other.texels)
                .map(|(a, b)| [0, 1, 2].map(|k| a[k] * similarity + b[k] * (1.0 - similarity)))
                .collect(),
        }
    }

    pub fn sample(&self, u: f64, v: f64) -> [f64; 3] {
        let n = TEXTURE_SIDE;
        let fx = (u * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let fy = (v * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(n - 1), (y0 + 1).min(n - 1));
        let (ax, ay) = (fx - x0 as f64, fy - y0 as f64);
        let t = |y: usize, x: usize| self.texels[y * n + x];
        [0, 1, 2].map(|k| {
            let top = t(y0, x0)[k] * (1.0 - ax) + t(y0, x1)[k] * ax;
            let bot = t(y1, x0)[k] * (1.0 - ax) + t(y1, x1)[k] * ax;
            top * (1.0 - ay) + bot * ay
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub frame_width: u32,
    pub frame_height: u32,
    pub target_width: f64,
    pub target_height: f64,
    /// Initial target center; the frame center when `None`.
    pub start: Option<(f64, f64)>,
    pub texture_seed: u64,
    /// Pixels per frame.
    pub velocity: (f64, f64),
    /// Standard deviation of the per-frame velocity perturbation, pixels.
    pub motion_noise: f64,
    /// Per-frame change of the log target size.
    pub scale_drift: f64,
    pub distractors: usize,
    /// 1 makes distractors carry the target texture exactly.
    pub distractor_similarity: f64,
    /// Per-frame relative brightness change.
    pub illumination_drift: f64,
    pub length: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            frame_width: 96,
            frame_height: 96,
            target_width: 32.0,
            target_height: 28.0,
            start: None,
            texture_seed: 1,
            velocity: (0.0, 0.0),
            motion_noise: 0.0,
            scale_drift: 0.0,
            distractors: 0,
            distractor_similarity: 0.5,
            illumination_drift: 0.0,
            length: 120,
        }
    }
}

fn parse_pair(key: &str, v: &str) -> Result<(f64, f64)> {
    let bad = || {
        Error::Config(format!(
            "{key}: expected two comma-separated numbers, got '{v}'"
        ))
    };
    let (a, b) = v.split_once(',').ok_or_else(bad)?;
    Ok((
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
    ))
}

impl SyntheticSpec {
    /// `key = value` lines over the default spec. `start` and `velocity`
    /// take `x,y`; `start = none` centers the target.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut s = Self::default();
        for (k, v) in crate::eval::config::parse_pairs(text)? {
            let num = |v: &str| -> Result<f64> {
                v.parse()
                    .map_err(|_| Error::Config(format!("{k}: cannot parse '{v}'")))
            };
            let int = |v: &str| -> Result<u64> {
                v.parse()
                    .map_err(|_| Error::Config(format!("{k}: cannot parse '{v}'")))
            };
            match k.as_str() {
                "frame_width" => s.frame_width = int(&v)? as u32,
                "frame_height" => s.frame_height = int(&v)? as u32,
                "target_width" => s.target_width = num(&v)?,
                "target_height" => s.target_height = num(&v)?,
                "start" => {
                    s.start = if v == "none" {
                        None
                    } else {
                        Some(parse_pair(&k, &v)?)
                    }
                }
                "texture_seed" => s.texture_seed = int(&v)?,
                "velocity" => s.velocity = parse_pair(&k, &v)?,
                "motion_noise" => s.motion_noise = num(&v)?,
                "scale_drift" => s.scale_drift = num(&v)?,
                "distractors" => s.distractors = int(&v)? as usize,
                "distractor_similarity" => s.distractor_similarity = num(&v)?,
                "illumination_drift" => s.illumination_drift = num(&v)?,
                "length" => s.length = int(&v)? as usize,
                other => {
                    return Err(Error::Config(format!(
                        "unknown synthetic spec key '{other}'"
                    )))
                }
            }
        }
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let (fw, fh) = (self.frame_width as f64, self.frame_height as f64);
        if self.length == 0 || self.frame_width == 0 || self.frame_height == 0 {
            return Err(Error::Generation(
                "length and frame size must be positive".into(),
            ));
        }
        if !(self.target_width > 0.0 && self.target_height > 0.0) {
            return Err(Error::Generation("target size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.distractor_similarity) {
            return Err(Error::Generation(
                "distractor similarity must be in [0, 1]".into(),
            ));
        }
        let peak = (self.scale_drift.max(0.0) * (self.length - 1) as f64).exp();
        if self.target_width * peak > fw || self.target_height * peak > fh {
            return Err(Error::Generation(format!(
                "target grows to {:.1}x{:.1}, larger than the {}x{} frame",
                self.target_width * peak,
                self.target_height * peak,
                self.frame_width,
                self.frame_height
            )));
        }
        let b = self.initial_box();
        let frame = BBox::new(0.0, 0.0, fw, fh)?;
        if b.intersection_area(&frame) < 0.5 * b.area() {
            return Err(Error::Generation(
                "initial target is less than half inside the frame".into(),
            ));
        }
        Ok(())
    }

    fn initial_box(&self) -> BBox {
        let (cx, cy) = self.start.unwrap_or((
            self.frame_width as f64 / 2.0,
            self.frame_height as f64 / 2.0,
        ));
        BBox {
            x1: cx - self.target_width / 2.0,
            y1: cy - self.target_height / 2.0,
            x2: cx + self.target_width / 2.0,
            y2: cy + self.target_height / 2.0,
        }
    }
}

struct Mover {
    cx: f64,
    cy: f64,
    vx: f64,
    vy: f64,
}

impl Mover {
    /// Advances one frame, reflecting off the frame border so the whole
    /// `w x h` box stays inside.
    fn advance(&mut self, w: f64, h: f64, fw: f64, fh: f64, noise: (f64, f64)) {
        self.cx += self.vx + noise.0;
        self.cy += self.vy + noise.1;
        let reflect = |c: &mut f64, v: &mut f64, half: f64, limit: f64| {
            if *c - half < 0.0 {
                *c = half + (half - *c);
                *v = v.abs();
            }
            if *c + half > limit {
                *c = limit - half - (*c + half - limit);
                *v = -v.abs();
            }
            *c = c.clamp(half, limit - half);
        };
        reflect(&mut self.cx, &mut self.vx, w / 2.0, fw);
        reflect(&mut self.cy, &mut self.vy, h / 2.0, fh);
    }
}

fn background(fw: u32, fh: u32, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let gw = (fw as f64 / BACKGROUND_CELL).ceil() as usize + 2;
    let gh = (fh as f64 / BACKGROUND_CELL).ceil() as usize + 2;
    let grid: Vec<[f64; 3]> = (0..gw * gh)
        .map(|_| {
            let g = rng.random_range(60.0..190.0);
            [0, 1, 2].map(|_| g + rng.random_range(-25.0..25.0))
        })
        .collect();
    let mut out = Vec::with_capacity((fw * fh) as usize);
    for y in 0..fh {
        for x in 0..fw {
            let gx = x as f64 / BACKGROUND_CELL;
            let gy = y as f64 / BACKGROUND_CELL;
            let (x0, y0) = (gx.floor() as usize, gy.floor() as usize);
            let (ax, ay) = (gx - x0 as f64, gy - y0 as f64);
            let g = |yy: usize, xx: usize| grid[yy * gw + xx];
            out.push([0, 1, 2].map(|k| {
                let top = g(y0, x0)[k] * (1.0 - ax) + g(y0, x0 + 1)[k] * ax;
                let bot = g(y0 + 1, x0)[k] * (1.0 - ax) + g(y0 + 1, x0 + 1)[k] * ax;
                top * (1.0 - ay) + bot * ay
            }));
        }
    }
    out
}

/// Paints `tex` into `canvas` over `b`, weighting edge pixels by their
/// covered area.
fn paint(canvas: &mut [[f64; 3]], fw: u32, fh: u32, b: &BBox, tex: &Texture) {
    let x0 = b.x1.floor().max(0.0) as u32;
    let y0 = b.y1.floor().max(0.0) as u32;
    let x1 = (b.x2.ceil() as u32).min(fw);
    let y1 = (b.y2.ceil() as u32).min(fh);
    for y in y0..y1 {
        let cov_y = (b.y2.min(y as f64 + 1.0) - b.y1.max(y as f64)).max(0.0);
        let v = (y as f64 + 0.5 - b.y1) / b.height();
        for x in x0..x1 {
            let cov_x = (b.x2.min(x as f64 + 1.0) - b.x1.max(x as f64)).max(0.0);
            let a = cov_x * cov_y;
            if a <= 0.0 {
                continue;
            }
            let u = (x as f64 + 0.5 - b.x1) / b.width();
            let t = tex.sample(u, v);
            let px = &mut canvas[(y * fw + x) as usize];
            for k in 0..3 {
                px[k] = px[k] * (1.0 - a) + t[k] * a;
            }
        }
    }
}

/// Renders the sequence described by `spec`; `seed` drives the
/// background, motion noise and distractors.
pub fn generate_sequence(spec: &SyntheticSpec, seed: u64) -> Result<Sequence> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (fw, fh) = (spec.frame_width, spec.frame_height);
    let (fwf, fhf) = (fw as f64, fh as f64);
    let bg = background(fw, fh, &mut rng);
    let texture = Texture::random(spec.texture_seed);
    let init = spec.initial_box();
    let (icx, icy) = init.center();
    let mut target = Mover {
        cx: icx,
        cy: icy,
        vx: spec.velocity.0,
        vy: spec.velocity.1,
    };
    let speed = spec.velocity.0.hypot(spec.velocity.1).max(1.0);
    let mut distractors: Vec<(Mover, Texture)> = (0..spec.distractors)
        .map(|_| {
            let other = Texture::random(rng.random());
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let m = Mover {
                cx: rng.random_range(spec.target_width / 2.0..fwf - spec.target_width / 2.0),
                cy: rng.random_range(spec.target_height / 2.0..fhf - spec.target_height / 2.0),
                vx: speed * angle.cos(),
                vy: speed * angle.sin(),
            };
            (m, texture.blend(&other, spec.distractor_similarity))
        })
        .collect();
    let mut frames = Vec::with_capacity(spec.length);
    let mut groundtruth = Vec::with_capacity(spec.length);
    for t in 0..spec.length {
        let s = (spec.scale_drift * t as f64).exp();
        let (w, h) = (spec.target_width * s, spec.target_height * s);
        if t > 0 {
            let mut noise = || -> f64 {
                let z: f64 = StandardNormal.sample(&mut rng);
                spec.motion_noise * z
            };
            let n = (noise(), noise());
            target.advance(w, h, fwf, fhf, n);
            for (d, _) in &mut distractors {
                d.advance(w, h, fwf, fhf, (0.0, 0.0));
            }
        }
        let gt = BBox::from_center(target.cx, target.cy, w, h)?;
        let mut canvas = bg.clone();
        for (d, tex) in &distractors {
            paint(
                &mut canvas,
                fw,
                fh,
                &BBox::from_center(d.cx, d.cy, w, h)?,
                tex,
            );
        }
        paint(&mut canvas, fw, fh, &gt, &texture);
        let gain = (1.0 + spec.illumination_drift * t as f64).max(0.0);
        let mut img = RgbImage::new(fw, fh);
        for (px, c) in img.pixels_mut().zip(&canvas) {
            *px = Rgb(c.map(|v| (v * gain).round().clamp(0.0, 255.0) as u8));
        }
        frames.push(img);
        groundtruth.push(gt);
    }
    Sequence::new(format!("synth{seed}"), frames, groundtruth)
}

/// Difficulty tier of the fixed evaluation suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tier {
    Static,
    Linear,
    ScaleDrift,
    Distractors,
}

impl Tier {
    pub const ALL: [Tier; 4] = [
        Tier::Static,
        Tier::Linear,
        Tier::ScaleDrift,
        Tier::Distractors,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Tier::Static => "static",
            Tier::Linear => "linear",
            Tier::ScaleDrift => "scale",
            Tier::Distractors => "distractors",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    pub name: String,
    pub tier: Tier,
    pub spec: SyntheticSpec,
    pub seed: u64,
}

pub const SEQUENCES_PER_TIER: usize = 3;

/// The fixed 12-sequence evaluation suite (4 tiers x 3 sequences, 120
/// frames each).
pub fn suite() -> Vec<SuiteEntry> {
    let mut out = Vec::new();
    for (ti, tier) in Tier::ALL.into_iter().enumerate() {
        for i in 0..SEQUENCES_PER_TIER {
            let id = (ti * SEQUENCES_PER_TIER + i) as u64;
            let sign = |k: usize| if (i + k).is_multiple_of(2) { 1.0 } else { -1.0 };
            let base = SyntheticSpec {
                texture_seed: 1000 + id,
                ..SyntheticSpec::default()
            };
            let spec = match tier {
                Tier::Static => SyntheticSpec {
                    motion_noise: 0.3,
                    ..base
                },
                Tier::Linear => SyntheticSpec {
                    velocity: (
                        sign(0) * (0.8 + 0.3 * i as f64),
                        sign(1) * (0.5 + 0.2 * i as f64),
                    ),
                    ..base
                },
                Tier::ScaleDrift => SyntheticSpec {
                    target_width: if i == 1 { 44.0 } else { 26.0 },
                    target_height: if i == 1 { 40.0 } else { 24.0 },
                    velocity: (sign(0) * 0.4, sign(1) * 0.3),
                    scale_drift: if i == 1 { -0.004 } else { 0.0045 },
                    ..base
                },
                Tier::Distractors => SyntheticSpec {
                    velocity: (sign(0) * 0.7, sign(1) * 0.5),
                    distractors: 2,
                    distractor_similarity: 0.4,
                    ..base
                },
            };
            out.push(SuiteEntry {
                name: format!("{}-{}", tier.name(), i),
                tier,
                spec,
                seed: 7000 + id,
            });
        }
    }
    out
}

/// Training domains: same target shape, different texture per domain.
pub fn toy_domains(count: usize, length: usize, seed: u64) -> Result<Vec<Sequence>> {
    (0..count)
        .map(|d| {
            let spec = SyntheticSpec {
                texture_seed: seed.wrapping_mul(31).wrapping_add(d as u64 + 1),
                velocity: (0.9 * if d % 2 == 0 { 1.0 } else { -1.0 }, 0.6),
                motion_noise: 0.3,
                length,
                ..SyntheticSpec::default()
            };
            let mut s = generate_sequence(&spec, seed.wrapping_add(100 + d as u64))?;
            s.name = format!("domain{d:03}");
            Ok(s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_motion_is_constant() {
        let spec = SyntheticSpec {
            length: 5,
            ..SyntheticSpec::default()
        };
        let s = generate_sequence(&spec, 3).unwrap();
        assert!(s.groundtruth.iter().all(|b| *b == s.groundtruth[0]));
        assert_eq!(s.groundtruth[0].center(), (48.0, 48.0));
    }

    #[test]
    fn deterministic_in_seed() {
        let spec = SyntheticSpec {
            length: 4,
            velocity: (1.0, 0.5),
            motion_noise: 0.5,
            distractors: 1,
            ..SyntheticSpec::default()
        };
        assert_eq!(
            generate_sequence(&spec, 9).unwrap(),
            generate_sequence(&spec, 9).unwrap()
        );
        assert_ne!(
            generate_sequence(&spec, 9).unwrap(),
            generate_sequence(&spec, 10).unwrap()
        );
    }

    #[test]
    fn stays_inside_and_rejects_oversize() {
        let spec = SyntheticSpec {
            velocity: (5.0, -3.0),
            motion_noise: 2.0,
            length: 60,
            ..SyntheticSpec::default()
        };
        let s = generate_sequence(&spec, 1).unwrap();
        for b in &s.groundtruth {
            assert!(b.x1 >= -1e-9 && b.y1 >= -1e-9 && b.x2 <= 96.0 + 1e-9 && b.y2 <= 96.0 + 1e-9);
        }
        let big = SyntheticSpec {
            scale_drift: 0.05,
            ..SyntheticSpec::default()
        };
        assert!(matches!(
            generate_sequence(&big, 1),
            Err(Error::Generation(_))
        ));
    }

    #[test]
    fn full_similarity_copies_texture() {
        let a = Texture::random(1);
        assert_eq!(a.blend(&Texture::random(2), 1.0), a);
        assert_ne!(a.blend(&Texture::random(2), 0.5), a);
    }

    #[test]
    fn spec_from_text() {
        let s =
            SyntheticSpec::from_text("velocity = 1, -0.5\nlength = 10\nstart = 40,50\n").unwrap();
        assert_eq!(
            (s.velocity, s.length, s.start),
            ((1.0, -0.5), 10, Some((40.0, 50.0)))
        );
        assert!(SyntheticSpec::from_text("velocity = 1").is_err());
        assert!(SyntheticSpec::from_text("target_width = 500").is_err());
    }
}
