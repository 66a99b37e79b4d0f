//! Seeded synthetic block generators.
//!
//! `dct-lowpass` blocks are random combinations of the lowest `⌈b/4⌉ × ⌈b/4⌉`
//! orthonormal DCT-II basis images with amplitudes falling as `1/(1+u+v)`,
//! rescaled into a random sub-range of `[0, 1]`. `shapes` blocks carry one of
//! four labels: wide bar, tall bar, disc, ring.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::BlockDataset;
use crate::error::{Error, Result};

pub const SHAPE_CLASSES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthKind {
    DctLowpass,
    Shapes,
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dct-lowpass" => Ok(SynthKind::DctLowpass),
            "shapes" => Ok(SynthKind::Shapes),
            other => Err(Error::invalid(format!("unknown synthetic kind `{other}`"))),
        }
    }
}

impl SynthKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SynthKind::DctLowpass => "dct-lowpass",
            SynthKind::Shapes => "shapes",
        }
    }
}

/// Orthonormal DCT-II matrix, `basis[k·b + i] = α_k cos(π(2i+1)k / 2b)`.
pub fn dct_basis(b: usize) -> Vec<f64> {
    let mut c = vec![0.0; b * b];
    for k in 0..b {
        let alpha = if k == 0 {
            (1.0 / b as f64).sqrt()
        } else {
            (2.0 / b as f64).sqrt()
        };
        for i in 0..b {
            c[k * b + i] = alpha * (PI * (2 * i + 1) as f64 * k as f64 / (2 * b) as f64).cos();
        }
    }
    c
}

pub fn synth_dataset(kind: SynthKind, count: usize, b: usize, seed: u64) -> Result<BlockDataset> {
    if b < 4 {
        return Err(Error::invalid("synthetic blocks need side >= 4"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        SynthKind::DctLowpass => {
            let basis = dct_basis(b);
            let blocks = (0..count).map(|_| lowpass_block(b, &basis, &mut rng)).collect();
            BlockDataset::new(b, blocks, None)
        }
        SynthKind::Shapes => {
            let mut blocks = Vec::with_capacity(count);
            let mut labels = Vec::with_capacity(count);
            for _ in 0..count {
                let label = rng.random_range(0..SHAPE_CLASSES);
                blocks.push(shape_block(b, label, &mut rng));
                labels.push(label);
            }
            BlockDataset::new(b, blocks, Some(labels))
        }
    }
}

fn lowpass_block(b: usize, basis: &[f64], rng: &mut ChaCha8Rng) -> Vec<f32> {
    let band = b.div_ceil(4);
    // coefficients X (band × band), image = Cᵀ X C
    let mut coef = vec![0.0; band * band];
    for u in 0..band {
        for v in 0..band {
            if u + v > 0 {
                let z: f64 = rng.sample(StandardNormal);
                coef[u * band + v] = z / (1 + u + v) as f64;
            }
        }
    }
    let mut img = vec![0.0f64; b * b];
    for u in 0..band {
        for v in 0..band {
            let c = coef[u * band + v];
            if c == 0.0 {
                continue;
            }
            for y in 0..b {
                let cy = c * basis[u * b + y];
                for x in 0..b {
                    img[y * b + x] += cy * basis[v * b + x];
                }
            }
        }
    }
    let lo = img.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = img.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let floor = rng.random_range(0.0..0.3);
    let ceil = rng.random_range(0.7..1.0);
    let span = (hi - lo).max(1e-12);
    img.iter()
        .map(|&v| (floor + (ceil - floor) * (v - lo) / span) as f32)
        .collect()
}

fn shape_block(b: usize, label: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let bf = b as f64;
    let background = rng.random_range(0.0..0.3);
    let foreground = rng.random_range(0.65..1.0);
    let inside: Box<dyn Fn(f64, f64) -> bool> = match label {
        0 | 1 => {
            let long = rng.random_range(0.55 * bf..0.85 * bf);
            let short = rng.random_range(0.12 * bf..0.25 * bf);
            let cy = rng.random_range(short / 2.0..bf - short / 2.0);
            let cx = rng.random_range(long / 2.0..bf - long / 2.0);
            let (cy, cx, hh, hw) = if label == 0 {
                (cy, cx, short / 2.0, long / 2.0)
            } else {
                (cx, cy, long / 2.0, short / 2.0)
            };
            Box::new(move |y, x| (y - cy).abs() <= hh && (x - cx).abs() <= hw)
        }
        2 => {
            let rad = rng.random_range(0.18 * bf..0.32 * bf);
            let cy = rng.random_range(rad..bf - rad);
            let cx = rng.random_range(rad..bf - rad);
            Box::new(move |y, x| (y - cy).hypot(x - cx) <= rad)
        }
        _ => {
            let rad = rng.random_range(0.28 * bf..0.42 * bf);
            let width = 0.1 * bf;
            let cy = rng.random_range(rad..bf - rad);
            let cx = rng.random_range(rad..bf - rad);
            Box::new(move |y, x| ((y - cy).hypot(x - cx) - rad + width / 2.0).abs() <= width / 2.0)
        }
    };
    let mut px = Vec::with_capacity(b * b);
    for y in 0..b {
        for x in 0..b {
            let base = if inside(y as f64 + 0.5, x as f64 + 0.5) {
                foreground
            } else {
                background
            };
            let noise: f64 = rng.sample::<f64, _>(StandardNormal) * 0.03;
            px.push((base + noise).clamp(0.0, 1.0) as f32);
        }
    }
    px
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_and_deterministic() {
        assert!(synth_dataset(SynthKind::DctLowpass, 0, 16, 1).unwrap().is_empty());
        let a = synth_dataset(SynthKind::Shapes, 20, 16, 5).unwrap();
        let b = synth_dataset(SynthKind::Shapes, 20, 16, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.labels().unwrap().len(), 20);
        assert!(a.labels().unwrap().iter().all(|&l| l < SHAPE_CLASSES));
    }

    #[test]
    fn unknown_kind() {
        assert!("noise".parse::<SynthKind>().is_err());
        assert_eq!("shapes".parse::<SynthKind>().unwrap(), SynthKind::Shapes);
    }

    #[test]
    fn pixels_in_unit_range() {
        for kind in [SynthKind::DctLowpass, SynthKind::Shapes] {
            let d = synth_dataset(kind, 50, 16, 2).unwrap();
            assert!(d.blocks().iter().flatten().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn dct_basis_is_orthonormal() {
        let b = 8;
        let c = dct_basis(b);
        for i in 0..b {
            for j in 0..b {
                let d: f64 = (0..b).map(|k| c[i * b + k] * c[j * b + k]).sum();
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((d - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lowpass_energy_concentration() {
        let b = 16;
        let band = b / 4;
        // direct DCT-II sum, independent of `dct_basis`
        let coef = |k: usize, i: usize| {
            let scale = if k == 0 { (1.0 / b as f64).sqrt() } else { (2.0 / b as f64).sqrt() };
            scale * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2 * b) as f64).cos()
        };
        let d = synth_dataset(SynthKind::DctLowpass, 1000, b, 9).unwrap();
        for block in d.blocks() {
            let (mut low, mut total) = (0.0, 0.0);
            for u in 0..b {
                for v in 0..b {
                    let mut c = 0.0;
                    for y in 0..b {
                        for x in 0..b {
                            c += coef(u, y) * coef(v, x) * block[y * b + x] as f64;
                        }
                    }
                    total += c * c;
                    if u < band && v < band {
                        low += c * c;
                    }
                }
            }
            assert!(low / total >= 0.9, "{}", low / total);
        }
    }

    #[test]
    fn shapes_cover_every_class() {
        let d = synth_dataset(SynthKind::Shapes, 200, 16, 4).unwrap();
        let labels = d.labels().unwrap();
        for c in 0..SHAPE_CLASSES {
            assert!(labels.contains(&c));
        }
        assert!(labels.iter().all(|&l| l < SHAPE_CLASSES));
    }
}
