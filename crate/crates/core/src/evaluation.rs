//! Metrics, block-wise image reconstruction, and measurement-rate sweeps.
//!
//! Pixels are handled in `[0, 1]` internally; PSNR maps them back to
//! `[0, 255]`, clamping estimates, and uses a peak of 255. Dataset PSNR is the
//! mean of per-item values.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::data::{assemble_image, extract_blocks, save_pgm, BlockDataset, GrayImage};
use crate::error::{Error, Result};
use crate::models::Head;
use crate::nn::Network;
use crate::sensing::MeasurementMatrix;
use crate::tensor::Tensor;

/// Environment variable capping the sweep worker count.
pub const THREADS_ENV: &str = "RACS_THREADS";

const CHUNK: usize = 256;

/// `10·log10(255² / MSE)` for images already on the 0–255 scale. Returns
/// `+∞` when the images are identical.
pub fn psnr(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    if reference.len() != estimate.len() || reference.is_empty() {
        return Err(Error::dim(format!(
            "PSNR of {} vs {} pixels",
            reference.len(),
            estimate.len()
        )));
    }
    let mse = reference
        .iter()
        .zip(estimate)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / reference.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

/// PSNR of `[0, 1]` pixels; both sides are scaled to 0–255 and clamped.
pub fn psnr_unit(reference: &[f32], estimate: &[f32]) -> Result<f64> {
    let scale = |v: &[f32]| -> Vec<f64> {
        v.iter()
            .map(|&p| (p as f64 * 255.0).clamp(0.0, 255.0))
            .collect()
    };
    psnr(&scale(reference), &scale(estimate))
}

pub fn psnr_images(reference: &GrayImage, estimate: &GrayImage) -> Result<f64> {
    if (reference.height(), reference.width()) != (estimate.height(), estimate.width()) {
        return Err(Error::dim(format!(
            "images are {}x{} and {}x{}",
            reference.height(),
            reference.width(),
            estimate.height(),
            estimate.width()
        )));
    }
    psnr_unit(reference.pixels(), estimate.pixels())
}

fn run_chunked(
    net: &Network<f32>,
    phi: &MeasurementMatrix<f32>,
    blocks: &BlockDataset,
    r: usize,
) -> Result<Vec<Vec<f32>>> {
    let prefix = phi.prefix_frozen(r)?;
    let idx: Vec<usize> = (0..blocks.len()).collect();
    let mut out = Vec::with_capacity(blocks.len());
    for chunk in idx.chunks(CHUNK) {
        let (y, _) = net.forward(Some(&prefix), &blocks.batch(chunk))?;
        let per = y.len() / chunk.len();
        out.extend(y.data().chunks(per).map(<[f32]>::to_vec));
    }
    Ok(out)
}

/// Reflect-pads, reconstructs every `b × b` block at prefix `r`, reassembles
/// and crops back to the input size.
pub fn reconstruct_image(
    net: &Network<f32>,
    phi: &MeasurementMatrix<f32>,
    image: &GrayImage,
    r: usize,
) -> Result<GrayImage> {
    let b = (phi.n() as f64).sqrt().round() as usize;
    if b * b != phi.n() {
        return Err(Error::dim(format!("n={} is not a square block", phi.n())));
    }
    let (blocks, layout) = extract_blocks(image, b)?;
    let recon = run_chunked(net, phi, &blocks, r)?;
    if recon.first().is_some_and(|v| v.len() != phi.n()) {
        return Err(Error::dim("network does not produce a block-sized output"));
    }
    assemble_image(&recon, &layout)
}

/// Fraction of rows whose arg-max logit equals the label.
pub fn accuracy(logits: &Tensor<f32>, labels: &[usize]) -> Result<f64> {
    let per_item = correct_flags(logits, labels)?;
    Ok(per_item.iter().sum::<f64>() / per_item.len() as f64)
}

fn correct_flags(logits: &Tensor<f32>, labels: &[usize]) -> Result<Vec<f64>> {
    let batch = logits.shape().first().copied().unwrap_or(0);
    if batch == 0 || batch != labels.len() {
        return Err(Error::dim(format!(
            "{} labels for logits {:?}",
            labels.len(),
            logits.shape()
        )));
    }
    let classes = logits.len() / batch;
    Ok(logits
        .data()
        .chunks(classes)
        .zip(labels)
        .map(|(row, &label)| {
            let best = row
                .iter()
                .enumerate()
                .fold(0, |best, (i, &v)| if v > row[best] { i } else { best });
            if best == label {
                1.0
            } else {
                0.0
            }
        })
        .collect())
}

/// Classification accuracy over a labelled block set at prefix `r`.
pub fn classify_accuracy(
    net: &Network<f32>,
    phi: &MeasurementMatrix<f32>,
    dataset: &BlockDataset,
    r: usize,
) -> Result<f64> {
    let items = item_metrics(Head::Classification, net, phi, dataset, r)?;
    Ok(items.iter().sum::<f64>() / items.len() as f64)
}

/// Mean per-block PSNR at prefix `r`.
pub fn mean_block_psnr(
    net: &Network<f32>,
    phi: &MeasurementMatrix<f32>,
    dataset: &BlockDataset,
    r: usize,
) -> Result<f64> {
    let items = item_metrics(Head::Reconstruction, net, phi, dataset, r)?;
    Ok(items.iter().sum::<f64>() / items.len() as f64)
}

/// Per-image PSNR of full images reconstructed at prefix `r`.
pub fn image_psnrs(
    net: &Network<f32>,
    phi: &MeasurementMatrix<f32>,
    images: &[GrayImage],
    r: usize,
) -> Result<Vec<f64>> {
    if images.is_empty() {
        return Err(Error::invalid("no images to evaluate"));
    }
    images
        .iter()
        .map(|img| psnr_images(img, &reconstruct_image(net, phi, img, r)?))
        .collect()
}

fn item_metrics(
    head: Head,
    net: &Network<f32>,
    phi: &MeasurementMatrix<f32>,
    dataset: &BlockDataset,
    r: usize,
) -> Result<Vec<f64>> {
    if dataset.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty set"));
    }
    let out = run_chunked(net, phi, dataset, r)?;
    match head {
        Head::Reconstruction => dataset
            .blocks()
            .iter()
            .zip(&out)
            .map(|(x, y)| psnr_unit(x, y))
            .collect(),
        Head::Classification => {
            let labels = dataset
                .labels()
                .ok_or_else(|| Error::invalid("accuracy needs a labelled set"))?;
            let classes = out[0].len();
            let flat: Vec<f32> = out.into_iter().flatten().collect();
            correct_flags(&Tensor::new(vec![labels.len(), classes], flat)?, labels)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    /// Mean PSNR in dB.
    Psnr,
    /// Fraction correct.
    Accuracy,
}

impl Metric {
    pub fn for_head(head: Head) -> Self {
        match head {
            Head::Reconstruction => Metric::Psnr,
            Head::Classification => Metric::Accuracy,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRecord {
    pub r: usize,
    pub mr: f64,
    pub mean: f64,
    pub per_item: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub model: String,
    pub dataset: String,
    pub metric: Metric,
    /// Sorted by strictly increasing `r`.
    pub records: Vec<SweepRecord>,
}

impl SweepReport {
    pub fn record(&self, r: usize) -> Option<&SweepRecord> {
        self.records.iter().find(|rec| rec.r == r)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("r,mr,mean_metric,n_items\n");
        for rec in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                rec.r,
                format_g(rec.mr),
                format_g(rec.mean),
                rec.per_item.len()
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Worker pool honouring [`THREADS_ENV`]; unset or `0` means the rayon default.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::invalid(format!("{THREADS_ENV}={v} is not a count")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))
}

/// Mean metric of `dataset` at each prefix in `r_list` (sorted, duplicates
/// removed). Prefixes are evaluated in parallel; the result does not depend
/// on the worker count.
pub fn sweep_rates(
    head: Head,
    net: &Network<f32>,
    phi: &MeasurementMatrix<f32>,
    dataset: &BlockDataset,
    r_list: &[usize],
) -> Result<SweepReport> {
    if dataset.is_empty() {
        return Err(Error::invalid("cannot sweep an empty set"));
    }
    let mut rs = r_list.to_vec();
    rs.sort_unstable();
    rs.dedup();
    if rs.is_empty() {
        return Err(Error::invalid("no prefix lengths to sweep"));
    }
    let pool = thread_pool()?;
    let records = pool.install(|| {
        rs.par_iter()
            .map(|&r| {
                let per_item = item_metrics(head, net, phi, dataset, r)?;
                Ok(SweepRecord {
                    r,
                    mr: phi.measurement_rate(r),
                    mean: per_item.iter().sum::<f64>() / per_item.len() as f64,
                    per_item,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(SweepReport {
        model: String::new(),
        dataset: String::new(),
        metric: Metric::for_head(head),
        records,
    })
}

/// Like C's `%g` with six significant digits.
pub fn format_g(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf" } else { "-inf" }.into();
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Writes each row of `Φ` as a `b × b` PGM (`phi_row_0001.pgm`, …) mapped
/// affinely from the row's range to 0–255, plus `phi.f32` (raw little-endian
/// values, row-major) and `phi_q9.txt` (signed 9-bit export with its scale).
pub fn export_phi_images(phi: &MeasurementMatrix<f32>, dir: &Path) -> Result<Vec<PathBuf>> {
    let n = phi.n();
    let b = (n as f64).sqrt().round() as usize;
    if b * b != n {
        return Err(Error::dim(format!("n={n} is not a square block")));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::with_capacity(phi.m_max() + 2);
    for i in 0..phi.m_max() {
        let row = phi.row(i);
        let lo = row.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let span = hi - lo;
        let pixels = row
            .iter()
            .map(|&v| if span > 0.0 { (v - lo) / span } else { 0.0 })
            .collect();
        let path = dir.join(format!("phi_row_{:04}.pgm", i + 1));
        save_pgm(&GrayImage::from_clamped(b, b, pixels)?, &path)?;
        written.push(path);
    }

    let raw: Vec<u8> = phi.rows().iter().flat_map(|v| v.to_le_bytes()).collect();
    let path = dir.join("phi.f32");
    std::fs::write(&path, raw).map_err(|e| Error::io(&path, e))?;
    written.push(path);

    let q = phi.quantize_export(phi.m_max())?;
    let mut text = format!("# rows {} cols {} scale {:e}\n", q.rows, q.cols, q.scale);
    for row in q.values.chunks(q.cols) {
        let line: Vec<String> = row.iter().map(i16::to_string).collect();
        text.push_str(&line.join(" "));
        text.push('\n');
    }
    let path = dir.join("phi_q9.txt");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::data::dct_basis;
    use crate::models::{ClassifierSpec, ModelSpec, ReconNetSpec};

    #[test]
    fn uniform_error_of_sixteen_levels() {
        let a = vec![100.0; 64];
        let b = vec![116.0; 64];
        let expected = 10.0 * (65025.0f64 / 256.0).log10();
        assert!((psnr(&a, &b).unwrap() - expected).abs() < 1e-9);
        assert!((psnr(&a, &b).unwrap() - 24.05).abs() < 0.005);
    }

    #[test]
    fn psnr_identity_and_symmetry() {
        let a: Vec<f64> = (0..50).map(|i| (i * 5) as f64).collect();
        let b: Vec<f64> = a.iter().map(|v| 255.0 - v).collect();
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        assert!(psnr(&a, &b[..10]).is_err());
    }

    #[test]
    fn unit_psnr_clamps_estimates() {
        let reference = [1.0f32; 4];
        assert_eq!(psnr_unit(&reference, &[1.7; 4]).unwrap(), f64::INFINITY);
    }

    #[test]
    fn g_format() {
        assert_eq!(format_g(0.25), "0.25");
        assert_eq!(format_g(24.0514), "24.0514");
        assert_eq!(format_g(24.051499), "24.0515");
        assert_eq!(format_g(1.0 / 3.0), "0.333333");
        assert_eq!(format_g(1234567.0), "1.23457e+06");
        assert_eq!(format_g(0.0000123), "1.23e-05");
        assert_eq!(format_g(100.0), "100");
        assert_eq!(format_g(f64::INFINITY), "inf");
    }

    fn dct_phi(b: usize) -> MeasurementMatrix<f32> {
        let n = b * b;
        let c = dct_basis(b);
        // separable 2-D basis, rows ordered by (u, v)
        let mut rows = Vec::with_capacity(n * n);
        for u in 0..b {
            for v in 0..b {
                for y in 0..b {
                    for x in 0..b {
                        rows.push((c[u * b + y] * c[v * b + x]) as f32);
                    }
                }
            }
        }
        MeasurementMatrix::new(n, n, 1, rows).unwrap()
    }

    fn identity_model(b: usize) -> Network<f32> {
        let spec = ModelSpec::ReconNet(ReconNetSpec {
            units: 0,
            ..ReconNetSpec::new(b)
        });
        spec.build(&mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    fn random_image(h: usize, w: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::new(h, w, (0..h * w).map(|_| rng.random::<f32>()).collect()).unwrap()
    }

    #[test]
    fn identity_model_reconstructs_exactly() {
        let b = 4;
        let img = random_image(10, 7, 1);
        let out = reconstruct_image(&identity_model(b), &dct_phi(b), &img, 16).unwrap();
        assert_eq!((out.height(), out.width()), (10, 7));
        for (a, e) in img.pixels().iter().zip(out.pixels()) {
            assert!((a - e).abs() < 1e-4);
        }
    }

    #[test]
    fn block_counts_for_full_sizes() {
        for (side, count) in [(256, 64), (512, 256)] {
            let img = GrayImage::new(side, side, vec![0.5; side * side]).unwrap();
            let (blocks, layout) = extract_blocks(&img, 33).unwrap();
            assert_eq!(blocks.len(), count);
            assert_eq!(layout.padded_height(), 33 * side.div_ceil(33));
        }
    }

    #[test]
    fn sweep_matches_standalone_and_is_sorted() {
        let b = 4;
        let net = identity_model(b);
        let phi = dct_phi(b);
        let blocks: Vec<Vec<f32>> = (0..20)
            .map(|i| random_image(4, 4, i).pixels().to_vec())
            .collect();
        let data = BlockDataset::new(b, blocks, None).unwrap();
        let rep = sweep_rates(Head::Reconstruction, &net, &phi, &data, &[8, 2, 4, 8]).unwrap();
        let rs: Vec<usize> = rep.records.iter().map(|r| r.r).collect();
        assert_eq!(rs, vec![2, 4, 8]);
        let alone = mean_block_psnr(&net, &phi, &data, 4).unwrap();
        assert_eq!(rep.record(4).unwrap().mean, alone);
        assert_eq!(rep.record(4).unwrap().per_item.len(), 20);
        assert!(rep.records.windows(2).all(|w| w[0].mean <= w[1].mean + 1e-9));
        let csv = rep.to_csv();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("r,mr,mean_metric,n_items\n2,0.125,"));
        assert!(!csv.contains('\r'));
        assert!(sweep_rates(Head::Reconstruction, &net, &phi, &data.select(&[]), &[2]).is_err());
    }

    #[test]
    fn perfect_logits_score_one() {
        let labels = [2usize, 0, 1];
        let mut logits = vec![0.0f32; 9];
        for (i, &l) in labels.iter().enumerate() {
            logits[i * 3 + l] = 5.0;
        }
        let t = Tensor::new(vec![3, 3], logits).unwrap();
        assert_eq!(accuracy(&t, &labels).unwrap(), 1.0);
    }

    #[test]
    fn untrained_classifier_is_at_chance() {
        let b = 8;
        let count = 2000;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let blocks: Vec<Vec<f32>> = (0..count)
            .map(|_| (0..b * b).map(|_| rng.random::<f32>()).collect())
            .collect();
        let labels: Vec<usize> = (0..count).map(|_| rng.random_range(0..10)).collect();
        let data = BlockDataset::new(b, blocks, Some(labels)).unwrap();
        let spec = ModelSpec::Classifier(ClassifierSpec::new(b, 10));
        let net: Network<f32> = spec.build(&mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let phi = MeasurementMatrix::<f32>::gaussian_init(b * b, 16, 1, 6).unwrap();
        let acc = classify_accuracy(&net, &phi, &data, 16).unwrap();
        let sigma = (0.1f64 * 0.9 / count as f64).sqrt();
        assert!((acc - 0.1).abs() < 3.0 * sigma, "accuracy {acc}");
    }

    #[test]
    fn phi_export_is_deterministic() {
        let phi = MeasurementMatrix::<f32>::gaussian_init(16, 5, 1, 9).unwrap();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let a = export_phi_images(&phi, d1.path()).unwrap();
        let b = export_phi_images(&phi, d2.path()).unwrap();
        let pgms = a.iter().filter(|p| p.extension().is_some_and(|e| e == "pgm")).count();
        assert_eq!(pgms, 5);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
        let raw = std::fs::read(d1.path().join("phi.f32")).unwrap();
        assert_eq!(raw.len(), 5 * 16 * 4);
    }
}
