//! Per-frame measurement-rate controllers and a stream simulator.
//!
//! Frame `t` is sensed at the rate chosen after frame `t − 1`; the signal the
//! frame produces only affects frame `t + 1`. Rates are row counts clamped to
//! `[k_min, m_max]`.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::GrayImage;
use crate::error::{Error, Result};
use crate::evaluation::{format_g, psnr_images, reconstruct_image};
use crate::nn::Network;
use crate::sensing::MeasurementMatrix;

#[derive(Clone, Debug, PartialEq)]
pub enum PolicyKind {
    /// `r(t) = round(r_start + (r_end − r_start)·t/(T−1))`, then held at `r_end`.
    Linear {
        r_start: usize,
        r_end: usize,
        total_frames: usize,
    },
    /// Normalized difference below `alpha` drops `delta_rows`; above `beta` adds them.
    FrameDiff {
        alpha: f64,
        beta: f64,
        delta_rows: usize,
    },
    /// Confidence below `gamma` adds `delta_rows`; at or above drops them.
    Confidence { gamma: f64, delta_rows: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptationPolicy {
    pub kind: PolicyKind,
    pub k_min: usize,
    pub m_max: usize,
}

impl AdaptationPolicy {
    pub fn new(kind: PolicyKind, k_min: usize, m_max: usize) -> Result<Self> {
        if k_min == 0 || k_min > m_max {
            return Err(Error::invalid(format!(
                "need 1 <= k_min <= m_max, got {k_min} and {m_max}"
            )));
        }
        match &kind {
            PolicyKind::Linear { total_frames, .. } if *total_frames == 0 => {
                return Err(Error::invalid("linear policy needs at least one frame"));
            }
            PolicyKind::FrameDiff {
                alpha,
                beta,
                delta_rows,
            } => {
                if !(alpha.is_finite() && beta.is_finite() && alpha < beta) {
                    return Err(Error::invalid(format!("need alpha < beta, got {alpha} and {beta}")));
                }
                if *delta_rows == 0 {
                    return Err(Error::invalid("delta_rows must be at least 1"));
                }
            }
            PolicyKind::Confidence { gamma, delta_rows } => {
                if !gamma.is_finite() {
                    return Err(Error::invalid("gamma must be finite"));
                }
                if *delta_rows == 0 {
                    return Err(Error::invalid("delta_rows must be at least 1"));
                }
            }
            _ => {}
        }
        Ok(Self { kind, k_min, m_max })
    }

    fn clamp(&self, r: i64) -> usize {
        r.clamp(self.k_min as i64, self.m_max as i64) as usize
    }

    fn linear_rate(&self, t: usize) -> usize {
        match self.kind {
            PolicyKind::Linear {
                r_start,
                r_end,
                total_frames,
            } => {
                if total_frames <= 1 {
                    return self.clamp(r_start as i64);
                }
                let t = t.min(total_frames - 1) as f64;
                let span = r_end as f64 - r_start as f64;
                let r = r_start as f64 + span * t / (total_frames - 1) as f64;
                self.clamp(r.round() as i64)
            }
            _ => unreachable!("only called for linear policies"),
        }
    }

    /// Rate for the first frame: `r_start` for the linear schedule, `m_max`
    /// for the feedback schemes.
    pub fn initial_rate(&self) -> usize {
        match self.kind {
            PolicyKind::Linear { .. } => self.linear_rate(0),
            _ => self.m_max,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptationState {
    /// Rows used for the frame at `frame_index`.
    pub current_r: usize,
    pub frame_index: usize,
    /// Frame compared against by the frame-difference scheme.
    pub last_frame: Option<GrayImage>,
}

impl AdaptationState {
    pub fn new(policy: &AdaptationPolicy) -> Self {
        Self {
            current_r: policy.initial_rate(),
            frame_index: 0,
            last_frame: None,
        }
    }
}

/// Advances the controller by one frame. `signal` is `None` for the linear
/// schedule, the normalized frame difference for `FrameDiff` (`None` holds
/// the rate, as on the first frame), and the confidence score for `Confidence`.
pub fn next_rate(
    policy: &AdaptationPolicy,
    state: &AdaptationState,
    signal: Option<f64>,
) -> Result<AdaptationState> {
    let r = state.current_r as i64;
    let next = match policy.kind {
        PolicyKind::Linear { .. } => {
            if signal.is_some() {
                return Err(Error::invalid("the linear schedule takes no signal"));
            }
            policy.linear_rate(state.frame_index + 1)
        }
        PolicyKind::FrameDiff {
            alpha,
            beta,
            delta_rows,
        } => match signal {
            None => policy.clamp(r),
            // A frame after an all-black one differs by +inf, which raises the rate.
            Some(d) if d.is_nan() || d < 0.0 => {
                return Err(Error::invalid(format!("frame difference {d} must be >= 0")));
            }
            Some(d) if d < alpha => policy.clamp(r - delta_rows as i64),
            Some(d) if d > beta => policy.clamp(r + delta_rows as i64),
            Some(_) => policy.clamp(r),
        },
        PolicyKind::Confidence { gamma, delta_rows } => match signal {
            Some(c) if (0.0..=1.0).contains(&c) => {
                if c < gamma {
                    policy.clamp(r + delta_rows as i64)
                } else {
                    policy.clamp(r - delta_rows as i64)
                }
            }
            other => {
                return Err(Error::invalid(format!("confidence {other:?} must be in [0, 1]")));
            }
        },
    };
    Ok(AdaptationState {
        current_r: next,
        frame_index: state.frame_index + 1,
        last_frame: state.last_frame.clone(),
    })
}

/// `‖a − b‖ / ‖b‖`.
pub fn normalized_difference(current: &GrayImage, previous: &GrayImage) -> Result<f64> {
    if current.pixels().len() != previous.pixels().len() {
        return Err(Error::dim("frames differ in size"));
    }
    let num: f64 = current
        .pixels()
        .iter()
        .zip(previous.pixels())
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum();
    let den: f64 = previous.pixels().iter().map(|&b| (b as f64).powi(2)).sum();
    if den == 0.0 {
        return Ok(if num == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok((num / den).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiffSource {
    /// What a deployed sensor can compute.
    Reconstructed,
    GroundTruth,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub frame: usize,
    pub r: usize,
    pub mr: f64,
    pub psnr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
    pub avg_mr: f64,
}

impl Trace {
    pub fn rates(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.r).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("frame,r,mr,psnr\n");
        for row in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                row.frame,
                row.r,
                format_g(row.mr),
                format_g(row.psnr)
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Senses, reconstructs and scores each frame, then updates the rate.
///
/// `confidence` must hold one score per frame for the confidence scheme and
/// is ignored otherwise.
pub fn simulate_stream(
    frames: &[GrayImage],
    policy: &AdaptationPolicy,
    net: &Network<f32>,
    phi: &MeasurementMatrix<f32>,
    diff_source: DiffSource,
    confidence: Option<&[f64]>,
) -> Result<Trace> {
    if frames.is_empty() {
        return Err(Error::invalid("no frames to simulate"));
    }
    if policy.m_max > phi.m_max() || policy.k_min < phi.k_min() {
        return Err(Error::invalid(format!(
            "policy bounds [{}, {}] exceed the matrix range [{}, {}]",
            policy.k_min,
            policy.m_max,
            phi.k_min(),
            phi.m_max()
        )));
    }
    let scores = match policy.kind {
        PolicyKind::Confidence { .. } => {
            let c = confidence.ok_or_else(|| Error::invalid("confidence scheme needs scores"))?;
            if c.len() != frames.len() {
                return Err(Error::invalid(format!(
                    "{} confidence scores for {} frames",
                    c.len(),
                    frames.len()
                )));
            }
            Some(c)
        }
        _ => None,
    };

    let mut state = AdaptationState::new(policy);
    let mut rows = Vec::with_capacity(frames.len());
    for (t, frame) in frames.iter().enumerate() {
        let r = state.current_r;
        let recon = reconstruct_image(net, phi, frame, r)?;
        rows.push(TraceRow {
            frame: t,
            r,
            mr: phi.measurement_rate(r),
            psnr: psnr_images(frame, &recon)?,
        });
        let current = match diff_source {
            DiffSource::Reconstructed => recon,
            DiffSource::GroundTruth => frame.clone(),
        };
        let signal = match policy.kind {
            PolicyKind::Linear { .. } => None,
            PolicyKind::FrameDiff { .. } => match &state.last_frame {
                Some(prev) => Some(normalized_difference(&current, prev)?),
                None => None,
            },
            PolicyKind::Confidence { .. } => Some(scores.expect("checked above")[t]),
        };
        state = next_rate(policy, &state, signal)?;
        state.last_frame = Some(current);
    }
    let avg_mr = rows.iter().map(|r| r.mr).sum::<f64>() / rows.len() as f64;
    Ok(Trace { rows, avg_mr })
}
