//! Voicing Decision Error and F0 Frame Error between pitch tracks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio_io::Waveform;
use crate::dsp::{estimate_f0_with, DspError, F0Track, FrameGrid, PitchSettings};
use crate::real::Real;

/// Relative pitch deviation above which a voiced frame counts as wrong.
pub const GROSS_PITCH_ERROR: f64 = 0.2;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no frames to compare")]
    ZeroFrames,
    #[error("reference frame {0} is marked voiced with f0 = 0")]
    Integrity(usize),
    #[error(transparent)]
    Dsp(#[from] DspError),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub vde: f64,
    pub ffe: f64,
    pub n_frames: usize,
}

fn common_len<T: Real>(r: &F0Track<T>, h: &F0Track<T>) -> Result<usize> {
    if r.len() != h.len() {
        log::warn!("track lengths differ ({} vs {}), comparing the first {}", r.len(), h.len(), r.len().min(h.len()));
    }
    match r.len().min(h.len()) {
        0 => Err(MetricsError::ZeroFrames),
        n => Ok(n),
    }
}

/// Fraction of frames whose voicing decisions differ.
pub fn vde<T: Real>(reference: &F0Track<T>, hypothesis: &F0Track<T>) -> Result<f64> {
    let n = common_len(reference, hypothesis)?;
    let errs = (0..n)
        .filter(|&i| reference.voiced[i] != hypothesis.voiced[i])
        .count();
    Ok(errs as f64 / n as f64)
}

/// Fraction of frames with a voicing error, or with both voiced and a pitch
/// deviation strictly above 20% of the reference.
pub fn ffe<T: Real>(reference: &F0Track<T>, hypothesis: &F0Track<T>) -> Result<f64> {
    let n = common_len(reference, hypothesis)?;
    let mut errs = 0;
    for i in 0..n {
        let (vr, vh) = (reference.voiced[i], hypothesis.voiced[i]);
        let fr = reference.f0_hz[i].to_f64_lossy();
        if vr && fr <= 0.0 {
            return Err(MetricsError::Integrity(i));
        }
        if vr != vh {
            errs += 1;
        } else if vr {
            let fh = hypothesis.f0_hz[i].to_f64_lossy();
            if (fh - fr).abs() / fr > GROSS_PITCH_ERROR {
                errs += 1;
            }
        }
    }
    Ok(errs as f64 / n as f64)
}

pub fn compare<T: Real>(reference: &F0Track<T>, hypothesis: &F0Track<T>) -> Result<MetricReport> {
    Ok(MetricReport {
        vde: vde(reference, hypothesis)?,
        ffe: ffe(reference, hypothesis)?,
        n_frames: common_len(reference, hypothesis)?,
    })
}

/// Tracks both signals with the same estimator, then compares them.
pub fn compare_waveforms<T: Real>(
    reference: &Waveform<T>,
    hypothesis: &Waveform<T>,
    grid: &FrameGrid,
    pitch: PitchSettings,
) -> Result<MetricReport> {
    let r = estimate_f0_with(reference, grid, pitch)?;
    let h = estimate_f0_with(hypothesis, grid, pitch)?;
    compare(&r, &h)
}

/// Frame-weighted mean over files.
pub fn aggregate(rows: &[(String, MetricReport)]) -> MetricReport {
    let n: usize = rows.iter().map(|(_, r)| r.n_frames).sum();
    let weighted = |f: fn(&MetricReport) -> f64| {
        if n == 0 {
            0.0
        } else {
            rows.iter().map(|(_, r)| f(r) * r.n_frames as f64).sum::<f64>() / n as f64
        }
    };
    MetricReport {
        vde: weighted(|r| r.vde),
        ffe: weighted(|r| r.ffe),
        n_frames: n,
    }
}

/// `file\tVDE\tFFE\tframes` lines followed by an `ALL` summary row.
pub fn format_report(rows: &[(String, MetricReport)]) -> String {
    let mut out = String::from("file\tVDE\tFFE\tframes\n");
    for (name, r) in rows {
        out.push_str(&format!("{name}\t{:.6}\t{:.6}\t{}\n", r.vde, r.ffe, r.n_frames));
    }
    let all = aggregate(rows);
    out.push_str(&format!("ALL\t{:.6}\t{:.6}\t{}\n", all.vde, all.ffe, all.n_frames));
    out
}
