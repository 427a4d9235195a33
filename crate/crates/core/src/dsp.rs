//! Waveform-to-feature front end: STFT, log mel-filterbank energies, MFCCs
//! with deltas, per-utterance mean/variance normalization, and fixed-length
//! segmentation.
//!
//! All operations here are pure functions; running them per utterance in
//! parallel is safe.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::numerics::tensor::Tensor;

/// Energy floor applied before taking logs.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, thiserror::Error)]
pub enum DspError {
    #[error("waveform of {len} samples is shorter than one window ({win_len})")]
    TooShort { len: usize, win_len: usize },
    #[error("{n_mels} mel filters exceed the {bins} spectrogram bins")]
    TooManyMels { n_mels: usize, bins: usize },
    #[error("normalization needs at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("utterance of {frames} frames is shorter than one segment ({len})")]
    NoSegments { frames: usize, len: usize },
    #[error("bad WAV file: {0}")]
    Wav(String),
}

/// Mono waveform with samples in [−1, 1].
#[derive(Clone, Debug)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

/// One-sided power spectrogram plus the analysis configuration that made it.
#[derive(Clone, Debug)]
pub struct Spectrogram {
    /// T × (win_len/2 + 1) magnitude-squared values
    pub power: Tensor,
    pub sample_rate: u32,
    pub win_len: usize,
    pub hop: usize,
}

/// What a feature matrix holds; downstream trainers only care about the
/// width, but the tag keeps files and manifests honest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Fbank,
    Mfcc,
    Z1,
    Z2,
    Ubnf,
}

impl FeatureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Fbank => "fbank",
            FeatureKind::Mfcc => "mfcc",
            FeatureKind::Z1 => "z1",
            FeatureKind::Z2 => "z2",
            FeatureKind::Ubnf => "ubnf",
        }
    }

    pub fn parse(s: &str) -> Option<FeatureKind> {
        match s {
            "fbank" => Some(FeatureKind::Fbank),
            "mfcc" => Some(FeatureKind::Mfcc),
            "z1" => Some(FeatureKind::Z1),
            "z2" => Some(FeatureKind::Z2),
            "ubnf" => Some(FeatureKind::Ubnf),
            _ => None,
        }
    }
}

/// T×D frame-level features with frame-rate metadata.
#[derive(Clone, Debug)]
pub struct FeatureMatrix {
    pub frames: Tensor,
    pub frame_shift_ms: f64,
    pub kind: FeatureKind,
}

impl FeatureMatrix {
    pub fn new(frames: Tensor, frame_shift_ms: f64, kind: FeatureKind) -> Self {
        debug_assert!(frames.all_finite(), "non-finite feature values");
        FeatureMatrix {
            frames,
            frame_shift_ms,
            kind,
        }
    }

    pub fn n_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }
}

/// Fixed-length window of an utterance's features.
#[derive(Clone, Debug)]
pub struct Segment {
    /// index of the source sequence in whatever collection produced it
    pub source: usize,
    /// first frame of the window
    pub start: usize,
    /// len × D block
    pub frames: Tensor,
}

// Periodic Hamming: the cosine term lands exactly on DFT bins ±1, so a
// constant input excites bins 0 and 1 only.
fn hamming(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Short-time power spectrogram: Hamming window, one-sided FFT,
/// magnitude squared. Frames start at 0, hop, 2·hop, …
pub fn stft(w: &Waveform, win_len: usize, hop: usize) -> Result<Spectrogram, DspError> {
    if w.samples.len() < win_len {
        return Err(DspError::TooShort {
            len: w.samples.len(),
            win_len,
        });
    }
    let n_frames = (w.samples.len() - win_len) / hop + 1;
    let bins = win_len / 2 + 1;
    let window = hamming(win_len);
    let fft = FftPlanner::new().plan_fft_forward(win_len);
    let mut power = Tensor::zeros(&[n_frames, bins]);
    let mut buf = vec![Complex::new(0.0, 0.0); win_len];
    for t in 0..n_frames {
        let start = t * hop;
        for (i, c) in buf.iter_mut().enumerate() {
            *c = Complex::new(w.samples[start + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        for (b, c) in buf.iter().take(bins).enumerate() {
            power.set(t, b, c.norm_sqr());
        }
    }
    Ok(Spectrogram {
        power,
        sample_rate: w.sample_rate,
        win_len,
        hop,
    })
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filter weights as a bins × n_mels matrix, spanning
/// 0 … sample_rate/2.
pub fn mel_filter_matrix(n_mels: usize, n_fft: usize, sample_rate: u32) -> Tensor {
    let bins = n_fft / 2 + 1;
    let f_max = sample_rate as f64 / 2.0;
    let mel_points: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(hz_to_mel(f_max) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let mut weights = Tensor::zeros(&[bins, n_mels]);
    for b in 0..bins {
        let freq = b as f64 * sample_rate as f64 / n_fft as f64;
        for m in 0..n_mels {
            let (lo, center, hi) = (mel_points[m], mel_points[m + 1], mel_points[m + 2]);
            let w = if freq >= lo && freq <= center && center > lo {
                (freq - lo) / (center - lo)
            } else if freq > center && freq <= hi && hi > center {
                (hi - freq) / (hi - center)
            } else {
                0.0
            };
            weights.set(b, m, w);
        }
    }
    weights
}

/// Log mel-filterbank energies.
pub fn fbank(spec: &Spectrogram, n_mels: usize) -> Result<FeatureMatrix, DspError> {
    let bins = spec.power.cols();
    if n_mels > bins {
        return Err(DspError::TooManyMels { n_mels, bins });
    }
    let filters = mel_filter_matrix(n_mels, spec.win_len, spec.sample_rate);
    let t = spec.power.rows();
    let mut out = Tensor::zeros(&[t, n_mels]);
    for i in 0..t {
        for m in 0..n_mels {
            let mut energy = 0.0;
            for b in 0..bins {
                energy += spec.power.at(i, b) * filters.at(b, m);
            }
            out.set(i, m, energy.max(LOG_FLOOR).ln());
        }
    }
    let shift_ms = 1000.0 * spec.hop as f64 / spec.sample_rate as f64;
    Ok(FeatureMatrix::new(out, shift_ms, FeatureKind::Fbank))
}

/// Orthonormal DCT-II over the mel axis, keeping the first `n_ceps`
/// coefficients.
fn dct_rows(logmel: &Tensor, n_ceps: usize) -> Tensor {
    let (t, n) = (logmel.rows(), logmel.cols());
    let mut out = Tensor::zeros(&[t, n_ceps]);
    for i in 0..t {
        for k in 0..n_ceps {
            let mut acc = 0.0;
            for (j, &v) in logmel.row(i).iter().enumerate() {
                acc += v
                    * (std::f64::consts::PI * k as f64 * (j as f64 + 0.5) / n as f64).cos();
            }
            let scale = if k == 0 {
                (1.0 / n as f64).sqrt()
            } else {
                (2.0 / n as f64).sqrt()
            };
            out.set(i, k, acc * scale);
        }
    }
    out
}

/// ±2-frame regression deltas with replicate-padded edges.
fn deltas(c: &Tensor) -> Tensor {
    let (t, d) = (c.rows(), c.cols());
    let mut out = Tensor::zeros(&[t, d]);
    let denom = 10.0; // 2·Σ n² for n ∈ {1,2}
    let clamp = |i: isize| -> usize { i.clamp(0, t as isize - 1) as usize };
    for i in 0..t {
        for j in 0..d {
            let mut acc = 0.0;
            for n in 1..=2isize {
                acc += n as f64
                    * (c.at(clamp(i as isize + n), j) - c.at(clamp(i as isize - n), j));
            }
            out.set(i, j, acc / denom);
        }
    }
    out
}

/// Appends delta and delta-delta columns to a cepstral matrix.
pub fn with_deltas(ceps: Tensor) -> Tensor {
    let d1 = deltas(&ceps);
    let d2 = deltas(&d1);
    let (t, d) = (ceps.rows(), ceps.cols());
    let mut out = Tensor::zeros(&[t, 3 * d]);
    for i in 0..t {
        for j in 0..d {
            out.set(i, j, ceps.at(i, j));
            out.set(i, d + j, d1.at(i, j));
            out.set(i, 2 * d + j, d2.at(i, j));
        }
    }
    out
}

/// Cepstral transform of already-computed log-mel features. Used both by
/// [`mfcc`] and by the synthetic pipeline, which emits log-mel-like features
/// directly.
pub fn mfcc_from_logmel(logmel: &Tensor, n_ceps: usize, add_deltas: bool) -> Tensor {
    let ceps = dct_rows(logmel, n_ceps);
    if add_deltas {
        with_deltas(ceps)
    } else {
        ceps
    }
}

/// MFCCs from a spectrogram: 40 log-mel energies → DCT-II → first `n_ceps`
/// kept, plus delta and delta-delta when requested (3·n_ceps columns total).
pub fn mfcc(spec: &Spectrogram, n_ceps: usize, add_deltas: bool) -> Result<FeatureMatrix, DspError> {
    let logmel = fbank(spec, 40)?;
    let out = mfcc_from_logmel(&logmel.frames, n_ceps, add_deltas);
    Ok(FeatureMatrix::new(
        out,
        logmel.frame_shift_ms,
        FeatureKind::Mfcc,
    ))
}

/// Per-utterance mean/variance normalization. Dimensions whose variance is
/// at or below 1e-8 are zeroed instead of divided.
pub fn cmvn(f: &FeatureMatrix) -> Result<FeatureMatrix, DspError> {
    let (t, d) = (f.n_frames(), f.dim());
    if t < 2 {
        return Err(DspError::TooFewFrames(t));
    }
    let mut out = f.frames.clone();
    for j in 0..d {
        let mean = (0..t).map(|i| f.frames.at(i, j)).sum::<f64>() / t as f64;
        let var = (0..t)
            .map(|i| (f.frames.at(i, j) - mean).powi(2))
            .sum::<f64>()
            / t as f64;
        if var > 1e-8 {
            let inv_std = 1.0 / var.sqrt();
            for i in 0..t {
                out.set(i, j, (f.frames.at(i, j) - mean) * inv_std);
            }
        } else {
            for i in 0..t {
                out.set(i, j, 0.0);
            }
        }
    }
    Ok(FeatureMatrix::new(out, f.frame_shift_ms, f.kind))
}

/// Start frames of all complete windows: 0, shift, 2·shift, … while
/// start + len ≤ T.
pub fn segment_starts(n_frames: usize, len: usize, shift: usize) -> Vec<usize> {
    assert!(len >= 1 && shift >= 1);
    if n_frames < len {
        return Vec::new();
    }
    (0..=(n_frames - len) / shift).map(|k| k * shift).collect()
}

/// Cuts an utterance into fixed-length segments; a tail shorter than `len`
/// is dropped. Returns an empty list (with a logged warning) when the
/// utterance is shorter than one segment.
pub fn segment(f: &FeatureMatrix, source: usize, len: usize, shift: usize) -> Vec<Segment> {
    let starts = segment_starts(f.n_frames(), len, shift);
    if starts.is_empty() {
        log::warn!(
            "utterance {} has {} frames, shorter than one {}-frame segment",
            source,
            f.n_frames(),
            len
        );
        return Vec::new();
    }
    let d = f.dim();
    starts
        .into_iter()
        .map(|start| {
            let mut block = Tensor::zeros(&[len, d]);
            for i in 0..len {
                for j in 0..d {
                    block.set(i, j, f.frames.at(start + i, j));
                }
            }
            Segment {
                source,
                start,
                frames: block,
            }
        })
        .collect()
}

// ---- WAV ------------------------------------------------------------------

/// Reads a mono 16-bit little-endian PCM WAV file.
pub fn read_wav_mono16(bytes: &[u8]) -> Result<Waveform, DspError> {
    let err = |m: &str| DspError::Wav(m.to_string());
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(err("not a RIFF/WAVE file"));
    }
    let mut pos = 12;
    let mut sample_rate = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().expect("4 bytes")) as usize;
        let body_end = pos + 8 + size;
        if body_end > bytes.len() {
            return Err(err("truncated chunk"));
        }
        let body = &bytes[pos + 8..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(err("short fmt chunk"));
                }
                let format = u16::from_le_bytes([body[0], body[1]]);
                let channels = u16::from_le_bytes([body[2], body[3]]);
                let rate = u32::from_le_bytes(body[4..8].try_into().expect("4 bytes"));
                let bits = u16::from_le_bytes([body[14], body[15]]);
                if format != 1 || channels != 1 || bits != 16 {
                    return Err(err("only mono 16-bit PCM is supported"));
                }
                sample_rate = Some(rate);
            }
            b"data" => data = Some(body),
            _ => {}
        }
        pos = body_end + (size & 1); // chunks are word-aligned
    }
    let sample_rate = sample_rate.ok_or_else(|| err("missing fmt chunk"))?;
    let data = data.ok_or_else(|| err("missing data chunk"))?;
    let samples = data
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0)
        .collect();
    Ok(Waveform {
        samples,
        sample_rate,
    })
}

/// Writes a mono 16-bit PCM WAV byte stream (samples clipped to [−1, 1)).
pub fn write_wav_mono16(w: &Waveform) -> Vec<u8> {
    let n = w.samples.len();
    let data_size = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_size).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&w.sample_rate.to_le_bytes());
    out.extend_from_slice(&(w.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_size.to_le_bytes());
    for &s in &w.samples {
        let v = (s.clamp(-1.0, 1.0 - 1.0 / 32768.0) * 32768.0).round() as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}
