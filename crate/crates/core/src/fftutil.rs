//! Shared FFT helpers: a process-wide plan cache, normalized transforms,
//! frequency grids and the Kaiser window used by the filter designers.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

struct PlanCache {
    fwd: HashMap<usize, Arc<dyn Fft<f64>>>,
    inv: HashMap<usize, Arc<dyn Fft<f64>>>,
    planner: FftPlanner<f64>,
}

fn cache() -> &'static Mutex<PlanCache> {
    static CACHE: OnceLock<Mutex<PlanCache>> = OnceLock::new();
    CACHE.get_or_init(|| {
        Mutex::new(PlanCache {
            fwd: HashMap::new(),
            inv: HashMap::new(),
            planner: FftPlanner::new(),
        })
    })
}

pub fn plan_forward(len: usize) -> Arc<dyn Fft<f64>> {
    let mut c = cache().lock().unwrap();
    if let Some(p) = c.fwd.get(&len) {
        return p.clone();
    }
    let p = c.planner.plan_fft_forward(len);
    c.fwd.insert(len, p.clone());
    p
}

pub fn plan_inverse(len: usize) -> Arc<dyn Fft<f64>> {
    let mut c = cache().lock().unwrap();
    if let Some(p) = c.inv.get(&len) {
        return p.clone();
    }
    let p = c.planner.plan_fft_inverse(len);
    c.inv.insert(len, p.clone());
    p
}

/// Forward DFT (no normalization), out of place.
pub fn fft(x: &[Complex64]) -> Vec<Complex64> {
    let mut buf = x.to_vec();
    plan_forward(x.len()).process(&mut buf);
    buf
}

/// Inverse DFT normalized by 1/N.
pub fn ifft(x: &[Complex64]) -> Vec<Complex64> {
    let mut buf = x.to_vec();
    plan_inverse(x.len()).process(&mut buf);
    let scale = 1.0 / x.len() as f64;
    for v in &mut buf {
        *v *= scale;
    }
    buf
}

pub fn fft_inplace(buf: &mut [Complex64]) {
    plan_forward(buf.len()).process(buf);
}

pub fn ifft_inplace(buf: &mut [Complex64]) {
    let scale = 1.0 / buf.len() as f64;
    plan_inverse(buf.len()).process(buf);
    for v in buf.iter_mut() {
        *v *= scale;
    }
}

/// DFT bin frequencies in Hz for an N-point transform at `fs`.
/// Bin k maps to k/N*fs for k < N/2 and (k-N)/N*fs above.
pub fn fftfreq(n: usize, fs: f64) -> Vec<f64> {
    let mut f = Vec::with_capacity(n);
    for k in 0..n {
        let kk = if k <= (n - 1) / 2 {
            k as f64
        } else {
            k as f64 - n as f64
        };
        f.push(kk * fs / n as f64);
    }
    f
}

/// Apply a frequency-domain transfer function to the whole signal.
/// The signal is zero-padded to a composite-friendly length and trimmed back.
pub fn apply_fd(x: &[Complex64], fs: f64, h: impl Fn(f64) -> Complex64) -> Vec<Complex64> {
    let n = x.len();
    let pn = n.next_multiple_of(4096);
    let mut buf = vec![Complex64::default(); pn];
    buf[..n].copy_from_slice(x);
    fft_inplace(&mut buf);
    let f = fftfreq(pn, fs);
    for (v, fk) in buf.iter_mut().zip(f.iter()) {
        *v *= h(*fk);
    }
    ifft_inplace(&mut buf);
    buf.truncate(n);
    buf
}

/// Overlap-save block convolution with 100% overlap: each window holds the
/// previous block plus the current one, and the filtered current block is
/// kept. For a causal FIR of length <= fft_len/2 + 1 the concatenated
/// output equals linear convolution exactly.
pub struct OverlapSave {
    fft_len: usize,
    block_len: usize,
    spectrum: Vec<Complex64>,
    fwd: std::sync::Arc<dyn rustfft::Fft<f64>>,
    inv: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl OverlapSave {
    pub fn new(taps: &[Complex64], fft_len: usize) -> crate::Result<Self> {
        let block_len = fft_len / 2;
        if taps.is_empty() || taps.len() > block_len + 1 {
            return Err(crate::Error::InvalidArgument(format!(
                "tap count {} exceeds overlap budget {} of a {}-point transform",
                taps.len(),
                block_len + 1,
                fft_len
            )));
        }
        let mut spectrum = vec![Complex64::default(); fft_len];
        spectrum[..taps.len()].copy_from_slice(taps);
        fft_inplace(&mut spectrum);
        Ok(Self {
            fft_len,
            block_len,
            spectrum,
            fwd: plan_forward(fft_len),
            inv: plan_inverse(fft_len),
        })
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    pub fn fft_len(&self) -> usize {
        self.fft_len
    }

    pub fn spectrum(&self) -> &[Complex64] {
        &self.spectrum
    }

    /// Filter one window of `fft_len` samples (previous block then current),
    /// writing the filtered current block to `out`.
    pub fn process_window(&self, window: &[Complex64], out: &mut [Complex64]) {
        debug_assert_eq!(window.len(), self.fft_len);
        debug_assert_eq!(out.len(), self.block_len);
        let mut buf = window.to_vec();
        self.fwd.process(&mut buf);
        for (v, h) in buf.iter_mut().zip(self.spectrum.iter()) {
            *v *= h;
        }
        self.inv.process(&mut buf);
        let scale = 1.0 / self.fft_len as f64;
        for (o, v) in out.iter_mut().zip(buf[self.block_len..].iter()) {
            *o = v * scale;
        }
    }

    /// Filter `body` (a whole number of blocks) given the preceding block.
    pub fn filter(&self, prehistory: &[Complex64], body: &[Complex64]) -> crate::Result<Vec<Complex64>> {
        if prehistory.len() != self.block_len {
            return Err(crate::Error::InvalidArgument(format!(
                "prehistory must be {} samples, got {}",
                self.block_len,
                prehistory.len()
            )));
        }
        if body.len() % self.block_len != 0 {
            return Err(crate::Error::InvalidArgument(format!(
                "body length {} is not a multiple of the {}-sample block",
                body.len(),
                self.block_len
            )));
        }
        let blocks = body.len() / self.block_len;
        let mut out = vec![Complex64::default(); body.len()];
        let mut window = vec![Complex64::default(); self.fft_len];
        for b in 0..blocks {
            let cur = &body[b * self.block_len..(b + 1) * self.block_len];
            if b == 0 {
                window[..self.block_len].copy_from_slice(prehistory);
            } else {
                let prev = &body[(b - 1) * self.block_len..b * self.block_len];
                window[..self.block_len].copy_from_slice(prev);
            }
            window[self.block_len..].copy_from_slice(cur);
            self.process_window(&window, &mut out[b * self.block_len..(b + 1) * self.block_len]);
        }
        Ok(out)
    }
}

/// Modified Bessel function of the first kind, order zero (series form).
pub fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..=50 {
        term *= q / ((k * k) as f64);
        sum += term;
        if term < 1e-18 * sum {
            break;
        }
    }
    sum
}

/// Kaiser window of length `n` with shape parameter `beta`.
pub fn kaiser_window(n: usize, beta: f64) -> Vec<f64> {
    let denom = bessel_i0(beta);
    let m = (n - 1) as f64;
    (0..n)
        .map(|i| {
            let r = 2.0 * i as f64 / m - 1.0;
            bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / denom
        })
        .collect()
}
