//! Kramers-Kronig coherent receiver: sqrt/log front end at 4 samples per
//! symbol, FD Hilbert phase retrieval in 1024-point overlap-save blocks,
//! field reconstruction with absolute-time frequency downshift, a 203-tap
//! static FD equalizer with bin-select downsampling to 2 samples per
//! symbol, and a 4-tap decision-directed LMS tail.

use crate::channel::{pd_filter_mag, AdcConfig};
use crate::fftutil::{
    fft_inplace, fftfreq, ifft_inplace, kaiser_window, plan_forward, plan_inverse, OverlapSave,
};
use crate::metrics::{align_and_count, Alignment};
use crate::pipeline::{BufferChain, ChainOutput};
use crate::rx_pam::SystemModel;
use crate::signal::Constellation;
use crate::tx::TxConfig;
use crate::{Complex64, Error, Result};
use std::sync::Arc;

/// Clamped sqrt/log front end over one block. The floor is `clamp_floor`
/// times the block's mean intensity, so filtering/quantization undershoot
/// never reaches the logarithm.
pub fn kk_frontend(block: &[f64], clamp_floor: f64) -> (Vec<f64>, Vec<f64>) {
    let mean = block.iter().map(|x| x.abs()).sum::<f64>() / block.len().max(1) as f64;
    let floor = (clamp_floor * mean).max(f64::MIN_POSITIVE);
    let mut amp = Vec::with_capacity(block.len());
    let mut halflog = Vec::with_capacity(block.len());
    for &x in block {
        let v = x.max(floor);
        amp.push(v.sqrt());
        halflog.push(0.5 * v.ln());
    }
    (amp, halflog)
}

/// Windowed ideal discrete Hilbert kernel, odd length, antisymmetric:
/// h[k] = 2/(pi k) for odd lags. Realized causally with a (len-1)/2 delay
/// inside the overlap-save blocks.
pub fn hilbert_kernel(num_taps: usize, kaiser_beta: f64) -> Result<Vec<f64>> {
    if num_taps % 2 == 0 || num_taps < 3 {
        return Err(Error::InvalidArgument("hilbert kernel length must be odd".into()));
    }
    let m = (num_taps / 2) as i64;
    let win = kaiser_window(num_taps, kaiser_beta);
    Ok((0..num_taps)
        .map(|i| {
            let k = i as i64 - m;
            if k % 2 == 0 {
                0.0
            } else {
                2.0 / (std::f64::consts::PI * k as f64) * win[i]
            }
        })
        .collect())
}

/// Zero-phase FIR deconvolving the analog front-end magnitude in the
/// intensity domain: inverse up to `fmax`, raised-cosine tapered to zero
/// over `taper`. Used in the high-CSPR regime where the quasi-linear
/// intensity makes pre-sqrt deconvolution exact to second order.
pub fn intensity_inverse_fir(
    num_taps: usize,
    analog_cutoff: f64,
    fmax: f64,
    taper: f64,
    fs: f64,
) -> Vec<f64> {
    const GRID: usize = 16_384;
    let freqs = fftfreq(GRID, fs);
    let mut h = vec![Complex64::default(); GRID];
    for (v, &f) in h.iter_mut().zip(freqs.iter()) {
        let af = f.abs();
        let inv = 1.0 / pd_filter_mag(f, analog_cutoff);
        let g = if af <= fmax {
            inv
        } else if af <= fmax + taper {
            inv * 0.5 * (1.0 + (std::f64::consts::PI * (af - fmax) / taper).cos())
        } else {
            0.0
        };
        *v = Complex64::new(g, 0.0);
    }
    ifft_inplace(&mut h);
    let m = num_taps / 2;
    let win = kaiser_window(num_taps, 8.0);
    (0..num_taps)
        .map(|i| {
            let lag = (i as i64 - m as i64).rem_euclid(GRID as i64) as usize;
            h[lag].re * win[i]
        })
        .collect()
}

/// Reconstruct the complex field from amplitude and retrieved phase and
/// shift it down by the tone frequency, referenced to the absolute ADC
/// sample index so buffer boundaries introduce no phase jumps.
pub fn field_reconstruct_downshift(
    amp: &[f64],
    phase: &[f64],
    tone_freq: f64,
    sample_rate: f64,
    first_adc_index: i64,
) -> Vec<Complex64> {
    let cycles_per_sample = tone_freq / sample_rate;
    amp.iter()
        .zip(phase.iter())
        .enumerate()
        .map(|(i, (&a, &ph))| {
            let idx = first_adc_index + i as i64;
            let cycles = (cycles_per_sample * idx as f64).rem_euclid(1.0);
            let theta = ph - std::f64::consts::TAU * cycles;
            Complex64::from_polar(a, theta)
        })
        .collect()
}

/// Equalize one 1024-sample window and downsample to 2 samples per symbol
/// by retaining the central 512 bins, returning the last 256 output
/// samples (the overlap-save keep region at the halved rate).
pub fn fd_equalize_downsample_block(
    window: &[Complex64],
    eq_spectrum: &[Complex64],
    fwd: &Arc<dyn rustfft::Fft<f64>>,
    inv_half: &Arc<dyn rustfft::Fft<f64>>,
    out: &mut [Complex64],
) {
    let n = window.len();
    let half = n / 2;
    debug_assert_eq!(eq_spectrum.len(), n);
    debug_assert_eq!(out.len(), half / 2);
    let mut buf = window.to_vec();
    fwd.process(&mut buf);
    let mut v = vec![Complex64::default(); half];
    for k in 0..half / 2 {
        v[k] = buf[k] * eq_spectrum[k];
    }
    for k in half / 2..half {
        v[k] = buf[k + half] * eq_spectrum[k + half];
    }
    inv_half.process(&mut v);
    // 1/N of the full transform plus the rate-halving amplitude factor
    let scale = 0.5 / half as f64;
    for (o, val) in out.iter_mut().zip(v[half / 2..].iter()) {
        *o = val * scale;
    }
}

/// Decision-directed LMS state carried across buffers.
#[derive(Debug, Clone)]
pub struct LmsState {
    pub taps: Vec<Complex64>,
    pub seeded: bool,
    pub symbols: u64,
    err_acc: f64,
    err_count: u32,
}

/// Updates are skipped when |e|^2 exceeds this bound so cold-start
/// transients cannot drag the taps off; normal decision errors stay far
/// below it at any operating OSNR.
const LMS_UPDATE_GATE: f64 = 9.0;

/// Symbols after the cold seed excluded from the divergence guard (the
/// chain's own start-up transient flows through the adaptive tail).
const LMS_GUARD_HOLDOFF: u64 = 2048;

impl LmsState {
    pub fn cold(num_taps: usize) -> Self {
        Self {
            taps: vec![Complex64::default(); num_taps],
            seeded: false,
            symbols: 0,
            err_acc: 0.0,
            err_count: 0,
        }
    }
}

/// T/2-spaced decision-directed LMS over a 2 sample-per-symbol stream,
/// advancing two samples per symbol. Returns decided point indices and
/// their Gray bits; faults when the error power diverges.
pub fn dd_lms_equalize(
    y: &[Complex64],
    state: &mut LmsState,
    constellation: &Constellation,
    mu: f64,
) -> Result<(Vec<u8>, Vec<u8>)> {
    let nt = state.taps.len();
    if y.len() < nt {
        return Ok((Vec::new(), Vec::new()));
    }
    if !state.seeded {
        let n0 = y.len().min(2048);
        let p = y[..n0].iter().map(|v| v.norm_sqr()).sum::<f64>() / n0 as f64;
        let g = p.sqrt().max(1e-30);
        for t in state.taps.iter_mut() {
            *t = Complex64::default();
        }
        state.taps[1.min(nt - 1)] = Complex64::new(1.0 / g, 0.0);
        state.seeded = true;
    }
    let nsym = (y.len() - nt) / 2 + 1;
    let mut indices = Vec::with_capacity(nsym);
    let mut bits = Vec::with_capacity(nsym * constellation.bits_per_symbol);
    for k in 0..nsym {
        let win = &y[2 * k..2 * k + nt];
        let mut s = Complex64::default();
        for (w, x) in state.taps.iter().zip(win.iter()) {
            s += w * x;
        }
        let di = constellation.decide_index(s);
        let d = constellation.points[di];
        let e = d - s;
        let e2 = e.norm_sqr();
        if e2 <= LMS_UPDATE_GATE {
            for (w, x) in state.taps.iter_mut().zip(win.iter()) {
                *w += mu * e * x.conj();
            }
        }
        indices.push(di as u8);
        constellation.push_bits_of_index(di, &mut bits);
        state.symbols += 1;
        if state.symbols > LMS_GUARD_HOLDOFF {
            state.err_acc += e2;
            state.err_count += 1;
        }
        if state.err_count == 1024 {
            let mean = state.err_acc / 1024.0;
            if !mean.is_finite() || mean > 10.0 {
                return Err(Error::ChainFault(format!(
                    "LMS diverged: mean |e|^2 = {mean:.2} over 1024 symbols"
                )));
            }
            state.err_acc = 0.0;
            state.err_count = 0;
        }
    }
    Ok((indices, bits))
}

/// Correction found by trying the constellation's rotation/conjugation
/// symmetries against the reference sequence.
#[derive(Debug, Clone)]
pub struct AmbiguityResolution {
    pub quarter_turns: usize,
    pub conjugated: bool,
    pub alignment: Alignment,
    /// Decided bits after applying the winning correction.
    pub bits: Vec<u8>,
}

/// Try all rotation/conjugation corrections and bit alignments; return the
/// minimum-BER combination.
pub fn resolve_phase_ambiguity(
    indices: &[u8],
    constellation: &Constellation,
    reference_period: &[u8],
    window: usize,
) -> Result<AmbiguityResolution> {
    let mut best: Option<AmbiguityResolution> = None;
    for conj in [false, true] {
        for rot in 0..4usize {
            let map = constellation.symmetry_map(rot, conj);
            let mut bits = Vec::with_capacity(indices.len() * constellation.bits_per_symbol);
            for &i in indices {
                constellation.push_bits_of_index(map[i as usize], &mut bits);
            }
            let alignment = match align_and_count(&bits, reference_period, window) {
                Ok(a) => a,
                Err(Error::SyncFailed(_)) => continue,
                Err(e) => return Err(e),
            };
            let better = match &best {
                None => true,
                Some(b) => alignment.ber() < b.alignment.ber(),
            };
            if better {
                best = Some(AmbiguityResolution {
                    quarter_turns: rot,
                    conjugated: conj,
                    alignment,
                    bits,
                });
            }
        }
    }
    best.ok_or_else(|| Error::SyncFailed("no symmetry correction aligned to the reference".into()))
}

/// Whether the intensity-domain front-end inverse is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntensityInverseMode {
    /// Enabled when the configured CSPR is at least 15 dB (quasi-linear
    /// intensity regime); otherwise the inverse folds into the field
    /// equalizer, which is robust to noisy intensity dips.
    Auto,
    On,
    Off,
}

#[derive(Debug, Clone)]
pub struct KkChainConfig {
    pub hilbert_fft: usize,
    pub hilbert_taps: usize,
    pub hilbert_kaiser: f64,
    pub eq_fft: usize,
    pub eq_num_taps: usize,
    pub eq_delay: usize,
    pub downsample_ifft: usize,
    pub lms_taps: usize,
    pub lms_step: f64,
    pub clamp_floor: f64,
    pub intensity_inverse: IntensityInverseMode,
    /// Quadratic penalty weight on the equalizer response outside the
    /// signal band.
    pub eq_oob_lambda: f64,
    /// Weight of the hard null at the downshifted carrier frequency.
    pub eq_null_weight: f64,
}

impl Default for KkChainConfig {
    fn default() -> Self {
        Self {
            hilbert_fft: 1024,
            hilbert_taps: 513,
            hilbert_kaiser: 12.0,
            eq_fft: 1024,
            eq_num_taps: 203,
            eq_delay: 102,
            downsample_ifft: 512,
            lms_taps: 4,
            lms_step: 1e-3,
            clamp_floor: 1e-6,
            intensity_inverse: IntensityInverseMode::Auto,
            eq_oob_lambda: 3e-2,
            eq_null_weight: 1e4,
        }
    }
}

/// Solve the Hermitian positive-definite system G x = b in place.
fn solve_hermitian(g: &mut [Vec<Complex64>], b: &[Complex64]) -> Result<Vec<Complex64>> {
    let n = b.len();
    // LL^H decomposition
    for j in 0..n {
        let mut d = g[j][j].re;
        for k in 0..j {
            d -= g[j][k].norm_sqr();
        }
        if d <= 0.0 {
            return Err(Error::DesignFault(
                "equalizer normal equations are not positive definite".into(),
            ));
        }
        let l = d.sqrt();
        g[j][j] = Complex64::new(l, 0.0);
        for i in j + 1..n {
            let mut v = g[i][j];
            for k in 0..j {
                v -= g[i][k] * g[j][k].conj();
            }
            g[i][j] = v / l;
        }
    }
    // forward solve L y = b
    let mut y = vec![Complex64::default(); n];
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= g[i][k] * y[k];
        }
        y[i] = v / g[i][i].re;
    }
    // back solve L^H x = y
    let mut x = vec![Complex64::default(); n];
    for i in (0..n).rev() {
        let mut v = y[i];
        for k in i + 1..n {
            v -= g[k][i].conj() * x[k];
        }
        x[i] = v / g[i][i].re;
    }
    Ok(x)
}

/// First-order field-domain channel after reconstruction and downshift:
/// the tx pulse times the frequency-shifted analog magnitude (times the
/// intensity-inverse residual when that stage is active), centered.
fn kk_first_order_channel(
    model: &SystemModel,
    tone_freq: f64,
    int_inv: Option<&[f64]>,
    grid: usize,
) -> Vec<Complex64> {
    let mut h = vec![Complex64::default(); grid];
    for (i, &p) in model.tx_pulse.iter().enumerate() {
        h[i] = Complex64::new(p, 0.0);
    }
    fft_inplace(&mut h);
    let freqs = fftfreq(grid, model.adc_rate);
    for (v, &f) in h.iter_mut().zip(freqs.iter()) {
        // remove the tx group delay to center the kernel
        let th = 2.0 * std::f64::consts::PI * f * model.tx_delay as f64 / model.adc_rate;
        *v *= Complex64::new(th.cos(), th.sin());
        let shifted = f + tone_freq;
        let mut r = model.analog_mag(shifted);
        if let Some(g) = int_inv {
            // zero-phase response of the centered inverse FIR
            let m = (g.len() / 2) as i64;
            let mut resp = 0.0;
            for (j, &t) in g.iter().enumerate() {
                let lag = j as i64 - m;
                resp += t * (2.0 * std::f64::consts::PI * shifted * lag as f64 / model.adc_rate).cos();
            }
            r *= resp;
        }
        *v *= r;
    }
    ifft_inplace(&mut h);
    h
}

/// Least-squares zero-forcing design of the complex 203-tap equalizer on
/// the known simulated response: symbol-spaced cascade forced to a unit
/// cursor, a hard null at the downshifted carrier, and a quadratic penalty
/// on the out-of-band response.
pub fn design_kk_equalizer(
    model: &SystemModel,
    tone_freq: f64,
    int_inv: Option<&[f64]>,
    cfg: &KkChainConfig,
) -> Result<Vec<Complex64>> {
    const GRID: usize = 32_768;
    const M: usize = 384; // channel kernel half-width considered
    let band_edge = model.symbol_rate * (1.0 + model.rolloff) / 2.0;
    let mut f = 0.0;
    while f <= band_edge {
        if model.analog_mag(f + tone_freq) < 1e-6 {
            return Err(Error::DesignFault(format!(
                "analog response null at {} Hz inside the shifted signal band",
                f + tone_freq
            )));
        }
        f += band_edge / 256.0;
    }
    let h = kk_first_order_channel(model, tone_freq, int_inv, GRID);
    let hs: Vec<Complex64> = (-(M as i64)..=M as i64)
        .map(|m| h[m.rem_euclid(GRID as i64) as usize])
        .collect();
    let at = |m: i64| -> Complex64 {
        if (-(M as i64)..=M as i64).contains(&m) {
            hs[(m + M as i64) as usize]
        } else {
            Complex64::default()
        }
    };
    let nt = cfg.eq_num_taps;
    let delay = cfg.eq_delay as i64;
    let lags: Vec<i64> = (0..nt as i64).map(|j| j - delay).collect();
    let sps = model.sps as i64;
    // constraint rows: symbol-spaced cascade samples
    let mut rows: Vec<Vec<Complex64>> = Vec::new();
    let mut target: Vec<Complex64> = Vec::new();
    let n_lo = lags[0] - M as i64;
    let n_hi = lags[nt - 1] + M as i64;
    let mut n = (n_lo / sps) * sps;
    while n <= n_hi {
        if n >= n_lo {
            let row: Vec<Complex64> = lags.iter().map(|&l| at(n - l)).collect();
            rows.push(row);
            target.push(if n == 0 {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::default()
            });
        }
        n += sps;
    }
    // hard carrier null at -tone_freq
    let w = cfg.eq_null_weight;
    let row: Vec<Complex64> = lags
        .iter()
        .map(|&l| {
            let th = 2.0 * std::f64::consts::PI * tone_freq * l as f64 / model.adc_rate;
            Complex64::new(th.cos(), th.sin()) * w
        })
        .collect();
    rows.push(row);
    target.push(Complex64::default());
    // normal equations with the out-of-band penalty
    let mut g: Vec<Vec<Complex64>> = vec![vec![Complex64::default(); nt]; nt];
    let mut rhs = vec![Complex64::default(); nt];
    for (row, t) in rows.iter().zip(target.iter()) {
        for i in 0..nt {
            let ri = row[i].conj();
            rhs[i] += ri * t;
            for j in 0..=i {
                g[i][j] += ri * row[j];
            }
        }
    }
    let nf = 2048usize;
    let mut count_oob = 0usize;
    let mut f_rows: Vec<Vec<Complex64>> = Vec::new();
    for r in 0..nf {
        let fr = -2e9 + 4e9 * r as f64 / nf as f64;
        if fr.abs() <= band_edge + 0.015e9 {
            continue;
        }
        count_oob += 1;
        let row: Vec<Complex64> = lags
            .iter()
            .map(|&l| {
                let th = -2.0 * std::f64::consts::PI * fr * l as f64 / model.adc_rate;
                Complex64::new(th.cos(), th.sin())
            })
            .collect();
        f_rows.push(row);
    }
    let lam = cfg.eq_oob_lambda / nf as f64;
    for row in &f_rows {
        for i in 0..nt {
            let ri = row[i].conj();
            for j in 0..=i {
                g[i][j] += ri * row[j] * lam;
            }
        }
    }
    let _ = count_oob;
    for i in 0..nt {
        g[i][i] += Complex64::new(1e-9, 0.0);
        for j in i + 1..nt {
            g[i][j] = g[j][i].conj();
        }
    }
    solve_hermitian(&mut g, &rhs)
}

/// The assembled KK receiver chain.
pub struct KkChain {
    cfg: KkChainConfig,
    constellation: Constellation,
    tone_freq: f64,
    adc_rate: f64,
    #[allow(dead_code)]
    sps: usize,
    hilbert: OverlapSave,
    hilbert_delay: usize,
    int_inv: Option<Vec<f64>>,
    eq_taps: Vec<Complex64>,
    eq_spectrum: Vec<Complex64>,
    fwd_eq: Arc<dyn rustfft::Fft<f64>>,
    inv_half: Arc<dyn rustfft::Fft<f64>>,
    #[allow(dead_code)]
    buffer_len: usize,
    overlap: usize,
}

/// Parallel-stage product: the equalized 2-sps stream for this buffer.
pub struct KkMid {
    z2: Vec<Complex64>,
}

impl KkMid {
    pub fn z2(&self) -> &[Complex64] {
        &self.z2
    }
}

/// Continuity payload: adaptive taps plus the half-symbol window straddle.
#[derive(Debug, Clone)]
pub struct KkCarry {
    pub lms: LmsState,
    pub z2_tail: Vec<Complex64>,
}

impl KkChain {
    pub fn design(tx: &TxConfig, adc: &AdcConfig, cfg: KkChainConfig) -> Result<Self> {
        if tx.format.is_pam() {
            return Err(Error::InvalidArgument(format!(
                "KK chain cannot run format {:?}",
                tx.format
            )));
        }
        let model = SystemModel::from_configs(tx, adc)?;
        if model.sps != 4 {
            return Err(Error::InvalidArgument(format!(
                "KK chain expects 4 samples per symbol, got {}",
                model.sps
            )));
        }
        if cfg.eq_fft != 2 * cfg.downsample_ifft {
            return Err(Error::InvalidArgument(
                "downsample_ifft must be half of eq_fft".into(),
            ));
        }
        if adc.buffer_len % cfg.eq_fft != 0 {
            return Err(Error::InvalidArgument(
                "buffer_len must be a multiple of the equalizer FFT".into(),
            ));
        }
        let use_int_inv = match cfg.intensity_inverse {
            IntensityInverseMode::On => true,
            IntensityInverseMode::Off => false,
            IntensityInverseMode::Auto => tx.cspr_db >= 15.0,
        };
        let int_inv = if use_int_inv {
            Some(intensity_inverse_fir(
                129,
                adc.analog_cutoff,
                1.06e9,
                0.1e9,
                adc.sample_rate,
            ))
        } else {
            None
        };
        let kern = hilbert_kernel(cfg.hilbert_taps, cfg.hilbert_kaiser)?;
        let ckern: Vec<Complex64> = kern.iter().map(|&t| Complex64::new(t, 0.0)).collect();
        let hilbert = OverlapSave::new(&ckern, cfg.hilbert_fft)?;
        let eq_taps = design_kk_equalizer(&model, tx.tone_freq, int_inv.as_deref(), &cfg)?;
        let mut eq_spectrum = vec![Complex64::default(); cfg.eq_fft];
        eq_spectrum[..eq_taps.len()].copy_from_slice(&eq_taps);
        fft_inplace(&mut eq_spectrum);
        Ok(Self {
            constellation: Constellation::new(tx.format),
            tone_freq: tx.tone_freq,
            adc_rate: adc.sample_rate,
            sps: model.sps,
            hilbert,
            hilbert_delay: cfg.hilbert_taps / 2,
            int_inv,
            eq_taps,
            eq_spectrum,
            fwd_eq: plan_forward(cfg.eq_fft),
            inv_half: plan_inverse(cfg.downsample_ifft),
            buffer_len: adc.buffer_len,
            overlap: 2048,
            cfg,
        })
    }

    pub fn eq_taps(&self) -> &[Complex64] {
        &self.eq_taps
    }

    pub fn intensity_inverse_active(&self) -> bool {
        self.int_inv.is_some()
    }

    pub fn constellation(&self) -> &Constellation {
        &self.constellation
    }

    /// Pre-front-end group delay introduced by the intensity inverse.
    fn front_delay(&self) -> usize {
        self.int_inv.as_ref().map(|g| g.len() / 2).unwrap_or(0)
    }

    /// Expected LMS window lag of the first symbol: symbol k sits at
    /// 2-sps stream index 2k + total_delay/2.
    pub fn symbol_stream_offset(&self) -> usize {
        // tx delay + hilbert delay + eq delay + intensity-inverse delay
        let total = 64 + self.hilbert_delay + self.cfg.eq_delay + self.front_delay();
        total / 2
    }
}

impl BufferChain for KkChain {
    type Mid = KkMid;
    type Carry = KkCarry;

    fn overlap_len(&self) -> usize {
        self.overlap
    }

    fn cold_carry(&self) -> KkCarry {
        KkCarry {
            lms: LmsState::cold(self.cfg.lms_taps),
            z2_tail: vec![Complex64::default(); 2],
        }
    }

    fn stage_parallel(&self, seq: u64, prev_tail: &[f64], body: &[f64]) -> Result<KkMid> {
        let t = self.overlap;
        let l = body.len();
        let block = self.cfg.eq_fft / 2;
        if l % self.cfg.eq_fft != 0 {
            return Err(Error::ChainFault(format!(
                "buffer length {l} not a multiple of the {}-point equalizer FFT",
                self.cfg.eq_fft
            )));
        }
        if body.iter().all(|&x| x == 0.0) {
            return Err(Error::ChainFault(
                "all-zero buffer: no carrier present".into(),
            ));
        }
        let mut work = Vec::with_capacity(t + l);
        work.extend_from_slice(prev_tail);
        work.extend_from_slice(body);
        // intensity-domain inverse (causal, delay folded into the chain)
        let intensity: Vec<f64> = if let Some(g) = &self.int_inv {
            let ng = g.len();
            let mut out = vec![0.0; t + l];
            for (n, o) in out.iter_mut().enumerate().skip(ng - 1) {
                let mut acc = 0.0;
                for (j, &gj) in g.iter().enumerate() {
                    acc += gj * work[n - j];
                }
                *o = acc;
            }
            out
        } else {
            work.clone()
        };
        // sqrt/log front end on 512-aligned blocks
        let mut amp = vec![0.0; t + l];
        let mut halflog = vec![0.0; t + l];
        let mut o = block;
        while o < t + l {
            let (a, h) = kk_frontend(&intensity[o..o + block], self.cfg.clamp_floor);
            amp[o..o + block].copy_from_slice(&a);
            halflog[o..o + block].copy_from_slice(&h);
            o += block;
        }
        // blockwise FD Hilbert (causal kernel, keep-last)
        let mut hil = vec![0.0; t + l];
        let mut window = vec![Complex64::default(); self.cfg.hilbert_fft];
        let mut kept = vec![Complex64::default(); block];
        let mut o = 2 * block;
        while o < t + l {
            for (w, &x) in window.iter_mut().zip(halflog[o - block..o + block].iter()) {
                *w = Complex64::new(x, 0.0);
            }
            self.hilbert.process_window(&window, &mut kept);
            for (dst, v) in hil[o..o + block].iter_mut().zip(kept.iter()) {
                *dst = v.re;
            }
            o += block;
        }
        // reconstruct + downshift on the delayed grid
        let dh = self.hilbert_delay;
        let d_front = self.front_delay() as i64;
        let first_global = seq as i64 * l as i64 - t as i64;
        let mut recon = vec![Complex64::default(); t + l];
        let start = 2 * block;
        let amp_src = &amp[start - dh..t + l - dh];
        let phase_src = &hil[start..t + l];
        let first_adc = first_global + start as i64 - dh as i64 - d_front;
        let rec = field_reconstruct_downshift(
            amp_src,
            phase_src,
            self.tone_freq,
            self.adc_rate,
            first_adc,
        );
        recon[start..].copy_from_slice(&rec);
        // FD equalizer + downsample, keep body region
        let mut z2 = vec![Complex64::default(); l / 2];
        let mut out = vec![Complex64::default(); block / 2];
        let mut o = t;
        while o < t + l {
            fd_equalize_downsample_block(
                &recon[o - block..o + block],
                &self.eq_spectrum,
                &self.fwd_eq,
                &self.inv_half,
                &mut out,
            );
            let z_at = (o - t) / 2;
            z2[z_at..z_at + block / 2].copy_from_slice(&out);
            o += block;
        }
        Ok(KkMid { z2 })
    }

    fn stage_sequential(
        &self,
        seq: u64,
        mid: KkMid,
        carry: &KkCarry,
    ) -> Result<(ChainOutput, KkCarry)> {
        let mut stream = Vec::with_capacity(carry.z2_tail.len() + mid.z2.len());
        stream.extend_from_slice(&carry.z2_tail);
        stream.extend_from_slice(&mid.z2);
        let mut lms = carry.lms.clone();
        let (indices, bits) =
            dd_lms_equalize(&stream, &mut lms, &self.constellation, self.cfg.lms_step)?;
        let tail_at = stream.len() - 2;
        let carry_out = KkCarry {
            lms,
            z2_tail: stream[tail_at..].to_vec(),
        };
        Ok((
            ChainOutput {
                seq,
                warmup: seq == 0,
                bits,
                symbol_indices: Some(indices),
            },
            carry_out,
        ))
    }
}
