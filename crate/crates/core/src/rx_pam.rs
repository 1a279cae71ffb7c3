//! Direct-detection PAM receiver: 100%-overlap-save FFT equalization with a
//! 503-tap static equalizer, blockwise clock-phase estimation with
//! cross-buffer unwrapping, frequency-domain clock correction, and symbol
//! decision with tracked gain/offset normalization.

use crate::channel::{pd_filter_mag, AdcConfig};
use crate::fftutil::{fft_inplace, fftfreq, ifft_inplace, kaiser_window, OverlapSave};
use crate::pipeline::{BufferChain, ChainOutput};
use crate::signal::{rrc_freq_mag, Constellation};
use crate::tx::TxConfig;
use crate::{Complex64, Error, Result};

/// Link model available to the equalizer designer: the actual (truncated)
/// tx pulse on the ADC grid plus the analog front-end magnitude.
#[derive(Debug, Clone)]
pub struct SystemModel {
    /// Tx pulse at the ADC rate, including the power normalization applied
    /// by the shaper.
    pub tx_pulse: Vec<f64>,
    /// Group delay of `tx_pulse` in ADC samples.
    pub tx_delay: usize,
    pub adc_rate: f64,
    pub analog_cutoff: f64,
    pub symbol_rate: f64,
    pub rolloff: f64,
    /// ADC samples per symbol.
    pub sps: usize,
}

impl SystemModel {
    pub fn from_configs(tx: &TxConfig, adc: &AdcConfig) -> Result<Self> {
        tx.validate()?;
        adc.validate()?;
        let ratio = tx.dac_rate / adc.sample_rate;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
            return Err(Error::InvalidArgument(format!(
                "dac/adc rate ratio {ratio} must be a positive integer"
            )));
        }
        let ratio = ratio.round() as usize;
        let taps = tx.tx_rrc()?;
        let scale = (tx.samples_per_symbol() as f64).sqrt();
        let tx_pulse: Vec<f64> = taps.iter().step_by(ratio).map(|&t| t * scale).collect();
        let d = tx.tx_delay_samples();
        if d % ratio != 0 {
            return Err(Error::InvalidArgument(format!(
                "tx group delay {d} not aligned to the ADC grid (ratio {ratio})"
            )));
        }
        let sps = adc.sample_rate / tx.symbol_rate;
        if (sps - sps.round()).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "ADC samples per symbol {sps} must be an integer"
            )));
        }
        Ok(Self {
            tx_pulse,
            tx_delay: d / ratio,
            adc_rate: adc.sample_rate,
            analog_cutoff: adc.analog_cutoff,
            symbol_rate: tx.symbol_rate,
            rolloff: tx.rolloff,
            sps: sps.round() as usize,
        })
    }

    pub fn analog_mag(&self, f: f64) -> f64 {
        pd_filter_mag(f, self.analog_cutoff)
    }

    /// System impulse response on the ADC grid: tx pulse through the
    /// zero-phase analog magnitude.
    pub fn impulse(&self, grid: usize) -> Vec<f64> {
        let mut buf = vec![Complex64::default(); grid];
        for (i, &p) in self.tx_pulse.iter().enumerate() {
            buf[i] = Complex64::new(p, 0.0);
        }
        fft_inplace(&mut buf);
        let freqs = fftfreq(grid, self.adc_rate);
        for (v, f) in buf.iter_mut().zip(freqs.iter()) {
            *v *= self.analog_mag(*f);
        }
        ifft_inplace(&mut buf);
        buf.iter().map(|v| v.re).collect()
    }
}

/// Windowed zero-forcing design: matched RRC response times the inverse of
/// the analog front-end magnitude, truncated to `num_taps` around group
/// delay `delay` and normalized to a unit symbol-spaced cascade cursor.
pub fn design_static_equalizer(
    num_taps: usize,
    delay: usize,
    model: &SystemModel,
) -> Result<Vec<f64>> {
    const GRID: usize = 32_768;
    if num_taps == 0 || num_taps >= GRID / 2 {
        return Err(Error::InvalidArgument(format!("bad tap count {num_taps}")));
    }
    // refuse to invert a spectral null inside the signal band
    let band_edge = model.symbol_rate * (1.0 + model.rolloff) / 2.0;
    let mut f = 0.0;
    while f <= band_edge {
        if model.analog_mag(f) < 1e-6 {
            return Err(Error::DesignFault(format!(
                "analog response null at {f} Hz inside the signal band"
            )));
        }
        f += band_edge / 256.0;
    }
    // zero-phase target; the group delay enters through the tap extraction
    let freqs = fftfreq(GRID, model.adc_rate);
    let mut h = vec![Complex64::default(); GRID];
    for (v, &fk) in h.iter_mut().zip(freqs.iter()) {
        let mag = rrc_freq_mag(fk, model.rolloff, model.symbol_rate) / model.analog_mag(fk);
        *v = Complex64::new(mag, 0.0);
    }
    ifft_inplace(&mut h);
    let win = kaiser_window(num_taps, 9.0);
    let mut taps: Vec<f64> = (0..num_taps)
        .map(|i| {
            let lag = (i as i64 - delay as i64).rem_euclid(GRID as i64) as usize;
            h[lag].re * win[i]
        })
        .collect();
    // normalize the symbol-spaced cascade cursor to one
    let sys = model.impulse(GRID);
    let cursor = model.tx_delay + delay;
    let mut main = 0.0;
    for (j, &t) in taps.iter().enumerate() {
        let k = cursor as i64 - j as i64;
        if k >= 0 && (k as usize) < sys.len() {
            main += t * sys[k as usize];
        }
    }
    if main.abs() < 1e-9 {
        return Err(Error::DesignFault("vanishing cascade cursor".into()));
    }
    for t in &mut taps {
        *t /= main;
    }
    Ok(taps)
}

/// One overlap-save pass over `body` given the previous block, as a plain
/// function for oracle tests. Taps are real, output is the real part.
pub fn overlap_save_block_filter(
    prev_tail: &[f64],
    body: &[f64],
    taps: &[f64],
    fft_len: usize,
) -> Result<Vec<f64>> {
    let ctaps: Vec<Complex64> = taps.iter().map(|&t| Complex64::new(t, 0.0)).collect();
    let os = OverlapSave::new(&ctaps, fft_len)?;
    let pre: Vec<Complex64> = prev_tail.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    let bod: Vec<Complex64> = body.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    Ok(os.filter(&pre, &bod)?.iter().map(|v| v.re).collect())
}

/// Raw blockwise clock-phase estimate in UI, from the spectral correlation
/// of the half-symbol-rate-separated bands of a 2 sample-per-symbol block.
#[derive(Debug, Clone, Copy)]
pub struct ClockEstimate {
    pub tau_ui: f64,
    pub confident: bool,
}

pub fn clock_phase_estimate(block: &[f64]) -> ClockEstimate {
    let n = block.len();
    let mut buf: Vec<Complex64> = block.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fft_inplace(&mut buf);
    let mut c = Complex64::default();
    let mut band_power = 0.0;
    for k in n / 8..3 * n / 8 {
        c += buf[k] * buf[k + n / 2].conj();
        band_power += buf[k].norm_sqr();
    }
    if c.norm() < 1e-9 * band_power.max(1e-300) {
        return ClockEstimate {
            tau_ui: 0.0,
            confident: false,
        };
    }
    ClockEstimate {
        tau_ui: -c.arg() / (2.0 * std::f64::consts::PI),
        confident: true,
    }
}

/// Standard 1-UI unwrapping against the carried anchor. Returns the
/// unwrapped track and the new anchor (last value).
pub fn clock_phase_unwrap(raw: &[f64], anchor: f64) -> (Vec<f64>, f64) {
    let mut out = Vec::with_capacity(raw.len());
    let mut prev = anchor;
    for &r in raw {
        let u = r + (prev - r).round();
        out.push(u);
        prev = u;
    }
    (out, prev)
}

/// Correct one estimation block: the window holds the previous block then
/// the current one; a linear FD phase ramp advances the samples by
/// `tau_ui` symbols and the corrected current block is returned.
pub fn fd_clock_correct_block(window: &[Complex64], tau_ui: f64, sps: usize) -> Vec<f64> {
    let n = window.len();
    let mut buf = window.to_vec();
    fft_inplace(&mut buf);
    let shift = tau_ui * sps as f64;
    let freqs = fftfreq(n, 1.0);
    for (v, &f) in buf.iter_mut().zip(freqs.iter()) {
        let th = 2.0 * std::f64::consts::PI * f * shift;
        *v *= Complex64::new(th.cos(), th.sin());
    }
    ifft_inplace(&mut buf);
    buf[n / 2..].iter().map(|v| v.re).collect()
}

/// Tracked gain/offset normalization state for the decision stage.
#[derive(Debug, Clone)]
pub struct AgcState {
    pub dc: f64,
    pub dev: f64,
    pub initialized: bool,
}

impl AgcState {
    fn cold() -> Self {
        Self {
            dc: 0.0,
            dev: 1.0,
            initialized: false,
        }
    }

    fn update(&mut self, block: &[f64], alpha: f64) {
        if block.is_empty() {
            return;
        }
        let n = block.len() as f64;
        let mean = block.iter().sum::<f64>() / n;
        if !self.initialized {
            self.dc = mean;
            self.dev = block.iter().map(|x| (x - mean).abs()).sum::<f64>() / n;
            self.initialized = true;
            return;
        }
        self.dc += alpha * (mean - self.dc);
        let dev = block.iter().map(|x| (x - self.dc).abs()).sum::<f64>() / n;
        self.dev += alpha * (dev - self.dev);
    }
}

/// Threshold decision at the midpoints of the normalized PAM grid followed
/// by the inverse Gray map.
pub fn pam_decide_demap(
    symbols: &[f64],
    constellation: &Constellation,
    agc: &AgcState,
    out_bits: &mut Vec<u8>,
) {
    let levels = constellation.pam_levels_sorted();
    let ref_dev = levels.iter().map(|l| l.abs()).sum::<f64>() / levels.len() as f64;
    let scale = if agc.dev > 1e-30 { ref_dev / agc.dev } else { 1.0 };
    for &y in symbols {
        let v = (y - agc.dc) * scale;
        // nearest level == midpoint thresholds for an ascending grid
        let mut best = 0usize;
        let mut bd = f64::INFINITY;
        for (i, &l) in levels.iter().enumerate() {
            let d = (v - l).abs();
            if d < bd {
                bd = d;
                best = i;
            }
        }
        let idx = constellation.decide_index(Complex64::new(levels[best], 0.0));
        constellation.push_bits_of_index(idx, out_bits);
    }
}

#[derive(Debug, Clone)]
pub struct PamChainConfig {
    pub block_len: usize,
    pub fft_len: usize,
    pub eq_num_taps: usize,
    pub eq_delay: usize,
    pub clock_est_block: usize,
    pub agc_alpha: f64,
}

impl Default for PamChainConfig {
    fn default() -> Self {
        Self {
            block_len: 512,
            fft_len: 1024,
            eq_num_taps: 503,
            eq_delay: 252,
            clock_est_block: 2048,
            agc_alpha: 1.0 / 16.0,
        }
    }
}

/// The assembled PAM receiver chain.
pub struct PamChain {
    cfg: PamChainConfig,
    constellation: Constellation,
    eq_taps: Vec<f64>,
    os: OverlapSave,
    sps: usize,
    total_delay: usize,
}

/// Parallel-stage product: equalized samples plus raw clock estimates.
pub struct PamMid {
    eq_out: Vec<f64>,
    raw_tau: Vec<ClockEstimate>,
}

/// Continuity payload: clock-phase anchor, equalized tail for the clock
/// corrector's prehistory, and the decision normalization state.
#[derive(Debug, Clone)]
pub struct PamCarry {
    pub anchor: f64,
    pub eqout_tail: Vec<f64>,
    pub agc: AgcState,
}

impl PamChain {
    pub fn design(tx: &TxConfig, adc: &AdcConfig, cfg: PamChainConfig) -> Result<Self> {
        if !tx.format.is_pam() {
            return Err(Error::InvalidArgument(format!(
                "PAM chain cannot run format {:?}",
                tx.format
            )));
        }
        let model = SystemModel::from_configs(tx, adc)?;
        if model.sps != 2 {
            return Err(Error::InvalidArgument(format!(
                "PAM chain expects 2 samples per symbol, got {}",
                model.sps
            )));
        }
        if adc.buffer_len % cfg.clock_est_block != 0 || cfg.clock_est_block % cfg.block_len != 0 {
            return Err(Error::InvalidArgument(
                "buffer_len must be a multiple of clock_est_block, itself a multiple of block_len"
                    .into(),
            ));
        }
        // keep the total group delay even so symbol centers land on the
        // 2-sps decimation grid
        let mut eq_delay = cfg.eq_delay;
        if (model.tx_delay + eq_delay) % 2 == 1 {
            eq_delay += 1;
        }
        let eq_taps = design_static_equalizer(cfg.eq_num_taps, eq_delay, &model)?;
        let ctaps: Vec<Complex64> = eq_taps.iter().map(|&t| Complex64::new(t, 0.0)).collect();
        let os = OverlapSave::new(&ctaps, cfg.fft_len)?;
        let total_delay = model.tx_delay + eq_delay;
        Ok(Self {
            cfg: PamChainConfig { eq_delay, ..cfg },
            constellation: Constellation::new(tx.format),
            eq_taps,
            os,
            sps: model.sps,
            total_delay,
        })
    }

    pub fn eq_taps(&self) -> &[f64] {
        &self.eq_taps
    }

    pub fn total_delay(&self) -> usize {
        self.total_delay
    }

    pub fn constellation(&self) -> &Constellation {
        &self.constellation
    }
}

impl BufferChain for PamChain {
    type Mid = PamMid;
    type Carry = PamCarry;

    fn overlap_len(&self) -> usize {
        self.cfg.block_len
    }

    fn cold_carry(&self) -> PamCarry {
        PamCarry {
            anchor: 0.0,
            eqout_tail: vec![0.0; self.cfg.clock_est_block],
            agc: AgcState::cold(),
        }
    }

    fn stage_parallel(&self, _seq: u64, prev_tail: &[f64], body: &[f64]) -> Result<PamMid> {
        if body.len() % self.cfg.clock_est_block != 0 {
            return Err(Error::ChainFault(format!(
                "buffer length {} not a multiple of the {}-sample estimation block",
                body.len(),
                self.cfg.clock_est_block
            )));
        }
        let pre: Vec<Complex64> = prev_tail.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        let bod: Vec<Complex64> = body.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        let eq_out: Vec<f64> = self.os.filter(&pre, &bod)?.iter().map(|v| v.re).collect();
        let raw_tau: Vec<ClockEstimate> = eq_out
            .chunks(self.cfg.clock_est_block)
            .map(clock_phase_estimate)
            .collect();
        Ok(PamMid { eq_out, raw_tau })
    }

    fn stage_sequential(
        &self,
        seq: u64,
        mid: PamMid,
        carry: &PamCarry,
    ) -> Result<(ChainOutput, PamCarry)> {
        let eb = self.cfg.clock_est_block;
        let raw: Vec<f64> = mid.raw_tau.iter().map(|e| e.tau_ui).collect();
        let (unwrapped, anchor) = clock_phase_unwrap(&raw, carry.anchor);
        let mut agc = carry.agc.clone();
        let mut bits = Vec::with_capacity(mid.eq_out.len() / self.sps);
        let mut window = vec![Complex64::default(); 2 * eb];
        for (j, &tau) in unwrapped.iter().enumerate() {
            let prev = if j == 0 {
                &carry.eqout_tail[..]
            } else {
                &mid.eq_out[(j - 1) * eb..j * eb]
            };
            for (w, &x) in window[..eb].iter_mut().zip(prev.iter()) {
                *w = Complex64::new(x, 0.0);
            }
            for (w, &x) in window[eb..].iter_mut().zip(mid.eq_out[j * eb..(j + 1) * eb].iter()) {
                *w = Complex64::new(x, 0.0);
            }
            let corrected = fd_clock_correct_block(&window, tau, self.sps);
            let symbols: Vec<f64> = corrected.iter().step_by(self.sps).copied().collect();
            agc.update(&symbols, self.cfg.agc_alpha);
            pam_decide_demap(&symbols, &self.constellation, &agc, &mut bits);
        }
        let tail_at = mid.eq_out.len() - eb;
        let carry_out = PamCarry {
            anchor,
            eqout_tail: mid.eq_out[tail_at..].to_vec(),
            agc,
        };
        Ok((
            ChainOutput {
                seq,
                warmup: seq == 0,
                bits,
                symbol_indices: None,
            },
            carry_out,
        ))
    }
}
