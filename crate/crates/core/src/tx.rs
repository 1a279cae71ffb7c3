//! Transmit waveform synthesis: RRC-shaped PAM at 2 GBaud and RRC-shaped
//! QPSK/16-QAM at 1 GBaud with the out-of-band carrier tone used by the
//! KK receiver. PAM rides on a DC bias (mid-point modulator model) so the
//! square-law detector sees the levels linearly.

use crate::signal::{rrc_taps, Constellation, Format, RrcSpec, Waveform};
use crate::{Complex64, Error, Result};

#[derive(Debug, Clone)]
pub struct TxConfig {
    pub format: Format,
    pub symbol_rate: f64,
    pub rolloff: f64,
    pub dac_rate: f64,
    /// KK tone frequency (QAM formats only).
    pub tone_freq: f64,
    /// Carrier-to-signal power ratio of the tone, dB (QAM formats only).
    pub cspr_db: f64,
    /// PAM modulation index m in E = (1 + m*s)/sqrt(1+m^2).
    pub pam_mod_index: f64,
    /// RRC span in symbols (tap count = span*sps + 1).
    pub rrc_span_symbols: usize,
    pub num_symbols: usize,
}

impl TxConfig {
    /// Paper operating point for the given format.
    pub fn for_format(format: Format) -> Self {
        let (symbol_rate, rolloff) = if format.is_pam() {
            (2e9, 0.5)
        } else {
            (1e9, 0.01)
        };
        let cspr_db = match format {
            Format::Qpsk => 6.0,
            Format::Qam16 => 11.0,
            _ => 0.0,
        };
        // per-format drive depth; see README on the mid-point bias model
        let pam_mod_index = match format {
            Format::Pam2 => 1.0,
            Format::Pam4 => 0.30,
            Format::Pam8 => 0.15,
            _ => 0.0,
        };
        Self {
            format,
            symbol_rate,
            rolloff,
            dac_rate: 12e9,
            tone_freq: 0.547e9,
            cspr_db,
            pam_mod_index,
            rrc_span_symbols: 32,
            num_symbols: 1 << 20,
        }
    }

    pub fn samples_per_symbol(&self) -> usize {
        (self.dac_rate / self.symbol_rate).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.dac_rate < 2.0 * self.symbol_rate * (1.0 + self.rolloff) {
            return Err(Error::InvalidArgument(format!(
                "dac_rate {} below Nyquist for {} Baud at rolloff {}",
                self.dac_rate, self.symbol_rate, self.rolloff
            )));
        }
        let sps = self.dac_rate / self.symbol_rate;
        if (sps - sps.round()).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "dac_rate/symbol_rate = {sps} must be an integer"
            )));
        }
        if !self.format.is_pam() {
            let band_edge = self.symbol_rate * (1.0 + self.rolloff) / 2.0;
            if self.tone_freq <= band_edge {
                return Err(Error::InvalidArgument(format!(
                    "tone at {} Hz sits inside the signal band (edge {} Hz)",
                    self.tone_freq, band_edge
                )));
            }
        }
        Ok(())
    }

    pub fn tx_rrc(&self) -> Result<Vec<f64>> {
        let sps = self.samples_per_symbol();
        rrc_taps(&RrcSpec::new(
            self.rolloff,
            self.symbol_rate,
            sps,
            self.rrc_span_symbols * sps + 1,
        ))
    }

    /// Group delay of the tx shaping filter in DAC samples.
    pub fn tx_delay_samples(&self) -> usize {
        self.rrc_span_symbols * self.samples_per_symbol() / 2
    }
}

/// Upsample symbols to the DAC rate and pulse-shape with the RRC.
///
/// Taps are unit energy, so the shaped waveform is scaled by sqrt(sps) to
/// restore unit average power for unit-power symbols.
pub fn shape_baseband(symbols: &[Complex64], cfg: &TxConfig) -> Result<Waveform> {
    cfg.validate()?;
    let sps = cfg.samples_per_symbol();
    let taps = cfg.tx_rrc()?;
    let scale = (sps as f64).sqrt();
    let n = if symbols.is_empty() {
        0
    } else {
        (symbols.len() - 1) * sps + taps.len()
    };
    let mut out = vec![Complex64::default(); n];
    for (k, &a) in symbols.iter().enumerate() {
        if a == Complex64::default() {
            continue;
        }
        let base = k * sps;
        for (j, &h) in taps.iter().enumerate() {
            out[base + j] += a * (h * scale);
        }
    }
    let real = symbols.iter().all(|s| s.im == 0.0);
    Ok(Waveform {
        samples: out,
        sample_rate: cfg.dac_rate,
        start_index: 0,
        purely_real: real,
    })
}

/// Add the KK carrier tone at `cfg.tone_freq`, scaled so the measured
/// carrier-to-signal power ratio equals `cfg.cspr_db`.
pub fn add_kk_tone(signal: &Waveform, cfg: &TxConfig) -> Result<Waveform> {
    cfg.validate()?;
    let band_edge = cfg.symbol_rate * (1.0 + cfg.rolloff) / 2.0;
    if cfg.tone_freq <= band_edge {
        return Err(Error::InvalidArgument("tone inside signal band".into()));
    }
    let p_sig = signal.power();
    let amp = (10f64.powf(cfg.cspr_db / 10.0) * p_sig).sqrt();
    let w = 2.0 * std::f64::consts::PI * cfg.tone_freq / signal.sample_rate;
    let samples: Vec<Complex64> = signal
        .samples
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let ph = w * (signal.start_index + i as u64) as f64;
            s + Complex64::new(amp * ph.cos(), amp * ph.sin())
        })
        .collect();
    Ok(Waveform {
        samples,
        sample_rate: signal.sample_rate,
        start_index: signal.start_index,
        purely_real: false,
    })
}

/// Add the PAM carrier bias: E = (1 + m*s)/sqrt(1+m^2), unit average power.
fn add_pam_bias(signal: &Waveform, m: f64) -> Waveform {
    let a0 = 1.0 / (1.0 + m * m).sqrt();
    let samples: Vec<Complex64> = signal
        .samples
        .iter()
        .map(|&s| Complex64::new(a0 * (1.0 + m * s.re), 0.0))
        .collect();
    Waveform {
        samples,
        sample_rate: signal.sample_rate,
        start_index: signal.start_index,
        purely_real: true,
    }
}

/// Full transmitter: map, shape, and add the carrier (tone for QAM, bias
/// for PAM). PAM output is exactly real.
pub fn tx_waveform(cfg: &TxConfig, bits: &[u8]) -> Result<Waveform> {
    cfg.validate()?;
    let constellation = Constellation::new(cfg.format);
    let symbols = constellation.map_symbols(bits)?;
    if symbols.is_empty() {
        return Ok(Waveform {
            samples: Vec::new(),
            sample_rate: cfg.dac_rate,
            start_index: 0,
            purely_real: cfg.format.is_pam(),
        });
    }
    let shaped = shape_baseband(&symbols, cfg)?;
    if cfg.format.is_pam() {
        Ok(add_pam_bias(&shaped, cfg.pam_mod_index))
    } else {
        add_kk_tone(&shaped, cfg)
    }
}
