//! Foundational signal types: sampled waveforms, constellations with Gray
//! mapping, PRBS generation, root-raised-cosine design, and the direct
//! time-domain convolution used as the reference for all FFT filtering.

use crate::{Complex64, Error, Result};

/// Uniformly sampled signal. The universal currency between stages.
///
/// Real-valued waveforms keep zero imaginary parts and set `purely_real`;
/// constructors enforce that the flag matches the data.
#[derive(Debug, Clone)]
pub struct Waveform {
    pub samples: Vec<Complex64>,
    pub sample_rate: f64,
    pub start_index: u64,
    pub purely_real: bool,
}

impl Waveform {
    pub fn new_complex(samples: Vec<Complex64>, sample_rate: f64) -> Result<Self> {
        if !(sample_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sample_rate must be positive, got {sample_rate}"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
            start_index: 0,
            purely_real: false,
        })
    }

    pub fn new_real(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if !(sample_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sample_rate must be positive, got {sample_rate}"
            )));
        }
        Ok(Self {
            samples: samples.into_iter().map(|x| Complex64::new(x, 0.0)).collect(),
            sample_rate,
            start_index: 0,
            purely_real: true,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean |x|^2.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.samples.len() as f64
    }

    /// True when every imaginary part is exactly zero.
    pub fn imag_is_zero(&self) -> bool {
        self.samples.iter().all(|s| s.im == 0.0)
    }

    pub fn real_part(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.re).collect()
    }

    /// Validate the purity flag against the data.
    pub fn check_purity(&self) -> Result<()> {
        if self.purely_real && !self.imag_is_zero() {
            return Err(Error::InvalidArgument(
                "waveform flagged real but has nonzero imaginary parts".into(),
            ));
        }
        Ok(())
    }
}

/// Modulation format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Format {
    Pam2,
    Pam4,
    Pam8,
    Qpsk,
    Qam16,
}

impl Format {
    pub fn bits_per_symbol(self) -> usize {
        match self {
            Format::Pam2 => 1,
            Format::Pam4 => 2,
            Format::Pam8 => 3,
            Format::Qpsk => 2,
            Format::Qam16 => 4,
        }
    }

    pub fn is_pam(self) -> bool {
        matches!(self, Format::Pam2 | Format::Pam4 | Format::Pam8)
    }

    pub fn name(self) -> &'static str {
        match self {
            Format::Pam2 => "pam2",
            Format::Pam4 => "pam4",
            Format::Pam8 => "pam8",
            Format::Qpsk => "qpsk",
            Format::Qam16 => "qam16",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pam2" | "2pam" => Ok(Format::Pam2),
            "pam4" | "4pam" => Ok(Format::Pam4),
            "pam8" | "8pam" => Ok(Format::Pam8),
            "qpsk" => Ok(Format::Qpsk),
            "qam16" | "16qam" => Ok(Format::Qam16),
            other => Err(Error::InvalidArgument(format!("unknown format '{other}'"))),
        }
    }
}

/// Gray code of `i` for an n-bit field.
fn gray(i: usize) -> usize {
    i ^ (i >> 1)
}

/// Constellation with unit average power and Gray bit labels.
///
/// `points[i]` carries the label `labels[i]` (MSB first); `index_of_label`
/// is the inverse map. PAM constellations are purely real with levels in
/// ascending order labeled by a Gray sequence, QAM uses independent Gray-PAM
/// rails on I and Q.
#[derive(Debug, Clone)]
pub struct Constellation {
    pub format: Format,
    pub points: Vec<Complex64>,
    pub bits_per_symbol: usize,
    pub labels: Vec<u16>,
    index_of_label: Vec<usize>,
}

/// Ascending unit-power PAM levels for order M.
fn pam_levels(m: usize) -> Vec<f64> {
    let lv: Vec<f64> = (0..m).map(|i| (2 * i as i64 - (m as i64 - 1)) as f64).collect();
    let p = lv.iter().map(|x| x * x).sum::<f64>() / m as f64;
    let s = p.sqrt();
    lv.into_iter().map(|x| x / s).collect()
}

impl Constellation {
    pub fn new(format: Format) -> Self {
        let bps = format.bits_per_symbol();
        let (points, labels): (Vec<Complex64>, Vec<u16>) = match format {
            Format::Pam2 | Format::Pam4 | Format::Pam8 => {
                let m = 1 << bps;
                let lv = pam_levels(m);
                // level i (ascending) carries Gray label gray(i)
                (0..m)
                    .map(|i| (Complex64::new(lv[i], 0.0), gray(i) as u16))
                    .unzip()
            }
            Format::Qpsk => {
                // one bit per rail: 0 -> +1, 1 -> -1, I first
                let a = 1.0 / 2f64.sqrt();
                let mut pts = Vec::new();
                let mut lbl = Vec::new();
                for bi in 0..2u16 {
                    for bq in 0..2u16 {
                        let re = if bi == 0 { a } else { -a };
                        let im = if bq == 0 { a } else { -a };
                        pts.push(Complex64::new(re, im));
                        lbl.push((bi << 1) | bq);
                    }
                }
                (pts, lbl)
            }
            Format::Qam16 => {
                // two Gray-PAM4 rails, I bits then Q bits
                let lv = pam_levels(4);
                let scale = 1.0 / 2f64.sqrt(); // unit power for the pair of rails
                // label (2 bits) -> level index via inverse Gray
                let mut inv = [0usize; 4];
                for (i, item) in [gray(0), gray(1), gray(2), gray(3)].into_iter().enumerate() {
                    inv[item] = i;
                }
                let mut pts = Vec::new();
                let mut lbl = Vec::new();
                for li in 0..4u16 {
                    for lq in 0..4u16 {
                        let re = lv[inv[li as usize]] * scale;
                        let im = lv[inv[lq as usize]] * scale;
                        pts.push(Complex64::new(re, im));
                        lbl.push((li << 2) | lq);
                    }
                }
                (pts, lbl)
            }
        };
        let mut index_of_label = vec![0usize; points.len()];
        for (i, &l) in labels.iter().enumerate() {
            index_of_label[l as usize] = i;
        }
        Self {
            format,
            points,
            bits_per_symbol: bps,
            labels,
            index_of_label,
        }
    }

    /// Gray-map a bit sequence to unit-power symbols.
    pub fn map_symbols(&self, bits: &[u8]) -> Result<Vec<Complex64>> {
        if bits.len() % self.bits_per_symbol != 0 {
            return Err(Error::InvalidArgument(format!(
                "bit count {} is not a multiple of bits_per_symbol {}",
                bits.len(),
                self.bits_per_symbol
            )));
        }
        let mut out = Vec::with_capacity(bits.len() / self.bits_per_symbol);
        for chunk in bits.chunks(self.bits_per_symbol) {
            let mut label = 0usize;
            for &b in chunk {
                label = (label << 1) | (b as usize & 1);
            }
            out.push(self.points[self.index_of_label[label]]);
        }
        Ok(out)
    }

    /// Index of the nearest constellation point.
    pub fn decide_index(&self, s: Complex64) -> usize {
        let mut best = 0;
        let mut bd = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = (s - p).norm_sqr();
            if d < bd {
                bd = d;
                best = i;
            }
        }
        best
    }

    /// Append the Gray label of point `index` to `out`, MSB first.
    pub fn push_bits_of_index(&self, index: usize, out: &mut Vec<u8>) {
        let label = self.labels[index];
        for k in (0..self.bits_per_symbol).rev() {
            out.push(((label >> k) & 1) as u8);
        }
    }

    /// Minimum-distance decision followed by the inverse Gray map.
    pub fn demap_symbols(&self, symbols: &[Complex64]) -> Vec<u8> {
        let mut out = Vec::with_capacity(symbols.len() * self.bits_per_symbol);
        for &s in symbols {
            let i = self.decide_index(s);
            self.push_bits_of_index(i, &mut out);
        }
        out
    }

    /// Point-index permutation realizing a rotation by `quarter_turns` quarter turns
    /// followed by optional conjugation. Valid for the square formats whose
    /// point set is closed under these operations (QPSK, 16-QAM).
    pub fn symmetry_map(&self, quarter_turns: usize, conjugate: bool) -> Vec<usize> {
        let rot = Complex64::new(0.0, 1.0).powu(quarter_turns as u32);
        self.points
            .iter()
            .map(|&p| {
                let mut q = p * rot;
                if conjugate {
                    q = q.conj();
                }
                self.decide_index(q)
            })
            .collect()
    }

    /// Real levels in ascending order (PAM only).
    pub fn pam_levels_sorted(&self) -> Vec<f64> {
        let mut lv: Vec<f64> = self.points.iter().map(|p| p.re).collect();
        lv.sort_by(|a, b| a.partial_cmp(b).unwrap());
        lv
    }
}

/// PRBS generator spec: maximal-length LFSR with fixed published taps.
#[derive(Debug, Clone, Copy)]
pub struct PrbsSpec {
    pub order: u32,
    pub seed: u64,
    pub length: usize,
}

impl PrbsSpec {
    pub fn new(order: u32, seed: u64, length: usize) -> Self {
        Self { order, seed, length }
    }

    /// Default reference pattern: PRBS-15 from the all-ones state.
    pub fn default_with_len(length: usize) -> Self {
        Self {
            order: 15,
            seed: 0x7FFF,
            length,
        }
    }

    fn taps(order: u32) -> Result<(u32, u32)> {
        // x^7+x^6+1, x^15+x^14+1, x^23+x^18+1, x^31+x^28+1
        match order {
            7 => Ok((7, 6)),
            15 => Ok((15, 14)),
            23 => Ok((23, 18)),
            31 => Ok((31, 28)),
            o => Err(Error::InvalidArgument(format!("unsupported PRBS order {o}"))),
        }
    }

    pub fn period(&self) -> usize {
        (1usize << self.order) - 1
    }
}

/// Generate `spec.length` bits of the maximal-length LFSR sequence.
pub fn prbs_bits(spec: &PrbsSpec) -> Result<Vec<u8>> {
    let (t1, t2) = PrbsSpec::taps(spec.order)?;
    let mask = (1u64 << spec.order) - 1;
    let mut state = spec.seed & mask;
    if state == 0 {
        return Err(Error::InvalidArgument("PRBS seed must be nonzero".into()));
    }
    let mut out = Vec::with_capacity(spec.length);
    for _ in 0..spec.length {
        let bit = (state >> (t1 - 1)) & 1;
        let fb = bit ^ ((state >> (t2 - 1)) & 1);
        out.push(bit as u8);
        state = ((state << 1) | fb) & mask;
    }
    Ok(out)
}

/// Root-raised-cosine filter spec.
#[derive(Debug, Clone, Copy)]
pub struct RrcSpec {
    pub rolloff: f64,
    pub symbol_rate: f64,
    pub samples_per_symbol: usize,
    pub num_taps: usize,
}

impl RrcSpec {
    pub fn new(rolloff: f64, symbol_rate: f64, samples_per_symbol: usize, num_taps: usize) -> Self {
        Self {
            rolloff,
            symbol_rate,
            samples_per_symbol,
            num_taps,
        }
    }
}

/// Closed-form RRC impulse response, unit energy, symmetric.
///
/// The singular points t=0 and |t|=T/(4 beta) use their analytic limits.
pub fn rrc_taps(spec: &RrcSpec) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&spec.rolloff) {
        return Err(Error::InvalidArgument(format!(
            "rolloff must be in [0,1], got {}",
            spec.rolloff
        )));
    }
    if spec.num_taps % 2 == 0 || spec.num_taps == 0 {
        return Err(Error::InvalidArgument("num_taps must be odd".into()));
    }
    if spec.samples_per_symbol < 2 {
        return Err(Error::InvalidArgument(
            "samples_per_symbol must be at least 2".into(),
        ));
    }
    let beta = spec.rolloff;
    let sps = spec.samples_per_symbol as f64;
    let mid = (spec.num_taps / 2) as i64;
    let mut h = Vec::with_capacity(spec.num_taps);
    for i in 0..spec.num_taps {
        let t = (i as i64 - mid) as f64 / sps; // in symbol periods
        let v = if t.abs() < 1e-12 {
            1.0 + beta * (4.0 / std::f64::consts::PI - 1.0)
        } else if beta > 0.0 && ((t.abs() - 1.0 / (4.0 * beta)).abs() < 1e-9) {
            (beta / 2f64.sqrt())
                * ((1.0 + 2.0 / std::f64::consts::PI)
                    * (std::f64::consts::PI / (4.0 * beta)).sin()
                    + (1.0 - 2.0 / std::f64::consts::PI)
                        * (std::f64::consts::PI / (4.0 * beta)).cos())
        } else {
            let pi = std::f64::consts::PI;
            let num = (pi * t * (1.0 - beta)).sin() + 4.0 * beta * t * (pi * t * (1.0 + beta)).cos();
            let den = pi * t * (1.0 - (4.0 * beta * t).powi(2));
            num / den
        };
        h.push(v);
    }
    let energy: f64 = h.iter().map(|x| x * x).sum();
    let s = energy.sqrt();
    for v in &mut h {
        *v /= s;
    }
    Ok(h)
}

/// Analytic RRC magnitude response (square root of raised cosine), unit passband.
pub fn rrc_freq_mag(f: f64, rolloff: f64, symbol_rate: f64) -> f64 {
    let t = 1.0 / symbol_rate;
    let af = f.abs();
    let f1 = (1.0 - rolloff) / (2.0 * t);
    let f2 = (1.0 + rolloff) / (2.0 * t);
    if af <= f1 {
        1.0
    } else if af <= f2 && rolloff > 0.0 {
        (0.5 * (1.0 + (std::f64::consts::PI * t / rolloff * (af - f1)).cos())).sqrt()
    } else {
        0.0
    }
}

/// Full linear convolution in the time domain (real taps).
///
/// No blocking, no transforms: the ground truth for every overlap-save
/// equivalence test in this crate.
pub fn convolve_direct(x: &Waveform, taps: &[f64]) -> Waveform {
    let h: Vec<Complex64> = taps.iter().map(|&t| Complex64::new(t, 0.0)).collect();
    convolve_direct_complex(x, &h)
}

/// Full linear convolution in the time domain (complex taps).
pub fn convolve_direct_complex(x: &Waveform, taps: &[Complex64]) -> Waveform {
    if x.samples.is_empty() || taps.is_empty() {
        return Waveform {
            samples: Vec::new(),
            sample_rate: x.sample_rate,
            start_index: x.start_index,
            purely_real: false,
        };
    }
    let n = x.samples.len() + taps.len() - 1;
    let mut out = vec![Complex64::default(); n];
    for (i, &s) in x.samples.iter().enumerate() {
        for (j, &h) in taps.iter().enumerate() {
            out[i + j] += s * h;
        }
    }
    Waveform {
        samples: out,
        sample_rate: x.sample_rate,
        start_index: x.start_index,
        purely_real: false,
    }
}
