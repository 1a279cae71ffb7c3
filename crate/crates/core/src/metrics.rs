//! BER counting against the PRBS reference, Gaussian Q-factor conversion,
//! and the windowed Q time series used by the streaming experiments.

use crate::{Error, Result};
use statrs::function::erf::{erfc, erfc_inv};

/// Q-factor derived from a counted BER.
///
/// Zero-error windows report the lower bound Q(1/bits); chance-level BER
/// has no meaningful Q.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QValue {
    Db(f64),
    LowerBound(f64),
    Undefined,
}

impl QValue {
    /// Numeric value usable for comparisons; lower bounds count as their bound.
    pub fn db(&self) -> Option<f64> {
        match self {
            QValue::Db(v) | QValue::LowerBound(v) => Some(*v),
            QValue::Undefined => None,
        }
    }
}

impl std::fmt::Display for QValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            QValue::Db(v) => write!(f, "{v:.3}"),
            QValue::LowerBound(v) => write!(f, ">{v:.3}"),
            QValue::Undefined => write!(f, "nan"),
        }
    }
}

/// Q_dB = 20 log10( sqrt(2) * erfc^-1(2 BER) ) for BER in (0, 0.5).
pub fn q_from_ber(ber: f64) -> QValue {
    if !(0.0..0.5).contains(&ber) || ber == 0.0 {
        return QValue::Undefined;
    }
    let q_lin = 2f64.sqrt() * erfc_inv(2.0 * ber);
    QValue::Db(20.0 * q_lin.log10())
}

/// Forward map for round-trip checks: BER at a given Q in dB.
pub fn ber_from_q_db(q_db: f64) -> f64 {
    let q_lin = 10f64.powf(q_db / 20.0);
    0.5 * erfc(q_lin / 2f64.sqrt())
}

/// Q-factor for a counted (errors, bits) pair, with the zero-error sentinel.
pub fn q_from_counts(errors: u64, bits: u64) -> QValue {
    if bits == 0 {
        return QValue::Undefined;
    }
    if errors == 0 {
        // lower bound: the Q corresponding to one error in `bits`
        match q_from_ber(1.0 / bits as f64) {
            QValue::Db(v) => QValue::LowerBound(v),
            other => other,
        }
    } else {
        q_from_ber(errors as f64 / bits as f64)
    }
}

/// Result of aligning a received bit stream to the periodic reference.
#[derive(Debug, Clone, Copy)]
pub struct Alignment {
    /// Reference phase: received[i] corresponds to reference[(offset + i) % period].
    pub offset: usize,
    pub bit_errors: u64,
    pub bits_counted: u64,
}

impl Alignment {
    pub fn ber(&self) -> f64 {
        if self.bits_counted == 0 {
            0.0
        } else {
            self.bit_errors as f64 / self.bits_counted as f64
        }
    }
}

/// Find the reference offset maximizing correlation over the first
/// `window` bits, then count errors over the whole received stream.
///
/// `reference_period` is one full period of the reference sequence. Fails
/// with `SyncFailed` when no offset clears the chance-level threshold.
pub fn align_and_count(
    received: &[u8],
    reference_period: &[u8],
    window: usize,
) -> Result<Alignment> {
    let period = reference_period.len();
    if period == 0 {
        return Err(Error::InvalidArgument("empty reference".into()));
    }
    let w = window.min(received.len());
    if w < 64 {
        return Err(Error::InvalidArgument(format!(
            "alignment window too short ({w} bits)"
        )));
    }
    // pack the window into u64 words for popcount scoring
    let words = w.div_ceil(64);
    let mut rx = vec![0u64; words];
    for (i, &b) in received[..w].iter().enumerate() {
        if b != 0 {
            rx[i / 64] |= 1 << (i % 64);
        }
    }
    let mut best_offset = 0usize;
    let mut best_matches = 0u32;
    let mut refw = vec![0u64; words];
    for offset in 0..period {
        for v in refw.iter_mut() {
            *v = 0;
        }
        for i in 0..w {
            let rb = reference_period[(offset + i) % period];
            if rb != 0 {
                refw[i / 64] |= 1 << (i % 64);
            }
        }
        let tail_mask = if w % 64 == 0 { !0u64 } else { (1u64 << (w % 64)) - 1 };
        let mut mism = 0u32;
        for (j, (a, b)) in rx.iter().zip(refw.iter()).enumerate() {
            let mut x = a ^ b;
            if j == words - 1 {
                x &= tail_mask;
            }
            mism += x.count_ones();
        }
        let matches = w as u32 - mism;
        if matches > best_matches {
            best_matches = matches;
            best_offset = offset;
        }
    }
    // chance floor: mean w/2, sigma sqrt(w)/2; demand a 6-sigma peak
    let threshold = w as f64 / 2.0 + 3.0 * (w as f64).sqrt();
    if (best_matches as f64) < threshold {
        return Err(Error::SyncFailed(format!(
            "best correlation {best_matches}/{w} below threshold {threshold:.0}"
        )));
    }
    let mut errors = 0u64;
    for (i, &b) in received.iter().enumerate() {
        if b != reference_period[(best_offset + i) % period] {
            errors += 1;
        }
    }
    Ok(Alignment {
        offset: best_offset,
        bit_errors: errors,
        bits_counted: received.len() as u64,
    })
}

/// Per-window BER/Q measurement.
#[derive(Debug, Clone)]
pub struct QRecord {
    pub window_start: f64,
    pub window_len: f64,
    pub bits_counted: u64,
    pub bit_errors: u64,
    pub ber: f64,
    pub q: QValue,
}

/// Partition an aligned error stream into windows of `window_len` stream
/// seconds at `bit_rate` bits/s. The trailing partial window is dropped.
pub fn q_timeseries(
    error_flags: &[bool],
    bit_rate: f64,
    window_len: f64,
    start_time: f64,
) -> Result<Vec<QRecord>> {
    if !(window_len > 0.0) {
        return Err(Error::InvalidArgument("window_len must be positive".into()));
    }
    let bits_per_window = (window_len * bit_rate).round() as usize;
    if bits_per_window == 0 {
        return Err(Error::InvalidArgument("window shorter than one bit".into()));
    }
    let mut out = Vec::new();
    let mut idx = 0usize;
    let mut win = 0usize;
    while idx + bits_per_window <= error_flags.len() {
        let errors = error_flags[idx..idx + bits_per_window]
            .iter()
            .filter(|&&e| e)
            .count() as u64;
        let bits = bits_per_window as u64;
        out.push(QRecord {
            window_start: start_time + win as f64 * window_len,
            window_len,
            bits_counted: bits,
            bit_errors: errors,
            ber: errors as f64 / bits as f64,
            q: q_from_counts(errors, bits),
        });
        idx += bits_per_window;
        win += 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{prbs_bits, PrbsSpec};

    #[test]
    fn q_at_1e3_is_9_80() {
        match q_from_ber(1e-3) {
            QValue::Db(v) => assert!((v - 9.80).abs() < 0.01, "{v}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn q_round_trip_at_8_4() {
        let ber = ber_from_q_db(8.4);
        let back = q_from_ber(ber);
        match back {
            QValue::Db(v) => assert!((v - 8.4).abs() < 1e-9),
            other => panic!("{other:?}"),
        }
        // the erfc-oracle value itself
        assert!((ber - 4.2e-3).abs() / 4.2e-3 < 0.02, "ber {ber}");
    }

    #[test]
    fn q_sentinels() {
        assert_eq!(q_from_ber(0.5), QValue::Undefined);
        assert_eq!(q_from_ber(0.7), QValue::Undefined);
        match q_from_counts(0, 1_000_000) {
            QValue::LowerBound(v) => assert!(v > 0.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn q_monotone_decreasing() {
        let mut last = f64::INFINITY;
        for &ber in &[1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 0.1, 0.3, 0.49] {
            let q = match q_from_ber(ber) {
                QValue::Db(v) => v,
                other => panic!("{other:?}"),
            };
            assert!(q < last, "ber {ber}");
            last = q;
        }
    }

    #[test]
    fn align_exact_shift() {
        let reference = prbs_bits(&PrbsSpec::default_with_len(32767)).unwrap();
        let shift = 17usize;
        let rx: Vec<u8> = (0..20_000)
            .map(|i| reference[(shift + i) % reference.len()])
            .collect();
        let a = align_and_count(&rx, &reference, 4096).unwrap();
        assert_eq!(a.offset, shift);
        assert_eq!(a.bit_errors, 0);
        assert_eq!(a.bits_counted, 20_000);
    }

    #[test]
    fn align_counts_single_flip() {
        let reference = prbs_bits(&PrbsSpec::default_with_len(32767)).unwrap();
        let mut rx: Vec<u8> = (0..100_000)
            .map(|i| reference[(5 + i) % reference.len()])
            .collect();
        rx[60_000] ^= 1;
        let a = align_and_count(&rx, &reference, 4096).unwrap();
        assert_eq!(a.bit_errors, 1);
        assert!((a.ber() - 1e-5).abs() < 1e-9);
    }

    #[test]
    fn align_random_bits_fails_sync() {
        let reference = prbs_bits(&PrbsSpec::default_with_len(32767)).unwrap();
        // a different PRBS order is uncorrelated with the reference
        let rx = prbs_bits(&PrbsSpec::new(23, 0x55_5555, 8192)).unwrap();
        assert!(matches!(
            align_and_count(&rx, &reference, 4096),
            Err(Error::SyncFailed(_))
        ));
    }

    #[test]
    fn align_shift_consistency() {
        let reference = prbs_bits(&PrbsSpec::default_with_len(32767)).unwrap();
        let rx: Vec<u8> = (0..30_000)
            .map(|i| reference[(100 + i) % reference.len()])
            .collect();
        let a = align_and_count(&rx, &reference, 4096).unwrap();
        let b = align_and_count(&rx[7..], &reference, 4096).unwrap();
        assert_eq!((a.offset + 7) % reference.len(), b.offset);
    }

    #[test]
    fn timeseries_partitioning() {
        // 63 ms of bits at 1 kbit/s in 21 ms windows -> 3 records
        let flags = vec![false; 63];
        let recs = q_timeseries(&flags, 1000.0, 21e-3, 0.0).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].bits_counted, 21);
        assert!((recs[2].window_start - 42e-3).abs() < 1e-12);
    }

    #[test]
    fn timeseries_burst_locality() {
        let mut flags = vec![false; 300];
        for i in 110..120 {
            flags[i] = true;
        }
        let recs = q_timeseries(&flags, 100.0, 1.0, 0.0).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].bit_errors, 0);
        assert_eq!(recs[1].bit_errors, 10);
        assert_eq!(recs[2].bit_errors, 0);
    }

    #[test]
    fn window_errors_sum_to_total() {
        let reference = prbs_bits(&PrbsSpec::default_with_len(32767)).unwrap();
        let mut rx: Vec<u8> = (0..50_000).map(|i| reference[i % reference.len()]).collect();
        for i in (0..rx.len()).step_by(997) {
            rx[i] ^= 1;
        }
        let a = align_and_count(&rx, &reference, 4096).unwrap();
        let flags: Vec<bool> = rx
            .iter()
            .enumerate()
            .map(|(i, &b)| b != reference[(a.offset + i) % reference.len()])
            .collect();
        let recs = q_timeseries(&flags, 10_000.0, 1e-3, 0.0).unwrap();
        let sum: u64 = recs.iter().map(|r| r.bit_errors).sum();
        let counted: u64 = recs.iter().map(|r| r.bits_counted).sum();
        // equality over the windowed region (trailing partial dropped)
        let expect: u64 = flags[..counted as usize].iter().filter(|&&e| e).count() as u64;
        assert_eq!(sum, expect);
        assert_eq!(a.bit_errors as usize, flags.iter().filter(|&&e| e).count());
    }
}
