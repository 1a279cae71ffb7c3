//! Experiment orchestration: back-to-back OSNR sweeps, continuous
//! multi-buffer stream runs with windowed Q records, replay from sample
//! dumps, and throughput benchmarks. Every run is a pure function of
//! (config, seed).

use crate::channel::{
    adc_capture, apply_dispersion, auto_full_scale, optical_bpf, osnr_noise_load, photodiode,
    read_buffers, AdcCapture, AdcConfig, ChannelConfig, SampleBuffer,
};
use crate::metrics::{q_from_counts, q_timeseries, QRecord, QValue};
use crate::pipeline::{run_pipeline, PipelineConfig, PipelineRun, ThroughputReport};
use crate::rx_kk::{resolve_phase_ambiguity, KkChain, KkChainConfig};
use crate::rx_pam::{PamChain, PamChainConfig};
use crate::signal::{prbs_bits, Format, PrbsSpec};
use crate::tx::{tx_waveform, TxConfig};
use crate::{Error, Result};
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    B2bSweep,
    StreamRun,
    Bench,
    Replay,
}

impl Mode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sweep" | "b2b_sweep" => Ok(Mode::B2bSweep),
            "stream" | "stream_run" => Ok(Mode::StreamRun),
            "bench" => Ok(Mode::Bench),
            "replay" => Ok(Mode::Replay),
            other => Err(Error::Config(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub format: Format,
    pub osnr_points: Vec<f64>,
    /// Symbols counted per sweep point (excluding warmup).
    pub num_symbols: usize,
    pub buffer_len: usize,
    pub num_streams: usize,
    pub seed: u64,
    /// Q-record window in stream seconds.
    pub window_len: f64,
    /// Buffers per stream/bench run.
    pub num_buffers: usize,
    pub quantize: bool,
    pub adc_bits: u32,
    pub cspr_db: Option<f64>,
    pub pam_mod_index: Option<f64>,
    pub cd_ps_per_nm: f64,
    pub dump: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(mode: Mode, format: Format) -> Self {
        Self {
            mode,
            format,
            osnr_points: vec![16.0],
            num_symbols: 1_000_000,
            buffer_len: 65_536,
            num_streams: 5,
            seed: 1,
            window_len: 21e-3,
            num_buffers: 100,
            quantize: true,
            adc_bits: 12,
            cspr_db: None,
            pam_mod_index: None,
            cd_ps_per_nm: 0.0,
            dump: None,
            input: None,
            out: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == Mode::B2bSweep && self.osnr_points.is_empty() {
            return Err(Error::Config("osnr_points must not be empty for sweeps".into()));
        }
        if self.mode == Mode::Replay && self.input.is_none() {
            return Err(Error::Config("replay mode needs input".into()));
        }
        self.tx_config().validate()?;
        self.adc_config().validate()?;
        Ok(())
    }

    pub fn tx_config(&self) -> TxConfig {
        let mut tx = TxConfig::for_format(self.format);
        if let Some(c) = self.cspr_db {
            tx.cspr_db = c;
        }
        if let Some(m) = self.pam_mod_index {
            tx.pam_mod_index = m;
        }
        tx
    }

    pub fn adc_config(&self) -> AdcConfig {
        AdcConfig {
            buffer_len: self.buffer_len,
            bits: self.adc_bits,
            quantize: self.quantize,
            ..AdcConfig::desk_scale()
        }
    }
}

/// One period of the reference pattern all experiments transmit.
pub fn reference_period() -> Vec<u8> {
    prbs_bits(&PrbsSpec::new(15, 0x7FFF, 32_767)).expect("fixed spec is valid")
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for sweep point `index` under the master seed.
pub fn point_seed(master: u64, index: usize) -> u64 {
    splitmix64(master ^ splitmix64(index as u64 + 1))
}

/// ADC samples per symbol for a format (at the 4 GS/s front end).
pub fn adc_sps(format: Format) -> usize {
    if format.is_pam() {
        2
    } else {
        4
    }
}

/// Synthesize, load noise, detect and capture: the full front end of one
/// run. Returns the captured float buffers (dequantized when quantizing).
pub fn capture_run(
    tx: &TxConfig,
    adc: &AdcConfig,
    osnr_db: f64,
    seed: u64,
    cd_ps_per_nm: f64,
    num_buffers: usize,
) -> Result<(Vec<(u64, Vec<f64>)>, Option<Vec<SampleBuffer>>, AdcConfig)> {
    let sps = adc_sps(tx.format);
    let symbols_needed = num_buffers * adc.buffer_len / sps + tx.rrc_span_symbols + 2;
    let bits = prbs_bits(&PrbsSpec::new(
        15,
        0x7FFF,
        symbols_needed * tx.format.bits_per_symbol(),
    ))?;
    let wave = tx_waveform(tx, &bits)?;
    let mut chan = ChannelConfig::new(osnr_db, seed);
    chan.cd_ps_per_nm = cd_ps_per_nm;
    let dispersed = apply_dispersion(&wave, &chan);
    let field = osnr_noise_load(&dispersed, &chan);
    let field = optical_bpf(&field, &chan);
    let detected = photodiode(&field, adc);
    let mut adc_run = adc.clone();
    adc_run.full_scale = auto_full_scale(&detected);
    if adc_run.quantize {
        let buffers = adc_capture(&detected, &adc_run)?;
        let floats = buffers
            .iter()
            .map(|b| (b.seq, b.to_floats(&adc_run)))
            .collect();
        Ok((floats, Some(buffers), adc_run))
    } else {
        let mut cap = AdcCapture::new(adc_run.clone(), detected.sample_rate)?;
        let floats = cap.push_unquantized(&detected);
        Ok((floats, None, adc_run))
    }
}

/// Demodulate captured buffers through the right chain and count errors
/// against the reference. Returns (bits counted, errors, error flags).
pub fn demodulate_and_count(
    tx: &TxConfig,
    adc: &AdcConfig,
    buffers: Vec<(u64, Vec<f64>)>,
    num_streams: usize,
) -> Result<(PipelineRun, u64, u64, Vec<bool>)> {
    let reference = reference_period();
    let pcfg = PipelineConfig::new(num_streams);
    if tx.format.is_pam() {
        let chain = PamChain::design(tx, adc, PamChainConfig::default())?;
        let run = run_pipeline(buffers, &chain, &pcfg, adc.sample_rate)?;
        let bits = run.collect_bits(false);
        let a = crate::metrics::align_and_count(&bits, &reference, 4096)?;
        let flags: Vec<bool> = bits
            .iter()
            .enumerate()
            .map(|(i, &b)| b != reference[(a.offset + i) % reference.len()])
            .collect();
        Ok((run, a.bits_counted, a.bit_errors, flags))
    } else {
        let chain = KkChain::design(tx, adc, KkChainConfig::default())?;
        let run = run_pipeline(buffers, &chain, &pcfg, adc.sample_rate)?;
        let indices = run.collect_symbol_indices(false);
        let r = resolve_phase_ambiguity(&indices, chain.constellation(), &reference, 4096)?;
        let flags: Vec<bool> = r
            .bits
            .iter()
            .enumerate()
            .map(|(i, &b)| b != reference[(r.alignment.offset + i) % reference.len()])
            .collect();
        Ok((run, r.alignment.bits_counted, r.alignment.bit_errors, flags))
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub format: Format,
    pub osnr_db: f64,
    pub bits: u64,
    pub errors: u64,
    pub ber: f64,
    pub q: QValue,
    pub status: String,
}

/// Back-to-back sweep: one row per OSNR point. Chain faults are recorded
/// in the status column and the sweep continues.
pub fn run_b2b_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let tx = cfg.tx_config();
    let adc = cfg.adc_config();
    let sps = adc_sps(cfg.format);
    let per_buffer = cfg.buffer_len / sps;
    let num_buffers = 1 + cfg.num_symbols.div_ceil(per_buffer);
    let mut rows = Vec::new();
    for (i, &osnr) in cfg.osnr_points.iter().enumerate() {
        let seed = point_seed(cfg.seed, i);
        let row = match sweep_point(&tx, &adc, osnr, seed, cfg, num_buffers) {
            Ok((bits, errors)) => SweepRow {
                format: cfg.format,
                osnr_db: osnr,
                bits,
                errors,
                ber: if bits > 0 { errors as f64 / bits as f64 } else { 0.0 },
                q: q_from_counts(errors, bits),
                status: "ok".into(),
            },
            Err(e) => SweepRow {
                format: cfg.format,
                osnr_db: osnr,
                bits: 0,
                errors: 0,
                ber: 0.0,
                q: QValue::Undefined,
                status: format!("{e}"),
            },
        };
        rows.push(row);
    }
    Ok(rows)
}

fn sweep_point(
    tx: &TxConfig,
    adc: &AdcConfig,
    osnr: f64,
    seed: u64,
    cfg: &ExperimentConfig,
    num_buffers: usize,
) -> Result<(u64, u64)> {
    let (buffers, _, adc_run) = capture_run(tx, adc, osnr, seed, cfg.cd_ps_per_nm, num_buffers)?;
    let (_, bits, errors, _) = demodulate_and_count(tx, &adc_run, buffers, cfg.num_streams)?;
    Ok((bits, errors))
}

/// Interpolated OSNR at which the sweep crosses `target_q_db`.
/// Rows must be sorted by OSNR; lower-bound Q values count at their bound.
pub fn required_osnr(rows: &[SweepRow], target_q_db: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.q.db().map(|q| (r.osnr_db, q)))
        .collect();
    for w in pts.windows(2) {
        let (o1, q1) = w[0];
        let (o2, q2) = w[1];
        if (q1 - target_q_db) * (q2 - target_q_db) <= 0.0 && q1 != q2 {
            return Some(o1 + (target_q_db - q1) * (o2 - o1) / (q2 - q1));
        }
    }
    None
}

#[derive(Debug)]
pub struct StreamRunResult {
    pub records: Vec<QRecord>,
    pub report: ThroughputReport,
    pub bits: u64,
    pub errors: u64,
}

/// Continuous multi-buffer run at fixed OSNR with windowed Q records.
/// Optionally dumps the captured buffers for replay.
pub fn run_stream_demo(cfg: &ExperimentConfig) -> Result<StreamRunResult> {
    cfg.validate()?;
    let tx = cfg.tx_config();
    let adc = cfg.adc_config();
    let osnr = *cfg.osnr_points.first().unwrap_or(&f64::INFINITY);
    let (buffers, raw, adc_run) = capture_run(
        &tx,
        &adc,
        osnr,
        point_seed(cfg.seed, 0),
        cfg.cd_ps_per_nm,
        cfg.num_buffers,
    )?;
    if let Some(path) = &cfg.dump {
        let raw = raw.ok_or_else(|| {
            Error::Config("dump requires quantize = true (codes are what is dumped)".into())
        })?;
        let mut f = std::fs::File::create(path)?;
        crate::channel::write_buffers(&mut f, &raw)?;
    }
    stream_metrics(&tx, &adc_run, buffers, cfg)
}

/// Replay a dump through the receiver. The capture scale is not part of
/// the dump format; the chains are scale-invariant so codes are replayed
/// at unit full scale.
pub fn run_replay(cfg: &ExperimentConfig) -> Result<StreamRunResult> {
    cfg.validate()?;
    let tx = cfg.tx_config();
    let path = cfg.input.as_ref().unwrap();
    let mut f = std::fs::File::open(path)?;
    let raw = read_buffers(&mut f)?;
    if raw.is_empty() {
        return Err(Error::Config("dump holds no buffers".into()));
    }
    let mut adc = cfg.adc_config();
    adc.buffer_len = raw[0].codes.len();
    adc.bits = raw[0].bits;
    adc.sample_rate = raw[0].sample_rate;
    adc.full_scale = 1.0;
    let buffers: Vec<(u64, Vec<f64>)> = raw.iter().map(|b| (b.seq, b.to_floats(&adc))).collect();
    stream_metrics(&tx, &adc, buffers, cfg)
}

fn stream_metrics(
    tx: &TxConfig,
    adc: &AdcConfig,
    buffers: Vec<(u64, Vec<f64>)>,
    cfg: &ExperimentConfig,
) -> Result<StreamRunResult> {
    let (run, bits, errors, flags) = demodulate_and_count(tx, adc, buffers, cfg.num_streams)?;
    let bit_rate = tx.symbol_rate * tx.format.bits_per_symbol() as f64;
    let records = q_timeseries(&flags, bit_rate, cfg.window_len, 0.0)?;
    Ok(StreamRunResult {
        records,
        report: run.report,
        bits,
        errors,
    })
}

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub chain: &'static str,
    pub num_streams: usize,
    pub buffers: u64,
    pub samples: u64,
    pub wall_seconds: f64,
    pub samples_per_second: f64,
    pub real_time_factor: f64,
    pub parallel_share: f64,
    pub sequential_share: f64,
}

/// Throughput benchmark: both chains at the requested lane counts over the
/// same captured input.
pub fn run_bench(cfg: &ExperimentConfig, lane_counts: &[usize]) -> Result<Vec<BenchRow>> {
    let adc = cfg.adc_config();
    let mut rows = Vec::new();
    for format in [Format::Pam4, Format::Qpsk] {
        let mut tx = TxConfig::for_format(format);
        if let Some(m) = cfg.pam_mod_index {
            if format.is_pam() {
                tx.pam_mod_index = m;
            }
        }
        let (buffers, _, adc_run) = capture_run(
            &tx,
            &adc,
            16.0,
            point_seed(cfg.seed, 7),
            0.0,
            cfg.num_buffers,
        )?;
        for &lanes in lane_counts {
            let report = if format.is_pam() {
                let chain = PamChain::design(&tx, &adc_run, PamChainConfig::default())?;
                run_pipeline(
                    buffers.clone(),
                    &chain,
                    &PipelineConfig::new(lanes),
                    adc_run.sample_rate,
                )?
                .report
            } else {
                let chain = KkChain::design(&tx, &adc_run, KkChainConfig::default())?;
                run_pipeline(
                    buffers.clone(),
                    &chain,
                    &PipelineConfig::new(lanes),
                    adc_run.sample_rate,
                )?
                .report
            };
            let (p, s) = report.stage_shares();
            rows.push(BenchRow {
                chain: if format.is_pam() { "pam" } else { "kk" },
                num_streams: lanes,
                buffers: report.buffers,
                samples: report.samples,
                wall_seconds: report.wall_seconds,
                samples_per_second: report.samples_per_second,
                real_time_factor: report.real_time_factor,
                parallel_share: p,
                sequential_share: s,
            });
        }
    }
    Ok(rows)
}

/// Stable CSV schema for sweeps.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("format,osnr_db,bits,errors,ber,q_db,status\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{:.6e},{},{}\n",
            r.format.name(),
            r.osnr_db,
            r.bits,
            r.errors,
            r.ber,
            r.q,
            r.status
        ));
    }
    s
}

/// Stable CSV schema for Q time series.
pub fn timeseries_csv(records: &[QRecord]) -> String {
    let mut s = String::from("window_start_s,bits,errors,ber,q_db\n");
    for r in records {
        s.push_str(&format!(
            "{:.9},{},{},{:.6e},{}\n",
            r.window_start, r.bits_counted, r.bit_errors, r.ber, r.q
        ));
    }
    s
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s =
        String::from("chain,num_streams,buffers,samples,wall_s,samples_per_s,real_time_factor,parallel_share,sequential_share\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{:.4},{:.3e},{:.4},{:.3},{:.3}\n",
            r.chain,
            r.num_streams,
            r.buffers,
            r.samples,
            r.wall_seconds,
            r.samples_per_second,
            r.real_time_factor,
            r.parallel_share,
            r.sequential_share
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_seed_varies() {
        assert_ne!(point_seed(1, 0), point_seed(1, 1));
        assert_ne!(point_seed(1, 0), point_seed(2, 0));
        assert_eq!(point_seed(5, 3), point_seed(5, 3));
    }

    #[test]
    fn required_osnr_interpolates() {
        let mk = |osnr: f64, q: f64| SweepRow {
            format: Format::Pam4,
            osnr_db: osnr,
            bits: 1000,
            errors: 10,
            ber: 0.01,
            q: QValue::Db(q),
            status: "ok".into(),
        };
        let rows = vec![mk(10.0, 6.0), mk(12.0, 8.0), mk(14.0, 10.0)];
        let x = required_osnr(&rows, 8.4).unwrap();
        assert!((x - 12.4).abs() < 1e-9, "{x}");
        assert!(required_osnr(&rows, 11.0).is_none());
    }

    #[test]
    fn csv_schemas() {
        let rows = vec![SweepRow {
            format: Format::Qpsk,
            osnr_db: 5.0,
            bits: 100,
            errors: 1,
            ber: 0.01,
            q: QValue::Db(7.33),
            status: "ok".into(),
        }];
        let csv = sweep_csv(&rows);
        assert!(csv.starts_with("format,osnr_db,bits,errors,ber,q_db,status\n"));
        assert!(csv.contains("qpsk,5,100,1"));
        let ts = timeseries_csv(&[]);
        assert_eq!(ts, "window_start_s,bits,errors,ber,q_db\n");
    }
}
