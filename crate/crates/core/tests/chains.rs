//! End-to-end receiver chain tests: noiseless error-free operation, seam
//! invisibility and determinism across lane counts.

use sdrx_core::channel::AdcConfig;
use sdrx_core::metrics::align_and_count;
use sdrx_core::pipeline::{run_pipeline, PipelineConfig};
use sdrx_core::runner::{capture_run, demodulate_and_count, reference_period};
use sdrx_core::rx_kk::{resolve_phase_ambiguity, KkChain, KkChainConfig};
use sdrx_core::rx_pam::{PamChain, PamChainConfig};
use sdrx_core::signal::Format;
use sdrx_core::tx::TxConfig;

fn noiseless_buffers(
    format: Format,
    num_buffers: usize,
) -> (TxConfig, AdcConfig, Vec<(u64, Vec<f64>)>) {
    let tx = TxConfig::for_format(format);
    let mut adc = AdcConfig::desk_scale();
    adc.quantize = false;
    let (buffers, _, adc_run) =
        capture_run(&tx, &adc, f64::INFINITY, 1, 0.0, num_buffers).unwrap();
    (tx, adc_run, buffers)
}

#[test]
fn noiseless_pam_formats_error_free() {
    for format in [Format::Pam2, Format::Pam4, Format::Pam8] {
        let (tx, adc, buffers) = noiseless_buffers(format, 4);
        let (_, bits, errors, _) = demodulate_and_count(&tx, &adc, buffers, 2).unwrap();
        let expect = 3 * (65536 / 2) * format.bits_per_symbol() as u64;
        assert_eq!(bits, expect, "{format:?}: bits counted");
        assert_eq!(errors, 0, "{format:?}: {errors} errors in {bits} bits");
    }
}

#[test]
fn noiseless_kk_formats_error_free() {
    for format in [Format::Qpsk, Format::Qam16] {
        let (tx, adc, buffers) = noiseless_buffers(format, 4);
        let (_, bits, errors, _) = demodulate_and_count(&tx, &adc, buffers, 2).unwrap();
        assert!(bits > 90_000, "{format:?}: only {bits} bits counted");
        assert_eq!(errors, 0, "{format:?}: {errors} errors in {bits} bits");
    }
}

#[test]
fn pam_seam_invisibility() {
    let (tx, adc, buffers) = noiseless_buffers(Format::Pam4, 4);
    let chain = PamChain::design(&tx, &adc, PamChainConfig::default()).unwrap();
    let streamed = run_pipeline(
        buffers.clone(),
        &chain,
        &PipelineConfig::new(2),
        adc.sample_rate,
    )
    .unwrap();
    // same samples as one giant buffer
    let mut concat = Vec::new();
    for (_, b) in &buffers {
        concat.extend_from_slice(b);
    }
    let single = run_pipeline(
        vec![(0u64, concat)],
        &chain,
        &PipelineConfig::new(1),
        adc.sample_rate,
    )
    .unwrap();
    assert_eq!(streamed.collect_bits(true), single.collect_bits(true));
}

#[test]
fn kk_seam_invisibility() {
    let (tx, adc, buffers) = noiseless_buffers(Format::Qpsk, 4);
    let chain = KkChain::design(&tx, &adc, KkChainConfig::default()).unwrap();
    let streamed = run_pipeline(
        buffers.clone(),
        &chain,
        &PipelineConfig::new(5),
        adc.sample_rate,
    )
    .unwrap();
    let mut concat = Vec::new();
    for (_, b) in &buffers {
        concat.extend_from_slice(b);
    }
    let single = run_pipeline(
        vec![(0u64, concat)],
        &chain,
        &PipelineConfig::new(1),
        adc.sample_rate,
    )
    .unwrap();
    assert_eq!(streamed.collect_bits(true), single.collect_bits(true));
    assert_eq!(
        streamed.collect_symbol_indices(true),
        single.collect_symbol_indices(true)
    );
}

#[test]
fn noisy_quantized_smoke() {
    // moderate OSNR through the full quantized path: both chains lock and
    // deliver reasonable BER
    let tx = TxConfig::for_format(Format::Pam4);
    let adc = AdcConfig::desk_scale();
    let (buffers, raw, adc_run) = capture_run(&tx, &adc, 20.0, 3, 0.0, 3).unwrap();
    assert!(raw.is_some());
    let (_, bits, errors, _) = demodulate_and_count(&tx, &adc_run, buffers, 2).unwrap();
    let ber = errors as f64 / bits as f64;
    assert!(ber < 1e-3, "PAM4 at OSNR 20: ber {ber}");

    let tx = TxConfig::for_format(Format::Qam16);
    let (buffers, _, adc_run) = capture_run(&tx, &adc, 24.0, 4, 0.0, 3).unwrap();
    let (_, bits, errors, _) = demodulate_and_count(&tx, &adc_run, buffers, 2).unwrap();
    let ber = errors as f64 / bits as f64;
    assert!(ber < 1e-2, "QAM16 at OSNR 24: ber {ber}");
    assert!(bits > 50_000);
}

#[test]
fn pam_chain_direct_alignment() {
    // bypass helpers: run the chain manually and align
    let (tx, adc, buffers) = noiseless_buffers(Format::Pam2, 3);
    let chain = PamChain::design(&tx, &adc, PamChainConfig::default()).unwrap();
    let run = run_pipeline(buffers, &chain, &PipelineConfig::new(1), adc.sample_rate).unwrap();
    let bits = run.collect_bits(false);
    let reference = reference_period();
    let a = align_and_count(&bits, &reference, 4096).unwrap();
    assert_eq!(a.bit_errors, 0);
}

#[test]
fn kk_conjugation_is_resolved() {
    // the single-sideband layout reconstructs mirrored constellations;
    // the ambiguity resolver must report and undo it
    let (tx, adc, buffers) = noiseless_buffers(Format::Qpsk, 3);
    let chain = KkChain::design(&tx, &adc, KkChainConfig::default()).unwrap();
    let run = run_pipeline(buffers, &chain, &PipelineConfig::new(1), adc.sample_rate).unwrap();
    let idx = run.collect_symbol_indices(false);
    let r = resolve_phase_ambiguity(&idx, chain.constellation(), &reference_period(), 4096).unwrap();
    assert_eq!(r.alignment.bit_errors, 0);
}
