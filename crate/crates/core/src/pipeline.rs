//! Real-time execution skeleton: each sample buffer is assigned to one of
//! N parallel worker lanes, cross-buffer continuity flows through overlap
//! events, and outputs are re-ordered by sequence number. The result is
//! bit-identical to a single-threaded run over the concatenated input for
//! any lane count.

use crate::{Error, Result};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::{Condvar, Mutex};
use std::time::Instant;

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub num_streams: usize,
    /// Total in-flight buffer budget across lanes.
    pub queue_depth: usize,
}

impl PipelineConfig {
    pub fn new(num_streams: usize) -> Self {
        Self {
            num_streams,
            queue_depth: 2 * num_streams.max(1),
        }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::new(5)
    }
}

/// Demodulated output of one buffer.
#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub seq: u64,
    /// Cold-start buffer; excluded from BER by default.
    pub warmup: bool,
    pub bits: Vec<u8>,
    /// Decided constellation indices (adaptive chains), for downstream
    /// phase-ambiguity resolution.
    pub symbol_indices: Option<Vec<u8>>,
}

/// A receiver chain that processes one buffer at a time.
///
/// `stage_parallel` must be a pure function of (seq, predecessor input
/// tail, buffer); it runs concurrently across buffers. `stage_sequential`
/// consumes the predecessor's continuity payload exactly once and produces
/// its own; the pipeline serializes it in seq order.
pub trait BufferChain: Sync {
    type Mid: Send + 'static;
    type Carry: Clone + Send + Sync + 'static;

    /// Input samples a buffer needs from its predecessor.
    fn overlap_len(&self) -> usize;
    /// Continuity payload for the cold start (zero-filled state).
    fn cold_carry(&self) -> Self::Carry;
    fn stage_parallel(&self, seq: u64, prev_tail: &[f64], body: &[f64]) -> Result<Self::Mid>;
    fn stage_sequential(
        &self,
        seq: u64,
        mid: Self::Mid,
        carry: &Self::Carry,
    ) -> Result<(ChainOutput, Self::Carry)>;
}

struct BoardInner<C> {
    slots: HashMap<u64, C>,
    signaled: HashSet<u64>,
    poison: Option<String>,
}

/// Continuity handoff: `signal(seq, payload)` publishes buffer seq's
/// payload exactly once; `wait_for_prev(seq)` blocks until the payload of
/// seq-1 is available and consumes it. seq 0 receives the cold-start state.
pub struct OverlapBoard<C> {
    cold: C,
    inner: Mutex<BoardInner<C>>,
    cv: Condvar,
}

impl<C: Clone> OverlapBoard<C> {
    pub fn new(cold: C) -> Self {
        Self {
            cold,
            inner: Mutex::new(BoardInner {
                slots: HashMap::new(),
                signaled: HashSet::new(),
                poison: None,
            }),
            cv: Condvar::new(),
        }
    }

    pub fn signal(&self, seq: u64, payload: C) -> Result<()> {
        let mut g = self.inner.lock().unwrap();
        if let Some(msg) = &g.poison {
            return Err(Error::PipelineFault(msg.clone()));
        }
        if !g.signaled.insert(seq) {
            let msg = format!("overlap event for seq {seq} signaled twice");
            g.poison = Some(msg.clone());
            self.cv.notify_all();
            return Err(Error::PipelineFault(msg));
        }
        g.slots.insert(seq, payload);
        self.cv.notify_all();
        Ok(())
    }

    /// Continuity payload for buffer `seq` (that of seq-1, consumed once).
    pub fn wait_for_prev(&self, seq: u64) -> Result<C> {
        if seq == 0 {
            return Ok(self.cold.clone());
        }
        let want = seq - 1;
        let mut g = self.inner.lock().unwrap();
        loop {
            if let Some(msg) = &g.poison {
                return Err(Error::PipelineFault(msg.clone()));
            }
            if let Some(c) = g.slots.remove(&want) {
                return Ok(c);
            }
            g = self.cv.wait(g).unwrap();
        }
    }

    pub fn poison(&self, msg: String) {
        let mut g = self.inner.lock().unwrap();
        if g.poison.is_none() {
            g.poison = Some(msg);
        }
        self.cv.notify_all();
    }

    pub fn poisoned(&self) -> Option<String> {
        self.inner.lock().unwrap().poison.clone()
    }
}

#[derive(Debug, Clone)]
pub struct ThroughputReport {
    pub buffers: u64,
    pub samples: u64,
    pub wall_seconds: f64,
    pub samples_per_second: f64,
    /// samples_per_second over the ADC rate.
    pub real_time_factor: f64,
    pub parallel_stage_seconds: f64,
    pub sequential_stage_seconds: f64,
}

impl ThroughputReport {
    /// Fraction of accumulated stage time spent in each stage.
    pub fn stage_shares(&self) -> (f64, f64) {
        let total = self.parallel_stage_seconds + self.sequential_stage_seconds;
        if total <= 0.0 {
            (0.0, 0.0)
        } else {
            (
                self.parallel_stage_seconds / total,
                self.sequential_stage_seconds / total,
            )
        }
    }
}

#[derive(Debug)]
pub struct PipelineRun {
    /// Outputs in seq order.
    pub outputs: Vec<ChainOutput>,
    pub report: ThroughputReport,
}

impl PipelineRun {
    /// Demodulated bits in stream order, warmup buffers excluded.
    pub fn collect_bits(&self, include_warmup: bool) -> Vec<u8> {
        let mut out = Vec::new();
        for o in &self.outputs {
            if o.warmup && !include_warmup {
                continue;
            }
            out.extend_from_slice(&o.bits);
        }
        out
    }

    pub fn collect_symbol_indices(&self, include_warmup: bool) -> Vec<u8> {
        let mut out = Vec::new();
        for o in &self.outputs {
            if o.warmup && !include_warmup {
                continue;
            }
            if let Some(idx) = &o.symbol_indices {
                out.extend_from_slice(idx);
            }
        }
        out
    }
}

/// Drive `chain` over the buffer stream with `cfg.num_streams` lanes.
///
/// Buffers must arrive with contiguous seq starting at 0; a gap faults the
/// pipeline. Any stage error poisons the overlap board, remaining work is
/// drained, and the fault is returned.
pub fn run_pipeline<C: BufferChain>(
    source: impl IntoIterator<Item = (u64, Vec<f64>)>,
    chain: &C,
    cfg: &PipelineConfig,
    adc_rate: f64,
) -> Result<PipelineRun> {
    if cfg.num_streams == 0 {
        return Err(Error::InvalidArgument("num_streams must be >= 1".into()));
    }
    let lanes = cfg.num_streams;
    let per_lane_depth = (cfg.queue_depth.div_ceil(lanes)).max(1);
    let overlap = chain.overlap_len();
    let board = OverlapBoard::new(chain.cold_carry());

    type LaneMsg = (u64, Vec<f64>, Vec<f64>); // seq, tail, body
    let mut senders = Vec::with_capacity(lanes);
    let mut receivers = Vec::with_capacity(lanes);
    for _ in 0..lanes {
        let (tx, rx) = crossbeam_channel::bounded::<LaneMsg>(per_lane_depth);
        senders.push(tx);
        receivers.push(rx);
    }
    let (out_tx, out_rx) = crossbeam_channel::unbounded::<(u64, ChainOutput, f64, f64)>();

    let started = Instant::now();
    let mut samples: u64 = 0;
    let mut buffers: u64 = 0;

    let result: Result<(Vec<ChainOutput>, f64, f64)> = std::thread::scope(|scope| {
        for rx in receivers {
            let board = &board;
            let out_tx = out_tx.clone();
            scope.spawn(move || {
                let mut faulted = board.poisoned().is_some();
                while let Ok((seq, tail, body)) = rx.recv() {
                    if faulted {
                        continue; // drain
                    }
                    let t0 = Instant::now();
                    let mid = match chain.stage_parallel(seq, &tail, &body) {
                        Ok(m) => m,
                        Err(e) => {
                            board.poison(format!("buffer {seq}: {e}"));
                            faulted = true;
                            continue;
                        }
                    };
                    let t_par = t0.elapsed().as_secs_f64();
                    let carry = match board.wait_for_prev(seq) {
                        Ok(c) => c,
                        Err(_) => {
                            faulted = true;
                            continue;
                        }
                    };
                    let t1 = Instant::now();
                    match chain.stage_sequential(seq, mid, &carry) {
                        Ok((out, next_carry)) => {
                            if board.signal(seq, next_carry).is_err() {
                                faulted = true;
                                continue;
                            }
                            let t_seq = t1.elapsed().as_secs_f64();
                            let _ = out_tx.send((seq, out, t_par, t_seq));
                        }
                        Err(e) => {
                            board.poison(format!("buffer {seq}: {e}"));
                            faulted = true;
                        }
                    }
                }
            });
        }
        drop(out_tx);

        // dispatcher
        let mut expected: u64 = 0;
        let mut tail = vec![0.0f64; overlap];
        for (seq, body) in source {
            if board.poisoned().is_some() {
                break;
            }
            if seq != expected {
                board.poison(format!("source gap: expected seq {expected}, got {seq}"));
                break;
            }
            expected += 1;
            samples += body.len() as u64;
            buffers += 1;
            let next_tail: Vec<f64> = if body.len() >= overlap {
                body[body.len() - overlap..].to_vec()
            } else {
                let mut t = tail.clone();
                t.extend_from_slice(&body);
                t[t.len() - overlap..].to_vec()
            };
            let msg = (seq, std::mem::replace(&mut tail, next_tail), body);
            if senders[(seq as usize) % lanes].send(msg).is_err() {
                break;
            }
        }
        drop(senders);

        // collect in seq order
        let mut pending: BTreeMap<u64, (ChainOutput, f64, f64)> = BTreeMap::new();
        let mut outputs = Vec::new();
        let mut par_s = 0.0;
        let mut seq_s = 0.0;
        let mut next = 0u64;
        while let Ok((seq, out, tp, ts)) = out_rx.recv() {
            pending.insert(seq, (out, tp, ts));
            while let Some((out, tp, ts)) = pending.remove(&next) {
                outputs.push(out);
                par_s += tp;
                seq_s += ts;
                next += 1;
            }
        }
        if let Some(msg) = board.poisoned() {
            return Err(Error::PipelineFault(msg));
        }
        if !pending.is_empty() {
            return Err(Error::PipelineFault("output stream has holes".into()));
        }
        Ok((outputs, par_s, seq_s))
    });

    let (outputs, par_s, seq_s) = result?;
    let wall = started.elapsed().as_secs_f64();
    let sps = if wall > 0.0 { samples as f64 / wall } else { 0.0 };
    Ok(PipelineRun {
        outputs,
        report: ThroughputReport {
            buffers,
            samples,
            wall_seconds: wall,
            samples_per_second: sps,
            real_time_factor: if adc_rate > 0.0 { sps / adc_rate } else { 0.0 },
            parallel_stage_seconds: par_s,
            sequential_stage_seconds: seq_s,
        },
    })
}


#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    /// Toy chain exercising the contract: the parallel stage mixes the tail
    /// into a local checksum (with an injected delay on some buffers), the
    /// sequential stage folds in a running carry.
    struct ToyChain {
        delay_odd_ms: u64,
    }

    impl BufferChain for ToyChain {
        type Mid = Vec<f64>;
        type Carry = f64;

        fn overlap_len(&self) -> usize {
            4
        }
        fn cold_carry(&self) -> f64 {
            0.0
        }
        fn stage_parallel(&self, seq: u64, prev_tail: &[f64], body: &[f64]) -> Result<Vec<f64>> {
            if self.delay_odd_ms > 0 && seq % 2 == 1 {
                std::thread::sleep(Duration::from_millis(self.delay_odd_ms));
            }
            let t: f64 = prev_tail.iter().sum();
            Ok(body.iter().map(|&x| x * 2.0 + t).collect())
        }
        fn stage_sequential(
            &self,
            seq: u64,
            mid: Vec<f64>,
            carry: &f64,
        ) -> Result<(ChainOutput, f64)> {
            let mut acc = *carry;
            let mut bits = Vec::new();
            for v in mid {
                acc = acc * 0.5 + v;
                bits.push(if acc.rem_euclid(2.0) > 1.0 { 1 } else { 0 });
            }
            Ok((
                ChainOutput {
                    seq,
                    warmup: seq == 0,
                    bits,
                    symbol_indices: None,
                },
                acc,
            ))
        }
    }

    fn source(n: usize, len: usize) -> Vec<(u64, Vec<f64>)> {
        (0..n)
            .map(|s| {
                (
                    s as u64,
                    (0..len).map(|i| ((s * len + i) as f64 * 0.37).sin()).collect(),
                )
            })
            .collect()
    }

    #[test]
    fn deterministic_across_stream_counts() {
        let chain = ToyChain { delay_odd_ms: 0 };
        let src = source(12, 64);
        let base = run_pipeline(src.clone(), &chain, &PipelineConfig::new(1), 4e9).unwrap();
        for lanes in [2, 5] {
            let run = run_pipeline(src.clone(), &chain, &PipelineConfig::new(lanes), 4e9).unwrap();
            assert_eq!(base.collect_bits(true), run.collect_bits(true), "lanes {lanes}");
        }
    }

    #[test]
    fn out_of_order_completion_still_ordered() {
        // odd buffers run slower; output order and content must not change
        let chain = ToyChain { delay_odd_ms: 5 };
        let src = source(10, 32);
        let fast = run_pipeline(src.clone(), &ToyChain { delay_odd_ms: 0 }, &PipelineConfig::new(1), 4e9).unwrap();
        let run = run_pipeline(src, &chain, &PipelineConfig::new(4), 4e9).unwrap();
        let seqs: Vec<u64> = run.outputs.iter().map(|o| o.seq).collect();
        assert_eq!(seqs, (0..10).collect::<Vec<u64>>());
        assert_eq!(fast.collect_bits(true), run.collect_bits(true));
    }

    #[test]
    fn source_gap_faults() {
        let chain = ToyChain { delay_odd_ms: 0 };
        let mut src = source(6, 16);
        src.remove(3);
        let err = run_pipeline(src, &chain, &PipelineConfig::new(2), 4e9).unwrap_err();
        assert!(matches!(err, Error::PipelineFault(_)), "{err}");
    }

    #[test]
    fn board_signal_then_wait() {
        let board = OverlapBoard::new(0.0f64);
        board.signal(0, 42.0).unwrap();
        assert_eq!(board.wait_for_prev(1).unwrap(), 42.0);
    }

    #[test]
    fn board_cold_start() {
        let board = OverlapBoard::new(7.5f64);
        assert_eq!(board.wait_for_prev(0).unwrap(), 7.5);
    }

    #[test]
    fn board_double_signal_faults() {
        let board = OverlapBoard::new(0.0f64);
        board.signal(3, 1.0).unwrap();
        assert!(board.signal(3, 2.0).is_err());
        assert!(board.poisoned().is_some());
    }

    #[test]
    fn board_poison_wakes_waiters() {
        let board = std::sync::Arc::new(OverlapBoard::new(0.0f64));
        let b2 = board.clone();
        let h = std::thread::spawn(move || b2.wait_for_prev(9));
        std::thread::sleep(Duration::from_millis(20));
        board.poison("test fault".into());
        assert!(h.join().unwrap().is_err());
    }

    #[test]
    fn chain_fault_propagates() {
        struct Failing;
        impl BufferChain for Failing {
            type Mid = ();
            type Carry = ();
            fn overlap_len(&self) -> usize {
                0
            }
            fn cold_carry(&self) {}
            fn stage_parallel(&self, seq: u64, _: &[f64], _: &[f64]) -> Result<()> {
                if seq == 2 {
                    Err(Error::ChainFault("injected".into()))
                } else {
                    Ok(())
                }
            }
            fn stage_sequential(&self, seq: u64, _: (), _: &()) -> Result<(ChainOutput, ())> {
                Ok((
                    ChainOutput {
                        seq,
                        warmup: false,
                        bits: vec![0],
                        symbol_indices: None,
                    },
                    (),
                ))
            }
        }
        let err = run_pipeline(source(6, 8), &Failing, &PipelineConfig::new(3), 4e9).unwrap_err();
        match err {
            Error::PipelineFault(msg) => assert!(msg.contains("injected"), "{msg}"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn empty_run_reports_zero() {
        let chain = ToyChain { delay_odd_ms: 0 };
        let run = run_pipeline(Vec::new(), &chain, &PipelineConfig::new(2), 4e9).unwrap();
        assert_eq!(run.report.buffers, 0);
        assert_eq!(run.report.real_time_factor, 0.0);
    }
}
