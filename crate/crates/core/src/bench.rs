//! Two timing experiments: an echo service answered one client at a time
//! versus one thread per client, and serial versus row-block parallel
//! integer matrix multiplication.

use std::fmt::Write as _;
use std::ops::Range;
use std::sync::{Arc, Barrier, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::channel::Rng;
use crate::relay::{Client, ClientError};
use crate::transport::{listen, FrameTransport, StreamEndpoint, StreamListener, TransportError};
use crate::wire::{negotiate, HandshakeParams, Message};

const IO_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServiceMode {
    Sequential,
    Concurrent,
}

impl ServiceMode {
    pub fn name(self) -> &'static str {
        match self {
            ServiceMode::Sequential => "sequential",
            ServiceMode::Concurrent => "concurrent",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchMode {
    Sequential,
    Concurrent,
    Both,
}

impl BenchMode {
    pub fn modes(self) -> &'static [ServiceMode] {
        match self {
            BenchMode::Sequential => &[ServiceMode::Sequential],
            BenchMode::Concurrent => &[ServiceMode::Concurrent],
            BenchMode::Both => &[ServiceMode::Sequential, ServiceMode::Concurrent],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchConfig {
    pub n_clients: usize,
    pub work_ms: u64,
    pub mode: BenchMode,
    pub repetitions: usize,
}

pub const MIN_REPETITIONS: usize = 3;

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            n_clients: 8,
            work_ms: 50,
            mode: BenchMode::Both,
            repetitions: MIN_REPETITIONS,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.n_clients == 0 {
            return Err(BenchError::Config("n_clients must be at least 1".into()));
        }
        if self.repetitions < MIN_REPETITIONS {
            return Err(BenchError::Config(format!(
                "repetitions must be at least {MIN_REPETITIONS}, got {}",
                self.repetitions
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid bench config: {0}")]
    Config(String),
    #[error("responder: {0}")]
    Transport(#[from] TransportError),
    #[error("client {index} failed its echo round trip: {reason}")]
    Client { index: usize, reason: String },
    #[error("responder failed: {0}")]
    Responder(String),
}

/// Timings of one service mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeReport {
    pub mode: ServiceMode,
    /// Wall-clock time from releasing all clients to the last reply, per repetition.
    pub total_ms: Vec<f64>,
    pub median_total_ms: f64,
    /// Server-side service time of each request, from the median repetition.
    pub per_client_ms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub sequential: Option<ModeReport>,
    pub concurrent: Option<ModeReport>,
}

impl BenchReport {
    /// Sequential median over concurrent median, when both ran.
    pub fn speedup(&self) -> Option<f64> {
        match (&self.sequential, &self.concurrent) {
            (Some(s), Some(c)) if c.median_total_ms > 0.0 => Some(s.median_total_ms / c.median_total_ms),
            _ => None,
        }
    }

    pub fn modes(&self) -> impl Iterator<Item = &ModeReport> {
        self.sequential.iter().chain(self.concurrent.iter())
    }

    /// `key=value` lines.
    pub fn to_kv(&self) -> String {
        let c = &self.config;
        let mut out = format!(
            "clients={} work_ms={} repetitions={}\n",
            c.n_clients, c.work_ms, c.repetitions
        );
        for m in self.modes() {
            let name = m.mode.name();
            let totals: Vec<_> = m.total_ms.iter().map(|t| format!("{t:.3}")).collect();
            let per: Vec<_> = m.per_client_ms.iter().map(|t| format!("{t:.3}")).collect();
            let _ = writeln!(out, "{name}_median_ms={:.3}", m.median_total_ms);
            let _ = writeln!(out, "{name}_total_ms={}", totals.join(","));
            let _ = writeln!(out, "{name}_per_client_ms={}", per.join(","));
        }
        if let Some(s) = self.speedup() {
            let _ = writeln!(out, "speedup={s:.3}");
        }
        out
    }
}

impl ModeReport {
    /// `rep,total_ms` rows with a header, reps numbered from 1.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rep,total_ms\n");
        for (i, t) in self.total_ms.iter().enumerate() {
            let _ = writeln!(out, "{},{t:.3}", i + 1);
        }
        out
    }
}

/// Median of a non-empty sample; the mean of the middle pair for even sizes.
pub fn median(samples: &[f64]) -> f64 {
    assert!(!samples.is_empty(), "median of empty sample");
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

pub fn run_service_bench(config: &BenchConfig) -> Result<BenchReport, BenchError> {
    config.validate()?;
    let mut report = BenchReport {
        config: *config,
        sequential: None,
        concurrent: None,
    };
    for &mode in config.mode.modes() {
        let r = run_mode(config, mode)?;
        match mode {
            ServiceMode::Sequential => report.sequential = Some(r),
            ServiceMode::Concurrent => report.concurrent = Some(r),
        }
    }
    Ok(report)
}

fn run_mode(config: &BenchConfig, mode: ServiceMode) -> Result<ModeReport, BenchError> {
    let mut reps = Vec::with_capacity(config.repetitions);
    for _ in 0..config.repetitions {
        reps.push(run_once(config, mode)?);
    }
    let total_ms: Vec<f64> = reps.iter().map(|r| r.0).collect();
    let median_total_ms = median(&total_ms);
    let closest = reps
        .iter()
        .min_by(|a, b| (a.0 - median_total_ms).abs().total_cmp(&(b.0 - median_total_ms).abs()))
        .expect("at least one repetition");
    Ok(ModeReport {
        mode,
        total_ms,
        median_total_ms,
        per_client_ms: closest.1.clone(),
    })
}

/// One repetition: returns the total and the per-request service times.
fn run_once(config: &BenchConfig, mode: ServiceMode) -> Result<(f64, Vec<f64>), BenchError> {
    let listener = listen("127.0.0.1:0")?;
    let addr = listener.local_addr().to_string();
    let work = Duration::from_millis(config.work_ms);
    let n = config.n_clients;
    let service = Arc::new(Mutex::new(Vec::with_capacity(n)));

    let responder = {
        let service = service.clone();
        thread::spawn(move || respond(listener, mode, n, work, service))
    };

    // Everyone connects first. The handshake stays inside the timed region
    // because a sequential server only answers HELLO from its current client.
    let start_gate = Arc::new(Barrier::new(n + 1));
    let clients: Vec<_> = (0..n)
        .map(|index| {
            let addr = addr.clone();
            let gate = start_gate.clone();
            thread::spawn(move || -> Result<(), BenchError> {
                let fail = |reason: String| BenchError::Client { index, reason };
                let conn = StreamEndpoint::connect(&addr, IO_TIMEOUT);
                gate.wait();
                let mut client = conn
                    .map_err(ClientError::from)
                    .and_then(|c| Client::handshake(c, HandshakeParams::default(), IO_TIMEOUT))
                    .map_err(|e| fail(e.to_string()))?;
                let body = format!("req-{index}");
                client.ping(body.as_bytes(), IO_TIMEOUT).map_err(|e| fail(e.to_string()))?;
                let _ = client.bye();
                Ok(())
            })
        })
        .collect();
    start_gate.wait();
    let start = Instant::now();
    let mut first_err = None;
    for c in clients {
        let res = c.join().unwrap_or_else(|_| Err(BenchError::Responder("client thread panicked".into())));
        if let Err(e) = res {
            first_err.get_or_insert(e);
        }
    }
    let total = ms(start.elapsed());
    let responder_res = responder
        .join()
        .unwrap_or_else(|_| Err(BenchError::Responder("responder panicked".into())));
    if let Some(e) = first_err {
        return Err(e);
    }
    responder_res?;
    let per_client = service.lock().unwrap().clone();
    Ok((total, per_client))
}

/// Serves exactly `n` connections: HELLO → HELLO_ACK, then each ECHO is
/// answered after sleeping `work`.
fn respond(
    listener: StreamListener,
    mode: ServiceMode,
    n: usize,
    work: Duration,
    service: Arc<Mutex<Vec<f64>>>,
) -> Result<(), BenchError> {
    let mut handlers = Vec::new();
    for _ in 0..n {
        let conn = listener
            .accept_timeout(IO_TIMEOUT)?
            .ok_or(BenchError::Transport(TransportError::TimedOut))?;
        match mode {
            ServiceMode::Sequential => handle_connection(conn, work, &service)?,
            ServiceMode::Concurrent => {
                let service = service.clone();
                handlers.push(thread::spawn(move || handle_connection(conn, work, &service)));
            }
        }
    }
    for h in handlers {
        h.join()
            .unwrap_or_else(|_| Err(BenchError::Responder("handler panicked".into())))?;
    }
    Ok(())
}

fn handle_connection(mut conn: StreamEndpoint, work: Duration, service: &Mutex<Vec<f64>>) -> Result<(), BenchError> {
    loop {
        let frame = match conn.recv_frame(IO_TIMEOUT) {
            Ok(f) => f,
            Err(e) if e.is_disconnect() => return Ok(()),
            Err(e) => return Err(e.into()),
        };
        let reply = match Message::from_frame(&frame) {
            Ok(Message::Hello(p)) => match negotiate(p, HandshakeParams::default()) {
                Ok(agreed) => Message::HelloAck(agreed),
                Err(e) => return Err(BenchError::Responder(e.to_string())),
            },
            Ok(Message::Echo(body)) => {
                let started = Instant::now();
                thread::sleep(work);
                conn.send_frame(&Message::EchoReply(body).to_frame())?;
                service.lock().unwrap().push(ms(started.elapsed()));
                continue;
            }
            Ok(Message::Bye) => return Ok(()),
            Ok(other) => return Err(BenchError::Responder(format!("unexpected {:?}", other.kind()))),
            Err(e) => return Err(BenchError::Responder(e.to_string())),
        };
        conn.send_frame(&reply.to_frame())?;
    }
}

/// Row-major matrix of 64-bit integers. Products wrap on overflow.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MatrixError {
    #[error("{rows}x{cols} matrix needs {} elements, got {len}", rows * cols)]
    Shape { rows: usize, cols: usize, len: usize },
    #[error("cannot multiply {a_rows}x{a_cols} by {b_rows}x{b_cols}")]
    DimensionMismatch {
        a_rows: usize,
        a_cols: usize,
        b_rows: usize,
        b_cols: usize,
    },
    #[error("thread count must be at least 1")]
    ZeroThreads,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<i64>) -> Result<Matrix, MatrixError> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(MatrixError::Shape {
                rows,
                cols,
                len: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[i64]]) -> Result<Matrix, MatrixError> {
        let cols = rows.first().map_or(0, |r| r.len());
        let data: Vec<i64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(MatrixError::Shape {
                rows: rows.len(),
                cols,
                len: data.len(),
            });
        }
        Matrix::new(rows.len(), cols, data)
    }

    pub fn identity(n: usize) -> Matrix {
        let mut data = vec![0; n * n];
        for i in 0..n {
            data[i * n + i] = 1;
        }
        Matrix { rows: n, cols: n, data }
    }

    /// Entries uniform in `-bound..=bound`.
    pub fn random(rows: usize, cols: usize, bound: u32, rng: &mut Rng) -> Matrix {
        let span = 2 * bound as u64 + 1;
        let data = (0..rows * cols)
            .map(|_| rng.below(span) as i64 - bound as i64)
            .collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[i64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> i64 {
        self.data[r * self.cols + c]
    }

    fn check_product(&self, b: &Matrix) -> Result<(), MatrixError> {
        if self.cols != b.rows {
            return Err(MatrixError::DimensionMismatch {
                a_rows: self.rows,
                a_cols: self.cols,
                b_rows: b.rows,
                b_cols: b.cols,
            });
        }
        Ok(())
    }

    /// Fills `out` with rows `rows` of `self × b`.
    fn multiply_rows(&self, b: &Matrix, rows: Range<usize>, out: &mut [i64]) {
        let n = b.cols;
        for (i, out_row) in rows.zip(out.chunks_mut(n)) {
            out_row.fill(0);
            for k in 0..self.cols {
                let a_ik = self.data[i * self.cols + k];
                let b_row = &b.data[k * n..(k + 1) * n];
                for (o, &b_kj) in out_row.iter_mut().zip(b_row) {
                    *o = o.wrapping_add(a_ik.wrapping_mul(b_kj));
                }
            }
        }
    }
}

pub fn matmul_serial(a: &Matrix, b: &Matrix) -> Result<Matrix, MatrixError> {
    a.check_product(b)?;
    let mut data = vec![0; a.rows * b.cols];
    a.multiply_rows(b, 0..a.rows, &mut data);
    Ok(Matrix {
        rows: a.rows,
        cols: b.cols,
        data,
    })
}

/// Splits `rows` into `threads` contiguous blocks whose sizes differ by at
/// most one, larger blocks first. Blocks may be empty when threads > rows.
pub fn row_partition(rows: usize, threads: usize) -> Vec<Range<usize>> {
    if threads == 0 {
        return Vec::new();
    }
    let (base, extra) = (rows / threads, rows % threads);
    let mut start = 0;
    (0..threads)
        .map(|t| {
            let len = base + usize::from(t < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

/// Each of `threads` workers computes one block of output rows and writes
/// only those rows.
pub fn matmul_parallel(a: &Matrix, b: &Matrix, threads: usize) -> Result<Matrix, MatrixError> {
    a.check_product(b)?;
    if threads == 0 {
        return Err(MatrixError::ZeroThreads);
    }
    let n = b.cols;
    let mut data = vec![0; a.rows * n];
    thread::scope(|s| {
        let mut rest = data.as_mut_slice();
        for block in row_partition(a.rows, threads) {
            let (mine, tail) = rest.split_at_mut(block.len() * n);
            rest = tail;
            if !block.is_empty() {
                s.spawn(move || a.multiply_rows(b, block, mine));
            }
        }
    });
    Ok(Matrix {
        rows: a.rows,
        cols: n,
        data,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatmulTiming {
    pub n: usize,
    pub threads: usize,
    pub serial_ms: Vec<f64>,
    pub parallel_ms: Vec<f64>,
    /// Parallel result equalled the serial one (only when checked).
    pub matches: Option<bool>,
}

impl MatmulTiming {
    pub fn speedup(&self) -> f64 {
        median(&self.serial_ms) / median(&self.parallel_ms)
    }

    pub fn to_kv(&self) -> String {
        let mut out = format!(
            "n={} threads={}\nserial_median_ms={:.3}\nparallel_median_ms={:.3}\nspeedup={:.3}\n",
            self.n,
            self.threads,
            median(&self.serial_ms),
            median(&self.parallel_ms),
            self.speedup()
        );
        if let Some(ok) = self.matches {
            let _ = writeln!(out, "check={}", if ok { "ok" } else { "mismatch" });
        }
        out
    }
}

/// Times serial and parallel products of two random n×n matrices.
pub fn time_matmul(n: usize, threads: usize, repetitions: usize, check: bool, seed: u64) -> Result<MatmulTiming, MatrixError> {
    let mut rng = Rng::new(seed).unwrap_or_else(|_| Rng::new(1).expect("nonzero seed"));
    let a = Matrix::random(n, n, 1000, &mut rng);
    let b = Matrix::random(n, n, 1000, &mut rng);
    let mut serial_ms = Vec::new();
    let mut parallel_ms = Vec::new();
    let mut matches = None;
    for _ in 0..repetitions.max(1) {
        let t = Instant::now();
        let s = matmul_serial(&a, &b)?;
        serial_ms.push(ms(t.elapsed()));
        let t = Instant::now();
        let p = matmul_parallel(&a, &b, threads)?;
        parallel_ms.push(ms(t.elapsed()));
        if check {
            matches = Some(matches.unwrap_or(true) && s == p);
        }
    }
    Ok(MatmulTiming {
        n,
        threads,
        serial_ms,
        parallel_ms,
        matches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};

    fn m(rows: &[&[i64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn two_by_two_product() {
        let a = m(&[&[1, 2], &[3, 4]]);
        let b = m(&[&[5, 6], &[7, 8]]);
        assert_eq!(matmul_serial(&a, &b).unwrap(), m(&[&[19, 22], &[43, 50]]));
        assert_eq!(matmul_parallel(&a, &b, 2).unwrap(), m(&[&[19, 22], &[43, 50]]));
    }

    #[test]
    fn identity_is_neutral() {
        let mut rng = Rng::new(5).unwrap();
        let a = Matrix::random(4, 4, 100, &mut rng);
        assert_eq!(matmul_serial(&a, &Matrix::identity(4)).unwrap(), a);
        assert_eq!(matmul_serial(&Matrix::identity(4), &a).unwrap(), a);
    }

    #[test]
    fn dimension_mismatch() {
        let a = Matrix::new(2, 3, vec![0; 6]).unwrap();
        assert!(matches!(matmul_serial(&a, &a), Err(MatrixError::DimensionMismatch { .. })));
        assert!(matches!(matmul_parallel(&a, &a, 2), Err(MatrixError::DimensionMismatch { .. })));
        let sq = Matrix::identity(3);
        assert_eq!(matmul_parallel(&sq, &sq, 0), Err(MatrixError::ZeroThreads));
    }

    #[test]
    fn bad_shapes_rejected() {
        assert!(Matrix::new(2, 2, vec![1, 2, 3]).is_err());
        assert!(Matrix::new(0, 2, vec![]).is_err());
        assert!(Matrix::from_rows(&[&[1, 2], &[3]]).is_err());
    }

    #[test]
    fn uneven_partition() {
        let sizes: Vec<_> = row_partition(64, 7).iter().map(|r| r.len()).collect();
        assert_eq!(sizes, vec![10, 9, 9, 9, 9, 9, 9]);
        assert_eq!(row_partition(64, 7)[0], 0..10);
        assert_eq!(row_partition(64, 7)[6], 55..64);
        let sizes: Vec<_> = row_partition(2, 4).iter().map(|r| r.len()).collect();
        assert_eq!(sizes, vec![1, 1, 0, 0]);
    }

    #[test]
    fn seven_threads_on_64_rows() {
        let mut rng = Rng::new(64).unwrap();
        let a = Matrix::random(64, 64, 1000, &mut rng);
        let b = Matrix::random(64, 64, 1000, &mut rng);
        assert_eq!(matmul_parallel(&a, &b, 7).unwrap(), matmul_serial(&a, &b).unwrap());
    }

    #[test]
    fn one_thread_is_serial() {
        let mut rng = Rng::new(9).unwrap();
        let a = Matrix::random(13, 5, 50, &mut rng);
        let b = Matrix::random(5, 11, 50, &mut rng);
        assert_eq!(matmul_parallel(&a, &b, 1).unwrap(), matmul_serial(&a, &b).unwrap());
    }

    #[test]
    fn overflow_wraps_identically() {
        let a = m(&[&[i64::MAX, i64::MAX]]);
        let b = m(&[&[2], &[3]]);
        let expected = i64::MAX.wrapping_mul(2).wrapping_add(i64::MAX.wrapping_mul(3));
        assert_eq!(matmul_serial(&a, &b).unwrap().get(0, 0), expected);
        assert_eq!(matmul_parallel(&a, &b, 3).unwrap().get(0, 0), expected);
    }

    #[test]
    fn median_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn csv_layout() {
        let r = ModeReport {
            mode: ServiceMode::Sequential,
            total_ms: vec![1.0, 2.5],
            median_total_ms: 1.75,
            per_client_ms: vec![],
        };
        assert_eq!(r.to_csv(), "rep,total_ms\n1,1.000\n2,2.500\n");
    }

    #[test]
    fn config_validation() {
        assert!(BenchConfig::default().validate().is_ok());
        let few = BenchConfig {
            repetitions: 2,
            ..BenchConfig::default()
        };
        assert!(few.validate().is_err());
        let none = BenchConfig {
            n_clients: 0,
            ..BenchConfig::default()
        };
        assert!(none.validate().is_err());
    }

    #[test]
    fn single_client_modes_agree() {
        let report = run_service_bench(&BenchConfig {
            n_clients: 1,
            work_ms: 50,
            mode: BenchMode::Both,
            repetitions: 3,
        })
        .unwrap();
        let s = report.sequential.as_ref().unwrap().median_total_ms;
        let c = report.concurrent.as_ref().unwrap().median_total_ms;
        assert!((s - c).abs() <= 0.2 * s.max(c), "sequential {s} concurrent {c}");
    }

    #[test]
    fn report_timing_invariants() {
        let report = run_service_bench(&BenchConfig {
            n_clients: 4,
            work_ms: 20,
            mode: BenchMode::Both,
            repetitions: 3,
        })
        .unwrap();
        let seq = report.sequential.as_ref().unwrap();
        let con = report.concurrent.as_ref().unwrap();
        assert_eq!(seq.per_client_ms.len(), 4);
        assert_eq!(con.per_client_ms.len(), 4);
        let max = con.per_client_ms.iter().cloned().fold(0.0, f64::max);
        let closest = con
            .total_ms
            .iter()
            .cloned()
            .min_by(|a, b| (a - con.median_total_ms).abs().total_cmp(&(b - con.median_total_ms).abs()))
            .unwrap();
        assert!(closest >= max, "concurrent total {closest} < max service {max}");
        let sum: f64 = seq.per_client_ms.iter().sum();
        // sequential can never beat N x work_ms beyond timer resolution
        assert!(seq.median_total_ms >= 4.0 * 20.0 - 1.0, "{}", seq.median_total_ms);
        assert!(seq.median_total_ms >= sum - 5.0, "total {} < sum {sum}", seq.median_total_ms);
        assert!(report.speedup().unwrap() >= 1.0);
        let kv = report.to_kv();
        assert!(kv.contains("sequential_median_ms="));
        assert!(kv.contains("speedup="));
    }

    #[test]
    fn matmul_timing_reports_check() {
        let t = time_matmul(16, 3, 2, true, 1).unwrap();
        assert_eq!(t.matches, Some(true));
        assert!(t.to_kv().contains("check=ok"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn parallel_equals_serial(
            rows in 1usize..20, inner in 1usize..20, cols in 1usize..20,
            threads in 1usize..9, seed in 1u64..u64::MAX,
        ) {
            let mut rng = Rng::new(seed).unwrap();
            let a = Matrix::random(rows, inner, 1 << 20, &mut rng);
            let b = Matrix::random(inner, cols, 1 << 20, &mut rng);
            prop_assert_eq!(matmul_parallel(&a, &b, threads).unwrap(), matmul_serial(&a, &b).unwrap());
        }

        #[test]
        fn partition_covers_rows_exactly(rows in 0usize..500, threads in 1usize..40) {
            let parts = row_partition(rows, threads);
            prop_assert_eq!(parts.len(), threads);
            let mut next = 0;
            for p in &parts {
                prop_assert_eq!(p.start, next);
                next = p.end;
            }
            prop_assert_eq!(next, rows);
            let max = parts.iter().map(|p| p.len()).max().unwrap();
            let min = parts.iter().map(|p| p.len()).min().unwrap();
            prop_assert!(max - min <= 1);
        }
    }
}
