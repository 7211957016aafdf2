//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::panic::{self, AssertUnwindSafe};
use std::process::Command;
use std::sync::{Arc, Barrier};
use std::thread;
use std::time::{Duration, Instant};

use proptest::prelude::{any, prop, Just, Strategy};
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use relaynet::arq::{numbered_payloads, run_raw, run_transfer, Receiver, SendError, Sender, TransferConfig};
use relaynet::bench::{matmul_parallel, matmul_serial, run_service_bench, BenchConfig, BenchMode, Matrix};
use relaynet::channel::{ChannelConfig, Rng};
use relaynet::relay::{Client, ClientError, Server, ServerConfig};
use relaynet::transport::{listen, StreamEndpoint};
use relaynet::wire::{decode_frame, ClientId, DecodeError, ErrorCode, Frame, HandshakeParams, Kind, Message};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let took = start.elapsed();
    ensure(took < limit, || format!("took {took:.2?}, limit {limit:?}"))
}

fn codec_soundness() -> Outcome {
    let start = Instant::now();
    let frames = (
        prop::sample::select(Kind::ALL.to_vec()),
        prop::collection::vec(any::<u8>(), 0..1024),
    )
        .prop_flat_map(|(kind, payload)| {
            let len = payload.len().max(1);
            (Just(kind), Just(payload), 0..len, 1u8..=255)
        });
    let mut runner = TestRunner::new(Config {
        cases: 10_000,
        failure_persistence: None,
        ..Config::default()
    });
    let mutations = std::cell::Cell::new(0usize);
    let result = runner.run(&frames, |(kind, payload, at, flip)| {
        let frame = Frame::new(kind, payload);
        let bytes = frame.encode();
        let decoded = decode_frame(&bytes).map_err(|e| TestCaseError::fail(e.to_string()))?;
        if decoded.frame != frame || decoded.unconsumed != 0 {
            return Err(TestCaseError::fail("round trip changed the frame"));
        }
        if !frame.payload.is_empty() {
            // one payload byte changes, so the byte-sum changes by a nonzero amount below 256
            let mut bad = bytes.clone();
            bad[relaynet::wire::HEADER_LEN + at] ^= flip;
            match decode_frame(&bad) {
                Err(DecodeError::ChecksumMismatch { .. }) => mutations.set(mutations.get() + 1),
                other => return Err(TestCaseError::fail(format!("mutation undetected: {other:?}"))),
            }
        }
        Ok(())
    });
    result.map_err(|e| e.to_string())?;
    within(start, Duration::from_secs(5))?;
    Ok(format!(
        "10000 frames round-tripped, {} payload mutations detected in {:.2?}",
        mutations.get(),
        start.elapsed()
    ))
}

const SEEDS: std::ops::RangeInclusive<u64> = 1..=20;

fn reliable_column() -> Outcome {
    let start = Instant::now();
    let payloads = numbered_payloads(1000, 16);
    let mut retrans = Vec::new();
    for seed in SEEDS {
        let config = TransferConfig::symmetric(ChannelConfig::lossy(0.2, 4, seed), 8, 8, 1_000_000);
        let stats = run_transfer(&payloads, &config).map_err(|e| e.to_string())?;
        ensure(stats.completed, || format!("seed {seed} did not complete"))?;
        ensure(stats.delivered == payloads, || format!("seed {seed} delivered a different sequence"))?;
        retrans.push(stats.retransmissions);
    }
    within(start, Duration::from_secs(10))?;
    Ok(format!(
        "20/20 seeds delivered 1000/1000 in order (retransmissions {}..={}) in {:.2?}",
        retrans.iter().min().unwrap(),
        retrans.iter().max().unwrap(),
        start.elapsed()
    ))
}

fn unreliable_column() -> Outcome {
    let start = Instant::now();
    let payloads = numbered_payloads(1000, 16);
    let mut damaged = 0;
    let mut received = Vec::new();
    for seed in SEEDS {
        let raw = run_raw(&payloads, ChannelConfig::lossy(0.2, 4, seed)).map_err(|e| e.to_string())?;
        received.push(raw.len());
        if raw != payloads {
            damaged += 1;
        }
    }
    ensure(damaged >= 19, || format!("only {damaged}/20 raw streams were incomplete or reordered"))?;
    within(start, Duration::from_secs(5))?;
    Ok(format!(
        "{damaged}/20 raw streams incomplete or reordered (received {}..={} of 1000)",
        received.iter().min().unwrap(),
        received.iter().max().unwrap()
    ))
}

fn gbn_traces() -> Outcome {
    // drop the first segment with W=2
    let mut s = Sender::new(2, 8);
    let mut r = Receiver::new();
    let _lost = s.send(b"s0".to_vec(), 0).map_err(|e| e.to_string())?;
    let s1 = s.send(b"s1".to_vec(), 0).map_err(|e| e.to_string())?;
    ensure(s.send(b"s2".to_vec(), 0) == Err(SendError::WindowFull), || "third send not refused".into())?;
    let rc = r.on_segment(&s1);
    ensure(rc.delivered.is_none() && rc.ack.seq == 0, || "out-of-order segment not discarded".into())?;
    s.on_ack(rc.ack.seq, 1);
    ensure((s.base(), s.next_seq()) == (0, 2), || "ACK(0) moved the window".into())?;
    ensure(s.on_tick(7).is_empty(), || "retransmitted before expiry".into())?;
    let resent: Vec<u32> = s.on_tick(8).iter().map(|g| g.seq).collect();
    ensure(resent == [0, 1], || format!("timeout resent {resent:?}"))?;

    // duplicate and future ACKs change nothing
    let mut d = Sender::new(4, 8);
    for i in 0..3u8 {
        d.send(vec![i], 0).map_err(|e| e.to_string())?;
    }
    d.on_ack(2, 1);
    let before = (d.base(), d.next_seq(), d.timer_expiry());
    ensure(before == (2, 3, Some(9)), || format!("ACK(2) gave {before:?}"))?;
    d.on_ack(2, 2);
    d.on_ack(7, 2);
    ensure((d.base(), d.next_seq(), d.timer_expiry()) == before, || "duplicate/future ACK changed state".into())?;

    // timeout resends exactly [base, next) in order
    let mut t = Sender::new(8, 5);
    for i in 0..5u8 {
        t.send(vec![i], 0).map_err(|e| e.to_string())?;
    }
    t.on_ack(2, 1);
    let resent: Vec<u32> = t.on_tick(6).iter().map(|g| g.seq).collect();
    ensure(resent == [2, 3, 4], || format!("timeout resent {resent:?}"))?;
    ensure(t.timer_expiry() == Some(11), || "timer not re-armed".into())?;
    Ok("drop-first W=2, duplicate-ACK no-op and timeout [base,next) traces reproduced".into())
}

fn id(s: &str) -> ClientId {
    ClientId::new(s).unwrap()
}

fn registry_semantics() -> Outcome {
    let start = Instant::now();
    const T: Duration = Duration::from_secs(10);
    let listener = listen("127.0.0.1:0").map_err(|e| e.to_string())?;
    let addr = listener.local_addr().to_string();
    let server = Server::start(listener, ServerConfig::default());
    let connect = |addr: &str| {
        let conn = StreamEndpoint::connect(addr, T).unwrap();
        Client::handshake(conn, HandshakeParams::default(), T).unwrap()
    };

    // duplicate registration race
    for round in 0..10 {
        let barrier = Arc::new(Barrier::new(2));
        let name = format!("dup{round}");
        let racers: Vec<_> = (0..2)
            .map(|_| {
                let mut c = connect(&addr);
                let (barrier, name) = (barrier.clone(), name.clone());
                thread::spawn(move || {
                    barrier.wait();
                    let r = c.register(&id(&name), T);
                    let dup = matches!(r, Err(ClientError::Server { code: ErrorCode::DuplicateId, .. }));
                    (r.is_ok(), dup, c)
                })
            })
            .collect();
        let results: Vec<_> = racers.into_iter().map(|t| t.join().unwrap()).collect();
        let wins = results.iter().filter(|r| r.0).count();
        let dups = results.iter().filter(|r| r.1).count();
        ensure(wins == 1 && dups == 1, || format!("round {round}: {wins} winners, {dups} DuplicateId"))?;
    }

    // absent recipient
    let mut lone = connect(&addr);
    lone.register(&id("lone"), T).map_err(|e| e.to_string())?;
    lone.direct(&id("nobody"), b"x").map_err(|e| e.to_string())?;
    match lone.next_message(T) {
        Ok(Message::Error { code, .. }) if code.code() == 2 => {}
        other => return Err(format!("expected ERROR code 2, got {other:?}")),
    }

    // 32-client soak
    const CLIENTS: usize = 32;
    const EACH: usize = 100;
    let barrier = Arc::new(Barrier::new(CLIENTS));
    let workers: Vec<_> = (0..CLIENTS)
        .map(|i| {
            let mut c = connect(&addr);
            let barrier = barrier.clone();
            thread::spawn(move || -> Result<usize, String> {
                let me = format!("soak{i:02}");
                let peer = format!("soak{:02}", i ^ 1);
                c.register(&id(&me), T).map_err(|e| e.to_string())?;
                barrier.wait();
                for n in 0..EACH {
                    c.direct(&id(&peer), format!("{me}->{peer}#{n}").as_bytes())
                        .map_err(|e| e.to_string())?;
                }
                for n in 0..EACH {
                    let want = Message::Deliver {
                        from: id(&peer),
                        body: format!("{peer}->{me}#{n}").into_bytes(),
                    };
                    let got = c.next_message(T).map_err(|e| e.to_string())?;
                    if got != want {
                        return Err(format!("{me} expected {want:?}, got {got:?}"));
                    }
                }
                c.ping(b"end", T).map_err(|e| format!("{me}: {e}"))?;
                barrier.wait();
                Ok(EACH)
            })
        })
        .collect();
    let mut delivered = 0;
    for w in workers {
        delivered += w.join().map_err(|_| "soak client panicked".to_string())??;
    }
    ensure(delivered == CLIENTS * EACH, || format!("{delivered} delivered"))?;
    drop(lone);
    server.shutdown();
    within(start, Duration::from_secs(30))?;
    Ok(format!(
        "1 winner per duplicate race (10 rounds), absent ID -> code 2, {delivered}/3200 soak messages with no cross-talk in {:.2?}",
        start.elapsed()
    ))
}

fn concurrency_claim() -> Outcome {
    let report = run_service_bench(&BenchConfig {
        n_clients: 8,
        work_ms: 50,
        mode: BenchMode::Both,
        repetitions: 3,
    })
    .map_err(|e| e.to_string())?;
    let seq = report.sequential.as_ref().unwrap().median_total_ms;
    let con = report.concurrent.as_ref().unwrap().median_total_ms;
    let speedup = report.speedup().unwrap();
    let threads = thread::available_parallelism().map_or(1, |n| n.get());
    let summary = format!(
        "sequential median {seq:.1} ms, concurrent median {con:.1} ms, speedup {speedup:.2}, {threads} hardware threads"
    );
    ensure(seq >= 360.0, || format!("{summary}: sequential below 360 ms"))?;
    ensure(speedup >= 2.5, || format!("{summary}: speedup below 2.5"))?;
    if threads >= 8 {
        ensure(con <= 150.0, || format!("{summary}: concurrent above 150 ms"))?;
        Ok(summary)
    } else {
        Ok(format!("{summary} (concurrent <= 150 ms bound applies only with >= 8 hardware threads)"))
    }
}

fn matmul_exactness() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng::new(2024).unwrap();
    let mut checks = 0;
    for pair in 0..200 {
        let (r, k, c) = (1 + rng.below(64) as usize, 1 + rng.below(64) as usize, 1 + rng.below(64) as usize);
        let a = Matrix::random(r, k, 1_000_000, &mut rng);
        let b = Matrix::random(k, c, 1_000_000, &mut rng);
        let serial = matmul_serial(&a, &b).map_err(|e| e.to_string())?;
        for threads in [1, 2, 4, 7] {
            let par = matmul_parallel(&a, &b, threads).map_err(|e| e.to_string())?;
            ensure(par == serial, || format!("pair {pair} ({r}x{k} * {k}x{c}) differs with {threads} threads"))?;
            checks += 1;
        }
    }
    within(start, Duration::from_secs(10))?;
    Ok(format!("{checks} parallel products equal serial ones in {:.2?}", start.elapsed()))
}

const ARQ_SIM_FIRST_LINE: &str = "completed=true retransmissions=6017 ticks=8524";

fn determinism() -> Outcome {
    let run = || {
        Command::new(env!("CARGO_BIN_EXE_relaynet"))
            .args(["arq-sim", "--segments", "1000", "--loss", "0.2", "--window", "8", "--timeout", "8", "--seed", "42"])
            .output()
            .map_err(|e| e.to_string())
    };
    let first = run()?;
    let second = run()?;
    ensure(first.status.success(), || format!("exit status {}", first.status))?;
    ensure(first.stdout == second.stdout, || "outputs differ between runs".into())?;
    let text = String::from_utf8_lossy(&first.stdout);
    let line = text.lines().next().unwrap_or_default();
    ensure(line == ARQ_SIM_FIRST_LINE, || format!("first line {line:?}"))?;
    Ok(format!("two runs byte-identical ({} bytes): {line}", first.stdout.len()))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        ("codec soundness", codec_soundness),
        ("reliable column: GBN over lossy channel", reliable_column),
        ("unreliable column: raw datagrams", unreliable_column),
        ("GBN state-machine traces", gbn_traces),
        ("registry semantics", registry_semantics),
        ("sequential vs thread-per-client service", concurrency_claim),
        ("matmul exactness", matmul_exactness),
        ("arq-sim determinism", determinism),
    ];
    // keep panic messages out of the report; they are folded into FAIL lines
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {} PASS {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} FAIL {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
