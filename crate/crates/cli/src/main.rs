mod script;

use std::io::{self, BufRead};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use relaynet::arq::{numbered_payloads, run_raw, run_transfer, TransferConfig};
use relaynet::bench::{run_service_bench, time_matmul, BenchConfig, BenchMode, ModeReport};
use relaynet::channel::ChannelConfig;
use relaynet::relay::{Client, Server, ServerConfig};
use relaynet::transport::{
    listen, ArqEndpoint, DatagramEndpoint, FrameTransport, StreamEndpoint, UdpAcceptor,
};
use relaynet::wire::{ClientId, HandshakeParams, PROTOCOL_VERSION};

use script::{parse_line, parse_script, Command, Session};

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

#[derive(Parser)]
#[command(name = "relaynet", version, about = "Framed relay server, scripted client, ARQ simulator and benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the relay server until interrupted.
    Serve(ServeArgs),
    /// Connect, register and run line commands from a script or stdin.
    Client(ClientArgs),
    /// Sequential versus thread-per-client echo service timing.
    Bench(BenchArgs),
    /// Serial versus row-parallel integer matrix multiplication timing.
    Matmul(MatmulArgs),
    /// Go-Back-N transfer over the seeded lossy channel simulator.
    ArqSim(ArqSimArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TransportKind {
    Tcp,
    Udp,
}

impl TransportKind {
    fn name(self) -> &'static str {
        match self {
            TransportKind::Tcp => "tcp",
            TransportKind::Udp => "udp",
        }
    }
}

#[derive(Args)]
struct LinkArgs {
    #[arg(long, value_enum, default_value = "tcp")]
    transport: TransportKind,
    /// Run Go-Back-N underneath the frames (udp only).
    #[arg(long)]
    arq: bool,
    /// ARQ retransmission timeout in milliseconds.
    #[arg(long, default_value_t = 20)]
    arq_timeout_ms: u64,
}

impl LinkArgs {
    fn check(&self) -> Result<(), Failure> {
        if self.arq && self.transport == TransportKind::Tcp {
            return Err(Failure::Usage("--arq requires --transport udp".into()));
        }
        if self.arq_timeout_ms == 0 {
            return Err(Failure::Usage("--arq-timeout-ms must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7000")]
    addr: String,
    #[command(flatten)]
    link: LinkArgs,
    #[arg(long, default_value_t = 64)]
    max_clients: usize,
    /// Largest window offered during the handshake.
    #[arg(long, default_value_t = 64)]
    window: u16,
    /// Largest frame payload offered during the handshake.
    #[arg(long, default_value_t = 65536)]
    max_payload: u32,
    /// Disconnect clients silent for this many seconds.
    #[arg(long)]
    idle_timeout_secs: Option<u64>,
}

#[derive(Args)]
struct ClientArgs {
    #[arg(long, default_value = "127.0.0.1:7000")]
    addr: String,
    #[arg(long)]
    id: String,
    /// File of line commands; stdin when absent.
    #[arg(long)]
    script: Option<PathBuf>,
    #[command(flatten)]
    link: LinkArgs,
    #[arg(long, default_value_t = 8)]
    window: u16,
    #[arg(long, default_value_t = 1024)]
    max_payload: u32,
    /// How long /ping and /expect wait for their reply.
    #[arg(long, default_value_t = 2000)]
    reply_timeout_ms: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Sequential,
    Concurrent,
    Both,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 8)]
    clients: usize,
    #[arg(long, default_value_t = 50)]
    work_ms: u64,
    #[arg(long, value_enum, default_value = "both")]
    mode: ModeArg,
    #[arg(long, default_value_t = 3)]
    repetitions: usize,
    /// Write `rep,total_ms` rows here; with `--mode both` the mode name is
    /// added before the extension.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct MatmulArgs {
    #[arg(long, default_value_t = 256)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    threads: usize,
    #[arg(long, default_value_t = 3)]
    repetitions: usize,
    /// Compare the parallel product with the serial one.
    #[arg(long)]
    check: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct ArqSimArgs {
    #[arg(long, default_value_t = 1000)]
    segments: usize,
    #[arg(long, default_value_t = 0.2)]
    loss: f64,
    #[arg(long, default_value_t = 0.0)]
    dup: f64,
    #[arg(long, default_value_t = 0.0)]
    corrupt: f64,
    /// Extra delivery delay drawn uniformly from 0..=max-delay ticks.
    #[arg(long, default_value_t = 4)]
    max_delay: u64,
    #[arg(long, default_value_t = 8)]
    window: u16,
    /// Retransmission timeout in ticks.
    #[arg(long, default_value_t = 8)]
    timeout: u64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 1_000_000)]
    max_ticks: u64,
    #[arg(long, default_value_t = 16)]
    payload_size: usize,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Cmd::Serve(a) => serve(a),
        Cmd::Client(a) => client(a),
        Cmd::Bench(a) => bench(a),
        Cmd::Matmul(a) => matmul(a),
        Cmd::ArqSim(a) => arq_sim(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn serve(a: ServeArgs) -> Result<(), Failure> {
    a.link.check()?;
    if a.max_clients == 0 || a.window == 0 || a.max_payload == 0 {
        return Err(Failure::Usage("--max-clients, --window and --max-payload must be at least 1".into()));
    }
    let config = ServerConfig {
        max_clients: a.max_clients,
        idle_timeout: a.idle_timeout_secs.map(Duration::from_secs),
        supported: HandshakeParams::new(PROTOCOL_VERSION, a.window, a.max_payload),
        ..ServerConfig::default()
    };
    let stop = Arc::new(AtomicBool::new(false));
    {
        let stop = stop.clone();
        ctrlc::set_handler(move || stop.store(true, Ordering::SeqCst)).map_err(runtime)?;
    }
    let server = match a.link.transport {
        TransportKind::Tcp => Server::start(listen(&a.addr).map_err(runtime)?, config),
        TransportKind::Udp => {
            let arq = a.link.arq.then_some((a.window, a.link.arq_timeout_ms));
            Server::start(UdpAcceptor::bind(&a.addr, arq).map_err(runtime)?, config)
        }
    };
    println!(
        "listening addr={} transport={} arq={}",
        server.local_addr(),
        a.link.transport.name(),
        a.link.arq
    );
    while !stop.load(Ordering::SeqCst) {
        thread::sleep(Duration::from_millis(50));
    }
    server.shutdown();
    println!("stopped");
    Ok(())
}

fn connect(addr: &str, link: &LinkArgs, window: u16) -> Result<Box<dyn FrameTransport>, Failure> {
    let conn: Box<dyn FrameTransport> = match (link.transport, link.arq) {
        (TransportKind::Tcp, _) => Box::new(StreamEndpoint::connect(addr, Duration::from_secs(5)).map_err(runtime)?),
        (TransportKind::Udp, false) => Box::new(DatagramEndpoint::connect(addr).map_err(runtime)?),
        (TransportKind::Udp, true) => {
            Box::new(ArqEndpoint::connect(addr, window, link.arq_timeout_ms).map_err(runtime)?)
        }
    };
    Ok(conn)
}

fn client(a: ClientArgs) -> Result<(), Failure> {
    a.link.check()?;
    let id = ClientId::new(a.id.as_str()).map_err(|e| Failure::Usage(format!("bad --id: {e}")))?;
    if a.window == 0 || a.max_payload == 0 {
        return Err(Failure::Usage("--window and --max-payload must be at least 1".into()));
    }
    let scripted = match &a.script {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
            Some(parse_script(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?)
        }
        None => None,
    };

    let conn = connect(&a.addr, &a.link, a.window)?;
    let proposal = HandshakeParams::new(PROTOCOL_VERSION, a.window, a.max_payload);
    let mut client = Client::handshake(conn, proposal, Duration::from_secs(5)).map_err(runtime)?;
    let p = client.params();
    client.register(&id, Duration::from_secs(5)).map_err(runtime)?;
    let stdout = io::stdout();
    let mut session = Session::new(client, stdout.lock(), Duration::from_millis(a.reply_timeout_ms));
    session.line(&format!(
        "registered id={id} window={} max_payload={}",
        p.window, p.max_payload
    ));

    // Input worker: script commands or stdin lines.
    let (tx, rx) = mpsc::channel::<Result<Command, String>>();
    thread::spawn(move || match scripted {
        Some(cmds) => {
            for c in cmds {
                if tx.send(Ok(c)).is_err() {
                    return;
                }
            }
        }
        None => {
            for line in io::stdin().lock().lines() {
                let Ok(line) = line else { return };
                let item = match parse_line(&line) {
                    Ok(Some(c)) => Ok(c),
                    Ok(None) => continue,
                    Err(e) => Err(e),
                };
                if tx.send(item).is_err() {
                    return;
                }
            }
        }
    });

    loop {
        match rx.recv_timeout(Duration::from_millis(10)) {
            Ok(Ok(cmd)) => {
                if !session.execute(&cmd).map_err(runtime)? {
                    break;
                }
            }
            Ok(Err(reason)) => session.bad_line(&reason),
            Err(mpsc::RecvTimeoutError::Timeout) => {}
            Err(mpsc::RecvTimeoutError::Disconnected) => break,
        }
        session.poll(Duration::from_millis(1)).map_err(runtime)?;
    }
    let tally = session.finish();
    if tally.success() {
        Ok(())
    } else {
        Err(Failure::Runtime(format!(
            "{} of {} expected replies arrived, {} unexpected server errors, {} bad lines",
            tally.arrived, tally.expected, tally.unexpected_errors, tally.bad_lines
        )))
    }
}

fn csv_path(base: &Path, report: &ModeReport, both: bool) -> PathBuf {
    if !both {
        return base.to_path_buf();
    }
    let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match base.extension() {
        Some(ext) => format!("{stem}.{}.{}", report.mode.name(), ext.to_string_lossy()),
        None => format!("{stem}.{}", report.mode.name()),
    };
    base.with_file_name(name)
}

fn bench(a: BenchArgs) -> Result<(), Failure> {
    let mode = match a.mode {
        ModeArg::Sequential => BenchMode::Sequential,
        ModeArg::Concurrent => BenchMode::Concurrent,
        ModeArg::Both => BenchMode::Both,
    };
    let config = BenchConfig {
        n_clients: a.clients,
        work_ms: a.work_ms,
        mode,
        repetitions: a.repetitions,
    };
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let report = run_service_bench(&config).map_err(runtime)?;
    print!("{}", report.to_kv());
    if let Some(base) = &a.csv {
        for m in report.modes() {
            let path = csv_path(base, m, matches!(mode, BenchMode::Both));
            std::fs::write(&path, m.to_csv()).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
            println!("csv={}", path.display());
        }
    }
    Ok(())
}

fn matmul(a: MatmulArgs) -> Result<(), Failure> {
    if a.n == 0 || a.threads == 0 || a.repetitions == 0 {
        return Err(Failure::Usage("--n, --threads and --repetitions must be at least 1".into()));
    }
    let timing = time_matmul(a.n, a.threads, a.repetitions, a.check, a.seed).map_err(runtime)?;
    print!("{}", timing.to_kv());
    match timing.matches {
        Some(false) => Err(Failure::Runtime("parallel product differs from serial".into())),
        _ => Ok(()),
    }
}

fn arq_sim(a: ArqSimArgs) -> Result<(), Failure> {
    let channel = ChannelConfig {
        loss_prob: a.loss,
        dup_prob: a.dup,
        corrupt_prob: a.corrupt,
        max_delay: a.max_delay,
        seed: a.seed,
    };
    channel.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    if a.window == 0 || a.timeout == 0 || a.max_ticks == 0 {
        return Err(Failure::Usage("--window, --timeout and --max-ticks must be at least 1".into()));
    }
    let payloads = numbered_payloads(a.segments, a.payload_size);
    let config = TransferConfig::symmetric(channel, a.window, a.timeout, a.max_ticks);
    let stats = run_transfer(&payloads, &config).map_err(|e| Failure::Usage(e.to_string()))?;
    let raw = run_raw(&payloads, channel).map_err(runtime)?;
    let in_order = stats.delivered == payloads;
    println!(
        "completed={} retransmissions={} ticks={}",
        stats.completed, stats.retransmissions, stats.ticks_elapsed
    );
    println!(
        "sent={} delivered={} in_order={}",
        payloads.len(),
        stats.delivered_count,
        in_order
    );
    println!("raw_delivered={} raw_in_order={}", raw.len(), raw == payloads);
    if stats.completed && in_order {
        Ok(())
    } else {
        Err(Failure::Runtime("transfer did not complete".into()))
    }
}
