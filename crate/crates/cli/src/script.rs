//! Line commands understood by `relaynet client`, and the session that runs
//! them against a relay server.

use std::collections::VecDeque;
use std::io::Write;
use std::time::{Duration, Instant};

use relaynet::relay::{Client, ClientError};
use relaynet::transport::{FrameTransport, TransportError};
use relaynet::wire::{ClientId, ErrorCode, Message};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    /// `/msg <id> <text>`
    Msg { to: ClientId, text: String },
    /// `/all <text>`
    All { text: String },
    /// `/ping [text]`: expects the echo back.
    Ping { text: String },
    /// `/expect <from> <text>`: expects a DELIVER.
    Expect { from: ClientId, text: String },
    /// `/expect-error <code>`: expects an ERROR with that code.
    ExpectError { code: ErrorCode },
    /// `/sleep <ms>`
    Sleep { ms: u64 },
    /// `/quit`
    Quit,
}

/// Parses one line. Blank lines and `#` comments yield `Ok(None)`.
pub fn parse_line(line: &str) -> Result<Option<Command>, String> {
    let line = line.trim();
    if line.is_empty() || line.starts_with('#') {
        return Ok(None);
    }
    let Some(rest) = line.strip_prefix('/') else {
        return Err("bare text is not sent; use /msg <id> <text> or /all <text>".into());
    };
    let (verb, args) = match rest.split_once(char::is_whitespace) {
        Some((v, a)) => (v, a.trim_start()),
        None => (rest, ""),
    };
    let id = |s: &str| ClientId::new(s).map_err(|e| format!("bad id {s:?}: {e}"));
    let target_and_text = |usage: &str| -> Result<(ClientId, String), String> {
        match args.split_once(char::is_whitespace) {
            Some((target, text)) => Ok((id(target)?, text.trim_start().to_string())),
            None if !args.is_empty() => Ok((id(args)?, String::new())),
            None => Err(format!("usage: {usage}")),
        }
    };
    let cmd = match verb {
        "msg" => {
            let (to, text) = target_and_text("/msg <id> <text>")?;
            Command::Msg { to, text }
        }
        "all" => Command::All { text: args.to_string() },
        "ping" => Command::Ping {
            text: if args.is_empty() { "ping".into() } else { args.to_string() },
        },
        "expect" => {
            let (from, text) = target_and_text("/expect <from> <text>")?;
            Command::Expect { from, text }
        }
        "expect-error" => {
            let code = args
                .parse::<u8>()
                .ok()
                .and_then(ErrorCode::from_code)
                .ok_or_else(|| format!("unknown error code {args:?}"))?;
            Command::ExpectError { code }
        }
        "sleep" => Command::Sleep {
            ms: args.parse().map_err(|_| format!("bad duration {args:?}"))?,
        },
        "quit" if args.is_empty() => Command::Quit,
        other => return Err(format!("unknown command /{other}")),
    };
    Ok(Some(cmd))
}

/// Parses a whole script, reporting the first bad line (1-based).
pub fn parse_script(text: &str) -> Result<Vec<Command>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        match parse_line(line) {
            Ok(Some(c)) => out.push(c),
            Ok(None) => {}
            Err(e) => return Err(format!("line {}: {e}", i + 1)),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub expected: usize,
    pub arrived: usize,
    pub unexpected_errors: usize,
    pub bad_lines: usize,
}

impl Tally {
    pub fn success(&self) -> bool {
        self.expected == self.arrived && self.unexpected_errors == 0 && self.bad_lines == 0
    }
}

/// Runs commands against a registered client, printing every server message
/// as a `key=value` line.
pub struct Session<T: FrameTransport, W: Write> {
    client: Client<T>,
    out: W,
    reply_timeout: Duration,
    unclaimed: VecDeque<Message>,
    pub tally: Tally,
}

fn text(body: &[u8]) -> String {
    String::from_utf8_lossy(body).into_owned()
}

impl<T: FrameTransport, W: Write> Session<T, W> {
    pub fn new(client: Client<T>, out: W, reply_timeout: Duration) -> Self {
        Session {
            client,
            out,
            reply_timeout,
            unclaimed: VecDeque::new(),
            tally: Tally::default(),
        }
    }

    pub fn line(&mut self, s: &str) {
        let _ = writeln!(self.out, "{s}");
        let _ = self.out.flush();
    }

    fn report(&mut self, msg: &Message) {
        let line = match msg {
            Message::Deliver { from, body } => format!("deliver from={from} text={}", text(body)),
            Message::EchoReply(body) => format!("echo_reply text={}", text(body)),
            Message::Error { code, detail } => {
                format!("error code={} name={} detail={detail}", code.code(), code.name())
            }
            other => format!("unexpected kind={:?}", other.kind()),
        };
        self.line(&line);
    }

    /// Reads whatever arrives within `wait`.
    pub fn poll(&mut self, wait: Duration) -> Result<(), ClientError> {
        let mut wait = wait;
        loop {
            match self.client.next_message(wait) {
                Ok(msg) => {
                    self.report(&msg);
                    self.unclaimed.push_back(msg);
                    wait = Duration::ZERO;
                }
                Err(ClientError::Transport(TransportError::TimedOut)) => return Ok(()),
                Err(e) => return Err(e),
            }
        }
    }

    /// Waits for a message matching `want`, which may already have arrived.
    fn claim(&mut self, what: &str, want: impl Fn(&Message) -> bool) -> Result<(), ClientError> {
        self.tally.expected += 1;
        let deadline = Instant::now() + self.reply_timeout;
        loop {
            if let Some(i) = self.unclaimed.iter().position(&want) {
                self.unclaimed.remove(i);
                self.tally.arrived += 1;
                self.line(&format!("expect=ok {what}"));
                return Ok(());
            }
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                self.line(&format!("expect=missing {what}"));
                return Ok(());
            }
            match self.client.next_message(left) {
                Ok(msg) => {
                    self.report(&msg);
                    self.unclaimed.push_back(msg);
                }
                Err(ClientError::Transport(TransportError::TimedOut)) => {}
                Err(e) => return Err(e),
            }
        }
    }

    /// Returns `false` once the session should end.
    pub fn execute(&mut self, cmd: &Command) -> Result<bool, ClientError> {
        match cmd {
            Command::Msg { to, text } => self.client.direct(to, text.as_bytes())?,
            Command::All { text } => self.client.broadcast(text.as_bytes())?,
            Command::Ping { text } => {
                self.client.send(&Message::Echo(text.as_bytes().to_vec()))?;
                let want = text.as_bytes().to_vec();
                self.claim(&format!("echo text={text}"), |m| matches!(m, Message::EchoReply(b) if *b == want))?;
            }
            Command::Expect { from, text } => {
                let want = Message::Deliver {
                    from: from.clone(),
                    body: text.as_bytes().to_vec(),
                };
                self.claim(&format!("deliver from={from} text={text}"), |m| *m == want)?;
            }
            Command::ExpectError { code } => {
                let code = *code;
                self.claim(&format!("error code={}", code.code()), |m| {
                    matches!(m, Message::Error { code: c, .. } if *c == code)
                })?;
            }
            Command::Sleep { ms } => self.poll(Duration::from_millis(*ms))?,
            Command::Quit => return Ok(false),
        }
        Ok(true)
    }

    pub fn bad_line(&mut self, reason: &str) {
        self.tally.bad_lines += 1;
        self.line(&format!("script_error reason={reason}"));
    }

    /// Sends BYE, counts unclaimed ERRORs and prints the summary line.
    pub fn finish(mut self) -> Tally {
        let _ = self.poll(Duration::from_millis(20));
        let _ = self.client.bye();
        self.tally.unexpected_errors = self
            .unclaimed
            .iter()
            .filter(|m| matches!(m, Message::Error { .. }))
            .count();
        let t = self.tally;
        self.line(&format!(
            "summary expected={} arrived={} unexpected_errors={} script_errors={} ok={}",
            t.expected,
            t.arrived,
            t.unexpected_errors,
            t.bad_lines,
            t.success()
        ));
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> ClientId {
        ClientId::new(s).unwrap()
    }

    #[test]
    fn parses_commands() {
        assert_eq!(
            parse_line("/msg bob hello there").unwrap(),
            Some(Command::Msg {
                to: id("bob"),
                text: "hello there".into()
            })
        );
        assert_eq!(parse_line("/all hi").unwrap(), Some(Command::All { text: "hi".into() }));
        assert_eq!(parse_line("/ping").unwrap(), Some(Command::Ping { text: "ping".into() }));
        assert_eq!(parse_line("/ping abc").unwrap(), Some(Command::Ping { text: "abc".into() }));
        assert_eq!(
            parse_line("/expect alice hi").unwrap(),
            Some(Command::Expect {
                from: id("alice"),
                text: "hi".into()
            })
        );
        assert_eq!(
            parse_line("/expect-error 2").unwrap(),
            Some(Command::ExpectError {
                code: ErrorCode::UnknownRecipient
            })
        );
        assert_eq!(parse_line("/sleep 15").unwrap(), Some(Command::Sleep { ms: 15 }));
        assert_eq!(parse_line("  /quit ").unwrap(), Some(Command::Quit));
        assert_eq!(parse_line("").unwrap(), None);
        assert_eq!(parse_line("# note").unwrap(), None);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(parse_line("hello everyone").is_err());
        assert!(parse_line("/msg").is_err());
        assert!(parse_line("/frobnicate").is_err());
        assert!(parse_line("/expect-error 9").is_err());
        assert!(parse_line("/sleep soon").is_err());
        assert!(parse_line(&format!("/msg {} x", "a".repeat(65))).is_err());
    }

    #[test]
    fn script_errors_name_the_line() {
        let err = parse_script("/ping\n\nbare\n").unwrap_err();
        assert!(err.starts_with("line 3:"), "{err}");
        assert_eq!(parse_script("/ping\n/quit\n").unwrap().len(), 2);
    }
}
