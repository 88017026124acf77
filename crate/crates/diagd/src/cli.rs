//! Command line: scripted simulation, requests, polling, fuzzing and
//! recording against a fresh simulated ECU per invocation.

use std::fs::File;
use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Parser, Subcommand};
use udsbench::codec::{format_dtc, from_hex, parse_dtc_list, to_hex};
use udsbench::conformance::{generate_matrix, run};
use udsbench::ecu::{EcuConfig, KeyFunction};
use udsbench::tester::PollSpec;
use udsbench::trace::{capture, export, ExportFormat, Recording, TriggerPredicate, TriggerSpec};
use udsbench::{ChannelSet, Sample};

use crate::live::{ExchangeView, Live};
use crate::server::{serve, AppState};

pub const EXIT_OK: u8 = 0;
pub const EXIT_PROTOCOL: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "diagd", version, about = "UDS diagnostics over a simulated CAN bus")]
pub struct Cli {
    /// ECU configuration (JSON); the shipped demo ECU if omitted.
    #[arg(long, global = true, value_name = "CONFIG.json")]
    pub ecu: Option<PathBuf>,
    /// Start with the OBD2 gateway filtering non-diagnostic traffic.
    #[arg(long, global = true)]
    pub gateway: bool,
    /// Override the ECU's seed generator.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the bench with vehicle traffic and print the OBD2 trace.
    Sim {
        #[arg(long, default_value_t = 1000, value_name = "MS")]
        duration: u64,
    },
    /// Send one raw request and print the decoded response.
    Req {
        #[arg(long)]
        hex: String,
        /// Enter this session first.
        #[arg(long, value_parser = parse_byte)]
        session: Option<u8>,
    },
    /// Enter the extended session and run the seed/key exchange.
    Unlock {
        #[arg(long, value_parser = parse_byte)]
        level: u8,
        #[arg(long, default_value = "complement")]
        key_fn: KeyFunction,
    },
    /// Read or clear trouble codes.
    Dtc {
        #[command(subcommand)]
        action: DtcAction,
    },
    /// Poll DIDs periodically and write the samples as CSV.
    Poll {
        /// JSON array of {"did": "0x0D00", "period_ms": 100}.
        #[arg(long, value_name = "FILE")]
        list: PathBuf,
        #[arg(long, value_name = "MS")]
        duration: u64,
        #[arg(long, value_name = "CSV")]
        out: PathBuf,
    },
    /// Run the alteration matrix and write one verdict per line.
    Fuzz {
        #[arg(long, value_name = "REPORT.jsonl")]
        out: PathBuf,
    },
    /// Record the OBD2 bus while sending requests and keep the trigger window.
    Record {
        /// nrc, nrc=0x33, id=0x7e8, sid=0x19, rise=<channel>:<value>, fall=<channel>:<value>
        #[arg(long)]
        trigger: String,
        #[arg(long, default_value_t = 100, value_name = "MS")]
        pre: u64,
        #[arg(long, default_value_t = 250, value_name = "MS")]
        post: u64,
        /// CSV, or JSONL if the name ends in .jsonl.
        #[arg(long)]
        out: PathBuf,
        /// Request to send, in order; repeatable.
        #[arg(long = "send", value_name = "HEX")]
        sends: Vec<String>,
        /// Pause after each request.
        #[arg(long, default_value_t = 100, value_name = "MS")]
        gap: u64,
        /// Total recording length.
        #[arg(long, default_value_t = 1000, value_name = "MS")]
        duration: u64,
        /// Poll list feeding channels named after the DIDs.
        #[arg(long, value_name = "FILE")]
        poll: Option<PathBuf>,
    },
    /// Serve the HTTP/WebSocket API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        /// Run simulated time as fast as possible instead of in real time.
        #[arg(long)]
        turbo: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum DtcAction {
    Read {
        #[arg(long, default_value = "0xFF", value_parser = parse_byte)]
        mask: u8,
    },
    Clear {
        /// Group of DTC as three hex bytes.
        #[arg(long, default_value = "ffffff")]
        group: String,
    },
}

fn parse_byte(s: &str) -> Result<u8, String> {
    let t = s.trim();
    match t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        Some(h) => u8::from_str_radix(h, 16),
        None => t.parse(),
    }
    .map_err(|_| format!("{s:?} is not a byte"))
}

/// A failure with its exit code.
struct Fail(u8, String);

fn usage(msg: impl Into<String>) -> Fail {
    Fail(EXIT_USAGE, msg.into())
}

fn protocol(msg: impl Into<String>) -> Fail {
    Fail(EXIT_PROTOCOL, msg.into())
}

fn load_config(cli: &Cli) -> Result<EcuConfig, Fail> {
    let mut cfg = match &cli.ecu {
        Some(p) => EcuConfig::load(p).map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => EcuConfig::shipped(),
    };
    if cli.gateway {
        cfg.gateway_mode = true;
    }
    if let Some(s) = cli.seed {
        cfg.rng_seed = s;
    }
    Ok(cfg)
}

fn read_poll_list(path: &Path) -> Result<Vec<PollSpec>, Fail> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn print_exchange(out: &mut impl Write, v: &ExchangeView) -> io::Result<()> {
    writeln!(out, "request  {}  {}", v.request_hex, v.request_decode)?;
    match &v.response_hex {
        Some(r) => writeln!(out, "response {r}  {}", v.decode),
        None => writeln!(out, "{}: {}", v.status, v.decode),
    }
}

fn enter(live: &mut Live, session: u8) -> Result<(), Fail> {
    let v = live.session_control(session);
    if v.status != "positive" {
        return Err(protocol(format!("could not enter session {session:#04x}: {}", v.decode)));
    }
    Ok(())
}

fn write_samples(path: &Path, samples: &[Sample], live: &Live) -> Result<(), Fail> {
    let file = File::create(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let mut w = csv::Writer::from_writer(file);
    let io = |e: csv::Error| protocol(e.to_string());
    w.write_record(["t_ns", "did", "name", "raw_hex", "value", "unit", "error"]).map_err(io)?;
    for s in samples {
        let name = live.tester().catalog().get(s.did).map(|i| i.name.clone()).unwrap_or_default();
        let err = s
            .error
            .as_ref()
            .map(|e| serde_json::to_value(e).ok().and_then(|v| v["error"].as_str().map(String::from)).unwrap_or_default())
            .unwrap_or_default();
        w.write_record([
            s.t.as_nanos().to_string(),
            format!("{:04x}", s.did),
            name,
            to_hex(&s.raw),
            s.value.map(|v| v.to_string()).unwrap_or_default(),
            s.unit.clone(),
            err,
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| protocol(e.to_string()))
}

fn execute(cli: &Cli, out: &mut impl Write) -> Result<(), Fail> {
    let cfg = load_config(cli)?;
    let io = |e: io::Error| protocol(e.to_string());
    match &cli.command {
        Command::Sim { duration } => {
            let mut live = Live::new(&cfg);
            live.set_keep_alive(false);
            live.advance(Duration::from_millis(*duration)).map_err(|e| protocol(e.to_string()))?;
            let rec = live.tester().link().recording().expect("live sessions record");
            for r in rec.iter() {
                let decode = r.decode.as_ref().map(|d| d.text()).unwrap_or("");
                writeln!(
                    out,
                    "{:>12.3} {:<13} {:>8} {:<16} {decode}",
                    r.t.as_nanos() as f64 / 1e6,
                    r.direction.as_str(),
                    r.frame.id().to_string(),
                    to_hex(r.frame.data())
                )
                .map_err(io)?;
            }
            writeln!(out, "{} frames on the OBD2 port, {} dropped by the gateway", rec.len(), live.tester().link().gateway_dropped())
                .map_err(io)?;
            Ok(())
        }
        Command::Req { hex, session } => {
            let pdu = from_hex(hex).map_err(|e| usage(e.to_string()))?;
            if pdu.is_empty() {
                return Err(usage("empty request"));
            }
            let mut live = Live::new(&cfg);
            if let Some(s) = session {
                enter(&mut live, *s)?;
            }
            let v = live.request(&pdu);
            print_exchange(out, &v).map_err(io)?;
            if v.ok() {
                Ok(())
            } else {
                Err(protocol(format!("request failed: {}", v.decode)))
            }
        }
        Command::Unlock { level, key_fn } => {
            let mut live = Live::new(&cfg);
            enter(&mut live, 0x03)?;
            let v = live.unlock(*level, *key_fn);
            writeln!(out, "level {:#04x} ({}): {}", v.level, v.key_fn, v.outcome).map_err(io)?;
            match v.error {
                None => Ok(()),
                Some(e) => Err(protocol(e)),
            }
        }
        Command::Dtc { action } => {
            let mut live = Live::new(&cfg);
            let v = match action {
                DtcAction::Read { mask } => live.read_dtcs(*mask),
                DtcAction::Clear { group } => {
                    let g: [u8; 3] = from_hex(group)
                        .ok()
                        .and_then(|v| v.try_into().ok())
                        .ok_or_else(|| usage("group must be three hex bytes"))?;
                    live.clear_dtcs(g)
                }
            };
            print_exchange(out, &v).map_err(io)?;
            if let (DtcAction::Read { .. }, Some(hex)) = (action, &v.response_hex) {
                let bytes = from_hex(hex).unwrap_or_default();
                for d in bytes.get(1..).and_then(parse_dtc_list).unwrap_or_default() {
                    writeln!(out, "{}  status {:#04x}", format_dtc(&d), d.status).map_err(io)?;
                }
            }
            if v.ok() {
                Ok(())
            } else {
                Err(protocol(format!("request failed: {}", v.decode)))
            }
        }
        Command::Poll { list, duration, out: path } => {
            let specs = read_poll_list(list)?;
            let mut live = Live::new(&cfg);
            live.set_poll_list(&specs).map_err(|e| usage(e.to_string()))?;
            let samples = live.advance(Duration::from_millis(*duration)).map_err(|e| protocol(e.to_string()))?;
            write_samples(path, &samples, &live)?;
            let failed = samples.iter().filter(|s| !s.is_ok()).count();
            writeln!(out, "{} samples ({failed} failed) written to {}", samples.len(), path.display()).map_err(io)?;
            if failed > 0 {
                return Err(protocol(format!("{failed} reads failed")));
            }
            Ok(())
        }
        Command::Fuzz { out: path } => {
            let report = run(&generate_matrix(&cfg), &cfg).map_err(|e| protocol(e.to_string()))?;
            let file = File::create(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            report.write_jsonl(io::BufWriter::new(file)).map_err(io)?;
            write!(out, "{}", report.render_table()).map_err(io)?;
            if report.all_passed() {
                Ok(())
            } else {
                Err(protocol(format!("{} cases failed", report.total() - report.passed())))
            }
        }
        Command::Record {
            trigger,
            pre,
            post,
            out: path,
            sends,
            gap,
            duration,
            poll,
        } => {
            let predicate: TriggerPredicate = trigger.parse().map_err(|e: udsbench::trace::TraceError| usage(e.to_string()))?;
            let pdus = sends
                .iter()
                .map(|h| from_hex(h).map_err(|e| usage(e.to_string())))
                .collect::<Result<Vec<_>, _>>()?;
            let mut live = Live::new(&cfg);
            let mut channels = ChannelSet::new();
            if let Some(p) = poll {
                let specs = read_poll_list(p)?;
                for s in &specs {
                    let info = live.tester().catalog().get(s.did).cloned();
                    let (name, unit) = info
                        .map(|i| (i.name, i.scaling.map(|sc| sc.unit).unwrap_or_default()))
                        .unwrap_or_else(|| (format!("{:04x}", s.did), String::new()));
                    channels.define_did(&name, &unit, s.did).map_err(|e| usage(e.to_string()))?;
                }
                live.set_poll_list(&specs).map_err(|e| usage(e.to_string()))?;
            }
            let end = live.now() + Duration::from_millis(*duration);
            let mut samples = Vec::new();
            for pdu in &pdus {
                let v = live.request(pdu);
                print_exchange(out, &v).map_err(io)?;
                samples.extend(live.advance(Duration::from_millis(*gap)).map_err(|e| protocol(e.to_string()))?);
            }
            let rest = end.saturating_since(live.now());
            samples.extend(live.advance(rest).map_err(|e| protocol(e.to_string()))?);
            for s in &samples {
                channels.push_sample(s);
            }
            let rec = live.tester().link().recording().expect("live sessions record");
            let spec = TriggerSpec::new(predicate, *pre, *post);
            let (t_fire, win) = capture(rec, &spec, Some(&channels)).map_err(|e| protocol(e.to_string()))?;
            let mut kept = Recording::with_capacity(win.len().max(1));
            for r in win {
                kept.append(r).map_err(|e| protocol(e.to_string()))?;
            }
            export(&kept, ExportFormat::from_path(path), path).map_err(|e| protocol(e.to_string()))?;
            writeln!(out, "trigger fired at {t_fire}; {} records written to {}", kept.len(), path.display()).map_err(io)?;
            Ok(())
        }
        Command::Serve { bind, turbo } => {
            let name = cli
                .ecu
                .as_ref()
                .and_then(|p| p.file_stem())
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| cfg.name.clone());
            let state = AppState::new(vec![(name, cfg)], *turbo);
            let rt = tokio::runtime::Runtime::new().map_err(io)?;
            rt.block_on(serve(state, *bind)).map_err(|e| usage(format!("serve: {e}")))
        }
    }
}

/// Parse `args` and run; returns the process exit code.
pub fn main_with<I, T>(args: I, out: &mut impl Write, err: &mut impl Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => EXIT_OK,
        Err(Fail(code, msg)) => {
            let _ = writeln!(err, "diagd: {msg}");
            code
        }
    }
}
