//! JSON-lines protocol over the rearrangement environment.
//!
//! One request per line, one response per request, in order. Every
//! response echoes the request's `id`. Commands:
//!
//! | `cmd`   | arguments                                               | response fields                         |
//! |---------|---------------------------------------------------------|-----------------------------------------|
//! | `spec`  | none                                                    | `protocol`, `n`, `scheme`, `config`, `reward_mode`, `gamma` |
//! | `reset` | `n`, `scheme`, `seed` [, `config`] or `instance`; optional `reward_mode`, `gamma` | `obs` |
//! | `step`  | `a1`, `a2` (object index, `-1` for IDLE)                | `obs`, `reward`, `done`, `info`         |
//! | `close` | none                                                    | `closed`                                |
//!
//! Failures produce `{"id":..,"error":{"code":..,"message":..}}` and leave
//! the session and its environment untouched.

use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream};
use std::thread;

use dualarm_core::env::EnvOptions;
use dualarm_core::{
    sample_instance, AssignmentPair, EnvError, Instance, RearrangeEnv, RewardMode, SamplerSpec, Scheme,
    WorkspaceConfig,
};
use serde::Deserialize;
use serde_json::{json, Value};

pub const PROTOCOL_VERSION: u32 = 1;

/// Machine-readable error codes.
pub mod code {
    pub const PARSE_ERROR: &str = "PARSE_ERROR";
    pub const BAD_REQUEST: &str = "BAD_REQUEST";
    pub const NO_EPISODE: &str = "NO_EPISODE";
    pub const EPISODE_DONE: &str = "EPISODE_DONE";
    pub const ILLEGAL_ACTION: &str = "ILLEGAL_ACTION";
    pub const INVALID_INSTANCE: &str = "INVALID_INSTANCE";
    pub const PLAN_FAILED: &str = "PLAN_FAILED";
}

#[derive(Debug, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case", deny_unknown_fields)]
enum Command {
    Spec {
        #[serde(rename = "id")]
        _id: Option<Value>,
    },
    Reset {
        #[serde(rename = "id")]
        _id: Option<Value>,
        n: Option<usize>,
        scheme: Option<Scheme>,
        seed: Option<u64>,
        config: Option<WorkspaceConfig>,
        instance: Option<Instance>,
        reward_mode: Option<RewardMode>,
        gamma: Option<f64>,
    },
    Step {
        #[serde(rename = "id")]
        _id: Option<Value>,
        a1: i64,
        a2: i64,
    },
    Close {
        #[serde(rename = "id")]
        _id: Option<Value>,
    },
}

struct Failure {
    code: &'static str,
    message: String,
}

fn fail(code: &'static str, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

/// What to send back for one request line.
#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub body: Value,
    /// The session ends after this reply.
    pub close: bool,
}

/// One client's environment and settings.
#[derive(Default)]
pub struct Session {
    env: Option<RearrangeEnv>,
}

impl Session {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn env(&self) -> Option<&RearrangeEnv> {
        self.env.as_ref()
    }

    /// Handles one request line (without its newline).
    pub fn handle(&mut self, line: &str) -> Reply {
        let value: Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => return error_reply(Value::Null, fail(code::PARSE_ERROR, e.to_string())),
        };
        let id = value.get("id").cloned().unwrap_or(Value::Null);
        let cmd = match Command::deserialize(&value) {
            Ok(c) => c,
            Err(e) => return error_reply(id, fail(code::BAD_REQUEST, e.to_string())),
        };
        let close = matches!(cmd, Command::Close { .. });
        match self.dispatch(cmd) {
            Ok(Value::Object(mut fields)) => {
                fields.insert("id".into(), id);
                Reply {
                    body: Value::Object(fields),
                    close,
                }
            }
            Ok(_) => unreachable!("dispatch returns objects"),
            Err(f) => error_reply(id, f),
        }
    }

    fn dispatch(&mut self, cmd: Command) -> Result<Value, Failure> {
        match cmd {
            Command::Spec { .. } => {
                let (n, scheme, config, options) = match &self.env {
                    Some(env) => (
                        json!(env.instance().len()),
                        json!(env.instance().scheme),
                        json!(env.instance().config),
                        *env.options(),
                    ),
                    None => (Value::Null, Value::Null, json!(WorkspaceConfig::default()), EnvOptions::default()),
                };
                Ok(json!({
                    "protocol": PROTOCOL_VERSION,
                    "n": n,
                    "scheme": scheme,
                    "config": config,
                    "reward_mode": options.reward_mode,
                    "gamma": options.gamma,
                }))
            }
            Command::Reset {
                n,
                scheme,
                seed,
                config,
                instance,
                reward_mode,
                gamma,
                ..
            } => {
                let instance = match (instance, n, scheme) {
                    (Some(inst), None, None) if seed.is_none() && config.is_none() => {
                        inst.validate().map_err(|e| fail(code::INVALID_INSTANCE, e.to_string()))?;
                        inst
                    }
                    (None, Some(n), Some(scheme)) => {
                        let spec = SamplerSpec {
                            n,
                            scheme,
                            seed: seed.unwrap_or(0),
                            config: config.unwrap_or_default(),
                        };
                        sample_instance(&spec).map_err(|e| fail(code::INVALID_INSTANCE, e.to_string()))?
                    }
                    _ => {
                        return Err(fail(
                            code::BAD_REQUEST,
                            "reset needs either `instance` or `n` and `scheme` (with optional `seed`, `config`)",
                        ))
                    }
                };
                let mut options = EnvOptions::default();
                if let Some(mode) = reward_mode {
                    options.reward_mode = mode;
                }
                if let Some(g) = gamma {
                    if !(0.0..=1.0).contains(&g) {
                        return Err(fail(code::BAD_REQUEST, format!("gamma {g} outside [0, 1]")));
                    }
                    options.gamma = g;
                }
                let env = self.env.insert(RearrangeEnv::with_options(instance, options));
                Ok(json!({ "obs": env.observation() }))
            }
            Command::Step { a1, a2, .. } => {
                let env = self
                    .env
                    .as_mut()
                    .ok_or_else(|| fail(code::NO_EPISODE, "step before reset"))?;
                let pair = AssignmentPair::new(slot(a1)?, slot(a2)?);
                let r = env.step(pair).map_err(|e| match e {
                    EnvError::IllegalAction { .. } => fail(code::ILLEGAL_ACTION, e.to_string()),
                    EnvError::EpisodeDone => fail(code::EPISODE_DONE, e.to_string()),
                    EnvError::Plan(_) => fail(code::PLAN_FAILED, e.to_string()),
                })?;
                Ok(json!({
                    "obs": r.observation,
                    "reward": r.reward,
                    "done": r.done,
                    "info": r.info,
                }))
            }
            Command::Close { .. } => Ok(json!({ "closed": true })),
        }
    }
}

fn slot(a: i64) -> Result<Option<usize>, Failure> {
    match a {
        -1 => Ok(None),
        a if a >= 0 => Ok(Some(a as usize)),
        a => Err(fail(code::BAD_REQUEST, format!("object index {a}; use -1 for IDLE"))),
    }
}

fn error_reply(id: Value, f: Failure) -> Reply {
    Reply {
        body: json!({ "id": id, "error": { "code": f.code, "message": f.message } }),
        close: false,
    }
}

/// Serves one session until `close` or end of input. Lines that are not
/// valid UTF-8 are decoded lossily and answered with a parse error.
pub fn serve_stream(reader: impl BufRead, mut writer: impl Write) -> io::Result<()> {
    let mut session = Session::new();
    let mut reader = reader;
    let mut buf = Vec::new();
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            return Ok(());
        }
        let line = String::from_utf8_lossy(&buf);
        let line = line.trim_end_matches(['\n', '\r']);
        if line.trim().is_empty() {
            continue;
        }
        let reply = session.handle(line);
        serde_json::to_writer(&mut writer, &reply.body)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
        if reply.close {
            return Ok(());
        }
    }
}

pub fn serve_stdio() -> io::Result<()> {
    let stdin = io::stdin();
    let stdout = io::stdout();
    serve_stream(stdin.lock(), BufWriter::new(stdout.lock()))
}

fn serve_connection(stream: TcpStream) -> io::Result<()> {
    let reader = BufReader::new(stream.try_clone()?);
    serve_stream(reader, BufWriter::new(stream))
}

/// Accepts connections, one session per connection on its own thread. With
/// `sessions = Some(k)` it stops accepting after `k` connections and returns
/// once they have all finished.
pub fn serve_tcp(listener: TcpListener, sessions: Option<usize>) -> io::Result<()> {
    let mut handles = Vec::new();
    for (accepted, stream) in listener.incoming().enumerate() {
        let stream = stream?;
        handles.push(thread::spawn(move || {
            let _ = serve_connection(stream);
        }));
        if sessions.is_some_and(|k| accepted + 1 >= k) {
            break;
        }
    }
    for h in handles {
        let _ = h.join();
    }
    Ok(())
}
