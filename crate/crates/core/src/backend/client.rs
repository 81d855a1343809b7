use std::fmt;
use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use super::frame::{Frame, FrameKind, DEFAULT_PAYLOAD_CAP};
use crate::error::{Error, Result};
use crate::resample::Upscaler2x;
use crate::volume::Volume;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Transport {
    /// Child process speaking frames over stdin/stdout.
    Exec(Vec<String>),
    Tcp {
        host: String,
        port: u16,
    },
}

/// `exec:<command>@level=<i>` or `tcp:<host>:<port>@level=<i>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EndpointSpec {
    pub transport: Transport,
    /// The level this model produces (it upscales level `level + 1` to `level`).
    pub level: u32,
}

impl FromStr for EndpointSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: &str| Error::BadSpec(format!("`{s}`: {why}"));
        let (target, level) = s
            .rsplit_once("@level=")
            .ok_or_else(|| bad("missing @level=<i>"))?;
        let level: u32 = level
            .parse()
            .map_err(|_| bad("level is not an unsigned integer"))?;
        let transport = if let Some(cmd) = target.strip_prefix("exec:") {
            let argv: Vec<String> = cmd.split_whitespace().map(str::to_string).collect();
            if argv.is_empty() {
                return Err(bad("empty command"));
            }
            Transport::Exec(argv)
        } else if let Some(addr) = target.strip_prefix("tcp:") {
            let (host, port) = addr
                .rsplit_once(':')
                .ok_or_else(|| bad("expected host:port"))?;
            if host.is_empty() {
                return Err(bad("empty host"));
            }
            let port = port.parse().map_err(|_| bad("bad port"))?;
            Transport::Tcp {
                host: host
                    .trim_start_matches('[')
                    .trim_end_matches(']')
                    .to_string(),
                port,
            }
        } else {
            return Err(bad("transport must be exec: or tcp:"));
        };
        Ok(EndpointSpec { transport, level })
    }
}

impl fmt::Display for EndpointSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.transport {
            Transport::Exec(argv) => write!(f, "exec:{}@level={}", argv.join(" "), self.level),
            Transport::Tcp { host, port } => write!(f, "tcp:{host}:{port}@level={}", self.level),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ClientOptions {
    pub handshake_timeout: Duration,
    pub request_timeout: Duration,
    pub payload_cap: u64,
}

impl Default for ClientOptions {
    fn default() -> Self {
        ClientOptions {
            handshake_timeout: Duration::from_secs(10),
            request_timeout: Duration::from_secs(120),
            payload_cap: DEFAULT_PAYLOAD_CAP,
        }
    }
}

/// Live session with one level's model server. One request in flight at a time.
pub struct ModelHandle {
    spec: EndpointSpec,
    opts: ClientOptions,
    writer: Option<Box<dyn Write + Send>>,
    responses: Receiver<Result<Frame>>,
    child: Option<Child>,
    broken: bool,
}

impl fmt::Debug for ModelHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelHandle")
            .field("spec", &self.spec)
            .field("broken", &self.broken)
            .finish()
    }
}

fn spawn_reader(mut r: impl Read + Send + 'static, cap: u64) -> Receiver<Result<Frame>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || loop {
        match Frame::read_from(&mut r, cap) {
            Ok(Some(frame)) => {
                if tx.send(Ok(frame)).is_err() {
                    return;
                }
            }
            Ok(None) => {
                let _ = tx.send(Err(Error::ProtocolViolation(
                    "server closed the stream".into(),
                )));
                return;
            }
            Err(e) => {
                let _ = tx.send(Err(e));
                return;
            }
        }
    });
    rx
}

pub fn connect(spec: &str) -> Result<ModelHandle> {
    connect_with(&spec.parse()?, ClientOptions::default())
}

pub fn connect_with(spec: &EndpointSpec, opts: ClientOptions) -> Result<ModelHandle> {
    let (writer, responses, child): (Box<dyn Write + Send>, _, _) = match &spec.transport {
        Transport::Exec(argv) => {
            let mut child = Command::new(&argv[0])
                .args(&argv[1..])
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .stderr(Stdio::inherit())
                .spawn()
                .map_err(|e| Error::ConnectFailed(format!("{}: {e}", argv[0])))?;
            let stdin = child.stdin.take().expect("piped stdin");
            let stdout = child.stdout.take().expect("piped stdout");
            let rx = spawn_reader(BufReader::new(stdout), opts.payload_cap);
            (Box::new(BufWriter::new(stdin)), rx, Some(child))
        }
        Transport::Tcp { host, port } => {
            let addrs: Vec<_> = (host.as_str(), *port)
                .to_socket_addrs()
                .map_err(|e| Error::ConnectFailed(format!("{host}:{port}: {e}")))?
                .collect();
            let mut last = None;
            let mut stream = None;
            for addr in addrs {
                match TcpStream::connect_timeout(&addr, opts.handshake_timeout) {
                    Ok(s) => {
                        stream = Some(s);
                        break;
                    }
                    Err(e) => last = Some(e),
                }
            }
            let stream = stream.ok_or_else(|| {
                Error::ConnectFailed(format!(
                    "{host}:{port}: {}",
                    last.map_or("no addresses".to_string(), |e| e.to_string())
                ))
            })?;
            let _ = stream.set_nodelay(true);
            let reader = stream.try_clone()?;
            let rx = spawn_reader(BufReader::new(reader), opts.payload_cap);
            (Box::new(BufWriter::new(stream)), rx, None)
        }
    };
    let mut handle = ModelHandle {
        spec: spec.clone(),
        opts,
        writer: Some(writer),
        responses,
        child,
        broken: false,
    };
    handle.handshake()?;
    Ok(handle)
}

impl ModelHandle {
    pub fn spec(&self) -> &EndpointSpec {
        &self.spec
    }

    pub fn level(&self) -> u32 {
        self.spec.level
    }

    fn send(&mut self, frame: &Frame) -> Result<()> {
        let w = self
            .writer
            .as_mut()
            .expect("writer open while handle alive");
        if let Err(e) = frame.write_to(w) {
            self.broken = true;
            return Err(Error::ConnectFailed(format!(
                "{}: write failed: {e}",
                self.spec
            )));
        }
        Ok(())
    }

    fn handshake(&mut self) -> Result<()> {
        self.send(&Frame::handshake(FrameKind::Request, self.spec.level))?;
        match self.responses.recv_timeout(self.opts.handshake_timeout) {
            Ok(Ok(f)) if f.kind == FrameKind::Response && f.is_handshake() => Ok(()),
            Ok(Ok(f)) if f.kind == FrameKind::Error => Err(Error::ServerError(f.message())),
            Ok(Ok(f)) => Err(Error::ProtocolViolation(format!(
                "unexpected handshake reply: {:?} with dims {:?}",
                f.kind, f.dims
            ))),
            Ok(Err(e)) => Err(Error::ConnectFailed(format!("{}: {e}", self.spec))),
            Err(RecvTimeoutError::Timeout) => Err(Error::HandshakeTimeout),
            Err(RecvTimeoutError::Disconnected) => Err(Error::ConnectFailed(format!(
                "{}: server went away",
                self.spec
            ))),
        }
    }

    /// Sends `v` to the server and returns its 2x upscaled reply.
    pub fn infer2x(&mut self, v: &Volume) -> Result<Volume> {
        if self.broken {
            return Err(Error::ConnectFailed(format!(
                "{}: connection unusable after an earlier failure",
                self.spec
            )));
        }
        if let Some(index) = v.data().iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteValue { index });
        }
        let bytes = 4 * v.len() as u64;
        if bytes > self.opts.payload_cap {
            return Err(Error::PayloadTooLarge {
                bytes,
                cap: self.opts.payload_cap,
            });
        }
        self.send(&Frame::request(self.spec.level, v))?;
        let started = Instant::now();
        let frame = match self.responses.recv_timeout(self.opts.request_timeout) {
            Ok(Ok(f)) => f,
            Ok(Err(e)) => {
                self.broken = true;
                return Err(e);
            }
            Err(RecvTimeoutError::Timeout) => {
                self.broken = true;
                return Err(Error::Timeout);
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.broken = true;
                return Err(Error::ProtocolViolation("server closed the stream".into()));
            }
        };
        let _ = started;
        match frame.kind {
            FrameKind::Error => return Err(Error::ServerError(frame.message())),
            FrameKind::Request => {
                self.broken = true;
                return Err(Error::ProtocolViolation(
                    "server sent a request frame".into(),
                ));
            }
            FrameKind::Response => {}
        }
        if frame.level != self.spec.level {
            return Err(Error::ProtocolViolation(format!(
                "response for level {} on a level-{} connection",
                frame.level, self.spec.level
            )));
        }
        let expected: Vec<u64> = v.dims().iter().map(|&d| 2 * d as u64).collect();
        if frame.dims != expected {
            return Err(Error::ProtocolViolation(format!(
                "response dims {:?}, expected {:?}",
                frame.dims, expected
            )));
        }
        frame.to_volume()
    }
}

impl Upscaler2x for ModelHandle {
    fn upscale2x(&mut self, v: &Volume) -> Result<Volume> {
        self.infer2x(v)
    }

    fn name(&self) -> String {
        self.spec.to_string()
    }
}

impl Drop for ModelHandle {
    fn drop(&mut self) {
        // Closing our end lets a well-behaved server exit on its own.
        drop(self.writer.take());
        if let Some(mut child) = self.child.take() {
            let deadline = Instant::now() + Duration::from_millis(500);
            while Instant::now() < deadline {
                if let Ok(Some(_)) = child.try_wait() {
                    return;
                }
                thread::sleep(Duration::from_millis(10));
            }
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}
