//! TCP service. Each connection gets a writer thread draining its own
//! telemetry subscription and a reader thread forwarding control messages
//! to the single session controller.

use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{Receiver, Sender, TryRecvError};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use log::{debug, info, warn};

use super::bus::TelemetryBus;
use super::model_file::read_model;
use super::telemetry::{parse_control, ControlMessage, Decoded, LogLevel};
use super::IoError;
use crate::engine::Engine;
use crate::session::{Flow, Session, SessionError, Stage, StageMonitor};
use crate::source::SampleSource;

const POLL: Duration = Duration::from_millis(50);

pub struct Server {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl Server {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Binds and starts accepting connections. Valid control messages are sent
/// on `controls`; malformed ones are answered with a `log` message and the
/// connection stays open.
pub fn serve(bind: impl ToSocketAddrs, bus: TelemetryBus, controls: Sender<ControlMessage>) -> Result<Server, IoError> {
    let listener = TcpListener::bind(bind)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let shutdown = Arc::new(AtomicBool::new(false));
    let flag = shutdown.clone();
    let accept = std::thread::Builder::new().name("telemetry-accept".into()).spawn(move || {
        let mut workers: Vec<JoinHandle<()>> = Vec::new();
        while !flag.load(Ordering::SeqCst) {
            match listener.accept() {
                Ok((stream, peer)) => {
                    info!("telemetry client {peer} connected");
                    match spawn_connection(stream, bus.clone(), controls.clone(), flag.clone()) {
                        Ok(handles) => workers.extend(handles),
                        Err(e) => warn!("could not start connection {peer}: {e}"),
                    }
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(10)),
                Err(e) => {
                    warn!("accept failed: {e}");
                    std::thread::sleep(POLL);
                }
            }
            workers.retain(|h| !h.is_finished());
        }
        for h in workers {
            let _ = h.join();
        }
    })?;
    Ok(Server { addr, shutdown, accept: Some(accept) })
}

fn spawn_connection(
    stream: TcpStream,
    bus: TelemetryBus,
    controls: Sender<ControlMessage>,
    shutdown: Arc<AtomicBool>,
) -> std::io::Result<[JoinHandle<()>; 2]> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(POLL))?;
    let peer = stream.peer_addr()?;
    let closed = Arc::new(AtomicBool::new(false));
    let subscription = bus.subscribe();

    let mut out = stream.try_clone()?;
    let writer_closed = closed.clone();
    let writer_shutdown = shutdown.clone();
    let writer = std::thread::Builder::new().name(format!("telemetry-out-{peer}")).spawn(move || {
        while !writer_shutdown.load(Ordering::SeqCst) && !writer_closed.load(Ordering::SeqCst) {
            let Some(line) = subscription.recv_timeout(POLL) else { continue };
            let mut batch = String::with_capacity(line.len() + 1);
            batch.push_str(&line);
            batch.push('\n');
            while let Some(more) = subscription.try_recv() {
                batch.push_str(&more);
                batch.push('\n');
            }
            if out.write_all(batch.as_bytes()).is_err() {
                break;
            }
        }
        writer_closed.store(true, Ordering::SeqCst);
        let _ = out.shutdown(Shutdown::Both);
    })?;

    let reader = std::thread::Builder::new().name(format!("telemetry-in-{peer}")).spawn(move || {
        let mut input = BufReader::new(stream);
        let mut buf = Vec::new();
        while !shutdown.load(Ordering::SeqCst) && !closed.load(Ordering::SeqCst) {
            match input.read_until(b'\n', &mut buf) {
                Ok(0) => break,
                Ok(_) if buf.last() != Some(&b'\n') => continue,
                Ok(_) => {
                    let line = String::from_utf8_lossy(&buf).trim().to_string();
                    buf.clear();
                    if line.is_empty() {
                        continue;
                    }
                    match parse_control(&line) {
                        Ok(Decoded::Message(msg)) => {
                            debug!("control from {peer}: {msg:?}");
                            if controls.send(msg).is_err() {
                                bus.log(0, LogLevel::Error, "session controller is not running");
                            }
                        }
                        Ok(Decoded::Unknown(kind)) => {
                            info!("ignoring unknown control kind `{kind}` from {peer}");
                            bus.log(0, LogLevel::Info, format!("ignored unknown control kind `{kind}`"));
                        }
                        Err(e) => {
                            warn!("{peer}: {e}");
                            bus.log(0, LogLevel::Warn, e.to_string());
                        }
                    }
                }
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => continue,
                Err(_) => break,
            }
        }
        closed.store(true, Ordering::SeqCst);
        info!("telemetry client {peer} disconnected");
    })?;
    Ok([writer, reader])
}

/// Applies operator controls while a stage streams: `stop` ends the stage,
/// `motor` toggles the orthosis. Optionally paces the stream to wall-clock
/// time.
pub struct ControlMonitor<'a> {
    controls: &'a Receiver<ControlMessage>,
    bus: Option<TelemetryBus>,
    realtime: bool,
    started: Option<(Instant, u64)>,
    disconnected: bool,
}

impl<'a> ControlMonitor<'a> {
    pub fn new(controls: &'a Receiver<ControlMessage>, bus: Option<TelemetryBus>, realtime: bool) -> Self {
        Self { controls, bus, realtime, started: None, disconnected: false }
    }

    fn reject(&self, t_ms: u64, what: &str) {
        if let Some(bus) = &self.bus {
            bus.log(t_ms, LogLevel::Warn, format!("{what} rejected while a stage is running"));
        }
    }
}

impl StageMonitor for ControlMonitor<'_> {
    fn poll(&mut self, engine: &mut Engine, t_ms: u64) -> Flow {
        loop {
            match self.controls.try_recv() {
                Ok(ControlMessage::Stop) => return Flow::Stop,
                Ok(ControlMessage::Motor { engaged }) => engine.set_motor(engaged),
                Ok(ControlMessage::StartStage { .. }) => self.reject(t_ms, "start_stage"),
                Ok(ControlMessage::LoadModel { .. }) => self.reject(t_ms, "load_model"),
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => {
                    self.disconnected = true;
                    return Flow::Stop;
                }
            }
        }
        if self.realtime {
            // Restart the clock whenever a new stream begins at t = 0.
            let (start, base) = match self.started {
                Some((start, base)) if t_ms >= base => (start, base),
                _ => {
                    let s = (Instant::now(), t_ms);
                    self.started = Some(s);
                    s
                }
            };
            let due = start + Duration::from_millis(t_ms - base);
            let now = Instant::now();
            if due > now {
                std::thread::sleep(due - now);
            }
        }
        Flow::Continue
    }
}

/// The session's control loop: waits for control messages and runs the
/// requested stages until every sender is gone.
pub fn run_controller<S: SampleSource + ?Sized>(
    session: &mut Session,
    source: &mut S,
    controls: &Receiver<ControlMessage>,
    realtime: bool,
) {
    let bus = session.telemetry().cloned();
    let log = |level: LogLevel, message: String| {
        match level {
            LogLevel::Error | LogLevel::Warn => warn!("{message}"),
            _ => info!("{message}"),
        }
        if let Some(bus) = &bus {
            bus.log(0, level, message);
        }
    };
    while let Ok(msg) = controls.recv() {
        match msg {
            ControlMessage::StartStage { stage, duration_ms } => {
                if let Err(e) = session.begin_stage(stage) {
                    log(LogLevel::Warn, e.to_string());
                    continue;
                }
                let mut monitor = ControlMonitor::new(controls, bus.clone(), realtime);
                let outcome: Result<String, SessionError> = match stage {
                    Stage::Idle => Ok("idle".into()),
                    Stage::Collect => session
                        .run_collection_with(source, &mut monitor)
                        .map(|r| format!("collected {} recordings", r.len())),
                    Stage::Train => session.train_iteration().map(|_| "model trained".into()),
                    Stage::Evaluate => session
                        .evaluate_iteration()
                        .map(|r| format!("accuracy {:.3}, raw {:.3}", r.test_accuracy, r.raw_accuracy)),
                    Stage::Practice => {
                        let duration = duration_ms.unwrap_or(session.config().practice_duration_ms);
                        session
                            .run_practice_with(source, duration, &mut monitor)
                            .map(|s| format!("practice ended after {} frames", s.frames))
                    }
                };
                match outcome {
                    Ok(m) => log(LogLevel::Info, m),
                    Err(e) => log(LogLevel::Error, e.to_string()),
                }
                if monitor.disconnected {
                    break;
                }
            }
            ControlMessage::Stop => log(LogLevel::Info, "no stage is running".into()),
            ControlMessage::Motor { engaged } => session.set_motor(engaged),
            ControlMessage::LoadModel { path } => match read_model(std::path::Path::new(&path)) {
                Ok(model) => {
                    session.load_model(Arc::new(model));
                    log(LogLevel::Info, format!("loaded model {path}"));
                }
                Err(e) => log(LogLevel::Error, format!("load_model {path}: {e}")),
            },
        }
    }
}

/// Minimal line client for scripts and tests.
pub struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, IoError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self { writer: stream.try_clone()?, reader: BufReader::new(stream) })
    }

    pub fn send(&mut self, msg: &ControlMessage) -> Result<(), IoError> {
        self.send_raw(&msg.to_line())
    }

    pub fn send_raw(&mut self, line: &str) -> Result<(), IoError> {
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        Ok(())
    }

    /// Next line, or None on timeout or disconnect.
    pub fn recv_line(&mut self, timeout: Duration) -> Option<String> {
        self.reader.get_ref().set_read_timeout(Some(timeout)).ok()?;
        let mut line = String::new();
        match self.reader.read_line(&mut line) {
            Ok(0) | Err(_) => None,
            Ok(_) => Some(line.trim_end().to_string()),
        }
    }

    /// Stream handle for stalling tests that never read.
    pub fn stream(&self) -> &TcpStream {
        &self.writer
    }
}
