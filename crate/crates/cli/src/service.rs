//! Network service mode: a subscriber port speaking the envelope protocol and
//! an ingest port accepting trace lines. Every connection feeds one command
//! queue owned by a single worker thread, so external observers see one total
//! order of state changes.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::{Duration, Instant};

use ctxcm_core::formats::{
    encode_envelope, parse_trace_line, ConfirmReplyBody, Envelope, EnvelopeKind, EnvelopeReader,
    SubscribeBody,
};
use ctxcm_core::identify::ActionEvent;
use ctxcm_core::manager::{ContextManager, ManagerConfig, WriterSink};
use ctxcm_core::model::{AgentId, Ontology};

pub struct ServiceConfig {
    pub ontology: Ontology,
    pub manager: ManagerConfig,
    /// Port for subscriber connections; 0 picks an ephemeral port.
    pub subscriber_port: u16,
    /// Port for trace-line ingest; 0 picks an ephemeral port.
    pub ingest_port: u16,
    pub log_writer: Option<Box<dyn Write + Send>>,
    /// Wall-clock lifetime of a confirmation request in service mode.
    pub confirm_timeout: Duration,
}

impl ServiceConfig {
    pub fn new(ontology: Ontology, manager: ManagerConfig) -> Self {
        Self {
            ontology,
            manager,
            subscriber_port: 0,
            ingest_port: 0,
            log_writer: None,
            confirm_timeout: Duration::from_secs(30),
        }
    }
}

enum Command {
    Event {
        event: ActionEvent,
        done: Option<mpsc::SyncSender<()>>,
    },
    Notice(String),
    Subscribe {
        body: SubscribeBody,
        stream: TcpStream,
    },
    ConfirmReply {
        app_id: String,
        body: ConfirmReplyBody,
    },
    Detach {
        app_id: String,
    },
    Tick,
    Shutdown,
}

pub struct ServiceHandle {
    pub subscriber_addr: SocketAddr,
    pub ingest_addr: SocketAddr,
    commands: mpsc::Sender<Command>,
    stop: Arc<AtomicBool>,
    worker: thread::JoinHandle<ContextManager>,
}

impl ServiceHandle {
    /// Stops accepting, drains the queue, and returns the final manager state
    /// so records and logs can be flushed.
    pub fn shutdown(self) -> ContextManager {
        self.stop.store(true, Ordering::SeqCst);
        let _ = self.commands.send(Command::Shutdown);
        self.worker.join().expect("service worker never panics")
    }
}

/// Binds both ports and starts the acceptor, ticker, and worker threads.
pub fn start(config: ServiceConfig) -> std::io::Result<ServiceHandle> {
    let subscriber_listener =
        TcpListener::bind(("127.0.0.1", config.subscriber_port))?;
    let ingest_listener = TcpListener::bind(("127.0.0.1", config.ingest_port))?;
    let subscriber_addr = subscriber_listener.local_addr()?;
    let ingest_addr = ingest_listener.local_addr()?;
    subscriber_listener.set_nonblocking(true)?;
    ingest_listener.set_nonblocking(true)?;

    let (commands, inbox) = mpsc::channel::<Command>();
    let stop = Arc::new(AtomicBool::new(false));

    let mut manager = ContextManager::new(config.ontology, config.manager);
    if let Some(writer) = config.log_writer {
        manager.set_log_writer(writer);
    }
    let confirm_timeout = config.confirm_timeout;
    let worker = thread::spawn(move || worker_loop(manager, inbox, confirm_timeout));

    spawn_acceptor(subscriber_listener, stop.clone(), commands.clone(), subscriber_conn);
    spawn_acceptor(ingest_listener, stop.clone(), commands.clone(), ingest_conn);

    let ticker_stop = stop.clone();
    let ticker_commands = commands.clone();
    thread::spawn(move || loop {
        thread::sleep(Duration::from_millis(200));
        if ticker_stop.load(Ordering::SeqCst) || ticker_commands.send(Command::Tick).is_err() {
            break;
        }
    });

    Ok(ServiceHandle {
        subscriber_addr,
        ingest_addr,
        commands,
        stop,
        worker,
    })
}

fn worker_loop(
    mut manager: ContextManager,
    inbox: mpsc::Receiver<Command>,
    confirm_timeout: Duration,
) -> ContextManager {
    let mut deadlines: BTreeMap<AgentId, Instant> = BTreeMap::new();
    while let Ok(command) = inbox.recv() {
        match command {
            Command::Event { event, done } => {
                let agent = event.agent.clone();
                manager.handle_event(event);
                if manager.pending_confirmation(&agent).is_some() {
                    deadlines
                        .entry(agent)
                        .or_insert_with(|| Instant::now() + confirm_timeout);
                }
                if let Some(done) = done {
                    let _ = done.send(());
                }
            }
            Command::Notice(detail) => manager.log_notice(detail),
            Command::Subscribe { body, stream } => {
                let app_id = body.app_id.clone();
                let sink = WriterSink(stream.try_clone().expect("stream clones"));
                if let Err(err) = manager.handle_subscribe(body, Box::new(sink)) {
                    let envelope = Envelope::new(
                        EnvelopeKind::Error,
                        1,
                        serde_json::json!({ "message": err.to_string() }),
                    );
                    let _ = (&stream).write_all(encode_envelope(&envelope).as_bytes());
                    manager.log_notice(format!("subscribe rejected for {app_id}: {err}"));
                }
            }
            Command::ConfirmReply { app_id, body } => {
                if let Err(err) =
                    manager.reply_confirmation(&body.agent, body.request_id, &body.chosen)
                {
                    manager.send_error(&app_id, &err.to_string());
                }
                deadlines.retain(|agent, _| manager.pending_confirmation(agent).is_some());
            }
            Command::Detach { app_id } => {
                manager.unsubscribe(&app_id);
                manager.log_notice(format!("subscription {app_id} detached: connection closed"));
            }
            Command::Tick => {
                let now = Instant::now();
                let expired: Vec<AgentId> = deadlines
                    .iter()
                    .filter(|(_, deadline)| **deadline <= now)
                    .map(|(agent, _)| agent.clone())
                    .collect();
                for agent in expired {
                    deadlines.remove(&agent);
                    manager.expire_confirmation(&agent);
                }
            }
            Command::Shutdown => break,
        }
    }
    manager
}

fn spawn_acceptor(
    listener: TcpListener,
    stop: Arc<AtomicBool>,
    commands: mpsc::Sender<Command>,
    handler: fn(TcpStream, mpsc::Sender<Command>),
) {
    thread::spawn(move || loop {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        match listener.accept() {
            Ok((stream, _)) => {
                let commands = commands.clone();
                thread::spawn(move || handler(stream, commands));
            }
            Err(ref e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                thread::sleep(Duration::from_millis(25));
            }
            Err(_) => break,
        }
    });
}

/// Subscriber connection: a `subscribe` envelope first, then optional
/// `confirm-reply` envelopes. Protocol violations get an error envelope and
/// the connection is dropped.
fn subscriber_conn(stream: TcpStream, commands: mpsc::Sender<Command>) {
    let reader = match stream.try_clone() {
        Ok(clone) => BufReader::new(clone),
        Err(_) => return,
    };
    let mut envelopes = EnvelopeReader::new(reader);

    let app_id = match envelopes.next_envelope() {
        Some(Ok(envelope)) if envelope.kind == EnvelopeKind::Subscribe => {
            match serde_json::from_value::<SubscribeBody>(envelope.body) {
                Ok(body) => {
                    let app_id = body.app_id.clone();
                    let Ok(write_half) = stream.try_clone() else {
                        return;
                    };
                    if commands
                        .send(Command::Subscribe {
                            body,
                            stream: write_half,
                        })
                        .is_err()
                    {
                        return;
                    }
                    app_id
                }
                Err(e) => {
                    reject(&stream, &format!("malformed subscribe body: {e}"));
                    return;
                }
            }
        }
        Some(Ok(envelope)) => {
            reject(&stream, &format!("expected subscribe, got {}", envelope.kind));
            return;
        }
        Some(Err(e)) => {
            reject(&stream, &e.to_string());
            return;
        }
        None => return,
    };

    while let Some(result) = envelopes.next_envelope() {
        match result {
            Ok(envelope) if envelope.kind == EnvelopeKind::ConfirmReply => {
                match serde_json::from_value::<ConfirmReplyBody>(envelope.body) {
                    Ok(body) => {
                        if commands
                            .send(Command::ConfirmReply {
                                app_id: app_id.clone(),
                                body,
                            })
                            .is_err()
                        {
                            return;
                        }
                    }
                    Err(e) => {
                        let _ = commands.send(Command::Notice(format!(
                            "malformed confirm-reply from {app_id}: {e}"
                        )));
                    }
                }
            }
            Ok(envelope) => {
                let _ = commands.send(Command::Notice(format!(
                    "ignored {} envelope from {app_id}",
                    envelope.kind
                )));
            }
            Err(e) => {
                let _ = commands.send(Command::Notice(format!(
                    "connection {app_id} flagged: {e}"
                )));
                break;
            }
        }
    }
    let _ = commands.send(Command::Detach { app_id });
}

fn reject(stream: &TcpStream, message: &str) {
    let envelope = Envelope::new(
        EnvelopeKind::Error,
        1,
        serde_json::json!({ "message": message }),
    );
    let _ = (stream).write_all(encode_envelope(&envelope).as_bytes());
}

/// Ingest connection: one trace line in, one `ok <line>` / `err <line>: ...`
/// ack out after the event has been applied, keeping senders in lockstep
/// with the manager.
fn ingest_conn(stream: TcpStream, commands: mpsc::Sender<Command>) {
    let Ok(read_half) = stream.try_clone() else {
        return;
    };
    let reader = BufReader::new(read_half);
    let mut writer = stream;
    for (index, line) in reader.lines().enumerate() {
        let line_no = index + 1;
        let Ok(line) = line else { break };
        let ack = match parse_trace_line(&line) {
            Ok(Some(event)) => {
                let (done, wait) = mpsc::sync_channel(0);
                if commands
                    .send(Command::Event {
                        event,
                        done: Some(done),
                    })
                    .is_err()
                {
                    break;
                }
                let _ = wait.recv();
                format!("ok {line_no}\n")
            }
            Ok(None) => format!("ok {line_no}\n"),
            Err(message) => {
                let _ = commands.send(Command::Notice(format!(
                    "skipped malformed ingest line {line_no}: {message}"
                )));
                format!("err {line_no}: {message}\n")
            }
        };
        if writer.write_all(ack.as_bytes()).is_err() {
            break;
        }
    }
}
