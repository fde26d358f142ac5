//! TCP (4-byte length prefix + JSON) and WebSocket (JSON text frames)
//! listeners sharing one connection handler.

use std::io;
use std::net::SocketAddr;
use std::sync::mpsc::Sender;
use std::sync::Arc;

use futures_util::{future, Sink, SinkExt, Stream, StreamExt};
use socket2::SockRef;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;
use tokio::task::JoinHandle;
use tokio_tungstenite::tungstenite::Message;
use tokio_util::bytes::Bytes;
use tokio_util::codec::{Framed, LengthDelimitedCodec};
use tokio_util::sync::CancellationToken;

use crate::control::{self, ClientId, Command, ControlLoop, LoopHandle, LoopStats};
use crate::hub::{Hub, Outbox, OutboxLimits};
use crate::roles::handle_message;
use crate::schema::{decode, encode, Body, ErrorCode, Role, WireMessage};

#[derive(Debug, Clone, PartialEq)]
pub struct GatewayConfig {
    /// `host:port` for the length-prefixed TCP listener.
    pub tcp: Option<String>,
    /// `host:port` for the WebSocket listener.
    pub ws: Option<String>,
    pub limits: OutboxLimits,
    /// When set, policy and operator clients must present it in `hello`.
    pub role_token: Option<String>,
    pub max_frame: usize,
    /// Kernel send buffer per accepted socket, so a stalled reader shows up
    /// in its outbox instead of megabytes of socket backlog.
    pub send_buffer: Option<usize>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            tcp: Some("127.0.0.1:0".into()),
            ws: Some("127.0.0.1:0".into()),
            limits: OutboxLimits::default(),
            role_token: None,
            max_frame: 64 * 1024,
            send_buffer: Some(64 * 1024),
        }
    }
}

/// `:7447` means every interface.
pub fn normalize_listen(addr: &str) -> String {
    match addr.strip_prefix(':') {
        Some(port) => format!("0.0.0.0:{port}"),
        None => addr.to_string(),
    }
}

struct Ctx {
    hub: Arc<Hub>,
    commands: Sender<Command>,
    role_token: Option<String>,
}

pub struct Gateway {
    pub tcp_addr: Option<SocketAddr>,
    pub ws_addr: Option<SocketAddr>,
    hub: Arc<Hub>,
    control: LoopHandle,
    shutdown: CancellationToken,
    tasks: Vec<JoinHandle<()>>,
}

impl Gateway {
    /// Binds the listeners, then starts the control loop and the fan-out.
    /// Must be called inside a Tokio runtime.
    pub async fn start(cfg: GatewayConfig, ctl: ControlLoop) -> io::Result<Self> {
        let tcp = match &cfg.tcp {
            Some(a) => Some(bind(a).await?),
            None => None,
        };
        let ws = match &cfg.ws {
            Some(a) => Some(bind(a).await?),
            None => None,
        };
        let shutdown = CancellationToken::new();
        let hub = Arc::new(Hub::new(cfg.limits, shutdown.clone()));
        // The loop thread hands each tick's output to this channel and moves on.
        let (tx, mut rx) = mpsc::unbounded_channel();
        let control = control::spawn(ctl, move |batch| {
            let _ = tx.send(batch);
        });
        let mut tasks = Vec::new();
        let fan_hub = hub.clone();
        tasks.push(tokio::spawn(async move {
            while let Some(batch) = rx.recv().await {
                fan_hub.publish(batch);
            }
        }));
        let ctx = Arc::new(Ctx {
            hub: hub.clone(),
            commands: control.commands.clone(),
            role_token: cfg.role_token.clone(),
        });
        let mut tcp_addr = None;
        if let Some(l) = tcp {
            tcp_addr = Some(l.local_addr()?);
            let (ctx, stop, max_frame) = (ctx.clone(), shutdown.clone(), cfg.max_frame);
            tasks.push(tokio::spawn(accept_loop(
                l,
                stop,
                cfg.send_buffer,
                move |s| {
                    tokio::spawn(serve_tcp(ctx.clone(), s, max_frame));
                },
            )));
        }
        let mut ws_addr = None;
        if let Some(l) = ws {
            ws_addr = Some(l.local_addr()?);
            let (ctx, stop) = (ctx.clone(), shutdown.clone());
            tasks.push(tokio::spawn(accept_loop(
                l,
                stop,
                cfg.send_buffer,
                move |s| {
                    tokio::spawn(serve_ws(ctx.clone(), s));
                },
            )));
        }
        Ok(Self {
            tcp_addr,
            ws_addr,
            hub,
            control,
            shutdown,
            tasks,
        })
    }

    pub fn client_count(&self) -> usize {
        self.hub.client_count()
    }

    pub fn hub(&self) -> &Arc<Hub> {
        &self.hub
    }

    /// Closes every connection and stops the loop.
    pub fn stop(self) -> LoopStats {
        self.shutdown.cancel();
        for t in &self.tasks {
            t.abort();
        }
        self.control.stop()
    }
}

async fn bind(addr: &str) -> io::Result<TcpListener> {
    let addr = normalize_listen(addr);
    TcpListener::bind(&addr)
        .await
        .map_err(|e| io::Error::new(e.kind(), format!("bind {addr}: {e}")))
}

async fn accept_loop<F: FnMut(TcpStream)>(
    l: TcpListener,
    stop: CancellationToken,
    send_buffer: Option<usize>,
    mut on: F,
) {
    loop {
        tokio::select! {
            _ = stop.cancelled() => break,
            r = l.accept() => match r {
                Ok((s, _)) => {
                    let _ = s.set_nodelay(true);
                    if let Some(n) = send_buffer {
                        let _ = SockRef::from(&s).set_send_buffer_size(n);
                    }
                    on(s);
                }
                Err(_) => continue,
            },
        }
    }
}

async fn serve_tcp(ctx: Arc<Ctx>, s: TcpStream, max_frame: usize) {
    let codec = LengthDelimitedCodec::builder()
        .max_frame_length(max_frame)
        .new_codec();
    let (sink, stream) = Framed::new(s, codec).split();
    let sink = sink.with(|text: String| future::ready(Ok::<_, io::Error>(Bytes::from(text))));
    let stream = stream.map(|r| r.map(|b| b.to_vec()));
    connection(ctx, Box::pin(sink), stream).await;
}

async fn serve_ws(ctx: Arc<Ctx>, s: TcpStream) {
    let Ok(ws) = tokio_tungstenite::accept_async(s).await else {
        return;
    };
    let (sink, stream) = ws.split();
    let sink = sink
        .with(|text: String| {
            future::ready(Ok::<_, tokio_tungstenite::tungstenite::Error>(
                Message::text(text),
            ))
        })
        .sink_map_err(io::Error::other);
    let stream = stream.filter_map(|r| {
        future::ready(match r {
            Ok(Message::Text(t)) => Some(Ok(t.as_bytes().to_vec())),
            Ok(Message::Binary(b)) => Some(Ok(b.to_vec())),
            Ok(_) => None,
            Err(e) => Some(Err(io::Error::other(e))),
        })
    });
    connection(ctx, Box::pin(sink), Box::pin(stream)).await;
}

async fn connection<Si, St>(ctx: Arc<Ctx>, mut sink: Si, mut stream: St)
where
    Si: Sink<String, Error = io::Error> + Unpin,
    St: Stream<Item = io::Result<Vec<u8>>> + Unpin,
{
    let (id, outbox) = ctx.hub.register();
    let cancel = outbox.cancelled().clone();
    let writer = async {
        let mut seq = 0u64;
        while let Some(body) = outbox.pop().await {
            seq += 1;
            if sink.send(encode(&WireMessage { seq, body })).await.is_err() {
                break;
            }
        }
    };
    let reader = async {
        let mut role = None;
        while let Some(Ok(frame)) = stream.next().await {
            on_frame(&ctx, id, &outbox, &mut role, &frame);
        }
    };
    tokio::select! {
        _ = writer => {}
        _ = reader => {}
        _ = cancel.cancelled() => {}
    }
    ctx.hub.unregister(id);
    let _ = ctx.commands.send(Command::Disconnected { client: id });
}

fn on_frame(ctx: &Ctx, id: ClientId, outbox: &Outbox, role: &mut Option<Role>, frame: &[u8]) {
    let msg = match decode(frame) {
        Ok(m) => m,
        Err(e) => return outbox.push(e.into_body()),
    };
    let seq = msg.seq;
    let reply_err = |code, detail: String| Body::error(code, format!("seq {seq}: {detail}"));
    match (*role, msg.body) {
        (None, Body::Hello { role: r, token }) => {
            let needs_token = r != Role::Observer && ctx.role_token.is_some();
            if needs_token && token != ctx.role_token {
                return outbox.push(reply_err(
                    ErrorCode::BadToken,
                    format!("{r:?} needs the role token"),
                ));
            }
            *role = Some(r);
            outbox.push(Body::Ack {
                ref_seq: seq,
                applied: true,
            });
        }
        (None, body) => outbox.push(reply_err(
            ErrorCode::HelloRequired,
            format!("send hello before {}", body.type_name()),
        )),
        (Some(r), body) => match handle_message(r, body) {
            Ok(request) => {
                let cmd = Command::Request {
                    client: id,
                    seq,
                    request,
                };
                if ctx.commands.send(cmd).is_err() {
                    outbox.push(reply_err(
                        ErrorCode::Internal,
                        "control loop stopped".into(),
                    ));
                }
            }
            Err((code, detail)) => outbox.push(reply_err(code, detail)),
        },
    }
}
