//! Scripted clients for both transports, for tests and tooling.

use std::io;
use std::pin::Pin;
use std::time::Duration;

use futures_util::{future, Sink, SinkExt, Stream, StreamExt};
use tokio::net::{TcpStream, ToSocketAddrs};
use tokio_tungstenite::tungstenite::Message;
use tokio_util::bytes::Bytes;
use tokio_util::codec::{Framed, LengthDelimitedCodec};

use crate::schema::{decode, encode, Body, Role, WireMessage};

type BoxSink = Pin<Box<dyn Sink<String, Error = io::Error> + Send>>;
type BoxStream = Pin<Box<dyn Stream<Item = io::Result<Vec<u8>>> + Send>>;

pub struct Client {
    sink: BoxSink,
    stream: BoxStream,
    seq: u64,
}

impl Client {
    pub async fn tcp(addr: impl ToSocketAddrs) -> io::Result<Self> {
        let s = TcpStream::connect(addr).await?;
        s.set_nodelay(true)?;
        Ok(Self::over_tcp(s))
    }

    /// Wraps an already connected stream (e.g. one with tuned socket buffers).
    pub fn over_tcp(s: TcpStream) -> Self {
        let (sink, stream) = Framed::new(s, LengthDelimitedCodec::new()).split();
        Self {
            sink: Box::pin(
                sink.with(|t: String| future::ready(Ok::<_, io::Error>(Bytes::from(t)))),
            ),
            stream: Box::pin(stream.map(|r| r.map(|b| b.to_vec()))),
            seq: 0,
        }
    }

    pub async fn ws(addr: impl ToSocketAddrs) -> io::Result<Self> {
        let s = TcpStream::connect(addr).await?;
        s.set_nodelay(true)?;
        let url = format!("ws://{}/", s.peer_addr()?);
        let (ws, _) = tokio_tungstenite::client_async(url, s)
            .await
            .map_err(io::Error::other)?;
        let (sink, stream) = ws.split();
        let sink = sink
            .with(|t: String| {
                future::ready(Ok::<_, tokio_tungstenite::tungstenite::Error>(
                    Message::text(t),
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
        Ok(Self {
            sink: Box::pin(sink),
            stream: Box::pin(stream),
            seq: 0,
        })
    }

    /// Sends `body` under the next sequence number and returns that number.
    pub async fn send(&mut self, body: Body) -> io::Result<u64> {
        self.seq += 1;
        let seq = self.seq;
        self.sink.send(encode(&WireMessage { seq, body })).await?;
        Ok(seq)
    }

    pub async fn send_raw(&mut self, text: impl Into<String>) -> io::Result<()> {
        self.sink.send(text.into()).await
    }

    /// Next message; `None` once the server closed the connection.
    pub async fn recv(&mut self) -> io::Result<Option<WireMessage>> {
        match self.stream.next().await {
            None => Ok(None),
            Some(frame) => decode(&frame?)
                .map(Some)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.detail)),
        }
    }

    /// Reads until `pred` matches, giving up after `timeout`.
    pub async fn recv_until<F: FnMut(&WireMessage) -> bool>(
        &mut self,
        timeout: Duration,
        mut pred: F,
    ) -> io::Result<WireMessage> {
        tokio::time::timeout(timeout, async {
            loop {
                match self.recv().await? {
                    Some(m) if pred(&m) => return Ok(m),
                    Some(_) => {}
                    None => {
                        return Err(io::Error::new(
                            io::ErrorKind::UnexpectedEof,
                            "connection closed",
                        ))
                    }
                }
            }
        })
        .await
        .map_err(|_| io::Error::new(io::ErrorKind::TimedOut, "no matching message"))?
    }

    /// Declares `role` and waits for the server's ack.
    pub async fn hello(&mut self, role: Role, token: Option<String>) -> io::Result<()> {
        let seq = self.send(Body::Hello { role, token }).await?;
        let reply = self
            .recv_until(Duration::from_secs(5), |m| {
                matches!(m.body, Body::Ack { ref_seq, .. } if ref_seq == seq)
                    || matches!(m.body, Body::Error { .. })
            })
            .await?;
        match reply.body {
            Body::Ack { .. } => Ok(()),
            other => Err(io::Error::new(
                io::ErrorKind::PermissionDenied,
                format!("{other:?}"),
            )),
        }
    }
}
