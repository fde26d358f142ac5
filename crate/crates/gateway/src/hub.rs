//! Client registry and per-client bounded outboxes.

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex};

use tokio::sync::Notify;
use tokio_util::sync::CancellationToken;

use crate::control::{ClientId, Published};
use crate::schema::Body;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloseReason {
    /// Queue full of messages that may not be dropped.
    Backlog,
    /// Kept overflowing without the connection taking anything out.
    Slow,
    Shutdown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OutboxLimits {
    pub capacity: usize,
    /// Consecutive overflows (state messages dropped with no send in between)
    /// after which the client is cut off.
    pub slow_limit: usize,
}

impl Default for OutboxLimits {
    fn default() -> Self {
        Self {
            capacity: 64,
            slow_limit: 64,
        }
    }
}

#[derive(Debug, Default)]
struct Inner {
    queue: VecDeque<Body>,
    closed: Option<CloseReason>,
    overflows: usize,
    dropped: u64,
}

/// Bounded queue between the fan-out and one connection's writer. When full,
/// the oldest state snapshot makes room; anything else never gets dropped.
#[derive(Debug)]
pub struct Outbox {
    inner: Mutex<Inner>,
    wake: Notify,
    limits: OutboxLimits,
    cancel: CancellationToken,
}

impl Outbox {
    pub fn new(limits: OutboxLimits, cancel: CancellationToken) -> Self {
        Self {
            inner: Mutex::new(Inner::default()),
            wake: Notify::new(),
            limits,
            cancel,
        }
    }

    pub fn push(&self, body: Body) {
        let mut g = self.inner.lock().expect("outbox lock");
        if g.closed.is_some() {
            return;
        }
        if g.queue.len() >= self.limits.capacity {
            match g.queue.iter().position(Body::droppable) {
                Some(i) => {
                    g.queue.remove(i);
                    g.dropped += 1;
                    g.overflows += 1;
                    if g.overflows > self.limits.slow_limit {
                        drop(g);
                        return self.close(CloseReason::Slow);
                    }
                }
                None => {
                    drop(g);
                    return self.close(CloseReason::Backlog);
                }
            }
        }
        g.queue.push_back(body);
        drop(g);
        self.wake.notify_one();
    }

    /// Next message, or `None` once the outbox is closed.
    pub async fn pop(&self) -> Option<Body> {
        loop {
            {
                let mut g = self.inner.lock().expect("outbox lock");
                if g.closed.is_some() {
                    return None;
                }
                if let Some(b) = g.queue.pop_front() {
                    g.overflows = 0;
                    return Some(b);
                }
            }
            self.wake.notified().await;
        }
    }

    pub fn close(&self, reason: CloseReason) {
        let mut g = self.inner.lock().expect("outbox lock");
        if g.closed.is_none() {
            g.closed = Some(reason);
            g.queue.clear();
        }
        drop(g);
        self.cancel.cancel();
        self.wake.notify_one();
    }

    pub fn closed(&self) -> Option<CloseReason> {
        self.inner.lock().expect("outbox lock").closed
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("outbox lock").queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// State snapshots dropped so far.
    pub fn dropped(&self) -> u64 {
        self.inner.lock().expect("outbox lock").dropped
    }

    pub fn cancelled(&self) -> &CancellationToken {
        &self.cancel
    }
}

#[derive(Debug, Default)]
struct Registry {
    clients: HashMap<ClientId, Arc<Outbox>>,
    latest: Option<Body>,
    next_id: ClientId,
}

/// All connected clients. Registration and broadcast share one lock so a new
/// client's first message is the newest snapshot and nothing older follows.
#[derive(Debug)]
pub struct Hub {
    registry: Mutex<Registry>,
    limits: OutboxLimits,
    shutdown: CancellationToken,
}

impl Hub {
    pub fn new(limits: OutboxLimits, shutdown: CancellationToken) -> Self {
        Self {
            registry: Mutex::new(Registry::default()),
            limits,
            shutdown,
        }
    }

    pub fn register(&self) -> (ClientId, Arc<Outbox>) {
        let mut r = self.registry.lock().expect("registry lock");
        let id = r.next_id;
        r.next_id += 1;
        let outbox = Arc::new(Outbox::new(self.limits, self.shutdown.child_token()));
        if let Some(s) = &r.latest {
            outbox.push(s.clone());
        }
        r.clients.insert(id, outbox.clone());
        (id, outbox)
    }

    pub fn unregister(&self, id: ClientId) {
        self.registry
            .lock()
            .expect("registry lock")
            .clients
            .remove(&id);
    }

    pub fn client_count(&self) -> usize {
        self.registry.lock().expect("registry lock").clients.len()
    }

    pub fn outbox(&self, id: ClientId) -> Option<Arc<Outbox>> {
        self.registry
            .lock()
            .expect("registry lock")
            .clients
            .get(&id)
            .cloned()
    }

    pub fn publish(&self, batch: Vec<Published>) {
        let mut r = self.registry.lock().expect("registry lock");
        for p in batch {
            match p {
                Published::Broadcast(body) => {
                    for o in r.clients.values() {
                        o.push(body.clone());
                    }
                    if body.droppable() {
                        r.latest = Some(body);
                    }
                }
                Published::To(id, body) => {
                    if let Some(o) = r.clients.get(&id) {
                        o.push(body);
                    }
                }
            }
        }
    }
}
