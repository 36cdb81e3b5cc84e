//! Fan-out of telemetry lines to any number of subscribers. Publishing never
//! blocks on a slow reader: each subscriber owns a bounded queue and the
//! oldest line is dropped when it is full.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, Weak};
use std::time::Duration;

use super::telemetry::{LogLevel, TelemetryBody, TelemetryMessage};

pub const DEFAULT_QUEUE_CAPACITY: usize = 1024;

struct Queue {
    lines: Mutex<VecDeque<Arc<str>>>,
    ready: Condvar,
    capacity: usize,
    dropped: AtomicU64,
    closed: AtomicBool,
}

impl Queue {
    fn push(&self, line: Arc<str>) {
        let mut lines = self.lines.lock().unwrap_or_else(|e| e.into_inner());
        if lines.len() >= self.capacity {
            lines.pop_front();
            self.dropped.fetch_add(1, Ordering::Relaxed);
        }
        lines.push_back(line);
        drop(lines);
        self.ready.notify_one();
    }
}

#[derive(Default)]
struct Shared {
    subscribers: Vec<Weak<Queue>>,
    /// Latest stage message, replayed to new subscribers.
    stage: Option<Arc<str>>,
}

#[derive(Clone)]
pub struct TelemetryBus {
    shared: Arc<Mutex<Shared>>,
    capacity: usize,
    published: Arc<AtomicU64>,
}

impl Default for TelemetryBus {
    fn default() -> Self {
        Self::new(DEFAULT_QUEUE_CAPACITY)
    }
}

impl std::fmt::Debug for TelemetryBus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TelemetryBus")
            .field("capacity", &self.capacity)
            .field("subscribers", &self.subscriber_count())
            .finish()
    }
}

impl TelemetryBus {
    pub fn new(capacity: usize) -> Self {
        Self { shared: Arc::default(), capacity: capacity.max(1), published: Arc::default() }
    }

    pub fn publish(&self, message: TelemetryMessage) {
        let is_stage = matches!(message.body, TelemetryBody::Stage { .. });
        let line: Arc<str> = message.to_line().into();
        let targets: Vec<Arc<Queue>> = {
            let mut shared = self.shared.lock().unwrap_or_else(|e| e.into_inner());
            if is_stage {
                shared.stage = Some(line.clone());
            }
            shared.subscribers.retain(|w| w.upgrade().is_some_and(|q| !q.closed.load(Ordering::Relaxed)));
            shared.subscribers.iter().filter_map(Weak::upgrade).collect()
        };
        for q in targets {
            q.push(line.clone());
        }
        self.published.fetch_add(1, Ordering::Relaxed);
    }

    pub fn log(&self, t_ms: u64, level: LogLevel, message: impl Into<String>) {
        self.publish(TelemetryMessage::log(t_ms, level, message));
    }

    pub fn subscribe(&self) -> Subscription {
        let queue = Arc::new(Queue {
            lines: Mutex::new(VecDeque::new()),
            ready: Condvar::new(),
            capacity: self.capacity,
            dropped: AtomicU64::new(0),
            closed: AtomicBool::new(false),
        });
        let mut shared = self.shared.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(stage) = &shared.stage {
            queue.push(stage.clone());
        }
        shared.subscribers.push(Arc::downgrade(&queue));
        Subscription { queue }
    }

    pub fn subscriber_count(&self) -> usize {
        let shared = self.shared.lock().unwrap_or_else(|e| e.into_inner());
        shared.subscribers.iter().filter(|w| w.strong_count() > 0).count()
    }

    pub fn published(&self) -> u64 {
        self.published.load(Ordering::Relaxed)
    }
}

pub struct Subscription {
    queue: Arc<Queue>,
}

impl Subscription {
    pub fn try_recv(&self) -> Option<Arc<str>> {
        self.queue.lines.lock().unwrap_or_else(|e| e.into_inner()).pop_front()
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Option<Arc<str>> {
        let lines = self.queue.lines.lock().unwrap_or_else(|e| e.into_inner());
        let (mut lines, _) =
            self.queue.ready.wait_timeout_while(lines, timeout, |l| l.is_empty()).unwrap_or_else(|e| e.into_inner());
        lines.pop_front()
    }

    pub fn drain(&self) -> Vec<Arc<str>> {
        self.queue.lines.lock().unwrap_or_else(|e| e.into_inner()).drain(..).collect()
    }

    /// Lines discarded because this subscriber fell behind.
    pub fn dropped(&self) -> u64 {
        self.queue.dropped.load(Ordering::Relaxed)
    }
}

impl Drop for Subscription {
    fn drop(&mut self) {
        self.queue.closed.store(true, Ordering::Relaxed);
    }
}
