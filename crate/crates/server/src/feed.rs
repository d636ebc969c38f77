//! Live event feed.
//!
//! Every subscription owns a bounded queue. `publish` never waits: when a
//! queue is full the subscription is dropped from the registry and its
//! reader gets a final overflow item after draining what was queued.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use gatekeeper_core::{AccessEvent, EventFilter};
use serde::{Deserialize, Serialize};
use tokio::sync::Notify;

pub const DEFAULT_BUFFER: usize = 1024;

/// One line of the `/api/feed` stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FeedFrame {
    Event(AccessEvent),
    Heartbeat,
    Error { reason: String },
}

impl FeedFrame {
    /// Frame serialised as one newline-terminated JSON line.
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("frames always serialise");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FeedItem {
    Event(AccessEvent),
    Overflow,
}

#[derive(Default)]
struct Queue {
    events: VecDeque<AccessEvent>,
    overflowed: bool,
    closed: bool,
}

struct Slot {
    filter: EventFilter,
    bound: usize,
    queue: Mutex<Queue>,
    notify: Notify,
}

#[derive(Default)]
struct Registry {
    slots: Mutex<HashMap<u64, Arc<Slot>>>,
    next_id: AtomicU64,
}

#[derive(Clone, Default)]
pub struct EventFeed {
    registry: Arc<Registry>,
}

impl EventFeed {
    pub fn new() -> Self {
        Self::default()
    }

    /// Live events from now on; history is not replayed. Time bounds in the
    /// filter are ignored.
    pub fn subscribe(&self, filter: EventFilter, bound: usize) -> Subscription {
        let id = self.registry.next_id.fetch_add(1, Ordering::Relaxed) + 1;
        let slot = Arc::new(Slot {
            filter,
            bound: bound.max(1),
            queue: Mutex::new(Queue::default()),
            notify: Notify::new(),
        });
        self.registry.slots.lock().unwrap().insert(id, slot.clone());
        Subscription {
            id,
            slot,
            feed: self.clone(),
        }
    }

    pub fn unsubscribe(&self, id: u64) {
        if let Some(slot) = self.registry.slots.lock().unwrap().remove(&id) {
            slot.queue.lock().unwrap().closed = true;
            slot.notify.notify_one();
        }
    }

    pub fn subscriber_count(&self) -> usize {
        self.registry.slots.lock().unwrap().len()
    }

    pub fn publish(&self, event: &AccessEvent) {
        let mut slots = self.registry.slots.lock().unwrap();
        slots.retain(|_, slot| {
            if !slot.filter.matches_live(event) {
                return true;
            }
            let mut q = slot.queue.lock().unwrap();
            let keep = if q.events.len() >= slot.bound {
                q.overflowed = true;
                false
            } else {
                q.events.push_back(event.clone());
                true
            };
            drop(q);
            slot.notify.notify_one();
            keep
        });
    }
}

pub struct Subscription {
    id: u64,
    slot: Arc<Slot>,
    feed: EventFeed,
}

impl Subscription {
    pub fn id(&self) -> u64 {
        self.id
    }

    fn poll_queue(&self) -> Option<Option<FeedItem>> {
        let mut q = self.slot.queue.lock().unwrap();
        if let Some(e) = q.events.pop_front() {
            return Some(Some(FeedItem::Event(e)));
        }
        if q.overflowed {
            q.overflowed = false;
            q.closed = true;
            return Some(Some(FeedItem::Overflow));
        }
        if q.closed {
            return Some(None);
        }
        None
    }

    /// Next queued item without waiting. `None` means nothing is queued or
    /// the subscription has ended.
    pub fn try_next(&self) -> Option<FeedItem> {
        self.poll_queue().flatten()
    }

    /// Waits for the next item; `None` once the subscription has ended.
    pub async fn next(&self) -> Option<FeedItem> {
        loop {
            if let Some(item) = self.poll_queue() {
                return item;
            }
            self.slot.notify.notified().await;
        }
    }
}

impl Drop for Subscription {
    fn drop(&mut self) {
        self.feed.unsubscribe(self.id);
    }
}
