//! Deterministic discrete-event queue for the semi-asynchronous loop.
//!
//! Entries pop in `(time, phase, sequence)` order. The phase ranks the four
//! event kinds that can share one simulated instant:
//!
//! 1. `RoundEnds`   - a client finishes local training (its upload is built),
//! 2. `UploadArrives` - the upload reaches the server (may trigger aggregation),
//! 3. `BroadcastArrives` - a freshly aggregated model reaches a client,
//! 4. `RoundStarts` - the client begins its next local round (adopting any
//!    pending model).
//!
//! Ranking round ends before uploads before broadcasts before round starts is
//! what makes the zero-delay case exact: a model aggregated at instant `x` is
//! visible to every local round starting at `x`, which is precisely how the
//! synchronous protocol behaves. The sequence number is a global monotone
//! counter assigned at push, so ordering is total and deterministic.

use crate::model::ParamVector;
use crate::protocol::Update;
use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// What happens when an event fires.
#[derive(Debug, Clone)]
pub enum Event {
    /// Client finished its current local round.
    RoundEnds { client_id: usize },
    /// A client upload reached the server buffer.
    UploadArrives { update: Update },
    /// An aggregated global model reached a client.
    BroadcastArrives {
        client_id: usize,
        params: ParamVector,
        round: usize,
    },
    /// Client begins its next local round.
    RoundStarts { client_id: usize },
}

impl Event {
    /// Rank of this event among events at the same instant.
    fn phase(&self) -> u8 {
        match self {
            Event::RoundEnds { .. } => 0,
            Event::UploadArrives { .. } => 1,
            Event::BroadcastArrives { .. } => 2,
            Event::RoundStarts { .. } => 3,
        }
    }
}

/// A scheduled event.
#[derive(Debug, Clone)]
pub struct QueuedEvent {
    pub time: f64,
    pub seq: u64,
    pub event: Event,
}

impl QueuedEvent {
    fn key(&self) -> (f64, u8, u64) {
        (self.time, self.event.phase(), self.seq)
    }
}

impl PartialEq for QueuedEvent {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for QueuedEvent {}

impl PartialOrd for QueuedEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for QueuedEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        let (t1, p1, s1) = self.key();
        let (t2, p2, s2) = other.key();
        t1.total_cmp(&t2).then(p1.cmp(&p2)).then(s1.cmp(&s2))
    }
}

/// Min-ordered event collection with a monotone pop clock.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<std::cmp::Reverse<QueuedEvent>>,
    next_seq: u64,
    last_popped: f64,
}

impl EventQueue {
    pub fn new() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            next_seq: 0,
            last_popped: f64::NEG_INFINITY,
        }
    }

    /// Schedule `event` at simulated second `time`.
    pub fn push(&mut self, time: f64, event: Event) {
        assert!(time.is_finite(), "event times must be finite");
        let entry = QueuedEvent {
            time,
            seq: self.next_seq,
            event,
        };
        self.next_seq += 1;
        self.heap.push(std::cmp::Reverse(entry));
    }

    /// Remove and return the earliest event.
    pub fn pop(&mut self) -> Option<QueuedEvent> {
        let entry = self.heap.pop()?.0;
        debug_assert!(
            entry.time >= self.last_popped,
            "event clock went backwards: {} after {}",
            entry.time,
            self.last_popped
        );
        self.last_popped = entry.time;
        Some(entry)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
