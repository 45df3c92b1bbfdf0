//! Discrete-event engine: a time-ordered queue with insertion-order tie-breaking
//! and exact cancellation.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::marker::PhantomData;

use crate::time::{Micros, SimTime};

/// Identifies the actor an event is addressed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct ActorId(pub u32);

/// Returned by `schedule`; lets the caller cancel the event before it fires.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

#[derive(Debug, Clone)]
pub struct SimEvent<E> {
    pub fire_at: SimTime,
    pub seq: u64,
    pub target: ActorId,
    pub kind: E,
}

impl<E> PartialEq for SimEvent<E> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.seq == other.seq
    }
}

impl<E> Eq for SimEvent<E> {}

impl<E> PartialOrd for SimEvent<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for SimEvent<E> {
    // Reversed so that BinaryHeap pops the earliest (fire_at, seq) first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.fire_at, other.seq).cmp(&(self.fire_at, self.seq))
    }
}

/// Virtual clock plus pending-event queue for one simulation instance.
#[derive(Debug)]
pub struct Scheduler<E> {
    now: SimTime,
    next_seq: u64,
    heap: BinaryHeap<SimEvent<E>>,
    pending: HashSet<u64>,
    dispatched: u64,
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Scheduler<E> {
    pub fn new() -> Self {
        Scheduler {
            now: SimTime::ZERO,
            next_seq: 0,
            heap: BinaryHeap::new(),
            pending: HashSet::new(),
            dispatched: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Total events dispatched since creation.
    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    /// Enqueues an event. Scheduling in the past is a simulator bug and panics.
    pub fn schedule(&mut self, fire_at: SimTime, target: ActorId, kind: E) -> EventHandle {
        assert!(
            fire_at >= self.now,
            "event scheduled in the past: fire_at={fire_at} now={}",
            self.now
        );
        let seq = self.next_seq;
        self.next_seq += 1;
        self.pending.insert(seq);
        self.heap.push(SimEvent {
            fire_at,
            seq,
            target,
            kind,
        });
        EventHandle(seq)
    }

    pub fn schedule_in(&mut self, delay: Micros, target: ActorId, kind: E) -> EventHandle {
        self.schedule(self.now + delay, target, kind)
    }

    /// Returns true if the event was still pending.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        self.pending.remove(&handle.0)
    }

    pub fn is_pending(&self, handle: EventHandle) -> bool {
        self.pending.contains(&handle.0)
    }

    /// Pops the next live event with `fire_at <= t_end`, advancing the clock to it.
    pub fn pop_until(&mut self, t_end: SimTime) -> Option<SimEvent<E>> {
        loop {
            let head = self.heap.peek()?;
            if head.fire_at > t_end {
                return None;
            }
            let ev = self.heap.pop().expect("peeked");
            if !self.pending.remove(&ev.seq) {
                continue;
            }
            debug_assert!(ev.fire_at >= self.now);
            self.now = ev.fire_at;
            self.dispatched += 1;
            return Some(ev);
        }
    }

    /// Dispatches every event with `fire_at <= t_end` (including ones scheduled
    /// by handlers along the way), then sets the clock to `t_end`.
    pub fn run_until<F>(&mut self, t_end: SimTime, mut handler: F) -> u64
    where
        F: FnMut(&mut Scheduler<E>, SimEvent<E>),
    {
        assert!(t_end >= self.now, "run_until into the past");
        let mut count = 0;
        while let Some(ev) = self.pop_until(t_end) {
            count += 1;
            handler(self, ev);
        }
        self.now = t_end;
        count
    }

    /// Dispatches until the queue is empty. The clock stays at the last event.
    pub fn run_to_completion<F>(&mut self, mut handler: F) -> u64
    where
        F: FnMut(&mut Scheduler<E>, SimEvent<E>),
    {
        let mut count = 0;
        while let Some(ev) = self.pop_until(SimTime::from_micros(u64::MAX)) {
            count += 1;
            handler(self, ev);
        }
        count
    }
}

/// The scheduling surface a protocol model needs, independent of the event
/// type of the enclosing simulation.
pub trait EventSink<E> {
    fn now(&self) -> SimTime;
    fn schedule_at(&mut self, at: SimTime, kind: E) -> EventHandle;
    fn cancel(&mut self, handle: EventHandle) -> bool;

    fn schedule_in(&mut self, delay: Micros, kind: E) -> EventHandle {
        let at = self.now() + delay;
        self.schedule_at(at, kind)
    }
}

impl<E> EventSink<E> for Scheduler<E> {
    fn now(&self) -> SimTime {
        self.now
    }

    fn schedule_at(&mut self, at: SimTime, kind: E) -> EventHandle {
        self.schedule(at, ActorId::default(), kind)
    }

    fn cancel(&mut self, handle: EventHandle) -> bool {
        Scheduler::cancel(self, handle)
    }
}

/// Adapts a `Scheduler<E>` so a sub-model can schedule its own event type `S`,
/// wrapped into `E` and addressed to a fixed actor.
pub struct Scoped<'a, E, S, F> {
    sched: &'a mut Scheduler<E>,
    target: ActorId,
    wrap: F,
    _sub: PhantomData<fn(S)>,
}

impl<'a, E, S, F: Fn(S) -> E> Scoped<'a, E, S, F> {
    pub fn new(sched: &'a mut Scheduler<E>, target: ActorId, wrap: F) -> Self {
        Scoped {
            sched,
            target,
            wrap,
            _sub: PhantomData,
        }
    }
}

impl<E, S, F: Fn(S) -> E> EventSink<S> for Scoped<'_, E, S, F> {
    fn now(&self) -> SimTime {
        self.sched.now()
    }

    fn schedule_at(&mut self, at: SimTime, kind: S) -> EventHandle {
        let ev = (self.wrap)(kind);
        self.sched.schedule(at, self.target, ev)
    }

    fn cancel(&mut self, handle: EventHandle) -> bool {
        self.sched.cancel(handle)
    }
}
