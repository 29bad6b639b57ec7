//! Deterministic tick-driven simulation of a dual-core fixed-priority
//! preemptive scheduler with round-robin time-slicing, FIFO queues and event
//! bits.
//!
//! This is a *simulation* of concurrency, not an implementation of it: one
//! logical tick loop owns all state and invokes task bodies synchronously.
//! The tick is fixed at 1 ms (1000 Hz). Priority 1 is the highest priority,
//! so a task table reads top-down from most to least critical; the constant
//! [`HIGHEST_PRIORITY`] records the convention.
//!
//! Scheduling contract (mirrored by the brute-force reference used in the
//! acceptance suite):
//!
//! 1. At the start of tick `t`, tasks whose release time has arrived become
//!    Ready, queue items are handed to blocked receivers in FIFO wait order,
//!    event-bit waiters are woken against a snapshot of the bits (all
//!    satisfied waiters observe the bits before any clear-on-exit applies),
//!    and expired wait timeouts fire.
//! 2. Per core, the Ready task with the highest priority runs for this tick.
//!    Ties are broken by least-recently-run, then by spawn order, which
//!    yields exact round-robin time-slicing between equal priorities.
//! 3. A task body runs to completion on the first tick of an activation; a
//!    task with a declared multi-tick cost keeps occupying its core (and can
//!    be preempted) until the cost is spent.
//! 4. Releases are anchored to the schedule (`k * period`, plus optional
//!    uniform release jitter), never to completion time, so periods do not
//!    drift. A release that would land in the past is moved to the next tick;
//!    missed anchors are not queued up.

use std::any::Any;
use std::collections::BTreeSet;
use std::collections::HashMap;
use std::collections::VecDeque;
use std::io::Write;
use std::marker::PhantomData;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::Tick;

/// Priority ordering convention: numerically smallest value runs first.
pub const HIGHEST_PRIORITY: u8 = 1;

pub const NUM_CORES: u8 = 2;

pub type TaskId = usize;

#[derive(Debug, Error, PartialEq)]
pub enum SchedError {
    #[error("duplicate task name: {0}")]
    DuplicateTask(String),
    #[error("invalid core {0} (cores are 0 and 1)")]
    InvalidCore(u8),
    #[error("invalid task spec: {0}")]
    InvalidSpec(String),
}

/// Static description of a periodic task.
#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub name: String,
    pub core: u8,
    /// 1 = highest; see [`HIGHEST_PRIORITY`].
    pub priority: u8,
    pub period_ms: u64,
    /// CPU ticks one activation occupies (the body itself runs on the first
    /// of them). Defaults to 1: run to completion within the tick.
    pub cost_ticks: u32,
    /// Uniform release jitter bound J: each release lands at
    /// `anchor + U{-J..=+J}` ms. 0 disables jitter.
    pub jitter_ms: u64,
}

impl TaskSpec {
    pub fn new(name: impl Into<String>, core: u8, priority: u8, period_ms: u64) -> TaskSpec {
        TaskSpec {
            name: name.into(),
            core,
            priority,
            period_ms,
            cost_ticks: 1,
            jitter_ms: 0,
        }
    }

    pub fn with_cost(mut self, cost_ticks: u32) -> TaskSpec {
        self.cost_ticks = cost_ticks;
        self
    }

    pub fn with_jitter(mut self, jitter_ms: u64) -> TaskSpec {
        self.jitter_ms = jitter_ms;
        self
    }

    fn validate(&self) -> Result<(), SchedError> {
        if self.core >= NUM_CORES {
            return Err(SchedError::InvalidCore(self.core));
        }
        if self.priority < HIGHEST_PRIORITY {
            return Err(SchedError::InvalidSpec("priority must be >= 1".into()));
        }
        if self.period_ms == 0 {
            return Err(SchedError::InvalidSpec("period must be >= 1 ms".into()));
        }
        if self.cost_ticks == 0 {
            return Err(SchedError::InvalidSpec("cost must be >= 1 tick".into()));
        }
        if self.name.is_empty() {
            return Err(SchedError::InvalidSpec("task name must be non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskStatus {
    Running,
    Ready,
    Blocked,
    Suspended,
}

/// Why a task body is being invoked.
pub enum Wake {
    /// Periodic activation.
    Periodic,
    /// A blocking queue receive completed.
    QueueItem(Payload),
    /// A blocking queue receive timed out.
    QueueTimeout,
    /// An event-bit wait completed; carries the observed bits.
    Events(u32),
    /// An event-bit wait timed out.
    EventsTimeout,
}

/// Type-erased queue payload.
pub struct Payload(Box<dyn Any>);

impl Payload {
    pub fn downcast<T: 'static>(self) -> Option<T> {
        self.0.downcast::<T>().ok().map(|b| *b)
    }
}

/// What a task body does at the end of its activation.
pub enum TaskAction {
    /// Finish the activation; the task waits for its next periodic release.
    Done,
    /// Block until an item arrives on the queue or the timeout (in ticks)
    /// expires. `None` waits forever.
    BlockOnQueue { queue: usize, timeout: Option<u64> },
    /// Block until `bits & mask != 0` or the timeout expires. With
    /// `clear_on_exit`, the masked bits are cleared once the wait completes
    /// (after every simultaneously satisfied waiter has observed them).
    BlockOnEvents { group: EventGroupId, mask: u32, clear_on_exit: bool, timeout: Option<u64> },
}

impl TaskAction {
    pub fn block_on_queue<T>(queue: QueueHandle<T>, timeout: Option<u64>) -> TaskAction {
        TaskAction::BlockOnQueue { queue: queue.id, timeout }
    }

    pub fn block_on_events(
        group: EventGroupId,
        mask: u32,
        clear_on_exit: bool,
        timeout: Option<u64>,
    ) -> TaskAction {
        TaskAction::BlockOnEvents { group, mask, clear_on_exit, timeout }
    }
}

/// Overflow behavior of a full queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OverflowPolicy {
    /// The new item is rejected and counted.
    RejectNew,
    /// The oldest item is dropped (and counted) to make room.
    DropOldest,
}

/// Result of a queue send.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SendOutcome {
    Stored,
    RejectedFull,
    DroppedOldest,
}

/// Typed handle to a kernel queue.
pub struct QueueHandle<T> {
    id: usize,
    _marker: PhantomData<fn() -> T>,
}

impl<T> Clone for QueueHandle<T> {
    fn clone(&self) -> Self {
        *self
    }
}
impl<T> Copy for QueueHandle<T> {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventGroupId(usize);

struct RawQueue {
    capacity: usize,
    policy: OverflowPolicy,
    items: VecDeque<Box<dyn Any>>,
    /// Tasks blocked on this queue, in the order they blocked.
    waiters: VecDeque<TaskId>,
    send_attempts: u64,
    received: u64,
    overflow: u64,
}

struct EventGroup {
    bits: u32,
}

/// Kernel objects shared between tasks: queues and event groups. Task bodies
/// reach it through [`TaskCtx`]; test and wiring code through
/// [`Scheduler::kernel`].
pub struct Kernel {
    queues: Vec<RawQueue>,
    groups: Vec<EventGroup>,
}

impl Kernel {
    fn new() -> Kernel {
        Kernel { queues: Vec::new(), groups: Vec::new() }
    }

    pub fn create_queue<T: 'static>(
        &mut self,
        capacity: usize,
        policy: OverflowPolicy,
    ) -> QueueHandle<T> {
        let id = self.queues.len();
        self.queues.push(RawQueue {
            capacity: capacity.max(1),
            policy,
            items: VecDeque::new(),
            waiters: VecDeque::new(),
            send_attempts: 0,
            received: 0,
            overflow: 0,
        });
        QueueHandle { id, _marker: PhantomData }
    }

    pub fn queue_send<T: 'static>(&mut self, h: QueueHandle<T>, item: T) -> SendOutcome {
        let q = &mut self.queues[h.id];
        q.send_attempts += 1;
        if q.items.len() >= q.capacity {
            q.overflow += 1;
            match q.policy {
                OverflowPolicy::RejectNew => return SendOutcome::RejectedFull,
                OverflowPolicy::DropOldest => {
                    q.items.pop_front();
                    q.items.push_back(Box::new(item));
                    return SendOutcome::DroppedOldest;
                }
            }
        }
        q.items.push_back(Box::new(item));
        SendOutcome::Stored
    }

    /// Non-blocking receive.
    pub fn queue_try_receive<T: 'static>(&mut self, h: QueueHandle<T>) -> Option<T> {
        let q = &mut self.queues[h.id];
        let item = q.items.pop_front()?;
        q.received += 1;
        Some(*item.downcast::<T>().expect("queue payload type mismatch"))
    }

    pub fn queue_len<T>(&self, h: QueueHandle<T>) -> usize {
        self.queues[h.id].items.len()
    }

    /// Send calls observed, whether stored or refused.
    pub fn queue_send_attempts<T>(&self, h: QueueHandle<T>) -> u64 {
        self.queues[h.id].send_attempts
    }

    pub fn queue_received_count<T>(&self, h: QueueHandle<T>) -> u64 {
        self.queues[h.id].received
    }

    pub fn queue_overflow_count<T>(&self, h: QueueHandle<T>) -> u64 {
        self.queues[h.id].overflow
    }

    pub fn create_event_group(&mut self) -> EventGroupId {
        self.groups.push(EventGroup { bits: 0 });
        EventGroupId(self.groups.len() - 1)
    }

    /// OR bits into the group. Returns the new mask.
    pub fn event_set(&mut self, g: EventGroupId, bits: u32) -> u32 {
        let group = &mut self.groups[g.0];
        group.bits |= bits;
        group.bits
    }

    pub fn event_clear(&mut self, g: EventGroupId, bits: u32) -> u32 {
        let group = &mut self.groups[g.0];
        group.bits &= !bits;
        group.bits
    }

    pub fn event_get(&self, g: EventGroupId) -> u32 {
        self.groups[g.0].bits
    }
}

/// Execution context handed to a task body.
pub struct TaskCtx<'a> {
    pub kernel: &'a mut Kernel,
    /// Current tick.
    pub now: Tick,
    /// Release tick of this activation (the task timestamp).
    pub release: Tick,
    /// How many times this body has been invoked, counting from 1.
    pub activation: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum State {
    Ready,
    Running,
    /// Waiting for the next periodic release.
    TimerWait,
    QueueWait { queue: usize, deadline: Option<Tick> },
    EventWait { group: usize, mask: u32, clear_on_exit: bool, deadline: Option<Tick> },
    Suspended,
}

type Handler = Box<dyn FnMut(&mut TaskCtx<'_>, Wake) -> TaskAction>;

struct Task {
    spec: TaskSpec,
    handler: Option<Handler>,
    state: State,
    /// Next (or current) release tick.
    release: Tick,
    /// Schedule anchor `k * period` for the current activation.
    anchor: Tick,
    activations: u64,
    remaining_cost: u32,
    body_pending: bool,
    pending_wake: Option<Wake>,
    last_run: Option<Tick>,
    jitter_rng: Option<ChaCha8Rng>,
}

/// One row of the scheduler trace: which task held the core at a tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceEntry {
    pub tick: Tick,
    pub core: u8,
    /// `None` when the core idled.
    pub task: Option<TaskId>,
}

/// Ready-set ordering key: (priority, last-run+1 with never-ran first, spawn
/// order). The minimum is the task to run.
type ReadyKey = (u8, u64, TaskId);

pub struct Scheduler {
    now: Tick,
    seed: u64,
    kernel: Kernel,
    tasks: Vec<Task>,
    by_name: HashMap<String, TaskId>,
    ready: [BTreeSet<ReadyKey>; 2],
    last_running: [Option<TaskId>; 2],
    record_trace: bool,
    trace: Vec<TraceEntry>,
}

impl Scheduler {
    pub fn new(seed: u64) -> Scheduler {
        Scheduler {
            now: 0,
            seed,
            kernel: Kernel::new(),
            tasks: Vec::new(),
            by_name: HashMap::new(),
            ready: [BTreeSet::new(), BTreeSet::new()],
            last_running: [None, None],
            record_trace: true,
            trace: Vec::new(),
        }
    }

    /// Disable trace recording (long runs that never export it).
    pub fn set_record_trace(&mut self, on: bool) {
        self.record_trace = on;
    }

    pub fn kernel(&mut self) -> &mut Kernel {
        &mut self.kernel
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    /// Register a task. It is released at the current tick and will appear in
    /// the next tick's Ready set.
    pub fn spawn(
        &mut self,
        spec: TaskSpec,
        handler: impl FnMut(&mut TaskCtx<'_>, Wake) -> TaskAction + 'static,
    ) -> Result<TaskId, SchedError> {
        spec.validate()?;
        if self.by_name.contains_key(&spec.name) {
            return Err(SchedError::DuplicateTask(spec.name));
        }
        let id = self.tasks.len();
        let jitter_rng = if spec.jitter_ms > 0 {
            let tag = 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(id as u64 + 1);
            Some(ChaCha8Rng::seed_from_u64(self.seed ^ tag))
        } else {
            None
        };
        self.by_name.insert(spec.name.clone(), id);
        self.tasks.push(Task {
            spec,
            handler: Some(Box::new(handler)),
            state: State::TimerWait,
            release: self.now,
            anchor: self.now,
            activations: 0,
            remaining_cost: 0,
            body_pending: false,
            pending_wake: None,
            last_run: None,
            jitter_rng,
        });
        Ok(id)
    }

    pub fn task_id(&self, name: &str) -> Option<TaskId> {
        self.by_name.get(name).copied()
    }

    pub fn task_name(&self, id: TaskId) -> &str {
        &self.tasks[id].spec.name
    }

    pub fn task_count(&self) -> usize {
        self.tasks.len()
    }

    pub fn task_spec(&self, id: TaskId) -> &TaskSpec {
        &self.tasks[id].spec
    }

    pub fn status(&self, id: TaskId) -> TaskStatus {
        match self.tasks[id].state {
            State::Running => TaskStatus::Running,
            State::Ready => TaskStatus::Ready,
            State::Suspended => TaskStatus::Suspended,
            _ => TaskStatus::Blocked,
        }
    }

    pub fn activation_count(&self, id: TaskId) -> u64 {
        self.tasks[id].activations
    }

    pub fn suspend(&mut self, id: TaskId) {
        self.remove_ready(id);
        self.forget_queue_waiter(id);
        self.tasks[id].state = State::Suspended;
        self.tasks[id].pending_wake = None;
    }

    /// Make a suspended task Ready again; its periodic anchor restarts at the
    /// next grid point after the current tick.
    pub fn resume(&mut self, id: TaskId) {
        if self.tasks[id].state != State::Suspended {
            return;
        }
        let period = self.tasks[id].spec.period_ms;
        let anchor = self.now.div_ceil(period) * period;
        let t = &mut self.tasks[id];
        t.anchor = anchor;
        t.release = self.now;
        t.state = State::TimerWait;
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    /// Write the recorded trace as `tick,core,task` CSV. Idle cores are
    /// written as `idle`.
    pub fn export_trace_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "tick,core,task")?;
        for e in &self.trace {
            let name = e.task.map(|id| self.task_name(id)).unwrap_or("idle");
            writeln!(w, "{},{},{}", e.tick, e.core, name)?;
        }
        Ok(())
    }

    /// Advance the simulation by one tick and return the per-core trace
    /// entries for it.
    pub fn advance_tick(&mut self) -> [TraceEntry; 2] {
        let t = self.now;
        self.wake_phase(t);
        let mut entries = [
            TraceEntry { tick: t, core: 0, task: None },
            TraceEntry { tick: t, core: 1, task: None },
        ];
        for core in 0..NUM_CORES {
            // A task that kept the core last tick but is preempted now falls
            // back to Ready; it is re-promoted below if it wins again.
            if let Some(prev) = self.last_running[core as usize] {
                if self.tasks[prev].state == State::Running {
                    self.tasks[prev].state = State::Ready;
                }
            }
            let chosen = self.ready[core as usize].first().map(|&(_, _, id)| id);
            entries[core as usize].task = chosen;
            self.last_running[core as usize] = chosen;
            if let Some(id) = chosen {
                self.run_task(id, t);
            }
        }
        if self.record_trace {
            self.trace.extend_from_slice(&entries);
        }
        self.now = t + 1;
        entries
    }

    pub fn run_for(&mut self, ticks: u64) {
        for _ in 0..ticks {
            self.advance_tick();
        }
    }

    // -- internals ----------------------------------------------------------

    fn ready_key(&self, id: TaskId) -> ReadyKey {
        let task = &self.tasks[id];
        (task.spec.priority, task.last_run.map_or(0, |t| t + 1), id)
    }

    fn insert_ready(&mut self, id: TaskId) {
        let key = self.ready_key(id);
        self.ready[self.tasks[id].spec.core as usize].insert(key);
    }

    fn remove_ready(&mut self, id: TaskId) {
        let key = self.ready_key(id);
        self.ready[self.tasks[id].spec.core as usize].remove(&key);
    }

    fn forget_queue_waiter(&mut self, id: TaskId) {
        if let State::QueueWait { queue, .. } = self.tasks[id].state {
            self.kernel.queues[queue].waiters.retain(|&w| w != id);
        }
    }

    fn make_ready(&mut self, id: TaskId, wake: Wake) {
        let task = &mut self.tasks[id];
        task.state = State::Ready;
        task.pending_wake = Some(wake);
        task.body_pending = true;
        task.remaining_cost = task.spec.cost_ticks;
        task.activations += 1;
        self.insert_ready(id);
    }

    fn wake_phase(&mut self, t: Tick) {
        // Periodic releases, in spawn order.
        for id in 0..self.tasks.len() {
            if self.tasks[id].state == State::TimerWait && self.tasks[id].release <= t {
                self.make_ready(id, Wake::Periodic);
            }
        }
        // Queue deliveries: first blocked, first served.
        for qid in 0..self.kernel.queues.len() {
            loop {
                if self.kernel.queues[qid].items.is_empty() {
                    break;
                }
                let Some(waiter) = self.kernel.queues[qid].waiters.pop_front() else {
                    break;
                };
                debug_assert!(matches!(
                    self.tasks[waiter].state,
                    State::QueueWait { queue, .. } if queue == qid
                ));
                let item = self.kernel.queues[qid].items.pop_front().unwrap();
                self.kernel.queues[qid].received += 1;
                self.make_ready(waiter, Wake::QueueItem(Payload(item)));
            }
        }
        // Event-bit waiters: broadcast against a snapshot, then clear.
        for gid in 0..self.kernel.groups.len() {
            let snapshot = self.kernel.groups[gid].bits;
            if snapshot == 0 {
                continue;
            }
            let mut clear_mask = 0u32;
            for id in 0..self.tasks.len() {
                if let State::EventWait { group, mask, clear_on_exit, .. } = self.tasks[id].state {
                    if group == gid && snapshot & mask != 0 {
                        if clear_on_exit {
                            clear_mask |= mask;
                        }
                        self.make_ready(id, Wake::Events(snapshot));
                    }
                }
            }
            self.kernel.groups[gid].bits &= !clear_mask;
        }
        // Expired wait timeouts.
        for id in 0..self.tasks.len() {
            match self.tasks[id].state {
                State::QueueWait { queue, deadline: Some(d) } if d <= t => {
                    self.kernel.queues[queue].waiters.retain(|&w| w != id);
                    self.make_ready(id, Wake::QueueTimeout);
                }
                State::EventWait { deadline: Some(d), .. } if d <= t => {
                    self.make_ready(id, Wake::EventsTimeout);
                }
                _ => {}
            }
        }
    }

    fn run_task(&mut self, id: TaskId, t: Tick) {
        self.remove_ready(id);
        self.tasks[id].state = State::Running;
        let action = if self.tasks[id].body_pending {
            self.tasks[id].body_pending = false;
            let wake = self.tasks[id].pending_wake.take().unwrap_or(Wake::Periodic);
            let mut handler = self.tasks[id].handler.take().expect("task body reentered");
            let mut ctx = TaskCtx {
                kernel: &mut self.kernel,
                now: t,
                release: self.tasks[id].release,
                activation: self.tasks[id].activations,
            };
            let action = handler(&mut ctx, wake);
            self.tasks[id].handler = Some(handler);
            Some(action)
        } else {
            None
        };
        self.tasks[id].last_run = Some(t);

        match action {
            Some(TaskAction::BlockOnQueue { queue, timeout }) => {
                // Satisfiable immediately: consume without blocking.
                if let Some(item) = self.kernel.queues[queue].items.pop_front() {
                    self.kernel.queues[queue].received += 1;
                    self.make_ready(id, Wake::QueueItem(Payload(item)));
                } else {
                    self.kernel.queues[queue].waiters.push_back(id);
                    self.tasks[id].state =
                        State::QueueWait { queue, deadline: timeout.map(|n| t + n) };
                }
            }
            Some(TaskAction::BlockOnEvents { group, mask, clear_on_exit, timeout }) => {
                let bits = self.kernel.groups[group.0].bits;
                if bits & mask != 0 {
                    if clear_on_exit {
                        self.kernel.groups[group.0].bits &= !mask;
                    }
                    self.make_ready(id, Wake::Events(bits));
                } else {
                    self.tasks[id].state = State::EventWait {
                        group: group.0,
                        mask,
                        clear_on_exit,
                        deadline: timeout.map(|n| t + n),
                    };
                }
            }
            Some(TaskAction::Done) | None => {
                self.tasks[id].remaining_cost = self.tasks[id].remaining_cost.saturating_sub(1);
                if self.tasks[id].remaining_cost == 0 {
                    self.arm_next_release(id, t);
                } else {
                    // Stays runnable with its cost remaining; key changes
                    // because last_run moved.
                    self.tasks[id].state = State::Running;
                    self.insert_ready(id);
                }
            }
        }
    }

    fn arm_next_release(&mut self, id: TaskId, t: Tick) {
        let period = self.tasks[id].spec.period_ms;
        let jitter = self.tasks[id].spec.jitter_ms;
        let anchor = self.tasks[id].anchor + period;
        let mut release = anchor;
        if jitter > 0 {
            let j = self.tasks[id]
                .jitter_rng
                .as_mut()
                .expect("jitter rng")
                .gen_range(-(jitter as i64)..=jitter as i64);
            release = anchor.saturating_add_signed(j);
        }
        if release <= t {
            release = t + 1;
        }
        let task = &mut self.tasks[id];
        task.anchor = anchor;
        task.release = release;
        task.state = State::TimerWait;
    }
}
