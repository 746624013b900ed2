//! In-process agent platform: named agents with mailboxes, performative
//! messages with JSON payloads, and a service directory.
//!
//! Agents never run their handler concurrently with themselves. Messages
//! from one sender to one receiver are delivered in send order. A message
//! that cannot be delivered comes back to its sender as a FAILURE from
//! [`PLATFORM`].

mod directory;
mod message;

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};

use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

pub use directory::Directory;
pub use message::{AgentId, Message, Outgoing, Performative};

use crate::rng;

/// Sender of platform-generated FAILURE messages. Cannot be spawned.
pub const PLATFORM: &str = "platform";

const CONVERSATION_STREAM: u64 = 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RuntimeError {
    #[error("agent name {0} is already registered")]
    DuplicateName(AgentId),
    #[error("agent name {0} is reserved")]
    ReservedName(AgentId),
    #[error("no live agent named {0}")]
    UnknownAgent(AgentId),
    #[error("step limit of {limit} reached with messages still pending")]
    StepLimit { limit: u64 },
}

/// Message handler. Called once per delivered message.
pub trait Behavior: Send {
    fn handle(&mut self, msg: Message, ctx: &mut Context);
}

impl<F: FnMut(Message, &mut Context) + Send> Behavior for F {
    fn handle(&mut self, msg: Message, ctx: &mut Context) {
        self(msg, ctx)
    }
}

/// What a handler may do. Effects apply after the handler returns, in the
/// order: registrations, sends, stop.
pub struct Context {
    me: AgentId,
    directory: Arc<Directory>,
    ids: ChaCha8Rng,
    outbox: Vec<Outgoing>,
    registrations: Vec<(String, bool)>,
    stop: bool,
}

impl Context {
    pub fn me(&self) -> &AgentId {
        &self.me
    }

    pub fn send(&mut self, out: Outgoing) {
        self.outbox.push(out);
    }

    /// Sends `payload` back to the sender of `msg` in the same conversation.
    pub fn reply<T: Serialize + ?Sized>(&mut self, msg: &Message, performative: Performative, payload: &T) {
        self.send(Outgoing::new(
            performative,
            msg.sender.clone(),
            msg.conversation_id.clone(),
            payload,
        ));
    }

    /// Directory as of the start of this handler call.
    pub fn lookup(&self, service: &str) -> Vec<AgentId> {
        self.directory.lookup(service)
    }

    pub fn register(&mut self, service: impl Into<String>) {
        self.registrations.push((service.into(), true));
    }

    pub fn deregister(&mut self, service: impl Into<String>) {
        self.registrations.push((service.into(), false));
    }

    /// Removes this agent once the handler returns.
    pub fn stop(&mut self) {
        self.stop = true;
    }

    /// Fresh UUID string, reproducible under a deterministic scheduler.
    pub fn new_conversation_id(&mut self) -> String {
        conversation_id(&mut self.ids)
    }
}

fn conversation_id(rng: &mut ChaCha8Rng) -> String {
    let mut bytes = [0u8; 16];
    rng.fill_bytes(&mut bytes);
    uuid::Builder::from_random_bytes(bytes).into_uuid().to_string()
}

/// One line of the delivery trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceEvent {
    pub step: u64,
    pub conversation_id: String,
    pub performative: Performative,
    pub sender: AgentId,
    pub receiver: AgentId,
    pub seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheduler {
    /// Cycles through agents with pending mail in name order.
    RoundRobin,
    /// Picks uniformly among agents with pending mail.
    Random { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunStats {
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShutdownReport {
    pub stopped: Vec<AgentId>,
    /// Messages still queued at shutdown plus earlier dead letters.
    pub undelivered: Vec<Message>,
}

struct Slot {
    mailbox: VecDeque<Message>,
    behavior: Option<Box<dyn Behavior>>,
    busy: bool,
}

struct State {
    agents: BTreeMap<AgentId, Slot>,
    directory: Arc<Directory>,
    seqs: HashMap<(AgentId, AgentId), u64>,
    trace: Vec<TraceEvent>,
    dead_letters: Vec<Message>,
    steps: u64,
    ids: ChaCha8Rng,
    cursor: Option<AgentId>,
}

struct Job {
    id: AgentId,
    msg: Message,
    behavior: Box<dyn Behavior>,
    ctx: Context,
}

impl State {
    fn next_seq(&mut self, sender: &AgentId, receiver: &AgentId) -> u64 {
        let n = self.seqs.entry((sender.clone(), receiver.clone())).or_insert(0);
        let seq = *n;
        *n += 1;
        seq
    }

    fn enqueue(&mut self, sender: &AgentId, out: Outgoing) {
        let seq = self.next_seq(sender, &out.receiver);
        let msg = Message {
            performative: out.performative,
            sender: sender.clone(),
            receiver: out.receiver,
            conversation_id: out.conversation_id,
            content: out.content,
            seq,
        };
        match self.agents.get_mut(&msg.receiver) {
            Some(slot) => slot.mailbox.push_back(msg),
            None => self.bounce(msg, "unknown-receiver"),
        }
    }

    /// Returns an undeliverable message to its sender as a FAILURE. Platform
    /// messages and messages from departed senders become dead letters.
    fn bounce(&mut self, msg: Message, reason: &str) {
        if msg.sender.as_str() == PLATFORM || !self.agents.contains_key(&msg.sender) {
            self.dead_letters.push(msg);
            return;
        }
        let failure = Outgoing {
            performative: Performative::Failure,
            receiver: msg.sender.clone(),
            conversation_id: msg.conversation_id.clone(),
            content: serde_json::json!({
                "reason": reason,
                "receiver": msg.receiver,
                "seq": msg.seq,
            })
            .to_string(),
        };
        self.enqueue(&AgentId::new(PLATFORM), failure);
    }

    fn remove(&mut self, id: &AgentId, reason: &str) -> Option<Slot> {
        let mut slot = self.agents.remove(id)?;
        Arc::make_mut(&mut self.directory).deregister_all(id);
        while let Some(msg) = slot.mailbox.pop_front() {
            self.bounce(msg, reason);
        }
        Some(slot)
    }

    fn ready(&self) -> impl Iterator<Item = &AgentId> {
        self.agents
            .iter()
            .filter(|(_, s)| !s.busy && !s.mailbox.is_empty())
            .map(|(id, _)| id)
    }

    fn any_busy(&self) -> bool {
        self.agents.values().any(|s| s.busy)
    }

    fn take(&mut self, id: AgentId) -> Job {
        let slot = self.agents.get_mut(&id).expect("ready agent exists");
        let msg = slot.mailbox.pop_front().expect("ready agent has mail");
        let behavior = slot.behavior.take().expect("idle agent holds its behavior");
        slot.busy = true;
        self.steps += 1;
        self.trace.push(TraceEvent {
            step: self.steps,
            conversation_id: msg.conversation_id.clone(),
            performative: msg.performative,
            sender: msg.sender.clone(),
            receiver: msg.receiver.clone(),
            seq: msg.seq,
        });
        let ctx = Context {
            me: id.clone(),
            directory: Arc::clone(&self.directory),
            ids: rng::seeded(self.ids.next_u64(), CONVERSATION_STREAM),
            outbox: Vec::new(),
            registrations: Vec::new(),
            stop: false,
        };
        Job { id, msg, behavior, ctx }
    }

    fn finish(&mut self, job: Job, outcome: Result<(), Message>) {
        let Job { id, behavior, ctx, .. } = job;
        // The agent may have been stopped from outside while busy.
        if !self.agents.contains_key(&id) {
            return;
        }
        for (service, add) in ctx.registrations {
            let dir = Arc::make_mut(&mut self.directory);
            if add {
                dir.register(service, id.clone());
            } else {
                dir.deregister(&service, &id);
            }
        }
        for out in ctx.outbox {
            self.enqueue(&id, out);
        }
        let slot = self.agents.get_mut(&id).expect("checked above");
        slot.busy = false;
        slot.behavior = Some(behavior);
        match outcome {
            Ok(()) if ctx.stop => {
                self.remove(&id, "receiver-stopped");
            }
            Ok(()) => {}
            Err(msg) => {
                self.bounce(msg, "handler-panicked");
                self.remove(&id, "receiver-stopped");
            }
        }
    }
}

fn execute(mut job: Job) -> (Job, Result<(), Message>) {
    let msg = job.msg.clone();
    let behavior = &mut job.behavior;
    let ctx = &mut job.ctx;
    let outcome = catch_unwind(AssertUnwindSafe(|| behavior.handle(msg.clone(), ctx))).map_err(|_| msg);
    (job, outcome)
}

/// The agent platform. Cheap to share by reference across threads.
pub struct Platform {
    shared: Arc<(Mutex<State>, Condvar)>,
}

impl Platform {
    /// `seed` drives conversation ids and nothing else.
    pub fn new(seed: u64) -> Self {
        Platform {
            shared: Arc::new((
                Mutex::new(State {
                    agents: BTreeMap::new(),
                    directory: Arc::new(Directory::default()),
                    seqs: HashMap::new(),
                    trace: Vec::new(),
                    dead_letters: Vec::new(),
                    steps: 0,
                    ids: rng::seeded(seed, CONVERSATION_STREAM),
                    cursor: None,
                }),
                Condvar::new(),
            )),
        }
    }

    fn state(&self) -> MutexGuard<'_, State> {
        self.shared.0.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn spawn(&self, name: impl Into<String>, behavior: impl Behavior + 'static) -> Result<AgentId, RuntimeError> {
        let id = AgentId::new(name);
        if id.as_str() == PLATFORM {
            return Err(RuntimeError::ReservedName(id));
        }
        let mut state = self.state();
        if state.agents.contains_key(&id) {
            return Err(RuntimeError::DuplicateName(id));
        }
        state.agents.insert(
            id.clone(),
            Slot {
                mailbox: VecDeque::new(),
                behavior: Some(Box::new(behavior)),
                busy: false,
            },
        );
        Ok(id)
    }

    /// Removes an agent. Its pending mail bounces to the senders.
    pub fn stop(&self, id: &AgentId) -> Result<(), RuntimeError> {
        self.state()
            .remove(id, "receiver-stopped")
            .map(|_| ())
            .ok_or_else(|| RuntimeError::UnknownAgent(id.clone()))
    }

    pub fn register(&self, service: impl Into<String>, id: &AgentId) -> Result<(), RuntimeError> {
        let mut state = self.state();
        if !state.agents.contains_key(id) {
            return Err(RuntimeError::UnknownAgent(id.clone()));
        }
        Arc::make_mut(&mut state.directory).register(service, id.clone());
        Ok(())
    }

    pub fn deregister(&self, service: &str, id: &AgentId) {
        Arc::make_mut(&mut self.state().directory).deregister(service, id);
    }

    /// Current registrants of `service`, sorted by name.
    pub fn lookup(&self, service: &str) -> Vec<AgentId> {
        self.state().directory.lookup(service)
    }

    pub fn directory(&self) -> Directory {
        (*self.state().directory).clone()
    }

    /// Sends on behalf of `sender`, which need not be a live agent.
    pub fn send(&self, sender: &AgentId, out: Outgoing) {
        self.state().enqueue(sender, out);
        self.shared.1.notify_all();
    }

    pub fn new_conversation_id(&self) -> String {
        conversation_id(&mut self.state().ids)
    }

    pub fn is_live(&self, id: &AgentId) -> bool {
        self.state().agents.contains_key(id)
    }

    pub fn agents(&self) -> Vec<AgentId> {
        self.state().agents.keys().cloned().collect()
    }

    /// Messages queued but not yet handled.
    pub fn pending(&self) -> usize {
        self.state().agents.values().map(|s| s.mailbox.len()).sum()
    }

    pub fn trace(&self) -> Vec<TraceEvent> {
        self.state().trace.clone()
    }

    /// The delivery trace, one JSON object per line.
    pub fn trace_jsonl(&self) -> String {
        self.state()
            .trace
            .iter()
            .map(|e| serde_json::to_string(e).expect("trace events serialize") + "\n")
            .collect()
    }

    pub fn dead_letters(&self) -> Vec<Message> {
        self.state().dead_letters.clone()
    }

    /// Delivers messages one at a time on the calling thread until every
    /// mailbox is empty or `max_steps` deliveries have been made.
    pub fn run(&self, scheduler: Scheduler, max_steps: u64) -> Result<RunStats, RuntimeError> {
        let mut pick_rng = match scheduler {
            Scheduler::Random { seed } => Some(rng::seeded(seed, 0)),
            Scheduler::RoundRobin => None,
        };
        let mut steps = 0;
        loop {
            let mut state = self.state();
            let ready: Vec<AgentId> = state.ready().cloned().collect();
            if ready.is_empty() {
                return Ok(RunStats { steps });
            }
            if steps == max_steps {
                return Err(RuntimeError::StepLimit { limit: max_steps });
            }
            let id = match &mut pick_rng {
                Some(r) => ready[rng::uniform_index(r, ready.len())].clone(),
                None => {
                    let next = state
                        .cursor
                        .as_ref()
                        .and_then(|c| ready.iter().find(|id| *id > c))
                        .unwrap_or(&ready[0])
                        .clone();
                    state.cursor = Some(next.clone());
                    next
                }
            };
            let job = state.take(id);
            drop(state);
            let (job, outcome) = execute(job);
            self.state().finish(job, outcome);
            steps += 1;
        }
    }

    /// Delivers messages on `workers` threads until the platform is quiet:
    /// no agent busy and every mailbox empty.
    pub fn run_threaded(&self, workers: usize, max_steps: u64) -> Result<RunStats, RuntimeError> {
        let (lock, cv) = &*self.shared;
        let start = self.state().steps;
        let limit_hit = Mutex::new(false);
        std::thread::scope(|s| {
            for _ in 0..workers.max(1) {
                s.spawn(|| {
                    let mut state = lock.lock().unwrap_or_else(|e| e.into_inner());
                    loop {
                        let next = state.ready().next().cloned();
                        match next {
                            Some(_) if state.steps - start >= max_steps => {
                                *limit_hit.lock().unwrap() = true;
                                cv.notify_all();
                                return;
                            }
                            Some(id) => {
                                let job = state.take(id);
                                drop(state);
                                let (job, outcome) = execute(job);
                                state = lock.lock().unwrap_or_else(|e| e.into_inner());
                                state.finish(job, outcome);
                                cv.notify_all();
                            }
                            None if !state.any_busy() => {
                                cv.notify_all();
                                return;
                            }
                            None => {
                                state = cv.wait(state).unwrap_or_else(|e| e.into_inner());
                            }
                        }
                        if *limit_hit.lock().unwrap() {
                            return;
                        }
                    }
                });
            }
        });
        let steps = self.state().steps - start;
        if limit_hit.into_inner().unwrap() {
            return Err(RuntimeError::StepLimit { limit: max_steps });
        }
        Ok(RunStats { steps })
    }

    /// Stops every agent. Pending mail is not delivered; it is returned in
    /// the report together with earlier dead letters.
    pub fn shutdown(self) -> ShutdownReport {
        let mut state = self.state();
        let stopped: Vec<AgentId> = state.agents.keys().cloned().collect();
        let mut undelivered = std::mem::take(&mut state.dead_letters);
        for slot in std::mem::take(&mut state.agents).into_values() {
            undelivered.extend(slot.mailbox);
        }
        state.directory = Arc::new(Directory::default());
        ShutdownReport { stopped, undelivered }
    }
}
