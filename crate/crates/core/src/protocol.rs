//! Messages exchanged by the scheduler, the server and the workers, plus
//! their wire encoding.
//!
//! # Frame layout
//!
//! Every frame is `len: u32 LE` followed by `len` bytes of body. The body
//! starts with a one-byte message tag. All integers are little-endian and
//! fixed width; reals are IEEE-754 `f64` bit patterns (LE). A vector is a
//! `u32` element count followed by that many `f64`s.
//!
//! | tag | message            | payload                                             |
//! |-----|--------------------|-----------------------------------------------------|
//! | 1   | `AssignTask`       | task                                                |
//! | 2   | `Pull`             | worker u32, task                                    |
//! | 3   | `PullResponse`     | task, w vec                                         |
//! | 4   | `Update`           | worker u32, task, w_bar vec, delta vec              |
//! | 5   | `Eval`             | worker u32, task, local_grad vec, local_obj_sum f64 |
//! | 6   | `EvalTask`         | task                                                |
//! | 7   | `ObjectiveReport`  | worker u32, task, local_obj_sum, comp, comm f64     |
//! | 8   | `Control(Stop)`    | (empty)                                             |
//! | 9   | `Control(Snapshot)`| stage u64, anchor_grad vec                          |
//! | 10  | `Hello`            | node                                                |
//!
//! A task is `timestamp u64` followed by a kind byte (0 = update,
//! 1 = evaluation). A node is a kind byte (0 = scheduler, 1 = server,
//! 2 = worker) followed by a `u32` worker id (0 for the other roles).

use std::fmt;
use std::io::{self, Read, Write};

use thiserror::Error;

use crate::losses::ParamVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeId {
    Scheduler,
    Server,
    Worker(u32),
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Scheduler => f.write_str("scheduler"),
            NodeId::Server => f.write_str("server"),
            NodeId::Worker(p) => write!(f, "worker:{p}"),
        }
    }
}

impl std::str::FromStr for NodeId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "scheduler" => Ok(NodeId::Scheduler),
            "server" => Ok(NodeId::Server),
            _ => s
                .strip_prefix("worker:")
                .and_then(|p| p.parse().ok())
                .map(NodeId::Worker)
                .ok_or_else(|| format!("unknown role {s:?} (scheduler | server | worker:<id>)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskKind {
    Update,
    Evaluation,
}

/// Scheduler-assigned task identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TaskId {
    pub timestamp: u64,
    pub kind: TaskKind,
}

impl TaskId {
    pub fn update(timestamp: u64) -> Self {
        Self {
            timestamp,
            kind: TaskKind::Update,
        }
    }

    pub fn evaluation(timestamp: u64) -> Self {
        Self {
            timestamp,
            kind: TaskKind::Evaluation,
        }
    }

    pub fn is_update(&self) -> bool {
        self.kind == TaskKind::Update
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            TaskKind::Update => write!(f, "update@{}", self.timestamp),
            TaskKind::Evaluation => write!(f, "eval@{}", self.timestamp),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PullRequest {
    pub worker: u32,
    pub task: TaskId,
}

/// `w_bar = pulled_w − η·delta`, computed by the worker.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdatePush {
    pub worker: u32,
    pub task: TaskId,
    pub w_bar: ParamVector,
    pub delta: ParamVector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalPush {
    pub worker: u32,
    pub task: TaskId,
    /// `∇F_p(w̃_p)`
    pub local_grad: ParamVector,
    /// `Σ_{i∈D_p} fᵢ(w̃_p)`
    pub local_obj_sum: f64,
}

/// Progress sent from a worker to the scheduler after an evaluation task.
/// Times are the worker's cumulative computation and pull-wait totals.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveReport {
    pub worker: u32,
    pub task: TaskId,
    pub local_obj_sum: f64,
    pub comp_time: f64,
    pub comm_time: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Control {
    Stop,
    SnapshotBroadcast {
        stage: u64,
        anchor_grad: ParamVector,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    AssignTask(TaskId),
    Pull(PullRequest),
    PullResponse {
        task: TaskId,
        w: ParamVector,
    },
    Update(UpdatePush),
    Eval(EvalPush),
    EvalTask(TaskId),
    ObjectiveReport(ObjectiveReport),
    Control(Control),
    /// First frame on a socket connection, naming the sender.
    Hello(NodeId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MessageKind {
    AssignTask,
    Pull,
    PullResponse,
    Update,
    Eval,
    EvalTask,
    ObjectiveReport,
    Stop,
    Snapshot,
    Hello,
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::AssignTask(_) => MessageKind::AssignTask,
            Message::Pull(_) => MessageKind::Pull,
            Message::PullResponse { .. } => MessageKind::PullResponse,
            Message::Update(_) => MessageKind::Update,
            Message::Eval(_) => MessageKind::Eval,
            Message::EvalTask(_) => MessageKind::EvalTask,
            Message::ObjectiveReport(_) => MessageKind::ObjectiveReport,
            Message::Control(Control::Stop) => MessageKind::Stop,
            Message::Control(Control::SnapshotBroadcast { .. }) => MessageKind::Snapshot,
            Message::Hello(_) => MessageKind::Hello,
        }
    }

    pub fn task(&self) -> Option<TaskId> {
        match self {
            Message::AssignTask(t) | Message::EvalTask(t) => Some(*t),
            Message::Pull(r) => Some(r.task),
            Message::PullResponse { task, .. } => Some(*task),
            Message::Update(u) => Some(u.task),
            Message::Eval(e) => Some(e.task),
            Message::ObjectiveReport(r) => Some(r.task),
            Message::Control(_) | Message::Hello(_) => None,
        }
    }

    pub fn worker(&self) -> Option<u32> {
        match self {
            Message::Pull(r) => Some(r.worker),
            Message::Update(u) => Some(u.worker),
            Message::Eval(e) => Some(e.worker),
            Message::ObjectiveReport(r) => Some(r.worker),
            _ => None,
        }
    }

    /// The primary vector payload, if any.
    pub fn payload(&self) -> Option<&[f64]> {
        match self {
            Message::PullResponse { w, .. } => Some(w),
            Message::Update(u) => Some(&u.w_bar),
            Message::Eval(e) => Some(&e.local_grad),
            Message::Control(Control::SnapshotBroadcast { anchor_grad, .. }) => Some(anchor_grad),
            _ => None,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("frame truncated: needed {needed} more bytes")]
    Truncated { needed: usize },
    #[error("invalid message tag {0}")]
    BadTag(u8),
    #[error("invalid {what} byte {value}")]
    BadEnum { what: &'static str, value: u8 },
    #[error("{0} trailing bytes after message")]
    Trailing(usize),
    #[error("frame length {0} exceeds limit")]
    TooLarge(u32),
}

/// Upper bound on a single frame body, to reject garbage length prefixes.
pub const MAX_FRAME: u32 = 1 << 30;

mod tag {
    pub const ASSIGN: u8 = 1;
    pub const PULL: u8 = 2;
    pub const PULL_RESPONSE: u8 = 3;
    pub const UPDATE: u8 = 4;
    pub const EVAL: u8 = 5;
    pub const EVAL_TASK: u8 = 6;
    pub const REPORT: u8 = 7;
    pub const STOP: u8 = 8;
    pub const SNAPSHOT: u8 = 9;
    pub const HELLO: u8 = 10;
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }
    fn vec(&mut self, v: &[f64]) {
        self.u32(u32::try_from(v.len()).expect("vector longer than u32::MAX"));
        for x in v {
            self.f64(*x);
        }
    }
    fn task(&mut self, t: TaskId) {
        self.u64(t.timestamp);
        self.u8(match t.kind {
            TaskKind::Update => 0,
            TaskKind::Evaluation => 1,
        });
    }
    fn node(&mut self, n: NodeId) {
        let (k, id) = match n {
            NodeId::Scheduler => (0, 0),
            NodeId::Server => (1, 0),
            NodeId::Worker(p) => (2, p),
        };
        self.u8(k);
        self.u32(id);
    }
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.0.len() < n {
            return Err(DecodeError::Truncated {
                needed: n - self.0.len(),
            });
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Ok(head)
    }
    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, DecodeError> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn vec(&mut self) -> Result<ParamVector, DecodeError> {
        let n = self.u32()? as usize;
        if self.0.len() < n.saturating_mul(8) {
            return Err(DecodeError::Truncated {
                needed: n * 8 - self.0.len(),
            });
        }
        (0..n)
            .map(|_| self.f64())
            .collect::<Result<Vec<_>, _>>()
            .map(ParamVector::from)
    }
    fn task(&mut self) -> Result<TaskId, DecodeError> {
        let timestamp = self.u64()?;
        let kind = match self.u8()? {
            0 => TaskKind::Update,
            1 => TaskKind::Evaluation,
            v => {
                return Err(DecodeError::BadEnum {
                    what: "task kind",
                    value: v,
                })
            }
        };
        Ok(TaskId { timestamp, kind })
    }
    fn node(&mut self) -> Result<NodeId, DecodeError> {
        let k = self.u8()?;
        let id = self.u32()?;
        match k {
            0 => Ok(NodeId::Scheduler),
            1 => Ok(NodeId::Server),
            2 => Ok(NodeId::Worker(id)),
            v => Err(DecodeError::BadEnum {
                what: "node kind",
                value: v,
            }),
        }
    }
}

/// Encodes `msg` as a complete length-prefixed frame.
pub fn encode(msg: &Message) -> Vec<u8> {
    let mut w = Writer(vec![0; 4]);
    match msg {
        Message::AssignTask(t) => {
            w.u8(tag::ASSIGN);
            w.task(*t);
        }
        Message::Pull(r) => {
            w.u8(tag::PULL);
            w.u32(r.worker);
            w.task(r.task);
        }
        Message::PullResponse { task, w: params } => {
            w.u8(tag::PULL_RESPONSE);
            w.task(*task);
            w.vec(params);
        }
        Message::Update(u) => {
            w.u8(tag::UPDATE);
            w.u32(u.worker);
            w.task(u.task);
            w.vec(&u.w_bar);
            w.vec(&u.delta);
        }
        Message::Eval(e) => {
            w.u8(tag::EVAL);
            w.u32(e.worker);
            w.task(e.task);
            w.vec(&e.local_grad);
            w.f64(e.local_obj_sum);
        }
        Message::EvalTask(t) => {
            w.u8(tag::EVAL_TASK);
            w.task(*t);
        }
        Message::ObjectiveReport(r) => {
            w.u8(tag::REPORT);
            w.u32(r.worker);
            w.task(r.task);
            w.f64(r.local_obj_sum);
            w.f64(r.comp_time);
            w.f64(r.comm_time);
        }
        Message::Control(Control::Stop) => w.u8(tag::STOP),
        Message::Control(Control::SnapshotBroadcast { stage, anchor_grad }) => {
            w.u8(tag::SNAPSHOT);
            w.u64(*stage);
            w.vec(anchor_grad);
        }
        Message::Hello(n) => {
            w.u8(tag::HELLO);
            w.node(*n);
        }
    }
    let body = u32::try_from(w.0.len() - 4).expect("frame too large");
    w.0[..4].copy_from_slice(&body.to_le_bytes());
    w.0
}

/// Decodes one complete frame. The input must hold exactly one frame.
pub fn decode(bytes: &[u8]) -> Result<Message, DecodeError> {
    let mut r = Reader(bytes);
    let len = r.u32()?;
    if len > MAX_FRAME {
        return Err(DecodeError::TooLarge(len));
    }
    let body = r.take(len as usize)?;
    if !r.0.is_empty() {
        return Err(DecodeError::Trailing(r.0.len()));
    }
    decode_body(body)
}

fn decode_body(body: &[u8]) -> Result<Message, DecodeError> {
    let mut r = Reader(body);
    let msg = match r.u8()? {
        tag::ASSIGN => Message::AssignTask(r.task()?),
        tag::PULL => Message::Pull(PullRequest {
            worker: r.u32()?,
            task: r.task()?,
        }),
        tag::PULL_RESPONSE => Message::PullResponse {
            task: r.task()?,
            w: r.vec()?,
        },
        tag::UPDATE => Message::Update(UpdatePush {
            worker: r.u32()?,
            task: r.task()?,
            w_bar: r.vec()?,
            delta: r.vec()?,
        }),
        tag::EVAL => Message::Eval(EvalPush {
            worker: r.u32()?,
            task: r.task()?,
            local_grad: r.vec()?,
            local_obj_sum: r.f64()?,
        }),
        tag::EVAL_TASK => Message::EvalTask(r.task()?),
        tag::REPORT => Message::ObjectiveReport(ObjectiveReport {
            worker: r.u32()?,
            task: r.task()?,
            local_obj_sum: r.f64()?,
            comp_time: r.f64()?,
            comm_time: r.f64()?,
        }),
        tag::STOP => Message::Control(Control::Stop),
        tag::SNAPSHOT => Message::Control(Control::SnapshotBroadcast {
            stage: r.u64()?,
            anchor_grad: r.vec()?,
        }),
        tag::HELLO => Message::Hello(r.node()?),
        t => return Err(DecodeError::BadTag(t)),
    };
    if !r.0.is_empty() {
        return Err(DecodeError::Trailing(r.0.len()));
    }
    Ok(msg)
}

/// Writes one frame to a stream.
pub fn write_frame(out: &mut impl Write, msg: &Message) -> io::Result<()> {
    out.write_all(&encode(msg))
}

/// Reads one frame from a stream. Returns `Ok(None)` on a clean EOF before
/// the first byte of a frame.
pub fn read_frame(input: &mut impl Read) -> io::Result<Option<Message>> {
    let mut len = [0u8; 4];
    match input.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let n = u32::from_le_bytes(len);
    if n > MAX_FRAME {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            DecodeError::TooLarge(n),
        ));
    }
    let mut body = vec![0u8; n as usize];
    input.read_exact(&mut body)?;
    decode_body(&body)
        .map(Some)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}
