//! Token protocol, stage state machine and the two schedulers.
//!
//! Every stage walks its node range in order. For node `i` it pops one token
//! from each node input and a header from each group input, then, for each of
//! the `deg(i)` in-edges, one edge token from every group input. Outputs follow
//! the same shape: one header per group output at the start of a node, one
//! edge token per group output per edge, one token per node output at the end.

use std::collections::VecDeque;
use std::ops::Range;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, Receiver, RecvTimeoutError, SendTimeoutError, Sender};

use super::spec::StreamKind;
use crate::error::{Error, Result};
use crate::graph::CsrGraph;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Packet {
    Node { node: u32, data: Vec<f32> },
    Header { node: u32, degree: u32, data: Vec<f32> },
    Edge { src: u32, data: Vec<f32> },
}

impl Packet {
    fn describe(&self) -> String {
        match self {
            Packet::Node { node, .. } => format!("node token for {node}"),
            Packet::Header { node, degree, .. } => format!("header for {node} (degree {degree})"),
            Packet::Edge { src, .. } => format!("edge token from {src}"),
        }
    }

    fn into_data(self) -> Vec<f32> {
        match self {
            Packet::Node { data, .. } | Packet::Header { data, .. } | Packet::Edge { data, .. } => {
                data
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Want {
    Input(usize),
    Generate,
    Done,
}

/// A stage as seen by the schedulers.
pub(crate) trait StageLogic: Send {
    fn name(&self) -> &str;
    fn want(&self) -> Want;
    fn fire(&mut self, input: Option<(usize, Packet)>, out: &mut Vec<(usize, Packet)>) -> Result<()>;
}

#[derive(Debug, Clone, Copy)]
enum Phase {
    Begin { node: u32, degree: u32 },
    Edge { src: u32 },
    End { node: u32 },
}

/// Output collector handed to a [`Kernel`] callback.
pub(crate) struct Emit<'b> {
    kinds: &'b [StreamKind],
    phase: Phase,
    buf: &'b mut Vec<(usize, Packet)>,
}

impl Emit<'_> {
    fn packet(&self, data: Vec<f32>) -> Packet {
        match self.phase {
            Phase::Begin { node, degree } => Packet::Header { node, degree, data },
            Phase::Edge { src } => Packet::Edge { src, data },
            Phase::End { node } => Packet::Node { node, data },
        }
    }

    fn phase_kind(&self) -> StreamKind {
        match self.phase {
            Phase::End { .. } => StreamKind::Node,
            _ => StreamKind::Group,
        }
    }

    /// Sends to one output port (index in declaration order).
    pub fn to(&mut self, port: usize, data: Vec<f32>) {
        let p = self.packet(data);
        self.buf.push((port, p));
    }

    /// Sends to every output port that carries this phase's token type.
    pub fn all(&mut self, data: Vec<f32>) {
        let kind = self.phase_kind();
        let ports: Vec<usize> = (0..self.kinds.len()).filter(|&p| self.kinds[p] == kind).collect();
        if let Some((&last, rest)) = ports.split_last() {
            for &p in rest {
                self.to(p, data.clone());
            }
            self.to(last, data);
        }
    }
}

/// Per-node computation of one stage.
pub(crate) trait Kernel: Send {
    fn begin(
        &mut self,
        _out: &mut Emit<'_>,
        _node: usize,
        _nodes: &mut [Vec<f32>],
        _headers: &mut [Vec<f32>],
    ) -> Result<()> {
        Ok(())
    }

    fn edge(&mut self, _out: &mut Emit<'_>, _edge: usize, _src: usize, _edges: &mut [Vec<f32>]) -> Result<()> {
        Ok(())
    }

    fn end(&mut self, _out: &mut Emit<'_>, _node: usize) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum State {
    Collect(usize),
    Edges { r: usize, q: usize },
    Done,
}

/// Drives a [`Kernel`] through the token protocol over a node range.
pub(crate) struct JoinStage<'a, K> {
    name: String,
    graph: &'a CsrGraph,
    next: usize,
    end: usize,
    in_kinds: Vec<StreamKind>,
    out_kinds: Vec<StreamKind>,
    group_inputs: Vec<usize>,
    kernel: K,
    state: State,
    nodes: Vec<Vec<f32>>,
    headers: Vec<Vec<f32>>,
    edges: Vec<Vec<f32>>,
}

impl<'a, K: Kernel> JoinStage<'a, K> {
    pub fn new(
        name: impl Into<String>,
        graph: &'a CsrGraph,
        range: Range<usize>,
        in_kinds: Vec<StreamKind>,
        out_kinds: Vec<StreamKind>,
        kernel: K,
    ) -> Self {
        let group_inputs = (0..in_kinds.len())
            .filter(|&p| in_kinds[p] == StreamKind::Group)
            .collect();
        let state = if range.is_empty() {
            State::Done
        } else {
            State::Collect(0)
        };
        Self {
            name: name.into(),
            graph,
            next: range.start,
            end: range.end,
            in_kinds,
            out_kinds,
            group_inputs,
            kernel,
            state,
            nodes: Vec::new(),
            headers: Vec::new(),
            edges: Vec::new(),
        }
    }

    fn protocol(&self, msg: String) -> Error {
        Error::Protocol(format!("stage `{}`: {msg}", self.name))
    }

    /// Checks the packets emitted in one phase and fills in empty headers.
    fn settle(&self, out: &mut Vec<(usize, Packet)>, from: usize, phase: Phase) -> Result<()> {
        let kind = match phase {
            Phase::End { .. } => StreamKind::Node,
            _ => StreamKind::Group,
        };
        let mut counts = vec![0usize; self.out_kinds.len()];
        for (port, _) in &out[from..] {
            if *port >= self.out_kinds.len() || self.out_kinds[*port] != kind {
                return Err(self.protocol(format!("emitted to port {port} in the wrong phase")));
            }
            counts[*port] += 1;
        }
        for (port, &c) in counts.iter().enumerate() {
            if self.out_kinds[port] != kind {
                continue;
            }
            match (c, phase) {
                (1, _) => {}
                (0, Phase::Begin { node, degree }) => out.push((
                    port,
                    Packet::Header {
                        node,
                        degree,
                        data: Vec::new(),
                    },
                )),
                _ => {
                    return Err(self.protocol(format!(
                        "emitted {c} tokens on port {port} for one {kind:?} step"
                    )))
                }
            }
        }
        Ok(())
    }

    fn run_begin(&mut self, out: &mut Vec<(usize, Packet)>) -> Result<()> {
        let node = self.next;
        let phase = Phase::Begin {
            node: node as u32,
            degree: self.graph.degree(node) as u32,
        };
        let from = out.len();
        let mut emit = Emit {
            kinds: &self.out_kinds,
            phase,
            buf: out,
        };
        self.kernel
            .begin(&mut emit, node, &mut self.nodes, &mut self.headers)?;
        self.settle(out, from, phase)
    }

    fn run_edge(&mut self, r: usize, out: &mut Vec<(usize, Packet)>) -> Result<()> {
        let node = self.next;
        let edge = self.graph.row_offsets()[node] + r;
        let src = self.graph.col_indices()[edge];
        let phase = Phase::Edge { src };
        let from = out.len();
        let mut emit = Emit {
            kinds: &self.out_kinds,
            phase,
            buf: out,
        };
        self.kernel
            .edge(&mut emit, edge, src as usize, &mut self.edges)?;
        self.edges.clear();
        self.settle(out, from, phase)
    }

    fn run_end(&mut self, out: &mut Vec<(usize, Packet)>) -> Result<()> {
        let node = self.next;
        let phase = Phase::End { node: node as u32 };
        let from = out.len();
        let mut emit = Emit {
            kinds: &self.out_kinds,
            phase,
            buf: out,
        };
        self.kernel.end(&mut emit, node)?;
        self.settle(out, from, phase)?;
        self.nodes.clear();
        self.headers.clear();
        self.next += 1;
        self.state = if self.next < self.end {
            State::Collect(0)
        } else {
            State::Done
        };
        Ok(())
    }

    fn accept(&mut self, port: usize, packet: Packet) -> Result<()> {
        let node = self.next;
        let degree = self.graph.degree(node);
        match (self.state, self.in_kinds[port], &packet) {
            (State::Collect(p), StreamKind::Node, Packet::Node { node: got, .. })
                if p == port && *got as usize == node =>
            {
                self.nodes.push(packet.into_data());
            }
            (State::Collect(p), StreamKind::Group, Packet::Header { node: got, degree: deg, .. })
                if p == port && *got as usize == node && *deg as usize == degree =>
            {
                self.headers.push(packet.into_data());
            }
            (State::Edges { r, q }, StreamKind::Group, Packet::Edge { src, .. })
                if self.group_inputs[q] == port
                    && *src == self.graph.col_indices()[self.graph.row_offsets()[node] + r] =>
            {
                self.edges.push(packet.into_data());
            }
            _ => {
                return Err(self.protocol(format!(
                    "unexpected {} on input {port} while processing node {node}",
                    packet.describe()
                )))
            }
        }
        Ok(())
    }

    /// Runs every step that needs no further input, stopping after a node
    /// completes.
    fn pump(&mut self, out: &mut Vec<(usize, Packet)>) -> Result<()> {
        loop {
            match self.state {
                State::Done => return Ok(()),
                State::Collect(p) if p < self.in_kinds.len() => return Ok(()),
                State::Collect(_) => {
                    self.run_begin(out)?;
                    self.state = State::Edges { r: 0, q: 0 };
                }
                State::Edges { r, .. } if r == self.graph.degree(self.next) => {
                    self.run_end(out)?;
                    return Ok(());
                }
                State::Edges { q, .. } if q < self.group_inputs.len() => return Ok(()),
                State::Edges { r, .. } => {
                    self.run_edge(r, out)?;
                    self.state = State::Edges { r: r + 1, q: 0 };
                }
            }
        }
    }
}

impl<K: Kernel> StageLogic for JoinStage<'_, K> {
    fn name(&self) -> &str {
        &self.name
    }

    fn want(&self) -> Want {
        match self.state {
            State::Done => Want::Done,
            State::Collect(_) if self.in_kinds.is_empty() => Want::Generate,
            State::Collect(p) => Want::Input(p),
            State::Edges { q, .. } => Want::Input(self.group_inputs[q]),
        }
    }

    fn fire(&mut self, input: Option<(usize, Packet)>, out: &mut Vec<(usize, Packet)>) -> Result<()> {
        if let Some((port, packet)) = input {
            self.accept(port, packet)?;
            self.state = match self.state {
                State::Collect(p) => State::Collect(p + 1),
                State::Edges { r, q } => State::Edges { r, q: q + 1 },
                State::Done => unreachable!("accept rejects input after completion"),
            };
        }
        self.pump(out)
    }
}

/// Port tables for a set of stage instances.
#[derive(Debug, Clone, Default)]
pub(crate) struct Wiring {
    pub inputs: Vec<Vec<usize>>,
    pub outputs: Vec<Vec<usize>>,
    pub producer: Vec<usize>,
    pub consumer: Vec<usize>,
    pub capacity: Vec<usize>,
}

impl Wiring {
    fn label(&self, stages: &[Box<dyn StageLogic + '_>], fifo: usize) -> String {
        format!(
            "{} -> {}",
            stages[self.producer[fifo]].name(),
            stages[self.consumer[fifo]].name()
        )
    }
}

/// Single-threaded scheduler: visits stages in order, each taking at most one
/// step per sweep.
pub(crate) fn run_round_robin(stages: &mut [Box<dyn StageLogic + '_>], wiring: &Wiring) -> Result<()> {
    let mut queues: Vec<VecDeque<Packet>> = vec![VecDeque::new(); wiring.capacity.len()];
    let mut pending: Vec<VecDeque<(usize, Packet)>> = vec![VecDeque::new(); stages.len()];
    let mut finished = vec![false; stages.len()];
    let mut scratch = Vec::new();
    loop {
        let mut progress = false;
        for s in 0..stages.len() {
            while let Some((port, _)) = pending[s].front() {
                let f = wiring.outputs[s][*port];
                if queues[f].len() >= wiring.capacity[f] {
                    break;
                }
                let (_, packet) = pending[s].pop_front().unwrap();
                queues[f].push_back(packet);
                progress = true;
            }
            if !pending[s].is_empty() || finished[s] {
                continue;
            }
            match stages[s].want() {
                Want::Done => {
                    finished[s] = true;
                    progress = true;
                }
                Want::Generate => {
                    stages[s].fire(None, &mut scratch)?;
                    pending[s].extend(scratch.drain(..));
                    progress = true;
                }
                Want::Input(port) => {
                    let f = wiring.inputs[s][port];
                    if let Some(packet) = queues[f].pop_front() {
                        stages[s].fire(Some((port, packet)), &mut scratch)?;
                        pending[s].extend(scratch.drain(..));
                        progress = true;
                    } else if finished[wiring.producer[f]] && pending[wiring.producer[f]].is_empty() {
                        return Err(Error::Protocol(format!(
                            "`{}` expects more items on {} but the producer has finished",
                            stages[s].name(),
                            wiring.label(stages, f)
                        )));
                    }
                }
            }
        }
        for (f, q) in queues.iter().enumerate() {
            if !q.is_empty() && finished[wiring.consumer[f]] {
                return Err(Error::Protocol(format!(
                    "{} items left on {} after its consumer finished",
                    q.len(),
                    wiring.label(stages, f)
                )));
            }
        }
        if finished.iter().all(|&f| f) {
            return Ok(());
        }
        if !progress {
            let blocked: Vec<String> = (0..stages.len())
                .filter(|&s| !finished[s])
                .map(|s| format!("{} ({:?})", stages[s].name(), stages[s].want()))
                .collect();
            return Err(Error::Deadlock(format!("no stage can advance: {}", blocked.join(", "))));
        }
    }
}

const POLL: Duration = Duration::from_millis(20);
const STALL_LIMIT: Duration = Duration::from_secs(5);

struct Watch<'w> {
    abort: &'w AtomicBool,
    progress: &'w AtomicU64,
}

impl Watch<'_> {
    /// Called while blocked. Fails if another stage failed or if no stage has
    /// moved a token for [`STALL_LIMIT`].
    fn check(&self, seen: &mut (u64, Instant), name: &str, what: &str) -> Result<()> {
        if self.abort.load(Ordering::SeqCst) {
            return Err(Error::Invalid("aborted".into()));
        }
        let now = self.progress.load(Ordering::SeqCst);
        if now != seen.0 {
            *seen = (now, Instant::now());
        } else if seen.1.elapsed() > STALL_LIMIT {
            self.abort.store(true, Ordering::SeqCst);
            return Err(Error::Deadlock(format!("`{name}` stalled while {what}")));
        }
        Ok(())
    }

    fn tick(&self) {
        self.progress.fetch_add(1, Ordering::SeqCst);
    }
}

fn run_worker(
    stage: &mut (dyn StageLogic + '_),
    inputs: Vec<(Receiver<Packet>, String)>,
    outputs: Vec<(Sender<Packet>, String)>,
    watch: &Watch<'_>,
) -> Result<()> {
    let name = stage.name().to_string();
    let mut out = Vec::new();
    let mut seen = (watch.progress.load(Ordering::SeqCst), Instant::now());
    loop {
        let input = match stage.want() {
            Want::Done => break,
            Want::Generate => None,
            Want::Input(port) => {
                let (rx, label) = &inputs[port];
                loop {
                    match rx.recv_timeout(POLL) {
                        Ok(packet) => {
                            watch.tick();
                            break Some((port, packet));
                        }
                        Err(RecvTimeoutError::Timeout) => {
                            watch.check(&mut seen, &name, &format!("reading {label}"))?
                        }
                        Err(RecvTimeoutError::Disconnected) => {
                            return Err(Error::Protocol(format!(
                                "`{name}` expects more items on {label} but the producer has finished"
                            )))
                        }
                    }
                }
            }
        };
        stage.fire(input, &mut out)?;
        for (port, mut packet) in out.drain(..) {
            let (tx, label) = &outputs[port];
            loop {
                match tx.send_timeout(packet, POLL) {
                    Ok(()) => {
                        watch.tick();
                        break;
                    }
                    Err(SendTimeoutError::Timeout(p)) => {
                        packet = p;
                        watch.check(&mut seen, &name, &format!("writing {label}"))?;
                    }
                    Err(SendTimeoutError::Disconnected(_)) => {
                        return Err(Error::Protocol(format!(
                            "`{name}` produced more items on {label} than its consumer accepted"
                        )))
                    }
                }
            }
        }
    }
    drop(outputs);
    for (rx, label) in &inputs {
        loop {
            match rx.recv_timeout(POLL) {
                Ok(_) => {
                    return Err(Error::Protocol(format!(
                        "items left on {label} after `{name}` finished"
                    )))
                }
                Err(RecvTimeoutError::Disconnected) => break,
                Err(RecvTimeoutError::Timeout) => {
                    watch.check(&mut seen, &name, &format!("draining {label}"))?
                }
            }
        }
    }
    Ok(())
}

/// One thread per stage, bounded channels as FIFOs. Failures in any stage
/// abort the others; a global stall is reported as a deadlock.
pub(crate) fn run_threaded(stages: &mut [Box<dyn StageLogic + '_>], wiring: &Wiring) -> Result<()> {
    let mut rx_slots: Vec<Vec<Option<(Receiver<Packet>, String)>>> =
        wiring.inputs.iter().map(|i| vec![None; i.len()]).collect();
    let mut tx_slots: Vec<Vec<Option<(Sender<Packet>, String)>>> =
        wiring.outputs.iter().map(|o| vec![None; o.len()]).collect();
    for f in 0..wiring.capacity.len() {
        let (tx, rx) = bounded(wiring.capacity[f].max(1));
        let label = wiring.label(stages, f);
        let (p, c) = (wiring.producer[f], wiring.consumer[f]);
        let out_port = wiring.outputs[p].iter().position(|&x| x == f).unwrap();
        let in_port = wiring.inputs[c].iter().position(|&x| x == f).unwrap();
        tx_slots[p][out_port] = Some((tx, label.clone()));
        rx_slots[c][in_port] = Some((rx, label));
    }

    let abort = AtomicBool::new(false);
    let progress = AtomicU64::new(0);
    let results: Vec<Result<()>> = std::thread::scope(|scope| {
        let handles: Vec<_> = stages
            .iter_mut()
            .zip(rx_slots.into_iter().zip(tx_slots))
            .map(|(stage, (rx, tx))| {
                let watch = Watch {
                    abort: &abort,
                    progress: &progress,
                };
                let inputs = rx.into_iter().map(Option::unwrap).collect();
                let outputs = tx.into_iter().map(Option::unwrap).collect();
                let abort = &abort;
                scope.spawn(move || {
                    let r = run_worker(stage.as_mut(), inputs, outputs, &watch);
                    if r.is_err() {
                        abort.store(true, Ordering::SeqCst);
                    }
                    r
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Invalid("stage panicked".into()))))
            .collect()
    });

    let mut first_secondary = None;
    for r in results {
        match r {
            Ok(()) => {}
            Err(Error::Invalid(m)) if m == "aborted" => {
                first_secondary.get_or_insert(Error::Invalid(m));
            }
            Err(e) => return Err(e),
        }
    }
    match first_secondary {
        Some(e) => Err(e),
        None => Ok(()),
    }
}
