//! Flattened behavior-tree virtual machine.
//!
//! A behavior tree is stored as a fixed-length opcode array. Composite nodes
//! (`SEQ`, `SEL`) open a subtree that is closed by a matching `END`; leaves
//! are conditions or actions; `NOP` pads the array to its fixed length.
//! [`compile`] repairs arbitrary arrays into this canonical shape and
//! attaches jump indices, and [`tick`] walks the array front to back using
//! the jumps to skip subtrees that have already short-circuited.
//!
//! [`reference_tick`] is a plain recursive interpreter over the decoded
//! [`Node`] tree. It exists so the flat interpreter can be differentially
//! tested.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Instruction set. The numeric values are part of the log format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Opcode {
    Seq = 0,
    Sel = 1,
    CondHasPackage = 2,
    CondNearPackage = 3,
    CondNearBase = 4,
    CondAmIStuck = 5,
    ActMoveToPack = 6,
    ActMoveToBase = 7,
    ActRandomWalk = 8,
    ActPickUp = 9,
    ActDrop = 10,
    ActMoveToRandomPack = 11,
    End = 12,
    Nop = 13,
}

impl Opcode {
    pub const COUNT: u8 = 14;
    pub const ALL: [Opcode; 14] = [
        Opcode::Seq,
        Opcode::Sel,
        Opcode::CondHasPackage,
        Opcode::CondNearPackage,
        Opcode::CondNearBase,
        Opcode::CondAmIStuck,
        Opcode::ActMoveToPack,
        Opcode::ActMoveToBase,
        Opcode::ActRandomWalk,
        Opcode::ActPickUp,
        Opcode::ActDrop,
        Opcode::ActMoveToRandomPack,
        Opcode::End,
        Opcode::Nop,
    ];
    pub const LEAVES: [Opcode; 10] = [
        Opcode::CondHasPackage,
        Opcode::CondNearPackage,
        Opcode::CondNearBase,
        Opcode::CondAmIStuck,
        Opcode::ActMoveToPack,
        Opcode::ActMoveToBase,
        Opcode::ActRandomWalk,
        Opcode::ActPickUp,
        Opcode::ActDrop,
        Opcode::ActMoveToRandomPack,
    ];

    pub fn from_u8(v: u8) -> Option<Opcode> {
        Opcode::ALL.get(usize::from(v)).copied()
    }

    pub fn is_control(self) -> bool {
        matches!(self, Opcode::Seq | Opcode::Sel)
    }

    pub fn is_condition(self) -> bool {
        (2..=5).contains(&(self as u8))
    }

    pub fn is_action(self) -> bool {
        (6..=11).contains(&(self as u8))
    }

    pub fn is_leaf(self) -> bool {
        self.is_condition() || self.is_action()
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::Seq => "SEQ",
            Opcode::Sel => "SEL",
            Opcode::CondHasPackage => "COND_HAS_PACKAGE",
            Opcode::CondNearPackage => "COND_NEAR_PACKAGE",
            Opcode::CondNearBase => "COND_NEAR_BASE",
            Opcode::CondAmIStuck => "COND_AM_I_STUCK",
            Opcode::ActMoveToPack => "ACT_MOVE_TO_PACK",
            Opcode::ActMoveToBase => "ACT_MOVE_TO_BASE",
            Opcode::ActRandomWalk => "ACT_RANDOM_WALK",
            Opcode::ActPickUp => "ACT_PICK_UP",
            Opcode::ActDrop => "ACT_DROP",
            Opcode::ActMoveToRandomPack => "ACT_MOVE_TO_RANDOM_PACK",
            Opcode::End => "END",
            Opcode::Nop => "NOP",
        }
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Control {
    Sequence,
    Selector,
}

impl Control {
    fn opcode(self) -> Opcode {
        match self {
            Control::Sequence => Opcode::Seq,
            Control::Selector => Opcode::Sel,
        }
    }
}

/// Decoded tree form of a program.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Node {
    Leaf(Opcode),
    Composite { control: Control, children: Vec<Node> },
}

impl Node {
    pub fn seq(children: Vec<Node>) -> Node {
        Node::Composite {
            control: Control::Sequence,
            children,
        }
    }

    pub fn sel(children: Vec<Node>) -> Node {
        Node::Composite {
            control: Control::Selector,
            children,
        }
    }

    /// Number of array slots this subtree occupies.
    pub fn size(&self) -> usize {
        match self {
            Node::Leaf(_) => 1,
            Node::Composite { children, .. } => 2 + children.iter().map(Node::size).sum::<usize>(),
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            Node::Leaf(_) => 1,
            Node::Composite { children, .. } => children.iter().map(Node::leaf_count).sum(),
        }
    }

    pub fn flatten_into(&self, out: &mut Vec<Opcode>) {
        match self {
            Node::Leaf(op) => out.push(*op),
            Node::Composite { control, children } => {
                out.push(control.opcode());
                for c in children {
                    c.flatten_into(out);
                }
                out.push(Opcode::End);
            }
        }
    }

    pub fn flatten(&self) -> Vec<Opcode> {
        let mut out = Vec::with_capacity(self.size());
        self.flatten_into(&mut out);
        out
    }

    /// Remove the last node in pre-order that has no children. Returns
    /// `false` when `self` is itself such a node.
    fn prune_last(&mut self) -> bool {
        match self {
            Node::Leaf(_) => false,
            Node::Composite { children, .. } => match children.last_mut() {
                None => false,
                Some(last) => {
                    if !last.prune_last() {
                        children.pop();
                    }
                    true
                }
            },
        }
    }

    fn map_leaves(&mut self, f: &mut impl FnMut(Opcode) -> Opcode) {
        match self {
            Node::Leaf(op) => *op = f(*op),
            Node::Composite { children, .. } => {
                for c in children {
                    c.map_leaves(f);
                }
            }
        }
    }
}

/// Tree every malformed or empty array is repaired into.
pub fn fallback_tree() -> Node {
    Node::sel(vec![Node::Leaf(Opcode::ActRandomWalk)])
}

/// Decode an opcode array into a tree, repairing malformed structure.
///
/// `NOP`s are ignored. A leaf before any composite opens an implicit
/// selector root. Anything after the root closes, and any `END` with no open
/// composite, truncates the array. Composites still open at the end are
/// closed. A tree without a single leaf becomes [`fallback_tree`].
pub fn decode(ops: &[u8]) -> Node {
    let mut stack: Vec<(Control, Vec<Node>)> = Vec::new();
    let mut root: Option<Node> = None;

    fn close(stack: &mut Vec<(Control, Vec<Node>)>, root: &mut Option<Node>) {
        if let Some((control, children)) = stack.pop() {
            let node = Node::Composite { control, children };
            match stack.last_mut() {
                Some(parent) => parent.1.push(node),
                None => *root = Some(node),
            }
        }
    }

    for &raw in ops {
        // Out-of-range values count as padding.
        let op = Opcode::from_u8(raw).unwrap_or(Opcode::Nop);
        match op {
            Opcode::Nop => continue,
            _ if root.is_some() => break,
            Opcode::Seq => stack.push((Control::Sequence, Vec::new())),
            Opcode::Sel => stack.push((Control::Selector, Vec::new())),
            Opcode::End => {
                if stack.is_empty() {
                    break;
                }
                close(&mut stack, &mut root);
            }
            leaf => {
                if stack.is_empty() {
                    stack.push((Control::Selector, Vec::new()));
                }
                if let Some(top) = stack.last_mut() {
                    top.1.push(Node::Leaf(leaf));
                }
            }
        }
    }
    while !stack.is_empty() {
        close(&mut stack, &mut root);
    }

    match root {
        Some(node) if node.leaf_count() > 0 => node,
        _ => fallback_tree(),
    }
}

/// Canonical padded opcode array for `ops`, at most `max_len` long.
///
/// `max_len` must be at least the size of [`fallback_tree`] (3).
pub fn canonicalize(ops: &[u8], max_len: usize) -> Vec<u8> {
    let mut tree = decode(ops);
    while tree.size() > max_len {
        if !tree.prune_last() {
            break;
        }
    }
    if tree.leaf_count() == 0 {
        tree = fallback_tree();
    }
    let mut out: Vec<u8> = tree.flatten().into_iter().map(|op| op as u8).collect();
    out.resize(max_len.max(out.len()), Opcode::Nop as u8);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Instr {
    pub op: Opcode,
    /// For `SEQ`/`SEL`: the index one past the matching `END`. For every
    /// other instruction: the next index.
    pub jump: u16,
}

/// A compiled behavior tree: canonical instructions with jump indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    instrs: Vec<Instr>,
}

/// Compile an opcode array of any shape into an executable program of the
/// same length (arrays shorter than 3 grow to fit the fallback tree).
pub fn compile(ops: &[u8]) -> Program {
    let canon = canonicalize(ops, ops.len().max(3));
    let mut instrs: Vec<Instr> = canon
        .iter()
        .enumerate()
        .map(|(i, &v)| Instr {
            op: Opcode::from_u8(v).unwrap_or(Opcode::Nop),
            jump: (i + 1) as u16,
        })
        .collect();
    let mut open: Vec<usize> = Vec::new();
    for i in 0..instrs.len() {
        match instrs[i].op {
            Opcode::Seq | Opcode::Sel => open.push(i),
            Opcode::End => {
                if let Some(start) = open.pop() {
                    instrs[start].jump = (i + 1) as u16;
                }
            }
            _ => {}
        }
    }
    Program { instrs }
}

impl Program {
    pub fn instructions(&self) -> &[Instr] {
        &self.instrs
    }

    pub fn len(&self) -> usize {
        self.instrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instrs.is_empty()
    }

    /// Raw opcode integers, as stored in genomes and logs.
    pub fn opcodes(&self) -> Vec<u8> {
        self.instrs.iter().map(|i| i.op as u8).collect()
    }

    pub fn tree(&self) -> Node {
        decode(&self.opcodes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Success,
    Failure,
    Running,
}

/// Motion or manipulation command for one robot for one tick. Package
/// targets are world package indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Command {
    MoveToPackage(u32),
    MoveToBase,
    RandomWalk,
    PickUp(u32),
    Drop,
    MoveToRandomPackage(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TickResult {
    pub status: Status,
    pub command: Option<Command>,
}

/// What a robot senses at the start of a tick.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Observation {
    pub has_package: bool,
    pub near_package: bool,
    pub near_base: bool,
    pub am_i_stuck: bool,
    pub nearest_package_id: Option<u32>,
    pub random_package_id: Option<u32>,
    pub near_random_package: bool,
}

fn leaf(op: Opcode, obs: &Observation) -> TickResult {
    use Status::*;
    let cond = |b: bool| TickResult {
        status: if b { Success } else { Failure },
        command: None,
    };
    let run = |c: Command| TickResult {
        status: Running,
        command: Some(c),
    };
    let done = |c: Option<Command>| TickResult {
        status: Success,
        command: c,
    };
    let fail = TickResult {
        status: Failure,
        command: None,
    };
    match op {
        Opcode::CondHasPackage => cond(obs.has_package),
        Opcode::CondNearPackage => cond(obs.near_package),
        Opcode::CondNearBase => cond(obs.near_base),
        Opcode::CondAmIStuck => cond(obs.am_i_stuck),
        Opcode::ActMoveToPack => match obs.nearest_package_id {
            None => fail,
            Some(_) if obs.near_package => done(None),
            Some(id) => run(Command::MoveToPackage(id)),
        },
        Opcode::ActMoveToBase => {
            if obs.near_base {
                done(None)
            } else {
                run(Command::MoveToBase)
            }
        }
        Opcode::ActRandomWalk => run(Command::RandomWalk),
        Opcode::ActPickUp => match obs.nearest_package_id {
            Some(id) if obs.near_package && !obs.has_package => done(Some(Command::PickUp(id))),
            _ => fail,
        },
        Opcode::ActDrop => {
            if obs.has_package {
                done(Some(Command::Drop))
            } else {
                fail
            }
        }
        Opcode::ActMoveToRandomPack => match obs.random_package_id {
            None => fail,
            Some(_) if obs.near_random_package => done(None),
            Some(id) => run(Command::MoveToRandomPackage(id)),
        },
        Opcode::Seq | Opcode::Sel | Opcode::End | Opcode::Nop => fail,
    }
}

/// Run one interpreter pass over a compiled program.
///
/// Interpretation stops at the first leaf that emits a command, so at most
/// one command is produced per tick. When the root finishes without any
/// command the robot should brake.
pub fn tick(p: &Program, obs: &Observation) -> TickResult {
    let code = &p.instrs;
    // Open composites: (control opcode, jump past its END).
    let mut frames: [(Opcode, u16); 64] = [(Opcode::Nop, 0); 64];
    let mut depth = 0usize;
    let mut pc = 0usize;

    while pc < code.len() {
        let ins = code[pc];
        let mut result = match ins.op {
            Opcode::Seq | Opcode::Sel => {
                if depth == frames.len() {
                    // Cannot happen for arrays shorter than 128 slots.
                    return TickResult {
                        status: Status::Failure,
                        command: None,
                    };
                }
                frames[depth] = (ins.op, ins.jump);
                depth += 1;
                pc += 1;
                continue;
            }
            Opcode::Nop => {
                pc += 1;
                continue;
            }
            Opcode::End => {
                // All children ran without short-circuiting.
                depth -= 1;
                pc += 1;
                let status = if frames[depth].0 == Opcode::Seq {
                    Status::Success
                } else {
                    Status::Failure
                };
                TickResult {
                    status,
                    command: None,
                }
            }
            op => {
                let r = leaf(op, obs);
                if r.command.is_some() || r.status == Status::Running {
                    return r;
                }
                pc += 1;
                r
            }
        };

        // Propagate the finished child's status upward.
        loop {
            if depth == 0 {
                return result;
            }
            let (control, jump) = frames[depth - 1];
            let short = matches!(
                (control, result.status),
                (Opcode::Seq, Status::Failure) | (Opcode::Sel, Status::Success)
            );
            if !short {
                break;
            }
            depth -= 1;
            pc = usize::from(jump);
            result = TickResult {
                status: result.status,
                command: None,
            };
        }
    }
    TickResult {
        status: Status::Failure,
        command: None,
    }
}

enum Flow {
    Done(Status),
    Halt(TickResult),
}

fn eval_node(node: &Node, obs: &Observation) -> Flow {
    match node {
        Node::Leaf(op) => {
            let r = leaf(*op, obs);
            if r.command.is_some() || r.status == Status::Running {
                Flow::Halt(r)
            } else {
                Flow::Done(r.status)
            }
        }
        Node::Composite { control, children } => {
            let (stop_on, otherwise) = match control {
                Control::Sequence => (Status::Failure, Status::Success),
                Control::Selector => (Status::Success, Status::Failure),
            };
            for child in children {
                match eval_node(child, obs) {
                    Flow::Halt(r) => return Flow::Halt(r),
                    Flow::Done(s) if s == stop_on => return Flow::Done(s),
                    Flow::Done(_) => {}
                }
            }
            Flow::Done(otherwise)
        }
    }
}

/// Recursive interpreter over the decoded tree; same contract as [`tick`].
pub fn reference_tick(p: &Program, obs: &Observation) -> TickResult {
    match eval_node(&p.tree(), obs) {
        Flow::Halt(r) => r,
        Flow::Done(status) => TickResult {
            status,
            command: None,
        },
    }
}

/// Hand-written seed trees: a forage-and-return loop, a random-walk
/// explorer and a stuck-aware collaborator.
pub fn seed_templates() -> Vec<Node> {
    use Opcode::*;
    let l = Node::Leaf;
    vec![
        Node::sel(vec![
            Node::seq(vec![
                l(CondHasPackage),
                Node::sel(vec![
                    Node::seq(vec![l(CondNearBase), l(ActDrop)]),
                    l(ActMoveToBase),
                ]),
            ]),
            Node::seq(vec![l(CondNearPackage), l(ActPickUp)]),
            l(ActMoveToPack),
        ]),
        Node::sel(vec![
            Node::seq(vec![l(CondHasPackage), l(ActMoveToBase), l(ActDrop)]),
            Node::seq(vec![l(CondNearPackage), l(ActPickUp)]),
            l(ActRandomWalk),
        ]),
        Node::sel(vec![
            Node::seq(vec![l(CondHasPackage), l(ActMoveToBase)]),
            Node::seq(vec![l(CondAmIStuck), l(ActRandomWalk)]),
            Node::seq(vec![l(CondNearPackage), l(ActPickUp)]),
            l(ActMoveToRandomPack),
        ]),
    ]
}

/// A seed template with each leaf independently replaced by a uniformly
/// drawn leaf opcode with probability `leaf_randomization`.
pub fn random_template<R: Rng + ?Sized>(rng: &mut R, leaf_randomization: f64) -> Node {
    let mut templates = seed_templates();
    let idx = rng.random_range(0..templates.len());
    let mut tree = templates.swap_remove(idx);
    tree.map_leaves(&mut |op| {
        if rng.random_bool(leaf_randomization) {
            random_leaf(rng)
        } else {
            op
        }
    });
    tree
}

pub fn random_leaf<R: Rng + ?Sized>(rng: &mut R) -> Opcode {
    Opcode::LEAVES[rng.random_range(0..Opcode::LEAVES.len())]
}

/// A random subtree occupying at most `budget` slots (`budget >= 1`).
pub fn random_subtree<R: Rng + ?Sized>(rng: &mut R, budget: usize) -> Node {
    if budget < 4 || rng.random_bool(0.4) {
        return Node::Leaf(random_leaf(rng));
    }
    let max_children = (budget - 2).min(3);
    let n = rng.random_range(1..=max_children);
    let control = if rng.random_bool(0.5) {
        Control::Sequence
    } else {
        Control::Selector
    };
    let children = (0..n).map(|_| Node::Leaf(random_leaf(rng))).collect();
    Node::Composite { control, children }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use Opcode::*;

    fn ops(v: &[Opcode]) -> Vec<u8> {
        v.iter().map(|&o| o as u8).collect()
    }

    fn obs() -> Observation {
        Observation::default()
    }

    #[test]
    fn single_child_jump() {
        let p = compile(&ops(&[Seq, ActRandomWalk, End]));
        assert_eq!(p.instructions()[0].jump, 3);
        assert_eq!(p.opcodes(), ops(&[Seq, ActRandomWalk, End]));
    }

    #[test]
    fn all_nop_falls_back() {
        let p = compile(&ops(&[Nop; 8]));
        assert_eq!(&p.opcodes()[..3], &ops(&[Sel, ActRandomWalk, End])[..]);
        assert!(p.opcodes()[3..].iter().all(|&o| o == Nop as u8));
        let r = tick(&p, &obs());
        assert_eq!(r.status, Status::Running);
        assert_eq!(r.command, Some(Command::RandomWalk));
    }

    #[test]
    fn compile_is_idempotent() {
        for t in seed_templates() {
            let mut flat = ops(&t.flatten());
            flat.resize(32, Nop as u8);
            let p = compile(&flat);
            assert_eq!(p.opcodes(), flat);
            assert_eq!(compile(&p.opcodes()), p);
        }
    }

    #[test]
    fn selector_short_circuits_on_success() {
        let p = compile(&ops(&[Sel, CondHasPackage, ActRandomWalk, End]));
        let mut o = obs();
        o.has_package = true;
        assert_eq!(
            tick(&p, &o),
            TickResult {
                status: Status::Success,
                command: None
            }
        );
        o.has_package = false;
        assert_eq!(
            tick(&p, &o),
            TickResult {
                status: Status::Running,
                command: Some(Command::RandomWalk)
            }
        );
    }

    #[test]
    fn sequence_short_circuits_on_failure() {
        let p = compile(&ops(&[Seq, CondNearBase, ActDrop, End]));
        let r = tick(&p, &obs());
        assert_eq!(r.status, Status::Failure);
        assert_eq!(r.command, None);
    }

    #[test]
    fn nested_jump_skips_subtree() {
        // SEL[ SEQ[HAS, DROP], RANDOM_WALK ]: failed SEQ falls to the walk.
        let p = compile(&ops(&[
            Sel,
            Seq,
            CondHasPackage,
            ActDrop,
            End,
            ActRandomWalk,
            End,
        ]));
        assert_eq!(p.instructions()[1].jump, 5);
        assert_eq!(p.instructions()[0].jump, 7);
        assert_eq!(tick(&p, &obs()).command, Some(Command::RandomWalk));
    }

    #[test]
    fn repairs() {
        // Leading leaf opens an implicit selector root.
        assert_eq!(
            canonicalize(&ops(&[ActMoveToBase]), 4),
            ops(&[Sel, ActMoveToBase, End, Nop])
        );
        // Missing END appended.
        assert_eq!(
            canonicalize(&ops(&[Seq, CondNearBase, ActDrop]), 5),
            ops(&[Seq, CondNearBase, ActDrop, End, Nop])
        );
        // Content after the root is truncated.
        assert_eq!(
            canonicalize(&ops(&[Seq, ActDrop, End, ActRandomWalk]), 4),
            ops(&[Seq, ActDrop, End, Nop])
        );
        // Leafless tree falls back.
        assert_eq!(
            canonicalize(&ops(&[Seq, End]), 3),
            ops(&[Sel, ActRandomWalk, End])
        );
        // Out-of-range values are padding.
        assert_eq!(canonicalize(&[200, 8], 3), ops(&[Sel, ActRandomWalk, End]));
    }

    #[test]
    fn oversize_trees_are_pruned_to_fit() {
        let t = &seed_templates()[2];
        let c = canonicalize(&ops(&t.flatten()), 10);
        assert_eq!(c.len(), 10);
        let p = compile(&c);
        assert_eq!(p.opcodes(), c);
        assert!(p.tree().size() <= 10);
    }

    #[test]
    fn jumps_stay_in_bounds_and_forward() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let raw: Vec<u8> = (0..24).map(|_| rng.random_range(0..16)).collect();
            let p = compile(&raw);
            assert_eq!(p.len(), 24);
            for (i, ins) in p.instructions().iter().enumerate() {
                let j = usize::from(ins.jump);
                assert!(j > i && j <= p.len());
            }
        }
    }

    #[test]
    fn pick_up_emits_and_halts() {
        let p = compile(&ops(&[Seq, ActPickUp, ActMoveToBase, End]));
        let mut o = obs();
        o.near_package = true;
        o.nearest_package_id = Some(4);
        let r = tick(&p, &o);
        assert_eq!(r.status, Status::Success);
        assert_eq!(r.command, Some(Command::PickUp(4)));
        assert_eq!(reference_tick(&p, &o), r);
    }
}
