//! Search-block DAGs and the two growth procedures.
//!
//! A block is a DAG of junctions joined by operation edges. Junction 0 is the
//! block input, junction 1 the block output. Every edge reads a contiguous
//! channel window of its source junction and writes the same number of
//! channels into a window of its target junction; a junction's tensor is the
//! sum of everything written into it. Disjoint windows therefore concatenate
//! and identical windows add.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

pub const SOURCE: usize = 0;
pub const SINK: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Conv1x1,
    Conv3x3,
    Conv5x5,
    Conv7x7,
    #[serde(rename = "none")]
    NoneOp,
}

impl OpKind {
    pub const ALL: [OpKind; 5] = [
        OpKind::Conv1x1,
        OpKind::Conv3x3,
        OpKind::Conv5x5,
        OpKind::Conv7x7,
        OpKind::NoneOp,
    ];

    pub const CONVS: [OpKind; 4] = [OpKind::Conv1x1, OpKind::Conv3x3, OpKind::Conv5x5, OpKind::Conv7x7];

    /// Kernel extent; `None` for the identity op.
    pub fn kernel(self) -> Option<usize> {
        match self {
            OpKind::Conv1x1 => Some(1),
            OpKind::Conv3x3 => Some(3),
            OpKind::Conv5x5 => Some(5),
            OpKind::Conv7x7 => Some(7),
            OpKind::NoneOp => None,
        }
    }

    pub fn from_kernel(k: usize) -> Option<OpKind> {
        OpKind::CONVS.into_iter().find(|o| o.kernel() == Some(k))
    }

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Conv1x1 => "conv1x1",
            OpKind::Conv3x3 => "conv3x3",
            OpKind::Conv5x5 => "conv5x5",
            OpKind::Conv7x7 => "conv7x7",
            OpKind::NoneOp => "none",
        }
    }

    pub fn random(rng: &mut SeededRng) -> OpKind {
        *OpKind::ALL.choose(rng).expect("non-empty")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub op: OpKind,
    pub filters: usize,
    pub in_offset: usize,
    pub out_offset: usize,
}

impl Edge {
    fn in_window(&self) -> (usize, usize) {
        (self.in_offset, self.in_offset + self.filters)
    }

    fn out_window(&self) -> (usize, usize) {
        (self.out_offset, self.out_offset + self.filters)
    }
}

/// How a junction combines its inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineMode {
    Source,
    Single,
    Concat,
    Add,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Growth {
    Branching,
    Splitting,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockGraph {
    /// Channel budget: width of both the input and the output junction.
    pub width: usize,
    /// Channel width of each junction.
    pub junctions: Vec<usize>,
    pub edges: Vec<Edge>,
}

impl BlockGraph {
    /// One edge from input to output.
    pub fn single(width: usize, op: OpKind) -> Self {
        BlockGraph {
            width,
            junctions: vec![width, width],
            edges: vec![Edge {
                from: SOURCE,
                to: SINK,
                op,
                filters: width,
                in_offset: 0,
                out_offset: 0,
            }],
        }
    }

    pub fn op_count(&self) -> usize {
        self.edges.len()
    }

    pub fn incoming(&self, junction: usize) -> impl Iterator<Item = (usize, &Edge)> {
        self.edges.iter().enumerate().filter(move |(_, e)| e.to == junction)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.junctions.len();
        let fail = |msg: String| Err(Error::Validation(msg));
        if self.width == 0 {
            return fail("block width must be positive".into());
        }
        if n < 2 {
            return fail("block needs an input and an output junction".into());
        }
        if self.junctions[SOURCE] != self.width || self.junctions[SINK] != self.width {
            return fail(format!(
                "block input/output widths {}/{} differ from the channel budget {}",
                self.junctions[SOURCE], self.junctions[SINK], self.width
            ));
        }
        if let Some(j) = self.junctions.iter().position(|&w| w == 0) {
            return fail(format!("junction {j} has zero width"));
        }
        let mut has_in = vec![false; n];
        let mut has_out = vec![false; n];
        for (i, e) in self.edges.iter().enumerate() {
            if e.from >= n || e.to >= n {
                return fail(format!("edge {i} references a missing junction"));
            }
            if e.from == e.to || e.to == SOURCE || e.from == SINK {
                return fail(format!("edge {i} ({} -> {}) is not a forward edge", e.from, e.to));
            }
            if e.filters == 0 {
                return fail(format!("edge {i} has zero filters"));
            }
            if e.in_window().1 > self.junctions[e.from] {
                return fail(format!(
                    "edge {i} reads channels {:?} but junction {} has width {}",
                    e.in_window(),
                    e.from,
                    self.junctions[e.from]
                ));
            }
            if e.out_window().1 > self.junctions[e.to] {
                return fail(format!(
                    "edge {i} writes channels {:?} but junction {} has width {}",
                    e.out_window(),
                    e.to,
                    self.junctions[e.to]
                ));
            }
            has_in[e.to] = true;
            has_out[e.from] = true;
        }
        for j in 0..n {
            if j != SOURCE && !has_in[j] {
                return fail(format!("junction {j} has no input"));
            }
            if j != SINK && !has_out[j] {
                return fail(format!("junction {j} has no output"));
            }
        }
        self.topo_order()?;
        // channel conservation: every channel of a junction is produced
        for j in 1..n {
            let mut covered = vec![false; self.junctions[j]];
            for (_, e) in self.incoming(j) {
                covered[e.out_offset..e.out_offset + e.filters]
                    .iter_mut()
                    .for_each(|c| *c = true);
            }
            if let Some(c) = covered.iter().position(|c| !c) {
                return fail(format!("channel {c} of junction {j} is never produced"));
            }
        }
        Ok(())
    }

    /// Junctions in topological order (Kahn, lowest index first).
    pub fn topo_order(&self) -> Result<Vec<usize>> {
        let n = self.junctions.len();
        let mut indeg = vec![0usize; n];
        for e in &self.edges {
            indeg[e.to] += 1;
        }
        let mut queue: VecDeque<usize> = (0..n).filter(|&j| indeg[j] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(j) = queue.pop_front() {
            order.push(j);
            for e in self.edges.iter().filter(|e| e.from == j) {
                indeg[e.to] -= 1;
                if indeg[e.to] == 0 {
                    queue.push_back(e.to);
                }
            }
        }
        if order.len() != n {
            return Err(Error::Validation("block graph contains a cycle".into()));
        }
        Ok(order)
    }

    pub fn combine_mode(&self, junction: usize) -> CombineMode {
        if junction == SOURCE {
            return CombineMode::Source;
        }
        let windows: Vec<(usize, usize)> = self.incoming(junction).map(|(_, e)| e.out_window()).collect();
        if windows.len() <= 1 {
            return CombineMode::Single;
        }
        if windows.iter().all(|w| *w == windows[0]) {
            return CombineMode::Add;
        }
        let disjoint = windows.iter().enumerate().all(|(i, a)| {
            windows[i + 1..].iter().all(|b| a.1 <= b.0 || b.1 <= a.0)
        });
        if disjoint {
            CombineMode::Concat
        } else {
            CombineMode::Mixed
        }
    }

    /// Longest path, in parameterized ops, from the input to each junction.
    pub fn junction_depths(&self) -> Result<Vec<usize>> {
        let mut depth = vec![0usize; self.junctions.len()];
        for j in self.topo_order()? {
            for e in self.edges.iter().filter(|e| e.to == j) {
                let step = usize::from(e.op != OpKind::NoneOp);
                depth[j] = depth[j].max(depth[e.from] + step);
            }
        }
        Ok(depth)
    }

    /// Height H: longest input→output path counting parameterized ops.
    pub fn height(&self) -> usize {
        self.junction_depths().map(|d| d[SINK]).unwrap_or(0)
    }

    /// Filters of parameterized edges summed per height level (index 0 = level 1).
    pub fn level_filters(&self) -> Vec<usize> {
        let Ok(depth) = self.junction_depths() else {
            return Vec::new();
        };
        let mut levels: Vec<usize> = Vec::new();
        for e in self.edges.iter().filter(|e| e.op != OpKind::NoneOp) {
            let lvl = depth[e.from];
            if levels.len() <= lvl {
                levels.resize(lvl + 1, 0);
            }
            levels[lvl] += e.filters;
        }
        levels
    }

    /// Width W: largest same-height filter total, normalized by the budget.
    pub fn width_stat(&self) -> f64 {
        self.level_filters().into_iter().max().unwrap_or(0) as f64 / self.width as f64
    }

    /// Divide an edge's filters into two groups, each processed by a random
    /// op after the original edge, and concatenate them back.
    pub fn branching(&self, edge: usize, rng: &mut SeededRng) -> Result<BlockGraph> {
        let e = self
            .edges
            .get(edge)
            .ok_or_else(|| Error::InvalidArgument(format!("edge {edge} does not exist")))?
            .clone();
        if e.filters < 2 {
            return Err(Error::InvalidArgument(format!(
                "cannot branch edge {edge}: {} filter(s) cannot be divided",
                e.filters
            )));
        }
        let mut g = self.clone();
        let mid = g.junctions.len();
        g.junctions.push(e.filters);
        g.edges[edge].to = mid;
        g.edges[edge].out_offset = 0;
        let first = e.filters.div_ceil(2);
        let second = e.filters - first;
        let op_a = OpKind::random(rng);
        let op_b = OpKind::random(rng);
        g.edges.push(Edge {
            from: mid,
            to: e.to,
            op: op_a,
            filters: first,
            in_offset: 0,
            out_offset: e.out_offset,
        });
        g.edges.push(Edge {
            from: mid,
            to: e.to,
            op: op_b,
            filters: second,
            in_offset: first,
            out_offset: e.out_offset + first,
        });
        Ok(g)
    }

    /// Add a parallel edge with a random op, summed with the original.
    pub fn splitting(&self, edge: usize, rng: &mut SeededRng) -> Result<BlockGraph> {
        let e = self
            .edges
            .get(edge)
            .ok_or_else(|| Error::InvalidArgument(format!("edge {edge} does not exist")))?
            .clone();
        let mut g = self.clone();
        g.edges.push(Edge {
            op: OpKind::random(rng),
            ..e
        });
        Ok(g)
    }

    /// Apply one growth procedure; a rejected branching falls back to splitting.
    pub fn grow_at(&self, growth: Growth, edge: usize, rng: &mut SeededRng) -> Result<(BlockGraph, Growth)> {
        match growth {
            Growth::Branching if self.edges.get(edge).is_some_and(|e| e.filters >= 2) => {
                Ok((self.branching(edge, rng)?, Growth::Branching))
            }
            _ => Ok((self.splitting(edge, rng)?, Growth::Splitting)),
        }
    }

    /// A uniformly random procedure on a uniformly random edge.
    pub fn grow_random(&self, rng: &mut SeededRng) -> BlockGraph {
        let growth = if rng.gen_bool(0.5) { Growth::Branching } else { Growth::Splitting };
        let edge = rng.gen_range(0..self.edges.len());
        self.grow_at(growth, edge, rng).expect("edge index in range").0
    }
}
