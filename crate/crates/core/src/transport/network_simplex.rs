//! Primal network simplex for balanced transportation problems.
//!
//! The spanning tree is rooted at an artificial node joined to every source
//! and sink, which makes the initial basis strongly feasible; the leaving
//! arc is the last blocking arc along the pivot cycle, which keeps it so.
//! Entering arcs are chosen by block search over the original arcs.

use alloc::vec;
use alloc::vec::Vec;

const NONE: usize = usize::MAX;

/// Arc set of a bipartite transportation problem.
pub(crate) trait Arcs {
    fn len(&self) -> usize;
    /// `(source, sink, cost)` of arc `e`.
    fn arc(&self, e: usize) -> (usize, usize, f64);
    fn max_cost(&self) -> f64;
}

/// Complete bipartite arcs with a row-major `n x m` cost matrix.
pub(crate) struct DenseArcs<'a> {
    pub m: usize,
    pub cost: &'a [f64],
}

impl Arcs for DenseArcs<'_> {
    fn len(&self) -> usize {
        self.cost.len()
    }

    #[inline]
    fn arc(&self, e: usize) -> (usize, usize, f64) {
        (e / self.m, e % self.m, self.cost[e])
    }

    fn max_cost(&self) -> f64 {
        self.cost.iter().fold(0.0f64, |a, &c| a.max(c.abs()))
    }
}

/// Explicit arc list.
pub(crate) struct SparseArcs<'a> {
    pub arcs: &'a [(u32, u32, f64)],
}

impl Arcs for SparseArcs<'_> {
    fn len(&self) -> usize {
        self.arcs.len()
    }

    #[inline]
    fn arc(&self, e: usize) -> (usize, usize, f64) {
        let (i, j, c) = self.arcs[e];
        (i as usize, j as usize, c)
    }

    fn max_cost(&self) -> f64 {
        self.arcs.iter().fold(0.0f64, |a, &(_, _, c)| a.max(c.abs()))
    }
}

#[derive(Debug)]
pub(crate) struct LpOutcome {
    /// `(source, sink, arc, flow)` for every basic original arc with positive flow.
    pub flows: Vec<(usize, usize, usize, f64)>,
    /// Duals with `u[i] + v[j] <= c(i, j)`.
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub cost: f64,
    /// Flow left on artificial arcs; zero up to rounding when the arc set
    /// admits a feasible plan.
    pub artificial_flow: f64,
}

struct Tree {
    parent: Vec<usize>,
    pred: Vec<usize>,
    up: Vec<bool>,
    flow: Vec<f64>,
    depth: Vec<u32>,
    pi: Vec<f64>,
    /// Children of each node; `slot[u]` is `u`'s index in its parent's list.
    children: Vec<Vec<usize>>,
    slot: Vec<usize>,
}

impl Tree {
    fn detach(&mut self, u: usize) {
        let p = self.parent[u];
        let k = self.slot[u];
        let list = &mut self.children[p];
        list.swap_remove(k);
        if k < list.len() {
            let moved = list[k];
            self.slot[moved] = k;
        }
    }

    fn attach(&mut self, u: usize, p: usize) {
        self.parent[u] = p;
        self.slot[u] = self.children[p].len();
        self.children[p].push(u);
    }
}

/// Solves `min sum c x` subject to row sums `supply` and column sums `demand`.
/// Both vectors must be positive and have equal totals.
pub(crate) fn solve<A: Arcs>(supply: &[f64], demand: &[f64], arcs: &A) -> LpOutcome {
    let n = supply.len();
    let m = demand.len();
    let root = n + m;
    let nodes = n + m + 1;
    let num_arcs = arcs.len();
    let art_cost = (arcs.max_cost() + 1.0) * nodes as f64;
    let eps = 1e-12 * (arcs.max_cost() + 1.0) * libm::sqrt(nodes as f64);

    let endpoints = |e: usize| -> (usize, usize, f64) {
        if e < num_arcs {
            let (i, j, c) = arcs.arc(e);
            (i, n + j, c)
        } else {
            let u = e - num_arcs;
            if u < n {
                (u, root, 0.0)
            } else {
                (root, u, art_cost)
            }
        }
    };

    let mut t = Tree {
        parent: vec![root; nodes],
        pred: (0..nodes).map(|u| num_arcs + u).collect(),
        up: (0..nodes).map(|u| u < n).collect(),
        flow: Vec::with_capacity(nodes),
        depth: vec![1; nodes],
        pi: (0..nodes).map(|u| if u < n || u == root { 0.0 } else { art_cost }).collect(),
        children: vec![Vec::new(); nodes],
        slot: (0..nodes).collect(),
    };
    t.flow.extend_from_slice(supply);
    t.flow.extend_from_slice(demand);
    t.flow.push(0.0);
    t.parent[root] = NONE;
    t.pred[root] = NONE;
    t.depth[root] = 0;
    t.children[root] = (0..root).collect();

    let block = ((libm::sqrt(num_arcs as f64)) as usize).max(10).min(num_arcs.max(1));
    let mut next_arc = 0usize;
    let mut pivots = 0usize;
    let max_pivots = 200 * nodes + 10 * num_arcs + 1000;
    let mut queue: Vec<usize> = Vec::with_capacity(nodes);

    while pivots < max_pivots {
        // block search for the most negative reduced cost
        let mut best = -eps;
        let mut entering = NONE;
        let mut cnt = block;
        let mut e = next_arc;
        for _ in 0..num_arcs {
            let (i, j, c) = arcs.arc(e);
            let rc = c + t.pi[i] - t.pi[n + j];
            if rc < best {
                best = rc;
                entering = e;
            }
            e += 1;
            if e == num_arcs {
                e = 0;
            }
            cnt -= 1;
            if cnt == 0 {
                if entering != NONE {
                    break;
                }
                cnt = block;
            }
        }
        if entering == NONE {
            break;
        }
        next_arc = e;
        pivots += 1;

        let (first, second, _) = endpoints(entering);
        // join node
        let (mut a, mut b) = (first, second);
        while a != b {
            if t.depth[a] > t.depth[b] {
                a = t.parent[a];
            } else if t.depth[b] > t.depth[a] {
                b = t.parent[b];
            } else {
                a = t.parent[a];
                b = t.parent[b];
            }
        }
        let join = a;

        // leaving arc: last blocking arc along the cycle
        let mut delta = f64::INFINITY;
        let mut u_out = NONE;
        let mut side = 0;
        let mut u = first;
        while u != join {
            if t.up[u] && t.flow[u] < delta {
                delta = t.flow[u];
                u_out = u;
                side = 1;
            }
            u = t.parent[u];
        }
        u = second;
        while u != join {
            if !t.up[u] && t.flow[u] <= delta {
                delta = t.flow[u];
                u_out = u;
                side = 2;
            }
            u = t.parent[u];
        }
        debug_assert!(u_out != NONE, "transportation cycles always block");
        let delta = delta.max(0.0);

        // push flow around the cycle
        if delta > 0.0 {
            u = first;
            while u != join {
                t.flow[u] += if t.up[u] { -delta } else { delta };
                u = t.parent[u];
            }
            u = second;
            while u != join {
                t.flow[u] += if t.up[u] { delta } else { -delta };
                u = t.parent[u];
            }
        }

        let (u_in, v_in) = if side == 1 { (first, second) } else { (second, first) };

        // detach the leaving arc
        t.detach(u_out);

        // reverse the path u_in .. u_out and hang it below v_in
        let mut w = u_in;
        let mut new_parent = v_in;
        let mut new_pred = entering;
        let mut new_up = first == u_in;
        let mut new_flow = delta;
        loop {
            let (op, opred, oup, oflow) = (t.parent[w], t.pred[w], t.up[w], t.flow[w]);
            if w != u_out {
                t.detach(w);
            }
            t.attach(w, new_parent);
            t.pred[w] = new_pred;
            t.up[w] = new_up;
            t.flow[w] = new_flow;
            if w == u_out {
                break;
            }
            new_parent = w;
            new_pred = opred;
            new_up = !oup;
            new_flow = oflow;
            w = op;
        }

        // refresh depth and potentials on the moved subtree
        queue.clear();
        queue.push(u_in);
        let mut head = 0;
        while head < queue.len() {
            let w = queue[head];
            head += 1;
            let p = t.parent[w];
            let (_, _, c) = endpoints(t.pred[w]);
            t.depth[w] = t.depth[p] + 1;
            t.pi[w] = if t.up[w] { t.pi[p] - c } else { t.pi[p] + c };
            queue.extend_from_slice(&t.children[w]);
        }
    }

    // recompute flows from the final basis for exact conservation
    let order = bfs_order(&t, root);
    let mut subtree_supply = vec![0.0; nodes];
    for u in 0..n {
        subtree_supply[u] = supply[u];
    }
    for j in 0..m {
        subtree_supply[n + j] = -demand[j];
    }
    for &u in order.iter().rev() {
        if u == root {
            continue;
        }
        let s = subtree_supply[u];
        t.flow[u] = (if t.up[u] { s } else { -s }).max(0.0);
        let p = t.parent[u];
        subtree_supply[p] += s;
    }

    let mut flows = Vec::with_capacity(n + m);
    let mut cost = 0.0;
    let mut artificial_flow = 0.0;
    for u in 0..root {
        let e = t.pred[u];
        let f = t.flow[u];
        if f <= 0.0 {
            continue;
        }
        if e < num_arcs {
            let (i, j, c) = arcs.arc(e);
            cost += f * c;
            flows.push((i, j, e, f));
        } else {
            artificial_flow += f;
        }
    }
    flows.sort_unstable_by_key(|f| (f.0, f.1));
    let u_dual: Vec<f64> = (0..n).map(|i| -t.pi[i]).collect();
    let v_dual: Vec<f64> = (0..m).map(|j| t.pi[n + j]).collect();
    LpOutcome {
        flows,
        u: u_dual,
        v: v_dual,
        cost,
        artificial_flow,
    }
}

fn bfs_order(t: &Tree, root: usize) -> Vec<usize> {
    let mut order = Vec::with_capacity(t.parent.len());
    order.push(root);
    let mut head = 0;
    while head < order.len() {
        let w = order[head];
        head += 1;
        order.extend_from_slice(&t.children[w]);
    }
    order
}
