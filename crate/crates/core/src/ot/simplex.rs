//! Primal network simplex for the uncapacitated transportation problem.
//!
//! Sources `0..n` ship to sinks `n..n+m`; node `n+m` is an artificial root joined
//! to every node by a big-M arc. The spanning tree is kept strongly feasible, so
//! degenerate pivots cannot cycle. Entering arcs come from block pricing.

use rayon::prelude::*;

use crate::measures::sq_dist;

const NONE: usize = usize::MAX;

pub(crate) struct TransportSimplex {
    n: usize,
    m: usize,
    n_art: usize,
    arc_src: Vec<u32>,
    arc_tgt: Vec<u32>,
    arc_cost: Vec<f64>,
    flow: Vec<f64>,
    in_tree: Vec<bool>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    up: Vec<bool>,
    depth: Vec<usize>,
    pi: Vec<f64>,
    first_child: Vec<usize>,
    next_sib: Vec<usize>,
    prev_sib: Vec<usize>,
    next_arc: usize,
    eps: f64,
    stack: Vec<usize>,
    path: Vec<usize>,
    pub pivots: usize,
}

impl TransportSimplex {
    /// `supply` and `demand` must be strictly positive with equal totals.
    /// `cost_bound` must dominate every arc cost that will ever be added.
    pub fn new(supply: &[f64], demand: &[f64], cost_bound: f64) -> Self {
        let (n, m) = (supply.len(), demand.len());
        let root = n + m;
        let nodes = n + m + 1;
        let scale = cost_bound.abs().max(f64::MIN_POSITIVE);
        let art = scale * (n + m + 2) as f64;
        let mut s = TransportSimplex {
            n,
            m,
            n_art: n + m,
            arc_src: Vec::with_capacity(n + m),
            arc_tgt: Vec::with_capacity(n + m),
            arc_cost: Vec::with_capacity(n + m),
            flow: Vec::with_capacity(n + m),
            in_tree: Vec::with_capacity(n + m),
            parent: vec![root; nodes],
            pred: vec![NONE; nodes],
            up: vec![false; nodes],
            depth: vec![1; nodes],
            pi: vec![0.0; nodes],
            first_child: vec![NONE; nodes],
            next_sib: vec![NONE; nodes],
            prev_sib: vec![NONE; nodes],
            next_arc: 0,
            eps: 1e-14 * art,
            stack: Vec::new(),
            path: Vec::new(),
            pivots: 0,
        };
        for (i, &a) in supply.iter().enumerate() {
            s.push_arc(i, root, art, a, true);
            s.pred[i] = i;
            s.up[i] = true;
            s.pi[i] = -art;
        }
        for (j, &b) in demand.iter().enumerate() {
            let v = n + j;
            s.push_arc(root, v, art, b, true);
            s.pred[v] = n + j;
            s.up[v] = false;
            s.pi[v] = art;
        }
        s.parent[root] = NONE;
        s.depth[root] = 0;
        for v in 0..n + m {
            s.add_child(root, v);
        }
        s
    }

    fn push_arc(&mut self, u: usize, v: usize, cost: f64, flow: f64, tree: bool) {
        self.arc_src.push(u as u32);
        self.arc_tgt.push(v as u32);
        self.arc_cost.push(cost);
        self.flow.push(flow);
        self.in_tree.push(tree);
    }

    /// Add the arc from source `i` to sink `j`.
    pub fn add_arc(&mut self, i: usize, j: usize, cost: f64) {
        let v = self.n + j;
        self.push_arc(i, v, cost, 0.0, false);
    }

    /// Replace the all-artificial starting tree with a greedy flow on the real
    /// arcs present, taken in order of increasing approximate reduced cost
    /// `c_ij - f_i - g_j`.
    pub fn warm_start(&mut self, f: &[f64], g: &[f64]) {
        let n = self.n;
        let mut rem: Vec<f64> = self.flow[..self.n_art].to_vec();
        let mut order: Vec<usize> = (self.n_art..self.arc_src.len()).collect();
        let key: Vec<f64> = (0..self.arc_src.len())
            .map(|e| if e < self.n_art { 0.0 } else { self.arc_cost[e] - f[self.arc_src[e] as usize] - g[self.arc_tgt[e] as usize - n] })
            .collect();
        order.sort_by(|&x, &y| key[x].total_cmp(&key[y]));
        let mut flows = Vec::new();
        for e in order {
            let (u, v) = (self.arc_src[e] as usize, self.arc_tgt[e] as usize);
            if rem[u] > 0.0 && rem[v] > 0.0 {
                let x = rem[u].min(rem[v]);
                rem[u] = if rem[u] == x { 0.0 } else { rem[u] - x };
                rem[v] = if rem[v] == x { 0.0 } else { rem[v] - x };
                flows.push((e, x));
            }
        }
        // Every greedy assignment exhausts an endpoint, so these arcs form a forest.
        let ok = self.install(&flows);
        debug_assert!(ok);
    }

    /// Start from the given flows on present arcs when they form a forest.
    /// Returns false, leaving the tree untouched, when they contain a cycle.
    ///
    /// Each component is hung from the root by the artificial arc of a node
    /// with unshipped mass, or of a sink with zero flow when every node is
    /// balanced, which keeps the tree strongly feasible.
    pub fn install(&mut self, flows: &[(usize, f64)]) -> bool {
        let (n, m) = (self.n, self.m);
        let root = n + m;
        let mut uf: Vec<usize> = (0..n + m).collect();
        fn find(uf: &mut [usize], mut x: usize) -> usize {
            while uf[x] != x {
                uf[x] = uf[uf[x]];
                x = uf[x];
            }
            x
        }
        for &(e, _) in flows {
            let (ru, rv) = (find(&mut uf, self.arc_src[e] as usize), find(&mut uf, self.arc_tgt[e] as usize));
            if ru == rv {
                return false;
            }
            uf[ru] = rv;
        }
        let mut rem: Vec<f64> = self.flow[..self.n_art].to_vec();
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n + m];
        for &(e, x) in flows {
            let (u, v) = (self.arc_src[e] as usize, self.arc_tgt[e] as usize);
            self.flow[e] = x;
            self.in_tree[e] = true;
            rem[u] -= x;
            rem[v] -= x;
            adj[u].push(e);
            adj[v].push(e);
        }

        // Attachment node of each component: the most unbalanced node, else a sink.
        let mut anchor = vec![NONE; n + m];
        for w in 0..n + m {
            let r = find(&mut uf, w);
            let cur = anchor[r];
            let better = cur == NONE
                || (rem[w] > 0.0 && rem[w] > rem[cur].max(0.0))
                || (rem[cur] <= 0.0 && rem[w] <= 0.0 && w >= n && cur < n);
            if better {
                anchor[r] = w;
            }
        }
        let anchors: Vec<usize> = (0..n + m).filter(|&w| uf[w] == w).map(|r| anchor[r]).collect();
        for w in 0..n + m {
            self.flow[w] = 0.0;
            self.in_tree[w] = false;
            self.first_child[w] = NONE;
            self.next_sib[w] = NONE;
            self.prev_sib[w] = NONE;
        }
        self.first_child[root] = NONE;

        // Hang every component below the root and walk it breadth first.
        let mut queue = Vec::with_capacity(n + m);
        for &w in &anchors {
            self.flow[w] = rem[w].max(0.0);
            self.in_tree[w] = true;
            self.parent[w] = root;
            self.pred[w] = w;
            self.up[w] = w < n;
            self.depth[w] = 1;
            self.pi[w] = if w < n { -self.arc_cost[w] } else { self.arc_cost[w] };
            self.add_child(root, w);
            queue.push(w);
        }
        let mut k = 0;
        while k < queue.len() {
            let w = queue[k];
            k += 1;
            for t in 0..adj[w].len() {
                let e = adj[w][t];
                if e == self.pred[w] {
                    continue;
                }
                let (u, v) = (self.arc_src[e] as usize, self.arc_tgt[e] as usize);
                let o = if u == w { v } else { u };
                self.parent[o] = w;
                self.pred[o] = e;
                self.up[o] = u == o;
                self.depth[o] = self.depth[w] + 1;
                self.pi[o] = if u == w { self.pi[w] + self.arc_cost[e] } else { self.pi[w] - self.arc_cost[e] };
                self.add_child(w, o);
                queue.push(o);
            }
        }
        debug_assert_eq!(queue.len(), n + m);
        true
    }

    #[inline]
    fn reduced_cost(&self, e: usize) -> f64 {
        self.arc_cost[e] + self.pi[self.arc_src[e] as usize] - self.pi[self.arc_tgt[e] as usize]
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    fn add_child(&mut self, p: usize, c: usize) {
        let head = self.first_child[p];
        self.next_sib[c] = head;
        self.prev_sib[c] = NONE;
        if head != NONE {
            self.prev_sib[head] = c;
        }
        self.first_child[p] = c;
    }

    fn remove_child(&mut self, p: usize, c: usize) {
        let (prev, next) = (self.prev_sib[c], self.next_sib[c]);
        if prev != NONE {
            self.next_sib[prev] = next;
        } else {
            self.first_child[p] = next;
        }
        if next != NONE {
            self.prev_sib[next] = prev;
        }
        self.prev_sib[c] = NONE;
        self.next_sib[c] = NONE;
    }

    fn find_entering(&mut self) -> Option<usize> {
        let total = self.arc_src.len() - self.n_art;
        if total == 0 {
            return None;
        }
        let block = ((total as f64).sqrt().ceil() as usize).max(10);
        let mut best = NONE;
        let mut best_rc = -self.eps;
        let mut cnt = 0;
        let start = self.next_arc.min(total - 1);
        let mut k = start;
        for _ in 0..total {
            let e = self.n_art + k;
            if !self.in_tree[e] {
                let rc = self.reduced_cost(e);
                if rc < best_rc {
                    best_rc = rc;
                    best = e;
                }
            }
            cnt += 1;
            k += 1;
            if k == total {
                k = 0;
            }
            if cnt == block {
                if best != NONE {
                    self.next_arc = k;
                    return Some(best);
                }
                cnt = 0;
            }
        }
        if best != NONE {
            self.next_arc = k;
        }
        (best != NONE).then_some(best)
    }

    fn join(&self, mut u: usize, mut v: usize) -> usize {
        while u != v {
            if self.depth[u] > self.depth[v] {
                u = self.parent[u];
            } else if self.depth[v] > self.depth[u] {
                v = self.parent[v];
            } else {
                u = self.parent[u];
                v = self.parent[v];
            }
        }
        u
    }

    fn pivot(&mut self, e: usize) -> bool {
        let u = self.arc_src[e] as usize;
        let v = self.arc_tgt[e] as usize;
        let join = self.join(u, v);

        // Flow is pushed u -> v, so it runs from `join` down to `u` and from `v` up to `join`.
        let mut delta = f64::INFINITY;
        let mut u_out = NONE;
        let mut side = 0;
        let mut w = u;
        while w != join {
            if self.up[w] {
                let d = self.flow[self.pred[w]];
                if d < delta {
                    delta = d;
                    u_out = w;
                    side = 1;
                }
            }
            w = self.parent[w];
        }
        let mut w = v;
        while w != join {
            if !self.up[w] {
                let d = self.flow[self.pred[w]];
                if d <= delta {
                    delta = d;
                    u_out = w;
                    side = 2;
                }
            }
            w = self.parent[w];
        }
        if side == 0 {
            return false;
        }

        if delta > 0.0 {
            self.flow[e] += delta;
            let mut w = u;
            while w != join {
                let a = self.pred[w];
                if self.up[w] {
                    self.flow[a] = (self.flow[a] - delta).max(0.0);
                } else {
                    self.flow[a] += delta;
                }
                w = self.parent[w];
            }
            let mut w = v;
            while w != join {
                let a = self.pred[w];
                if self.up[w] {
                    self.flow[a] += delta;
                } else {
                    self.flow[a] = (self.flow[a] - delta).max(0.0);
                }
                w = self.parent[w];
            }
        }
        let leaving = self.pred[u_out];
        self.flow[leaving] = 0.0;

        let (u_in, v_in) = if side == 1 { (u, v) } else { (v, u) };
        let rc = self.reduced_cost(e);
        let shift = if u_in == u { -rc } else { rc };

        // Reverse the tree path u_in -> u_out and hang it below v_in.
        self.path.clear();
        let mut w = u_in;
        loop {
            self.path.push(w);
            if w == u_out {
                break;
            }
            w = self.parent[w];
        }
        let old: Vec<(usize, usize, bool)> =
            self.path.iter().map(|&w| (self.parent[w], self.pred[w], self.up[w])).collect();
        for t in 0..self.path.len() {
            let w = self.path[t];
            self.remove_child(old[t].0, w);
        }
        let path = std::mem::take(&mut self.path);
        for (t, &w) in path.iter().enumerate() {
            if t == 0 {
                self.parent[w] = v_in;
                self.pred[w] = e;
                self.up[w] = self.arc_src[e] as usize == w;
                self.add_child(v_in, w);
            } else {
                let below = path[t - 1];
                self.parent[w] = below;
                self.pred[w] = old[t - 1].1;
                self.up[w] = !old[t - 1].2;
                self.add_child(below, w);
            }
        }
        self.path = path;
        self.in_tree[e] = true;
        self.in_tree[leaving] = false;

        // Refresh potentials and depths of the moved subtree.
        self.stack.clear();
        self.stack.push(u_in);
        while let Some(w) = self.stack.pop() {
            self.pi[w] += shift;
            self.depth[w] = self.depth[self.parent[w]] + 1;
            let mut c = self.first_child[w];
            while c != NONE {
                self.stack.push(c);
                c = self.next_sib[c];
            }
        }
        self.pivots += 1;
        true
    }

    /// Pivot until no present arc has negative reduced cost. Returns false if
    /// the pivot budget runs out.
    pub fn run(&mut self, max_pivots: usize) -> bool {
        let mut budget = max_pivots;
        while let Some(e) = self.find_entering() {
            if budget == 0 || !self.pivot(e) {
                return false;
            }
            budget -= 1;
        }
        true
    }

    /// Largest flow left on an artificial arc.
    pub fn artificial_flow(&self) -> f64 {
        self.flow[..self.n_art].iter().fold(0.0, |a, &f| a.max(f))
    }

    /// Dual variables `(f, g)` with `f_i + g_j <= c_ij`, tight on the support of the flow.
    pub fn duals(&self) -> (Vec<f64>, Vec<f64>) {
        let f = (0..self.n).map(|i| -self.pi[i]).collect();
        let g = (0..self.m).map(|j| self.pi[self.n + j]).collect();
        (f, g)
    }

    /// Positive flows on real arcs as `(i, j, mass)`.
    pub fn flows(&self) -> Vec<(usize, usize, f64)> {
        (self.n_art..self.arc_src.len())
            .filter(|&e| self.flow[e] > 0.0)
            .map(|e| (self.arc_src[e] as usize, self.arc_tgt[e] as usize - self.n, self.flow[e]))
            .collect()
    }

    pub fn potentials(&self) -> &[f64] {
        &self.pi
    }
}

pub(crate) struct Solution {
    pub flows: Vec<(usize, usize, f64)>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
}

fn pivot_budget(n: usize, m: usize) -> usize {
    200 * (n + m) * ((n + m) as f64).log2().max(1.0) as usize + 100_000
}

/// Problems up to this many arcs are solved on the complete bipartite graph.
const DENSE_LIMIT: usize = 250_000;

/// Solve with every arc present, given a row-major cost matrix.
pub(crate) fn solve_dense(a: &[f64], b: &[f64], cost: &[f64]) -> Option<Solution> {
    let (n, m) = (a.len(), b.len());
    let c_max = cost.iter().fold(0.0f64, |acc, &c| acc.max(c.abs()));
    let mut s = TransportSimplex::new(a, b, c_max);
    for i in 0..n {
        for j in 0..m {
            s.add_arc(i, j, cost[i * m + j]);
        }
    }
    if !s.run(pivot_budget(n, m)) || s.artificial_flow() > 1e-9 {
        return None;
    }
    let (f, g) = s.duals();
    Some(Solution { flows: s.flows(), f, g })
}

/// Solve for squared Euclidean cost between flat point sets `xs` (sources) and
/// `ys` (sinks) of dimension `d`.
///
/// Large problems use column generation. A clustered copy of the problem is
/// solved first; its plan, split down to the points, is the starting basis and
/// its duals select the initial arcs. Rounds then add the most violated arcs
/// of each row. Pricing expands `|x - y|^2 = |x|^2 + |y|^2 - 2 <x, y>`; arc
/// costs are computed directly.
pub(crate) fn solve_points(a: &[f64], b: &[f64], xs: &[f64], ys: &[f64], d: usize, cost_bound: f64) -> Option<Solution> {
    let (n, m) = (a.len(), b.len());
    let cost = |i: usize, j: usize| sq_dist(&xs[i * d..(i + 1) * d], &ys[j * d..(j + 1) * d]);
    if n * m <= DENSE_LIMIT {
        let mut c = vec![0.0; n * m];
        c.par_chunks_mut(m).enumerate().for_each(|(i, row)| {
            for (j, v) in row.iter_mut().enumerate() {
                *v = cost(i, j);
            }
        });
        return solve_dense(a, b, &c);
    }

    const K_INIT: usize = 6;
    const K_ADD: usize = 8;
    let x_cols = columns(xs, d);
    let y_cols = columns(ys, d);
    let x_norm: Vec<f64> = xs.chunks_exact(d).map(|p| p.iter().map(|v| v * v).sum()).collect();
    let y_norm: Vec<f64> = ys.chunks_exact(d).map(|p| p.iter().map(|v| v * v).sum()).collect();

    // Approximate duals: the coarse optimal column duals, c-transformed onto
    // the fine sources and back onto the fine sinks. Seed arcs are the ones
    // with the smallest approximate reduced cost `c_ij - f_i - g_j`.
    let coarse = coarse_problem(a, b, xs, ys, d, cost_bound);
    let f: Vec<f64> = match &coarse {
        Some(c) => {
            let cy_cols = columns(&c.cy, d);
            let base: Vec<f64> = c.cy.chunks_exact(d).zip(&c.sol.g).map(|(p, g)| dot_self(p) - g).collect();
            (0..n)
                .into_par_iter()
                .map_init(
                    || vec![0.0; base.len()],
                    |buf, i| {
                        scan(&xs[i * d..(i + 1) * d], &base, &cy_cols, buf);
                        x_norm[i] + buf.iter().fold(f64::INFINITY, |acc, &v| acc.min(v))
                    },
                )
                .collect()
        }
        None => vec![0.0; n],
    };
    let x_base: Vec<f64> = x_norm.iter().zip(&f).map(|(x, f)| x - f).collect();
    let (g, col_arcs): (Vec<f64>, Vec<Vec<usize>>) = (0..m)
        .into_par_iter()
        .map_init(
            || vec![0.0; n],
            |buf, j| {
                scan(&ys[j * d..(j + 1) * d], &x_base, &x_cols, buf);
                let g = y_norm[j] + buf.iter().fold(f64::INFINITY, |acc, &v| acc.min(v));
                (g, k_smallest(buf, K_INIT, f64::INFINITY))
            },
        )
        .unzip();
    let y_base: Vec<f64> = y_norm.iter().zip(&g).map(|(y, g)| y - g).collect();
    let row_arcs: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map_init(
            || vec![0.0; m],
            |buf, i| {
                scan(&xs[i * d..(i + 1) * d], &y_base, &y_cols, buf);
                k_smallest(buf, K_INIT, f64::INFINITY)
            },
        )
        .collect();
    let mut initial = Vec::with_capacity((n + m) * K_INIT);
    for (i, js) in row_arcs.iter().enumerate() {
        initial.extend(js.iter().map(|&j| (i, j)));
    }
    for (j, is) in col_arcs.iter().enumerate() {
        initial.extend(is.iter().map(|&i| (i, j)));
    }
    // The coarse plan split down to the fine points is the preferred start.
    let refined = coarse.as_ref().map(|c| refine(c, a, b, xs, ys, d)).unwrap_or_default();
    initial.extend(refined.iter().map(|&(i, j, _)| (i, j)));
    initial.sort_unstable();
    initial.dedup();
    let mut s = TransportSimplex::new(a, b, cost_bound);
    for &(i, j) in &initial {
        s.add_arc(i, j, cost(i, j));
    }
    let start: Vec<(usize, f64)> = refined
        .iter()
        .map(|&(i, j, x)| (s.n_art + initial.binary_search(&(i, j)).expect("refined arc present"), x))
        .collect();
    if start.is_empty() || !s.install(&start) {
        s.warm_start(&f, &g);
    }

    let budget = pivot_budget(n, m);
    loop {
        if !s.run(budget) {
            return None;
        }
        let eps = s.eps();
        let pi = s.potentials();
        // Reduced cost of (i, j) is `base_j - 2 <x_i, y_j> + |x_i|^2 + pi_i`.
        let base: Vec<f64> = (0..m).map(|j| y_norm[j] - pi[n + j]).collect();
        let additions: Vec<Vec<usize>> = (0..n)
            .into_par_iter()
            .map_init(
                || vec![0.0; m],
                |buf, i| {
                    scan(&xs[i * d..(i + 1) * d], &base, &y_cols, buf);
                    k_smallest(buf, K_ADD, -eps - x_norm[i] - pi[i])
                },
            )
            .collect();
        let mut added = 0;
        for (i, js) in additions.into_iter().enumerate() {
            for j in js {
                s.add_arc(i, j, cost(i, j));
                added += 1;
            }
        }
        if added == 0 {
            break;
        }
    }
    if s.artificial_flow() > 1e-9 {
        return None;
    }
    let (f, g) = s.duals();
    Some(Solution { flows: s.flows(), f, g })
}

/// Target cluster size of the coarse problem.
const CLUSTER: usize = 4;

/// Group points by cells of a regular grid sized so that a nonempty cell holds
/// about `CLUSTER` points on average. Returns the members of each nonempty cell.
fn cluster(points: &[f64], d: usize) -> Vec<Vec<usize>> {
    let count = points.len() / d;
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for p in points.chunks_exact(d) {
        for k in 0..d {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let extent: Vec<f64> = (0..d).map(|k| (hi[k] - lo[k]).max(1e-12)).collect();
    let volume: f64 = extent.iter().product();
    let target = (count / CLUSTER).max(1) as f64;
    let group = |h: f64| {
        let mut map: std::collections::BTreeMap<Vec<i64>, Vec<usize>> = std::collections::BTreeMap::new();
        for (i, p) in points.chunks_exact(d).enumerate() {
            let key: Vec<i64> = (0..d).map(|k| ((p[k] - lo[k]) / h).floor() as i64).collect();
            map.entry(key).or_default().push(i);
        }
        map
    };
    // Start from the bounding box and shrink the cells when much of it is empty.
    let mut h = (volume / target).powf(1.0 / d as f64);
    let mut map = group(h);
    for _ in 0..3 {
        let ratio = map.len() as f64 / target;
        if ratio > 0.7 {
            break;
        }
        h *= ratio.powf(1.0 / d as f64);
        map = group(h);
    }
    map.into_values().collect()
}

fn centroids(points: &[f64], mass: &[f64], d: usize, groups: &[Vec<usize>]) -> (Vec<f64>, Vec<f64>) {
    let mut c = Vec::with_capacity(groups.len() * d);
    let mut w = Vec::with_capacity(groups.len());
    for g in groups {
        let total: f64 = g.iter().map(|&i| mass[i]).sum();
        for k in 0..d {
            c.push(g.iter().map(|&i| mass[i] * points[i * d + k]).sum::<f64>() / total);
        }
        w.push(total);
    }
    (c, w)
}

/// Optimal solution of the clustered problem.
struct Coarse {
    gx: Vec<Vec<usize>>,
    gy: Vec<Vec<usize>>,
    cx: Vec<f64>,
    cy: Vec<f64>,
    sol: Solution,
}

/// Cluster both point sets and solve between the weighted centroids, when
/// clustering actually reduces the size.
fn coarse_problem(a: &[f64], b: &[f64], xs: &[f64], ys: &[f64], d: usize, cost_bound: f64) -> Option<Coarse> {
    let gx = cluster(xs, d);
    let gy = cluster(ys, d);
    if gx.len() * 2 > a.len() || gy.len() * 2 > b.len() {
        return None;
    }
    let (cx, wx) = centroids(xs, a, d, &gx);
    let (cy, mut wy) = centroids(ys, b, d, &gy);
    let (sx, sy): (f64, f64) = (wx.iter().sum(), wy.iter().sum());
    wy.iter_mut().for_each(|w| *w *= sx / sy);
    let sol = solve_points(&wx, &wy, &cx, &cy, d, cost_bound)?;
    Some(Coarse { gx, gy, cx, cy, sol })
}

/// Axis along which `p - q` is longest.
fn main_axis(p: &[f64], q: &[f64]) -> usize {
    (0..p.len()).max_by(|&k, &l| (p[k] - q[k]).abs().total_cmp(&(p[l] - q[l]).abs())).unwrap_or(0)
}

/// Sort point indices lexicographically, starting from axis `first`.
fn sort_along(idx: &mut [usize], pts: &[f64], d: usize, first: usize) {
    idx.sort_by(|&i, &j| {
        (0..d)
            .map(|t| (first + t) % d)
            .map(|k| pts[i * d + k].total_cmp(&pts[j * d + k]))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
}

/// North-west corner rule between two ordered lists of `(index, mass)`.
fn north_west(left: &[(usize, f64)], right: &[(usize, f64)], mut emit: impl FnMut(usize, usize, f64)) {
    let total: f64 = left.iter().map(|t| t.1).sum();
    let tiny = 1e-13 * total;
    let (mut i, mut j) = (0, 0);
    let (mut ri, mut rj) = (left.first().map_or(0.0, |t| t.1), right.first().map_or(0.0, |t| t.1));
    while i < left.len() && j < right.len() {
        let x = ri.min(rj).max(0.0);
        if x > tiny {
            emit(left[i].0, right[j].0, x);
        }
        ri -= x;
        rj -= x;
        let mut moved = false;
        if ri <= tiny && i + 1 < left.len() {
            i += 1;
            ri = left[i].1;
            moved = true;
        }
        if rj <= tiny && j + 1 < right.len() {
            j += 1;
            rj = right[j].1;
            moved = true;
        }
        if !moved {
            break;
        }
    }
}

/// Split the members of one coarse node across its coarse flows. Members and
/// flows are both ordered along the axis in which the partner centroids spread
/// most, and matched by the north-west corner rule.
fn split_members(
    members: &[usize],
    mass: &[f64],
    pts: &[f64],
    d: usize,
    flows: &[(usize, f64)],
    partner: &[f64],
) -> Vec<Vec<(usize, f64)>> {
    let mut out = vec![Vec::new(); flows.len()];
    if flows.is_empty() {
        return out;
    }
    let axis = if flows.len() > 1 {
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for &(p, _) in flows {
            for k in 0..d {
                lo[k] = lo[k].min(partner[p * d + k]);
                hi[k] = hi[k].max(partner[p * d + k]);
            }
        }
        main_axis(&hi, &lo)
    } else {
        0
    };
    let mut fo: Vec<usize> = (0..flows.len()).collect();
    fo.sort_by(|&s, &t| partner[flows[s].0 * d + axis].total_cmp(&partner[flows[t].0 * d + axis]));
    let mut mo = members.to_vec();
    sort_along(&mut mo, pts, d, axis);
    let have: f64 = members.iter().map(|&i| mass[i]).sum();
    let sent: f64 = flows.iter().map(|f| f.1).sum();
    let left: Vec<(usize, f64)> = mo.iter().map(|&i| (i, mass[i])).collect();
    let right: Vec<(usize, f64)> = fo.iter().map(|&t| (t, flows[t].1 * have / sent)).collect();
    north_west(&left, &right, |i, t, x| out[t].push((i, x)));
    out
}

/// Fine flows obtained by splitting every coarse flow between the members of
/// its two clusters.
fn refine(coarse: &Coarse, a: &[f64], b: &[f64], xs: &[f64], ys: &[f64], d: usize) -> Vec<(usize, usize, f64)> {
    let (gx, gy, cx, cy) = (&coarse.gx, &coarse.gy, &coarse.cx, &coarse.cy);
    let mut by_src: Vec<Vec<(usize, f64)>> = vec![Vec::new(); gx.len()];
    let mut by_tgt: Vec<Vec<(usize, f64)>> = vec![Vec::new(); gy.len()];
    for &(p, q, x) in &coarse.sol.flows {
        by_src[p].push((q, x));
        by_tgt[q].push((p, x));
    }
    let mut src_part: std::collections::HashMap<(usize, usize), Vec<(usize, f64)>> = Default::default();
    for (p, fl) in by_src.iter().enumerate() {
        for (t, part) in split_members(&gx[p], a, xs, d, fl, cy).into_iter().enumerate() {
            src_part.insert((p, fl[t].0), part);
        }
    }
    let mut out = Vec::new();
    for (q, fl) in by_tgt.iter().enumerate() {
        for (t, right) in split_members(&gy[q], b, ys, d, fl, cx).into_iter().enumerate() {
            let p = fl[t].0;
            let mut left = src_part.remove(&(p, q)).unwrap_or_default();
            let axis = main_axis(&cy[q * d..(q + 1) * d], &cx[p * d..(p + 1) * d]);
            let mut right = right;
            let key = |v: &mut Vec<(usize, f64)>, pts: &[f64]| {
                let mut idx: Vec<usize> = (0..v.len()).collect();
                let flat: Vec<f64> = v.iter().flat_map(|&(i, _)| pts[i * d..(i + 1) * d].iter().copied()).collect();
                sort_along(&mut idx, &flat, d, axis);
                *v = idx.into_iter().map(|k| v[k]).collect();
            };
            key(&mut left, xs);
            key(&mut right, ys);
            north_west(&left, &right, |i, j, x| out.push((i, j, x)));
        }
    }
    out
}

fn dot_self(p: &[f64]) -> f64 {
    p.iter().map(|v| v * v).sum()
}

/// Coordinates split by axis.
fn columns(points: &[f64], d: usize) -> Vec<Vec<f64>> {
    (0..d).map(|k| points.chunks_exact(d).map(|p| p[k]).collect()).collect()
}

/// `out_j = base_j - 2 <x, p_j>` for points `p_j` given by axis columns.
fn scan(x: &[f64], base: &[f64], cols: &[Vec<f64>], out: &mut [f64]) {
    out.copy_from_slice(base);
    for (xk, col) in x.iter().zip(cols) {
        let t = 2.0 * xk;
        for (o, c) in out.iter_mut().zip(col) {
            *o -= t * c;
        }
    }
}

/// Indices of the `k` smallest values strictly below `threshold`.
fn k_smallest(values: &[f64], k: usize, threshold: f64) -> Vec<usize> {
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for (j, &v) in values.iter().enumerate() {
        if v < threshold {
            insert_smallest(&mut best, k, (v, j));
        }
    }
    best.into_iter().map(|(_, j)| j).collect()
}

fn insert_smallest(list: &mut Vec<(f64, usize)>, k: usize, item: (f64, usize)) {
    if list.len() == k && item.0 >= list[k - 1].0 {
        return;
    }
    let pos = list.partition_point(|x| x.0 <= item.0);
    list.insert(pos, item);
    list.truncate(k);
}
