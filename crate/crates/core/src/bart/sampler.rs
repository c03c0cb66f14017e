//! Backfitting Metropolis-Hastings for the sum-of-trees model.
//!
//! Trees are grown on a fixed grid of cutpoints. A node's admissible rules are
//! the grid cuts strictly inside the region carved out by its ancestors; a
//! proposal that would leave a child without training points is rejected.
//! Leaf values are integrated out in the structure moves and redrawn
//! conjugately afterwards.

use super::tree::{Tree, TreeNode};
use super::BartConfig;
use crate::rng::SimRng;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

const NONE: usize = usize::MAX;
const P_GROW: f64 = 0.4;
const P_PRUNE: f64 = 0.4;

#[derive(Debug, Clone)]
struct Node {
    parent: usize,
    left: usize,
    right: usize,
    var: usize,
    cut: usize,
    depth: usize,
    mu: f64,
}

impl Node {
    fn leaf(parent: usize, depth: usize) -> Self {
        Self {
            parent,
            left: NONE,
            right: NONE,
            var: 0,
            cut: 0,
            depth,
            mu: 0.0,
        }
    }

    fn is_leaf(&self) -> bool {
        self.left == NONE
    }
}

/// Cutpoint grid and training predictors shared by every tree.
pub(crate) struct Grid<'a> {
    pub x: &'a [Vec<f64>],
    pub cuts: Vec<Vec<f64>>,
}

impl<'a> Grid<'a> {
    pub fn new(x: &'a [Vec<f64>], n_cuts: usize) -> Self {
        let p = x[0].len();
        let cuts = (0..p)
            .map(|v| {
                let lo = x.iter().map(|r| r[v]).fold(f64::INFINITY, f64::min);
                let hi = x.iter().map(|r| r[v]).fold(f64::NEG_INFINITY, f64::max);
                let range = hi - lo;
                if !(range > 0.0) {
                    return Vec::new();
                }
                (1..=n_cuts)
                    .map(|c| lo + range * c as f64 / (n_cuts + 1) as f64)
                    .filter(|&c| c > lo && c < hi)
                    .collect()
            })
            .collect();
        Self { x, cuts }
    }

    #[inline]
    fn goes_left(&self, i: usize, var: usize, cut: usize) -> bool {
        self.x[i][var] <= self.cuts[var][cut]
    }
}

#[derive(Debug, Clone)]
pub(crate) struct SampTree {
    nodes: Vec<Node>,
    free: Vec<usize>,
    /// Leaf index of every training point.
    assign: Vec<usize>,
}

impl SampTree {
    fn new(n: usize, mu: f64) -> Self {
        let mut root = Node::leaf(NONE, 0);
        root.mu = mu;
        Self {
            nodes: vec![root],
            free: Vec::new(),
            assign: vec![0; n],
        }
    }

    fn alloc(&mut self, node: Node) -> usize {
        match self.free.pop() {
            Some(i) => {
                self.nodes[i] = node;
                i
            }
            None => {
                self.nodes.push(node);
                self.nodes.len() - 1
            }
        }
    }

    fn live(&self) -> impl Iterator<Item = usize> + '_ {
        // nodes on the free list are unreachable; walk from the root instead
        let mut stack = vec![0usize];
        std::iter::from_fn(move || {
            let i = stack.pop()?;
            let n = &self.nodes[i];
            if !n.is_leaf() {
                stack.push(n.right);
                stack.push(n.left);
            }
            Some(i)
        })
    }

    fn leaves(&self) -> Vec<usize> {
        self.live().filter(|&i| self.nodes[i].is_leaf()).collect()
    }

    fn is_nog(&self, i: usize) -> bool {
        let n = &self.nodes[i];
        !n.is_leaf() && self.nodes[n.left].is_leaf() && self.nodes[n.right].is_leaf()
    }

    fn nogs(&self) -> Vec<usize> {
        self.live().filter(|&i| self.is_nog(i)).collect()
    }

    fn is_stump(&self) -> bool {
        self.nodes[0].is_leaf()
    }

    /// Admissible `(var, lo, hi)` cut-index ranges at node `i`, from its ancestors' rules.
    fn available(&self, grid: &Grid, i: usize) -> Vec<(usize, usize, usize)> {
        let p = grid.cuts.len();
        let mut lo = vec![0i64; p];
        let mut hi: Vec<i64> = grid.cuts.iter().map(|c| c.len() as i64 - 1).collect();
        let mut child = i;
        let mut parent = self.nodes[i].parent;
        while parent != NONE {
            let pn = &self.nodes[parent];
            if child == pn.left {
                hi[pn.var] = hi[pn.var].min(pn.cut as i64 - 1);
            } else {
                lo[pn.var] = lo[pn.var].max(pn.cut as i64 + 1);
            }
            child = parent;
            parent = pn.parent;
        }
        (0..p)
            .filter(|&v| lo[v] <= hi[v])
            .map(|v| (v, lo[v] as usize, hi[v] as usize))
            .collect()
    }

    fn n_splittable(&self, grid: &Grid) -> usize {
        self.leaves()
            .into_iter()
            .filter(|&l| !self.available(grid, l).is_empty())
            .count()
    }

    fn depth(&self) -> usize {
        self.leaves()
            .into_iter()
            .map(|l| self.nodes[l].depth)
            .max()
            .unwrap_or(0)
    }

    #[cfg(test)]
    fn leaf_of(&self, grid: &Grid, i: usize) -> usize {
        let mut k = 0;
        while !self.nodes[k].is_leaf() {
            let n = &self.nodes[k];
            k = if grid.goes_left(i, n.var, n.cut) { n.left } else { n.right };
        }
        k
    }

    #[cfg(test)]
    fn reassign(&mut self, grid: &Grid) {
        for i in 0..self.assign.len() {
            self.assign[i] = self.leaf_of(grid, i);
        }
    }

    /// Counts and residual sums for the two halves of `node`'s points under a rule.
    fn split_stats(
        &self,
        grid: &Grid,
        resid: &[f64],
        members: &dyn Fn(usize) -> bool,
        var: usize,
        cut: usize,
    ) -> [(f64, f64); 2] {
        let mut out = [(0.0, 0.0); 2];
        for (i, r) in resid.iter().enumerate() {
            if members(self.assign[i]) {
                let side = if grid.goes_left(i, var, cut) { 0 } else { 1 };
                out[side].0 += 1.0;
                out[side].1 += r;
            }
        }
        out
    }

    pub fn to_tree(&self, grid: &Grid) -> Tree {
        let mut out = Vec::new();
        fn emit(t: &SampTree, grid: &Grid, i: usize, out: &mut Vec<TreeNode>) -> usize {
            let me = out.len();
            let n = &t.nodes[i];
            if n.is_leaf() {
                out.push(TreeNode::Leaf { value: n.mu });
                return me;
            }
            out.push(TreeNode::Leaf { value: 0.0 });
            let left = emit(t, grid, n.left, out);
            let right = emit(t, grid, n.right, out);
            out[me] = TreeNode::Split {
                var: n.var,
                cut: grid.cuts[n.var][n.cut],
                left,
                right,
            };
            me
        }
        emit(self, grid, 0, &mut out);
        Tree::new(out).expect("sampler trees are well formed")
    }
}

/// Sum-of-trees sampler state on the normalized response scale.
pub(crate) struct Sampler<'a> {
    grid: Grid<'a>,
    y: Vec<f64>,
    trees: Vec<SampTree>,
    fits: Vec<Vec<f64>>,
    total: Vec<f64>,
    resid: Vec<f64>,
    pub sigma2: f64,
    sigma_mu: f64,
    nu: f64,
    lambda: f64,
    alpha: f64,
    beta: f64,
}

impl<'a> Sampler<'a> {
    pub fn new(grid: Grid<'a>, y: Vec<f64>, config: &BartConfig, sigma_hat: f64) -> Self {
        let n = y.len();
        let m = config.m;
        let start = crate::stats::mean(&y) / m as f64;
        let chi = statrs::distribution::ChiSquared::new(config.nu).expect("nu > 0");
        let q = statrs::distribution::ContinuousCDF::inverse_cdf(&chi, 1.0 - config.q);
        Self {
            grid,
            trees: (0..m).map(|_| SampTree::new(n, start)).collect(),
            fits: vec![vec![start; n]; m],
            total: vec![start * m as f64; n],
            resid: vec![0.0; n],
            sigma2: sigma_hat * sigma_hat,
            sigma_mu: 0.5 / (config.k * (m as f64).sqrt()),
            nu: config.nu,
            lambda: sigma_hat * sigma_hat * q / config.nu,
            alpha: config.alpha,
            beta: config.beta,
            y,
        }
    }

    /// Log marginal likelihood of one leaf with leaf value integrated out
    /// (constants common to every configuration dropped).
    #[inline]
    fn leaf_loglik(&self, n: f64, s: f64) -> f64 {
        let s2 = self.sigma2;
        let t2 = self.sigma_mu * self.sigma_mu;
        -0.5 * (1.0 + n * t2 / s2).ln() + t2 * s * s / (2.0 * s2 * (s2 + n * t2))
    }

    /// Prior odds of splitting a leaf at `depth` into two leaves.
    fn log_split_prior(&self, depth: usize) -> f64 {
        let d = depth as f64;
        let child = 1.0 - self.alpha / (2.0 + d).powf(self.beta);
        self.alpha.ln() + 2.0 * child.ln() - ((1.0 + d).powf(self.beta) - self.alpha).ln()
    }

    pub fn step(&mut self, rng: &mut SimRng) {
        let n = self.y.len();
        for j in 0..self.trees.len() {
            for i in 0..n {
                self.resid[i] = self.y[i] - self.total[i] + self.fits[j][i];
            }
            let mut tree = std::mem::replace(&mut self.trees[j], SampTree::new(0, 0.0));
            let u: f64 = rng.random();
            if tree.is_stump() || u < P_GROW {
                self.grow(&mut tree, rng);
            } else if u < P_GROW + P_PRUNE {
                self.prune(&mut tree, rng);
            } else {
                self.change(&mut tree, rng);
            }
            self.draw_leaves(&mut tree, rng);
            for i in 0..n {
                let f = tree.nodes[tree.assign[i]].mu;
                self.total[i] += f - self.fits[j][i];
                self.fits[j][i] = f;
            }
            self.trees[j] = tree;
        }
        self.draw_sigma(rng);
    }

    fn pick_rule(
        &self,
        tree: &SampTree,
        node: usize,
        rng: &mut SimRng,
    ) -> Option<(usize, usize)> {
        let avail = tree.available(&self.grid, node);
        if avail.is_empty() {
            return None;
        }
        let (v, lo, hi) = avail[rng.random_range(0..avail.len())];
        Some((v, rng.random_range(lo..=hi)))
    }

    fn grow(&self, tree: &mut SampTree, rng: &mut SimRng) {
        let splittable: Vec<usize> = tree
            .leaves()
            .into_iter()
            .filter(|&l| !tree.available(&self.grid, l).is_empty())
            .collect();
        if splittable.is_empty() {
            return;
        }
        let leaf = splittable[rng.random_range(0..splittable.len())];
        let Some((var, cut)) = self.pick_rule(tree, leaf, rng) else {
            return;
        };
        let [(nl, sl), (nr, sr)] =
            tree.split_stats(&self.grid, &self.resid, &|a| a == leaf, var, cut);
        if nl == 0.0 || nr == 0.0 {
            return;
        }
        let parent = tree.nodes[leaf].parent;
        let parent_was_nog = parent != NONE && tree.is_nog(parent);
        let w2_after = tree.nogs().len() + 1 - usize::from(parent_was_nog);
        let p_grow = if tree.is_stump() { 1.0 } else { P_GROW };
        let depth = tree.nodes[leaf].depth;

        let log_ratio = (P_PRUNE / p_grow).ln() + (splittable.len() as f64 / w2_after as f64).ln()
            + self.leaf_loglik(nl, sl)
            + self.leaf_loglik(nr, sr)
            - self.leaf_loglik(nl + nr, sl + sr)
            + self.log_split_prior(depth);
        if rng.random::<f64>().ln() < log_ratio {
            let l = tree.alloc(Node::leaf(leaf, depth + 1));
            let r = tree.alloc(Node::leaf(leaf, depth + 1));
            let node = &mut tree.nodes[leaf];
            node.left = l;
            node.right = r;
            node.var = var;
            node.cut = cut;
            for i in 0..tree.assign.len() {
                if tree.assign[i] == leaf {
                    tree.assign[i] = if self.grid.goes_left(i, var, cut) { l } else { r };
                }
            }
        }
    }

    fn prune(&self, tree: &mut SampTree, rng: &mut SimRng) {
        let nogs = tree.nogs();
        if nogs.is_empty() {
            return;
        }
        let node = nogs[rng.random_range(0..nogs.len())];
        let (l, r, var, cut, depth) = {
            let n = &tree.nodes[node];
            (n.left, n.right, n.var, n.cut, n.depth)
        };
        let [(nl, sl), (nr, sr)] =
            tree.split_stats(&self.grid, &self.resid, &|a| a == l || a == r, var, cut);

        let mut pruned = tree.clone();
        pruned.nodes[node].left = NONE;
        pruned.nodes[node].right = NONE;
        let splittable_after = pruned.n_splittable(&self.grid);
        let p_grow_after = if pruned.is_stump() { 1.0 } else { P_GROW };

        let log_ratio = (p_grow_after / P_PRUNE).ln()
            + (nogs.len() as f64 / splittable_after as f64).ln()
            + self.leaf_loglik(nl + nr, sl + sr)
            - self.leaf_loglik(nl, sl)
            - self.leaf_loglik(nr, sr)
            - self.log_split_prior(depth);
        if rng.random::<f64>().ln() < log_ratio {
            tree.nodes[node].left = NONE;
            tree.nodes[node].right = NONE;
            tree.free.push(l);
            tree.free.push(r);
            for a in tree.assign.iter_mut() {
                if *a == l || *a == r {
                    *a = node;
                }
            }
        }
    }

    fn change(&self, tree: &mut SampTree, rng: &mut SimRng) {
        let nogs = tree.nogs();
        if nogs.is_empty() {
            return;
        }
        let node = nogs[rng.random_range(0..nogs.len())];
        let Some((var, cut)) = self.pick_rule(tree, node, rng) else {
            return;
        };
        let (l, r, old_var, old_cut) = {
            let n = &tree.nodes[node];
            (n.left, n.right, n.var, n.cut)
        };
        let members = |a: usize| a == l || a == r;
        let [(nl, sl), (nr, sr)] = tree.split_stats(&self.grid, &self.resid, &members, var, cut);
        if nl == 0.0 || nr == 0.0 {
            return;
        }
        let [(ol, osl), (or, osr)] =
            tree.split_stats(&self.grid, &self.resid, &members, old_var, old_cut);
        let log_ratio = self.leaf_loglik(nl, sl) + self.leaf_loglik(nr, sr)
            - self.leaf_loglik(ol, osl)
            - self.leaf_loglik(or, osr);
        if rng.random::<f64>().ln() < log_ratio {
            tree.nodes[node].var = var;
            tree.nodes[node].cut = cut;
            for i in 0..tree.assign.len() {
                if members(tree.assign[i]) {
                    tree.assign[i] = if self.grid.goes_left(i, var, cut) { l } else { r };
                }
            }
        }
    }

    fn draw_leaves(&self, tree: &mut SampTree, rng: &mut SimRng) {
        let mut acc: std::collections::HashMap<usize, (f64, f64)> = Default::default();
        for (i, r) in self.resid.iter().enumerate() {
            let e = acc.entry(tree.assign[i]).or_default();
            e.0 += 1.0;
            e.1 += r;
        }
        let t2 = self.sigma_mu * self.sigma_mu;
        for leaf in tree.leaves() {
            let (n, s) = acc.get(&leaf).copied().unwrap_or_default();
            let v = 1.0 / (1.0 / t2 + n / self.sigma2);
            let z: f64 = rng.sample(StandardNormal);
            tree.nodes[leaf].mu = v * s / self.sigma2 + v.sqrt() * z;
        }
    }

    fn draw_sigma(&mut self, rng: &mut SimRng) {
        let n = self.y.len() as f64;
        let ssr: f64 = self
            .y
            .iter()
            .zip(&self.total)
            .map(|(y, f)| (y - f) * (y - f))
            .sum();
        let chi = ChiSquared::new(self.nu + n).expect("positive degrees of freedom");
        let c: f64 = chi.sample(rng);
        self.sigma2 = ((self.nu * self.lambda + ssr) / c).max(f64::MIN_POSITIVE);
    }

    pub fn snapshot(&self) -> Vec<Tree> {
        self.trees.iter().map(|t| t.to_tree(&self.grid)).collect()
    }

    pub fn mean_depth(&self) -> f64 {
        self.trees.iter().map(|t| t.depth() as f64).sum::<f64>() / self.trees.len() as f64
    }

    /// Smallest number of training points in any leaf of any tree.
    #[cfg(test)]
    pub fn min_leaf_occupancy(&self) -> usize {
        self.trees
            .iter()
            .flat_map(|t| {
                t.leaves()
                    .into_iter()
                    .map(move |l| t.assign.iter().filter(|&&a| a == l).count())
            })
            .min()
            .unwrap_or(0)
    }

    /// Consistency of the cached assignments with a fresh traversal.
    #[cfg(test)]
    pub fn assignments_consistent(&self) -> bool {
        self.trees.iter().all(|t| {
            let mut fresh = t.clone();
            fresh.reassign(&self.grid);
            fresh.assign == t.assign
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn grid_cuts_are_strictly_inside_the_range() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 3.0]).collect();
        let g = Grid::new(&x, 100);
        assert_eq!(g.cuts[0].len(), 100);
        assert!(g.cuts[0].iter().all(|&c| c > 0.0 && c < 19.0));
        assert!(g.cuts[1].is_empty());
    }

    #[test]
    fn leaves_never_empty_and_assignments_stay_in_sync() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64 * 0.37).sin(), i as f64]).collect();
        let y: Vec<f64> = x.iter().map(|r| if r[0] > 0.0 { 0.4 } else { -0.4 }).collect();
        let cfg = BartConfig {
            m: 10,
            ..BartConfig::default()
        };
        let mut s = Sampler::new(Grid::new(&x, 100), y, &cfg, 0.3);
        let mut rng = rng_from_seed(4);
        for _ in 0..300 {
            s.step(&mut rng);
            assert!(s.min_leaf_occupancy() >= 1);
            assert!(s.assignments_consistent());
        }
    }

    #[test]
    fn split_prior_ratio_matches_direct_evaluation() {
        let x: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64]).collect();
        let cfg = BartConfig::default();
        let s = Sampler::new(Grid::new(&x, 100), vec![0.0; 12], &cfg, 0.1);
        for d in 0..4 {
            let ps = |d: usize| 0.95 * (1.0 + d as f64).powf(-2.0);
            let direct = ps(d) * (1.0 - ps(d + 1)).powi(2) / (1.0 - ps(d));
            assert!((s.log_split_prior(d) - direct.ln()).abs() < 1e-12);
        }
    }
}
