//! Hierarchical density clustering over mutual-reachability distance with
//! excess-of-mass cluster selection.
//!
//! Core distance is the distance to the `min_samples`-th nearest point,
//! counting the point itself. The minimum spanning tree is built with Prim's
//! algorithm, condensed at `min_cluster_size`, and stable clusters are chosen
//! bottom-up. Every step is sequential or index-ordered, so results depend
//! only on input order.

use std::collections::VecDeque;

use rayon::prelude::*;

use super::NOISE;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DensityParams {
    pub min_cluster_size: usize,
    pub min_samples: Option<usize>,
    /// Allow the root to be selected as the only cluster.
    pub allow_single_cluster: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityResult {
    /// Cluster id per point, or `NOISE`. Ids are ordered by smallest member.
    pub labels: Vec<i32>,
    /// Membership strength in `[0, 1]`; for noise points, strength toward
    /// `best_cluster`.
    pub probabilities: Vec<f64>,
    /// Own cluster for members; most plausible cluster for noise.
    pub best_cluster: Vec<Option<usize>>,
    pub n_clusters: usize,
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn lambda_of(dist: f64) -> f64 {
    if dist > 0.0 {
        1.0 / dist
    } else {
        f64::INFINITY
    }
}

/// `min(lambda, max) / max`, or 1 when the cluster is infinitely dense or
/// the point itself sits at infinite density.
fn strength(lambda: f64, max_lambda: f64) -> f64 {
    if max_lambda == 0.0 || lambda.is_infinite() {
        1.0
    } else if max_lambda.is_infinite() {
        0.0
    } else {
        lambda.min(max_lambda) / max_lambda
    }
}

/// Internal node of the single-linkage dendrogram.
struct Merge {
    left: usize,
    right: usize,
    dist: f64,
    size: usize,
}

struct Dendrogram {
    n: usize,
    merges: Vec<Merge>,
}

impl Dendrogram {
    fn size(&self, node: usize) -> usize {
        if node < self.n {
            1
        } else {
            self.merges[node - self.n].size
        }
    }

    fn leaves(&self, node: usize, out: &mut Vec<usize>) {
        let mut stack = vec![node];
        while let Some(x) = stack.pop() {
            if x < self.n {
                out.push(x);
            } else {
                let m = &self.merges[x - self.n];
                stack.push(m.right);
                stack.push(m.left);
            }
        }
    }
}

struct CondensedRow {
    parent: usize,
    child: usize,
    lambda: f64,
    size: usize,
}

fn core_distances(points: &[Vec<f64>], min_samples: usize) -> Vec<f64> {
    let kth = min_samples.min(points.len()) - 1;
    points
        .par_iter()
        .map(|p| {
            let mut d: Vec<f64> = points.iter().map(|q| euclid(p, q)).collect();
            let (_, v, _) = d.select_nth_unstable_by(kth, f64::total_cmp);
            *v
        })
        .collect()
}

fn mutual_reach(points: &[Vec<f64>], core: &[f64], i: usize, j: usize) -> f64 {
    euclid(&points[i], &points[j]).max(core[i]).max(core[j])
}

fn spanning_tree(points: &[Vec<f64>], core: &[f64]) -> Vec<(usize, usize, f64)> {
    let n = points.len();
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut from = vec![0usize; n];
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    let mut current = 0;
    in_tree[0] = true;
    for _ in 1..n {
        let mut next = usize::MAX;
        let mut next_w = f64::INFINITY;
        for j in 0..n {
            if in_tree[j] {
                continue;
            }
            let w = mutual_reach(points, core, current, j);
            if w < best[j] {
                best[j] = w;
                from[j] = current;
            }
            if next == usize::MAX || best[j] < next_w {
                next = j;
                next_w = best[j];
            }
        }
        in_tree[next] = true;
        edges.push((from[next], next, next_w));
        current = next;
    }
    edges.sort_by(|a, b| a.2.total_cmp(&b.2));
    edges
}

fn single_linkage(n: usize, edges: &[(usize, usize, f64)]) -> Dendrogram {
    let mut parent: Vec<usize> = (0..2 * n - 1).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut merges = Vec::with_capacity(n - 1);
    for &(a, b, w) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        let node = n + merges.len();
        let size = |x: usize, merges: &[Merge]| if x < n { 1 } else { merges[x - n].size };
        let s = size(ra, &merges) + size(rb, &merges);
        parent[ra] = node;
        parent[rb] = node;
        merges.push(Merge {
            left: ra,
            right: rb,
            dist: w,
            size: s,
        });
    }
    Dendrogram { n, merges }
}

/// Returns rows and the number of cluster labels (labels run `n..n+count`).
fn condense(tree: &Dendrogram, mcs: usize) -> (Vec<CondensedRow>, usize) {
    let n = tree.n;
    let root = 2 * n - 2;
    let mut label = vec![0usize; 2 * n - 1];
    label[root] = n;
    let mut next_label = n + 1;
    let mut rows = Vec::new();
    let mut queue = VecDeque::from([root]);
    let mut buf = Vec::new();
    while let Some(node) = queue.pop_front() {
        if node < n {
            continue;
        }
        let m = &tree.merges[node - n];
        let lambda = lambda_of(m.dist);
        let (lc, rc) = (tree.size(m.left), tree.size(m.right));
        let me = label[node];
        let mut fall_out = |child: usize, rows: &mut Vec<CondensedRow>| {
            buf.clear();
            tree.leaves(child, &mut buf);
            for &leaf in &buf {
                rows.push(CondensedRow {
                    parent: me,
                    child: leaf,
                    lambda,
                    size: 1,
                });
            }
        };
        match (lc >= mcs, rc >= mcs) {
            (true, true) => {
                for (child, size) in [(m.left, lc), (m.right, rc)] {
                    label[child] = next_label;
                    next_label += 1;
                    rows.push(CondensedRow {
                        parent: me,
                        child: label[child],
                        lambda,
                        size,
                    });
                    queue.push_back(child);
                }
            }
            (false, false) => {
                fall_out(m.left, &mut rows);
                fall_out(m.right, &mut rows);
            }
            (false, true) => {
                fall_out(m.left, &mut rows);
                label[m.right] = me;
                queue.push_back(m.right);
            }
            (true, false) => {
                fall_out(m.right, &mut rows);
                label[m.left] = me;
                queue.push_back(m.left);
            }
        }
    }
    (rows, next_label - n)
}

fn gain(lambda: f64, birth: f64) -> f64 {
    if lambda == birth {
        0.0
    } else {
        lambda - birth
    }
}

pub fn density_cluster(points: &[Vec<f64>], params: &DensityParams) -> Result<DensityResult> {
    let n = points.len();
    let mcs = params.min_cluster_size;
    if mcs < 2 {
        return Err(Error::Config("min_cluster_size must be at least 2".into()));
    }
    let min_samples = params.min_samples.unwrap_or(mcs);
    if min_samples == 0 {
        return Err(Error::Config("min_samples must be positive".into()));
    }
    if let Some(p) = points.iter().find(|p| p.len() != points[0].len()) {
        return Err(Error::Shape {
            expected: points[0].len(),
            found: p.len(),
        });
    }
    if n < 2 {
        return Ok(DensityResult {
            labels: vec![NOISE; n],
            probabilities: vec![0.0; n],
            best_cluster: vec![None; n],
            n_clusters: 0,
        });
    }

    let core = core_distances(points, min_samples);
    let edges = spanning_tree(points, &core);
    let tree = single_linkage(n, &edges);
    let (rows, n_labels) = condense(&tree, mcs);

    // Cluster-local bookkeeping, indexed by `label - n`.
    let mut birth = vec![0.0f64; n_labels];
    let mut up = vec![usize::MAX; n_labels];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n_labels];
    let mut point_parent = vec![0usize; n];
    let mut point_lambda = vec![0.0f64; n];
    for r in &rows {
        if r.child >= n {
            birth[r.child - n] = r.lambda;
            up[r.child - n] = r.parent - n;
            children[r.parent - n].push(r.child - n);
        } else {
            point_parent[r.child] = r.parent - n;
            point_lambda[r.child] = r.lambda;
        }
    }
    let mut stability = vec![0.0f64; n_labels];
    let mut root_max_lambda = 0.0f64;
    for r in &rows {
        let p = r.parent - n;
        stability[p] += gain(r.lambda, birth[p]) * r.size as f64;
        if p == 0 {
            root_max_lambda = root_max_lambda.max(r.lambda);
        }
    }

    // Excess of mass, bottom-up. Labels are created parent-first, so
    // descending order visits children before parents.
    let root_eligible = n >= mcs && (params.allow_single_cluster || stability[0].is_infinite());
    let mut selected = vec![true; n_labels];
    if !root_eligible {
        selected[0] = false;
    }
    let own_stability = stability.clone();
    let first = if root_eligible { 0 } else { 1 };
    for c in (first..n_labels).rev() {
        let subtree: f64 = children[c].iter().map(|&k| stability[k]).sum();
        if subtree > stability[c] {
            selected[c] = false;
            stability[c] = subtree;
        } else {
            let mut stack = children[c].clone();
            while let Some(k) = stack.pop() {
                selected[k] = false;
                stack.extend(children[k].iter().copied());
            }
        }
    }

    // A cluster that dissolves where it forms carries no excess mass.
    for (sel, own) in selected.iter_mut().zip(&own_stability) {
        *sel &= *own > 0.0;
    }

    let mut raw_label = vec![usize::MAX; n];
    for (i, raw) in raw_label.iter_mut().enumerate() {
        let mut c = point_parent[i];
        loop {
            if selected[c] {
                if c != 0 || point_lambda[i] >= root_max_lambda {
                    *raw = c;
                }
                break;
            }
            if up[c] == usize::MAX {
                break;
            }
            c = up[c];
        }
    }

    // Renumber by smallest member index.
    let mut remap = vec![usize::MAX; n_labels];
    let mut n_clusters = 0;
    for &raw in &raw_label {
        if raw != usize::MAX && remap[raw] == usize::MAX {
            remap[raw] = n_clusters;
            n_clusters += 1;
        }
    }
    let labels: Vec<i32> = raw_label
        .iter()
        .map(|&r| if r == usize::MAX { NOISE } else { remap[r] as i32 })
        .collect();

    let mut max_lambda = vec![0.0f64; n_clusters];
    for i in 0..n {
        if labels[i] >= 0 {
            let m = &mut max_lambda[labels[i] as usize];
            *m = m.max(point_lambda[i]);
        }
    }
    let mut probabilities = vec![0.0; n];
    let mut best_cluster = vec![None; n];
    let members: Vec<usize> = (0..n).filter(|&i| labels[i] >= 0).collect();
    for i in 0..n {
        if labels[i] >= 0 {
            let c = labels[i] as usize;
            probabilities[i] = strength(point_lambda[i], max_lambda[c]);
            best_cluster[i] = Some(c);
        }
    }
    let noise: Vec<usize> = (0..n).filter(|&i| labels[i] < 0).collect();
    let soft: Vec<(usize, usize, f64)> = noise
        .par_iter()
        .filter_map(|&i| {
            let (q, d) = members
                .iter()
                .map(|&q| (q, mutual_reach(points, &core, i, q)))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))?;
            let c = labels[q] as usize;
            let lambda = lambda_of(d).min(point_lambda[q]);
            Some((i, c, strength(lambda, max_lambda[c])))
        })
        .collect();
    for (i, c, s) in soft {
        best_cluster[i] = Some(c);
        probabilities[i] = s;
    }

    Ok(DensityResult {
        labels,
        probabilities,
        best_cluster,
        n_clusters,
    })
}
