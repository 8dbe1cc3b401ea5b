//! Hierarchical density clustering over a precomputed distance matrix:
//! core distances, mutual reachability, minimum spanning tree, single-linkage
//! merge tree, condensed tree and excess-of-mass cluster selection.

/// Smallest distance used when converting to λ = 1/d.
const MIN_DISTANCE: f64 = 1e-12;

/// Symmetric n×n distance matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let d = f(i, j);
                values[i * n + j] = d;
                values[j * n + i] = d;
            }
        }
        Self { n, values }
    }

    /// Builds from the upper triangle in row order (i < j).
    pub fn from_upper(n: usize, upper: &[f64]) -> Self {
        let mut it = upper.iter();
        Self::from_fn(n, |_, _| *it.next().expect("upper triangle too short"))
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Merge {
    left: usize,
    right: usize,
    distance: f64,
    size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CondensedEdge {
    pub parent: usize,
    /// Point index when `< n`, cluster label otherwise.
    pub child: usize,
    pub lambda: f64,
    pub size: usize,
}

/// Cluster label per point; `None` is noise.
pub fn cluster(dist: &DistanceMatrix, min_cluster_size: usize) -> Vec<Option<usize>> {
    let n = dist.len();
    if n == 0 {
        return Vec::new();
    }
    if n < min_cluster_size || n == 1 {
        return vec![None; n];
    }
    let core = core_distances(dist, min_cluster_size);
    let mst = prim_mst(dist, &core);
    let merges = single_linkage(n, mst);
    let tree = condense(n, &merges, min_cluster_size);
    select_clusters(n, &tree)
}

/// Distance to the k-th closest point, counting the point itself.
fn core_distances(dist: &DistanceMatrix, k: usize) -> Vec<f64> {
    let n = dist.len();
    (0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n).map(|j| dist.get(i, j)).collect();
            row.sort_by(f64::total_cmp);
            row[k.clamp(1, n) - 1]
        })
        .collect()
}

fn prim_mst(dist: &DistanceMatrix, core: &[f64]) -> Vec<(usize, usize, f64)> {
    let n = dist.len();
    let reach = |i: usize, j: usize| dist.get(i, j).max(core[i]).max(core[j]);
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut from = vec![0usize; n];
    let mut edges = Vec::with_capacity(n - 1);
    let mut current = 0;
    in_tree[0] = true;
    for _ in 1..n {
        for j in 0..n {
            if !in_tree[j] {
                let d = reach(current, j);
                if d < best[j] {
                    best[j] = d;
                    from[j] = current;
                }
            }
        }
        let next = (0..n)
            .filter(|&j| !in_tree[j])
            .min_by(|&a, &b| best[a].total_cmp(&best[b]).then(a.cmp(&b)))
            .unwrap();
        in_tree[next] = true;
        edges.push((from[next].min(next), from[next].max(next), best[next]));
        current = next;
    }
    edges
}

fn single_linkage(n: usize, mut edges: Vec<(usize, usize, f64)>) -> Vec<Merge> {
    edges.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut parent: Vec<usize> = (0..2 * n - 1).collect();
    let mut size = vec![1usize; 2 * n - 1];
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut merges = Vec::with_capacity(n - 1);
    for (a, b, d) in edges {
        let ra = find(&mut parent, a);
        let rb = find(&mut parent, b);
        let id = n + merges.len();
        parent[ra] = id;
        parent[rb] = id;
        size[id] = size[ra] + size[rb];
        merges.push(Merge {
            left: ra.min(rb),
            right: ra.max(rb),
            distance: d,
            size: size[id],
        });
    }
    merges
}

fn lambda_of(distance: f64) -> f64 {
    1.0 / distance.max(MIN_DISTANCE)
}

fn condense(n: usize, merges: &[Merge], min_size: usize) -> Vec<CondensedEdge> {
    let root = 2 * n - 2;
    let node_size = |x: usize| if x < n { 1 } else { merges[x - n].size };
    let leaves = |x: usize| -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![x];
        while let Some(y) = stack.pop() {
            if y < n {
                out.push(y);
            } else {
                stack.push(merges[y - n].right);
                stack.push(merges[y - n].left);
            }
        }
        out
    };

    let mut label = vec![usize::MAX; 2 * n - 1];
    let mut next_label = n;
    label[root] = next_label;
    next_label += 1;
    let mut out = Vec::new();
    let mut queue = std::collections::VecDeque::from([root]);
    while let Some(node) = queue.pop_front() {
        if node < n {
            continue;
        }
        let Merge {
            left,
            right,
            distance,
            ..
        } = merges[node - n];
        let lam = lambda_of(distance);
        let parent = label[node];
        let (ls, rs) = (node_size(left), node_size(right));
        match (ls >= min_size, rs >= min_size) {
            (true, true) => {
                for (child, size) in [(left, ls), (right, rs)] {
                    label[child] = next_label;
                    next_label += 1;
                    out.push(CondensedEdge {
                        parent,
                        child: label[child],
                        lambda: lam,
                        size,
                    });
                    queue.push_back(child);
                }
            }
            (false, false) => {
                for child in [left, right] {
                    for p in leaves(child) {
                        out.push(CondensedEdge {
                            parent,
                            child: p,
                            lambda: lam,
                            size: 1,
                        });
                    }
                }
            }
            (true, false) | (false, true) => {
                let (big, small) = if ls >= min_size {
                    (left, right)
                } else {
                    (right, left)
                };
                label[big] = parent;
                queue.push_back(big);
                for p in leaves(small) {
                    out.push(CondensedEdge {
                        parent,
                        child: p,
                        lambda: lam,
                        size: 1,
                    });
                }
            }
        }
    }
    out
}

fn select_clusters(n: usize, tree: &[CondensedEdge]) -> Vec<Option<usize>> {
    let n_clusters = tree
        .iter()
        .map(|e| e.parent.max(e.child))
        .max()
        .unwrap_or(n)
        + 1
        - n;
    let root = n;
    let mut birth = vec![0.0; n_clusters];
    let mut stability = vec![0.0; n_clusters];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
    let mut cluster_parent = vec![None; n_clusters];
    for e in tree {
        if e.child >= n {
            birth[e.child - n] = e.lambda;
            children[e.parent - n].push(e.child);
            cluster_parent[e.child - n] = Some(e.parent);
        }
    }
    for e in tree {
        stability[e.parent - n] += (e.lambda - birth[e.parent - n]) * e.size as f64;
    }

    // The root competes only when it never splits into two dense children.
    let root_eligible = children[0].is_empty();
    let mut selected = vec![true; n_clusters];
    selected[0] = root_eligible;
    for c in (n..n + n_clusters).rev() {
        if c == root && !root_eligible {
            continue;
        }
        let idx = c - n;
        let sub: f64 = children[idx].iter().map(|&ch| stability[ch - n]).sum();
        if !children[idx].is_empty() && sub > stability[idx] {
            selected[idx] = false;
            stability[idx] = sub;
        } else {
            let mut stack = children[idx].clone();
            while let Some(d) = stack.pop() {
                selected[d - n] = false;
                stack.extend(children[d - n].iter().copied());
            }
        }
    }

    let chosen: Vec<usize> = (0..n_clusters).filter(|&i| selected[i]).collect();
    let mut point_parent = vec![root; n];
    for e in tree {
        if e.child < n {
            point_parent[e.child] = e.parent;
        }
    }
    (0..n)
        .map(|p| {
            let mut c = Some(point_parent[p]);
            while let Some(cl) = c {
                if selected[cl - n] {
                    return chosen.iter().position(|&i| i == cl - n);
                }
                c = cluster_parent[cl - n];
            }
            None
        })
        .collect()
}
