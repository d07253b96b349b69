use std::collections::BTreeSet;

use super::{SolverError, SparseSpd};

/// Column ordering applied before symbolic analysis. A permutation lists the
/// original column placed at each new position.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Ordering {
    Natural,
    #[default]
    MinimumDegree,
    Given(Vec<usize>),
}

impl Ordering {
    pub(crate) fn permutation(&self, a: &SparseSpd) -> Result<Vec<usize>, SolverError> {
        let n = a.order();
        match self {
            Ordering::Natural => Ok((0..n).collect()),
            Ordering::MinimumDegree => Ok(minimum_degree(a)),
            Ordering::Given(p) => {
                let mut seen = vec![false; n];
                if p.len() != n || !p.iter().all(|&i| i < n && !std::mem::replace(&mut seen[i], true)) {
                    return Err(SolverError::BadPermutation(n));
                }
                Ok(p.clone())
            }
        }
    }
}

/// Minimum-degree ordering on the explicit elimination graph.
///
/// Each step eliminates a vertex of smallest current degree (ties broken by
/// the lower index) and turns its neighbourhood into a clique. Power-network
/// gain matrices stay very sparse under this rule, so the explicit graph is
/// cheap enough.
pub fn minimum_degree(a: &SparseSpd) -> Vec<usize> {
    let n = a.order();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for c in 0..n {
        let (rows, _) = a.column(c);
        for &r in rows {
            if r != c {
                adj[r].push(c);
                adj[c].push(r);
            }
        }
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    let mut queue: BTreeSet<(usize, usize)> = (0..n).map(|v| (adj[v].len(), v)).collect();
    let mut order = Vec::with_capacity(n);
    let mut merged = Vec::new();
    while let Some((_, v)) = queue.pop_first() {
        order.push(v);
        let nbrs = std::mem::take(&mut adj[v]);
        for &u in &nbrs {
            queue.remove(&(adj[u].len(), u));
            // adj[u] := (adj[u] ∪ nbrs) \ {u, v}, both sides sorted
            merged.clear();
            let (x, y) = (&adj[u], &nbrs);
            let (mut i, mut j) = (0, 0);
            while i < x.len() || j < y.len() {
                let next = match (x.get(i), y.get(j)) {
                    (Some(&p), Some(&q)) if p == q => {
                        i += 1;
                        j += 1;
                        p
                    }
                    (Some(&p), Some(&q)) if p < q => {
                        i += 1;
                        p
                    }
                    (Some(&p), None) => {
                        i += 1;
                        p
                    }
                    (_, Some(&q)) => {
                        j += 1;
                        q
                    }
                    (None, None) => unreachable!(),
                };
                if next != u && next != v {
                    merged.push(next);
                }
            }
            std::mem::swap(&mut adj[u], &mut merged);
            queue.insert((adj[u].len(), u));
        }
    }
    order
}
