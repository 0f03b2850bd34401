use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::SparseMatrix;

/// Minimum-degree fill-reducing ordering of the symmetric pattern of `a`.
///
/// Eliminates the vertex of least current degree in the explicit elimination
/// graph, ties broken by the smaller index. Returns `perm` with `perm[k]` the
/// original index of the k-th pivot.
pub fn minimum_degree(a: &SparseMatrix) -> Vec<usize> {
    let n = a.rows();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        let (c, _) = a.row(i);
        for &j in c {
            if j != i && j < n {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    for v in adj.iter_mut() {
        v.sort_unstable();
        v.dedup();
    }

    let mut eliminated = vec![false; n];
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> = (0..n).map(|i| Reverse((adj[i].len(), i))).collect();
    let mut perm = Vec::with_capacity(n);
    let mut merged: Vec<usize> = Vec::new();

    while let Some(Reverse((deg, v))) = heap.pop() {
        if eliminated[v] || deg != adj[v].len() {
            continue;
        }
        eliminated[v] = true;
        perm.push(v);
        let nbrs = std::mem::take(&mut adj[v]);
        for &u in &nbrs {
            // u's new neighbourhood: (adj[u] ∪ nbrs) \ {u, v}
            merged.clear();
            let (a_u, b) = (&adj[u], &nbrs);
            let (mut p, mut q) = (0, 0);
            while p < a_u.len() || q < b.len() {
                let x = a_u.get(p).copied().unwrap_or(usize::MAX);
                let y = b.get(q).copied().unwrap_or(usize::MAX);
                let next = if x == y {
                    p += 1;
                    q += 1;
                    x
                } else if x < y {
                    p += 1;
                    x
                } else {
                    q += 1;
                    y
                };
                if next != u && next != v {
                    merged.push(next);
                }
            }
            std::mem::swap(&mut adj[u], &mut merged);
            heap.push(Reverse((adj[u].len(), u)));
        }
    }
    perm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn returns_a_permutation() {
        let mut trip = Vec::new();
        for i in 0..30 {
            trip.push((i, i, 4.0));
            if i + 1 < 30 {
                trip.push((i, i + 1, -1.0));
                trip.push((i + 1, i, -1.0));
            }
            if i + 7 < 30 {
                trip.push((i, i + 7, -1.0));
                trip.push((i + 7, i, -1.0));
            }
        }
        let a = SparseMatrix::from_triplets(&trip, (30, 30)).unwrap();
        let mut p = minimum_degree(&a);
        p.sort_unstable();
        assert_eq!(p, (0..30).collect::<Vec<_>>());
    }

    #[test]
    fn arrow_matrix_puts_hub_last() {
        // Star graph: eliminating the hub first would fill everything.
        let n = 8;
        let mut trip = vec![(0, 0, 10.0)];
        for i in 1..n {
            trip.push((i, i, 2.0));
            trip.push((0, i, 1.0));
            trip.push((i, 0, 1.0));
        }
        let a = SparseMatrix::from_triplets(&trip, (n, n)).unwrap();
        let p = minimum_degree(&a);
        assert!(p[n - 2..].contains(&0));
    }
}
