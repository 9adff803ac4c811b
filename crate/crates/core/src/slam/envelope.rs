//! Envelope (profile) storage and Cholesky factorisation for sparse SPD
//! systems, with reverse Cuthill–McKee ordering to keep the profile narrow.
//!
//! Fill-in of the Cholesky factor stays inside the row envelope, so the
//! factor overwrites the matrix in place.

use std::collections::VecDeque;

/// Lower triangle of a symmetric matrix stored row by row from the first
/// structurally non-zero column.
#[derive(Debug, Clone)]
pub struct EnvelopeMatrix {
    first: Vec<usize>,
    offset: Vec<usize>,
    data: Vec<f64>,
}

impl EnvelopeMatrix {
    /// `first[r] ≤ r` is the first stored column of row `r`.
    pub fn new(first: Vec<usize>) -> Self {
        let mut offset = Vec::with_capacity(first.len() + 1);
        let mut acc = 0;
        for (r, &f) in first.iter().enumerate() {
            assert!(f <= r, "row {r} starts after the diagonal");
            offset.push(acc);
            acc += r - f + 1;
        }
        offset.push(acc);
        Self {
            first,
            offset,
            data: vec![0.0; acc],
        }
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    pub fn stored(&self) -> usize {
        self.data.len()
    }

    fn at(&self, r: usize, c: usize) -> usize {
        debug_assert!(c <= r && c >= self.first[r], "({r},{c}) outside the envelope");
        self.offset[r] + c - self.first[r]
    }

    /// Adds `v` at `(r, c)`, `c ≤ r`.
    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        assert!(c <= r && c >= self.first[r], "({r},{c}) outside the envelope");
        let k = self.at(r, c);
        self.data[k] += v;
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (r, c) = if c > r { (c, r) } else { (r, c) };
        if c < self.first[r] {
            0.0
        } else {
            self.data[self.at(r, c)]
        }
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.data[self.offset[r]..self.offset[r + 1]]
    }

    /// In-place Cholesky `A = L Lᵀ`. Returns the failing pivot row if the
    /// matrix is not numerically positive definite.
    pub fn factor(&mut self) -> Result<(), usize> {
        let n = self.dim();
        for i in 0..n {
            let fi = self.first[i];
            for j in fi..=i {
                let fj = self.first[j];
                let k0 = fi.max(fj);
                let oi = self.offset[i];
                let oj = self.offset[j];
                let ri = &self.data[oi + k0 - fi..oi + j - fi];
                let rj = &self.data[oj + k0 - fj..oj + j - fj];
                let dot: f64 = ri.iter().zip(rj).map(|(a, b)| a * b).sum();
                let idx = oi + j - fi;
                let s = self.data[idx] - dot;
                if j < i {
                    let djj = self.data[oj + j - fj];
                    self.data[idx] = s / djj;
                } else {
                    if !(s > 0.0 && s.is_finite()) {
                        return Err(i);
                    }
                    self.data[idx] = s.sqrt();
                }
            }
        }
        Ok(())
    }

    /// Solves `L Lᵀ x = b` with a factored matrix.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut y = b.to_vec();
        for i in 0..n {
            let fi = self.first[i];
            let row = self.row(i);
            let s: f64 = row[..i - fi].iter().zip(&y[fi..i]).map(|(l, v)| l * v).sum();
            y[i] = (y[i] - s) / row[i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = self.row(i);
            y[i] /= row[i - fi];
            let xi = y[i];
            for (k, l) in (fi..i).zip(row) {
                y[k] -= l * xi;
            }
        }
        y
    }
}

/// Reverse Cuthill–McKee ordering of an undirected graph given as adjacency
/// lists. Returns `order[k] = vertex`. Every component is ordered in turn.
pub fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let deg: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        let start = pseudo_peripheral(adj, &deg, seed);
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nb: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            nb.sort_by_key(|&w| (deg[w], w));
            nb.dedup();
            for w in nb {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

fn bfs_levels(adj: &[Vec<usize>], start: usize) -> (usize, Vec<usize>) {
    let mut dist = vec![usize::MAX; adj.len()];
    dist[start] = 0;
    let mut queue = VecDeque::from([start]);
    let mut last = vec![start];
    let mut depth = 0;
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                if dist[w] > depth {
                    depth = dist[w];
                    last.clear();
                }
                if dist[w] == depth {
                    last.push(w);
                }
                queue.push_back(w);
            }
        }
    }
    (depth, last)
}

fn pseudo_peripheral(adj: &[Vec<usize>], deg: &[usize], seed: usize) -> usize {
    let mut v = seed;
    let (mut ecc, mut last) = bfs_levels(adj, v);
    for _ in 0..8 {
        let cand = *last
            .iter()
            .min_by_key(|&&w| (deg[w], w))
            .expect("level set is non-empty");
        let (e, l) = bfs_levels(adj, cand);
        if e <= ecc {
            break;
        }
        v = cand;
        ecc = e;
        last = l;
    }
    v
}
