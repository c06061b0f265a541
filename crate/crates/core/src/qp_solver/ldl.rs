//! Envelope (skyline) LDL^T factorization of symmetric quasi-definite matrices
//! under a reverse Cuthill-McKee ordering.
//!
//! The KKT systems produced by time-indexed transcriptions are banded once
//! variables are ordered along the time axis; RCM recovers that ordering
//! without the transcription having to supply it.

use std::collections::VecDeque;

/// Reverse Cuthill-McKee permutation (`perm[new] = old`) of a symmetric pattern.
pub fn reverse_cuthill_mckee(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(i, j) in edges {
        if i != j {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    for a in adj.iter_mut() {
        a.sort_unstable();
        a.dedup();
    }
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&v| (degree[v], v));
    for &start in &by_degree {
        if visited[start] {
            continue;
        }
        let root = pseudo_peripheral(start, &adj, &degree);
        visited[root] = true;
        let mut queue = VecDeque::from([root]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (degree[w], w));
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

fn pseudo_peripheral(start: usize, adj: &[Vec<usize>], degree: &[usize]) -> usize {
    let mut root = start;
    let mut ecc = 0;
    for _ in 0..8 {
        let levels = bfs_levels(root, adj);
        let depth = *levels
            .iter()
            .filter_map(|l| *l)
            .collect::<Vec<_>>()
            .iter()
            .max()
            .unwrap_or(&0);
        if depth <= ecc && ecc > 0 {
            break;
        }
        ecc = depth;
        let candidate = levels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == Some(depth))
            .min_by_key(|(v, _)| (degree[*v], *v))
            .map(|(v, _)| v)
            .unwrap_or(root);
        if candidate == root {
            break;
        }
        root = candidate;
    }
    root
}

fn bfs_levels(root: usize, adj: &[Vec<usize>]) -> Vec<Option<usize>> {
    let mut level = vec![None; adj.len()];
    level[root] = Some(0);
    let mut queue = VecDeque::from([root]);
    while let Some(v) = queue.pop_front() {
        let l = level[v].unwrap();
        for &w in &adj[v] {
            if level[w].is_none() {
                level[w] = Some(l + 1);
                queue.push_back(w);
            }
        }
    }
    level
}

fn defer_negative(order: &[usize], pattern: &[(usize, usize)], signs: &[f64]) -> Vec<usize> {
    let n = order.len();
    let mut waiting_on = vec![0usize; n];
    let mut dependents: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut seen = std::collections::HashSet::new();
    for &(i, j) in pattern {
        if i == j || !seen.insert((i.min(j), i.max(j))) {
            continue;
        }
        for (dual, primal) in [(i, j), (j, i)] {
            if signs[dual] < 0.0 && signs[primal] > 0.0 {
                waiting_on[dual] += 1;
                dependents[primal].push(dual);
            }
        }
    }
    let mut out = Vec::with_capacity(n);
    let mut placed = vec![false; n];
    for &v in order {
        if signs[v] < 0.0 {
            if waiting_on[v] == 0 && !placed[v] {
                placed[v] = true;
                out.push(v);
            }
            continue;
        }
        placed[v] = true;
        out.push(v);
        for &d in &dependents[v] {
            waiting_on[d] -= 1;
            if waiting_on[d] == 0 && !placed[d] {
                placed[d] = true;
                out.push(d);
            }
        }
    }
    out
}

/// Symbolic envelope structure, reusable across numeric factorizations with the same pattern.
#[derive(Debug, Clone)]
pub struct Envelope {
    n: usize,
    /// `perm[new] = old`
    perm: Vec<usize>,
    /// `inv[old] = new`
    inv: Vec<usize>,
    /// first column of the envelope of each (permuted) row
    first: Vec<usize>,
    /// offset of each row's storage
    start: Vec<usize>,
}

impl Envelope {
    pub fn new(n: usize, pattern: &[(usize, usize)]) -> Self {
        Self::from_perm(n, pattern, reverse_cuthill_mckee(n, pattern))
    }

    /// RCM ordering in which every negative-sign (dual) index is moved after
    /// all of its positive-sign neighbours, so dual pivots are Schur
    /// complements rather than bare regularization.
    pub fn with_signs(n: usize, pattern: &[(usize, usize)], signs: &[f64]) -> Self {
        let rcm = reverse_cuthill_mckee(n, pattern);
        Self::from_perm(n, pattern, defer_negative(&rcm, pattern, signs))
    }

    fn from_perm(n: usize, pattern: &[(usize, usize)], perm: Vec<usize>) -> Self {
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for &(i, j) in pattern {
            let (a, b) = (inv[i], inv[j]);
            let (r, c) = if a >= b { (a, b) } else { (b, a) };
            first[r] = first[r].min(c);
        }
        let mut start = Vec::with_capacity(n + 1);
        let mut off = 0;
        for (i, &f) in first.iter().enumerate() {
            start.push(off);
            off += i - f + 1;
        }
        start.push(off);
        Envelope {
            n,
            perm,
            inv,
            first,
            start,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn storage(&self) -> usize {
        self.start[self.n]
    }

    /// Numeric LDL^T of the symmetric matrix given by lower-or-upper triplets
    /// (each off-diagonal pair given once or twice, consistently summed as a
    /// full symmetric matrix would be: pass only entries with `row >= col`).
    /// `signs[old]` is the expected pivot sign; tiny or wrong-signed pivots are
    /// replaced by `sign * floor`.
    pub fn factor(&self, lower: &[(usize, usize, f64)], signs: &[f64], floor: f64) -> LdlFactor {
        let mut l = vec![0.0; self.storage()];
        for &(i, j, v) in lower {
            let (a, b) = (self.inv[i], self.inv[j]);
            let (r, c) = if a >= b { (a, b) } else { (b, a) };
            l[self.start[r] + c - self.first[r]] += v;
        }
        let mut d = vec![0.0; self.n];
        let mut perturbed = 0;
        let mut w = vec![0.0; self.n];
        for i in 0..self.n {
            let fi = self.first[i];
            let row_i = self.start[i];
            for j in fi..i {
                let fj = self.first[j];
                let row_j = self.start[j];
                let k0 = fi.max(fj);
                let mut s = l[row_i + j - fi];
                for k in k0..j {
                    s -= w[k] * l[row_j + k - fj];
                }
                w[j] = s;
                l[row_i + j - fi] = s / d[j];
            }
            let mut dii = l[row_i + i - fi];
            for k in fi..i {
                dii -= w[k] * l[row_i + k - fi];
            }
            let sign = signs[self.perm[i]];
            if !(dii * sign > floor) {
                dii = sign * floor.max(dii.abs());
                perturbed += 1;
            }
            d[i] = dii;
            l[row_i + i - fi] = 1.0;
        }
        LdlFactor {
            env: self.clone(),
            l,
            d,
            perturbed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LdlFactor {
    env: Envelope,
    l: Vec<f64>,
    d: Vec<f64>,
    /// number of pivots replaced by the sign floor
    pub perturbed: usize,
}

impl LdlFactor {
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let e = &self.env;
        let n = e.n;
        let mut x: Vec<f64> = (0..n).map(|i| rhs[e.perm[i]]).collect();
        for i in 0..n {
            let fi = e.first[i];
            let row = e.start[i];
            let mut s = x[i];
            for k in fi..i {
                s -= self.l[row + k - fi] * x[k];
            }
            x[i] = s;
        }
        for i in 0..n {
            x[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            let fi = e.first[i];
            let row = e.start[i];
            let xi = x[i];
            for k in fi..i {
                x[k] -= self.l[row + k - fi] * xi;
            }
        }
        let mut out = vec![0.0; n];
        for i in 0..n {
            out[e.perm[i]] = x[i];
        }
        out
    }

    pub fn pivots(&self) -> &[f64] {
        &self.d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rcm_is_a_permutation() {
        let edges = vec![(0, 5), (5, 2), (2, 7), (7, 1), (3, 4)];
        let mut p = reverse_cuthill_mckee(8, &edges);
        p.sort_unstable();
        assert_eq!(p, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn dual_indices_follow_their_neighbours() {
        // primal 0..3, dual 3 couples 0 and 2, dual 4 couples 1
        let pattern = vec![(3, 0), (3, 2), (4, 1), (1, 0), (2, 1)];
        let signs = [1.0, 1.0, 1.0, -1.0, -1.0];
        let env = Envelope::with_signs(5, &pattern, &signs);
        let pos = |v: usize| env.inv[v];
        assert!(pos(3) > pos(0) && pos(3) > pos(2));
        assert!(pos(4) > pos(1));
    }

    #[test]
    fn solves_quasi_definite_system() {
        // [[4,1,1],[1,3,0],[1,0,-2]]
        let lower = vec![
            (0, 0, 4.0),
            (1, 0, 1.0),
            (1, 1, 3.0),
            (2, 0, 1.0),
            (2, 2, -2.0),
        ];
        let pattern: Vec<(usize, usize)> = lower.iter().map(|t| (t.0, t.1)).collect();
        let env = Envelope::new(3, &pattern);
        let f = env.factor(&lower, &[1.0, 1.0, -1.0], 1e-14);
        assert_eq!(f.perturbed, 0);
        let x = f.solve(&[6.0, 4.0, -1.0]);
        // exact solution: (1, 1, 1)
        for v in x {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }
}
