//! Device coupling graphs with an all-pairs shortest-path table.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// An undirected connectivity graph. Two-qubit gates are permitted only on
/// its edges; the distance table drives SWAP routing heuristics.
#[derive(Debug, Clone)]
pub struct CouplingGraph {
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
    dist: Vec<Vec<usize>>,
}

impl CouplingGraph {
    /// Build from an undirected edge list. Duplicate edges (in either
    /// orientation) and self-loops are rejected, and the graph must be
    /// connected.
    pub fn new(n_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n_nodes == 0 {
            return Err(Error::InvalidInput(
                "graph must have at least one node".into(),
            ));
        }
        let mut adjacency = vec![Vec::new(); n_nodes];
        let mut canon: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a >= n_nodes || b >= n_nodes {
                return Err(Error::QubitOutOfRange {
                    index: a.max(b),
                    width: n_nodes,
                });
            }
            if a == b {
                return Err(Error::InvalidInput(format!("self-loop on node {a}")));
            }
            let e = (a.min(b), a.max(b));
            if canon.contains(&e) {
                return Err(Error::InvalidInput(format!("duplicate edge {e:?}")));
            }
            canon.push(e);
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
        }
        let dist = all_pairs_bfs(n_nodes, &adjacency)?;
        Ok(CouplingGraph {
            n_nodes,
            edges: canon,
            adjacency,
            dist,
        })
    }

    /// A path graph 0-1-...-(n-1).
    pub fn line(n: usize) -> Self {
        let edges: Vec<_> = (0..n.saturating_sub(1)).map(|i| (i, i + 1)).collect();
        CouplingGraph::new(n, &edges).unwrap()
    }

    /// A rows x cols rectangular grid, nodes numbered row-major.
    pub fn grid(rows: usize, cols: usize) -> Self {
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let v = r * cols + c;
                if c + 1 < cols {
                    edges.push((v, v + 1));
                }
                if r + 1 < rows {
                    edges.push((v, v + cols));
                }
            }
        }
        CouplingGraph::new(rows * cols, &edges).unwrap()
    }

    /// Parse an edge-list file: one `i j` pair per line, `//` comments.
    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut edges = Vec::new();
        let mut max_node = 0usize;
        for line in text.lines() {
            let line = line.split("//").next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let a: usize = it
                .next()
                .unwrap()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad edge line `{line}`")))?;
            let b: usize = it
                .next()
                .ok_or_else(|| Error::InvalidInput(format!("bad edge line `{line}`")))?
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad edge line `{line}`")))?;
            max_node = max_node.max(a).max(b);
            edges.push((a, b));
        }
        if edges.is_empty() {
            return Err(Error::InvalidInput("edge list is empty".into()));
        }
        CouplingGraph::new(max_node + 1, &edges)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].binary_search(&b).is_ok()
    }

    /// Shortest-path distance in hops.
    pub fn distance(&self, a: usize, b: usize) -> usize {
        self.dist[a][b]
    }

    /// One shortest path from `a` to `b`, inclusive of both endpoints.
    pub fn shortest_path(&self, a: usize, b: usize) -> Vec<usize> {
        let mut path = vec![a];
        let mut cur = a;
        while cur != b {
            // move to the lowest-numbered neighbor that gets closer
            let next = *self.adjacency[cur]
                .iter()
                .find(|&&nb| self.dist[nb][b] + 1 == self.dist[cur][b])
                .expect("graph is connected");
            path.push(next);
            cur = next;
        }
        path
    }
}

fn all_pairs_bfs(n: usize, adjacency: &[Vec<usize>]) -> Result<Vec<Vec<usize>>> {
    let mut dist = vec![vec![usize::MAX; n]; n];
    for start in 0..n {
        let row = &mut dist[start];
        row[start] = 0;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            for &nb in &adjacency[v] {
                if row[nb] == usize::MAX {
                    row[nb] = row[v] + 1;
                    queue.push_back(nb);
                }
            }
        }
        if n > 1 && row.contains(&usize::MAX) {
            return Err(Error::InvalidInput(
                "coupling graph is not connected".into(),
            ));
        }
    }
    Ok(dist)
}
