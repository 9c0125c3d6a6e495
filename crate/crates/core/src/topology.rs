//! Server graph, client-to-server map and client-to-cluster map.

use std::collections::{BTreeSet, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One simulated federation layout. Server and client ids are dense from 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub num_servers: usize,
    /// Undirected edges stored as `(a, b)` with `a < b`, sorted ascending.
    pub edges: Vec<(usize, usize)>,
    pub client_server: Vec<usize>,
    pub client_cluster: Vec<usize>,
    pub num_clusters: usize,
}

impl Topology {
    /// Assembles a topology and checks every structural invariant.
    pub fn new(
        num_servers: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        client_server: Vec<usize>,
        client_cluster: Vec<usize>,
        num_clusters: usize,
    ) -> Result<Self> {
        let edges: BTreeSet<(usize, usize)> =
            edges.into_iter().map(|(a, b)| (a.min(b), a.max(b))).collect();
        let topology = Self {
            num_servers,
            edges: edges.into_iter().collect(),
            client_server,
            client_cluster,
            num_clusters,
        };
        topology.validate()?;
        Ok(topology)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_servers == 0 {
            return Err(Error::Config("topology needs at least one server".into()));
        }
        if self.num_clusters == 0 {
            return Err(Error::Config("number of clusters Q must be at least 1".into()));
        }
        for &(a, b) in &self.edges {
            if a == b {
                return Err(Error::Config(format!("self-loop on server {a}")));
            }
            if a >= self.num_servers || b >= self.num_servers {
                return Err(Error::Config(format!("edge ({a}, {b}) references an unknown server")));
            }
        }
        if !is_connected(self.num_servers, &self.edges) {
            return Err(Error::Config("server graph is not connected".into()));
        }
        if self.client_server.len() != self.client_cluster.len() {
            return Err(Error::Config("client server and cluster maps differ in length".into()));
        }
        if let Some(s) = self.client_server.iter().find(|&&s| s >= self.num_servers) {
            return Err(Error::Config(format!("client mapped to unknown server {s}")));
        }
        if let Some(q) = self.client_cluster.iter().find(|&&q| q >= self.num_clusters) {
            return Err(Error::Config(format!("client mapped to unknown cluster {q}")));
        }
        Ok(())
    }

    pub fn num_clients(&self) -> usize {
        self.client_server.len()
    }

    /// `N_s`: the server itself plus its graph neighbors, ascending.
    pub fn neighbors(&self, server: usize) -> Result<Vec<usize>> {
        if server >= self.num_servers {
            return Err(Error::Argument(format!(
                "server {server} out of range (have {})",
                self.num_servers
            )));
        }
        let mut out: Vec<usize> = self
            .edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == server {
                    Some(b)
                } else if b == server {
                    Some(a)
                } else {
                    None
                }
            })
            .collect();
        out.push(server);
        out.sort_unstable();
        Ok(out)
    }

    /// Neighborhoods for every server, indexed by server id.
    pub fn neighborhoods(&self) -> Vec<Vec<usize>> {
        let mut adj: Vec<Vec<usize>> = (0..self.num_servers).map(|s| vec![s]).collect();
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    pub fn degree(&self, server: usize) -> usize {
        self.edges
            .iter()
            .filter(|&&(a, b)| a == server || b == server)
            .count()
    }

    /// Clients of server `s` in ascending id order (`C_s`).
    pub fn clients_of_server(&self, server: usize) -> Vec<usize> {
        (0..self.num_clients())
            .filter(|&k| self.client_server[k] == server)
            .collect()
    }

    /// Clients of cluster `q` in ascending id order (`C_(q)`).
    pub fn cluster_members(&self, cluster: usize) -> Vec<usize> {
        (0..self.num_clients())
            .filter(|&k| self.client_cluster[k] == cluster)
            .collect()
    }

    /// `C_{s,(q)}` in ascending id order.
    pub fn clients_of(&self, server: usize, cluster: usize) -> Vec<usize> {
        (0..self.num_clients())
            .filter(|&k| self.client_server[k] == server && self.client_cluster[k] == cluster)
            .collect()
    }
}

/// Breadth-first reachability from server 0.
pub fn is_connected(num_servers: usize, edges: &[(usize, usize)]) -> bool {
    if num_servers == 0 {
        return false;
    }
    let mut adj = vec![Vec::new(); num_servers];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; num_servers];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                queue.push_back(w);
            }
        }
    }
    seen.into_iter().all(|x| x)
}

/// Random connected undirected graph with a target mean degree.
///
/// A uniform spanning tree of the complete graph (Aldous-Broder walk) is
/// drawn first; uniformly random missing edges are then added until
/// `max(n - 1, ceil(n * avg_degree / 2))` edges exist.
pub fn gen_random_connected_graph<R: Rng + ?Sized>(
    num_servers: usize,
    avg_degree: f64,
    rng: &mut R,
) -> Result<Vec<(usize, usize)>> {
    let n = num_servers;
    if n == 0 {
        return Err(Error::Config("num_servers must be at least 1".into()));
    }
    if !(avg_degree >= 0.0 && avg_degree < n as f64) {
        return Err(Error::Config(format!(
            "avg_degree {avg_degree} must lie in [0, {n}) for {n} servers"
        )));
    }
    let max_edges = n * (n - 1) / 2;
    let requested = (n as f64 * avg_degree / 2.0).ceil() as usize;
    if requested > max_edges {
        return Err(Error::Config(format!(
            "avg_degree {avg_degree} needs {requested} edges but {n} servers allow at most {max_edges}"
        )));
    }
    let target = requested.max(n - 1);
    let realized = 2.0 * target as f64 / n as f64;
    if (realized - avg_degree).abs() > 1.0 {
        return Err(Error::Config(format!(
            "avg_degree {avg_degree} is infeasible: a connected graph on {n} servers has mean degree at least {realized:.3}"
        )));
    }

    let mut edges = BTreeSet::new();
    if n > 1 {
        let mut visited = vec![false; n];
        let mut current = rng.random_range(0..n);
        visited[current] = true;
        let mut remaining = n - 1;
        while remaining > 0 {
            // Uniform step to any other vertex of K_n.
            let mut next = rng.random_range(0..n - 1);
            if next >= current {
                next += 1;
            }
            if !visited[next] {
                visited[next] = true;
                remaining -= 1;
                edges.insert((current.min(next), current.max(next)));
            }
            current = next;
        }
    }
    while edges.len() < target {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            edges.insert((a.min(b), a.max(b)));
        }
    }
    Ok(edges.into_iter().collect())
}

/// Dense client ids: client `k` lives on server `k / clients_per_server`.
/// Cluster labels are uniform; the whole labeling is redrawn until every
/// cluster has at least one member.
pub fn assign_clients<R: Rng + ?Sized>(
    num_servers: usize,
    clients_per_server: usize,
    num_clusters: usize,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if num_servers == 0 || clients_per_server == 0 || num_clusters == 0 {
        return Err(Error::Config(
            "servers, clients per server and clusters must all be at least 1".into(),
        ));
    }
    let total = num_servers * clients_per_server;
    if num_clusters > total {
        return Err(Error::Config(format!(
            "cannot populate {num_clusters} clusters with {total} clients"
        )));
    }
    let client_server: Vec<usize> = (0..total).map(|k| k / clients_per_server).collect();
    loop {
        let labels: Vec<usize> = (0..total).map(|_| rng.random_range(0..num_clusters)).collect();
        let mut present = vec![false; num_clusters];
        for &q in &labels {
            present[q] = true;
        }
        if present.iter().all(|&p| p) {
            return Ok((client_server, labels));
        }
    }
}

/// Parameters for [`generate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopologyParams {
    pub num_servers: usize,
    pub clients_per_server: usize,
    pub avg_degree: f64,
    pub num_clusters: usize,
}

/// Graph and client assignment from two independent streams.
pub fn generate<R1: Rng + ?Sized, R2: Rng + ?Sized>(
    params: &TopologyParams,
    graph_rng: &mut R1,
    label_rng: &mut R2,
) -> Result<Topology> {
    let edges = gen_random_connected_graph(params.num_servers, params.avg_degree, graph_rng)?;
    let (client_server, client_cluster) = assign_clients(
        params.num_servers,
        params.clients_per_server,
        params.num_clusters,
        label_rng,
    )?;
    Topology::new(
        params.num_servers,
        edges,
        client_server,
        client_cluster,
        params.num_clusters,
    )
}
