//! DFS clustering of element nodes, pooled graph hierarchies, even-weight
//! pooling / broadcast unpooling, and the receptive-field formula.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{config_err, structure_err, Result};
use crate::tensor::RowMap;

/// Cluster index for every node from a depth-first walk over same-material
/// neighbours, opening a new cluster every `pooling_ratio` visits.
///
/// Nodes are taken as walk roots in ascending id order and neighbours are
/// explored in ascending id order. A node reached by backtracking that has
/// no neighbour in the currently open cluster starts a new one, so every
/// cluster is connected in the same-material subgraph.
pub fn dfs_cluster(
    adjacency: &[Vec<usize>],
    pooling_ratio: usize,
    material: &[usize],
) -> Vec<usize> {
    let n = adjacency.len();
    let p = pooling_ratio.max(1);
    let sorted: Vec<Vec<usize>> = adjacency
        .iter()
        .map(|nbrs| {
            let mut s = nbrs.clone();
            s.sort_unstable();
            s.dedup();
            s
        })
        .collect();

    const UNSET: usize = usize::MAX;
    let mut cluster = vec![UNSET; n];
    let mut visited = vec![false; n];
    let mut cid = 0usize;
    let mut cnt = 0usize;
    let mut stack: Vec<(usize, usize)> = Vec::new();

    let assign = |v: usize, cluster: &mut Vec<usize>, cid: &mut usize, cnt: &mut usize| {
        if *cnt > 0 && !sorted[v].iter().any(|&u| cluster[u] == *cid) {
            *cid += 1;
            *cnt = 0;
        }
        cluster[v] = *cid;
        *cnt += 1;
        if *cnt >= p {
            *cid += 1;
            *cnt = 0;
        }
    };

    for root in 0..n {
        if visited[root] {
            continue;
        }
        visited[root] = true;
        if cnt > 0 {
            cid += 1;
            cnt = 0;
        }
        let mat = material[root];
        assign(root, &mut cluster, &mut cid, &mut cnt);
        stack.push((root, 0));
        while let Some(top) = stack.last_mut() {
            let (node, pos) = *top;
            let next = sorted[node][pos..]
                .iter()
                .position(|&u| !visited[u] && material[u] == mat)
                .map(|off| pos + off);
            match next {
                Some(i) => {
                    top.1 = i + 1;
                    let u = sorted[node][i];
                    visited[u] = true;
                    assign(u, &mut cluster, &mut cid, &mut cnt);
                    stack.push((u, 0));
                }
                None => {
                    stack.pop();
                }
            }
        }
    }
    cluster
}

/// Number of clusters in a contiguous cluster-index vector.
pub fn cluster_count(cluster: &[usize]) -> usize {
    cluster.iter().max().map_or(0, |&m| m + 1)
}

/// Graph obtained by merging clusters; `provenance[k]` lists the indices of
/// the original directed edges merged into pooled edge `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct PooledGraph {
    pub num_nodes: usize,
    pub edges: Vec<(usize, usize)>,
    pub provenance: Vec<Vec<usize>>,
}

impl PooledGraph {
    /// Row map averaging each pooled edge's provenance edges.
    pub fn edge_pool_map(&self, num_fine_edges: usize) -> Result<RowMap> {
        RowMap::group_mean(num_fine_edges, &self.provenance)
    }
}

/// Merges the nodes of each cluster, keeping one directed edge per ordered
/// pair of distinct clusters connected by at least one original edge.
pub fn build_pooled_graph(edges: &[(usize, usize)], cluster: &[usize]) -> Result<PooledGraph> {
    let num_nodes = cluster_count(cluster);
    let mut merged: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (k, &(s, t)) in edges.iter().enumerate() {
        if s >= cluster.len() || t >= cluster.len() {
            return structure_err(format!("edge ({s}, {t}) outside {} nodes", cluster.len()));
        }
        let (a, b) = (cluster[s], cluster[t]);
        if a != b {
            merged.entry((a, b)).or_default().push(k);
        }
    }
    let (edges, provenance) = merged.into_iter().unzip();
    Ok(PooledGraph {
        num_nodes,
        edges,
        provenance,
    })
}

/// One level of the U-net hierarchy.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolingStage {
    pub ratio: usize,
    pub cluster_index: Vec<usize>,
    pub members: Vec<Vec<usize>>,
    /// Mesh adjacency of the pooled graph (what the next stage clusters on).
    pub pooled_adjacency: Vec<Vec<usize>>,
    pub pooled_material: Vec<usize>,
    node_pool: Arc<RowMap>,
    unpool: Arc<RowMap>,
}

impl PoolingStage {
    fn new(adjacency: &[Vec<usize>], material: &[usize], ratio: usize) -> Result<Self> {
        let cluster_index = dfs_cluster(adjacency, ratio, material);
        Self::with_clusters(adjacency, material, ratio, cluster_index)
    }

    fn with_clusters(
        adjacency: &[Vec<usize>],
        material: &[usize],
        ratio: usize,
        cluster_index: Vec<usize>,
    ) -> Result<Self> {
        if cluster_index.len() != adjacency.len() {
            return structure_err("cluster index must have one entry per node");
        }
        let k = cluster_count(&cluster_index);
        let mut members = vec![Vec::new(); k];
        for (v, &c) in cluster_index.iter().enumerate() {
            members[c].push(v);
        }
        for (c, m) in members.iter().enumerate() {
            if m.is_empty() || m.len() > ratio {
                return structure_err(format!(
                    "cluster {c} has {} members for ratio {ratio}",
                    m.len()
                ));
            }
            if m.iter().any(|&v| material[v] != material[m[0]]) {
                return structure_err(format!("cluster {c} mixes materials"));
            }
        }
        let edges: Vec<(usize, usize)> = adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, nbrs)| nbrs.iter().map(move |&j| (i, j)))
            .collect();
        let pooled = build_pooled_graph(&edges, &cluster_index)?;
        let mut pooled_adjacency = vec![Vec::new(); k];
        for &(a, b) in &pooled.edges {
            pooled_adjacency[a].push(b);
        }
        let pooled_material = members.iter().map(|m| material[m[0]]).collect();
        let node_pool = Arc::new(RowMap::group_mean(cluster_index.len(), &members)?);
        let unpool = Arc::new(RowMap::gather(k, &cluster_index)?);
        Ok(Self {
            ratio,
            cluster_index,
            members,
            pooled_adjacency,
            pooled_material,
            node_pool,
            unpool,
        })
    }

    pub fn num_fine(&self) -> usize {
        self.cluster_index.len()
    }

    pub fn num_clusters(&self) -> usize {
        self.members.len()
    }

    /// Cluster-mean map from fine nodes to pooled nodes.
    pub fn node_pool_map(&self) -> &Arc<RowMap> {
        &self.node_pool
    }

    /// Broadcast map from pooled nodes back to their members.
    pub fn unpool_map(&self) -> &Arc<RowMap> {
        &self.unpool
    }
}

/// Cluster indices for every U-net stage, computed once per topology.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolingPlan {
    pub stages: Vec<PoolingStage>,
}

impl PoolingPlan {
    /// Clusters `adjacency` (element face adjacency, no contact edges) with
    /// ratio `ratios[0]`, then the pooled graph with `ratios[1]`, and so on.
    pub fn build(adjacency: &[Vec<usize>], material: &[usize], ratios: &[usize]) -> Result<Self> {
        if material.len() != adjacency.len() {
            return structure_err("material vector must have one entry per node");
        }
        if ratios.contains(&0) {
            return config_err("pooling ratios must be positive");
        }
        let mut stages = Vec::with_capacity(ratios.len());
        let mut adj = adjacency.to_vec();
        let mut mat = material.to_vec();
        for &p in ratios {
            let stage = PoolingStage::new(&adj, &mat, p)?;
            adj = stage.pooled_adjacency.clone();
            mat = stage.pooled_material.clone();
            stages.push(stage);
        }
        Ok(Self { stages })
    }

    /// Plan with the given per-stage cluster vectors instead of DFS ones,
    /// e.g. a plan carried over to a relabelled graph.
    pub fn from_clusters(
        adjacency: &[Vec<usize>],
        material: &[usize],
        ratios: &[usize],
        clusters: &[Vec<usize>],
    ) -> Result<Self> {
        if material.len() != adjacency.len() || ratios.len() != clusters.len() {
            return structure_err("need one material per node and one cluster vector per ratio");
        }
        let mut stages = Vec::with_capacity(ratios.len());
        let mut adj = adjacency.to_vec();
        let mut mat = material.to_vec();
        for (&p, c) in ratios.iter().zip(clusters) {
            let stage = PoolingStage::with_clusters(&adj, &mat, p, c.clone())?;
            adj = stage.pooled_adjacency.clone();
            mat = stage.pooled_material.clone();
            stages.push(stage);
        }
        Ok(Self { stages })
    }

    pub fn depth(&self) -> usize {
        self.stages.len()
    }

    /// Pools an arbitrary level-0 edge list (e.g. including contact edges)
    /// through every stage; entry `i` is the graph at level `i + 1`.
    pub fn hierarchy(&self, edges: &[(usize, usize)]) -> Result<Vec<PooledGraph>> {
        let mut out = Vec::with_capacity(self.stages.len());
        let mut current = edges.to_vec();
        for stage in &self.stages {
            let pooled = build_pooled_graph(&current, &stage.cluster_index)?;
            current = pooled.edges.clone();
            out.push(pooled);
        }
        Ok(out)
    }
}

/// Even-weight pooling: each pooled node is the mean of its members and each
/// pooled edge the mean of its provenance edges.
pub fn pool_features(
    node_features: &[f64],
    edge_features: &[f64],
    width: usize,
    stage: &PoolingStage,
    pooled: &PooledGraph,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if node_features.len() != stage.num_fine() * width {
        return structure_err("node feature rows do not match the stage's fine node count");
    }
    let num_edges = edge_features.len().checked_div(width).unwrap_or(0);
    let nodes = stage.node_pool_map().apply(node_features, width);
    let edges = pooled.edge_pool_map(num_edges)?.apply(edge_features, width);
    Ok((nodes, edges))
}

/// Copies every pooled feature back to the members of its cluster.
pub fn unpool_features(pooled: &[f64], width: usize, stage: &PoolingStage) -> Result<Vec<f64>> {
    if pooled.len() != stage.num_clusters() * width {
        return structure_err("pooled feature rows do not match the stage's cluster count");
    }
    Ok(stage.unpool_map().apply(pooled, width))
}

/// Maximum hop distance from which a node's output can be influenced:
/// `m_enc + (m_gu + 1) * (prod(p) + 1) - 2`, or `m_enc + m_gu` for a flat
/// processor (empty ratio list, `m_gu` being the flat depth).
pub fn receptive_field(m_enc: usize, m_gu: usize, pooling_ratios: &[usize]) -> usize {
    if pooling_ratios.is_empty() {
        return m_enc + m_gu;
    }
    let prod: usize = pooling_ratios.iter().product();
    m_enc + (m_gu + 1) * (prod + 1) - 2
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(n: usize) -> Vec<Vec<usize>> {
        (0..n)
            .map(|i| {
                let mut v = Vec::new();
                if i > 0 {
                    v.push(i - 1);
                }
                if i + 1 < n {
                    v.push(i + 1);
                }
                v
            })
            .collect()
    }

    #[test]
    fn path_of_six_pairs_up() {
        assert_eq!(dfs_cluster(&path(6), 2, &[0; 6]), vec![0, 0, 1, 1, 2, 2]);
    }

    #[test]
    fn ratio_one_is_identity() {
        assert_eq!(dfs_cluster(&path(5), 1, &[0; 5]), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn material_walls_stop_the_walk() {
        assert_eq!(dfs_cluster(&path(3), 2, &[0, 1, 0]), vec![0, 1, 2]);
    }

    #[test]
    fn backtracking_opens_a_new_cluster() {
        // star: centre 0 with leaves 1, 2, 3
        let adj = vec![vec![1, 2, 3], vec![0], vec![0], vec![0]];
        // leaves 2 and 3 only touch each other through 0
        assert_eq!(dfs_cluster(&adj, 2, &[0; 4]), vec![0, 0, 1, 2]);
    }

    #[test]
    fn pooled_path_has_one_edge_pair() {
        let edges = vec![(0, 1), (1, 0), (1, 2), (2, 1), (2, 3), (3, 2)];
        let g = build_pooled_graph(&edges, &[0, 0, 1, 1]).unwrap();
        assert_eq!(g.num_nodes, 2);
        assert_eq!(g.edges, vec![(0, 1), (1, 0)]);
        assert_eq!(g.provenance, vec![vec![2], vec![3]]);
        assert_eq!(edges[2], (1, 2));
        assert_eq!(edges[3], (2, 1));
    }

    #[test]
    fn full_collapse_and_identity_clusterings() {
        let edges = vec![(0, 1), (1, 0), (1, 2), (2, 1)];
        let g = build_pooled_graph(&edges, &[0, 0, 0]).unwrap();
        assert_eq!((g.num_nodes, g.edges.len()), (1, 0));
        let id = build_pooled_graph(&edges, &[0, 1, 2]).unwrap();
        assert_eq!(
            id.edges,
            edges
                .iter()
                .copied()
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .collect::<Vec<_>>()
        );
        assert!(id.provenance.iter().all(|p| p.len() == 1));
    }

    #[test]
    fn pooling_averages_and_unpooling_broadcasts() {
        let plan = PoolingPlan::build(&path(2), &[0, 0], &[2]).unwrap();
        let stage = &plan.stages[0];
        let pooled_graph = &plan.hierarchy(&[(0, 1), (1, 0)]).unwrap()[0];
        let (nodes, edges) = pool_features(
            &[1.0, 3.0, 3.0, 5.0],
            &[1.0, 1.0, 2.0, 2.0],
            2,
            stage,
            pooled_graph,
        )
        .unwrap();
        assert_eq!(nodes, vec![2.0, 4.0]);
        assert!(edges.is_empty());
        assert_eq!(
            unpool_features(&nodes, 2, stage).unwrap(),
            vec![2.0, 4.0, 2.0, 4.0]
        );
    }

    #[test]
    fn ratio_one_pool_is_identity() {
        let adj = path(4);
        let plan = PoolingPlan::build(&adj, &[0; 4], &[1]).unwrap();
        let edges: Vec<(usize, usize)> = adj
            .iter()
            .enumerate()
            .flat_map(|(i, n)| n.iter().map(move |&j| (i, j)))
            .collect();
        let h = plan.hierarchy(&edges).unwrap();
        let x: Vec<f64> = (0..8).map(|v| v as f64).collect();
        let e: Vec<f64> = (0..12).map(|v| v as f64 * 0.5).collect();
        let (pn, pe) = pool_features(&x, &e, 2, &plan.stages[0], &h[0]).unwrap();
        assert_eq!(pn, x);
        // pooled edge order is sorted by (src, tgt)
        let mut order: Vec<usize> = (0..edges.len()).collect();
        order.sort_by_key(|&k| edges[k]);
        let expect: Vec<f64> = order
            .iter()
            .flat_map(|&k| e[k * 2..k * 2 + 2].to_vec())
            .collect();
        assert_eq!(pe, expect);
        assert_eq!(unpool_features(&pn, 2, &plan.stages[0]).unwrap(), x);
    }

    #[test]
    fn unpool_then_pool_restores_cluster_constant_features() {
        let plan = PoolingPlan::build(&path(7), &[0; 7], &[3]).unwrap();
        let stage = &plan.stages[0];
        let coarse: Vec<f64> = (0..stage.num_clusters() * 2)
            .map(|v| v as f64 + 0.25)
            .collect();
        let fine = unpool_features(&coarse, 2, stage).unwrap();
        let back = stage.node_pool_map().apply(&fine, 2);
        assert_eq!(back, coarse);
    }

    #[test]
    fn receptive_field_table_rows() {
        assert_eq!(receptive_field(4, 2, &[4, 2]), 29);
        assert_eq!(receptive_field(3, 1, &[4, 2, 2]), 35);
        assert_eq!(receptive_field(2, 2, &[2]), 9);
        assert_eq!(receptive_field(5, 13, &[]), 18);
        assert_eq!(receptive_field(2, 15, &[]), 17);
        assert_eq!(receptive_field(2, 6, &[]), 8);
    }

    #[test]
    fn explicit_clusters_reproduce_the_dfs_plan() {
        let adj = path(9);
        let plan = PoolingPlan::build(&adj, &[0; 9], &[2, 2]).unwrap();
        let clusters: Vec<Vec<usize>> = plan
            .stages
            .iter()
            .map(|s| s.cluster_index.clone())
            .collect();
        assert_eq!(
            PoolingPlan::from_clusters(&adj, &[0; 9], &[2, 2], &clusters).unwrap(),
            plan
        );
        let oversized = vec![vec![0, 0, 0, 1, 1, 2, 2, 3, 3]];
        assert!(PoolingPlan::from_clusters(&adj, &[0; 9], &[2], &oversized).is_err());
    }

    #[test]
    fn zero_ratio_is_rejected() {
        assert!(PoolingPlan::build(&path(3), &[0; 3], &[0]).is_err());
    }
}
