use std::collections::{BTreeSet, VecDeque};

use proptest::prelude::*;
use sgunet_core::pooling::{build_pooled_graph, dfs_cluster, PoolingPlan};

fn random_graph(n: usize, extra: usize, seed: u64) -> Vec<Vec<usize>> {
    // spanning path with shuffled labels plus random chords
    let mut state = seed | 1;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    let mut label: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        label.swap(i, (next() % (i as u64 + 1)) as usize);
    }
    let mut edges = BTreeSet::new();
    for w in label.windows(2) {
        edges.insert((w[0].min(w[1]), w[0].max(w[1])));
    }
    for _ in 0..extra {
        let (a, b) = ((next() % n as u64) as usize, (next() % n as u64) as usize);
        if a != b {
            edges.insert((a.min(b), a.max(b)));
        }
    }
    let mut adj = vec![Vec::new(); n];
    for (a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    adj
}

fn connected_within(adj: &[Vec<usize>], members: &[usize]) -> bool {
    let set: BTreeSet<usize> = members.iter().copied().collect();
    let mut seen = BTreeSet::from([members[0]]);
    let mut queue = VecDeque::from([members[0]]);
    while let Some(v) = queue.pop_front() {
        for &u in &adj[v] {
            if set.contains(&u) && seen.insert(u) {
                queue.push_back(u);
            }
        }
    }
    seen.len() == set.len()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clusters_are_small_pure_and_connected(
        n in 1usize..200, extra in 0usize..300, seed in any::<u64>(),
        p in 2usize..5, nmat in 1usize..4,
    ) {
        let adj = random_graph(n, extra, seed);
        let material: Vec<usize> = (0..n).map(|i| (i * 7 + seed as usize) % nmat).collect();
        let c = dfs_cluster(&adj, p, &material);
        let k = c.iter().max().unwrap() + 1;
        let mut members = vec![Vec::new(); k];
        for (v, &ci) in c.iter().enumerate() {
            members[ci].push(v);
        }
        prop_assert!(members.iter().all(|m| !m.is_empty()));
        for m in &members {
            prop_assert!(m.len() <= p);
            prop_assert!(m.iter().all(|&v| material[v] == material[m[0]]));
            prop_assert!(connected_within(&adj, m));
        }
    }

    #[test]
    fn pooled_graph_is_symmetric_and_no_larger(
        n in 2usize..150, extra in 0usize..200, seed in any::<u64>(), p in 2usize..5,
    ) {
        let adj = random_graph(n, extra, seed);
        let edges: Vec<(usize, usize)> =
            adj.iter().enumerate().flat_map(|(i, nb)| nb.iter().map(move |&j| (i, j))).collect();
        let c = dfs_cluster(&adj, p, &vec![0; n]);
        let g = build_pooled_graph(&edges, &c).unwrap();
        prop_assert!(g.edges.len() <= edges.len());
        let set: BTreeSet<_> = g.edges.iter().copied().collect();
        prop_assert!(g.edges.iter().all(|&(a, b)| a != b && set.contains(&(b, a))));
        for (k, &(a, b)) in g.edges.iter().enumerate() {
            for &src in &g.provenance[k] {
                prop_assert_eq!((c[edges[src].0], c[edges[src].1]), (a, b));
            }
        }
        let total: usize = g.provenance.iter().map(Vec::len).sum();
        let crossing = edges.iter().filter(|&&(s, t)| c[s] != c[t]).count();
        prop_assert_eq!(total, crossing);
        // connected single-material input stays connected after pooling
        let mut padj = vec![Vec::new(); g.num_nodes];
        for &(a, b) in &g.edges {
            padj[a].push(b);
        }
        let all: Vec<usize> = (0..g.num_nodes).collect();
        prop_assert!(connected_within(&padj, &all));
    }

    #[test]
    fn plan_stages_chain(n in 2usize..150, seed in any::<u64>()) {
        let adj = random_graph(n, n, seed);
        let plan = PoolingPlan::build(&adj, &vec![0; n], &[2, 3]).unwrap();
        prop_assert_eq!(plan.stages[0].num_fine(), n);
        prop_assert_eq!(plan.stages[1].num_fine(), plan.stages[0].num_clusters());
        prop_assert!(plan.stages[1].num_clusters() <= plan.stages[1].num_fine());
    }
}
