//! Deterministic desk-scale fixtures: taxonomies, instance catalogs, and
//! hierarchy-correlated embeddings.
//!
//! Real benchmark exports (WordNet subgraphs, dataset instance lists, backbone
//! features) are not shipped with the toolkit; these builders produce inputs
//! with the same shape and the statistical structure the pipeline relies on.
//! Every builder is a pure function of its arguments — fixed seeds, fixed
//! iteration order — so fixtures are bit-identical across runs and platforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde_json::json;

use crate::evalkit::EmbeddingStore;
use crate::sampler::InstanceCatalog;
use crate::taxonomy::{load_taxonomy, TaxonomyGraph};

struct NodeSpec {
    id: String,
    name: String,
    parents: Vec<String>,
    instances: u64,
}

impl NodeSpec {
    fn internal(id: &str, parents: &[&str]) -> Self {
        Self {
            id: id.to_string(),
            name: id.to_string(),
            parents: parents.iter().map(|s| s.to_string()).collect(),
            instances: 0,
        }
    }

    fn leaf(id: &str, parent: &str, instances: u64) -> Self {
        Self {
            id: id.to_string(),
            name: id.to_string(),
            parents: vec![parent.to_string()],
            instances,
        }
    }
}

fn build(nodes: Vec<NodeSpec>) -> TaxonomyGraph {
    let doc = json!({
        "nodes": nodes
            .iter()
            .map(|n| json!({
                "id": n.id,
                "name": n.name,
                "parents": n.parents,
                "instances": n.instances,
            }))
            .collect::<Vec<_>>(),
    });
    load_taxonomy(&doc.to_string()).expect("synthetic fixtures are valid by construction")
}

/// A 160-leaf taxonomy shaped like the WordNet subgraph over an ImageNet-style
/// test split: root concept "entity", six top-level domains of uneven size,
/// an extra tier in half of them, uneven family sizes, a few multi-parent
/// edges (it is a DAG, not a tree), and per-leaf instance counts in the
/// hundreds-to-thousands range.
pub fn tiered_like_fixture() -> TaxonomyGraph {
    let mut rng = ChaCha12Rng::seed_from_u64(0x7e5b);
    let domain_leaves: [usize; 6] = [20, 28, 30, 24, 36, 22];
    let family_pattern: [usize; 10] = [3, 4, 5, 6, 2, 8, 4, 3, 5, 7];

    let mut nodes = vec![NodeSpec {
        id: "entity".into(),
        name: "entity".into(),
        parents: vec![],
        instances: 0,
    }];
    for (d, &total) in domain_leaves.iter().enumerate() {
        let dom = format!("dom{d}");
        nodes.push(NodeSpec::internal(&dom, &["entity"]));
        let tiered = d % 2 == 1;
        if tiered {
            nodes.push(NodeSpec::internal(&format!("ord{d}_0"), &[&dom]));
            nodes.push(NodeSpec::internal(&format!("ord{d}_1"), &[&dom]));
        }
        let mut remaining = total;
        let mut fam = 0usize;
        while remaining > 0 {
            let size = family_pattern[fam % family_pattern.len()].min(remaining);
            let fam_id = format!("fam{d}_{fam}");
            let parent = if tiered {
                format!("ord{d}_{}", fam % 2)
            } else {
                dom.clone()
            };
            nodes.push(NodeSpec::internal(&fam_id, &[&parent]));
            for l in 0..size {
                let count = rng.random_range(350..=1400u64);
                nodes.push(NodeSpec::leaf(
                    &format!("leaf{d}_{fam}_{l}"),
                    &fam_id,
                    count,
                ));
            }
            remaining -= size;
            fam += 1;
        }
    }

    // Multi-parent edges: families claimed by a neighbouring domain, and two
    // leaves shared between sibling families.
    add_parent(&mut nodes, "fam0_2", "dom1");
    add_parent(&mut nodes, "fam2_2", "dom3");
    add_parent(&mut nodes, "fam4_2", "dom5");
    add_parent(&mut nodes, "leaf0_0_0", "fam0_1");
    add_parent(&mut nodes, "leaf4_3_2", "fam4_2");

    build(nodes)
}

/// A 240-leaf taxonomy shaped like a fine-grained species dataset: root
/// "life", three kingdoms of very uneven size, and a seven-level hierarchy
/// under the dominant kingdom.
pub fn fungi_like_fixture() -> TaxonomyGraph {
    let mut rng = ChaCha12Rng::seed_from_u64(0xf00d);
    let mut nodes = vec![NodeSpec {
        id: "life".into(),
        name: "life".into(),
        parents: vec![],
        instances: 0,
    }];
    nodes.push(NodeSpec::internal("fungi", &["life"]));
    nodes.push(NodeSpec::internal("chromista", &["life"]));
    nodes.push(NodeSpec::internal("protozoa", &["life"]));

    // fungi: 5 phyla x 2 classes x 2 orders x 2 families x 5 species = 200
    for p in 0..5 {
        let phy = format!("f_phy{p}");
        nodes.push(NodeSpec::internal(&phy, &["fungi"]));
        for c in 0..2 {
            let cls = format!("f_cls{p}_{c}");
            nodes.push(NodeSpec::internal(&cls, &[&phy]));
            for o in 0..2 {
                let ord = format!("f_ord{p}_{c}_{o}");
                nodes.push(NodeSpec::internal(&ord, &[&cls]));
                for f in 0..2 {
                    let fam = format!("f_fam{p}_{c}_{o}_{f}");
                    nodes.push(NodeSpec::internal(&fam, &[&ord]));
                    for s in 0..5 {
                        let count = rng.random_range(30..=220u64);
                        nodes.push(NodeSpec::leaf(
                            &format!("f_sp{p}_{c}_{o}_{f}_{s}"),
                            &fam,
                            count,
                        ));
                    }
                }
            }
        }
    }
    // chromista: 2 phyla x 2 families x 6 species = 24
    for p in 0..2 {
        let phy = format!("c_phy{p}");
        nodes.push(NodeSpec::internal(&phy, &["chromista"]));
        for f in 0..2 {
            let fam = format!("c_fam{p}_{f}");
            nodes.push(NodeSpec::internal(&fam, &[&phy]));
            for s in 0..6 {
                let count = rng.random_range(30..=220u64);
                nodes.push(NodeSpec::leaf(&format!("c_sp{p}_{f}_{s}"), &fam, count));
            }
        }
    }
    // protozoa: 2 families x 8 species = 16
    for f in 0..2 {
        let fam = format!("p_fam{f}");
        nodes.push(NodeSpec::internal(&fam, &["protozoa"]));
        for s in 0..8 {
            let count = rng.random_range(30..=220u64);
            nodes.push(NodeSpec::leaf(&format!("p_sp{f}_{s}"), &fam, count));
        }
    }

    build(nodes)
}

/// A plain two-level hierarchy: `groups` internal nodes under the root, each
/// holding `leaves_per_group` leaves with a common instance count. Distances
/// take exactly two values (within group, across groups), which makes
/// sampler contrasts easy to reason about.
pub fn two_level_fixture(groups: usize, leaves_per_group: usize, count: u64) -> TaxonomyGraph {
    let mut nodes = vec![NodeSpec {
        id: "root".into(),
        name: "root".into(),
        parents: vec![],
        instances: 0,
    }];
    for gi in 0..groups {
        let group = format!("g{gi}");
        nodes.push(NodeSpec::internal(&group, &["root"]));
        for l in 0..leaves_per_group {
            nodes.push(NodeSpec::leaf(&format!("g{gi}_l{l}"), &group, count));
        }
    }
    build(nodes)
}

/// Random taxonomy JSON for oracle-based verification: at most `max_nodes`
/// nodes, node 0 the unique root, each later node attached to 1..=`max_parents`
/// distinct earlier nodes (acyclic by construction), leaf counts in 1..=50.
pub fn random_dag_json(seed: u64, max_nodes: usize, max_parents: usize) -> String {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=max_nodes);
    let mut parents: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, slot) in parents.iter_mut().enumerate().skip(1) {
        let np = rng.random_range(1..=max_parents.min(i));
        let mut pool: Vec<usize> = (0..i).collect();
        for k in 0..np {
            let j = rng.random_range(k..pool.len());
            pool.swap(k, j);
        }
        pool.truncate(np);
        *slot = pool;
    }
    let mut has_child = vec![false; n];
    for ps in &parents {
        for &p in ps {
            has_child[p] = true;
        }
    }
    let nodes: Vec<serde_json::Value> = (0..n)
        .map(|i| {
            let instances = if has_child[i] {
                0
            } else {
                rng.random_range(1..=50u64)
            };
            json!({
                "id": format!("n{i:02}"),
                "name": format!("n{i:02}"),
                "parents": parents[i].iter().map(|p| format!("n{p:02}")).collect::<Vec<_>>(),
                "instances": instances,
            })
        })
        .collect();
    json!({ "nodes": nodes }).to_string()
}

fn add_parent(nodes: &mut [NodeSpec], id: &str, parent: &str) {
    let node = nodes
        .iter_mut()
        .find(|n| n.id == id)
        .expect("fixture node exists");
    node.parents.push(parent.to_string());
}

/// An instance catalog with exactly `per_class` instances for every leaf
/// class, ids `<class>#<index>`.
pub fn uniform_catalog(g: &TaxonomyGraph, per_class: usize) -> InstanceCatalog {
    let map = g
        .leaf_class_ids()
        .iter()
        .map(|class| {
            let ids = (0..per_class).map(|i| format!("{class}#{i:03}")).collect();
            (class.clone(), ids)
        })
        .collect();
    InstanceCatalog::from_map(map).expect("synthetic catalog is valid by construction")
}

/// Parameters of the hierarchy-correlated embedding generator.
///
/// Class means are laid out by a top-down Gaussian walk along the taxonomy:
/// the root mean is the origin and every node adds an independent
/// `N(0, walk_std²)` step per dimension to the average of its parents' means.
/// Instances are the class mean plus `N(0, noise_std²)` per dimension. The
/// signal-to-noise ratio `walk_std / noise_std` controls how separable
/// classes are relative to their semantic proximity: sibling classes sit one
/// walk step apart, distant classes many, so fine-grained tasks are harder —
/// by construction, not by assumption.
#[derive(Debug, Clone, Copy)]
pub struct EmbeddingParams {
    pub dim: usize,
    pub walk_std: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for EmbeddingParams {
    fn default() -> Self {
        Self {
            dim: 32,
            walk_std: 1.0,
            noise_std: 1.0,
            seed: 7,
        }
    }
}

impl EmbeddingParams {
    pub fn snr(&self) -> f64 {
        self.walk_std / self.noise_std
    }
}

/// Generates one embedding per catalog instance, hierarchy-correlated as
/// described on [`EmbeddingParams`].
pub fn hierarchy_embeddings(
    g: &TaxonomyGraph,
    catalog: &InstanceCatalog,
    params: &EmbeddingParams,
) -> EmbeddingStore {
    let mut rng = ChaCha12Rng::seed_from_u64(params.seed);
    let walk = Normal::new(0.0, params.walk_std).expect("finite std");
    let noise = Normal::new(0.0, params.noise_std).expect("finite std");

    // Deterministic top-down order: by depth (longest path from the root),
    // then id.
    let mut depth: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
    fn depth_of<'a>(
        g: &'a TaxonomyGraph,
        id: &'a str,
        memo: &mut std::collections::HashMap<&'a str, usize>,
    ) -> usize {
        if let Some(&d) = memo.get(id) {
            return d;
        }
        let node = g.node(id).expect("id from the graph");
        let d = node
            .parent_ids
            .iter()
            .map(|p| {
                let p: &str = g.node(p).expect("validated parent").id.as_str();
                depth_of(g, p, memo) + 1
            })
            .max()
            .unwrap_or(0);
        memo.insert(node.id.as_str(), d);
        d
    }
    let mut order: Vec<&str> = g.node_ids().iter().map(String::as_str).collect();
    for id in &order {
        depth_of(g, id, &mut depth);
    }
    order.sort_by_key(|id| (depth[id], *id));

    let mut means: std::collections::HashMap<&str, Vec<f64>> = std::collections::HashMap::new();
    for id in order {
        let node = g.node(id).expect("id from the graph");
        let mut mean = vec![0.0f64; params.dim];
        if !node.parent_ids.is_empty() {
            for p in &node.parent_ids {
                let pm = &means[p.as_str()];
                for (m, v) in mean.iter_mut().zip(pm) {
                    *m += v;
                }
            }
            let k = node.parent_ids.len() as f64;
            for m in &mut mean {
                *m /= k;
            }
        }
        for m in &mut mean {
            *m += walk.sample(&mut rng);
        }
        means.insert(node.id.as_str(), mean);
    }

    let mut records = Vec::new();
    for class in catalog.classes() {
        let mean = &means[class.as_str()];
        for instance in catalog.instances(class).expect("catalog class") {
            let vector: Vec<f32> = mean
                .iter()
                .map(|m| (m + noise.sample(&mut rng)) as f32)
                .collect();
            records.push((instance.clone(), class.clone(), vector));
        }
    }
    EmbeddingStore::from_records(records).expect("generated embeddings are valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_deterministic() {
        assert_eq!(tiered_like_fixture().to_json(), tiered_like_fixture().to_json());
        assert_eq!(fungi_like_fixture().to_json(), fungi_like_fixture().to_json());
        assert_eq!(random_dag_json(3, 20, 3), random_dag_json(3, 20, 3));
    }

    #[test]
    fn fungi_fixture_has_240_leaves() {
        let g = fungi_like_fixture();
        assert_eq!(g.leaf_class_ids().len(), 240);
        assert_eq!(g.root_id(), "life");
    }

    #[test]
    fn random_dags_load_cleanly() {
        for seed in 0..50 {
            let g = load_taxonomy(&random_dag_json(seed, 20, 3)).unwrap();
            assert!(!g.leaf_class_ids().is_empty());
        }
    }

    #[test]
    fn embeddings_are_deterministic_and_hierarchical() {
        let g = two_level_fixture(4, 4, 10);
        let catalog = uniform_catalog(&g, 6);
        let params = EmbeddingParams {
            dim: 16,
            walk_std: 1.0,
            noise_std: 0.1,
            seed: 11,
        };
        let a = hierarchy_embeddings(&g, &catalog, &params);
        let b = hierarchy_embeddings(&g, &catalog, &params);
        assert_eq!(a.len(), 16 * 6);
        let probe = "g0_l0#000";
        assert_eq!(a.vector(probe).unwrap().1, b.vector(probe).unwrap().1);

        // With noise far below the walk scale, within-group instance pairs are
        // closer than cross-group pairs.
        let d = |x: &str, y: &str| -> f64 {
            let vx = a.vector(x).unwrap().1;
            let vy = a.vector(y).unwrap().1;
            vx.iter()
                .zip(vy)
                .map(|(p, q)| (*p as f64 - *q as f64).powi(2))
                .sum()
        };
        let within = d("g0_l0#000", "g0_l1#000");
        let across = d("g0_l0#000", "g2_l1#000");
        assert!(within < across, "{within} !< {across}");
    }
}
