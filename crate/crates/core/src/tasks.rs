//! Workflows built on the barycenter solver: compression of a measure,
//! k-means over measures and propagation of measures on a graph.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng as _;
use rayon::prelude::*;

use crate::cost::CostSpec;
use crate::error::{Error, Result};
use crate::frank_wolfe::{barycenter, BarycenterProblem, FwConfig, FwState};
use crate::measure::DiscreteMeasure;
use crate::rng::{self, streams};
use crate::sinkhorn::{ot_eps, ot_self, SinkhornConfig};

/// Runs `iterations` Frank-Wolfe steps on the single-measure barycenter
/// problem, so every iterate is a compressed version of `beta`.
pub fn compress(
    beta: &DiscreteMeasure,
    iterations: usize,
    cost: &CostSpec,
    scfg: &SinkhornConfig,
    fcfg: &FwConfig,
) -> Result<FwState> {
    let problem = BarycenterProblem::new(vec![beta.clone()], None, cost.clone())?;
    let fcfg = FwConfig {
        iterations,
        ..fcfg.clone()
    };
    barycenter(&problem, scfg, &fcfg)
}

/// `S_eps` from cached self-terms.
fn divergence(
    a: &DiscreteMeasure,
    self_a: f64,
    b: &DiscreteMeasure,
    self_b: f64,
    cost: &CostSpec,
    scfg: &SinkhornConfig,
) -> Result<f64> {
    Ok(ot_eps(a, b, cost, scfg)? - 0.5 * self_a - 0.5 * self_b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub centroids: Vec<DiscreteMeasure>,
    pub assignments: Vec<usize>,
    /// Sum over inputs of `S_eps` to the assigned centroid.
    pub inertia: f64,
    /// Inertia after seeding and after every Lloyd iteration.
    pub inertia_trace: Vec<f64>,
    pub lloyd_iterations: usize,
}

struct Centroid {
    measure: DiscreteMeasure,
    self_term: f64,
}

impl Centroid {
    fn new(measure: DiscreteMeasure, cost: &CostSpec, scfg: &SinkhornConfig) -> Result<Self> {
        let self_term = ot_self(&measure, cost, scfg)?;
        Ok(Self { measure, self_term })
    }
}

/// k-means with `S_eps` as the dissimilarity.
///
/// Seeding is k-means++: the first centroid is a uniformly drawn input, each
/// further one is drawn with probability proportional to the squared
/// divergence to the nearest chosen centroid. Lloyd iterations re-fit every
/// centroid as the barycenter of its cluster (kept only if it lowers the
/// cluster's divergence sum) and reassign. An empty cluster takes over the
/// input farthest from its centroid.
pub fn kmeans(
    measures: &[DiscreteMeasure],
    k: usize,
    lloyd_iters: usize,
    cost: &CostSpec,
    scfg: &SinkhornConfig,
    fcfg: &FwConfig,
    seed: u64,
) -> Result<ClusterModel> {
    let n = measures.len();
    if k == 0 || k > n {
        return Err(Error::InvalidConfig(format!(
            "k = {k} must lie in 1..={n} (the number of measures)"
        )));
    }
    let dim = measures[0].dim();
    if let Some(m) = measures.iter().find(|m| m.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: m.dim(),
        });
    }
    let selfs: Vec<f64> = measures
        .par_iter()
        .map(|m| ot_self(m, cost, scfg))
        .collect::<Result<_>>()?;
    let dist_to = |c: &Centroid| -> Result<Vec<f64>> {
        (0..n)
            .into_par_iter()
            .map(|i| divergence(&measures[i], selfs[i], &c.measure, c.self_term, cost, scfg))
            .collect()
    };

    // k-means++ seeding
    let mut rng = rng::stream(seed, streams::KMEANS);
    let first = rng.random_range(0..n);
    let mut chosen = vec![first];
    let mut centroids = vec![Centroid {
        measure: measures[first].clone(),
        self_term: selfs[first],
    }];
    let mut nearest = dist_to(&centroids[0])?;
    while centroids.len() < k {
        let scores: Vec<f64> = nearest
            .iter()
            .enumerate()
            .map(|(i, d)| if chosen.contains(&i) { 0.0 } else { d.max(0.0).powi(2) })
            .collect();
        let total: f64 = scores.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random_range(0.0..total);
            let mut pick = None;
            for (i, s) in scores.iter().enumerate() {
                if *s > 0.0 {
                    pick = Some(i);
                    if r < *s {
                        break;
                    }
                    r -= s;
                }
            }
            pick.expect("positive total")
        } else {
            (0..n).find(|i| !chosen.contains(i)).expect("k <= n")
        };
        chosen.push(next);
        centroids.push(Centroid {
            measure: measures[next].clone(),
            self_term: selfs[next],
        });
        let d = dist_to(centroids.last().expect("just pushed"))?;
        for (a, b) in nearest.iter_mut().zip(d) {
            *a = a.min(b);
        }
    }

    let assign = |centroids: &[Centroid]| -> Result<(Vec<usize>, Vec<f64>)> {
        let table: Vec<Vec<f64>> = centroids.iter().map(dist_to).collect::<Result<_>>()?;
        let mut labels = vec![0; n];
        let mut dist = vec![0.0; n];
        for i in 0..n {
            let mut best = 0;
            for c in 1..centroids.len() {
                if table[c][i] < table[best][i] {
                    best = c;
                }
            }
            labels[i] = best;
            dist[i] = table[best][i];
        }
        Ok((labels, dist))
    };

    let (mut labels, mut dist) = assign(&centroids)?;
    repair_empty(&mut centroids, &mut labels, &mut dist, measures, &selfs);
    let mut inertia_trace = vec![dist.iter().sum::<f64>()];
    let mut iterations = 0;
    for _ in 0..lloyd_iters {
        iterations += 1;
        let refits: Vec<Option<Centroid>> = (0..k)
            .into_par_iter()
            .map(|c| {
                let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
                let current: f64 = members.iter().map(|&i| dist[i]).sum();
                let problem = BarycenterProblem::new(
                    members.iter().map(|&i| measures[i].clone()).collect(),
                    None,
                    cost.clone(),
                )?;
                let state = barycenter(&problem, scfg, fcfg)?;
                let candidate = Centroid::new(state.result().clone(), cost, scfg)?;
                let mut total = 0.0;
                for &i in &members {
                    total += divergence(
                        &measures[i],
                        selfs[i],
                        &candidate.measure,
                        candidate.self_term,
                        cost,
                        scfg,
                    )?;
                }
                Ok((total < current).then_some(candidate))
            })
            .collect::<Result<_>>()?;
        for (c, refit) in refits.into_iter().enumerate() {
            if let Some(r) = refit {
                centroids[c] = r;
            }
        }
        let (new_labels, new_dist) = assign(&centroids)?;
        let stable = new_labels == labels;
        labels = new_labels;
        dist = new_dist;
        repair_empty(&mut centroids, &mut labels, &mut dist, measures, &selfs);
        inertia_trace.push(dist.iter().sum());
        if stable {
            break;
        }
    }
    Ok(ClusterModel {
        centroids: centroids.into_iter().map(|c| c.measure).collect(),
        inertia: *inertia_trace.last().expect("nonempty"),
        assignments: labels,
        inertia_trace,
        lloyd_iterations: iterations,
    })
}

#[allow(clippy::needless_range_loop)]
fn repair_empty(
    centroids: &mut [Centroid],
    labels: &mut [usize],
    dist: &mut [f64],
    measures: &[DiscreteMeasure],
    selfs: &[f64],
) {
    for c in 0..centroids.len() {
        if labels.contains(&c) {
            continue;
        }
        // farthest input whose cluster keeps at least one other member
        let far = (0..labels.len())
            .filter(|&i| labels.iter().filter(|&&l| l == labels[i]).count() > 1)
            .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)));
        if let Some(i) = far {
            centroids[c] = Centroid {
                measure: measures[i].clone(),
                self_term: selfs[i],
            };
            labels[i] = c;
            dist[i] = 0.0;
        }
    }
}

/// Graph with measures on the known vertices. Edge weights are raw
/// dissimilarities `w_uv > 0`, turned into affinities by [`EdgeWeighting`].
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationGraph {
    n_vertices: usize,
    edges: Vec<(usize, usize, f64)>,
    known: BTreeMap<usize, DiscreteMeasure>,
    unknown: Vec<usize>,
}

impl PropagationGraph {
    pub fn new(
        n_vertices: usize,
        edges: Vec<(usize, usize, f64)>,
        known: BTreeMap<usize, DiscreteMeasure>,
        mut unknown: Vec<usize>,
    ) -> Result<Self> {
        unknown.sort_unstable();
        unknown.dedup();
        for &(u, v, w) in &edges {
            if u >= n_vertices || v >= n_vertices {
                return Err(Error::InvalidInput(format!(
                    "edge ({u}, {v}) references a vertex >= {n_vertices}"
                )));
            }
            if u == v {
                return Err(Error::InvalidInput(format!("self-loop at vertex {u}")));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "edge ({u}, {v}) has non-positive weight {w}"
                )));
            }
        }
        let mut seen = vec![false; n_vertices];
        for &v in known.keys().chain(&unknown) {
            if v >= n_vertices {
                return Err(Error::InvalidInput(format!("vertex {v} out of range")));
            }
            if seen[v] {
                return Err(Error::InvalidInput(format!("vertex {v} is both known and unknown")));
            }
            seen[v] = true;
        }
        if let Some(v) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidInput(format!("vertex {v} is neither known nor unknown")));
        }
        if let Some(m) = known.values().next() {
            let d = m.dim();
            if let Some(bad) = known.values().find(|m| m.dim() != d) {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: bad.dim(),
                });
            }
        }
        let graph = Self {
            n_vertices,
            edges,
            known,
            unknown,
        };
        // every unknown vertex must reach a known one
        let reached = graph.bfs_from_known();
        if let Some(&v) = graph.unknown.iter().find(|&&v| reached[v].is_none()) {
            return Err(Error::DisconnectedUnknownVertex(v));
        }
        Ok(graph)
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn known(&self) -> &BTreeMap<usize, DiscreteMeasure> {
        &self.known
    }

    pub fn unknown(&self) -> &[usize] {
        &self.unknown
    }

    fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.n_vertices];
        for &(u, v, w) in &self.edges {
            adj[u].push((v, w));
            adj[v].push((u, w));
        }
        adj
    }

    /// BFS depth from the set of known vertices.
    fn bfs_from_known(&self) -> Vec<Option<usize>> {
        let adj = self.adjacency();
        let mut depth = vec![None; self.n_vertices];
        let mut queue = VecDeque::new();
        for &v in self.known.keys() {
            depth[v] = Some(0);
            queue.push_back(v);
        }
        while let Some(v) = queue.pop_front() {
            let d = depth[v].expect("queued vertices have a depth");
            for &(u, _) in &adj[v] {
                if depth[u].is_none() {
                    depth[u] = Some(d + 1);
                    queue.push_back(u);
                }
            }
        }
        depth
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EdgeWeighting {
    /// `1 / w`.
    InverseDistance,
    /// `exp(-w / sigma)`.
    ExpKernel { sigma: f64 },
}

impl EdgeWeighting {
    pub fn apply(&self, w: f64) -> f64 {
        match *self {
            EdgeWeighting::InverseDistance => 1.0 / w,
            EdgeWeighting::ExpKernel { sigma } => (-w / sigma).exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationResult {
    /// Fitted measure for every unknown vertex.
    pub measures: BTreeMap<usize, DiscreteMeasure>,
    /// `sum w~_uv S_eps(rho_u, rho_v)` over edges touching an unknown vertex,
    /// after initialization and after every sweep.
    pub objective_trace: Vec<f64>,
}

/// Block-coordinate descent on the graph functional. Unknown vertices are
/// first filled in BFS order from the known set, each as the barycenter of
/// its already-filled neighbors. Every sweep then re-fits the unknown
/// vertices in index order against the current measures of all neighbors;
/// a re-fit replaces the old measure only if it does not increase that
/// vertex's share of the objective.
pub fn propagate(
    graph: &PropagationGraph,
    weighting: EdgeWeighting,
    sweeps: usize,
    cost: &CostSpec,
    scfg: &SinkhornConfig,
    fcfg: &FwConfig,
) -> Result<PropagationResult> {
    if let EdgeWeighting::ExpKernel { sigma } = weighting {
        if !(sigma > 0.0) {
            return Err(Error::InvalidConfig("kernel sigma must be > 0".into()));
        }
    }
    let adj: Vec<Vec<(usize, f64)>> = graph
        .adjacency()
        .into_iter()
        .map(|row| row.into_iter().map(|(u, w)| (u, weighting.apply(w))).collect())
        .collect();
    let mut current: Vec<Option<DiscreteMeasure>> = vec![None; graph.n_vertices];
    let mut selfs: Vec<f64> = vec![0.0; graph.n_vertices];
    for (&v, m) in &graph.known {
        current[v] = Some(m.clone());
        selfs[v] = ot_self(m, cost, scfg)?;
    }

    let fit = |v: usize, current: &[Option<DiscreteMeasure>]| -> Result<DiscreteMeasure> {
        let mut measures = Vec::new();
        let mut weights = Vec::new();
        for &(u, w) in &adj[v] {
            if let Some(m) = &current[u] {
                measures.push(m.clone());
                weights.push(w);
            }
        }
        let total: f64 = weights.iter().sum();
        if measures.is_empty() || !(total > 0.0) {
            return Err(Error::DisconnectedUnknownVertex(v));
        }
        let weights = weights.iter().map(|w| w / total).collect();
        let problem = BarycenterProblem::new(measures, Some(weights), cost.clone())?;
        Ok(barycenter(&problem, scfg, fcfg)?.result().clone())
    };
    // this vertex's share of the objective
    let block = |v: usize, m: &DiscreteMeasure, self_m: f64, current: &[Option<DiscreteMeasure>], selfs: &[f64]| -> Result<f64> {
        let mut total = 0.0;
        for &(u, w) in &adj[v] {
            if let Some(other) = &current[u] {
                total += w * divergence(m, self_m, other, selfs[u], cost, scfg)?;
            }
        }
        Ok(total)
    };
    let objective = |current: &[Option<DiscreteMeasure>], selfs: &[f64]| -> Result<f64> {
        let mut total = 0.0;
        for &(u, v, w) in &graph.edges {
            if graph.known.contains_key(&u) && graph.known.contains_key(&v) {
                continue;
            }
            let (a, b) = (
                current[u].as_ref().expect("filled"),
                current[v].as_ref().expect("filled"),
            );
            total += weighting.apply(w) * divergence(a, selfs[u], b, selfs[v], cost, scfg)?;
        }
        Ok(total)
    };

    let depth = graph.bfs_from_known();
    let mut order = graph.unknown.clone();
    order.sort_by_key(|&v| (depth[v], v));
    for &v in &order {
        let m = fit(v, &current)?;
        selfs[v] = ot_self(&m, cost, scfg)?;
        current[v] = Some(m);
    }
    let mut trace = vec![objective(&current, &selfs)?];
    for _ in 0..sweeps {
        for &v in &graph.unknown {
            let candidate = fit(v, &current)?;
            let self_c = ot_self(&candidate, cost, scfg)?;
            let old = current[v].as_ref().expect("filled");
            let before = block(v, old, selfs[v], &current, &selfs)?;
            let after = block(v, &candidate, self_c, &current, &selfs)?;
            if after <= before {
                current[v] = Some(candidate);
                selfs[v] = self_c;
            }
        }
        trace.push(objective(&current, &selfs)?);
    }
    let measures = graph
        .unknown
        .iter()
        .map(|&v| (v, current[v].clone().expect("filled")))
        .collect();
    Ok(PropagationResult {
        measures,
        objective_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frank_wolfe::MinimizeMode;
    use crate::measure::{dirac, Points};
    use crate::sinkhorn::sinkhorn_divergence;

    fn fast_fw(iterations: usize) -> FwConfig {
        FwConfig {
            iterations,
            minimize: MinimizeMode::grid_over_supports(),
            ..Default::default()
        }
    }

    fn scfg() -> SinkhornConfig {
        SinkhornConfig::new(0.05).with_tolerance(1e-8)
    }

    #[test]
    fn compress_dirac_is_fixed() {
        let y = [0.3, -0.2];
        let st = compress(&dirac(&y), 10, &CostSpec::default(), &scfg(), &fast_fw(10)).unwrap();
        for x in st.iterate.points().iter() {
            assert_eq!(x, &y);
        }
        assert_eq!(st.result(), &dirac(&y));
    }

    #[test]
    fn kmeans_with_k_equal_n() {
        let ms: Vec<DiscreteMeasure> = (0..3).map(|i| dirac(&[i as f64, 0.0])).collect();
        let s = scfg();
        let model = kmeans(&ms, 3, 3, &CostSpec::default(), &s, &fast_fw(5), 1).unwrap();
        let mut labels = model.assignments.clone();
        labels.sort_unstable();
        labels.dedup();
        assert_eq!(labels.len(), 3);
        assert!(model.inertia.abs() <= 3.0 * 2.0 * s.tolerance);
        assert!(kmeans(&ms, 4, 1, &CostSpec::default(), &s, &fast_fw(5), 1).is_err());
    }

    fn two_groups() -> Vec<DiscreteMeasure> {
        let mut ms = Vec::new();
        for i in 0..4 {
            let t = 0.05 * i as f64;
            ms.push(DiscreteMeasure::from_rows(vec![vec![t, 0.0], vec![t, 0.1]], vec![0.5, 0.5]).unwrap());
            ms.push(DiscreteMeasure::from_rows(vec![vec![3.0 + t, 3.0], vec![3.0 + t, 3.1]], vec![0.5, 0.5]).unwrap());
        }
        ms
    }

    #[test]
    fn kmeans_separates_groups_and_inertia_decreases() {
        let ms = two_groups();
        let s = scfg();
        let model = kmeans(&ms, 2, 5, &CostSpec::default(), &s, &fast_fw(20), 3).unwrap();
        for i in 0..ms.len() {
            assert_eq!(model.assignments[i] == model.assignments[0], i % 2 == 0);
        }
        for w in model.inertia_trace.windows(2) {
            assert!(w[1] <= w[0] + 2.0 * s.tolerance * ms.len() as f64, "{:?}", model.inertia_trace);
        }
        // permuted input gives the same partition
        let perm: Vec<usize> = vec![7, 2, 5, 0, 3, 6, 1, 4];
        let permuted: Vec<DiscreteMeasure> = perm.iter().map(|&i| ms[i].clone()).collect();
        let other = kmeans(&permuted, 2, 5, &CostSpec::default(), &s, &fast_fw(20), 3).unwrap();
        for a in 0..perm.len() {
            for b in 0..perm.len() {
                let same = other.assignments[a] == other.assignments[b];
                assert_eq!(same, model.assignments[perm[a]] == model.assignments[perm[b]]);
            }
        }
    }

    fn path_graph(unknown_between: bool) -> PropagationGraph {
        let mut known = BTreeMap::new();
        known.insert(0, dirac(&[0.0, 0.0]));
        if unknown_between {
            known.insert(2, dirac(&[1.0, 0.0]));
            PropagationGraph::new(3, vec![(0, 1, 1.0), (1, 2, 1.0)], known, vec![1]).unwrap()
        } else {
            PropagationGraph::new(2, vec![(0, 1, 1.0)], known, vec![1]).unwrap()
        }
    }

    #[test]
    fn graph_validation() {
        let mut known = BTreeMap::new();
        known.insert(0, dirac(&[0.0]));
        assert!(matches!(
            PropagationGraph::new(3, vec![(0, 1, 1.0)], known.clone(), vec![1, 2]),
            Err(Error::DisconnectedUnknownVertex(2))
        ));
        assert!(PropagationGraph::new(2, vec![(0, 1, 0.0)], known.clone(), vec![1]).is_err());
        assert!(PropagationGraph::new(2, vec![(0, 1, 1.0)], known.clone(), vec![0, 1]).is_err());
        assert!(PropagationGraph::new(3, vec![(0, 1, 1.0)], known, vec![1]).is_err());
    }

    #[test]
    fn single_neighbor_is_copied() {
        let g = path_graph(false);
        let s = scfg();
        let out = propagate(&g, EdgeWeighting::InverseDistance, 2, &CostSpec::default(), &s, &fast_fw(20)).unwrap();
        let rho = &out.measures[&1];
        let sd = sinkhorn_divergence(rho, &g.known()[&0], &CostSpec::default(), &s).unwrap();
        assert!(sd.abs() < 2.0 * s.tolerance + 1e-6, "{sd}");
    }

    #[test]
    fn midpoint_between_two_diracs() {
        let g = path_graph(true);
        let s = SinkhornConfig::new(0.1).with_tolerance(1e-8);
        let fw = FwConfig {
            iterations: 100,
            minimize: MinimizeMode::grid(
                Points::from_rows((0..=40).map(|i| vec![i as f64 / 40.0, 0.0]).collect()).unwrap(),
            ),
            ..Default::default()
        };
        let out = propagate(&g, EdgeWeighting::ExpKernel { sigma: 1.0 }, 2, &CostSpec::default(), &s, &fw).unwrap();
        let mean = out.measures[&1].mean();
        assert!((mean[0] - 0.5).abs() < 0.05 && mean[1].abs() < 0.05, "{mean:?}");
        for w in out.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-6);
        }
    }

    #[test]
    fn star_around_one_known_vertex() {
        let beta = DiscreteMeasure::from_rows(
            vec![vec![0.0, 0.0], vec![0.4, 0.1], vec![0.2, 0.5]],
            vec![0.2, 0.5, 0.3],
        )
        .unwrap();
        let mut known = BTreeMap::new();
        known.insert(0, beta.clone());
        let g = PropagationGraph::new(4, vec![(0, 1, 1.0), (0, 2, 2.0), (0, 3, 0.5)], known, vec![1, 2, 3]).unwrap();
        let s = scfg();
        let fw = FwConfig {
            minimize: MinimizeMode::continuous(),
            ..fast_fw(15)
        };
        let out = propagate(&g, EdgeWeighting::InverseDistance, 1, &CostSpec::default(), &s, &fw).unwrap();
        let expected = compress(&beta, 15, &CostSpec::default(), &s, &fw).unwrap();
        for m in out.measures.values() {
            assert_eq!(m, expected.result());
        }
    }
}
