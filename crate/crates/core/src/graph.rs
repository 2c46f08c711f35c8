//! Building region graph: layout loading, validation, and derived metrics.
//!
//! Regions are stored sorted by id, so the internal index order is the id
//! order. Every downstream tie-break ("lowest region id") can therefore use
//! the lowest index.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Semantic region category used for group-level pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionGroup {
    Classroom,
    Hallway,
    Common,
    Stairwell,
    Entrance,
    Outdoor,
}

impl RegionGroup {
    pub const ALL: [RegionGroup; 6] = [
        RegionGroup::Classroom,
        RegionGroup::Hallway,
        RegionGroup::Common,
        RegionGroup::Stairwell,
        RegionGroup::Entrance,
        RegionGroup::Outdoor,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            RegionGroup::Classroom => "classroom",
            RegionGroup::Hallway => "hallway",
            RegionGroup::Common => "common",
            RegionGroup::Stairwell => "stairwell",
            RegionGroup::Entrance => "entrance",
            RegionGroup::Outdoor => "outdoor",
        }
    }
}

impl fmt::Display for RegionGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: u32,
    pub name: String,
    pub group: RegionGroup,
    pub floor: i32,
    pub centroid: [f64; 2],
    pub area: f64,
    pub is_entrance: bool,
    pub is_outside: bool,
}

/// How pairwise region distances are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMode {
    /// Unweighted hop count.
    #[default]
    Hops,
    /// Edge weight = euclidean distance between centroids (meters).
    Euclidean,
}

#[derive(Debug, Error)]
pub enum LayoutError {
    #[error("malformed layout document: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("layout has no regions")]
    Empty,
    #[error("duplicate region id {0}")]
    DuplicateId(u32),
    #[error("edge {from} -> {to} references undefined region id {missing}")]
    DanglingEdge { from: u32, to: u32, missing: u32 },
    #[error("region {id} has non-positive area {area}")]
    NonPositiveArea { id: u32, area: f64 },
    #[error("region {id}: {reason}")]
    InconsistentGroup { id: u32, reason: &'static str },
    #[error("region {id}: centroid is not finite")]
    BadCentroid { id: u32 },
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown region id {0}")]
pub struct UnknownRegion(pub u32);

/// On-disk layout document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayoutDoc {
    pub regions: Vec<Region>,
    #[serde(default)]
    pub edges: Vec<EdgeSpec>,
    #[serde(default)]
    pub distance_mode: DistanceMode,
}

/// An edge entry: either `[from, to]` (both directions) or an object with an
/// explicit `directed` flag.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EdgeSpec {
    Pair([u32; 2]),
    Object {
        from: u32,
        to: u32,
        #[serde(default)]
        directed: bool,
    },
}

impl EdgeSpec {
    fn parts(&self) -> (u32, u32, bool) {
        match *self {
            EdgeSpec::Pair([a, b]) => (a, b, false),
            EdgeSpec::Object { from, to, directed } => (from, to, directed),
        }
    }
}

/// Dense pairwise distance matrix. Unreachable pairs hold `f64::INFINITY`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new_infinite(n: usize) -> Self {
        let mut data = vec![f64::INFINITY; n * n];
        for i in 0..n {
            data[i * n + i] = 0.0;
        }
        DistanceMatrix { n, data }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    /// Largest finite entry; 0 for a graph without any finite off-diagonal pair.
    pub fn diameter(&self) -> f64 {
        self.data
            .iter()
            .copied()
            .filter(|d| d.is_finite())
            .fold(0.0, f64::max)
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }
}

#[derive(Debug, Clone)]
pub struct RegionGraph {
    regions: Vec<Region>,
    index: BTreeMap<u32, usize>,
    /// Out-neighbor indices, ascending.
    out: Vec<Vec<usize>>,
    /// In-neighbor indices, ascending.
    inc: Vec<Vec<usize>>,
    edge_count: usize,
    mode: DistanceMode,
    distances: DistanceMatrix,
    hops: DistanceMatrix,
    betweenness: Vec<f64>,
    closeness: Vec<f64>,
}

impl RegionGraph {
    /// Parse and validate a layout JSON document.
    pub fn load_layout(bytes: &[u8]) -> Result<Self, LayoutError> {
        let doc: LayoutDoc = serde_json::from_slice(bytes)?;
        Self::from_doc(doc)
    }

    pub fn from_doc(doc: LayoutDoc) -> Result<Self, LayoutError> {
        let LayoutDoc {
            mut regions,
            edges,
            distance_mode,
        } = doc;
        if regions.is_empty() {
            return Err(LayoutError::Empty);
        }
        let mut seen = BTreeSet::new();
        for r in &regions {
            if !seen.insert(r.id) {
                return Err(LayoutError::DuplicateId(r.id));
            }
            if !(r.area > 0.0) || !r.area.is_finite() {
                return Err(LayoutError::NonPositiveArea { id: r.id, area: r.area });
            }
            if !r.centroid.iter().all(|c| c.is_finite()) {
                return Err(LayoutError::BadCentroid { id: r.id });
            }
            if r.is_outside && r.group != RegionGroup::Outdoor {
                return Err(LayoutError::InconsistentGroup {
                    id: r.id,
                    reason: "is_outside requires group outdoor",
                });
            }
            if r.is_entrance && r.group != RegionGroup::Entrance {
                return Err(LayoutError::InconsistentGroup {
                    id: r.id,
                    reason: "is_entrance requires group entrance",
                });
            }
        }
        regions.sort_by_key(|r| r.id);
        let index: BTreeMap<u32, usize> =
            regions.iter().enumerate().map(|(i, r)| (r.id, i)).collect();

        let mut pairs = BTreeSet::new();
        for e in &edges {
            let (from, to, directed) = e.parts();
            let a = *index.get(&from).ok_or(LayoutError::DanglingEdge {
                from,
                to,
                missing: from,
            })?;
            let b = *index.get(&to).ok_or(LayoutError::DanglingEdge {
                from,
                to,
                missing: to,
            })?;
            if a == b {
                continue;
            }
            pairs.insert((a, b));
            if !directed {
                pairs.insert((b, a));
            }
        }
        Ok(Self::build(regions, index, pairs, distance_mode))
    }

    fn build(
        regions: Vec<Region>,
        index: BTreeMap<u32, usize>,
        pairs: BTreeSet<(usize, usize)>,
        mode: DistanceMode,
    ) -> Self {
        let n = regions.len();
        let mut out = vec![Vec::new(); n];
        let mut inc = vec![Vec::new(); n];
        for &(a, b) in &pairs {
            out[a].push(b);
            inc[b].push(a);
        }
        for v in out.iter_mut().chain(inc.iter_mut()) {
            v.sort_unstable();
        }
        let mut g = RegionGraph {
            regions,
            index,
            out,
            inc,
            edge_count: pairs.len(),
            mode,
            distances: DistanceMatrix::new_infinite(0),
            hops: DistanceMatrix::new_infinite(0),
            betweenness: Vec::new(),
            closeness: Vec::new(),
        };
        g.hops = g.hop_matrix(|_| true);
        g.distances = match mode {
            DistanceMode::Hops => g.hops.clone(),
            DistanceMode::Euclidean => g.weighted_matrix(),
        };
        g.betweenness = g.compute_betweenness();
        g.closeness = g.compute_closeness();
        for (i, r) in g.regions.iter().enumerate() {
            if !r.is_outside && g.out[i].is_empty() {
                log::warn!("region {} ({}) has no outgoing edges", r.id, r.name);
            }
        }
        g
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn region(&self, idx: usize) -> &Region {
        &self.regions[idx]
    }

    pub fn id_of(&self, idx: usize) -> u32 {
        self.regions[idx].id
    }

    pub fn index_of(&self, id: u32) -> Result<usize, UnknownRegion> {
        self.index.get(&id).copied().ok_or(UnknownRegion(id))
    }

    pub fn distance_mode(&self) -> DistanceMode {
        self.mode
    }

    /// Out-neighbor ids of region `id`, ascending.
    pub fn neighbors(&self, id: u32) -> Result<Vec<u32>, UnknownRegion> {
        let i = self.index_of(id)?;
        Ok(self.out[i].iter().map(|&j| self.regions[j].id).collect())
    }

    /// Out-neighbor indices, ascending.
    pub fn out_neighbors(&self, idx: usize) -> &[usize] {
        &self.out[idx]
    }

    pub fn in_neighbors(&self, idx: usize) -> &[usize] {
        &self.inc[idx]
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.out[from].binary_search(&to).is_ok()
    }

    pub fn max_out_degree(&self) -> usize {
        self.out.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Distances in the configured [`DistanceMode`].
    pub fn shortest_path_matrix(&self) -> &DistanceMatrix {
        &self.distances
    }

    /// Unweighted hop distances, regardless of the configured mode.
    pub fn hop_matrix_full(&self) -> &DistanceMatrix {
        &self.hops
    }

    /// Normalized betweenness centrality per region index.
    pub fn betweenness(&self) -> &[f64] {
        &self.betweenness
    }

    /// Closeness centrality: (reachable - 1) / sum of hop distances, scaled by
    /// the reachable fraction. 0 for regions reaching nothing.
    pub fn closeness(&self) -> &[f64] {
        &self.closeness
    }

    pub fn max_area(&self) -> f64 {
        self.regions.iter().map(|r| r.area).fold(0.0, f64::max)
    }

    pub fn floor_range(&self) -> (i32, i32) {
        let lo = self.regions.iter().map(|r| r.floor).min().unwrap_or(0);
        let hi = self.regions.iter().map(|r| r.floor).max().unwrap_or(0);
        (lo, hi)
    }

    /// Indices of entrance regions, ascending.
    pub fn entrances(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.regions[i].is_entrance).collect()
    }

    /// BFS hop distances from `src` using only regions accepted by `allow`.
    /// Regions rejected by the filter are unreachable (and not traversed).
    pub fn bfs_from(&self, src: usize, allow: impl Fn(usize) -> bool) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.len()];
        if !allow(src) {
            return dist;
        }
        dist[src] = 0.0;
        let mut queue = VecDeque::from([src]);
        while let Some(v) = queue.pop_front() {
            for &w in &self.out[v] {
                if dist[w].is_infinite() && allow(w) {
                    dist[w] = dist[v] + 1.0;
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    fn hop_matrix(&self, allow: impl Fn(usize) -> bool + Copy) -> DistanceMatrix {
        let n = self.len();
        let mut m = DistanceMatrix::new_infinite(n);
        for s in 0..n {
            let row = self.bfs_from(s, allow);
            for (t, d) in row.into_iter().enumerate() {
                if s != t || d.is_finite() {
                    m.set(s, t, d);
                }
            }
            m.set(s, s, 0.0);
        }
        m
    }

    /// Hop distances restricted to regions on `floor`. Off-floor regions are
    /// unreachable from (and cannot reach) anything but themselves.
    pub fn floor_restricted_hops(&self, floor: i32) -> DistanceMatrix {
        self.hop_matrix(|i| self.regions[i].floor == floor)
    }

    fn edge_length(&self, a: usize, b: usize) -> f64 {
        let [x0, y0] = self.regions[a].centroid;
        let [x1, y1] = self.regions[b].centroid;
        (x1 - x0).hypot(y1 - y0)
    }

    // Dijkstra from every source over centroid-length edges. The graphs are
    // small enough that an O(n^2) selection per source is fine.
    fn weighted_matrix(&self) -> DistanceMatrix {
        let n = self.len();
        let mut m = DistanceMatrix::new_infinite(n);
        for s in 0..n {
            let mut dist = vec![f64::INFINITY; n];
            let mut done = vec![false; n];
            dist[s] = 0.0;
            loop {
                let mut best = None;
                for v in 0..n {
                    if !done[v] && dist[v].is_finite() {
                        match best {
                            Some(b) if dist[b] <= dist[v] => {}
                            _ => best = Some(v),
                        }
                    }
                }
                let Some(v) = best else { break };
                done[v] = true;
                for &w in &self.out[v] {
                    let nd = dist[v] + self.edge_length(v, w);
                    if nd < dist[w] {
                        dist[w] = nd;
                    }
                }
            }
            for t in 0..n {
                m.set(s, t, dist[t]);
            }
        }
        m
    }

    // Brandes accumulation over directed, unweighted shortest paths.
    fn compute_betweenness(&self) -> Vec<f64> {
        let n = self.len();
        let mut bc = vec![0.0; n];
        if n <= 2 {
            return bc;
        }
        for s in 0..n {
            let mut stack = Vec::with_capacity(n);
            let mut pred: Vec<Vec<usize>> = vec![Vec::new(); n];
            let mut sigma = vec![0.0f64; n];
            let mut dist = vec![-1i64; n];
            sigma[s] = 1.0;
            dist[s] = 0;
            let mut queue = VecDeque::from([s]);
            while let Some(v) = queue.pop_front() {
                stack.push(v);
                for &w in &self.out[v] {
                    if dist[w] < 0 {
                        dist[w] = dist[v] + 1;
                        queue.push_back(w);
                    }
                    if dist[w] == dist[v] + 1 {
                        sigma[w] += sigma[v];
                        pred[w].push(v);
                    }
                }
            }
            let mut delta = vec![0.0f64; n];
            while let Some(w) = stack.pop() {
                for &v in &pred[w] {
                    delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
                }
                if w != s {
                    bc[w] += delta[w];
                }
            }
        }
        // ordered (source, target) pairs excluding the node itself
        let norm = ((n - 1) * (n - 2)) as f64;
        bc.iter_mut().for_each(|b| *b = (*b / norm).clamp(0.0, 1.0));
        bc
    }

    fn compute_closeness(&self) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let row = self.hops.row(i);
                let (reach, total) = row
                    .iter()
                    .filter(|d| d.is_finite() && **d > 0.0)
                    .fold((0usize, 0.0), |(c, s), d| (c + 1, s + d));
                if reach == 0 || n < 2 {
                    0.0
                } else {
                    (reach as f64 / total) * (reach as f64 / (n - 1) as f64)
                }
            })
            .collect()
    }

    /// Rebuild the layout document this graph was loaded from (edges emitted
    /// as directed pairs).
    pub fn to_doc(&self) -> LayoutDoc {
        let mut edges = Vec::with_capacity(self.edge_count);
        for (a, outs) in self.out.iter().enumerate() {
            for &b in outs {
                edges.push(EdgeSpec::Object {
                    from: self.regions[a].id,
                    to: self.regions[b].id,
                    directed: true,
                });
            }
        }
        LayoutDoc {
            regions: self.regions.clone(),
            edges,
            distance_mode: self.mode,
        }
    }
}

#[cfg(test)]
pub(crate) mod test_layouts {
    use super::*;

    pub fn region(id: u32, group: RegionGroup, floor: i32, x: f64, y: f64, area: f64) -> Region {
        Region {
            id,
            name: format!("r{id}"),
            group,
            floor,
            centroid: [x, y],
            area,
            is_entrance: group == RegionGroup::Entrance,
            is_outside: group == RegionGroup::Outdoor,
        }
    }

    /// Undirected path 0 - 1 - ... - (n-1) along the x axis.
    pub fn path(n: u32) -> RegionGraph {
        let regions = (0..n)
            .map(|i| region(i, RegionGroup::Hallway, 0, i as f64 * 10.0, 0.0, 20.0))
            .collect();
        let edges = (1..n).map(|i| EdgeSpec::Pair([i - 1, i])).collect();
        RegionGraph::from_doc(LayoutDoc {
            regions,
            edges,
            distance_mode: DistanceMode::Hops,
        })
        .unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::test_layouts::*;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const PATH3: &str = r#"{
        "regions": [
            {"id": 0, "name": "A", "group": "entrance", "floor": 1, "centroid": [0, 0], "area": 10, "is_entrance": true, "is_outside": false},
            {"id": 1, "name": "B", "group": "hallway", "floor": 1, "centroid": [5, 0], "area": 30, "is_entrance": false, "is_outside": false},
            {"id": 2, "name": "C", "group": "classroom", "floor": 1, "centroid": [10, 0], "area": 60, "is_entrance": false, "is_outside": false}
        ],
        "edges": [[0, 1], [1, 2]]
    }"#;

    #[test]
    fn loads_three_region_path() {
        let g = RegionGraph::load_layout(PATH3.as_bytes()).unwrap();
        assert_eq!(g.len(), 3);
        assert_eq!(g.edge_count(), 4);
        assert_eq!(g.shortest_path_matrix().get(0, 2), 2.0);
        assert_eq!(g.betweenness(), &[0.0, 1.0, 0.0]);
        assert_eq!(g.neighbors(1).unwrap(), vec![0, 2]);
    }

    #[test]
    fn dangling_edge_names_missing_id() {
        let doc = PATH3.replace("[1, 2]]", "[1, 99]]");
        let err = RegionGraph::load_layout(doc.as_bytes()).unwrap_err();
        assert!(matches!(err, LayoutError::DanglingEdge { missing: 99, .. }));
        assert!(err.to_string().contains("99"));
    }

    #[test]
    fn zero_area_rejected() {
        let doc = PATH3.replace("\"area\": 30", "\"area\": 0");
        let err = RegionGraph::load_layout(doc.as_bytes()).unwrap_err();
        assert!(matches!(err, LayoutError::NonPositiveArea { id: 1, .. }));
    }

    #[test]
    fn duplicate_id_rejected() {
        let doc = PATH3.replace("\"id\": 2", "\"id\": 1");
        let err = RegionGraph::load_layout(doc.as_bytes()).unwrap_err();
        assert!(matches!(err, LayoutError::DuplicateId(1)));
    }

    #[test]
    fn malformed_document() {
        assert!(matches!(
            RegionGraph::load_layout(b"{\"regions\": 3}"),
            Err(LayoutError::Malformed(_))
        ));
    }

    #[test]
    fn group_flag_consistency() {
        let doc = PATH3.replace(
            "\"group\": \"hallway\", \"floor\": 1, \"centroid\": [5, 0], \"area\": 30, \"is_entrance\": false, \"is_outside\": false",
            "\"group\": \"hallway\", \"floor\": 1, \"centroid\": [5, 0], \"area\": 30, \"is_entrance\": false, \"is_outside\": true",
        );
        assert!(matches!(
            RegionGraph::load_layout(doc.as_bytes()),
            Err(LayoutError::InconsistentGroup { id: 1, .. })
        ));
    }

    #[test]
    fn directed_edges_and_ordering() {
        let doc = r#"{"regions": [
            {"id": 5, "name": "a", "group": "hallway", "floor": 0, "centroid": [0,0], "area": 1, "is_entrance": false, "is_outside": false},
            {"id": 3, "name": "b", "group": "hallway", "floor": 0, "centroid": [0,0], "area": 1, "is_entrance": false, "is_outside": false},
            {"id": 9, "name": "c", "group": "hallway", "floor": 0, "centroid": [0,0], "area": 1, "is_entrance": false, "is_outside": false},
            {"id": 7, "name": "d", "group": "hallway", "floor": 0, "centroid": [0,0], "area": 1, "is_entrance": false, "is_outside": false}
        ], "edges": [[5, 9], [5, 7], {"from": 5, "to": 3, "directed": true}]}"#;
        let g = RegionGraph::load_layout(doc.as_bytes()).unwrap();
        assert_eq!(g.neighbors(5).unwrap(), vec![3, 7, 9]);
        assert_eq!(g.neighbors(3).unwrap(), Vec::<u32>::new());
        assert_eq!(g.neighbors(9).unwrap(), vec![5]);
        assert_eq!(g.neighbors(42), Err(UnknownRegion(42)));
        assert!(!g.shortest_path_matrix().is_symmetric());
    }

    #[test]
    fn isolated_node_has_no_neighbors() {
        let doc = r#"{"regions": [
            {"id": 0, "name": "a", "group": "hallway", "floor": 0, "centroid": [0,0], "area": 1, "is_entrance": false, "is_outside": false}
        ], "edges": []}"#;
        let g = RegionGraph::load_layout(doc.as_bytes()).unwrap();
        assert!(g.neighbors(0).unwrap().is_empty());
        assert_eq!(g.shortest_path_matrix().get(0, 0), 0.0);
    }

    #[test]
    fn complete_graph_has_zero_betweenness() {
        let regions = (0..4)
            .map(|i| region(i, RegionGroup::Common, 0, 0.0, 0.0, 1.0))
            .collect();
        let mut edges = Vec::new();
        for a in 0..4u32 {
            for b in a + 1..4 {
                edges.push(EdgeSpec::Pair([a, b]));
            }
        }
        let g = RegionGraph::from_doc(LayoutDoc {
            regions,
            edges,
            distance_mode: DistanceMode::Hops,
        })
        .unwrap();
        assert!(g.betweenness().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn euclidean_mode_uses_centroid_lengths() {
        let doc = PATH3.replace("\"edges\"", "\"distance_mode\": \"euclidean\", \"edges\"");
        let g = RegionGraph::load_layout(doc.as_bytes()).unwrap();
        assert_eq!(g.distance_mode(), DistanceMode::Euclidean);
        assert!((g.shortest_path_matrix().get(0, 2) - 10.0).abs() < 1e-12);
        assert_eq!(g.hop_matrix_full().get(0, 2), 2.0);
    }

    #[test]
    fn floor_restriction_blocks_other_floors() {
        // 0 (floor 0) - 1 (floor 1) - 2 (floor 0)
        let regions = vec![
            region(0, RegionGroup::Hallway, 0, 0.0, 0.0, 1.0),
            region(1, RegionGroup::Stairwell, 1, 0.0, 0.0, 1.0),
            region(2, RegionGroup::Hallway, 0, 0.0, 0.0, 1.0),
        ];
        let g = RegionGraph::from_doc(LayoutDoc {
            regions,
            edges: vec![EdgeSpec::Pair([0, 1]), EdgeSpec::Pair([1, 2])],
            distance_mode: DistanceMode::Hops,
        })
        .unwrap();
        let r = g.floor_restricted_hops(0);
        assert_eq!(r.get(0, 2), f64::INFINITY);
        assert_eq!(g.hop_matrix_full().get(0, 2), 2.0);
    }

    #[test]
    fn reload_is_bit_identical() {
        let a = RegionGraph::load_layout(PATH3.as_bytes()).unwrap();
        let b = RegionGraph::load_layout(PATH3.as_bytes()).unwrap();
        assert_eq!(a.shortest_path_matrix(), b.shortest_path_matrix());
        let bits = |g: &RegionGraph| g.betweenness().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    fn random_graph(n: u32, p: f64, seed: u64) -> RegionGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let regions = (0..n)
            .map(|i| region(i, RegionGroup::Hallway, 0, 0.0, 0.0, 1.0))
            .collect();
        let mut edges = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                if rng.random::<f64>() < p {
                    edges.push(EdgeSpec::Pair([a, b]));
                }
            }
        }
        RegionGraph::from_doc(LayoutDoc {
            regions,
            edges,
            distance_mode: DistanceMode::Hops,
        })
        .unwrap()
    }

    // Independent BFS: frontier sets expanded level by level.
    fn brute_hops(g: &RegionGraph, s: usize) -> Vec<f64> {
        let n = g.len();
        let mut dist = vec![f64::INFINITY; n];
        dist[s] = 0.0;
        let mut frontier = vec![s];
        let mut level = 0.0;
        while !frontier.is_empty() {
            level += 1.0;
            let mut next = Vec::new();
            for &v in &frontier {
                for w in 0..n {
                    if g.has_edge(v, w) && dist[w].is_infinite() {
                        dist[w] = level;
                        next.push(w);
                    }
                }
            }
            frontier = next;
        }
        dist
    }

    #[test]
    fn shortest_paths_match_bfs_oracle() {
        for seed in 0..5 {
            let g = random_graph(20, 0.15, seed);
            let d = g.shortest_path_matrix();
            for s in 0..g.len() {
                assert_eq!(d.row(s), brute_hops(&g, s).as_slice());
            }
            if d.data.iter().all(|x| x.is_finite()) {
                assert!(d.diameter() < g.len() as f64);
                for i in 0..g.len() {
                    for j in 0..g.len() {
                        for k in 0..g.len() {
                            assert!(d.get(i, k) <= d.get(i, j) + d.get(j, k));
                        }
                    }
                }
            }
            assert!(d.is_symmetric());
        }
    }

    // Enumerate all simple shortest paths by DFS and count interior hits.
    fn brute_betweenness(g: &RegionGraph) -> Vec<f64> {
        let n = g.len();
        let d = brute_hops_all(g);
        let mut bc = vec![0.0; n];
        for s in 0..n {
            for t in 0..n {
                if s == t || d[s][t].is_infinite() {
                    continue;
                }
                let mut paths: Vec<Vec<usize>> = Vec::new();
                let mut stack = vec![vec![s]];
                while let Some(p) = stack.pop() {
                    let last = *p.last().unwrap();
                    if last == t {
                        paths.push(p);
                        continue;
                    }
                    for w in 0..n {
                        if g.has_edge(last, w) && d[s][w] == d[s][last] + 1.0 {
                            let mut q = p.clone();
                            q.push(w);
                            stack.push(q);
                        }
                    }
                }
                let total = paths.len() as f64;
                for p in &paths {
                    for &v in &p[1..p.len() - 1] {
                        bc[v] += 1.0 / total;
                    }
                }
            }
        }
        if n > 2 {
            let norm = ((n - 1) * (n - 2)) as f64;
            bc.iter_mut().for_each(|b| *b /= norm);
        }
        bc
    }

    fn brute_hops_all(g: &RegionGraph) -> Vec<Vec<f64>> {
        (0..g.len()).map(|s| brute_hops(g, s)).collect()
    }

    #[test]
    fn betweenness_matches_path_enumeration() {
        for seed in 0..5 {
            let g = random_graph(10, 0.3, 100 + seed);
            let oracle = brute_betweenness(&g);
            for (a, b) in g.betweenness().iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
            assert!(g.betweenness().iter().all(|b| (0.0..=1.0).contains(b)));
        }
    }

    #[test]
    fn path_betweenness_by_hand() {
        let g = path(3);
        assert_eq!(g.betweenness(), &[0.0, 1.0, 0.0]);
        let g5 = path(5);
        // middle node of a 5-path: pairs (0,3),(0,4),(1,3),(1,4) each way = 8 ... of 12
        assert!((g5.betweenness()[2] - 8.0 / 12.0).abs() < 1e-12);
    }
}
