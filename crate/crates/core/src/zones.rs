//! Candidate spatial zones: k-nearest-neighbour balls and flexibly shaped
//! connected subsets.
//!
//! Distance ties are broken by the smaller location index. Zone sets are
//! deduplicated and kept in canonical order: by size, then by the
//! lexicographic member list.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Symmetric matrix of pairwise distances between locations.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    /// Builds from row-major entries, checking symmetry, a zero diagonal and
    /// strictly positive off-diagonal distances.
    pub fn new(n: usize, d: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("distance matrix needs at least one location".into()));
        }
        if d.len() != n * n {
            return Err(Error::DimensionMismatch(format!(
                "distance matrix for {n} locations needs {} entries, got {}",
                n * n,
                d.len()
            )));
        }
        for i in 0..n {
            if d[i * n + i] != 0.0 {
                return Err(Error::Domain(format!("distance d[{i}][{i}] must be 0")));
            }
            for j in (i + 1)..n {
                let (a, b) = (d[i * n + j], d[j * n + i]);
                if a != b {
                    return Err(Error::Domain(format!("distance matrix not symmetric at ({i}, {j})")));
                }
                if !(a > 0.0 && a.is_finite()) {
                    return Err(Error::Domain(format!(
                        "distance between locations {i} and {j} must be finite and > 0, got {a}"
                    )));
                }
            }
        }
        Ok(Self { n, d })
    }

    /// Euclidean distances between planar points.
    pub fn euclidean(points: &[(f64, f64)]) -> Result<Self> {
        let n = points.len();
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let (dx, dy) = (points[i].0 - points[j].0, points[i].1 - points[j].1);
                let v = dx.hypot(dy);
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        Self::new(n, d)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    /// All locations ordered by distance from `center` (ties by index); the
    /// center itself comes first.
    pub fn neighbors_by_distance(&self, center: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.n).collect();
        order.sort_by(|&a, &b| self.get(center, a).total_cmp(&self.get(center, b)).then(a.cmp(&b)));
        order
    }
}

/// A non-empty, strictly increasing list of location indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Zone(Vec<usize>);

impl Zone {
    /// Sorts and validates; duplicates are rejected.
    pub fn new(mut members: Vec<usize>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Domain("zone must contain at least one location".into()));
        }
        members.sort_unstable();
        if members.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Domain("zone has duplicate members".into()));
        }
        Ok(Self(members))
    }

    pub fn members(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, location: usize) -> bool {
        self.0.binary_search(&location).is_ok()
    }

    /// Number of shared members.
    pub fn intersection_size(&self, other: &Zone) -> usize {
        let (mut a, mut b, mut shared) = (0, 0, 0);
        while a < self.0.len() && b < other.0.len() {
            match self.0[a].cmp(&other.0[b]) {
                std::cmp::Ordering::Less => a += 1,
                std::cmp::Ordering::Greater => b += 1,
                std::cmp::Ordering::Equal => {
                    shared += 1;
                    a += 1;
                    b += 1;
                }
            }
        }
        shared
    }

    fn canonical_cmp(&self, other: &Zone) -> std::cmp::Ordering {
        self.0.len().cmp(&other.0.len()).then_with(|| self.0.cmp(&other.0))
    }
}

impl TryFrom<Vec<usize>> for Zone {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        Zone::new(v)
    }
}

impl From<Zone> for Vec<usize> {
    fn from(z: Zone) -> Self {
        z.0
    }
}

/// Distinct zones in canonical order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ZoneSet(Vec<Zone>);

impl ZoneSet {
    /// Deduplicates and sorts into canonical order.
    pub fn from_zones<I: IntoIterator<Item = Zone>>(zones: I) -> Self {
        let unique: BTreeSet<Zone> = zones.into_iter().collect();
        let mut v: Vec<Zone> = unique.into_iter().collect();
        v.sort_by(Zone::canonical_cmp);
        Self(v)
    }

    pub fn zones(&self) -> &[Zone] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, index: usize) -> &Zone {
        &self.0[index]
    }

    /// Largest location index referenced, if any.
    pub fn max_location(&self) -> Option<usize> {
        self.0.iter().filter_map(|z| z.0.last().copied()).max()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Zone> {
        self.0.iter()
    }

    pub fn position(&self, zone: &Zone) -> Option<usize> {
        self.0.binary_search_by(|probe| probe.canonical_cmp(zone)).ok()
    }
}

/// Symmetric, irreflexive neighbour relation between locations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyRelation {
    neighbors: Vec<BTreeSet<usize>>,
}

impl AdjacencyRelation {
    pub fn new(neighbors: Vec<BTreeSet<usize>>) -> Result<Self> {
        let n = neighbors.len();
        for (i, list) in neighbors.iter().enumerate() {
            for &j in list {
                if j >= n {
                    return Err(Error::Domain(format!(
                        "adjacency of {i} references unknown location {j}"
                    )));
                }
                if j == i {
                    return Err(Error::Domain(format!("location {i} is adjacent to itself")));
                }
                if !neighbors[j].contains(&i) {
                    return Err(Error::Domain(format!(
                        "adjacency not symmetric: {i}->{j} without {j}->{i}"
                    )));
                }
            }
        }
        Ok(Self { neighbors })
    }

    /// Builds from an undirected edge list.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut neighbors = vec![BTreeSet::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::Domain(format!("edge ({a}, {b}) out of range for {n} locations")));
            }
            neighbors[a].insert(b);
            neighbors[b].insert(a);
        }
        Self::new(neighbors)
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &BTreeSet<usize> {
        &self.neighbors[i]
    }

    pub fn are_adjacent(&self, a: usize, b: usize) -> bool {
        self.neighbors[a].contains(&b)
    }

    /// Whether `members` induces a connected subgraph.
    pub fn is_connected(&self, members: &[usize]) -> bool {
        let Some(&start) = members.first() else {
            return false;
        };
        let inside: BTreeSet<usize> = members.iter().copied().collect();
        let mut seen = BTreeSet::from([start]);
        let mut stack = vec![start];
        while let Some(v) = stack.pop() {
            for &w in &self.neighbors[v] {
                if inside.contains(&w) && seen.insert(w) {
                    stack.push(w);
                }
            }
        }
        seen.len() == inside.len()
    }
}

/// Largest `k_max` keeping every k-NN zone at or below half of `n` locations.
pub fn max_k_for_half(n: usize) -> usize {
    (n / 2).saturating_sub(1)
}

/// Every location together with its k nearest neighbours, k = 0..=k_max.
pub fn knn_zones(dist: &DistanceMatrix, k_max: usize) -> Result<ZoneSet> {
    let n = dist.len();
    if k_max + 1 > n {
        return Err(Error::Domain(format!(
            "k_max={k_max} needs at least {} locations, have {n}",
            k_max + 1
        )));
    }
    let mut zones = Vec::with_capacity(n * (k_max + 1));
    for center in 0..n {
        let order = dist.neighbors_by_distance(center);
        for size in 1..=k_max + 1 {
            zones.push(Zone::new(order[..size].to_vec())?);
        }
    }
    Ok(ZoneSet::from_zones(zones))
}

/// Symmetrized k-nearest-neighbour graph.
pub fn adjacency_from_knn(dist: &DistanceMatrix, k: usize) -> Result<AdjacencyRelation> {
    let n = dist.len();
    if k >= n {
        return Err(Error::Domain(format!("adjacency k={k} must be below n={n}")));
    }
    let mut neighbors = vec![BTreeSet::new(); n];
    for i in 0..n {
        for &j in dist.neighbors_by_distance(i).iter().skip(1).take(k) {
            neighbors[i].insert(j);
            neighbors[j].insert(i);
        }
    }
    AdjacencyRelation::new(neighbors)
}

/// Connected subsets of each center's `max_size`-nearest pool that contain
/// the center, unioned over centers.
pub fn flex_zones(dist: &DistanceMatrix, adj: &AdjacencyRelation, max_size: usize) -> Result<ZoneSet> {
    let n = dist.len();
    if adj.len() != n {
        return Err(Error::Domain(format!(
            "adjacency covers {} locations, distances cover {n}",
            adj.len()
        )));
    }
    if max_size == 0 || max_size > n {
        return Err(Error::Domain(format!("max_size={max_size} must be in 1..={n}")));
    }
    let mut all = BTreeSet::new();
    for center in 0..n {
        let pool: BTreeSet<usize> = dist.neighbors_by_distance(center).into_iter().take(max_size).collect();
        let mut enumerator = ConnectedSubsets {
            adj,
            pool: &pool,
            max_size,
            found: &mut all,
        };
        let mut current = vec![center];
        let mut excluded = BTreeSet::from([center]);
        let extension: Vec<usize> = adj
            .neighbors(center)
            .iter()
            .copied()
            .filter(|v| pool.contains(v))
            .collect();
        enumerator.grow(&mut current, extension, &mut excluded);
    }
    Ok(ZoneSet::from_zones(all))
}

/// Enumerates each connected superset of the root exactly once: a vertex is
/// either branched on or permanently excluded from the remaining branches.
struct ConnectedSubsets<'a> {
    adj: &'a AdjacencyRelation,
    pool: &'a BTreeSet<usize>,
    max_size: usize,
    found: &'a mut BTreeSet<Zone>,
}

impl ConnectedSubsets<'_> {
    fn grow(&mut self, current: &mut Vec<usize>, extension: Vec<usize>, excluded: &mut BTreeSet<usize>) {
        let mut members = current.clone();
        members.sort_unstable();
        self.found.insert(Zone(members));
        if current.len() == self.max_size {
            return;
        }
        // `excluded` holds the current set, every vertex already offered as an
        // extension at this level or above, and vertices branched on earlier.
        let mut banned_here = Vec::new();
        for (idx, &v) in extension.iter().enumerate() {
            let mut next: Vec<usize> = extension[idx + 1..].to_vec();
            for &w in self.adj.neighbors(v) {
                if self.pool.contains(&w) && !excluded.contains(&w) && !extension.contains(&w) {
                    next.push(w);
                }
            }
            current.push(v);
            excluded.insert(v);
            self.grow(current, next, excluded);
            current.pop();
            banned_here.push(v);
        }
        for v in banned_here {
            excluded.remove(&v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn collinear() -> DistanceMatrix {
        DistanceMatrix::euclidean(&[(0.0, 0.0), (1.0, 0.0), (3.0, 0.0)]).unwrap()
    }

    fn zone(v: &[usize]) -> Zone {
        Zone::new(v.to_vec()).unwrap()
    }

    #[test]
    fn knn_collinear_fixture() {
        let zs = knn_zones(&collinear(), 1).unwrap();
        let expected = vec![zone(&[0]), zone(&[1]), zone(&[2]), zone(&[0, 1]), zone(&[1, 2])];
        assert_eq!(zs.zones(), expected.as_slice());
    }

    #[test]
    fn knn_zero_gives_singletons() {
        let zs = knn_zones(&collinear(), 0).unwrap();
        assert_eq!(zs.len(), 3);
        assert!(zs.iter().all(|z| z.len() == 1));
    }

    #[test]
    fn knn_rejects_too_large_k() {
        assert!(matches!(knn_zones(&collinear(), 3), Err(Error::Domain(_))));
    }

    #[test]
    fn max_k_examples() {
        assert_eq!(max_k_for_half(100), 49);
        assert_eq!(max_k_for_half(4), 1);
        assert_eq!(max_k_for_half(2), 0);
        assert_eq!(max_k_for_half(5), 1);
    }

    #[test]
    fn ties_break_by_index() {
        // Location 0 at the origin, 1 and 2 equidistant.
        let d = DistanceMatrix::euclidean(&[(0.0, 0.0), (1.0, 0.0), (-1.0, 0.0)]).unwrap();
        assert_eq!(d.neighbors_by_distance(0), vec![0, 1, 2]);
        let zs = knn_zones(&d, 1).unwrap();
        assert!(zs.position(&zone(&[0, 1])).is_some());
        assert!(zs.position(&zone(&[0, 2])).is_some()); // from center 2
    }

    #[test]
    fn adjacency_collinear_fixture() {
        let adj = adjacency_from_knn(&collinear(), 1).unwrap();
        assert!(adj.are_adjacent(0, 1));
        assert!(adj.are_adjacent(1, 2));
        assert!(!adj.are_adjacent(0, 2));
    }

    #[test]
    fn adjacency_full_k_is_complete() {
        let adj = adjacency_from_knn(&collinear(), 2).unwrap();
        for i in 0..3 {
            assert_eq!(adj.neighbors(i).len(), 2);
        }
    }

    #[test]
    fn flex_path_graph_fixture() {
        let d = collinear();
        let adj = AdjacencyRelation::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let zs = flex_zones(&d, &adj, 3).unwrap();
        let expected = vec![
            zone(&[0]),
            zone(&[1]),
            zone(&[2]),
            zone(&[0, 1]),
            zone(&[1, 2]),
            zone(&[0, 1, 2]),
        ];
        assert_eq!(zs.zones(), expected.as_slice());
    }

    #[test]
    fn flex_size_one_is_singletons() {
        let d = collinear();
        let adj = adjacency_from_knn(&d, 2).unwrap();
        let zs = flex_zones(&d, &adj, 1).unwrap();
        assert_eq!(zs.zones(), &[zone(&[0]), zone(&[1]), zone(&[2])]);
    }

    #[test]
    fn inconsistent_adjacency_rejected() {
        let mut nb = vec![BTreeSet::new(); 3];
        nb[0].insert(1);
        assert!(AdjacencyRelation::new(nb).is_err());
        let mut nb = vec![BTreeSet::new(); 2];
        nb[0].insert(0);
        assert!(AdjacencyRelation::new(nb).is_err());
        let adj = AdjacencyRelation::from_edges(2, &[(0, 1)]).unwrap();
        assert!(matches!(flex_zones(&collinear(), &adj, 2), Err(Error::Domain(_))));
    }

    #[test]
    fn invalid_distance_matrices_rejected() {
        assert!(DistanceMatrix::new(2, vec![0.0, 1.0, 2.0, 0.0]).is_err());
        assert!(DistanceMatrix::new(2, vec![0.0, 0.0, 0.0, 0.0]).is_err());
        assert!(DistanceMatrix::new(2, vec![1.0, 1.0, 1.0, 0.0]).is_err());
        assert!(DistanceMatrix::new(2, vec![0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn zone_rejects_empty_and_duplicates() {
        assert!(Zone::new(vec![]).is_err());
        assert!(Zone::new(vec![2, 2]).is_err());
        assert_eq!(zone(&[3, 1]).members(), &[1, 3]);
    }

    #[test]
    fn intersection_counts_shared_members() {
        assert_eq!(zone(&[1, 2, 3]).intersection_size(&zone(&[2, 3, 4, 5])), 2);
        assert_eq!(zone(&[1]).intersection_size(&zone(&[2])), 0);
    }
}
