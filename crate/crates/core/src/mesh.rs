//! Nodes-and-elements meshes (1D segments, 2D triangles) with the pruning,
//! clustering and centroid refinement used by the adaptive loop.

use std::collections::HashMap;

use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};
use spade::{ConstrainedDelaunayTriangulation, HasPosition, Point2, Triangulation};

use crate::error::{Error, Result};

/// Nodes closer than this are considered coincident.
pub const COINCIDENCE_TOL: f64 = 1e-12;

/// Axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::invalid("domain bounds must have equal, nonzero length"));
        }
        if lower.iter().zip(&upper).any(|(a, b)| !(a < b)) {
            return Err(Error::invalid("domain lower bounds must be below upper bounds"));
        }
        Ok(BoxDomain { lower, upper })
    }

    pub fn unit(dim: usize) -> Self {
        BoxDomain {
            lower: vec![0.0; dim],
            upper: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (a, b))| *a <= *v && *v <= *b)
    }
}

/// A 1D or 2D mesh. Nodes are stored flat with stride `dim`, elements flat
/// with stride `dim + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    dim: usize,
    nodes: Vec<f64>,
    elements: Vec<usize>,
    generation: usize,
}

/// Connected set of elements.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    pub elements: Vec<usize>,
    /// Sorted, unique.
    pub nodes: Vec<usize>,
    pub generation: usize,
}

#[derive(Debug, Clone)]
pub struct Pruned {
    pub mesh: Mesh,
    /// `node_map[old] = Some(new)` for surviving nodes.
    pub node_map: Vec<Option<usize>>,
    pub removed_elements: usize,
}

#[derive(Debug, Clone)]
pub struct Refined {
    pub mesh: Mesh,
    pub inserted: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineOptions {
    pub h_min: f64,
    pub min_measure: f64,
}

impl RefineOptions {
    /// Discard threshold tied to `h_min`: `h_min/2` in 1D, `√3/4·h_min²` in 2D.
    pub fn new(dim: usize, h_min: f64) -> Self {
        let min_measure = if dim == 1 { 0.5 * h_min } else { 3f64.sqrt() / 4.0 * h_min * h_min };
        RefineOptions { h_min, min_measure }
    }
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    dimension: usize,
    nodes: Vec<Vec<f64>>,
    elements: Vec<Vec<usize>>,
    generation: usize,
}

impl Mesh {
    /// Builds a mesh after checking all structural invariants.
    pub fn new(dim: usize, nodes: Vec<f64>, elements: Vec<usize>, generation: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::invalid(format!("mesh dimension must be 1 or 2, got {dim}")));
        }
        if !nodes.len().is_multiple_of(dim) || !elements.len().is_multiple_of(dim + 1) {
            return Err(Error::invalid("flat node/element buffers have the wrong stride"));
        }
        let mesh = Mesh {
            dim,
            nodes,
            elements,
            generation,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn empty(dim: usize, generation: usize) -> Self {
        Mesh {
            dim,
            nodes: Vec::new(),
            elements: Vec::new(),
            generation,
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        for (e, el) in self.elements.chunks(self.dim + 1).enumerate() {
            for (i, &a) in el.iter().enumerate() {
                if a >= n {
                    return Err(Error::invalid(format!("element {e} references node {a} of {n}")));
                }
                if el[..i].contains(&a) {
                    return Err(Error::invalid(format!("element {e} repeats node {a}")));
                }
            }
            if self.element_measure(e) <= 0.0 {
                return Err(Error::invalid(format!("element {e} is degenerate")));
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| self.node(a)[0].total_cmp(&self.node(b)[0]));
        for (i, &a) in order.iter().enumerate() {
            for &b in &order[i + 1..] {
                if self.node(b)[0] - self.node(a)[0] > COINCIDENCE_TOL {
                    break;
                }
                if dist(self.node(a), self.node(b)) <= COINCIDENCE_TOL {
                    return Err(Error::invalid(format!("nodes {a} and {b} coincide")));
                }
            }
        }
        Ok(())
    }

    /// Tensor-product mesh with `counts[i]` nodes along axis `i`.
    ///
    /// In 2D node `(i, j)` has index `i + j·nx` and each cell is split along
    /// its lower-left to upper-right diagonal.
    pub fn uniform(domain: &BoxDomain, counts: &[usize]) -> Result<Self> {
        let dim = domain.dim();
        if counts.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: counts.len(),
            });
        }
        if counts.iter().any(|&c| c < 2) {
            return Err(Error::invalid("uniform mesh needs at least 2 nodes per axis"));
        }
        let coord = |axis: usize, i: usize| {
            let (a, b) = (domain.lower[axis], domain.upper[axis]);
            a + (b - a) * i as f64 / (counts[axis] - 1) as f64
        };
        match dim {
            1 => {
                let nodes = (0..counts[0]).map(|i| coord(0, i)).collect();
                let elements = (0..counts[0] - 1).flat_map(|i| [i, i + 1]).collect();
                Mesh::new(1, nodes, elements, 0)
            }
            2 => {
                let (nx, ny) = (counts[0], counts[1]);
                let mut nodes = Vec::with_capacity(2 * nx * ny);
                for j in 0..ny {
                    for i in 0..nx {
                        nodes.extend([coord(0, i), coord(1, j)]);
                    }
                }
                let mut elements = Vec::with_capacity(6 * (nx - 1) * (ny - 1));
                for j in 0..ny - 1 {
                    for i in 0..nx - 1 {
                        let a = i + j * nx;
                        let (b, c, d) = (a + 1, a + 1 + nx, a + nx);
                        elements.extend([a, b, c, a, c, d]);
                    }
                }
                Mesh::new(2, nodes, elements, 0)
            }
            _ => Err(Error::invalid(format!("mesh dimension must be 1 or 2, got {dim}"))),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    pub fn with_generation(mut self, generation: usize) -> Self {
        self.generation = generation;
        self
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len() / self.dim
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len() / (self.dim + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn node(&self, k: usize) -> &[f64] {
        &self.nodes[k * self.dim..(k + 1) * self.dim]
    }

    /// Flat coordinate buffer.
    pub fn coords(&self) -> &[f64] {
        &self.nodes
    }

    pub fn nodes(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.nodes.chunks_exact(self.dim)
    }

    pub fn element(&self, e: usize) -> &[usize] {
        let s = self.dim + 1;
        &self.elements[e * s..(e + 1) * s]
    }

    pub fn elements(&self) -> impl ExactSizeIterator<Item = &[usize]> + '_ {
        self.elements.chunks_exact(self.dim + 1)
    }

    /// Length (1D) or area (2D).
    pub fn element_measure(&self, e: usize) -> f64 {
        let el = self.element(e);
        match self.dim {
            1 => (self.node(el[1])[0] - self.node(el[0])[0]).abs(),
            _ => triangle_area(self.node(el[0]), self.node(el[1]), self.node(el[2])).abs(),
        }
    }

    pub fn element_centroid(&self, e: usize) -> Vec<f64> {
        let el = self.element(e);
        let mut c = vec![0.0; self.dim];
        for &k in el {
            for (ci, xi) in c.iter_mut().zip(self.node(k)) {
                *ci += xi;
            }
        }
        c.iter_mut().for_each(|v| *v /= el.len() as f64);
        c
    }

    pub fn total_measure(&self) -> f64 {
        (0..self.num_elements()).map(|e| self.element_measure(e)).sum()
    }

    /// Smallest distance between two distinct nodes (∞ with fewer than two).
    pub fn min_spacing(&self) -> f64 {
        let mut best = f64::INFINITY;
        for a in 0..self.num_nodes() {
            for b in a + 1..self.num_nodes() {
                best = best.min(dist(self.node(a), self.node(b)));
            }
        }
        best
    }

    /// Index of the node nearest to `x` (first on ties).
    pub fn nearest_node(&self, x: &[f64]) -> Option<usize> {
        let mut best = None;
        let mut best_d = f64::INFINITY;
        for (k, p) in self.nodes().enumerate() {
            let d = dist2(p, x);
            if d < best_d {
                best_d = d;
                best = Some(k);
            }
        }
        best
    }

    /// Keeps exactly the elements incident to at least one active node.
    pub fn prune(&self, active: &[usize]) -> Pruned {
        let mut is_active = vec![false; self.num_nodes()];
        for &k in active {
            if k < is_active.len() {
                is_active[k] = true;
            }
        }
        let mut node_map = vec![None; self.num_nodes()];
        let mut nodes = Vec::new();
        let mut elements = Vec::new();
        let mut next = 0;
        for el in self.elements() {
            if !el.iter().any(|&k| is_active[k]) {
                continue;
            }
            for &k in el {
                let new = *node_map[k].get_or_insert_with(|| {
                    nodes.extend_from_slice(self.node(k));
                    next += 1;
                    next - 1
                });
                elements.push(new);
            }
        }
        let kept = elements.len() / (self.dim + 1);
        Pruned {
            mesh: Mesh {
                dim: self.dim,
                nodes,
                elements,
                generation: self.generation,
            },
            node_map,
            removed_elements: self.num_elements() - kept,
        }
    }

    /// Connected components: shared edges in 2D, shared nodes in 1D.
    /// Ordered by smallest node index.
    pub fn clusters(&self) -> Vec<Cluster> {
        let ne = self.num_elements();
        let mut uf = UnionFind::<usize>::new(ne);
        let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
        for (e, el) in self.elements().enumerate() {
            let keys: Vec<(usize, usize)> = match self.dim {
                1 => vec![(el[0], el[0]), (el[1], el[1])],
                _ => (0..3)
                    .map(|i| {
                        let (a, b) = (el[i], el[(i + 1) % 3]);
                        (a.min(b), a.max(b))
                    })
                    .collect(),
            };
            for key in keys {
                match seen.get(&key) {
                    Some(&other) => {
                        uf.union(e, other);
                    }
                    None => {
                        seen.insert(key, e);
                    }
                }
            }
        }
        let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
        for e in 0..ne {
            groups.entry(uf.find(e)).or_default().push(e);
        }
        let mut clusters: Vec<Cluster> = groups
            .into_values()
            .map(|elements| {
                let mut nodes: Vec<usize> = elements.iter().flat_map(|&e| self.element(e).iter().copied()).collect();
                nodes.sort_unstable();
                nodes.dedup();
                Cluster {
                    elements,
                    nodes,
                    generation: self.generation,
                }
            })
            .collect();
        clusters.sort_by_key(|c| c.nodes[0]);
        clusters
    }

    /// Centroid refinement of every cluster followed by per-cluster
    /// re-meshing. Existing node indices are preserved; new nodes are appended
    /// in cluster order, then element order.
    pub fn refine(&self, clusters: &[Cluster], opts: RefineOptions) -> Result<Refined> {
        if !(opts.h_min > 0.0) {
            return Err(Error::invalid("h_min must be positive"));
        }
        let mut points: Vec<Vec<f64>> = self.nodes().map(<[f64]>::to_vec).collect();
        let mut new_per_cluster: Vec<Vec<usize>> = vec![Vec::new(); clusters.len()];
        for (ci, cluster) in clusters.iter().enumerate() {
            for &e in &cluster.elements {
                if self.element_measure(e) < opts.min_measure {
                    continue;
                }
                let c = self.element_centroid(e);
                if points.iter().all(|p| dist(p, &c) >= opts.h_min) {
                    new_per_cluster[ci].push(points.len());
                    points.push(c);
                }
            }
        }
        let inserted = points.len() - self.num_nodes();

        let mut elements = Vec::with_capacity(self.elements.len());
        for (cluster, added) in clusters.iter().zip(&new_per_cluster) {
            if added.is_empty() {
                for &e in &cluster.elements {
                    elements.extend_from_slice(self.element(e));
                }
                continue;
            }
            let ids: Vec<usize> = cluster.nodes.iter().chain(added).copied().collect();
            match self.dim {
                1 => {
                    let mut ids = ids;
                    ids.sort_by(|&a, &b| points[a][0].total_cmp(&points[b][0]));
                    for w in ids.windows(2) {
                        elements.extend([w[0], w[1]]);
                    }
                }
                _ => elements.extend(self.remesh_region(cluster, &ids, &points)?),
            }
        }
        let nodes = points.into_iter().flatten().collect();
        Ok(Refined {
            mesh: Mesh {
                dim: self.dim,
                nodes,
                elements,
                generation: self.generation + 1,
            },
            inserted,
        })
    }

    /// Refines a single cluster; see [`Mesh::refine`].
    pub fn refine_cluster(&self, cluster: &Cluster, opts: RefineOptions) -> Result<Refined> {
        let mut others = self.clusters();
        others.retain(|c| c.elements.iter().all(|e| !cluster.elements.contains(e)));
        others.insert(0, cluster.clone());
        self.refine(&others, opts)
    }

    /// Constrained Delaunay triangulation of `ids` with the cluster boundary
    /// as constraints, keeping only faces inside the original region.
    fn remesh_region(&self, cluster: &Cluster, ids: &[usize], points: &[Vec<f64>]) -> Result<Vec<usize>> {
        let mut cdt = ConstrainedDelaunayTriangulation::<Site>::new();
        let mut handle = HashMap::with_capacity(ids.len());
        for &id in ids {
            let p = &points[id];
            let h = cdt
                .insert(Site { x: p[0], y: p[1], id })
                .map_err(|e| Error::invalid(format!("triangulation insert failed: {e:?}")))?;
            handle.insert(id, h);
        }
        let mut edge_count: HashMap<(usize, usize), usize> = HashMap::new();
        for &e in &cluster.elements {
            let el = self.element(e);
            for i in 0..3 {
                let (a, b) = (el[i], el[(i + 1) % 3]);
                *edge_count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let mut boundary: Vec<(usize, usize)> = edge_count.into_iter().filter(|&(_, n)| n == 1).map(|(k, _)| k).collect();
        boundary.sort_unstable();
        for (a, b) in boundary {
            cdt.try_add_constraint(handle[&a], handle[&b]);
        }
        let region: Vec<[&[f64]; 3]> = cluster
            .elements
            .iter()
            .map(|&e| {
                let el = self.element(e);
                [self.node(el[0]), self.node(el[1]), self.node(el[2])]
            })
            .collect();
        let mut faces: Vec<[usize; 3]> = Vec::new();
        for face in cdt.inner_faces() {
            let v = face.vertices().map(|h| *h.data());
            let pts = v.map(|s| [s.x, s.y]);
            if triangle_area(&pts[0], &pts[1], &pts[2]).abs() <= f64::MIN_POSITIVE {
                continue;
            }
            let c = [
                (pts[0][0] + pts[1][0] + pts[2][0]) / 3.0,
                (pts[0][1] + pts[1][1] + pts[2][1]) / 3.0,
            ];
            if region.iter().any(|t| point_in_triangle(&c, t)) {
                faces.push(v.map(|s| s.id));
            }
        }
        // spade's face order depends on insertion history only; sort for a
        // canonical element order anyway.
        for f in &mut faces {
            let m = (0..3).min_by_key(|&i| f[i]).unwrap();
            f.rotate_left(m);
        }
        faces.sort_unstable();
        Ok(faces.into_iter().flatten().collect())
    }

    pub fn to_json(&self) -> Result<String> {
        let snap = Snapshot {
            dimension: self.dim,
            nodes: self.nodes().map(<[f64]>::to_vec).collect(),
            elements: self.elements().map(<[usize]>::to_vec).collect(),
            generation: self.generation,
        };
        Ok(serde_json::to_string_pretty(&snap)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let snap: Snapshot = serde_json::from_str(s)?;
        let dim = snap.dimension;
        if snap.nodes.iter().any(|p| p.len() != dim) || snap.elements.iter().any(|e| e.len() != dim + 1) {
            return Err(Error::invalid("mesh snapshot entries have the wrong arity"));
        }
        Mesh::new(
            dim,
            snap.nodes.into_iter().flatten().collect(),
            snap.elements.into_iter().flatten().collect(),
            snap.generation,
        )
    }
}

#[derive(Debug, Clone, Copy)]
struct Site {
    x: f64,
    y: f64,
    id: usize,
}

impl HasPosition for Site {
    type Scalar = f64;

    fn position(&self) -> Point2<f64> {
        Point2::new(self.x, self.y)
    }
}

/// Signed area, positive for counter-clockwise vertices.
pub(crate) fn triangle_area(a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn point_in_triangle(p: &[f64], t: &[&[f64]; 3]) -> bool {
    let area = triangle_area(t[0], t[1], t[2]);
    let eps = -1e-12 * area.abs();
    let s = area.signum();
    (0..3).all(|i| s * triangle_area(t[i], t[(i + 1) % 3], p) >= eps)
}

pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    dist2(a, b).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(n: usize) -> Mesh {
        Mesh::uniform(&BoxDomain::unit(1), &[n]).unwrap()
    }

    #[test]
    fn uniform_1d_spacing() {
        let m = chain(16);
        assert_eq!(m.num_elements(), 15);
        assert!((m.node(1)[0] - 1.0 / 15.0).abs() < 1e-15);
        assert!((chain(51).node(1)[0] - 0.02).abs() < 1e-15);
    }

    #[test]
    fn uniform_2d_triangle_count() {
        let m = Mesh::uniform(&BoxDomain::unit(2), &[15, 15]).unwrap();
        assert_eq!(m.num_elements(), 392);
        assert!((m.total_measure() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_rejects_small_counts() {
        assert!(Mesh::uniform(&BoxDomain::unit(1), &[1]).is_err());
    }

    #[test]
    fn prune_chain_around_single_node() {
        let p = chain(5).prune(&[2]);
        assert_eq!(p.mesh.num_elements(), 2);
        assert_eq!(p.mesh.num_nodes(), 3);
        assert_eq!(p.removed_elements, 2);
        assert_eq!(p.node_map[2], Some(1));
        assert_eq!(p.node_map[0], None);
    }

    #[test]
    fn prune_extremes() {
        let m = chain(6);
        let all: Vec<usize> = (0..6).collect();
        assert_eq!(m.prune(&all).mesh, m);
        assert!(m.prune(&[]).mesh.is_empty());
    }

    #[test]
    fn vertex_touching_triangles_are_separate_clusters() {
        let m = Mesh::new(2, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0], vec![0, 1, 2, 0, 3, 4], 0).unwrap();
        assert_eq!(m.clusters().len(), 2);
    }

    #[test]
    fn segment_refinement_respects_h_min() {
        let m = Mesh::new(1, vec![0.0, 0.1], vec![0, 1], 0).unwrap();
        let cl = m.clusters();
        let r = m.refine(&cl, RefineOptions::new(1, 0.2)).unwrap();
        assert_eq!(r.inserted, 0);
        assert_eq!(r.mesh.num_nodes(), 2);
        let r = m.refine(&cl, RefineOptions::new(1, 0.02)).unwrap();
        assert_eq!(r.inserted, 1);
        assert!((r.mesh.node(2)[0] - 0.05).abs() < 1e-15);
        assert_eq!(r.mesh.num_elements(), 2);
    }

    #[test]
    fn unit_triangle_gains_centroid() {
        let m = Mesh::new(2, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0], vec![0, 1, 2], 0).unwrap();
        let r = m.refine(&m.clusters(), RefineOptions::new(2, 0.1)).unwrap();
        assert_eq!(r.inserted, 1);
        assert!((r.mesh.node(3)[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((r.mesh.node(3)[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.mesh.num_elements(), 3);
        assert!((r.mesh.total_measure() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn nonconvex_region_is_preserved() {
        // L-shaped cluster: remeshing must not fill the notch.
        let m = Mesh::uniform(&BoxDomain::unit(2), &[3, 3]).unwrap();
        let keep = [0usize, 1, 2, 3, 4, 5];
        let elements: Vec<usize> = keep.iter().flat_map(|&e| m.element(e).to_vec()).collect();
        let l = Mesh::new(2, m.coords().to_vec(), elements, 0).unwrap();
        let before = l.total_measure();
        let r = l.refine(&l.clusters(), RefineOptions::new(2, 0.05)).unwrap();
        assert!(r.inserted > 0);
        assert!((r.mesh.total_measure() - before).abs() < 1e-12);
        Mesh::new(2, r.mesh.coords().to_vec(), r.mesh.elements.clone(), 1).unwrap();
    }

    #[test]
    fn json_round_trip() {
        let m = Mesh::uniform(&BoxDomain::unit(2), &[3, 4]).unwrap().with_generation(3);
        let back = Mesh::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
