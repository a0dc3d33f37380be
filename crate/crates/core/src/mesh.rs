//! Triangulated rectangular domains.
//!
//! Regular meshes split every grid cell along the same diagonal, so an
//! `nx × ny` grid carries `2·nx·ny` triangles over `(nx+1)·(ny+1)` nodes.
//! Nodes are numbered column by column (`i·(ny+1) + j`), which keeps the
//! bandwidth of assembled operators at `ny + 2` nodes.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BoundaryTag {
    Left,
    Right,
    Bottom,
    Top,
}

impl BoundaryTag {
    pub const ALL: [BoundaryTag; 4] = [Self::Left, Self::Right, Self::Bottom, Self::Top];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Left => "left",
            Self::Right => "right",
            Self::Bottom => "bottom",
            Self::Top => "top",
        }
    }
}

impl fmt::Display for BoundaryTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryEdge {
    pub tag: BoundaryTag,
    pub nodes: [usize; 2],
}

#[derive(Debug, Clone)]
pub struct Mesh {
    nodes: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary_edges: Vec<BoundaryEdge>,
    centroids: Vec<Point>,
}

/// Barycentric location of a point inside one triangle.
#[derive(Debug, Clone, Copy)]
pub struct Location {
    pub element: usize,
    pub weights: [f64; 3],
}

pub fn build_regular_mesh(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Mesh> {
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidMesh(format!("cell counts must be positive, got {nx}x{ny}")));
    }
    if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
        return Err(Error::InvalidMesh(format!("lengths must be positive, got {lx}x{ly}")));
    }
    let node = |i: usize, j: usize| i * (ny + 1) + j;
    let hx = lx / nx as f64;
    let hy = ly / ny as f64;

    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    for i in 0..=nx {
        for j in 0..=ny {
            // exact end coordinates so boundary probes land on nodes
            let x = if i == nx { lx } else { i as f64 * hx };
            let y = if j == ny { ly } else { j as f64 * hy };
            nodes.push([x, y]);
        }
    }

    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for i in 0..nx {
        for j in 0..ny {
            let a = node(i, j);
            let b = node(i + 1, j);
            let c = node(i + 1, j + 1);
            let d = node(i, j + 1);
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }

    let mut boundary_edges = Vec::with_capacity(2 * (nx + ny));
    for i in 0..nx {
        boundary_edges.push(BoundaryEdge { tag: BoundaryTag::Bottom, nodes: [node(i, 0), node(i + 1, 0)] });
    }
    for j in 0..ny {
        boundary_edges.push(BoundaryEdge { tag: BoundaryTag::Right, nodes: [node(nx, j), node(nx, j + 1)] });
    }
    for i in 0..nx {
        boundary_edges.push(BoundaryEdge { tag: BoundaryTag::Top, nodes: [node(i, ny), node(i + 1, ny)] });
    }
    for j in 0..ny {
        boundary_edges.push(BoundaryEdge { tag: BoundaryTag::Left, nodes: [node(0, j), node(0, j + 1)] });
    }

    Mesh::new(nodes, triangles, boundary_edges)
}

impl Mesh {
    /// Builds a mesh from raw parts, checking orientation and boundary consistency.
    pub fn new(nodes: Vec<Point>, triangles: Vec<[usize; 3]>, boundary_edges: Vec<BoundaryEdge>) -> Result<Self> {
        for (e, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&n| n >= nodes.len()) {
                return Err(Error::InvalidMesh(format!("triangle {e} references a missing node")));
            }
            let area = signed_area(&nodes, tri);
            if !(area > 0.0) {
                return Err(Error::InvalidMesh(format!("triangle {e} has non-positive area {area}")));
            }
        }
        let owners = edge_owners(&triangles);
        for be in &boundary_edges {
            let key = edge_key(be.nodes[0], be.nodes[1]);
            match owners.get(&key).map(Vec::len) {
                Some(1) => {}
                Some(k) => {
                    return Err(Error::InvalidMesh(format!(
                        "boundary edge {:?} is shared by {k} triangles",
                        be.nodes
                    )))
                }
                None => return Err(Error::InvalidMesh(format!("boundary edge {:?} is not a mesh edge", be.nodes))),
            }
        }
        let centroids = triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|n| nodes[n]);
                [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
            })
            .collect();
        Ok(Self { nodes, triangles, boundary_edges, centroids })
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    pub fn centroids(&self) -> &[Point] {
        &self.centroids
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_elements(&self) -> usize {
        self.triangles.len()
    }

    pub fn area(&self, element: usize) -> f64 {
        signed_area(&self.nodes, &self.triangles[element])
    }

    pub fn edges_with_tag(&self, tag: BoundaryTag) -> impl Iterator<Item = &BoundaryEdge> {
        self.boundary_edges.iter().filter(move |e| e.tag == tag)
    }

    /// Distinct nodes on a boundary segment, ordered along the segment.
    pub fn boundary_nodes(&self, tag: BoundaryTag) -> Vec<usize> {
        let mut ids: Vec<usize> = self.edges_with_tag(tag).flat_map(|e| e.nodes).collect();
        ids.sort_unstable();
        ids.dedup();
        let axis = match tag {
            BoundaryTag::Left | BoundaryTag::Right => 1,
            BoundaryTag::Bottom | BoundaryTag::Top => 0,
        };
        ids.sort_by(|&a, &b| self.nodes[a][axis].total_cmp(&self.nodes[b][axis]));
        ids
    }

    pub fn nearest_node(&self, p: Point) -> usize {
        let d2 = |q: &Point| (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2);
        (0..self.nodes.len())
            .min_by(|&a, &b| d2(&self.nodes[a]).total_cmp(&d2(&self.nodes[b])))
            .expect("mesh has nodes")
    }

    /// Finds the triangle containing `p` (boundary points included) and its barycentric weights.
    pub fn locate(&self, p: Point) -> Option<Location> {
        const TOL: f64 = 1e-10;
        self.triangles.iter().enumerate().find_map(|(e, tri)| {
            let [a, b, c] = tri.map(|n| self.nodes[n]);
            let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
            let l1 = ((p[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (p[1] - a[1])) / det;
            let l2 = ((b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1])) / det;
            let l0 = 1.0 - l1 - l2;
            (l0 >= -TOL && l1 >= -TOL && l2 >= -TOL).then_some(Location { element: e, weights: [l0, l1, l2] })
        })
    }

    /// Element adjacency through shared edges, each list sorted ascending.
    pub fn edge_neighbors(&self) -> Vec<Vec<usize>> {
        let mut nbrs = vec![Vec::with_capacity(3); self.triangles.len()];
        for owners in edge_owners(&self.triangles).values() {
            if let [a, b] = owners[..] {
                nbrs[a].push(b);
                nbrs[b].push(a);
            }
        }
        for list in &mut nbrs {
            list.sort_unstable();
        }
        nbrs
    }

    /// Plain-text export: `id x y` node lines, `id n1 n2 n3` triangle lines, `tag n1 n2` edge lines.
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (i, p) in self.nodes.iter().enumerate() {
            writeln!(out, "{i} {:.17e} {:.17e}", p[0], p[1])?;
        }
        for (i, t) in self.triangles.iter().enumerate() {
            writeln!(out, "{i} {} {} {}", t[0], t[1], t[2])?;
        }
        for e in &self.boundary_edges {
            writeln!(out, "{} {} {}", e.tag, e.nodes[0], e.nodes[1])?;
        }
        Ok(())
    }
}

/// CSV export of a per-element field: header `element_id,value`.
pub fn write_element_field<W: Write>(mut out: W, values: &[f64]) -> std::io::Result<()> {
    writeln!(out, "element_id,value")?;
    for (i, v) in values.iter().enumerate() {
        writeln!(out, "{i},{v:.17e}")?;
    }
    Ok(())
}

fn signed_area(nodes: &[Point], tri: &[usize; 3]) -> f64 {
    let [a, b, c] = tri.map(|n| nodes[n]);
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

fn edge_owners(triangles: &[[usize; 3]]) -> HashMap<(usize, usize), Vec<usize>> {
    let mut owners: HashMap<(usize, usize), Vec<usize>> = HashMap::with_capacity(triangles.len() * 2);
    for (e, t) in triangles.iter().enumerate() {
        for k in 0..3 {
            owners.entry(edge_key(t[k], t[(k + 1) % 3])).or_default().push(e);
        }
    }
    owners
}
