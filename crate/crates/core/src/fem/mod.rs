//! P1 finite elements for steady diffusion and plane-stress elasticity.
//!
//! Operators are assembled into symmetric band storage and solved with a
//! band Cholesky factorization. The factorization is kept on the solution so
//! adjoint systems for every output component reuse it.

mod band;

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DVector;

pub use band::{BandCholesky, BandMatrix};

use crate::error::{Error, Result};
use crate::mesh::{BoundaryTag, Mesh};

/// Assembled symmetric stiffness operator with `dofs_per_node` unknowns per node.
#[derive(Debug, Clone)]
pub struct StiffnessOperator {
    pub matrix: BandMatrix,
    pub dofs_per_node: usize,
}

impl StiffnessOperator {
    pub fn n_dofs(&self) -> usize {
        self.matrix.size()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.matrix.mul_vec(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointLoad {
    pub node: usize,
    pub dof: usize,
    pub magnitude: f64,
}

/// Dirichlet values per tag (one value per nodal dof), Neumann flux per tag
/// (nodal values along the ordered boundary nodes, linearly interpolated),
/// and nodal point loads.
#[derive(Debug, Clone, Default)]
pub struct BoundaryConditions {
    pub dirichlet: BTreeMap<BoundaryTag, Vec<f64>>,
    pub neumann_flux: BTreeMap<BoundaryTag, Vec<f64>>,
    pub point_loads: Vec<PointLoad>,
}

impl BoundaryConditions {
    pub fn validate(&self, mesh: &Mesh, dofs_per_node: usize) -> Result<()> {
        if let Some(tag) = self.dirichlet.keys().find(|t| self.neumann_flux.contains_key(t)) {
            return Err(Error::InvalidBoundary(format!("tag {tag} is both Dirichlet and Neumann")));
        }
        if self.dirichlet.is_empty() {
            return Err(Error::InvalidBoundary("no Dirichlet degree of freedom; system is singular".into()));
        }
        for (tag, vals) in &self.dirichlet {
            if vals.len() != dofs_per_node {
                return Err(Error::InvalidBoundary(format!(
                    "Dirichlet on {tag} has {} values for {dofs_per_node} dofs per node",
                    vals.len()
                )));
            }
            if mesh.edges_with_tag(*tag).next().is_none() {
                return Err(Error::InvalidBoundary(format!("no boundary edges tagged {tag}")));
            }
        }
        for (tag, flux) in &self.neumann_flux {
            if dofs_per_node != 1 {
                return Err(Error::InvalidBoundary("flux boundaries apply to scalar problems only".into()));
            }
            let n = mesh.boundary_nodes(*tag).len();
            if flux.len() != n {
                return Err(Error::InvalidBoundary(format!("flux on {tag} has {} values for {n} nodes", flux.len())));
            }
        }
        for p in &self.point_loads {
            if p.node >= mesh.n_nodes() || p.dof >= dofs_per_node {
                return Err(Error::InvalidBoundary(format!("point load at node {} dof {} is out of range", p.node, p.dof)));
            }
        }
        Ok(())
    }

    /// Sorted list of constrained dofs with their prescribed values.
    pub fn fixed_dofs(&self, mesh: &Mesh, dofs_per_node: usize) -> Vec<(usize, f64)> {
        let mut fixed = BTreeMap::new();
        for (tag, vals) in &self.dirichlet {
            for node in mesh.boundary_nodes(*tag) {
                for (d, v) in vals.iter().enumerate() {
                    fixed.insert(node * dofs_per_node + d, *v);
                }
            }
        }
        fixed.into_iter().collect()
    }
}

/// Element matrix of `∫ ∇φᵢ·∇φⱼ` on triangle `e`.
pub fn diffusion_element(mesh: &Mesh, e: usize) -> [[f64; 3]; 3] {
    let (b, c, area) = shape_gradients(mesh, e);
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = (b[i] * b[j] + c[i] * c[j]) / (4.0 * area);
        }
    }
    k
}

/// Plane-stress element matrix for unit Young's modulus, dofs ordered `(u₁, u₂)` per vertex.
pub fn elasticity_element(mesh: &Mesh, e: usize, nu: f64) -> [[f64; 6]; 6] {
    let (b, c, area) = shape_gradients(mesh, e);
    let s = 1.0 / (1.0 - nu * nu);
    let d = [[s, s * nu, 0.0], [s * nu, s, 0.0], [0.0, 0.0, s * (1.0 - nu) / 2.0]];
    // strain-displacement matrix, rows εxx, εyy, γxy
    let mut bm = [[0.0; 6]; 3];
    for i in 0..3 {
        bm[0][2 * i] = b[i] / (2.0 * area);
        bm[1][2 * i + 1] = c[i] / (2.0 * area);
        bm[2][2 * i] = c[i] / (2.0 * area);
        bm[2][2 * i + 1] = b[i] / (2.0 * area);
    }
    let mut db = [[0.0; 6]; 3];
    for r in 0..3 {
        for col in 0..6 {
            db[r][col] = (0..3).map(|k| d[r][k] * bm[k][col]).sum();
        }
    }
    let mut k = [[0.0; 6]; 6];
    for i in 0..6 {
        for j in 0..6 {
            k[i][j] = area * (0..3).map(|r| bm[r][i] * db[r][j]).sum::<f64>();
        }
    }
    k
}

fn shape_gradients(mesh: &Mesh, e: usize) -> ([f64; 3], [f64; 3], f64) {
    let t = mesh.triangles()[e];
    let p = t.map(|n| mesh.nodes()[n]);
    let b = [p[1][1] - p[2][1], p[2][1] - p[0][1], p[0][1] - p[1][1]];
    let c = [p[2][0] - p[1][0], p[0][0] - p[2][0], p[1][0] - p[0][0]];
    (b, c, mesh.area(e))
}

fn dof_bandwidth(mesh: &Mesh, dofs_per_node: usize) -> usize {
    mesh.triangles()
        .iter()
        .map(|t| {
            let lo = *t.iter().min().unwrap();
            let hi = *t.iter().max().unwrap();
            (hi - lo) * dofs_per_node + dofs_per_node - 1
        })
        .max()
        .unwrap_or(0)
}

pub fn assemble_diffusion(mesh: &Mesh, conductivity: &[f64]) -> Result<StiffnessOperator> {
    if conductivity.len() != mesh.n_elements() {
        return Err(Error::DimensionMismatch { what: "conductivity", expected: mesh.n_elements(), got: conductivity.len() });
    }
    if let Some((e, v)) = conductivity.iter().enumerate().find(|(_, v)| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidMaterial(format!("conductivity {v} at element {e} is not positive")));
    }
    let mut k = BandMatrix::zeros(mesh.n_nodes(), dof_bandwidth(mesh, 1));
    for (e, tri) in mesh.triangles().iter().enumerate() {
        let ke = diffusion_element(mesh, e);
        for i in 0..3 {
            for j in 0..=i {
                let (a, b) = (tri[i], tri[j]);
                k.add(a, b, conductivity[e] * ke[i][j]);
            }
        }
    }
    Ok(StiffnessOperator { matrix: k, dofs_per_node: 1 })
}

pub fn assemble_elasticity(mesh: &Mesh, youngs: &[f64], nu: f64) -> Result<StiffnessOperator> {
    if youngs.len() != mesh.n_elements() {
        return Err(Error::DimensionMismatch { what: "youngs modulus", expected: mesh.n_elements(), got: youngs.len() });
    }
    if !(0.0..0.5).contains(&nu) {
        return Err(Error::InvalidMaterial(format!("Poisson ratio {nu} outside [0, 0.5)")));
    }
    if let Some((e, v)) = youngs.iter().enumerate().find(|(_, v)| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidMaterial(format!("Young's modulus {v} at element {e} is not positive")));
    }
    let mut k = BandMatrix::zeros(2 * mesh.n_nodes(), dof_bandwidth(mesh, 2));
    for (e, tri) in mesh.triangles().iter().enumerate() {
        let ke = elasticity_element(mesh, e, nu);
        let dofs = element_dofs(tri, 2);
        for i in 0..6 {
            for j in 0..=i {
                k.add(dofs[i], dofs[j], youngs[e] * ke[i][j]);
            }
        }
    }
    Ok(StiffnessOperator { matrix: k, dofs_per_node: 2 })
}

pub fn element_dofs(tri: &[usize; 3], dofs_per_node: usize) -> Vec<usize> {
    tri.iter().flat_map(|&n| (0..dofs_per_node).map(move |d| n * dofs_per_node + d)).collect()
}

/// Sparse map from nodal flux values along `tag` to nodal loads: entries `(node, flux_index, weight)`.
///
/// Uses the consistent 1D mass matrix of linear interpolation on each edge.
pub fn edge_load_map(mesh: &Mesh, tag: BoundaryTag) -> Vec<(usize, usize, f64)> {
    let nodes = mesh.boundary_nodes(tag);
    let index: BTreeMap<usize, usize> = nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let mut entries = Vec::new();
    for edge in mesh.edges_with_tag(tag) {
        let [a, b] = edge.nodes;
        let (pa, pb) = (mesh.nodes()[a], mesh.nodes()[b]);
        let h = ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt();
        let (ia, ib) = (index[&a], index[&b]);
        entries.push((a, ia, h / 3.0));
        entries.push((a, ib, h / 6.0));
        entries.push((b, ib, h / 3.0));
        entries.push((b, ia, h / 6.0));
    }
    entries
}

/// Load vector from Neumann fluxes and point loads.
pub fn assemble_load(mesh: &Mesh, bc: &BoundaryConditions, dofs_per_node: usize) -> Vec<f64> {
    let mut f = vec![0.0; mesh.n_nodes() * dofs_per_node];
    for (tag, flux) in &bc.neumann_flux {
        for (node, k, w) in edge_load_map(mesh, *tag) {
            f[node * dofs_per_node] += w * flux[k];
        }
    }
    for p in &bc.point_loads {
        f[p.node * dofs_per_node + p.dof] += p.magnitude;
    }
    f
}

/// Linear functionals of the nodal field, one sparse row per output.
#[derive(Debug, Clone, Default)]
pub struct OutputOperator {
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl OutputOperator {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn apply(&self, field: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.rows.len(), self.rows.iter().map(|r| r.iter().map(|&(i, w)| w * field[i]).sum()))
    }
}

/// Nodal solution of a constrained linear system with its retained factorization.
#[derive(Debug, Clone)]
pub struct SystemSolution {
    pub nodal_field: Vec<f64>,
    pub outputs: DVector<f64>,
    pub factorization: Arc<BandCholesky>,
    pub fixed_dofs: Vec<usize>,
    pub relative_residual: f64,
    /// Identifies the evaluation point this solution belongs to.
    pub fingerprint: u64,
}

impl SystemSolution {
    /// Solves `K λ = rhs` with homogeneous constraints, reusing the factorization.
    pub fn adjoint_solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut b = rhs.to_vec();
        for &d in &self.fixed_dofs {
            b[d] = 0.0;
        }
        self.factorization.solve_in_place(&mut b);
        b
    }

    /// Fills `outputs` from the nodal field.
    pub fn extract(&mut self, op: &OutputOperator) {
        self.outputs = op.apply(&self.nodal_field);
    }
}

pub fn solve_forward(k: &StiffnessOperator, bc: &BoundaryConditions, mesh: &Mesh, load: &[f64]) -> Result<SystemSolution> {
    bc.validate(mesh, k.dofs_per_node)?;
    let n = k.n_dofs();
    if load.len() != n {
        return Err(Error::DimensionMismatch { what: "load vector", expected: n, got: load.len() });
    }
    let fixed = bc.fixed_dofs(mesh, k.dofs_per_node);
    let mut a = k.matrix.clone();
    let mut b = load.to_vec();
    let bw = a.bandwidth();
    for &(i, g) in &fixed {
        if g != 0.0 {
            let lo = i.saturating_sub(bw);
            let hi = (i + bw).min(n - 1);
            for j in lo..=hi {
                b[j] -= k.matrix.get(j, i) * g;
            }
        }
    }
    for &(i, g) in &fixed {
        a.constrain(i);
        b[i] = g;
    }
    let reference = a.clone();
    let chol = BandCholesky::new(a)?;
    let mut x = chol.solve(&b);
    // two refinement sweeps with an extra-precise residual; fluxes that cancel
    // over the domain otherwise leave round-off far above the output scale
    for _ in 0..2 {
        let dx = chol.solve(&reference.residual(&x, &b));
        x.iter_mut().zip(&dx).for_each(|(v, d)| *v += d);
    }
    let r = reference.mul_vec(&x);
    let num: f64 = r.iter().zip(&b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let relative_residual = if den > 0.0 { num / den } else { num };
    Ok(SystemSolution {
        nodal_field: x,
        outputs: DVector::zeros(0),
        factorization: Arc::new(chol),
        fixed_dofs: fixed.into_iter().map(|(i, _)| i).collect(),
        relative_residual,
        fingerprint: 0,
    })
}

/// Stable hash of an evaluation point, used to detect stale solutions.
pub fn point_fingerprint(theta: &[f64], z: &[f64]) -> u64 {
    use std::hash::{Hash, Hasher};
    let mut h = std::collections::hash_map::DefaultHasher::new();
    theta.len().hash(&mut h);
    for v in theta.iter().chain(z) {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}
