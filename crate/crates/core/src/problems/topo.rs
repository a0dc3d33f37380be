//! Plane-stress topology design with a random Young's modulus field.
//!
//! Domain `[0, Lx] × [0, Ly]` clamped on the left edge, with a downward point
//! force at the bottom-right corner. Each element mixes void and material
//! through `E = E_min + σ(z)(e^θ − E_min)`. Outputs are downward deflections
//! of the bottom edge at `x₁ = 0.2k`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{logit, point_outputs, sigmoid, ConstraintDescriptor, ForwardModel, Linearization, MuZPrior};
use crate::error::{Error, Result};
use crate::fem::{
    assemble_elasticity, elasticity_element, element_dofs, point_fingerprint, solve_forward, BoundaryConditions,
    OutputOperator, PointLoad, SystemSolution,
};
use crate::mesh::{build_regular_mesh, BoundaryTag, Mesh, Point};
use crate::random_field::{build_covariance, FieldPrior, CORRELATION_LENGTH, MU_THETA0, SIGMA_G2};

#[derive(Debug, Clone)]
pub struct TopologyConfig {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub sigma_g2: f64,
    pub x0: f64,
    pub mu_theta0: f64,
    pub tau_q_inv: f64,
    pub volume_fraction: f64,
    pub eps_c2: f64,
    pub load: f64,
    pub nu: f64,
    pub e_min: f64,
    /// Bimodal design prior: modes at `±m`, width `s2`.
    pub m: f64,
    pub s2: f64,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self {
            nx: 52,
            ny: 34,
            lx: 1.6,
            ly: 1.0,
            sigma_g2: SIGMA_G2,
            x0: CORRELATION_LENGTH,
            mu_theta0: MU_THETA0,
            tau_q_inv: 5e-6,
            volume_fraction: 0.4,
            eps_c2: 1e-10,
            load: 1e-3,
            nu: 0.3,
            e_min: 1e-10,
            m: 999f64.ln(),
            s2: 1.0,
        }
    }
}

#[derive(Debug)]
pub struct TopologyProblem {
    config: TopologyConfig,
    mesh: Mesh,
    prior: Arc<FieldPrior>,
    bc: BoundaryConditions,
    outputs: OutputOperator,
    observation_points: Vec<Point>,
    u_target: DVector<f64>,
    element_matrices: Vec<[[f64; 6]; 6]>,
}

impl TopologyProblem {
    pub fn new(config: TopologyConfig) -> Result<Self> {
        let mesh = build_regular_mesh(config.nx, config.ny, config.lx, config.ly)?;
        let prior = build_covariance(mesh.centroids(), config.sigma_g2, config.x0, config.mu_theta0)?;
        Self::with_prior(config, mesh, Arc::new(prior))
    }

    pub fn with_prior(config: TopologyConfig, mesh: Mesh, prior: Arc<FieldPrior>) -> Result<Self> {
        if prior.dim() != mesh.n_elements() {
            return Err(Error::DimensionMismatch { what: "field prior", expected: mesh.n_elements(), got: prior.dim() });
        }
        if !(config.volume_fraction > 0.0 && config.volume_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!("volume fraction {} outside (0, 1)", config.volume_fraction)));
        }
        if !(config.eps_c2 > 0.0 && config.tau_q_inv > 0.0 && config.s2 > 0.0 && config.e_min > 0.0) {
            return Err(Error::InvalidArgument("eps_c2, tau_Q_inv, s2 and E_min must be positive".into()));
        }
        let observation_points: Vec<Point> =
            (1..=8).map(|k| [0.2 * k as f64, 0.0]).filter(|p| p[0] <= config.lx + 1e-12).collect();
        let outputs = point_outputs(&mesh, &observation_points, 2, 1, -1.0)?;
        let u_target = DVector::from_iterator(observation_points.len(), (1..=observation_points.len()).map(|k| 6.25e-3 * k as f64));
        let mut bc = BoundaryConditions::default();
        bc.dirichlet.insert(BoundaryTag::Left, vec![0.0, 0.0]);
        let corner = mesh.nearest_node([config.lx, 0.0]);
        bc.point_loads.push(PointLoad { node: corner, dof: 1, magnitude: -config.load });
        bc.validate(&mesh, 2)?;
        let element_matrices = (0..mesh.n_elements()).map(|e| elasticity_element(&mesh, e, config.nu)).collect();
        Ok(Self { config, mesh, prior, bc, outputs, observation_points, u_target, element_matrices })
    }

    pub fn config(&self) -> &TopologyConfig {
        &self.config
    }

    pub fn observation_points(&self) -> &[Point] {
        &self.observation_points
    }

    pub fn youngs(&self, theta: &DVector<f64>, z: &DVector<f64>) -> Vec<f64> {
        let e_min = self.config.e_min;
        theta.iter().zip(z.iter()).map(|(t, zz)| e_min + sigmoid(*zz) * (t.exp() - e_min)).collect()
    }

    pub fn solve(&self, theta: &DVector<f64>, z: &DVector<f64>) -> Result<SystemSolution> {
        self.check_dims(theta, z)?;
        let k = assemble_elasticity(&self.mesh, &self.youngs(theta, z), self.config.nu)?;
        let mut load = vec![0.0; k.n_dofs()];
        for p in &self.bc.point_loads {
            load[2 * p.node + p.dof] += p.magnitude;
        }
        let mut sol = solve_forward(&k, &self.bc, &self.mesh, &load)?;
        sol.extract(&self.outputs);
        sol.fingerprint = point_fingerprint(theta.as_slice(), z.as_slice());
        Ok(sol)
    }

    pub fn adjoint_jacobians(
        &self,
        sol: &SystemSolution,
        theta: &DVector<f64>,
        z: &DVector<f64>,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        if sol.fingerprint != point_fingerprint(theta.as_slice(), z.as_slice()) {
            return Err(Error::StaleFactorization);
        }
        let n = self.outputs.len();
        let ne = self.mesh.n_elements();
        let n_dofs = sol.nodal_field.len();
        let e_min = self.config.e_min;
        let mut g_theta = DMatrix::zeros(n, ne);
        let mut g_z = DMatrix::zeros(n, ne);
        for (k, row) in self.outputs.rows.iter().enumerate() {
            let mut rhs = vec![0.0; n_dofs];
            for &(i, w) in row {
                rhs[i] += w;
            }
            let lam = sol.adjoint_solve(&rhs);
            for (e, tri) in self.mesh.triangles().iter().enumerate() {
                let dofs = element_dofs(tri, 2);
                let ke = &self.element_matrices[e];
                let mut s = 0.0;
                for a in 0..6 {
                    let ku: f64 = (0..6).map(|b| ke[a][b] * sol.nodal_field[dofs[b]]).sum();
                    s += lam[dofs[a]] * ku;
                }
                let sig = sigmoid(z[e]);
                let et = theta[e].exp();
                g_theta[(k, e)] = -s * sig * et;
                g_z[(k, e)] = -s * sig * (1.0 - sig) * (et - e_min);
            }
        }
        Ok((g_theta, g_z))
    }
}

impl ForwardModel for TopologyProblem {
    fn name(&self) -> &str {
        "topo"
    }

    fn d_theta(&self) -> usize {
        self.mesh.n_elements()
    }

    fn d_z(&self) -> usize {
        self.mesh.n_elements()
    }

    fn u_target(&self) -> &DVector<f64> {
        &self.u_target
    }

    fn tau_q(&self) -> f64 {
        1.0 / self.config.tau_q_inv
    }

    fn field_prior(&self) -> &Arc<FieldPrior> {
        &self.prior
    }

    fn mu_z_prior(&self) -> MuZPrior {
        MuZPrior::Bimodal { m: self.config.m, s2: self.config.s2 }
    }

    fn initial_mu_z(&self) -> DVector<f64> {
        DVector::from_element(self.d_z(), logit(self.config.volume_fraction))
    }

    fn constraint(&self) -> Option<ConstraintDescriptor> {
        Some(ConstraintDescriptor { target_vf: self.config.volume_fraction, eps_c2: self.config.eps_c2 })
    }

    fn mesh(&self) -> Option<&Mesh> {
        Some(&self.mesh)
    }

    fn evaluate(&self, theta: &DVector<f64>, z: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.solve(theta, z)?.outputs)
    }

    fn linearize(&self, theta: &DVector<f64>, z: &DVector<f64>) -> Result<Linearization> {
        let sol = self.solve(theta, z)?;
        let (g_theta, g_z) = self.adjoint_jacobians(&sol, theta, z)?;
        Ok(Linearization { u: sol.outputs, g_theta, g_z })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> TopologyProblem {
        TopologyProblem::new(TopologyConfig { nx: 16, ny: 10, ..Default::default() }).unwrap()
    }

    #[test]
    fn paper_dimensions() {
        let p = TopologyProblem::new(TopologyConfig::default()).unwrap();
        assert_eq!(p.d_theta(), 3536);
        assert_eq!(p.d_z(), 3536);
        assert_eq!(p.n_outputs(), 8);
        assert!((p.u_target()[7] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn corner_load_deflects_downward() {
        let p = small();
        let theta = DVector::zeros(p.d_theta());
        let z = DVector::from_element(p.d_z(), 3.0);
        let u = p.evaluate(&theta, &z).unwrap();
        assert!(u.iter().all(|v| *v > 0.0));
        assert!(u.as_slice().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn void_everywhere_is_huge_but_finite() {
        let p = small();
        let theta = DVector::zeros(p.d_theta());
        let z = DVector::from_element(p.d_z(), -1e3);
        let u = p.evaluate(&theta, &z).unwrap();
        assert!(u.iter().all(|v| v.is_finite() && *v > 1e3));
    }

    #[test]
    fn modulus_stays_within_bounds() {
        let p = small();
        let theta = DVector::from_fn(p.d_theta(), |i, _| (i as f64 * 0.37).sin());
        let z = DVector::from_fn(p.d_z(), |i, _| 20.0 * (i as f64 * 0.11).cos());
        for (e, v) in p.youngs(&theta, &z).iter().enumerate() {
            assert!(*v >= p.config.e_min && *v <= theta[e].exp() * (1.0 + 1e-15));
        }
    }

    #[test]
    fn scaling_modulus_scales_deflection() {
        let p = small();
        let z = DVector::from_element(p.d_z(), 30.0);
        let u1 = p.evaluate(&DVector::zeros(p.d_theta()), &z).unwrap();
        let u2 = p.evaluate(&DVector::from_element(p.d_theta(), 2f64.ln()), &z).unwrap();
        assert!((u1 * 0.5 - u2).amax() < 1e-10);
    }

    #[test]
    fn saturated_design_has_vanishing_sensitivity() {
        let p = small();
        let theta = DVector::zeros(p.d_theta());
        let mut z = DVector::from_element(p.d_z(), 2.0);
        z[5] = 60.0;
        let lin = p.linearize(&theta, &z).unwrap();
        assert!(lin.g_z.column(5).amax() < 1e-20);
        assert!(lin.g_z.column(6).amax() > 1e-8);
    }

    #[test]
    fn jacobians_match_central_differences() {
        let p = small();
        let theta = DVector::from_fn(p.d_theta(), |i, _| 0.3 * (i as f64 * 0.5).sin());
        let z = DVector::from_fn(p.d_z(), |i, _| 1.0 + (i as f64 * 0.9).cos());
        let lin = p.linearize(&theta, &z).unwrap();
        for j in [3, 50, 200] {
            let h = 1e-5 * (1.0 + theta[j].abs());
            let mut tp = theta.clone();
            tp[j] += h;
            let mut tm = theta.clone();
            tm[j] -= h;
            let fd = (p.evaluate(&tp, &z).unwrap() - p.evaluate(&tm, &z).unwrap()) / (2.0 * h);
            let err = (&fd - lin.g_theta.column(j)).norm() / lin.g_theta.column(j).norm();
            assert!(err < 1e-3, "theta column {j}: {err}");
            let h = 1e-5 * (1.0 + z[j].abs());
            let mut zp = z.clone();
            zp[j] += h;
            let mut zm = z.clone();
            zm[j] -= h;
            let fd = (p.evaluate(&theta, &zp).unwrap() - p.evaluate(&theta, &zm).unwrap()) / (2.0 * h);
            let err = (&fd - lin.g_z.column(j)).norm() / lin.g_z.column(j).norm();
            assert!(err < 1e-3, "z column {j}: {err}");
        }
    }
}
