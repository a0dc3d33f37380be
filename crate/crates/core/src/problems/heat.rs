//! Steady heat diffusion with a designed inflow flux on the left edge.
//!
//! Domain `[0, Lx] × [0, Ly]`, conductivity `λ = e^θ` per element, `u = 0`
//! on the right edge, insulated top and bottom, and inward flux on the left
//! edge interpolated linearly between one design value per node. Outputs are
//! temperatures on the vertical line `x₁ = Lx/2`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{point_outputs, ForwardModel, Linearization, MuZPrior};
use crate::error::{Error, Result};
use crate::fem::{
    assemble_diffusion, diffusion_element, edge_load_map, point_fingerprint, solve_forward, BoundaryConditions,
    OutputOperator, SystemSolution,
};
use crate::mesh::{build_regular_mesh, BoundaryTag, Mesh, Point};
use crate::random_field::{build_covariance, FieldPrior, CORRELATION_LENGTH, MU_THETA0, SIGMA_G2};

#[derive(Debug, Clone)]
pub struct HeatFluxConfig {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub sigma_g2: f64,
    pub x0: f64,
    pub mu_theta0: f64,
    pub tau_q_inv: f64,
    /// Edges held at `u = 0`.
    pub dirichlet: Vec<BoundaryTag>,
    /// Abscissa of the vertical observation line.
    pub observation_x1: f64,
    /// Variance of the vague Gaussian regularizer on the design mean.
    pub c_z0: f64,
}

impl Default for HeatFluxConfig {
    fn default() -> Self {
        Self {
            nx: 40,
            ny: 20,
            lx: 2.0,
            ly: 1.0,
            sigma_g2: SIGMA_G2,
            x0: CORRELATION_LENGTH,
            mu_theta0: MU_THETA0,
            tau_q_inv: 0.01,
            dirichlet: vec![BoundaryTag::Right],
            observation_x1: 1.0,
            c_z0: 1e10,
        }
    }
}

#[derive(Debug)]
pub struct HeatFluxProblem {
    config: HeatFluxConfig,
    mesh: Mesh,
    prior: Arc<FieldPrior>,
    bc: BoundaryConditions,
    outputs: OutputOperator,
    observation_points: Vec<Point>,
    u_target: DVector<f64>,
    /// Nodal load per unit design value, n_nodes × d_z.
    load_map: DMatrix<f64>,
    element_matrices: Vec<[[f64; 3]; 3]>,
}

impl HeatFluxProblem {
    pub fn new(config: HeatFluxConfig) -> Result<Self> {
        let mesh = build_regular_mesh(config.nx, config.ny, config.lx, config.ly)?;
        let prior = build_covariance(mesh.centroids(), config.sigma_g2, config.x0, config.mu_theta0)?;
        Self::with_prior(config, mesh, Arc::new(prior))
    }

    /// Builds the problem around an existing prior (must match the mesh elements).
    pub fn with_prior(config: HeatFluxConfig, mesh: Mesh, prior: Arc<FieldPrior>) -> Result<Self> {
        if prior.dim() != mesh.n_elements() {
            return Err(Error::DimensionMismatch { what: "field prior", expected: mesh.n_elements(), got: prior.dim() });
        }
        if !(config.tau_q_inv > 0.0) {
            return Err(Error::InvalidArgument("tau_Q_inv must be positive".into()));
        }
        let observation_points: Vec<Point> =
            (0..11).map(|k| [config.observation_x1, config.ly * (0.25 + 0.05 * k as f64)]).collect();
        let outputs = point_outputs(&mesh, &observation_points, 1, 0, 1.0)?;
        let u_target = DVector::from_iterator(
            observation_points.len(),
            observation_points.iter().map(|p| 20.0 - 40.0 * (p[1] / config.ly - 0.5).abs()),
        );
        let d_z = mesh.boundary_nodes(BoundaryTag::Left).len();
        let mut load_map = DMatrix::zeros(mesh.n_nodes(), d_z);
        for (node, k, w) in edge_load_map(&mesh, BoundaryTag::Left) {
            load_map[(node, k)] += w;
        }
        let mut bc = BoundaryConditions::default();
        for tag in &config.dirichlet {
            bc.dirichlet.insert(*tag, vec![0.0]);
        }
        bc.validate(&mesh, 1)?;
        let element_matrices = (0..mesh.n_elements()).map(|e| diffusion_element(&mesh, e)).collect();
        Ok(Self { config, mesh, prior, bc, outputs, observation_points, u_target, load_map, element_matrices })
    }

    pub fn config(&self) -> &HeatFluxConfig {
        &self.config
    }

    pub fn observation_points(&self) -> &[Point] {
        &self.observation_points
    }

    /// Coordinates `x₂` of the design nodes along the left edge.
    pub fn design_coordinates(&self) -> Vec<f64> {
        self.mesh.boundary_nodes(BoundaryTag::Left).iter().map(|&n| self.mesh.nodes()[n][1]).collect()
    }

    pub fn solve(&self, theta: &DVector<f64>, z: &DVector<f64>) -> Result<SystemSolution> {
        self.check_dims(theta, z)?;
        let lambda: Vec<f64> = theta.iter().map(|t| t.exp()).collect();
        let k = assemble_diffusion(&self.mesh, &lambda)?;
        let load = &self.load_map * z;
        let mut sol = solve_forward(&k, &self.bc, &self.mesh, load.as_slice())?;
        sol.extract(&self.outputs);
        sol.fingerprint = point_fingerprint(theta.as_slice(), z.as_slice());
        Ok(sol)
    }

    /// `(G_θ, G_z)` by one adjoint solve per output against the retained factorization.
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
        let n_nodes = self.mesh.n_nodes();
        let mut g_theta = DMatrix::zeros(n, self.mesh.n_elements());
        let mut adjoints = DMatrix::zeros(n_nodes, n);
        for (k, row) in self.outputs.rows.iter().enumerate() {
            let mut rhs = vec![0.0; n_nodes];
            for &(i, w) in row {
                rhs[i] += w;
            }
            let lam = sol.adjoint_solve(&rhs);
            for (e, tri) in self.mesh.triangles().iter().enumerate() {
                let ke = &self.element_matrices[e];
                let mut s = 0.0;
                for a in 0..3 {
                    let ku: f64 = (0..3).map(|b| ke[a][b] * sol.nodal_field[tri[b]]).sum();
                    s += lam[tri[a]] * ku;
                }
                g_theta[(k, e)] = -s * theta[e].exp();
            }
            adjoints.set_column(k, &DVector::from_vec(lam));
        }
        let g_z = adjoints.transpose() * &self.load_map;
        Ok((g_theta, g_z))
    }
}

impl ForwardModel for HeatFluxProblem {
    fn name(&self) -> &str {
        "heat_flux"
    }

    fn d_theta(&self) -> usize {
        self.mesh.n_elements()
    }

    fn d_z(&self) -> usize {
        self.load_map.ncols()
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
        MuZPrior::Gaussian { precision: 1.0 / self.config.c_z0 }
    }

    fn initial_mu_z(&self) -> DVector<f64> {
        DVector::zeros(self.d_z())
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

    fn small() -> HeatFluxProblem {
        HeatFluxProblem::new(HeatFluxConfig { nx: 8, ny: 4, ..Default::default() }).unwrap()
    }

    #[test]
    fn paper_dimensions() {
        let p = HeatFluxProblem::new(HeatFluxConfig::default()).unwrap();
        assert_eq!(p.d_theta(), 1600);
        assert_eq!(p.d_z(), 21);
        assert_eq!(p.n_outputs(), 11);
        assert!((p.tau_q() - 100.0).abs() < 1e-12);
        let t = p.u_target();
        assert!((t[0] - 10.0).abs() < 1e-12 && (t[5] - 20.0).abs() < 1e-12 && (t[10] - 10.0).abs() < 1e-12);
        // observation points coincide with nodes
        assert!(p.outputs.rows.iter().all(|r| r.len() == 1));
    }

    #[test]
    fn zero_flux_gives_zero_outputs() {
        let p = small();
        let theta = DVector::from_fn(p.d_theta(), |i, _| (i as f64 * 0.3).sin());
        let u = p.evaluate(&theta, &DVector::zeros(p.d_z())).unwrap();
        assert!(u.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn outputs_are_linear_in_flux() {
        let p = small();
        let theta = DVector::from_fn(p.d_theta(), |i, _| 0.2 * (i as f64).cos());
        let z = DVector::from_fn(p.d_z(), |i, _| 1.0 + i as f64);
        let u1 = p.evaluate(&theta, &z).unwrap();
        let u2 = p.evaluate(&theta, &(&z * 2.0)).unwrap();
        assert!((u2 - u1 * 2.0).amax() < 1e-10);
    }

    #[test]
    fn unit_flux_positive_outputs() {
        let p = HeatFluxProblem::new(HeatFluxConfig::default()).unwrap();
        let theta = DVector::zeros(p.d_theta());
        let u = p.evaluate(&theta, &DVector::from_element(p.d_z(), 1.0)).unwrap();
        // uniform flux and conductivity: exact 1D profile u = (2 − x₁), so 1 at mid-line
        assert!(u.iter().all(|v| (v - 1.0).abs() < 1e-10));
    }

    #[test]
    fn stale_solution_is_rejected() {
        let p = small();
        let theta = DVector::zeros(p.d_theta());
        let z = DVector::from_element(p.d_z(), 1.0);
        let sol = p.solve(&theta, &z).unwrap();
        let z2 = DVector::from_element(p.d_z(), 2.0);
        assert!(matches!(p.adjoint_jacobians(&sol, &theta, &z2), Err(Error::StaleFactorization)));
    }

    #[test]
    fn g_z_reproduces_increments() {
        let p = small();
        let theta = DVector::from_fn(p.d_theta(), |i, _| 0.1 * (i as f64).sin());
        let z1 = DVector::from_fn(p.d_z(), |i, _| i as f64);
        let z2 = DVector::from_fn(p.d_z(), |i, _| (i as f64).cos());
        let lin = p.linearize(&theta, &z1).unwrap();
        let du = p.evaluate(&theta, &(&z1 + &z2)).unwrap() - &lin.u;
        assert!((du - &lin.g_z * &z2).amax() < 1e-10);
    }

    #[test]
    fn g_theta_matches_central_differences() {
        let p = small();
        let theta = DVector::from_fn(p.d_theta(), |i, _| 0.3 * (i as f64 * 0.7).sin());
        let z = DVector::from_fn(p.d_z(), |i, _| 5.0 + i as f64);
        let lin = p.linearize(&theta, &z).unwrap();
        for j in [0, 7, 20, p.d_theta() - 1] {
            let h = 1e-5 * (1.0 + theta[j].abs());
            let mut tp = theta.clone();
            tp[j] += h;
            let mut tm = theta.clone();
            tm[j] -= h;
            let fd = (p.evaluate(&tp, &z).unwrap() - p.evaluate(&tm, &z).unwrap()) / (2.0 * h);
            let col = lin.g_theta.column(j);
            let err = (&fd - col).norm() / col.norm().max(1e-300);
            assert!(err < 1e-4, "column {j}: relative error {err}");
        }
    }
}
