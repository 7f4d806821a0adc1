//! Linear-elastic matrix structural analysis of pin-jointed 2D trusses.
//!
//! Each node carries two translational degrees of freedom ordered
//! `(ux, uy)`, so node `k` owns global DOFs `2k` and `2k + 1`. Fixed DOFs are
//! eliminated before the reduced system is factorized.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative pivot magnitude below which the reduced stiffness is treated as
/// singular. Rods carrying replacement areas of order 1e-10 of the initial
/// area stay well above this.
const PIVOT_TOLERANCE: f64 = 1e-14;

#[derive(Debug, Error)]
pub enum FemError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("singular stiffness: {0}")]
    Singular(String),
    #[error("expected {expected} areas, got {got}")]
    AreaCount { expected: usize, got: usize },
    #[error("rod {rod} has non-positive area {area}")]
    NonPositiveArea { rod: usize, area: f64 },
    #[error("failed to read model file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed model file at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
}

pub type Result<T> = std::result::Result<T, FemError>;

#[derive(Clone, Debug, PartialEq)]
pub struct Node2D {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub fixed_x: bool,
    pub fixed_y: bool,
    pub load_x: f64,
    pub load_y: f64,
}

impl Node2D {
    pub fn free(id: usize, x: f64, y: f64) -> Self {
        Self {
            id,
            x,
            y,
            fixed_x: false,
            fixed_y: false,
            load_x: 0.0,
            load_y: 0.0,
        }
    }

    pub fn pinned(id: usize, x: f64, y: f64) -> Self {
        Self {
            fixed_x: true,
            fixed_y: true,
            ..Self::free(id, x, y)
        }
    }

    pub fn with_load(mut self, fx: f64, fy: f64) -> Self {
        self.load_x = fx;
        self.load_y = fy;
        self
    }
}

/// A two-force member between two nodes, with cached length and direction
/// cosines.
#[derive(Clone, Debug, PartialEq)]
pub struct Rod {
    pub id: usize,
    pub node_i: usize,
    pub node_j: usize,
    length: f64,
    cos: f64,
    sin: f64,
}

impl Rod {
    pub fn new(id: usize, node_i: &Node2D, node_j: &Node2D) -> Result<Self> {
        if node_i.id == node_j.id {
            return Err(FemError::InvalidGeometry(format!(
                "rod {id} connects node {} to itself",
                node_i.id
            )));
        }
        let dx = node_j.x - node_i.x;
        let dy = node_j.y - node_i.y;
        let length = dx.hypot(dy);
        if !(length > 0.0) || !length.is_finite() {
            return Err(FemError::InvalidGeometry(format!(
                "rod {id} has coincident end nodes {} and {}",
                node_i.id, node_j.id
            )));
        }
        Ok(Self {
            id,
            node_i: node_i.id,
            node_j: node_j.id,
            length,
            cos: dx / length,
            sin: dy / length,
        })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    /// Direction cosines `(c, s)` of the axis from `node_i` to `node_j`.
    pub fn direction(&self) -> (f64, f64) {
        (self.cos, self.sin)
    }

    /// Global DOF indices `(uxᵢ, uyᵢ, uxⱼ, uyⱼ)`.
    pub fn dofs(&self) -> [usize; 4] {
        [
            2 * self.node_i,
            2 * self.node_i + 1,
            2 * self.node_j,
            2 * self.node_j + 1,
        ]
    }
}

#[derive(Clone, Debug)]
pub struct TrussModel {
    pub nodes: Vec<Node2D>,
    pub rods: Vec<Rod>,
    pub young_modulus: f64,
    pub initial_area: f64,
    /// Volume of the structure with every rod at `initial_area`.
    pub volume_budget: f64,
}

impl TrussModel {
    /// Builds a validated model from nodes and `(node_i, node_j)` rod pairs.
    /// Rod ids follow the order of `rods`.
    pub fn new(
        nodes: Vec<Node2D>,
        rods: &[(usize, usize)],
        young_modulus: f64,
        initial_area: f64,
    ) -> Result<Self> {
        for (k, node) in nodes.iter().enumerate() {
            if node.id != k {
                return Err(FemError::InvalidModel(format!(
                    "node ids must be contiguous from 0; found id {} at position {k}",
                    node.id
                )));
            }
            if ![node.x, node.y, node.load_x, node.load_y]
                .iter()
                .all(|v| v.is_finite())
            {
                return Err(FemError::InvalidModel(format!(
                    "node {k} has non-finite coordinates or loads"
                )));
            }
            if (node.fixed_x && node.load_x != 0.0) || (node.fixed_y && node.load_y != 0.0) {
                return Err(FemError::InvalidModel(format!(
                    "node {k} carries a load on a fixed degree of freedom"
                )));
            }
        }
        let constrained: usize = nodes
            .iter()
            .map(|n| n.fixed_x as usize + n.fixed_y as usize)
            .sum();
        if constrained < 3 {
            return Err(FemError::InvalidModel(format!(
                "only {constrained} constrained degrees of freedom; at least 3 are needed to suppress rigid-body motion"
            )));
        }
        if rods.is_empty() {
            return Err(FemError::InvalidModel("model has no rods".into()));
        }
        if !(young_modulus > 0.0) || !(initial_area > 0.0) {
            return Err(FemError::InvalidModel(
                "Young's modulus and initial area must be positive".into(),
            ));
        }
        let rods = rods
            .iter()
            .enumerate()
            .map(|(id, &(i, j))| {
                let ni = nodes.get(i).ok_or_else(|| {
                    FemError::InvalidModel(format!("rod {id} references unknown node {i}"))
                })?;
                let nj = nodes.get(j).ok_or_else(|| {
                    FemError::InvalidModel(format!("rod {id} references unknown node {j}"))
                })?;
                Rod::new(id, ni, nj)
            })
            .collect::<Result<Vec<_>>>()?;
        let volume_budget = initial_area * rods.iter().map(Rod::length).sum::<f64>();
        Ok(Self {
            nodes,
            rods,
            young_modulus,
            initial_area,
            volume_budget,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| FemError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        file.into_model()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| FemError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&ModelFile::from(self)).expect("model serializes")
    }

    /// Six-rod single-bay truss bundled with the crate.
    pub fn case1() -> Self {
        Self::from_json_str(include_str!("../models/case1.json")).expect("bundled model is valid")
    }

    /// Eleven-rod two-bay truss bundled with the crate.
    pub fn case2() -> Self {
        Self::from_json_str(include_str!("../models/case2.json")).expect("bundled model is valid")
    }

    pub fn dof_count(&self) -> usize {
        2 * self.nodes.len()
    }

    pub fn load_vector(&self) -> DVector<f64> {
        let mut f = DVector::zeros(self.dof_count());
        for node in &self.nodes {
            f[2 * node.id] = node.load_x;
            f[2 * node.id + 1] = node.load_y;
        }
        f
    }

    pub fn is_fixed(&self, dof: usize) -> bool {
        let node = &self.nodes[dof / 2];
        if dof % 2 == 0 {
            node.fixed_x
        } else {
            node.fixed_y
        }
    }

    pub fn free_dofs(&self) -> Vec<usize> {
        (0..self.dof_count()).filter(|&d| !self.is_fixed(d)).collect()
    }

    /// True when both end nodes of the rod are fixed in both directions.
    pub fn rod_is_fully_supported(&self, rod: usize) -> bool {
        let r = &self.rods[rod];
        let fixed = |n: usize| self.nodes[n].fixed_x && self.nodes[n].fixed_y;
        fixed(r.node_i) && fixed(r.node_j)
    }

    pub fn uniform_areas(&self) -> Vec<f64> {
        vec![self.initial_area; self.rods.len()]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FemSolution {
    pub displacements: Vec<f64>,
    pub compliance: f64,
    /// `U_eᵀ K_e U_e` per rod at the analysed areas.
    pub rod_strain_energy: Vec<f64>,
    /// Positive in tension.
    pub rod_axial_force: Vec<f64>,
    pub rod_volume: Vec<f64>,
    pub total_volume: f64,
    /// `‖K U − F‖ / ‖F‖` over the free DOFs.
    pub residual: f64,
}

/// 4×4 element stiffness `(E·A/L)·J` in the global frame.
pub fn element_stiffness(rod: &Rod, area: f64, young_modulus: f64) -> Result<Matrix4<f64>> {
    if !(rod.length > 0.0) {
        return Err(FemError::InvalidGeometry(format!(
            "rod {} has zero length",
            rod.id
        )));
    }
    if !(area > 0.0) {
        return Err(FemError::NonPositiveArea { rod: rod.id, area });
    }
    let (c, s) = rod.direction();
    let v = nalgebra::Vector4::new(-c, -s, c, s);
    Ok(v * v.transpose() * (young_modulus * area / rod.length))
}

fn check_areas(model: &TrussModel, areas: &[f64]) -> Result<()> {
    if areas.len() != model.rods.len() {
        return Err(FemError::AreaCount {
            expected: model.rods.len(),
            got: areas.len(),
        });
    }
    for (rod, &area) in areas.iter().enumerate() {
        if !(area > 0.0) || !area.is_finite() {
            return Err(FemError::NonPositiveArea { rod, area });
        }
    }
    Ok(())
}

/// Global stiffness before any support conditions are applied.
pub fn assemble_global(model: &TrussModel, areas: &[f64]) -> Result<DMatrix<f64>> {
    check_areas(model, areas)?;
    let n = model.dof_count();
    let mut k = DMatrix::zeros(n, n);
    for (rod, &area) in model.rods.iter().zip(areas) {
        let ke = element_stiffness(rod, area, model.young_modulus)?;
        let dofs = rod.dofs();
        for (a, &ga) in dofs.iter().enumerate() {
            for (b, &gb) in dofs.iter().enumerate() {
                k[(ga, gb)] += ke[(a, b)];
            }
        }
    }
    Ok(k)
}

pub fn total_volume(model: &TrussModel, areas: &[f64]) -> f64 {
    model
        .rods
        .iter()
        .zip(areas)
        .map(|(rod, a)| a * rod.length())
        .sum()
}

/// Solves `K(A) U = F` with fixed DOFs eliminated.
pub fn assemble_and_solve(model: &TrussModel, areas: &[f64]) -> Result<FemSolution> {
    let k = assemble_global(model, areas)?;
    let f = model.load_vector();
    let free = model.free_dofs();
    if free.is_empty() {
        return Err(FemError::Singular(
            "every degree of freedom is fixed; nothing to solve".into(),
        ));
    }

    let kr = DMatrix::from_fn(free.len(), free.len(), |a, b| k[(free[a], free[b])]);
    let fr = DVector::from_fn(free.len(), |a, _| f[free[a]]);

    let scale = kr.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if let Some((a, _)) = kr
        .diagonal()
        .iter()
        .enumerate()
        .find(|(_, v)| v.abs() <= PIVOT_TOLERANCE * scale)
    {
        return Err(FemError::Singular(format!(
            "free DOF {} (node {}) has no stiffness; the load path is disconnected",
            free[a],
            free[a] / 2
        )));
    }

    let lu = kr.clone().lu();
    let u_diag = lu.u().diagonal();
    if let Some((a, _)) = u_diag
        .iter()
        .enumerate()
        .find(|(_, v)| v.abs() <= PIVOT_TOLERANCE * scale)
    {
        return Err(FemError::Singular(format!(
            "reduced stiffness is singular near free DOF {} (node {}); insufficient supports or a mechanism",
            free[a],
            free[a] / 2
        )));
    }
    let ur = lu
        .solve(&fr)
        .ok_or_else(|| FemError::Singular("LU factorization failed".into()))?;

    let f_norm = fr.norm();
    let residual = if f_norm > 0.0 {
        (&kr * &ur - &fr).norm() / f_norm
    } else {
        0.0
    };

    let mut u = vec![0.0; model.dof_count()];
    for (a, &dof) in free.iter().enumerate() {
        u[dof] = ur[a];
    }
    let compliance: f64 = f.iter().zip(&u).map(|(fi, ui)| fi * ui).sum();

    let mut rod_strain_energy = Vec::with_capacity(model.rods.len());
    let mut rod_axial_force = Vec::with_capacity(model.rods.len());
    let mut rod_volume = Vec::with_capacity(model.rods.len());
    for (rod, &area) in model.rods.iter().zip(areas) {
        let dofs = rod.dofs();
        let (c, s) = rod.direction();
        let elongation = c * (u[dofs[2]] - u[dofs[0]]) + s * (u[dofs[3]] - u[dofs[1]]);
        let axial_stiffness = model.young_modulus * area / rod.length();
        rod_strain_energy.push(axial_stiffness * elongation * elongation);
        rod_axial_force.push(axial_stiffness * elongation);
        rod_volume.push(area * rod.length());
    }
    let total_volume = rod_volume.iter().sum();

    Ok(FemSolution {
        displacements: u,
        compliance,
        rod_strain_energy,
        rod_axial_force,
        rod_volume,
        total_volume,
        residual,
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    nodes: Vec<NodeEntry>,
    rods: Vec<RodEntry>,
    material: MaterialEntry,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeEntry {
    id: usize,
    x: f64,
    y: f64,
    #[serde(default)]
    fix: [bool; 2],
    #[serde(default)]
    load: [f64; 2],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RodEntry {
    id: usize,
    i: usize,
    j: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaterialEntry {
    #[serde(rename = "E")]
    young_modulus: f64,
    #[serde(rename = "A0")]
    initial_area: f64,
}

impl ModelFile {
    fn into_model(self) -> Result<TrussModel> {
        let nodes = self
            .nodes
            .into_iter()
            .map(|n| Node2D {
                id: n.id,
                x: n.x,
                y: n.y,
                fixed_x: n.fix[0],
                fixed_y: n.fix[1],
                load_x: n.load[0],
                load_y: n.load[1],
            })
            .collect();
        let mut pairs = Vec::with_capacity(self.rods.len());
        for (k, rod) in self.rods.iter().enumerate() {
            if rod.id != k {
                return Err(FemError::InvalidModel(format!(
                    "rod ids must be contiguous from 0; found id {} at position {k}",
                    rod.id
                )));
            }
            pairs.push((rod.i, rod.j));
        }
        TrussModel::new(
            nodes,
            &pairs,
            self.material.young_modulus,
            self.material.initial_area,
        )
    }
}

impl From<&TrussModel> for ModelFile {
    fn from(model: &TrussModel) -> Self {
        Self {
            nodes: model
                .nodes
                .iter()
                .map(|n| NodeEntry {
                    id: n.id,
                    x: n.x,
                    y: n.y,
                    fix: [n.fixed_x, n.fixed_y],
                    load: [n.load_x, n.load_y],
                })
                .collect(),
            rods: model
                .rods
                .iter()
                .map(|r| RodEntry {
                    id: r.id,
                    i: r.node_i,
                    j: r.node_j,
                })
                .collect(),
            material: MaterialEntry {
                young_modulus: model.young_modulus,
                initial_area: model.initial_area,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    fn single_rod(e: f64, area: f64, load: f64) -> TrussModel {
        // Right node held vertically so the rod is the only axial path.
        let nodes = vec![
            Node2D::pinned(0, 0.0, 0.0),
            Node2D {
                fixed_y: true,
                ..Node2D::free(1, 2.0, 0.0)
            }
            .with_load(load, 0.0),
        ];
        TrussModel::new(nodes, &[(0, 1)], e, area).unwrap()
    }

    #[test]
    fn horizontal_rod_stiffness() {
        let rod = Rod::new(0, &Node2D::free(0, 0.0, 0.0), &Node2D::free(1, 1.0, 0.0)).unwrap();
        let k = element_stiffness(&rod, 1.0, 1.0).unwrap();
        let expected = Matrix4::new(
            1.0, 0.0, -1.0, 0.0, //
            0.0, 0.0, 0.0, 0.0, //
            -1.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 0.0,
        );
        assert!((k - expected).abs().max() < 1e-15);
    }

    #[test]
    fn diagonal_rod_stiffness_has_unit_entries() {
        let rod = Rod::new(0, &Node2D::free(0, 0.0, 0.0), &Node2D::free(1, 1.0, 1.0)).unwrap();
        // E·A/L = 2 with L = √2.
        let k = element_stiffness(&rod, 2.0 * 2f64.sqrt(), 1.0).unwrap();
        for v in k.iter() {
            assert!((v.abs() - 1.0).abs() < 1e-12, "{k}");
        }
        assert!((k.transpose() - k).abs().max() < 1e-15);
        let eig = k.symmetric_eigen().eigenvalues;
        let nonzero = eig.iter().filter(|v| v.abs() > 1e-12).count();
        assert_eq!(nonzero, 1);
    }

    #[test]
    fn case1_diagonal_axial_stiffness() {
        let model = TrussModel::case1();
        let rod = &model.rods[4];
        assert!((rod.length() - 2f64.sqrt()).abs() < 1e-15);
        let k = element_stiffness(rod, 0.5, 2e11).unwrap();
        let (c, _) = rod.direction();
        let factor = k[(0, 0)] / (c * c);
        assert!(rel(factor, 7.0710678118654755e10) < 1e-12);
    }

    #[test]
    fn coincident_nodes_are_rejected() {
        let err = Rod::new(3, &Node2D::free(0, 1.0, 1.0), &Node2D::free(1, 1.0, 1.0)).unwrap_err();
        assert!(matches!(err, FemError::InvalidGeometry(_)));
    }

    #[test]
    fn direction_cosines_are_unit() {
        let model = TrussModel::case2();
        for rod in &model.rods {
            let (c, s) = rod.direction();
            assert!((c * c + s * s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_rod_closed_form() {
        let (e, a, p) = (2e11, 0.5, 1e5);
        let model = single_rod(e, a, p);
        let sol = assemble_and_solve(&model, &[a]).unwrap();
        let l = 2.0;
        assert!(rel(sol.displacements[2], p * l / (e * a)) < 1e-12);
        assert!(rel(sol.compliance, p * p * l / (e * a)) < 1e-12);
        assert!(rel(sol.rod_axial_force[0], p) < 1e-12);
    }

    #[test]
    fn bundled_volumes() {
        let c1 = TrussModel::case1();
        let c2 = TrussModel::case2();
        assert!((c1.volume_budget - 3.414).abs() < 1e-3);
        assert!((c2.volume_budget - 6.328).abs() < 1e-3);
        let v = total_volume(&c1, &c1.uniform_areas());
        assert!(rel(v, c1.volume_budget) < 1e-12);
        let half: Vec<f64> = c1.uniform_areas().iter().map(|a| 0.5 * a).collect();
        assert!(rel(total_volume(&c1, &half), 0.5 * c1.volume_budget) < 1e-12);
    }

    #[test]
    fn mixed_area_volume_by_direct_summation() {
        let model = TrussModel::case1();
        let areas = [0.55, 0.05, 0.5, 0.5, 0.5, 0.5];
        // Four unit-length rods, then two diagonals of length √2.
        let expected = 0.55 + 0.05 + 0.5 + 0.5 + 2.0 * 0.5 * 2f64.sqrt();
        assert!(rel(total_volume(&model, &areas), expected) < 1e-12);
    }

    #[test]
    fn solution_invariants_case1() {
        let model = TrussModel::case1();
        let sol = assemble_and_solve(&model, &model.uniform_areas()).unwrap();
        let sum: f64 = sol.rod_strain_energy.iter().sum();
        assert!(sol.compliance > 0.0);
        assert!(rel(sum, sol.compliance) < 1e-8);
        assert!(sol.residual < 1e-9);
        assert!(sol.rod_strain_energy.iter().all(|&w| w >= 0.0));
        // Left vertical spans two pinned nodes.
        assert!(model.rod_is_fully_supported(0));
        assert!(sol.rod_axial_force[0].abs() < 1e-6);
    }

    #[test]
    fn missing_supports_are_rejected() {
        let nodes = vec![
            Node2D {
                fixed_x: true,
                ..Node2D::free(0, 0.0, 0.0)
            },
            Node2D {
                fixed_y: true,
                ..Node2D::free(1, 1.0, 0.0)
            },
        ];
        let err = TrussModel::new(nodes, &[(0, 1)], 1.0, 1.0).unwrap_err();
        assert!(matches!(err, FemError::InvalidModel(_)));
    }

    #[test]
    fn mechanism_is_reported_as_singular() {
        // Two collinear rods cannot resist a load across their axis.
        let nodes = vec![
            Node2D::pinned(0, 0.0, 0.0),
            Node2D::free(1, 1.0, 0.0).with_load(0.0, -1.0),
            Node2D::pinned(2, 2.0, 0.0),
        ];
        let model = TrussModel::new(nodes, &[(0, 1), (1, 2)], 1.0, 1.0).unwrap();
        let err = assemble_and_solve(&model, &[1.0, 1.0]).unwrap_err();
        assert!(matches!(err, FemError::Singular(_)), "{err}");
    }

    #[test]
    fn load_on_fixed_dof_is_rejected() {
        let nodes = vec![
            Node2D::pinned(0, 0.0, 0.0).with_load(1.0, 0.0),
            Node2D::pinned(1, 1.0, 0.0),
        ];
        assert!(TrussModel::new(nodes, &[(0, 1)], 1.0, 1.0).is_err());
    }

    #[test]
    fn non_positive_area_is_rejected() {
        let model = TrussModel::case1();
        let mut areas = model.uniform_areas();
        areas[2] = 0.0;
        assert!(matches!(
            assemble_and_solve(&model, &areas),
            Err(FemError::NonPositiveArea { rod: 2, .. })
        ));
        assert!(matches!(
            assemble_and_solve(&model, &areas[..3]),
            Err(FemError::AreaCount { .. })
        ));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "{\n  \"nodes\": [\n    { \"id\": 0, \"x\": 0.0 \n  ]\n}";
        match TrussModel::from_json_str(text) {
            Err(FemError::Parse { line, .. }) => assert!(line >= 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn json_round_trip_preserves_model() {
        let model = TrussModel::case2();
        let again = TrussModel::from_json_str(&model.to_json_string()).unwrap();
        assert_eq!(again.nodes, model.nodes);
        assert_eq!(again.rods, model.rods);
        assert_eq!(again.volume_budget, model.volume_budget);
    }
}
