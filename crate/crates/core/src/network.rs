//! Physical network, controller communication graph and configuration ingest.
//!
//! Buses are reindexed internally so that generator buses come first; the
//! original labels are kept in [`PowerNetwork::bus_ids`].

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusConfig {
    pub id: u32,
    pub voltage: f64,
    pub damping: f64,
    /// Required for generator buses, ignored for loads.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inertia: Option<f64>,
    /// Accepted but unused: the lossless model only involves line terms.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub self_susceptance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineConfig {
    pub from: u32,
    pub to: u32,
    pub susceptance: f64,
}

/// Optional initial condition, in bus-list order of the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialStateConfig {
    pub delta: Vec<f64>,
    /// Frequencies of the generator buses, in the order of `generators`.
    pub omega_g: Vec<f64>,
    pub xi: Vec<f64>,
}

/// Network description as read from a JSON document. `costs` and `loads` are
/// aligned with `buses`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub buses: Vec<BusConfig>,
    pub generators: Vec<u32>,
    pub lines: Vec<LineConfig>,
    pub comm_edges: Vec<[u32; 2]>,
    pub costs: Vec<f64>,
    pub loads: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<InitialStateConfig>,
}

impl NetworkConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// The four-bus, two-generator academic network used in the case study.
    pub fn case_study() -> Self {
        Self::from_json(include_str!("../data/case_study.json")).expect("embedded case-study config is valid")
    }

    /// Internal index order: generators first, then loads, each group in
    /// bus-list order. Entry `k` is the position in `buses` of internal bus `k`.
    fn internal_order(&self) -> Result<Vec<usize>> {
        let mut pos: HashMap<u32, usize> = HashMap::new();
        for (i, b) in self.buses.iter().enumerate() {
            if pos.insert(b.id, i).is_some() {
                return Err(Error::Config(format!("duplicate bus id {}", b.id)));
            }
        }
        let mut gens = BTreeSet::new();
        for g in &self.generators {
            if !pos.contains_key(g) {
                return Err(Error::Config(format!("generator {g} is not a listed bus")));
            }
            if !gens.insert(*g) {
                return Err(Error::Config(format!("generator {g} listed twice")));
            }
        }
        let mut order: Vec<usize> =
            (0..self.buses.len()).filter(|&i| gens.contains(&self.buses[i].id)).collect();
        order.extend((0..self.buses.len()).filter(|&i| !gens.contains(&self.buses[i].id)));
        Ok(order)
    }

    /// Initial condition mapped to internal ordering, if the config has one.
    pub fn initial_state(&self, net: &PowerNetwork) -> Result<Option<InitialVectors>> {
        let Some(init) = &self.initial_state else {
            return Ok(None);
        };
        let n = net.n();
        if init.delta.len() != n || init.xi.len() != n || init.omega_g.len() != net.n_g() {
            return Err(Error::Config("initial_state has wrong dimensions".into()));
        }
        let order = self.internal_order()?;
        let delta = DVector::from_iterator(n, order.iter().map(|&i| init.delta[i]));
        let xi = DVector::from_iterator(n, order.iter().map(|&i| init.xi[i]));
        // omega_g follows `generators`; reorder to bus-list order of generators.
        let mut omega_g = DVector::zeros(net.n_g());
        for (k, id) in net.bus_ids[..net.n_g()].iter().enumerate() {
            let j = self.generators.iter().position(|g| g == id).expect("generator present");
            omega_g[k] = init.omega_g[j];
        }
        Ok(Some((delta, omega_g, xi)))
    }
}

/// `(δ, ω_G, ξ)` in internal bus order.
pub type InitialVectors = (DVector<f64>, DVector<f64>, DVector<f64>);

/// Lossless structure-preserving network model.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerNetwork {
    /// External bus labels in internal order.
    pub bus_ids: Vec<u32>,
    n_g: usize,
    /// Directed edges `(i, j)` in internal indices.
    pub edges: Vec<(usize, usize)>,
    /// n×m incidence matrix, +1 at the tail and −1 at the head of each edge.
    pub incidence: DMatrix<f64>,
    pub gamma: DVector<f64>,
    pub inertia: DVector<f64>,
    pub damping: DVector<f64>,
    pub load: DVector<f64>,
}

impl PowerNetwork {
    /// Builds a network from internal indices (generators are buses `0..n_g`).
    pub fn new(
        n_g: usize,
        edges: Vec<(usize, usize)>,
        gamma: DVector<f64>,
        inertia: DVector<f64>,
        damping: DVector<f64>,
        load: DVector<f64>,
    ) -> Result<Self> {
        let n = damping.len();
        if load.len() != n {
            return Err(Error::Dimension(format!("load has {} entries, expected {n}", load.len())));
        }
        if inertia.len() != n_g || n_g == 0 || n_g > n {
            return Err(Error::Dimension(format!(
                "inertia has {} entries for {n_g} generators of {n} buses",
                inertia.len()
            )));
        }
        if gamma.len() != edges.len() {
            return Err(Error::Dimension("gamma length differs from edge count".into()));
        }
        if inertia.iter().any(|&m| !(m > 0.0)) {
            return Err(Error::Config("inertia must be strictly positive".into()));
        }
        if damping.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::Config("damping must be strictly positive".into()));
        }
        if gamma.iter().any(|&g| !(g > 0.0)) {
            return Err(Error::Config("line weights must be strictly positive".into()));
        }
        check_edges(n, &edges)?;
        if !is_connected(n, &edges) {
            return Err(Error::PhysicalDisconnected);
        }
        let incidence = incidence_matrix(n, &edges);
        Ok(Self { bus_ids: (1..=n as u32).collect(), n_g, edges, incidence, gamma, inertia, damping, load })
    }

    pub fn n(&self) -> usize {
        self.damping.len()
    }

    pub fn n_g(&self) -> usize {
        self.n_g
    }

    pub fn n_l(&self) -> usize {
        self.n() - self.n_g
    }

    pub fn m(&self) -> usize {
        self.edges.len()
    }

    pub fn damping_g(&self) -> DVector<f64> {
        self.damping.rows(0, self.n_g).into_owned()
    }

    pub fn damping_l(&self) -> DVector<f64> {
        self.damping.rows(self.n_g, self.n_l()).into_owned()
    }

    /// Copy of the network with a different constant load vector.
    pub fn with_load(&self, load: DVector<f64>) -> Self {
        assert_eq!(load.len(), self.n());
        Self { load, ..self.clone() }
    }

    /// Weighted Laplacian `B Γ Bᵀ`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        weighted_laplacian(&self.incidence, &self.gamma).expect("dimensions consistent")
    }

    /// Edge angle differences `Bᵀδ`.
    pub fn edge_angles(&self, delta: &DVector<f64>) -> DVector<f64> {
        self.incidence.tr_mul(delta)
    }
}

/// Controller cost weights and communication graph.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerSetup {
    pub cost: DVector<f64>,
    pub comm_edges: Vec<(usize, usize)>,
    pub comm_laplacian: DMatrix<f64>,
}

impl ControllerSetup {
    pub fn new(cost: DVector<f64>, comm_edges: Vec<(usize, usize)>) -> Result<Self> {
        let n = cost.len();
        if cost.iter().any(|&q| !(q > 0.0)) {
            return Err(Error::Config("cost coefficients must be strictly positive".into()));
        }
        check_edges(n, &comm_edges)?;
        if !is_connected(n, &comm_edges) {
            return Err(Error::CommunicationDisconnected);
        }
        let weights = DVector::from_element(comm_edges.len(), 1.0);
        let comm_laplacian = weighted_laplacian(&incidence_matrix(n, &comm_edges), &weights)?;
        Ok(Self { cost, comm_edges, comm_laplacian })
    }

    pub fn n(&self) -> usize {
        self.cost.len()
    }

    /// μ = 𝟙ᵀQ⁻¹𝟙.
    pub fn mu(&self) -> f64 {
        self.cost.iter().map(|q| 1.0 / q).sum()
    }

    pub fn q_min(&self) -> f64 {
        self.cost.min()
    }

    pub fn q_max(&self) -> f64 {
        self.cost.max()
    }
}

fn check_edges(n: usize, edges: &[(usize, usize)]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for &(i, j) in edges {
        if i >= n || j >= n {
            return Err(Error::Config(format!("edge ({i}, {j}) references unknown bus")));
        }
        if i == j {
            return Err(Error::Config(format!("self-loop at bus {i}")));
        }
        if !seen.insert((i.min(j), i.max(j))) {
            return Err(Error::Config(format!("duplicate edge ({i}, {j})")));
        }
    }
    Ok(())
}

fn is_connected(n: usize, edges: &[(usize, usize)]) -> bool {
    if n == 0 {
        return false;
    }
    let mut adj = vec![Vec::new(); n];
    for &(i, j) in edges {
        adj[i].push(j);
        adj[j].push(i);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

pub fn incidence_matrix(n: usize, edges: &[(usize, usize)]) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(n, edges.len());
    for (k, &(i, j)) in edges.iter().enumerate() {
        b[(i, k)] = 1.0;
        b[(j, k)] = -1.0;
    }
    b
}

/// `B · diag(weights) · Bᵀ`.
pub fn weighted_laplacian(incidence: &DMatrix<f64>, weights: &DVector<f64>) -> Result<DMatrix<f64>> {
    if incidence.ncols() != weights.len() {
        return Err(Error::Dimension(format!(
            "incidence has {} columns but {} weights given",
            incidence.ncols(),
            weights.len()
        )));
    }
    let mut scaled = incidence.clone();
    for (k, mut col) in scaled.column_iter_mut().enumerate() {
        col *= weights[k];
    }
    Ok(scaled * incidence.transpose())
}

/// Validates a configuration and builds the physical network and controller.
pub fn build_network(config: &NetworkConfig) -> Result<(PowerNetwork, ControllerSetup)> {
    let nb = config.buses.len();
    if nb < 2 {
        return Err(Error::Config("at least two buses required".into()));
    }
    if config.costs.len() != nb || config.loads.len() != nb {
        return Err(Error::Config("costs and loads must have one entry per bus".into()));
    }
    if config.generators.is_empty() {
        return Err(Error::Config("at least one generator required".into()));
    }
    let order = config.internal_order()?;
    let n_g = config.generators.len();
    let mut index_of: HashMap<u32, usize> = HashMap::new();
    for (k, &i) in order.iter().enumerate() {
        index_of.insert(config.buses[i].id, k);
    }
    let bus = |id: u32| -> Result<usize> {
        index_of.get(&id).copied().ok_or_else(|| Error::Config(format!("unknown bus id {id}")))
    };

    let buses: Vec<&BusConfig> = order.iter().map(|&i| &config.buses[i]).collect();
    let mut inertia = DVector::zeros(n_g);
    for (k, b) in buses[..n_g].iter().enumerate() {
        inertia[k] = b.inertia.ok_or_else(|| Error::Config(format!("generator {} has no inertia", b.id)))?;
    }
    let damping = DVector::from_iterator(nb, buses.iter().map(|b| b.damping));
    let load = DVector::from_iterator(nb, order.iter().map(|&i| config.loads[i]));
    let cost = DVector::from_iterator(nb, order.iter().map(|&i| config.costs[i]));

    let mut edges = Vec::with_capacity(config.lines.len());
    let mut gamma = DVector::zeros(config.lines.len());
    for (k, line) in config.lines.iter().enumerate() {
        let (i, j) = (bus(line.from)?, bus(line.to)?);
        edges.push((i, j));
        gamma[k] = line.susceptance * buses[i].voltage * buses[j].voltage;
    }
    let comm_edges =
        config.comm_edges.iter().map(|&[a, b]| Ok((bus(a)?, bus(b)?))).collect::<Result<Vec<_>>>()?;

    let mut net = PowerNetwork::new(n_g, edges, gamma, inertia, damping, load)?;
    net.bus_ids = buses.iter().map(|b| b.id).collect();
    let ctrl = ControllerSetup::new(cost, comm_edges)?;
    Ok((net, ctrl))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sym_eigenvalues;
    use proptest::prelude::*;

    #[test]
    fn case_study_gamma() {
        let (net, ctrl) = build_network(&NetworkConfig::case_study()).unwrap();
        // hand multiplication B_ij V_i V_j
        let expected = [25.6 * 0.98 * 0.97, 33.1 * 0.97 * 0.96, 21.0 * 0.97 * 1.04];
        for k in 0..3 {
            assert!((net.gamma[k] - expected[k]).abs() < 1e-12);
        }
        assert!((net.gamma[0] - 24.335).abs() < 1e-3);
        assert!((net.gamma[1] - 30.823).abs() < 1e-3);
        assert!((net.gamma[2] - 21.185).abs() < 1e-3);
        assert_eq!(net.n_g(), 2);
        assert_eq!(ctrl.comm_edges.len(), 4);
        assert!((ctrl.mu() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn two_bus_unit_line() {
        let cfg = NetworkConfig::from_json(
            r#"{"buses":[{"id":1,"voltage":1,"damping":1,"inertia":1},{"id":2,"voltage":1,"damping":1}],
                "generators":[1],"lines":[{"from":1,"to":2,"susceptance":1}],
                "comm_edges":[[1,2]],"costs":[1,1],"loads":[0,0]}"#,
        )
        .unwrap();
        let (net, _) = build_network(&cfg).unwrap();
        assert_eq!(net.gamma.as_slice(), &[1.0]);
    }

    #[test]
    fn disconnected_comm_graph_rejected() {
        let mut cfg = NetworkConfig::case_study();
        cfg.comm_edges = vec![[1, 2], [3, 4]];
        let err = build_network(&cfg).unwrap_err();
        assert_eq!(err.to_string(), "communication graph disconnected");
    }

    #[test]
    fn disconnected_physical_graph_rejected() {
        let mut cfg = NetworkConfig::case_study();
        cfg.lines.truncate(2);
        assert!(matches!(build_network(&cfg), Err(Error::PhysicalDisconnected)));
    }

    #[test]
    fn nonpositive_parameters_and_duplicates_rejected() {
        let mut cfg = NetworkConfig::case_study();
        cfg.buses[0].inertia = Some(0.0);
        assert!(build_network(&cfg).is_err());
        let mut cfg = NetworkConfig::case_study();
        cfg.buses[2].damping = -1.0;
        assert!(build_network(&cfg).is_err());
        let mut cfg = NetworkConfig::case_study();
        cfg.costs[1] = 0.0;
        assert!(build_network(&cfg).is_err());
        let mut cfg = NetworkConfig::case_study();
        cfg.lines.push(LineConfig { from: 2, to: 1, susceptance: 3.0 });
        assert!(build_network(&cfg).is_err());
    }

    #[test]
    fn generators_reindexed_first() {
        let mut cfg = NetworkConfig::case_study();
        cfg.buses.rotate_left(2);
        cfg.costs.rotate_left(2);
        cfg.loads.rotate_left(2);
        let (net, ctrl) = build_network(&cfg).unwrap();
        assert_eq!(net.bus_ids, vec![1, 2, 3, 4]);
        assert_eq!(ctrl.cost.as_slice(), &[1.0, 0.75, 1.5, 0.5]);
        assert_eq!(net.load.as_slice(), &[0.0, 0.0, 0.72, 0.24]);
    }

    #[test]
    fn build_is_deterministic() {
        let text = include_str!("../data/case_study.json");
        let a = build_network(&NetworkConfig::from_json(text).unwrap()).unwrap();
        let b = build_network(&NetworkConfig::from_json(text).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn laplacian_examples() {
        let b = incidence_matrix(2, &[(0, 1)]);
        let l = weighted_laplacian(&b, &DVector::from_element(1, 1.0)).unwrap();
        assert_eq!(l, DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
        let l0 = weighted_laplacian(&b, &DVector::zeros(1)).unwrap();
        assert_eq!(l0, DMatrix::zeros(2, 2));
        assert!(weighted_laplacian(&b, &DVector::zeros(2)).is_err());

        let (net, _) = build_network(&NetworkConfig::case_study()).unwrap();
        let ev = sym_eigenvalues(&net.laplacian());
        assert!(ev[0].abs() < 1e-10);
        assert!(ev[1] > 1.0);
        // incidence columns sum to zero
        for col in net.incidence.column_iter() {
            assert_eq!(col.sum(), 0.0);
        }
    }

    proptest! {
        #[test]
        fn laplacian_is_psd_with_kernel_one(
            w in prop::collection::vec(0.0f64..10.0, 3),
            x in prop::collection::vec(-5.0f64..5.0, 4),
        ) {
            let (net, _) = build_network(&NetworkConfig::case_study()).unwrap();
            let l = weighted_laplacian(&net.incidence, &DVector::from_vec(w)).unwrap();
            let ones = DVector::from_element(4, 1.0);
            prop_assert!((&l * &ones).norm() < 1e-12);
            let x = DVector::from_vec(x);
            prop_assert!(x.dot(&(&l * &x)) >= -1e-10);
            prop_assert!((&l - l.transpose()).norm() == 0.0);
        }
    }
}
