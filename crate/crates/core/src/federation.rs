//! One PGFL federation: clients running ADMM prox steps against their
//! server's cluster model, servers aggregating per cluster, averaging over
//! their graph neighborhood and mixing across clusters.

use nalgebra::DVector;
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Entity, Error, Module, Result};
use crate::privacy::{self, InitialPrivacy, PrivacyState};
use crate::rng::{Purpose, ReplicateSeeds, SimRng};
use crate::solvers::{ClientSolver, ProxProblem, SolverSettings};
use crate::topology::Topology;
use crate::ModelVector;

/// Inter-cluster learning weight per iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TauSchedule {
    Constant { tau0: f64 },
    Exponential { tau0: f64, decay: f64 },
}

impl TauSchedule {
    pub fn constant(tau0: f64) -> Self {
        Self::Constant { tau0 }
    }

    pub fn validate(&self) -> Result<()> {
        let (tau0, decay) = match *self {
            Self::Constant { tau0 } => (tau0, 1.0),
            Self::Exponential { tau0, decay } => (tau0, decay),
        };
        if !(0.0..1.0).contains(&tau0) {
            return Err(Error::Config(format!("tau0 must lie in [0, 1), got {tau0}")));
        }
        if !(decay > 0.0 && decay <= 1.0) {
            return Err(Error::Config(format!("tau decay must lie in (0, 1], got {decay}")));
        }
        Ok(())
    }

    /// `tau(n)` for iteration `n >= 1`.
    pub fn at(&self, n: usize) -> f64 {
        match *self {
            Self::Constant { tau0 } => tau0,
            Self::Exponential { tau0, decay } => tau0 * decay.powi(n as i32),
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            Self::Constant { tau0 } | Self::Exponential { tau0, .. } => tau0 == 0.0,
        }
    }
}

/// Which rounds consume a client's privacy schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrivacyClock {
    /// Only rounds in which the client transmits.
    #[default]
    Transmissions,
    /// Every round, whether or not the client was scheduled.
    Rounds,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacySettings {
    pub initial: InitialPrivacy,
    pub zeta: f64,
    pub dp_delta: f64,
    pub clock: PrivacyClock,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FederationSettings {
    pub rho: f64,
    pub lambda: f64,
    pub clip_bound: f64,
    pub solver: SolverSettings,
    pub tau: TauSchedule,
    pub privacy: Option<PrivacySettings>,
    /// Clients scheduled per server and round; `None` means all.
    pub quota: Option<usize>,
    /// When false every server only sees itself (`E` empty).
    pub inter_server: bool,
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub server: usize,
    pub cluster: usize,
    pub data: Dataset,
    /// Latest primal `w_k`.
    pub w: ModelVector,
    /// Dual `phi_k`.
    pub dual: ModelVector,
    /// Latest transmitted `w~_k`.
    pub perturbed: ModelVector,
    pub privacy: Option<PrivacyState>,
    pub clip_bound: f64,
    /// `lambda / |C_s|`
    pub reg: f64,
    solver: ClientSolver,
    noise_rng: SimRng,
}

impl ClientState {
    pub fn solver(&self) -> &ClientSolver {
        &self.solver
    }
}

/// Per-cluster models held by one server.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub id: usize,
    /// `w~_{q,s}` after client aggregation.
    pub aggregated: Vec<ModelVector>,
    /// `w^_{q,s}` after neighborhood averaging.
    pub averaged: Vec<ModelVector>,
    /// `w_{q,s}` after inter-cluster mixing; broadcast to clients.
    pub mixed: Vec<ModelVector>,
}

impl ServerState {
    fn zeros(id: usize, clusters: usize, dim: usize) -> Self {
        let z = vec![DVector::zeros(dim); clusters];
        Self {
            id,
            aggregated: z.clone(),
            averaged: z.clone(),
            mixed: z,
        }
    }
}

/// Uniform without-replacement sample of `quota` clients on every server,
/// returned in ascending id order.
pub fn schedule_clients<R: Rng + ?Sized>(
    topology: &Topology,
    quota: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let mut chosen = Vec::new();
    for s in 0..topology.num_servers {
        let local = topology.clients_of_server(s);
        if quota > local.len() {
            return Err(Error::Config(format!(
                "quota {quota} exceeds the {} clients of server {s}",
                local.len()
            )));
        }
        chosen.extend(sample(rng, local.len(), quota).into_iter().map(|i| local[i]));
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// Primal solve plus optional perturbation. Returns `(w~_k, phi_k(n-1))`.
pub fn client_step(
    client: &mut ClientState,
    anchor: &ModelVector,
    rho: f64,
    privacy_on: bool,
) -> Result<(ModelVector, ModelVector)> {
    let problem = ProxProblem {
        dataset: &client.data,
        dual: &client.dual,
        anchor,
        rho,
        reg: client.reg,
        clip_bound: client.clip_bound,
    };
    let w = client.solver.solve(&problem, Some(&client.w))?;
    let perturbed = match (&mut client.privacy, privacy_on) {
        (Some(state), true) => {
            state.advance();
            &w + privacy::sample_noise(state.delta_sq, w.len(), &mut client.noise_rng)
        }
        _ => w.clone(),
    };
    client.w = w;
    client.perturbed = perturbed.clone();
    Ok((perturbed, client.dual.clone()))
}

fn mean<'a>(vectors: impl IntoIterator<Item = &'a ModelVector>) -> Option<ModelVector> {
    let mut iter = vectors.into_iter();
    let mut acc = iter.next()?.clone();
    let mut count = 1usize;
    for v in iter {
        acc += v;
        count += 1;
    }
    Some(acc / count as f64)
}

/// `mean(w~_k) - mean(phi_k) / rho` over the participants in ascending id
/// order; `None` when nobody participated (the server holds its previous
/// aggregate).
pub fn server_aggregate(participants: &[(&ModelVector, &ModelVector)], rho: f64) -> Option<ModelVector> {
    let models = mean(participants.iter().map(|(w, _)| *w))?;
    let duals = mean(participants.iter().map(|(_, d)| *d))?;
    Some(models - duals / rho)
}

/// Unweighted mean over the neighborhood (which includes the server itself).
pub fn inter_server_aggregate(models: &[&ModelVector]) -> Result<ModelVector> {
    mean(models.iter().copied())
        .ok_or_else(|| Error::Argument("neighborhood must contain at least the server itself".into()))
}

/// `(1 - tau) w^_q + tau / (Q - 1) * sum_{r != q} w^_r`.
pub fn inter_cluster_mix(aggregates: &[ModelVector], cluster: usize, tau: f64) -> Result<ModelVector> {
    let q_count = aggregates.len();
    if cluster >= q_count {
        return Err(Error::Argument(format!("cluster {cluster} out of range (Q = {q_count})")));
    }
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::Argument(format!("tau must lie in [0, 1), got {tau}")));
    }
    if tau == 0.0 {
        return Ok(aggregates[cluster].clone());
    }
    if q_count < 2 {
        return Err(Error::Config("inter-cluster learning with tau > 0 needs Q >= 2".into()));
    }
    let weight = tau / (q_count - 1) as f64;
    let mut out = &aggregates[cluster] * (1.0 - tau);
    for (r, v) in aggregates.iter().enumerate() {
        if r != cluster {
            out.axpy(weight, v, 1.0);
        }
    }
    Ok(out)
}

/// `phi_k += rho (received - local)`, with `local = w~_k` under privacy.
pub fn client_dual_update(client: &mut ClientState, received: &ModelVector, rho: f64, privacy_on: bool) {
    let local = if privacy_on { &client.perturbed } else { &client.w };
    let step = (received - local) * rho;
    client.dual += step;
}

/// What happened in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub iteration: usize,
    pub participants: Vec<usize>,
    pub tau: f64,
}

/// Complete simulation state.
#[derive(Debug, Clone)]
pub struct Federation {
    pub settings: FederationSettings,
    pub topology: Topology,
    pub clients: Vec<ClientState>,
    pub servers: Vec<ServerState>,
    neighborhoods: Vec<Vec<usize>>,
    schedule_rng: SimRng,
    round: usize,
}

pub(crate) fn validate_common(rho: f64, lambda: f64, clip_bound: f64, quota: Option<usize>, topology: &Topology) -> Result<()> {
    if !(rho > 0.0) {
        return Err(Error::Config(format!("rho must be > 0, got {rho}")));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
    }
    if !(clip_bound > 0.0) {
        return Err(Error::Config(format!("clip bound must be > 0, got {clip_bound}")));
    }
    if let Some(q) = quota {
        for s in 0..topology.num_servers {
            let have = topology.clients_of_server(s).len();
            if q > have {
                return Err(Error::Config(format!(
                    "quota {q} exceeds the {have} clients of server {s}"
                )));
            }
        }
    }
    Ok(())
}

pub(crate) fn init_privacy(settings: Option<&PrivacySettings>, sensitivity: f64) -> Result<Option<PrivacyState>> {
    settings
        .map(|p| PrivacyState::new(p.initial, p.zeta, sensitivity))
        .transpose()
}

impl Federation {
    /// Algorithm initialization: every `w_k`, `phi_k` and server model is 0.
    pub fn new(
        settings: FederationSettings,
        topology: Topology,
        datasets: Vec<Dataset>,
        seeds: &ReplicateSeeds,
    ) -> Result<Self> {
        settings.tau.validate()?;
        validate_common(settings.rho, settings.lambda, settings.clip_bound, settings.quota, &topology)?;
        if !settings.tau.is_zero() && topology.num_clusters < 2 {
            return Err(Error::Config("inter-cluster learning with tau > 0 needs Q >= 2".into()));
        }
        if datasets.len() != topology.num_clients() {
            return Err(Error::Config(format!(
                "{} datasets for {} clients",
                datasets.len(),
                topology.num_clients()
            )));
        }
        let dim = datasets
            .first()
            .map(Dataset::dim)
            .ok_or_else(|| Error::Config("federation has no clients".into()))?;
        let clients = datasets
            .into_iter()
            .enumerate()
            .map(|(k, data)| {
                if data.dim() != dim {
                    return Err(Error::Config(format!(
                        "client {k} has dimension {}, expected {dim}",
                        data.dim()
                    )));
                }
                let server = topology.client_server[k];
                let reg = settings.lambda / topology.clients_of_server(server).len() as f64;
                let solver = ClientSolver::new(&settings.solver, &data, reg, settings.rho)?;
                let privacy = init_privacy(
                    settings.privacy.as_ref(),
                    privacy::sensitivity(settings.clip_bound, settings.rho, data.len())?,
                )?;
                Ok(ClientState {
                    id: k,
                    server,
                    cluster: topology.client_cluster[k],
                    w: DVector::zeros(dim),
                    dual: DVector::zeros(dim),
                    perturbed: DVector::zeros(dim),
                    privacy,
                    clip_bound: settings.clip_bound,
                    reg,
                    solver,
                    noise_rng: seeds.stream(Purpose::PrivacyNoise, k as u64),
                    data,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let servers = (0..topology.num_servers)
            .map(|s| ServerState::zeros(s, topology.num_clusters, dim))
            .collect();
        let neighborhoods = if settings.inter_server {
            topology.neighborhoods()
        } else {
            (0..topology.num_servers).map(|s| vec![s]).collect()
        };
        Ok(Self {
            settings,
            topology,
            clients,
            servers,
            neighborhoods,
            schedule_rng: seeds.stream(Purpose::Schedule, 0),
            round: 0,
        })
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn dim(&self) -> usize {
        self.clients[0].w.len()
    }

    pub fn privacy_on(&self) -> bool {
        self.settings.privacy.is_some()
    }

    pub fn client_models(&self) -> Vec<&ModelVector> {
        self.clients.iter().map(|c| &c.w).collect()
    }

    /// Broadcast model `w_{q,s}` of a server for a cluster.
    pub fn server_model(&self, server: usize, cluster: usize) -> &ModelVector {
        &self.servers[server].mixed[cluster]
    }

    /// Worst-case cumulative epsilon across clients, when privacy is on.
    pub fn epsilon(&self) -> Result<Option<f64>> {
        match &self.settings.privacy {
            None => Ok(None),
            Some(p) => Ok(Some(privacy::max_privacy_loss(
                self.clients.iter().filter_map(|c| c.privacy.as_ref()),
                p.dp_delta,
            )?)),
        }
    }

    /// Executes iteration `n = round + 1`: schedule, client primal and
    /// perturbation, server aggregation, neighborhood averaging,
    /// inter-cluster mixing, broadcast and client dual update.
    pub fn run_round(&mut self) -> Result<RoundReport> {
        let n = self.round + 1;
        let rho = self.settings.rho;
        let privacy_on = self.privacy_on();
        let q_count = self.topology.num_clusters;

        let participants = match self.settings.quota {
            Some(q) => schedule_clients(&self.topology, q, &mut self.schedule_rng)
                .map_err(|e| e.in_run(Module::Engine, n, Entity::Global))?,
            None => (0..self.clients.len()).collect(),
        };
        let mut active = vec![false; self.clients.len()];
        for &k in &participants {
            active[k] = true;
        }

        // Client primal updates (independent; merged back in id order).
        let servers = &self.servers;
        let outputs: Vec<Option<(ModelVector, ModelVector)>> = self
            .clients
            .par_iter_mut()
            .zip(active.par_iter())
            .map(|(client, &is_active)| {
                if !is_active {
                    return Ok(None);
                }
                let anchor = servers[client.server].mixed[client.cluster].clone();
                client_step(client, &anchor, rho, privacy_on)
                    .map(Some)
                    .map_err(|e| e.in_run(Module::Solver, n, Entity::Client(client.id)))
            })
            .collect::<Result<_>>()?;
        if privacy_on && self.settings.privacy.map(|p| p.clock) == Some(PrivacyClock::Rounds) {
            for (client, &is_active) in self.clients.iter_mut().zip(&active) {
                if !is_active {
                    if let Some(state) = client.privacy.as_mut() {
                        state.advance();
                    }
                }
            }
        }

        // Server aggregation per cluster.
        for s in 0..self.servers.len() {
            for q in 0..q_count {
                let members: Vec<(&ModelVector, &ModelVector)> = participants
                    .iter()
                    .filter(|&&k| self.clients[k].server == s && self.clients[k].cluster == q)
                    .filter_map(|&k| outputs[k].as_ref().map(|(w, d)| (w, d)))
                    .collect();
                if let Some(agg) = server_aggregate(&members, rho) {
                    self.servers[s].aggregated[q] = agg;
                }
            }
        }

        // Exchange with neighbors and average.
        for s in 0..self.servers.len() {
            for q in 0..q_count {
                let models: Vec<&ModelVector> = self.neighborhoods[s]
                    .iter()
                    .map(|&p| &self.servers[p].aggregated[q])
                    .collect();
                let avg = inter_server_aggregate(&models)
                    .map_err(|e| e.in_run(Module::Engine, n, Entity::Server(s)))?;
                self.servers[s].averaged[q] = avg;
            }
        }

        // Inter-cluster mixing.
        let tau = self.settings.tau.at(n);
        for server in &mut self.servers {
            let mixed = (0..q_count)
                .map(|q| inter_cluster_mix(&server.averaged, q, tau))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| e.in_run(Module::Engine, n, Entity::Server(server.id)))?;
            server.mixed = mixed;
        }

        // Broadcast and dual update for this round's participants.
        for &k in &participants {
            let client = &mut self.clients[k];
            let received = &self.servers[client.server].mixed[client.cluster];
            client_dual_update(client, received, rho, privacy_on);
        }

        self.round = n;
        Ok(RoundReport {
            iteration: n,
            participants,
            tau,
        })
    }
}

/// Minimizer of the cluster objective without inter-cluster learning,
/// `sum_{k in C_q} (1/D_k) |y_k - X_k w|^2 + (lambda/|C_s(k)|) |w|^2`,
/// by a single pooled normal-equations solve.
pub fn centralized_ridge_solution(
    topology: &Topology,
    datasets: &[Dataset],
    lambda: f64,
    cluster: usize,
) -> Result<ModelVector> {
    let members = topology.cluster_members(cluster);
    let first = members
        .first()
        .ok_or_else(|| Error::Argument(format!("cluster {cluster} has no clients")))?;
    let dim = datasets[*first].dim();
    let mut a = nalgebra::DMatrix::zeros(dim, dim);
    let mut b = DVector::zeros(dim);
    for &k in &members {
        let data = &datasets[k];
        let scale = 2.0 / data.len() as f64;
        a += data.x.tr_mul(&data.x) * scale;
        b += data.x.tr_mul(&data.y) * scale;
        let reg = lambda / topology.clients_of_server(topology.client_server[k]).len() as f64;
        for i in 0..dim {
            a[(i, i)] += 2.0 * reg;
        }
    }
    a.cholesky()
        .map(|c| c.solve(&b))
        .ok_or_else(|| Error::Argument(format!("cluster {cluster} objective is not strictly convex")))
}
