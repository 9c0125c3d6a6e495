//! Federated averaging on the server graph: a single global model, local
//! gradient descent at the clients, a participant mean at each server and a
//! neighborhood mean across servers.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::datagen::Dataset;
use crate::error::{Entity, Error, Module, Result};
use crate::federation::{init_privacy, schedule_clients, validate_common, PrivacyClock, PrivacySettings};
use crate::privacy::{self, PrivacyState};
use crate::rng::{Purpose, ReplicateSeeds, SimRng};
use crate::solvers::{local_gradient, LossKind};
use crate::topology::Topology;
use crate::ModelVector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FedAvgSettings {
    pub loss: LossKind,
    pub lambda: f64,
    pub learning_rate: f64,
    /// Local gradient steps `E` per round.
    pub local_steps: usize,
    pub clip_bound: f64,
    /// Clip per-sample gradients during local training.
    pub clip_gradients: bool,
    pub privacy: Option<PrivacySettings>,
    pub quota: Option<usize>,
    pub inter_server: bool,
}

/// Optional perturbation for [`fedavg_client_update`].
pub struct Perturbation<'a> {
    pub state: &'a mut PrivacyState,
    pub rng: &'a mut SimRng,
}

/// `E` full-batch gradient steps on the client objective starting from the
/// anchor; returns the (optionally perturbed) model the client transmits.
#[allow(clippy::too_many_arguments)]
pub fn fedavg_client_update(
    data: &Dataset,
    anchor: &ModelVector,
    local_steps: usize,
    learning_rate: f64,
    loss: LossKind,
    reg: f64,
    clip: Option<f64>,
    noise: Option<Perturbation<'_>>,
) -> Result<ModelVector> {
    if local_steps == 0 {
        return Err(Error::Argument("local steps must be at least 1".into()));
    }
    if !(learning_rate >= 0.0) {
        return Err(Error::Argument(format!("learning rate must be >= 0, got {learning_rate}")));
    }
    let mut w = anchor.clone();
    for _ in 0..local_steps {
        let g = local_gradient(data, &w, loss, reg, clip);
        w.axpy(-learning_rate, &g, 1.0);
    }
    if let Some(p) = noise {
        p.state.advance();
        w += privacy::sample_noise(p.state.delta_sq, w.len(), p.rng);
    }
    Ok(w)
}

/// Mean of the participants' models, then mean with the neighbor models.
pub fn fedavg_server_round(participants: &[&ModelVector], neighbor_models: &[&ModelVector]) -> Result<ModelVector> {
    let local = mean(participants);
    let mut stage: Vec<&ModelVector> = Vec::with_capacity(neighbor_models.len() + 1);
    if let Some(local) = local.as_ref() {
        stage.push(local);
    }
    stage.extend_from_slice(neighbor_models);
    mean(&stage).ok_or_else(|| Error::Argument("server round needs a participant or a neighbor".into()))
}

fn mean(models: &[&ModelVector]) -> Option<ModelVector> {
    let (first, rest) = models.split_first()?;
    let mut acc = (*first).clone();
    for m in rest {
        acc += *m;
    }
    Some(acc / models.len() as f64)
}

/// l2 sensitivity of `E` clipped gradient steps of size `lr` to a single
/// sample replacement: every step moves by at most `lr 2C / D` more.
pub fn fedavg_sensitivity(clip_bound: f64, learning_rate: f64, local_steps: usize, num_samples: usize) -> Result<f64> {
    if !(clip_bound > 0.0 && learning_rate > 0.0 && local_steps > 0 && num_samples > 0) {
        return Err(Error::Argument("fedavg sensitivity needs positive inputs".into()));
    }
    Ok(2.0 * clip_bound * learning_rate * local_steps as f64 / num_samples as f64)
}

#[derive(Debug, Clone)]
pub struct FedAvgClient {
    pub id: usize,
    pub server: usize,
    pub data: Dataset,
    pub reg: f64,
    pub privacy: Option<PrivacyState>,
    noise_rng: SimRng,
}

/// Complete baseline simulation state.
#[derive(Debug, Clone)]
pub struct FedAvgFederation {
    pub settings: FedAvgSettings,
    pub topology: Topology,
    pub clients: Vec<FedAvgClient>,
    /// Global model `w_s` held by each server.
    pub server_models: Vec<ModelVector>,
    neighborhoods: Vec<Vec<usize>>,
    schedule_rng: SimRng,
    round: usize,
}

impl FedAvgFederation {
    pub fn new(
        settings: FedAvgSettings,
        topology: Topology,
        datasets: Vec<Dataset>,
        seeds: &ReplicateSeeds,
    ) -> Result<Self> {
        validate_common(1.0, settings.lambda, settings.clip_bound, settings.quota, &topology)?;
        if settings.local_steps == 0 {
            return Err(Error::Config("fedavg local steps must be at least 1".into()));
        }
        if !(settings.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "fedavg learning rate must be > 0, got {}",
                settings.learning_rate
            )));
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
                let server = topology.client_server[k];
                let reg = settings.lambda / topology.clients_of_server(server).len() as f64;
                let delta = fedavg_sensitivity(
                    settings.clip_bound,
                    settings.learning_rate,
                    settings.local_steps,
                    data.len(),
                )?;
                let privacy = init_privacy(settings.privacy.as_ref(), delta)?;
                Ok(FedAvgClient {
                    id: k,
                    server,
                    data,
                    reg,
                    privacy,
                    noise_rng: seeds.stream(Purpose::PrivacyNoise, k as u64),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let neighborhoods = if settings.inter_server {
            topology.neighborhoods()
        } else {
            (0..topology.num_servers).map(|s| vec![s]).collect()
        };
        Ok(Self {
            server_models: vec![DVector::zeros(dim); topology.num_servers],
            settings,
            topology,
            clients,
            neighborhoods,
            schedule_rng: seeds.stream(Purpose::Schedule, 0),
            round: 0,
        })
    }

    pub fn round(&self) -> usize {
        self.round
    }

    /// Model held by every client: the latest broadcast of its server.
    pub fn client_models(&self) -> Vec<&ModelVector> {
        self.clients.iter().map(|c| &self.server_models[c.server]).collect()
    }

    pub fn epsilon(&self) -> Result<Option<f64>> {
        match &self.settings.privacy {
            None => Ok(None),
            Some(p) => Ok(Some(privacy::max_privacy_loss(
                self.clients.iter().filter_map(|c| c.privacy.as_ref()),
                p.dp_delta,
            )?)),
        }
    }

    pub fn run_round(&mut self) -> Result<Vec<usize>> {
        let n = self.round + 1;
        let s = self.settings;
        let participants = match s.quota {
            Some(q) => schedule_clients(&self.topology, q, &mut self.schedule_rng)
                .map_err(|e| e.in_run(Module::FedAvg, n, Entity::Global))?,
            None => (0..self.clients.len()).collect(),
        };
        let mut active = vec![false; self.clients.len()];
        for &k in &participants {
            active[k] = true;
        }
        let clip = s.clip_gradients.then_some(s.clip_bound);
        let server_models = &self.server_models;
        let updates: Vec<Option<ModelVector>> = self
            .clients
            .par_iter_mut()
            .zip(active.par_iter())
            .map(|(c, &is_active)| {
                if !is_active {
                    return Ok(None);
                }
                let noise = match c.privacy.as_mut() {
                    Some(state) => Some(Perturbation {
                        state,
                        rng: &mut c.noise_rng,
                    }),
                    None => None,
                };
                fedavg_client_update(
                    &c.data,
                    &server_models[c.server],
                    s.local_steps,
                    s.learning_rate,
                    s.loss,
                    c.reg,
                    clip,
                    noise,
                )
                .map(Some)
                .map_err(|e| e.in_run(Module::FedAvg, n, Entity::Client(c.id)))
            })
            .collect::<Result<_>>()?;
        if s.privacy.map(|p| p.clock) == Some(PrivacyClock::Rounds) {
            for (c, &is_active) in self.clients.iter_mut().zip(&active) {
                if !is_active {
                    if let Some(state) = c.privacy.as_mut() {
                        state.advance();
                    }
                }
            }
        }

        // Stage 1: participant mean per server, holding the previous model
        // when nobody on that server was scheduled.
        let local: Vec<ModelVector> = (0..self.topology.num_servers)
            .map(|srv| {
                let own: Vec<&ModelVector> = participants
                    .iter()
                    .filter(|&&k| self.clients[k].server == srv)
                    .filter_map(|&k| updates[k].as_ref())
                    .collect();
                if own.is_empty() {
                    Ok(self.server_models[srv].clone())
                } else {
                    fedavg_server_round(&own, &[])
                }
            })
            .collect::<Result<_>>()?;
        // Stage 2: neighborhood mean.
        self.server_models = (0..self.topology.num_servers)
            .map(|srv| {
                let models: Vec<&ModelVector> = self.neighborhoods[srv].iter().map(|&p| &local[p]).collect();
                fedavg_server_round(&[], &models).map_err(|e| e.in_run(Module::FedAvg, n, Entity::Server(srv)))
            })
            .collect::<Result<_>>()?;
        self.round = n;
        Ok(participants)
    }
}
