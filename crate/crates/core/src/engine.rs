//! Round orchestration: broadcast, client computation, screening, update.
//!
//! Each round every client computes its message from the current parameters:
//! honest clients send the privatised q-fair gradient, Byzantine clients send
//! whatever their [`AttackSpec`] prescribes. The server aggregates with the
//! configured rule and takes `theta <- theta - eta * G`.
//!
//! Rows of the metrics table: row `t` holds the evaluation of `theta_t` and
//! the diagnostics of the update that produced it (row 0 has none).

use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::{AggregateError, AggregationOutcome, ClientMessage};
use crate::attack::{self, AttackError, AttackSpec};
use crate::config::{DatasetKind, ExperimentConfig};
use crate::dataset::{self, ClientShard, DataError, Dataset};
use crate::linalg;
use crate::model::{Model, ModelError, ModelParams};
use crate::parallel::Execution;
use crate::privacy::PrivacyError;
use crate::rng::{self, Purpose};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error(transparent)]
    Privacy(#[from] PrivacyError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error("training diverged at round {round}: non-finite {what}")]
    Divergence { round: usize, what: &'static str },
}

/// A failed run with whatever was recorded before the failure.
#[derive(Debug, Error)]
#[error("{error}")]
pub struct RunFailure {
    pub error: EngineError,
    pub partial: Option<Box<ExperimentReport>>,
}

pub type Result<T> = std::result::Result<T, EngineError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Role {
    Honest,
    Byzantine(AttackSpec),
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    /// The client's real data; used for the objective and evaluation.
    pub shard: ClientShard,
    /// Data the client trains on; label-flipped for label-flip attackers.
    pub train_shard: ClientShard,
    pub role: Role,
}

impl ClientState {
    pub fn is_honest(&self) -> bool {
        self.role == Role::Honest
    }
}

/// What one round produced besides the new parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundDiagnostics {
    pub outcome: AggregationOutcome,
    pub agg_grad_norm: f64,
    pub lemma_lhs: f64,
    pub lemma_rhs: f64,
    /// `max_i ||grad H_i - grad H||` over honest clients.
    pub heterogeneity_r: f64,
    /// `||grad H||^2` for the honest pre-noise mean.
    pub honest_grad_norm_sq: f64,
    /// Ids whose message went through an attack.
    pub attacked: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    /// Fraction in [0, 1] on the pooled test set.
    pub global_accuracy: f64,
    /// Percent, one entry per client.
    pub per_client_accuracy: Vec<f64>,
    /// Population variance of `per_client_accuracy`, in squared points.
    pub accuracy_variance: f64,
    /// `sum_i p_i / (q + 1) * F_i^(q+1)` over all clients' real data.
    pub fair_loss_h: f64,
    #[serde(with = "opt_f64")]
    pub agg_grad_norm: Option<f64>,
    #[serde(with = "opt_f64")]
    pub lemma_lhs: Option<f64>,
    #[serde(with = "opt_f64")]
    pub lemma_rhs: Option<f64>,
    #[serde(with = "opt_f64")]
    pub heterogeneity_r: Option<f64>,
    #[serde(with = "opt_f64")]
    pub honest_grad_norm_sq: Option<f64>,
    pub kept_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub byzantine_fraction: f64,
    pub flags: Vec<String>,
    pub rounds: Vec<RoundMetrics>,
    pub final_params: ModelParams,
    pub duration_secs: f64,
    #[serde(default)]
    pub divergence: Option<String>,
}

impl ExperimentReport {
    pub fn final_metrics(&self) -> &RoundMetrics {
        self.rounds.last().expect("report always holds round 0")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

/// `(lhs, rhs)` of the screening deviation bound
/// `||G - grad H|| <= 2 alpha / (1 - p) ||grad H|| + max_i ||g_i - grad H|| + sigma`,
/// where `grad H` is the mean of the honest pre-noise gradients and alpha the
/// Byzantine fraction among `n_messages`. With `p = 1` the first term is
/// unbounded when `alpha > 0` and zero otherwise.
pub fn lemma1_diagnostic(
    n_messages: usize,
    honest: &[ClientMessage],
    outcome: &AggregationOutcome,
    sigma: f64,
    p: f64,
) -> (f64, f64) {
    assert!(!honest.is_empty(), "diagnostic needs at least one honest client");
    let grad_h = linalg::mean(honest.iter().map(|m| m.gradient.as_slice()));
    let lhs = linalg::dist(&outcome.aggregate, &grad_h);
    let alpha = (n_messages - honest.len()) as f64 / n_messages as f64;
    let spread = honest
        .iter()
        .map(|m| linalg::dist(&m.gradient, &grad_h))
        .fold(0.0, f64::max);
    let screen_term = if alpha == 0.0 {
        0.0
    } else if p >= 1.0 {
        f64::INFINITY
    } else {
        2.0 * alpha / (1.0 - p) * linalg::norm(&grad_h)
    };
    (lhs, screen_term + spread + sigma)
}

/// Per-client accuracy in percent, its population variance and pooled accuracy.
pub fn evaluate(
    model: &Model,
    params: &ModelParams,
    per_client_tests: &[Dataset],
    global_test: &Dataset,
) -> Result<(f64, Vec<f64>, f64)> {
    let global = model.accuracy(params, &global_test.samples)?;
    let per_client = per_client_tests
        .iter()
        .map(|t| model.accuracy(params, &t.samples).map(|a| 100.0 * a))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((global, per_client.clone(), population_variance(&per_client)))
}

pub fn population_variance(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// A prepared run: data partitioned, clients assigned roles.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub model: Model,
    pub clients: Vec<ClientState>,
    pub client_tests: Vec<Dataset>,
    pub global_test: Dataset,
    /// `p_i = n_i / n`.
    pub weights: Vec<f64>,
    pub exec: Execution,
}

impl Experiment {
    /// Loads the configured dataset from disk and prepares the run.
    pub fn prepare(cfg: &ExperimentConfig) -> Result<Self> {
        let full = match cfg.dataset {
            DatasetKind::Spam => dataset::load_spambase(&cfg.spam_path)?,
            DatasetKind::Mnist => {
                let ds = dataset::load_mnist(&cfg.mnist_images, &cfg.mnist_labels)?;
                if cfg.mnist_subset > 0 {
                    ds.subset(cfg.mnist_subset, cfg.data_seed)
                } else {
                    ds
                }
            }
        };
        Self::from_dataset(cfg, &full)
    }

    /// Prepares the run on an already loaded dataset.
    pub fn from_dataset(cfg: &ExperimentConfig, full: &Dataset) -> Result<Self> {
        cfg.validate().map_err(|e| EngineError::Invalid(e.to_string()))?;
        let (train, test) = dataset::split_train_test(full, cfg.train_fraction, cfg.data_seed)?;
        let partition = |ds: &Dataset| match cfg.dataset {
            DatasetKind::Spam => dataset::partition_spam(ds, cfg.n_clients, cfg.n_spam_clients, cfg.data_seed),
            DatasetKind::Mnist => dataset::partition_mnist(ds, cfg.n_clients),
        };
        let train_shards = partition(&train)?;
        let test_shards = partition(&test)?;
        let model = Model::for_shape(full.n_features, full.n_classes);
        let byzantine: BTreeSet<usize> = cfg.byzantine_ids.iter().copied().collect();
        let clients = train_shards
            .into_iter()
            .map(|shard| {
                let role = if byzantine.contains(&shard.client_id) && cfg.attack != AttackSpec::None {
                    Role::Byzantine(cfg.attack)
                } else {
                    Role::Honest
                };
                let train_shard = match role {
                    Role::Byzantine(AttackSpec::LabelFlip) => attack::label_flip(&shard, full.n_classes),
                    _ => shard.clone(),
                };
                ClientState {
                    id: shard.client_id,
                    shard,
                    train_shard,
                    role,
                }
            })
            .collect::<Vec<_>>();
        let total: usize = clients.iter().map(|c| c.shard.n()).sum();
        let weights = clients.iter().map(|c| c.shard.n() as f64 / total as f64).collect();
        let client_tests = test_shards
            .iter()
            .map(|s| s.to_dataset(full.n_features, full.n_classes))
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            model,
            clients,
            client_tests,
            global_test: test,
            weights,
            exec: Execution::default(),
        })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn initial_params(&self) -> ModelParams {
        ModelParams::zeros(self.model.dim())
    }

    fn noise_sigma2(&self) -> Result<f64> {
        Ok(self.cfg.dp.sigma2()?)
    }

    /// Honest q-fair gradient on `shard`, optionally scaled to its share of
    /// the weighted objective.
    fn fair_gradient(&self, params: &ModelParams, client: &ClientState, shard: &ClientShard) -> Result<Vec<f64>> {
        let (g, _) = self.model.qfair_gradient(params, &shard.samples, self.cfg.q)?;
        Ok(if self.cfg.weighted_by_pi {
            let m = self.clients.len() as f64;
            linalg::scale(m * self.weights[client.id] / (self.cfg.q + 1.0), &g)
        } else {
            g
        })
    }

    /// `(message, honest pre-noise gradient if honest, attacked)`.
    fn client_message(
        &self,
        params: &ModelParams,
        client: &ClientState,
        round: usize,
    ) -> Result<(ClientMessage, Option<Vec<f64>>, bool)> {
        let seed = self.cfg.seed;
        let mut noise = rng::stream(seed, client.id, round, Purpose::DpNoise);
        let (message, pre_noise, attacked) = match client.role {
            Role::Honest => {
                let g = self.fair_gradient(params, client, &client.shard)?;
                let msg = self.cfg.dp.privatize(g.clone(), &mut noise)?;
                (msg, Some(g), false)
            }
            Role::Byzantine(AttackSpec::SignFlip) => {
                let g = self.fair_gradient(params, client, &client.shard)?;
                (self.cfg.dp.privatize(attack::sign_flip(&g), &mut noise)?, None, true)
            }
            Role::Byzantine(AttackSpec::LabelFlip) => {
                let g = self.fair_gradient(params, client, &client.train_shard)?;
                (self.cfg.dp.privatize(g, &mut noise)?, None, true)
            }
            Role::Byzantine(AttackSpec::Gaussian { scale }) => {
                let mut attack_rng = rng::stream(seed, client.id, round, Purpose::Attack);
                (attack::gaussian_attack(self.model.dim(), scale, &mut attack_rng)?, None, true)
            }
            Role::Byzantine(AttackSpec::None) => unreachable!("clients without an attack are honest"),
        };
        Ok((ClientMessage::new(client.id, message), pre_noise, attacked))
    }

    /// One communication round. `round` starts at 1 and keys the random streams.
    pub fn run_round(&self, params: &ModelParams, round: usize) -> Result<(ModelParams, RoundDiagnostics)> {
        let results = self
            .exec
            .map_slice(&self.clients, |c| self.client_message(params, c, round));
        let mut messages = Vec::with_capacity(self.clients.len());
        let mut honest = Vec::new();
        let mut attacked = Vec::new();
        for (client, result) in self.clients.iter().zip(results) {
            let (msg, pre_noise, was_attacked) = result?;
            assert_eq!(was_attacked, !client.is_honest(), "client {} routed wrongly", client.id);
            if let Some(g) = pre_noise {
                honest.push(ClientMessage::new(client.id, g));
            }
            if was_attacked {
                attacked.push(client.id);
            }
            messages.push(msg);
        }
        let outcome = self.cfg.rule.apply_with(&messages, self.exec)?;
        if !linalg::all_finite(&outcome.aggregate) {
            return Err(EngineError::Divergence {
                round,
                what: "aggregate",
            });
        }
        let mut next = params.clone();
        next.descend(self.cfg.eta, &outcome.aggregate);
        if !linalg::all_finite(&next.theta) {
            return Err(EngineError::Divergence {
                round,
                what: "parameters",
            });
        }

        let sigma = self.noise_sigma2()?.sqrt();
        let (lemma_lhs, lemma_rhs) =
            lemma1_diagnostic(messages.len(), &honest, &outcome, sigma, self.cfg.rule.keep_fraction());
        let grad_h = linalg::mean(honest.iter().map(|m| m.gradient.as_slice()));
        let heterogeneity_r = honest
            .iter()
            .map(|m| linalg::dist(&m.gradient, &grad_h))
            .fold(0.0, f64::max);
        let diag = RoundDiagnostics {
            agg_grad_norm: linalg::norm(&outcome.aggregate),
            lemma_lhs,
            lemma_rhs,
            heterogeneity_r,
            honest_grad_norm_sq: linalg::norm_sq(&grad_h),
            attacked,
            outcome,
        };
        Ok((next, diag))
    }

    /// `H(theta)` over all clients' real shards.
    pub fn fair_objective(&self, params: &ModelParams) -> Result<f64> {
        let q = self.cfg.q;
        let losses = self
            .exec
            .map_slice(&self.clients, |c| self.model.base_loss(params, &c.shard.samples));
        let mut total = 0.0;
        for (w, loss) in self.weights.iter().zip(losses) {
            total += w / (q + 1.0) * loss?.powf(q + 1.0);
        }
        Ok(total)
    }

    pub fn evaluate_round(&self, params: &ModelParams, round: usize, diag: Option<&RoundDiagnostics>) -> Result<RoundMetrics> {
        let (global_accuracy, per_client_accuracy, accuracy_variance) =
            evaluate(&self.model, params, &self.client_tests, &self.global_test)?;
        Ok(RoundMetrics {
            round,
            global_accuracy,
            per_client_accuracy,
            accuracy_variance,
            fair_loss_h: self.fair_objective(params)?,
            agg_grad_norm: diag.map(|d| d.agg_grad_norm),
            lemma_lhs: diag.map(|d| d.lemma_lhs),
            lemma_rhs: diag.map(|d| d.lemma_rhs),
            heterogeneity_r: diag.map(|d| d.heterogeneity_r),
            honest_grad_norm_sq: diag.map(|d| d.honest_grad_norm_sq),
            kept_indices: diag.map(|d| d.outcome.kept.clone()).unwrap_or_default(),
        })
    }

    pub fn byzantine_fraction(&self) -> f64 {
        let byz = self.clients.iter().filter(|c| !c.is_honest()).count();
        byz as f64 / self.clients.len() as f64
    }

    fn flags(&self) -> Vec<String> {
        let mut flags = Vec::new();
        let configured = self.cfg.byzantine_ids.len() as f64 / self.cfg.n_clients as f64;
        if self.cfg.attack != AttackSpec::None && configured >= 1.0 / 3.0 {
            flags.push("byzantine_fraction_at_least_one_third".to_string());
        }
        flags
    }

    /// Runs `rounds` updates from zero parameters.
    pub fn run(&self) -> std::result::Result<ExperimentReport, RunFailure> {
        let start = Instant::now();
        let mut report = ExperimentReport {
            config: self.cfg.clone(),
            byzantine_fraction: self.byzantine_fraction(),
            flags: self.flags(),
            rounds: Vec::new(),
            final_params: self.initial_params(),
            duration_secs: 0.0,
            divergence: None,
        };
        let fail = |error: EngineError, mut report: ExperimentReport, params: ModelParams| {
            report.divergence = Some(error.to_string());
            report.final_params = params;
            report.duration_secs = start.elapsed().as_secs_f64();
            RunFailure {
                error,
                partial: Some(Box::new(report)),
            }
        };
        let mut params = self.initial_params();
        match self.evaluate_round(&params, 0, None) {
            Ok(m) => report.rounds.push(m),
            Err(e) => return Err(fail(e, report, params)),
        }
        let total = self.cfg.rounds;
        for round in 1..=total {
            let (next, diag) = match self.run_round(&params, round) {
                Ok(v) => v,
                Err(e) => return Err(fail(e, report, params)),
            };
            params = next;
            if round % self.cfg.eval_every == 0 || round == total {
                match self.evaluate_round(&params, round, Some(&diag)) {
                    Ok(m) => report.rounds.push(m),
                    Err(e) => return Err(fail(e, report, params)),
                }
            }
        }
        report.final_params = params;
        report.duration_secs = start.elapsed().as_secs_f64();
        Ok(report)
    }
}

/// Loads data and runs the configured experiment.
pub fn run_experiment(cfg: &ExperimentConfig) -> std::result::Result<ExperimentReport, RunFailure> {
    let exp = Experiment::prepare(cfg).map_err(|error| RunFailure { error, partial: None })?;
    exp.run()
}

/// Serde adapter writing non-finite values as strings so reports reload.
mod opt_f64 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            None => s.serialize_none(),
            Some(x) if x.is_finite() => s.serialize_some(&Repr::Num(*x)),
            Some(x) => s.serialize_some(&Repr::Text(x.to_string())),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Option::<Repr>::deserialize(d)? {
            None => Ok(None),
            Some(Repr::Num(x)) => Ok(Some(x)),
            Some(Repr::Text(t)) => t.parse().map(Some).map_err(serde::de::Error::custom),
        }
    }
}
