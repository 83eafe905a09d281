//! Aggregation strategies.
//!
//! Every strategy weights client `i` in round `r` by a convex mixture of
//! three normalized terms:
//!
//! ```text
//! pi_r^i = a * s^i / S  +  b * d_r^i / D_r  +  (1 - a - b) * k_r^i / K_r
//! ```
//!
//! where `s^i` is the client's sample count, `d_r^i` the loss ratio between
//! its previous and current evaluation (derivative term) and `k_r^i` an
//! exponentially decayed sum of its past losses (integral term). Normalizers
//! are taken over the round's cohort. FedAvg keeps only the sample term,
//! FedCostWAvg the sample and derivative terms, FedControl all three.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamVector;

/// Floor applied to losses before they are used as a divisor.
pub const LOSS_EPSILON: f64 = 1e-12;

/// Slack on `alpha + beta <= 1`; an integral coefficient this small is zero.
const COEF_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    FedAvg,
    FedCostWAvg,
    FedControl,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    #[serde(default = "third")]
    pub alpha: f64,
    #[serde(default = "third")]
    pub beta: f64,
    #[serde(default = "one")]
    pub lambda: f64,
}

fn third() -> f64 {
    1.0 / 3.0
}

fn one() -> f64 {
    1.0
}

/// Effective coefficients of the sample, derivative and integral terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mixture {
    pub sample: f64,
    pub derivative: f64,
    pub integral: f64,
}

impl StrategyConfig {
    pub fn fedavg() -> Self {
        StrategyConfig {
            kind: StrategyKind::FedAvg,
            alpha: 1.0,
            beta: 0.0,
            lambda: 1.0,
        }
    }

    /// FedCostWAvg. `alpha` and `beta` are rescaled to sum to one.
    pub fn fed_cost_w_avg(alpha: f64, beta: f64) -> Self {
        StrategyConfig {
            kind: StrategyKind::FedCostWAvg,
            alpha,
            beta,
            lambda: 1.0,
        }
    }

    pub fn fedcontrol(alpha: f64, beta: f64, lambda: f64) -> Self {
        StrategyConfig {
            kind: StrategyKind::FedControl,
            alpha,
            beta,
            lambda,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("strategy.{name}"), "must be finite"))
            }
        };
        finite("alpha", self.alpha)?;
        finite("beta", self.beta)?;
        finite("lambda", self.lambda)?;
        if self.kind == StrategyKind::FedAvg {
            return Ok(());
        }
        if self.alpha < 0.0 {
            return Err(Error::config("strategy.alpha", "must be >= 0"));
        }
        if self.beta < 0.0 {
            return Err(Error::config("strategy.beta", "must be >= 0"));
        }
        match self.kind {
            StrategyKind::FedCostWAvg => {
                if self.alpha + self.beta <= 0.0 {
                    return Err(Error::config(
                        "strategy.alpha + beta",
                        "must be > 0 for fedcostwavg",
                    ));
                }
            }
            StrategyKind::FedControl => {
                if self.alpha + self.beta > 1.0 + COEF_TOLERANCE {
                    return Err(Error::config(
                        "strategy.alpha + beta",
                        format!("must be <= 1, got {}", self.alpha + self.beta),
                    ));
                }
                if !(0.0..=1.0).contains(&self.lambda) {
                    return Err(Error::config("strategy.lambda", "must lie in [0, 1]"));
                }
            }
            StrategyKind::FedAvg => unreachable!(),
        }
        Ok(())
    }

    pub fn mixture(&self) -> Mixture {
        match self.kind {
            StrategyKind::FedAvg => Mixture {
                sample: 1.0,
                derivative: 0.0,
                integral: 0.0,
            },
            StrategyKind::FedCostWAvg => {
                let total = self.alpha + self.beta;
                Mixture {
                    sample: self.alpha / total,
                    derivative: self.beta / total,
                    integral: 0.0,
                }
            }
            StrategyKind::FedControl => {
                let rest = 1.0 - self.alpha - self.beta;
                Mixture {
                    sample: self.alpha,
                    derivative: self.beta,
                    integral: if rest > COEF_TOLERANCE { rest } else { 0.0 },
                }
            }
        }
    }

    /// Short name used in output file names. Coefficients are spelled out
    /// unless they are the default `alpha = beta = 1/3`.
    pub fn label(&self) -> String {
        let default_mix = self.alpha == third() && self.beta == third();
        match self.kind {
            StrategyKind::FedAvg => "fedavg".to_string(),
            StrategyKind::FedCostWAvg if default_mix => "fedcostwavg".to_string(),
            StrategyKind::FedCostWAvg => format!("fedcostwavg_a{}_b{}", self.alpha, self.beta),
            StrategyKind::FedControl if default_mix => format!("fedcontrol_l{}", self.lambda),
            StrategyKind::FedControl => {
                format!("fedcontrol_a{}_b{}_l{}", self.alpha, self.beta, self.lambda)
            }
        }
    }
}

/// Per-client history of post-training local losses, indexed by round.
///
/// Round 0 holds the loss of the initial global model on the client's data.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossLedger {
    histories: Vec<Vec<(usize, f64)>>,
}

impl LossLedger {
    pub fn new(num_clients: usize) -> Self {
        LossLedger {
            histories: vec![Vec::new(); num_clients],
        }
    }

    pub fn num_clients(&self) -> usize {
        self.histories.len()
    }

    /// Record the loss of `client` at `round`. Rounds must be strictly
    /// increasing per client.
    pub fn record(&mut self, client: usize, round: usize, loss: f64) -> Result<()> {
        check_loss(loss)?;
        let known = self.histories.len();
        let history = self.histories.get_mut(client).ok_or(Error::Shape {
            expected: known,
            found: client + 1,
        })?;
        if let Some(&(last, _)) = history.last() {
            if round <= last {
                return Err(Error::config(
                    "ledger",
                    format!("client {client}: round {round} recorded after round {last}"),
                ));
            }
        }
        history.push((round, loss));
        Ok(())
    }

    pub fn history(&self, client: usize) -> &[(usize, f64)] {
        self.histories.get(client).map_or(&[], Vec::as_slice)
    }

    pub fn loss_at(&self, client: usize, round: usize) -> Option<f64> {
        let history = self.history(client);
        history
            .binary_search_by_key(&round, |&(r, _)| r)
            .ok()
            .map(|idx| history[idx].1)
    }

    /// Most recent loss recorded strictly before `round`.
    pub fn loss_before(&self, client: usize, round: usize) -> Option<(usize, f64)> {
        self.history(client)
            .iter()
            .rev()
            .find(|&&(r, _)| r < round)
            .copied()
    }

    pub fn participated(&self, client: usize, round: usize) -> bool {
        self.loss_at(client, round).is_some()
    }
}

/// Convex weights for the clients of one round, in cohort order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregationWeights {
    clients: Vec<usize>,
    weights: Vec<f64>,
}

impl AggregationWeights {
    pub fn clients(&self) -> &[usize] {
        &self.clients
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weight_of(&self, client: usize) -> Option<f64> {
        self.clients
            .iter()
            .position(|&c| c == client)
            .map(|idx| self.weights[idx])
    }
}

fn check_loss(value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidLoss { value })
    }
}

/// Ratio of previous to current loss, both floored at [`LOSS_EPSILON`].
pub fn derivative_term(prev_loss: f64, curr_loss: f64) -> Result<f64> {
    check_loss(prev_loss)?;
    check_loss(curr_loss)?;
    Ok(prev_loss.max(LOSS_EPSILON) / curr_loss.max(LOSS_EPSILON))
}

/// `sum over recorded r' <= round of lambda^(round - r') * loss_r'`, with
/// `0^0 = 1`.
pub fn integral_term(history: &[(usize, f64)], round: usize, lambda: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::config("lambda", "must lie in [0, 1]"));
    }
    let mut total = 0.0;
    let mut seen = false;
    for &(r, loss) in history {
        if r > round {
            continue;
        }
        check_loss(loss)?;
        let lag = i32::try_from(round - r).unwrap_or(i32::MAX);
        total += lambda.powi(lag) * loss;
        seen = true;
    }
    if !seen {
        return Err(Error::MissingHistory { client: 0, round });
    }
    Ok(total)
}

/// Aggregation weights for `cohort` at `round`.
///
/// `sample_counts` and `ledger` are indexed by client id. The derivative
/// term compares the loss recorded at `round` with the client's most recent
/// earlier entry; the integral term sums entries from round 1 onwards.
pub fn compute_weights(
    cohort: &[usize],
    sample_counts: &[usize],
    ledger: &LossLedger,
    round: usize,
    cfg: &StrategyConfig,
) -> Result<AggregationWeights> {
    if cohort.is_empty() {
        return Err(Error::EmptyInput);
    }
    cfg.validate()?;
    let mix = cfg.mixture();

    let mut samples = Vec::with_capacity(cohort.len());
    for &client in cohort {
        let count = *sample_counts.get(client).ok_or(Error::Shape {
            expected: sample_counts.len(),
            found: client + 1,
        })?;
        samples.push(count as f64);
    }
    let total: f64 = samples.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateCohort("sample"));
    }
    let mut weights: Vec<f64> = samples.iter().map(|s| mix.sample * (s / total)).collect();

    if mix.derivative > 0.0 {
        let mut terms = Vec::with_capacity(cohort.len());
        for &client in cohort {
            let curr = ledger
                .loss_at(client, round)
                .ok_or(Error::MissingHistory { client, round })?;
            let (_, prev) = ledger
                .loss_before(client, round)
                .ok_or(Error::MissingHistory {
                    client,
                    round: round.saturating_sub(1),
                })?;
            terms.push(derivative_term(prev, curr)?);
        }
        add_normalized(&mut weights, &terms, mix.derivative, "derivative")?;
    }

    if mix.integral > 0.0 {
        let mut terms = Vec::with_capacity(cohort.len());
        for &client in cohort {
            let history = ledger.history(client);
            let start = history.partition_point(|&(r, _)| r < 1);
            let term = integral_term(&history[start..], round, cfg.lambda).map_err(|e| match e {
                Error::MissingHistory { round, .. } => Error::MissingHistory { client, round },
                other => other,
            })?;
            terms.push(term);
        }
        add_normalized(&mut weights, &terms, mix.integral, "integral")?;
    }

    // Only the sample term active: s^i / S is already exact.
    if mix.derivative > 0.0 || mix.integral > 0.0 {
        let sum: f64 = weights.iter().sum();
        if sum != 1.0 {
            for w in &mut weights {
                *w /= sum;
            }
        }
    }

    Ok(AggregationWeights {
        clients: cohort.to_vec(),
        weights,
    })
}

fn add_normalized(weights: &mut [f64], terms: &[f64], coef: f64, name: &'static str) -> Result<()> {
    let total: f64 = terms.iter().sum();
    if !total.is_finite() || total <= 0.0 {
        return Err(Error::DegenerateCohort(name));
    }
    for (w, t) in weights.iter_mut().zip(terms) {
        *w += coef * (t / total);
    }
    Ok(())
}

/// Coordinate-wise weighted combination of client parameter vectors.
pub fn aggregate(params: &[ParamVector], weights: &AggregationWeights) -> Result<ParamVector> {
    let first = params.first().ok_or(Error::EmptyInput)?;
    if params.len() != weights.len() {
        return Err(Error::Shape {
            expected: weights.len(),
            found: params.len(),
        });
    }
    let dim = first.dim();
    let mut out = vec![0.0; dim];
    for (p, &w) in params.iter().zip(weights.weights()) {
        if p.dim() != dim {
            return Err(Error::Shape {
                expected: dim,
                found: p.dim(),
            });
        }
        for (o, v) in out.iter_mut().zip(p.as_slice()) {
            *o += w * v;
        }
    }
    ParamVector::new(out)
}
