//! Scenario configuration: one JSON document with namespaced sections,
//! strict unknown-key rejection, dotted-path overrides, and load-time
//! validation of every cross-field constraint.

use crate::consensus::VotePolicy;
use crate::crypto::CryptoBackend;
use crate::netmodel::NoiseModel;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{0}")]
    Invalid(String),
    #[error("override path '{0}' does not name a config field")]
    BadOverridePath(String),
    #[error("override value for '{path}' does not parse: {value}")]
    BadOverrideValue { path: String, value: String },
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

/// Which consensus variant a run models.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConsensusScheme {
    /// Reputation-weighted election with level-1/level-2 split, fading
    /// reputation, and aggregated commit proofs.
    #[default]
    Proposal,
    /// Accumulative reputation: no fading, every validator may lead.
    Art,
    /// Static validator set, no reputation input, per-voter signatures in
    /// commit proofs.
    Naive,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub uav_count: usize,
    pub vehicle_count: usize,
    pub ecv_count: usize,
    pub road_length_m: f64,
    pub road_width_m: f64,
    pub uav_altitude_m: f64,
    pub uav_speed_mps: f64,
    pub uav_max_speed_mps: f64,
    pub uav_acceleration_mps2: f64,
    /// Propulsion-power velocity clamp for hover.
    pub hover_floor_mps: f64,
    pub uav_tx_power_w: f64,
    pub vehicle_tx_power_w: f64,
    pub uplink_bandwidth_hz: f64,
    pub downlink_bandwidth_hz: f64,
    pub a2g_range_m: f64,
    pub a2a_range_m: f64,
    pub reference_gain: f64,
    pub path_loss_exp: f64,
    pub noise: f64,
    pub noise_model: NoiseModel,
    pub traffic_density_per_m: f64,
    pub max_traffic_density_per_m: f64,
    pub min_vehicle_speed_mps: f64,
    pub max_vehicle_speed_mps: f64,
    pub a2a_bandwidth_hz: f64,
    pub a2a_tx_power_w: f64,
    pub battery_capacity_j: f64,
    pub battery_reserve_j: f64,
    pub switched_capacitance: f64,
    pub power_coeff_v3: f64,
    pub power_coeff_inv_v: f64,
    pub slot_seconds: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            uav_count: 10,
            vehicle_count: 200,
            ecv_count: 2,
            road_length_m: 2000.0,
            road_width_m: 20.0,
            uav_altitude_m: 50.0,
            uav_speed_mps: 10.0,
            uav_max_speed_mps: 20.0,
            uav_acceleration_mps2: 2.0,
            hover_floor_mps: 0.1,
            uav_tx_power_w: 1.0,
            vehicle_tx_power_w: 0.1,
            uplink_bandwidth_hz: 10e6,
            downlink_bandwidth_hz: 0.5e6,
            a2g_range_m: 200.0,
            a2a_range_m: 400.0,
            reference_gain: 1e-5,
            path_loss_exp: 2.0,
            noise: 1e-13,
            noise_model: NoiseModel::SpectralDensity,
            traffic_density_per_m: 0.05,
            max_traffic_density_per_m: 0.1,
            min_vehicle_speed_mps: 24.0 / 3.6,
            max_vehicle_speed_mps: 72.0 / 3.6,
            a2a_bandwidth_hz: 10e6,
            a2a_tx_power_w: 1.0,
            battery_capacity_j: 500e3,
            battery_reserve_j: 100e3,
            switched_capacitance: 1e-28,
            power_coeff_v3: 0.0037,
            power_coeff_inv_v: 5.0206,
            slot_seconds: 1.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConsensusConfig {
    pub enabled: bool,
    pub scheme: ConsensusScheme,
    pub full_nodes: usize,
    pub committee_size: usize,
    pub level1_size: usize,
    /// Committee re-election period in heights.
    pub election_cadence: u64,
    pub vote_policy: VotePolicy,
    pub crypto_backend: CryptoBackend,
    pub propose_timeout_s: f64,
    pub timeout_increment_s: f64,
    pub vote_timeout_s: f64,
    pub commit_wait_ms: f64,
    pub chunk_size_bytes: usize,
    pub block_size_txs: usize,
    pub max_heights: u64,
    /// Reject scenarios whose Byzantine count exceeds floor((Z-1)/3).
    pub strict_safety: bool,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            scheme: ConsensusScheme::Proposal,
            full_nodes: 12,
            committee_size: 10,
            level1_size: 7,
            election_cadence: 10,
            vote_policy: VotePolicy::MostReputable,
            crypto_backend: CryptoBackend::Sim,
            propose_timeout_s: 6.0,
            timeout_increment_s: 0.5,
            vote_timeout_s: 3.0,
            commit_wait_ms: 1.0,
            chunk_size_bytes: 64 * 1024,
            block_size_txs: 1000,
            max_heights: u64::MAX,
            strict_safety: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReputationConfig {
    pub decay: f64,
    pub initial: f64,
    pub delta_sbc: f64,
    pub delta_sbv: f64,
    pub delta_cp: f64,
    pub delta_cv: f64,
    pub delta_wbc: f64,
    pub delta_nbc: f64,
    pub delta_vol: f64,
    pub delta_rep: f64,
    pub delta_acc: f64,
    /// Fixed report fee, milli-cents.
    pub report_fee: u64,
    /// Informer group size for report transactions.
    pub informer_group: usize,
}

impl Default for ReputationConfig {
    fn default() -> Self {
        let p = crate::reputation::ReputationParams::default();
        Self {
            decay: p.decay,
            initial: p.initial,
            delta_sbc: p.delta_sbc,
            delta_sbv: p.delta_sbv,
            delta_cp: p.delta_cp,
            delta_cv: p.delta_cv,
            delta_wbc: p.delta_wbc,
            delta_nbc: p.delta_nbc,
            delta_vol: p.delta_vol,
            delta_rep: p.delta_rep,
            delta_acc: p.delta_acc,
            report_fee: 3000,
            informer_group: 3,
        }
    }
}

impl ReputationConfig {
    pub fn params(&self) -> crate::reputation::ReputationParams {
        crate::reputation::ReputationParams {
            delta_sbc: self.delta_sbc,
            delta_sbv: self.delta_sbv,
            delta_cp: self.delta_cp,
            delta_cv: self.delta_cv,
            delta_wbc: self.delta_wbc,
            delta_nbc: self.delta_nbc,
            delta_vol: self.delta_vol,
            delta_rep: self.delta_rep,
            delta_acc: self.delta_acc,
            decay: self.decay,
            initial: self.initial,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GameConfig {
    pub enabled: bool,
    pub satisfaction: f64,
    pub payment_weight: f64,
    pub price_coeff: f64,
    pub cost_coeff: f64,
    pub energy_coeff: f64,
    pub max_payment_cents: f64,
    pub max_compute_ghz: f64,
    pub unit_cost_range: (f64, f64),
    pub urgency_range: (f64, f64),
    pub task_data_mbit_range: (f64, f64),
    pub cycles_per_bit_range: (f64, f64),
    pub output_ratio_range: (f64, f64),
    pub tasks_per_uav_range: (u32, u32),
    pub task_ttl_s: f64,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            satisfaction: 162.0,
            payment_weight: 0.5,
            price_coeff: 8.0,
            cost_coeff: 0.05,
            energy_coeff: 0.01,
            max_payment_cents: 11.0,
            max_compute_ghz: 6.0,
            unit_cost_range: (4.0, 16.0),
            urgency_range: (0.1, 0.9),
            task_data_mbit_range: (1.0, 10.0),
            cycles_per_bit_range: (100.0, 200.0),
            output_ratio_range: (0.3, 0.7),
            tasks_per_uav_range: (10, 20),
            task_ttl_s: 10.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LearningScheme {
    #[default]
    Dqn,
    QLearn,
    Greedy,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningConfig {
    pub enabled: bool,
    pub scheme: LearningScheme,
    pub payment_levels: usize,
    pub compute_levels: usize,
    pub window_history: usize,
    pub updates_per_slot: usize,
    pub replay_capacity: usize,
    pub discount: f64,
    pub uav_greedy_prob: f64,
    pub vehicle_greedy_prob: f64,
    pub learning_rate: f64,
    pub tabular_learning_rate: f64,
    pub slots: u64,
    /// Fixed game parameters for the stationary single-pair dynamic game.
    pub stationary_unit_cost: f64,
    pub stationary_urgency: f64,
}

impl Default for LearningConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            scheme: LearningScheme::Dqn,
            payment_levels: 22,
            compute_levels: 12,
            window_history: 11,
            updates_per_slot: 4,
            replay_capacity: 1000,
            discount: 0.8,
            uav_greedy_prob: 0.92,
            vehicle_greedy_prob: 0.95,
            learning_rate: 1e-3,
            tabular_learning_rate: 0.1,
            slots: 9000,
            stationary_unit_cost: 16.0,
            stationary_urgency: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ByzantineBehavior {
    ConflictingProposals,
    ConflictingVotes,
    LockViolation,
    SilentLeader,
    InvalidBlock,
    Collusion,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionConfig {
    pub start_slot: u64,
    pub end_slot: u64,
    /// Fraction of the committee cut away (P_p).
    pub ratio: f64,
    /// Fraction of the cut-away set that is Byzantine (P_pb).
    pub byzantine_share: f64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self { start_slot: 0, end_slot: 0, ratio: 0.0, byzantine_share: 0.0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdversaryConfig {
    /// Byzantine fraction of the committee (P_b).
    pub byzantine_ratio: f64,
    /// Behaviors assigned round-robin to Byzantine nodes.
    pub behaviors: Vec<ByzantineBehavior>,
    /// Slot at which Byzantine nodes switch from honest to misbehaving
    /// (0 = misbehave from the start; > 0 models spoofing).
    pub switch_slot: u64,
    pub partition: Option<PartitionConfig>,
    /// Global stabilization time, slots. Before it, delays are long and
    /// lossy; after it, every delivery lands within the delay bound.
    pub gst_slot: u64,
    /// Post-GST delay bound, seconds.
    pub delta_s: f64,
    pub pre_gst_max_delay_factor: f64,
    pub pre_gst_drop_prob: f64,
    /// Link throughput for size-dependent delay, bytes/second.
    pub bandwidth_bytes_per_s: f64,
}

impl Default for AdversaryConfig {
    fn default() -> Self {
        Self {
            byzantine_ratio: 0.0,
            behaviors: vec![],
            switch_slot: 0,
            partition: None,
            gst_slot: 0,
            delta_s: 1.0,
            pre_gst_max_delay_factor: 10.0,
            pre_gst_drop_prob: 0.1,
            bandwidth_bytes_per_s: 12.5e6,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadConfig {
    pub txs_per_slot: usize,
    pub tx_bytes: usize,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        Self { txs_per_slot: 1200, tx_bytes: 120 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// Joules charged per transmitted byte in the energy proxy.
    pub energy_per_byte_j: f64,
    /// Joules charged per signature verification in the energy proxy.
    pub energy_per_verify_j: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { energy_per_byte_j: 1e-6, energy_per_verify_j: 1e-4 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub slots: u64,
    pub network: NetworkConfig,
    pub consensus: ConsensusConfig,
    pub reputation: ReputationConfig,
    pub game: GameConfig,
    pub learning: LearningConfig,
    pub adversary: AdversaryConfig,
    pub workload: WorkloadConfig,
    pub metrics: MetricsConfig,
}

impl ScenarioConfig {
    pub fn from_json(json: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = serde_json::from_str(json)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Apply `key=value` overrides where the key is a dotted path into the
    /// JSON document, then re-validate.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut value = serde_json::to_value(self)?;
        for (path, raw) in overrides {
            let mut cursor = &mut value;
            let parts: Vec<&str> = path.split('.').collect();
            for (i, part) in parts.iter().enumerate() {
                let map = cursor
                    .as_object_mut()
                    .ok_or_else(|| ConfigError::BadOverridePath(path.clone()))?;
                if i + 1 == parts.len() {
                    let parsed: serde_json::Value = serde_json::from_str(raw)
                        .unwrap_or_else(|_| serde_json::Value::String(raw.clone()));
                    if !map.contains_key(*part) {
                        return Err(ConfigError::BadOverridePath(path.clone()));
                    }
                    map.insert(part.to_string(), parsed);
                } else {
                    cursor = map
                        .get_mut(*part)
                        .ok_or_else(|| ConfigError::BadOverridePath(path.clone()))?;
                }
            }
        }
        let cfg: ScenarioConfig = serde_json::from_value(value).map_err(|e| {
            ConfigError::BadOverrideValue { path: "<merged>".into(), value: e.to_string() }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn byzantine_count(&self) -> usize {
        (self.adversary.byzantine_ratio * self.consensus.committee_size as f64).round() as usize
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let c = &self.consensus;
        if c.enabled {
            if c.committee_size == 0 {
                return Err(invalid("consensus.committee_size must be positive"));
            }
            if c.level1_size == 0 || c.level1_size > c.committee_size {
                return Err(invalid(format!(
                    "consensus.level1_size {} must be in 1..={}",
                    c.level1_size, c.committee_size
                )));
            }
            if c.full_nodes < c.committee_size {
                return Err(invalid(format!(
                    "consensus.full_nodes {} < committee_size {}",
                    c.full_nodes, c.committee_size
                )));
            }
            if c.chunk_size_bytes == 0 {
                return Err(invalid("consensus.chunk_size_bytes must be positive"));
            }
        }
        let a = &self.adversary;
        if !(0.0..=1.0).contains(&a.byzantine_ratio) {
            return Err(invalid("adversary.byzantine_ratio must be in [0, 1]"));
        }
        if a.byzantine_ratio > 0.0 && a.behaviors.is_empty() {
            return Err(invalid("adversary.behaviors must be set when byzantine_ratio > 0"));
        }
        if c.strict_safety {
            let fault_bound = (c.committee_size.saturating_sub(1)) / 3;
            let byz = self.byzantine_count();
            if byz > fault_bound {
                return Err(invalid(format!(
                    "byzantine_ratio {} gives {} faulty validators, exceeding the \
                     tolerated floor((Z-1)/3) = {} under strict_safety",
                    a.byzantine_ratio, byz, fault_bound
                )));
            }
        }
        if let Some(p) = &a.partition {
            if !(0.0..=1.0).contains(&p.ratio) || !(0.0..=1.0).contains(&p.byzantine_share) {
                return Err(invalid("partition ratios must be in [0, 1]"));
            }
            if p.end_slot < p.start_slot {
                return Err(invalid("partition.end_slot before start_slot"));
            }
        }
        let n = &self.network;
        if n.path_loss_exp <= 1.0 {
            return Err(invalid("network.path_loss_exp must exceed 1"));
        }
        if n.max_traffic_density_per_m <= 0.0
            || n.traffic_density_per_m < 0.0
            || n.traffic_density_per_m > n.max_traffic_density_per_m
        {
            return Err(invalid("traffic density outside [0, max_traffic_density]"));
        }
        let g = &self.game;
        if g.enabled {
            if g.max_compute_ghz <= 0.0 || g.max_payment_cents <= 0.0 {
                return Err(invalid("game strategy bounds must be positive"));
            }
            if g.unit_cost_range.0 > g.unit_cost_range.1 || g.unit_cost_range.0 <= 0.0 {
                return Err(invalid("game.unit_cost_range malformed"));
            }
            if g.urgency_range.0 > g.urgency_range.1
                || g.urgency_range.0 < 0.0
                || g.urgency_range.1 > 1.0
            {
                return Err(invalid("game.urgency_range must lie inside [0, 1]"));
            }
        }
        let l = &self.learning;
        if l.enabled {
            if l.payment_levels < 2 || l.compute_levels < 2 {
                return Err(invalid("learning grids need at least two levels"));
            }
            if !(0.0..=1.0).contains(&l.uav_greedy_prob)
                || !(0.0..=1.0).contains(&l.vehicle_greedy_prob)
                || !(0.0..=1.0).contains(&l.discount)
            {
                return Err(invalid("learning probabilities must lie in [0, 1]"));
            }
        }
        if self.slots == 0 {
            return Err(invalid("slots must be positive"));
        }
        Ok(())
    }
}
