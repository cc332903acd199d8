//! Physical-layer arithmetic: UAV propulsion power, fluid-traffic vehicle
//! flow, air/ground channel rates, and per-task delay and energy accounting.
//!
//! Everything here is a pure function over value inputs; the simulator owns
//! all state.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const GRAVITY: f64 = 9.8;

#[derive(Debug, Error, PartialEq)]
pub enum NetModelError {
    #[error("velocity must be positive, got {0} m/s (propulsion power diverges at hover)")]
    NonPositiveVelocity(f64),
    #[error("traffic density {density} outside [0, {max}]")]
    DensityOutOfRange { density: f64, max: f64 },
    #[error("distance must be positive, got {0} m")]
    NonPositiveDistance(f64),
    #[error("allocated compute must be positive, got {0} cycles/s")]
    NonPositiveCompute(f64),
    #[error("link rate must be positive, got {0} bit/s")]
    NonPositiveRate(f64),
    #[error("leave ratio {0} outside [0, 1]")]
    LeaveRatioOutOfRange(f64),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UavState {
    pub id: u64,
    /// Horizontal position in metres.
    pub position: (f64, f64),
    /// Fixed hovering altitude for the current task, metres.
    pub altitude: f64,
    pub velocity: f64,
    pub acceleration: f64,
    /// Remaining battery energy, joules.
    pub energy: f64,
    /// Battery capacity, joules.
    pub capacity: f64,
    /// Minimum energy reserve, joules.
    pub energy_reserve: f64,
    pub tx_power: f64,
    pub downlink_bandwidth: f64,
    pub max_velocity: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: u64,
    pub position: (f64, f64),
    pub velocity: f64,
    pub tx_power: f64,
    pub uplink_bandwidth: f64,
    /// Effective switched capacitance of the CPU.
    pub switched_capacitance: f64,
    /// Unit compute cost, cents.
    pub unit_cost: f64,
    /// Maximum contributable compute, cycles/s.
    pub max_compute: f64,
}

/// One offloadable computation task.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Task {
    pub owner_uav: u64,
    pub index: u32,
    /// Input size, bits.
    pub data_bits: f64,
    /// CPU cycles needed per input bit.
    pub cycles_per_bit: f64,
    /// Deadline, seconds.
    pub ttl: f64,
    /// Urgency in [0, 1].
    pub urgency: f64,
    /// Output/input size ratio in (0, 1).
    pub output_ratio: f64,
}

/// How the noise figure in the rate formula is interpreted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    /// `noise` is a spectral density in W/Hz; the denominator is B * noise.
    #[default]
    SpectralDensity,
    /// `noise` is total in-band power in W; the denominator is noise alone.
    TotalPower,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Linear channel gain at the 1 m reference distance.
    pub reference_gain: f64,
    /// Path-loss exponent, > 1.
    pub path_loss_exp: f64,
    /// Noise figure; see `noise_model`.
    pub noise: f64,
    pub noise_model: NoiseModel,
    /// Vehicles per metre of road.
    pub traffic_density: f64,
    pub max_traffic_density: f64,
    pub min_vehicle_velocity: f64,
    pub max_vehicle_velocity: f64,
    /// Bandwidth used on aerial relay hops, Hz.
    pub a2a_bandwidth: f64,
    /// Transmit power on aerial relay hops, W.
    pub a2a_tx_power: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            reference_gain: 1e-5,  // -50 dB
            path_loss_exp: 2.0,
            noise: 1e-13,          // -100 dBm as W/Hz
            noise_model: NoiseModel::SpectralDensity,
            traffic_density: 0.05,
            max_traffic_density: 0.1,
            min_vehicle_velocity: 24.0 / 3.6,
            max_vehicle_velocity: 72.0 / 3.6,
            a2a_bandwidth: 10e6,
            a2a_tx_power: 1.0,
        }
    }
}

/// Propulsion power at velocity `v` and acceleration `a`:
/// `c1*v^3 + (c2/v)*(1 + a^2/g^2)`. Singular at v = 0; callers clamp hover
/// to a configured floor before asking.
pub fn flying_power(v: f64, a: f64, c1: f64, c2: f64) -> Result<f64, NetModelError> {
    if v <= 0.0 {
        return Err(NetModelError::NonPositiveVelocity(v));
    }
    Ok(c1 * v.powi(3) + (c2 / v) * (1.0 + (a * a) / (GRAVITY * GRAVITY)))
}

/// Velocity that minimizes `flying_power` for fixed acceleration. Useful for
/// checking the power curve's single interior minimum.
pub fn min_power_velocity(a: f64, c1: f64, c2: f64) -> f64 {
    (c2 * (1.0 + (a * a) / (GRAVITY * GRAVITY)) / (3.0 * c1)).powf(0.25)
}

/// Fluid traffic model: mean vehicle speed falls linearly with density and
/// never drops below the configured minimum.
pub fn average_vehicle_velocity(
    density: f64,
    params: &ChannelParams,
) -> Result<f64, NetModelError> {
    if density < 0.0 || density > params.max_traffic_density {
        return Err(NetModelError::DensityOutOfRange {
            density,
            max: params.max_traffic_density,
        });
    }
    let free_flow = params.max_vehicle_velocity * (1.0 - density / params.max_traffic_density);
    Ok(params.min_vehicle_velocity.max(free_flow))
}

/// Vehicles entering one UAV's coverage during a slot of length `dt`.
pub fn arrivals_per_slot(density: f64, mean_velocity: f64, dt: f64) -> f64 {
    density * mean_velocity * dt
}

/// Vehicles inside coverage per slot, from per-slot arrivals and leave
/// ratios: each slot the survivors of the previous slot plus the newcomers
/// are thinned by the leave ratio.
pub fn coverage_count(arrivals: &[f64], leave_ratio: &[f64]) -> Result<Vec<f64>, NetModelError> {
    for &o in leave_ratio {
        if !(0.0..=1.0).contains(&o) {
            return Err(NetModelError::LeaveRatioOutOfRange(o));
        }
    }
    let n = arrivals.len().min(leave_ratio.len());
    let mut out = Vec::with_capacity(n);
    let mut prev = 0.0;
    for i in 0..n {
        prev = (arrivals[i] + prev) * (1.0 - leave_ratio[i]);
        out.push(prev);
    }
    Ok(out)
}

fn shannon_rate(
    bandwidth: f64,
    tx_power: f64,
    distance: f64,
    params: &ChannelParams,
) -> f64 {
    let gain = params.reference_gain * distance.powf(-params.path_loss_exp);
    let noise_power = match params.noise_model {
        NoiseModel::SpectralDensity => bandwidth * params.noise,
        NoiseModel::TotalPower => params.noise,
    };
    bandwidth * (1.0 + tx_power * gain / noise_power).log2()
}

/// Uplink (vehicle to UAV) and downlink (UAV to vehicle) Shannon rates at
/// separation `distance`.
pub fn link_rates(
    distance: f64,
    params: &ChannelParams,
    uav: &UavState,
    vehicle: &VehicleState,
) -> Result<LinkRates, NetModelError> {
    if distance <= 0.0 {
        return Err(NetModelError::NonPositiveDistance(distance));
    }
    Ok(LinkRates {
        g2a: shannon_rate(vehicle.uplink_bandwidth, vehicle.tx_power, distance, params),
        a2g: shannon_rate(uav.downlink_bandwidth, uav.tx_power, distance, params),
    })
}

/// Aerial relay hop rate, same free-space form on the relay bandwidth/power.
pub fn a2a_rate(distance: f64, params: &ChannelParams) -> Result<f64, NetModelError> {
    if distance <= 0.0 {
        return Err(NetModelError::NonPositiveDistance(distance));
    }
    Ok(shannon_rate(params.a2a_bandwidth, params.a2a_tx_power, distance, params))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkRates {
    /// Ground-to-air uplink, bit/s.
    pub g2a: f64,
    /// Air-to-ground downlink, bit/s.
    pub a2g: f64,
}

/// How computed results travel back to the task owner.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ReturnPath {
    /// Vehicle still inside the owner's coverage: one uplink hop.
    Direct { g2a: f64 },
    /// Vehicle drove into another UAV's cell: uplink to that UAV plus an
    /// aerial relay hop back to the owner.
    Relayed { g2a_other: f64, a2a: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OffloadDelay {
    pub t_a2g: f64,
    pub t_exec: f64,
    pub t_g2a: f64,
    pub total: f64,
}

/// Per-task latency: downlink transfer, on-vehicle execution, and result
/// return over whichever path applies.
pub fn offload_delay(
    task: &Task,
    compute: f64,
    a2g_rate: f64,
    return_path: ReturnPath,
) -> Result<OffloadDelay, NetModelError> {
    if compute <= 0.0 {
        return Err(NetModelError::NonPositiveCompute(compute));
    }
    if a2g_rate <= 0.0 {
        return Err(NetModelError::NonPositiveRate(a2g_rate));
    }
    let out_bits = task.output_ratio * task.data_bits;
    let t_g2a = match return_path {
        ReturnPath::Direct { g2a } => {
            if g2a <= 0.0 {
                return Err(NetModelError::NonPositiveRate(g2a));
            }
            out_bits / g2a
        }
        ReturnPath::Relayed { g2a_other, a2a } => {
            if g2a_other <= 0.0 || a2a <= 0.0 {
                return Err(NetModelError::NonPositiveRate(g2a_other.min(a2a)));
            }
            out_bits / g2a_other + out_bits / a2a
        }
    };
    let t_a2g = task.data_bits / a2g_rate;
    let t_exec = task.cycles_per_bit * task.data_bits / compute;
    Ok(OffloadDelay {
        t_a2g,
        t_exec,
        t_g2a,
        total: t_a2g + t_exec + t_g2a,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OffloadEnergy {
    /// Vehicle-side execution energy, joules.
    pub vehicle_exec: f64,
    /// UAV transmit energy over the downlink, joules.
    pub uav_a2g: f64,
    /// UAV propulsion energy over the whole offload window, joules.
    pub uav_fly: f64,
}

/// Energy bill for one offload: `kappa*theta*D*x^2` on the vehicle, transmit
/// power times transfer time on the UAV, and propulsion power times total
/// latency while the UAV waits for results.
pub fn offload_energy(
    task: &Task,
    compute: f64,
    delay: &OffloadDelay,
    uav_tx_power: f64,
    uav_fly_power: f64,
    switched_capacitance: f64,
) -> OffloadEnergy {
    OffloadEnergy {
        vehicle_exec: switched_capacitance * task.cycles_per_bit * task.data_bits * compute * compute,
        uav_a2g: uav_tx_power * delay.t_a2g,
        uav_fly: uav_fly_power * delay.total,
    }
}

/// Deadline feasibility: total latency within the task TTL.
pub fn meets_deadline(delay: &OffloadDelay, task: &Task) -> bool {
    delay.total <= task.ttl
}

/// Battery feasibility: the reserve survives the offload, boundary inclusive.
pub fn respects_energy_reserve(
    remaining_energy: f64,
    energy: &OffloadEnergy,
    reserve: f64,
) -> bool {
    remaining_energy - energy.uav_fly - energy.uav_a2g >= reserve
}
