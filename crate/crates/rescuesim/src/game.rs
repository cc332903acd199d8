//! Static offloading game between a UAV (leader, sets payment per unit of
//! compute) and a ground vehicle (follower, sets contributed compute).
//!
//! Compute `x` is in GHz and payments `y` in cents throughout. The energy
//! and delay context enters the payoffs as constants: the closed-form
//! analysis differentiates only through the price/cost terms, and the payoff
//! functions here follow that convention so analytic derivatives and finite
//! differences agree exactly.
//!
//! A brute-force grid oracle lives alongside the closed forms and never
//! shares code with them; every equilibrium claim is checkable against it.

use serde::{Deserialize, Serialize};

/// Constant energy/delay surroundings of one task offload.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct OffloadContext {
    /// Total offload latency, seconds.
    pub total_delay: f64,
    /// Vehicle-side execution energy at the operating point, joules.
    pub vehicle_exec_energy: f64,
    /// Vehicle transmit energy returning results, joules.
    pub vehicle_return_energy: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GameParams {
    /// Leader satisfaction scale (rho).
    pub satisfaction: f64,
    /// Task urgency in [0, 1] (alpha).
    pub urgency: f64,
    /// Weight of the payment term against the delay term (varpi_p).
    pub payment_weight: f64,
    /// Price adjustment (lambda_p).
    pub price_coeff: f64,
    /// Quadratic cost adjustment (lambda_c).
    pub cost_coeff: f64,
    /// Energy cost adjustment (lambda_e).
    pub energy_coeff: f64,
    /// Vehicle unit compute cost in cents (psi).
    pub unit_cost: f64,
    /// Follower strategy bound, GHz.
    pub max_compute: f64,
    /// Leader strategy bound, cents.
    pub max_payment: f64,
    pub context: OffloadContext,
}

impl Default for GameParams {
    fn default() -> Self {
        Self {
            satisfaction: 162.0,
            urgency: 0.5,
            payment_weight: 0.5,
            price_coeff: 8.0,
            cost_coeff: 0.05,
            energy_coeff: 0.01,
            unit_cost: 8.0,
            max_compute: 6.0,
            max_payment: 11.0,
            context: OffloadContext::default(),
        }
    }
}

/// One settled (compute, payment) pair. `participating = false` means the
/// vehicle sits out and both payoffs are zero.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct StrategyPair {
    pub compute: f64,
    pub payment: f64,
    pub participating: bool,
}

/// Follower payoff: revenue minus quadratic resource cost minus the energy
/// bill. Contributing nothing means not participating, which pays zero (the
/// return-transfer term is otherwise undefined at x = 0).
pub fn vehicle_payoff(x: f64, y: f64, p: &GameParams) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let revenue = p.price_coeff * y * x;
    let resource_cost = p.cost_coeff * p.unit_cost * x * x;
    let energy_cost =
        p.energy_coeff * (p.context.vehicle_exec_energy + p.context.vehicle_return_energy);
    revenue - resource_cost - energy_cost
}

/// d(vehicle_payoff)/dx on the interior; the energy context is constant.
pub fn vehicle_payoff_dx(x: f64, y: f64, p: &GameParams) -> f64 {
    let _ = x;
    p.price_coeff * y - 2.0 * p.cost_coeff * p.unit_cost * x
}

/// Leader payoff for one (vehicle, task) pair: log satisfaction in the
/// obtained compute minus the weighted payment and delay costs.
pub fn uav_payoff_pair(x: f64, y: f64, p: &GameParams) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let satisfaction = p.satisfaction * p.urgency * (1.0 + x).ln();
    let payment_cost = p.payment_weight * p.price_coeff * y * x;
    let delay_cost = (1.0 - p.payment_weight) * p.context.total_delay;
    satisfaction - payment_cost - delay_cost
}

/// Leader payoff over independent (vehicle, task) pairs; the objective is
/// separable so the sum is just the per-pair payoffs added up.
pub fn uav_payoff(pairs: &[(StrategyPair, GameParams)]) -> f64 {
    pairs
        .iter()
        .filter(|(s, _)| s.participating)
        .map(|(s, p)| uav_payoff_pair(s.compute, s.payment, p))
        .sum()
}

/// Leader objective reduced through the follower's interior best response
/// x(y) = price*y / (2*cost*psi). Valid on 0 < y < payment threshold.
pub fn uav_reduced_objective(y: f64, p: &GameParams) -> f64 {
    let c2 = 2.0 * p.cost_coeff * p.unit_cost;
    let x = p.price_coeff * y / c2;
    p.satisfaction * p.urgency * (1.0 + x).ln()
        - p.payment_weight * p.price_coeff.powi(2) * y * y / c2
        - (1.0 - p.payment_weight) * p.context.total_delay
}

/// d(uav_reduced_objective)/dy on the interior.
pub fn uav_reduced_objective_dy(y: f64, p: &GameParams) -> f64 {
    let cc = p.cost_coeff * p.unit_cost;
    p.satisfaction * p.urgency * p.price_coeff / (2.0 * cc + p.price_coeff * y)
        - p.payment_weight * p.price_coeff.powi(2) * y / cc
}

/// Inputs for the hard feasibility constraints around one offload.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FeasibilityInputs {
    pub total_delay: f64,
    pub ttl: f64,
    pub uav_energy: f64,
    pub fly_energy: f64,
    pub a2g_energy: f64,
    pub energy_reserve: f64,
}

/// Deadline, battery-reserve, and box constraints, all inclusive.
pub fn feasible(x: f64, y: f64, p: &GameParams, f: &FeasibilityInputs) -> bool {
    f.total_delay <= f.ttl
        && f.uav_energy - f.fly_energy - f.a2g_energy >= f.energy_reserve
        && (0.0..=p.max_payment).contains(&y)
        && (0.0..=p.max_compute).contains(&x)
}

/// Payment level above which the follower saturates at its compute bound.
pub fn saturation_payment(p: &GameParams) -> f64 {
    2.0 * p.cost_coeff * p.unit_cost * p.max_compute / p.price_coeff
}

/// Follower best response: saturate above the threshold, interior stationary
/// point below it, sit out at zero payment.
pub fn best_response_aocr(y: f64, p: &GameParams) -> f64 {
    if y <= 0.0 {
        0.0
    } else if y >= saturation_payment(p) {
        p.max_compute
    } else {
        p.price_coeff * y / (2.0 * p.cost_coeff * p.unit_cost)
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PaymentSolution {
    pub payment: f64,
    /// Sign decides the branch: boundary payment when non-negative.
    pub theta: f64,
    pub omega: f64,
    /// True when the unclipped optimum exceeded the payment bound.
    pub clipped: bool,
}

/// Leader optimum by backward induction through the follower response.
pub fn optimal_payment(p: &GameParams) -> PaymentSolution {
    let cc = p.cost_coeff * p.unit_cost;
    let w = p.payment_weight;
    let sat = p.satisfaction * p.urgency;
    let theta = sat - 4.0 * w * cc * p.max_compute * (1.0 + p.max_compute);
    let omega = w * w * cc * cc + w * cc * sat;
    let raw = if theta >= 0.0 {
        saturation_payment(p)
    } else {
        (omega.sqrt() - w * cc) / (w * p.price_coeff)
    };
    let payment = raw.clamp(0.0, p.max_payment);
    PaymentSolution {
        payment,
        theta,
        omega,
        clipped: raw > p.max_payment,
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Equilibrium {
    pub compute: f64,
    pub payment: f64,
    pub theta: f64,
    /// Interior compute as printed in the source equilibrium expression,
    /// which drops a payment-weight factor relative to composing the two
    /// best responses. Reported for transparency; `compute` is the composed
    /// value.
    pub compute_printed: f64,
    pub uav_payoff: f64,
    pub vehicle_payoff: f64,
}

/// The game's equilibrium: the leader optimum passed through the follower
/// best response.
pub fn equilibrium(p: &GameParams) -> Equilibrium {
    let sol = optimal_payment(p);
    let x = best_response_aocr(sol.payment, p);
    let cc = p.cost_coeff * p.unit_cost;
    let compute_printed = if sol.theta >= 0.0 || sol.clipped {
        x
    } else {
        (sol.omega.sqrt() - p.payment_weight * cc) / (2.0 * cc)
    };
    Equilibrium {
        compute: x,
        payment: sol.payment,
        theta: sol.theta,
        compute_printed,
        uav_payoff: uav_payoff_pair(x, sol.payment, p),
        vehicle_payoff: vehicle_payoff(x, sol.payment, p),
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GridSolution {
    pub compute: f64,
    pub payment: f64,
    pub leader_payoff: f64,
    pub follower_payoff: f64,
    /// Worst-case payoff the grid can miss relative to the continuum:
    /// two grid steps of Lipschitz slack per axis.
    pub resolution_bound: f64,
}

/// Brute-force equilibrium search: for every gridded payment, maximize the
/// follower payoff over gridded compute, then maximize the leader payoff over
/// payments using that response. Independent of the closed forms by
/// construction.
pub fn grid_oracle(p: &GameParams, grid_x: usize, grid_y: usize) -> GridSolution {
    assert!(grid_x >= 2 && grid_y >= 2, "grids need at least two points");
    let step_x = p.max_compute / (grid_x - 1) as f64;
    let step_y = p.max_payment / (grid_y - 1) as f64;

    let mut best = (f64::NEG_INFINITY, 0.0, 0.0, 0.0);
    for iy in 0..grid_y {
        let y = iy as f64 * step_y;
        let mut follower_best = (f64::NEG_INFINITY, 0.0);
        for ix in 0..grid_x {
            let x = ix as f64 * step_x;
            let v = vehicle_payoff(x, y, p);
            if v > follower_best.0 {
                follower_best = (v, x);
            }
        }
        let leader = uav_payoff_pair(follower_best.1, y, p);
        if leader > best.0 {
            best = (leader, follower_best.1, y, follower_best.0);
        }
    }

    // Lipschitz bounds on the two objectives over the strategy box.
    let slope_x = p.satisfaction * p.urgency
        + p.payment_weight * p.price_coeff * p.max_payment
        + p.price_coeff * p.max_payment
        + 2.0 * p.cost_coeff * p.unit_cost * p.max_compute;
    let slope_y = p.payment_weight * p.price_coeff * p.max_compute + p.price_coeff * p.max_compute;
    GridSolution {
        compute: best.1,
        payment: best.2,
        leader_payoff: best.0,
        follower_payoff: best.3,
        resolution_bound: 2.0 * (step_x * slope_x + step_y * slope_y),
    }
}

/// Follower grid argmax for a fixed payment; used to cross-check the closed
/// best response cell by cell.
pub fn grid_best_response(y: f64, p: &GameParams, grid_x: usize) -> f64 {
    let step_x = p.max_compute / (grid_x - 1) as f64;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for ix in 0..grid_x {
        let x = ix as f64 * step_x;
        let v = vehicle_payoff(x, y, p);
        if v > best.0 {
            best = (v, x);
        }
    }
    best.1
}
