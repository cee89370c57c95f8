//! `RadiativeConvectiveModel`: a 17-level grey-gas column whose emissivity and
//! critical lapse rate are set by the agent every step.

use std::collections::BTreeMap;

use super::{check_action, BoxSpace, Environment, EpisodeClock, StepResult};
use crate::error::{Error, Result};

pub mod convection;
pub mod profile;
pub mod radiation;

pub use convection::{adjustment_weights, convective_adjustment, lapse_rates, weighted_mean_temperature};
pub use profile::{profile_comparison_csv, write_profile_comparison, ObservedProfile};
pub use radiation::{grey_longwave_step, RadiativeTendency};

pub const N_LEVELS: usize = 17;
pub const DEFAULT_MAX_STEPS: usize = 500;

/// Observation bounds (K); the raw state is reported in `info` when clipped.
pub const OBS_LOW: f64 = 100.0;
pub const OBS_HIGH: f64 = 400.0;

pub const EMISSIVITY_RANGE: (f64, f64) = (0.0, 1.0);
pub const LAPSE_RATE_RANGE: (f64, f64) = (5.5, 9.8);

/// Physical constants and the two controllable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RcePhysicsParams {
    pub emissivity: f64,
    /// Critical lapse rate, K/km.
    pub critical_lapse_rate: f64,
    /// Mean top-of-atmosphere insolation `S0/4`, W/m².
    pub insolation: f64,
    pub albedo: f64,
    pub sigma: f64,
    pub cp: f64,
    pub g: f64,
    /// Specific gas constant of dry air, J/(kg·K).
    pub gas_constant: f64,
    /// Seconds per environment step.
    pub dt: f64,
    /// Surface slab heat capacity, J/(m²·K).
    pub surface_heat_capacity: f64,
}

impl Default for RcePhysicsParams {
    fn default() -> Self {
        Self {
            emissivity: 0.5,
            critical_lapse_rate: 6.5,
            insolation: 341.3,
            albedo: 0.3,
            sigma: 5.670374419e-8,
            cp: 1004.0,
            g: 9.81,
            gas_constant: 287.04,
            dt: 86_400.0,
            // 1 m of water
            surface_heat_capacity: 4.18e6,
        }
    }
}

impl RcePhysicsParams {
    pub fn validate(&self) -> Result<()> {
        let (e0, e1) = EMISSIVITY_RANGE;
        let (l0, l1) = LAPSE_RATE_RANGE;
        if !(e0..=e1).contains(&self.emissivity) || !(l0..=l1).contains(&self.critical_lapse_rate) {
            return Err(Error::invalid(format!(
                "emissivity {} / lapse rate {} outside the action box",
                self.emissivity, self.critical_lapse_rate
            )));
        }
        if !(self.dt > 0.0) || !(self.surface_heat_capacity > 0.0) || !(self.cp > 0.0) || !(self.g > 0.0) {
            return Err(Error::invalid("dt, heat capacities and gravity must be positive"));
        }
        if !(0.0..=1.0).contains(&self.albedo) || !(self.insolation >= 0.0) {
            return Err(Error::invalid("albedo must lie in [0, 1] and insolation be non-negative"));
        }
        Ok(())
    }
}

/// Environment configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RceParams {
    /// Level pressures, hPa, bottom first.
    pub pressure_levels: Vec<f64>,
    pub surface_pressure: f64,
    /// Isothermal reset temperature of air and surface, K.
    pub initial_temperature: f64,
    /// Emissivity in force before the first action (and for baseline runs).
    pub emissivity_init: f64,
    /// Critical lapse rate in force before the first action, K/km.
    pub lapse_rate_init: f64,
    /// Radiation sub-steps per environment step.
    pub substeps: usize,
    pub max_steps: usize,
    pub physics: RcePhysicsParams,
}

/// 1000 to 100 hPa every 60 hPa, then 10 hPa.
pub fn default_pressure_levels() -> Vec<f64> {
    let mut levels: Vec<f64> = (0..16).map(|i| 1000.0 - 60.0 * i as f64).collect();
    levels.push(10.0);
    levels
}

impl Default for RceParams {
    fn default() -> Self {
        Self {
            pressure_levels: default_pressure_levels(),
            surface_pressure: 1030.0,
            initial_temperature: 250.0,
            emissivity_init: 0.5,
            lapse_rate_init: 6.5,
            substeps: 24,
            max_steps: DEFAULT_MAX_STEPS,
            physics: RcePhysicsParams::default(),
        }
    }
}

impl RceParams {
    pub fn validate(&self) -> Result<()> {
        let physics = RcePhysicsParams {
            emissivity: self.emissivity_init,
            critical_lapse_rate: self.lapse_rate_init,
            ..self.physics.clone()
        };
        physics.validate()?;
        if self.substeps == 0 || self.max_steps == 0 {
            return Err(Error::invalid("substeps and max_steps must be at least 1"));
        }
        AtmosphericColumn::isothermal(self.pressure_levels.clone(), self.surface_pressure, self.initial_temperature).map(|_| ())
    }
}

/// Level temperatures plus surface temperature on a fixed pressure grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AtmosphericColumn {
    pressure_levels: Vec<f64>,
    surface_pressure: f64,
    thickness: Vec<f64>,
    temperatures: Vec<f64>,
    surface_temperature: f64,
}

impl AtmosphericColumn {
    /// Validates the grid (17 strictly decreasing levels below the surface
    /// pressure) and the initial temperatures (inside (100, 400) K).
    pub fn new(pressure_levels: Vec<f64>, surface_pressure: f64, temperatures: Vec<f64>, surface_temperature: f64) -> Result<Self> {
        if pressure_levels.len() != N_LEVELS || temperatures.len() != N_LEVELS {
            return Err(Error::GridMismatch(format!(
                "column needs {N_LEVELS} levels, got {} pressures and {} temperatures",
                pressure_levels.len(),
                temperatures.len()
            )));
        }
        let mut prev = surface_pressure;
        for &p in &pressure_levels {
            if !(p < prev && p > 0.0) {
                return Err(Error::GridMismatch("pressures must decrease strictly from the surface".into()));
            }
            prev = p;
        }
        if let Some(t) = temperatures.iter().chain([&surface_temperature]).find(|t| !(**t > 100.0 && **t < 400.0)) {
            return Err(Error::invalid(format!("column temperature {t} K outside (100, 400)")));
        }
        let thickness = layer_thickness(&pressure_levels, surface_pressure);
        Ok(Self { pressure_levels, surface_pressure, thickness, temperatures, surface_temperature })
    }

    pub fn isothermal(pressure_levels: Vec<f64>, surface_pressure: f64, t: f64) -> Result<Self> {
        Self::new(pressure_levels, surface_pressure, vec![t; N_LEVELS], t)
    }

    pub fn pressure_levels(&self) -> &[f64] {
        &self.pressure_levels
    }

    pub fn surface_pressure(&self) -> f64 {
        self.surface_pressure
    }

    pub fn temperatures(&self) -> &[f64] {
        &self.temperatures
    }

    pub fn surface_temperature(&self) -> f64 {
        self.surface_temperature
    }

    /// Layer thickness in hPa; interfaces sit midway between levels, the top one at 0.
    pub fn layer_thickness(&self) -> Vec<f64> {
        self.thickness.clone()
    }

    /// Same grid, new temperatures (no range check: used for evolving states).
    pub(crate) fn with_temperatures(&self, temperatures: Vec<f64>, surface_temperature: f64) -> Self {
        Self { temperatures, surface_temperature, ..self.clone() }
    }

    pub fn is_finite(&self) -> bool {
        self.surface_temperature.is_finite() && self.temperatures.iter().all(|t| t.is_finite())
    }
}

fn layer_thickness(levels: &[f64], surface_pressure: f64) -> Vec<f64> {
    let n = levels.len();
    let mut interfaces = Vec::with_capacity(n + 1);
    interfaces.push(surface_pressure);
    for i in 0..n - 1 {
        interfaces.push(0.5 * (levels[i] + levels[i + 1]));
    }
    interfaces.push(0.0);
    interfaces.windows(2).map(|w| w[0] - w[1]).collect()
}

/// Mean squared level error (K²); the step reward is its negation.
pub fn profile_cost(simulated: &[f64], observed: &[f64]) -> f64 {
    simulated.iter().zip(observed).map(|(s, o)| (s - o) * (s - o)).sum::<f64>() / simulated.len() as f64
}

/// Advances the column one environment step: `substeps` forward-Euler
/// radiation updates over `dt`, then one convective adjustment.
pub fn integrate_step(column: &AtmosphericColumn, physics: &RcePhysicsParams, substeps: usize) -> AtmosphericColumn {
    let h = physics.dt / substeps as f64;
    let mut col = column.clone();
    for _ in 0..substeps {
        let r = grey_longwave_step(&col, physics.emissivity, physics);
        let temps = col.temperatures.iter().zip(&r.layer_heating).map(|(t, q)| t + h * q).collect();
        let ts = col.surface_temperature + h * r.surface_heating;
        col = col.with_temperatures(temps, ts);
    }
    convective_adjustment(&col, physics.critical_lapse_rate, physics)
}

#[derive(Debug, Clone)]
pub struct RceEnv {
    params: RceParams,
    physics: RcePhysicsParams,
    observed: ObservedProfile,
    column: AtmosphericColumn,
    initial: AtmosphericColumn,
    clock: EpisodeClock,
    observation_space: BoxSpace,
    action_space: BoxSpace,
}

impl RceEnv {
    pub fn new(params: RceParams, observed: ObservedProfile) -> Result<Self> {
        params.validate()?;
        observed.check_grid(&params.pressure_levels)?;
        let initial = AtmosphericColumn::isothermal(params.pressure_levels.clone(), params.surface_pressure, params.initial_temperature)?;
        let physics = RcePhysicsParams {
            emissivity: params.emissivity_init,
            critical_lapse_rate: params.lapse_rate_init,
            ..params.physics.clone()
        };
        Ok(Self {
            physics,
            observed,
            column: initial.clone(),
            initial,
            clock: EpisodeClock::default(),
            observation_space: BoxSpace::new(vec![OBS_LOW; N_LEVELS], vec![OBS_HIGH; N_LEVELS])?,
            action_space: BoxSpace::new(
                vec![EMISSIVITY_RANGE.0, LAPSE_RATE_RANGE.0],
                vec![EMISSIVITY_RANGE.1, LAPSE_RATE_RANGE.1],
            )?,
            params,
        })
    }

    pub fn params(&self) -> &RceParams {
        &self.params
    }

    pub fn physics(&self) -> &RcePhysicsParams {
        &self.physics
    }

    pub fn column(&self) -> &AtmosphericColumn {
        &self.column
    }

    pub fn observed(&self) -> &ObservedProfile {
        &self.observed
    }

    fn observe(&self) -> Vec<f64> {
        self.observation_space.clip(&self.column.temperatures)
    }
}

impl Environment for RceEnv {
    fn id(&self) -> &str {
        super::EnvKind::Rce.id()
    }

    fn observation_space(&self) -> &BoxSpace {
        &self.observation_space
    }

    fn action_space(&self) -> &BoxSpace {
        &self.action_space
    }

    fn max_steps(&self) -> usize {
        self.params.max_steps
    }

    fn reset(&mut self, _seed: Option<u64>) -> Vec<f64> {
        // dynamics are deterministic; the seed only matters to callers
        self.column = self.initial.clone();
        self.physics.emissivity = self.params.emissivity_init;
        self.physics.critical_lapse_rate = self.params.lapse_rate_init;
        self.clock.reset();
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let a = check_action(&self.action_space, action)?;
        let truncated = self.clock.tick(self.params.max_steps)?;
        self.physics.emissivity = a[0];
        self.physics.critical_lapse_rate = a[1];
        let next = integrate_step(&self.column, &self.physics, self.params.substeps);
        if !next.is_finite() {
            return Err(Error::NonFinite { context: "RCE column temperatures".into() });
        }
        self.column = next;

        let obs_t = self.observed.temperatures();
        let diffs: Vec<f64> = self.column.temperatures.iter().zip(obs_t).map(|(s, o)| s - o).collect();
        let reward = -profile_cost(&self.column.temperatures, obs_t);
        let mut info = BTreeMap::new();
        info.insert("level_difference_K".to_string(), diffs);
        info.insert("temperature_K".to_string(), self.column.temperatures.clone());
        info.insert("surface_temperature_K".to_string(), vec![self.column.surface_temperature]);
        info.insert("action".to_string(), a);
        Ok(StepResult { observation: self.observe(), reward, terminated: false, truncated, info })
    }

    fn boxed_clone(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}
