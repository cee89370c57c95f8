//! Grey-gas two-stream longwave scheme with a transparent shortwave atmosphere.

use super::{AtmosphericColumn, RcePhysicsParams};

/// Radiative tendencies of one column state.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiativeTendency {
    /// Per-layer heating rates, K/s, bottom layer first.
    pub layer_heating: Vec<f64>,
    /// Surface heating rate, K/s.
    pub surface_heating: f64,
    /// Upward longwave flux at each interface (bottom = surface emission), W/m².
    pub upward: Vec<f64>,
    /// Downward longwave flux at each interface (top = 0), W/m².
    pub downward: Vec<f64>,
    /// Outgoing longwave radiation at the top of the atmosphere, W/m².
    pub olr: f64,
    /// Shortwave absorbed at the surface, W/m².
    pub absorbed_shortwave: f64,
}

impl RadiativeTendency {
    /// Net downward flux at the top of the atmosphere.
    pub fn toa_net(&self) -> f64 {
        self.absorbed_shortwave - self.olr
    }
}

/// Computes longwave fluxes and heating rates for a uniform layer emissivity `eps`.
///
/// Each layer absorbs a fraction `eps` of the flux crossing it and emits
/// `eps·σT⁴` both upward and downward.
pub fn grey_longwave_step(column: &AtmosphericColumn, eps: f64, p: &RcePhysicsParams) -> RadiativeTendency {
    let t = column.temperatures();
    let n = t.len();
    let emission: Vec<f64> = t.iter().map(|&ti| eps * p.sigma * ti.powi(4)).collect();

    let mut upward = vec![0.0; n + 1];
    upward[0] = p.sigma * column.surface_temperature().powi(4);
    for i in 0..n {
        upward[i + 1] = (1.0 - eps) * upward[i] + emission[i];
    }
    let mut downward = vec![0.0; n + 1];
    for i in (0..n).rev() {
        downward[i] = (1.0 - eps) * downward[i + 1] + emission[i];
    }

    let dp = column.layer_thickness();
    let layer_heating = (0..n)
        .map(|i| {
            let absorbed = (upward[i] - upward[i + 1]) + (downward[i + 1] - downward[i]);
            p.g * absorbed / (p.cp * dp[i] * 100.0)
        })
        .collect();

    let absorbed_shortwave = (1.0 - p.albedo) * p.insolation;
    let surface_net = absorbed_shortwave + downward[0] - upward[0];
    RadiativeTendency {
        layer_heating,
        surface_heating: surface_net / p.surface_heat_capacity,
        olr: upward[n],
        absorbed_shortwave,
        upward,
        downward,
    }
}
