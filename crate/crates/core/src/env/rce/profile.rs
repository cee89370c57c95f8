//! Observed temperature profiles: the analytic default and the CSV file format.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::N_LEVELS;
use crate::error::{Error, Result};

const HEADER: &str = "pressure_hPa,temperature_K";
const COMPARISON_HEADER: &str = "pressure_hPa,simulated_K,observed_K,difference_K";

const SURFACE_TEMPERATURE: f64 = 288.15;
const SURFACE_PRESSURE: f64 = 1013.25;
const TROPOPAUSE_TEMPERATURE: f64 = 216.65;
const LAPSE_RATE: f64 = 0.0065;
const GAS_CONSTANT: f64 = 287.053;
const GRAVITY: f64 = 9.80665;

/// Target temperatures aligned with the column's pressure grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedProfile {
    pressure_levels: Vec<f64>,
    temperatures: Vec<f64>,
    source: String,
}

impl ObservedProfile {
    pub fn new(pressure_levels: Vec<f64>, temperatures: Vec<f64>, source: impl Into<String>) -> Result<Self> {
        if pressure_levels.len() != N_LEVELS || temperatures.len() != N_LEVELS {
            return Err(Error::GridMismatch(format!(
                "expected {N_LEVELS} levels, got {} pressures and {} temperatures",
                pressure_levels.len(),
                temperatures.len()
            )));
        }
        if pressure_levels.iter().chain(&temperatures).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "observed profile".into() });
        }
        if temperatures.iter().any(|&t| t <= 0.0) {
            return Err(Error::invalid("observed temperatures must be positive"));
        }
        Ok(Self { pressure_levels, temperatures, source: source.into() })
    }

    /// The 1976 standard atmosphere below 20 km: 6.5 K/km from 288.15 K at
    /// 1013.25 hPa up to the 11 km tropopause, isothermal 216.65 K above.
    pub fn standard_atmosphere(pressure_levels: &[f64]) -> Result<Self> {
        let exponent = GAS_CONSTANT * LAPSE_RATE / GRAVITY;
        let temperatures = pressure_levels
            .iter()
            .map(|&p| (SURFACE_TEMPERATURE * (p / SURFACE_PRESSURE).powf(exponent)).max(TROPOPAUSE_TEMPERATURE))
            .collect();
        Self::new(pressure_levels.to_vec(), temperatures, "standard-atmosphere")
    }

    pub fn pressure_levels(&self) -> &[f64] {
        &self.pressure_levels
    }

    pub fn temperatures(&self) -> &[f64] {
        &self.temperatures
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Checks the profile sits on `grid` (to 1e-9 hPa).
    pub fn check_grid(&self, grid: &[f64]) -> Result<()> {
        if grid.len() != self.pressure_levels.len()
            || grid.iter().zip(&self.pressure_levels).any(|(a, b)| (a - b).abs() > 1e-9)
        {
            return Err(Error::GridMismatch(format!("profile grid {:?} does not match column grid {grid:?}", self.pressure_levels)));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let what = path.display().to_string();
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some(h) if h.trim() == HEADER => {}
            other => return Err(Error::parse(&what, format!("expected header `{HEADER}`, found {other:?}"))),
        }
        let mut pressures = Vec::new();
        let mut temps = Vec::new();
        for (i, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 2 {
                return Err(Error::parse(&what, format!("row {}: expected 2 fields", i + 1)));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| Error::parse(&what, format!("row {}: {e}", i + 1)));
            pressures.push(num(fields[0])?);
            temps.push(num(fields[1])?);
        }
        Self::new(pressures, temps, what)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::from(HEADER);
        out.push('\n');
        for (p, t) in self.pressure_levels.iter().zip(&self.temperatures) {
            out.push_str(&format!("{p},{t}\n"));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Writes observed and simulated temperatures side by side.
/// Per-level `pressure, simulated, observed, simulated - observed` table.
pub fn profile_comparison_csv(observed: &ObservedProfile, simulated: &[f64]) -> Result<String> {
    if simulated.len() != observed.temperatures.len() {
        return Err(Error::GridMismatch(format!("{} simulated values for {} levels", simulated.len(), observed.temperatures.len())));
    }
    let mut body = format!("{COMPARISON_HEADER}\n");
    for ((p, t), s) in observed.pressure_levels.iter().zip(&observed.temperatures).zip(simulated) {
        body.push_str(&format!("{p},{s},{t},{}\n", s - t));
    }
    Ok(body)
}

pub fn write_profile_comparison(path: &Path, observed: &ObservedProfile, simulated: &[f64]) -> Result<()> {
    let body = profile_comparison_csv(observed, simulated)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::rce::RceParams;

    /// Height of pressure `p` in the troposphere, then temperature from height.
    fn by_height(p: f64) -> f64 {
        let z = SURFACE_TEMPERATURE / LAPSE_RATE * (1.0 - (p / SURFACE_PRESSURE).powf(GAS_CONSTANT * LAPSE_RATE / GRAVITY));
        if z >= 11_000.0 {
            TROPOPAUSE_TEMPERATURE
        } else {
            SURFACE_TEMPERATURE - LAPSE_RATE * z
        }
    }

    #[test]
    fn standard_profile_matches_height_formula() {
        let grid = RceParams::default().pressure_levels;
        let prof = ObservedProfile::standard_atmosphere(&grid).unwrap();
        for (&p, &t) in grid.iter().zip(prof.temperatures()) {
            assert!((t - by_height(p)).abs() < 1e-3, "{p} hPa: {t} vs {}", by_height(p));
        }
        assert!((prof.temperatures()[0] - 288.0).abs() < 1.0);
        assert_eq!(prof.temperatures()[N_LEVELS - 1], 216.65);
    }

    #[test]
    fn file_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("obs.csv");
        let grid = RceParams::default().pressure_levels;
        let temps: Vec<f64> = (0..N_LEVELS).map(|i| 287.123456789 - 3.3 * i as f64 + 1e-13).collect();
        let prof = ObservedProfile::new(grid, temps, "test").unwrap();
        prof.save(&path).unwrap();
        let back = ObservedProfile::load(&path).unwrap();
        assert_eq!(back.temperatures(), prof.temperatures());
        assert_eq!(back.pressure_levels(), prof.pressure_levels());
    }

    #[test]
    fn sixteen_rows_is_a_grid_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.csv");
        let mut body = format!("{HEADER}\n");
        for i in 0..16 {
            body.push_str(&format!("{},250\n", 1000 - 60 * i));
        }
        fs::write(&path, body).unwrap();
        assert!(matches!(ObservedProfile::load(&path), Err(Error::GridMismatch(_))));
        assert!(matches!(ObservedProfile::load(&dir.path().join("missing.csv")), Err(Error::Io { .. })));
    }

    #[test]
    fn comparison_table_has_exact_differences() {
        let levels = crate::env::rce::default_pressure_levels();
        let obs = ObservedProfile::standard_atmosphere(&levels).unwrap();
        let sim: Vec<f64> = obs.temperatures().iter().map(|t| t + 0.1).collect();
        let csv = profile_comparison_csv(&obs, &sim).unwrap();
        let rows: Vec<&str> = csv.lines().skip(1).collect();
        assert_eq!(rows.len(), 17);
        for (row, (s, o)) in rows.iter().zip(sim.iter().zip(obs.temperatures())) {
            let f: Vec<f64> = row.split(',').map(|x| x.parse().unwrap()).collect();
            assert_eq!((f[1], f[2], f[3]), (*s, *o, s - o));
        }
        assert!(profile_comparison_csv(&obs, &sim[1..]).is_err());
    }
}
