//! Energy-conserving convective adjustment to a critical lapse rate.
//!
//! The surface and the air levels form one chain, bottom first. For a pair
//! `(a, b)` with `b` above `a`, the layer depth is taken hydrostatically with
//! the pair's mean temperature, `dz = R (Ta + Tb) / (2g) · ln(pa/pb)`. The
//! stability condition `(Ta - Tb)/dz <= Γ` then rearranges to `Tb >= r·Ta`
//! with `r = (1 - k)/(1 + k)`, `k = Γ R ln(pa/pb) / (2g)` independent of
//! temperature. Dividing each temperature by the cumulative product of `r`
//! turns the constraint into monotonicity, so the adjusted state is a weighted
//! isotonic regression: pooled blocks sit exactly on the critical lapse rate
//! and keep their weighted mean.

use super::{AtmosphericColumn, RcePhysicsParams};

/// Relative slack before two neighbouring blocks are considered unstable.
const MERGE_TOLERANCE: f64 = 1e-12;

/// Conservation weights in hPa, surface first: the surface slab counts as the
/// air mass with the same heat capacity.
pub fn adjustment_weights(column: &AtmosphericColumn, p: &RcePhysicsParams) -> Vec<f64> {
    let mut w = Vec::with_capacity(column.temperatures().len() + 1);
    w.push(p.surface_heat_capacity * p.g / p.cp / 100.0);
    w.extend(column.layer_thickness());
    w
}

/// Weighted mean temperature of surface + air, using [`adjustment_weights`].
pub fn weighted_mean_temperature(column: &AtmosphericColumn, p: &RcePhysicsParams) -> f64 {
    let w = adjustment_weights(column, p);
    let t = chain_temperatures(column);
    let total: f64 = w.iter().sum();
    w.iter().zip(&t).map(|(w, t)| w * t).sum::<f64>() / total
}

/// Lapse rates `-dT/dz` in K/km between adjacent chain nodes (surface first).
pub fn lapse_rates(column: &AtmosphericColumn, p: &RcePhysicsParams) -> Vec<f64> {
    let t = chain_temperatures(column);
    let pr = chain_pressures(column);
    (0..t.len() - 1)
        .map(|i| {
            let dz = p.gas_constant * (t[i] + t[i + 1]) / (2.0 * p.g) * (pr[i] / pr[i + 1]).ln();
            (t[i] - t[i + 1]) / dz * 1000.0
        })
        .collect()
}

fn chain_temperatures(column: &AtmosphericColumn) -> Vec<f64> {
    std::iter::once(column.surface_temperature()).chain(column.temperatures().iter().copied()).collect()
}

fn chain_pressures(column: &AtmosphericColumn) -> Vec<f64> {
    std::iter::once(column.surface_pressure()).chain(column.pressure_levels().iter().copied()).collect()
}

/// Adjusts every statically unstable region to the critical lapse rate
/// `lapse_rate` (K/km), conserving the weighted mean temperature of each
/// adjusted region. Stable nodes are returned untouched.
pub fn convective_adjustment(column: &AtmosphericColumn, lapse_rate: f64, p: &RcePhysicsParams) -> AtmosphericColumn {
    let t = chain_temperatures(column);
    let pr = chain_pressures(column);
    let w = adjustment_weights(column, p);
    let n = t.len();

    // cumulative critical ratios: a block at the critical lapse rate has T = P·u
    let gamma = lapse_rate / 1000.0;
    let mut scale = vec![1.0; n];
    for i in 1..n {
        let k = gamma * p.gas_constant * (pr[i - 1] / pr[i]).ln() / (2.0 * p.g);
        scale[i] = scale[i - 1] * (1.0 - k) / (1.0 + k);
    }
    let u: Vec<f64> = t.iter().zip(&scale).map(|(t, s)| t / s).collect();
    let big_w: Vec<f64> = w.iter().zip(&scale).map(|(w, s)| w * s).collect();

    // pool-adjacent-violators for a non-decreasing sequence
    struct Block {
        start: usize,
        weight: f64,
        weighted_sum: f64,
    }
    let mean = |b: &Block| b.weighted_sum / b.weight;
    let mut blocks: Vec<Block> = Vec::with_capacity(n);
    for i in 0..n {
        blocks.push(Block { start: i, weight: big_w[i], weighted_sum: big_w[i] * u[i] });
        while blocks.len() > 1 {
            let (lower, upper) = (&blocks[blocks.len() - 2], &blocks[blocks.len() - 1]);
            if mean(lower) <= mean(upper) + MERGE_TOLERANCE * mean(upper).abs() {
                break;
            }
            let top = blocks.pop().expect("two blocks present");
            let below = blocks.last_mut().expect("two blocks present");
            below.weight += top.weight;
            below.weighted_sum += top.weighted_sum;
        }
    }

    let mut out = t.clone();
    for (bi, b) in blocks.iter().enumerate() {
        let end = blocks.get(bi + 1).map_or(n, |next| next.start);
        if end - b.start == 1 {
            continue;
        }
        let m = mean(b);
        for j in b.start..end {
            out[j] = scale[j] * m;
        }
    }
    column.with_temperatures(out[1..].to_vec(), out[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::rce::{RceParams, N_LEVELS};
    use crate::rng::RngStream;

    fn physics() -> RcePhysicsParams {
        RcePhysicsParams::default()
    }

    fn column(temps: Vec<f64>, ts: f64) -> AtmosphericColumn {
        let p = RceParams::default();
        AtmosphericColumn::new(p.pressure_levels, p.surface_pressure, temps, ts).unwrap()
    }

    fn random_column(rng: &mut RngStream) -> AtmosphericColumn {
        let temps: Vec<f64> = (0..N_LEVELS).map(|_| rng.uniform_range(150.0, 350.0)).collect();
        column(temps, rng.uniform_range(200.0, 350.0))
    }

    #[test]
    fn stable_column_is_unchanged() {
        let temps = vec![250.0; N_LEVELS];
        let col = column(temps, 250.0);
        assert_eq!(convective_adjustment(&col, 6.5, &physics()), col);
    }

    /// Finds the lower temperature of an adjusted pair by bisection on the
    /// lapse-rate condition, with the upper temperature fixed by conservation.
    fn pair_by_bisection(t1: f64, t2: f64, w1: f64, w2: f64, p1: f64, p2: f64, gamma: f64, ph: &RcePhysicsParams) -> (f64, f64) {
        let total = w1 * t1 + w2 * t2;
        let excess = |a: f64| {
            let b = (total - w1 * a) / w2;
            let dz = ph.gas_constant * (a + b) / (2.0 * ph.g) * (p1 / p2).ln();
            (a - b) / dz * 1000.0 - gamma
        };
        let (mut lo, mut hi) = (t2, t1);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if excess(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let a = 0.5 * (lo + hi);
        (a, (total - w1 * a) / w2)
    }

    #[test]
    fn two_level_pair_matches_closed_form() {
        let ph = physics();
        // inversions everywhere except between levels 3 and 4
        let mut temps: Vec<f64> = vec![230.0, 230.0, 230.0, 300.0, 240.0];
        temps.extend(std::iter::repeat(300.0).take(N_LEVELS - 5));
        let col = column(temps.clone(), 230.0);
        let out = convective_adjustment(&col, 6.5, &ph);
        let dp = col.layer_thickness();
        let pl = col.pressure_levels();
        let (a, b) = pair_by_bisection(temps[3], temps[4], dp[3], dp[4], pl[3], pl[4], 6.5, &ph);
        assert!((out.temperatures()[3] - a).abs() < 1e-9, "{} vs {a}", out.temperatures()[3]);
        assert!((out.temperatures()[4] - b).abs() < 1e-9);
        assert_eq!(out.temperatures()[..3], temps[..3]);
        assert_eq!(out.temperatures()[5..], temps[5..]);
        assert!((lapse_rates(&out, &ph)[4] - 6.5).abs() < 1e-9);
    }

    #[test]
    fn conserves_weighted_mean_and_caps_lapse_rate() {
        let ph = physics();
        let mut rng = RngStream::new(17);
        for _ in 0..1000 {
            let col = random_column(&mut rng);
            let gamma = rng.uniform_range(5.5, 9.8);
            let out = convective_adjustment(&col, gamma, &ph);
            let (m0, m1) = (weighted_mean_temperature(&col, &ph), weighted_mean_temperature(&out, &ph));
            assert!(((m1 - m0) / m0).abs() <= 1e-10);
            assert!(lapse_rates(&out, &ph).iter().all(|&l| l <= gamma + 1e-9));
        }
    }

    #[test]
    fn adjustment_is_idempotent() {
        let ph = physics();
        let mut rng = RngStream::new(23);
        for _ in 0..1000 {
            let col = random_column(&mut rng);
            let once = convective_adjustment(&col, 6.5, &ph);
            let twice = convective_adjustment(&once, 6.5, &ph);
            for (a, b) in once.temperatures().iter().zip(twice.temperatures()) {
                assert!((a - b).abs() <= 1e-9 * a.abs());
            }
            assert!((once.surface_temperature() - twice.surface_temperature()).abs() <= 1e-9 * once.surface_temperature());
        }
    }
}
