//! Browser bindings for three small explorations: the Rössler root profile
//! under the reference metric, Langford multipliers as `a` varies, and the
//! rigid-body worst `λ₁ + λ₂` as a function of `γ`.
//!
//! Each export is a thin wrapper over a plain function so the numerics can
//! be tested natively.

use std::f64::consts::PI;

use contracta::floquet::floquet_multipliers;
use contracta::flow::{find_periodic_orbit, monodromy};
use contracta::metric::{evaluate_second_method, SecondMethodOptions};
use contracta::synthesis::gamma_profile;
use contracta::systems::{
    langford_field, rigid_body_system, rossler_reference_metric, rossler_system, LangfordParams, RigidBodyParams,
    RosslerParams,
};
use contracta::{FractionalDimension, IntegratorOptions};
use wasm_bindgen::prelude::*;

/// Interleaved `(y, Ξ_d(y))` over `y ∈ [−y_max, y_max]` on the `x = z = 0`
/// slice, with the reference metric of the classical parameters.
pub fn rossler_profile(a: f64, b: f64, d: f64, y_max: f64, step: f64) -> Result<Vec<f64>, String> {
    let params = RosslerParams { a, b };
    let (sys, _) = rossler_system(params).map_err(|e| e.to_string())?;
    let region = params.y_region(y_max, step).map_err(|e| e.to_string())?;
    let dim = FractionalDimension::new(d, 3).map_err(|e| e.to_string())?;
    let field = rossler_reference_metric().metric(&params);
    let rep = evaluate_second_method(&sys, &field, &region, &dim, &SecondMethodOptions::default())
        .map_err(|e| e.to_string())?;
    Ok(rep.points.iter().flat_map(|r| [r.x[1], r.xi_forward]).collect())
}

/// Multiplier moduli `[|ρ₁|, |ρ₂|, |ρ₃|]` of the Langford orbit, followed by
/// 1 when the Andronov–Witt condition holds and 0 otherwise.
pub fn langford_moduli(a: f64) -> Result<Vec<f64>, String> {
    let p = LangfordParams { a };
    p.validate().map_err(|e| e.to_string())?;
    let sys = langford_field(a);
    let opts = IntegratorOptions::certification();
    let orbit = find_periodic_orbit(&sys, &p.orbit_point(0.0), 2.0 * PI, &opts).map_err(|e| e.to_string())?;
    let x0 = contracta::DVector::from_vec(orbit.x0);
    let m = monodromy(&sys, &x0, orbit.period, &opts).map_err(|e| e.to_string())?;
    let spec = floquet_multipliers(&m).map_err(|e| e.to_string())?;
    let mut out = spec.moduli();
    out.push(if spec.andronov_witt { 1.0 } else { 0.0 });
    Ok(out)
}

/// Worst `λ₁ + λ₂` over the trapping ellipsoid for the energy-weighted
/// metric, at each `γ` in `[0, gamma_max]` (`samples` values).
pub fn rigid_body_gamma_sweep(tau_factor: f64, gamma_max: f64, samples: usize, counts: usize) -> Result<Vec<f64>, String> {
    let base = RigidBodyParams::default();
    let p = RigidBodyParams {
        tau: tau_factor * base.tau_bound(),
        ..base
    };
    let (sys, _) = rigid_body_system(p).map_err(|e| e.to_string())?;
    let level = p.trapping_level(1.05).map_err(|e| e.to_string())?;
    let region = p.trapping_region(level, counts.max(2)).map_err(|e| e.to_string())?;
    let dim = FractionalDimension::new(2.0, 3).map_err(|e| e.to_string())?;
    let samples = samples.max(2);
    let gammas: Vec<f64> = (0..samples).map(|i| gamma_max * i as f64 / (samples - 1) as f64).collect();
    let worst = gamma_profile(&sys, &p.p0(), &p.energy_potential(), &region, &dim, &gammas).map_err(|e| e.to_string())?;
    Ok(gammas.into_iter().zip(worst).flat_map(|(g, w)| [g, w]).collect())
}

#[wasm_bindgen(js_name = rosslerProfile)]
pub fn rossler_profile_js(a: f64, b: f64, d: f64, y_max: f64, step: f64) -> Result<Vec<f64>, JsError> {
    rossler_profile(a, b, d, y_max, step).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = langfordModuli)]
pub fn langford_moduli_js(a: f64) -> Result<Vec<f64>, JsError> {
    langford_moduli(a).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = rigidBodyGammaSweep)]
pub fn rigid_body_gamma_sweep_js(tau_factor: f64, gamma_max: f64, samples: usize, counts: usize) -> Result<Vec<f64>, JsError> {
    rigid_body_gamma_sweep(tau_factor, gamma_max, samples, counts).map_err(|e| JsError::new(&e))
}
