//! Browser bindings for the demo page in `www/`.
//!
//! Every function returns JSON text (or a number) so the page needs no glue
//! beyond the generated `psde_web.js`.

use poisson_sde::ensemble::{euler_maruyama_ensemble, ForwardSpec};
use poisson_sde::path::scalar_signal;
use poisson_sde::presets::{dissipative_fixture, example1, q1, PresetSystem};
use poisson_sde::recurrence::{bebutov_distance, scan_almost_periods, CoreSampling};
use poisson_sde::stability::dissipativity_check;
use poisson_sde::{SampledPath, UniformGrid};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

#[derive(Serialize)]
struct BoundCurves {
    times: Vec<f64>,
    measured: Vec<f64>,
    stderr: Vec<f64>,
    bound: Vec<f64>,
    violations: usize,
    asymptote: f64,
}

fn preset(name: &str) -> Result<PresetSystem, JsValue> {
    match name {
        "example1" => example1().map_err(js_err),
        "dissipative" => dissipative_fixture().map_err(js_err),
        other => Err(JsValue::from_str(&format!("unknown preset {other}"))),
    }
}

/// Second moments of a forward ensemble against the dissipativity bound.
#[wasm_bindgen]
pub fn dissipativity_curves(preset_name: &str, n_paths: usize, horizon: f64, seed: u64) -> Result<String, JsValue> {
    let s = preset(preset_name)?;
    let grid = UniformGrid::spanning(0.0, horizon, 1e-3).map_err(js_err)?;
    let spec = ForwardSpec {
        op: &s.op,
        drift: &s.drift,
        diffusion: &s.diffusion,
        grid,
        n_paths,
        seed,
        noise_offset: 0,
    };
    let ens = euler_maruyama_ensemble(&spec, &s.initial).map_err(js_err)?;
    let k = s.declared();
    let r = dissipativity_check(
        &ens,
        s.op.stability_constant(),
        s.op.stability_rate(),
        k.a0,
        k.growth,
        0.0,
    )
    .map_err(js_err)?;
    // thin to about 400 points for drawing
    let stride = r.times.len().div_ceil(400).max(1);
    let pick = |v: &[f64]| v.iter().step_by(stride).copied().collect::<Vec<_>>();
    let curves = BoundCurves {
        times: pick(&r.times),
        measured: pick(&r.measured),
        stderr: pick(&r.stderr),
        bound: pick(&r.bound),
        violations: r.violations,
        asymptote: r.constants.asymptote.unwrap_or(0.0),
    };
    serde_json::to_string(&curves).map_err(js_err)
}

#[derive(Serialize)]
struct PeriodList {
    taus: Vec<f64>,
    deviations: Vec<f64>,
    max_gap: f64,
    classification: String,
}

/// Epsilon-almost periods of `q1` in `[1, window_end]`, one per cluster.
#[wasm_bindgen]
pub fn almost_periods(epsilon: f64, window_end: f64) -> Result<String, JsValue> {
    let signal = scalar_signal(q1);
    let core = CoreSampling {
        half_width: 8.0,
        step: 0.05,
    };
    let report = scan_almost_periods(&signal, epsilon, [1.0, window_end], 0.005, core).map_err(js_err)?;
    let clusters = report.cluster_minima();
    let list = PeriodList {
        taus: clusters.iter().map(|c| c.0).collect(),
        deviations: clusters.iter().map(|c| c.1).collect(),
        max_gap: report.max_gap,
        classification: report.classification,
    };
    serde_json::to_string(&list).map_err(js_err)
}

/// Compact-open distance between `q1` and its translate by `tau`, on `[-50, 50]`.
#[wasm_bindgen]
pub fn bebutov_translate(tau: f64) -> Result<f64, JsValue> {
    let grid = UniformGrid::spanning(-50.0, 50.0, 0.01).map_err(js_err)?;
    let a = SampledPath::from_scalar_fn(grid, q1).map_err(js_err)?;
    let b = SampledPath::from_scalar_fn(grid, |t| q1(t + tau)).map_err(js_err)?;
    bebutov_distance(&a, &b).map_err(js_err)
}
