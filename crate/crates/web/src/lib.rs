//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each export returns a flat `Float64Array`; the layout is documented per
//! function. The plain-Rust versions in [`demo`] back the exports and the tests.

pub mod demo;

use wasm_bindgen::prelude::*;

fn js(r: Result<Vec<f64>, String>) -> Result<Vec<f64>, JsError> {
    r.map_err(|e| JsError::new(&e))
}

/// Simulated and expected click-through rate per rank for a list with the
/// given relevance grades, in displayed order.
///
/// Returns `[simulated_1..n, expected_1..n]`; expected is NaN for UBM.
#[wasm_bindgen(js_name = clickRates)]
pub fn click_rates(
    model: &str,
    relevances: &[u8],
    eta: f64,
    epsilon: f64,
    sessions: u32,
    seed: u32,
) -> Result<Vec<f64>, JsError> {
    js(demo::click_rates(model, relevances, eta, epsilon, sessions as usize, u64::from(seed)).map(|r| r.flat()))
}

/// nDCG@k and ERR@k for `k = 1..n` of a list in displayed order.
///
/// Returns `[ndcg_1..n, err_1..n]`.
#[wasm_bindgen(js_name = metricCurves)]
pub fn metric_curves(relevances: &[u8]) -> Result<Vec<f64>, JsError> {
    js(demo::metric_curves(relevances).map(|(n, e)| [n, e].concat()))
}

/// True and estimated PBM examination propensities from randomized sessions.
///
/// Returns `[true_1..n, estimated_1..n]`; unestimated ranks are NaN.
#[wasm_bindgen(js_name = propensityRecovery)]
pub fn propensity_recovery(list_size: u32, eta: f64, sessions: u32, seed: u32) -> Result<Vec<f64>, JsError> {
    js(demo::propensity_recovery(list_size as usize, eta, sessions as usize, u64::from(seed))
        .map(|(t, e)| [t, e].concat()))
}
