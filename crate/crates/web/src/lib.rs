//! Browser bindings: small deterministic computations returned as JSON strings.

use phi4lab::counterterms::{a_eps_with_tol, six_b_eps};
use phi4lab::fock::{gibbs, kinetic, FockBasis};
use phi4lab::harness::{bridge_point, Experiment, ExperimentConfig};
use phi4lab::spectral::{Mode, Potential};
use phi4lab::Complex64;
use serde::Serialize;
use std::sync::Arc;
use wasm_bindgen::prelude::*;

fn json<T: Serialize>(r: phi4lab::Result<T>) -> phi4lab::Result<String> {
    Ok(serde_json::to_string(&r?)?)
}

fn to_js(r: phi4lab::Result<String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[derive(Serialize)]
struct Counterterms {
    eps: f64,
    k_sum: usize,
    a: f64,
    a_tail: f64,
    six_b: f64,
    six_b_tail: f64,
}

/// Wick and quadratic counterterms in d=3 for the Gaussian profile.
#[wasm_bindgen]
pub fn counterterms(eps: f64, k_sum: usize) -> Result<String, JsError> {
    to_js(counterterms_json(eps, k_sum))
}

pub fn counterterms_json(eps: f64, k_sum: usize) -> phi4lab::Result<String> {
    json((|| {
        let p = Potential::gaussian(1.0, eps)?;
        // the page shows the tail, so a coarse truncation is reported rather than refused
        let a = a_eps_with_tol(&p, 3, k_sum.min(200), f64::INFINITY)?;
        let b = six_b_eps(&p, 3, k_sum.min(48))?;
        Ok(Counterterms { eps, k_sum, a: a.value, a_tail: a.tail, six_b: b.value, six_b_tail: b.tail })
    })())
}

/// One-mode quantum vs classical free energies and moments at one lambda.
#[wasm_bindgen]
pub fn bridge(eps: f64, lambda: f64, max_order: usize) -> Result<String, JsError> {
    to_js(bridge_json(eps, lambda, max_order))
}

pub fn bridge_json(eps: f64, lambda: f64, max_order: usize) -> phi4lab::Result<String> {
    let cfg = ExperimentConfig { eps, max_order: max_order.clamp(1, 7), ..ExperimentConfig::preset(Experiment::SemiclassicalBridge) };
    json(bridge_point(&cfg, lambda))
}

#[derive(Serialize)]
struct Occupation {
    mode: i32,
    lambda_occupation: f64,
    free_variance: f64,
}

/// lambda <n_k> in the free thermal state against 1/<k>^2 for |k| <= modes.
#[wasm_bindgen]
pub fn free_occupations(lambda: f64, modes: i32) -> Result<String, JsError> {
    to_js(free_occupations_json(lambda, modes))
}

pub fn free_occupations_json(lambda: f64, modes: i32) -> phi4lab::Result<String> {
    json((|| {
        let mut out = Vec::new();
        for k in -modes.clamp(0, 8)..=modes.clamp(0, 8) {
            let mode = Mode::new(&[k]);
            let cap = ((30.0 / (lambda * mode.bracket2())).ceil() as usize).clamp(8, 20_000);
            let basis = Arc::new(FockBasis::new(1, vec![mode], cap)?);
            let g = gibbs(&kinetic(&basis).scale(Complex64::new(lambda, 0.0)))?;
            out.push(Occupation { mode: k, lambda_occupation: lambda * g.occupation(0), free_variance: 1.0 / mode.bracket2() });
        }
        Ok(out)
    })())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exports_return_json() {
        let c: serde_json::Value = serde_json::from_str(&counterterms_json(0.5, 8).unwrap()).unwrap();
        assert!(c["a"].as_f64().unwrap() > 0.0 && c["a_tail"].as_f64().unwrap() > 0.0);
        let b: serde_json::Value = serde_json::from_str(&bridge_json(0.1, 0.2, 2).unwrap()).unwrap();
        assert_eq!(b["quantum_moments"].as_array().unwrap().len(), 2);
        let o: serde_json::Value = serde_json::from_str(&free_occupations_json(0.2, 1).unwrap()).unwrap();
        assert_eq!(o.as_array().unwrap().len(), 3);
        assert!(counterterms_json(-1.0, 4).is_err());
    }
}
