//! WebAssembly bindings for the demo page in `www/`. Every entry point
//! returns a JSON string so the page needs no extra glue.

use std::f64::consts::TAU;

use serde::Serialize;
use wasm_bindgen::prelude::*;

use layerpot::coeff::{C64, Family, FamilyConfig};
use layerpot::fundsol::{annular_decay, solid_annulus_decay, PoleKernelSolver};
use layerpot::layers::{kkpt_sweep as sweep, LayerPotentials};
use layerpot::torus::{GridField, TorusGrid};

/// Largest grid the page offers; dense eigensolves beyond this stall a tab.
pub const MAX_DEMO_POINTS: usize = 256;

fn grid(points: usize) -> Result<TorusGrid, JsError> {
    if points > MAX_DEMO_POINTS {
        return Err(JsError::new(&format!("at most {MAX_DEMO_POINTS} points")));
    }
    TorusGrid::new(1, points, TAU, 1).map_err(|e| JsError::new(&e.to_string()))
}

fn family(name: &str, k: f64, seed: u32) -> Result<FamilyConfig, JsError> {
    let family: Family = serde_json::from_value(serde_json::Value::String(name.into())).map_err(|e| JsError::new(&e.to_string()))?;
    let mut cfg = FamilyConfig::seeded(family, seed as u64);
    if family == Family::Kkpt {
        cfg = FamilyConfig::kkpt(k);
    }
    Ok(cfg)
}

fn json(v: &impl Serialize) -> Result<String, JsError> {
    serde_json::to_string(v).map_err(|e| JsError::new(&e.to_string()))
}

fn err(e: layerpot::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[derive(Serialize)]
struct SweepRow {
    k: f64,
    sigma_min: f64,
    norm: f64,
    invertible: bool,
}

/// Smallest singular value of the boundary double layer along `ks`.
#[wasm_bindgen]
pub fn kkpt_sweep(points: usize, ks: &[f64]) -> Result<String, JsError> {
    let rows = sweep(&grid(points)?, ks).map_err(err)?;
    json(&rows.iter().map(|r| SweepRow { k: r.k, sigma_min: r.sigma_double_layer, norm: r.norm_double_layer, invertible: r.double_layer_invertible }).collect::<Vec<_>>())
}

#[derive(Serialize)]
struct Profile {
    x: Vec<f64>,
    data: Vec<f64>,
    slices: Vec<(f64, Vec<f64>)>,
}

/// Real part of the double layer of `cos(mode x)` at each height.
#[wasm_bindgen]
pub fn double_layer_profile(family_name: &str, k: f64, seed: u32, points: usize, mode: u32, heights: &[f64]) -> Result<String, JsError> {
    let g = grid(points)?;
    if mode == 0 || 2 * mode as usize >= points {
        return Err(JsError::new("mode must be between 1 and N/2 - 1"));
    }
    let field = family(family_name, k, seed)?.build(&g).map_err(err)?;
    let lp = LayerPotentials::new(&field).map_err(err)?;
    let h = GridField::scalar(&g, |x| C64::new((mode as f64 * x[0]).cos(), 0.0));
    let mut slices = Vec::with_capacity(heights.len());
    for &t in heights {
        let d = lp.double_layer_t(t, &h).map_err(err)?;
        slices.push((t, d.values.iter().map(|z| z.re).collect()));
    }
    json(&Profile { x: (0..points).map(|p| g.coords(p)[0]).collect(), data: h.values.iter().map(|z| z.re).collect(), slices })
}

#[derive(Serialize)]
struct Decay {
    radii: Vec<f64>,
    tail: Vec<f64>,
    tail_slope: f64,
    solid: Vec<f64>,
    solid_slope: f64,
}

/// Annular masses of the pole kernel below a pole at height `t0`.
#[wasm_bindgen]
pub fn kernel_decay(family_name: &str, k: f64, seed: u32, points: usize, t0: f64) -> Result<String, JsError> {
    let g = grid(points)?;
    let field = family(family_name, k, seed)?.build(&g).map_err(err)?;
    let solver = PoleKernelSolver::for_field(&field).map_err(err)?;
    let h = g.spacing();
    let radii: Vec<f64> = [8.0, 4.0, 2.0, 1.0].iter().map(|c| c * h).filter(|r| *r <= g.length / 8.0).collect();
    let kernel = solver.construct(t0, 0, 0, &[t0 - 0.5 * h]).map_err(err)?;
    let tail = annular_decay(&kernel, &radii).map_err(err)?;
    let solid = solid_annulus_decay(&solver, t0, 0, 0, &radii, h / 4.0, 4).map_err(err)?;
    json(&Decay {
        radii: radii.clone(),
        tail: tail.rows.iter().map(|r| r.mass).collect(),
        tail_slope: tail.slope,
        solid: solid.rows.iter().map(|r| r.mass).collect(),
        solid_slope: solid.slope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_of_laplacian_halves_and_decays() {
        let v: serde_json::Value = serde_json::from_str(&double_layer_profile("identity", 0.0, 0, 32, 1, &[0.5]).unwrap()).unwrap();
        let d = v["slices"][0][1].as_array().unwrap();
        let data = v["data"].as_array().unwrap();
        let expect = 0.5 * (-0.5f64).exp();
        for (a, b) in d.iter().zip(data) {
            assert!((a.as_f64().unwrap() - expect * b.as_f64().unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn sweep_starts_at_one_half() {
        let v: serde_json::Value = serde_json::from_str(&kkpt_sweep(32, &[0.0, 0.5]).unwrap()).unwrap();
        assert!((v[0]["sigma_min"].as_f64().unwrap() - 0.5).abs() < 1e-9);
        assert!(v[1]["sigma_min"].as_f64().unwrap() < 0.5);
    }

    #[test]
    fn decay_table_has_rows() {
        let v: serde_json::Value = serde_json::from_str(&kernel_decay("identity", 0.0, 0, 64, 1.0).unwrap()).unwrap();
        assert_eq!(v["radii"].as_array().unwrap().len(), v["tail"].as_array().unwrap().len());
        assert!(v["tail_slope"].as_f64().unwrap() < 0.0);
    }
}
