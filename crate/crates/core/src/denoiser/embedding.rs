use crate::error::{invalid, Result};

/// Sinusoidal encoding of a position: pairs `(sin(p ω_i), cos(p ω_i))` with
/// `ω_i = 10000^(−2i/d)`.
pub fn sinusoidal(position: f64, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for i in 0..d / 2 {
        let w = 10000f64.powf(-2.0 * i as f64 / d as f64);
        out[2 * i] = (position * w).sin();
        out[2 * i + 1] = (position * w).cos();
    }
    if d % 2 == 1 {
        out[d - 1] = (position).sin();
    }
    out
}

/// Fixed part of the diffusion-step embedding; the network passes it
/// through a learned two-layer SiLU MLP.
pub fn timestep_embedding(t: usize, steps: usize, d: usize) -> Result<Vec<f64>> {
    if t > steps {
        return Err(invalid(format!("timestep {t} outside [0, {steps}]")));
    }
    Ok(sinusoidal(t as f64, d))
}
