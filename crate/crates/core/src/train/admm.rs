//! ADMM auxiliaries: a projected copy `Z` and a scaled dual `U` per quantized layer.

use crate::assign::{assign, project_matrix, row_stats, SchemeLevels, SchemeMap, SchemeRatio};
use crate::error::{Error, Result};
use crate::network::{reshape_to_gemm, NetworkIR, WeightMatrix};
use crate::quant::AlphaPolicy;

/// `Z = proj(W + U)` row-wise under `map`, then `U = W - Z + U`.
pub fn admm_update(
    w: &WeightMatrix,
    z: &mut WeightMatrix,
    u: &mut WeightMatrix,
    map: &SchemeMap,
    levels: &SchemeLevels,
) -> Result<()> {
    check_shapes(w, z, u)?;
    let v = sum(w, u);
    let (_, projected) = project_matrix(&v, map, levels)?;
    for ((uu, &vv), &zz) in u.data.iter_mut().zip(&v.data).zip(&projected.data) {
        *uu = vv - zz;
    }
    *z = projected;
    Ok(())
}

fn check_shapes(w: &WeightMatrix, z: &WeightMatrix, u: &WeightMatrix) -> Result<()> {
    if (w.rows, w.cols) != (z.rows, z.cols) || (w.rows, w.cols) != (u.rows, u.cols) {
        return Err(Error::Shape(format!(
            "ADMM shapes differ: W {}x{}, Z {}x{}, U {}x{}",
            w.rows, w.cols, z.rows, z.cols, u.rows, u.cols
        )));
    }
    Ok(())
}

fn sum(w: &WeightMatrix, u: &WeightMatrix) -> WeightMatrix {
    WeightMatrix {
        rows: w.rows,
        cols: w.cols,
        data: w.data.iter().zip(&u.data).map(|(a, b)| a + b).collect(),
    }
}

/// `(rho / 2) * ||W - Z + U||^2`
pub fn penalty(w: &[f64], z: &[f64], u: &[f64], rho: f64) -> f64 {
    0.5 * rho
        * w.iter()
            .zip(z)
            .zip(u)
            .map(|((a, b), c)| (a - b + c).powi(2))
            .sum::<f64>()
}

/// W-gradient of [`penalty`]: `rho * (W - Z + U)`.
pub fn penalty_grad(w: &[f64], z: &[f64], u: &[f64], rho: f64) -> Vec<f64> {
    w.iter()
        .zip(z)
        .zip(u)
        .map(|((a, b), c)| rho * (a - b + c))
        .collect()
}

pub fn augmented_loss(task_loss: f64, w: &[f64], z: &[f64], u: &[f64], rho: f64) -> f64 {
    task_loss + penalty(w, z, u, rho)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmLayer {
    /// Layer index in the network.
    pub index: usize,
    pub map: SchemeMap,
    pub z: WeightMatrix,
    pub u: WeightMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub layers: Vec<AdmmLayer>,
    pub rho: f64,
    /// Epochs between `(Z, U)` refreshes.
    pub update_period: usize,
}

impl AdmmState {
    /// Assigns schemes from the current weights and starts from `Z = proj(W)`, `U = 0`.
    pub fn init(
        net: &NetworkIR,
        ratio: &SchemeRatio,
        levels: &SchemeLevels,
        policy: AlphaPolicy,
        rho: f64,
        update_period: usize,
    ) -> Result<Self> {
        if !(rho >= 0.0 && rho.is_finite()) {
            return Err(Error::Config(format!("rho must be non-negative, got {rho}")));
        }
        if update_period == 0 {
            return Err(Error::Config("ADMM update period must be at least one epoch".into()));
        }
        let mut layers = Vec::new();
        for index in net.quantizable_indices() {
            let w = reshape_to_gemm(&net.layers()[index])?;
            let stats = row_stats(&w, &levels.low)?;
            let mut map = assign(&w, ratio, &stats)?;
            map.fit_alphas(&w, levels, policy);
            let (_, z) = project_matrix(&w, &map, levels)?;
            let u = WeightMatrix {
                rows: w.rows,
                cols: w.cols,
                data: vec![0.0; w.data.len()],
            };
            layers.push(AdmmLayer { index, map, z, u });
        }
        if layers.is_empty() {
            return Err(Error::NotQuantizable("network has no dense or conv layers".into()));
        }
        Ok(Self {
            layers,
            rho,
            update_period,
        })
    }

    /// One ADMM round on every layer: optionally reassign rows, refit alpha on
    /// `W + U`, then update `Z` and `U`.
    pub fn update(
        &mut self,
        net: &NetworkIR,
        levels: &SchemeLevels,
        policy: AlphaPolicy,
        reassign: bool,
    ) -> Result<()> {
        for l in &mut self.layers {
            let w = reshape_to_gemm(&net.layers()[l.index])?;
            let v = sum(&w, &l.u);
            if reassign {
                let stats = row_stats(&v, &levels.low)?;
                l.map = assign(&v, &l.map.ratio, &stats)?;
            }
            l.map.fit_alphas(&v, levels, policy);
            admm_update(&w, &mut l.z, &mut l.u, &l.map, levels)?;
        }
        Ok(())
    }

    /// Changes the penalty, rescaling the scaled duals so `rho * U` is preserved.
    pub fn set_rho(&mut self, rho: f64) {
        if self.rho > 0.0 && rho > 0.0 && rho != self.rho {
            let k = self.rho / rho;
            for l in &mut self.layers {
                l.u.data.iter_mut().for_each(|v| *v *= k);
            }
        }
        self.rho = rho;
    }

    pub fn penalty(&self, net: &NetworkIR) -> f64 {
        self.layers
            .iter()
            .map(|l| {
                let w = net.layers()[l.index].weight().expect("quantizable").data();
                penalty(w, &l.z.data, &l.u.data, self.rho)
            })
            .sum()
    }

    /// Largest `|W - proj(W)|` over all quantized layers under the current maps.
    pub fn feasibility_gap(&self, net: &NetworkIR, levels: &SchemeLevels) -> Result<f64> {
        let mut gap = 0.0f64;
        for l in &self.layers {
            gap = gap.max(crate::assign::feasibility_gap(
                &reshape_to_gemm(&net.layers()[l.index])?,
                &l.map,
                levels,
            )?);
        }
        Ok(gap)
    }
}
