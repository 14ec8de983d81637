//! Spectral-compaction profile of a weight matrix.

use serde::Serialize;

use crate::hartley::dht2;
use crate::numerics::Matrix;
use crate::spectrum::{energy_map, select_frequencies, top_energy_indices, SelectionConfig};
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CellEnergy {
    pub u: usize,
    pub v: usize,
    pub energy: f64,
    pub selected: bool,
}

/// Order statistics of the per-cell energies (nearest-rank).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EnergyQuantiles {
    pub min: f64,
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
    pub p90: f64,
    pub p99: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProfileSummary {
    pub shape: (usize, usize),
    pub n: usize,
    pub total_energy: f64,
    /// Share of total energy held by the `n` strongest cells; 0 for a zero matrix.
    pub top_n_capture: f64,
    /// Share of total energy held by the selected mask.
    pub mask_capture: f64,
    pub mask_fingerprint: String,
    pub quantiles: EnergyQuantiles,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectrumReport {
    /// Row-major, one entry per cell.
    pub cells: Vec<CellEnergy>,
    pub summary: ProfileSummary,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

fn share(part: f64, total: f64) -> f64 {
    if total > 0.0 {
        part / total
    } else {
        0.0
    }
}

pub fn profile_spectrum(w: &Matrix, cfg: &SelectionConfig) -> Result<SpectrumReport> {
    cfg.validate(w.shape())?;
    let (d1, d2) = w.shape();
    let h = dht2(w);
    let energy = energy_map(&h);
    let mask = select_frequencies(&h, cfg)?;

    let cells: Vec<CellEnergy> = (0..d1)
        .flat_map(|u| (0..d2).map(move |v| (u, v)))
        .map(|(u, v)| CellEnergy {
            u,
            v,
            energy: energy.get(u, v),
            selected: mask.contains(u, v),
        })
        .collect();

    let total = energy.sum();
    let top: f64 = top_energy_indices(energy.as_slice(), cfg.n).iter().map(|&i| energy.as_slice()[i]).sum();
    let masked: f64 = cells.iter().filter(|c| c.selected).map(|c| c.energy).sum();

    let mut sorted = energy.as_slice().to_vec();
    sorted.sort_by(f64::total_cmp);
    let quantiles = EnergyQuantiles {
        min: sorted[0],
        p25: quantile(&sorted, 0.25),
        median: quantile(&sorted, 0.5),
        p75: quantile(&sorted, 0.75),
        p90: quantile(&sorted, 0.9),
        p99: quantile(&sorted, 0.99),
        max: sorted[sorted.len() - 1],
    };

    Ok(SpectrumReport {
        cells,
        summary: ProfileSummary {
            shape: (d1, d2),
            n: cfg.n,
            total_energy: total,
            top_n_capture: share(top, total),
            mask_capture: share(masked, total),
            mask_fingerprint: format!("{:016x}", mask.fingerprint()),
            quantiles,
        },
    })
}
