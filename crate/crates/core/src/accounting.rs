//! Trainable-parameter, byte and FLOP budgets.
//!
//! Parameter counts are `n * L` for the spectral methods and
//! `r * (d1 + d2)` summed over layers for LoRA. Bytes assume 32-bit storage of
//! the trainable values only; sparse position indices are not counted.
//!
//! FLOP figures are analytical estimates of the cost of rebuilding the weight
//! delta once, not measurements:
//!
//! * real 1D Hartley transform of length `N`: `2.5 N log2 N`
//! * complex 1D FFT of length `N`: `5 N log2 N`
//! * 2D transforms are composed row-column: `d1` transforms of length `d2`
//!   plus `d2` transforms of length `d1`
//! * scattering the trained coefficients: `n` ops (real) or `2n` (complex)
//! * LoRA: the `B A` product, `2 d1 d2 r`

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Bytes per stored trainable value.
pub const BYTES_PER_PARAM: u64 = 4;

/// Real ops per `N log2 N` for one real Hartley transform.
pub const HARTLEY_FLOPS_PER_NLOGN: f64 = 2.5;

/// Real ops per `N log2 N` for one complex FFT.
pub const COMPLEX_FFT_FLOPS_PER_NLOGN: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Ssh,
    Lora,
    FourierftModel,
    Full,
}

/// The spectral methods covered by [`flop_model`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectralMethod {
    Ssh,
    FourierftModel,
}

/// The set of adapted weight matrices of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    pub layer_shapes: Vec<(usize, usize)>,
}

impl ModelConfig {
    pub fn new(name: impl Into<String>, layer_shapes: Vec<(usize, usize)>) -> Result<Self> {
        if layer_shapes.is_empty() {
            return Err(Error::Contract("a model needs at least one adapted matrix".into()));
        }
        if layer_shapes.iter().any(|&(a, b)| a == 0 || b == 0) {
            return Err(Error::Contract("layer dimensions must be positive".into()));
        }
        Ok(Self {
            name: name.into(),
            layer_shapes,
        })
    }

    /// `blocks` transformer blocks adapting query and value, both `d x d`.
    pub fn query_value(name: impl Into<String>, blocks: usize, d: usize) -> Self {
        Self::new(name, vec![(d, d); 2 * blocks]).expect("preset dimensions are positive")
    }

    /// Number of adapted matrices.
    pub fn layer_count(&self) -> usize {
        self.layer_shapes.len()
    }
}

/// Names accepted by [`preset`].
pub const PRESET_NAMES: [&str; 9] = [
    "roberta-base",
    "roberta-large",
    "gpt2-medium",
    "gpt2-large",
    "llama2-7b",
    "llama2-13b",
    "llama3.1-8b",
    "vit-base",
    "vit-large",
];

/// Query+value adapted matrices for the models of the comparison table.
///
/// Block counts and widths are the public architectures. For LLaMA-3.1 8B the
/// value projection is `1024 x 4096` (grouped-query attention); the table's
/// figures for that model do not follow from any integer layer count, so this
/// preset is the architectural one and its mismatches are reported.
pub fn preset(name: &str) -> Result<ModelConfig> {
    let cfg = match name {
        "roberta-base" => ModelConfig::query_value(name, 12, 768),
        "roberta-large" => ModelConfig::query_value(name, 24, 1024),
        "gpt2-medium" => ModelConfig::query_value(name, 24, 1024),
        "gpt2-large" => ModelConfig::query_value(name, 36, 1280),
        "llama2-7b" => ModelConfig::query_value(name, 32, 4096),
        "llama2-13b" => ModelConfig::query_value(name, 40, 5120),
        "llama3.1-8b" => {
            let shapes = (0..32).flat_map(|_| [(4096, 4096), (1024, 4096)]).collect();
            ModelConfig::new(name, shapes)?
        }
        "vit-base" => ModelConfig::query_value(name, 12, 768),
        "vit-large" => ModelConfig::query_value(name, 24, 1024),
        _ => {
            return Err(Error::UnknownPreset {
                name: name.to_string(),
                available: PRESET_NAMES.to_vec(),
            })
        }
    };
    Ok(cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub model: String,
    pub method: Method,
    /// `n` for spectral methods, `r` for LoRA, 0 for full fine-tuning.
    pub setting: usize,
    pub trainable_params: u64,
    pub required_bytes: u64,
    /// Delta-reconstruction FLOPs per forward (model estimate).
    pub flop_estimate: f64,
}

impl BudgetReport {
    fn new(cfg: &ModelConfig, method: Method, setting: usize, params: u64, flops: f64) -> Self {
        Self {
            model: cfg.name.clone(),
            method,
            setting,
            trainable_params: params,
            required_bytes: BYTES_PER_PARAM * params,
            flop_estimate: flops,
        }
    }
}

fn require_positive(what: &str, x: usize) -> Result<()> {
    if x == 0 {
        return Err(Error::Contract(format!("{what} must be at least 1")));
    }
    Ok(())
}

/// `n * L` trainable values.
pub fn ssh_budget(cfg: &ModelConfig, n: usize) -> Result<BudgetReport> {
    spectral_budget(cfg, n, SpectralMethod::Ssh)
}

/// Same count as SSH (`n` real coefficients per layer), complex reconstruction cost.
pub fn fourierft_budget(cfg: &ModelConfig, n: usize) -> Result<BudgetReport> {
    spectral_budget(cfg, n, SpectralMethod::FourierftModel)
}

fn spectral_budget(cfg: &ModelConfig, n: usize, method: SpectralMethod) -> Result<BudgetReport> {
    require_positive("n", n)?;
    let params = (n * cfg.layer_count()) as u64;
    let flops = cfg.layer_shapes.iter().map(|&(d1, d2)| flop_model(method, d1, d2, n).total).sum();
    let tag = match method {
        SpectralMethod::Ssh => Method::Ssh,
        SpectralMethod::FourierftModel => Method::FourierftModel,
    };
    Ok(BudgetReport::new(cfg, tag, n, params, flops))
}

/// `r * (d1 + d2)` summed over the adapted matrices.
pub fn lora_budget(cfg: &ModelConfig, r: usize) -> Result<BudgetReport> {
    require_positive("rank", r)?;
    let params = cfg.layer_shapes.iter().map(|&(d1, d2)| (r * (d1 + d2)) as u64).sum();
    let flops = cfg.layer_shapes.iter().map(|&(d1, d2)| 2.0 * (d1 * d2 * r) as f64).sum();
    Ok(BudgetReport::new(cfg, Method::Lora, r, params, flops))
}

/// Every entry of every adapted matrix; no reconstruction cost.
pub fn full_budget(cfg: &ModelConfig) -> BudgetReport {
    let params = cfg.layer_shapes.iter().map(|&(d1, d2)| (d1 * d2) as u64).sum();
    BudgetReport::new(cfg, Method::Full, 0, params, 0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopEstimate {
    pub transform: f64,
    pub scatter: f64,
    pub total: f64,
}

/// Modelled cost of rebuilding one `d1 x d2` delta from `n` coefficients.
pub fn flop_model(method: SpectralMethod, d1: usize, d2: usize, n: usize) -> FlopEstimate {
    let nlogn = |len: usize| len as f64 * (len as f64).log2();
    // d1 transforms of length d2, then d2 transforms of length d1
    let row_col = d1 as f64 * nlogn(d2) + d2 as f64 * nlogn(d1);
    let (per_nlogn, scatter_per_coeff) = match method {
        SpectralMethod::Ssh => (HARTLEY_FLOPS_PER_NLOGN, 1.0),
        SpectralMethod::FourierftModel => (COMPLEX_FFT_FLOPS_PER_NLOGN, 2.0),
    };
    let transform = per_nlogn * row_col;
    let scatter = scatter_per_coeff * n as f64;
    FlopEstimate {
        transform,
        scatter,
        total: transform + scatter,
    }
}

/// A quantity as printed in a table, e.g. `147K`, `18.8KB`, `1.13MB`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrintedQuantity {
    /// Value in base units (parameters or bytes).
    pub value: f64,
    /// One step of the last printed digit, in base units.
    pub resolution: f64,
}

impl PrintedQuantity {
    /// Parses a parameter count (`K` = 1e3, `M` = 1e6) or a byte size
    /// (`KB` = 1024, `MB` = 1024^2).
    pub fn parse(text: &str) -> Result<Self> {
        let bad = || Error::Parse {
            offset: 0,
            message: format!("unrecognised printed quantity `{text}`"),
        };
        let t = text.trim();
        let split = t.find(|c: char| c.is_ascii_alphabetic()).unwrap_or(t.len());
        let (digits, unit) = t.split_at(split);
        let scale = match unit {
            "" | "B" => 1.0,
            "K" => 1e3,
            "M" => 1e6,
            "KB" => 1024.0,
            "MB" => 1024.0 * 1024.0,
            _ => return Err(bad()),
        };
        let number: f64 = digits.parse().map_err(|_| bad())?;
        let decimals = digits.split_once('.').map_or(0, |(_, frac)| frac.len());
        Ok(Self {
            value: number * scale,
            resolution: 10f64.powi(-(decimals as i32)) * scale,
        })
    }

    /// True if `exact` prints as this value when rounded or truncated to the
    /// printed precision (strictly within one last-digit step).
    pub fn agrees_with(&self, exact: f64) -> bool {
        (exact - self.value).abs() < self.resolution
    }
}

/// One row of the published comparison table: a model with a LoRA setting and
/// an SSH setting, each with printed parameter and byte columns.
#[derive(Clone, Copy, Debug)]
pub struct PublishedRow {
    pub preset: &'static str,
    pub lora_rank: usize,
    pub lora_params: &'static str,
    pub lora_bytes: &'static str,
    pub ssh_n: usize,
    pub ssh_params: &'static str,
    pub ssh_bytes: &'static str,
}

const fn row(
    preset: &'static str,
    lora_rank: usize,
    lora_params: &'static str,
    lora_bytes: &'static str,
    ssh_n: usize,
    ssh_params: &'static str,
    ssh_bytes: &'static str,
) -> PublishedRow {
    PublishedRow {
        preset,
        lora_rank,
        lora_params,
        lora_bytes,
        ssh_n,
        ssh_params,
        ssh_bytes,
    }
}

/// The published values, verbatim.
pub const PUBLISHED_TABLE: [PublishedRow; 18] = [
    row("roberta-base", 4, "147K", "574KB", 200, "4.8K", "18.8KB"),
    row("roberta-base", 8, "295K", "1.13MB", 200, "24K", "94KB"),
    row("roberta-large", 4, "393K", "1.5MB", 200, "9.6K", "36.5KB"),
    row("roberta-large", 8, "786K", "3MB", 750, "36.0K", "131.6KB"),
    row("gpt2-medium", 4, "400K", "1.34MB", 375, "18.1K", "65.8KB"),
    row("gpt2-medium", 8, "786K", "3MB", 750, "36.0K", "131.6KB"),
    row("gpt2-large", 4, "737K", "2.81MB", 375, "18.1K", "105.8KB"),
    row("gpt2-large", 8, "1.47M", "5.74MB", 750, "36.0K", "211.5KB"),
    row("llama2-7b", 16, "8.39M", "32.8MB", 750, "48.0K", "187KB"),
    row("llama2-7b", 64, "33.5M", "131.1MB", 1500, "96.0K", "375KB"),
    row("llama2-13b", 16, "13.1M", "51.2MB", 750, "60K", "234KB"),
    row("llama2-13b", 64, "52.4M", "204.8MB", 1500, "120K", "469KB"),
    row("llama3.1-8b", 16, "13.1M", "51.2MB", 750, "53.7K", "209KB"),
    row("llama3.1-8b", 64, "52.4M", "204.8MB", 1500, "107.5K", "420.1KB"),
    row("vit-base", 8, "295K", "1.13MB", 2250, "54K", "210.7KB"),
    row("vit-base", 16, "590K", "2.25MB", 7500, "179.2K", "700.5KB"),
    row("vit-large", 8, "786K", "2.93MB", 2250, "108K", "422.3KB"),
    row("vit-large", 16, "1.57M", "6MB", 7500, "350K", "1.38MB"),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Column {
    Params,
    Bytes,
}

/// Computed value for one published cell, with the agreement verdict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableCell {
    /// Index into [`PUBLISHED_TABLE`].
    pub row: usize,
    pub model: String,
    pub method: Method,
    pub setting: usize,
    pub column: Column,
    pub computed: u64,
    pub printed: String,
    pub matches: bool,
}

/// Recomputes every cell of the rows for `presets` (all rows when empty).
pub fn reproduce_table(presets: &[&str]) -> Result<Vec<TableCell>> {
    for p in presets {
        preset(p)?;
    }
    let mut cells = Vec::new();
    for (index, r) in PUBLISHED_TABLE
        .iter()
        .enumerate()
        .filter(|(_, r)| presets.is_empty() || presets.contains(&r.preset))
    {
        let cfg = preset(r.preset)?;
        let lora = lora_budget(&cfg, r.lora_rank)?;
        let ssh = ssh_budget(&cfg, r.ssh_n)?;
        for (report, params, bytes) in [(&lora, r.lora_params, r.lora_bytes), (&ssh, r.ssh_params, r.ssh_bytes)] {
            for (column, computed, printed) in [
                (Column::Params, report.trainable_params, params),
                (Column::Bytes, report.required_bytes, bytes),
            ] {
                let matches = PrintedQuantity::parse(printed)?.agrees_with(computed as f64);
                cells.push(TableCell {
                    row: index,
                    model: r.preset.to_string(),
                    method: report.method,
                    setting: report.setting,
                    column,
                    computed,
                    printed: printed.to_string(),
                    matches,
                });
            }
        }
    }
    Ok(cells)
}

/// Published cells the formulas do not reproduce, as
/// `(row of PUBLISHED_TABLE, method, column)`, each with the reason.
pub const KNOWN_DISCREPANCIES: [(usize, Method, Column, &str); 33] = [
    (0, Method::Lora, Column::Bytes, "147,456 params is 576KB, printed 574KB"),
    (1, Method::Ssh, Column::Params, "n=200 over 24 matrices is 4.8K (as in the row above), printed 24K"),
    (1, Method::Ssh, Column::Bytes, "bytes follow the printed 24K, not n x L"),
    (2, Method::Ssh, Column::Bytes, "9.6K params is 37.5KB, printed 36.5KB"),
    (3, Method::Ssh, Column::Bytes, "36.0K params is 140.6KB, printed 131.6KB"),
    (4, Method::Lora, Column::Params, "r=4 over 48 matrices of width 1024 is 393K, printed 400K"),
    (4, Method::Lora, Column::Bytes, "1.34MB corresponds to ~351K params, neither 393K nor 400K"),
    (4, Method::Ssh, Column::Params, "375 x 48 = 18,000, printed 18.1K"),
    (4, Method::Ssh, Column::Bytes, "18.0K params is 70.3KB, printed 65.8KB"),
    (5, Method::Ssh, Column::Bytes, "36.0K params is 140.6KB, printed 131.6KB"),
    (6, Method::Ssh, Column::Params, "375 x 72 = 27,000; printed 18.1K repeats the GPT-2 Medium value"),
    (6, Method::Ssh, Column::Bytes, "27.0K params is 105.5KB, printed 105.8KB"),
    (7, Method::Lora, Column::Bytes, "1,474,560 params is 5.63MB, printed 5.74MB"),
    (7, Method::Ssh, Column::Params, "750 x 72 = 54,000; printed 36.0K repeats the GPT-2 Medium value"),
    (7, Method::Ssh, Column::Bytes, "54.0K params is 210.9KB, printed 211.5KB"),
    (8, Method::Lora, Column::Bytes, "8,388,608 params is 32.0MB, printed 32.8MB"),
    (9, Method::Lora, Column::Bytes, "33,554,432 params is 128.0MB, printed 131.1MB"),
    (10, Method::Lora, Column::Bytes, "13,107,200 params is 50.0MB, printed 51.2MB"),
    (11, Method::Lora, Column::Bytes, "52,428,800 params is 200.0MB, printed 204.8MB"),
    (12, Method::Lora, Column::Params, "GQA value projection gives 6.82M; printed 13.1M repeats LLaMA-2 13B"),
    (12, Method::Lora, Column::Bytes, "follows the printed 13.1M"),
    (12, Method::Ssh, Column::Params, "53.7K is not 750 x L for any integer L"),
    (12, Method::Ssh, Column::Bytes, "follows the printed 53.7K"),
    (13, Method::Lora, Column::Params, "GQA value projection gives 27.3M; printed 52.4M repeats LLaMA-2 13B"),
    (13, Method::Lora, Column::Bytes, "follows the printed 52.4M"),
    (13, Method::Ssh, Column::Params, "107.5K is not 1500 x L for any integer L"),
    (13, Method::Ssh, Column::Bytes, "follows the printed 107.5K"),
    (14, Method::Ssh, Column::Bytes, "54K params is 210.9KB, printed 210.7KB"),
    (15, Method::Ssh, Column::Params, "7500 x 24 = 180,000, printed 179.2K"),
    (15, Method::Ssh, Column::Bytes, "180K params is 703.1KB, printed 700.5KB"),
    (16, Method::Lora, Column::Bytes, "786,432 params is 3.00MB, printed 2.93MB"),
    (16, Method::Ssh, Column::Bytes, "108K params is 421.9KB, printed 422.3KB"),
    (17, Method::Ssh, Column::Params, "7500 x 48 = 360,000, printed 350K"),
];

impl TableCell {
    /// Reason this cell is expected to disagree, if it is a known discrepancy.
    pub fn known_discrepancy(&self) -> Option<&'static str> {
        KNOWN_DISCREPANCIES
            .iter()
            .find(|&&(row, method, column, _)| row == self.row && method == self.method && column == self.column)
            .map(|&(_, _, _, why)| why)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ssh_counts() {
        let base = preset("roberta-base").unwrap();
        assert_eq!(base.layer_count(), 24);
        let r = ssh_budget(&base, 200).unwrap();
        assert_eq!(r.trainable_params, 4_800);
        assert_eq!(r.required_bytes, 19_200);
        // 19200 / 1024 = 18.75, printed 18.8KB
        assert!(PrintedQuantity::parse("18.8KB").unwrap().agrees_with(19_200.0));
        assert_eq!(ssh_budget(&preset("llama2-7b").unwrap(), 750).unwrap().trainable_params, 48_000);
        assert!(ssh_budget(&base, 0).is_err());
    }

    #[test]
    fn lora_counts() {
        let large = preset("roberta-large").unwrap();
        assert_eq!(lora_budget(&large, 4).unwrap().trainable_params, 393_216);
        let gpt2l = preset("gpt2-large").unwrap();
        assert_eq!(lora_budget(&gpt2l, 8).unwrap().trainable_params, 1_474_560);
        let tiny = ModelConfig::new("tiny", vec![(1, 1)]).unwrap();
        assert_eq!(lora_budget(&tiny, 1).unwrap().trainable_params, 2);
        assert_eq!(lora_budget(&preset("llama2-13b").unwrap(), 16).unwrap().trainable_params, 13_107_200);
        assert!(lora_budget(&tiny, 0).is_err());
    }

    #[test]
    fn full_budget_counts_everything() {
        let r = full_budget(&preset("vit-base").unwrap());
        assert_eq!(r.trainable_params, 24 * 768 * 768);
        assert_eq!(r.flop_estimate, 0.0);
    }

    #[test]
    fn bytes_are_four_per_param() {
        for name in PRESET_NAMES {
            let cfg = preset(name).unwrap();
            for r in [
                ssh_budget(&cfg, 750).unwrap(),
                fourierft_budget(&cfg, 750).unwrap(),
                lora_budget(&cfg, 8).unwrap(),
                full_budget(&cfg),
            ] {
                assert_eq!(r.required_bytes, 4 * r.trainable_params);
            }
        }
    }

    #[test]
    fn unknown_preset_lists_names() {
        let err = preset("bert-tiny").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bert-tiny") && msg.contains("vit-large"), "{msg}");
    }

    #[test]
    fn flop_ratio_is_one_half() {
        for &(d1, d2) in &[(2, 2), (3, 7), (768, 768), (4096, 1024)] {
            for n in [1, 750] {
                let s = flop_model(SpectralMethod::Ssh, d1, d2, n);
                let f = flop_model(SpectralMethod::FourierftModel, d1, d2, n);
                assert!((s.transform / f.transform - 0.5).abs() < 1e-15);
                assert!(s.total < f.total);
            }
        }
        let unit = flop_model(SpectralMethod::Ssh, 1, 1, 3);
        assert_eq!(unit.transform, 0.0);
        assert_eq!(unit.total, 3.0);
    }

    #[test]
    fn flop_closed_form_768() {
        // 2.5 * 2 * 768 * 768 * log2(768) + 750
        let s = flop_model(SpectralMethod::Ssh, 768, 768, 750);
        let expected = 2.5 * 2.0 * 768.0 * 768.0 * 768f64.log2() + 750.0;
        assert!((s.total - expected).abs() < 1e-6 * expected);
    }

    #[test]
    fn printed_quantity_parsing() {
        let q = PrintedQuantity::parse("1.13MB").unwrap();
        assert!((q.value - 1.13 * 1048576.0).abs() < 1e-6);
        assert!((q.resolution - 0.01 * 1048576.0).abs() < 1e-6);
        assert!(q.agrees_with(1_179_648.0));
        assert!(PrintedQuantity::parse("18.1K").unwrap().resolution == 100.0);
        assert!(!PrintedQuantity::parse("18.1K").unwrap().agrees_with(18_000.0));
        assert!(PrintedQuantity::parse("12Q").is_err());
        assert!(PrintedQuantity::parse("K").is_err());
    }

    #[test]
    fn mismatches_are_exactly_the_known_list() {
        let cells = reproduce_table(&[]).unwrap();
        assert_eq!(cells.len(), 72);
        for c in &cells {
            assert_eq!(c.matches, c.known_discrepancy().is_none(), "{c:?}");
        }
        assert_eq!(cells.iter().filter(|c| !c.matches).count(), KNOWN_DISCREPANCIES.len());
        assert_eq!(reproduce_table(&["vit-large"]).unwrap().len(), 8);
        assert!(reproduce_table(&["nope"]).is_err());
    }
}
