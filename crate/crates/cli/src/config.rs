//! TOML run configuration. Every section is optional and defaults to the
//! calibrated BTC-USD setup; unknown keys are rejected.

use std::path::{Path, PathBuf};

use regime_games::asgame::{ASModel, DAYS_PER_YEAR, HOURS_PER_YEAR, SECONDS_PER_YEAR};
use regime_games::calib::{CalibConfig, RegimeCalibration, DEFAULT_ANNUALIZATION};
use regime_games::mjls::{RegimeData, RegimeLQModel};
use regime_games::numkit::{Matrix, TimeGrid};
use regime_games::outer::{AffineProfiles, OuterGameSpec};
use regime_games::rates::Generator;
use regime_games::sim::SimConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult, Context};

pub const DEFAULT_SEED: u64 = 20_251_212;
pub const DEFAULT_OUT_DIR: &str = "out";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub market: MarketConfig,
    pub simulation: SimulationConfig,
    pub mm: MmConfig,
    pub calibration: CalibrationConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lq: Option<LqConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outer: Option<OuterConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            out_dir: PathBuf::from(DEFAULT_OUT_DIR),
            market: MarketConfig::default(),
            simulation: SimulationConfig::default(),
            mm: MmConfig::default(),
            calibration: CalibrationConfig::default(),
            lq: None,
            outer: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketConfig {
    /// CARA risk aversion, per USD.
    pub gamma: f64,
    /// Predator aggressiveness.
    pub xi: f64,
    pub fill_intensity_per_year: f64,
    /// `k` in `Λ(u) = A e^{−ku}`, per USD of quote offset.
    pub fill_decay_per_usd: f64,
    pub sigma_usd_annual: Vec<f64>,
    pub q_max: i32,
    pub horizon_hours: f64,
    pub dt_seconds: f64,
    pub s0_usd: f64,
    /// Off-diagonal switching rates; the diagonal is ignored.
    pub switch_rates_per_day: Vec<Vec<f64>>,
    /// Calibration JSON whose σ and generator replace the values above.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibration_file: Option<PathBuf>,
}

impl Default for MarketConfig {
    fn default() -> Self {
        let m = ASModel::baseline();
        Self {
            gamma: m.gamma,
            xi: m.xi,
            fill_intensity_per_year: m.a,
            fill_decay_per_usd: m.k,
            sigma_usd_annual: m.sigma.clone(),
            q_max: m.q_max,
            horizon_hours: 12.0,
            dt_seconds: 15.0,
            s0_usd: m.s0,
            switch_rates_per_day: vec![vec![0.0, 30.0], vec![30.0, 0.0]],
            calibration_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub n_paths: usize,
    /// Overrides `horizon / dt`; `dt` is rescaled to match.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_steps: Option<usize>,
    pub predator: bool,
    pub initial_regime: usize,
    /// Number of paths per strategy written as per-step CSV.
    pub export_paths: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n_paths: 1000,
            n_steps: None,
            predator: true,
            initial_regime: 0,
            export_paths: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MmConfig {
    /// θ-table steps; defaults to `horizon / dt`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_steps: Option<usize>,
    /// ξ values for the spread sweep (empty = no sweep).
    pub xi_sweep: Vec<f64>,
    pub sweep_tau_seconds: Vec<f64>,
    /// Horizons of the expansion error report.
    pub expansion_tau_years: Vec<f64>,
    #[serde(rename = "macro", skip_serializing_if = "Option::is_none")]
    pub macro_game: Option<MacroConfig>,
}

impl Default for MmConfig {
    fn default() -> Self {
        Self {
            n_steps: None,
            xi_sweep: Vec::new(),
            sweep_tau_seconds: vec![900.0, 3600.0, 10_800.0],
            expansion_tau_years: (4..=10).map(|k| 0.5f64.powi(k)).collect(),
            macro_game: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MacroModeName {
    Affine,
    Quadratic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacroConfig {
    pub inventories: Vec<i32>,
    pub mode: MacroModeName,
    pub attack_rates_per_day: Vec<Vec<f64>>,
    pub stabilize_rates_per_day: Vec<Vec<f64>>,
    pub rho_f: f64,
    pub rho_g: f64,
    #[serde(default = "default_macro_steps")]
    pub n_steps: usize,
    #[serde(default)]
    pub flip_bang_bang: bool,
    #[serde(default = "default_true")]
    pub clamp_efforts: bool,
}

fn default_macro_steps() -> usize {
    48
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    pub window_bars: usize,
    pub annualization_bars_per_year: f64,
    pub n_regimes: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            csv: None,
            window_bars: 48,
            annualization_bars_per_year: DEFAULT_ANNUALIZATION,
            n_regimes: 2,
        }
    }
}

/// Regime-switching LQ problem in its own time unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqConfig {
    pub horizon: f64,
    pub n_steps: usize,
    pub switch_rates: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blowup_bound: Option<f64>,
    pub regimes: Vec<LqRegimeConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqRegimeConfig {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    /// Disturbance channel; defaults to a single zero column.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<Vec<Vec<f64>>>,
    pub sigma: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    /// Defaults to the identity.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s: Option<Vec<Vec<f64>>>,
    pub q_t: Vec<Vec<f64>>,
}

/// Outer switching game, rates in the LQ time unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OuterConfig {
    Passive {},
    Bilinear {
        /// `lambda[i][j]` is the attacker-by-stabilizer payoff of rate `i → j`.
        lambda: Vec<Vec<Vec<Vec<f64>>>>,
    },
    Affine {
        attack_rates: Vec<Vec<f64>>,
        stabilize_rates: Vec<Vec<f64>>,
        rho_f: f64,
        rho_g: f64,
    },
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub paths: Option<usize>,
    pub steps: Option<usize>,
    pub flip_bang_bang: bool,
    pub clamp_efforts: Option<bool>,
}

/// Which grid `--steps` refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepTarget {
    Simulation,
    Mm,
    Lq,
    None,
}

fn matrix(rows: &[Vec<f64>], field: &str) -> CliResult<Matrix> {
    Matrix::from_rows(rows).context(field)
}

fn generator(rows: &[Vec<f64>], scale: f64, field: &str) -> CliResult<Generator> {
    let scaled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|x| x * scale).collect()).collect();
    Generator::from_rates(&matrix(&scaled, field)?).context(field)
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> CliResult<Self> {
        toml::from_str(s).map_err(|e| CliError::config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::config(e.to_string()))
    }

    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        resolve(base, &mut cfg.out_dir);
        if let Some(p) = cfg.market.calibration_file.as_mut() {
            resolve(base, p);
        }
        if let Some(p) = cfg.calibration.csv.as_mut() {
            resolve(base, p);
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, ov: &Overrides, target: StepTarget) {
        if let Some(s) = ov.seed {
            self.seed = s;
        }
        if let Some(o) = &ov.out_dir {
            self.out_dir = o.clone();
        }
        if let Some(p) = ov.paths {
            self.simulation.n_paths = p;
        }
        if let Some(n) = ov.steps {
            match target {
                StepTarget::Simulation => self.simulation.n_steps = Some(n),
                StepTarget::Mm => self.mm.n_steps = Some(n),
                StepTarget::Lq => {
                    if let Some(lq) = self.lq.as_mut() {
                        lq.n_steps = n;
                    }
                }
                StepTarget::None => {}
            }
        }
        if let Some(m) = self.mm.macro_game.as_mut() {
            if ov.flip_bang_bang {
                m.flip_bang_bang = true;
            }
            if let Some(c) = ov.clamp_efforts {
                m.clamp_efforts = c;
            }
        }
    }

    /// Checks that every referenced file exists.
    pub fn check_files(&self) -> CliResult<()> {
        let files = [
            ("market.calibration_file", &self.market.calibration_file),
            ("calibration.csv", &self.calibration.csv),
        ];
        for (field, f) in files {
            if let Some(p) = f {
                if !p.is_file() {
                    return Err(CliError::config(format!("{field}: {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    /// The market model with years as time unit. A calibration file, if
    /// given, replaces σ and the switching rates.
    pub fn market_model(&self) -> CliResult<ASModel> {
        let m = &self.market;
        let mut model = ASModel {
            gamma: m.gamma,
            xi: m.xi,
            a: m.fill_intensity_per_year,
            k: m.fill_decay_per_usd,
            sigma: m.sigma_usd_annual.clone(),
            q_max: m.q_max,
            horizon: m.horizon_hours / HOURS_PER_YEAR,
            dt: m.dt_seconds / SECONDS_PER_YEAR,
            s0: m.s0_usd,
            rates: generator(&m.switch_rates_per_day, DAYS_PER_YEAR, "market.switch_rates_per_day")?,
        };
        if let Some(path) = &m.calibration_file {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::config(format!("market.calibration_file: cannot read {}: {e}", path.display()))
            })?;
            let cal: RegimeCalibration = serde_json::from_str(&text).map_err(|e| {
                CliError::config(format!("market.calibration_file: {}: {e}", path.display()))
            })?;
            cal.apply_to(&mut model).context("market.calibration_file")?;
        }
        model.validate().context("market")?;
        Ok(model)
    }

    /// Steps of the market horizon: `n` if given (with `dt` rescaled), else
    /// `horizon / dt`, which must then be a whole number.
    pub fn market_steps(model: &mut ASModel, n: Option<usize>, field: &str) -> CliResult<usize> {
        match n {
            Some(0) => Err(CliError::config(format!("{field}: must be >= 1"))),
            Some(n) => {
                model.dt = model.horizon / n as f64;
                Ok(n)
            }
            None => {
                let n = (model.horizon / model.dt).round();
                if n < 1.0 || (n * model.dt - model.horizon).abs() > 1e-9 * model.horizon {
                    return Err(CliError::config(
                        "market: horizon_hours is not a whole number of dt_seconds steps",
                    ));
                }
                Ok(n as usize)
            }
        }
    }

    pub fn sim_config(&self) -> CliResult<SimConfig> {
        let mut model = self.market_model()?;
        let n_steps = Self::market_steps(&mut model, self.simulation.n_steps, "simulation.n_steps")?;
        let cfg = SimConfig {
            model,
            n_paths: self.simulation.n_paths,
            n_steps,
            seed: self.seed,
            predator: self.simulation.predator,
            initial_regime: self.simulation.initial_regime,
        };
        cfg.validate().context("simulation")?;
        Ok(cfg)
    }

    pub fn calib_config(&self) -> CliResult<CalibConfig> {
        let c = &self.calibration;
        if c.window_bars < 2 {
            return Err(CliError::config("calibration.window_bars: must be >= 2"));
        }
        if !(c.annualization_bars_per_year > 0.0) {
            return Err(CliError::config("calibration.annualization_bars_per_year: must be positive"));
        }
        if c.n_regimes == 0 {
            return Err(CliError::config("calibration.n_regimes: must be >= 1"));
        }
        Ok(CalibConfig {
            window: c.window_bars,
            annualization: c.annualization_bars_per_year,
            n_regimes: c.n_regimes,
        })
    }

    /// LQ model, outer spec and grid for `solve`.
    pub fn hierarchy_inputs(&self) -> CliResult<(RegimeLQModel, OuterGameSpec, TimeGrid, f64)> {
        let lq = self
            .lq
            .as_ref()
            .ok_or_else(|| CliError::config("solve needs an [lq] section"))?;
        let baseline = generator(&lq.switch_rates, 1.0, "lq.switch_rates")?;
        let mut regimes = Vec::with_capacity(lq.regimes.len());
        for (i, r) in lq.regimes.iter().enumerate() {
            let f = |name: &str| format!("lq.regimes[{i}].{name}");
            let a = matrix(&r.a, &f("a"))?;
            let b = matrix(&r.b, &f("b"))?;
            let d = match &r.d {
                Some(d) => matrix(d, &f("d"))?,
                None => Matrix::zeros(a.rows(), 1),
            };
            let r_m = match &r.r {
                Some(m) => matrix(m, &f("r"))?,
                None => Matrix::identity(b.cols()),
            };
            let s_m = match &r.s {
                Some(m) => matrix(m, &f("s"))?,
                None => Matrix::identity(d.cols()),
            };
            regimes.push(RegimeData {
                a,
                b,
                d,
                sigma: matrix(&r.sigma, &f("sigma"))?,
                q: matrix(&r.q, &f("q"))?,
                r: r_m,
                s: s_m,
                q_t: matrix(&r.q_t, &f("q_t"))?,
            });
        }
        let model = RegimeLQModel::new(regimes, baseline.clone()).context("lq")?;
        let spec = match self.outer.as_ref().unwrap_or(&OuterConfig::Passive {}) {
            OuterConfig::Passive {} => OuterGameSpec::passive(baseline),
            OuterConfig::Bilinear { lambda } => {
                let mut mats = Vec::with_capacity(lambda.len());
                for (i, row) in lambda.iter().enumerate() {
                    let mut out = Vec::with_capacity(row.len());
                    for (j, m) in row.iter().enumerate() {
                        out.push(matrix(m, &format!("outer.lambda[{i}][{j}]"))?);
                    }
                    mats.push(out);
                }
                OuterGameSpec::bilinear(baseline, mats).context("outer")?
            }
            OuterConfig::Affine {
                attack_rates,
                stabilize_rates,
                rho_f,
                rho_g,
            } => OuterGameSpec::affine(
                baseline,
                AffineProfiles {
                    att: matrix(attack_rates, "outer.attack_rates")?,
                    stab: matrix(stabilize_rates, "outer.stabilize_rates")?,
                    rho_f: *rho_f,
                    rho_g: *rho_g,
                },
            )
            .context("outer")?,
        };
        if !(lq.horizon > 0.0 && lq.horizon.is_finite()) {
            return Err(CliError::config("lq.horizon: must be positive"));
        }
        if lq.n_steps == 0 {
            return Err(CliError::config("lq.n_steps: must be >= 1"));
        }
        let grid = TimeGrid::new(0.0, lq.horizon, lq.n_steps).context("lq")?;
        let bound = lq.blowup_bound.unwrap_or(regime_games::mjls::DEFAULT_BLOWUP_BOUND);
        if !(bound > 0.0) {
            return Err(CliError::config("lq.blowup_bound: must be positive"));
        }
        Ok((model, spec, grid, bound))
    }

    /// Macro-game spec with rates converted to per year.
    pub fn macro_spec(&self, model: &ASModel) -> CliResult<Option<(OuterGameSpec, MacroConfig)>> {
        let Some(m) = &self.mm.macro_game else {
            return Ok(None);
        };
        let scale = |rows: &[Vec<f64>], field: &str| -> CliResult<Matrix> {
            let s: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|x| x * DAYS_PER_YEAR).collect()).collect();
            matrix(&s, field)
        };
        let spec = OuterGameSpec::affine(
            model.rates.clone(),
            AffineProfiles {
                att: scale(&m.attack_rates_per_day, "mm.macro.attack_rates_per_day")?,
                stab: scale(&m.stabilize_rates_per_day, "mm.macro.stabilize_rates_per_day")?,
                rho_f: m.rho_f,
                rho_g: m.rho_g,
            },
        )
        .context("mm.macro")?;
        if m.n_steps == 0 {
            return Err(CliError::config("mm.macro.n_steps: must be >= 1"));
        }
        if let Some(q) = m.inventories.iter().find(|q| q.abs() > model.q_max) {
            return Err(CliError::config(format!(
                "mm.macro.inventories: {q} is outside ±{}",
                model.q_max
            )));
        }
        Ok(Some((spec, m.clone())))
    }
}
