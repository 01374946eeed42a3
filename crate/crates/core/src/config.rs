//! TOML run configuration shared by every command.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationOptions;
use crate::error::{Error, Result};
use crate::fit::{FitOptions, FitResult, FreeParams};
use crate::hmm::{BaumWelchOptions, HmmOptions, DEFAULT_DT};
use crate::ring::{BiasPoint, ChargeBasis, DeviceParams, Parity, SectorConfig};
use crate::scattering::DEFAULT_K_STATES;
use crate::spectrum::{linspace, AxisSpec, SweepAxis, DEFAULT_SWEEP_POINTS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 lets the runtime decide.
    pub threads: usize,
    pub device: DeviceParams,
    pub bias: BiasPoint,
    pub basis: ChargeBasis,
    pub sectors: SectorsConfig,
    pub spectrum: SpectrumConfig,
    pub smatrix: SMatrixConfig,
    pub fit: FitConfig,
    pub calibrate: CalibrateConfig,
    pub hmm: HmmConfig,
    pub simulate: SimulateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 0,
            device: DeviceParams::default(),
            bias: BiasPoint::default(),
            basis: ChargeBasis::default(),
            sectors: SectorsConfig::default(),
            spectrum: SpectrumConfig::default(),
            smatrix: SMatrixConfig::default(),
            fit: FitConfig::default(),
            calibrate: CalibrateConfig::default(),
            hmm: HmmConfig::default(),
            simulate: SimulateConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SectorsConfig {
    pub parities: Vec<Parity>,
    /// Gate-charge offsets of each charge-fluctuator state.
    pub fluctuators: Vec<[f64; 3]>,
}

impl Default for SectorsConfig {
    fn default() -> Self {
        Self {
            parities: Parity::ALL.to_vec(),
            fluctuators: vec![[0.0; 3]],
        }
    }
}

impl SectorsConfig {
    pub fn configs(&self) -> Vec<SectorConfig> {
        SectorConfig::product(&self.parities, &self.fluctuators)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumConfig {
    pub axis: SweepAxis,
    pub start: f64,
    pub stop: f64,
    pub points: usize,
    /// Transitions reported per configuration.
    pub count: usize,
    /// Eigenvalues compared between `n_max` and `n_max + 2`.
    pub truncation_levels: usize,
    /// GHz; 0 disables the check.
    pub truncation_tol: f64,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self {
            axis: SweepAxis::Flux,
            start: 0.0,
            stop: 2.0 * std::f64::consts::PI,
            points: DEFAULT_SWEEP_POINTS,
            count: 4,
            truncation_levels: 8,
            truncation_tol: 1e-5,
        }
    }
}

impl SpectrumConfig {
    pub fn axis_spec(&self) -> AxisSpec {
        AxisSpec::grid(self.axis, self.start, self.stop, self.points)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SMatrixConfig {
    pub k_states: usize,
    /// Drive grid, GHz.
    pub freq_start: f64,
    pub freq_stop: f64,
    pub freq_points: usize,
}

impl Default for SMatrixConfig {
    fn default() -> Self {
        Self {
            k_states: DEFAULT_K_STATES,
            freq_start: 5.5,
            freq_stop: 8.0,
            freq_points: 501,
        }
    }
}

impl SMatrixConfig {
    pub fn frequencies(&self) -> Vec<f64> {
        linspace(self.freq_start, self.freq_stop, self.freq_points)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// `axis_value,freq_ghz` CSV of observed dips.
    pub observed: Option<PathBuf>,
    pub axis: SweepAxis,
    /// Initial gate offsets; `device` is the initial parameter guess.
    pub n_g_offset: [f64; 3],
    pub fluctuator_delta: [f64; 3],
    pub phi: f64,
    pub count: usize,
    pub fluctuator_states: bool,
    pub free: FreeParams,
    pub restarts: usize,
    pub jitter: f64,
    pub max_iter: usize,
    pub stall_iter: usize,
    pub stall_tol: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        let o = FitOptions::default();
        Self {
            observed: None,
            axis: SweepAxis::Flux,
            n_g_offset: [0.0; 3],
            fluctuator_delta: [0.0; 3],
            phi: o.phi,
            count: o.count,
            fluctuator_states: o.fluctuator_states,
            free: o.free,
            restarts: o.restarts,
            jitter: o.jitter,
            max_iter: o.max_iter,
            stall_iter: o.stall_iter,
            stall_tol: o.stall_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateConfig {
    /// Off-resonant raw matrix (JSON).
    pub m_off: Option<PathBuf>,
    /// On-resonant raw matrix or list of matrices (JSON).
    pub m_on: Option<PathBuf>,
    pub regularization: f64,
    pub max_iter: usize,
    pub max_residual: f64,
}

impl Default for CalibrateConfig {
    fn default() -> Self {
        let o = CalibrationOptions::default();
        Self {
            m_off: None,
            m_on: None,
            regularization: o.regularization,
            max_iter: o.max_iter,
            max_residual: o.max_residual,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HmmConfig {
    /// Time-series CSV.
    pub input: Option<PathBuf>,
    pub n_states: usize,
    pub restarts: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for HmmConfig {
    fn default() -> Self {
        let o = HmmOptions::default();
        Self {
            input: None,
            n_states: o.n_states,
            restarts: o.restarts,
            tol: o.baum_welch.tol,
            max_iter: o.baum_welch.max_iter,
        }
    }
}

/// Synthetic telegraph generator: well-separated Gaussian clusters around the
/// flattened identity S-matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub n_samples: usize,
    /// Seconds.
    pub dt: f64,
    pub n_states: usize,
    /// Self-transition probability of every state.
    pub stay: f64,
    /// Pairwise cluster distance in units of `sigma`.
    pub separation: f64,
    pub sigma: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            n_samples: 32768,
            dt: DEFAULT_DT,
            n_states: 4,
            stay: 0.85,
            separation: 10.0,
            sigma: 0.01,
        }
    }
}

fn within(prefix: &str, r: Result<()>) -> Result<()> {
    r.map_err(|e| match e {
        Error::Invalid { field, reason } => Error::Invalid {
            field: format!("{prefix}.{field}"),
            reason,
        },
        other => other,
    })
}

fn require(ok: bool, field: &str, reason: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(field, reason))
    }
}

fn finite(field: &str, v: f64) -> Result<()> {
    require(v.is_finite(), field, "must be finite")
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Checks every section; errors name the offending field by its path.
    pub fn validate(&self) -> Result<()> {
        within("device", self.device.validate())?;
        within("bias", self.bias.validate())?;
        require(self.basis.n_max >= 1, "basis.n_max", "must be >= 1")?;
        require(!self.sectors.parities.is_empty(), "sectors.parities", "must not be empty")?;
        require(!self.sectors.fluctuators.is_empty(), "sectors.fluctuators", "must not be empty")?;
        for (i, f) in self.sectors.fluctuators.iter().enumerate() {
            for (j, &v) in f.iter().enumerate() {
                finite(&format!("sectors.fluctuators[{i}][{j}]"), v)?;
            }
        }

        let s = &self.spectrum;
        finite("spectrum.start", s.start)?;
        finite("spectrum.stop", s.stop)?;
        require(s.points >= 1, "spectrum.points", "must be >= 1")?;
        require(s.count >= 1, "spectrum.count", "must be >= 1")?;
        require(s.truncation_tol >= 0.0, "spectrum.truncation_tol", "must be >= 0")?;

        let m = &self.smatrix;
        require(m.k_states >= 1, "smatrix.k_states", "must be >= 1")?;
        finite("smatrix.freq_start", m.freq_start)?;
        finite("smatrix.freq_stop", m.freq_stop)?;
        require(m.freq_points >= 1, "smatrix.freq_points", "must be >= 1")?;

        let f = &self.fit;
        require(f.count >= 1, "fit.count", "must be >= 1")?;
        require(f.free.count() >= 1, "fit.free", "no free parameters")?;
        finite("fit.phi", f.phi)?;
        require(f.jitter >= 0.0 && f.jitter.is_finite(), "fit.jitter", "must be >= 0")?;
        require(f.stall_iter >= 1, "fit.stall_iter", "must be >= 1")?;
        require(f.stall_tol >= 0.0, "fit.stall_tol", "must be >= 0")?;
        for i in 0..3 {
            finite(&format!("fit.n_g_offset[{i}]"), f.n_g_offset[i])?;
            finite(&format!("fit.fluctuator_delta[{i}]"), f.fluctuator_delta[i])?;
        }

        let c = &self.calibrate;
        require(c.regularization >= 0.0 && c.regularization.is_finite(), "calibrate.regularization", "must be >= 0")?;
        require(c.max_residual > 0.0, "calibrate.max_residual", "must be > 0")?;

        let h = &self.hmm;
        require(h.n_states >= 1, "hmm.n_states", "must be >= 1")?;
        require(h.restarts >= 1, "hmm.restarts", "must be >= 1")?;
        require(h.tol >= 0.0, "hmm.tol", "must be >= 0")?;

        let sim = &self.simulate;
        require(sim.n_samples >= 1, "simulate.n_samples", "must be >= 1")?;
        require(sim.dt > 0.0 && sim.dt.is_finite(), "simulate.dt", "must be > 0")?;
        require(
            (1..=crate::hmm::SMATRIX_DIM).contains(&sim.n_states),
            "simulate.n_states",
            "must be between 1 and 18",
        )?;
        require((0.0..=1.0).contains(&sim.stay), "simulate.stay", "must lie in [0, 1]")?;
        require(sim.separation >= 0.0 && sim.separation.is_finite(), "simulate.separation", "must be >= 0")?;
        require(sim.sigma > 0.0 && sim.sigma.is_finite(), "simulate.sigma", "must be > 0")?;
        Ok(())
    }

    pub fn fit_guess(&self) -> FitResult {
        FitResult::guess(self.device, self.fit.n_g_offset, self.fit.fluctuator_delta)
    }

    pub fn fit_options(&self) -> FitOptions {
        let f = &self.fit;
        FitOptions {
            phi: f.phi,
            basis: self.basis,
            count: f.count,
            free: f.free,
            fluctuator_states: f.fluctuator_states,
            restarts: f.restarts,
            jitter: f.jitter,
            max_iter: f.max_iter,
            stall_iter: f.stall_iter,
            stall_tol: f.stall_tol,
            seed: self.seed,
        }
    }

    pub fn calibration_options(&self) -> CalibrationOptions {
        CalibrationOptions {
            regularization: self.calibrate.regularization,
            max_iter: self.calibrate.max_iter,
            max_residual: self.calibrate.max_residual,
        }
    }

    pub fn hmm_options(&self) -> HmmOptions {
        HmmOptions {
            n_states: self.hmm.n_states,
            restarts: self.hmm.restarts,
            baum_welch: BaumWelchOptions {
                tol: self.hmm.tol,
                max_iter: self.hmm.max_iter,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.sectors.configs().len(), 4);
        assert_eq!(cfg.simulate.n_samples, 32768);
    }

    #[test]
    fn round_trip() {
        let mut cfg = RunConfig::default();
        cfg.sectors.fluctuators.push([0.11, -0.03, 0.04]);
        cfg.fit.observed = Some("lines.csv".into());
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_sections() {
        let text = r#"
seed = 7
[device]
e_c = 4.0
e_j = [8.0, 8.0, 8.0]
[sectors]
parities = ["ee"]
[spectrum]
axis = "ng1"
points = 3
"#;
        let cfg = RunConfig::from_toml(text).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.device.gamma, crate::ring::DEFAULT_GAMMA_GHZ);
        assert_eq!(cfg.spectrum.axis, SweepAxis::Ng1);
        assert_eq!(cfg.spectrum.axis_spec().values.len(), 3);
        assert_eq!(cfg.fit_options().seed, 7);
    }

    #[test]
    fn errors_carry_field_paths() {
        let field = |text: &str| match RunConfig::from_toml(text) {
            Err(Error::Invalid { field, .. }) => field,
            other => panic!("expected invalid, got {other:?}"),
        };
        assert_eq!(field("[device]\ne_c = -1.0\ne_j = [1.0, 1.0, 1.0]\n"), "device.e_c");
        assert_eq!(field("[hmm]\nn_states = 0\n"), "hmm.n_states");
        assert_eq!(field("[sectors]\nparities = []\n"), "sectors.parities");
        assert_eq!(field("[basis]\nn_max = 0\n"), "basis.n_max");
        assert!(matches!(RunConfig::from_toml("bogus = 1\n"), Err(Error::Parse { .. })));
        assert!(matches!(RunConfig::from_toml("[spectrum]\naxis = \"ng9\"\n"), Err(Error::Parse { .. })));
    }
}
