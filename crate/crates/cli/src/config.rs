//! Run configuration: one TOML file, every field defaulted.

use gelfand_core::diagnostics::SampleOptions;
use gelfand_core::geometry::{DomainSpec, FourierCurve};
use gelfand_core::matching::SetupOptions;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// Largest admissible `λ`; the large-branch construction needs `ln(1/λ)` of a few units.
pub const LAMBDA_MAX: f64 = 0.05;

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for every randomized sample.
    pub seed: u64,
    pub lambdas: Vec<f64>,
    pub output_dir: PathBuf,
    /// Patch multiplier `M`; chosen automatically when absent.
    pub m_override: Option<f64>,
    /// Trace window position in `[1, 2]`.
    pub l_window: f64,
    /// Fail instead of shrinking `M` when the band leaves the tube.
    pub strict_band: bool,
    pub nodes: NodeCounts,
    pub domain: DomainConfig,
    pub emit: Emit,
    pub assemble: AssembleConfig,
    pub residual: ResidualConfig,
    pub radial: RadialConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NodeCounts {
    pub gamma: usize,
    pub boundary: usize,
    /// Half-width of the stretched-variable grid (step 1/32).
    pub x_grid_half_width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub outer: FourierCurve,
    pub inner: FourierCurve,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Emit {
    pub csv: bool,
    pub json: bool,
    pub svg: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssembleConfig {
    /// Samples per side of the output grid.
    pub grid: usize,
    pub contours: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResidualConfig {
    pub s_stride: usize,
    pub t_inner: usize,
    pub t_band: usize,
    pub outer_grid: usize,
    pub shared_points: usize,
    /// Largest tolerated relative disagreement between the residual paths.
    pub path_tolerance: f64,
    /// Largest tolerated `|u_ap|` on the boundary.
    pub boundary_tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadialConfig {
    pub rays: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            lambdas: vec![1e-3],
            output_dir: PathBuf::from("gelfand-out"),
            m_override: None,
            l_window: 1.0,
            strict_band: false,
            nodes: NodeCounts::default(),
            domain: DomainConfig::default(),
            emit: Emit::default(),
            assemble: AssembleConfig::default(),
            residual: ResidualConfig::default(),
            radial: RadialConfig::default(),
        }
    }
}

impl Default for NodeCounts {
    fn default() -> Self {
        Self { gamma: 128, boundary: 256, x_grid_half_width: 40.0 }
    }
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self { outer: FourierCurve::circle(0.0, 0.0, 4.0), inner: FourierCurve::circle(0.0, 0.0, 1.0) }
    }
}

impl Default for Emit {
    fn default() -> Self {
        Self { csv: true, json: true, svg: false }
    }
}

impl Default for AssembleConfig {
    fn default() -> Self {
        Self { grid: 121, contours: 12 }
    }
}

impl Default for ResidualConfig {
    fn default() -> Self {
        let s = SampleOptions::default();
        Self {
            s_stride: s.s_stride,
            t_inner: s.t_inner,
            t_band: s.t_band,
            outer_grid: s.outer_grid,
            shared_points: s.shared_points,
            path_tolerance: 1e-4,
            boundary_tolerance: 1e-6,
        }
    }
}

impl Default for RadialConfig {
    fn default() -> Self {
        Self { rays: 8 }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError(format!("cannot parse config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config fields are all representable in TOML")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: String| Err(ConfigError(m));
        if self.lambdas.is_empty() {
            return fail("lambdas must list at least one value".into());
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(**l > 0.0 && **l < LAMBDA_MAX)) {
            return fail(format!("λ = {l} outside (0, {LAMBDA_MAX})"));
        }
        for (name, n) in [("nodes.gamma", self.nodes.gamma), ("nodes.boundary", self.nodes.boundary)] {
            // spectral differentiation pairs modes ±k, which needs an even count
            if n < 8 || n % 2 == 1 {
                return fail(format!("{name} = {n} must be an even count of at least 8"));
            }
        }
        if self.nodes.x_grid_half_width.is_nan() || self.nodes.x_grid_half_width < 10.0 {
            return fail(format!("nodes.x_grid_half_width = {} must be at least 10", self.nodes.x_grid_half_width));
        }
        if !(1.0..=2.0).contains(&self.l_window) {
            return fail(format!("l_window = {} outside [1, 2]", self.l_window));
        }
        if let Some(m) = self.m_override {
            if m.is_nan() || m <= 0.0 {
                return fail(format!("m_override = {m} must be positive"));
            }
        }
        let counts = [
            ("assemble.grid", self.assemble.grid),
            ("assemble.contours", self.assemble.contours),
            ("residual.s_stride", self.residual.s_stride),
            ("residual.t_inner", self.residual.t_inner),
            ("residual.t_band", self.residual.t_band),
            ("residual.outer_grid", self.residual.outer_grid),
            ("residual.shared_points", self.residual.shared_points),
            ("radial.rays", self.radial.rays),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, n)| *n == 0) {
            return fail(format!("{name} must be positive"));
        }
        if self.assemble.grid < 2 || self.residual.t_inner < 2 || self.residual.outer_grid < 2 {
            return fail("grid resolutions need at least two samples per side".into());
        }
        Ok(())
    }

    pub fn domain_spec(&self) -> Result<DomainSpec, gelfand_core::Error> {
        DomainSpec::from_fourier(&self.domain.outer, &self.domain.inner, self.nodes.boundary)
    }

    pub fn setup_options(&self) -> SetupOptions {
        SetupOptions { gamma_nodes: self.nodes.gamma, layer_reach: self.nodes.x_grid_half_width, ..Default::default() }
    }

    pub fn sample_options(&self) -> SampleOptions {
        SampleOptions {
            s_stride: self.residual.s_stride,
            t_inner: self.residual.t_inner,
            t_band: self.residual.t_band,
            outer_grid: self.residual.outer_grid,
            shared_points: self.residual.shared_points,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(back.to_toml(), cfg.to_toml());
    }

    #[test]
    fn partial_file_takes_defaults() {
        let cfg = RunConfig::from_toml("lambdas = [1e-4, 1e-6]\n[nodes]\ngamma = 64\n").unwrap();
        assert_eq!(cfg.lambdas, vec![1e-4, 1e-6]);
        assert_eq!(cfg.nodes.gamma, 64);
        assert_eq!(cfg.nodes.boundary, 256);
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "lambdas = [0.2]",
            "lambdas = []",
            "[nodes]\ngamma = 127",
            "l_window = 2.5",
            "m_override = -1.0",
            "unknown_key = 3",
            "[assemble]\ngrid = 0",
        ] {
            assert!(RunConfig::from_toml(text).is_err(), "{text}");
        }
    }

    #[test]
    fn eccentric_domain_parses() {
        let text = "[domain.outer]\ncos_coeffs_x = [0.0, 4.0]\nsin_coeffs_x = [0.0, 0.0]\ncos_coeffs_y = [0.0, 0.0]\nsin_coeffs_y = [0.0, 4.0]\n\
                    [domain.inner]\ncos_coeffs_x = [0.8, 1.0]\nsin_coeffs_x = [0.0, 0.0]\ncos_coeffs_y = [0.0, 0.0]\nsin_coeffs_y = [0.0, 1.0]\n";
        let cfg = RunConfig::from_toml(text).unwrap();
        assert_eq!(cfg.domain.inner, FourierCurve::circle(0.8, 0.0, 1.0));
        assert!(cfg.domain_spec().is_ok());
    }
}
