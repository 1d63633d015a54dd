//! The global TOML configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::color::{CmfTable, ColorMatrix, ColorMatrixKind, SRGB_D65};
use crate::dataset::{PerturbConfig, SynthConfig};
use crate::edit::EditConfig;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::optim::TrainConfig;
use crate::raster::RasterConfig;
use crate::shading::ShadingConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColorConfig {
    /// CMF table file; the bundled CIE 1931 2° table when absent.
    pub cmf: Option<PathBuf>,
    /// Row-major XYZ → RGB matrix used for band recombination; sRGB/D65 when absent.
    pub matrix: Option<[[f64; 3]; 3]>,
}

impl ColorConfig {
    pub fn cmf_table(&self) -> Result<CmfTable> {
        match &self.cmf {
            Some(p) => CmfTable::load(p),
            None => Ok(CmfTable::cie1931()),
        }
    }

    pub fn combine_matrix(&self) -> Result<ColorMatrix> {
        ColorMatrix::new(
            self.matrix.unwrap_or(SRGB_D65),
            ColorMatrixKind::XyzToSrgbCombined,
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub color: ColorConfig,
    pub shading: ShadingConfig,
    pub raster: RasterConfig,
    pub loss: LossWeights,
    pub train: TrainConfig,
    pub edit: EditConfig,
    pub synth: SynthConfig,
    pub perturb: PerturbConfig,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`; relative CMF paths resolve against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg =
            Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let (Some(cmf), Some(dir)) = (&cfg.color.cmf, path.parent()) {
            if cmf.is_relative() {
                cfg.color.cmf = Some(dir.join(cmf));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.raster.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        if let Some(m) = self.color.matrix {
            ColorMatrix::new(m, ColorMatrixKind::XyzToSrgbCombined)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(Config::parse("").unwrap(), Config::default());
    }

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = Config::default();
        assert_eq!(Config::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn partial_sections_override() {
        let cfg =
            Config::parse("[train]\niterations = 10\nwarmup_iterations = 5\n[loss]\ndssim = 0.5\n")
                .unwrap();
        assert_eq!(cfg.train.iterations, 10);
        assert_eq!(cfg.loss.dssim, 0.5);
        assert_eq!(cfg.loss.knn_k, LossWeights::default().knn_k);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Config::parse("[train]\nitrations = 3\n").is_err());
        assert!(Config::parse("[nope]\n").is_err());
    }

    #[test]
    fn singular_matrix_is_rejected() {
        assert!(Config::parse(
            "[color]\nmatrix = [[1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 1.0]]\n"
        )
        .is_err());
    }
}
