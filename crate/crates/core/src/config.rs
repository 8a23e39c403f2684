//! Plain `key = value` run configuration.
//!
//! One assignment per line; `#` starts a comment. Unknown keys and values
//! that do not parse are errors. [`RunConfig::to_text`] writes every key
//! back out, so an echoed file reproduces the run.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::carve::CarveConfig;
use crate::error::{Error, Result};
use crate::metrics::{DEFAULT_F_THRESHOLD, DEFAULT_SAMPLES};
use crate::raster::{rig, Camera, DEFAULT_DISTANCE, DEFAULT_FOV_Y};
use crate::synth::Preset;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub carve: CarveConfig,
    pub image_width: usize,
    pub image_height: usize,
    pub fov_y: f64,
    pub camera_distance: f64,
    pub seed: u64,
    /// Angular noise (degrees) added to targets before carving.
    pub noise_sigma: f64,
    pub preset: Preset,
    pub amplitude: f64,
    pub smoothing_iterations: usize,
    pub samples: usize,
    pub f_threshold: f64,
    pub mesh: Option<PathBuf>,
    pub targets: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            carve: CarveConfig::default(),
            image_width: 256,
            image_height: 256,
            fov_y: DEFAULT_FOV_Y,
            camera_distance: DEFAULT_DISTANCE,
            seed: 0,
            noise_sigma: 0.0,
            preset: Preset::BumpySphere,
            amplitude: 0.05,
            smoothing_iterations: 30,
            samples: DEFAULT_SAMPLES,
            f_threshold: DEFAULT_F_THRESHOLD,
            mesh: None,
            targets: None,
            output: None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "resolution",
    "tau",
    "omega_s",
    "omega_n",
    "iterations",
    "learning_rate",
    "beta1",
    "beta2",
    "epsilon",
    "strategy",
    "post_smoothing",
    "taubin_lambda",
    "taubin_mu",
    "image_width",
    "image_height",
    "fov_y",
    "camera_distance",
    "seed",
    "noise_sigma",
    "preset",
    "amplitude",
    "smoothing_iterations",
    "samples",
    "f_threshold",
    "mesh",
    "targets",
    "output",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse `{value}`: {e}")))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            config
                .set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Applies one assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let c = &mut self.carve;
        match key {
            "resolution" => c.resolution = parse(key, value)?,
            "tau" => c.tau = parse(key, value)?,
            "omega_s" => c.weights.smooth = parse(key, value)?,
            "omega_n" => c.weights.normal = parse(key, value)?,
            "iterations" => c.iterations = parse(key, value)?,
            "learning_rate" => c.adam.learning_rate = parse(key, value)?,
            "beta1" => c.adam.beta1 = parse(key, value)?,
            "beta2" => c.adam.beta2 = parse(key, value)?,
            "epsilon" => c.adam.epsilon = parse(key, value)?,
            "strategy" => c.strategy = parse(key, value)?,
            "post_smoothing" => c.post_smoothing = parse(key, value)?,
            "taubin_lambda" => c.taubin.lambda = parse(key, value)?,
            "taubin_mu" => c.taubin.mu = parse(key, value)?,
            "image_width" => self.image_width = parse(key, value)?,
            "image_height" => self.image_height = parse(key, value)?,
            "fov_y" => self.fov_y = parse(key, value)?,
            "camera_distance" => self.camera_distance = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "noise_sigma" => self.noise_sigma = parse(key, value)?,
            "preset" => self.preset = parse(key, value)?,
            "amplitude" => self.amplitude = parse(key, value)?,
            "smoothing_iterations" => self.smoothing_iterations = parse(key, value)?,
            "samples" => self.samples = parse(key, value)?,
            "f_threshold" => self.f_threshold = parse(key, value)?,
            "mesh" => self.mesh = Some(PathBuf::from(value)),
            "targets" => self.targets = Some(PathBuf::from(value)),
            "output" => self.output = Some(PathBuf::from(value)),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .as_ref()
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{}` is not key=value", o.as_ref())))?;
            self.set(k.trim(), v.trim())?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.carve.validate()?;
        self.cameras()?;
        if !(self.noise_sigma >= 0.0) || !(self.amplitude >= 0.0) {
            return Err(Error::Config("noise_sigma and amplitude must be non-negative".into()));
        }
        if self.samples == 0 || !(self.f_threshold > 0.0) {
            return Err(Error::Config("samples and f_threshold must be positive".into()));
        }
        Ok(())
    }

    pub fn cameras(&self) -> Result<Vec<Camera>> {
        let cams = rig(self.image_width, self.image_height, self.fov_y, self.camera_distance);
        for c in &cams {
            c.validate()?;
        }
        Ok(cams)
    }

    /// Every key with its current value, in [`KEYS`] order.
    pub fn to_text(&self) -> String {
        let c = &self.carve;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let values: Vec<Option<String>> = vec![
            Some(c.resolution.to_string()),
            Some(c.tau.to_string()),
            Some(c.weights.smooth.to_string()),
            Some(c.weights.normal.to_string()),
            Some(c.iterations.to_string()),
            Some(c.adam.learning_rate.to_string()),
            Some(c.adam.beta1.to_string()),
            Some(c.adam.beta2.to_string()),
            Some(c.adam.epsilon.to_string()),
            Some(c.strategy.to_string()),
            Some(c.post_smoothing.to_string()),
            Some(c.taubin.lambda.to_string()),
            Some(c.taubin.mu.to_string()),
            Some(self.image_width.to_string()),
            Some(self.image_height.to_string()),
            Some(self.fov_y.to_string()),
            Some(self.camera_distance.to_string()),
            Some(self.seed.to_string()),
            Some(self.noise_sigma.to_string()),
            Some(self.preset.to_string()),
            Some(self.amplitude.to_string()),
            Some(self.smoothing_iterations.to_string()),
            Some(self.samples.to_string()),
            Some(self.f_threshold.to_string()),
            path(&self.mesh),
            path(&self.targets),
            path(&self.output),
        ];
        let mut out = String::new();
        for (k, v) in KEYS.iter().zip(values) {
            match v {
                Some(v) => out.push_str(&format!("{k} = {v}\n")),
                None => out.push_str(&format!("# {k} unset\n")),
            }
        }
        out
    }

    pub fn write_echo(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::carve::Strategy;

    #[test]
    fn parses_values_comments_and_blank_lines() {
        let cfg = RunConfig::parse(
            "# desk run\nresolution = 64\n\nstrategy=joint  # ablation\nomega_s = 0.5\nmesh = a b.obj\n",
        )
        .unwrap();
        assert_eq!(cfg.carve.resolution, 64);
        assert_eq!(cfg.carve.strategy, Strategy::Joint);
        assert_eq!(cfg.carve.weights.smooth, 0.5);
        assert_eq!(cfg.mesh, Some(PathBuf::from("a b.obj")));
        assert_eq!(cfg.carve.iterations, 200);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let err = RunConfig::parse("resolutoin = 64\n").unwrap_err().to_string();
        assert!(err.contains("line 1") && err.contains("resolutoin"), "{err}");
        assert!(RunConfig::parse("iterations = many\n").is_err());
        assert!(RunConfig::parse("iterations = 0\n").is_err());
        assert!(RunConfig::parse("strategy = both\n").is_err());
        assert!(RunConfig::parse("just words\n").is_err());
        assert!(RunConfig::parse("fov_y = 200\n").is_err());
    }

    #[test]
    fn echo_roundtrips() {
        let mut cfg = RunConfig::default();
        cfg.apply_overrides(&["tau=0.25", "seed = 9", "output=out/dir", "preset=ridged_torus"])
            .unwrap();
        let text = cfg.to_text();
        assert_eq!(text.lines().count(), KEYS.len());
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
        assert!(cfg.apply_overrides(&["tau"]).is_err());
    }

    #[test]
    fn cameras_follow_the_rig_settings() {
        let mut cfg = RunConfig::default();
        cfg.apply_overrides(&["image_width=64", "image_height=48", "fov_y=30"]).unwrap();
        let cams = cfg.cameras().unwrap();
        assert_eq!(cams.len(), 12);
        assert!(cams.iter().all(|c| c.width == 64 && c.height == 48 && c.fov_y == 30.0));
    }
}
