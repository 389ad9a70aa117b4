use crate::error::{Error, Location, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Number, Value};

/// Parameters of the reconstruction pipeline.
///
/// Lengths are in meters. The registration defaults are the values used in
/// the reference registration workflow; the TSDF, depth and odometry
/// defaults are documented choices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Frames per fragment. Consecutive fragments share one frame.
    pub fragment_size: usize,
    /// Downsampling voxel for fragment clouds before feature matching.
    pub voxel_size: f64,
    pub normal_radius: f64,
    pub normal_max_nn: usize,
    pub fpfh_radius: f64,
    pub fpfh_max_nn: usize,
    pub ransac_distance: f64,
    pub ransac_n: usize,
    pub edge_similarity: f64,
    pub ransac_max_iteration: usize,
    pub ransac_max_validation: usize,
    /// Correspondence distance for fragment-to-fragment ICP.
    pub icp_distance: f64,
    /// Correspondence distance for frame-to-frame ICP odometry.
    pub odometry_distance: f64,
    /// Frame offset of the uncertain edges inside a fragment.
    pub loop_skip: usize,
    /// RANSAC results below this fitness are discarded.
    pub pair_fitness: f64,
    pub tsdf_voxel_size: f64,
    pub sdf_trunc: f64,
    /// Raw depth units per meter.
    pub depth_scale: f64,
    /// Depths beyond this (meters) are treated as invalid.
    pub depth_trunc: f64,
    pub seed: u64,
    /// Worker threads; 0 uses every logical core.
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            fragment_size: 100,
            voxel_size: 0.05,
            normal_radius: 0.1,
            normal_max_nn: 30,
            fpfh_radius: 0.25,
            fpfh_max_nn: 100,
            ransac_distance: 0.075,
            ransac_n: 4,
            edge_similarity: 0.9,
            ransac_max_iteration: 4_000_000,
            ransac_max_validation: 500,
            icp_distance: 0.02,
            odometry_distance: 0.05,
            loop_skip: 5,
            pair_fitness: 0.3,
            tsdf_voxel_size: 0.01,
            sdf_trunc: 0.04,
            depth_scale: 1000.0,
            depth_trunc: 3.0,
            seed: 0,
            workers: 0,
        }
    }
}

const FORMAT: &str = "config";

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let lengths = [
            ("voxel_size", self.voxel_size),
            ("normal_radius", self.normal_radius),
            ("fpfh_radius", self.fpfh_radius),
            ("ransac_distance", self.ransac_distance),
            ("icp_distance", self.icp_distance),
            ("odometry_distance", self.odometry_distance),
            ("tsdf_voxel_size", self.tsdf_voxel_size),
            ("sdf_trunc", self.sdf_trunc),
            ("depth_scale", self.depth_scale),
            ("depth_trunc", self.depth_trunc),
        ];
        for (name, v) in lengths {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        let counts = [
            ("normal_max_nn", self.normal_max_nn),
            ("fpfh_max_nn", self.fpfh_max_nn),
            ("ransac_max_iteration", self.ransac_max_iteration),
            ("ransac_max_validation", self.ransac_max_validation),
            ("loop_skip", self.loop_skip),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be at least 1")));
            }
        }
        if self.fragment_size < 2 {
            return Err(Error::invalid(format!("fragment_size must be at least 2, got {}", self.fragment_size)));
        }
        if self.ransac_n < 3 {
            return Err(Error::invalid(format!("ransac_n must be at least 3, got {}", self.ransac_n)));
        }
        if !(self.edge_similarity > 0.0 && self.edge_similarity <= 1.0) {
            return Err(Error::invalid("edge_similarity must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.pair_fitness) {
            return Err(Error::invalid("pair_fitness must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Names of every settable field.
    pub fn keys() -> Vec<String> {
        match serde_json::to_value(Self::default()) {
            Ok(Value::Object(map)) => map.keys().cloned().collect(),
            _ => unreachable!("config serializes to an object"),
        }
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let Value::Object(mut map) = serde_json::to_value(&*self).map_err(|e| Error::invalid(e.to_string()))? else {
            unreachable!("config serializes to an object")
        };
        let slot = map
            .get_mut(key)
            .ok_or_else(|| Error::invalid(format!("unknown config key {key:?}")))?;
        *slot = parse_value(slot, value).ok_or_else(|| Error::invalid(format!("invalid value {value:?} for {key}")))?;
        *self = serde_json::from_value(Value::Object(map)).map_err(|e| Error::invalid(format!("{key}: {e}")))?;
        Ok(())
    }

    /// Applies a `key = value` file (`#` starts a comment) on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = Location::Line(i + 1);
            let (key, value) = line.split_once('=').ok_or_else(|| parse(at, "expected 'key = value'"))?;
            self.set(key.trim(), value.trim()).map_err(|e| parse(at, e.to_string()))?;
        }
        Ok(())
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::default();
        config.apply_text(&text)?;
        config.validate()?;
        Ok(config)
    }
}

fn parse(location: Location, message: impl Into<String>) -> Error {
    Error::Parse {
        format: FORMAT,
        location,
        message: message.into(),
    }
}

fn parse_value(current: &Value, text: &str) -> Option<Value> {
    if current.is_u64() {
        text.parse::<u64>().ok().map(|v| Value::Number(v.into()))
    } else {
        text.parse::<f64>().ok().and_then(Number::from_f64).map(Value::Number)
    }
}
