use serde::{Deserialize, Serialize};

use geomsign_core::graph::NUM_NODES;

use crate::error::{ModelError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Kernels see pairwise distances (or orientation-relative coordinates).
    Invariant,
    /// Kernels see raw planar displacements.
    Baseline,
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "invariant" => Ok(Self::Invariant),
            "baseline" => Ok(Self::Baseline),
            _ => Err(format!(
                "unknown variant {s:?} (expected invariant|baseline)"
            )),
        }
    }
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Invariant => "invariant",
            Self::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputFeatureMode {
    NodeIdOnly,
    NodeIdPlusDepth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub temporal_kernel: usize,
    pub basis_dim: usize,
    pub poly_degree: usize,
    pub widening_factor: usize,
    /// Initial per-channel residual scale; 0 disables the scale parameter.
    pub layer_scale: f64,
    pub num_orientations: usize,
    pub num_classes: usize,
    pub num_nodes: usize,
    pub input_feature_mode: InputFeatureMode,
    pub variant: Variant,
    /// Multiplier applied to image-plane positions before pair attributes.
    pub position_scale: f64,
    pub norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            num_layers: 6,
            temporal_kernel: 9,
            basis_dim: 128,
            poly_degree: 1,
            widening_factor: 4,
            layer_scale: 0.0,
            num_orientations: 1,
            num_classes: 200,
            num_nodes: NUM_NODES,
            input_feature_mode: InputFeatureMode::NodeIdOnly,
            variant: Variant::Invariant,
            position_scale: 10.0,
            norm_eps: 1e-6,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let extents = [
            ("hidden_dim", self.hidden_dim),
            ("num_layers", self.num_layers),
            ("temporal_kernel", self.temporal_kernel),
            ("basis_dim", self.basis_dim),
            ("poly_degree", self.poly_degree),
            ("widening_factor", self.widening_factor),
            ("num_orientations", self.num_orientations),
            ("num_classes", self.num_classes),
            ("num_nodes", self.num_nodes),
        ];
        if let Some((name, _)) = extents.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::InvalidConfig(format!(
                "{name} must be positive"
            )));
        }
        if self.temporal_kernel % 2 == 0 {
            return Err(ModelError::InvalidConfig(format!(
                "temporal_kernel must be odd, got {}",
                self.temporal_kernel
            )));
        }
        for (name, v) in [
            ("layer_scale", self.layer_scale),
            ("position_scale", self.position_scale),
            ("norm_eps", self.norm_eps),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(ModelError::InvalidConfig(format!(
                    "{name} must be finite and >= 0"
                )));
            }
        }
        if self.position_scale == 0.0 || self.norm_eps == 0.0 {
            return Err(ModelError::InvalidConfig(
                "position_scale and norm_eps must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        match self.input_feature_mode {
            InputFeatureMode::NodeIdOnly => self.num_nodes,
            InputFeatureMode::NodeIdPlusDepth => self.num_nodes + 1,
        }
    }

    /// Components of one pair attribute before polynomial embedding.
    pub fn attribute_dim(&self) -> usize {
        match (self.variant, self.num_orientations) {
            (Variant::Baseline, _) => 2,
            (Variant::Invariant, 1) => 1,
            (Variant::Invariant, _) => 3,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(
            (c.hidden_dim, c.num_layers, c.basis_dim, c.num_classes),
            (64, 6, 128, 200)
        );
    }

    #[test]
    fn rejects_even_kernel_and_zero_extent() {
        let c = ModelConfig {
            temporal_kernel: 8,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = ModelConfig {
            hidden_dim: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn partial_json_takes_defaults() {
        let c: ModelConfig =
            serde_json::from_str(r#"{"hidden_dim": 8, "variant": "baseline"}"#).unwrap();
        assert_eq!(c.hidden_dim, 8);
        assert_eq!(c.variant, Variant::Baseline);
        assert_eq!(c.num_layers, 6);
    }
}
