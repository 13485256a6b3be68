//! Parameter layout: names, shapes, initializers and weight-decay membership.

use crate::attributes::monomials;
use crate::config::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    Uniform {
        fan_in: usize,
    },
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
    /// Decoupled weight decay applies (temporal convolution weights only).
    pub decay: bool,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Positions of each layer's parameters in the flat parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerIndex {
    pub kernel_w: usize,
    pub conv_b: usize,
    pub norm_g: usize,
    pub norm_b: usize,
    pub mlp_in_w: usize,
    pub mlp_in_b: usize,
    pub mlp_out_w: usize,
    pub mlp_out_b: usize,
    pub scale: Option<usize>,
    pub temporal1_w: usize,
    pub temporal1_b: usize,
    pub temporal2_w: usize,
    pub temporal2_b: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamIndex {
    pub embed_w: usize,
    pub embed_b: usize,
    pub basis_w: usize,
    pub layers: Vec<LayerIndex>,
    pub head_w: usize,
    pub head_b: usize,
}

struct Builder {
    specs: Vec<ParamSpec>,
}

impl Builder {
    fn add(&mut self, name: String, shape: &[usize], init: Init, decay: bool) -> usize {
        self.specs.push(ParamSpec {
            name,
            shape: shape.to_vec(),
            init,
            decay,
        });
        self.specs.len() - 1
    }

    fn weight(&mut self, name: String, shape: &[usize], fan_in: usize) -> usize {
        self.add(name, shape, Init::Uniform { fan_in }, false)
    }

    fn zeros(&mut self, name: String, len: usize) -> usize {
        self.add(name, &[len], Init::Constant(0.0), false)
    }
}

/// Number of polynomial features fed to the shared kernel basis.
pub fn basis_input_dim(cfg: &ModelConfig) -> usize {
    monomials(cfg.attribute_dim(), cfg.poly_degree).len()
}

pub fn layout(cfg: &ModelConfig) -> (Vec<ParamSpec>, ParamIndex) {
    let h = cfg.hidden_dim;
    let wide = h * cfg.widening_factor;
    let k = cfg.temporal_kernel;
    let din = cfg.input_dim();
    let p = basis_input_dim(cfg);
    let mut b = Builder { specs: Vec::new() };

    let embed_w = b.weight("embed.weight".into(), &[din, h], din);
    let embed_b = b.zeros("embed.bias".into(), h);
    // The constant monomial plays the role of a bias.
    let basis_w = b.weight("basis.weight".into(), &[p, cfg.basis_dim], p);
    let mut layers = Vec::with_capacity(cfg.num_layers);
    for l in 0..cfg.num_layers {
        let n = |s: &str| format!("layers.{l}.{s}");
        let kernel_w = b.weight(n("kernel.weight"), &[cfg.basis_dim, h], cfg.basis_dim);
        let conv_b = b.zeros(n("conv.bias"), h);
        let norm_g = b.add(n("norm.gamma"), &[h], Init::Constant(1.0), false);
        let norm_b = b.zeros(n("norm.beta"), h);
        let mlp_in_w = b.weight(n("mlp_in.weight"), &[h, wide], h);
        let mlp_in_b = b.zeros(n("mlp_in.bias"), wide);
        let mlp_out_w = b.weight(n("mlp_out.weight"), &[wide, h], wide);
        let mlp_out_b = b.zeros(n("mlp_out.bias"), h);
        let scale = (cfg.layer_scale > 0.0).then(|| {
            b.add(
                n("layer_scale"),
                &[h],
                Init::Constant(cfg.layer_scale),
                false,
            )
        });
        let temporal1_w = b.add(
            n("temporal1.weight"),
            &[k, h, h],
            Init::Uniform { fan_in: k * h },
            true,
        );
        let temporal1_b = b.zeros(n("temporal1.bias"), h);
        let temporal2_w = b.add(
            n("temporal2.weight"),
            &[k, h, h],
            Init::Uniform { fan_in: k * h },
            true,
        );
        let temporal2_b = b.zeros(n("temporal2.bias"), h);
        layers.push(LayerIndex {
            kernel_w,
            conv_b,
            norm_g,
            norm_b,
            mlp_in_w,
            mlp_in_b,
            mlp_out_w,
            mlp_out_b,
            scale,
            temporal1_w,
            temporal1_b,
            temporal2_w,
            temporal2_b,
        });
    }
    let head_w = b.weight("head.weight".into(), &[h, cfg.num_classes], h);
    let head_b = b.zeros("head.bias".into(), cfg.num_classes);
    let index = ParamIndex {
        embed_w,
        embed_b,
        basis_w,
        layers,
        head_w,
        head_b,
    };
    (b.specs, index)
}

pub fn param_count(cfg: &ModelConfig) -> usize {
    layout(cfg).0.iter().map(ParamSpec::len).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Variant;

    /// Closed-form count, written out independently of `layout`.
    fn formula(
        din: usize,
        attr: usize,
        h: usize,
        w: usize,
        k: usize,
        basis: usize,
        layers: usize,
        classes: usize,
    ) -> usize {
        let embed = din * h + h;
        let basis_in = attr + 1;
        let shared = basis_in * basis;
        let per_layer =
            basis * h + h + 2 * h + (h * w * h + w * h) + (w * h * h + h) + 2 * (k * h * h + h);
        let head = h * classes + classes;
        embed + shared + layers * per_layer + head
    }

    #[test]
    fn default_count_matches_formula() {
        let cfg = ModelConfig::default();
        assert_eq!(param_count(&cfg), formula(27, 1, 64, 4, 9, 128, 6, 200));
        assert_eq!(param_count(&cfg), 707_016);
        let base = ModelConfig {
            variant: Variant::Baseline,
            ..cfg
        };
        assert_eq!(param_count(&base), 707_144);
    }

    #[test]
    fn decay_only_on_temporal_weights() {
        let (specs, _) = layout(&ModelConfig::default());
        for s in &specs {
            assert_eq!(
                s.decay,
                s.name.contains("temporal") && s.name.ends_with("weight"),
                "{}",
                s.name
            );
        }
        assert_eq!(specs.iter().filter(|s| s.decay).count(), 12);
    }

    #[test]
    fn names_unique() {
        let cfg = ModelConfig {
            layer_scale: 1e-6,
            ..Default::default()
        };
        let (specs, _) = layout(&cfg);
        let mut names: Vec<_> = specs.iter().map(|s| &s.name).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), specs.len());
        assert_eq!(param_count(&cfg), 707_016 + 6 * 64);
    }
}
