use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Bound, Graph, ParamId, ParamStore, Tensor};

use super::model::{NetConfig, NetError};

struct Stage {
    norm: Option<(ParamId, ParamId)>,
    dw_k: ParamId,
    dw_b: ParamId,
    pw_w: ParamId,
    pw_b: ParamId,
}

/// Desk-scale stand-in for a pretrained feature extractor: three stride-2
/// stages of depthwise 3x3 + pointwise mixing with SiLU. Stages after the
/// first are preceded by a whole-map RMS normalization with per-channel
/// affine. Scaling by a single per-image statistic keeps activations bounded
/// without erasing the relative channel responses that identify an image;
/// per-position normalization here would collapse the pooled descriptors of
/// different images onto a common direction.
pub struct Backbone {
    stem_w: ParamId,
    stem_b: ParamId,
    stages: Vec<Stage>,
}

impl Backbone {
    pub fn new(store: &mut ParamStore, config: &NetConfig, rng: &mut ChaCha8Rng) -> Backbone {
        // Soft color bank: unit c fires as sigmoid(k * (a_c . (rgb - 1/2) - t_c))
        // for a seeded random direction a_c and threshold t_c. Folded into a
        // pointwise conv's weights and bias; trainable thereafter.
        let b = config.stem_channels;
        let k = config.stem_sharpness;
        let mut w = Vec::with_capacity(b * 3);
        let mut bias = Vec::with_capacity(b);
        for _ in 0..b {
            let mut a = [0.0f64; 3];
            loop {
                for v in &mut a {
                    *v = rng.gen_range(-1.0..1.0);
                }
                let n = (a.iter().map(|v| v * v).sum::<f64>()).sqrt();
                if n > 1e-3 {
                    for v in &mut a {
                        *v /= n;
                    }
                    break;
                }
            }
            let threshold: f64 = rng.gen_range(-0.3..0.3);
            for v in &a {
                w.push(k * v);
            }
            bias.push(-k * (a.iter().sum::<f64>() * 0.5 + threshold));
        }
        let stem_w = store.add("backbone.stem.weight", &[b, 3], w);
        let stem_b = store.add("backbone.stem.bias", &[b], bias);

        let mut stages = Vec::new();
        let mut c_in = b;
        for (i, &c_out) in config.stage_channels.iter().enumerate() {
            let p = format!("backbone.stage{i}");
            // pre-stage norm over the incoming channels; stage 0 reads raw pixels
            let norm = (i > 0).then(|| {
                (
                    store.add_ones(&format!("{p}.norm.gamma"), &[c_in]),
                    store.add_zeros(&format!("{p}.norm.beta"), &[c_in]),
                )
            });
            stages.push(Stage {
                norm,
                dw_k: store.add_uniform_gain(&format!("{p}.dw.kernel"), &[c_in, 3, 3], 9, config.backbone_gain, rng),
                dw_b: store.add_zeros(&format!("{p}.dw.bias"), &[c_in]),
                pw_w: store.add_uniform_gain(&format!("{p}.pw.weight"), &[c_out, c_in], c_in, config.backbone_gain, rng),
                pw_b: store.add_zeros(&format!("{p}.pw.bias"), &[c_out]),
            });
            c_in = c_out;
        }
        Backbone { stem_w, stem_b, stages }
    }

    pub fn forward(
        &self,
        g: &Graph,
        bound: &Bound,
        image: &Tensor,
        eps: f64,
    ) -> Result<Tensor, NetError> {
        // Color bank, zero-anchored: subtracting the bias-only response keeps
        // the zero image mapping to an exactly zero feature map.
        let stem = g.conv2d_pointwise(image, bound.t(self.stem_w), Some(bound.t(self.stem_b)))?;
        let fired = g.sigmoid(&stem)?;
        let rest = g.scale(&g.sigmoid(bound.t(self.stem_b))?, -1.0)?;
        let mut x = g.add_prefix(&fired, &rest)?;
        for s in &self.stages {
            if let Some((gamma, beta)) = s.norm {
                // y = gamma[c] * x / rms(x) + beta[c], rms over the whole map
                let msq = g.mean_all(&g.mul(&x, &x)?)?;
                let inv_rms = g.powf(&g.add_const(&msq, eps)?, -0.5)?;
                let scaled = g.mul_prefix(&x, &inv_rms)?;
                let weighted = g.mul_prefix(&scaled, bound.t(gamma))?;
                x = g.add_prefix(&weighted, bound.t(beta))?;
            }
            let dw = g.conv2d_depthwise(&x, bound.t(s.dw_k), Some(bound.t(s.dw_b)), 2, 1)?;
            let pw = g.conv2d_pointwise(&dw, bound.t(s.pw_w), Some(bound.t(s.pw_b)))?;
            x = g.silu(&pw)?;
        }
        Ok(x)
    }
}
