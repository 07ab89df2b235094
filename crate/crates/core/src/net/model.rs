use std::fmt;

use crate::data::Image;
use crate::tensor::{Bound, Graph, ParamStore, Tensor, TensorError};

use super::backbone::Backbone;
use super::blocks::{SielModule, SiflBlock};
use super::classifier::ClassifierHead;

#[derive(Debug)]
pub enum NetError {
    Tensor(TensorError),
    BadConfig(String),
    NumClasses(usize),
}

impl fmt::Display for NetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Tensor(e) => write!(f, "tensor error: {e}"),
            Self::BadConfig(msg) => write!(f, "bad network config: {msg}"),
            Self::NumClasses(k) => write!(f, "classifier needs >= 2 classes, got {k}"),
        }
    }
}

impl std::error::Error for NetError {}

impl From<TensorError> for NetError {
    fn from(e: TensorError) -> Self {
        Self::Tensor(e)
    }
}

/// Architecture parameters. The defaults give a 3x96x96 input a 32x12x12
/// feature map.
#[derive(Debug, Clone)]
pub struct NetConfig {
    pub input_size: usize,
    /// Width of the soft color-bank stem (a pointwise conv + sigmoid whose
    /// units respond to seeded random color directions). The stem plays the
    /// role of a pretrained extractor: its pooled responses behave like a
    /// soft color histogram, so descriptors are discriminative from the
    /// first forward pass.
    pub stem_channels: usize,
    /// Sharpness of the stem's sigmoid bins.
    pub stem_sharpness: f64,
    pub stage_channels: [usize; 3],
    /// Channel expansion of the two cascaded linear layers in the refinement
    /// block (C -> expansion*C -> C).
    pub cwr_expansion: usize,
    /// Channel squeeze ratio of the SE path (C -> C/ratio -> C).
    pub se_reduction: usize,
    /// Multiplier on the backbone's uniform init bound. Gains above 1 push
    /// stage activations into the curved region of SiLU, which makes pooled
    /// channel statistics behave like soft histograms instead of plain means.
    pub backbone_gain: f64,
    pub norm_eps: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            input_size: 96,
            stem_channels: 16,
            stem_sharpness: 6.0,
            stage_channels: [12, 24, 32],
            cwr_expansion: 2,
            se_reduction: 4,
            backbone_gain: 2.5,
            norm_eps: 1e-5,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        if self.input_size % 8 != 0 || self.input_size < 16 {
            return Err(NetError::BadConfig(format!(
                "input_size must be a multiple of 8 and >= 16, got {}",
                self.input_size
            )));
        }
        if self.stage_channels.iter().any(|&c| c == 0) || self.stem_channels == 0 {
            return Err(NetError::BadConfig("stage and stem channels must be nonzero".into()));
        }
        let c = self.stage_channels[2];
        if self.cwr_expansion == 0 || self.se_reduction == 0 || c / self.se_reduction == 0 {
            return Err(NetError::BadConfig(
                "cwr_expansion and se_reduction must be >= 1 and leave >= 1 channel".into(),
            ));
        }
        Ok(())
    }

    pub fn feature_channels(&self) -> usize {
        self.stage_channels[2]
    }

    pub fn feature_size(&self) -> usize {
        self.input_size / 8
    }
}

/// Everything one image's forward pass produces.
pub struct CdisOutputs {
    /// Backbone feature map (C,H,W).
    pub feature_map: Tensor,
    /// Global average of the backbone map (C).
    pub pooled: Tensor,
    /// Structural block output (C,L).
    pub sifl_out: Tensor,
    /// Spatially enhanced maps (C,H,W), exactly the input extents.
    pub siel_h: Tensor,
    pub siel_w: Tensor,
    /// Per-branch classifier logits, when a classifier is configured.
    pub class_logits: Option<[Tensor; 3]>,
}

/// The invariance sub-network. Parameters live in a [`ParamStore`]; a forward
/// pass binds them into a caller-provided graph.
pub struct CdisModel {
    pub config: NetConfig,
    pub store: ParamStore,
    pub seed: u64,
    backbone: Backbone,
    sifl: SiflBlock,
    siel: SielModule,
    classifier: Option<ClassifierHead>,
}

impl CdisModel {
    pub fn new(config: NetConfig, num_classes: Option<usize>, seed: u64) -> Result<Self, NetError> {
        config.validate()?;
        if let Some(k) = num_classes {
            if k < 2 {
                return Err(NetError::NumClasses(k));
            }
        }
        let mut store = ParamStore::new();
        let mut rng = crate::rng::component_rng(seed, "model-init");
        let backbone = Backbone::new(&mut store, &config, &mut rng);
        let c = config.feature_channels();
        let sifl = SiflBlock::new(&mut store, c, config.cwr_expansion, config.se_reduction, &mut rng);
        let siel = SielModule::new(&mut store, &mut rng);
        let classifier = num_classes
            .map(|k| ClassifierHead::new(&mut store, c, k, &mut rng));
        Ok(CdisModel {
            config,
            store,
            seed,
            backbone,
            sifl,
            siel,
            classifier,
        })
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.classifier.as_ref().map(ClassifierHead::num_classes)
    }

    pub(crate) fn sifl(&self) -> &SiflBlock {
        &self.sifl
    }

    pub(crate) fn siel(&self) -> &SielModule {
        &self.siel
    }

    pub(crate) fn classifier(&self) -> Option<&ClassifierHead> {
        self.classifier.as_ref()
    }

    /// Replace the classifier head (used when a checkpoint trained with one
    /// class count continues on a split with another).
    pub fn reset_classifier(&mut self, num_classes: Option<usize>) -> Result<(), NetError> {
        if let Some(k) = num_classes {
            if k < 2 {
                return Err(NetError::NumClasses(k));
            }
        }
        let mut rng = crate::rng::component_rng(self.seed, "classifier-reset");
        self.classifier = num_classes.map(|k| {
            ClassifierHead::with_prefix(
                &mut self.store,
                &format!("classifier{k}"),
                self.config.feature_channels(),
                k,
                &mut rng,
            )
        });
        Ok(())
    }

    /// Full forward pass for one `[3,S,S]` image tensor.
    pub fn forward(
        &self,
        g: &Graph,
        bound: &Bound,
        image: &Tensor,
    ) -> Result<CdisOutputs, NetError> {
        let s = self.config.input_size;
        if image.shape() != [3, s, s] {
            return Err(NetError::BadConfig(format!(
                "image shape {:?} does not match configured [3,{s},{s}]",
                image.shape()
            )));
        }
        let eps = self.config.norm_eps;
        let fmap = self.backbone.forward(g, bound, image, eps)?;
        let pooled = g.global_avg_pool(&fmap)?;
        let seq = g.flatten_spatial(&fmap)?;
        let sifl_out = self.sifl.forward(g, bound, &seq, eps)?;
        let (siel_h, siel_w) = self.siel.forward(g, bound, &fmap)?;
        let class_logits = match &self.classifier {
            Some(head) => {
                let ph = g.global_avg_pool(&siel_h)?;
                let pw = g.global_avg_pool(&siel_w)?;
                Some([
                    head.forward(g, bound, 0, &pooled, eps)?,
                    head.forward(g, bound, 1, &ph, eps)?,
                    head.forward(g, bound, 2, &pw, eps)?,
                ])
            }
            None => None,
        };
        Ok(CdisOutputs {
            feature_map: fmap,
            pooled,
            sifl_out,
            siel_h,
            siel_w,
            class_logits,
        })
    }

    /// Raw retrieval descriptor: each pooled branch (backbone map, structural
    /// output, both spatially enhanced maps) standardized across its channels
    /// and concatenated. Not yet unit-norm; see [`CdisModel::embedding`].
    pub fn raw_descriptor(&self, g: &Graph, out: &CdisOutputs) -> Result<Tensor, NetError> {
        let c = self.config.feature_channels();
        let ones = g.constant(vec![1.0; c], &[c])?;
        let zeros = g.constant(vec![0.0; c], &[c])?;
        let std = |g: &Graph, v: &Tensor| g.layer_norm(v, &ones, &zeros, self.config.norm_eps);
        let sifl_pooled = g.pool_axis(&out.sifl_out, 1, crate::tensor::PoolMode::Avg)?;
        let ph = g.global_avg_pool(&out.siel_h)?;
        let pw = g.global_avg_pool(&out.siel_w)?;
        Ok(g.concat(
            &[
                &std(g, &out.pooled)?,
                &std(g, &sifl_pooled)?,
                &std(g, &ph)?,
                &std(g, &pw)?,
            ],
            0,
        )?)
    }

    /// Unit-norm retrieval descriptor. `center`, when given, is subtracted
    /// before normalization; extraction over a set computes it as the set
    /// mean of raw descriptors. Centering removes the direction every image
    /// shares, without which cosine distances between descriptors collapse
    /// toward zero.
    pub fn embedding_centered(
        &self,
        g: &Graph,
        out: &CdisOutputs,
        center: Option<&[f64]>,
    ) -> Result<Tensor, NetError> {
        let raw = self.raw_descriptor(g, out)?;
        let shifted = match center {
            Some(mu) => {
                let c = g.constant(mu.to_vec(), &[raw.shape()[0]])?;
                g.sub(&raw, &c)?
            }
            None => raw,
        };
        Ok(g.l2_normalize(&shifted, 1e-12)?)
    }

    /// Uncentered unit-norm descriptor of one forward pass.
    pub fn embedding(&self, g: &Graph, out: &CdisOutputs) -> Result<Tensor, NetError> {
        self.embedding_centered(g, out, None)
    }

    /// Raw descriptor of a single image under frozen parameters.
    pub fn raw_descriptor_image(&self, image: &Image) -> Result<Vec<f64>, NetError> {
        let g = Graph::new();
        let bound = self.store.bind_frozen(&g)?;
        let x = g.input(image.data.clone(), &image.shape(), false)?;
        let out = self.forward(&g, &bound, &x)?;
        let raw = self.raw_descriptor(&g, &out)?;
        Ok(g.data(&raw))
    }

    pub fn embed_dim(&self) -> usize {
        4 * self.config.feature_channels()
    }

    /// Frozen single-image embedding (no gradients recorded).
    pub fn embed_image(&self, image: &Image) -> Result<Vec<f64>, NetError> {
        let g = Graph::new();
        let bound = self.store.bind_frozen(&g)?;
        let x = g.input(image.data.clone(), &image.shape(), false)?;
        let out = self.forward(&g, &bound, &x)?;
        let emb = self.embedding(&g, &out)?;
        Ok(g.data(&emb))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::loss::{loss_l1, LossWeights};
    use crate::rng::component_rng;
    use rand::Rng;

    fn tiny_config() -> NetConfig {
        NetConfig {
            input_size: 16,
            stage_channels: [4, 6, 8],
            ..NetConfig::default()
        }
    }

    #[test]
    fn default_config_maps_96_to_32x12x12() {
        let model = CdisModel::new(NetConfig::default(), None, 0).unwrap();
        let g = Graph::new();
        let bound = model.store.bind_frozen(&g).unwrap();
        let x = g.input(vec![0.1; 3 * 96 * 96], &[3, 96, 96], false).unwrap();
        let out = model.forward(&g, &bound, &x).unwrap();
        assert_eq!(out.feature_map.shape(), &[32, 12, 12]);
        assert_eq!(out.sifl_out.shape(), &[32, 144]);
        assert_eq!(out.siel_h.shape(), &[32, 12, 12]);
        assert_eq!(out.siel_w.shape(), &[32, 12, 12]);
    }

    #[test]
    fn zero_image_gives_zero_feature_map() {
        let model = CdisModel::new(tiny_config(), None, 3).unwrap();
        let g = Graph::new();
        let bound = model.store.bind_frozen(&g).unwrap();
        let x = g.input(vec![0.0; 3 * 16 * 16], &[3, 16, 16], false).unwrap();
        let out = model.forward(&g, &bound, &x).unwrap();
        assert!(g.data(&out.feature_map).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn fixed_seed_and_image_are_bit_identical_across_runs() {
        let run = || {
            let model = CdisModel::new(tiny_config(), Some(3), 77).unwrap();
            let mut rng = component_rng(9, "img");
            let img: Vec<f64> = (0..3 * 16 * 16).map(|_| rng.gen_range(0.0..1.0)).collect();
            let g = Graph::new();
            let bound = model.store.bind_frozen(&g).unwrap();
            let x = g.input(img, &[3, 16, 16], false).unwrap();
            let out = model.forward(&g, &bound, &x).unwrap();
            g.data(&out.feature_map)
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_wrong_image_shape_and_tiny_class_count() {
        let model = CdisModel::new(tiny_config(), None, 0).unwrap();
        let g = Graph::new();
        let bound = model.store.bind_frozen(&g).unwrap();
        let x = g.input(vec![0.0; 3 * 8 * 8], &[3, 8, 8], false).unwrap();
        assert!(model.forward(&g, &bound, &x).is_err());
        assert!(matches!(
            CdisModel::new(tiny_config(), Some(1), 0),
            Err(NetError::NumClasses(1))
        ));
    }

    #[test]
    fn classifier_forced_toward_class_zero_wins_argmax() {
        let mut model = CdisModel::new(tiny_config(), Some(2), 5).unwrap();
        // force the final projection of branch 0 to favor class 0
        let c = model.config.feature_channels();
        let mut w2 = vec![0.0; 2 * c];
        for v in w2.iter_mut().take(c) {
            *v = 1.0;
        }
        model.store.set_value("classifier.branch0.fc2.weight", w2);
        model.store.set_value("classifier.branch0.fc2.bias", vec![5.0, -5.0]);
        let g = Graph::new();
        let bound = model.store.bind_frozen(&g).unwrap();
        let mut rng = component_rng(11, "cls");
        let feat: Vec<f64> = (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = g.input(feat, &[c], false).unwrap();
        let logits = model
            .classifier()
            .unwrap()
            .forward(&g, &bound, 0, &f, 1e-5)
            .unwrap();
        assert_eq!(logits.shape(), &[2]);
        let d = g.data(&logits);
        assert!(d[0] > d[1]);
    }

    fn synthetic_outputs(
        g: &Graph,
        seq: Vec<f64>,
        pooled: Vec<f64>,
        logits: Vec<f64>,
        num_classes: usize,
    ) -> CdisOutputs {
        let c = pooled.len();
        let l = seq.len() / c;
        let mk_logits = |v: &Vec<f64>| g.input(v.clone(), &[num_classes], false).unwrap();
        CdisOutputs {
            feature_map: g.input(vec![0.0; c], &[c, 1, 1], false).unwrap(),
            pooled: g.input(pooled.clone(), &[c], false).unwrap(),
            sifl_out: g.input(seq, &[c, l], false).unwrap(),
            siel_h: g.input(vec![0.0; c], &[c, 1, 1], false).unwrap(),
            siel_w: g.input(vec![0.0; c], &[c, 1, 1], false).unwrap(),
            class_logits: Some([mk_logits(&logits), mk_logits(&logits), mk_logits(&logits)]),
        }
    }

    #[test]
    fn perfect_pair_drives_l1_to_zero() {
        let g = Graph::new();
        // identical features both sides, near-one-hot logits for class 0
        let seq = vec![0.3, -0.2, 0.5, 0.1, 0.9, -0.4];
        let pooled = vec![0.6, -0.8];
        let logits = vec![60.0, 0.0];
        let d = synthetic_outputs(&g, seq.clone(), pooled.clone(), logits.clone(), 2);
        let s = synthetic_outputs(&g, seq, pooled, logits, 2);
        let (_, terms) = loss_l1(&g, &LossWeights::default(), 0.1, &[d], &[s], &[0]).unwrap();
        assert!(terms.mse.abs() < 1e-12);
        assert!(terms.ce.abs() < 1e-9);
        assert!(terms.infonce.abs() < 1e-12, "batch of one has no negatives");
        assert!(terms.total.abs() < 1e-9);
    }

    #[test]
    fn infonce_is_invariant_to_positive_prescaling() {
        let mut rng = component_rng(13, "nce");
        let g = Graph::new();
        let mk_batch = |g: &Graph, scale: f64, rng_vals: &Vec<Vec<f64>>| -> Vec<CdisOutputs> {
            rng_vals
                .iter()
                .map(|v| {
                    let scaled: Vec<f64> = v.iter().map(|x| x * scale).collect();
                    synthetic_outputs(g, vec![0.0; 4], scaled, vec![0.0, 0.0], 2)
                })
                .collect()
        };
        let dv: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let sv: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let labels = [0, 1, 0];
        let d1 = mk_batch(&g, 1.0, &dv);
        let s1 = mk_batch(&g, 1.0, &sv);
        let (_, t1) = loss_l1(&g, &LossWeights::default(), 0.1, &d1, &s1, &labels).unwrap();
        let d2 = mk_batch(&g, 3.7, &dv);
        let s2 = mk_batch(&g, 3.7, &sv);
        let (_, t2) = loss_l1(&g, &LossWeights::default(), 0.1, &d2, &s2, &labels).unwrap();
        assert!(
            (t1.infonce - t2.infonce).abs() < 1e-10,
            "{} vs {}",
            t1.infonce,
            t2.infonce
        );
    }

    #[test]
    fn embedding_is_unit_norm() {
        let model = CdisModel::new(tiny_config(), None, 21).unwrap();
        let mut rng = component_rng(15, "emb");
        let img = crate::data::Image {
            size: 16,
            data: (0..3 * 16 * 16).map(|_| rng.gen_range(0.0..1.0)).collect(),
        };
        let e = model.embed_image(&img).unwrap();
        assert_eq!(e.len(), model.embed_dim());
        let n: f64 = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-9);
    }
}
