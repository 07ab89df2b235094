use rand_chacha::ChaCha8Rng;

use crate::tensor::{Bound, Graph, ParamId, ParamStore, PoolMode, Tensor};

use super::model::NetError;

/// Depthwise-separable 3x3 conv parameters (depthwise kernel + pointwise mix).
struct DwSep {
    dw_k: ParamId,
    dw_b: ParamId,
    pw_w: ParamId,
    pw_b: ParamId,
}

impl DwSep {
    fn new(store: &mut ParamStore, prefix: &str, channels: usize, rng: &mut ChaCha8Rng) -> DwSep {
        DwSep {
            dw_k: store.add_uniform(&format!("{prefix}.dw.kernel"), &[channels, 3, 3], 9, rng),
            dw_b: store.add_zeros(&format!("{prefix}.dw.bias"), &[channels]),
            pw_w: store.add_uniform(&format!("{prefix}.pw.weight"), &[channels, channels], channels, rng),
            pw_b: store.add_zeros(&format!("{prefix}.pw.bias"), &[channels]),
        }
    }

    /// Apply to a `[C,H,W]` map, stride 1, same padding.
    fn apply_map(&self, g: &Graph, bound: &Bound, x: &Tensor) -> Result<Tensor, NetError> {
        let dw = g.conv2d_depthwise(x, bound.t(self.dw_k), Some(bound.t(self.dw_b)), 1, 1)?;
        Ok(g.conv2d_pointwise(&dw, bound.t(self.pw_w), Some(bound.t(self.pw_b)))?)
    }

    /// Apply to a `[C,L]` sequence, treated as a 1 x L spatial map.
    fn apply_seq(&self, g: &Graph, bound: &Bound, x: &Tensor) -> Result<Tensor, NetError> {
        let (c, l) = (x.shape()[0], x.shape()[1]);
        let xm = g.reshape(x, &[c, 1, l])?;
        let y = self.apply_map(g, bound, &xm)?;
        Ok(g.reshape(&y, &[c, l])?)
    }
}

struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

impl Norm {
    fn new(store: &mut ParamStore, prefix: &str, channels: usize) -> Norm {
        Norm {
            gamma: store.add_ones(&format!("{prefix}.gamma"), &[channels]),
            beta: store.add_zeros(&format!("{prefix}.beta"), &[channels]),
        }
    }

    fn apply(&self, g: &Graph, bound: &Bound, x: &Tensor, eps: f64) -> Result<Tensor, NetError> {
        Ok(g.layer_norm(x, bound.t(self.gamma), bound.t(self.beta), eps)?)
    }
}

struct ChannelLinear {
    w: ParamId,
    b: ParamId,
}

impl ChannelLinear {
    fn new(
        store: &mut ParamStore,
        prefix: &str,
        c_out: usize,
        c_in: usize,
        rng: &mut ChaCha8Rng,
    ) -> ChannelLinear {
        ChannelLinear {
            w: store.add_uniform(&format!("{prefix}.weight"), &[c_out, c_in], c_in, rng),
            b: store.add_zeros(&format!("{prefix}.bias"), &[c_out]),
        }
    }

    /// Linear map along the channel axis of a `[C,L]` sequence.
    fn apply_seq(&self, g: &Graph, bound: &Bound, x: &Tensor) -> Result<Tensor, NetError> {
        let xt = g.transpose(x)?;
        let y = g.linear(&xt, bound.t(self.w), Some(bound.t(self.b)))?;
        Ok(g.transpose(&y)?)
    }

    fn apply_vec(&self, g: &Graph, bound: &Bound, x: &Tensor) -> Result<Tensor, NetError> {
        Ok(g.linear(x, bound.t(self.w), Some(bound.t(self.b)))?)
    }
}

/// Structural refinement over flattened `[C,L]` sequences: a local-prior
/// stage with gated channel refinement, then a second local-prior stage with
/// squeeze-and-excitation channel weighting over an MLP path. Both stages
/// keep the input extents.
pub struct SiflBlock {
    // stage 1
    local1: DwSep,
    norm1: Norm,
    cwr_in: ChannelLinear,
    cwr_out: ChannelLinear,
    cwr_pw: ChannelLinear,
    gate_conv: DwSep,
    gate_lin: ChannelLinear,
    norm2: Norm,
    // stage 2
    local2: DwSep,
    norm3: Norm,
    se_down: ChannelLinear,
    se_up: ChannelLinear,
    mlp_in: ChannelLinear,
    mlp_out: ChannelLinear,
}

impl SiflBlock {
    pub fn new(
        store: &mut ParamStore,
        channels: usize,
        expansion: usize,
        se_reduction: usize,
        rng: &mut ChaCha8Rng,
    ) -> SiflBlock {
        let c = channels;
        let e = expansion * c;
        let squeezed = (c / se_reduction).max(1);
        SiflBlock {
            local1: DwSep::new(store, "sifl.s1.local", c, rng),
            norm1: Norm::new(store, "sifl.s1.norm1", c),
            cwr_in: ChannelLinear::new(store, "sifl.s1.cwr.in", e, c, rng),
            cwr_out: ChannelLinear::new(store, "sifl.s1.cwr.out", c, e, rng),
            cwr_pw: ChannelLinear::new(store, "sifl.s1.cwr.pw", c, c, rng),
            gate_conv: DwSep::new(store, "sifl.s1.gate.conv", c, rng),
            gate_lin: ChannelLinear::new(store, "sifl.s1.gate.lin", c, c, rng),
            norm2: Norm::new(store, "sifl.s1.norm2", c),
            local2: DwSep::new(store, "sifl.s2.local", c, rng),
            norm3: Norm::new(store, "sifl.s2.norm", c),
            se_down: ChannelLinear::new(store, "sifl.s2.se.down", squeezed, c, rng),
            se_up: ChannelLinear::new(store, "sifl.s2.se.up", c, squeezed, rng),
            mlp_in: ChannelLinear::new(store, "sifl.s2.mlp.in", e, c, rng),
            mlp_out: ChannelLinear::new(store, "sifl.s2.mlp.out", c, e, rng),
        }
    }

    /// Local structural prior, residual, normalization, then the gated
    /// channel-wise refinement with its own residuals.
    pub fn stage1(
        &self,
        g: &Graph,
        bound: &Bound,
        x: &Tensor,
        eps: f64,
    ) -> Result<Tensor, NetError> {
        let local = self.local1.apply_seq(g, bound, x)?;
        let residual = g.add(&local, x)?;
        let normed = self.norm1.apply(g, bound, &residual, eps)?;
        // channel-wise refinement: two cascaded linears, pointwise mix, gate
        let hidden = g.silu(&self.cwr_in.apply_seq(g, bound, &normed)?)?;
        let projected = self.cwr_out.apply_seq(g, bound, &hidden)?;
        let mixed = self.cwr_pw.apply_seq(g, bound, &projected)?;
        let gate = g.sigmoid(&self.gate_conv.apply_seq(g, bound, &mixed)?)?;
        let lin = self.gate_lin.apply_seq(g, bound, &mixed)?;
        let gated = g.mul(&gate, &lin)?;
        let refined = self.norm2.apply(g, bound, &gated, eps)?;
        Ok(g.add(&g.add(&refined, &local)?, x)?)
    }

    /// Second local-prior stage followed by SE channel weights applied to an
    /// MLP path, plus the stage residuals.
    pub fn stage2(
        &self,
        g: &Graph,
        bound: &Bound,
        x: &Tensor,
        eps: f64,
    ) -> Result<Tensor, NetError> {
        let local = self.local2.apply_seq(g, bound, x)?;
        let residual = g.add(&local, x)?;
        let normed = self.norm3.apply(g, bound, &residual, eps)?;
        // squeeze-and-excitation channel weights
        let pooled = g.pool_axis(&normed, 1, PoolMode::Avg)?;
        let squeezed = g.silu(&self.se_down.apply_vec(g, bound, &pooled)?)?;
        let weights = g.sigmoid(&self.se_up.apply_vec(g, bound, &squeezed)?)?;
        // per-position MLP path
        let hidden = g.silu(&self.mlp_in.apply_seq(g, bound, &normed)?)?;
        let mlp = self.mlp_out.apply_seq(g, bound, &hidden)?;
        let weighted = g.mul_prefix(&mlp, &weights)?;
        Ok(g.add(&g.add(&weighted, &local)?, x)?)
    }

    pub fn forward(
        &self,
        g: &Graph,
        bound: &Bound,
        x: &Tensor,
        eps: f64,
    ) -> Result<Tensor, NetError> {
        let s1 = self.stage1(g, bound, x, eps)?;
        self.stage2(g, bound, &s1, eps)
    }
}

/// Dual-path spatial attention. The input map is permuted along
/// channel-height and channel-width, max+avg pooled over the leftover axis,
/// passed through a shared depthwise-separable conv and a 1x1 reduction, and
/// the two paths are summed crosswise before the sigmoid. The attention then
/// scales the input, restored to its original extents. Requires square maps.
pub struct SielModule {
    conv: DwSep2,
    reduce_w: ParamId,
    reduce_b: ParamId,
}

/// Same structure as [`DwSep`] but fixed at 2 channels (the pooled stack).
struct DwSep2 {
    dw_k: ParamId,
    dw_b: ParamId,
    pw_w: ParamId,
    pw_b: ParamId,
}

impl SielModule {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng) -> SielModule {
        SielModule {
            conv: DwSep2 {
                dw_k: store.add_uniform("siel.conv.dw.kernel", &[2, 3, 3], 9, rng),
                dw_b: store.add_zeros("siel.conv.dw.bias", &[2]),
                pw_w: store.add_uniform("siel.conv.pw.weight", &[2, 2], 2, rng),
                pw_b: store.add_zeros("siel.conv.pw.bias", &[2]),
            },
            reduce_w: store.add_uniform("siel.reduce.weight", &[1, 2], 2, rng),
            reduce_b: store.add_zeros("siel.reduce.bias", &[1]),
        }
    }

    /// Pool a permuted map over `axis`, stacking max and avg results on a new
    /// leading axis of size 2, in the layout `[2, a, b]` given by `transpose`.
    fn pooled_stack(
        &self,
        g: &Graph,
        x: &Tensor,
        axis: usize,
        transpose: bool,
    ) -> Result<Tensor, NetError> {
        let mx = g.pool_axis(x, axis, PoolMode::Max)?;
        let av = g.pool_axis(x, axis, PoolMode::Avg)?;
        let (mx, av) = if transpose {
            (g.transpose(&mx)?, g.transpose(&av)?)
        } else {
            (mx, av)
        };
        let shape = [1, mx.shape()[0], mx.shape()[1]];
        let mx = g.reshape(&mx, &shape)?;
        let av = g.reshape(&av, &shape)?;
        Ok(g.concat(&[&mx, &av], 0)?)
    }

    fn attention_path(&self, g: &Graph, bound: &Bound, stack: &Tensor) -> Result<Tensor, NetError> {
        let dw = g.conv2d_depthwise(stack, bound.t(self.conv.dw_k), Some(bound.t(self.conv.dw_b)), 1, 1)?;
        let pw = g.conv2d_pointwise(&dw, bound.t(self.conv.pw_w), Some(bound.t(self.conv.pw_b)))?;
        let red = g.conv2d_pointwise(&pw, bound.t(self.reduce_w), Some(bound.t(self.reduce_b)))?;
        let shape = [red.shape()[1], red.shape()[2]];
        Ok(g.reshape(&red, &shape)?)
    }

    pub fn forward(
        &self,
        g: &Graph,
        bound: &Bound,
        x: &Tensor,
    ) -> Result<(Tensor, Tensor), NetError> {
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        if h != w {
            return Err(NetError::BadConfig(format!(
                "spatial attention requires square maps, got {h}x{w}"
            )));
        }
        // channel-height path: permute to (H,C,W), pool away W, lay out as (C,H)
        let f_hu = g.permute(x, &[1, 0, 2])?;
        let stack_h = self.pooled_stack(g, &f_hu, 2, true)?; // (2,C,H)
        // channel-width path: permute to (W,H,C), pool away H, lay out as (W,C)
        let f_wu = g.permute(x, &[2, 1, 0])?;
        let stack_w = self.pooled_stack(g, &f_wu, 1, false)?; // (2,W,C)

        let a_h = self.attention_path(g, bound, &stack_h)?; // (C,H)
        let a_w = self.attention_path(g, bound, &stack_w)?; // (W,C)

        // crosswise sum; relies on H == W
        let att_h = g.sigmoid(&g.add(&a_h, &g.transpose(&a_w)?)?)?; // (C,H)
        let att_w = g.sigmoid(&g.add(&a_w, &g.transpose(&a_h)?)?)?; // (W,C)

        // scale the features and restore (C,H,W)
        let siel_h = g.mul_prefix(x, &att_h)?;
        let x_cwh = g.permute(x, &[0, 2, 1])?;
        let siel_w_p = g.mul_prefix(&x_cwh, &g.transpose(&att_w)?)?;
        let siel_w = g.permute(&siel_w_p, &[0, 2, 1])?;
        debug_assert_eq!(siel_h.shape(), &[c, h, w]);
        Ok((siel_h, siel_w))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::model::{CdisModel, NetConfig};
    use crate::rng::component_rng;
    use crate::tensor::{finite_diff_check, Graph, TensorError};
    use rand::Rng;

    fn small_model() -> CdisModel {
        let config = NetConfig {
            input_size: 16,
            stage_channels: [4, 6, 8],
            ..NetConfig::default()
        };
        CdisModel::new(config, Some(4), 42).unwrap()
    }

    #[test]
    fn stage1_zero_input_with_zero_biases_is_zero() {
        let model = small_model();
        let g = Graph::new();
        let bound = model.store.bind_frozen(&g).unwrap();
        let x = g.input(vec![0.0; 8 * 16], &[8, 16], false).unwrap();
        let y = model.sifl().stage1(&g, &bound, &x, 1e-5).unwrap();
        assert_eq!(y.shape(), &[8, 16]);
        assert!(g.data(&y).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn stage2_zero_input_is_zero_despite_half_gates() {
        let model = small_model();
        let g = Graph::new();
        let bound = model.store.bind_frozen(&g).unwrap();
        let x = g.input(vec![0.0; 8 * 16], &[8, 16], false).unwrap();
        let y = model.sifl().stage2(&g, &bound, &x, 1e-5).unwrap();
        assert!(g.data(&y).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn stages_preserve_shape_for_random_input() {
        let model = small_model();
        let mut rng = component_rng(1, "shape");
        let g = Graph::new();
        let bound = model.store.bind_frozen(&g).unwrap();
        let xv: Vec<f64> = (0..8 * 16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = g.input(xv, &[8, 16], false).unwrap();
        let y = model.sifl().forward(&g, &bound, &x, 1e-5).unwrap();
        assert_eq!(y.shape(), &[8, 16]);
    }

    #[test]
    fn se_squeeze_of_constant_map_gives_equal_channel_weights() {
        // A constant map pools to a constant vector; with channel-symmetric
        // SE weights the resulting channel weights must all be equal.
        let mut model = small_model();
        let sym = |store: &mut crate::tensor::ParamStore, name: &str| {
            let p = store.by_name(name).unwrap();
            let (rows, cols) = (p.shape[0], p.shape[1]);
            let mut v = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                for c in 0..cols {
                    v.push(0.1 + 0.01 * c as f64); // identical rows
                }
            }
            store.set_value(name, v);
        };
        sym(&mut model.store, "sifl.s2.se.down.weight");
        sym(&mut model.store, "sifl.s2.se.up.weight");
        let g = Graph::new();
        let bound = model.store.bind_frozen(&g).unwrap();
        let x = g.input(vec![0.37; 8 * 16], &[8, 16], false).unwrap();
        let normed = x.clone();
        // reproduce the SE path on its own
        let pooled = g.pool_axis(&normed, 1, PoolMode::Avg).unwrap();
        let d = g.data(&pooled);
        assert!(d.iter().all(|v| (v - d[0]).abs() < 1e-12));
        let sifl = model.sifl();
        let squeezed = g.silu(&sifl.se_down.apply_vec(&g, &bound, &pooled).unwrap()).unwrap();
        let weights = g.sigmoid(&sifl.se_up.apply_vec(&g, &bound, &squeezed).unwrap()).unwrap();
        let wv = g.data(&weights);
        assert!(wv.iter().all(|v| (v - wv[0]).abs() < 1e-12), "{wv:?}");
    }

    #[test]
    fn siel_zero_input_gives_zero_output_and_exact_shapes() {
        let model = small_model();
        let g = Graph::new();
        let bound = model.store.bind_frozen(&g).unwrap();
        let x = g.input(vec![0.0; 8 * 4 * 4], &[8, 4, 4], false).unwrap();
        let (sh, sw) = model.siel().forward(&g, &bound, &x).unwrap();
        assert_eq!(sh.shape(), &[8, 4, 4]);
        assert_eq!(sw.shape(), &[8, 4, 4]);
        assert!(g.data(&sh).iter().all(|v| *v == 0.0));
        assert!(g.data(&sw).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn siel_attention_values_lie_in_unit_interval() {
        let model = small_model();
        let mut rng = component_rng(3, "att");
        let g = Graph::new();
        let bound = model.store.bind_frozen(&g).unwrap();
        let xv: Vec<f64> = (0..8 * 4 * 4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let x = g.input(xv.clone(), &[8, 4, 4], false).unwrap();
        let (sh, _) = model.siel().forward(&g, &bound, &x).unwrap();
        // attention = output / input wherever input is nonzero
        for (o, i) in g.data(&sh).iter().zip(xv.iter()) {
            if i.abs() > 1e-9 {
                let a = o / i;
                assert!(a > 0.0 && a < 1.0, "attention {a} out of (0,1)");
            }
        }
    }

    /// Random sequence whose pooling windows keep a top-2 margin, so the
    /// max-pool subgradient is stable under finite-difference probing.
    fn margin_safe_map(
        rng: &mut rand_chacha::ChaCha8Rng,
        c: usize,
        h: usize,
        w: usize,
    ) -> Vec<f64> {
        'outer: loop {
            let v: Vec<f64> = (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
            // check every pooled window of both permuted layouts
            let at = |ci: usize, y: usize, x: usize| v[(ci * h + y) * w + x];
            for ci in 0..c {
                for y in 0..h {
                    let mut col: Vec<f64> = (0..w).map(|x| at(ci, y, x)).collect();
                    col.sort_by(|a, b| b.partial_cmp(a).unwrap());
                    if col[0] - col[1] < 1e-3 {
                        continue 'outer;
                    }
                }
                for x in 0..w {
                    let mut col: Vec<f64> = (0..h).map(|y| at(ci, y, x)).collect();
                    col.sort_by(|a, b| b.partial_cmp(a).unwrap());
                    if col[0] - col[1] < 1e-3 {
                        continue 'outer;
                    }
                }
            }
            return v;
        }
    }

    #[test]
    fn sifl_stage_gradients_pass_finite_difference_check() {
        let model = small_model();
        let mut rng = component_rng(5, "fd-sifl");
        let readout: Vec<f64> = (0..8 * 16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for trial in 0..3 {
            let xv: Vec<f64> = (0..8 * 16).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let r = readout.clone();
            let report = finite_diff_check(
                &|g: &Graph, x: &crate::tensor::Tensor| -> Result<crate::tensor::Tensor, TensorError> {
                    let bound = model.store.bind_frozen(g)?;
                    let y = model.sifl().forward(g, &bound, x, 1e-5).map_err(|_| {
                        TensorError::BadArgument { op: "sifl", detail: "forward".into() }
                    })?;
                    let w = g.constant(r.clone(), &[8, 16])?;
                    g.sum_all(&g.mul(&y, &w)?)
                },
                &xv,
                &[8, 16],
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(report.pass(), "trial {trial}: max rel err {}", report.max_rel_err);
        }
    }

    #[test]
    fn siel_gradients_pass_finite_difference_check() {
        let model = small_model();
        let mut rng = component_rng(7, "fd-siel");
        let readout: Vec<f64> = (0..6 * 3 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // 6-channel 3x3 map keeps the check fast
        let config = NetConfig {
            input_size: 24,
            stage_channels: [4, 6, 6],
            ..NetConfig::default()
        };
        let model6 = CdisModel::new(config, None, 9).unwrap();
        drop(model);
        for trial in 0..3 {
            let xv = margin_safe_map(&mut rng, 6, 3, 3);
            let r = readout.clone();
            let report = finite_diff_check(
                &|g: &Graph, x: &crate::tensor::Tensor| -> Result<crate::tensor::Tensor, TensorError> {
                    let bound = model6.store.bind_frozen(g)?;
                    let (sh, sw) = model6.siel().forward(g, &bound, x).map_err(|_| {
                        TensorError::BadArgument { op: "siel", detail: "forward".into() }
                    })?;
                    let w = g.constant(r.clone(), &[6, 3, 3])?;
                    let a = g.sum_all(&g.mul(&sh, &w)?)?;
                    let b = g.sum_all(&g.mul(&sw, &w)?)?;
                    g.add(&a, &b)
                },
                &xv,
                &[6, 3, 3],
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(report.pass(), "trial {trial}: max rel err {}", report.max_rel_err);
        }
    }
}
