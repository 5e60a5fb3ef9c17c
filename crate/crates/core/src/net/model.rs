//! Parameter storage plus forward and backward passes of the detector.
//!
//! Main path: conv1 -> conv2 -> pool -> conv3 -> conv4 -> pool -> conv5 (+ shortcut)
//! -> conv6 -> pool -> fc1 -> relu -> fc2 -> softmax. Each conv unit is a 3x3
//! same-padded convolution followed by batch norm and ReLU. The shortcut feeds
//! conv2's output through `residual_block_depth` conv units and a 4x4 max pool
//! and adds the result to conv5's output.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use crate::error::{Error, Result};
use crate::net::arch::{ArchConfig, ParamKind, ShortcutPool, KERNEL_SIZE, SHORTCUT_POOL_WINDOW};
use crate::net::train::TrainConfig;
use crate::nn::{
    self, batchnorm, batchnorm_backward, conv2d, conv2d_backward, dense, dense_backward, maxpool_backward_from_indices,
    maxpool_with_indices, relu, relu_backward, softmax_rows, BatchNormCache, BnMode, Padding, RunningStats,
};
use crate::tensor::{Real, Tensor};

pub type ParamMap<T> = BTreeMap<String, Tensor<T>>;

/// Full detector state: architecture, parameters, normalization statistics and training bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel<T: Real = f32> {
    pub arch: ArchConfig,
    pub params: ParamMap<T>,
    pub running_stats: BTreeMap<String, RunningStats<T>>,
    pub train_config: TrainConfig,
    pub epochs_trained: u32,
}

fn param_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a over the name keeps a tensor's init independent of which other layers exist.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Xavier-initialized model; bit-identical for a fixed `seed`.
pub fn build_model<T: Real>(arch: &ArchConfig, seed: u64) -> Result<DetectorModel<T>> {
    arch.validate()?;
    let mut params = ParamMap::new();
    for spec in arch.param_specs() {
        let tensor = match spec.kind {
            ParamKind::ConvKernel => {
                let (cin, cout) = (spec.shape[2], spec.shape[3]);
                let area = KERNEL_SIZE * KERNEL_SIZE;
                nn::xavier_init(&spec.shape, area * cin, area * cout, param_seed(seed, &spec.name))?
            }
            ParamKind::DenseWeights => {
                nn::xavier_init(&spec.shape, spec.shape[0], spec.shape[1], param_seed(seed, &spec.name))?
            }
            ParamKind::BnScale => Tensor::full(&spec.shape, T::one()),
            ParamKind::BnShift | ParamKind::DenseBias => Tensor::zeros(&spec.shape),
        };
        params.insert(spec.name, tensor);
    }
    let running_stats = arch.bn_units().into_iter().map(|(name, c)| (name, RunningStats::new(c))).collect();
    Ok(DetectorModel {
        arch: arch.clone(),
        params,
        running_stats,
        train_config: TrainConfig { seed, ..TrainConfig::default() },
        epochs_trained: 0,
    })
}

struct UnitCache<T: Real> {
    input: Tensor<T>,
    bn: BatchNormCache<T>,
}

struct PoolCache {
    input_shape: Vec<usize>,
    argmax: Vec<usize>,
}

/// Intermediate values kept by a forward pass for [`DetectorModel::backward`].
pub struct ForwardCache<T: Real> {
    units: Vec<(String, UnitCache<T>)>,
    pools: Vec<PoolCache>,
    shortcut_pool: Option<PoolCache>,
    pool3_shape: Vec<usize>,
    flat: Tensor<T>,
    fc1_pre: Tensor<T>,
    fc1_act: Tensor<T>,
    input_shape: Vec<usize>,
}

impl<T: Real> ForwardCache<T> {
    /// Hash of every ReLU on/off state and max-pool winner.
    ///
    /// Two inputs with the same pattern lie in the same smooth piece of the network.
    pub fn activation_pattern(&self, model: &DetectorModel<T>) -> u64 {
        let mut h = DefaultHasher::new();
        for (name, unit) in &self.units {
            let scale = &model.params[&format!("{name}.bn_scale")];
            let shift = &model.params[&format!("{name}.bn_shift")];
            let c = scale.len();
            for (i, &xh) in unit.bn.normalized().data().iter().enumerate() {
                (scale[i % c] * xh + shift[i % c] > T::zero()).hash(&mut h);
            }
        }
        for pool in self.pools.iter().chain(&self.shortcut_pool) {
            pool.argmax.hash(&mut h);
        }
        for &v in self.fc1_pre.data() {
            (v > T::zero()).hash(&mut h);
        }
        h.finish()
    }
}

pub struct ForwardPass<T: Real> {
    pub logits: Tensor<T>,
    /// `N x K` softmax output.
    pub probs: Tensor<T>,
    pub cache: Option<ForwardCache<T>>,
    /// Batch-norm running statistics after this pass (updated only in train mode).
    pub running_stats: BTreeMap<String, RunningStats<T>>,
}

pub struct Backward<T: Real> {
    pub param_grads: ParamMap<T>,
    pub input_grad: Tensor<T>,
}

struct Pass<'m, T: Real> {
    model: &'m DetectorModel<T>,
    mode: BnMode,
    keep: bool,
    running: BTreeMap<String, RunningStats<T>>,
    units: Vec<(String, UnitCache<T>)>,
}

impl<T: Real> Pass<'_, T> {
    fn unit(&mut self, name: &str, x: Tensor<T>) -> Result<Tensor<T>> {
        let m = self.model;
        let z = conv2d(&x, m.param(&format!("{name}.kernels"))?, None, Padding::Same)?;
        let stats = m
            .running_stats
            .get(name)
            .ok_or_else(|| Error::CheckpointMismatch(format!("missing running stats for {name}")))?;
        let bn = batchnorm(
            &z,
            m.param(&format!("{name}.bn_scale"))?,
            m.param(&format!("{name}.bn_shift"))?,
            self.mode,
            stats,
        )?;
        self.running.insert(name.to_string(), bn.running);
        let out = relu(&bn.output);
        if self.keep {
            self.units.push((name.to_string(), UnitCache { input: x, bn: bn.cache }));
        }
        Ok(out)
    }
}

impl<T: Real> DetectorModel<T> {
    pub fn param(&self, name: &str) -> Result<&Tensor<T>> {
        self.params.get(name).ok_or_else(|| Error::CheckpointMismatch(format!("missing parameter {name}")))
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Converts every parameter and statistic to another float type.
    pub fn cast<U: Real>(&self) -> DetectorModel<U> {
        DetectorModel {
            arch: self.arch.clone(),
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            running_stats: self.running_stats.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            train_config: self.train_config.clone(),
            epochs_trained: self.epochs_trained,
        }
    }

    /// Checks that parameters and statistics match the architecture exactly.
    pub fn check_consistency(&self) -> Result<()> {
        self.arch.validate()?;
        let specs = self.arch.param_specs();
        if specs.len() != self.params.len() {
            return Err(Error::CheckpointMismatch(format!(
                "architecture has {} parameter tensors, model holds {}",
                specs.len(),
                self.params.len()
            )));
        }
        for spec in specs {
            let t = self.param(&spec.name)?;
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::CheckpointMismatch(format!(
                    "{} has shape {:?}, architecture needs {:?}",
                    spec.name,
                    t.shape(),
                    spec.shape
                )));
            }
            if !t.all_finite() {
                return Err(Error::CheckpointMismatch(format!("{} holds non-finite values", spec.name)));
            }
        }
        let units = self.arch.bn_units();
        if units.len() != self.running_stats.len() {
            return Err(Error::CheckpointMismatch("running statistics do not match conv units".into()));
        }
        for (name, c) in units {
            match self.running_stats.get(&name) {
                Some(s) if s.mean.len() == c && s.var.len() == c => {}
                _ => {
                    return Err(Error::CheckpointMismatch(format!(
                        "running statistics for {name} missing or misshaped"
                    )))
                }
            }
        }
        Ok(())
    }

    fn check_input(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let p = self.arch.patch_size;
        match *batch.shape() {
            [_, h, w, 3] if h == p && w == p => Ok(batch.clone()),
            [h, w, 3] if h == p && w == p => batch.clone().reshape(&[1, h, w, 3]),
            ref s => Err(Error::shape("forward", format!("expected N x {p} x {p} x 3 patches, got {s:?}"))),
        }
    }

    /// Class probabilities (`N x K`) for a batch of patches.
    pub fn forward(&self, batch: &Tensor<T>, mode: BnMode) -> Result<Tensor<T>> {
        Ok(self.forward_pass(batch, mode, false)?.probs)
    }

    pub fn forward_pass(&self, batch: &Tensor<T>, mode: BnMode, keep_cache: bool) -> Result<ForwardPass<T>> {
        let x = self.check_input(batch)?;
        let input_shape = x.shape().to_vec();
        let mut pass = Pass { model: self, mode, keep: keep_cache, running: BTreeMap::new(), units: Vec::new() };
        let mut pools = Vec::new();
        let pool_step = |t: &Tensor<T>, window: usize, pools: &mut Vec<PoolCache>| -> Result<Tensor<T>> {
            let out = maxpool_with_indices(t, window)?;
            if keep_cache {
                pools.push(PoolCache { input_shape: t.shape().to_vec(), argmax: out.argmax });
            }
            Ok(out.output)
        };

        let a1 = pass.unit("conv1", x)?;
        let a2 = pass.unit("conv2", a1)?;
        let p1 = pool_step(&a2, 2, &mut pools)?;
        let a3 = pass.unit("conv3", p1)?;
        let a4 = pass.unit("conv4", a3)?;
        let p2 = pool_step(&a4, 2, &mut pools)?;
        let mut a5 = pass.unit("conv5", p2)?;

        let mut shortcut_pool = Vec::new();
        if self.arch.enable_residual {
            let mut r = a2;
            if self.arch.shortcut_pool == ShortcutPool::BeforeBlock {
                r = pool_step(&r, SHORTCUT_POOL_WINDOW, &mut shortcut_pool)?;
            }
            for (name, _, _) in self.arch.residual_units() {
                r = pass.unit(&name, r)?;
            }
            if self.arch.shortcut_pool == ShortcutPool::AfterBlock {
                r = pool_step(&r, SHORTCUT_POOL_WINDOW, &mut shortcut_pool)?;
            }
            a5.add_assign(&r)?;
        }

        let a6 = pass.unit("conv6", a5)?;
        let p3 = pool_step(&a6, 2, &mut pools)?;
        let pool3_shape = p3.shape().to_vec();
        let n = pool3_shape[0];
        let flat = p3.reshape(&[n, self.arch.flat_width()])?;
        let fc1_pre = dense(&flat, self.param("fc1.weights")?, self.param("fc1.bias")?)?;
        let fc1_act = relu(&fc1_pre);
        let logits = dense(&fc1_act, self.param("fc2.weights")?, self.param("fc2.bias")?)?;
        let probs = softmax_rows(&logits)?;

        let Pass { running, units, .. } = pass;
        let cache = keep_cache.then(|| ForwardCache {
            units,
            pools,
            shortcut_pool: shortcut_pool.pop(),
            pool3_shape,
            flat,
            fc1_pre,
            fc1_act,
            input_shape,
        });
        Ok(ForwardPass { logits, probs, cache, running_stats: running })
    }

    /// Gradients of a scalar loss given its gradient w.r.t. the logits.
    pub fn backward(&self, cache: ForwardCache<T>, grad_logits: &Tensor<T>) -> Result<Backward<T>> {
        let ForwardCache { mut units, mut pools, shortcut_pool, pool3_shape, flat, fc1_pre, fc1_act, input_shape } =
            cache;
        let mut grads = ParamMap::new();
        let put = |grads: &mut ParamMap<T>, layer: &str, g: &mut nn::LayerGradients<T>, names: &[&'static str]| {
            for &n in names {
                if let Some(t) = g.take(n) {
                    grads.insert(format!("{layer}.{n}"), t);
                }
            }
        };

        let mut g2 = dense_backward(&fc1_act, self.param("fc2.weights")?, grad_logits)?;
        put(&mut grads, "fc2", &mut g2, &["weights", "bias"]);
        let d_fc1 = relu_backward(&fc1_pre, &g2.input_grad)?;
        let mut g1 = dense_backward(&flat, self.param("fc1.weights")?, &d_fc1)?;
        put(&mut grads, "fc1", &mut g1, &["weights", "bias"]);
        let d_p3 = g1.input_grad.reshape(&pool3_shape)?;

        let unit_back = |grads: &mut ParamMap<T>,
                         units: &mut Vec<(String, UnitCache<T>)>,
                         expect: &str,
                         dout: &Tensor<T>|
         -> Result<Tensor<T>> {
            let (name, cache) = units.pop().ok_or_else(|| Error::InvalidArgument("forward cache exhausted".into()))?;
            debug_assert_eq!(name, expect);
            let scale = self.param(&format!("{name}.bn_scale"))?;
            let shift = self.param(&format!("{name}.bn_shift"))?;
            let c = scale.len();
            let pre = {
                let xh = cache.bn.normalized();
                let data = xh.data().iter().enumerate().map(|(i, &v)| scale[i % c] * v + shift[i % c]).collect();
                Tensor::from_vec(xh.shape(), data)?
            };
            let d_pre = relu_backward(&pre, dout)?;
            let mut gb = batchnorm_backward(&cache.bn, scale, &d_pre)?;
            let mut gc =
                conv2d_backward(&cache.input, self.param(&format!("{name}.kernels"))?, &gb.input_grad, Padding::Same)?;
            grads.insert(format!("{name}.kernels"), gc.take("kernels").expect("conv grads hold kernels"));
            grads.insert(format!("{name}.bn_scale"), gb.take("scale").expect("bn grads hold scale"));
            grads.insert(format!("{name}.bn_shift"), gb.take("shift").expect("bn grads hold shift"));
            Ok(gc.input_grad)
        };
        let pool_back = |pools: &mut Vec<PoolCache>, dout: &Tensor<T>| -> Result<Tensor<T>> {
            let p = pools.pop().ok_or_else(|| Error::InvalidArgument("forward cache exhausted".into()))?;
            maxpool_backward_from_indices(&p.input_shape, &p.argmax, dout)
        };

        let d_a6 = pool_back(&mut pools, &d_p3)?;
        let d_s5 = unit_back(&mut grads, &mut units, "conv6", &d_a6)?;

        // units were cached in order conv1..conv5, res.., conv6
        let mut d_a2_shortcut = None;
        if self.arch.enable_residual {
            let mut sp = shortcut_pool;
            let mut d = d_s5.clone();
            if self.arch.shortcut_pool == ShortcutPool::AfterBlock {
                let p = sp.take().ok_or_else(|| Error::InvalidArgument("missing shortcut pool cache".into()))?;
                d = maxpool_backward_from_indices(&p.input_shape, &p.argmax, &d)?;
            }
            for (name, _, _) in self.arch.residual_units().iter().rev() {
                d = unit_back(&mut grads, &mut units, name, &d)?;
            }
            if self.arch.shortcut_pool == ShortcutPool::BeforeBlock {
                let p = sp.take().ok_or_else(|| Error::InvalidArgument("missing shortcut pool cache".into()))?;
                d = maxpool_backward_from_indices(&p.input_shape, &p.argmax, &d)?;
            }
            d_a2_shortcut = Some(d);
        }

        let d_p2 = unit_back(&mut grads, &mut units, "conv5", &d_s5)?;
        let d_a4 = pool_back(&mut pools, &d_p2)?;
        let d_a3 = unit_back(&mut grads, &mut units, "conv4", &d_a4)?;
        let d_p1 = unit_back(&mut grads, &mut units, "conv3", &d_a3)?;
        let mut d_a2 = pool_back(&mut pools, &d_p1)?;
        if let Some(d) = d_a2_shortcut {
            d_a2.add_assign(&d)?;
        }
        let d_a1 = unit_back(&mut grads, &mut units, "conv2", &d_a2)?;
        let d_x = unit_back(&mut grads, &mut units, "conv1", &d_a1)?;
        Ok(Backward { param_grads: grads, input_grad: d_x.reshape(&input_shape)? })
    }
}
