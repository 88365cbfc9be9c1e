use std::collections::BTreeMap;

use super::ops::{self, Act, NormCache, Real};
use super::{stage_output_shapes, HeadMode, ModelConfig, ModelError};
use crate::dataset::ClassTaxonomy;
use crate::rng::{derive_rng, Draw};

const INIT_STD: f64 = 0.02;

/// One named weight tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// Parameter gradients, index-aligned with [`Detector::params`].
#[derive(Clone, Debug)]
pub struct Grads<T> {
    pub tensors: Vec<Vec<T>>,
}

/// Activation shapes `[n, h, w, c]` recorded during a forward pass.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageTrace {
    pub stem: [usize; 4],
    pub stages: Vec<[usize; 4]>,
}

#[derive(Clone, Debug)]
struct BlockIx {
    dw_w: usize,
    dw_b: usize,
    norm_w: usize,
    norm_b: usize,
    fc1_w: usize,
    fc1_b: usize,
    fc2_w: usize,
    fc2_b: usize,
    gamma: usize,
}

/// `[norm_w, norm_b, conv_w, conv_b]`
type ConvNormIx = [usize; 4];

/// Logits, the backward cache when requested, and per-stage shapes.
type RunOutput<T> = (Vec<T>, Option<Cache<T>>, StageTrace);

#[derive(Clone, Debug)]
struct StageIx {
    down: Option<ConvNormIx>,
    blocks: Vec<BlockIx>,
}

#[derive(Clone, Debug)]
struct Layout {
    stem: ConvNormIx,
    stages: Vec<StageIx>,
    /// `[norm_w, norm_b, fc_w, fc_b]`
    head: [usize; 4],
}

enum Init {
    Trunc,
    Zero,
    Const(f64),
}

struct BlockCache<T> {
    x: Act<T>,
    norm: NormCache<T>,
    ln: Vec<T>,
    h1: Vec<T>,
    a: Vec<T>,
    h2: Vec<T>,
}

struct DownCache<T> {
    norm: NormCache<T>,
    normed: Act<T>,
    in_shape: [usize; 4],
}

struct StageCache<T> {
    down: Option<DownCache<T>>,
    blocks: Vec<BlockCache<T>>,
}

/// Intermediates saved by [`Detector::forward_train`] for the backward pass.
pub struct Cache<T> {
    input: Act<T>,
    stem_shape: [usize; 4],
    stem_norm: NormCache<T>,
    stages: Vec<StageCache<T>>,
    final_shape: [usize; 4],
    head_norm: NormCache<T>,
    head_in: Vec<T>,
}

/// ConvNeXt-style classifier.
///
/// Stem: valid `k×k` conv (stride `k`, or `k/2` with FSR), LayerNorm.
/// Between stages: LayerNorm, 2×2 stride-2 conv. Block: 7×7 depthwise conv,
/// LayerNorm, `C→4C` linear, GELU, `4C→C` linear, per-channel scale,
/// residual. Head: global mean pool, LayerNorm, linear.
#[derive(Clone, Debug)]
pub struct Detector<T = f32> {
    config: ModelConfig,
    taxonomy: ClassTaxonomy,
    params: Vec<Param<T>>,
    layout: Layout,
}

/// Build a detector with deterministic initial weights. Every tensor draws
/// from its own stream keyed by name, so configs that share a parameter
/// layout (e.g. FSR on/off) start from identical weights.
pub fn build_model(config: &ModelConfig, taxonomy: &ClassTaxonomy, init_seed: u64) -> Result<Detector<f32>, ModelError> {
    Detector::new(config.clone(), taxonomy.clone(), init_seed)
}

impl<T: Real> Detector<T> {
    pub fn new(config: ModelConfig, taxonomy: ClassTaxonomy, init_seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        if config.head_mode == HeadMode::MultiClass && config.num_classes != taxonomy.num_classes() {
            return Err(ModelError::InvalidConfig(format!(
                "multi-class head has {} outputs but the taxonomy has {} classes",
                config.num_classes,
                taxonomy.num_classes()
            )));
        }
        let mut params: Vec<Param<T>> = Vec::new();
        let mut add = |name: String, shape: Vec<usize>, init: Init| -> usize {
            let len: usize = shape.iter().product();
            let data = match init {
                Init::Zero => vec![T::zero(); len],
                Init::Const(v) => vec![T::of(v); len],
                Init::Trunc => {
                    let mut rng = derive_rng(init_seed, &name);
                    (0..len)
                        .map(|_| loop {
                            let z = rng.normal();
                            if z.abs() <= 2.0 {
                                break T::of(z * INIT_STD);
                            }
                        })
                        .collect()
                }
            };
            params.push(Param { name, shape, data });
            params.len() - 1
        };

        let (k, cin) = (config.stem_kernel, config.in_channels);
        let c0 = config.stage_widths[0];
        let stem = [
            add("stem.norm.weight".into(), vec![c0], Init::Const(1.0)),
            add("stem.norm.bias".into(), vec![c0], Init::Zero),
            add("stem.conv.weight".into(), vec![k, k, cin, c0], Init::Trunc),
            add("stem.conv.bias".into(), vec![c0], Init::Zero),
        ];
        let mut stages = Vec::new();
        for (i, (&depth, &c)) in config.stage_depths.iter().zip(&config.stage_widths).enumerate() {
            let down = (i > 0).then(|| {
                let prev = config.stage_widths[i - 1];
                let p = format!("stages.{i}.downsample");
                [
                    add(format!("{p}.norm.weight"), vec![prev], Init::Const(1.0)),
                    add(format!("{p}.norm.bias"), vec![prev], Init::Zero),
                    add(format!("{p}.conv.weight"), vec![2, 2, prev, c], Init::Trunc),
                    add(format!("{p}.conv.bias"), vec![c], Init::Zero),
                ]
            });
            let hidden = c * config.mlp_ratio;
            let dk = config.dw_kernel;
            let blocks = (0..depth)
                .map(|j| {
                    let p = format!("stages.{i}.blocks.{j}");
                    BlockIx {
                        dw_w: add(format!("{p}.dwconv.weight"), vec![dk, dk, c], Init::Trunc),
                        dw_b: add(format!("{p}.dwconv.bias"), vec![c], Init::Zero),
                        norm_w: add(format!("{p}.norm.weight"), vec![c], Init::Const(1.0)),
                        norm_b: add(format!("{p}.norm.bias"), vec![c], Init::Zero),
                        fc1_w: add(format!("{p}.mlp.fc1.weight"), vec![c, hidden], Init::Trunc),
                        fc1_b: add(format!("{p}.mlp.fc1.bias"), vec![hidden], Init::Zero),
                        fc2_w: add(format!("{p}.mlp.fc2.weight"), vec![hidden, c], Init::Trunc),
                        fc2_b: add(format!("{p}.mlp.fc2.bias"), vec![c], Init::Zero),
                        gamma: add(format!("{p}.gamma"), vec![c], Init::Const(config.layer_scale_init)),
                    }
                })
                .collect();
            stages.push(StageIx { down, blocks });
        }
        let c_last = *config.stage_widths.last().expect("validated");
        let head = [
            add("head.norm.weight".into(), vec![c_last], Init::Const(1.0)),
            add("head.norm.bias".into(), vec![c_last], Init::Zero),
            add("head.fc.weight".into(), vec![c_last, config.num_classes], Init::Trunc),
            add("head.fc.bias".into(), vec![config.num_classes], Init::Zero),
        ];
        Ok(Self {
            config,
            taxonomy,
            params,
            layout: Layout { stem, stages, head },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn taxonomy(&self) -> &ClassTaxonomy {
        &self.taxonomy
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    /// `(name, shape)` for every tensor in storage order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.params.iter().map(|p| (p.name.clone(), p.shape.clone())).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn zero_grads(&self) -> Grads<T> {
        Grads {
            tensors: self.params.iter().map(|p| vec![T::zero(); p.data.len()]).collect(),
        }
    }

    /// Same weights, stem stride switched for `fsr`.
    pub fn with_fsr(&self, fsr: bool) -> Self {
        let mut out = self.clone();
        out.config = out.config.with_fsr(fsr);
        out
    }

    /// Convert weights to another precision.
    pub fn cast<U: Real>(&self) -> Detector<U> {
        Detector {
            config: self.config.clone(),
            taxonomy: self.taxonomy.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: p.data.iter().map(|v| U::of(v.to_f64().expect("finite"))).collect(),
                })
                .collect(),
            layout: self.layout.clone(),
        }
    }

    /// Overwrite weights from `(name, shape, values)` triples. Every model
    /// tensor must be supplied with an identical shape; extra names are an
    /// error too.
    pub fn load_named(&mut self, tensors: &[(String, Vec<usize>, Vec<f32>)]) -> Result<(), ModelError> {
        let by_name: BTreeMap<&str, usize> = self.params.iter().enumerate().map(|(i, p)| (p.name.as_str(), i)).collect();
        let mut seen = vec![false; self.params.len()];
        let mut updates = Vec::with_capacity(tensors.len());
        for (name, shape, data) in tensors {
            let &i = by_name
                .get(name.as_str())
                .ok_or_else(|| ModelError::WeightMismatch(format!("unexpected tensor `{name}`")))?;
            let want = &self.params[i].shape;
            if want != shape || data.len() != self.params[i].data.len() {
                return Err(ModelError::WeightMismatch(format!(
                    "`{name}` has shape {shape:?}, model expects {want:?}"
                )));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(ModelError::WeightMismatch(format!("duplicate tensor `{name}`")));
            }
            updates.push((i, data));
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(ModelError::WeightMismatch(format!("missing tensor `{}`", self.params[i].name)));
        }
        for (i, data) in updates {
            self.params[i].data = data.iter().map(|&v| T::of(f64::from(v))).collect();
        }
        Ok(())
    }

    /// Reorder head output units: new unit `i` is old unit `perm[i]`.
    pub fn permute_head(&mut self, perm: &[usize]) {
        let n = self.config.num_classes;
        assert_eq!(perm.len(), n, "permutation length");
        let [_, _, fw, fb] = self.layout.head;
        let old_b = self.params[fb].data.clone();
        self.params[fb].data = perm.iter().map(|&j| old_b[j]).collect();
        let old_w = self.params[fw].data.clone();
        for (row_new, row_old) in self.params[fw].data.chunks_exact_mut(n).zip(old_w.chunks_exact(n)) {
            for (i, &j) in perm.iter().enumerate() {
                row_new[i] = row_old[j];
            }
        }
    }

    fn p(&self, i: usize) -> &[T] {
        &self.params[i].data
    }

    fn check_input(&self, x: &Act<T>) -> Result<(), ModelError> {
        if x.c != self.config.in_channels {
            return Err(ModelError::ChannelMismatch {
                got: x.c,
                expected: self.config.in_channels,
            });
        }
        stage_output_shapes(&self.config, x.h)?;
        stage_output_shapes(&self.config, x.w)?;
        Ok(())
    }

    /// Logits, row-major `n × num_classes`.
    pub fn forward(&self, x: &Act<T>) -> Result<Vec<T>, ModelError> {
        Ok(self.run(x, false)?.0)
    }

    /// Logits plus the activation shape after the stem and each stage.
    pub fn forward_traced(&self, x: &Act<T>) -> Result<(Vec<T>, StageTrace), ModelError> {
        let (logits, _, trace) = self.run(x, false)?;
        Ok((logits, trace))
    }

    /// Logits plus the intermediates needed by [`Detector::backward`].
    pub fn forward_train(&self, x: &Act<T>) -> Result<(Vec<T>, Cache<T>), ModelError> {
        let (logits, cache, _) = self.run(x, true)?;
        Ok((logits, cache.expect("cache requested")))
    }

    fn run(&self, x: &Act<T>, keep: bool) -> Result<RunOutput<T>, ModelError> {
        self.check_input(x)?;
        let cfg = &self.config;
        let eps = T::of(cfg.ln_eps);
        let [snw, snb, scw, scb] = self.layout.stem;
        let c0 = cfg.stage_widths[0];
        let conv = ops::conv_forward(x, self.p(scw), self.p(scb), cfg.stem_kernel, cfg.stem_stride, c0);
        let (normed, stem_norm) = ops::layernorm_forward(&conv.data, c0, self.p(snw), self.p(snb), eps);
        let stem_shape = conv.shape();
        let mut h = Act::from_vec(conv.n, conv.h, conv.w, c0, normed);
        drop(conv);

        let mut trace = StageTrace {
            stem: stem_shape,
            stages: Vec::new(),
        };
        let mut stage_caches = Vec::new();
        for (i, st) in self.layout.stages.iter().enumerate() {
            let mut down_cache = None;
            if let Some([nw, nb, cw, cb]) = st.down {
                let in_shape = h.shape();
                let (n_data, norm) = ops::layernorm_forward(&h.data, h.c, self.p(nw), self.p(nb), eps);
                let n_act = Act::from_vec(h.n, h.h, h.w, h.c, n_data);
                h = ops::conv_forward(&n_act, self.p(cw), self.p(cb), 2, 2, cfg.stage_widths[i]);
                if keep {
                    down_cache = Some(DownCache {
                        norm,
                        normed: n_act,
                        in_shape,
                    });
                }
            }
            let mut block_caches = Vec::new();
            for b in &st.blocks {
                let (y, bc) = self.block_forward(b, h, keep);
                h = y;
                block_caches.extend(bc);
            }
            trace.stages.push(h.shape());
            if keep {
                stage_caches.push(StageCache {
                    down: down_cache,
                    blocks: block_caches,
                });
            }
        }

        let [hnw, hnb, hfw, hfb] = self.layout.head;
        let final_shape = h.shape();
        let pooled = ops::mean_pool(&h);
        let (head_in, head_norm) = ops::layernorm_forward(&pooled, h.c, self.p(hnw), self.p(hnb), eps);
        let logits = ops::linear_forward(&head_in, h.c, self.p(hfw), self.p(hfb));
        let cache = keep.then(|| Cache {
            input: x.clone(),
            stem_shape,
            stem_norm,
            stages: stage_caches,
            final_shape,
            head_norm,
            head_in,
        });
        Ok((logits, cache, trace))
    }

    fn block_forward(&self, b: &BlockIx, x: Act<T>, keep: bool) -> (Act<T>, Option<BlockCache<T>>) {
        let c = x.c;
        let eps = T::of(self.config.ln_eps);
        let dw = ops::dwconv_forward(&x, self.p(b.dw_w), self.p(b.dw_b), self.config.dw_kernel);
        let (ln, norm) = ops::layernorm_forward(&dw.data, c, self.p(b.norm_w), self.p(b.norm_b), eps);
        drop(dw);
        let h1 = ops::linear_forward(&ln, c, self.p(b.fc1_w), self.p(b.fc1_b));
        let a: Vec<T> = h1.iter().map(|&v| ops::gelu(v)).collect();
        let h2 = ops::linear_forward(&a, c * self.config.mlp_ratio, self.p(b.fc2_w), self.p(b.fc2_b));
        let g = self.p(b.gamma);
        let (mut y, cache_x) = if keep { (x.clone(), Some(x)) } else { (x, None) };
        for (ry, rh) in y.data.chunks_exact_mut(c).zip(h2.chunks_exact(c)) {
            for ((o, &hv), &gv) in ry.iter_mut().zip(rh).zip(g) {
                *o = *o + gv * hv;
            }
        }
        let cache = cache_x.map(|x| BlockCache { x, norm, ln, h1, a, h2 });
        (y, cache)
    }

    /// Parameter gradients given `dL/dlogits` (row-major `n × num_classes`).
    pub fn backward(&self, cache: &Cache<T>, dlogits: &[T]) -> Grads<T> {
        let cfg = &self.config;
        let mut grads = self.zero_grads();

        let [hnw, hnb, hfw, _] = self.layout.head;
        let c_last = cache.final_shape[3];
        let (dhead, dfw, dfb) = ops::linear_backward(&cache.head_in, dlogits, c_last, self.p(hfw));
        grads.tensors[hfw] = dfw;
        grads.tensors[self.layout.head[3]] = dfb;
        let (dpool, dnw, dnb) = ops::layernorm_backward(&dhead, &cache.head_norm, c_last, self.p(hnw));
        grads.tensors[hnw] = dnw;
        grads.tensors[hnb] = dnb;
        let mut dh = ops::mean_pool_backward(&dpool, cache.final_shape);

        for (st, sc) in self.layout.stages.iter().zip(&cache.stages).rev() {
            for (b, bc) in st.blocks.iter().zip(&sc.blocks).rev() {
                dh = self.block_backward(b, bc, dh, &mut grads);
            }
            if let (Some([nw, nb, cw, cb]), Some(dc)) = (st.down, &sc.down) {
                let (dn, dcw, dcb) = ops::conv_backward(&dc.normed, &dh, self.p(cw), 2, 2, true);
                grads.tensors[cw] = dcw;
                grads.tensors[cb] = dcb;
                let dn = dn.expect("requested");
                let [n, h, w, c] = dc.in_shape;
                let (dx, dnw, dnb) = ops::layernorm_backward(&dn.data, &dc.norm, c, self.p(nw));
                grads.tensors[nw] = dnw;
                grads.tensors[nb] = dnb;
                dh = Act::from_vec(n, h, w, c, dx);
            }
        }

        let [snw, snb, scw, scb] = self.layout.stem;
        let c0 = cache.stem_shape[3];
        let (dconv, dsnw, dsnb) = ops::layernorm_backward(&dh.data, &cache.stem_norm, c0, self.p(snw));
        grads.tensors[snw] = dsnw;
        grads.tensors[snb] = dsnb;
        let [n, h, w, c] = cache.stem_shape;
        let dconv = Act::from_vec(n, h, w, c, dconv);
        let (_, dcw, dcb) = ops::conv_backward(&cache.input, &dconv, self.p(scw), cfg.stem_kernel, cfg.stem_stride, false);
        grads.tensors[scw] = dcw;
        grads.tensors[scb] = dcb;
        grads
    }

    fn block_backward(&self, b: &BlockIx, bc: &BlockCache<T>, dy: Act<T>, grads: &mut Grads<T>) -> Act<T> {
        let c = dy.c;
        let g = self.p(b.gamma);
        let mut dgamma = vec![T::zero(); c];
        let mut dh2 = vec![T::zero(); dy.data.len()];
        for ((rd, rh), rout) in dy.data.chunks_exact(c).zip(bc.h2.chunks_exact(c)).zip(dh2.chunks_exact_mut(c)) {
            for j in 0..c {
                dgamma[j] = dgamma[j] + rd[j] * rh[j];
                rout[j] = rd[j] * g[j];
            }
        }
        grads.tensors[b.gamma] = dgamma;
        let hidden = c * self.config.mlp_ratio;
        let (mut da, dw2, db2) = ops::linear_backward(&bc.a, &dh2, hidden, self.p(b.fc2_w));
        grads.tensors[b.fc2_w] = dw2;
        grads.tensors[b.fc2_b] = db2;
        for (d, &h) in da.iter_mut().zip(&bc.h1) {
            *d = *d * ops::gelu_grad(h);
        }
        let (dln, dw1, db1) = ops::linear_backward(&bc.ln, &da, c, self.p(b.fc1_w));
        grads.tensors[b.fc1_w] = dw1;
        grads.tensors[b.fc1_b] = db1;
        let (ddw, dnw, dnb) = ops::layernorm_backward(&dln, &bc.norm, c, self.p(b.norm_w));
        grads.tensors[b.norm_w] = dnw;
        grads.tensors[b.norm_b] = dnb;
        let ddw = Act::from_vec(dy.n, dy.h, dy.w, c, ddw);
        let (dx, dkw, dkb) = ops::dwconv_backward(&bc.x, &ddw, self.p(b.dw_w), self.config.dw_kernel);
        grads.tensors[b.dw_w] = dkw;
        grads.tensors[b.dw_b] = dkb;
        let mut out = dy;
        for (o, &v) in out.data.iter_mut().zip(&dx.data) {
            *o = *o + v;
        }
        out
    }
}
