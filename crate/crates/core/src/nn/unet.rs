//! UNet-style noise predictor: encoder/decoder with skip connections,
//! residual blocks (group norm + GELU + conv), strided-convolution
//! downsampling and nearest-neighbor-upsampling + convolution. The forward
//! pass records an [`ActivationTape`]; the backward pass replays it to
//! produce either the input cotangent (`J^T v` with `J = d eps / d x_t`) or
//! the parameter gradient of `<cotangent, eps>`.

use std::sync::Arc;

use ndarray::{s, Array3, Axis};

use super::layers::{
    conv2d_backward_input, conv2d_backward_params, conv2d_forward, gelu_backward,
    gelu_forward, group_norm_backward, group_norm_forward, upsample2x_backward,
    upsample2x_forward, GnStats, KERNEL,
};
use super::{time_embedding, DenoiserConfig, Manifest, NnError, ParamEntry, ParamVector};
use crate::image::Image;
use crate::rng::{derive_stream, CounterRng};
use crate::scalar::{c, Scalar};

#[derive(Clone, Debug)]
struct ConvHandle {
    w_off: usize,
    b_off: usize,
    c_in: usize,
    c_out: usize,
    stride: usize,
}

impl ConvHandle {
    fn w<'a, T>(&self, p: &'a [T]) -> &'a [T] {
        &p[self.w_off..self.w_off + self.c_out * self.c_in * KERNEL * KERNEL]
    }
    fn b<'a, T>(&self, p: &'a [T]) -> &'a [T] {
        &p[self.b_off..self.b_off + self.c_out]
    }
}

#[derive(Clone, Debug)]
struct GnHandle {
    g_off: usize,
    b_off: usize,
    channels: usize,
    groups: usize,
}

impl GnHandle {
    fn gamma<'a, T>(&self, p: &'a [T]) -> &'a [T] {
        &p[self.g_off..self.g_off + self.channels]
    }
    fn beta<'a, T>(&self, p: &'a [T]) -> &'a [T] {
        &p[self.b_off..self.b_off + self.channels]
    }
}

#[derive(Clone, Debug)]
struct ResBlockHandle {
    gn1: GnHandle,
    conv1: ConvHandle,
    gn2: GnHandle,
    conv2: ConvHandle,
}

#[derive(Clone, Debug)]
struct EncLevel {
    blocks: Vec<ResBlockHandle>,
    down: Option<ConvHandle>,
}

#[derive(Clone, Debug)]
struct DecLevel {
    up: ConvHandle,
    merge: ConvHandle,
    blocks: Vec<ResBlockHandle>,
}

#[derive(Clone, Debug)]
struct UnetLayout {
    stem: ConvHandle,
    enc: Vec<EncLevel>,
    /// Decoder stages in processing order (deepest target level first).
    dec: Vec<DecLevel>,
    head: ConvHandle,
    manifest: Arc<Manifest>,
}

struct LayoutBuilder {
    entries: Vec<ParamEntry>,
    offset: usize,
}

impl LayoutBuilder {
    fn new() -> Self {
        Self { entries: Vec::new(), offset: 0 }
    }

    fn push(&mut self, name: String, shape: Vec<usize>) -> usize {
        let off = self.offset;
        let len: usize = shape.iter().product();
        self.entries.push(ParamEntry { name, offset: off, shape });
        self.offset += len;
        off
    }

    fn conv(&mut self, name: &str, c_in: usize, c_out: usize, stride: usize) -> ConvHandle {
        let w_off = self.push(format!("{name}.weight"), vec![c_out, c_in, KERNEL, KERNEL]);
        let b_off = self.push(format!("{name}.bias"), vec![c_out]);
        ConvHandle { w_off, b_off, c_in, c_out, stride }
    }

    fn group_norm(&mut self, name: &str, channels: usize, groups: usize) -> GnHandle {
        let g_off = self.push(format!("{name}.gamma"), vec![channels]);
        let b_off = self.push(format!("{name}.beta"), vec![channels]);
        GnHandle { g_off, b_off, channels, groups }
    }

    fn res_block(&mut self, name: &str, channels: usize, groups: usize) -> ResBlockHandle {
        ResBlockHandle {
            gn1: self.group_norm(&format!("{name}.norm1"), channels, groups),
            conv1: self.conv(&format!("{name}.conv1"), channels, channels, 1),
            gn2: self.group_norm(&format!("{name}.norm2"), channels, groups),
            conv2: self.conv(&format!("{name}.conv2"), channels, channels, 1),
        }
    }
}

fn build_layout(config: &DenoiserConfig) -> UnetLayout {
    let mut b = LayoutBuilder::new();
    let levels = config.n_levels;
    let stem = b.conv("stem", 1 + config.embed_dim, config.channels[0], 1);

    let mut enc = Vec::with_capacity(levels);
    for l in 0..levels {
        let ch = config.channels[l];
        let blocks = (0..config.blocks_per_level)
            .map(|k| b.res_block(&format!("enc{l}.block{k}"), ch, config.group_count))
            .collect();
        let down = if l + 1 < levels {
            Some(b.conv(&format!("enc{l}.down"), ch, config.channels[l + 1], 2))
        } else {
            None
        };
        enc.push(EncLevel { blocks, down });
    }

    let mut dec = Vec::new();
    for l in (0..levels.saturating_sub(1)).rev() {
        let ch = config.channels[l];
        let deeper = config.channels[l + 1];
        let up = b.conv(&format!("dec{l}.up"), deeper, ch, 1);
        let merge = b.conv(&format!("dec{l}.merge"), 2 * ch, ch, 1);
        let blocks = (0..config.blocks_per_level)
            .map(|k| b.res_block(&format!("dec{l}.block{k}"), ch, config.group_count))
            .collect();
        dec.push(DecLevel { up, merge, blocks });
    }

    let head = b.conv("head", config.channels[0], 1, 1);
    let manifest = Arc::new(Manifest { total_len: b.offset, entries: b.entries });
    UnetLayout { stem, enc, dec, head, manifest }
}

#[derive(Clone, Debug)]
struct ConvCache<T> {
    input: Array3<T>,
}

#[derive(Clone, Debug)]
struct GnCache<T> {
    input: Array3<T>,
    stats: GnStats<T>,
}

#[derive(Clone, Debug)]
struct ResBlockCache<T> {
    gn1: GnCache<T>,
    gelu1: Array3<T>,
    conv1: ConvCache<T>,
    gn2: GnCache<T>,
    gelu2: Array3<T>,
    conv2: ConvCache<T>,
}

#[derive(Clone, Debug)]
struct EncLevelCache<T> {
    blocks: Vec<ResBlockCache<T>>,
    down: Option<ConvCache<T>>,
}

#[derive(Clone, Debug)]
struct DecLevelCache<T> {
    pre_up_dims: (usize, usize),
    up: ConvCache<T>,
    merge: ConvCache<T>,
    blocks: Vec<ResBlockCache<T>>,
}

/// Per-layer activations cached by one forward pass; consumed by exactly one
/// backward pass over the same parameters.
#[derive(Clone, Debug)]
pub struct ActivationTape<T> {
    t: usize,
    in_dims: (usize, usize),
    stem: ConvCache<T>,
    enc: Vec<EncLevelCache<T>>,
    dec: Vec<DecLevelCache<T>>,
    head: ConvCache<T>,
    fingerprint: u64,
}

impl<T> ActivationTape<T> {
    pub fn timestep(&self) -> usize {
        self.t
    }
}

/// The noise-prediction network. Holds the architecture and parameter
/// layout; parameters themselves travel in a [`ParamVector`], so the same
/// predictor serves inference, VJPs and training.
#[derive(Clone, Debug)]
pub struct NoisePredictor {
    config: DenoiserConfig,
    layout: UnetLayout,
}

impl NoisePredictor {
    pub fn new(config: DenoiserConfig) -> Result<Self, NnError> {
        config.validate()?;
        let layout = build_layout(&config);
        Ok(Self { config, layout })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn manifest(&self) -> &Arc<Manifest> {
        &self.layout.manifest
    }

    pub fn n_params(&self) -> usize {
        self.layout.manifest.total_len
    }

    /// Fan-in-scaled init; the output head is zeroed (see [`super::init_params`]).
    pub fn init_params<T: Scalar>(&self, seed: u64) -> ParamVector<T> {
        let mut params = ParamVector::zeros(self.layout.manifest.clone());
        for (i, entry) in self.layout.manifest.entries.iter().enumerate() {
            let mut rng = CounterRng::new(derive_stream(seed, i as u64));
            let slot = &mut params.data[entry.offset..entry.offset + entry.len()];
            if entry.name.starts_with("head.") {
                // zero-initialized output layer
            } else if entry.name.ends_with(".weight") {
                let fan_in: usize = entry.shape[1..].iter().product();
                let std = (1.0 / fan_in as f64).sqrt();
                for v in slot.iter_mut() {
                    *v = c::<T>(std) * rng.next_gauss_scalar::<T>();
                }
            } else if entry.name.ends_with(".gamma") {
                slot.fill(T::one());
            }
            // biases and betas stay zero
        }
        params
    }

    fn check_params<T: Scalar>(&self, params: &ParamVector<T>) -> Result<(), NnError> {
        if params.len() != self.layout.manifest.total_len {
            return Err(NnError::BadParamLength {
                expected: self.layout.manifest.total_len,
                got: params.len(),
            });
        }
        Ok(())
    }

    /// Forward pass `eps = f(x_t, t)` producing the activation tape.
    pub fn forward<T: Scalar>(
        &self,
        params: &ParamVector<T>,
        x: &Image<T>,
        t: usize,
    ) -> Result<(Image<T>, ActivationTape<T>), NnError> {
        self.check_params(params)?;
        if !x.all_finite() {
            return Err(NnError::NonFiniteInput);
        }
        let (h, w) = x.dims();
        let div = self.config.spatial_divisor();
        if h % div != 0 || w % div != 0 || h < div || w < div {
            return Err(NnError::BadInputDims { got: (h, w), required: div });
        }
        let p = params.data.as_slice();

        // Stack x_t with the broadcast timestep embedding along channels.
        let mut input = Array3::zeros((1 + self.config.embed_dim, h, w));
        input
            .index_axis_mut(Axis(0), 0)
            .assign(&x.0.view());
        let emb = time_embedding::<T>(t, self.config.embed_dim, (h, w));
        input.slice_mut(s![1.., .., ..]).assign(&emb);

        let stem_cache = ConvCache { input: input.clone() };
        let mut act = conv2d_forward(&input, self.layout.stem.w(p), self.layout.stem.b(p), self.layout.stem.c_out, 1);

        let mut skips: Vec<Array3<T>> = Vec::new();
        let mut enc_caches = Vec::with_capacity(self.layout.enc.len());
        for (l, level) in self.layout.enc.iter().enumerate() {
            let mut block_caches = Vec::with_capacity(level.blocks.len());
            for block in &level.blocks {
                let (next, cache) = res_block_forward(p, block, &act);
                act = next;
                block_caches.push(cache);
            }
            let down_cache = if let Some(down) = &level.down {
                skips.push(act.clone());
                let cache = ConvCache { input: act.clone() };
                act = conv2d_forward(&act, down.w(p), down.b(p), down.c_out, down.stride);
                Some(cache)
            } else {
                None
            };
            let _ = l;
            enc_caches.push(EncLevelCache { blocks: block_caches, down: down_cache });
        }

        let mut dec_caches = Vec::with_capacity(self.layout.dec.len());
        for level in &self.layout.dec {
            let pre_up_dims = (act.dim().1, act.dim().2);
            let upsampled = upsample2x_forward(&act);
            let up_cache = ConvCache { input: upsampled.clone() };
            let up_out = conv2d_forward(&upsampled, level.up.w(p), level.up.b(p), level.up.c_out, 1);
            let skip = skips.pop().expect("skip available");
            let concat = ndarray::concatenate(Axis(0), &[up_out.view(), skip.view()])
                .expect("channel concat");
            let merge_cache = ConvCache { input: concat.clone() };
            act = conv2d_forward(&concat, level.merge.w(p), level.merge.b(p), level.merge.c_out, 1);
            let mut block_caches = Vec::with_capacity(level.blocks.len());
            for block in &level.blocks {
                let (next, cache) = res_block_forward(p, block, &act);
                act = next;
                block_caches.push(cache);
            }
            dec_caches.push(DecLevelCache {
                pre_up_dims,
                up: up_cache,
                merge: merge_cache,
                blocks: block_caches,
            });
        }

        let head_cache = ConvCache { input: act.clone() };
        let out = conv2d_forward(&act, self.layout.head.w(p), self.layout.head.b(p), 1, 1);
        let eps = Image(out.index_axis(Axis(0), 0).to_owned());

        let tape = ActivationTape {
            t,
            in_dims: (h, w),
            stem: stem_cache,
            enc: enc_caches,
            dec: dec_caches,
            head: head_cache,
            fingerprint: params.fingerprint(),
        };
        Ok((eps, tape))
    }

    /// Shared backward walk. Always produces the input cotangent; parameter
    /// gradients are accumulated when `grads` is provided.
    fn backward_impl<T: Scalar>(
        &self,
        params: &ParamVector<T>,
        tape: &ActivationTape<T>,
        cotangent: &Image<T>,
        mut grads: Option<&mut [T]>,
    ) -> Result<Image<T>, NnError> {
        self.check_params(params)?;
        if tape.fingerprint != params.fingerprint() {
            return Err(NnError::StaleTape);
        }
        if cotangent.dims() != tape.in_dims {
            return Err(NnError::BadInputDims {
                got: cotangent.dims(),
                required: self.config.spatial_divisor(),
            });
        }
        let p = params.data.as_slice();

        // Head.
        let cot = cotangent.0.view().insert_axis(Axis(0)).to_owned();
        if let Some(g) = grads.as_deref_mut() {
            let (wg, bg) = conv_grad_slices(g, &self.layout.head);
            conv2d_backward_params(&cot, &tape.head.input, 1, wg, bg);
        }
        let mut cot = conv2d_backward_input(
            &cot,
            self.layout.head.w(p),
            self.layout.head.c_in,
            (tape.head.input.dim().1, tape.head.input.dim().2),
            1,
        );

        // Decoder stages, reverse processing order; remember skip cotangents
        // by the encoder level they came from.
        let mut skip_cots: Vec<Option<Array3<T>>> = vec![None; self.layout.enc.len()];
        for (i, (level, cache)) in self
            .layout
            .dec
            .iter()
            .zip(tape.dec.iter())
            .enumerate()
            .rev()
        {
            for (block, bcache) in level.blocks.iter().zip(cache.blocks.iter()).rev() {
                cot = res_block_backward(p, block, bcache, &cot, grads.as_deref_mut());
            }
            if let Some(g) = grads.as_deref_mut() {
                let (wg, bg) = conv_grad_slices(g, &level.merge);
                conv2d_backward_params(&cot, &cache.merge.input, 1, wg, bg);
            }
            let concat_cot = conv2d_backward_input(
                &cot,
                level.merge.w(p),
                level.merge.c_in,
                (cache.merge.input.dim().1, cache.merge.input.dim().2),
                1,
            );
            let c_here = level.up.c_out;
            let up_cot = concat_cot.slice(s![..c_here, .., ..]).to_owned();
            let skip_cot = concat_cot.slice(s![c_here.., .., ..]).to_owned();
            // Decoder stage i targets encoder level n_levels - 2 - i.
            let target_level = self.layout.enc.len() - 2 - i;
            skip_cots[target_level] = Some(skip_cot);

            if let Some(g) = grads.as_deref_mut() {
                let (wg, bg) = conv_grad_slices(g, &level.up);
                conv2d_backward_params(&up_cot, &cache.up.input, 1, wg, bg);
            }
            let upsampled_cot = conv2d_backward_input(
                &up_cot,
                level.up.w(p),
                level.up.c_in,
                (cache.up.input.dim().1, cache.up.input.dim().2),
                1,
            );
            cot = upsample2x_backward(&upsampled_cot);
            debug_assert_eq!((cot.dim().1, cot.dim().2), cache.pre_up_dims);
        }

        // Encoder levels in reverse.
        for (l, (level, cache)) in self
            .layout
            .enc
            .iter()
            .zip(tape.enc.iter())
            .enumerate()
            .rev()
        {
            if let (Some(down), Some(down_cache)) = (&level.down, &cache.down) {
                if let Some(g) = grads.as_deref_mut() {
                    let (wg, bg) = conv_grad_slices(g, down);
                    conv2d_backward_params(&cot, &down_cache.input, down.stride, wg, bg);
                }
                cot = conv2d_backward_input(
                    &cot,
                    down.w(p),
                    down.c_in,
                    (down_cache.input.dim().1, down_cache.input.dim().2),
                    down.stride,
                );
                if let Some(skip) = skip_cots[l].take() {
                    cot.zip_mut_with(&skip, |a, &b| *a = *a + b);
                }
            }
            for (block, bcache) in level.blocks.iter().zip(cache.blocks.iter()).rev() {
                cot = res_block_backward(p, block, bcache, &cot, grads.as_deref_mut());
            }
        }

        // Stem: the input cotangent of the x_t channel is channel 0; the
        // embedding channels are constants of x_t.
        if let Some(g) = grads.as_deref_mut() {
            let (wg, bg) = conv_grad_slices(g, &self.layout.stem);
            conv2d_backward_params(&cot, &tape.stem.input, 1, wg, bg);
        }
        let input_cot = conv2d_backward_input(
            &cot,
            self.layout.stem.w(p),
            self.layout.stem.c_in,
            tape.in_dims,
            1,
        );
        Ok(Image(input_cot.index_axis(Axis(0), 0).to_owned()))
    }

    /// `J^T v` with `J = d eps / d x_t`, consuming the tape.
    pub fn vjp_input<T: Scalar>(
        &self,
        params: &ParamVector<T>,
        tape: ActivationTape<T>,
        cotangent: &Image<T>,
    ) -> Result<Image<T>, NnError> {
        self.backward_impl(params, &tape, cotangent, None)
    }

    /// Borrowing variant of [`Self::vjp_input`] for chained samplers that
    /// manage tape lifetimes themselves.
    pub(crate) fn vjp_input_ref<T: Scalar>(
        &self,
        params: &ParamVector<T>,
        tape: &ActivationTape<T>,
        cotangent: &Image<T>,
    ) -> Result<Image<T>, NnError> {
        self.backward_impl(params, tape, cotangent, None)
    }

    /// Gradient of `<cotangent, eps>` with respect to the parameters,
    /// consuming the tape. The result shares the parameter layout manifest.
    pub fn grad_params<T: Scalar>(
        &self,
        params: &ParamVector<T>,
        tape: ActivationTape<T>,
        cotangent: &Image<T>,
    ) -> Result<ParamVector<T>, NnError> {
        let mut grads = ParamVector::zeros(self.layout.manifest.clone());
        self.backward_impl(params, &tape, cotangent, Some(grads.data.as_mut_slice()))?;
        Ok(grads)
    }

    /// Accumulating variant of [`Self::grad_params`] used by the training
    /// loop (saves one allocation per sample).
    pub(crate) fn grad_params_into<T: Scalar>(
        &self,
        params: &ParamVector<T>,
        tape: &ActivationTape<T>,
        cotangent: &Image<T>,
        acc: &mut [T],
    ) -> Result<(), NnError> {
        self.backward_impl(params, tape, cotangent, Some(acc)).map(|_| ())
    }
}

/// Disjoint weight/bias gradient slices of one conv inside the flat buffer
/// (the builder lays the bias directly after the weights).
fn conv_grad_slices<'a, T>(g: &'a mut [T], handle: &ConvHandle) -> (&'a mut [T], &'a mut [T]) {
    let w_len = handle.c_out * handle.c_in * KERNEL * KERNEL;
    debug_assert_eq!(handle.b_off, handle.w_off + w_len);
    let span = &mut g[handle.w_off..handle.b_off + handle.c_out];
    span.split_at_mut(w_len)
}

fn res_block_forward<T: Scalar>(
    p: &[T],
    block: &ResBlockHandle,
    input: &Array3<T>,
) -> (Array3<T>, ResBlockCache<T>) {
    let (n1, s1) = group_norm_forward(input, block.gn1.gamma(p), block.gn1.beta(p), block.gn1.groups);
    let a1 = gelu_forward(&n1);
    let c1 = conv2d_forward(&a1, block.conv1.w(p), block.conv1.b(p), block.conv1.c_out, 1);
    let (n2, s2) = group_norm_forward(&c1, block.gn2.gamma(p), block.gn2.beta(p), block.gn2.groups);
    let a2 = gelu_forward(&n2);
    let c2 = conv2d_forward(&a2, block.conv2.w(p), block.conv2.b(p), block.conv2.c_out, 1);
    let mut out = input.clone();
    out.zip_mut_with(&c2, |a, &b| *a = *a + b);
    let cache = ResBlockCache {
        gn1: GnCache { input: input.clone(), stats: s1 },
        gelu1: n1,
        conv1: ConvCache { input: a1 },
        gn2: GnCache { input: c1, stats: s2 },
        gelu2: n2,
        conv2: ConvCache { input: a2 },
    };
    (out, cache)
}

fn res_block_backward<T: Scalar>(
    p: &[T],
    block: &ResBlockHandle,
    cache: &ResBlockCache<T>,
    cot: &Array3<T>,
    mut grads: Option<&mut [T]>,
) -> Array3<T> {
    let dims2 = (cache.conv2.input.dim().1, cache.conv2.input.dim().2);
    if let Some(g) = grads.as_deref_mut() {
        let (wg, bg) = conv_grad_slices(g, &block.conv2);
        conv2d_backward_params(cot, &cache.conv2.input, 1, wg, bg);
    }
    let mut branch = conv2d_backward_input(cot, block.conv2.w(p), block.conv2.c_in, dims2, 1);
    branch = gelu_backward(&branch, &cache.gelu2);
    branch = backward_group_norm(p, &block.gn2, &cache.gn2, &branch, grads.as_deref_mut());
    let dims1 = (cache.conv1.input.dim().1, cache.conv1.input.dim().2);
    if let Some(g) = grads.as_deref_mut() {
        let (wg, bg) = conv_grad_slices(g, &block.conv1);
        conv2d_backward_params(&branch, &cache.conv1.input, 1, wg, bg);
    }
    branch = conv2d_backward_input(&branch, block.conv1.w(p), block.conv1.c_in, dims1, 1);
    branch = gelu_backward(&branch, &cache.gelu1);
    branch = backward_group_norm(p, &block.gn1, &cache.gn1, &branch, grads);
    // Residual connection: identity path plus branch path.
    let mut out = cot.clone();
    out.zip_mut_with(&branch, |a, &b| *a = *a + b);
    out
}

fn backward_group_norm<T: Scalar>(
    p: &[T],
    handle: &GnHandle,
    cache: &GnCache<T>,
    cot: &Array3<T>,
    grads: Option<&mut [T]>,
) -> Array3<T> {
    let mut ggrad = vec![T::zero(); handle.channels];
    let mut bgrad = vec![T::zero(); handle.channels];
    let out = group_norm_backward(
        cot,
        &cache.input,
        &cache.stats,
        handle.gamma(p),
        handle.groups,
        &mut ggrad,
        &mut bgrad,
    );
    if let Some(g) = grads {
        for (dst, src) in g[handle.g_off..handle.g_off + handle.channels]
            .iter_mut()
            .zip(ggrad)
        {
            *dst = *dst + src;
        }
        for (dst, src) in g[handle.b_off..handle.b_off + handle.channels]
            .iter_mut()
            .zip(bgrad)
        {
            *dst = *dst + src;
        }
    }
    out
}

/// Forward pass of the noise predictor (see [`NoisePredictor::forward`]).
pub fn denoise_forward<T: Scalar>(
    predictor: &NoisePredictor,
    params: &ParamVector<T>,
    x_t: &Image<T>,
    t: usize,
) -> Result<(Image<T>, ActivationTape<T>), NnError> {
    predictor.forward(params, x_t, t)
}

/// Input VJP of the noise predictor (see [`NoisePredictor::vjp_input`]).
pub fn denoise_vjp_input<T: Scalar>(
    predictor: &NoisePredictor,
    params: &ParamVector<T>,
    tape: ActivationTape<T>,
    cotangent: &Image<T>,
) -> Result<Image<T>, NnError> {
    predictor.vjp_input(params, tape, cotangent)
}

/// Parameter gradient of the noise predictor (see
/// [`NoisePredictor::grad_params`]).
pub fn denoise_grad_params<T: Scalar>(
    predictor: &NoisePredictor,
    params: &ParamVector<T>,
    tape: ActivationTape<T>,
    cotangent: &Image<T>,
) -> Result<ParamVector<T>, NnError> {
    predictor.grad_params(params, tape, cotangent)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_predictor() -> NoisePredictor {
        NoisePredictor::new(DenoiserConfig::tiny()).unwrap()
    }

    #[test]
    fn zero_head_predicts_zero() {
        let pred = tiny_predictor();
        let params = pred.init_params::<f64>(1);
        let x = Image::<f64>::standard_normal((8, 8), 2);
        let (eps, _) = pred.forward(&params, &x, 5).unwrap();
        assert!(eps.0.iter().all(|&v| v == 0.0));
        assert_eq!(eps.dims(), (8, 8));
    }

    #[test]
    fn forward_is_deterministic() {
        let pred = tiny_predictor();
        let mut params = pred.init_params::<f64>(1);
        params.jitter(3, 0.05);
        let x = Image::<f64>::standard_normal((8, 8), 2);
        let (a, _) = pred.forward(&params, &x, 7).unwrap();
        let (b, _) = pred.forward(&params, &x, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_inputs() {
        let pred = tiny_predictor();
        let params = pred.init_params::<f64>(1);
        let mut x = Image::<f64>::zeros((8, 8));
        x.0[[0, 0]] = f64::NAN;
        assert!(matches!(
            pred.forward(&params, &x, 0),
            Err(NnError::NonFiniteInput)
        ));
        let odd = Image::<f64>::zeros((7, 8));
        assert!(matches!(
            pred.forward(&params, &odd, 0),
            Err(NnError::BadInputDims { .. })
        ));
    }

    #[test]
    fn stale_tape_rejected() {
        let pred = tiny_predictor();
        let mut params = pred.init_params::<f64>(1);
        params.jitter(3, 0.05);
        let x = Image::<f64>::standard_normal((8, 8), 2);
        let (_, tape) = pred.forward(&params, &x, 3).unwrap();
        let cot = Image::<f64>::standard_normal((8, 8), 4);
        let mut altered = params.clone();
        altered.data[0] += 0.5;
        assert!(matches!(
            pred.vjp_input(&altered, tape, &cot),
            Err(NnError::StaleTape)
        ));
    }

    #[test]
    fn vjp_zero_cotangent_is_zero_and_linear() {
        let pred = tiny_predictor();
        let mut params = pred.init_params::<f64>(1);
        params.jitter(3, 0.05);
        let x = Image::<f64>::standard_normal((8, 8), 2);

        let (_, tape) = pred.forward(&params, &x, 3).unwrap();
        let zero = Image::<f64>::zeros((8, 8));
        let out = pred.vjp_input(&params, tape, &zero).unwrap();
        assert!(out.0.iter().all(|&v| v == 0.0));

        // Linearity in the cotangent.
        let u = Image::<f64>::standard_normal((8, 8), 5);
        let v = Image::<f64>::standard_normal((8, 8), 6);
        let (a, b) = (1.7, -0.4);
        let mut comb = u.scale(a);
        comb.scaled_add(b, &v);
        let (_, tape) = pred.forward(&params, &x, 3).unwrap();
        let j_comb = pred.vjp_input(&params, tape, &comb).unwrap();
        let (_, tape) = pred.forward(&params, &x, 3).unwrap();
        let j_u = pred.vjp_input(&params, tape, &u).unwrap();
        let (_, tape) = pred.forward(&params, &x, 3).unwrap();
        let j_v = pred.vjp_input(&params, tape, &v).unwrap();
        for ((&jc, &ju), &jv) in j_comb.0.iter().zip(j_u.0.iter()).zip(j_v.0.iter()) {
            assert!((jc - (a * ju + b * jv)).abs() <= 1e-12 * jc.abs().max(1.0));
        }
    }

    #[test]
    fn param_grad_zero_cotangent_and_layout() {
        let pred = tiny_predictor();
        let mut params = pred.init_params::<f64>(1);
        params.jitter(3, 0.05);
        let x = Image::<f64>::standard_normal((8, 8), 2);
        let (_, tape) = pred.forward(&params, &x, 3).unwrap();
        let zero = Image::<f64>::zeros((8, 8));
        let g = pred.grad_params(&params, tape, &zero).unwrap();
        assert_eq!(g.len(), params.len());
        assert_eq!(g.manifest, params.manifest);
        assert!(g.data.iter().all(|&v| v == 0.0));
    }
}
