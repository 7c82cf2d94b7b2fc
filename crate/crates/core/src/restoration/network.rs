//! Tensor-level forward and backward passes of both restoration steps.

use super::layers::{Stack, StackCache};
use super::spec::DeformSource;
use super::weights::{accumulate, names, Gradients, StepWeights};
use super::{ConfidenceMap, ModulationMask, OffsetField};
use crate::error::{Error, Result};
use crate::neural::{
    deformable_conv, deformable_conv_backward, sigmoid, sigmoid_backward, Scalar, Tensor,
};

fn check_image<T: Scalar>(x: &Tensor<T>, what: &str) -> Result<()> {
    if x.channels() != 3 {
        return Err(Error::validation(format!("{what} must have 3 channels, got {}", x.channels())));
    }
    if !x.is_finite() {
        return Err(Error::validation(format!("{what} contains non-finite values")));
    }
    Ok(())
}

fn check_same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::validation(format!("{what}: shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    Ok(())
}

/// General features `f_g` of a batch of compressed frames (N×3×H×W).
pub fn extract_general_features<T: Scalar>(c: &Tensor<T>, w: &StepWeights<T>) -> Result<Tensor<T>> {
    check_image(c, "compressed frame")?;
    Stack::encoder(w.spec()).forward(w, c, None)
}

/// Shared decoder: the compressed frame plus a predicted residual. Not clamped.
pub fn decode_features<T: Scalar>(f: &Tensor<T>, c: &Tensor<T>, w: &StepWeights<T>) -> Result<Tensor<T>> {
    let mut out = Stack::decoder(w.spec()).forward(w, f, None)?;
    out.add_assign(c)?;
    Ok(out)
}

/// Reference features `f_r`.
pub fn encode_reference<T: Scalar>(x_ref: &Tensor<T>, w: &StepWeights<T>) -> Result<Tensor<T>> {
    check_image(x_ref, "reference frame")?;
    Stack::ref_encoder(w.spec()).forward(w, x_ref, None)
}

fn split_offset_head<T: Scalar>(raw: &Tensor<T>, taps: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let offsets = raw.channel_range(0, 2 * taps)?;
    let mask = sigmoid(&raw.channel_range(2 * taps, taps)?);
    Ok((offsets, mask))
}

/// Offsets and modulation mask from the concatenated features.
pub fn predict_offsets<T: Scalar>(
    f_g: &Tensor<T>,
    f_r: &Tensor<T>,
    w: &StepWeights<T>,
) -> Result<(OffsetField<T>, ModulationMask<T>)> {
    check_same_shape(f_g, f_r, "predict_offsets")?;
    let raw = Stack::offset(w.spec()).forward(w, &Tensor::concat_channels(&[f_g, f_r])?, None)?;
    let (o, m) = split_offset_head(&raw, w.spec().taps())?;
    Ok((OffsetField(o), ModulationMask(m)))
}

fn deform_raw<T: Scalar>(src: &Tensor<T>, o: &Tensor<T>, m: &Tensor<T>, w: &StepWeights<T>) -> Result<Tensor<T>> {
    deformable_conv(
        src,
        o,
        m,
        w.param(&format!("{}.weight", names::DEFORM)),
        w.param(&format!("{}.bias", names::DEFORM)).data(),
    )
}

/// Deformable layer with `C + 1` outputs: aligned features and, through a
/// sigmoid, the confidence map.
pub fn align_and_gate<T: Scalar>(
    source: &Tensor<T>,
    o: &OffsetField<T>,
    m: &ModulationMask<T>,
    w: &StepWeights<T>,
) -> Result<(Tensor<T>, ConfidenceMap<T>)> {
    let c = w.spec().channels;
    let raw = deform_raw(source, &o.0, &m.0, w)?;
    Ok((raw.channel_range(0, c)?, ConfidenceMap(sigmoid(&raw.channel_range(c, 1)?))))
}

/// Refinement of the aligned features.
pub fn refine<T: Scalar>(f_deform: &Tensor<T>, w: &StepWeights<T>) -> Result<Tensor<T>> {
    Stack::refine(w.spec()).forward(w, f_deform, None)
}

/// `f_out = f_g + C ⊙ f_refine`, with `C` broadcast over channels.
pub fn fuse<T: Scalar>(f_g: &Tensor<T>, conf: &ConfidenceMap<T>, f_refine: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape(f_g, f_refine, "fuse")?;
    let [n, ch, h, wd] = f_g.shape();
    conf.0.expect_shape([n, 1, h, wd], "confidence map")?;
    let mut out = f_g.clone();
    for b in 0..n {
        let cm = conf.0.plane(b, 0);
        for c in 0..ch {
            let r = f_refine.plane(b, c);
            for ((o, &k), &v) in out.plane_mut(b, c).iter_mut().zip(cm).zip(r) {
                *o += k * v;
            }
        }
    }
    Ok(out)
}

fn deform_source<'a, T: Scalar>(w: &StepWeights<T>, f_g: &'a Tensor<T>, f_r: &'a Tensor<T>) -> &'a Tensor<T> {
    match w.spec().deform_source {
        DeformSource::RefFeatures => f_r,
        DeformSource::GeneralFeatures => f_g,
    }
}

/// Step-2 output from precomputed features. `confidence_override` replaces
/// the predicted confidence map with a constant.
pub fn enhance_with_reference<T: Scalar>(
    c: &Tensor<T>,
    f_g: &Tensor<T>,
    f_r: &Tensor<T>,
    w: &StepWeights<T>,
    confidence_override: Option<T>,
) -> Result<Tensor<T>> {
    let (o, m) = predict_offsets(f_g, f_r, w)?;
    let (f_deform, mut conf) = align_and_gate(deform_source(w, f_g, f_r), &o, &m, w)?;
    if let Some(v) = confidence_override {
        conf = ConfidenceMap(conf.0.map(|_| v));
    }
    let f_refine = refine(&f_deform, w)?;
    decode_features(&fuse(f_g, &conf, &f_refine)?, c, w)
}

/// Activations of a step-1 forward pass.
#[derive(Debug)]
pub struct Step1Trace<T: Scalar> {
    encoder: StackCache<T>,
    decoder: StackCache<T>,
}

/// Step-1 forward pass keeping activations. Returns the unclamped output.
pub fn step1_forward_train<T: Scalar>(c: &Tensor<T>, w: &StepWeights<T>) -> Result<(Tensor<T>, Step1Trace<T>)> {
    check_image(c, "compressed frame")?;
    let spec = w.spec();
    let mut trace = Step1Trace {
        encoder: StackCache::default(),
        decoder: StackCache::default(),
    };
    let f_g = Stack::encoder(spec).forward(w, c, Some(&mut trace.encoder))?;
    let mut out = Stack::decoder(spec).forward(w, &f_g, Some(&mut trace.decoder))?;
    out.add_assign(c)?;
    Ok((out, trace))
}

/// Accumulates step-1 parameter gradients for `d loss / d output = grad`.
pub fn step1_backward<T: Scalar>(
    w: &StepWeights<T>,
    trace: &Step1Trace<T>,
    grad: Tensor<T>,
    grads: &mut Gradients<T>,
) -> Result<()> {
    let spec = w.spec();
    let g_f = Stack::decoder(spec)
        .backward(w, &trace.decoder, grad, true, Some(grads))?
        .expect("input grad requested");
    Stack::encoder(spec).backward(w, &trace.encoder, g_f, false, Some(grads))?;
    Ok(())
}

/// Activations of a step-2 forward pass.
#[derive(Debug)]
pub struct Step2Trace<T: Scalar> {
    encoder: Option<StackCache<T>>,
    ref_encoder: StackCache<T>,
    offset: StackCache<T>,
    refine: StackCache<T>,
    decoder: StackCache<T>,
    f_g: Tensor<T>,
    f_r: Tensor<T>,
    offsets: Tensor<T>,
    mask: Tensor<T>,
    confidence: Tensor<T>,
    f_refine: Tensor<T>,
}

impl<T: Scalar> Step2Trace<T> {
    pub fn confidence(&self) -> &Tensor<T> {
        &self.confidence
    }
}

/// Step-2 forward pass keeping activations. With `train_step1` the encoder
/// activations are kept too, so [`step2_backward`] can update it.
pub fn step2_forward_train<T: Scalar>(
    c: &Tensor<T>,
    x_ref: &Tensor<T>,
    w: &StepWeights<T>,
    train_step1: bool,
) -> Result<(Tensor<T>, Step2Trace<T>)> {
    check_image(c, "compressed frame")?;
    check_image(x_ref, "reference frame")?;
    check_same_shape(c, x_ref, "compressed and reference batches")?;
    let spec = w.spec();
    let taps = spec.taps();
    let ch = spec.channels;

    let mut enc_cache = train_step1.then(StackCache::default);
    let f_g = Stack::encoder(spec).forward(w, c, enc_cache.as_mut())?;
    let mut ref_cache = StackCache::default();
    let f_r = Stack::ref_encoder(spec).forward(w, x_ref, Some(&mut ref_cache))?;

    let mut offset_cache = StackCache::default();
    let raw = Stack::offset(spec).forward(w, &Tensor::concat_channels(&[&f_g, &f_r])?, Some(&mut offset_cache))?;
    let (offsets, mask) = split_offset_head(&raw, taps)?;

    let d = deform_raw(deform_source(w, &f_g, &f_r), &offsets, &mask, w)?;
    let f_deform = d.channel_range(0, ch)?;
    let confidence = sigmoid(&d.channel_range(ch, 1)?);

    let mut refine_cache = StackCache::default();
    let f_refine = Stack::refine(spec).forward(w, &f_deform, Some(&mut refine_cache))?;
    let f_out = fuse(&f_g, &ConfidenceMap(confidence.clone()), &f_refine)?;
    let mut dec_cache = StackCache::default();
    let mut out = Stack::decoder(spec).forward(w, &f_out, Some(&mut dec_cache))?;
    out.add_assign(c)?;

    Ok((
        out,
        Step2Trace {
            encoder: enc_cache,
            ref_encoder: ref_cache,
            offset: offset_cache,
            refine: refine_cache,
            decoder: dec_cache,
            f_g,
            f_r,
            offsets,
            mask,
            confidence,
            f_refine,
        },
    ))
}

/// Accumulates gradients for `d loss / d output = grad`. Step-2 tensors
/// always receive gradients; step-1 tensors only when the trace was made
/// with `train_step1`.
pub fn step2_backward<T: Scalar>(
    w: &StepWeights<T>,
    trace: &Step2Trace<T>,
    grad: Tensor<T>,
    grads: &mut Gradients<T>,
) -> Result<()> {
    let spec = w.spec();
    let train_step1 = trace.encoder.is_some();
    let [n, ch, h, wd] = trace.f_g.shape();
    let taps = spec.taps();

    let g_out = Stack::decoder(spec)
        .backward(w, &trace.decoder, grad, true, train_step1.then_some(&mut *grads))?
        .expect("input grad requested");

    // f_out = f_g + C·f_refine
    let mut g_conf = Tensor::zeros([n, 1, h, wd]);
    let mut g_refine = Tensor::zeros([n, ch, h, wd]);
    for b in 0..n {
        let cm = trace.confidence.plane(b, 0);
        for c in 0..ch {
            let go = g_out.plane(b, c);
            let fr = trace.f_refine.plane(b, c);
            for ((gr, &g), &k) in g_refine.plane_mut(b, c).iter_mut().zip(go).zip(cm) {
                *gr = k * g;
            }
            for ((acc, &g), &v) in g_conf.plane_mut(b, 0).iter_mut().zip(go).zip(fr) {
                *acc += g * v;
            }
        }
    }

    let g_deform_feat = Stack::refine(spec)
        .backward(w, &trace.refine, g_refine, true, Some(&mut *grads))?
        .expect("input grad requested");
    let g_conf_pre = sigmoid_backward(&trace.confidence, &g_conf)?;
    let g_d = Tensor::concat_channels(&[&g_deform_feat, &g_conf_pre])?;

    let samples_ref = spec.deform_source == DeformSource::RefFeatures;
    let source = deform_source(w, &trace.f_g, &trace.f_r);
    let dg = deformable_conv_backward(
        source,
        &trace.offsets,
        &trace.mask,
        w.param(&format!("{}.weight", names::DEFORM)),
        &g_d,
        samples_ref || train_step1,
        true,
    )?;
    accumulate(grads, &format!("{}.weight", names::DEFORM), dg.weight.expect("weight grad requested"))?;
    let bias = Tensor::from_vec([ch + 1, 1, 1, 1], dg.bias.expect("bias grad requested"))?;
    accumulate(grads, &format!("{}.bias", names::DEFORM), bias)?;

    let g_mask_pre = sigmoid_backward(&trace.mask, &dg.mask)?;
    let g_raw = Tensor::concat_channels(&[&dg.offset, &g_mask_pre])?;
    debug_assert_eq!(g_raw.channels(), 3 * taps);
    let g_cat = Stack::offset(spec)
        .backward(w, &trace.offset, g_raw, true, Some(&mut *grads))?
        .expect("input grad requested");

    let mut g_fr = g_cat.channel_range(ch, ch)?;
    if samples_ref {
        g_fr.add_assign(dg.input.as_ref().expect("input grad requested"))?;
    }
    Stack::ref_encoder(spec).backward(w, &trace.ref_encoder, g_fr, false, Some(&mut *grads))?;

    if let Some(enc) = &trace.encoder {
        let mut g_fg = g_cat.channel_range(0, ch)?;
        g_fg.add_assign(&g_out)?;
        if !samples_ref {
            g_fg.add_assign(dg.input.as_ref().expect("input grad requested"))?;
        }
        Stack::encoder(spec).backward(w, enc, g_fg, false, Some(grads))?;
    }
    Ok(())
}
