//! Twin-mask inference: restore the image twice, once under `M` and once
//! under `1 − M`, and take every pixel from the pass in which it was hidden.

use super::{Model, P};
use crate::error::{Error, Result};
use crate::masking::{apply_mask, Mask};
use crate::tensor::Tensor;

/// `M ⊙ f(x with M hidden) + (1 − M) ⊙ f(x with 1 − M hidden)`.
pub fn twin_mask_infer(model: &Model, image: &Tensor<P>, mask: &Mask) -> Result<Tensor<P>> {
    let s = image.shape();
    if s.len() != 3 || s[1] != mask.height() || s[2] != mask.width() {
        return Err(Error::shape("twin_mask_infer", s, &[0, mask.height(), mask.width()]));
    }
    let first = model.restore(&apply_mask(image, mask, 0.0)?)?.output;
    let second = model.restore(&apply_mask(image, &mask.complement(), 0.0)?)?.output;
    let hw = mask.len();
    let (a, b) = (first.data(), second.data());
    Ok(Tensor::from_fn(s, |i| if mask.is_masked(i % hw) { a[i] } else { b[i] }))
}

/// A single pass on the unmasked input.
pub fn whole_input_infer(model: &Model, image: &Tensor<P>) -> Result<Tensor<P>> {
    Ok(model.restore(image)?.output)
}
