use super::EvalError;
use crate::tensorio::{Tensor, TensorData};

/// Binary mask, row-major `h x w`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self, EvalError> {
        if bits.len() != height * width {
            return Err(EvalError::ShapeMismatch(format!("{} mask values for a {height}x{width} mask", bits.len())));
        }
        Ok(Self { height, width, bits })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self { height, width, bits: vec![false; height * width] }
    }

    /// Filled axis-aligned rectangle `[x0, x1) x [y0, y1)`, clipped to the mask.
    pub fn rect(height: usize, width: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        let mut m = Self::empty(height, width);
        for y in y0..y1.min(height) {
            for x in x0..x1.min(width) {
                m.bits[y * width + x] = true;
            }
        }
        m
    }

    /// Any non-zero value is foreground.
    pub fn from_tensor(t: &Tensor) -> Result<Self, EvalError> {
        let &[h, w] = t.shape() else {
            return Err(EvalError::ShapeMismatch(format!("mask shape {:?} is not 2-D", t.shape())));
        };
        let bits = match t.data() {
            TensorData::U8(v) => v.iter().map(|&b| b != 0).collect(),
            _ => t.to_f64_vec().into_iter().map(|b| b != 0.0).collect(),
        };
        Self::new(h, w, bits)
    }

    pub fn to_tensor(&self) -> Tensor {
        let bytes = self.bits.iter().map(|&b| u8::from(b)).collect();
        Tensor::from_u8(vec![self.height, self.width], bytes).expect("shape matches")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Tight bounding box `(x0, y0, x1, y1)`, exclusive upper bounds.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) {
                    bb = Some(match bb {
                        None => (x, y, x + 1, y + 1),
                        Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x + 1), d.max(y + 1)),
                    });
                }
            }
        }
        bb
    }

    fn check_same_shape(&self, other: &Mask) -> Result<(), EvalError> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(EvalError::ShapeMismatch(format!(
                "{}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }
}

/// Intersection over union; two empty masks count as a perfect match.
pub fn mask_iou(a: &Mask, b: &Mask) -> Result<f64, EvalError> {
    a.check_same_shape(b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Fraction of pixels on which the two masks agree.
pub fn mask_accuracy(pred: &Mask, gt: &Mask) -> Result<f64, EvalError> {
    pred.check_same_shape(gt)?;
    if pred.bits.is_empty() {
        return Err(EvalError::Empty("mask"));
    }
    let agree = pred.bits.iter().zip(&gt.bits).filter(|(a, b)| a == b).count();
    Ok(agree as f64 / pred.bits.len() as f64)
}

/// Placement of a crop inside the full image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropTransform {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl CropTransform {
    pub fn to_full(&self, x: f64, y: f64) -> (f64, f64) {
        (x + self.x0 as f64, y + self.y0 as f64)
    }

    pub fn to_crop(&self, x: f64, y: f64) -> (f64, f64) {
        (x - self.x0 as f64, y - self.y0 as f64)
    }
}

/// Image with background zeroed, cropped to the mask's bounding box grown by
/// `floor(pad_ratio * size)` on each side and clamped to the image.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedCrop {
    /// Row-major `height x width x channels`.
    pub pixels: Vec<f64>,
    pub channels: usize,
    pub transform: CropTransform,
}

/// `image` has shape `[h, w]` or `[h, w, c]`.
pub fn crop_masked_object(image: &Tensor, mask: &Mask, pad_ratio: f64) -> Result<MaskedCrop, EvalError> {
    if !(pad_ratio >= 0.0 && pad_ratio.is_finite()) {
        return Err(EvalError::InvalidConfig(format!("pad ratio {pad_ratio}")));
    }
    let (h, w, c) = match *image.shape() {
        [h, w] => (h, w, 1),
        [h, w, c] => (h, w, c),
        ref s => return Err(EvalError::ShapeMismatch(format!("image shape {s:?}"))),
    };
    if (h, w) != (mask.height, mask.width) {
        return Err(EvalError::ShapeMismatch(format!("image {h}x{w} vs mask {}x{}", mask.height, mask.width)));
    }
    let (bx0, by0, bx1, by1) = mask.bounding_box().ok_or(EvalError::EmptyMask)?;
    let px = (pad_ratio * (bx1 - bx0) as f64).floor() as usize;
    let py = (pad_ratio * (by1 - by0) as f64).floor() as usize;
    let (x0, y0) = (bx0.saturating_sub(px), by0.saturating_sub(py));
    let (x1, y1) = ((bx1 + px).min(w), (by1 + py).min(h));

    let src = image.to_f64_vec();
    let mut pixels = Vec::with_capacity((x1 - x0) * (y1 - y0) * c);
    for y in y0..y1 {
        for x in x0..x1 {
            let keep = mask.get(y, x);
            let base = (y * w + x) * c;
            pixels.extend(src[base..base + c].iter().map(|&v| if keep { v } else { 0.0 }));
        }
    }
    Ok(MaskedCrop { pixels, channels: c, transform: CropTransform { x0, y0, width: x1 - x0, height: y1 - y0 } })
}
