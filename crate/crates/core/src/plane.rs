use crate::error::{Error, Result};
use crate::nn::Tensor;

/// A single-component image in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "plane {width}x{height} needs {} samples, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, v: f64) -> Self {
        Self {
            width,
            height,
            data: vec![v; width * height],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `[1, 1, height, width]` tensor view (copied).
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec([1, 1, self.height, self.width], self.data.clone()).expect("plane size")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.n() != 1 || t.c() != 1 {
            return Err(Error::Shape(format!("expected a single plane, got {:?}", t.shape())));
        }
        Self::new(t.w(), t.h(), t.data().to_vec())
    }

    /// Check that both sides are multiples of `multiple`.
    pub fn require_multiple(&self, multiple: usize) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.width % multiple != 0 || self.height % multiple != 0 {
            return Err(Error::Dimensions {
                width: self.width,
                height: self.height,
                multiple,
            });
        }
        Ok(())
    }

    /// Extend to the next multiple of `multiple` by repeating the last row and column.
    pub fn pad_replicate(&self, multiple: usize) -> Plane {
        let w = self.width.div_ceil(multiple) * multiple;
        let h = self.height.div_ceil(multiple) * multiple;
        let mut out = Plane::zeros(w, h);
        for y in 0..h {
            let sy = y.min(self.height - 1);
            for x in 0..w {
                out.data[y * w + x] = self.get(sy, x.min(self.width - 1));
            }
        }
        out
    }

    pub fn crop(&self, width: usize, height: usize) -> Plane {
        assert!(width <= self.width && height <= self.height, "crop larger than plane");
        let mut out = Plane::zeros(width, height);
        for y in 0..height {
            out.data[y * width..(y + 1) * width].copy_from_slice(&self.data[y * self.width..y * self.width + width]);
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mse(&self, other: &Plane) -> f64 {
        assert_eq!((self.width, self.height), (other.width, other.height), "mse size mismatch");
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / self.data.len() as f64
    }
}

/// PSNR in dB for 8-bit peak 255.
pub fn psnr(mse: f64) -> f64 {
    if mse <= 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0 * 255.0 / mse).log10()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replicate_pad_and_crop() {
        let p = Plane::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let q = p.pad_replicate(4);
        assert_eq!((q.width, q.height), (4, 4));
        assert_eq!(q.data, vec![1.0, 2.0, 3.0, 3.0, 4.0, 5.0, 6.0, 6.0, 4.0, 5.0, 6.0, 6.0, 4.0, 5.0, 6.0, 6.0]);
        assert_eq!(q.crop(3, 2), p);
        assert!(p.require_multiple(2).is_err());
        assert!(q.require_multiple(4).is_ok());
    }
}
