use crate::error::{Result, TvnetError};
use crate::tensor::Tensor;

/// A single-channel 2-D map stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Map {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Map {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(TvnetError::Shape(format!(
                "{height}x{width} map needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Map {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Map {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Map {
            height,
            width,
            data,
        }
    }

    /// Plane `(n, c)` of a tensor.
    pub fn from_tensor_plane(t: &Tensor, n: usize, c: usize) -> Self {
        let (height, width) = t.spatial();
        Map {
            height,
            width,
            data: t.plane(n, c).to_vec(),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec([1, 1, self.height, self.width], self.data.clone()).expect("sizes agree")
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Map {
        Map {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Binary view: `v >= threshold`.
    pub fn binarize(&self, threshold: f64) -> Map {
        self.map(|v| if v >= threshold { 1.0 } else { 0.0 })
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn same_size(&self, other: &Map) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn flip_horizontal(&self) -> Map {
        Map::from_fn(self.height, self.width, |y, x| {
            self.get(y, self.width - 1 - x)
        })
    }

    pub fn flip_vertical(&self) -> Map {
        Map::from_fn(self.height, self.width, |y, x| {
            self.get(self.height - 1 - y, x)
        })
    }

    /// Bilinear resize with half-pixel centers.
    pub fn resize(&self, height: usize, width: usize) -> Result<Map> {
        let t = crate::tensor::resize_bilinear(&self.to_tensor(), height, width)?;
        Ok(Map {
            height,
            width,
            data: t.into_data(),
        })
    }
}
