//! Convolutional triplet scorer.
//!
//! `h` and `v_r` are each reshaped row-major to `rows × cols` and stacked
//! into a `2·rows × cols` image. Every filter is applied as a valid
//! (unpadded) cross-correlation, the feature maps pass through ReLU and are
//! flattened filter-major then row-major, projected to `d` by `Q`, passed
//! through ReLU again and dotted with `t`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::num::{relu, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvEGeometry {
    pub d: usize,
    pub rows: usize,
    pub cols: usize,
    pub filters: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
}

impl Default for ConvEGeometry {
    fn default() -> Self {
        ConvEGeometry {
            d: 64,
            rows: 8,
            cols: 8,
            filters: 8,
            kernel_h: 3,
            kernel_w: 3,
        }
    }
}

impl ConvEGeometry {
    /// Small geometry used by the closed loop: d = 16 as 4×4, four 3×3 filters.
    pub fn compact() -> Self {
        ConvEGeometry {
            d: 16,
            rows: 4,
            cols: 4,
            filters: 4,
            kernel_h: 3,
            kernel_w: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows * self.cols != self.d {
            return Err(Error::InvalidArgument(format!(
                "reshape {}x{} does not cover d = {}",
                self.rows, self.cols, self.d
            )));
        }
        if self.filters == 0
            || self.kernel_h == 0
            || self.kernel_w == 0
            || self.kernel_h > 2 * self.rows
            || self.kernel_w > self.cols
        {
            return Err(Error::InvalidArgument("kernel does not fit the stacked input".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn out_h(&self) -> usize {
        2 * self.rows - self.kernel_h + 1
    }

    #[inline]
    pub fn out_w(&self) -> usize {
        self.cols - self.kernel_w + 1
    }

    /// Length of the flattened feature map.
    #[inline]
    pub fn flat(&self) -> usize {
        self.filters * self.out_h() * self.out_w()
    }
}

/// Filter bank `w` and projection `Q` (stored as `d × flat`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ConvEParams<T> {
    pub geometry: ConvEGeometry,
    /// `filters × (kernel_h · kernel_w)`, each kernel row-major
    pub filter: Matrix<T>,
    pub projection: Matrix<T>,
}

/// Intermediate values kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ConvECache<T> {
    image: Vec<T>,
    conv_pre: Vec<T>,
    flat: Vec<T>,
    proj_pre: Vec<T>,
    z: Vec<T>,
}

pub struct ConvEGrads<T> {
    pub h: Vec<T>,
    pub r: Vec<T>,
    pub t: Vec<T>,
}

impl<T: Scalar> ConvEParams<T> {
    pub fn init<R: Rng>(geometry: ConvEGeometry, rng: &mut R) -> Result<Self> {
        geometry.validate()?;
        let bound = super::embedding::init_bound(geometry.d);
        Ok(ConvEParams {
            geometry,
            filter: Matrix::uniform(geometry.filters, geometry.kernel_h * geometry.kernel_w, bound, rng),
            projection: Matrix::uniform(geometry.d, geometry.flat(), bound, rng),
        })
    }

    pub fn zeros(geometry: ConvEGeometry) -> Self {
        ConvEParams {
            geometry,
            filter: Matrix::zeros(geometry.filters, geometry.kernel_h * geometry.kernel_w),
            projection: Matrix::zeros(geometry.d, geometry.flat()),
        }
    }

    fn check(&self, h: &[T], r: &[T], t: &[T]) -> Result<()> {
        let d = self.geometry.d;
        for len in [h.len(), r.len(), t.len()] {
            if len != d {
                return Err(Error::DimensionMismatch { expected: d, got: len });
            }
        }
        Ok(())
    }

    pub fn score(&self, h: &[T], r: &[T], t: &[T]) -> Result<T> {
        self.check(h, r, t)?;
        Ok(self.forward(h, r, t).0)
    }

    /// Score plus cache. Inputs must already have dimension `d`.
    pub fn forward(&self, h: &[T], r: &[T], t: &[T]) -> (T, ConvECache<T>) {
        let g = &self.geometry;
        let mut image = Vec::with_capacity(2 * g.d);
        image.extend_from_slice(h);
        image.extend_from_slice(r);

        let (oh, ow) = (g.out_h(), g.out_w());
        let mut conv_pre = vec![T::zero(); g.flat()];
        for f in 0..g.filters {
            let k = self.filter.row(f);
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = T::zero();
                    for a in 0..g.kernel_h {
                        let img_row = &image[(i + a) * g.cols + j..];
                        let k_row = &k[a * g.kernel_w..(a + 1) * g.kernel_w];
                        acc += dot(k_row, &img_row[..g.kernel_w]);
                    }
                    conv_pre[(f * oh + i) * ow + j] = acc;
                }
            }
        }
        let flat: Vec<T> = conv_pre.iter().map(|&x| relu(x)).collect();
        let proj_pre = self.projection.matvec(&flat);
        let z: Vec<T> = proj_pre.iter().map(|&x| relu(x)).collect();
        let score = dot(&z, t);
        (
            score,
            ConvECache {
                image,
                conv_pre,
                flat,
                proj_pre,
                z,
            },
        )
    }

    /// Backpropagates `upstream = dL/dscore`, accumulating parameter
    /// gradients into `grad` and returning input gradients.
    pub fn backward(&self, t: &[T], cache: &ConvECache<T>, upstream: T, grad: &mut ConvEParams<T>) -> ConvEGrads<T> {
        let g = &self.geometry;
        let dt: Vec<T> = cache.z.iter().map(|&z| upstream * z).collect();
        let dpre: Vec<T> = t
            .iter()
            .zip(&cache.proj_pre)
            .map(|(&ti, &p)| if p > T::zero() { upstream * ti } else { T::zero() })
            .collect();
        grad.projection.add_outer(T::one(), &dpre, &cache.flat);
        let dflat = self.projection.matvec_t(&dpre);

        let (oh, ow) = (g.out_h(), g.out_w());
        let mut dimage = vec![T::zero(); 2 * g.d];
        for f in 0..g.filters {
            for i in 0..oh {
                for j in 0..ow {
                    let idx = (f * oh + i) * ow + j;
                    if cache.conv_pre[idx] <= T::zero() {
                        continue;
                    }
                    let dc = dflat[idx];
                    if dc == T::zero() {
                        continue;
                    }
                    for a in 0..g.kernel_h {
                        for b in 0..g.kernel_w {
                            let pix = (i + a) * g.cols + j + b;
                            let k = a * g.kernel_w + b;
                            let gk = grad.filter.get(f, k);
                            grad.filter.set(f, k, gk + dc * cache.image[pix]);
                            dimage[pix] += dc * self.filter.get(f, k);
                        }
                    }
                }
            }
        }
        let r = dimage.split_off(g.d);
        ConvEGrads { h: dimage, r, t: dt }
    }

    pub fn is_finite(&self) -> bool {
        self.filter.is_finite() && self.projection.is_finite()
    }

    pub(crate) fn flat_len(&self) -> usize {
        self.filter.data().len() + self.projection.data().len()
    }

    pub(crate) fn flat_get(&self, i: usize) -> T {
        let nf = self.filter.data().len();
        if i < nf {
            self.filter.data()[i]
        } else {
            self.projection.data()[i - nf]
        }
    }

    pub(crate) fn flat_set(&mut self, i: usize, v: T) {
        let nf = self.filter.data().len();
        if i < nf {
            self.filter.data_mut()[i] = v;
        } else {
            self.projection.data_mut()[i - nf] = v;
        }
    }

    /// `self += scale · other`
    pub fn axpy(&mut self, scale: T, other: &ConvEParams<T>) {
        self.filter.axpy(scale, &other.filter);
        self.projection.axpy(scale, &other.projection);
    }
}
