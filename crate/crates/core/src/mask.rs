//! Bit-packed boolean masks and their run-length encoding.

use alloc::vec::Vec;

use crate::{Error, Result};

/// Row-major boolean raster packed into 64-bit words.
#[derive(Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    words: Vec<u64>,
}

impl core::fmt::Debug for Mask {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Mask").field("width", &self.width).field("height", &self.height).field("area", &self.area()).finish()
    }
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, words: alloc::vec![0; (width * height).div_ceil(64)] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for v in 0..height {
            for u in 0..width {
                if f(u, v) {
                    m.set(u, v, true);
                }
            }
        }
        m
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self::from_fn(width, height, |_, _| true)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> bool {
        self.get_linear(v * self.width + u)
    }

    #[inline]
    fn get_linear(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: bool) {
        let i = v * self.width + u;
        if value {
            self.words[i / 64] |= 1 << (i % 64);
        } else {
            self.words[i / 64] &= !(1 << (i % 64));
        }
    }

    /// Number of set pixels.
    pub fn area(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Set pixels as `(u, v)` in row-major order.
    pub fn iter_set(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let width = self.width;
        self.words.iter().enumerate().flat_map(move |(wi, &word)| {
            let mut w = word;
            core::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let bit = w.trailing_zeros() as usize;
                w &= w - 1;
                let i = wi * 64 + bit;
                Some((i % width, i / width))
            })
        })
    }

    /// Tight inclusive pixel bounds of the set pixels.
    pub fn bounding_rect(&self) -> Option<PixelRect> {
        let mut it = self.iter_set();
        let (u0, v0) = it.next()?;
        let mut r = PixelRect { x0: u0, y0: v0, x1: u0, y1: v0 };
        for (u, v) in it {
            r.x0 = r.x0.min(u);
            r.x1 = r.x1.max(u);
            r.y0 = r.y0.min(v);
            r.y1 = r.y1.max(v);
        }
        Some(r)
    }

    /// Alternating run lengths starting with a run of `false` (possibly zero).
    pub fn to_rle(&self) -> Vec<u32> {
        let mut runs = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for i in 0..self.len() {
            let bit = self.get_linear(i);
            if bit != current {
                runs.push(run);
                run = 0;
                current = bit;
            }
            run += 1;
        }
        runs.push(run);
        runs
    }

    pub fn from_rle(width: usize, height: usize, runs: &[u32]) -> Result<Self> {
        let total: usize = runs.iter().map(|r| *r as usize).sum();
        if total != width * height {
            return Err(Error::BadRle { expected: width * height, found: total });
        }
        let mut m = Self::new(width, height);
        let mut pos = 0usize;
        for (k, run) in runs.iter().enumerate() {
            let run = *run as usize;
            if k % 2 == 1 {
                for i in pos..pos + run {
                    m.words[i / 64] |= 1 << (i % 64);
                }
            }
            pos += run;
        }
        Ok(m)
    }
}

/// Inclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelRect {
    /// Grows the rectangle by `pad` pixels, clipped to a `width × height` image.
    pub fn padded(&self, pad: usize, width: usize, height: usize) -> PixelRect {
        PixelRect {
            x0: self.x0.saturating_sub(pad),
            y0: self.y0.saturating_sub(pad),
            x1: (self.x1 + pad).min(width.saturating_sub(1)),
            y1: (self.y1 + pad).min(height.saturating_sub(1)),
        }
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }
}
