use serde::{Deserialize, Serialize};

use super::DtError;

/// Dense binary mask stored row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Bitmap {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Bitmap {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self { height, width, data }
    }

    /// Builds a bitmap from row-major data. Fails when the length does not match.
    pub fn from_rows(height: usize, width: usize, data: Vec<bool>) -> Result<Self, DtError> {
        if data.len() != height * width {
            return Err(DtError::Dimension(format!(
                "bitmap data has {} cells, expected {}x{}",
                data.len(),
                height,
                width
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, value: bool) {
        self.data[y * self.width + x] = value;
    }

    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    /// Iterates `(y, x)` of set pixels in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v)
            .map(move |(i, _)| (i / w, i % w))
    }

    pub fn intersection_area(&self, other: &Bitmap) -> usize {
        self.data
            .iter()
            .zip(&other.data)
            .filter(|(a, b)| **a && **b)
            .count()
    }

    pub fn union_area(&self, other: &Bitmap) -> usize {
        self.data
            .iter()
            .zip(&other.data)
            .filter(|(a, b)| **a || **b)
            .count()
    }

    pub fn or_assign(&mut self, other: &Bitmap) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a |= *b;
        }
    }

    /// Intersection over union; `None` when both masks are empty.
    pub fn iou(&self, other: &Bitmap) -> Option<f64> {
        let union = self.union_area(other);
        if union == 0 {
            None
        } else {
            Some(self.intersection_area(other) as f64 / union as f64)
        }
    }

    /// Mean `(x, y)` of set pixels.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let mut n = 0usize;
        let (mut sx, mut sy) = (0.0, 0.0);
        for (y, x) in self.pixels() {
            n += 1;
            sx += x as f64;
            sy += y as f64;
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }
}

/// Column-major run-length encoding whose first run counts zeros.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MaskRle {
    /// `[height, width]`
    pub size: [u32; 2],
    pub counts: Vec<u32>,
}

impl MaskRle {
    pub fn empty(height: u32, width: u32) -> Self {
        Self {
            size: [height, width],
            counts: vec![height * width],
        }
    }

    pub fn height(&self) -> u32 {
        self.size[0]
    }

    pub fn width(&self) -> u32 {
        self.size[1]
    }

    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| c as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    /// Checks that the runs cover exactly `height * width` cells.
    pub fn check(&self) -> Result<(), DtError> {
        let total: u64 = self.counts.iter().map(|&c| c as u64).sum();
        let expected = self.size[0] as u64 * self.size[1] as u64;
        if total != expected {
            return Err(DtError::Corruption(format!(
                "run lengths sum to {total}, expected {expected} for size {:?}",
                self.size
            )));
        }
        Ok(())
    }

    /// Tight `(x, y, w, h)` box around the set pixels, computed on the runs.
    pub fn bounding_box(&self) -> Option<(u32, u32, u32, u32)> {
        let h = self.size[0] as u64;
        if h == 0 {
            return None;
        }
        let (mut x0, mut y0, mut x1, mut y1) = (u64::MAX, u64::MAX, 0u64, 0u64);
        let mut pos = 0u64;
        for (i, &c) in self.counts.iter().enumerate() {
            let c = c as u64;
            if i % 2 == 1 && c > 0 {
                let (start, end) = (pos, pos + c - 1);
                let (cs, ce) = (start / h, end / h);
                x0 = x0.min(cs);
                x1 = x1.max(ce);
                if cs == ce {
                    y0 = y0.min(start % h);
                    y1 = y1.max(end % h);
                } else {
                    // run wraps a column boundary, so it touches the last and first row
                    y0 = 0;
                    y1 = h - 1;
                }
            }
            pos += c;
        }
        if x0 == u64::MAX {
            return None;
        }
        Some((x0 as u32, y0 as u32, (x1 - x0 + 1) as u32, (y1 - y0 + 1) as u32))
    }
}

/// Encodes a bitmap column by column, starting with a (possibly zero-length) run of zeros.
pub fn encode_rle(bitmap: &Bitmap) -> Result<MaskRle, DtError> {
    if bitmap.height == 0 || bitmap.width == 0 {
        return Err(DtError::Dimension(format!(
            "cannot encode a {}x{} grid",
            bitmap.height, bitmap.width
        )));
    }
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for x in 0..bitmap.width {
        for y in 0..bitmap.height {
            let v = bitmap.get(y, x);
            if v != current {
                counts.push(run);
                run = 0;
                current = v;
            }
            run += 1;
        }
    }
    counts.push(run);
    Ok(MaskRle {
        size: [bitmap.height as u32, bitmap.width as u32],
        counts,
    })
}

pub fn decode_rle(rle: &MaskRle) -> Result<Bitmap, DtError> {
    rle.check()?;
    let (h, w) = (rle.size[0] as usize, rle.size[1] as usize);
    let mut bitmap = Bitmap::new(h, w);
    let mut pos = 0usize;
    for (i, &c) in rle.counts.iter().enumerate() {
        let c = c as usize;
        if i % 2 == 1 {
            for p in pos..pos + c {
                bitmap.set(p % h, p / h, true);
            }
        }
        pos += c;
    }
    Ok(bitmap)
}
