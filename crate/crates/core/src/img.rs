//! Row-major interleaved float images; row 0 is the top of the frame.

use crate::S;

#[derive(Clone, Debug, PartialEq)]
pub struct ImageF {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<S>,
}

impl ImageF {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        assert!(width > 0 && height > 0 && channels > 0, "empty image");
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<S>) -> Self {
        assert_eq!(data.len(), width * height * channels, "data length mismatch");
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    fn idx(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        (y * self.width + x) * self.channels
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, c: usize) -> S {
        self.data[self.idx(x, y) + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: S) {
        let i = self.idx(x, y) + c;
        self.data[i] = v;
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[S] {
        let i = self.idx(x, y);
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [S] {
        let i = self.idx(x, y);
        let c = self.channels;
        &mut self.data[i..i + c]
    }

    /// Channel mean at a pixel.
    pub fn luminance(&self, x: usize, y: usize) -> S {
        let p = self.pixel(x, y);
        p.iter().sum::<S>() / self.channels as S
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Per-pixel, per-channel median across a stack of same-shaped images. An
/// even stack takes the midpoint of the two central values.
pub fn median_stack(stack: &[ImageF]) -> ImageF {
    assert!(!stack.is_empty(), "median of an empty stack");
    let (w, h, ch) = (stack[0].width, stack[0].height, stack[0].channels);
    for im in stack {
        assert!(
            im.width == w && im.height == h && im.channels == ch,
            "median stack shape mismatch"
        );
    }
    let mut out = ImageF::new(w, h, ch);
    let mut vals = vec![0.0; stack.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                for (k, im) in stack.iter().enumerate() {
                    vals[k] = im.at(x, y, c);
                }
                vals.sort_by(|a, b| a.partial_cmp(b).expect("non-finite pixel in median"));
                let n = vals.len();
                let m = if n % 2 == 1 {
                    vals[n / 2]
                } else {
                    0.5 * (vals[n / 2 - 1] + vals[n / 2])
                };
                out.set(x, y, c, m);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interleaved_indexing_round_trips() {
        let mut im = ImageF::new(4, 3, 3);
        im.set(2, 1, 0, 0.25);
        im.set(2, 1, 2, 0.75);
        assert_eq!(im.at(2, 1, 0), 0.25);
        assert_eq!(im.at(2, 1, 1), 0.0);
        assert_eq!(im.pixel(2, 1), &[0.25, 0.0, 0.75]);
        assert_eq!(im.luminance(2, 1), 1.0 / 3.0);
    }

    #[test]
    fn median_odd_picks_middle_even_averages() {
        let mut a = ImageF::new(1, 1, 1);
        let mut b = ImageF::new(1, 1, 1);
        let mut c = ImageF::new(1, 1, 1);
        a.set(0, 0, 0, 5.0);
        b.set(0, 0, 0, 1.0);
        c.set(0, 0, 0, 2.0);
        let odd = median_stack(&[a.clone(), b.clone(), c.clone()]);
        assert_eq!(odd.at(0, 0, 0), 2.0);
        let even = median_stack(&[a, b]);
        assert_eq!(even.at(0, 0, 0), 3.0);
    }
}
