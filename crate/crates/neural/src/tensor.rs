use crate::scalar::Scalar;
use crate::{Error, Result};

/// Real plane stack in NHWC order: `(batch, S, T, channels)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Planes<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Scalar> Planes<T> {
    pub fn zeros(batch: usize, height: usize, width: usize, channels: usize) -> Self {
        Planes {
            shape: [batch, height, width, channels],
            data: vec![T::zero(); batch * height * width * channels],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!("{} values for shape {shape:?}", data.len())));
        }
        Ok(Planes { shape, data })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[3]
    }

    /// Number of pixels `batch·S·T`.
    pub fn pixels(&self) -> usize {
        self.shape[0] * self.shape[1] * self.shape[2]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    fn offset(&self, n: usize, y: usize, x: usize, c: usize) -> usize {
        ((n * self.shape[1] + y) * self.shape[2] + x) * self.shape[3] + c
    }

    pub fn get(&self, n: usize, y: usize, x: usize, c: usize) -> T {
        self.data[self.offset(n, y, x, c)]
    }

    pub fn set(&mut self, n: usize, y: usize, x: usize, c: usize, v: T) {
        let i = self.offset(n, y, x, c);
        self.data[i] = v;
    }

    /// The `n`-th batch entry as a batch of one.
    pub fn item(&self, n: usize) -> Planes<T> {
        let per = self.shape[1] * self.shape[2] * self.shape[3];
        Planes {
            shape: [1, self.shape[1], self.shape[2], self.shape[3]],
            data: self.data[n * per..(n + 1) * per].to_vec(),
        }
    }

    /// Concatenates along the batch dimension.
    pub fn stack(items: &[Planes<T>]) -> Result<Planes<T>> {
        let first = items.first().ok_or_else(|| Error::Shape("nothing to stack".into()))?;
        let [_, h, w, c] = first.shape;
        let mut data = Vec::with_capacity(items.iter().map(|p| p.data.len()).sum());
        let mut batch = 0;
        for p in items {
            if p.shape[1..] != [h, w, c] {
                return Err(Error::Shape(format!("cannot stack {:?} onto {:?}", p.shape, first.shape)));
            }
            batch += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        Ok(Planes {
            shape: [batch, h, w, c],
            data,
        })
    }

    /// Keeps the first `channels` channels of every pixel.
    pub fn crop_channels(&self, channels: usize) -> Result<Planes<T>> {
        let c = self.shape[3];
        if channels > c {
            return Err(Error::Shape(format!("cannot crop {c} channels to {channels}")));
        }
        let data = self.data.chunks(c).flat_map(|px| px[..channels].iter().copied()).collect();
        Ok(Planes {
            shape: [self.shape[0], self.shape[1], self.shape[2], channels],
            data,
        })
    }

    pub fn add_assign(&mut self, other: &Planes<T>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!("{:?} + {:?}", self.shape, other.shape)));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + *b;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Planes<U> {
        Planes {
            shape: self.shape,
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }
}
