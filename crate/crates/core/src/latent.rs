//! Latent sequences, left/right stream stacking and the RELT file format.
//!
//! RELT layout (little-endian, 40-byte header):
//!
//! | offset | size | field                      |
//! |--------|------|----------------------------|
//! | 0      | 4    | magic `RELT`               |
//! | 4      | 4    | version (u32, currently 1) |
//! | 8      | 4    | streams (u32)              |
//! | 12     | 4    | channels (u32)             |
//! | 16     | 4    | frames (u32)               |
//! | 20     | 8    | frame rate in Hz (f64)     |
//! | 28     | 4    | dtype code (u32, 1 = f32)  |
//! | 32     | 8    | reserved, zero             |
//!
//! The payload follows as row-major `streams x channels x frames` f32 values.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{s, Array2, Array3, ArrayView2, Axis};

use crate::error::{Error, Result};

pub const RELT_MAGIC: &[u8; 4] = b"RELT";
pub const RELT_VERSION: u32 = 1;
pub const RELT_HEADER_LEN: usize = 40;
pub const DTYPE_F32: u32 = 1;

/// A `channels x frames` latent with its frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSequence {
    data: Array2<f32>,
    frame_rate_hz: f64,
}

fn check_rate(frame_rate_hz: f64) -> Result<()> {
    if !(frame_rate_hz.is_finite() && frame_rate_hz > 0.0) {
        return Err(Error::invalid(
            "frame_rate_hz",
            format!("must be positive and finite, got {frame_rate_hz}"),
        ));
    }
    Ok(())
}

impl LatentSequence {
    pub fn new(data: Array2<f32>, frame_rate_hz: f64) -> Result<Self> {
        check_rate(frame_rate_hz)?;
        let (c, t) = data.dim();
        if c == 0 || t == 0 {
            return Err(Error::Dimension(format!(
                "latent must have positive channels and frames, got {c}x{t}"
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent data".into()));
        }
        Ok(Self {
            data,
            frame_rate_hz,
        })
    }

    pub fn zeros(channels: usize, frames: usize, frame_rate_hz: f64) -> Result<Self> {
        Self::new(Array2::zeros((channels, frames)), frame_rate_hz)
    }

    pub fn channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn frames(&self) -> usize {
        self.data.ncols()
    }

    pub fn frame_rate_hz(&self) -> f64 {
        self.frame_rate_hz
    }

    pub fn data(&self) -> &Array2<f32> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f32> {
        self.data
    }

    pub fn duration_seconds(&self) -> f64 {
        self.frames() as f64 / self.frame_rate_hz
    }
}

/// `streams x channels x frames`; stream 0 is left, stream 1 is right.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedLatent {
    data: Array3<f32>,
    frame_rate_hz: f64,
}

impl StackedLatent {
    pub fn new(data: Array3<f32>, frame_rate_hz: f64) -> Result<Self> {
        check_rate(frame_rate_hz)?;
        let (s, c, t) = data.dim();
        if s == 0 || c == 0 || t == 0 {
            return Err(Error::Dimension(format!(
                "stacked latent must be non-empty, got {s}x{c}x{t}"
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("stacked latent data".into()));
        }
        Ok(Self {
            data,
            frame_rate_hz,
        })
    }

    /// Reinterprets a `(streams * channels) x frames` array, as emitted by the
    /// stereo output projection, as stacked streams.
    pub fn from_flat(flat: Array2<f32>, streams: usize, frame_rate_hz: f64) -> Result<Self> {
        let (rows, t) = flat.dim();
        if streams == 0 || rows % streams != 0 {
            return Err(Error::Dimension(format!(
                "{rows} rows cannot be split into {streams} streams"
            )));
        }
        let data = flat
            .into_shape_with_order((streams, rows / streams, t))
            .map_err(|e| Error::Dimension(e.to_string()))?;
        Self::new(data, frame_rate_hz)
    }

    pub fn streams(&self) -> usize {
        self.data.dim().0
    }

    pub fn channels(&self) -> usize {
        self.data.dim().1
    }

    pub fn frames(&self) -> usize {
        self.data.dim().2
    }

    pub fn frame_rate_hz(&self) -> f64 {
        self.frame_rate_hz
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn stream(&self, i: usize) -> ArrayView2<'_, f32> {
        self.data.index_axis(Axis(0), i)
    }

    /// `(streams * channels) x frames` view of the data, streams outermost.
    pub fn to_flat(&self) -> Array2<f32> {
        let (s, c, t) = self.data.dim();
        self.data
            .to_owned()
            .into_shape_with_order((s * c, t))
            .expect("contiguous stacked latent")
    }
}

pub fn stack_streams(left: &LatentSequence, right: &LatentSequence) -> Result<StackedLatent> {
    if left.data.dim() != right.data.dim() {
        return Err(Error::Dimension(format!(
            "left is {:?}, right is {:?}",
            left.data.dim(),
            right.data.dim()
        )));
    }
    if left.frame_rate_hz != right.frame_rate_hz {
        return Err(Error::Dimension(format!(
            "frame rates differ: {} vs {}",
            left.frame_rate_hz, right.frame_rate_hz
        )));
    }
    let (c, t) = left.data.dim();
    let mut data = Array3::zeros((2, c, t));
    data.slice_mut(s![0, .., ..]).assign(&left.data);
    data.slice_mut(s![1, .., ..]).assign(&right.data);
    Ok(StackedLatent {
        data,
        frame_rate_hz: left.frame_rate_hz,
    })
}

pub fn split_streams(stacked: &StackedLatent) -> Result<(LatentSequence, LatentSequence)> {
    if stacked.streams() != 2 {
        return Err(Error::StreamCount(stacked.streams()));
    }
    let make = |i| LatentSequence {
        data: stacked.stream(i).to_owned(),
        frame_rate_hz: stacked.frame_rate_hz,
    };
    Ok((make(0), make(1)))
}

/// Contents of a RELT file.
#[derive(Debug, Clone, PartialEq)]
pub enum LatentFile {
    Single(LatentSequence),
    Stacked(StackedLatent),
}

impl From<LatentSequence> for LatentFile {
    fn from(v: LatentSequence) -> Self {
        LatentFile::Single(v)
    }
}

impl From<StackedLatent> for LatentFile {
    fn from(v: StackedLatent) -> Self {
        LatentFile::Stacked(v)
    }
}

impl LatentFile {
    fn parts(&self) -> (usize, usize, usize, f64, Vec<f32>) {
        match self {
            LatentFile::Single(l) => (
                1,
                l.channels(),
                l.frames(),
                l.frame_rate_hz,
                l.data.iter().copied().collect(),
            ),
            LatentFile::Stacked(s) => (
                s.streams(),
                s.channels(),
                s.frames(),
                s.frame_rate_hz,
                s.data.iter().copied().collect(),
            ),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (streams, channels, frames, rate, values) = self.parts();
        let mut out = Vec::with_capacity(RELT_HEADER_LEN + 4 * values.len());
        out.extend_from_slice(RELT_MAGIC);
        out.extend_from_slice(&RELT_VERSION.to_le_bytes());
        out.extend_from_slice(&(streams as u32).to_le_bytes());
        out.extend_from_slice(&(channels as u32).to_le_bytes());
        out.extend_from_slice(&(frames as u32).to_le_bytes());
        out.extend_from_slice(&rate.to_le_bytes());
        out.extend_from_slice(&DTYPE_F32.to_le_bytes());
        out.extend_from_slice(&[0u8; 8]);
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < RELT_HEADER_LEN {
            return Err(Error::format(
                "header",
                format!("need {RELT_HEADER_LEN} bytes, got {}", bytes.len()),
            ));
        }
        if &bytes[0..4] != RELT_MAGIC {
            return Err(Error::format("magic", format!("got {:?}", &bytes[0..4])));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != RELT_VERSION {
            return Err(Error::format("version", format!("unsupported {version}")));
        }
        let streams = u32_at(8) as usize;
        let channels = u32_at(12) as usize;
        let frames = u32_at(16) as usize;
        let rate = f64::from_le_bytes(bytes[20..28].try_into().unwrap());
        let dtype = u32_at(28);
        if dtype != DTYPE_F32 {
            return Err(Error::format("dtype", format!("unsupported code {dtype}")));
        }
        if streams == 0 {
            return Err(Error::format("streams", "must be positive"));
        }
        if channels == 0 {
            return Err(Error::format("channels", "must be positive"));
        }
        if frames == 0 {
            return Err(Error::format("frames", "must be positive"));
        }
        let n = streams * channels * frames;
        let payload = &bytes[RELT_HEADER_LEN..];
        if payload.len() != 4 * n {
            return Err(Error::format(
                "payload",
                format!(
                    "header declares {n} values ({streams}x{channels}x{frames}), payload holds {} bytes",
                    payload.len()
                ),
            ));
        }
        let values: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let wrap = |e: Error| match e {
            Error::Invalid { reason, .. } => Error::format("frame_rate", reason),
            Error::NonFinite(_) => Error::format("payload", "non-finite value"),
            other => other,
        };
        if streams == 1 {
            let data = Array2::from_shape_vec((channels, frames), values).unwrap();
            LatentSequence::new(data, rate).map(LatentFile::Single).map_err(wrap)
        } else {
            let data = Array3::from_shape_vec((streams, channels, frames), values).unwrap();
            StackedLatent::new(data, rate).map(LatentFile::Stacked).map_err(wrap)
        }
    }

    pub fn into_single(self) -> Result<LatentSequence> {
        match self {
            LatentFile::Single(l) => Ok(l),
            LatentFile::Stacked(s) => Err(Error::Dimension(format!(
                "expected a single-stream latent, file holds {} streams",
                s.streams()
            ))),
        }
    }

    pub fn into_stacked(self) -> Result<StackedLatent> {
        match self {
            LatentFile::Stacked(s) => Ok(s),
            LatentFile::Single(_) => Err(Error::StreamCount(1)),
        }
    }
}

pub fn write_latent_file(path: impl AsRef<Path>, latent: &LatentFile) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&latent.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_latent_file(path: impl AsRef<Path>) -> Result<LatentFile> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    LatentFile::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(c: usize, t: usize, f: impl Fn(usize, usize) -> f32) -> LatentSequence {
        LatentSequence::new(Array2::from_shape_fn((c, t), |(i, j)| f(i, j)), 43.0).unwrap()
    }

    #[test]
    fn stacking_zeros_and_order() {
        let z = stack_streams(&seq(4, 3, |_, _| 0.0), &seq(4, 3, |_, _| 0.0)).unwrap();
        assert_eq!(z.data().dim(), (2, 4, 3));
        assert!(z.data().iter().all(|&v| v == 0.0));

        let mut l = Array2::zeros((4, 3));
        l[[0, 0]] = 1.0;
        let mut r = Array2::zeros((4, 3));
        r[[0, 0]] = 2.0;
        let s = stack_streams(
            &LatentSequence::new(l, 43.0).unwrap(),
            &LatentSequence::new(r, 43.0).unwrap(),
        )
        .unwrap();
        assert_eq!(s.data()[[0, 0, 0]], 1.0);
        assert_eq!(s.data()[[1, 0, 0]], 2.0);
    }

    #[test]
    fn stacking_rejects_mismatch() {
        assert!(matches!(
            stack_streams(&seq(4, 3, |_, _| 0.0), &seq(4, 4, |_, _| 0.0)),
            Err(Error::Dimension(_))
        ));
        let a = seq(4, 3, |_, _| 0.0);
        let b = LatentSequence::zeros(4, 3, 44.0).unwrap();
        assert!(matches!(stack_streams(&a, &b), Err(Error::Dimension(_))));
    }

    #[test]
    fn split_ones_and_bad_stream_count() {
        let s = StackedLatent::new(Array3::ones((2, 64, 10)), 43.0).unwrap();
        let (a, b) = split_streams(&s).unwrap();
        assert_eq!(a.data().dim(), (64, 10));
        assert!(a.data().iter().chain(b.data().iter()).all(|&v| v == 1.0));
        let s3 = StackedLatent::new(Array3::ones((3, 4, 5)), 43.0).unwrap();
        assert!(matches!(split_streams(&s3), Err(Error::StreamCount(3))));
    }

    #[test]
    fn constructors_validate() {
        assert!(LatentSequence::new(Array2::from_elem((2, 2), f32::NAN), 43.0).is_err());
        assert!(LatentSequence::new(Array2::zeros((2, 2)), 0.0).is_err());
        assert!(LatentSequence::new(Array2::zeros((0, 2)), 43.0).is_err());
        assert!(StackedLatent::new(Array3::from_elem((2, 1, 1), f32::INFINITY), 1.0).is_err());
    }

    #[test]
    fn relt_errors_name_field() {
        let l = seq(64, 43, |i, j| (i * 43 + j) as f32);
        let mut bytes = LatentFile::from(l).to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        match LatentFile::from_bytes(&bad) {
            Err(Error::Format { field, .. }) => assert_eq!(field, "magic"),
            other => panic!("{other:?}"),
        }
        // header says 64x43 but only 64x42 values follow
        bytes.truncate(RELT_HEADER_LEN + 4 * 64 * 42);
        match LatentFile::from_bytes(&bytes) {
            Err(Error::Format { field, .. }) => assert_eq!(field, "payload"),
            other => panic!("{other:?}"),
        }
        match LatentFile::from_bytes(&bytes[..10]) {
            Err(Error::Format { field, .. }) => assert_eq!(field, "header"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn relt_header_is_forty_bytes() {
        let bytes = LatentFile::from(seq(2, 3, |_, _| 0.5)).to_bytes();
        assert_eq!(bytes.len(), 40 + 4 * 6);
        assert_eq!(&bytes[0..4], b"RELT");
        assert_eq!(f64::from_le_bytes(bytes[20..28].try_into().unwrap()), 43.0);
    }

    proptest! {
        #[test]
        fn relt_round_trip_bit_exact(
            c in 1usize..8, t in 1usize..50, streams in 1usize..4, seed in any::<u64>(), rate in 1.0f64..200.0
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let file: LatentFile = if streams == 1 {
                LatentSequence::new(Array2::from_shape_fn((c, t), |_| rng.gen_range(-5.0..5.0)), rate).unwrap().into()
            } else {
                StackedLatent::new(Array3::from_shape_fn((streams, c, t), |_| rng.gen_range(-5.0..5.0)), rate).unwrap().into()
            };
            let back = LatentFile::from_bytes(&file.to_bytes()).unwrap();
            prop_assert_eq!(back.to_bytes(), file.to_bytes());
            prop_assert_eq!(back, file);
        }

        #[test]
        fn split_inverts_stack(c in 1usize..6, t in 1usize..20, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a = LatentSequence::new(Array2::from_shape_fn((c, t), |_| rng.gen()), 43.0).unwrap();
            let b = LatentSequence::new(Array2::from_shape_fn((c, t), |_| rng.gen()), 43.0).unwrap();
            let (a2, b2) = split_streams(&stack_streams(&a, &b).unwrap()).unwrap();
            prop_assert_eq!(a2, a);
            prop_assert_eq!(b2, b);
        }
    }
}
