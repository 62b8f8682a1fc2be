//! Per-class attention rasters and the SMP1 container.
//!
//! Layout: `b"SMP1"`, then `width`, `height`, `n_cl` as u32 LE, then `n_cl`
//! planes of `width * height` f32 LE values in class order `1..=n_cl`.
//! Background has no plane.

use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil;

pub const SMP1_MAGIC: [u8; 4] = *b"SMP1";
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    width: u32,
    height: u32,
    planes: Vec<Vec<f32>>,
}

impl ScoreMap {
    pub fn new(width: u32, height: u32, planes: Vec<Vec<f32>>) -> Result<Self> {
        let n = width as usize * height as usize;
        for (p, plane) in planes.iter().enumerate() {
            if plane.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "plane {} has {} values, {width}x{height} needs {n}",
                    p + 1,
                    plane.len()
                )));
            }
            check_values(p, plane)?;
        }
        Ok(Self {
            width,
            height,
            planes,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn n_cl(&self) -> usize {
        self.planes.len()
    }

    /// Plane of class `class` (1-based, as in masks).
    pub fn plane(&self, class: u8) -> &[f32] {
        &self.planes[class as usize - 1]
    }

    /// Score of `class` at pixel index `j`.
    pub fn score(&self, class: u8, j: usize) -> f32 {
        self.planes[class as usize - 1][j]
    }

    pub fn planes(&self) -> &[Vec<f32>] {
        &self.planes
    }

    pub fn encode(&self) -> Vec<u8> {
        let n = self.width as usize * self.height as usize;
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * n * self.planes.len());
        out.extend_from_slice(&SMP1_MAGIC);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&(self.planes.len() as u32).to_le_bytes());
        for plane in &self.planes {
            for v in plane {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || bytes[..4] != SMP1_MAGIC {
            return Err(Error::BadMagic {
                expected: SMP1_MAGIC,
                found: bytes[..bytes.len().min(4)].to_vec(),
            });
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::TruncatedFile {
                expected: HEADER_LEN as u64,
                actual: bytes.len() as u64,
            });
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let (width, height, n_cl) = (u32_at(4), u32_at(8), u32_at(12));
        let n = width as u64 * height as u64;
        let expected = n * n_cl as u64 * 4;
        let actual = (bytes.len() - HEADER_LEN) as u64;
        if actual != expected {
            if actual < expected {
                return Err(Error::TruncatedFile { expected, actual });
            }
            return Err(Error::InvariantViolation(format!(
                "{} trailing bytes after SMP1 payload",
                actual - expected
            )));
        }
        let payload = &bytes[HEADER_LEN..];
        let planes: Vec<Vec<f32>> = if n == 0 {
            vec![Vec::new(); n_cl as usize]
        } else {
            payload
                .chunks_exact(n as usize * 4)
                .map(|plane| {
                    plane
                        .chunks_exact(4)
                        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                        .collect()
                })
                .collect()
        };
        Self::new(width, height, planes)
    }
}

fn check_values(plane: usize, values: &[f32]) -> Result<()> {
    for (index, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFiniteValue {
                plane: plane + 1,
                index,
            });
        }
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::ValueOutOfRange {
                value: v.to_string(),
                detail: format!("score at plane {}, index {index} outside [0, 1]", plane + 1),
            });
        }
    }
    Ok(())
}

pub fn read_scoremap(path: &Path) -> Result<ScoreMap> {
    ScoreMap::decode(&fsutil::read(path)?)
}

pub fn write_scoremap(map: &ScoreMap, path: &Path) -> Result<()> {
    fsutil::write_atomic(path, &map.encode())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn header(w: u32, h: u32, n: u32) -> Vec<u8> {
        let mut b = SMP1_MAGIC.to_vec();
        for v in [w, h, n] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    #[test]
    fn round_trip_two_class_pixel() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.smp");
        let map = ScoreMap::new(1, 1, vec![vec![0.0], vec![1.0]]).unwrap();
        write_scoremap(&map, &path).unwrap();
        assert_eq!(read_scoremap(&path).unwrap(), map);
    }

    #[test]
    fn bad_magic() {
        let mut b = header(1, 1, 1);
        b[0] = b'X';
        b.extend_from_slice(&0.5f32.to_le_bytes());
        assert!(matches!(ScoreMap::decode(&b), Err(Error::BadMagic { .. })));
        assert!(matches!(ScoreMap::decode(b"SM"), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn truncated_payload_reports_expected_bytes() {
        let mut b = header(4, 4, 2);
        b.extend(std::iter::repeat(0u8).take(100));
        match ScoreMap::decode(&b) {
            Err(Error::TruncatedFile { expected, actual }) => {
                assert_eq!(expected, 4 * 4 * 2 * 4);
                assert_eq!(actual, 100);
            }
            other => panic!("expected TruncatedFile, got {other:?}"),
        }
    }

    #[test]
    fn truncated_header() {
        assert!(matches!(
            ScoreMap::decode(b"SMP1\x01\x00"),
            Err(Error::TruncatedFile { .. })
        ));
    }

    #[test]
    fn rejects_non_finite_and_out_of_range() {
        let mut b = header(1, 1, 1);
        b.extend_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(ScoreMap::decode(&b), Err(Error::NonFiniteValue { .. })));
        let mut b = header(1, 1, 1);
        b.extend_from_slice(&1.5f32.to_le_bytes());
        assert!(matches!(ScoreMap::decode(&b), Err(Error::ValueOutOfRange { .. })));
    }

    proptest! {
        #[test]
        fn smp1_round_trip(w in 0u32..8, h in 0u32..8, n_cl in 1usize..5, raw in proptest::collection::vec(0.0f32..=1.0, 0..320)) {
            let n = (w * h) as usize;
            let planes: Vec<Vec<f32>> = (0..n_cl)
                .map(|p| (0..n).map(|i| raw.get(p * n + i).copied().unwrap_or(0.25)).collect())
                .collect();
            let map = ScoreMap::new(w, h, planes).unwrap();
            let bytes = map.encode();
            prop_assert_eq!(bytes.len(), 16 + 4 * n * n_cl);
            let back = ScoreMap::decode(&bytes).unwrap();
            prop_assert_eq!(back.encode(), bytes);
            prop_assert_eq!(back, map);
        }
    }
}
