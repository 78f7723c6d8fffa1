//! ETRF: little-endian container for offset fields and trajectory fields.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "ETRF"
//! 4       4     version (u32) = 1
//! 8       1     mode (u8): 0 raw offsets, 1 linear, 2 bd-linear, 3 quadratic
//! 9       3     padding (zero)
//! 12      4     N (u32, odd)
//! 16      4     H (u32)
//! 20      4     W (u32)
//! 24      ...   f32 payload
//! ```
//!
//! Raw payload is `N*H*W*2` values in `[n][row][col][(dx, dy)]` order, linear
//! is `H*W*2` (the `n = 0` offset), bd-linear and quadratic are `H*W*4`
//! (`dx1, dy1, dx2, dy2`). Values are held as `f64` in memory and stored as
//! `f32`, so anything read from a file re-encodes to identical bytes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::OffsetField;
use crate::trajectory::{ConstraintMode, TrajectoryField};

pub const MAGIC: &[u8; 4] = b"ETRF";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

/// Contents of an ETRF file.
#[derive(Debug, Clone, PartialEq)]
pub enum EtrfPayload {
    Offsets(OffsetField),
    Trajectory(TrajectoryField),
}

impl EtrfPayload {
    /// Views the payload as a trajectory; raw offsets become a
    /// zero-constraint trajectory.
    pub fn into_trajectory(self) -> Result<TrajectoryField> {
        match self {
            EtrfPayload::Offsets(f) => TrajectoryField::from_offsets(&f),
            EtrfPayload::Trajectory(t) => Ok(t),
        }
    }
}

fn mode_code(mode: ConstraintMode) -> u8 {
    match mode {
        ConstraintMode::ZeroConstraint => 0,
        ConstraintMode::Linear => 1,
        ConstraintMode::BdLinear => 2,
        ConstraintMode::Quadratic => 3,
    }
}

fn header(mode: u8, n: usize, h: usize, w: usize, payload_len: usize) -> Result<Vec<u8>> {
    let as_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::Dimension(format!("{what} {v} exceeds u32")))
    };
    let mut out = Vec::with_capacity(HEADER_LEN + payload_len * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(mode);
    out.extend_from_slice(&[0u8; 3]);
    out.extend_from_slice(&as_u32(n, "N")?.to_le_bytes());
    out.extend_from_slice(&as_u32(h, "height")?.to_le_bytes());
    out.extend_from_slice(&as_u32(w, "width")?.to_le_bytes());
    Ok(out)
}

fn push_payload(out: &mut Vec<u8>, values: impl Iterator<Item = f64>) -> Result<()> {
    for v in values {
        let f = v as f32;
        if !f.is_finite() {
            return Err(Error::Format(format!("value {v} not representable as f32")));
        }
        out.extend_from_slice(&f.to_le_bytes());
    }
    Ok(())
}

pub fn encode_offsets(field: &OffsetField) -> Result<Vec<u8>> {
    let mut out = header(
        0,
        field.n_steps(),
        field.height(),
        field.width(),
        field.data().len(),
    )?;
    push_payload(&mut out, field.data().iter().copied())?;
    Ok(out)
}

pub fn encode_trajectory(traj: &TrajectoryField) -> Result<Vec<u8>> {
    if traj.mode() == ConstraintMode::ZeroConstraint {
        return encode_offsets(&crate::trajectory::expand(traj, traj.n_steps())?);
    }
    let mut out = header(
        mode_code(traj.mode()),
        traj.n_steps(),
        traj.height(),
        traj.width(),
        traj.params().len(),
    )?;
    push_payload(&mut out, traj.params().iter().copied())?;
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<EtrfPayload> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "file is {} bytes, shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format("bad magic, not an ETRF file".into()));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let version = u32_at(4) as u32;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported ETRF version {version}")));
    }
    let mode = match bytes[8] {
        0 => ConstraintMode::ZeroConstraint,
        1 => ConstraintMode::Linear,
        2 => ConstraintMode::BdLinear,
        3 => ConstraintMode::Quadratic,
        m => return Err(Error::Format(format!("unknown ETRF mode {m}"))),
    };
    let (n, h, w) = (u32_at(12), u32_at(16), u32_at(20));
    if n % 2 == 0 {
        return Err(Error::Dimension(format!("step count {n} in header is even")));
    }
    let expected = h
        .checked_mul(w)
        .and_then(|hw| hw.checked_mul(mode.params_per_pixel(n)))
        .ok_or_else(|| Error::Dimension("header dimensions overflow".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() % 4 != 0 || payload.len() / 4 < expected {
        return Err(Error::Format(format!(
            "truncated payload: {} bytes for {expected} values",
            payload.len()
        )));
    }
    if payload.len() / 4 != expected {
        return Err(Error::Dimension(format!(
            "payload holds {} values, header implies {expected}",
            payload.len() / 4
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
        .collect();
    match mode {
        ConstraintMode::ZeroConstraint => Ok(EtrfPayload::Offsets(OffsetField::new(n, h, w, values)?)),
        _ => {
            if n < 3 {
                return Err(Error::Dimension(format!(
                    "constrained trajectory needs N >= 3, header has {n}"
                )));
            }
            Ok(EtrfPayload::Trajectory(TrajectoryField::new(mode, n, h, w, values)?))
        }
    }
}

pub fn read_offsets(path: impl AsRef<Path>) -> Result<EtrfPayload> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn write_offsets(field: &OffsetField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_offsets(field)?).map_err(|e| Error::io(path, e))
}

pub fn write_trajectory(traj: &TrajectoryField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_trajectory(traj)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn f32_exact(v: Vec<f32>) -> Vec<f64> {
        v.into_iter().map(f64::from).collect()
    }

    proptest! {
        #[test]
        fn offsets_round_trip_bitwise(
            (n, h, w, data) in (0usize..3, 1usize..5, 1usize..5).prop_flat_map(|(k, h, w)| {
                let n = 2 * k + 1;
                (Just(n), Just(h), Just(w),
                 proptest::collection::vec(-1e3f32..1e3, n * h * w * 2))
            })
        ) {
            let field = OffsetField::new(n, h, w, f32_exact(data)).unwrap();
            let bytes = encode_offsets(&field).unwrap();
            let back = decode(&bytes).unwrap();
            prop_assert_eq!(&back, &EtrfPayload::Offsets(field.clone()));
            let EtrfPayload::Offsets(f) = back else { unreachable!() };
            for (a, b) in f.data().iter().zip(field.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        #[test]
        fn reencode_is_byte_identical(params in proptest::collection::vec(-50.0f64..50.0, 3 * 4 * 4)) {
            let t = TrajectoryField::new(ConstraintMode::Quadratic, 15, 3, 4, params).unwrap();
            let bytes = encode_trajectory(&t).unwrap();
            let back = decode(&bytes).unwrap().into_trajectory().unwrap();
            prop_assert_eq!(encode_trajectory(&back).unwrap(), bytes);
        }
    }

    #[test]
    fn header_layout() {
        let t = TrajectoryField::zeros(ConstraintMode::BdLinear, 15, 2, 3).unwrap();
        let b = encode_trajectory(&t).unwrap();
        assert_eq!(&b[0..4], b"ETRF");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(b[8], 2);
        assert_eq!(&b[9..12], &[0, 0, 0]);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 15);
        assert_eq!(u32::from_le_bytes(b[16..20].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(b[20..24].try_into().unwrap()), 3);
        assert_eq!(b.len(), 24 + 2 * 3 * 4 * 4);
    }

    #[test]
    fn truncated_is_format_error() {
        let t = TrajectoryField::zeros(ConstraintMode::Linear, 15, 4, 4).unwrap();
        let b = encode_trajectory(&t).unwrap();
        assert!(matches!(decode(&b[..b.len() - 4]), Err(Error::Format(_))));
        assert!(matches!(decode(&b[..10]), Err(Error::Format(_))));
        let mut longer = b.clone();
        longer.extend_from_slice(&[0; 4]);
        assert!(matches!(decode(&longer), Err(Error::Dimension(_))));
    }

    #[test]
    fn bad_magic_version_and_even_n() {
        let t = TrajectoryField::zeros(ConstraintMode::Linear, 15, 2, 2).unwrap();
        let good = encode_trajectory(&t).unwrap();
        let mut b = good.clone();
        b[0] = b'X';
        assert!(matches!(decode(&b), Err(Error::Format(_))));
        let mut b = good.clone();
        b[4] = 2;
        assert!(matches!(decode(&b), Err(Error::Format(_))));
        let mut b = good.clone();
        b[12..16].copy_from_slice(&14u32.to_le_bytes());
        assert!(matches!(decode(&b), Err(Error::Dimension(_))));
    }

    #[test]
    fn zero_constraint_writes_raw() {
        let field = OffsetField::new(3, 1, 2, f32_exact(vec![1., 2., 3., 4., 5., 6., 7., 8., 9., 10., 11., 12.])).unwrap();
        let t = TrajectoryField::from_offsets(&field).unwrap();
        let b = encode_trajectory(&t).unwrap();
        assert_eq!(b[8], 0);
        assert_eq!(decode(&b).unwrap(), EtrfPayload::Offsets(field));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.etrf");
        let t = TrajectoryField::uniform(ConstraintMode::Linear, 15, 3, 3, &[1.5, -0.25]).unwrap();
        write_trajectory(&t, &p).unwrap();
        assert_eq!(read_offsets(&p).unwrap(), EtrfPayload::Trajectory(t));
        assert!(matches!(
            read_offsets(dir.path().join("missing.etrf")),
            Err(Error::Io { .. })
        ));
    }
}
