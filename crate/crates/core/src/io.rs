//! Dataset and result file formats.
//!
//! - `scans/NNNNNN.bin`: little-endian, header `magic "VLSC", u32 version=1,
//!   u32 count, f64 t0`, then `count` records of `f32 x, y, z, dt` (LiDAR
//!   frame, `dt` seconds from scan start).
//! - `imu.csv`: header `t,gx,gy,gz,ax,ay,az`, SI units, 12 significant digits.
//! - trajectories: TUM format `t tx ty tz qx qy qz qw`, quaternion w-last.
//! - `scan_index.csv`: `scan,t0,file`.
//! - `diagnostics.jsonl`: one JSON record per scan.

use crate::error::{Error, Result};
use crate::manifold::{Rot3, Vec3};
use crate::propagation::{ImuSample, ImuWindow};
use crate::scan::{RawPoint, RawScan, UndistortedScan};
use crate::trajectory::{TrajPose, Trajectory};
use nalgebra::{Rotation3, UnitQuaternion};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

pub const SCAN_MAGIC: &[u8; 4] = b"VLSC";
pub const SCAN_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// scan .bin
// ---------------------------------------------------------------------------

pub fn write_scan_bin(path: &Path, scan: &RawScan) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(SCAN_MAGIC)?;
    w.write_all(&SCAN_VERSION.to_le_bytes())?;
    w.write_all(&(scan.points.len() as u32).to_le_bytes())?;
    w.write_all(&scan.t0.to_le_bytes())?;
    for p in &scan.points {
        w.write_all(&(p.pos.x as f32).to_le_bytes())?;
        w.write_all(&(p.pos.y as f32).to_le_bytes())?;
        w.write_all(&(p.pos.z as f32).to_le_bytes())?;
        w.write_all(&(p.dt as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scan_bin(path: &Path) -> Result<RawScan> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format(format!("{}: truncated header", path.display())))?;
    if &magic != SCAN_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic {:?}",
            path.display(),
            magic
        )));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != SCAN_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported version {version}",
            path.display()
        )));
    }
    r.read_exact(&mut u32buf)?;
    let count = u32::from_le_bytes(u32buf) as usize;
    let mut f64buf = [0u8; 8];
    r.read_exact(&mut f64buf)?;
    let t0 = f64::from_le_bytes(f64buf);
    let mut points = Vec::with_capacity(count);
    let mut rec = [0u8; 16];
    for i in 0..count {
        r.read_exact(&mut rec).map_err(|_| {
            Error::Format(format!(
                "{}: truncated at point {i} of {count}",
                path.display()
            ))
        })?;
        let f = |o: usize| f32::from_le_bytes(rec[o..o + 4].try_into().unwrap()) as f64;
        points.push(RawPoint {
            pos: Vec3::new(f(0), f(4), f(8)),
            dt: f(12),
        });
    }
    Ok(RawScan { t0, points })
}

// ---------------------------------------------------------------------------
// imu.csv
// ---------------------------------------------------------------------------

pub fn write_imu_csv(path: &Path, window: &ImuWindow) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "t,gx,gy,gz,ax,ay,az")?;
    for s in window.samples() {
        writeln!(
            w,
            "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
            s.t, s.gyro.x, s.gyro.y, s.gyro.z, s.accel.x, s.accel.y, s.accel.z
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_imu_csv(path: &Path) -> Result<ImuWindow> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    {
        let headers = rdr
            .headers()
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let expect = ["t", "gx", "gy", "gz", "ax", "ay", "az"];
        if headers.iter().collect::<Vec<_>>() != expect {
            return Err(Error::Format(format!(
                "{}: bad imu.csv header {:?}",
                path.display(),
                headers
            )));
        }
    }
    let mut samples = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(format!("{}: row {i}: {e}", path.display())))?;
        if rec.len() != 7 {
            return Err(Error::Format(format!(
                "{}: row {i} has {} fields",
                path.display(),
                rec.len()
            )));
        }
        let f = |j: usize| -> Result<f64> {
            rec[j]
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Format(format!("{}: row {i} col {j}: {e}", path.display())))
        };
        samples.push(ImuSample {
            t: f(0)?,
            gyro: Vec3::new(f(1)?, f(2)?, f(3)?),
            accel: Vec3::new(f(4)?, f(5)?, f(6)?),
        });
    }
    ImuWindow::new(samples)
}

// ---------------------------------------------------------------------------
// TUM trajectories
// ---------------------------------------------------------------------------

pub fn rot_to_quat(rot: &Rot3) -> UnitQuaternion<f64> {
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*rot.matrix()))
}

pub fn quat_to_rot(q: &UnitQuaternion<f64>) -> Rot3 {
    Rot3::from_matrix_unchecked(q.to_rotation_matrix().into_inner())
}

pub fn write_tum(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for p in &traj.poses {
        let q = rot_to_quat(&p.rot);
        writeln!(
            w,
            "{:.12} {:.12} {:.12} {:.12} {:.12} {:.12} {:.12} {:.12}",
            p.t, p.pos.x, p.pos.y, p.pos.z, q.i, q.j, q.k, q.w
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tum(path: &Path) -> Result<Trajectory> {
    let r = BufReader::new(fs::File::open(path)?);
    let mut poses = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: std::result::Result<Vec<f64>, _> =
            line.split_whitespace().map(|s| s.parse::<f64>()).collect();
        let vals =
            vals.map_err(|e| Error::Format(format!("{}: line {i}: {e}", path.display())))?;
        if vals.len() != 8 {
            return Err(Error::Format(format!(
                "{}: line {i}: expected 8 fields, got {}",
                path.display(),
                vals.len()
            )));
        }
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            vals[7], vals[4], vals[5], vals[6],
        ));
        poses.push(TrajPose {
            t: vals[0],
            rot: quat_to_rot(&q),
            pos: Vec3::new(vals[1], vals[2], vals[3]),
        });
    }
    Ok(Trajectory { poses })
}

// ---------------------------------------------------------------------------
// scan_index.csv and dataset layout
// ---------------------------------------------------------------------------

pub fn write_scan_index(path: &Path, entries: &[(usize, f64, String)]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "scan,t0,file")?;
    for (i, t0, file) in entries {
        writeln!(w, "{i},{t0:.12e},{file}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scan_index(path: &Path) -> Result<Vec<(usize, f64, String)>> {
    let r = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line.trim() != "scan,t0,file" {
                return Err(Error::Format(format!(
                    "{}: bad scan_index header",
                    path.display()
                )));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.trim().split(',').collect();
        if parts.len() != 3 {
            return Err(Error::Format(format!(
                "{}: line {i}: expected 3 fields",
                path.display()
            )));
        }
        let idx = parts[0]
            .parse::<usize>()
            .map_err(|e| Error::Format(format!("{}: line {i}: {e}", path.display())))?;
        let t0 = parts[1]
            .parse::<f64>()
            .map_err(|e| Error::Format(format!("{}: line {i}: {e}", path.display())))?;
        out.push((idx, t0, parts[2].to_string()));
    }
    Ok(out)
}

/// An on-disk dataset loaded into memory.
pub struct Dataset {
    pub imu: ImuWindow,
    pub scans: Vec<RawScan>,
    pub truth: Option<Trajectory>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Dataset> {
        let imu_path = dir.join("imu.csv");
        if !imu_path.exists() {
            return Err(Error::Format(format!("{}: imu.csv missing", dir.display())));
        }
        let imu = read_imu_csv(&imu_path)?;
        let index = read_scan_index(&dir.join("scan_index.csv"))?;
        if index.is_empty() {
            return Err(Error::Format(format!(
                "{}: scan_index.csv lists no scans",
                dir.display()
            )));
        }
        let mut scans = Vec::with_capacity(index.len());
        for (i, t0, file) in &index {
            let scan = read_scan_bin(&dir.join(file))?;
            if (scan.t0 - t0).abs() > 1e-9 {
                return Err(Error::Format(format!(
                    "scan {i}: header t0 {} disagrees with index {}",
                    scan.t0, t0
                )));
            }
            scans.push(scan);
        }
        let truth_path = dir.join("truth.tum");
        let truth = if truth_path.exists() {
            Some(read_tum(&truth_path)?)
        } else {
            None
        };
        Ok(Dataset { imu, scans, truth })
    }
}

/// Standard path of the `i`-th scan file within a dataset dir.
pub fn scan_file_name(i: usize) -> PathBuf {
    PathBuf::from(format!("scans/{i:06}.bin"))
}

// ---------------------------------------------------------------------------
// diagnostics
// ---------------------------------------------------------------------------

/// Per-scan pipeline record, one JSON object per line.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScanDiagnostics {
    pub scan: usize,
    pub t0: f64,
    pub iterations: usize,
    pub rematches: usize,
    pub valid_matches: usize,
    pub mean_weight: f64,
    pub k_omega: [f64; 3],
    pub k_v: [f64; 3],
    pub skipped: bool,
    pub timing_ms: f64,
}

pub fn write_diagnostics_jsonl(path: &Path, records: &[ScanDiagnostics]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-point covariance dump: `x,y,z,dt,cov_xx,cov_xy,cov_xz,cov_yy,cov_yz,
/// cov_zz` (row-major upper triangle).
pub fn write_covariance_csv(path: &Path, scan: &UndistortedScan) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "x,y,z,dt,cov_xx,cov_xy,cov_xz,cov_yy,cov_yz,cov_zz")?;
    for p in &scan.points {
        let c = &p.cov;
        writeln!(
            w,
            "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
            p.pos.x,
            p.pos.y,
            p.pos.z,
            p.dt,
            c[(0, 0)],
            c[(0, 1)],
            c[(0, 2)],
            c[(1, 1)],
            c[(1, 2)],
            c[(2, 2)]
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn scan_bin_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.bin");
        let scan = RawScan {
            t0: 12.345,
            points: vec![
                RawPoint {
                    pos: Vec3::new(1.5, -2.25, 0.125),
                    dt: 0.05,
                },
                RawPoint {
                    pos: Vec3::new(-0.5, 4.0, 3.75),
                    dt: 0.0995,
                },
            ],
        };
        write_scan_bin(&path, &scan).unwrap();
        let back = read_scan_bin(&path).unwrap();
        assert_eq!(back.t0, scan.t0);
        // dyadic coordinates survive the f32 round trip exactly
        assert_eq!(back.points[0].pos, scan.points[0].pos);
        assert_eq!(back.points[1].pos, scan.points[1].pos);
    }

    #[test]
    fn scan_bin_header_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.bin");
        let scan = RawScan {
            t0: 1.0,
            points: vec![RawPoint {
                pos: Vec3::new(1.0, 2.0, 3.0),
                dt: 0.5,
            }],
        };
        write_scan_bin(&path, &scan).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"VLSC");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(f64::from_le_bytes(bytes[12..20].try_into().unwrap()), 1.0);
        assert_eq!(bytes.len(), 20 + 16);
    }

    #[test]
    fn scan_bin_rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.bin");
        fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(read_scan_bin(&path), Err(Error::Format(_))));
    }

    #[test]
    fn imu_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("imu.csv");
        let samples = vec![
            ImuSample {
                t: 0.0,
                gyro: Vec3::new(0.0, 0.0, 0.0),
                accel: Vec3::new(0.0, 0.0, 9.81),
            },
            ImuSample {
                t: 0.01,
                gyro: Vec3::new(1e-4, -2e-5, 3.3e-2),
                accel: Vec3::new(0.1, -0.2, 9.75),
            },
        ];
        write_imu_csv(&path, &ImuWindow::new(samples.clone()).unwrap()).unwrap();
        let back = read_imu_csv(&path).unwrap();
        assert_eq!(back.len(), 2);
        // exact zeros must survive
        assert_eq!(back.samples()[0].gyro, Vec3::zeros());
        for (a, b) in back.samples().iter().zip(&samples) {
            assert_relative_eq!(a.t, b.t, epsilon = 1e-12);
            assert_relative_eq!(a.gyro, b.gyro, max_relative = 1e-11);
            assert_relative_eq!(a.accel, b.accel, max_relative = 1e-11);
        }
    }

    #[test]
    fn tum_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.tum");
        let traj = Trajectory {
            poses: vec![
                TrajPose {
                    t: 0.0,
                    rot: Rot3::identity(),
                    pos: Vec3::zeros(),
                },
                TrajPose {
                    t: 0.1,
                    rot: Rot3::exp(&Vec3::new(0.1, -0.2, 0.3)),
                    pos: Vec3::new(1.0, 2.0, 3.0),
                },
            ],
        };
        write_tum(&path, &traj).unwrap();
        let back = read_tum(&path).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in back.poses.iter().zip(&traj.poses) {
            assert_relative_eq!(a.pos, b.pos, epsilon = 1e-9);
            assert!(a.rot.angle_to(&b.rot) < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn prop_quat_rot_round_trip(
            x in -2.0f64..2.0, y in -2.0f64..2.0, z in -2.0f64..2.0
        ) {
            let r = Rot3::exp(&Vec3::new(x, y, z));
            let back = quat_to_rot(&rot_to_quat(&r));
            prop_assert!(r.angle_to(&back) < 1e-12);
        }
    }
}
