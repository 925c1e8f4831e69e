//! On-disk formats.
//!
//! Binary artifacts share one container: a 4-byte magic, a little-endian
//! `u32` version, a little-endian `u64` header length, a JSON header, then a
//! payload of little-endian IEEE-754 64-bit values (row-major). Parse errors
//! report the byte offset at which the file stopped making sense.
//!
//! | extension  | magic  | payload                                     |
//! |------------|--------|---------------------------------------------|
//! | `.pkscan`  | `PKSC` | one row of intensities per chord            |
//! | `.pksino`  | `PKSN` | `n_alpha x n_s` sinogram of one slice       |
//! | `.pkmode`  | `PKMD` | interleaved re/im, modes `-N..N` x radii    |
//! | `.pkvol`   | `PKVL` | `n^3` voxels, x fastest                     |
//!
//! Chord sets (`.pkchords`) and observables tables (`.pkobs`) are text: a
//! single JSON header line followed by CSV rows (columns documented at the
//! writers below).

use crate::error::{Error, Result};
use crate::extract::{ObsRow, ObsTable};
use crate::forward::{KGrid, ScanKind};
use crate::geometry::{BallConfig, Chord, ChordParam, ChordSet};
use crate::radon::Sinogram;
use crate::volume::VolumeGrid;
use num_complex::Complex64;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const FORMAT_VERSION: u32 = 1;

fn magic_of(kind: &str) -> &'static [u8; 4] {
    match kind {
        "scan" => b"PKSC",
        "sino" => b"PKSN",
        "mode" => b"PKMD",
        "vol" => b"PKVL",
        _ => unreachable!("unknown container kind"),
    }
}

/// Write a container file.
pub fn write_container<H: Serialize>(
    path: &Path,
    kind: &str,
    header: &H,
    payload: &[f64],
) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    let header_json = serde_json::to_vec(header)
        .map_err(|e| Error::Format(format!("header serialization: {e}")))?;
    w.write_all(magic_of(kind))?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(header_json.len() as u64).to_le_bytes())?;
    w.write_all(&header_json)?;
    for v in payload {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Read a container file, checking magic and version.
pub fn read_container<H: DeserializeOwned>(path: &Path, kind: &str) -> Result<(H, Vec<f64>)> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("file shorter than the 4-byte magic (offset 0)".into()))?;
    if &magic != magic_of(kind) {
        return Err(Error::Format(format!(
            "bad magic at offset 0: expected {:?}, found {:?}",
            String::from_utf8_lossy(magic_of(kind)),
            String::from_utf8_lossy(&magic)
        )));
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4)
        .map_err(|_| Error::Format("truncated version field at offset 4".into()))?;
    let version = u32::from_le_bytes(buf4);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "format version {version} (this build reads version {FORMAT_VERSION}; \
             re-export the file or upgrade the tool)"
        )));
    }
    let mut buf8 = [0u8; 8];
    r.read_exact(&mut buf8)
        .map_err(|_| Error::Format("truncated header length at offset 8".into()))?;
    let header_len = u64::from_le_bytes(buf8) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes).map_err(|_| {
        Error::Format(format!(
            "truncated header: expected {header_len} bytes at offset 16"
        ))
    })?;
    let header = serde_json::from_slice(&header_bytes).map_err(|e| {
        Error::Format(format!("header JSON at offset 16: {e}"))
    })?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if rest.len() % 8 != 0 {
        return Err(Error::Format(format!(
            "payload length {} at offset {} is not a multiple of 8",
            rest.len(),
            16 + header_len
        )));
    }
    let payload = rest
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, payload))
}

/// Header of a `.pkscan` file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanHeader {
    pub ball: BallConfig,
    pub kgrid: KGrid,
    pub kind: ScanKind,
    pub noise_level: f64,
    pub remainder: f64,
    pub seed: u64,
    /// Relative path of the chord table the rows refer to.
    pub chords: String,
    pub n_chords: usize,
}

pub fn write_scan(path: &Path, header: &ScanHeader, rows: &[Vec<f64>]) -> Result<()> {
    let n_k = header.kgrid.n_k;
    let mut payload = Vec::with_capacity(rows.len() * n_k);
    for row in rows {
        assert_eq!(row.len(), n_k, "scan row length must match the k grid");
        payload.extend_from_slice(row);
    }
    write_container(path, "scan", header, &payload)
}

pub fn read_scan(path: &Path) -> Result<(ScanHeader, Vec<Vec<f64>>)> {
    let (header, payload): (ScanHeader, Vec<f64>) = read_container(path, "scan")?;
    let n_k = header.kgrid.n_k;
    if payload.len() != header.n_chords * n_k {
        return Err(Error::Format(format!(
            "scan payload holds {} values, expected {} chords x {} samples",
            payload.len(),
            header.n_chords,
            n_k
        )));
    }
    if payload.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Format(
            "scan intensities must be finite and nonnegative".into(),
        ));
    }
    let rows = payload.chunks_exact(n_k).map(|c| c.to_vec()).collect();
    Ok((header, rows))
}

/// Write a chord set: one JSON header line, a CSV header line
/// `z,alpha,s,x1,x2,x3,y1,y2,y3`, then one row per chord.
pub fn write_chords(path: &Path, set: &ChordSet) -> Result<()> {
    #[derive(Serialize)]
    struct Header<'a> {
        b: f64,
        r: f64,
        n_z: usize,
        n_alpha: usize,
        n_s: usize,
        n_chords: usize,
        z_values: &'a [f64],
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    let header = Header {
        b: set.cfg.b,
        r: set.cfg.r,
        n_z: set.z_values.len(),
        n_alpha: set.n_alpha,
        n_s: set.n_s,
        n_chords: set.chords.len(),
        z_values: &set.z_values,
    };
    serde_json::to_writer(&mut w, &header)
        .map_err(|e| Error::Format(format!("chord header: {e}")))?;
    writeln!(w)?;
    writeln!(w, "z,alpha,s,x1,x2,x3,y1,y2,y3")?;
    for c in &set.chords {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            c.param.z, c.param.alpha, c.param.s, c.x[0], c.x[1], c.x[2], c.y[0], c.y[1], c.y[2]
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_chords(path: &Path, grid_n: usize) -> Result<ChordSet> {
    #[derive(Deserialize)]
    struct Header {
        b: f64,
        r: f64,
        n_alpha: usize,
        n_s: usize,
        n_chords: usize,
        z_values: Vec<f64>,
    }
    let mut lines = BufReader::new(fs::File::open(path)?).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::Format("empty chord file".into()))??;
    let header: Header = serde_json::from_str(&header_line)
        .map_err(|e| Error::Format(format!("chord header line: {e}")))?;
    let cfg = BallConfig::new(header.b, header.r, grid_n)?;
    let columns = lines
        .next()
        .ok_or_else(|| Error::Format("missing chord CSV header".into()))??;
    if columns.trim() != "z,alpha,s,x1,x2,x3,y1,y2,y3" {
        return Err(Error::Format(format!("unexpected chord columns: {columns}")));
    }
    let mut chords = Vec::with_capacity(header.n_chords);
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<f64> = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("chord row {}: {e}", i + 1)))?;
        if f.len() != 9 {
            return Err(Error::Format(format!(
                "chord row {}: expected 9 columns, found {}",
                i + 1,
                f.len()
            )));
        }
        chords.push(Chord {
            param: ChordParam {
                z: f[0],
                alpha: f[1],
                s: f[2],
            },
            x: [f[3], f[4], f[5]],
            y: [f[6], f[7], f[8]],
        });
    }
    if chords.len() != header.n_chords {
        return Err(Error::Format(format!(
            "chord file holds {} rows, header promises {}",
            chords.len(),
            header.n_chords
        )));
    }
    Ok(ChordSet {
        cfg,
        z_values: header.z_values,
        n_alpha: header.n_alpha,
        n_s: header.n_s,
        chords,
    })
}

/// Write an observables table: CSV with columns
/// `z,alpha,s,dist,a_hat,tau_hat,line_of_sight,quality`
/// (`line_of_sight` is 0 or 1).
pub fn write_obs(path: &Path, table: &ObsTable) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "z,alpha,s,dist,a_hat,tau_hat,line_of_sight,quality")?;
    for r in &table.rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.param.z,
            r.param.alpha,
            r.param.s,
            r.dist,
            r.a_hat,
            r.tau_hat,
            r.line_of_sight as u8,
            r.quality
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_obs(path: &Path) -> Result<ObsTable> {
    let mut lines = BufReader::new(fs::File::open(path)?).lines();
    let columns = lines
        .next()
        .ok_or_else(|| Error::Format("empty observables file".into()))??;
    if columns.trim() != "z,alpha,s,dist,a_hat,tau_hat,line_of_sight,quality" {
        return Err(Error::Format(format!(
            "unexpected observables columns: {columns}"
        )));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<f64> = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("observables row {}: {e}", i + 1)))?;
        if f.len() != 8 {
            return Err(Error::Format(format!(
                "observables row {}: expected 8 columns, found {}",
                i + 1,
                f.len()
            )));
        }
        rows.push(ObsRow {
            param: ChordParam {
                z: f[0],
                alpha: f[1],
                s: f[2],
            },
            dist: f[3],
            a_hat: f[4],
            tau_hat: f[5],
            line_of_sight: f[6] != 0.0,
            quality: f[7],
        });
    }
    Ok(ObsTable { rows })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SinoHeader {
    pub z: f64,
    pub n_alpha: usize,
    pub n_s: usize,
    pub s_min: f64,
    pub s_max: f64,
    pub quantity: String,
}

pub fn write_sinogram(path: &Path, sg: &Sinogram) -> Result<()> {
    let header = SinoHeader {
        z: sg.z,
        n_alpha: sg.n_alpha(),
        n_s: sg.n_s(),
        s_min: sg.s_values[0],
        s_max: sg.s_values[sg.n_s() - 1],
        quantity: sg.quantity.clone(),
    };
    write_container(path, "sino", &header, &sg.data)
}

pub fn read_sinogram(path: &Path) -> Result<Sinogram> {
    let (header, payload): (SinoHeader, Vec<f64>) = read_container(path, "sino")?;
    if payload.len() != header.n_alpha * header.n_s {
        return Err(Error::Format(format!(
            "sinogram payload holds {} values, expected {} x {}",
            payload.len(),
            header.n_alpha,
            header.n_s
        )));
    }
    let ds = (header.s_max - header.s_min) / (header.n_s - 1) as f64;
    Ok(Sinogram {
        z: header.z,
        alphas: crate::geometry::alpha_grid(header.n_alpha),
        s_values: (0..header.n_s)
            .map(|j| header.s_min + j as f64 * ds)
            .collect(),
        data: payload,
        quantity: header.quantity,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeHeader {
    pub z: f64,
    pub n_modes: usize,
    pub rho0: f64,
    pub n_rho: usize,
}

/// Write a mode table: modes `-N..N` outermost, radii innermost, each value
/// as an interleaved (re, im) pair.
pub fn write_modes(path: &Path, table: &crate::abel::ModeTable) -> Result<()> {
    let header = ModeHeader {
        z: table.z,
        n_modes: table.n_modes,
        rho0: table.grid.rho0,
        n_rho: table.grid.n,
    };
    let mut payload = Vec::with_capacity(table.coeffs.len() * table.grid.n * 2);
    for mode in &table.coeffs {
        for c in mode {
            payload.push(c.re);
            payload.push(c.im);
        }
    }
    write_container(path, "mode", &header, &payload)
}

pub fn read_modes(path: &Path) -> Result<crate::abel::ModeTable> {
    let (header, payload): (ModeHeader, Vec<f64>) = read_container(path, "mode")?;
    let per_mode = header.n_rho * 2;
    let n_modes_total = 2 * header.n_modes + 1;
    if payload.len() != n_modes_total * per_mode {
        return Err(Error::Format(format!(
            "mode payload holds {} values, expected {} modes x {} radii x 2",
            payload.len(),
            n_modes_total,
            header.n_rho
        )));
    }
    let coeffs = payload
        .chunks_exact(per_mode)
        .map(|chunk| {
            chunk
                .chunks_exact(2)
                .map(|p| Complex64::new(p[0], p[1]))
                .collect()
        })
        .collect();
    Ok(crate::abel::ModeTable {
        z: header.z,
        n_modes: header.n_modes,
        grid: crate::abel::RadialGrid {
            rho0: header.rho0,
            n: header.n_rho,
        },
        coeffs,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VolHeader {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    pub b: f64,
}

pub fn write_volume(path: &Path, vol: &VolumeGrid) -> Result<()> {
    let header = VolHeader {
        dims: [vol.n; 3],
        spacing: [vol.spacing; 3],
        origin: vol.origin,
        b: vol.b,
    };
    write_container(path, "vol", &header, &vol.values)
}

pub fn read_volume(path: &Path) -> Result<VolumeGrid> {
    let (header, payload): (VolHeader, Vec<f64>) = read_container(path, "vol")?;
    let n = header.dims[0];
    if header.dims[1] != n || header.dims[2] != n {
        return Err(Error::Format(format!(
            "only cubic volumes are supported, got {:?}",
            header.dims
        )));
    }
    if payload.len() != n * n * n {
        return Err(Error::Format(format!(
            "volume payload holds {} values, expected {n}^3",
            payload.len()
        )));
    }
    Ok(VolumeGrid {
        n,
        spacing: header.spacing[0],
        origin: header.origin,
        b: header.b,
        values: payload,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::chord_grid;
    use tempfile::tempdir;

    fn cfg() -> BallConfig {
        BallConfig::new(1.0, 0.8, 16).unwrap()
    }

    #[test]
    fn volume_round_trip_is_bitwise() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("v.pkvol");
        let mut vol = VolumeGrid::ball(1.0, 12);
        vol.fill(|p| p[0] * 1.1 + p[1] * std::f64::consts::PI - p[2].exp());
        write_volume(&path, &vol).unwrap();
        let back = read_volume(&path).unwrap();
        assert_eq!(vol.values, back.values);
        assert_eq!(vol.origin, back.origin);
        // Writing the re-read volume reproduces the file byte for byte.
        let path2 = dir.path().join("v2.pkvol");
        write_volume(&path2, &back).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn chords_round_trip_is_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.pkchords");
        let set = chord_grid(&cfg(), 4, 6, 4).unwrap();
        write_chords(&path, &set).unwrap();
        let back = read_chords(&path, 16).unwrap();
        assert_eq!(set.chords.len(), back.chords.len());
        for (a, b) in set.chords.iter().zip(&back.chords) {
            assert_eq!(a.param.z, b.param.z);
            assert_eq!(a.param.alpha, b.param.alpha);
            assert_eq!(a.param.s, b.param.s);
            assert_eq!(a.x, b.x);
            assert_eq!(a.y, b.y);
        }
    }

    #[test]
    fn obs_round_trip_is_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.pkobs");
        let table = ObsTable {
            rows: vec![ObsRow {
                param: ChordParam {
                    z: 0.1,
                    alpha: 2.0,
                    s: -0.3,
                },
                dist: 1.7320508075688772,
                a_hat: 0.07957747154594767,
                tau_hat: 1.7620508075688773,
                line_of_sight: false,
                quality: 1.5e-9,
            }],
        };
        write_obs(&path, &table).unwrap();
        let back = read_obs(&path).unwrap();
        assert_eq!(back.rows.len(), 1);
        let (a, b) = (&table.rows[0], &back.rows[0]);
        assert_eq!(a.param.s, b.param.s);
        assert_eq!(a.dist, b.dist);
        assert_eq!(a.a_hat, b.a_hat);
        assert_eq!(a.tau_hat, b.tau_hat);
        assert_eq!(a.line_of_sight, b.line_of_sight);
        assert_eq!(a.quality, b.quality);
    }

    #[test]
    fn wrong_magic_is_reported_with_offset() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("v.pkvol");
        let vol = VolumeGrid::ball(1.0, 8);
        write_volume(&path, &vol).unwrap();
        let err = read_container::<VolHeader>(&path, "sino").unwrap_err();
        assert!(matches!(err, Error::Format(ref m) if m.contains("offset 0")), "{err}");
    }

    #[test]
    fn version_bump_is_refused_with_hint() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("v.pkvol");
        let vol = VolumeGrid::ball(1.0, 8);
        write_volume(&path, &vol).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[4] = 99;
        fs::write(&path, &bytes).unwrap();
        let err = read_volume(&path).unwrap_err();
        assert!(matches!(err, Error::Format(ref m) if m.contains("upgrade")), "{err}");
    }

    #[test]
    fn truncated_payload_is_detected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("v.pkvol");
        let vol = VolumeGrid::ball(1.0, 8);
        write_volume(&path, &vol).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(read_volume(&path).is_err());
    }

    #[test]
    fn corrupt_header_reports_offset() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("v.pkvol");
        let vol = VolumeGrid::ball(1.0, 8);
        write_volume(&path, &vol).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[20] = b'!';
        fs::write(&path, &bytes).unwrap();
        let err = read_volume(&path).unwrap_err();
        assert!(matches!(err, Error::Format(ref m) if m.contains("offset 16")), "{err}");
    }

    #[test]
    fn scan_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("s.pkscan");
        let header = ScanHeader {
            ball: cfg(),
            kgrid: KGrid::new(50.0, 100.0, 16).unwrap(),
            kind: ScanKind::F1,
            noise_level: 0.0,
            remainder: 0.0,
            seed: 7,
            chords: "c.pkchords".into(),
            n_chords: 2,
        };
        let rows = vec![
            (0..16).map(|i| i as f64 * 0.5).collect::<Vec<f64>>(),
            (0..16).map(|i| 8.0 - i as f64 * 0.5 + 0.25).collect(),
        ];
        // Second row dips below zero at the tail; clamp it first so the
        // nonnegativity check holds.
        let rows: Vec<Vec<f64>> = rows
            .into_iter()
            .map(|r| r.into_iter().map(|v| v.max(0.0)).collect())
            .collect();
        write_scan(&path, &header, &rows).unwrap();
        let (h2, rows2) = read_scan(&path).unwrap();
        assert_eq!(h2.n_chords, 2);
        assert_eq!(rows, rows2);
    }

    #[test]
    fn mode_table_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.pkmode");
        let grid = crate::abel::RadialGrid { rho0: 0.8, n: 5 };
        let coeffs: Vec<Vec<Complex64>> = (0..3)
            .map(|n| {
                (0..5)
                    .map(|j| Complex64::new(n as f64 + j as f64 * 0.1, -(j as f64)))
                    .collect()
            })
            .collect();
        let table = crate::abel::ModeTable {
            z: 0.25,
            n_modes: 1,
            grid,
            coeffs,
        };
        write_modes(&path, &table).unwrap();
        let back = read_modes(&path).unwrap();
        assert_eq!(back.n_modes, 1);
        for (a, b) in table.coeffs.iter().zip(&back.coeffs) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn sinogram_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("s.pksino");
        let sg = Sinogram {
            z: 0.1,
            alphas: crate::geometry::alpha_grid(6),
            s_values: crate::geometry::offset_grid(0.7, 4),
            data: (0..24).map(|i| (i as f64).sin()).collect(),
            quantity: "h".into(),
        };
        write_sinogram(&path, &sg).unwrap();
        let back = read_sinogram(&path).unwrap();
        assert_eq!(sg.data, back.data);
        for (a, b) in sg.s_values.iter().zip(&back.s_values) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
