//! File formats.
//!
//! Spectral libraries are CSV: one row per band, one column per signature,
//! an optional header row of names and an optional leading `wavelength`
//! column (only recognised through the header).
//!
//! Cubes and abundance maps share a little-endian binary container:
//!
//! ```text
//! offset  size  field
//!      0     4  magic, "SUCB" (cube) or "SUAB" (abundances)
//!      4     4  version (u32) = 1
//!      8     4  channels (u32): bands for a cube, endmembers for abundances
//!     12     4  rows (u32)
//!     16     4  cols (u32)
//!     20     4  flags (u32), bit 0 = wavelengths present
//!     24     …  channels × f64 wavelengths, if flagged
//!      …     …  rows·cols pixels × channels × f64, pixel-major
//! ```
//!
//! Convergence curves are CSV with the header
//! `sweep,time_s,objective,re_db,nmse_db,unconverged`; absent values are
//! empty cells and `-inf` is written literally.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::metrics::{ConvergenceCurve, CurveRow};
use crate::model::{AbundanceMatrix, ImageCube};
use crate::simdata::SpectralLibrary;

pub const CUBE_MAGIC: [u8; 4] = *b"SUCB";
pub const ABUNDANCE_MAGIC: [u8; 4] = *b"SUAB";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: u64 = 24;
const FLAG_WAVELENGTHS: u32 = 1;

pub const CURVE_HEADER: [&str; 6] = [
    "sweep",
    "time_s",
    "objective",
    "re_db",
    "nmse_db",
    "unconverged",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CubeFileHeader {
    pub magic: [u8; 4],
    pub version: u32,
    pub n_channels: u32,
    pub rows: u32,
    pub cols: u32,
    pub flags: u32,
}

impl CubeFileHeader {
    fn to_bytes(self) -> [u8; HEADER_LEN as usize] {
        let mut out = [0u8; HEADER_LEN as usize];
        out[0..4].copy_from_slice(&self.magic);
        for (k, v) in [
            self.version,
            self.n_channels,
            self.rows,
            self.cols,
            self.flags,
        ]
        .into_iter()
        .enumerate()
        {
            out[4 + 4 * k..8 + 4 * k].copy_from_slice(&v.to_le_bytes());
        }
        out
    }

    fn from_bytes(b: &[u8; HEADER_LEN as usize]) -> Self {
        let word =
            |k: usize| u32::from_le_bytes([b[4 * k], b[4 * k + 1], b[4 * k + 2], b[4 * k + 3]]);
        Self {
            magic: [b[0], b[1], b[2], b[3]],
            version: word(1),
            n_channels: word(2),
            rows: word(3),
            cols: word(4),
            flags: word(5),
        }
    }

    pub fn has_wavelengths(&self) -> bool {
        self.flags & FLAG_WAVELENGTHS != 0
    }

    /// Total file size implied by the header, `None` on overflow.
    pub fn file_len(&self) -> Option<u64> {
        let ch = u64::from(self.n_channels);
        let wl = if self.has_wavelengths() {
            ch.checked_mul(8)?
        } else {
            0
        };
        let payload = ch
            .checked_mul(u64::from(self.rows))?
            .checked_mul(u64::from(self.cols))?
            .checked_mul(8)?;
        HEADER_LEN.checked_add(wl)?.checked_add(payload)
    }
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v)
        .map_err(|_| Error::InvalidInput(format!("{what} {v} does not fit the file format")))
}

fn write_container(
    path: &Path,
    magic: [u8; 4],
    n_channels: usize,
    shape: (usize, usize),
    wavelengths: Option<&[f64]>,
    data: &[f64],
) -> Result<()> {
    let header = CubeFileHeader {
        magic,
        version: FORMAT_VERSION,
        n_channels: to_u32(n_channels, "channel count")?,
        rows: to_u32(shape.0, "row count")?,
        cols: to_u32(shape.1, "column count")?,
        flags: if wavelengths.is_some() {
            FLAG_WAVELENGTHS
        } else {
            0
        },
    };
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&header.to_bytes())?;
    for v in wavelengths.unwrap_or(&[]).iter().chain(data) {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_f64s(r: &mut impl Read, count: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; count * 8];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

struct Container {
    header: CubeFileHeader,
    wavelengths: Option<Vec<f64>>,
    data: Vec<f64>,
}

fn read_container(path: &Path, magic: [u8; 4]) -> Result<Container> {
    let file = File::open(path)?;
    let actual = file.metadata()?.len();
    let mut r = BufReader::new(file);
    if actual < HEADER_LEN {
        return Err(Error::TruncatedFile {
            expected: HEADER_LEN,
            actual,
        });
    }
    let mut raw = [0u8; HEADER_LEN as usize];
    r.read_exact(&mut raw)?;
    let header = CubeFileHeader::from_bytes(&raw);
    if header.magic != magic {
        return Err(Error::BadMagic {
            expected: magic,
            found: header.magic,
        });
    }
    if header.version != FORMAT_VERSION {
        return Err(Error::VersionUnsupported(header.version));
    }
    let expected = header.file_len().unwrap_or(u64::MAX);
    if actual < expected {
        return Err(Error::TruncatedFile { expected, actual });
    }
    if actual > expected {
        return Err(Error::TrailingData { expected, actual });
    }
    // The size check above bounds every allocation by the file length.
    let ch = header.n_channels as usize;
    let wavelengths = if header.has_wavelengths() {
        Some(read_f64s(&mut r, ch)?)
    } else {
        None
    };
    let n = header.rows as usize * header.cols as usize;
    let data = read_f64s(&mut r, ch * n)?;
    Ok(Container {
        header,
        wavelengths,
        data,
    })
}

pub fn write_cube(path: impl AsRef<Path>, cube: &ImageCube) -> Result<()> {
    write_container(
        path.as_ref(),
        CUBE_MAGIC,
        cube.n_bands(),
        cube.shape(),
        cube.wavelengths(),
        cube.data().as_slice(),
    )
}

pub fn read_cube(path: impl AsRef<Path>) -> Result<ImageCube> {
    let c = read_container(path.as_ref(), CUBE_MAGIC)?;
    let h = c.header;
    let shape = (h.rows as usize, h.cols as usize);
    let data = DMatrix::from_vec(h.n_channels as usize, shape.0 * shape.1, c.data);
    ImageCube::new(data, shape, c.wavelengths)
}

pub fn write_abundance(path: impl AsRef<Path>, a: &AbundanceMatrix) -> Result<()> {
    write_container(
        path.as_ref(),
        ABUNDANCE_MAGIC,
        a.n_endmembers(),
        a.shape(),
        None,
        a.data().as_slice(),
    )
}

pub fn read_abundance(path: impl AsRef<Path>) -> Result<AbundanceMatrix> {
    let c = read_container(path.as_ref(), ABUNDANCE_MAGIC)?;
    let h = c.header;
    let shape = (h.rows as usize, h.cols as usize);
    let data = DMatrix::from_vec(h.n_channels as usize, shape.0 * shape.1, c.data);
    AbundanceMatrix::new(data, shape)
}

fn parse_cell(path: &Path, line: u64, column: usize, cell: &str) -> Result<f64> {
    cell.trim().parse::<f64>().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        column,
        message: format!("not a number: {cell:?}"),
    })
}

pub fn read_library_csv(path: impl AsRef<Path>) -> Result<SpectralLibrary> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut records = reader.records().peekable();
    let Some(first) = records.next() else {
        return Err(Error::EmptyFile(path.to_path_buf()));
    };
    let first = first?;
    let is_header = first.iter().any(|cell| cell.parse::<f64>().is_err());
    let has_wavelength = is_header
        && first.get(0).is_some_and(|c| {
            c.eq_ignore_ascii_case("wavelength") || c.eq_ignore_ascii_case("wavelength_nm")
        });
    let skip = usize::from(has_wavelength);
    let width = first.len();
    if width <= skip {
        return Err(Error::InvalidInput(format!(
            "{}: no signature columns",
            path.display()
        )));
    }
    let names: Vec<String> = if is_header {
        first.iter().skip(skip).map(str::to_owned).collect()
    } else {
        (0..width).map(|k| format!("sig{k}")).collect()
    };

    let mut wavelengths = Vec::new();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); width - skip];
    let mut push_row = |rec: &csv::StringRecord| -> Result<()> {
        let line = rec.position().map_or(0, |p| p.line());
        for (k, cell) in rec.iter().enumerate() {
            let v = parse_cell(path, line, k + 1, cell)?;
            if k < skip {
                wavelengths.push(v);
            } else {
                values[k - skip].push(v);
            }
        }
        Ok(())
    };
    if !is_header {
        push_row(&first)?;
    }
    for rec in records {
        push_row(&rec?)?;
    }
    let n_bands = values[0].len();
    if n_bands == 0 {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    let data = DMatrix::from_vec(n_bands, values.len(), values.concat());
    SpectralLibrary::new(data, names, has_wavelength.then_some(wavelengths))
}

pub fn write_library_csv(path: impl AsRef<Path>, lib: &SpectralLibrary) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = Vec::new();
    if lib.wavelengths().is_some() {
        header.push("wavelength".into());
    }
    header.extend(lib.names().iter().cloned());
    w.write_record(&header)?;
    let sig = lib.signatures();
    for k in 0..lib.n_bands() {
        let mut row: Vec<String> = Vec::with_capacity(header.len());
        if let Some(wl) = lib.wavelengths() {
            row.push(format!("{}", wl[k]));
        }
        row.extend(sig.row(k).iter().map(|v| format!("{v}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn opt_cell<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_curve_csv(path: impl AsRef<Path>, curve: &ConvergenceCurve) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CURVE_HEADER)?;
    for r in &curve.rows {
        w.write_record([
            r.sweep.to_string(),
            r.time_s.to_string(),
            r.objective.to_string(),
            opt_cell(r.re_db),
            opt_cell(r.nmse_db),
            opt_cell(r.unconverged),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_curve_csv(path: impl AsRef<Path>) -> Result<ConvergenceCurve> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    if header.iter().ne(CURVE_HEADER) {
        return Err(Error::InvalidInput(format!(
            "{}: unexpected curve header",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |k: usize| parse_cell(path, line, k + 1, &rec[k]);
        let opt = |k: usize| -> Result<Option<f64>> {
            if rec[k].is_empty() {
                Ok(None)
            } else {
                num(k).map(Some)
            }
        };
        rows.push(CurveRow {
            sweep: num(0)? as usize,
            time_s: num(1)?,
            objective: num(2)?,
            re_db: opt(3)?,
            nmse_db: opt(4)?,
            unconverged: opt(5)?.map(|v| v as usize),
        });
    }
    Ok(ConvergenceCurve { rows })
}
