//! Label rasters, binary wall masks and morphological thinning.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat};

use crate::error::{Error, Result};

/// Dense row-major label raster with a palette naming every label it uses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid {
    width: usize,
    height: usize,
    cells: Vec<u8>,
    palette: BTreeMap<u8, String>,
}

impl Grid {
    /// A grid filled with `fill`.
    pub fn filled(
        width: usize,
        height: usize,
        fill: u8,
        palette: BTreeMap<u8, String>,
    ) -> Result<Self> {
        Self::from_cells(width, height, vec![fill; width * height], palette)
    }

    pub fn from_cells(
        width: usize,
        height: usize,
        cells: Vec<u8>,
        palette: BTreeMap<u8, String>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Argument(format!(
                "grid dimensions must be positive, got {width}x{height}"
            )));
        }
        if cells.len() != width * height {
            return Err(Error::Validation(format!(
                "grid has {} cells, expected {}",
                cells.len(),
                width * height
            )));
        }
        if let Some(bad) = cells.iter().find(|c| !palette.contains_key(c)) {
            return Err(Error::Validation(format!(
                "label {bad} is not in the grid palette"
            )));
        }
        Ok(Self {
            width,
            height,
            cells,
            palette,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn palette(&self) -> &BTreeMap<u8, String> {
        &self.palette
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.cells[y * self.width + x]
    }

    /// Overwrites one cell. The label must already be in the palette.
    pub fn set(&mut self, x: usize, y: usize, label: u8) {
        debug_assert!(self.palette.contains_key(&label));
        self.cells[y * self.width + x] = label;
    }

    pub fn count(&self, label: u8) -> usize {
        self.cells.iter().filter(|&&c| c == label).count()
    }

    /// Foreground wherever the label is in `labels`.
    pub fn to_mask(&self, labels: &BTreeSet<u8>) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.cells.iter().map(|c| labels.contains(c)).collect(),
        }
    }

    /// Writes the label values as an 8-bit grayscale PNG.
    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        write_gray_png(path.as_ref(), self.width, self.height, &self.cells)
    }

    /// Writes the label values as a binary (P5) PGM.
    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        write_pgm(path.as_ref(), self.width, self.height, &self.cells)
    }

    /// Reads an 8-bit label raster; every value must appear in `palette`.
    pub fn load(path: impl AsRef<Path>, palette: BTreeMap<u8, String>) -> Result<Self> {
        let raw = load_gray(path)?;
        Self::from_cells(raw.width, raw.height, raw.pixels, palette)
    }
}

/// Row-major foreground mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::Validation(format!(
                "mask has {} bits, expected {}",
                bits.len(),
                width * height
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    /// Parses rows of `#` (foreground) and `.` (background). Handy for tests.
    pub fn from_ascii(rows: &[&str]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.chars().count());
        let mut bits = Vec::with_capacity(width * height);
        for row in rows {
            if row.chars().count() != width {
                return Err(Error::Validation("ragged ascii mask".into()));
            }
            bits.extend(row.chars().map(|c| c == '#'));
        }
        Self::from_bits(width, height, bits)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    /// Out-of-bounds coordinates read as background.
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.bits[y as usize * self.width + x as usize]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Foreground pixel coordinates in raster order.
    pub fn foreground(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i % self.width, i / self.width))
    }

    pub fn to_ascii(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                out.push(if self.get(x, y) { '#' } else { '.' });
            }
            out.push('\n');
        }
        out
    }
}

/// Mapping between pixel coordinates and the shared normalized frame.
///
/// The longest image side spans `[-1, 1]`; the image centre maps to the
/// origin and both axes use the same scale. Pixel `(c, r)` covers
/// `[c, c+1) x [r, r+1)` in continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NormFrame {
    pub width: usize,
    pub height: usize,
}

impl NormFrame {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height }
    }

    /// Normalized units per pixel is `1 / scale()`.
    pub fn scale(&self) -> f64 {
        self.width.max(self.height) as f64 / 2.0
    }

    pub fn to_norm(&self, px: f64, py: f64) -> (f64, f64) {
        let s = self.scale();
        (
            (px - self.width as f64 / 2.0) / s,
            (py - self.height as f64 / 2.0) / s,
        )
    }

    pub fn to_pixel(&self, nx: f64, ny: f64) -> (f64, f64) {
        let s = self.scale();
        (
            nx * s + self.width as f64 / 2.0,
            ny * s + self.height as f64 / 2.0,
        )
    }

    pub fn pixel_center(&self, col: usize, row: usize) -> (f64, f64) {
        self.to_norm(col as f64 + 0.5, row as f64 + 0.5)
    }
}

/// Raw single-channel 8-bit image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayRaster {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// Reads an 8-bit grayscale PNG or a P2/P5 PGM (max value at most 255).
pub fn load_gray(path: impl AsRef<Path>) -> Result<GrayRaster> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"P2") || bytes.starts_with(b"P5") {
        return parse_pgm(&bytes);
    }
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Png)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    match img {
        DynamicImage::ImageLuma8(gray) => Ok(GrayRaster {
            width: gray.width() as usize,
            height: gray.height() as usize,
            pixels: gray.into_raw(),
        }),
        other => Err(Error::Format(format!(
            "{}: expected 8-bit single-channel PNG, found {:?}",
            path.display(),
            other.color()
        ))),
    }
}

/// Loads a mask; a pixel is foreground iff its value is in `foreground`.
pub fn load_mask(path: impl AsRef<Path>, foreground: &BTreeSet<u8>) -> Result<BinaryMask> {
    let raw = load_gray(path)?;
    Ok(BinaryMask {
        width: raw.width,
        height: raw.height,
        bits: raw.pixels.iter().map(|p| foreground.contains(p)).collect(),
    })
}

fn parse_pgm(bytes: &[u8]) -> Result<GrayRaster> {
    let binary = bytes.starts_with(b"P5");
    let mut pos = 2;
    let mut header = [0usize; 3];
    for slot in header.iter_mut() {
        // skip whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *slot = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("malformed PGM header".into()))?;
    }
    let [width, height, maxval] = header;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!(
            "PGM max value {maxval} is not an 8-bit depth"
        )));
    }
    let n = width * height;
    let pixels = if binary {
        // exactly one whitespace byte separates the header from the raster
        let data = bytes
            .get(pos + 1..pos + 1 + n)
            .ok_or_else(|| Error::Format("truncated PGM raster".into()))?;
        data.to_vec()
    } else {
        let text = std::str::from_utf8(&bytes[pos..])
            .map_err(|_| Error::Format("non-ASCII data in P2 PGM".into()))?;
        let values: Vec<u8> = text
            .split_ascii_whitespace()
            .take(n)
            .map(|t| t.parse::<u16>().ok().filter(|&v| v <= 255).map(|v| v as u8))
            .collect::<Option<_>>()
            .ok_or_else(|| Error::Format("bad P2 PGM sample".into()))?;
        if values.len() != n {
            return Err(Error::Format("truncated PGM raster".into()));
        }
        values
    };
    Ok(GrayRaster {
        width,
        height,
        pixels,
    })
}

pub fn write_gray_png(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let img = GrayImage::from_raw(width as u32, height as u32, pixels.to_vec())
        .ok_or_else(|| Error::Argument("pixel buffer does not match dimensions".into()))?;
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes a mask as 0/255 grayscale PNG.
pub fn write_mask_png(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    let pixels: Vec<u8> = mask.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
    write_gray_png(path.as_ref(), mask.width, mask.height, &pixels)
}

// Ring order N, NE, E, SE, S, SW, W, NW (P2..P9 in the usual Zhang-Suen notation).
const RING: [(i64, i64); 8] = [
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
];

fn ring(mask: &BinaryMask, x: usize, y: usize) -> [bool; 8] {
    let mut n = [false; 8];
    for (slot, (dx, dy)) in n.iter_mut().zip(RING) {
        *slot = mask.get_signed(x as i64 + dx, y as i64 + dy);
    }
    n
}

fn zhang_suen_candidate(n: &[bool; 8], pass: usize) -> bool {
    let b = n.iter().filter(|&&v| v).count();
    if !(2..=6).contains(&b) {
        return false;
    }
    let a = (0..8).filter(|&k| !n[k] && n[(k + 1) % 8]).count();
    if a != 1 {
        return false;
    }
    let [p2, _, p4, _, p6, _, p8, _] = *n;
    if pass == 0 {
        !(p2 && p4 && p6) && !(p4 && p6 && p8)
    } else {
        !(p2 && p4 && p8) && !(p2 && p6 && p8)
    }
}

/// True when deleting the centre pixel keeps the 8-connected foreground and
/// 4-connected background topology of the 3x3 window unchanged.
fn is_simple(n: &[bool; 8]) -> bool {
    fn components(n: &[bool; 8], want: bool, adjacent: fn(usize, usize) -> bool) -> Vec<u8> {
        let mut label = [0u8; 8];
        let mut next = 0u8;
        for start in 0..8 {
            if n[start] != want || label[start] != 0 {
                continue;
            }
            next += 1;
            let mut stack = vec![start];
            label[start] = next;
            while let Some(k) = stack.pop() {
                for m in 0..8 {
                    if n[m] == want && label[m] == 0 && adjacent(k, m) {
                        label[m] = next;
                        stack.push(m);
                    }
                }
            }
        }
        label.to_vec()
    }
    let cheb = |a: usize, b: usize| {
        let (ax, ay) = RING[a];
        let (bx, by) = RING[b];
        (ax - bx).abs().max((ay - by).abs()) == 1
    };
    let manhattan = |a: usize, b: usize| {
        let (ax, ay) = RING[a];
        let (bx, by) = RING[b];
        (ax - bx).abs() + (ay - by).abs() == 1
    };
    let fg = components(n, true, cheb);
    let fg_count = fg.iter().copied().max().unwrap_or(0);
    if fg_count != 1 {
        return false;
    }
    let bg = components(n, false, manhattan);
    // only background components touching the centre through a 4-neighbour count
    let mut touching: Vec<u8> = [0, 2, 4, 6]
        .iter()
        .filter(|&&k| !n[k])
        .map(|&k| bg[k])
        .collect();
    touching.sort_unstable();
    touching.dedup();
    touching.len() == 1
}

/// Zhang-Suen thinning with a topology guard.
///
/// Each sub-iteration flags pixels using the classic Zhang-Suen conditions on
/// a snapshot, then deletes them one at a time only while they remain simple
/// points with at least two foreground neighbours. The guard keeps the number
/// of 8-connected components fixed (plain Zhang-Suen erases 2x2 blocks). The
/// loop runs until a full iteration deletes nothing, so the result is a fixed
/// point and `thin` is idempotent.
pub fn thin(mask: &BinaryMask) -> BinaryMask {
    let mut out = mask.clone();
    loop {
        let mut changed = false;
        for pass in 0..2 {
            let flagged: Vec<(usize, usize)> = out
                .foreground()
                .filter(|&(x, y)| zhang_suen_candidate(&ring(&out, x, y), pass))
                .collect();
            for (x, y) in flagged {
                let n = ring(&out, x, y);
                if n.iter().filter(|&&v| v).count() >= 2 && is_simple(&n) {
                    out.set(x, y, false);
                    changed = true;
                }
            }
        }
        if !changed {
            return out;
        }
    }
}
