//! Training maps: dilatation, distensibility, insults and stresses on the
//! circularly padded 41x41 grid, in physical (heat) or 8-bit (grayscale) form.

use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gnr::EvolvedVessel;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("expected {expected} columns, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("empty quantization range [{0}, {1}]")]
    Range(f64, f64),
    #[error("png encoding: {0}")]
    Png(#[from] png::EncodingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    ThetaStar,
    InsultCe,
    InsultDelta,
    Dilatation,
    Distensibility,
    StressCirc,
    StressAxial,
    Shear,
}

impl MapKind {
    pub const ALL: [MapKind; 8] = [
        MapKind::ThetaStar,
        MapKind::InsultCe,
        MapKind::InsultDelta,
        MapKind::Dilatation,
        MapKind::Distensibility,
        MapKind::StressCirc,
        MapKind::StressAxial,
        MapKind::Shear,
    ];

    /// Tag stored in binary map headers.
    pub fn tag(self) -> u8 {
        match self {
            MapKind::ThetaStar => 1,
            MapKind::InsultCe => 2,
            MapKind::InsultDelta => 3,
            MapKind::Dilatation => 4,
            MapKind::Distensibility => 5,
            MapKind::StressCirc => 6,
            MapKind::StressAxial => 7,
            MapKind::Shear => 8,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.tag() == tag)
    }

    pub fn name(self) -> &'static str {
        match self {
            MapKind::ThetaStar => "theta_star",
            MapKind::InsultCe => "insult_ce",
            MapKind::InsultDelta => "insult_delta",
            MapKind::Dilatation => "dilatation",
            MapKind::Distensibility => "distensibility",
            MapKind::StressCirc => "stress_tt",
            MapKind::StressAxial => "stress_zz",
            MapKind::Shear => "shear",
        }
    }
}

/// Physical-valued map on the padded grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldMap {
    pub kind: MapKind,
    pub values: Array2<f64>,
}

/// 8-bit quantized map with the range it was quantized against.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayMap {
    pub kind: MapKind,
    pub codes: Array2<u8>,
    pub range: (f64, f64),
}

/// Shared quantization ranges for all cases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantRanges {
    pub dilatation: (f64, f64),
    pub distensibility: (f64, f64),
}

impl Default for QuantRanges {
    fn default() -> Self {
        Self { dilatation: (0.90, 1.70), distensibility: (0.0, 0.08) }
    }
}

/// Append a copy of column 0 as the last column.
pub fn pad_circular<T: Clone + Default>(raw: &Array2<T>, expected_cols: usize) -> Result<Array2<T>, MapError> {
    let (rows, cols) = raw.dim();
    if cols != expected_cols {
        return Err(MapError::Shape { expected: expected_cols, got: cols });
    }
    let mut out = Array2::from_elem((rows, cols + 1), T::default());
    out.slice_mut(s![.., ..cols]).assign(raw);
    out.slice_mut(s![.., cols]).assign(&raw.column(0));
    Ok(out)
}

/// Drop the duplicated seam column.
pub fn unpad<T: Clone>(padded: &Array2<T>) -> Array2<T> {
    let cols = padded.ncols();
    padded.slice(s![.., ..cols - 1]).to_owned()
}

fn padded(kind: MapKind, raw: &Array2<f64>) -> FieldMap {
    let cols = raw.ncols();
    FieldMap { kind, values: pad_circular(raw, cols).expect("column count matches itself") }
}

pub fn dilatation_map(vessel: &EvolvedVessel) -> FieldMap {
    padded(MapKind::Dilatation, &vessel.dilatation())
}

pub fn distensibility_map(vessel: &EvolvedVessel) -> FieldMap {
    padded(MapKind::Distensibility, &vessel.distensibility())
}

/// Insult and systolic stress maps of a vessel.
pub fn vessel_maps(vessel: &EvolvedVessel) -> Vec<FieldMap> {
    let st = vessel.stress_maps();
    vec![
        padded(MapKind::InsultCe, &vessel.pair.theta_ce),
        padded(MapKind::InsultDelta, &vessel.pair.theta_delta),
        dilatation_map(vessel),
        distensibility_map(vessel),
        padded(MapKind::StressCirc, &st.circ),
        padded(MapKind::StressAxial, &st.axial),
        padded(MapKind::Shear, &st.shear),
    ]
}

pub fn field_map(kind: MapKind, raw: &Array2<f64>) -> FieldMap {
    padded(kind, raw)
}

/// `round(255 clamp((v - lo)/(hi - lo)))`, rounding half away from zero.
pub fn quantize(v: f64, range: (f64, f64)) -> u8 {
    let (lo, hi) = range;
    let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
    (255.0 * t).round() as u8
}

pub fn dequantize(code: u8, range: (f64, f64)) -> f64 {
    range.0 + (range.1 - range.0) * code as f64 / 255.0
}

pub fn to_grayscale(map: &FieldMap, range: (f64, f64)) -> Result<GrayMap, MapError> {
    if !(range.1 > range.0) {
        return Err(MapError::Range(range.0, range.1));
    }
    Ok(GrayMap { kind: map.kind, codes: map.values.mapv(|v| quantize(v, range)), range })
}

impl GrayMap {
    pub fn decode(&self) -> Array2<f64> {
        self.codes.mapv(|c| dequantize(c, self.range))
    }
}

/// 8-bit single-channel PNG, one pixel per grid node, rows top to bottom.
pub fn write_gray_png(path: &Path, map: &GrayMap) -> Result<(), MapError> {
    let (rows, cols) = map.codes.dim();
    let data: Vec<u8> = map.codes.iter().copied().collect();
    write_png(path, cols as u32, rows as u32, png::ColorType::Grayscale, &data)
}

fn write_png(path: &Path, width: u32, height: u32, color: png::ColorType, data: &[u8]) -> Result<(), MapError> {
    let file = std::fs::File::create(path)?;
    let w = std::io::BufWriter::new(file);
    let mut enc = png::Encoder::new(w, width, height);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header()?;
    writer.write_image_data(data)?;
    writer.finish()?;
    Ok(())
}

// viridis anchors at t = 0, 1/8, ..., 1
const VIRIDIS: [[f64; 3]; 9] = [
    [68.0, 1.0, 84.0],
    [71.0, 44.0, 122.0],
    [59.0, 81.0, 139.0],
    [44.0, 113.0, 142.0],
    [33.0, 144.0, 141.0],
    [39.0, 173.0, 129.0],
    [92.0, 200.0, 99.0],
    [170.0, 220.0, 50.0],
    [253.0, 231.0, 37.0],
];

/// The 256-entry heat-map color table.
pub fn colormap() -> &'static [[u8; 3]; 256] {
    static TABLE: OnceLock<[[u8; 3]; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [[0u8; 3]; 256];
        for (i, entry) in t.iter_mut().enumerate() {
            let x = i as f64 / 255.0 * 8.0;
            let k = (x.floor() as usize).min(7);
            let f = x - k as f64;
            for c in 0..3 {
                entry[c] = (VIRIDIS[k][c] * (1.0 - f) + VIRIDIS[k + 1][c] * f).round() as u8;
            }
        }
        t
    })
}

// 3x5 glyphs for value-bar labels
fn glyph(c: char) -> [u8; 5] {
    match c {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 1, 1],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        '.' => [0, 0, 0, 0, 2],
        '-' => [0, 0, 7, 0, 0],
        'e' => [0, 7, 7, 4, 7],
        _ => [0; 5],
    }
}

struct Canvas {
    width: usize,
    height: usize,
    rgb: Vec<u8>,
}

impl Canvas {
    fn new(width: usize, height: usize) -> Self {
        Self { width, height, rgb: vec![255; width * height * 3] }
    }

    fn put(&mut self, x: usize, y: usize, c: [u8; 3]) {
        if x < self.width && y < self.height {
            let o = (y * self.width + x) * 3;
            self.rgb[o..o + 3].copy_from_slice(&c);
        }
    }

    fn text(&mut self, x: usize, y: usize, s: &str, scale: usize) {
        for (n, ch) in s.chars().enumerate() {
            let g = glyph(ch);
            for (row, bits) in g.iter().enumerate() {
                for col in 0..3 {
                    if bits & (4 >> col) != 0 {
                        for dy in 0..scale {
                            for dx in 0..scale {
                                self.put(x + (n * 4 + col) * scale + dx, y + row * scale + dy, [0, 0, 0]);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn label(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

/// Heat-map PNG with a value bar. `range` defaults to the map's min/max.
pub fn write_heat_png(path: &Path, values: &Array2<f64>, range: Option<(f64, f64)>) -> Result<(), MapError> {
    const CELL: usize = 8;
    const BAR: usize = 16;
    const GAP: usize = 10;
    const TEXT: usize = 2;
    let (lo, hi) = range.unwrap_or_else(|| {
        values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
    });
    let span = if hi > lo { hi - lo } else { 1.0 };
    let cmap = colormap();
    let (rows, cols) = values.dim();
    let plot_w = cols * CELL;
    let plot_h = rows * CELL;
    let label_w = 10 * 4 * TEXT;
    let margin = 6 * TEXT;
    let mut c = Canvas::new(plot_w + GAP + BAR + GAP + label_w, plot_h + 2 * margin);
    let color = |v: f64| cmap[(((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as usize];
    for ((i, j), &v) in values.indexed_iter() {
        let col = color(v);
        for dy in 0..CELL {
            for dx in 0..CELL {
                c.put(j * CELL + dx, margin + i * CELL + dy, col);
            }
        }
    }
    let bar_x = plot_w + GAP;
    for y in 0..plot_h {
        let t = 1.0 - y as f64 / (plot_h - 1).max(1) as f64;
        let col = cmap[(t * 255.0).round() as usize];
        for dx in 0..BAR {
            c.put(bar_x + dx, margin + y, col);
        }
    }
    let text_x = bar_x + BAR + GAP / 2;
    c.text(text_x, margin, &label(hi), TEXT);
    c.text(text_x, margin + plot_h / 2 - 5 * TEXT / 2, &label(0.5 * (lo + hi)), TEXT);
    c.text(text_x, margin + plot_h - 5 * TEXT, &label(lo), TEXT);
    write_png(path, c.width as u32, c.height as u32, png::ColorType::Rgb, &c.rgb)
}

/// Write a small text listing of a map, used by the plot command.
pub fn write_csv(path: &Path, values: &Array2<f64>) -> Result<(), MapError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for row in values.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.9}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}
