//! File formats: measures as JSON or CSV, grayscale images, graphs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{image_to_measure, DiscreteMeasure, Points};

#[derive(Debug, Serialize, Deserialize)]
struct MeasureFile {
    dim: usize,
    points: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<f64>>,
}

pub fn measure_from_json_str(text: &str) -> Result<DiscreteMeasure> {
    let file: MeasureFile = serde_json::from_str(text)?;
    let points = Points::from_rows(file.points)?;
    if points.dim() != file.dim {
        return Err(Error::DimensionMismatch {
            expected: file.dim,
            found: points.dim(),
        });
    }
    match file.weights {
        Some(w) => DiscreteMeasure::new(points, w),
        None => DiscreteMeasure::uniform(points),
    }
}

pub fn measure_to_json_string(m: &DiscreteMeasure) -> Result<String> {
    let file = MeasureFile {
        dim: m.dim(),
        points: m.points().to_rows(),
        weights: Some(m.weights().to_vec()),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

/// Parses `x1,..,xd,w` rows after a mandatory header.
pub fn measure_from_csv_str(text: &str) -> Result<DiscreteMeasure> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    if headers.len() < 2 || headers.get(headers.len() - 1) != Some("w") {
        return Err(Error::InvalidInput(
            "measure CSV needs a header x1,..,xd,w".into(),
        ));
    }
    let dim = headers.len() - 1;
    let mut coords = Vec::new();
    let mut weights = Vec::new();
    for record in reader.records() {
        let record = record?;
        let values = record
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::InvalidInput(format!("not a number: {f:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if values.len() != dim + 1 {
            return Err(Error::DimensionMismatch {
                expected: dim + 1,
                found: values.len(),
            });
        }
        coords.extend_from_slice(&values[..dim]);
        weights.push(values[dim]);
    }
    DiscreteMeasure::new(Points::new(dim, coords)?, weights)
}

pub fn measure_to_csv_string(m: &DiscreteMeasure) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (1..=m.dim()).map(|k| format!("x{k}")).collect();
    header.push("w".into());
    writer.write_record(&header)?;
    for (x, w) in m.points().iter().zip(m.weights()) {
        let row: Vec<String> = x.iter().chain(std::iter::once(w)).map(f64::to_string).collect();
        writer.write_record(&row)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Grayscale pixel grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn to_measure(&self, pixel_extent: f64) -> Result<DiscreteMeasure> {
        let grid: Vec<f64> = self.pixels.iter().map(|&p| f64::from(p)).collect();
        image_to_measure(&grid, self.rows, self.cols, pixel_extent)
    }
}

/// Loads an 8-bit PGM (P2 or P5) or PNG, converting to grayscale.
pub fn load_image(path: &Path) -> Result<GrayImage> {
    let img = image::ImageReader::open(path)?
        .with_guessed_format()?
        .decode()?
        .into_luma8();
    Ok(GrayImage {
        rows: img.height() as usize,
        cols: img.width() as usize,
        pixels: img.into_raw(),
    })
}

/// Binary PGM (P5) encoding.
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.cols, img.rows).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

/// Reads a measure from `.json`, `.csv`, or an image (`.pgm`/`.png`,
/// pixel extent `1 / max(rows, cols)`).
pub fn read_measure(path: &Path) -> Result<DiscreteMeasure> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        "json" => measure_from_json_str(&fs::read_to_string(path)?),
        "csv" => measure_from_csv_str(&fs::read_to_string(path)?),
        "pgm" | "png" => {
            let img = load_image(path)?;
            let extent = 1.0 / img.rows.max(img.cols) as f64;
            img.to_measure(extent)
        }
        other => Err(Error::InvalidInput(format!(
            "unsupported measure file extension {other:?}"
        ))),
    }
}

pub fn write_measure(path: &Path, m: &DiscreteMeasure) -> Result<()> {
    let text = match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => measure_to_csv_string(m)?,
        _ => measure_to_json_string(m)?,
    };
    fs::write(path, text)?;
    Ok(())
}

/// Reads a point list from CSV (header row, one point per row, all columns
/// are coordinates).
pub fn read_points_csv(path: &Path) -> Result<Points> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let row = record?
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::InvalidInput(format!("not a number: {f:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Points::from_rows(rows)
}

/// On-disk graph description; `known` maps vertex ids to measure files
/// relative to the graph file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphFile {
    pub vertices: usize,
    pub edges: Vec<(usize, usize, f64)>,
    pub known: BTreeMap<String, String>,
    pub unknown: Vec<usize>,
}

pub fn read_graph(path: &Path) -> Result<crate::tasks::PropagationGraph> {
    let file: GraphFile = serde_json::from_str(&fs::read_to_string(path)?)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut known = BTreeMap::new();
    for (id, rel) in &file.known {
        let idx: usize = id
            .parse()
            .map_err(|_| Error::InvalidInput(format!("vertex id {id:?} is not an index")))?;
        known.insert(idx, read_measure(&base.join(rel))?);
    }
    crate::tasks::PropagationGraph::new(file.vertices, file.edges, known, file.unknown)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_with_and_without_weights() {
        let m = measure_from_json_str(r#"{"dim": 2, "points": [[0,0],[1,1]]}"#).unwrap();
        assert_eq!(m.weights(), &[0.5, 0.5]);
        let m = measure_from_json_str(r#"{"dim": 1, "points": [[0],[1]], "weights": [0.25, 0.75]}"#)
            .unwrap();
        assert_eq!(m.weights(), &[0.25, 0.75]);
        let back = measure_from_json_str(&measure_to_json_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
        assert!(measure_from_json_str(r#"{"dim": 3, "points": [[0,0]]}"#).is_err());
    }

    #[test]
    fn csv_requires_header() {
        let m = measure_from_csv_str("x1,x2,w\n0,0,0.5\n1,2,0.5\n").unwrap();
        assert_eq!(m.points().get(1), &[1.0, 2.0]);
        assert!(measure_from_csv_str("0,0,0.5\n1,2,0.5\n").is_err());
        let text = measure_to_csv_string(&m).unwrap();
        assert_eq!(measure_from_csv_str(&text).unwrap(), m);
    }

    #[test]
    fn pgm_ascii_and_binary() {
        let dir = tempfile::tempdir().unwrap();
        let p2 = dir.path().join("a.pgm");
        fs::write(&p2, "P2\n2 1\n255\n0 51\n").unwrap();
        let img = load_image(&p2).unwrap();
        assert_eq!((img.rows, img.cols), (1, 2));
        assert_eq!(img.pixels, vec![0, 51]);

        let p5 = dir.path().join("b.pgm");
        let src = GrayImage {
            rows: 2,
            cols: 2,
            pixels: vec![0, 10, 20, 255],
        };
        fs::write(&p5, encode_pgm(&src)).unwrap();
        assert_eq!(load_image(&p5).unwrap(), src);
        let m = read_measure(&p5).unwrap();
        assert_eq!(m.len(), 3);
    }

    #[test]
    fn png_is_read_as_grayscale() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.png");
        image::GrayImage::from_raw(2, 1, vec![7, 0]).unwrap().save(&path).unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!(img.pixels, vec![7, 0]);
    }
}
