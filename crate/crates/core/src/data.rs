//! Synthetic datasets with known generative factors.
//!
//! Mini-shapes: every combination of shape (square, ellipse) × 3 scales ×
//! 8 x-positions × 8 y-positions rasterized to a 16×16 binary image, 384
//! images in total. Gaussian mixture: labeled samples from well-separated
//! isotropic components.
//!
//! Dataset file:
//! ```text
//! magic       4 bytes "CVDS"
//! version     u32 LE (1)
//! header_len  u64 LE
//! header      JSON (DatasetHeader)
//! payload     rows * cols f64 LE, row-major
//! ```

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::nn::Tensor2;
use crate::rng::seeded;

pub const SHAPES_SIDE: usize = 16;
pub const SHAPE_NAMES: [&str; 2] = ["square", "ellipse"];
/// Half-extent in pixels for each scale value.
pub const SHAPE_SCALES: [f64; 3] = [1.0, 2.0, 3.0];
pub const SHAPE_POSITIONS: usize = 8;
/// Pixel index of the first position; positions are consecutive pixels.
const POSITION_OFFSET: usize = 4;
/// Minor-to-major axis ratio of the ellipse.
const ELLIPSE_ASPECT: f64 = 0.6;

/// Discrete ground-truth factors, one label per factor per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorTable {
    pub names: Vec<String>,
    pub cardinalities: Vec<usize>,
    /// `labels[sample][factor]`
    pub labels: Vec<Vec<usize>>,
}

impl FactorTable {
    pub fn num_factors(&self) -> usize {
        self.names.len()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Labels of one factor across all samples.
    pub fn column(&self, factor: usize) -> Vec<usize> {
        self.labels.iter().map(|l| l[factor]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiniShapes {
    /// 384 × 256, pixels in {0, 1}
    pub images: Tensor2,
    pub factors: FactorTable,
}

fn rasterize(shape: usize, half: f64, cx: f64, cy: f64) -> Vec<f64> {
    let mut img = vec![0.0; SHAPES_SIDE * SHAPES_SIDE];
    for y in 0..SHAPES_SIDE {
        for x in 0..SHAPES_SIDE {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let inside = if shape == 0 {
                dx.abs() <= half && dy.abs() <= half
            } else {
                let rx = half + 0.5;
                let ry = rx * ELLIPSE_ASPECT;
                (dx / rx).powi(2) + (dy / ry).powi(2) <= 1.0
            };
            if inside {
                img[y * SHAPES_SIDE + x] = 1.0;
            }
        }
    }
    img
}

pub fn generate_mini_shapes() -> MiniShapes {
    let mut data = Vec::with_capacity(384 * SHAPES_SIDE * SHAPES_SIDE);
    let mut labels = Vec::with_capacity(384);
    for shape in 0..SHAPE_NAMES.len() {
        for (scale, &half) in SHAPE_SCALES.iter().enumerate() {
            for px in 0..SHAPE_POSITIONS {
                for py in 0..SHAPE_POSITIONS {
                    let cx = (POSITION_OFFSET + px) as f64;
                    let cy = (POSITION_OFFSET + py) as f64;
                    data.extend(rasterize(shape, half, cx, cy));
                    labels.push(vec![shape, scale, px, py]);
                }
            }
        }
    }
    let n = labels.len();
    MiniShapes {
        images: Tensor2::from_vec(n, SHAPES_SIDE * SHAPES_SIDE, data).expect("sized above"),
        factors: FactorTable {
            names: ["shape", "scale", "pos_x", "pos_y"].map(String::from).to_vec(),
            cardinalities: vec![
                SHAPE_NAMES.len(),
                SHAPE_SCALES.len(),
                SHAPE_POSITIONS,
                SHAPE_POSITIONS,
            ],
            labels,
        },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussMixture {
    pub samples: Tensor2,
    pub labels: Vec<usize>,
    pub means: Vec<Vec<f64>>,
    pub std: f64,
    pub seed: u64,
}

/// Distance between neighbouring component means, in standard deviations.
pub const MIXTURE_SPACING: f64 = 10.0;

/// Component 0 sits at the origin; component `c ≥ 1` sits
/// `MIXTURE_SPACING · (⌊(c−1)/dim⌋ + 1)` along axis `(c−1) mod dim`.
pub fn mixture_means(k: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..k)
        .map(|c| {
            let mut m = vec![0.0; dim];
            if c > 0 {
                m[(c - 1) % dim] = MIXTURE_SPACING * (((c - 1) / dim) + 1) as f64;
            }
            m
        })
        .collect()
}

pub fn generate_gauss_mixture(k: usize, dim: usize, n: usize, seed: u64) -> Result<GaussMixture> {
    if k == 0 || dim == 0 || n == 0 {
        return Err(invalid("k/dim/n", "must all be >= 1"));
    }
    let means = mixture_means(k, dim);
    let std = 1.0;
    let mut rng = seeded(seed);
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let c = rng.random_range(0..k);
        labels.push(c);
        for &m in &means[c] {
            data.push(m + std * rng.sample::<f64, _>(StandardNormal));
        }
    }
    Ok(GaussMixture {
        samples: Tensor2::from_vec(n, dim, data)?,
        labels,
        means,
        std,
        seed,
    })
}

/// Header stored in front of the payload of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub kind: String,
    pub rows: usize,
    pub cols: usize,
    pub seed: Option<u64>,
    pub factors: Option<FactorTable>,
}

/// Samples plus optional factor metadata, as used by training and metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kind: String,
    pub seed: Option<u64>,
    pub data: Tensor2,
    pub factors: Option<FactorTable>,
}

impl From<MiniShapes> for Dataset {
    fn from(m: MiniShapes) -> Self {
        Dataset {
            kind: "mini_shapes".into(),
            seed: None,
            data: m.images,
            factors: Some(m.factors),
        }
    }
}

impl From<GaussMixture> for Dataset {
    fn from(g: GaussMixture) -> Self {
        let k = g.means.len();
        Dataset {
            kind: "gauss_mixture".into(),
            seed: Some(g.seed),
            factors: Some(FactorTable {
                names: vec!["component".into()],
                cardinalities: vec![k],
                labels: g.labels.iter().map(|&l| vec![l]).collect(),
            }),
            data: g.samples,
        }
    }
}

pub const DATASET_MAGIC: &[u8; 4] = b"CVDS";
pub const DATASET_VERSION: u32 = 1;

impl Dataset {
    pub fn len(&self) -> usize {
        self.data.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let header = DatasetHeader {
            kind: self.kind.clone(),
            rows: self.data.rows(),
            cols: self.data.cols(),
            seed: self.seed,
            factors: self.factors.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(DATASET_MAGIC)?;
        w.write_all(&DATASET_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for v in self.data.as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != DATASET_MAGIC {
            return Err(Error::Format(format!("bad dataset magic {magic:?}")));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != DATASET_VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let len = u64::from_le_bytes(b8) as usize;
        if len > 1 << 30 {
            return Err(Error::Format(format!("header length {len} too large")));
        }
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)?;
        let header: DatasetHeader = serde_json::from_slice(&json)?;
        if let Some(f) = &header.factors {
            if f.len() != header.rows {
                return Err(Error::Format(format!(
                    "{} factor rows for {} samples",
                    f.len(),
                    header.rows
                )));
            }
        }
        let mut payload = vec![0u8; header.rows * header.cols * 8];
        r.read_exact(&mut payload)?;
        let values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Dataset {
            kind: header.kind,
            seed: header.seed,
            data: Tensor2::from_vec(header.rows, header.cols, values)?,
            factors: header.factors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn mini_shapes_covers_every_combination_once() {
        let m = generate_mini_shapes();
        assert_eq!(m.images.rows(), 384);
        assert_eq!(m.images.cols(), 256);
        let combos: HashSet<Vec<usize>> = m.factors.labels.iter().cloned().collect();
        assert_eq!(combos.len(), 384);
        assert!(m.images.as_slice().iter().all(|&p| p == 0.0 || p == 1.0));
    }

    #[test]
    fn mini_shapes_has_no_blank_or_duplicate_images() {
        let m = generate_mini_shapes();
        let mut seen = HashSet::new();
        for row in m.images.iter_rows() {
            assert!(row.iter().sum::<f64>() > 0.0);
            let key: Vec<u8> = row.iter().map(|&p| p as u8).collect();
            assert!(seen.insert(key), "duplicate image");
        }
    }

    #[test]
    fn mini_shapes_is_reproducible() {
        assert_eq!(generate_mini_shapes(), generate_mini_shapes());
    }

    #[test]
    fn single_component_mean_near_zero() {
        let n = 20_000;
        let g = generate_gauss_mixture(1, 3, n, 5).unwrap();
        for m in g.samples.column_means() {
            assert!(m.abs() < 3.0 / (n as f64).sqrt(), "{m}");
        }
    }

    #[test]
    fn mixture_is_reproducible() {
        assert_eq!(
            generate_gauss_mixture(3, 2, 100, 9).unwrap(),
            generate_gauss_mixture(3, 2, 100, 9).unwrap()
        );
        assert!(generate_gauss_mixture(0, 2, 100, 9).is_err());
    }

    #[test]
    fn separated_components_match_nearest_mean() {
        let g = generate_gauss_mixture(4, 2, 5000, 13).unwrap();
        let hits = g
            .samples
            .iter_rows()
            .zip(&g.labels)
            .filter(|(x, &l)| {
                let nearest = (0..4)
                    .min_by(|&a, &b| {
                        let da: f64 = x.iter().zip(&g.means[a]).map(|(p, q)| (p - q).powi(2)).sum();
                        let db: f64 = x.iter().zip(&g.means[b]).map(|(p, q)| (p - q).powi(2)).sum();
                        da.total_cmp(&db)
                    })
                    .unwrap();
                nearest == l
            })
            .count();
        assert!(hits as f64 / 5000.0 > 0.99);
    }

    #[test]
    fn dataset_file_roundtrip() {
        let ds: Dataset = generate_mini_shapes().into();
        let mut buf = Vec::new();
        ds.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], DATASET_MAGIC);
        let back = Dataset::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, ds);
        buf[0] = b'X';
        assert!(Dataset::read_from(&mut buf.as_slice()).is_err());
    }
}
