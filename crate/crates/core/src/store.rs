//! Datasets on disk: a directory holding `manifest.json` and one binary array
//! per field, all indexed by particle.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::array_io::{read_array, write_array, Array};
use crate::datasets::{Dataset, ParticleRecord, Split};
use crate::error::{Error, Result};
use crate::forward::{ForwardModelConfig, ProjectionImage};
use crate::frenet::{ChainAngles, DiscreteCurve, Frame, FrenetSpace, Point, Pose, Space};

pub const MANIFEST: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

/// Array file names, relative to the dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFiles {
    /// `n × grid shape`, noisy.
    pub images: String,
    pub clean_images: String,
    /// `n × (D + D²)`: position, then the frame row-major.
    pub poses: String,
    /// `n × beta_len`.
    pub betas: String,
    /// `n × latent_width`.
    pub latent: String,
    /// `m - 2` torsion angles of the known conformation.
    pub reference_theta: String,
    pub reference_psi: Option<String>,
    /// `n × m × D`.
    pub ground_truth: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub dimension: usize,
    pub particles: usize,
    pub atoms: usize,
    pub delta: f64,
    /// 1-based atom carrying every particle's pose.
    pub reference_index: usize,
    pub forward: ForwardModelConfig,
    pub noise_variance: f64,
    pub beta_len: usize,
    pub latent_width: usize,
    pub splits: Vec<Split>,
    /// Generator configuration, seeds included, as it was resolved.
    pub generator: Option<serde_json::Value>,
    pub files: DatasetFiles,
}

impl Manifest {
    pub fn has_ground_truth(&self) -> bool {
        self.files.ground_truth.is_some()
    }

    pub fn test_count(&self) -> usize {
        self.splits.iter().filter(|s| **s == Split::Test).count()
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        location: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    })
}

/// Writes `value` as pretty JSON followed by a newline.
pub fn save_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    write_json(path.as_ref(), value)
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    read_json(path.as_ref())
}

fn uniform<T: PartialEq + std::fmt::Debug>(what: &'static str, values: impl Iterator<Item = T>) -> Result<Option<T>> {
    let mut first = None;
    for v in values {
        match &first {
            None => first = Some(v),
            Some(f) if *f != v => {
                return Err(Error::invalid(
                    "dataset",
                    format!("particles disagree on {what}: {f:?} and {v:?}"),
                ))
            }
            _ => {}
        }
    }
    Ok(first)
}

/// Writes the dataset into `dir`, creating it if needed.
pub fn save_dataset<const D: usize>(
    dir: impl AsRef<Path>,
    dataset: &Dataset<D>,
    generator: Option<serde_json::Value>,
) -> Result<Manifest> {
    let dir = dir.as_ref();
    let n = dataset.len();
    if n == 0 {
        return Err(Error::invalid("dataset", "no particles"));
    }
    let particles = &dataset.particles;
    if let Some((i, _)) = particles.iter().enumerate().find(|(i, p)| p.index != *i) {
        return Err(Error::invalid(
            "dataset",
            format!("particle at position {i} has index {}", particles[i].index),
        ));
    }
    let m = dataset.atom_count();
    let reference_index = uniform("reference index", particles.iter().map(|p| p.pose.reference_index))?
        .expect("nonempty");
    let beta_len = uniform("beta length", particles.iter().map(|p| p.beta.len()))?.expect("nonempty");
    let latent_width = uniform("latent width", particles.iter().map(|p| p.latent.len()))?.expect("nonempty");
    let with_truth = uniform("ground truth", particles.iter().map(|p| p.ground_truth.is_some()))?.expect("nonempty");
    let grid = &dataset.forward.grid;
    for p in particles {
        for image in [&p.image, &p.clean_image] {
            if image.grid != *grid {
                return Err(Error::invalid("dataset", format!("particle {} has a foreign grid", p.index)));
            }
        }
        if let Some(t) = &p.ground_truth {
            if t.len() != m {
                return Err(Error::Shape {
                    what: "atoms in ground truth",
                    expected: m,
                    found: t.len(),
                });
            }
        }
    }

    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut image_shape = vec![n];
    image_shape.extend(grid.shape());
    let files = DatasetFiles {
        images: "images.cspc".into(),
        clean_images: "clean_images.cspc".into(),
        poses: "poses.cspc".into(),
        betas: "betas.cspc".into(),
        latent: "latent.cspc".into(),
        reference_theta: "reference_theta.cspc".into(),
        reference_psi: dataset.reference.psi().map(|_| "reference_psi.cspc".into()),
        ground_truth: with_truth.then(|| "ground_truth.cspc".into()),
    };
    let gather = |f: &dyn Fn(&ParticleRecord<D>) -> Vec<f64>| -> Vec<f64> { particles.iter().flat_map(f).collect() };
    write_array(
        dir.join(&files.images),
        &Array::new(image_shape.clone(), gather(&|p| p.image.values.clone()))?,
    )?;
    write_array(
        dir.join(&files.clean_images),
        &Array::new(image_shape, gather(&|p| p.clean_image.values.clone()))?,
    )?;
    write_array(
        dir.join(&files.poses),
        &Array::new(
            vec![n, D + D * D],
            gather(&|p| {
                let mut row: Vec<f64> = p.pose.position.iter().copied().collect();
                row.extend((0..D).flat_map(|r| (0..D).map(move |c| (r, c))).map(|rc| p.pose.frame[rc]));
                row
            }),
        )?,
    )?;
    write_array(dir.join(&files.betas), &Array::new(vec![n, beta_len], gather(&|p| p.beta.clone()))?)?;
    write_array(
        dir.join(&files.latent),
        &Array::new(vec![n, latent_width], gather(&|p| p.latent.clone()))?,
    )?;
    let theta = dataset.reference.theta();
    write_array(
        dir.join(&files.reference_theta),
        &Array::new(vec![theta.len()], theta.to_vec())?,
    )?;
    if let (Some(name), Some(psi)) = (&files.reference_psi, dataset.reference.psi()) {
        write_array(dir.join(name), &Array::new(vec![psi.len()], psi.to_vec())?)?;
    }
    if let Some(name) = &files.ground_truth {
        write_array(
            dir.join(name),
            &Array::new(
                vec![n, m, D],
                gather(&|p| {
                    let t = p.ground_truth.as_ref().expect("checked uniform");
                    t.points.iter().flat_map(|z| z.iter().copied()).collect()
                }),
            )?,
        )?;
    }

    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        dimension: D,
        particles: n,
        atoms: m,
        delta: dataset.delta,
        reference_index,
        forward: dataset.forward.clone(),
        noise_variance: dataset.noise_variance,
        beta_len,
        latent_width,
        splits: particles.iter().map(|p| p.split).collect(),
        generator,
        files,
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn load_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = dir.as_ref().join(MANIFEST);
    let manifest: Manifest = read_json(&path)?;
    let fail = |reason: String| Error::Parse {
        path: path.clone(),
        location: "manifest".into(),
        message: reason,
    };
    if manifest.format_version != MANIFEST_VERSION {
        return Err(fail(format!("unsupported format version {}", manifest.format_version)));
    }
    if !(2..=3).contains(&manifest.dimension) {
        return Err(fail(format!("dimension {} is not 2 or 3", manifest.dimension)));
    }
    if manifest.splits.len() != manifest.particles {
        return Err(fail(format!(
            "{} split labels for {} particles",
            manifest.splits.len(),
            manifest.particles
        )));
    }
    if manifest.atoms < 3 {
        return Err(fail(format!("{} atoms is not a chain", manifest.atoms)));
    }
    if (manifest.dimension == 3) != manifest.files.reference_psi.is_some() {
        return Err(fail("bond angles must be present exactly for 3D datasets".into()));
    }
    manifest.forward.validate()?;
    Ok(manifest)
}

fn load_checked(dir: &Path, name: &str, what: &'static str, shape: &[usize]) -> Result<Array> {
    let array = read_array(dir.join(name))?;
    array.expect_shape(what, shape)?;
    Ok(array)
}

/// Loads a dataset written by [`save_dataset`], checking every array against
/// the manifest before building records.
pub fn load_dataset<const D: usize>(dir: impl AsRef<Path>) -> Result<(Dataset<D>, Manifest)>
where
    Space<D>: FrenetSpace<D>,
{
    let dir = dir.as_ref();
    let man = load_manifest(dir)?;
    if man.dimension != D {
        return Err(Error::Shape {
            what: "dataset dimension",
            expected: D,
            found: man.dimension,
        });
    }
    let (n, m) = (man.particles, man.atoms);
    let grid = man.forward.grid.clone();
    let pixels = grid.len();
    let mut image_shape = vec![n];
    image_shape.extend(grid.shape());
    let images = load_checked(dir, &man.files.images, "images", &image_shape)?;
    let clean = load_checked(dir, &man.files.clean_images, "clean images", &image_shape)?;
    let poses = load_checked(dir, &man.files.poses, "poses", &[n, D + D * D])?;
    let betas = load_checked(dir, &man.files.betas, "betas", &[n, man.beta_len])?;
    let latent = load_checked(dir, &man.files.latent, "latent", &[n, man.latent_width])?;
    let theta = load_checked(dir, &man.files.reference_theta, "reference torsions", &[m - 2])?;
    let reference = match &man.files.reference_psi {
        Some(name) => {
            let psi = load_checked(dir, name, "reference bond angles", &[m - 2])?;
            ChainAngles::spatial(theta.data, psi.data)?
        }
        None => ChainAngles::planar(theta.data),
    };
    let truth = match &man.files.ground_truth {
        Some(name) => Some(load_checked(dir, name, "ground truth", &[n, m, D])?),
        None => None,
    };

    let mut particles = Vec::with_capacity(n);
    for i in 0..n {
        let row = &poses.data[i * (D + D * D)..(i + 1) * (D + D * D)];
        let position = Point::<D>::from_fn(|r, _| row[r]);
        let frame = Frame::<D>::from_fn(|r, c| row[D + r * D + c]);
        let pose = Pose::new(position, frame, man.reference_index)?;
        let ground_truth = match &truth {
            Some(t) => {
                let block = &t.data[i * m * D..(i + 1) * m * D];
                let points = block.chunks_exact(D).map(Point::<D>::from_column_slice).collect();
                Some(DiscreteCurve::new(points, man.delta)?)
            }
            None => None,
        };
        particles.push(ParticleRecord {
            index: i,
            image: ProjectionImage::new(images.data[i * pixels..(i + 1) * pixels].to_vec(), grid.clone())?,
            clean_image: ProjectionImage::new(clean.data[i * pixels..(i + 1) * pixels].to_vec(), grid.clone())?,
            pose,
            beta: betas.data[i * man.beta_len..(i + 1) * man.beta_len].to_vec(),
            ground_truth,
            split: man.splits[i],
            latent: latent.data[i * man.latent_width..(i + 1) * man.latent_width].to_vec(),
        });
    }
    let dataset = Dataset {
        particles,
        reference,
        delta: man.delta,
        forward: man.forward.clone(),
        noise_variance: man.noise_variance,
    };
    Ok((dataset, man))
}

/// Writes curves as an `n × m × D` array.
pub fn write_curves<const D: usize>(path: impl AsRef<Path>, curves: &[DiscreteCurve<D>]) -> Result<()> {
    let m = curves.first().map_or(0, DiscreteCurve::len);
    if let Some(c) = curves.iter().find(|c| c.len() != m) {
        return Err(Error::Shape {
            what: "atoms per curve",
            expected: m,
            found: c.len(),
        });
    }
    let data = curves
        .iter()
        .flat_map(|c| c.points.iter().flat_map(|z| z.iter().copied()))
        .collect();
    write_array(path, &Array::new(vec![curves.len(), m, D], data)?)
}

/// Reads an `n × m × D` curve array; `delta` is recorded on every curve.
pub fn read_curves<const D: usize>(path: impl AsRef<Path>, delta: f64) -> Result<Vec<DiscreteCurve<D>>> {
    let path = path.as_ref();
    let array = read_array(path)?;
    let [n, m, d] = array.shape[..] else {
        return Err(Error::Parse {
            path: PathBuf::from(path),
            location: "header".into(),
            message: format!("expected a rank-3 curve array, found shape {:?}", array.shape),
        });
    };
    if d != D {
        return Err(Error::Shape {
            what: "coordinates per atom",
            expected: D,
            found: d,
        });
    }
    (0..n)
        .map(|i| {
            let block = &array.data[i * m * D..(i + 1) * m * D];
            DiscreteCurve::new(block.chunks_exact(D).map(Point::<D>::from_column_slice).collect(), delta)
        })
        .collect()
}
