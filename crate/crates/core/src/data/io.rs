//! Dataset directory format: `manifest.json` plus one STEN file per raster.
//!
//! Any directory obeying the manifest schema can be ingested, so converted
//! exports of real corpora drop in next to generated ones.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    Category, Cover, DataError, Dataset, Pose, Raster, Sample, Source, PRESSURE_MAX, RASTER_SIZE,
};
use crate::geometry::Plane;
use crate::numerics::{read_sten, write_sten_f32};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub source: Source,
    pub seed: u64,
    /// Provenance: generator tag for synthetic data, ingest path otherwise.
    pub generator: String,
    pub n_poses: usize,
}

impl DatasetManifest {
    pub fn generated(source: Source, seed: u64, n_poses: usize) -> Self {
        DatasetManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            source,
            seed,
            generator: "synth-v1".into(),
            n_poses,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFile {
    schema_version: u32,
    source: Source,
    seed: u64,
    generator: String,
    n_poses: usize,
    samples: Vec<SampleRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleRecord {
    pose_id: u32,
    cover: Cover,
    category: Category,
    plane: Plane,
    joints: Vec<(f64, f64)>,
    depth_file: String,
    pressure_file: String,
}

fn io_err(path: &Path, err: std::io::Error) -> DataError {
    DataError::Io { path: path.display().to_string(), err }
}

/// Write a dataset directory: `manifest.json` plus one STEN raster pair per
/// sample. Rendering happens here for lazily generated samples.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<(), DataError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut records = Vec::with_capacity(dataset.samples.len());
    for sample in &dataset.samples {
        let stem = format!("{:05}_{}", sample.pose_id, sample.cover.tag());
        let depth_file = format!("{stem}_depth.sten");
        let pressure_file = format!("{stem}_pressure.sten");
        write_sten_f32(
            &dir.join(&depth_file),
            &[RASTER_SIZE, RASTER_SIZE],
            &sample.depth.materialize(),
        )?;
        write_sten_f32(
            &dir.join(&pressure_file),
            &[RASTER_SIZE, RASTER_SIZE],
            &sample.pressure.materialize(),
        )?;
        records.push(SampleRecord {
            pose_id: sample.pose_id,
            cover: sample.cover,
            category: sample.category,
            plane: sample.pose.plane,
            joints: sample.pose.joints.to_vec(),
            depth_file,
            pressure_file,
        });
    }
    let file = ManifestFile {
        schema_version: dataset.manifest.schema_version,
        source: dataset.manifest.source,
        seed: dataset.manifest.seed,
        generator: dataset.manifest.generator.clone(),
        n_poses: dataset.manifest.n_poses,
        samples: records,
    };
    let manifest_path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| DataError::Schema { path: manifest_path.display().to_string(), msg: e.to_string() })?;
    std::fs::write(&manifest_path, json).map_err(|e| io_err(&manifest_path, e))?;
    Ok(())
}

fn load_raster(dir: &Path, file: &str) -> Result<Raster, DataError> {
    let path = dir.join(file);
    if !path.exists() {
        return Err(DataError::MissingFile(path.display().to_string()));
    }
    let (shape, payload) = read_sten(&path)?;
    if shape != [RASTER_SIZE, RASTER_SIZE] {
        return Err(DataError::RasterShape { file: path.display().to_string(), found: shape });
    }
    Raster::from_vec(payload.into_f32())
}

/// Load a dataset directory, validating the schema, raster files, shapes,
/// and value ranges.
pub fn load_dataset(dir: &Path) -> Result<Dataset, DataError> {
    let manifest_path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
    let file: ManifestFile = serde_json::from_str(&text).map_err(|e| DataError::Schema {
        path: manifest_path.display().to_string(),
        msg: e.to_string(),
    })?;
    if file.schema_version != MANIFEST_SCHEMA_VERSION {
        return Err(DataError::Schema {
            path: manifest_path.display().to_string(),
            msg: format!("unsupported schema version {}", file.schema_version),
        });
    }

    let mut samples = Vec::with_capacity(file.samples.len());
    for rec in &file.samples {
        if rec.joints.len() != super::JOINT_COUNT {
            return Err(DataError::Schema {
                path: manifest_path.display().to_string(),
                msg: format!("pose {} has {} joints", rec.pose_id, rec.joints.len()),
            });
        }
        let mut joints = [(0.0, 0.0); super::JOINT_COUNT];
        joints.copy_from_slice(&rec.joints);
        let pose = Pose { joints, plane: rec.plane };
        if !pose.all_finite() {
            return Err(DataError::Schema {
                path: manifest_path.display().to_string(),
                msg: format!("pose {} has non-finite coordinates", rec.pose_id),
            });
        }
        let depth = load_raster(dir, &rec.depth_file)?;
        let pressure = load_raster(dir, &rec.pressure_file)?;
        if pressure
            .materialize()
            .iter()
            .any(|&v| !(0.0..=PRESSURE_MAX).contains(&v))
        {
            return Err(DataError::Schema {
                path: dir.join(&rec.pressure_file).display().to_string(),
                msg: "pressure values outside [0, 3.41]".into(),
            });
        }
        samples.push(Sample {
            pose,
            cover: rec.cover,
            category: rec.category,
            pose_id: rec.pose_id,
            depth,
            pressure,
        });
    }

    // Covered corpora ship complete cover triples per pose.
    if matches!(file.source, Source::SmalLike | Source::SlpLike) {
        let mut by_id: std::collections::BTreeMap<u32, std::collections::BTreeSet<&'static str>> =
            std::collections::BTreeMap::new();
        for s in &samples {
            by_id.entry(s.pose_id).or_default().insert(s.cover.tag());
        }
        for (id, covers) in &by_id {
            if covers.len() != 3 {
                return Err(DataError::Schema {
                    path: manifest_path.display().to_string(),
                    msg: format!("pose {id} has covers {covers:?}, expected all three"),
                });
            }
        }
    }

    Ok(Dataset {
        samples,
        source: file.source,
        manifest: DatasetManifest {
            schema_version: file.schema_version,
            source: file.source,
            seed: file.seed,
            generator: file.generator,
            n_poses: file.n_poses,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::super::{generate_dataset, Source};
    use super::*;

    fn tmpdir(tag: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("matpose_io_{tag}"));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn save_then_load_round_trips() {
        let dir = tmpdir("roundtrip");
        let ds = generate_dataset(3, 11, Source::SmalLike).unwrap();
        save_dataset(&ds, &dir).unwrap();
        let loaded = load_dataset(&dir).unwrap();
        assert_eq!(loaded.samples.len(), ds.samples.len());
        assert_eq!(loaded.manifest.seed, 11);
        for (a, b) in loaded.samples.iter().zip(&ds.samples) {
            assert_eq!(a.pose, b.pose);
            assert_eq!(a.cover, b.cover);
            assert_eq!(a.depth.materialize(), b.depth.materialize());
            assert_eq!(a.pressure.materialize(), b.pressure.materialize());
        }
    }

    #[test]
    fn missing_raster_file_names_the_file() {
        let dir = tmpdir("missing");
        let ds = generate_dataset(3, 2, Source::SmalLike).unwrap();
        save_dataset(&ds, &dir).unwrap();
        std::fs::remove_file(dir.join("00001_thin_depth.sten")).unwrap();
        let err = load_dataset(&dir).unwrap_err().to_string();
        assert!(err.contains("00001_thin_depth.sten"), "{err}");
    }

    #[test]
    fn unknown_cover_value_is_a_schema_error() {
        let dir = tmpdir("badcover");
        let ds = generate_dataset(3, 2, Source::SmalLike).unwrap();
        save_dataset(&ds, &dir).unwrap();
        let manifest = dir.join("manifest.json");
        let text = std::fs::read_to_string(&manifest).unwrap();
        std::fs::write(&manifest, text.replace("\"THIN\"", "\"wool\"")).unwrap();
        match load_dataset(&dir) {
            Err(DataError::Schema { msg, .. }) => assert!(msg.contains("wool"), "{msg}"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_raster_shape_rejected() {
        let dir = tmpdir("badshape");
        let ds = generate_dataset(3, 2, Source::SmalLike).unwrap();
        save_dataset(&ds, &dir).unwrap();
        crate::numerics::write_sten_f32(&dir.join("00000_thin_depth.sten"), &[2, 2], &[0.0; 4])
            .unwrap();
        assert!(matches!(load_dataset(&dir), Err(DataError::RasterShape { .. })));
    }
}
