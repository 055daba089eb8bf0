use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::{synth_large_image, Anchor, Category, SynthSpec};
use crate::error::{Error, Result};

/// Upper bound on images drawn from one case.
pub const MAX_IMAGES_PER_CASE: usize = 30;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRow {
    pub path: String,
    pub label: String,
    pub case_id: String,
    pub mask_path: Option<String>,
    /// Patch method (1 or 2) for patch manifests.
    pub method: Option<u8>,
}

/// CSV listing of images with labels and case ids. Paths are relative to
/// the manifest's directory.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub rows: Vec<ManifestRow>,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Format(format!("{}: {e}", path.display()))
}

impl DatasetManifest {
    pub fn case_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.rows.iter().map(|r| r.case_id.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }

    /// `header` row plus LF-terminated records; a `method` column is added
    /// when any row carries one.
    pub fn to_csv(&self) -> Vec<u8> {
        let with_method = self.rows.iter().any(|r| r.method.is_some());
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        let mut header = vec!["path", "label", "case_id", "mask_path"];
        if with_method {
            header.push("method");
        }
        w.write_record(&header).expect("in-memory write");
        for r in &self.rows {
            let method = r.method.map(|m| m.to_string()).unwrap_or_default();
            let mut rec = vec![
                r.path.as_str(),
                r.label.as_str(),
                r.case_id.as_str(),
                r.mask_path.as_deref().unwrap_or(""),
            ];
            if with_method {
                rec.push(&method);
            }
            w.write_record(&rec).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    pub fn from_csv(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().from_reader(bytes);
        let header = r.headers().map_err(|e| csv_err(origin, e))?.clone();
        let names: Vec<&str> = header.iter().collect();
        let with_method = match names.as_slice() {
            ["path", "label", "case_id", "mask_path"] => false,
            ["path", "label", "case_id", "mask_path", "method"] => true,
            _ => {
                return Err(Error::Format(format!(
                    "{}: unexpected manifest header {names:?}",
                    origin.display()
                )))
            }
        };
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| csv_err(origin, e))?;
            let method = if with_method && !rec[4].is_empty() {
                Some(rec[4].parse::<u8>().map_err(|_| {
                    Error::Format(format!("{}: bad method {:?}", origin.display(), &rec[4]))
                })?)
            } else {
                None
            };
            rows.push(ManifestRow {
                path: rec[0].to_string(),
                label: rec[1].to_string(),
                case_id: rec[2].to_string(),
                mask_path: (!rec[3].is_empty()).then(|| rec[3].to_string()),
                method,
            });
        }
        Ok(DatasetManifest { rows })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&bytes, path)
    }
}

/// Image and case counts per category.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetCounts {
    pub per_category: BTreeMap<Category, (usize, usize)>,
}

impl DatasetCounts {
    pub fn with(mut self, category: Category, images: usize, cases: usize) -> Self {
        self.per_category.insert(category, (images, cases));
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (cat, &(images, cases)) in &self.per_category {
            if images == 0 || cases == 0 {
                return Err(Error::Param(format!("{cat}: counts must be at least 1")));
            }
            if cases > images {
                return Err(Error::Param(format!("{cat}: {cases} cases for {images} images")));
            }
            if images > cases * MAX_IMAGES_PER_CASE {
                return Err(Error::Param(format!(
                    "{cat}: {images} images over {cases} cases exceeds {MAX_IMAGES_PER_CASE} per case"
                )));
            }
        }
        Ok(())
    }

    /// `(category, case index, image index within case)` for every image,
    /// dealing images to cases round-robin.
    pub fn plan(&self) -> Vec<(Category, usize, usize)> {
        let mut out = Vec::new();
        for (&cat, &(images, cases)) in &self.per_category {
            for j in 0..images {
                out.push((cat, j % cases, j / cases));
            }
        }
        out
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-image seed from the dataset seed, a set tag, category, case and
/// image index, so any subset can be regenerated independently.
pub fn image_seed(seed: u64, set: &str, category: Category, case: usize, index: usize) -> u64 {
    let mut h = splitmix(seed);
    for b in set.bytes() {
        h = splitmix(h ^ b as u64);
    }
    h = splitmix(h ^ category.tag());
    h = splitmix(h ^ case as u64);
    splitmix(h ^ index as u64)
}

pub fn case_id(set: &str, category: Category, case: usize) -> String {
    format!("{set}-{category}-{case:03}")
}

/// A method-1 anchor attached to an image path.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorRow {
    pub path: String,
    pub anchor: Anchor,
}

pub fn write_anchors(rows: &[AnchorRow], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(["path", "x", "y", "up_angle", "thickness"])
        .expect("in-memory write");
    for r in rows {
        let a = &r.anchor;
        w.write_record([
            r.path.clone(),
            format!("{:.6}", a.x),
            format!("{:.6}", a.y),
            format!("{:.6}", a.up_angle),
            format!("{:.6}", a.thickness),
        ])
        .expect("in-memory write");
    }
    let bytes = w.into_inner().expect("in-memory flush");
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_anchors(path: &Path) -> Result<Vec<AnchorRow>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().from_reader(bytes.as_slice());
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != 5 {
            return Err(Error::Format(format!("{}: anchor row needs 5 fields", path.display())));
        }
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| Error::Format(format!("{}: bad number {:?}", path.display(), &rec[i])))
        };
        out.push(AnchorRow {
            path: rec[0].to_string(),
            anchor: Anchor {
                x: num(1)?,
                y: num(2)?,
                up_angle: num(3)?,
                thickness: num(4)?,
            },
        });
    }
    Ok(out)
}

/// Generates every planned image into `out_dir` as PPM (plus a PGM mask
/// for band categories), writes `manifest.csv` and the method-1
/// `anchors.csv` sidecar for a `side`/`rescue` crop pair, and returns the
/// manifest. `scale` sizes the images relative to the full-scale defaults.
#[allow(clippy::too_many_arguments)]
pub fn build_synth_dataset(
    counts: &DatasetCounts,
    seed: u64,
    set: &str,
    scale: f64,
    side: usize,
    rescue: usize,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    counts.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let plan = counts.plan();
    let results: Vec<Result<(ManifestRow, Vec<AnchorRow>)>> = plan
        .par_iter()
        .map(|&(cat, case, index)| {
            let spec = SynthSpec::new(cat, image_seed(seed, set, cat, case, index)).scaled(scale);
            let out = synth_large_image(&spec)?;
            let cid = case_id(set, cat, case);
            let stem = format!("{cid}-{index:02}");
            let path = format!("{stem}.ppm");
            out.image.save_ppm(&out_dir.join(&path))?;
            let mask_path = if cat.has_band() {
                let p = format!("{stem}.mask.pgm");
                out.mask.save_pgm(&out_dir.join(&p))?;
                Some(p)
            } else {
                None
            };
            let anchors = out
                .log
                .anchors(spec.width, spec.height, side, rescue)
                .into_iter()
                .map(|anchor| AnchorRow {
                    path: path.clone(),
                    anchor,
                })
                .collect();
            Ok((
                ManifestRow {
                    path,
                    label: cat.as_str().to_string(),
                    case_id: cid,
                    mask_path,
                    method: None,
                },
                anchors,
            ))
        })
        .collect();
    let mut manifest = DatasetManifest::default();
    let mut anchors = Vec::new();
    for r in results {
        let (row, a) = r?;
        manifest.rows.push(row);
        anchors.extend(a);
    }
    manifest.save(&out_dir.join("manifest.csv"))?;
    write_anchors(&anchors, &out_dir.join("anchors.csv"))?;
    Ok(manifest)
}
