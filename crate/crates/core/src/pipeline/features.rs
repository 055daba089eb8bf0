use std::fs;
use std::path::Path;

use super::data::ImageProvider;
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::scan::{prepare_scan_image, scan_image, FeatureMap4D, ScanGeometry};
use crate::synth::Category;

/// Feature maps of a set of large images with their labels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureSet {
    pub ids: Vec<String>,
    pub categories: Vec<Category>,
    pub cases: Vec<String>,
    pub maps: Vec<FeatureMap4D>,
}

impl FeatureSet {
    pub fn push(&mut self, id: String, category: Category, case_id: String, map: FeatureMap4D) {
        self.ids.push(id);
        self.categories.push(category);
        self.cases.push(case_id);
        self.maps.push(map);
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    /// Common map shape; an error when maps disagree or the set is empty.
    pub fn dims(&self) -> Result<[usize; 4]> {
        let first = self
            .maps
            .first()
            .ok_or_else(|| Error::Param("empty feature set".into()))?
            .dims();
        if let Some(m) = self.maps.iter().find(|m| m.dims() != first) {
            return Err(Error::shape(&first, &m.dims()));
        }
        Ok(first)
    }

    /// Manifest text: `fmap_path,label,case_id` with paths `<id>.fmap`.
    pub fn manifest_csv(&self) -> Vec<u8> {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(["fmap_path", "label", "case_id"]).expect("in-memory write");
        for i in 0..self.len() {
            let path = format!("{}.fmap", self.ids[i]);
            w.write_record([path.as_str(), self.categories[i].as_str(), &self.cases[i]])
                .expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }
}

/// Scans every image of a provider in order.
pub fn scan_set(
    provider: &dyn ImageProvider,
    first: &Model<f32>,
    geom: &ScanGeometry,
    mut progress: impl FnMut(usize, usize),
) -> Result<FeatureSet> {
    let mut out = FeatureSet::default();
    for i in 0..provider.len() {
        let large = provider.get(i)?;
        let img = prepare_scan_image(&large.image, geom)?;
        let map = scan_image(&img, first, geom)?;
        out.push(large.id, large.category, large.case_id, map);
        progress(i + 1, provider.len());
    }
    Ok(out)
}

/// Scans a provider and writes one `FMAP` file per image plus
/// `manifest.csv` into `out_dir`. Files written so far are removed when a
/// later step fails.
pub fn build_feature_dataset(
    provider: &dyn ImageProvider,
    first: &Model<f32>,
    geom: &ScanGeometry,
    out_dir: &Path,
    progress: impl FnMut(usize, usize),
) -> Result<FeatureSet> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let features = scan_set(provider, first, geom, progress)?;
    let mut written = Vec::new();
    let result = (|| {
        for (id, map) in features.ids.iter().zip(&features.maps) {
            let path = out_dir.join(format!("{id}.fmap"));
            map.save(&path)?;
            written.push(path);
        }
        let manifest = out_dir.join("manifest.csv");
        fs::write(&manifest, features.manifest_csv()).map_err(|e| Error::io(&manifest, e))
    })();
    if let Err(e) = result {
        for p in written {
            let _ = fs::remove_file(p);
        }
        return Err(e);
    }
    Ok(features)
}

/// Reads a directory written by [`build_feature_dataset`].
pub fn load_feature_set(dir: &Path) -> Result<FeatureSet> {
    let manifest = dir.join("manifest.csv");
    let bytes = fs::read(&manifest).map_err(|e| Error::io(&manifest, e))?;
    let mut r = csv::ReaderBuilder::new().from_reader(&bytes[..]);
    let fmt = |e: csv::Error| Error::Format(format!("{}: {e}", manifest.display()));
    let header = r.headers().map_err(fmt)?.clone();
    if header.iter().collect::<Vec<_>>() != ["fmap_path", "label", "case_id"] {
        return Err(Error::Format(format!("{}: unexpected header", manifest.display())));
    }
    let mut out = FeatureSet::default();
    for rec in r.records() {
        let rec = rec.map_err(fmt)?;
        let path = &rec[0];
        let id = path.strip_suffix(".fmap").unwrap_or(path).to_string();
        let map = FeatureMap4D::load(&dir.join(path))?;
        out.push(id, rec[1].parse()?, rec[2].to_string(), map);
    }
    Ok(out)
}
