use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{GrayMask, Image};
use crate::nn::{LabeledSet, Tensor};
use crate::patch::{
    oriented_patches, random_oriented_patches, random_patches, to_network_input, PatchSample,
    PatchSpec, Provenance,
};
use crate::synth::{
    case_id, image_seed, read_anchors, synth_large_image, Anchor, Category, DatasetCounts,
    DatasetManifest, SynthSpec,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PatchMethod {
    /// Oriented crops at annotated anchors (random oriented crops for
    /// categories without a band).
    Oriented,
    /// Random crops at random angles filtered by blankness and, for K,
    /// mask coverage.
    Random,
}

impl PatchMethod {
    pub fn number(self) -> u8 {
        match self {
            PatchMethod::Oriented => 1,
            PatchMethod::Random => 2,
        }
    }
}

/// One large image with what patch extraction needs.
#[derive(Clone, Debug)]
pub struct LargeImage {
    /// File stem, e.g. `test-K-003-01`.
    pub id: String,
    pub category: Category,
    pub case_id: String,
    pub image: Image,
    pub mask: Option<GrayMask>,
    pub anchors: Vec<Anchor>,
}

/// Indexed access to a set of large images; images are produced on demand
/// so whole sets never sit in memory.
pub trait ImageProvider: Sync {
    fn len(&self) -> usize;
    fn category(&self, i: usize) -> Category;
    fn case_id(&self, i: usize) -> String;
    fn get(&self, i: usize) -> Result<LargeImage>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Synthetic images rendered on the fly from a seed.
#[derive(Clone, Debug)]
pub struct SynthSet {
    pub set: String,
    pub seed: u64,
    pub scale: f64,
    side: usize,
    rescue: usize,
    plan: Vec<(Category, usize, usize)>,
}

impl SynthSet {
    pub fn new(set: &str, seed: u64, scale: f64, counts: &DatasetCounts, spec: &PatchSpec) -> Result<Self> {
        counts.validate()?;
        Ok(SynthSet {
            set: set.to_string(),
            seed,
            scale,
            side: spec.side,
            rescue: spec.rescue,
            plan: counts.plan(),
        })
    }

    /// Per-category counts from a config map, all over `cases` cases.
    pub fn counts(images: &BTreeMap<Category, usize>, cases: usize) -> DatasetCounts {
        images
            .iter()
            .fold(DatasetCounts::default(), |c, (&cat, &n)| c.with(cat, n, cases.min(n)))
    }

    fn stem(&self, i: usize) -> String {
        let (cat, case, index) = self.plan[i];
        format!("{}-{index:02}", case_id(&self.set, cat, case))
    }
}

impl ImageProvider for SynthSet {
    fn len(&self) -> usize {
        self.plan.len()
    }

    fn category(&self, i: usize) -> Category {
        self.plan[i].0
    }

    fn case_id(&self, i: usize) -> String {
        let (cat, case, _) = self.plan[i];
        case_id(&self.set, cat, case)
    }

    fn get(&self, i: usize) -> Result<LargeImage> {
        let (cat, case, index) = self.plan[i];
        let spec = SynthSpec::new(cat, image_seed(self.seed, &self.set, cat, case, index)).scaled(self.scale);
        let out = synth_large_image(&spec)?;
        let anchors = out.log.anchors(spec.width, spec.height, self.side, self.rescue);
        Ok(LargeImage {
            id: self.stem(i),
            category: cat,
            case_id: case_id(&self.set, cat, case),
            mask: cat.has_band().then_some(out.mask),
            image: out.image,
            anchors,
        })
    }
}

/// A dataset directory written by `build_synth_dataset`.
#[derive(Clone, Debug)]
pub struct DiskSet {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
    categories: Vec<Category>,
    anchors: BTreeMap<String, Vec<Anchor>>,
}

impl DiskSet {
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest = DatasetManifest::load(&dir.join("manifest.csv"))?;
        let categories = manifest
            .rows
            .iter()
            .map(|r| r.label.parse())
            .collect::<Result<Vec<Category>>>()?;
        let mut anchors: BTreeMap<String, Vec<Anchor>> = BTreeMap::new();
        let anchor_path = dir.join("anchors.csv");
        if anchor_path.exists() {
            for row in read_anchors(&anchor_path)? {
                anchors.entry(row.path).or_default().push(row.anchor);
            }
        }
        Ok(DiskSet {
            dir: dir.to_path_buf(),
            manifest,
            categories,
            anchors,
        })
    }
}

impl ImageProvider for DiskSet {
    fn len(&self) -> usize {
        self.manifest.rows.len()
    }

    fn category(&self, i: usize) -> Category {
        self.categories[i]
    }

    fn case_id(&self, i: usize) -> String {
        self.manifest.rows[i].case_id.clone()
    }

    fn get(&self, i: usize) -> Result<LargeImage> {
        let row = &self.manifest.rows[i];
        let image = Image::load_ppm(&self.dir.join(&row.path))?;
        let mask = match &row.mask_path {
            Some(p) => Some(GrayMask::load_pgm(&self.dir.join(p))?),
            None => None,
        };
        let id = row.path.strip_suffix(".ppm").unwrap_or(&row.path).to_string();
        Ok(LargeImage {
            id,
            category: self.categories[i],
            case_id: row.case_id.clone(),
            image,
            mask,
            anchors: self.anchors.get(&row.path).cloned().unwrap_or_default(),
        })
    }
}

/// Patches drawn from images without anchors, and per image for method 2.
pub const RANDOM_PER_IMAGE: usize = 6;
pub const RANDOM_MAX_DRAWS: usize = 300;
const BATCH: usize = 8;

/// Seed of the patch sampler for one image, from the experiment seed and
/// the image id only.
pub fn patch_seed(seed: u64, id: &str) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ seed.rotate_left(17)
}

pub fn patches_for_image(img: &LargeImage, method: PatchMethod, spec: &PatchSpec, seed: u64) -> Result<Vec<PatchSample>> {
    let prov = Provenance {
        label: img.category.class().to_string(),
        case_id: img.case_id.clone(),
        source: img.id.clone(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(patch_seed(seed, &img.id));
    Ok(match method {
        PatchMethod::Oriented if img.category.has_band() => oriented_patches(&img.image, &img.anchors, spec, &prov).0,
        PatchMethod::Oriented => random_oriented_patches(&img.image, RANDOM_PER_IMAGE, &mut rng, spec, &prov),
        PatchMethod::Random => {
            let mask = if img.category == Category::K { img.mask.as_ref() } else { None };
            random_patches(&img.image, mask, RANDOM_PER_IMAGE, RANDOM_MAX_DRAWS, &mut rng, spec, &prov)?
        }
    })
}

/// Visits a provider's images of each quota category in order, until that
/// category's patch quota is met. Output order is deterministic.
pub fn harvest_patches(
    provider: &dyn ImageProvider,
    quota: &BTreeMap<Category, usize>,
    method: PatchMethod,
    spec: &PatchSpec,
    seed: u64,
) -> Result<Vec<PatchSample>> {
    let mut out = Vec::new();
    for (&category, &want) in quota {
        let indices: Vec<usize> = (0..provider.len()).filter(|&i| provider.category(i) == category).collect();
        let mut got = Vec::new();
        for batch in indices.chunks(BATCH) {
            if got.len() >= want {
                break;
            }
            let results: Vec<Result<Vec<PatchSample>>> = batch
                .par_iter()
                .map(|&i| patches_for_image(&provider.get(i)?, method, spec, seed))
                .collect();
            for r in results {
                got.extend(r?);
            }
        }
        if got.len() < want {
            return Err(Error::Param(format!(
                "{category}: only {} of {want} patches from {} images",
                got.len(),
                indices.len()
            )));
        }
        got.truncate(want);
        out.extend(got);
    }
    Ok(out)
}

/// Network inputs with class indices into `classes`, plus each row's case
/// id. Patches whose class is not listed are an error.
pub fn to_labeled(samples: &[PatchSample], classes: &[String], spec: &PatchSpec) -> Result<(LabeledSet, Vec<String>)> {
    let mut set = LabeledSet::bytes([spec.input, spec.input, 3]);
    let mut cases = Vec::with_capacity(samples.len());
    let inputs: Vec<Result<Image>> = samples.par_iter().map(|p| to_network_input(p, spec)).collect();
    for (p, img) in samples.iter().zip(inputs) {
        let label = classes
            .iter()
            .position(|c| *c == p.label)
            .ok_or_else(|| Error::Param(format!("patch label {} not in {classes:?}", p.label)))?;
        set.push(&Tensor::from_image(&img?), label)?;
        cases.push(p.case_id.clone());
    }
    Ok((set, cases))
}

/// Reads a patch directory written by `save_patch_set`.
pub fn load_patch_set(dir: &Path) -> Result<Vec<PatchSample>> {
    let manifest = DatasetManifest::load(&dir.join("manifest.csv"))?;
    manifest
        .rows
        .par_iter()
        .map(|row| {
            let image = Image::load_ppm(&dir.join(&row.path))?;
            Ok(PatchSample {
                image,
                label: row.label.clone(),
                case_id: row.case_id.clone(),
                source: row.path.clone(),
                method: row.method.unwrap_or(1),
                orientation: 0.0,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::build_synth_dataset;

    fn small_counts() -> DatasetCounts {
        DatasetCounts::default()
            .with(Category::K, 4, 2)
            .with(Category::N, 2, 2)
            .with(Category::S, 2, 2)
    }

    #[test]
    fn synth_and_disk_sets_agree_on_layout() {
        let spec = PatchSpec::desk();
        let dir = tempfile::tempdir().unwrap();
        let counts = small_counts();
        build_synth_dataset(&counts, 3, "t", 0.25, spec.side, spec.rescue, dir.path()).unwrap();
        let disk = DiskSet::open(dir.path()).unwrap();
        let mem = SynthSet::new("t", 3, 0.25, &counts, &spec).unwrap();
        assert_eq!(disk.len(), mem.len());
        for i in 0..mem.len() {
            assert_eq!(disk.category(i), mem.category(i));
            assert_eq!(disk.case_id(i), mem.case_id(i));
            let (a, b) = (disk.get(i).unwrap(), mem.get(i).unwrap());
            assert_eq!(a.id, b.id);
            assert_eq!(a.anchors.len(), b.anchors.len());
            assert_eq!(a.mask, b.mask);
            assert_eq!((a.image.width(), a.image.height()), (b.image.width(), b.image.height()));
        }
    }

    #[test]
    fn harvest_meets_quota_deterministically() {
        let spec = PatchSpec { side: 32, rescue: 40, input: 28, ..PatchSpec::desk() };
        let counts = DatasetCounts::default().with(Category::S, 4, 2).with(Category::K, 4, 2);
        let set = SynthSet::new("h", 5, 0.25, &counts, &spec).unwrap();
        let quota: BTreeMap<Category, usize> = [(Category::S, 7)].into_iter().collect();
        let a = harvest_patches(&set, &quota, PatchMethod::Oriented, &spec, 1).unwrap();
        let b = harvest_patches(&set, &quota, PatchMethod::Oriented, &spec, 1).unwrap();
        assert_eq!(a.len(), 7);
        assert!(a.iter().zip(&b).all(|(x, y)| x.image == y.image && x.case_id == y.case_id));
        assert!(a.iter().all(|p| p.label == "S"));
        let too_many: BTreeMap<Category, usize> = [(Category::S, 1000)].into_iter().collect();
        assert!(harvest_patches(&set, &too_many, PatchMethod::Oriented, &spec, 1).is_err());
        let (labeled, cases) = to_labeled(&a, &["K".into(), "S".into()], &spec).unwrap();
        assert_eq!(labeled.len(), 7);
        assert!(labeled.labels().iter().all(|&l| l == 1));
        assert_eq!(cases.len(), 7);
        assert!(to_labeled(&a, &["K".into()], &spec).is_err());
    }

    #[test]
    fn patch_seed_depends_on_id_and_seed() {
        assert_ne!(patch_seed(1, "a"), patch_seed(1, "b"));
        assert_ne!(patch_seed(1, "a"), patch_seed(2, "a"));
        assert_eq!(patch_seed(9, "x-K-000-00"), patch_seed(9, "x-K-000-00"));
    }
}
