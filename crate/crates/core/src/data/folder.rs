//! Class-per-folder image trees: `root/<class_name>/<image files>`.

use std::path::{Path, PathBuf};

use super::dataset::Dataset;
use super::image::{preprocess, Image, Normalization};
use super::manifest::DatasetManifest;
use crate::error::{io_err, Error, Result};

/// File extensions the loader decodes.
pub const SUPPORTED_EXTENSIONS: [&str; 1] = ["ppm"];

/// Manifest of an image folder plus the paths it refers to.
#[derive(Clone, Debug)]
pub struct ImageFolder {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    paths: Vec<PathBuf>,
}

fn is_supported(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| SUPPORTED_EXTENSIONS.iter().any(|s| s.eq_ignore_ascii_case(e)))
}

fn sorted_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        out.push(entry.map_err(io_err(dir))?.path());
    }
    out.sort();
    Ok(out)
}

/// Scan `root`: subdirectories are classes (sorted by name), supported image
/// files inside them are samples (sorted by path). Every entry starts in the
/// train split; see [`split_dataset`](super::split_dataset).
pub fn load_image_folder(root: impl AsRef<Path>) -> Result<ImageFolder> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::InvalidDataset(format!("{} is not a directory", root.display())));
    }
    let mut class_names = Vec::new();
    let mut samples = Vec::new();
    let mut paths = Vec::new();
    for dir in sorted_dir(root)?.into_iter().filter(|p| p.is_dir()) {
        let name = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::InvalidDataset(format!("class folder {} is not valid UTF-8", dir.display())))?
            .to_string();
        let files: Vec<PathBuf> = sorted_dir(&dir)?.into_iter().filter(|p| p.is_file() && is_supported(p)).collect();
        if files.is_empty() {
            return Err(Error::InvalidDataset(format!("class folder {} has no supported images", dir.display())));
        }
        let label = class_names.len();
        class_names.push(name);
        for f in files {
            let id = f.strip_prefix(root).unwrap_or(&f).to_string_lossy().replace('\\', "/");
            samples.push((id, label));
            paths.push(f);
        }
    }
    if class_names.len() < 2 {
        return Err(Error::InvalidDataset(format!(
            "{} has {} class folder(s); at least 2 are required",
            root.display(),
            class_names.len()
        )));
    }
    Ok(ImageFolder {
        root: root.to_path_buf(),
        manifest: DatasetManifest::unsplit(class_names, samples),
        paths,
    })
}

impl ImageFolder {
    pub fn paths(&self) -> &[PathBuf] {
        &self.paths
    }

    /// Decode and preprocess every image into memory.
    pub fn load(&self, image_size: usize, normalization: Option<&Normalization>) -> Result<Dataset> {
        let mut pixels = Vec::with_capacity(self.paths.len() * 3 * image_size * image_size);
        for path in &self.paths {
            let img = Image::read_ppm(path)?;
            let t = preprocess(&img, image_size, normalization).map_err(|e| match e {
                Error::DecodeError { reason, .. } => Error::DecodeError {
                    path: path.clone(),
                    reason,
                },
                other => other,
            })?;
            pixels.extend_from_slice(t.data());
        }
        Dataset::new(self.manifest.clone(), image_size, pixels)
    }
}

/// Write every sample of `data` as `root/<class>/<stem>.ppm`, where the stem
/// is the last component of the sample's source id. Returns the paths in
/// entry order.
pub fn write_image_folder(data: &Dataset, root: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let root = root.as_ref();
    let m = data.manifest();
    for name in &m.class_names {
        let dir = root.join(name);
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    }
    let mut out = Vec::with_capacity(data.len());
    for (i, e) in m.entries.iter().enumerate() {
        let stem = e.source_id.rsplit('/').next().unwrap_or(&e.source_id);
        let path = root.join(&m.class_names[e.label]).join(format!("{stem}.ppm"));
        data.image(i).write_ppm(&path)?;
        out.push(path);
    }
    Ok(out)
}
