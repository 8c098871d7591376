//! Dataset indexing.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{derive_edge, io, parse_attributes, Attribute, Sample};
use crate::config::Config;
use crate::error::{Result, TvnetError};
use crate::map::Map;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = TvnetError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(TvnetError::Config(format!(
                "split must be train or test, got {s:?}"
            ))),
        }
    }
}

/// Folder and file names of a split. The on-disk layout of real corpora
/// varies, so every component can be renamed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub train_dir: String,
    pub test_dir: String,
    pub images: String,
    pub masks: String,
    pub edges: String,
    pub attributes: String,
    /// Extension of mask and edge files.
    pub mask_ext: String,
}

impl Default for Layout {
    fn default() -> Self {
        Layout {
            train_dir: "train".into(),
            test_dir: "test".into(),
            images: "Images".into(),
            masks: "GT_Object".into(),
            edges: "GT_Edge".into(),
            attributes: "attributes.csv".into(),
            mask_ext: "png".into(),
        }
    }
}

impl Layout {
    pub const KEYS: [&'static str; 7] = [
        "train_dir",
        "test_dir",
        "images_dir",
        "masks_dir",
        "edges_dir",
        "attributes_file",
        "mask_ext",
    ];

    /// Applies layout keys of a flat config on top of `self`.
    pub fn apply(&self, cfg: &Config) -> Result<Self> {
        Ok(Layout {
            train_dir: cfg.get_or("train_dir", self.train_dir.clone())?,
            test_dir: cfg.get_or("test_dir", self.test_dir.clone())?,
            images: cfg.get_or("images_dir", self.images.clone())?,
            masks: cfg.get_or("masks_dir", self.masks.clone())?,
            edges: cfg.get_or("edges_dir", self.edges.clone())?,
            attributes: cfg.get_or("attributes_file", self.attributes.clone())?,
            mask_ext: cfg.get_or("mask_ext", self.mask_ext.clone())?,
        })
    }

    pub fn to_config(&self) -> Config {
        let mut cfg = Config::new();
        for (k, v) in [
            ("train_dir", &self.train_dir),
            ("test_dir", &self.test_dir),
            ("images_dir", &self.images),
            ("masks_dir", &self.masks),
            ("edges_dir", &self.edges),
            ("attributes_file", &self.attributes),
            ("mask_ext", &self.mask_ext),
        ] {
            cfg.set(k, v.clone()).expect("static keys are valid");
        }
        cfg
    }

    pub fn split_dir(&self, root: &Path, split: Split) -> PathBuf {
        root.join(match split {
            Split::Train => &self.train_dir,
            Split::Test => &self.test_dir,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    /// File stem shared by image, mask and edge.
    pub name: String,
    pub image: PathBuf,
    pub mask: PathBuf,
    /// `None` when the edge should be derived from the mask.
    pub edge: Option<PathBuf>,
    pub attributes: Vec<Attribute>,
    /// The mask is empty.
    pub background: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetIndex {
    pub split: Split,
    pub root: PathBuf,
    pub records: Vec<Record>,
}

impl DatasetIndex {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_background(&self) -> usize {
        self.records.iter().filter(|r| r.background).count()
    }

    /// Records with at least one object.
    pub fn foreground(&self) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(|r| !r.background)
    }
}

pub const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

/// Image files of a directory, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| TvnetError::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| TvnetError::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if path.is_file() && ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn read_attribute_table(path: &Path) -> Result<BTreeMap<String, Vec<Attribute>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| TvnetError::Data(format!("{}: {e}", path.display())))?;
    let mut table = BTreeMap::new();
    for (line, row) in reader.records().enumerate() {
        let row = row.map_err(|e| TvnetError::Data(format!("{}: {e}", path.display())))?;
        let file = row.get(0).unwrap_or("").trim();
        if file.is_empty() {
            continue;
        }
        let attrs = parse_attributes(row.get(1).unwrap_or("")).map_err(|e| match e {
            TvnetError::Data(msg) => {
                TvnetError::Data(format!("{} line {}: {msg}", path.display(), line + 2))
            }
            other => other,
        })?;
        table.insert(file_stem(Path::new(file)), attrs);
    }
    Ok(table)
}

/// Indexes `<root>/<split dir>` and validates it: every image needs a
/// mask, and when an edge folder exists every object image needs an edge.
pub fn load_index(root: &Path, split: Split, layout: &Layout) -> Result<DatasetIndex> {
    let dir = layout.split_dir(root, split);
    let image_dir = dir.join(&layout.images);
    if !image_dir.is_dir() {
        return Err(TvnetError::Data(format!(
            "missing image folder {}",
            image_dir.display()
        )));
    }
    let mask_dir = dir.join(&layout.masks);
    let edge_dir = dir.join(&layout.edges);
    let has_edges = edge_dir.is_dir();
    let attr_path = dir.join(&layout.attributes);
    let attributes = if attr_path.is_file() {
        read_attribute_table(&attr_path)?
    } else {
        BTreeMap::new()
    };

    let mut records = Vec::new();
    for image in list_images(&image_dir)? {
        let name = file_stem(&image);
        let mask = mask_dir.join(format!("{name}.{}", layout.mask_ext));
        if !mask.is_file() {
            return Err(TvnetError::Data(format!(
                "image {} has no mask (expected {})",
                image.display(),
                mask.display()
            )));
        }
        let background = io::read_binary(&mask)?.count_nonzero() == 0;
        let edge = if has_edges {
            let path = edge_dir.join(format!("{name}.{}", layout.mask_ext));
            match (path.is_file(), background) {
                (true, _) => Some(path),
                (false, true) => None,
                (false, false) => {
                    return Err(TvnetError::Data(format!(
                        "image {} has no edge map (expected {})",
                        image.display(),
                        path.display()
                    )))
                }
            }
        } else {
            None
        };
        records.push(Record {
            attributes: attributes.get(&name).cloned().unwrap_or_default(),
            name,
            image,
            mask,
            edge,
            background,
        });
    }
    let index = DatasetIndex {
        split,
        root: dir,
        records,
    };
    log::info!(
        "{split} split: {} images ({} background)",
        index.len(),
        index.num_background()
    );
    Ok(index)
}

/// Reads one record; edges are derived (width 1) when not on disk.
pub fn load_sample(record: &Record) -> Result<Sample> {
    let image = io::read_rgb(&record.image)?;
    let mask = io::read_binary(&record.mask)?;
    let edge = match &record.edge {
        Some(path) => io::read_binary(path)?,
        None => derive_edge(&mask, 1),
    };
    let (h, w) = image.spatial();
    if mask.height() != h || mask.width() != w {
        return Err(TvnetError::Data(format!(
            "{}: mask is {}x{}, image is {h}x{w}",
            record.name,
            mask.height(),
            mask.width()
        )));
    }
    let edge = if edge.same_size(&mask) {
        edge
    } else {
        return Err(TvnetError::Data(format!(
            "{}: edge and mask sizes differ",
            record.name
        )));
    };
    Sample::new(
        record.name.clone(),
        image,
        mask,
        edge,
        record.attributes.clone(),
    )
}

/// Reads every mask of an index.
pub fn load_masks(index: &DatasetIndex) -> Result<Vec<Map>> {
    index
        .records
        .iter()
        .map(|r| io::read_binary(&r.mask))
        .collect()
}

/// Reads every record of an index, in index order.
pub fn load_samples(index: &DatasetIndex) -> Result<Vec<Sample>> {
    index.records.iter().map(load_sample).collect()
}
