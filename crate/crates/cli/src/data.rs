//! Reading image sets and plate texts from dataset directories, single
//! files and CSV tables.

use std::collections::BTreeMap;
use std::path::Path;

use platesmith_core::io::{read_annotation, read_image, resolve, Label, Manifest, MANIFEST_FILE};
use platesmith_core::Raster;

use crate::error::{CliError, CliResult};

const IMAGE_EXTENSIONS: [&str; 4] = ["ppm", "pgm", "pnm", "png"];

pub struct Item {
    pub id: String,
    pub image: Raster,
    pub text: Option<String>,
    pub labels: Option<Vec<Label>>,
}

pub fn is_dataset(path: &Path) -> bool {
    path.join(MANIFEST_FILE).is_file()
}

fn missing(path: &Path) -> CliError {
    CliError::Usage(format!("{} does not exist", path.display()))
}

/// Images from a dataset directory (manifest order), a plain directory of
/// image files (name order) or a single image file.
pub fn load_items(path: &Path) -> CliResult<Vec<Item>> {
    if !path.exists() {
        return Err(missing(path));
    }
    if is_dataset(path) {
        let m = Manifest::load(path)?;
        return m
            .items()
            .map(|(_, it)| {
                let labels = match &it.label {
                    Some(rel) => Some(read_annotation(&resolve(path, rel)?)?),
                    None => None,
                };
                Ok(Item {
                    id: it.id.clone(),
                    image: read_image(&resolve(path, &it.image)?)?,
                    text: it.text.clone(),
                    labels,
                })
            })
            .collect();
    }
    let files = if path.is_file() {
        vec![path.to_path_buf()]
    } else {
        let mut v: Vec<_> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
            })
            .collect();
        v.sort();
        v
    };
    if files.is_empty() {
        return Err(CliError::Data(format!("no images found in {}", path.display())));
    }
    files
        .iter()
        .map(|p| {
            Ok(Item {
                id: p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string(),
                image: read_image(p)?,
                text: None,
                labels: None,
            })
        })
        .collect()
}

pub fn load_images(path: &Path) -> CliResult<Vec<Raster>> {
    Ok(load_items(path)?.into_iter().map(|i| i.image).collect())
}

/// Id to plate text, from a dataset manifest or a CSV with `id` and `text`
/// columns.
pub fn load_texts(path: &Path) -> CliResult<BTreeMap<String, String>> {
    if !path.exists() {
        return Err(missing(path));
    }
    if is_dataset(path) {
        let m = Manifest::load(path)?;
        return Ok(m
            .items()
            .filter_map(|(_, it)| it.text.clone().map(|t| (it.id.clone(), t)))
            .collect());
    }
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Data(format!("{} has no {name:?} column", path.display())))
    };
    let (id, text) = (col("id")?, col("text")?);
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        out.insert(rec[id].to_string(), rec[text].to_string());
    }
    Ok(out)
}
