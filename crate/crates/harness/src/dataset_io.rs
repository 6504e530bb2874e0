//! On-disk dataset layout: one directory per split of individually saved
//! clouds plus a `manifest.txt` naming the classes.
//!
//! ```text
//! root/
//!   manifest.txt          # classes=…  points=…  seed=…
//!   train/cloud_00000.xyz # or .dnpc; companion .label files carry labels
//!   test/cloud_00000.xyz
//! ```

use std::fs;
use std::path::Path;

use dndfn_core::data::{load_cloud, save_cloud, CloudFormat, Dataset, Split};
use dndfn_core::{Error, Result};

pub fn save_dataset(root: &Path, dataset: &Dataset, format: CloudFormat) -> Result<()> {
    let split_dir = root.join(dataset.split.as_str());
    fs::create_dir_all(&split_dir)?;
    let manifest = format!(
        "classes={}\npoints={}\nseed={}\n",
        dataset.class_names.join(","),
        dataset.points,
        dataset.seed
    );
    fs::write(root.join("manifest.txt"), manifest)?;
    let ext = match format {
        CloudFormat::XyzText => "xyz",
        CloudFormat::Binary => "dnpc",
    };
    for (i, cloud) in dataset.clouds.iter().enumerate() {
        save_cloud(
            &split_dir.join(format!("cloud_{i:05}.{ext}")),
            cloud,
            format,
        )?;
    }
    Ok(())
}

pub fn load_dataset(root: &Path, split: Split) -> Result<Dataset> {
    let manifest_path = root.join("manifest.txt");
    let manifest = fs::read_to_string(&manifest_path)
        .map_err(|e| Error::Format(format!("{}: {e}", manifest_path.display())))?;
    let mut class_names: Vec<String> = Vec::new();
    let mut points = 0usize;
    let mut seed = 0u64;
    for line in manifest.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match line.split_once('=') {
            Some(("classes", v)) => {
                class_names = v.split(',').map(|s| s.trim().to_string()).collect()
            }
            Some(("points", v)) => {
                points = v
                    .parse()
                    .map_err(|_| Error::Format(format!("manifest points is not a number: '{v}'")))?
            }
            Some(("seed", v)) => {
                seed = v
                    .parse()
                    .map_err(|_| Error::Format(format!("manifest seed is not a number: '{v}'")))?
            }
            _ => {
                return Err(Error::Format(format!(
                    "manifest line not understood: '{line}'"
                )))
            }
        }
    }
    if class_names.is_empty() {
        return Err(Error::Format("manifest lists no classes".into()));
    }

    let split_dir = root.join(split.as_str());
    let mut files: Vec<_> = fs::read_dir(&split_dir)
        .map_err(|e| Error::Format(format!("{}: {e}", split_dir.display())))?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter_map(|entry| {
            let path = entry.path();
            match path.extension().and_then(|e| e.to_str()) {
                Some("xyz") => Some((path, CloudFormat::XyzText)),
                Some("dnpc") => Some((path, CloudFormat::Binary)),
                _ => None,
            }
        })
        .collect();
    files.sort_by(|a, b| a.0.cmp(&b.0));
    if files.is_empty() {
        return Err(Error::Format(format!(
            "no cloud files under {}",
            split_dir.display()
        )));
    }
    let mut clouds = Vec::with_capacity(files.len());
    for (path, format) in files {
        let cloud = load_cloud(&path, format)?;
        let label = cloud.label.ok_or_else(|| {
            Error::Format(format!("{}: missing companion label file", path.display()))
        })?;
        if label >= class_names.len() {
            return Err(Error::Format(format!(
                "{}: label {label} outside the {} manifest classes",
                path.display(),
                class_names.len()
            )));
        }
        clouds.push(cloud);
    }
    Ok(Dataset {
        clouds,
        class_names,
        split,
        seed,
        points,
    })
}
