//! Neighborhood visualization export: for one center at one layer, which
//! points each branch selected, written as JSON for external viewers.
//!
//! Schema (all indices refer to rows of `points`):
//! ```json
//! {
//!   "layer": 2,             // fusion layer the sets were captured at
//!   "center": 5,            // the queried point (conventionally pink)
//!   "sets": {
//!     "green": [..],        // local-branch-only neighbors
//!     "blue":  [..],        // key-branch-only neighbors
//!     "red":   [..]         // selected by both branches
//!   },
//!   "points": [[x, y, z], ..]  // the layer's active points
//! }
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use dndfn_core::neighborhood::PointCloud;
use dndfn_core::network::{dndfn_forward_traced, ModelParams, NetworkConfig};
use dndfn_core::numerics::{ForwardCtx, Mode};
use dndfn_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ColorSets {
    pub green: Vec<usize>,
    pub blue: Vec<usize>,
    pub red: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NeighborExport {
    pub layer: usize,
    pub center: usize,
    pub sets: ColorSets,
    pub points: Vec<[f32; 3]>,
}

/// Run the model on one cloud and capture the dual neighborhoods of
/// `center` at `layer` (2–4).
pub fn neighbor_export(
    network: &NetworkConfig,
    model: &mut ModelParams<f32>,
    cloud: &PointCloud,
    layer: usize,
    center: usize,
) -> Result<NeighborExport> {
    let mut ctx = ForwardCtx::new(Mode::Eval, 0);
    let (_, trace) =
        dndfn_forward_traced(&mut ctx, model, network, std::slice::from_ref(cloud), layer)?;
    if center >= trace.points.len() {
        return Err(Error::Index(format!(
            "center {center} is outside layer {layer}'s active set of {} points",
            trace.points.len()
        )));
    }
    let local: BTreeSet<usize> = trace.local[center].iter().copied().collect();
    let key: BTreeSet<usize> = trace.key[center].iter().copied().collect();
    let red: Vec<usize> = local.intersection(&key).copied().collect();
    let green: Vec<usize> = local.difference(&key).copied().collect();
    let blue: Vec<usize> = key.difference(&local).copied().collect();
    Ok(NeighborExport {
        layer,
        center,
        sets: ColorSets { green, blue, red },
        points: trace.points.clone(),
    })
}

pub fn write_export(path: &Path, export: &NeighborExport) -> Result<()> {
    let mut text = serde_json::to_string_pretty(export)
        .map_err(|e| Error::Format(format!("serializing export: {e}")))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Parse and check an export file: known fields only, indices in range,
/// color sets pairwise disjoint, layer in the fusion range.
pub fn validate_export(text: &str) -> Result<NeighborExport> {
    let export: NeighborExport = serde_json::from_str(text)
        .map_err(|e| Error::Format(format!("export does not match the schema: {e}")))?;
    if !(2..=4).contains(&export.layer) {
        return Err(Error::Format(format!(
            "export layer {} is outside the fusion layers 2-4",
            export.layer
        )));
    }
    let n = export.points.len();
    if export.center >= n {
        return Err(Error::Format(format!(
            "export center {} exceeds the {} listed points",
            export.center, n
        )));
    }
    let sets = [
        ("green", &export.sets.green),
        ("blue", &export.sets.blue),
        ("red", &export.sets.red),
    ];
    for (name, set) in &sets {
        for &i in *set {
            if i >= n {
                return Err(Error::Format(format!(
                    "{name} index {i} exceeds the {n} listed points"
                )));
            }
        }
    }
    for a in 0..sets.len() {
        for b in (a + 1)..sets.len() {
            let sb: BTreeSet<usize> = sets[b].1.iter().copied().collect();
            if let Some(shared) = sets[a].1.iter().find(|i| sb.contains(i)) {
                return Err(Error::Format(format!(
                    "index {shared} appears in both {} and {}",
                    sets[a].0, sets[b].0
                )));
            }
        }
    }
    Ok(export)
}
