//! Synthetic shape datasets, augmentation, and point-cloud file IO.
//!
//! Six surface primitives sampled uniformly by area, posed per cloud with a
//! random heading and scale. Every cloud derives its own RNG stream from
//! (seed, split, class, index), which makes datasets bitwise reproducible
//! and train/test streams disjoint by construction.

use std::fs;
use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::neighborhood::PointCloud;
use crate::{Error, Result};

/// The shape classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Primitive {
    Sphere,
    Cube,
    Cylinder,
    Torus,
    Plane,
    Cone,
}

impl Primitive {
    pub const ALL: [Primitive; 6] = [
        Primitive::Sphere,
        Primitive::Cube,
        Primitive::Cylinder,
        Primitive::Torus,
        Primitive::Plane,
        Primitive::Cone,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Primitive::Sphere => "sphere",
            Primitive::Cube => "cube",
            Primitive::Cylinder => "cylinder",
            Primitive::Torus => "torus",
            Primitive::Plane => "plane",
            Primitive::Cone => "cone",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown shape class '{s}'")))
    }
}

impl std::fmt::Display for Primitive {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// A labeled collection of fixed-size clouds.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub clouds: Vec<PointCloud>,
    pub class_names: Vec<String>,
    pub split: Split,
    pub seed: u64,
    pub points: usize,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

fn cloud_seed(seed: u64, split: Split, class: usize, index: usize) -> u64 {
    let tag = match split {
        Split::Train => 1,
        Split::Test => 2,
    };
    let mut s = splitmix64(seed ^ 0xd6e8feb86659fd93);
    s = splitmix64(s ^ tag);
    s = splitmix64(s ^ class as u64);
    splitmix64(s ^ index as u64)
}

/// Uniform surface sample of one primitive in canonical pose and unit size.
pub fn sample_primitive(prim: Primitive, points: usize, rng: &mut ChaCha8Rng) -> Vec<[f32; 3]> {
    use std::f64::consts::TAU;
    let mut out = Vec::with_capacity(points);
    for _ in 0..points {
        let p: [f64; 3] = match prim {
            Primitive::Sphere => {
                let z: f64 = rng.random_range(-1.0..1.0);
                let theta = rng.random_range(0.0..TAU);
                let r = (1.0 - z * z).max(0.0).sqrt();
                [r * theta.cos(), r * theta.sin(), z]
            }
            Primitive::Cube => {
                // Six unit-area faces of [-1, 1]^3; equal pick probability.
                let face = rng.random_range(0..6u32);
                let a = rng.random_range(-1.0..1.0);
                let b = rng.random_range(-1.0..1.0);
                match face {
                    0 => [1.0, a, b],
                    1 => [-1.0, a, b],
                    2 => [a, 1.0, b],
                    3 => [a, -1.0, b],
                    4 => [a, b, 1.0],
                    _ => [a, b, -1.0],
                }
            }
            Primitive::Cylinder => {
                // Radius 1, height 2: lateral area 4π vs two caps 2π.
                if rng.random_range(0.0..1.0) < 2.0 / 3.0 {
                    let theta = rng.random_range(0.0..TAU);
                    [theta.cos(), theta.sin(), rng.random_range(-1.0..1.0)]
                } else {
                    let r = rng.random_range(0.0f64..1.0).sqrt();
                    let theta = rng.random_range(0.0..TAU);
                    let z = if rng.random_range(0.0..1.0) < 0.5 {
                        1.0
                    } else {
                        -1.0
                    };
                    [r * theta.cos(), r * theta.sin(), z]
                }
            }
            Primitive::Torus => {
                // Major radius 1, minor 0.4; area density on the tube angle
                // is proportional to (R + r cos v), handled by rejection.
                let (big_r, small_r) = (1.0f64, 0.4f64);
                let u = rng.random_range(0.0..TAU);
                let v = loop {
                    let v = rng.random_range(0.0..TAU);
                    let accept = (big_r + small_r * v.cos()) / (big_r + small_r);
                    if rng.random_range(0.0..1.0) < accept {
                        break v;
                    }
                };
                let ring = big_r + small_r * v.cos();
                [ring * u.cos(), ring * u.sin(), small_r * v.sin()]
            }
            Primitive::Plane => [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                0.0,
            ],
            Primitive::Cone => {
                // Base radius 1 at z = 0, apex at z = 1. Lateral area π√2,
                // base area π.
                let lateral = 2.0f64.sqrt() / (1.0 + 2.0f64.sqrt());
                let theta = rng.random_range(0.0..TAU);
                if rng.random_range(0.0..1.0) < lateral {
                    let t = rng.random_range(0.0f64..1.0).sqrt();
                    [t * theta.cos(), t * theta.sin(), 1.0 - t]
                } else {
                    let r = rng.random_range(0.0f64..1.0).sqrt();
                    [r * theta.cos(), r * theta.sin(), 0.0]
                }
            }
        };
        out.push([p[0] as f32, p[1] as f32, p[2] as f32]);
    }
    out
}

/// Per-cloud pose: heading about z uniform in [0, 2π), scale uniform in
/// [0.8, 1.25].
fn apply_pose(points: &mut [[f32; 3]], rng: &mut ChaCha8Rng) {
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let scale = rng.random_range(0.8..1.25);
    let (s, c) = angle.sin_cos();
    for p in points.iter_mut() {
        let (x, y, z) = (p[0] as f64, p[1] as f64, p[2] as f64);
        p[0] = ((c * x - s * y) * scale) as f32;
        p[1] = ((s * x + c * y) * scale) as f32;
        p[2] = (z * scale) as f32;
    }
}

/// Generate `per_class` clouds for each class, deterministically from the
/// seed. Labels index into `classes` order.
pub fn gen_dataset(
    classes: &[Primitive],
    per_class: usize,
    points: usize,
    seed: u64,
    split: Split,
) -> Result<Dataset> {
    if classes.is_empty() {
        return Err(Error::Config("dataset needs at least one class".into()));
    }
    if per_class < 1 {
        return Err(Error::Config("per_class must be at least 1".into()));
    }
    if points < 8 {
        return Err(Error::Config(format!(
            "need at least 8 points per cloud, got {points}"
        )));
    }
    let mut clouds = Vec::with_capacity(classes.len() * per_class);
    for (label, &prim) in classes.iter().enumerate() {
        for index in 0..per_class {
            let mut rng = ChaCha8Rng::seed_from_u64(cloud_seed(seed, split, label, index));
            let mut points_vec = sample_primitive(prim, points, &mut rng);
            apply_pose(&mut points_vec, &mut rng);
            clouds.push(PointCloud::with_label(points_vec, label)?);
        }
    }
    Ok(Dataset {
        clouds,
        class_names: classes.iter().map(|p| p.as_str().to_string()).collect(),
        split,
        seed,
        points,
    })
}

// ── augmentation ─────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rotation {
    None,
    ZAxis,
    Arbitrary,
}

impl Rotation {
    pub fn as_str(self) -> &'static str {
        match self {
            Rotation::None => "none",
            Rotation::ZAxis => "z",
            Rotation::Arbitrary => "arbitrary",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Rotation::None),
            "z" => Ok(Rotation::ZAxis),
            "arbitrary" => Ok(Rotation::Arbitrary),
            other => Err(Error::Config(format!("unknown rotation mode '{other}'"))),
        }
    }
}

/// What [`augment`] applies, in order: rotation, scale, jitter, subsample.
/// The default spec is the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentSpec {
    pub rotation: Rotation,
    pub scale: (f64, f64),
    pub jitter_sigma: f64,
    pub subsample: Option<usize>,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            rotation: Rotation::None,
            scale: (1.0, 1.0),
            jitter_sigma: 0.0,
            subsample: None,
        }
    }
}

impl AugmentSpec {
    pub fn is_identity(&self) -> bool {
        self.rotation == Rotation::None
            && self.scale == (1.0, 1.0)
            && self.jitter_sigma == 0.0
            && self.subsample.is_none()
    }

    fn validate(&self, cloud_len: usize) -> Result<()> {
        if self.scale.0 > self.scale.1 {
            return Err(Error::Config(format!(
                "scale range is inverted: {:?}",
                self.scale
            )));
        }
        if self.scale.0 <= 0.0 {
            return Err(Error::Config("scale must stay positive".into()));
        }
        if self.jitter_sigma < 0.0 {
            return Err(Error::Config("jitter sigma must be non-negative".into()));
        }
        if let Some(m) = self.subsample {
            if m == 0 || m > cloud_len {
                return Err(Error::Capacity(format!(
                    "subsample of {m} from a {cloud_len}-point cloud"
                )));
            }
        }
        Ok(())
    }
}

/// A rotation matrix drawn uniformly per the mode: a heading about z, or a
/// fully arbitrary orientation via uniform unit quaternions.
pub fn random_rotation(mode: Rotation, rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    use std::f64::consts::TAU;
    match mode {
        Rotation::None => [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        Rotation::ZAxis => {
            let (s, c) = rng.random_range(0.0..TAU).sin_cos();
            [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
        }
        Rotation::Arbitrary => {
            let u1: f64 = rng.random_range(0.0..1.0);
            let u2: f64 = rng.random_range(0.0..TAU);
            let u3: f64 = rng.random_range(0.0..TAU);
            let a = (1.0 - u1).sqrt();
            let b = u1.sqrt();
            let (x, y, z, w) = (a * u2.sin(), a * u2.cos(), b * u3.sin(), b * u3.cos());
            [
                [
                    1.0 - 2.0 * (y * y + z * z),
                    2.0 * (x * y - z * w),
                    2.0 * (x * z + y * w),
                ],
                [
                    2.0 * (x * y + z * w),
                    1.0 - 2.0 * (x * x + z * z),
                    2.0 * (y * z - x * w),
                ],
                [
                    2.0 * (x * z - y * w),
                    2.0 * (y * z + x * w),
                    1.0 - 2.0 * (x * x + y * y),
                ],
            ]
        }
    }
}

/// Apply a spec deterministically; the identity spec returns the cloud
/// bitwise unchanged.
pub fn augment(cloud: &PointCloud, spec: &AugmentSpec, seed: u64) -> Result<PointCloud> {
    spec.validate(cloud.len())?;
    if spec.is_identity() {
        return Ok(cloud.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0xa076_1d64_78bd_642f));
    let rot = random_rotation(spec.rotation, &mut rng);
    let scale = if spec.scale.0 == spec.scale.1 {
        spec.scale.0
    } else {
        rng.random_range(spec.scale.0..spec.scale.1)
    };
    let jitter = (spec.jitter_sigma > 0.0)
        .then(|| Normal::new(0.0f64, spec.jitter_sigma).expect("sigma validated"));
    let mut points: Vec<[f32; 3]> = cloud
        .points
        .iter()
        .map(|p| {
            let v = [p[0] as f64, p[1] as f64, p[2] as f64];
            let mut out = [0.0f32; 3];
            for (axis, row) in rot.iter().enumerate() {
                let mut e = (row[0] * v[0] + row[1] * v[1] + row[2] * v[2]) * scale;
                if let Some(n) = &jitter {
                    e += n.sample(&mut rng);
                }
                out[axis] = e as f32;
            }
            out
        })
        .collect();
    if let Some(m) = spec.subsample {
        // Partial Fisher-Yates, then ascending order for determinism.
        let mut idx: Vec<usize> = (0..points.len()).collect();
        for i in 0..m {
            let j = rng.random_range(i..idx.len());
            idx.swap(i, j);
        }
        let mut keep = idx[..m].to_vec();
        keep.sort_unstable();
        points = keep.into_iter().map(|i| points[i]).collect();
    }
    let mut out = PointCloud::new(points)?;
    out.label = cloud.label;
    Ok(out)
}

// ── file formats ─────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CloudFormat {
    XyzText,
    Binary,
}

const MAGIC: &[u8; 4] = b"DNPC";
const VERSION: u32 = 1;

/// Write a cloud; an attached label also writes `<path with .label>`.
pub fn save_cloud(path: &Path, cloud: &PointCloud, format: CloudFormat) -> Result<()> {
    match format {
        CloudFormat::XyzText => {
            let mut text = String::new();
            for p in &cloud.points {
                text.push_str(&format!("{} {} {}\n", p[0], p[1], p[2]));
            }
            fs::write(path, text)?;
        }
        CloudFormat::Binary => {
            let mut buf = Vec::with_capacity(12 + cloud.len() * 12);
            buf.extend_from_slice(MAGIC);
            buf.extend_from_slice(&VERSION.to_le_bytes());
            buf.extend_from_slice(&(cloud.len() as u32).to_le_bytes());
            for p in &cloud.points {
                for c in p {
                    buf.extend_from_slice(&c.to_le_bytes());
                }
            }
            fs::write(path, buf)?;
        }
    }
    if let Some(label) = cloud.label {
        fs::write(path.with_extension("label"), format!("{label}\n"))?;
    }
    Ok(())
}

/// Read a cloud; a companion `.label` file restores the label when present.
pub fn load_cloud(path: &Path, format: CloudFormat) -> Result<PointCloud> {
    let mut cloud = match format {
        CloudFormat::XyzText => load_xyz(path)?,
        CloudFormat::Binary => load_binary(path)?,
    };
    let label_path = path.with_extension("label");
    if label_path.exists() {
        let text = fs::read_to_string(&label_path)?;
        let label = text.trim().parse::<usize>().map_err(|_| {
            Error::Format(format!(
                "{}: label file must hold one integer, got '{}'",
                label_path.display(),
                text.trim()
            ))
        })?;
        cloud.label = Some(label);
    }
    Ok(cloud)
}

fn load_xyz(path: &Path) -> Result<PointCloud> {
    let text = fs::read_to_string(path)?;
    let mut points = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(' ').collect();
        if fields.len() != 3 {
            return Err(Error::Format(format!(
                "{}:{}: expected three space-separated values, got {}",
                path.display(),
                lineno + 1,
                fields.len()
            )));
        }
        let mut p = [0.0f32; 3];
        for (slot, field) in p.iter_mut().zip(&fields) {
            *slot = field.parse::<f32>().map_err(|_| {
                Error::Format(format!(
                    "{}:{}: non-numeric token '{}'",
                    path.display(),
                    lineno + 1,
                    field
                ))
            })?;
        }
        points.push(p);
    }
    PointCloud::new(points)
}

fn load_binary(path: &Path) -> Result<PointCloud> {
    let mut file = fs::File::open(path)?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf)?;
    if buf.len() < 4 || &buf[..4] != MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic at byte 0, expected \"DNPC\"",
            path.display()
        )));
    }
    let word = |ofs: usize, what: &str| -> Result<u32> {
        let bytes: [u8; 4] = buf
            .get(ofs..ofs + 4)
            .ok_or_else(|| {
                Error::Format(format!(
                    "{}: truncated {} at byte {}",
                    path.display(),
                    what,
                    ofs
                ))
            })?
            .try_into()
            .unwrap();
        Ok(u32::from_le_bytes(bytes))
    };
    let version = word(4, "version")?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported version {version}, expected {VERSION}",
            path.display()
        )));
    }
    let count = word(8, "point count")? as usize;
    let need = 12 + count * 12;
    if buf.len() < need {
        return Err(Error::Format(format!(
            "{}: truncated payload at byte {}, need {} for {} points",
            path.display(),
            buf.len(),
            need,
            count
        )));
    }
    let mut points = Vec::with_capacity(count);
    for i in 0..count {
        let base = 12 + i * 12;
        let mut p = [0.0f32; 3];
        for (axis, slot) in p.iter_mut().enumerate() {
            let ofs = base + axis * 4;
            *slot = f32::from_le_bytes(buf[ofs..ofs + 4].try_into().unwrap());
        }
        points.push(p);
    }
    PointCloud::new(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn sphere_samples_sit_on_the_unit_sphere() {
        let pts = sample_primitive(Primitive::Sphere, 500, &mut rng(1));
        for p in pts {
            let n = (p[0] as f64).hypot(p[1] as f64).hypot(p[2] as f64);
            assert!((n - 1.0).abs() < 1e-6, "norm {n}");
        }
    }

    #[test]
    fn plane_samples_have_zero_height() {
        let pts = sample_primitive(Primitive::Plane, 200, &mut rng(2));
        assert!(pts.iter().all(|p| p[2] == 0.0));
    }

    #[test]
    fn torus_samples_stay_on_the_torus() {
        let pts = sample_primitive(Primitive::Torus, 300, &mut rng(3));
        for p in pts {
            let ring = (p[0] as f64).hypot(p[1] as f64) - 1.0;
            let d = ring.hypot(p[2] as f64);
            assert!((d - 0.4).abs() < 1e-6, "tube distance {d}");
        }
    }

    #[test]
    fn same_seed_gives_bitwise_identical_datasets() {
        let classes = [Primitive::Sphere, Primitive::Cube];
        let a = gen_dataset(&classes, 3, 32, 99, Split::Train).unwrap();
        let b = gen_dataset(&classes, 3, 32, 99, Split::Train).unwrap();
        assert_eq!(a.clouds.len(), b.clouds.len());
        for (x, y) in a.clouds.iter().zip(&b.clouds) {
            assert_eq!(x.points, y.points);
            assert_eq!(x.label, y.label);
        }
    }

    #[test]
    fn train_and_test_streams_are_disjoint() {
        let classes = [Primitive::Sphere, Primitive::Torus];
        let train = gen_dataset(&classes, 4, 32, 7, Split::Train).unwrap();
        let test = gen_dataset(&classes, 4, 32, 7, Split::Test).unwrap();
        for tr in &train.clouds {
            for te in &test.clouds {
                assert_ne!(tr.points, te.points);
            }
        }
    }

    #[test]
    fn dataset_shape_and_labels() {
        let classes = [Primitive::Sphere, Primitive::Cube, Primitive::Cone];
        let d = gen_dataset(&classes, 5, 16, 0, Split::Train).unwrap();
        assert_eq!(d.clouds.len(), 15);
        assert_eq!(d.num_classes(), 3);
        for (i, c) in d.clouds.iter().enumerate() {
            assert_eq!(c.len(), 16);
            assert_eq!(c.label, Some(i / 5));
        }
    }

    #[test]
    fn tiny_point_count_is_rejected() {
        assert!(matches!(
            gen_dataset(&[Primitive::Sphere], 1, 4, 0, Split::Train),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn identity_augment_is_bitwise_identity() {
        let d = gen_dataset(&[Primitive::Cylinder], 1, 64, 5, Split::Train).unwrap();
        let out = augment(&d.clouds[0], &AugmentSpec::default(), 123).unwrap();
        assert_eq!(out.points, d.clouds[0].points);
        assert_eq!(out.label, d.clouds[0].label);
    }

    #[test]
    fn rotations_are_proper_orthogonal() {
        let mut r = rng(6);
        for mode in [Rotation::ZAxis, Rotation::Arbitrary] {
            for _ in 0..100 {
                let m = random_rotation(mode, &mut r);
                for i in 0..3 {
                    for j in 0..3 {
                        let dot: f64 = (0..3).map(|e| m[e][i] * m[e][j]).sum();
                        let expect = if i == j { 1.0 } else { 0.0 };
                        assert!((dot - expect).abs() < 1e-6, "RtR[{i}][{j}] = {dot}");
                    }
                }
                let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                    - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                    + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
                assert!((det - 1.0).abs() < 1e-6, "det {det}");
            }
        }
    }

    #[test]
    fn rotation_preserves_pairwise_distances() {
        let d = gen_dataset(&[Primitive::Cube], 1, 32, 8, Split::Train).unwrap();
        let cloud = &d.clouds[0];
        let spec = AugmentSpec {
            rotation: Rotation::Arbitrary,
            ..AugmentSpec::default()
        };
        let rotated = augment(cloud, &spec, 77).unwrap();
        for i in 0..cloud.len() {
            for j in (i + 1)..cloud.len() {
                let a = cloud.dist2(i, j).sqrt();
                let b = rotated.dist2(i, j).sqrt();
                assert!((a - b).abs() < 1e-6, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn fixed_scale_two_doubles_norms() {
        let d = gen_dataset(&[Primitive::Sphere], 1, 32, 9, Split::Train).unwrap();
        let cloud = &d.clouds[0];
        let spec = AugmentSpec {
            scale: (2.0, 2.0),
            ..AugmentSpec::default()
        };
        let scaled = augment(cloud, &spec, 1).unwrap();
        for (p, q) in cloud.points.iter().zip(&scaled.points) {
            let a = (p[0] as f64).hypot(p[1] as f64).hypot(p[2] as f64);
            let b = (q[0] as f64).hypot(q[1] as f64).hypot(q[2] as f64);
            assert!((b - 2.0 * a).abs() < 1e-6);
        }
    }

    #[test]
    fn subsample_is_a_subset_of_rows() {
        let d = gen_dataset(&[Primitive::Cone], 1, 64, 10, Split::Train).unwrap();
        let cloud = &d.clouds[0];
        let spec = AugmentSpec {
            subsample: Some(20),
            ..AugmentSpec::default()
        };
        let sub = augment(cloud, &spec, 3).unwrap();
        assert_eq!(sub.len(), 20);
        for p in &sub.points {
            assert!(cloud.points.contains(p));
        }
        let over = AugmentSpec {
            subsample: Some(65),
            ..AugmentSpec::default()
        };
        assert!(matches!(augment(cloud, &over, 3), Err(Error::Capacity(_))));
    }

    #[test]
    fn binary_roundtrip_is_bitwise() {
        let dir = std::env::temp_dir().join("dndfn-data-test-bin");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("cloud.dnpc");
        let d = gen_dataset(&[Primitive::Torus], 1, 48, 11, Split::Train).unwrap();
        save_cloud(&path, &d.clouds[0], CloudFormat::Binary).unwrap();
        let back = load_cloud(&path, CloudFormat::Binary).unwrap();
        assert_eq!(back.points, d.clouds[0].points);
        assert_eq!(back.label, d.clouds[0].label);
    }

    #[test]
    fn text_roundtrip_is_exact_and_matches_binary() {
        let dir = std::env::temp_dir().join("dndfn-data-test-txt");
        fs::create_dir_all(&dir).unwrap();
        let d = gen_dataset(&[Primitive::Sphere], 1, 32, 12, Split::Train).unwrap();
        let txt = dir.join("cloud.xyz");
        let bin = dir.join("cloud.dnpc");
        save_cloud(&txt, &d.clouds[0], CloudFormat::XyzText).unwrap();
        save_cloud(&bin, &d.clouds[0], CloudFormat::Binary).unwrap();
        let from_text = load_cloud(&txt, CloudFormat::XyzText).unwrap();
        let from_bin = load_cloud(&bin, CloudFormat::Binary).unwrap();
        // Shortest-roundtrip float printing makes the text form exact too.
        assert_eq!(from_text.points, from_bin.points);
        assert_eq!(from_text.points, d.clouds[0].points);
    }

    #[test]
    fn wrong_magic_is_reported_by_name() {
        let dir = std::env::temp_dir().join("dndfn-data-test-magic");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bogus.dnpc");
        fs::write(&path, b"NOPE\x01\x00\x00\x00\x00\x00\x00\x00").unwrap();
        let err = load_cloud(&path, CloudFormat::Binary)
            .unwrap_err()
            .to_string();
        assert!(err.contains("DNPC"), "error must name the magic: {err}");
    }

    #[test]
    fn truncated_binary_reports_byte_position() {
        let dir = std::env::temp_dir().join("dndfn-data-test-trunc");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("short.dnpc");
        let mut buf = Vec::new();
        buf.extend_from_slice(b"DNPC");
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(&10u32.to_le_bytes()); // claims 10 points, has none
        fs::write(&path, buf).unwrap();
        let err = load_cloud(&path, CloudFormat::Binary)
            .unwrap_err()
            .to_string();
        assert!(err.contains("truncated"), "{err}");
        assert!(err.contains("byte 12"), "{err}");
    }

    #[test]
    fn non_numeric_token_reports_line() {
        let dir = std::env::temp_dir().join("dndfn-data-test-token");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.xyz");
        fs::write(&path, "0.5 0.5 0.5\n1.0 oops 2.0\n").unwrap();
        let err = load_cloud(&path, CloudFormat::XyzText)
            .unwrap_err()
            .to_string();
        assert!(err.contains(":2:"), "line number missing: {err}");
        assert!(err.contains("oops"), "{err}");
    }
}
