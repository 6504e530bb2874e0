//! The resolved run configuration and its flat `key=value` text form.
//!
//! The same text serves as config files (with `#` comments), as the console
//! echo every command prints, and as the config block embedded in
//! checkpoints — so `parse(to_text(c)) == c` must hold exactly, which the
//! shortest-roundtrip float formatting of `Display` guarantees.

use std::fmt::Write as _;
use std::path::PathBuf;

use dndfn_core::data::{AugmentSpec, Rotation};
use dndfn_core::neighborhood::NeighborhoodMode;
use dndfn_core::network::{NetworkConfig, NUM_LAYERS};
use dndfn_core::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub network: NetworkConfig,
    pub epochs: usize,
    pub batch: usize,
    pub lr_initial: f64,
    pub lr_final: f64,
    pub momentum: f64,
    pub seed: u64,
    pub dataset: PathBuf,
    pub augment: AugmentSpec,
    /// Evaluate on the test split every this many epochs (and at the end).
    pub eval_every: usize,
    /// Stop once test accuracy reaches this value, keeping desk runs short.
    pub early_stop_acc: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            network: NetworkConfig::default(),
            epochs: 18,
            batch: 16,
            lr_initial: 0.1,
            lr_final: 0.001,
            momentum: 0.9,
            seed: 7,
            dataset: PathBuf::from("data"),
            augment: AugmentSpec::default(),
            eval_every: 1,
            early_stop_acc: Some(0.97),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch < 1 {
            return Err(Error::Config("batch must be at least 1".into()));
        }
        if self.lr_initial <= 0.0 || self.lr_final <= 0.0 {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.eval_every < 1 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        if let Some(a) = self.early_stop_acc {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Config(format!(
                    "early_stop accuracy must lie in [0, 1], got {a}"
                )));
            }
        }
        if self.dataset.as_os_str().is_empty() {
            return Err(Error::Config("dataset path is empty".into()));
        }
        Ok(())
    }

    /// Flat `key=value` listing; stable ordering so identical configs
    /// serialize to identical bytes.
    pub fn to_text(&self) -> String {
        let n = &self.network;
        let mut s = String::new();
        let list = |xs: &[String]| xs.join(",");
        writeln!(s, "# network").unwrap();
        writeln!(s, "points={}", n.points_in).unwrap();
        writeln!(
            s,
            "layer_points={}",
            list(&n.layer_points.map(|v| v.to_string()))
        )
        .unwrap();
        writeln!(s, "channels={}", list(&n.channels.map(|v| v.to_string()))).unwrap();
        writeln!(s, "k={}", n.k).unwrap();
        writeln!(s, "radii={}", list(&n.radii.map(|v| v.to_string()))).unwrap();
        writeln!(s, "num_classes={}", n.num_classes).unwrap();
        writeln!(s, "dropout={}", n.dropout).unwrap();
        writeln!(s, "head_hidden={}", n.head_hidden).unwrap();
        writeln!(s, "mode={}", n.mode).unwrap();
        writeln!(s, "# optimizer").unwrap();
        writeln!(s, "epochs={}", self.epochs).unwrap();
        writeln!(s, "batch={}", self.batch).unwrap();
        writeln!(s, "lr_initial={}", self.lr_initial).unwrap();
        writeln!(s, "lr_final={}", self.lr_final).unwrap();
        writeln!(s, "momentum={}", self.momentum).unwrap();
        writeln!(s, "seed={}", self.seed).unwrap();
        writeln!(s, "eval_every={}", self.eval_every).unwrap();
        match self.early_stop_acc {
            Some(a) => writeln!(s, "early_stop={a}").unwrap(),
            None => writeln!(s, "early_stop=none").unwrap(),
        }
        writeln!(s, "# data").unwrap();
        writeln!(s, "dataset={}", self.dataset.display()).unwrap();
        writeln!(s, "rotation={}", self.augment.rotation.as_str()).unwrap();
        writeln!(s, "scale={},{}", self.augment.scale.0, self.augment.scale.1).unwrap();
        writeln!(s, "jitter={}", self.augment.jitter_sigma).unwrap();
        match self.augment.subsample {
            Some(m) => writeln!(s, "subsample={m}").unwrap(),
            None => writeln!(s, "subsample=none").unwrap(),
        }
        s
    }

    /// Parse the text form on top of defaults. Later keys override earlier
    /// ones; unknown keys are configuration errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "config line {}: expected key=value, got '{line}'",
                    lineno + 1
                ))
            })?;
            c.apply(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("config line {}: {e}", lineno + 1)))?;
        }
        Ok(c)
    }

    /// Set one field from its text form; shared by the file parser and the
    /// CLI override flags.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let n = &mut self.network;
        match key {
            "points" => n.points_in = parse_num(key, value)?,
            "layer_points" => n.layer_points = parse_list(key, value)?,
            "channels" => n.channels = parse_list(key, value)?,
            "k" => n.k = parse_num(key, value)?,
            "radii" => n.radii = parse_list(key, value)?,
            "num_classes" => n.num_classes = parse_num(key, value)?,
            "dropout" => n.dropout = parse_num(key, value)?,
            "head_hidden" => n.head_hidden = parse_num(key, value)?,
            "mode" => n.mode = NeighborhoodMode::parse(value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "batch" => self.batch = parse_num(key, value)?,
            "lr_initial" => self.lr_initial = parse_num(key, value)?,
            "lr_final" => self.lr_final = parse_num(key, value)?,
            "momentum" => self.momentum = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "eval_every" => self.eval_every = parse_num(key, value)?,
            "early_stop" => {
                self.early_stop_acc = if value == "none" {
                    None
                } else {
                    Some(parse_num(key, value)?)
                }
            }
            "dataset" => self.dataset = PathBuf::from(value),
            "rotation" => self.augment.rotation = Rotation::parse(value)?,
            "scale" => {
                let [lo, hi]: [f64; 2] = parse_list(key, value)?;
                self.augment.scale = (lo, hi);
            }
            "jitter" => self.augment.jitter_sigma = parse_num(key, value)?,
            "subsample" => {
                self.augment.subsample = if value == "none" {
                    None
                } else {
                    Some(parse_num(key, value)?)
                }
            }
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }
}

pub(crate) fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::Config(format!("bad value '{value}' for '{key}'")))
}

pub(crate) fn parse_list<T, const N: usize>(key: &str, value: &str) -> Result<[T; N]>
where
    T: std::str::FromStr + Copy + Default,
{
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != N {
        return Err(Error::Config(format!(
            "'{key}' needs {N} comma-separated values, got {}",
            parts.len()
        )));
    }
    let mut out = [T::default(); N];
    for (slot, part) in out.iter_mut().zip(&parts) {
        *slot = parse_num(key, part)?;
    }
    Ok(out)
}

// Compile-time guard: the schedule arrays above are sized by the network
// depth, so a depth change shows up here instead of at runtime.
const _: [(); 4] = [(); NUM_LAYERS];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_roundtrip_is_exact() {
        let mut c = TrainConfig::default();
        c.seed = 123;
        c.lr_initial = 0.07;
        c.network.mode = NeighborhoodMode::TnKnn;
        c.augment.rotation = Rotation::Arbitrary;
        c.augment.scale = (0.8, 1.25);
        c.early_stop_acc = None;
        let back = TrainConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = "# a comment\n\nepochs=3   # trailing\n  batch = 4\n";
        let c = TrainConfig::parse(text).unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.batch, 4);
    }

    #[test]
    fn unknown_key_is_a_config_error() {
        assert!(matches!(
            TrainConfig::parse("episodes=3\n"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let err = TrainConfig::parse("epochs=3\nnot a pair\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn later_keys_override_earlier_ones() {
        let c = TrainConfig::parse("seed=1\nseed=2\n").unwrap();
        assert_eq!(c.seed, 2);
    }
}
