//! Run configuration: TOML sections `[mesh] [field] [cem] [time] [study]
//! [diagnose] [output]`, with `QGD_<SECTION>__<KEY>` environment overrides.

use std::path::{Path, PathBuf};

use qgd_core::analysis::StudyRow;
use qgd_core::coefficient::{generate_channels, ChannelLayout, PermeabilityField};
use qgd_core::fem::PouKind;
use qgd_core::qgd::{InitPolicy, LeapfrogConfig, Source};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const ENV_PREFIX: &str = "QGD_";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mesh: MeshBlock,
    pub field: FieldBlock,
    #[serde(default)]
    pub cem: CemBlock,
    pub time: TimeBlock,
    #[serde(default)]
    pub study: StudyBlock,
    #[serde(default)]
    pub diagnose: DiagnoseBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MeshBlock {
    pub nx: usize,
    pub ny: usize,
    #[serde(default = "default_coarse")]
    pub coarse_nx: usize,
    #[serde(default = "default_coarse")]
    pub coarse_ny: usize,
}

fn default_coarse() -> usize {
    10
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct FieldBlock {
    /// Raster file, relative to the config file.
    pub path: Option<PathBuf>,
    pub generator: Option<GeneratorBlock>,
    pub homogeneous: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GeneratorBlock {
    #[serde(default = "one")]
    pub background: f64,
    #[serde(default = "thousand")]
    pub channel: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub channels: Option<usize>,
    #[serde(default)]
    pub inclusions: Option<usize>,
}

fn one() -> f64 {
    1.0
}

fn thousand() -> f64 {
    1e3
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CemBlock {
    pub ell: usize,
    pub m: usize,
    pub pou: PouKind,
}

impl Default for CemBlock {
    fn default() -> Self {
        Self { ell: 3, m: 4, pou: PouKind::Bilinear }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TimeBlock {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub t_final: f64,
    pub dt: f64,
    #[serde(default)]
    pub delta: f64,
    #[serde(default)]
    pub init: InitPolicy,
    #[serde(default = "default_source")]
    pub source: String,
    /// Also run the fine reference and report errors (`solve` only).
    #[serde(default = "yes")]
    pub reference: bool,
}

fn default_alpha() -> f64 {
    0.1
}

fn default_source() -> String {
    "static_sine".to_string()
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct StudyBlock {
    #[serde(default)]
    pub rows: Vec<StudyRow>,
    #[serde(default)]
    pub alphas: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseBlock {
    pub decay_m: Vec<usize>,
    pub scan_dt: Vec<f64>,
    pub horizon: f64,
}

impl Default for DiagnoseBlock {
    fn default() -> Self {
        Self { decay_m: vec![0, 1, 2, 3], scan_dt: Vec::new(), horizon: 1.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct OutputBlock {
    pub dir: PathBuf,
    pub energy_stride: usize,
    pub formats: Vec<String>,
    /// Reference-solution cache directory.
    pub cache: Option<PathBuf>,
    pub record_timing: bool,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            energy_stride: 100,
            formats: vec!["csv".into(), "svg".into(), "json".into()],
            cache: None,
            record_timing: false,
        }
    }
}

impl OutputBlock {
    pub fn wants(&self, format: &str) -> bool {
        self.formats.iter().any(|f| f == format)
    }
}

const FORMATS: [&str; 3] = ["csv", "svg", "json"];

/// A configuration plus the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub base: PathBuf,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Parses `text`, applies overrides from `vars`, and validates the result.
pub fn parse(text: &str, vars: impl IntoIterator<Item = (String, String)>) -> Result<RunConfig, CliError> {
    let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| config_err(e.to_string()))?;
    apply_overrides(&mut doc, vars)?;
    let config: RunConfig = toml::Value::Table(doc).try_into().map_err(|e: toml::de::Error| config_err(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

pub fn load(path: &Path) -> Result<Loaded, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    let config = parse(&text, std::env::vars())?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded { config, base })
}

fn apply_overrides(doc: &mut toml::Table, vars: impl IntoIterator<Item = (String, String)>) -> Result<(), CliError> {
    for (name, raw) in vars {
        let Some(rest) = name.strip_prefix(ENV_PREFIX) else { continue };
        let Some((section, key)) = rest.split_once("__") else { continue };
        let (section, key) = (section.to_ascii_lowercase(), key.to_ascii_lowercase());
        let value = format!("v = {raw}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or(toml::Value::String(raw.clone()));
        let entry = doc.entry(section.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        let table = entry.as_table_mut().ok_or_else(|| config_err(format!("{name}: [{section}] is not a table")))?;
        table.insert(key, value);
    }
    Ok(())
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let m = &self.mesh;
        if m.nx == 0 || m.ny == 0 {
            return Err(config_err("mesh.nx and mesh.ny must be positive"));
        }
        check_nesting(m.nx, m.ny, m.coarse_nx, m.coarse_ny)?;
        let sources = [self.field.path.is_some(), self.field.generator.is_some(), self.field.homogeneous.is_some()];
        if sources.iter().filter(|&&s| s).count() != 1 {
            return Err(config_err("field needs exactly one of path, generator, homogeneous"));
        }
        if let Some(v) = self.field.homogeneous {
            if !(v > 0.0) || !v.is_finite() {
                return Err(config_err("field.homogeneous must be positive"));
            }
        }
        if self.cem.ell == 0 {
            return Err(config_err("cem.ell must be at least 1"));
        }
        let t = &self.time;
        if !(t.alpha > 0.0) {
            return Err(config_err("time.alpha must be positive"));
        }
        if !(t.delta >= 0.0) {
            return Err(config_err("time.delta must be nonnegative"));
        }
        LeapfrogConfig::new(t.dt).n_steps(t.t_final).map_err(|e| config_err(format!("time: {e}")))?;
        Source::named(&t.source).map_err(|e| config_err(format!("time.source: {e}")))?;
        for row in &self.study.rows {
            check_nesting(m.nx, m.ny, row.coarse, row.coarse)?;
        }
        if self.study.alphas.iter().any(|a| !(*a > 0.0)) {
            return Err(config_err("study.alphas must be positive"));
        }
        if !(self.diagnose.horizon > 0.0) || self.diagnose.scan_dt.iter().any(|d| !(*d > 0.0)) {
            return Err(config_err("diagnose.horizon and diagnose.scan_dt must be positive"));
        }
        if let Some(f) = self.output.formats.iter().find(|f| !FORMATS.contains(&f.as_str())) {
            return Err(config_err(format!("output.formats: unknown format {f:?}")));
        }
        Ok(())
    }

    /// Study-specific checks, run only by `study`.
    pub fn validate_study(&self) -> Result<(), CliError> {
        if self.study.rows.is_empty() {
            return Err(config_err("study.rows is empty"));
        }
        if self.study.alphas.is_empty() {
            return Err(config_err("study.alphas is empty"));
        }
        Ok(())
    }
}

fn check_nesting(nx: usize, ny: usize, cx: usize, cy: usize) -> Result<(), CliError> {
    if cx == 0 || cy == 0 || nx % cx != 0 || ny % cy != 0 {
        return Err(config_err(format!("coarse grid {cx}x{cy} does not nest in fine grid {nx}x{ny}")));
    }
    Ok(())
}

impl Loaded {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn field(&self) -> Result<PermeabilityField, CliError> {
        let c = &self.config;
        let (nx, ny) = (c.mesh.nx, c.mesh.ny);
        let field = if let Some(p) = &c.field.path {
            PermeabilityField::load_raster(self.resolve(p)).map_err(|e| config_err(format!("field.path: {e}")))?
        } else if let Some(g) = &c.field.generator {
            let d = ChannelLayout::default();
            let layout = ChannelLayout {
                seed: g.seed.unwrap_or(d.seed),
                channels: g.channels.unwrap_or(d.channels),
                inclusions: g.inclusions.unwrap_or(d.inclusions),
            };
            generate_channels(nx, ny, g.background, g.channel, layout).map_err(|e| config_err(format!("field.generator: {e}")))?
        } else {
            let v = c.field.homogeneous.expect("validated");
            PermeabilityField::homogeneous(nx, ny, v).map_err(|e| config_err(e.to_string()))?
        };
        field.check_mesh(nx, ny).map_err(|e| config_err(format!("field: {e}")))?;
        Ok(field)
    }
}
