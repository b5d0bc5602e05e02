//! Run configuration: a TOML file with one table per subsystem.
//!
//! ```toml
//! seed = 7
//! workers = 4
//! friction = "no-slip"
//!
//! [lattice]
//! a = 8
//! b = 5
//!
//! [sim]
//! steps = 1000
//!
//! [learning]
//! iterations = 35
//!
//! [evolution]
//! pop_size = 32
//! generations = 30
//!
//! [terrain]
//! kind = "flat"
//! ```
//!
//! Every key is optional. The config hash covers everything except the
//! worker count and output directory, which never change results.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evolution::{EvalContext, EvolutionConfig};
use crate::lattice::LatticeDims;
use crate::learning::LearnConfig;
use crate::rng::{stream, Purpose};
use crate::simulator::contact::FrictionMode;
use crate::simulator::SimConfig;
use crate::terrain::{generate_rugged, RuggedRanges, Terrain};

/// Environment variable that overrides the output directory.
pub const OUT_DIR_ENV: &str = "DIFFBOTS_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub a: usize,
    pub b: usize,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        Self { a: 8, b: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerrainSource {
    Flat,
    /// Generated from the run seed.
    Rugged,
    /// Read from `path`.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TerrainConfig {
    pub kind: TerrainSource,
    pub slope_min: f64,
    pub slope_max: f64,
    pub length_min: f64,
    pub length_max: f64,
    pub path: Option<PathBuf>,
}

impl Default for TerrainConfig {
    fn default() -> Self {
        let r = RuggedRanges::default();
        Self {
            kind: TerrainSource::Flat,
            slope_min: r.slope.0,
            slope_max: r.slope.1,
            length_min: r.length.0,
            length_max: r.length.1,
            path: None,
        }
    }
}

impl TerrainConfig {
    pub fn ranges(&self) -> RuggedRanges {
        RuggedRanges {
            slope: (self.slope_min, self.slope_max),
            length: (self.length_min, self.length_max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub friction: FrictionMode,
    pub out_dir: Option<PathBuf>,
    pub lattice: LatticeConfig,
    pub sim: SimConfig,
    pub learning: LearnConfig,
    pub evolution: EvolutionConfig,
    pub terrain: TerrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 1,
            friction: FrictionMode::NoSlip,
            out_dir: None,
            lattice: LatticeConfig::default(),
            sim: SimConfig::default(),
            learning: LearnConfig::default(),
            evolution: EvolutionConfig::default(),
            terrain: TerrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        LatticeDims::new(self.lattice.a, self.lattice.b)?;
        self.sim.validate()?;
        self.learning.validate()?;
        self.evolution_config().validate()?;
        if self.workers == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        match self.terrain.kind {
            TerrainSource::Rugged => self.terrain.ranges().validate()?,
            TerrainSource::File if self.terrain.path.is_none() => {
                return Err(Error::Config("terrain kind \"file\" needs terrain.path".into()));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn dims(&self) -> LatticeDims {
        LatticeDims::new(self.lattice.a, self.lattice.b).expect("validated dims")
    }

    /// Evolution settings with the run seed applied.
    pub fn evolution_config(&self) -> EvolutionConfig {
        EvolutionConfig {
            seed: self.seed,
            ..self.evolution.clone()
        }
    }

    /// Hex SHA-256 of the canonical form, ignoring workers and output
    /// directory.
    pub fn hash(&self) -> String {
        let canonical = RunConfig {
            workers: 1,
            out_dir: None,
            ..self.clone()
        };
        let digest = Sha256::digest(canonical.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Output directory: the environment override, then the config, then
    /// `fallback`.
    pub fn resolve_out_dir(&self, fallback: &Path) -> PathBuf {
        if let Some(dir) = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()) {
            return PathBuf::from(dir);
        }
        self.out_dir.clone().unwrap_or_else(|| fallback.to_path_buf())
    }

    pub fn build_terrain(&self) -> Result<Terrain> {
        match self.terrain.kind {
            TerrainSource::Flat => Ok(Terrain::flat()),
            TerrainSource::Rugged => {
                let mut rng = stream(self.seed, Purpose::Terrain, 0, 0);
                generate_rugged(&mut rng, self.terrain.ranges())
            }
            TerrainSource::File => {
                let path = self.terrain.path.as_ref().expect("validated path");
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                Terrain::from_text(&text)
            }
        }
    }

    pub fn eval_context(&self) -> Result<EvalContext> {
        Ok(EvalContext::new(
            self.dims(),
            self.build_terrain()?,
            self.sim,
            self.learning,
            self.friction,
        ))
    }
}
