//! A prepared reference: alignment features, bar annotations, the section
//! table with voice flags, and a small manifest.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use anyhow::Context;
use opera_follow::eval::{read_annotations, read_sections, write_annotations, write_sections, BarAnnotation};
use opera_follow::features::{read_dump, write_dump};
use opera_follow::oltw::{ReferenceIndex, SectionMark, REF_HOP_S};
use serde::{Deserialize, Serialize};

use crate::error::{data, Classify, CmdResult};

pub const FEATURES: &str = "features.bin";
pub const BARS: &str = "bars.csv";
pub const SECTIONS: &str = "sections.csv";
pub const MANIFEST: &str = "bundle.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub source: String,
    pub duration_s: f64,
    pub frames: usize,
    pub dim: usize,
    pub hop_ms: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub manifest: Manifest,
    pub features: Vec<Vec<f32>>,
    pub bars: Vec<BarAnnotation>,
    pub sections: Vec<SectionMark>,
}

impl Bundle {
    pub fn save(&self, dir: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let create = |name: &str| -> anyhow::Result<BufWriter<File>> {
            let path = dir.join(name);
            Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
        };
        write_dump(create(FEATURES)?, "alignment", self.manifest.hop_ms, &self.features)?;
        write_annotations(create(BARS)?, &self.bars)?;
        write_sections(create(SECTIONS)?, &self.sections)?;
        serde_json::to_writer_pretty(create(MANIFEST)?, &self.manifest)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> CmdResult<Self> {
        let open = |name: &str| -> CmdResult<BufReader<File>> {
            let path = dir.join(name);
            File::open(&path).map(BufReader::new).with_context(|| format!("opening {}", path.display())).data_err()
        };
        let manifest: Manifest = serde_json::from_reader(open(MANIFEST)?).context("reading bundle manifest").data_err()?;
        let (header, features) = read_dump(open(FEATURES)?).context("reading reference features").data_err()?;
        if header.count != manifest.frames || header.dim != manifest.dim || header.hop_ms as f64 != REF_HOP_S * 1000.0 {
            return data(format!(
                "feature dump ({} x {}, {} ms) does not match the manifest ({} x {}, {} ms)",
                header.count, header.dim, header.hop_ms, manifest.frames, manifest.dim, manifest.hop_ms
            ));
        }
        let bars = read_annotations(open(BARS)?).context("reading bundle bars").data_err()?;
        let sections = read_sections(open(SECTIONS)?).context("reading bundle sections").data_err()?;
        Ok(Self { manifest, features, bars, sections })
    }

    pub fn index(&self) -> CmdResult<ReferenceIndex> {
        ReferenceIndex::new(self.features.clone(), self.bars.iter().map(|b| b.time_s).collect(), self.sections.clone())
            .context("building the reference index")
            .data_err()
    }
}
