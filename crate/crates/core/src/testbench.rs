//! The four reference projects used to exercise the assistant, each a
//! project description plus a numbered requirement list. Texts are pinned
//! by SHA-256 in `corpus/manifest.txt`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::emulation::RequirementList;

pub const CORPUS_MANIFEST: &str = include_str!("../corpus/manifest.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestbenchId {
    AngularPosition,
    Thermometry,
    Accelerometry,
    PressureTemperature,
}

impl TestbenchId {
    pub const ALL: [TestbenchId; 4] = [
        TestbenchId::AngularPosition,
        TestbenchId::Thermometry,
        TestbenchId::Accelerometry,
        TestbenchId::PressureTemperature,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TestbenchId::AngularPosition => "angular_position",
            TestbenchId::Thermometry => "thermometry",
            TestbenchId::Accelerometry => "accelerometry",
            TestbenchId::PressureTemperature => "pressure_temperature",
        }
    }
}

impl fmt::Display for TestbenchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TestbenchId {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TestbenchId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| CorpusError::UnknownTestbench(String::from(s)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CorpusError {
    #[error("unknown testbench {0:?}")]
    UnknownTestbench(String),
    #[error("corpus file {0} is missing")]
    MissingFile(String),
    #[error("corpus file {file} fails its checksum (expected {expected}, got {actual})")]
    ChecksumMismatch {
        file: String,
        expected: String,
        actual: String,
    },
    #[error("corpus manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("testbench {0} has no requirements")]
    EmptyRequirements(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Testbench {
    pub id: TestbenchId,
    pub description: String,
    pub requirements: RequirementList,
}

pub fn sha256_hex(data: &[u8]) -> String {
    let digest = Sha256::digest(data);
    let mut out = String::with_capacity(64);
    for byte in digest.iter() {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

fn builtin_file(path: &str) -> Option<&'static str> {
    Some(match path {
        "angular_position/description.txt" => include_str!("../corpus/angular_position/description.txt"),
        "angular_position/requirements.txt" => include_str!("../corpus/angular_position/requirements.txt"),
        "thermometry/description.txt" => include_str!("../corpus/thermometry/description.txt"),
        "thermometry/requirements.txt" => include_str!("../corpus/thermometry/requirements.txt"),
        "accelerometry/description.txt" => include_str!("../corpus/accelerometry/description.txt"),
        "accelerometry/requirements.txt" => include_str!("../corpus/accelerometry/requirements.txt"),
        "pressure_temperature/description.txt" => {
            include_str!("../corpus/pressure_temperature/description.txt")
        }
        "pressure_temperature/requirements.txt" => {
            include_str!("../corpus/pressure_temperature/requirements.txt")
        }
        _ => return None,
    })
}

fn parse_checksums(manifest: &str) -> Result<BTreeMap<String, String>, CorpusError> {
    let mut sums = BTreeMap::new();
    for (i, raw) in manifest.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| CorpusError::Manifest {
            line: i + 1,
            message: format!("expected `path = sha256`, got {line:?}"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if key != "version" {
            sums.insert(String::from(key), String::from(value));
        }
    }
    Ok(sums)
}

/// The compiled-in corpus, checksum-verified.
pub fn load_corpus() -> Result<Vec<Testbench>, CorpusError> {
    load_corpus_with(CORPUS_MANIFEST, |path| builtin_file(path).map(String::from))
}

/// Loads and verifies a corpus from a manifest and a file lookup keyed by
/// `<testbench>/<file>` paths.
pub fn load_corpus_with(
    manifest: &str,
    mut read: impl FnMut(&str) -> Option<String>,
) -> Result<Vec<Testbench>, CorpusError> {
    let sums = parse_checksums(manifest)?;
    let mut verified = |path: String| -> Result<String, CorpusError> {
        let text = read(&path).ok_or_else(|| CorpusError::MissingFile(path.clone()))?;
        let expected = sums
            .get(&path)
            .ok_or_else(|| CorpusError::MissingFile(format!("{path} (manifest entry)")))?;
        let actual = sha256_hex(text.as_bytes());
        if &actual != expected {
            return Err(CorpusError::ChecksumMismatch {
                file: path,
                expected: expected.clone(),
                actual,
            });
        }
        Ok(text)
    };
    TestbenchId::ALL
        .into_iter()
        .map(|id| {
            let description = verified(format!("{id}/description.txt"))?;
            let requirements = verified(format!("{id}/requirements.txt"))?;
            let requirements = RequirementList::new(requirements.lines().map(String::from))
                .ok_or_else(|| CorpusError::EmptyRequirements(String::from(id.as_str())))?;
            Ok(Testbench {
                id,
                description,
                requirements,
            })
        })
        .collect()
}

pub fn testbench(id: TestbenchId) -> Result<Testbench, CorpusError> {
    load_corpus()?
        .into_iter()
        .find(|t| t.id == id)
        .ok_or_else(|| CorpusError::UnknownTestbench(String::from(id.as_str())))
}
