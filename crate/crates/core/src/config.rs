//! Pipeline settings read from a flat TOML file. Every key is optional.
//!
//! ```toml
//! min_pair_count = 50
//! entropy_threshold = 0.69
//! window = 3
//! stopwords = "stopwords.txt"   # relative to the config file
//! punct_upos = ["PUNCT", "SYM"]
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::corpus::{read_stopwords, CorpusConfig};
use crate::discovery::DiscoveryConfig;
use crate::error::{Error, Result};
use crate::features::FeatureConfig;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(flatten)]
    discovery: DiscoveryConfig,
    #[serde(flatten)]
    features: FeatureConfig,
    stopwords: Option<PathBuf>,
    punct_upos: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineConfig {
    pub discovery: DiscoveryConfig,
    pub features: FeatureConfig,
    pub corpus: CorpusConfig,
}

impl PipelineConfig {
    /// Parses TOML text. A relative stopword path is resolved against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        let mut corpus = CorpusConfig::default();
        if let Some(p) = raw.stopwords {
            corpus.stopwords = read_stopwords(base.join(p))?;
        }
        if let Some(tags) = raw.punct_upos {
            corpus.punct_upos = tags.into_iter().collect();
        }
        let d = &raw.discovery;
        if !(d.entropy_threshold.is_finite() && d.entropy_threshold >= 0.0) || d.min_choices == 0 {
            return Err(Error::Config(
                "entropy_threshold must be non-negative and min_choices positive".into(),
            ));
        }
        Ok(PipelineConfig {
            discovery: raw.discovery,
            features: raw.features,
            corpus,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = PipelineConfig::from_toml("", Path::new(".")).unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(cfg.discovery.min_pair_count, 50);
        assert_eq!(cfg.features.window, 3);
    }

    #[test]
    fn overrides_and_stopwords() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("stop.txt"), "# nltk subset\nThe\nof\n").unwrap();
        let cfg = PipelineConfig::from_toml(
            "min_pair_count = 5\nmerge_max_edit = 1\nwindow = 2\nstopwords = \"stop.txt\"\npunct_upos = [\"PUNCT\"]\n",
            dir.path(),
        )
        .unwrap();
        assert_eq!(cfg.discovery.min_pair_count, 5);
        assert_eq!(cfg.discovery.merge_max_edit, 1);
        assert_eq!(cfg.discovery.entropy_threshold, 0.69);
        assert_eq!(cfg.features.window, 2);
        assert!(cfg.corpus.stopwords.contains("the"));
        assert_eq!(cfg.corpus.punct_upos.len(), 1);
    }

    #[test]
    fn rejects_unknown_and_bad_values() {
        assert!(matches!(
            PipelineConfig::from_toml("windw = 2", Path::new(".")),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            PipelineConfig::from_toml("min_choices = 0", Path::new(".")),
            Err(Error::Config(_))
        ));
        assert!(PipelineConfig::from_toml("stopwords = \"/nonexistent/x\"", Path::new(".")).is_err());
    }
}
