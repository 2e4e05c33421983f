use std::path::{Path, PathBuf};

use crate::metrics::ConfusionMatrix;
use crate::{Error, Result};

/// Output directory with the fixed layout `config.json`, `models/`,
/// `reports/` and `plots/`.
#[derive(Debug, Clone)]
pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        for sub in ["models", "reports", "plots"] {
            let dir = root.join(sub);
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, relative: &str) -> PathBuf {
        self.root.join(relative)
    }

    pub fn write(&self, relative: &str, contents: &str) -> Result<PathBuf> {
        let path = self.root.join(relative);
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// One row per labelled confusion matrix.
pub fn confusion_csv(rows: &[(&str, ConfusionMatrix)]) -> String {
    let mut out = String::from("label,threshold,tp,fp,tn,fn\n");
    for (label, cm) in rows {
        out.push_str(&format!("{label},{},{},{},{},{}\n", cm.threshold, cm.tp, cm.fp, cm.tn, cm.fn_));
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn learning_curve_csv(rows: &[super::AblationRow]) -> String {
    let mut out = String::from("fraction,repeat,rows,upm,sensitivity,specificity\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.fraction,
            r.repeat,
            r.rows,
            opt(r.upm),
            opt(r.sensitivity),
            opt(r.specificity)
        ));
    }
    out
}
