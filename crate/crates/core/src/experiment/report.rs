//! Cross-run comparison table built from run manifests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{sha256_hex, Manifest};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub dir: PathBuf,
    pub name: String,
    pub kind: String,
    /// Digest of the config echoed in the manifest.
    pub config_sha256: String,
    pub loss_sha256: Option<String>,
    pub final_loss: Option<f64>,
    pub slices: Option<usize>,
    pub lp_abs: Option<f64>,
    pub lp_rel: Option<f64>,
    pub w1p_abs: Option<f64>,
    pub w1p_rel: Option<f64>,
    pub natural_sq: Option<f64>,
}

impl ReportRow {
    pub const CSV_HEADER: &'static str =
        "dir,name,kind,config_sha256,loss_sha256,final_loss,slices,lp_abs,lp_rel,w1p_abs,w1p_rel,natural_sq";

    fn read(dir: &Path) -> Result<Self, String> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let config = serde_json::to_vec(&m.config).expect("config serializes");
        let loss_sha256 = fs::read(dir.join("loss.csv")).ok().map(|b| sha256_hex(&b));
        let e = m.errors.as_ref();
        Ok(Self {
            dir: dir.to_path_buf(),
            name: m.config.name(),
            kind: m.config.kind.name().to_string(),
            config_sha256: sha256_hex(&config),
            loss_sha256,
            final_loss: m.final_loss,
            slices: e.map(|a| a.slices),
            lp_abs: e.map(|a| a.lp_abs),
            lp_rel: e.and_then(|a| a.lp_rel),
            w1p_abs: e.map(|a| a.w1p_abs),
            w1p_rel: e.and_then(|a| a.w1p_rel),
            natural_sq: e.map(|a| a.natural_sq),
        })
    }

    pub fn to_csv_line(&self) -> String {
        fn opt<T: ToString>(v: &Option<T>) -> String {
            v.as_ref().map_or_else(String::new, T::to_string)
        }
        [
            self.dir.display().to_string(),
            self.name.clone(),
            self.kind.clone(),
            self.config_sha256.clone(),
            opt(&self.loss_sha256),
            opt(&self.final_loss),
            opt(&self.slices),
            opt(&self.lp_abs),
            opt(&self.lp_rel),
            opt(&self.w1p_abs),
            opt(&self.w1p_rel),
            opt(&self.natural_sq),
        ]
        .join(",")
    }
}

/// Rows for every directory with a readable manifest, plus one warning per
/// skipped directory.
pub fn report(dirs: &[PathBuf]) -> (Vec<ReportRow>, Vec<String>) {
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for dir in dirs {
        match ReportRow::read(dir) {
            Ok(r) => rows.push(r),
            Err(e) => warnings.push(format!("skipping {}: {e}", dir.display())),
        }
    }
    (rows, warnings)
}

/// The merged table as CSV.
pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from(ReportRow::CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv_line());
        out.push('\n');
    }
    out
}
