//! Uploaded datasets, kept in memory and mirrored under `<root>/datasets/<id>/`
//! so that a restarted service still knows them.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use chrono::{SecondsFormat, Utc};
use psmw_core::dataset::{ingest_str, DatasetError};
use psmw_core::{canonical, AnalysisDataset, DatasetSchema};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub dataset_id: String,
    pub uploaded_at: String,
    pub n_rows: usize,
    pub n_treated: Option<usize>,
    pub schema: DatasetSchema,
}

struct Entry {
    info: DatasetInfo,
    data: Arc<AnalysisDataset>,
}

pub struct DatasetStore {
    root: PathBuf,
    entries: RwLock<BTreeMap<String, Entry>>,
}

impl DatasetStore {
    /// Opens the store and re-ingests every dataset saved under `root`.
    pub fn open(root: impl Into<PathBuf>) -> std::io::Result<Self> {
        let root = root.into().join("datasets");
        fs::create_dir_all(&root)?;
        let mut entries = BTreeMap::new();
        for dir in fs::read_dir(&root)? {
            let dir = dir?.path();
            match Self::load(&dir) {
                Ok(entry) => {
                    entries.insert(entry.info.dataset_id.clone(), entry);
                }
                Err(e) => log::warn!("skipping dataset in {}: {e}", dir.display()),
            }
        }
        Ok(Self { root, entries: RwLock::new(entries) })
    }

    fn load(dir: &Path) -> Result<Entry, String> {
        let info: DatasetInfo = serde_json::from_str(&fs::read_to_string(dir.join("info.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let text = fs::read_to_string(dir.join("data.csv")).map_err(|e| e.to_string())?;
        let data = ingest_str(&text, &info.schema).map_err(|e| e.to_string())?;
        Ok(Entry { info, data: Arc::new(data) })
    }

    /// Ingests and stores a CSV upload. Nothing is written if ingestion fails.
    pub fn insert(&self, csv: &str, schema: DatasetSchema) -> Result<DatasetInfo, InsertError> {
        schema.validate().map_err(InsertError::Dataset)?;
        let data = ingest_str(csv, &schema).map_err(InsertError::Dataset)?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let info = DatasetInfo {
            dataset_id: id.clone(),
            uploaded_at: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
            n_rows: data.len(),
            n_treated: data.treatment().map(|t| t.iter().filter(|&&v| v == 1).count()),
            schema,
        };
        let dir = self.root.join(&id);
        let write = || -> std::io::Result<()> {
            fs::create_dir_all(&dir)?;
            fs::write(dir.join("data.csv"), csv)?;
            let info_json = canonical::to_file_string(&info).map_err(std::io::Error::other)?;
            fs::write(dir.join("info.json.tmp"), info_json)?;
            fs::rename(dir.join("info.json.tmp"), dir.join("info.json"))
        };
        if let Err(e) = write() {
            let _ = fs::remove_dir_all(&dir);
            return Err(InsertError::Io(e.to_string()));
        }
        self.entries.write().unwrap().insert(id, Entry { info: info.clone(), data: Arc::new(data) });
        Ok(info)
    }

    pub fn get(&self, id: &str) -> Option<Arc<AnalysisDataset>> {
        self.entries.read().unwrap().get(id).map(|e| Arc::clone(&e.data))
    }

    pub fn info(&self, id: &str) -> Option<DatasetInfo> {
        self.entries.read().unwrap().get(id).map(|e| e.info.clone())
    }

    /// Every dataset, oldest upload first.
    pub fn list(&self) -> Vec<DatasetInfo> {
        let mut all: Vec<DatasetInfo> = self.entries.read().unwrap().values().map(|e| e.info.clone()).collect();
        all.sort_by(|a, b| a.uploaded_at.cmp(&b.uploaded_at).then_with(|| a.dataset_id.cmp(&b.dataset_id)));
        all
    }
}

#[derive(Debug)]
pub enum InsertError {
    Dataset(DatasetError),
    Io(String),
}
