//! On-disk artifacts of a run directory.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mofit_core::attack::AttackRecord;
use mofit_core::data::{Dataset, DatasetManifest, Split};
use mofit_core::nn::{read_checkpoint, write_checkpoint, CheckpointMeta, DenoiserModel};
use mofit_core::{Error, Result};

use crate::config::BUILD;

pub const ATTACK_HEADER: [&str; 14] = [
    "sample_id",
    "split",
    "l_uncond",
    "l_cond_gt",
    "l_cond_approx",
    "l_cond_phi_star",
    "score_mofit",
    "score_clid_gt",
    "score_clid_approx",
    "score_loss",
    "iter_surrogate",
    "iter_embed",
    "final_loss_surrogate",
    "final_loss_embed",
];

/// File names inside the output directory.
#[derive(Debug, Clone)]
pub struct Paths {
    pub root: PathBuf,
}

impl Paths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn config(&self) -> PathBuf {
        self.file("config.toml")
    }
    pub fn manifest(&self) -> PathBuf {
        self.file("dataset.json")
    }
    pub fn images(&self) -> PathBuf {
        self.file("dataset.bin")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.file("model.ckpt")
    }
    pub fn train_loss(&self) -> PathBuf {
        self.file("train_loss.csv")
    }
    pub fn attack(&self) -> PathBuf {
        self.file("attack.csv")
    }
    pub fn failures(&self) -> PathBuf {
        self.file("attack_failures.csv")
    }
    pub fn report(&self) -> PathBuf {
        self.file("report.json")
    }
    pub fn kde(&self, column: &str) -> PathBuf {
        self.file(&format!("kde_{column}.csv"))
    }
    pub fn gradcheck(&self) -> PathBuf {
        self.file("gradcheck.json")
    }
    pub fn ablation(&self) -> PathBuf {
        self.file("ablation.csv")
    }
    pub fn stability(&self) -> PathBuf {
        self.file("stability.csv")
    }
}

/// Fails with a message naming the missing file and the command producing it.
pub fn require(path: &Path, producer: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::config(
            "input",
            format!(
                "missing {}; run `mofit {producer}` with the same config first",
                path.display()
            ),
        ))
    }
}

/// Writes through a temp file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// `#` comment lines heading every CSV.
pub fn provenance(config_hash: &str) -> String {
    format!("# config_hash={config_hash}\n# build={BUILD}\n")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// CSV text with the provenance comment lines and a header row.
pub fn csv_bytes<R, I>(config_hash: &str, header: &[&str], rows: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut out = provenance(config_hash).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(header).map_err(csv_err)?;
        for r in rows {
            w.write_record(r).map_err(csv_err)?;
        }
        w.flush()?;
    }
    Ok(out)
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Successful records in the stable attack schema.
pub fn attack_csv(records: &[AttackRecord], config_hash: &str) -> Result<Vec<u8>> {
    let rows = records.iter().filter(|r| r.ok()).map(|r| {
        vec![
            r.sample_id.to_string(),
            r.split.as_str().to_string(),
            num(r.l_uncond),
            opt_num(r.l_cond_gt),
            num(r.l_cond_approx),
            num(r.l_cond_phi_star),
            num(r.score_mofit),
            opt_num(r.score_clid_gt),
            num(r.score_clid_approx),
            num(r.score_loss_baseline),
            r.surrogate_iters.to_string(),
            r.embed_iters.to_string(),
            num(r.surrogate_loss),
            num(r.embed_loss),
        ]
    });
    csv_bytes(config_hash, &ATTACK_HEADER, rows)
}

pub fn failures_csv(records: &[AttackRecord], config_hash: &str) -> Result<Vec<u8>> {
    let rows = records.iter().filter(|r| !r.ok()).map(|r| {
        vec![
            r.sample_id.to_string(),
            r.split.as_str().to_string(),
            r.error.clone().unwrap_or_default(),
        ]
    });
    csv_bytes(config_hash, &["sample_id", "split", "error"], rows)
}

/// Parses an attack CSV back into records (without traces).
pub fn read_attack_csv(path: &Path) -> Result<Vec<AttackRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(BufReader::new(File::open(path)?));
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.iter().collect::<Vec<_>>() != ATTACK_HEADER {
        return Err(Error::Format(format!(
            "{}: unexpected header {:?}",
            path.display(),
            header
        )));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(csv_err)?;
        let line = i + 2;
        let bad = |col: usize| Error::Format(format!("{}: row {line}, bad `{}`", path.display(), ATTACK_HEADER[col]));
        let f = |col: usize| -> Result<f64> { row[col].trim().parse().map_err(|_| bad(col)) };
        let of = |col: usize| -> Result<Option<f64>> {
            let s = row[col].trim();
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad(col))
            }
        };
        let u = |col: usize| -> Result<usize> { row[col].trim().parse().map_err(|_| bad(col)) };
        out.push(AttackRecord {
            sample_id: row[0].trim().parse().map_err(|_| bad(0))?,
            split: Split::parse(row[1].trim()).ok_or_else(|| bad(1))?,
            l_uncond: f(2)?,
            l_cond_gt: of(3)?,
            l_cond_approx: f(4)?,
            l_cond_phi_star: f(5)?,
            score_mofit: f(6)?,
            score_clid_gt: of(7)?,
            score_clid_approx: f(8)?,
            score_loss_baseline: f(9)?,
            surrogate_iters: u(10)?,
            embed_iters: u(11)?,
            surrogate_loss: f(12)?,
            embed_loss: f(13)?,
            surrogate_trace: Vec::new(),
            embed_trace: Vec::new(),
            error: None,
        });
    }
    Ok(out)
}

/// Pretty JSON with a trailing newline.
pub fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    v.push(b'\n');
    Ok(v)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_reader(BufReader::new(File::open(path)?))
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn save_dataset(paths: &Paths, dataset: &Dataset, config_hash: &str) -> Result<()> {
    let manifest = DatasetManifest {
        config: dataset.config.clone(),
        samples: dataset.samples.clone(),
        image_file: "dataset.bin".into(),
        config_hash: config_hash.to_string(),
        build: BUILD.to_string(),
    };
    write_atomic(&paths.images(), &dataset.image_blob())?;
    write_atomic(&paths.manifest(), &json_bytes(&manifest)?)
}

pub fn load_dataset(paths: &Paths) -> Result<Dataset> {
    require(&paths.manifest(), "synth")?;
    let manifest: DatasetManifest = read_json(&paths.manifest())?;
    let blob_path = paths.root.join(&manifest.image_file);
    require(&blob_path, "synth")?;
    Dataset::from_parts(manifest, &std::fs::read(blob_path)?)
}

pub fn save_checkpoint(paths: &Paths, model: &DenoiserModel, config_hash: &str) -> Result<()> {
    let mut buf = Vec::new();
    let meta = CheckpointMeta {
        config_hash: config_hash.to_string(),
        build: BUILD.to_string(),
    };
    write_checkpoint(&mut buf, model, &meta)?;
    write_atomic(&paths.checkpoint(), &buf)
}

pub fn load_checkpoint(paths: &Paths) -> Result<DenoiserModel> {
    require(&paths.checkpoint(), "train")?;
    let mut r = BufReader::new(File::open(paths.checkpoint())?);
    Ok(read_checkpoint(&mut r)?.0)
}
