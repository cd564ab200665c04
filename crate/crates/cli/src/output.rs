use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

/// Output format selected with `--format`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    #[value(name = "csv+plot")]
    CsvPlot,
}

impl Format {
    pub fn name(&self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::CsvPlot => "csv+plot",
        }
    }
}

/// `# `-prefixed echo of the effective config, placed at the top of every
/// text output.
pub fn config_header<T: Serialize>(command: &str, table: &T, format: Format) -> Result<String, CliError> {
    #[derive(Serialize)]
    struct Wrapped<'a, T> {
        #[serde(flatten)]
        inner: std::collections::BTreeMap<&'a str, &'a T>,
    }
    let mut inner = std::collections::BTreeMap::new();
    inner.insert(command, table);
    let body = toml::to_string(&Wrapped { inner }).map_err(|e| CliError::Config(e.to_string()))?;
    let mut out = format!("# radbath {command}\n# format = \"{}\"\n", format.name());
    for line in body.lines() {
        if line.is_empty() {
            out.push_str("#\n");
        } else {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
    }
    Ok(out)
}

/// Writes to `<path>.tmp` and renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(bytes).map_err(io)?;
        f.sync_all().map_err(io)?;
    }
    fs::rename(&tmp, path).map_err(io)
}

/// Collects the files of one run under a single output directory.
pub struct OutputDir {
    dir: PathBuf,
    header: String,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn new(dir: &Path, header: String) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), header, written: Vec::new() })
    }

    /// Writes `body` prefixed with the config header.
    pub fn text(&mut self, name: &str, body: &str) -> Result<(), CliError> {
        let mut all = self.header.clone();
        all.push_str(body);
        self.raw(name, all.as_bytes())
    }

    pub fn raw(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        write_atomic(&path, bytes)?;
        self.written.push(path);
        Ok(())
    }

    pub fn toml<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let body = toml::to_string(value).map_err(|e| CliError::Io(format!("serializing {name}: {e}")))?;
        self.text(name, &body)
    }

    pub fn into_files(self) -> Vec<PathBuf> {
        self.written
    }
}
