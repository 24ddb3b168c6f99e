use std::path::Path;

use anyhow::{Context, Result};

/// Collects CSV rows and writes them in one go, atomically when a path is given.
pub struct Table {
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header)?;
        Ok(Self { writer })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields)?;
        Ok(())
    }

    pub fn finish(self, path: Option<&Path>) -> Result<()> {
        let bytes = self.writer.into_inner().map_err(|e| e.into_error())?;
        match path {
            Some(p) => mfp_core::io::write_atomic(p, &bytes).with_context(|| format!("writing {}", p.display()))?,
            None => {
                use std::io::Write;
                std::io::stdout().write_all(&bytes)?;
            }
        }
        Ok(())
    }
}
