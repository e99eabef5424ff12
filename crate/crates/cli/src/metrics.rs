//! Deterministic metrics CSV export. Schema is `epoch,split,metric,value`;
//! floats use Rust's shortest round-trip formatting so identical runs emit
//! identical bytes.

use std::path::Path;

use cegnn_core::train::MetricRecord;

use crate::error::CliError;

pub struct MetricsWriter {
    inner: csv::Writer<std::fs::File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<MetricsWriter, CliError> {
        let mut inner = csv::Writer::from_path(path)?;
        inner.write_record(["epoch", "split", "metric", "value"])?;
        Ok(MetricsWriter { inner })
    }

    pub fn row(&mut self, epoch: usize, split: &str, metric: &str, value: f64) -> Result<(), CliError> {
        self.inner
            .write_record([&epoch.to_string(), split, metric, &value.to_string()])?;
        Ok(())
    }

    pub fn records(&mut self, records: &[MetricRecord]) -> Result<(), CliError> {
        for r in records {
            self.row(r.epoch, r.split, r.metric, r.value)?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.inner.flush().map_err(|e| CliError::Io(e.to_string()))?;
        Ok(())
    }
}
