use super::HarnessError;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_metric: f64,
    pub test_metric: f64,
}

/// Per-epoch training and test curves. Epochs are strictly increasing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricCurve {
    records: Vec<CurveRecord>,
}

impl MetricCurve {
    pub fn new() -> Self {
        Self::default()
    }

    /// Panics if `r.epoch` does not exceed the last recorded epoch.
    pub fn push(&mut self, r: CurveRecord) {
        if let Some(last) = self.records.last() {
            assert!(r.epoch > last.epoch, "curve epochs must increase");
        }
        self.records.push(r);
    }

    pub fn records(&self) -> &[CurveRecord] {
        &self.records
    }

    pub fn last(&self) -> Option<&CurveRecord> {
        self.records.last()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,train_metric,test_metric\n");
        for r in &self.records {
            writeln!(s, "{},{},{},{}", r.epoch, r.train_loss, r.train_metric, r.test_metric).expect("string write");
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), HarnessError> {
        std::fs::write(path, self.to_csv()).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}
