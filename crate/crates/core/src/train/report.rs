use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::Result;

/// One logged iteration. Terms that do not apply to a stage are zero.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossRow {
    pub iteration: usize,
    pub view: usize,
    pub total: f64,
    pub recon: f64,
    pub seg: f64,
    pub knn: f64,
    pub ne: f64,
    pub mask: f64,
    pub content: f64,
    pub style: f64,
    /// Mean PSNR over all views, when evaluated at this iteration.
    pub psnr: Option<f64>,
    pub num_gaussians: usize,
    /// Gaussians handed to the rasterizer for each class this iteration.
    pub processed: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossReport {
    pub num_classes: usize,
    pub rows: Vec<LossRow>,
}

impl LossReport {
    pub fn new(num_classes: usize) -> Self {
        Self { num_classes, rows: Vec::new() }
    }

    pub fn push(&mut self, row: LossRow) {
        debug_assert!(self.rows.last().is_none_or(|r| r.iteration < row.iteration));
        debug_assert_eq!(row.processed.len(), self.num_classes);
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,view,total,recon,seg,knn,ne,mask,content,style,psnr,num_gaussians");
        for c in 0..self.num_classes {
            let _ = write!(s, ",processed_{c}");
        }
        s.push('\n');
        for r in &self.rows {
            let psnr = r.psnr.map(|p| p.to_string()).unwrap_or_default();
            let _ = write!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.iteration, r.view, r.total, r.recon, r.seg, r.knn, r.ne, r.mask, r.content, r.style, psnr, r.num_gaussians
            );
            for p in &r.processed {
                let _ = write!(s, ",{p}");
            }
            s.push('\n');
        }
        s
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Every logged PSNR with its iteration.
    pub fn psnr_series(&self) -> Vec<(usize, f64)> {
        self.rows.iter().filter_map(|r| r.psnr.map(|p| (r.iteration, p))).collect()
    }
}
