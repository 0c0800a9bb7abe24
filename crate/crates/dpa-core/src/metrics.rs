//! Per-interval training metrics and their CSV serialization.
//!
//! The column order is fixed and documented in the README; runs with the
//! same config and seed must produce byte-identical files, so floats are
//! written with Rust's shortest round-trip formatting and files are written
//! atomically (temp file + rename).

use std::io::Write;
use std::path::Path;

/// One metrics row. Undefined quantities (e.g. a consistency score on a
/// batch with no private samples) are recorded as NaN, never omitted.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub iteration: u64,
    pub p_global_source: f64,
    pub p_global_target: f64,
    pub global_gap: f64,
    pub p_instance_source: f64,
    pub p_instance_target: f64,
    pub instance_gap: f64,
    pub w_source: f64,
    pub w_target: f64,
    pub w_fig_ratio: f64,
    pub w_instance_source: f64,
    pub w_instance_target: f64,
    pub global_neg_frac_source: f64,
    pub global_neg_frac_target: f64,
    pub instance_neg_frac_source: f64,
    pub instance_neg_frac_target: f64,
    pub loss_det: f64,
    pub loss_gdpa: f64,
    pub loss_idsa: f64,
    pub loss_pcc: f64,
    pub loss_bound: f64,
    pub loss_total: f64,
    pub radius_source: f64,
    pub radius_target: f64,
    pub eps_source: f64,
    pub eps_target: f64,
    pub target_shared_accuracy: f64,
    pub target_shared_nc_accuracy: f64,
    pub flag_weight_fallback: bool,
    pub flag_global_empty_neg: bool,
    pub flag_instance_empty_pos: bool,
    pub flag_pcc_skipped: bool,
    pub flag_step_skipped: bool,
}

pub const CSV_HEADER: &str = "iteration,p_global_source,p_global_target,global_gap,\
p_instance_source,p_instance_target,instance_gap,w_source,w_target,w_fig_ratio,\
w_instance_source,w_instance_target,global_neg_frac_source,global_neg_frac_target,\
instance_neg_frac_source,instance_neg_frac_target,loss_det,loss_gdpa,loss_idsa,\
loss_pcc,loss_bound,loss_total,radius_source,radius_target,eps_source,eps_target,\
target_shared_accuracy,target_shared_nc_accuracy,flag_weight_fallback,\
flag_global_empty_neg,flag_instance_empty_pos,flag_pcc_skipped,flag_step_skipped";

pub const CSV_COLUMNS: usize = 33;

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        let f = |b: bool| if b { 1 } else { 0 };
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.p_global_source,
            self.p_global_target,
            self.global_gap,
            self.p_instance_source,
            self.p_instance_target,
            self.instance_gap,
            self.w_source,
            self.w_target,
            self.w_fig_ratio,
            self.w_instance_source,
            self.w_instance_target,
            self.global_neg_frac_source,
            self.global_neg_frac_target,
            self.instance_neg_frac_source,
            self.instance_neg_frac_target,
            self.loss_det,
            self.loss_gdpa,
            self.loss_idsa,
            self.loss_pcc,
            self.loss_bound,
            self.loss_total,
            self.radius_source,
            self.radius_target,
            self.eps_source,
            self.eps_target,
            self.target_shared_accuracy,
            self.target_shared_nc_accuracy,
            f(self.flag_weight_fallback),
            f(self.flag_global_empty_neg),
            f(self.flag_instance_empty_pos),
            f(self.flag_pcc_skipped),
            f(self.flag_step_skipped),
        )
    }
}

pub fn rows_to_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::with_capacity(rows.len() * 256 + CSV_HEADER.len() + 1);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv());
        out.push('\n');
    }
    out
}

/// Write via a temp file in the same directory, then rename into place.
pub fn write_atomic(path: &Path, content: &str) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = dir.to_path_buf();
    let name = path.file_name().map(|s| s.to_string_lossy().to_string()).unwrap_or_default();
    tmp.push(format!(".{name}.tmp-{}", std::process::id()));
    {
        let mut file = std::fs::File::create(&tmp)?;
        file.write_all(content.as_bytes())?;
        file.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}
