//! Deterministic table rendering: comma-separated text with sorted keys
//! and fixed 17-significant-digit reals, so re-running the pipeline over
//! the same raw data reproduces the export byte for byte.

use super::pipeline::{MetricRow, MetricTable};

/// Fixed-width scientific rendering, 17 significant digits.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt_u32(v: Option<u32>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn opt_real(v: Option<f64>) -> String {
    v.map(format_real).unwrap_or_else(|| "null".to_owned())
}

/// Provenance cells must stay delimiter-clean.
fn sanitize(provenance: &str) -> String {
    provenance.replace([',', '\n'], ";")
}

pub fn metric_table_csv(table: &MetricTable) -> Vec<u8> {
    let mut out = String::from("metric,version,run_id,iteration,population,value,provenance\n");
    let mut rows: Vec<&MetricRow> = table.rows.iter().collect();
    rows.sort_by_key(|r| (r.iteration, r.population));
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            table.name,
            table.version,
            table.run_id,
            opt_u32(row.iteration),
            opt_u32(row.population),
            opt_real(row.value),
            sanitize(&row.provenance),
        ));
    }
    out.into_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reals_have_seventeen_significant_digits() {
        assert_eq!(format_real(2.0), "2.0000000000000000e0");
        assert_eq!(format_real(-0.5), "-5.0000000000000000e-1");
        let third = format_real(1.0 / 3.0);
        assert_eq!(third, "3.3333333333333331e-1");
        // Round-trips exactly.
        assert_eq!(third.parse::<f64>().unwrap(), 1.0 / 3.0);
    }
}
