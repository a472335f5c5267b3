//! Attention maps as plain graymaps with a CSV sidecar.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::metrics::AlignmentMap;
use crate::error::Result;

/// P2 graymap of the head-averaged map, each row scaled so its peak is 255.
pub fn to_pgm(map: &AlignmentMap) -> String {
    let rows = map.mean_over_heads();
    let mut s = format!("P2\n{} {}\n255\n", map.source_len(), map.target_len());
    for row in &rows {
        let peak = row.iter().copied().fold(0.0, f64::max);
        let line: Vec<String> = row
            .iter()
            .map(|&w| {
                let v = if peak > 0.0 { (255.0 * w / peak).round() } else { 0.0 };
                (v as u8).to_string()
            })
            .collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

/// Raw head-averaged weights, one target row per line.
pub fn to_csv(map: &AlignmentMap) -> String {
    let mut s = String::new();
    for row in map.mean_over_heads() {
        let line: Vec<String> = row.iter().map(|w| format!("{w:e}")).collect();
        let _ = writeln!(s, "{}", line.join(","));
    }
    s
}

/// Writes `path` (graymap) and `path` with a `.csv` extension.
pub fn write_map(path: &Path, map: &AlignmentMap) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, to_pgm(map))?;
    fs::write(path.with_extension("csv"), to_csv(map))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Tensor;

    #[test]
    fn pgm_rows_peak_at_255() {
        let w = Tensor::new(vec![1, 2, 3], vec![0.2, 0.5, 0.3, 1.0, 0.0, 0.0]).unwrap();
        let m = AlignmentMap::new(w).unwrap();
        let pgm = to_pgm(&m);
        let lines: Vec<&str> = pgm.lines().collect();
        assert_eq!(lines[0], "P2");
        assert_eq!(lines[1], "3 2");
        assert_eq!(lines[3], "102 255 153");
        assert_eq!(lines[4], "255 0 0");
        let csv = to_csv(&m);
        let first: Vec<f64> = csv.lines().next().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(first, vec![0.2, 0.5, 0.3]);
    }
}
