//! Dumps what each PFA site computed for one sample.
//!
//! Per site `n` (1-based) the output directory receives:
//! `site{n}_temporal.csv` (`U_t`, R rows by T columns), `site{n}_channel.csv`
//! (`U_c`, R by C), `site{n}_spatial_t{t}.pgm` (channel-mean attention at each
//! step, min-max scaled to 0..255) and `site{n}_attention.pfat` (the full
//! `(HW, C, T)` map).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::model::Network;
use super::{io_err, tensor_file, HarnessError, Result};
use crate::tensor::{DenseTensor, Tape};

/// Matrix as CSV with a header `row,c0,c1,...`.
pub fn matrix_csv(m: &DenseTensor, row_label: &str, col_prefix: &str) -> String {
    let (rows, cols) = (m.dims()[0], m.dims()[1]);
    let mut s = String::from(row_label);
    for c in 0..cols {
        let _ = write!(s, ",{col_prefix}{c}");
    }
    s.push('\n');
    for r in 0..rows {
        let _ = write!(s, "{r}");
        for c in 0..cols {
            let _ = write!(s, ",{}", m.get(&[r, c]));
        }
        s.push('\n');
    }
    s
}

/// ASCII greymap of a row-major `height x width` image, min-max scaled per
/// image. A constant image maps to all zeros.
pub fn pgm_p2(pixels: &[f32], height: usize, width: usize) -> String {
    let lo = pixels.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = pixels.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = hi - lo;
    let mut s = format!("P2\n{width} {height}\n255\n");
    for row in pixels.chunks(width) {
        let line: Vec<String> = row
            .iter()
            .map(|&v| {
                let level = if span > 0.0 { ((v - lo) / span * 255.0).round() } else { 0.0 };
                (level as u8).to_string()
            })
            .collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

/// `(T, H*W)` channel means of an `(HW, C, T)` attention map.
pub fn spatial_means(attention: &DenseTensor) -> Vec<Vec<f32>> {
    let (hw, c, t) = (attention.dims()[0], attention.dims()[1], attention.dims()[2]);
    (0..t)
        .map(|ti| {
            (0..hw)
                .map(|s| {
                    let sum: f64 = (0..c).map(|ci| attention.get(&[s, ci, ti]) as f64).sum();
                    (sum / c as f64) as f32
                })
                .collect()
        })
        .collect()
}

fn write(path: PathBuf, contents: String, written: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, contents).map_err(io_err(&path))?;
    written.push(path);
    Ok(())
}

/// Runs `sample` through the network and writes every site's projections and
/// attention. Returns the written paths.
pub fn export_attention(network: &Network, sample: &DenseTensor, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    let mut tape = Tape::new();
    let vars = network.record(&mut tape);
    let x = tape.leaf(sample.clone());
    let fwd = network.forward(&mut tape, &vars, x)?;
    if fwd.sites.is_empty() {
        return Err(HarnessError::NoPfaSite);
    }
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut written = Vec::new();
    for (i, site) in fwd.sites.iter().enumerate() {
        let n = i + 1;
        let p = &site.projections;
        write(
            out_dir.join(format!("site{n}_temporal.csv")),
            matrix_csv(tape.value(p.temporal), "r", "t"),
            &mut written,
        )?;
        write(
            out_dir.join(format!("site{n}_channel.csv")),
            matrix_csv(tape.value(p.channel), "r", "c"),
            &mut written,
        )?;
        let attention = tape.value(site.attention);
        for (t, image) in spatial_means(attention).iter().enumerate() {
            write(
                out_dir.join(format!("site{n}_spatial_t{t}.pgm")),
                pgm_p2(image, site.config.height, site.config.width),
                &mut written,
            )?;
        }
        let path = out_dir.join(format!("site{n}_attention.pfat"));
        tensor_file::save(&path, attention)?;
        written.push(path);
    }
    Ok(written)
}
