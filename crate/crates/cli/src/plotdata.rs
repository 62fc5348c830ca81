//! Flattens the binary snapshots of a run into whitespace-separated columns.
//!
//! One line per node with `x [y] density re im`; 2D files put a blank line
//! between rows of constant `x`, which is what gnuplot's `splot` expects.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use dsqm::io::{fmt_f64, read_wave};
use dsqm::WaveField;

use crate::manifest::{RunManifest, PLOTDATA_DIR};

pub fn write_columns(out: &mut impl Write, field: &WaveField) -> std::io::Result<()> {
    let g = field.grid();
    let amps = field.amplitudes();
    let x = g.axis(0);
    if g.dim() == 1 {
        writeln!(out, "# x density re im")?;
        for (i, a) in amps.iter().enumerate() {
            let cols = [x.coord(i), a.norm_sqr(), a.re, a.im];
            writeln!(out, "{}", cols.map(fmt_f64).join(" "))?;
        }
        return Ok(());
    }
    let y = g.axis(1);
    writeln!(out, "# x y density re im")?;
    for i in 0..x.points {
        for j in 0..y.points {
            let a = amps[i * y.points + j];
            let cols = [x.coord(i), y.coord(j), a.norm_sqr(), a.re, a.im];
            writeln!(out, "{}", cols.map(fmt_f64).join(" "))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Converts every `.dswf` file listed in the manifest; returns the paths written.
pub fn export(manifest: &RunManifest, dir: &Path) -> Result<Vec<PathBuf>, String> {
    let target = dir.join(PLOTDATA_DIR);
    fs::create_dir_all(&target).map_err(|e| format!("{}: {e}", target.display()))?;
    let mut written = Vec::new();
    for f in manifest.files.iter().filter(|f| f.path.ends_with(".dswf")) {
        let source = dir.join(&f.path);
        let mut reader = fs::File::open(&source).map_err(|e| format!("{}: {e}", source.display()))?;
        let field = read_wave(&mut reader).map_err(|e| format!("{}: {e}", source.display()))?;
        let path = target.join(f.path.replace(".dswf", ".dat"));
        let file = fs::File::create(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut out = BufWriter::new(file);
        write_columns(&mut out, &field)
            .and_then(|_| out.flush())
            .map_err(|e| format!("{}: {e}", path.display()))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use dsqm::{gaussian_packet, Grid};

    #[test]
    fn two_dimensional_blocks() {
        let g = Grid::square(-8.0, 8.0, 16).unwrap();
        let f = gaussian_packet(&g, [0.0, 0.0], [0.0, 0.0], 1.0, 1.0, 1.0).unwrap();
        let mut buf = Vec::new();
        write_columns(&mut buf, &f).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 256 + 16);
        assert_eq!(text.lines().filter(|l| l.is_empty()).count(), 16);
        assert_eq!(text.lines().nth(1).unwrap().split(' ').count(), 5);
    }
}
