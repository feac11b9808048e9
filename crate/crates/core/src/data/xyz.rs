//! Plain-text clouds: one `x y z [part_label]` per line, `#` starts a comment.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};

pub fn load_xyz(path: &Path) -> Result<PointCloud> {
    parse_xyz(&std::fs::read_to_string(path)?, path)
}

/// Parses `.xyz` text; `path` only labels error messages.
///
/// Either every point carries a part label or none does.
pub fn parse_xyz(text: &str, path: &Path) -> Result<PointCloud> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut labeled: Option<bool> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let fields: Vec<&str> = body.split_whitespace().collect();
        if fields.len() != 3 && fields.len() != 4 {
            return Err(err(line_no, format!("expected 3 or 4 fields, found {}", fields.len())));
        }
        let mut xyz = [0.0; 3];
        for (d, f) in fields[..3].iter().enumerate() {
            xyz[d] = f
                .parse::<f64>()
                .map_err(|_| err(line_no, format!("bad coordinate {f:?}")))?;
            if !xyz[d].is_finite() {
                return Err(err(line_no, format!("non-finite coordinate {f:?}")));
            }
        }
        let has_label = fields.len() == 4;
        match labeled {
            None => labeled = Some(has_label),
            Some(l) if l != has_label => {
                return Err(err(line_no, "part labels must be given for every point or none".into()));
            }
            _ => {}
        }
        if has_label {
            labels.push(
                fields[3]
                    .parse::<usize>()
                    .map_err(|_| err(line_no, format!("bad part label {:?}", fields[3])))?,
            );
        }
        points.push(Point3::from_array(xyz));
    }
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let cloud = PointCloud::new(points)?;
    if labeled == Some(true) {
        cloud.with_part_labels(labels)
    } else {
        Ok(cloud)
    }
}

/// Writes coordinates with 17 significant digits, enough to round-trip.
pub fn write_xyz<W: Write>(mut w: W, cloud: &PointCloud) -> Result<()> {
    let labels = cloud.part_labels();
    for (i, p) in cloud.points().iter().enumerate() {
        write!(w, "{:.16e} {:.16e} {:.16e}", p.x, p.y, p.z)?;
        if let Some(l) = labels {
            write!(w, " {}", l[i])?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_xyz(path: &Path, cloud: &PointCloud) -> Result<()> {
    write_xyz(std::io::BufWriter::new(std::fs::File::create(path)?), cloud)
}
