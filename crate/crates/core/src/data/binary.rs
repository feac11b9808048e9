//! `AEDS1` binary datasets.
//!
//! ```text
//! "AEDS1"
//! u32 n_samples
//! u32 n_classes, then per class: u32 len, UTF-8 name
//! u32 n_parts,   then per part:  u32 len, UTF-8 name
//! u32 len, UTF-8 split tag
//! per sample:
//!   u32 class id (0xFFFF_FFFF = unlabeled)
//!   u32 n_points
//!   u8  has_part_labels
//!   n_points × 3 × f64 coordinates
//!   n_points × u8 part labels (if flagged)
//! ```
//!
//! Integers and floats are little-endian.

use std::io::{Read, Write};
use std::path::Path;

use super::Dataset;
use crate::autodiff::Reader;
use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};

pub const DATASET_MAGIC: &[u8; 5] = b"AEDS1";
const UNLABELED: u32 = u32::MAX;

fn put_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn len_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::invalid(format!("{what} {n} does not fit the format")))
}

pub fn write_dataset<W: Write>(mut w: W, ds: &Dataset) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::invalid("refusing to write an empty dataset"));
    }
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&len_u32(ds.len(), "sample count")?.to_le_bytes())?;
    for names in [ds.class_names(), ds.part_names()] {
        w.write_all(&len_u32(names.len(), "name count")?.to_le_bytes())?;
        for n in names {
            put_str(&mut w, n)?;
        }
    }
    put_str(&mut w, ds.split_tag())?;
    for s in ds.samples() {
        let class = match s.class_label() {
            Some(c) => len_u32(c, "class id")?,
            None => UNLABELED,
        };
        w.write_all(&class.to_le_bytes())?;
        w.write_all(&len_u32(s.len(), "point count")?.to_le_bytes())?;
        w.write_all(&[u8::from(s.part_labels().is_some())])?;
        for p in s.points() {
            for v in p.to_array() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        if let Some(labels) = s.part_labels() {
            let bytes = labels
                .iter()
                .map(|&l| u8::try_from(l).map_err(|_| Error::invalid(format!("part label {l} exceeds 255"))))
                .collect::<Result<Vec<u8>>>()?;
            w.write_all(&bytes)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn get_str(rd: &mut Reader<'_>, what: &str) -> Result<String> {
    let n = rd.u32(what)? as usize;
    let bytes = rd.take(n, what)?;
    std::str::from_utf8(bytes)
        .map(str::to_string)
        .map_err(|_| rd.err(format!("{what} is not UTF-8")))
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<Dataset> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut rd = Reader::new(&buf);
    if rd.take(DATASET_MAGIC.len(), "magic")? != DATASET_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: "bad magic, expected AEDS1".into(),
        });
    }
    let n = rd.u32("sample count")? as usize;
    if n == 0 {
        return Err(rd.err("dataset has no samples"));
    }
    let mut names = [Vec::new(), Vec::new()];
    for list in &mut names {
        let count = rd.u32("name count")? as usize;
        for _ in 0..count {
            list.push(get_str(&mut rd, "name")?);
        }
    }
    let [class_names, part_names] = names;
    let split = get_str(&mut rd, "split tag")?;
    let mut samples = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let start = rd.pos();
        let class = rd.u32("class id")?;
        let count = rd.u32("point count")? as usize;
        let flag = rd.u8("label flag")?;
        if flag > 1 {
            return Err(rd.err(format!("label flag must be 0 or 1, found {flag}")));
        }
        let coords = rd.f64s(
            count.checked_mul(3).ok_or_else(|| rd.err("point count overflow"))?,
            "coordinates",
        )?;
        let points: Vec<Point3> = coords.chunks_exact(3).map(|c| Point3::new(c[0], c[1], c[2])).collect();
        let mut cloud = PointCloud::new(points).map_err(|e| Error::Format {
            offset: start as u64,
            msg: format!("invalid sample: {e}"),
        })?;
        if class != UNLABELED {
            cloud = cloud.with_class_label(class as usize);
        }
        if flag == 1 {
            let labels = rd.take(count, "part labels")?.iter().map(|&b| b as usize).collect();
            cloud = cloud.with_part_labels(labels)?;
        }
        samples.push(cloud);
    }
    if !rd.at_end() {
        return Err(rd.err("trailing bytes after last sample"));
    }
    Dataset::new(samples, class_names, part_names, split)
}

pub fn save_dataset_bin(path: &Path, ds: &Dataset) -> Result<()> {
    write_dataset(std::io::BufWriter::new(std::fs::File::create(path)?), ds)
}

pub fn load_dataset_bin(path: &Path) -> Result<Dataset> {
    read_dataset(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Dataset {
        let a = PointCloud::new(vec![Point3::new(0.1, -0.0, 1e-310), Point3::new(1.0, 2.0, 3.0)])
            .unwrap()
            .with_class_label(1)
            .with_part_labels(vec![0, 1])
            .unwrap();
        let b = PointCloud::new(vec![Point3::new(-1.0, 0.5, 0.25)]).unwrap();
        Dataset::new(
            vec![a, b],
            vec!["x".into(), "y".into()],
            vec!["p".into(), "q".into()],
            "train",
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let ds = sample();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &ds).unwrap();
        let back = read_dataset(&buf[..]).unwrap();
        assert_eq!(back, ds);
        for (x, y) in back.samples()[0].points().iter().zip(ds.samples()[0].points()) {
            for (u, v) in x.to_array().iter().zip(y.to_array()) {
                assert_eq!(u.to_bits(), v.to_bits());
            }
        }
        let mut again = Vec::new();
        write_dataset(&mut again, &back).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn rejects_empty_corrupt_and_truncated() {
        let empty = Dataset::new(vec![], vec![], vec![], "").unwrap();
        assert!(write_dataset(Vec::new(), &empty).is_err());
        let mut raw = DATASET_MAGIC.to_vec();
        raw.extend(0u32.to_le_bytes());
        assert!(matches!(read_dataset(&raw[..]), Err(Error::Format { .. })));

        let mut buf = Vec::new();
        write_dataset(&mut buf, &sample()).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_dataset(&bad[..]), Err(Error::Format { offset: 0, .. })));
        for cut in [3, 9, buf.len() - 1] {
            match read_dataset(&buf[..cut]) {
                Err(Error::Format { offset, .. }) => assert!(offset as usize <= cut),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }
}
