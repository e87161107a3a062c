//! Binary PGM (P5) masks: 0 = normal, 255 = abnormal.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

/// Ground-truth mask path for a frame.
pub fn gt_path(dir: &Path, frame: usize) -> PathBuf {
    dir.join(format!("gt_{frame:06}.pgm"))
}

/// Detection mask path for a frame.
pub fn det_path(dir: &Path, frame: usize) -> PathBuf {
    dir.join(format!("det_{frame:06}.pgm"))
}

pub fn write_pgm(path: &Path, width: usize, height: usize, data: &[u8]) -> io::Result<()> {
    assert_eq!(data.len(), width * height, "pgm data length");
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(data);
    fs::write(path, bytes)
}

pub fn read_pgm(path: &Path) -> io::Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path)?;
    parse_pgm(&bytes).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))
}

fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), String> {
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String, String> {
        // skip whitespace and '#' comments between tokens
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("unexpected end of header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    if token(bytes)? != "P5" {
        return Err("not a P5 pgm".into());
    }
    let width: usize = token(bytes)?.parse().map_err(|_| "bad width")?;
    let height: usize = token(bytes)?.parse().map_err(|_| "bad height")?;
    let maxval: usize = token(bytes)?.parse().map_err(|_| "bad maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    // exactly one whitespace byte separates the header from raster data
    pos += 1;
    let n = width * height;
    if bytes.len() < pos + n {
        return Err(format!("raster truncated: need {n} bytes, have {}", bytes.len().saturating_sub(pos)));
    }
    Ok((width, height, bytes[pos..pos + n].to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        let data: Vec<u8> = (0..12).map(|i| if i % 3 == 0 { 255 } else { 0 }).collect();
        write_pgm(&path, 4, 3, &data).unwrap();
        let (w, h, got) = read_pgm(&path).unwrap();
        assert_eq!((w, h), (4, 3));
        assert_eq!(got, data);
    }

    #[test]
    fn comments_in_header() {
        let bytes = b"P5\n# a comment\n2 1\n255\n\x00\xff".to_vec();
        let (w, h, data) = parse_pgm(&bytes).unwrap();
        assert_eq!((w, h), (2, 1));
        assert_eq!(data, vec![0, 255]);
    }
}
