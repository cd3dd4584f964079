use std::fs;
use std::path::Path;

use super::dataset::quantize;
use crate::error::{Error, Result};
use crate::image::Image;

/// Binary PGM (`P5`, maxval 255) bytes for `x`.
pub fn encode_pgm(x: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", x.width(), x.height()).into_bytes();
    out.extend(x.pixels().iter().map(|&v| quantize(v)));
    out
}

pub fn export_image(x: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(x)).map_err(|e| Error::io(path, e))
}

/// Parses a `P5` file with maxval 255 as written by [`encode_pgm`].
pub fn decode_pgm(data: &[u8]) -> Result<Image> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < data.len() && (data[pos].is_ascii_whitespace() || data[pos] == b'#') {
            if data[pos] == b'#' {
                while pos < data.len() && data[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format("PGM", "truncated header"));
        }
        fields.push(String::from_utf8_lossy(&data[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(Error::format(
            "PGM",
            format!("unsupported magic {}", fields[0]),
        ));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::format("PGM", format!("bad header field {s}")))
    };
    let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval != 255 {
        return Err(Error::format("PGM", format!("unsupported maxval {maxval}")));
    }
    let body = data
        .get(pos..pos + width * height)
        .ok_or_else(|| Error::format("PGM", format!("expected {} pixel bytes", width * height)))?;
    Image::new(
        height,
        width,
        body.iter().map(|&b| b as f64 / 255.0).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_values() {
        let x = Image::new(1, 3, vec![1.0, 0.5, 0.0]).unwrap();
        let bytes = encode_pgm(&x);
        assert!(bytes.starts_with(b"P5\n3 1\n255\n"));
        assert_eq!(&bytes[bytes.len() - 3..], &[255, 128, 0]);
    }

    #[test]
    fn roundtrip_within_one_level() {
        let x = Image::new(2, 3, vec![0.0, 0.1, 0.33, 0.5, 0.77, 1.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pgm");
        export_image(&x, &path).unwrap();
        let back = decode_pgm(&fs::read(&path).unwrap()).unwrap();
        assert_eq!((back.height(), back.width()), (2, 3));
        for (a, b) in back.pixels().iter().zip(x.pixels()) {
            assert!((a - b).abs() <= 1.0 / 255.0);
        }
    }

    #[test]
    fn rejects_other_formats() {
        assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(decode_pgm(b"P5\n2 2\n255\n\x00").is_err());
    }
}
