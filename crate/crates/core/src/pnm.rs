//! Binary PPM (P6) images and PGM (P5) label maps, maxval 255.
//!
//! Label maps store the class id directly as the gray value.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::domain::{Image, LabelMap};
use crate::error::{Error, Result};

fn malformed(detail: impl Into<String>) -> Error {
    Error::Format { what: "netpbm file", detail: detail.into() }
}

pub fn encode_ppm(image: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend_from_slice(image.pixels());
    out
}

pub fn encode_pgm(labels: &LabelMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", labels.width(), labels.height()).into_bytes();
    out.extend_from_slice(labels.labels());
    out
}

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 {
        return Err(malformed("truncated magic"));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => return Err(malformed("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(malformed("expected a decimal header field"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| malformed("header field out of range"))?;
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(malformed("missing separator after maxval")),
    }
    let [width, height, maxval] = fields;
    Ok(Header { magic, width, height, maxval, data_start: pos })
}

fn raster<'a>(bytes: &'a [u8], header: &Header, channels: usize) -> Result<&'a [u8]> {
    if header.maxval != 255 {
        return Err(malformed(format!("unsupported maxval {}", header.maxval)));
    }
    let len = header.width * header.height * channels;
    bytes
        .get(header.data_start..header.data_start + len)
        .ok_or_else(|| malformed(format!("raster truncated, expected {len} bytes")))
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let header = parse_header(bytes)?;
    if &header.magic != b"P6" {
        return Err(malformed("not a binary PPM (P6)"));
    }
    let data = raster(bytes, &header, 3)?;
    Image::new(header.width, header.height, data.to_vec())
}

pub fn decode_pgm(bytes: &[u8]) -> Result<LabelMap> {
    let header = parse_header(bytes)?;
    if &header.magic != b"P5" {
        return Err(malformed("not a binary PGM (P5)"));
    }
    let data = raster(bytes, &header, 1)?;
    LabelMap::new(header.width, header.height, data.to_vec())
}

fn write_all(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(bytes)?;
    w.flush()?;
    Ok(())
}

pub fn write_ppm(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    write_all(path.as_ref(), &encode_ppm(image))
}

pub fn write_pgm(path: impl AsRef<Path>, labels: &LabelMap) -> Result<()> {
    write_all(path.as_ref(), &encode_pgm(labels))
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Image> {
    decode_ppm(&fs::read(path)?)
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<LabelMap> {
    decode_pgm(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let img = Image::filled(2, 1, [1, 2, 3]).unwrap();
        assert_eq!(encode_ppm(&img), b"P6\n2 1\n255\n\x01\x02\x03\x01\x02\x03".to_vec());
        let lab = LabelMap::new(3, 1, vec![0, 5, 2]).unwrap();
        assert_eq!(encode_pgm(&lab), b"P5\n3 1\n255\n\x00\x05\x02".to_vec());
    }

    #[test]
    fn accepts_comments_and_rejects_garbage() {
        let bytes = b"P5\n# made by hand\n2 1\n255\n\x03\x04";
        assert_eq!(decode_pgm(bytes).unwrap().labels(), &[3, 4]);
        assert!(decode_pgm(b"P6\n1 1\n255\n\x00\x00\x00").is_err());
        assert!(decode_pgm(b"P5\n2 2\n255\n\x00").is_err());
        assert!(decode_pgm(b"P5\n1 1\n65535\n\x00\x00").is_err());
        assert!(decode_ppm(b"P6 x").is_err());
    }

    proptest! {
        #[test]
        fn ppm_pgm_roundtrip(w in 1usize..12, h in 1usize..12, seed in any::<u64>()) {
            let pixels: Vec<u8> = (0..3 * w * h).map(|i| (seed.wrapping_mul(i as u64 + 7) >> 13) as u8).collect();
            let img = Image::new(w, h, pixels).unwrap();
            prop_assert_eq!(decode_ppm(&encode_ppm(&img)).unwrap(), img);
            let labels: Vec<u8> = (0..w * h).map(|i| ((seed >> (i % 50)) & 7) as u8).collect();
            let lab = LabelMap::new(w, h, labels).unwrap();
            prop_assert_eq!(decode_pgm(&encode_pgm(&lab)).unwrap(), lab);
        }
    }
}
