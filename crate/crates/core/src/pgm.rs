//! Portable graymap I/O (P2 ASCII and P5 binary, maxval ≤ 255), with
//! intensities mapped to [0, 1].

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::restoration::ImageGrid;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PgmFormat {
    Ascii,
    Binary,
}

pub fn read_pgm<R: Read>(mut input: R) -> Result<ImageGrid> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut pos = 0;
    let magic = next_token(&bytes, &mut pos)?;
    let format = match magic.as_str() {
        "P2" => PgmFormat::Ascii,
        "P5" => PgmFormat::Binary,
        other => return Err(Error::Pgm(format!("unsupported magic {other:?}"))),
    };
    let width = header_number(&bytes, &mut pos, "width")?;
    let height = header_number(&bytes, &mut pos, "height")?;
    let maxval = header_number(&bytes, &mut pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Pgm(format!("empty image {width}x{height}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::Pgm(format!("maxval {maxval} outside 1..=255")));
    }
    let n = width * height;
    let raw: Vec<usize> = match format {
        PgmFormat::Ascii => (0..n)
            .map(|_| header_number(&bytes, &mut pos, "pixel"))
            .collect::<Result<_>>()?,
        PgmFormat::Binary => {
            // exactly one whitespace byte separates the header from the raster
            pos += 1;
            let data = bytes.get(pos..pos + n).ok_or_else(|| {
                Error::Pgm(format!(
                    "raster holds {} of {n} bytes",
                    bytes.len().saturating_sub(pos)
                ))
            })?;
            data.iter().map(|&b| b as usize).collect()
        }
    };
    let mut pixels = Vec::with_capacity(n);
    for v in raw {
        if v > maxval {
            return Err(Error::Pgm(format!(
                "pixel value {v} exceeds maxval {maxval}"
            )));
        }
        pixels.push(v as f64 / maxval as f64);
    }
    ImageGrid::new(width, height, pixels)
}

pub fn load_pgm(path: &Path) -> Result<ImageGrid> {
    read_pgm(std::fs::File::open(path)?)
}

/// Writes with maxval 255; intensities are clamped to [0, 1] and rounded.
pub fn write_pgm<W: Write>(image: &ImageGrid, format: PgmFormat, mut out: W) -> Result<()> {
    let levels = image
        .pixels()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8);
    match format {
        PgmFormat::Binary => {
            write!(out, "P5\n{} {}\n255\n", image.width(), image.height())?;
            out.write_all(&levels.collect::<Vec<u8>>())?;
        }
        PgmFormat::Ascii => {
            write!(out, "P2\n{} {}\n255\n", image.width(), image.height())?;
            let levels: Vec<u8> = levels.collect();
            for row in levels.chunks(image.width()) {
                let line: Vec<String> = row.iter().map(u8::to_string).collect();
                writeln!(out, "{}", line.join(" "))?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn save_pgm(image: &ImageGrid, format: PgmFormat, path: &Path) -> Result<()> {
    write_pgm(
        image,
        format,
        std::io::BufWriter::new(std::fs::File::create(path)?),
    )
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Pgm("unexpected end of file".into()));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = next_token(bytes, pos)?;
    tok.parse()
        .map_err(|_| Error::Pgm(format!("bad {what} {tok:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ImageGrid {
        let px = (0..12).map(|k| k as f64 / 11.0).collect();
        ImageGrid::new(4, 3, px).unwrap()
    }

    #[test]
    fn round_trips_both_formats_to_8_bits() {
        let img = sample();
        for format in [PgmFormat::Ascii, PgmFormat::Binary] {
            let mut buf = Vec::new();
            write_pgm(&img, format, &mut buf).unwrap();
            let back = read_pgm(buf.as_slice()).unwrap();
            assert_eq!((back.width(), back.height()), (4, 3));
            for (a, b) in img.pixels().iter().zip(back.pixels()) {
                assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
            }
            let mut again = Vec::new();
            write_pgm(&back, format, &mut again).unwrap();
            assert_eq!(buf, again);
        }
    }

    #[test]
    fn reads_comments_and_small_maxval() {
        let text = b"P2\n# a comment\n2 2\n# another\n4\n0 1\n2 4\n";
        let img = read_pgm(&text[..]).unwrap();
        assert_eq!(img.pixels(), &[0.0, 0.25, 0.5, 1.0]);
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(read_pgm(&b"P3\n1 1\n255\n0\n"[..]).is_err());
        assert!(read_pgm(&b"P2\n2 1\n255\n0\n"[..]).is_err());
        assert!(read_pgm(&b"P2\n1 1\n255\n300\n"[..]).is_err());
        assert!(read_pgm(&b"P5\n2 2\n255\n\x01"[..]).is_err());
        assert!(read_pgm(&b"P2\n1 1\n65535\n0\n"[..]).is_err());
    }
}
