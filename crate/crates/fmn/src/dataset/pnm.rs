//! Binary PPM (P6) and PGM (P5) image files.
//!
//! Dependency-free, bit-exact I/O for the dataset generator and the heatmap
//! export. Only 8-bit files (maxval 255) are supported.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

fn header(magic: &str, width: usize, height: usize) -> String {
    format!("{magic}\n{width} {height}\n255\n")
}

fn write_pnm(
    path: &Path,
    magic: &str,
    width: usize,
    height: usize,
    samples_per_pixel: usize,
    pixels: &[u8],
) -> Result<()> {
    let expected = width * height * samples_per_pixel;
    if pixels.len() != expected {
        return Err(Error::dimension(format!(
            "{}: {} samples for a {width}x{height} image, expected {expected}",
            path.display(),
            pixels.len()
        )));
    }
    if width == 0 || height == 0 {
        return Err(Error::contract(format!(
            "{}: image dimensions must be positive",
            path.display()
        )));
    }
    let mut bytes = header(magic, width, height).into_bytes();
    bytes.extend_from_slice(pixels);
    fs::write(path, bytes).map_err(|err| Error::io(path, err))
}

struct HeaderScanner<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> HeaderScanner<'a> {
    fn skip_separators(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<&'a str> {
        self.skip_separators();
        let start = self.pos;
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() || b == b'#' {
                break;
            }
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Parse(format!(
                "{}: truncated header",
                self.path.display()
            )));
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| {
            Error::Parse(format!("{}: non-ASCII header token", self.path.display()))
        })
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let token = self.token()?;
        token.parse().map_err(|_| {
            Error::Parse(format!(
                "{}: {what} {token:?} is not a number",
                self.path.display()
            ))
        })
    }
}

fn read_pnm(path: &Path, magic: &str, samples_per_pixel: usize) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|err| Error::io(path, err))?;
    let mut scanner = HeaderScanner {
        bytes: &bytes,
        pos: 0,
        path,
    };
    let found = scanner.token()?;
    if found != magic {
        return Err(Error::Parse(format!(
            "{}: magic {found:?}, expected {magic:?}",
            path.display()
        )));
    }
    let width = scanner.number("width")?;
    let height = scanner.number("height")?;
    let maxval = scanner.number("maxval")?;
    if maxval != 255 {
        return Err(Error::Parse(format!(
            "{}: only maxval 255 is supported, found {maxval}",
            path.display()
        )));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(scanner.pos) {
        Some(b) if b.is_ascii_whitespace() => scanner.pos += 1,
        _ => {
            return Err(Error::Parse(format!(
                "{}: missing separator before the raster",
                path.display()
            )))
        }
    }
    let data = &bytes[scanner.pos..];
    let expected = width * height * samples_per_pixel;
    if data.len() != expected {
        return Err(Error::Parse(format!(
            "{}: raster holds {} bytes, expected {expected}",
            path.display(),
            data.len()
        )));
    }
    Ok((width, height, data.to_vec()))
}

/// Writes an RGB image; `pixels` is row-major interleaved, 3 bytes per pixel.
pub fn write_ppm(path: impl AsRef<Path>, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    write_pnm(path.as_ref(), "P6", width, height, 3, pixels)
}

/// Reads an RGB image written by [`write_ppm`]; returns `(width, height, pixels)`.
pub fn read_ppm(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u8>)> {
    read_pnm(path.as_ref(), "P6", 3)
}

/// Writes a grayscale image, one byte per pixel.
pub fn write_pgm(path: impl AsRef<Path>, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    write_pnm(path.as_ref(), "P5", width, height, 1, pixels)
}

/// Reads a grayscale image written by [`write_pgm`].
pub fn read_pgm(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u8>)> {
    read_pnm(path.as_ref(), "P5", 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn color_images_round_trip_with_a_fixed_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        let pixels: Vec<u8> = (0..24).collect();
        write_ppm(&path, 4, 2, &pixels).unwrap();

        let bytes = fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P6\n4 2\n255\n"));
        assert_eq!(bytes.len(), 11 + 24);

        let (w, h, data) = read_ppm(&path).unwrap();
        assert_eq!((w, h), (4, 2));
        assert_eq!(data, pixels);
    }

    #[test]
    fn grayscale_images_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.pgm");
        let pixels = vec![0u8, 85, 170, 255, 1, 2];
        write_pgm(&path, 2, 3, &pixels).unwrap();
        let (w, h, data) = read_pgm(&path).unwrap();
        assert_eq!((w, h), (2, 3));
        assert_eq!(data, pixels);
    }

    #[test]
    fn comments_and_flexible_whitespace_parse() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pgm");
        fs::write(&path, b"P5 # magic\n# a comment line\n 2\t1 # size\n255\nab").unwrap();
        let (w, h, data) = read_pgm(&path).unwrap();
        assert_eq!((w, h), (2, 1));
        assert_eq!(data, b"ab");
    }

    #[test]
    fn malformed_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ppm");

        fs::write(&path, b"P5\n2 1\n255\nabcdef").unwrap();
        assert!(matches!(read_ppm(&path).unwrap_err(), Error::Parse(_)));

        fs::write(&path, b"P6\n2 1\n255\nabc").unwrap();
        assert!(matches!(read_ppm(&path).unwrap_err(), Error::Parse(_)));

        fs::write(&path, b"P6\n2 1\n255\nabcdefgh").unwrap();
        assert!(matches!(read_ppm(&path).unwrap_err(), Error::Parse(_)));

        fs::write(&path, b"P6\n2 1\n65535\nabcdef").unwrap();
        assert!(matches!(read_ppm(&path).unwrap_err(), Error::Parse(_)));

        fs::write(&path, b"P6\n2 x\n255\nabcdef").unwrap();
        assert!(matches!(read_ppm(&path).unwrap_err(), Error::Parse(_)));

        fs::write(&path, b"P6\n2 1").unwrap();
        assert!(matches!(read_ppm(&path).unwrap_err(), Error::Parse(_)));

        assert!(matches!(
            read_ppm(dir.path().join("absent.ppm")).unwrap_err(),
            Error::Io { .. }
        ));
    }

    #[test]
    fn writers_validate_sample_counts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.ppm");
        assert!(matches!(
            write_ppm(&path, 2, 2, &[0u8; 11]).unwrap_err(),
            Error::Dimension(_)
        ));
        assert!(write_pgm(&path, 0, 2, &[]).is_err());
    }
}
