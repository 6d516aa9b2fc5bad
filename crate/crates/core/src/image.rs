//! Float RGB images, depth maps and their binary PNM encodings.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;

/// Row-major RGB image with channels in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![[0.0; 3]; width * height] }
    }

    pub fn filled(width: usize, height: usize, color: [f64; 3]) -> Self {
        Self { width, height, data: vec![color; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, c: [f64; 3]) {
        self.data[y * self.width + x] = c;
    }

    pub fn mean_color(&self) -> [f64; 3] {
        let mut acc = [0.0; 3];
        for p in &self.data {
            for c in 0..3 {
                acc[c] += p[c];
            }
        }
        let n = self.data.len().max(1) as f64;
        acc.map(|v| v / n)
    }

    /// Binary PPM (P6, maxval 255).
    pub fn write_ppm<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        let mut bytes = Vec::with_capacity(self.data.len() * 3);
        for p in &self.data {
            for c in p {
                bytes.push((c.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        w.write_all(&bytes)
    }

    pub fn read_ppm<R: Read>(r: R) -> io::Result<Self> {
        let mut r = BufReader::new(r);
        let (width, height, maxval) = read_pnm_header(&mut r, "P6")?;
        if maxval != 255 {
            return Err(invalid(format!("unsupported PPM maxval {maxval}")));
        }
        let mut bytes = vec![0u8; width * height * 3];
        r.read_exact(&mut bytes)?;
        let data = bytes.chunks_exact(3).map(|c| [c[0] as f64 / 255.0, c[1] as f64 / 255.0, c[2] as f64 / 255.0]).collect();
        Ok(Self { width, height, data })
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        self.write_ppm(io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: &Path) -> io::Result<Self> {
        Self::read_ppm(std::fs::File::open(path)?)
    }
}

/// Row-major depth map in meters; 0 marks pixels without a return.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Binary PGM (P5, maxval 65535, big-endian), millimeter quantization.
    pub fn write_pgm<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "P5\n{} {}\n65535\n", self.width, self.height)?;
        let mut bytes = Vec::with_capacity(self.data.len() * 2);
        for d in &self.data {
            let mm = (d.max(0.0) * 1000.0).round().min(65535.0) as u16;
            bytes.extend_from_slice(&mm.to_be_bytes());
        }
        w.write_all(&bytes)
    }

    pub fn read_pgm<R: Read>(r: R) -> io::Result<Self> {
        let mut r = BufReader::new(r);
        let (width, height, maxval) = read_pnm_header(&mut r, "P5")?;
        if maxval != 65535 {
            return Err(invalid(format!("unsupported PGM maxval {maxval}")));
        }
        let mut bytes = vec![0u8; width * height * 2];
        r.read_exact(&mut bytes)?;
        let data = bytes.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 1000.0).collect();
        Ok(Self { width, height, data })
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        self.write_pgm(io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: &Path) -> io::Result<Self> {
        Self::read_pgm(std::fs::File::open(path)?)
    }
}

fn invalid(msg: String) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg)
}

fn read_pnm_header<R: BufRead>(r: &mut R, magic: &str) -> io::Result<(usize, usize, usize)> {
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        let mut token = String::new();
        loop {
            let mut b = [0u8; 1];
            r.read_exact(&mut b)?;
            let ch = b[0] as char;
            if ch == '#' && token.is_empty() {
                let mut skip = String::new();
                r.read_line(&mut skip)?;
                continue;
            }
            if ch.is_ascii_whitespace() {
                if token.is_empty() {
                    continue;
                }
                break;
            }
            token.push(ch);
        }
        tokens.push(token);
    }
    if tokens[0] != magic {
        return Err(invalid(format!("expected {magic}, found {}", tokens[0])));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|e| invalid(format!("bad PNM header field {s:?}: {e}")));
    Ok((parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?))
}
