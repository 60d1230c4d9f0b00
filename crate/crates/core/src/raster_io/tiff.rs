//! Minimal GeoTIFF codec.
//!
//! The reader understands classic TIFF and BigTIFF, both byte orders, strips
//! and tiles, chunky and planar layouts, no compression or DEFLATE (with the
//! horizontal predictor for integer data). The writer always produces a
//! little-endian, planar-separate, tiled file, switching to BigTIFF only when
//! the payload could overflow 32-bit offsets.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use flate2::read::ZlibDecoder;
use flate2::write::ZlibEncoder;

use super::geotransform::GeoTransform;
use super::{Compression, RasterSpec, SampleType};
use crate::error::{Error, Result};

const TAG_IMAGE_WIDTH: u16 = 256;
const TAG_IMAGE_LENGTH: u16 = 257;
const TAG_BITS_PER_SAMPLE: u16 = 258;
const TAG_COMPRESSION: u16 = 259;
const TAG_PHOTOMETRIC: u16 = 262;
const TAG_STRIP_OFFSETS: u16 = 273;
const TAG_SAMPLES_PER_PIXEL: u16 = 277;
const TAG_ROWS_PER_STRIP: u16 = 278;
const TAG_STRIP_BYTE_COUNTS: u16 = 279;
const TAG_PLANAR_CONFIG: u16 = 284;
const TAG_PREDICTOR: u16 = 317;
const TAG_TILE_WIDTH: u16 = 322;
const TAG_TILE_LENGTH: u16 = 323;
const TAG_TILE_OFFSETS: u16 = 324;
const TAG_TILE_BYTE_COUNTS: u16 = 325;
const TAG_EXTRA_SAMPLES: u16 = 338;
const TAG_SAMPLE_FORMAT: u16 = 339;
const TAG_MODEL_PIXEL_SCALE: u16 = 33550;
const TAG_MODEL_TIEPOINT: u16 = 33922;
const TAG_MODEL_TRANSFORMATION: u16 = 34264;
const TAG_GEO_KEY_DIRECTORY: u16 = 34735;
const TAG_GDAL_NODATA: u16 = 42113;

const KEY_MODEL_TYPE: u16 = 1024;
const KEY_RASTER_TYPE: u16 = 1025;
const KEY_GEOGRAPHIC_TYPE: u16 = 2048;
const KEY_PROJECTED_CS_TYPE: u16 = 3072;

const TYPE_ASCII: u16 = 2;
const TYPE_SHORT: u16 = 3;
const TYPE_LONG: u16 = 4;
const TYPE_DOUBLE: u16 = 12;
const TYPE_LONG8: u16 = 16;

#[derive(Debug, Clone)]
enum TagValue {
    Ints(Vec<u64>),
    Floats(Vec<f64>),
    Ascii(String),
}

impl TagValue {
    fn ints(&self) -> Option<&[u64]> {
        match self {
            TagValue::Ints(v) => Some(v),
            _ => None,
        }
    }

    fn floats(&self) -> Vec<f64> {
        match self {
            TagValue::Ints(v) => v.iter().map(|&x| x as f64).collect(),
            TagValue::Floats(v) => v.clone(),
            TagValue::Ascii(_) => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Endian {
    little: bool,
}

impl Endian {
    fn u16(&self, b: &[u8]) -> u16 {
        let a = [b[0], b[1]];
        if self.little {
            u16::from_le_bytes(a)
        } else {
            u16::from_be_bytes(a)
        }
    }
    fn u32(&self, b: &[u8]) -> u32 {
        let a = [b[0], b[1], b[2], b[3]];
        if self.little {
            u32::from_le_bytes(a)
        } else {
            u32::from_be_bytes(a)
        }
    }
    fn u64(&self, b: &[u8]) -> u64 {
        let mut a = [0u8; 8];
        a.copy_from_slice(&b[..8]);
        if self.little {
            u64::from_le_bytes(a)
        } else {
            u64::from_be_bytes(a)
        }
    }
}

/// Where the pixel chunks of an image live and how to decode them.
#[derive(Debug, Clone)]
pub(crate) struct ChunkLayout {
    little_endian: bool,
    pub width: usize,
    pub height: usize,
    pub samples: usize,
    pub sample_type: SampleType,
    planar: bool,
    compression: u16,
    predictor: u16,
    chunk_w: usize,
    chunk_h: usize,
    tiled: bool,
    offsets: Vec<u64>,
    byte_counts: Vec<u64>,
}

#[derive(Debug, Clone)]
pub(crate) struct TiffHeader {
    pub layout: ChunkLayout,
    pub geotransform: GeoTransform,
    pub crs_id: String,
    pub nodata: Option<f64>,
}

fn tiff_err(msg: impl Into<String>) -> Error {
    Error::Tiff(msg.into())
}

fn type_size(t: u16) -> Option<usize> {
    Some(match t {
        1 | 2 | 6 | 7 => 1,
        3 | 8 => 2,
        4 | 9 | 11 | 13 => 4,
        5 | 10 | 12 | 16 | 17 | 18 => 8,
        _ => return None,
    })
}

fn decode_values(e: Endian, typ: u16, count: usize, raw: &[u8]) -> TagValue {
    match typ {
        TYPE_ASCII => {
            let s = String::from_utf8_lossy(raw);
            TagValue::Ascii(s.trim_end_matches('\0').to_string())
        }
        11 => TagValue::Floats(
            (0..count)
                .map(|i| f32::from_bits(e.u32(&raw[i * 4..])) as f64)
                .collect(),
        ),
        TYPE_DOUBLE => TagValue::Floats(
            (0..count)
                .map(|i| f64::from_bits(e.u64(&raw[i * 8..])))
                .collect(),
        ),
        5 | 10 => TagValue::Floats(
            (0..count)
                .map(|i| {
                    let n = e.u32(&raw[i * 8..]);
                    let d = e.u32(&raw[i * 8 + 4..]);
                    if typ == 10 {
                        n as i32 as f64 / d as i32 as f64
                    } else {
                        n as f64 / d as f64
                    }
                })
                .collect(),
        ),
        _ => {
            let size = type_size(typ).unwrap_or(1);
            TagValue::Ints(
                (0..count)
                    .map(|i| {
                        let b = &raw[i * size..];
                        match typ {
                            6 => b[0] as i8 as i64 as u64,
                            8 => e.u16(b) as i16 as i64 as u64,
                            9 => e.u32(b) as i32 as i64 as u64,
                            _ => match size {
                                1 => b[0] as u64,
                                2 => e.u16(b) as u64,
                                4 => e.u32(b) as u64,
                                _ => e.u64(b),
                            },
                        }
                    })
                    .collect(),
            )
        }
    }
}

fn read_exact_at(file: &mut File, offset: u64, buf: &mut [u8]) -> Result<()> {
    file.seek(SeekFrom::Start(offset))?;
    file.read_exact(buf)
        .map_err(|e| tiff_err(format!("truncated read at offset {offset}: {e}")))
}

pub(crate) fn read_header(path: &Path) -> Result<TiffHeader> {
    let mut file = File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound(path.to_path_buf())
        } else {
            Error::Io(e)
        }
    })?;
    let mut head = [0u8; 16];
    let n = file.read(&mut head)?;
    if n < 8 {
        return Err(tiff_err("file too short"));
    }
    let e = match &head[..2] {
        b"II" => Endian { little: true },
        b"MM" => Endian { little: false },
        _ => return Err(tiff_err("not a TIFF file")),
    };
    let (big, ifd_offset) = match e.u16(&head[2..]) {
        42 => (false, e.u32(&head[4..]) as u64),
        43 => {
            if n < 16 {
                return Err(tiff_err("truncated BigTIFF header"));
            }
            (true, e.u64(&head[8..]))
        }
        v => return Err(tiff_err(format!("bad TIFF version {v}"))),
    };

    let (count_size, entry_size, inline) = if big { (8, 20, 8) } else { (2, 12, 4) };
    let mut cbuf = [0u8; 8];
    read_exact_at(&mut file, ifd_offset, &mut cbuf[..count_size])?;
    let entry_count = if big { e.u64(&cbuf) } else { e.u16(&cbuf) as u64 } as usize;
    let mut entries = vec![0u8; entry_count * entry_size];
    read_exact_at(&mut file, ifd_offset + count_size as u64, &mut entries)?;

    let mut tags: BTreeMap<u16, TagValue> = BTreeMap::new();
    for i in 0..entry_count {
        let ent = &entries[i * entry_size..(i + 1) * entry_size];
        let tag = e.u16(ent);
        let typ = e.u16(&ent[2..]);
        let Some(size) = type_size(typ) else { continue };
        let (count, value_field) = if big {
            (e.u64(&ent[4..]) as usize, &ent[12..20])
        } else {
            (e.u32(&ent[4..]) as usize, &ent[8..12])
        };
        let total = count
            .checked_mul(size)
            .ok_or_else(|| tiff_err("tag size overflow"))?;
        let raw = if total <= inline {
            value_field[..total].to_vec()
        } else {
            let off = if big { e.u64(value_field) } else { e.u32(value_field) as u64 };
            let mut buf = vec![0u8; total];
            read_exact_at(&mut file, off, &mut buf)?;
            buf
        };
        tags.insert(tag, decode_values(e, typ, count, &raw));
    }

    let int_tag = |t: u16| -> Option<&[u64]> { tags.get(&t).and_then(|v| v.ints()) };
    let first = |t: u16| -> Option<u64> { int_tag(t).and_then(|v| v.first().copied()) };

    let width = first(TAG_IMAGE_WIDTH).ok_or_else(|| tiff_err("missing ImageWidth"))? as usize;
    let height = first(TAG_IMAGE_LENGTH).ok_or_else(|| tiff_err("missing ImageLength"))? as usize;
    let samples = first(TAG_SAMPLES_PER_PIXEL).unwrap_or(1) as usize;
    if width == 0 || height == 0 || samples == 0 {
        return Err(tiff_err("empty image"));
    }
    let bits = int_tag(TAG_BITS_PER_SAMPLE).map(|v| v.to_vec()).unwrap_or(vec![1]);
    if bits.iter().any(|&b| b != bits[0]) {
        return Err(Error::Unsupported("mixed bits per sample".into()));
    }
    let format = int_tag(TAG_SAMPLE_FORMAT).map(|v| v.to_vec()).unwrap_or(vec![1]);
    if format.iter().any(|&f| f != format[0]) {
        return Err(Error::Unsupported("mixed sample formats".into()));
    }
    let sample_type = match (bits[0], format[0]) {
        (8, 1) => SampleType::U8,
        (16, 1) => SampleType::U16,
        (16, 2) => SampleType::I16,
        (32, 3) => SampleType::F32,
        (b, f) => {
            return Err(Error::Unsupported(format!(
                "sample type ({b} bits, format {f}); expected uint8, uint16, int16 or float32"
            )))
        }
    };
    let compression = first(TAG_COMPRESSION).unwrap_or(1) as u16;
    if !matches!(compression, 1 | 8 | 32946) {
        return Err(Error::Unsupported(format!("compression scheme {compression}")));
    }
    let predictor = first(TAG_PREDICTOR).unwrap_or(1) as u16;
    if predictor != 1 && !(predictor == 2 && sample_type != SampleType::F32) {
        return Err(Error::Unsupported(format!("predictor {predictor} for {sample_type:?}")));
    }
    let planar = first(TAG_PLANAR_CONFIG).unwrap_or(1) == 2 && samples > 1;

    let (tiled, chunk_w, chunk_h, offsets, byte_counts) = if let Some(tw) = first(TAG_TILE_WIDTH) {
        let th = first(TAG_TILE_LENGTH).ok_or_else(|| tiff_err("missing TileLength"))?;
        let offs = int_tag(TAG_TILE_OFFSETS).ok_or_else(|| tiff_err("missing TileOffsets"))?;
        let counts = int_tag(TAG_TILE_BYTE_COUNTS).ok_or_else(|| tiff_err("missing TileByteCounts"))?;
        (true, tw as usize, th as usize, offs.to_vec(), counts.to_vec())
    } else {
        let rps = first(TAG_ROWS_PER_STRIP).unwrap_or(u32::MAX as u64).min(height as u64) as usize;
        let offs = int_tag(TAG_STRIP_OFFSETS).ok_or_else(|| tiff_err("missing StripOffsets"))?;
        let counts = match int_tag(TAG_STRIP_BYTE_COUNTS) {
            Some(c) => c.to_vec(),
            None if compression == 1 => {
                let per_pixel = if planar { 1 } else { samples } * sample_type.bytes();
                vec![(rps * width * per_pixel) as u64; offs.len()]
            }
            None => return Err(tiff_err("missing StripByteCounts")),
        };
        (false, width, rps.max(1), offs.to_vec(), counts)
    };
    if chunk_w == 0 || chunk_h == 0 {
        return Err(tiff_err("zero chunk size"));
    }
    let per_plane = width.div_ceil(chunk_w) * height.div_ceil(chunk_h);
    let expected = if planar { per_plane * samples } else { per_plane };
    if offsets.len() < expected || byte_counts.len() < expected {
        return Err(tiff_err(format!(
            "expected {expected} chunks, found {} offsets",
            offsets.len()
        )));
    }

    let geotransform = if let Some(m) = tags.get(&TAG_MODEL_TRANSFORMATION).map(|v| v.floats()) {
        if m.len() < 16 {
            return Err(tiff_err("short ModelTransformation"));
        }
        GeoTransform {
            origin_x: m[3],
            origin_y: m[7],
            pixel_width: m[0],
            pixel_height: m[5],
            row_rotation: m[1],
            col_rotation: m[4],
        }
    } else if let (Some(scale), Some(tie)) = (
        tags.get(&TAG_MODEL_PIXEL_SCALE).map(|v| v.floats()),
        tags.get(&TAG_MODEL_TIEPOINT).map(|v| v.floats()),
    ) {
        if scale.len() < 2 || tie.len() < 6 {
            return Err(tiff_err("short georeferencing tags"));
        }
        GeoTransform::new(
            tie[3] - tie[0] * scale[0],
            tie[4] + tie[1] * scale[1],
            scale[0],
            -scale[1],
        )
    } else {
        GeoTransform::unit()
    };

    let mut crs_id = String::new();
    let mut pixel_is_point = false;
    let mut projected = false;
    if let Some(keys) = int_tag(TAG_GEO_KEY_DIRECTORY) {
        if keys.len() >= 4 {
            let n = keys[3] as usize;
            for k in 0..n {
                let base = 4 + k * 4;
                if base + 3 >= keys.len() {
                    break;
                }
                let (id, loc, value) = (keys[base] as u16, keys[base + 1], keys[base + 3]);
                if loc != 0 {
                    continue;
                }
                let defined = value != 0 && value != 32767;
                match id {
                    // a projected CRS wins over its base geographic CRS
                    KEY_PROJECTED_CS_TYPE if defined => {
                        crs_id = format!("EPSG:{value}");
                        projected = true;
                    }
                    KEY_GEOGRAPHIC_TYPE if defined && !projected => crs_id = format!("EPSG:{value}"),
                    KEY_RASTER_TYPE => pixel_is_point = value == 2,
                    _ => {}
                }
            }
        }
    }
    let geotransform = if pixel_is_point {
        GeoTransform {
            origin_x: geotransform.origin_x - 0.5 * geotransform.pixel_width,
            origin_y: geotransform.origin_y - 0.5 * geotransform.pixel_height,
            ..geotransform
        }
    } else {
        geotransform
    };

    let nodata = match tags.get(&TAG_GDAL_NODATA) {
        Some(TagValue::Ascii(s)) => {
            let s = s.trim();
            if s.eq_ignore_ascii_case("nan") {
                Some(f64::NAN)
            } else {
                s.parse::<f64>().ok()
            }
        }
        _ => None,
    };

    Ok(TiffHeader {
        layout: ChunkLayout {
            little_endian: e.little,
            width,
            height,
            samples,
            sample_type,
            planar,
            compression,
            predictor,
            chunk_w,
            chunk_h,
            tiled,
            offsets,
            byte_counts,
        },
        geotransform,
        crs_id,
        nodata,
    })
}

impl ChunkLayout {
    fn across(&self) -> usize {
        self.width.div_ceil(self.chunk_w)
    }

    fn down(&self) -> usize {
        self.height.div_ceil(self.chunk_h)
    }

    /// Rows actually stored in chunk row `cy` (strips may be short at the bottom).
    fn stored_rows(&self, cy: usize) -> usize {
        if self.tiled {
            self.chunk_h
        } else {
            self.chunk_h.min(self.height - cy * self.chunk_h)
        }
    }

    /// Decode one chunk into f32 samples laid out row-major, interleaved by
    /// `spc` samples per pixel.
    fn decode_chunk(&self, file: &mut File, index: usize, spc: usize, rows: usize) -> Result<Vec<f32>> {
        let offset = self.offsets[index];
        let count = self.byte_counts[index] as usize;
        let bytes_per = self.sample_type.bytes();
        let expected = rows * self.chunk_w * spc * bytes_per;
        let mut raw = vec![0u8; count];
        read_exact_at(file, offset, &mut raw)?;
        let mut data = if self.compression == 1 {
            raw
        } else {
            let mut out = Vec::with_capacity(expected);
            ZlibDecoder::new(&raw[..])
                .read_to_end(&mut out)
                .map_err(|e| tiff_err(format!("deflate chunk {index}: {e}")))?;
            out
        };
        if data.len() < expected {
            return Err(tiff_err(format!(
                "chunk {index} holds {} bytes, expected {expected}",
                data.len()
            )));
        }
        data.truncate(expected);

        let values = match self.sample_type {
            SampleType::U8 => {
                let mut v: Vec<u8> = data;
                if self.predictor == 2 {
                    undo_predictor(&mut v, rows, self.chunk_w, spc);
                }
                v.into_iter().map(|x| x as f32).collect()
            }
            SampleType::U16 | SampleType::I16 => {
                let mut v: Vec<u16> = data
                    .chunks_exact(2)
                    .map(|c| {
                        if self.little_endian {
                            u16::from_le_bytes([c[0], c[1]])
                        } else {
                            u16::from_be_bytes([c[0], c[1]])
                        }
                    })
                    .collect();
                if self.predictor == 2 {
                    undo_predictor(&mut v, rows, self.chunk_w, spc);
                }
                if self.sample_type == SampleType::I16 {
                    v.into_iter().map(|x| x as i16 as f32).collect()
                } else {
                    v.into_iter().map(|x| x as f32).collect()
                }
            }
            SampleType::F32 => data
                .chunks_exact(4)
                .map(|c| {
                    let a = [c[0], c[1], c[2], c[3]];
                    if self.little_endian {
                        f32::from_le_bytes(a)
                    } else {
                        f32::from_be_bytes(a)
                    }
                })
                .collect(),
        };
        Ok(values)
    }

    /// Read a window into a band-major buffer for the requested bands.
    pub(crate) fn read_window(
        &self,
        file: &mut File,
        col_off: usize,
        row_off: usize,
        w: usize,
        h: usize,
        bands: &[usize],
    ) -> Result<Vec<f32>> {
        let mut out = vec![0f32; bands.len() * w * h];
        let cx0 = col_off / self.chunk_w;
        let cx1 = (col_off + w - 1) / self.chunk_w;
        let cy0 = row_off / self.chunk_h;
        let cy1 = (row_off + h - 1) / self.chunk_h;
        let per_plane = self.across() * self.down();

        for cy in cy0..=cy1 {
            let rows = self.stored_rows(cy);
            let chunk_r0 = cy * self.chunk_h;
            let r_start = row_off.max(chunk_r0);
            let r_end = (row_off + h).min(chunk_r0 + rows);
            for cx in cx0..=cx1 {
                let chunk_c0 = cx * self.chunk_w;
                let c_start = col_off.max(chunk_c0);
                let c_end = (col_off + w).min(chunk_c0 + self.chunk_w).min(self.width);
                if c_start >= c_end || r_start >= r_end {
                    continue;
                }
                let base_index = cy * self.across() + cx;
                if self.planar {
                    for (bi, &band) in bands.iter().enumerate() {
                        let chunk = self.decode_chunk(file, band * per_plane + base_index, 1, rows)?;
                        for r in r_start..r_end {
                            let src = (r - chunk_r0) * self.chunk_w + (c_start - chunk_c0);
                            let dst = bi * w * h + (r - row_off) * w + (c_start - col_off);
                            out[dst..dst + (c_end - c_start)]
                                .copy_from_slice(&chunk[src..src + (c_end - c_start)]);
                        }
                    }
                } else {
                    let spp = self.samples;
                    let chunk = self.decode_chunk(file, base_index, spp, rows)?;
                    for r in r_start..r_end {
                        for c in c_start..c_end {
                            let src = ((r - chunk_r0) * self.chunk_w + (c - chunk_c0)) * spp;
                            for (bi, &band) in bands.iter().enumerate() {
                                out[bi * w * h + (r - row_off) * w + (c - col_off)] = chunk[src + band];
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

fn undo_predictor<T>(v: &mut [T], rows: usize, width: usize, spc: usize)
where
    T: Copy + WrappingAdd,
{
    for r in 0..rows {
        let row = &mut v[r * width * spc..(r + 1) * width * spc];
        for i in spc..row.len() {
            row[i] = row[i].wrapping_add(row[i - spc]);
        }
    }
}

trait WrappingAdd {
    fn wrapping_add(self, other: Self) -> Self;
}

impl WrappingAdd for u8 {
    fn wrapping_add(self, other: Self) -> Self {
        u8::wrapping_add(self, other)
    }
}

impl WrappingAdd for u16 {
    fn wrapping_add(self, other: Self) -> Self {
        u16::wrapping_add(self, other)
    }
}

// ---------------------------------------------------------------------------
// Writer

struct Entry {
    tag: u16,
    typ: u16,
    count: u64,
    bytes: Vec<u8>,
}

fn shorts(tag: u16, values: &[u16]) -> Entry {
    Entry {
        tag,
        typ: TYPE_SHORT,
        count: values.len() as u64,
        bytes: values.iter().flat_map(|v| v.to_le_bytes()).collect(),
    }
}

fn longs(tag: u16, values: &[u64], big: bool) -> Entry {
    if big {
        Entry {
            tag,
            typ: TYPE_LONG8,
            count: values.len() as u64,
            bytes: values.iter().flat_map(|v| v.to_le_bytes()).collect(),
        }
    } else {
        Entry {
            tag,
            typ: TYPE_LONG,
            count: values.len() as u64,
            bytes: values.iter().flat_map(|&v| (v as u32).to_le_bytes()).collect(),
        }
    }
}

fn doubles(tag: u16, values: &[f64]) -> Entry {
    Entry {
        tag,
        typ: TYPE_DOUBLE,
        count: values.len() as u64,
        bytes: values.iter().flat_map(|v| v.to_le_bytes()).collect(),
    }
}

fn ascii(tag: u16, s: &str) -> Entry {
    let mut bytes = s.as_bytes().to_vec();
    bytes.push(0);
    Entry {
        tag,
        typ: TYPE_ASCII,
        count: bytes.len() as u64,
        bytes,
    }
}

fn epsg_code(crs_id: &str) -> Option<u16> {
    let code = crs_id.strip_prefix("EPSG:").or_else(|| crs_id.strip_prefix("epsg:"))?;
    code.trim().parse().ok()
}

pub(crate) fn format_nodata(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v}")
    }
}

fn encode_sample(v: f32, st: SampleType, nodata: Option<f64>, out: &mut Vec<u8>) {
    let v = if v.is_nan() {
        nodata.map(|n| n as f32).unwrap_or(f32::NAN)
    } else {
        v
    };
    match st {
        SampleType::F32 => out.extend_from_slice(&v.to_le_bytes()),
        SampleType::U8 => out.push(if v.is_nan() { 0 } else { v.round().clamp(0.0, 255.0) as u8 }),
        SampleType::U16 => {
            let x = if v.is_nan() { 0 } else { v.round().clamp(0.0, 65535.0) as u16 };
            out.extend_from_slice(&x.to_le_bytes())
        }
        SampleType::I16 => {
            let x = if v.is_nan() { 0 } else { v.round().clamp(-32768.0, 32767.0) as i16 };
            out.extend_from_slice(&x.to_le_bytes())
        }
    }
}

/// Stream a raster to disk one tile row at a time.
///
/// `source(row_off, rows)` must return `band_count * rows * width` values,
/// band-major.
pub(crate) fn write_tiled<F>(
    path: &Path,
    spec: &RasterSpec,
    compression: Compression,
    tile: usize,
    mut source: F,
) -> Result<()>
where
    F: FnMut(usize, usize) -> Result<Vec<f32>>,
{
    let (w, h, bands) = (spec.width, spec.height, spec.band_count);
    let st = spec.sample_type;
    let across = w.div_ceil(tile);
    let down = h.div_ceil(tile);
    let per_plane = across * down;
    let n_tiles = per_plane * bands;
    let raw_tile = tile * tile * st.bytes();
    // deflate output can exceed its input slightly; leave generous headroom
    let worst_case = (n_tiles as u64) * (raw_tile as u64 + raw_tile as u64 / 64 + 64) + (n_tiles as u64) * 16 + 65536;
    let big = worst_case > u32::MAX as u64 - (1 << 20);

    let file = File::create(path)?;
    let mut out = BufWriter::new(file);
    let header_len: u64 = if big { 16 } else { 8 };
    out.write_all(&vec![0u8; header_len as usize])?;
    let mut pos = header_len;

    let mut offsets = vec![0u64; n_tiles];
    let mut counts = vec![0u64; n_tiles];
    let mut scratch = Vec::with_capacity(raw_tile);

    for ty in 0..down {
        let r0 = ty * tile;
        let rows = tile.min(h - r0);
        let block = source(r0, rows)?;
        if block.len() != bands * rows * w {
            return Err(Error::ShapeMismatch(format!(
                "source returned {} values for {rows} rows, expected {}",
                block.len(),
                bands * rows * w
            )));
        }
        for b in 0..bands {
            let plane = &block[b * rows * w..(b + 1) * rows * w];
            for tx in 0..across {
                let c0 = tx * tile;
                let cols = tile.min(w - c0);
                scratch.clear();
                for r in 0..tile {
                    for c in 0..tile {
                        let v = if r < rows && c < cols { plane[r * w + c0 + c] } else { 0.0 };
                        encode_sample(v, st, spec.nodata, &mut scratch);
                    }
                }
                let payload = match compression {
                    Compression::None => std::borrow::Cow::Borrowed(&scratch[..]),
                    Compression::Deflate => {
                        let mut enc = ZlibEncoder::new(Vec::new(), flate2::Compression::default());
                        enc.write_all(&scratch)?;
                        std::borrow::Cow::Owned(enc.finish()?)
                    }
                };
                let idx = b * per_plane + ty * across + tx;
                offsets[idx] = pos;
                counts[idx] = payload.len() as u64;
                out.write_all(&payload)?;
                pos += payload.len() as u64;
            }
        }
    }

    let (sample_format, bits) = match st {
        SampleType::U8 => (1u16, 8u16),
        SampleType::U16 => (1, 16),
        SampleType::I16 => (2, 16),
        SampleType::F32 => (3, 32),
    };
    let gt = &spec.geotransform;
    let mut entries = vec![
        longs(TAG_IMAGE_WIDTH, &[w as u64], false),
        longs(TAG_IMAGE_LENGTH, &[h as u64], false),
        shorts(TAG_BITS_PER_SAMPLE, &vec![bits; bands]),
        shorts(TAG_COMPRESSION, &[compression.tiff_code()]),
        shorts(TAG_PHOTOMETRIC, &[1]),
        shorts(TAG_SAMPLES_PER_PIXEL, &[bands as u16]),
        shorts(TAG_PLANAR_CONFIG, &[2]),
        longs(TAG_TILE_WIDTH, &[tile as u64], false),
        longs(TAG_TILE_LENGTH, &[tile as u64], false),
        longs(TAG_TILE_OFFSETS, &offsets, big),
        longs(TAG_TILE_BYTE_COUNTS, &counts, big),
        shorts(TAG_SAMPLE_FORMAT, &vec![sample_format; bands]),
        doubles(TAG_MODEL_PIXEL_SCALE, &[gt.pixel_width, -gt.pixel_height, 0.0]),
        doubles(TAG_MODEL_TIEPOINT, &[0.0, 0.0, 0.0, gt.origin_x, gt.origin_y, 0.0]),
    ];
    if bands > 1 {
        entries.push(shorts(TAG_EXTRA_SAMPLES, &vec![0; bands - 1]));
    }
    if let Some(code) = epsg_code(&spec.crs_id) {
        let geographic = (4000..5000).contains(&code);
        let key = if geographic { KEY_GEOGRAPHIC_TYPE } else { KEY_PROJECTED_CS_TYPE };
        entries.push(shorts(
            TAG_GEO_KEY_DIRECTORY,
            &[
                1, 1, 0, 3,
                KEY_MODEL_TYPE, 0, 1, if geographic { 2 } else { 1 },
                KEY_RASTER_TYPE, 0, 1, 1,
                key, 0, 1, code,
            ],
        ));
    }
    if let Some(nd) = spec.nodata {
        entries.push(ascii(TAG_GDAL_NODATA, &format_nodata(nd)));
    }
    entries.sort_by_key(|e| e.tag);

    if pos % 2 == 1 {
        out.write_all(&[0])?;
        pos += 1;
    }
    let ifd_pos = pos;
    let (count_size, entry_size, inline, next_size) = if big { (8u64, 20u64, 8usize, 8u64) } else { (2, 12, 4, 4) };
    let ifd_len = count_size + entry_size * entries.len() as u64 + next_size;
    let mut data_pos = ifd_pos + ifd_len;
    let mut ifd = Vec::with_capacity(ifd_len as usize);
    let mut extra = Vec::new();
    if big {
        ifd.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    } else {
        ifd.extend_from_slice(&(entries.len() as u16).to_le_bytes());
    }
    for e in &entries {
        ifd.extend_from_slice(&e.tag.to_le_bytes());
        ifd.extend_from_slice(&e.typ.to_le_bytes());
        if big {
            ifd.extend_from_slice(&e.count.to_le_bytes());
        } else {
            ifd.extend_from_slice(&(e.count as u32).to_le_bytes());
        }
        if e.bytes.len() <= inline {
            let mut field = e.bytes.clone();
            field.resize(inline, 0);
            ifd.extend_from_slice(&field);
        } else {
            if big {
                ifd.extend_from_slice(&data_pos.to_le_bytes());
            } else {
                ifd.extend_from_slice(&(data_pos as u32).to_le_bytes());
            }
            extra.extend_from_slice(&e.bytes);
            data_pos += e.bytes.len() as u64;
            if data_pos % 2 == 1 {
                extra.push(0);
                data_pos += 1;
            }
        }
    }
    ifd.extend_from_slice(&vec![0u8; next_size as usize]);
    out.write_all(&ifd)?;
    out.write_all(&extra)?;

    out.seek(SeekFrom::Start(0))?;
    if big {
        out.write_all(b"II")?;
        out.write_all(&43u16.to_le_bytes())?;
        out.write_all(&8u16.to_le_bytes())?;
        out.write_all(&0u16.to_le_bytes())?;
        out.write_all(&ifd_pos.to_le_bytes())?;
    } else {
        out.write_all(b"II")?;
        out.write_all(&42u16.to_le_bytes())?;
        out.write_all(&(ifd_pos as u32).to_le_bytes())?;
    }
    let file = out.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    file.sync_all()?;
    Ok(())
}
