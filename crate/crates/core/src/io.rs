//! Flat-file formats.
//!
//! Feature file (`PHF1`), little-endian:
//!
//! ```text
//! magic "PHF1" | version u16 | tag_len u16 | tag bytes | dim u32 | count u32 | n_classes u32
//! count x ( place_id u64 | frame_index u64 | dim x f32 | n_classes x f32 )
//! ```
//!
//! Signature file (`PHS1`), little-endian:
//!
//! ```text
//! magic "PHS1" | hasher_id u64 | length_bits u32 | count u32
//! count x ( place_id u64 | frame_index u64 | length_bits/64 x u64 )
//! ```

use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{BitSignature, DatasetManifest, FeatureVector, GroundTruth, PlaceRecord};

pub const FEATURE_MAGIC: &[u8; 4] = b"PHF1";
pub const SIGNATURE_MAGIC: &[u8; 4] = b"PHS1";
pub const FEATURE_FORMAT_VERSION: u16 = 1;

/// Fixed part of the feature-file header, excluding the layer tag bytes.
pub const FEATURE_HEADER_FIXED: usize = 4 + 2 + 2 + 4 + 4 + 4;

pub fn write_feature_file(records: &[PlaceRecord], path: impl AsRef<Path>) -> Result<()> {
    let first = records
        .first()
        .ok_or_else(|| Error::InvalidInput("cannot write an empty feature file".into()))?;
    let first_feature = feature_of(first)?;
    let dim = first_feature.dim();
    let layer_tag = first_feature.layer_tag();
    let n_classes = first.class_probs.as_ref().map_or(0, Vec::len);

    for r in records {
        let f = feature_of(r)?;
        if f.dim() != dim {
            return Err(Error::dims(dim, f.dim()));
        }
        if f.layer_tag() != layer_tag {
            return Err(Error::InvalidInput(format!(
                "mixed layer tags {layer_tag:?} and {:?}",
                f.layer_tag()
            )));
        }
        let nc = r.class_probs.as_ref().map_or(0, Vec::len);
        if nc != n_classes {
            return Err(Error::dims(n_classes, nc));
        }
        r.validate()?;
    }
    let tag_len = u16::try_from(layer_tag.len())
        .map_err(|_| Error::InvalidInput("layer tag longer than 65535 bytes".into()))?;

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&FEATURE_FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&tag_len.to_le_bytes())?;
    w.write_all(layer_tag.as_bytes())?;
    w.write_all(&to_u32(dim)?.to_le_bytes())?;
    w.write_all(&to_u32(records.len())?.to_le_bytes())?;
    w.write_all(&to_u32(n_classes)?.to_le_bytes())?;
    for r in records {
        w.write_all(&r.place_id.to_le_bytes())?;
        w.write_all(&r.frame_index.to_le_bytes())?;
        write_f32s(&mut w, feature_of(r)?.values())?;
        if let Some(p) = &r.class_probs {
            write_f32s(&mut w, p)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<Vec<PlaceRecord>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != FEATURE_MAGIC {
        return Err(Error::format(format!("bad magic {:?}", String::from_utf8_lossy(&magic))));
    }
    let version = read_u16(&mut r)?;
    if version != FEATURE_FORMAT_VERSION {
        return Err(Error::format(format!("unsupported format version {version}")));
    }
    let tag_len = read_u16(&mut r)? as usize;
    let mut tag = vec![0u8; tag_len];
    read_exact(&mut r, &mut tag)?;
    let layer_tag = String::from_utf8(tag).map_err(|_| Error::format("layer tag is not UTF-8"))?;
    let dim = read_u32(&mut r)? as usize;
    let count = read_u32(&mut r)? as usize;
    let n_classes = read_u32(&mut r)? as usize;
    if dim == 0 {
        return Err(Error::format("dim is zero"));
    }

    let mut seen = HashSet::with_capacity(count);
    let mut records = Vec::with_capacity(count.min(1 << 20));
    let mut buf = vec![0u8; dim * 4];
    for _ in 0..count {
        let place_id = read_u64(&mut r)?;
        let frame_index = read_u64(&mut r)?;
        if !seen.insert(place_id) {
            return Err(Error::DuplicatePlaceId(place_id));
        }
        let values = read_f32s(&mut r, &mut buf, dim)?;
        let mut record = PlaceRecord::with_feature(place_id, frame_index, FeatureVector::new(values, layer_tag.clone())?);
        if n_classes > 0 {
            let mut pbuf = vec![0u8; n_classes * 4];
            let probs = read_f32s(&mut r, &mut pbuf, n_classes)?;
            record = record.set_class_probs(probs)?;
        }
        records.push(record);
    }
    expect_eof(&mut r)?;
    Ok(records)
}

/// Contents of a signature file.
#[derive(Debug, Clone, PartialEq)]
pub struct SignatureFile {
    pub hasher_id: u64,
    pub length_bits: usize,
    pub records: Vec<PlaceRecord>,
}

pub fn write_signature_file(
    path: impl AsRef<Path>,
    hasher_id: u64,
    length_bits: usize,
    records: &[PlaceRecord],
) -> Result<()> {
    if length_bits == 0 || !length_bits.is_multiple_of(64) {
        return Err(Error::InvalidBitLength(length_bits));
    }
    for r in records {
        let sig = signature_of(r)?;
        if sig.hasher_id() != hasher_id {
            return Err(Error::IncomparableSignatures {
                left: hasher_id,
                right: sig.hasher_id(),
            });
        }
        if sig.length_bits() != length_bits {
            return Err(Error::dims(length_bits, sig.length_bits()));
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(SIGNATURE_MAGIC)?;
    w.write_all(&hasher_id.to_le_bytes())?;
    w.write_all(&to_u32(length_bits)?.to_le_bytes())?;
    w.write_all(&to_u32(records.len())?.to_le_bytes())?;
    for r in records {
        w.write_all(&r.place_id.to_le_bytes())?;
        w.write_all(&r.frame_index.to_le_bytes())?;
        for word in signature_of(r)?.words() {
            w.write_all(&word.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_signature_file(path: impl AsRef<Path>) -> Result<SignatureFile> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != SIGNATURE_MAGIC {
        return Err(Error::format(format!("bad magic {:?}", String::from_utf8_lossy(&magic))));
    }
    let hasher_id = read_u64(&mut r)?;
    let length_bits = read_u32(&mut r)? as usize;
    let count = read_u32(&mut r)? as usize;
    if length_bits == 0 || !length_bits.is_multiple_of(64) {
        return Err(Error::format(format!("length_bits {length_bits} is not a multiple of 64")));
    }
    let n_words = length_bits / 64;
    let mut seen = HashSet::with_capacity(count);
    let mut records = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let place_id = read_u64(&mut r)?;
        let frame_index = read_u64(&mut r)?;
        if !seen.insert(place_id) {
            return Err(Error::DuplicatePlaceId(place_id));
        }
        let words = (0..n_words).map(|_| read_u64(&mut r)).collect::<Result<Vec<_>>>()?;
        records.push(PlaceRecord::with_signature(
            place_id,
            frame_index,
            BitSignature::from_words(words, hasher_id)?,
        ));
    }
    expect_eof(&mut r)?;
    Ok(SignatureFile {
        hasher_id,
        length_bits,
        records,
    })
}

/// Reads a two-column `query_frame,reference_frame` CSV. A non-numeric
/// first row is treated as a header.
pub fn read_ground_truth(path: impl AsRef<Path>, tolerance_frames: u32) -> Result<GroundTruth> {
    if !crate::model::TOLERANCE_RANGE.contains(&tolerance_frames) {
        return Err(Error::InvalidTolerance(tolerance_frames));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_path(path)?;
    let mut pairs = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row?;
        if row.len() != 2 {
            return Err(Error::format(format!(
                "ground truth line {}: expected 2 columns, found {}",
                line + 1,
                row.len()
            )));
        }
        let parsed = (row[0].parse::<u64>(), row[1].parse::<u64>());
        match parsed {
            (Ok(q), Ok(r)) => pairs.push((q, r)),
            _ if line == 0 => continue,
            _ => {
                return Err(Error::format(format!(
                    "ground truth line {}: non-integer entry",
                    line + 1
                )))
            }
        }
    }
    GroundTruth::new(pairs, tolerance_frames)
}

pub fn write_ground_truth(gt: &GroundTruth, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["query_frame", "reference_frame"])?;
    for (q, r) in gt.pairs() {
        w.write_record([q.to_string(), r.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, manifest)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let r = BufReader::new(File::open(path)?);
    Ok(serde_json::from_reader(r)?)
}

/// Checks a manifest against the records of its feature file.
pub fn check_manifest(manifest: &DatasetManifest, records: &[PlaceRecord]) -> Result<()> {
    if manifest.count != records.len() {
        return Err(Error::format(format!(
            "manifest count {} but feature file holds {} records",
            manifest.count,
            records.len()
        )));
    }
    if let Some(first) = records.first().and_then(|r| r.feature.as_ref()) {
        if first.dim() != manifest.dim {
            return Err(Error::dims(manifest.dim, first.dim()));
        }
    }
    if let (Some(names), Some(probs)) = (&manifest.class_names, records.first().and_then(|r| r.class_probs.as_ref())) {
        if names.len() != probs.len() {
            return Err(Error::dims(names.len(), probs.len()));
        }
    }
    Ok(())
}

fn feature_of(r: &PlaceRecord) -> Result<&FeatureVector> {
    r.feature
        .as_ref()
        .ok_or_else(|| Error::InvalidFeature(format!("place {} has no feature vector", r.place_id)))
}

fn signature_of(r: &PlaceRecord) -> Result<&BitSignature> {
    r.signature
        .as_ref()
        .ok_or_else(|| Error::InvalidInput(format!("place {} has no signature", r.place_id)))
}

fn to_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::InvalidInput(format!("{n} does not fit in u32")))
}

fn write_f32s(w: &mut impl Write, values: &[f32]) -> io::Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::format("truncated file"),
        _ => Error::Io(e),
    })
}

fn read_u16(r: &mut impl Read) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f32s(r: &mut impl Read, buf: &mut [u8], n: usize) -> Result<Vec<f32>> {
    let buf = &mut buf[..n * 4];
    read_exact(r, buf)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn expect_eof(r: &mut impl Read) -> Result<()> {
    let mut b = [0u8; 1];
    match r.read(&mut b)? {
        0 => Ok(()),
        _ => Err(Error::format("trailing bytes after last record")),
    }
}
