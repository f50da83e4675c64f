//! Text tables, image feature records, class prototypes and the `HGEB`
//! binary format that carries them.
//!
//! Layout (little-endian): magic `HGEB`, `u32` version (1), `u32` kind
//! (0 = text table, 1 = image record stream), `u32` count, `u32` D.
//! A text table is followed by `count × D` `f32` values. An image stream is
//! followed by `count` records of `{u32 M, h × u32 label_path, M × D f32}`.
//! The label path length `h` comes from the taxonomy, not the header.
//! Global features are never stored; they are recomputed on load.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};

use crate::error::{shape_err, HgtError, Result};
use crate::hierarchy::Taxonomy;
use crate::linalg;

pub const EMBEDDING_MAGIC: [u8; 4] = *b"HGEB";
pub const EMBEDDING_VERSION: u32 = 1;

/// Number of learnable rows appended to each spatial map by default.
pub const DEFAULT_VISUAL_PROMPTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingKind {
    TextTable = 0,
    ImageRecords = 1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingHeader {
    pub kind: EmbeddingKind,
    pub count: usize,
    pub dim: usize,
}

/// Frozen per-node text embeddings, level-major, stored raw.
#[derive(Debug, Clone, PartialEq)]
pub struct TextTable {
    pub base: Array2<f64>,
}

impl TextTable {
    pub fn new(base: Array2<f64>) -> Result<Self> {
        if !base.iter().all(|v| v.is_finite()) {
            return Err(HgtError::NaN("text table".into()));
        }
        Ok(TextTable { base })
    }

    pub fn dim(&self) -> usize {
        self.base.ncols()
    }

    pub fn len(&self) -> usize {
        self.base.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.base.nrows() == 0
    }
}

/// Spatial patch features of one image plus its pooled global feature.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFeatures {
    pub spatial: Array2<f64>,
    pub global: Array1<f64>,
    /// Per-level class index, coarsest first.
    pub label_path: Vec<usize>,
}

impl ImageFeatures {
    pub fn new(spatial: Array2<f64>, label_path: Vec<usize>) -> Result<Self> {
        let global = pool(spatial.view())?;
        Ok(ImageFeatures {
            spatial,
            global,
            label_path,
        })
    }

    pub fn leaf(&self) -> usize {
        *self.label_path.last().expect("label path is never empty")
    }
}

/// Per-class visual prototypes, one row per hierarchy node.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeTable {
    pub values: Array2<f64>,
    /// Training images behind each node (children summed for internal nodes).
    pub counts: Vec<usize>,
}

/// Mean over rows.
pub fn pool(spatial: ArrayView2<f64>) -> Result<Array1<f64>> {
    linalg::mean_rows(spatial)
}

/// Text side of the prompt approximation: `normalize(base + offsets)` row-wise.
pub fn prompt_text(base: &Array2<f64>, offsets: &Array2<f64>) -> Result<Array2<f64>> {
    if base.dim() != offsets.dim() {
        return Err(shape_err(format!(
            "text offsets {:?} vs base {:?}",
            offsets.dim(),
            base.dim()
        )));
    }
    Ok(linalg::normalize_rows((base + offsets).view())?.0)
}

/// Appends `prompts` (v×D) below the spatial map; the global feature is re-pooled.
pub fn prompt_image(image: &ImageFeatures, prompts: &Array2<f64>) -> Result<ImageFeatures> {
    let spatial = append_rows(image.spatial.view(), prompts.view())?;
    ImageFeatures::new(spatial, image.label_path.clone())
}

pub(crate) fn append_rows(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Array2<f64>> {
    if b.nrows() == 0 {
        return Ok(a.to_owned());
    }
    if a.ncols() != b.ncols() {
        return Err(shape_err(format!(
            "prompt width {} vs feature width {}",
            b.ncols(),
            a.ncols()
        )));
    }
    concatenate(Axis(0), &[a, b]).map_err(|e| shape_err(e.to_string()))
}

/// Prototypes from `(leaf index, global feature)` pairs.
///
/// Leaves get the mean of their images; every internal node gets the mean of
/// its children's prototypes, filled bottom-up.
pub fn prototypes_from_globals<'a>(
    taxonomy: &Taxonomy,
    dim: usize,
    globals: impl IntoIterator<Item = (usize, &'a Array1<f64>)>,
) -> Result<PrototypeTable> {
    let h = taxonomy.levels();
    let sizes = taxonomy.level_sizes();
    let n_leaves = sizes[h - 1];
    let mut sums = Array2::<f64>::zeros((n_leaves, dim));
    let mut leaf_counts = vec![0usize; n_leaves];
    for (leaf, g) in globals {
        if leaf >= n_leaves {
            return Err(HgtError::Data(format!("leaf label {leaf} out of range")));
        }
        if g.len() != dim {
            return Err(shape_err(format!(
                "global feature width {} vs {dim}",
                g.len()
            )));
        }
        sums.row_mut(leaf).scaled_add(1.0, g);
        leaf_counts[leaf] += 1;
    }
    let empty: Vec<String> = leaf_counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == 0)
        .map(|(j, _)| taxonomy.names(h - 1)[j].clone())
        .collect();
    if !empty.is_empty() {
        return Err(HgtError::EmptyClass(empty));
    }

    let mut level_values: Vec<Array2<f64>> = vec![Array2::zeros((0, dim)); h];
    let mut level_counts: Vec<Vec<usize>> = vec![Vec::new(); h];
    for (j, mut row) in sums.axis_iter_mut(Axis(0)).enumerate() {
        row /= leaf_counts[j] as f64;
    }
    level_values[h - 1] = sums;
    level_counts[h - 1] = leaf_counts;
    for l in (0..h - 1).rev() {
        let mut acc = Array2::<f64>::zeros((sizes[l], dim));
        let mut kids = vec![0usize; sizes[l]];
        let mut counts = vec![0usize; sizes[l]];
        for (c, &p) in taxonomy.parents(l + 1).iter().enumerate() {
            acc.row_mut(p).scaled_add(1.0, &level_values[l + 1].row(c));
            kids[p] += 1;
            counts[p] += level_counts[l + 1][c];
        }
        for (p, mut row) in acc.axis_iter_mut(Axis(0)).enumerate() {
            row /= kids[p] as f64;
        }
        level_values[l] = acc;
        level_counts[l] = counts;
    }
    let views: Vec<_> = level_values.iter().map(|a| a.view()).collect();
    let values = concatenate(Axis(0), &views).map_err(|e| shape_err(e.to_string()))?;
    Ok(PrototypeTable {
        values,
        counts: level_counts.concat(),
    })
}

/// Prototypes from training images' (unprompted) global features.
pub fn compute_prototypes(images: &[ImageFeatures], taxonomy: &Taxonomy) -> Result<PrototypeTable> {
    let dim = images
        .first()
        .map(|i| i.global.len())
        .ok_or_else(|| HgtError::EmptyInput("no training images".into()))?;
    prototypes_from_globals(taxonomy, dim, images.iter().map(|i| (i.leaf(), &i.global)))
}

fn eof_as_shape(e: io::Error) -> HgtError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        shape_err("payload shorter than header declares")
    } else {
        HgtError::Io(e)
    }
}

pub fn read_header(r: &mut impl Read) -> Result<EmbeddingHeader> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| HgtError::Format("file too short for header".into()))?;
    if magic != EMBEDDING_MAGIC {
        return Err(HgtError::Format(format!("bad magic {magic:?}")));
    }
    let mut field = || {
        r.read_u32::<LittleEndian>()
            .map_err(|_| HgtError::Format("truncated header".into()))
    };
    let version = field()?;
    if version != EMBEDDING_VERSION {
        return Err(HgtError::Format(format!("unsupported version {version}")));
    }
    let kind = match field()? {
        0 => EmbeddingKind::TextTable,
        1 => EmbeddingKind::ImageRecords,
        k => return Err(HgtError::Format(format!("unknown kind {k}"))),
    };
    let count = field()? as usize;
    let dim = field()? as usize;
    if dim == 0 {
        return Err(shape_err("embedding width D must be positive"));
    }
    Ok(EmbeddingHeader { kind, count, dim })
}

fn write_header(w: &mut impl Write, h: EmbeddingHeader) -> Result<()> {
    w.write_all(&EMBEDDING_MAGIC)?;
    w.write_u32::<LittleEndian>(EMBEDDING_VERSION)?;
    w.write_u32::<LittleEndian>(h.kind as u32)?;
    w.write_u32::<LittleEndian>(to_u32(h.count)?)?;
    w.write_u32::<LittleEndian>(to_u32(h.dim)?)?;
    Ok(())
}

fn to_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| HgtError::Range(format!("{n} does not fit in u32")))
}

fn read_matrix(r: &mut impl Read, rows: usize, cols: usize) -> Result<Array2<f64>> {
    let mut buf = vec![0f32; rows * cols];
    r.read_f32_into::<LittleEndian>(&mut buf)
        .map_err(eof_as_shape)?;
    Ok(
        Array2::from_shape_vec((rows, cols), buf.into_iter().map(f64::from).collect())
            .expect("buffer sized from shape"),
    )
}

fn write_matrix(w: &mut impl Write, m: ArrayView2<f64>) -> Result<()> {
    for &v in m.iter() {
        w.write_f32::<LittleEndian>(v as f32)?;
    }
    Ok(())
}

fn expect_eof(r: &mut impl Read) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(shape_err("trailing bytes after declared payload")),
    }
}

pub fn read_text_table(r: &mut impl Read) -> Result<TextTable> {
    let h = read_header(r)?;
    if h.kind != EmbeddingKind::TextTable {
        return Err(HgtError::Format("expected a text table (kind 0)".into()));
    }
    let base = read_matrix(r, h.count, h.dim)?;
    expect_eof(r)?;
    TextTable::new(base)
}

pub fn write_text_table(w: &mut impl Write, table: ArrayView2<f64>) -> Result<()> {
    write_header(
        w,
        EmbeddingHeader {
            kind: EmbeddingKind::TextTable,
            count: table.nrows(),
            dim: table.ncols(),
        },
    )?;
    write_matrix(w, table)
}

/// Reads an image record stream whose label paths have `levels` entries.
pub fn read_image_records(r: &mut impl Read, levels: usize) -> Result<(usize, Vec<ImageFeatures>)> {
    let h = read_header(r)?;
    if h.kind != EmbeddingKind::ImageRecords {
        return Err(HgtError::Format(
            "expected an image record stream (kind 1)".into(),
        ));
    }
    let mut out = Vec::with_capacity(h.count.min(1 << 16));
    for _ in 0..h.count {
        let m = r.read_u32::<LittleEndian>().map_err(eof_as_shape)? as usize;
        if m == 0 {
            return Err(HgtError::EmptyInput(
                "image record with zero spatial rows".into(),
            ));
        }
        let mut path = vec![0u32; levels];
        r.read_u32_into::<LittleEndian>(&mut path)
            .map_err(eof_as_shape)?;
        let spatial = read_matrix(r, m, h.dim)?;
        if !spatial.iter().all(|v| v.is_finite()) {
            return Err(HgtError::NaN("image record".into()));
        }
        out.push(ImageFeatures::new(
            spatial,
            path.into_iter().map(|p| p as usize).collect(),
        )?);
    }
    expect_eof(r)?;
    Ok((h.dim, out))
}

pub fn write_image_records(w: &mut impl Write, dim: usize, images: &[ImageFeatures]) -> Result<()> {
    write_header(
        w,
        EmbeddingHeader {
            kind: EmbeddingKind::ImageRecords,
            count: images.len(),
            dim,
        },
    )?;
    for img in images {
        if img.spatial.ncols() != dim {
            return Err(shape_err(format!(
                "record width {} vs {dim}",
                img.spatial.ncols()
            )));
        }
        w.write_u32::<LittleEndian>(to_u32(img.spatial.nrows())?)?;
        for &p in &img.label_path {
            w.write_u32::<LittleEndian>(to_u32(p)?)?;
        }
        write_matrix(w, img.spatial.view())?;
    }
    Ok(())
}

/// Contents of an embedding file of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Embeddings {
    Text(TextTable),
    Images {
        dim: usize,
        records: Vec<ImageFeatures>,
    },
}

/// Loads either kind of embedding file; `levels` sizes the label paths of image records.
pub fn load_embeddings(path: impl AsRef<Path>, levels: usize) -> Result<Embeddings> {
    let bytes = std::fs::read(path)?;
    let header = read_header(&mut bytes.as_slice())?;
    let mut r = bytes.as_slice();
    match header.kind {
        EmbeddingKind::TextTable => Ok(Embeddings::Text(read_text_table(&mut r)?)),
        EmbeddingKind::ImageRecords => {
            let (dim, records) = read_image_records(&mut r, levels)?;
            Ok(Embeddings::Images { dim, records })
        }
    }
}

pub fn load_text_table(path: impl AsRef<Path>) -> Result<TextTable> {
    read_text_table(&mut BufReader::new(File::open(path)?))
}

pub fn load_image_records(
    path: impl AsRef<Path>,
    levels: usize,
) -> Result<(usize, Vec<ImageFeatures>)> {
    read_image_records(&mut BufReader::new(File::open(path)?), levels)
}

pub fn save_text_table(path: impl AsRef<Path>, table: ArrayView2<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_text_table(&mut w, table)?;
    w.flush()?;
    Ok(())
}

pub fn save_image_records(
    path: impl AsRef<Path>,
    dim: usize,
    images: &[ImageFeatures],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_image_records(&mut w, dim, images)?;
    w.flush()?;
    Ok(())
}
