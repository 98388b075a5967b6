//! Self-describing binary container for fitted stacks.
//!
//! Layout (little-endian): magic `DANM`, format version `u32`, model type
//! tag `u32` (1 = DAN, 2 = K-DAN), the model payload, then an optional
//! standardizer. Matrices are written as `u64` rows, `u64` cols and the
//! row-major `f64` values, so a round trip is bit-exact.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::dan::{DanConfig, DanModel, FineTune, FtClassifier};
use crate::data::Standardizer;
use crate::error::{Error, Result};
use crate::kdan::{KdanConfig, KdanModel};
use crate::matrix::Matrix;
use crate::regression::SolveMode;
use crate::theory::Layerwise;

pub const MAGIC: [u8; 4] = *b"DANM";
pub const FORMAT_VERSION: u32 = 1;
const TAG_DAN: u32 = 1;
const TAG_KDAN: u32 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Dan(DanModel),
    Kdan(KdanModel),
}

impl AnyModel {
    pub fn input_dim(&self) -> usize {
        match self {
            AnyModel::Dan(m) => m.input_dim,
            AnyModel::Kdan(m) => m.input_dim,
        }
    }

    pub fn class_count(&self) -> usize {
        match self {
            AnyModel::Dan(m) => m.class_count,
            AnyModel::Kdan(m) => m.class_count,
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            AnyModel::Dan(m) => m.depth(),
            AnyModel::Kdan(m) => m.depth(),
        }
    }

    pub fn forward_batch(&self, x: &Matrix) -> Result<crate::dan::Forward> {
        match self {
            AnyModel::Dan(m) => m.forward_batch(x),
            AnyModel::Kdan(m) => m.forward_batch(x),
        }
    }
}

impl Layerwise for AnyModel {
    fn class_count(&self) -> usize {
        AnyModel::class_count(self)
    }

    fn trace(&self, x: &Matrix) -> Result<crate::dan::StackTrace> {
        Ok(self.forward_batch(x)?.trace)
    }
}

/// A fitted model together with the feature scaling it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: AnyModel,
    pub standardizer: Option<Standardizer>,
}

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        Ok(self.0.write_u8(v)?)
    }
    fn flag(&mut self, v: bool) -> Result<()> {
        self.u8(u8::from(v))
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        Ok(self.0.write_u32::<LittleEndian>(v)?)
    }
    fn len(&mut self, v: usize) -> Result<()> {
        Ok(self.0.write_u64::<LittleEndian>(v as u64)?)
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        Ok(self.0.write_f64::<LittleEndian>(v)?)
    }
    fn f64s(&mut self, v: &[f64]) -> Result<()> {
        self.len(v.len())?;
        v.iter().try_for_each(|&x| self.f64(x))
    }
    fn matrix(&mut self, m: &Matrix) -> Result<()> {
        self.len(m.rows())?;
        self.len(m.cols())?;
        m.as_slice().iter().try_for_each(|&x| self.f64(x))
    }
}

struct Reader<R: Read>(R);

fn model_err(what: &str) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Model(format!("truncated or unreadable {what}: {e}"))
}

impl<R: Read> Reader<R> {
    fn u8(&mut self) -> Result<u8> {
        self.0.read_u8().map_err(model_err("byte"))
    }
    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(Error::Model(format!("invalid flag byte {b}"))),
        }
    }
    fn u32(&mut self) -> Result<u32> {
        self.0.read_u32::<LittleEndian>().map_err(model_err("u32"))
    }
    fn len(&mut self) -> Result<usize> {
        let v = self.0.read_u64::<LittleEndian>().map_err(model_err("length"))?;
        usize::try_from(v).map_err(|_| Error::Model(format!("length {v} does not fit in memory")))
    }
    fn f64(&mut self) -> Result<f64> {
        self.0.read_f64::<LittleEndian>().map_err(model_err("f64"))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn matrix(&mut self) -> Result<Matrix> {
        let rows = self.len()?;
        let cols = self.len()?;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Model(format!("matrix {rows}x{cols} overflows")))?;
        let mut bytes = vec![0u8; n.checked_mul(8).ok_or_else(|| Error::Model("matrix too large".into()))?];
        self.0.read_exact(&mut bytes).map_err(model_err("matrix"))?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Matrix::new(rows, cols, data).map_err(|e| Error::Model(format!("bad matrix: {e}")))
    }
}

fn write_ft<W: Write>(w: &mut Writer<W>, ft: &Option<FineTune>) -> Result<()> {
    w.flag(ft.is_some())?;
    if let Some(ft) = ft {
        w.matrix(&ft.weights)?;
        w.f64(ft.lambda)?;
        w.f64(ft.beta)?;
        w.flag(ft.reference.is_some())?;
        if let Some((refs, labels)) = &ft.reference {
            w.matrix(refs)?;
            w.len(labels.len())?;
            labels.iter().try_for_each(|&l| w.len(l))?;
        }
    }
    Ok(())
}

fn read_ft<R: Read>(r: &mut Reader<R>) -> Result<Option<FineTune>> {
    if !r.flag()? {
        return Ok(None);
    }
    let weights = r.matrix()?;
    let lambda = r.f64()?;
    let beta = r.f64()?;
    let reference = if r.flag()? {
        let refs = r.matrix()?;
        let n = r.len()?;
        let labels = (0..n).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
        if labels.len() != refs.rows() || labels.iter().any(|&l| l >= weights.cols()) {
            return Err(Error::Model("nearest-neighbor references do not match their labels".into()));
        }
        Some((refs, labels))
    } else {
        None
    };
    Ok(Some(FineTune {
        weights,
        lambda,
        beta,
        reference,
    }))
}

fn write_dan<W: Write>(w: &mut Writer<W>, m: &DanModel) -> Result<()> {
    w.len(m.input_dim)?;
    w.len(m.class_count)?;
    let c = &m.config;
    w.len(c.depth)?;
    w.f64(c.lambda_layer)?;
    w.f64s(&c.layer_lambdas)?;
    w.f64(c.lambda_ft)?;
    w.f64(c.beta_ft)?;
    w.flag(c.relu_enabled)?;
    w.flag(c.ft_enabled)?;
    w.u8(match c.ft_classifier {
        FtClassifier::Regression => 0,
        FtClassifier::NearestNeighbor => 1,
    })?;
    w.len(m.layer_weights.len())?;
    for (wt, mode) in m.layer_weights.iter().zip(&m.layer_modes) {
        w.u8(match mode {
            SolveMode::Primal => 0,
            SolveMode::Dual => 1,
        })?;
        w.matrix(wt)?;
    }
    write_ft(w, &m.ft)
}

fn read_dan<R: Read>(r: &mut Reader<R>) -> Result<DanModel> {
    let input_dim = r.len()?;
    let class_count = r.len()?;
    let depth = r.len()?;
    let lambda_layer = r.f64()?;
    let layer_lambdas = r.f64s()?;
    let lambda_ft = r.f64()?;
    let beta_ft = r.f64()?;
    let relu_enabled = r.flag()?;
    let ft_enabled = r.flag()?;
    let ft_classifier = match r.u8()? {
        0 => FtClassifier::Regression,
        1 => FtClassifier::NearestNeighbor,
        b => return Err(Error::Model(format!("unknown FT classifier tag {b}"))),
    };
    let config = DanConfig {
        depth,
        lambda_layer,
        layer_lambdas,
        lambda_ft,
        beta_ft,
        relu_enabled,
        ft_enabled,
        ft_classifier,
    };
    config.validate().map_err(|e| Error::Model(format!("stored config is invalid: {e}")))?;
    let n = r.len()?;
    if n != depth {
        return Err(Error::Model(format!("{n} layers stored for depth {depth}")));
    }
    let mut layer_weights = Vec::with_capacity(n);
    let mut layer_modes = Vec::with_capacity(n);
    for layer in 1..=n {
        layer_modes.push(match r.u8()? {
            0 => SolveMode::Primal,
            1 => SolveMode::Dual,
            b => return Err(Error::Model(format!("unknown solve mode tag {b}"))),
        });
        let w = r.matrix()?;
        let width = crate::dan::layer_width(input_dim, class_count, layer);
        if w.shape() != (width, class_count) {
            return Err(Error::Model(format!(
                "layer {layer} weights are {:?}, expected ({width}, {class_count})",
                w.shape()
            )));
        }
        layer_weights.push(w);
    }
    let ft = read_ft(r)?;
    if ft.is_some() != ft_enabled {
        return Err(Error::Model("FT weights do not match the FT flag".into()));
    }
    if let Some(f) = &ft {
        if f.weights.shape() != (depth * class_count, class_count) {
            return Err(Error::Model(format!("FT weights are {:?}", f.weights.shape())));
        }
    }
    Ok(DanModel {
        layer_weights,
        layer_modes,
        ft,
        config,
        input_dim,
        class_count,
    })
}

fn write_kdan<W: Write>(w: &mut Writer<W>, m: &KdanModel) -> Result<()> {
    w.len(m.input_dim)?;
    w.len(m.class_count)?;
    let c = &m.config;
    w.len(c.depth)?;
    w.f64(c.lambda_layer)?;
    w.f64(c.gamma_layer)?;
    w.f64(c.lambda_ft)?;
    w.f64(c.beta_ft)?;
    w.flag(c.trim)?;
    w.matrix(&m.stack)?;
    w.len(m.dual_coeffs.len())?;
    m.dual_coeffs.iter().try_for_each(|a| w.matrix(a))?;
    write_ft(w, &m.ft)
}

fn read_kdan<R: Read>(r: &mut Reader<R>) -> Result<KdanModel> {
    let input_dim = r.len()?;
    let class_count = r.len()?;
    let config = KdanConfig {
        depth: r.len()?,
        lambda_layer: r.f64()?,
        gamma_layer: r.f64()?,
        lambda_ft: r.f64()?,
        beta_ft: r.f64()?,
        trim: r.flag()?,
    };
    config.validate().map_err(|e| Error::Model(format!("stored config is invalid: {e}")))?;
    let stack = r.matrix()?;
    if stack.cols() != crate::dan::layer_width(input_dim, class_count, config.depth) {
        return Err(Error::Model(format!("stored stack has {} columns", stack.cols())));
    }
    let n = r.len()?;
    if n != config.depth {
        return Err(Error::Model(format!("{n} layers stored for depth {}", config.depth)));
    }
    let dual_coeffs = (0..n).map(|_| r.matrix()).collect::<Result<Vec<_>>>()?;
    if dual_coeffs.iter().any(|a| a.shape() != (stack.rows(), class_count)) {
        return Err(Error::Model("dual coefficients do not match the stored stack".into()));
    }
    let ft = read_ft(r)?;
    if ft.is_some() == config.trim {
        return Err(Error::Model("FT weights do not match the trim flag".into()));
    }
    Ok(KdanModel {
        stack,
        dual_coeffs,
        ft,
        config,
        input_dim,
        class_count,
    })
}

pub fn write_model<W: Write>(out: W, file: &ModelFile) -> Result<()> {
    let mut w = Writer(out);
    w.0.write_all(&MAGIC)?;
    w.u32(FORMAT_VERSION)?;
    match &file.model {
        AnyModel::Dan(m) => {
            w.u32(TAG_DAN)?;
            write_dan(&mut w, m)?;
        }
        AnyModel::Kdan(m) => {
            w.u32(TAG_KDAN)?;
            write_kdan(&mut w, m)?;
        }
    }
    w.flag(file.standardizer.is_some())?;
    if let Some(s) = &file.standardizer {
        w.f64s(&s.mean)?;
        w.f64s(&s.std)?;
        w.len(s.constant.len())?;
        s.constant.iter().try_for_each(|&c| w.flag(c))?;
    }
    w.0.flush()?;
    Ok(())
}

pub fn read_model<R: Read>(input: R) -> Result<ModelFile> {
    let mut r = Reader(input);
    let mut magic = [0u8; 4];
    r.0.read_exact(&mut magic).map_err(model_err("magic"))?;
    if magic != MAGIC {
        return Err(Error::Model(format!("not a model file (magic {magic:?})")));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Model(format!("format version {version}, this build reads {FORMAT_VERSION}")));
    }
    let model = match r.u32()? {
        TAG_DAN => AnyModel::Dan(read_dan(&mut r)?),
        TAG_KDAN => AnyModel::Kdan(read_kdan(&mut r)?),
        t => return Err(Error::Model(format!("unknown model type tag {t}"))),
    };
    let standardizer = if r.flag()? {
        let mean = r.f64s()?;
        let std = r.f64s()?;
        let n = r.len()?;
        let constant = (0..n).map(|_| r.flag()).collect::<Result<Vec<_>>>()?;
        if mean.len() != model.input_dim() || std.len() != mean.len() || constant.len() != mean.len() {
            return Err(Error::Model("standardizer does not match the model input".into()));
        }
        Some(Standardizer { mean, std, constant })
    } else {
        None
    };
    let mut rest = [0u8; 1];
    if r.0.read(&mut rest)? != 0 {
        return Err(Error::Model("trailing bytes after model".into()));
    }
    Ok(ModelFile { model, standardizer })
}

pub fn to_bytes(file: &ModelFile) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_model(&mut buf, file)?;
    Ok(buf)
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelFile> {
    read_model(bytes)
}

/// Writes to a sibling temporary file and renames it into place, so a
/// failed write never leaves a truncated model at `path`.
pub fn save(path: impl AsRef<Path>, file: &ModelFile) -> Result<()> {
    let path = path.as_ref();
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let result = (|| {
        let mut out = BufWriter::new(File::create(&tmp)?);
        write_model(&mut out, file)?;
        out.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

pub fn load(path: impl AsRef<Path>) -> Result<ModelFile> {
    read_model(BufReader::new(File::open(path)?))
}
