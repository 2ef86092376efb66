//! Reading and writing the `.npy` array container (version 1.0, little-endian,
//! C order). This is the wire format shared with feature extractors.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const ALIGN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    U8,
    I32,
}

impl Dtype {
    pub fn descr(self) -> &'static str {
        match self {
            Dtype::F32 => "<f4",
            Dtype::U8 => "|u1",
            Dtype::I32 => "<i4",
        }
    }

    pub fn from_descr(descr: &str) -> Result<Self> {
        match descr {
            "<f4" => Ok(Dtype::F32),
            "|u1" | "<u1" => Ok(Dtype::U8),
            "<i4" => Ok(Dtype::I32),
            other => Err(Error::UnsupportedDtype(other.to_string())),
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 | Dtype::I32 => 4,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Debug, Clone)]
pub enum ArrayData {
    F32(Vec<f32>),
    U8(Vec<u8>),
    I32(Vec<i32>),
}

impl ArrayData {
    pub fn dtype(&self) -> Dtype {
        match self {
            ArrayData::F32(_) => Dtype::F32,
            ArrayData::U8(_) => Dtype::U8,
            ArrayData::I32(_) => Dtype::I32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::U8(v) => v.len(),
            ArrayData::I32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

// Float payloads compare by bit pattern so that round trips are checked
// bit-exactly (NaN payloads included).
impl PartialEq for ArrayData {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (ArrayData::F32(a), ArrayData::F32(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (ArrayData::U8(a), ArrayData::U8(b)) => a == b,
            (ArrayData::I32(a), ArrayData::I32(b)) => a == b,
            _ => false,
        }
    }
}

/// A dense row-major array together with its shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayFile {
    shape: Vec<usize>,
    data: ArrayData,
}

impl ArrayFile {
    pub fn new(shape: Vec<usize>, data: ArrayData) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn from_f32(shape: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        Self::new(shape, ArrayData::F32(values))
    }

    pub fn from_u8(shape: Vec<usize>, values: Vec<u8>) -> Result<Self> {
        Self::new(shape, ArrayData::U8(values))
    }

    pub fn from_i32(shape: Vec<usize>, values: Vec<i32>) -> Result<Self> {
        Self::new(shape, ArrayData::I32(values))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> Dtype {
        self.data.dtype()
    }

    pub fn data(&self) -> &ArrayData {
        &self.data
    }

    pub fn into_data(self) -> ArrayData {
        self.data
    }

    /// Values as `f32`; only float32 arrays convert.
    pub fn into_f32(self) -> Result<Vec<f32>> {
        match self.data {
            ArrayData::F32(v) => Ok(v),
            other => Err(Error::UnsupportedDtype(format!(
                "{} where float32 was required",
                other.dtype().descr()
            ))),
        }
    }

    /// Integer payloads widened to `i64` (label maps may be stored as
    /// uint8 or int32).
    pub fn to_i64(&self) -> Result<Vec<i64>> {
        match &self.data {
            ArrayData::U8(v) => Ok(v.iter().map(|&x| x as i64).collect()),
            ArrayData::I32(v) => Ok(v.iter().map(|&x| x as i64).collect()),
            ArrayData::F32(_) => Err(Error::UnsupportedDtype(
                "<f4 where an integer array was required".into(),
            )),
        }
    }

    /// Serialize to the exact on-disk byte layout.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.shape.is_empty() {
            return Err(Error::shape("array shape must have at least one dimension"));
        }
        let header = header_text(self.dtype(), &self.shape);
        let mut out = Vec::with_capacity(header.len() + 10 + self.data.len() * self.dtype().size());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&[1, 0]);
        out.extend_from_slice(&(header.len() as u16).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        match &self.data {
            ArrayData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::U8(v) => out.extend_from_slice(v),
            ArrayData::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::parse(bytes, Path::new("<memory>"))
    }

    fn parse(bytes: &[u8], origin: &Path) -> Result<Self> {
        let header = parse_preamble(bytes, origin)?;
        let payload = &bytes[header.data_offset..];
        let count: usize = header.shape.iter().product();
        let expected = count * header.dtype.size();
        if payload.len() < expected {
            return Err(Error::TruncatedData {
                expected,
                found: payload.len(),
            });
        }
        let payload = &payload[..expected];
        let data = match header.dtype {
            Dtype::F32 => ArrayData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
            Dtype::U8 => ArrayData::U8(payload.to_vec()),
            Dtype::I32 => ArrayData::I32(
                payload
                    .chunks_exact(4)
                    .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
        };
        Ok(Self {
            shape: header.shape,
            data,
        })
    }
}

/// Parsed header of an array file, without its payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArrayHeader {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub data_offset: usize,
}

fn header_text(dtype: Dtype, shape: &[usize]) -> String {
    let dims = match shape {
        [single] => format!("({},)", single),
        _ => format!(
            "({})",
            shape
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        ),
    };
    let mut text = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
        dtype.descr(),
        dims
    );
    // magic(6) + version(2) + length(2) + text + '\n' is a multiple of 64
    let unpadded = 10 + text.len() + 1;
    let padding = (ALIGN - unpadded % ALIGN) % ALIGN;
    text.extend(std::iter::repeat_n(' ', padding));
    text.push('\n');
    text
}

fn parse_preamble(bytes: &[u8], origin: &Path) -> Result<ArrayHeader> {
    if bytes.len() < 8 || &bytes[..6] != MAGIC {
        return Err(Error::BadMagic(origin.to_path_buf()));
    }
    let (len, start) = match bytes[6] {
        1 => {
            if bytes.len() < 10 {
                return Err(Error::HeaderParse("truncated header length".into()));
            }
            (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10)
        }
        2 | 3 => {
            if bytes.len() < 12 {
                return Err(Error::HeaderParse("truncated header length".into()));
            }
            (
                u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize,
                12,
            )
        }
        v => return Err(Error::HeaderParse(format!("unsupported format version {v}"))),
    };
    let end = start + len;
    if bytes.len() < end {
        return Err(Error::HeaderParse("header extends past end of file".into()));
    }
    let text = std::str::from_utf8(&bytes[start..end])
        .map_err(|_| Error::HeaderParse("header is not valid text".into()))?;
    let (dtype, shape) = parse_dict(text)?;
    Ok(ArrayHeader {
        dtype,
        shape,
        data_offset: end,
    })
}

fn parse_dict(text: &str) -> Result<(Dtype, Vec<usize>)> {
    let body = text
        .trim()
        .strip_prefix('{')
        .and_then(|t| t.strip_suffix('}'))
        .ok_or_else(|| Error::HeaderParse("header is not a dict literal".into()))?;

    let descr = dict_value(body, "descr")?;
    let descr = descr
        .trim()
        .trim_matches(|c| c == '\'' || c == '"')
        .to_string();
    let fortran = dict_value(body, "fortran_order")?;
    match fortran.trim() {
        "False" => {}
        "True" => return Err(Error::HeaderParse("fortran_order arrays are not supported".into())),
        other => return Err(Error::HeaderParse(format!("bad fortran_order `{other}`"))),
    }
    let shape_text = dict_value(body, "shape")?;
    let inner = shape_text
        .trim()
        .strip_prefix('(')
        .and_then(|t| t.strip_suffix(')'))
        .ok_or_else(|| Error::HeaderParse(format!("bad shape `{shape_text}`")))?;
    let shape = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| Error::HeaderParse(format!("bad dimension `{s}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    let dtype = Dtype::from_descr(&descr)?;
    Ok((dtype, shape))
}

/// Extract the raw text of a value from a flat python dict literal. Shapes are
/// the only nested syntax, so tracking parentheses is enough.
fn dict_value<'a>(body: &'a str, key: &str) -> Result<&'a str> {
    let quoted = [format!("'{key}'"), format!("\"{key}\"")];
    let pos = quoted
        .iter()
        .find_map(|k| body.find(k.as_str()).map(|p| p + k.len()))
        .ok_or_else(|| Error::HeaderParse(format!("missing key `{key}`")))?;
    let rest = body[pos..]
        .trim_start()
        .strip_prefix(':')
        .ok_or_else(|| Error::HeaderParse(format!("missing `:` after `{key}`")))?;
    let mut depth = 0usize;
    for (i, c) in rest.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth = depth.saturating_sub(1),
            ',' if depth == 0 => return Ok(&rest[..i]),
            _ => {}
        }
    }
    Ok(rest)
}

pub fn write_array(path: impl AsRef<Path>, array: &ArrayFile) -> Result<()> {
    let path = path.as_ref();
    let bytes = array.to_bytes()?;
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_array(path: impl AsRef<Path>) -> Result<ArrayFile> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    ArrayFile::parse(&bytes, path)
}

/// Parse only the header of an array file; the payload is not read.
pub fn read_header(path: impl AsRef<Path>) -> Result<ArrayHeader> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut pre = [0u8; 12];
    let mut got = 0;
    while got < pre.len() {
        let n = reader.read(&mut pre[got..]).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        got += n;
    }
    if got < 8 || &pre[..6] != MAGIC {
        return Err(Error::BadMagic(path.to_path_buf()));
    }
    if !(1..=3).contains(&pre[6]) {
        return Err(Error::HeaderParse(format!("unsupported format version {}", pre[6])));
    }
    let (len, start) = if pre[6] == 1 {
        (u16::from_le_bytes([pre[8], pre[9]]) as usize, 10)
    } else {
        (u32::from_le_bytes([pre[8], pre[9], pre[10], pre[11]]) as usize, 12)
    };
    let mut buf = pre[..got].to_vec();
    let mut rest = vec![0u8; (start + len).saturating_sub(got)];
    reader.read_exact(&mut rest).map_err(|_| {
        Error::HeaderParse(format!("header of {} extends past end of file", path.display()))
    })?;
    buf.extend_from_slice(&rest);
    let header = parse_preamble(&buf, path)?;
    let size = std::fs::metadata(path).map_err(|e| Error::io(path, e))?.len() as usize;
    let expected = header.shape.iter().product::<usize>() * header.dtype.size();
    if size < header.data_offset + expected {
        return Err(Error::TruncatedData {
            expected,
            found: size.saturating_sub(header.data_offset),
        });
    }
    Ok(header)
}
