//! NPY v1.0 reader and writer for 2-D little-endian `f32` arrays.
//!
//! Only `descr: '<f4'`, `fortran_order: False` and a two-element shape are
//! accepted; everything else is rejected rather than converted.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const PREAMBLE: usize = 10;
const ALIGN: usize = 64;

/// Serializes a matrix to NPY v1.0 bytes.
pub fn to_bytes(m: &Matrix) -> Vec<u8> {
    let dict = format!(
        "{{'descr': '<f4', 'fortran_order': False, 'shape': ({}, {}), }}",
        m.rows(),
        m.cols()
    );
    // header is padded with spaces and terminated by '\n' so the data starts aligned
    let unpadded = PREAMBLE + dict.len() + 1;
    let pad = (ALIGN - unpadded % ALIGN) % ALIGN;
    let header_len = dict.len() + pad + 1;

    let mut out = Vec::with_capacity(PREAMBLE + header_len + m.data().len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header_len as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out.extend(std::iter::repeat_n(b' ', pad));
    out.push(b'\n');
    for v in m.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses NPY v1.0 bytes. `origin` is only used in error messages.
pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Matrix> {
    let bad = |reason: String| Error::Npy {
        path: origin.to_path_buf(),
        reason,
    };
    if bytes.len() < PREAMBLE || &bytes[..6] != MAGIC {
        return Err(bad("missing \\x93NUMPY magic".into()));
    }
    if bytes[6..8] != [1, 0] {
        return Err(bad(format!(
            "unsupported format version {}.{}",
            bytes[6], bytes[7]
        )));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let data_start = PREAMBLE + header_len;
    if bytes.len() < data_start {
        return Err(bad("truncated header".into()));
    }
    let header = std::str::from_utf8(&bytes[PREAMBLE..data_start])
        .map_err(|_| bad("header is not ASCII".into()))?;
    let (rows, cols) = parse_header(header).map_err(bad)?;

    let body = &bytes[data_start..];
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| bad("shape overflows".into()))?;
    if body.len() != expected {
        return Err(bad(format!(
            "expected {expected} data bytes for shape ({rows}, {cols}), found {}",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Matrix::new(rows, cols, data)
}

pub fn read_npy(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let bytes = fs::read(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    from_bytes(&bytes, path)
}

/// Writes through a sibling temp file and renames it into place, so a
/// failed write never leaves a partial file at `path`.
pub fn write_npy(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let path = path.as_ref();
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("out.npy");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&to_bytes(m))?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn parse_header(header: &str) -> std::result::Result<(usize, usize), String> {
    let h = header.trim_end_matches(['\n', ' ', '\0']).trim();
    let inner = h
        .strip_prefix('{')
        .and_then(|s| s.strip_suffix('}'))
        .ok_or("header is not a dict literal")?;

    let descr = dict_value(inner, "descr").ok_or("header lacks 'descr'")?;
    let descr = descr.trim().trim_matches(|c| c == '\'' || c == '"');
    if descr != "<f4" {
        return Err(format!(
            "unsupported descr '{descr}', only '<f4' is accepted"
        ));
    }

    let fortran = dict_value(inner, "fortran_order").ok_or("header lacks 'fortran_order'")?;
    match fortran.trim() {
        "False" => {}
        "True" => return Err("fortran_order True is not supported".into()),
        other => return Err(format!("bad fortran_order value '{other}'")),
    }

    let shape = dict_value(inner, "shape").ok_or("header lacks 'shape'")?;
    let dims: Vec<&str> = shape
        .trim()
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or("shape is not a tuple")?
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    if dims.len() != 2 {
        return Err(format!(
            "expected a 2-D shape, found {} dimensions",
            dims.len()
        ));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| format!("bad dimension '{s}'"))
    };
    Ok((parse(dims[0])?, parse(dims[1])?))
}

/// Raw text of the value for `key` in a flat Python dict literal.
fn dict_value<'a>(inner: &'a str, key: &str) -> Option<&'a str> {
    let start = ["'", "\""].iter().find_map(|q| {
        inner
            .find(&format!("{q}{key}{q}"))
            .map(|i| i + key.len() + 2)
    })?;
    let rest = inner[start..].trim_start().strip_prefix(':')?;
    let mut depth = 0usize;
    for (i, c) in rest.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth = depth.saturating_sub(1),
            ',' if depth == 0 => return Some(&rest[..i]),
            _ => {}
        }
    }
    Some(rest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn origin() -> &'static Path {
        Path::new("<mem>")
    }

    #[test]
    fn header_layout_is_aligned() {
        let m = Matrix::from_rows(&[[1.0f32, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        let bytes = to_bytes(&m);
        assert_eq!(&bytes[..8], b"\x93NUMPY\x01\x00");
        let hl = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        assert_eq!((PREAMBLE + hl) % 64, 0);
        assert_eq!(bytes[PREAMBLE + hl - 1], b'\n');
        assert_eq!(bytes.len(), PREAMBLE + hl + 24);
        assert_eq!(from_bytes(&bytes, origin()).unwrap(), m);
    }

    #[test]
    fn reads_numpy_written_header() {
        // header as emitted by numpy.save for np.zeros((2, 1), '<f4')
        let dict = "{'descr': '<f4', 'fortran_order': False, 'shape': (2, 1), }";
        let mut bytes = b"\x93NUMPY\x01\x00".to_vec();
        let pad = 64 - (10 + dict.len() + 1) % 64;
        bytes.extend_from_slice(&((dict.len() + pad + 1) as u16).to_le_bytes());
        bytes.extend_from_slice(dict.as_bytes());
        bytes.extend(std::iter::repeat_n(b' ', pad));
        bytes.push(b'\n');
        bytes.extend_from_slice(&1.5f32.to_le_bytes());
        bytes.extend_from_slice(&(-2.0f32).to_le_bytes());
        let m = from_bytes(&bytes, origin()).unwrap();
        assert_eq!(m.shape(), (2, 1));
        assert_eq!(m.data(), &[1.5, -2.0]);
    }

    #[test]
    fn rejects_other_layouts() {
        let m = Matrix::zeros(1, 1);
        let good = String::from_utf8_lossy(&to_bytes(&m)).into_owned();
        for (from, to) in [
            ("<f4", "<f8"),
            ("<f4", ">f4"),
            ("False", "True"),
            ("(1, 1)", "(1,)"),
            ("(1, 1)", "(1, 1, 1)"),
        ] {
            let bytes = good.replacen(from, to, 1).into_bytes();
            assert!(
                matches!(from_bytes(&bytes, origin()), Err(Error::Npy { .. })),
                "{from} -> {to} should be rejected"
            );
        }
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut bytes = to_bytes(&Matrix::zeros(2, 2));
        let full = bytes.clone();
        bytes[1] = b'X';
        assert!(matches!(
            from_bytes(&bytes, origin()),
            Err(Error::Npy { .. })
        ));
        assert!(from_bytes(&full[..full.len() - 1], origin()).is_err());
        assert!(from_bytes(&full[..5], origin()).is_err());
    }

    #[test]
    fn non_finite_payload_is_a_domain_error() {
        let mut bytes = to_bytes(&Matrix::zeros(1, 1));
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            from_bytes(&bytes, origin()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn empty_rows_round_trip() {
        let m = Matrix::zeros(0, 5);
        assert_eq!(from_bytes(&to_bytes(&m), origin()).unwrap(), m);
    }
}
