//! Directional 5×5 operators used for luminance contrast.

use crate::error::{Error, Result};

pub const KERNEL_SIZE: usize = 5;

/// Source text of the shipped kernel set.
pub const DEFAULT_KERNEL_FILE: &str = include_str!("../../data/cm_kernels.txt");

/// Largest file the parser will look at. The shipped file is under 1 KiB.
const MAX_FILE_LEN: usize = 64 * 1024;
const MAX_KERNELS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionalKernel {
    pub name: String,
    pub weights: [f64; KERNEL_SIZE * KERNEL_SIZE],
}

impl DirectionalKernel {
    pub fn mirrored(&self) -> [f64; KERNEL_SIZE * KERNEL_SIZE] {
        let mut out = [0.0; KERNEL_SIZE * KERNEL_SIZE];
        for y in 0..KERNEL_SIZE {
            for x in 0..KERNEL_SIZE {
                out[y * KERNEL_SIZE + x] = self.weights[y * KERNEL_SIZE + KERNEL_SIZE - 1 - x];
            }
        }
        out
    }
}

/// The kernel set compiled into the crate.
pub fn default_kernels() -> Vec<DirectionalKernel> {
    parse_kernel_file(DEFAULT_KERNEL_FILE).expect("shipped kernel file is well formed")
}

/// Parse a kernel file: `kernel <name>` headers, each followed by five rows of
/// five integers. Every kernel must sum to zero.
pub fn parse_kernel_file(text: &str) -> Result<Vec<DirectionalKernel>> {
    if text.len() > MAX_FILE_LEN {
        return Err(Error::Parse(format!("kernel file exceeds {MAX_FILE_LEN} bytes")));
    }
    let mut kernels = Vec::new();
    let mut current: Option<(String, Vec<i32>)> = None;

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let lineno = lineno + 1;
        if let Some(rest) = line.strip_prefix("kernel") {
            if !rest.is_empty() && !rest.starts_with(char::is_whitespace) {
                return Err(Error::Parse(format!("line {lineno}: expected `kernel <name>`")));
            }
            if let Some(k) = current.take() {
                kernels.push(finish_kernel(k, lineno)?);
            }
            let name = rest.trim();
            if name.is_empty() {
                return Err(Error::Parse(format!("line {lineno}: kernel without a name")));
            }
            if kernels.len() >= MAX_KERNELS {
                return Err(Error::Parse(format!("more than {MAX_KERNELS} kernels")));
            }
            current = Some((name.to_string(), Vec::with_capacity(KERNEL_SIZE * KERNEL_SIZE)));
            continue;
        }
        let Some((_, values)) = current.as_mut() else {
            return Err(Error::Parse(format!("line {lineno}: coefficients before any `kernel` header")));
        };
        let row = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<i32>()
                    .map_err(|_| Error::Parse(format!("line {lineno}: `{tok}` is not an integer")))
            })
            .collect::<Result<Vec<_>>>()?;
        if row.len() != KERNEL_SIZE {
            return Err(Error::Parse(format!(
                "line {lineno}: expected {KERNEL_SIZE} coefficients, found {}",
                row.len()
            )));
        }
        if values.len() == KERNEL_SIZE * KERNEL_SIZE {
            return Err(Error::Parse(format!("line {lineno}: kernel has more than {KERNEL_SIZE} rows")));
        }
        values.extend(row);
    }
    if let Some(k) = current.take() {
        kernels.push(finish_kernel(k, text.lines().count())?);
    }
    if kernels.is_empty() {
        return Err(Error::Parse("no kernels defined".into()));
    }
    Ok(kernels)
}

fn finish_kernel((name, values): (String, Vec<i32>), lineno: usize) -> Result<DirectionalKernel> {
    if values.len() != KERNEL_SIZE * KERNEL_SIZE {
        return Err(Error::Parse(format!(
            "kernel `{name}` ending near line {lineno} has {} rows, expected {KERNEL_SIZE}",
            values.len() / KERNEL_SIZE
        )));
    }
    let sum: i64 = values.iter().map(|&v| v as i64).sum();
    if sum != 0 {
        return Err(Error::Parse(format!("kernel `{name}` sums to {sum}, expected 0")));
    }
    let mut weights = [0.0; KERNEL_SIZE * KERNEL_SIZE];
    for (w, v) in weights.iter_mut().zip(values) {
        *w = v as f64;
    }
    Ok(DirectionalKernel { name, weights })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_kernels_are_zero_sum_with_positive_mass_16() {
        let ks = default_kernels();
        assert_eq!(ks.len(), 4);
        for k in &ks {
            assert_eq!(k.weights.iter().sum::<f64>(), 0.0);
            let pos: f64 = k.weights.iter().filter(|w| **w > 0.0).sum();
            assert_eq!(pos, 16.0, "{}", k.name);
        }
    }

    #[test]
    fn shipped_set_is_closed_under_mirroring_up_to_sign() {
        let ks = default_kernels();
        for k in &ks {
            let m = k.mirrored();
            let neg: Vec<f64> = m.iter().map(|v| -v).collect();
            assert!(
                ks.iter().any(|o| o.weights == m || o.weights[..] == neg[..]),
                "mirror of {} not in set",
                k.name
            );
        }
    }

    #[test]
    fn parse_errors() {
        assert!(parse_kernel_file("").is_err());
        assert!(parse_kernel_file("1 2 3 4 5").is_err());
        assert!(parse_kernel_file("kernel a\n1 0 0 0 0\n0 0 0 0 0\n0 0 0 0 0\n0 0 0 0 0\n0 0 0 0 0").is_err());
        assert!(parse_kernel_file("kernel a\n0 0 0 0 0\n0 0 0 0 0").is_err());
        assert!(parse_kernel_file("kernel a\n0 0 x 0 0").is_err());
        assert!(parse_kernel_file("kernelx\n").is_err());
        let ok = "kernel a\n1 -1 0 0 0\n0 0 0 0 0\n0 0 0 0 0\n0 0 0 0 0\n0 0 0 0 0\n";
        assert_eq!(parse_kernel_file(ok).unwrap().len(), 1);
        let six_rows = format!("{ok}0 0 0 0 0\n");
        assert!(parse_kernel_file(&six_rows).is_err());
    }
}
