//! LoRA factors generated by the QT pipeline (QPA).
//!
//! `W = W0 + scaling * B A` with `B: d x r` and `A: r x k`. A generated
//! vector `a` of length `r (d + k)` holds `A` row-major followed by `B`
//! row-major.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::paramgen::{plan_chunks, ChunkPlan};

const FORMAT_HEADER: &str = "qtrain-lora v1";

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_len("matrix entries", rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        check_len("matmul inner dim", self.cols, rhs.rows)?;
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for p in 0..self.cols {
                let lhs = self.data[i * self.cols + p];
                if lhs == 0.0 {
                    continue;
                }
                let row = &rhs.data[p * rhs.cols..(p + 1) * rhs.cols];
                for (o, v) in out.data[i * rhs.cols..(i + 1) * rhs.cols]
                    .iter_mut()
                    .zip(row)
                {
                    *o += lhs * v;
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraTarget {
    pub w0: Matrix,
    pub rank: usize,
    pub a: Matrix,
    pub b: Matrix,
    pub scaling: f64,
}

fn check_rank(d: usize, k: usize, r: usize) -> Result<()> {
    if d == 0 || k == 0 || r == 0 {
        return Err(Error::invalid(format!(
            "LoRA dims must be positive (d={d}, k={k}, r={r})"
        )));
    }
    if r > d.min(k) {
        return Err(Error::invalid(format!("rank {r} exceeds min(d, k) = {}", d.min(k))));
    }
    Ok(())
}

/// Chunk plan for generating both factors: `m = r (d + k)`.
pub fn plan_lora(d: usize, k: usize, r: usize, chunk_size: usize) -> Result<ChunkPlan> {
    check_rank(d, k, r)?;
    plan_chunks(r * (d + k), chunk_size)
}

/// Split `a` into `(A, B)`.
pub fn assemble_lora(a: &[f64], d: usize, k: usize, r: usize) -> Result<(Matrix, Matrix)> {
    check_rank(d, k, r)?;
    check_len("LoRA parameter vector", r * (d + k), a.len())?;
    let (a_part, b_part) = a.split_at(r * k);
    Ok((
        Matrix::from_vec(r, k, a_part.to_vec())?,
        Matrix::from_vec(d, r, b_part.to_vec())?,
    ))
}

impl LoraTarget {
    pub fn new(w0: Matrix, a: Matrix, b: Matrix, scaling: f64) -> Result<Self> {
        let (d, k) = (w0.rows, w0.cols);
        let r = a.rows;
        check_rank(d, k, r)?;
        check_len("A columns", k, a.cols)?;
        check_len("B rows", d, b.rows)?;
        check_len("B columns", r, b.cols)?;
        Ok(Self {
            w0,
            rank: r,
            a,
            b,
            scaling,
        })
    }

    /// Zero factors on top of `w0`.
    pub fn zeros(w0: Matrix, rank: usize, scaling: f64) -> Result<Self> {
        let (d, k) = (w0.rows, w0.cols);
        Self::new(w0, Matrix::zeros(rank, k), Matrix::zeros(d, rank), scaling)
    }

    pub fn d(&self) -> usize {
        self.w0.rows
    }

    pub fn k(&self) -> usize {
        self.w0.cols
    }

    pub fn num_factor_params(&self) -> usize {
        self.rank * (self.d() + self.k())
    }

    /// `flatten(A) ‖ flatten(B)`.
    pub fn factor_vector(&self) -> Vec<f64> {
        let mut v = self.a.data.clone();
        v.extend_from_slice(&self.b.data);
        v
    }

    pub fn set_factors(&mut self, a: &[f64]) -> Result<()> {
        let (fa, fb) = assemble_lora(a, self.d(), self.k(), self.rank)?;
        self.a = fa;
        self.b = fb;
        Ok(())
    }

    /// Chain rule from `dL/dW` (d x k, row-major) to `dL/d(A, B)` in the
    /// same A-then-B layout as [`LoraTarget::factor_vector`].
    pub fn factor_grad(&self, grad_w: &[f64]) -> Result<Vec<f64>> {
        let (d, k, r) = (self.d(), self.k(), self.rank);
        check_len("weight gradient", d * k, grad_w.len())?;
        let s = self.scaling;
        let mut out = vec![0.0; r * (d + k)];
        let (ga, gb) = out.split_at_mut(r * k);
        // dA = s B^T G, dB = s G A^T
        for i in 0..d {
            for j in 0..k {
                let g = grad_w[i * k + j];
                if g == 0.0 {
                    continue;
                }
                for p in 0..r {
                    ga[p * k + j] += s * self.b.data[i * r + p] * g;
                    gb[i * r + p] += s * g * self.a.data[p * k + j];
                }
            }
        }
        Ok(out)
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{FORMAT_HEADER}")?;
        writeln!(w, "{} {} {} {}", self.d(), self.k(), self.rank, self.scaling)?;
        for row in self.a.data.chunks(self.a.cols) {
            writeln!(w, "{}", join(row))?;
        }
        for row in self.b.data.chunks(self.b.cols) {
            writeln!(w, "{}", join(row))?;
        }
        Ok(())
    }

    /// Read `(d, k, r, scaling, A, B)`. The checkpoint carries no `W0`; it is
    /// supplied by the caller.
    pub fn read_factors(r: impl BufRead, origin: &Path) -> Result<(usize, usize, usize, f64, Matrix, Matrix)> {
        let perr = |line: usize, message: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let lines: Vec<String> = r
            .lines()
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::io(origin, e))?;
        if lines.first().map(|l| l.trim()) != Some(FORMAT_HEADER) {
            return Err(perr(1, format!("expected header `{FORMAT_HEADER}`")));
        }
        let shape: Vec<&str> = lines
            .get(1)
            .ok_or_else(|| perr(2, "missing shape line".into()))?
            .split_whitespace()
            .collect();
        if shape.len() != 4 {
            return Err(perr(2, "expected `d k r scaling`".into()));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|e| perr(2, e.to_string()));
        let (d, k, rank) = (int(shape[0])?, int(shape[1])?, int(shape[2])?);
        let scaling = shape[3].parse::<f64>().map_err(|e| perr(2, e.to_string()))?;
        check_rank(d, k, rank)?;
        let mut values = Vec::with_capacity(rank * (d + k));
        for (i, line) in lines.iter().enumerate().skip(2) {
            for tok in line.split_whitespace() {
                values.push(tok.parse::<f64>().map_err(|e| perr(i + 1, e.to_string()))?);
            }
        }
        let (a, b) = assemble_lora(&values, d, k, rank)?;
        Ok((d, k, rank, scaling, a, b))
    }
}

fn join(row: &[f64]) -> String {
    row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

/// `W0 + scaling * B A`. `W0` is left untouched.
pub fn effective_weight(t: &LoraTarget) -> Matrix {
    let ba = t.b.matmul(&t.a).expect("LoraTarget shapes are validated");
    let mut out = t.w0.clone();
    for (o, v) in out.data.iter_mut().zip(&ba.data) {
        *o += t.scaling * v;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lora_worked_example() {
        let p = plan_lora(2048, 1024, 4, 64).unwrap();
        assert_eq!(p.m, 12288);
        assert_eq!(p.num_qubits, 8);
        assert_eq!(plan_chunks(2048 * 1024, 1).unwrap().num_qubits, 21);
    }

    #[test]
    fn smallest_legal_plan() {
        let p = plan_lora(1, 1, 1, 1).unwrap();
        assert_eq!((p.m, p.num_qubits), (2, 1));
    }

    #[test]
    fn rank_too_large() {
        assert!(plan_lora(3, 2, 3, 4).is_err());
        assert!(assemble_lora(&[0.0; 10], 3, 2, 3).is_err());
    }

    #[test]
    fn assemble_hand_example() {
        let (a, b) = assemble_lora(&[1.0, 2.0, 3.0, 4.0], 2, 2, 1).unwrap();
        assert_eq!(a.data, vec![1.0, 2.0]);
        assert_eq!((a.rows, a.cols), (1, 2));
        assert_eq!(b.data, vec![3.0, 4.0]);
        assert_eq!((b.rows, b.cols), (2, 1));
        let t = LoraTarget::new(Matrix::zeros(2, 2), a, b, 1.0).unwrap();
        assert_eq!(effective_weight(&t).data, vec![3.0, 6.0, 4.0, 8.0]);
        assert!(assemble_lora(&[1.0, 2.0, 3.0], 2, 2, 1).is_err());
    }

    #[test]
    fn zero_factor_returns_w0() {
        let w0 = Matrix::from_vec(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, 7.0]).unwrap();
        let a = Matrix::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let t = LoraTarget::new(w0.clone(), a, Matrix::zeros(2, 1), 1.0).unwrap();
        assert_eq!(effective_weight(&t), w0);
        assert_eq!(t.w0, w0);
    }

    #[test]
    fn full_rank_identity_padding_recovers_x() {
        // d=3, k=2, r=2: B = [I; 0], A = X
        let w0 = Matrix::from_vec(3, 2, vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0]).unwrap();
        let x = Matrix::from_vec(2, 2, vec![0.5, -1.0, 4.0, 2.5]).unwrap();
        let b = Matrix::from_vec(3, 2, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let t = LoraTarget::new(w0.clone(), x.clone(), b, 1.0).unwrap();
        let w = effective_weight(&t);
        assert_eq!(w.data, vec![1.5, 0.0, 6.0, 4.5, 3.0, 3.0]);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let w0 = Matrix::zeros(3, 2);
        let mut t = LoraTarget::zeros(w0, 1, 0.5).unwrap();
        t.set_factors(&[0.25, -1.5, 3.0, 4.0, 1e-9]).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("qtrain-lora v1\n3 2 1 0.5\n"));
        let (d, k, r, s, a, b) = LoraTarget::read_factors(&buf[..], Path::new("mem")).unwrap();
        assert_eq!((d, k, r, s), (3, 2, 1, 0.5));
        assert_eq!(a, t.a);
        assert_eq!(b, t.b);
    }
}
