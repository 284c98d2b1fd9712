//! Personalized PageRank and PageRank diffusion of logits.
//!
//! Everything here works with `M = I - alpha * D^-1 A`. The PageRank matrix is
//! `Pi = (1 - alpha) M^-1`, row `t` being the visit distribution of a walk
//! restarted at `t`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::OnceLock;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::exec;
use crate::graph::Adjacency;

pub const DEFAULT_ALPHA: f64 = 0.85;

/// Largest graph for which a dense `Pi` is built.
pub const DENSE_NODE_CAP: usize = 20_000;

/// Residual bound reported by [`ppr_row`].
pub const ROW_RESIDUAL_TOL: f64 = 1e-10;

/// Relative residual bound used by the iterative solves.
pub const SOLVE_TOL: f64 = 1e-13;

const MAX_SWEEPS: usize = 20_000;

const CACHE_MAGIC: &[u8; 4] = b"PPR1";

/// Row-stochastic `P = D^-1 A` in compressed rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub weights: Vec<f64>,
}

impl TransitionMatrix {
    pub fn num_nodes(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.num_nodes();
        let mut p = DMatrix::zeros(n, n);
        for i in 0..n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                p[(i, self.cols[k])] = self.weights[k];
            }
        }
        p
    }
}

pub fn transition_matrix(adjacency: &Adjacency) -> Result<TransitionMatrix> {
    let n = adjacency.num_nodes();
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::with_capacity(adjacency.nnz());
    let mut weights = Vec::with_capacity(adjacency.nnz());
    row_ptr.push(0);
    for i in 0..n {
        let row = adjacency.row(i);
        if row.is_empty() {
            return Err(Error::ZeroDegree { node: i });
        }
        let w = 1.0 / row.len() as f64;
        cols.extend_from_slice(row);
        weights.extend(std::iter::repeat_n(w, row.len()));
        row_ptr.push(cols.len());
    }
    Ok(TransitionMatrix { row_ptr, cols, weights })
}

fn validate_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// `M = I - alpha P` over an owned adjacency, solved by Jacobi sweeps.
///
/// Both `M x = b` and `M^T x = b` contract at rate `alpha`, so the sweeps
/// converge from any start; a warm start from a nearby solution saves most
/// of the work inside the greedy loops.
#[derive(Debug)]
pub struct DiffusionOperator {
    adjacency: Adjacency,
    alpha: f64,
    inv_degree: Vec<f64>,
    columns: OnceLock<Adjacency>,
}

impl DiffusionOperator {
    pub fn new(adjacency: Adjacency, alpha: f64) -> Result<Self> {
        validate_alpha(alpha)?;
        let mut inv_degree = Vec::with_capacity(adjacency.num_nodes());
        for i in 0..adjacency.num_nodes() {
            let d = adjacency.degree(i);
            if d == 0 {
                return Err(Error::ZeroDegree { node: i });
            }
            inv_degree.push(1.0 / d as f64);
        }
        Ok(Self {
            adjacency,
            alpha,
            inv_degree,
            columns: OnceLock::new(),
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adjacency
    }

    pub fn into_adjacency(self) -> Adjacency {
        self.adjacency
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.num_nodes()
    }

    pub fn inv_degree(&self) -> &[f64] {
        &self.inv_degree
    }

    /// `(P x)_i`, the mean of `x` over the out-neighbors of `i`.
    pub fn neighbor_mean(&self, x: &[f64], i: usize) -> f64 {
        self.adjacency.row(i).iter().map(|&j| x[j]).sum::<f64>() * self.inv_degree[i]
    }

    pub fn apply_transition(&self, x: &[f64]) -> Vec<f64> {
        exec::map_range(self.num_nodes(), |i| self.neighbor_mean(x, i))
    }

    fn columns(&self) -> &Adjacency {
        self.columns.get_or_init(|| self.adjacency.transpose())
    }

    /// Solves `M x = b`.
    pub fn solve(&self, b: &[f64], warm: Option<&[f64]>) -> Result<Vec<f64>> {
        self.iterate(b, warm, |x, i| self.neighbor_mean(x, i))
    }

    /// Solves `M^T x = b`.
    pub fn solve_transposed(&self, b: &[f64], warm: Option<&[f64]>) -> Result<Vec<f64>> {
        let cols = self.columns();
        self.iterate(b, warm, |x, j| {
            cols.row(j).iter().map(|&i| x[i] * self.inv_degree[i]).sum::<f64>()
        })
    }

    fn iterate<F>(&self, b: &[f64], warm: Option<&[f64]>, apply: F) -> Result<Vec<f64>>
    where
        F: Fn(&[f64], usize) -> f64 + Sync + Send,
    {
        let n = self.num_nodes();
        if b.len() != n {
            return Err(Error::Shape(format!(
                "right-hand side has length {}, expected {n}",
                b.len()
            )));
        }
        let scale = b.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        let tol = SOLVE_TOL * scale;
        let mut x = match warm {
            Some(w) if w.len() == n => w.to_vec(),
            _ => b.to_vec(),
        };
        let mut next = vec![0.0; n];
        let alpha = self.alpha;
        let mut residual = f64::INFINITY;
        for _ in 0..MAX_SWEEPS {
            exec::fill(&mut next, |i| b[i] + alpha * apply(&x, i));
            residual = x.iter().zip(&next).fold(0.0_f64, |m, (a, c)| m.max((a - c).abs()));
            std::mem::swap(&mut x, &mut next);
            if residual <= tol {
                return Ok(x);
            }
        }
        Err(Error::NonConvergence {
            iterations: MAX_SWEEPS,
            residual,
        })
    }
}

/// `pi_G(e_t)`: solves `x^T (I - alpha P) = (1 - alpha) e_t^T`.
pub fn ppr_row(adjacency: &Adjacency, alpha: f64, t: usize) -> Result<Vec<f64>> {
    let op = DiffusionOperator::new(adjacency.clone(), alpha)?;
    let n = op.num_nodes();
    if t >= n {
        return Err(Error::Shape(format!("source {t} out of range for {n} nodes")));
    }
    let mut rhs = vec![0.0; n];
    rhs[t] = 1.0 - alpha;
    let x = op.solve_transposed(&rhs, None)?;
    // residual of x^T M = rhs^T, i.e. M^T x - rhs
    let cols = op.columns();
    let residual = (0..n)
        .map(|j| {
            let px: f64 = cols.row(j).iter().map(|&i| x[i] * op.inv_degree[i]).sum();
            (x[j] - alpha * px - rhs[j]).abs()
        })
        .fold(0.0_f64, f64::max);
    if residual > ROW_RESIDUAL_TOL {
        return Err(Error::NonConvergence {
            iterations: MAX_SWEEPS,
            residual,
        });
    }
    Ok(x)
}

/// Dense personalized PageRank matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PprMatrix {
    alpha: f64,
    pi: DMatrix<f64>,
}

impl PprMatrix {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.pi
    }

    pub fn num_nodes(&self) -> usize {
        self.pi.nrows()
    }

    pub fn row(&self, t: usize) -> Vec<f64> {
        self.pi.row(t).iter().copied().collect()
    }

    /// Little-endian cache: `PPR1`, `N: u32`, `alpha: f64`, then `N*N` row-major `f64`.
    pub fn write_cache(&self, path: &Path) -> Result<()> {
        let n = self.num_nodes();
        let n32 = u32::try_from(n).map_err(|_| Error::TooLarge {
            nodes: n,
            cap: u32::MAX as usize,
        })?;
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&n32.to_le_bytes())?;
        w.write_all(&self.alpha.to_le_bytes())?;
        for i in 0..n {
            for j in 0..n {
                w.write_all(&self.pi[(i, j)].to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_cache(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut header = [0u8; 16];
        r.read_exact(&mut header)?;
        if &header[..4] != CACHE_MAGIC {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: "bad PageRank cache magic".into(),
            });
        }
        let n = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes")) as usize;
        let alpha = f64::from_le_bytes(header[8..16].try_into().expect("8 bytes"));
        let mut buf = vec![0u8; n * n * 8];
        r.read_exact(&mut buf)?;
        let values = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let pi = DMatrix::from_row_iterator(n, n, values);
        Ok(Self { alpha, pi })
    }
}

/// `Pi = (1 - alpha) (I - alpha D^-1 A)^-1` from one LU factorization.
pub fn ppr_full(adjacency: &Adjacency, alpha: f64) -> Result<PprMatrix> {
    validate_alpha(alpha)?;
    let n = adjacency.num_nodes();
    if n > DENSE_NODE_CAP {
        return Err(Error::TooLarge {
            nodes: n,
            cap: DENSE_NODE_CAP,
        });
    }
    let p = transition_matrix(adjacency)?.to_dense();
    let m = DMatrix::<f64>::identity(n, n) - p * alpha;
    let lu = m.lu();
    const BLOCK: usize = 64;
    let blocks = n.div_ceil(BLOCK);
    let solved: Vec<Option<DMatrix<f64>>> = exec::map_range(blocks, |b| {
        let start = b * BLOCK;
        let width = BLOCK.min(n - start);
        let mut rhs = DMatrix::<f64>::zeros(n, width);
        for c in 0..width {
            rhs[(start + c, c)] = 1.0 - alpha;
        }
        lu.solve(&rhs)
    });
    let mut pi = DMatrix::<f64>::zeros(n, n);
    for (b, block) in solved.into_iter().enumerate() {
        let block = block.ok_or(Error::NonConvergence {
            iterations: 0,
            residual: f64::INFINITY,
        })?;
        pi.columns_mut(b * BLOCK, block.ncols()).copy_from(&block);
    }
    Ok(PprMatrix { alpha, pi })
}

/// `H_diff = Pi H`.
pub fn diffuse(pi: &PprMatrix, raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if raw.nrows() != pi.num_nodes() {
        return Err(Error::Shape(format!(
            "logits have {} rows, PageRank matrix has {}",
            raw.nrows(),
            pi.num_nodes()
        )));
    }
    Ok(pi.matrix() * raw)
}

/// `Pi H` column by column through the operator, without forming `Pi`.
pub fn diffused_logits(op: &DiffusionOperator, raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = op.num_nodes();
    if raw.nrows() != n {
        return Err(Error::Shape(format!(
            "logits have {} rows, graph has {n} nodes",
            raw.nrows()
        )));
    }
    let scale = 1.0 - op.alpha();
    let cols: Vec<Result<Vec<f64>>> = (0..raw.ncols())
        .map(|c| {
            let rhs: Vec<f64> = raw.column(c).iter().map(|v| v * scale).collect();
            op.solve(&rhs, None)
        })
        .collect();
    let mut out = DMatrix::zeros(n, raw.ncols());
    for (c, col) in cols.into_iter().enumerate() {
        out.column_mut(c).copy_from_slice(&col?);
    }
    Ok(out)
}

/// Row-wise argmax; ties go to the lowest class id.
pub fn predict(diffused: &DMatrix<f64>) -> Vec<usize> {
    (0..diffused.nrows())
        .map(|i| {
            let row = diffused.row(i);
            let mut best = 0;
            for c in 1..row.len() {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}
