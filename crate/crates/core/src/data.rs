//! Datasets with an intercept column and their partition across machines.

use crate::error::{DpqrError, Result};
use crate::sampling::RngStream;
use ndarray::{Array1, Array2, ArrayView1};
use std::sync::atomic::{AtomicU64, Ordering};

/// Design matrix with a leading all-ones intercept column plus responses.
///
/// Row reads through [`Shard`] views are counted, which lets integration
/// tests assert that privatization steps never touch raw data again.
#[derive(Debug)]
pub struct Dataset {
    x: Array2<f64>,
    y: Array1<f64>,
    row_reads: AtomicU64,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Array1<f64>) -> Result<Self> {
        let n = x.nrows();
        if n == 0 {
            return Err(DpqrError::RejectedInput("dataset must have at least one row".into()));
        }
        if y.len() != n {
            return Err(DpqrError::DimensionMismatch { expected: n, got: y.len() });
        }
        if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
            return Err(DpqrError::NonFinite("dataset".into()));
        }
        if x.column(0).iter().any(|&v| v != 1.0) {
            return Err(DpqrError::RejectedInput("column 0 must be the all-ones intercept".into()));
        }
        Ok(Self { x, y, row_reads: AtomicU64::new(0) })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// Number of covariates excluding the intercept.
    pub fn p(&self) -> usize {
        self.x.ncols() - 1
    }

    /// Full coefficient dimension `p + 1`.
    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn y(&self) -> &Array1<f64> {
        &self.y
    }

    pub fn row_reads(&self) -> u64 {
        self.row_reads.load(Ordering::Relaxed)
    }
}

/// Assignment of rows to `m` machines: a random permutation cut into
/// contiguous equal blocks. Machine 0 is the central machine.
#[derive(Debug, Clone)]
pub struct ShardPlan {
    pub m: usize,
    pub n_local: usize,
    permutation: Vec<usize>,
}

impl ShardPlan {
    pub fn machine_rows(&self, machine: usize) -> &[usize] {
        let lo = machine * self.n_local;
        &self.permutation[lo..lo + self.n_local]
    }
}

/// Random even partition. Requires `m` to divide the sample count exactly so
/// local sample sizes (and the noise scales built from them) stay exact.
pub fn partition(data: &Dataset, m: usize, rng: &mut RngStream) -> Result<ShardPlan> {
    let n = data.n();
    if m == 0 || n % m != 0 {
        return Err(DpqrError::UnevenPartition { n, m });
    }
    let mut permutation: Vec<usize> = (0..n).collect();
    // Fisher-Yates with draws from the shared uniform primitive.
    for i in (1..n).rev() {
        let j = (rng.uniform() * (i + 1) as f64) as usize;
        permutation.swap(i, j.min(i));
    }
    Ok(ShardPlan { m, n_local: n / m, permutation })
}

/// A machine's view of its rows. Every row access bumps the dataset counter.
#[derive(Clone, Copy)]
pub struct Shard<'a> {
    data: &'a Dataset,
    rows: &'a [usize],
}

impl<'a> Shard<'a> {
    pub fn new(data: &'a Dataset, plan: &'a ShardPlan, machine: usize) -> Self {
        Self { data, rows: plan.machine_rows(machine) }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    pub fn row(&self, i: usize) -> (ArrayView1<'a, f64>, f64) {
        self.data.row_reads.fetch_add(1, Ordering::Relaxed);
        let r = self.rows[i];
        (self.data.x().row(r), self.data.y()[r])
    }
}
