//! Dense batch storage, the multiply tally and the matrix kernel.

use crate::error::{Error, Result};

/// Receives one tick per scalar real multiplication a kernel executes.
///
/// `NoTally` compiles away entirely; kernels check `COUNTS` to pick a plain
/// scalar loop that can tick per product instead of the blocked fast path.
pub trait Tally {
    const COUNTS: bool;
    fn tick(&mut self, n: u64);
}

pub struct NoTally;

impl Tally for NoTally {
    const COUNTS: bool = false;
    #[inline(always)]
    fn tick(&mut self, _: u64) {}
}

/// Per-call multiplication counter.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MulCounter {
    pub count: u64,
}

impl Tally for MulCounter {
    const COUNTS: bool = true;
    #[inline(always)]
    fn tick(&mut self, n: u64) {
        self.count += n;
    }
}

/// Row-major `[batch, steps, features]` activations.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub data: Vec<f64>,
    pub batch: usize,
    pub steps: usize,
    pub features: usize,
}

impl Batch {
    pub fn new(data: Vec<f64>, batch: usize, steps: usize, features: usize) -> Result<Self> {
        if data.len() != batch * steps * features {
            return Err(Error::Shape {
                expected: format!(
                    "{} values for [{batch}, {steps}, {features}]",
                    batch * steps * features
                ),
                actual: format!("{} values", data.len()),
            });
        }
        Ok(Batch {
            data,
            batch,
            steps,
            features,
        })
    }

    pub(crate) fn from_parts(data: Vec<f64>, batch: usize, steps: usize, features: usize) -> Self {
        debug_assert_eq!(data.len(), batch * steps * features);
        Batch {
            data,
            batch,
            steps,
            features,
        }
    }

    pub fn zeros(batch: usize, steps: usize, features: usize) -> Self {
        Batch {
            data: vec![0.0; batch * steps * features],
            batch,
            steps,
            features,
        }
    }

    /// Values per sample.
    pub fn width(&self) -> usize {
        self.steps * self.features
    }

    pub fn sample(&self, b: usize) -> &[f64] {
        let w = self.width();
        &self.data[b * w..(b + 1) * w]
    }
}

/// Strided matrix view: element `(i, j)` lives at `i * rs + j * cs`.
#[derive(Clone, Copy)]
pub struct Mat<'a> {
    pub data: &'a [f64],
    pub rs: usize,
    pub cs: usize,
}

impl<'a> Mat<'a> {
    pub fn rows(data: &'a [f64], cols: usize) -> Self {
        Mat {
            data,
            rs: cols,
            cs: 1,
        }
    }

    /// Transposed view of a row-major matrix with `cols` columns.
    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        Mat {
            data,
            rs: 1,
            cs: cols,
        }
    }

    fn reach(&self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * self.rs + (cols - 1) * self.cs + 1
        }
    }
}

/// `C (+)= A B` with `A: m x k`, `B: k x n` and row-major `C: m x n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Tally>(
    m: usize,
    k: usize,
    n: usize,
    a: Mat<'_>,
    b: Mat<'_>,
    c: &mut [f64],
    accumulate: bool,
    tally: &mut T,
) {
    assert!(a.reach(m, k) <= a.data.len(), "gemm: A out of bounds");
    assert!(b.reach(k, n) <= b.data.len(), "gemm: B out of bounds");
    assert!(m * n <= c.len(), "gemm: C out of bounds");
    if m == 0 || n == 0 {
        return;
    }
    if T::COUNTS {
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += a.data[i * a.rs + p * a.cs] * b.data[p * b.rs + j * b.cs];
                    tally.tick(1);
                }
                let cij = &mut c[i * n + j];
                *cij = if accumulate { *cij + acc } else { acc };
            }
        }
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above bound every index dgemm touches by the
    // lengths of the three slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
