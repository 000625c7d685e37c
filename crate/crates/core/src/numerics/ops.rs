//! Forward operations and their reverse-mode rules.
//!
//! The vocabulary is exactly what the models need: matrix products,
//! elementwise arithmetic, GELU, softmax over the last axis, layer
//! normalization, 2-D transposed convolution, mean-squared error, row
//! gather/scatter, and shape moves. Every op checks operand shapes up front
//! and rejects non-finite results.

use std::sync::Arc;

use super::tensor::{Element, GradFlow, Tensor};
use super::NumericsError;

type Res<E> = Result<Tensor<E>, NumericsError>;

/// Rank-4 row update: `out += a0*b0 + a1*b1 + a2*b2 + a3*b3`, the inner
/// kernel both matmul orientations share.
#[inline(always)]
fn axpy4<E: Element>(out: &mut [E], coef: [E; 4], rows: [&[E]; 4]) {
    let n = out.len();
    let (b0, b1, b2, b3) = (&rows[0][..n], &rows[1][..n], &rows[2][..n], &rows[3][..n]);
    for j in 0..n {
        out[j] = out[j] + coef[0] * b0[j] + coef[1] * b1[j] + coef[2] * b2[j] + coef[3] * b3[j];
    }
}

#[inline(always)]
fn axpy1<E: Element>(out: &mut [E], coef: E, row: &[E]) {
    let n = out.len();
    let row = &row[..n];
    for j in 0..n {
        out[j] = out[j] + coef * row[j];
    }
}

/// Striped dot product (sixteen independent accumulator lanes, wide enough
/// to fill 512-bit vector units).
#[inline(always)]
fn dot<E: Element>(a: &[E], b: &[E]) -> E {
    let mut lanes = [E::ZERO; 16];
    let chunks_a = a.chunks_exact(16);
    let chunks_b = b.chunks_exact(16);
    let rem_a = chunks_a.remainder();
    let rem_b = chunks_b.remainder();
    for (x, y) in chunks_a.zip(chunks_b) {
        for l in 0..16 {
            lanes[l] = lanes[l] + x[l] * y[l];
        }
    }
    let mut acc = E::ZERO;
    let mut width = 16;
    while width > 1 {
        width /= 2;
        for l in 0..width {
            lanes[l] = lanes[l] + lanes[l + width];
        }
    }
    acc = acc + lanes[0];
    for (&x, &y) in rem_a.iter().zip(rem_b) {
        acc = acc + x * y;
    }
    acc
}

fn matmul_into<E: Element>(a: &[E], b: &[E], m: usize, k: usize, n: usize, out: &mut [E]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        let mut p = 0;
        while p + 4 <= k {
            axpy4(
                out_row,
                [a_row[p], a_row[p + 1], a_row[p + 2], a_row[p + 3]],
                [
                    &b[p * n..(p + 1) * n],
                    &b[(p + 1) * n..(p + 2) * n],
                    &b[(p + 2) * n..(p + 3) * n],
                    &b[(p + 3) * n..(p + 4) * n],
                ],
            );
            p += 4;
        }
        while p < k {
            axpy1(out_row, a_row[p], &b[p * n..(p + 1) * n]);
            p += 1;
        }
    }
}

#[inline]
pub(crate) fn matmul_raw<E: Element>(a: &[E], b: &[E], m: usize, k: usize, n: usize) -> Vec<E> {
    let mut out = vec![E::ZERO; m * n];
    matmul_into(a, b, m, k, n, &mut out);
    out
}

/// a [m,k] times b-transposed where b is [n,k].
fn matmul_nt_into<E: Element>(a: &[E], b: &[E], m: usize, k: usize, n: usize, out: &mut [E]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (j, o) in out_row.iter_mut().enumerate() {
            *o = dot(a_row, &b[j * k..(j + 1) * k]);
        }
    }
}

fn matmul_nt_raw<E: Element>(a: &[E], b: &[E], m: usize, k: usize, n: usize) -> Vec<E> {
    let mut out = vec![E::ZERO; m * n];
    matmul_nt_into(a, b, m, k, n, &mut out);
    out
}

/// a-transposed times b where a is [m,k] and b is [m,n]; result [k,n];
/// accumulates into `out`.
fn matmul_tn_into<E: Element>(a: &[E], b: &[E], m: usize, k: usize, n: usize, out: &mut [E]) {
    let mut i = 0;
    while i + 4 <= m {
        let rows = [
            &b[i * n..(i + 1) * n],
            &b[(i + 1) * n..(i + 2) * n],
            &b[(i + 2) * n..(i + 3) * n],
            &b[(i + 3) * n..(i + 4) * n],
        ];
        for p in 0..k {
            axpy4(
                &mut out[p * n..(p + 1) * n],
                [
                    a[i * k + p],
                    a[(i + 1) * k + p],
                    a[(i + 2) * k + p],
                    a[(i + 3) * k + p],
                ],
                rows,
            );
        }
        i += 4;
    }
    while i < m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &aip) in a_row.iter().enumerate() {
            axpy1(&mut out[p * n..(p + 1) * n], aip, b_row);
        }
        i += 1;
    }
}

fn matmul_tn_raw<E: Element>(a: &[E], b: &[E], m: usize, k: usize, n: usize) -> Vec<E> {
    let mut out = vec![E::ZERO; k * n];
    matmul_tn_into(a, b, m, k, n, &mut out);
    out
}

fn same_shape<E: Element>(op: &'static str, a: &Tensor<E>, b: &Tensor<E>) -> Result<(), NumericsError> {
    if a.shape() != b.shape() {
        return Err(NumericsError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

impl<E: Element> Tensor<E> {
    pub fn add(&self, rhs: &Tensor<E>) -> Res<E> {
        same_shape("add", self, rhs)?;
        let data = self.data().iter().zip(rhs.data()).map(|(&a, &b)| a + b).collect();
        Tensor::from_op(
            "add",
            self.shape().to_vec(),
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(|_g| vec![Some(GradFlow::Same), Some(GradFlow::Same)]),
        )
    }

    pub fn sub(&self, rhs: &Tensor<E>) -> Res<E> {
        same_shape("sub", self, rhs)?;
        let data = self.data().iter().zip(rhs.data()).map(|(&a, &b)| a - b).collect();
        Tensor::from_op(
            "sub",
            self.shape().to_vec(),
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(|g| {
                vec![
                    Some(GradFlow::Same),
                    Some(GradFlow::Own(g.iter().map(|&v| -v).collect())),
                ]
            }),
        )
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, rhs: &Tensor<E>) -> Res<E> {
        same_shape("mul", self, rhs)?;
        let data = self.data().iter().zip(rhs.data()).map(|(&a, &b)| a * b).collect();
        let a_data = self.data_arc();
        let b_data = rhs.data_arc();
        Tensor::from_op(
            "mul",
            self.shape().to_vec(),
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| {
                vec![
                    Some(GradFlow::Own(
                        g.iter().zip(b_data.iter()).map(|(&gv, &b)| gv * b).collect(),
                    )),
                    Some(GradFlow::Own(
                        g.iter().zip(a_data.iter()).map(|(&gv, &a)| gv * a).collect(),
                    )),
                ]
            }),
        )
    }

    pub fn scale(&self, factor: f64) -> Res<E> {
        let c = E::from_f64(factor);
        let data = self.data().iter().map(|&v| v * c).collect();
        Tensor::from_op(
            "scale",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g| vec![Some(GradFlow::Own(g.iter().map(|&v| v * c).collect()))]),
        )
    }

    /// Broadcast-add a `[d]` bias over the trailing axis.
    pub fn add_bias(&self, bias: &Tensor<E>) -> Res<E> {
        let d = *self.shape().last().unwrap_or(&0);
        if bias.shape() != [d] {
            return Err(NumericsError::ShapeMismatch {
                op: "add_bias",
                lhs: self.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        let bdat = bias.data_arc();
        let data = self
            .data()
            .chunks_exact(d)
            .flat_map(|row| row.iter().zip(bdat.iter()).map(|(&x, &b)| x + b))
            .collect();
        Tensor::from_op(
            "add_bias",
            self.shape().to_vec(),
            data,
            vec![self.clone(), bias.clone()],
            Box::new(move |g| {
                let mut gb = vec![E::ZERO; d];
                for row in g.chunks_exact(d) {
                    for (acc, &v) in gb.iter_mut().zip(row) {
                        *acc = *acc + v;
                    }
                }
                vec![Some(GradFlow::Same), Some(GradFlow::Own(gb))]
            }),
        )
    }

    /// 2-D matrix product: `[m,k] @ [k,n] -> [m,n]`.
    pub fn matmul(&self, rhs: &Tensor<E>) -> Res<E> {
        let (s, r) = (self.shape(), rhs.shape());
        if s.len() != 2 || r.len() != 2 || s[1] != r[0] {
            return Err(NumericsError::ShapeMismatch {
                op: "matmul",
                lhs: s.to_vec(),
                rhs: r.to_vec(),
            });
        }
        let (m, k, n) = (s[0], s[1], r[1]);
        let data = matmul_raw(self.data(), rhs.data(), m, k, n);
        let a_data = self.data_arc();
        let b_data = rhs.data_arc();
        Tensor::from_op(
            "matmul",
            vec![m, n],
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| {
                let ga = matmul_nt_raw(g, &b_data, m, n, k);
                let gb = matmul_tn_raw(&a_data, g, m, k, n);
                vec![Some(GradFlow::Own(ga)), Some(GradFlow::Own(gb))]
            }),
        )
    }

    /// Batched matrix product: `[b,m,k] @ [b,k,n] -> [b,m,n]`.
    pub fn bmm(&self, rhs: &Tensor<E>) -> Res<E> {
        let (s, r) = (self.shape(), rhs.shape());
        if s.len() != 3 || r.len() != 3 || s[0] != r[0] || s[2] != r[1] {
            return Err(NumericsError::ShapeMismatch {
                op: "bmm",
                lhs: s.to_vec(),
                rhs: r.to_vec(),
            });
        }
        let (b, m, k, n) = (s[0], s[1], s[2], r[2]);
        let mut data = vec![E::ZERO; b * m * n];
        for i in 0..b {
            matmul_into(
                &self.data()[i * m * k..(i + 1) * m * k],
                &rhs.data()[i * k * n..(i + 1) * k * n],
                m,
                k,
                n,
                &mut data[i * m * n..(i + 1) * m * n],
            );
        }
        let a_data = self.data_arc();
        let b_data = rhs.data_arc();
        Tensor::from_op(
            "bmm",
            vec![b, m, n],
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| {
                let mut ga = vec![E::ZERO; b * m * k];
                let mut gb = vec![E::ZERO; b * k * n];
                for i in 0..b {
                    let gi = &g[i * m * n..(i + 1) * m * n];
                    matmul_nt_into(
                        gi,
                        &b_data[i * k * n..(i + 1) * k * n],
                        m,
                        n,
                        k,
                        &mut ga[i * m * k..(i + 1) * m * k],
                    );
                    matmul_tn_into(
                        &a_data[i * m * k..(i + 1) * m * k],
                        gi,
                        m,
                        k,
                        n,
                        &mut gb[i * k * n..(i + 1) * k * n],
                    );
                }
                vec![Some(GradFlow::Own(ga)), Some(GradFlow::Own(gb))]
            }),
        )
    }

    pub fn transpose2d(&self) -> Res<E> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(NumericsError::Invalid {
                op: "transpose2d",
                msg: format!("expected rank 2, got {:?}", s),
            });
        }
        let (m, n) = (s[0], s[1]);
        let src = self.data();
        let mut data = vec![E::ZERO; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        Tensor::from_op(
            "transpose2d",
            vec![n, m],
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let mut gt = vec![E::ZERO; m * n];
                for j in 0..n {
                    for i in 0..m {
                        gt[i * n + j] = g[j * m + i];
                    }
                }
                vec![Some(GradFlow::Own(gt))]
            }),
        )
    }

    /// Stack tensors along a new leading row axis; all inputs must share a
    /// shape of the form `[r, d]` (rows may differ, `d` must match).
    pub fn concat_rows(parts: &[Tensor<E>]) -> Res<E> {
        if parts.is_empty() {
            return Err(NumericsError::Invalid { op: "concat_rows", msg: "no inputs".into() });
        }
        let d = *parts[0].shape().last().unwrap();
        let mut rows = 0usize;
        for p in parts {
            if p.shape().len() != 2 || p.shape()[1] != d {
                return Err(NumericsError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: parts[0].shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
            rows += p.shape()[0];
        }
        let mut data = Vec::with_capacity(rows * d);
        for p in parts {
            data.extend_from_slice(p.data());
        }
        let split: Vec<usize> = parts.iter().map(|p| p.numel()).collect();
        Tensor::from_op(
            "concat_rows",
            vec![rows, d],
            data,
            parts.to_vec(),
            Box::new(move |g| {
                let mut out = Vec::with_capacity(split.len());
                let mut off = 0;
                for &len in &split {
                    out.push(Some(GradFlow::Own(g[off..off + len].to_vec())));
                    off += len;
                }
                out
            }),
        )
    }

    /// Permute the axes of a rank-4 tensor.
    pub fn permute4(&self, perm: [usize; 4]) -> Res<E> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(NumericsError::Invalid {
                op: "permute4",
                msg: format!("expected rank 4, got {:?}", s),
            });
        }
        let mut seen = [false; 4];
        for &p in &perm {
            if p > 3 || seen[p] {
                return Err(NumericsError::Invalid {
                    op: "permute4",
                    msg: format!("invalid permutation {:?}", perm),
                });
            }
            seen[p] = true;
        }
        let in_shape = [s[0], s[1], s[2], s[3]];
        let data = permute4_raw(self.data(), in_shape, perm);
        let out_shape = vec![s[perm[0]], s[perm[1]], s[perm[2]], s[perm[3]]];
        let mut inv = [0usize; 4];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        let g_shape = [out_shape[0], out_shape[1], out_shape[2], out_shape[3]];
        Tensor::from_op(
            "permute4",
            out_shape,
            data,
            vec![self.clone()],
            Box::new(move |g| vec![Some(GradFlow::Own(permute4_raw(g, g_shape, inv)))]),
        )
    }

    /// Permute the axes of a rank-3 tensor.
    pub fn permute3(&self, perm: [usize; 3]) -> Res<E> {
        let s = self.shape();
        if s.len() != 3 {
            return Err(NumericsError::Invalid {
                op: "permute3",
                msg: format!("expected rank 3, got {:?}", s),
            });
        }
        let mut seen = [false; 3];
        for &p in &perm {
            if p > 2 || seen[p] {
                return Err(NumericsError::Invalid {
                    op: "permute3",
                    msg: format!("invalid permutation {:?}", perm),
                });
            }
            seen[p] = true;
        }
        let in_shape = [s[0], s[1], s[2]];
        let data = permute3_raw(self.data(), in_shape, perm);
        let out_shape = vec![s[perm[0]], s[perm[1]], s[perm[2]]];
        // Inverse permutation for the gradient.
        let mut inv = [0usize; 3];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        let g_shape = [out_shape[0], out_shape[1], out_shape[2]];
        Tensor::from_op(
            "permute3",
            out_shape,
            data,
            vec![self.clone()],
            Box::new(move |g| vec![Some(GradFlow::Own(permute3_raw(g, g_shape, inv)))]),
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Res<E> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(NumericsError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        // Same flat buffer, new shape; gradient passes straight through.
        Ok(Tensor::from_op_shared(
            shape.to_vec(),
            self.data_arc(),
            vec![self.clone()],
            Box::new(|_g| vec![Some(GradFlow::Same)]),
        ))
    }

    /// Columns `[start, start+len)` of a 2-D tensor.
    pub fn slice_cols(&self, start: usize, len: usize) -> Res<E> {
        let s = self.shape();
        if s.len() != 2 || start + len > s[1] {
            return Err(NumericsError::Invalid {
                op: "slice_cols",
                msg: format!("cols [{start}, {}) out of shape {:?}", start + len, s),
            });
        }
        let (m, n) = (s[0], s[1]);
        let mut data = Vec::with_capacity(m * len);
        for row in self.data().chunks_exact(n) {
            data.extend_from_slice(&row[start..start + len]);
        }
        Tensor::from_op(
            "slice_cols",
            vec![m, len],
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let mut gx = vec![E::ZERO; m * n];
                for (i, row) in g.chunks_exact(len).enumerate() {
                    gx[i * n + start..i * n + start + len].copy_from_slice(row);
                }
                vec![Some(GradFlow::Own(gx))]
            }),
        )
    }

    /// Select rows by index: `[n,d] -> [idx.len(),d]`. Indices may repeat.
    pub fn gather_rows(&self, idx: &[usize]) -> Res<E> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(NumericsError::Invalid {
                op: "gather_rows",
                msg: format!("expected rank 2, got {:?}", s),
            });
        }
        let (n, d) = (s[0], s[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(NumericsError::Invalid {
                op: "gather_rows",
                msg: format!("row index {bad} out of {n}"),
            });
        }
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(&self.data()[i * d..(i + 1) * d]);
        }
        let idx_owned: Arc<Vec<usize>> = Arc::new(idx.to_vec());
        Tensor::from_op(
            "gather_rows",
            vec![idx.len(), d],
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let mut gx = vec![E::ZERO; n * d];
                for (row, &i) in g.chunks_exact(d).zip(idx_owned.iter()) {
                    for (acc, &v) in gx[i * d..(i + 1) * d].iter_mut().zip(row) {
                        *acc = *acc + v;
                    }
                }
                vec![Some(GradFlow::Own(gx))]
            }),
        )
    }

    /// Write rows into a zero tensor of `n_rows` rows; duplicates accumulate.
    pub fn scatter_rows(&self, idx: &[usize], n_rows: usize) -> Res<E> {
        let s = self.shape();
        if s.len() != 2 || idx.len() != s[0] {
            return Err(NumericsError::Invalid {
                op: "scatter_rows",
                msg: format!("{} indices for shape {:?}", idx.len(), s),
            });
        }
        let d = s[1];
        if let Some(&bad) = idx.iter().find(|&&i| i >= n_rows) {
            return Err(NumericsError::Invalid {
                op: "scatter_rows",
                msg: format!("row index {bad} out of {n_rows}"),
            });
        }
        let mut data = vec![E::ZERO; n_rows * d];
        for (row, &i) in self.data().chunks_exact(d).zip(idx) {
            for (acc, &v) in data[i * d..(i + 1) * d].iter_mut().zip(row) {
                *acc = *acc + v;
            }
        }
        let idx_owned: Arc<Vec<usize>> = Arc::new(idx.to_vec());
        Tensor::from_op(
            "scatter_rows",
            vec![n_rows, d],
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let mut gx = Vec::with_capacity(idx_owned.len() * d);
                for &i in idx_owned.iter() {
                    gx.extend_from_slice(&g[i * d..(i + 1) * d]);
                }
                vec![Some(GradFlow::Own(gx))]
            }),
        )
    }

    /// Rearrange elements by flat index: `out[k] = self[idx[k]]`.
    ///
    /// Backward scatter-adds, so indices may repeat.
    pub fn gather_flat(&self, idx: &[usize], out_shape: &[usize]) -> Res<E> {
        let out_numel: usize = out_shape.iter().product();
        if out_numel != idx.len() {
            return Err(NumericsError::Invalid {
                op: "gather_flat",
                msg: format!("{} indices for shape {:?}", idx.len(), out_shape),
            });
        }
        let n = self.numel();
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(NumericsError::Invalid {
                op: "gather_flat",
                msg: format!("index {bad} out of {n}"),
            });
        }
        let src = self.data();
        let data = idx.iter().map(|&i| src[i]).collect();
        let idx_owned: Arc<Vec<usize>> = Arc::new(idx.to_vec());
        Tensor::from_op(
            "gather_flat",
            out_shape.to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let mut gx = vec![E::ZERO; n];
                for (&i, &gv) in idx_owned.iter().zip(g) {
                    gx[i] = gx[i] + gv;
                }
                vec![Some(GradFlow::Own(gx))]
            }),
        )
    }

    /// GELU with the tanh approximation.
    pub fn gelu(&self) -> Res<E> {
        let c = E::from_f64(0.797_884_560_802_865_4); // sqrt(2/pi)
        let a = E::from_f64(0.044_715);
        let half = E::from_f64(0.5);
        let x_data = self.data_arc();
        // Keep the tanh values for the backward rule.
        let mut tanh_u = Vec::with_capacity(x_data.len());
        let data = x_data
            .iter()
            .map(|&x| {
                let t = (c * (x + a * x * x * x)).tanh_bulk();
                tanh_u.push(t);
                half * x * (E::ONE + t)
            })
            .collect();
        let tanh_u = Arc::new(tanh_u);
        Tensor::from_op(
            "gelu",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let three_a = a + a + a;
                let gx = g
                    .iter()
                    .zip(x_data.iter().zip(tanh_u.iter()))
                    .map(|(&gv, (&x, &t))| {
                        let du = c * (E::ONE + three_a * x * x);
                        let d = half * (E::ONE + t) + half * x * (E::ONE - t * t) * du;
                        gv * d
                    })
                    .collect();
                vec![Some(GradFlow::Own(gx))]
            }),
        )
    }

    /// Softmax over the trailing axis.
    pub fn softmax_lastdim(&self) -> Res<E> {
        let d = *self.shape().last().ok_or(NumericsError::Invalid {
            op: "softmax",
            msg: "rank 0 tensor".into(),
        })?;
        if d == 0 {
            return Err(NumericsError::Invalid {
                op: "softmax",
                msg: "empty trailing axis".into(),
            });
        }
        let mut data = vec![E::ZERO; self.numel()];
        for (row, out) in self.data().chunks_exact(d).zip(data.chunks_exact_mut(d)) {
            let mut max = row[0];
            for &v in &row[1..] {
                if v > max {
                    max = v;
                }
            }
            for (o, &v) in out.iter_mut().zip(row) {
                *o = (v - max).exp_bulk();
            }
            let mut sum = E::ZERO;
            for &e in out.iter() {
                sum = sum + e;
            }
            let inv = E::ONE / sum;
            for o in out.iter_mut() {
                *o = *o * inv;
            }
        }
        let y = Arc::new(data.clone());
        Tensor::from_op(
            "softmax",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let mut gx = Vec::with_capacity(g.len());
                for (g_row, y_row) in g.chunks_exact(d).zip(y.chunks_exact(d)) {
                    let gy = dot(g_row, y_row);
                    gx.extend(g_row.iter().zip(y_row).map(|(&gv, &yv)| yv * (gv - gy)));
                }
                vec![Some(GradFlow::Own(gx))]
            }),
        )
    }

    /// Layer normalization over the trailing axis with affine parameters.
    pub fn layernorm(&self, gamma: &Tensor<E>, beta: &Tensor<E>, eps: f64) -> Res<E> {
        let d = *self.shape().last().ok_or(NumericsError::Invalid {
            op: "layernorm",
            msg: "rank 0 tensor".into(),
        })?;
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(NumericsError::ShapeMismatch {
                op: "layernorm",
                lhs: self.shape().to_vec(),
                rhs: gamma.shape().to_vec(),
            });
        }
        let rows = self.numel() / d;
        let mut data = Vec::with_capacity(self.numel());
        let mut x_hat: Vec<E> = Vec::with_capacity(self.numel());
        let mut inv_std = Vec::with_capacity(rows);
        let gdat = gamma.data();
        let bdat = beta.data();
        // Row statistics accumulate in f64; the normalization itself runs in
        // the element type.
        for row in self.data().chunks_exact(d) {
            let mean: f64 = row.iter().map(|v| v.to_f64()).sum::<f64>() / d as f64;
            let var: f64 = row
                .iter()
                .map(|v| {
                    let c = v.to_f64() - mean;
                    c * c
                })
                .sum::<f64>()
                / d as f64;
            let inv = E::from_f64(1.0 / (var + eps).sqrt());
            let mean = E::from_f64(mean);
            inv_std.push(inv);
            for (j, &v) in row.iter().enumerate() {
                let xh = (v - mean) * inv;
                x_hat.push(xh);
                data.push(xh * gdat[j] + bdat[j]);
            }
        }
        let x_hat = Arc::new(x_hat);
        let inv_std = Arc::new(inv_std);
        let gamma_data = gamma.data_arc();
        Tensor::from_op(
            "layernorm",
            self.shape().to_vec(),
            data,
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g| {
                let mut gx = Vec::with_capacity(g.len());
                let mut ggamma = vec![E::ZERO; d];
                let mut gbeta = vec![E::ZERO; d];
                let inv_d = E::from_f64(1.0 / d as f64);
                for (r, (g_row, xh_row)) in
                    g.chunks_exact(d).zip(x_hat.chunks_exact(d)).enumerate()
                {
                    let inv = inv_std[r];
                    let mut m1 = E::ZERO;
                    let mut m2 = E::ZERO;
                    for j in 0..d {
                        let gj = gamma_data[j] * g_row[j];
                        m1 = m1 + gj;
                        m2 = m2 + gj * xh_row[j];
                        ggamma[j] = ggamma[j] + g_row[j] * xh_row[j];
                        gbeta[j] = gbeta[j] + g_row[j];
                    }
                    m1 = m1 * inv_d;
                    m2 = m2 * inv_d;
                    for j in 0..d {
                        let gj = gamma_data[j] * g_row[j];
                        gx.push(inv * (gj - m1 - xh_row[j] * m2));
                    }
                }
                vec![
                    Some(GradFlow::Own(gx)),
                    Some(GradFlow::Own(ggamma)),
                    Some(GradFlow::Own(gbeta)),
                ]
            }),
        )
    }

    /// 2-D transposed convolution.
    ///
    /// Input `[c_in,h,w]`, weight `[c_in,c_out,kh,kw]`, optional bias
    /// `[c_out]`. Output size per axis is `(in-1)*stride - 2*pad + kernel`.
    pub fn conv_transpose2d(
        &self,
        weight: &Tensor<E>,
        bias: Option<&Tensor<E>>,
        stride: usize,
        pad: usize,
    ) -> Res<E> {
        let s = self.shape();
        let w = weight.shape();
        if s.len() != 3 || w.len() != 4 || s[0] != w[0] {
            return Err(NumericsError::ShapeMismatch {
                op: "conv_transpose2d",
                lhs: s.to_vec(),
                rhs: w.to_vec(),
            });
        }
        let (c_in, h, wid) = (s[0], s[1], s[2]);
        let (c_out, kh, kw) = (w[1], w[2], w[3]);
        if let Some(b) = bias {
            if b.shape() != [c_out] {
                return Err(NumericsError::ShapeMismatch {
                    op: "conv_transpose2d",
                    lhs: vec![c_out],
                    rhs: b.shape().to_vec(),
                });
            }
        }
        let oh = (h - 1) * stride + kh;
        let ow = (wid - 1) * stride + kw;
        if oh < 2 * pad || ow < 2 * pad {
            return Err(NumericsError::Invalid {
                op: "conv_transpose2d",
                msg: format!("padding {pad} larger than output"),
            });
        }
        let (oh, ow) = (oh - 2 * pad, ow - 2 * pad);

        // Lowered to a matrix product: cols[hw, c_out*kh*kw] = x^T @ W, then
        // a col2im scatter builds the output. The backward pass is the
        // mirror image (im2col gather plus two matrix products).
        let geo = ConvTransposeGeometry { c_in, c_out, h, wid, kh, kw, oh, ow, stride, pad };
        let x_t = transpose_to_hw_c(self.data(), c_in, h * wid);
        let k_dim = c_out * kh * kw;
        let cols = matmul_raw(&x_t, weight.data(), h * wid, c_in, k_dim);
        let mut out = vec![E::ZERO; c_out * oh * ow];
        if let Some(b) = bias {
            for (oc, &bv) in b.data().iter().enumerate() {
                out[oc * oh * ow..(oc + 1) * oh * ow].fill(bv);
            }
        }
        geo.col2im(&cols, &mut out);

        let x_t = Arc::new(x_t);
        let w_arc = weight.data_arc();
        let has_bias = bias.is_some();
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Tensor::from_op(
            "conv_transpose2d",
            vec![c_out, oh, ow],
            out,
            parents,
            Box::new(move |g| {
                let gcols = geo.im2col(g);
                // d/dx: [hw, c_in] = gcols @ W^T, transposed back to planes.
                let gx_t = matmul_nt_raw(&gcols, &w_arc, geo.h * geo.wid, k_dim, geo.c_in);
                let gx = transpose_to_hw_c(&gx_t, geo.h * geo.wid, geo.c_in);
                // d/dW: [c_in, c_out*kh*kw] = x @ gcols (x^T transposed).
                let gw = matmul_tn_raw(&x_t, &gcols, geo.h * geo.wid, geo.c_in, k_dim);
                let mut grads = vec![Some(GradFlow::Own(gx)), Some(GradFlow::Own(gw))];
                if has_bias {
                    let mut gb = vec![E::ZERO; geo.c_out];
                    for (oc, slot) in gb.iter_mut().enumerate() {
                        let plane = &g[oc * geo.oh * geo.ow..(oc + 1) * geo.oh * geo.ow];
                        let mut acc = E::ZERO;
                        for &v in plane {
                            acc = acc + v;
                        }
                        *slot = acc;
                    }
                    grads.push(Some(GradFlow::Own(gb)));
                }
                grads
            }),
        )
    }

    /// Mean squared error against a target of the same shape; scalar result.
    pub fn mse(&self, target: &Tensor<E>) -> Res<E> {
        same_shape("mse", self, target)?;
        let n = self.numel();
        if n == 0 {
            return Err(NumericsError::Invalid {
                op: "mse",
                msg: "empty tensors".into(),
            });
        }
        let diff: Arc<Vec<E>> = Arc::new(
            self.data()
                .iter()
                .zip(target.data())
                .map(|(&a, &b)| a - b)
                .collect(),
        );
        let sum: f64 = diff.iter().map(|v| v.to_f64() * v.to_f64()).sum();
        let value = E::from_f64(sum / n as f64);
        let diff_b = Arc::clone(&diff);
        Tensor::from_op(
            "mse",
            vec![1],
            vec![value],
            vec![self.clone(), target.clone()],
            Box::new(move |g| {
                let g0 = g[0].to_f64();
                let scale = 2.0 * g0 / n as f64;
                let ga: Vec<E> = diff_b
                    .iter()
                    .map(|&dv| E::from_f64(dv.to_f64() * scale))
                    .collect();
                let gb = ga.iter().map(|&v| -v).collect();
                vec![Some(GradFlow::Own(ga)), Some(GradFlow::Own(gb))]
            }),
        )
    }

    /// Mean over every element; scalar result.
    pub fn mean_all(&self) -> Res<E> {
        let n = self.numel();
        if n == 0 {
            return Err(NumericsError::Invalid {
                op: "mean_all",
                msg: "empty tensor".into(),
            });
        }
        let sum: f64 = self.data().iter().map(|v| v.to_f64()).sum();
        Tensor::from_op(
            "mean_all",
            vec![1],
            vec![E::from_f64(sum / n as f64)],
            vec![self.clone()],
            Box::new(move |g| {
                let gv = E::from_f64(g[0].to_f64() / n as f64);
                vec![Some(GradFlow::Own(vec![gv; n]))]
            }),
        )
    }
}

/// `[c, n]` plane-major to `[n, c]` row-major (and back, since it is its own
/// inverse with swapped arguments).
fn transpose_to_hw_c<E: Element>(data: &[E], rows: usize, cols: usize) -> Vec<E> {
    let mut out = vec![E::ZERO; data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

/// Shared geometry for the lowered transposed convolution.
#[derive(Clone, Copy)]
struct ConvTransposeGeometry {
    c_in: usize,
    c_out: usize,
    h: usize,
    wid: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl ConvTransposeGeometry {
    /// Scatter-add column rows into output planes: row (iy, ix), entry
    /// (oc, ky, kx) lands at out[oc, iy*s - p + ky, ix*s - p + kx].
    fn col2im<E: Element>(&self, cols: &[E], out: &mut [E]) {
        let k_dim = self.c_out * self.kh * self.kw;
        for iy in 0..self.h {
            for ix in 0..self.wid {
                let row = &cols[(iy * self.wid + ix) * k_dim..(iy * self.wid + ix + 1) * k_dim];
                let base_x = (ix * self.stride) as isize - self.pad as isize;
                let kx_lo = (-base_x).max(0) as usize;
                let kx_hi = self.kw.min(((self.ow as isize - base_x).max(0)) as usize);
                if kx_lo >= kx_hi {
                    continue;
                }
                for oc in 0..self.c_out {
                    let plane = &mut out[oc * self.oh * self.ow..(oc + 1) * self.oh * self.ow];
                    for ky in 0..self.kh {
                        let oy = (iy * self.stride + ky) as isize - self.pad as isize;
                        if oy < 0 || oy >= self.oh as isize {
                            continue;
                        }
                        let src = &row[(oc * self.kh + ky) * self.kw + kx_lo
                            ..(oc * self.kh + ky) * self.kw + kx_hi];
                        let dst_start = (oy as usize) * self.ow + (base_x + kx_lo as isize) as usize;
                        let dst = &mut plane[dst_start..dst_start + src.len()];
                        for (o, &v) in dst.iter_mut().zip(src) {
                            *o = *o + v;
                        }
                    }
                }
            }
        }
    }

    /// Gather the output gradient into column layout (zero where a kernel
    /// tap fell outside the output).
    fn im2col<E: Element>(&self, g: &[E]) -> Vec<E> {
        let k_dim = self.c_out * self.kh * self.kw;
        let mut cols = vec![E::ZERO; self.h * self.wid * k_dim];
        for iy in 0..self.h {
            for ix in 0..self.wid {
                let row = &mut cols
                    [(iy * self.wid + ix) * k_dim..(iy * self.wid + ix + 1) * k_dim];
                let base_x = (ix * self.stride) as isize - self.pad as isize;
                let kx_lo = (-base_x).max(0) as usize;
                let kx_hi = self.kw.min(((self.ow as isize - base_x).max(0)) as usize);
                if kx_lo >= kx_hi {
                    continue;
                }
                for oc in 0..self.c_out {
                    let plane = &g[oc * self.oh * self.ow..(oc + 1) * self.oh * self.ow];
                    for ky in 0..self.kh {
                        let oy = (iy * self.stride + ky) as isize - self.pad as isize;
                        if oy < 0 || oy >= self.oh as isize {
                            continue;
                        }
                        let src_start = (oy as usize) * self.ow + (base_x + kx_lo as isize) as usize;
                        let src = &plane[src_start..src_start + (kx_hi - kx_lo)];
                        let dst = &mut row[(oc * self.kh + ky) * self.kw + kx_lo
                            ..(oc * self.kh + ky) * self.kw + kx_hi];
                        dst.copy_from_slice(src);
                    }
                }
            }
        }
        cols
    }
}

fn permute4_raw<E: Element>(data: &[E], shape: [usize; 4], perm: [usize; 4]) -> Vec<E> {
    let out_shape = [shape[perm[0]], shape[perm[1]], shape[perm[2]], shape[perm[3]]];
    let in_strides = [
        shape[1] * shape[2] * shape[3],
        shape[2] * shape[3],
        shape[3],
        1,
    ];
    let strides = [
        in_strides[perm[0]],
        in_strides[perm[1]],
        in_strides[perm[2]],
        in_strides[perm[3]],
    ];
    let mut out = Vec::with_capacity(data.len());
    for a in 0..out_shape[0] {
        for b in 0..out_shape[1] {
            for c in 0..out_shape[2] {
                let base = a * strides[0] + b * strides[1] + c * strides[2];
                for e in 0..out_shape[3] {
                    out.push(data[base + e * strides[3]]);
                }
            }
        }
    }
    out
}

pub(crate) fn permute3_raw<E: Element>(data: &[E], shape: [usize; 3], perm: [usize; 3]) -> Vec<E> {
    let out_shape = [shape[perm[0]], shape[perm[1]], shape[perm[2]]];
    let in_strides = [shape[1] * shape[2], shape[2], 1];
    let strides = [in_strides[perm[0]], in_strides[perm[1]], in_strides[perm[2]]];
    let mut out = Vec::with_capacity(data.len());
    for a in 0..out_shape[0] {
        for b in 0..out_shape[1] {
            let base = a * strides[0] + b * strides[1];
            for c in 0..out_shape[2] {
                out.push(data[base + c * strides[2]]);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::tensor::backward;
    use super::*;

    fn t64(data: &[f64], shape: &[usize]) -> Tensor<f64> {
        Tensor::leaf(data.to_vec(), shape, false).unwrap()
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let y = t64(&[0.0, 0.0, 0.0], &[3]).softmax_lastdim().unwrap();
        for &v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = crate::rng::Rng::new(11);
        let data: Vec<f32> = (0..6 * 17).map(|_| rng.range(-8.0, 8.0) as f32).collect();
        let y = Tensor::<f32>::leaf(data, &[6, 17], false)
            .unwrap()
            .softmax_lastdim()
            .unwrap();
        for row in y.data().chunks_exact(17) {
            let s: f64 = row.iter().map(|&v| v as f64).sum();
            assert!((s - 1.0).abs() < 1e-6, "row sum {s}");
        }
    }

    #[test]
    fn layernorm_constant_row_is_zero_pre_affine() {
        let gamma = t64(&[1.0; 5], &[5]);
        let beta = t64(&[0.0; 5], &[5]);
        let y = t64(&[4.2; 5], &[5]).layernorm(&gamma, &beta, 1e-6).unwrap();
        for &v in y.data() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn layernorm_standardizes_rows() {
        let mut rng = crate::rng::Rng::new(3);
        let d = 32;
        let data: Vec<f64> = (0..4 * d).map(|_| rng.range(-3.0, 9.0)).collect();
        let gamma = t64(&vec![1.0; d], &[d]);
        let beta = t64(&vec![0.0; d], &[d]);
        let y = t64(&data, &[4, d]).layernorm(&gamma, &beta, 1e-6).unwrap();
        for row in y.data().chunks_exact(d) {
            let mean: f64 = row.iter().sum::<f64>() / d as f64;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn conv_transpose_shape_14_to_28() {
        let x = Tensor::<f64>::zeros(&[2, 14, 14]);
        let w = Tensor::<f64>::leaf(vec![0.1; 2 * 3 * 4 * 4], &[2, 3, 4, 4], false).unwrap();
        let y = x.conv_transpose2d(&w, None, 2, 1).unwrap();
        assert_eq!(y.shape(), &[3, 28, 28]);
        let y2 = y.conv_transpose2d(
            &Tensor::leaf(vec![0.1; 3 * 1 * 4 * 4], &[3, 1, 4, 4], false).unwrap(),
            None,
            2,
            1,
        );
        assert_eq!(y2.unwrap().shape(), &[1, 56, 56]);
    }

    /// Direct-summation oracle: y[oc,oy,ox] = sum over contributing input
    /// cells, written independently of the op's loop order.
    fn conv_transpose_oracle(
        x: &[f64],
        w: &[f64],
        c_in: usize,
        h: usize,
        wid: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Vec<f64> {
        let oh = (h - 1) * stride + k - 2 * pad;
        let ow = (wid - 1) * stride + k - 2 * pad;
        let mut out = vec![0.0; c_out * oh * ow];
        for oc in 0..c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ic in 0..c_in {
                        for iy in 0..h {
                            for ix in 0..wid {
                                let ky = oy as isize + pad as isize - (iy * stride) as isize;
                                let kx = ox as isize + pad as isize - (ix * stride) as isize;
                                if ky < 0 || kx < 0 || ky >= k as isize || kx >= k as isize {
                                    continue;
                                }
                                acc += x[(ic * h + iy) * wid + ix]
                                    * w[((ic * c_out + oc) * k + ky as usize) * k + kx as usize];
                            }
                        }
                    }
                    out[(oc * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_transpose_matches_direct_summation() {
        let mut rng = crate::rng::Rng::new(21);
        for &(c_in, h, c_out, k, stride, pad) in
            &[(2usize, 5usize, 3usize, 4usize, 2usize, 1usize), (1, 3, 2, 3, 1, 0), (3, 4, 1, 4, 2, 1)]
        {
            let x: Vec<f64> = (0..c_in * h * h).map(|_| rng.range(-1.0, 1.0)).collect();
            let w: Vec<f64> = (0..c_in * c_out * k * k).map(|_| rng.range(-1.0, 1.0)).collect();
            let y = t64(&x, &[c_in, h, h])
                .conv_transpose2d(&t64(&w, &[c_in, c_out, k, k]), None, stride, pad)
                .unwrap();
            let oracle = conv_transpose_oracle(&x, &w, c_in, h, h, c_out, k, stride, pad);
            assert_eq!(y.numel(), oracle.len());
            for (a, b) in y.data().iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mse_gradient_is_two_diff_over_n() {
        let a = Tensor::<f64>::leaf(vec![1.0, 2.0, 3.0, 4.0], &[4], true).unwrap();
        let b = t64(&[0.0, 1.0, 1.0, 1.0], &[4]);
        let loss = a.mse(&b).unwrap();
        backward(&loss).unwrap();
        let g = a.grad().unwrap();
        let expect = [2.0 * 1.0 / 4.0, 2.0 * 1.0 / 4.0, 2.0 * 2.0 / 4.0, 2.0 * 3.0 / 4.0];
        for (gv, ev) in g.iter().zip(&expect) {
            assert!((gv - ev).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[3, 3]);
        let err = a.add(&b).unwrap_err().to_string();
        assert!(err.contains("add") && err.contains("[2, 3]") && err.contains("[3, 3]"), "{err}");
        let err = a.matmul(&a).unwrap_err().to_string();
        assert!(err.contains("matmul"), "{err}");
    }

    #[test]
    fn matmul_known_product() {
        let a = t64(&[1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let b = t64(&[5.0, 6.0, 7.0, 8.0], &[2, 2]);
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn permute3_round_trip() {
        let mut rng = crate::rng::Rng::new(2);
        let data: Vec<f64> = (0..2 * 3 * 4).map(|_| rng.uniform()).collect();
        let x = t64(&data, &[2, 3, 4]);
        let y = x.permute3([2, 0, 1]).unwrap();
        assert_eq!(y.shape(), &[4, 2, 3]);
        let z = y.permute3([1, 2, 0]).unwrap();
        assert_eq!(z.shape(), &[2, 3, 4]);
        assert_eq!(z.data(), x.data());
    }

    #[test]
    fn gather_scatter_round_trip() {
        let x = t64(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[3, 2]);
        let g = x.gather_rows(&[2, 0]).unwrap();
        assert_eq!(g.data(), &[5.0, 6.0, 1.0, 2.0]);
        let s = g.scatter_rows(&[2, 0], 3).unwrap();
        assert_eq!(s.data(), &[1.0, 2.0, 0.0, 0.0, 5.0, 6.0]);
    }

    #[test]
    fn non_finite_result_is_rejected() {
        let a = Tensor::<f32>::leaf(vec![f32::MAX; 4], &[2, 2], false).unwrap();
        let err = a.matmul(&a).unwrap_err();
        assert!(matches!(err, NumericsError::NonFinite { op: "matmul" }));
    }
}
