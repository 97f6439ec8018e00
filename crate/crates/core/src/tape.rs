//! Reverse-mode autodiff over a per-sample computation tape.
//!
//! Each forward pass appends nodes to a fresh `Tape`; `backward` walks the
//! nodes in reverse, accumulating gradients. Parameters enter the graph as
//! leaves tagged with their `ParamSet` index so per-sample gradients can be
//! folded into a shared accumulator in a fixed order (which keeps batched
//! training bitwise deterministic regardless of thread count).

use crate::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc, Tensor};

pub type NodeId = usize;

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

enum Op {
    Leaf { param: Option<usize> },
    /// a[m,k] * b[k,n]
    Matmul { a: NodeId, b: NodeId },
    /// a[m,k] * b[n,k]^T
    MatmulNT { a: NodeId, b: NodeId },
    /// x[m,n] + bias broadcast over rows (bias shape [n] or [1,n])
    AddBias { x: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    AddConst { x: NodeId },
    AddScalar { x: NodeId },
    Scale { x: NodeId, c: f64 },
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu { x: NodeId },
    Tanh { x: NodeId },
    SoftmaxRows { x: NodeId },
    GatherRows { table: NodeId, ids: Vec<usize> },
    ConcatRows { parts: Vec<NodeId> },
    SliceRows { x: NodeId, start: usize },
    SelectRows { x: NodeId, idx: Vec<usize> },
    SliceCols { x: NodeId, start: usize },
    ConcatCols { parts: Vec<NodeId> },
    /// row-wise x / max(|x|, eps)
    RowNormalize { x: NodeId, norms: Vec<f64> },
    /// bilinear grid interpolation; x is [h0*w0, dim], out [h*w, dim]
    InterpGrid {
        x: NodeId,
        taps: Vec<Vec<(usize, f64)>>,
    },
    /// scalar <x, t> with constant t
    FrobConst { x: NodeId, t: Tensor },
    /// scalar sum of row-wise NLL at target indices
    CrossEntropySum {
        logits: NodeId,
        targets: Vec<usize>,
        probs: Tensor,
    },
    /// scalar sum of squared errors against a constant target
    MseSum { pred: NodeId, target: Tensor },
    Dropout { x: NodeId, mask: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    /// Constant leaf: no gradient is tracked.
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf { param: None })
    }

    /// Parameter leaf tagged with its `ParamSet` index.
    pub fn param(&mut self, t: Tensor, pid: usize) -> NodeId {
        self.push(t, Op::Leaf { param: Some(pid) })
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (m, ka) = self.nodes[a].value.dims2();
        let (kb, n) = self.nodes[b].value.dims2();
        assert_eq!(ka, kb, "matmul inner dims");
        let mut out = vec![0.0; m * n];
        gemm_acc(&mut out, self.nodes[a].value.data(), self.nodes[b].value.data(), m, ka, n);
        self.push(Tensor::from_vec(&[m, n], out), Op::Matmul { a, b })
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (m, ka) = self.nodes[a].value.dims2();
        let (n, kb) = self.nodes[b].value.dims2();
        assert_eq!(ka, kb, "matmul_nt inner dims");
        let mut out = vec![0.0; m * n];
        gemm_nt_acc(&mut out, self.nodes[a].value.data(), self.nodes[b].value.data(), m, ka, n);
        self.push(Tensor::from_vec(&[m, n], out), Op::MatmulNT { a, b })
    }

    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> NodeId {
        let (m, n) = self.nodes[x].value.dims2();
        let bias = &self.nodes[b].value;
        assert_eq!(bias.numel(), n, "bias length");
        let mut out = self.nodes[x].value.data().to_vec();
        for i in 0..m {
            for (o, &bv) in out[i * n..(i + 1) * n].iter_mut().zip(bias.data()) {
                *o += bv;
            }
        }
        self.push(Tensor::from_vec(&[m, n], out), Op::AddBias { x, b })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.nodes[a].value.shape(), self.nodes[b].value.shape());
        let mut out = self.nodes[a].value.clone();
        out.add_assign(&self.nodes[b].value);
        self.push(out, Op::Add { a, b })
    }

    /// Add a constant tensor (no gradient for the constant).
    pub fn add_const(&mut self, x: NodeId, c: &Tensor) -> NodeId {
        assert_eq!(self.nodes[x].value.shape(), c.shape());
        let mut out = self.nodes[x].value.clone();
        for (o, &v) in out.data_mut().iter_mut().zip(c.data()) {
            *o += v;
        }
        self.push(out, Op::AddConst { x })
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        let mut out = self.nodes[x].value.clone();
        for o in out.data_mut() {
            *o += c;
        }
        self.push(out, Op::AddScalar { x })
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let mut out = self.nodes[x].value.clone();
        out.scale_in_place(c);
        self.push(out, Op::Scale { x, c })
    }

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> NodeId {
        let (m, n) = self.nodes[x].value.dims2();
        assert_eq!(self.nodes[gamma].value.numel(), n);
        assert_eq!(self.nodes[beta].value.numel(), n);
        let mut out = vec![0.0; m * n];
        let mut means = vec![0.0; m];
        let mut rstds = vec![0.0; m];
        {
            let xv = self.nodes[x].value.data();
            let g = self.nodes[gamma].value.data();
            let bt = self.nodes[beta].value.data();
            for i in 0..m {
                let row = &xv[i * n..(i + 1) * n];
                let mean = row.iter().sum::<f64>() / n as f64;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                let rstd = 1.0 / (var + eps).sqrt();
                means[i] = mean;
                rstds[i] = rstd;
                for j in 0..n {
                    out[i * n + j] = (row[j] - mean) * rstd * g[j] + bt[j];
                }
            }
        }
        self.push(
            Tensor::from_vec(&[m, n], out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean: means,
                rstd: rstds,
            },
        )
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let mut out = self.nodes[x].value.clone();
        for v in out.data_mut() {
            *v = 0.5 * *v * (1.0 + libm::erf(*v / SQRT_2));
        }
        self.push(out, Op::Gelu { x })
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let mut out = self.nodes[x].value.clone();
        for v in out.data_mut() {
            *v = v.tanh();
        }
        self.push(out, Op::Tanh { x })
    }

    /// Row-wise softmax. A row whose maximum is -inf (fully masked) maps to
    /// all zeros, which keeps fully padded queries finite.
    pub fn softmax_rows(&mut self, x: NodeId) -> NodeId {
        let (m, n) = self.nodes[x].value.dims2();
        let mut out = vec![0.0; m * n];
        {
            let xv = self.nodes[x].value.data();
            for i in 0..m {
                let row = &xv[i * n..(i + 1) * n];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    continue;
                }
                let o = &mut out[i * n..(i + 1) * n];
                let mut sum = 0.0;
                for (oj, &v) in o.iter_mut().zip(row) {
                    *oj = (v - max).exp();
                    sum += *oj;
                }
                for oj in o.iter_mut() {
                    *oj /= sum;
                }
            }
        }
        self.push(Tensor::from_vec(&[m, n], out), Op::SoftmaxRows { x })
    }

    pub fn gather_rows(&mut self, table: NodeId, ids: &[usize]) -> NodeId {
        let (v, n) = self.nodes[table].value.dims2();
        let mut out = Vec::with_capacity(ids.len() * n);
        for &id in ids {
            assert!(id < v, "gather id {id} out of range {v}");
            out.extend_from_slice(self.nodes[table].value.row(id));
        }
        self.push(
            Tensor::from_vec(&[ids.len(), n], out),
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let n = self.nodes[parts[0]].value.dims2().1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (m, np) = self.nodes[p].value.dims2();
            assert_eq!(np, n, "concat_rows column mismatch");
            rows += m;
            out.extend_from_slice(self.nodes[p].value.data());
        }
        self.push(
            Tensor::from_vec(&[rows, n], out),
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
        )
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let (m, n) = self.nodes[x].value.dims2();
        assert!(start + len <= m);
        let data = self.nodes[x].value.data()[start * n..(start + len) * n].to_vec();
        self.push(Tensor::from_vec(&[len, n], data), Op::SliceRows { x, start })
    }

    pub fn select_rows(&mut self, x: NodeId, idx: &[usize]) -> NodeId {
        let (m, n) = self.nodes[x].value.dims2();
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            assert!(i < m);
            out.extend_from_slice(self.nodes[x].value.row(i));
        }
        self.push(
            Tensor::from_vec(&[idx.len(), n], out),
            Op::SelectRows {
                x,
                idx: idx.to_vec(),
            },
        )
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let (m, n) = self.nodes[x].value.dims2();
        assert!(start + len <= n);
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&self.nodes[x].value.row(i)[start..start + len]);
        }
        self.push(Tensor::from_vec(&[m, len], out), Op::SliceCols { x, start })
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let m = self.nodes[parts[0]].value.dims2().0;
        let total: usize = parts.iter().map(|&p| self.nodes[p].value.dims2().1).sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                out.extend_from_slice(self.nodes[p].value.row(i));
            }
        }
        self.push(
            Tensor::from_vec(&[m, total], out),
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
        )
    }

    /// Row-wise L2 normalization with the norm floored at 1e-12, so zero
    /// rows map to zero rows.
    pub fn row_normalize(&mut self, x: NodeId) -> NodeId {
        let (m, n) = self.nodes[x].value.dims2();
        let mut out = vec![0.0; m * n];
        let mut norms = vec![0.0; m];
        {
            let xv = self.nodes[x].value.data();
            for i in 0..m {
                let row = &xv[i * n..(i + 1) * n];
                let norm = row.iter().map(|&v| v * v).sum::<f64>().sqrt().max(1e-12);
                norms[i] = norm;
                for j in 0..n {
                    out[i * n + j] = row[j] / norm;
                }
            }
        }
        self.push(Tensor::from_vec(&[m, n], out), Op::RowNormalize { x, norms })
    }

    /// Bilinear interpolation of a flattened `[h0*w0, dim]` grid using
    /// precomputed taps (see `image::posgrid::bilinear_taps`).
    pub fn interp_grid(&mut self, x: NodeId, taps: Vec<Vec<(usize, f64)>>) -> NodeId {
        let (_, dim) = self.nodes[x].value.dims2();
        let cells = taps.len();
        let mut out = vec![0.0; cells * dim];
        {
            let src = self.nodes[x].value.data();
            for (cell, cell_taps) in taps.iter().enumerate() {
                let dst = &mut out[cell * dim..(cell + 1) * dim];
                for &(s, w) in cell_taps {
                    for (d, &v) in dst.iter_mut().zip(&src[s * dim..(s + 1) * dim]) {
                        *d += w * v;
                    }
                }
            }
        }
        self.push(Tensor::from_vec(&[cells, dim], out), Op::InterpGrid { x, taps })
    }

    /// Frobenius inner product with a constant matrix; returns a scalar node.
    pub fn frob_const(&mut self, x: NodeId, t: Tensor) -> NodeId {
        assert_eq!(self.nodes[x].value.shape(), t.shape());
        let v = self
            .nodes[x]
            .value
            .data()
            .iter()
            .zip(t.data())
            .map(|(&a, &b)| a * b)
            .sum();
        self.push(Tensor::scalar(v), Op::FrobConst { x, t })
    }

    /// Sum over rows of the negative log-likelihood at the target index.
    pub fn cross_entropy_sum(&mut self, logits: NodeId, targets: &[usize]) -> NodeId {
        let (m, n) = self.nodes[logits].value.dims2();
        assert_eq!(targets.len(), m);
        let mut probs = vec![0.0; m * n];
        let mut nll = 0.0;
        {
            let xv = self.nodes[logits].value.data();
            for i in 0..m {
                let row = &xv[i * n..(i + 1) * n];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                let p = &mut probs[i * n..(i + 1) * n];
                for (pj, &v) in p.iter_mut().zip(row) {
                    *pj = (v - max).exp();
                    sum += *pj;
                }
                for pj in p.iter_mut() {
                    *pj /= sum;
                }
                assert!(targets[i] < n, "target out of range");
                nll += max + sum.ln() - row[targets[i]];
            }
        }
        self.push(
            Tensor::scalar(nll),
            Op::CrossEntropySum {
                logits,
                targets: targets.to_vec(),
                probs: Tensor::from_vec(&[m, n], probs),
            },
        )
    }

    /// Sum of squared differences against a constant target; scalar node.
    pub fn mse_sum(&mut self, pred: NodeId, target: Tensor) -> NodeId {
        assert_eq!(self.nodes[pred].value.shape(), target.shape());
        let v = self
            .nodes[pred]
            .value
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        self.push(Tensor::scalar(v), Op::MseSum { pred, target })
    }

    /// Inverted dropout with keep-probability `1 - p`.
    pub fn dropout(&mut self, x: NodeId, p: f64, rng: &mut impl rand::Rng) -> NodeId {
        assert!((0.0..1.0).contains(&p));
        if p == 0.0 {
            let mask = vec![1.0; self.nodes[x].value.numel()];
            let out = self.nodes[x].value.clone();
            return self.push(out, Op::Dropout { x, mask });
        }
        let scale = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.nodes[x].value.numel())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { scale })
            .collect();
        let mut out = self.nodes[x].value.clone();
        for (o, &m) in out.data_mut().iter_mut().zip(&mask) {
            *o *= m;
        }
        self.push(out, Op::Dropout { x, mask })
    }

    /// Run backprop from the seeded nodes. Returns one gradient slot per node.
    pub fn backward(&self, seeds: Vec<(NodeId, Tensor)>) -> Vec<Option<Tensor>> {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        for (id, g) in seeds {
            assert_eq!(self.nodes[id].value.shape(), g.shape(), "seed shape");
            match &mut grads[id] {
                Some(acc) => acc.add_assign(&g),
                slot => *slot = Some(g),
            }
        }
        for id in (0..self.nodes.len()).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            self.propagate(id, &grad, &mut grads);
            grads[id] = Some(grad);
        }
        grads
    }

    /// Scalar-seed convenience for loss nodes.
    pub fn backward_scalars(&self, seeds: &[(NodeId, f64)]) -> Vec<Option<Tensor>> {
        self.backward(
            seeds
                .iter()
                .map(|&(id, v)| (id, Tensor::scalar(v)))
                .collect(),
        )
    }

    /// Fold parameter-leaf gradients into an accumulator indexed by pid.
    pub fn accumulate_param_grads(&self, grads: &[Option<Tensor>], out: &mut [Tensor]) {
        for (id, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(pid) } = node.op {
                if let Some(g) = &grads[id] {
                    out[pid].add_assign(g);
                }
            }
        }
    }

    fn propagate(&self, id: NodeId, grad: &Tensor, grads: &mut Vec<Option<Tensor>>) {
        let add_to = |grads: &mut Vec<Option<Tensor>>, target: NodeId, g: Tensor| {
            match &mut grads[target] {
                Some(acc) => acc.add_assign(&g),
                slot => *slot = Some(g),
            }
        };
        match &self.nodes[id].op {
            Op::Matmul { a, b } => {
                let (m, k) = self.nodes[*a].value.dims2();
                let n = self.nodes[*b].value.dims2().1;
                let mut da = vec![0.0; m * k];
                gemm_nt_acc(&mut da, grad.data(), self.nodes[*b].value.data(), m, n, k);
                add_to(grads, *a, Tensor::from_vec(&[m, k], da));
                let mut db = vec![0.0; k * n];
                gemm_tn_acc(&mut db, self.nodes[*a].value.data(), grad.data(), k, m, n);
                // gemm_tn_acc computes a^T * grad with a: [m,k] -> out [k,n]
                add_to(grads, *b, Tensor::from_vec(&[k, n], db));
            }
            Op::MatmulNT { a, b } => {
                // out = a * b^T; da = grad * b; db = grad^T * a
                let (m, k) = self.nodes[*a].value.dims2();
                let n = self.nodes[*b].value.dims2().0;
                let mut da = vec![0.0; m * k];
                gemm_acc(&mut da, grad.data(), self.nodes[*b].value.data(), m, n, k);
                add_to(grads, *a, Tensor::from_vec(&[m, k], da));
                let mut db = vec![0.0; n * k];
                gemm_tn_acc(&mut db, grad.data(), self.nodes[*a].value.data(), n, m, k);
                add_to(grads, *b, Tensor::from_vec(&[n, k], db));
            }
            Op::AddBias { x, b } => {
                add_to(grads, *x, grad.clone());
                let (m, n) = grad.dims2();
                let mut db = vec![0.0; n];
                for i in 0..m {
                    for (d, &g) in db.iter_mut().zip(grad.row(i)) {
                        *d += g;
                    }
                }
                let shape = self.nodes[*b].value.shape().to_vec();
                add_to(grads, *b, Tensor::from_vec(&shape, db));
            }
            Op::Add { a, b } => {
                add_to(grads, *a, grad.clone());
                add_to(grads, *b, grad.clone());
            }
            Op::AddConst { x } | Op::AddScalar { x } => {
                add_to(grads, *x, grad.clone());
            }
            Op::Scale { x, c } => {
                let mut g = grad.clone();
                g.scale_in_place(*c);
                add_to(grads, *x, g);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                rstd,
            } => {
                let (m, n) = grad.dims2();
                let xv = self.nodes[*x].value.data();
                let g = self.nodes[*gamma].value.data();
                let mut dx = vec![0.0; m * n];
                let mut dgamma = vec![0.0; n];
                let mut dbeta = vec![0.0; n];
                for i in 0..m {
                    let row = &xv[i * n..(i + 1) * n];
                    let gr = grad.row(i);
                    let (mu, r) = (mean[i], rstd[i]);
                    // xhat and the two row reductions
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for j in 0..n {
                        let xhat = (row[j] - mu) * r;
                        let dxhat = gr[j] * g[j];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                        dgamma[j] += gr[j] * xhat;
                        dbeta[j] += gr[j];
                    }
                    let inv_n = 1.0 / n as f64;
                    for j in 0..n {
                        let xhat = (row[j] - mu) * r;
                        let dxhat = gr[j] * g[j];
                        dx[i * n + j] =
                            r * (dxhat - inv_n * sum_dxhat - xhat * inv_n * sum_dxhat_xhat);
                    }
                }
                add_to(grads, *x, Tensor::from_vec(&[m, n], dx));
                let gshape = self.nodes[*gamma].value.shape().to_vec();
                let bshape = self.nodes[*beta].value.shape().to_vec();
                add_to(grads, *gamma, Tensor::from_vec(&gshape, dgamma));
                add_to(grads, *beta, Tensor::from_vec(&bshape, dbeta));
            }
            Op::Gelu { x } => {
                let mut dx = grad.clone();
                for (d, &v) in dx.data_mut().iter_mut().zip(self.nodes[*x].value.data()) {
                    let cdf = 0.5 * (1.0 + libm::erf(v / SQRT_2));
                    let pdf = INV_SQRT_2PI * (-0.5 * v * v).exp();
                    *d *= cdf + v * pdf;
                }
                add_to(grads, *x, dx);
            }
            Op::Tanh { x } => {
                let mut dx = grad.clone();
                for (d, &y) in dx.data_mut().iter_mut().zip(self.nodes[id].value.data()) {
                    *d *= 1.0 - y * y;
                }
                add_to(grads, *x, dx);
            }
            Op::SoftmaxRows { x } => {
                let (m, n) = grad.dims2();
                let y = self.nodes[id].value.data();
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    let yr = &y[i * n..(i + 1) * n];
                    let gr = grad.row(i);
                    let dot: f64 = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for j in 0..n {
                        dx[i * n + j] = yr[j] * (gr[j] - dot);
                    }
                }
                add_to(grads, *x, Tensor::from_vec(&[m, n], dx));
            }
            Op::GatherRows { table, ids } => {
                let (v, n) = self.nodes[*table].value.dims2();
                let mut dt = vec![0.0; v * n];
                for (r, &id_) in ids.iter().enumerate() {
                    for (d, &g) in dt[id_ * n..(id_ + 1) * n].iter_mut().zip(grad.row(r)) {
                        *d += g;
                    }
                }
                add_to(grads, *table, Tensor::from_vec(&[v, n], dt));
            }
            Op::ConcatRows { parts } => {
                let n = grad.dims2().1;
                let mut offset = 0;
                for &p in parts {
                    let m = self.nodes[p].value.dims2().0;
                    let slice = grad.data()[offset * n..(offset + m) * n].to_vec();
                    add_to(grads, p, Tensor::from_vec(&[m, n], slice));
                    offset += m;
                }
            }
            Op::SliceRows { x, start } => {
                let (mx, n) = self.nodes[*x].value.dims2();
                let (m, _) = grad.dims2();
                let mut dx = vec![0.0; mx * n];
                dx[start * n..(start + m) * n].copy_from_slice(grad.data());
                add_to(grads, *x, Tensor::from_vec(&[mx, n], dx));
            }
            Op::SelectRows { x, idx } => {
                let (mx, n) = self.nodes[*x].value.dims2();
                let mut dx = vec![0.0; mx * n];
                for (r, &i) in idx.iter().enumerate() {
                    for (d, &g) in dx[i * n..(i + 1) * n].iter_mut().zip(grad.row(r)) {
                        *d += g;
                    }
                }
                add_to(grads, *x, Tensor::from_vec(&[mx, n], dx));
            }
            Op::SliceCols { x, start } => {
                let (m, nx) = self.nodes[*x].value.dims2();
                let (_, len) = grad.dims2();
                let mut dx = vec![0.0; m * nx];
                for i in 0..m {
                    dx[i * nx + start..i * nx + start + len].copy_from_slice(grad.row(i));
                }
                add_to(grads, *x, Tensor::from_vec(&[m, nx], dx));
            }
            Op::ConcatCols { parts } => {
                let m = grad.dims2().0;
                let mut offset = 0;
                for &p in parts {
                    let np = self.nodes[p].value.dims2().1;
                    let mut dp = Vec::with_capacity(m * np);
                    for i in 0..m {
                        dp.extend_from_slice(&grad.row(i)[offset..offset + np]);
                    }
                    add_to(grads, p, Tensor::from_vec(&[m, np], dp));
                    offset += np;
                }
            }
            Op::RowNormalize { x, norms } => {
                let (m, n) = grad.dims2();
                let y = self.nodes[id].value.data();
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    let yr = &y[i * n..(i + 1) * n];
                    let gr = grad.row(i);
                    let dot: f64 = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for j in 0..n {
                        dx[i * n + j] = (gr[j] - yr[j] * dot) / norms[i];
                    }
                }
                add_to(grads, *x, Tensor::from_vec(&[m, n], dx));
            }
            Op::InterpGrid { x, taps } => {
                let (cells0, dim) = self.nodes[*x].value.dims2();
                let mut dx = vec![0.0; cells0 * dim];
                for (cell, cell_taps) in taps.iter().enumerate() {
                    let g = grad.row(cell);
                    for &(s, w) in cell_taps {
                        for (d, &gv) in dx[s * dim..(s + 1) * dim].iter_mut().zip(g) {
                            *d += w * gv;
                        }
                    }
                }
                add_to(grads, *x, Tensor::from_vec(&[cells0, dim], dx));
            }
            Op::FrobConst { x, t } => {
                let s = grad.item();
                let mut dx = t.clone();
                dx.scale_in_place(s);
                add_to(grads, *x, dx);
            }
            Op::CrossEntropySum {
                logits,
                targets,
                probs,
            } => {
                let s = grad.item();
                let (m, n) = probs.dims2();
                let mut dl = probs.data().to_vec();
                for (i, &t) in targets.iter().enumerate() {
                    dl[i * n + t] -= 1.0;
                }
                for d in &mut dl {
                    *d *= s;
                }
                add_to(grads, *logits, Tensor::from_vec(&[m, n], dl));
            }
            Op::MseSum { pred, target } => {
                let s = grad.item();
                let mut dp = self.nodes[*pred].value.clone();
                for (d, &t) in dp.data_mut().iter_mut().zip(target.data()) {
                    *d = 2.0 * s * (*d - t);
                }
                add_to(grads, *pred, dp);
            }
            Op::Dropout { x, mask } => {
                let mut dx = grad.clone();
                for (d, &m) in dx.data_mut().iter_mut().zip(mask) {
                    *d *= m;
                }
                add_to(grads, *x, dx);
            }
            Op::Leaf { .. } => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;
    use rand::Rng;

    fn rand_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect())
    }

    /// Central finite differences on every input element of a scalar-valued
    /// graph. `build` must be a pure function of its inputs.
    fn fd_check(inputs: &[Tensor], build: impl Fn(&mut Tape, &[NodeId]) -> NodeId) {
        let run = |ins: &[Tensor]| -> (f64, Vec<Option<Tensor>>, Vec<NodeId>) {
            let mut tape = Tape::new();
            let ids: Vec<NodeId> = ins.iter().enumerate().map(|(i, t)| tape.param(t.clone(), i)).collect();
            let out = build(&mut tape, &ids);
            let val = tape.value(out).item();
            let grads = tape.backward_scalars(&[(out, 1.0)]);
            (val, grads, ids)
        };
        let (_, grads, ids) = run(inputs);
        let h = 1e-5;
        for (pi, t) in inputs.iter().enumerate() {
            let analytic = grads[ids[pi]].clone().unwrap_or_else(|| Tensor::zeros(t.shape()));
            for e in 0..t.numel() {
                let mut plus = inputs.to_vec();
                plus[pi].data_mut()[e] += h;
                let mut minus = inputs.to_vec();
                minus[pi].data_mut()[e] -= h;
                let fd = (run(&plus).0 - run(&minus).0) / (2.0 * h);
                let an = analytic.data()[e];
                let denom = an.abs().max(fd.abs()).max(1e-4);
                assert!(
                    ((an - fd) / denom).abs() < 1e-6,
                    "input {pi} elem {e}: analytic {an}, fd {fd}"
                );
            }
        }
    }

    #[test]
    fn matmul_bias_gelu_chain_gradients() {
        let mut rng = seeds::rng(1);
        let x = rand_tensor(&[3, 4], &mut rng);
        let w = rand_tensor(&[4, 5], &mut rng);
        let b = rand_tensor(&[5], &mut rng);
        let probe = rand_tensor(&[3, 5], &mut rng);
        fd_check(&[x, w, b], |tape, ids| {
            let y = tape.matmul(ids[0], ids[1]);
            let y = tape.add_bias(y, ids[2]);
            let y = tape.gelu(y);
            tape.frob_const(y, probe.clone())
        });
    }

    #[test]
    fn layer_norm_gradients() {
        let mut rng = seeds::rng(2);
        let x = rand_tensor(&[4, 6], &mut rng);
        let g = rand_tensor(&[6], &mut rng);
        let b = rand_tensor(&[6], &mut rng);
        let probe = rand_tensor(&[4, 6], &mut rng);
        fd_check(&[x, g, b], |tape, ids| {
            let y = tape.layer_norm(ids[0], ids[1], ids[2], 1e-6);
            tape.frob_const(y, probe.clone())
        });
    }

    #[test]
    fn softmax_attention_block_gradients() {
        let mut rng = seeds::rng(3);
        let q = rand_tensor(&[3, 4], &mut rng);
        let k = rand_tensor(&[3, 4], &mut rng);
        let v = rand_tensor(&[3, 4], &mut rng);
        let probe = rand_tensor(&[3, 4], &mut rng);
        fd_check(&[q, k, v], |tape, ids| {
            let scores = tape.matmul_nt(ids[0], ids[1]);
            let scores = tape.scale(scores, 0.5);
            let attn = tape.softmax_rows(scores);
            let ctx = tape.matmul(attn, ids[2]);
            tape.frob_const(ctx, probe.clone())
        });
    }

    #[test]
    fn masked_softmax_ignores_masked_keys() {
        let mut rng = seeds::rng(4);
        let q = rand_tensor(&[2, 3], &mut rng);
        let k = rand_tensor(&[4, 3], &mut rng);
        let mut mask = Tensor::zeros(&[2, 4]);
        mask.set2(0, 3, f64::NEG_INFINITY);
        mask.set2(1, 3, f64::NEG_INFINITY);
        let mut tape = Tape::new();
        let qn = tape.constant(q);
        let kn = tape.constant(k);
        let scores = tape.matmul_nt(qn, kn);
        let masked = tape.add_const(scores, &mask);
        let attn = tape.softmax_rows(masked);
        for i in 0..2 {
            assert_eq!(tape.value(attn).at2(i, 3), 0.0);
            let sum: f64 = tape.value(attn).row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fully_masked_row_yields_zeros_not_nan() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[1, 3], f64::NEG_INFINITY));
        let y = tape.softmax_rows(x);
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gather_slice_concat_gradients() {
        let mut rng = seeds::rng(5);
        let table = rand_tensor(&[6, 3], &mut rng);
        let probe = rand_tensor(&[4, 3], &mut rng);
        fd_check(&[table], |tape, ids| {
            let rows = tape.gather_rows(ids[0], &[1, 1, 4, 5]);
            let head = tape.slice_rows(rows, 0, 2);
            let tail = tape.slice_rows(rows, 2, 2);
            let cat = tape.concat_rows(&[head, tail]);
            tape.frob_const(cat, probe.clone())
        });
    }

    #[test]
    fn column_ops_gradients() {
        let mut rng = seeds::rng(6);
        let x = rand_tensor(&[3, 6], &mut rng);
        let probe = rand_tensor(&[3, 6], &mut rng);
        fd_check(&[x], |tape, ids| {
            let a = tape.slice_cols(ids[0], 0, 2);
            let b = tape.slice_cols(ids[0], 2, 4);
            let cat = tape.concat_cols(&[a, b]);
            tape.frob_const(cat, probe.clone())
        });
    }

    #[test]
    fn row_normalize_gradients() {
        let mut rng = seeds::rng(7);
        let x = rand_tensor(&[4, 5], &mut rng);
        let probe = rand_tensor(&[4, 5], &mut rng);
        fd_check(&[x], |tape, ids| {
            let y = tape.row_normalize(ids[0]);
            tape.frob_const(y, probe.clone())
        });
    }

    #[test]
    fn interp_grid_gradients() {
        let mut rng = seeds::rng(8);
        let grid = rand_tensor(&[6, 3], &mut rng); // 2x3 grid, dim 3
        let taps = crate::image::posgrid::bilinear_taps(2, 3, 3, 4);
        let probe = rand_tensor(&[12, 3], &mut rng);
        fd_check(&[grid], |tape, ids| {
            let y = tape.interp_grid(ids[0], taps.clone());
            tape.frob_const(y, probe.clone())
        });
    }

    #[test]
    fn cross_entropy_gradients() {
        let mut rng = seeds::rng(9);
        let logits = rand_tensor(&[3, 5], &mut rng);
        fd_check(&[logits], |tape, ids| {
            tape.cross_entropy_sum(ids[0], &[2, 0, 4])
        });
    }

    #[test]
    fn mse_tanh_gradients() {
        let mut rng = seeds::rng(10);
        let x = rand_tensor(&[2, 3], &mut rng);
        let target = rand_tensor(&[2, 3], &mut rng);
        fd_check(&[x], |tape, ids| {
            let y = tape.tanh(ids[0]);
            tape.mse_sum(y, target.clone())
        });
    }

    #[test]
    fn add_scale_paths_gradients() {
        let mut rng = seeds::rng(11);
        let a = rand_tensor(&[2, 2], &mut rng);
        let b = rand_tensor(&[2, 2], &mut rng);
        let probe = rand_tensor(&[2, 2], &mut rng);
        let c = rand_tensor(&[2, 2], &mut rng);
        fd_check(&[a, b], |tape, ids| {
            let s = tape.add(ids[0], ids[1]);
            let s = tape.scale(s, -1.3);
            let s = tape.add_scalar(s, 0.7);
            let s = tape.add_const(s, &c);
            tape.frob_const(s, probe.clone())
        });
    }

    #[test]
    fn param_grads_accumulate_across_multiple_uses() {
        let mut rng = seeds::rng(12);
        let w = rand_tensor(&[3, 3], &mut rng);
        let x = rand_tensor(&[2, 3], &mut rng);
        let probe = rand_tensor(&[2, 3], &mut rng);

        let mut tape = Tape::new();
        let w1 = tape.param(w.clone(), 0);
        let w2 = tape.param(w.clone(), 0); // same parameter used twice
        let xn = tape.constant(x);
        let y1 = tape.matmul(xn, w1);
        let y2 = tape.matmul(y1, w2);
        let out = tape.frob_const(y2, probe);
        let grads = tape.backward_scalars(&[(out, 1.0)]);
        let mut acc = vec![Tensor::zeros(&[3, 3])];
        tape.accumulate_param_grads(&grads, &mut acc);
        // both uses contribute
        let g1 = grads[w1].as_ref().unwrap();
        let g2 = grads[w2].as_ref().unwrap();
        let mut expect = g1.clone();
        expect.add_assign(g2);
        assert_eq!(acc[0], expect);
    }
}
