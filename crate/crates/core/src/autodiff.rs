//! Minimal dense-tensor reverse-mode automatic differentiation.
//!
//! All tensors are 2-D row-major f64 matrices owned by a [`Tape`]. Operations
//! append nodes in topological order; [`Tape::backward`] walks the records in
//! reverse and accumulates exact analytic gradients.

use rand::Rng;

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(TensorId, TensorId),
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Div(TensorId, TensorId),
    Scale(TensorId, f64),
    Relu(TensorId),
    LeakyRelu(TensorId, f64),
    RowSoftmax(TensorId),
    SegmentSoftmax(TensorId, Vec<usize>),
    SegmentSum(TensorId, Vec<usize>),
    SegmentMeanBroadcast(TensorId, Vec<usize>),
    MeanRows(TensorId),
    ConcatRows(TensorId, TensorId),
    ConcatCols(TensorId, TensorId),
    GatherRows(TensorId, Vec<usize>),
    RowScale(TensorId, TensorId),
    ChannelMul(TensorId, TensorId),
    ChannelAdd(TensorId, TensorId),
    SqrtEps(TensorId),
    Dropout(TensorId, Vec<f64>),
    CrossEntropy(TensorId, Vec<usize>),
    Mse(TensorId, TensorId),
}

struct Node {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    grad: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, rows: usize, cols: usize, values: Vec<f64>, requires_grad: bool, op: Op) -> TensorId {
        debug_assert_eq!(values.len(), rows * cols);
        let grad = vec![0.0; values.len()];
        self.nodes.push(Node {
            rows,
            cols,
            values,
            grad,
            requires_grad,
            op,
        });
        TensorId(self.nodes.len() - 1)
    }

    /// Leaf tensor that participates in gradients.
    pub fn param(&mut self, values: Vec<f64>, rows: usize, cols: usize) -> Result<TensorId> {
        self.leaf(values, rows, cols, true)
    }

    /// Leaf tensor excluded from gradients.
    pub fn constant(&mut self, values: Vec<f64>, rows: usize, cols: usize) -> Result<TensorId> {
        self.leaf(values, rows, cols, false)
    }

    fn leaf(&mut self, values: Vec<f64>, rows: usize, cols: usize, rg: bool) -> Result<TensorId> {
        if values.len() != rows * cols {
            return Err(CoreError::Dimension(format!(
                "leaf has {} values for shape {rows}x{cols}",
                values.len()
            )));
        }
        Ok(self.push(rows, cols, values, rg, Op::Leaf))
    }

    pub fn shape(&self, id: TensorId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    pub fn values(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].values
    }

    pub fn grad(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].grad
    }

    fn rg2(&self, a: TensorId, b: TensorId) -> bool {
        self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad
    }

    fn check_same_shape(&self, a: TensorId, b: TensorId, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(CoreError::Dimension(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (n, k) = self.shape(a);
        let (k2, m) = self.shape(b);
        if k != k2 {
            return Err(CoreError::Dimension(format!("matmul {n}x{k} by {k2}x{m}")));
        }
        let mut out = vec![0.0; n * m];
        {
            let av = &self.nodes[a.0].values;
            let bv = &self.nodes[b.0].values;
            for i in 0..n {
                for p in 0..k {
                    let av_ip = av[i * k + p];
                    if av_ip == 0.0 {
                        continue;
                    }
                    let brow = &bv[p * m..(p + 1) * m];
                    let orow = &mut out[i * m..(i + 1) * m];
                    for (o, &bb) in orow.iter_mut().zip(brow) {
                        *o += av_ip * bb;
                    }
                }
            }
        }
        Ok(self.push(n, m, out, self.rg2(a, b), Op::Matmul(a, b)))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.check_same_shape(a, b, "add")?;
        let (n, m) = self.shape(a);
        let out: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(&x, &y)| x + y)
            .collect();
        Ok(self.push(n, m, out, self.rg2(a, b), Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.check_same_shape(a, b, "sub")?;
        let (n, m) = self.shape(a);
        let out: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(&x, &y)| x - y)
            .collect();
        Ok(self.push(n, m, out, self.rg2(a, b), Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.check_same_shape(a, b, "mul")?;
        let (n, m) = self.shape(a);
        let out: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(&x, &y)| x * y)
            .collect();
        Ok(self.push(n, m, out, self.rg2(a, b), Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.check_same_shape(a, b, "div")?;
        let (n, m) = self.shape(a);
        let out: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(&x, &y)| x / y)
            .collect();
        Ok(self.push(n, m, out, self.rg2(a, b), Op::Div(a, b)))
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> Result<TensorId> {
        let (n, m) = self.shape(a);
        let rg = self.nodes[a.0].requires_grad;
        let out: Vec<f64> = self.nodes[a.0].values.iter().map(|&x| x * c).collect();
        Ok(self.push(n, m, out, rg, Op::Scale(a, c)))
    }

    pub fn relu(&mut self, a: TensorId) -> Result<TensorId> {
        let (n, m) = self.shape(a);
        let rg = self.nodes[a.0].requires_grad;
        let out: Vec<f64> = self.nodes[a.0].values.iter().map(|&x| x.max(0.0)).collect();
        Ok(self.push(n, m, out, rg, Op::Relu(a)))
    }

    pub fn leaky_relu(&mut self, a: TensorId, slope: f64) -> Result<TensorId> {
        let (n, m) = self.shape(a);
        let rg = self.nodes[a.0].requires_grad;
        let out: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .map(|&x| if x > 0.0 { x } else { slope * x })
            .collect();
        Ok(self.push(n, m, out, rg, Op::LeakyRelu(a, slope)))
    }

    /// Numerically stabilized softmax along each row.
    pub fn row_softmax(&mut self, a: TensorId) -> Result<TensorId> {
        let (n, m) = self.shape(a);
        let rg = self.nodes[a.0].requires_grad;
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let row = &self.nodes[a.0].values[i * m..(i + 1) * m];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (j, &x) in row.iter().enumerate() {
                let e = (x - max).exp();
                out[i * m + j] = e;
                sum += e;
            }
            for j in 0..m {
                out[i * m + j] /= sum;
            }
        }
        Ok(self.push(n, m, out, rg, Op::RowSoftmax(a)))
    }

    /// Softmax over a column vector within each segment. Segment ids may be
    /// arbitrary but must be total over rows.
    pub fn segment_softmax(&mut self, a: TensorId, segments: &[usize]) -> Result<TensorId> {
        let (n, m) = self.shape(a);
        if m != 1 {
            return Err(CoreError::Dimension("segment_softmax expects a column vector".into()));
        }
        if segments.len() != n {
            return Err(CoreError::Dimension("segment ids must cover every row".into()));
        }
        let rg = self.nodes[a.0].requires_grad;
        let num_seg = segments.iter().copied().max().map_or(0, |s| s + 1);
        let mut max = vec![f64::NEG_INFINITY; num_seg];
        for (i, &s) in segments.iter().enumerate() {
            max[s] = max[s].max(self.nodes[a.0].values[i]);
        }
        let mut sum = vec![0.0; num_seg];
        let mut out = vec![0.0; n];
        for (i, &s) in segments.iter().enumerate() {
            let e = (self.nodes[a.0].values[i] - max[s]).exp();
            out[i] = e;
            sum[s] += e;
        }
        for (i, &s) in segments.iter().enumerate() {
            out[i] /= sum[s];
        }
        Ok(self.push(n, 1, out, rg, Op::SegmentSoftmax(a, segments.to_vec())))
    }

    /// Sum rows into `num_segments` output rows by segment id.
    pub fn segment_sum(&mut self, a: TensorId, segments: &[usize], num_segments: usize) -> Result<TensorId> {
        let (n, m) = self.shape(a);
        if segments.len() != n {
            return Err(CoreError::Dimension("segment ids must cover every row".into()));
        }
        if let Some(&s) = segments.iter().max() {
            if s >= num_segments {
                return Err(CoreError::Dimension("segment id out of range".into()));
            }
        }
        let rg = self.nodes[a.0].requires_grad;
        let mut out = vec![0.0; num_segments * m];
        for (i, &s) in segments.iter().enumerate() {
            for j in 0..m {
                out[s * m + j] += self.nodes[a.0].values[i * m + j];
            }
        }
        Ok(self.push(num_segments, m, out, rg, Op::SegmentSum(a, segments.to_vec())))
    }

    /// Replace each row with its segment's per-channel mean (same shape out).
    pub fn segment_mean_broadcast(&mut self, a: TensorId, segments: &[usize]) -> Result<TensorId> {
        let (n, m) = self.shape(a);
        if segments.len() != n {
            return Err(CoreError::Dimension("segment ids must cover every row".into()));
        }
        let rg = self.nodes[a.0].requires_grad;
        let num_seg = segments.iter().copied().max().map_or(0, |s| s + 1);
        let mut sum = vec![0.0; num_seg * m];
        let mut count = vec![0usize; num_seg];
        for (i, &s) in segments.iter().enumerate() {
            count[s] += 1;
            for j in 0..m {
                sum[s * m + j] += self.nodes[a.0].values[i * m + j];
            }
        }
        let mut out = vec![0.0; n * m];
        for (i, &s) in segments.iter().enumerate() {
            for j in 0..m {
                out[i * m + j] = sum[s * m + j] / count[s] as f64;
            }
        }
        Ok(self.push(n, m, out, rg, Op::SegmentMeanBroadcast(a, segments.to_vec())))
    }

    pub fn mean_rows(&mut self, a: TensorId) -> Result<TensorId> {
        let (n, m) = self.shape(a);
        if n == 0 {
            return Err(CoreError::Dimension("mean of zero rows".into()));
        }
        let rg = self.nodes[a.0].requires_grad;
        let mut out = vec![0.0; m];
        for i in 0..n {
            for j in 0..m {
                out[j] += self.nodes[a.0].values[i * m + j];
            }
        }
        out.iter_mut().for_each(|v| *v /= n as f64);
        Ok(self.push(1, m, out, rg, Op::MeanRows(a)))
    }

    pub fn concat_rows(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (na, ma) = self.shape(a);
        let (nb, mb) = self.shape(b);
        if ma != mb {
            return Err(CoreError::Dimension("concat_rows column mismatch".into()));
        }
        let mut out = self.nodes[a.0].values.clone();
        out.extend_from_slice(&self.nodes[b.0].values);
        Ok(self.push(na + nb, ma, out, self.rg2(a, b), Op::ConcatRows(a, b)))
    }

    pub fn concat_cols(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (na, ma) = self.shape(a);
        let (nb, mb) = self.shape(b);
        if na != nb {
            return Err(CoreError::Dimension("concat_cols row mismatch".into()));
        }
        let mut out = Vec::with_capacity(na * (ma + mb));
        for i in 0..na {
            out.extend_from_slice(&self.nodes[a.0].values[i * ma..(i + 1) * ma]);
            out.extend_from_slice(&self.nodes[b.0].values[i * mb..(i + 1) * mb]);
        }
        Ok(self.push(na, ma + mb, out, self.rg2(a, b), Op::ConcatCols(a, b)))
    }

    pub fn gather_rows(&mut self, a: TensorId, indices: &[usize]) -> Result<TensorId> {
        let (n, m) = self.shape(a);
        if indices.iter().any(|&i| i >= n) {
            return Err(CoreError::Dimension("gather index out of range".into()));
        }
        let rg = self.nodes[a.0].requires_grad;
        let mut out = Vec::with_capacity(indices.len() * m);
        for &i in indices {
            out.extend_from_slice(&self.nodes[a.0].values[i * m..(i + 1) * m]);
        }
        Ok(self.push(indices.len(), m, out, rg, Op::GatherRows(a, indices.to_vec())))
    }

    /// Multiply each row of `a` by the matching scalar of column vector `s`.
    pub fn row_scale(&mut self, a: TensorId, s: TensorId) -> Result<TensorId> {
        let (n, m) = self.shape(a);
        let (ns, ms) = self.shape(s);
        if ns != n || ms != 1 {
            return Err(CoreError::Dimension("row_scale expects matching column vector".into()));
        }
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let f = self.nodes[s.0].values[i];
            for j in 0..m {
                out[i * m + j] = self.nodes[a.0].values[i * m + j] * f;
            }
        }
        Ok(self.push(n, m, out, self.rg2(a, s), Op::RowScale(a, s)))
    }

    /// Multiply every row of `a` elementwise by channel vector `w` `[1 x C]`.
    pub fn channel_mul(&mut self, a: TensorId, w: TensorId) -> Result<TensorId> {
        let (n, m) = self.shape(a);
        let (nw, mw) = self.shape(w);
        if nw != 1 || mw != m {
            return Err(CoreError::Dimension("channel_mul expects [1 x C]".into()));
        }
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[i * m + j] = self.nodes[a.0].values[i * m + j] * self.nodes[w.0].values[j];
            }
        }
        Ok(self.push(n, m, out, self.rg2(a, w), Op::ChannelMul(a, w)))
    }

    /// Add channel vector `w` `[1 x C]` to every row of `a`.
    pub fn channel_add(&mut self, a: TensorId, w: TensorId) -> Result<TensorId> {
        let (n, m) = self.shape(a);
        let (nw, mw) = self.shape(w);
        if nw != 1 || mw != m {
            return Err(CoreError::Dimension("channel_add expects [1 x C]".into()));
        }
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[i * m + j] = self.nodes[a.0].values[i * m + j] + self.nodes[w.0].values[j];
            }
        }
        Ok(self.push(n, m, out, self.rg2(a, w), Op::ChannelAdd(a, w)))
    }

    pub fn sqrt_eps(&mut self, a: TensorId, eps: f64) -> Result<TensorId> {
        let (n, m) = self.shape(a);
        let rg = self.nodes[a.0].requires_grad;
        let out: Vec<f64> = self.nodes[a.0].values.iter().map(|&x| (x + eps).sqrt()).collect();
        Ok(self.push(n, m, out, rg, Op::SqrtEps(a)))
    }

    /// Inverted dropout: surviving entries are scaled by 1/(1-p) at train
    /// time. Identity when not training or p = 0.
    pub fn dropout(&mut self, a: TensorId, p: f64, training: bool, rng: &mut impl Rng) -> Result<TensorId> {
        if !(0.0..1.0).contains(&p) {
            return Err(CoreError::Domain(format!("dropout rate {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(a);
        }
        let (n, m) = self.shape(a);
        let rg = self.nodes[a.0].requires_grad;
        let keep = 1.0 - p;
        let mask: Vec<f64> = (0..n * m)
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let out: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .zip(&mask)
            .map(|(&x, &k)| x * k)
            .collect();
        Ok(self.push(n, m, out, rg, Op::Dropout(a, mask)))
    }

    /// Per-graph per-channel normalization with learnable mean scale `alpha`,
    /// gain `gamma` and shift `beta` (each `[1 x C]`).
    pub fn graph_norm(
        &mut self,
        x: TensorId,
        graph_ids: &[usize],
        alpha: TensorId,
        gamma: TensorId,
        beta: TensorId,
    ) -> Result<TensorId> {
        let mu = self.segment_mean_broadcast(x, graph_ids)?;
        let scaled_mu = self.channel_mul(mu, alpha)?;
        let shifted = self.sub(x, scaled_mu)?;
        let sq = self.mul(shifted, shifted)?;
        let var = self.segment_mean_broadcast(sq, graph_ids)?;
        let std = self.sqrt_eps(var, 1e-5)?;
        let norm = self.div(shifted, std)?;
        let gained = self.channel_mul(norm, gamma)?;
        self.channel_add(gained, beta)
    }

    /// Mean over rows of -log softmax(logits) at the true label.
    pub fn cross_entropy(&mut self, logits: TensorId, labels: &[usize]) -> Result<TensorId> {
        let (n, c) = self.shape(logits);
        if labels.len() != n {
            return Err(CoreError::Dimension("one label per row required".into()));
        }
        if labels.iter().any(|&l| l >= c) {
            return Err(CoreError::Domain("label out of range".into()));
        }
        let rg = self.nodes[logits.0].requires_grad;
        let mut loss = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let row = &self.nodes[logits.0].values[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let log_sum: f64 = row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
            loss += log_sum - row[label];
        }
        loss /= n as f64;
        Ok(self.push(1, 1, vec![loss], rg, Op::CrossEntropy(logits, labels.to_vec())))
    }

    pub fn mse(&mut self, pred: TensorId, target: TensorId) -> Result<TensorId> {
        self.check_same_shape(pred, target, "mse")?;
        let n = self.nodes[pred.0].values.len();
        let loss: f64 = self.nodes[pred.0]
            .values
            .iter()
            .zip(&self.nodes[target.0].values)
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum::<f64>()
            / n as f64;
        Ok(self.push(1, 1, vec![loss], self.rg2(pred, target), Op::Mse(pred, target)))
    }

    /// Seed the scalar `loss` with gradient 1 and accumulate gradients into
    /// every tensor reachable backwards from it.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(CoreError::Dimension("backward needs a scalar loss".into()));
        }
        self.nodes[loss.0].grad[0] = 1.0;
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let op = self.nodes[id].op.clone();
            let grad = std::mem::take(&mut self.nodes[id].grad);
            self.propagate(id, &op, &grad);
            self.nodes[id].grad = grad;
        }
        Ok(())
    }

    fn propagate(&mut self, id: usize, op: &Op, g: &[f64]) {
        let (rows, cols) = (self.nodes[id].rows, self.nodes[id].cols);
        match *op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (n, k) = self.shape(a);
                let (_, m) = self.shape(b);
                if self.nodes[a.0].requires_grad {
                    let bv = self.nodes[b.0].values.clone();
                    let ga = &mut self.nodes[a.0].grad;
                    for i in 0..n {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..m {
                                acc += g[i * m + j] * bv[p * m + j];
                            }
                            ga[i * k + p] += acc;
                        }
                    }
                }
                if self.nodes[b.0].requires_grad {
                    let av = self.nodes[a.0].values.clone();
                    let gb = &mut self.nodes[b.0].grad;
                    for p in 0..k {
                        for i in 0..n {
                            let a_ip = av[i * k + p];
                            if a_ip == 0.0 {
                                continue;
                            }
                            for j in 0..m {
                                gb[p * m + j] += a_ip * g[i * m + j];
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                self.accumulate(a, g, 1.0);
                self.accumulate(b, g, 1.0);
            }
            Op::Sub(a, b) => {
                self.accumulate(a, g, 1.0);
                self.accumulate(b, g, -1.0);
            }
            Op::Mul(a, b) => {
                if self.nodes[a.0].requires_grad {
                    let bv = self.nodes[b.0].values.clone();
                    for (i, (&gi, &bi)) in g.iter().zip(&bv).enumerate() {
                        self.nodes[a.0].grad[i] += gi * bi;
                    }
                }
                if self.nodes[b.0].requires_grad {
                    let av = self.nodes[a.0].values.clone();
                    for (i, (&gi, &ai)) in g.iter().zip(&av).enumerate() {
                        self.nodes[b.0].grad[i] += gi * ai;
                    }
                }
            }
            Op::Div(a, b) => {
                let av = self.nodes[a.0].values.clone();
                let bv = self.nodes[b.0].values.clone();
                if self.nodes[a.0].requires_grad {
                    for i in 0..g.len() {
                        self.nodes[a.0].grad[i] += g[i] / bv[i];
                    }
                }
                if self.nodes[b.0].requires_grad {
                    for i in 0..g.len() {
                        self.nodes[b.0].grad[i] -= g[i] * av[i] / (bv[i] * bv[i]);
                    }
                }
            }
            Op::Scale(a, c) => self.accumulate(a, g, c),
            Op::Relu(a) => {
                if self.nodes[a.0].requires_grad {
                    for i in 0..g.len() {
                        if self.nodes[a.0].values[i] > 0.0 {
                            self.nodes[a.0].grad[i] += g[i];
                        }
                    }
                }
            }
            Op::LeakyRelu(a, slope) => {
                if self.nodes[a.0].requires_grad {
                    for i in 0..g.len() {
                        let f = if self.nodes[a.0].values[i] > 0.0 { 1.0 } else { slope };
                        self.nodes[a.0].grad[i] += g[i] * f;
                    }
                }
            }
            Op::RowSoftmax(a) => {
                if self.nodes[a.0].requires_grad {
                    let y = self.nodes[id].values.clone();
                    for i in 0..rows {
                        let dot: f64 = (0..cols).map(|j| g[i * cols + j] * y[i * cols + j]).sum();
                        for j in 0..cols {
                            self.nodes[a.0].grad[i * cols + j] +=
                                y[i * cols + j] * (g[i * cols + j] - dot);
                        }
                    }
                }
            }
            Op::SegmentSoftmax(a, ref segs) => {
                if self.nodes[a.0].requires_grad {
                    let y = self.nodes[id].values.clone();
                    let num_seg = segs.iter().copied().max().map_or(0, |s| s + 1);
                    let mut dot = vec![0.0; num_seg];
                    for (i, &s) in segs.iter().enumerate() {
                        dot[s] += g[i] * y[i];
                    }
                    for (i, &s) in segs.iter().enumerate() {
                        self.nodes[a.0].grad[i] += y[i] * (g[i] - dot[s]);
                    }
                }
            }
            Op::SegmentSum(a, ref segs) => {
                if self.nodes[a.0].requires_grad {
                    for (i, &s) in segs.iter().enumerate() {
                        for j in 0..cols {
                            self.nodes[a.0].grad[i * cols + j] += g[s * cols + j];
                        }
                    }
                }
            }
            Op::SegmentMeanBroadcast(a, ref segs) => {
                if self.nodes[a.0].requires_grad {
                    let num_seg = segs.iter().copied().max().map_or(0, |s| s + 1);
                    let mut gsum = vec![0.0; num_seg * cols];
                    let mut count = vec![0usize; num_seg];
                    for (i, &s) in segs.iter().enumerate() {
                        count[s] += 1;
                        for j in 0..cols {
                            gsum[s * cols + j] += g[i * cols + j];
                        }
                    }
                    for (i, &s) in segs.iter().enumerate() {
                        for j in 0..cols {
                            self.nodes[a.0].grad[i * cols + j] += gsum[s * cols + j] / count[s] as f64;
                        }
                    }
                }
            }
            Op::MeanRows(a) => {
                if self.nodes[a.0].requires_grad {
                    let (n, _) = self.shape(a);
                    for i in 0..n {
                        for j in 0..cols {
                            self.nodes[a.0].grad[i * cols + j] += g[j] / n as f64;
                        }
                    }
                }
            }
            Op::ConcatRows(a, b) => {
                let (na, m) = self.shape(a);
                self.accumulate_slice(a, &g[..na * m]);
                self.accumulate_slice(b, &g[na * m..]);
            }
            Op::ConcatCols(a, b) => {
                let (n, ma) = self.shape(a);
                let (_, mb) = self.shape(b);
                if self.nodes[a.0].requires_grad {
                    for i in 0..n {
                        for j in 0..ma {
                            self.nodes[a.0].grad[i * ma + j] += g[i * (ma + mb) + j];
                        }
                    }
                }
                if self.nodes[b.0].requires_grad {
                    for i in 0..n {
                        for j in 0..mb {
                            self.nodes[b.0].grad[i * mb + j] += g[i * (ma + mb) + ma + j];
                        }
                    }
                }
            }
            Op::GatherRows(a, ref idx) => {
                if self.nodes[a.0].requires_grad {
                    for (r, &i) in idx.iter().enumerate() {
                        for j in 0..cols {
                            self.nodes[a.0].grad[i * cols + j] += g[r * cols + j];
                        }
                    }
                }
            }
            Op::RowScale(a, s) => {
                if self.nodes[a.0].requires_grad {
                    let sv = self.nodes[s.0].values.clone();
                    for i in 0..rows {
                        for j in 0..cols {
                            self.nodes[a.0].grad[i * cols + j] += g[i * cols + j] * sv[i];
                        }
                    }
                }
                if self.nodes[s.0].requires_grad {
                    let av = self.nodes[a.0].values.clone();
                    for i in 0..rows {
                        let mut acc = 0.0;
                        for j in 0..cols {
                            acc += g[i * cols + j] * av[i * cols + j];
                        }
                        self.nodes[s.0].grad[i] += acc;
                    }
                }
            }
            Op::ChannelMul(a, w) => {
                if self.nodes[a.0].requires_grad {
                    let wv = self.nodes[w.0].values.clone();
                    for i in 0..rows {
                        for j in 0..cols {
                            self.nodes[a.0].grad[i * cols + j] += g[i * cols + j] * wv[j];
                        }
                    }
                }
                if self.nodes[w.0].requires_grad {
                    let av = self.nodes[a.0].values.clone();
                    for j in 0..cols {
                        let mut acc = 0.0;
                        for i in 0..rows {
                            acc += g[i * cols + j] * av[i * cols + j];
                        }
                        self.nodes[w.0].grad[j] += acc;
                    }
                }
            }
            Op::ChannelAdd(a, w) => {
                self.accumulate(a, g, 1.0);
                if self.nodes[w.0].requires_grad {
                    for j in 0..cols {
                        let mut acc = 0.0;
                        for i in 0..rows {
                            acc += g[i * cols + j];
                        }
                        self.nodes[w.0].grad[j] += acc;
                    }
                }
            }
            Op::SqrtEps(a) => {
                if self.nodes[a.0].requires_grad {
                    let y = self.nodes[id].values.clone();
                    for i in 0..g.len() {
                        self.nodes[a.0].grad[i] += g[i] / (2.0 * y[i]);
                    }
                }
            }
            Op::Dropout(a, ref mask) => {
                if self.nodes[a.0].requires_grad {
                    for i in 0..g.len() {
                        self.nodes[a.0].grad[i] += g[i] * mask[i];
                    }
                }
            }
            Op::CrossEntropy(logits, ref labels) => {
                if self.nodes[logits.0].requires_grad {
                    let (n, c) = self.shape(logits);
                    let g0 = g[0];
                    for (i, &label) in labels.iter().enumerate() {
                        let row = self.nodes[logits.0].values[i * c..(i + 1) * c].to_vec();
                        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let sum: f64 = row.iter().map(|&x| (x - max).exp()).sum();
                        for j in 0..c {
                            let p = (row[j] - max).exp() / sum;
                            let onehot = (j == label) as u8 as f64;
                            self.nodes[logits.0].grad[i * c + j] += g0 * (p - onehot) / n as f64;
                        }
                    }
                }
            }
            Op::Mse(pred, target) => {
                let n = self.nodes[pred.0].values.len();
                let g0 = g[0];
                let pv = self.nodes[pred.0].values.clone();
                let tv = self.nodes[target.0].values.clone();
                if self.nodes[pred.0].requires_grad {
                    for i in 0..n {
                        self.nodes[pred.0].grad[i] += g0 * 2.0 * (pv[i] - tv[i]) / n as f64;
                    }
                }
                if self.nodes[target.0].requires_grad {
                    for i in 0..n {
                        self.nodes[target.0].grad[i] -= g0 * 2.0 * (pv[i] - tv[i]) / n as f64;
                    }
                }
            }
        }
    }

    fn accumulate(&mut self, target: TensorId, g: &[f64], factor: f64) {
        if self.nodes[target.0].requires_grad {
            for (gt, &gi) in self.nodes[target.0].grad.iter_mut().zip(g) {
                *gt += gi * factor;
            }
        }
    }

    fn accumulate_slice(&mut self, target: TensorId, g: &[f64]) {
        self.accumulate(target, g, 1.0);
    }
}

/// Standard Adam state for a list of parameter buffers.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(param_sizes: &[usize]) -> Self {
        AdamState {
            m: param_sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: param_sizes.iter().map(|&s| vec![0.0; s]).collect(),
            t: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update with bias correction, in place.
pub fn adam_step(
    params: &mut [Vec<f64>],
    grads: &[Vec<f64>],
    state: &mut AdamState,
    cfg: &AdamConfig,
) {
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for (pi, (param, grad)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.m[pi];
        let v = &mut state.v[pi];
        for i in 0..param.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            param[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}
