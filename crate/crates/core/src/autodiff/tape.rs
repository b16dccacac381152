use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    Affine { x: Var, w: Var, b: Option<Var> },
    MatMul { a: Var, b: Var },
    Hadamard { a: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Scale { a: Var, factor: f64 },
    Sigmoid { a: Var },
    Tanh { a: Var },
    Concat { parts: Vec<Var> },
    Dropout { a: Var, mask: Vec<f64> },
    Gather { a: Var, index: Vec<usize> },
    SegmentSum { a: Var, segment: Vec<usize> },
    SegmentMean { a: Var, segment: Vec<usize>, counts: Vec<usize> },
    /// Per output element, the input row that attained the max/min.
    SegmentPick { a: Var, source: Vec<usize> },
    SegmentStd { a: Var, segment: Vec<usize>, counts: Vec<usize>, mean: Tensor },
    Sum { a: Var },
    Bce { scores: Var, labels: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Lower clamp applied to probabilities inside [`Tape::bce`].
pub const BCE_CLAMP: f64 = 1e-12;

const NO_SOURCE: usize = usize::MAX;

/// Records primitive operations in evaluation order so gradients can be
/// propagated in reverse. One tape serves one forward pass.
pub struct Tape {
    nodes: Vec<Node>,
    train: bool,
    rng: ChaCha8Rng,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients indexed by [`Var`]; `None` for values that do not depend on any leaf.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(t) => t.add_assign(&g),
        None => *slot = Some(g),
    }
}

impl Tape {
    /// Evaluation-mode tape: dropout is the identity.
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            train: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    /// Training-mode tape; dropout masks are drawn from `seed`.
    pub fn training(seed: u64) -> Self {
        Tape {
            nodes: Vec::new(),
            train: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::State(format!("variable {} is not on this tape", v.0)))
        }
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// `x · wᵀ + b` for `x: [n, in]`, `w: [out, in]`, `b: [out]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.shape().len() != 2 || xv.cols() != wv.cols() {
            return Err(shape_err(
                "affine",
                format!("x {:?} vs w {:?}", xv.shape(), wv.shape()),
            ));
        }
        let (n, inp, out) = (xv.rows(), xv.cols(), wv.rows());
        let bias = match b {
            Some(b) => {
                self.check(b)?;
                let bv = self.value(b);
                if bv.len() != out {
                    return Err(shape_err(
                        "affine",
                        format!("bias {:?} for {out} outputs", bv.shape()),
                    ));
                }
                Some(bv.data())
            }
            None => None,
        };
        let (xd, wd) = (xv.data(), wv.data());
        let mut y = vec![0.0; n * out];
        for i in 0..n {
            let xr = &xd[i * inp..(i + 1) * inp];
            let yr = &mut y[i * out..(i + 1) * out];
            for (o, yo) in yr.iter_mut().enumerate() {
                let wr = &wd[o * inp..(o + 1) * inp];
                let mut s = bias.map_or(0.0, |b| b[o]);
                for k in 0..inp {
                    s += xr[k] * wr[k];
                }
                *yo = s;
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(
            Tensor::new(vec![n, out], y)?,
            Op::Affine { x, w, b },
            rg,
        ))
    }

    /// `a · b` for `a: [n, k]`, `b: [k, m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (av, bv) = (self.value(a), self.value(b));
        if bv.shape().len() != 2 || av.cols() != bv.rows() {
            return Err(shape_err(
                "matmul",
                format!("{:?} x {:?}", av.shape(), bv.shape()),
            ));
        }
        let (n, k, m) = (av.rows(), av.cols(), bv.cols());
        let mut y = vec![0.0; n * m];
        for i in 0..n {
            for p in 0..k {
                let aip = av.data()[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let br = &bv.data()[p * m..(p + 1) * m];
                let yr = &mut y[i * m..(i + 1) * m];
                for j in 0..m {
                    yr[j] += aip * br[j];
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![n, m], y)?, Op::MatMul { a, b }, rg))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Tensor, bool)> {
        self.check(a)?;
        self.check(b)?;
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(
                name,
                format!("{:?} vs {:?}", av.shape(), bv.shape()),
            ));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        Ok((t, self.rg(a) || self.rg(b)))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary("hadamard", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Hadamard { a, b }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add { a, b }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary("subtract", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub { a, b }, rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.check(a)?;
        let t = self.value(a).map(|x| x * factor);
        let rg = self.rg(a);
        Ok(self.push(t, Op::Scale { a, factor }, rg))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let t = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        Ok(self.push(t, Op::Sigmoid { a }, rg))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let t = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        Ok(self.push(t, Op::Tanh { a }, rg))
    }

    /// Concatenate matrices with equal row counts along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(shape_err("concat", "no inputs".into()));
        }
        for &p in parts {
            self.check(p)?;
        }
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(shape_err("concat", "row counts differ".into()));
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::new(vec![rows, total], data)?,
            Op::Concat {
                parts: parts.to_vec(),
            },
            rg,
        ))
    }

    /// Inverted dropout: in training mode zero each element with probability
    /// `p` and scale survivors by `1/(1-p)`; identity otherwise.
    pub fn dropout(&mut self, a: Var, p: f64) -> Result<Var> {
        self.check(a)?;
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
        }
        if !self.train || p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(a).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let av = self.value(a);
        let data = av.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Dropout { a, mask }, rg))
    }

    /// Rows of `a` selected by `index` (repeats allowed).
    pub fn gather(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        self.check(a)?;
        let av = self.value(a);
        let (rows, cols) = (av.rows(), av.cols());
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(shape_err("gather", format!("row {bad} of {rows}")));
        }
        let mut data = Vec::with_capacity(index.len() * cols);
        for &i in index {
            data.extend_from_slice(av.row(i));
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(vec![index.len(), cols], data)?,
            Op::Gather {
                a,
                index: index.to_vec(),
            },
            rg,
        ))
    }

    fn check_segments(&self, name: &'static str, a: Var, segment: &[usize], groups: usize) -> Result<()> {
        self.check(a)?;
        let rows = self.value(a).rows();
        if segment.len() != rows {
            return Err(shape_err(
                name,
                format!("{} segment ids for {rows} rows", segment.len()),
            ));
        }
        if let Some(&bad) = segment.iter().find(|&&s| s >= groups) {
            return Err(shape_err(name, format!("segment {bad} of {groups}")));
        }
        Ok(())
    }

    fn segment_sums(&self, a: Var, segment: &[usize], groups: usize) -> (Vec<f64>, Vec<usize>) {
        let av = self.value(a);
        let cols = av.cols();
        let mut out = vec![0.0; groups * cols];
        let mut counts = vec![0usize; groups];
        for (r, &s) in segment.iter().enumerate() {
            counts[s] += 1;
            let o = &mut out[s * cols..(s + 1) * cols];
            for (x, y) in o.iter_mut().zip(av.row(r)) {
                *x += y;
            }
        }
        (out, counts)
    }

    /// Row `s` of the output is the sum of input rows with `segment[r] == s`.
    pub fn scatter_accumulate(&mut self, a: Var, segment: &[usize], groups: usize) -> Result<Var> {
        self.check_segments("scatter_accumulate", a, segment, groups)?;
        let cols = self.value(a).cols();
        let (out, _) = self.segment_sums(a, segment, groups);
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(vec![groups, cols], out)?,
            Op::SegmentSum {
                a,
                segment: segment.to_vec(),
            },
            rg,
        ))
    }

    /// Grouped mean; empty groups give zero rows.
    pub fn segment_mean(&mut self, a: Var, segment: &[usize], groups: usize) -> Result<Var> {
        self.check_segments("segment_mean", a, segment, groups)?;
        let cols = self.value(a).cols();
        let (mut out, counts) = self.segment_sums(a, segment, groups);
        for (s, &c) in counts.iter().enumerate() {
            if c > 0 {
                for x in &mut out[s * cols..(s + 1) * cols] {
                    *x /= c as f64;
                }
            }
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(vec![groups, cols], out)?,
            Op::SegmentMean {
                a,
                segment: segment.to_vec(),
                counts,
            },
            rg,
        ))
    }

    fn segment_pick(
        &mut self,
        name: &'static str,
        a: Var,
        segment: &[usize],
        groups: usize,
        better: fn(f64, f64) -> bool,
    ) -> Result<Var> {
        self.check_segments(name, a, segment, groups)?;
        let av = self.value(a);
        let cols = av.cols();
        let mut out = vec![0.0; groups * cols];
        let mut source = vec![NO_SOURCE; groups * cols];
        for (r, &s) in segment.iter().enumerate() {
            for (c, &x) in av.row(r).iter().enumerate() {
                let k = s * cols + c;
                // strict comparison keeps the first attaining row on ties
                if source[k] == NO_SOURCE || better(x, out[k]) {
                    out[k] = x;
                    source[k] = r;
                }
            }
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(vec![groups, cols], out)?,
            Op::SegmentPick { a, source },
            rg,
        ))
    }

    /// Grouped max; gradient flows to the first row attaining it.
    pub fn segment_max(&mut self, a: Var, segment: &[usize], groups: usize) -> Result<Var> {
        self.segment_pick("segment_max", a, segment, groups, |x, best| x > best)
    }

    /// Grouped min; gradient flows to the first row attaining it.
    pub fn segment_min(&mut self, a: Var, segment: &[usize], groups: usize) -> Result<Var> {
        self.segment_pick("segment_min", a, segment, groups, |x, best| x < best)
    }

    /// Grouped population standard deviation. Zero for empty and singleton
    /// groups; where the deviation is zero the gradient is taken as zero.
    pub fn segment_std(&mut self, a: Var, segment: &[usize], groups: usize) -> Result<Var> {
        self.check_segments("segment_std", a, segment, groups)?;
        let cols = self.value(a).cols();
        let (mut mean, counts) = self.segment_sums(a, segment, groups);
        for (s, &c) in counts.iter().enumerate() {
            if c > 0 {
                for x in &mut mean[s * cols..(s + 1) * cols] {
                    *x /= c as f64;
                }
            }
        }
        let av = self.value(a);
        let mut var = vec![0.0; groups * cols];
        for (r, &s) in segment.iter().enumerate() {
            for (c, &x) in av.row(r).iter().enumerate() {
                let d = x - mean[s * cols + c];
                var[s * cols + c] += d * d;
            }
        }
        let std: Vec<f64> = var
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let c = counts[k / cols.max(1)];
                if c > 1 {
                    (v / c as f64).sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(vec![groups, cols], std)?,
            Op::SegmentStd {
                a,
                segment: segment.to_vec(),
                counts,
                mean: Tensor::new(vec![groups, cols], mean)?,
            },
            rg,
        ))
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        Ok(self.push(Tensor::scalar(s), Op::Sum { a }, rg))
    }

    /// Mean binary cross-entropy of probabilities `scores` against `labels`,
    /// with probabilities clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]`.
    pub fn bce(&mut self, scores: Var, labels: &[f64]) -> Result<Var> {
        self.check(scores)?;
        let sv = self.value(scores);
        if sv.len() != labels.len() || labels.is_empty() {
            return Err(shape_err(
                "bce",
                format!("{} scores vs {} labels", sv.len(), labels.len()),
            ));
        }
        let loss = bce_value(sv.data(), labels);
        let rg = self.rg(scores);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                scores,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::State(
                "backward requested for a value that was never computed".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(shape_err(
                "backward",
                format!("loss must be scalar, got {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(self.value(loss).shape().to_vec(), vec![1.0])?);

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[id];
        let gd = g.data();
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::Affine { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (n, inp, out) = (xv.rows(), xv.cols(), wv.rows());
                if self.rg(*x) {
                    let mut gx = vec![0.0; n * inp];
                    for i in 0..n {
                        let gxr = &mut gx[i * inp..(i + 1) * inp];
                        for o in 0..out {
                            let go = gd[i * out + o];
                            if go == 0.0 {
                                continue;
                            }
                            let wr = wv.row(o);
                            for k in 0..inp {
                                gxr[k] += go * wr[k];
                            }
                        }
                    }
                    accumulate(&mut grads[x.0], Tensor::new(xv.shape().to_vec(), gx).unwrap());
                }
                if self.rg(*w) {
                    let mut gw = vec![0.0; out * inp];
                    for i in 0..n {
                        let xr = xv.row(i);
                        for o in 0..out {
                            let go = gd[i * out + o];
                            if go == 0.0 {
                                continue;
                            }
                            let gwr = &mut gw[o * inp..(o + 1) * inp];
                            for k in 0..inp {
                                gwr[k] += go * xr[k];
                            }
                        }
                    }
                    accumulate(&mut grads[w.0], Tensor::new(wv.shape().to_vec(), gw).unwrap());
                }
                if let Some(b) = b.filter(|b| self.rg(*b)) {
                    let mut gb = vec![0.0; out];
                    for i in 0..n {
                        for o in 0..out {
                            gb[o] += gd[i * out + o];
                        }
                    }
                    let shape = self.value(b).shape().to_vec();
                    accumulate(&mut grads[b.0], Tensor::new(shape, gb).unwrap());
                }
            }
            Op::MatMul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                if self.rg(*a) {
                    let mut ga = vec![0.0; n * k];
                    for i in 0..n {
                        for p in 0..k {
                            let br = bv.row(p);
                            let mut s = 0.0;
                            for j in 0..m {
                                s += gd[i * m + j] * br[j];
                            }
                            ga[i * k + p] = s;
                        }
                    }
                    accumulate(&mut grads[a.0], Tensor::new(av.shape().to_vec(), ga).unwrap());
                }
                if self.rg(*b) {
                    let mut gb = vec![0.0; k * m];
                    for i in 0..n {
                        for p in 0..k {
                            let aip = av.data()[i * k + p];
                            for j in 0..m {
                                gb[p * m + j] += aip * gd[i * m + j];
                            }
                        }
                    }
                    accumulate(&mut grads[b.0], Tensor::new(bv.shape().to_vec(), gb).unwrap());
                }
            }
            Op::Hadamard { a, b } => {
                if self.rg(*a) {
                    let t = self.value(*b);
                    let d = gd.iter().zip(t.data()).map(|(g, y)| g * y).collect();
                    accumulate(&mut grads[a.0], Tensor::new(t.shape().to_vec(), d).unwrap());
                }
                if self.rg(*b) {
                    let t = self.value(*a);
                    let d = gd.iter().zip(t.data()).map(|(g, x)| g * x).collect();
                    accumulate(&mut grads[b.0], Tensor::new(t.shape().to_vec(), d).unwrap());
                }
            }
            Op::Add { a, b } => {
                if self.rg(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if self.rg(*b) {
                    accumulate(&mut grads[b.0], g.clone());
                }
            }
            Op::Sub { a, b } => {
                if self.rg(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if self.rg(*b) {
                    accumulate(&mut grads[b.0], g.map(|x| -x));
                }
            }
            Op::Scale { a, factor } => {
                accumulate(&mut grads[a.0], g.map(|x| x * factor));
            }
            Op::Sigmoid { a } => {
                let y = node.value.data();
                let d = gd.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();
                accumulate(&mut grads[a.0], Tensor::new(g.shape().to_vec(), d).unwrap());
            }
            Op::Tanh { a } => {
                let y = node.value.data();
                let d = gd.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect();
                accumulate(&mut grads[a.0], Tensor::new(g.shape().to_vec(), d).unwrap());
            }
            Op::Concat { parts } => {
                let rows = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let c = pv.cols();
                    if self.rg(p) {
                        let mut d = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            d.extend_from_slice(&gd[r * total + offset..r * total + offset + c]);
                        }
                        accumulate(&mut grads[p.0], Tensor::new(pv.shape().to_vec(), d).unwrap());
                    }
                    offset += c;
                }
            }
            Op::Dropout { a, mask } => {
                let d = gd.iter().zip(mask).map(|(g, m)| g * m).collect();
                accumulate(&mut grads[a.0], Tensor::new(g.shape().to_vec(), d).unwrap());
            }
            Op::Gather { a, index } => {
                let av = self.value(*a);
                let cols = av.cols();
                let mut d = vec![0.0; av.len()];
                for (r, &i) in index.iter().enumerate() {
                    for c in 0..cols {
                        d[i * cols + c] += gd[r * cols + c];
                    }
                }
                accumulate(&mut grads[a.0], Tensor::new(av.shape().to_vec(), d).unwrap());
            }
            Op::SegmentSum { a, segment } => {
                let av = self.value(*a);
                let cols = av.cols();
                let mut d = Vec::with_capacity(av.len());
                for &s in segment {
                    d.extend_from_slice(&gd[s * cols..(s + 1) * cols]);
                }
                accumulate(&mut grads[a.0], Tensor::new(av.shape().to_vec(), d).unwrap());
            }
            Op::SegmentMean { a, segment, counts } => {
                let av = self.value(*a);
                let cols = av.cols();
                let mut d = Vec::with_capacity(av.len());
                for &s in segment {
                    let inv = 1.0 / counts[s] as f64;
                    d.extend(gd[s * cols..(s + 1) * cols].iter().map(|x| x * inv));
                }
                accumulate(&mut grads[a.0], Tensor::new(av.shape().to_vec(), d).unwrap());
            }
            Op::SegmentPick { a, source } => {
                let av = self.value(*a);
                let cols = av.cols();
                let mut d = vec![0.0; av.len()];
                for (k, &r) in source.iter().enumerate() {
                    if r != NO_SOURCE {
                        d[r * cols + k % cols] += gd[k];
                    }
                }
                accumulate(&mut grads[a.0], Tensor::new(av.shape().to_vec(), d).unwrap());
            }
            Op::SegmentStd {
                a,
                segment,
                counts,
                mean,
            } => {
                let av = self.value(*a);
                let cols = av.cols();
                let std = node.value.data();
                let mut d = vec![0.0; av.len()];
                for (r, &s) in segment.iter().enumerate() {
                    let n = counts[s] as f64;
                    for c in 0..cols {
                        let k = s * cols + c;
                        if std[k] > 0.0 {
                            d[r * cols + c] = gd[k] * (av.row(r)[c] - mean.data()[k]) / (n * std[k]);
                        }
                    }
                }
                accumulate(&mut grads[a.0], Tensor::new(av.shape().to_vec(), d).unwrap());
            }
            Op::Sum { a } => {
                let av = self.value(*a);
                accumulate(&mut grads[a.0], Tensor::full(av.shape(), gd[0]));
            }
            Op::Bce { scores, labels } => {
                let sv = self.value(*scores);
                let n = labels.len() as f64;
                let d = sv
                    .data()
                    .iter()
                    .zip(labels)
                    .map(|(&s, &y)| {
                        let c = s.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                        // clamped region is flat
                        if c != s {
                            0.0
                        } else {
                            gd[0] * (-(y / c) + (1.0 - y) / (1.0 - c)) / n
                        }
                    })
                    .collect();
                accumulate(&mut grads[scores.0], Tensor::new(sv.shape().to_vec(), d).unwrap());
            }
        }
    }
}

/// Mean clamped binary cross-entropy.
pub fn bce_value(scores: &[f64], labels: &[f64]) -> f64 {
    let n = labels.len() as f64;
    scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            let c = s.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            -(y * c.ln() + (1.0 - y) * (1.0 - c).ln())
        })
        .sum::<f64>()
        / n
}
