//! The expansion network: averaged word embeddings for the short text and its
//! memory documents, soft or Gumbel-Softmax attention over the memory, GRU
//! gating between the query and what was read, repeated for a number of hops,
//! and a linear softmax classifier over `[q0, qH]`.
//!
//! The backward pass is written out by hand and retains nothing but the
//! [`ForwardTrace`].

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::numerics::{axpy, dot, sample_gumbel, sigmoid, softmax, tanh, Matrix};
use crate::text::PAD;

pub const DEFAULT_DIM: usize = 100;
pub const DEFAULT_TAU: f64 = 2.0;
pub const DEFAULT_INIT_STD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttentionMode {
    Soft,
    /// Gumbel-Softmax relaxation of sampling one memory cell.
    Hard { tau: f64 },
}

impl AttentionMode {
    pub fn hard() -> Self {
        AttentionMode::Hard { tau: DEFAULT_TAU }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            AttentionMode::Hard { tau } if !(tau > 0.0 && tau.is_finite()) => Err(
                Error::InvalidArgument(format!("temperature must be positive, got {tau}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn is_hard(&self) -> bool {
        matches!(self, AttentionMode::Hard { .. })
    }
}

/// Every trainable matrix. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    /// Short-text word embeddings, V x d.
    pub a: Matrix,
    /// Document word embeddings, V x d.
    pub b: Matrix,
    pub wz: Matrix,
    pub uz: Matrix,
    pub wr: Matrix,
    pub ur: Matrix,
    pub w: Matrix,
    pub u: Matrix,
    /// Classifier, C x 2d.
    pub wy: Matrix,
}

pub type Gradients = ModelParameters;

impl ModelParameters {
    pub fn zeros(vocab_size: usize, dim: usize, num_classes: usize) -> Self {
        let sq = || Matrix::zeros(dim, dim);
        ModelParameters {
            a: Matrix::zeros(vocab_size, dim),
            b: Matrix::zeros(vocab_size, dim),
            wz: sq(),
            uz: sq(),
            wr: sq(),
            ur: sq(),
            w: sq(),
            u: sq(),
            wy: Matrix::zeros(num_classes, 2 * dim),
        }
    }

    /// All entries drawn from N(0, std^2); PAD rows pinned to zero.
    pub fn init<R: Rng + ?Sized>(
        vocab_size: usize,
        dim: usize,
        num_classes: usize,
        std: f64,
        rng: &mut R,
    ) -> Self {
        let mut p = ModelParameters {
            a: Matrix::gaussian(vocab_size, dim, std, rng),
            b: Matrix::gaussian(vocab_size, dim, std, rng),
            wz: Matrix::gaussian(dim, dim, std, rng),
            uz: Matrix::gaussian(dim, dim, std, rng),
            wr: Matrix::gaussian(dim, dim, std, rng),
            ur: Matrix::gaussian(dim, dim, std, rng),
            w: Matrix::gaussian(dim, dim, std, rng),
            u: Matrix::gaussian(dim, dim, std, rng),
            wy: Matrix::gaussian(num_classes, 2 * dim, std, rng),
        };
        p.zero_pad_rows();
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.vocab_size(), self.dim(), self.num_classes())
    }

    pub fn vocab_size(&self) -> usize {
        self.a.rows()
    }

    pub fn dim(&self) -> usize {
        self.a.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.wy.rows()
    }

    pub fn zero_pad_rows(&mut self) {
        self.a.row_mut(PAD as usize).fill(0.0);
        self.b.row_mut(PAD as usize).fill(0.0);
    }

    /// Tensors in checkpoint order: A, B, Wz, Uz, Wr, Ur, W, U, Wy.
    pub fn tensors(&self) -> [&Matrix; 9] {
        [
            &self.a, &self.b, &self.wz, &self.uz, &self.wr, &self.ur, &self.w, &self.u, &self.wy,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix; 9] {
        [
            &mut self.a,
            &mut self.b,
            &mut self.wz,
            &mut self.uz,
            &mut self.wr,
            &mut self.ur,
            &mut self.w,
            &mut self.u,
            &mut self.wy,
        ]
    }

    pub fn tensor_sizes(&self) -> Vec<usize> {
        self.tensors().iter().map(|m| m.as_slice().len()).collect()
    }

    pub fn num_values(&self) -> usize {
        self.tensor_sizes().iter().sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|m| m.as_slice().iter().copied())
            .collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_values() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                flat.len(),
                self.num_values()
            )));
        }
        let mut offset = 0;
        for m in self.tensors_mut() {
            let n = m.as_slice().len();
            m.as_mut_slice().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for m in self.tensors_mut() {
            m.scale(factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|m| m.is_finite())
    }

    fn check_shapes(&self) -> Result<()> {
        let (v, d) = self.a.shape();
        let ok = self.b.shape() == (v, d)
            && [&self.wz, &self.uz, &self.wr, &self.ur, &self.w, &self.u]
                .iter()
                .all(|m| m.shape() == (d, d))
            && self.wy.cols() == 2 * d;
        if ok {
            Ok(())
        } else {
            Err(Error::Shape("inconsistent parameter shapes".into()))
        }
    }
}

/// Token ids of one short text and of its memory slots, real tokens only.
/// An empty memory slot is the EMPTY document.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub query: Vec<u32>,
    pub memory: Vec<Vec<u32>>,
}

impl ModelInput {
    pub fn num_cells(&self) -> usize {
        self.memory.len()
    }
}

fn mean_rows(m: &Matrix, ids: &[u32]) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    let real: Vec<u32> = ids.iter().copied().filter(|&t| t != PAD).collect();
    if real.is_empty() {
        return out;
    }
    for &t in &real {
        axpy(1.0, m.row(t as usize), &mut out);
    }
    let n = real.len() as f64;
    out.iter_mut().for_each(|x| *x /= n);
    out
}

/// Mean of the A rows of the text's tokens.
pub fn embed_short(tokens: &[u32], a: &Matrix) -> Result<Vec<f64>> {
    if tokens.iter().all(|&t| t == PAD) {
        return Err(Error::EmptyInput("short text has no real tokens".into()));
    }
    Ok(mean_rows(a, tokens))
}

/// One row per memory slot: the mean of the document's B rows, or zero for EMPTY.
pub fn embed_memory(memory: &[Vec<u32>], b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(memory.len(), b.cols());
    for (i, doc) in memory.iter().enumerate() {
        out.row_mut(i).copy_from_slice(&mean_rows(b, doc));
    }
    out
}

fn read_memory(weights: &[f64], docs: &Matrix) -> Vec<f64> {
    docs.matvec_t(weights)
}

/// Softmax attention over inner products, and the weighted read.
pub fn attend_soft(q: &[f64], docs: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let scores = docs.matvec(q);
    let a = softmax(&scores);
    let o = read_memory(&a, docs);
    (a, o)
}

/// Gumbel-Softmax attention with the supplied noise.
pub fn attend_hard_with_noise(q: &[f64], docs: &Matrix, noise: &[f64], tau: f64) -> (Vec<f64>, Vec<f64>) {
    let perturbed: Vec<f64> = docs
        .matvec(q)
        .iter()
        .zip(noise)
        .map(|(s, g)| (s + g) / tau)
        .collect();
    let p = softmax(&perturbed);
    let o = read_memory(&p, docs);
    (p, o)
}

/// Gumbel-Softmax attention with fresh noise; returns `(p, o, g)`.
pub fn attend_hard<R: Rng + ?Sized>(
    q: &[f64],
    docs: &Matrix,
    rng: &mut R,
    tau: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let g: Vec<f64> = (0..docs.rows()).map(|_| sample_gumbel(rng)).collect();
    let (p, o) = attend_hard_with_noise(q, docs, &g, tau);
    (p, o, g)
}

/// Gate activations of one GRU fusion step.
#[derive(Debug, Clone, PartialEq)]
pub struct GruStep {
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    /// `U o`, kept for the reset-gate gradient.
    pub u_o: Vec<f64>,
    /// Candidate `o'`.
    pub candidate: Vec<f64>,
    pub output: Vec<f64>,
}

pub fn gru_fuse(q: &[f64], o: &[f64], params: &ModelParameters) -> GruStep {
    let gate = |wq: &Matrix, uo: &Matrix| -> Vec<f64> {
        let mut pre = wq.matvec(q);
        axpy(1.0, &uo.matvec(o), &mut pre);
        pre.into_iter().map(sigmoid).collect()
    };
    let z = gate(&params.wz, &params.uz);
    let r = gate(&params.wr, &params.ur);
    let u_o = params.u.matvec(o);
    let candidate: Vec<f64> = params
        .w
        .matvec(q)
        .iter()
        .zip(r.iter().zip(&u_o))
        .map(|(wq, (ri, uoi))| tanh(wq + ri * uoi))
        .collect();
    let output = q
        .iter()
        .zip(z.iter().zip(&candidate))
        .map(|(qi, (zi, ci))| (1.0 - zi) * qi + zi * ci)
        .collect();
    GruStep {
        z,
        r,
        u_o,
        candidate,
        output,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HopTrace {
    /// Inner products `q . d_i`.
    pub scores: Vec<f64>,
    /// Gumbel draws, HARD mode only.
    pub noise: Option<Vec<f64>>,
    pub weights: Vec<f64>,
    pub read: Vec<f64>,
    pub gru: GruStep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `q` before the first hop and after each hop; length H + 1.
    pub q_hops: Vec<Vec<f64>>,
    pub doc_vecs: Matrix,
    pub hops: Vec<HopTrace>,
    pub q_final: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl ForwardTrace {
    pub fn predicted(&self) -> usize {
        argmax(&self.probs)
    }

    pub fn noise(&self) -> Vec<Vec<f64>> {
        self.hops.iter().filter_map(|h| h.noise.clone()).collect()
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn forward_impl(
    params: &ModelParameters,
    input: &ModelInput,
    mode: AttentionMode,
    hops: usize,
    noise: &mut dyn FnMut(usize, usize) -> Result<Vec<f64>>,
) -> Result<ForwardTrace> {
    mode.validate()?;
    params.check_shapes()?;
    let vocab = params.vocab_size() as u32;
    if input
        .query
        .iter()
        .chain(input.memory.iter().flatten())
        .any(|&t| t >= vocab)
    {
        return Err(Error::Shape("token id outside the embedding table".into()));
    }
    if hops > 0 && input.memory.is_empty() {
        return Err(Error::Shape("memory has no cells".into()));
    }

    let q0 = embed_short(&input.query, &params.a)?;
    let doc_vecs = if hops > 0 {
        embed_memory(&input.memory, &params.b)
    } else {
        Matrix::zeros(0, params.dim())
    };

    let mut q_hops = vec![q0];
    let mut hop_traces = Vec::with_capacity(hops);
    for h in 0..hops {
        let q = q_hops.last().unwrap();
        let scores = doc_vecs.matvec(q);
        let (weights, read, g) = match mode {
            AttentionMode::Soft => {
                let (a, o) = attend_soft(q, &doc_vecs);
                (a, o, None)
            }
            AttentionMode::Hard { tau } => {
                let g = noise(h, doc_vecs.rows())?;
                let (p, o) = attend_hard_with_noise(q, &doc_vecs, &g, tau);
                (p, o, Some(g))
            }
        };
        let gru = gru_fuse(q, &read, params);
        q_hops.push(gru.output.clone());
        hop_traces.push(HopTrace {
            scores,
            noise: g,
            weights,
            read,
            gru,
        });
    }

    let mut q_final = q_hops[0].clone();
    q_final.extend_from_slice(q_hops.last().unwrap());
    let logits = params.wy.matvec(&q_final);
    let probs = softmax(&logits);
    Ok(ForwardTrace {
        q_hops,
        doc_vecs,
        hops: hop_traces,
        q_final,
        logits,
        probs,
    })
}

/// Forward pass drawing Gumbel noise from `rng` (HARD mode only consumes it).
pub fn forward<R: Rng + ?Sized>(
    params: &ModelParameters,
    input: &ModelInput,
    mode: AttentionMode,
    hops: usize,
    rng: &mut R,
) -> Result<ForwardTrace> {
    forward_impl(params, input, mode, hops, &mut |_, k| {
        Ok((0..k).map(|_| sample_gumbel(rng)).collect())
    })
}

/// Forward pass with per-hop Gumbel noise fixed in advance, so the loss is a
/// deterministic function of the parameters.
pub fn forward_with_noise(
    params: &ModelParameters,
    input: &ModelInput,
    mode: AttentionMode,
    hops: usize,
    noise: &[Vec<f64>],
) -> Result<ForwardTrace> {
    forward_impl(params, input, mode, hops, &mut |h, k| match noise.get(h) {
        Some(g) if g.len() == k => Ok(g.clone()),
        _ => Err(Error::Shape(format!("no frozen noise of length {k} for hop {h}"))),
    })
}

/// Cross-entropy of the true class.
pub fn loss(trace: &ForwardTrace, label: usize) -> f64 {
    let max = trace.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + trace.logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    lse - trace.logits[label]
}

fn scatter_mean(grad: &mut Matrix, ids: &[u32], delta: &[f64]) {
    let real: Vec<u32> = ids.iter().copied().filter(|&t| t != PAD).collect();
    if real.is_empty() {
        return;
    }
    let inv = 1.0 / real.len() as f64;
    for &t in &real {
        axpy(inv, delta, grad.row_mut(t as usize));
    }
}

/// Gradient of the loss, scaled by `scale`, added into `grads`.
pub fn backward_into(
    trace: &ForwardTrace,
    input: &ModelInput,
    label: usize,
    params: &ModelParameters,
    mode: AttentionMode,
    scale: f64,
    grads: &mut Gradients,
) -> Result<()> {
    let d = params.dim();
    let hops = trace.hops.len();
    if label >= params.num_classes()
        || trace.q_final.len() != 2 * d
        || trace.q_hops.len() != hops + 1
        || (hops > 0 && trace.doc_vecs.rows() != input.memory.len())
        || grads.a.shape() != params.a.shape()
        || grads.wy.shape() != params.wy.shape()
    {
        return Err(Error::Shape("trace does not match parameters".into()));
    }

    // softmax cross-entropy
    let mut dlogits: Vec<f64> = trace.probs.iter().map(|p| p * scale).collect();
    dlogits[label] -= scale;
    grads.wy.add_outer(&dlogits, &trace.q_final);
    let dq_final = params.wy.matvec_t(&dlogits);
    let mut dq0 = dq_final[..d].to_vec();
    let mut dq = dq_final[d..].to_vec();

    let mut ddocs = Matrix::zeros(trace.doc_vecs.rows(), d);
    for h in (0..hops).rev() {
        let hop = &trace.hops[h];
        let q = &trace.q_hops[h];
        let o = &hop.read;
        let GruStep {
            z, r, u_o, candidate, ..
        } = &hop.gru;

        // q' = (1 - z) q + z o'
        let mut dq_prev: Vec<f64> = dq.iter().zip(z).map(|(g, zi)| g * (1.0 - zi)).collect();
        let dz_pre: Vec<f64> = (0..d)
            .map(|i| dq[i] * (candidate[i] - q[i]) * z[i] * (1.0 - z[i]))
            .collect();
        // o' = tanh(W q + r * U o)
        let dc: Vec<f64> = (0..d)
            .map(|i| dq[i] * z[i] * (1.0 - candidate[i] * candidate[i]))
            .collect();
        let dr_pre: Vec<f64> = (0..d).map(|i| dc[i] * u_o[i] * r[i] * (1.0 - r[i])).collect();
        let du_o: Vec<f64> = (0..d).map(|i| dc[i] * r[i]).collect();

        grads.w.add_outer(&dc, q);
        grads.u.add_outer(&du_o, o);
        grads.wz.add_outer(&dz_pre, q);
        grads.uz.add_outer(&dz_pre, o);
        grads.wr.add_outer(&dr_pre, q);
        grads.ur.add_outer(&dr_pre, o);

        axpy(1.0, &params.w.matvec_t(&dc), &mut dq_prev);
        axpy(1.0, &params.wz.matvec_t(&dz_pre), &mut dq_prev);
        axpy(1.0, &params.wr.matvec_t(&dr_pre), &mut dq_prev);

        let mut d_read = params.u.matvec_t(&du_o);
        axpy(1.0, &params.uz.matvec_t(&dz_pre), &mut d_read);
        axpy(1.0, &params.ur.matvec_t(&dr_pre), &mut d_read);

        // o = sum_i w_i d_i
        let weights = &hop.weights;
        let dweights: Vec<f64> = (0..weights.len())
            .map(|i| dot(&d_read, trace.doc_vecs.row(i)))
            .collect();
        for (i, &wi) in weights.iter().enumerate() {
            axpy(wi, &d_read, ddocs.row_mut(i));
        }
        // softmax over (possibly perturbed and tempered) scores
        let mean: f64 = dot(weights, &dweights);
        let inv_tau = match mode {
            AttentionMode::Soft => 1.0,
            AttentionMode::Hard { tau } => 1.0 / tau,
        };
        let dscores: Vec<f64> = weights
            .iter()
            .zip(&dweights)
            .map(|(wi, dwi)| wi * (dwi - mean) * inv_tau)
            .collect();
        // scores_i = q . d_i
        axpy(1.0, &trace.doc_vecs.matvec_t(&dscores), &mut dq_prev);
        for (i, &ds) in dscores.iter().enumerate() {
            axpy(ds, q, ddocs.row_mut(i));
        }

        dq = dq_prev;
    }
    axpy(1.0, &dq, &mut dq0);

    scatter_mean(&mut grads.a, &input.query, &dq0);
    for (i, doc) in input.memory.iter().enumerate().take(ddocs.rows()) {
        scatter_mean(&mut grads.b, doc, ddocs.row(i));
    }
    grads.zero_pad_rows();
    Ok(())
}

pub fn backward(
    trace: &ForwardTrace,
    input: &ModelInput,
    label: usize,
    params: &ModelParameters,
    mode: AttentionMode,
) -> Result<Gradients> {
    let mut grads = params.zeros_like();
    backward_into(trace, input, label, params, mode, 1.0, &mut grads)?;
    Ok(grads)
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"EXPNCKPT";
const CHECKPOINT_VERSION: u32 = 1;

/// A trained model together with everything needed to run it on new text.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParameters,
    pub mode: AttentionMode,
    pub hops: usize,
    pub memory_size: usize,
    pub short_len: usize,
    pub vocab_hash: u64,
    pub labels: Vec<String>,
}

impl Checkpoint {
    /// Header (magic, version, V, d, C, K, H, mode, tau, short_len, vocab hash),
    /// then A, B, Wz, Uz, Wr, Ur, W, U, Wy as little-endian f64, then label names.
    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.params;
        let mut w = ByteWriter::new();
        w.bytes(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.u64(p.vocab_size() as u64);
        w.u64(p.dim() as u64);
        w.u64(p.num_classes() as u64);
        w.u64(self.memory_size as u64);
        w.u64(self.hops as u64);
        let (mode, tau) = match self.mode {
            AttentionMode::Soft => (0u8, 0.0),
            AttentionMode::Hard { tau } => (1u8, tau),
        };
        w.u8(mode);
        w.f64(tau);
        w.u64(self.short_len as u64);
        w.u64(self.vocab_hash);
        for m in p.tensors() {
            w.f64s(m.as_slice());
        }
        w.u64(self.labels.len() as u64);
        for l in &self.labels {
            w.str(l);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(CHECKPOINT_MAGIC)?;
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let v = r.u64()? as usize;
        let d = r.u64()? as usize;
        let c = r.u64()? as usize;
        let memory_size = r.u64()? as usize;
        let hops = r.u64()? as usize;
        let mode = match (r.u8()?, r.f64()?) {
            (0, _) => AttentionMode::Soft,
            (1, tau) => AttentionMode::Hard { tau },
            (m, _) => return Err(Error::Format(format!("unknown attention mode {m}"))),
        };
        mode.validate()?;
        let short_len = r.u64()? as usize;
        let vocab_hash = r.u64()?;

        let total = v
            .checked_mul(d)
            .and_then(|x| x.checked_mul(2))
            .and_then(|x| x.checked_add(6 * d * d + 2 * c * d))
            .ok_or_else(|| Error::Format("parameter count overflows".into()))?;
        if total.saturating_mul(8) > bytes.len() {
            return Err(Error::Format("header declares more values than the file holds".into()));
        }
        let mut params = ModelParameters::zeros(v, d, c);
        for m in params.tensors_mut() {
            let (rows, cols) = m.shape();
            *m = Matrix::from_vec(rows, cols, r.f64s(rows * cols)?)?;
        }
        if !params.is_finite() {
            return Err(Error::Format("non-finite parameter values".into()));
        }
        let n = r.len(8)?;
        let labels = (0..n).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        r.finish()?;
        if labels.len() != c {
            return Err(Error::Format(format!("{} label names for {c} classes", labels.len())));
        }
        Ok(Checkpoint {
            params,
            mode,
            hops,
            memory_size,
            short_len,
            vocab_hash,
            labels,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_rng;

    fn random_params(seed: u64, v: usize, d: usize, c: usize) -> ModelParameters {
        ModelParameters::init(v, d, c, 0.5, &mut seeded_rng(seed))
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn embed_short_cases() {
        let p = random_params(1, 10, 4, 2);
        assert_eq!(embed_short(&[3], &p.a).unwrap(), p.a.row(3));
        let two = embed_short(&[3, 5], &p.a).unwrap();
        let expected: Vec<f64> = (0..4).map(|j| (p.a.get(3, j) + p.a.get(5, j)) / 2.0).collect();
        assert!(close(&two, &expected, 1e-15));
        assert!(close(&embed_short(&[5, 3, 7], &p.a).unwrap(), &embed_short(&[7, 5, 3], &p.a).unwrap(), 1e-15));
        assert!(embed_short(&[], &p.a).is_err());
        assert!(embed_short(&[PAD, PAD], &p.a).is_err());
    }

    #[test]
    fn embed_memory_cases() {
        let p = random_params(2, 10, 4, 2);
        let m = embed_memory(&[vec![4], vec![4], vec![]], &p.b);
        assert_eq!(m.row(0), p.b.row(4));
        assert_eq!(m.row(0), m.row(1));
        assert!(m.row(2).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn attend_soft_cases() {
        let docs = Matrix::from_vec(3, 2, vec![0.0, 1.0, 0.0, 2.0, 0.0, -3.0]).unwrap();
        let (a, o) = attend_soft(&[1.0, 0.0], &docs);
        assert!(a.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        assert!(close(&o, &[0.0, 0.0], 1e-15));

        let single = Matrix::from_vec(1, 2, vec![0.3, -0.7]).unwrap();
        let (a, o) = attend_soft(&[5.0, 1.0], &single);
        assert_eq!(a, vec![1.0]);
        assert!(close(&o, &[0.3, -0.7], 1e-15));

        // scores 20 vs 0
        let docs = Matrix::from_vec(3, 2, vec![20.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let (a, o) = attend_soft(&[1.0, 0.0], &docs);
        assert!(a[0] > 0.999);
        assert!((o[0] - 20.0).abs() < 20.0 * 1e-6);
    }

    #[test]
    fn attend_hard_frozen_low_temperature() {
        let docs = Matrix::from_vec(4, 1, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let noise = [0.5, -0.2, 0.1, 0.0];
        let (p, _) = attend_hard_with_noise(&[1.0], &docs, &noise, 0.01);
        assert_eq!(argmax(&p), 0);
        assert!(p[0] > 0.999);
    }

    #[test]
    fn gru_all_zero_matrices() {
        let mut p = random_params(3, 5, 3, 2);
        for m in [&mut p.wz, &mut p.uz, &mut p.wr, &mut p.ur, &mut p.w, &mut p.u] {
            m.fill(0.0);
        }
        let q = [0.4, -1.0, 2.0];
        let step = gru_fuse(&q, &[3.0, 1.0, -2.0], &p);
        assert!(step.z.iter().chain(&step.r).all(|&x| x == 0.5));
        assert!(step.candidate.iter().all(|&x| x == 0.0));
        assert!(close(&step.output, &[0.2, -0.5, 1.0], 1e-15));
    }

    /// Scalar, loop-by-loop evaluation of the gate equations at d = 2.
    fn gru_scalar_oracle(q: [f64; 2], o: [f64; 2], p: &ModelParameters) -> [f64; 2] {
        let lin = |m: &Matrix, x: [f64; 2], i: usize| m.get(i, 0) * x[0] + m.get(i, 1) * x[1];
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let mut out = [0.0; 2];
        for i in 0..2 {
            let z = sig(lin(&p.wz, q, i) + lin(&p.uz, o, i));
            let r = sig(lin(&p.wr, q, i) + lin(&p.ur, o, i));
            let c = (lin(&p.w, q, i) + r * lin(&p.u, o, i)).tanh();
            out[i] = (1.0 - z) * q[i] + z * c;
        }
        out
    }

    #[test]
    fn gru_matches_scalar_oracle() {
        let mut rng = seeded_rng(9);
        for seed in 0..10 {
            let p = random_params(seed, 4, 2, 2);
            let q = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let o = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let step = gru_fuse(&q, &o, &p);
            assert!(close(&step.output, &gru_scalar_oracle(q, o, &p), 1e-12));
        }
    }

    fn sample_input(rng: &mut impl Rng, v: u32, k: usize) -> ModelInput {
        let query = (0..rng.random_range(1..5)).map(|_| rng.random_range(1..v)).collect();
        let memory = (0..k)
            .map(|_| (0..rng.random_range(1..8)).map(|_| rng.random_range(1..v)).collect())
            .collect();
        ModelInput { query, memory }
    }

    #[test]
    fn probabilities_normalized_and_loss_cases() {
        let mut rng = seeded_rng(4);
        let p = random_params(4, 20, 6, 3);
        for hops in 0..4 {
            let input = sample_input(&mut rng, 20, 5);
            let t = forward(&p, &input, AttentionMode::Soft, hops, &mut rng).unwrap();
            assert!((t.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert_eq!(t.q_hops.len(), hops + 1);
            for h in &t.hops {
                assert!((h.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }

        let mut t = forward(&p, &sample_input(&mut rng, 20, 5), AttentionMode::Soft, 1, &mut rng).unwrap();
        t.logits = vec![0.0; 3];
        assert!((loss(&t, 1) - 3f64.ln()).abs() < 1e-12);
        t.logits = vec![0.0, 800.0, 0.0];
        assert!(loss(&t, 1).abs() < 1e-12);
        let before = loss(&t, 0);
        t.logits[0] += 1.0;
        assert!(loss(&t, 0) < before);
    }

    #[test]
    fn zero_hops_ignores_memory_and_leaves_gru_gradients_zero() {
        let mut rng = seeded_rng(5);
        let p = random_params(5, 20, 4, 3);
        let a = sample_input(&mut rng, 20, 4);
        let mut b = sample_input(&mut rng, 20, 6);
        b.query = a.query.clone();
        let ta = forward(&p, &a, AttentionMode::Soft, 0, &mut rng).unwrap();
        let tb = forward(&p, &b, AttentionMode::hard(), 0, &mut rng).unwrap();
        assert_eq!(ta, tb);

        let g = backward(&ta, &a, 2, &p, AttentionMode::Soft).unwrap();
        for m in [&g.b, &g.wz, &g.uz, &g.wr, &g.ur, &g.w, &g.u] {
            assert_eq!(m.max_abs(), 0.0);
        }
        assert!(g.a.max_abs() > 0.0);
    }

    #[test]
    fn pad_rows_get_no_gradient() {
        let mut rng = seeded_rng(6);
        let p = random_params(6, 15, 4, 3);
        let mut input = sample_input(&mut rng, 15, 3);
        input.query.push(PAD);
        input.memory[0].push(PAD);
        let t = forward(&p, &input, AttentionMode::Soft, 2, &mut rng).unwrap();
        let g = backward(&t, &input, 0, &p, AttentionMode::Soft).unwrap();
        assert!(g.a.row(0).iter().chain(g.b.row(0)).all(|&x| x == 0.0));
    }

    #[test]
    fn small_gradient_check_both_modes() {
        let mut rng = seeded_rng(10);
        let p = random_params(10, 12, 3, 3);
        let input = sample_input(&mut rng, 12, 3);
        for mode in [AttentionMode::Soft, AttentionMode::Hard { tau: 0.7 }] {
            let trace = forward(&p, &input, mode, 2, &mut rng).unwrap();
            let noise = trace.noise();
            let g = backward(&trace, &input, 1, &p, mode).unwrap().to_flat();
            let mut probe = p.clone();
            let numeric = crate::numerics::finite_diff_grad(
                |theta| {
                    probe.set_flat(theta).unwrap();
                    loss(&forward_with_noise(&probe, &input, mode, 2, &noise).unwrap(), 1)
                },
                &p.to_flat(),
                1e-5,
            );
            for (a, n) in g.iter().zip(&numeric) {
                assert!((a - n).abs() <= 1e-7 + 1e-4 * a.abs().max(n.abs()), "{a} vs {n}");
            }
        }
    }

    #[test]
    fn frozen_noise_must_match_shape() {
        let mut rng = seeded_rng(11);
        let p = random_params(11, 10, 3, 2);
        let input = sample_input(&mut rng, 10, 4);
        assert!(forward_with_noise(&p, &input, AttentionMode::hard(), 2, &[vec![0.0; 4]]).is_err());
        assert!(forward(&p, &input, AttentionMode::Hard { tau: 0.0 }, 1, &mut rng).is_err());
    }

    #[test]
    fn checkpoint_round_trip_and_rejects_garbage() {
        let ckpt = Checkpoint {
            params: random_params(12, 9, 3, 2),
            mode: AttentionMode::Hard { tau: 2.0 },
            hops: 3,
            memory_size: 20,
            short_len: 15,
            vocab_hash: 0xdead_beef,
            labels: vec!["x".into(), "y".into()],
        };
        let bytes = ckpt.to_bytes();
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ckpt);
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[3] = b'?';
        assert!(Checkpoint::from_bytes(&bad).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn gru_output_is_convex_combination(seed in 0u64..10_000, scale in 0.1f64..5.0) {
                let mut rng = seeded_rng(seed);
                let p = ModelParameters::init(4, 5, 2, scale, &mut rng);
                let q = crate::numerics::gaussian_init(5, scale, &mut rng);
                let o = crate::numerics::gaussian_init(5, scale, &mut rng);
                let s = gru_fuse(&q, &o, &p);
                for i in 0..5 {
                    let lo = q[i].min(s.candidate[i]);
                    let hi = q[i].max(s.candidate[i]);
                    prop_assert!(s.output[i] >= lo - 1e-12 && s.output[i] <= hi + 1e-12);
                }
            }

            #[test]
            fn memory_permutation_equivariance(seed in 0u64..10_000, hard in any::<bool>()) {
                let mut rng = seeded_rng(seed);
                let p = ModelParameters::init(20, 4, 3, 0.5, &mut rng);
                let input = sample_input(&mut rng, 20, 5);
                let mode = if hard { AttentionMode::hard() } else { AttentionMode::Soft };
                let t = forward(&p, &input, mode, 2, &mut rng).unwrap();

                let perm = [3usize, 0, 4, 1, 2];
                let permuted = ModelInput {
                    query: input.query.clone(),
                    memory: perm.iter().map(|&i| input.memory[i].clone()).collect(),
                };
                let noise: Vec<Vec<f64>> = t
                    .noise()
                    .iter()
                    .map(|g| perm.iter().map(|&i| g[i]).collect())
                    .collect();
                let tp = forward_with_noise(&p, &permuted, mode, 2, &noise).unwrap();
                for (h, hp) in t.hops.iter().zip(&tp.hops) {
                    for (j, &i) in perm.iter().enumerate() {
                        prop_assert!((hp.weights[j] - h.weights[i]).abs() < 1e-12);
                    }
                    prop_assert!(close(&h.read, &hp.read, 1e-12));
                    prop_assert!(close(&h.gru.output, &hp.gru.output, 1e-12));
                }
                prop_assert!(close(&t.probs, &tp.probs, 1e-12));
            }
        }
    }
}
