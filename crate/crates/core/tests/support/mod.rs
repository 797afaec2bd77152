//! Independent `f64` reference implementations and central finite
//! differences, shared by the gradient tests and the acceptance suite.
#![allow(dead_code)]

use forgetmi::autodiff::{Tape, Var};
use forgetmi::datagen::IMAGE_PIXELS;
use forgetmi::model::{forward_on_tape, Batch, BundleVars, ModelParams, ParamId, GATE_EPS, TOKEN_DIM};
use forgetmi::seed::rng_from_seed;
use forgetmi::unlearn::{loss_mr_on_tape, loss_mu_on_tape, loss_ur_on_tape, loss_uu_on_tape};
use forgetmi::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;
pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const INSTANCES: usize = 100;

/// Smallest distance allowed between an instance and a kink of any
/// non-smooth operation it passes through.
pub const KINK_MARGIN: f64 = 1e-4;

pub fn central_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize) -> f64 {
    let mut xp = x.to_vec();
    xp[i] = x[i] + FD_STEP;
    let up = f(&xp);
    xp[i] = x[i] - FD_STEP;
    let down = f(&xp);
    (up - down) / (2.0 * FD_STEP)
}

/// `‖a − b‖ / max(‖b‖, 1e-8)`; `b` is the reference.
pub fn relative_error(analytic: &[f64], reference: &[f64]) -> f64 {
    assert_eq!(analytic.len(), reference.len());
    let diff: f64 = analytic
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = reference.iter().map(|b| b * b).sum::<f64>().sqrt();
    diff / norm.max(1e-8)
}

pub fn to_f64(xs: &[f32]) -> Vec<f64> {
    xs.iter().map(|&x| f64::from(x)).collect()
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Uniform values with magnitude at least `0.05 * scale`.
pub fn uniform_away_from_zero(rng: &mut ChaCha8Rng, n: usize, scale: f32) -> Vec<f32> {
    (0..n)
        .map(|_| {
            let m = rng.random_range(0.05f32..1.0) * scale;
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

// ---- dense helpers (row-major) ---------------------------------------------

pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i * k + t] * b[t * n + j];
            }
            out[i * n + j] = s;
        }
    }
    out
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Per-row softmax cross-entropy.
pub fn cross_entropy(logits: &[f64], labels: &[usize], classes: usize) -> Vec<f64> {
    labels
        .iter()
        .enumerate()
        .map(|(r, &y)| {
            let row = &logits[r * classes..(r + 1) * classes];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
            z.ln() - (row[y] - max)
        })
        .collect()
}

// ---- model oracle -------------------------------------------------------------

/// Parameters in `ParamId::ALL` order, as `f64`.
#[derive(Clone, Debug)]
pub struct OracleParams {
    pub tensors: Vec<Vec<f64>>,
    pub beta: f64,
}

impl OracleParams {
    pub fn from_model(p: &ModelParams) -> Self {
        Self {
            tensors: p.tensors().iter().map(|t| to_f64(t.data())).collect(),
            beta: f64::from(p.beta()),
        }
    }

    fn get(&self, id: ParamId) -> &[f64] {
        &self.tensors[ParamId::ALL.iter().position(|p| *p == id).unwrap()]
    }
}

/// Per-row embeddings and logits.
#[derive(Clone, Debug)]
pub struct OracleBundle {
    pub img: Vec<Vec<f64>>,
    pub txt: Vec<Vec<f64>>,
    pub joint: Vec<Vec<f64>>,
    pub logits: Vec<Vec<f64>>,
    /// Closest approach to a relu hinge or to the gate's `min(1, ·)` cap.
    pub margin: f64,
}

fn affine_row(x: &[f64], w: &[f64], b: &[f64], margin: Option<&mut f64>) -> Vec<f64> {
    let n = b.len();
    let mut out = b.to_vec();
    for (i, xi) in x.iter().enumerate() {
        for j in 0..n {
            out[j] += xi * w[i * n + j];
        }
    }
    if let Some(m) = margin {
        for v in &mut out {
            *m = m.min(v.abs());
            *v = v.max(0.0);
        }
    }
    out
}

pub fn oracle_forward(p: &OracleParams, images: &[Vec<f64>], tokens: &[Vec<usize>]) -> OracleBundle {
    let mut margin = f64::INFINITY;
    let mut out = OracleBundle {
        img: vec![],
        txt: vec![],
        joint: vec![],
        logits: vec![],
        margin,
    };
    let table = p.get(ParamId::TokenEmbedding);
    for (x, bag) in images.iter().zip(tokens) {
        let h = affine_row(x, p.get(ParamId::ImageW1), p.get(ParamId::ImageB1), Some(&mut margin));
        let img = affine_row(&h, p.get(ParamId::ImageW2), p.get(ParamId::ImageB2), Some(&mut margin));

        let mut pooled = vec![0.0; TOKEN_DIM];
        for &id in bag {
            for (o, v) in pooled.iter_mut().zip(&table[id * TOKEN_DIM..(id + 1) * TOKEN_DIM]) {
                *o += v;
            }
        }
        pooled.iter_mut().for_each(|v| *v /= bag.len() as f64);
        let txt = affine_row(&pooled, p.get(ParamId::TextW), p.get(ParamId::TextB), Some(&mut margin));

        let both: Vec<f64> = img.iter().chain(&txt).copied().collect();
        let g = affine_row(&both, p.get(ParamId::GateW), p.get(ParamId::GateB), Some(&mut margin));
        let t = affine_row(&txt, p.get(ParamId::ShiftW), p.get(ParamId::ShiftB), None);
        let shift: Vec<f64> = g.iter().zip(&t).map(|(a, b)| a * b).collect();
        let ratio = norm(&img) / (norm(&shift) + f64::from(GATE_EPS));
        margin = margin.min((ratio - 1.0).abs());
        let alpha = p.beta * ratio.min(1.0);
        let joint: Vec<f64> = img.iter().zip(&shift).map(|(a, s)| a + alpha * s).collect();
        let logits = affine_row(&joint, p.get(ParamId::HeadW), p.get(ParamId::HeadB), None);

        out.img.push(img);
        out.txt.push(txt);
        out.joint.push(joint);
        out.logits.push(logits);
    }
    out.margin = margin;
    out
}

fn unimodal(b: &OracleBundle, r: usize) -> Vec<f64> {
    b.img[r].iter().chain(&b.txt[r]).copied().collect()
}

fn mean_dist(rows: usize, f: impl Fn(usize) -> f64) -> f64 {
    (0..rows).map(f).sum::<f64>() / rows as f64
}

/// The four unlearning losses `[uu, ur, mu, mr]`.
pub fn oracle_losses(ul_f: &OracleBundle, og_n: &OracleBundle, ul_r: &OracleBundle, og_r: &OracleBundle) -> [f64; 4] {
    let nf = ul_f.img.len();
    let nr = ul_r.img.len();
    [
        -mean_dist(nf, |r| dist(&unimodal(ul_f, r), &unimodal(og_n, r))),
        mean_dist(nr, |r| dist(&unimodal(ul_r, r), &unimodal(og_r, r))),
        -mean_dist(nf, |r| dist(&ul_f.joint[r], &og_n.joint[r])),
        mean_dist(nr, |r| dist(&ul_r.joint[r], &og_r.joint[r])),
    ]
}

/// Smallest per-row distance among the four loss pairings.
pub fn loss_distance_margin(ul_f: &OracleBundle, og_n: &OracleBundle, ul_r: &OracleBundle, og_r: &OracleBundle) -> f64 {
    let mut m = f64::INFINITY;
    for r in 0..ul_f.img.len() {
        m = m.min(dist(&unimodal(ul_f, r), &unimodal(og_n, r)));
        m = m.min(dist(&ul_f.joint[r], &og_n.joint[r]));
    }
    for r in 0..ul_r.img.len() {
        m = m.min(dist(&unimodal(ul_r, r), &unimodal(og_r, r)));
        m = m.min(dist(&ul_r.joint[r], &og_r.joint[r]));
    }
    m
}

// ---- loss-gradient instances -------------------------------------------------

pub const INSTANCE_VOCAB: usize = 6;
pub const INSTANCE_ROWS: usize = 2;
pub const COORDS_PER_TENSOR: usize = 8;

/// Two independently initialized models with non-zero biases and four
/// two-sample batches (forget, noisy forget, retain).
pub struct LossInstance {
    pub ul: ModelParams,
    pub og: ModelParams,
    pub forget: Batch,
    pub noisy: Batch,
    pub retain: Batch,
}

fn random_params(rng: &mut ChaCha8Rng) -> ModelParams {
    let mut p = ModelParams::init(INSTANCE_VOCAB, rng.random_range(0.2f32..0.8), rng.random());
    for id in ParamId::ALL {
        let t = p.get_mut(id);
        if t.rank() == 1 {
            for v in t.data_mut() {
                *v = rng.random_range(-0.2f32..0.2);
            }
        }
    }
    p
}

fn random_batch(rng: &mut ChaCha8Rng) -> Batch {
    let images = uniform(rng, INSTANCE_ROWS * IMAGE_PIXELS, 0.0, 1.0);
    let tokens = (0..INSTANCE_ROWS)
        .map(|_| {
            let len = rng.random_range(1..5);
            (0..len).map(|_| rng.random_range(0..INSTANCE_VOCAB)).collect()
        })
        .collect();
    Batch {
        images: Tensor::new(vec![INSTANCE_ROWS, IMAGE_PIXELS], images).unwrap(),
        tokens,
        labels: vec![0; INSTANCE_ROWS],
    }
}

fn image_rows(b: &Batch) -> Vec<Vec<f64>> {
    (0..b.len()).map(|r| to_f64(b.images.row(r))).collect()
}

impl LossInstance {
    /// Draws instances until one sits at least `KINK_MARGIN` from every
    /// non-smooth point; returns it with the number of rejected draws.
    pub fn sample(seed: u64) -> (Self, usize) {
        let mut rng = rng_from_seed(seed);
        for rejected in 0.. {
            let inst = LossInstance {
                ul: random_params(&mut rng),
                og: random_params(&mut rng),
                forget: random_batch(&mut rng),
                noisy: random_batch(&mut rng),
                retain: random_batch(&mut rng),
            };
            let ul = OracleParams::from_model(&inst.ul);
            if inst.oracle(&ul).1 > KINK_MARGIN {
                return (inst, rejected);
            }
        }
        unreachable!()
    }

    /// Oracle losses at `ul` and the instance's kink margin.
    pub fn oracle(&self, ul: &OracleParams) -> ([f64; 4], f64) {
        let og = OracleParams::from_model(&self.og);
        let ul_f = oracle_forward(ul, &image_rows(&self.forget), &self.forget.tokens);
        let og_n = oracle_forward(&og, &image_rows(&self.noisy), &self.noisy.tokens);
        let ul_r = oracle_forward(ul, &image_rows(&self.retain), &self.retain.tokens);
        let og_r = oracle_forward(&og, &image_rows(&self.retain), &self.retain.tokens);
        let margin = [
            ul_f.margin,
            og_n.margin,
            ul_r.margin,
            og_r.margin,
            loss_distance_margin(&ul_f, &og_n, &ul_r, &og_r),
        ]
        .into_iter()
        .fold(f64::INFINITY, f64::min);
        (oracle_losses(&ul_f, &og_n, &ul_r, &og_r), margin)
    }

    /// Tape gradients of the four losses with respect to every `ul` tensor,
    /// indexed `[loss][tensor]`.
    pub fn tape_gradients(&self) -> Vec<Vec<Vec<f32>>> {
        type LossFn = fn(&mut Tape, &BundleVars, &BundleVars) -> forgetmi::Result<Var>;
        let fns: [(LossFn, bool); 4] = [
            (loss_uu_on_tape, true),
            (loss_ur_on_tape, false),
            (loss_mu_on_tape, true),
            (loss_mr_on_tape, false),
        ];
        fns.iter()
            .map(|&(f, on_forget)| {
                let mut tape = Tape::new();
                let pu = self.ul.register(&mut tape, true);
                let po = self.og.register(&mut tape, false);
                let loss = if on_forget {
                    let a = forward_on_tape(&mut tape, &pu, &self.forget).unwrap();
                    let b = forward_on_tape(&mut tape, &po, &self.noisy).unwrap();
                    f(&mut tape, &a, &b).unwrap()
                } else {
                    let a = forward_on_tape(&mut tape, &pu, &self.retain).unwrap();
                    let b = forward_on_tape(&mut tape, &po, &self.retain).unwrap();
                    f(&mut tape, &a, &b).unwrap()
                };
                tape.backward(loss).unwrap();
                pu.all().iter().map(|&v| tape.take_grad(v).unwrap()).collect()
            })
            .collect()
    }

    /// Coordinates to difference: `COORDS_PER_TENSOR` per tensor, drawn from
    /// the rows actually used by the batches for the token table.
    pub fn coordinates(&self, seed: u64) -> Vec<(usize, usize)> {
        let mut rng = rng_from_seed(seed ^ 0x5eed);
        let mut used: Vec<usize> = self
            .forget
            .tokens
            .iter()
            .chain(&self.retain.tokens)
            .flatten()
            .copied()
            .collect();
        used.sort_unstable();
        used.dedup();
        let mut out = Vec::new();
        for (t, id) in ParamId::ALL.iter().enumerate() {
            let len = self.ul.get(*id).len();
            for _ in 0..COORDS_PER_TENSOR {
                let i = if *id == ParamId::TokenEmbedding {
                    used[rng.random_range(0..used.len())] * TOKEN_DIM + rng.random_range(0..TOKEN_DIM)
                } else {
                    rng.random_range(0..len)
                };
                out.push((t, i));
            }
        }
        out
    }

    /// Worst relative error over the four losses for one instance.
    pub fn check(&self, seed: u64) -> [f64; 4] {
        let grads = self.tape_gradients();
        let coords = self.coordinates(seed);
        let base = OracleParams::from_model(&self.ul);
        let mut fd = vec![[0.0f64; 4]; coords.len()];
        for (c, &(t, i)) in coords.iter().enumerate() {
            let mut p = base.clone();
            p.tensors[t][i] = base.tensors[t][i] + FD_STEP;
            let up = self.oracle(&p).0;
            p.tensors[t][i] = base.tensors[t][i] - FD_STEP;
            let down = self.oracle(&p).0;
            for l in 0..4 {
                fd[c][l] = (up[l] - down[l]) / (2.0 * FD_STEP);
            }
        }
        let mut errs = [0.0; 4];
        for l in 0..4 {
            let analytic: Vec<f64> = coords.iter().map(|&(t, i)| f64::from(grads[l][t][i])).collect();
            let reference: Vec<f64> = fd.iter().map(|g| g[l]).collect();
            errs[l] = relative_error(&analytic, &reference);
        }
        errs
    }
}

// ---- primitive instances -------------------------------------------------------

pub type TapeFn = Box<dyn Fn(&mut Tape, &[Var]) -> Var>;
pub type ReferenceFn = Box<dyn Fn(&[Vec<f64>]) -> Vec<f64>>;

/// One differentiable primitive applied to tracked leaves, paired with its
/// `f64` reference.
pub struct PrimitiveCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub on_tape: TapeFn,
    pub reference: ReferenceFn,
}

/// Random projection weights so every output element contributes.
fn projection(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    uniform(rng, n, -1.0, 1.0)
}

impl PrimitiveCase {
    /// Relative error between tape and finite-difference gradients of
    /// `Σ c ⊙ op(inputs)` with respect to every input.
    pub fn check(&self, rng: &mut ChaCha8Rng) -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.inputs.iter().map(|t| tape.leaf(t.clone().tracked())).collect();
        let out = (self.on_tape)(&mut tape, &vars);
        let shape = tape.shape(out).to_vec();
        let n: usize = shape.iter().product();
        let c = projection(rng, n);
        let cv = tape.constant(Tensor::new(shape, c.clone()).unwrap());
        let prod = tape.mul(out, cv).unwrap();
        let mean = tape.mean(prod, None).unwrap();
        let loss = tape.scale(mean, n as f32);
        tape.backward(loss).unwrap();

        let c64 = to_f64(&c);
        let xs: Vec<Vec<f64>> = self.inputs.iter().map(|t| to_f64(t.data())).collect();
        let mut analytic = Vec::new();
        let mut reference = Vec::new();
        for (k, v) in vars.iter().enumerate() {
            analytic.extend(to_f64(tape.grad(*v).unwrap()));
            let mut f = |x: &[f64]| {
                let mut all = xs.clone();
                all[k] = x.to_vec();
                (self.reference)(&all).iter().zip(&c64).map(|(a, b)| a * b).sum::<f64>()
            };
            for i in 0..xs[k].len() {
                reference.push(central_difference(&mut f, &xs[k], i));
            }
        }
        relative_error(&analytic, &reference)
    }
}

fn t2(rows: usize, cols: usize, data: Vec<f32>) -> Tensor {
    Tensor::new(vec![rows, cols], data).unwrap()
}

/// A random instance of every differentiable primitive, kept away from kinks.
pub fn primitive_cases(rng: &mut ChaCha8Rng) -> Vec<PrimitiveCase> {
    let m = rng.random_range(1..5);
    let k = rng.random_range(1..5);
    let n = rng.random_range(1..5);
    let a = uniform(rng, m * k, -1.0, 1.0);
    let b = uniform(rng, k * n, -1.0, 1.0);
    let x = uniform(rng, m * n, -1.0, 1.0);
    let y = uniform(rng, m * n, -1.0, 1.0);
    let away = uniform_away_from_zero(rng, m * n, 1.0);
    let positive = uniform(rng, m * n, 0.5, 2.0);
    let row = uniform(rng, n, -1.0, 1.0);
    let col = uniform(rng, m, -1.0, 1.0);
    let s = rng.random_range(-2.0f32..2.0);
    let cap = rng.random_range(-0.5f32..0.5);
    // Keep every element at least 0.05 from the cap.
    let capped: Vec<f32> = away.iter().map(|v| cap + v).collect();
    let classes = rng.random_range(2..5);
    let logits = uniform(rng, m * classes, -2.0, 2.0);
    let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..classes)).collect();
    let vocab = rng.random_range(2..6);
    let table = uniform(rng, vocab * n, -1.0, 1.0);
    let bags: Vec<Vec<usize>> = (0..m)
        .map(|_| {
            (0..rng.random_range(1..4))
                .map(|_| rng.random_range(0..vocab))
                .collect()
        })
        .collect();
    // Distinct rows for the distance and the norm.
    let shifted: Vec<f32> = x.iter().zip(&away).map(|(p, q)| p + q).collect();

    let mm = move |v: &[Vec<f64>]| matmul(&v[0], &v[1], m, k, n);
    let rowwise = move |v: &[f64], f: &dyn Fn(&[f64]) -> f64| -> Vec<f64> { v.chunks(n).map(f).collect() };
    let ce_labels = labels.clone();
    let bag_copy = bags.clone();

    vec![
        PrimitiveCase {
            name: "matmul",
            inputs: vec![t2(m, k, a), t2(k, n, b)],
            on_tape: Box::new(|t, v| t.matmul(v[0], v[1]).unwrap()),
            reference: Box::new(mm),
        },
        PrimitiveCase {
            name: "add",
            inputs: vec![t2(m, n, x.clone()), t2(m, n, y.clone())],
            on_tape: Box::new(|t, v| t.add(v[0], v[1]).unwrap()),
            reference: Box::new(|v| v[0].iter().zip(&v[1]).map(|(a, b)| a + b).collect()),
        },
        PrimitiveCase {
            name: "add_row",
            inputs: vec![t2(m, n, x.clone()), Tensor::vector(row)],
            on_tape: Box::new(|t, v| t.add_row(v[0], v[1]).unwrap()),
            reference: Box::new(move |v| v[0].iter().enumerate().map(|(i, a)| a + v[1][i % n]).collect()),
        },
        PrimitiveCase {
            name: "sub",
            inputs: vec![t2(m, n, x.clone()), t2(m, n, y.clone())],
            on_tape: Box::new(|t, v| t.sub(v[0], v[1]).unwrap()),
            reference: Box::new(|v| v[0].iter().zip(&v[1]).map(|(a, b)| a - b).collect()),
        },
        PrimitiveCase {
            name: "mul",
            inputs: vec![t2(m, n, x.clone()), t2(m, n, y.clone())],
            on_tape: Box::new(|t, v| t.mul(v[0], v[1]).unwrap()),
            reference: Box::new(|v| v[0].iter().zip(&v[1]).map(|(a, b)| a * b).collect()),
        },
        PrimitiveCase {
            name: "mul_col",
            inputs: vec![t2(m, n, x.clone()), Tensor::vector(col)],
            on_tape: Box::new(|t, v| t.mul_col(v[0], v[1]).unwrap()),
            reference: Box::new(move |v| v[0].iter().enumerate().map(|(i, a)| a * v[1][i / n]).collect()),
        },
        PrimitiveCase {
            name: "div",
            inputs: vec![t2(m, n, x.clone()), t2(m, n, positive.clone())],
            on_tape: Box::new(|t, v| t.div(v[0], v[1]).unwrap()),
            reference: Box::new(|v| v[0].iter().zip(&v[1]).map(|(a, b)| a / b).collect()),
        },
        PrimitiveCase {
            name: "scale",
            inputs: vec![t2(m, n, x.clone())],
            on_tape: Box::new(move |t, v| t.scale(v[0], s)),
            reference: Box::new(move |v| v[0].iter().map(|a| a * f64::from(s)).collect()),
        },
        PrimitiveCase {
            name: "neg",
            inputs: vec![t2(m, n, x.clone())],
            on_tape: Box::new(|t, v| t.neg(v[0])),
            reference: Box::new(|v| v[0].iter().map(|a| -a).collect()),
        },
        PrimitiveCase {
            name: "add_scalar",
            inputs: vec![t2(m, n, x.clone())],
            on_tape: Box::new(move |t, v| t.add_scalar(v[0], s)),
            reference: Box::new(move |v| v[0].iter().map(|a| a + f64::from(s)).collect()),
        },
        PrimitiveCase {
            name: "min_scalar",
            inputs: vec![t2(m, n, capped)],
            on_tape: Box::new(move |t, v| t.min_scalar(v[0], cap)),
            reference: Box::new(move |v| v[0].iter().map(|a| a.min(f64::from(cap))).collect()),
        },
        PrimitiveCase {
            name: "relu",
            inputs: vec![t2(m, n, away.clone())],
            on_tape: Box::new(|t, v| t.relu(v[0])),
            reference: Box::new(|v| v[0].iter().map(|a| a.max(0.0)).collect()),
        },
        PrimitiveCase {
            name: "tanh",
            inputs: vec![t2(m, n, x.clone())],
            on_tape: Box::new(|t, v| t.tanh(v[0])),
            reference: Box::new(|v| v[0].iter().map(|a| a.tanh()).collect()),
        },
        PrimitiveCase {
            name: "concat",
            inputs: vec![t2(m, k, uniform(rng, m * k, -1.0, 1.0)), t2(m, n, y.clone())],
            on_tape: Box::new(|t, v| t.concat(v[0], v[1]).unwrap()),
            reference: Box::new(move |v| {
                (0..m)
                    .flat_map(|r| {
                        v[0][r * k..(r + 1) * k]
                            .iter()
                            .chain(&v[1][r * n..(r + 1) * n])
                            .copied()
                            .collect::<Vec<_>>()
                    })
                    .collect()
            }),
        },
        PrimitiveCase {
            name: "mean_all",
            inputs: vec![t2(m, n, x.clone())],
            on_tape: Box::new(|t, v| t.mean(v[0], None).unwrap()),
            reference: Box::new(|v| vec![v[0].iter().sum::<f64>() / v[0].len() as f64]),
        },
        PrimitiveCase {
            name: "mean_rows",
            inputs: vec![t2(m, n, x.clone())],
            on_tape: Box::new(|t, v| t.mean(v[0], Some(0)).unwrap()),
            reference: Box::new(move |v| {
                (0..n)
                    .map(|j| (0..m).map(|r| v[0][r * n + j]).sum::<f64>() / m as f64)
                    .collect()
            }),
        },
        PrimitiveCase {
            name: "mean_cols",
            inputs: vec![t2(m, n, x.clone())],
            on_tape: Box::new(|t, v| t.mean(v[0], Some(1)).unwrap()),
            reference: Box::new(move |v| rowwise(&v[0], &|r| r.iter().sum::<f64>() / n as f64)),
        },
        PrimitiveCase {
            name: "l2_norm",
            inputs: vec![t2(m, n, away.clone())],
            on_tape: Box::new(|t, v| t.l2_norm(v[0])),
            reference: Box::new(move |v| rowwise(&v[0], &|r| norm(r))),
        },
        PrimitiveCase {
            name: "euclidean_distance",
            inputs: vec![t2(m, n, x), t2(m, n, shifted)],
            on_tape: Box::new(|t, v| t.euclidean_distance(v[0], v[1]).unwrap()),
            reference: Box::new(move |v| {
                (0..m)
                    .map(|r| dist(&v[0][r * n..(r + 1) * n], &v[1][r * n..(r + 1) * n]))
                    .collect()
            }),
        },
        PrimitiveCase {
            name: "softmax_cross_entropy",
            inputs: vec![t2(m, classes, logits)],
            on_tape: Box::new(move |t, v| t.softmax_cross_entropy(v[0], &labels).unwrap().0),
            reference: Box::new(move |v| {
                let per = cross_entropy(&v[0], &ce_labels, classes);
                vec![per.iter().sum::<f64>() / per.len() as f64]
            }),
        },
        PrimitiveCase {
            name: "embedding_bag_mean",
            inputs: vec![t2(vocab, n, table)],
            on_tape: Box::new(move |t, v| t.embedding_bag_mean(v[0], &bags).unwrap()),
            reference: Box::new(move |v| {
                bag_copy
                    .iter()
                    .flat_map(|bag| {
                        (0..n)
                            .map(|j| bag.iter().map(|&id| v[0][id * n + j]).sum::<f64>() / bag.len() as f64)
                            .collect::<Vec<_>>()
                    })
                    .collect()
            }),
        },
    ]
}

// ---- metric oracles ------------------------------------------------------------

/// Macro-F1 from an explicit confusion matrix and per-class precision/recall.
pub fn brute_macro_f1(preds: &[usize], labels: &[usize], classes: usize) -> f64 {
    let mut cm = vec![vec![0usize; classes]; classes];
    for (&p, &l) in preds.iter().zip(labels) {
        cm[l][p] += 1;
    }
    let f1s: Vec<f64> = (0..classes)
        .map(|c| {
            let tp = cm[c][c] as f64;
            let predicted: usize = (0..classes).map(|r| cm[r][c]).sum();
            let actual: usize = cm[c].iter().sum();
            let precision = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
            let recall = if actual > 0 { tp / actual as f64 } else { 0.0 };
            if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            }
        })
        .collect();
    f1s.iter().sum::<f64>() / classes as f64
}

/// All-pairs one-vs-rest AUC averaged over classes with both positives and
/// negatives; `None` when no class qualifies.
pub fn brute_macro_auc(scores: &[Vec<f64>], labels: &[usize], classes: usize) -> Option<f64> {
    let mut aucs = Vec::new();
    for c in 0..classes {
        let pos: Vec<f64> = scores
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == c)
            .map(|(s, _)| s[c])
            .collect();
        let neg: Vec<f64> = scores
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l != c)
            .map(|(s, _)| s[c])
            .collect();
        if pos.is_empty() || neg.is_empty() {
            continue;
        }
        let mut wins = 0.0;
        for p in &pos {
            for q in &neg {
                wins += if p > q {
                    1.0
                } else if p == q {
                    0.5
                } else {
                    0.0
                };
            }
        }
        aucs.push(wins / (pos.len() * neg.len()) as f64);
    }
    (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64)
}

/// Random labels, predictions and coarse (tie-prone) class scores.
pub struct MetricInstance {
    pub classes: usize,
    pub labels: Vec<usize>,
    pub preds: Vec<usize>,
    pub scores: Vec<Vec<f64>>,
}

impl MetricInstance {
    pub fn sample(seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let classes = rng.random_range(2..6);
        let n = rng.random_range(1..80);
        let quantum = [0.0, 0.1, 0.25][rng.random_range(0..3)];
        let labels = (0..n).map(|_| rng.random_range(0..classes)).collect::<Vec<_>>();
        let preds = labels
            .iter()
            .map(|&l| {
                if rng.random_bool(0.6) {
                    l
                } else {
                    rng.random_range(0..classes)
                }
            })
            .collect();
        let scores = (0..n)
            .map(|_| {
                (0..classes)
                    .map(|_| {
                        let s: f64 = rng.random();
                        if quantum > 0.0 {
                            (s / quantum).round() * quantum
                        } else {
                            s
                        }
                    })
                    .collect()
            })
            .collect();
        Self {
            classes,
            labels,
            preds,
            scores,
        }
    }

    /// Absolute differences from the oracles: (macro-F1, macro-AUC). The AUC
    /// difference is 0 when both agree the metric is undefined and infinite
    /// when only one does.
    pub fn oracle_gaps(&self) -> (f64, f64) {
        use forgetmi::eval::{macro_auc, macro_f1};
        let f1 = macro_f1(&self.preds, &self.labels, self.classes).unwrap();
        let f1_gap = (f1 - brute_macro_f1(&self.preds, &self.labels, self.classes)).abs();
        let auc_gap = match (
            macro_auc(&self.scores, &self.labels, self.classes),
            brute_macro_auc(&self.scores, &self.labels, self.classes),
        ) {
            (Ok(a), Some(b)) => (a - b).abs(),
            (Err(_), None) => 0.0,
            _ => f64::INFINITY,
        };
        (f1_gap, auc_gap)
    }
}

// ---- membership attack sanity -------------------------------------------------

/// Attack score with member losses far below every non-member loss and the
/// forget losses drawn from the member range.
pub fn mia_separated_score(seed: u64) -> f64 {
    use forgetmi::eval::{mia_score_from_losses, MiaConfig};
    let mut rng = rng_from_seed(seed);
    let retain: Vec<f64> = (0..300).map(|_| rng.random_range(0.0..0.5)).collect();
    let test: Vec<f64> = (0..120).map(|_| rng.random_range(2.0..6.0)).collect();
    let forget: Vec<f64> = (0..40).map(|_| rng.random_range(0.0..0.5)).collect();
    mia_score_from_losses(&retain, &test, &forget, seed, &MiaConfig::default())
        .unwrap()
        .0
}

/// Mean attack score over `seeds` when retain, test and forget losses all
/// come from one log-normal distribution.
pub fn mia_identical_mean(seeds: u64) -> f64 {
    use forgetmi::eval::{mia_score_from_losses, MiaConfig};
    use rand_distr::{Distribution, LogNormal};
    let dist = LogNormal::new(-1.0, 1.0).unwrap();
    let total: f64 = (0..seeds)
        .map(|seed| {
            let mut rng = rng_from_seed(1000 + seed);
            let mut draw = |n: usize| (0..n).map(|_| dist.sample(&mut rng)).collect::<Vec<f64>>();
            let (retain, test, forget) = (draw(300), draw(120), draw(40));
            mia_score_from_losses(&retain, &test, &forget, seed, &MiaConfig::default())
                .unwrap()
                .0
        })
        .sum();
    total / seeds as f64
}

// ---- split integrity -------------------------------------------------------------

/// Measured properties of one forget split.
#[derive(Debug)]
pub struct SplitReport {
    pub pct: u32,
    /// `|forget share − pct| ` in percentage points.
    pub size_error_pp: f64,
    /// Every forget patient lost all of its training studies and no retain
    /// sample belongs to a forget patient.
    pub whole_patients: bool,
    /// Largest relative deviation of forget bucket shares from the full
    /// training set's.
    pub bucket_error: f64,
}

impl SplitReport {
    pub fn passes(&self) -> bool {
        self.size_error_pp <= 0.5 && self.whole_patients && self.bucket_error <= 0.10
    }
}

pub fn split_report(train: &[forgetmi::Sample], pct: u32, seed: u64) -> SplitReport {
    use forgetmi::datagen::{bucket_shares, max_relative_share_error, split_forget, study_counts};
    let split = split_forget(train, pct, seed).unwrap();
    let (forget, retain) = split.partition(train);
    let size_error_pp = (100.0 * forget.len() as f64 / train.len() as f64 - f64::from(pct)).abs();
    let counts = study_counts(train);
    let forget_counts: std::collections::BTreeMap<u32, usize> = forget.iter().fold(Default::default(), |mut m, s| {
        *m.entry(s.patient_id).or_insert(0) += 1;
        m
    });
    let whole_patients = forget_counts.iter().all(|(pid, c)| counts[pid] == *c)
        && retain.iter().all(|s| !split.forget_patient_ids.contains(&s.patient_id))
        && forget_counts
            .keys()
            .copied()
            .eq(split.forget_patient_ids.iter().copied());
    let reference = bucket_shares(counts.values().copied());
    let shares = bucket_shares(split.forget_patient_ids.iter().map(|pid| counts[pid]));
    SplitReport {
        pct,
        size_error_pp,
        whole_patients,
        bucket_error: max_relative_share_error(&shares, &reference),
    }
}
