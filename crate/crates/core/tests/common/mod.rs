//! Straight-line f64 reference implementations, written independently of the
//! engine's kernels, plus helpers for finite-difference checks.
#![allow(dead_code, clippy::needless_range_loop, clippy::type_complexity)]

use cxrb::model::{ClassifierConfig, Model, ModelConfig};
use cxrb::tensor::{Exec, Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(r: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| r.gen_range(lo..hi)).collect()
}

pub fn random_tensor(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), random_vec(r, n, -1.0, 1.0)).unwrap()
}

/// Relative error with the `max(|a|, |b|, 1e-3)` denominator.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Dense 4-d array in f64.
#[derive(Clone, Debug)]
pub struct A4 {
    pub d: [usize; 4],
    pub v: Vec<f64>,
}

impl A4 {
    pub fn new(d: [usize; 4]) -> Self {
        Self {
            d,
            v: vec![0.0; d.iter().product()],
        }
    }

    pub fn from(t: &Tensor) -> Self {
        let s = t.shape();
        let d = match s.len() {
            4 => [s[0], s[1], s[2], s[3]],
            2 => [s[0], s[1], 1, 1],
            1 => [s[0], 1, 1, 1],
            _ => panic!("unsupported rank"),
        };
        Self {
            d,
            v: t.data().iter().map(|&x| x as f64).collect(),
        }
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        let [_, cc, h, w] = self.d;
        self.v[((n * cc + c) * h + y) * w + x]
    }

    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, val: f64) {
        let [_, cc, h, w] = self.d;
        self.v[((n * cc + c) * h + y) * w + x] = val;
    }
}

/// Direct convolution with zero padding.
pub fn conv2d(x: &A4, k: &A4, b: &[f64], stride: usize, pad: usize) -> A4 {
    let [n, c, h, w] = x.d;
    let [f, kc, kh, kw] = k.d;
    assert_eq!(c, kc);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = A4::new([n, f, oh, ow]);
    for ni in 0..n {
        for fi in 0..f {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = b[fi];
                    for ci in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (y * stride + i) as isize - pad as isize;
                                let ix = (xo * stride + j) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += x.at(ni, ci, iy as usize, ix as usize) * k.at(fi, ci, i, j);
                                }
                            }
                        }
                    }
                    out.set(ni, fi, y, xo, acc);
                }
            }
        }
    }
    out
}

/// Max pool; the second result lists the winning flat index per output cell
/// (first maximum in row-major order).
pub fn maxpool(x: &A4, win: usize) -> (A4, Vec<usize>) {
    let [n, c, h, w] = x.d;
    let mut out = A4::new([n, c, h / win, w / win]);
    let mut arg = Vec::new();
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h / win {
                for xo in 0..w / win {
                    let mut best = f64::NEG_INFINITY;
                    let mut at = 0;
                    for i in 0..win {
                        for j in 0..win {
                            let v = x.at(ni, ci, y * win + i, xo * win + j);
                            if v > best {
                                best = v;
                                at = ((ni * c + ci) * h + y * win + i) * w + xo * win + j;
                            }
                        }
                    }
                    out.set(ni, ci, y, xo, best);
                    arg.push(at);
                }
            }
        }
    }
    (out, arg)
}

pub fn upsample2x(x: &A4) -> A4 {
    let [n, c, h, w] = x.d;
    let mut out = A4::new([n, c, 2 * h, 2 * w]);
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..2 * h {
                for xo in 0..2 * w {
                    out.set(ni, ci, y, xo, x.at(ni, ci, y / 2, xo / 2));
                }
            }
        }
    }
    out
}

pub fn concat(a: &A4, b: &A4) -> A4 {
    let [n, ca, h, w] = a.d;
    let cb = b.d[1];
    let mut out = A4::new([n, ca + cb, h, w]);
    for ni in 0..n {
        for y in 0..h {
            for x in 0..w {
                for c in 0..ca {
                    out.set(ni, c, y, x, a.at(ni, c, y, x));
                }
                for c in 0..cb {
                    out.set(ni, ca + c, y, x, b.at(ni, c, y, x));
                }
            }
        }
    }
    out
}

/// ReLU plus the on/off pattern (to detect kink crossings).
pub fn relu(x: &A4) -> (A4, Vec<bool>) {
    let mut out = x.clone();
    let mut on = Vec::with_capacity(x.v.len());
    for v in out.v.iter_mut() {
        on.push(*v > 0.0);
        *v = v.max(0.0);
    }
    (out, on)
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v.clamp(-30.0, 30.0)).exp())
}

/// `[n, d] x [d, m] + b`.
pub fn dense(x: &[f64], n: usize, d: usize, w: &[f64], m: usize, b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            let mut acc = b[j];
            for k in 0..d {
                acc += x[i * d + k] * w[k * m + j];
            }
            out[i * m + j] = acc;
        }
    }
    out
}

pub fn bce(pred: &[f64], target: &[f64]) -> f64 {
    let eps = 1e-7;
    let total: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &y)| {
            let p = p.clamp(eps, 1.0 - eps);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    total / pred.len() as f64
}

/// f64 forward of the classifier from its parameters; returns the mean BCE
/// against `labels` and the activation pattern (ReLU signs and pool winners).
pub fn classifier_loss(
    cfg: &ClassifierConfig,
    params: &[Vec<f64>],
    shapes: &[Vec<usize>],
    input: &A4,
    labels: &[f64],
) -> (f64, Vec<u64>) {
    let mut x = input.clone();
    if cfg.standardize_input {
        let per = x.v.len() / x.d[0];
        for sample in x.v.chunks_mut(per) {
            let mean = sample.iter().sum::<f64>() / per as f64;
            let sd = (sample.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / per as f64).sqrt();
            let scale = if sd > 1e-6 { sd } else { 1.0 };
            sample.iter_mut().for_each(|v| *v = (*v - mean) / scale);
        }
    }
    let mut pattern = Vec::new();
    let to4 = |s: &[usize]| [s[0], s[1], s[2], s[3]];
    for layer in 0..7 {
        let k = A4 {
            d: to4(&shapes[2 * layer]),
            v: params[2 * layer].clone(),
        };
        let (y, on) = relu(&conv2d(&x, &k, &params[2 * layer + 1], 1, 1));
        pattern.extend(on.iter().map(|&b| b as u64));
        x = y;
        if cfg.pool_after.contains(&(layer + 1)) {
            let (p, arg) = maxpool(&x, 2);
            pattern.extend(arg.iter().map(|&a| a as u64));
            x = p;
        }
    }
    if cfg.global_max_pool && x.d[2] > 1 {
        let (p, arg) = maxpool(&x, x.d[2]);
        pattern.extend(arg.iter().map(|&a| a as u64));
        x = p;
    }
    let n = x.d[0];
    let d = x.v.len() / n;
    let logits = dense(&x.v, n, d, &params[14], 1, &params[15]);
    let probs: Vec<f64> = logits.iter().map(|&l| sigmoid(l)).collect();
    (bce(&probs, labels), pattern)
}

pub fn model_params_f64(m: &Model) -> (Vec<Vec<f64>>, Vec<Vec<usize>>) {
    m.params()
        .iter()
        .map(|p| {
            (
                p.tensor.data().iter().map(|&v| v as f64).collect(),
                p.tensor.shape().to_vec(),
            )
        })
        .unzip()
}

pub fn classifier_cfg(m: &Model) -> ClassifierConfig {
    match m.config() {
        ModelConfig::Classifier(c) => c.clone(),
        _ => panic!("not a classifier"),
    }
}

/// Analytic gradients of `Σ w ⊙ op(inputs)` w.r.t. each input.
pub fn engine_grads(
    inputs: &[Tensor],
    weights: &Tensor,
    op: impl Fn(&mut Graph, &[Var]) -> Var,
) -> (f64, Vec<Vec<f32>>) {
    let mut g = Graph::new(Exec::single());
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone().with_grad()).unwrap()).collect();
    let out = op(&mut g, &vars);
    let loss = g.weighted_sum(out, weights).unwrap();
    let value = g.value(loss).data()[0] as f64;
    let grads = g.backward(loss).unwrap();
    (value, vars.iter().map(|&v| grads.get(v).unwrap().to_vec()).collect())
}

/// Summary of one finite-difference campaign.
#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub name: String,
    pub cases: usize,
    pub checked: usize,
    /// Coordinates whose ±h perturbation crossed a ReLU kink or changed a
    /// pooling winner; central differences are not valid there.
    pub skipped: usize,
    pub max_rel_err: f64,
}

/// Compares engine gradients with central differences of a f64 reference.
/// `reference` maps the inputs to (loss, activation pattern).
pub fn fd_compare(
    report: &mut GradReport,
    inputs: &[Tensor],
    analytic: &[Vec<f32>],
    h: f64,
    coords: Option<&[(usize, usize)]>,
    reference: &dyn Fn(&[Vec<f64>]) -> (f64, Vec<u64>),
) {
    let base: Vec<Vec<f64>> = inputs
        .iter()
        .map(|t| t.data().iter().map(|&v| v as f64).collect())
        .collect();
    let (_, pattern) = reference(&base);
    let all: Vec<(usize, usize)> = match coords {
        Some(c) => c.to_vec(),
        None => base
            .iter()
            .enumerate()
            .flat_map(|(i, v)| (0..v.len()).map(move |j| (i, j)))
            .collect(),
    };
    for (i, j) in all {
        let mut plus = base.clone();
        plus[i][j] += h;
        let mut minus = base.clone();
        minus[i][j] -= h;
        let (lp, pp) = reference(&plus);
        let (lm, pm) = reference(&minus);
        if pp != pattern || pm != pattern {
            report.skipped += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * h);
        let err = rel_err(analytic[i][j] as f64, numeric);
        report.checked += 1;
        if err > report.max_rel_err {
            report.max_rel_err = err;
        }
    }
}

fn a4(v: &[f64], d: [usize; 4]) -> A4 {
    A4 { d, v: v.to_vec() }
}

fn wsum(out: &[f64], w: &[f32]) -> f64 {
    out.iter().zip(w).map(|(a, &b)| a * b as f64).sum()
}

fn dims4(t: &Tensor) -> [usize; 4] {
    let s = t.shape();
    [s[0], s[1], s[2], s[3]]
}

/// Gradient checks for every differentiable op on `cases` random cases each.
pub fn gradcheck_ops(cases: usize, seed: u64) -> Vec<GradReport> {
    let h = 1e-3;
    let mut r = rng(seed);
    let mut reports = Vec::new();
    let mut run = |name: &str, r: &mut ChaCha8Rng, case: &mut dyn FnMut(&mut ChaCha8Rng, &mut GradReport)| {
        let mut rep = GradReport {
            name: name.to_string(),
            ..GradReport::default()
        };
        for _ in 0..cases {
            case(r, &mut rep);
            rep.cases += 1;
        }
        reports.push(rep);
    };

    run("conv2d", &mut r, &mut |r, rep| {
        let n = r.gen_range(1..=2);
        let c = r.gen_range(1..=3);
        let f = r.gen_range(1..=3);
        let kh = r.gen_range(1..=3);
        let kw = r.gen_range(1..=3);
        let stride = r.gen_range(1..=2);
        let pad = r.gen_range(0..=1);
        let oh = r.gen_range(1..=4);
        let ow = r.gen_range(1..=4);
        let hh = ((oh - 1) * stride + kh) as isize - 2 * pad as isize;
        let ww = ((ow - 1) * stride + kw) as isize - 2 * pad as isize;
        if hh <= 0 || ww <= 0 {
            return;
        }
        let (hh, ww) = (hh as usize, ww as usize);
        let x = random_tensor(r, &[n, c, hh, ww]);
        let k = random_tensor(r, &[f, c, kh, kw]);
        let b = random_tensor(r, &[f]);
        let w = random_tensor(r, &[n, f, oh, ow]);
        let (_, grads) = engine_grads(&[x.clone(), k.clone(), b.clone()], &w, |g, v| {
            g.conv2d(v[0], v[1], v[2], stride, pad).unwrap()
        });
        let (xd, kd) = (dims4(&x), dims4(&k));
        let wd = w.data().to_vec();
        fd_compare(rep, &[x, k, b], &grads, h, None, &|p| {
            let out = conv2d(&a4(&p[0], xd), &a4(&p[1], kd), &p[2], stride, pad);
            (wsum(&out.v, &wd), vec![])
        });
    });

    run("maxpool2d", &mut r, &mut |r, rep| {
        let win = r.gen_range(2..=3);
        let d = [
            r.gen_range(1..=2),
            r.gen_range(1..=2),
            win * r.gen_range(1..=3),
            win * r.gen_range(1..=3),
        ];
        let x = random_tensor(r, &d);
        let w = random_tensor(r, &[d[0], d[1], d[2] / win, d[3] / win]);
        let (_, grads) = engine_grads(std::slice::from_ref(&x), &w, |g, v| g.maxpool2d(v[0], win).unwrap());
        let wd = w.data().to_vec();
        fd_compare(rep, &[x], &grads, h, None, &|p| {
            let (out, arg) = maxpool(&a4(&p[0], d), win);
            (wsum(&out.v, &wd), arg.iter().map(|&a| a as u64).collect())
        });
    });

    run("upsample2x", &mut r, &mut |r, rep| {
        let d = [
            r.gen_range(1..=2),
            r.gen_range(1..=2),
            r.gen_range(1..=4),
            r.gen_range(1..=4),
        ];
        let x = random_tensor(r, &d);
        let w = random_tensor(r, &[d[0], d[1], 2 * d[2], 2 * d[3]]);
        let (_, grads) = engine_grads(std::slice::from_ref(&x), &w, |g, v| g.upsample2x(v[0]).unwrap());
        let wd = w.data().to_vec();
        fd_compare(rep, &[x], &grads, h, None, &|p| {
            (wsum(&upsample2x(&a4(&p[0], d)).v, &wd), vec![])
        });
    });

    run("concat_channels", &mut r, &mut |r, rep| {
        let (n, hh, ww) = (r.gen_range(1..=2), r.gen_range(1..=4), r.gen_range(1..=4));
        let (ca, cb) = (r.gen_range(1..=3), r.gen_range(0..=3));
        let a = random_tensor(r, &[n, ca, hh, ww]);
        let b = random_tensor(r, &[n, cb, hh, ww]);
        let w = random_tensor(r, &[n, ca + cb, hh, ww]);
        let (_, grads) = engine_grads(&[a.clone(), b.clone()], &w, |g, v| {
            g.concat_channels(v[0], v[1]).unwrap()
        });
        let wd = w.data().to_vec();
        fd_compare(rep, &[a, b], &grads, h, None, &|p| {
            let out = concat(&a4(&p[0], [n, ca, hh, ww]), &a4(&p[1], [n, cb, hh, ww]));
            (wsum(&out.v, &wd), vec![])
        });
    });

    run("relu", &mut r, &mut |r, rep| {
        let d = [1, r.gen_range(1..=3), r.gen_range(1..=5), r.gen_range(1..=5)];
        let x = random_tensor(r, &d);
        let w = random_tensor(r, &d);
        let (_, grads) = engine_grads(std::slice::from_ref(&x), &w, |g, v| g.relu(v[0]).unwrap());
        let wd = w.data().to_vec();
        fd_compare(rep, &[x], &grads, h, None, &|p| {
            let (out, on) = relu(&a4(&p[0], d));
            (wsum(&out.v, &wd), on.iter().map(|&b| b as u64).collect())
        });
    });

    run("sigmoid", &mut r, &mut |r, rep| {
        let n = r.gen_range(1..=12);
        let x = Tensor::new(vec![n], random_vec(r, n, -4.0, 4.0)).unwrap();
        let w = random_tensor(r, &[n]);
        let (_, grads) = engine_grads(std::slice::from_ref(&x), &w, |g, v| g.sigmoid(v[0]).unwrap());
        let wd = w.data().to_vec();
        fd_compare(rep, &[x], &grads, h, None, &|p| {
            let out: Vec<f64> = p[0].iter().map(|&v| sigmoid(v)).collect();
            (wsum(&out, &wd), vec![])
        });
    });

    run("dense", &mut r, &mut |r, rep| {
        let (n, d, m) = (r.gen_range(1..=3), r.gen_range(1..=6), r.gen_range(1..=3));
        let x = random_tensor(r, &[n, d]);
        let wt = random_tensor(r, &[d, m]);
        let b = random_tensor(r, &[m]);
        let w = random_tensor(r, &[n, m]);
        let (_, grads) = engine_grads(&[x.clone(), wt.clone(), b.clone()], &w, |g, v| {
            g.dense(v[0], v[1], v[2]).unwrap()
        });
        let wd = w.data().to_vec();
        fd_compare(rep, &[x, wt, b], &grads, h, None, &|p| {
            (wsum(&dense(&p[0], n, d, &p[1], m, &p[2]), &wd), vec![])
        });
    });

    run("bce_loss", &mut r, &mut |r, rep| {
        let n = r.gen_range(1..=10);
        let pred = Tensor::new(vec![n, 1], random_vec(r, n, 0.02, 0.98)).unwrap();
        let target = Tensor::new(vec![n, 1], (0..n).map(|_| r.gen_range(0..=1) as f32).collect()).unwrap();
        let one = Tensor::scalar(1.0);
        let t2 = target.clone();
        let (_, grads) = engine_grads(std::slice::from_ref(&pred), &one, move |g, v| {
            let t = g.constant(t2.clone()).unwrap();
            g.bce_loss(v[0], t).unwrap()
        });
        let td: Vec<f64> = target.data().iter().map(|&v| v as f64).collect();
        fd_compare(rep, &[pred], &grads, h, None, &|p| (bce(&p[0], &td), vec![]));
    });

    run("flatten", &mut r, &mut |r, rep| {
        let d = [
            r.gen_range(1..=2),
            r.gen_range(1..=3),
            r.gen_range(1..=3),
            r.gen_range(1..=3),
        ];
        let x = random_tensor(r, &d);
        let w = random_tensor(r, &[d[0], d[1] * d[2] * d[3]]);
        let (_, grads) = engine_grads(std::slice::from_ref(&x), &w, |g, v| g.flatten(v[0]).unwrap());
        let wd = w.data().to_vec();
        fd_compare(rep, &[x], &grads, h, None, &|p| (wsum(&p[0], &wd), vec![]));
    });

    run("scale", &mut r, &mut |r, rep| {
        let n = r.gen_range(1..=8);
        let factor = r.gen_range(-3.0f32..3.0);
        let x = random_tensor(r, &[n]);
        let w = random_tensor(r, &[n]);
        let (_, grads) = engine_grads(std::slice::from_ref(&x), &w, move |g, v| g.scale(v[0], factor).unwrap());
        let wd = w.data().to_vec();
        fd_compare(rep, &[x], &grads, h, None, &|p| {
            let out: Vec<f64> = p[0].iter().map(|&v| v * factor as f64).collect();
            (wsum(&out, &wd), vec![])
        });
    });

    run("sum", &mut r, &mut |r, rep| {
        let n = r.gen_range(1..=8);
        let x = random_tensor(r, &[n]);
        let w = Tensor::new(vec![1], vec![r.gen_range(-2.0..2.0)]).unwrap();
        let (_, grads) = engine_grads(std::slice::from_ref(&x), &w, |g, v| g.sum(v[0]).unwrap());
        let w0 = w.data()[0] as f64;
        fd_compare(rep, &[x], &grads, h, None, &|p| (w0 * p[0].iter().sum::<f64>(), vec![]));
    });

    reports
}

/// Finite differences (h = 1e-2 on the parameter) of the whole classifier
/// on a 2-sample batch against the f64 reference forward. Parameters are drawn
/// at random until `wanted` of them have been checked without crossing a kink.
pub fn gradcheck_classifier(seed: u64, size: usize, wanted: usize) -> GradReport {
    use cxrb::model::build_classifier;
    let mut r = rng(seed);
    let model = build_classifier(&ClassifierConfig::new(size), seed).unwrap();
    let input = Tensor::new(vec![2, 1, size, size], random_vec(&mut r, 2 * size * size, 0.0, 1.0)).unwrap();
    let labels = Tensor::new(vec![2, 1], vec![1.0, 0.0]).unwrap();
    let mut g = Graph::new(Exec::single());
    let x = g.constant(input.clone()).unwrap();
    let (pred, bindings) = model.forward(&mut g, x).unwrap();
    let t = g.constant(labels).unwrap();
    let loss = g.bce_loss(pred, t).unwrap();
    let grads = g.backward(loss).unwrap();
    let analytic: Vec<Vec<f32>> = bindings
        .vars()
        .iter()
        .map(|&v| grads.get(v).unwrap().to_vec())
        .collect();

    let (_, shapes) = model_params_f64(&model);
    let cfg = classifier_cfg(&model);
    let input64 = A4::from(&input);
    let tensors: Vec<Tensor> = model.params().iter().map(|p| p.tensor.clone()).collect();
    let mut rep = GradReport {
        name: "classifier".into(),
        cases: 1,
        ..GradReport::default()
    };
    let reference = |p: &[Vec<f64>]| classifier_loss(&cfg, p, &shapes, &input64, &[1.0, 0.0]);
    let mut tries = 0;
    while rep.checked < wanted && tries < 20 * wanted {
        tries += 1;
        let i = r.gen_range(0..shapes.len());
        let n: usize = shapes[i].iter().product();
        let coord = [(i, r.gen_range(0..n))];
        fd_compare(&mut rep, &tensors, &analytic, 1e-2, Some(&coord), &reference);
    }
    rep
}

/// Largest elementwise |engine - oracle| over `shapes` random cases of
/// conv2d, maxpool2d and dense forward.
pub fn forward_oracle_errors(shapes: usize, seed: u64) -> [f64; 3] {
    let mut r = rng(seed);
    let mut worst = [0.0f64; 3];
    let maxdiff = |a: &[f32], b: &[f64]| {
        assert_eq!(a.len(), b.len());
        a.iter().zip(b).map(|(&x, &y)| (x as f64 - y).abs()).fold(0.0, f64::max)
    };
    for _ in 0..shapes {
        let (n, c, f) = (r.gen_range(1..=3), r.gen_range(1..=4), r.gen_range(1..=4));
        let (kh, kw) = (r.gen_range(1..=3), r.gen_range(1..=3));
        let (stride, pad) = (r.gen_range(1..=2), r.gen_range(0..=1));
        let hh = stride * r.gen_range(2..=6) + kh - 2 * pad;
        let ww = stride * r.gen_range(2..=6) + kw - 2 * pad;
        let x = random_tensor(&mut r, &[n, c, hh, ww]);
        let k = random_tensor(&mut r, &[f, c, kh, kw]);
        let b = random_tensor(&mut r, &[f]);
        let mut g = Graph::inference(Exec::single());
        let (xv, kv, bv) = (
            g.constant(x.clone()).unwrap(),
            g.constant(k.clone()).unwrap(),
            g.constant(b.clone()).unwrap(),
        );
        let y = g.conv2d(xv, kv, bv, stride, pad).unwrap();
        let b64: Vec<f64> = b.data().iter().map(|&v| v as f64).collect();
        let want = conv2d(&A4::from(&x), &A4::from(&k), &b64, stride, pad);
        assert_eq!(g.value(y).shape(), &want.d[..]);
        worst[0] = worst[0].max(maxdiff(g.value(y).data(), &want.v));

        let win = r.gen_range(2..=3);
        let (ph, pw) = (win * r.gen_range(1..=5), win * r.gen_range(1..=5));
        let p = random_tensor(&mut r, &[n, c, ph, pw]);
        let pv = g.constant(p.clone()).unwrap();
        let py = g.maxpool2d(pv, win).unwrap();
        worst[1] = worst[1].max(maxdiff(g.value(py).data(), &maxpool(&A4::from(&p), win).0.v));

        let (d, m) = (r.gen_range(1..=40), r.gen_range(1..=5));
        let dx = random_tensor(&mut r, &[n, d]);
        let dw = random_tensor(&mut r, &[d, m]);
        let db = random_tensor(&mut r, &[m]);
        let (a, wv, bb) = (
            g.constant(dx.clone()).unwrap(),
            g.constant(dw.clone()).unwrap(),
            g.constant(db.clone()).unwrap(),
        );
        let dy = g.dense(a, wv, bb).unwrap();
        let f64s = |t: &Tensor| t.data().iter().map(|&v| v as f64).collect::<Vec<_>>();
        worst[2] = worst[2].max(maxdiff(
            g.value(dy).data(),
            &dense(&f64s(&dx), n, d, &f64s(&dw), m, &f64s(&db)),
        ));
    }
    worst
}

/// Dice by explicit counting.
pub fn dice_oracle(a: &[u8], b: &[u8]) -> f64 {
    let inter = a.iter().zip(b).filter(|(&x, &y)| x == 1 && y == 1).count();
    let sa = a.iter().filter(|&&x| x == 1).count();
    let sb = b.iter().filter(|&&x| x == 1).count();
    if sa + sb == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (sa + sb) as f64
    }
}

/// Threshold then keep the `keep` largest 4-connected components, labelled
/// with union-find (ties: smallest first pixel in row-major order wins).
pub fn binarize_oracle(prob: &[f32], w: usize, h: usize, threshold: f32, keep: usize) -> Vec<u8> {
    let on: Vec<bool> = prob.iter().map(|&p| p >= threshold).collect();
    let mut parent: Vec<usize> = (0..w * h).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !on[i] {
                continue;
            }
            for j in [(x + 1 < w).then(|| i + 1), (y + 1 < h).then(|| i + w)]
                .into_iter()
                .flatten()
            {
                if on[j] {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut size = vec![0usize; w * h];
    let roots: Vec<usize> = (0..w * h).map(|i| find(&mut parent, i)).collect();
    for i in 0..w * h {
        if on[i] {
            size[roots[i]] += 1;
        }
    }
    // roots are the minimal index of each component, so ordering by root is
    // ordering by first pixel.
    let mut comps: Vec<usize> = (0..w * h).filter(|&i| on[i] && roots[i] == i).collect();
    comps.sort_by(|&a, &b| size[b].cmp(&size[a]).then(a.cmp(&b)));
    let kept: Vec<usize> = if keep == 0 {
        comps
    } else {
        comps.into_iter().take(keep).collect()
    };
    (0..w * h)
        .map(|i| u8::from(on[i] && kept.contains(&roots[i])))
        .collect()
}
