//! The six feature-based baselines over binary bag-of-words vectors.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::features::SparseBinary;
use super::lbfgs;
use super::Backend;
use crate::par::{self, ExecutionMode};
use crate::rng::{item_stream, substream};

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn linear_score(w: &[f64], b: f64, x: &SparseBinary) -> f64 {
    b + x.iter().map(|&j| w[j]).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf(f64),
    Split { feature: usize, absent: usize, present: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn prob(&self, x: &SparseBinary) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf(p) => return *p,
                Node::Split { feature, absent, present } => {
                    i = if x.binary_search(feature).is_ok() { *present } else { *absent };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ClassicalModel {
    NaiveBayes {
        /// Log joint of the empty document per class (literal, metaphorical).
        base: [f64; 2],
        /// Per-feature log-odds increment per class.
        delta: [Vec<f64>; 2],
    },
    LogisticRegression {
        w: Vec<f64>,
        b: f64,
    },
    Svm {
        w: Vec<f64>,
        b: f64,
        platt_a: f64,
        platt_b: f64,
    },
    Knn {
        k: usize,
        docs: Vec<SparseBinary>,
        labels: Vec<bool>,
    },
    RandomForest {
        trees: Vec<Tree>,
    },
    Mlp {
        hidden: usize,
        /// `[dim, hidden]`, row-major.
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: f64,
    },
}

pub(crate) struct Data<'a> {
    pub xs: &'a [SparseBinary],
    pub ys: &'a [bool],
    pub dim: usize,
}

pub(crate) fn fit(backend: Backend, data: &Data, seed: u64, mode: ExecutionMode) -> ClassicalModel {
    match backend {
        Backend::NaiveBayes => naive_bayes(data),
        Backend::LogisticRegression => logistic(data),
        Backend::Svm => svm(data),
        Backend::Knn => ClassicalModel::Knn {
            k: 5,
            docs: data.xs.to_vec(),
            labels: data.ys.to_vec(),
        },
        Backend::RandomForest => forest(data, seed, mode),
        Backend::Mlp => mlp(data, seed),
        Backend::EncoderFinetune => unreachable!("encoder backend is not feature-based"),
    }
}

impl ClassicalModel {
    pub fn prob(&self, x: &SparseBinary) -> f64 {
        match self {
            ClassicalModel::NaiveBayes { base, delta } => {
                let j0 = base[0] + x.iter().map(|&j| delta[0][j]).sum::<f64>();
                let j1 = base[1] + x.iter().map(|&j| delta[1][j]).sum::<f64>();
                sigmoid(j1 - j0)
            }
            ClassicalModel::LogisticRegression { w, b } => sigmoid(linear_score(w, *b, x)),
            ClassicalModel::Svm { w, b, platt_a, platt_b } => sigmoid(platt_a * linear_score(w, *b, x) + platt_b),
            ClassicalModel::Knn { k, docs, labels } => knn(*k, docs, labels, x),
            ClassicalModel::RandomForest { trees } => trees.iter().map(|t| t.prob(x)).sum::<f64>() / trees.len() as f64,
            ClassicalModel::Mlp { hidden, w1, b1, w2, b2 } => {
                let h = mlp_hidden(*hidden, w1, b1, x);
                sigmoid(b2 + h.iter().zip(w2).map(|(a, b)| a * b).sum::<f64>())
            }
        }
    }
}

fn naive_bayes(data: &Data) -> ClassicalModel {
    let alpha = 1.0;
    let mut n = [0usize; 2];
    let mut counts = [vec![0usize; data.dim], vec![0usize; data.dim]];
    for (x, &y) in data.xs.iter().zip(data.ys) {
        let c = usize::from(y);
        n[c] += 1;
        for &j in x {
            counts[c][j] += 1;
        }
    }
    let total = (n[0] + n[1]) as f64;
    let mut base = [0.0; 2];
    let mut delta = [Vec::new(), Vec::new()];
    for c in 0..2 {
        let nc = n[c] as f64;
        base[c] = (nc / total).ln();
        delta[c] = counts[c]
            .iter()
            .map(|&k| {
                let theta = (k as f64 + alpha) / (nc + 2.0 * alpha);
                base[c] += (1.0 - theta).ln();
                theta.ln() - (1.0 - theta).ln()
            })
            .collect();
    }
    ClassicalModel::NaiveBayes { base, delta }
}

/// `0.5‖w‖² + C Σ loss`, intercept unpenalized; `loss_grad(y, z)` returns loss and dloss/dz.
fn fit_linear(data: &Data, c: f64, loss_grad: impl Fn(bool, f64) -> (f64, f64)) -> (Vec<f64>, f64) {
    let d = data.dim;
    let x = lbfgs::minimize(
        |p, g| {
            let (w, b) = (&p[..d], p[d]);
            let mut f = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
            g[..d].copy_from_slice(w);
            g[d] = 0.0;
            for (x, &y) in data.xs.iter().zip(data.ys) {
                let (l, dz) = loss_grad(y, linear_score(w, b, x));
                f += c * l;
                for &j in x {
                    g[j] += c * dz;
                }
                g[d] += c * dz;
            }
            f
        },
        vec![0.0; d + 1],
        &lbfgs::Options::default(),
    );
    let b = x[d];
    (x[..d].to_vec(), b)
}

fn logistic(data: &Data) -> ClassicalModel {
    let (w, b) = fit_linear(data, 1.0, |y, z| {
        if y {
            (softplus(-z), sigmoid(z) - 1.0)
        } else {
            (softplus(z), sigmoid(z))
        }
    });
    ClassicalModel::LogisticRegression { w, b }
}

fn svm(data: &Data) -> ClassicalModel {
    let (w, b) = fit_linear(data, 1.0, |y, z| {
        let s = if y { 1.0 } else { -1.0 };
        let m = (1.0 - s * z).max(0.0);
        (m * m, -2.0 * s * m)
    });
    let margins: Vec<f64> = data.xs.iter().map(|x| linear_score(&w, b, x)).collect();
    let (platt_a, platt_b) = platt(&margins, data.ys);
    ClassicalModel::Svm { w, b, platt_a, platt_b }
}

/// Platt scaling with smoothed targets.
fn platt(margins: &[f64], ys: &[bool]) -> (f64, f64) {
    let pos = ys.iter().filter(|&&y| y).count() as f64;
    let neg = ys.len() as f64 - pos;
    let hi = (pos + 1.0) / (pos + 2.0);
    let lo = 1.0 / (neg + 2.0);
    let p = lbfgs::minimize(
        |p, g| {
            let (a, b) = (p[0], p[1]);
            g[0] = 0.0;
            g[1] = 0.0;
            let mut f = 0.0;
            for (&m, &y) in margins.iter().zip(ys) {
                let t = if y { hi } else { lo };
                let z = a * m + b;
                f += t * softplus(-z) + (1.0 - t) * softplus(z);
                let r = sigmoid(z) - t;
                g[0] += r * m;
                g[1] += r;
            }
            f
        },
        vec![1.0, ((pos + 1.0) / (neg + 1.0)).ln()],
        &lbfgs::Options::default(),
    );
    (p[0], p[1])
}

fn overlap(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Fraction of metaphorical labels among the `k` most cosine-similar
/// training documents; ties go to the earlier document.
fn knn(k: usize, docs: &[SparseBinary], labels: &[bool], x: &SparseBinary) -> f64 {
    let mut sims: Vec<(f64, usize)> = docs
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let s = if d.is_empty() || x.is_empty() {
                0.0
            } else {
                overlap(d, x) as f64 / ((d.len() * x.len()) as f64).sqrt()
            };
            (s, i)
        })
        .collect();
    sims.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let k = k.min(sims.len()).max(1);
    sims[..k].iter().filter(|(_, i)| labels[*i]).count() as f64 / k as f64
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

fn grow_tree<R: Rng>(data: &Data, samples: Vec<usize>, mtry: usize, rng: &mut R) -> Tree {
    let mut nodes = Vec::new();
    let mut stack = vec![(samples, None::<(usize, bool)>)];
    while let Some((samples, parent)) = stack.pop() {
        let id = nodes.len();
        if let Some((p, present)) = parent {
            if let Node::Split {
                present: pr, absent: ab, ..
            } = &mut nodes[p]
            {
                if present {
                    *pr = id;
                } else {
                    *ab = id;
                }
            }
        }
        let n = samples.len();
        let pos = samples.iter().filter(|&&i| data.ys[i]).count();
        let leaf = Node::Leaf(pos as f64 / n as f64);
        if pos == 0 || pos == n {
            nodes.push(leaf);
            continue;
        }
        // presence and positive counts per feature seen in this node
        let mut seen: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
        for &i in &samples {
            for &j in &data.xs[i] {
                let e = seen.entry(j).or_default();
                e.0 += 1;
                e.1 += usize::from(data.ys[i]);
            }
        }
        let mut candidates: Vec<(usize, (usize, usize))> = seen.into_iter().filter(|(_, (c, _))| *c < n).collect();
        if candidates.is_empty() {
            nodes.push(leaf);
            continue;
        }
        candidates.shuffle(rng);
        candidates.truncate(mtry);
        let parent_gini = gini(pos, n);
        let mut best: Option<(f64, usize)> = None;
        for (j, (cnt, cpos)) in candidates {
            let rest = n - cnt;
            let child = (cnt as f64 * gini(cpos, cnt) + rest as f64 * gini(pos - cpos, rest)) / n as f64;
            let gain = parent_gini - child;
            if gain > 1e-12 && best.is_none_or(|(g, bj)| gain > g || (gain == g && j < bj)) {
                best = Some((gain, j));
            }
        }
        let Some((_, feature)) = best else {
            nodes.push(leaf);
            continue;
        };
        let (with, without): (Vec<usize>, Vec<usize>) = samples.iter().partition(|&&i| data.xs[i].binary_search(&feature).is_ok());
        nodes.push(Node::Split {
            feature,
            absent: 0,
            present: 0,
        });
        stack.push((with, Some((id, true))));
        stack.push((without, Some((id, false))));
    }
    Tree { nodes }
}

fn forest(data: &Data, seed: u64, mode: ExecutionMode) -> ClassicalModel {
    let n = data.xs.len();
    let mtry = ((data.dim as f64).sqrt() as usize).max(1);
    let trees = par::map_range(mode, 100, |t| {
        let mut rng = item_stream(seed, "random-forest", t as u64);
        let samples: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        grow_tree(data, samples, mtry, &mut rng)
    });
    ClassicalModel::RandomForest { trees }
}

fn mlp_hidden(hidden: usize, w1: &[f64], b1: &[f64], x: &SparseBinary) -> Vec<f64> {
    let mut h = b1.to_vec();
    for &j in x {
        for (hk, w) in h.iter_mut().zip(&w1[j * hidden..(j + 1) * hidden]) {
            *hk += w;
        }
    }
    h.iter_mut().for_each(|v| *v = v.max(0.0));
    h
}

fn mlp(data: &Data, seed: u64) -> ClassicalModel {
    const HIDDEN: usize = 100;
    const ALPHA: f64 = 1e-4;
    const LR: f64 = 1e-3;
    const MAX_EPOCHS: usize = 200;
    const TOL: f64 = 1e-4;
    const PATIENCE: usize = 10;
    let d = data.dim;
    let n = data.xs.len();
    let mut rng = substream(seed, "mlp");
    let glorot = |fan_in: usize, fan_out: usize, rng: &mut crate::rng::StreamRng| {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        rng.gen_range(-bound..bound)
    };
    // parameter layout: w1 | b1 | w2 | b2
    let nw1 = d * HIDDEN;
    let total = nw1 + 2 * HIDDEN + 1;
    let mut p = vec![0.0; total];
    for v in &mut p[..nw1] {
        *v = glorot(d, HIDDEN, &mut rng);
    }
    for v in &mut p[nw1..nw1 + HIDDEN] {
        *v = glorot(d, HIDDEN, &mut rng);
    }
    for v in &mut p[nw1 + HIDDEN..nw1 + 2 * HIDDEN] {
        *v = glorot(HIDDEN, 1, &mut rng);
    }
    p[total - 1] = glorot(HIDDEN, 1, &mut rng);
    let (mut m, mut v) = (vec![0.0; total], vec![0.0; total]);
    let mut t = 0;
    let batch = n.clamp(1, 200);
    let mut order: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut g = vec![0.0; total];
    for _ in 0..MAX_EPOCHS {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for idx in order.chunks(batch) {
            g.iter_mut().for_each(|x| *x = 0.0);
            let (w1, rest) = p.split_at(nw1);
            let (b1, rest) = rest.split_at(HIDDEN);
            let (w2, b2) = rest.split_at(HIDDEN);
            let mut loss = 0.0;
            for &i in idx {
                let x = &data.xs[i];
                let h = mlp_hidden(HIDDEN, w1, b1, x);
                let z = b2[0] + h.iter().zip(w2).map(|(a, b)| a * b).sum::<f64>();
                let y = data.ys[i];
                loss += if y { softplus(-z) } else { softplus(z) };
                let dz = sigmoid(z) - f64::from(u8::from(y));
                g[total - 1] += dz;
                for k in 0..HIDDEN {
                    g[nw1 + HIDDEN + k] += dz * h[k];
                    if h[k] > 0.0 {
                        let dh = dz * w2[k];
                        g[nw1 + k] += dh;
                        for &j in x {
                            g[j * HIDDEN + k] += dh;
                        }
                    }
                }
            }
            let bs = idx.len() as f64;
            let sq: f64 = w1.iter().chain(w2).map(|w| w * w).sum();
            epoch_loss += loss + 0.5 * ALPHA * sq;
            for (k, gk) in g.iter_mut().enumerate() {
                *gk /= bs;
                let is_weight = k < nw1 || (nw1 + HIDDEN..nw1 + 2 * HIDDEN).contains(&k);
                if is_weight {
                    *gk += ALPHA * p[k] / bs;
                }
            }
            t += 1;
            let bc1 = 1.0 - 0.9f64.powi(t);
            let bc2 = 1.0 - 0.999f64.powi(t);
            for k in 0..total {
                m[k] = 0.9 * m[k] + 0.1 * g[k];
                v[k] = 0.999 * v[k] + 0.001 * g[k] * g[k];
                p[k] -= LR * (m[k] / bc1) / ((v[k] / bc2).sqrt() + 1e-8);
            }
        }
        let mean = epoch_loss / n as f64;
        if mean > best - TOL {
            stale += 1;
            if stale >= PATIENCE {
                break;
            }
        } else {
            stale = 0;
        }
        best = best.min(mean);
    }
    ClassicalModel::Mlp {
        hidden: HIDDEN,
        w1: p[..nw1].to_vec(),
        b1: p[nw1..nw1 + HIDDEN].to_vec(),
        w2: p[nw1 + HIDDEN..nw1 + 2 * HIDDEN].to_vec(),
        b2: p[total - 1],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn knn_ties_prefer_earlier_documents() {
        let docs = vec![vec![0], vec![0], vec![0], vec![0], vec![0], vec![0]];
        let labels = vec![true, true, true, false, false, false];
        assert_eq!(knn(5, &docs, &labels, &vec![0]), 0.6);
        assert_eq!(knn(5, &docs, &labels, &vec![]), 0.6);
    }

    #[test]
    fn naive_bayes_matches_hand_computation() {
        // two features; literal docs {0}, {0,1}; metaphorical docs {1}
        let xs = vec![vec![0], vec![0, 1], vec![1]];
        let ys = vec![false, false, true];
        let m = naive_bayes(&Data { xs: &xs, ys: &ys, dim: 2 });
        // theta_lit = (3/4, 2/4), theta_met = (1/3, 2/3)
        let lit = (2.0f64 / 3.0).ln() + (0.75f64).ln() + (0.5f64).ln();
        let met = (1.0f64 / 3.0).ln() + (1.0f64 / 3.0).ln() + (2.0f64 / 3.0).ln();
        let expect = 1.0 / (1.0 + (lit - met).exp());
        assert!((m.prob(&vec![0, 1]) - expect).abs() < 1e-12);
    }

    #[test]
    fn logistic_reaches_stationary_point() {
        let xs = vec![vec![0], vec![0, 1], vec![1], vec![1, 2], vec![2]];
        let ys = vec![false, false, true, true, true];
        let data = Data { xs: &xs, ys: &ys, dim: 3 };
        let ClassicalModel::LogisticRegression { w, b } = logistic(&data) else { unreachable!() };
        // gradient of the objective vanishes
        let mut gw = w.clone();
        let mut gb = 0.0;
        for (x, &y) in xs.iter().zip(&ys) {
            let r = sigmoid(linear_score(&w, b, x)) - f64::from(u8::from(y));
            for &j in x {
                gw[j] += r;
            }
            gb += r;
        }
        assert!(gw.iter().all(|g| g.abs() < 1e-4) && gb.abs() < 1e-4, "{gw:?} {gb}");
    }
}
