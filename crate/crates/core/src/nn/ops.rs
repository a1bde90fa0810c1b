//! Forward and backward kernels over `[sequence, features]` matrices.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Axis};

use super::{Grads, ParamId, ParamSet};

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    /// `[out, in]`
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn forward(&self, p: &ParamSet, x: &Array2<f64>) -> Array2<f64> {
        let mut y = x.dot(&p.m(self.weight).t());
        y += &p.v(self.bias);
        y
    }

    /// Accumulates weight/bias gradients and returns `dL/dx`.
    pub fn backward(&self, p: &ParamSet, g: &mut Grads, x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
        general_mat_mul(1.0, &dy.t(), x, 1.0, &mut g.m(self.weight));
        g.v(self.bias).scaled_add(1.0, &dy.sum_axis(Axis(0)));
        dy.dot(&p.m(self.weight))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn forward(&self, p: &ParamSet, x: &Array2<f64>) -> (Array2<f64>, LayerNormCache) {
        let n = x.ncols() as f64;
        let mean = x.sum_axis(Axis(1)) / n;
        let centered = x - &mean.view().insert_axis(Axis(1));
        let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / n;
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let xhat = &centered * &inv_std.view().insert_axis(Axis(1));
        let y = &xhat * &p.v(self.gamma) + p.v(self.beta);
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, p: &ParamSet, g: &mut Grads, c: &LayerNormCache, dy: &Array2<f64>) -> Array2<f64> {
        g.v(self.gamma).scaled_add(1.0, &(dy * &c.xhat).sum_axis(Axis(0)));
        g.v(self.beta).scaled_add(1.0, &dy.sum_axis(Axis(0)));
        let n = dy.ncols() as f64;
        let dxhat = dy * &p.v(self.gamma);
        let sum_d = dxhat.sum_axis(Axis(1)).insert_axis(Axis(1));
        let sum_dx = (&dxhat * &c.xhat).sum_axis(Axis(1)).insert_axis(Axis(1));
        let inner = &dxhat * n - &sum_d - &(&c.xhat * &sum_dx);
        inner * &(&c.inv_std / n).insert_axis(Axis(1))
    }
}

/// Error function: Maclaurin series below 3, Laplace continued fraction for erfc above.
pub fn erf(x: f64) -> f64 {
    let a = x.abs();
    let value = if a < 3.0 {
        let x2 = a * a;
        let mut term = a;
        let mut sum = a;
        for n in 1..200 {
            term *= -x2 / n as f64;
            let contrib = term / (2 * n + 1) as f64;
            sum += contrib;
            if contrib.abs() < 1e-17 * sum.abs() {
                break;
            }
        }
        sum * 2.0 / std::f64::consts::PI.sqrt()
    } else {
        let mut f = a;
        for k in (1..=60).rev() {
            f = a + (k as f64 / 2.0) / f;
        }
        1.0 - (-a * a).exp() / (std::f64::consts::PI.sqrt() * f)
    };
    value.copysign(x)
}

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + erf(x * INV_SQRT_2))
}

pub fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + erf(x * INV_SQRT_2)) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn softmax_rows(x: &mut Array2<f64>) {
    for mut row in x.rows_mut() {
        softmax_in_place(row.as_slice_mut().expect("contiguous row"));
    }
}

pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

pub fn log_softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    v.iter().map(|x| x - lse).collect()
}

/// Multi-head scaled dot-product attention with separate query and key/value inputs.
#[derive(Debug, Clone, Copy)]
pub struct Attention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub causal: bool,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    xq: Array2<f64>,
    xkv: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// One `[Tq, Tk]` probability matrix per head.
    pub probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
}

impl Attention {
    pub fn forward(&self, p: &ParamSet, xq: &Array2<f64>, xkv: &Array2<f64>) -> (Array2<f64>, AttentionCache) {
        let q = self.query.forward(p, xq);
        let k = self.key.forward(p, xkv);
        let v = self.value.forward(p, xkv);
        let d = q.ncols();
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut ctx = Array2::zeros((q.nrows(), d));
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            if self.causal {
                for ((i, j), v) in scores.indexed_iter_mut() {
                    if j > i {
                        *v = f64::NEG_INFINITY;
                    }
                }
            }
            softmax_rows(&mut scores);
            ctx.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
            probs.push(scores);
        }
        let out = self.output.forward(p, &ctx);
        let cache = AttentionCache {
            xq: xq.clone(),
            xkv: xkv.clone(),
            q,
            k,
            v,
            probs,
            ctx,
        };
        (out, cache)
    }

    /// Returns `(dL/dxq, dL/dxkv)`.
    pub fn backward(
        &self,
        p: &ParamSet,
        g: &mut Grads,
        c: &AttentionCache,
        dout: &Array2<f64>,
    ) -> (Array2<f64>, Array2<f64>) {
        let dctx = self.output.backward(p, g, &c.ctx, dout);
        let d = c.q.ncols();
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Array2::zeros(c.q.raw_dim());
        let mut dk = Array2::zeros(c.k.raw_dim());
        let mut dv = Array2::zeros(c.v.raw_dim());
        for h in 0..self.heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let probs = &c.probs[h];
            let dctx_h = dctx.slice(cols);
            dv.slice_mut(cols).assign(&probs.t().dot(&dctx_h));
            let dp = dctx_h.dot(&c.v.slice(cols).t());
            let row_dot = (&dp * probs).sum_axis(Axis(1)).insert_axis(Axis(1));
            let ds = (dp - &row_dot) * probs * scale;
            dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
        }
        let dxq = self.query.backward(p, g, &c.xq, &dq);
        let mut dxkv = self.key.backward(p, g, &c.xkv, &dk);
        dxkv += &self.value.backward(p, g, &c.xkv, &dv);
        (dxq, dxkv)
    }
}

/// Position-wise feed-forward block: `Linear -> GELU -> Linear`.
#[derive(Debug, Clone, Copy)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

#[derive(Debug, Clone)]
pub struct FeedForwardCache {
    x: Array2<f64>,
    pre: Array2<f64>,
    act: Array2<f64>,
}

impl FeedForward {
    pub fn forward(&self, p: &ParamSet, x: &Array2<f64>) -> (Array2<f64>, FeedForwardCache) {
        let pre = self.inner.forward(p, x);
        let act = pre.mapv(gelu);
        let y = self.outer.forward(p, &act);
        (y, FeedForwardCache { x: x.clone(), pre, act })
    }

    pub fn backward(&self, p: &ParamSet, g: &mut Grads, c: &FeedForwardCache, dy: &Array2<f64>) -> Array2<f64> {
        let dact = self.outer.backward(p, g, &c.act, dy);
        let dpre = dact * &c.pre.mapv(gelu_grad);
        self.inner.backward(p, g, &c.x, &dpre)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Init, ParamSet};
    use crate::rng::substream;

    fn random_matrix(r: usize, c: usize, seed: u64) -> Array2<f64> {
        let mut rng = substream(seed, "matrix");
        Array2::from_shape_fn((r, c), |_| crate::nn::standard_normal(&mut rng))
    }

    /// Central finite differences of `loss` with respect to every parameter scalar.
    fn check_param_grads(p: &mut ParamSet, analytic: &Grads, loss: &dyn Fn(&ParamSet) -> f64) {
        let eps = 1e-6;
        let ids: Vec<_> = p.iter().map(|(id, _, _)| id).collect();
        for id in ids {
            for i in 0..p.tensor(id).numel() {
                let orig = p.tensor(id).data[i];
                p.tensor_mut(id).data[i] = orig + eps;
                let up = loss(p);
                p.tensor_mut(id).data[i] = orig - eps;
                let down = loss(p);
                p.tensor_mut(id).data[i] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let a = analytic.raw(id)[i];
                assert!(
                    (numeric - a).abs() <= 1e-6 * (1.0 + numeric.abs()),
                    "{} [{i}]: numeric {numeric} analytic {a}",
                    p.name(id)
                );
            }
        }
    }

    fn check_input_grads(x: &Array2<f64>, analytic: &Array2<f64>, loss: &dyn Fn(&Array2<f64>) -> f64) {
        let eps = 1e-6;
        let mut x = x.clone();
        for idx in 0..x.len() {
            let (r, c) = (idx / x.ncols(), idx % x.ncols());
            let orig = x[[r, c]];
            x[[r, c]] = orig + eps;
            let up = loss(&x);
            x[[r, c]] = orig - eps;
            let down = loss(&x);
            x[[r, c]] = orig;
            let numeric = (up - down) / (2.0 * eps);
            assert!(
                (numeric - analytic[[r, c]]).abs() <= 1e-6 * (1.0 + numeric.abs()),
                "input [{r},{c}]: numeric {numeric} analytic {}",
                analytic[[r, c]]
            );
        }
    }

    fn linear(p: &mut ParamSet, name: &str, out: usize, inp: usize, rng: &mut crate::rng::StreamRng) -> Linear {
        Linear {
            weight: p.add(&format!("{name}.weight"), &[out, inp], Init::Normal(0.5), rng),
            bias: p.add(&format!("{name}.bias"), &[out], Init::Normal(0.5), rng),
        }
    }

    #[test]
    fn erf_matches_reference_values() {
        // reference values from standard tables
        for (x, want) in [
            (0.0, 0.0),
            (0.5, 0.520_499_877_813_046_5),
            (1.0, 0.842_700_792_949_714_9),
            (-2.0, -0.995_322_265_018_952_7),
            (3.5, 0.999_999_256_901_627_7),
        ] {
            assert!((erf(x) - want).abs() < 1e-13, "erf({x}) = {}", erf(x));
        }
    }

    #[test]
    fn gelu_derivative_matches_finite_difference() {
        for x in [-3.0, -0.7, 0.0, 0.3, 2.5] {
            let numeric = (gelu(x + 1e-5) - gelu(x - 1e-5)) / 2e-5;
            assert!((numeric - gelu_grad(x)).abs() < 1e-5, "x={x}");
        }
    }

    #[test]
    fn linear_and_layernorm_gradients() {
        let mut rng = substream(1, "init");
        let mut p = ParamSet::new();
        let lin = linear(&mut p, "lin", 3, 4, &mut rng);
        let ln = LayerNorm {
            gamma: p.add("ln.gamma", &[3], Init::Normal(1.0), &mut rng),
            beta: p.add("ln.beta", &[3], Init::Normal(1.0), &mut rng),
            eps: 1e-12,
        };
        let x = random_matrix(5, 4, 2);
        let target = random_matrix(5, 3, 3);
        let loss = |p: &ParamSet, x: &Array2<f64>| {
            let (y, _) = ln.forward(p, &lin.forward(p, x));
            (&y * &target).sum()
        };
        let mut g = Grads::zeros_like(&p);
        let h = lin.forward(&p, &x);
        let (_, cache) = ln.forward(&p, &h);
        let dh = ln.backward(&p, &mut g, &cache, &target);
        let dx = lin.backward(&p, &mut g, &x, &dh);
        check_param_grads(&mut p.clone(), &g, &|p| loss(p, &x));
        check_input_grads(&x, &dx, &|x| loss(&p, x));
    }

    #[test]
    fn attention_gradients_self_cross_and_causal() {
        for (causal, cross) in [(false, false), (true, false), (false, true)] {
            let mut rng = substream(7, "init");
            let mut p = ParamSet::new();
            let d = 4;
            let attn = Attention {
                query: linear(&mut p, "q", d, d, &mut rng),
                key: linear(&mut p, "k", d, d, &mut rng),
                value: linear(&mut p, "v", d, d, &mut rng),
                output: linear(&mut p, "o", d, d, &mut rng),
                heads: 2,
                causal,
            };
            let xq = random_matrix(3, d, 11);
            let xkv = if cross { random_matrix(5, d, 12) } else { xq.clone() };
            let target = random_matrix(3, d, 13);
            let loss = |p: &ParamSet, xq: &Array2<f64>, xkv: &Array2<f64>| {
                let (y, _) = attn.forward(p, xq, xkv);
                (&y * &target).sum()
            };
            let mut g = Grads::zeros_like(&p);
            let (_, cache) = attn.forward(&p, &xq, &xkv);
            let (dxq, dxkv) = attn.backward(&p, &mut g, &cache, &target);
            check_param_grads(&mut p.clone(), &g, &|p| loss(p, &xq, &xkv));
            if cross {
                check_input_grads(&xq, &dxq, &|x| loss(&p, x, &xkv));
                check_input_grads(&xkv, &dxkv, &|x| loss(&p, &xq, x));
            } else {
                let total = &dxq + &dxkv;
                check_input_grads(&xq, &total, &|x| loss(&p, x, x));
            }
            for probs in &cache.probs {
                for row in probs.rows() {
                    assert!((row.sum() - 1.0).abs() < 1e-12);
                }
                if causal {
                    assert_eq!(probs[[0, 1]], 0.0);
                }
            }
        }
    }

    #[test]
    fn feed_forward_gradients() {
        let mut rng = substream(3, "init");
        let mut p = ParamSet::new();
        let ff = FeedForward {
            inner: linear(&mut p, "in", 6, 3, &mut rng),
            outer: linear(&mut p, "out", 3, 6, &mut rng),
        };
        let x = random_matrix(2, 3, 5);
        let target = random_matrix(2, 3, 6);
        let loss = |p: &ParamSet, x: &Array2<f64>| (&ff.forward(p, x).0 * &target).sum();
        let mut g = Grads::zeros_like(&p);
        let (_, cache) = ff.forward(&p, &x);
        let dx = ff.backward(&p, &mut g, &cache, &target);
        check_param_grads(&mut p.clone(), &g, &|p| loss(p, &x));
        check_input_grads(&x, &dx, &|x| loss(&p, x));
    }
}
