//! Naive reference implementations shared by the integration tests. They
//! work on plain `Vec<f64>` rows with scalar loops and never call the
//! library's kernels.
#![allow(dead_code)]

use moc_core::model::{Model, ModelConfig};
use moc_core::numerics::{ParamId, RngState, Tensor};
use rand::Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(t: &Tensor<f64>) -> Mat {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub fn param_mat(model: &Model<f64>, id: ParamId) -> Mat {
    to_mat(model.store.value(id))
}

pub fn param_vec(model: &Model<f64>, id: ParamId) -> Vec<f64> {
    model.store.value(id).data().to_vec()
}

pub fn matvec(x: &[f64], w: &Mat) -> Vec<f64> {
    let n = w[0].len();
    let mut out = vec![0.0; n];
    for (i, xi) in x.iter().enumerate() {
        for j in 0..n {
            out[j] += xi * w[i][j];
        }
    }
    out
}

pub fn rms_row(x: &[f64], g: &[f64]) -> Vec<f64> {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let r = 1.0 / (ms + 1e-6).sqrt();
    x.iter().zip(g).map(|(v, g)| g * v * r).collect()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

/// Multi-head attention for one sequence. `visible(i)` gives how many keys
/// query `i` may see.
pub fn naive_attention(
    q: &Mat,
    k: &Mat,
    v: &Mat,
    n_heads: usize,
    n_kv: usize,
    head_dim: usize,
    causal: bool,
) -> Mat {
    let group = n_heads / n_kv;
    q.iter()
        .enumerate()
        .map(|(i, qi)| {
            let mut out = vec![0.0; n_heads * head_dim];
            for h in 0..n_heads {
                let kvh = h / group;
                let visible = if causal { i + 1 } else { k.len() };
                let scores: Vec<f64> = (0..visible)
                    .map(|j| {
                        (0..head_dim)
                            .map(|d| qi[h * head_dim + d] * k[j][kvh * head_dim + d])
                            .sum::<f64>()
                            / (head_dim as f64).sqrt()
                    })
                    .collect();
                let p = softmax(&scores);
                for (j, pj) in p.iter().enumerate() {
                    for d in 0..head_dim {
                        out[h * head_dim + d] += pj * v[j][kvh * head_dim + d];
                    }
                }
            }
            out
        })
        .collect()
}

pub fn rope_row(x: &mut [f64], head_dim: usize, pos: usize, theta: f64) {
    for head in x.chunks_mut(head_dim) {
        for i in 0..head_dim / 2 {
            let ang = pos as f64 * theta.powf(-2.0 * i as f64 / head_dim as f64);
            let (a, b) = (head[2 * i], head[2 * i + 1]);
            head[2 * i] = a * ang.cos() - b * ang.sin();
            head[2 * i + 1] = a * ang.sin() + b * ang.cos();
        }
    }
}

/// Memory layer output for one sequence `h` attending to the given chapters
/// with the given weights (dense over exactly those chapters).
pub fn naive_memory_layer(model: &Model<f64>, layer: usize, h: &Mat, chapters: &[(usize, f64)]) -> Mat {
    let cfg = model.config();
    let mp = model.layers[layer].memory.as_ref().unwrap();
    let bank = param_mat(model, model.bank.as_ref().unwrap().tokens);
    let t = cfg.chapter_size;
    let g_tok = param_vec(model, mp.token_norm);
    let mut mem = Vec::new();
    for &(c, w) in chapters {
        for row in &bank[c * t..(c + 1) * t] {
            mem.push(rms_row(row, &g_tok).iter().map(|v| v * w).collect::<Vec<f64>>());
        }
    }
    let (wq, wk, wv, wo) = (
        param_mat(model, mp.wq),
        param_mat(model, mp.wk),
        param_mat(model, mp.wv),
        param_mat(model, mp.wo),
    );
    let g_q = param_vec(model, mp.query_norm);
    let q: Mat = h.iter().map(|x| matvec(&rms_row(x, &g_q), &wq)).collect();
    let k: Mat = mem.iter().map(|m| matvec(m, &wk)).collect();
    let v: Mat = mem.iter().map(|m| matvec(m, &wv)).collect();
    let a = naive_attention(&q, &k, &v, cfg.mem_heads, cfg.mem_kv_heads, cfg.mem_head_dim(), false);
    h.iter()
        .zip(&a)
        .map(|(x, ai)| x.iter().zip(matvec(ai, &wo)).map(|(a, b)| a + b).collect())
        .collect()
}

/// Router for one sequence: `(probs, logits)`.
pub fn naive_router(model: &Model<f64>, layer: usize, h: &Mat) -> (Vec<f64>, Vec<f64>) {
    let mp = model.layers[layer].memory.as_ref().unwrap();
    let d = h[0].len();
    let mut r = vec![0.0; d];
    for x in h {
        for j in 0..d {
            r[j] += x[j] / h.len() as f64;
        }
    }
    let logits: Vec<f64> = matvec(&r, &param_mat(model, mp.router_w))
        .iter()
        .zip(param_vec(model, mp.router_b))
        .map(|(a, b)| a + b)
        .collect();
    (softmax(&logits), logits)
}

pub fn random_hidden(rows: usize, d: usize, seed: u64) -> Tensor<f64> {
    let mut rng = RngState::new(seed).substream(99).rng();
    Tensor::new(vec![rows, d], (0..rows * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn micro_f64(seed: u64) -> Model<f64> {
    Model::build(&ModelConfig::micro(), RngState::new(seed)).unwrap()
}

/// Perturb every router weight so routing is far from uniform.
pub fn spread_router(model: &mut Model<f64>, seed: u64, scale: f64) {
    let mut rng = RngState::new(seed).substream(7).rng();
    let ids: Vec<_> = model.layers.iter().filter_map(|l| l.memory.as_ref()).map(|m| m.router_w).collect();
    for id in ids {
        for v in model.store.get_mut(id).value.data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
}
