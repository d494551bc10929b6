use crate::error::{MocError, Result};
use crate::model::Model;
use crate::numerics::{AttnDims, Float, NodeId, Tape, Tensor, RMSNORM_EPS};

impl<F: Float> Model<F> {
    pub(crate) fn check_seq_len(&self, seq_len: usize) -> Result<()> {
        if seq_len > self.config().max_seq_len {
            return Err(MocError::SequenceLength {
                len: seq_len,
                max: self.config().max_seq_len,
            });
        }
        Ok(())
    }

    pub(crate) fn hidden_input(&self, tape: &mut Tape<F>, h: &Tensor<F>, batch: usize) -> Result<(NodeId, usize)> {
        let d = self.config().d_model;
        if h.last_dim() != d || h.rows() % batch != 0 {
            return Err(MocError::dim(format!(
                "hidden states {:?} are not {batch} sequences of width {d}",
                h.shape()
            )));
        }
        let seq_len = h.rows() / batch;
        let flat = h.clone().reshape(vec![h.rows(), d])?;
        Ok((tape.input(flat), seq_len))
    }

    /// Self-attention sub-layer output (before the residual add) for
    /// `h: [(batch·seq_len) × d]`: GQA with RoPE on Q and K and a causal mask.
    pub(crate) fn self_attention_node(
        &self,
        tape: &mut Tape<F>,
        h: NodeId,
        layer: usize,
        batch: usize,
        seq_len: usize,
    ) -> Result<NodeId> {
        self.check_seq_len(seq_len)?;
        let cfg = self.config();
        let lp = &self.layers[layer];
        let s = &self.store;
        let gain = tape.param(s, lp.attn_norm);
        let x = tape.rmsnorm(h, gain, F::of(RMSNORM_EPS))?;
        let (wq, wk, wv, wo) = (tape.param(s, lp.wq), tape.param(s, lp.wk), tape.param(s, lp.wv), tape.param(s, lp.wo));
        let q = tape.matmul(x, wq)?;
        let k = tape.matmul(x, wk)?;
        let v = tape.matmul(x, wv)?;
        let q = tape.rope(q, cfg.head_dim(), seq_len, cfg.rope_theta)?;
        let k = tape.rope(k, cfg.head_dim(), seq_len, cfg.rope_theta)?;
        let dims = AttnDims {
            batch,
            lq: seq_len,
            lk: seq_len,
            n_heads: cfg.n_heads,
            n_kv_heads: cfg.n_kv_heads,
            head_dim: cfg.head_dim(),
            causal: true,
        };
        let a = tape.attention(q, k, v, dims)?;
        tape.matmul(a, wo)
    }

    /// SwiGLU sub-layer output (before the residual add).
    pub(crate) fn mlp_node(&self, tape: &mut Tape<F>, h: NodeId, layer: usize) -> Result<NodeId> {
        let lp = &self.layers[layer];
        let s = &self.store;
        let gain = tape.param(s, lp.mlp_norm);
        let x = tape.rmsnorm(h, gain, F::of(RMSNORM_EPS))?;
        let (up, gate, down) = (tape.param(s, lp.w_up), tape.param(s, lp.w_gate), tape.param(s, lp.w_down));
        let u = tape.matmul(x, up)?;
        let g = tape.matmul(x, gate)?;
        let a = tape.silu_mul(g, u)?;
        tape.matmul(a, down)
    }

    /// `H + Attn(RMSNorm(H))` for hidden states holding `batch` sequences.
    pub fn self_attention_block(&self, h: &Tensor<F>, layer: usize, batch: usize) -> Result<Tensor<F>> {
        let mut tape = Tape::new();
        let (x, seq_len) = self.hidden_input(&mut tape, h, batch)?;
        let a = self.self_attention_node(&mut tape, x, layer, batch, seq_len)?;
        let out = tape.add(x, a)?;
        Ok(tape.value(out).clone())
    }

    /// `H + MLP(RMSNorm(H))`.
    pub fn mlp_block(&self, h: &Tensor<F>, layer: usize) -> Result<Tensor<F>> {
        let mut tape = Tape::new();
        let (x, _) = self.hidden_input(&mut tape, h, 1)?;
        let m = self.mlp_node(&mut tape, x, layer)?;
        let out = tape.add(x, m)?;
        Ok(tape.value(out).clone())
    }
}
