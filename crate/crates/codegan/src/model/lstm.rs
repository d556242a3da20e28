use crate::autodiff::{xavier_uniform_init, ParameterStore, Tensor, Value};
use crate::error::Result;
use crate::rng::SeededRng;

/// Single LSTM cell over graph values. Gate layout in the fused weight
/// matrices is `[input, forget, cell, output]`.
pub struct LstmCell {
    w_ih: Value,
    w_hh: Value,
    b: Value,
    hidden: usize,
}

impl LstmCell {
    pub fn new(
        store: &mut ParameterStore,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut SeededRng,
    ) -> Result<LstmCell> {
        let w_ih = store.add(
            &format!("{prefix}.w_ih"),
            xavier_uniform_init(&[4 * hidden, input_dim], input_dim, 4 * hidden, rng)?,
        )?;
        let w_hh = store.add(
            &format!("{prefix}.w_hh"),
            xavier_uniform_init(&[4 * hidden, hidden], hidden, 4 * hidden, rng)?,
        )?;
        let b = store.add(
            &format!("{prefix}.b"),
            Value::parameter(Tensor::zeros(&[4 * hidden])),
        )?;
        Ok(LstmCell {
            w_ih,
            w_hh,
            b,
            hidden,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// One step: returns the new (hidden, cell) pair.
    pub fn step(&self, x: &Value, h: &Value, c: &Value) -> Result<(Value, Value)> {
        let gates = self
            .w_ih
            .matmul(x)?
            .add(&self.w_hh.matmul(h)?)?
            .add(&self.b)?;
        let hh = self.hidden;
        let i = gates.slice(0, hh)?.sigmoid()?;
        let f = gates.slice(hh, hh)?.sigmoid()?;
        let g = gates.slice(2 * hh, hh)?.tanh()?;
        let o = gates.slice(3 * hh, hh)?.sigmoid()?;
        let c_new = f.mul(c)?.add(&i.mul(&g)?)?;
        let h_new = o.mul(&c_new.tanh()?)?;
        Ok((h_new, c_new))
    }
}
