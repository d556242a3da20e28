use super::lstm::LstmCell;
use crate::autodiff::{xavier_uniform_init, ParameterStore, Value};
use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Per-token hidden vectors of the bidirectional encoder. Each `hs[t]` is
/// the concatenation `[left-to-right state : right-to-left state]`; the
/// summary is the last token's vector.
pub struct EncoderStates {
    pub hs: Vec<Value>,
    pub summary: Value,
}

/// Bidirectional LSTM over token embeddings. Out-of-vocabulary tokens map
/// to the reserved UNK embedding.
pub struct BiEncoder {
    embed: Value,
    fwd: LstmCell,
    bwd: LstmCell,
    hidden: usize,
}

impl BiEncoder {
    pub fn new(
        store: &mut ParameterStore,
        prefix: &str,
        vocab_size: usize,
        embed_dim: usize,
        hidden: usize,
        rng: &mut SeededRng,
    ) -> Result<BiEncoder> {
        let embed = store.add(
            &format!("{prefix}.embed"),
            xavier_uniform_init(&[vocab_size, embed_dim], vocab_size, embed_dim, rng)?,
        )?;
        let fwd = LstmCell::new(store, &format!("{prefix}.fwd"), embed_dim, hidden, rng)?;
        let bwd = LstmCell::new(store, &format!("{prefix}.bwd"), embed_dim, hidden, rng)?;
        Ok(BiEncoder {
            embed,
            fwd,
            bwd,
            hidden,
        })
    }

    pub fn out_dim(&self) -> usize {
        2 * self.hidden
    }

    pub fn encode_ids(&self, ids: &[usize]) -> Result<EncoderStates> {
        if ids.is_empty() {
            return Err(Error::Domain {
                op: "encode",
                detail: "empty input".into(),
            });
        }
        let n = ids.len();
        let embedded: Vec<Value> = ids
            .iter()
            .map(|&id| self.embed.embedding_lookup(&[id]))
            .collect::<Result<_>>()?;

        let mut forward = Vec::with_capacity(n);
        let mut h = Value::zeros(&[self.hidden]);
        let mut c = Value::zeros(&[self.hidden]);
        for x in &embedded {
            let (nh, nc) = self.fwd.step(x, &h, &c)?;
            forward.push(nh.clone());
            h = nh;
            c = nc;
        }

        let mut backward = vec![Value::zeros(&[0]); 0];
        backward.reserve(n);
        let mut h = Value::zeros(&[self.hidden]);
        let mut c = Value::zeros(&[self.hidden]);
        for x in embedded.iter().rev() {
            let (nh, nc) = self.bwd.step(x, &h, &c)?;
            backward.push(nh.clone());
            h = nh;
            c = nc;
        }
        backward.reverse();

        let hs: Vec<Value> = forward
            .iter()
            .zip(backward.iter())
            .map(|(f, b)| Value::concat(&[f.clone(), b.clone()], 0))
            .collect::<Result<_>>()?;
        let summary = hs[n - 1].clone();
        Ok(EncoderStates { hs, summary })
    }

    pub fn encode_tokens(&self, tokens: &[String], vocab: &Vocabulary) -> Result<EncoderStates> {
        let ids: Vec<usize> = tokens.iter().map(|t| vocab.id(t)).collect();
        self.encode_ids(&ids)
    }
}
