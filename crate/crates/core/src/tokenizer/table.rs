use std::collections::HashMap;

use crate::error::{Error, Result};

/// Token byte strings plus the ranked pair → token lookup shared by base
/// and merged tokenizers.
#[derive(Debug, Clone, Default)]
pub(crate) struct MergeTable {
    /// Indexed by token id; special tokens hold their name bytes.
    pub vocab: Vec<Vec<u8>>,
    pub pairs: HashMap<(u32, u32), (u32, u32)>,
    pub special_from: Option<u32>,
    pub special_to: u32,
}

impl MergeTable {
    pub fn bytes_only() -> Self {
        MergeTable { vocab: (0..=255u8).map(|b| vec![b]).collect(), ..Default::default() }
    }

    /// Registers `left + right → id` at `rank`; `id` must be the next free id.
    pub fn push_merge(&mut self, left: u32, right: u32, rank: u32) -> Result<u32> {
        let id = self.vocab.len() as u32;
        let (l, r) = (left as usize, right as usize);
        if l >= self.vocab.len() || r >= self.vocab.len() || self.is_special(left) || self.is_special(right) {
            return Err(Error::Format(format!("merge {rank} references unknown token ({left}, {right})")));
        }
        if self.pairs.contains_key(&(left, right)) {
            return Err(Error::Format(format!("merge {rank} repeats pair ({left}, {right})")));
        }
        let mut bytes = self.vocab[l].clone();
        bytes.extend_from_slice(&self.vocab[r]);
        self.vocab.push(bytes);
        self.pairs.insert((left, right), (rank, id));
        Ok(id)
    }

    pub fn push_special(&mut self, name: &str) -> u32 {
        let id = self.vocab.len() as u32;
        self.special_from.get_or_insert(id);
        self.special_to = id + 1;
        self.vocab.push(name.as_bytes().to_vec());
        id
    }

    pub fn is_special(&self, id: u32) -> bool {
        self.special_from.is_some_and(|from| id >= from && id < self.special_to)
    }

    /// Applies merges in ascending rank, leftmost first, until none apply.
    pub fn encode_bytes(&self, bytes: &[u8], out: &mut Vec<u32>) {
        let mut syms: Vec<u32> = bytes.iter().map(|&b| b as u32).collect();
        loop {
            let mut best: Option<(u32, usize, u32)> = None;
            for (i, w) in syms.windows(2).enumerate() {
                if let Some(&(rank, id)) = self.pairs.get(&(w[0], w[1])) {
                    if best.is_none_or(|(r, _, _)| rank < r) {
                        best = Some((rank, i, id));
                    }
                }
            }
            let Some((_, i, id)) = best else { break };
            syms[i] = id;
            syms.remove(i + 1);
        }
        out.extend_from_slice(&syms);
    }

    pub fn decode_bytes(&self, ids: &[u32]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &id in ids {
            let tok = self.vocab.get(id as usize).ok_or_else(|| Error::Decode(format!("unknown token id {id}")))?;
            out.extend_from_slice(tok);
        }
        Ok(out)
    }

    /// Recovers the pair that produced `bytes` from the merges registered so
    /// far: the two-token segmentation the encoder itself produces, or else
    /// the first split whose halves are both known tokens.
    pub fn infer_pair(&self, bytes: &[u8], lookup: &HashMap<Vec<u8>, u32>) -> Option<(u32, u32)> {
        let mut seg = Vec::new();
        self.encode_bytes(bytes, &mut seg);
        if let [l, r] = seg[..] {
            if !self.pairs.contains_key(&(l, r)) {
                return Some((l, r));
            }
        }
        (1..bytes.len()).find_map(|k| {
            let l = *lookup.get(&bytes[..k])?;
            let r = *lookup.get(&bytes[k..])?;
            (!self.pairs.contains_key(&(l, r))).then_some((l, r))
        })
    }
}
