//! Synthetic multi-step modular arithmetic questions.
//!
//! A question is a start value followed by add/multiply operations, all
//! modulo `M`. The reasoning trace is the residue after every operation and
//! the answer is the final residue.

use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Token ids of the shared toy vocabulary.
///
/// Layout for modulus `M`: digits `0..M`, answer tokens `M..2M`, add
/// operations `2M..3M`, multiply operations `3M..4M`, then `BOS`, `THINK`,
/// `PAD`, `EOS`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Vocab {
    modulus: u32,
}

impl Vocab {
    pub fn new(modulus: u32) -> Self {
        Vocab { modulus }
    }

    pub fn modulus(&self) -> u32 {
        self.modulus
    }

    pub fn size(&self) -> usize {
        4 * self.modulus as usize + 4
    }

    pub fn digit(&self, v: u32) -> usize {
        v as usize
    }

    pub fn answer(&self, v: u32) -> usize {
        (self.modulus + v) as usize
    }

    pub fn op(&self, op: Operation) -> usize {
        let m = self.modulus as usize;
        match op {
            Operation::Add(c) => 2 * m + c as usize,
            Operation::Mul(c) => 3 * m + c as usize,
        }
    }

    pub fn bos(&self) -> usize {
        4 * self.modulus as usize
    }

    pub fn think(&self) -> usize {
        self.bos() + 1
    }

    pub fn pad(&self) -> usize {
        self.bos() + 2
    }

    pub fn eos(&self) -> usize {
        self.bos() + 3
    }

    pub fn as_digit(&self, token: usize) -> Option<u32> {
        (token < self.modulus as usize).then_some(token as u32)
    }

    pub fn as_answer(&self, token: usize) -> Option<u32> {
        let m = self.modulus as usize;
        (m..2 * m).contains(&token).then(|| (token - m) as u32)
    }

    pub fn as_op(&self, token: usize) -> Option<Operation> {
        let m = self.modulus as usize;
        if (2 * m..3 * m).contains(&token) {
            Some(Operation::Add((token - 2 * m) as u32))
        } else if (3 * m..4 * m).contains(&token) {
            Some(Operation::Mul((token - 3 * m) as u32))
        } else {
            None
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operation {
    Add(u32),
    Mul(u32),
}

impl Operation {
    pub fn apply(self, value: u32, modulus: u32) -> u32 {
        match self {
            Operation::Add(c) => (value + c) % modulus,
            Operation::Mul(c) => (value * c) % modulus,
        }
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operation::Add(c) => write!(f, "+{c}"),
            Operation::Mul(c) => write!(f, "x{c}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Heldout,
    Probe,
}

/// One question with its ground-truth trace.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskInstance {
    pub id: u64,
    pub split: Split,
    pub modulus: u32,
    pub start: u32,
    pub operations: Vec<Operation>,
    /// Vocabulary ids: start digit followed by one token per operation.
    pub question_tokens: Vec<usize>,
    /// Residue after each operation.
    pub reasoning_tokens: Vec<u32>,
    pub answer_token: u32,
}

impl TaskInstance {
    pub fn new(id: u64, split: Split, modulus: u32, start: u32, operations: Vec<Operation>) -> Result<Self> {
        if modulus < 2 {
            return Err(Error::invalid("modulus must be at least 2"));
        }
        if operations.is_empty() {
            return Err(Error::invalid("a question needs at least one operation"));
        }
        if start >= modulus {
            return Err(Error::invalid(format!("start {start} not below modulus {modulus}")));
        }
        for op in &operations {
            let (Operation::Add(c) | Operation::Mul(c)) = *op;
            if c >= modulus {
                return Err(Error::invalid(format!("operation constant {c} not below modulus {modulus}")));
            }
        }
        let vocab = Vocab::new(modulus);
        let mut question_tokens = vec![vocab.digit(start)];
        question_tokens.extend(operations.iter().map(|&op| vocab.op(op)));
        let mut reasoning = Vec::with_capacity(operations.len());
        let mut v = start;
        for op in &operations {
            v = op.apply(v, modulus);
            reasoning.push(v);
        }
        Ok(TaskInstance {
            id,
            split,
            modulus,
            start,
            operations,
            question_tokens,
            answer_token: v,
            reasoning_tokens: reasoning,
        })
    }

    /// Number of chain terms including the start value.
    pub fn chain_length(&self) -> usize {
        self.operations.len() + 1
    }

    pub fn question_text(&self) -> String {
        let mut s = self.start.to_string();
        for op in &self.operations {
            s.push(' ');
            s.push_str(&op.to_string());
        }
        s
    }
}

/// Parses `"3 +4 x2"` (also `*2`) into a question.
pub fn parse_question(text: &str, modulus: u32) -> Result<TaskInstance> {
    let mut parts = text.split_whitespace();
    let start: u32 = parts
        .next()
        .ok_or_else(|| Error::invalid("empty question"))?
        .parse()
        .map_err(|_| Error::invalid(format!("bad start value in {text:?}")))?;
    let mut ops = Vec::new();
    for p in parts {
        let (kind, rest) = p.split_at(p.char_indices().nth(1).map_or(p.len(), |(i, _)| i));
        let c: u32 = rest
            .parse()
            .map_err(|_| Error::invalid(format!("bad operation {p:?}")))?;
        ops.push(match kind {
            "+" => Operation::Add(c),
            "x" | "X" | "*" | "×" => Operation::Mul(c),
            _ => return Err(Error::invalid(format!("bad operation {p:?}"))),
        });
    }
    TaskInstance::new(0, Split::Heldout, modulus, start, ops)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub seed: u64,
    /// Training questions.
    pub count: usize,
    /// Held-out evaluation questions.
    pub holdout: usize,
    /// Questions used to monitor pretraining of the base model.
    pub probe: usize,
    /// Inclusive range of chain lengths, counting the start value.
    pub k_range: [usize; 2],
    pub modulus: u32,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            seed: 0,
            count: 2000,
            holdout: 200,
            probe: 200,
            k_range: [2, 6],
            modulus: 10,
        }
    }
}

impl TaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_range[0] < 2 || self.k_range[0] > self.k_range[1] {
            return Err(Error::invalid(format!("invalid k_range {:?}", self.k_range)));
        }
        if self.modulus < 3 {
            return Err(Error::invalid("modulus must be at least 3"));
        }
        if self.count == 0 {
            return Err(Error::invalid("count must be at least 1"));
        }
        Ok(())
    }

    /// Longest operation list a question can have.
    pub fn max_operations(&self) -> usize {
        self.k_range[1] - 1
    }
}

/// Draws question `index` of the stream keyed by `seed`.
pub fn gen_instance(seed: u64, index: u64, split: Split, cfg: &TaskConfig) -> Result<TaskInstance> {
    let mut rng = stream_rng(seed, Stream::Data, index);
    let m = cfg.modulus;
    let k = rng.gen_range(cfg.k_range[0]..=cfg.k_range[1]);
    let start = rng.gen_range(0..m);
    let ops = (1..k)
        .map(|_| {
            if rng.gen_bool(0.5) {
                Operation::Add(rng.gen_range(1..m))
            } else {
                Operation::Mul(rng.gen_range(2..m))
            }
        })
        .collect();
    TaskInstance::new(index, split, m, start, ops)
}

/// `count` consecutive questions starting at stream index `first`.
pub fn gen_dataset(seed: u64, first: u64, count: usize, split: Split, cfg: &TaskConfig) -> Result<Vec<TaskInstance>> {
    if count == 0 {
        return Err(Error::invalid("count must be at least 1"));
    }
    (first..first + count as u64)
        .map(|i| gen_instance(seed, i, split, cfg))
        .collect()
}

/// Train, held-out and probe splits over disjoint index ranges.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<TaskInstance>,
    pub heldout: Vec<TaskInstance>,
    pub probe: Vec<TaskInstance>,
}

impl Dataset {
    pub fn generate(cfg: &TaskConfig) -> Result<Self> {
        cfg.validate()?;
        let n_train = cfg.count as u64;
        let n_held = cfg.holdout as u64;
        let split = |first, count, split| -> Result<Vec<TaskInstance>> {
            if count == 0 {
                Ok(Vec::new())
            } else {
                gen_dataset(cfg.seed, first, count, split, cfg)
            }
        };
        Ok(Dataset {
            train: split(0, cfg.count, Split::Train)?,
            heldout: split(n_train, cfg.holdout, Split::Heldout)?,
            probe: split(n_train + n_held, cfg.probe, Split::Probe)?,
        })
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for inst in self.train.iter().chain(&self.heldout).chain(&self.probe) {
            out.push_str(&serde_json::to_string(inst)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut ds = Dataset {
            train: Vec::new(),
            heldout: Vec::new(),
            probe: Vec::new(),
        };
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let inst: TaskInstance = serde_json::from_str(line)?;
            let check = TaskInstance::new(inst.id, inst.split, inst.modulus, inst.start, inst.operations.clone())?;
            if check != inst {
                return Err(Error::invalid(format!("inconsistent record for question {}", inst.id)));
            }
            match inst.split {
                Split::Train => ds.train.push(inst),
                Split::Heldout => ds.heldout.push(inst),
                Split::Probe => ds.probe.push(inst),
            }
        }
        Ok(ds)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_examples() {
        let t = TaskInstance::new(0, Split::Train, 10, 3, vec![Operation::Add(4), Operation::Mul(2)]).unwrap();
        assert_eq!(t.reasoning_tokens, vec![7, 4]);
        assert_eq!(t.answer_token, 4);
        let t = TaskInstance::new(0, Split::Train, 10, 1, vec![Operation::Add(1)]).unwrap();
        assert_eq!(t.answer_token, 2);
        assert_eq!(t.chain_length(), 2);
    }

    #[test]
    fn parse_round_trip() {
        let t = parse_question("3 +4 x2", 10).unwrap();
        assert_eq!(t.answer_token, 4);
        assert_eq!(t.question_text(), "3 +4 x2");
        assert!(parse_question("3 -4", 10).is_err());
        assert!(parse_question("", 10).is_err());
        assert!(parse_question("12 +1", 10).is_err());
    }

    #[test]
    fn vocab_ranges_disjoint() {
        let v = Vocab::new(10);
        assert_eq!(v.size(), 44);
        assert_eq!(v.as_digit(v.digit(7)), Some(7));
        assert_eq!(v.as_answer(v.answer(7)), Some(7));
        assert_eq!(v.as_op(v.op(Operation::Mul(3))), Some(Operation::Mul(3)));
        assert_eq!(v.as_digit(v.answer(0)), None);
        assert_eq!(v.as_answer(v.eos()), None);
    }

    #[test]
    fn generation_is_deterministic_and_in_range() {
        let cfg = TaskConfig::default();
        let a = gen_dataset(5, 0, 50, Split::Train, &cfg).unwrap();
        let b = gen_dataset(5, 0, 50, Split::Train, &cfg).unwrap();
        assert_eq!(a, b);
        for t in &a {
            assert!((2..=6).contains(&t.chain_length()));
        }
        let tail = gen_dataset(5, 10, 5, Split::Train, &cfg).unwrap();
        assert_eq!(&a[10..15], &tail[..]);
    }

    #[test]
    fn dataset_jsonl_round_trip() {
        let cfg = TaskConfig {
            count: 5,
            holdout: 3,
            probe: 2,
            ..TaskConfig::default()
        };
        let ds = Dataset::generate(&cfg).unwrap();
        assert_eq!(Dataset::from_jsonl(&ds.to_jsonl().unwrap()).unwrap(), ds);
        assert_eq!(ds.heldout[0].id, 5);
    }
}
