//! Arithmetic question datasets over a single-token number vocabulary.
//!
//! Numbers 0..=max_number are atomic tokens; questions are short word-level
//! token sequences from a fixed template pool. Generation enumerates operand
//! pairs exhaustively (unordered, with replacement), samples one template per
//! pair, shuffles, and splits 80/10/10, all from one seed.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::rng;

/// Question surface form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskFormat {
    /// Five addition phrasings.
    NaturalLanguage,
    /// Bare reverse-Polish "a,b+".
    Rpn,
    /// Five multiplication phrasings.
    Multiplication,
}

/// Dataset partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// {a} and {b} mark operand slots; everything else is a literal token.
const ADD_TEMPLATES: [&[&str]; 5] = [
    &["Total", "of", "{a}", "and", "{b}", "."],
    &["Add", "together", "{a}", "and", "{b}", "."],
    &["Calculate", "{a}", "+", "{b}", "."],
    &["What", "is", "the", "sum", "of", "{a}", "and", "{b}", "?"],
    &["Put", "together", "{a}", "and", "{b}", "."],
];

const RPN_TEMPLATES: [&[&str]; 1] = [&["{a}", ",", "{b}", "+"]];

const MUL_TEMPLATES: [&[&str]; 5] = [
    &["What", "is", "the", "product", "of", "{a}", "and", "{b}", "?"],
    &["Find", "the", "product", "of", "{a}", "multiplied", "by", "{b}", "."],
    &["Calculate", "{a}", "times", "{b}", "."],
    &["{a}", "multiplied", "by", "{b}", "equals", "what", "?"],
    &["Multiplication", "of", "{a}", "with", "{b}", "."],
];

pub const PAD_TOKEN: &str = "<pad>";

fn templates_for(format: TaskFormat) -> &'static [&'static [&'static str]] {
    match format {
        TaskFormat::NaturalLanguage => &ADD_TEMPLATES,
        TaskFormat::Rpn => &RPN_TEMPLATES,
        TaskFormat::Multiplication => &MUL_TEMPLATES,
    }
}

/// Token <-> id table. Ids 0..=max_number are the numbers themselves, then
/// template words in first-appearance order, then the pad token last.
#[derive(Debug, Clone)]
pub struct NumberVocab {
    max_number: usize,
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl NumberVocab {
    pub fn for_format(max_number: usize, format: TaskFormat) -> Self {
        let mut tokens: Vec<String> = (0..=max_number).map(|n| n.to_string()).collect();
        for template in templates_for(format) {
            for &tok in *template {
                if tok == "{a}" || tok == "{b}" {
                    continue;
                }
                if !tokens.iter().skip(max_number + 1).any(|t| t == tok) {
                    tokens.push(tok.to_string());
                }
            }
        }
        tokens.push(PAD_TOKEN.to_string());
        Self::from_tokens(max_number, tokens)
    }

    fn from_tokens(max_number: usize, tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self {
            max_number,
            tokens,
            index,
        }
    }

    pub fn max_number(&self) -> usize {
        self.max_number
    }

    /// p: how many number tokens exist.
    pub fn n_numbers(&self) -> usize {
        self.max_number + 1
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn pad_id(&self) -> u32 {
        (self.tokens.len() - 1) as u32
    }

    pub fn is_number(&self, id: u32) -> bool {
        (id as usize) <= self.max_number
    }

    pub fn id(&self, token: &str) -> Result<u32> {
        self.index
            .get(token)
            .copied()
            .ok_or_else(|| CoreError::UnknownToken(token.to_string()))
    }

    pub fn token(&self, id: u32) -> Result<&str> {
        self.tokens
            .get(id as usize)
            .map(|s| s.as_str())
            .ok_or(CoreError::UnknownTokenId(id))
    }

    /// One "id<TAB>token" line per entry.
    pub fn write_sidecar<W: Write>(&self, w: &mut W) -> Result<()> {
        for (i, tok) in self.tokens.iter().enumerate() {
            writeln!(w, "{i}\t{tok}")?;
        }
        Ok(())
    }

    pub fn read_sidecar<R: BufRead>(r: R) -> Result<Self> {
        let mut tokens = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (id, tok) = line.split_once('\t').ok_or_else(|| {
                CoreError::BadConfig(format!("vocab line {} lacks a tab", lineno + 1))
            })?;
            let id: usize = id
                .parse()
                .map_err(|_| CoreError::BadConfig(format!("bad vocab id '{id}'")))?;
            if id != tokens.len() {
                return Err(CoreError::BadConfig(format!(
                    "vocab ids must be contiguous, got {id} at position {}",
                    tokens.len()
                )));
            }
            tokens.push(tok.to_string());
        }
        // numbers occupy a contiguous prefix 0, 1, 2, ...
        let mut max_number = None;
        for (i, tok) in tokens.iter().enumerate() {
            if tok.parse::<usize>() == Ok(i) {
                max_number = Some(i);
            } else {
                break;
            }
        }
        let max_number = max_number
            .ok_or_else(|| CoreError::BadConfig("vocab has no leading number block".into()))?;
        if tokens.last().map(|s| s.as_str()) != Some(PAD_TOKEN) {
            return Err(CoreError::BadConfig("vocab must end with <pad>".into()));
        }
        Ok(Self::from_tokens(max_number, tokens))
    }
}

/// One question/answer pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub question: String,
    pub tokens: Vec<u32>,
    /// Answer token id; numbers are their own ids.
    pub answer: u32,
    pub op_a: u32,
    pub op_b: u32,
    pub template: usize,
    pub split: Split,
}

#[derive(Serialize, Deserialize)]
struct ExampleRow<'a> {
    q: &'a str,
    a: u32,
    op_a: u32,
    op_b: u32,
    template: usize,
    split: Split,
}

#[derive(Debug, Clone)]
pub struct NumberDataset {
    pub vocab: NumberVocab,
    pub examples: Vec<Example>,
    pub format: TaskFormat,
    pub seed: u64,
}

/// Surface string from tokens. Natural-language joins with spaces and glues
/// sentence-final punctuation; RPN concatenates.
pub fn detokenize(tokens: &[&str], format: TaskFormat) -> String {
    match format {
        TaskFormat::Rpn => tokens.concat(),
        TaskFormat::NaturalLanguage | TaskFormat::Multiplication => {
            let mut out = String::new();
            for tok in tokens {
                let glue = matches!(*tok, "." | "?");
                if !out.is_empty() && !glue {
                    out.push(' ');
                }
                out.push_str(tok);
            }
            out
        }
    }
}

/// Inverse of detokenize for the strings this crate generates.
pub fn tokenize(question: &str, format: TaskFormat) -> Vec<String> {
    match format {
        TaskFormat::Rpn => {
            let mut out = Vec::new();
            let mut num = String::new();
            for ch in question.chars() {
                if ch.is_ascii_digit() {
                    num.push(ch);
                } else {
                    if !num.is_empty() {
                        out.push(std::mem::take(&mut num));
                    }
                    out.push(ch.to_string());
                }
            }
            if !num.is_empty() {
                out.push(num);
            }
            out
        }
        TaskFormat::NaturalLanguage | TaskFormat::Multiplication => {
            let mut out = Vec::new();
            for word in question.split_whitespace() {
                if word.len() > 1 && (word.ends_with('.') || word.ends_with('?')) {
                    out.push(word[..word.len() - 1].to_string());
                    out.push(word[word.len() - 1..].to_string());
                } else {
                    out.push(word.to_string());
                }
            }
            out
        }
    }
}

fn render(
    template: &[&str],
    a: u32,
    b: u32,
    vocab: &NumberVocab,
    format: TaskFormat,
) -> Result<(String, Vec<u32>)> {
    let mut toks: Vec<String> = Vec::with_capacity(template.len());
    for &t in template {
        match t {
            "{a}" => toks.push(a.to_string()),
            "{b}" => toks.push(b.to_string()),
            _ => toks.push(t.to_string()),
        }
    }
    let refs: Vec<&str> = toks.iter().map(|s| s.as_str()).collect();
    let question = detokenize(&refs, format);
    let ids = toks.iter().map(|t| vocab.id(t)).collect::<Result<_>>()?;
    Ok((question, ids))
}

fn split_of(position: usize, n: usize) -> Split {
    let n_train = (n as f64 * 0.8).round() as usize;
    let n_val = ((n as f64 * 0.1).round() as usize).min(n - n_train.min(n));
    if position < n_train {
        Split::Train
    } else if position < n_train + n_val {
        Split::Val
    } else {
        Split::Test
    }
}

impl NumberDataset {
    /// All unordered pairs 0 <= a <= b <= max_operand phrased with the five
    /// addition templates.
    pub fn gen_addition(max_operand: usize, max_number: usize, seed: u64) -> Result<Self> {
        Self::gen_sum_like(TaskFormat::NaturalLanguage, max_operand, max_number, seed)
    }

    /// Same pair enumeration as addition, RPN surface form.
    pub fn gen_rpn(max_operand: usize, max_number: usize, seed: u64) -> Result<Self> {
        Self::gen_sum_like(TaskFormat::Rpn, max_operand, max_number, seed)
    }

    fn gen_sum_like(
        format: TaskFormat,
        max_operand: usize,
        max_number: usize,
        seed: u64,
    ) -> Result<Self> {
        if 2 * max_operand > max_number {
            return Err(CoreError::AnswerExceedsVocab {
                a: max_operand as u32,
                b: max_operand as u32,
                answer: 2 * max_operand as u64,
                max: max_number,
            });
        }
        let pairs = (0..=max_operand as u32)
            .flat_map(|a| (a..=max_operand as u32).map(move |b| (a, b, a + b)));
        Self::build(format, max_number, seed, pairs)
    }

    /// All unordered pairs with a * b <= max_product and operands in the
    /// vocabulary. Answers stay single tokens, so max_product must fit too.
    pub fn gen_multiplication(max_product: usize, max_number: usize, seed: u64) -> Result<Self> {
        if max_product > max_number {
            return Err(CoreError::AnswerExceedsVocab {
                a: 1,
                b: max_product as u32,
                answer: max_product as u64,
                max: max_number,
            });
        }
        let cap = max_number as u32;
        let maxp = max_product as u64;
        let pairs = (0..=cap).flat_map(move |a| {
            (a..=cap)
                .take_while(move |&b| (a as u64) * (b as u64) <= maxp)
                .map(move |b| (a, b, a * b))
        });
        Self::build(TaskFormat::Multiplication, max_number, seed, pairs)
    }

    fn build(
        format: TaskFormat,
        max_number: usize,
        seed: u64,
        pairs: impl Iterator<Item = (u32, u32, u32)>,
    ) -> Result<Self> {
        let vocab = NumberVocab::for_format(max_number, format);
        let templates = templates_for(format);
        let mut rng = rng::seeded(seed);
        let mut examples = Vec::new();
        for (a, b, answer) in pairs {
            if answer as usize > max_number {
                return Err(CoreError::AnswerExceedsVocab {
                    a,
                    b,
                    answer: answer as u64,
                    max: max_number,
                });
            }
            let template = rng::below(&mut rng, templates.len() as u64) as usize;
            let (question, tokens) = render(templates[template], a, b, &vocab, format)?;
            examples.push(Example {
                question,
                tokens,
                answer,
                op_a: a,
                op_b: b,
                template,
                split: Split::Train, // assigned after the shuffle
            });
        }
        if examples.is_empty() {
            return Err(CoreError::EmptyDataset);
        }
        rng::shuffle(&mut rng, &mut examples);
        let n = examples.len();
        for (i, ex) in examples.iter_mut().enumerate() {
            ex.split = split_of(i, n);
        }
        Ok(Self {
            vocab,
            examples,
            format,
            seed,
        })
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.examples.len())
            .filter(|&i| self.examples[i].split == split)
            .collect()
    }

    pub fn split_examples(&self, split: Split) -> Vec<&Example> {
        self.examples
            .iter()
            .filter(|e| e.split == split)
            .collect()
    }

    pub fn max_question_len(&self) -> usize {
        self.examples.iter().map(|e| e.tokens.len()).max().unwrap_or(0)
    }

    /// One JSON object per line: q, a, op_a, op_b, template, split.
    pub fn write_jsonl<W: Write>(&self, w: &mut W) -> Result<()> {
        for ex in &self.examples {
            let row = ExampleRow {
                q: &ex.question,
                a: ex.answer,
                op_a: ex.op_a,
                op_b: ex.op_b,
                template: ex.template,
                split: ex.split,
            };
            serde_json::to_writer(&mut *w, &row)?;
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(
        r: R,
        vocab: NumberVocab,
        format: TaskFormat,
        seed: u64,
    ) -> Result<Self> {
        let mut examples = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let row: ExampleRowOwned = serde_json::from_str(&line)?;
            let toks = tokenize(&row.q, format);
            let tokens = toks
                .iter()
                .map(|t| vocab.id(t))
                .collect::<Result<Vec<u32>>>()?;
            examples.push(Example {
                question: row.q,
                tokens,
                answer: row.a,
                op_a: row.op_a,
                op_b: row.op_b,
                template: row.template,
                split: row.split,
            });
        }
        if examples.is_empty() {
            return Err(CoreError::EmptyDataset);
        }
        Ok(Self {
            vocab,
            examples,
            format,
            seed,
        })
    }

    /// dataset.jsonl + vocab.tsv + meta.json under `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut data = std::io::BufWriter::new(std::fs::File::create(dir.join("dataset.jsonl"))?);
        self.write_jsonl(&mut data)?;
        data.flush()?;
        let mut vocab = std::io::BufWriter::new(std::fs::File::create(dir.join("vocab.tsv"))?);
        self.vocab.write_sidecar(&mut vocab)?;
        vocab.flush()?;
        let meta = DatasetMeta {
            format: self.format,
            seed: self.seed,
            max_number: self.vocab.max_number(),
            n_examples: self.examples.len(),
        };
        std::fs::write(
            dir.join("meta.json"),
            serde_json::to_string_pretty(&meta)? + "\n",
        )?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let meta: DatasetMeta =
            serde_json::from_str(&std::fs::read_to_string(dir.join("meta.json"))?)?;
        let vocab = NumberVocab::read_sidecar(BufReader::new(std::fs::File::open(
            dir.join("vocab.tsv"),
        )?))?;
        let data = BufReader::new(std::fs::File::open(dir.join("dataset.jsonl"))?);
        Self::read_jsonl(data, vocab, meta.format, meta.seed)
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    format: TaskFormat,
    seed: u64,
    max_number: usize,
    n_examples: usize,
}

#[derive(Deserialize)]
struct ExampleRowOwned {
    q: String,
    a: u32,
    op_a: u32,
    op_b: u32,
    template: usize,
    split: Split,
}
