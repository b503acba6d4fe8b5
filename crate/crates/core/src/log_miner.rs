//! Fixed-depth template mining for raw log messages.
//!
//! Lines are tokenised on whitespace and obvious parameters (numbers, hex
//! strings, dotted-quad addresses) are masked. The parse tree groups
//! messages by token count, then by up to `depth - 2` leading tokens; each
//! leaf holds candidate templates, and a message joins the most similar one
//! when `equal positions / token count >= similarity_threshold`.
//!
//! ```text
//!            root
//!             |
//!        len = 3           token count
//!             |
//!          "job"           leading token
//!             |
//!           "<*>"          second token
//!             |
//!     [job <*> <*>]        leaf templates
//! ```

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{IcadError, Result};

pub const WILDCARD: &str = "<*>";

/// Token stored for a line with no tokens at all.
pub const EMPTY_LINE: &str = "<empty>";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinerConfig {
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_threshold")]
    pub similarity_threshold: f64,
    /// Children per internal node before new tokens fall into the wildcard branch.
    #[serde(default = "default_max_children")]
    pub max_children: usize,
    /// Additional regexes whose whole-token matches are masked.
    #[serde(default)]
    pub extra_masks: Vec<String>,
}

fn default_depth() -> usize {
    4
}
fn default_threshold() -> f64 {
    0.4
}
fn default_max_children() -> usize {
    100
}

impl Default for MinerConfig {
    fn default() -> Self {
        MinerConfig {
            depth: default_depth(),
            similarity_threshold: default_threshold(),
            max_children: default_max_children(),
            extra_masks: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub id: u32,
    pub tokens: Vec<String>,
    #[serde(default)]
    pub count: u64,
}

impl Template {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

#[derive(Clone, Debug, Default)]
struct Node {
    children: BTreeMap<String, Node>,
    templates: Vec<u32>,
}

/// Built-in parameter masks.
struct Masks {
    number: Regex,
    hex: Regex,
    long_hex: Regex,
    ipv4: Regex,
    extra: Vec<Regex>,
}

impl Masks {
    fn new(extra: &[String]) -> Result<Self> {
        let extra = extra
            .iter()
            .map(|p| {
                Regex::new(&format!("^(?:{p})$")).map_err(|e| IcadError::Config(format!("bad mask pattern `{p}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Masks {
            number: Regex::new(r"^[-+]?\d+(?:\.\d+)?$").unwrap(),
            hex: Regex::new(r"^0[xX][0-9a-fA-F]+$").unwrap(),
            long_hex: Regex::new(r"^[0-9a-fA-F]{8,}$").unwrap(),
            ipv4: Regex::new(r"^\d{1,3}(?:\.\d{1,3}){3}(?::\d+)?$").unwrap(),
            extra,
        })
    }

    fn is_param(&self, tok: &str) -> bool {
        self.number.is_match(tok)
            || self.hex.is_match(tok)
            || (self.long_hex.is_match(tok) && tok.bytes().any(|b| b.is_ascii_digit()))
            || self.ipv4.is_match(tok)
            || self.extra.iter().any(|r| r.is_match(tok))
    }
}

/// Tokenise on whitespace and replace parameter tokens by [`WILDCARD`].
pub fn mask_parameters(line: &str) -> Vec<String> {
    thread_local! {
        static DEFAULT_MASKS: Masks = Masks::new(&[]).expect("built-in masks compile");
    }
    DEFAULT_MASKS.with(|m| mask_with(m, line))
}

fn mask_with(masks: &Masks, line: &str) -> Vec<String> {
    line.split_whitespace()
        .map(|t| {
            if masks.is_param(t) {
                WILDCARD.to_string()
            } else {
                t.to_string()
            }
        })
        .collect()
}

/// Stateful template miner. Mining is single-writer; no internal locking.
pub struct TemplateMiner {
    config: MinerConfig,
    masks: Masks,
    root: BTreeMap<usize, Node>,
    templates: Vec<Template>,
    /// Exact token sequences already mined, so a repeated line always maps
    /// back to the template it joined the first time.
    seen: HashMap<Vec<String>, u32>,
}

impl std::fmt::Debug for TemplateMiner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TemplateMiner")
            .field("config", &self.config)
            .field("templates", &self.templates.len())
            .finish()
    }
}

impl Default for TemplateMiner {
    fn default() -> Self {
        TemplateMiner::new(MinerConfig::default()).expect("default config is valid")
    }
}

impl TemplateMiner {
    pub fn new(config: MinerConfig) -> Result<Self> {
        if config.depth < 2 {
            return Err(IcadError::Config(format!(
                "parse tree depth must be >= 2, got {}",
                config.depth
            )));
        }
        if !(config.similarity_threshold > 0.0 && config.similarity_threshold < 1.0) {
            return Err(IcadError::Config(format!(
                "similarity threshold must lie in (0, 1), got {}",
                config.similarity_threshold
            )));
        }
        let masks = Masks::new(&config.extra_masks)?;
        Ok(TemplateMiner {
            config,
            masks,
            root: BTreeMap::new(),
            templates: Vec::new(),
            seen: HashMap::new(),
        })
    }

    /// Rebuild a miner from a persisted inventory. Ids are kept as stored.
    pub fn from_inventory(config: MinerConfig, templates: Vec<Template>) -> Result<Self> {
        let mut miner = TemplateMiner::new(config)?;
        let mut sorted = templates;
        sorted.sort_by_key(|t| t.id);
        for (expect, t) in sorted.iter().enumerate() {
            if t.id as usize != expect {
                return Err(IcadError::Data(format!(
                    "template inventory ids must be dense from 0; found id {} at position {expect}",
                    t.id
                )));
            }
            if t.tokens.is_empty() {
                return Err(IcadError::Data(format!("template {} has no tokens", t.id)));
            }
        }
        for t in sorted {
            let leaf = miner.descend_mut(&t.tokens);
            leaf.templates.push(t.id);
            miner.templates.push(t);
        }
        Ok(miner)
    }

    pub fn config(&self) -> &MinerConfig {
        &self.config
    }

    pub fn templates(&self) -> &[Template] {
        &self.templates
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn mask(&self, line: &str) -> Vec<String> {
        mask_with(&self.masks, line)
    }

    fn branch_key<'a>(&self, tok: &'a str) -> &'a str {
        if tok.bytes().any(|b| b.is_ascii_digit()) {
            WILDCARD
        } else {
            tok
        }
    }

    fn descend_mut(&mut self, tokens: &[String]) -> &mut Node {
        let levels = (self.config.depth - 2).min(tokens.len());
        let max_children = self.config.max_children;
        let keys: Vec<String> = tokens[..levels]
            .iter()
            .map(|t| self.branch_key(t).to_string())
            .collect();
        let mut node = self.root.entry(tokens.len()).or_default();
        for key in keys {
            let key = if node.children.contains_key(&key) || node.children.len() < max_children {
                key
            } else {
                WILDCARD.to_string()
            };
            node = node.children.entry(key).or_default();
        }
        node
    }

    fn descend(&self, tokens: &[String]) -> Option<&Node> {
        let levels = (self.config.depth - 2).min(tokens.len());
        let mut node = self.root.get(&tokens.len())?;
        for tok in &tokens[..levels] {
            let key = self.branch_key(tok);
            node = node.children.get(key).or_else(|| node.children.get(WILDCARD))?;
        }
        Some(node)
    }

    /// Fraction of positions where template and query tokens are equal.
    fn similarity(template: &[String], tokens: &[String]) -> f64 {
        let equal = template.iter().zip(tokens).filter(|(a, b)| a == b).count();
        equal as f64 / tokens.len() as f64
    }

    /// Assign already-masked tokens to a template, creating or generalising
    /// one as needed, and return its id.
    pub fn mine(&mut self, tokens: &[String]) -> u32 {
        let empty;
        let tokens = if tokens.is_empty() {
            empty = vec![EMPTY_LINE.to_string()];
            &empty[..]
        } else {
            tokens
        };
        if let Some(&id) = self.seen.get(tokens) {
            self.templates[id as usize].count += 1;
            return id;
        }

        let best = self.descend(tokens).and_then(|leaf| {
            leaf.templates
                .iter()
                .map(|&id| (id, Self::similarity(&self.templates[id as usize].tokens, tokens)))
                .fold(None, |best: Option<(u32, f64)>, (id, sim)| match best {
                    Some((_, b)) if b >= sim => best,
                    _ => Some((id, sim)),
                })
        });

        let id = match best {
            Some((id, sim)) if sim >= self.config.similarity_threshold => {
                let t = &mut self.templates[id as usize];
                for (slot, tok) in t.tokens.iter_mut().zip(tokens) {
                    if slot != tok {
                        *slot = WILDCARD.to_string();
                    }
                }
                t.count += 1;
                id
            }
            _ => {
                let id = self.templates.len() as u32;
                self.templates.push(Template {
                    id,
                    tokens: tokens.to_vec(),
                    count: 1,
                });
                self.descend_mut(tokens).templates.push(id);
                id
            }
        };
        self.seen.insert(tokens.to_vec(), id);
        id
    }

    pub fn mine_line(&mut self, line: &str) -> u32 {
        let tokens = self.mask(line);
        self.mine(&tokens)
    }

    /// Mine every line in order; returns the aligned id sequence.
    pub fn parse_lines<S: AsRef<str>>(&mut self, lines: &[S]) -> Vec<u32> {
        lines.iter().map(|l| self.mine_line(l.as_ref())).collect()
    }

    /// True when `tokens` descends to a leaf holding template `id`.
    pub fn is_reachable(&self, id: u32) -> bool {
        let Some(t) = self.templates.get(id as usize) else {
            return false;
        };
        self.descend(&t.tokens).is_some_and(|leaf| leaf.templates.contains(&id))
    }

    /// Write the inventory as JSON lines, one `{id, tokens, count}` per template.
    pub fn write_inventory<W: Write>(&self, mut out: W) -> Result<()> {
        for t in &self.templates {
            let line = serde_json::to_string(t).expect("template serialises");
            writeln!(out, "{line}").map_err(|e| IcadError::io("<inventory>", e))?;
        }
        Ok(())
    }

    pub fn save_inventory(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| IcadError::io(path, e))?;
        self.write_inventory(std::io::BufWriter::new(file))
    }
}

pub fn read_inventory(path: &Path) -> Result<Vec<Template>> {
    let file = std::fs::File::open(path).map_err(|e| IcadError::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| IcadError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Template = serde_json::from_str(&line)
            .map_err(|e| IcadError::Data(format!("{}:{}: bad template record: {e}", path.display(), n + 1)))?;
        out.push(t);
    }
    Ok(out)
}

/// Fresh-miner convenience: mine every line and return the id sequence with
/// the final inventory.
pub fn parse_corpus<S: AsRef<str>>(lines: &[S]) -> (Vec<u32>, Vec<Template>) {
    let mut miner = TemplateMiner::default();
    let ids = miner.parse_lines(lines);
    (ids, miner.templates)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn masks_addresses_hex_and_numbers() {
        assert_eq!(mask_parameters("connected to 10.0.0.1"), toks("connected to <*>"));
        assert_eq!(mask_parameters("error code 0x7f3a"), toks("error code <*>"));
        assert_eq!(mask_parameters("shutdown complete"), toks("shutdown complete"));
        assert_eq!(mask_parameters("took 12.5 ms"), toks("took <*> ms"));
        assert!(mask_parameters("   ").is_empty());
        // short words made of hex letters are not parameters
        assert_eq!(mask_parameters("add bad face"), toks("add bad face"));
    }

    #[test]
    fn identical_lines_share_a_template() {
        let mut m = TemplateMiner::default();
        let a = m.mine(&toks("connected to <*>"));
        let b = m.mine(&toks("connected to <*>"));
        assert_eq!(a, b);
        assert_eq!(m.templates()[a as usize].count, 2);
    }

    #[test]
    fn similar_lines_merge_into_wildcard_template() {
        let mut m = TemplateMiner::default();
        let a = m.mine_line("job 12 started");
        let b = m.mine_line("job 99 finished");
        assert_eq!(a, b);
        assert_eq!(m.templates()[a as usize].text(), "job <*> <*>");
    }

    #[test]
    fn token_count_partitions_templates() {
        let mut m = TemplateMiner::default();
        let a = m.mine_line("disk full");
        let b = m.mine_line("job 7 started");
        assert_ne!(a, b);
    }

    #[test]
    fn merge_depends_on_prefix_and_similarity() {
        let mut m = TemplateMiner::default();
        let a = m.mine(&toks("alpha beta gamma delta"));
        let b = m.mine(&toks("alpha beta x y"));
        // leading two tokens share a leaf, similarity 2/4 = 0.5 merges
        assert_eq!(a, b);
        // different second token: different leaf
        let c = m.mine(&toks("alpha zeta x y"));
        assert_ne!(a, c);
    }

    #[test]
    fn three_identical_lines() {
        let (ids, inv) = parse_corpus(&["a b c", "a b c", "a b c"]);
        assert_eq!(ids, vec![0, 0, 0]);
        assert_eq!(inv.len(), 1);
        assert_eq!(inv[0].count, 3);
    }

    #[test]
    fn six_line_corpus_with_two_shapes() {
        let lines = [
            "Received block blk_1 of size 100 from 10.0.0.1",
            "Deleting block blk_2 file /data/2",
            "Received block blk_3 of size 250 from 10.0.0.7",
            "Deleting block blk_9 file /data/9",
            "Received block blk_4 of size 8 from 10.0.0.9",
            "Deleting block blk_5 file /data/5",
        ];
        let (ids, inv) = parse_corpus(&lines);
        assert_eq!(inv.len(), 2);
        assert_eq!(ids, vec![0, 1, 0, 1, 0, 1]);
        assert_eq!(inv[0].text(), "Received block <*> of size <*> from <*>");
        assert_eq!(inv[1].text(), "Deleting block <*> file <*>");
    }

    #[test]
    fn empty_line_gets_a_template() {
        let mut m = TemplateMiner::default();
        let a = m.mine_line("");
        let b = m.mine_line("  ");
        assert_eq!(a, b);
        assert_eq!(m.templates()[a as usize].tokens, vec![EMPTY_LINE.to_string()]);
    }

    #[test]
    fn inventory_round_trip_keeps_ids() {
        let mut m = TemplateMiner::default();
        m.parse_lines(&["a b 1", "c d e", "a b 2"]);
        let mut buf = Vec::new();
        m.write_inventory(&mut buf).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inv.jsonl");
        std::fs::write(&path, &buf).unwrap();
        let templates = read_inventory(&path).unwrap();
        let mut restored = TemplateMiner::from_inventory(MinerConfig::default(), templates).unwrap();
        assert_eq!(restored.templates(), m.templates());
        assert_eq!(restored.mine_line("c d e"), 1);
        assert_eq!(restored.mine_line("a b 77"), 0);
        assert!((0..restored.len() as u32).all(|id| restored.is_reachable(id)));
    }

    #[test]
    fn rejects_bad_config() {
        let bad = MinerConfig {
            depth: 1,
            ..MinerConfig::default()
        };
        assert!(TemplateMiner::new(bad).is_err());
        let bad = MinerConfig {
            similarity_threshold: 1.5,
            ..MinerConfig::default()
        };
        assert!(TemplateMiner::new(bad).is_err());
    }
}
