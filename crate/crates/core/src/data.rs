//! Synthetic KB/corpus generation, JSON-lines IO and train/validation split.
//!
//! The generator builds a typed world: each relation links a fixed head
//! grandparent category to a fixed tail grandparent category, and relations
//! come in pairs sharing the same type signature, so entity types alone can
//! narrow a relation down to a pair but never pick the right member.

use crate::hierarchy::{build_hierarchy, write_edges, Edge, EntityHierarchy, Level};
use crate::instance::{validate_instance, InstanceError, RelationInstance, Span, Triplet};
use crate::intervene::{realize_alias, AliasEntry, AliasTable, InterveneError, KnowledgeBase};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("{path}: instance {id}: {source}")]
    Validation {
        path: String,
        id: String,
        source: InstanceError,
    },
    #[error("split fraction must be in (0, 1), got {0}")]
    FractionInvalid(f64),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Intervene(#[from] InterveneError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_relations: usize,
    pub n_grandparents: usize,
    pub n_parents_per: usize,
    pub n_entities_per: usize,
    pub n_instances: usize,
    pub aliases_per_relation: usize,
    pub context_noise_tokens: usize,
    /// KB facts sampled per relation before pair sharing.
    pub facts_per_relation: usize,
    /// Chance that a sampled pair also gets the partner relation.
    pub shared_pair_prob: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_relations: 10,
            n_grandparents: 6,
            n_parents_per: 4,
            n_entities_per: 8,
            n_instances: 2000,
            aliases_per_relation: 3,
            context_noise_tokens: 3,
            facts_per_relation: 40,
            shared_pair_prob: 0.6,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let counts = [
            ("n_relations", self.n_relations),
            ("n_grandparents", self.n_grandparents),
            ("n_parents_per", self.n_parents_per),
            ("n_entities_per", self.n_entities_per),
            ("n_instances", self.n_instances),
            ("facts_per_relation", self.facts_per_relation),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(DataError::ConfigInvalid(format!("{name} must be >= 1")));
            }
        }
        if self.aliases_per_relation < 2 {
            return Err(DataError::ConfigInvalid("aliases_per_relation must be >= 2".into()));
        }
        if !(0.0..=1.0).contains(&self.shared_pair_prob) {
            return Err(DataError::ConfigInvalid("shared_pair_prob must be in [0, 1]".into()));
        }
        if self.n_grandparents * self.n_parents_per * self.n_entities_per < 2 {
            return Err(DataError::ConfigInvalid("need at least two entities".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub edges: Vec<Edge>,
    pub kb: Vec<Triplet>,
    pub aliases: Vec<AliasEntry>,
    pub corpus: Vec<RelationInstance>,
}

const FUNCTION_WORDS: [&str; 10] = ["was", "is", "has", "the", "of", "in", "by", "a", "to", "for"];
const TEMPLATES: [&str; 4] = ["{H} {R} {T}", "{H} {R} {T} .", "the {H} {R} {T}", "{H} , {R} {T}"];
const NOISE_POOL_SIZE: usize = 200;
const NOISE_POOL_SEED: u64 = 0x6e6f_6973_6500;

/// Pseudo-word generator producing distinct lowercase words.
struct Words {
    seen: BTreeSet<String>,
}

impl Words {
    fn new() -> Self {
        Words {
            seen: FUNCTION_WORDS.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn next<R: Rng>(&mut self, rng: &mut R) -> String {
        const C: &[u8] = b"bdfgklmnprstvz";
        const V: &[u8] = b"aeiou";
        loop {
            let syll = rng.random_range(2..=3);
            let w: String = (0..syll)
                .flat_map(|_| [*C.choose(rng).unwrap() as char, *V.choose(rng).unwrap() as char])
                .collect();
            if self.seen.insert(w.clone()) {
                return w;
            }
        }
    }
}

/// The fixed pool of context noise words, independent of the generator seed.
pub fn noise_pool() -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(NOISE_POOL_SEED);
    let mut words = Words::new();
    (0..NOISE_POOL_SIZE).map(|_| format!("{}x", words.next(&mut rng))).collect()
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Inserts `count` noise tokens at random token boundaries outside both spans.
fn insert_noise<R: Rng>(inst: &mut RelationInstance, pool: &[String], count: usize, rng: &mut R) {
    for _ in 0..count {
        let gaps: Vec<usize> = (0..=inst.tokens.len())
            .filter(|&g| {
                !(inst.head.start < g && g <= inst.head.end) && !(inst.tail.start < g && g <= inst.tail.end)
            })
            .collect();
        let g = *gaps.choose(rng).expect("position 0 is always a gap");
        inst.tokens.insert(g, pool.choose(rng).expect("non-empty pool").clone());
        for s in [&mut inst.head, &mut inst.tail] {
            if s.start >= g {
                *s = Span::new(s.start + 1, s.end + 1);
            }
        }
    }
}

pub fn gen_synthetic(cfg: &SynthConfig) -> Result<SyntheticData, DataError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut words = Words::new();
    for w in noise_pool() {
        words.seen.insert(w);
    }

    // taxonomy
    let mut edges = Vec::new();
    let mut by_gp: Vec<Vec<String>> = vec![Vec::new(); cfg.n_grandparents];
    for (g, members) in by_gp.iter_mut().enumerate() {
        let gp = format!("G{g:02}");
        for p in 0..cfg.n_parents_per {
            let parent = format!("{gp}.P{p:02}");
            edges.push(Edge::new(parent.clone(), gp.clone(), Level::Mid));
            for _ in 0..cfg.n_entities_per {
                let mut name = capitalize(&words.next(&mut rng));
                if rng.random_bool(0.25) {
                    name = format!("{name}_{}", capitalize(&words.next(&mut rng)));
                }
                edges.push(Edge::new(name.clone(), parent.clone(), Level::Leaf));
                members.push(name);
            }
        }
    }

    // relations, aliases, templates
    let relations: Vec<String> = (0..cfg.n_relations).map(|r| format!("R{r:02}")).collect();
    let mut aliases = Vec::new();
    for (r, rel) in relations.iter().enumerate() {
        let list = (0..cfg.aliases_per_relation)
            .map(|_| {
                let c = words.next(&mut rng);
                let f1 = FUNCTION_WORDS.choose(&mut rng).unwrap();
                let f2 = FUNCTION_WORDS.choose(&mut rng).unwrap();
                match rng.random_range(0..4) {
                    0 => c,
                    1 => format!("{f1} {c}"),
                    2 => format!("{c} {f2}"),
                    _ => format!("{f1} {c} {f2}"),
                }
            })
            .collect();
        aliases.push(AliasEntry {
            relation: rel.clone(),
            aliases: list,
            template: TEMPLATES[r % TEMPLATES.len()].to_string(),
        });
    }

    // type signature per relation pair
    let g = cfg.n_grandparents;
    let signature = |r: usize| {
        let q = r / 2;
        let head = q % g;
        let tail = if g == 1 { 0 } else { (q + 1 + q / g) % g };
        (head, if tail == head { (tail + 1) % g } else { tail })
    };
    let partner = |r: usize| {
        let p = r ^ 1;
        (p < cfg.n_relations).then_some(p)
    };
    let mut kb: BTreeSet<Triplet> = BTreeSet::new();
    for r in 0..cfg.n_relations {
        let (hg, tg) = signature(r);
        let mut attempts = 0;
        let mut added = 0;
        while added < cfg.facts_per_relation && attempts < cfg.facts_per_relation * 20 {
            attempts += 1;
            let h = by_gp[hg].choose(&mut rng).expect("non-empty category");
            let t = by_gp[tg].choose(&mut rng).expect("non-empty category");
            if h == t {
                continue;
            }
            if kb.insert(Triplet::new(h.clone(), relations[r].clone(), t.clone())) {
                added += 1;
            }
            if let Some(p) = partner(r) {
                if rng.random_bool(cfg.shared_pair_prob) {
                    kb.insert(Triplet::new(h.clone(), relations[p].clone(), t.clone()));
                }
            }
        }
    }
    let kb: Vec<Triplet> = kb.into_iter().collect();
    if kb.is_empty() {
        return Err(DataError::ConfigInvalid("could not sample any KB fact".into()));
    }

    let table = AliasTable::new(aliases.clone())?;
    let pool = noise_pool();
    let mut corpus = Vec::with_capacity(cfg.n_instances);
    for i in 0..cfg.n_instances {
        let t = kb.choose(&mut rng).expect("non-empty kb");
        let a = rng.random_range(0..cfg.aliases_per_relation);
        let mut inst = realize_alias(t, &table, a)?;
        insert_noise(&mut inst, &pool, cfg.context_noise_tokens, &mut rng);
        inst.id = format!("s{i:05}");
        inst.gold_relation = Some(t.relation.clone());
        validate_instance(&inst).expect("generator keeps spans valid");
        corpus.push(inst);
    }

    Ok(SyntheticData {
        edges,
        kb,
        aliases,
        corpus,
    })
}

impl SyntheticData {
    pub fn hierarchy(&self) -> EntityHierarchy {
        build_hierarchy(&self.edges).expect("generated taxonomy is well formed")
    }

    pub fn knowledge_base(&self) -> KnowledgeBase {
        KnowledgeBase::new(self.kb.iter().cloned())
    }

    pub fn alias_table(&self) -> AliasTable {
        AliasTable::new(self.aliases.iter().cloned()).expect("generated templates are valid")
    }

    /// Fraction of KB triplets whose entity pair carries another relation.
    pub fn alternative_fraction(&self) -> f64 {
        let kb = self.knowledge_base();
        let n = kb.triplets().iter().filter(|t| !kb.alternative_relations(t).is_empty()).count();
        n as f64 / kb.len() as f64
    }

    pub fn write_to(&self, dir: &Path) -> Result<SynthPaths, DataError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let paths = SynthPaths::in_dir(dir);
        let mut buf = Vec::new();
        write_edges(&mut buf, &self.edges).map_err(io_err(&paths.hierarchy))?;
        fs::write(&paths.hierarchy, buf).map_err(io_err(&paths.hierarchy))?;
        write_jsonl(&paths.kb, &self.kb)?;
        write_jsonl(&paths.aliases, &self.aliases)?;
        write_jsonl(&paths.corpus, &self.corpus)?;
        Ok(paths)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthPaths {
    pub hierarchy: PathBuf,
    pub kb: PathBuf,
    pub aliases: PathBuf,
    pub corpus: PathBuf,
}

impl SynthPaths {
    pub fn in_dir(dir: &Path) -> Self {
        SynthPaths {
            hierarchy: dir.join("hierarchy.tsv"),
            kb: dir.join("kb.jsonl"),
            aliases: dir.join("aliases.jsonl"),
            corpus: dir.join("corpus.jsonl"),
        }
    }

    pub fn all(&self) -> [&Path; 4] {
        [&self.hierarchy, &self.kb, &self.aliases, &self.corpus]
    }
}

/// One JSON document per line, LF-terminated.
pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(it).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), DataError> {
    let f = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    for it in items {
        serde_json::to_writer(&mut w, it).map_err(|e| DataError::Parse {
            path: path.display().to_string(),
            line: 0,
            msg: e.to_string(),
        })?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Parses JSON lines, skipping blank lines; errors carry the 1-based line number.
pub fn parse_jsonl<T: DeserializeOwned>(text: &str, path: &str) -> Result<Vec<T>, DataError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| DataError::Parse {
                path: path.to_string(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_jsonl(&text, &path.display().to_string())
}

pub fn read_text(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(io_err(path))
}

/// Loads a corpus file, validating every record; file order is preserved.
pub fn load_corpus(path: &Path) -> Result<Vec<RelationInstance>, DataError> {
    let corpus: Vec<RelationInstance> = read_jsonl(path)?;
    for inst in &corpus {
        validate_instance(inst).map_err(|source| DataError::Validation {
            path: path.display().to_string(),
            id: inst.id.clone(),
            source,
        })?;
    }
    Ok(corpus)
}

pub fn load_kb(path: &Path) -> Result<KnowledgeBase, DataError> {
    let triplets: Vec<Triplet> = read_jsonl(path)?;
    Ok(KnowledgeBase::new(triplets))
}

pub fn load_aliases(path: &Path) -> Result<AliasTable, DataError> {
    let entries: Vec<AliasEntry> = read_jsonl(path)?;
    Ok(AliasTable::new(entries)?)
}

/// Uniform split without replacement; `fraction` goes to validation.
/// Both halves keep the corpus order.
pub fn split<T: Clone>(corpus: &[T], fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>), DataError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DataError::FractionInvalid(fraction));
    }
    let n = corpus.len();
    let n_val = (n as f64 * fraction).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_val = vec![false; n];
    for &i in &idx[..n_val] {
        is_val[i] = true;
    }
    let (mut train, mut val) = (Vec::with_capacity(n - n_val), Vec::with_capacity(n_val));
    for (x, v) in corpus.iter().zip(is_val) {
        if v {
            val.push(x.clone());
        } else {
            train.push(x.clone());
        }
    }
    Ok((train, val))
}
