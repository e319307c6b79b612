//! Intervened instance sets.
//!
//! * Hyber (context held fixed): one of the two entity mentions is replaced by
//!   a sibling, a cousin and an unrelated entity drawn from the taxonomy,
//!   giving three instances ranked by expected closeness to the prototype.
//! * Gcc (entity pair held fixed): a KB triplet is realized as a prototype,
//!   positives come from relation renaming and context expansion, negatives
//!   from replacing the relation with another one holding between the same
//!   two entities.
//!
//! Surface realization is template based: every relation has a template with
//! `{H}`, `{R}` and `{T}` slots plus a list of alias phrases for `{R}`.

use crate::hierarchy::{EntityHierarchy, HierarchyError, Stratum};
use crate::instance::{validate_instance, InstanceError, RelationInstance, Span, Triplet};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

pub const HEAD_MARKER: &str = "[H]";
pub const REL_MARKER: &str = "[R]";
pub const TAIL_MARKER: &str = "[T]";

const H_SLOT: &str = "{H}";
const R_SLOT: &str = "{R}";
const T_SLOT: &str = "{T}";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InterveneError {
    #[error("no usable alias for relation {0}")]
    NoAlias(String),
    #[error("relation {relation}: malformed template {template:?}")]
    TemplateMalformed { relation: String, template: String },
    #[error("entity {0} is not in the hierarchy")]
    EntityNotInHierarchy(String),
    #[error("instance {0}: neither entity has non-empty sibling, cousin and other strata")]
    NoViableSide(String),
    #[error("no KB triplet shares exactly one entity with {0:?}")]
    NoAdjacentTriplet(Triplet),
    #[error("no other relation links {} and {}", .0.head_entity, .0.tail_entity)]
    NoAlternativeRelation(Triplet),
    #[error("triplet {0:?} is not in the KB")]
    NotInKb(Triplet),
    #[error("k_pos and k_neg must both be at least 1")]
    InvalidCount,
    #[error("cannot parse linearized triplet: {0}")]
    Unparseable(String),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error(transparent)]
    Instance(#[from] InstanceError),
}

/// Alias phrases and template for one relation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AliasEntry {
    pub relation: String,
    /// First alias is canonical.
    pub aliases: Vec<String>,
    pub template: String,
}

#[derive(Debug, Clone, Default)]
pub struct AliasTable {
    entries: BTreeMap<String, AliasEntry>,
}

impl AliasTable {
    pub fn new(entries: impl IntoIterator<Item = AliasEntry>) -> Result<Self, InterveneError> {
        let mut map = BTreeMap::new();
        for e in entries {
            check_template(&e.relation, &e.template)?;
            map.insert(e.relation.clone(), e);
        }
        Ok(AliasTable { entries: map })
    }

    pub fn get(&self, relation: &str) -> Option<&AliasEntry> {
        self.entries.get(relation)
    }

    pub fn entries(&self) -> impl Iterator<Item = &AliasEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Tokens of alias `idx` for `relation`; errors if missing or blank.
    pub fn alias_tokens(&self, relation: &str, idx: usize) -> Result<Vec<String>, InterveneError> {
        let toks: Vec<String> = self
            .get(relation)
            .and_then(|e| e.aliases.get(idx))
            .map(|a| a.split_whitespace().map(str::to_string).collect())
            .unwrap_or_default();
        if toks.is_empty() {
            return Err(InterveneError::NoAlias(relation.to_string()));
        }
        Ok(toks)
    }

    pub fn n_aliases(&self, relation: &str) -> usize {
        self.get(relation).map_or(0, |e| e.aliases.len())
    }

    /// Covers every relation of the KB.
    pub fn covers(&self, kb: &KnowledgeBase) -> Result<(), InterveneError> {
        for r in kb.relations() {
            self.alias_tokens(r, 0)?;
        }
        Ok(())
    }
}

fn check_template(relation: &str, template: &str) -> Result<(), InterveneError> {
    let toks: Vec<&str> = template.split_whitespace().collect();
    let pos = |slot: &str| -> Option<usize> {
        let hits: Vec<usize> = toks
            .iter()
            .enumerate()
            .filter(|(_, t)| t.contains(slot))
            .map(|(i, _)| i)
            .collect();
        match hits.as_slice() {
            [i] if toks[*i] == slot => Some(*i),
            _ => None,
        }
    };
    match (pos(H_SLOT), pos(R_SLOT), pos(T_SLOT)) {
        // head must come before tail for the span ordering to hold
        (Some(h), Some(_), Some(t)) if h < t => Ok(()),
        _ => Err(InterveneError::TemplateMalformed {
            relation: relation.to_string(),
            template: template.to_string(),
        }),
    }
}

/// Surface tokens for an entity id: the id split on `_`.
pub fn entity_tokens(id: &str) -> Vec<String> {
    let toks: Vec<String> = id
        .split('_')
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect();
    if toks.is_empty() {
        vec![id.to_string()]
    } else {
        toks
    }
}

/// A deduplicated, sorted set of triplets with entity and pair indices.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    triplets: Vec<Triplet>,
    by_pair: BTreeMap<(String, String), BTreeSet<String>>,
    by_entity: BTreeMap<String, Vec<usize>>,
}

impl KnowledgeBase {
    pub fn new(triplets: impl IntoIterator<Item = Triplet>) -> Self {
        let set: BTreeSet<Triplet> = triplets.into_iter().filter(Triplet::is_valid).collect();
        let triplets: Vec<Triplet> = set.into_iter().collect();
        let mut by_pair: BTreeMap<(String, String), BTreeSet<String>> = BTreeMap::new();
        let mut by_entity: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, t) in triplets.iter().enumerate() {
            by_pair
                .entry((t.head_entity.clone(), t.tail_entity.clone()))
                .or_default()
                .insert(t.relation.clone());
            by_entity.entry(t.head_entity.clone()).or_default().push(i);
            by_entity.entry(t.tail_entity.clone()).or_default().push(i);
        }
        KnowledgeBase {
            triplets,
            by_pair,
            by_entity,
        }
    }

    pub fn triplets(&self) -> &[Triplet] {
        &self.triplets
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn contains(&self, t: &Triplet) -> bool {
        self.triplets.binary_search(t).is_ok()
    }

    pub fn relations(&self) -> BTreeSet<&str> {
        self.triplets.iter().map(|t| t.relation.as_str()).collect()
    }

    /// Relations other than `t.relation` that hold between `t`'s head and tail.
    pub fn alternative_relations(&self, t: &Triplet) -> Vec<&str> {
        self.by_pair
            .get(&(t.head_entity.clone(), t.tail_entity.clone()))
            .map(|rs| {
                rs.iter()
                    .filter(|r| **r != t.relation)
                    .map(String::as_str)
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Triplets sharing exactly one entity with `t` and carrying a different relation.
    pub fn adjacent(&self, t: &Triplet) -> Vec<&Triplet> {
        let mut idx: Vec<usize> = [&t.head_entity, &t.tail_entity]
            .iter()
            .filter_map(|e| self.by_entity.get(*e))
            .flatten()
            .copied()
            .collect();
        idx.sort_unstable();
        idx.dedup();
        idx.into_iter()
            .map(|i| &self.triplets[i])
            .filter(|u| {
                let shares_head = u.head_entity == t.head_entity || u.tail_entity == t.head_entity;
                let shares_tail = u.head_entity == t.tail_entity || u.tail_entity == t.tail_entity;
                u.relation != t.relation && (shares_head ^ shares_tail)
            })
            .collect()
    }
}

/// `[H] <head> [R] <alias> [T] <tail>` with the canonical alias.
pub fn linearize(t: &Triplet, aliases: &AliasTable) -> Result<Vec<String>, InterveneError> {
    let rel = aliases.alias_tokens(&t.relation, 0)?;
    let mut out = vec![HEAD_MARKER.to_string()];
    out.extend(entity_tokens(&t.head_entity));
    out.push(REL_MARKER.to_string());
    out.extend(rel);
    out.push(TAIL_MARKER.to_string());
    out.extend(entity_tokens(&t.tail_entity));
    Ok(out)
}

/// Inverse of [`linearize`]: entity ids are rejoined with `_`, the relation is
/// looked up by canonical alias.
pub fn delinearize(tokens: &[String], aliases: &AliasTable) -> Result<Triplet, InterveneError> {
    let find = |m: &str| tokens.iter().position(|t| t == m);
    let bad = || InterveneError::Unparseable(tokens.join(" "));
    let (h, r, t) = match (find(HEAD_MARKER), find(REL_MARKER), find(TAIL_MARKER)) {
        (Some(0), Some(r), Some(t)) if r > 1 && t > r + 1 && t + 1 < tokens.len() => (0, r, t),
        _ => return Err(bad()),
    };
    let alias = tokens[r + 1..t].join(" ");
    let relation = aliases
        .entries()
        .find(|e| e.aliases.first().map(|a| a.split_whitespace().collect::<Vec<_>>().join(" ")) == Some(alias.clone()))
        .map(|e| e.relation.clone())
        .ok_or_else(bad)?;
    Ok(Triplet::new(
        tokens[h + 1..r].join("_"),
        relation,
        tokens[t + 1..].join("_"),
    ))
}

/// Template tokens for `t` with alias `alias_idx`; returns tokens and the
/// head and tail spans within them.
fn fill_template(
    t: &Triplet,
    aliases: &AliasTable,
    alias_idx: usize,
) -> Result<(Vec<String>, Span, Span), InterveneError> {
    let entry = aliases
        .get(&t.relation)
        .ok_or_else(|| InterveneError::NoAlias(t.relation.clone()))?;
    check_template(&t.relation, &entry.template)?;
    let rel = aliases.alias_tokens(&t.relation, alias_idx)?;
    let mut out = Vec::new();
    let (mut head, mut tail) = (Span::new(0, 0), Span::new(0, 0));
    for tok in entry.template.split_whitespace() {
        match tok {
            H_SLOT => {
                let e = entity_tokens(&t.head_entity);
                head = Span::new(out.len(), out.len() + e.len() - 1);
                out.extend(e);
            }
            T_SLOT => {
                let e = entity_tokens(&t.tail_entity);
                tail = Span::new(out.len(), out.len() + e.len() - 1);
                out.extend(e);
            }
            R_SLOT => out.extend(rel.iter().cloned()),
            other => out.push(other.to_string()),
        }
    }
    Ok((out, head, tail))
}

fn realize_with(
    t: &Triplet,
    aliases: &AliasTable,
    alias_idx: usize,
    expansion: Option<&Triplet>,
) -> Result<RelationInstance, InterveneError> {
    let (mut tokens, head, tail) = fill_template(t, aliases, alias_idx)?;
    if let Some(x) = expansion {
        let shares = [&x.head_entity, &x.tail_entity]
            .iter()
            .any(|e| **e == t.head_entity || **e == t.tail_entity);
        if !shares {
            return Err(InterveneError::NoAdjacentTriplet(t.clone()));
        }
        let (extra, _, _) = fill_template(x, aliases, 0)?;
        tokens.push(",".to_string());
        tokens.push("and".to_string());
        tokens.extend(extra);
    }
    let inst = RelationInstance {
        id: format!("{}|{}|{}", t.head_entity, t.relation, t.tail_entity),
        tokens,
        head,
        tail,
        head_entity: t.head_entity.clone(),
        tail_entity: t.tail_entity.clone(),
        gold_relation: None,
    };
    validate_instance(&inst)?;
    Ok(inst)
}

/// Realizes `t` with its canonical alias, optionally appending an expansion
/// clause `, and <expansion>`. Spans point at `t`'s entities.
pub fn realize(
    t: &Triplet,
    aliases: &AliasTable,
    expansion: Option<&Triplet>,
) -> Result<RelationInstance, InterveneError> {
    realize_with(t, aliases, 0, expansion)
}

/// Realizes `t` with a specific alias.
pub fn realize_alias(t: &Triplet, aliases: &AliasTable, alias_idx: usize) -> Result<RelationInstance, InterveneError> {
    realize_with(t, aliases, alias_idx, None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Head,
    Tail,
}

/// Replaces the mention on `side` with the surface of `entity`, shifting the
/// later span when the token count changes.
pub fn replace_entity(inst: &RelationInstance, side: Side, entity: &str) -> RelationInstance {
    let surface = entity_tokens(entity);
    let span = match side {
        Side::Head => inst.head,
        Side::Tail => inst.tail,
    };
    let mut tokens = Vec::with_capacity(inst.tokens.len() + surface.len());
    tokens.extend_from_slice(&inst.tokens[..span.start]);
    tokens.extend(surface.iter().cloned());
    tokens.extend_from_slice(&inst.tokens[span.end + 1..]);
    let new_span = Span::new(span.start, span.start + surface.len() - 1);
    let mut out = RelationInstance {
        tokens,
        gold_relation: None,
        ..inst.clone()
    };
    match side {
        Side::Head => {
            let shift = new_span.end as isize - span.end as isize;
            out.head = new_span;
            out.tail = Span::new(
                (inst.tail.start as isize + shift) as usize,
                (inst.tail.end as isize + shift) as usize,
            );
            out.head_entity = entity.to_string();
        }
        Side::Tail => {
            out.tail = new_span;
            out.tail_entity = entity.to_string();
        }
    }
    out
}

/// Prototype plus its sibling-, cousin- and other-replaced versions.
#[derive(Debug, Clone, PartialEq)]
pub struct HyberSet {
    pub prototype: RelationInstance,
    /// Ordered sibling, cousin, other.
    pub ranked: [RelationInstance; 3],
    pub replaced_side: Side,
}

pub fn hyber_sample<R: Rng + ?Sized>(
    p: &RelationInstance,
    h: &EntityHierarchy,
    rng: &mut R,
) -> Result<HyberSet, InterveneError> {
    for e in [&p.head_entity, &p.tail_entity] {
        if !h.contains(e) {
            return Err(InterveneError::EntityNotInHierarchy(e.clone()));
        }
    }
    let first = if rng.random_bool(0.5) { Side::Head } else { Side::Tail };
    let second = match first {
        Side::Head => Side::Tail,
        Side::Tail => Side::Head,
    };
    let viable = |side: Side| -> Result<bool, InterveneError> {
        let e = match side {
            Side::Head => &p.head_entity,
            Side::Tail => &p.tail_entity,
        };
        for s in Stratum::ALL {
            if h.stratum_size(e, s)? == 0 {
                return Ok(false);
            }
        }
        Ok(true)
    };
    let side = if viable(first)? {
        first
    } else if viable(second)? {
        second
    } else {
        return Err(InterveneError::NoViableSide(p.id.clone()));
    };
    let original = match side {
        Side::Head => &p.head_entity,
        Side::Tail => &p.tail_entity,
    };
    let prototype = p.without_gold();
    let mut ranked = Vec::with_capacity(3);
    for s in Stratum::ALL {
        let e = h.sample_stratum(original, s, rng)?;
        let mut x = replace_entity(&prototype, side, e);
        x.id = format!("{}#{}", p.id, s.name());
        validate_instance(&x)?;
        ranked.push(x);
    }
    let ranked: [RelationInstance; 3] = ranked.try_into().expect("three strata");
    Ok(HyberSet {
        prototype,
        ranked,
        replaced_side: side,
    })
}

/// A realized triplet with positives and negatives sharing its entity pair.
#[derive(Debug, Clone, PartialEq)]
pub struct GccSet {
    pub prototype: RelationInstance,
    pub positives: Vec<RelationInstance>,
    pub negatives: Vec<RelationInstance>,
}

pub fn gcc_sample<R: Rng + ?Sized>(
    t: &Triplet,
    kb: &KnowledgeBase,
    aliases: &AliasTable,
    rng: &mut R,
    k_pos: usize,
    k_neg: usize,
) -> Result<GccSet, InterveneError> {
    if k_pos == 0 || k_neg == 0 {
        return Err(InterveneError::InvalidCount);
    }
    if !kb.contains(t) {
        return Err(InterveneError::NotInKb(t.clone()));
    }
    let base = format!("{}|{}|{}", t.head_entity, t.relation, t.tail_entity);
    let prototype = realize(t, aliases, None)?;

    let alternatives = kb.alternative_relations(t);
    if alternatives.is_empty() {
        return Err(InterveneError::NoAlternativeRelation(t.clone()));
    }

    let mut renames: Vec<usize> = (1..aliases.n_aliases(&t.relation)).collect();
    let mut expansions: Vec<&Triplet> = kb.adjacent(t);
    if renames.is_empty() && expansions.is_empty() {
        return Err(if aliases.n_aliases(&t.relation) < 2 {
            InterveneError::NoAlias(t.relation.clone())
        } else {
            InterveneError::NoAdjacentTriplet(t.clone())
        });
    }
    renames.shuffle(rng);
    expansions.shuffle(rng);

    // alternate renaming and expansion, falling back to whichever remains
    let mut positives = Vec::with_capacity(k_pos);
    let (mut ri, mut ei) = (0, 0);
    while positives.len() < k_pos && (ri < renames.len() || ei < expansions.len()) {
        let want_rename = positives.len() % 2 == 0;
        let use_rename = (want_rename && ri < renames.len()) || ei >= expansions.len();
        let mut x = if use_rename {
            ri += 1;
            let mut x = realize_alias(t, aliases, renames[ri - 1])?;
            x.id = format!("{base}#rename{}", renames[ri - 1]);
            x
        } else {
            ei += 1;
            let u = expansions[ei - 1];
            let mut x = realize(t, aliases, Some(u))?;
            x.id = format!("{base}#expand:{}|{}|{}", u.head_entity, u.relation, u.tail_entity);
            x
        };
        x.gold_relation = None;
        positives.push(x);
    }

    let mut alternatives = alternatives;
    alternatives.shuffle(rng);
    let negatives = alternatives
        .into_iter()
        .take(k_neg)
        .map(|r| {
            let u = Triplet::new(t.head_entity.clone(), r, t.tail_entity.clone());
            let mut x = realize(&u, aliases, None)?;
            x.id = format!("{base}#replace:{r}");
            Ok(x)
        })
        .collect::<Result<Vec<_>, InterveneError>>()?;

    Ok(GccSet {
        prototype,
        positives,
        negatives,
    })
}

/// A training group: one prototype with its intervened instances.
#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Group {
    Hyber(HyberSet),
    Gcc(GccSet),
}

impl Group {
    pub fn instances(&self) -> Vec<&RelationInstance> {
        match self {
            Group::Hyber(h) => std::iter::once(&h.prototype).chain(h.ranked.iter()).collect(),
            Group::Gcc(g) => std::iter::once(&g.prototype)
                .chain(g.positives.iter())
                .chain(g.negatives.iter())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Prototype,
    Sibling,
    Cousin,
    Other,
    Positive,
    Negative,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("role serializes");
        f.write_str(s.as_str().unwrap_or_default())
    }
}

/// One line of the intervened-corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterveneRecord {
    #[serde(flatten)]
    pub instance: RelationInstance,
    pub role: Role,
    pub group: String,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub round: usize,
}

fn is_zero(x: &usize) -> bool {
    *x == 0
}

/// Flattens groups into records. Gold labels are always stripped.
pub fn to_records(groups: &[Group], round: usize) -> Vec<InterveneRecord> {
    let mut out = Vec::new();
    for g in groups {
        let (group, members): (String, Vec<(Role, &RelationInstance)>) = match g {
            Group::Hyber(h) => (
                format!("hyber:{}", h.prototype.id),
                std::iter::once((Role::Prototype, &h.prototype))
                    .chain([Role::Sibling, Role::Cousin, Role::Other].into_iter().zip(h.ranked.iter()))
                    .collect(),
            ),
            Group::Gcc(s) => (
                format!("gcc:{}", s.prototype.id),
                std::iter::once((Role::Prototype, &s.prototype))
                    .chain(s.positives.iter().map(|x| (Role::Positive, x)))
                    .chain(s.negatives.iter().map(|x| (Role::Negative, x)))
                    .collect(),
            ),
        };
        for (role, inst) in members {
            out.push(InterveneRecord {
                instance: inst.without_gold(),
                role,
                group: group.clone(),
                round,
            });
        }
    }
    out
}

/// Regroups records by `(round, group)`, preserving first-seen order.
/// Returns one vector of groups per round, indexed by round number.
pub fn from_records(records: Vec<InterveneRecord>) -> Result<Vec<Vec<Group>>, String> {
    let mut order: Vec<(usize, String)> = Vec::new();
    let mut buckets: BTreeMap<(usize, String), Vec<InterveneRecord>> = BTreeMap::new();
    for r in records {
        let key = (r.round, r.group.clone());
        if !buckets.contains_key(&key) {
            order.push(key.clone());
        }
        buckets.entry(key).or_default().push(r);
    }
    let n_rounds = order.iter().map(|(r, _)| r + 1).max().unwrap_or(0);
    let mut rounds: Vec<Vec<Group>> = vec![Vec::new(); n_rounds];
    for key in order {
        let recs = buckets.remove(&key).expect("bucket exists");
        let group = assemble(&key.1, recs)?;
        rounds[key.0].push(group);
    }
    Ok(rounds)
}

fn assemble(name: &str, recs: Vec<InterveneRecord>) -> Result<Group, String> {
    let mut proto = None;
    let (mut sib, mut cou, mut oth) = (None, None, None);
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for r in recs {
        let slot = match r.role {
            Role::Prototype => &mut proto,
            Role::Sibling => &mut sib,
            Role::Cousin => &mut cou,
            Role::Other => &mut oth,
            Role::Positive => {
                pos.push(r.instance);
                continue;
            }
            Role::Negative => {
                neg.push(r.instance);
                continue;
            }
        };
        if slot.replace(r.instance).is_some() {
            return Err(format!("group {name}: duplicate {} record", r.role));
        }
    }
    let prototype = proto.ok_or_else(|| format!("group {name}: missing prototype"))?;
    match (sib, cou, oth) {
        (Some(s), Some(c), Some(o)) if pos.is_empty() && neg.is_empty() => {
            let replaced_side = if s.head_entity != prototype.head_entity {
                Side::Head
            } else {
                Side::Tail
            };
            Ok(Group::Hyber(HyberSet {
                prototype,
                ranked: [s, c, o],
                replaced_side,
            }))
        }
        (None, None, None) if !pos.is_empty() && !neg.is_empty() => Ok(Group::Gcc(GccSet {
            prototype,
            positives: pos,
            negatives: neg,
        })),
        _ => Err(format!(
            "group {name}: needs either sibling/cousin/other or positives and negatives"
        )),
    }
}

/// Which samplers feed training; the two single-module settings are ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Full,
    Hyber,
    Gcc,
}

impl Mode {
    pub fn uses_hyber(self) -> bool {
        matches!(self, Mode::Full | Mode::Hyber)
    }
    pub fn uses_gcc(self) -> bool {
        matches!(self, Mode::Full | Mode::Gcc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterveneConfig {
    pub k_pos: usize,
    pub k_neg: usize,
    pub mode: Mode,
}

impl Default for InterveneConfig {
    fn default() -> Self {
        InterveneConfig {
            k_pos: 2,
            k_neg: 1,
            mode: Mode::Full,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct InterveneStats {
    pub hyber_groups: usize,
    pub hyber_skipped: usize,
    pub gcc_groups: usize,
    pub gcc_skipped: usize,
}

/// Seeded generator for item `index` of a sampling pass. Each item gets its
/// own stream, so results do not depend on how work is split across threads.
pub fn item_rng(seed: u64, round: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (round as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index as u64);
    rng
}

/// Builds all Hyber groups (one per corpus instance) and Gcc groups (one per
/// KB triplet). Prototypes the samplers cannot serve are skipped and counted.
pub fn build_groups(
    corpus: &[RelationInstance],
    hierarchy: &EntityHierarchy,
    kb: &KnowledgeBase,
    aliases: &AliasTable,
    cfg: &InterveneConfig,
    seed: u64,
    round: usize,
) -> Result<(Vec<Group>, InterveneStats), InterveneError> {
    let mut stats = InterveneStats::default();
    let mut groups = Vec::new();
    if cfg.mode.uses_hyber() {
        let sets: Vec<Result<HyberSet, InterveneError>> = corpus
            .par_iter()
            .enumerate()
            .map(|(i, p)| hyber_sample(p, hierarchy, &mut item_rng(seed, round, i)))
            .collect();
        for s in sets {
            match s {
                Ok(s) => {
                    stats.hyber_groups += 1;
                    groups.push(Group::Hyber(s));
                }
                Err(InterveneError::NoViableSide(_)) | Err(InterveneError::EntityNotInHierarchy(_)) => {
                    stats.hyber_skipped += 1
                }
                Err(e) => return Err(e),
            }
        }
    }
    if cfg.mode.uses_gcc() {
        aliases.covers(kb)?;
        let offset = corpus.len();
        let sets: Vec<Result<GccSet, InterveneError>> = kb
            .triplets()
            .par_iter()
            .enumerate()
            .map(|(i, t)| {
                gcc_sample(
                    t,
                    kb,
                    aliases,
                    &mut item_rng(seed, round, offset + i),
                    cfg.k_pos,
                    cfg.k_neg,
                )
            })
            .collect();
        for s in sets {
            match s {
                Ok(s) => {
                    stats.gcc_groups += 1;
                    groups.push(Group::Gcc(s));
                }
                Err(
                    InterveneError::NoAlternativeRelation(_)
                    | InterveneError::NoAdjacentTriplet(_)
                    | InterveneError::NoAlias(_),
                ) => stats.gcc_skipped += 1,
                Err(e) => return Err(e),
            }
        }
    }
    Ok((groups, stats))
}
