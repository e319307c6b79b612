//! Three-level entity taxonomy (entity → parent category → grandparent
//! category) with stratified sampling of replacement entities.
//!
//! Entities are stored in one vector sorted by `(grandparent, parent, id)`, so
//! every parent and every grandparent owns a contiguous index range. Each
//! stratum is then a range (or a range with a hole) and uniform sampling
//! inside it is O(1).

use rand::Rng;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::ops::Range;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HierarchyError {
    #[error("{child} is listed with two parents: {first} and {second}")]
    DuplicateParent {
        child: String,
        first: String,
        second: String,
    },
    #[error("{0} appears at more than one level of the hierarchy")]
    CycleDetected(String),
    #[error("parent category {0} has no grandparent link")]
    DanglingParent(String),
    #[error("unknown entity {0}")]
    UnknownEntity(String),
    #[error("entity {entity} has no {stratum} entities")]
    EmptyStratum { entity: String, stratum: Stratum },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Closeness of a replacement entity to the original one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stratum {
    /// Same parent category.
    Sibling,
    /// Same grandparent, different parent.
    Cousin,
    /// Different grandparent.
    Other,
}

impl Stratum {
    pub const ALL: [Stratum; 3] = [Stratum::Sibling, Stratum::Cousin, Stratum::Other];

    pub fn name(self) -> &'static str {
        match self {
            Stratum::Sibling => "sibling",
            Stratum::Cousin => "cousin",
            Stratum::Other => "other",
        }
    }
}

impl fmt::Display for Stratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which side of an edge the child sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    /// entity → parent category
    Leaf,
    /// parent category → grandparent category
    Mid,
}

impl FromStr for Level {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "leaf" => Ok(Level::Leaf),
            "mid" => Ok(Level::Mid),
            other => Err(format!("unknown level tag {other:?} (expected leaf or mid)")),
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::Leaf => "leaf",
            Level::Mid => "mid",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub child: String,
    pub parent: String,
    pub level: Level,
}

impl Edge {
    pub fn new(child: impl Into<String>, parent: impl Into<String>, level: Level) -> Self {
        Edge {
            child: child.into(),
            parent: parent.into(),
            level,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct EntityHierarchy {
    parent_of: BTreeMap<String, String>,
    grandparent_of: BTreeMap<String, String>,
    members: BTreeMap<String, BTreeSet<String>>,
    // sorted by (grandparent, parent, id)
    order: Vec<String>,
    position: BTreeMap<String, usize>,
    parent_range: BTreeMap<String, Range<usize>>,
    grandparent_range: BTreeMap<String, Range<usize>>,
}

pub fn build_hierarchy(edges: &[Edge]) -> Result<EntityHierarchy, HierarchyError> {
    let mut parent_of: BTreeMap<String, String> = BTreeMap::new();
    let mut grandparent_of: BTreeMap<String, String> = BTreeMap::new();

    for e in edges {
        let map = match e.level {
            Level::Leaf => &mut parent_of,
            Level::Mid => &mut grandparent_of,
        };
        if e.child == e.parent {
            return Err(HierarchyError::CycleDetected(e.child.clone()));
        }
        match map.get(&e.child) {
            Some(p) if *p != e.parent => {
                return Err(HierarchyError::DuplicateParent {
                    child: e.child.clone(),
                    first: p.clone(),
                    second: e.parent.clone(),
                })
            }
            Some(_) => {}
            None => {
                map.insert(e.child.clone(), e.parent.clone());
            }
        }
    }

    // level sets must be pairwise disjoint
    let entities: BTreeSet<&String> = parent_of.keys().collect();
    let parents: BTreeSet<&String> = parent_of.values().chain(grandparent_of.keys()).collect();
    let grandparents: BTreeSet<&String> = grandparent_of.values().collect();
    for id in &entities {
        if parents.contains(id) || grandparents.contains(id) {
            return Err(HierarchyError::CycleDetected((*id).clone()));
        }
    }
    for id in &parents {
        if grandparents.contains(id) {
            return Err(HierarchyError::CycleDetected((*id).clone()));
        }
    }
    for p in parent_of.values() {
        if !grandparent_of.contains_key(p) {
            return Err(HierarchyError::DanglingParent(p.clone()));
        }
    }

    let mut members: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (e, p) in &parent_of {
        members.entry(p.clone()).or_default().insert(e.clone());
    }

    let mut keyed: Vec<(&String, &String, &String)> = parent_of
        .iter()
        .map(|(e, p)| (&grandparent_of[p], p, e))
        .collect();
    keyed.sort();
    let order: Vec<String> = keyed.iter().map(|(_, _, e)| (*e).clone()).collect();
    let mut parent_range: BTreeMap<String, Range<usize>> = BTreeMap::new();
    let mut grandparent_range: BTreeMap<String, Range<usize>> = BTreeMap::new();
    for (i, (g, p, _)) in keyed.iter().enumerate() {
        parent_range
            .entry((*p).clone())
            .and_modify(|r| r.end = i + 1)
            .or_insert(i..i + 1);
        grandparent_range
            .entry((*g).clone())
            .and_modify(|r| r.end = i + 1)
            .or_insert(i..i + 1);
    }
    let position = order.iter().enumerate().map(|(i, e)| (e.clone(), i)).collect();

    Ok(EntityHierarchy {
        parent_of,
        grandparent_of,
        members,
        order,
        position,
        parent_range,
        grandparent_range,
    })
}

impl EntityHierarchy {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn contains(&self, entity: &str) -> bool {
        self.parent_of.contains_key(entity)
    }

    /// All entities, sorted by `(grandparent, parent, id)`.
    pub fn entities(&self) -> &[String] {
        &self.order
    }

    pub fn parent(&self, entity: &str) -> Option<&str> {
        self.parent_of.get(entity).map(String::as_str)
    }

    pub fn grandparent(&self, entity: &str) -> Option<&str> {
        self.parent(entity)
            .and_then(|p| self.grandparent_of.get(p))
            .map(String::as_str)
    }

    pub fn members(&self, parent: &str) -> Option<&BTreeSet<String>> {
        self.members.get(parent)
    }

    /// Leaf and mid edges, in a stable order.
    pub fn edges(&self) -> Vec<Edge> {
        let leaf = self
            .parent_of
            .iter()
            .map(|(c, p)| Edge::new(c.clone(), p.clone(), Level::Leaf));
        let mid = self
            .grandparent_of
            .iter()
            .map(|(c, p)| Edge::new(c.clone(), p.clone(), Level::Mid));
        leaf.chain(mid).collect()
    }

    pub fn stratum_between(&self, a: &str, b: &str) -> Result<Stratum, HierarchyError> {
        let pa = self
            .parent(a)
            .ok_or_else(|| HierarchyError::UnknownEntity(a.to_string()))?;
        let pb = self
            .parent(b)
            .ok_or_else(|| HierarchyError::UnknownEntity(b.to_string()))?;
        if pa == pb {
            return Ok(Stratum::Sibling);
        }
        if self.grandparent_of[pa] == self.grandparent_of[pb] {
            Ok(Stratum::Cousin)
        } else {
            Ok(Stratum::Other)
        }
    }

    fn ranges(&self, entity: &str) -> Result<(usize, Range<usize>, Range<usize>), HierarchyError> {
        let pos = *self
            .position
            .get(entity)
            .ok_or_else(|| HierarchyError::UnknownEntity(entity.to_string()))?;
        let p = &self.parent_of[entity];
        let g = &self.grandparent_of[p];
        Ok((
            pos,
            self.parent_range[p].clone(),
            self.grandparent_range[g].clone(),
        ))
    }

    /// Number of entities in the given stratum relative to `entity`.
    pub fn stratum_size(&self, entity: &str, stratum: Stratum) -> Result<usize, HierarchyError> {
        let (_, pr, gr) = self.ranges(entity)?;
        Ok(match stratum {
            Stratum::Sibling => pr.len() - 1,
            Stratum::Cousin => gr.len() - pr.len(),
            Stratum::Other => self.order.len() - gr.len(),
        })
    }

    /// Every entity in the stratum, in hierarchy order.
    pub fn stratum_members(&self, entity: &str, stratum: Stratum) -> Result<Vec<&str>, HierarchyError> {
        let (pos, pr, gr) = self.ranges(entity)?;
        let idx: Vec<usize> = match stratum {
            Stratum::Sibling => pr.filter(|&i| i != pos).collect(),
            Stratum::Cousin => gr.filter(|i| !pr.contains(i)).collect(),
            Stratum::Other => (0..self.order.len()).filter(|i| !gr.contains(i)).collect(),
        };
        Ok(idx.into_iter().map(|i| self.order[i].as_str()).collect())
    }

    /// Uniform draw from the stratum of `entity`.
    pub fn sample_stratum<R: Rng + ?Sized>(
        &self,
        entity: &str,
        stratum: Stratum,
        rng: &mut R,
    ) -> Result<&str, HierarchyError> {
        let (pos, pr, gr) = self.ranges(entity)?;
        // The stratum is `outer` minus the hole `inner`, with `inner ⊂ outer`.
        let (outer, inner) = match stratum {
            Stratum::Sibling => (pr, pos..pos + 1),
            Stratum::Cousin => (gr, pr),
            Stratum::Other => (0..self.order.len(), gr),
        };
        let size = outer.len() - inner.len();
        if size == 0 {
            return Err(HierarchyError::EmptyStratum {
                entity: entity.to_string(),
                stratum,
            });
        }
        let k = rng.random_range(0..size);
        let before = inner.start - outer.start;
        let idx = if k < before {
            outer.start + k
        } else {
            inner.end + (k - before)
        };
        Ok(&self.order[idx])
    }
}

pub fn stratum_between(h: &EntityHierarchy, a: &str, b: &str) -> Result<Stratum, HierarchyError> {
    h.stratum_between(a, b)
}

pub fn sample_stratum<'h, R: Rng + ?Sized>(
    h: &'h EntityHierarchy,
    e: &str,
    s: Stratum,
    rng: &mut R,
) -> Result<&'h str, HierarchyError> {
    h.sample_stratum(e, s, rng)
}

/// Parses `child<TAB>parent<TAB>level` lines; `#` lines and blank lines are skipped.
pub fn parse_edges(text: &str) -> Result<Vec<Edge>, HierarchyError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(HierarchyError::Parse {
                line: i + 1,
                msg: format!("expected 3 tab-separated fields, got {}", fields.len()),
            });
        }
        let level = fields[2]
            .parse()
            .map_err(|msg| HierarchyError::Parse { line: i + 1, msg })?;
        out.push(Edge::new(fields[0], fields[1], level));
    }
    Ok(out)
}

pub fn write_edges<W: Write>(mut w: W, edges: &[Edge]) -> std::io::Result<()> {
    writeln!(w, "# child\tparent\tlevel")?;
    for e in edges {
        writeln!(w, "{}\t{}\t{}", e.child, e.parent, e.level)?;
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn france() -> EntityHierarchy {
        let edges = vec![
            Edge::new("Paris", "department_of_France", Level::Leaf),
            Edge::new("Aube", "department_of_France", Level::Leaf),
            Edge::new("department_of_France", "French_admin_div", Level::Mid),
            Edge::new("Occitanie_parent", "French_admin_div", Level::Mid),
            Edge::new("Occitanie", "Occitanie_parent", Level::Leaf),
            Edge::new("19th_century", "century", Level::Leaf),
            Edge::new("century", "time_period", Level::Mid),
            Edge::new("Hugo", "writer", Level::Leaf),
            Edge::new("Dumas", "writer", Level::Leaf),
            Edge::new("Balzac", "novelist", Level::Leaf),
            Edge::new("writer", "person", Level::Mid),
            Edge::new("novelist", "person", Level::Mid),
            Edge::new("France", "country", Level::Leaf),
            Edge::new("Spain", "country", Level::Leaf),
            Edge::new("Gaul", "historic_country", Level::Leaf),
            Edge::new("country", "state", Level::Mid),
            Edge::new("historic_country", "state", Level::Mid),
        ];
        build_hierarchy(&edges).unwrap()
    }

    #[test]
    fn strata_of_the_running_example() {
        let h = france();
        assert_eq!(h.stratum_between("Paris", "Aube").unwrap(), Stratum::Sibling);
        assert_eq!(h.stratum_between("Paris", "Occitanie").unwrap(), Stratum::Cousin);
        assert_eq!(h.stratum_between("Paris", "19th_century").unwrap(), Stratum::Other);
        assert!(matches!(
            h.stratum_between("Paris", "Lyon"),
            Err(HierarchyError::UnknownEntity(_))
        ));
    }

    #[test]
    fn sibling_of_paris_is_aube() {
        let h = france();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            assert_eq!(h.sample_stratum("Paris", Stratum::Sibling, &mut rng).unwrap(), "Aube");
            assert_eq!(h.sample_stratum("Paris", Stratum::Cousin, &mut rng).unwrap(), "Occitanie");
        }
    }

    #[test]
    fn only_child_has_no_siblings() {
        let h = france();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = h.sample_stratum("Occitanie", Stratum::Sibling, &mut rng).unwrap_err();
        assert!(matches!(err, HierarchyError::EmptyStratum { .. }));
    }

    #[test]
    fn empty_hierarchy_builds_but_cannot_sample() {
        let h = build_hierarchy(&[]).unwrap();
        assert!(h.is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            h.sample_stratum("Paris", Stratum::Other, &mut rng),
            Err(HierarchyError::UnknownEntity(_))
        ));
    }

    #[test]
    fn build_errors() {
        let dup = [Edge::new("A", "P1", Level::Leaf), Edge::new("A", "P2", Level::Leaf)];
        assert!(matches!(build_hierarchy(&dup), Err(HierarchyError::DuplicateParent { .. })));

        let dangling = [Edge::new("A", "P1", Level::Leaf)];
        assert_eq!(
            build_hierarchy(&dangling).unwrap_err(),
            HierarchyError::DanglingParent("P1".into())
        );

        let cyc = [
            Edge::new("A", "P", Level::Leaf),
            Edge::new("P", "A", Level::Mid),
        ];
        assert!(matches!(build_hierarchy(&cyc), Err(HierarchyError::CycleDetected(_))));

        let self_loop = [Edge::new("A", "A", Level::Leaf)];
        assert!(matches!(build_hierarchy(&self_loop), Err(HierarchyError::CycleDetected(_))));

        // a category used both as parent and grandparent
        let mixed = [
            Edge::new("A", "P", Level::Leaf),
            Edge::new("P", "G", Level::Mid),
            Edge::new("G", "H", Level::Mid),
        ];
        assert!(matches!(build_hierarchy(&mixed), Err(HierarchyError::CycleDetected(_))));
    }

    #[test]
    fn members_inverse_of_parent() {
        let h = france();
        for e in h.entities() {
            let p = h.parent(e).unwrap();
            assert!(h.members(p).unwrap().contains(e));
        }
        let total: usize = h.members.values().map(|s| s.len()).sum();
        assert_eq!(total, h.len());
    }

    #[test]
    fn strata_partition_all_entities() {
        let h = france();
        for e in h.entities() {
            let mut seen: Vec<&str> = vec![e.as_str()];
            for s in Stratum::ALL {
                let m = h.stratum_members(e, s).unwrap();
                assert_eq!(m.len(), h.stratum_size(e, s).unwrap());
                for x in &m {
                    assert_eq!(h.stratum_between(e, x).unwrap(), s);
                }
                seen.extend(m);
            }
            seen.sort();
            let mut all: Vec<&str> = h.entities().iter().map(String::as_str).collect();
            all.sort();
            assert_eq!(seen, all);
        }
    }

    #[test]
    fn tsv_round_trip() {
        let h = france();
        let mut buf = Vec::new();
        write_edges(&mut buf, &h.edges()).unwrap();
        let parsed = parse_edges(std::str::from_utf8(&buf).unwrap()).unwrap();
        let h2 = build_hierarchy(&parsed).unwrap();
        assert_eq!(h.entities(), h2.entities());
    }

    #[test]
    fn parse_rejects_bad_lines() {
        assert!(matches!(
            parse_edges("# c\na\tb\n"),
            Err(HierarchyError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_edges("a\tb\ttop\n"),
            Err(HierarchyError::Parse { line: 1, .. })
        ));
    }
}
