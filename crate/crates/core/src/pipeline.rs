//! End-to-end runs: intervene → train → encode → cluster → evaluate.

use crate::cluster::{kmeans, ClusterError, KMeansConfig};
use crate::encoder::{encode_all, init_for, train_from, EncoderParams, EpochLog, GroupSource, TrainConfig};
use crate::hierarchy::EntityHierarchy;
use crate::instance::{Partition, RelationInstance};
use crate::intervene::{build_groups, entity_tokens, AliasTable, Group, InterveneConfig, KnowledgeBase};
use crate::metrics::{score, Scores};
use std::collections::BTreeSet;

/// Draws fresh Hyber and Gcc groups for every epoch.
pub struct Resampler<'a> {
    pub corpus: Vec<RelationInstance>,
    pub hierarchy: &'a EntityHierarchy,
    pub kb: &'a KnowledgeBase,
    pub aliases: &'a AliasTable,
    pub config: InterveneConfig,
    pub seed: u64,
}

impl<'a> Resampler<'a> {
    /// Gold labels are dropped on the way in.
    pub fn new(
        corpus: &[RelationInstance],
        hierarchy: &'a EntityHierarchy,
        kb: &'a KnowledgeBase,
        aliases: &'a AliasTable,
        config: InterveneConfig,
        seed: u64,
    ) -> Self {
        Resampler {
            corpus: corpus.iter().map(RelationInstance::without_gold).collect(),
            hierarchy,
            kb,
            aliases,
            config,
            seed,
        }
    }
}

impl GroupSource for Resampler<'_> {
    fn vocabulary(&self) -> BTreeSet<String> {
        let mut v: BTreeSet<String> = self
            .corpus
            .iter()
            .flat_map(|x| x.tokens.iter().cloned())
            .collect();
        v.extend(self.hierarchy.entities().iter().flat_map(|e| entity_tokens(e)));
        for e in self.aliases.entries() {
            v.extend(e.aliases.iter().flat_map(|a| a.split_whitespace().map(str::to_string)));
            v.extend(
                e.template
                    .split_whitespace()
                    .filter(|t| !t.starts_with('{'))
                    .map(str::to_string),
            );
        }
        v.insert(",".into());
        v.insert("and".into());
        v
    }

    fn groups(&self, epoch: usize) -> Result<Vec<Group>, String> {
        build_groups(
            &self.corpus,
            self.hierarchy,
            self.kb,
            self.aliases,
            &self.config,
            self.seed,
            epoch,
        )
        .map(|(g, _)| g)
        .map_err(|e| e.to_string())
    }
}

/// Clusters the representations of `insts` and scores them against gold labels.
pub fn evaluate(
    insts: &[RelationInstance],
    params: &EncoderParams,
    kcfg: &KMeansConfig,
) -> Result<(Scores, Vec<usize>), ClusterError> {
    let reps: Vec<Vec<f64>> = encode_all(insts, params).into_iter().map(|r| r.0).collect();
    let (_, labels) = kmeans(&reps, kcfg)?;
    let gold = gold_partition(insts);
    let pred = Partition::with_ids(gold.ids.clone(), labels.clone());
    let scores = score(&pred, &gold).expect("aligned non-empty partitions");
    Ok((scores, labels))
}

/// Gold partition; instances without a label form their own `?` class.
pub fn gold_partition(insts: &[RelationInstance]) -> Partition {
    Partition::with_ids(
        insts.iter().map(|x| x.id.clone()).collect(),
        insts
            .iter()
            .map(|x| x.gold_relation.clone().unwrap_or_else(|| "?".into()))
            .collect(),
    )
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub untrained: Scores,
    pub trained: Scores,
    pub logs: Vec<EpochLog>,
    pub params: EncoderParams,
}

/// Trains on `train` with per-epoch resampling and scores both the initial
/// and the trained encoder on `valid`.
#[allow(clippy::too_many_arguments)]
pub fn run(
    train: &[RelationInstance],
    valid: &[RelationInstance],
    hierarchy: &EntityHierarchy,
    kb: &KnowledgeBase,
    aliases: &AliasTable,
    icfg: InterveneConfig,
    tcfg: &TrainConfig,
    kcfg: &KMeansConfig,
) -> Result<RunResult, String> {
    let source = Resampler::new(train, hierarchy, kb, aliases, icfg, tcfg.seed);
    let init = init_for(&source, tcfg);
    let (untrained, _) = evaluate(valid, &init, kcfg).map_err(|e| e.to_string())?;
    let (params, logs) = train_from(init, &source, tcfg)?;
    let (trained, _) = evaluate(valid, &params, kcfg).map_err(|e| e.to_string())?;
    Ok(RunResult {
        untrained,
        trained,
        logs,
        params,
    })
}
