//! End-to-end question answering: link, retrieve, construct, assemble, decide.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::constructor::{
    generate_sketches, integrate, retrieve_schema, ConstructorConfig, SchemaCandidates, SketchBeam,
};
use crate::dataset::{LfVerdict, QAExample};
use crate::discriminator::{
    assemble_candidates, decide_ranked, rank_pool, Component, Mode, Prediction, StageError, Trace,
};
use crate::kb::KnowledgeBase;
use crate::linker::{EntityLinker, LinkedEntities};
use crate::retriever::{retrieve, CandidateLogicalForm, RetrieverConfig};
use crate::scorer::{Scorer, Threshold};
use crate::sexpr::{canonicalize, extract_sketch, SExpr, SketchInventory};

/// A pipeline part that can be switched off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Ablation {
    /// Path-based retrieval.
    Lfr,
    /// Type checking in the integrator.
    Lfi,
    /// Sketch generation and schema retrieval (the whole constructor).
    Sgsr,
    /// Execution-guided fallback in answerable-only mode.
    Egc,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Lfr, Ablation::Lfi, Ablation::Sgsr, Ablation::Egc];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Lfr => "lfr",
            Ablation::Lfi => "lfi",
            Ablation::Sgsr => "sgsr",
            Ablation::Egc => "egc",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown ablation `{s}` (expected lfr, lfi, sgsr or egc)"))
    }
}

/// Trained (or oracle) parts the pipeline consults.
#[derive(Clone, Copy)]
pub struct Components<'a> {
    pub retriever: &'a dyn Scorer,
    pub sketch_ranker: &'a dyn Scorer,
    pub type_scorer: &'a dyn Scorer,
    pub relation_scorer: &'a dyn Scorer,
    pub discriminator: &'a dyn Scorer,
    pub inventory: &'a SketchInventory,
    pub threshold: Option<&'a Threshold>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineConfig {
    pub retriever: RetrieverConfig,
    pub constructor: ConstructorConfig,
    pub top_k_per_mention: usize,
    pub mode: Mode,
    pub disabled: BTreeSet<Ablation>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            retriever: RetrieverConfig::default(),
            constructor: ConstructorConfig::default(),
            top_k_per_mention: 1,
            mode: Mode::Unanswerability,
            disabled: BTreeSet::new(),
        }
    }
}

impl PipelineConfig {
    pub fn with_disabled(mut self, ablations: impl IntoIterator<Item = Ablation>) -> Self {
        self.disabled.extend(ablations);
        self
    }

    pub fn is_enabled(&self, a: Ablation) -> bool {
        !self.disabled.contains(&a)
    }

    /// Disabling EGC turns answerable-only mode into plain top-1.
    pub fn effective_mode(&self) -> Mode {
        match self.mode {
            Mode::Egc if !self.is_enabled(Ablation::Egc) => Mode::TopRanked,
            m => m,
        }
    }
}

pub struct Pipeline<'a> {
    kb: &'a KnowledgeBase,
    linker: EntityLinker<'a>,
    components: Components<'a>,
    config: PipelineConfig,
}

struct Stages {
    linked: LinkedEntities,
    beam: SketchBeam,
    schema: SchemaCandidates,
}

struct Gathered {
    stages: Stages,
    pool: Vec<CandidateLogicalForm>,
    n_retrieved: usize,
    n_constructed: usize,
}

impl<'a> Pipeline<'a> {
    pub fn new(kb: &'a KnowledgeBase, components: Components<'a>, config: PipelineConfig) -> Self {
        let linker = EntityLinker::new(kb).top_k_per_mention(config.top_k_per_mention);
        Pipeline {
            kb,
            linker,
            components,
            config,
        }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn predict(&self, example: &QAExample) -> Prediction {
        self.predict_question(&example.qid, &example.question, Some(&example.gold_lf))
    }

    /// Linking, retrieval and construction, assembled into one pool.
    fn gather(&self, question: &str) -> Result<Gathered, (Component, String)> {
        let kb = self.kb;
        let c = &self.components;
        let cfg = &self.config;

        let linked = self.linker.link(question);
        let retrieved = if cfg.is_enabled(Ablation::Lfr) {
            retrieve(question, kb, &linked, c.retriever, &cfg.retriever)
                .map_err(|e| (Component::Retriever, e.to_string()))?
        } else {
            Vec::new()
        };

        let mut stages = Stages {
            linked,
            beam: SketchBeam::default(),
            schema: SchemaCandidates::default(),
        };
        let constructed = if cfg.is_enabled(Ablation::Sgsr) {
            stages.beam =
                generate_sketches(question, c.inventory, c.sketch_ranker, cfg.constructor.beam)
                    .map_err(|e| (Component::SketchGeneration, e.to_string()))?;
            stages.schema = retrieve_schema(
                question,
                kb,
                c.type_scorer,
                c.relation_scorer,
                cfg.constructor.schema_top_k,
            )
            .map_err(|e| (Component::SchemaRetrieval, e.to_string()))?;
            let icfg = ConstructorConfig {
                check_types: cfg.is_enabled(Ablation::Lfi),
                ..cfg.constructor
            };
            integrate(&stages.beam, &stages.schema, &stages.linked, kb, &icfg)
        } else {
            Vec::new()
        };

        let (n_retrieved, n_constructed) = (retrieved.len(), constructed.len());
        Ok(Gathered {
            stages,
            pool: assemble_candidates(retrieved, constructed),
            n_retrieved,
            n_constructed,
        })
    }

    /// The assembled, unranked candidate pool for a question.
    pub fn candidate_pool(&self, question: &str) -> Result<Vec<CandidateLogicalForm>, StageError> {
        self.gather(question)
            .map(|g| g.pool)
            .map_err(|(component, message)| StageError { component, message })
    }

    /// `gold` only feeds the trace; it never influences the verdict.
    pub fn predict_question(
        &self,
        qid: &str,
        question: &str,
        gold: Option<&LfVerdict>,
    ) -> Prediction {
        let gathered = match self.gather(question) {
            Ok(g) => g,
            Err((component, message)) => return Prediction::failed(qid, component, message),
        };
        let Gathered {
            stages,
            pool,
            n_retrieved,
            n_constructed,
        } = gathered;
        let gold_form = gold.and_then(LfVerdict::form);
        let gold_in_pool = gold_form.map(|g| {
            let key = canonicalize(g).to_string();
            pool.iter().any(|c| c.key == key)
        });
        let recall_stage = match (gold_form, gold_in_pool) {
            (Some(g), Some(false)) => Some(self.recall_stage(g, &stages)),
            _ => None,
        };

        let ranked = match rank_pool(question, pool, self.components.discriminator, self.kb) {
            Ok(r) => r,
            Err(e) => return Prediction::failed(qid, Component::Discriminator, e.to_string()),
        };
        let mut prediction = decide_ranked(
            qid,
            &ranked,
            self.components.threshold,
            self.kb,
            self.config.effective_mode(),
        );
        prediction.trace = Some(Trace {
            linked: stages.linked.entity_ids(),
            n_retrieved,
            n_constructed,
            gold_in_pool,
            recall_stage,
        });
        prediction
    }

    /// First stage whose output lacks a piece of the gold form.
    fn recall_stage(&self, gold: &SExpr, stages: &Stages) -> Component {
        let linked: BTreeSet<String> = stages.linked.entity_ids().into_iter().collect();
        if gold.entities().iter().any(|e| !linked.contains(*e)) {
            return Component::EntityLinking;
        }
        let shapes = [extract_sketch(gold), extract_sketch(&canonicalize(gold))];
        if !stages.beam.sketches().any(|s| shapes.contains(s)) {
            return Component::SketchGeneration;
        }
        let schema_ok = gold.classes().iter().all(|t| stages.schema.has_type(t))
            && gold
                .relations()
                .iter()
                .all(|r| stages.schema.has_relation(r));
        if !schema_ok {
            return Component::SchemaRetrieval;
        }
        // every piece was available: only the grounding cap can drop it
        Component::Integration
    }
}

/// Runs every example in input order.
pub fn run_pipeline(
    examples: &[QAExample],
    kb: &KnowledgeBase,
    components: Components<'_>,
    config: &PipelineConfig,
) -> Vec<Prediction> {
    let pipeline = Pipeline::new(kb, components, config.clone());
    examples.iter().map(|e| pipeline.predict(e)).collect()
}
