//! Task registry and keyword-driven instruction generation.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gateway::{
    join_keywords, parse_generation, CompletionRequest, Gateway, PromptTemplate, TemplateId,
    GENERATION_TABLE_BODY,
};
use crate::keywords::KeywordTable;
use crate::model::{instruction_id, InstructionRecord, TaskType};

pub const TABLE_QUESTION: &str = "Extract the table in the paragraph.";

/// Where a task's question comes from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionSource {
    /// The same instruction line for every generated unit.
    Fixed(String),
    /// A string field of the generated object.
    Field(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskTemplate {
    pub task_type: TaskType,
    pub description: String,
    pub question: QuestionSource,
    /// Generation prompt with a `{{keywords}}` slot.
    pub prompt: String,
}

impl TaskTemplate {
    pub fn validate(&self) -> Result<()> {
        let slots = PromptTemplate::new(TemplateId::Generation, self.prompt.as_str())
            .placeholders()
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>();
        if slots != ["keywords"] {
            return Err(Error::schema(
                format!("task.{}.prompt", self.task_type),
                format!("must have exactly one `{{{{keywords}}}}` slot, found {slots:?}"),
            ));
        }
        match &self.question {
            QuestionSource::Fixed(q) | QuestionSource::Field(q) if q.trim().is_empty() => Err(Error::schema(
                format!("task.{}.question", self.task_type),
                "must be non-empty",
            )),
            _ => Ok(()),
        }
    }

    pub fn render(&self, keywords: &[String]) -> Result<String> {
        let joined = join_keywords(keywords);
        PromptTemplate::new(TemplateId::Generation, self.prompt.as_str())
            .render(&BTreeMap::from([("keywords", joined.as_str())]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RegistryFile {
    task: Vec<TaskTemplate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskRegistry {
    tasks: BTreeMap<TaskType, TaskTemplate>,
}

const ENTITY_BODY: &str = "I need synthetic training data for training a machine learning model that extracts entities and relationships from scientific text.
The data should be formatted in JSON, with each entry containing \"text\", \"question\" and \"answer\" attributes.
You should generate a paragraph that includes the keywords:

{{keywords}}.

The \"text\" part must mention several named entities (materials, compounds, genes, diseases, instruments or conditions) and how they relate.
The \"question\" part asks for a specific kind of entity or relation found in the text.
The \"answer\" part lists every matching entity or relation, exactly as written in the text.

You should only generate one JSON. The values of all attributes must be strings.
Here is the format for your output:

{
    \"text\": \"Your paragraph here\",
    \"question\": \"Your extraction question here\",
    \"answer\": \"Your answer here\"
}

Now start your answer: ";

const MOLECULE_TRANSLATION_BODY: &str = "I need synthetic training data for training a machine learning model that translates molecules between notations.
The data should be formatted in JSON, with each entry containing \"text\", \"question\" and \"answer\" attributes.
You should generate a paragraph that includes the keywords:

{{keywords}}.

The \"text\" part must describe one or more molecules and give at least one of them as a SMILES string.
The \"question\" part asks to convert a molecule from the text into another representation, such as canonical SMILES, isomeric SMILES or its IUPAC name.
The \"answer\" part gives the converted representation only.

You should only generate one JSON. The values of all attributes must be strings.
Here is the format for your output:

{
    \"text\": \"Your paragraph here\",
    \"question\": \"Your translation request here\",
    \"answer\": \"Your answer here\"
}

Now start your answer: ";

const MOLECULE_EXTRACTION_BODY: &str = "I need synthetic training data for training a machine learning model that picks out a molecule from a scientific paragraph.
The data should be formatted in JSON, with each entry containing \"text\", \"question\" and \"answer\" attributes.
You should generate a paragraph that includes the keywords:

{{keywords}}.

The \"text\" part must mention several molecules by name or SMILES, each with a different role or property.
The \"question\" part describes one of them by its role or property without naming it.
The \"answer\" part names that molecule, with its SMILES string if the text gives one.

You should only generate one JSON. The values of all attributes must be strings.
Here is the format for your output:

{
    \"text\": \"Your paragraph here\",
    \"question\": \"Your question here\",
    \"answer\": \"Your answer here\"
}

Now start your answer: ";

const MULTIPLE_CHOICE_BODY: &str = "I need synthetic training data for training a machine learning model that answers multiple-choice and true-or-false questions about scientific text.
The data should be formatted in JSON, with each entry containing \"text\", \"question\" and \"answer\" attributes.
You should generate a paragraph that includes the keywords:

{{keywords}}.

The \"text\" part must contain the facts needed to answer the question.
The \"question\" part is either a multiple-choice question with options labelled A to D, or a statement to be judged true or false.
The \"answer\" part gives the correct option letter or True/False, followed by a one-sentence justification.

You should only generate one JSON. The values of all attributes must be strings.
Here is the format for your output:

{
    \"text\": \"Your paragraph here\",
    \"question\": \"Your question here\",
    \"answer\": \"Your answer here\"
}

Now start your answer: ";

impl TaskRegistry {
    /// All five task types with their default prompts.
    pub fn builtin() -> Self {
        let field = || QuestionSource::Field("question".into());
        let tasks = [
            (
                TaskType::TableExtraction,
                "Extract, summarize and structure data from an article into a table.",
                QuestionSource::Fixed(TABLE_QUESTION.into()),
                GENERATION_TABLE_BODY,
            ),
            (
                TaskType::EntityExtraction,
                "Extract specific entities or relationships from a passage.",
                field(),
                ENTITY_BODY,
            ),
            (
                TaskType::MoleculeTranslation,
                "Translate a molecule between SMILES formats or names.",
                field(),
                MOLECULE_TRANSLATION_BODY,
            ),
            (
                TaskType::MoleculeExtraction,
                "Pick the right molecule out of a paragraph that mentions several.",
                field(),
                MOLECULE_EXTRACTION_BODY,
            ),
            (
                TaskType::MultipleChoiceTf,
                "Choose the correct option, or judge a statement true or false.",
                field(),
                MULTIPLE_CHOICE_BODY,
            ),
        ];
        TaskRegistry {
            tasks: tasks
                .into_iter()
                .map(|(task_type, description, question, prompt)| {
                    (
                        task_type,
                        TaskTemplate {
                            task_type,
                            description: description.into(),
                            question,
                            prompt: prompt.into(),
                        },
                    )
                })
                .collect(),
        }
    }

    /// Registry file: a TOML array of `[[task]]` tables.
    pub fn parse_toml(text: &str) -> Result<Self> {
        let file: RegistryFile = toml::from_str(text).map_err(|e| Error::Config(format!("task registry: {e}")))?;
        let mut tasks = BTreeMap::new();
        for t in file.task {
            t.validate()?;
            let ty = t.task_type;
            if tasks.insert(ty, t).is_some() {
                return Err(Error::Config(format!("task registry lists `{ty}` twice")));
            }
        }
        Ok(TaskRegistry { tasks })
    }

    pub fn to_toml(&self) -> String {
        let file = RegistryFile {
            task: self.tasks.values().cloned().collect(),
        };
        toml::to_string(&file).expect("registry serializes")
    }

    pub fn get(&self, task: TaskType) -> Option<&TaskTemplate> {
        self.tasks.get(&task)
    }

    pub fn task_types(&self) -> impl Iterator<Item = TaskType> + '_ {
        self.tasks.keys().copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthPolicy {
    pub k: usize,
    pub temperature: f64,
    pub min_coverage: f64,
    pub max_attempts: u32,
}

impl Default for SynthPolicy {
    fn default() -> Self {
        SynthPolicy {
            k: 20,
            temperature: 3.0,
            min_coverage: 0.8,
            max_attempts: 3,
        }
    }
}

impl SynthPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Policy("k must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.min_coverage) {
            return Err(Error::Policy(format!("min_coverage must be in [0, 1], got {}", self.min_coverage)));
        }
        if self.max_attempts == 0 {
            return Err(Error::Policy("max_attempts must be at least 1".into()));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::Policy(format!("temperature must be positive, got {}", self.temperature)));
        }
        Ok(())
    }
}

/// Fraction of keywords found case-insensitively in `context`.
pub fn keyword_coverage(keywords: &[String], context: &str) -> f64 {
    if keywords.is_empty() {
        return 1.0;
    }
    let hay = context.to_lowercase();
    let hits = keywords.iter().filter(|k| hay.contains(&k.to_lowercase())).count();
    hits as f64 / keywords.len() as f64
}

/// A generated unit split into its three parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub context: String,
    pub question: String,
    pub answer: String,
    pub keywords: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationFailure {
    pub slot: usize,
    pub domain: String,
    pub task_type: TaskType,
    pub attempts: u32,
    /// One reason per failed attempt.
    pub reasons: Vec<String>,
}

pub type SlotOutcome = std::result::Result<Candidate, GenerationFailure>;

/// Samples keywords, prompts, parses and checks coverage, regenerating up to
/// `policy.max_attempts` times. Parse and coverage failures are recorded in
/// the returned failure; transport errors abort.
pub fn synthesize_one(
    slot: &Slot,
    task: &TaskTemplate,
    table: &KeywordTable,
    gateway: &Gateway,
    policy: &SynthPolicy,
) -> Result<SlotOutcome> {
    let mut reasons = Vec::new();
    for attempt in 0..policy.max_attempts {
        let seed = mix(slot.seed, u64::from(attempt));
        let keywords = table.sample(policy.k, policy.temperature, seed)?;
        let prompt = task.render(&keywords)?;
        let request = CompletionRequest::new(prompt).with_seed(seed).with_temperature(1.0);
        let response = gateway.complete(&request)?;
        match split_generation(task, &response.text) {
            Err(e) => reasons.push(format!("attempt {}: {e}", attempt + 1)),
            Ok((context, question, answer)) => {
                let coverage = keyword_coverage(&keywords, &context);
                if coverage + 1e-12 < policy.min_coverage {
                    reasons.push(format!(
                        "attempt {}: keyword coverage {coverage:.2} below {}",
                        attempt + 1,
                        policy.min_coverage
                    ));
                    continue;
                }
                return Ok(Ok(Candidate {
                    context,
                    question,
                    answer,
                    keywords,
                }));
            }
        }
    }
    log::warn!("slot {} ({}/{}) gave up: {}", slot.index, slot.domain, slot.task_type, reasons.join("; "));
    Ok(Err(GenerationFailure {
        slot: slot.index,
        domain: slot.domain.clone(),
        task_type: slot.task_type,
        attempts: policy.max_attempts,
        reasons,
    }))
}

fn split_generation(task: &TaskTemplate, text: &str) -> Result<(String, String, String)> {
    let generation = parse_generation(text)?;
    let question = match &task.question {
        QuestionSource::Fixed(q) => q.clone(),
        QuestionSource::Field(f) => generation.string_field(f)?.to_string(),
    };
    for (field, value) in [("text", &generation.context), ("question", &question), ("answer", &generation.answer)] {
        if value.trim().is_empty() {
            return Err(Error::schema(field, "generated value is empty"));
        }
    }
    Ok((generation.context, question, generation.answer))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanEntry {
    pub domain: String,
    pub task_type: String,
    pub count: usize,
}

/// One unit of work: plan position, group and seed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slot {
    /// Zero-based position across the whole plan; the record id derives
    /// from it, so ids are stable whatever fails.
    pub index: usize,
    pub domain: String,
    pub task_type: TaskType,
    pub seed: u64,
}

impl Slot {
    pub fn record_id(&self) -> String {
        instruction_id(self.index + 1)
    }

    pub fn into_record(&self, c: Candidate) -> InstructionRecord {
        InstructionRecord {
            id: self.record_id(),
            domain: self.domain.clone(),
            task_type: self.task_type,
            context: c.context,
            question: c.question,
            answer: c.answer,
            sampled_keywords: c.keywords,
            aspect_scores: None,
            cluster_id: None,
        }
    }
}

fn mix(a: u64, b: u64) -> u64 {
    let h = Sha256::new().chain_update(a.to_le_bytes()).chain_update(b.to_le_bytes()).finalize();
    u64::from_le_bytes(h[..8].try_into().unwrap())
}

/// Checks the whole plan before any generation and expands it into slots.
pub fn plan_slots(
    plan: &[PlanEntry],
    registry: &TaskRegistry,
    tables: &BTreeMap<String, KeywordTable>,
    policy: &SynthPolicy,
    seed: u64,
) -> Result<Vec<Slot>> {
    policy.validate()?;
    let mut seen = BTreeSet::new();
    let mut slots = Vec::new();
    for entry in plan {
        let task_type: TaskType = entry.task_type.parse()?;
        if registry.get(task_type).is_none() {
            return Err(Error::Plan(format!("task type `{task_type}` has no registry entry")));
        }
        let table = tables
            .get(&entry.domain)
            .ok_or_else(|| Error::Plan(format!("domain `{}` has no keyword table", entry.domain)))?;
        if table.len() < policy.k {
            return Err(Error::InsufficientVocabulary {
                requested: policy.k,
                available: table.len(),
            });
        }
        if !seen.insert((entry.domain.clone(), task_type)) {
            return Err(Error::Plan(format!("plan lists ({}, {task_type}) twice", entry.domain)));
        }
        for local in 0..entry.count {
            let group = Sha256::new()
                .chain_update(seed.to_le_bytes())
                .chain_update(entry.domain.as_bytes())
                .chain_update([0])
                .chain_update(task_type.as_str().as_bytes())
                .chain_update((local as u64).to_le_bytes())
                .finalize();
            slots.push(Slot {
                index: slots.len(),
                domain: entry.domain.clone(),
                task_type,
                seed: u64::from_le_bytes(group[..8].try_into().unwrap()),
            });
        }
    }
    Ok(slots)
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GroupCount {
    pub requested: usize,
    pub produced: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunSummary {
    /// Keyed by `domain/task_type`.
    pub groups: BTreeMap<String, GroupCount>,
    pub failures: Vec<GenerationFailure>,
}

impl RunSummary {
    pub fn from_outcomes<'a>(
        slots: &[Slot],
        produced: impl IntoIterator<Item = &'a InstructionRecord>,
        failures: Vec<GenerationFailure>,
    ) -> Self {
        let key = |d: &str, t: TaskType| format!("{d}/{t}");
        let mut groups: BTreeMap<String, GroupCount> = BTreeMap::new();
        for s in slots {
            groups.entry(key(&s.domain, s.task_type)).or_default().requested += 1;
        }
        for r in produced {
            groups.entry(key(&r.domain, r.task_type)).or_default().produced += 1;
        }
        for f in &failures {
            groups.entry(key(&f.domain, f.task_type)).or_default().failed += 1;
        }
        RunSummary { groups, failures }
    }

    /// `produced + failed == requested` for every group.
    pub fn reconciles(&self) -> bool {
        self.groups.values().all(|g| g.produced + g.failed == g.requested)
    }
}

pub struct BatchOutput {
    /// Ordered by slot.
    pub records: Vec<InstructionRecord>,
    pub summary: RunSummary,
}

pub fn synthesize_batch(
    plan: &[PlanEntry],
    registry: &TaskRegistry,
    tables: &BTreeMap<String, KeywordTable>,
    gateway: &Gateway,
    policy: &SynthPolicy,
    seed: u64,
) -> Result<BatchOutput> {
    let slots = plan_slots(plan, registry, tables, policy, seed)?;
    let outcomes = run_slots(&slots, registry, tables, gateway, policy)?;
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (slot, o) in slots.iter().zip(outcomes) {
        match o {
            Ok(c) => records.push(slot.into_record(c)),
            Err(f) => failures.push(f),
        }
    }
    let summary = RunSummary::from_outcomes(&slots, &records, failures);
    Ok(BatchOutput { records, summary })
}

/// Runs slots in parallel; outcomes keep slot order.
pub fn run_slots(
    slots: &[Slot],
    registry: &TaskRegistry,
    tables: &BTreeMap<String, KeywordTable>,
    gateway: &Gateway,
    policy: &SynthPolicy,
) -> Result<Vec<SlotOutcome>> {
    slots
        .par_iter()
        .map(|s| {
            let task = registry.get(s.task_type).expect("plan was validated");
            let table = &tables[&s.domain];
            synthesize_one(s, task, table, gateway, policy)
                .map_err(|e| e.in_stage("synth", format!("record {}", s.record_id())))
        })
        .collect()
}
