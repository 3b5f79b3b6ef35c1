//! Typed knowledge graph over depression-related factor entities.
//!
//! Five factor classes (psychological symptoms, physical symptoms, life
//! events, medications, therapies) each own a reserved class node, and a
//! single depression node closes every importance path. Sixteen relation
//! kinds connect entities: `r_subcat` (entity → its class node, directed),
//! five same-class co-occurrence relations and ten cross-class relations,
//! all undirected. Undirected triplets are stored once, with the
//! lexicographically smaller entity id as head.

mod schema;
mod similarity;
mod snapshot;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use schema::{load_schema, parse_schema, write_schema};
pub use similarity::{cosine_similarity, top_m_similar};
pub use snapshot::{SNAPSHOT_HEADER, load_snapshot, parse_snapshot, save_snapshot, snapshot_string};

pub const DEPRESSION_ID: &str = "depression";
pub const MAX_SNIPPET_CHARS: usize = 280;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub String);

impl EntityId {
    pub fn new(s: impl Into<String>) -> Self {
        EntityId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for EntityId {
    fn from(s: &str) -> Self {
        EntityId(s.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FactorClass {
    PsySym,
    PhySym,
    Event,
    Med,
    Therapy,
}

impl FactorClass {
    pub const ALL: [FactorClass; 5] = [
        FactorClass::PsySym,
        FactorClass::PhySym,
        FactorClass::Event,
        FactorClass::Med,
        FactorClass::Therapy,
    ];

    pub fn class_node_id(self) -> EntityId {
        EntityId(format!("class:{}", self.name()))
    }

    pub fn name(self) -> &'static str {
        match self {
            FactorClass::PsySym => "PsySym",
            FactorClass::PhySym => "PhySym",
            FactorClass::Event => "Event",
            FactorClass::Med => "Med",
            FactorClass::Therapy => "Therapy",
        }
    }

    pub fn default_class_surface(self) -> &'static str {
        match self {
            FactorClass::PsySym => "psychological symptom",
            FactorClass::PhySym => "physical symptom",
            FactorClass::Event => "life event",
            FactorClass::Med => "medication",
            FactorClass::Therapy => "therapy",
        }
    }

    pub fn from_class_node_id(id: &EntityId) -> Option<FactorClass> {
        FactorClass::ALL
            .into_iter()
            .find(|c| c.class_node_id() == *id)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EntityClass {
    PsySym,
    PhySym,
    Event,
    Med,
    Therapy,
    ClassNode,
    DepressionNode,
}

impl EntityClass {
    pub fn factor(self) -> Option<FactorClass> {
        match self {
            EntityClass::PsySym => Some(FactorClass::PsySym),
            EntityClass::PhySym => Some(FactorClass::PhySym),
            EntityClass::Event => Some(FactorClass::Event),
            EntityClass::Med => Some(FactorClass::Med),
            EntityClass::Therapy => Some(FactorClass::Therapy),
            EntityClass::ClassNode | EntityClass::DepressionNode => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EntityClass::ClassNode => "ClassNode",
            EntityClass::DepressionNode => "DepressionNode",
            other => other.factor().map(FactorClass::name).unwrap_or_default(),
        }
    }

    pub fn is_reserved(self) -> bool {
        self.factor().is_none()
    }
}

impl From<FactorClass> for EntityClass {
    fn from(c: FactorClass) -> Self {
        match c {
            FactorClass::PsySym => EntityClass::PsySym,
            FactorClass::PhySym => EntityClass::PhySym,
            FactorClass::Event => EntityClass::Event,
            FactorClass::Med => EntityClass::Med,
            FactorClass::Therapy => EntityClass::Therapy,
        }
    }
}

impl FromStr for EntityClass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "PsySym" => EntityClass::PsySym,
            "PhySym" => EntityClass::PhySym,
            "Event" => EntityClass::Event,
            "Med" => EntityClass::Med,
            "Therapy" => EntityClass::Therapy,
            "ClassNode" => EntityClass::ClassNode,
            "DepressionNode" => EntityClass::DepressionNode,
            other => return Err(Error::Schema(format!("unknown entity class `{other}`"))),
        })
    }
}

impl FromStr for FactorClass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        EntityClass::from_str(s)?
            .factor()
            .ok_or_else(|| Error::Schema(format!("`{s}` is not a factor class")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RelationKind {
    Subcat,
    MedCo,
    PsyCo,
    PhyCo,
    EventCo,
    TherapyCo,
    PhyPsyCo,
    LifePsy,
    LifePhy,
    TherapyPsy,
    TherapyPhy,
    LifeTherapy,
    MedPsy,
    MedPhy,
    LifeMed,
    MedTherapyCo,
}

impl RelationKind {
    pub const ALL: [RelationKind; 16] = [
        RelationKind::Subcat,
        RelationKind::MedCo,
        RelationKind::PsyCo,
        RelationKind::PhyCo,
        RelationKind::EventCo,
        RelationKind::TherapyCo,
        RelationKind::PhyPsyCo,
        RelationKind::LifePsy,
        RelationKind::LifePhy,
        RelationKind::TherapyPsy,
        RelationKind::TherapyPhy,
        RelationKind::LifeTherapy,
        RelationKind::MedPsy,
        RelationKind::MedPhy,
        RelationKind::LifeMed,
        RelationKind::MedTherapyCo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RelationKind::Subcat => "r_subcat",
            RelationKind::MedCo => "r_med_co",
            RelationKind::PsyCo => "r_psy_co",
            RelationKind::PhyCo => "r_phy_co",
            RelationKind::EventCo => "r_event_co",
            RelationKind::TherapyCo => "r_therapy_co",
            RelationKind::PhyPsyCo => "r_phy_psy_co",
            RelationKind::LifePsy => "r_life_psy",
            RelationKind::LifePhy => "r_life_phy",
            RelationKind::TherapyPsy => "r_therapy_psy",
            RelationKind::TherapyPhy => "r_therapy_phy",
            RelationKind::LifeTherapy => "r_life_therapy",
            RelationKind::MedPsy => "r_med_psy",
            RelationKind::MedPhy => "r_med_phy",
            RelationKind::LifeMed => "r_life_med",
            RelationKind::MedTherapyCo => "r_med_therapy_co",
        }
    }

    pub fn directed(self) -> bool {
        self == RelationKind::Subcat
    }

    /// Position in [`RelationKind::ALL`].
    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    /// Admissible factor classes for the two endpoints of an undirected
    /// relation. `None` for `r_subcat`, whose tail is a class node.
    pub fn endpoint_classes(self) -> Option<(FactorClass, FactorClass)> {
        use FactorClass::*;
        Some(match self {
            RelationKind::Subcat => return None,
            RelationKind::MedCo => (Med, Med),
            RelationKind::PsyCo => (PsySym, PsySym),
            RelationKind::PhyCo => (PhySym, PhySym),
            RelationKind::EventCo => (Event, Event),
            RelationKind::TherapyCo => (Therapy, Therapy),
            RelationKind::PhyPsyCo => (PhySym, PsySym),
            RelationKind::LifePsy => (Event, PsySym),
            RelationKind::LifePhy => (Event, PhySym),
            RelationKind::TherapyPsy => (Therapy, PsySym),
            RelationKind::TherapyPhy => (Therapy, PhySym),
            RelationKind::LifeTherapy => (Event, Therapy),
            RelationKind::MedPsy => (Med, PsySym),
            RelationKind::MedPhy => (Med, PhySym),
            RelationKind::LifeMed => (Event, Med),
            RelationKind::MedTherapyCo => (Therapy, Med),
        })
    }

    pub fn is_same_class(self) -> bool {
        matches!(self.endpoint_classes(), Some((a, b)) if a == b)
    }

    /// The unique undirected relation connecting two factor classes.
    pub fn between(a: FactorClass, b: FactorClass) -> RelationKind {
        RelationKind::ALL
            .into_iter()
            .find(|r| match r.endpoint_classes() {
                Some((x, y)) => (x == a && y == b) || (x == b && y == a),
                None => false,
            })
            .expect("every factor class pair has a relation")
    }

    /// Whether a triplet `(head, self, tail)` with the given endpoint
    /// classes is admissible. Undirected kinds accept either orientation.
    pub fn admits(self, head: &Entity, tail: &Entity) -> bool {
        match self.endpoint_classes() {
            None => match (head.class.factor(), tail.class) {
                (Some(f), EntityClass::ClassNode) => tail.id == f.class_node_id(),
                _ => false,
            },
            Some((x, y)) => match (head.class.factor(), tail.class.factor()) {
                (Some(a), Some(b)) => (a == x && b == y) || (a == y && b == x),
                _ => false,
            },
        }
    }
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RelationKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        RelationKind::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Schema(format!("unknown relation `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntityStatus {
    Seed,
    Discovered,
    Quarantined,
}

impl EntityStatus {
    pub fn name(self) -> &'static str {
        match self {
            EntityStatus::Seed => "seed",
            EntityStatus::Discovered => "discovered",
            EntityStatus::Quarantined => "quarantined",
        }
    }
}

impl FromStr for EntityStatus {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "seed" => EntityStatus::Seed,
            "discovered" => EntityStatus::Discovered,
            "quarantined" => EntityStatus::Quarantined,
            other => return Err(Error::Schema(format!("unknown entity status `{other}`"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: EntityId,
    pub surface: String,
    pub aliases: Vec<String>,
    pub class: EntityClass,
    pub first_period: u32,
    pub status: EntityStatus,
}

impl Entity {
    pub fn seed(id: impl Into<String>, class: EntityClass, surface: &str) -> Self {
        Entity {
            id: EntityId(id.into()),
            surface: normalize_surface(surface),
            aliases: Vec::new(),
            class,
            first_period: 0,
            status: EntityStatus::Seed,
        }
    }

    pub fn with_aliases(mut self, aliases: &[&str]) -> Self {
        self.aliases = aliases.iter().map(|a| normalize_surface(a)).collect();
        self
    }

    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.surface.as_str()).chain(self.aliases.iter().map(String::as_str))
    }
}

/// Unicode lowercase plus whitespace collapse.
pub fn normalize_surface(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Tabs and newlines become spaces; the result is capped at
/// [`MAX_SNIPPET_CHARS`] characters.
pub fn clean_snippet(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_control() { ' ' } else { c })
        .take(MAX_SNIPPET_CHARS)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TripletKey {
    pub head: EntityId,
    pub relation: RelationKind,
    pub tail: EntityId,
}

impl TripletKey {
    /// Builds the stored orientation: undirected kinds put the smaller id first.
    pub fn canonical(head: EntityId, relation: RelationKind, tail: EntityId) -> Self {
        if !relation.directed() && tail < head {
            TripletKey {
                head: tail,
                relation,
                tail: head,
            }
        } else {
            TripletKey {
                head,
                relation,
                tail,
            }
        }
    }
}

impl fmt::Display for TripletKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.head, self.relation, self.tail)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub user: String,
    pub period: u32,
    pub snippet: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TripletStatus {
    Active,
    Candidate,
    Rejected,
}

impl TripletStatus {
    pub fn name(self) -> &'static str {
        match self {
            TripletStatus::Active => "active",
            TripletStatus::Candidate => "candidate",
            TripletStatus::Rejected => "rejected",
        }
    }
}

impl FromStr for TripletStatus {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "active" => TripletStatus::Active,
            "candidate" => TripletStatus::Candidate,
            "rejected" => TripletStatus::Rejected,
            other => return Err(Error::Schema(format!("unknown triplet status `{other}`"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub head: EntityId,
    pub relation: RelationKind,
    pub tail: EntityId,
    pub pos_count: u64,
    pub neg_count: u64,
    pub provenance: Vec<Provenance>,
    pub status: TripletStatus,
}

impl Triplet {
    pub fn new(head: impl Into<String>, relation: RelationKind, tail: impl Into<String>) -> Self {
        Triplet {
            head: EntityId(head.into()),
            relation,
            tail: EntityId(tail.into()),
            pos_count: 0,
            neg_count: 0,
            provenance: Vec::new(),
            status: TripletStatus::Active,
        }
    }

    pub fn with_counts(mut self, pos: u64, neg: u64) -> Self {
        self.pos_count = pos;
        self.neg_count = neg;
        self
    }

    pub fn key(&self) -> TripletKey {
        TripletKey::canonical(self.head.clone(), self.relation, self.tail.clone())
    }

    /// Co-mention count used by transition scores, floored at one.
    pub fn comention_count(&self) -> u64 {
        (self.pos_count + self.neg_count).max(1)
    }
}

pub type Adjacency = BTreeMap<EntityId, BTreeMap<RelationKind, Vec<EntityId>>>;

/// Serialises through the snapshot text format.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct KnowledgeGraph {
    entities: BTreeMap<EntityId, Entity>,
    triplets: BTreeMap<TripletKey, Triplet>,
    adjacency: Adjacency,
    surface_index: HashMap<String, EntityId>,
    pub period: u32,
}

impl TryFrom<String> for KnowledgeGraph {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        parse_snapshot("<embedded>", &s)
    }
}

impl From<KnowledgeGraph> for String {
    fn from(kg: KnowledgeGraph) -> String {
        snapshot_string(&kg)
    }
}

impl KnowledgeGraph {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Graph holding only the five class nodes and the depression node.
    pub fn with_reserved_nodes() -> Self {
        let mut kg = Self::empty();
        for entity in reserved_entities() {
            kg.add_entity(entity).expect("reserved entities are valid");
        }
        kg
    }

    pub fn add_entity(&mut self, mut entity: Entity) -> Result<()> {
        entity.surface = normalize_surface(&entity.surface);
        entity.aliases = entity.aliases.iter().map(|a| normalize_surface(a)).collect();
        if entity.id.0.is_empty() || entity.id.0.contains(char::is_whitespace) {
            return Err(Error::Schema(format!("invalid entity id `{}`", entity.id)));
        }
        if entity.surface.is_empty() || entity.aliases.iter().any(String::is_empty) {
            return Err(Error::Schema(format!("entity `{}` has an empty surface", entity.id)));
        }
        if self.entities.contains_key(&entity.id) {
            return Err(Error::Schema(format!("duplicate entity id `{}`", entity.id)));
        }
        match entity.class {
            EntityClass::ClassNode if FactorClass::from_class_node_id(&entity.id).is_none() => {
                return Err(Error::Schema(format!(
                    "class node `{}` must use a reserved id such as `class:PsySym`",
                    entity.id
                )));
            }
            EntityClass::DepressionNode if entity.id.0 != DEPRESSION_ID => {
                return Err(Error::Schema(format!(
                    "depression node must have id `{DEPRESSION_ID}`, got `{}`",
                    entity.id
                )));
            }
            _ => {}
        }
        if entity.class.is_reserved() && entity.first_period != 0 {
            return Err(Error::Schema(format!("reserved entity `{}` must be period 0", entity.id)));
        }
        match entity.status {
            EntityStatus::Seed if entity.first_period != 0 => {
                return Err(Error::Schema(format!("seed entity `{}` must have first_period 0", entity.id)));
            }
            EntityStatus::Discovered if entity.first_period < 1 => {
                return Err(Error::Schema(format!(
                    "discovered entity `{}` must have first_period >= 1",
                    entity.id
                )));
            }
            _ => {}
        }
        let mut seen = Vec::new();
        for s in entity.surfaces() {
            if self.surface_index.contains_key(s) || seen.contains(&s) {
                return Err(Error::Schema(format!("surface `{s}` of `{}` is not unique", entity.id)));
            }
            seen.push(s);
        }
        for s in entity.surfaces() {
            self.surface_index.insert(s.to_string(), entity.id.clone());
        }
        self.entities.insert(entity.id.clone(), entity);
        Ok(())
    }

    /// Adds or merges a triplet. Duplicate keys merge counts and provenance.
    pub fn add_triplet(&mut self, triplet: Triplet) -> Result<TripletKey> {
        let head = self
            .entities
            .get(&triplet.head)
            .ok_or_else(|| Error::UnknownEntity(triplet.head.0.clone()))?;
        let tail = self
            .entities
            .get(&triplet.tail)
            .ok_or_else(|| Error::UnknownEntity(triplet.tail.0.clone()))?;
        if triplet.head == triplet.tail {
            return Err(Error::SelfLoop(triplet.head.0.clone()));
        }
        if !triplet.relation.admits(head, tail) {
            return Err(Error::EndpointMismatch {
                relation: triplet.relation.name().to_string(),
                head: head.id.0.clone(),
                tail: tail.id.0.clone(),
                head_class: head.class.name().to_string(),
                tail_class: tail.class.name().to_string(),
            });
        }
        let key = triplet.key();
        let activate = triplet.status == TripletStatus::Active;
        match self.triplets.get_mut(&key) {
            Some(existing) => {
                existing.pos_count += triplet.pos_count;
                existing.neg_count += triplet.neg_count;
                existing.provenance.extend(triplet.provenance.into_iter().map(|mut p| {
                    p.snippet = clean_snippet(&p.snippet);
                    p
                }));
                if activate && existing.status != TripletStatus::Active {
                    existing.status = TripletStatus::Active;
                    self.link(&key);
                }
            }
            None => {
                let stored = Triplet {
                    head: key.head.clone(),
                    relation: key.relation,
                    tail: key.tail.clone(),
                    provenance: triplet
                        .provenance
                        .into_iter()
                        .map(|mut p| {
                            p.snippet = clean_snippet(&p.snippet);
                            p
                        })
                        .collect(),
                    ..triplet
                };
                self.triplets.insert(key.clone(), stored);
                if activate {
                    self.link(&key);
                }
            }
        }
        Ok(key)
    }

    /// Increments the counts of an existing triplet. Returns false when the
    /// key is not stored.
    pub fn bump_counts(&mut self, key: &TripletKey, pos: u64, neg: u64, provenance: &[Provenance]) -> bool {
        match self.triplets.get_mut(key) {
            Some(t) => {
                t.pos_count += pos;
                t.neg_count += neg;
                t.provenance.extend(provenance.iter().map(|p| Provenance {
                    snippet: clean_snippet(&p.snippet),
                    ..p.clone()
                }));
                true
            }
            None => false,
        }
    }

    fn link(&mut self, key: &TripletKey) {
        insert_sorted(
            self.adjacency
                .entry(key.head.clone())
                .or_default()
                .entry(key.relation)
                .or_default(),
            key.tail.clone(),
        );
        if !key.relation.directed() {
            insert_sorted(
                self.adjacency
                    .entry(key.tail.clone())
                    .or_default()
                    .entry(key.relation)
                    .or_default(),
                key.head.clone(),
            );
        }
    }

    /// Recomputes adjacency from active triplets.
    pub fn rebuild_adjacency(&self) -> Adjacency {
        let mut adj = Adjacency::new();
        for key in self
            .triplets
            .values()
            .filter(|t| t.status == TripletStatus::Active)
            .map(Triplet::key)
        {
            insert_sorted(
                adj.entry(key.head.clone()).or_default().entry(key.relation).or_default(),
                key.tail.clone(),
            );
            if !key.relation.directed() {
                insert_sorted(
                    adj.entry(key.tail.clone()).or_default().entry(key.relation).or_default(),
                    key.head.clone(),
                );
            }
        }
        adj
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adjacency
    }

    pub fn entity(&self, id: &EntityId) -> Option<&Entity> {
        self.entities.get(id)
    }

    pub fn entities(&self) -> impl Iterator<Item = &Entity> {
        self.entities.values()
    }

    pub fn entity_ids(&self) -> impl Iterator<Item = &EntityId> {
        self.entities.keys()
    }

    /// Entities of the five factor classes, in id order.
    pub fn factor_entities(&self) -> impl Iterator<Item = &Entity> {
        self.entities.values().filter(|e| e.class.factor().is_some())
    }

    pub fn entities_of_class(&self, class: EntityClass) -> impl Iterator<Item = &Entity> {
        self.entities.values().filter(move |e| e.class == class)
    }

    pub fn triplet(&self, key: &TripletKey) -> Option<&Triplet> {
        self.triplets.get(key)
    }

    pub fn triplets(&self) -> impl Iterator<Item = &Triplet> {
        self.triplets.values()
    }

    pub fn active_triplets(&self) -> impl Iterator<Item = &Triplet> {
        self.triplets.values().filter(|t| t.status == TripletStatus::Active)
    }

    pub fn is_active(&self, key: &TripletKey) -> bool {
        self.triplets
            .get(key)
            .is_some_and(|t| t.status == TripletStatus::Active)
    }

    pub fn lookup_surface(&self, surface: &str) -> Option<&EntityId> {
        self.surface_index.get(&normalize_surface(surface))
    }

    pub fn neighbors(&self, id: &EntityId, relation: RelationKind) -> &[EntityId] {
        self.adjacency
            .get(id)
            .and_then(|m| m.get(&relation))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Outgoing neighbourhood grouped by relation, in canonical order.
    pub fn neighborhood(&self, id: &EntityId) -> Vec<(RelationKind, Vec<EntityId>)> {
        self.adjacency
            .get(id)
            .map(|m| {
                m.iter()
                    .filter(|(_, v)| !v.is_empty())
                    .map(|(r, v)| (*r, v.clone()))
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn out_degree(&self, id: &EntityId) -> usize {
        self.adjacency
            .get(id)
            .map(|m| m.values().map(Vec::len).sum())
            .unwrap_or(0)
    }

    /// (node count, active edge count)
    pub fn stats(&self) -> (usize, usize) {
        (self.entities.len(), self.active_triplets().count())
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    /// Verifies every graph invariant. Used after loads and in tests.
    pub fn validate(&self) -> Result<()> {
        let deps = self.entities_of_class(EntityClass::DepressionNode).count();
        if deps != 1 {
            return Err(Error::Schema(format!("expected exactly one DepressionNode, found {deps}")));
        }
        for c in FactorClass::ALL {
            match self.entities.get(&c.class_node_id()) {
                Some(e) if e.class == EntityClass::ClassNode => {}
                _ => {
                    return Err(Error::Schema(format!(
                        "missing class node `{}`",
                        c.class_node_id()
                    )))
                }
            }
        }
        let class_nodes = self.entities_of_class(EntityClass::ClassNode).count();
        if class_nodes != 5 {
            return Err(Error::Schema(format!("expected five ClassNodes, found {class_nodes}")));
        }
        for (key, t) in &self.triplets {
            if *key != t.key() {
                return Err(Error::Schema(format!("triplet {key} is not stored canonically")));
            }
            let head = self.entity(&t.head).ok_or_else(|| Error::UnknownEntity(t.head.0.clone()))?;
            let tail = self.entity(&t.tail).ok_or_else(|| Error::UnknownEntity(t.tail.0.clone()))?;
            if t.head == t.tail {
                return Err(Error::SelfLoop(t.head.0.clone()));
            }
            if !t.relation.admits(head, tail) {
                return Err(Error::Schema(format!("triplet {key} violates endpoint classes")));
            }
        }
        if self.rebuild_adjacency() != self.adjacency {
            return Err(Error::Schema("adjacency out of sync with triplets".into()));
        }
        Ok(())
    }

    /// Adds the `r_subcat` link for every factor entity that lacks one.
    pub fn link_class_nodes(&mut self) -> Result<usize> {
        let missing: Vec<(EntityId, FactorClass)> = self
            .factor_entities()
            .filter_map(|e| {
                let class = e.class.factor()?;
                let key = TripletKey::canonical(e.id.clone(), RelationKind::Subcat, class.class_node_id());
                (!self.triplets.contains_key(&key)).then(|| (e.id.clone(), class))
            })
            .collect();
        let n = missing.len();
        for (id, class) in missing {
            self.add_triplet(Triplet::new(id.0, RelationKind::Subcat, class.class_node_id().0))?;
        }
        Ok(n)
    }
}

pub fn reserved_entities() -> Vec<Entity> {
    let mut out: Vec<Entity> = FactorClass::ALL
        .into_iter()
        .map(|c| Entity::seed(c.class_node_id().0, EntityClass::ClassNode, c.default_class_surface()))
        .collect();
    out.push(Entity::seed(DEPRESSION_ID, EntityClass::DepressionNode, "depression"));
    out
}

fn insert_sorted(list: &mut Vec<EntityId>, id: EntityId) {
    if let Err(pos) = list.binary_search(&id) {
        list.insert(pos, id);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_graph() -> KnowledgeGraph {
        let mut kg = KnowledgeGraph::with_reserved_nodes();
        kg.add_entity(Entity::seed("anxious", EntityClass::PsySym, "Anxious")).unwrap();
        kg.add_entity(Entity::seed("aboulomania", EntityClass::PsySym, "aboulomania")).unwrap();
        kg.add_entity(Entity::seed("divorce", EntityClass::Event, "divorce")).unwrap();
        kg.add_entity(Entity::seed("fluoxetine", EntityClass::Med, "fluoxetine")).unwrap();
        kg.link_class_nodes().unwrap();
        kg
    }

    #[test]
    fn relation_kinds_partition() {
        let directed = RelationKind::ALL.iter().filter(|r| r.directed()).count();
        let same = RelationKind::ALL.iter().filter(|r| r.is_same_class()).count();
        let cross = RelationKind::ALL
            .iter()
            .filter(|r| !r.directed() && !r.is_same_class())
            .count();
        assert_eq!((directed, same, cross), (1, 5, 10));
        for a in FactorClass::ALL {
            for b in FactorClass::ALL {
                assert_eq!(RelationKind::between(a, b), RelationKind::between(b, a));
            }
        }
    }

    #[test]
    fn undirected_orientations_merge_into_one_edge() {
        let mut kg = small_graph();
        let before = kg.stats().1;
        kg.add_triplet(Triplet::new("anxious", RelationKind::LifePsy, "divorce").with_counts(2, 1))
            .unwrap();
        kg.add_triplet(Triplet::new("divorce", RelationKind::LifePsy, "anxious").with_counts(1, 4))
            .unwrap();
        assert_eq!(kg.stats().1, before + 1);
        let key = TripletKey::canonical("divorce".into(), RelationKind::LifePsy, "anxious".into());
        assert_eq!(key.head.as_str(), "anxious");
        let t = kg.triplet(&key).unwrap();
        assert_eq!((t.pos_count, t.neg_count), (3, 5));
        kg.validate().unwrap();
    }

    #[test]
    fn comention_edge_is_symmetric_in_adjacency() {
        let mut kg = small_graph();
        kg.add_triplet(Triplet::new("anxious", RelationKind::PsyCo, "aboulomania")).unwrap();
        assert!(kg
            .neighbors(&"anxious".into(), RelationKind::PsyCo)
            .contains(&"aboulomania".into()));
        assert!(kg
            .neighbors(&"aboulomania".into(), RelationKind::PsyCo)
            .contains(&"anxious".into()));
        // subcat is one-way
        assert!(kg.neighbors(&"class:PsySym".into(), RelationKind::Subcat).is_empty());
        assert_eq!(kg.neighbors(&"anxious".into(), RelationKind::Subcat), &["class:PsySym".into()]);
    }

    #[test]
    fn self_loop_and_mismatch_are_rejected() {
        let mut kg = small_graph();
        assert!(matches!(
            kg.add_triplet(Triplet::new("anxious", RelationKind::PsyCo, "anxious")),
            Err(Error::SelfLoop(_))
        ));
        assert!(matches!(
            kg.add_triplet(Triplet::new("fluoxetine", RelationKind::PsyCo, "anxious")),
            Err(Error::EndpointMismatch { .. })
        ));
        assert!(matches!(
            kg.add_triplet(Triplet::new("anxious", RelationKind::Subcat, "class:Med")),
            Err(Error::EndpointMismatch { .. })
        ));
        assert!(matches!(
            kg.add_triplet(Triplet::new("ghost", RelationKind::PsyCo, "anxious")),
            Err(Error::UnknownEntity(_))
        ));
    }

    #[test]
    fn surfaces_are_normalised_and_unique() {
        let mut kg = small_graph();
        assert_eq!(kg.entity(&"anxious".into()).unwrap().surface, "anxious");
        let dup = Entity::seed("anx2", EntityClass::PsySym, "  ANXIOUS ");
        assert!(kg.add_entity(dup).is_err());
        let alias_clash = Entity::seed("x", EntityClass::PsySym, "worry").with_aliases(&["Divorce"]);
        assert!(kg.add_entity(alias_clash).is_err());
        assert_eq!(kg.lookup_surface("Self   Harm"), None);
        assert_eq!(kg.lookup_surface("ABOULOMANIA").map(|e| e.as_str()), Some("aboulomania"));
    }

    #[test]
    fn period_rules_for_entity_status() {
        let mut kg = small_graph();
        let mut e = Entity::seed("fog", EntityClass::PhySym, "brain fog");
        e.status = EntityStatus::Discovered;
        assert!(kg.add_entity(e.clone()).is_err());
        e.first_period = 3;
        kg.add_entity(e).unwrap();
    }

    #[test]
    fn validate_catches_missing_reserved_nodes() {
        let kg = KnowledgeGraph::empty();
        assert!(kg.validate().is_err());
        KnowledgeGraph::with_reserved_nodes().validate().unwrap();
    }
}
