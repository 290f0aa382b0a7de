//! The closed world: an attribute schema plus a set of items with pairwise
//! distinct attribute profiles.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{self, streams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ItemId(pub u32);

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionKind {
    Categorical,
    Numeric,
}

impl SectionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SectionKind::Categorical => "categorical",
            SectionKind::Numeric => "numeric",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SectionDomain {
    Categorical {
        values: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_values: Option<usize>,
    },
    Numeric { min: i64, max: i64 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub name: String,
    /// Column holding this section in the item file; defaults to the name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<String>,
    #[serde(flatten)]
    pub domain: SectionDomain,
}

impl Section {
    pub fn kind(&self) -> SectionKind {
        match self.domain {
            SectionDomain::Categorical { .. } => SectionKind::Categorical,
            SectionDomain::Numeric { .. } => SectionKind::Numeric,
        }
    }

    pub fn column(&self) -> &str {
        self.column.as_deref().unwrap_or(&self.name)
    }

    pub fn labels(&self) -> &[String] {
        match &self.domain {
            SectionDomain::Categorical { values, .. } => values,
            SectionDomain::Numeric { .. } => &[],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "SchemaRepr", into = "SchemaRepr")]
pub struct AttributeSchema {
    sections: Vec<Section>,
    by_name: HashMap<String, usize>,
    label_index: Vec<HashMap<String, u32>>,
}

#[derive(Serialize, Deserialize)]
struct SchemaRepr {
    sections: Vec<Section>,
}

impl TryFrom<SchemaRepr> for AttributeSchema {
    type Error = Error;
    fn try_from(r: SchemaRepr) -> Result<Self> {
        AttributeSchema::new(r.sections)
    }
}

impl From<AttributeSchema> for SchemaRepr {
    fn from(s: AttributeSchema) -> Self {
        SchemaRepr {
            sections: s.sections,
        }
    }
}

impl PartialEq for AttributeSchema {
    fn eq(&self, other: &Self) -> bool {
        self.sections == other.sections
    }
}

impl AttributeSchema {
    pub fn new(sections: Vec<Section>) -> Result<Self> {
        let mut by_name = HashMap::new();
        let mut label_index = Vec::with_capacity(sections.len());
        for (i, s) in sections.iter().enumerate() {
            if s.name.trim().is_empty() {
                return Err(Error::Schema("section name is empty".into()));
            }
            if by_name.insert(s.name.clone(), i).is_some() {
                return Err(Error::Schema(format!("duplicate section name {:?}", s.name)));
            }
            let mut labels = HashMap::new();
            match &s.domain {
                SectionDomain::Categorical { values, max_values } => {
                    if values.is_empty() {
                        return Err(Error::Schema(format!("section {:?} has an empty domain", s.name)));
                    }
                    if *max_values == Some(0) {
                        return Err(Error::Schema(format!("section {:?} allows zero values", s.name)));
                    }
                    for (j, v) in values.iter().enumerate() {
                        if labels.insert(v.clone(), j as u32).is_some() {
                            return Err(Error::Schema(format!(
                                "section {:?} lists {:?} twice",
                                s.name, v
                            )));
                        }
                    }
                }
                SectionDomain::Numeric { min, max } => {
                    if min > max {
                        return Err(Error::Schema(format!(
                            "section {:?} has min {} > max {}",
                            s.name, min, max
                        )));
                    }
                }
            }
            label_index.push(labels);
        }
        Ok(AttributeSchema {
            sections,
            by_name,
            label_index,
        })
    }

    pub fn sections(&self) -> &[Section] {
        &self.sections
    }

    pub fn len(&self) -> usize {
        self.sections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sections.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn section(&self, name: &str) -> Result<(usize, &Section)> {
        let i = self
            .index_of(name)
            .ok_or_else(|| Error::UnknownSection(name.to_string()))?;
        Ok((i, &self.sections[i]))
    }

    pub fn label_id(&self, section: usize, label: &str) -> Option<u32> {
        self.label_index[section].get(label).copied()
    }

    pub fn label(&self, section: usize, id: u32) -> &str {
        &self.sections[section].labels()[id as usize]
    }

    /// The four sections shown in the reference trajectories: Type, Abilities,
    /// Base Stats and Generation, with the item-file columns they load from.
    pub fn canonical_config() -> SchemaConfig {
        SchemaConfig {
            sections: vec![
                SectionConfig::categorical("Type", "type_list", Some(2)),
                SectionConfig::categorical("Abilities", "ability_list", None),
                SectionConfig::numeric("Base Stats", "base_stat_total"),
                SectionConfig::numeric("Generation", "generation"),
            ],
        }
    }
}

/// Schema description used when loading an item file. Domains may be left
/// open, in which case they are inferred from the data.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaConfig {
    pub sections: Vec<SectionConfig>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<String>,
    pub kind: SectionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_values: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<i64>,
}

impl SectionConfig {
    pub fn categorical(name: &str, column: &str, max_values: Option<usize>) -> Self {
        SectionConfig {
            name: name.into(),
            column: Some(column.into()),
            kind: SectionKind::Categorical,
            values: None,
            max_values,
            min: None,
            max: None,
        }
    }

    pub fn numeric(name: &str, column: &str) -> Self {
        SectionConfig {
            name: name.into(),
            column: Some(column.into()),
            kind: SectionKind::Numeric,
            values: None,
            max_values: None,
            min: None,
            max: None,
        }
    }

    fn column(&self) -> &str {
        self.column.as_deref().unwrap_or(&self.name)
    }
}

/// One attribute value. Categorical labels are indices into the section's
/// vocabulary, kept in source order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum AttrValue {
    Labels(Vec<u32>),
    Number(i64),
}

impl AttrValue {
    pub fn number(&self) -> Option<i64> {
        match self {
            AttrValue::Number(n) => Some(*n),
            AttrValue::Labels(_) => None,
        }
    }

    pub fn labels(&self) -> &[u32] {
        match self {
            AttrValue::Labels(l) => l,
            AttrValue::Number(_) => &[],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Item {
    pub id: ItemId,
    pub name: String,
    pub dex: Option<u32>,
    /// Ordering key for list outputs; the display name when absent.
    pub sort_key: Option<String>,
    pub values: Vec<AttrValue>,
}

impl Item {
    pub fn order_key(&self) -> &str {
        self.sort_key.as_deref().unwrap_or(&self.name)
    }

    /// The number rendered after `#` in feedback.
    pub fn dex_or_id(&self) -> u32 {
        self.dex.unwrap_or(self.id.0)
    }

    fn profile(&self) -> Vec<ProfileAtom> {
        self.values
            .iter()
            .map(|v| match v {
                AttrValue::Labels(l) => {
                    let mut s = l.clone();
                    s.sort_unstable();
                    ProfileAtom::Set(s)
                }
                AttrValue::Number(n) => ProfileAtom::Num(*n),
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum ProfileAtom {
    Set(Vec<u32>),
    Num(i64),
}

#[derive(Clone, Debug)]
pub struct Universe {
    schema: AttributeSchema,
    items: Vec<Item>,
    name_index: HashMap<String, ItemId>,
    order: Vec<usize>,
}

impl PartialEq for Universe {
    fn eq(&self, other: &Self) -> bool {
        self.schema == other.schema && self.items == other.items
    }
}

impl Universe {
    /// Builds a universe and rejects it unless every invariant holds.
    pub fn new(schema: AttributeSchema, items: Vec<Item>) -> Result<Self> {
        let u = Self::new_unchecked(schema, items);
        if let Some(v) = u.validate().into_iter().next() {
            return Err(match v.rule {
                Rule::DuplicateName => Error::DuplicateName(v.detail),
                Rule::DuplicateProfile => Error::DuplicateProfile {
                    first: v.item_ids[0],
                    second: v.item_ids[1],
                },
                Rule::OutOfDomain => Error::OutOfDomain {
                    section: v.section.unwrap_or_default(),
                    value: v.detail,
                },
                _ => Error::Schema(format!("{}: {}", v.rule, v.detail)),
            });
        }
        Ok(u)
    }

    /// Builds a universe without checking invariants; pair with `validate`.
    /// Item ids are reassigned to file order (1-based).
    pub fn new_unchecked(schema: AttributeSchema, mut items: Vec<Item>) -> Self {
        for (i, item) in items.iter_mut().enumerate() {
            item.id = ItemId(i as u32 + 1);
        }
        let mut name_index = HashMap::with_capacity(items.len());
        for item in &items {
            name_index.entry(item.name.clone()).or_insert(item.id);
        }
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.sort_by(|&a, &b| {
            items[a]
                .order_key()
                .cmp(items[b].order_key())
                .then(items[a].name.cmp(&items[b].name))
        });
        Universe {
            schema,
            items,
            name_index,
            order,
        }
    }

    pub fn schema(&self) -> &AttributeSchema {
        &self.schema
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn item(&self, id: ItemId) -> Result<&Item> {
        (id.0 as usize)
            .checked_sub(1)
            .and_then(|i| self.items.get(i))
            .ok_or_else(|| Error::UnknownItem(id.to_string()))
    }

    pub fn by_name(&self, name: &str) -> Option<&Item> {
        self.name_index.get(name).and_then(|id| self.item(*id).ok())
    }

    /// Items in output order (ascending by ordering key).
    pub fn sorted(&self) -> impl Iterator<Item = &Item> + '_ {
        self.order.iter().map(move |&i| &self.items[i])
    }

    pub fn labels_of<'a>(&'a self, item: &'a Item, section: usize) -> impl Iterator<Item = &'a str> + 'a {
        item.values[section]
            .labels()
            .iter()
            .map(move |&l| self.schema.label(section, l))
    }

    /// SHA-256 over the canonical JSON rendering of the universe.
    pub fn fingerprint(&self) -> String {
        let doc = self.to_document();
        let bytes = serde_json::to_vec(&doc).expect("universe serializes");
        hex(&Sha256::digest(&bytes))
    }

    /// Full check of every universe invariant. An empty report means valid.
    pub fn validate(&self) -> Vec<Violation> {
        validate_universe(self)
    }

    fn to_document(&self) -> UniverseDocument {
        UniverseDocument {
            schema: self.schema.clone(),
            items: self.items.iter().map(|i| self.item_record(i)).collect(),
        }
    }

    fn item_record(&self, item: &Item) -> serde_json::Map<String, serde_json::Value> {
        use serde_json::Value;
        let mut rec = serde_json::Map::new();
        rec.insert("name".into(), Value::String(item.name.clone()));
        rec.insert(
            "dex".into(),
            item.dex.map(Value::from).unwrap_or(Value::Null),
        );
        if let Some(k) = &item.sort_key {
            rec.insert("sort_key".into(), Value::String(k.clone()));
        }
        for (s, section) in self.schema.sections().iter().enumerate() {
            let v = match &item.values[s] {
                AttrValue::Labels(_) => Value::Array(
                    self.labels_of(item, s)
                        .map(|l| Value::String(l.to_string()))
                        .collect(),
                ),
                AttrValue::Number(n) => Value::from(*n),
            };
            rec.insert(section.column().to_string(), v);
        }
        rec
    }

    /// Writes the universe as a JSON document carrying both schema and items.
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_document())?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: UniverseDocument = serde_json::from_str(&text)?;
        let records = doc
            .items
            .into_iter()
            .map(|m| m.into_iter().map(|(k, v)| (k, json_cell(&v))).collect())
            .collect();
        let cfg = SchemaConfig {
            sections: doc
                .schema
                .sections()
                .iter()
                .map(|s| match &s.domain {
                    SectionDomain::Categorical { values, max_values } => SectionConfig {
                        name: s.name.clone(),
                        column: s.column.clone(),
                        kind: SectionKind::Categorical,
                        values: Some(values.clone()),
                        max_values: *max_values,
                        min: None,
                        max: None,
                    },
                    SectionDomain::Numeric { min, max } => SectionConfig {
                        name: s.name.clone(),
                        column: s.column.clone(),
                        kind: SectionKind::Numeric,
                        values: None,
                        max_values: None,
                        min: Some(*min),
                        max: Some(*max),
                    },
                })
                .collect(),
        };
        build_from_records(records, &cfg)
    }

    /// Writes the item file in delimited-text form (the same format
    /// `load_universe` reads).
    pub fn save_items_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        let has_sort_key = self.items.iter().any(|i| i.sort_key.is_some());
        let mut header = vec!["name".to_string(), "dex".to_string()];
        if has_sort_key {
            header.push("sort_key".into());
        }
        header.extend(self.schema.sections().iter().map(|s| s.column().to_string()));
        w.write_record(&header).map_err(|e| csv_io(path, e))?;
        for item in &self.items {
            let mut row = vec![
                item.name.clone(),
                item.dex.map(|d| d.to_string()).unwrap_or_default(),
            ];
            if has_sort_key {
                row.push(item.sort_key.clone().unwrap_or_default());
            }
            for s in 0..self.schema.len() {
                row.push(match &item.values[s] {
                    AttrValue::Labels(_) => self.labels_of(item, s).collect::<Vec<_>>().join("|"),
                    AttrValue::Number(n) => n.to_string(),
                });
            }
            w.write_record(&row).map_err(|e| csv_io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Serialize, Deserialize)]
struct UniverseDocument {
    schema: AttributeSchema,
    items: Vec<serde_json::Map<String, serde_json::Value>>,
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{:02x}", b)).collect()
}

/// Raw field contents of one record, either a single string or a list.
#[derive(Clone, Debug)]
enum Cell {
    Text(String),
    List(Vec<String>),
    Missing,
}

fn json_cell(v: &serde_json::Value) -> Cell {
    use serde_json::Value;
    match v {
        Value::Null => Cell::Missing,
        Value::String(s) => Cell::Text(s.clone()),
        Value::Number(n) => Cell::Text(n.to_string()),
        Value::Array(a) => Cell::List(
            a.iter()
                .map(|x| match x {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect(),
        ),
        other => Cell::Text(other.to_string()),
    }
}

/// Loads an item file (delimited text with a header row, or a JSON array of
/// objects using the same field names) against a schema description.
///
/// Item order equals file order. Open categorical domains are inferred and
/// sorted; open numeric ranges are inferred from the data.
pub fn load_universe(path: &Path, schema_config: &SchemaConfig) -> Result<Universe> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records = if text.trim_start().starts_with('[') {
        let rows: Vec<serde_json::Map<String, serde_json::Value>> = serde_json::from_str(&text)
            .map_err(|e| Error::Parse {
                row: e.line(),
                column: String::new(),
                message: e.to_string(),
            })?;
        rows.into_iter()
            .map(|m| m.into_iter().map(|(k, v)| (k, json_cell(&v))).collect())
            .collect()
    } else {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::Parse {
                row: 1,
                column: String::new(),
                message: e.to_string(),
            })?
            .iter()
            .map(str::to_string)
            .collect();
        let mut out = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse {
                row: i + 2,
                column: String::new(),
                message: e.to_string(),
            })?;
            out.push(
                header
                    .iter()
                    .zip(rec.iter())
                    .map(|(h, v)| (h.clone(), Cell::Text(v.to_string())))
                    .collect(),
            );
        }
        out
    };
    build_from_records(records, schema_config)
}

fn build_from_records(
    records: Vec<HashMap<String, Cell>>,
    cfg: &SchemaConfig,
) -> Result<Universe> {
    struct Raw {
        name: String,
        dex: Option<u32>,
        sort_key: Option<String>,
        values: Vec<RawValue>,
    }
    enum RawValue {
        Labels(Vec<String>),
        Number(i64),
    }

    let mut raws = Vec::with_capacity(records.len());
    for (i, rec) in records.into_iter().enumerate() {
        let row = i + 1;
        let text = |col: &str| -> Option<String> {
            match rec.get(col) {
                Some(Cell::Text(s)) if !s.trim().is_empty() => Some(s.trim().to_string()),
                Some(Cell::List(l)) => Some(l.join("|")),
                _ => None,
            }
        };
        let name = text("name").ok_or_else(|| Error::Parse {
            row,
            column: "name".into(),
            message: "missing item name".into(),
        })?;
        let dex = match text("dex") {
            Some(s) => Some(s.trim_start_matches('#').parse::<u32>().map_err(|e| Error::Parse {
                row,
                column: "dex".into(),
                message: e.to_string(),
            })?),
            None => None,
        };
        let sort_key = text("sort_key");
        let mut values = Vec::with_capacity(cfg.sections.len());
        for sc in &cfg.sections {
            let col = sc.column();
            match sc.kind {
                SectionKind::Categorical => {
                    let labels: Vec<String> = match rec.get(col) {
                        Some(Cell::List(l)) => l.iter().map(|s| s.trim().to_string()).collect(),
                        Some(Cell::Text(s)) => s.split('|').map(|s| s.trim().to_string()).collect(),
                        _ => Vec::new(),
                    };
                    let mut seen = HashSet::new();
                    let labels: Vec<String> = labels
                        .into_iter()
                        .filter(|l| !l.is_empty() && seen.insert(l.clone()))
                        .collect();
                    if labels.is_empty() {
                        return Err(Error::Parse {
                            row,
                            column: col.into(),
                            message: "categorical value list is empty".into(),
                        });
                    }
                    values.push(RawValue::Labels(labels));
                }
                SectionKind::Numeric => {
                    let s = text(col).ok_or_else(|| Error::Parse {
                        row,
                        column: col.into(),
                        message: "missing numeric value".into(),
                    })?;
                    let n = s.parse::<i64>().map_err(|e| Error::Parse {
                        row,
                        column: col.into(),
                        message: format!("{s:?}: {e}"),
                    })?;
                    values.push(RawValue::Number(n));
                }
            }
        }
        raws.push(Raw {
            name,
            dex,
            sort_key,
            values,
        });
    }

    let mut sections = Vec::with_capacity(cfg.sections.len());
    for (s, sc) in cfg.sections.iter().enumerate() {
        let domain = match sc.kind {
            SectionKind::Categorical => {
                let values = match &sc.values {
                    Some(v) => v.clone(),
                    None => {
                        let set: BTreeSet<&str> = raws
                            .iter()
                            .flat_map(|r| match &r.values[s] {
                                RawValue::Labels(l) => l.iter().map(String::as_str).collect(),
                                RawValue::Number(_) => Vec::new(),
                            })
                            .collect();
                        set.into_iter().map(str::to_string).collect()
                    }
                };
                SectionDomain::Categorical {
                    values,
                    max_values: sc.max_values,
                }
            }
            SectionKind::Numeric => {
                let nums = raws.iter().filter_map(|r| match r.values[s] {
                    RawValue::Number(n) => Some(n),
                    RawValue::Labels(_) => None,
                });
                let lo = sc.min.or_else(|| nums.clone().min()).unwrap_or(0);
                let hi = sc.max.or_else(|| nums.max()).unwrap_or(0);
                SectionDomain::Numeric { min: lo, max: hi }
            }
        };
        sections.push(Section {
            name: sc.name.clone(),
            column: sc.column.clone(),
            domain,
        });
    }
    let schema = AttributeSchema::new(sections)?;

    let mut items = Vec::with_capacity(raws.len());
    for (i, raw) in raws.into_iter().enumerate() {
        let mut values = Vec::with_capacity(schema.len());
        for (s, v) in raw.values.into_iter().enumerate() {
            values.push(match v {
                RawValue::Labels(l) => AttrValue::Labels(
                    l.iter()
                        .map(|label| {
                            schema.label_id(s, label).ok_or_else(|| Error::OutOfDomain {
                                section: schema.sections()[s].name.clone(),
                                value: label.clone(),
                            })
                        })
                        .collect::<Result<_>>()?,
                ),
                RawValue::Number(n) => AttrValue::Number(n),
            });
        }
        items.push(Item {
            id: ItemId(i as u32 + 1),
            name: raw.name,
            dex: raw.dex,
            sort_key: raw.sort_key,
            values,
        });
    }
    Universe::new(schema, items)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    MissingSection,
    KindMismatch,
    OutOfDomain,
    EmptyLabelSet,
    TooManyLabels,
    DuplicateLabel,
    DuplicateName,
    DuplicateProfile,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("rule serializes");
        write!(f, "{}", s.as_str().unwrap_or_default())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: Rule,
    pub item_ids: Vec<ItemId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub section: Option<String>,
    pub detail: String,
}

/// Reports every broken universe invariant. Duplicate profiles are reported
/// once per group of identical items, naming all of them.
pub fn validate_universe(u: &Universe) -> Vec<Violation> {
    let schema = u.schema();
    let mut out = Vec::new();
    for item in u.items() {
        if item.values.len() != schema.len() {
            out.push(Violation {
                rule: Rule::MissingSection,
                item_ids: vec![item.id],
                section: None,
                detail: format!("{} values for {} sections", item.values.len(), schema.len()),
            });
            continue;
        }
        for (s, section) in schema.sections().iter().enumerate() {
            let v = |rule, detail: String| Violation {
                rule,
                item_ids: vec![item.id],
                section: Some(section.name.clone()),
                detail,
            };
            match (&section.domain, &item.values[s]) {
                (SectionDomain::Categorical { values, max_values }, AttrValue::Labels(l)) => {
                    if l.is_empty() {
                        out.push(v(Rule::EmptyLabelSet, String::new()));
                    }
                    if let Some(m) = max_values {
                        if l.len() > *m {
                            out.push(v(Rule::TooManyLabels, format!("{} > {}", l.len(), m)));
                        }
                    }
                    let distinct: HashSet<_> = l.iter().collect();
                    if distinct.len() != l.len() {
                        out.push(v(Rule::DuplicateLabel, String::new()));
                    }
                    for &id in l {
                        if id as usize >= values.len() {
                            out.push(v(Rule::OutOfDomain, format!("label index {id}")));
                        }
                    }
                }
                (SectionDomain::Numeric { min, max }, AttrValue::Number(n)) => {
                    if n < min || n > max {
                        out.push(v(Rule::OutOfDomain, n.to_string()));
                    }
                }
                _ => out.push(v(Rule::KindMismatch, String::new())),
            }
        }
    }

    let mut names: HashMap<&str, Vec<ItemId>> = HashMap::new();
    for item in u.items() {
        names.entry(&item.name).or_default().push(item.id);
    }
    let mut dup_names: Vec<_> = names.into_iter().filter(|(_, ids)| ids.len() > 1).collect();
    dup_names.sort_by_key(|(_, ids)| ids[0]);
    for (name, ids) in dup_names {
        out.push(Violation {
            rule: Rule::DuplicateName,
            item_ids: ids,
            section: None,
            detail: name.to_string(),
        });
    }

    let mut profiles: HashMap<Vec<ProfileAtom>, Vec<ItemId>> = HashMap::new();
    for item in u.items() {
        profiles.entry(item.profile()).or_default().push(item.id);
    }
    let mut dup_profiles: Vec<_> = profiles.into_values().filter(|ids| ids.len() > 1).collect();
    dup_profiles.sort_by_key(|ids| ids[0]);
    for ids in dup_profiles {
        out.push(Violation {
            rule: Rule::DuplicateProfile,
            detail: ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(", "),
            item_ids: ids,
            section: None,
        });
    }
    out
}

/// Shape of a generated universe.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_items: usize,
    pub sections: Vec<SyntheticSection>,
    #[serde(default)]
    pub names: NameStyle,
}

/// How generated items and labels are named.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NameStyle {
    /// `Item_k` and `{section} {m}`.
    #[default]
    Indexed,
    /// Made-up capitalized words, distinct across items and labels, so the
    /// universe reads like a real catalogue.
    Pronounceable,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSection {
    pub name: String,
    #[serde(flatten)]
    pub kind: SyntheticKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticKind {
    Categorical { domain_size: usize, max_values: usize },
    Numeric { min: i64, max: i64 },
}

impl SyntheticSpec {
    /// Same four sections as the canonical schema, with domain sizes in the
    /// range of the real catalogue.
    pub fn canonical(n_items: usize) -> Self {
        SyntheticSpec {
            n_items,
            sections: vec![
                SyntheticSection {
                    name: "Type".into(),
                    kind: SyntheticKind::Categorical {
                        domain_size: 18,
                        max_values: 2,
                    },
                },
                SyntheticSection {
                    name: "Abilities".into(),
                    kind: SyntheticKind::Categorical {
                        domain_size: 120,
                        max_values: 3,
                    },
                },
                SyntheticSection {
                    name: "Base Stats".into(),
                    kind: SyntheticKind::Numeric { min: 180, max: 720 },
                },
                SyntheticSection {
                    name: "Generation".into(),
                    kind: SyntheticKind::Numeric { min: 1, max: 9 },
                },
            ],
            names: NameStyle::Indexed,
        }
    }

    pub fn with_names(mut self, names: NameStyle) -> Self {
        self.names = names;
        self
    }

    /// Number of distinct attribute profiles this spec can produce.
    pub fn capacity(&self) -> u128 {
        self.sections.iter().fold(1u128, |acc, s| {
            let n = match &s.kind {
                SyntheticKind::Categorical {
                    domain_size,
                    max_values,
                } => (1..=(*max_values).min(*domain_size))
                    .map(|k| binomial(*domain_size as u128, k as u128))
                    .fold(0u128, u128::saturating_add),
                SyntheticKind::Numeric { min, max } => {
                    if max < min {
                        0
                    } else {
                        (*max as i128 - *min as i128 + 1) as u128
                    }
                }
            };
            acc.saturating_mul(n)
        })
    }
}

fn binomial(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r.saturating_mul(n - i) / (i + 1);
    }
    r
}

/// Generates a universe of `Item_k` items with uniformly drawn, pairwise
/// distinct profiles. Deterministic for a fixed `(spec, seed)`.
pub fn generate_synthetic_universe(spec: &SyntheticSpec, seed: u64) -> Result<Universe> {
    let possible = spec.capacity();
    if possible < spec.n_items as u128 {
        return Err(Error::InfeasibleSpec {
            possible,
            requested: spec.n_items,
        });
    }
    let mut words = WordSource::new(seed);
    let mut sections = Vec::with_capacity(spec.sections.len());
    for s in &spec.sections {
        let domain = match &s.kind {
            SyntheticKind::Categorical {
                domain_size,
                max_values,
            } => {
                if *domain_size == 0 || *max_values == 0 {
                    return Err(Error::Schema(format!("section {:?} has an empty domain", s.name)));
                }
                SectionDomain::Categorical {
                    values: (1..=*domain_size)
                        .map(|m| match spec.names {
                            NameStyle::Indexed => format!("{} {}", s.name, m),
                            NameStyle::Pronounceable => words.next(2),
                        })
                        .collect(),
                    max_values: Some(*max_values),
                }
            }
            SyntheticKind::Numeric { min, max } => SectionDomain::Numeric {
                min: *min,
                max: *max,
            },
        };
        sections.push(Section {
            name: s.name.clone(),
            column: None,
            domain,
        });
    }
    let schema = AttributeSchema::new(sections)?;

    let mut rng = rng::stream(seed, streams::SYNTHETIC);
    let mut seen: HashSet<Vec<ProfileAtom>> = HashSet::with_capacity(spec.n_items);
    let mut items = Vec::with_capacity(spec.n_items);
    while items.len() < spec.n_items {
        let values: Vec<AttrValue> = spec
            .sections
            .iter()
            .map(|s| match &s.kind {
                SyntheticKind::Categorical {
                    domain_size,
                    max_values,
                } => {
                    let k = rng.gen_range(1..=(*max_values).min(*domain_size));
                    AttrValue::Labels(
                        sample(&mut rng, *domain_size, k)
                            .into_iter()
                            .map(|i| i as u32)
                            .collect(),
                    )
                }
                SyntheticKind::Numeric { min, max } => AttrValue::Number(rng.gen_range(*min..=*max)),
            })
            .collect();
        let k = items.len() as u32 + 1;
        let item = Item {
            id: ItemId(k),
            name: String::new(),
            dex: Some(k),
            sort_key: None,
            values,
        };
        if seen.insert(item.profile()) {
            items.push(item);
        }
    }
    for item in &mut items {
        item.name = match spec.names {
            NameStyle::Indexed => format!("Item_{}", item.id.0),
            NameStyle::Pronounceable => words.next(3),
        };
    }
    Universe::new(schema, items)
}

/// Unique made-up words from consonant-vowel syllables.
struct WordSource {
    rng: rng::Stream,
    used: HashSet<String>,
}

impl WordSource {
    const ONSETS: [&'static str; 20] = [
        "b", "br", "c", "d", "dr", "f", "g", "gl", "k", "l", "m", "n", "p", "r", "s", "sh", "t", "v", "z", "th",
    ];
    const VOWELS: [&'static str; 8] = ["a", "e", "i", "o", "u", "ai", "ee", "oo"];
    const CODAS: [&'static str; 8] = ["", "", "n", "r", "l", "x", "sh", "m"];

    fn new(seed: u64) -> Self {
        WordSource {
            rng: rng::stream(rng::derive_seed(seed, &[0x6e61_6d65]), streams::SYNTHETIC),
            used: HashSet::new(),
        }
    }

    /// A fresh word of `syllables` syllables, growing by one syllable when a
    /// length runs dry.
    fn next(&mut self, syllables: usize) -> String {
        let mut n = syllables;
        let mut attempts = 0;
        loop {
            let mut w = String::new();
            for i in 0..n {
                w.push_str(Self::ONSETS[self.rng.gen_range(0..Self::ONSETS.len())]);
                w.push_str(Self::VOWELS[self.rng.gen_range(0..Self::VOWELS.len())]);
                if i + 1 == n {
                    w.push_str(Self::CODAS[self.rng.gen_range(0..Self::CODAS.len())]);
                }
            }
            let mut c = w.chars();
            let w: String = c.next().map(|f| f.to_ascii_uppercase()).into_iter().chain(c).collect();
            if self.used.insert(w.clone()) {
                return w;
            }
            attempts += 1;
            if attempts % 64 == 0 {
                n += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str, ext: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(ext).tempfile().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn cfg() -> SchemaConfig {
        AttributeSchema::canonical_config()
    }

    const U3: &str = "name,dex,type_list,ability_list,base_stat_total,generation\n\
        A,1,Grass,Overgrow,300,1\n\
        B,2,Fire,Blaze,250,1\n\
        C,3,Grass|Poison,Chlorophyll,410,1\n";

    #[test]
    fn loads_three_rows_in_file_order() {
        let f = write_tmp(U3, ".csv");
        let u = load_universe(f.path(), &cfg()).unwrap();
        let names: Vec<_> = u.items().iter().map(|i| i.name.as_str()).collect();
        assert_eq!(names, ["A", "B", "C"]);
        assert_eq!(u.by_name("C").unwrap().values[2], AttrValue::Number(410));
        let c = u.by_name("C").unwrap();
        assert_eq!(u.labels_of(c, 0).collect::<Vec<_>>(), ["Grass", "Poison"]);
        assert!(u.validate().is_empty());
    }

    #[test]
    fn json_array_form_is_accepted() {
        let json = r#"[
            {"name": "A", "dex": 1, "type_list": ["Grass"], "ability_list": "Overgrow", "base_stat_total": 300, "generation": 1},
            {"name": "B", "dex": "2", "type_list": "Fire", "ability_list": ["Blaze"], "base_stat_total": "250", "generation": 1}
        ]"#;
        let f = write_tmp(json, ".json");
        let u = load_universe(f.path(), &cfg()).unwrap();
        assert_eq!(u.len(), 2);
        assert_eq!(u.by_name("B").unwrap().dex, Some(2));
    }

    #[test]
    fn duplicate_name_is_rejected() {
        let f = write_tmp(
            "name,dex,type_list,ability_list,base_stat_total,generation\n\
             Abra,63,Psychic,Synchronize,310,1\n\
             Abra,64,Psychic,Inner Focus,400,1\n",
            ".csv",
        );
        assert!(matches!(load_universe(f.path(), &cfg()), Err(Error::DuplicateName(n)) if n == "Abra"));
    }

    #[test]
    fn duplicate_profile_is_rejected() {
        let f = write_tmp(
            "name,dex,type_list,ability_list,base_stat_total,generation\n\
             A,1,Grass|Poison,Overgrow,300,1\n\
             B,2,Poison|Grass,Overgrow,300,1\n",
            ".csv",
        );
        match load_universe(f.path(), &cfg()) {
            Err(Error::DuplicateProfile { first, second }) => {
                assert_eq!((first, second), (ItemId(1), ItemId(2)))
            }
            other => panic!("expected duplicate profile, got {other:?}"),
        }
    }

    #[test]
    fn parse_errors_report_row_and_column() {
        let f = write_tmp(
            "name,dex,type_list,ability_list,base_stat_total,generation\n\
             A,1,Grass,Overgrow,300,1\n\
             B,2,Fire,Blaze,lots,1\n",
            ".csv",
        );
        match load_universe(f.path(), &cfg()) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "base_stat_total");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn value_outside_configured_domain_is_rejected() {
        let mut c = cfg();
        c.sections[0].values = Some(vec!["Grass".into(), "Fire".into()]);
        let f = write_tmp(U3, ".csv");
        assert!(matches!(
            load_universe(f.path(), &c),
            Err(Error::OutOfDomain { value, .. }) if value == "Poison"
        ));
    }

    #[test]
    fn too_many_types_is_a_schema_violation() {
        let f = write_tmp(
            "name,dex,type_list,ability_list,base_stat_total,generation\n\
             A,1,Grass|Poison|Fire,Overgrow,300,1\n",
            ".csv",
        );
        assert!(load_universe(f.path(), &cfg()).is_err());
    }

    #[test]
    fn save_then_load_is_identity() {
        let f = write_tmp(U3, ".csv");
        let u = load_universe(f.path(), &cfg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("items.csv");
        u.save_items_csv(&csv_path).unwrap();
        assert_eq!(load_universe(&csv_path, &cfg()).unwrap(), u);
        let json_path = dir.path().join("universe.json");
        u.save_json(&json_path).unwrap();
        assert_eq!(Universe::load_json(&json_path).unwrap(), u);
    }

    #[test]
    fn synthetic_singleton() {
        let u = generate_synthetic_universe(&SyntheticSpec::canonical(1), 7).unwrap();
        assert_eq!(u.len(), 1);
        assert_eq!(u.items()[0].name, "Item_1");
    }

    #[test]
    fn synthetic_is_deterministic() {
        let spec = SyntheticSpec::canonical(50);
        let a = generate_synthetic_universe(&spec, 3).unwrap();
        let b = generate_synthetic_universe(&spec, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = generate_synthetic_universe(&spec, 4).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn synthetic_infeasible_spec() {
        let spec = SyntheticSpec {
            n_items: 7,
            sections: vec![
                SyntheticSection {
                    name: "Colour".into(),
                    kind: SyntheticKind::Categorical {
                        domain_size: 2,
                        max_values: 2,
                    },
                },
                SyntheticSection {
                    name: "Size".into(),
                    kind: SyntheticKind::Numeric { min: 1, max: 2 },
                },
            ],
            names: NameStyle::Indexed,
        };
        assert_eq!(spec.capacity(), 6);
        assert!(matches!(
            generate_synthetic_universe(&spec, 1),
            Err(Error::InfeasibleSpec { possible: 6, requested: 7 })
        ));
        let exact = SyntheticSpec { n_items: 6, ..spec };
        assert_eq!(generate_synthetic_universe(&exact, 1).unwrap().len(), 6);
    }

    #[test]
    fn pronounceable_names_are_unique_words() {
        let spec = SyntheticSpec::canonical(500).with_names(NameStyle::Pronounceable);
        let u = generate_synthetic_universe(&spec, 3).unwrap();
        let mut vocab: HashSet<String> = u.items().iter().map(|i| i.name.clone()).collect();
        assert_eq!(vocab.len(), 500);
        for s in u.schema().sections() {
            for l in s.labels() {
                assert!(vocab.insert(l.clone()), "{l} reused");
                assert!(l.chars().all(|c| c.is_ascii_alphabetic()));
            }
        }
        assert!(u.validate().is_empty());
        let again = generate_synthetic_universe(&spec, 3).unwrap();
        assert_eq!(u.fingerprint(), again.fingerprint());
    }

    #[test]
    fn synthetic_hundred_items_all_distinct_by_pairwise_scan() {
        let spec = SyntheticSpec::canonical(100);
        let u = generate_synthetic_universe(&spec, 42).unwrap();
        assert_eq!(u.len(), 100);
        let canon = |i: &Item| -> Vec<String> {
            (0..u.schema().len())
                .map(|s| match &i.values[s] {
                    AttrValue::Labels(_) => {
                        let mut l: Vec<_> = u.labels_of(i, s).collect();
                        l.sort();
                        l.join("|")
                    }
                    AttrValue::Number(n) => n.to_string(),
                })
                .collect()
        };
        for a in 0..u.len() {
            for b in a + 1..u.len() {
                assert_ne!(canon(&u.items()[a]), canon(&u.items()[b]));
            }
        }
    }

    #[test]
    fn injected_duplicate_names_both_ids() {
        let f = write_tmp(U3, ".csv");
        let u = load_universe(f.path(), &cfg()).unwrap();
        let mut items = u.items().to_vec();
        let mut dup = items[0].clone();
        dup.name = "D".into();
        items.push(dup);
        let bad = Universe::new_unchecked(u.schema().clone(), items);
        let report = bad.validate();
        assert_eq!(report.len(), 1);
        assert_eq!(report[0].rule, Rule::DuplicateProfile);
        assert_eq!(report[0].item_ids, vec![ItemId(1), ItemId(4)]);
    }

    #[test]
    fn canonical_schema_sections() {
        let names: Vec<_> = cfg().sections.iter().map(|s| s.name.clone()).collect();
        assert_eq!(names, ["Type", "Abilities", "Base Stats", "Generation"]);
    }
}
