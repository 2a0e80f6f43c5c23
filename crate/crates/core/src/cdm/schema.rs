//! Positional record layouts.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;

use super::CdmError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldType {
    #[serde(alias = "str")]
    String,
    #[serde(alias = "int")]
    Integer,
    Float,
}

impl fmt::Display for FieldType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FieldType::String => "string",
            FieldType::Integer => "integer",
            FieldType::Float => "float",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Deserialize)]
pub struct Field {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: FieldType,
}

/// Maps a record type onto a relation: field `i` becomes argument `i`.
///
/// Field 0 holds the record identifier and field 1 the record type, so every
/// relation starts with `(id, type, ...)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schema {
    relation: Arc<str>,
    type_name: String,
    fields: Vec<Field>,
}

impl Schema {
    pub fn new(relation: &str, fields: Vec<Field>) -> Result<Self, CdmError> {
        Self::with_type_name(relation, relation, fields)
    }

    /// A schema whose records carry `type_name` in their type field.
    pub fn with_type_name(
        relation: &str,
        type_name: &str,
        fields: Vec<Field>,
    ) -> Result<Self, CdmError> {
        let bad = |msg: &str| CdmError::InvalidSchema {
            relation: relation.to_string(),
            message: msg.to_string(),
        };
        if fields.len() < 2 {
            return Err(bad("needs at least an identifier and a type field"));
        }
        if fields[0].ty != FieldType::String || fields[1].ty != FieldType::String {
            return Err(bad("identifier and type fields must be strings"));
        }
        for (i, f) in fields.iter().enumerate() {
            if fields[..i].iter().any(|g| g.name == f.name) {
                return Err(bad(&format!("duplicate field `{}`", f.name)));
            }
        }
        Ok(Self {
            relation: Arc::from(relation),
            type_name: type_name.to_string(),
            fields,
        })
    }

    /// Shorthand for `name:type` field lists.
    pub fn parse_fields(relation: &str, spec: &[&str]) -> Result<Self, CdmError> {
        let fields = spec
            .iter()
            .map(|s| {
                let (name, ty) = s.split_once(':').unwrap_or((s, "string"));
                let ty = match ty {
                    "string" | "str" => FieldType::String,
                    "integer" | "int" => FieldType::Integer,
                    "float" => FieldType::Float,
                    other => {
                        return Err(CdmError::InvalidSchema {
                            relation: relation.to_string(),
                            message: format!("unknown field type `{other}`"),
                        })
                    }
                };
                Ok(Field {
                    name: name.to_string(),
                    ty,
                })
            })
            .collect::<Result<_, _>>()?;
        Self::new(relation, fields)
    }

    pub fn relation(&self) -> &str {
        &self.relation
    }

    pub fn type_name(&self) -> &str {
        &self.type_name
    }

    pub fn fields(&self) -> &[Field] {
        &self.fields
    }

    pub fn arity(&self) -> usize {
        self.fields.len()
    }

    pub fn id_field(&self) -> &str {
        &self.fields[0].name
    }

    pub fn type_field(&self) -> &str {
        &self.fields[1].name
    }

    pub fn position(&self, field: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.name == field)
    }
}

/// Order records with the added message identifier and type fields.
pub fn order_schema() -> Schema {
    Schema::parse_fields(
        "order",
        &[
            "id",
            "objecttype",
            "ORDERKEY:int",
            "CUSTKEY:int",
            "OTOTALPRICE:float",
            "OPRIORITY",
            "SHIPPRIORITY:int",
        ],
    )
    .expect("valid built-in schema")
}

pub fn customer_schema() -> Schema {
    Schema::parse_fields(
        "customer",
        &[
            "id",
            "objecttype",
            "CUSTKEY:int",
            "CNAME",
            "CNATIONKEY:int",
            "CPHONE",
            "ACCTBAL:float",
            "CMKTSEGMENT",
        ],
    )
    .expect("valid built-in schema")
}

pub fn nation_schema() -> Schema {
    Schema::parse_fields(
        "nation",
        &[
            "id",
            "objecttype",
            "NATIONKEY:int",
            "NNAME",
            "NREGIONKEY:int",
            "NCOMMENT",
        ],
    )
    .expect("valid built-in schema")
}

#[derive(Deserialize)]
struct RegistryFile {
    #[serde(default, rename = "schema")]
    schemas: Vec<SchemaEntry>,
}

#[derive(Deserialize)]
struct SchemaEntry {
    relation: String,
    #[serde(rename = "type")]
    type_name: Option<String>,
    fields: Vec<Field>,
}

/// Schemas indexed by the value of their record type field.
#[derive(Clone, Debug, Default)]
pub struct SchemaRegistry {
    by_type: BTreeMap<String, Arc<Schema>>,
}

impl SchemaRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// The order, customer and nation layouts.
    pub fn tpch() -> Self {
        let mut r = Self::new();
        r.register(order_schema());
        r.register(customer_schema());
        r.register(nation_schema());
        r
    }

    /// Parses a TOML registry:
    ///
    /// ```toml
    /// [[schema]]
    /// relation = "order"
    /// fields = [{ name = "id", type = "string" }, { name = "objecttype", type = "string" }]
    /// ```
    pub fn from_toml(text: &str) -> Result<Self, CdmError> {
        let file: RegistryFile =
            toml::from_str(text).map_err(|e| CdmError::Config(e.to_string()))?;
        let mut r = Self::new();
        for e in file.schemas {
            let type_name = e.type_name.as_deref().unwrap_or(&e.relation);
            r.register(Schema::with_type_name(&e.relation, type_name, e.fields)?);
        }
        Ok(r)
    }

    pub fn load(path: &Path) -> Result<Self, CdmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CdmError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn register(&mut self, schema: Schema) {
        self.by_type
            .insert(schema.type_name.clone(), Arc::new(schema));
    }

    pub fn by_type(&self, type_name: &str) -> Option<&Arc<Schema>> {
        self.by_type.get(type_name)
    }

    pub fn by_relation(&self, relation: &str) -> Option<&Arc<Schema>> {
        self.by_type.values().find(|s| s.relation() == relation)
    }

    pub fn schemas(&self) -> impl Iterator<Item = &Schema> + '_ {
        self.by_type.values().map(|s| &**s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_registry() {
        let r = SchemaRegistry::from_toml(
            r#"
            [[schema]]
            relation = "item"
            type = "lineitem"
            fields = [
              { name = "id", type = "string" },
              { name = "kind", type = "str" },
              { name = "qty", type = "int" },
            ]
            "#,
        )
        .unwrap();
        let s = r.by_type("lineitem").unwrap();
        assert_eq!(s.relation(), "item");
        assert_eq!(s.fields()[2].ty, FieldType::Integer);
        assert!(r.by_relation("item").is_some());
    }

    #[test]
    fn identifier_must_be_string() {
        assert!(Schema::parse_fields("x", &["id:int", "t"]).is_err());
        assert!(Schema::parse_fields("x", &["id"]).is_err());
        assert!(Schema::parse_fields("x", &["id", "t", "id"]).is_err());
    }

    #[test]
    fn builtin_layouts() {
        assert_eq!(order_schema().arity(), 7);
        assert_eq!(customer_schema().position("ACCTBAL"), Some(6));
        assert_eq!(nation_schema().position("NREGIONKEY"), Some(4));
    }
}
