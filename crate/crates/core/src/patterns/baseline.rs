//! Hand-coded equivalents of the Datalog-defined order router, order
//! translator and customer/nation join router.
//!
//! Records are deserialized straight into structs and decisions use direct
//! field access with short-circuiting conjunctions. Nothing here touches the
//! Datalog engine, which makes these usable as an independent oracle.

use std::fmt;

use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::{Deserialize, Serialize};

use super::PatternError;

pub const URGENT: &str = "1-URGENT";
pub const PRICE_THRESHOLD: f64 = 100_000.00;
pub const BALANCE_THRESHOLD: f64 = 3000.0;
pub const EUROPE: i64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NativeOrder {
    pub id: String,
    pub objecttype: String,
    #[serde(rename = "ORDERKEY")]
    pub order_key: i64,
    #[serde(rename = "CUSTKEY")]
    pub cust_key: i64,
    #[serde(rename = "OTOTALPRICE")]
    pub total_price: f64,
    #[serde(rename = "OPRIORITY")]
    pub priority: String,
    #[serde(rename = "SHIPPRIORITY")]
    pub ship_priority: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NativeCustomer {
    pub id: String,
    pub objecttype: String,
    #[serde(rename = "CUSTKEY")]
    pub cust_key: i64,
    #[serde(rename = "CNAME")]
    pub name: String,
    #[serde(rename = "CNATIONKEY")]
    pub nation_key: i64,
    #[serde(rename = "CPHONE")]
    pub phone: String,
    #[serde(rename = "ACCTBAL")]
    pub acct_bal: f64,
    #[serde(rename = "CMKTSEGMENT")]
    pub segment: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NativeNation {
    pub id: String,
    pub objecttype: String,
    #[serde(rename = "NATIONKEY")]
    pub nation_key: i64,
    #[serde(rename = "NNAME")]
    pub name: String,
    #[serde(rename = "NREGIONKEY")]
    pub region_key: i64,
    #[serde(rename = "NCOMMENT")]
    pub comment: String,
}

/// One customer with the nation table it travels with.
#[derive(Clone, Debug, PartialEq)]
pub struct NativeCustomerNation {
    pub customer: NativeCustomer,
    pub nations: Vec<NativeNation>,
}

impl<'de> Deserialize<'de> for NativeCustomerNation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = NativeCustomerNation;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an array of one customer followed by nations")
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Self::Value, A::Error> {
                let customer = seq
                    .next_element()?
                    .ok_or_else(|| de::Error::invalid_length(0, &self))?;
                let mut nations = Vec::with_capacity(25);
                while let Some(n) = seq.next_element()? {
                    nations.push(n);
                }
                Ok(NativeCustomerNation { customer, nations })
            }
        }
        d.deserialize_seq(V)
    }
}

/// Output of the native translator.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvOrder {
    pub id: String,
    pub objecttype: String,
    #[serde(rename = "ORDERKEY")]
    pub order_key: i64,
    #[serde(rename = "CUSTKEY")]
    pub cust_key: i64,
    #[serde(rename = "SHIPPRIORITY")]
    pub ship_priority: i64,
}

/// A wire record in native form, or the translator's output.
#[derive(Clone, Debug, PartialEq)]
pub enum NativeRecord {
    Order(NativeOrder),
    CustomerNation(NativeCustomerNation),
    Converted(ConvOrder),
}

impl NativeRecord {
    /// Objects are orders, arrays are customer/nation bundles.
    pub fn parse(bytes: &[u8]) -> Result<Self, PatternError> {
        let bad = |e: serde_json::Error| PatternError::MissingField(e.to_string());
        match bytes.iter().find(|b| !b.is_ascii_whitespace()) {
            Some(b'[') => serde_json::from_slice(bytes).map(NativeRecord::CustomerNation).map_err(bad),
            _ => serde_json::from_slice(bytes).map(NativeRecord::Order).map_err(bad),
        }
    }

    pub fn id(&self) -> &str {
        match self {
            NativeRecord::Order(o) => &o.id,
            NativeRecord::CustomerNation(c) => &c.customer.id,
            NativeRecord::Converted(c) => &c.id,
        }
    }

    /// The record as `(relation, fields)` rows in schema field order, the
    /// shape its table form would have. Context records carry the record id.
    pub fn rows(&self) -> Vec<(&'static str, Vec<serde_json::Value>)> {
        use serde_json::json;
        match self {
            NativeRecord::Order(o) => vec![(
                "order",
                vec![
                    json!(o.id),
                    json!(o.objecttype),
                    json!(o.order_key),
                    json!(o.cust_key),
                    json!(o.total_price),
                    json!(o.priority),
                    json!(o.ship_priority),
                ],
            )],
            NativeRecord::Converted(c) => vec![(
                "conv-order",
                vec![
                    json!(c.id),
                    json!(c.objecttype),
                    json!(c.order_key),
                    json!(c.cust_key),
                    json!(c.ship_priority),
                ],
            )],
            NativeRecord::CustomerNation(cn) => {
                let c = &cn.customer;
                let mut rows = vec![(
                    "customer",
                    vec![
                        json!(c.id),
                        json!(c.objecttype),
                        json!(c.cust_key),
                        json!(c.name),
                        json!(c.nation_key),
                        json!(c.phone),
                        json!(c.acct_bal),
                        json!(c.segment),
                    ],
                )];
                rows.extend(cn.nations.iter().map(|n| {
                    (
                        "nation",
                        vec![
                            json!(c.id),
                            json!(n.objecttype),
                            json!(n.nation_key),
                            json!(n.name),
                            json!(n.region_key),
                            json!(n.comment),
                        ],
                    )
                }));
                rows
            }
        }
    }
}

/// Urgent and costly orders are routed.
pub fn baseline_router(order: &NativeOrder) -> bool {
    order.priority == URGENT && order.total_price > PRICE_THRESHOLD
}

/// Keeps the key fields and the shipment priority.
pub fn baseline_translator(order: &NativeOrder) -> ConvOrder {
    ConvOrder {
        id: order.id.clone(),
        objecttype: order.objecttype.clone(),
        order_key: order.order_key,
        cust_key: order.cust_key,
        ship_priority: order.ship_priority,
    }
}

/// Customers above the balance threshold whose nation lies in Europe.
pub fn baseline_join_router(cn: &NativeCustomerNation) -> bool {
    cn.customer.acct_bal > BALANCE_THRESHOLD
        && cn
            .nations
            .iter()
            .any(|n| n.nation_key == cn.customer.nation_key && n.region_key == EUROPE)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn order(price: f64, prio: &str) -> NativeOrder {
        NativeOrder {
            id: "m1".into(),
            objecttype: "order".into(),
            order_key: 7,
            cust_key: 13,
            total_price: price,
            priority: prio.into(),
            ship_priority: 0,
        }
    }

    #[test]
    fn router_conjunction() {
        assert!(baseline_router(&order(150000.0, "1-URGENT")));
        assert!(!baseline_router(&order(150000.0, "3-MEDIUM")));
        assert!(!baseline_router(&order(100000.0, "1-URGENT")));
    }

    #[test]
    fn translator_keeps_keys() {
        let c = baseline_translator(&order(1.0, "x"));
        assert_eq!((c.order_key, c.cust_key, c.ship_priority), (7, 13, 0));
    }

    fn customer(bal: f64, nation: i64) -> NativeCustomerNation {
        NativeCustomerNation {
            customer: NativeCustomer {
                id: "c".into(),
                objecttype: "customer".into(),
                cust_key: 1,
                name: "a".into(),
                nation_key: nation,
                phone: "p".into(),
                acct_bal: bal,
                segment: "s".into(),
            },
            nations: (0..25)
                .map(|k| NativeNation {
                    id: format!("n{k}"),
                    objecttype: "nation".into(),
                    nation_key: k,
                    name: "N".into(),
                    region_key: if k == 7 { 3 } else { k % 3 },
                    comment: String::new(),
                })
                .collect(),
        }
    }

    #[test]
    fn join_router() {
        assert!(baseline_join_router(&customer(5000.0, 7)));
        assert!(!baseline_join_router(&customer(1000.0, 7)));
        assert!(!baseline_join_router(&customer(5000.0, 1)));
    }

    #[test]
    fn parses_both_shapes() {
        let o = br#"{"id":"m1","objecttype":"order","ORDERKEY":7,"CUSTKEY":13,"OTOTALPRICE":1.5,"OPRIORITY":"x","SHIPPRIORITY":0,"padding":"zzz"}"#;
        assert_eq!(NativeRecord::parse(o).unwrap().id(), "m1");
        let cn = br#"[{"id":"c1","objecttype":"customer","CUSTKEY":1,"CNAME":"a","CNATIONKEY":7,"CPHONE":"p","ACCTBAL":1.0,"CMKTSEGMENT":"s"},{"id":"n","objecttype":"nation","NATIONKEY":7,"NNAME":"G","NREGIONKEY":3,"NCOMMENT":""}]"#;
        match NativeRecord::parse(cn).unwrap() {
            NativeRecord::CustomerNation(c) => assert_eq!(c.nations.len(), 1),
            other => panic!("{other:?}"),
        }
        assert!(NativeRecord::parse(b"{\"id\":\"x\"}").is_err());
    }
}
