use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::BufReader;
use std::sync::Arc;

use proptest::prelude::*;
use serde_json::{json, Value};
use tipflow::cdm::{
    bulk_assemble, bulk_split, message_to_record, order_schema, record_to_message, stream_parse, Message, Record,
    SchemaRegistry, WireFormat,
};
use tipflow::datagen::{write_records, GenKind, GenSpec, GeneratedReader};
use tipflow::datalog::Database;
use tipflow::patterns::{
    content_based_router, splitter, Aggregator, AggregatorConfig, ChannelTable, Router, RoutingCondition, Translator,
};
use tipflow::tuple;

const PRIORITIES: [&str; 5] = ["1-URGENT", "2-HIGH", "3-MEDIUM", "4-NOT SPECIFIED", "5-LOW"];

const URGENT: &str = "cbr-order(id,-,p,-) :- order(id,t,-,-,p,r,-), =(r,\"1-URGENT\"), >(p,100000.00).";

#[derive(Clone, Debug)]
struct Order {
    cust: i64,
    cents: i64,
    priority: usize,
    ship: i64,
}

fn order_strategy() -> impl Strategy<Value = Order> {
    (1i64..1000, 100_000i64..50_000_000, 0..PRIORITIES.len(), 0i64..3).prop_map(|(cust, cents, priority, ship)| {
        Order {
            cust,
            cents,
            priority,
            ship,
        }
    })
}

fn record(i: usize, o: &Order) -> Record {
    let Value::Object(map) = json!({
        "id": format!("o{i}"),
        "objecttype": "order",
        "ORDERKEY": i as i64 + 1,
        "CUSTKEY": o.cust,
        "OTOTALPRICE": o.cents as f64 / 100.0,
        "OPRIORITY": PRIORITIES[o.priority],
        "SHIPPRIORITY": o.ship,
    }) else {
        unreachable!()
    };
    map
}

fn messages(orders: &[Order]) -> Vec<Message> {
    let schema = order_schema();
    orders
        .iter()
        .enumerate()
        .map(|(i, o)| record_to_message(&record(i, o), &schema).unwrap())
        .collect()
}

fn cbr_router() -> Router {
    let urgent = RoutingCondition::parse(URGENT, "cbr-order").unwrap();
    Router::new(vec![(urgent, "urgent".into())], Some("default".into())).unwrap()
}

fn outcomes(router: &Router, msgs: &[Message], k: usize) -> Vec<(Arc<str>, String)> {
    let mut out = Vec::new();
    for bulk in bulk_assemble(msgs.to_vec(), k).unwrap() {
        for (channel, part) in router.route_bulk(bulk.message()).unwrap() {
            out.extend(part.record_ids().into_iter().map(|id| (id, channel.clone())));
        }
    }
    out.sort();
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn record_message_round_trip(o in order_strategy(), i in 0usize..10_000) {
        let schema = order_schema();
        let rec = record(i, &o);
        let msg = record_to_message(&rec, &schema).unwrap();
        prop_assert_eq!(message_to_record(&msg, &schema).unwrap(), rec);
    }

    #[test]
    fn bulk_split_undoes_assemble(orders in prop::collection::vec(order_strategy(), 0..40), k in 1usize..12) {
        let msgs = messages(&orders);
        let bulks = bulk_assemble(msgs.clone(), k).unwrap();
        prop_assert!(bulks.iter().all(|b| b.bulk_size() <= k));
        let back: Vec<Message> = bulks.iter().flat_map(bulk_split).collect();
        prop_assert_eq!(back, msgs);
    }

    #[test]
    fn router_picks_first_match_and_keeps_body(o in order_strategy()) {
        let msg = messages(&[o]).remove(0);
        let always = RoutingCondition::parse("any(id) :- order(id,t,k,c,p,r,s).", "any").unwrap();
        let urgent = RoutingCondition::parse(URGENT, "cbr-order").unwrap();
        let table = ChannelTable::new(vec![(0, "first".into()), (1, "second".into())], Some("default".into())).unwrap();
        let (channel, out) = content_based_router(&msg, &[urgent.clone(), always.clone()], &table).unwrap();
        let expected = if urgent.holds(&msg).unwrap() { "first" } else { "second" };
        prop_assert_eq!(channel.as_str(), expected);
        prop_assert_eq!(&out.body, &msg.body);
        let (channel, out) = content_based_router(&msg, &[always, urgent], &table).unwrap();
        prop_assert_eq!(channel.as_str(), "first");
        prop_assert_eq!(out, msg);
    }

    #[test]
    fn bulk_routing_is_consistent(orders in prop::collection::vec(order_strategy(), 1..60), k in 2usize..20) {
        let msgs = messages(&orders);
        let router = cbr_router();
        let single = outcomes(&router, &msgs, 1);
        prop_assert_eq!(single.len(), msgs.len());
        prop_assert_eq!(outcomes(&router, &msgs, k), single);
    }

    #[test]
    fn content_filter_output_is_a_subset(orders in prop::collection::vec(order_strategy(), 1..20), floor in 1000i64..500_000) {
        let msgs = messages(&orders);
        let bulk = bulk_assemble(msgs, orders.len()).unwrap().remove(0).into_message();
        let keep = Translator::parse(
            &format!("keep(id,t,k,c,p,r,s) :- order(id,t,k,c,p,r,s), >(p,{floor})."),
            "keep",
        )
        .unwrap()
        .with_output("order");
        let out = keep.apply(&bulk).unwrap();
        let before: BTreeSet<_> = bulk.body.relation("order").unwrap().iter().map(|t| t.to_vec()).collect();
        if let Some(rel) = out.body.relation("order") {
            for t in rel.iter() {
                prop_assert!(before.contains(t));
            }
        }
    }

    #[test]
    fn split_then_aggregate_restores_the_body(orders in prop::collection::vec(order_strategy(), 1..30)) {
        let n = orders.len();
        let bulk = bulk_assemble(messages(&orders), n).unwrap().remove(0).into_message();
        let conds: Vec<RoutingCondition> = bulk
            .record_ids()
            .iter()
            .map(|id| {
                RoutingCondition::parse(&format!("part(id,t,a,b,c,d,e) :- order(id,t,a,b,c,d,e), =(id, \"{id}\")."), "part")
                    .unwrap()
                    .with_output("order")
            })
            .collect();
        let parts = splitter(&bulk, &conds).unwrap();
        prop_assert_eq!(parts.len(), n);
        let agg = Aggregator::new(AggregatorConfig {
            correlation: RoutingCondition::parse("corr(p) :- split(p,i,n).", "corr").unwrap(),
            completion: Some(RoutingCondition::parse(&format!("done(n) :- meta_count(n), =(n, {n})."), "done").unwrap()),
            timeout: None,
            max_count: None,
        })
        .unwrap();
        let done: Vec<Message> = parts.iter().filter_map(|p| agg.offer(p).unwrap()).collect();
        prop_assert_eq!(done.len(), 1);
        prop_assert_eq!(&done[0].body, &bulk.body);
    }

    #[test]
    fn generation_is_deterministic_with_unique_keys(seed in any::<u64>(), count in 0u64..200) {
        let spec = GenSpec::new(GenKind::Orders, count, seed);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        write_records(&spec, &mut a).unwrap();
        write_records(&spec, &mut b).unwrap();
        prop_assert_eq!(&a, &b);
        let lines: Vec<Value> = a
            .split(|c| *c == b'\n')
            .filter(|l| !l.is_empty())
            .map(|l| serde_json::from_slice(l).unwrap())
            .collect();
        prop_assert_eq!(lines.len() as u64, count);
        let ids: HashSet<&str> = lines.iter().map(|l| l["id"].as_str().unwrap()).collect();
        let keys: HashSet<i64> = lines.iter().map(|l| l["ORDERKEY"].as_i64().unwrap()).collect();
        prop_assert_eq!(ids.len() as u64, count);
        prop_assert_eq!(keys.len() as u64, count);
    }
}

#[test]
fn bulk_routing_matches_single_on_generated_orders() {
    let reader = BufReader::new(GeneratedReader::new(GenKind::Orders, 2000, 3));
    let msgs: Vec<Message> = stream_parse(reader, SchemaRegistry::tpch(), WireFormat::Ndjson).collect();
    let router = cbr_router();
    let single = outcomes(&router, &msgs, 1);
    let mut per_channel: BTreeMap<&str, usize> = BTreeMap::new();
    for (_, c) in &single {
        *per_channel.entry(c).or_default() += 1;
    }
    assert!(per_channel["urgent"] > 0 && per_channel["default"] > 0);
    for k in [10, 100] {
        assert_eq!(outcomes(&router, &msgs, k), single);
    }
}

#[test]
fn router_keeps_a_message_whole() {
    let mut body = Database::new();
    body.add_fact("order", tuple!["m1", "order", 1i64, 2i64, 150000.0, "1-URGENT", 0i64])
        .unwrap();
    let msg = Message::single("m1", body);
    let routed = cbr_router().route_bulk(&msg).unwrap();
    assert_eq!(routed, vec![("urgent".to_string(), msg)]);
}
