//! 1:n:1 compositions: scatter/gather and splitter/gather.

use std::collections::HashMap;
use std::sync::Arc;
use std::thread;
use std::time::Instant;

use super::PipelineError;
use crate::cdm::Message;
use crate::patterns::{
    aggregator_strategy, recipient_list, split_records, splitter, AggregateCollection, Enricher,
    PatternError, RoutingCondition, Translator,
};

type Stage = Arc<dyn Fn(&Message) -> Result<Message, PatternError> + Send + Sync>;

/// A fixed chain of message-to-message patterns.
#[derive(Clone, Default)]
pub struct Sequence {
    stages: Vec<Stage>,
}

impl std::fmt::Debug for Sequence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Sequence({} stages)", self.stages.len())
    }
}

impl Sequence {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn then(
        mut self,
        stage: impl Fn(&Message) -> Result<Message, PatternError> + Send + Sync + 'static,
    ) -> Self {
        self.stages.push(Arc::new(stage));
        self
    }

    pub fn translate(self, t: Translator) -> Self {
        self.then(move |m| t.apply(m))
    }

    pub fn enrich(self, e: Enricher) -> Self {
        self.then(move |m| e.apply(m))
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn apply(&self, msg: &Message) -> Result<Message, PatternError> {
        let mut cur = msg.clone();
        for s in &self.stages {
            cur = s(&cur)?;
        }
        Ok(cur)
    }
}

/// Which branches receive a copy.
pub enum Scatter<'a> {
    /// All of them.
    Multicast,
    /// The branches whose names the condition derives.
    RecipientList(&'a RoutingCondition),
}

/// How branch results are collected.
#[derive(Clone, Copy, Debug, Default)]
pub struct Gather {
    /// Successful branches needed; all selected branches when unset.
    pub quorum: Option<usize>,
    pub concurrent: bool,
}

/// How a splitter/gather divides its input.
pub enum Split<'a> {
    /// One part per condition with a non-empty result.
    Conditions(&'a [RoutingCondition]),
    /// One part per record of a bulk message.
    Records,
}

fn run_all(
    inputs: Vec<(Message, &Sequence)>,
    concurrent: bool,
) -> Vec<Result<Message, PatternError>> {
    if !concurrent || inputs.len() < 2 {
        return inputs.iter().map(|(m, s)| s.apply(m)).collect();
    }
    thread::scope(|scope| {
        let handles: Vec<_> = inputs
            .iter()
            .map(|(m, s)| scope.spawn(move || s.apply(m)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("branch panicked"))
            .collect()
    })
}

/// Aggregates the surviving results in branch order, keeping the original id
/// and header.
fn gather(
    original: &Message,
    results: Vec<Result<Message, PatternError>>,
    quorum: usize,
) -> Result<Message, PipelineError> {
    let mut ok = Vec::with_capacity(results.len());
    let mut first_error = None;
    for r in results {
        match r {
            Ok(m) => ok.push(m),
            Err(e) => {
                first_error.get_or_insert_with(|| e.to_string());
            }
        }
    }
    if ok.len() < quorum || ok.is_empty() {
        return Err(PipelineError::Quorum {
            ok: ok.len(),
            needed: quorum.max(1),
            first_error: first_error.unwrap_or_else(|| "no branch produced output".into()),
        });
    }
    let coll = AggregateCollection {
        key: Arc::from([]),
        messages: ok,
        created_at: Instant::now(),
    };
    let mut out = aggregator_strategy(&coll)?;
    out.id = original.id.clone();
    out.header = original.header.clone();
    Ok(out)
}

/// Copies `msg` to the selected branches, runs them independently and unions
/// their results.
pub fn scatter_gather(
    msg: &Message,
    branches: &[(String, Sequence)],
    scatter: Scatter<'_>,
    config: Gather,
) -> Result<Message, PipelineError> {
    if branches.is_empty() {
        return Err(PipelineError::Config("scatter/gather needs at least one branch".into()));
    }
    let selected: Vec<&Sequence> = match scatter {
        Scatter::Multicast => branches.iter().map(|(_, s)| s).collect(),
        Scatter::RecipientList(cond) => {
            let names: HashMap<String, String> =
                branches.iter().map(|(n, _)| (n.clone(), n.clone())).collect();
            let outcome = recipient_list(msg, cond, &names)?;
            branches
                .iter()
                .filter(|(n, _)| outcome.deliveries.iter().any(|(c, _)| c == n))
                .map(|(_, s)| s)
                .collect()
        }
    };
    let quorum = config.quorum.unwrap_or(selected.len());
    let inputs = selected.into_iter().map(|s| (msg.clone(), s)).collect();
    gather(msg, run_all(inputs, config.concurrent), quorum)
}

/// Splits `msg`, sends every part through the same branch and unions the
/// results.
pub fn splitter_gather(
    msg: &Message,
    split: Split<'_>,
    branch: &Sequence,
    config: Gather,
) -> Result<Message, PipelineError> {
    let parts = match split {
        Split::Conditions(conds) => splitter(msg, conds)?,
        Split::Records => split_records(msg),
    };
    if parts.is_empty() {
        let mut empty = msg.clone();
        empty.body = Default::default();
        return Ok(empty);
    }
    let quorum = config.quorum.unwrap_or(parts.len());
    let inputs = parts.into_iter().map(|p| (p, branch)).collect();
    gather(msg, run_all(inputs, config.concurrent), quorum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cdm::bulk_assemble;
    use crate::datalog::{parse_program, Database};
    use crate::tuple;

    fn order(id: &str, key: i64) -> Message {
        let mut body = Database::new();
        body.add_fact("order", tuple![id, "order", key, 13i64, 5.0, "1-URGENT", 0i64])
            .unwrap();
        Message::single(id, body)
    }

    fn adds(rel: &'static str) -> Sequence {
        Sequence::new().then(move |m| {
            let mut out = m.clone();
            out.body.add_fact(rel, tuple![&*m.id])?;
            Ok(out)
        })
    }

    fn fails() -> Sequence {
        Sequence::new().then(|_| Err(PatternError::Config("boom".into())))
    }

    #[test]
    fn scatter_unions_branches() {
        let m = order("m", 1);
        let branches = vec![("a".to_string(), adds("ra")), ("b".to_string(), adds("rb"))];
        let out = scatter_gather(&m, &branches, Scatter::Multicast, Gather::default()).unwrap();
        assert!(out.body.contains("ra") && out.body.contains("rb") && out.body.contains("order"));
        assert_eq!(out.id, m.id);

        let one = scatter_gather(&m, &branches[..1], Scatter::Multicast, Gather::default()).unwrap();
        assert_eq!(one, adds("ra").apply(&m).unwrap());
    }

    #[test]
    fn quorum_decides_failures() {
        let m = order("m", 1);
        let branches = vec![("a".to_string(), adds("ra")), ("b".to_string(), fails())];
        assert!(matches!(
            scatter_gather(&m, &branches, Scatter::Multicast, Gather::default()),
            Err(PipelineError::Quorum { ok: 1, needed: 2, .. })
        ));
        let lenient = Gather {
            quorum: Some(1),
            concurrent: true,
        };
        let out = scatter_gather(&m, &branches, Scatter::Multicast, lenient).unwrap();
        assert!(out.body.contains("ra"));
    }

    #[test]
    fn recipient_list_selects_branches() {
        let m = order("m", 1);
        let rd = RoutingCondition::parse(r#"to("b") :- order(a,b,c,d,e,f,g)."#, "to").unwrap();
        let branches = vec![("a".to_string(), adds("ra")), ("b".to_string(), adds("rb"))];
        let out = scatter_gather(&m, &branches, Scatter::RecipientList(&rd), Gather::default()).unwrap();
        assert!(!out.body.contains("ra") && out.body.contains("rb"));
    }

    #[test]
    fn split_translate_gather() {
        let msgs: Vec<Message> = (0..10).map(|i| order(&format!("o{i}"), i)).collect();
        let bulk = bulk_assemble(msgs, 10).unwrap().remove(0).into_message();
        let t = Translator::new(
            Arc::new(parse_program("conv(id,k) :- order(id,t,k,c,p,r,s).").unwrap()),
            "conv",
        )
        .unwrap();
        let branch = Sequence::new().translate(t);
        let seq = splitter_gather(&bulk, Split::Records, &branch, Gather::default()).unwrap();
        assert_eq!(seq.body.relation("conv").unwrap().len(), 10);
        let par = splitter_gather(
            &bulk,
            Split::Records,
            &branch,
            Gather {
                quorum: None,
                concurrent: true,
            },
        )
        .unwrap();
        assert_eq!(par, seq);

        let single = order("x", 1);
        assert_eq!(
            splitter_gather(&single, Split::Records, &branch, Gather::default()).unwrap(),
            branch.apply(&single).unwrap()
        );
    }

    #[test]
    fn split_by_conditions() {
        let m = order("m", 1);
        let conds = vec![
            RoutingCondition::parse("k(id,k) :- order(id,t,k,c,p,r,s).", "k").unwrap(),
            RoutingCondition::parse("none(id) :- order(id,t,k,c,p,r,s), >(p, 1e9).", "none").unwrap(),
        ];
        let out = splitter_gather(&m, Split::Conditions(&conds), &Sequence::new(), Gather::default()).unwrap();
        assert_eq!(out.body.relation("k").unwrap().len(), 1);
        assert!(!out.body.contains("none"));
    }
}
