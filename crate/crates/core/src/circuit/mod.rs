//! Exact inference over ground programs.
//!
//! Every ground probabilistic fact maps to a state of an independent random
//! variable: an ungrouped fact becomes a Boolean variable, a categorical
//! cell becomes one variable with a state per member. [`compile`] evaluates
//! the ground rules once per world into truth tables and reduces each query
//! atom's table to a shared ordered decision diagram; [`CompiledCircuit`]
//! then answers weighted model counts and exact parameter gradients in time
//! linear in the diagram.
//!
//! [`enumerate_query_probs`] answers the same questions by brute force —
//! walking every world and running the rules to fixpoint — and exists as an
//! independent cross-check for the compiled route.

mod bitvec;
mod params;

pub use params::{FactParamTable, GradientTable, ParamsError};

use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use crate::ground::{FactId, GroundAtom, GroundProgram, Sign};
use crate::logic::FactParam;
use bitvec::BitVec;

/// Largest world count the compiler will materialize truth tables for.
pub const DEFAULT_WORLD_CAP: u64 = 1 << 24;
/// Largest world count the brute-force oracle will walk.
pub const DEFAULT_ORACLE_WORLD_CAP: u64 = 1 << 20;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CircuitError {
    #[error("state space of {worlds} worlds exceeds the limit of {cap}")]
    CapacityExceeded { worlds: u128, cap: u64 },
    #[error("missing parameter '{key}'")]
    MissingParameter { key: String },
    #[error("atom {0} is not a query of this program")]
    UnknownQuery(String),
}

#[derive(Debug, Clone, PartialEq)]
enum VarParams {
    /// States: 0 = fact absent (weight `1 - p`), 1 = present (weight `p`).
    Bool(FactParam),
    /// One state per cell member, in group index order.
    Categorical(Vec<FactParam>),
}

#[derive(Debug, Clone, PartialEq)]
struct Variable {
    params: VarParams,
    /// Slot number parsed from the parameter key, used only for ordering.
    slot: Option<usize>,
    first_fact: FactId,
}

impl Variable {
    fn states(&self) -> usize {
        match &self.params {
            VarParams::Bool(_) => 2,
            VarParams::Categorical(ps) => ps.len(),
        }
    }
}

fn slot_of(param: &FactParam) -> Option<usize> {
    match param {
        FactParam::External(key) => key.split('/').nth(1)?.parse().ok(),
        FactParam::Prob(_) => None,
    }
}

fn param_value(param: &FactParam, table: &FactParamTable) -> Result<f64, CircuitError> {
    match param {
        FactParam::Prob(p) => Ok(*p),
        FactParam::External(key) => {
            table.get(key).ok_or_else(|| CircuitError::MissingParameter { key: key.clone() })
        }
    }
}

/// The ordered random variables of a ground program. Variables are sorted
/// by slot, with each slot's objectness variable ahead of its class
/// variable; this interleaving keeps the diagrams of per-slot programs
/// small.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableSpace {
    vars: Vec<Variable>,
    /// Fact -> (variable index, state index).
    fact_state: HashMap<FactId, (usize, usize)>,
    world_count: u64,
    /// `suffix[i]` = product of state counts of variables `i..`.
    suffix: Vec<usize>,
}

impl VariableSpace {
    pub fn build(gp: &GroundProgram, world_cap: u64) -> Result<Self, CircuitError> {
        let mut vars: Vec<Variable> = Vec::new();
        let mut members_of: Vec<BTreeMap<usize, FactId>> = Vec::new();
        let mut cell_var: HashMap<(&str, &str), usize> = HashMap::new();
        for fact in &gp.facts {
            match &fact.group {
                None => {
                    vars.push(Variable {
                        params: VarParams::Bool(fact.param.clone()),
                        slot: slot_of(&fact.param),
                        first_fact: fact.id,
                    });
                    members_of.push(BTreeMap::new());
                }
                Some(g) => {
                    let vi = *cell_var.entry((&g.name, &g.cell)).or_insert_with(|| {
                        vars.push(Variable {
                            params: VarParams::Categorical(Vec::new()),
                            slot: slot_of(&fact.param),
                            first_fact: fact.id,
                        });
                        members_of.push(BTreeMap::new());
                        vars.len() - 1
                    });
                    members_of[vi].insert(g.index, fact.id);
                }
            }
        }
        for (var, members) in vars.iter_mut().zip(&members_of) {
            if let VarParams::Categorical(ps) = &mut var.params {
                debug_assert!(members
                    .keys()
                    .enumerate()
                    .all(|(expect, &got)| expect == got));
                *ps = members.values().map(|id| gp.fact(*id).param.clone()).collect();
            }
        }

        let mut order: Vec<usize> = (0..vars.len()).collect();
        order.sort_by_key(|&i| {
            let v = &vars[i];
            let is_cat = matches!(v.params, VarParams::Categorical(_));
            (v.slot.unwrap_or(usize::MAX), is_cat, v.first_fact)
        });
        let vars: Vec<Variable> = order.iter().map(|&i| vars[i].clone()).collect();
        let members_of: Vec<BTreeMap<usize, FactId>> =
            order.iter().map(|&i| members_of[i].clone()).collect();

        let mut fact_state = HashMap::new();
        for (vi, (var, members)) in vars.iter().zip(&members_of).enumerate() {
            match &var.params {
                VarParams::Bool(_) => {
                    fact_state.insert(var.first_fact, (vi, 1));
                }
                VarParams::Categorical(_) => {
                    for (&state, &id) in members {
                        fact_state.insert(id, (vi, state));
                    }
                }
            }
        }

        let mut worlds: u128 = 1;
        for v in &vars {
            worlds = worlds.saturating_mul(v.states() as u128);
            if worlds > world_cap as u128 {
                return Err(CircuitError::CapacityExceeded { worlds, cap: world_cap });
            }
        }
        let mut suffix = vec![1usize; vars.len() + 1];
        for i in (0..vars.len()).rev() {
            suffix[i] = suffix[i + 1] * vars[i].states();
        }
        Ok(VariableSpace { vars, fact_state, world_count: worlds as u64, suffix })
    }

    pub fn var_count(&self) -> usize {
        self.vars.len()
    }

    pub fn world_count(&self) -> u64 {
        self.world_count
    }

    /// State probabilities per variable under a parameter table. No range
    /// checking happens here: evaluation treats the parameters as free
    /// coordinates of a multilinear function, which finite-difference
    /// probing relies on.
    fn resolve(&self, table: &FactParamTable) -> Result<Vec<Vec<f64>>, CircuitError> {
        self.vars
            .iter()
            .map(|v| match &v.params {
                VarParams::Bool(p) => {
                    let p = param_value(p, table)?;
                    Ok(vec![1.0 - p, p])
                }
                VarParams::Categorical(ps) => {
                    ps.iter().map(|p| param_value(p, table)).collect()
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    False,
    True,
    Decision { var: u32, children: Vec<u32> },
}

const FALSE_ID: u32 = 0;
const TRUE_ID: u32 = 1;

/// Shape and size counters of a compiled circuit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CircuitStats {
    pub variables: usize,
    pub worlds: u64,
    pub nodes: usize,
    pub decision_nodes: usize,
    pub queries: usize,
}

/// Result of one forward evaluation; holds every node value so gradients
/// can be pulled without recomputation.
#[derive(Debug, Clone)]
pub struct Evaluation {
    values: Vec<f64>,
    probs: Vec<Vec<f64>>,
}

/// A ground program reduced to a multi-rooted ordered decision diagram.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledCircuit {
    space: VariableSpace,
    nodes: Vec<Node>,
    roots: BTreeMap<GroundAtom, u32>,
    external_keys: Vec<String>,
}

impl CompiledCircuit {
    pub fn stats(&self) -> CircuitStats {
        CircuitStats {
            variables: self.space.var_count(),
            worlds: self.space.world_count(),
            nodes: self.nodes.len(),
            decision_nodes: self.nodes.len() - 2,
            queries: self.roots.len(),
        }
    }

    pub fn queries(&self) -> impl Iterator<Item = &GroundAtom> {
        self.roots.keys()
    }

    pub fn external_keys(&self) -> &[String] {
        &self.external_keys
    }

    pub fn evaluate(&self, table: &FactParamTable) -> Result<Evaluation, CircuitError> {
        let probs = self.space.resolve(table)?;
        let mut values = vec![0.0; self.nodes.len()];
        values[TRUE_ID as usize] = 1.0;
        for (i, node) in self.nodes.iter().enumerate().skip(2) {
            if let Node::Decision { var, children } = node {
                let p = &probs[*var as usize];
                values[i] = children
                    .iter()
                    .zip(p)
                    .map(|(&c, &pk)| pk * values[c as usize])
                    .sum();
            }
        }
        Ok(Evaluation { values, probs })
    }

    pub fn query_prob(&self, eval: &Evaluation, atom: &GroundAtom) -> Result<f64, CircuitError> {
        self.roots
            .get(atom)
            .map(|&id| eval.values[id as usize])
            .ok_or_else(|| CircuitError::UnknownQuery(atom.to_string()))
    }

    /// All query probabilities, keyed by query atom.
    pub fn task_distribution(&self, eval: &Evaluation) -> BTreeMap<GroundAtom, f64> {
        self.roots.iter().map(|(a, &id)| (a.clone(), eval.values[id as usize])).collect()
    }

    /// Reverse sweep: given an adjoint per query root, accumulate the
    /// gradient with respect to every external parameter. Keys that do not
    /// influence any seeded root report zero.
    pub fn backprop(
        &self,
        eval: &Evaluation,
        seeds: &BTreeMap<GroundAtom, f64>,
    ) -> Result<GradientTable, CircuitError> {
        let mut adjoint = vec![0.0; self.nodes.len()];
        for (atom, seed) in seeds {
            let id = self
                .roots
                .get(atom)
                .ok_or_else(|| CircuitError::UnknownQuery(atom.to_string()))?;
            adjoint[*id as usize] += seed;
        }
        let mut state_grad: Vec<Vec<f64>> =
            self.space.vars.iter().map(|v| vec![0.0; v.states()]).collect();
        for i in (2..self.nodes.len()).rev() {
            let a = adjoint[i];
            if a == 0.0 {
                continue;
            }
            if let Node::Decision { var, children } = &self.nodes[i] {
                let v = *var as usize;
                for (k, &c) in children.iter().enumerate() {
                    adjoint[c as usize] += a * eval.probs[v][k];
                    state_grad[v][k] += a * eval.values[c as usize];
                }
            }
        }
        let mut grads = GradientTable::zeros(self.external_keys.iter().cloned());
        for (v, var) in self.space.vars.iter().enumerate() {
            match &var.params {
                VarParams::Bool(FactParam::External(key)) => {
                    grads.accumulate(key, state_grad[v][1] - state_grad[v][0]);
                }
                VarParams::Bool(FactParam::Prob(_)) => {}
                VarParams::Categorical(ps) => {
                    for (k, p) in ps.iter().enumerate() {
                        if let FactParam::External(key) = p {
                            grads.accumulate(key, state_grad[v][k]);
                        }
                    }
                }
            }
        }
        Ok(grads)
    }
}

struct DiagramBuilder<'a> {
    space: &'a VariableSpace,
    nodes: Vec<Node>,
    cons: HashMap<(u32, Vec<u32>), u32>,
}

impl DiagramBuilder<'_> {
    fn build(&mut self, bits: &BitVec, depth: usize, offset: usize) -> u32 {
        let len = self.space.suffix[depth];
        if bits.range_all_zero(offset, len) {
            return FALSE_ID;
        }
        if bits.range_all_one(offset, len) {
            return TRUE_ID;
        }
        let child_len = self.space.suffix[depth + 1];
        let children: Vec<u32> = (0..self.space.vars[depth].states())
            .map(|k| self.build(bits, depth + 1, offset + k * child_len))
            .collect();
        if children.iter().all(|&c| c == children[0]) {
            return children[0];
        }
        let key = (depth as u32, children);
        if let Some(&id) = self.cons.get(&key) {
            return id;
        }
        let id = self.nodes.len() as u32;
        self.nodes.push(Node::Decision { var: key.0, children: key.1.clone() });
        self.cons.insert(key, id);
        id
    }
}

/// Truth table of every atom of the program, in one pass over the rules in
/// dependency order.
fn atom_tables(
    gp: &GroundProgram,
    space: &VariableSpace,
) -> (HashMap<GroundAtom, usize>, Vec<BitVec>) {
    let w = space.world_count() as usize;
    let mut index: HashMap<GroundAtom, usize> = HashMap::new();
    let mut tables: Vec<BitVec> = Vec::new();
    let mut add_atom = |atom: &GroundAtom, tables: &mut Vec<BitVec>| -> usize {
        if let Some(&i) = index.get(atom) {
            return i;
        }
        let i = tables.len();
        index.insert(atom.clone(), i);
        tables.push(BitVec::zeros(w));
        i
    };

    for fact in &gp.facts {
        let i = add_atom(&fact.atom, &mut tables);
        let (var, state) = space.fact_state[&fact.id];
        let stride = space.suffix[var + 1];
        let cycle = stride * space.vars[var].states();
        let mut base = state * stride;
        while base < w {
            for b in base..(base + stride).min(w) {
                tables[i].set(b);
            }
            base += cycle;
        }
    }

    for r in &gp.rules {
        add_atom(&r.head, &mut tables);
        for (_, b) in &r.body {
            add_atom(b, &mut tables);
        }
    }
    for q in &gp.queries {
        add_atom(q, &mut tables);
    }

    // Kahn walk over the ground dependency graph; a head's table is final
    // once every body atom of every rule deriving it has been processed.
    let mut rules_by_head: HashMap<&GroundAtom, Vec<usize>> = HashMap::new();
    let mut dependents: HashMap<&GroundAtom, Vec<&GroundAtom>> = HashMap::new();
    let mut indegree: HashMap<&GroundAtom, usize> = HashMap::new();
    for atom in index.keys() {
        indegree.entry(atom).or_insert(0);
    }
    for (ri, r) in gp.rules.iter().enumerate() {
        rules_by_head.entry(&r.head).or_default().push(ri);
        *indegree.get_mut(&r.head).expect("head indexed") += r.body.len();
        for (_, b) in &r.body {
            dependents.entry(b).or_default().push(&r.head);
        }
    }
    let mut queue: Vec<&GroundAtom> =
        indegree.iter().filter(|(_, &d)| d == 0).map(|(&a, _)| a).collect();
    let mut remaining = indegree;
    while let Some(atom) = queue.pop() {
        if let Some(rule_ids) = rules_by_head.get(atom) {
            let hi = index[atom];
            let mut head_bits = BitVec::zeros(w);
            for &ri in rule_ids {
                let mut conj = BitVec::ones(w);
                for (sign, b) in &gp.rules[ri].body {
                    match sign {
                        Sign::Pos => conj.and_assign(&tables[index[b]]),
                        Sign::Neg => conj.and_not_assign(&tables[index[b]]),
                    }
                }
                head_bits.or_assign(&conj);
            }
            tables[hi] = head_bits;
        }
        if let Some(heads) = dependents.get(atom) {
            for h in heads {
                let d = remaining.get_mut(*h).expect("head tracked");
                *d -= 1;
                if *d == 0 {
                    queue.push(h);
                }
            }
        }
    }

    (index, tables)
}

/// Compile a ground program: one decision diagram root per query atom,
/// with structure shared across roots.
pub fn compile(gp: &GroundProgram, world_cap: u64) -> Result<CompiledCircuit, CircuitError> {
    let space = VariableSpace::build(gp, world_cap)?;
    let (index, tables) = atom_tables(gp, &space);

    let mut sorted_queries: Vec<&GroundAtom> = gp.queries.iter().collect();
    sorted_queries.sort();
    sorted_queries.dedup();

    let mut builder =
        DiagramBuilder { space: &space, nodes: vec![Node::False, Node::True], cons: HashMap::new() };
    let mut roots = BTreeMap::new();
    for q in sorted_queries {
        let id = builder.build(&tables[index[q]], 0, 0);
        roots.insert(q.clone(), id);
    }
    let nodes = builder.nodes;
    Ok(CompiledCircuit { space, nodes, roots, external_keys: gp.external_keys() })
}

/// Brute-force reference: enumerate every world, run the ground rules to
/// fixpoint stratum by stratum, and sum the weights of worlds satisfying
/// each query. Shares nothing with the compiled route beyond the variable
/// binding itself.
pub fn enumerate_query_probs(
    gp: &GroundProgram,
    table: &FactParamTable,
    world_cap: u64,
) -> Result<BTreeMap<GroundAtom, f64>, CircuitError> {
    let space = VariableSpace::build(gp, world_cap)?;
    let probs = space.resolve(table)?;

    // Dense indices for facts, heads, bodies, and queries.
    fn intern<'a>(index: &mut HashMap<&'a GroundAtom, usize>, a: &'a GroundAtom) {
        let next = index.len();
        index.entry(a).or_insert(next);
    }
    let mut index: HashMap<&GroundAtom, usize> = HashMap::new();
    for f in &gp.facts {
        intern(&mut index, &f.atom);
    }
    for r in &gp.rules {
        intern(&mut index, &r.head);
        for (_, b) in &r.body {
            intern(&mut index, b);
        }
    }
    for q in &gp.queries {
        intern(&mut index, q);
    }
    let n_atoms = index.len();

    struct DenseRule {
        head: usize,
        body: Vec<(bool, usize)>,
        stratum: usize,
    }
    let rules: Vec<DenseRule> = gp
        .rules
        .iter()
        .map(|r| DenseRule {
            head: index[&r.head],
            body: r
                .body
                .iter()
                .map(|(s, b)| (*s == Sign::Pos, index[b]))
                .collect(),
            stratum: r.stratum,
        })
        .collect();
    let fact_states: Vec<(usize, usize, usize)> =
        gp.facts.iter().map(|f| {
            let (var, state) = space.fact_state[&f.id];
            (index[&f.atom], var, state)
        }).collect();
    let query_ix: Vec<(GroundAtom, usize)> =
        gp.queries.iter().map(|q| (q.clone(), index[q])).collect();

    let mut acc: BTreeMap<GroundAtom, f64> =
        gp.queries.iter().map(|q| (q.clone(), 0.0)).collect();
    let nvars = space.var_count();
    let mut states = vec![0usize; nvars];
    let mut truth = vec![false; n_atoms];
    loop {
        let mut weight = 1.0;
        for (v, &s) in states.iter().enumerate() {
            weight *= probs[v][s];
        }
        truth.iter_mut().for_each(|t| *t = false);
        for &(ai, var, state) in &fact_states {
            if states[var] == state {
                truth[ai] = true;
            }
        }
        for stratum in 0..=gp.max_stratum {
            loop {
                let mut changed = false;
                for r in &rules {
                    if r.stratum != stratum || truth[r.head] {
                        continue;
                    }
                    if r.body.iter().all(|&(pos, b)| truth[b] == pos) {
                        truth[r.head] = true;
                        changed = true;
                    }
                }
                if !changed {
                    break;
                }
            }
        }
        for (q, ix) in &query_ix {
            if truth[*ix] {
                *acc.get_mut(q).expect("query accumulated") += weight;
            }
        }

        // Advance the mixed-radix odometer.
        let mut v = nvars;
        loop {
            if v == 0 {
                return Ok(acc);
            }
            v -= 1;
            states[v] += 1;
            if states[v] < space.vars[v].states() {
                break;
            }
            states[v] = 0;
        }
    }
}

/// Cache of compiled circuits keyed by the ground program's dump text.
#[derive(Default)]
pub struct CircuitCache {
    map: HashMap<String, Rc<CompiledCircuit>>,
}

impl CircuitCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_compile(
        &mut self,
        gp: &GroundProgram,
        world_cap: u64,
    ) -> Result<Rc<CompiledCircuit>, CircuitError> {
        let key = gp.dump();
        if let Some(hit) = self.map.get(&key) {
            return Ok(hit.clone());
        }
        let circuit = Rc::new(compile(gp, world_cap)?);
        self.map.insert(key, circuit.clone());
        Ok(circuit)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

#[cfg(test)]
mod tests;
