use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("node {0} not found")]
    NodeNotFound(usize),
    #[error("probability {0} outside [0, 1]")]
    BadProbability(f64),
    #[error("node {node}: children probabilities sum to {sum}")]
    Unnormalized { node: usize, sum: f64 },
    #[error("leaves must all sit at the final stage")]
    Ragged,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub id: usize,
    /// Stage index; the root of a full tree is stage 0.
    pub stage: usize,
    pub parent: Option<usize>,
    /// Probability conditional on the parent.
    pub prob: f64,
    /// Realization revealed at this stage (empty at stage 0).
    pub values: Vec<f64>,
    pub children: Vec<usize>,
}

/// Finite filtration as a tree. A conditional tree keeps the values of the
/// stages strictly before its root in `history`, so leaf paths always start
/// at stage 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTree {
    stage_times: Vec<f64>,
    history: Vec<Vec<f64>>,
    nodes: Vec<TreeNode>,
}

impl ScenarioTree {
    /// A tree holding only a stage-0 root.
    pub fn new(stage_times: Vec<f64>) -> Self {
        Self::with_history(stage_times, Vec::new(), Vec::new())
    }

    /// A tree whose root sits at stage `history.len() + 1` (or 0 when both
    /// `history` and `root_values` are empty).
    pub fn with_history(stage_times: Vec<f64>, history: Vec<Vec<f64>>, root_values: Vec<f64>) -> Self {
        let stage = if history.is_empty() && root_values.is_empty() { 0 } else { history.len() + 1 };
        let root = TreeNode { id: 0, stage, parent: None, prob: 1.0, values: root_values, children: Vec::new() };
        Self { stage_times, history, nodes: vec![root] }
    }

    pub fn add_child(&mut self, parent: usize, prob: f64, values: Vec<f64>) -> Result<usize, TreeError> {
        if !(0.0..=1.0).contains(&prob) {
            return Err(TreeError::BadProbability(prob));
        }
        let stage = self.nodes.get(parent).ok_or(TreeError::NodeNotFound(parent))?.stage + 1;
        let id = self.nodes.len();
        self.nodes.push(TreeNode { id, stage, parent: Some(parent), prob, values, children: Vec::new() });
        self.nodes[parent].children.push(id);
        Ok(id)
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn stage_times(&self) -> &[f64] {
        &self.stage_times
    }

    pub fn history(&self) -> &[Vec<f64>] {
        &self.history
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> Result<&TreeNode, TreeError> {
        self.nodes.get(id).ok_or(TreeError::NodeNotFound(id))
    }

    pub fn children(&self, id: usize) -> &[usize] {
        &self.nodes[id].children
    }

    pub fn root_stage(&self) -> usize {
        self.nodes[0].stage
    }

    /// Stage of the leaves.
    pub fn num_stages(&self) -> usize {
        self.leaves().map(|l| self.nodes[l].stage).max().unwrap_or(0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter(|n| n.children.is_empty()).map(|n| n.id)
    }

    /// Probability of reaching `id` from the root.
    pub fn absolute_prob(&self, id: usize) -> f64 {
        let mut p = 1.0;
        let mut cur = Some(id);
        while let Some(c) = cur {
            p *= self.nodes[c].prob;
            cur = self.nodes[c].parent;
        }
        p
    }

    pub fn leaf_probabilities(&self) -> Vec<(usize, f64)> {
        self.leaves().map(|l| (l, self.absolute_prob(l))).collect()
    }

    /// Realizations of stages `1..=stage(id)`: the history followed by the
    /// values on the branch from the root to `id`.
    pub fn path(&self, id: usize) -> Vec<Vec<f64>> {
        let mut branch = Vec::new();
        let mut cur = Some(id);
        while let Some(c) = cur {
            if self.nodes[c].stage > 0 {
                branch.push(self.nodes[c].values.clone());
            }
            cur = self.nodes[c].parent;
        }
        branch.reverse();
        let mut full = self.history.clone();
        full.extend(branch);
        full
    }

    /// Checks that children laws are normalized and all leaves share a stage.
    pub fn check(&self) -> Result<(), TreeError> {
        for n in &self.nodes {
            if !n.children.is_empty() {
                let sum: f64 = n.children.iter().map(|&c| self.nodes[c].prob).sum();
                if (sum - 1.0).abs() > 1e-12 {
                    return Err(TreeError::Unnormalized { node: n.id, sum });
                }
            }
        }
        let depth = self.num_stages();
        if self.leaves().any(|l| self.nodes[l].stage != depth) {
            return Err(TreeError::Ragged);
        }
        Ok(())
    }

    /// Subtree below `id`, its root carrying probability 1 and the observed
    /// past moved into the history.
    pub fn conditional_subtree(&self, id: usize) -> Result<ScenarioTree, TreeError> {
        let node = self.node(id)?;
        let mut past = self.path(id);
        let root_values = if node.stage > 0 { past.pop().unwrap() } else { Vec::new() };
        let mut sub = if node.stage == 0 {
            ScenarioTree::new(self.stage_times.clone())
        } else {
            ScenarioTree::with_history(self.stage_times.clone(), past, root_values)
        };
        let mut stack = vec![(id, 0)];
        while let Some((orig, new)) = stack.pop() {
            for &c in &self.nodes[orig].children {
                let child = &self.nodes[c];
                let nid = sub.add_child(new, child.prob, child.values.clone())?;
                stack.push((c, nid));
            }
        }
        sub.renumber();
        Ok(sub)
    }

    /// Re-labels nodes breadth first so ids are independent of build order.
    fn renumber(&mut self) {
        let mut order = vec![0];
        let mut i = 0;
        while i < order.len() {
            order.extend(self.nodes[order[i]].children.iter().copied());
            i += 1;
        }
        let mut map = vec![0; self.nodes.len()];
        for (new, &old) in order.iter().enumerate() {
            map[old] = new;
        }
        let mut nodes: Vec<TreeNode> = order.iter().map(|&o| self.nodes[o].clone()).collect();
        for n in &mut nodes {
            n.id = map[n.id];
            n.parent = n.parent.map(|p| map[p]);
            for c in &mut n.children {
                *c = map[*c];
            }
        }
        self.nodes = nodes;
    }

    /// Line-oriented text form:
    ///
    /// ```text
    /// stage_times 0 0.5 1
    /// history 0.1
    /// node 0 1 - 1 0.1
    /// node 1 2 0 0.5 0.3
    /// ```
    ///
    /// with node fields `id stage parent prob values...`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let join = |v: &[f64]| v.iter().map(|x| format!(" {x}")).collect::<String>();
        writeln!(s, "stage_times{}", join(&self.stage_times)).unwrap();
        for h in &self.history {
            writeln!(s, "history{}", join(h)).unwrap();
        }
        for n in &self.nodes {
            let parent = n.parent.map_or("-".to_string(), |p| p.to_string());
            writeln!(s, "node {} {} {} {}{}", n.id, n.stage, parent, n.prob, join(&n.values)).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<ScenarioTree, TreeError> {
        let mut stage_times = Vec::new();
        let mut history = Vec::new();
        let mut nodes: Vec<TreeNode> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let err = |message: &str| TreeError::Parse { line: i + 1, message: message.to_string() };
            let mut fields = line.split_whitespace();
            let Some(kind) = fields.next() else { continue };
            let rest: Vec<&str> = fields.collect();
            let floats = |items: &[&str]| -> Result<Vec<f64>, TreeError> {
                items.iter().map(|x| x.parse::<f64>().map_err(|_| err("bad number"))).collect()
            };
            match kind {
                "stage_times" => stage_times = floats(&rest)?,
                "history" => history.push(floats(&rest)?),
                "node" => {
                    if rest.len() < 4 {
                        return Err(err("node needs id, stage, parent and probability"));
                    }
                    let id: usize = rest[0].parse().map_err(|_| err("bad node id"))?;
                    if id != nodes.len() {
                        return Err(err("node ids must be consecutive"));
                    }
                    let stage = rest[1].parse().map_err(|_| err("bad stage"))?;
                    let parent = match rest[2] {
                        "-" => None,
                        p => Some(p.parse::<usize>().map_err(|_| err("bad parent"))?),
                    };
                    if parent.is_some_and(|p| p >= id) || (parent.is_none() != (id == 0)) {
                        return Err(err("parent must precede its children and only node 0 is a root"));
                    }
                    let prob = rest[3].parse().map_err(|_| err("bad probability"))?;
                    let values = floats(&rest[4..])?;
                    if let Some(p) = parent {
                        nodes[p].children.push(id);
                    }
                    nodes.push(TreeNode { id, stage, parent, prob, values, children: Vec::new() });
                }
                _ => return Err(err("unknown record")),
            }
        }
        if nodes.is_empty() {
            return Err(TreeError::Parse { line: 0, message: "no nodes".into() });
        }
        let tree = ScenarioTree { stage_times, history, nodes };
        tree.check()?;
        Ok(tree)
    }
}
