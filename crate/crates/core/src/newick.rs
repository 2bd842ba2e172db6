//! Newick parsing, serialization and shearing.
//!
//! The parser is iterative so arbitrarily deep (caterpillar) trees do not
//! exhaust the stack. Every error carries the byte offset at which it was
//! detected.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NewickError {
    #[error("empty input")]
    EmptyInput,
    #[error("unbalanced parentheses at offset {offset}")]
    UnbalancedParentheses { offset: usize },
    #[error("duplicate leaf name '{name}' at offset {offset}")]
    DuplicateLeaf { name: String, offset: usize },
    #[error("invalid branch length '{text}' at offset {offset}")]
    InvalidBranchLength { text: String, offset: usize },
    #[error("empty leaf label at offset {offset}")]
    EmptyLeafLabel { offset: usize },
    #[error("unterminated quoted label starting at offset {offset}")]
    UnterminatedQuote { offset: usize },
    #[error("unterminated comment starting at offset {offset}")]
    UnterminatedComment { offset: usize },
    #[error("unexpected character '{found}' at offset {offset}")]
    UnexpectedChar { found: char, offset: usize },
    #[error("missing ';' terminator at offset {offset}")]
    MissingTerminator { offset: usize },
    #[error("trailing characters after ';' at offset {offset}")]
    TrailingGarbage { offset: usize },
}

impl NewickError {
    /// Byte offset of the error; `None` only for empty input.
    pub fn offset(&self) -> Option<usize> {
        match *self {
            NewickError::EmptyInput => None,
            NewickError::UnbalancedParentheses { offset }
            | NewickError::DuplicateLeaf { offset, .. }
            | NewickError::InvalidBranchLength { offset, .. }
            | NewickError::EmptyLeafLabel { offset }
            | NewickError::UnterminatedQuote { offset }
            | NewickError::UnterminatedComment { offset }
            | NewickError::UnexpectedChar { offset, .. }
            | NewickError::MissingTerminator { offset }
            | NewickError::TrailingGarbage { offset } => Some(offset),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ShearError {
    #[error("cannot shear to an empty leaf set")]
    EmptyKeepSet,
    #[error("'{0}' is not a leaf of the tree")]
    UnknownLeaf(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub branch_length: f64,
    pub name: Option<String>,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// A rooted phylogeny. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct PhyloTree {
    nodes: Vec<Node>,
    root: usize,
    leaf_names: Vec<String>,
    leaf_nodes: Vec<usize>,
    /// Non-root nodes, children before parents.
    postorder: Vec<usize>,
}

impl PhyloTree {
    /// Builds a tree from nodes whose `parent`/`children` links are already
    /// consistent. Leaf order follows a left-to-right traversal.
    pub(crate) fn from_nodes(mut nodes: Vec<Node>, root: usize) -> Self {
        // the root's own branch is never used
        nodes[root].branch_length = 0.0;

        let mut postorder = Vec::with_capacity(nodes.len().saturating_sub(1));
        let mut leaf_names = Vec::new();
        let mut leaf_nodes = Vec::new();
        let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
        while let Some(&mut (node, ref mut next_child)) = stack.last_mut() {
            if let Some(&child) = nodes[node].children.get(*next_child) {
                *next_child += 1;
                stack.push((child, 0));
                continue;
            }
            stack.pop();
            if nodes[node].is_leaf() {
                leaf_names.push(nodes[node].name.clone().unwrap_or_default());
                leaf_nodes.push(node);
            }
            if node != root {
                postorder.push(node);
            }
        }

        Self {
            nodes,
            root,
            leaf_names,
            leaf_nodes,
            postorder,
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, index: usize) -> &Node {
        &self.nodes[index]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn leaf_names(&self) -> &[String] {
        &self.leaf_names
    }

    /// Node indices of the leaves, parallel to [`leaf_names`](Self::leaf_names).
    pub fn leaf_nodes(&self) -> &[usize] {
        &self.leaf_nodes
    }

    pub fn postorder(&self) -> &[usize] {
        &self.postorder
    }

    /// Every non-root node with its branch length, children before parents.
    pub fn postorder_nodes(&self) -> Vec<(usize, f64)> {
        self.postorder
            .iter()
            .map(|&i| (i, self.nodes[i].branch_length))
            .collect()
    }

    pub fn total_branch_length(&self) -> f64 {
        self.postorder
            .iter()
            .map(|&i| self.nodes[i].branch_length)
            .sum()
    }

    /// Distance from each leaf to the root, in leaf order.
    pub fn leaf_depths(&self) -> Vec<(String, f64)> {
        self.leaf_names
            .iter()
            .zip(&self.leaf_nodes)
            .map(|(name, &leaf)| {
                let mut depth = 0.0;
                let mut cur = leaf;
                while let Some(parent) = self.nodes[cur].parent {
                    depth += self.nodes[cur].branch_length;
                    cur = parent;
                }
                (name.clone(), depth)
            })
            .collect()
    }

    /// Restricts the tree to the leaves in `keep` and their ancestors.
    ///
    /// Non-root internal nodes left with a single child are collapsed into
    /// that child, summing branch lengths. The root is kept even when it
    /// becomes unary so that the branch below it still contributes.
    pub fn shear<S: AsRef<str>>(&self, keep: &[S]) -> Result<PhyloTree, ShearError> {
        if keep.is_empty() {
            return Err(ShearError::EmptyKeepSet);
        }
        let by_name: HashMap<&str, usize> = self
            .leaf_names
            .iter()
            .map(String::as_str)
            .zip(self.leaf_nodes.iter().copied())
            .collect();
        let mut retained = vec![false; self.nodes.len()];
        for name in keep {
            let name = name.as_ref();
            let &leaf = by_name
                .get(name)
                .ok_or_else(|| ShearError::UnknownLeaf(name.to_string()))?;
            let mut cur = Some(leaf);
            while let Some(node) = cur {
                if retained[node] {
                    break;
                }
                retained[node] = true;
                cur = self.nodes[node].parent;
            }
        }

        let mut nodes: Vec<Node> = Vec::new();
        // (old node, new parent, length carried from collapsed ancestors)
        let mut stack: Vec<(usize, Option<usize>, f64)> = vec![(self.root, None, 0.0)];
        while let Some((old, new_parent, carried)) = stack.pop() {
            let node = &self.nodes[old];
            let kept_children: Vec<usize> = node
                .children
                .iter()
                .copied()
                .filter(|&c| retained[c])
                .collect();
            if old != self.root && kept_children.len() == 1 {
                stack.push((kept_children[0], new_parent, carried + node.branch_length));
                continue;
            }
            let index = nodes.len();
            nodes.push(Node {
                parent: new_parent,
                children: Vec::with_capacity(kept_children.len()),
                branch_length: node.branch_length + carried,
                name: node.name.clone(),
            });
            if let Some(p) = new_parent {
                nodes[p].children.push(index);
            }
            for &child in kept_children.iter().rev() {
                stack.push((child, Some(index), 0.0));
            }
        }
        Ok(PhyloTree::from_nodes(nodes, 0))
    }

    /// Serializes to Newick. Lengths use the shortest representation that
    /// parses back to the same value.
    pub fn to_newick(&self) -> String {
        enum Step {
            Enter(usize),
            Exit(usize),
            Comma,
        }
        let mut out = String::new();
        let mut stack = vec![Step::Enter(self.root)];
        while let Some(step) = stack.pop() {
            match step {
                Step::Comma => out.push(','),
                Step::Enter(i) => {
                    let node = &self.nodes[i];
                    if node.is_leaf() {
                        self.write_label(&mut out, i);
                    } else {
                        out.push('(');
                        stack.push(Step::Exit(i));
                        for (pos, &c) in node.children.iter().enumerate().rev() {
                            stack.push(Step::Enter(c));
                            if pos > 0 {
                                stack.push(Step::Comma);
                            }
                        }
                    }
                }
                Step::Exit(i) => {
                    out.push(')');
                    self.write_label(&mut out, i);
                }
            }
        }
        out.push(';');
        out
    }

    fn write_label(&self, out: &mut String, i: usize) {
        let node = &self.nodes[i];
        if let Some(name) = &node.name {
            write_name(out, name);
        }
        if i != self.root {
            let _ = write!(out, ":{}", node.branch_length);
        }
    }
}

fn write_name(out: &mut String, name: &str) {
    let needs_quotes = name.is_empty()
        || name
            .chars()
            .any(|c| c.is_whitespace() || "()[]':;,".contains(c));
    if needs_quotes {
        out.push('\'');
        out.push_str(&name.replace('\'', "''"));
        out.push('\'');
    } else {
        out.push_str(name);
    }
}

/// Parses the first tree in `text`. Anything after the terminating `;`
/// other than whitespace is an error.
pub fn parse_newick(text: &str) -> Result<PhyloTree, NewickError> {
    Parser::new(text).parse()
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Self {
            src,
            bytes: src.as_bytes(),
            pos: 0,
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn unexpected(&self) -> NewickError {
        let found = self.src[self.pos..].chars().next().unwrap_or('\0');
        NewickError::UnexpectedChar {
            found,
            offset: self.pos,
        }
    }

    fn skip_insignificant(&mut self) -> Result<(), NewickError> {
        loop {
            match self.peek() {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'[') => {
                    let start = self.pos;
                    match self.src[self.pos..].find(']') {
                        Some(end) => self.pos += end + 1,
                        None => return Err(NewickError::UnterminatedComment { offset: start }),
                    }
                }
                _ => return Ok(()),
            }
        }
    }

    fn parse(mut self) -> Result<PhyloTree, NewickError> {
        self.skip_insignificant()?;
        if self.peek().is_none() {
            return Err(NewickError::EmptyInput);
        }

        let mut nodes: Vec<Node> = Vec::new();
        let mut open: Vec<usize> = Vec::new();
        let mut seen_leaves: HashSet<String> = HashSet::new();

        'tree: loop {
            // Expecting the start of a node.
            self.skip_insignificant()?;
            let parent = open.last().copied();
            let index = nodes.len();
            nodes.push(Node {
                parent,
                children: Vec::new(),
                branch_length: 0.0,
                name: None,
            });
            if let Some(p) = parent {
                nodes[p].children.push(index);
            }
            if self.peek() == Some(b'(') {
                self.pos += 1;
                open.push(index);
                continue 'tree;
            }

            let label_at = self.pos;
            let name = self.label()?;
            match name {
                Some(name) if !name.is_empty() => {
                    if !seen_leaves.insert(name.clone()) {
                        return Err(NewickError::DuplicateLeaf {
                            name,
                            offset: label_at,
                        });
                    }
                    nodes[index].name = Some(name);
                }
                _ => {
                    return Err(match self.peek() {
                        None => NewickError::UnbalancedParentheses { offset: self.pos },
                        Some(b',' | b')' | b':' | b';') => {
                            NewickError::EmptyLeafLabel { offset: label_at }
                        }
                        Some(_) => self.unexpected(),
                    });
                }
            }
            nodes[index].branch_length = self.branch_length()?;

            // A node has just been completed.
            loop {
                self.skip_insignificant()?;
                match self.peek() {
                    Some(b',') if !open.is_empty() => {
                        self.pos += 1;
                        continue 'tree;
                    }
                    Some(b')') => {
                        let Some(closed) = open.pop() else {
                            return Err(NewickError::UnbalancedParentheses { offset: self.pos });
                        };
                        self.pos += 1;
                        nodes[closed].name = self.label()?.filter(|n| !n.is_empty());
                        nodes[closed].branch_length = self.branch_length()?;
                    }
                    Some(b';') => {
                        if !open.is_empty() {
                            return Err(NewickError::UnbalancedParentheses { offset: self.pos });
                        }
                        self.pos += 1;
                        break 'tree;
                    }
                    None if !open.is_empty() => {
                        return Err(NewickError::UnbalancedParentheses { offset: self.pos })
                    }
                    None => return Err(NewickError::MissingTerminator { offset: self.pos }),
                    Some(_) => return Err(self.unexpected()),
                }
            }
        }

        self.skip_insignificant()?;
        if self.pos < self.bytes.len() {
            return Err(NewickError::TrailingGarbage { offset: self.pos });
        }
        Ok(PhyloTree::from_nodes(nodes, 0))
    }

    /// Reads an optional quoted or bare label.
    fn label(&mut self) -> Result<Option<String>, NewickError> {
        self.skip_insignificant()?;
        if self.peek() == Some(b'\'') {
            let start = self.pos;
            self.pos += 1;
            let mut name = String::new();
            loop {
                let rest = &self.src[self.pos..];
                let Some(q) = rest.find('\'') else {
                    return Err(NewickError::UnterminatedQuote { offset: start });
                };
                name.push_str(&rest[..q]);
                self.pos += q + 1;
                if self.peek() == Some(b'\'') {
                    name.push('\'');
                    self.pos += 1;
                } else {
                    return Ok(Some(name));
                }
            }
        }
        let start = self.pos;
        while let Some(b) = self.peek() {
            if b.is_ascii_whitespace() || b"()[]':;,".contains(&b) {
                break;
            }
            self.pos += 1;
        }
        if self.pos == start {
            Ok(None)
        } else {
            Ok(Some(self.src[start..self.pos].to_string()))
        }
    }

    /// Reads an optional `:length`; absent lengths are zero.
    fn branch_length(&mut self) -> Result<f64, NewickError> {
        self.skip_insignificant()?;
        if self.peek() != Some(b':') {
            return Ok(0.0);
        }
        self.pos += 1;
        self.skip_insignificant()?;
        let start = self.pos;
        while let Some(b) = self.peek() {
            if b.is_ascii_whitespace() || b"()[]':;,".contains(&b) {
                break;
            }
            self.pos += 1;
        }
        let text = &self.src[start..self.pos];
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
            _ => Err(NewickError::InvalidBranchLength {
                text: text.to_string(),
                offset: start,
            }),
        }
    }
}
