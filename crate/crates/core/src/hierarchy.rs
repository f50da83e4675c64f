//! Class taxonomies and the hierarchy graph built from them.
//!
//! Nodes are flattened level-major: every level-1 class first (in file
//! order), then every level-2 class, and so on. Each level therefore owns a
//! contiguous slice of node indices, which is what the objective uses to cut
//! the score vector into per-level logits.
//!
//! The taxonomy file is line oriented UTF-8:
//!
//! ```text
//! #levels 2
//! #source llm
//! 1	animal	-
//! 2	dog	animal
//! ```
//!
//! Fields are tab separated (`level`, `name`, `parent`); level-1 nodes use
//! `-` as parent and any other line starting with `#` is a comment.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::ops::Range;

use ndarray::Array2;

use crate::error::{HgtError, Result};

/// Where a taxonomy came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HierarchySource {
    #[default]
    GroundTruth,
    LlmGenerated,
}

/// A validated `h`-level class tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    names: Vec<Vec<String>>,
    /// `parents[l][j]` is the index (within level `l-1`) of node `j` at level `l`.
    /// Empty for level 0.
    parents: Vec<Vec<usize>>,
    source: HierarchySource,
}

impl Taxonomy {
    /// Builds a taxonomy from per-level names and parent indices (0-based levels).
    ///
    /// `parents[0]` must be empty; `parents[l][j]` is the parent of `names[l][j]`
    /// within level `l - 1`.
    pub fn new(
        names: Vec<Vec<String>>,
        parents: Vec<Vec<usize>>,
        source: HierarchySource,
    ) -> Result<Self> {
        let t = Taxonomy {
            names,
            parents,
            source,
        };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        let h = self.names.len();
        if h == 0 {
            return Err(HgtError::Validation("taxonomy has no levels".into()));
        }
        if self.parents.len() != h {
            return Err(HgtError::Validation(format!(
                "parent table has {} levels, expected {h}",
                self.parents.len()
            )));
        }
        if !self.parents[0].is_empty() {
            return Err(HgtError::Validation(
                "level-1 nodes cannot have parents".into(),
            ));
        }
        for (l, level) in self.names.iter().enumerate() {
            if level.is_empty() {
                return Err(HgtError::Validation(format!(
                    "level {} has no classes",
                    l + 1
                )));
            }
            let mut seen = HashMap::new();
            for name in level {
                if seen.insert(name.as_str(), ()).is_some() {
                    return Err(HgtError::Validation(format!(
                        "duplicate class name {name:?} at level {}",
                        l + 1
                    )));
                }
            }
            if l > 0 {
                if self.parents[l].len() != level.len() {
                    return Err(HgtError::Validation(format!(
                        "level {} has {} classes but {} parent links",
                        l + 1,
                        level.len(),
                        self.parents[l].len()
                    )));
                }
                let upper = self.names[l - 1].len();
                let mut has_child = vec![false; upper];
                for (j, &p) in self.parents[l].iter().enumerate() {
                    if p >= upper {
                        return Err(HgtError::Validation(format!(
                            "orphan node {:?} at level {}",
                            level[j],
                            l + 1
                        )));
                    }
                    has_child[p] = true;
                }
                if let Some(p) = has_child.iter().position(|c| !c) {
                    return Err(HgtError::Validation(format!(
                        "internal node {:?} at level {} has no children",
                        self.names[l - 1][p],
                        l
                    )));
                }
            }
        }
        Ok(())
    }

    /// Number of levels `h`.
    pub fn levels(&self) -> usize {
        self.names.len()
    }

    /// `K_i` for every level.
    pub fn level_sizes(&self) -> Vec<usize> {
        self.names.iter().map(Vec::len).collect()
    }

    pub fn node_count(&self) -> usize {
        self.names.iter().map(Vec::len).sum()
    }

    /// Class names at 0-based level `l`.
    pub fn names(&self, l: usize) -> &[String] {
        &self.names[l]
    }

    pub fn source(&self) -> HierarchySource {
        self.source
    }

    /// Parent (within level `l - 1`) of node `j` at 0-based level `l`.
    pub fn parent(&self, l: usize, j: usize) -> Option<usize> {
        if l == 0 {
            None
        } else {
            Some(self.parents[l][j])
        }
    }

    /// Parent indices of 0-based level `l` (empty for level 0).
    pub fn parents(&self, l: usize) -> &[usize] {
        &self.parents[l]
    }

    /// Children (within level `l + 1`) of node `j` at 0-based level `l`.
    pub fn children(&self, l: usize, j: usize) -> Vec<usize> {
        if l + 1 >= self.levels() {
            return Vec::new();
        }
        self.parents[l + 1]
            .iter()
            .enumerate()
            .filter_map(|(c, &p)| (p == j).then_some(c))
            .collect()
    }

    /// Per-level indices of `leaf` and all its ancestors, coarsest first.
    pub fn ancestor_path(&self, leaf: usize) -> Vec<usize> {
        let h = self.levels();
        let mut path = vec![0; h];
        path[h - 1] = leaf;
        for l in (1..h).rev() {
            path[l - 1] = self.parents[l][path[l]];
        }
        path
    }

    /// True when `path[l]` is the parent of `path[l + 1]` for every level.
    pub fn is_consistent_path(&self, path: &[usize]) -> bool {
        path.len() == self.levels()
            && path
                .iter()
                .zip(&self.names)
                .all(|(&j, names)| j < names.len())
            && (1..path.len()).all(|l| self.parents[l][path[l]] == path[l - 1])
    }

    /// Parses and validates taxonomy file contents.
    pub fn parse(text: &str) -> Result<Self> {
        let mut levels: Option<usize> = None;
        let mut source = HierarchySource::GroundTruth;
        let mut rows: Vec<(usize, usize, String, String)> = Vec::new();

        for (lineno, raw) in text.lines().enumerate() {
            let lineno = lineno + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                let mut parts = comment.split_whitespace();
                match parts.next() {
                    Some("levels") => {
                        let h = parts
                            .next()
                            .and_then(|v| v.parse::<usize>().ok())
                            .filter(|&h| h > 0)
                            .ok_or_else(|| HgtError::Parse {
                                line: lineno,
                                msg: "expected `#levels <h>` with h >= 1".into(),
                            })?;
                        if levels.replace(h).is_some() {
                            return Err(HgtError::Parse {
                                line: lineno,
                                msg: "duplicate #levels header".into(),
                            });
                        }
                    }
                    Some("source") => match parts.next() {
                        Some("llm") => source = HierarchySource::LlmGenerated,
                        Some("ground_truth") => source = HierarchySource::GroundTruth,
                        other => {
                            return Err(HgtError::Parse {
                                line: lineno,
                                msg: format!("unknown source {:?}", other.unwrap_or("")),
                            })
                        }
                    },
                    _ => {}
                }
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(HgtError::Parse {
                    line: lineno,
                    msg: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            }
            let level = fields[0]
                .trim()
                .parse::<usize>()
                .map_err(|_| HgtError::Parse {
                    line: lineno,
                    msg: format!("bad level {:?}", fields[0]),
                })?;
            let name = fields[1].trim();
            let parent = fields[2].trim();
            if name.is_empty() || parent.is_empty() {
                return Err(HgtError::Parse {
                    line: lineno,
                    msg: "empty class or parent name".into(),
                });
            }
            rows.push((lineno, level, name.to_string(), parent.to_string()));
        }

        let h = levels.ok_or_else(|| HgtError::Parse {
            line: 0,
            msg: "missing `#levels <h>` header".into(),
        })?;

        let mut names: Vec<Vec<String>> = vec![Vec::new(); h];
        let mut parent_names: Vec<Vec<(usize, String)>> = vec![Vec::new(); h];
        for (lineno, level, name, parent) in rows {
            if level == 0 || level > h {
                return Err(HgtError::Validation(format!(
                    "line {lineno}: level {level} outside 1..={h}"
                )));
            }
            names[level - 1].push(name);
            parent_names[level - 1].push((lineno, parent));
        }

        let mut parents: Vec<Vec<usize>> = vec![Vec::new(); h];
        for l in 0..h {
            if l == 0 {
                if let Some((lineno, p)) = parent_names[0].iter().find(|(_, p)| p != "-") {
                    return Err(HgtError::Validation(format!(
                        "line {lineno}: level-1 node has parent {p:?}"
                    )));
                }
                continue;
            }
            let index: HashMap<&str, usize> = names[l - 1]
                .iter()
                .enumerate()
                .map(|(i, n)| (n.as_str(), i))
                .collect();
            for (j, (lineno, p)) in parent_names[l].iter().enumerate() {
                match index.get(p.as_str()) {
                    Some(&pi) => parents[l].push(pi),
                    None => {
                        let elsewhere = names
                            .iter()
                            .enumerate()
                            .any(|(ol, ns)| ol != l - 1 && ns.iter().any(|n| n == p));
                        let why = if p == "-" {
                            "has no parent".to_string()
                        } else if elsewhere {
                            format!("references {p:?}, which is not on level {l}")
                        } else {
                            format!("references unknown parent {p:?}")
                        };
                        return Err(HgtError::Validation(format!(
                            "line {lineno}: orphan node {:?} {why}",
                            names[l][j]
                        )));
                    }
                }
            }
        }
        Taxonomy::new(names, parents, source)
    }

    /// Writes the taxonomy back out in file format, level-major.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "#levels {}", self.levels());
        if self.source == HierarchySource::LlmGenerated {
            out.push_str("#source llm\n");
        }
        for (l, level) in self.names.iter().enumerate() {
            for (j, name) in level.iter().enumerate() {
                let parent = match self.parent(l, j) {
                    Some(p) => self.names[l - 1][p].as_str(),
                    None => "-",
                };
                let _ = writeln!(out, "{}\t{}\t{}", l + 1, name, parent);
            }
        }
        out
    }
}

/// The taxonomy as an undirected graph over all `K` classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HierGraph {
    neighbors: Vec<Vec<usize>>,
    level_of: Vec<usize>,
    level_ranges: Vec<Range<usize>>,
    parent: Vec<Option<usize>>,
}

impl HierGraph {
    /// Flattens a taxonomy level-major and links every parent-child pair.
    pub fn build(t: &Taxonomy) -> Self {
        let mut level_ranges = Vec::with_capacity(t.levels());
        let mut start = 0;
        for k in t.level_sizes() {
            level_ranges.push(start..start + k);
            start += k;
        }
        let k_total = start;
        let mut neighbors = vec![Vec::new(); k_total];
        let mut level_of = vec![0; k_total];
        let mut parent = vec![None; k_total];
        for (l, range) in level_ranges.iter().enumerate() {
            for (j, v) in range.clone().enumerate() {
                level_of[v] = l;
                if let Some(p) = t.parent(l, j) {
                    let u = level_ranges[l - 1].start + p;
                    parent[v] = Some(u);
                    neighbors[v].push(u);
                    neighbors[u].push(v);
                }
            }
        }
        for n in &mut neighbors {
            n.sort_unstable();
        }
        HierGraph {
            neighbors,
            level_of,
            level_ranges,
            parent,
        }
    }

    pub fn node_count(&self) -> usize {
        self.neighbors.len()
    }

    pub fn levels(&self) -> usize {
        self.level_ranges.len()
    }

    /// Open neighborhoods, ascending, one list per node.
    pub fn neighbors(&self) -> &[Vec<usize>] {
        &self.neighbors
    }

    pub fn degree(&self, v: usize) -> usize {
        self.neighbors[v].len()
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// 0-based level of node `v`.
    pub fn level_of(&self, v: usize) -> usize {
        self.level_of[v]
    }

    pub fn parent_node(&self, v: usize) -> Option<usize> {
        self.parent[v]
    }

    /// Node ranges for every level, coarsest first.
    pub fn level_ranges(&self) -> &[Range<usize>] {
        &self.level_ranges
    }

    /// Node range of level `i`, counted from 1.
    pub fn level_slice(&self, i: usize) -> Result<Range<usize>> {
        if i == 0 || i > self.levels() {
            return Err(HgtError::Index {
                index: i,
                max: self.levels(),
            });
        }
        Ok(self.level_ranges[i - 1].clone())
    }

    /// Global node index of class `j` on 0-based level `l`.
    pub fn node(&self, l: usize, j: usize) -> usize {
        self.level_ranges[l].start + j
    }

    /// Dense symmetric adjacency without self-loops.
    pub fn adjacency(&self) -> Array2<bool> {
        let k = self.node_count();
        let mut a = Array2::from_elem((k, k), false);
        for (v, ns) in self.neighbors.iter().enumerate() {
            for &u in ns {
                a[[v, u]] = true;
            }
        }
        a
    }
}
