//! Interaction graphs, group membership and dataset loading.
//!
//! Datasets are four UTF-8 tab-separated files:
//!
//! * `user_item.tsv`: `user  item  weight  [timestamp]`
//! * `group_item.tsv`: `group  item  timestamp`
//! * `groups.tsv`: `group  member,member,...`
//! * `social.tsv`: `user  user`
//!
//! Lines starting with `#` are comments. String ids are remapped to dense
//! 0-based integers on load; the mapping can be saved and reused so a model
//! trained on one load can be evaluated against another.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::centrality::Measure;
use crate::{Error, Result};

pub const USER_ITEM_FILE: &str = "user_item.tsv";
pub const GROUP_ITEM_FILE: &str = "group_item.tsv";
pub const GROUPS_FILE: &str = "groups.tsv";
pub const SOCIAL_FILE: &str = "social.tsv";

pub const USERS_MAP_FILE: &str = "users.map";
pub const ITEMS_MAP_FILE: &str = "items.map";
pub const GROUPS_MAP_FILE: &str = "groups.map";

/// Bidirectional mapping between original string ids and dense ids.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IdMap {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl IdMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: u32) -> &str {
        &self.names[id as usize]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Returns the dense id for `name`, assigning the next free id if unseen.
    pub fn intern(&mut self, name: &str) -> u32 {
        match self.index.entry(name.to_string()) {
            Entry::Occupied(e) => *e.get(),
            Entry::Vacant(e) => {
                let id = self.names.len() as u32;
                self.names.push(e.key().clone());
                e.insert(id);
                id
            }
        }
    }

    /// One `dense_id<TAB>original_id` line per entry.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, name) in self.names.iter().enumerate() {
            out.push_str(&format!("{i}\t{name}\n"));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| file_error(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_file(path)?;
        let label = path.display().to_string();
        let mut map = IdMap::new();
        for (line_no, fields) in records(&text) {
            if fields.len() != 2 {
                return Err(parse_error(&label, line_no, "expected `id<TAB>name`"));
            }
            let id: usize = fields[0].parse().map_err(|_| parse_error(&label, line_no, "bad dense id"))?;
            if id != map.len() || map.get(fields[1]).is_some() {
                return Err(parse_error(&label, line_no, "ids must be dense and unique"));
            }
            map.intern(fields[1]);
        }
        Ok(map)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub left: u32,
    pub item: u32,
    pub weight: f64,
    pub timestamp: Option<i64>,
}

/// How repeated `(left, item)` pairs are merged.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DuplicatePolicy {
    /// Weights are summed; the latest timestamp is kept.
    Sum,
    /// Every edge has weight 1; the earliest timestamp is kept.
    Unit,
}

/// Weighted bipartite graph between a left node set (users or groups) and
/// items.
#[derive(Clone, Debug, PartialEq)]
pub struct BipartiteGraph {
    left_count: usize,
    right_count: usize,
    edges: Vec<Edge>,
    left_adjacency: Vec<Vec<(u32, f64)>>,
    item_out_degree: Vec<f64>,
}

impl BipartiteGraph {
    pub fn new(
        left_count: usize,
        right_count: usize,
        edges: impl IntoIterator<Item = Edge>,
        policy: DuplicatePolicy,
    ) -> Result<Self> {
        let mut merged: Vec<Edge> = Vec::new();
        let mut seen: HashMap<(u32, u32), usize> = HashMap::new();
        for mut e in edges {
            if e.left as usize >= left_count || e.item as usize >= right_count {
                return Err(Error::Shape(format!("edge ({}, {}) outside {left_count}x{right_count}", e.left, e.item)));
            }
            if !(e.weight > 0.0 && e.weight.is_finite()) {
                return Err(Error::Shape(format!("edge weight {} must be positive", e.weight)));
            }
            if policy == DuplicatePolicy::Unit {
                e.weight = 1.0;
            }
            match seen.entry((e.left, e.item)) {
                Entry::Vacant(v) => {
                    v.insert(merged.len());
                    merged.push(e);
                }
                Entry::Occupied(o) => {
                    let m = &mut merged[*o.get()];
                    match policy {
                        DuplicatePolicy::Sum => {
                            m.weight += e.weight;
                            m.timestamp = m.timestamp.max(e.timestamp);
                        }
                        DuplicatePolicy::Unit => {
                            m.timestamp = match (m.timestamp, e.timestamp) {
                                (Some(a), Some(b)) => Some(a.min(b)),
                                (a, b) => a.or(b),
                            };
                        }
                    }
                }
            }
        }
        Ok(Self::from_merged(left_count, right_count, merged))
    }

    fn from_merged(left_count: usize, right_count: usize, edges: Vec<Edge>) -> Self {
        let mut left_adjacency = vec![Vec::new(); left_count];
        let mut item_out_degree = vec![0.0; right_count];
        for e in &edges {
            left_adjacency[e.left as usize].push((e.item, e.weight));
            item_out_degree[e.item as usize] += e.weight;
        }
        BipartiteGraph { left_count, right_count, edges, left_adjacency, item_out_degree }
    }

    /// A graph over the same node sets containing only `edges`, which are
    /// assumed to be already merged (e.g. a subset of [`Self::edges`]).
    pub fn with_edges(&self, edges: Vec<Edge>) -> Self {
        Self::from_merged(self.left_count, self.right_count, edges)
    }

    pub fn left_count(&self) -> usize {
        self.left_count
    }

    pub fn right_count(&self) -> usize {
        self.right_count
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn adjacency(&self, left: u32) -> &[(u32, f64)] {
        &self.left_adjacency[left as usize]
    }

    pub fn item_out_degree(&self) -> &[f64] {
        &self.item_out_degree
    }

    pub fn left_degree(&self, left: u32) -> f64 {
        self.adjacency(left).iter().map(|&(_, w)| w).sum()
    }

    /// `w / d` for each item incident to `left`, in adjacency order.
    pub fn empirical_distribution(&self, left: u32) -> Result<Vec<(u32, f64)>> {
        let degree = self.left_degree(left);
        if degree <= 0.0 {
            return Err(Error::ZeroDegree(left as usize));
        }
        Ok(self.adjacency(left).iter().map(|&(item, w)| (item, w / degree)).collect())
    }
}

/// Neighbor ranking of every user under one centrality measure.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub measure: Measure,
    pub scores: Vec<f64>,
    pub ranked: Vec<Vec<u32>>,
}

/// Undirected user-user graph with optional centrality views.
#[derive(Clone, Debug, PartialEq)]
pub struct SocialGraph {
    user_count: usize,
    adjacency: Vec<Vec<u32>>,
    views: Vec<View>,
}

impl SocialGraph {
    /// Builds a symmetric graph from `pairs`. Self loops are dropped. Returns
    /// the graph and the number of pairs that were listed in one direction
    /// only.
    pub fn from_pairs(user_count: usize, pairs: &[(u32, u32)]) -> Result<(Self, usize)> {
        let mut directed: std::collections::HashSet<(u32, u32)> = Default::default();
        for &(a, b) in pairs {
            if a as usize >= user_count || b as usize >= user_count {
                return Err(Error::Shape(format!("social edge ({a}, {b}) outside {user_count} users")));
            }
            if a != b {
                directed.insert((a, b));
            }
        }
        let one_way = directed.iter().filter(|&&(a, b)| !directed.contains(&(b, a))).count();
        let mut adjacency = vec![Vec::new(); user_count];
        for &(a, b) in &directed {
            adjacency[a as usize].push(b);
            adjacency[b as usize].push(a);
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        Ok((SocialGraph { user_count, adjacency, views: Vec::new() }, one_way))
    }

    pub fn user_count(&self) -> usize {
        self.user_count
    }

    pub fn neighbors(&self, user: u32) -> &[u32] {
        &self.adjacency[user as usize]
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn views(&self) -> &[View] {
        &self.views
    }

    pub fn view(&self, measure: Measure) -> Option<&View> {
        self.views.iter().find(|v| v.measure == measure)
    }

    pub(crate) fn set_views(&mut self, views: Vec<View>) {
        self.views = views;
    }

    pub fn is_symmetric(&self) -> bool {
        self.adjacency
            .iter()
            .enumerate()
            .all(|(u, list)| list.iter().all(|&v| self.adjacency[v as usize].binary_search(&(u as u32)).is_ok()))
    }
}

/// Member lists of every group.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupTable {
    members: Vec<Vec<u32>>,
}

impl GroupTable {
    pub fn new(members: Vec<Vec<u32>>, user_count: usize) -> Result<Self> {
        for (g, list) in members.iter().enumerate() {
            if list.is_empty() {
                return Err(Error::EmptyGroup(g.to_string()));
            }
            if let Some(&bad) = list.iter().find(|&&u| u as usize >= user_count) {
                return Err(Error::DanglingMember { group: g.to_string(), user: bad.to_string() });
            }
            let mut sorted = list.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != list.len() {
                return Err(Error::Shape(format!("group {g} has duplicate members")));
            }
        }
        Ok(GroupTable { members })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self, group: u32) -> &[u32] {
        &self.members[group as usize]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[u32]> {
        self.members.iter().map(Vec::as_slice)
    }
}

/// Original-id mappings for users, items and groups.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IdMaps {
    pub users: IdMap,
    pub items: IdMap,
    pub groups: IdMap,
}

impl IdMaps {
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.users.save(&dir.join(USERS_MAP_FILE))?;
        self.items.save(&dir.join(ITEMS_MAP_FILE))?;
        self.groups.save(&dir.join(GROUPS_MAP_FILE))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(IdMaps {
            users: IdMap::load(&dir.join(USERS_MAP_FILE))?,
            items: IdMap::load(&dir.join(ITEMS_MAP_FILE))?,
            groups: IdMap::load(&dir.join(GROUPS_MAP_FILE))?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub uv: BipartiteGraph,
    pub gv: BipartiteGraph,
    pub social: SocialGraph,
    pub groups: GroupTable,
    pub ids: IdMaps,
}

/// Raw contents of the four dataset files.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetText {
    pub user_item: String,
    pub group_item: String,
    pub groups: String,
    pub social: String,
}

impl DatasetText {
    pub fn read(dir: &Path) -> Result<Self> {
        Ok(DatasetText {
            user_item: read_file(&dir.join(USER_ITEM_FILE))?,
            group_item: read_file(&dir.join(GROUP_ITEM_FILE))?,
            groups: read_file(&dir.join(GROUPS_FILE))?,
            social: read_file(&dir.join(SOCIAL_FILE))?,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| file_error(dir, e))?;
        for (name, body) in [
            (USER_ITEM_FILE, &self.user_item),
            (GROUP_ITEM_FILE, &self.group_item),
            (GROUPS_FILE, &self.groups),
            (SOCIAL_FILE, &self.social),
        ] {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| file_error(&path, e))?;
        }
        Ok(())
    }

    /// Parses the files, assigning fresh dense ids in order of first
    /// appearance.
    pub fn parse(&self) -> Result<Dataset> {
        self.parse_with(IdMaps::default())
    }

    /// Parses the files starting from existing id mappings; ids not present
    /// in `ids` are appended.
    pub fn parse_with(&self, mut ids: IdMaps) -> Result<Dataset> {
        let mut uv_edges = Vec::new();
        for (line, f) in records(&self.user_item) {
            if f.len() != 3 && f.len() != 4 {
                return Err(parse_error(USER_ITEM_FILE, line, "expected user, item, weight, [timestamp]"));
            }
            let weight: f64 = f[2].parse().map_err(|_| parse_error(USER_ITEM_FILE, line, "weight is not a number"))?;
            if !(weight > 0.0 && weight.is_finite()) {
                return Err(Error::BadWeight { file: USER_ITEM_FILE.into(), line, weight });
            }
            let timestamp = match f.get(3) {
                Some(t) => Some(parse_timestamp(t, USER_ITEM_FILE, line)?),
                None => None,
            };
            uv_edges.push(Edge { left: ids.users.intern(f[0]), item: ids.items.intern(f[1]), weight, timestamp });
        }

        let mut pairs = Vec::new();
        for (line, f) in records(&self.social) {
            if f.len() != 2 {
                return Err(parse_error(SOCIAL_FILE, line, "expected user, user"));
            }
            pairs.push((ids.users.intern(f[0]), ids.users.intern(f[1])));
        }

        let mut members: Vec<Option<Vec<u32>>> = vec![None; ids.groups.len()];
        for (line, f) in records(&self.groups) {
            if f.len() != 2 {
                return Err(parse_error(GROUPS_FILE, line, "expected group, members"));
            }
            let group = ids.groups.intern(f[0]) as usize;
            let mut list = Vec::new();
            for name in f[1].split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let user = ids
                    .users
                    .get(name)
                    .ok_or_else(|| Error::DanglingMember { group: f[0].to_string(), user: name.to_string() })?;
                if !list.contains(&user) {
                    list.push(user);
                }
            }
            if list.is_empty() {
                return Err(Error::EmptyGroup(f[0].to_string()));
            }
            if members.len() <= group {
                members.resize(group + 1, None);
            }
            members[group] = Some(list);
        }

        let mut gv_edges = Vec::new();
        for (line, f) in records(&self.group_item) {
            if f.len() != 3 {
                return Err(parse_error(GROUP_ITEM_FILE, line, "expected group, item, timestamp"));
            }
            let group = ids
                .groups
                .get(f[0])
                .filter(|&g| members.get(g as usize).is_some_and(Option::is_some))
                .ok_or_else(|| Error::UnknownGroup(f[0].to_string()))?;
            gv_edges.push(Edge {
                left: group,
                item: ids.items.intern(f[1]),
                weight: 1.0,
                timestamp: Some(parse_timestamp(f[2], GROUP_ITEM_FILE, line)?),
            });
        }

        let user_count = ids.users.len();
        let item_count = ids.items.len();
        let members = members
            .into_iter()
            .enumerate()
            .map(|(g, m)| m.ok_or_else(|| Error::EmptyGroup(ids.groups.name(g as u32).to_string())))
            .collect::<Result<Vec<_>>>()?;

        let uv = BipartiteGraph::new(user_count, item_count, uv_edges, DuplicatePolicy::Sum)?;
        let gv = BipartiteGraph::new(ids.groups.len(), item_count, gv_edges, DuplicatePolicy::Unit)?;
        let (social, one_way) = SocialGraph::from_pairs(user_count, &pairs)?;
        if one_way > 0 {
            log::warn!("{SOCIAL_FILE}: {one_way} edges listed in one direction only; symmetrized");
        }
        let groups = GroupTable::new(members, user_count)?;
        Ok(Dataset { uv, gv, social, groups, ids })
    }
}

/// Loads the four dataset files in `dir`.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    DatasetText::read(dir)?.parse()
}

/// Loads `dir` reusing saved id mappings (see [`IdMaps::save`]).
pub fn load_dataset_with_ids(dir: &Path, ids: IdMaps) -> Result<Dataset> {
    DatasetText::read(dir)?.parse_with(ids)
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| file_error(path, e))
}

fn file_error(path: &Path, source: std::io::Error) -> Error {
    Error::File { path: path.display().to_string(), source }
}

fn parse_error(file: &str, line: usize, msg: &str) -> Error {
    Error::Parse { file: file.to_string(), line, msg: msg.to_string() }
}

fn parse_timestamp(field: &str, file: &str, line: usize) -> Result<i64> {
    field.parse().map_err(|_| parse_error(file, line, "timestamp is not an integer"))
}

/// Non-comment, non-blank lines split on tabs, with 1-based line numbers.
fn records(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            None
        } else {
            Some((i + 1, line.split('\t').map(str::trim).collect()))
        }
    })
}
