//! Reader and writer for the TUDataset text layout:
//!
//! * `<name>_A.txt`: one `u, v` pair per line, 1-based global node ids
//! * `<name>_graph_indicator.txt`: 1-based graph id for every node
//! * `<name>_graph_labels.txt`: one raw label per graph
//! * `<name>_node_labels.txt`: optional, one raw label per node

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::warn;

use super::features::{build_node_features, FeaturePolicy};
use super::graph::{GraphDataset, RawDataset, RawGraph};
use crate::error::{GlaError, Result};

/// Counts of input records dropped while canonicalising edges.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ParseStats {
    /// Directed pairs that appeared more than once.
    pub duplicate_edges: usize,
    pub self_loops: usize,
}

fn file_path(dir: &Path, name: &str, suffix: &str) -> PathBuf {
    dir.join(format!("{name}_{suffix}.txt"))
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    if !path.is_file() {
        return Err(GlaError::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim().to_string()))
        .filter(|(_, l)| !l.is_empty())
        .collect())
}

fn parse_int(path: &Path, line: usize, s: &str) -> Result<i64> {
    s.trim().parse::<i64>().map_err(|e| GlaError::Parse {
        file: path.to_path_buf(),
        line,
        msg: format!("cannot parse {s:?} as integer: {e}"),
    })
}

/// Parses the directory and builds node features with the default policy.
pub fn parse_tudataset(dir: &Path, name: &str) -> Result<GraphDataset> {
    let (raw, _) = parse_tudataset_raw(dir, name)?;
    build_node_features(&raw, FeaturePolicy::default_for(&raw))
}

pub fn parse_tudataset_raw(dir: &Path, name: &str) -> Result<(RawDataset, ParseStats)> {
    let a_path = file_path(dir, name, "A");
    let ind_path = file_path(dir, name, "graph_indicator");
    let gl_path = file_path(dir, name, "graph_labels");
    let nl_path = file_path(dir, name, "node_labels");

    // Node -> graph assignment. Graph ids must start at 1 and never skip.
    let indicator_lines = read_lines(&ind_path)?;
    let mut node_graph = Vec::with_capacity(indicator_lines.len());
    let mut prev = 0i64;
    for (line, text) in &indicator_lines {
        let g = parse_int(&ind_path, *line, text)?;
        if g != prev && g != prev + 1 {
            return Err(GlaError::Parse {
                file: ind_path.clone(),
                line: *line,
                msg: format!("graph id {g} after {prev}: ids must be non-decreasing without gaps"),
            });
        }
        prev = g;
        node_graph.push((g - 1) as usize);
    }
    let num_graphs = prev as usize;
    if num_graphs == 0 {
        return Err(GlaError::Dataset(format!("{} lists no nodes", ind_path.display())));
    }

    let mut first_node = vec![usize::MAX; num_graphs];
    let mut node_count = vec![0usize; num_graphs];
    for (node, &g) in node_graph.iter().enumerate() {
        first_node[g] = first_node[g].min(node);
        node_count[g] += 1;
    }

    let label_lines = read_lines(&gl_path)?;
    if label_lines.len() != num_graphs {
        return Err(GlaError::Dataset(format!(
            "{} has {} labels for {} graphs",
            gl_path.display(),
            label_lines.len(),
            num_graphs
        )));
    }
    let raw_labels = label_lines
        .iter()
        .map(|(line, text)| parse_int(&gl_path, *line, text))
        .collect::<Result<Vec<_>>>()?;
    let class_raw_labels: Vec<i64> = raw_labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();

    let node_labels = if nl_path.is_file() {
        let lines = read_lines(&nl_path)?;
        if lines.len() != node_graph.len() {
            return Err(GlaError::Dataset(format!(
                "{} has {} entries for {} nodes",
                nl_path.display(),
                lines.len(),
                node_graph.len()
            )));
        }
        Some(
            lines
                .iter()
                .map(|(line, text)| parse_int(&nl_path, *line, text))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };

    let mut edge_sets: Vec<BTreeSet<(usize, usize)>> = vec![BTreeSet::new(); num_graphs];
    let mut seen = HashSet::new();
    let mut stats = ParseStats::default();
    let total_nodes = node_graph.len() as i64;
    for (line, text) in read_lines(&a_path)? {
        let mut parts = text.split(',');
        let (Some(u), Some(v), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(GlaError::Parse {
                file: a_path.clone(),
                line,
                msg: format!("expected `u, v`, got {text:?}"),
            });
        };
        let u = parse_int(&a_path, line, u)?;
        let v = parse_int(&a_path, line, v)?;
        for x in [u, v] {
            if x < 1 || x > total_nodes {
                return Err(GlaError::Parse {
                    file: a_path.clone(),
                    line,
                    msg: format!("edge references unknown node {x} (dataset has {total_nodes})"),
                });
            }
        }
        let (u, v) = ((u - 1) as usize, (v - 1) as usize);
        let g = node_graph[u];
        if node_graph[v] != g {
            return Err(GlaError::Parse {
                file: a_path.clone(),
                line,
                msg: format!("edge joins nodes of graphs {} and {}", g + 1, node_graph[v] + 1),
            });
        }
        if !seen.insert((u, v)) {
            stats.duplicate_edges += 1;
            continue;
        }
        if u == v {
            stats.self_loops += 1;
            continue;
        }
        let (lu, lv) = (u - first_node[g], v - first_node[g]);
        edge_sets[g].insert((lu.min(lv), lu.max(lv)));
    }
    if stats.duplicate_edges > 0 || stats.self_loops > 0 {
        warn!(
            "{name}: dropped {} duplicate edges and {} self-loops",
            stats.duplicate_edges, stats.self_loops
        );
    }

    let graphs = (0..num_graphs)
        .map(|g| {
            let start = first_node[g];
            let n = node_count[g];
            RawGraph {
                node_count: n,
                edges: edge_sets[g].iter().copied().collect(),
                node_labels: node_labels.as_ref().map(|l| l[start..start + n].to_vec()),
                label: Some(
                    class_raw_labels
                        .binary_search(&raw_labels[g])
                        .expect("label drawn from the same set"),
                ),
            }
        })
        .collect();

    Ok((
        RawDataset {
            name: name.to_string(),
            graphs,
            num_classes: class_raw_labels.len(),
            class_raw_labels,
        },
        stats,
    ))
}

/// Writes the dataset in TUDataset layout. Every undirected edge is emitted
/// in both directions, matching the published benchmark files. Output bytes
/// depend only on the dataset.
pub fn write_tudataset(ds: &RawDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut a = Vec::new();
    let mut ind = Vec::new();
    let mut gl = Vec::new();
    let mut nl = Vec::new();
    let with_node_labels = ds.has_node_labels();
    let mut offset = 0usize;
    for (gi, g) in ds.graphs.iter().enumerate() {
        let mut directed: Vec<(usize, usize)> = g.edges.iter().flat_map(|&(u, v)| [(u, v), (v, u)]).collect();
        directed.sort_unstable();
        for (u, v) in directed {
            writeln!(a, "{}, {}", u + offset + 1, v + offset + 1)?;
        }
        for _ in 0..g.node_count {
            writeln!(ind, "{}", gi + 1)?;
        }
        let class = g
            .label
            .ok_or_else(|| GlaError::Dataset(format!("graph {gi} has no label to write")))?;
        writeln!(gl, "{}", ds.class_raw_labels[class])?;
        if with_node_labels {
            for l in g.node_labels.as_ref().expect("checked above") {
                writeln!(nl, "{l}")?;
            }
        }
        offset += g.node_count;
    }
    let name = &ds.name;
    fs::write(file_path(dir, name, "A"), a)?;
    fs::write(file_path(dir, name, "graph_indicator"), ind)?;
    fs::write(file_path(dir, name, "graph_labels"), gl)?;
    if with_node_labels {
        fs::write(file_path(dir, name, "node_labels"), nl)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, suffix: &str, body: &str) {
        fs::write(file_path(dir, name, suffix), body).unwrap();
    }

    #[test]
    fn minimal_single_edge_graph() {
        let tmp = tempfile::tempdir().unwrap();
        write(tmp.path(), "T", "A", "1, 2\n2, 1\n");
        write(tmp.path(), "T", "graph_indicator", "1\n1\n");
        write(tmp.path(), "T", "graph_labels", "1\n");
        let (raw, stats) = parse_tudataset_raw(tmp.path(), "T").unwrap();
        assert_eq!(stats, ParseStats::default());
        assert_eq!(raw.graphs.len(), 1);
        assert_eq!(raw.graphs[0].node_count, 2);
        assert_eq!(raw.graphs[0].edges, vec![(0, 1)]);
        assert_eq!(raw.graphs[0].label, Some(0));
        assert_eq!(raw.num_classes, 1);
    }

    #[test]
    fn local_ids_labels_and_dropped_edges() {
        let tmp = tempfile::tempdir().unwrap();
        write(tmp.path(), "T", "A", "1,2\n1,2\n3,3\n3, 4  \n4,5\n\n");
        write(tmp.path(), "T", "graph_indicator", "1\n1\n2\n2\n2\n");
        write(tmp.path(), "T", "graph_labels", "-1\n1\n");
        write(tmp.path(), "T", "node_labels", "0\n1\n2\n0\n0\n");
        let (raw, stats) = parse_tudataset_raw(tmp.path(), "T").unwrap();
        assert_eq!(stats.duplicate_edges, 1);
        assert_eq!(stats.self_loops, 1);
        assert_eq!(raw.graphs[1].edges, vec![(0, 1), (1, 2)]);
        assert_eq!(raw.class_raw_labels, vec![-1, 1]);
        assert_eq!(raw.graphs[0].label, Some(0));
        assert_eq!(raw.graphs[1].label, Some(1));
        assert_eq!(raw.graphs[1].node_labels.as_deref(), Some(&[2, 0, 0][..]));
    }

    #[test]
    fn missing_file_is_reported() {
        let tmp = tempfile::tempdir().unwrap();
        write(tmp.path(), "T", "A", "1, 2\n");
        write(tmp.path(), "T", "graph_indicator", "1\n1\n");
        let err = parse_tudataset_raw(tmp.path(), "T").unwrap_err();
        assert!(matches!(err, GlaError::MissingFile(p) if p.ends_with("T_graph_labels.txt")));
    }

    #[test]
    fn unknown_node_names_file_and_line() {
        let tmp = tempfile::tempdir().unwrap();
        write(tmp.path(), "T", "A", "1, 2\n2, 9\n");
        write(tmp.path(), "T", "graph_indicator", "1\n1\n");
        write(tmp.path(), "T", "graph_labels", "0\n");
        match parse_tudataset_raw(tmp.path(), "T").unwrap_err() {
            GlaError::Parse { file, line, .. } => {
                assert!(file.ends_with("T_A.txt"));
                assert_eq!(line, 2);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn indicator_gap_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        write(tmp.path(), "T", "A", "");
        write(tmp.path(), "T", "graph_indicator", "1\n3\n");
        write(tmp.path(), "T", "graph_labels", "0\n0\n0\n");
        assert!(matches!(
            parse_tudataset_raw(tmp.path(), "T").unwrap_err(),
            GlaError::Parse { line: 2, .. }
        ));
    }

    #[test]
    fn bad_integer_is_a_parse_error() {
        let tmp = tempfile::tempdir().unwrap();
        write(tmp.path(), "T", "A", "1, x\n");
        write(tmp.path(), "T", "graph_indicator", "1\n1\n");
        write(tmp.path(), "T", "graph_labels", "0\n");
        assert!(matches!(
            parse_tudataset_raw(tmp.path(), "T").unwrap_err(),
            GlaError::Parse { line: 1, .. }
        ));
    }
}
