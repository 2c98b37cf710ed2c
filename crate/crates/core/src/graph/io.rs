use std::fmt::Write as _;
use std::path::Path;

use super::{EdgeKind, UniversalGraph};
use crate::error::{Error, Result};
use crate::textio::{display, fields, parse_usize, read_lines, tokens, write_file};

/// Loads a graph from `dir`:
///
/// * `entities.txt`: `id<TAB>surface tokens`
/// * `kg_relations.txt` (optional): `relation-id<TAB>surface tokens`
/// * `kg_edges.tsv`: `head<TAB>relation<TAB>tail`
/// * `text_edges.tsv`: `head<TAB>pos1<TAB>tail<TAB>pos2<TAB>sentence tokens`
///
/// Relations missing from `kg_relations.txt` get the default surface.
pub fn load_graph(dir: &Path) -> Result<UniversalGraph> {
    let mut g = UniversalGraph::new();
    let path = dir.join("entities.txt");
    for (n, line) in read_lines(&path)? {
        let f = fields(&line, 2, &path, n)?;
        g.add_entity(f[0], tokens(f[1], &path, n)?).map_err(|e| Error::parse(display(&path), n, e.to_string()))?;
    }
    let path = dir.join("kg_relations.txt");
    if path.exists() {
        for (n, line) in read_lines(&path)? {
            let f = fields(&line, 2, &path, n)?;
            g.add_relation(f[0], Some(tokens(f[1], &path, n)?));
        }
    }
    let path = dir.join("kg_edges.tsv");
    for (n, line) in read_lines(&path)? {
        let f = fields(&line, 3, &path, n)?;
        g.add_relation(f[1], None);
        g.add_kg_edge(f[0], f[1], f[2]).map_err(|e| Error::parse(display(&path), n, e.to_string()))?;
    }
    let path = dir.join("text_edges.tsv");
    for (n, line) in read_lines(&path)? {
        let f = fields(&line, 5, &path, n)?;
        let pos1 = parse_usize(f[1], "pos1", &path, n)?;
        let pos2 = parse_usize(f[3], "pos2", &path, n)?;
        let sentence = tokens(f[4], &path, n)?;
        g.add_text_edge(&sentence, f[0], pos1, f[2], pos2)
            .map_err(|e| Error::parse(display(&path), n, e.to_string()))?;
    }
    Ok(g)
}

/// Writes the files read by [`load_graph`].
pub fn write_graph(g: &UniversalGraph, dir: &Path) -> Result<()> {
    let mut s = String::new();
    for e in g.entities() {
        let _ = writeln!(s, "{}\t{}", e.id, e.surface.join(" "));
    }
    write_file(&dir.join("entities.txt"), &s)?;

    let mut s = String::new();
    for (id, surface) in g.relations() {
        let _ = writeln!(s, "{id}\t{}", surface.join(" "));
    }
    write_file(&dir.join("kg_relations.txt"), &s)?;

    let (mut kg, mut text) = (String::new(), String::new());
    for e in g.edges() {
        let (src, dst) = (&g.entity(e.src).id, &g.entity(e.dst).id);
        match e.kind {
            EdgeKind::Kg { relation } => {
                let _ = writeln!(kg, "{src}\t{}\t{dst}", g.relations()[relation].0);
            }
            EdgeKind::Text { sentence, src_pos, dst_pos } => {
                let _ = writeln!(text, "{src}\t{src_pos}\t{dst}\t{dst_pos}\t{}", g.sentence(sentence).join(" "));
            }
        }
    }
    write_file(&dir.join("kg_edges.tsv"), &kg)?;
    write_file(&dir.join("text_edges.tsv"), &text)
}

/// Builds a graph from an entity file, KG triplets (`head<TAB>relation<TAB>tail`)
/// and sentence files (`head<TAB>tail<TAB>pos1<TAB>pos2<TAB>tokens`), each
/// sentence becoming one textual edge.
pub fn build_graph(entities: &Path, triplets: &[&Path], sentences: &[&Path]) -> Result<UniversalGraph> {
    let mut g = UniversalGraph::new();
    for (n, line) in read_lines(entities)? {
        let f = fields(&line, 2, entities, n)?;
        g.add_entity(f[0], tokens(f[1], entities, n)?).map_err(|e| Error::parse(display(entities), n, e.to_string()))?;
    }
    for &path in triplets {
        for (n, line) in read_lines(path)? {
            let f = fields(&line, 3, path, n)?;
            g.add_relation(f[1], None);
            g.add_kg_edge(f[0], f[1], f[2]).map_err(|e| Error::parse(display(path), n, e.to_string()))?;
        }
    }
    for &path in sentences {
        for (n, line) in read_lines(path)? {
            let f = fields(&line, 5, path, n)?;
            let pos1 = parse_usize(f[2], "pos1", path, n)?;
            let pos2 = parse_usize(f[3], "pos2", path, n)?;
            let sentence = tokens(f[4], path, n)?;
            g.add_text_edge(&sentence, f[0], pos1, f[1], pos2).map_err(|e| Error::parse(display(path), n, e.to_string()))?;
        }
    }
    Ok(g)
}
