use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{
    object_from_field, object_to_field, EntityDef, Fact, IntegrityError, KbParts, KnowledgeBase,
    Range, RelationDef, TypeDef,
};
use crate::value::LiteralKind;

#[derive(Debug, Error)]
pub enum KbIoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Integrity(#[from] IntegrityError),
}

const TYPES: &str = "types.tsv";
const RELATIONS: &str = "relations.tsv";
const ENTITIES: &str = "entities.tsv";
const FACTS: &str = "facts.tsv";

/// Reads the four TSV files of `dir` without integrity checks.
pub fn load_kb_parts(dir: &Path) -> Result<KbParts, KbIoError> {
    let mut parts = KbParts::default();

    for_each_row(&dir.join(TYPES), 2, |cols| {
        parts.types.push(TypeDef {
            id: cols[0].to_string(),
            label: cols[1].to_string(),
        });
        Ok(())
    })?;

    for_each_row(&dir.join(RELATIONS), 4, |cols| {
        let range = match cols[3] {
            "number:" => Range::Literal(LiteralKind::Number),
            "string:" => Range::Literal(LiteralKind::String),
            t => Range::Type(t.to_string()),
        };
        parts.relations.push(RelationDef {
            id: cols[0].to_string(),
            label: cols[1].to_string(),
            domain: cols[2].to_string(),
            range,
        });
        Ok(())
    })?;

    for_each_row(&dir.join(ENTITIES), 4, |cols| {
        let types: BTreeSet<String> = cols[2]
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(String::from)
            .collect();
        let aliases = cols[3]
            .split('|')
            .map(str::trim)
            .filter(|a| !a.is_empty())
            .map(String::from)
            .collect();
        parts.entities.push(EntityDef {
            id: cols[0].to_string(),
            label: cols[1].to_string(),
            types,
            aliases,
        });
        Ok(())
    })?;

    for_each_row(&dir.join(FACTS), 3, |cols| {
        let object = object_from_field(cols[2])?;
        parts.facts.push(Fact::new(cols[0], cols[1], object));
        Ok(())
    })?;

    Ok(parts)
}

/// Loads and validates a KB directory.
pub fn load_kb(dir: &Path) -> Result<KnowledgeBase, KbIoError> {
    Ok(KnowledgeBase::from_parts(load_kb_parts(dir)?)?)
}

/// Writes the KB in the same TSV layout `load_kb` reads.
pub fn write_kb(kb: &KnowledgeBase, dir: &Path) -> Result<(), KbIoError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| KbIoError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let mut types = String::from("# id\tlabel\n");
    for t in kb.types() {
        let _ = writeln!(types, "{}\t{}", t.id, t.label);
    }
    let mut relations = String::from("# id\tlabel\tdomain\trange\n");
    for r in kb.relations() {
        let range = match &r.range {
            Range::Type(t) => t.clone(),
            Range::Literal(k) => format!("{k}:"),
        };
        let _ = writeln!(relations, "{}\t{}\t{}\t{}", r.id, r.label, r.domain, range);
    }
    let mut entities = String::from("# id\tlabel\ttypes\taliases\n");
    for e in kb.entities() {
        let types: Vec<&str> = e.types.iter().map(String::as_str).collect();
        let _ = writeln!(
            entities,
            "{}\t{}\t{}\t{}",
            e.id,
            e.label,
            types.join(","),
            e.aliases.join("|")
        );
    }
    let mut facts = String::from("# subject\trelation\tobject\n");
    for f in kb.facts() {
        let _ = writeln!(
            facts,
            "{}\t{}\t{}",
            f.subject,
            f.relation,
            object_to_field(&f.object)
        );
    }

    for (name, body) in [
        (TYPES, types),
        (RELATIONS, relations),
        (ENTITIES, entities),
        (FACTS, facts),
    ] {
        let path = dir.join(name);
        fs::write(&path, body).map_err(io_err(&path))?;
    }
    Ok(())
}

fn for_each_row(
    path: &Path,
    columns: usize,
    mut row: impl FnMut(&[&str]) -> Result<(), String>,
) -> Result<(), KbIoError> {
    let text = fs::read_to_string(path).map_err(|source| KbIoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    for (idx, line) in text.lines().enumerate() {
        let parse_err = |message: String| KbIoError::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols: Vec<&str> = line.split('\t').collect();
        // A trailing empty alias column may be dropped by editors.
        if cols.len() == columns - 1 && columns == 4 && path.ends_with(ENTITIES) {
            cols.push("");
        }
        if cols.len() != columns {
            return Err(parse_err(format!(
                "expected {columns} tab-separated columns, found {}",
                cols.len()
            )));
        }
        row(&cols).map_err(parse_err)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::toy_kb;

    fn scratch_dir(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("kbqa-io-{name}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn write_then_load_preserves_kb() {
        let dir = scratch_dir("roundtrip");
        let kb = toy_kb();
        write_kb(&kb, &dir).unwrap();
        let back = load_kb(&dir).unwrap();
        assert_eq!(back.to_parts(), kb.to_parts());
        fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn empty_facts_file() {
        let dir = scratch_dir("nofacts");
        write_kb(&toy_kb(), &dir).unwrap();
        fs::write(dir.join(FACTS), "# nothing here\n").unwrap();
        let kb = load_kb(&dir).unwrap();
        assert_eq!(kb.counts().facts, 0);
        fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn parse_error_reports_line() {
        let dir = scratch_dir("badline");
        write_kb(&toy_kb(), &dir).unwrap();
        fs::write(dir.join(FACTS), "# header\nc_manning\tworks_at\n").unwrap();
        let err = load_kb(&dir).unwrap_err();
        assert!(matches!(err, KbIoError::Parse { line: 2, .. }), "{err}");
        fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn bad_number_literal_is_a_parse_error() {
        let dir = scratch_dir("badnum");
        write_kb(&toy_kb(), &dir).unwrap();
        fs::write(dir.join(FACTS), "stanford\tlocated_in\tnumber:12x\n").unwrap();
        let err = load_kb(&dir).unwrap_err();
        assert!(matches!(err, KbIoError::Parse { line: 1, .. }), "{err}");
        fs::remove_dir_all(dir).ok();
    }
}
