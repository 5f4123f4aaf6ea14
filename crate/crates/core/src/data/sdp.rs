//! SemEval 2015 semantic dependency (SDP) tab-separated format.
//!
//! Each sentence is a block of rows `id form lemma pos top pred frame arg…`
//! followed by a blank line. There is one argument column per row whose
//! `pred` column is `+`, in sentence order; cell `k` of row `r` names the
//! label of the edge from the k-th predicate to token `r` (`_` for none).
//!
//! Reading also accepts the frame-less 2014 layout and bare
//! `id form lemma pos` rows (unannotated parser input). Comment lines are
//! dropped, except that the last comment before a block's first row is kept
//! as the sentence id and re-emitted by the writer.

use std::io::{self, BufRead, Write};

use thiserror::Error;

use super::graph::{Edge, GraphError, SemanticGraph, Token};

pub const HEADER: &str = "#SDP 2015";

#[derive(Debug, Error)]
pub enum SdpError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("sentence ending at line {line}: {source}")]
    Graph {
        line: usize,
        #[source]
        source: GraphError,
    },
}

struct Row {
    line: usize,
    cols: Vec<String>,
}

fn parse_err(line: usize, msg: impl Into<String>) -> SdpError {
    SdpError::Parse {
        line,
        msg: msg.into(),
    }
}

fn flag(line: usize, what: &str, v: &str) -> Result<bool, SdpError> {
    match v {
        "+" => Ok(true),
        "-" => Ok(false),
        other => Err(parse_err(line, format!("{what} column must be + or -, got `{other}`"))),
    }
}

fn finish_block(id: Option<String>, rows: &[Row]) -> Result<SemanticGraph, SdpError> {
    let first = &rows[0];
    let last_line = rows.last().map_or(first.line, |r| r.line);
    let bare = first.cols.len() == 4;

    let mut tokens = Vec::with_capacity(rows.len());
    let mut tops = Vec::new();
    let mut preds = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let c = &row.cols;
        let min = if bare { 4 } else { 6 };
        if c.len() < min || (bare && c.len() != 4) {
            return Err(parse_err(
                row.line,
                format!("expected {} columns, found {}", if bare { 4 } else { 6 }, c.len()),
            ));
        }
        let index: usize = c[0]
            .parse()
            .map_err(|_| parse_err(row.line, format!("bad token id `{}`", c[0])))?;
        if index != i + 1 {
            return Err(parse_err(
                row.line,
                format!("token id {index} where {} was expected", i + 1),
            ));
        }
        if c[1].is_empty() {
            return Err(parse_err(row.line, "empty form"));
        }
        tokens.push(Token::new(index, &c[1], &c[2], &c[3]));
        if !bare {
            if flag(row.line, "top", &c[4])? {
                tops.push(index);
            }
            if flag(row.line, "pred", &c[5])? {
                preds.push(index);
            }
        }
    }
    if bare {
        return SemanticGraph::new(id, tokens, [], [])
            .map_err(|source| SdpError::Graph { line: last_line, source });
    }

    let p = preds.len();
    let has_frame = match first.cols.len() {
        n if n == 7 + p => true,
        n if n == 6 + p => false,
        n => {
            return Err(parse_err(
                first.line,
                format!("{n} columns for {p} predicates (expected {} or {})", 7 + p, 6 + p),
            ))
        }
    };
    let width = if has_frame { 7 + p } else { 6 + p };
    let arg_start = width - p;
    let mut edges = Vec::new();
    for (row, token) in rows.iter().zip(tokens.iter_mut()) {
        if row.cols.len() != width {
            return Err(parse_err(
                row.line,
                format!(
                    "ragged row: {} argument columns for {p} predicates",
                    row.cols.len() as isize - arg_start as isize
                ),
            ));
        }
        if has_frame {
            token.frame = row.cols[6].clone();
        }
        for (k, cell) in row.cols[arg_start..].iter().enumerate() {
            if cell != "_" {
                edges.push(Edge::new(preds[k], token.index, cell.as_str()));
            }
        }
    }
    SemanticGraph::new(id, tokens, edges, tops).map_err(|source| SdpError::Graph {
        line: last_line,
        source,
    })
}

/// Reads every sentence block from `source`.
pub fn read_sdp<R: BufRead>(source: R) -> Result<Vec<SemanticGraph>, SdpError> {
    let mut graphs = Vec::new();
    let mut rows: Vec<Row> = Vec::new();
    let mut id: Option<String> = None;
    for (n, line) in source.lines().enumerate() {
        let line_no = n + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            if !rows.is_empty() {
                graphs.push(finish_block(id.take(), &rows)?);
                rows.clear();
            }
            id = None;
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if rows.is_empty() && !line.starts_with(HEADER) {
                id = Some(comment.to_string());
            }
            continue;
        }
        rows.push(Row {
            line: line_no,
            cols: line.split('\t').map(str::to_string).collect(),
        });
    }
    if !rows.is_empty() {
        graphs.push(finish_block(id, &rows)?);
    }
    Ok(graphs)
}

pub fn read_sdp_str(text: &str) -> Result<Vec<SemanticGraph>, SdpError> {
    read_sdp(text.as_bytes())
}

/// Writes `graphs` in the 2015 layout. Predicates are exactly the tokens
/// heading at least one edge.
pub fn write_sdp<W: Write>(graphs: &[SemanticGraph], mut sink: W) -> io::Result<()> {
    writeln!(sink, "{HEADER}")?;
    for g in graphs {
        if let Some(id) = &g.id {
            writeln!(sink, "#{id}")?;
        }
        let preds = g.predicates();
        for t in g.tokens() {
            let top = if g.tops().contains(&t.index) { "+" } else { "-" };
            let pred = if preds.binary_search(&t.index).is_ok() { "+" } else { "-" };
            write!(
                sink,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                t.index, t.form, t.lemma, t.pos, top, pred, t.frame
            )?;
            for &h in &preds {
                write!(sink, "\t{}", g.label(h, t.index).unwrap_or("_"))?;
            }
            writeln!(sink)?;
        }
        writeln!(sink)?;
    }
    sink.flush()
}

pub fn write_sdp_string(graphs: &[SemanticGraph]) -> String {
    let mut buf = Vec::new();
    write_sdp(graphs, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("graphs hold UTF-8 text")
}

#[cfg(test)]
mod tests {
    use super::*;

    const WANTS: &str = "#SDP 2015
#20001001
1\tMary\tMary\tNNP\t-\t-\tnamed:x-c\tARG1\tARG1\t_
2\twants\twant\tVBZ\t+\t+\tv:e-i-h\t_\t_\t_
3\tto\tto\tTO\t-\t-\t_\t_\t_\t_
4\tbuy\tbuy\tVB\t-\t+\tv:e-i-p\tARG2\t_\t_
5\ta\ta\tDT\t-\t+\tq:i-h-h\t_\t_\t_
6\tbook\tbook\tNN\t-\t-\tn:x\t_\tARG2\tBV

";

    #[test]
    fn reads_dm_block() {
        let g = &read_sdp_str(WANTS).unwrap()[0];
        let edges: Vec<(usize, usize, String)> =
            g.edges().map(|e| (e.head, e.dependent, e.label)).collect();
        let mut expect = vec![
            (2, 1, "ARG1".to_string()),
            (4, 1, "ARG1".to_string()),
            (2, 4, "ARG2".to_string()),
            (4, 6, "ARG2".to_string()),
            (5, 6, "BV".to_string()),
        ];
        expect.sort();
        assert_eq!(edges, expect);
        assert_eq!(g.tops().iter().copied().collect::<Vec<_>>(), vec![2]);
        assert_eq!(g.id.as_deref(), Some("20001001"));
        assert_eq!(g.tokens()[3].frame, "v:e-i-p");
        assert!(g.is_dag());
    }

    #[test]
    fn writer_regenerates_the_block() {
        let graphs = read_sdp_str(WANTS).unwrap();
        assert_eq!(write_sdp_string(&graphs), WANTS);
    }

    #[test]
    fn edgeless_sentence() {
        let text = "1\tHi\thi\tUH\t-\t-\t_\n2\t!\t!\t.\t-\t-\t_\n";
        let graphs = read_sdp_str(text).unwrap();
        assert_eq!(graphs[0].edge_count(), 0);
        assert!(graphs[0].tops().is_empty());
        let out = write_sdp_string(&graphs);
        assert!(out.lines().skip(1).take(2).all(|l| l.ends_with("\t-\t-\t_")));
    }

    #[test]
    fn ragged_row_reports_line() {
        let text = "#SDP 2015\n1\ta\ta\tDT\t-\t+\t_\t_\n2\tb\tb\tNN\t-\t-\t_\n";
        match read_sdp_str(text) {
            Err(SdpError::Parse { line, msg }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("ragged"), "{msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_contiguous_ids() {
        let text = "1\ta\ta\tDT\t-\t-\t_\n3\tb\tb\tNN\t-\t-\t_\n";
        assert!(matches!(read_sdp_str(text), Err(SdpError::Parse { line: 2, .. })));
    }

    #[test]
    fn frameless_and_bare_rows() {
        let sdp2014 = "1\ta\ta\tDT\t-\t+\t_\n2\tdog\tdog\tNN\t+\t-\tBV\n";
        let g = &read_sdp_str(sdp2014).unwrap()[0];
        assert_eq!(g.label(1, 2), Some("BV"));
        assert_eq!(g.tokens()[0].frame, "_");

        let bare = "1\tThe\tthe\tDT\n2\tdog\tdog\tNN\n";
        let g = &read_sdp_str(bare).unwrap()[0];
        assert_eq!(g.len(), 2);
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn empty_input_has_no_graphs() {
        assert!(read_sdp_str("").unwrap().is_empty());
        assert!(read_sdp_str("#SDP 2015\n\n").unwrap().is_empty());
    }

    #[test]
    fn multiple_blocks_and_crlf() {
        let text = WANTS.replace('\n', "\r\n") + "#2\r\n1\tx\tx\tX\t+\t-\t_\r\n";
        let graphs = read_sdp_str(&text).unwrap();
        assert_eq!(graphs.len(), 2);
        assert_eq!(graphs[1].id.as_deref(), Some("2"));
    }
}
