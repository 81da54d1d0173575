//! Symbolic query/answer tables: every key with the query each server
//! receives and the answer it returns, written in terms of message symbols.

use std::fmt::Write;

use crate::error::Result;
use crate::params::SystemParams;
use crate::scheme::{encode_queries, enumerate_key_space, Query, RandomKey};

/// One row of the table for a requested message.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TableRow {
    pub prob: String,
    pub f: String,
    pub pi_or_n: String,
    pub queries: Vec<String>,
    pub answers: Vec<String>,
}

fn message_name(m: usize, k: usize) -> String {
    if k <= 26 {
        ((b'a' + (m - 1) as u8) as char).to_string()
    } else {
        format!("w{m}.")
    }
}

/// Answer to `q` written with message letters: `a1⊕b2`, `a1,a2` or `∅`.
pub fn symbolic_answer(q: &Query, k: usize, l: usize) -> String {
    match q {
        Query::Escape(m) => (1..=l)
            .map(|i| format!("{}{i}", message_name(*m, k)))
            .collect::<Vec<_>>()
            .join(","),
        Query::Vector(v) => {
            let terms: Vec<String> = v
                .iter()
                .enumerate()
                .filter(|(_, &i)| i != 0)
                .map(|(m, &i)| format!("{}{i}", message_name(m + 1, k)))
                .collect();
            if terms.is_empty() {
                "∅".to_string()
            } else {
                terms.join("⊕")
            }
        }
    }
}

fn digits(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect()
}

/// Direct keys by server, then coded keys by `f` ascending and, within each
/// `f`, permutations in descending lexicographic order.
pub fn table_keys(params: &SystemParams) -> Result<Vec<RandomKey>> {
    let mut keys = enumerate_key_space(params)?;
    keys.sort_by(|a, b| match (a, b) {
        (RandomKey::Coded { f: fa, pi: pa }, RandomKey::Coded { f: fb, pi: pb }) => {
            fa.cmp(fb).then(pb.cmp(pa))
        }
        _ => a.cmp(b),
    });
    Ok(keys)
}

pub fn table_rows(params: &SystemParams, k: usize) -> Result<Vec<TableRow>> {
    let (kk, l) = (params.k(), params.l());
    table_keys(params)?
        .into_iter()
        .map(|key| {
            let queries = encode_queries(k, &key, params)?;
            let (prob, f, pi_or_n) = match &key {
                RandomKey::Direct { direct } => (
                    format!("p_(#)^{{{k},{direct}}}"),
                    "#".to_string(),
                    direct.to_string(),
                ),
                RandomKey::Coded { f, pi } => {
                    let image: Vec<String> = pi.image().iter().map(|x| x.to_string()).collect();
                    (
                        format!("p_({})^{{{k},[{}]}}", digits(f), image.join(",")),
                        digits(f),
                        format!("({})", image.join(",")),
                    )
                }
            };
            Ok(TableRow {
                prob,
                f,
                pi_or_n,
                answers: queries.iter().map(|q| symbolic_answer(q, kk, l)).collect(),
                queries: queries.iter().map(|q| q.to_string()).collect(),
            })
        })
        .collect()
}

/// One pipe-separated sub-table per requested message.
pub fn render_table(params: &SystemParams) -> Result<String> {
    let mut out = String::new();
    for k in 1..=params.k() {
        let rows = table_rows(params, k)?;
        let _ = writeln!(out, "Requesting message k={k}");
        let mut header = vec!["Prob.".to_string(), "F".to_string(), "pi or n".to_string()];
        for n in 1..=params.n() {
            header.push(format!("Q{n}"));
            header.push(format!("A{n}"));
        }
        let _ = writeln!(out, "{}", header.join(" | "));
        for r in rows {
            let mut cells = vec![r.prob, r.f, r.pi_or_n];
            for (q, a) in r.queries.into_iter().zip(r.answers) {
                cells.push(q);
                cells.push(a);
            }
            let _ = writeln!(out, "{}", cells.join(" | "));
        }
        if k < params.k() {
            out.push('\n');
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn answers_are_written_symbolically() {
        assert_eq!(symbolic_answer(&Query::Vector(vec![2, 1]), 2, 2), "a2⊕b1");
        assert_eq!(symbolic_answer(&Query::Vector(vec![0, 0]), 2, 2), "∅");
        assert_eq!(symbolic_answer(&Query::Escape(2), 2, 2), "b1,b2");
    }

    #[test]
    fn rows_follow_descending_permutations() {
        let p = SystemParams::homogeneous(3, 2).unwrap();
        let rows = table_rows(&p, 1).unwrap();
        assert_eq!(rows.len(), 21);
        assert_eq!(rows[0].queries, ["#1", "00", "00"]);
        assert_eq!(rows[3].pi_or_n, "(2,1,0)");
        assert_eq!(rows[8].pi_or_n, "(0,1,2)");
        assert_eq!(rows[9].answers, ["a1⊕b1", "b1", "a2⊕b1"]);
    }
}
