use std::collections::BTreeSet;

use super::{GoldAlignment, Link};
use crate::error::{Error, Result};

/// Parses one Pharaoh line. `i-j` is a sure link, `ipj` a possible-only link.
pub fn parse_pharaoh(line: &str) -> Result<GoldAlignment> {
    let mut sure = BTreeSet::new();
    let mut possible = BTreeSet::new();
    for token in line.split_whitespace() {
        let (sep, set) = if token.contains('-') {
            ('-', &mut sure)
        } else if token.contains('p') {
            ('p', &mut possible)
        } else {
            return Err(malformed(token, "missing `-` or `p` separator"));
        };
        let (i, j) = token.split_once(sep).expect("separator present");
        set.insert((parse_index(token, i)?, parse_index(token, j)?));
    }
    Ok(GoldAlignment::new(sure, possible))
}

fn parse_index(token: &str, s: &str) -> Result<usize> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return Err(malformed(token, "index is not a non-negative integer"));
    }
    s.parse()
        .map_err(|_| malformed(token, "index is not a non-negative integer"))
}

fn malformed(token: &str, reason: &str) -> Error {
    Error::Pharaoh {
        token: token.to_owned(),
        reason: reason.to_owned(),
    }
}

/// Renders links sorted lexicographically; sure links as `i-j`, possible-only
/// links as `ipj`.
pub fn format_pharaoh(gold: &GoldAlignment) -> String {
    let mut out = String::new();
    for &(i, j) in gold.possible() {
        if !out.is_empty() {
            out.push(' ');
        }
        let sep = if gold.is_sure((i, j)) { '-' } else { 'p' };
        out.push_str(&format!("{i}{sep}{j}"));
    }
    out
}

/// Renders a plain link set with `-` separators.
pub fn format_links<'a>(links: impl IntoIterator<Item = &'a Link>) -> String {
    let mut sorted: Vec<Link> = links.into_iter().copied().collect();
    sorted.sort_unstable();
    sorted
        .iter()
        .map(|(i, j)| format!("{i}-{j}"))
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_sure_and_possible() {
        let g = parse_pharaoh("0-0 1-2 3p1").unwrap();
        assert_eq!(g.sure().iter().copied().collect::<Vec<_>>(), vec![(0, 0), (1, 2)]);
        assert_eq!(
            g.possible().iter().copied().collect::<Vec<_>>(),
            vec![(0, 0), (1, 2), (3, 1)]
        );
    }

    #[test]
    fn empty_line_is_empty_alignment() {
        let g = parse_pharaoh("").unwrap();
        assert!(g.sure().is_empty() && g.possible().is_empty());
    }

    #[test]
    fn duplicates_collapse() {
        let g = parse_pharaoh("0-0 0-0").unwrap();
        assert_eq!(g.sure().len(), 1);
    }

    #[test]
    fn malformed_tokens_are_rejected_with_text() {
        for bad in ["0-x", "00", "-1", "1-", "0--1", "a-b", "1p", "0-0-0"] {
            let err = parse_pharaoh(bad).unwrap_err();
            assert!(err.to_string().contains(bad), "{bad}: {err}");
        }
    }

    #[test]
    fn formats_sorted() {
        let g = GoldAlignment::from_sure([(1, 2), (0, 0)]);
        assert_eq!(format_pharaoh(&g), "0-0 1-2");
        let g = GoldAlignment::new([], [(0, 1)]);
        assert_eq!(format_pharaoh(&g), "0p1");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn format_then_parse_is_identity(
            sure in proptest::collection::btree_set((0usize..30, 0usize..30), 0..12),
            extra in proptest::collection::btree_set((0usize..30, 0usize..30), 0..12),
        ) {
            let g = GoldAlignment::new(sure, extra);
            prop_assert_eq!(parse_pharaoh(&format_pharaoh(&g)).unwrap(), g);
        }
    }
}
