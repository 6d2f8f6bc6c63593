//! Ranked signal lists shared by every detection algorithm.

use std::fmt;

use crate::codes::CodeId;

/// The seven algorithm variants a run can score with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Algorithm {
    Ror05,
    Mutara60,
    Mutara180,
    Hunt60,
    Hunt180,
    Tpd1,
    Tpd2,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::Ror05,
        Algorithm::Mutara60,
        Algorithm::Mutara180,
        Algorithm::Hunt60,
        Algorithm::Hunt180,
        Algorithm::Tpd1,
        Algorithm::Tpd2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Ror05 => "ROR05",
            Algorithm::Mutara60 => "MUTARA60",
            Algorithm::Mutara180 => "MUTARA180",
            Algorithm::Hunt60 => "HUNT60",
            Algorithm::Hunt180 => "HUNT180",
            Algorithm::Tpd1 => "TPD1",
            Algorithm::Tpd2 => "TPD2",
        }
    }

    pub fn parse(s: &str) -> Option<Algorithm> {
        Algorithm::ALL.into_iter().find(|a| a.as_str() == s)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One scored candidate event in a per-drug ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedEntry {
    pub event_code: String,
    pub score: f64,
    /// 1-based position in the ranking.
    pub rank: u32,
    /// Whether the algorithm's natural threshold flags this event.
    pub signalled: bool,
}

/// Per-drug, per-algorithm ranking of candidate events, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedSignalList {
    pub drug_code: String,
    pub algorithm: Algorithm,
    pub entries: Vec<RankedEntry>,
}

/// Order candidates by score descending, breaking ties by ascending event
/// code (code ids order like code strings). Every ranking in the workbench
/// uses this ordering, so equal scores resolve identically everywhere.
pub fn order_by_score_desc(items: &mut [(CodeId, f64)]) {
    items.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
}

/// Consecutive 1-based ranks for an already-ordered candidate list.
pub fn positions(n: usize) -> impl Iterator<Item = u32> {
    1..=n as u32
}

/// Render a float with six significant digits, positional where readable
/// (decimal exponent in [-4, 8]), scientific otherwise. This is the only
/// float formatting the output files use.
pub fn fmt_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    let sci = format!("{:.5e}", x);
    let (mant, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("exponent digits");
    let (sign, mant) = match mant.strip_prefix('-') {
        Some(rest) => ("-", rest),
        None => ("", mant),
    };
    let digits: String = mant.chars().filter(|c| *c != '.').collect();
    debug_assert_eq!(digits.len(), 6);
    let body = if (-4..=8).contains(&exp) {
        let point = exp + 1; // digits before the decimal point
        let mut s = String::new();
        if point <= 0 {
            s.push_str("0.");
            for _ in 0..-point {
                s.push('0');
            }
            s.push_str(&digits);
        } else if (point as usize) >= digits.len() {
            s.push_str(&digits);
            for _ in 0..(point as usize - digits.len()) {
                s.push('0');
            }
        } else {
            s.push_str(&digits[..point as usize]);
            s.push('.');
            s.push_str(&digits[point as usize..]);
        }
        trim_fraction_zeros(s)
    } else {
        format!("{}e{}", trim_fraction_zeros(format!("{}.{}", &digits[..1], &digits[1..])), exp)
    };
    format!("{sign}{body}")
}

fn trim_fraction_zeros(mut s: String) -> String {
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    s
}

/// `fmt_sig6` rendering parsed back to f64: the numeric value emitted into
/// JSON metrics, so JSON and CSV agree on every reported figure.
pub fn round_sig6(x: f64) -> f64 {
    if !x.is_finite() {
        return x;
    }
    fmt_sig6(x).parse().expect("fmt_sig6 output parses")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(Algorithm::parse(a.as_str()), Some(a));
        }
        assert_eq!(Algorithm::parse("ror05"), None);
    }

    #[test]
    fn ordering_breaks_ties_by_code() {
        let mut items = vec![
            (CodeId(3), 1.0),
            (CodeId(1), 2.0),
            (CodeId(2), 1.0),
            (CodeId(0), -1.0),
        ];
        order_by_score_desc(&mut items);
        let ids: Vec<u32> = items.iter().map(|&(c, _)| c.0).collect();
        assert_eq!(ids, vec![1, 2, 3, 0]);
    }

    #[test]
    fn six_significant_digits() {
        assert_eq!(fmt_sig6(0.0), "0");
        assert_eq!(fmt_sig6(-0.0), "0");
        assert_eq!(fmt_sig6(4.0), "4");
        assert_eq!(fmt_sig6(-4.5), "-4.5");
        assert_eq!(fmt_sig6(0.35331709109), "0.353317");
        assert_eq!(fmt_sig6(123456789.0), "123457000");
        assert_eq!(fmt_sig6(0.000123456789), "0.000123457");
        assert_eq!(fmt_sig6(1.23456789e-9), "1.23457e-9");
        assert_eq!(fmt_sig6(9.999999e12), "1e13");
        assert_eq!(fmt_sig6(2.5), "2.5");
        assert_eq!(fmt_sig6(-0.00001), "-1e-5");
        assert_eq!(fmt_sig6(0.0001), "0.0001");
    }

    #[test]
    fn rounding_matches_rendering() {
        for x in [0.3533170911, -12.3456789, 1.0, 7.0 / 12.0] {
            let r = round_sig6(x);
            assert_eq!(fmt_sig6(r), fmt_sig6(x));
        }
    }
}
