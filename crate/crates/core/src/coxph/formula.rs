use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::canonical_name;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    Identity,
    Sqrt,
    Log,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MainTerm {
    pub variable: String,
    pub transform: Transform,
}

impl MainTerm {
    pub fn new(variable: &str, transform: Transform) -> Self {
        MainTerm {
            variable: canonical_name(variable).unwrap_or_else(|| variable.trim().to_ascii_lowercase()),
            transform,
        }
    }
}

impl fmt::Display for MainTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.transform {
            Transform::Identity => write!(f, "{}", self.variable),
            Transform::Sqrt => write!(f, "sqrt({})", self.variable),
            Transform::Log => write!(f, "log({})", self.variable),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Term {
    Main(MainTerm),
    Interaction(MainTerm, MainTerm),
}

impl Term {
    pub fn main(variable: &str, transform: Transform) -> Self {
        Term::Main(MainTerm::new(variable, transform))
    }

    pub fn interaction(a: MainTerm, b: MainTerm) -> Self {
        Term::Interaction(a, b)
    }

    fn same_as(&self, other: &Term) -> bool {
        match (self, other) {
            (Term::Main(a), Term::Main(b)) => a == b,
            (Term::Interaction(a1, b1), Term::Interaction(a2, b2)) => {
                (a1 == a2 && b1 == b2) || (a1 == b2 && b1 == a2)
            }
            _ => false,
        }
    }

    /// Whether `self` is a main effect contained in `other`.
    pub fn is_part_of(&self, other: &Term) -> bool {
        match (self, other) {
            (Term::Main(m), Term::Interaction(a, b)) => m == a || m == b,
            _ => false,
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Main(m) => write!(f, "{m}"),
            Term::Interaction(a, b) => write!(f, "{a}:{b}"),
        }
    }
}

/// An additive Cox model formula with optional two-way interactions.
///
/// Text form: terms joined by `+`, interactions with `:`, and `sqrt()` /
/// `log()` transforms, e.g. `age_at_implant + side + sqrt(n_revisions) +
/// side:sqrt(n_revisions)`. An empty string (or `1`) is the null model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFormula {
    pub terms: Vec<Term>,
    /// Reference level per categorical variable; unspecified factors use
    /// `Left` for `initial_side` and the alphabetically first level otherwise.
    #[serde(default)]
    pub reference_levels: BTreeMap<String, String>,
}

impl ModelFormula {
    pub fn new(terms: Vec<Term>) -> Result<Self> {
        let f = ModelFormula {
            terms,
            reference_levels: BTreeMap::new(),
        };
        f.validate()?;
        Ok(f)
    }

    pub fn null() -> Self {
        ModelFormula {
            terms: vec![],
            reference_levels: BTreeMap::new(),
        }
    }

    pub fn with_reference(mut self, variable: &str, level: &str) -> Self {
        let var = canonical_name(variable).unwrap_or_else(|| variable.to_ascii_lowercase());
        self.reference_levels.insert(var, level.to_string());
        self
    }

    /// Checks hierarchy (interaction constituents present as mains) and
    /// uniqueness of terms.
    pub fn validate(&self) -> Result<()> {
        for (i, t) in self.terms.iter().enumerate() {
            if self.terms[..i].iter().any(|u| u.same_as(t)) {
                return Err(Error::Formula(format!("duplicate term `{t}`")));
            }
            if let Term::Interaction(a, b) = t {
                if a == b {
                    return Err(Error::Formula(format!("self-interaction `{t}`")));
                }
                for m in [a, b] {
                    if !self.terms.iter().any(|u| matches!(u, Term::Main(x) if x == m)) {
                        return Err(Error::Formula(format!(
                            "interaction `{t}` requires main effect `{m}`"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Formula without the term at `index`.
    pub fn without(&self, index: usize) -> ModelFormula {
        let mut f = self.clone();
        f.terms.remove(index);
        f
    }

    /// Whether removing term `index` keeps the formula hierarchical.
    pub fn removable(&self, index: usize) -> bool {
        let t = &self.terms[index];
        !self.terms.iter().any(|u| t.is_part_of(u))
    }
}

impl fmt::Display for ModelFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("1");
        }
        let parts: Vec<String> = self.terms.iter().map(Term::to_string).collect();
        f.write_str(&parts.join(" + "))
    }
}

fn parse_main(s: &str) -> Result<MainTerm> {
    let s = s.trim();
    let bad = || Error::Formula(format!("cannot parse term `{s}`"));
    let is_ident = |v: &str| {
        !v.is_empty()
            && v.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
    };
    if let Some(open) = s.find('(') {
        if !s.ends_with(')') {
            return Err(bad());
        }
        let func = s[..open].trim().to_ascii_lowercase();
        let inner = s[open + 1..s.len() - 1].trim();
        if !is_ident(inner) {
            return Err(bad());
        }
        let transform = match func.as_str() {
            "sqrt" => Transform::Sqrt,
            "log" => Transform::Log,
            _ => return Err(Error::Formula(format!("unknown transform `{func}`"))),
        };
        Ok(MainTerm::new(inner, transform))
    } else if is_ident(s) {
        Ok(MainTerm::new(s, Transform::Identity))
    } else {
        Err(bad())
    }
}

impl FromStr for ModelFormula {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() || s == "1" {
            return Ok(ModelFormula::null());
        }
        let mut terms = Vec::new();
        for part in s.split('+') {
            let pieces: Vec<&str> = part.split(':').collect();
            let term = match pieces.as_slice() {
                [one] => Term::Main(parse_main(one)?),
                [a, b] => Term::Interaction(parse_main(a)?, parse_main(b)?),
                _ => {
                    return Err(Error::Formula(format!(
                        "only two-way interactions are supported: `{}`",
                        part.trim()
                    )))
                }
            };
            terms.push(term);
        }
        ModelFormula::new(terms)
    }
}
