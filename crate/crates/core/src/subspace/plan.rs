//! Formulation plans: one activate criterion followed by suppress criteria.
//!
//! ```text
//! activate: mp[mouth] eps=0.003; suppress: mp[!mouth]; suppress: id
//! ```
//!
//! Statements are separated by `;` or newlines; `#` starts a comment.

use std::fmt;

use crate::criteria::{CriterionKind, CriterionSpec};
use crate::error::{Error, Result};
use crate::synth::models::MASK_NAMES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Activate,
    Suppress,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Activate => "activate",
            Role::Suppress => "suppress",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub criterion: CriterionSpec,
    /// `None` falls back to the run default.
    pub eps: Option<f64>,
}

impl Stage {
    pub fn new(criterion: CriterionSpec, eps: Option<f64>) -> Self {
        Stage { criterion, eps }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FormulationPlan {
    pub activate: Stage,
    pub suppress: Vec<Stage>,
}

const LANDMARK_SELECTORS: [&str; 7] = ["all", "face", "left_eye", "right_eye", "eye", "nose", "mouth"];

fn fmt_stage(f: &mut fmt::Formatter<'_>, role: Role, s: &Stage) -> fmt::Result {
    write!(f, "{}: {}", role.name(), s.criterion)?;
    if let Some(e) = s.eps {
        write!(f, " eps={e:?}")?;
    }
    Ok(())
}

impl fmt::Display for FormulationPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_stage(f, Role::Activate, &self.activate)?;
        for s in &self.suppress {
            write!(f, "; ")?;
            fmt_stage(f, Role::Suppress, s)?;
        }
        Ok(())
    }
}

impl std::str::FromStr for FormulationPlan {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        FormulationPlan::parse(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Colon,
    Semi,
    LBracket,
    RBracket,
    Bang,
    Eq,
}

struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

fn lex(src: &str) -> Result<(Vec<Token>, (usize, usize))> {
    let mut out = Vec::new();
    let (mut line, mut col) = (1, 1);
    let mut chars = src.chars().peekable();
    while let Some(&c) = chars.peek() {
        let (l, k) = (line, col);
        let single = match c {
            ':' => Some(Tok::Colon),
            ';' | '\n' => Some(Tok::Semi),
            '[' => Some(Tok::LBracket),
            ']' => Some(Tok::RBracket),
            '!' => Some(Tok::Bang),
            '=' => Some(Tok::Eq),
            _ => None,
        };
        if let Some(t) = single {
            chars.next();
            out.push(Token { tok: t, line: l, column: k });
            if c == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
        } else if c == '#' {
            while let Some(&d) = chars.peek() {
                if d == '\n' {
                    break;
                }
                chars.next();
                col += 1;
            }
        } else if c.is_whitespace() {
            chars.next();
            col += 1;
        } else if c.is_ascii_alphanumeric() || "_.-+".contains(c) {
            let mut w = String::new();
            while let Some(&d) = chars.peek() {
                if d.is_ascii_alphanumeric() || "_.-+".contains(d) {
                    w.push(d);
                    chars.next();
                    col += 1;
                } else {
                    break;
                }
            }
            out.push(Token { tok: Tok::Word(w), line: l, column: k });
        } else {
            return Err(Error::Parse {
                line: l,
                column: k,
                message: format!("unexpected character `{c}`"),
            });
        }
    }
    Ok((out, (line, col)))
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    end: (usize, usize),
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.toks.get(self.pos)
    }

    fn err_here(&self, message: String) -> Error {
        let (line, column) = self.peek().map(|t| (t.line, t.column)).unwrap_or(self.end);
        Error::Parse { line, column, message }
    }

    fn describe(&self) -> String {
        match self.peek().map(|t| &t.tok) {
            None => "end of plan".into(),
            Some(Tok::Word(w)) => format!("`{w}`"),
            Some(Tok::Colon) => "`:`".into(),
            Some(Tok::Semi) => "statement separator".into(),
            Some(Tok::LBracket) => "`[`".into(),
            Some(Tok::RBracket) => "`]`".into(),
            Some(Tok::Bang) => "`!`".into(),
            Some(Tok::Eq) => "`=`".into(),
        }
    }

    fn expect(&mut self, t: Tok, what: &str) -> Result<()> {
        if self.peek().map(|x| &x.tok) == Some(&t) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err_here(format!("expected {what}, found {}", self.describe())))
        }
    }

    fn word(&mut self, what: &str) -> Result<(String, usize, usize)> {
        match self.peek() {
            Some(Token { tok: Tok::Word(w), line, column }) => {
                let r = (w.clone(), *line, *column);
                self.pos += 1;
                Ok(r)
            }
            _ => Err(self.err_here(format!("expected {what}, found {}", self.describe()))),
        }
    }

    fn at(&self, t: &Tok) -> bool {
        self.peek().map(|x| &x.tok) == Some(t)
    }

    fn stage(&mut self) -> Result<(Role, Stage, usize, usize)> {
        let (role_word, rl, rc) = self.word("`activate` or `suppress`")?;
        let role = match role_word.as_str() {
            "activate" => Role::Activate,
            "suppress" => Role::Suppress,
            other => {
                return Err(Error::Parse {
                    line: rl,
                    column: rc,
                    message: format!("unknown role `{other}` (expected `activate` or `suppress`)"),
                })
            }
        };
        self.expect(Tok::Colon, "`:`")?;
        let (id, il, ic) = self.word("criterion id")?;
        let kind = CriterionKind::from_id(&id).ok_or_else(|| Error::Parse {
            line: il,
            column: ic,
            message: format!("unknown criterion `{id}` (expected one of mp, fl, ap, id, mac, res, low, high)"),
        })?;
        let mut region = None;
        if self.at(&Tok::LBracket) {
            self.pos += 1;
            let neg = self.at(&Tok::Bang);
            if neg {
                self.pos += 1;
            }
            let (name, nl, nc) = self.word("region name")?;
            let known = if kind == CriterionKind::Fl {
                LANDMARK_SELECTORS.contains(&name.as_str())
            } else {
                name == "all" || MASK_NAMES.contains(&name.as_str())
            };
            if !kind.takes_region() || !known {
                let message = if kind.takes_region() {
                    format!("unknown region `{name}` for criterion `{id}`")
                } else {
                    format!("criterion `{id}` takes no region")
                };
                return Err(Error::Parse { line: nl, column: nc, message });
            }
            self.expect(Tok::RBracket, "`]`")?;
            region = Some(if neg { format!("!{name}") } else { name });
        }
        let mut eps = None;
        if let Some(Token { tok: Tok::Word(w), .. }) = self.peek() {
            if w == "eps" {
                self.pos += 1;
                self.expect(Tok::Eq, "`=` after eps")?;
                let (num, nl, nc) = self.word("a number")?;
                let v: f64 = num.parse().map_err(|_| Error::Parse {
                    line: nl,
                    column: nc,
                    message: format!("bad number `{num}`"),
                })?;
                if !(v > 0.0 && v < 1.0) {
                    return Err(Error::Parse {
                        line: nl,
                        column: nc,
                        message: format!("eps must lie in (0, 1), got {num}"),
                    });
                }
                eps = Some(v);
            }
        }
        Ok((
            role,
            Stage {
                criterion: CriterionSpec { kind, region },
                eps,
            },
            rl,
            rc,
        ))
    }
}

impl FormulationPlan {
    pub fn parse(src: &str) -> Result<Self> {
        let (toks, end) = lex(src)?;
        let mut p = Parser { toks, pos: 0, end };
        let mut activate: Option<Stage> = None;
        let mut suppress = Vec::new();
        loop {
            while p.at(&Tok::Semi) {
                p.pos += 1;
            }
            if p.peek().is_none() {
                break;
            }
            let (role, stage, line, column) = p.stage()?;
            match role {
                Role::Activate if activate.is_some() => {
                    return Err(Error::Parse {
                        line,
                        column,
                        message: "a plan has exactly one activate criterion".into(),
                    })
                }
                Role::Activate => activate = Some(stage),
                Role::Suppress => suppress.push(stage),
            }
            if p.peek().is_some() && !p.at(&Tok::Semi) {
                return Err(p.err_here(format!("expected `;` or newline, found {}", p.describe())));
            }
        }
        let activate = activate.ok_or_else(|| p.err_here("plan has no activate criterion".into()))?;
        Ok(FormulationPlan { activate, suppress })
    }

    /// `(criterion, role, eps)` per stage with defaults applied.
    pub fn stages(&self, default_eps: f64) -> Vec<(CriterionSpec, Role, f64)> {
        std::iter::once((self.activate.criterion.clone(), Role::Activate, self.activate.eps.unwrap_or(default_eps)))
            .chain(
                self.suppress
                    .iter()
                    .map(|s| (s.criterion.clone(), Role::Suppress, s.eps.unwrap_or(default_eps))),
            )
            .collect()
    }
}

/// The formulations of the reference table, by name.
pub fn named_plan(name: &str) -> Option<&'static str> {
    Some(match name {
        "mouth_photometry" => "activate: mp[mouth]; suppress: mp[!mouth]",
        "mouth_photometry_id" => "activate: mp[mouth]; suppress: mp[!mouth]; suppress: id",
        "lip_color" => "activate: mac[lip]; suppress: res[!lip]",
        "mouth_shape" => "activate: fl[mouth]; suppress: fl[!mouth]; suppress: ap[face]",
        "mouth_shape_id" => "activate: fl[mouth]; suppress: fl[!mouth]; suppress: ap[face]; suppress: id",
        "background_photometry" => "activate: mp[background]; suppress: mp[!background]",
        _ => return None,
    })
}

pub const NAMED_PLANS: [&str; 6] = [
    "mouth_photometry",
    "mouth_photometry_id",
    "lip_color",
    "mouth_shape",
    "mouth_shape_id",
    "background_photometry",
];

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_and_prints() {
        let p = FormulationPlan::parse("activate: mp[mouth] eps=3e-3;\nsuppress: mp[!mouth]\n# note\nsuppress: id").unwrap();
        assert_eq!(p.activate.criterion.to_string(), "mp[mouth]");
        assert_eq!(p.activate.eps, Some(0.003));
        assert_eq!(p.suppress.len(), 2);
        assert_eq!(p.to_string(), "activate: mp[mouth] eps=0.003; suppress: mp[!mouth]; suppress: id");
        assert_eq!(FormulationPlan::parse(&p.to_string()).unwrap(), p);
        for name in NAMED_PLANS {
            let q = FormulationPlan::parse(named_plan(name).unwrap()).unwrap();
            assert_eq!(q.to_string(), named_plan(name).unwrap());
        }
    }

    #[test]
    fn errors_carry_positions() {
        let cases = [
            ("activate: mq[mouth]", 1, 11, "mq"),
            ("activate: mp[mouth]\nsuppress: mp[nose", 2, 18, "end of plan"),
            ("activate: mp[mouth]; enhance: id", 1, 22, "enhance"),
            ("activate: id[mouth]", 1, 14, "no region"),
            ("activate: fl[lip]", 1, 14, "lip"),
            ("suppress: id", 1, 13, "no activate"),
            ("activate: id; activate: id", 1, 15, "exactly one"),
            ("activate: mp eps=2", 1, 18, "(0, 1)"),
            ("activate: mp id", 1, 14, "`id`"),
            ("activate: mp $", 1, 14, "`$`"),
        ];
        for (src, line, column, needle) in cases {
            match FormulationPlan::parse(src) {
                Err(Error::Parse { line: l, column: c, message }) => {
                    assert_eq!((l, c), (line, column), "{src}: {message}");
                    assert!(message.contains(needle), "{src}: {message}");
                }
                other => panic!("{src}: {other:?}"),
            }
        }
    }

    fn arb_stage() -> impl Strategy<Value = Stage> {
        let kinds = prop::sample::select(CriterionKind::ALL.to_vec());
        let regions = prop::sample::select(vec!["mouth", "lip", "face", "background", "eye", "nose"]);
        (kinds, regions, any::<bool>(), any::<bool>(), prop::option::of(1e-6f64..0.5)).prop_map(
            |(kind, region, neg, with_region, eps)| {
                let region = if kind.takes_region() && with_region {
                    let r = if kind == CriterionKind::Fl && region == "lip" { "mouth" } else { region };
                    let r = if kind == CriterionKind::Fl && r == "background" { "face" } else { r };
                    Some(if neg { format!("!{r}") } else { r.to_string() })
                } else {
                    None
                };
                Stage {
                    criterion: CriterionSpec { kind, region },
                    eps,
                }
            },
        )
    }

    proptest! {
        #[test]
        fn print_parse_round_trip(a in arb_stage(), s in prop::collection::vec(arb_stage(), 0..4)) {
            let plan = FormulationPlan { activate: a, suppress: s };
            let text = plan.to_string();
            prop_assert_eq!(FormulationPlan::parse(&text).unwrap(), plan);
        }
    }
}
