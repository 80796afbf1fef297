//! Line-oriented, semicolon-terminated model language.

use std::collections::{HashMap, HashSet};

use super::{
    DistParam, GroupDecl, ItemDef, ItemIntercept, LatentDef, Loading, ModelSpec, ParamClass, PredictorTerm,
    PriorStatement, Selector, Target, Transform,
};
use crate::dist::PriorDef;
use crate::error::{Error, Pos, Result};

const RESERVED: &[&str] = &[
    "latent", "per", "prior", "group", "on", "censor", "in", "fix", "free", "positive", "mu", "logsd", "square",
    "loading", "intercept", "resid_sd", "sd", "group_sd", "mean", "T", "inf",
];

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    /// `=~`
    Measured,
    Punct(char),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    pos: Pos,
}

fn syntax(pos: Pos, message: impl Into<String>) -> Error {
    Error::Syntax { pos, message: message.into() }
}

fn lex(src: &str) -> Result<Vec<Token>> {
    let mut out = Vec::new();
    for (ln, line) in src.lines().enumerate() {
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let pos = Pos { line: ln + 1, column: i + 1 };
            if c == '#' {
                break;
            }
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            if c.is_ascii_alphabetic() || c == '_' {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push(Token { tok: Tok::Ident(chars[start..i].iter().collect()), pos });
                continue;
            }
            // `.` after a name or `)` is a term selector, as in `logsd.1`.
            let after_name = matches!(out.last(), Some(Token { tok: Tok::Ident(_) | Tok::Punct(')'), .. }));
            let starts_number = c.is_ascii_digit()
                || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit() || *d == '.'))
                || (c == '.' && !after_name && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()));
            if starts_number {
                let start = i;
                i += 1;
                while i < chars.len() {
                    let d = chars[i];
                    let exp_sign = (d == '-' || d == '+') && matches!(chars[i - 1], 'e' | 'E');
                    if d.is_ascii_digit() || d == '.' || d == 'e' || d == 'E' || exp_sign {
                        i += 1;
                    } else {
                        break;
                    }
                }
                let text: String = chars[start..i].iter().collect();
                let v: f64 = text.parse().map_err(|_| syntax(pos, format!("invalid number `{text}`")))?;
                out.push(Token { tok: Tok::Number(v), pos });
                continue;
            }
            if c == '=' && chars.get(i + 1) == Some(&'~') {
                out.push(Token { tok: Tok::Measured, pos });
                i += 2;
                continue;
            }
            if ";(),=+*[].~".contains(c) {
                out.push(Token { tok: Tok::Punct(c), pos });
                i += 1;
                continue;
            }
            return Err(syntax(pos, format!("unexpected character `{c}`")));
        }
    }
    let last = src.lines().count().max(1);
    out.push(Token { tok: Tok::Eof, pos: Pos { line: last + 1, column: 1 } });
    Ok(out)
}

#[derive(Debug)]
enum LoadingStmt {
    Fix(f64),
    Free,
    Positive,
}

#[derive(Debug)]
enum Stmt {
    Latent { name: String, level: Option<String> },
    Measure { latent: String, items: Vec<(String, Pos)> },
    Predictor { target: DistParam, latent: String, terms: Vec<(Transform, Pos)> },
    Prior { selector: Selector, prior: PriorDef },
    Group { column: String, targets: Vec<(DistParam, String, Pos)> },
    Censor { item: String, lower: f64, upper: f64 },
    FixMean { latent: String, value: f64 },
    FixSd { latent: String, value: f64 },
    Loading { target: String, stmt: LoadingStmt },
    Intercept { target: String, value: Option<f64> },
}

struct Parser {
    toks: Vec<Token>,
    at: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.at]
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn describe(t: &Tok) -> String {
        match t {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Number(v) => format!("number {v}"),
            Tok::Measured => "`=~`".into(),
            Tok::Punct(c) => format!("`{c}`"),
            Tok::Eof => "end of input".into(),
        }
    }

    fn expect(&mut self, c: char) -> Result<Pos> {
        let t = self.next();
        if t.tok == Tok::Punct(c) {
            Ok(t.pos)
        } else {
            Err(syntax(t.pos, format!("expected `{c}`, found {}", Self::describe(&t.tok))))
        }
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek().tok == Tok::Punct(c) {
            self.next();
            true
        } else {
            false
        }
    }

    fn ident(&mut self) -> Result<(String, Pos)> {
        let t = self.next();
        match t.tok {
            Tok::Ident(s) => Ok((s, t.pos)),
            other => Err(syntax(t.pos, format!("expected a name, found {}", Self::describe(&other)))),
        }
    }

    /// A user-chosen name: an identifier that is not a keyword.
    fn name(&mut self) -> Result<(String, Pos)> {
        let (s, pos) = self.ident()?;
        if RESERVED.contains(&s.as_str()) {
            return Err(syntax(pos, format!("`{s}` is a keyword and cannot be used as a name")));
        }
        Ok((s, pos))
    }

    fn keyword(&mut self, kw: &str) -> Result<Pos> {
        let t = self.next();
        match &t.tok {
            Tok::Ident(s) if s == kw => Ok(t.pos),
            other => Err(syntax(t.pos, format!("expected `{kw}`, found {}", Self::describe(other)))),
        }
    }

    fn number(&mut self) -> Result<f64> {
        let t = self.next();
        match t.tok {
            Tok::Number(v) => Ok(v),
            Tok::Ident(ref s) if s == "inf" => Ok(f64::INFINITY),
            other => Err(syntax(t.pos, format!("expected a number, found {}", Self::describe(&other)))),
        }
    }

    fn dist_param(&mut self) -> Result<(DistParam, Pos)> {
        let (s, pos) = self.ident()?;
        match s.as_str() {
            "mu" => Ok((DistParam::Mu, pos)),
            "logsd" => Ok((DistParam::LogSd, pos)),
            _ => Err(syntax(pos, format!("expected `mu` or `logsd`, found `{s}`"))),
        }
    }

    /// `name(arg)` where `name` is a fixed keyword.
    fn call_arg(&mut self) -> Result<(String, Pos)> {
        self.expect('(')?;
        let r = self.name()?;
        self.expect(')')?;
        Ok(r)
    }

    fn term(&mut self) -> Result<(Transform, Pos)> {
        let t = self.next();
        match t.tok {
            Tok::Number(v) if v == 1.0 => Ok((Transform::Intercept, t.pos)),
            Tok::Ident(ref s) if s == "square" => {
                let (a, _) = self.call_arg()?;
                Ok((Transform::Square(a), t.pos))
            }
            Tok::Ident(ref s) if !RESERVED.contains(&s.as_str()) => {
                if self.eat('*') {
                    let (b, _) = self.name()?;
                    Ok((Transform::Product(s.clone(), b), t.pos))
                } else {
                    Ok((Transform::Identity(s.clone()), t.pos))
                }
            }
            other => Err(syntax(t.pos, format!("expected a predictor term, found {}", Self::describe(&other)))),
        }
    }

    fn distribution(&mut self) -> Result<PriorDef> {
        let (family, pos) = self.ident()?;
        self.expect('(')?;
        let mut args = Vec::new();
        if !self.eat(')') {
            loop {
                args.push(self.number()?);
                if self.eat(')') {
                    break;
                }
                self.expect(',')?;
            }
        }
        let arity = |n: usize| -> Result<()> {
            if args.len() == n {
                Ok(())
            } else {
                Err(syntax(pos, format!("`{family}` takes {n} arguments, got {}", args.len())))
            }
        };
        let dist_err = |e: Error| syntax(pos, e.to_string());
        let base = match family.as_str() {
            "normal" => {
                arity(2)?;
                PriorDef::normal(args[0], args[1]).map_err(dist_err)?
            }
            "half_normal" => {
                arity(2)?;
                PriorDef::half_normal(args[0], args[1]).map_err(dist_err)?
            }
            "student_t" => {
                arity(3)?;
                PriorDef::student_t(args[0], args[1], args[2]).map_err(dist_err)?
            }
            "gamma" => {
                arity(2)?;
                PriorDef::gamma(args[0], args[1]).map_err(dist_err)?
            }
            "exp_gamma" => {
                arity(2)?;
                PriorDef::exp_gamma(args[0], args[1]).map_err(dist_err)?
            }
            other => return Err(syntax(pos, format!("unknown distribution `{other}`"))),
        };
        if matches!(&self.peek().tok, Tok::Ident(s) if s == "T") {
            let tpos = self.next().pos;
            self.expect('[')?;
            let lower = if self.peek().tok == Tok::Punct(',') { f64::NEG_INFINITY } else { self.number()? };
            self.expect(',')?;
            let upper = if self.peek().tok == Tok::Punct(']') { f64::INFINITY } else { self.number()? };
            self.expect(']')?;
            return match base {
                PriorDef::Normal { mean, sd } => PriorDef::truncated_normal(mean, sd, lower, upper),
                PriorDef::Gamma { shape, rate } => PriorDef::truncated_gamma(shape, rate, lower, upper),
                _ => return Err(syntax(tpos, "truncation applies only to `normal` and `gamma`")),
            }
            .map_err(|e| syntax(tpos, e.to_string()));
        }
        Ok(base)
    }

    fn selector(&mut self) -> Result<Selector> {
        let (class_name, pos) = self.ident()?;
        let class = ParamClass::from_keyword(&class_name)
            .ok_or_else(|| syntax(pos, format!("unknown parameter class `{class_name}`")))?;
        let mut target = None;
        if self.eat('(') {
            if class == ParamClass::GroupSd {
                let (p, _) = self.dist_param()?;
                let (l, _) = self.call_arg()?;
                target = Some(Target::Dist(p, l));
            } else {
                target = Some(Target::Name(self.name()?.0));
            }
            self.expect(')')?;
        }
        let mut term = None;
        if self.eat('.') {
            if !matches!(class, ParamClass::Mu | ParamClass::LogSd) {
                return Err(syntax(pos, format!("`{class_name}` parameters have no terms")));
            }
            term = Some(self.term()?.0);
        }
        Ok(Selector { class, target, term })
    }

    fn statement(&mut self) -> Result<(Stmt, Pos)> {
        let first = self.peek().clone();
        let Tok::Ident(head) = &first.tok else {
            return Err(syntax(first.pos, format!("expected a statement, found {}", Self::describe(&first.tok))));
        };
        let stmt = match head.as_str() {
            "latent" => {
                self.next();
                let (name, _) = self.name()?;
                let level = if matches!(&self.peek().tok, Tok::Ident(s) if s == "per") {
                    self.next();
                    Some(self.name()?.0)
                } else {
                    None
                };
                Stmt::Latent { name, level }
            }
            "mu" | "logsd" => {
                let (target, _) = self.dist_param()?;
                let (latent, _) = self.call_arg()?;
                self.expect('~')?;
                let mut terms = vec![self.term()?];
                while self.eat('+') {
                    terms.push(self.term()?);
                }
                Stmt::Predictor { target, latent, terms }
            }
            "prior" => {
                self.next();
                let selector = self.selector()?;
                self.expect('=')?;
                let prior = self.distribution()?;
                Stmt::Prior { selector, prior }
            }
            "group" => {
                self.next();
                let (column, _) = self.name()?;
                self.keyword("on")?;
                let mut targets = Vec::new();
                loop {
                    let (p, pos) = self.dist_param()?;
                    let (l, _) = self.call_arg()?;
                    targets.push((p, l, pos));
                    if !self.eat(',') {
                        break;
                    }
                }
                Stmt::Group { column, targets }
            }
            "censor" => {
                self.next();
                let (item, _) = self.name()?;
                self.keyword("in")?;
                self.expect('[')?;
                let lower = self.number()?;
                self.expect(',')?;
                let upper = self.number()?;
                self.expect(']')?;
                if !(lower < upper) {
                    return Err(syntax(first.pos, format!("censoring bounds [{lower}, {upper}] are not ordered")));
                }
                Stmt::Censor { item, lower, upper }
            }
            "fix" => {
                self.next();
                let (what, pos) = self.ident()?;
                let (target, _) = self.call_arg()?;
                self.expect('=')?;
                let value = self.number()?;
                match what.as_str() {
                    "mean" => Stmt::FixMean { latent: target, value },
                    "sd" => {
                        if !(value > 0.0 && value.is_finite()) {
                            return Err(syntax(pos, format!("fixed sd must be positive, got {value}")));
                        }
                        Stmt::FixSd { latent: target, value }
                    }
                    "loading" => Stmt::Loading { target, stmt: LoadingStmt::Fix(value) },
                    "intercept" => Stmt::Intercept { target, value: Some(value) },
                    other => return Err(syntax(pos, format!("cannot fix `{other}`"))),
                }
            }
            "free" => {
                self.next();
                let (what, pos) = self.ident()?;
                let (target, _) = self.call_arg()?;
                match what.as_str() {
                    "loading" => Stmt::Loading { target, stmt: LoadingStmt::Free },
                    "intercept" => Stmt::Intercept { target, value: None },
                    other => return Err(syntax(pos, format!("cannot free `{other}`"))),
                }
            }
            "positive" => {
                self.next();
                self.keyword("loading")?;
                let (target, _) = self.call_arg()?;
                Stmt::Loading { target, stmt: LoadingStmt::Positive }
            }
            _ => {
                let (latent, _) = self.name()?;
                let t = self.next();
                if t.tok != Tok::Measured {
                    return Err(syntax(t.pos, format!("expected `=~`, found {}", Self::describe(&t.tok))));
                }
                let mut items = vec![self.name()?];
                while self.eat('+') {
                    items.push(self.name()?);
                }
                Stmt::Measure { latent, items }
            }
        };
        self.expect(';')?;
        Ok((stmt, first.pos))
    }
}

/// Parses model source into a [`ModelSpec`] with identification defaults applied.
///
/// Latents without a mean predictor get their mean fixed to 0; the first item of
/// each latent gets a unit loading unless a `fix loading`, `free loading` or
/// `positive loading` statement on that latent, or a fixed latent sd, says otherwise.
pub fn parse_model(text: &str) -> Result<ModelSpec> {
    let toks = lex(text)?;
    let mut p = Parser { toks, at: 0 };
    let mut stmts = Vec::new();
    while p.peek().tok != Tok::Eof {
        stmts.push(p.statement()?);
    }
    build(stmts)
}

fn build(stmts: Vec<(Stmt, Pos)>) -> Result<ModelSpec> {
    let mut latents: Vec<LatentDef> = Vec::new();
    let mut latent_pos: HashMap<String, Pos> = HashMap::new();
    for (s, pos) in &stmts {
        if let Stmt::Latent { name, level } = s {
            if latent_pos.insert(name.clone(), *pos).is_some() {
                return Err(Error::Duplicate { name: name.clone(), pos: *pos });
            }
            latents.push(LatentDef {
                name: name.clone(),
                level: level.clone(),
                mu_predictor: vec![],
                sigma_predictor: vec![],
                mean_fixed: None,
                sd_fixed: None,
            });
        }
    }
    let latent_names: Vec<String> = latents.iter().map(|l| l.name.clone()).collect();
    let latent_idx = |name: &str, pos: Pos| -> Result<usize> {
        latent_names
            .iter()
            .position(|l| l == name)
            .ok_or_else(|| Error::UnknownLatent { name: name.to_string(), pos })
    };

    let mut items: Vec<ItemDef> = Vec::new();
    for (s, _) in &stmts {
        if let Stmt::Measure { latent, items: names } = s {
            let li = latent_idx(latent, names[0].1)?;
            for (n, pos) in names {
                if items.iter().any(|i| &i.name == n) || latent_pos.contains_key(n) {
                    return Err(Error::Duplicate { name: n.clone(), pos: *pos });
                }
                items.push(ItemDef {
                    name: n.clone(),
                    latent: latents[li].name.clone(),
                    loading: Loading::Free,
                    intercept: ItemIntercept::Fixed(0.0),
                    censor: None,
                });
            }
        }
    }
    let item_targets = |target: &str, pos: Pos, items: &[ItemDef]| -> Result<Vec<usize>> {
        if let Some(i) = items.iter().position(|i| i.name == target) {
            return Ok(vec![i]);
        }
        if latent_names.iter().any(|l| l == target) {
            return Ok(items.iter().enumerate().filter(|(_, i)| i.latent == target).map(|(k, _)| k).collect());
        }
        Err(Error::UnknownItem { name: target.to_string(), pos })
    };

    let mut priors = Vec::new();
    let mut groups: Option<GroupDecl> = None;
    let mut explicit_loading: HashSet<String> = HashSet::new();
    let mut fixed_loading_latents: HashSet<String> = HashSet::new();
    let mut loading_seen: HashSet<String> = HashSet::new();

    for (s, pos) in stmts {
        match s {
            Stmt::Latent { .. } | Stmt::Measure { .. } => {}
            Stmt::Predictor { target, latent, terms } => {
                let li = latent_idx(&latent, pos)?;
                if !latents[li].predictor(target).is_empty() {
                    return Err(Error::Duplicate { name: format!("{}({latent})", target.keyword()), pos });
                }
                let mut out: Vec<PredictorTerm> = Vec::new();
                for (t, tpos) in terms {
                    for a in t.arguments() {
                        latent_idx(a, tpos)?;
                    }
                    let term = PredictorTerm::new(&latent, target, t);
                    if out.iter().any(|o| o.transform == term.transform) {
                        return Err(Error::Duplicate { name: term.coefficient, pos: tpos });
                    }
                    out.push(term);
                }
                match target {
                    DistParam::Mu => latents[li].mu_predictor = out,
                    DistParam::LogSd => latents[li].sigma_predictor = out,
                }
            }
            Stmt::Prior { selector, prior } => {
                match &selector.target {
                    Some(Target::Name(n)) => match selector.class {
                        ParamClass::Loading | ParamClass::Intercept | ParamClass::ResidSd => {
                            item_targets(n, pos, &items)?;
                        }
                        _ => {
                            latent_idx(n, pos)?;
                        }
                    },
                    Some(Target::Dist(_, l)) => {
                        latent_idx(l, pos)?;
                    }
                    None => {}
                }
                priors.push(PriorStatement { selector, prior });
            }
            Stmt::Group { column, targets } => {
                if groups.is_some() {
                    return Err(Error::Duplicate { name: "group".into(), pos });
                }
                let mut out = Vec::new();
                for (p, l, tpos) in targets {
                    latent_idx(&l, tpos)?;
                    if out.contains(&(p, l.clone())) {
                        return Err(Error::Duplicate { name: format!("{}({l})", p.keyword()), pos: tpos });
                    }
                    out.push((p, l));
                }
                groups = Some(GroupDecl { column, targets: out });
            }
            Stmt::Censor { item, lower, upper } => {
                let k = items
                    .iter()
                    .position(|i| i.name == item)
                    .ok_or_else(|| Error::UnknownItem { name: item.clone(), pos })?;
                if items[k].censor.is_some() {
                    return Err(Error::Duplicate { name: format!("censor {item}"), pos });
                }
                items[k].censor = Some((lower, upper));
            }
            Stmt::FixMean { latent, value } => {
                let li = latent_idx(&latent, pos)?;
                if latents[li].mean_fixed.is_some() {
                    return Err(Error::Duplicate { name: format!("mean({latent})"), pos });
                }
                latents[li].mean_fixed = Some(value);
            }
            Stmt::FixSd { latent, value } => {
                let li = latent_idx(&latent, pos)?;
                if latents[li].sd_fixed.is_some() {
                    return Err(Error::Duplicate { name: format!("sd({latent})"), pos });
                }
                latents[li].sd_fixed = Some(value);
            }
            Stmt::Loading { target, stmt } => {
                for k in item_targets(&target, pos, &items)? {
                    let name = items[k].name.clone();
                    if !loading_seen.insert(name.clone()) {
                        return Err(Error::Duplicate { name: format!("loading({name})"), pos });
                    }
                    explicit_loading.insert(name);
                    items[k].loading = match stmt {
                        LoadingStmt::Fix(v) => {
                            if !fixed_loading_latents.insert(items[k].latent.clone()) {
                                return Err(Error::DuplicateFixedLoading { latent: items[k].latent.clone(), pos });
                            }
                            Loading::Fixed(v)
                        }
                        LoadingStmt::Free => Loading::Free,
                        LoadingStmt::Positive => Loading::Positive,
                    };
                }
            }
            Stmt::Intercept { target, value } => {
                for k in item_targets(&target, pos, &items)? {
                    items[k].intercept = match value {
                        Some(v) => ItemIntercept::Fixed(v),
                        None => ItemIntercept::Free,
                    };
                }
            }
        }
    }

    for l in &mut latents {
        if l.mean_fixed.is_some() && !l.mu_predictor.is_empty() {
            return Err(Error::Model(format!("latent `{}` has both a fixed mean and a mean predictor", l.name)));
        }
        if l.sd_fixed.is_some() && !l.sigma_predictor.is_empty() {
            return Err(Error::Model(format!("latent `{}` has both a fixed sd and an sd predictor", l.name)));
        }
        if l.mu_predictor.is_empty() && l.mean_fixed.is_none() {
            l.mean_fixed = Some(0.0);
        }
        if l.sd_fixed.is_none() && !fixed_loading_latents.contains(&l.name) {
            if let Some(first) = items.iter_mut().find(|i| i.latent == l.name) {
                if !explicit_loading.contains(&first.name) {
                    first.loading = Loading::Fixed(1.0);
                }
            }
        }
    }

    let spec = ModelSpec { latents, items, priors, groups };
    check_structure(&spec)?;
    Ok(spec)
}

fn check_structure(spec: &ModelSpec) -> Result<()> {
    for l in &spec.latents {
        if spec.items_of(&l.name).next().is_none() {
            return Err(Error::Model(format!("latent `{}` has no measurement items", l.name)));
        }
    }
    spec.topological_order()?;

    let levels: HashSet<&str> = spec.latents.iter().filter_map(|l| l.level.as_deref()).collect();
    if levels.len() > 1 {
        return Err(Error::Model("group-level latents must share one grouping column".into()));
    }
    if let (Some(g), Some(level)) = (&spec.groups, levels.iter().next()) {
        if g.column != *level {
            return Err(Error::Model(format!(
                "grouping column `{}` differs from latent level column `{level}`",
                g.column
            )));
        }
    }
    for l in &spec.latents {
        if l.level.is_some() {
            for p in l.parents() {
                if spec.latent(p).is_some_and(|pl| pl.level.is_none()) {
                    return Err(Error::Model(format!(
                        "group-level latent `{}` cannot depend on row-level latent `{p}`",
                        l.name
                    )));
                }
            }
        }
    }
    if let Some(g) = &spec.groups {
        for (_, l) in &g.targets {
            if spec.latent(l).is_some_and(|x| x.level.is_some()) {
                return Err(Error::Model(format!("random intercepts on group-level latent `{l}`")));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_FACTOR: &str = "
        # two factors
        latent zeta1;
        latent zeta2;
        zeta1 =~ y11 + y12 + y13 + y14 + y15;
        zeta2 =~ y21 + y22 + y23 + y24 + y25;
        mu(zeta2) ~ zeta1;
        logsd(zeta2) ~ 1 + zeta1;
    ";

    #[test]
    fn two_factor_counts() {
        let s = parse_model(TWO_FACTOR).unwrap();
        assert_eq!(s.latents.len(), 2);
        assert_eq!(s.items.len(), 10);
        assert_eq!(s.coefficient_count(), 3);
        assert_eq!(s.latents[0].mean_fixed, Some(0.0));
        assert_eq!(s.latents[1].mean_fixed, None);
        assert_eq!(s.items[0].loading, Loading::Fixed(1.0));
        assert_eq!(s.items[5].loading, Loading::Fixed(1.0));
        assert_eq!(s.items[1].loading, Loading::Free);
        assert_eq!(s.latents[1].sigma_predictor[1].coefficient, "logsd(zeta2).zeta1");
    }

    #[test]
    fn single_factor_defaults() {
        let s = parse_model("latent f; f =~ a + b + c + d + e;").unwrap();
        assert_eq!(s.latents[0].mean_fixed, Some(0.0));
        assert_eq!(s.items[0].loading, Loading::Fixed(1.0));
        assert!(s.items[1..].iter().all(|i| i.loading == Loading::Free));
    }

    #[test]
    fn square_term() {
        let s = parse_model("latent a; latent b; a =~ x; b =~ y; logsd(b) ~ 1 + square(a);").unwrap();
        assert_eq!(s.latents[1].sigma_predictor[1].transform, Transform::Square("a".into()));
    }

    #[test]
    fn syntax_error_reports_line_and_column() {
        let err = parse_model("latent a;\na =~ x\nlatent b;").unwrap_err();
        match err {
            Error::Syntax { pos, .. } => assert_eq!(pos, Pos { line: 3, column: 1 }),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn unknown_latent() {
        let err = parse_model("latent a; a =~ x; mu(a) ~ b;").unwrap_err();
        assert!(matches!(err, Error::UnknownLatent { ref name, .. } if name == "b"), "{err:?}");
    }

    #[test]
    fn cycle_rejected() {
        let err = parse_model("latent a; latent b; a =~ x; b =~ y; mu(a) ~ b; mu(b) ~ a;").unwrap_err();
        assert!(matches!(err, Error::Cycle(_)));
    }

    #[test]
    fn duplicate_fixed_loading() {
        let err =
            parse_model("latent a; a =~ x + y; fix loading(x) = 1; fix loading(y) = 1;").unwrap_err();
        assert!(matches!(err, Error::DuplicateFixedLoading { .. }));
    }

    #[test]
    fn duplicate_intercept_term() {
        assert!(parse_model("latent a; latent b; a =~ x; b =~ y; mu(b) ~ 1 + a + 1;").is_err());
    }

    #[test]
    fn explicit_fix_moves_unit_loading() {
        let s = parse_model("latent a; a =~ x + y; fix loading(y) = 1;").unwrap();
        assert_eq!(s.items[0].loading, Loading::Free);
        assert_eq!(s.items[1].loading, Loading::Fixed(1.0));
    }

    #[test]
    fn fixed_sd_skips_unit_loading() {
        let s = parse_model("latent a; a =~ x + y; fix sd(a) = 1;").unwrap();
        assert!(s.items.iter().all(|i| i.loading == Loading::Free));
    }

    #[test]
    fn priors_and_truncation() {
        let s = parse_model(
            "latent a; a =~ x + y;
             prior resid_sd = normal(0.5, 0.15) T[0.3, ];
             prior sd(a) = gamma(11, 11) T[0.7,];
             prior loading(y) = normal(1, 0.3);",
        )
        .unwrap();
        assert_eq!(s.priors.len(), 3);
        assert_eq!(s.priors[0].prior, PriorDef::truncated_normal(0.5, 0.15, 0.3, f64::INFINITY).unwrap());
    }

    #[test]
    fn keyword_as_name_rejected() {
        assert!(parse_model("latent mu; mu =~ x;").is_err());
    }

    #[test]
    fn latent_without_items_rejected() {
        assert!(matches!(parse_model("latent a; latent b; a =~ x;"), Err(Error::Model(_))));
    }

    #[test]
    fn group_level_latent_cannot_have_row_parent() {
        let src = "latent a; latent b per id; a =~ x; b =~ y; mu(b) ~ a;";
        assert!(matches!(parse_model(src), Err(Error::Model(_))));
    }
}
