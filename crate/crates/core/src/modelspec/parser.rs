use std::collections::BTreeMap;

use num_complex::Complex64 as C64;

use super::lexer::{tokenize, Tok, Token};
use super::{
    Coefficients, GaugeDecl, ModelSpec, ParseError, ParseErrorKind as K, Pos, SimulationPlan, DECLARATION_TOL, MAX_CHANNELS,
    MAX_DIM,
};
use crate::gauge::{CorrelationFamily, FamilyKind};
use crate::operator::{hermiticity_residual, spectral_norm, Mat, OperatorMatrix};
use crate::unitarity::HpParams;
use crate::wong_zakai::{Segment, TestFunction};

type PResult<T> = Result<T, ParseError>;

#[derive(Debug, Clone, PartialEq)]
struct Cell {
    value: C64,
    text: String,
    pos: Pos,
}

#[derive(Debug, Clone, PartialEq)]
enum Value {
    Number(Cell),
    Word(String),
    Str(String),
    Array(Vec<Vec<Cell>>),
}

impl Value {
    fn describe(&self) -> &'static str {
        match self {
            Value::Number(_) => "a number",
            Value::Word(_) => "a word",
            Value::Str(_) => "a string",
            Value::Array(_) => "a matrix",
        }
    }
}

#[derive(Debug, Clone)]
struct Entry {
    key: String,
    key_pos: Pos,
    value: Value,
    value_pos: Pos,
}

#[derive(Debug, Clone)]
struct Section {
    name: String,
    pos: Pos,
    entries: Vec<Entry>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseOptions {
    /// Downgrade unknown keys and sections to warnings.
    pub lenient: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parsed {
    pub spec: ModelSpec,
    /// Unknown keys skipped in lenient mode.
    pub warnings: Vec<ParseError>,
}

pub fn parse(text: &str) -> PResult<ModelSpec> {
    parse_with(text, ParseOptions::default()).map(|p| p.spec)
}

/// Like [`parse_with`] on raw bytes; invalid UTF-8 is a positioned error.
pub fn parse_bytes(bytes: &[u8], opts: ParseOptions) -> PResult<Parsed> {
    match std::str::from_utf8(bytes) {
        Ok(s) => parse_with(s, opts),
        Err(e) => {
            let prefix = std::str::from_utf8(&bytes[..e.valid_up_to()]).unwrap_or_default();
            let line = prefix.matches('\n').count() + 1;
            let column = prefix.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
            Err(ParseError::new(K::Encoding, Pos { line, column }, "invalid UTF-8"))
        }
    }
}

pub fn parse_with(text: &str, opts: ParseOptions) -> PResult<Parsed> {
    let tokens = tokenize(text)?;
    let sections = group(&tokens)?;
    Interpreter { opts, warnings: Vec::new() }.run(sections)
}

struct Stream<'a> {
    toks: &'a [Token],
    k: usize,
}

impl<'a> Stream<'a> {
    fn peek(&self) -> Option<&'a Token> {
        self.toks.get(self.k)
    }

    fn next(&mut self) -> Option<&'a Token> {
        let t = self.toks.get(self.k);
        self.k += 1;
        t
    }

    fn end_pos(&self) -> Pos {
        self.toks.last().map_or(Pos { line: 1, column: 1 }, |t| Pos { line: t.pos.line, column: t.pos.column + 1 })
    }

    fn expect(&mut self, want: &Tok, what: &str) -> PResult<Pos> {
        match self.next() {
            Some(t) if &t.tok == want => Ok(t.pos),
            Some(t) => Err(ParseError::new(K::Syntax, t.pos, format!("expected {what}"))),
            None => Err(ParseError::new(K::Syntax, self.end_pos(), format!("expected {what}, found end of input"))),
        }
    }
}

fn group(tokens: &[Token]) -> PResult<Vec<Section>> {
    let mut s = Stream { toks: tokens, k: 0 };
    let mut sections: Vec<Section> = Vec::new();
    while let Some(t) = s.next() {
        match &t.tok {
            Tok::LBracket => {
                let name = match s.next() {
                    Some(Token { tok: Tok::Ident(n), .. }) => n.clone(),
                    Some(o) => return Err(ParseError::new(K::Syntax, o.pos, "expected section name")),
                    None => return Err(ParseError::new(K::Syntax, s.end_pos(), "expected section name")),
                };
                s.expect(&Tok::RBracket, "`]` after section name")?;
                sections.push(Section { name, pos: t.pos, entries: Vec::new() });
            }
            Tok::Ident(key) => {
                let Some(section) = sections.last_mut() else {
                    return Err(ParseError::new(K::Syntax, t.pos, "entry outside of a section"));
                };
                s.expect(&Tok::Equals, "`=` after key")?;
                let value_pos = s.peek().map_or(s.end_pos(), |v| v.pos);
                let value = parse_value(&mut s)?;
                section.entries.push(Entry { key: key.clone(), key_pos: t.pos, value, value_pos });
            }
            _ => return Err(ParseError::new(K::Syntax, t.pos, "expected a key or a section header")),
        }
    }
    Ok(sections)
}

fn parse_value(s: &mut Stream) -> PResult<Value> {
    let Some(t) = s.next() else {
        return Err(ParseError::new(K::Syntax, s.end_pos(), "expected a value, found end of input"));
    };
    match &t.tok {
        Tok::Number { value, text } => Ok(Value::Number(Cell { value: *value, text: text.clone(), pos: t.pos })),
        Tok::Ident(w) => Ok(Value::Word(w.clone())),
        Tok::Str(w) => Ok(Value::Str(w.clone())),
        Tok::LBracket => parse_array(s, t.pos),
        _ => Err(ParseError::new(K::Syntax, t.pos, "expected a value")),
    }
}

fn parse_cell(s: &mut Stream) -> PResult<Cell> {
    match s.next() {
        Some(Token { tok: Tok::Number { value, text }, pos }) => Ok(Cell { value: *value, text: text.clone(), pos: *pos }),
        Some(t) => Err(ParseError::new(K::Syntax, t.pos, "expected a number")),
        None => Err(ParseError::new(K::Syntax, s.end_pos(), "expected a number, found end of input")),
    }
}

/// Comma-separated cells up to and including one of the `stop` tokens.
fn parse_row(s: &mut Stream, stop: &[Tok]) -> PResult<(Vec<Cell>, Tok)> {
    let mut row = vec![parse_cell(s)?];
    loop {
        match s.next() {
            Some(Token { tok: Tok::Comma, .. }) => row.push(parse_cell(s)?),
            Some(t) if stop.contains(&t.tok) => return Ok((row, t.tok.clone())),
            Some(t) => return Err(ParseError::new(K::Syntax, t.pos, "expected `,` or the end of the row")),
            None => return Err(ParseError::new(K::Syntax, s.end_pos(), "unterminated matrix")),
        }
    }
}

fn parse_array(s: &mut Stream, open: Pos) -> PResult<Value> {
    let mut rows: Vec<Vec<Cell>> = Vec::new();
    let nested = matches!(s.peek(), Some(Token { tok: Tok::LBracket, .. }));
    if matches!(s.peek(), Some(Token { tok: Tok::RBracket, .. })) {
        return Err(ParseError::new(K::Syntax, open, "empty matrix"));
    }
    let push = |rows: &mut Vec<Vec<Cell>>, row: Vec<Cell>, at: Pos| -> PResult<()> {
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(ParseError::new(
                    K::Syntax,
                    at,
                    format!("row has {} entries, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
        Ok(())
    };
    if nested {
        loop {
            let at = s.expect(&Tok::LBracket, "`[` starting a row")?;
            let (row, _) = parse_row(s, &[Tok::RBracket])?;
            push(&mut rows, row, at)?;
            match s.next() {
                Some(Token { tok: Tok::Comma | Tok::Semicolon, .. }) => {}
                Some(Token { tok: Tok::RBracket, .. }) => return Ok(Value::Array(rows)),
                Some(t) => return Err(ParseError::new(K::Syntax, t.pos, "expected `,` or `]` after a row")),
                None => return Err(ParseError::new(K::Syntax, s.end_pos(), "unterminated matrix")),
            }
        }
    }
    loop {
        let at = s.peek().map_or(s.end_pos(), |t| t.pos);
        let (row, end) = parse_row(s, &[Tok::Semicolon, Tok::RBracket])?;
        push(&mut rows, row, at)?;
        if end == Tok::RBracket {
            return Ok(Value::Array(rows));
        }
    }
}

const SECTIONS: [&str; 8] = ["model", "E", "hp", "ito", "gauge", "noise", "simulation", "observable"];

struct Interpreter {
    opts: ParseOptions,
    warnings: Vec<ParseError>,
}

fn err(kind: K, pos: Pos, msg: impl Into<String>) -> ParseError {
    ParseError::new(kind, pos, msg)
}

fn as_int(e: &Entry) -> PResult<u64> {
    match &e.value {
        Value::Number(c) if c.text.trim_start_matches('+').chars().all(|ch| ch.is_ascii_digit()) => c
            .text
            .trim_start_matches('+')
            .parse()
            .map_err(|_| err(K::Syntax, c.pos, format!("`{}` must be a non-negative integer", e.key))),
        _ => Err(err(K::Syntax, e.value_pos, format!("`{}` must be a non-negative integer", e.key))),
    }
}

fn cell_real(c: &Cell, what: &str) -> PResult<f64> {
    if c.text.ends_with('i') {
        return Err(err(K::Syntax, c.pos, format!("{what} must be real")));
    }
    Ok(c.value.re)
}

fn as_real(e: &Entry) -> PResult<f64> {
    match &e.value {
        Value::Number(c) => cell_real(c, &format!("`{}`", e.key)),
        v => Err(err(K::Syntax, e.value_pos, format!("`{}` must be a real number, found {}", e.key, v.describe()))),
    }
}

fn as_word(e: &Entry) -> PResult<&str> {
    match &e.value {
        Value::Word(w) | Value::Str(w) => Ok(w),
        v => Err(err(K::Syntax, e.value_pos, format!("`{}` must be a word, found {}", e.key, v.describe()))),
    }
}

fn as_array(e: &Entry) -> PResult<&Vec<Vec<Cell>>> {
    match &e.value {
        Value::Array(rows) => Ok(rows),
        v => Err(err(K::Syntax, e.value_pos, format!("`{}` must be a matrix, found {}", e.key, v.describe()))),
    }
}

fn as_matrix(e: &Entry, rows: usize, cols: usize) -> PResult<Mat> {
    let a = as_array(e)?;
    if a.len() != rows || a[0].len() != cols {
        return Err(err(
            K::DimensionMismatch,
            e.value_pos,
            format!("`{}` is {}x{}, expected {rows}x{cols}", e.key, a.len(), a[0].len()),
        ));
    }
    Ok(Mat::from_fn(rows, cols, |r, c| a[r][c].value))
}

/// `prefix` followed by exactly `digits` index digits.
fn indices(key: &str, prefix: &str, digits: usize) -> Option<Vec<usize>> {
    let rest = key.strip_prefix(prefix)?;
    if rest.len() != digits || !rest.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    Some(rest.bytes().map(|b| (b - b'0') as usize).collect())
}

fn hermitian_ok(m: &Mat) -> bool {
    hermiticity_residual(m) <= DECLARATION_TOL * (1.0 + spectral_norm(m))
}

impl Interpreter {
    fn unknown(&mut self, pos: Pos, msg: String) -> PResult<()> {
        let e = err(K::UnknownKey, pos, msg);
        if self.opts.lenient {
            self.warnings.push(e);
            Ok(())
        } else {
            Err(e)
        }
    }

    /// Entries of a section by key, rejecting duplicates.
    fn entries<'s>(&mut self, sec: &'s Section, known: impl Fn(&str) -> bool) -> PResult<BTreeMap<String, &'s Entry>> {
        let mut map = BTreeMap::new();
        for e in &sec.entries {
            if !known(&e.key) {
                self.unknown(e.key_pos, format!("unknown key `{}` in [{}]", e.key, sec.name))?;
                continue;
            }
            if map.insert(e.key.clone(), e).is_some() {
                return Err(err(K::Syntax, e.key_pos, format!("duplicate key `{}`", e.key)));
            }
        }
        Ok(map)
    }

    fn run(mut self, sections: Vec<Section>) -> PResult<Parsed> {
        let mut by_name: BTreeMap<&str, &Section> = BTreeMap::new();
        for sec in &sections {
            if !SECTIONS.contains(&sec.name.as_str()) {
                self.unknown(sec.pos, format!("unknown section [{}]", sec.name))?;
                continue;
            }
            if by_name.insert(sec.name.as_str(), sec).is_some() {
                return Err(err(K::Syntax, sec.pos, format!("duplicate section [{}]", sec.name)));
            }
        }
        let model = by_name
            .get("model")
            .copied()
            .ok_or_else(|| err(K::MissingKey, Pos { line: 1, column: 1 }, "missing [model] section"))?;
        let (d, n) = self.model(model)?;

        let styles: Vec<&Section> = ["E", "hp", "ito"].iter().filter_map(|s| by_name.get(s).copied()).collect();
        let coefficients = match styles.as_slice() {
            [] => return Err(err(K::MissingKey, model.pos, "no coefficient section ([E], [hp] or [ito])")),
            [one] => match one.name.as_str() {
                "E" => Coefficients::Hamiltonian(self.hamiltonian(one, d, n)?),
                "hp" => Coefficients::Hp(self.hp(one, d, n)?),
                _ => Coefficients::Ito(self.ito(one, d, n)?),
            },
            multiple => {
                let mut sorted = multiple.to_vec();
                sorted.sort_by_key(|s| s.pos);
                return Err(err(K::Syntax, sorted[1].pos, "more than one coefficient section"));
            }
        };
        let noise = by_name.get("noise").map(|s| self.noise(s)).transpose()?;
        let gauge = match by_name.get("gauge") {
            Some(s) => self.gauge(s, n, noise.is_some())?,
            None if noise.is_some() => GaugeDecl::FromNoise,
            None => GaugeDecl::Explicit(Mat::zeros(n, n)),
        };
        let simulation = by_name.get("simulation").map(|s| self.simulation(s, n)).transpose()?;
        let observable = by_name.get("observable").map(|s| self.observable(s, d)).transpose()?;
        Ok(Parsed {
            spec: ModelSpec { d, n, coefficients, gauge, noise, simulation, observable },
            warnings: self.warnings,
        })
    }

    fn model(&mut self, sec: &Section) -> PResult<(usize, usize)> {
        let map = self.entries(sec, |k| k == "d" || k == "N")?;
        let get = |key: &str, max: usize| -> PResult<usize> {
            let e = map.get(key).ok_or_else(|| err(K::MissingKey, sec.pos, format!("[model] needs `{key}`")))?;
            let v = as_int(e)?;
            if v == 0 || v > max as u64 {
                return Err(err(K::InvariantViolation, e.value_pos, format!("`{key}` must be in 1..={max}")));
            }
            Ok(v as usize)
        };
        Ok((get("d", MAX_DIM)?, get("N", MAX_CHANNELS)?))
    }

    /// Blocks `{prefix}{a}{b}` with a, b ∈ 0..=N; omitted blocks are zero.
    fn blocks(&mut self, sec: &Section, prefix: &str, d: usize, n: usize) -> PResult<(OperatorMatrix, BTreeMap<(usize, usize), Pos>)> {
        let map = self.entries(sec, |k| indices(k, prefix, 2).is_some())?;
        let mut out = OperatorMatrix::zeros(n, d);
        let mut present = BTreeMap::new();
        for (key, e) in map {
            let ix = indices(&key, prefix, 2).expect("filtered");
            if ix[0] > n || ix[1] > n {
                return Err(err(K::DimensionMismatch, e.key_pos, format!("`{key}` refers to a channel above N={n}")));
            }
            let m = as_matrix(e, d, d)?;
            out.set_block(ix[0], ix[1], &m).expect("d×d block");
            present.insert((ix[0], ix[1]), e.key_pos);
        }
        Ok((out, present))
    }

    fn hamiltonian(&mut self, sec: &Section, d: usize, n: usize) -> PResult<OperatorMatrix> {
        let (e, present) = self.blocks(sec, "E", d, n)?;
        for (&(a, b), &pos) in &present {
            if !present.contains_key(&(b, a)) {
                return Err(err(
                    K::InvariantViolation,
                    pos,
                    format!("Hermitian family incomplete: E{a}{b} given without E{b}{a}"),
                ));
            }
            let diff = e.block(a, b) - e.block(b, a).adjoint();
            let scale = 1.0 + spectral_norm(&e.block(a, b));
            if spectral_norm(&diff) > DECLARATION_TOL * scale {
                let what = if a == b { format!("E{a}{b} is not Hermitian") } else { format!("E{a}{b} is not the adjoint of E{b}{a}") };
                return Err(err(K::InvariantViolation, pos, what));
            }
        }
        Ok(e)
    }

    fn ito(&mut self, sec: &Section, d: usize, n: usize) -> PResult<OperatorMatrix> {
        Ok(self.blocks(sec, "G", d, n)?.0)
    }

    fn hp(&mut self, sec: &Section, d: usize, n: usize) -> PResult<HpParams> {
        let map = self.entries(sec, |k| indices(k, "W", 2).is_some() || indices(k, "L", 1).is_some() || k == "H")?;
        let need = |key: String| -> PResult<&Entry> {
            map.get(&key).copied().ok_or_else(|| err(K::MissingKey, sec.pos, format!("[hp] needs `{key}`")))
        };
        for (key, e) in &map {
            let ix = indices(key, "W", 2).or_else(|| indices(key, "L", 1)).unwrap_or_default();
            if ix.iter().any(|&i| i == 0 || i > n) {
                return Err(err(K::DimensionMismatch, e.key_pos, format!("`{key}` needs channel indices in 1..={n}")));
            }
        }
        let nd = n * d;
        let mut w = Mat::zeros(nd, nd);
        let mut l = Mat::zeros(nd, d);
        for i in 1..=n {
            for j in 1..=n {
                let m = as_matrix(need(format!("W{i}{j}"))?, d, d)?;
                w.view_mut(((i - 1) * d, (j - 1) * d), (d, d)).copy_from(&m);
            }
            let m = as_matrix(need(format!("L{i}"))?, d, d)?;
            l.view_mut(((i - 1) * d, 0), (d, d)).copy_from(&m);
        }
        let h_entry = need("H".into())?;
        let h = as_matrix(h_entry, d, d)?;
        let p = HpParams::new(n, d, w, l, h).expect("shapes checked");
        if p.w_unitarity_residual() > DECLARATION_TOL * (1.0 + spectral_norm(&p.w)) {
            let pos = map.get("W11").map_or(sec.pos, |e| e.key_pos);
            return Err(err(K::InvariantViolation, pos, "W is not unitary"));
        }
        if !hermitian_ok(&p.h) {
            return Err(err(K::InvariantViolation, h_entry.key_pos, "H is not Hermitian"));
        }
        Ok(p)
    }

    fn noise(&mut self, sec: &Section) -> PResult<CorrelationFamily> {
        let map = self.entries(sec, |k| k == "family" || k == "omega")?;
        let fam_entry = map.get("family").ok_or_else(|| err(K::MissingKey, sec.pos, "[noise] needs `family`"))?;
        let name = as_word(fam_entry)?;
        let kind = FamilyKind::from_name(name)
            .ok_or_else(|| err(K::InvariantViolation, fam_entry.value_pos, format!("unknown noise family `{name}`")))?;
        let omega = map.get("omega").map(|e| as_real(e).map(|w| (w, e.value_pos))).transpose()?;
        match (kind, omega) {
            (FamilyKind::Ou, Some((w, pos))) if w != 0.0 => {
                Err(err(K::InvariantViolation, pos, "the ou family has no modulation frequency"))
            }
            (FamilyKind::Ou, _) => Ok(CorrelationFamily::ou()),
            (FamilyKind::OuModulated, w) => Ok(CorrelationFamily::ou_modulated(w.map_or(0.0, |x| x.0))),
        }
    }

    fn gauge(&mut self, sec: &Section, n: usize, has_noise: bool) -> PResult<GaugeDecl> {
        let map = self.entries(sec, |k| k == "Z")?;
        let Some(e) = map.get("Z") else {
            return Err(err(K::MissingKey, sec.pos, "[gauge] needs `Z`"));
        };
        match &e.value {
            Value::Word(w) | Value::Str(w) if w == "from-noise" => {
                if has_noise {
                    Ok(GaugeDecl::FromNoise)
                } else {
                    Err(err(K::MissingKey, e.value_pos, "`from-noise` needs a [noise] section"))
                }
            }
            _ => Ok(GaugeDecl::Explicit(as_matrix(e, n, n)?)),
        }
    }

    fn simulation(&mut self, sec: &Section, n: usize) -> PResult<SimulationPlan> {
        let is_tf = |k: &str| indices(k, "f", 1).or_else(|| indices(k, "g", 1)).is_some_and(|ix| (1..=9).contains(&ix[0]));
        let map = self.entries(sec, |k| matches!(k, "t" | "lambda" | "order" | "seed") || is_tf(k))?;
        let t = match map.get("t") {
            Some(e) => {
                let t = as_real(e)?;
                if !(t > 0.0) {
                    return Err(err(K::InvariantViolation, e.value_pos, "`t` must be positive"));
                }
                t
            }
            None => 1.0,
        };
        let lambdas = match map.get("lambda") {
            Some(e) => {
                let rows = as_array(e)?;
                if rows.len() != 1 {
                    return Err(err(K::DimensionMismatch, e.value_pos, "`lambda` must be a single row"));
                }
                let mut out = Vec::new();
                for c in &rows[0] {
                    let l = cell_real(c, "λ")?;
                    if !(l > 0.0) {
                        return Err(err(K::InvariantViolation, c.pos, "λ must be positive"));
                    }
                    out.push(l);
                }
                out
            }
            None => vec![0.4, 0.2, 0.1, 0.05],
        };
        let order = match map.get("order") {
            Some(e) => {
                let o = as_int(e)?;
                if o > 10 {
                    return Err(err(K::InvariantViolation, e.value_pos, "`order` must be at most 10"));
                }
                o as usize
            }
            None => 4,
        };
        let seed = map.get("seed").map(|e| as_int(e)).transpose()?;
        let tf = |prefix: &str| -> PResult<TestFunction> {
            let mut segs = vec![Vec::new(); n];
            for (key, e) in &map {
                let Some(ix) = indices(key, prefix, 1) else { continue };
                let i = ix[0];
                if i == 0 || i > n {
                    return Err(err(K::DimensionMismatch, e.key_pos, format!("`{key}` refers to a channel above N={n}")));
                }
                let rows = as_array(e)?;
                if rows[0].len() != 3 {
                    return Err(err(
                        K::DimensionMismatch,
                        e.value_pos,
                        format!("`{key}` rows must be [start, end, value]"),
                    ));
                }
                for r in rows {
                    segs[i - 1].push(Segment {
                        start: cell_real(&r[0], "segment start")?,
                        end: cell_real(&r[1], "segment end")?,
                        value: r[2].value,
                    });
                }
            }
            let first = map.iter().find(|(k, _)| indices(k, prefix, 1).is_some()).map_or(sec.pos, |(_, e)| e.key_pos);
            TestFunction::new(segs).map_err(|e| err(K::InvariantViolation, first, e.to_string()))
        };
        let f = tf("f")?;
        let g = tf("g")?;
        Ok(SimulationPlan { t, lambdas, order, seed, f, g })
    }

    fn observable(&mut self, sec: &Section, d: usize) -> PResult<Mat> {
        let map = self.entries(sec, |k| k == "X")?;
        let e = map.get("X").ok_or_else(|| err(K::MissingKey, sec.pos, "[observable] needs `X`"))?;
        as_matrix(e, d, d)
    }
}
