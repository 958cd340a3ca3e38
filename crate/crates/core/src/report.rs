//! Verification reports, canonical JSON emission and CSV field dumps.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde_json::Value;

use crate::error::Result;
use crate::linalg::C64;

/// One named check with its measured value and bound.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub relation: &'static str,
    pub measured: f64,
    pub bound: Option<f64>,
    pub upper: Option<f64>,
    pub tol: f64,
    pub pass: bool,
    pub note: String,
}

impl Check {
    /// `measured ≤ bound + tol`.
    pub fn le(name: impl Into<String>, measured: f64, bound: f64, tol: f64) -> Self {
        let pass = measured <= bound + tol;
        Check { name: name.into(), relation: "le", measured, bound: Some(bound), upper: None, tol, pass, note: String::new() }
    }
    /// `measured ≥ bound − tol`.
    pub fn ge(name: impl Into<String>, measured: f64, bound: f64, tol: f64) -> Self {
        let pass = measured >= bound - tol;
        Check { name: name.into(), relation: "ge", measured, bound: Some(bound), upper: None, tol, pass, note: String::new() }
    }
    /// `|measured − target| ≤ tol`.
    pub fn near(name: impl Into<String>, measured: f64, target: f64, tol: f64) -> Self {
        let pass = (measured - target).abs() <= tol;
        Check { name: name.into(), relation: "eq", measured, bound: Some(target), upper: None, tol, pass, note: String::new() }
    }
    /// `lo < measured < hi`, strict.
    pub fn inside(name: impl Into<String>, measured: f64, lo: f64, hi: f64) -> Self {
        let pass = lo < measured && measured < hi;
        Check { name: name.into(), relation: "in", measured, bound: Some(lo), upper: Some(hi), tol: 0.0, pass, note: String::new() }
    }
    /// Recorded value without a pass criterion.
    pub fn info(name: impl Into<String>, measured: f64) -> Self {
        Check { name: name.into(), relation: "info", measured, bound: None, upper: None, tol: 0.0, pass: true, note: String::new() }
    }
    /// Boolean outcome.
    pub fn flag(name: impl Into<String>, ok: bool) -> Self {
        Check {
            name: name.into(),
            relation: "true",
            measured: if ok { 1.0 } else { 0.0 },
            bound: None,
            upper: None,
            tol: 0.0,
            pass: ok,
            note: String::new(),
        }
    }
    pub fn note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }

    fn to_value(&self) -> Value {
        let mut m = serde_json::Map::new();
        m.insert("name".into(), Value::from(self.name.clone()));
        m.insert("relation".into(), Value::from(self.relation));
        m.insert("measured".into(), num(self.measured));
        m.insert("bound".into(), self.bound.map(num).unwrap_or(Value::Null));
        if let Some(u) = self.upper {
            m.insert("upper".into(), num(u));
        }
        m.insert("tolerance".into(), num(self.tol));
        m.insert("pass".into(), Value::from(self.pass));
        if !self.note.is_empty() {
            m.insert("note".into(), Value::from(self.note.clone()));
        }
        Value::Object(m)
    }
}

pub fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map(Value::Number).unwrap_or(Value::Null)
}

/// Named checks, an environment block and optional extra tables.
#[derive(Clone, Debug, Default)]
pub struct VerificationReport {
    pub checks: Vec<Check>,
    pub env: BTreeMap<String, Value>,
    pub extra: BTreeMap<String, Value>,
}

impl VerificationReport {
    pub fn new() -> Self {
        Self::default()
    }
    pub fn push(&mut self, c: Check) {
        self.checks.push(c);
    }
    pub fn env(&mut self, key: &str, v: impl Into<Value>) {
        self.env.insert(key.into(), v.into());
    }
    pub fn extra(&mut self, key: &str, v: impl Into<Value>) {
        self.extra.insert(key.into(), v.into());
    }
    /// Append another report's checks under `prefix/`.
    pub fn absorb(&mut self, prefix: &str, other: VerificationReport) {
        for mut c in other.checks {
            c.name = format!("{prefix}/{}", c.name);
            self.checks.push(c);
        }
        for (k, v) in other.extra {
            self.extra.insert(format!("{prefix}/{k}"), v);
        }
    }
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }
    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_value(&self) -> Value {
        let mut m = serde_json::Map::new();
        m.insert("checks".into(), Value::Array(self.checks.iter().map(Check::to_value).collect()));
        m.insert("env".into(), Value::Object(self.env.clone().into_iter().collect()));
        if !self.extra.is_empty() {
            m.insert("extra".into(), Value::Object(self.extra.clone().into_iter().collect()));
        }
        m.insert("status".into(), Value::from(if self.passed() { "pass" } else { "fail" }));
        Value::Object(m)
    }

    pub fn to_canonical_json(&self) -> String {
        canonical_json(&self.to_value())
    }
}

/// Sorted keys, no whitespace, floats as 17 significant digits in lowercase scientific notation.
pub fn canonical_json(v: &Value) -> String {
    let mut out = String::new();
    write_value(v, &mut out);
    out
}

fn write_value(v: &Value, out: &mut String) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                out.push_str(&i.to_string());
            } else if let Some(u) = n.as_u64() {
                out.push_str(&u.to_string());
            } else {
                out.push_str(&fmt_float(n.as_f64().unwrap_or(f64::NAN)));
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("string serialization")),
        Value::Array(a) => {
            out.push('[');
            for (i, x) in a.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(x, out);
            }
            out.push(']');
        }
        Value::Object(m) => {
            let mut keys: Vec<&String> = m.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(k).expect("key serialization"));
                out.push(':');
                write_value(&m[*k], out);
            }
            out.push('}');
        }
    }
}

pub fn fmt_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        "null".into()
    }
}

/// Write the canonical JSON report to `path`.
pub fn emit_report(rep: &VerificationReport, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(rep.to_canonical_json().as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

/// `x,y,re,im` rows in node order.
pub fn write_field_csv(mut w: impl Write, nodes: &[C64], values: &[C64]) -> Result<()> {
    writeln!(w, "x,y,re,im")?;
    for (z, v) in nodes.iter().zip(values) {
        writeln!(w, "{},{},{},{}", fmt_float(z.re), fmt_float(z.im), fmt_float(v.re), fmt_float(v.im))?;
    }
    Ok(())
}
