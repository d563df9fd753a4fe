//! TOML problem and grid configuration.
//!
//! ```toml
//! seed = 7
//!
//! [family]
//! name = "balanced_cut"   # center_of_mass | balanced_cut | custom
//! m = 50
//! q = 2
//! rho = 0.1
//!
//! [penalty]               # optional
//! beta = 0.025
//! tau = 0.0               # scalar or one value per equality
//!
//! [solver]                # optional, any AlmOptions field
//! max_outer = 50
//! ```
//!
//! The flat form `family = "balanced_cut"` with the dimension keys at top
//! level is accepted as well. A `custom` family pairs a registered manifold
//! with the quadratic `f(x) = 1/2 x^T Diag(d) x + g^T x` and optional linear
//! constraints `E x = e`, `F x <= b`.

use std::sync::Arc;

use nalgebra::DMatrix;
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::experiments::{
    gen_balanced_cut, gen_center_of_mass, BalancedCutConfig, CenterOfMassConfig, ExperimentConfig,
    BALANCED_CUT_BETA, CENTER_OF_MASS_BETA,
};
use crate::manifolds::{make_handle, Family};
use crate::model::{FnConstraints, FnObjective, PenaltyParams, ProblemSpec, Vector};
use crate::solver::AlmOptions;

/// Everything a config document describes.
#[derive(Debug, Clone)]
pub struct LoadedProblem {
    pub problem: ProblemSpec,
    pub x0: Vector,
    pub penalty: PenaltyParams,
    pub options: AlmOptions,
    /// Set for the two benchmark families.
    pub experiment: Option<ExperimentConfig>,
}

pub fn parse_document(text: &str) -> Result<Table> {
    text.parse::<Table>()
        .map_err(|e| Error::config("<document>", e.message().to_string()))
}

/// Parses `value` as a TOML literal, falling back to a plain string.
fn parse_literal(value: &str) -> Value {
    format!("v = {value}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(value.to_string()))
}

/// Applies `a.b.c=value` overrides in place, creating tables as needed.
/// Flat documents are normalized first so that `family.m` always resolves.
pub fn apply_overrides(doc: &mut Table, overrides: &[String]) -> Result<()> {
    normalize(doc);
    for ov in overrides {
        let (key, value) = ov
            .split_once('=')
            .ok_or_else(|| Error::config(ov.clone(), "override must look like key=value"))?;
        let parts: Vec<&str> = key.trim().split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(Error::config(key, "empty path segment"));
        }
        let mut table = &mut *doc;
        for (depth, part) in parts[..parts.len() - 1].iter().enumerate() {
            let entry = table
                .entry(part.to_string())
                .or_insert_with(|| Value::Table(Table::new()));
            table = match entry {
                Value::Table(t) => t,
                _ => return Err(Error::config(parts[..=depth].join("."), "not a table")),
            };
        }
        table.insert(
            parts[parts.len() - 1].to_string(),
            parse_literal(value.trim()),
        );
    }
    Ok(())
}

/// Moves a flat `family = "name"` document into the table form.
pub fn normalize(doc: &mut Table) {
    if let Some(Value::String(name)) = doc.get("family").cloned() {
        let mut fam = Table::new();
        fam.insert("name".into(), Value::String(name));
        let keys: Vec<String> = doc
            .keys()
            .filter(|k| {
                !matches!(
                    k.as_str(),
                    "family" | "seed" | "penalty" | "solver" | "name" | "description"
                )
            })
            .cloned()
            .collect();
        for k in keys {
            if let Some(v) = doc.remove(&k) {
                fam.insert(k, v);
            }
        }
        doc.insert("family".into(), Value::Table(fam));
    }
}

struct Fields<'a> {
    table: &'a Table,
    prefix: &'a str,
}

impl<'a> Fields<'a> {
    fn path(&self, key: &str) -> String {
        format!("{}.{key}", self.prefix)
    }

    fn get(&self, key: &str) -> Option<&'a Value> {
        self.table.get(key)
    }

    fn usize(&self, key: &str) -> Result<usize> {
        match self.get(key) {
            Some(Value::Integer(i)) if *i >= 0 => Ok(*i as usize),
            Some(_) => Err(Error::config(
                self.path(key),
                "expected a nonnegative integer",
            )),
            None => Err(Error::config(self.path(key), "missing field")),
        }
    }

    fn opt_usize(&self, key: &str) -> Result<Option<usize>> {
        self.get(key).map(|_| self.usize(key)).transpose()
    }

    fn f64(&self, key: &str) -> Result<f64> {
        match self.get(key) {
            Some(Value::Float(f)) => Ok(*f),
            Some(Value::Integer(i)) => Ok(*i as f64),
            Some(_) => Err(Error::config(self.path(key), "expected a number")),
            None => Err(Error::config(self.path(key), "missing field")),
        }
    }

    fn opt_f64(&self, key: &str) -> Result<Option<f64>> {
        self.get(key).map(|_| self.f64(key)).transpose()
    }

    fn vector(&self, key: &str, len: usize) -> Result<Option<Vec<f64>>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Float(_)) | Some(Value::Integer(_)) => Ok(Some(vec![self.f64(key)?; len])),
            Some(Value::Array(a)) => {
                let v =
                    numbers(a).ok_or_else(|| Error::config(self.path(key), "expected numbers"))?;
                if v.len() != len {
                    return Err(Error::config(
                        self.path(key),
                        format!("expected {len} entries, got {}", v.len()),
                    ));
                }
                Ok(Some(v))
            }
            Some(_) => Err(Error::config(
                self.path(key),
                "expected a number or an array",
            )),
        }
    }

    fn matrix(&self, key: &str, cols: usize) -> Result<Option<DMatrix<f64>>> {
        let Some(v) = self.get(key) else {
            return Ok(None);
        };
        let rows = v
            .as_array()
            .ok_or_else(|| Error::config(self.path(key), "expected an array of rows"))?;
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_array().and_then(|r| numbers(r)).ok_or_else(|| {
                Error::config(format!("{}[{i}]", self.path(key)), "expected numbers")
            })?;
            if r.len() != cols {
                return Err(Error::config(
                    format!("{}[{i}]", self.path(key)),
                    format!("expected {cols} entries, got {}", r.len()),
                ));
            }
            data.extend(r);
        }
        Ok(Some(DMatrix::from_row_slice(rows.len(), cols, &data)))
    }
}

fn numbers(a: &[Value]) -> Option<Vec<f64>> {
    a.iter()
        .map(|v| match v {
            Value::Float(f) => Some(*f),
            Value::Integer(i) => Some(*i as f64),
            _ => None,
        })
        .collect()
}

fn seed_of(doc: &Table, fam: &Table) -> Result<u64> {
    match fam.get("seed").or_else(|| doc.get("seed")) {
        Some(Value::Integer(i)) if *i >= 0 => Ok(*i as u64),
        Some(_) => Err(Error::config("seed", "expected a nonnegative integer")),
        None => Ok(0),
    }
}

fn family_table(doc: &Table) -> Result<(&Table, String)> {
    let fam = match doc.get("family") {
        Some(Value::Table(t)) => t,
        Some(_) => return Err(Error::config("family", "expected a table or a family name")),
        None => return Err(Error::config("family", "missing field")),
    };
    let name = match fam.get("name") {
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(Error::config("family.name", "expected a string")),
        None => return Err(Error::config("family.name", "missing field")),
    };
    Ok((fam, name))
}

/// Benchmark configuration described by a family table.
pub fn experiment_config(fam: &Table, seed: u64, prefix: &str) -> Result<ExperimentConfig> {
    let f = Fields { table: fam, prefix };
    let name = fam.get("name").and_then(|v| v.as_str()).unwrap_or_default();
    let cfg = match name {
        "center_of_mass" => ExperimentConfig::CenterOfMass(CenterOfMassConfig {
            m: f.usize("m")?,
            q: f.usize("q")?,
            n_samples: f.usize("N")?,
            r: f.f64("r")?,
            seed,
        }),
        "balanced_cut" => ExperimentConfig::BalancedCut(BalancedCutConfig {
            m: f.usize("m")?,
            q: f.usize("q")?,
            rho: f.f64("rho")?,
            seed,
        }),
        other => {
            return Err(Error::config(
                format!("{prefix}.name"),
                format!("unknown benchmark family `{other}`"),
            ))
        }
    };
    match &cfg {
        ExperimentConfig::CenterOfMass(c) => c.validate(),
        ExperimentConfig::BalancedCut(c) => c.validate(),
    }
    .map_err(|e| match e {
        Error::Config { path, message } => {
            Error::config(path.replacen(cfg.family(), prefix, 1), message)
        }
        other => other,
    })?;
    Ok(cfg)
}

fn custom_problem(fam: &Table) -> Result<(ProblemSpec, Vector)> {
    let f = Fields {
        table: fam,
        prefix: "family",
    };
    let manifold = match fam.get("manifold") {
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(Error::config("family.manifold", "expected a string")),
        None => return Err(Error::config("family.manifold", "missing field")),
    };
    let family = Family::from_name(
        &manifold,
        f.opt_usize("m")?,
        f.opt_usize("q")?,
        f.opt_usize("n")?,
    )
    .map_err(|e| match e {
        Error::Config { path, message } => {
            Error::config(path.replacen(&manifold, "family", 1), message)
        }
        other => other,
    })?;
    let handle = make_handle(family)?;
    let n = handle.dim();
    let d = Vector::from_vec(f.vector("diag", n)?.unwrap_or_else(|| vec![1.0; n]));
    let g = Vector::from_vec(f.vector("linear", n)?.unwrap_or_else(|| vec![0.0; n]));
    let (d2, g2) = (d.clone(), g.clone());
    let objective = FnObjective::new(
        move |x| 0.5 * x.dot(&d.component_mul(x)) + g.dot(x),
        move |x| d2.component_mul(x) + &g2,
    );
    let mut problem = ProblemSpec::new("custom", handle.clone(), Arc::new(objective))
        .with_description(format!("quadratic objective on {manifold}"));
    let affine = |mat_key: &str, rhs_key: &str| -> Result<Option<FnConstraints>> {
        let Some(mat) = f.matrix(mat_key, n)? else {
            return Ok(None);
        };
        let rhs = f
            .vector(rhs_key, mat.nrows())?
            .unwrap_or_else(|| vec![0.0; mat.nrows()]);
        Ok(Some(FnConstraints::affine(
            mat.transpose(),
            Vector::from_vec(rhs),
        )))
    };
    if let Some(eq) = affine("eq_matrix", "eq_rhs")? {
        problem = problem.with_equalities(Arc::new(eq));
    }
    if let Some(ineq) = affine("ineq_matrix", "ineq_rhs")? {
        problem = problem.with_inequalities(Arc::new(ineq));
    }
    let x0 = match f.vector("x0", n)? {
        Some(v) => Vector::from_vec(v),
        None => handle.canonical_point(),
    };
    Ok((problem, x0))
}

fn penalty(doc: &Table, problem: &ProblemSpec, default_beta: f64) -> Result<PenaltyParams> {
    let mut params = PenaltyParams::for_problem(problem, default_beta);
    let Some(v) = doc.get("penalty") else {
        return Ok(params);
    };
    let t = v
        .as_table()
        .ok_or_else(|| Error::config("penalty", "expected a table"))?;
    let f = Fields {
        table: t,
        prefix: "penalty",
    };
    if let Some(b) = f.opt_f64("beta")? {
        params.beta = b;
    }
    if let Some(tau) = f.vector("tau", problem.num_equalities())? {
        params.tau = tau;
    }
    if let Some(gamma) = f.vector("gamma", problem.num_inequalities())? {
        params.gamma = gamma;
    }
    params
        .validate(problem.num_equalities(), problem.num_inequalities())
        .map_err(|e| Error::config("penalty", e.to_string()))?;
    Ok(params)
}

/// Solver options from the `[solver]` table; unknown keys are errors.
pub fn solver_options(doc: &Table) -> Result<AlmOptions> {
    let opts = match doc.get("solver") {
        None => AlmOptions::default(),
        Some(Value::Table(t)) => Value::Table(t.clone())
            .try_into::<AlmOptions>()
            .map_err(|e| Error::config("solver", e.message().to_string()))?,
        Some(_) => return Err(Error::config("solver", "expected a table")),
    };
    opts.validate()
        .map_err(|e| Error::config("solver", e.to_string()))?;
    Ok(opts)
}

/// Loads a problem from a parsed document.
pub fn load_problem_doc(doc: &Table) -> Result<LoadedProblem> {
    let mut doc = doc.clone();
    normalize(&mut doc);
    let (fam, name) = family_table(&doc)?;
    let seed = seed_of(&doc, fam)?;
    let (problem, x0, beta, experiment) = match name.as_str() {
        "center_of_mass" | "balanced_cut" => {
            let cfg = experiment_config(fam, seed, "family")?;
            let (problem, x0, beta) = match &cfg {
                ExperimentConfig::CenterOfMass(c) => {
                    let g = gen_center_of_mass(c)?;
                    (g.problem, g.x0, CENTER_OF_MASS_BETA)
                }
                ExperimentConfig::BalancedCut(c) => {
                    let g = gen_balanced_cut(c)?;
                    (g.problem, g.x0, BALANCED_CUT_BETA)
                }
            };
            (problem, x0, beta, Some(cfg))
        }
        "custom" => {
            let (problem, x0) = custom_problem(fam)?;
            (problem, x0, 1.0, None)
        }
        other => {
            return Err(Error::config(
                "family.name",
                format!("unknown problem family `{other}` (expected center_of_mass, balanced_cut or custom)"),
            ))
        }
    };
    let penalty = penalty(&doc, &problem, beta)?;
    let mut options = solver_options(&doc)?;
    if doc.get("solver").and_then(|s| s.get("seed")).is_none() {
        options.seed = seed;
    }
    Ok(LoadedProblem {
        problem,
        x0,
        penalty,
        options,
        experiment,
    })
}

/// Loads a problem from TOML text.
pub fn load_problem(text: &str) -> Result<LoadedProblem> {
    load_problem_doc(&parse_document(text)?)
}

/// A benchmark grid: `[[run]]` entries, each a family table with an optional
/// seed, plus shared `[solver]` options.
///
/// ```toml
/// [solver]
/// time_budget = 60.0
///
/// [[run]]
/// name = "balanced_cut"
/// m = 50
/// q = 2
/// rho = 0.1
/// seed = 7
/// ```
///
/// Entries may list several values for `m`, `q`, `N`, `r`, `rho` or `seed`;
/// the grid is their Cartesian product. Grid runs keep the benchmark penalty
/// fixed unless `solver.beta_adapt` is set.
pub fn load_grid(text: &str) -> Result<(Vec<ExperimentConfig>, AlmOptions)> {
    let doc = parse_document(text)?;
    let mut opts = solver_options(&doc)?;
    if doc
        .get("solver")
        .and_then(|s| s.get("beta_adapt"))
        .is_none()
    {
        opts.beta_adapt = false;
    }
    let runs = match doc.get("run") {
        Some(Value::Array(a)) => a,
        Some(_) => return Err(Error::config("run", "expected an array of tables")),
        None => return Err(Error::config("run", "missing field")),
    };
    let mut grid = Vec::new();
    for (i, r) in runs.iter().enumerate() {
        let prefix = format!("run[{i}]");
        let t = r
            .as_table()
            .ok_or_else(|| Error::config(prefix.clone(), "expected a table"))?;
        for expanded in expand(t) {
            let seed = seed_of(&Table::new(), &expanded)?;
            grid.push(experiment_config(&expanded, seed, &prefix)?);
        }
    }
    Ok((grid, opts))
}

/// Cartesian product over array-valued dimension keys.
fn expand(t: &Table) -> Vec<Table> {
    let mut out = vec![t.clone()];
    for key in ["m", "q", "N", "r", "rho", "seed"] {
        if let Some(Value::Array(vals)) = t.get(key) {
            out = out
                .into_iter()
                .flat_map(|base| {
                    vals.iter().map(move |v| {
                        let mut b = base.clone();
                        b.insert(key.into(), v.clone());
                        b
                    })
                })
                .collect();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_cut_dimensions() {
        let l = load_problem("family = \"balanced_cut\"\nm = 50\nq = 2\nrho = 0.1\nseed = 7\n")
            .unwrap();
        let p = &l.problem;
        assert_eq!((p.dim(), p.manifold.num_constraints()), (100, 50));
        assert_eq!((p.num_equalities(), p.num_inequalities()), (2, 0));
        assert_eq!(l.penalty.beta, BALANCED_CUT_BETA);
        assert_eq!(l.options.seed, 7);
    }

    #[test]
    fn center_of_mass_counts() {
        let l = load_problem(
            "seed = 1\n[family]\nname = \"center_of_mass\"\nm = 20\nq = 4\nN = 30\nr = 0.01\n",
        )
        .unwrap();
        assert_eq!(
            (l.problem.num_equalities(), l.problem.num_inequalities()),
            (0, 1)
        );
        assert_eq!(l.problem.dim(), 80);
    }

    #[test]
    fn missing_m_reports_path() {
        let err = load_problem("family = \"balanced_cut\"\nq = 2\nrho = 0.1\n").unwrap_err();
        assert!(
            matches!(err, Error::Config { ref path, .. } if path == "family.m"),
            "{err}"
        );
    }

    #[test]
    fn unknown_family_and_bad_values() {
        assert!(matches!(
            load_problem("family = \"torus\"\n"),
            Err(Error::Config { path, .. }) if path == "family.name"
        ));
        assert!(matches!(
            load_problem("family = \"balanced_cut\"\nm = 50\nq = 2\nrho = 2.0\n"),
            Err(Error::Config { path, .. }) if path == "family.rho"
        ));
        assert!(matches!(
            load_problem("family = \"center_of_mass\"\nm = 5\nq = 2\nN = 3\nr = 0.1\n"),
            Err(Error::Config { .. })
        ));
        assert!(matches!(
            load_problem("family = \"balanced_cut\"\nm = 50\nq = 2\nrho = 0.1\n[solver]\nbogus = 1\n"),
            Err(Error::Config { path, .. }) if path == "solver"
        ));
    }

    #[test]
    fn loading_is_deterministic() {
        let text = "family = \"balanced_cut\"\nm = 20\nq = 3\nrho = 0.2\nseed = 3\n";
        let (a, b) = (load_problem(text).unwrap(), load_problem(text).unwrap());
        assert_eq!(a.x0, b.x0);
        let y = a.x0.map(|v| v * 1.3 + 0.1);
        assert_eq!(
            a.problem.objective.value(&y).to_bits(),
            b.problem.objective.value(&y).to_bits()
        );
        assert_eq!(
            a.problem.objective.gradient(&y),
            b.problem.objective.gradient(&y)
        );
    }

    #[test]
    fn overrides_follow_dotted_paths() {
        let mut doc =
            parse_document("family = \"balanced_cut\"\nm = 20\nq = 3\nrho = 0.2\n").unwrap();
        apply_overrides(
            &mut doc,
            &[
                "family.m=30".into(),
                "penalty.beta=0.5".into(),
                "solver.max_outer=7".into(),
            ],
        )
        .unwrap();
        let l = load_problem_doc(&doc).unwrap();
        assert_eq!(l.problem.dim(), 90);
        assert_eq!(l.penalty.beta, 0.5);
        assert_eq!(l.options.max_outer, 7);
        assert!(apply_overrides(&mut doc, &["nokey".into()]).is_err());
    }

    #[test]
    fn custom_family_with_linear_constraints() {
        let text = r#"
            [family]
            name = "custom"
            manifold = "sphere"
            n = 3
            linear = [1.0, 0.0, 0.0]
            eq_matrix = [[0.0, 1.0, 0.0]]
            ineq_matrix = [[0.0, 0.0, 1.0]]
            ineq_rhs = [0.5]
        "#;
        let l = load_problem(text).unwrap();
        let p = &l.problem;
        assert_eq!(
            (p.dim(), p.num_equalities(), p.num_inequalities()),
            (3, 1, 1)
        );
        let x = Vector::from_vec(vec![0.0, 0.2, 0.9]);
        assert!((p.inequalities.eval(&x)[0] - 0.4).abs() < 1e-15);
        assert!((p.equalities.eval(&x)[0] - 0.2).abs() < 1e-15);
        assert!(matches!(
            load_problem("[family]\nname = \"custom\"\nmanifold = \"oblique\"\nq = 2\n"),
            Err(Error::Config { path, .. }) if path == "family.m"
        ));
        assert!(
            load_problem("[family]\nname = \"custom\"\nmanifold = \"generic\"\nn = 2\n").is_err()
        );
    }

    #[test]
    fn grid_expands_arrays() {
        let text =
            "[[run]]\nname = \"balanced_cut\"\nm = [50, 100]\nq = 2\nrho = 0.1\nseed = [1, 2]\n";
        let (grid, opts) = load_grid(text).unwrap();
        assert_eq!(grid.len(), 4);
        assert!(!opts.beta_adapt);
        assert!(load_grid("[solver]\nmax_outer = 3\n").is_err());
    }
}
