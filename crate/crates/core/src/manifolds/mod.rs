//! Catalog of constraint dissolving operators.

pub mod generic;
pub mod oblique;
pub mod symplectic;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use generic::{generic_a, GenericDissolver, SmoothConstraint, SphereConstraint};
pub use oblique::{oblique_a, oblique_ja, sphere_a, Oblique};
pub use symplectic::SymplecticConstraint;

use crate::error::{Error, Result};
use crate::model::{Manifold, ManifoldHandle, Shape, Vector};
use crate::util::{seeded_rng, unit_gaussian};

/// Registered manifold families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum Family {
    Oblique {
        m: usize,
        q: usize,
    },
    Sphere {
        n: usize,
    },
    SymplecticStiefel {
        m: usize,
        q: usize,
    },
    /// The generic Gauss-Newton operator applied to `c(x) = |x|^2 - 1`.
    GenericSphere {
        n: usize,
    },
}

pub const FAMILY_NAMES: [&str; 4] = ["oblique", "sphere", "symplectic_stiefel", "generic_sphere"];

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Oblique { .. } => "oblique",
            Family::Sphere { .. } => "sphere",
            Family::SymplecticStiefel { .. } => "symplectic_stiefel",
            Family::GenericSphere { .. } => "generic_sphere",
        }
    }

    /// Builds a family from its registry name and dimension fields.
    pub fn from_name(
        name: &str,
        m: Option<usize>,
        q: Option<usize>,
        n: Option<usize>,
    ) -> Result<Self> {
        let need = |v: Option<usize>, field: &str| {
            v.ok_or_else(|| Error::config(format!("{name}.{field}"), "missing field"))
        };
        match name {
            "oblique" => Ok(Family::Oblique {
                m: need(m, "m")?,
                q: need(q, "q")?,
            }),
            "sphere" => Ok(Family::Sphere { n: need(n, "n")? }),
            "symplectic_stiefel" => Ok(Family::SymplecticStiefel {
                m: need(m, "m")?,
                q: need(q, "q")?,
            }),
            "generic_sphere" => Ok(Family::GenericSphere { n: need(n, "n")? }),
            "generic" => Err(Error::config(
                "family",
                "the generic family needs a constraint function supplied through the library API",
            )),
            other => Err(Error::config(
                "family",
                format!("unknown manifold family `{other}`"),
            )),
        }
    }
}

/// The unconstrained space `R^n` (`p = 0`, `A = id`). Only used by the direct
/// NLP pipeline.
#[derive(Debug, Clone)]
pub struct Euclidean {
    n: usize,
}

impl Euclidean {
    pub fn new(n: usize) -> Self {
        Euclidean { n }
    }
}

impl Manifold for Euclidean {
    fn name(&self) -> &str {
        "euclidean"
    }
    fn shape(&self) -> Shape {
        Shape::vector(self.n)
    }
    fn num_constraints(&self) -> usize {
        0
    }
    fn constraint(&self, _x: &Vector) -> Vector {
        Vector::zeros(0)
    }
    fn jc_t(&self, _x: &Vector, _d: &Vector) -> Vector {
        Vector::zeros(0)
    }
    fn jc(&self, _x: &Vector, _w: &Vector) -> Vector {
        Vector::zeros(self.n)
    }
    fn dissolve(&self, x: &Vector) -> Result<Vector> {
        Ok(x.clone())
    }
    fn ja(&self, _x: &Vector, d: &Vector) -> Result<Vector> {
        Ok(d.clone())
    }
    fn ja_t(&self, _x: &Vector, d: &Vector) -> Result<Vector> {
        Ok(d.clone())
    }
    fn canonical_point(&self) -> Vector {
        Vector::zeros(self.n)
    }
}

pub fn make_handle(family: Family) -> Result<ManifoldHandle> {
    let positive = |v: usize, field: &str| {
        if v == 0 {
            Err(Error::config(
                format!("{}.{field}", family.name()),
                "must be positive",
            ))
        } else {
            Ok(v)
        }
    };
    Ok(match family {
        Family::Oblique { m, q } => Arc::new(Oblique::new(positive(m, "m")?, positive(q, "q")?)),
        Family::Sphere { n } => Arc::new(Oblique::sphere(positive(n, "n")?)),
        Family::SymplecticStiefel { m, q } => {
            let c = SymplecticConstraint::new(m, q)
                .map_err(|e| Error::config("symplectic_stiefel", e.to_string()))?;
            Arc::new(GenericDissolver::new(c).named(format!("symplectic_stiefel({m}x{q})")))
        }
        Family::GenericSphere { n } => Arc::new(
            GenericDissolver::new(SphereConstraint::new(positive(n, "n")?))
                .named(format!("generic_sphere({n})")),
        ),
    })
}

/// Wraps a user-supplied constraint with the generic operator.
pub fn make_generic_handle<C: SmoothConstraint + 'static>(
    constraint: C,
    reg: f64,
) -> ManifoldHandle {
    Arc::new(GenericDissolver::with_reg(constraint, reg))
}

/// Feasible probe points: the canonical point perturbed by `spread` in a
/// random direction and projected back with `A^inf`. Probes whose projection
/// fails are retried with half the spread.
pub fn projected_probes(
    handle: &dyn Manifold,
    count: usize,
    spread: f64,
    seed: u64,
) -> Result<Vec<Vector>> {
    let base = handle.canonical_point();
    let mut rng = seeded_rng(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let dir = unit_gaussian(&mut rng, base.len());
        let mut s = spread;
        let mut last_err = None;
        let mut found = None;
        for _ in 0..8 {
            let y = &base + s * &dir;
            match crate::dissolve::a_infinity(handle, &y, 1e-13, 60) {
                Ok(r) => {
                    found = Some(r.point);
                    break;
                }
                Err(e) => {
                    last_err = Some(e);
                    s *= 0.5;
                }
            }
        }
        match found {
            Some(p) => out.push(p),
            None => return Err(last_err.expect("at least one attempt")),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_manifold;

    #[test]
    fn handle_dimensions() {
        let h = make_handle(Family::Oblique { m: 100, q: 10 }).unwrap();
        assert_eq!((h.dim(), h.num_constraints()), (1000, 100));
        let h = make_handle(Family::Sphere { n: 3 }).unwrap();
        assert_eq!((h.dim(), h.num_constraints()), (3, 1));
        let h = make_handle(Family::SymplecticStiefel { m: 50, q: 10 }).unwrap();
        assert_eq!((h.dim(), h.num_constraints()), (500, 45));
    }

    #[test]
    fn symplectic_canonical_point_validates() {
        let h = make_handle(Family::SymplecticStiefel { m: 50, q: 10 }).unwrap();
        let r = validate_manifold(h.as_ref(), &[h.canonical_point()], 1e-10).unwrap();
        assert!(r.passed, "{r:?}");
        let e = h.canonical_point();
        assert_eq!(h.dissolve(&e).unwrap(), e);
    }

    #[test]
    fn odd_symplectic_dims_are_config_errors() {
        assert!(matches!(
            make_handle(Family::SymplecticStiefel { m: 5, q: 2 }),
            Err(Error::Config { .. })
        ));
        assert!(make_handle(Family::Oblique { m: 0, q: 3 }).is_err());
    }

    #[test]
    fn generic_without_constraint_is_rejected() {
        assert!(Family::from_name("generic", None, None, Some(3)).is_err());
        assert!(Family::from_name("torus", None, None, Some(3)).is_err());
        assert!(matches!(
            Family::from_name("oblique", None, Some(3), None),
            Err(Error::Config { path, .. }) if path == "oblique.m"
        ));
    }

    #[test]
    fn sphere_feasible_point_validates() {
        let h = make_handle(Family::Sphere { n: 3 }).unwrap();
        let e1 = crate::util::basis(3, 0);
        let r = validate_manifold(h.as_ref(), &[e1], 1e-10).unwrap();
        assert!(r.passed);
        assert_eq!(r.fixed_point_error, 0.0);
    }

    #[test]
    fn generic_sphere_probes_validate() {
        let h = make_handle(Family::GenericSphere { n: 6 }).unwrap();
        let probes = projected_probes(h.as_ref(), 50, 0.5, 3).unwrap();
        let r = validate_manifold(h.as_ref(), &probes, 1e-9).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.derivative_error < 1e-6);
    }
}
