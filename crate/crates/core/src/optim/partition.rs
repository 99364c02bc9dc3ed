use crate::error::{Error, Result};
use crate::models::{Model, PartitionScheme};

/// A named group of parameters, by index into the model's parameter list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Unit {
    pub name: String,
    pub params: Vec<usize>,
}

/// Disjoint groups that together cover every parameter exactly once.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    units: Vec<Unit>,
    n_params: usize,
}

impl Partition {
    pub fn new(units: Vec<Unit>, n_params: usize) -> Result<Self> {
        let p = Self { units, n_params };
        p.check_cover()?;
        Ok(p)
    }

    pub fn whole(n_params: usize) -> Result<Self> {
        Self::new(
            vec![Unit {
                name: "all".into(),
                params: (0..n_params).collect(),
            }],
            n_params,
        )
    }

    /// One unit per distinct label, in order of first appearance.
    pub fn from_labels(labels: &[String]) -> Result<Self> {
        let mut units: Vec<Unit> = Vec::new();
        for (i, label) in labels.iter().enumerate() {
            match units.iter_mut().find(|u| &u.name == label) {
                Some(u) => u.params.push(i),
                None => units.push(Unit {
                    name: label.clone(),
                    params: vec![i],
                }),
            }
        }
        Self::new(units, labels.len())
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    /// Errors unless every parameter index appears in exactly one unit.
    pub fn check_cover(&self) -> Result<()> {
        if self.units.is_empty() || self.n_params == 0 {
            return Err(Error::contract(
                "a partition needs at least one unit and one parameter",
            ));
        }
        let mut owner = vec![None; self.n_params];
        for (u, unit) in self.units.iter().enumerate() {
            if unit.params.is_empty() {
                return Err(Error::contract(format!("unit `{}` is empty", unit.name)));
            }
            for &p in &unit.params {
                let slot = owner.get_mut(p).ok_or_else(|| {
                    Error::contract(format!(
                        "unit `{}` refers to parameter {p} of {}",
                        unit.name, self.n_params
                    ))
                })?;
                if let Some(prev) = slot.replace(u) {
                    return Err(Error::contract(format!(
                        "parameter {p} is in both `{}` and `{}`",
                        self.units[prev].name, unit.name
                    )));
                }
            }
        }
        if let Some(p) = owner.iter().position(Option::is_none) {
            return Err(Error::contract(format!("parameter {p} belongs to no unit")));
        }
        Ok(())
    }

    /// Fuses units `a` and `b` into one at the lower index. Parameters of the
    /// lower unit come first.
    pub(crate) fn fuse(&mut self, a: usize, b: usize) -> Result<()> {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        if lo == hi || hi >= self.units.len() {
            return Err(Error::contract(format!("cannot fuse units {a} and {b}")));
        }
        let gone = self.units.remove(hi);
        let keep = &mut self.units[lo];
        keep.name = format!("{}+{}", keep.name, gone.name);
        keep.params.extend(gone.params);
        self.check_cover()
    }
}

/// Splits a model's parameters according to `scheme`.
pub fn partition_model(model: &Model, scheme: &PartitionScheme) -> Result<Partition> {
    Partition::from_labels(&model.unit_labels(scheme)?)
}
