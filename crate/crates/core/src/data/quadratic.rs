use crate::autodiff::{Parameter, Tensor};
use crate::error::{Error, Result};
use crate::optim::Problem;

/// `f(w) = 1/2 sum_i L_i w_i^2`, split into named parameter blocks.
///
/// The gradient Lipschitz constant is `max_i L_i`, and a negative-gradient
/// Armijo step on a block with curvature `L` is accepted iff
/// `eta <= 2 (1 - c) / L`.
#[derive(Clone, Debug)]
pub struct Quadratic {
    params: Vec<Parameter>,
    curvatures: Vec<Vec<f64>>,
}

/// Single block `w` with the given curvature spectrum, started at all ones.
pub fn make_quadratic(dim: usize, spectrum: &[f64]) -> Result<Quadratic> {
    if spectrum.len() != dim {
        return Err(Error::Dimension {
            op: "make_quadratic",
            left: vec![dim],
            right: vec![spectrum.len()],
        });
    }
    Quadratic::from_blocks(vec![("w".to_string(), spectrum.to_vec())])
}

impl Quadratic {
    pub fn from_blocks(blocks: Vec<(String, Vec<f64>)>) -> Result<Self> {
        if blocks.is_empty() || blocks.iter().any(|(_, c)| c.is_empty()) {
            return Err(Error::contract(
                "quadratic needs at least one non-empty block",
            ));
        }
        let mut params = Vec::with_capacity(blocks.len());
        let mut curvatures = Vec::with_capacity(blocks.len());
        for (name, curv) in blocks {
            if let Some(bad) = curv.iter().find(|&&l| !(l > 0.0 && l.is_finite())) {
                return Err(Error::contract(format!(
                    "curvatures must be positive, block `{name}` has {bad}"
                )));
            }
            params.push(Parameter::new(
                name,
                Tensor::from_vec(vec![1.0; curv.len()]),
            ));
            curvatures.push(curv);
        }
        Ok(Self { params, curvatures })
    }

    /// Replaces the current point; `values` is the concatenation of blocks.
    pub fn with_start(mut self, values: &[f64]) -> Result<Self> {
        let total: usize = self.params.iter().map(Parameter::len).sum();
        if values.len() != total {
            return Err(Error::Dimension {
                op: "with_start",
                left: vec![total],
                right: vec![values.len()],
            });
        }
        let mut offset = 0;
        for p in &mut self.params {
            let n = p.len();
            p.values_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(self)
    }

    pub fn lipschitz(&self) -> f64 {
        self.curvatures
            .iter()
            .flatten()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn curvatures(&self) -> &[Vec<f64>] {
        &self.curvatures
    }

    pub fn value(&self) -> f64 {
        let mut f = 0.0;
        for (p, curv) in self.params.iter().zip(&self.curvatures) {
            for (w, l) in p.values().iter().zip(curv) {
                f += 0.5 * l * w * w;
            }
        }
        f
    }
}

impl Problem for Quadratic {
    fn params(&self) -> &[Parameter] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    fn loss(&mut self) -> Result<f64> {
        Ok(self.value())
    }

    fn loss_and_grad(&mut self) -> Result<f64> {
        for (p, curv) in self.params.iter_mut().zip(&self.curvatures) {
            let g: Vec<f64> = p.values().iter().zip(curv).map(|(w, l)| l * w).collect();
            p.tensor.set_grad(g)?;
        }
        Ok(self.value())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_value_and_grad() {
        let mut q = make_quadratic(1, &[1.0]).unwrap();
        assert_eq!(q.loss_and_grad().unwrap(), 0.5);
        assert_eq!(q.params()[0].grad().unwrap(), &[1.0]);
    }

    #[test]
    fn lipschitz_is_max_curvature() {
        let q = make_quadratic(2, &[1.0, 100.0]).unwrap();
        assert_eq!(q.lipschitz(), 100.0);
    }

    #[test]
    fn rejects_bad_spectra() {
        assert!(make_quadratic(2, &[1.0, 0.0]).is_err());
        assert!(make_quadratic(2, &[1.0, -3.0]).is_err());
        assert!(make_quadratic(3, &[1.0]).is_err());
    }

    #[test]
    fn blocks_and_start_point() {
        let mut q = Quadratic::from_blocks(vec![
            ("a".into(), vec![1.0]),
            ("b".into(), vec![100.0, 4.0]),
        ])
        .unwrap()
        .with_start(&[2.0, 1.0, -1.0])
        .unwrap();
        // 0.5*1*4 + 0.5*100*1 + 0.5*4*1
        assert_eq!(q.loss().unwrap(), 54.0);
        q.loss_and_grad().unwrap();
        assert_eq!(q.params()[1].grad().unwrap(), &[100.0, -4.0]);
    }
}
