use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use super::tape::{DropoutMasks, Tape};
use super::{MlpNet, ParamVector};
use crate::{Error, Real, Result};

/// Output of a vector-Jacobian product.
#[derive(Debug, Clone)]
pub struct Vjp<T> {
    pub y: Array1<T>,
    /// `wᵀ ∂f/∂x`
    pub input_grad: Array1<T>,
    /// `∇_params (wᵀ f(x))`
    pub param_grad: ParamVector<T>,
}

/// Per-example Stein pairing `s = gᵀf(x) + εᵀ(∂f/∂x)ε`, regularizer
/// `r = λ‖f(x)‖²`, and `∇_params (s − r)`.
#[derive(Debug, Clone)]
pub struct LsdeGrad<T> {
    pub s: T,
    pub r: T,
    pub param_grad: ParamVector<T>,
}

/// Batched version of [`LsdeGrad`]; `param_grad` is the weighted sum
/// `Σ_i (s_weight_i ∇s_i − r_weight_i ∇r_i)`.
#[derive(Debug, Clone)]
pub struct LsdeBatch<T> {
    pub s: Array1<T>,
    pub r: Array1<T>,
    pub param_grad: ParamVector<T>,
}

#[derive(Debug, Clone)]
pub struct EnergyPairGrad<T> {
    pub e: T,
    pub grad_x: Array1<T>,
    /// `∇_params ⟨a, ∇_x E(x)⟩`
    pub param_grad: ParamVector<T>,
}

#[derive(Debug, Clone)]
pub struct EnergyPairBatch<T> {
    pub e: Array1<T>,
    pub grad_x: Array2<T>,
    pub param_grad: ParamVector<T>,
}

fn check_finite<T: Real>(m: &ArrayView2<T>, context: &'static str) -> Result<()> {
    for (i, row) in m.axis_iter(Axis(0)).enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric { context, index: i });
        }
    }
    Ok(())
}

fn row<T: Real>(x: ArrayView1<T>) -> ArrayView2<T> {
    x.insert_axis(Axis(0))
}

impl<T: Real> MlpNet<T> {
    /// Forward-mode product: returns `(f(x), (∂f/∂x) v)`.
    pub fn jvp(&self, x: ArrayView1<T>, v: ArrayView1<T>) -> Result<(Array1<T>, Array1<T>)> {
        let (y, jv) = self.jvp_batch(row(x), row(v))?;
        Ok((y.row(0).to_owned(), jv.row(0).to_owned()))
    }

    pub fn jvp_batch(&self, x: ArrayView2<T>, v: ArrayView2<T>) -> Result<(Array2<T>, Array2<T>)> {
        let tape = Tape::record(self, x, Some(v), None)?;
        let jv = tape.tangent_output().expect("tangent lane").clone();
        Ok((tape.output().clone(), jv))
    }

    pub fn vjp(&self, x: ArrayView1<T>, w: ArrayView1<T>) -> Result<Vjp<T>> {
        let tape = Tape::record(self, row(x), None, None)?;
        let (grad, xbar) = tape.backward(Some(row(w)), None, true)?;
        Ok(Vjp {
            y: tape.output().row(0).to_owned(),
            input_grad: xbar.row(0).to_owned(),
            param_grad: grad.expect("requested"),
        })
    }

    /// Batched VJP. The parameter gradient is summed over rows.
    pub fn vjp_batch(
        &self,
        x: ArrayView2<T>,
        w: ArrayView2<T>,
    ) -> Result<(Array2<T>, Array2<T>, ParamVector<T>)> {
        let tape = Tape::record(self, x, None, None)?;
        let (grad, xbar) = tape.backward(Some(w), None, true)?;
        Ok((tape.output().clone(), xbar, grad.expect("requested")))
    }

    fn require_square(&self, context: &'static str) -> Result<()> {
        if self.d_in() != self.d_out() {
            return Err(Error::shape(context, "square net (d_in = d_out)", format!("{} -> {}", self.d_in(), self.d_out())));
        }
        Ok(())
    }

    /// `Tr(∂f/∂x)` from `d` basis-direction JVPs.
    pub fn jacobian_trace_exact(&self, x: ArrayView1<T>) -> Result<T> {
        Ok(self.jacobian_trace_batch(row(x))?[0])
    }

    /// Exact Jacobian trace for every row, sharing one primal pass.
    pub fn jacobian_trace_batch(&self, x: ArrayView2<T>) -> Result<Array1<T>> {
        self.require_square("jacobian trace")?;
        let (n, d) = x.dim();
        let tape = Tape::record(self, x, None, None)?;
        let mut trace = Array1::zeros(n);
        let mut basis = Array2::zeros((n, d));
        for j in 0..d {
            basis.column_mut(j).fill(T::one());
            let jv = tape.push_tangent(basis.view());
            trace += &jv.column(j);
            basis.column_mut(j).fill(T::zero());
        }
        Ok(trace)
    }

    /// Outputs and exact Jacobian traces in one call.
    pub fn forward_with_trace(&self, x: ArrayView2<T>) -> Result<(Array2<T>, Array1<T>)> {
        self.require_square("jacobian trace")?;
        let (n, d) = x.dim();
        let tape = Tape::record(self, x, None, None)?;
        let mut trace = Array1::zeros(n);
        let mut basis = Array2::zeros((n, d));
        for j in 0..d {
            basis.column_mut(j).fill(T::one());
            let jv = tape.push_tangent(basis.view());
            trace += &jv.column(j);
            basis.column_mut(j).fill(T::zero());
        }
        Ok((tape.output().clone(), trace))
    }

    /// Single-example Hutchinson-form Stein pairing and its parameter gradient,
    /// computed by differentiating the combined primal + tangent pass.
    pub fn lsde_param_grad(
        &self,
        x: ArrayView1<T>,
        g: ArrayView1<T>,
        eps: ArrayView1<T>,
        lambda: T,
    ) -> Result<LsdeGrad<T>> {
        let one = Array1::from_elem(1, T::one());
        let b = self.lsde_batch(row(x), row(g), row(eps), lambda, one.view(), one.view(), None)?;
        Ok(LsdeGrad {
            s: b.s[0],
            r: b.r[0],
            param_grad: b.param_grad,
        })
    }

    /// Batched Stein pairing. `g` holds model scores per row and `eps` the
    /// probe per row. `s_weight` and `r_weight` let callers differentiate
    /// means, ratios (test power) or any other row-separable combination.
    #[allow(clippy::too_many_arguments)]
    pub fn lsde_batch(
        &self,
        x: ArrayView2<T>,
        g: ArrayView2<T>,
        eps: ArrayView2<T>,
        lambda: T,
        s_weight: ArrayView1<T>,
        r_weight: ArrayView1<T>,
        masks: Option<&DropoutMasks<T>>,
    ) -> Result<LsdeBatch<T>> {
        let n = x.nrows();
        if s_weight.len() != n || r_weight.len() != n {
            return Err(Error::shape("lsde row weights", n, s_weight.len().min(r_weight.len())));
        }
        self.lsde_batch_weighted(x, g, eps, lambda, masks, |_, _| Ok((s_weight.to_owned(), r_weight.to_owned())))
    }

    /// As [`MlpNet::lsde_batch`], but the row weights are chosen after the
    /// forward pass from the per-row `s` and `r`. One forward and one reverse
    /// sweep, so objectives such as `mean(s)/std(s)` cost the same as a mean.
    pub fn lsde_batch_weighted<F>(
        &self,
        x: ArrayView2<T>,
        g: ArrayView2<T>,
        eps: ArrayView2<T>,
        lambda: T,
        masks: Option<&DropoutMasks<T>>,
        weights: F,
    ) -> Result<LsdeBatch<T>>
    where
        F: FnOnce(&Array1<T>, &Array1<T>) -> Result<(Array1<T>, Array1<T>)>,
    {
        self.require_square("lsde")?;
        let n = x.nrows();
        if g.dim() != x.dim() || eps.dim() != x.dim() {
            return Err(Error::shape("lsde inputs", format!("{:?}", x.dim()), format!("{:?} / {:?}", g.dim(), eps.dim())));
        }
        if !(lambda >= T::zero()) {
            return Err(Error::InvalidConfig("lambda must be non-negative".into()));
        }
        check_finite(&x, "lsde input")?;
        check_finite(&g, "lsde score")?;
        check_finite(&eps, "lsde probe")?;

        let tape = Tape::record(self, x, Some(eps), masks)?;
        let y = tape.output();
        let jeps = tape.tangent_output().expect("tangent lane");
        let s = (&g * y).sum_axis(Axis(1)) + (&eps * jeps).sum_axis(Axis(1));
        let r = y.map_axis(Axis(1), |r| r.dot(&r) * lambda);
        if let Some(bad) = s.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric { context: "lsde terms", index: bad });
        }
        let (s_weight, r_weight) = weights(&s, &r)?;
        if s_weight.len() != n || r_weight.len() != n {
            return Err(Error::shape("lsde row weights", n, s_weight.len().min(r_weight.len())));
        }

        let two_lambda = T::lit(2.0) * lambda;
        let mut out_adj = g.to_owned();
        Zip::from(out_adj.rows_mut())
            .and(y.rows())
            .and(&s_weight)
            .and(&r_weight)
            .for_each(|mut a, yr, &ws, &wr| {
                Zip::from(&mut a).and(&yr).for_each(|a, &yv| *a = ws * *a - wr * two_lambda * yv);
            });
        let mut tan_adj = eps.to_owned();
        Zip::from(tan_adj.rows_mut()).and(&s_weight).for_each(|mut a, &ws| a *= ws);
        let (grad, _) = tape.backward(Some(out_adj.view()), Some(tan_adj.view()), true)?;
        let param_grad = grad.expect("requested");
        if !param_grad.is_finite() {
            return Err(Error::Numeric { context: "lsde gradient", index: 0 });
        }
        Ok(LsdeBatch { s, r, param_grad })
    }

    fn require_scalar_output(&self) -> Result<()> {
        if self.d_out() != 1 {
            return Err(Error::shape("energy net", "d_out = 1", self.d_out()));
        }
        Ok(())
    }

    /// Energy value, its input gradient, and `∇_params ⟨a, ∇_x E(x)⟩` taken as
    /// the parameter gradient of the JVP of `E` in direction `a`.
    pub fn energy_pair_grad(&self, x: ArrayView1<T>, a: ArrayView1<T>) -> Result<EnergyPairGrad<T>> {
        let one = Array1::from_elem(1, T::one());
        let b = self.energy_pair_grad_batch(row(x), row(a), one.view())?;
        Ok(EnergyPairGrad {
            e: b.e[0],
            grad_x: b.grad_x.row(0).to_owned(),
            param_grad: b.param_grad,
        })
    }

    /// Batched energy pairing; the parameter gradient is
    /// `Σ_i weight_i ∇_params ⟨a_i, ∇_x E(x_i)⟩`.
    pub fn energy_pair_grad_batch(
        &self,
        x: ArrayView2<T>,
        a: ArrayView2<T>,
        weight: ArrayView1<T>,
    ) -> Result<EnergyPairBatch<T>> {
        self.require_scalar_output()?;
        let n = x.nrows();
        if weight.len() != n {
            return Err(Error::shape("energy pair weights", n, weight.len()));
        }
        let tape = Tape::record(self, x, Some(a), None)?;
        let e = tape.output().column(0).to_owned();
        let ones = Array2::from_elem((n, 1), T::one());
        let (_, grad_x) = tape.backward(Some(ones.view()), None, false)?;
        let zeros = Array2::zeros((n, 1));
        let w = weight.to_owned().insert_axis(Axis(1));
        let (grad, _) = tape.backward(Some(zeros.view()), Some(w.view()), true)?;
        Ok(EnergyPairBatch {
            e,
            grad_x,
            param_grad: grad.expect("requested"),
        })
    }

    /// Energy values and input gradients `∇_x E` per row.
    pub fn energy_grad_batch(&self, x: ArrayView2<T>) -> Result<(Array1<T>, Array2<T>)> {
        self.require_scalar_output()?;
        let tape = Tape::record(self, x, None, None)?;
        let ones = Array2::from_elem((x.nrows(), 1), T::one());
        let (_, grad_x) = tape.backward(Some(ones.view()), None, false)?;
        Ok((tape.output().column(0).to_owned(), grad_x))
    }

    /// Hessian-vector products `∇²_x E(x_i) v_i` (forward-over-reverse), with the gradients.
    pub fn energy_hvp_batch(&self, x: ArrayView2<T>, v: ArrayView2<T>) -> Result<(Array2<T>, Array2<T>)> {
        self.require_scalar_output()?;
        let n = x.nrows();
        let tape = Tape::record(self, x, Some(v), None)?;
        let ones = Array2::from_elem((n, 1), T::one());
        let (_, grad_x) = tape.backward(Some(ones.view()), None, false)?;
        let zeros = Array2::zeros((n, 1));
        let (_, hvp) = tape.backward(Some(zeros.view()), Some(ones.view()), false)?;
        Ok((grad_x, hvp))
    }
}
