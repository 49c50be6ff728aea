//! Batched primal + tangent forward pass and the matching reverse sweep.
//!
//! Rows of the input matrix are independent examples. The forward pass can
//! carry one tangent direction per row (forward mode); the reverse sweep then
//! differentiates any scalar of the form
//!
//! ```text
//! Σ_i  ȳ_iᵀ y_i  +  ẏ̄_iᵀ ẏ_i
//! ```
//!
//! with respect to parameters and inputs. Differentiating through the tangent
//! lane is what makes the Jacobian-trace and Stein-pairing gradients exact.

use ndarray::{Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use super::{MlpNet, ParamVector};
use crate::{Error, Real, Result};

/// Inverted-dropout masks for the hidden layers of one batch. Entries are
/// `0` or `1 / (1 - rate)`; evaluation passes simply omit the masks.
#[derive(Debug, Clone)]
pub struct DropoutMasks<T> {
    masks: Vec<Array2<T>>,
}

impl<T: Real> DropoutMasks<T> {
    pub fn sample<R: Rng + ?Sized>(net: &MlpNet<T>, rows: usize, rate: f64, rng: &mut R) -> Self {
        let keep = T::lit(1.0 / (1.0 - rate));
        let masks = net.dims()[1..net.dims().len() - 1]
            .iter()
            .map(|&h| {
                Array2::from_shape_simple_fn((rows, h), || {
                    if rng.random::<f64>() < rate {
                        T::zero()
                    } else {
                        keep
                    }
                })
            })
            .collect();
        DropoutMasks { masks }
    }

    pub fn layers(&self) -> &[Array2<T>] {
        &self.masks
    }
}

pub(crate) struct Tape<'a, T> {
    net: &'a MlpNet<T>,
    masks: Option<&'a DropoutMasks<T>>,
    /// Input of each layer; `inputs[0]` is the batch itself.
    inputs: Vec<Array2<T>>,
    /// Pre-activation of each layer; the last one is the network output.
    pre: Vec<Array2<T>>,
    tangent_inputs: Option<Vec<Array2<T>>>,
    tangent_pre: Option<Vec<Array2<T>>>,
}

impl<'a, T: Real> Tape<'a, T> {
    pub(crate) fn record(
        net: &'a MlpNet<T>,
        x: ArrayView2<T>,
        tangent: Option<ArrayView2<T>>,
        masks: Option<&'a DropoutMasks<T>>,
    ) -> Result<Self> {
        net.check_batch(&x, "mlp tape")?;
        if let Some(v) = &tangent {
            if v.dim() != x.dim() {
                return Err(Error::shape("tangent batch", format!("{:?}", x.dim()), format!("{:?}", v.dim())));
            }
        }
        if let Some(m) = masks {
            let hidden = &net.dims()[1..net.dims().len() - 1];
            let ok = m.masks.len() == hidden.len()
                && m.masks.iter().zip(hidden).all(|(m, &h)| m.dim() == (x.nrows(), h));
            if !ok {
                return Err(Error::shape("dropout masks", "one (rows, width) mask per hidden layer", "mismatch"));
            }
        }
        let act = net.activation();
        let last = net.num_layers() - 1;
        let mut inputs = Vec::with_capacity(net.num_layers());
        let mut pre = Vec::with_capacity(net.num_layers());
        let mut t_inputs = tangent.as_ref().map(|_| Vec::with_capacity(net.num_layers()));
        let mut t_pre = tangent.as_ref().map(|_| Vec::with_capacity(net.num_layers()));

        let mut h = x.to_owned();
        let mut dh = tangent.map(|v| v.to_owned());
        for (k, (w, b)) in net.weights.iter().zip(&net.biases).enumerate() {
            let mut z = h.dot(&w.t());
            z += b;
            let dz = dh.as_ref().map(|d| d.dot(&w.t()));
            inputs.push(h);
            if let (Some(ti), Some(d)) = (t_inputs.as_mut(), dh.take()) {
                ti.push(d);
            }
            if k < last {
                let mut a = z.mapv(|v| act.value(v));
                let mut da = dz.as_ref().map(|dz| {
                    let mut da = dz.clone();
                    Zip::from(&mut da).and(&z).for_each(|d, &zv| *d *= act.d1(zv));
                    da
                });
                if let Some(m) = masks {
                    a *= &m.masks[k];
                    if let Some(da) = da.as_mut() {
                        *da *= &m.masks[k];
                    }
                }
                h = a;
                dh = da;
            } else {
                h = Array2::zeros((0, 0));
            }
            pre.push(z);
            if let (Some(tp), Some(dz)) = (t_pre.as_mut(), dz) {
                tp.push(dz);
            }
        }
        Ok(Tape {
            net,
            masks,
            inputs,
            pre,
            tangent_inputs: t_inputs,
            tangent_pre: t_pre,
        })
    }

    pub(crate) fn output(&self) -> &Array2<T> {
        self.pre.last().expect("at least one layer")
    }

    pub(crate) fn tangent_output(&self) -> Option<&Array2<T>> {
        self.tangent_pre.as_ref().and_then(|t| t.last())
    }

    /// Re-runs only the tangent lane for a new direction, reusing the primal
    /// activations. Returns `J v` per row.
    pub(crate) fn push_tangent(&self, v: ArrayView2<T>) -> Array2<T> {
        let act = self.net.activation();
        let last = self.net.num_layers() - 1;
        let mut dh = v.to_owned();
        for (k, w) in self.net.weights.iter().enumerate() {
            let mut dz = dh.dot(&w.t());
            if k == last {
                return dz;
            }
            Zip::from(&mut dz).and(&self.pre[k]).for_each(|d, &zv| *d *= act.d1(zv));
            if let Some(m) = self.masks {
                dz *= &m.masks[k];
            }
            dh = dz;
        }
        unreachable!("loop returns at the output layer")
    }

    /// Reverse sweep. `out_adj` is ȳ (adjoint of the primal output), and
    /// `tangent_adj` is ẏ̄ (adjoint of the tangent output; requires a tangent
    /// lane). Returns the parameter gradient (summed over rows) and the input
    /// adjoint per row.
    pub(crate) fn backward(
        &self,
        out_adj: Option<ArrayView2<T>>,
        tangent_adj: Option<ArrayView2<T>>,
        want_params: bool,
    ) -> Result<(Option<ParamVector<T>>, Array2<T>)> {
        let net = self.net;
        let n = self.inputs[0].nrows();
        let d_out = net.d_out();
        let check = |a: &ArrayView2<T>| -> Result<()> {
            if a.dim() != (n, d_out) {
                return Err(Error::shape("output adjoint", format!("({n}, {d_out})"), format!("{:?}", a.dim())));
            }
            Ok(())
        };
        if let Some(a) = &out_adj {
            check(a)?;
        }
        if let Some(a) = &tangent_adj {
            check(a)?;
            if self.tangent_pre.is_none() {
                return Err(Error::Unsupported("tangent adjoint without a tangent lane".into()));
            }
        }
        let act = net.activation();
        let offsets = net.layer_offsets();
        let mut grad = want_params.then(|| ParamVector::zeros(net.num_params()));

        let mut zbar = out_adj.map(|a| a.to_owned()).unwrap_or_else(|| Array2::zeros((n, d_out)));
        let mut zdbar = tangent_adj.map(|a| a.to_owned());

        for k in (0..net.num_layers()).rev() {
            let w = &net.weights[k];
            if let Some(g) = grad.as_mut() {
                let (wo, bo) = offsets[k];
                let (r, c) = w.dim();
                let mut gw = zbar.t().dot(&self.inputs[k]);
                if let (Some(zd), Some(ti)) = (&zdbar, &self.tangent_inputs) {
                    gw += &zd.t().dot(&ti[k]);
                }
                let flat = g.0.as_slice_mut().expect("contiguous");
                for (dst, src) in flat[wo..wo + r * c].iter_mut().zip(gw.iter()) {
                    *dst += *src;
                }
                for (dst, src) in flat[bo..bo + r].iter_mut().zip(zbar.sum_axis(Axis(0)).iter()) {
                    *dst += *src;
                }
            }
            let abar = zbar.dot(w);
            let adbar = zdbar.as_ref().map(|zd| zd.dot(w));
            if k == 0 {
                return Ok((grad, abar));
            }
            // through a = m ⊙ v(z), ȧ = m ⊙ v'(z) ż of layer k-1
            let z = &self.pre[k - 1];
            let mut new_zbar = abar;
            Zip::from(&mut new_zbar).and(z).for_each(|b, &zv| *b *= act.d1(zv));
            let new_zdbar = match (adbar, &self.tangent_pre) {
                (Some(adbar), Some(tp)) => {
                    let dz = &tp[k - 1];
                    Zip::from(&mut new_zbar)
                        .and(&adbar)
                        .and(z)
                        .and(dz)
                        .for_each(|b, &ad, &zv, &dzv| *b += act.d2(zv) * dzv * ad);
                    let mut zd = adbar;
                    Zip::from(&mut zd).and(z).for_each(|b, &zv| *b *= act.d1(zv));
                    Some(zd)
                }
                _ => None,
            };
            if let Some(m) = self.masks {
                new_zbar *= &m.masks[k - 1];
            }
            zbar = new_zbar;
            zdbar = new_zdbar.map(|mut zd| {
                if let Some(m) = self.masks {
                    zd *= &m.masks[k - 1];
                }
                zd
            });
        }
        unreachable!("loop returns at the input layer")
    }
}
