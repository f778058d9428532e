//! Rectified-flow forward process, velocity target and loss, and an Euler sampler.

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Straight-line interpolation `z_t = (1 - t) x0 + t eps`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DiffusionSchedule;

impl DiffusionSchedule {
    pub fn alpha(&self, t: f64) -> f64 {
        1.0 - t
    }

    pub fn sigma(&self, t: f64) -> f64 {
        t
    }
}

#[derive(Debug, Clone)]
pub struct DiffusionSample<T: Element = f32> {
    pub x0: Tensor<T>,
    pub eps: Tensor<T>,
    pub t: f64,
    pub zt: Tensor<T>,
}

fn check_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("diffusion time {t} outside [0, 1]")));
    }
    Ok(())
}

pub fn forward_diffuse<T: Element>(
    x0: &Tensor<T>,
    eps: &Tensor<T>,
    t: f64,
    sched: &DiffusionSchedule,
) -> Result<DiffusionSample<T>> {
    x0.ensure_same_shape(eps)?;
    check_time(t)?;
    let (a, s) = (T::lit(sched.alpha(t)), T::lit(sched.sigma(t)));
    // Exact endpoints: no rounding from a zero coefficient times a value.
    let zt = if t == 0.0 {
        x0.clone()
    } else if t == 1.0 {
        eps.clone()
    } else {
        x0.zip_map(eps, |x, e| a * x + s * e)?
    };
    Ok(DiffusionSample {
        x0: x0.clone(),
        eps: eps.clone(),
        t,
        zt,
    })
}

/// `eps - x0`, the constant velocity of the straight path.
pub fn velocity_target<T: Element>(x0: &Tensor<T>, eps: &Tensor<T>) -> Result<Tensor<T>> {
    eps.sub(x0)
}

/// Mean squared error between the predicted velocity and `eps - x0`.
pub fn rec_loss<T: Element>(v_pred: &Tensor<T>, x0: &Tensor<T>, eps: &Tensor<T>) -> Result<T> {
    v_pred.ensure_same_shape(x0)?;
    let target = velocity_target(x0, eps)?;
    let residual = v_pred.sub(&target)?;
    Ok(residual.sum_squares() / T::lit(residual.len().max(1) as f64))
}

pub fn rec_loss_node<T: Element>(g: &mut Graph<T>, residual: NodeId) -> NodeId {
    let sq = g.square(residual);
    g.mean(sq)
}

/// Anything that predicts a velocity for a noisy latent at time `t`.
pub trait VelocityModel<T: Element> {
    fn velocity(&self, zt: &Tensor<T>, cond: &Tensor<T>, t: f64) -> Result<Tensor<T>>;
}

impl<T: Element, F> VelocityModel<T> for F
where
    F: Fn(&Tensor<T>, &Tensor<T>, f64) -> Result<Tensor<T>>,
{
    fn velocity(&self, zt: &Tensor<T>, cond: &Tensor<T>, t: f64) -> Result<Tensor<T>> {
        self(zt, cond, t)
    }
}

/// Integrates `dz/dt = v` from `t = 1` down to `t = 0` in `steps` uniform Euler steps.
pub fn euler_sample<T: Element, M: VelocityModel<T> + ?Sized>(
    model: &M,
    z1: &Tensor<T>,
    cond: &Tensor<T>,
    steps: usize,
) -> Result<Tensor<T>> {
    if steps == 0 {
        return Err(Error::invalid("euler_sample needs at least one step"));
    }
    let dt = T::lit(1.0 / steps as f64);
    let mut z = z1.clone();
    for k in 0..steps {
        let t = 1.0 - k as f64 / steps as f64;
        let v = model.velocity(&z, cond, t)?;
        z.ensure_same_shape(&v)?;
        if !v.all_finite() {
            return Err(Error::NonFinite(format!("velocity at Euler step {k}")));
        }
        for (zi, vi) in z.data_mut().iter_mut().zip(v.data()) {
            *zi = *zi - dt * *vi;
        }
    }
    Ok(z)
}
