//! Classical fourth-order Runge–Kutta on flat state vectors.

use crate::num::Real;

/// Scratch buffers for [`Rk4::step`]; reused across steps to keep the hot
/// loop allocation-free.
#[derive(Debug, Clone)]
pub struct Rk4<T> {
    k1: Vec<T>,
    k2: Vec<T>,
    k3: Vec<T>,
    k4: Vec<T>,
    tmp: Vec<T>,
}

impl<T: Real> Rk4<T> {
    pub fn new(n: usize) -> Self {
        Self {
            k1: vec![T::zero(); n],
            k2: vec![T::zero(); n],
            k3: vec![T::zero(); n],
            k4: vec![T::zero(); n],
            tmp: vec![T::zero(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.k1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k1.is_empty()
    }

    /// Advances `y` by `dt` for the autonomous system `dy/dt = f(y)`.
    /// `f(y, out)` must overwrite every entry of `out`.
    pub fn step<F>(&mut self, y: &mut [T], dt: T, mut f: F)
    where
        F: FnMut(&[T], &mut [T]),
    {
        let n = y.len();
        assert_eq!(n, self.len(), "state length changed between steps");
        let half = dt * T::lit(0.5);

        f(y, &mut self.k1);
        for i in 0..n {
            self.tmp[i] = y[i] + half * self.k1[i];
        }
        f(&self.tmp, &mut self.k2);
        for i in 0..n {
            self.tmp[i] = y[i] + half * self.k2[i];
        }
        f(&self.tmp, &mut self.k3);
        for i in 0..n {
            self.tmp[i] = y[i] + dt * self.k3[i];
        }
        f(&self.tmp, &mut self.k4);
        let sixth = dt / T::lit(6.0);
        for i in 0..n {
            y[i] = y[i]
                + sixth * (self.k1[i] + T::lit(2.0) * (self.k2[i] + self.k3[i]) + self.k4[i]);
        }
    }
}

/// Integrates the scalar ODE `dy/dt = f(t, y)` with fixed steps, returning the
/// value at every requested output time (which must be nondecreasing).
pub fn rk4_scalar<T: Real, F: Fn(T, T) -> T>(f: F, y0: T, outputs: &[T], max_dt: T) -> Vec<T> {
    let mut t = T::zero();
    let mut y = y0;
    let mut out = Vec::with_capacity(outputs.len());
    for &t_out in outputs {
        while t < t_out {
            let dt = max_dt.min(t_out - t);
            let half = dt * T::lit(0.5);
            let k1 = f(t, y);
            let k2 = f(t + half, y + half * k1);
            let k3 = f(t + half, y + half * k2);
            let k4 = f(t + dt, y + dt * k3);
            y = y + dt / T::lit(6.0) * (k1 + T::lit(2.0) * (k2 + k3) + k4);
            t = if t_out - t <= max_dt { t_out } else { t + dt };
        }
        out.push(y);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let mut y = vec![1.0f64, 2.0];
        let mut rk = Rk4::new(2);
        for _ in 0..100 {
            rk.step(&mut y, 0.01, |y, out| {
                out[0] = -y[0];
                out[1] = -2.0 * y[1];
            });
        }
        assert!((y[0] - (-1.0f64).exp()).abs() < 1e-10);
        assert!((y[1] - 2.0 * (-2.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn scalar_outputs() {
        let ys = rk4_scalar(|t: f64, _y| 2.0 * t, 0.0, &[0.0, 1.0, 3.0], 0.1);
        assert_eq!(ys[0], 0.0);
        assert!((ys[1] - 1.0).abs() < 1e-12);
        assert!((ys[2] - 9.0).abs() < 1e-12);
    }
}
