//! Iterative leaky integrate-and-fire neuron with hard reset.
//!
//! ```text
//! u_t = tau * u_{t-1} * (1 - o_{t-1}) + x_t
//! o_t = H(u_t - v_th)          H(x) = 1 iff x > 0
//! do_t/du_t ~= (1/a) * 1[|u_t - v_th| < a/2]
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the spike nonlinearity is evaluated on the forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpikeFn {
    /// Binary Heaviside step; the backward pass uses the rectangular
    /// pseudo-derivative.
    #[default]
    Heaviside,
    /// Piecewise-linear ramp `clamp((u - v_th)/a + 1/2, 0, 1)`, whose exact
    /// derivative is the rectangular pseudo-derivative. Only used to make the
    /// surrogate model smooth enough for finite-difference gradient checks.
    SmoothRamp,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LifParams {
    pub tau_decay: f32,
    pub v_th: f32,
    /// Width of the pseudo-derivative window.
    pub a: f32,
    pub spike: SpikeFn,
}

impl Default for LifParams {
    fn default() -> Self {
        Self {
            tau_decay: 0.25,
            v_th: 1.0,
            a: 1.0,
            spike: SpikeFn::Heaviside,
        }
    }
}

impl LifParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau_decay) {
            return Err(Error::Config(format!("tau_decay must lie in [0, 1], got {}", self.tau_decay)));
        }
        if !(self.v_th > 0.0) || !(self.a > 0.0) {
            return Err(Error::Config(format!("v_th and a must be > 0, got v_th={} a={}", self.v_th, self.a)));
        }
        Ok(())
    }

    #[inline]
    pub fn fire(&self, u: f32) -> f32 {
        match self.spike {
            SpikeFn::Heaviside => heaviside(u - self.v_th),
            SpikeFn::SmoothRamp => ((u - self.v_th) / self.a + 0.5).clamp(0.0, 1.0),
        }
    }

    #[inline]
    pub fn pseudo_grad(&self, u: f32) -> f32 {
        if (u - self.v_th).abs() < self.a / 2.0 {
            1.0 / self.a
        } else {
            0.0
        }
    }
}

#[inline]
pub fn heaviside(x: f32) -> f32 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Elementwise rectangular pseudo-derivative of the spike function.
pub fn pseudo_grad(u: &[f32], params: &LifParams) -> Vec<f32> {
    u.iter().map(|&v| params.pseudo_grad(v)).collect()
}

/// Membrane potentials and previous outputs of a population of neurons.
#[derive(Clone, Debug, PartialEq)]
pub struct LifState {
    pub u: Vec<f32>,
    pub o_prev: Vec<f32>,
}

impl LifState {
    pub fn zeros(n: usize) -> Self {
        Self {
            u: vec![0.0; n],
            o_prev: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }
}

/// Membrane update for one neuron.
#[inline]
pub fn membrane(u_prev: f32, o_prev: f32, x: f32, tau: f32) -> f32 {
    tau * u_prev * (1.0 - o_prev) + x
}

/// Advance one timestep. Returns the output spikes and leaves the new
/// potentials and outputs in `state`.
pub fn lif_step(state: &mut LifState, x_t: &[f32], params: &LifParams) -> Result<Vec<f32>> {
    if x_t.len() != state.len() {
        return Err(Error::shape("lif_step input", &[state.len()], &[x_t.len()]));
    }
    if let Some(bad) = x_t.iter().position(|v| !v.is_finite()) {
        return Err(Error::Argument(format!("non-finite input current at index {bad}")));
    }
    let mut out = Vec::with_capacity(x_t.len());
    for i in 0..x_t.len() {
        let u = membrane(state.u[i], state.o_prev[i], x_t[i], params.tau_decay);
        let o = params.fire(u);
        state.u[i] = u;
        state.o_prev[i] = o;
        out.push(o);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(tau: f32, v_th: f32, a: f32) -> LifParams {
        LifParams {
            tau_decay: tau,
            v_th,
            a,
            spike: SpikeFn::Heaviside,
        }
    }

    #[test]
    fn resting_neuron_stays_at_rest() {
        let mut s = LifState::zeros(1);
        let o = lif_step(&mut s, &[0.0], &p(0.5, 1.0, 1.0)).unwrap();
        assert_eq!(o, vec![0.0]);
        assert_eq!(s.u, vec![0.0]);
    }

    #[test]
    fn fires_then_hard_resets() {
        let params = p(0.5, 1.0, 1.0);
        let mut s = LifState {
            u: vec![0.8],
            o_prev: vec![0.0],
        };
        let o = lif_step(&mut s, &[0.7], &params).unwrap();
        assert!((s.u[0] - 1.1).abs() < 1e-6);
        assert_eq!(o, vec![1.0]);
        let o = lif_step(&mut s, &[0.0], &params).unwrap();
        assert_eq!(s.u, vec![0.0]);
        assert_eq!(o, vec![0.0]);
    }

    #[test]
    fn threshold_is_strict() {
        let mut s = LifState::zeros(1);
        let o = lif_step(&mut s, &[1.0], &p(0.5, 1.0, 1.0)).unwrap();
        assert_eq!(s.u[0], 1.0);
        assert_eq!(o, vec![0.0]);
    }

    #[test]
    fn rejects_bad_input() {
        let mut s = LifState::zeros(2);
        assert!(lif_step(&mut s, &[0.0], &LifParams::default()).is_err());
        assert!(lif_step(&mut s, &[0.0, f32::NAN], &LifParams::default()).is_err());
        assert!(lif_step(&mut s, &[f32::INFINITY, 0.0], &LifParams::default()).is_err());
    }

    #[test]
    fn pseudo_derivative_window() {
        let params = p(0.5, 1.0, 1.0);
        assert_eq!(params.pseudo_grad(1.49), 1.0);
        assert_eq!(params.pseudo_grad(1.51), 0.0);
        assert_eq!(params.pseudo_grad(1.0), 1.0);
        let wide = p(0.5, 1.0, 2.0);
        assert_eq!(wide.pseudo_grad(1.9), 0.5);
        assert_eq!(wide.pseudo_grad(1.0), 0.5);
        assert_eq!(pseudo_grad(&[0.4, 1.0, 1.6], &params), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn params_validation() {
        assert!(p(1.1, 1.0, 1.0).validate().is_err());
        assert!(p(0.5, 0.0, 1.0).validate().is_err());
        assert!(p(0.5, 1.0, 0.0).validate().is_err());
        assert!(LifParams::default().validate().is_ok());
    }

    #[test]
    fn smooth_ramp_derivative_is_the_pseudo_derivative() {
        let params = LifParams {
            spike: SpikeFn::SmoothRamp,
            ..p(0.5, 1.0, 1.0)
        };
        for &u in &[0.2f32, 0.7, 1.0, 1.3, 1.8] {
            let h = 1e-3;
            let fd = (params.fire(u + h) - params.fire(u - h)) / (2.0 * h);
            assert!((fd - params.pseudo_grad(u)).abs() < 1e-2, "u={u}");
        }
    }

    proptest! {
        // 200 random cases against direct evaluation of the update equations
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn step_matches_direct_evaluation(
            tau in 0.0f32..=1.0,
            v_th in 0.1f32..3.0,
            u0 in -3.0f32..3.0,
            o0 in prop::bool::ANY,
            x in -3.0f32..3.0,
        ) {
            let params = p(tau, v_th, 1.0);
            let o0 = if o0 { 1.0 } else { 0.0 };
            let mut s = LifState { u: vec![u0], o_prev: vec![o0] };
            let o = lif_step(&mut s, &[x], &params).unwrap();
            let u_ref = (tau as f64) * (u0 as f64) * (1.0 - o0 as f64) + x as f64;
            prop_assert!((s.u[0] as f64 - u_ref).abs() <= 1e-6 * (1.0 + u_ref.abs()));
            prop_assert_eq!(o[0], if s.u[0] > v_th { 1.0 } else { 0.0 });
            // hard reset: after a spike the potential equals the input exactly
            if o0 == 1.0 {
                prop_assert_eq!(s.u[0], x);
            }
        }

        #[test]
        fn pseudo_grad_matches_definition(u in -3.0f32..5.0, v_th in 0.1f32..3.0, a in 0.05f32..4.0) {
            let params = p(0.5, v_th, a);
            let expected = if ((u - v_th) as f64).abs() < (a / 2.0) as f64 { 1.0 / a } else { 0.0 };
            prop_assert_eq!(params.pseudo_grad(u), expected);
        }

        #[test]
        fn outputs_are_binary(xs in proptest::collection::vec(-4.0f32..4.0, 1..40)) {
            let mut s = LifState::zeros(1);
            for x in xs {
                let o = lif_step(&mut s, &[x], &LifParams::default()).unwrap();
                prop_assert!(o[0] == 0.0 || o[0] == 1.0);
            }
        }
    }
}
