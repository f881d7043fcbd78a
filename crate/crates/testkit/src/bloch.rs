//! Brute-force Bloch-equation integration in the rotating frame.
//!
//! `dv/dt = omega x v` with `omega = 2*pi*(f_rabi*sin(phase),
//! f_rabi*cos(phase), detuning)`: the same effective field the closed-form
//! engine rotates about, but integrated with fixed-step RK4 so any error in
//! the closed form shows up as disagreement.

/// Effective drive in the rotating frame.
#[derive(Debug, Clone, Copy)]
pub struct Drive {
    /// On-resonance Rabi frequency (Hz).
    pub f_rabi: f64,
    /// Drive phase (rad); 0 is the y axis.
    pub phase: f64,
    /// Detuning of this spin from the drive (Hz).
    pub detuning: f64,
}

impl Drive {
    fn omega(&self) -> [f64; 3] {
        let w = std::f64::consts::TAU;
        [
            w * self.f_rabi * self.phase.sin(),
            w * self.f_rabi * self.phase.cos(),
            w * self.detuning,
        ]
    }
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Integrate `dv/dt = omega x v` for `duration` seconds with `n_steps` RK4
/// steps.
pub fn integrate(v0: [f64; 3], drive: Drive, duration: f64, n_steps: usize) -> [f64; 3] {
    let omega = drive.omega();
    let h = duration / n_steps as f64;
    let f = |v: [f64; 3]| cross(omega, v);
    let mut v = v0;
    for _ in 0..n_steps {
        let k1 = f(v);
        let k2 = f(add(v, scale(k1, h / 2.0)));
        let k3 = f(add(v, scale(k2, h / 2.0)));
        let k4 = f(add(v, scale(k3, h)));
        for i in 0..3 {
            v[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    v
}

/// Free precession: a drive with zero Rabi frequency.
pub fn free_precess(v0: [f64; 3], detuning: f64, duration: f64, n_steps: usize) -> [f64; 3] {
    integrate(
        v0,
        Drive {
            f_rabi: 0.0,
            phase: 0.0,
            detuning,
        },
        duration,
        n_steps,
    )
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resonant_pi_pulse_inverts() {
        let drive = Drive {
            f_rabi: 2.5e6,
            phase: 0.0,
            detuning: 0.0,
        };
        let v = integrate([0.0, 0.0, 1.0], drive, 1.0 / (2.0 * 2.5e6), 4000);
        assert!((v[2] + 1.0).abs() < 1e-9, "z = {}", v[2]);
    }

    #[test]
    fn norm_is_preserved() {
        let drive = Drive {
            f_rabi: 1.7e6,
            phase: 0.3,
            detuning: 0.9e6,
        };
        let v = integrate([0.6, 0.0, 0.8], drive, 3.3e-6, 20000);
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
    }
}
