use std::fmt;
use std::ops::{Add, Index, IndexMut, Neg, Sub};

use nalgebra::Matrix3;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// 3×3 complex phase-frame matrix (line impedance, LBFM voltage products).
pub type Mat3 = Matrix3<Complex64>;

/// `e^{-j2π/3}`.
pub fn chi() -> Complex64 {
    Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI / 3.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Phase {
        Phase::ALL[i % 3]
    }

    pub fn label(self) -> char {
        ['a', 'b', 'c'][self.index()]
    }

    pub fn parse(s: &str) -> Option<Phase> {
        match s.trim().to_ascii_lowercase().as_str() {
            "a" | "1" => Some(Phase::A),
            "b" | "2" => Some(Phase::B),
            "c" | "3" => Some(Phase::C),
            _ => None,
        }
    }

    /// Cyclic relabel a→b, b→c, c→a.
    pub fn rotate(self) -> Phase {
        Phase::from_index(self.index() + 1)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

/// One complex value per phase, ordered a, b, c.
///
/// For voltages the real and imaginary parts are the rectangular
/// coordinates X and Y; for currents they are J and W.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Phasor3(pub [Complex64; 3]);

impl Phasor3 {
    pub const ZERO: Phasor3 = Phasor3([Complex64::new(0.0, 0.0); 3]);

    pub fn new(a: Complex64, b: Complex64, c: Complex64) -> Self {
        Phasor3([a, b, c])
    }

    /// Balanced positive-sequence set with magnitude `mag` and phase-a angle `angle`.
    pub fn balanced(mag: f64, angle: f64) -> Self {
        let step = 2.0 * std::f64::consts::PI / 3.0;
        Phasor3([
            Complex64::from_polar(mag, angle),
            Complex64::from_polar(mag, angle - step),
            Complex64::from_polar(mag, angle + step),
        ])
    }

    pub fn on_phase(phase: Phase, value: Complex64) -> Self {
        let mut p = Phasor3::ZERO;
        p[phase] = value;
        p
    }

    /// Real parts (X for a voltage, J for a current).
    pub fn re(&self) -> [f64; 3] {
        self.0.map(|c| c.re)
    }

    /// Imaginary parts (Y for a voltage, W for a current).
    pub fn im(&self) -> [f64; 3] {
        self.0.map(|c| c.im)
    }

    pub fn x(&self) -> [f64; 3] {
        self.re()
    }

    pub fn y(&self) -> [f64; 3] {
        self.im()
    }

    pub fn j(&self) -> [f64; 3] {
        self.re()
    }

    pub fn w(&self) -> [f64; 3] {
        self.im()
    }

    pub fn magnitudes(&self) -> [f64; 3] {
        self.0.map(|c| c.norm())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Phasor3) -> f64 {
        (0..3).map(|i| (self.0[i] - other.0[i]).norm()).fold(0.0, f64::max)
    }

    pub fn mul_mat(m: &Mat3, v: &Phasor3) -> Phasor3 {
        let mut out = Phasor3::ZERO;
        for r in 0..3 {
            out.0[r] = m[(r, 0)] * v.0[0] + m[(r, 1)] * v.0[1] + m[(r, 2)] * v.0[2];
        }
        out
    }

    /// Cyclic relabel: the value carried by phase a moves to phase b, etc.
    pub fn rotate(&self) -> Phasor3 {
        Phasor3([self.0[2], self.0[0], self.0[1]])
    }
}

/// Applies the cyclic relabel of [`Phase::rotate`] to rows and columns.
pub fn rotate_mat(m: &Mat3) -> Mat3 {
    let mut out = Mat3::zeros();
    for r in 0..3 {
        for c in 0..3 {
            out[((r + 1) % 3, (c + 1) % 3)] = m[(r, c)];
        }
    }
    out
}

impl Index<Phase> for Phasor3 {
    type Output = Complex64;
    fn index(&self, p: Phase) -> &Complex64 {
        &self.0[p.index()]
    }
}

impl IndexMut<Phase> for Phasor3 {
    fn index_mut(&mut self, p: Phase) -> &mut Complex64 {
        &mut self.0[p.index()]
    }
}

impl Add for Phasor3 {
    type Output = Phasor3;
    fn add(self, rhs: Phasor3) -> Phasor3 {
        Phasor3([self.0[0] + rhs.0[0], self.0[1] + rhs.0[1], self.0[2] + rhs.0[2]])
    }
}

impl Sub for Phasor3 {
    type Output = Phasor3;
    fn sub(self, rhs: Phasor3) -> Phasor3 {
        Phasor3([self.0[0] - rhs.0[0], self.0[1] - rhs.0[1], self.0[2] - rhs.0[2]])
    }
}

impl Neg for Phasor3 {
    type Output = Phasor3;
    fn neg(self) -> Phasor3 {
        Phasor3(self.0.map(|c| -c))
    }
}
