//! 15-state extended Kalman filter over a constant-acceleration rigid body.
//!
//! State order: position `X, Y, Z` (world ENU), Euler angles `roll, pitch, yaw`,
//! body linear velocity, body angular rate, body linear acceleration.
//!
//! Process noise is given as variance rates: prediction over `dt` adds
//! `diag(Q) * dt`, so the same tuning works at any event rate.

use nalgebra::{DMatrix, DVector, Matrix3, Point3, SMatrix, SVector, Vector3};
use thiserror::Error;

use crate::geometry::{euler_rate_matrix, rotation_partials, EulerAngles, GeometryError};
use crate::scalar::{wrap_angle, Real};

pub const STATE_DIM: usize = 15;

pub const POS: usize = 0;
pub const ANG: usize = 3;
pub const VEL: usize = 6;
pub const RATE: usize = 9;
pub const ACC: usize = 12;

/// Condition number above which the innovation covariance is treated as singular.
pub const MAX_INNOVATION_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EkfError {
    #[error("pitch {pitch} rad is too close to +-pi/2")]
    PitchSingularity { pitch: f64 },
    #[error("innovation covariance is numerically singular (condition {condition:e})")]
    SingularInnovation { condition: f64 },
    #[error("time went backwards: {t} after {last}")]
    NonMonotonicTime { last: f64, t: f64 },
    #[error("time step must be positive and finite, got {0}")]
    InvalidTimeStep(f64),
    #[error("invalid measurement: {0}")]
    InvalidMeasurement(String),
}

impl From<GeometryError> for EkfError {
    fn from(e: GeometryError) -> Self {
        match e {
            GeometryError::PitchSingularity { pitch } => EkfError::PitchSingularity { pitch },
            other => EkfError::InvalidMeasurement(other.to_string()),
        }
    }
}

pub type StateVector<T> = SVector<T, STATE_DIM>;
pub type StateMatrix<T> = SMatrix<T, STATE_DIM, STATE_DIM>;

/// Full filter state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose15<T: Real>(StateVector<T>);

impl<T: Real> Pose15<T> {
    pub fn zero() -> Self {
        Self(StateVector::zeros())
    }

    /// Takes a raw vector and wraps the angle components.
    pub fn from_vector(v: StateVector<T>) -> Self {
        let mut p = Self(v);
        p.wrap_angles();
        p
    }

    pub fn from_slice(values: &[T]) -> Option<Self> {
        (values.len() == STATE_DIM).then(|| Self::from_vector(StateVector::from_column_slice(values)))
    }

    pub fn vector(&self) -> &StateVector<T> {
        &self.0
    }

    pub fn as_slice(&self) -> &[T] {
        self.0.as_slice()
    }

    fn block(&self, start: usize) -> Vector3<T> {
        self.0.fixed_rows::<3>(start).into_owned()
    }

    fn set_block(&mut self, start: usize, v: &Vector3<T>) {
        self.0.fixed_rows_mut::<3>(start).copy_from(v);
    }

    pub fn position(&self) -> Point3<T> {
        Point3::from(self.block(POS))
    }

    pub fn set_position(&mut self, p: &Point3<T>) {
        self.set_block(POS, &p.coords);
    }

    pub fn orientation(&self) -> EulerAngles<T> {
        EulerAngles::new(self.0[ANG], self.0[ANG + 1], self.0[ANG + 2])
    }

    pub fn set_orientation(&mut self, a: &EulerAngles<T>) {
        self.set_block(ANG, &Vector3::new(a.roll, a.pitch, a.yaw));
        self.wrap_angles();
    }

    pub fn velocity(&self) -> Vector3<T> {
        self.block(VEL)
    }

    pub fn set_velocity(&mut self, v: &Vector3<T>) {
        self.set_block(VEL, v);
    }

    pub fn angular_rate(&self) -> Vector3<T> {
        self.block(RATE)
    }

    pub fn set_angular_rate(&mut self, w: &Vector3<T>) {
        self.set_block(RATE, w);
    }

    pub fn acceleration(&self) -> Vector3<T> {
        self.block(ACC)
    }

    pub fn set_acceleration(&mut self, a: &Vector3<T>) {
        self.set_block(ACC, a);
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    fn wrap_angles(&mut self) {
        for i in ANG..ANG + 3 {
            self.0[i] = wrap_angle(self.0[i]);
        }
    }
}

impl<T: Real> Default for Pose15<T> {
    fn default() -> Self {
        Self::zero()
    }
}

/// Symmetric positive semidefinite state covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Covariance15<T: Real>(StateMatrix<T>);

impl<T: Real> Covariance15<T> {
    /// Symmetrises the input.
    pub fn new(m: StateMatrix<T>) -> Self {
        Self(symmetrize(&m))
    }

    pub fn from_diagonal(d: &[T; STATE_DIM]) -> Self {
        Self(StateMatrix::from_diagonal(&StateVector::from_column_slice(d)))
    }

    pub fn zeros() -> Self {
        Self(StateMatrix::zeros())
    }

    /// 1e-2 on measured states (position, orientation, rates), 1.0 on velocities
    /// and accelerations.
    pub fn initial() -> Self {
        let mut d = [T::lit(1e-2); STATE_DIM];
        for i in (VEL..VEL + 3).chain(ACC..ACC + 3) {
            d[i] = T::one();
        }
        Self::from_diagonal(&d)
    }

    pub fn matrix(&self) -> &StateMatrix<T> {
        &self.0
    }

    pub fn diagonal(&self) -> StateVector<T> {
        self.0.diagonal()
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.0[(i, j)]
    }

    /// Largest `|P - P^T|` entry.
    pub fn asymmetry(&self) -> T {
        (self.0 - self.0.transpose()).amax()
    }

    pub fn min_eigenvalue(&self) -> T {
        self.0.symmetric_eigenvalues().min()
    }
}

fn symmetrize<T: Real, const N: usize>(m: &SMatrix<T, N, N>) -> SMatrix<T, N, N> {
    (m + m.transpose()) * T::lit(0.5)
}

/// Diagonal process noise variance rates, state order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcessNoise<T: Real>(pub [T; STATE_DIM]);

impl<T: Real> ProcessNoise<T> {
    /// Experimentally tuned variances for the pool ROV.
    pub const TUNED: [f64; STATE_DIM] = [
        0.1, 0.1, 0.06, 0.03, 0.03, 0.06, 0.025, 0.025, 0.04, 0.01, 0.01, 0.02, 0.01, 0.01, 0.015,
    ];

    pub fn new(variances: [T; STATE_DIM]) -> Result<Self, EkfError> {
        if variances.iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(EkfError::InvalidMeasurement(
                "process noise variances must be non-negative".into(),
            ));
        }
        Ok(Self(variances))
    }

    pub fn zero() -> Self {
        Self([T::zero(); STATE_DIM])
    }

    fn scaled(&self, dt: T) -> StateMatrix<T> {
        StateMatrix::from_diagonal(&StateVector::from_column_slice(&self.0)) * dt
    }
}

impl<T: Real> Default for ProcessNoise<T> {
    fn default() -> Self {
        Self(Self::TUNED.map(T::lit))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MeasurementKind {
    Orientation,
    AngularRate,
    PlanarFix,
    Depth,
    Acceleration,
}

impl MeasurementKind {
    /// State indices observed by this kind.
    pub fn indices(self) -> &'static [usize] {
        match self {
            Self::Orientation => &[ANG, ANG + 1, ANG + 2],
            Self::AngularRate => &[RATE, RATE + 1, RATE + 2],
            Self::PlanarFix => &[POS, POS + 1],
            Self::Depth => &[POS + 2],
            Self::Acceleration => &[ACC, ACC + 1, ACC + 2],
        }
    }

    pub fn dim(self) -> usize {
        self.indices().len()
    }

    pub fn is_angular(self) -> bool {
        matches!(self, Self::Orientation)
    }
}

/// A sensor reading with per-component variances (diagonal R).
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement<T: Real> {
    pub kind: MeasurementKind,
    pub values: Vec<T>,
    pub variances: Vec<T>,
}

impl<T: Real> Measurement<T> {
    pub fn new(kind: MeasurementKind, values: Vec<T>, variances: Vec<T>) -> Result<Self, EkfError> {
        let m = Self {
            kind,
            values,
            variances,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn from_sigmas(kind: MeasurementKind, values: &[T], sigmas: &[T]) -> Result<Self, EkfError> {
        Self::new(kind, values.to_vec(), sigmas.iter().map(|s| *s * *s).collect())
    }

    pub fn validate(&self) -> Result<(), EkfError> {
        let n = self.kind.dim();
        if self.values.len() != n || self.variances.len() != n {
            return Err(EkfError::InvalidMeasurement(format!(
                "{:?} expects {n} values and variances, got {} and {}",
                self.kind,
                self.values.len(),
                self.variances.len()
            )));
        }
        if self.variances.iter().any(|v| !v.is_finite() || *v <= T::zero()) {
            return Err(EkfError::InvalidMeasurement("variances must be positive".into()));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(EkfError::InvalidMeasurement("non-finite value".into()));
        }
        Ok(())
    }
}

fn check_dt<T: Real>(dt: T) -> Result<(), EkfError> {
    if dt > T::zero() && dt.is_finite() {
        Ok(())
    } else {
        Err(EkfError::InvalidTimeStep(dt.as_f64()))
    }
}

/// Constant-acceleration kinematics in the body frame.
pub fn transition<T: Real>(state: &Pose15<T>, dt: T) -> Result<Pose15<T>, EkfError> {
    check_dt(dt)?;
    let angles = state.orientation();
    let rates = euler_rate_matrix(&angles)?;
    let rot = angles.to_rotation();
    let (v, w, a) = (state.velocity(), state.angular_rate(), state.acceleration());
    let half = T::lit(0.5);

    let mut next = *state;
    let pos = state.position() + rot.rotate(&(v * dt + a * (half * dt * dt)));
    next.set_position(&pos);
    let theta = Vector3::new(angles.roll, angles.pitch, angles.yaw) + rates * w * dt;
    next.set_block(ANG, &theta);
    next.set_velocity(&(v + a * dt));
    next.wrap_angles();
    Ok(next)
}

/// Analytic Jacobian of [`transition`] with respect to the state.
pub fn jacobian_f<T: Real>(state: &Pose15<T>, dt: T) -> Result<StateMatrix<T>, EkfError> {
    check_dt(dt)?;
    let angles = state.orientation();
    let e = euler_rate_matrix(&angles)?;
    let rot = *angles.to_rotation().matrix();
    let partials = rotation_partials(&angles);
    let (v, w, a) = (state.velocity(), state.angular_rate(), state.acceleration());
    let half = T::lit(0.5);
    let displacement = v * dt + a * (half * dt * dt);

    let mut jac = StateMatrix::identity();
    for (k, dr) in partials.iter().enumerate() {
        jac.fixed_view_mut::<3, 1>(POS, ANG + k)
            .copy_from(&(dr * displacement));
    }
    jac.fixed_view_mut::<3, 3>(POS, VEL).copy_from(&(rot * dt));
    jac.fixed_view_mut::<3, 3>(POS, ACC)
        .copy_from(&(rot * (half * dt * dt)));

    // d(E w)/d(roll) and d(E w)/d(pitch); E does not depend on yaw.
    let (sr, cr) = angles.roll.sin_cos();
    let (sp, cp) = angles.pitch.sin_cos();
    let tp = sp / cp;
    let (q, r) = (w.y, w.z);
    let d_roll = Vector3::new((q * cr - r * sr) * tp, -q * sr - r * cr, (q * cr - r * sr) / cp);
    let a_ = (q * sr + r * cr) / (cp * cp);
    let d_pitch = Vector3::new(a_, T::zero(), a_ * sp);
    let mut ang = Matrix3::identity();
    ang.set_column(0, &(Vector3::x() + d_roll * dt));
    ang.set_column(1, &(Vector3::y() + d_pitch * dt));
    jac.fixed_view_mut::<3, 3>(ANG, ANG).copy_from(&ang);
    jac.fixed_view_mut::<3, 3>(ANG, RATE).copy_from(&(e * dt));

    jac.fixed_view_mut::<3, 3>(VEL, ACC)
        .copy_from(&(Matrix3::identity() * dt));
    Ok(jac)
}

/// Prediction step: `x' = f(x)`, `P' = A P A^T + diag(Q) dt`.
pub fn predict<T: Real>(
    state: &Pose15<T>,
    cov: &Covariance15<T>,
    q: &ProcessNoise<T>,
    dt: T,
) -> Result<(Pose15<T>, Covariance15<T>), EkfError> {
    let jac = jacobian_f(state, dt)?;
    let next = transition(state, dt)?;
    let p = jac * cov.0 * jac.transpose() + q.scaled(dt);
    Ok((next, Covariance15::new(p)))
}

/// Measurement update with a selection-matrix model and the Joseph-form
/// covariance update. Angle innovations are wrapped to `(-pi, pi]`.
pub fn update<T: Real>(
    state: &Pose15<T>,
    cov: &Covariance15<T>,
    m: &Measurement<T>,
) -> Result<(Pose15<T>, Covariance15<T>), EkfError> {
    m.validate()?;
    let idx = m.kind.indices();
    let n = idx.len();

    let mut c = DMatrix::<T>::zeros(n, STATE_DIM);
    for (row, &col) in idx.iter().enumerate() {
        c[(row, col)] = T::one();
    }
    let innovation = DVector::from_iterator(
        n,
        idx.iter().zip(&m.values).map(|(&i, &z)| {
            let y = z - state.0[i];
            if m.kind.is_angular() {
                wrap_angle(y)
            } else {
                y
            }
        }),
    );
    let r = DMatrix::from_diagonal(&DVector::from_column_slice(&m.variances));
    let p = DMatrix::from_column_slice(STATE_DIM, STATE_DIM, cov.0.as_slice());

    let pct = &p * c.transpose();
    let s = &c * &pct + &r;
    let s = (&s + s.transpose()) * T::lit(0.5);
    let eig = s.clone().symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if !lo.is_finite() || lo <= T::zero() || hi / lo > T::lit(MAX_INNOVATION_CONDITION) {
        let condition = if lo > T::zero() {
            (hi / lo).as_f64()
        } else {
            f64::INFINITY
        };
        return Err(EkfError::SingularInnovation { condition });
    }
    let s_inv = s
        .cholesky()
        .ok_or(EkfError::SingularInnovation {
            condition: f64::INFINITY,
        })?
        .inverse();
    let gain = pct * s_inv;

    let correction = &gain * innovation;
    let mut x = state.0;
    for i in 0..STATE_DIM {
        x[i] += correction[i];
    }

    let i_kc = DMatrix::<T>::identity(STATE_DIM, STATE_DIM) - &gain * &c;
    let joseph = &i_kc * &p * i_kc.transpose() + &gain * r * gain.transpose();
    let joseph = StateMatrix::from_column_slice(joseph.as_slice());

    Ok((Pose15::from_vector(x), Covariance15::new(joseph)))
}

/// Posterior emitted after each processed event.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate<T: Real> {
    pub t: T,
    pub state: Pose15<T>,
    pub cov: Covariance15<T>,
}

/// Event-driven filter: each measurement predicts over the elapsed time since
/// the previous event, then updates.
#[derive(Debug, Clone)]
pub struct Ekf<T: Real> {
    state: Pose15<T>,
    cov: Covariance15<T>,
    q: ProcessNoise<T>,
    last_t: Option<T>,
}

impl<T: Real> Ekf<T> {
    pub fn new(state: Pose15<T>, cov: Covariance15<T>, q: ProcessNoise<T>) -> Self {
        Self {
            state,
            cov,
            q,
            last_t: None,
        }
    }

    pub fn state(&self) -> &Pose15<T> {
        &self.state
    }

    pub fn covariance(&self) -> &Covariance15<T> {
        &self.cov
    }

    pub fn last_time(&self) -> Option<T> {
        self.last_t
    }

    fn elapsed(&self, t: T) -> Result<T, EkfError> {
        match self.last_t {
            Some(last) if t < last => Err(EkfError::NonMonotonicTime {
                last: last.as_f64(),
                t: t.as_f64(),
            }),
            Some(last) => Ok(t - last),
            None => Ok(T::zero()),
        }
    }

    /// Moves the filter clock to `t`, predicting if time advanced.
    pub fn advance_to(&mut self, t: T) -> Result<(), EkfError> {
        let dt = self.elapsed(t)?;
        if dt > T::zero() {
            let (x, p) = predict(&self.state, &self.cov, &self.q, dt)?;
            self.state = x;
            self.cov = p;
        }
        self.last_t = Some(t);
        Ok(())
    }

    /// Prior at `t` without changing the filter.
    pub fn peek(&self, t: T) -> Result<(Pose15<T>, Covariance15<T>), EkfError> {
        let dt = self.elapsed(t)?;
        if dt > T::zero() {
            predict(&self.state, &self.cov, &self.q, dt)
        } else {
            Ok((self.state, self.cov))
        }
    }

    /// Predicts to `t` and fuses `m`. On an update failure the prediction is kept.
    pub fn process(&mut self, t: T, m: &Measurement<T>) -> Result<Estimate<T>, EkfError> {
        self.advance_to(t)?;
        let (x, p) = update(&self.state, &self.cov, m)?;
        self.state = x;
        self.cov = p;
        Ok(self.estimate())
    }

    pub fn estimate(&self) -> Estimate<T> {
        Estimate {
            t: self.last_t.unwrap_or_else(T::zero),
            state: self.state,
            cov: self.cov,
        }
    }
}

/// Runs the filter over a time-ordered measurement stream.
pub fn run_filter<T: Real, I>(
    events: I,
    initial_state: Pose15<T>,
    initial_cov: Covariance15<T>,
    q: ProcessNoise<T>,
) -> Result<Vec<Estimate<T>>, EkfError>
where
    I: IntoIterator<Item = (T, Measurement<T>)>,
{
    let mut ekf = Ekf::new(initial_state, initial_cov, q);
    events
        .into_iter()
        .map(|(t, m)| ekf.process(t, &m))
        .collect()
}
