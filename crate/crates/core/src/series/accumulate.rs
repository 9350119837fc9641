use crate::scalar::Scalar;

/// Neumaier's variant of Kahan summation.
#[derive(Debug, Clone, Copy)]
pub struct CompensatedSum<T> {
    sum: T,
    compensation: T,
}

impl<T: Scalar> Default for CompensatedSum<T> {
    fn default() -> Self {
        Self {
            sum: T::zero(),
            compensation: T::zero(),
        }
    }
}

impl<T: Scalar> CompensatedSum<T> {
    pub fn add(&mut self, x: T) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation = self.compensation + ((self.sum - t) + x);
        } else {
            self.compensation = self.compensation + ((x - t) + self.sum);
        }
        self.sum = t;
    }

    pub fn scale(&mut self, factor: T) {
        self.sum = self.sum * factor;
        self.compensation = self.compensation * factor;
    }

    pub fn merge(&mut self, other: &Self) {
        self.add(other.sum);
        self.add(other.compensation);
    }

    pub fn value(&self) -> T {
        self.sum + self.compensation
    }
}

/// Signed sum of `±exp(lᵢ)` held relative to the largest `lᵢ` seen so far,
/// so magnitudes far outside the floating range never materialize.
#[derive(Debug, Clone, Copy)]
pub struct SignedLogSum<T> {
    pivot: T,
    signed: CompensatedSum<T>,
    absolute: CompensatedSum<T>,
}

impl<T: Scalar> Default for SignedLogSum<T> {
    fn default() -> Self {
        Self {
            pivot: T::neg_infinity(),
            signed: CompensatedSum::default(),
            absolute: CompensatedSum::default(),
        }
    }
}

impl<T: Scalar> SignedLogSum<T> {
    fn raise_pivot(&mut self, to: T) {
        if to > self.pivot {
            if self.pivot.is_finite() {
                let factor = (self.pivot - to).exp();
                self.signed.scale(factor);
                self.absolute.scale(factor);
            }
            self.pivot = to;
        }
    }

    /// Adds `sign·exp(log_abs)`; `negative` selects the sign.
    pub fn push(&mut self, negative: bool, log_abs: T) {
        if log_abs == T::neg_infinity() {
            return;
        }
        self.raise_pivot(log_abs);
        let v = (log_abs - self.pivot).exp();
        self.signed.add(if negative { -v } else { v });
        self.absolute.add(v);
    }

    pub fn merge(&mut self, other: &Self) {
        if other.pivot == T::neg_infinity() {
            return;
        }
        self.raise_pivot(other.pivot);
        let factor = (other.pivot - self.pivot).exp();
        let mut signed = other.signed;
        let mut absolute = other.absolute;
        signed.scale(factor);
        absolute.scale(factor);
        self.signed.merge(&signed);
        self.absolute.merge(&absolute);
    }

    /// `(total relative to pivot, Σ|·| relative to pivot, pivot)`.
    pub fn parts(&self) -> (T, T, T) {
        (self.signed.value(), self.absolute.value(), self.pivot)
    }
}
