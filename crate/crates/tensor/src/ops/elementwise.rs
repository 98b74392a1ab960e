use crate::error::{dim_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return dim_err(op, format!("{:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    /// Applies `f` elementwise; `df(x, y)` is the local derivative given input and output.
    fn unary(
        &self,
        op: &'static str,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + Send + Sync + 'static,
    ) -> Result<Self> {
        let data = self.data().iter().map(|&x| f(x)).collect();
        let x = self.clone();
        Tensor::from_op(
            op,
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            move |g, y| {
                let gx = g
                    .iter()
                    .zip(x.data())
                    .zip(y)
                    .map(|((&g, &x), &y)| g * df(x, y))
                    .collect();
                vec![Some(gx)]
            },
        )
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        same_shape("add", self, other)?;
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a + b)
            .collect();
        Tensor::from_op(
            "add",
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            |g, _| vec![Some(g.to_vec()), Some(g.to_vec())],
        )
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        same_shape("sub", self, other)?;
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a - b)
            .collect();
        Tensor::from_op(
            "sub",
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            |g, _| vec![Some(g.to_vec()), Some(g.iter().map(|&v| -v).collect())],
        )
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        same_shape("mul", self, other)?;
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a * b)
            .collect();
        let (a, b) = (self.clone(), other.clone());
        Tensor::from_op(
            "mul",
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            move |g, _| {
                let ga = a
                    .requires_grad()
                    .then(|| g.iter().zip(b.data()).map(|(&g, &b)| g * b).collect());
                let gb = b
                    .requires_grad()
                    .then(|| g.iter().zip(a.data()).map(|(&g, &a)| g * a).collect());
                vec![ga, gb]
            },
        )
    }

    pub fn scale(&self, s: T) -> Result<Self> {
        self.unary("scale", |x| x * s, move |_, _| s)
    }

    pub fn add_scalar(&self, s: T) -> Result<Self> {
        self.unary("add_scalar", |x| x + s, |_, _| T::one())
    }

    pub fn neg(&self) -> Result<Self> {
        self.scale(-T::one())
    }

    /// `1 - x`.
    pub fn one_minus(&self) -> Result<Self> {
        self.unary("one_minus", |x| T::one() - x, |_, _| -T::one())
    }

    pub fn relu(&self) -> Result<Self> {
        self.unary(
            "relu",
            |x| if x > T::zero() { x } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn sigmoid(&self) -> Result<Self> {
        self.unary(
            "sigmoid",
            |x| {
                if x >= T::zero() {
                    T::one() / (T::one() + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (T::one() + e)
                }
            },
            |_, y| y * (T::one() - y),
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Result<Self> {
        let c = T::of((2.0 / std::f64::consts::PI).sqrt());
        let k = T::of(0.044715);
        let half = T::of(0.5);
        self.unary(
            "gelu",
            move |x| half * x * (T::one() + (c * (x + k * x * x * x)).tanh()),
            move |x, _| {
                let u = c * (x + k * x * x * x);
                let t = u.tanh();
                let du = c * (T::one() + T::of(3.0) * k * x * x);
                half * (T::one() + t) + half * x * (T::one() - t * t) * du
            },
        )
    }

    pub fn exp(&self) -> Result<Self> {
        self.unary("exp", |x| x.exp(), |_, y| y)
    }

    /// Natural log; non-positive inputs surface as a non-finite error.
    pub fn ln(&self) -> Result<Self> {
        self.unary("ln", |x| x.ln(), |x, _| T::one() / x)
    }

    pub fn abs(&self) -> Result<Self> {
        self.unary(
            "abs",
            |x| x.abs(),
            |x, _| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn square(&self) -> Result<Self> {
        self.unary("square", |x| x * x, |x, _| T::of(2.0) * x)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping was active.
    pub fn clamp(&self, lo: T, hi: T) -> Result<Self> {
        self.unary(
            "clamp",
            move |x| x.max(lo).min(hi),
            move |x, _| {
                if x < lo || x > hi {
                    T::zero()
                } else {
                    T::one()
                }
            },
        )
    }

    /// Adds `row` (length `N`) to every row of an `M×N` matrix.
    pub fn add_row(&self, row: &Self) -> Result<Self> {
        if self.ndim() != 2 || row.numel() != self.shape()[1] {
            return dim_err(
                "add_row",
                format!("matrix {:?} with row {:?}", self.shape(), row.shape()),
            );
        }
        let n = self.shape()[1];
        let data = self
            .data()
            .chunks(n)
            .flat_map(|r| r.iter().zip(row.data()).map(|(&a, &b)| a + b))
            .collect();
        Tensor::from_op(
            "add_row",
            self.shape().to_vec(),
            data,
            vec![self.clone(), row.clone()],
            move |g, _| {
                let mut gr = vec![T::zero(); n];
                for r in g.chunks(n) {
                    gr.iter_mut().zip(r).for_each(|(a, &b)| *a += b);
                }
                vec![Some(g.to_vec()), Some(gr)]
            },
        )
    }
}
