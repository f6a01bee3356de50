use std::cell::{Cell, RefCell};
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Vector-Jacobian product of a block record: maps the adjoints of the block
/// outputs onto (accumulates into) the adjoints of its inputs.
pub type Vjp = Box<dyn Fn(&[f64], &mut [f64]) + Send>;

enum Record {
    Unary {
        kind: &'static str,
        out: usize,
        arg: usize,
        d: f64,
    },
    Binary {
        kind: &'static str,
        out: usize,
        lhs: usize,
        rhs: usize,
        dl: f64,
        dr: f64,
    },
    Block {
        kind: &'static str,
        out_start: usize,
        out_len: usize,
        inputs: Vec<usize>,
        vjp: Vjp,
    },
}

/// Append-only record of a computation.
///
/// Every slot is either a leaf (no record) or the output of exactly one record,
/// and records only ever reference earlier slots, so a single reverse sweep over
/// the records is a valid topological order.
#[derive(Default)]
pub struct Tape {
    records: RefCell<Vec<Record>>,
    values: RefCell<Vec<f64>>,
    degenerate_spectra: Cell<usize>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("slots", &self.len())
            .field("records", &self.records.borrow().len())
            .finish()
    }
}

/// A scalar recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: usize,
    value: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var(#{} = {})", self.index, self.value)
    }
}

/// Adjoints of every slot after a reverse sweep.
#[derive(Debug, Clone)]
pub struct Adjoints(Vec<f64>);

impl Adjoints {
    pub fn wrt(&self, var: Var<'_>) -> f64 {
        self.0[var.index]
    }

    pub fn wrt_all(&self, vars: &[Var<'_>]) -> Vec<f64> {
        vars.iter().map(|v| self.0[v.index]).collect()
    }

    pub fn wrt_index(&self, index: usize) -> f64 {
        self.0[index]
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of slots (leaves and recorded outputs).
    pub fn len(&self) -> usize {
        self.values.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of `sym_eig` calls that hit an eigenvalue cluster.
    pub fn degenerate_spectra(&self) -> usize {
        self.degenerate_spectra.get()
    }

    pub(crate) fn flag_degenerate_spectrum(&self) {
        self.degenerate_spectra.set(self.degenerate_spectra.get() + 1);
    }

    fn push_slot(&self, value: f64) -> usize {
        let mut values = self.values.borrow_mut();
        values.push(value);
        values.len() - 1
    }

    /// A new independent variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        let index = self.push_slot(value);
        Var {
            tape: self,
            index,
            value,
        }
    }

    pub fn vars(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    /// A constant is a leaf nobody asks the gradient of.
    pub fn constant(&self, value: f64) -> Var<'_> {
        self.var(value)
    }

    /// The value stored in a slot.
    pub fn value_at(&self, index: usize) -> f64 {
        self.values.borrow()[index]
    }

    /// Re-attach a slot index previously taken from a [`Var`] of this tape.
    pub fn var_at(&self, index: usize) -> Var<'_> {
        Var {
            tape: self,
            index,
            value: self.value_at(index),
        }
    }

    fn unary(&self, kind: &'static str, arg: &Var<'_>, value: f64, d: f64) -> Var<'_> {
        let out = self.push_slot(value);
        self.records.borrow_mut().push(Record::Unary {
            kind,
            out,
            arg: arg.index,
            d,
        });
        Var {
            tape: self,
            index: out,
            value,
        }
    }

    fn binary(
        &self,
        kind: &'static str,
        lhs: &Var<'_>,
        rhs: &Var<'_>,
        value: f64,
        dl: f64,
        dr: f64,
    ) -> Var<'_> {
        let out = self.push_slot(value);
        self.records.borrow_mut().push(Record::Binary {
            kind,
            out,
            lhs: lhs.index,
            rhs: rhs.index,
            dl,
            dr,
        });
        Var {
            tape: self,
            index: out,
            value,
        }
    }

    /// Record a multi-output operation with a custom adjoint rule.
    ///
    /// `vjp(out_adj, in_adj)` must *accumulate* into `in_adj`, which is laid
    /// out in the order of `inputs`.
    pub fn block<'t>(
        &'t self,
        kind: &'static str,
        inputs: &[Var<'t>],
        outputs: &[f64],
        vjp: Vjp,
    ) -> Vec<Var<'t>> {
        let out_start = self.len();
        {
            let mut values = self.values.borrow_mut();
            values.extend_from_slice(outputs);
        }
        self.records.borrow_mut().push(Record::Block {
            kind,
            out_start,
            out_len: outputs.len(),
            inputs: inputs.iter().map(|v| v.index).collect(),
            vjp,
        });
        outputs
            .iter()
            .enumerate()
            .map(|(k, &value)| Var {
                tape: self,
                index: out_start + k,
                value,
            })
            .collect()
    }

    /// Record a block whose Jacobian (row-major, `outputs.len() x inputs.len()`)
    /// was computed alongside its values.
    pub fn block_jacobian<'t>(
        &'t self,
        kind: &'static str,
        inputs: &[Var<'t>],
        outputs: &[f64],
        jacobian: Vec<f64>,
    ) -> Vec<Var<'t>> {
        let n_in = inputs.len();
        assert_eq!(jacobian.len(), outputs.len() * n_in, "{kind}: jacobian shape");
        self.block(
            kind,
            inputs,
            outputs,
            Box::new(move |out_adj, in_adj| {
                for (row, &a) in jacobian.chunks_exact(n_in).zip(out_adj) {
                    if a != 0.0 {
                        for (acc, &j) in in_adj.iter_mut().zip(row) {
                            *acc += a * j;
                        }
                    }
                }
            }),
        )
    }

    /// Reverse sweep from several seeded outputs at once.
    pub fn backward(&self, seeds: &[(Var<'_>, f64)]) -> Result<Adjoints> {
        let mut adj = vec![0.0; self.len()];
        for (v, s) in seeds {
            debug_assert!(std::ptr::eq(v.tape, self), "seed from another tape");
            adj[v.index] += s;
        }
        self.sweep(&mut adj)?;
        Ok(Adjoints(adj))
    }

    /// Reverse sweep seeded by slot indices rather than live vars.
    pub fn backward_indices(&self, seeds: &[(usize, f64)]) -> Result<Adjoints> {
        let mut adj = vec![0.0; self.len()];
        for &(i, s) in seeds {
            adj[i] += s;
        }
        self.sweep(&mut adj)?;
        Ok(Adjoints(adj))
    }

    /// Gradient of `loss` with respect to `params`.
    pub fn grad(&self, loss: Var<'_>, params: &[Var<'_>]) -> Result<Vec<f64>> {
        Ok(self.backward(&[(loss, 1.0)])?.wrt_all(params))
    }

    fn sweep(&self, adj: &mut [f64]) -> Result<()> {
        let records = self.records.borrow();
        let mut scratch_out = Vec::new();
        let mut scratch_in = Vec::new();
        for record in records.iter().rev() {
            match record {
                Record::Unary { kind, out, arg, d } => {
                    let a = adj[*out];
                    if a != 0.0 {
                        let v = adj[*arg] + d * a;
                        if !v.is_finite() {
                            return Err(Error::NonFiniteAdjoint { kind });
                        }
                        adj[*arg] = v;
                    }
                }
                Record::Binary {
                    kind,
                    out,
                    lhs,
                    rhs,
                    dl,
                    dr,
                } => {
                    let a = adj[*out];
                    if a != 0.0 {
                        adj[*lhs] += dl * a;
                        adj[*rhs] += dr * a;
                        if !(adj[*lhs].is_finite() && adj[*rhs].is_finite()) {
                            return Err(Error::NonFiniteAdjoint { kind });
                        }
                    }
                }
                Record::Block {
                    kind,
                    out_start,
                    out_len,
                    inputs,
                    vjp,
                } => {
                    let out = &adj[*out_start..*out_start + *out_len];
                    if out.iter().all(|&a| a == 0.0) {
                        continue;
                    }
                    scratch_out.clear();
                    scratch_out.extend_from_slice(out);
                    scratch_in.clear();
                    scratch_in.resize(inputs.len(), 0.0);
                    vjp(&scratch_out, &mut scratch_in);
                    for (&i, &g) in inputs.iter().zip(&scratch_in) {
                        if !g.is_finite() {
                            return Err(Error::NonFiniteAdjoint { kind });
                        }
                        adj[i] += g;
                    }
                }
            }
        }
        Ok(())
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn constant(&self, c: f64) -> Var<'t> {
        self.tape.constant(c)
    }

    pub fn exp(self) -> Var<'t> {
        let v = self.value.exp();
        self.tape.unary("exp", &self, v, v)
    }

    pub fn ln(self) -> Var<'t> {
        self.tape
            .unary("ln", &self, self.value.ln(), 1.0 / self.value)
    }

    pub fn sqrt(self) -> Var<'t> {
        let v = self.value.sqrt();
        self.tape.unary("sqrt", &self, v, 0.5 / v)
    }

    pub fn powf(self, p: f64) -> Var<'t> {
        let v = self.value.powf(p);
        self.tape
            .unary("powf", &self, v, p * self.value.powf(p - 1.0))
    }

    pub fn powi(self, n: i32) -> Var<'t> {
        let v = self.value.powi(n);
        self.tape
            .unary("powi", &self, v, n as f64 * self.value.powi(n - 1))
    }

    pub fn recip(self) -> Var<'t> {
        let v = 1.0 / self.value;
        self.tape.unary("recip", &self, v, -v * v)
    }

    pub fn square(self) -> Var<'t> {
        self.tape
            .unary("square", &self, self.value * self.value, 2.0 * self.value)
    }

    pub fn abs(self) -> Var<'t> {
        let s = if self.value < 0.0 { -1.0 } else { 1.0 };
        self.tape.unary("abs", &self, self.value.abs(), s)
    }

    pub fn sin(self) -> Var<'t> {
        self.tape
            .unary("sin", &self, self.value.sin(), self.value.cos())
    }

    pub fn cos(self) -> Var<'t> {
        self.tape
            .unary("cos", &self, self.value.cos(), -self.value.sin())
    }

    /// Larger of two vars; the adjoint follows the selected branch.
    pub fn max(self, other: Var<'t>) -> Var<'t> {
        if self.value >= other.value {
            self.tape.binary("max", &self, &other, self.value, 1.0, 0.0)
        } else {
            self.tape.binary("max", &self, &other, other.value, 0.0, 1.0)
        }
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.tape
            .binary("add", &self, &rhs, self.value + rhs.value, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.tape
            .binary("sub", &self, &rhs, self.value - rhs.value, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.tape.binary(
            "mul",
            &self,
            &rhs,
            self.value * rhs.value,
            rhs.value,
            self.value,
        )
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        let q = self.value / rhs.value;
        self.tape
            .binary("div", &self, &rhs, q, 1.0 / rhs.value, -q / rhs.value)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.tape.unary("neg", &self, -self.value, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Var<'t> {
        self.tape.unary("add_const", &self, self.value + rhs, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Var<'t> {
        self.tape.unary("sub_const", &self, self.value - rhs, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        self.tape.unary("scale", &self, self.value * rhs, rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Var<'t> {
        self.tape
            .unary("div_const", &self, self.value / rhs, 1.0 / rhs)
    }
}

impl<'t> Add<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        rhs + self
    }
}

impl<'t> Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        rhs.tape.unary("rsub_const", &rhs, self - rhs.value, -1.0)
    }
}

impl<'t> Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        rhs * self
    }
}

impl<'t> Div<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        let q = self / rhs.value;
        rhs.tape.unary("rdiv_const", &rhs, q, -q / rhs.value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_derivative() {
        let tape = Tape::new();
        let x = tape.var(3.0);
        let y = x * x;
        assert_eq!(tape.grad(y, &[x]).unwrap(), vec![6.0]);
    }

    #[test]
    fn mixed_expression_matches_hand_derivative() {
        let tape = Tape::new();
        let x = tape.var(0.7);
        let y = tape.var(-1.3);
        // f = exp(x*y) / (1 + x^2) + ln(2 - y)
        let f = (x * y).exp() / (1.0 + x.square()) + (2.0 - y).ln();
        let g = tape.grad(f, &[x, y]).unwrap();
        let (xv, yv) = (0.7f64, -1.3f64);
        let e = (xv * yv).exp();
        let d = 1.0 + xv * xv;
        let gx = yv * e / d - e * 2.0 * xv / (d * d);
        let gy = xv * e / d - 1.0 / (2.0 - yv);
        assert!((g[0] - gx).abs() < 1e-14);
        assert!((g[1] - gy).abs() < 1e-14);
    }

    #[test]
    fn fan_out_accumulates() {
        let tape = Tape::new();
        let x = tape.var(2.0);
        let y = x * 3.0 + x.powi(3) - x / 4.0;
        let g = tape.grad(y, &[x]).unwrap()[0];
        assert!((g - (3.0 + 12.0 - 0.25)).abs() < 1e-14);
    }

    #[test]
    fn non_finite_adjoint_names_the_node() {
        let tape = Tape::new();
        let x = tape.var(0.0);
        let y = x.sqrt();
        match tape.grad(y, &[x]) {
            Err(Error::NonFiniteAdjoint { kind }) => assert_eq!(kind, "sqrt"),
            other => panic!("expected non-finite adjoint, got {other:?}"),
        }
    }

    #[test]
    fn block_jacobian_chains() {
        let tape = Tape::new();
        let a = tape.var(1.5);
        let b = tape.var(-2.0);
        // outputs (a*b, a+b) with jacobian [[b, a], [1, 1]]
        let out = tape.block_jacobian("pair", &[a, b], &[-3.0, -0.5], vec![-2.0, 1.5, 1.0, 1.0]);
        let f = out[0] * out[1];
        let g = tape.grad(f, &[a, b]).unwrap();
        // f = ab(a+b) => df/da = b(a+b) + ab, df/db = a(a+b) + ab
        assert!((g[0] - (-2.0 * -0.5 + -3.0)).abs() < 1e-14);
        assert!((g[1] - (1.5 * -0.5 + -3.0)).abs() < 1e-14);
    }

    #[test]
    fn replay_is_bit_identical() {
        let run = || {
            let tape = Tape::new();
            let xs = tape.vars(&[0.3, -0.2, 1.1]);
            let mut acc = xs[0].exp();
            for &x in &xs[1..] {
                acc = acc * x.sin() + x.square().sqrt();
            }
            let g = tape.grad(acc, &xs).unwrap();
            (acc.value().to_bits(), g.iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        };
        assert_eq!(run(), run());
    }
}
