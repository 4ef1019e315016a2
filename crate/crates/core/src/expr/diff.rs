use super::{BinaryOp, Expr, UnaryOp};

/// Unsimplified derivative; callers run `simplify` on the result.
pub(super) fn derivative(e: &Expr, var: &str) -> Expr {
    match e {
        Expr::Const(_) => Expr::Const(0.0),
        Expr::Var(v) => Expr::Const(if v.name.as_ref() == var { 1.0 } else { 0.0 }),
        Expr::Binary(op, l, r) => {
            let dl = derivative(l, var);
            let dr = derivative(r, var);
            let (l, r) = ((**l).clone(), (**r).clone());
            match op {
                BinaryOp::Add => Expr::add(dl, dr),
                BinaryOp::Sub => Expr::sub(dl, dr),
                BinaryOp::Mul => Expr::add(Expr::mul(dl, r), Expr::mul(l, dr)),
                // (l/r)' = l'/r - l r' / r^2
                BinaryOp::Div => Expr::sub(
                    Expr::div(dl, r.clone()),
                    Expr::div(Expr::mul(l, dr), Expr::pow(r, 2)),
                ),
            }
        }
        Expr::Pow(base, n) => match n {
            0 => Expr::Const(0.0),
            n => Expr::mul(
                Expr::mul(Expr::Const(*n as f64), Expr::pow((**base).clone(), n - 1)),
                derivative(base, var),
            ),
        },
        Expr::Unary(op, arg) => {
            let da = derivative(arg, var);
            let a = (**arg).clone();
            let outer = match op {
                UnaryOp::Neg => return Expr::unary(UnaryOp::Neg, da),
                UnaryOp::Sin => Expr::unary(UnaryOp::Cos, a),
                UnaryOp::Cos => Expr::unary(UnaryOp::Neg, Expr::unary(UnaryOp::Sin, a)),
                UnaryOp::Exp => Expr::unary(UnaryOp::Exp, a),
                UnaryOp::Sqrt => Expr::div(
                    Expr::Const(1.0),
                    Expr::mul(Expr::Const(2.0), Expr::unary(UnaryOp::Sqrt, a)),
                ),
                UnaryOp::Tanh => Expr::sub(
                    Expr::Const(1.0),
                    Expr::pow(Expr::unary(UnaryOp::Tanh, a), 2),
                ),
                // a/|a|: evaluates to 0/0, a domain error, at a = 0.
                UnaryOp::Abs => Expr::div(a.clone(), Expr::unary(UnaryOp::Abs, a)),
            };
            Expr::mul(outer, da)
        }
    }
}
