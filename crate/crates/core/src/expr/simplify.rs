use super::{BinaryOp, Expr, UnaryOp};

pub(super) fn simplify(e: &Expr) -> Expr {
    match e {
        Expr::Const(_) | Expr::Var(_) => e.clone(),
        Expr::Unary(op, arg) => {
            let a = simplify(arg);
            if let Expr::Const(c) = a {
                let v = op.apply(c);
                if v.is_finite() {
                    return Expr::Const(v);
                }
            }
            match (op, a) {
                (UnaryOp::Neg, Expr::Unary(UnaryOp::Neg, inner)) => *inner,
                (op, a) => Expr::unary(*op, a),
            }
        }
        Expr::Pow(base, n) => {
            let b = simplify(base);
            if let Expr::Const(c) = b {
                let v = c.powi(*n as i32);
                if v.is_finite() {
                    return Expr::Const(v);
                }
            }
            match n {
                0 => Expr::Const(1.0),
                1 => b,
                _ => Expr::pow(b, *n),
            }
        }
        Expr::Binary(op, l, r) => {
            let l = simplify(l);
            let r = simplify(r);
            if let (Expr::Const(a), Expr::Const(b)) = (&l, &r) {
                let v = op.apply(*a, *b);
                if v.is_finite() {
                    return Expr::Const(v);
                }
            }
            match op {
                BinaryOp::Add if l.is_const(0.0) => r,
                BinaryOp::Add if r.is_const(0.0) => l,
                BinaryOp::Sub if r.is_const(0.0) => l,
                BinaryOp::Sub if l.is_const(0.0) => Expr::unary(UnaryOp::Neg, r),
                BinaryOp::Mul if l.is_const(0.0) || r.is_const(0.0) => Expr::Const(0.0),
                BinaryOp::Mul if l.is_const(1.0) => r,
                BinaryOp::Mul if r.is_const(1.0) => l,
                BinaryOp::Div if r.is_const(1.0) => l,
                _ => Expr::Binary(*op, Box::new(l), Box::new(r)),
            }
        }
    }
}
