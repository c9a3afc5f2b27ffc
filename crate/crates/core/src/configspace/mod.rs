//! Kernel configuration spaces: parameter domains, constraints between
//! parameters, deterministic enumeration and validation.

pub mod expr;
mod space;
mod value;

pub use expr::{EvalError, ExprError, ExprErrorKind, ValueType};
pub use space::{
    parse_space, ConfigSpace, Constraint, Enumerate, ParamDomain, ParamKind, SpaceError,
    StructuralError, Validation, Violation,
};
pub use value::{KernelConfig, ShapeError, ShapeKey, Value};
