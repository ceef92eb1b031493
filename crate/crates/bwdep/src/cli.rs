//! Command-line interface (placeholder while the core is built).

pub fn main_entry() -> i32 {
    0
}
