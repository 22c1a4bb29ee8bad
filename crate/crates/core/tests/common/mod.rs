#![allow(dead_code)]

pub mod entity_props;
pub mod gradcheck;
pub mod oracle;
pub mod parity;
pub mod propagation;
