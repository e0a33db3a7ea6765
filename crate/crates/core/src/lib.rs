//! 5QI-to-NQI mapping, NTN slicing and joint slice routing / flow
//! allocation over a LEO constellation snapshot.

pub mod constellation;
pub mod metrics;
pub mod milp;
pub mod qos;
pub mod scenario;
pub mod slicing;
