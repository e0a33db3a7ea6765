//! Reference tables written out by hand, shared by the catalog tests and the
//! acceptance run.
#![allow(dead_code)]

// (5QI, delay budget in ms)
pub const BUDGETS: [(u16, f64); 7] = [
    (80, 10.0),
    (3, 50.0),
    (65, 75.0),
    (1, 100.0),
    (2, 150.0),
    (70, 200.0),
    (4, 300.0),
];

// row per condition, columns follow BUDGETS order
pub const MAPPINGS: [[u16; 7]; 6] = [
    [1, 1, 1, 1, 1, 1, 1],
    [4, 4, 4, 4, 4, 4, 4],
    [65, 65, 65, 2, 2, 4, 4],
    [80, 65, 65, 1, 70, 70, 4],
    [80, 3, 65, 1, 2, 70, 4],
    [4, 70, 2, 1, 65, 3, 80],
];
