use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("{vehicles} vehicles do not fit on {lanes} lanes ({slots} slots)")]
    CapacityExceeded {
        vehicles: usize,
        lanes: usize,
        slots: usize,
    },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}
