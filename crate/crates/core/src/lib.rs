pub mod ble;
pub mod calibrate;
pub mod calibration;
pub mod energy;
pub mod error;
pub mod esb;
pub mod experiments;
pub mod phy;
pub mod rng;
pub mod sensor;
pub mod sim;
pub mod time;

pub use calibration::CalibrationSet;
pub use error::{Result, SimError};
