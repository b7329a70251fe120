//! FourRooms gridworld and its task schedules.

mod fourrooms;

pub use fourrooms::*;
