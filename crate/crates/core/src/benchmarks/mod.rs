pub mod linear;
pub mod uav;
