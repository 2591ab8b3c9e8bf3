pub mod ai;
pub mod bench;
pub mod boolean;
pub mod bvh;
pub mod cli;
pub mod contour;
pub mod fft;
pub mod geometry;
pub mod imaging;
pub mod io;
pub mod mrc;
pub mod opc;
pub mod suite;
