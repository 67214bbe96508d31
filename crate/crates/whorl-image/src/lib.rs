//! Grayscale raster primitives shared across the pipeline.
//!
//! Conventions, fixed here once:
//! - images are row-major `u8`, origin top-left, `x` is the column and `y`
//!   the row; intensity 0 is dark (ridges and empty background), 255 bright
//!   (valleys);
//! - coordinates passed to transforms are pixel centers, so pixel `(x, y)`
//!   sits at real position `(x, y)` exactly;
//! - a [`Homography`] maps image-1 coordinates into image-2's frame, and
//!   warping resamples by the inverse map with bilinear weights, writing 0
//!   (background) wherever the source has no data.

mod filter;
mod gabor;
mod geometry;
mod gray;
mod io;
mod perlin;

pub use filter::{box_filter, dilate, erode, largest_component, sobel_magnitude, threshold_mask};
pub use gabor::GaborKernel;
pub use geometry::{warp, GeometryError, Homography};
pub use gray::{BinaryMask, GrayImage, ScalarField};
pub use io::{load_png, save_pgm, save_png, ImageIoError};
pub use perlin::{perlin_field, perlin_sample};
