//! The user guide, compiled into the crate so its code blocks run as
//! doctests: the book in `book/` cannot drift from the API without
//! breaking `cargo test --doc`.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/geometry.md")]
pub mod chords_and_slices {}

#[doc = include_str!("../../../book/src/phantoms.md")]
pub mod phantoms {}

#[doc = include_str!("../../../book/src/forward.md")]
pub mod synthesizing_intensity_data {}

#[doc = include_str!("../../../book/src/extraction.md")]
pub mod reading_off_amplitude_and_travel_time {}

#[doc = include_str!("../../../book/src/radon.md")]
pub mod travel_time_tomography {}

#[doc = include_str!("../../../book/src/abel.md")]
pub mod the_amplitude_route {}

#[doc = include_str!("../../../book/src/poisson.md")]
pub mod from_q_back_to_beta {}

#[doc = include_str!("../../../book/src/pipeline.md")]
pub mod files_and_the_command_line {}
