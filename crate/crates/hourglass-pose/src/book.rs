// Compiled only by `cargo test --doc`. Each module pulls a guide chapter in
// as rustdoc, so every ```rust fence in the book runs with the test suite and
// the guide cannot drift from the API.

#[doc = include_str!("../../../book/src/overview.md")]
mod overview {}

#[doc = include_str!("../../../book/src/coordinates.md")]
mod coordinates {}

#[doc = include_str!("../../../book/src/heatmaps.md")]
mod heatmaps {}

#[doc = include_str!("../../../book/src/model.md")]
mod model {}

#[doc = include_str!("../../../book/src/decoding.md")]
mod decoding {}

#[doc = include_str!("../../../book/src/training.md")]
mod training {}

#[doc = include_str!("../../../book/src/evaluation.md")]
mod evaluation {}

#[doc = include_str!("../../../book/src/cli.md")]
mod cli {}

#[doc = include_str!("../../../book/src/formats.md")]
mod formats {}
