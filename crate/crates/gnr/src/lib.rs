//! Dual-level news recommendation with related-news exploration and
//! multi-news narrative fusion.
//!
//! The pipeline has three stages:
//!
//! 1. **Representation**: news and users get a semantic embedding (from raw
//!    text) and a theme embedding (from short topic phrases produced by a
//!    chat-completion provider), fused by an attention combiner into a
//!    dual-level vector ([`textenc`]).
//! 2. **Exploration**: a click ranker picks the focal news for an impression
//!    ([`ranker`]), a Siamese relation model finds news related to it
//!    ([`relation`]), and a personalized filter assembles the bounded
//!    reference news set ([`explorer`]).
//! 3. **Fusion**: the reference set plus a user interest profile is fused
//!    into a single narrative through the provider gateway ([`fusion`]), and
//!    a small autoregressive generator can be aligned to user preference
//!    rankings with a pairwise hinge ([`textgen`], [`align`]).
//!
//! [`eval`] scores both stages: ranking metrics with a brute-force oracle,
//! plus win rate and consistency rate for generated narratives. Everything
//! runs offline against the deterministic stub provider; the HTTP provider
//! speaks the common chat-completions wire format.

pub mod align;
pub mod checkpoint;
pub mod corpus;
pub mod eval;
pub mod explorer;
pub mod fusion;
pub mod gateway;
pub mod gradcheck;
pub mod optim;
pub mod ranker;
pub mod relation;
pub mod synth;
pub mod tensor;
pub mod text;
pub mod textenc;
pub mod textgen;
pub mod weights;
