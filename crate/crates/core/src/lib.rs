//! Job-posting workforce analytics: ingest and deduplicate postings, screen
//! them for relevance, classify practice specializations, extract and
//! normalize skills, and report frequency and co-occurrence statistics.

pub mod analytics;
pub mod classify;
pub mod corpus;
pub mod inference;
pub mod pipeline;
pub mod prompts;
pub mod qa;
pub mod report;
pub mod skills;
pub mod synth;
pub mod text;
