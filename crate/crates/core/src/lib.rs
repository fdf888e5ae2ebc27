//! Exact and Monte-Carlo verification of Lévy–Ottaviani-type tail domination
//! for Bernoulli processes `X_t = sum_i a_i(t) eps_i` on `[0, 1]`, together
//! with the chaining construction bounding `E sup_t X_t` and the derivation of
//! the resulting numerical constants.

pub mod chaining;
pub mod cli;
pub mod family;
pub mod inequalities;
pub mod numeric;
pub mod montecarlo;
pub mod oracle;
pub mod search;
