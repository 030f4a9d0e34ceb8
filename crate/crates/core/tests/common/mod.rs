pub mod oracles;
pub mod suite;
