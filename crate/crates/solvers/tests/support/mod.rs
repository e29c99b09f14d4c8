pub mod kkt_oracle;
pub mod nlp_fixtures;
