pub mod tracker_oracle;
