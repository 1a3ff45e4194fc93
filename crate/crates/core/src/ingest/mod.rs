//! Loaders and writers for the on-disk dataset formats.

pub mod e4;
pub mod tables;

pub use e4::{load_e4_day, parse_channel_file, write_e4_day};
pub use tables::{
    cross_reference, load_env_csv, load_schedule_and_surveys, parse_env_csv, parse_schedule_csv, parse_surveys_csv,
};
