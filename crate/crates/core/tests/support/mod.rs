#![allow(dead_code)]

pub mod grad_suite;
pub mod oracle_suite;
pub mod property_suite;
