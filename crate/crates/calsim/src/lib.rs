pub mod batch;
pub mod coord_central;
pub mod coord_decentral;
pub mod engine;
pub mod fedmodel;
pub mod maxplus;
pub mod metrics;
pub mod scenarios;
pub mod simnet;
pub mod timekit;
