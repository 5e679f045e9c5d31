//! Toolchain for AMD K8/K10-style microcode: instruction and update-file
//! codecs, an RTL assembler/disassembler, an executable engine model, and
//! ROM heat-map and bit-grid utilities.

pub mod container;
pub mod engine;
pub mod heatmap;
pub mod romgrid;
pub mod rtl;
pub mod tables;
pub mod toyrom;
pub mod uisa;
