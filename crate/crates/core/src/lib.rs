pub mod clifford;
pub mod dirac;
pub mod frame;
pub mod harmonic;
pub mod integrability;
pub mod measure;
pub mod par;
pub mod quad;
pub mod testfn;
