pub mod canon;
pub mod chem;
pub mod config;
pub mod diff;
pub mod globe;
pub mod model;
pub mod moon;
pub mod nn;
pub mod orbitals;
pub mod system;
pub mod vmc;

// The book chapters run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/molecules.md")]
    mod molecules {}
    #[doc = include_str!("../../../book/src/hartree-fock.md")]
    mod hartree_fock {}
    #[doc = include_str!("../../../book/src/wave-function.md")]
    mod wave_function {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/configuration.md")]
    mod configuration {}
}
