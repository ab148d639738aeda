pub mod dynamics;
pub mod gammoid;
pub mod io;
pub mod lincoh;
pub mod netgen;
pub mod recover;
pub mod signals;
