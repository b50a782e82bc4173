//! Bit-exact file formats: NIfTI-1 volumes (read-only plus a test fixture
//! writer), the MRTN tensor container, and the MRCK model checkpoint.
//! Everything is little-endian.

mod checkpoint;
mod nifti;
mod tensorfile;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use nifti::{read_nifti, write_nifti_fixture, NiftiVolume};
pub use tensorfile::{read_tensor, write_tensor};
