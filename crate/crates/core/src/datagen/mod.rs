//! Deterministic synthetic market generator with a planted ground-truth
//! ledger, plus file serialization for every modality. The ledger is the
//! oracle the ablation and impact protocols test against.

pub mod gen;
pub mod io;

pub use gen::{generate, Dataset, EventTypeSpec, GenSpec, Ledger, LedgerEntry, Ohlcv};
pub use io::{load_dataset, save_dataset};
