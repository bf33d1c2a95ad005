pub mod config;
pub mod dsp;
pub mod error;
pub mod frontend;
pub mod metrics;
pub mod rls;
pub mod scenario;
pub mod waveform;

pub use config::{ReferenceMode, ScenarioConfig};
pub use dsp::{ComplexEnvelope, FirTaps, RealWaveform};
pub use error::{Error, Result};
pub use frontend::{ConverterModel, MultipathChannel, MultipathTap, OsicLink};
pub use metrics::{EvmReport, PsdEstimate};
pub use rls::RlsState;
pub use scenario::{run_scenario, ScenarioReport};
pub use waveform::SymbolStream;
